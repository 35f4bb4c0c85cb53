use serde::{Deserialize, Serialize};

use crate::error::{check, Result};
use crate::filter::FeedbackFilter;
use crate::units::{HBAR, K_B};

/// One mechanical mode. Frequencies and rates are angular.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MechanicalMode {
    pub omega_m: f64,
    pub gamma_m: f64,
    pub q_factor: f64,
    /// Effective mass (kg). Reporting only; zero-point units absorb it.
    pub m_eff: f64,
}

impl MechanicalMode {
    pub fn from_q(omega_m: f64, q_factor: f64, m_eff: f64) -> Result<Self> {
        check(omega_m > 0.0 && omega_m.is_finite(), "omega_m", "must be > 0")?;
        check(q_factor > 0.0 && q_factor.is_finite(), "q_factor", "must be > 0")?;
        Ok(MechanicalMode { omega_m, gamma_m: omega_m / q_factor, q_factor, m_eff })
    }

    pub fn from_gamma(omega_m: f64, gamma_m: f64, m_eff: f64) -> Result<Self> {
        check(gamma_m > 0.0 && gamma_m.is_finite(), "gamma_m", "must be > 0")?;
        Self::from_q(omega_m, omega_m / gamma_m, m_eff)
    }

    pub fn validate(&self) -> Result<()> {
        check(self.omega_m > 0.0, "omega_m", "must be > 0")?;
        check(self.gamma_m > 0.0, "gamma_m", "must be > 0")?;
        check(
            ((self.q_factor * self.gamma_m - self.omega_m) / self.omega_m).abs() <= 1e-9,
            "q_factor",
            "q_factor * gamma_m must equal omega_m",
        )
    }
}

/// A higher-order mode and its loop coupling relative to the target mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HigherMode {
    pub mode: MechanicalMode,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpticalCavity {
    /// Total linewidth (FWHM), rad/s.
    pub kappa: f64,
    /// External coupling rate, rad/s.
    pub kappa_e: f64,
    /// Laser minus cavity frequency, rad/s.
    pub detuning: f64,
}

impl OpticalCavity {
    pub fn new(kappa: f64, kappa_e: f64, detuning: f64) -> Result<Self> {
        let c = OpticalCavity { kappa, kappa_e, detuning };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        check(self.kappa_e > 0.0 && self.kappa_e <= self.kappa, "kappa_e", "need 0 < kappa_e <= kappa")?;
        check(self.detuning.is_finite(), "detuning", "must be finite")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingBudget {
    /// Vacuum optomechanical coupling, rad/s.
    pub g0: f64,
    /// Intracavity photon number.
    pub n_c: f64,
    /// Detection efficiency.
    pub eta_det: f64,
}

impl CouplingBudget {
    pub fn new(g0: f64, n_c: f64, eta_det: f64) -> Result<Self> {
        let c = CouplingBudget { g0, n_c, eta_det };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        check(self.g0 > 0.0, "g0", "must be > 0")?;
        check(self.n_c >= 0.0, "n_c", "must be >= 0")?;
        check((0.0..=1.0).contains(&self.eta_det), "eta_det", "must lie in [0, 1]")
    }
}

/// Bath occupations. `n_bath = n_th + n_ba` always holds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseInputs {
    pub n_th: f64,
    pub n_ba: f64,
    pub n_bath: f64,
    /// Effective bath temperature (K) equivalent to `n_bath`.
    pub t_eff: f64,
}

impl NoiseInputs {
    pub fn new(n_th: f64, n_ba: f64, omega_m: f64) -> Result<Self> {
        check(n_th >= 0.0, "n_th", "must be >= 0")?;
        check(n_ba >= 0.0, "n_ba", "must be >= 0")?;
        let n_bath = n_th + n_ba;
        Ok(NoiseInputs { n_th, n_ba, n_bath, t_eff: n_bath * HBAR * omega_m / K_B })
    }

    pub fn validate(&self) -> Result<()> {
        check(self.n_th >= 0.0 && self.n_ba >= 0.0, "noise", "occupations must be >= 0")?;
        check(
            (self.n_bath - self.n_th - self.n_ba).abs() <= 1e-9 * self.n_bath.max(1.0),
            "n_bath",
            "must equal n_th + n_ba",
        )
    }
}

/// Measurement imprecision and the shot-noise reference, both as
/// displacement PSDs (zero-point units, one-sided, per Hz).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasurementChannel {
    pub s_imp: f64,
    /// Displacement-equivalent shot-noise level; spectra divided by it are
    /// in shot units.
    pub shot_level: f64,
}

impl MeasurementChannel {
    pub fn validate(&self) -> Result<()> {
        check(self.s_imp > 0.0 && self.s_imp.is_finite(), "s_imp", "must be > 0")?;
        check(self.shot_level > 0.0 && self.shot_level.is_finite(), "shot_level", "must be > 0")
    }

    /// Quantum-limited shot level for a measurement rate `gamma_meas`:
    /// `1 / (4 Γ_meas)`.
    pub fn quantum_limited(gamma_meas: f64, excess: f64) -> Self {
        let shot = 1.0 / (4.0 * gamma_meas);
        MeasurementChannel { s_imp: shot * excess, shot_level: shot }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopConfig {
    pub mode: MechanicalMode,
    pub higher_modes: Vec<HigherMode>,
    pub cavity: OpticalCavity,
    pub coupling: CouplingBudget,
    pub noise: NoiseInputs,
    pub channel: MeasurementChannel,
    pub filter: FeedbackFilter,
}

impl LoopConfig {
    pub fn validate(&self) -> Result<()> {
        self.mode.validate()?;
        for h in &self.higher_modes {
            h.mode.validate()?;
            check(h.mode.omega_m > self.mode.omega_m, "higher_modes", "must lie above the target mode")?;
            check(h.weight >= 0.0, "weight", "must be >= 0")?;
        }
        self.cavity.validate()?;
        self.coupling.validate()?;
        self.noise.validate()?;
        self.channel.validate()?;
        self.filter.validate()
    }

    pub fn with_gain(&self, gain: f64) -> Self {
        LoopConfig { filter: self.filter.with_gain(gain), ..self.clone() }
    }

    /// Bath occupation assigned to a higher mode: same effective
    /// temperature as the target mode.
    pub fn higher_mode_occupation(&self, h: &HigherMode) -> f64 {
        self.noise.n_bath * self.mode.omega_m / h.mode.omega_m
    }
}
