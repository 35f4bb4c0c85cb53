//! Out-of-loop heterodyne thermometry: sideband synthesis, fit- and
//! integration-based asymmetry extraction, and laser-noise corrections.

mod extract;
mod fit;
mod noise;

pub use extract::{
    band_fraction, captured_fraction, occupancy_from_powers, phonon_from_band_integration, phonon_from_sideband_fit, BandIntegration,
};
pub use fit::{fit_sidebands, fit_sidebands_with, HeterodyneFit, SidebandFitOptions, HET_PARAMS};
pub use noise::{estimate_amplitude_noise, phase_noise_correction, remove_common_noise, LaserNoise};

use serde::{Deserialize, Serialize};

use crate::error::{check, Result};
use crate::model::{effective_resonance, LoopParams, SpectrumTrace};
use crate::units::hz_to_rad;

/// Two-sideband heterodyne spectrum around the local-oscillator shift.
/// Each half of the spectrum carries one sideband on its own floor: the
/// Stokes line (`l`) below the LO shift, the anti-Stokes line (`r`) above.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SidebandModel {
    /// LO frequency shift, rad/s.
    pub omega_het: f64,
    /// Sideband magnitudes, shot units · (rad/s)².
    pub k_l: f64,
    pub k_r: f64,
    /// Local floors, shot units.
    pub n_l: f64,
    pub n_r: f64,
    /// Effective mechanical frequency and width, rad/s.
    pub omega_eff: f64,
    pub gamma_eff: f64,
}

impl SidebandModel {
    /// Sidebands of a mode at occupancy `n_bar`, where one phonon carries
    /// `energy_per_phonon` (shot units · Hz) of integrated sideband power.
    pub fn from_occupancy(
        n_bar: f64,
        energy_per_phonon: f64,
        omega_het: f64,
        omega_eff: f64,
        gamma_eff: f64,
        floors: [f64; 2],
    ) -> Result<Self> {
        check(n_bar >= 0.0 && n_bar.is_finite(), "n_bar", "must be >= 0")?;
        check(energy_per_phonon > 0.0, "energy_per_phonon", "must be > 0")?;
        let k = 4.0 * gamma_eff * energy_per_phonon;
        let m = SidebandModel {
            omega_het,
            k_l: k * (n_bar + 1.0),
            k_r: k * n_bar,
            n_l: floors[0],
            n_r: floors[1],
            omega_eff,
            gamma_eff,
        };
        m.validate()?;
        Ok(m)
    }

    /// Sidebands shaped by the closed-loop resonance of `params`.
    pub fn from_loop(
        params: &LoopParams,
        n_bar: f64,
        energy_per_phonon: f64,
        omega_het: f64,
        floors: [f64; 2],
    ) -> Result<Self> {
        let (omega_eff, gamma_eff) = effective_resonance(params);
        Self::from_occupancy(n_bar, energy_per_phonon, omega_het, omega_eff, gamma_eff, floors)
    }

    pub fn validate(&self) -> Result<()> {
        check(self.omega_het > 0.0, "omega_het", "must be > 0")?;
        check(self.k_l >= 0.0 && self.k_r >= 0.0, "k", "sideband magnitudes must be >= 0")?;
        check(self.n_l >= 0.0 && self.n_r >= 0.0, "floor", "must be >= 0")?;
        check(self.omega_eff > 0.0 && self.omega_eff < self.omega_het, "omega_eff", "must lie in (0, omega_het)")?;
        check(self.gamma_eff > 0.0, "gamma_eff", "must be > 0")
    }

    /// `|χ_eff(ω)|²` of the effective resonance.
    pub fn susceptibility_sq(&self, omega: f64) -> f64 {
        let om = self.omega_eff;
        let re = om * om - omega * omega;
        let im = self.gamma_eff * omega;
        om * om / (re * re + im * im)
    }

    pub fn psd(&self, omega: f64) -> f64 {
        if omega < self.omega_het {
            self.k_l * self.susceptibility_sq(self.omega_het - omega) + self.n_l
        } else {
            self.k_r * self.susceptibility_sq(omega - self.omega_het) + self.n_r
        }
    }

    /// Integrated power of each sideband above its floor, shot units · Hz.
    pub fn energies(&self) -> [f64; 2] {
        [self.k_l / (4.0 * self.gamma_eff), self.k_r / (4.0 * self.gamma_eff)]
    }

    /// Integrated Stokes minus anti-Stokes power: one phonon's worth,
    /// independent of the feedback broadening.
    pub fn energy_difference(&self) -> f64 {
        (self.k_l - self.k_r) / (4.0 * self.gamma_eff)
    }
}

/// Noise-free heterodyne spectrum at occupancy `n_bar`. The Stokes
/// magnitude `k_l` of `model` is kept and the anti-Stokes one set to
/// `k_l n̄/(n̄+1)`.
pub fn synth_heterodyne_psd(n_bar: f64, model: &SidebandModel, freqs: Vec<f64>, n_avg: f64, rbw: f64) -> Result<SpectrumTrace> {
    check(n_bar >= 0.0 && n_bar.is_finite(), "n_bar", "must be >= 0")?;
    let m = SidebandModel { k_r: model.k_l * n_bar / (n_bar + 1.0), ..*model };
    m.validate()?;
    let psd = freqs.iter().map(|f| m.psd(hz_to_rad(*f))).collect();
    SpectrumTrace::new(freqs, psd, n_avg, rbw)
}
