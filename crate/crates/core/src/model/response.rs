use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::phonon::{integration_grid, phonon_from_psd, PhononEstimate};
use super::types::{HigherMode, LoopConfig, MechanicalMode, NoiseInputs};
use crate::control::check_closed_loop_stability;
use crate::error::{Error, Result};
use crate::filter::FeedbackFilter;
use crate::units::{hz_to_rad, rad_to_hz};

/// `χ_M(ω) = Ω_M / ((Ω_M² − ω²) − iΓ_M ω)`.
pub fn mech_susceptibility(mode: &MechanicalMode, omega: f64) -> Complex64 {
    let w = mode.omega_m;
    Complex64::new(w, 0.0) / Complex64::new(w * w - omega * omega, -mode.gamma_m * omega)
}

/// Flat force PSD of the effective bath, `2Γ_M(2 n_bath + 1)`.
pub fn force_noise_psd(noise: &NoiseInputs, mode: &MechanicalMode) -> f64 {
    2.0 * mode.gamma_m * (2.0 * noise.n_bath + 1.0)
}

/// Everything the loop formulas need, in the form a fit varies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopParams {
    pub mode: MechanicalMode,
    /// Force PSD driving the target mode.
    pub s_fn: f64,
    pub s_imp: f64,
    /// Gain, delay, parasitic coefficient and section shape.
    pub filter: FeedbackFilter,
    /// Higher modes with their force PSDs.
    pub higher: Vec<(HigherMode, f64)>,
}

impl LoopParams {
    pub fn from_config(cfg: &LoopConfig) -> Self {
        let higher = cfg
            .higher_modes
            .iter()
            .map(|h| {
                let n = cfg.higher_mode_occupation(h);
                (*h, 2.0 * h.mode.gamma_m * (2.0 * n + 1.0))
            })
            .collect();
        LoopParams {
            mode: cfg.mode,
            s_fn: force_noise_psd(&cfg.noise, &cfg.mode),
            s_imp: cfg.channel.s_imp,
            filter: cfg.filter.clone(),
            higher,
        }
    }

    fn chi_other(&self, omega: f64) -> Complex64 {
        self.higher.iter().map(|(h, _)| mech_susceptibility(&h.mode, omega) * h.weight).sum()
    }

    fn parasitic(&self) -> f64 {
        self.filter.epsilon / self.mode.omega_m
    }

    /// Open-loop transfer `L(ω) = g_fb (χ_tot + ε/Ω_M) H_fb`; the loop
    /// closes through `1 − L`.
    pub fn open_loop(&self, omega: f64) -> Complex64 {
        let chi = mech_susceptibility(&self.mode, omega) + self.chi_other(omega);
        self.filter.loop_response(omega) * (chi + self.parasitic())
    }

    /// Closed-loop PSD of the in-loop measurement (displacement units).
    pub fn measured_psd(&self, omega: f64) -> f64 {
        let chi0 = mech_susceptibility(&self.mode, omega);
        let mut num = chi0.norm_sqr() * self.s_fn + self.s_imp;
        for (h, s_f) in &self.higher {
            num += (mech_susceptibility(&h.mode, omega) * h.weight).norm_sqr() * s_f;
        }
        num / (Complex64::new(1.0, 0.0) - self.open_loop(omega)).norm_sqr()
    }

    /// Actual displacement PSD of the target mode inside the loop.
    pub fn displacement_psd(&self, omega: f64) -> f64 {
        let chi0 = mech_susceptibility(&self.mode, omega);
        let gh = self.filter.loop_response(omega);
        let one = Complex64::new(1.0, 0.0);
        let denom = (one - self.open_loop(omega)).norm_sqr();
        let drive = (one - gh * (self.chi_other(omega) + self.parasitic())).norm_sqr() * self.s_fn;
        let mut fed_back = self.s_imp;
        for (h, s_f) in &self.higher {
            fed_back += (mech_susceptibility(&h.mode, omega) * h.weight).norm_sqr() * s_f;
        }
        chi0.norm_sqr() * (drive + gh.norm_sqr() * fed_back) / denom
    }

    /// Linewidth of the target mode including feedback damping, `Γ_M + g Im H(Ω_M)`.
    pub fn damped_width(&self) -> f64 {
        self.mode.gamma_m + self.filter.loop_response(self.mode.omega_m).im
    }

    /// Occupancy from integrating the inferred displacement spectrum.
    pub fn phonon_number(&self) -> Result<PhononEstimate> {
        let (_, gamma_eff) = effective_resonance(self);
        let freqs = integration_grid(rad_to_hz(self.mode.omega_m), &[self.mode.gamma_m, gamma_eff]);
        let psd: Vec<f64> = freqs.iter().map(|f| self.displacement_psd(hz_to_rad(*f))).collect();
        phonon_from_psd(&freqs, &psd, self.mode.omega_m)
    }
}

/// Peak frequency and full width at half maximum (both rad/s) of the
/// inferred displacement spectrum.
pub fn effective_resonance(params: &LoopParams) -> (f64, f64) {
    let om = params.mode.omega_m;
    let l = params.filter.loop_response(om);
    let mut width = (params.mode.gamma_m + l.im).abs().max(params.mode.gamma_m);
    let mut center = (om - l.re / 2.0).max(0.05 * om);
    for _ in 0..6 {
        let span = (20.0 * width).min(0.9 * center);
        let n = 4001;
        let grid: Vec<f64> = (0..n).map(|i| center - span + 2.0 * span * i as f64 / (n - 1) as f64).collect();
        let vals: Vec<f64> = grid.iter().map(|w| params.displacement_psd(*w)).collect();
        let (imax, vmax) =
            vals.iter().enumerate().fold((0, f64::MIN), |acc, (i, v)| if *v > acc.1 { (i, *v) } else { acc });
        let half = vmax / 2.0;
        let crossing = |range: &mut dyn Iterator<Item = usize>| -> Option<f64> {
            let mut prev = imax;
            for i in range {
                if vals[i] < half {
                    let t = (vals[prev] - half) / (vals[prev] - vals[i]);
                    return Some(grid[prev] + t * (grid[i] - grid[prev]));
                }
                prev = i;
            }
            None
        };
        let lo = crossing(&mut (0..imax).rev());
        let hi = crossing(&mut (imax + 1..n));
        match (lo, hi) {
            (Some(lo), Some(hi)) if imax > 0 && imax < n - 1 => {
                let new_width = hi - lo;
                let fine_enough = new_width > 50.0 * (2.0 * span / (n - 1) as f64);
                if fine_enough || span >= 0.9 * center {
                    return (grid[imax], new_width);
                }
                center = grid[imax];
                width = new_width;
            }
            _ => {
                center = grid[imax].max(0.05 * om);
                width *= 4.0;
            }
        }
    }
    (center, width)
}

/// Closed-loop homodyne PSD at one frequency; unstable loops are an error.
///
/// For evaluating many frequencies build a [`ClosedLoopModel`] once.
pub fn closed_loop_measured_psd(cfg: &LoopConfig, omega: f64) -> Result<f64> {
    Ok(ClosedLoopModel::new(cfg)?.measured_psd(omega))
}

/// Inferred displacement PSD for fitted loop parameters.
pub fn inferred_displacement_psd(params: &LoopParams, omega: f64) -> f64 {
    params.displacement_psd(omega)
}

/// A validated, stability-checked loop ready for evaluation.
#[derive(Debug, Clone)]
pub struct ClosedLoopModel {
    pub config: LoopConfig,
    pub params: LoopParams,
}

impl ClosedLoopModel {
    pub fn new(cfg: &LoopConfig) -> Result<Self> {
        cfg.validate()?;
        let report = check_closed_loop_stability(cfg);
        if !report.stable {
            return Err(Error::Unstable(report.summary()));
        }
        Ok(ClosedLoopModel { config: cfg.clone(), params: LoopParams::from_config(cfg) })
    }

    pub fn measured_psd(&self, omega: f64) -> f64 {
        self.params.measured_psd(omega)
    }

    /// In-loop PSD normalized to the shot level.
    pub fn measured_shot_units(&self, omega: f64) -> f64 {
        self.params.measured_psd(omega) / self.config.channel.shot_level
    }

    pub fn displacement_psd(&self, omega: f64) -> f64 {
        self.params.displacement_psd(omega)
    }

    pub fn phonon_number(&self) -> Result<PhononEstimate> {
        self.params.phonon_number()
    }

    pub fn effective_resonance(&self) -> (f64, f64) {
        effective_resonance(&self.params)
    }
}
