use serde::{Deserialize, Serialize};

use super::types::LoopConfig;
use crate::error::{Error, Result};
use crate::units::{HBAR, K_B};

/// `n_th = k_B T / (ħ Ω_M)`.
pub fn thermal_occupation(temperature: f64, omega_m: f64) -> f64 {
    K_B * temperature / (HBAR * omega_m)
}

/// `C_0 = 4 g0² / (κ Γ_M)`.
pub fn single_photon_cooperativity(g0: f64, kappa: f64, gamma_m: f64) -> f64 {
    4.0 * g0 * g0 / (kappa * gamma_m)
}

/// Measurement and decoherence rates with everything used to form them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateBudget {
    pub n_th: f64,
    pub n_c: f64,
    pub eta_det: f64,
    pub c0: f64,
    pub n_ba: f64,
    /// `4 η n_c g0² / κ` (rad/s).
    pub gamma_meas: f64,
    /// `(n_th + n_c C_0) Γ_M` (rad/s).
    pub gamma_dec: f64,
    /// `(1/η)(n_th/(n_c C_0) + 1)`.
    pub ratio: f64,
}

pub fn rate_budget(cfg: &LoopConfig) -> Result<RateBudget> {
    let c = &cfg.coupling;
    if c.eta_det <= 0.0 {
        return Err(Error::ZeroEfficiency);
    }
    if c.n_c <= 0.0 {
        return Err(Error::ZeroMeasurementRate);
    }
    let c0 = single_photon_cooperativity(c.g0, cfg.cavity.kappa, cfg.mode.gamma_m);
    let n_th = cfg.noise.n_th;
    let n_ba = c.n_c * c0;
    Ok(RateBudget {
        n_th,
        n_c: c.n_c,
        eta_det: c.eta_det,
        c0,
        n_ba,
        gamma_meas: 4.0 * c.eta_det * c.n_c * c.g0 * c.g0 / cfg.cavity.kappa,
        gamma_dec: (n_th + n_ba) * cfg.mode.gamma_m,
        ratio: (n_th / (c.n_c * c0) + 1.0) / c.eta_det,
    })
}
