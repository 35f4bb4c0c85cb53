//! Static device characterization: reflection dip, optical spring, ringdown.

use serde::{Deserialize, Serialize};

use super::types::{CouplingBudget, OpticalCavity};
use crate::error::{Error, Result};
use crate::lsq::{levenberg_marquardt, LmOptions};
use crate::units::HBAR;

/// One-port reflection `R(Δ) = |1 − κ_e/(κ/2 − iΔ)|²`.
pub fn cavity_reflection(cav: &OpticalCavity) -> f64 {
    reflection(cav.kappa, cav.kappa_e, cav.detuning)
}

fn reflection(kappa: f64, kappa_e: f64, detuning: f64) -> f64 {
    let h = kappa / 2.0;
    ((h - kappa_e).powi(2) + detuning * detuning) / (h * h + detuning * detuning)
}

/// Intracavity photon number for input power `power` (W) at laser angular
/// frequency `omega_l`: `κ_e (P/ħω_L) / ((κ/2)² + Δ²)`.
pub fn intracavity_photons(cav: &OpticalCavity, power: f64, omega_l: f64) -> f64 {
    let flux = power / (HBAR * omega_l);
    cav.kappa_e * flux / ((cav.kappa / 2.0).powi(2) + cav.detuning.powi(2))
}

/// Unresolved-sideband optical spring `δΩ_M(Δ) = g0² n_c(Δ) 2Δ/(Δ² + (κ/2)²)`,
/// where `coupling.n_c` is the on-resonance photon number at fixed input power.
pub fn optical_spring_shift(cav: &OpticalCavity, coupling: &CouplingBudget) -> f64 {
    spring(coupling.g0, coupling.n_c, cav.kappa, cav.detuning)
}

fn spring(g0: f64, n_c0: f64, kappa: f64, detuning: f64) -> f64 {
    let h2 = (kappa / 2.0).powi(2);
    let lor = h2 + detuning * detuning;
    g0 * g0 * n_c0 * (h2 / lor) * 2.0 * detuning / lor
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecayKind {
    /// Amplitude decays as `e^{−Γt/2}`.
    Amplitude,
    /// Energy decays as `e^{−Γt}`.
    Energy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RingdownFit {
    pub gamma_m: f64,
    pub q_factor: f64,
    pub initial: f64,
    pub r_squared: f64,
}

/// Least-squares exponential fit of a ringdown; `Q = Ω_M / Γ_M`.
pub fn fit_ringdown(times: &[f64], values: &[f64], kind: DecayKind, omega_m: f64) -> Result<RingdownFit> {
    if times.len() != values.len() || times.len() < 10 {
        return Err(Error::FitRejected("ringdown needs at least 10 samples".into()));
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let ss_tot: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    if !(ss_tot > 0.0) {
        return Err(Error::FitRejected("signal does not decay".into()));
    }

    // log-linear start on the positive samples
    let pts: Vec<(f64, f64)> = times.iter().zip(values).filter(|(_, v)| **v > 0.0).map(|(t, v)| (*t, v.ln())).collect();
    if pts.len() < 2 {
        return Err(Error::FitRejected("no positive samples".into()));
    }
    let n = pts.len() as f64;
    let (st, sy) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
    let (tm, ym) = (st / n, sy / n);
    let sxx: f64 = pts.iter().map(|p| (p.0 - tm).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - tm) * (p.1 - ym)).sum();
    let rate0 = -sxy / sxx;
    if !(rate0 > 0.0) {
        return Err(Error::FitRejected("signal does not decay".into()));
    }
    let amp0 = (ym + rate0 * tm).exp();

    let t0 = times[0];
    let prob = (2, times.len(), |p: &[f64], out: &mut [f64]| {
        for i in 0..times.len() {
            out[i] = (p[0] * amp0) * (-(p[1] * rate0) * (times[i] - t0)).exp() - values[i];
        }
    });
    let start = [(-rate0 * t0).exp(), 1.0];
    let opts = LmOptions::new(2).bound(1, 0.0, f64::INFINITY);
    let rep = levenberg_marquardt(&prob, &start, &opts)?;
    let rate = rep.params[1] * rate0;
    let ss_res = 2.0 * rep.cost;
    let r_squared = 1.0 - ss_res / ss_tot;
    if r_squared < 0.9 {
        return Err(Error::FitRejected(format!("ringdown fit R² = {r_squared:.3} < 0.9")));
    }
    if rate * (times[times.len() - 1] - t0) < 1.0 {
        return Err(Error::FitRejected("record spans less than one decay constant".into()));
    }
    let gamma_m = match kind {
        DecayKind::Amplitude => 2.0 * rate,
        DecayKind::Energy => rate,
    };
    Ok(RingdownFit { gamma_m, q_factor: omega_m / gamma_m, initial: rep.params[0] * amp0, r_squared })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReflectionFit {
    pub kappa: f64,
    pub kappa_e: f64,
    /// Detuning of the dip center (rad/s).
    pub offset: f64,
}

/// Fits `R(Δ)` to reflection data assuming an over-coupled cavity
/// (`κ_e ≥ κ/2`); reflection alone cannot tell the two branches apart.
pub fn fit_reflection(detunings: &[f64], reflectance: &[f64]) -> Result<ReflectionFit> {
    if detunings.len() != reflectance.len() || detunings.len() < 5 {
        return Err(Error::FitRejected("reflection fit needs at least 5 points".into()));
    }
    let (imin, rmin) = reflectance
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |a, (i, r)| if *r < a.1 { (i, *r) } else { a });
    let rmax = reflectance.iter().cloned().fold(f64::MIN, f64::max);
    // FWHM of the dip 1 − R
    let half = rmin + (rmax - rmin) / 2.0;
    let lo = (0..imin).rev().find(|&i| reflectance[i] > half).map(|i| detunings[i]);
    let hi = (imin..detunings.len()).find(|&i| reflectance[i] > half).map(|i| detunings[i]);
    let kappa0 = match (lo, hi) {
        (Some(l), Some(h)) => h - l,
        _ => return Err(Error::FitRejected("reflection dip not resolved on the detuning grid".into())),
    };
    let center0 = detunings[imin];
    let ratio0 = ((1.0 + rmin.max(0.0).sqrt()) / 2.0).clamp(0.5, 1.0);

    let prob = (3, detunings.len(), |p: &[f64], out: &mut [f64]| {
        let kappa = p[0] * kappa0;
        for i in 0..detunings.len() {
            out[i] = reflection(kappa, p[1] * kappa, detunings[i] - p[2] * kappa0) - reflectance[i];
        }
    });
    let opts = LmOptions::new(3).bound(0, 1e-6, f64::INFINITY).bound(1, 0.5, 1.0);
    let rep = levenberg_marquardt(&prob, &[1.0, ratio0, center0 / kappa0], &opts)?;
    let kappa = rep.params[0] * kappa0;
    Ok(ReflectionFit { kappa, kappa_e: rep.params[1] * kappa, offset: rep.params[2] * kappa0 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpringFit {
    pub g0: f64,
    pub g0_sigma: f64,
    pub offset: f64,
}

/// Fits `g0` (and a detuning offset) to frequency-shift data given `κ`
/// and the on-resonance photon number.
pub fn fit_optical_spring(detunings: &[f64], shifts: &[f64], kappa: f64, n_c0: f64) -> Result<SpringFit> {
    if detunings.len() != shifts.len() || detunings.len() < 4 {
        return Err(Error::FitRejected("spring fit needs at least 4 points".into()));
    }
    let basis: Vec<f64> = detunings.iter().map(|d| spring(1.0, n_c0, kappa, *d)).collect();
    let num: f64 = basis.iter().zip(shifts).map(|(b, y)| b * y).sum();
    let den: f64 = basis.iter().map(|b| b * b).sum();
    let g0_sq = num / den;
    if !(g0_sq > 0.0) {
        return Err(Error::FitRejected("shift has the wrong sign for an optical spring".into()));
    }
    let g00 = g0_sq.sqrt();
    let prob = (2, detunings.len(), |p: &[f64], out: &mut [f64]| {
        for i in 0..detunings.len() {
            out[i] = spring(p[0] * g00, n_c0, kappa, detunings[i] - p[1] * kappa) - shifts[i];
        }
    });
    let rep = levenberg_marquardt(&prob, &[1.0, 0.0], &LmOptions::new(2))?;
    let s2 = rep.reduced_chi2();
    let g0_sigma = (rep.covariance[(0, 0)] * s2).sqrt() * g00;
    Ok(SpringFit { g0: rep.params[0] * g00, g0_sigma, offset: rep.params[1] * kappa })
}
