use serde::{Deserialize, Serialize};

use crate::error::{check, Error, Result};
use crate::model::SpectrumTrace;
use crate::units::rad_to_hz;

use super::HeterodyneFit;

/// Occupancy from Stokes and anti-Stokes powers: their difference is one
/// phonon and their sum `2n̄+1` phonons.
pub fn occupancy_from_powers(stokes: f64, anti_stokes: f64) -> Result<f64> {
    let diff = (stokes - anti_stokes).abs();
    if !(diff > 1e-12 * (stokes.abs() + anti_stokes.abs())) {
        return Err(Error::Saturated);
    }
    Ok(0.5 * (stokes + anti_stokes).abs() / diff - 0.5)
}

pub fn phonon_from_sideband_fit(fit: &HeterodyneFit) -> Result<f64> {
    occupancy_from_powers(fit.model.k_l, fit.model.k_r)
}

/// Fraction of a Lorentzian of FWHM `gamma_eff` (rad/s) inside a band of
/// half-width `half_band_hz` centred on it.
pub fn captured_fraction(half_band_hz: f64, gamma_eff: f64) -> f64 {
    std::f64::consts::FRAC_2_PI * (2.0 * half_band_hz / rad_to_hz(gamma_eff)).atan()
}

/// Fraction of a Lorentzian centred at `center_hz` with FWHM `gamma_eff`
/// (rad/s) that falls inside `band_hz`.
pub fn band_fraction(band_hz: [f64; 2], center_hz: f64, gamma_eff: f64) -> f64 {
    let half = rad_to_hz(gamma_eff) / 2.0;
    (((band_hz[1] - center_hz) / half).atan() - ((band_hz[0] - center_hz) / half).atan()) / std::f64::consts::PI
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandIntegration {
    pub n_bar: f64,
    /// Floor-subtracted band sums, shot units · Hz.
    pub s_l: f64,
    pub s_r: f64,
    /// 1σ statistical scatter of each sum.
    pub sigma_l: f64,
    pub sigma_r: f64,
    pub bins: [usize; 2],
}

impl BandIntegration {
    pub fn difference(&self) -> f64 {
        self.s_l - self.s_r
    }
}

/// Allowed negative excursion of a floor-subtracted band sum, in units of
/// its statistical scatter.
const FLOOR_TOLERANCE: f64 = 3.0;

/// Sums the spectrum over a mechanical-frequency band `band_hz` mapped
/// onto each sideband (`f_het − band` and `f_het + band`), subtracting the
/// floors `[n_l, n_r]`.
pub fn phonon_from_band_integration(
    spec: &SpectrumTrace,
    band_hz: [f64; 2],
    omega_het: f64,
    floors: [f64; 2],
) -> Result<BandIntegration> {
    spec.validate()?;
    let f_het = rad_to_hz(omega_het);
    check(band_hz[0] > 0.0 && band_hz[0] < band_hz[1], "band", "need 0 < f_lo < f_hi")?;
    check(band_hz[1] < f_het, "band", "must stay below the LO shift so the sidebands do not overlap")?;
    let df = spec.bin_width();
    let correlation = (spec.rbw / df).max(1.0);
    let sum = |lo: f64, hi: f64, floor: f64| {
        let mut s = 0.0;
        let mut var = 0.0;
        let mut n = 0;
        for (f, p) in spec.freqs.iter().zip(&spec.psd) {
            if *f >= lo && *f <= hi {
                s += (p - floor) * df;
                var += p * p / spec.n_avg * df * df;
                n += 1;
            }
        }
        (s, (var * correlation).sqrt(), n)
    };
    let (s_l, sigma_l, n_l) = sum(f_het - band_hz[1], f_het - band_hz[0], floors[0]);
    let (s_r, sigma_r, n_r) = sum(f_het + band_hz[0], f_het + band_hz[1], floors[1]);
    if n_l == 0 || n_r == 0 {
        return Err(Error::SidebandNotFound("integration band lies outside the spectrum".into()));
    }
    for (name, s, sig) in [("Stokes", s_l, sigma_l), ("anti-Stokes", s_r, sigma_r)] {
        if s < -FLOOR_TOLERANCE * sig {
            return Err(Error::FloorMismatch(format!("{name} sum {s:.4e} is below zero by more than {FLOOR_TOLERANCE}σ ({sig:.3e})")));
        }
    }
    Ok(BandIntegration { n_bar: occupancy_from_powers(s_l, s_r)?, s_l, s_r, sigma_l, sigma_r, bins: [n_l, n_r] })
}

#[cfg(test)]
mod tests {
    use super::super::tests::{het_grid, helium_sidebands};
    use super::super::synth_heterodyne_psd;
    use super::*;
    use std::f64::consts::TAU;

    #[test]
    fn formula_values() {
        assert_eq!(occupancy_from_powers(2.0, 1.0).unwrap(), 1.0);
        assert_eq!(occupancy_from_powers(1.0, 0.0).unwrap(), 0.0);
        assert!(matches!(occupancy_from_powers(1.5, 1.5), Err(Error::Saturated)));
    }

    #[test]
    fn full_band_matches_generator() {
        for n in [0.76, 1.06, 3.45, 10.0] {
            let m = helium_sidebands(n, 1e3);
            let s = synth_heterodyne_psd(n, &m, het_grid(10.0), 1.0, 10.0).unwrap();
            let r = phonon_from_band_integration(&s, [0.945e6, 1.145e6], m.omega_het, [m.n_l, m.n_r]).unwrap();
            assert!((r.n_bar / n - 1.0).abs() < 0.01, "{n} -> {}", r.n_bar);
        }
    }

    #[test]
    fn truncation_follows_arctan_law() {
        let b = 7.5e3;
        for w in [2e3, 10e3, 30e3, 60e3] {
            let m = helium_sidebands(1.0, w);
            let s = synth_heterodyne_psd(1.0, &m, het_grid(25.0), 1.0, 25.0).unwrap();
            let r = phonon_from_band_integration(&s, [1.045e6 - b, 1.045e6 + b], m.omega_het, [m.n_l, m.n_r]).unwrap();
            let expect = captured_fraction(b, TAU * w);
            assert!((r.difference() / m.energy_difference() / expect - 1.0).abs() < 0.02, "{w}: {} vs {expect}", r.difference() / m.energy_difference());
        }
    }

    #[test]
    fn symmetric_band_fraction_is_arctan_law() {
        let g = TAU * 4e3;
        assert!((band_fraction([1e6 - 7.5e3, 1e6 + 7.5e3], 1e6, g) - captured_fraction(7.5e3, g)).abs() < 1e-14);
        assert!((band_fraction([0.0, 2e6], 1e6, g) - 1.0).abs() < 1e-2);
    }

    #[test]
    fn high_floor_is_rejected() {
        let m = helium_sidebands(1.0, 2e3);
        let s = synth_heterodyne_psd(1.0, &m, het_grid(25.0), 500.0, 25.0).unwrap();
        let r = phonon_from_band_integration(&s, [1.0e6, 1.09e6], m.omega_het, [1.5, 1.5]);
        assert!(matches!(r, Err(Error::FloorMismatch(_))), "{r:?}");
    }
}
