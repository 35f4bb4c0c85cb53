use serde::{Deserialize, Serialize};

use crate::error::{check, Error, Result};
use crate::model::{OpticalCavity, SpectrumTrace};

use super::HeterodyneFit;

/// Classical laser noise referred to shot noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaserNoise {
    /// Excess amplitude noise over shot noise.
    pub c_amp: f64,
    /// Phase-noise PSD, rad²/Hz.
    pub c_theta: f64,
    /// Phase-quadrature noise over shot noise.
    pub c_y: f64,
    /// Photon flux, 1/s.
    pub photon_flux: f64,
}

impl LaserNoise {
    /// Phase-quadrature noise `C_Y = 2 ṅ C_θ` of a beam carrying
    /// `photon_flux` photons per second.
    pub fn new(c_amp: f64, c_theta: f64, photon_flux: f64) -> Result<Self> {
        check(c_amp >= 0.0, "c_amp", "must be >= 0")?;
        check(c_theta >= 0.0, "c_theta", "must be >= 0")?;
        check(photon_flux >= 0.0, "photon_flux", "must be >= 0")?;
        Ok(LaserNoise { c_amp, c_theta, c_y: 2.0 * photon_flux * c_theta, photon_flux })
    }

    /// Photon flux of `power` watts at vacuum wavelength `wavelength` m.
    pub fn photon_flux(power: f64, wavelength: f64) -> f64 {
        power * wavelength / (crate::units::HBAR * std::f64::consts::TAU * crate::units::C_LIGHT)
    }
}

/// Excess classical amplitude noise relative to shot noise, averaged
/// over `band_hz` (whole grid if `None`). `full` is the single-port
/// spectrum, `balanced` the 50:50 shot reference and `dark` the detector
/// with no light.
///
/// Each bin is a ratio with a noisy denominator, which biases the mean up
/// by about `1/n_avg` of the reference; `n_avg` must be well above `1/c_amp`.
pub fn estimate_amplitude_noise(
    full: &SpectrumTrace,
    balanced: &SpectrumTrace,
    dark: &SpectrumTrace,
    band_hz: Option<[f64; 2]>,
) -> Result<f64> {
    if !full.same_grid(balanced) || !full.same_grid(dark) {
        return Err(Error::GridMismatch);
    }
    let (lo, hi) = band_hz.map_or((f64::NEG_INFINITY, f64::INFINITY), |b| (b[0], b[1]));
    let mut acc = 0.0;
    let mut n = 0usize;
    for i in 0..full.len() {
        let f = full.freqs[i];
        if f < lo || f > hi {
            continue;
        }
        let shot = balanced.psd[i] - dark.psd[i];
        if !(shot > 0.0) {
            return Err(Error::ZeroReference { freq_hz: f });
        }
        acc += ((full.psd[i] - dark.psd[i]) - shot) / shot;
        n += 1;
    }
    if n == 0 {
        return Err(Error::InvalidParameter { name: "band", reason: "contains no bins".into() });
    }
    Ok(acc / n as f64)
}

/// Extra sideband power, in phonons, that classical phase noise adds to
/// both sidebands: `4 (Δ Ω_M / κ²) C_Y`, with `Δ` the probe detuning and
/// the mechanical frequency making the ratio dimensionless.
pub fn phase_noise_correction(noise: &LaserNoise, cavity: &OpticalCavity, detuning: f64, omega_m: f64) -> f64 {
    4.0 * detuning.abs() * omega_m / (cavity.kappa * cavity.kappa) * noise.c_y
}

/// Removes `phonons` worth of common noise from both sidebands, which
/// lowers the extracted occupancy by exactly that amount.
pub fn remove_common_noise(fit: &HeterodyneFit, phonons: f64) -> HeterodyneFit {
    let mut out = fit.clone();
    let per_phonon = fit.model.k_l - fit.model.k_r;
    out.model.k_l -= phonons * per_phonon;
    out.model.k_r -= phonons * per_phonon;
    out
}
