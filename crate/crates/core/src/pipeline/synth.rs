//! Synthetic data sets standing in for measured files.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{check, Result};
use crate::heterodyne::{synth_heterodyne_psd, SidebandModel};
use crate::inference::model_spectrum;
use crate::model::{effective_resonance, LoopConfig, LoopParams, SpectrumTrace};
use crate::sim::welch_scatter;
use crate::units::rad_to_hz;

/// Half-width of synthesized homodyne spectra in closed-loop linewidths.
pub const HOMODYNE_SPAN_LINEWIDTHS: f64 = 50.0;

/// Uniform grid with spacing `df` over `[lo, hi]`.
pub fn uniform_grid(lo: f64, hi: f64, df: f64) -> Vec<f64> {
    let n = ((hi - lo) / df).floor() as usize;
    (0..=n).map(|i| lo + i as f64 * df).collect()
}

/// Grid (Hz) and resolution bandwidth for a homodyne spectrum of `cfg`:
/// spacing `rbw_fraction` of the closed-loop linewidth, spanning at least
/// half the mechanical frequency on each side and 50 linewidths.
pub fn homodyne_grid(cfg: &LoopConfig, rbw_fraction: f64) -> (Vec<f64>, f64) {
    let (_, width) = effective_resonance(&LoopParams::from_config(cfg));
    let f_m = rad_to_hz(cfg.mode.omega_m);
    let w = rad_to_hz(width);
    let rbw = rbw_fraction * w;
    let half = (HOMODYNE_SPAN_LINEWIDTHS * w).max(0.5 * f_m);
    let lo = (f_m - half).max(0.05 * f_m);
    (uniform_grid(lo, f_m + half, rbw), rbw)
}

/// Analytic in-loop spectrum (shot units) with the scatter of an
/// `segments`-fold averaged periodogram.
pub fn homodyne_spectrum(cfg: &LoopConfig, segments: usize, rbw_fraction: f64, seed: u64) -> Result<SpectrumTrace> {
    let (freqs, rbw) = homodyne_grid(cfg, rbw_fraction);
    let mean = model_spectrum(&LoopParams::from_config(cfg), cfg.channel.shot_level, freqs, segments as f64, rbw)?;
    welch_scatter(&mean, seed)
}

/// Grid reaching 1.9 mechanical frequencies either side of the LO shift.
pub fn heterodyne_grid(model: &SidebandModel, bin_hz: f64) -> Vec<f64> {
    let f_het = rad_to_hz(model.omega_het);
    let reach = 1.9 * rad_to_hz(model.omega_eff);
    uniform_grid((f_het - reach).max(bin_hz), f_het + reach, bin_hz)
}

/// Heterodyne spectrum at occupancy `n_bar` with periodogram scatter.
pub fn heterodyne_spectrum(model: &SidebandModel, n_bar: f64, bin_hz: f64, n_avg: f64, seed: u64) -> Result<SpectrumTrace> {
    let mean = synth_heterodyne_psd(n_bar, model, heterodyne_grid(model, bin_hz), n_avg, bin_hz)?;
    welch_scatter(&mean, seed)
}

fn normals(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Amplitude ringdown at energy decay rate `gamma_m` with relative noise.
pub fn ringdown(gamma_m: f64, duration: f64, points: usize, noise: f64, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let t: Vec<f64> = (0..points).map(|i| duration * i as f64 / (points - 1) as f64).collect();
    let v = t.iter().zip(normals(seed, points)).map(|(t, z)| (-gamma_m * t / 2.0).exp() * (1.0 + noise * z)).collect();
    (t, v)
}

/// Adds `noise · scale · N(0,1)` to every sample of `f` over `xs`.
pub fn sampled(xs: &[f64], f: impl Fn(f64) -> f64, noise: f64, scale: f64, seed: u64) -> Vec<f64> {
    xs.iter().zip(normals(seed, xs.len())).map(|(x, z)| f(*x) + noise * scale * z).collect()
}

/// Raw detector spectra for calibration: the mechanical region of the
/// in-loop record and a narrow window around the tone. Both read
/// `gain · 2 g0² · S_y` plus the tone power, spread over three bins as a
/// Hann window leaves it.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationData {
    pub mechanical: SpectrumTrace,
    pub tone: SpectrumTrace,
    /// `S_y` on the mechanical grid, zero-point units.
    pub truth: Vec<f64>,
}

pub fn calibration_data(
    cfg: &LoopConfig,
    detector_gain: f64,
    tone_power: f64,
    tone_hz: f64,
    segments: usize,
    rbw_fraction: f64,
    seed: u64,
) -> Result<CalibrationData> {
    check(detector_gain > 0.0, "detector_gain", "must be > 0")?;
    let params = LoopParams::from_config(cfg);
    let g0 = cfg.coupling.g0;
    let scale = detector_gain * 2.0 * g0 * g0;
    let (freqs, rbw) = homodyne_grid(cfg, rbw_fraction);
    let truth: Vec<f64> = freqs.iter().map(|f| params.measured_psd(crate::units::hz_to_rad(*f))).collect();
    let mech = SpectrumTrace::new(freqs, truth.iter().map(|s| s * scale).collect(), segments as f64, rbw)?;

    // narrow bins keep the line well above the shot floor
    let df = (rbw / 10.0).min(1.0);
    let tone_freqs = uniform_grid(tone_hz - 80.0 * df, tone_hz + 80.0 * df, df);
    let centre = tone_freqs.iter().enumerate().min_by(|a, b| (a.1 - tone_hz).abs().total_cmp(&(b.1 - tone_hz).abs())).map(|(i, _)| i);
    let floor: Vec<f64> = tone_freqs.iter().map(|f| params.measured_psd(crate::units::hz_to_rad(*f)) * scale).collect();
    // a sinusoid does not scatter like noise: only the floor is randomized
    let mut tone = welch_scatter(&SpectrumTrace::new(tone_freqs, floor, segments as f64, df)?, seed.wrapping_add(1))?;
    if let Some(i) = centre {
        for (k, share) in [(-1i64, 1.0 / 6.0), (0, 2.0 / 3.0), (1, 1.0 / 6.0)] {
            let j = i as i64 + k;
            if j >= 0 && (j as usize) < tone.len() {
                tone.psd[j as usize] += share * detector_gain * tone_power / df;
            }
        }
    }
    Ok(CalibrationData {
        mechanical: welch_scatter(&mech, seed)?,
        tone,
        truth,
    })
}
