use serde::{Deserialize, Serialize};

use crate::error::{check, Error, Result};
use crate::model::SpectrumTrace;
use crate::units::rad_to_hz;

/// Phase-modulation tone of known depth used to calibrate the detector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTone {
    /// Modulation depth (rad).
    pub phi0: f64,
    /// Tone angular frequency (rad/s).
    pub omega_pm: f64,
    /// Tone power integrated over its bins (spectrum units · Hz); filled
    /// in by [`measure_tone`].
    pub measured_tone_power: Option<f64>,
}

impl CalibrationTone {
    pub fn new(phi0: f64, omega_pm: f64) -> Result<Self> {
        check(phi0 > 0.0 && phi0 < 0.1 * std::f64::consts::TAU, "phi0", "must be small and positive")?;
        check(omega_pm > 0.0, "omega_pm", "must be > 0")?;
        Ok(CalibrationTone { phi0, omega_pm, measured_tone_power: None })
    }

    /// Peak laser-frequency deviation `φ₀ Ω_PM` (rad/s) of the equivalent
    /// frequency modulation.
    pub fn frequency_deviation(&self) -> f64 {
        self.phi0 * self.omega_pm
    }

    /// Mean-square frequency deviation `(φ₀ Ω_PM)²/2`.
    pub fn frequency_power(&self) -> f64 {
        self.frequency_deviation().powi(2) / 2.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// Displacement PSD in zero-point units.
    pub s_x: SpectrumTrace,
    /// Spectrum units per (rad/s)² of cavity-frequency fluctuation.
    pub conversion: f64,
    pub tone_power: f64,
}

/// Peak must exceed the local floor by this factor (10 dB).
const TONE_SNR: f64 = 10.0;

/// Integrated power of the tone above the local floor.
pub fn measure_tone(raw: &SpectrumTrace, omega_pm: f64) -> Result<f64> {
    let f_pm = rad_to_hz(omega_pm);
    let df = raw.bin_width();
    let rbw = raw.rbw.max(df);
    let near: Vec<usize> = (0..raw.len()).filter(|&i| (raw.freqs[i] - f_pm).abs() <= 3.0 * rbw).collect();
    let mut side: Vec<f64> = (0..raw.len())
        .filter(|&i| {
            let d = (raw.freqs[i] - f_pm).abs();
            d >= 10.0 * rbw && d <= 60.0 * rbw
        })
        .map(|i| raw.psd[i])
        .collect();
    if near.is_empty() || side.len() < 4 {
        return Err(Error::ToneNotFound { freq_hz: f_pm });
    }
    side.sort_by(|a, b| a.total_cmp(b));
    let floor = side[side.len() / 2];
    let ip = *near.iter().max_by(|a, b| raw.psd[**a].total_cmp(&raw.psd[**b])).expect("non-empty");
    let peak = raw.psd[ip];
    if !(peak > TONE_SNR * floor) {
        return Err(Error::ToneNotFound { freq_hz: f_pm });
    }
    // a clipped front end flattens the top of the line
    let flat = [ip.wrapping_sub(1), ip + 1]
        .iter()
        .filter(|&&i| i < raw.len() && (raw.psd[i] - peak).abs() <= 1e-9 * peak)
        .count();
    if flat >= 2 {
        return Err(Error::ToneSaturated);
    }
    let lo = raw.freqs[ip] - 4.0 * rbw;
    let hi = raw.freqs[ip] + 4.0 * rbw;
    Ok((0..raw.len())
        .filter(|&i| raw.freqs[i] >= lo && raw.freqs[i] <= hi)
        .map(|i| (raw.psd[i] - floor) * df)
        .sum())
}

/// Converts a detector PSD to displacement quanta using the calibration
/// tone. The tone fixes the detector gain `K` (spectrum units per
/// (rad/s)² of laser frequency noise) through `P_tone = K (φ₀Ω_PM)²/2`;
/// cavity-frequency fluctuations map to displacement as `δω = √2 g0 x` in
/// zero-point units, so `S_x = S_raw / (2 K g0²)`. The cavity response is
/// taken as flat across the mechanical and tone frequencies.
pub fn calibrate_displacement(raw: &SpectrumTrace, tone: &CalibrationTone, g0: f64) -> Result<Calibration> {
    check(g0 > 0.0, "g0", "must be > 0")?;
    let tone_power = match tone.measured_tone_power {
        Some(p) => p,
        None => measure_tone(raw, tone.omega_pm)?,
    };
    let conversion = tone_power / tone.frequency_power();
    check(conversion > 0.0, "tone", "measured tone power must be > 0")?;
    Ok(Calibration { s_x: raw.scaled(1.0 / (2.0 * conversion * g0 * g0)), conversion, tone_power })
}
