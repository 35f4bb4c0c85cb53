//! Closed-loop spectrum fitting, displacement inference and detector
//! calibration.

mod calibration;
mod homodyne;

pub use calibration::{calibrate_displacement, measure_tone, Calibration, CalibrationTone};
pub use homodyne::{
    fit_homodyne_spectrum, fit_homodyne_with, infer_and_count, FitOptions, FitResult, PhononCount, FIT_PARAMS,
};

use crate::error::Result;
use crate::model::{LoopParams, SpectrumTrace};
use crate::units::hz_to_rad;

/// Noise-free in-loop spectrum in shot units on `freqs` (Hz), labelled
/// with the statistics of an `n_avg`-segment estimate.
pub fn model_spectrum(params: &LoopParams, shot_level: f64, freqs: Vec<f64>, n_avg: f64, rbw: f64) -> Result<SpectrumTrace> {
    let psd = freqs.iter().map(|f| params.measured_psd(hz_to_rad(*f)) / shot_level).collect();
    SpectrumTrace::new(freqs, psd, n_avg, rbw)
}
