//! Feedback-path analysis: per-mode damping, Nyquist stability, filter
//! synthesis under transport delay, and gain optimization.

mod design;
mod gain;
mod stability;

pub use design::{design_filter, DesignReport, DesignSpec, ModeReport};
pub use gain::{optimize_gain, GainOptimum, GainPoint};
pub use stability::{check_closed_loop_stability, check_stability, ModeMargin, StabilityReport};

use crate::filter::FeedbackFilter;
use crate::model::MechanicalMode;

/// Feedback-induced change of linewidth of a mode with loop weight
/// `weight`, `δΓ = g · w · Im H_fb(Ω)`. Positive values damp the mode.
pub fn mode_damping_delta(filter: &FeedbackFilter, gain: f64, mode: &MechanicalMode, weight: f64) -> f64 {
    gain * weight * filter.response(mode.omega_m).im
}
