//! Analog biquad cascades with loop gain and transport delay.
//!
//! Frequency responses follow the `e^{-iωt}` Fourier convention used by the
//! loop formulas: `d/dt -> -iω`, so a section `H(s)` is evaluated at
//! `s = -iω`, and a delay `τ` multiplies by `e^{iωτ}`. In this convention a
//! phase of `+π/2` at the mechanical frequency is pure velocity damping.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{check, Error, Result};

/// `(b0 s² + b1 s + b2) / (a0 s² + a1 s + a2)` with `s` in rad/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Biquad {
    pub num: [f64; 3],
    pub den: [f64; 3],
}

impl Biquad {
    pub fn new(num: [f64; 3], den: [f64; 3]) -> Result<Self> {
        let b = Biquad { num, den };
        b.validate()?;
        Ok(b)
    }

    /// Resonant low-pass normalized to unit gain at `center`; phase runs
    /// from 0 below the center through `+π/2` at it to `+π` above.
    pub fn resonator(center: f64, q: f64) -> Self {
        Biquad { num: [0.0, 0.0, center * center / q], den: [1.0, center / q, center * center] }
    }

    /// Band-pass with unit, zero-phase gain at `center`.
    pub fn bandpass(center: f64, q: f64) -> Self {
        Biquad { num: [0.0, center / q, 0.0], den: [1.0, center / q, center * center] }
    }

    /// Second-order all-pass; phase rises from 0 to `2π`, passing `π` at `center`.
    pub fn allpass(center: f64, q: f64) -> Self {
        let w = center;
        Biquad { num: [1.0, -w / q, w * w], den: [1.0, w / q, w * w] }
    }

    /// Flat real gain.
    pub fn gain(k: f64) -> Self {
        Biquad { num: [0.0, 0.0, k], den: [0.0, 0.0, 1.0] }
    }

    /// Ideal velocity pickoff `iω/ω_ref` (improper; analysis only).
    pub fn velocity(omega_ref: f64) -> Self {
        Biquad { num: [0.0, -1.0 / omega_ref, 0.0], den: [0.0, 0.0, 1.0] }
    }

    pub fn validate(&self) -> Result<()> {
        check(
            self.num.iter().chain(self.den.iter()).all(|c| c.is_finite()),
            "section",
            "non-finite coefficient",
        )?;
        check(self.den.iter().any(|&c| c != 0.0), "section", "denominator is identically zero")?;
        check(self.is_stable(), "section", format!("denominator {:?} has a root with Re >= 0", self.den))
    }

    /// All denominator roots strictly in the left half plane.
    pub fn is_stable(&self) -> bool {
        let [a0, a1, a2] = self.den;
        if a0 != 0.0 {
            a1 / a0 > 0.0 && a2 / a0 > 0.0
        } else if a1 != 0.0 {
            a2 / a1 > 0.0
        } else {
            a2 != 0.0
        }
    }

    /// True when the numerator degree does not exceed the denominator degree.
    pub fn is_proper(&self) -> bool {
        degree(&self.num) <= degree(&self.den)
    }

    pub fn response(&self, omega: f64) -> Complex64 {
        let s = Complex64::new(0.0, -omega);
        let eval = |c: &[f64; 3]| (s * c[0] + c[1]) * s + c[2];
        eval(&self.num) / eval(&self.den)
    }
}

fn degree(c: &[f64; 3]) -> usize {
    if c[0] != 0.0 {
        2
    } else if c[1] != 0.0 {
        1
    } else {
        0
    }
}

/// Feedback path: biquad cascade, loop gain `g_fb` (s⁻¹, since the
/// susceptibility carries units of time), transport delay, and the
/// parasitic in-loop detection coefficient.
///
/// `epsilon` is dimensionless: the parasitic term enters the loop as
/// `ε/Ω_M`, i.e. in units of the static susceptibility `χ_M(0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackFilter {
    pub sections: Vec<Biquad>,
    pub gain: f64,
    pub delay: f64,
    pub epsilon: f64,
}

impl Default for FeedbackFilter {
    fn default() -> Self {
        FeedbackFilter { sections: Vec::new(), gain: 0.0, delay: 0.0, epsilon: 0.0 }
    }
}

impl FeedbackFilter {
    pub fn new(sections: Vec<Biquad>, gain: f64, delay: f64, epsilon: f64) -> Result<Self> {
        let f = FeedbackFilter { sections, gain, delay, epsilon };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        for s in &self.sections {
            s.validate()?;
        }
        check(self.gain.is_finite(), "gain", "must be finite")?;
        check(self.delay.is_finite() && self.delay >= 0.0, "delay", "must be >= 0")?;
        check(self.epsilon.is_finite(), "epsilon", "must be finite")
    }

    pub fn with_gain(&self, gain: f64) -> Self {
        FeedbackFilter { gain, ..self.clone() }
    }

    /// Delay-free cascade response `H̃(ω)`.
    pub fn shape_response(&self, omega: f64) -> Complex64 {
        self.sections.iter().fold(Complex64::new(1.0, 0.0), |acc, s| acc * s.response(omega))
    }

    /// `H_fb(ω) = H̃(ω) e^{iωτ}`; the loop gain is applied separately.
    pub fn response(&self, omega: f64) -> Complex64 {
        self.shape_response(omega) * Complex64::from_polar(1.0, omega * self.delay)
    }

    /// `g_fb · H_fb(ω)`.
    pub fn loop_response(&self, omega: f64) -> Complex64 {
        self.response(omega) * self.gain
    }

    pub fn is_proper(&self) -> bool {
        self.sections.iter().all(Biquad::is_proper)
    }

    pub(crate) fn require_proper(&self) -> Result<()> {
        if self.is_proper() {
            Ok(())
        } else {
            Err(Error::InvalidParameter {
                name: "sections",
                reason: "improper section cannot be realized in the time domain".into(),
            })
        }
    }
}

/// Free-function form of [`FeedbackFilter::response`].
pub fn filter_response(filter: &FeedbackFilter, omega: f64) -> Complex64 {
    filter.response(omega)
}
