use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units::rad_to_hz;

/// Tail estimate above this fraction of the integral raises the warning flag.
pub const TAIL_WARN_FRACTION: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhononEstimate {
    pub n_bar: f64,
    /// Estimated contribution (in phonons) of the spectrum outside the grid.
    pub tail: f64,
    pub truncation_warning: bool,
}

/// `n̄ = ½ ∫₀^∞ df (1 + f²/f_M²) S_X(f) − ½` by the trapezoidal rule on the
/// given grid (Hz, one-sided PSD per Hz).
///
/// The tail estimate assumes a flat integrand below the grid and `1/f²`
/// decay above it.
pub fn phonon_from_psd(freqs_hz: &[f64], s_x: &[f64], omega_m: f64) -> Result<PhononEstimate> {
    if freqs_hz.len() != s_x.len() || freqs_hz.len() < 2 {
        return Err(Error::InvalidParameter { name: "grid", reason: "need matching grids with >= 2 points".into() });
    }
    let f_m = rad_to_hz(omega_m);
    let integrand = |i: usize| (1.0 + (freqs_hz[i] / f_m).powi(2)) * s_x[i];
    let mut acc = 0.0;
    for i in 1..freqs_hz.len() {
        acc += 0.5 * (integrand(i) + integrand(i - 1)) * (freqs_hz[i] - freqs_hz[i - 1]);
    }
    let last = freqs_hz.len() - 1;
    let tail_raw = integrand(0) * freqs_hz[0] + integrand(last) * freqs_hz[last];
    let n_bar = 0.5 * acc - 0.5;
    if !n_bar.is_finite() || n_bar < -0.1 {
        return Err(Error::Unphysical(n_bar));
    }
    Ok(PhononEstimate {
        n_bar,
        tail: 0.5 * tail_raw,
        truncation_warning: tail_raw > TAIL_WARN_FRACTION * acc,
    })
}

/// Grid (Hz) for the phonon integral: log-spaced over four decades around
/// the mode plus tangent-spaced clusters resolving each linewidth (rad/s)
/// with geometric wings.
pub fn integration_grid(f_m: f64, widths: &[f64]) -> Vec<f64> {
    let mut g = Vec::with_capacity(4000 + 3000 * widths.len());
    let (lo, hi) = ((f_m / 100.0).ln(), (f_m * 100.0).ln());
    let n_log = 4000;
    for i in 0..n_log {
        g.push((lo + (hi - lo) * i as f64 / (n_log - 1) as f64).exp());
    }
    for &w in widths {
        let half = rad_to_hz(w) / 2.0;
        if !(half > 0.0) {
            continue;
        }
        let theta_max = (0.95 * f_m / half).atan();
        let n = 3001;
        for i in 0..n {
            let th = -theta_max + 2.0 * theta_max * i as f64 / (n - 1) as f64;
            g.push(f_m + half * th.tan());
        }
        // geometric offsets carry the 1/δ² wings out to the log grid
        let decades = (0.95 * f_m / half).log10().max(0.0);
        let n_wing = (60.0 * decades).ceil() as usize;
        for i in 0..=n_wing {
            let d = half * 10f64.powf(decades * i as f64 / n_wing.max(1) as f64);
            g.push(f_m - d);
            g.push(f_m + d);
        }
    }
    g.retain(|f| *f > 0.0 && f.is_finite());
    g.sort_by(|a, b| a.partial_cmp(b).unwrap());
    g.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs());
    g
}
