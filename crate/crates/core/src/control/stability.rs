use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::filter::FeedbackFilter;
use crate::model::{mech_susceptibility, HigherMode, LoopConfig, MechanicalMode};

const MAX_GRID: usize = 400_000;
const MAX_BISECT: u32 = 40;

/// Phase of the loop at one mechanical mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeMargin {
    pub omega: f64,
    pub weight: f64,
    /// `arg(g H_fb(Ω))` in `(−π, π]`.
    pub phase: f64,
    /// Distance of the phase from the edge of the damping half-plane
    /// `(0, π)`; negative when the mode is heated.
    pub phase_margin: f64,
    pub damping_delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub stable: bool,
    /// Encirclements of the origin by `1 − L(ω)` over the full real axis.
    pub winding: i64,
    /// Smallest factor on the loop gain that puts `L(ω)` on `1`.
    pub gain_margin: f64,
    pub mode_margins: Vec<ModeMargin>,
    pub resolution_warning: bool,
    pub grid_points: usize,
    pub note: Option<String>,
}

impl StabilityReport {
    pub fn summary(&self) -> String {
        let mut s = format!(
            "{} (winding {}, gain margin {:.4})",
            if self.stable { "stable" } else { "unstable" },
            self.winding,
            self.gain_margin
        );
        for m in &self.mode_margins {
            s.push_str(&format!(
                "; mode {:.6e} Hz: phase {:.3} rad, dGamma {:.4e} rad/s",
                m.omega / (2.0 * PI),
                m.phase,
                m.damping_delta
            ));
        }
        if let Some(n) = &self.note {
            s.push_str("; ");
            s.push_str(n);
        }
        if self.resolution_warning {
            s.push_str("; warning: frequency grid under-resolves the loop phase");
        }
        s
    }
}

/// Nyquist check of `1 − g (χ_tot + ε/Ω_M) H_fb` for the loop described by `cfg`.
pub fn check_closed_loop_stability(cfg: &LoopConfig) -> StabilityReport {
    check_stability(&cfg.mode, &cfg.higher_modes, &cfg.filter)
}

struct Loop<'a> {
    mode: &'a MechanicalMode,
    higher: &'a [HigherMode],
    filter: &'a FeedbackFilter,
}

impl Loop<'_> {
    fn open(&self, omega: f64) -> Complex64 {
        let mut chi = mech_susceptibility(self.mode, omega) + self.filter.epsilon / self.mode.omega_m;
        for h in self.higher {
            chi += mech_susceptibility(&h.mode, omega) * h.weight;
        }
        self.filter.loop_response(omega) * chi
    }
}

fn phase_margin(phase: f64) -> f64 {
    if phase >= 0.0 {
        phase.min(PI - phase)
    } else {
        -(-phase).min(PI + phase)
    }
}

fn margins(mode: &MechanicalMode, higher: &[HigherMode], filter: &FeedbackFilter) -> Vec<ModeMargin> {
    std::iter::once((mode, 1.0))
        .chain(higher.iter().map(|h| (&h.mode, h.weight)))
        .map(|(m, w)| {
            let h = filter.loop_response(m.omega_m);
            let phase = if h.norm() == 0.0 { 0.0 } else { h.arg() };
            ModeMargin {
                omega: m.omega_m,
                weight: w,
                phase,
                phase_margin: phase_margin(phase),
                damping_delta: super::mode_damping_delta(filter, filter.gain, m, w),
            }
        })
        .collect()
}

/// Corner frequencies and widths of the filter poles.
fn section_features(filter: &FeedbackFilter) -> Vec<(f64, f64)> {
    filter
        .sections
        .iter()
        .filter_map(|s| {
            let [a0, a1, a2] = s.den;
            if a0 != 0.0 {
                let w = (a2 / a0).sqrt();
                Some((w, (a1 / a0).max(1e-6 * w)))
            } else if a1 != 0.0 {
                let w = a2 / a1;
                Some((w, w))
            } else {
                None
            }
        })
        .collect()
}

pub fn check_stability(mode: &MechanicalMode, higher: &[HigherMode], filter: &FeedbackFilter) -> StabilityReport {
    let mode_margins = margins(mode, higher, filter);
    if filter.gain == 0.0 {
        return StabilityReport {
            stable: true,
            winding: 0,
            gain_margin: f64::INFINITY,
            mode_margins,
            resolution_warning: false,
            grid_points: 0,
            note: None,
        };
    }
    let lp = Loop { mode, higher, filter };
    let features = section_features(filter);
    let mut top = higher.iter().map(|h| h.mode.omega_m).fold(mode.omega_m, f64::max);
    for (w, _) in &features {
        top = top.max(*w);
    }

    // Extend the grid until |L| has fallen well inside the unit circle.
    let mut omega_max = 100.0 * top;
    let tail_level = |w: f64| [1.0, 2.0, 3.0, 5.0, 7.0, 10.0].iter().map(|k| lp.open(w * k).norm()).fold(0.0, f64::max);
    let mut note = None;
    let mut tail = tail_level(omega_max);
    while tail >= 0.5 && omega_max < 1e6 * top {
        omega_max *= 10.0;
        tail = tail_level(omega_max);
    }
    if tail >= 1.0 {
        return StabilityReport {
            stable: false,
            winding: 0,
            gain_margin: 0.0,
            mode_margins,
            resolution_warning: false,
            grid_points: 0,
            note: Some(format!("loop gain stays at {tail:.3} at high frequency")),
        };
    }
    if tail >= 0.5 {
        note = Some(format!("high-frequency loop gain {tail:.3}"));
    }

    let mut grid = vec![0.0];
    let low = 1e-3 * mode.omega_m;
    let decades = (omega_max / low).log10();
    let n_log = (200.0 * decades).ceil() as usize;
    for i in 0..=n_log {
        grid.push(low * 10f64.powf(decades * i as f64 / n_log as f64));
    }
    let mut resolution_warning = false;
    if filter.delay > 0.0 {
        let step = PI / (10.0 * filter.delay);
        let n_lin = (omega_max / step).ceil() as usize;
        if n_lin > MAX_GRID {
            resolution_warning = true;
        }
        let n_lin = n_lin.min(MAX_GRID);
        grid.extend((1..=n_lin).map(|i| omega_max * i as f64 / n_lin as f64));
    }
    let mut clusters: Vec<(f64, f64)> = std::iter::once((mode.omega_m, mode.gamma_m))
        .chain(higher.iter().map(|h| (h.mode.omega_m, h.mode.gamma_m)))
        .collect();
    clusters.extend(features.iter().copied());
    for (center, width) in clusters {
        let half = width / 2.0;
        let tmax = (0.5 * center / half).atan();
        let n = 401;
        for i in 0..n {
            let t = -tmax + 2.0 * tmax * i as f64 / (n - 1) as f64;
            grid.push(center + half * t.tan());
        }
    }
    grid.retain(|w| *w >= 0.0 && *w <= omega_max);
    grid.sort_by(|a, b| a.total_cmp(b));
    grid.dedup();

    let d = |w: f64| Complex64::new(1.0, 0.0) - lp.open(w);
    let mut unwrapped = 0.0;
    let mut prev_w = grid[0];
    let mut prev_d = d(prev_w);
    let mut gain_margin = f64::INFINITY;
    let mut marginal = prev_d.norm() < 1e-12;
    let mut visited = 1usize;
    let mut crossing = |l0: Complex64, l1: Complex64| {
        if l0.im == 0.0 && l0.re > 0.0 {
            gain_margin = gain_margin.min(1.0 / l0.re);
        }
        if l0.im * l1.im < 0.0 {
            let t = l0.im / (l0.im - l1.im);
            let re = l0.re + t * (l1.re - l0.re);
            if re > 0.0 {
                gain_margin = gain_margin.min(1.0 / re);
            }
        }
    };
    crossing(Complex64::new(1.0, 0.0) - prev_d, Complex64::new(1.0, 0.0) - prev_d);

    let mut stack: Vec<(f64, Complex64, u32)> = Vec::new();
    for &w in &grid[1..] {
        stack.push((w, d(w), 0));
        while let Some(&(w1, d1, depth)) = stack.last() {
            let step = (d1 / prev_d).arg();
            if step.abs() > PI / 4.0 && depth < MAX_BISECT {
                let mid = 0.5 * (prev_w + w1);
                stack.push((mid, d(mid), depth + 1));
                continue;
            }
            if step.abs() > PI / 4.0 {
                resolution_warning = true;
            }
            stack.pop();
            unwrapped += step;
            crossing(Complex64::new(1.0, 0.0) - prev_d, Complex64::new(1.0, 0.0) - d1);
            marginal |= d1.norm() < 1e-12;
            prev_w = w1;
            prev_d = d1;
            visited += 1;
        }
    }
    // the tail stays in the right half plane: drop its residual angle
    let winding = ((unwrapped - prev_d.arg()) / PI).round() as i64;
    StabilityReport {
        stable: winding == 0 && !marginal,
        winding,
        gain_margin,
        mode_margins,
        resolution_warning,
        grid_points: visited,
        note,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::Biquad;
    use std::f64::consts::TAU;

    fn mode() -> MechanicalMode {
        MechanicalMode::from_q(TAU * 1e6, 1e4, 1e-14).unwrap()
    }

    #[test]
    fn zero_gain_is_stable_with_infinite_margin() {
        let f = FeedbackFilter::new(vec![Biquad::resonator(TAU * 1e6, 2.0)], 0.0, 640e-9, 0.0).unwrap();
        let r = check_stability(&mode(), &[], &f);
        assert!(r.stable && r.gain_margin.is_infinite());
    }

    #[test]
    fn velocity_damping_without_delay_is_stable_at_any_gain() {
        let m = mode();
        for g in [1e1, 1e3, 1e5, 1e7, 1e9] {
            let f = FeedbackFilter::new(vec![Biquad::velocity(m.omega_m)], g, 0.0, 0.0).unwrap();
            let r = check_stability(&m, &[], &f);
            assert!(r.stable, "g = {g}: {}", r.summary());
        }
    }

    #[test]
    fn positive_static_feedback_is_unstable() {
        let m = mode();
        let f = FeedbackFilter::new(vec![Biquad::gain(1.0)], 2.0 * m.omega_m, 0.0, 0.0).unwrap();
        assert!(!check_stability(&m, &[], &f).stable);
        let f = f.with_gain(0.5 * m.omega_m);
        let r = check_stability(&m, &[], &f);
        assert!(r.stable, "{}", r.summary());
        assert!((r.gain_margin - 2.0).abs() < 1e-6);
    }

    #[test]
    fn anti_damping_threshold() {
        // phase −π/2 at the mode: δΓ = −g
        let m = mode();
        let tau = 1.0 / (1e6);
        let f = FeedbackFilter::new(vec![Biquad::resonator(m.omega_m, 2.0)], 0.0, tau * 0.5, 0.0).unwrap();
        let h = f.response(m.omega_m);
        assert!((h.arg() + PI / 2.0).abs() < 1e-9);
        let r = check_stability(&m, &[], &f.with_gain(0.5 * m.gamma_m));
        assert!(r.stable, "{}", r.summary());
        assert!(r.gain_margin > 1.9 && r.gain_margin < 2.1, "{}", r.gain_margin);
        let r = check_stability(&m, &[], &f.with_gain(2.0 * m.gamma_m));
        assert!(!r.stable);
        assert!(r.mode_margins[0].damping_delta < 0.0);
    }
}
