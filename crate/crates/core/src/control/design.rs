use std::f64::consts::{FRAC_PI_2, PI, TAU};

use serde::{Deserialize, Serialize};

use super::stability::{check_stability, StabilityReport};
use crate::error::{check, Error, Result};
use crate::filter::{Biquad, FeedbackFilter};
use crate::model::{HigherMode, MechanicalMode};

const ALLPASS_Q: [f64; 6] = [0.3, 0.5, 0.8, 1.2, 2.0, 3.0];
const RESONATOR_Q: [f64; 8] = [0.5, 0.7, 1.0, 1.5, 2.0, 3.0, 5.0, 8.0];
const ALLPASS_CENTERS: usize = 31;
/// Resonator phases closer than this to 0 or π push the center far from the target.
const PHASE_GUARD: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSpec {
    pub target: MechanicalMode,
    pub protected: Vec<HigherMode>,
    pub total_delay: f64,
    pub gain_range: [f64; 2],
    /// Loop phase wanted at the target frequency.
    pub phase_target: f64,
    /// Tolerated negative `Im H` at protected modes, relative to `|H|` at the target.
    pub slack: f64,
}

impl DesignSpec {
    pub fn new(target: MechanicalMode, protected: Vec<HigherMode>, total_delay: f64, gain_range: [f64; 2]) -> Self {
        DesignSpec { target, protected, total_delay, gain_range, phase_target: FRAC_PI_2, slack: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        self.target.validate()?;
        check(
            self.gain_range[0] > 0.0 && self.gain_range[0] < self.gain_range[1],
            "gain_range",
            "need 0 < g_min < g_max",
        )?;
        check(self.total_delay >= 0.0 && self.total_delay.is_finite(), "total_delay", "must be >= 0")?;
        check(self.slack >= 0.0, "slack", "must be >= 0")?;
        let ph = self.phase_target.rem_euclid(TAU);
        check(ph > 0.0 && ph < PI, "phase_target", "must damp the target mode (phase in (0, π))")?;
        for p in &self.protected {
            p.mode.validate()?;
            check(
                (p.mode.omega_m - self.target.omega_m).abs() > 1e-6 * self.target.omega_m,
                "protected",
                "protected mode coincides with the target",
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeReport {
    pub freq_hz: f64,
    pub weight: f64,
    /// `arg H_fb` including the delay.
    pub phase: f64,
    pub magnitude: f64,
    /// Linewidth change at the design gain.
    pub damping_delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignReport {
    pub filter: FeedbackFilter,
    pub structure: Vec<String>,
    pub phase_error: f64,
    pub target: ModeReport,
    pub protected: Vec<ModeReport>,
    pub stable_at_min_gain: bool,
    pub stable_at_max_gain: bool,
    pub stability: StabilityReport,
}

#[derive(Clone, Copy)]
enum Kind {
    AllPass,
    Resonator,
}

struct Candidate {
    sections: Vec<Biquad>,
    score: f64,
}

fn structures() -> [&'static [Kind]; 4] {
    use Kind::*;
    [&[Resonator], &[AllPass, Resonator], &[AllPass, AllPass, Resonator], &[AllPass, AllPass, Resonator, Resonator]]
}

/// Resonator center putting phase `theta ∈ (0, π)` at `omega` for quality `q`.
fn resonator_center(omega: f64, q: f64, theta: f64) -> f64 {
    let b = omega / (q * theta.tan());
    if theta == FRAC_PI_2 {
        return omega;
    }
    (b + (b * b + 4.0 * omega * omega).sqrt()) / 2.0
}

fn phase_of(sections: &[Biquad], omega: f64) -> f64 {
    sections.iter().map(|s| s.response(omega).arg()).sum()
}

/// Synthesizes a biquad cascade (≤ 4 sections) whose phase at the target,
/// delay included, equals `phase_target`, and which leaves every protected
/// mode with non-negative feedback damping (`Im H ≥ −slack`). Among
/// feasible designs of the smallest structure the one with least response
/// magnitude at the protected modes wins.
pub fn design_filter(spec: &DesignSpec) -> Result<DesignReport> {
    spec.validate()?;
    let wt = spec.target.omega_m;
    let centers: Vec<f64> =
        (0..ALLPASS_CENTERS).map(|i| wt * 10f64.powf(-1.0 + 2.0 * i as f64 / (ALLPASS_CENTERS - 1) as f64)).collect();
    let allpasses: Vec<Biquad> =
        centers.iter().flat_map(|&c| ALLPASS_Q.iter().map(move |&q| Biquad::allpass(c, q))).collect();

    let mut worst: Option<(f64, f64)> = None;
    for kinds in structures() {
        let n_ap = kinds.iter().filter(|k| matches!(k, Kind::AllPass)).count();
        let n_res = kinds.len() - n_ap;
        let mut best: Option<Candidate> = None;
        // non-decreasing index tuples: each unordered all-pass set once
        let mut combos: Vec<Vec<usize>> = vec![Vec::new()];
        for _ in 0..n_ap {
            combos = combos
                .iter()
                .flat_map(|c| {
                    let from = c.last().copied().unwrap_or(0);
                    (from..allpasses.len()).map(move |i| {
                        let mut v = c.clone();
                        v.push(i);
                        v
                    })
                })
                .collect();
        }
        for idx in &combos {
            let aps: Vec<Biquad> = idx.iter().map(|&i| allpasses[i]).collect();
            let need = (spec.phase_target - wt * spec.total_delay - phase_of(&aps, wt)).rem_euclid(TAU);
            let theta = need / n_res as f64;
            if !(PHASE_GUARD..=PI - PHASE_GUARD).contains(&theta) {
                continue;
            }
            for &q in &RESONATOR_Q {
                let center = resonator_center(wt, q, theta);
                if !(center > 0.05 * wt && center < 20.0 * wt) {
                    continue;
                }
                let mut sections = aps.clone();
                for _ in 0..n_res {
                    sections.push(Biquad::resonator(center, q));
                }
                let mag: f64 = sections.iter().map(|s| s.response(wt).norm()).product();
                let last = sections.last_mut().expect("at least one resonator");
                last.num[2] /= mag;
                let filter = FeedbackFilter { sections, gain: 1.0, delay: spec.total_delay, epsilon: 0.0 };
                let mut violation: f64 = 0.0;
                let mut worst_mode = 0.0;
                let mut score = 0.0;
                for p in &spec.protected {
                    let h = filter.response(p.mode.omega_m);
                    let v = -(h.im + spec.slack);
                    if v > violation {
                        violation = v;
                        worst_mode = p.mode.omega_m;
                    }
                    score += p.weight * h.norm();
                }
                if violation > 0.0 {
                    if worst.is_none_or(|(v, _)| violation < v) {
                        worst = Some((violation, worst_mode));
                    }
                    continue;
                }
                if best.as_ref().is_none_or(|b| score < b.score) {
                    best = Some(Candidate { sections: filter.sections, score });
                }
            }
        }
        if let Some(c) = best {
            let names = kinds
                .iter()
                .map(|k| match k {
                    Kind::AllPass => "allpass".to_string(),
                    Kind::Resonator => "resonator".to_string(),
                })
                .collect();
            return Ok(report(spec, c.sections, names));
        }
    }
    let (_, mode) = worst.unwrap_or((0.0, wt));
    Err(Error::Infeasible(format!(
        "no cascade of up to 4 sections avoids heating the mode at {:.6e} Hz",
        mode / TAU
    )))
}

fn mode_report(filter: &FeedbackFilter, gain: f64, mode: &MechanicalMode, weight: f64) -> ModeReport {
    let h = filter.response(mode.omega_m);
    ModeReport {
        freq_hz: mode.omega_m / TAU,
        weight,
        phase: h.arg(),
        magnitude: h.norm(),
        damping_delta: super::mode_damping_delta(filter, gain, mode, weight),
    }
}

fn report(spec: &DesignSpec, sections: Vec<Biquad>, structure: Vec<String>) -> DesignReport {
    let [g_min, g_max] = spec.gain_range;
    let gain = (g_min * g_max).sqrt();
    let filter = FeedbackFilter { sections, gain, delay: spec.total_delay, epsilon: 0.0 };
    let phase = filter.response(spec.target.omega_m).arg();
    let phase_error = (phase - spec.phase_target + PI).rem_euclid(TAU) - PI;
    let stability = check_stability(&spec.target, &spec.protected, &filter);
    DesignReport {
        target: mode_report(&filter, gain, &spec.target, 1.0),
        protected: spec.protected.iter().map(|p| mode_report(&filter, gain, &p.mode, p.weight)).collect(),
        stable_at_min_gain: check_stability(&spec.target, &spec.protected, &filter.with_gain(g_min)).stable,
        stable_at_max_gain: check_stability(&spec.target, &spec.protected, &filter.with_gain(g_max)).stable,
        stability,
        phase_error,
        structure,
        filter,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mode(f: f64, q: f64) -> MechanicalMode {
        MechanicalMode::from_q(TAU * f, q, 1e-14).unwrap()
    }

    #[test]
    fn center_solution_hits_phase() {
        let w = 3.0;
        for q in RESONATOR_Q {
            for theta in [0.1, 0.7, FRAC_PI_2, 2.0, 3.0] {
                let c = resonator_center(w, q, theta);
                let ph = Biquad::resonator(c, q).response(w).arg();
                assert!((ph - theta).abs() < 1e-9, "q={q} theta={theta} got {ph}");
            }
        }
    }

    #[test]
    fn single_mode_without_delay_is_one_section() {
        let spec = DesignSpec::new(mode(1.045e6, 5e7), vec![], 0.0, [1e2, 1e5]);
        let rep = design_filter(&spec).unwrap();
        assert_eq!(rep.filter.sections.len(), 1);
        assert!(rep.phase_error.abs() < 1e-9);
        assert!((rep.filter.response(spec.target.omega_m).norm() - 1.0).abs() < 1e-9);
        assert!(rep.target.damping_delta > 0.0);
    }

    #[test]
    fn protected_modes_are_not_heated_under_delay() {
        let target = mode(1.045e6, 5e7);
        let protected: Vec<HigherMode> = [2.2, 3.1, 4.3]
            .iter()
            .map(|k| HigherMode { mode: mode(1.045e6 * k, 1e7), weight: 0.3 })
            .collect();
        for tau in [640e-9, 680e-9] {
            let spec = DesignSpec::new(target, protected.clone(), tau, [1e2, 1e5]);
            let rep = design_filter(&spec).unwrap();
            assert!(rep.phase_error.abs() < 0.05);
            assert!(rep.target.damping_delta > 0.0);
            for p in &rep.protected {
                assert!(p.damping_delta >= 0.0, "{p:?}");
            }
            assert!(rep.filter.sections.len() <= 4);
        }
    }

    #[test]
    fn rejects_coincident_protected_mode() {
        let t = mode(1e6, 1e5);
        let spec = DesignSpec::new(t, vec![HigherMode { mode: t, weight: 1.0 }], 0.0, [1.0, 2.0]);
        assert!(matches!(design_filter(&spec), Err(Error::InvalidParameter { .. })));
    }
}
