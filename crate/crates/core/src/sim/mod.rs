//! Time-domain simulation of the delayed feedback loop and spectral
//! estimation of its traces.

mod discrete;
mod run;
mod trace;
mod welch;

pub use discrete::{DigitalBiquad, DiscreteOscillator};
pub use run::{
    default_duration, shot_noise_trace, simulate_closed_loop, simulate_spectrum, LoopSimulator, Sample, SimRun, SpectrumRun, DEFAULT_DT_PERIODS,
    MAX_DT_PERIODS,
};
pub use trace::{TimeTrace, TraceLabel};
pub use welch::{shot_normalize, welch_psd, Window, WelchEstimator};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{check, Result};
use crate::model::SpectrumTrace;

/// Multiplies every bin by an independent `Gamma(n_avg, 1/n_avg)` draw,
/// the scatter of an `n_avg`-segment averaged periodogram around its mean.
pub fn welch_scatter(mean: &SpectrumTrace, seed: u64) -> Result<SpectrumTrace> {
    check(mean.n_avg >= 1.0, "n_avg", "must be >= 1")?;
    let gamma = Gamma::new(mean.n_avg, 1.0 / mean.n_avg).map_err(|e| crate::Error::InvalidParameter {
        name: "n_avg",
        reason: e.to_string(),
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let psd = mean.psd.iter().map(|p| p * gamma.sample(&mut rng)).collect();
    SpectrumTrace::new(mean.freqs.clone(), psd, mean.n_avg, mean.rbw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::{Biquad, FeedbackFilter};
    use crate::model::{CouplingBudget, LoopConfig, MeasurementChannel, MechanicalMode, NoiseInputs, OpticalCavity};
    use std::f64::consts::TAU;

    fn config(gain: f64, delay: f64, sections: Vec<Biquad>) -> LoopConfig {
        let mode = MechanicalMode::from_q(TAU * 1.0e6, 2.0e3, 1e-14).unwrap();
        LoopConfig {
            mode,
            higher_modes: vec![],
            cavity: OpticalCavity::new(TAU * 8.8e9, TAU * 6.9e9, 0.0).unwrap(),
            coupling: CouplingBudget::new(TAU * 224e3, 350.0, 0.5).unwrap(),
            noise: NoiseInputs::new(1.0e4, 0.0, mode.omega_m).unwrap(),
            channel: MeasurementChannel { s_imp: 1e-6, shot_level: 1e-6 },
            filter: FeedbackFilter::new(sections, gain, delay, 0.0).unwrap(),
        }
    }

    #[test]
    fn open_loop_variance_is_bath_plus_half() {
        let cfg = config(0.0, 0.0, vec![]);
        let gamma = cfg.mode.gamma_m;
        // 4000 decay times: ~2% standard error on the variance
        let run = simulate_closed_loop(&cfg, 5, 4000.0 / gamma, Some(1.0 / 24e6)).unwrap();
        let x = run.trace(TraceLabel::Displacement).unwrap();
        let v = x.variance();
        assert!((v / (1.0e4 + 0.5) - 1.0).abs() < 0.06, "{v}");
    }

    #[test]
    fn identical_seeds_are_bit_identical() {
        let cfg = config(1e3, 320e-9, vec![Biquad::resonator(TAU * 1e6, 2.0)]);
        let a = simulate_closed_loop(&cfg, 9, 2e-4, None).unwrap();
        let b = simulate_closed_loop(&cfg, 9, 2e-4, None).unwrap();
        assert_eq!(a, b);
        let c = simulate_closed_loop(&cfg, 10, 2e-4, None).unwrap();
        assert_ne!(a.traces[1].samples, c.traces[1].samples);
    }

    #[test]
    fn delay_is_whole_samples_and_control_lags_measurement() {
        let tau = 640e-9;
        let cfg = config(10.0, tau, vec![Biquad::gain(1.0)]);
        let run = simulate_closed_loop(&cfg, 1, 1e-3, None).unwrap();
        let d = run.delay_samples;
        assert!((d as f64 * run.dt - tau).abs() < 1e-15);
        assert!(run.dt <= 1.0 / 64e6);
        let y = &run.trace(TraceLabel::Measurement).unwrap().samples;
        let u = &run.trace(TraceLabel::Control).unwrap().samples;
        let corr = |lag: usize| -> f64 { (0..y.len() - lag - 1).map(|k| u[k + lag] * y[k]).sum::<f64>() };
        let best = (0..3 * d).max_by(|a, b| corr(*a).total_cmp(&corr(*b))).unwrap();
        assert_eq!(best, d);
        for k in 0..y.len() - d {
            assert!((u[k + d] - 10.0 * y[k]).abs() <= 1e-12 * u[k + d].abs().max(1e-30));
        }
    }

    #[test]
    fn coarse_step_rejected() {
        let cfg = config(0.0, 0.0, vec![]);
        assert!(simulate_closed_loop(&cfg, 1, 1e-3, Some(1.0 / 10e6)).is_err());
    }

    #[test]
    fn unstable_loop_diverges_when_forced() {
        // heating phase at the mode: δΓ = −5Γ
        let cfg = config(0.0, 0.0, vec![Biquad::resonator(TAU * 1e6, 2.0)]);
        let mut c = cfg.with_gain(5.0 * cfg.mode.gamma_m);
        c.filter.delay = 0.5e-6;
        assert!(LoopSimulator::new(&c, None, 1).is_err());
        let mut sim = LoopSimulator::new_unchecked(&c, None, 1).unwrap();
        let steps = (200.0 / cfg.mode.gamma_m / sim.dt()) as usize;
        assert!(matches!(sim.run(steps, |_| {}), Err(crate::Error::Diverged { .. })));
    }

    #[test]
    fn scatter_has_unit_mean() {
        let n = 20000;
        let mean = SpectrumTrace::new((0..n).map(|i| i as f64).collect(), vec![2.0; n], 100.0, 1.0).unwrap();
        let s = welch_scatter(&mean, 4).unwrap();
        let m = s.psd.iter().sum::<f64>() / n as f64;
        let var = s.psd.iter().map(|p| (p - m).powi(2)).sum::<f64>() / n as f64;
        assert!((m / 2.0 - 1.0).abs() < 0.005);
        assert!((var / (4.0 / 100.0) - 1.0).abs() < 0.05);
    }
}
