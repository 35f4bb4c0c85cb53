use std::collections::VecDeque;

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::discrete::{DigitalBiquad, DiscreteOscillator};
use super::trace::{TimeTrace, TraceLabel};
use super::welch::{WelchEstimator, Window};
use crate::control::check_closed_loop_stability;
use crate::error::{check, Error, Result};
use crate::model::{effective_resonance, LoopConfig, LoopParams, SpectrumTrace};
use crate::units::rad_to_hz;

/// Coarsest allowed step in units of the mechanical period.
pub const MAX_DT_PERIODS: f64 = 1.0 / 20.0;
/// Default step in units of the mechanical period.
pub const DEFAULT_DT_PERIODS: f64 = 1.0 / 64.0;

/// One time step of the loop: target-mode displacement, in-loop
/// measurement and applied control force.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub x: f64,
    pub y: f64,
    pub u: f64,
}

/// Sample-by-sample simulator of the delayed measurement–feedback loop.
pub struct LoopSimulator {
    dt: f64,
    delay_samples: usize,
    modes: Vec<DiscreteOscillator>,
    weights: Vec<f64>,
    sections: Vec<DigitalBiquad>,
    gain: f64,
    parasitic: f64,
    imp_sigma: f64,
    pending: VecDeque<f64>,
    current: Sample,
    step: u64,
    limit: f64,
    rng: ChaCha8Rng,
}

fn choose_dt(cfg: &LoopConfig, dt_max: Option<f64>) -> Result<(f64, usize)> {
    let period = 1.0 / rad_to_hz(cfg.mode.omega_m);
    let dt_max = dt_max.unwrap_or(DEFAULT_DT_PERIODS * period);
    check(dt_max > 0.0, "dt", "must be > 0")?;
    check(dt_max <= MAX_DT_PERIODS * period * (1.0 + 1e-12), "dt", "must resolve the oscillation (<= 1/20 period)")?;
    let tau = cfg.filter.delay;
    if tau == 0.0 {
        return Ok((dt_max, 0));
    }
    // whole-sample delay: shrink the step so the delay is exact
    let d = (tau / dt_max).ceil().max(1.0) as usize;
    Ok((tau / d as f64, d))
}

impl LoopSimulator {
    /// Checks stability, then builds the simulator. `dt_max` defaults to
    /// 1/64 of the mechanical period; the step is shortened so that the
    /// loop delay is a whole number of samples.
    pub fn new(cfg: &LoopConfig, dt_max: Option<f64>, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let report = check_closed_loop_stability(cfg);
        if !report.stable {
            return Err(Error::Unstable(report.summary()));
        }
        Self::new_unchecked(cfg, dt_max, seed)
    }

    /// Builds the simulator without the stability precondition, for
    /// confirming instability in the time domain.
    pub fn new_unchecked(cfg: &LoopConfig, dt_max: Option<f64>, seed: u64) -> Result<Self> {
        cfg.validate()?;
        cfg.filter.require_proper()?;
        let (dt, delay_samples) = choose_dt(cfg, dt_max)?;
        let params = LoopParams::from_config(cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        let mut modes = Vec::with_capacity(1 + params.higher.len());
        let mut weights = Vec::with_capacity(1 + params.higher.len());
        let specs = std::iter::once((params.mode, params.s_fn, 1.0))
            .chain(params.higher.iter().map(|(h, s)| (h.mode, *s, h.weight)));
        for (mode, s_f, w) in specs {
            let mut osc = DiscreteOscillator::new(&mode, s_f, dt);
            // open-loop stationary state: ⟨x²⟩ = ⟨(v/Ω)²⟩ = S_F / 4Γ
            let sd = (s_f / (4.0 * mode.gamma_m)).sqrt();
            let (a, b): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
            osc.state = Vector2::new(sd * a, sd * mode.omega_m * b);
            modes.push(osc);
            weights.push(w);
        }
        let warp = cfg.mode.omega_m;
        let sections = cfg.filter.sections.iter().map(|s| DigitalBiquad::bilinear(s, dt, warp)).collect();
        let n_bath = cfg.noise.n_bath;
        let mut sim = LoopSimulator {
            dt,
            delay_samples,
            modes,
            weights,
            sections,
            gain: cfg.filter.gain,
            parasitic: cfg.filter.epsilon / cfg.mode.omega_m,
            imp_sigma: (cfg.channel.s_imp / (2.0 * dt)).sqrt(),
            pending: VecDeque::with_capacity(delay_samples + 1),
            current: Sample { x: 0.0, y: 0.0, u: 0.0 },
            step: 0,
            limit: 1e6 * (n_bath + 0.5).sqrt(),
            rng,
        };
        sim.pending.extend(std::iter::repeat_n(0.0, delay_samples.saturating_sub(1)));
        let a = sim.readout() + sim.imp_sigma * sim.rng.sample::<f64, _>(StandardNormal);
        sim.current = sim.close(a, sim.parasitic, 0.0);
        Ok(sim)
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn fs(&self) -> f64 {
        1.0 / self.dt
    }

    pub fn delay_samples(&self) -> usize {
        self.delay_samples
    }

    fn readout(&self) -> f64 {
        self.modes.iter().zip(&self.weights).map(|(m, w)| w * m.state[0]).sum()
    }

    /// Resolves the measurement and control at the current sample from the
    /// force-free readout `a`, the readout's sensitivity `b` to the
    /// current control force, and the delayed force `u_known` (used when
    /// the loop has at least one sample of delay).
    fn close(&mut self, a: f64, b: f64, u_known: f64) -> Sample {
        let (u, y) = if self.delay_samples == 0 {
            // algebraic loop: the cascade is affine in its input
            let slope: f64 = self.sections.iter().map(|s| s.feedthrough()).product();
            let offset = self.sections.iter().fold(0.0, |acc, s| s.peek(acc));
            let u = self.gain * (slope * a + offset) / (1.0 - self.gain * slope * b);
            (u, a + b * u)
        } else {
            (u_known, a + b * u_known)
        };
        let v = self.sections.iter_mut().fold(y, |acc, s| s.process(acc));
        if self.delay_samples > 0 {
            self.pending.push_back(self.gain * v);
        }
        Sample { x: self.modes[0].state[0], y, u }
    }

    fn advance(&mut self) -> Result<()> {
        let u0 = self.current.u;
        let u1 = if self.delay_samples > 0 { self.pending.pop_front().unwrap_or(0.0) } else { 0.0 };
        let mut a = 0.0;
        let mut b = self.parasitic;
        for (m, w) in self.modes.iter_mut().zip(&self.weights) {
            let (n1, n2) = (self.rng.sample(StandardNormal), self.rng.sample(StandardNormal));
            let pre = m.predict(u0, n1, n2);
            if self.delay_samples > 0 {
                m.state = pre + m.gamma1 * u1;
            } else {
                m.state = pre;
            }
            a += w * m.state[0];
            b += w * m.gamma1[0];
        }
        a += self.imp_sigma * self.rng.sample::<f64, _>(StandardNormal);
        if self.delay_samples > 0 {
            b = self.parasitic;
            self.current = self.close(a, b, u1);
        } else {
            self.current = self.close(a, b, 0.0);
            let u = self.current.u;
            for m in &mut self.modes {
                m.state += m.gamma1 * u;
            }
            self.current.x = self.modes[0].state[0];
        }
        self.step += 1;
        let x = self.current.x;
        if !(x.abs() <= self.limit) {
            return Err(Error::Diverged { time: self.step as f64 * self.dt, magnitude: x.abs() });
        }
        Ok(())
    }

    /// Emits `steps` consecutive samples to `sink`.
    pub fn run(&mut self, steps: usize, mut sink: impl FnMut(Sample)) -> Result<()> {
        for _ in 0..steps {
            sink(self.current);
            self.advance()?;
        }
        Ok(())
    }
}

/// A finished simulation with its recorded traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimRun {
    pub seed: u64,
    pub duration: f64,
    pub dt: f64,
    pub delay_samples: usize,
    pub traces: Vec<TimeTrace>,
    pub config_snapshot: LoopConfig,
}

impl SimRun {
    pub fn trace(&self, label: TraceLabel) -> Option<&TimeTrace> {
        self.traces.iter().find(|t| t.label == label)
    }
}

/// Simulates `duration` seconds and records displacement, measurement and
/// control traces.
pub fn simulate_closed_loop(cfg: &LoopConfig, seed: u64, duration: f64, dt: Option<f64>) -> Result<SimRun> {
    check(duration > 0.0 && duration.is_finite(), "duration", "must be > 0")?;
    let mut sim = LoopSimulator::new(cfg, dt, seed)?;
    let n = (duration / sim.dt()).round().max(1.0) as usize;
    let (mut xs, mut ys, mut us) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    sim.run(n, |s| {
        xs.push(s.x);
        ys.push(s.y);
        us.push(s.u);
    })?;
    let fs = sim.fs();
    let traces = [(xs, TraceLabel::Displacement), (ys, TraceLabel::Measurement), (us, TraceLabel::Control)]
        .into_iter()
        .map(|(samples, label)| TimeTrace { fs, samples, label, seed: Some(seed) })
        .collect();
    Ok(SimRun { seed, duration: n as f64 * sim.dt(), dt: sim.dt(), delay_samples: sim.delay_samples(), traces, config_snapshot: cfg.clone() })
}

/// Welch spectrum of the in-loop measurement from a streamed simulation,
/// plus the first recorded samples of each trace.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumRun {
    /// Measurement PSD in displacement units.
    pub spectrum: SpectrumTrace,
    pub seed: u64,
    pub dt: f64,
    pub delay_samples: usize,
    pub seg_len: usize,
    pub steps: usize,
    pub traces: Vec<TimeTrace>,
}

/// Simulates long enough for `segments` half-overlapping Hann segments at
/// resolution bandwidth `rbw` (Hz), after settling for ten closed-loop decay
/// times. Only the first `keep` samples of each trace are retained.
pub fn simulate_spectrum(
    cfg: &LoopConfig,
    seed: u64,
    segments: usize,
    rbw: f64,
    dt: Option<f64>,
    keep: usize,
) -> Result<SpectrumRun> {
    check(segments >= 1, "segments", "must be >= 1")?;
    check(rbw > 0.0, "rbw", "must be > 0")?;
    let mut sim = LoopSimulator::new(cfg, dt, seed)?;
    let fs = sim.fs();
    // Hann equivalent noise bandwidth is 1.5 bins
    let seg_len = ((1.5 * fs / rbw).ceil() as usize).max(16);
    let mut est = WelchEstimator::new(fs, seg_len, 0.5, Window::Hann)?;
    let (_, width) = effective_resonance(&LoopParams::from_config(cfg));
    let settle = ((10.0 / width) / sim.dt()).ceil() as usize;
    let n = est.samples_for(segments);
    let keep = keep.min(n);
    let (mut xs, mut ys, mut us) = (Vec::with_capacity(keep), Vec::with_capacity(keep), Vec::with_capacity(keep));
    sim.run(settle, |_| {})?;
    let mut i = 0usize;
    sim.run(n, |s| {
        est.push(s.y);
        if i < keep {
            xs.push(s.x);
            ys.push(s.y);
            us.push(s.u);
        }
        i += 1;
    })?;
    let traces = [(xs, TraceLabel::Displacement), (ys, TraceLabel::Measurement), (us, TraceLabel::Control)]
        .into_iter()
        .map(|(samples, label)| TimeTrace { fs, samples, label, seed: Some(seed) })
        .collect();
    Ok(SpectrumRun {
        spectrum: est.finish()?,
        seed,
        dt: sim.dt(),
        delay_samples: sim.delay_samples(),
        seg_len,
        steps: settle + n,
        traces,
    })
}

/// Default record length, 2000 closed-loop decay times.
pub fn default_duration(cfg: &LoopConfig) -> f64 {
    let (_, width) = effective_resonance(&LoopParams::from_config(cfg));
    2000.0 / width
}

/// White shot-noise-only measurement with one-sided PSD `shot_level`.
pub fn shot_noise_trace(shot_level: f64, fs: f64, n: usize, seed: u64) -> TimeTrace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sd = (shot_level * fs / 2.0).sqrt();
    let samples = (0..n).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect();
    TimeTrace { fs, samples, label: TraceLabel::Measurement, seed: Some(seed) }
}
