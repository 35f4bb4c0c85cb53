use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lsq::{levenberg_marquardt, LmOptions, LmReport};
use crate::model::{
    force_noise_psd, integration_grid, phonon_from_psd, LoopConfig, LoopParams, MechanicalMode, SpectrumTrace,
};
use crate::units::{hz_to_rad, rad_to_hz};

/// Order of the fitted parameters in covariance matrices.
pub const FIT_PARAMS: [&str; 6] = ["s_fn", "s_imp", "g_fb", "epsilon_fb", "tau_fb", "omega_m"];

/// Closed-loop homodyne fit in zero-point units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub s_fn: f64,
    pub s_imp: f64,
    pub g_fb: f64,
    pub epsilon_fb: f64,
    pub tau_fb: f64,
    pub omega_m: f64,
    /// Held at the initial value: the width of the fitted peak fixes only
    /// the total damping.
    pub gamma_m: f64,
    /// 1σ errors in [`FIT_PARAMS`] order; zero for parameters held fixed.
    pub sigma: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    /// RMS of `(data − model)/model`.
    pub residual_rms: f64,
    pub reduced_chi2: f64,
    pub iterations: usize,
    pub bins: usize,
    pub shot_level: f64,
    /// Filter shape and higher modes carried over from the initial config.
    pub template: LoopParams,
}

impl FitResult {
    /// Loop parameters with the fitted values substituted.
    pub fn loop_params(&self) -> LoopParams {
        let mut p = self.template.clone();
        p.mode = MechanicalMode {
            omega_m: self.omega_m,
            gamma_m: self.gamma_m,
            q_factor: self.omega_m / self.gamma_m,
            m_eff: p.mode.m_eff,
        };
        p.s_fn = self.s_fn;
        p.s_imp = self.s_imp;
        p.filter.gain = self.g_fb;
        p.filter.epsilon = self.epsilon_fb;
        p.filter.delay = self.tau_fb;
        p
    }

    fn values(&self) -> [f64; 6] {
        [self.s_fn, self.s_imp, self.g_fb, self.epsilon_fb, self.tau_fb, self.omega_m]
    }

    fn with_values(&self, v: &[f64; 6]) -> FitResult {
        FitResult {
            s_fn: v[0],
            s_imp: v[1],
            g_fb: v[2],
            epsilon_fb: v[3],
            tau_fb: v[4],
            omega_m: v[5],
            ..self.clone()
        }
    }
}

/// Which parameters the fit may move.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Vary gain, parasitic coefficient and delay. Off for open-loop data.
    pub loop_terms: bool,
    pub omega_m: bool,
    /// Half-width of the fitted band in closed-loop linewidths.
    pub band_linewidths: f64,
    /// Delay and parasitic coefficient vary only when the fitted band
    /// spans at least this fraction of the mechanical frequency; on
    /// narrower bands they are indistinguishable from the gain and held.
    pub shape_min_band: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { loop_terms: true, omega_m: true, band_linewidths: 40.0, shape_min_band: 0.05 }
    }
}

/// Parameter scaling so the solver works on O(1) numbers.
struct Scales {
    g: f64,
    eps: f64,
    omega0: f64,
    width0: f64,
}

impl Scales {
    fn to_values(&self, p: &[f64; 6]) -> [f64; 6] {
        [
            p[0].exp(),
            p[1].exp(),
            p[2] * self.g,
            p[3] * self.eps,
            p[4] / self.omega0,
            self.omega0 + p[5] * self.width0,
        ]
    }

    fn jac_diag(&self, v: &[f64; 6]) -> [f64; 6] {
        [v[0], v[1], self.g, self.eps, 1.0 / self.omega0, self.width0]
    }
}

fn apply(base: &LoopParams, v: &[f64; 6]) -> LoopParams {
    let mut p = base.clone();
    p.s_fn = v[0];
    p.s_imp = v[1];
    p.filter.gain = v[2];
    p.filter.epsilon = v[3];
    p.filter.delay = v[4];
    p.mode.omega_m = v[5];
    p.mode.q_factor = v[5] / p.mode.gamma_m;
    p
}

struct Start {
    s_fn: f64,
    s_imp: f64,
    gain: f64,
    center: f64,
    width: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    if v.is_empty() {
        return f64::NAN;
    }
    v[v.len() / 2]
}

/// Initial guesses from the spectrum shape: peak bin, −3 dB width, wing
/// floor, area under the peak and the width inflation over `Γ_M`.
fn initial_guess(spec: &SpectrumTrace, init: &LoopConfig) -> Result<Start> {
    let f0 = rad_to_hz(init.mode.omega_m);
    let sm = spec.smoothed(2);
    let idx: Vec<usize> = (0..spec.len()).filter(|&i| spec.freqs[i] > 0.5 * f0 && spec.freqs[i] < 1.5 * f0).collect();
    if idx.len() < 10 {
        return Err(Error::InvalidParameter { name: "spectrum", reason: "does not cover the mode".into() });
    }
    let ip = *idx.iter().max_by(|a, b| sm.psd[**a].total_cmp(&sm.psd[**b])).expect("non-empty");
    let f_peak = spec.freqs[ip];
    let wings: Vec<f64> = idx.iter().filter(|&&i| (spec.freqs[i] - f_peak).abs() > 0.3 * f0).map(|&i| sm.psd[i]).collect();
    let floor = if wings.len() >= 5 { median(wings) } else { median(idx.iter().map(|&i| sm.psd[i]).collect()) };
    let height = sm.psd[ip] - floor;
    if !(floor > 0.0) {
        return Err(Error::NonConvergence { iterations: 0 });
    }
    if !(height > floor) {
        // no clear peak, as in the squashing regime: start from the
        // nominal loop if the spectrum has any structure at all
        return config_start(&sm, &idx, floor, init);
    }
    let half = floor + height / 2.0;
    let cross = |range: &mut dyn Iterator<Item = usize>| -> Option<f64> {
        let mut prev = ip;
        for i in range {
            if sm.psd[i] < half {
                let t = (sm.psd[prev] - half) / (sm.psd[prev] - sm.psd[i]);
                return Some(sm.freqs[prev] + t * (sm.freqs[i] - sm.freqs[prev]));
            }
            prev = i;
        }
        None
    };
    let lo = cross(&mut (0..ip).rev());
    let hi = cross(&mut (ip + 1..spec.len()));
    let df = spec.bin_width();
    let width_hz = match (lo, hi) {
        (Some(l), Some(h)) => (h - l).max(df),
        (Some(l), None) => 2.0 * (f_peak - l),
        (None, Some(h)) => 2.0 * (h - f_peak),
        _ => return config_start(&sm, &idx, floor, init),
    };
    let width = hz_to_rad(width_hz);
    let area: f64 = (0..spec.len())
        .filter(|&i| (spec.freqs[i] - f_peak).abs() <= 5.0 * width_hz)
        .map(|i| (sm.psd[i] - floor).max(0.0) * df)
        .sum::<f64>()
        / (2.0 / std::f64::consts::PI * 10f64.atan());
    let shot = init.channel.shot_level;
    let s_fn = if area > 0.0 { 4.0 * width * area * shot } else { force_noise_psd(&init.noise, &init.mode) };
    let h = init.filter.response(init.mode.omega_m);
    let inflation = width - init.mode.gamma_m;
    let gain = if h.im > 0.0 && inflation > 0.0 { inflation / h.im } else { init.filter.gain };
    Ok(Start { s_fn, s_imp: floor * shot, gain, center: hz_to_rad(f_peak), width })
}

/// Start taken from the nominal loop, for spectra whose shape gives no
/// usable peak. Needs some feature above the smoothed-periodogram scatter.
fn config_start(sm: &SpectrumTrace, idx: &[usize], floor: f64, init: &LoopConfig) -> Result<Start> {
    // five-bin smoothing of an n_avg-segment average
    let scatter = 1.0 / (5.0 * sm.n_avg).sqrt();
    let excursion = idx.iter().map(|&i| (sm.psd[i] / floor - 1.0).abs()).fold(0.0, f64::max);
    if !(excursion > 5.0 * scatter) {
        return Err(Error::NonConvergence { iterations: 0 });
    }
    let (center, width) = crate::model::effective_resonance(&LoopParams::from_config(init));
    Ok(Start {
        s_fn: force_noise_psd(&init.noise, &init.mode),
        s_imp: floor * init.channel.shot_level,
        gain: init.filter.gain,
        center,
        width,
    })
}

/// Weighted least-squares fit of a shot-normalized in-loop spectrum to
/// the closed-loop model. Residuals are `(d − m)/m · √n_avg`, the
/// exponential-statistics weighting of an averaged periodogram.
pub fn fit_homodyne_spectrum(spec: &SpectrumTrace, init: &LoopConfig) -> Result<FitResult> {
    let opts = FitOptions { loop_terms: init.filter.gain != 0.0, ..FitOptions::default() };
    fit_homodyne_with(spec, init, &opts)
}

pub fn fit_homodyne_with(spec: &SpectrumTrace, init: &LoopConfig, opts: &FitOptions) -> Result<FitResult> {
    init.validate()?;
    spec.validate()?;
    let start = initial_guess(spec, init)?;
    let base = LoopParams::from_config(init);
    let omega0 = init.mode.omega_m;
    let shot = init.channel.shot_level;

    let band_hz = opts.band_linewidths * rad_to_hz(start.width);
    let f_c = rad_to_hz(start.center);
    let lo = (f_c - band_hz).max(0.05 * rad_to_hz(omega0));
    let hi = f_c + band_hz;
    let bins: Vec<usize> = (0..spec.len()).filter(|&i| spec.freqs[i] >= lo && spec.freqs[i] <= hi).collect();
    if bins.len() < 20 {
        return Err(Error::TooShort { needed: 20, have: bins.len() });
    }
    let omegas: Vec<f64> = bins.iter().map(|&i| hz_to_rad(spec.freqs[i])).collect();
    let data: Vec<f64> = bins.iter().map(|&i| spec.psd[i]).collect();
    let weight = spec.n_avg.sqrt();

    let scales = Scales {
        g: start.gain.abs().max(1e-300),
        eps: omega0 / start.width,
        omega0,
        width0: start.width,
    };
    let mut free: Vec<usize> = vec![0, 1];
    if opts.loop_terms {
        free.push(2);
        if 2.0 * band_hz >= opts.shape_min_band * rad_to_hz(omega0) {
            free.extend([3, 4]);
        }
    }
    if opts.omega_m {
        free.push(5);
    }

    let starts = {
        let cfg_start = [
            force_noise_psd(&init.noise, &init.mode).ln(),
            init.channel.s_imp.ln(),
            init.filter.gain / scales.g,
            init.filter.epsilon / scales.eps,
            init.filter.delay * omega0,
            0.0,
        ];
        let shape_start = [
            start.s_fn.ln(),
            start.s_imp.ln(),
            if opts.loop_terms { start.gain / scales.g } else { init.filter.gain / scales.g },
            init.filter.epsilon / scales.eps,
            init.filter.delay * omega0,
            0.0,
        ];
        [shape_start, cfg_start]
    };

    let mut best: Option<([f64; 6], LmReport)> = None;
    let mut last_err = None;
    for full in starts {
        let full_c = full;
        let problem = (free.len(), omegas.len(), |q: &[f64], out: &mut [f64]| {
            let mut p = full_c;
            for (k, &j) in free.iter().enumerate() {
                p[j] = q[k];
            }
            let lp = apply(&base, &scales.to_values(&p));
            for (i, &w) in omegas.iter().enumerate() {
                let m = lp.measured_psd(w) / shot;
                out[i] = (data[i] - m) / m * weight;
            }
        });
        let mut lm = LmOptions::new(free.len());
        for (k, &j) in free.iter().enumerate() {
            match j {
                2 => lm = lm.bound(k, 0.0, f64::INFINITY),
                5 => lm = lm.bound(k, -0.5 * omega0 / start.width, 0.5 * omega0 / start.width),
                _ => {}
            }
        }
        let q0: Vec<f64> = free.iter().map(|&j| full[j]).collect();
        match levenberg_marquardt(&problem, &q0, &lm) {
            Ok(rep) => {
                let mut p = full;
                for (k, &j) in free.iter().enumerate() {
                    p[j] = rep.params[k];
                }
                if best.as_ref().is_none_or(|(_, b)| rep.cost < b.cost) {
                    best = Some((p, rep));
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    let (p, rep) = match best {
        Some(b) => b,
        None => return Err(last_err.unwrap_or(Error::NonConvergence { iterations: 0 })),
    };
    if let Some(&k) = rep.at_bound.first() {
        let j = free[k];
        let v = scales.to_values(&p);
        return Err(Error::AtBound { name: FIT_PARAMS[j].to_string(), value: v[j] });
    }

    let values = scales.to_values(&p);
    let diag = scales.jac_diag(&values);
    // bins inside one resolution bandwidth are correlated
    let correlation = (spec.rbw / spec.bin_width()).max(1.0);
    let s2 = rep.reduced_chi2() * correlation;
    let mut cov = DMatrix::zeros(6, 6);
    for (a, &ja) in free.iter().enumerate() {
        for (b, &jb) in free.iter().enumerate() {
            cov[(ja, jb)] = rep.covariance[(a, b)] * s2 * diag[ja] * diag[jb];
        }
    }
    let lp = apply(&base, &values);
    let rel: Vec<f64> = omegas.iter().zip(&data).map(|(w, d)| d / (lp.measured_psd(*w) / shot) - 1.0).collect();
    let residual_rms = (rel.iter().map(|r| r * r).sum::<f64>() / rel.len() as f64).sqrt();
    Ok(FitResult {
        s_fn: values[0],
        s_imp: values[1],
        g_fb: values[2],
        epsilon_fb: values[3],
        tau_fb: values[4],
        omega_m: values[5],
        gamma_m: init.mode.gamma_m,
        sigma: (0..6).map(|j| cov[(j, j)].max(0.0).sqrt()).collect(),
        covariance: (0..6).map(|a| (0..6).map(|b| cov[(a, b)]).collect()).collect(),
        residual_rms,
        reduced_chi2: rep.reduced_chi2(),
        iterations: rep.iterations,
        bins: omegas.len(),
        shot_level: shot,
        template: base,
    })
}

/// Inferred displacement spectrum and its occupancy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhononCount {
    pub s_x: SpectrumTrace,
    pub n_bar: f64,
    /// 1σ from linear propagation of the fit covariance.
    pub n_bar_sigma: f64,
    pub tail: f64,
    pub truncation_warning: bool,
}

fn count_on(fit: &FitResult, freqs: &[f64]) -> Result<(Vec<f64>, crate::model::PhononEstimate)> {
    let lp = fit.loop_params();
    let psd: Vec<f64> = freqs.iter().map(|f| lp.displacement_psd(hz_to_rad(*f))).collect();
    let est = phonon_from_psd(freqs, &psd, lp.mode.omega_m)?;
    Ok((psd, est))
}

/// Integrates the inferred displacement spectrum of a fit; `grid` (Hz)
/// defaults to a grid resolving both the bare and the damped linewidth.
pub fn infer_and_count(fit: &FitResult, grid: Option<&[f64]>) -> Result<PhononCount> {
    let lp = fit.loop_params();
    let owned;
    let freqs = match grid {
        Some(g) => g,
        None => {
            let (_, width) = crate::model::effective_resonance(&lp);
            owned = integration_grid(rad_to_hz(lp.mode.omega_m), &[lp.mode.gamma_m, width]);
            &owned[..]
        }
    };
    let (psd, est) = count_on(fit, freqs)?;

    let v = fit.values();
    let mut grad = [0.0; 6];
    for j in 0..6 {
        if fit.sigma[j] == 0.0 {
            continue;
        }
        let h = 1e-3 * fit.sigma[j];
        let mut up = v;
        let mut dn = v;
        up[j] += h;
        dn[j] -= h;
        let nu = count_on(&fit.with_values(&up), freqs)?.1.n_bar;
        let nd = count_on(&fit.with_values(&dn), freqs)?.1.n_bar;
        grad[j] = (nu - nd) / (2.0 * h);
    }
    let mut var = 0.0;
    for a in 0..6 {
        for b in 0..6 {
            var += grad[a] * fit.covariance[a][b] * grad[b];
        }
    }
    Ok(PhononCount {
        s_x: SpectrumTrace::new(freqs.to_vec(), psd, 1.0, 0.0)?,
        n_bar: est.n_bar,
        n_bar_sigma: var.max(0.0).sqrt(),
        tail: est.tail,
        truncation_warning: est.truncation_warning,
    })
}
