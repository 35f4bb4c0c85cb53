use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use super::synth::{calibration_data, heterodyne_spectrum, homodyne_spectrum, ringdown, sampled, uniform_grid};
use super::{job_seed, to_json, Outcome, OutputFile, RunOptions, MANIFEST_FILE};
use crate::config::{FilterSection, Scenario, SectionSpec, SpectrumSource};
use crate::control::{check_closed_loop_stability, design_filter, optimize_gain};
use crate::error::{Error, Result};
use crate::heterodyne::{
    band_fraction, fit_sidebands, phase_noise_correction, phonon_from_band_integration, phonon_from_sideband_fit,
    remove_common_noise, LaserNoise, SidebandModel,
};
use crate::inference::{calibrate_displacement, fit_homodyne_spectrum, infer_and_count, measure_tone, CalibrationTone};
use crate::model::{
    effective_resonance, fit_optical_spring, fit_reflection, fit_ringdown, optical_spring_shift, rate_budget, DecayKind,
    LoopConfig, LoopParams, OpticalCavity, SpectrumTrace,
};
use crate::sim::{simulate_spectrum, TraceLabel};
use crate::units::{hz_to_rad, rad_to_hz};

/// Samples of each simulated trace kept for the binary trace files.
const KEEP_SAMPLES: usize = 1 << 16;
/// Relative tolerance of the characterization and sweep cross-checks.
const CHARACTERIZE_TOL: f64 = 0.02;
const SWEEP_TOL: f64 = 0.10;
const CALIBRATION_TOL: f64 = 0.03;

fn base_seed(sc: &Scenario, opts: &RunOptions) -> u64 {
    opts.seed.unwrap_or(sc.file.sim.seed)
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Io(format!("worker pool: {e}")))
}

fn width_hz(cfg: &LoopConfig) -> f64 {
    rad_to_hz(effective_resonance(&LoopParams::from_config(cfg)).1)
}

fn spectrum_files(name: &str, spec: &SpectrumTrace) -> [OutputFile; 2] {
    [
        OutputFile::text(name, spec.to_csv_string()),
        OutputFile::text(&format!("{name}.meta.json"), spec.meta_json(Some(MANIFEST_FILE))),
    ]
}

fn missing(table: &str) -> Error {
    Error::Config(format!("`{table}`: table required by this command"))
}

pub fn cmd_budget(sc: &Scenario) -> Result<Outcome> {
    let cfg = &sc.loop_config;
    let b = rate_budget(cfg)?;
    let report = json!({
        "budget": to_json(&b)?,
        "n_bath": cfg.noise.n_bath,
        "t_eff_k": cfg.noise.t_eff,
        "shot_level": cfg.channel.shot_level,
        "s_imp": cfg.channel.s_imp,
        "gain_per_s": cfg.filter.gain,
        "damped_width_hz": width_hz(cfg),
    });
    Ok(Outcome { report, files: vec![], seeds: vec![] })
}

/// Time-domain run of the configured loop, Welch estimate of the in-loop
/// record normalized by the analytic shot level, and its deviation from
/// the analytic closed-loop spectrum within 50 linewidths of the mode.
pub fn cmd_simulate(sc: &Scenario, opts: &RunOptions) -> Result<Outcome> {
    let cfg = &sc.loop_config;
    let seed = base_seed(sc, opts);
    let width = width_hz(cfg);
    let rbw = sc.file.sim.rbw_per_linewidth * width;
    let run = simulate_spectrum(cfg, seed, sc.file.sim.segments, rbw, sc.file.sim.dt_s, KEEP_SAMPLES)?;
    let shot = cfg.channel.shot_level;
    let spec = run.spectrum.scaled(1.0 / shot);
    let params = LoopParams::from_config(cfg);
    let f_m = rad_to_hz(cfg.mode.omega_m);
    let mut dev = 0.0;
    let mut n = 0usize;
    for (f, p) in spec.freqs.iter().zip(&spec.psd) {
        if (f - f_m).abs() <= 50.0 * width {
            let m = params.measured_psd(hz_to_rad(*f)) / shot;
            dev += (p / m - 1.0).abs();
            n += 1;
        }
    }
    let mut files = spectrum_files("spectrum.csv", &spec).to_vec();
    for t in &run.traces {
        let mut bytes = Vec::new();
        t.write_to(&mut bytes)?;
        let name = match t.label {
            TraceLabel::Displacement => "displacement.trace",
            TraceLabel::Measurement => "measurement.trace",
            TraceLabel::Control => "control.trace",
        };
        files.push(OutputFile { name: name.to_string(), contents: bytes });
    }
    let report = json!({
        "seed": seed,
        "dt_s": run.dt,
        "delay_samples": run.delay_samples,
        "steps": run.steps,
        "segments": spec.n_avg,
        "rbw_hz": spec.rbw,
        "damped_width_hz": width,
        "mean_relative_deviation": if n > 0 { dev / n as f64 } else { f64::NAN },
        "compared_bins": n,
        "spectrum": "spectrum.csv",
    });
    Ok(Outcome { report, files, seeds: vec![seed] })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub gain_per_s: f64,
    pub damped_width_hz: f64,
    pub seed: u64,
    /// Occupancy of the forward model at this gain.
    pub n_truth: Option<f64>,
    pub n_bar: Option<f64>,
    pub n_bar_sigma: Option<f64>,
    pub relative_deviation: Option<f64>,
    pub error: Option<String>,
}

fn sweep_point(sc: &Scenario, source: SpectrumSource, gain: f64, seed: u64) -> SweepPoint {
    let cfg = sc.loop_config.with_gain(gain);
    let mut p = SweepPoint {
        gain_per_s: gain,
        damped_width_hz: rad_to_hz(LoopParams::from_config(&cfg).damped_width()),
        seed,
        n_truth: None,
        n_bar: None,
        n_bar_sigma: None,
        relative_deviation: None,
        error: None,
    };
    let res = (|| -> Result<(f64, f64, f64)> {
        let stab = check_closed_loop_stability(&cfg);
        if !stab.stable {
            return Err(Error::Unstable(stab.summary()));
        }
        let truth = LoopParams::from_config(&cfg).phonon_number()?.n_bar;
        let sim = &sc.file.sim;
        let spec = match source {
            SpectrumSource::Model => homodyne_spectrum(&cfg, sim.segments, sim.rbw_per_linewidth, seed)?,
            SpectrumSource::Simulate => {
                let rbw = sim.rbw_per_linewidth * width_hz(&cfg);
                simulate_spectrum(&cfg, seed, sim.segments, rbw, sim.dt_s, 0)?.spectrum.scaled(1.0 / cfg.channel.shot_level)
            }
        };
        let fit = fit_homodyne_spectrum(&spec, &cfg)?;
        let count = infer_and_count(&fit, None)?;
        Ok((truth, count.n_bar, count.n_bar_sigma))
    })();
    match res {
        Ok((truth, n, s)) => {
            p.n_truth = Some(truth);
            p.n_bar = Some(n);
            p.n_bar_sigma = Some(s);
            p.relative_deviation = Some(n / truth - 1.0);
        }
        Err(e) => p.error = Some(e.to_string()),
    }
    p
}

/// True when the smallest occupancy lies strictly inside the curve and
/// both ends sit above it.
pub fn is_u_shaped(values: &[f64]) -> bool {
    if values.len() < 3 {
        return false;
    }
    let (imin, vmin) = values.iter().enumerate().fold((0, f64::INFINITY), |a, (i, v)| if *v < a.1 { (i, *v) } else { a });
    imin > 0 && imin + 1 < values.len() && values[0] > vmin && values[values.len() - 1] > vmin
}

/// Fits and counts phonons at every gain of `[sweep]`, one independent
/// job per gain. Failed gains are kept in the table with their error.
pub fn cmd_sweep(sc: &Scenario, opts: &RunOptions) -> Result<Outcome> {
    let sweep = sc.file.sweep.as_ref().ok_or_else(|| missing("sweep"))?;
    let gains = sc.sweep_gains()?;
    let base = base_seed(sc, opts);
    let seeds: Vec<u64> = (0..gains.len()).map(|i| job_seed(base, i)).collect();
    let points: Vec<SweepPoint> = pool(opts.workers)?.install(|| {
        gains.par_iter().zip(&seeds).map(|(g, s)| sweep_point(sc, sweep.source, *g, *s)).collect()
    });

    let mut csv = String::from("gain_per_s,damped_width_hz,seed,n_truth,n_bar,n_bar_sigma,status\n");
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for p in &points {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            p.gain_per_s,
            p.damped_width_hz,
            p.seed,
            opt(p.n_truth),
            opt(p.n_bar),
            opt(p.n_bar_sigma),
            if p.error.is_some() { "failed" } else { "ok" }
        );
    }
    let ok: Vec<&SweepPoint> = points.iter().filter(|p| p.error.is_none()).collect();
    let fitted: Vec<f64> = ok.iter().filter_map(|p| p.n_bar).collect();
    let max_dev = ok.iter().filter_map(|p| p.relative_deviation).map(f64::abs).fold(0.0, f64::max);
    let (lo, hi) = gains.iter().fold((f64::INFINITY, 0.0f64), |a, g| (a.0.min(*g), a.1.max(*g)));
    let analytic = optimize_gain(&sc.loop_config, [lo / 3.0, hi * 3.0], 41).ok();
    let best = ok.iter().min_by(|a, b| a.n_bar.unwrap_or(f64::INFINITY).total_cmp(&b.n_bar.unwrap_or(f64::INFINITY)));
    let report = json!({
        "source": sweep.source,
        "points": to_json(&points)?,
        "failed": points.len() - ok.len(),
        "u_shaped": ok.len() == points.len() && is_u_shaped(&fitted),
        "max_relative_deviation": max_dev,
        "agrees_with_model": ok.len() == points.len() && max_dev <= SWEEP_TOL,
        "best_gain_per_s": best.map(|p| p.gain_per_s),
        "best_n_bar": best.and_then(|p| p.n_bar),
        "analytic_optimum": analytic.as_ref().map(|a| json!({"gain_per_s": a.g_opt, "n_min": a.n_min, "boundary": a.boundary})),
        "curve": "sweep.csv",
    });
    Ok(Outcome { report, files: vec![OutputFile::text("sweep.csv", csv)], seeds })
}

/// Fits the configured loop to a spectrum read from `--input` (shot
/// units, with an optional `.meta.json` sidecar) or synthesized from the
/// scenario, then counts phonons in the inferred displacement spectrum.
pub fn cmd_fit(sc: &Scenario, opts: &RunOptions) -> Result<Outcome> {
    let cfg = &sc.loop_config;
    let seed = base_seed(sc, opts);
    let (spec, truth, seeds) = match &opts.input {
        Some(path) => (read_spectrum(path)?, None, vec![]),
        None => {
            let s = homodyne_spectrum(cfg, sc.file.sim.segments, sc.file.sim.rbw_per_linewidth, seed)?;
            (s, Some(LoopParams::from_config(cfg).phonon_number()?.n_bar), vec![seed])
        }
    };
    let fit = fit_homodyne_spectrum(&spec, cfg)?;
    let count = infer_and_count(&fit, None)?;
    let lp = fit.loop_params();
    let mut csv = String::from("freq_hz,psd_shot_units,model_shot_units\n");
    for (f, p) in spec.freqs.iter().zip(&spec.psd) {
        let _ = writeln!(csv, "{f},{p},{}", lp.measured_psd(hz_to_rad(*f)) / fit.shot_level);
    }
    let mut sx = String::from("freq_hz,s_x\n");
    for (f, p) in count.s_x.freqs.iter().zip(&count.s_x.psd) {
        let _ = writeln!(sx, "{f},{p}");
    }
    let mut fit_json = to_json(&fit)?;
    if let serde_json::Value::Object(m) = &mut fit_json {
        m.remove("template");
    }
    let report = json!({
        "input": opts.input.as_ref().map(|p| p.display().to_string()),
        "fit": fit_json,
        "n_bar": count.n_bar,
        "n_bar_sigma": count.n_bar_sigma,
        "tail": count.tail,
        "truncation_warning": count.truncation_warning,
        "n_truth": truth,
        "fit_curve": "fit.csv",
        "displacement": "displacement.csv",
    });
    Ok(Outcome {
        report,
        files: vec![OutputFile::text("fit.csv", csv), OutputFile::text("displacement.csv", sx)],
        seeds,
    })
}

fn read_spectrum(path: &Path) -> Result<SpectrumTrace> {
    SpectrumTrace::read_csv(path).map_err(|e| match e {
        Error::Parse { line, reason } => Error::Parse { line, reason: format!("{}: {reason}", path.display()) },
        Error::Io(m) => Error::Io(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Both extractions of one heterodyne spectrum.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeterodyneAnalysis {
    pub n_fit_raw: f64,
    pub n_fit: f64,
    pub n_int_raw: f64,
    pub n_int: f64,
    pub energy_difference: f64,
    pub energy_difference_sigma: f64,
    /// Integrated difference inside the band over the fitted full difference.
    pub band_difference_fraction: f64,
    /// Analytic captured fraction for the fitted resonance.
    pub band_fraction_predicted: f64,
    pub fit: crate::heterodyne::HeterodyneFit,
}

/// Sideband fit and band integration of `spec`, each with `correction`
/// phonons of common laser noise removed.
pub fn analyze_heterodyne(spec: &SpectrumTrace, omega_het: f64, band_hz: [f64; 2], correction: f64) -> Result<HeterodyneAnalysis> {
    let fit = fit_sidebands(spec, omega_het)?;
    let n_fit_raw = phonon_from_sideband_fit(&fit)?;
    let n_fit = phonon_from_sideband_fit(&remove_common_noise(&fit, correction))?;
    let m = &fit.model;
    let integ = phonon_from_band_integration(spec, band_hz, m.omega_het, [m.n_l, m.n_r])?;
    Ok(HeterodyneAnalysis {
        n_fit_raw,
        n_fit,
        n_int_raw: integ.n_bar,
        n_int: integ.n_bar - correction,
        energy_difference: m.energy_difference(),
        energy_difference_sigma: fit.energy_difference_sigma(),
        band_difference_fraction: integ.difference() / m.energy_difference(),
        band_fraction_predicted: band_fraction(band_hz, rad_to_hz(m.omega_eff), m.gamma_eff),
        fit,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct StabilityRow {
    gain_per_s: f64,
    damped_width_hz: f64,
    seed: u64,
    n_truth: Option<f64>,
    energy_difference: Option<f64>,
    energy_difference_sigma: Option<f64>,
    within_3_sigma: Option<bool>,
    error: Option<String>,
}

/// Synthesizes the out-of-loop heterodyne spectrum of the configured loop
/// (with the classical phase-noise excess on both sidebands), extracts the
/// occupancy by fit and by band integration, and checks the sideband
/// energy difference across the sweep gains.
pub fn cmd_heterodyne(sc: &Scenario, opts: &RunOptions) -> Result<Outcome> {
    let h = sc.file.heterodyne.as_ref().ok_or_else(|| missing("heterodyne"))?;
    let cfg = &sc.loop_config;
    let base = base_seed(sc, opts);
    let lambda = sc.file.coupling.wavelength_m.unwrap_or(1550e-9);
    let noise = LaserNoise::new(h.amplitude_noise, h.phase_noise_rad2_per_hz, LaserNoise::photon_flux(h.probe_power_w, lambda))?;
    let correction = phase_noise_correction(&noise, &cfg.cavity, hz_to_rad(h.probe_detuning_hz), cfg.mode.omega_m);
    let omega_het = hz_to_rad(h.lo_shift_hz);

    let params = LoopParams::from_config(cfg);
    let n_true = match h.n_bar {
        Some(n) => n,
        None => params.phonon_number()?.n_bar,
    };
    let model = SidebandModel::from_loop(&params, n_true + correction, h.energy_per_phonon, omega_het, h.floors)?;
    let spec = heterodyne_spectrum(&model, n_true + correction, h.bin_hz, h.n_avg, base)?;
    let analysis = analyze_heterodyne(&spec, omega_het, h.band_hz, correction)?;

    let mut seeds = vec![base];
    let mut rows = Vec::new();
    if sc.file.sweep.is_some() {
        let gains = sc.sweep_gains()?;
        let row_seeds: Vec<u64> = (0..gains.len()).map(|i| job_seed(base.wrapping_add(1), i)).collect();
        seeds.extend(&row_seeds);
        rows = pool(opts.workers)?.install(|| {
            gains
                .par_iter()
                .zip(&row_seeds)
                .map(|(&g, &seed)| {
                    let p = LoopParams::from_config(&cfg.with_gain(g));
                    let mut row = StabilityRow {
                        gain_per_s: g,
                        damped_width_hz: rad_to_hz(p.damped_width()),
                        seed,
                        n_truth: None,
                        energy_difference: None,
                        energy_difference_sigma: None,
                        within_3_sigma: None,
                        error: None,
                    };
                    let res = (|| -> Result<(f64, f64, f64)> {
                        let stab = check_closed_loop_stability(&cfg.with_gain(g));
                        if !stab.stable {
                            return Err(Error::Unstable(stab.summary()));
                        }
                        let n = p.phonon_number()?.n_bar;
                        let m = SidebandModel::from_loop(&p, n, h.energy_per_phonon, omega_het, h.floors)?;
                        let s = heterodyne_spectrum(&m, n, h.bin_hz, h.n_avg, seed)?;
                        let fit = fit_sidebands(&s, omega_het)?;
                        Ok((n, fit.model.energy_difference(), fit.energy_difference_sigma()))
                    })();
                    match res {
                        Ok((n, d, s)) => {
                            row.n_truth = Some(n);
                            row.energy_difference = Some(d);
                            row.energy_difference_sigma = Some(s);
                            row.within_3_sigma = Some((d - h.energy_per_phonon).abs() <= 3.0 * s);
                        }
                        Err(e) => row.error = Some(e.to_string()),
                    }
                    row
                })
                .collect()
        });
    }
    let fitted_rows: Vec<&StabilityRow> = rows.iter().filter(|r| r.error.is_none()).collect();
    let report = json!({
        "n_true": n_true,
        "phase_noise_correction": correction,
        "c_y": noise.c_y,
        "amplitude_noise": noise.c_amp,
        "n_fit": analysis.n_fit,
        "n_int": analysis.n_int,
        "n_fit_raw": analysis.n_fit_raw,
        "n_int_raw": analysis.n_int_raw,
        "fit_relative_error": analysis.n_fit / n_true - 1.0,
        "int_relative_error": analysis.n_int / n_true - 1.0,
        "energy_per_phonon": h.energy_per_phonon,
        "energy_difference": analysis.energy_difference,
        "energy_difference_sigma": analysis.energy_difference_sigma,
        "band_hz": h.band_hz,
        "band_difference_fraction": analysis.band_difference_fraction,
        "band_fraction_predicted": analysis.band_fraction_predicted,
        "damped_width_hz": rad_to_hz(model.gamma_eff),
        "fit": to_json(&analysis.fit)?,
        "difference_stability": to_json(&rows)?,
        "difference_stable": !fitted_rows.is_empty() && fitted_rows.iter().all(|r| r.within_3_sigma == Some(true)),
        "spectrum": "heterodyne.csv",
    });
    Ok(Outcome { report, files: spectrum_files("heterodyne.csv", &spec).to_vec(), seeds })
}

/// Filter synthesis for the `[design]` table: the filter as a TOML
/// fragment plus damping and stability margins.
pub fn cmd_design(sc: &Scenario) -> Result<Outcome> {
    let spec = sc.design.as_ref().ok_or_else(|| missing("design"))?;
    let design = design_filter(spec)?;
    let cfg = sc.loop_config.with_gain(sc.loop_config.filter.gain);
    let cfg = LoopConfig { filter: crate::filter::FeedbackFilter { gain: cfg.filter.gain, ..design.filter.clone() }, ..cfg };
    let stability = check_closed_loop_stability(&cfg);
    let section = FilterSection {
        gain_per_s: Some(cfg.filter.gain),
        damped_width_hz: None,
        delay_s: cfg.filter.delay,
        epsilon: sc.loop_config.filter.epsilon,
        sections: design.filter.sections.iter().map(|b| SectionSpec::Coefficients { num: b.num, den: b.den }).collect(),
    };
    #[derive(Serialize)]
    struct Wrapper<'a> {
        filter: &'a FilterSection,
    }
    let toml_text = toml::to_string(&Wrapper { filter: &section }).map_err(|e| Error::Io(e.to_string()))?;
    let protected_ok = design.protected.iter().all(|m| m.damping_delta >= 0.0);
    let report = json!({
        "design": to_json(&design)?,
        "gain_per_s": cfg.filter.gain,
        "protected_modes_damped": protected_ok,
        "stability_at_gain": to_json(&stability)?,
        "stability_summary": stability.summary(),
        "filter_file": "filter.toml",
    });
    Ok(Outcome { report, files: vec![OutputFile::text("filter.toml", toml_text)], seeds: vec![] })
}

/// Synthesizes a raw detector spectrum carrying a phase-modulation tone,
/// converts it to displacement units with the tone and compares with the
/// known spectrum.
pub fn cmd_calibrate(sc: &Scenario, opts: &RunOptions) -> Result<Outcome> {
    let cal = sc.file.calibration.as_ref().ok_or_else(|| missing("calibration"))?;
    let cfg = &sc.loop_config;
    let seed = base_seed(sc, opts);
    let mut tone = CalibrationTone::new(cal.phi0_rad, hz_to_rad(cal.tone_hz))?;
    let data = calibration_data(
        cfg,
        cal.detector_gain,
        tone.frequency_power(),
        cal.tone_hz,
        sc.file.sim.segments,
        sc.file.sim.rbw_per_linewidth,
        seed,
    )?;
    tone.measured_tone_power = Some(measure_tone(&data.tone, tone.omega_pm)?);
    let c = calibrate_displacement(&data.mechanical, &tone, cfg.coupling.g0)?;
    let mut ratios: Vec<f64> = c.s_x.psd.iter().zip(&data.truth).map(|(a, b)| a / b).collect();
    ratios.sort_by(|a, b| a.total_cmp(b));
    let median = ratios[ratios.len() / 2];
    let gain_ratio = c.conversion / cal.detector_gain;
    let report = json!({
        "tone_power": c.tone_power,
        "conversion": c.conversion,
        "conversion_over_truth": gain_ratio,
        "median_psd_ratio": median,
        "within_tolerance": (gain_ratio - 1.0).abs() <= CALIBRATION_TOL,
        "seed": seed,
        "spectrum": "calibrated.csv",
    });
    Ok(Outcome { report, files: spectrum_files("calibrated.csv", &c.s_x).to_vec(), seeds: vec![seed] })
}

fn read_xy(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed: std::result::Result<Vec<f64>, _> = cols.iter().map(|c| c.parse::<f64>()).collect();
        match parsed {
            Ok(v) if v.len() == 2 => {
                xs.push(v[0]);
                ys.push(v[1]);
            }
            // a text header is allowed on the first line only
            Err(_) if xs.is_empty() && i == 0 => {}
            _ => {
                return Err(Error::Parse { line: i + 1, reason: format!("{}: expected two numeric columns", path.display()) })
            }
        }
    }
    Ok((xs, ys))
}

fn resolve_path(p: &Path, dir: Option<&PathBuf>) -> PathBuf {
    match dir {
        Some(d) if p.is_relative() => d.join(p),
        _ => p.to_path_buf(),
    }
}

fn check_value(name: &str, value: f64, expected: f64) -> serde_json::Value {
    let rel = value / expected - 1.0;
    json!({"name": name, "value": value, "expected": expected, "relative_error": rel, "pass": rel.abs() <= CHARACTERIZE_TOL})
}

/// Ringdown, cavity reflection and optical-spring fits, on files named in
/// `[characterize]` or on synthetic data generated at the scenario values.
pub fn cmd_characterize(sc: &Scenario, opts: &RunOptions) -> Result<Outcome> {
    let ch = sc.file.characterize.as_ref().ok_or_else(|| missing("characterize"))?;
    let cfg = &sc.loop_config;
    let seed = base_seed(sc, opts);
    let dir = opts.config_dir.as_ref();
    let kappa = cfg.cavity.kappa;
    let mode = cfg.mode;
    let n_c = cfg.coupling.n_c;
    let use_file = |p: &Option<PathBuf>| p.as_ref().filter(|_| !ch.synthetic).map(|p| resolve_path(p, dir));

    let (t, v) = match use_file(&ch.ringdown_csv) {
        Some(p) => read_xy(&p)?,
        // three amplitude decay times
        None => ringdown(mode.gamma_m, 6.0 / mode.gamma_m, 200, ch.noise, job_seed(seed, 0)),
    };
    let ring = fit_ringdown(&t, &v, DecayKind::Amplitude, mode.omega_m)?;

    let (det, refl) = match use_file(&ch.reflection_csv) {
        Some(p) => {
            let (d, r) = read_xy(&p)?;
            (d.into_iter().map(hz_to_rad).collect(), r)
        }
        None => {
            let det: Vec<f64> = uniform_grid(-3.0 * kappa, 3.0 * kappa, kappa / 40.0);
            let r = sampled(
                &det,
                |d| crate::model::cavity_reflection(&OpticalCavity { detuning: d, ..cfg.cavity }),
                ch.noise,
                1.0,
                job_seed(seed, 1),
            );
            (det, r)
        }
    };
    let refl_fit = fit_reflection(&det, &refl)?;

    let (sdet, shifts) = match use_file(&ch.spring_csv) {
        Some(p) => {
            let (d, s) = read_xy(&p)?;
            (d.into_iter().map(hz_to_rad).collect(), s.into_iter().map(hz_to_rad).collect())
        }
        None => {
            let det: Vec<f64> = uniform_grid(-2.0 * kappa, 2.0 * kappa, kappa / 20.0);
            let shift = |d: f64| optical_spring_shift(&OpticalCavity { detuning: d, ..cfg.cavity }, &cfg.coupling);
            let peak = det.iter().map(|d| shift(*d).abs()).fold(0.0, f64::max);
            let s = sampled(&det, shift, ch.noise, peak, job_seed(seed, 2));
            (det, s)
        }
    };
    let spring = fit_optical_spring(&sdet, &shifts, refl_fit.kappa, n_c)?;

    let checks = vec![
        check_value("q_factor", ring.q_factor, mode.q_factor),
        check_value("kappa_hz", rad_to_hz(refl_fit.kappa), rad_to_hz(kappa)),
        check_value("kappa_e_hz", rad_to_hz(refl_fit.kappa_e), rad_to_hz(cfg.cavity.kappa_e)),
        check_value("g0_hz", rad_to_hz(spring.g0), rad_to_hz(cfg.coupling.g0)),
    ];
    let all = checks.iter().all(|c| c["pass"] == json!(true));
    let report = json!({
        "synthetic": ch.synthetic || (ch.ringdown_csv.is_none() && ch.reflection_csv.is_none() && ch.spring_csv.is_none()),
        "ringdown": to_json(&ring)?,
        "reflection": to_json(&refl_fit)?,
        "spring": to_json(&spring)?,
        "checks": checks,
        "all_within_tolerance": all,
    });
    Ok(Outcome { report, files: vec![], seeds: vec![seed] })
}

