//! End-to-end acceptance run. Each criterion prints one PASS/FAIL line with
//! the numbers behind it; the process exits nonzero if any fails.

use std::f64::consts::TAU;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use coldloop::config::{gain_for_width, reference};
use coldloop::control::{check_closed_loop_stability, design_filter, optimize_gain, DesignSpec};
use coldloop::filter::{Biquad, FeedbackFilter};
use coldloop::heterodyne::{
    captured_fraction, estimate_amplitude_noise, fit_sidebands, occupancy_from_powers, phase_noise_correction,
    phonon_from_band_integration, phonon_from_sideband_fit, synth_heterodyne_psd, LaserNoise, SidebandModel,
};
use coldloop::inference::{fit_homodyne_spectrum, infer_and_count};
use coldloop::model::{
    effective_resonance, rate_budget, thermal_occupation, ClosedLoopModel, CouplingBudget, HigherMode, LoopConfig, LoopParams,
    MeasurementChannel, MechanicalMode, NoiseInputs, OpticalCavity, SpectrumTrace,
};
use coldloop::pipeline::synth::{heterodyne_grid, heterodyne_spectrum, homodyne_spectrum, uniform_grid};
use coldloop::pipeline::{analyze_heterodyne, execute, Command, RunOptions};
use coldloop::sim::{simulate_spectrum, welch_scatter, LoopSimulator};
use coldloop::units::{hz_to_rad, rad_to_hz};
use coldloop::Error;

type Verdict = (bool, String);
type Criterion = fn() -> coldloop::Result<Verdict>;

fn report(cmd: Command, name: &str) -> coldloop::Result<Value> {
    Ok(execute(cmd, &reference(name)?, &RunOptions::default())?.report)
}

fn rel(a: f64, b: f64) -> f64 {
    a / b - 1.0
}

/// Low-Q fast mode used for the time-domain checks.
fn fast_config(rng: &mut ChaCha8Rng) -> LoopConfig {
    let f_m = rng.random_range(0.8e6..1.5e6);
    let mode = MechanicalMode::from_q(TAU * f_m, rng.random_range(300.0..3000.0), 1e-14).unwrap();
    LoopConfig {
        mode,
        higher_modes: vec![],
        cavity: OpticalCavity::new(TAU * 8.8e9, TAU * 6.9e9, 0.0).unwrap(),
        coupling: CouplingBudget::new(TAU * 224e3, 350.0, 0.5).unwrap(),
        noise: NoiseInputs::new(rng.random_range(1e3..1e5), 0.0, mode.omega_m).unwrap(),
        channel: MeasurementChannel { s_imp: 1.0, shot_level: 1.0 },
        filter: FeedbackFilter::new(vec![], 0.0, 0.0, 0.0).unwrap(),
    }
}

fn budget() -> coldloop::Result<Verdict> {
    let sc = reference("lhe_het")?;
    let b = rate_budget(&sc.loop_config)?;
    let n_th = thermal_occupation(18.3, TAU * 1.045e6);
    let ok = (1.0e3..=1.2e3).contains(&b.c0) && rel(n_th, 3.6e5).abs() <= 0.03 && rel(b.n_th, n_th).abs() < 1e-12;
    Ok((ok, format!("C0 = {:.4e}, n_th = {:.4e} ({:+.2}%)", b.c0, b.n_th, 100.0 * rel(n_th, 3.6e5))))
}

fn oracle_equivalence() -> coldloop::Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut devs = Vec::new();
    while devs.len() < 10 {
        let mut cfg = fast_config(&mut rng);
        let tau = rng.random_range(0.0..700e-9);
        let spec = DesignSpec::new(cfg.mode, vec![], tau, [1e2, 1e8]);
        let design = design_filter(&spec)?;
        let width = TAU * rng.random_range(3e3..12e3);
        if width <= 1.2 * cfg.mode.gamma_m {
            continue;
        }
        let g = gain_for_width(&design.filter, &cfg.mode, width)?;
        cfg.filter = FeedbackFilter { epsilon: rng.random_range(0.0..0.01), ..design.filter.with_gain(g) };
        // imprecision 10 to 1000 times below the open-loop peak
        let peak = LoopParams::from_config(&cfg.with_gain(0.0)).displacement_psd(cfg.mode.omega_m);
        let shot = peak / 10f64.powf(rng.random_range(1.0..3.0));
        cfg.channel = MeasurementChannel { s_imp: shot * rng.random_range(1.0..3.0), shot_level: shot };
        if !check_closed_loop_stability(&cfg).stable {
            continue;
        }
        let model = ClosedLoopModel::new(&cfg)?;
        let (_, w) = model.effective_resonance();
        let run = simulate_spectrum(&cfg, 100 + devs.len() as u64, 1000, rad_to_hz(w) / 5.0, None, 0)?;
        let f_m = rad_to_hz(cfg.mode.omega_m);
        let half = 50.0 * rad_to_hz(w);
        let (mut acc, mut n) = (0.0, 0);
        for (f, p) in run.spectrum.freqs.iter().zip(&run.spectrum.psd) {
            if (f - f_m).abs() <= half {
                acc += (p / model.measured_psd(hz_to_rad(*f)) - 1.0).abs();
                n += 1;
            }
        }
        devs.push(acc / n as f64);
    }
    let worst = devs.iter().cloned().fold(0.0, f64::max);
    Ok((worst < 0.05, format!("10 loops, 1000 segments, worst mean |dev| = {:.2}%", 100.0 * worst)))
}

fn estimator_roundtrip() -> coldloop::Result<Verdict> {
    let r = report(Command::Sweep, "lhe_het")?;
    let points = r["points"].as_array().map_or(0, |p| p.len());
    let ok = points == 8
        && r["failed"] == 0
        && r["u_shaped"] == true
        && r["max_relative_deviation"].as_f64().is_some_and(|d| d <= 0.10);
    Ok((ok, format!("{points} gains, failed {}, max dev {:.2}%, U-shaped {}", r["failed"], 100.0 * r["max_relative_deviation"].as_f64().unwrap_or(f64::NAN), r["u_shaped"])))
}

/// Gain on the low-gain branch of the cooling curve where the analytic
/// occupancy equals `n`.
fn gain_for_occupancy(cfg: &LoopConfig, n: f64, g_opt: f64) -> coldloop::Result<f64> {
    let occ = |g: f64| LoopParams::from_config(&cfg.with_gain(g)).phonon_number().map(|p| p.n_bar);
    let (mut lo, mut hi) = (g_opt / 1e4, g_opt);
    for _ in 0..100 {
        let mid = (lo * hi).sqrt();
        if occ(mid)? > n {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((lo * hi).sqrt())
}

fn cross_method() -> coldloop::Result<Verdict> {
    let sc = reference("lhe_nohet")?;
    let h = reference("lhe_het")?.file.heterodyne.expect("heterodyne section");
    let base = &sc.loop_config;
    let opt = optimize_gain(base, [1e3, 1e7], 81)?;
    let mut worst: f64 = 0.0;
    let mut rows = Vec::new();
    for (i, n) in [0.76, 1.06, 3.45, 10.0].into_iter().enumerate() {
        let cfg = base.with_gain(gain_for_occupancy(base, n, opt.g_opt)?);
        let spec = homodyne_spectrum(&cfg, 500, 0.1, 10 + i as u64)?;
        let n_hom = infer_and_count(&fit_homodyne_spectrum(&spec, &cfg)?, None)?.n_bar;
        // one phonon raises the sideband peak 5 shot units above its floor
        let params = LoopParams::from_config(&cfg);
        let (_, width) = effective_resonance(&params);
        let omega_het = hz_to_rad(h.lo_shift_hz);
        let model = SidebandModel::from_loop(&params, n, 5.0 * width / 4.0, omega_het, h.floors)?;
        let het = heterodyne_spectrum(&model, n, h.bin_hz, h.n_avg, 20 + i as u64)?;
        let n_het = analyze_heterodyne(&het, omega_het, h.band_hz, 0.0)?.n_fit;
        worst = worst.max(rel(n_hom, n_het).abs());
        rows.push(format!("{n}: {n_hom:.3}/{n_het:.3}"));
    }
    Ok((worst <= 0.10, format!("homodyne/heterodyne {}; worst {:.2}%", rows.join(", "), 100.0 * worst)))
}

fn asymmetry_exactness() -> coldloop::Result<Verdict> {
    let mut worst: f64 = 0.0;
    for n in [0.0, 0.76, 1.06, 3.45, 10.0, 100.0] {
        let m = SidebandModel::from_occupancy(n, 5.0 * TAU * 2e3 / 4.0, TAU * 2.81e6, TAU * 1.045e6, TAU * 2e3, [1.02, 1.03])?;
        worst = worst.max((occupancy_from_powers(m.k_l, m.k_r)? - n).abs() / (1.0 + n));
        let s = synth_heterodyne_psd(n, &m, uniform_grid(0.5e6, 5.1e6, 50.0), 500.0, 50.0)?;
        let fit = fit_sidebands(&s, TAU * 2.8e6)?;
        worst = worst.max((phonon_from_sideband_fit(&fit)? - n).abs() / (1.0 + n));
    }
    let r = report(Command::Heterodyne, "lhe_het")?;
    let rows = r["difference_stability"].as_array().cloned().unwrap_or_default();
    let fitted = rows.iter().filter(|r| r["within_3_sigma"].is_boolean()).count();
    let ok = worst < 1e-6 && r["difference_stable"] == true && fitted >= 4;
    Ok((ok, format!("inverse error {worst:.1e}; difference within 3 sigma at {fitted} of {} gains", rows.len())))
}

fn band_truncation() -> coldloop::Result<Verdict> {
    let mut worst: f64 = 0.0;
    for half_band in [5e3, 15e3] {
        for width in [2e3, 6e3, 20e3, 40e3] {
            let m = SidebandModel::from_occupancy(1.0, 1e4, TAU * 2.81e6, TAU * 1.045e6, TAU * width, [1.0, 1.0])?;
            let s = synth_heterodyne_psd(1.0, &m, heterodyne_grid(&m, 10.0), 1.0, 10.0)?;
            let r = phonon_from_band_integration(&s, [1.045e6 - half_band, 1.045e6 + half_band], m.omega_het, [1.0, 1.0])?;
            let got = r.difference() / m.energy_difference();
            worst = worst.max(rel(got, captured_fraction(half_band, m.gamma_eff)).abs());
        }
    }
    let r = report(Command::Heterodyne, "lhe_het")?;
    let measured = r["band_difference_fraction"].as_f64().unwrap_or(f64::NAN);
    let predicted = r["band_fraction_predicted"].as_f64().unwrap_or(f64::NAN);
    worst = worst.max(rel(measured, predicted).abs());
    Ok((worst <= 0.02, format!("8 width/band pairs plus scattered reference, worst {:.2}%", 100.0 * worst)))
}

fn squashing() -> coldloop::Result<Verdict> {
    let sc = reference("lhe_het")?;
    let base = &sc.loop_config;
    let g = gain_for_width(&base.filter, &base.mode, TAU * 160e3)?;
    let cfg = base.with_gain(g);
    let model = ClosedLoopModel::new(&cfg)?;
    let shot = cfg.channel.shot_level;
    let freqs = uniform_grid(0.5e6, 1.6e6, 100.0);
    let in_loop: Vec<f64> = freqs.iter().map(|f| model.measured_shot_units(hz_to_rad(*f))).collect();
    let s_x: Vec<f64> = freqs.iter().map(|f| model.displacement_psd(hz_to_rad(*f)) / shot).collect();
    let dip = in_loop.iter().cloned().fold(f64::INFINITY, f64::min);
    // the displacement spectrum has no dip below its own off-resonant floor
    let floor = s_x[0].min(s_x[s_x.len() - 1]);
    let no_dip = s_x.iter().all(|v| *v > 0.0 && *v >= 0.999 * floor);
    let at_mode = model.displacement_psd(cfg.mode.omega_m) > model.measured_psd(cfg.mode.omega_m);
    let n_bar = model.phonon_number()?.n_bar;
    let spec = homodyne_spectrum(&cfg, 500, 0.1, 7)?;
    let fitted = infer_and_count(&fit_homodyne_spectrum(&spec, &cfg)?, None)?.n_bar;
    let ok = dip < 1.0 && no_dip && at_mode && rel(fitted, n_bar).abs() <= 0.10;
    Ok((ok, format!("in-loop minimum {dip:.3} shot; S_X without dip {no_dip}, above in-loop at the mode {at_mode}; fitted n {fitted:.2} vs {n_bar:.2}")))
}

/// Time-domain verdict: the record stays within the simulator's bound for
/// 3000 intrinsic decay times.
fn bounded_in_time(cfg: &LoopConfig, seed: u64) -> coldloop::Result<bool> {
    let mut sim = LoopSimulator::new_unchecked(cfg, None, seed)?;
    let steps = (3000.0 / cfg.mode.gamma_m / sim.dt()) as usize;
    match sim.run(steps, |_| {}) {
        Ok(()) => Ok(true),
        Err(Error::Diverged { .. }) => Ok(false),
        Err(e) => Err(e),
    }
}

fn filter_design() -> coldloop::Result<Verdict> {
    let mut notes = Vec::new();
    let mut ok = true;
    for (name, tau) in [("lhe_het", 640e-9), ("ln2_het", 680e-9)] {
        let sc = reference(name)?;
        let r = report(Command::Design, name)?;
        let deltas: Vec<f64> = r["design"]["protected"].as_array().map_or(vec![], |p| p.iter().filter_map(|m| m["damping_delta"].as_f64()).collect());
        let good = (sc.loop_config.filter.delay - tau).abs() < 1e-15
            && deltas.len() == sc.loop_config.higher_modes.len()
            && !deltas.is_empty()
            && deltas.iter().all(|d| *d >= 0.0)
            && r["stability_at_gain"]["stable"] == true;
        ok &= good;
        notes.push(format!("{name} {} protected deltas >= 0: {}", deltas.len(), good));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (mut stable, mut unstable, mut agree) = (0, 0, 0);
    for draw in 0..2000u64 {
        if stable == 20 && unstable == 5 {
            break;
        }
        let mut cfg = fast_config(&mut rng);
        let center = cfg.mode.omega_m * rng.random_range(0.5..2.0);
        let section = Biquad::resonator(center, rng.random_range(0.5..5.0));
        let gain = cfg.mode.gamma_m * 10f64.powf(rng.random_range(-1.0..2.0));
        cfg.filter = FeedbackFilter::new(vec![section], gain, rng.random_range(0.0..1e-6), 0.0)?;
        if rng.random_bool(0.5) {
            let m = MechanicalMode::from_q(2.3 * cfg.mode.omega_m, 1000.0, 1e-14)?;
            cfg.higher_modes.push(HigherMode { mode: m, weight: 0.3 });
        }
        let predicted = check_closed_loop_stability(&cfg).stable;
        if (predicted && stable == 20) || (!predicted && unstable == 5) {
            continue;
        }
        if predicted {
            stable += 1;
        } else {
            unstable += 1;
        }
        if bounded_in_time(&cfg, draw)? == predicted {
            agree += 1;
        }
    }
    ok &= stable == 20 && unstable == 5 && agree == 25;
    notes.push(format!("checker agrees with time domain on {agree}/{} ({stable} stable, {unstable} unstable)", stable + unstable));
    Ok((ok, notes.join("; ")))
}

fn characterization() -> coldloop::Result<Verdict> {
    let r = report(Command::Characterize, "lhe_het")?;
    let checks = r["checks"].as_array().cloned().unwrap_or_default();
    let worst = checks.iter().filter_map(|c| c["relative_error"].as_f64()).fold(0.0, |a: f64, e| a.max(e.abs()));
    let names: Vec<&str> = checks.iter().filter_map(|c| c["name"].as_str()).collect();
    Ok((r["all_within_tolerance"] == true && checks.len() == 4, format!("{} recovered, worst {:.2}%", names.join(", "), 100.0 * worst)))
}

fn flat(level: f64, n_avg: f64, seed: u64) -> coldloop::Result<SpectrumTrace> {
    let freqs = uniform_grid(1.0e6, 1.1e6, 0.25);
    let n = freqs.len();
    welch_scatter(&SpectrumTrace::new(freqs, vec![level; n], n_avg, 0.25)?, seed)
}

fn supplement() -> coldloop::Result<Verdict> {
    let n_avg = 1.0e5;
    let dark = flat(0.2, n_avg, 1)?;
    let bal = flat(1.2, n_avg, 2)?;
    let full = flat(1.2 + 2e-3, n_avg, 3)?;
    let c_amp = estimate_amplitude_noise(&full, &bal, &dark, None)?;

    let flux = LaserNoise::photon_flux(1.3e-6, 1550e-9);
    let theta = 430.0 / (2.0 * flux);
    let a = LaserNoise::new(0.0, theta, flux)?;
    let b = LaserNoise::new(0.0, theta, 3.0 * flux)?;
    let c = LaserNoise::new(0.0, 2.0 * theta, flux)?;
    let linear = a.c_y == 2.0 * flux * theta && b.c_y == 3.0 * a.c_y && c.c_y == 2.0 * a.c_y;
    let cavity = OpticalCavity::new(TAU * 8.8e9, TAU * 6.9e9, 0.0)?;
    let corr = phase_noise_correction(&a, &cavity, TAU * 2.0e9, TAU * 1.045e6);
    let ok = rel(c_amp, 2e-3).abs() <= 0.05 && linear && rel(corr, 0.05).abs() <= 0.20;
    Ok((ok, format!("amplitude {:.4e} ({:+.2}%); C_Y linear {linear}; correction {corr:.4} at C_Y {:.0}", c_amp, 100.0 * rel(c_amp, 2e-3), a.c_y)))
}

fn main() -> ExitCode {
    let criteria: [(&str, Criterion); 10] = [
        ("budget reproduction", budget),
        ("simulated vs analytic spectrum", oracle_equivalence),
        ("homodyne sweep roundtrip", estimator_roundtrip),
        ("homodyne vs heterodyne", cross_method),
        ("sideband asymmetry exactness", asymmetry_exactness),
        ("band truncation law", band_truncation),
        ("in-loop squashing", squashing),
        ("filter design and stability", filter_design),
        ("characterization recovery", characterization),
        ("laser noise checks", supplement),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let (ok, detail) = f().unwrap_or_else(|e| (false, format!("error: {e}")));
        failed += usize::from(!ok);
        println!("[{}] {:2} {name}: {detail} ({:.1} s)", if ok { "PASS" } else { "FAIL" }, i + 1, t.elapsed().as_secs_f64());
    }
    println!("acceptance: {} of {} criteria pass", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
