use std::f64::consts::TAU;

use proptest::prelude::*;

use coldloop::control::{check_closed_loop_stability, design_filter, mode_damping_delta, DesignSpec};
use coldloop::filter::{filter_response, Biquad, FeedbackFilter};
use coldloop::heterodyne::{band_fraction, captured_fraction, occupancy_from_powers, SidebandModel};
use coldloop::model::{
    cavity_reflection, closed_loop_measured_psd, force_noise_psd, inferred_displacement_psd, integration_grid,
    mech_susceptibility, phonon_from_psd, rate_budget, CouplingBudget, HigherMode, LoopConfig, LoopParams,
    MeasurementChannel, MechanicalMode, NoiseInputs, OpticalCavity,
};
use coldloop::units::hz_to_rad;

fn loop_config(q: f64, n_th: f64, gain: f64, delay: f64, epsilon: f64, center: f64) -> LoopConfig {
    let mode = MechanicalMode::from_q(TAU * 1.0e6, q, 1e-14).unwrap();
    LoopConfig {
        mode,
        higher_modes: vec![HigherMode { mode: MechanicalMode::from_q(TAU * 2.3e6, q, 1e-14).unwrap(), weight: 0.3 }],
        cavity: OpticalCavity::new(TAU * 8.8e9, TAU * 6.9e9, 0.0).unwrap(),
        coupling: CouplingBudget::new(TAU * 224e3, 350.0, 0.5).unwrap(),
        noise: NoiseInputs::new(n_th, 0.0, mode.omega_m).unwrap(),
        channel: MeasurementChannel { s_imp: 1e-5, shot_level: 1e-5 },
        filter: FeedbackFilter::new(vec![Biquad::resonator(TAU * center, 2.0)], gain, delay, epsilon).unwrap(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn susceptibility_is_conjugate_symmetric(f_m in 1e3..1e7f64, q in 1.0..1e8f64, f in 0.0..2e7f64) {
        let mode = MechanicalMode::from_q(TAU * f_m, q, 0.0).unwrap();
        let a = mech_susceptibility(&mode, TAU * f);
        let b = mech_susceptibility(&mode, -TAU * f);
        prop_assert!((a - b.conj()).norm() <= 1e-12 * a.norm());
    }

    #[test]
    fn spectra_are_nonnegative(
        q in 1e3..1e6f64,
        gain in 0.0..1e5f64,
        delay in 0.0..1e-6f64,
        epsilon in 0.0..0.1f64,
        center in 0.5e6..2e6f64,
        f in 1.0..5e6f64,
    ) {
        let cfg = loop_config(q, 1e4, gain, delay, epsilon, center);
        let p = LoopParams::from_config(&cfg);
        prop_assert!(p.measured_psd(TAU * f) >= 0.0);
        prop_assert!(p.displacement_psd(TAU * f) >= 0.0);
        prop_assert!(inferred_displacement_psd(&p, TAU * f) >= 0.0);
    }

    #[test]
    fn open_loop_spectrum_is_thermal_plus_imprecision(q in 1e2..1e8f64, n_th in 0.0..1e6f64, f in 1.0..3e6f64) {
        let mut cfg = loop_config(q, n_th, 0.0, 0.0, 0.0, 1e6);
        cfg.higher_modes.clear();
        let w = hz_to_rad(f);
        let expect = mech_susceptibility(&cfg.mode, w).norm_sqr() * force_noise_psd(&cfg.noise, &cfg.mode) + cfg.channel.s_imp;
        let got = closed_loop_measured_psd(&cfg, w).unwrap();
        prop_assert!((got - expect).abs() <= 1e-12 * expect, "{got} vs {expect}");
        let p = LoopParams::from_config(&cfg);
        prop_assert!((inferred_displacement_psd(&p, w) + cfg.channel.s_imp - got).abs() <= 1e-12 * got);
    }

    #[test]
    fn open_loop_integral_recovers_bath(q in 1e3..1e8f64, n in 1.0..1e6f64) {
        let mode = MechanicalMode::from_q(TAU * 1.0e6, q, 0.0).unwrap();
        let noise = NoiseInputs::new(n, 0.0, mode.omega_m).unwrap();
        let s_f = force_noise_psd(&noise, &mode);
        let grid = integration_grid(1.0e6, &[mode.gamma_m]);
        let psd: Vec<f64> = grid.iter().map(|f| mech_susceptibility(&mode, hz_to_rad(*f)).norm_sqr() * s_f).collect();
        let est = phonon_from_psd(&grid, &psd, mode.omega_m).unwrap();
        prop_assert!((est.n_bar / n - 1.0).abs() < 5e-3, "{} vs {n}", est.n_bar);
    }

    #[test]
    fn decoherence_ratio_falls_with_efficiency_and_photons(
        eta in 0.05..0.95f64,
        d_eta in 0.01..0.05f64,
        n_c in 1.0..1e6f64,
        n_th in 1.0..1e6f64,
    ) {
        let cfg = |eta: f64, n_c: f64| {
            let mut c = loop_config(5.1e7, n_th, 0.0, 0.0, 0.0, 1e6);
            c.coupling = CouplingBudget::new(TAU * 224e3, n_c, eta).unwrap();
            rate_budget(&c).unwrap().ratio
        };
        let r = cfg(eta, n_c);
        prop_assert!(cfg(eta + d_eta, n_c) < r);
        prop_assert!(cfg(eta, 2.0 * n_c) < r);
        prop_assert!(r > 1.0 / eta);
    }

    #[test]
    fn reflection_is_bounded(kappa in 1e6..1e11f64, frac in 0.0..1.0f64, detuning in -1e12..1e12f64) {
        let cav = OpticalCavity::new(kappa, frac * kappa, detuning).unwrap();
        let r = cavity_reflection(&cav);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&r));
        let far = OpticalCavity::new(kappa, frac * kappa, 1e6 * kappa).unwrap();
        prop_assert!((cavity_reflection(&far) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn delay_changes_only_the_phase(delay in 0.0..1e-5f64, f in 1.0..1e7f64, center in 1e5..1e7f64, q in 0.3..10.0f64) {
        let sections = vec![Biquad::resonator(TAU * center, q), Biquad::allpass(TAU * 2.0 * center, q)];
        let a = FeedbackFilter::new(sections.clone(), 1.0, 0.0, 0.0).unwrap();
        let b = FeedbackFilter::new(sections, 1.0, delay, 0.0).unwrap();
        let (ha, hb) = (filter_response(&a, TAU * f), filter_response(&b, TAU * f));
        prop_assert!((ha.norm() - hb.norm()).abs() <= 1e-12 * ha.norm().max(1e-300));
    }

    #[test]
    fn sideband_ratio_law_inverts(n in 0.0..1e3f64, k in 1e-3..1e6f64, extra in 1e-6..10.0f64) {
        let got = occupancy_from_powers(k * (n + 1.0), k * n).unwrap();
        prop_assert!((got - n).abs() <= 1e-9 * (1.0 + n));
        // common additive noise reduces the asymmetry and raises n̄
        let raised = occupancy_from_powers(k * (n + 1.0 + extra), k * (n + extra)).unwrap();
        prop_assert!(raised > got);
    }

    #[test]
    fn sideband_spectrum_is_nonnegative(n in 0.0..100.0f64, width in 1e2..1e5f64, f in 0.0..6e6f64) {
        let m = SidebandModel::from_occupancy(n, 1e4, TAU * 2.81e6, TAU * 1.045e6, TAU * width, [1.0, 1.0]).unwrap();
        prop_assert!(m.psd(TAU * f) >= 1.0);
        prop_assert!((m.energy_difference() - 1e4).abs() <= 1e-9 * 1e4);
    }

    #[test]
    fn band_fraction_is_a_fraction(half in 1.0..1e6f64, width in 1.0..1e6f64, shift in -1e5..1e5f64) {
        let g = TAU * width;
        let sym = band_fraction([1e7 - half, 1e7 + half], 1e7, g);
        prop_assert!((sym - captured_fraction(half, g)).abs() < 1e-12);
        let off = band_fraction([1e7 - half + shift, 1e7 + half + shift], 1e7, g);
        prop_assert!((0.0..=1.0).contains(&off) && off <= sym + 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn designs_never_heat_protected_modes(delay in 0.0..1.2e-6f64, f2 in 1.5e6..3e6f64, f3 in 3.1e6..6e6f64) {
        let target = MechanicalMode::from_q(TAU * 1.045e6, 5.1e7, 1e-14).unwrap();
        let protected: Vec<HigherMode> = [(f2, 0.3), (f3, 0.2)]
            .iter()
            .map(|&(f, w)| HigherMode { mode: MechanicalMode::from_q(TAU * f, 2e7, 1e-14).unwrap(), weight: w })
            .collect();
        let spec = DesignSpec::new(target, protected.clone(), delay, [1e2, 1e6]);
        let d = design_filter(&spec).unwrap();
        prop_assert!(d.filter.sections.len() <= 4);
        for g in [1e2, 1e4, 1e6] {
            prop_assert!(mode_damping_delta(&d.filter, g, &target, 1.0) > 0.0);
            for p in &protected {
                prop_assert!(mode_damping_delta(&d.filter, g, &p.mode, p.weight) >= 0.0);
            }
        }
        let cfg = LoopConfig {
            mode: target,
            higher_modes: protected,
            cavity: OpticalCavity::new(TAU * 8.8e9, TAU * 6.9e9, 0.0).unwrap(),
            coupling: CouplingBudget::new(TAU * 224e3, 350.0, 0.5).unwrap(),
            noise: NoiseInputs::new(3.6e5, 0.0, target.omega_m).unwrap(),
            channel: MeasurementChannel { s_imp: 1e-5, shot_level: 1e-5 },
            filter: d.filter.with_gain(1e3),
        };
        prop_assert!(check_closed_loop_stability(&cfg).stable);
    }
}
