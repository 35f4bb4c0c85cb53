use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lsq::{levenberg_marquardt, LmOptions};
use crate::model::SpectrumTrace;
use crate::units::{hz_to_rad, rad_to_hz};

use super::SidebandModel;

pub const HET_PARAMS: [&str; 7] = ["k_l", "k_r", "n_l", "n_r", "omega_eff", "gamma_eff", "omega_het"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeterodyneFit {
    #[serde(flatten)]
    pub model: SidebandModel,
    /// 1σ errors in the order of [`HET_PARAMS`].
    pub sigma: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    pub residual_rms: f64,
    pub reduced_chi2: f64,
    pub iterations: usize,
    pub bins: usize,
}

impl HeterodyneFit {
    /// 1σ of the integrated sideband power difference.
    pub fn energy_difference_sigma(&self) -> f64 {
        let m = &self.model;
        let g = 4.0 * m.gamma_eff;
        let grad = [1.0 / g, -1.0 / g, 0.0, 0.0, 0.0, -m.energy_difference() / m.gamma_eff, 0.0];
        let mut var = 0.0;
        for a in 0..7 {
            for b in 0..7 {
                var += grad[a] * self.covariance[a][b] * grad[b];
            }
        }
        var.max(0.0).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SidebandFitOptions {
    /// Fit window half-width around each sideband, in linewidths.
    pub band_linewidths: f64,
    /// Sidebands are unresolvable once the linewidth exceeds this
    /// fraction of their distance from the LO shift.
    pub overlap_ratio: f64,
}

impl Default for SidebandFitOptions {
    fn default() -> Self {
        SidebandFitOptions { band_linewidths: 40.0, overlap_ratio: 0.5 }
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    v[v.len() / 2]
}

struct Start {
    model: SidebandModel,
    anti_stokes_visible: bool,
}

fn initial_guess(spec: &SpectrumTrace, f_het: f64, opts: &SidebandFitOptions) -> Result<Start> {
    let sm = spec.smoothed(2);
    let lower: Vec<usize> = (0..spec.len()).filter(|&i| spec.freqs[i] > 0.0 && spec.freqs[i] < f_het).collect();
    let upper: Vec<usize> = (0..spec.len()).filter(|&i| spec.freqs[i] > f_het && spec.freqs[i] < 2.0 * f_het).collect();
    if lower.len() < 20 || upper.len() < 20 {
        return Err(Error::SidebandNotFound("spectrum does not cover both sides of the LO shift".into()));
    }
    let ip = *lower.iter().max_by(|a, b| sm.psd[**a].total_cmp(&sm.psd[**b])).expect("non-empty");
    let n_l = median(lower.iter().map(|&i| sm.psd[i]).collect());
    let n_r = median(upper.iter().map(|&i| sm.psd[i]).collect());
    let height = sm.psd[ip] - n_l;
    if !(n_l > 0.0) || !(height >= n_l) {
        return Err(Error::SidebandNotFound(format!(
            "Stokes peak {:.3} is less than 3 dB above its floor {n_l:.3}",
            sm.psd[ip]
        )));
    }
    let half = n_l + height / 2.0;
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
    let f_peak = spec.freqs[ip];
    let lo = cross(&mut (0..ip).rev());
    let hi = cross(&mut (ip + 1..spec.len()));
    let width_hz = match (lo, hi) {
        (Some(l), Some(h)) => (h - l).max(spec.bin_width()),
        (Some(l), None) => 2.0 * (f_peak - l),
        (None, Some(h)) => 2.0 * (h - f_peak),
        _ => return Err(Error::SidebandNotFound("Stokes peak has no half-maximum crossing".into())),
    };
    let sep_hz = f_het - f_peak;
    check_overlap(width_hz, sep_hz, opts)?;
    let gamma = hz_to_rad(width_hz);
    // the anti-Stokes line, when visible, pins the LO shift independently
    let mirror = f_het + sep_hz;
    let near: Vec<usize> = upper.iter().copied().filter(|&i| (spec.freqs[i] - mirror).abs() <= 0.2 * sep_hz).collect();
    let ir = *near.iter().max_by(|a, b| sm.psd[**a].total_cmp(&sm.psd[**b])).unwrap_or(&upper[0]);
    let noise = n_r * 5.0 / spec.n_avg.sqrt();
    let anti_stokes_visible = !near.is_empty() && sm.psd[ir] - n_r > (0.05 * height).max(noise);
    let (f_lo, omega_eff) = if anti_stokes_visible {
        let f_r = spec.freqs[ir];
        (0.5 * (f_peak + f_r), hz_to_rad(0.5 * (f_r - f_peak)))
    } else {
        (f_het, hz_to_rad(sep_hz))
    };
    let k_r = if anti_stokes_visible { (sm.psd[ir] - n_r) * gamma * gamma } else { 0.0 };
    Ok(Start {
        model: SidebandModel { omega_het: hz_to_rad(f_lo), k_l: height * gamma * gamma, k_r, n_l, n_r, omega_eff, gamma_eff: gamma },
        anti_stokes_visible,
    })
}

fn check_overlap(width_hz: f64, sep_hz: f64, opts: &SidebandFitOptions) -> Result<()> {
    if !(sep_hz > 0.0) || width_hz > opts.overlap_ratio * sep_hz {
        return Err(Error::SidebandsOverlap { gamma_hz: width_hz, separation_hz: sep_hz });
    }
    Ok(())
}

pub fn fit_sidebands(spec: &SpectrumTrace, omega_het_guess: f64) -> Result<HeterodyneFit> {
    fit_sidebands_with(spec, omega_het_guess, &SidebandFitOptions::default())
}

/// Weighted least-squares fit of the two-sideband model. Residuals are
/// `(d − m)/m · √n_avg` on windows around each sideband.
pub fn fit_sidebands_with(spec: &SpectrumTrace, omega_het_guess: f64, opts: &SidebandFitOptions) -> Result<HeterodyneFit> {
    spec.validate()?;
    let f_het = rad_to_hz(omega_het_guess);
    let init = initial_guess(spec, f_het, opts)?;
    let start = init.model;
    let sep = rad_to_hz(start.omega_eff);
    let reach = (opts.band_linewidths * rad_to_hz(start.gamma_eff)).min(0.9 * sep);
    let bins: Vec<usize> = (0..spec.len())
        .filter(|&i| {
            let d = (spec.freqs[i] - f_het).abs();
            (d - sep).abs() <= reach
        })
        .collect();
    if bins.len() < 20 {
        return Err(Error::TooShort { needed: 20, have: bins.len() });
    }
    let omegas: Vec<f64> = bins.iter().map(|&i| hz_to_rad(spec.freqs[i])).collect();
    let data: Vec<f64> = bins.iter().map(|&i| spec.psd[i]).collect();
    let weight = spec.n_avg.sqrt();

    // O(1) parameters: magnitudes in units of the Stokes start, floors
    // as is, frequencies in start linewidths, log width
    let k0 = start.k_l;
    let g0 = start.gamma_eff;
    let unpack = |q: &[f64]| SidebandModel {
        k_l: q[0] * k0,
        k_r: q[1] * k0,
        n_l: q[2],
        n_r: q[3],
        omega_eff: start.omega_eff + q[4] * g0,
        gamma_eff: g0 * q[5].exp(),
        omega_het: start.omega_het + q[6] * g0,
    };
    // without an anti-Stokes line only the Stokes position is observable,
    // so the LO shift stays at its guess
    let free: Vec<usize> = if init.anti_stokes_visible { (0..7).collect() } else { (0..6).collect() };
    let full0 = [1.0, start.k_r / k0, start.n_l, start.n_r, 0.0, 0.0, 0.0];
    let expand = |q: &[f64]| {
        let mut p = full0;
        for (k, &j) in free.iter().enumerate() {
            p[j] = q[k];
        }
        p
    };
    let problem = (free.len(), omegas.len(), |q: &[f64], out: &mut [f64]| {
        let m = unpack(&expand(q));
        for (i, &w) in omegas.iter().enumerate() {
            let v = m.psd(w);
            out[i] = (data[i] - v) / v * weight;
        }
    });
    let shift = 0.5 * sep / rad_to_hz(g0);
    let mut lm = LmOptions::new(free.len())
        .bound(0, 0.0, f64::INFINITY)
        .bound(1, 0.0, f64::INFINITY)
        .bound(2, 0.0, f64::INFINITY)
        .bound(3, 0.0, f64::INFINITY)
        .bound(4, -shift, shift);
    if free.len() == 7 {
        lm = lm.bound(6, -shift, shift);
    }
    let q0: Vec<f64> = free.iter().map(|&j| full0[j]).collect();
    let rep = levenberg_marquardt(&problem, &q0, &lm)?;
    for &k in &rep.at_bound {
        // a vanishing anti-Stokes line is the ground state, not a failure
        if k != 1 {
            return Err(Error::AtBound { name: HET_PARAMS[k].to_string(), value: rep.params[k] });
        }
    }
    let params = expand(&rep.params);
    let model = unpack(&params);
    check_overlap(rad_to_hz(model.gamma_eff), rad_to_hz(model.omega_eff), opts)?;

    let correlation = (spec.rbw / spec.bin_width()).max(1.0);
    let s2 = rep.reduced_chi2() * correlation;
    let diag = [k0, k0, 1.0, 1.0, g0, model.gamma_eff, g0];
    let mut covariance = vec![vec![0.0; 7]; 7];
    for (a, &ja) in free.iter().enumerate() {
        for (b, &jb) in free.iter().enumerate() {
            covariance[ja][jb] = rep.covariance[(a, b)] * s2 * diag[ja] * diag[jb];
        }
    }
    let sigma = (0..7).map(|j| covariance[j][j].max(0.0).sqrt()).collect();
    let rms = (omegas.iter().zip(&data).map(|(w, d)| (d / model.psd(*w) - 1.0).powi(2)).sum::<f64>() / omegas.len() as f64).sqrt();
    Ok(HeterodyneFit {
        model,
        sigma,
        covariance,
        residual_rms: rms,
        reduced_chi2: rep.reduced_chi2(),
        iterations: rep.iterations,
        bins: omegas.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::super::tests::{het_grid, helium_sidebands};
    use super::super::{phonon_from_sideband_fit, synth_heterodyne_psd};
    use super::*;
    use crate::sim::welch_scatter;
    use std::f64::consts::TAU;

    #[test]
    fn noiseless_inverse_is_exact() {
        for n in [0.0, 0.76, 1.06, 3.45, 10.0] {
            let m = helium_sidebands(n, 2e3);
            let s = synth_heterodyne_psd(n, &m, het_grid(50.0), 500.0, 50.0).unwrap();
            let fit = fit_sidebands(&s, TAU * 2.8e6).unwrap();
            let got = phonon_from_sideband_fit(&fit).unwrap();
            assert!((got - n).abs() < 1e-6 * (1.0 + n), "{n} -> {got} {:?} {:?}", fit.model, m);
            assert!((fit.model.k_l / m.k_l - 1.0).abs() < 1e-3);
            if n > 0.0 {
                assert!((fit.model.omega_het / m.omega_het - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn scattered_spectrum_recovers_occupancy() {
        let m = helium_sidebands(3.45, 3e3);
        let mean = synth_heterodyne_psd(3.45, &m, het_grid(100.0), 500.0, 150.0).unwrap();
        let s = welch_scatter(&mean, 3).unwrap();
        let fit = fit_sidebands(&s, TAU * 2.81e6).unwrap();
        let got = phonon_from_sideband_fit(&fit).unwrap();
        assert!((got / 3.45 - 1.0).abs() < 0.05, "{got}");
        let d = fit.model.energy_difference();
        assert!((d / m.energy_difference() - 1.0).abs() < 3.0 * fit.energy_difference_sigma() / d);
    }

    #[test]
    fn overlap_threshold() {
        // sideband 1.045 MHz from the LO: resolvable up to 522 kHz width
        for (w, ok) in [(100e3, true), (400e3, true), (700e3, false)] {
            let m = helium_sidebands(1.0, w);
            let s = synth_heterodyne_psd(1.0, &m, het_grid(500.0), 500.0, 500.0).unwrap();
            let r = fit_sidebands(&s, TAU * 2.81e6);
            assert_eq!(matches!(r, Err(Error::SidebandsOverlap { .. })), !ok, "{w}: {r:?}");
        }
    }

    #[test]
    fn missing_sideband_is_reported() {
        let s = SpectrumTrace::new(het_grid(100.0), vec![1.0; het_grid(100.0).len()], 500.0, 100.0).unwrap();
        assert!(matches!(fit_sidebands(&s, TAU * 2.81e6), Err(Error::SidebandNotFound(_))));
    }
}
