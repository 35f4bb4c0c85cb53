use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::stability::check_closed_loop_stability;
use crate::error::{check, Error, Result};
use crate::model::{LoopConfig, LoopParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainPoint {
    pub gain: f64,
    /// `None` where the loop is unstable or the integral failed.
    pub n_bar: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainOptimum {
    pub g_opt: f64,
    pub n_min: f64,
    pub curve: Vec<GainPoint>,
    /// The best scanned gain sits at an end of the scanned range (or next
    /// to an unstable point), so no interior minimum was bracketed.
    pub boundary: bool,
}

fn occupation(cfg: &LoopConfig, gain: f64) -> Option<f64> {
    let c = cfg.with_gain(gain);
    if !check_closed_loop_stability(&c).stable {
        return None;
    }
    LoopParams::from_config(&c).phonon_number().ok().map(|p| p.n_bar)
}

/// Scans `n̄(g)` on `scan_points` log-spaced gains over `g_range`, then
/// refines the bracketed minimum by golden-section search in `log g`.
pub fn optimize_gain(cfg: &LoopConfig, g_range: [f64; 2], scan_points: usize) -> Result<GainOptimum> {
    cfg.validate()?;
    let [lo, hi] = g_range;
    check(lo > 0.0 && lo < hi, "gain_range", "need 0 < g_min < g_max")?;
    check(scan_points >= 3, "scan_points", "need at least 3")?;
    let (llo, lhi) = (lo.ln(), hi.ln());
    let gains: Vec<f64> =
        (0..scan_points).map(|i| (llo + (lhi - llo) * i as f64 / (scan_points - 1) as f64).exp()).collect();
    let curve: Vec<GainPoint> = gains.par_iter().map(|&g| GainPoint { gain: g, n_bar: occupation(cfg, g) }).collect();

    let (ibest, nbest) = curve
        .iter()
        .enumerate()
        .filter_map(|(i, p)| p.n_bar.map(|n| (i, n)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .ok_or_else(|| Error::Unstable("no stable gain in the scanned range".into()))?;
    let interior = ibest > 0
        && ibest + 1 < curve.len()
        && curve[ibest - 1].n_bar.is_some()
        && curve[ibest + 1].n_bar.is_some();
    if !interior {
        return Ok(GainOptimum { g_opt: curve[ibest].gain, n_min: nbest, curve, boundary: true });
    }

    let f = |lg: f64| occupation(cfg, lg.exp()).unwrap_or(f64::INFINITY);
    let invphi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (curve[ibest - 1].gain.ln(), curve[ibest + 1].gain.ln());
    let mut c = b - invphi * (b - a);
    let mut d = a + invphi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > 1e-5 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - invphi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + invphi * (b - a);
            fd = f(d);
        }
    }
    let (lg, n) = if fc < fd { (c, fc) } else { (d, fd) };
    let (g_opt, n_min) = if n < nbest { (lg.exp(), n) } else { (curve[ibest].gain, nbest) };
    Ok(GainOptimum { g_opt, n_min, curve, boundary: false })
}
