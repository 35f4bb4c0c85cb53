use std::f64::consts::TAU;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::trace::TimeTrace;
use crate::error::{check, Error, Result};
use crate::model::SpectrumTrace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    Hann,
    Rect,
}

impl Window {
    fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            Window::Rect => vec![1.0; n],
            Window::Hann => (0..n).map(|i| 0.5 - 0.5 * (TAU * i as f64 / n as f64).cos()).collect(),
        }
    }
}

/// Averaged-periodogram estimator fed one sample at a time, so long
/// simulations never hold their full record.
pub struct WelchEstimator {
    fs: f64,
    seg_len: usize,
    hop: usize,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    buf: Vec<Complex64>,
    scratch: Vec<Complex64>,
    pending: Vec<f64>,
    acc: Vec<f64>,
    segments: usize,
}

impl WelchEstimator {
    /// `overlap` is the fraction of a segment shared with the next, in `[0, 1)`.
    pub fn new(fs: f64, seg_len: usize, overlap: f64, window: Window) -> Result<Self> {
        check(fs > 0.0, "fs", "must be > 0")?;
        check(seg_len >= 4, "seg_len", "must be >= 4")?;
        check((0.0..1.0).contains(&overlap), "overlap", "must lie in [0, 1)")?;
        let hop = ((seg_len as f64 * (1.0 - overlap)).round() as usize).clamp(1, seg_len);
        let fft = FftPlanner::new().plan_fft_forward(seg_len);
        let scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
        Ok(WelchEstimator {
            fs,
            seg_len,
            hop,
            window: window.coefficients(seg_len),
            fft,
            buf: vec![Complex64::default(); seg_len],
            scratch,
            pending: Vec::with_capacity(2 * seg_len),
            acc: vec![0.0; seg_len / 2 + 1],
            segments: 0,
        })
    }

    pub fn segments(&self) -> usize {
        self.segments
    }

    /// Samples needed for `segments` segments.
    pub fn samples_for(&self, segments: usize) -> usize {
        self.seg_len + self.hop * segments.saturating_sub(1)
    }

    #[inline]
    pub fn push(&mut self, x: f64) {
        self.pending.push(x);
        if self.pending.len() == self.seg_len {
            self.process();
            self.pending.drain(..self.hop);
        }
    }

    pub fn extend(&mut self, xs: &[f64]) {
        for &x in xs {
            self.push(x);
        }
    }

    fn process(&mut self) {
        for ((b, x), w) in self.buf.iter_mut().zip(&self.pending).zip(&self.window) {
            *b = Complex64::new(x * w, 0.0);
        }
        self.fft.process_with_scratch(&mut self.buf, &mut self.scratch);
        for (a, b) in self.acc.iter_mut().zip(&self.buf) {
            *a += b.norm_sqr();
        }
        self.segments += 1;
    }

    /// One-sided PSD per Hz with `n_avg` = segments and the window's
    /// equivalent noise bandwidth as RBW.
    pub fn finish(&self) -> Result<SpectrumTrace> {
        if self.segments == 0 {
            return Err(Error::TooShort { needed: self.seg_len, have: self.pending.len() });
        }
        let n = self.seg_len;
        let s1: f64 = self.window.iter().sum();
        let s2: f64 = self.window.iter().map(|w| w * w).sum();
        let norm = 1.0 / (self.fs * s2 * self.segments as f64);
        let last = n / 2;
        let psd = self
            .acc
            .iter()
            .enumerate()
            .map(|(k, a)| {
                let one_sided = if k == 0 || (n.is_multiple_of(2) && k == last) { 1.0 } else { 2.0 };
                one_sided * a * norm
            })
            .collect();
        let freqs = (0..=last).map(|k| k as f64 * self.fs / n as f64).collect();
        let rbw = self.fs * s2 / (s1 * s1);
        SpectrumTrace::new(freqs, psd, self.segments as f64, rbw)
    }
}

/// Welch PSD of a whole trace.
pub fn welch_psd(trace: &TimeTrace, seg_len: usize, overlap: f64, window: Window) -> Result<SpectrumTrace> {
    if seg_len > trace.len() {
        return Err(Error::TooShort { needed: seg_len, have: trace.len() });
    }
    let mut est = WelchEstimator::new(trace.fs, seg_len, overlap, window)?;
    est.extend(&trace.samples);
    est.finish()
}

/// Pointwise ratio to a shot-noise reference on the same grid.
pub fn shot_normalize(signal: &SpectrumTrace, shot_ref: &SpectrumTrace) -> Result<SpectrumTrace> {
    if !signal.same_grid(shot_ref) {
        return Err(Error::GridMismatch);
    }
    let mut psd = Vec::with_capacity(signal.len());
    for ((f, s), r) in signal.freqs.iter().zip(&signal.psd).zip(&shot_ref.psd) {
        if !(*r > 0.0) {
            return Err(Error::ZeroReference { freq_hz: *f });
        }
        psd.push(s / r);
    }
    SpectrumTrace::new(signal.freqs.clone(), psd, signal.n_avg, signal.rbw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::trace::TraceLabel;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn white(n: usize, fs: f64, seed: u64) -> TimeTrace {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        TimeTrace::new(fs, (0..n).map(|_| rng.sample(StandardNormal)).collect(), TraceLabel::Measurement).unwrap()
    }

    #[test]
    fn white_noise_level_is_two_over_fs() {
        let fs = 1000.0;
        let t = white(256 * 401, fs, 7);
        let s = welch_psd(&t, 512, 0.5, Window::Hann).unwrap();
        assert!(s.n_avg >= 200.0);
        let inner = &s.psd[1..s.len() - 1];
        let mean = inner.iter().sum::<f64>() / inner.len() as f64;
        assert!((mean * fs / 2.0 - 1.0).abs() < 0.03, "{mean}");
    }

    #[test]
    fn parseval_rect_window() {
        let fs = 50.0;
        let t = white(4096 * 8, fs, 3);
        let s = welch_psd(&t, 4096, 0.0, Window::Rect).unwrap();
        let power: f64 = s.psd.iter().sum::<f64>() * s.bin_width();
        assert!((power / t.variance() - 1.0).abs() < 0.01);
    }

    #[test]
    fn sine_power_is_half_amplitude_squared() {
        let fs = 1024.0;
        let amp = 3.0;
        let f0 = 100.3;
        let samples: Vec<f64> = (0..1 << 16).map(|i| amp * (TAU * f0 * i as f64 / fs).sin()).collect();
        let t = TimeTrace::new(fs, samples, TraceLabel::Measurement).unwrap();
        let s = welch_psd(&t, 2048, 0.5, Window::Hann).unwrap();
        let band = s.band(f0 - 5.0, f0 + 5.0);
        let p: f64 = band.psd.iter().sum::<f64>() * s.bin_width();
        assert!((p / (amp * amp / 2.0) - 1.0).abs() < 0.02, "{p}");
        assert!((s.rbw - 1.5 * fs / 2048.0).abs() < 1e-9);
    }

    #[test]
    fn zero_signal_gives_zero_psd() {
        let t = TimeTrace::new(10.0, vec![0.0; 100], TraceLabel::Control).unwrap();
        assert!(welch_psd(&t, 32, 0.5, Window::Hann).unwrap().psd.iter().all(|p| *p == 0.0));
    }

    #[test]
    fn too_short_is_an_error() {
        let t = TimeTrace::new(10.0, vec![0.0; 10], TraceLabel::Control).unwrap();
        assert!(matches!(welch_psd(&t, 32, 0.5, Window::Hann), Err(Error::TooShort { .. })));
    }

    #[test]
    fn normalization_cancels_common_response() {
        let t = white(1 << 14, 100.0, 11);
        let s = welch_psd(&t, 256, 0.5, Window::Hann).unwrap();
        let ones = shot_normalize(&s, &s).unwrap();
        assert!(ones.psd.iter().all(|v| (*v - 1.0).abs() < 1e-15));
        let shaped: Vec<f64> = s.freqs.iter().map(|f| 1.0 + f * f).collect();
        let mut a = s.clone();
        let mut b = welch_psd(&white(1 << 14, 100.0, 12), 256, 0.5, Window::Hann).unwrap();
        let plain = shot_normalize(&a, &b).unwrap();
        for (i, k) in shaped.iter().enumerate() {
            a.psd[i] *= k;
            b.psd[i] *= k;
        }
        let shaped_ratio = shot_normalize(&a, &b).unwrap();
        for (x, y) in plain.psd.iter().zip(&shaped_ratio.psd) {
            assert!((x - y).abs() <= 1e-12 * x.abs());
        }
    }

    #[test]
    fn mismatched_or_zero_reference() {
        let s = SpectrumTrace::new(vec![0.0, 1.0], vec![1.0, 1.0], 1.0, 1.0).unwrap();
        let z = SpectrumTrace::new(vec![0.0, 1.0], vec![1.0, 0.0], 1.0, 1.0).unwrap();
        let g = SpectrumTrace::new(vec![0.0, 2.0], vec![1.0, 1.0], 1.0, 1.0).unwrap();
        assert!(matches!(shot_normalize(&s, &z), Err(Error::ZeroReference { .. })));
        assert!(matches!(shot_normalize(&s, &g), Err(Error::GridMismatch)));
    }
}
