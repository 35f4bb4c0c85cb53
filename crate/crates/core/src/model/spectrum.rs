use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "freq_hz,psd_shot_units";

/// One-sided PSD on an increasing frequency grid (Hz).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumTrace {
    pub freqs: Vec<f64>,
    pub psd: Vec<f64>,
    /// Number of averaged segments (statistical weight of each bin).
    pub n_avg: f64,
    /// Resolution bandwidth, Hz.
    pub rbw: f64,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    n_avg: f64,
    rbw_hz: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    manifest: Option<String>,
}

impl SpectrumTrace {
    pub fn new(freqs: Vec<f64>, psd: Vec<f64>, n_avg: f64, rbw: f64) -> Result<Self> {
        let t = SpectrumTrace { freqs, psd, n_avg, rbw };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: &str| Err(Error::InvalidParameter { name: "spectrum", reason: reason.into() });
        if self.freqs.len() != self.psd.len() {
            return bad("freqs and psd lengths differ");
        }
        if self.freqs.windows(2).any(|w| !(w[1] > w[0])) {
            return bad("frequencies must be strictly increasing");
        }
        if self.psd.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return bad("psd entries must be finite and >= 0");
        }
        if !(self.n_avg > 0.0) {
            return bad("n_avg must be > 0");
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.freqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freqs.is_empty()
    }

    /// Mean bin spacing (Hz).
    pub fn bin_width(&self) -> f64 {
        if self.freqs.len() < 2 {
            return self.rbw;
        }
        (self.freqs[self.freqs.len() - 1] - self.freqs[0]) / (self.freqs.len() - 1) as f64
    }

    pub fn same_grid(&self, other: &SpectrumTrace) -> bool {
        self.freqs.len() == other.freqs.len()
            && self
                .freqs
                .iter()
                .zip(&other.freqs)
                .all(|(a, b)| (a - b).abs() <= 1e-9 * a.abs().max(1.0))
    }

    /// Bins with `lo <= f <= hi`.
    pub fn band(&self, lo: f64, hi: f64) -> SpectrumTrace {
        let (freqs, psd) = self
            .freqs
            .iter()
            .zip(&self.psd)
            .filter(|(f, _)| **f >= lo && **f <= hi)
            .map(|(f, p)| (*f, *p))
            .unzip();
        SpectrumTrace { freqs, psd, n_avg: self.n_avg, rbw: self.rbw }
    }

    pub fn scaled(&self, factor: f64) -> SpectrumTrace {
        SpectrumTrace { psd: self.psd.iter().map(|p| p * factor).collect(), ..self.clone() }
    }

    /// Centered moving average over `2·half_width + 1` bins (shrinking at
    /// the edges).
    pub fn smoothed(&self, half_width: usize) -> SpectrumTrace {
        let n = self.psd.len();
        let mut prefix = vec![0.0; n + 1];
        for (i, p) in self.psd.iter().enumerate() {
            prefix[i + 1] = prefix[i] + p;
        }
        let psd = (0..n)
            .map(|i| {
                let lo = i.saturating_sub(half_width);
                let hi = (i + half_width + 1).min(n);
                (prefix[hi] - prefix[lo]) / (hi - lo) as f64
            })
            .collect();
        SpectrumTrace { psd, ..self.clone() }
    }

    pub fn to_csv_string(&self) -> String {
        let mut s = String::with_capacity(self.len() * 40 + 32);
        s.push_str(CSV_HEADER);
        s.push('\n');
        for (f, p) in self.freqs.iter().zip(&self.psd) {
            let _ = writeln!(s, "{f},{p}");
        }
        s
    }

    pub fn from_csv_str(text: &str, n_avg: f64, rbw: Option<f64>) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, h)) if h.trim() == CSV_HEADER => {}
            Some((i, h)) => {
                return Err(Error::Parse { line: i + 1, reason: format!("expected header `{CSV_HEADER}`, got `{h}`") })
            }
            None => return Err(Error::Parse { line: 1, reason: "empty file".into() }),
        }
        let mut freqs = Vec::new();
        let mut psd = Vec::new();
        for (i, line) in lines {
            let mut parts = line.split(',');
            let parse = |p: Option<&str>| -> Result<f64> {
                p.map(str::trim)
                    .ok_or_else(|| Error::Parse { line: i + 1, reason: "expected two columns".into() })?
                    .parse::<f64>()
                    .map_err(|e| Error::Parse { line: i + 1, reason: e.to_string() })
            };
            let f = parse(parts.next())?;
            let p = parse(parts.next())?;
            if parts.next().is_some() {
                return Err(Error::Parse { line: i + 1, reason: "too many columns".into() });
            }
            freqs.push(f);
            psd.push(p);
        }
        let mut t = SpectrumTrace { freqs, psd, n_avg, rbw: 0.0 };
        t.rbw = rbw.unwrap_or_else(|| t.bin_width());
        t.validate()?;
        Ok(t)
    }

    /// Sidecar JSON carrying `n_avg`, `rbw` and optionally the run
    /// manifest that produced the spectrum.
    pub fn meta_json(&self, manifest: Option<&str>) -> String {
        let meta = Meta { n_avg: self.n_avg, rbw_hz: self.rbw, manifest: manifest.map(str::to_string) };
        serde_json::to_string_pretty(&meta).expect("plain struct serializes")
    }

    /// Writes `path` (CSV) and `path.meta.json` carrying `n_avg` and `rbw`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string())?;
        std::fs::write(meta_path(path), self.meta_json(None))?;
        Ok(())
    }

    /// Reads a CSV spectrum; metadata comes from the sidecar when present,
    /// otherwise `n_avg = 1` and the RBW defaults to the bin spacing.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let meta = std::fs::read_to_string(meta_path(path))
            .ok()
            .and_then(|m| serde_json::from_str::<Meta>(&m).ok());
        match meta {
            Some(m) => Self::from_csv_str(&text, m.n_avg, Some(m.rbw_hz)),
            None => Self::from_csv_str(&text, 1.0, None),
        }
    }
}

fn meta_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    s.into()
}
