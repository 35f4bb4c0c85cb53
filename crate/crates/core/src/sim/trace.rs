use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{check, Error, Result};

const MAGIC: &str = "coldloop-trace";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceLabel {
    Displacement,
    Measurement,
    Control,
}

impl fmt::Display for TraceLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TraceLabel::Displacement => "displacement",
            TraceLabel::Measurement => "measurement",
            TraceLabel::Control => "control",
        })
    }
}

impl FromStr for TraceLabel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "displacement" => Ok(TraceLabel::Displacement),
            "measurement" => Ok(TraceLabel::Measurement),
            "control" => Ok(TraceLabel::Control),
            other => Err(Error::Parse { line: 1, reason: format!("unknown trace label '{other}'") }),
        }
    }
}

/// Uniformly sampled real signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeTrace {
    /// Sample rate (Hz).
    pub fs: f64,
    pub samples: Vec<f64>,
    pub label: TraceLabel,
    pub seed: Option<u64>,
}

impl TimeTrace {
    pub fn new(fs: f64, samples: Vec<f64>, label: TraceLabel) -> Result<Self> {
        let t = TimeTrace { fs, samples, label, seed: None };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        check(self.fs > 0.0 && self.fs.is_finite(), "fs", "must be > 0")?;
        check(self.samples.iter().all(|x| x.is_finite()), "samples", "must be finite")
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn variance(&self) -> f64 {
        let n = self.samples.len() as f64;
        let mean = self.samples.iter().sum::<f64>() / n;
        self.samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n
    }

    /// Text header line followed by little-endian `f64` samples.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let seed = self.seed.map_or_else(|| "none".to_string(), |s| s.to_string());
        writeln!(w, "{MAGIC} fs={:e} label={} seed={seed} n={}", self.fs, self.label, self.samples.len())?;
        let mut buf = Vec::with_capacity(8 * self.samples.len());
        for x in &self.samples {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from(r: impl Read) -> Result<Self> {
        let mut r = BufReader::new(r);
        let mut header = String::new();
        r.read_line(&mut header)?;
        let bad = |reason: String| Error::Parse { line: 1, reason };
        let mut fields = header.split_whitespace();
        if fields.next() != Some(MAGIC) {
            return Err(bad("missing trace header".into()));
        }
        let (mut fs, mut label, mut seed, mut n) = (None, None, None, None);
        for kv in fields {
            let (k, v) = kv.split_once('=').ok_or_else(|| bad(format!("malformed field '{kv}'")))?;
            match k {
                "fs" => fs = Some(v.parse::<f64>().map_err(|e| bad(format!("fs: {e}")))?),
                "label" => label = Some(v.parse::<TraceLabel>()?),
                "seed" => seed = if v == "none" { None } else { Some(v.parse::<u64>().map_err(|e| bad(format!("seed: {e}")))?) },
                "n" => n = Some(v.parse::<usize>().map_err(|e| bad(format!("n: {e}")))?),
                _ => return Err(bad(format!("unknown field '{k}'"))),
            }
        }
        let fs = fs.ok_or_else(|| bad("missing fs".into()))?;
        let label = label.ok_or_else(|| bad("missing label".into()))?;
        let n = n.ok_or_else(|| bad("missing n".into()))?;
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() != 8 * n {
            return Err(bad(format!("expected {} sample bytes, found {}", 8 * n, bytes.len())));
        }
        let samples = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect();
        let t = TimeTrace { fs, samples, label, seed };
        t.validate()?;
        Ok(t)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::read_from(std::fs::File::open(path)?)
    }
}
