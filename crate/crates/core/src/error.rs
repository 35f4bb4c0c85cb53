use thiserror::Error;

/// Every failure the toolkit can report.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("measurement efficiency is zero; rates are undefined")]
    ZeroEfficiency,

    #[error("measurement rate is zero (no intracavity photons); decoherence ratio undefined")]
    ZeroMeasurementRate,

    #[error("closed loop is unstable: {0}")]
    Unstable(String),

    #[error("simulation diverged at t = {time:.3e} s (|x| = {magnitude:.3e})")]
    Diverged { time: f64, magnitude: f64 },

    #[error("trace too short: need {needed} samples, have {have}")]
    TooShort { needed: usize, have: usize },

    #[error("frequency grids differ")]
    GridMismatch,

    #[error("reference spectrum has a non-positive bin at {freq_hz} Hz")]
    ZeroReference { freq_hz: f64 },

    #[error("unphysical phonon number {0}: spectrum integrates below the zero-point level")]
    Unphysical(f64),

    #[error("fit did not converge after {iterations} iterations")]
    NonConvergence { iterations: usize },

    #[error("fit parameter `{name}` ended at its bound ({value})")]
    AtBound { name: String, value: f64 },

    #[error("fit normal matrix is ill-conditioned (condition number {0:.3e})")]
    IllConditioned(f64),

    #[error("fit rejected: {0}")]
    FitRejected(String),

    #[error("sidebands overlap: linewidth {gamma_hz:.3e} Hz vs separation {separation_hz:.3e} Hz")]
    SidebandsOverlap { gamma_hz: f64, separation_hz: f64 },

    #[error("sideband not found: {0}")]
    SidebandNotFound(String),

    #[error("sideband powers are equal; occupancy saturates")]
    Saturated,

    #[error("negative integrated sideband power after floor subtraction ({0})")]
    FloorMismatch(String),

    #[error("calibration tone not found near {freq_hz} Hz")]
    ToneNotFound { freq_hz: f64 },

    #[error("calibration tone saturated (clipped bins)")]
    ToneSaturated,

    #[error("filter design infeasible: {0}")]
    Infeasible(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),

    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check(cond: bool, name: &'static str, reason: impl Into<String>) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::InvalidParameter { name, reason: reason.into() })
    }
}
