//! Scenario files: one TOML document per experimental setting.
//!
//! Frequencies carry an `_hz` suffix and are cyclic; everything is
//! converted to angular units on load. Optional sections fall back to the
//! defaults documented on each field.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::control::{design_filter, DesignSpec};
use crate::error::{Error, Result};
use crate::filter::{Biquad, FeedbackFilter};
use crate::model::{
    intracavity_photons, single_photon_cooperativity, thermal_occupation, CouplingBudget, HigherMode, LoopConfig,
    MeasurementChannel, MechanicalMode, NoiseInputs, OpticalCavity,
};
use crate::units::{hz_to_rad, C_LIGHT};

/// Directory searched for config names that are not existing paths.
pub const CONFIG_DIR_ENV: &str = "COLDLOOP_CONFIG_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: String,
    pub mode: ModeSection,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub higher_modes: Vec<HigherModeSection>,
    pub cavity: CavitySection,
    pub coupling: CouplingSection,
    pub noise: NoiseSection,
    #[serde(default)]
    pub channel: ChannelSection,
    pub filter: FilterSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub design: Option<DesignSection>,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heterodyne: Option<HeterodyneSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration: Option<CalibrationSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub characterize: Option<CharacterizeSection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeSection {
    pub freq_hz: f64,
    pub q_factor: f64,
    pub m_eff_kg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HigherModeSection {
    pub freq_hz: f64,
    pub q_factor: f64,
    /// Relative measurement weight of this mode in the loop signal.
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CavitySection {
    pub kappa_hz: f64,
    pub kappa_e_hz: f64,
    #[serde(default)]
    pub detuning_hz: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingSection {
    pub g0_hz: f64,
    pub eta_det: f64,
    /// Intracavity photons; derived from `input_power_w` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_power_w: Option<f64>,
    /// Laser wavelength (default 1550 nm).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wavelength_m: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    /// Mode temperature; alternative to `n_th`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature_k: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_th: Option<f64>,
    /// Back-action occupation; `n_c · C_0` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_ba: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSection {
    /// Imprecision over the quantum-limited shot level.
    #[serde(default = "one")]
    pub excess_imprecision: f64,
    /// Explicit levels (zero-point units per Hz) override the derived ones.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_imp: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shot_level: Option<f64>,
}

impl Default for ChannelSection {
    fn default() -> Self {
        ChannelSection { excess_imprecision: 1.0, s_imp: None, shot_level: None }
    }
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSection {
    /// Loop gain (1/s); alternative to `damped_width_hz`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gain_per_s: Option<f64>,
    /// Total target linewidth the gain is chosen to produce.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub damped_width_hz: Option<f64>,
    pub delay_s: f64,
    #[serde(default)]
    pub epsilon: f64,
    /// Explicit cascade; synthesized from `[design]` when empty.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sections: Vec<SectionSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SectionSpec {
    Shaped { kind: SectionKind, center_hz: f64, q: f64 },
    Coefficients { num: [f64; 3], den: [f64; 3] },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SectionKind {
    Resonator,
    Bandpass,
    Allpass,
}

impl SectionSpec {
    pub fn to_biquad(&self) -> Result<Biquad> {
        match *self {
            SectionSpec::Shaped { kind, center_hz, q } => {
                if !(center_hz > 0.0 && q > 0.0) {
                    return Err(Error::Config("`filter.sections`: center_hz and q must be > 0".into()));
                }
                let w = hz_to_rad(center_hz);
                Ok(match kind {
                    SectionKind::Resonator => Biquad::resonator(w, q),
                    SectionKind::Bandpass => Biquad::bandpass(w, q),
                    SectionKind::Allpass => Biquad::allpass(w, q),
                })
            }
            SectionSpec::Coefficients { num, den } => {
                Biquad::new(num, den).map_err(|e| Error::Config(format!("`filter.sections`: {e}")))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSection {
    pub gain_min_per_s: f64,
    pub gain_max_per_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase_target_rad: Option<f64>,
    #[serde(default)]
    pub slack: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    /// Time step; a fraction of the mechanical period when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt_s: Option<f64>,
    /// Welch segments averaged per spectrum.
    #[serde(default = "default_segments")]
    pub segments: usize,
    /// Resolution bandwidth in units of the damped linewidth.
    #[serde(default = "default_rbw_fraction")]
    pub rbw_per_linewidth: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

impl Default for SimSection {
    fn default() -> Self {
        SimSection {
            dt_s: None,
            segments: default_segments(),
            rbw_per_linewidth: default_rbw_fraction(),
            seed: default_seed(),
        }
    }
}

fn default_segments() -> usize {
    500
}

fn default_rbw_fraction() -> f64 {
    0.1
}

fn default_seed() -> u64 {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpectrumSource {
    /// Time-domain simulation followed by Welch estimation.
    Simulate,
    /// Analytic spectrum with averaged-periodogram scatter.
    Model,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    /// Gains (1/s); alternative to `damped_widths_hz`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub gains_per_s: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub damped_widths_hz: Vec<f64>,
    pub source: SpectrumSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeterodyneSection {
    pub lo_shift_hz: f64,
    /// Integrated sideband power of one phonon, shot units · Hz.
    pub energy_per_phonon: f64,
    pub floors: [f64; 2],
    /// Mechanical-frequency band for direct integration.
    pub band_hz: [f64; 2],
    #[serde(default = "default_segments_f")]
    pub n_avg: f64,
    pub bin_hz: f64,
    /// Occupancy to synthesize; the loop's analytic value when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_bar: Option<f64>,
    pub probe_detuning_hz: f64,
    pub probe_power_w: f64,
    #[serde(default)]
    pub phase_noise_rad2_per_hz: f64,
    #[serde(default)]
    pub amplitude_noise: f64,
}

fn default_segments_f() -> f64 {
    default_segments() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationSection {
    pub phi0_rad: f64,
    pub tone_hz: f64,
    /// Detector gain used to synthesize raw spectra (units per (rad/s)²).
    #[serde(default = "one")]
    pub detector_gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CharacterizeSection {
    #[serde(default)]
    pub synthetic: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ringdown_csv: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reflection_csv: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spring_csv: Option<PathBuf>,
    /// Relative noise on synthetic data.
    #[serde(default = "default_noise")]
    pub noise: f64,
}

fn default_noise() -> f64 {
    0.01
}

/// A loaded scenario with the loop model resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub file: ScenarioFile,
    pub loop_config: LoopConfig,
    pub design: Option<DesignSpec>,
}

fn cfg_err(key: &str, reason: impl std::fmt::Display) -> Error {
    Error::Config(format!("`{key}`: {reason}"))
}

fn positive(key: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(cfg_err(key, format!("must be > 0 (got {v})")))
    }
}

impl ScenarioFile {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn resolve(&self) -> Result<Scenario> {
        let mode = MechanicalMode::from_q(
            hz_to_rad(positive("mode.freq_hz", self.mode.freq_hz)?),
            positive("mode.q_factor", self.mode.q_factor)?,
            self.mode.m_eff_kg,
        )?;
        let mut higher_modes = Vec::new();
        for (i, h) in self.higher_modes.iter().enumerate() {
            let key = format!("higher_modes[{i}]");
            let m = MechanicalMode::from_q(
                hz_to_rad(positive(&format!("{key}.freq_hz"), h.freq_hz)?),
                positive(&format!("{key}.q_factor"), h.q_factor)?,
                self.mode.m_eff_kg,
            )?;
            if h.weight < 0.0 {
                return Err(cfg_err(&format!("{key}.weight"), "must be >= 0"));
            }
            higher_modes.push(HigherMode { mode: m, weight: h.weight });
        }
        let cavity = OpticalCavity::new(
            hz_to_rad(positive("cavity.kappa_hz", self.cavity.kappa_hz)?),
            hz_to_rad(positive("cavity.kappa_e_hz", self.cavity.kappa_e_hz)?),
            hz_to_rad(self.cavity.detuning_hz),
        )
        .map_err(|e| cfg_err("cavity", e))?;

        let c = &self.coupling;
        let n_c = match (c.n_c, c.input_power_w) {
            (Some(n), None) => n,
            (None, Some(p)) => {
                let lambda = c.wavelength_m.unwrap_or(1550e-9);
                intracavity_photons(&cavity, p, std::f64::consts::TAU * C_LIGHT / lambda)
            }
            (Some(_), Some(_)) => return Err(cfg_err("coupling", "give either `n_c` or `input_power_w`, not both")),
            (None, None) => return Err(cfg_err("coupling", "missing `n_c` or `input_power_w`")),
        };
        let coupling = CouplingBudget::new(hz_to_rad(positive("coupling.g0_hz", c.g0_hz)?), n_c, c.eta_det)
            .map_err(|e| cfg_err("coupling", e))?;

        let n_th = match (self.noise.temperature_k, self.noise.n_th) {
            (Some(t), None) => thermal_occupation(t, mode.omega_m),
            (None, Some(n)) => n,
            (Some(_), Some(_)) => return Err(cfg_err("noise", "give either `temperature_k` or `n_th`, not both")),
            (None, None) => return Err(cfg_err("noise", "missing `temperature_k` or `n_th`")),
        };
        let n_ba = self
            .noise
            .n_ba
            .unwrap_or_else(|| n_c * single_photon_cooperativity(coupling.g0, cavity.kappa, mode.gamma_m));
        let noise = NoiseInputs::new(n_th, n_ba, mode.omega_m).map_err(|e| cfg_err("noise", e))?;

        let ch = &self.channel;
        let gamma_meas = 4.0 * coupling.eta_det * n_c * coupling.g0 * coupling.g0 / cavity.kappa;
        let shot_level = match ch.shot_level {
            Some(s) => positive("channel.shot_level", s)?,
            None if gamma_meas > 0.0 => 1.0 / (4.0 * gamma_meas),
            None => return Err(cfg_err("channel.shot_level", "measurement rate is zero; give the level explicitly")),
        };
        let s_imp = match ch.s_imp {
            Some(s) => positive("channel.s_imp", s)?,
            None => shot_level * positive("channel.excess_imprecision", ch.excess_imprecision)?,
        };
        let channel = MeasurementChannel { s_imp, shot_level };

        let f = &self.filter;
        if !(f.delay_s >= 0.0 && f.delay_s.is_finite()) {
            return Err(cfg_err("filter.delay_s", "must be >= 0"));
        }
        let design = match &self.design {
            Some(d) => {
                let mut spec = DesignSpec::new(mode, higher_modes.clone(), f.delay_s, [d.gain_min_per_s, d.gain_max_per_s]);
                if let Some(p) = d.phase_target_rad {
                    spec.phase_target = p;
                }
                spec.slack = d.slack;
                spec.validate().map_err(|e| cfg_err("design", e))?;
                Some(spec)
            }
            None => None,
        };
        let sections = if f.sections.is_empty() {
            match &design {
                Some(spec) => design_filter(spec)?.filter.sections,
                None => return Err(cfg_err("filter.sections", "missing; give sections or a [design] table")),
            }
        } else {
            f.sections.iter().map(SectionSpec::to_biquad).collect::<Result<Vec<_>>>()?
        };
        let shaped = FeedbackFilter::new(sections, 0.0, f.delay_s, f.epsilon).map_err(|e| cfg_err("filter", e))?;
        let gain = match (f.gain_per_s, f.damped_width_hz) {
            (Some(g), None) => g,
            (None, Some(w)) => gain_for_width(&shaped, &mode, hz_to_rad(w)).map_err(|e| cfg_err("filter.damped_width_hz", e))?,
            (Some(_), Some(_)) => {
                return Err(cfg_err("filter", "give either `gain_per_s` or `damped_width_hz`, not both"))
            }
            (None, None) => return Err(cfg_err("filter", "missing `gain_per_s` or `damped_width_hz`")),
        };
        let loop_config = LoopConfig {
            mode,
            higher_modes,
            cavity,
            coupling,
            noise,
            channel,
            filter: shaped.with_gain(gain),
        };
        loop_config.validate()?;
        if let Some(s) = &self.sweep {
            if s.gains_per_s.is_empty() == s.damped_widths_hz.is_empty() {
                return Err(cfg_err("sweep", "give exactly one of `gains_per_s` or `damped_widths_hz`"));
            }
        }
        if self.sim.segments == 0 {
            return Err(cfg_err("sim.segments", "must be >= 1"));
        }
        positive("sim.rbw_per_linewidth", self.sim.rbw_per_linewidth)?;
        if let Some(h) = &self.heterodyne {
            positive("heterodyne.lo_shift_hz", h.lo_shift_hz)?;
            positive("heterodyne.energy_per_phonon", h.energy_per_phonon)?;
            positive("heterodyne.bin_hz", h.bin_hz)?;
            positive("heterodyne.n_avg", h.n_avg)?;
            if !(h.band_hz[0] > 0.0 && h.band_hz[0] < h.band_hz[1] && h.band_hz[1] < h.lo_shift_hz) {
                return Err(cfg_err("heterodyne.band_hz", "need 0 < lo < hi < lo_shift_hz"));
            }
        }
        Ok(Scenario { file: self.clone(), loop_config, design })
    }
}

/// Loop gain giving a total linewidth `width` (rad/s) at the mode.
pub fn gain_for_width(filter: &FeedbackFilter, mode: &MechanicalMode, width: f64) -> Result<f64> {
    let im = filter.response(mode.omega_m).im;
    if !(im > 0.0) {
        return Err(Error::InvalidParameter { name: "filter", reason: "does not damp the mode".into() });
    }
    if !(width >= mode.gamma_m) {
        return Err(Error::InvalidParameter { name: "width", reason: "below the intrinsic linewidth".into() });
    }
    Ok((width - mode.gamma_m) / im)
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self> {
        ScenarioFile::from_toml(text)?.resolve()
    }

    /// Gains of the `[sweep]` table.
    pub fn sweep_gains(&self) -> Result<Vec<f64>> {
        let s = self.file.sweep.as_ref().ok_or_else(|| cfg_err("sweep", "missing table"))?;
        if !s.gains_per_s.is_empty() {
            return Ok(s.gains_per_s.clone());
        }
        let cfg = &self.loop_config;
        s.damped_widths_hz
            .iter()
            .map(|w| gain_for_width(&cfg.filter, &cfg.mode, hz_to_rad(*w)).map_err(|e| cfg_err("sweep.damped_widths_hz", e)))
            .collect()
    }
}

/// Finds `name` as a path, then as `<name>` or `<name>.toml` inside the
/// directory named by [`CONFIG_DIR_ENV`].
pub fn locate(name: &Path) -> Result<PathBuf> {
    if name.is_file() {
        return Ok(name.to_path_buf());
    }
    if let Some(dir) = std::env::var_os(CONFIG_DIR_ENV) {
        let dir = PathBuf::from(dir);
        for cand in [dir.join(name), dir.join(name).with_extension("toml")] {
            if cand.is_file() {
                return Ok(cand);
            }
        }
    }
    Err(Error::Io(format!("config `{}` not found (also searched ${CONFIG_DIR_ENV})", name.display())))
}

/// Reads and resolves a scenario, returning it with its raw bytes.
pub fn load(name: &Path) -> Result<(Scenario, PathBuf, Vec<u8>)> {
    let path = locate(name)?;
    let bytes = std::fs::read(&path)?;
    let text = std::str::from_utf8(&bytes).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let sc = Scenario::from_toml(text).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })?;
    Ok((sc, path, bytes))
}

pub fn save(file: &ScenarioFile, path: &Path) -> Result<()> {
    std::fs::write(path, file.to_toml()?)?;
    Ok(())
}

/// The shipped reference scenarios.
pub const REFERENCE: [(&str, &str); 3] = [
    ("lhe_het", include_str!("../../../configs/lhe_het.toml")),
    ("lhe_nohet", include_str!("../../../configs/lhe_nohet.toml")),
    ("ln2_het", include_str!("../../../configs/ln2_het.toml")),
];

pub fn reference(name: &str) -> Result<Scenario> {
    let (_, text) = REFERENCE
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| Error::Config(format!("no reference scenario `{name}`")))?;
    Scenario::from_toml(text)
}
