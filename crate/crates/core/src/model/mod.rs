//! Domain types and the analytic frequency-domain model of the
//! measurement–feedback loop.

mod budget;
mod characterize;
mod phonon;
mod response;
mod spectrum;
mod types;

pub use budget::{rate_budget, single_photon_cooperativity, thermal_occupation, RateBudget};
pub use characterize::{
    cavity_reflection, fit_optical_spring, fit_reflection, fit_ringdown, intracavity_photons,
    optical_spring_shift, DecayKind, ReflectionFit, RingdownFit, SpringFit,
};
pub use phonon::{integration_grid, phonon_from_psd, PhononEstimate, TAIL_WARN_FRACTION};
pub use response::{
    closed_loop_measured_psd, effective_resonance, force_noise_psd, inferred_displacement_psd,
    mech_susceptibility, ClosedLoopModel, LoopParams,
};
pub use spectrum::SpectrumTrace;
pub use types::{
    CouplingBudget, HigherMode, LoopConfig, MeasurementChannel, MechanicalMode, NoiseInputs,
    OpticalCavity,
};
