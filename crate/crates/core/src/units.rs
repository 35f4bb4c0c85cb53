//! Physical constants and unit helpers. Internally every frequency is
//! angular (rad/s); files and flags carry Hz.

use std::f64::consts::TAU;

/// Reduced Planck constant (J s).
pub const HBAR: f64 = 1.054_571_817e-34;
/// Boltzmann constant (J/K).
pub const K_B: f64 = 1.380_649e-23;
/// Speed of light (m/s).
pub const C_LIGHT: f64 = 299_792_458.0;

#[inline]
pub fn hz_to_rad(f: f64) -> f64 {
    f * TAU
}

#[inline]
pub fn rad_to_hz(w: f64) -> f64 {
    w / TAU
}
