//! Exact sampled-data forms of the oscillator and bilinear digital sections.

use nalgebra::{Matrix2, Matrix4, Vector2};

use crate::filter::Biquad;
use crate::model::MechanicalMode;

/// One oscillator `ẍ + Γẋ + Ω²x = Ω F` advanced exactly over `dt` with the
/// control force interpolated linearly between samples and the white
/// bath force integrated through its covariance.
#[derive(Debug, Clone)]
pub struct DiscreteOscillator {
    pub phi: Matrix2<f64>,
    /// Response to the force at the start of the step.
    pub gamma0: Vector2<f64>,
    /// Response to the force at the end of the step.
    pub gamma1: Vector2<f64>,
    /// Lower Cholesky factor of the per-step noise covariance.
    pub noise_chol: Matrix2<f64>,
    pub state: Vector2<f64>,
}

impl DiscreteOscillator {
    /// `s_force` is the one-sided force PSD.
    pub fn new(mode: &MechanicalMode, s_force: f64, dt: f64) -> Self {
        let (w, g) = (mode.omega_m, mode.gamma_m);
        let a = Matrix2::new(0.0, 1.0, -w * w, -g);
        let b = Vector2::new(0.0, w);

        // input matrices from the augmented exponential for a ramped input
        let mut m = Matrix4::zeros();
        m.fixed_view_mut::<2, 2>(0, 0).copy_from(&(a * dt));
        m.fixed_view_mut::<2, 1>(0, 2).copy_from(&(b * dt));
        m[(2, 3)] = 1.0;
        let e = m.exp();
        let phi = e.fixed_view::<2, 2>(0, 0).into_owned();
        let e_u = e.fixed_view::<2, 1>(0, 2).into_owned();
        let e_du = e.fixed_view::<2, 1>(0, 3).into_owned();

        // Van Loan: covariance of the integrated white force (two-sided S/2)
        let q = b * b.transpose() * (s_force / 2.0);
        let mut v = Matrix4::zeros();
        v.fixed_view_mut::<2, 2>(0, 0).copy_from(&(-a * dt));
        v.fixed_view_mut::<2, 2>(0, 2).copy_from(&(q * dt));
        v.fixed_view_mut::<2, 2>(2, 2).copy_from(&(a.transpose() * dt));
        let ev = v.exp();
        let phi_t = ev.fixed_view::<2, 2>(2, 2).into_owned();
        let qd = phi_t.transpose() * ev.fixed_view::<2, 2>(0, 2).into_owned();
        let qd = (qd + qd.transpose()) * 0.5;

        DiscreteOscillator {
            phi,
            gamma0: e_u - e_du,
            gamma1: e_du,
            noise_chol: chol2(&qd),
            state: Vector2::zeros(),
        }
    }

    /// State after the step before the end-of-step force is added.
    #[inline]
    pub fn predict(&self, u0: f64, n1: f64, n2: f64) -> Vector2<f64> {
        self.phi * self.state + self.gamma0 * u0 + self.noise_chol * Vector2::new(n1, n2)
    }
}

/// Cholesky of a symmetric PSD 2×2 matrix, tolerant of rank deficiency.
fn chol2(m: &Matrix2<f64>) -> Matrix2<f64> {
    let l11 = m[(0, 0)].max(0.0).sqrt();
    let l21 = if l11 > 0.0 { m[(1, 0)] / l11 } else { 0.0 };
    let l22 = (m[(1, 1)] - l21 * l21).max(0.0).sqrt();
    Matrix2::new(l11, 0.0, l21, l22)
}

/// Transposed direct-form II section.
#[derive(Debug, Clone, Copy)]
pub struct DigitalBiquad {
    b: [f64; 3],
    a: [f64; 2],
    z: [f64; 2],
}

impl DigitalBiquad {
    /// Bilinear transform `s = c (1 − z⁻¹)/(1 + z⁻¹)` with `c` prewarped so
    /// the analog and digital responses agree exactly at `omega_warp`.
    pub fn bilinear(section: &Biquad, dt: f64, omega_warp: f64) -> Self {
        let c = omega_warp / (omega_warp * dt / 2.0).tan();
        let map = |p: &[f64; 3]| {
            let (c2, c1) = (p[0] * c * c, p[1] * c);
            [c2 + c1 + p[2], 2.0 * (p[2] - c2), c2 - c1 + p[2]]
        };
        let n = map(&section.num);
        let d = map(&section.den);
        DigitalBiquad { b: [n[0] / d[0], n[1] / d[0], n[2] / d[0]], a: [d[1] / d[0], d[2] / d[0]], z: [0.0; 2] }
    }

    #[inline]
    pub fn process(&mut self, x: f64) -> f64 {
        let y = self.b[0] * x + self.z[0];
        self.z[0] = self.b[1] * x - self.a[0] * y + self.z[1];
        self.z[1] = self.b[2] * x - self.a[1] * y;
        y
    }

    /// Output for input `x` without advancing the state.
    #[inline]
    pub fn peek(&self, x: f64) -> f64 {
        self.b[0] * x + self.z[0]
    }

    pub fn feedthrough(&self) -> f64 {
        self.b[0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;
    use std::f64::consts::TAU;

    #[test]
    fn noiseless_free_decay_matches_closed_form() {
        let mode = MechanicalMode::from_q(TAU * 1.0, 20.0, 0.0).unwrap();
        let dt = 0.01;
        let mut osc = DiscreteOscillator::new(&mode, 0.0, dt);
        osc.state = Vector2::new(1.0, 0.0);
        let steps = 300;
        for _ in 0..steps {
            osc.state = osc.predict(0.0, 0.0, 0.0);
        }
        let t = steps as f64 * dt;
        let (w, g) = (mode.omega_m, mode.gamma_m);
        let wd = (w * w - g * g / 4.0).sqrt();
        let x = (-g * t / 2.0).exp() * ((wd * t).cos() + g / (2.0 * wd) * (wd * t).sin());
        assert!((osc.state[0] - x).abs() < 1e-12);
    }

    #[test]
    fn constant_force_reaches_static_deflection() {
        let mode = MechanicalMode::from_q(3.0, 2.0, 0.0).unwrap();
        let mut osc = DiscreteOscillator::new(&mode, 0.0, 0.05);
        for _ in 0..4000 {
            osc.state = osc.predict(1.0, 0.0, 0.0) + osc.gamma1;
        }
        // Ω F / Ω² = 1/Ω
        assert!((osc.state[0] - 1.0 / 3.0).abs() < 1e-10);
    }

    #[test]
    fn stationary_covariance_is_equipartition() {
        // discrete Lyapunov fixed point of Φ P Φᵀ + Q_d
        let mode = MechanicalMode::from_q(TAU * 1e6, 1e3, 0.0).unwrap();
        let n = 50.0;
        let s_f = 2.0 * mode.gamma_m * (2.0 * n + 1.0);
        let osc = DiscreteOscillator::new(&mode, s_f, 1.0 / (64.0e6));
        let qd = osc.noise_chol * osc.noise_chol.transpose();
        let mut p = Matrix2::zeros();
        for _ in 0..200_000 {
            p = osc.phi * p * osc.phi.transpose() + qd;
        }
        assert!((p[(0, 0)] / (n + 0.5) - 1.0).abs() < 1e-6, "{}", p[(0, 0)]);
        let pv = p[(1, 1)] / mode.omega_m.powi(2);
        assert!((pv / (n + 0.5) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn bilinear_matches_analog_at_warp_frequency() {
        let w = TAU * 1e6;
        let dt = 1.0 / 64e6;
        let sec = Biquad::resonator(w * 1.1, 1.5);
        let d = DigitalBiquad::bilinear(&sec, dt, w);
        // one-sample delay is e^{iωdt} in this convention
        let z = Complex64::from_polar(1.0, w * dt);
        let num = Complex64::new(d.b[0], 0.0) + z * d.b[1] + z * z * d.b[2];
        let den = Complex64::new(1.0, 0.0) + z * d.a[0] + z * z * d.a[1];
        let hd = num / den;
        let ha = sec.response(w);
        assert!((hd - ha).norm() < 1e-10, "{hd} vs {ha}");
    }
}
