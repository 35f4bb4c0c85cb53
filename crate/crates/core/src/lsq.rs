//! Bounded Levenberg–Marquardt with Marquardt diagonal scaling,
//! central-difference Jacobians and covariance from the final Jacobian.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub trait Residuals {
    fn n_params(&self) -> usize;
    fn n_residuals(&self) -> usize;
    fn residuals(&self, p: &[f64], out: &mut [f64]);
}

impl<F> Residuals for (usize, usize, F)
where
    F: Fn(&[f64], &mut [f64]),
{
    fn n_params(&self) -> usize {
        self.0
    }
    fn n_residuals(&self) -> usize {
        self.1
    }
    fn residuals(&self, p: &[f64], out: &mut [f64]) {
        (self.2)(p, out)
    }
}

#[derive(Debug, Clone)]
pub struct LmOptions {
    pub max_iter: usize,
    /// Relative step tolerance.
    pub xtol: f64,
    /// Cosine between residual and Jacobian columns.
    pub gtol: f64,
    /// Relative cost reduction tolerance.
    pub ftol: f64,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Typical parameter magnitudes, used for finite-difference steps.
    pub typical: Vec<f64>,
    pub max_condition: f64,
}

impl LmOptions {
    pub fn new(n: usize) -> Self {
        LmOptions {
            max_iter: 200,
            xtol: 1e-10,
            gtol: 1e-8,
            ftol: 1e-14,
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
            typical: vec![1.0; n],
            max_condition: 1e14,
        }
    }

    pub fn bound(mut self, i: usize, lo: f64, hi: f64) -> Self {
        self.lower[i] = lo;
        self.upper[i] = hi;
        self
    }

    pub fn typical(mut self, typical: Vec<f64>) -> Self {
        self.typical = typical;
        self
    }
}

#[derive(Debug, Clone)]
pub struct LmReport {
    pub params: Vec<f64>,
    /// `(JᵀJ)⁻¹`, unscaled by the residual variance.
    pub covariance: DMatrix<f64>,
    /// `½‖r‖²` at the solution.
    pub cost: f64,
    pub n_residuals: usize,
    pub iterations: usize,
    /// Indices whose final value sits on a bound.
    pub at_bound: Vec<usize>,
    pub condition: f64,
}

impl LmReport {
    /// Reduced chi-square `‖r‖² / (m − n)`.
    pub fn reduced_chi2(&self) -> f64 {
        let dof = self.n_residuals.saturating_sub(self.params.len()).max(1);
        2.0 * self.cost / dof as f64
    }
}

fn eval(problem: &dyn Residuals, p: &[f64], buf: &mut [f64]) -> f64 {
    problem.residuals(p, buf);
    let s: f64 = buf.iter().map(|r| r * r).sum();
    if s.is_finite() {
        0.5 * s
    } else {
        f64::INFINITY
    }
}

pub fn jacobian(problem: &dyn Residuals, p: &[f64], typical: &[f64], lower: &[f64], upper: &[f64]) -> DMatrix<f64> {
    let n = problem.n_params();
    let m = problem.n_residuals();
    let mut jac = DMatrix::zeros(m, n);
    let mut rp = vec![0.0; m];
    let mut rm = vec![0.0; m];
    let mut q = p.to_vec();
    for j in 0..n {
        let h = 1e-6 * p[j].abs().max(typical[j].abs()).max(1e-300);
        let hi = (p[j] + h).min(upper[j]);
        let lo = (p[j] - h).max(lower[j]);
        q[j] = hi;
        problem.residuals(&q, &mut rp);
        q[j] = lo;
        problem.residuals(&q, &mut rm);
        q[j] = p[j];
        let d = hi - lo;
        for i in 0..m {
            jac[(i, j)] = (rp[i] - rm[i]) / d;
        }
    }
    jac
}

fn clamp(p: &mut [f64], lo: &[f64], hi: &[f64]) {
    for i in 0..p.len() {
        p[i] = p[i].clamp(lo[i], hi[i]);
    }
}

/// Minimizes `½‖r(p)‖²` from `start`.
pub fn levenberg_marquardt(problem: &dyn Residuals, start: &[f64], opts: &LmOptions) -> Result<LmReport> {
    let n = problem.n_params();
    let m = problem.n_residuals();
    assert_eq!(start.len(), n);
    let mut p = start.to_vec();
    clamp(&mut p, &opts.lower, &opts.upper);
    let mut r = vec![0.0; m];
    let mut cost = eval(problem, &p, &mut r);
    if !cost.is_finite() {
        return Err(Error::FitRejected("model is not finite at the starting point".into()));
    }
    let mut lambda = 1e-3;
    let mut trial = vec![0.0; m];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        iterations += 1;
        let jac = jacobian(problem, &p, &opts.typical, &opts.lower, &opts.upper);
        let rv = DVector::from_column_slice(&r);
        let mut g = jac.transpose() * &rv;
        let mut a = jac.transpose() * &jac;
        // freeze parameters pinned on a bound with the descent pointing out
        for j in 0..n {
            let pinned = (p[j] <= opts.lower[j] && g[j] > 0.0) || (p[j] >= opts.upper[j] && g[j] < 0.0);
            if pinned {
                g[j] = 0.0;
                for k in 0..n {
                    a[(j, k)] = 0.0;
                    a[(k, j)] = 0.0;
                }
                a[(j, j)] = 1.0;
            }
        }

        let rnorm = rv.norm();
        if rnorm == 0.0 {
            converged = true;
            break;
        }
        let gcos = (0..n)
            .map(|j| {
                let cn = a[(j, j)].sqrt();
                if cn > 0.0 {
                    (g[j] / (cn * rnorm)).abs()
                } else {
                    0.0
                }
            })
            .fold(0.0, f64::max);
        if gcos <= opts.gtol {
            converged = true;
            break;
        }

        let mut accepted = false;
        while lambda < 1e16 {
            let mut damped = a.clone();
            for j in 0..n {
                damped[(j, j)] += lambda * a[(j, j)].max(1e-30);
            }
            let Some(step) = damped.cholesky().map(|c| c.solve(&(-&g))) else {
                lambda *= 10.0;
                continue;
            };
            let mut cand: Vec<f64> = p.iter().zip(step.iter()).map(|(x, d)| x + d).collect();
            clamp(&mut cand, &opts.lower, &opts.upper);
            let new_cost = eval(problem, &cand, &mut trial);
            if new_cost < cost {
                let step_norm: f64 = cand.iter().zip(&p).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                let p_norm: f64 = p.iter().map(|x| x * x).sum::<f64>().sqrt();
                let rel_drop = (cost - new_cost) / cost;
                p = cand;
                std::mem::swap(&mut r, &mut trial);
                cost = new_cost;
                lambda = (lambda / 5.0).max(1e-12);
                accepted = true;
                if step_norm <= opts.xtol * (p_norm + opts.xtol) || rel_drop <= opts.ftol {
                    converged = true;
                }
                break;
            }
            lambda *= 4.0;
        }
        if !accepted {
            // no downhill step at any damping: stationary to working precision
            converged = true;
        }
        if converged {
            break;
        }
    }

    if !converged {
        return Err(Error::NonConvergence { iterations });
    }

    let jac = jacobian(problem, &p, &opts.typical, &opts.lower, &opts.upper);
    let a = jac.transpose() * &jac;
    let eig = a.clone().symmetric_eigen();
    let emax = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let emin = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let condition = if emin > 0.0 { emax / emin } else { f64::INFINITY };
    if condition > opts.max_condition {
        return Err(Error::IllConditioned(condition));
    }
    let covariance = a.try_inverse().ok_or(Error::IllConditioned(condition))?;
    let at_bound = (0..n)
        .filter(|&i| {
            let span = 1e-9 * p[i].abs().max(opts.typical[i].abs());
            (opts.lower[i].is_finite() && p[i] - opts.lower[i] <= span)
                || (opts.upper[i].is_finite() && opts.upper[i] - p[i] <= span)
        })
        .collect();
    Ok(LmReport { params: p, covariance, cost, n_residuals: m, iterations, at_bound, condition })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fits_exponential_exactly() {
        let t: Vec<f64> = (0..40).map(|i| i as f64 * 0.1).collect();
        let y: Vec<f64> = t.iter().map(|t| 3.0 * (-0.7 * t).exp()).collect();
        let prob = (2, t.len(), |p: &[f64], out: &mut [f64]| {
            for i in 0..t.len() {
                out[i] = p[0] * (-p[1] * t[i]).exp() - y[i];
            }
        });
        let rep = levenberg_marquardt(&prob, &[1.0, 0.2], &LmOptions::new(2)).unwrap();
        assert!((rep.params[0] - 3.0).abs() < 1e-8);
        assert!((rep.params[1] - 0.7).abs() < 1e-8);
    }

    #[test]
    fn rosenbrock_converges() {
        let prob = (2, 2, |p: &[f64], out: &mut [f64]| {
            out[0] = 10.0 * (p[1] - p[0] * p[0]);
            out[1] = 1.0 - p[0];
        });
        let rep = levenberg_marquardt(&prob, &[-1.2, 1.0], &LmOptions::new(2)).unwrap();
        assert!((rep.params[0] - 1.0).abs() < 1e-6 && (rep.params[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn reports_active_bound() {
        let prob = (1, 1, |p: &[f64], out: &mut [f64]| out[0] = p[0] + 1.0);
        let opts = LmOptions::new(1).bound(0, 0.0, 10.0);
        let rep = levenberg_marquardt(&prob, &[5.0], &opts).unwrap();
        assert_eq!(rep.at_bound, vec![0]);
    }

    #[test]
    fn degenerate_direction_is_ill_conditioned() {
        let prob = (2, 3, |p: &[f64], out: &mut [f64]| {
            for (i, o) in out.iter_mut().enumerate() {
                *o = (p[0] + p[1]) * i as f64 - 1.0;
            }
        });
        let err = levenberg_marquardt(&prob, &[0.1, 0.2], &LmOptions::new(2)).unwrap_err();
        assert!(matches!(err, Error::IllConditioned(_)));
    }
}
