//! Levenberg–Marquardt least squares and Jacobian-based covariance.
//!
//! Every fitter in the crate goes through [`levenberg_marquardt`]. The
//! stopping rule is a relative objective change below `ftol` on an
//! accepted step, a vanishing gradient, or an exact (zero-residual) fit;
//! running out of iterations is reported as non-convergence.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub trait LeastSquares {
    fn n_residuals(&self) -> usize;
    fn n_params(&self) -> usize;
    fn residuals(&self, params: &[f64], out: &mut [f64]);

    /// Defaults to central finite differences.
    fn jacobian(&self, params: &[f64], jac: &mut DMatrix<f64>) {
        finite_difference_jacobian(self, params, jac);
    }
}

pub fn finite_difference_jacobian<P: LeastSquares + ?Sized>(
    problem: &P,
    params: &[f64],
    jac: &mut DMatrix<f64>,
) {
    let m = problem.n_residuals();
    let mut p = params.to_vec();
    let mut up = vec![0.0; m];
    let mut down = vec![0.0; m];
    for j in 0..params.len() {
        let h = 6e-6 * params[j].abs().max(1.0);
        p[j] = params[j] + h;
        problem.residuals(&p, &mut up);
        p[j] = params[j] - h;
        problem.residuals(&p, &mut down);
        p[j] = params[j];
        for i in 0..m {
            jac[(i, j)] = (up[i] - down[i]) / (2.0 * h);
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Relative objective change that counts as converged.
    pub ftol: f64,
    pub gtol: f64,
    pub xtol: f64,
    pub initial_damping: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iterations: 2000,
            ftol: 1e-10,
            gtol: 1e-15,
            xtol: 1e-15,
            initial_damping: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    ObjectiveChange,
    Gradient,
    StepSize,
    ExactFit,
    /// No damping level produced a decrease: a (local) minimum to
    /// working precision.
    Stalled,
}

#[derive(Debug, Clone)]
pub struct LmSolution {
    pub params: Vec<f64>,
    /// Σ rᵢ² at the solution.
    pub cost: f64,
    pub residuals: Vec<f64>,
    pub jacobian: DMatrix<f64>,
    pub iterations: usize,
    pub termination: Termination,
}

impl LmSolution {
    pub fn rms(&self) -> f64 {
        if self.residuals.is_empty() {
            0.0
        } else {
            (self.cost / self.residuals.len() as f64).sqrt()
        }
    }
}

fn sum_sq(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

pub fn levenberg_marquardt<P: LeastSquares + ?Sized>(
    problem: &P,
    x0: &[f64],
    opts: &LmOptions,
) -> Result<LmSolution> {
    let m = problem.n_residuals();
    let n = problem.n_params();
    if x0.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            got: x0.len(),
        });
    }
    if m == 0 {
        return Err(Error::invalid("least-squares problem has no residuals"));
    }
    let mut x = x0.to_vec();
    let mut r = vec![0.0; m];
    problem.residuals(&x, &mut r);
    let mut cost = sum_sq(&r);
    if !cost.is_finite() {
        return Err(Error::NotConverged {
            iterations: 0,
            cost,
            reason: "non-finite residuals at the starting point".into(),
        });
    }
    let exact_floor = 1e-28 * m as f64;
    let mut jac = DMatrix::zeros(m, n);
    let mut mu = opts.initial_damping;
    let mut x_new = vec![0.0; n];
    let mut r_new = vec![0.0; m];

    for iter in 1..=opts.max_iterations {
        if cost <= exact_floor {
            problem.jacobian(&x, &mut jac);
            return Ok(finish(x, cost, r, jac, iter - 1, Termination::ExactFit));
        }
        problem.jacobian(&x, &mut jac);
        let rv = DVector::from_column_slice(&r);
        let g = jac.tr_mul(&rv);
        if g.amax() <= opts.gtol * cost.max(1.0) {
            return Ok(finish(x, cost, r, jac, iter - 1, Termination::Gradient));
        }
        let a = jac.tr_mul(&jac);
        let diag: Vec<f64> = (0..n).map(|i| a[(i, i)].max(1e-30)).collect();

        loop {
            let mut damped = a.clone();
            for (i, d) in diag.iter().enumerate() {
                damped[(i, i)] += mu * d;
            }
            let step = match damped.cholesky() {
                Some(ch) => ch.solve(&(-&g)),
                None => {
                    mu *= 10.0;
                    if mu > 1e20 {
                        return Ok(finish(x, cost, r, jac, iter, Termination::Stalled));
                    }
                    continue;
                }
            };
            for i in 0..n {
                x_new[i] = x[i] + step[i];
            }
            problem.residuals(&x_new, &mut r_new);
            let cost_new = sum_sq(&r_new);
            if cost_new.is_finite() && cost_new < cost {
                let rel = (cost - cost_new) / cost;
                let step_norm = step.norm();
                let x_norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                std::mem::swap(&mut x, &mut x_new);
                std::mem::swap(&mut r, &mut r_new);
                cost = cost_new;
                mu = (mu / 3.0).max(1e-15);
                if cost <= exact_floor {
                    problem.jacobian(&x, &mut jac);
                    return Ok(finish(x, cost, r, jac, iter, Termination::ExactFit));
                }
                if rel < opts.ftol {
                    problem.jacobian(&x, &mut jac);
                    return Ok(finish(x, cost, r, jac, iter, Termination::ObjectiveChange));
                }
                if step_norm <= opts.xtol * (x_norm + opts.xtol) {
                    problem.jacobian(&x, &mut jac);
                    return Ok(finish(x, cost, r, jac, iter, Termination::StepSize));
                }
                break;
            }
            mu *= 4.0;
            if mu > 1e20 {
                return Ok(finish(x, cost, r, jac, iter, Termination::Stalled));
            }
        }
    }
    Err(Error::NotConverged {
        iterations: opts.max_iterations,
        cost,
        reason: format!(
            "iteration limit reached (rms residual {:.3e})",
            (cost / m as f64).sqrt()
        ),
    })
}

fn finish(
    params: Vec<f64>,
    cost: f64,
    residuals: Vec<f64>,
    jacobian: DMatrix<f64>,
    iterations: usize,
    termination: Termination,
) -> LmSolution {
    LmSolution {
        params,
        cost,
        residuals,
        jacobian,
        iterations,
        termination,
    }
}

/// Parameter covariance s²·(JᵀJ)⁺ with s² = cost/(m − n). Directions the
/// data do not constrain get infinite variance.
pub fn covariance(jac: &DMatrix<f64>, cost: f64) -> DMatrix<f64> {
    let (m, n) = jac.shape();
    let s2 = if m > n { cost / (m - n) as f64 } else { 0.0 };
    let jtj = jac.tr_mul(jac);
    let svd = jtj.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let tol = smax * 1e-13;
    let mut cov = DMatrix::zeros(n, n);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    for k in 0..n {
        let s = svd.singular_values[k];
        if s > tol && s > 0.0 {
            for i in 0..n {
                for j in 0..n {
                    cov[(i, j)] += vt[(k, i)] * u[(j, k)] / s;
                }
            }
        }
    }
    // a parameter with no curvature at all is unconstrained
    for i in 0..n {
        if jtj[(i, i)] <= tol {
            cov[(i, i)] = f64::INFINITY;
        }
    }
    cov * s2
}

/// One-sigma errors from the covariance diagonal.
pub fn sigmas(cov: &DMatrix<f64>) -> Vec<f64> {
    (0..cov.nrows())
        .map(|i| cov[(i, i)].max(0.0).sqrt())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Exponential {
        t: Vec<f64>,
        y: Vec<f64>,
    }

    impl LeastSquares for Exponential {
        fn n_residuals(&self) -> usize {
            self.t.len()
        }
        fn n_params(&self) -> usize {
            2
        }
        fn residuals(&self, p: &[f64], out: &mut [f64]) {
            for (i, (&t, &y)) in self.t.iter().zip(&self.y).enumerate() {
                out[i] = p[0] * (-t / p[1]).exp() - y;
            }
        }
    }

    #[test]
    fn fits_exponential() {
        let t: Vec<f64> = (0..30).map(|i| i as f64 * 0.5).collect();
        let y = t.iter().map(|t| 3.0 * (-t / 4.0).exp()).collect();
        let sol =
            levenberg_marquardt(&Exponential { t, y }, &[1.0, 1.0], &LmOptions::default()).unwrap();
        assert!((sol.params[0] - 3.0).abs() < 1e-8);
        assert!((sol.params[1] - 4.0).abs() < 1e-8);
    }

    #[test]
    fn covariance_matches_linear_regression() {
        // straight line y = a + b x: covariance has a closed form
        struct Line {
            x: Vec<f64>,
            y: Vec<f64>,
        }
        impl LeastSquares for Line {
            fn n_residuals(&self) -> usize {
                self.x.len()
            }
            fn n_params(&self) -> usize {
                2
            }
            fn residuals(&self, p: &[f64], out: &mut [f64]) {
                for i in 0..self.x.len() {
                    out[i] = p[0] + p[1] * self.x[i] - self.y[i];
                }
            }
        }
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y: Vec<f64> = x
            .iter()
            .enumerate()
            .map(|(i, x)| 1.0 + 2.0 * x + if i % 2 == 0 { 0.1 } else { -0.1 })
            .collect();
        let sol = levenberg_marquardt(
            &Line { x: x.clone(), y },
            &[0.0, 0.0],
            &LmOptions::default(),
        )
        .unwrap();
        let cov = covariance(&sol.jacobian, sol.cost);
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let sxx: f64 = x.iter().map(|v| (v - mean).powi(2)).sum();
        let s2 = sol.cost / (n - 2.0);
        assert!((cov[(1, 1)] - s2 / sxx).abs() < 1e-9);
    }

    #[test]
    fn unconstrained_parameter_gets_infinite_error() {
        let jac = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 2.0, 0.0, 3.0, 0.0]);
        let s = sigmas(&covariance(&jac, 1.0));
        assert!(s[0].is_finite());
        assert!(s[1].is_infinite());
    }
}
