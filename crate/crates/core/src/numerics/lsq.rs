//! Damped Gauss-Newton (Levenberg-Marquardt) for box-bounded nonlinear
//! least squares.

use serde::{Deserialize, Serialize};

use super::matrix::{cholesky, solve_chol, Matrix, SymMatrix};
use crate::error::{Error, Result};

/// A residual vector `r(θ)` with an optional analytic Jacobian.
pub trait Residuals {
    fn residuals(&self, theta: &[f64]) -> Vec<f64>;

    /// `J[i][k] = ∂r_i/∂θ_k`. `None` falls back to central differences.
    fn jacobian(&self, _theta: &[f64]) -> Option<Matrix> {
        None
    }
}

impl<F: Fn(&[f64]) -> Vec<f64>> Residuals for F {
    fn residuals(&self, theta: &[f64]) -> Vec<f64> {
        self(theta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LsqSettings {
    pub max_iterations: usize,
    /// Relative step-size tolerance.
    pub step_tol: f64,
    /// Infinity-norm tolerance on `Jᵀr`.
    pub grad_tol: f64,
    pub initial_lambda: f64,
    pub lambda_factor: f64,
    pub max_lambda: f64,
}

impl Default for LsqSettings {
    fn default() -> Self {
        LsqSettings {
            max_iterations: 200,
            step_tol: 1e-12,
            grad_tol: 1e-15,
            initial_lambda: 1e-3,
            lambda_factor: 10.0,
            max_lambda: 1e16,
        }
    }
}

pub struct LeastSquaresProblem<'a> {
    pub residual: &'a dyn Residuals,
    pub initial: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub settings: LsqSettings,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    StepTolerance,
    GradientTolerance,
    /// Damping saturated without any SSE decrease: a minimum to working
    /// precision.
    NoFurtherDecrease,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub iterations: usize,
    pub converged: bool,
    pub reason: StopReason,
    pub initial_lambda: f64,
    pub lambda_factor: f64,
    pub final_lambda: f64,
    /// SSE at the start followed by the SSE after every accepted step.
    pub sse_history: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LsqSolution {
    pub theta: Vec<f64>,
    pub sse: f64,
    pub residuals: Vec<f64>,
    /// Jacobian at `theta`.
    pub jacobian: Matrix,
    pub report: ConvergenceReport,
}

fn sse_of(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

fn clamp_into(theta: &mut [f64], lower: &[f64], upper: &[f64]) {
    for ((t, lo), hi) in theta.iter_mut().zip(lower).zip(upper) {
        *t = t.clamp(*lo, *hi);
    }
}

/// Central-difference Jacobian with step `max(1e-6, 1e-6 |θ_k|)`.
pub fn finite_difference_jacobian(res: &dyn Residuals, theta: &[f64], m: usize) -> Matrix {
    let p = theta.len();
    let mut jac = Matrix::zeros(m, p);
    let mut probe = theta.to_vec();
    for k in 0..p {
        let h = (1e-6 * theta[k].abs()).max(1e-6);
        probe[k] = theta[k] + h;
        let up = res.residuals(&probe);
        probe[k] = theta[k] - h;
        let dn = res.residuals(&probe);
        probe[k] = theta[k];
        for i in 0..m {
            jac.set(i, k, (up[i] - dn[i]) / (2.0 * h));
        }
    }
    jac
}

fn jacobian_at(res: &dyn Residuals, theta: &[f64], m: usize) -> Matrix {
    res.jacobian(theta)
        .unwrap_or_else(|| finite_difference_jacobian(res, theta, m))
}

pub fn least_squares(p: &LeastSquaresProblem<'_>) -> Result<LsqSolution> {
    let n = p.initial.len();
    if p.lower.len() != n || p.upper.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: p.lower.len().min(p.upper.len()),
        });
    }
    for k in 0..n {
        if !(p.lower[k] <= p.initial[k] && p.initial[k] <= p.upper[k]) {
            return Err(Error::OutOfRange(format!(
                "initial parameter {k} = {} outside [{}, {}]",
                p.initial[k], p.lower[k], p.upper[k]
            )));
        }
    }
    let s = p.settings;
    let mut theta = p.initial.clone();
    let mut r = p.residual.residuals(&theta);
    let m = r.len();
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteResidual);
    }
    let mut sse = sse_of(&r);
    let mut lambda = s.initial_lambda;
    let mut history = vec![sse];
    let mut iterations = 0;
    let mut jac = jacobian_at(p.residual, &theta, m);
    let mut reason = StopReason::MaxIterations;

    'outer: while iterations < s.max_iterations {
        iterations += 1;
        let g = jac.transpose_mul_vec(&r)?;
        if g.iter().all(|v| v.abs() <= s.grad_tol) {
            reason = StopReason::GradientTolerance;
            break;
        }
        let jtj: SymMatrix = jac.gram();
        let diag: Vec<f64> = jtj
            .diagonal()
            .into_iter()
            .map(|d| if d > 0.0 { d } else { 1e-30 })
            .collect();
        let neg_g: Vec<f64> = g.iter().map(|v| -v).collect();
        let mut any_solve = false;
        loop {
            let damped = jtj.add_scaled_diagonal(&diag, lambda);
            if let Ok(f) = cholesky(&damped, 0.0) {
                any_solve = true;
                let delta = solve_chol(&f, &neg_g)?;
                let mut trial: Vec<f64> = theta.iter().zip(&delta).map(|(t, d)| t + d).collect();
                clamp_into(&mut trial, &p.lower, &p.upper);
                let r_trial = p.residual.residuals(&trial);
                let sse_trial = sse_of(&r_trial);
                if sse_trial.is_finite() && sse_trial < sse {
                    let step: f64 = trial
                        .iter()
                        .zip(&theta)
                        .map(|(a, b)| (a - b).powi(2))
                        .sum::<f64>()
                        .sqrt();
                    let norm: f64 = theta.iter().map(|v| v * v).sum::<f64>().sqrt();
                    theta = trial;
                    r = r_trial;
                    sse = sse_trial;
                    history.push(sse);
                    lambda = (lambda / s.lambda_factor).max(1e-300);
                    jac = jacobian_at(p.residual, &theta, m);
                    if step <= s.step_tol * (norm + s.step_tol) {
                        reason = StopReason::StepTolerance;
                        break 'outer;
                    }
                    continue 'outer;
                }
            }
            lambda *= s.lambda_factor;
            if lambda > s.max_lambda {
                if !any_solve {
                    return Err(Error::SingularNormalEquations { lambda });
                }
                reason = StopReason::NoFurtherDecrease;
                break 'outer;
            }
        }
    }

    Ok(LsqSolution {
        theta,
        sse,
        residuals: r,
        jacobian: jac,
        report: ConvergenceReport {
            iterations,
            converged: reason != StopReason::MaxIterations,
            reason,
            initial_lambda: s.initial_lambda,
            lambda_factor: s.lambda_factor,
            final_lambda: lambda,
            sse_history: history,
        },
    })
}

/// Parameter covariance `s² (JᵀJ)⁻¹` with `s² = SSE / (m - p)`.
pub fn covariance(jacobian: &Matrix, sse: f64) -> Option<SymMatrix> {
    let m = jacobian.rows();
    let p = jacobian.cols();
    if m <= p {
        return None;
    }
    let jtj = jacobian.gram();
    let scale = jtj.diagonal().iter().cloned().fold(0.0, f64::max);
    let f = cholesky(&jtj, 1e-8 * scale.max(1e-300)).ok()?;
    let inv = f.inverse();
    let s2 = sse / (m - p) as f64;
    Some(SymMatrix::from_fn(p, |i, j| inv.get(i, j) * s2))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(res: &dyn Residuals, init: Vec<f64>, lo: Vec<f64>, hi: Vec<f64>) -> LsqSolution {
        least_squares(&LeastSquaresProblem {
            residual: res,
            initial: init,
            lower: lo,
            upper: hi,
            settings: LsqSettings::default(),
        })
        .unwrap()
    }

    fn strictly_decreasing(h: &[f64]) -> bool {
        h.windows(2).all(|w| w[1] < w[0])
    }

    #[test]
    fn linear_problem_two_steps() {
        let c = [3.0, -1.5, 0.25];
        let res = |t: &[f64]| t.iter().zip(&c).map(|(a, b)| a - b).collect::<Vec<_>>();
        let sol = run(&res, vec![10.0, 10.0, -7.0], vec![-100.0; 3], vec![100.0; 3]);
        for (a, b) in sol.theta.iter().zip(&c) {
            assert!((a - b).abs() < 1e-10);
        }
        // damping leaves a factor λ/(1+λ) of the error after each step
        let h = &sol.report.sse_history;
        assert!(h[2] <= 1e-12 * h[0]);
        assert!(sol.report.converged);
        assert!(strictly_decreasing(&sol.report.sse_history));
    }

    #[test]
    fn exponential_decay_fit() {
        let xs: Vec<f64> = (0..30).map(|i| i as f64 * 0.2).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.5 * (-0.7 * x).exp() + 0.3).collect();
        let res = move |t: &[f64]| {
            xs.iter()
                .zip(&ys)
                .map(|(x, y)| t[0] * (-t[1] * x).exp() + t[2] - y)
                .collect::<Vec<_>>()
        };
        let sol = run(&res, vec![1.0, 0.2, 0.0], vec![0.0, 0.0, -5.0], vec![10.0, 5.0, 5.0]);
        assert!((sol.theta[0] - 2.5).abs() < 1e-8);
        assert!((sol.theta[1] - 0.7).abs() < 1e-8);
        assert!((sol.theta[2] - 0.3).abs() < 1e-8);
        assert!(strictly_decreasing(&sol.report.sse_history));
    }

    #[test]
    fn bounds_are_respected() {
        let res = |t: &[f64]| vec![t[0] - 5.0, t[1] + 3.0];
        let sol = run(&res, vec![0.0, 0.0], vec![-1.0, -1.0], vec![1.0, 1.0]);
        assert_eq!(sol.theta, vec![1.0, -1.0]);
        assert!(strictly_decreasing(&sol.report.sse_history));
    }

    #[test]
    fn rosenbrock_residuals() {
        let res = |t: &[f64]| vec![10.0 * (t[1] - t[0] * t[0]), 1.0 - t[0]];
        let sol = run(&res, vec![-1.2, 1.0], vec![-5.0; 2], vec![5.0; 2]);
        assert!((sol.theta[0] - 1.0).abs() < 1e-8);
        assert!((sol.theta[1] - 1.0).abs() < 1e-8);
        assert!(strictly_decreasing(&sol.report.sse_history));
    }

    #[test]
    fn errors() {
        let nan = |_: &[f64]| vec![f64::NAN];
        let p = LeastSquaresProblem {
            residual: &nan,
            initial: vec![0.0],
            lower: vec![-1.0],
            upper: vec![1.0],
            settings: LsqSettings::default(),
        };
        assert!(matches!(least_squares(&p), Err(Error::NonFiniteResidual)));

        let ok = |t: &[f64]| vec![t[0]];
        let p = LeastSquaresProblem {
            residual: &ok,
            initial: vec![2.0],
            lower: vec![-1.0],
            upper: vec![1.0],
            settings: LsqSettings::default(),
        };
        assert!(matches!(least_squares(&p), Err(Error::OutOfRange(_))));

        struct BadJacobian;
        impl Residuals for BadJacobian {
            fn residuals(&self, t: &[f64]) -> Vec<f64> {
                vec![t[0] - 0.5, 1.0]
            }
            fn jacobian(&self, _: &[f64]) -> Option<Matrix> {
                Some(Matrix::from_fn(2, 1, |_, _| f64::NAN))
            }
        }
        let p = LeastSquaresProblem {
            residual: &BadJacobian,
            initial: vec![0.0],
            lower: vec![-1.0],
            upper: vec![1.0],
            settings: LsqSettings::default(),
        };
        assert!(matches!(
            least_squares(&p),
            Err(Error::SingularNormalEquations { .. })
        ));
    }

    #[test]
    fn covariance_of_linear_model() {
        // y = a + b x with known design: cov = s² (XᵀX)⁻¹
        let xs = [0.0, 1.0, 2.0, 3.0];
        let jac = Matrix::from_fn(4, 2, |i, k| if k == 0 { 1.0 } else { xs[i] });
        let cov = covariance(&jac, 2.0).unwrap();
        // XᵀX = [[4, 6], [6, 14]], det 20
        let s2 = 1.0;
        assert!((cov.get(0, 0) - s2 * 14.0 / 20.0).abs() < 1e-12);
        assert!((cov.get(0, 1) + s2 * 6.0 / 20.0).abs() < 1e-12);
        assert!((cov.get(1, 1) - s2 * 4.0 / 20.0).abs() < 1e-12);
    }
}
