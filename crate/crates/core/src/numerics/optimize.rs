//! Multi-start bounded maximization by projected quasi-Newton ascent.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub trait Objective {
    fn value(&self, x: &[f64]) -> f64;

    /// Analytic gradient, if available.
    fn gradient(&self, _x: &[f64]) -> Option<Vec<f64>> {
        None
    }
}

impl<F: Fn(&[f64]) -> f64> Objective for F {
    fn value(&self, x: &[f64]) -> f64 {
        self(x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn uniform(dim: usize, lo: f64, hi: f64) -> Self {
        Bounds {
            lower: vec![lo; dim],
            upper: vec![hi; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(&self.lower)
                .zip(&self.upper)
                .all(|((v, lo), hi)| lo <= v && v <= hi)
    }

    fn clamp(&self, x: &mut [f64]) {
        for ((v, lo), hi) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(*lo, *hi);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaximizeSettings {
    pub max_iterations: usize,
    /// Infinity norm of the projected gradient at which a local run stops.
    pub grad_tol: f64,
    pub step_tol: f64,
    /// Relative central-difference step.
    pub fd_step: f64,
}

impl Default for MaximizeSettings {
    fn default() -> Self {
        MaximizeSettings {
            max_iterations: 2000,
            grad_tol: 1e-6,
            step_tol: 1e-12,
            fd_step: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalAscent {
    pub start: Vec<f64>,
    pub start_value: f64,
    pub argmax: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Maximum {
    pub argmax: Vec<f64>,
    pub value: f64,
    pub runs: Vec<LocalAscent>,
}

/// Central-difference gradient with step `fd_step * max(1, |x_k|)`.
pub fn finite_difference_gradient(obj: &dyn Objective, x: &[f64], fd_step: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|k| {
            let h = fd_step * x[k].abs().max(1.0);
            probe[k] = x[k] + h;
            let up = obj.value(&probe);
            probe[k] = x[k] - h;
            let dn = obj.value(&probe);
            probe[k] = x[k];
            (up - dn) / (2.0 * h)
        })
        .collect()
}

/// Gradient with components that push out of an active bound zeroed.
fn projected(g: &[f64], x: &[f64], b: &Bounds) -> Vec<f64> {
    g.iter()
        .enumerate()
        .map(|(k, &gk)| {
            if (x[k] <= b.lower[k] && gk < 0.0) || (x[k] >= b.upper[k] && gk > 0.0) {
                0.0
            } else {
                gk
            }
        })
        .collect()
}

/// Projected quasi-Newton ascent. Coordinates held at a bound are frozen for
/// the step; the BFGS inverse-Hessian estimate is reset to a scaled identity
/// whenever it stops producing an ascent direction.
fn ascend(obj: &dyn Objective, b: &Bounds, start: &[f64], s: &MaximizeSettings) -> LocalAscent {
    let grad = |x: &[f64]| {
        obj.gradient(x)
            .unwrap_or_else(|| finite_difference_gradient(obj, x, s.fd_step))
    };
    let n = start.len();
    let identity = |scale: f64| -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| (0..n).map(|j| if i == j { scale } else { 0.0 }).collect())
            .collect()
    };
    let mut x = start.to_vec();
    let mut fx = obj.value(&x);
    let start_value = fx;
    let mut g = grad(&x);
    // inverse Hessian of the negated objective
    let mut h = identity(1.0);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < s.max_iterations {
        iterations += 1;
        if g.iter().any(|v| !v.is_finite()) {
            break;
        }
        let pg = projected(&g, &x, b);
        if pg.iter().all(|v| v.abs() <= s.grad_tol) {
            converged = true;
            break;
        }
        let free: Vec<bool> = pg.iter().zip(&g).map(|(p, q)| *p != 0.0 || *q == 0.0).collect();
        let direction = |h: &[Vec<f64>]| -> Vec<f64> {
            (0..n)
                .map(|i| {
                    if !free[i] {
                        return 0.0;
                    }
                    (0..n).filter(|&j| free[j]).map(|j| h[i][j] * g[j]).sum()
                })
                .collect()
        };
        let mut p = direction(&h);
        if p.iter().zip(&pg).map(|(a, c)| a * c).sum::<f64>() <= 0.0 {
            h = identity(1.0);
            p = pg.clone();
        }
        let mut accepted = None;
        let mut t = 1.0;
        while t > 1e-20 {
            let mut y: Vec<f64> = x.iter().zip(&p).map(|(xi, pi)| xi + t * pi).collect();
            b.clamp(&mut y);
            let fy = obj.value(&y);
            let gain: f64 = g.iter().zip(y.iter().zip(&x)).map(|(gi, (a, c))| gi * (a - c)).sum();
            if fy.is_finite() && fy >= fx + 1e-4 * gain && fy > fx {
                accepted = Some((y, fy));
                break;
            }
            t *= 0.5;
        }
        let Some((y, fy)) = accepted else {
            if h != identity(1.0) {
                // retry once with the plain gradient before giving up
                h = identity(1.0);
                continue;
            }
            // no ascent direction left at working precision
            converged = true;
            break;
        };
        let g_new = grad(&y);
        let step: Vec<f64> = y.iter().zip(&x).map(|(a, c)| a - c).collect();
        let step_norm = step.iter().map(|v| v * v).sum::<f64>().sqrt();
        // curvature pair of the negated objective
        let dg: Vec<f64> = g.iter().zip(&g_new).map(|(a, c)| a - c).collect();
        let sy: f64 = step.iter().zip(&dg).map(|(a, c)| a * c).sum();
        if sy > 1e-12 * step_norm * dg.iter().map(|v| v * v).sum::<f64>().sqrt() && sy > 0.0 {
            if h == identity(1.0) {
                let yy: f64 = dg.iter().map(|v| v * v).sum();
                h = identity(sy / yy);
            }
            let hy: Vec<f64> = (0..n).map(|i| (0..n).map(|j| h[i][j] * dg[j]).sum()).collect();
            let yhy: f64 = dg.iter().zip(&hy).map(|(a, c)| a * c).sum();
            let rho = 1.0 / sy;
            for i in 0..n {
                for j in 0..n {
                    h[i][j] += (1.0 + rho * yhy) * rho * step[i] * step[j]
                        - rho * (hy[i] * step[j] + step[i] * hy[j]);
                }
            }
        }
        x = y;
        fx = fy;
        g = g_new;
        if step_norm <= s.step_tol {
            converged = true;
            break;
        }
    }
    LocalAscent {
        start: start.to_vec(),
        start_value,
        argmax: x,
        value: fx,
        iterations,
        converged,
    }
}

/// Runs a local ascent from each start and returns the best optimum.
/// Ties keep the earliest start.
pub fn maximize(
    obj: &dyn Objective,
    bounds: &Bounds,
    starts: &[Vec<f64>],
    settings: &MaximizeSettings,
) -> Result<Maximum> {
    if starts.is_empty() {
        return Err(Error::InvalidParams("no start points".into()));
    }
    for (i, s) in starts.iter().enumerate() {
        if !bounds.contains(s) {
            return Err(Error::OutOfRange(format!("start point {i} outside bounds")));
        }
        if !obj.value(s).is_finite() {
            return Err(Error::NonFiniteObjective { index: i });
        }
    }
    let runs: Vec<LocalAscent> = starts
        .iter()
        .map(|s| ascend(obj, bounds, s, settings))
        .collect();
    let best = runs
        .iter()
        .enumerate()
        .fold(0, |best, (i, r)| if r.value > runs[best].value { i } else { best });
    Ok(Maximum {
        argmax: runs[best].argmax.clone(),
        value: runs[best].value,
        runs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concave_quadratic() {
        let c = [1.5, -2.0, 0.3];
        let f = |x: &[f64]| -x.iter().zip(&c).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        let b = Bounds::uniform(3, -10.0, 10.0);
        let m = maximize(
            &f,
            &b,
            &[vec![0.0; 3], vec![9.0, 9.0, -9.0]],
            &MaximizeSettings::default(),
        )
        .unwrap();
        for (a, b) in m.argmax.iter().zip(&c) {
            assert!((a - b).abs() < 1e-6);
        }
        for r in &m.runs {
            assert!(m.value >= r.start_value);
        }
    }

    #[test]
    fn bimodal_picks_higher_mode() {
        // modes near -2 (height 1) and +3 (height 1.5)
        let f = |x: &[f64]| {
            (-(x[0] + 2.0).powi(2)).exp() + 1.5 * (-(x[0] - 3.0).powi(2) / 0.5).exp()
        };
        let b = Bounds::uniform(1, -6.0, 6.0);
        // dense grid oracle
        let (mut gx, mut gv) = (0.0, f64::NEG_INFINITY);
        for i in 0..=120_000 {
            let x = -6.0 + 12.0 * i as f64 / 120_000.0;
            let v = f(&[x]);
            if v > gv {
                gv = v;
                gx = x;
            }
        }
        let m = maximize(&f, &b, &[vec![-3.0], vec![4.0]], &MaximizeSettings::default()).unwrap();
        assert!((m.argmax[0] - gx).abs() < 1e-3);
        assert!(m.value >= gv - 1e-9);
        let single = maximize(&f, &b, &[vec![-3.0]], &MaximizeSettings::default()).unwrap();
        assert!(single.value >= f(&[-3.0]));
        assert!(single.runs[0].converged, "{:?}", single.runs[0]);
    }

    #[test]
    fn optimum_on_bound() {
        let f = |x: &[f64]| x[0] - x[1] * x[1];
        let b = Bounds::uniform(2, -1.0, 1.0);
        let m = maximize(&f, &b, &[vec![0.0, 0.5]], &MaximizeSettings::default()).unwrap();
        assert_eq!(m.argmax[0], 1.0);
        assert!(m.argmax[1].abs() < 1e-6);
    }

    #[test]
    fn start_errors() {
        let f = |x: &[f64]| if x[0] > 0.0 { f64::NAN } else { 0.0 };
        let b = Bounds::uniform(1, -1.0, 1.0);
        let s = MaximizeSettings::default();
        assert!(matches!(
            maximize(&f, &b, &[vec![-0.5], vec![0.5]], &s),
            Err(Error::NonFiniteObjective { index: 1 })
        ));
        assert!(maximize(&f, &b, &[vec![2.0]], &s).is_err());
        assert!(maximize(&f, &b, &[], &s).is_err());
    }

    struct WithGradient;
    impl Objective for WithGradient {
        fn value(&self, x: &[f64]) -> f64 {
            (x[0] * x[1]).sin() + x[0].powi(3) / 3.0 - x[1].exp()
        }
        fn gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
            let c = (x[0] * x[1]).cos();
            Some(vec![x[1] * c + x[0] * x[0], x[0] * c - x[1].exp()])
        }
    }

    #[test]
    fn finite_difference_matches_analytic() {
        for x in [[0.3, -0.7], [1.2, 0.4], [-2.0, 1.5], [0.05, 0.05]] {
            let a = WithGradient.gradient(&x).unwrap();
            let fd = finite_difference_gradient(&WithGradient, &x, 1e-5);
            for (u, v) in a.iter().zip(&fd) {
                assert!((u - v).abs() <= 1e-4 * u.abs().max(1e-3), "{u} vs {v}");
            }
        }
    }
}
