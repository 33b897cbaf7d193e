//! Damped least squares with projection onto a feasible set.

use nalgebra::{DMatrix, DVector};

#[derive(Clone, Copy, Debug)]
pub(crate) struct LmOptions {
    pub max_iterations: usize,
    /// Stop once the relative cost decrease of an accepted step falls below this.
    pub cost_tol: f64,
    pub step_tol: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self { max_iterations: 400, cost_tol: 1e-14, step_tol: 1e-13 }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct LmResult {
    pub x: Vec<f64>,
    /// Σ r² at `x`.
    pub cost: f64,
    pub jacobian: DMatrix<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Minimizes `Σ rᵢ(x)²`. `residuals` returns r and its Jacobian; `project`
/// maps any trial point back onto the feasible set.
pub(crate) fn levenberg_marquardt(
    mut residuals: impl FnMut(&[f64]) -> (DVector<f64>, DMatrix<f64>),
    project: impl Fn(&mut [f64]),
    x0: &[f64],
    opts: &LmOptions,
) -> LmResult {
    let mut x = x0.to_vec();
    project(&mut x);
    let (mut r, mut j) = residuals(&x);
    let mut cost = r.norm_squared();
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iterations {
        iterations += 1;
        let jtj = j.transpose() * &j;
        let g = j.transpose() * &r;
        if g.amax() <= 1e-300 || cost == 0.0 {
            converged = true;
            break;
        }
        let mut accepted = false;
        while lambda < 1e16 {
            let mut a = jtj.clone();
            for i in 0..a.nrows() {
                a[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
            }
            let Some(step) = a.cholesky().map(|c| c.solve(&(-&g))) else {
                lambda *= 4.0;
                continue;
            };
            let mut trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            project(&mut trial);
            let (tr, tj) = residuals(&trial);
            let tc = tr.norm_squared();
            if tc.is_finite() && tc < cost {
                let moved = trial.iter().zip(&x).map(|(a, b)| (a - b).abs() / (1.0 + b.abs())).fold(0.0, f64::max);
                let relative = (cost - tc) / cost;
                x = trial;
                r = tr;
                j = tj;
                cost = tc;
                lambda = (lambda / 3.0).max(1e-12);
                accepted = true;
                if relative < opts.cost_tol || moved < opts.step_tol {
                    converged = true;
                }
                break;
            }
            lambda *= 4.0;
        }
        if !accepted {
            // No descent direction left at any damping: a (constrained) minimum.
            converged = true;
            break;
        }
        if converged {
            break;
        }
    }
    LmResult { x, cost, jacobian: j, iterations, converged }
}

/// Central-difference Jacobian of `f` at `x`.
pub(crate) fn numeric_jacobian(f: impl Fn(&[f64]) -> DVector<f64>, x: &[f64]) -> DMatrix<f64> {
    let f0 = f(x);
    let mut jac = DMatrix::zeros(f0.len(), x.len());
    let mut xp = x.to_vec();
    for k in 0..x.len() {
        let h = 1e-6 * (1.0 + x[k].abs());
        xp[k] = x[k] + h;
        let fp = f(&xp);
        xp[k] = x[k] - h;
        let fm = f(&xp);
        xp[k] = x[k];
        jac.set_column(k, &((fp - fm) / (2.0 * h)));
    }
    jac
}
