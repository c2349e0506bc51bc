use nalgebra::{DMatrix, DVector};

use super::{stationary_point, SolverOptions};
use crate::error::{Error, Result};

/// Output of [`solve_active_set`].
#[derive(Debug, Clone)]
pub struct ActiveSetRun {
    pub x: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after each outer iteration; non-increasing.
    pub trace: Vec<f64>,
}

/// Lawson–Hanson active-set method generalised to a linear penalty:
/// minimises `½‖y − A x‖² + γ 1ᵀx` over `x ⪰ 0`.
///
/// With `γ = 0` this is classical NNLS. Each outer iteration frees the
/// coordinate with the largest negative gradient, then an inner loop
/// interpolates back towards feasibility until the passive-set stationary
/// point is strictly positive.
pub fn solve_active_set(
    a: &DMatrix<f64>,
    y: &DVector<f64>,
    gamma: f64,
    opts: &SolverOptions,
) -> Result<ActiveSetRun> {
    let n = a.ncols();
    if y.len() != a.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "observation has {} entries, matrix has {} rows",
            y.len(),
            a.nrows()
        )));
    }
    let objective = |x: &DVector<f64>| 0.5 * (y - a * x).norm_squared() + gamma * x.sum();
    let aty = a.tr_mul(y);
    let tol = 1e-12 * aty.amax().max(gamma).max(1.0) * n as f64;

    let mut x = DVector::zeros(n);
    let mut passive = vec![false; n];
    // atoms whose entry was rejected since the passive set last changed
    let mut blocked = vec![false; n];
    let mut trace = vec![objective(&x)];
    let mut iterations = 0;
    let max_outer = opts.max_iter.max(3 * n);

    loop {
        if iterations >= max_outer {
            return Ok(ActiveSetRun {
                x,
                iterations,
                converged: false,
                trace,
            });
        }
        iterations += 1;

        let w = &aty - a.tr_mul(&(a * &x)) - DVector::from_element(n, gamma);
        let candidate = (0..n)
            .filter(|&j| !passive[j] && !blocked[j])
            .max_by(|&i, &j| w[i].total_cmp(&w[j]))
            .filter(|&j| w[j] > tol);
        let Some(entering) = candidate else {
            break;
        };
        passive[entering] = true;

        let mut first = true;
        loop {
            let idx: Vec<usize> = (0..n).filter(|&j| passive[j]).collect();
            let sub = a.select_columns(&idx);
            let Some(s) = stationary_point(&sub, y, gamma, opts.rank_tol) else {
                if !first {
                    return Err(Error::NumericFailure(
                        "passive set lost full column rank".into(),
                    ));
                }
                // dependent column: leave it out of this round
                passive[entering] = false;
                blocked[entering] = true;
                break;
            };
            if s.iter().all(|&v| v > 0.0) {
                x.fill(0.0);
                for (k, &j) in idx.iter().enumerate() {
                    x[j] = s[k];
                }
                blocked.fill(false);
                break;
            }
            if first {
                if let Some(k) = idx.iter().position(|&j| j == entering) {
                    if s[k] <= 0.0 {
                        // rounding made the entering coordinate unusable
                        passive[entering] = false;
                        blocked[entering] = true;
                        break;
                    }
                }
            }
            first = false;

            let mut alpha = 1.0;
            let mut hit = None;
            for (k, &j) in idx.iter().enumerate() {
                if s[k] <= 0.0 {
                    let step = x[j] / (x[j] - s[k]);
                    if step < alpha {
                        alpha = step;
                        hit = Some(j);
                    }
                }
            }
            for (k, &j) in idx.iter().enumerate() {
                x[j] += alpha * (s[k] - x[j]);
            }
            if let Some(j) = hit {
                x[j] = 0.0;
            }
            for &j in &idx {
                if x[j] <= 0.0 {
                    x[j] = 0.0;
                    passive[j] = false;
                }
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NumericFailure(
                    "non-finite active-set iterate".into(),
                ));
            }
        }

        trace.push(objective(&x));
    }

    Ok(ActiveSetRun {
        x,
        iterations,
        converged: true,
        trace,
    })
}
