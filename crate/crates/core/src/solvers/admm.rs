use nalgebra::{DMatrix, DVector};

use super::SolverOptions;
use crate::error::{Error, Result};

pub(super) struct AdmmRun {
    /// Best feasible splitting iterate.
    pub z: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Objective of each accepted (improving) feasible iterate.
    pub trace: Vec<f64>,
}

const RESCALE_EVERY: usize = 10;

/// Scaled-form ADMM on `x = z`, with the quadratic term on `x` and the
/// linear penalty plus non-negativity on `z`:
///
/// ```text
/// x ← (AᵀA + ρI)⁻¹ (Aᵀy + ρ(z − u))
/// z ← max(0, x + u − γ/ρ)
/// u ← u + x − z
/// ```
pub(super) fn run(
    a: &DMatrix<f64>,
    y: &DVector<f64>,
    gamma: f64,
    opts: &SolverOptions,
) -> Result<AdmmRun> {
    let n = a.ncols();
    let gram = a.tr_mul(a);
    let aty = a.tr_mul(y);
    let objective = |z: &DVector<f64>| {
        let r = y - a * z;
        0.5 * r.norm_squared() + gamma * z.sum()
    };

    let mut rho = opts.penalty;
    let mut factor = factorize(&gram, rho)?;
    let mut z = DVector::zeros(n);
    let mut u = DVector::zeros(n);
    let mut best = z.clone();
    let mut best_obj = objective(&z);
    let mut trace = vec![best_obj];
    let mut converged = false;
    let mut iterations = 0;

    for k in 1..=opts.max_iter {
        iterations = k;
        let x = factor.solve(&(&aty + (&z - &u) * rho));
        let z_prev = std::mem::replace(&mut z, (&x + &u).map(|v| (v - gamma / rho).max(0.0)));
        u += &x - &z;

        if x.iter().chain(u.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NumericFailure(format!(
                "non-finite iterate at iteration {}",
                k
            )));
        }

        let f = objective(&z);
        if f <= best_obj {
            best_obj = f;
            best.copy_from(&z);
            trace.push(f);
        }

        let primal = (&x - &z).norm();
        let dual = rho * (&z - &z_prev).norm();
        let eps_primal = opts.tol * x.norm().max(z.norm()).max(1.0);
        let eps_dual = opts.tol * (rho * u.norm()).max(1.0);
        if primal <= eps_primal && dual <= eps_dual {
            converged = true;
            break;
        }

        if k % RESCALE_EVERY == 0 {
            let new_rho = if primal > opts.residual_balance * dual {
                rho * opts.penalty_scale
            } else if dual > opts.residual_balance * primal {
                rho / opts.penalty_scale
            } else {
                rho
            };
            if new_rho != rho {
                u *= rho / new_rho;
                rho = new_rho;
                factor = factorize(&gram, rho)?;
            }
        }
    }

    Ok(AdmmRun {
        z: best,
        iterations,
        converged,
        trace,
    })
}

fn factorize(gram: &DMatrix<f64>, rho: f64) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let n = gram.nrows();
    (gram + DMatrix::identity(n, n) * rho)
        .cholesky()
        .ok_or_else(|| {
            Error::NumericFailure("penalised Gram matrix is not positive definite".into())
        })
}
