//! Brute-force ground truth for small dictionaries.
//!
//! The enumeration never calls the iterative or active-set solvers: every
//! candidate is the stationary point of the objective on one support, obtained
//! from a Cholesky factorisation of the Gram submatrix and kept only when it
//! is non-negative. The restricted optimum on any support is the best such
//! candidate over its subsets, so the minimum over all supports is the global
//! optimum.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{Dictionary, Observation, Support};
use crate::solvers::{kkt_certificate, Problem};

/// Largest dictionary the enumeration accepts.
pub const MAX_ENUMERATION_ATOMS: usize = 16;
/// Largest dictionary for which per-support objectives are recorded.
pub const MAX_RECORDED_ATOMS: usize = 12;
/// Objectives within this relative distance are ties.
pub const TIE_TOL: f64 = 1e-9;
/// KKT tolerance used to certify the winner.
pub const CERTIFY_KKT_TOL: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub best_support: Support,
    pub best_x: DVector<f64>,
    pub best_objective: f64,
    /// Optimal restricted objective for every enumerated support.
    pub per_support_objectives: Option<BTreeMap<Support, f64>>,
    /// Whether `best_x` passes the KKT conditions of the full problem.
    pub certified: bool,
}

struct Candidate {
    support: Vec<usize>,
    x: DVector<f64>,
    objective: f64,
}

/// Supports of size `0..=max_size` ordered by size, then lexicographically.
fn supports_in_order(n: usize, max_size: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for k in 1..=max_size.min(n) {
        let mut idx: Vec<usize> = (0..k).collect();
        loop {
            out.push(idx.clone());
            let Some(pos) = (0..k).rev().find(|&i| idx[i] < n - k + i) else {
                break;
            };
            idx[pos] += 1;
            for i in pos + 1..k {
                idx[i] = idx[i - 1] + 1;
            }
        }
    }
    out
}

fn interior_candidate(
    a: &DMatrix<f64>,
    y: &DVector<f64>,
    gram: &DMatrix<f64>,
    linear: &DVector<f64>,
    gamma: f64,
    support: &[usize],
) -> Option<(DVector<f64>, f64)> {
    let k = support.len();
    if k == 0 {
        return Some((DVector::zeros(0), 0.5 * y.norm_squared()));
    }
    let g = DMatrix::from_fn(k, k, |r, c| gram[(support[r], support[c])]);
    let b = DVector::from_fn(k, |r, _| linear[support[r]]);
    let v = g.cholesky()?.solve(&b);
    if v.iter().any(|c| c.is_nan() || *c < 0.0) {
        return None;
    }
    let mut fit = DVector::zeros(y.len());
    for (r, &j) in support.iter().enumerate() {
        fit += a.column(j) * v[r];
    }
    let objective = 0.5 * (y - fit).norm_squared() + gamma * v.sum();
    Some((v, objective))
}

fn enumerate(
    dict: &Dictionary,
    y: &DVector<f64>,
    gamma: f64,
    max_support: usize,
) -> Result<OracleResult> {
    let n = dict.num_cols();
    if n > MAX_ENUMERATION_ATOMS {
        return Err(Error::TooLarge {
            n,
            max: MAX_ENUMERATION_ATOMS,
        });
    }
    if max_support > n {
        return Err(Error::InvalidArgument(format!(
            "support size limit {} exceeds {} atoms",
            max_support, n
        )));
    }
    let a = dict.matrix();
    let gram = a.tr_mul(a);
    let linear = a.tr_mul(y).map(|c| c - gamma);

    let supports = supports_in_order(n, max_support);
    let candidates: Vec<Option<Candidate>> = supports
        .par_iter()
        .map(|s| {
            interior_candidate(a, y, &gram, &linear, gamma, s).map(|(x, objective)| Candidate {
                support: s.clone(),
                x,
                objective,
            })
        })
        .collect();

    // sequential merge keeps the tie-break independent of scheduling
    let scale = 0.5 * y.norm_squared();
    let mut best: Option<&Candidate> = None;
    for c in candidates.iter().flatten() {
        let replace = match best {
            None => true,
            Some(b) => {
                let tie = TIE_TOL * b.objective.abs().max(c.objective.abs()).max(scale);
                c.objective < b.objective - tie
            }
        };
        if replace {
            best = Some(c);
        }
    }
    let best = best.expect("empty support is always a candidate");

    let mut best_x = DVector::zeros(n);
    for (r, &j) in best.support.iter().enumerate() {
        best_x[j] = best.x[r];
    }
    let p = Problem::new(dict.clone(), Observation::new(y.clone())?, gamma)?;
    let certified = kkt_certificate(&p, &best_x).is_optimal(CERTIFY_KKT_TOL * scale.max(1.0));

    let per_support_objectives = (n <= MAX_RECORDED_ATOMS).then(|| {
        // restricted optimum = best interior candidate over all subsets
        let mut by_mask = vec![f64::INFINITY; 1usize << n];
        for (s, c) in supports.iter().zip(candidates.iter()) {
            let mask = s.iter().fold(0usize, |m, &j| m | (1 << j));
            if let Some(c) = c {
                by_mask[mask] = c.objective;
            }
        }
        let mut out = BTreeMap::new();
        for s in &supports {
            let mask = s.iter().fold(0usize, |m, &j| m | (1 << j));
            for &j in s {
                let sub = by_mask[mask & !(1 << j)];
                if sub < by_mask[mask] {
                    by_mask[mask] = sub;
                }
            }
            out.insert(Support::new(s.clone(), n).expect("ordered"), by_mask[mask]);
        }
        out
    });

    Ok(OracleResult {
        best_support: Support::new(best.support.clone(), n).expect("ordered"),
        best_x,
        best_objective: best.objective,
        per_support_objectives,
        certified,
    })
}

/// Global minimiser over all supports of size at most `max_support`.
pub fn enumerate_global(p: &Problem, max_support: usize) -> Result<OracleResult> {
    enumerate(p.dict(), p.y(), p.gamma(), max_support)
}

/// Cardinality-constrained NNLS, `min ½‖y − A x‖²` s.t. `x ⪰ 0`, `‖x‖₀ ≤ k`.
///
/// Ties in error are broken by fewer atoms first, then by the
/// lexicographically smallest support.
pub fn cardinality_nnls(dict: &Dictionary, y: &Observation, k: usize) -> Result<OracleResult> {
    if y.len() != dict.num_rows() {
        return Err(Error::DimensionMismatch(
            "observation length differs from dictionary rows".into(),
        ));
    }
    enumerate(dict, y.values(), 0.0, k)
}

/// Samples random feasible perturbations `Δx` (entries may go negative only
/// down to `−x_j` where `x_j > 0`) of size `step` and returns the largest
/// objective decrease seen. Non-positive at an optimum, up to rounding.
pub fn feasible_direction_probe(
    p: &Problem,
    x: &DVector<f64>,
    trials: usize,
    step: f64,
    seed: u64,
) -> f64 {
    let a = p.dict().matrix();
    let n = a.ncols();
    let residual = p.y() - a * x;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let change = |d: &DVector<f64>| {
        let ad = a * d;
        0.5 * ad.norm_squared() - residual.dot(&ad) + p.gamma() * d.sum()
    };

    let mut worst = f64::NEG_INFINITY;
    for t in 0..trials {
        let mut d = DVector::zeros(n);
        if t < 2 * n {
            // coordinate directions first
            let j = t / 2;
            let sign = if t % 2 == 0 { 1.0 } else { -1.0 };
            d[j] = (sign * step).max(-x[j]);
        } else {
            for j in 0..n {
                if rng.random_bool(0.5) {
                    let lo = if x[j] > 0.0 { -1.0 } else { 0.0 };
                    d[j] = (step * rng.random_range(lo..=1.0)).max(-x[j]);
                }
            }
        }
        if d.iter().all(|&v| v == 0.0) {
            continue;
        }
        worst = worst.max(-change(&d));
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn supports_are_ordered() {
        let s = supports_in_order(3, 2);
        assert_eq!(
            s,
            vec![
                vec![],
                vec![0],
                vec![1],
                vec![2],
                vec![0, 1],
                vec![0, 2],
                vec![1, 2]
            ]
        );
        assert_eq!(supports_in_order(16, 16).len(), 1 << 16);
    }

    #[test]
    fn identity_global_optimum() {
        let p = Problem::new(
            Dictionary::identity(2),
            Observation::from_slice(&[1.0, 0.0]).unwrap(),
            0.5,
        )
        .unwrap();
        let r = enumerate_global(&p, 2).unwrap();
        assert_eq!(r.best_support.indices(), &[0]);
        assert!((r.best_x[0] - 0.5).abs() < 1e-15);
        assert!((r.best_objective - 0.375).abs() < 1e-15);
        assert!(r.certified);
        let map = r.per_support_objectives.unwrap();
        assert_eq!(map.len(), 4);
        assert!((map[&Support::new(vec![0, 1], 2).unwrap()] - 0.375).abs() < 1e-15);
    }

    #[test]
    fn large_gamma_gives_zero() {
        let d = Dictionary::new(DMatrix::from_row_slice(
            2,
            3,
            &[1.0, 0.5, 0.2, 0.3, 1.0, 0.9],
        ))
        .unwrap();
        let y = Observation::from_slice(&[0.4, 0.7]).unwrap();
        let p = Problem::new(d, y, 0.0).unwrap();
        let p = p.with_gamma(p.zero_solution_gamma() * 1.01).unwrap();
        let r = enumerate_global(&p, 3).unwrap();
        assert!(r.best_support.is_empty());
        assert!(r.best_x.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn guard_refuses_large_dictionaries() {
        let d = Dictionary::new(DMatrix::from_fn(3, 17, |r, c| (r + c + 1) as f64)).unwrap();
        let p = Problem::new(d, Observation::from_slice(&[1.0, 1.0, 1.0]).unwrap(), 0.1).unwrap();
        assert!(matches!(
            enumerate_global(&p, 2),
            Err(Error::TooLarge { n: 17, .. })
        ));
    }

    #[test]
    fn cardinality_tie_break() {
        let d = Dictionary::identity(2);
        let r = cardinality_nnls(&d, &Observation::from_slice(&[0.5, 0.5]).unwrap(), 1).unwrap();
        assert_eq!(r.best_support.indices(), &[0]);
        assert!((r.best_objective - 0.125).abs() < 1e-15);

        // with k = N the constraint is inactive
        let r = cardinality_nnls(&d, &Observation::from_slice(&[0.5, 0.5]).unwrap(), 2).unwrap();
        assert_eq!(r.best_support.indices(), &[0, 1]);
        assert!(r.best_objective.abs() < 1e-30);
        assert!(r.certified);
    }

    #[test]
    fn probe_detects_improvement_at_zero() {
        let p = Problem::new(
            Dictionary::identity(2),
            Observation::from_slice(&[1.0, 0.0]).unwrap(),
            0.1,
        )
        .unwrap();
        let x = DVector::zeros(2);
        let step = 1e-4;
        let dec = feasible_direction_probe(&p, &x, 100, step, 1);
        assert!(dec > 0.0);
        // first-order rate matches the negative multiplier −λ̂₀ = 0.9
        let lam = kkt_certificate(&p, &x).stationarity_residuals[0];
        assert!((dec / step + lam).abs() < 1e-3);

        let opt = DVector::from_vec(vec![0.9, 0.0]);
        assert!(feasible_direction_probe(&p, &opt, 1000, 1e-3, 2) <= 1e-12);
    }
}
