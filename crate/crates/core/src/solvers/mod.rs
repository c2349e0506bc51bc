//! Solvers for the non-negative lasso
//!
//! ```text
//! minimize ½‖y − A x‖₂² + γ 1ᵀx   subject to x ⪰ 0
//! ```
//!
//! and its `γ = 0` special case (NNLS), plus the support-restricted variant,
//! the closed-form restricted solution and KKT certificates.

mod active_set;
mod admm;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    subdictionary, Dictionary, Observation, SubdictionaryCache, Support, DEFAULT_RANK_TOL,
};

pub use active_set::solve_active_set;

/// Tunables shared by every solver entry point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverOptions {
    /// Primal/dual residual tolerance of the splitting iteration.
    pub tol: f64,
    pub max_iter: usize,
    /// Entries below `zero_tol × max entry` are clipped to exactly zero.
    pub zero_tol: f64,
    /// Entry `i` is in the support iff `x_i > support_tol × max(1, ‖x‖∞)`.
    pub support_tol: f64,
    /// Initial augmented-Lagrangian penalty.
    pub penalty: f64,
    /// Residual-balance factor that triggers a penalty rescale.
    pub residual_balance: f64,
    /// Multiplicative penalty update applied on rescale.
    pub penalty_scale: f64,
    /// Dual-feasibility tolerance accepted when polishing on the detected support.
    pub polish_tol: f64,
    /// Tolerance used for the equicorrelation-set uniqueness check.
    pub kkt_tol: f64,
    pub rank_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 20_000,
            zero_tol: 1e-8,
            support_tol: 1e-6,
            penalty: 1.0,
            residual_balance: 10.0,
            penalty_scale: 2.0,
            polish_tol: 1e-9,
            kkt_tol: 1e-7,
            rank_tol: DEFAULT_RANK_TOL,
        }
    }
}

impl SolverOptions {
    /// Absolute support threshold for a given solution vector.
    pub fn support_threshold(&self, x: &DVector<f64>) -> f64 {
        self.support_tol * x.amax().max(1.0)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("tol", self.tol),
            ("penalty", self.penalty),
            ("residual_balance", self.residual_balance),
            ("rank_tol", self.rank_tol),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{} must be positive", name)));
            }
        }
        if self.penalty_scale.is_nan() || self.penalty_scale <= 1.0 {
            return Err(Error::InvalidArgument("penalty_scale must exceed 1".into()));
        }
        for (name, v) in [
            ("zero_tol", self.zero_tol),
            ("support_tol", self.support_tol),
            ("polish_tol", self.polish_tol),
            ("kkt_tol", self.kkt_tol),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "{} must be non-negative",
                    name
                )));
            }
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidArgument("max_iter must be positive".into()));
        }
        Ok(())
    }
}

/// A dictionary, an observation and a trade-off `γ ≥ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    dict: Dictionary,
    y: Observation,
    gamma: f64,
}

impl Problem {
    pub fn new(dict: Dictionary, y: Observation, gamma: f64) -> Result<Self> {
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "gamma must be finite and >= 0, got {}",
                gamma
            )));
        }
        if y.len() != dict.num_rows() {
            return Err(Error::DimensionMismatch(format!(
                "observation has {} entries, dictionary has {} rows",
                y.len(),
                dict.num_rows()
            )));
        }
        Ok(Self { dict, y, gamma })
    }

    pub fn dict(&self) -> &Dictionary {
        &self.dict
    }

    pub fn y(&self) -> &DVector<f64> {
        self.y.values()
    }

    pub fn observation(&self) -> &Observation {
        &self.y
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Same data, different trade-off.
    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        Self::new(self.dict.clone(), self.y.clone(), gamma)
    }

    /// `½‖y − A x‖² + γ Σ x_i`.
    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        let r = self.y() - self.dict.matrix() * x;
        0.5 * r.norm_squared() + self.gamma * x.sum()
    }

    /// Smallest γ at which `x = 0` is optimal, `max(0, max_j a_jᵀy)`.
    pub fn zero_solution_gamma(&self) -> f64 {
        self.dict.matrix().tr_mul(self.y()).max().max(0.0)
    }
}

/// Stationarity, feasibility and complementarity residuals of a candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KKTCertificate {
    /// Multipliers `λ̂_j = γ − a_jᵀ(y − A x)`.
    #[serde(with = "crate::serde_vec")]
    pub stationarity_residuals: DVector<f64>,
    pub complementarity_max: f64,
    pub dual_feasibility_min: f64,
    pub primal_feasibility_min: f64,
}

impl KKTCertificate {
    pub fn is_optimal(&self, kkt_tol: f64) -> bool {
        self.dual_feasibility_min >= -kkt_tol
            && self.primal_feasibility_min >= -kkt_tol
            && self.complementarity_max <= kkt_tol
    }

    /// Optimality for the problem restricted to `support`: only the
    /// multipliers and coordinates inside `support` are checked.
    pub fn is_optimal_on(&self, support: &Support, x: &DVector<f64>, kkt_tol: f64) -> bool {
        support.indices().iter().all(|&j| {
            let lam = self.stationarity_residuals[j];
            lam >= -kkt_tol && x[j] >= -kkt_tol && (lam * x[j]).abs() <= kkt_tol
        })
    }
}

pub fn kkt_certificate(p: &Problem, x: &DVector<f64>) -> KKTCertificate {
    let residual = p.y() - p.dict().matrix() * x;
    let lam = p.dict().matrix().tr_mul(&residual).map(|c| p.gamma() - c);
    let complementarity_max = lam
        .iter()
        .zip(x.iter())
        .map(|(l, v)| (l * v).abs())
        .fold(0.0, f64::max);
    KKTCertificate {
        complementarity_max,
        dual_feasibility_min: lam.min(),
        primal_feasibility_min: x.min(),
        stationarity_residuals: lam,
    }
}

/// A minimiser returned by one of the solvers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    #[serde(with = "crate::serde_vec")]
    pub x: DVector<f64>,
    pub objective: f64,
    pub support: Support,
    pub kkt: KKTCertificate,
    pub iterations: usize,
    pub converged: bool,
    /// Set when the minimiser may not be unique (dependent atoms among the
    /// support and its zero-multiplier atoms, or a rank-deficient restriction).
    pub possibly_nonunique: bool,
    /// Objective of each accepted iterate.
    #[serde(skip)]
    pub objective_trace: Vec<f64>,
}

fn finish(
    p: &Problem,
    mut x: DVector<f64>,
    iterations: usize,
    converged: bool,
    objective_trace: Vec<f64>,
    opts: &SolverOptions,
) -> Result<Solution> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericFailure("non-finite solution".into()));
    }
    let clip = opts.zero_tol * x.amax();
    x.iter_mut().for_each(|v| {
        if *v < clip {
            *v = 0.0
        }
    });
    let support = Support::above(&x, opts.support_threshold(&x));
    let kkt = kkt_certificate(p, &x);
    let possibly_nonunique = equicorrelation_dependent(p, &support, &kkt, opts);
    Ok(Solution {
        objective: p.objective(&x),
        x,
        support,
        kkt,
        iterations,
        converged,
        possibly_nonunique,
        objective_trace,
    })
}

fn equicorrelation_dependent(
    p: &Problem,
    support: &Support,
    kkt: &KKTCertificate,
    opts: &SolverOptions,
) -> bool {
    let set: Vec<usize> = (0..p.dict().num_cols())
        .filter(|&j| support.contains(j) || kkt.stationarity_residuals[j].abs() <= opts.kkt_tol)
        .collect();
    if set.is_empty() {
        return false;
    }
    let sub = subdictionary(
        p.dict(),
        &Support::new(set.clone(), p.dict().num_cols()).expect("sorted"),
    )
    .expect("valid support");
    numeric_rank(&sub, opts.rank_tol) < set.len()
}

pub(crate) fn numeric_rank(m: &DMatrix<f64>, rank_tol: f64) -> usize {
    if m.ncols() == 0 {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let smax = sv.max();
    sv.iter()
        .filter(|&&s| smax > 0.0 && s > rank_tol * smax)
        .count()
}

/// Stationary point of the objective over the columns of `a`, i.e.
/// `a† y − γ (aᵀa)⁻¹ 1`; `None` when `a` is rank deficient.
pub(crate) fn stationary_point(
    a: &DMatrix<f64>,
    y: &DVector<f64>,
    gamma: f64,
    rank_tol: f64,
) -> Option<DVector<f64>> {
    let j = a.ncols();
    let svd = a.clone().svd(true, true);
    let u = svd.u.as_ref()?;
    let v_t = svd.v_t.as_ref()?;
    let smax = svd.singular_values.max();
    if svd.singular_values.len() < j
        || svd
            .singular_values
            .iter()
            .any(|&s| s.is_nan() || s <= rank_tol * smax)
    {
        return None;
    }
    // V Σ⁻¹ Uᵀ y − γ V Σ⁻² Vᵀ 1
    let ones = DVector::from_element(j, 1.0);
    let uty = u.tr_mul(y);
    let vt1 = v_t * &ones;
    let coef = DVector::from_fn(j, |k, _| {
        let s = svd.singular_values[k];
        uty[k] / s - gamma * vt1[k] / (s * s)
    });
    Some(v_t.tr_mul(&coef))
}

/// Solves the non-negative lasso by variable splitting with an augmented
/// Lagrangian (scaled-dual ADMM with residual balancing), followed by a
/// polishing step that re-solves exactly on the detected support and keeps
/// the polished point only when it is KKT-certified.
pub fn solve_nlasso(p: &Problem, opts: &SolverOptions) -> Result<Solution> {
    opts.validate()?;
    let run = admm::run(p.dict().matrix(), p.y(), p.gamma(), opts)?;
    let mut x = run.z;
    let mut converged = run.converged;
    let mut trace = run.trace;

    let detected = Support::above(&x, opts.zero_tol * x.amax());
    if let Some(polished) = polish(p, &detected, opts) {
        let f = p.objective(&polished);
        if trace
            .last()
            .is_none_or(|&last| f <= last + 1e-12 * last.abs().max(1.0))
        {
            trace.push(f);
            x = polished;
            converged = true;
        }
    }
    finish(p, x, run.iterations, converged, trace, opts)
}

fn polish(p: &Problem, support: &Support, opts: &SolverOptions) -> Option<DVector<f64>> {
    let n = p.dict().num_cols();
    let mut x = DVector::zeros(n);
    if !support.is_empty() {
        let sub = subdictionary(p.dict(), support).ok()?;
        let v = stationary_point(&sub, p.y(), p.gamma(), opts.rank_tol)?;
        if v.iter().any(|&c| c.is_nan() || c <= 0.0) {
            return None;
        }
        for (k, &j) in support.indices().iter().enumerate() {
            x[j] = v[k];
        }
    }
    let kkt = kkt_certificate(p, &x);
    let scale = p.y().norm().max(1.0)
        * p.dict()
            .matrix()
            .column_iter()
            .map(|c| c.norm())
            .fold(0.0, f64::max);
    (kkt.dual_feasibility_min >= -opts.polish_tol * scale.max(1.0)).then_some(x)
}

/// Non-negative least squares by a Lawson–Hanson active-set method.
pub fn solve_nnls(dict: &Dictionary, y: &Observation, opts: &SolverOptions) -> Result<Solution> {
    opts.validate()?;
    let p = Problem::new(dict.clone(), y.clone(), 0.0)?;
    let run = solve_active_set(dict.matrix(), p.y(), 0.0, opts)?;
    finish(&p, run.x, run.iterations, run.converged, run.trace, opts)
}

/// Solves the problem over the atoms in `support` only; the result is
/// zero-padded to length `N`. `possibly_nonunique` is set when the
/// subdictionary is rank deficient.
pub fn solve_restricted(p: &Problem, support: &Support, opts: &SolverOptions) -> Result<Solution> {
    opts.validate()?;
    if support.is_empty() {
        return Err(Error::InvalidSupport(
            "restricted problem needs a nonempty support".into(),
        ));
    }
    let sub = subdictionary(p.dict(), support)?;
    let run = solve_active_set(&sub, p.y(), p.gamma(), opts)?;
    let mut x = DVector::zeros(p.dict().num_cols());
    for (k, &j) in support.indices().iter().enumerate() {
        x[j] = run.x[k];
    }
    let mut sol = finish(p, x, run.iterations, run.converged, run.trace, opts)?;
    sol.possibly_nonunique = numeric_rank(&sub, opts.rank_tol) < support.len();
    Ok(sol)
}

/// `A_Λ† y − γ (A_Λᵀ A_Λ)⁻¹ 1`. Not necessarily feasible: callers check
/// positivity before treating it as the restricted optimum.
pub fn restricted_closed_form(
    cache: &SubdictionaryCache,
    y: &DVector<f64>,
    gamma: f64,
) -> Result<DVector<f64>> {
    let gram_inv = cache.require_full_rank()?;
    let ones = DVector::from_element(cache.size(), 1.0);
    Ok(cache.coordinates(y) - gram_inv * ones * gamma)
}

/// Zero-pads a length-`J` vector over `support` to length `n`.
pub fn zero_pad(v: &DVector<f64>, support: &Support, n: usize) -> DVector<f64> {
    let mut x = DVector::zeros(n);
    for (k, &j) in support.indices().iter().enumerate() {
        x[j] = v[k];
    }
    x
}
