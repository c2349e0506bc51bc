//! Recovery metrics (ERC, PSC, PERC) and the model-recovery conditions built
//! on them. Every check reports signed margins (positive = satisfied with
//! room to spare); verdicts are sign tests on those margins.

use std::collections::BTreeMap;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    build_cache, inf_inf_norm, Dictionary, GroundTruth, SubdictionaryCache, Support,
    DEFAULT_RANK_TOL,
};
use crate::solvers::{solve_restricted, Problem, Solution, SolverOptions};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConditionOptions {
    /// Strict inequalities hold iff `margin > strict_tol`.
    pub strict_tol: f64,
    pub rank_tol: f64,
    /// KKT tolerance a restricted solution must meet before the base
    /// conditions are evaluated on it.
    pub restricted_kkt_tol: f64,
    pub solver: SolverOptions,
}

impl Default for ConditionOptions {
    fn default() -> Self {
        Self {
            strict_tol: 0.0,
            rank_tol: DEFAULT_RANK_TOL,
            restricted_kkt_tol: 1e-8,
            solver: SolverOptions::default(),
        }
    }
}

fn outside_atoms(dict: &Dictionary, support: &Support) -> Result<Vec<usize>> {
    let outside = support.complement(dict.num_cols());
    if outside.is_empty() {
        return Err(Error::EmptyComplement);
    }
    Ok(outside)
}

/// `ERC(Λ) = 1 − max_{n∉Λ} ‖A_Λ† a_n‖₁`.
pub fn erc(dict: &Dictionary, support: &Support, cache: &SubdictionaryCache) -> Result<f64> {
    cache.require_full_rank()?;
    let worst = outside_atoms(dict, support)?
        .into_iter()
        .map(|n| cache.coordinates(&dict.atom(n)).lp_norm(1))
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(1.0 - worst)
}

/// `PSC(Λ; j) = 1 − 1ᵀ A_Λ† a_j`.
///
/// Positive when the projection of `a_j` onto `range(A_Λ)` lies on the
/// origin's side of the affine hull of the support atoms, zero on it,
/// negative beyond it.
pub fn psc(cache: &SubdictionaryCache, atom: &DVector<f64>) -> Result<f64> {
    cache.require_full_rank()?;
    Ok(1.0 - cache.coordinates(atom).sum())
}

/// `PERC(Λ) = min_{j∉Λ} PSC(Λ; j)`.
pub fn perc(dict: &Dictionary, support: &Support, cache: &SubdictionaryCache) -> Result<f64> {
    let mut worst = f64::INFINITY;
    for j in outside_atoms(dict, support)? {
        worst = worst.min(psc(cache, &dict.atom(j))?);
    }
    Ok(worst)
}

/// Margins of the minimum-coefficient and nonlinearity-vs-subset-coherence
/// conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApmrcMargins {
    /// `(A_Λ† y)_i − γ ((A_ΛᵀA_Λ)⁻¹ 1)_i` for each position in the support.
    pub mcc_margins: Vec<f64>,
    pub mcc_margin: f64,
    /// `γ PSC(Λ; j) − yᵀ P⊥_Λ a_j` for each `j ∉ Λ`.
    pub nscc_margins: BTreeMap<usize, f64>,
}

impl ApmrcMargins {
    pub fn min_nscc_margin(&self) -> f64 {
        self.nscc_margins
            .values()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    pub fn mcc_holds(&self, strict_tol: f64) -> bool {
        self.mcc_margin > strict_tol
    }

    pub fn verdict(&self, strict_tol: f64) -> bool {
        self.mcc_holds(strict_tol) && self.min_nscc_margin() > strict_tol
    }
}

pub fn check_apmrc(
    p: &Problem,
    support: &Support,
    cache: &SubdictionaryCache,
) -> Result<ApmrcMargins> {
    let gram_inv = cache.require_full_rank()?;
    let dict = p.dict();
    let gamma = p.gamma();
    let ls = cache.coordinates(p.y());
    let pull = gram_inv * DVector::from_element(cache.size(), 1.0);
    let mcc_margins: Vec<f64> = ls
        .iter()
        .zip(pull.iter())
        .map(|(c, g)| c - gamma * g)
        .collect();
    let mcc_margin = mcc_margins.iter().copied().fold(f64::INFINITY, f64::min);

    let residual = cache.project_out(p.y());
    let mut nscc_margins = BTreeMap::new();
    for j in outside_atoms(dict, support)? {
        let aj = dict.atom(j);
        nscc_margins.insert(j, gamma * psc(cache, &aj)? - residual.dot(&aj));
    }
    Ok(ApmrcMargins {
        mcc_margins,
        mcc_margin,
        nscc_margins,
    })
}

/// `γ PERC(Λ) − max_{j∉Λ} a_jᵀ P⊥_Λ y`.
pub fn check_perc_max(p: &Problem, support: &Support, cache: &SubdictionaryCache) -> Result<f64> {
    let residual = cache.project_out(p.y());
    let worst = outside_atoms(p.dict(), support)?
        .into_iter()
        .map(|j| p.dict().atom(j).dot(&residual))
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(p.gamma() * perc(p.dict(), support, cache)? - worst)
}

/// `γ PERC(Λ) − ‖Aᵀ P⊥_Λ y‖∞`, the maximum taken over all atoms.
pub fn check_perc_amax(p: &Problem, support: &Support, cache: &SubdictionaryCache) -> Result<f64> {
    let perc = perc(p.dict(), support, cache)?;
    let residual = cache.project_out(p.y());
    Ok(p.gamma() * perc - p.dict().matrix().tr_mul(&residual).amax())
}

/// Margins of the ERC-based condition, which needs the generating
/// coefficients and distortion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErcMrcMargins {
    pub erc: f64,
    /// `γ ERC − ‖Aᵀ P⊥_Λ e‖∞`; the inequality is non-strict.
    pub noise_margin: f64,
    /// `min_i x_i − (γ ‖(A_ΛᵀA_Λ)⁻¹‖∞,∞ − (A_Λ† e)_i)`; strict.
    pub coef_margin: f64,
}

impl ErcMrcMargins {
    pub fn verdict(&self, strict_tol: f64) -> bool {
        self.erc >= 0.0 && self.noise_margin >= 0.0 && self.coef_margin > strict_tol
    }
}

pub fn check_erc_mrc(
    truth: &GroundTruth,
    dict: &Dictionary,
    support: &Support,
    cache: &SubdictionaryCache,
    gamma: f64,
) -> Result<ErcMrcMargins> {
    let gram_inv = cache.require_full_rank()?;
    let n = dict.num_cols();
    if truth.coefficients().len() != n || truth.distortion().len() != dict.num_rows() {
        return Err(Error::DimensionMismatch(
            "ground truth does not match dictionary".into(),
        ));
    }
    let erc = erc(dict, support, cache)?;
    let e = truth.distortion();
    let noise = noise_correlation(dict, cache, e);
    let bound = gamma * inf_inf_norm(gram_inv);
    let w = cache.coordinates(e);
    let coef_margin = support
        .indices()
        .iter()
        .enumerate()
        .map(|(k, &j)| truth.coefficients()[j] - (bound - w[k]))
        .fold(f64::INFINITY, f64::min);
    Ok(ErcMrcMargins {
        erc,
        noise_margin: gamma * erc - noise,
        coef_margin,
    })
}

/// `‖Aᵀ(y − A_Λ A_Λ† y)‖∞`, evaluated through the explicit least-squares fit.
pub fn correlation_residual(
    dict: &Dictionary,
    cache: &SubdictionaryCache,
    y: &DVector<f64>,
) -> f64 {
    let fit = cache.atoms() * cache.coordinates(y);
    dict.matrix().tr_mul(&(y - fit)).amax()
}

/// `‖Aᵀ P⊥_Λ e‖∞`.
pub fn noise_correlation(dict: &Dictionary, cache: &SubdictionaryCache, e: &DVector<f64>) -> f64 {
    dict.matrix().tr_mul(&cache.project_out(e)).amax()
}

/// Outcome of the restricted-solution based conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseCheck {
    /// `γ − (y − A_Λ v̂_Λ)ᵀ a_j` for each `j ∉ Λ`.
    pub margins: BTreeMap<usize, f64>,
    pub verdict: bool,
    /// The restricted problem may have other minimisers that were not
    /// examined, so the verdict covers only the returned one.
    pub partial: bool,
}

/// Checks `(y − A_Λ v̂_Λ)ᵀ a_j < γ` (strict) or `≤ γ` (weak) for all
/// `j ∉ Λ`, given a KKT-certified restricted solution `v̂` zero-padded to `N`.
pub fn check_base(
    p: &Problem,
    support: &Support,
    restricted: &Solution,
    strict: bool,
    opts: &ConditionOptions,
) -> Result<BaseCheck> {
    support.check_against(p.dict().num_cols())?;
    let x = &restricted.x;
    if x.len() != p.dict().num_cols() {
        return Err(Error::DimensionMismatch(
            "restricted solution has the wrong length".into(),
        ));
    }
    if x.iter()
        .enumerate()
        .any(|(j, &v)| v != 0.0 && !support.contains(j))
    {
        return Err(Error::Precondition(
            "restricted solution has entries outside the support".into(),
        ));
    }
    let kkt = crate::solvers::kkt_certificate(p, x);
    if !kkt.is_optimal_on(support, x, opts.restricted_kkt_tol) {
        return Err(Error::Precondition(
            "restricted solution is not KKT-certified on the support".into(),
        ));
    }
    let margins: BTreeMap<usize, f64> = support
        .complement(p.dict().num_cols())
        .into_iter()
        .map(|j| (j, kkt.stationarity_residuals[j]))
        .collect();
    let verdict = if strict {
        margins.values().all(|&m| m > opts.strict_tol)
    } else {
        margins.values().all(|&m| m >= -opts.strict_tol)
    };
    Ok(BaseCheck {
        margins,
        verdict,
        partial: restricted.possibly_nonunique,
    })
}

/// NNLS specialisation: `A_Λ† y ≻ 0` and `max_{j∉Λ} yᵀ P⊥_Λ a_j < 0`.
pub fn check_apmrc_nnls(
    dict: &Dictionary,
    support: &Support,
    cache: &SubdictionaryCache,
    y: &DVector<f64>,
    strict_tol: f64,
) -> Result<bool> {
    let p = Problem::new(
        dict.clone(),
        crate::linalg::Observation::new(y.clone())?,
        0.0,
    )?;
    Ok(check_apmrc(&p, support, cache)?.verdict(strict_tol))
}

/// Open interval of trade-off values, `upper = None` meaning unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaInterval {
    pub lower: f64,
    pub upper: Option<f64>,
}

impl GammaInterval {
    pub fn contains(&self, gamma: f64) -> bool {
        gamma > self.lower && self.upper.is_none_or(|u| gamma < u)
    }
}

/// All `γ > 0` meeting both the minimum-coefficient and the
/// nonlinearity-vs-subset-coherence conditions, as an intersection of
/// half-lines. `None` when no such γ exists.
pub fn gamma_interval(
    dict: &Dictionary,
    y: &DVector<f64>,
    support: &Support,
    cache: &SubdictionaryCache,
) -> Result<Option<GammaInterval>> {
    let gram_inv = cache.require_full_rank()?;
    let ls = cache.coordinates(y);
    let pull = gram_inv * DVector::from_element(cache.size(), 1.0);
    let residual = cache.project_out(y);

    // each constraint reads slope·γ < rhs
    let mut constraints: Vec<(f64, f64)> =
        ls.iter().zip(pull.iter()).map(|(&c, &g)| (g, c)).collect();
    for j in support.complement(dict.num_cols()) {
        let aj = dict.atom(j);
        constraints.push((-psc(cache, &aj)?, -residual.dot(&aj)));
    }

    let mut lower: f64 = 0.0;
    let mut upper = f64::INFINITY;
    for (slope, rhs) in constraints {
        if slope > 0.0 {
            upper = upper.min(rhs / slope);
        } else if slope < 0.0 {
            lower = lower.max(rhs / slope);
        } else if rhs <= 0.0 {
            return Ok(None);
        }
    }
    Ok((lower < upper).then_some(GammaInterval {
        lower,
        upper: upper.is_finite().then_some(upper),
    }))
}

/// Named verdicts of a [`ConditionReport`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdicts {
    pub apmrc: bool,
    pub perc_max: bool,
    pub perc_amax: bool,
    /// `None` without ground truth.
    pub erc_mrc: Option<bool>,
    pub base_strict: bool,
    pub base_weak: bool,
}

/// Every metric, margin and verdict for one `(A, y, γ, Λ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub support: Support,
    pub gamma: f64,
    pub strict_tol: f64,
    pub erc: f64,
    pub psc_per_atom: BTreeMap<usize, f64>,
    pub perc: f64,
    pub mcc_margin: f64,
    pub nscc_margins: BTreeMap<usize, f64>,
    pub perc_max_margin: f64,
    pub perc_amax_margin: f64,
    pub erc_mrc_noise_margin: Option<f64>,
    pub erc_mrc_coef_margin: Option<f64>,
    pub base_margins: BTreeMap<usize, f64>,
    pub base_partial: bool,
    pub gamma_interval: Option<GammaInterval>,
    pub verdicts: Verdicts,
}

impl ConditionReport {
    /// Smallest absolute margin among the strict/non-strict inequalities
    /// behind the APMRC, PERC-Max, PERC-AMax and ERC-based verdicts.
    pub fn min_abs_margin(&self) -> f64 {
        let mut all = vec![self.mcc_margin, self.perc_max_margin, self.perc_amax_margin];
        all.extend(self.nscc_margins.values().copied());
        all.extend(self.erc_mrc_noise_margin);
        all.extend(self.erc_mrc_coef_margin);
        all.into_iter().map(f64::abs).fold(f64::INFINITY, f64::min)
    }
}

/// Computes the full report. `truth` enables the ERC-based condition.
pub fn evaluate(
    p: &Problem,
    support: &Support,
    truth: Option<&GroundTruth>,
    opts: &ConditionOptions,
) -> Result<ConditionReport> {
    let dict = p.dict();
    let cache = build_cache(dict, support, opts.rank_tol)?;
    cache.require_full_rank()?;
    let outside = outside_atoms(dict, support)?;

    let erc = erc(dict, support, &cache)?;
    let mut psc_per_atom = BTreeMap::new();
    for &j in &outside {
        psc_per_atom.insert(j, psc(&cache, &dict.atom(j))?);
    }
    let perc = psc_per_atom.values().copied().fold(f64::INFINITY, f64::min);

    let apmrc = check_apmrc(p, support, &cache)?;
    let perc_max_margin = check_perc_max(p, support, &cache)?;
    let perc_amax_margin = check_perc_amax(p, support, &cache)?;
    let erc_mrc = truth
        .map(|t| check_erc_mrc(t, dict, support, &cache, p.gamma()))
        .transpose()?;

    let restricted = solve_restricted(p, support, &opts.solver)?;
    let base_strict = check_base(p, support, &restricted, true, opts)?;
    let base_weak = check_base(p, support, &restricted, false, opts)?;

    let tol = opts.strict_tol;
    let mcc = apmrc.mcc_holds(tol);
    let verdicts = Verdicts {
        apmrc: apmrc.verdict(tol),
        perc_max: mcc && perc_max_margin > tol,
        perc_amax: mcc && perc_amax_margin > tol,
        erc_mrc: erc_mrc.map(|m| m.verdict(tol)),
        base_strict: base_strict.verdict,
        base_weak: base_weak.verdict,
    };

    Ok(ConditionReport {
        support: support.clone(),
        gamma: p.gamma(),
        strict_tol: tol,
        erc,
        psc_per_atom,
        perc,
        mcc_margin: apmrc.mcc_margin,
        nscc_margins: apmrc.nscc_margins,
        perc_max_margin,
        perc_amax_margin,
        erc_mrc_noise_margin: erc_mrc.map(|m| m.noise_margin),
        erc_mrc_coef_margin: erc_mrc.map(|m| m.coef_margin),
        base_margins: base_strict.margins,
        base_partial: base_strict.partial,
        gamma_interval: gamma_interval(dict, p.y(), support, &cache)?,
        verdicts,
    })
}
