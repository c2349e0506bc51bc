use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::generate::{generate, DistortionSpec, InstanceSpec};
use crate::conditions::{evaluate, ConditionOptions, ConditionReport};
use crate::error::{Error, Result};
use crate::linalg::Support;
use crate::oracle::{enumerate_global, MAX_ENUMERATION_ATOMS};
use crate::solvers::{solve_nlasso, Problem};

/// The four sufficient conditions tallied in a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Apmrc,
    PercMax,
    PercAmax,
    ErcMrc,
}

impl Condition {
    pub const ALL: [Condition; 4] = [
        Condition::Apmrc,
        Condition::PercMax,
        Condition::PercAmax,
        Condition::ErcMrc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Condition::Apmrc => "APMRC",
            Condition::PercMax => "PERC-Max",
            Condition::PercAmax => "PERC-AMax",
            Condition::ErcMrc => "ERC-MRC",
        }
    }

    fn verdict(self, report: &ConditionReport) -> bool {
        let v = &report.verdicts;
        match self {
            Condition::Apmrc => v.apmrc,
            Condition::PercMax => v.perc_max,
            Condition::PercAmax => v.perc_amax,
            Condition::ErcMrc => v.erc_mrc.unwrap_or(false),
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Condition verdict (True/False) against recovery outcome (Correct/Incorrect).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub true_correct: usize,
    pub true_incorrect: usize,
    pub false_correct: usize,
    pub false_incorrect: usize,
}

impl ConfusionMatrix {
    pub fn record(&mut self, verdict: bool, correct: bool) {
        match (verdict, correct) {
            (true, true) => self.true_correct += 1,
            (true, false) => self.true_incorrect += 1,
            (false, true) => self.false_correct += 1,
            (false, false) => self.false_incorrect += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.true_correct + self.true_incorrect + self.false_correct + self.false_incorrect
    }

    /// Instances the condition declared recoverable.
    pub fn declared(&self) -> usize {
        self.true_correct + self.true_incorrect
    }
}

/// How the γ values of a batch are interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaScaling {
    /// Used as given.
    Absolute,
    /// Multiplied by `max_j a_jᵀ y`, the smallest γ with an all-zero solution.
    #[default]
    MaxCorrelation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BatchOptions {
    pub gamma_scaling: GammaScaling,
    /// Evaluations with a condition margin closer to zero than this are
    /// reported but left out of the tallies.
    pub boundary_tol: f64,
    /// Also solve each instance by enumeration and record the objective gap.
    pub oracle_check: bool,
    pub conditions: ConditionOptions,
}

impl Default for BatchOptions {
    fn default() -> Self {
        Self {
            gamma_scaling: GammaScaling::MaxCorrelation,
            boundary_tol: 1e-8,
            oracle_check: false,
            conditions: ConditionOptions::default(),
        }
    }
}

/// Outcome of one `(instance, γ)` evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub instance: usize,
    pub seed: u64,
    pub distortion: DistortionSpec,
    pub gamma_factor: f64,
    pub gamma: f64,
    pub true_support: Support,
    pub solver_support: Support,
    pub converged: bool,
    pub correct: bool,
    /// Some margin fell within `boundary_tol` of zero.
    pub boundary: bool,
    pub apmrc: bool,
    pub perc_max: bool,
    pub perc_amax: bool,
    pub erc_mrc: bool,
    pub min_abs_margin: f64,
    pub erc: f64,
    pub perc: f64,
    /// `f(x_solver) − f(x_oracle)` when the oracle check ran.
    pub oracle_gap: Option<f64>,
    pub oracle_support: Option<Support>,
}

impl InstanceRecord {
    pub fn verdict(&self, c: Condition) -> bool {
        match c {
            Condition::Apmrc => self.apmrc,
            Condition::PercMax => self.perc_max,
            Condition::PercAmax => self.perc_amax,
            Condition::ErcMrc => self.erc_mrc,
        }
    }

    pub fn tallied(&self) -> bool {
        self.converged && !self.boundary
    }
}

/// Confusion matrices for one γ factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaTally {
    pub gamma_factor: f64,
    /// In the order of [`Condition::ALL`].
    pub matrices: Vec<(Condition, ConfusionMatrix)>,
    pub excluded_boundary: usize,
    pub excluded_nonconverged: usize,
}

impl GammaTally {
    pub fn matrix(&self, c: Condition) -> ConfusionMatrix {
        self.matrices
            .iter()
            .find(|(k, _)| *k == c)
            .map(|(_, m)| *m)
            .unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub tallies: Vec<GammaTally>,
    pub records: Vec<InstanceRecord>,
}

impl BatchReport {
    /// Sum of the matrices over all γ factors.
    pub fn combined(&self, c: Condition) -> ConfusionMatrix {
        let mut out = ConfusionMatrix::default();
        for t in &self.tallies {
            let m = t.matrix(c);
            out.true_correct += m.true_correct;
            out.true_incorrect += m.true_incorrect;
            out.false_correct += m.false_correct;
            out.false_incorrect += m.false_incorrect;
        }
        out
    }
}

/// A reproducible family of instance specifications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchPlan {
    pub instances: usize,
    pub seed: u64,
    pub l: usize,
    pub n: usize,
    /// Support sizes, cycled over the instances.
    pub support_sizes: Vec<usize>,
    pub coherence_target: f64,
    pub coefficient_range: (f64, f64),
    /// Distortions, cycled over the instances.
    pub distortions: Vec<DistortionSpec>,
}

impl BatchPlan {
    pub fn specs(&self) -> Result<Vec<InstanceSpec>> {
        if self.support_sizes.is_empty() || self.distortions.is_empty() {
            return Err(Error::InfeasibleSpec(
                "batch needs at least one support size and one distortion".into(),
            ));
        }
        let ns = self.support_sizes.len();
        let nd = self.distortions.len();
        Ok((0..self.instances)
            .map(|i| InstanceSpec {
                l: self.l,
                n: self.n,
                j: self.support_sizes[i % ns],
                coherence_target: self.coherence_target,
                coefficient_range: self.coefficient_range,
                distortion: self.distortions[(i / ns) % nd],
                seed: instance_seed(self.seed, i),
                support: None,
            })
            .collect())
    }
}

/// Per-instance seed derived from the batch seed (SplitMix64 step).
pub fn instance_seed(seed: u64, index: usize) -> u64 {
    let mut z = seed.wrapping_add((index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn evaluate_instance(
    index: usize,
    spec: &InstanceSpec,
    gammas: &[f64],
    opts: &BatchOptions,
) -> Result<Vec<InstanceRecord>> {
    let inst = generate(spec)?;
    let base = Problem::new(inst.dict.clone(), inst.y.clone(), 0.0)?;
    let scale = match opts.gamma_scaling {
        GammaScaling::Absolute => 1.0,
        GammaScaling::MaxCorrelation => base.zero_solution_gamma(),
    };
    let mut out = Vec::with_capacity(gammas.len());
    for &factor in gammas {
        let p = base.with_gamma(factor * scale)?;
        let sol = solve_nlasso(&p, &opts.conditions.solver)?;
        let report = evaluate(&p, &inst.support, Some(&inst.truth), &opts.conditions)?;
        let min_abs_margin = report.min_abs_margin();
        let (oracle_gap, oracle_support) =
            if opts.oracle_check && inst.dict.num_cols() <= MAX_ENUMERATION_ATOMS {
                let r = enumerate_global(&p, inst.dict.num_cols())?;
                (Some(sol.objective - r.best_objective), Some(r.best_support))
            } else {
                (None, None)
            };
        out.push(InstanceRecord {
            instance: index,
            seed: spec.seed,
            distortion: spec.distortion,
            gamma_factor: factor,
            gamma: p.gamma(),
            correct: sol.converged && sol.support == inst.support,
            true_support: inst.support.clone(),
            solver_support: sol.support,
            converged: sol.converged,
            boundary: min_abs_margin < opts.boundary_tol,
            apmrc: Condition::Apmrc.verdict(&report),
            perc_max: Condition::PercMax.verdict(&report),
            perc_amax: Condition::PercAmax.verdict(&report),
            erc_mrc: Condition::ErcMrc.verdict(&report),
            min_abs_margin,
            erc: report.erc,
            perc: report.perc,
            oracle_gap,
            oracle_support,
        });
    }
    Ok(out)
}

/// Generates every instance, solves it at every γ and tallies each condition
/// against exact support recovery. Instances run in parallel; records come
/// back in instance order so the report does not depend on scheduling.
pub fn evaluate_batch(
    specs: &[InstanceSpec],
    gammas: &[f64],
    opts: &BatchOptions,
) -> Result<BatchReport> {
    if gammas.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
        return Err(Error::InvalidArgument(
            "γ values must be finite and non-negative".into(),
        ));
    }
    opts.conditions.solver.validate()?;
    let per_instance: Vec<Vec<InstanceRecord>> = specs
        .par_iter()
        .enumerate()
        .map(|(i, s)| evaluate_instance(i, s, gammas, opts))
        .collect::<Result<_>>()?;
    let records: Vec<InstanceRecord> = per_instance.into_iter().flatten().collect();

    let tallies = gammas
        .iter()
        .map(|&g| {
            let mut t = GammaTally {
                gamma_factor: g,
                matrices: Condition::ALL
                    .iter()
                    .map(|&c| (c, ConfusionMatrix::default()))
                    .collect(),
                excluded_boundary: 0,
                excluded_nonconverged: 0,
            };
            for r in records.iter().filter(|r| r.gamma_factor == g) {
                if !r.converged {
                    t.excluded_nonconverged += 1;
                } else if r.boundary {
                    t.excluded_boundary += 1;
                } else {
                    for (c, m) in t.matrices.iter_mut() {
                        m.record(r.verdict(*c), r.correct);
                    }
                }
            }
            t
        })
        .collect();
    Ok(BatchReport { tallies, records })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn confusion_matrix_counts() {
        let mut m = ConfusionMatrix::default();
        for (v, c) in [
            (true, true),
            (true, false),
            (false, true),
            (false, false),
            (true, true),
        ] {
            m.record(v, c);
        }
        assert_eq!(
            m,
            ConfusionMatrix {
                true_correct: 2,
                true_incorrect: 1,
                false_correct: 1,
                false_incorrect: 1
            }
        );
        assert_eq!(m.total(), 5);
        assert_eq!(m.declared(), 3);
    }

    #[test]
    fn plan_cycles_sizes_and_distortions() {
        let plan = BatchPlan {
            instances: 8,
            seed: 3,
            l: 20,
            n: 6,
            support_sizes: vec![2, 3],
            coherence_target: 0.8,
            coefficient_range: (0.2, 1.0),
            distortions: vec![
                DistortionSpec::None,
                DistortionSpec::Gaussian { sigma: 0.01 },
            ],
        };
        let specs = plan.specs().unwrap();
        let combos: std::collections::BTreeSet<(usize, String)> = specs
            .iter()
            .map(|s| (s.j, s.distortion.to_string()))
            .collect();
        assert_eq!(combos.len(), 4);
        let seeds: std::collections::BTreeSet<u64> = specs.iter().map(|s| s.seed).collect();
        assert_eq!(seeds.len(), 8);
    }

    #[test]
    fn batch_is_deterministic_and_consistent() {
        let plan = BatchPlan {
            instances: 12,
            seed: 5,
            l: 20,
            n: 6,
            support_sizes: vec![2],
            coherence_target: 0.8,
            coefficient_range: (0.2, 1.0),
            distortions: vec![DistortionSpec::Gaussian { sigma: 0.05 }],
        };
        let specs = plan.specs().unwrap();
        let opts = BatchOptions {
            oracle_check: true,
            ..Default::default()
        };
        let a = evaluate_batch(&specs, &[0.1, 0.3], &opts).unwrap();
        let b = evaluate_batch(&specs, &[0.1, 0.3], &opts).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.records.len(), 24);
        for t in &a.tallies {
            for (_, m) in &t.matrices {
                assert_eq!(
                    m.total() + t.excluded_boundary + t.excluded_nonconverged,
                    12
                );
            }
        }
        for r in &a.records {
            assert!(r.oracle_gap.unwrap() < 1e-7);
        }
    }
}
