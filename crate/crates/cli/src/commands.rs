use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::config::{load_solver_options, RunConfig};
use crate::error::{CliError, CliResult};
use crate::io::{
    fmt_f64, matrix_csv, read_dictionary, read_json, read_observations, to_json, write_atomic,
    TruthFile,
};
use crate::{
    CheckArgs, ConditionName, EvalArgs, GenArgs, ProblemArgs, Scaling, SolveArgs, SolverKind,
};
use nnsparse::bench::{
    evaluate_batch, generate, BatchReport, Condition, DistortionSpec, GammaScaling, InstanceSpec,
};
use nnsparse::conditions::{evaluate, ConditionOptions, ConditionReport};
use nnsparse::solvers::{solve_nlasso, solve_nnls, solve_restricted, KKTCertificate};
use nnsparse::{Dictionary, Observation, Problem, SolverOptions, Support};

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {}", dir.display(), e)))
}

fn emit(output: Option<&Path>, bytes: &[u8]) -> CliResult<()> {
    match output {
        Some(path) => write_atomic(path, bytes),
        None => {
            use std::io::Write;
            std::io::stdout().write_all(bytes)?;
            Ok(())
        }
    }
}

pub fn gen(a: &GenArgs) -> CliResult<()> {
    let distortion: DistortionSpec = a.distortion.parse()?;
    let spec = InstanceSpec {
        l: a.l,
        n: a.n,
        j: a.j,
        coherence_target: a.coherence,
        coefficient_range: (a.coef_min, a.coef_max),
        distortion,
        seed: a.seed,
        support: a.support.clone(),
    };
    let inst = generate(&spec)?;
    create_dir(&a.out_dir)?;

    let names: Vec<String> = (0..a.n).map(|j| format!("atom{}", j)).collect();
    let files = [
        (
            format!("{}_dictionary.csv", a.prefix),
            matrix_csv(inst.dict.matrix(), a.header.then_some(names.as_slice()))?,
        ),
        (
            format!("{}_observations.csv", a.prefix),
            matrix_csv(
                &DMatrix::from_column_slice(a.l, 1, inst.y.values().as_slice()),
                None,
            )?,
        ),
        (
            format!("{}_truth.json", a.prefix),
            to_json(&TruthFile::from_truth(&inst.truth, &inst.support))?,
        ),
    ];
    for (name, bytes) in &files {
        let path = a.out_dir.join(name);
        write_atomic(&path, bytes)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

struct Loaded {
    dict: Dictionary,
    observations: Vec<DVector<f64>>,
    opts: SolverOptions,
}

fn load_problem(a: &ProblemArgs) -> CliResult<Loaded> {
    if !(a.gamma.is_finite() && a.gamma >= 0.0) {
        return Err(CliError::Usage(format!(
            "γ must be finite and non-negative, got {}",
            a.gamma
        )));
    }
    let mut opts = match &a.solver_config {
        Some(path) => load_solver_options(path)?,
        None => SolverOptions::default(),
    };
    if let Some(tol) = a.tol {
        opts.tol = tol;
    }
    if let Some(max_iter) = a.max_iter {
        opts.max_iter = max_iter;
    }
    opts.validate()?;
    let dict = read_dictionary(&a.dictionary, a.header)?;
    let observations = read_observations(&a.observations)?;
    if observations[0].len() != dict.num_rows() {
        return Err(CliError::Parse(format!(
            "dimension mismatch: {} has {} rows, {} has {}",
            a.observations.display(),
            observations[0].len(),
            a.dictionary.display(),
            dict.num_rows()
        )));
    }
    Ok(Loaded {
        dict,
        observations,
        opts,
    })
}

fn problem_for(a: &ProblemArgs, dict: &Dictionary, y: &DVector<f64>) -> CliResult<Problem> {
    let p = Problem::new(dict.clone(), Observation::new(y.clone())?, 0.0)?;
    let gamma = match a.gamma_scaling {
        Scaling::Absolute => a.gamma,
        Scaling::MaxCorrelation => a.gamma * p.zero_solution_gamma(),
    };
    Ok(p.with_gamma(gamma)?)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SolveRecord {
    pub observation: usize,
    pub solver: String,
    pub gamma: f64,
    pub converged: bool,
    pub iterations: usize,
    pub objective: f64,
    pub support: Support,
    pub possibly_nonunique: bool,
    pub x: Vec<f64>,
    pub kkt: KKTCertificate,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SolveOutput {
    pub solutions: Vec<SolveRecord>,
}

pub fn solve(a: &SolveArgs) -> CliResult<()> {
    let loaded = load_problem(&a.problem)?;
    let mut solutions = Vec::with_capacity(loaded.observations.len());
    for (k, y) in loaded.observations.iter().enumerate() {
        let p = problem_for(&a.problem, &loaded.dict, y)?;
        let (name, sol) = match a.solver {
            SolverKind::Nlasso if p.gamma() == 0.0 => {
                ("nnls", solve_nnls(p.dict(), p.observation(), &loaded.opts)?)
            }
            SolverKind::Nlasso => ("nlasso", solve_nlasso(&p, &loaded.opts)?),
            SolverKind::Nnls if p.gamma() != 0.0 => {
                return Err(CliError::Usage("the nnls solver requires --gamma 0".into()));
            }
            SolverKind::Nnls => ("nnls", solve_nnls(p.dict(), p.observation(), &loaded.opts)?),
            SolverKind::ActiveSet => {
                let all = Support::new((0..p.dict().num_cols()).collect(), p.dict().num_cols())?;
                ("active-set", solve_restricted(&p, &all, &loaded.opts)?)
            }
        };
        solutions.push(SolveRecord {
            observation: k,
            solver: name.to_string(),
            gamma: p.gamma(),
            converged: sol.converged,
            iterations: sol.iterations,
            objective: sol.objective,
            support: sol.support,
            possibly_nonunique: sol.possibly_nonunique,
            x: sol.x.iter().copied().collect(),
            kkt: sol.kkt,
        });
    }
    let out = SolveOutput { solutions };
    emit(a.problem.output.as_deref(), &to_json(&out)?)?;
    let failed: Vec<usize> = out
        .solutions
        .iter()
        .filter(|s| !s.converged)
        .map(|s| s.observation)
        .collect();
    if !failed.is_empty() {
        return Err(CliError::Numeric(format!(
            "solver did not converge for observations {:?}",
            failed
        )));
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CheckRecord {
    pub observation: usize,
    pub requested: Vec<String>,
    pub report: ConditionReport,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CheckOutput {
    pub reports: Vec<CheckRecord>,
}

fn condition_label(c: ConditionName) -> &'static str {
    match c {
        ConditionName::All => "all",
        ConditionName::Apmrc => "apmrc",
        ConditionName::PercMax => "perc-max",
        ConditionName::PercAmax => "perc-amax",
        ConditionName::ErcMrc => "erc-mrc",
        ConditionName::Base => "base",
    }
}

fn table(k: usize, requested: &[ConditionName], r: &ConditionReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "observation {}  gamma {}  support {}",
        k,
        fmt_f64(r.gamma),
        r.support
    );
    let _ = writeln!(s, "  ERC {}  PERC {}", fmt_f64(r.erc), fmt_f64(r.perc));
    let nscc = r
        .nscc_margins
        .values()
        .copied()
        .fold(f64::INFINITY, f64::min);
    for c in requested {
        let (verdict, margin) = match c {
            ConditionName::Apmrc => (Some(r.verdicts.apmrc), r.mcc_margin.min(nscc)),
            ConditionName::PercMax => (
                Some(r.verdicts.perc_max),
                r.mcc_margin.min(r.perc_max_margin),
            ),
            ConditionName::PercAmax => (
                Some(r.verdicts.perc_amax),
                r.mcc_margin.min(r.perc_amax_margin),
            ),
            ConditionName::ErcMrc => (
                r.verdicts.erc_mrc,
                r.erc_mrc_noise_margin
                    .zip(r.erc_mrc_coef_margin)
                    .map_or(f64::NAN, |(a, b)| a.min(b).min(r.erc)),
            ),
            ConditionName::Base => (
                Some(r.verdicts.base_strict),
                r.base_margins
                    .values()
                    .copied()
                    .fold(f64::INFINITY, f64::min),
            ),
            ConditionName::All => continue,
        };
        let verdict = verdict.map_or("n/a", |v| if v { "true" } else { "false" });
        let _ = writeln!(
            s,
            "  {:<10} {:<6} min margin {}",
            condition_label(*c),
            verdict,
            fmt_f64(margin)
        );
    }
    if r.base_partial {
        let _ = writeln!(
            s,
            "  note: the restricted problem may have several minimisers"
        );
    }
    s
}

pub fn check(a: &CheckArgs) -> CliResult<()> {
    let explicit_erc = a.conditions.contains(&ConditionName::ErcMrc);
    if explicit_erc && a.truth.is_none() {
        return Err(CliError::Usage(
            "the erc-mrc condition needs --truth".into(),
        ));
    }
    if !(a.strict_tol.is_finite() && a.strict_tol >= 0.0) {
        return Err(CliError::Usage(
            "--strict-tol must be finite and non-negative".into(),
        ));
    }
    let mut requested: Vec<ConditionName> = if a.conditions.contains(&ConditionName::All) {
        vec![
            ConditionName::Apmrc,
            ConditionName::PercMax,
            ConditionName::PercAmax,
            ConditionName::ErcMrc,
            ConditionName::Base,
        ]
    } else {
        a.conditions.clone()
    };
    requested.sort();
    requested.dedup();
    if a.truth.is_none() {
        requested.retain(|&c| c != ConditionName::ErcMrc);
    }

    let loaded = load_problem(&a.problem)?;
    let n = loaded.dict.num_cols();
    let support = Support::from_unsorted(a.support.clone(), n)?;
    let truth = match &a.truth {
        Some(path) => {
            if loaded.observations.len() != 1 {
                return Err(CliError::Usage(
                    "--truth applies to a single observation column".into(),
                ));
            }
            let file: TruthFile = read_json(path)?;
            Some(file.to_truth(&loaded.dict)?.0)
        }
        None => None,
    };
    let opts = ConditionOptions {
        strict_tol: a.strict_tol,
        solver: loaded.opts,
        ..ConditionOptions::default()
    };

    let mut reports = Vec::with_capacity(loaded.observations.len());
    let mut text = String::new();
    for (k, y) in loaded.observations.iter().enumerate() {
        let p = problem_for(&a.problem, &loaded.dict, y)?;
        let report = evaluate(&p, &support, truth.as_ref(), &opts).map_err(|e| {
            let e = CliError::from(e);
            match e {
                CliError::Numeric(m) => CliError::Numeric(format!("support {}: {}", support, m)),
                other => other,
            }
        })?;
        text.push_str(&table(k, &requested, &report));
        reports.push(CheckRecord {
            observation: k,
            requested: requested
                .iter()
                .map(|&c| condition_label(c).to_string())
                .collect(),
            report,
        });
    }
    let bytes = to_json(&CheckOutput { reports })?;
    match &a.problem.output {
        Some(path) => {
            write_atomic(path, &bytes)?;
            print!("{}", text);
        }
        None => {
            emit(None, &bytes)?;
            eprint!("{}", text);
        }
    }
    Ok(())
}

fn eval_config(a: &EvalArgs) -> CliResult<RunConfig> {
    let flags_given = a.instances.is_some()
        || a.seed.is_some()
        || a.l.is_some()
        || a.n.is_some()
        || a.j.is_some()
        || a.coherence.is_some()
        || a.coef_min.is_some()
        || a.coef_max.is_some()
        || a.distortion.is_some()
        || a.gammas.is_some()
        || a.gamma_scaling.is_some();
    let mut cfg = match &a.config {
        Some(_) if flags_given => {
            return Err(CliError::Usage(
                "batch flags cannot be combined with --config".into(),
            ));
        }
        Some(path) => RunConfig::load(path)?,
        None => RunConfig {
            instances: a.instances.unwrap_or(100),
            seed: a.seed.unwrap_or(0),
            l: a.l.unwrap_or(50),
            n: a.n.unwrap_or(12),
            support_sizes: a.j.clone().unwrap_or_else(|| vec![2, 3]),
            coherence_target: a.coherence.unwrap_or(0.9),
            coefficient_range: (a.coef_min.unwrap_or(0.2), a.coef_max.unwrap_or(1.0)),
            distortions: a.distortion.clone().unwrap_or_else(|| vec!["none".into()]),
            gammas: a.gammas.clone().unwrap_or_else(|| vec![0.2, 0.1, 0.05]),
            gamma_scaling: match a.gamma_scaling {
                Some(Scaling::Absolute) => GammaScaling::Absolute,
                _ => GammaScaling::MaxCorrelation,
            },
            boundary_tol: 1e-8,
            oracle_check: false,
            solver: SolverOptions::default(),
        },
    };
    cfg.oracle_check |= a.oracle;
    cfg.validate()?;
    Ok(cfg)
}

fn confusion_csv(report: &BatchReport, k: usize) -> CliResult<Vec<u8>> {
    let t = &report.tallies[k];
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| CliError::Io(e.to_string());
    w.write_record([
        "condition",
        "true_correct",
        "true_incorrect",
        "false_correct",
        "false_incorrect",
    ])
    .map_err(err)?;
    for c in Condition::ALL {
        let m = t.matrix(c);
        w.write_record([
            c.name().to_string(),
            m.true_correct.to_string(),
            m.true_incorrect.to_string(),
            m.false_correct.to_string(),
            m.false_incorrect.to_string(),
        ])
        .map_err(err)?;
    }
    w.into_inner().map_err(|e| CliError::Io(e.to_string()))
}

fn join_support(s: &Support) -> String {
    s.indices()
        .iter()
        .map(|j| j.to_string())
        .collect::<Vec<_>>()
        .join(";")
}

fn records_csv(report: &BatchReport) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| CliError::Io(e.to_string());
    w.write_record([
        "instance",
        "seed",
        "distortion",
        "gamma_factor",
        "gamma",
        "true_support",
        "solver_support",
        "converged",
        "correct",
        "boundary",
        "apmrc",
        "perc_max",
        "perc_amax",
        "erc_mrc",
        "min_abs_margin",
        "erc",
        "perc",
        "oracle_gap",
    ])
    .map_err(err)?;
    for r in &report.records {
        w.write_record([
            r.instance.to_string(),
            r.seed.to_string(),
            r.distortion.to_string(),
            fmt_f64(r.gamma_factor),
            fmt_f64(r.gamma),
            join_support(&r.true_support),
            join_support(&r.solver_support),
            r.converged.to_string(),
            r.correct.to_string(),
            r.boundary.to_string(),
            r.apmrc.to_string(),
            r.perc_max.to_string(),
            r.perc_amax.to_string(),
            r.erc_mrc.to_string(),
            fmt_f64(r.min_abs_margin),
            fmt_f64(r.erc),
            fmt_f64(r.perc),
            r.oracle_gap.map(fmt_f64).unwrap_or_default(),
        ])
        .map_err(err)?;
    }
    w.into_inner().map_err(|e| CliError::Io(e.to_string()))
}

pub fn eval(a: &EvalArgs) -> CliResult<()> {
    let cfg = eval_config(a)?;
    let specs = cfg.plan()?.specs()?;
    let report = evaluate_batch(&specs, &cfg.gammas, &cfg.batch_options())?;
    create_dir(&a.out_dir)?;

    for (k, t) in report.tallies.iter().enumerate() {
        let path = a
            .out_dir
            .join(format!("confusion_gamma_{}.csv", t.gamma_factor));
        write_atomic(&path, &confusion_csv(&report, k)?)?;
        println!(
            "gamma {}: {} tallied, {} boundary, {} not converged -> {}",
            t.gamma_factor,
            t.matrix(Condition::Apmrc).total(),
            t.excluded_boundary,
            t.excluded_nonconverged,
            path.display()
        );
        for c in Condition::ALL {
            let m = t.matrix(c);
            println!(
                "  {:<10} TC {:>6} TI {:>6} FC {:>6} FI {:>6}",
                c.name(),
                m.true_correct,
                m.true_incorrect,
                m.false_correct,
                m.false_incorrect
            );
        }
    }
    write_atomic(&a.out_dir.join("records.csv"), &records_csv(&report)?)?;
    write_atomic(&a.out_dir.join("summary.json"), &to_json(&report.tallies)?)?;
    Ok(())
}
