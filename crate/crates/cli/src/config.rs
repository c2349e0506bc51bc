use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::io::read_text;
use nnsparse::bench::{BatchOptions, BatchPlan, DistortionSpec, GammaScaling};
use nnsparse::conditions::ConditionOptions;
use nnsparse::SolverOptions;

fn default_coherence() -> f64 {
    0.9
}

fn default_coefficient_range() -> (f64, f64) {
    (0.2, 1.0)
}

fn default_distortions() -> Vec<String> {
    vec!["none".into()]
}

fn default_boundary_tol() -> f64 {
    1e-8
}

/// Batch evaluation settings, read from TOML. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub instances: usize,
    #[serde(default)]
    pub seed: u64,
    pub l: usize,
    pub n: usize,
    pub support_sizes: Vec<usize>,
    #[serde(default = "default_coherence")]
    pub coherence_target: f64,
    #[serde(default = "default_coefficient_range")]
    pub coefficient_range: (f64, f64),
    /// Distortions in the command-line syntax, e.g. `gaussian:sigma=0.01`.
    #[serde(default = "default_distortions")]
    pub distortions: Vec<String>,
    pub gammas: Vec<f64>,
    #[serde(default)]
    pub gamma_scaling: GammaScaling,
    #[serde(default = "default_boundary_tol")]
    pub boundary_tol: f64,
    #[serde(default)]
    pub oracle_check: bool,
    #[serde(default)]
    pub solver: SolverOptions,
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = read_text(path)?;
        let cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| CliError::Parse(format!("{}: {}", path.display(), e)))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.instances == 0 {
            return Err(CliError::Usage("batch needs at least one instance".into()));
        }
        if self.gammas.is_empty() || self.gammas.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
            return Err(CliError::Usage(
                "γ list must be non-empty, finite and non-negative".into(),
            ));
        }
        let mut sorted = self.gammas.clone();
        sorted.sort_by(f64::total_cmp);
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(CliError::Usage("γ list contains duplicates".into()));
        }
        if self.boundary_tol.is_nan() || self.boundary_tol < 0.0 {
            return Err(CliError::Usage(
                "boundary tolerance must be non-negative".into(),
            ));
        }
        self.solver.validate()?;
        for spec in self.plan()?.specs()? {
            spec.validate()?;
        }
        Ok(())
    }

    pub fn plan(&self) -> CliResult<BatchPlan> {
        let distortions = self
            .distortions
            .iter()
            .map(|s| s.parse::<DistortionSpec>())
            .collect::<Result<Vec<_>, _>>()?;
        Ok(BatchPlan {
            instances: self.instances,
            seed: self.seed,
            l: self.l,
            n: self.n,
            support_sizes: self.support_sizes.clone(),
            coherence_target: self.coherence_target,
            coefficient_range: self.coefficient_range,
            distortions,
        })
    }

    pub fn batch_options(&self) -> BatchOptions {
        BatchOptions {
            gamma_scaling: self.gamma_scaling,
            boundary_tol: self.boundary_tol,
            oracle_check: self.oracle_check,
            conditions: ConditionOptions {
                solver: self.solver,
                ..ConditionOptions::default()
            },
        }
    }
}

/// Solver settings file for `solve` and `check`.
pub fn load_solver_options(path: &Path) -> CliResult<SolverOptions> {
    let text = read_text(path)?;
    let opts: SolverOptions =
        toml::from_str(&text).map_err(|e| CliError::Parse(format!("{}: {}", path.display(), e)))?;
    opts.validate()?;
    Ok(opts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_config() {
        let cfg: RunConfig = toml::from_str(
            r#"
            instances = 10
            l = 20
            n = 6
            support_sizes = [2, 3]
            gammas = [0.2, 0.1]
            distortions = ["none", "gaussian:sigma=0.01"]

            [solver]
            tol = 1e-10
            "#,
        )
        .unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.solver.tol, 1e-10);
        assert_eq!(cfg.solver.max_iter, SolverOptions::default().max_iter);
        assert_eq!(cfg.gamma_scaling, GammaScaling::MaxCorrelation);
        assert_eq!(cfg.plan().unwrap().distortions.len(), 2);
    }

    #[test]
    fn rejects_unknown_keys() {
        let r: Result<RunConfig, _> = toml::from_str(
            "instances = 1\nl = 5\nn = 3\nsupport_sizes = [1]\ngammas = [0.1]\ncolour = 3\n",
        );
        assert!(r.is_err());
        let r: Result<RunConfig, _> = toml::from_str(
            "instances = 1\nl = 5\nn = 3\nsupport_sizes = [1]\ngammas = [0.1]\n[solver]\ntoll = 3\n",
        );
        assert!(r.is_err());
    }

    #[test]
    fn rejects_infeasible_plans() {
        let cfg: RunConfig =
            toml::from_str("instances = 1\nl = 5\nn = 3\nsupport_sizes = [4]\ngammas = [0.1]\n")
                .unwrap();
        assert!(matches!(cfg.validate(), Err(CliError::Infeasible(_))));
    }
}
