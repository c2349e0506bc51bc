use serde::{Deserialize, Serialize};

use crate::conditions::{check_apmrc, gamma_interval, GammaInterval};
use crate::error::{Error, Result};
use crate::linalg::{build_cache, Support};
use crate::solvers::{solve_nlasso, Problem, SolverOptions};

/// Solver outcome at one grid value of γ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub gamma: f64,
    pub support: Support,
    pub converged: bool,
    pub correct: bool,
    /// An atom outside the true support was selected.
    pub false_alarm: bool,
    /// An atom of the true support was dropped.
    pub missed_detection: bool,
    pub apmrc: bool,
    pub mcc_margin: f64,
    pub min_nscc_margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    /// Smallest grid γ from which on no grid point has a false alarm.
    pub no_false_alarm_from: Option<f64>,
    /// Largest grid γ up to which no grid point misses an atom.
    pub no_missed_detection_until: Option<f64>,
    pub first_correct: Option<f64>,
    pub last_correct: Option<f64>,
    /// Grid points with correct recovery; equals the span between the
    /// first and last correct point when the correct set is contiguous.
    pub correct_count: usize,
    /// Analytic interval from the recovery conditions.
    pub interval: Option<GammaInterval>,
}

/// `steps` equally spaced values `max/steps, 2·max/steps, …, max`.
pub fn uniform_grid(max: f64, steps: usize) -> Vec<f64> {
    (1..=steps).map(|k| max * k as f64 / steps as f64).collect()
}

/// Solves the problem at every γ of `grid` and summarises where recovery of
/// `support` succeeds, next to the analytic interval.
pub fn gamma_sweep(
    p: &Problem,
    support: &Support,
    grid: &[f64],
    opts: &SolverOptions,
) -> Result<(Vec<SweepPoint>, SweepSummary)> {
    if grid.is_empty() || grid.windows(2).any(|w| w[0] >= w[1] || w[1].is_nan()) || grid[0] < 0.0 {
        return Err(Error::InvalidArgument(
            "γ grid must be non-empty, non-negative and increasing".into(),
        ));
    }
    let dict = p.dict();
    let cache = build_cache(dict, support, opts.rank_tol)?;
    let interval = gamma_interval(dict, p.y(), support, &cache)?;

    let mut points = Vec::with_capacity(grid.len());
    for &g in grid {
        let q = p.with_gamma(g)?;
        let sol = solve_nlasso(&q, opts)?;
        let m = check_apmrc(&q, support, &cache)?;
        let false_alarm = sol.support.indices().iter().any(|&j| !support.contains(j));
        let missed_detection = support.indices().iter().any(|&j| !sol.support.contains(j));
        points.push(SweepPoint {
            gamma: g,
            converged: sol.converged,
            correct: sol.converged && !false_alarm && !missed_detection,
            false_alarm,
            missed_detection,
            apmrc: m.verdict(0.0),
            mcc_margin: m.mcc_margin,
            min_nscc_margin: m.min_nscc_margin(),
            support: sol.support,
        });
    }

    let no_false_alarm_from = points
        .iter()
        .rposition(|pt| pt.false_alarm)
        .map_or(Some(0), |k| (k + 1 < points.len()).then_some(k + 1))
        .map(|k| points[k].gamma);
    let no_missed_detection_until = points
        .iter()
        .position(|pt| pt.missed_detection)
        .map_or(Some(points.len()), |k| (k > 0).then_some(k))
        .map(|k| points[k - 1].gamma);
    let correct: Vec<f64> = points
        .iter()
        .filter(|pt| pt.correct)
        .map(|pt| pt.gamma)
        .collect();
    let summary = SweepSummary {
        no_false_alarm_from,
        no_missed_detection_until,
        first_correct: correct.first().copied(),
        last_correct: correct.last().copied(),
        correct_count: correct.len(),
        interval,
    };
    Ok((points, summary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{Dictionary, Observation};
    use nalgebra::DMatrix;

    #[test]
    fn grid_spacing() {
        let g = uniform_grid(2.0, 4);
        assert_eq!(g, vec![0.5, 1.0, 1.5, 2.0]);
    }

    #[test]
    fn sweep_matches_interval_on_small_example() {
        // a0 = e0, a1 = e1, a2 = (0.6, 0.8); y = (1, 0.5), Λ = {0}
        let d = Dictionary::new(DMatrix::from_row_slice(
            2,
            3,
            &[1.0, 0.0, 0.6, 0.0, 1.0, 0.8],
        ))
        .unwrap();
        let p = Problem::new(d, Observation::from_slice(&[1.0, 0.5]).unwrap(), 0.0).unwrap();
        let support = Support::new(vec![0], 3).unwrap();
        let grid = uniform_grid(1.2, 1200);
        let (points, s) = gamma_sweep(&p, &support, &grid, &SolverOptions::default()).unwrap();
        assert_eq!(points.len(), 1200);
        // MCC: 1 − γ > 0; NSCC for a1: 0.5 < γ; for a2: 0.4 < 0.4 γ → γ > 1, so empty
        assert!(s.interval.is_none());
        assert_eq!(s.correct_count, 0);

        let y = Observation::from_slice(&[1.0, 0.1]).unwrap();
        let d = Dictionary::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0])).unwrap();
        let p = Problem::new(d, y, 0.0).unwrap();
        let support = Support::new(vec![0], 2).unwrap();
        // step 0.0012 keeps the endpoints 0.1 and 1 off the grid
        let grid = uniform_grid(1.2, 1000);
        let (_, s) = gamma_sweep(&p, &support, &grid, &SolverOptions::default()).unwrap();
        let iv = s.interval.unwrap();
        assert!((iv.lower - 0.1).abs() < 1e-12 && (iv.upper.unwrap() - 1.0).abs() < 1e-12);
        assert!((s.first_correct.unwrap() - 0.1008).abs() < 1e-9);
        assert!((s.last_correct.unwrap() - 0.9996).abs() < 1e-9);
        assert_eq!(s.no_false_alarm_from, Some(s.first_correct.unwrap()));
        assert_eq!(s.no_missed_detection_until, Some(s.last_correct.unwrap()));
    }
}
