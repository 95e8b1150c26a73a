use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{load_data, run_trial, thread_pool, ArmSpec, ExperimentConfig, PreparedData};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchParam {
    Lambda,
    Beta,
    Gamma,
}

impl SearchParam {
    pub fn range(self) -> (f64, f64) {
        match self {
            SearchParam::Lambda => (0.0, 1.0),
            SearchParam::Beta => (1.0, 10.0),
            SearchParam::Gamma => (0.0, 10.0),
        }
    }
}

impl fmt::Display for SearchParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SearchParam::Lambda => "lambda",
            SearchParam::Beta => "beta",
            SearchParam::Gamma => "gamma",
        })
    }
}

impl std::str::FromStr for SearchParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lambda" => Ok(SearchParam::Lambda),
            "beta" => Ok(SearchParam::Beta),
            "gamma" => Ok(SearchParam::Gamma),
            _ => Err(Error::invalid(
                "param",
                format!("`{s}` is not one of lambda, beta, gamma"),
            )),
        }
    }
}

/// λ: 0, 0.05, ..., 1. β: 1, 2, ..., 10. γ: 0, 1, ..., 10.
pub fn default_grid(param: SearchParam) -> Vec<f64> {
    match param {
        SearchParam::Lambda => (0..=20).map(|i| i as f64 / 20.0).collect(),
        SearchParam::Beta => (1..=10).map(f64::from).collect(),
        SearchParam::Gamma => (0..=10).map(f64::from).collect(),
    }
}

pub(crate) fn check_grid(param: SearchParam, grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::invalid("grid", format!("empty {param} grid")));
    }
    let (lo, hi) = param.range();
    if let Some(v) = grid.iter().find(|v| !(**v >= lo && **v <= hi)) {
        return Err(Error::invalid(
            "grid",
            format!("{param} value {v} is outside [{lo}, {hi}]"),
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub arm: String,
    pub parameter: SearchParam,
    pub best: f64,
    pub best_score: f64,
    /// `(value, validation score)` in ascending value order.
    pub trace: Vec<(f64, f64)>,
}

/// Picks the grid value with the highest validation objective; ties go to the
/// smaller value. One trial per value, with the search seed and the full
/// train split.
pub fn grid_search(cfg: &ExperimentConfig, arm: &ArmSpec, param: SearchParam, grid: &[f64]) -> Result<SearchResult> {
    cfg.validate()?;
    let data = load_data(cfg)?;
    grid_search_in(&thread_pool(cfg.jobs)?, cfg, &data, arm, param, grid)
}

pub(crate) fn grid_search_in(
    pool: &rayon::ThreadPool,
    cfg: &ExperimentConfig,
    data: &PreparedData,
    arm: &ArmSpec,
    param: SearchParam,
    grid: &[f64],
) -> Result<SearchResult> {
    check_grid(param, grid)?;
    if param == SearchParam::Lambda && !arm.mom {
        return Err(Error::invalid(
            "param",
            format!("arm `{}` has no MoM term to tune", arm.name),
        ));
    }
    let mut values = grid.to_vec();
    values.sort_by(f64::total_cmp);
    values.dedup();
    let scores: Vec<f64> = pool.install(|| {
        values
            .par_iter()
            .map(|&v| {
                let mut a = arm.clone();
                a.set(param, v);
                run_trial(cfg, data, &a, cfg.search.seed, 1.0).map(|t| cfg.objective.score(&t.val))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let best = first_max(&scores);
    Ok(SearchResult {
        arm: arm.name.clone(),
        parameter: param,
        best: values[best],
        best_score: scores[best],
        trace: values.into_iter().zip(scores).collect(),
    })
}

/// Index of the first maximum, so ties resolve to the smaller grid value.
fn first_max(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = i;
        }
    }
    best
}
