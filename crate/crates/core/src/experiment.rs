//! Repeated runs over several operator structures, aggregated per iteration.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolution::{evolve, EvolutionConfig, OperatorStructure};
use crate::tree::{ConvergenceLog, ScenarioPaths, TreeStructure};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSpec {
    pub repetitions: usize,
    pub structures: Vec<OperatorStructure>,
    /// Shared settings; `ops` and `seed` are replaced per run.
    pub config: EvolutionConfig,
    /// Repetition `r` runs with seed `base_seed + r`.
    pub base_seed: u64,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            repetitions: 10,
            structures: vec![OperatorStructure::ALL_OPERATORS],
            config: EvolutionConfig::default(),
            base_seed: 0,
        }
    }
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            return Err(Error::BadConfig("repetitions must be at least 1".into()));
        }
        if self.structures.is_empty() {
            return Err(Error::BadConfig("no operator structures given".into()));
        }
        self.structures.iter().try_for_each(OperatorStructure::validate)
    }
}

/// Across-repetition statistics of one iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregateRow {
    pub iter: usize,
    pub best_mean: f64,
    pub best_min: f64,
    pub best_max: f64,
    pub popmean_mean: f64,
    pub popmean_min: f64,
    pub popmean_max: f64,
}

#[derive(Debug, Clone)]
pub struct StructureResult {
    pub ops: OperatorStructure,
    pub logs: Vec<ConvergenceLog>,
    pub rows: Vec<AggregateRow>,
}

impl StructureResult {
    pub const CSV_HEADER: &'static str = "iter,best_mean,best_min,best_max,popmean_mean,popmean_min,popmean_max";

    /// Final best objective of every repetition.
    pub fn final_best(&self) -> Vec<f64> {
        self.logs.iter().map(|l| l.last().expect("runs log at least one row").best).collect()
    }

    pub fn mean_final_best(&self) -> f64 {
        let finals = self.final_best();
        finals.iter().sum::<f64>() / finals.len() as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.iter, r.best_mean, r.best_min, r.best_max, r.popmean_mean, r.popmean_min, r.popmean_max
            );
        }
        out
    }

    /// File stem such as `ops_20-10-10-20-10-10-20-10-30`.
    pub fn file_stem(&self) -> String {
        let parts: Vec<String> = self.ops.to_array().iter().map(u32::to_string).collect();
        format!("ops_{}", parts.join("-"))
    }
}

fn stats(values: impl Iterator<Item = f64> + Clone) -> (f64, f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    (mean, lo, hi)
}

pub fn aggregate(logs: &[ConvergenceLog]) -> Vec<AggregateRow> {
    let len = logs.iter().map(ConvergenceLog::len).min().unwrap_or(0);
    (0..len)
        .map(|i| {
            let (best_mean, best_min, best_max) = stats(logs.iter().map(|l| l.records[i].best));
            let (popmean_mean, popmean_min, popmean_max) = stats(logs.iter().map(|l| l.records[i].mean));
            AggregateRow {
                iter: logs[0].records[i].iter,
                best_mean,
                best_min,
                best_max,
                popmean_mean,
                popmean_min,
                popmean_max,
            }
        })
        .collect()
}

/// Runs every structure `repetitions` times. Repetitions run concurrently;
/// each is fully determined by its seed.
pub fn run_experiment(sc: &ScenarioPaths, n: &TreeStructure, spec: &ExperimentSpec) -> Result<Vec<StructureResult>> {
    spec.validate()?;
    spec.structures
        .iter()
        .map(|&ops| {
            let logs = (0..spec.repetitions)
                .into_par_iter()
                .map(|r| {
                    let cfg = EvolutionConfig { ops, seed: spec.base_seed.wrapping_add(r as u64), ..spec.config.clone() };
                    evolve(sc, n, &cfg).map(|e| e.log)
                })
                .collect::<Result<Vec<_>>>()?;
            let rows = aggregate(&logs);
            Ok(StructureResult { ops, logs, rows })
        })
        .collect()
}
