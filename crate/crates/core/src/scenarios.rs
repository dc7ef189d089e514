//! Scenario path ingestion and GARCH(1,1) simulation.
//!
//! Files are comma-separated, one row per path and one column per stage
//! `2..=T`, without a header. With `prob_column` set, a trailing column holds
//! the path probability. Lines starting with `#` are ignored.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng;
use crate::tree::ScenarioPaths;

/// File-level tolerance on the probability column. Columns accepted here but
/// outside [`crate::tree::PROB_TOL`] are renormalized.
pub const FILE_PROB_TOL: f64 = 1e-9;

pub fn read_scenarios(reader: impl Read, prob_column: bool) -> Result<ScenarioPaths> {
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut rows = Vec::new();
    let mut probs = Vec::new();
    let mut width = None;
    for (i, record) in csv.records().enumerate() {
        let record = record.map_err(|e| Error::MalformedRow { row: i, reason: e.to_string() })?;
        if record.iter().all(str::is_empty) {
            continue;
        }
        let mut row = Vec::with_capacity(record.len());
        for (j, field) in record.iter().enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| Error::MalformedRow { row: i, reason: format!("column {j}: {field:?} is not a number") })?;
            if !v.is_finite() {
                return Err(Error::NonFiniteValue { row: i, column: j });
            }
            row.push(v);
        }
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(Error::MalformedRow { row: i, reason: format!("expected {w} columns, found {}", row.len()) })
            }
            _ => {}
        }
        if prob_column {
            let p = row.pop().expect("row is non-empty");
            probs.push(p);
        }
        if row.is_empty() {
            return Err(Error::MalformedRow { row: i, reason: "no stage columns".into() });
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::MalformedRow { row: 0, reason: "no scenario rows".into() });
    }
    if !prob_column {
        return ScenarioPaths::uniform(rows);
    }
    if probs.iter().any(|p| *p < 0.0) {
        return Err(Error::BadProbabilities("negative probability".into()));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > FILE_PROB_TOL {
        return Err(Error::BadProbabilities(format!("probabilities sum to {total}")));
    }
    if (total - 1.0).abs() > crate::tree::PROB_TOL {
        probs.iter_mut().for_each(|p| *p /= total);
    }
    ScenarioPaths::new(rows, probs)
}

pub fn load_scenarios(path: impl AsRef<Path>, prob_column: bool) -> Result<ScenarioPaths> {
    read_scenarios(std::fs::File::open(path)?, prob_column)
}

pub fn write_scenarios(paths: &ScenarioPaths, writer: impl Write, prob_column: bool) -> Result<()> {
    let mut csv = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    for (i, row) in paths.rows().enumerate() {
        let mut fields: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        if prob_column {
            fields.push(paths.probs()[i].to_string());
        }
        csv.write_record(&fields)?;
    }
    csv.flush()?;
    Ok(())
}

pub fn save_scenarios(paths: &ScenarioPaths, path: impl AsRef<Path>, prob_column: bool) -> Result<()> {
    write_scenarios(paths, std::fs::File::create(path)?, prob_column)
}

/// GARCH(1,1) return model `r_t = mu + sigma_t z_t`,
/// `sigma_{t+1}^2 = omega + alpha (r_t - mu)^2 + beta sigma_t^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GarchParams {
    pub mu: f64,
    pub omega: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Initial conditional standard deviation; the stationary level when `None`.
    pub sigma0: Option<f64>,
    /// Skip the `alpha + beta < 1` check. Requires an explicit `sigma0`.
    pub allow_nonstationary: bool,
}

impl GarchParams {
    pub fn new(mu: f64, omega: f64, alpha: f64, beta: f64) -> Self {
        Self { mu, omega, alpha, beta, sigma0: None, allow_nonstationary: false }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.mu, self.omega, self.alpha, self.beta].iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidParams("non-finite coefficient".into()));
        }
        if self.omega <= 0.0 {
            return Err(Error::InvalidParams(format!("omega must be positive, got {}", self.omega)));
        }
        if self.alpha < 0.0 || self.beta < 0.0 {
            return Err(Error::InvalidParams("alpha and beta must be non-negative".into()));
        }
        let persistence = self.alpha + self.beta;
        if persistence >= 1.0 && !self.allow_nonstationary {
            return Err(Error::NonStationaryParams(persistence));
        }
        match self.sigma0 {
            Some(s) if !(s.is_finite() && s > 0.0) => {
                Err(Error::InvalidParams(format!("sigma0 must be positive, got {s}")))
            }
            None if persistence >= 1.0 => {
                Err(Error::InvalidParams("no stationary variance; sigma0 is required".into()))
            }
            _ => Ok(()),
        }
    }

    /// Unconditional variance `omega / (1 - alpha - beta)`.
    pub fn stationary_variance(&self) -> f64 {
        self.omega / (1.0 - self.alpha - self.beta)
    }

    fn initial_variance(&self) -> f64 {
        self.sigma0.map(|s| s * s).unwrap_or_else(|| self.stationary_variance())
    }
}

/// Simulates `s` independent return paths of `horizon` periods each.
///
/// Path `i` draws from its own stream derived from `(seed, i)`, so the output
/// does not depend on how paths are scheduled across threads.
pub fn simulate_garch(params: &GarchParams, s: usize, horizon: usize, seed: u64) -> Result<ScenarioPaths> {
    params.validate()?;
    if s == 0 {
        return Err(Error::InvalidCount("path count must be at least 1".into()));
    }
    if horizon == 0 {
        return Err(Error::InvalidCount("horizon must be at least 1".into()));
    }
    let rows: Vec<Vec<f64>> = (0..s)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng::stream(seed, i as u64);
            let mut var = params.initial_variance();
            (0..horizon)
                .map(|_| {
                    let z: f64 = rng.sample(StandardNormal);
                    let eps = var.sqrt() * z;
                    var = params.omega + params.alpha * eps * eps + params.beta * var;
                    params.mu + eps
                })
                .collect()
        })
        .collect();
    ScenarioPaths::uniform(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    const WORKED: [f64; 10] = [0.017, -0.023, -0.008, -0.022, -0.019, 0.024, 0.016, -0.006, 0.032, -0.023];

    fn mean_var(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        (m, xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
    }

    #[test]
    fn loads_single_column_table_with_uniform_probs() {
        let text: String = WORKED.iter().map(|v| format!("{v}\n")).collect();
        let sc = read_scenarios(text.as_bytes(), false).unwrap();
        assert_eq!((sc.len(), sc.stages()), (10, 2));
        assert!(sc.probs().iter().all(|p| *p == 0.1));
        assert_eq!(sc.column(0), WORKED.to_vec());
    }

    #[test]
    fn rejects_empty_ragged_and_nonfinite_input() {
        assert!(matches!(read_scenarios("".as_bytes(), false), Err(Error::MalformedRow { .. })));
        assert!(matches!(read_scenarios("0.1,0.2\n0.3\n".as_bytes(), false), Err(Error::MalformedRow { row: 1, .. })));
        assert!(matches!(read_scenarios("0.1\nNaN\n".as_bytes(), false), Err(Error::NonFiniteValue { row: 1, .. })));
        assert!(matches!(read_scenarios("0.1,abc\n".as_bytes(), false), Err(Error::MalformedRow { .. })));
    }

    #[test]
    fn probability_column() {
        let sc = read_scenarios("0.1,0.25\n-0.2,0.75\n".as_bytes(), true).unwrap();
        assert_eq!(sc.probs(), &[0.25, 0.75]);
        assert_eq!(sc.periods(), 1);
        assert!(matches!(read_scenarios("0.1,0.5\n0.2,0.4\n".as_bytes(), true), Err(Error::BadProbabilities(_))));
        assert!(matches!(read_scenarios("0.1,1.5\n0.2,-0.5\n".as_bytes(), true), Err(Error::BadProbabilities(_))));
        let near = read_scenarios("0.1,0.3333333333\n0.2,0.6666666667\n".as_bytes(), true).unwrap();
        assert!((near.probs().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn constant_variance_case() {
        let params = GarchParams::new(0.0, 1e-4, 0.0, 0.0);
        let sc = simulate_garch(&params, 1000, 100, 11).unwrap();
        let all: Vec<f64> = sc.rows().flatten().copied().collect();
        assert_eq!(all.len(), 100_000);
        let (_, var) = mean_var(&all);
        assert!((var / 1e-4 - 1.0).abs() < 0.05, "sample variance {var}");

        // r_t = 0.01 z_t exactly, replaying the same normal stream
        let mut stream = rng::stream(11, 3);
        for t in 0..100 {
            let z: f64 = stream.sample(StandardNormal);
            assert_eq!(sc.value(3, t), 0.01 * z);
        }
    }

    #[test]
    fn mean_within_three_standard_errors() {
        let params = GarchParams::new(0.001, 2e-5, 0.1, 0.85);
        let sc = simulate_garch(&params, 10_000, 1, 5).unwrap();
        let (m, var) = mean_var(&sc.column(0));
        let se = (var / 10_000.0).sqrt();
        assert!((m - 0.001).abs() < 3.0 * se, "mean {m} se {se}");
    }

    #[test]
    fn stationary_variance_is_reached() {
        let params = GarchParams::new(0.0, 1e-5, 0.08, 0.9);
        let target = params.stationary_variance();
        let sc = simulate_garch(&params, 20_000, 5, 9).unwrap();
        let all: Vec<f64> = sc.rows().flatten().copied().collect();
        let n = all.len() as f64;
        let var = all.iter().map(|x| x * x).sum::<f64>() / n;
        let se = (all.iter().map(|x| (x * x - var).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();
        assert!((var - target).abs() < 5.0 * se, "var {var}, target {target}, se {se}");
    }

    #[test]
    fn simulation_is_deterministic() {
        let params = GarchParams::new(0.0, 1e-5, 0.08, 0.9);
        let a = simulate_garch(&params, 50, 3, 7).unwrap();
        assert_eq!(a, simulate_garch(&params, 50, 3, 7).unwrap());
        assert_ne!(a, simulate_garch(&params, 50, 3, 8).unwrap());
    }

    #[test]
    fn parameter_errors() {
        let p = GarchParams::new(0.0, 1e-5, 0.6, 0.5);
        assert!(matches!(simulate_garch(&p, 10, 2, 0), Err(Error::NonStationaryParams(_))));
        let p = GarchParams { sigma0: Some(0.01), allow_nonstationary: true, ..p };
        assert!(simulate_garch(&p, 10, 2, 0).is_ok());
        let p = GarchParams::new(0.0, 0.0, 0.1, 0.1);
        assert!(matches!(simulate_garch(&p, 10, 2, 0), Err(Error::InvalidParams(_))));
        let p = GarchParams::new(0.0, 1e-5, 0.1, 0.1);
        assert!(matches!(simulate_garch(&p, 0, 2, 0), Err(Error::InvalidCount(_))));
        assert!(matches!(simulate_garch(&p, 10, 0, 0), Err(Error::InvalidCount(_))));
    }

    #[test]
    fn save_load_round_trip() {
        let params = GarchParams::new(0.0005, 1e-5, 0.08, 0.9);
        let sc = simulate_garch(&params, 40, 3, 1).unwrap();
        for prob_column in [false, true] {
            let mut buf = Vec::new();
            write_scenarios(&sc, &mut buf, prob_column).unwrap();
            let back = read_scenarios(buf.as_slice(), prob_column).unwrap();
            assert_eq!(back, sc);
        }
    }
}
