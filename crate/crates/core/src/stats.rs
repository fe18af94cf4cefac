//! Monte-Carlo characterization over independent multisine phase
//! realizations, with per-parameter statistics and correlation matrices.
//!
//! State-space parameters are compared in the raw identified basis; no
//! similarity alignment is attempted across realizations, so their spread
//! includes basis ambiguity. Modal parameters and nonlinear coefficients are
//! similarity invariant and are the quantities to read first.

use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::{generate, identify, ExperimentConfig};
use crate::physical::Mode;

/// Realizations whose synthesized response has not settled to this
/// periodicity error are counted as failures.
const MAX_PERIODICITY_ERROR: f64 = 1e-3;

/// Outcome of one successful realization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Realization {
    pub index: usize,
    pub seed: u64,
    pub theta: Vec<f64>,
    pub modes: Vec<Mode>,
    /// Band-averaged real part of each nonlinear coefficient.
    pub coefficients: Vec<f64>,
    pub validation_rms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedRealization {
    pub index: usize,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleResult {
    pub parameter_labels: Vec<String>,
    pub coefficient_labels: Vec<String>,
    /// Successful realizations in index order.
    pub realizations: Vec<Realization>,
    pub failures: Vec<FailedRealization>,
    pub seeds: Vec<u64>,
}

fn run_realization(protocol: &ExperimentConfig, index: usize, seed: u64) -> Result<(Realization, Vec<String>, Vec<String>)> {
    let cfg = protocol.with_seed(seed);
    let data = generate(&cfg)?;
    if data.steadiness > MAX_PERIODICITY_ERROR {
        return Err(Error::InsufficientData(format!(
            "truth response is not periodic (periodicity error {:.3e})",
            data.steadiness
        )));
    }
    let id = identify(&cfg, &data)?;
    let expected = cfg.n_s / 2;
    if id.report.modes.len() != expected {
        return Err(Error::NonFinite(format!(
            "expected {expected} oscillatory modes, found {}",
            id.report.modes.len()
        )));
    }
    let labels = id.mask.labels(id.model.dims.m);
    let coef_labels = id.report.coefficients.iter().map(|c| c.label.clone()).collect();
    Ok((
        Realization {
            index,
            seed,
            theta: id.theta,
            modes: id.report.modes,
            coefficients: id.report.coefficients.iter().map(|c| c.average).collect(),
            validation_rms: id.validation.rms,
        },
        labels,
        coef_labels,
    ))
}

/// Runs the full protocol for seeds `seed0 + 1 ..= seed0 + r`.
///
/// Realizations run in parallel and are collected in index order, so the
/// result is independent of scheduling. A failing realization is recorded
/// and skipped.
pub fn monte_carlo(protocol: &ExperimentConfig, r: usize, seed0: u64) -> Result<EnsembleResult> {
    if r < 2 {
        return Err(Error::InvalidArgument(format!("Monte-Carlo needs R >= 2, got {r}")));
    }
    protocol.validate()?;
    let seeds: Vec<u64> = (1..=r as u64).map(|k| seed0.wrapping_add(k)).collect();
    let outcomes: Vec<_> = seeds
        .par_iter()
        .enumerate()
        .map(|(index, &seed)| (index, seed, run_realization(protocol, index, seed)))
        .collect();
    let mut realizations = Vec::new();
    let mut failures = Vec::new();
    let mut parameter_labels = Vec::new();
    let mut coefficient_labels = Vec::new();
    for (index, seed, outcome) in outcomes {
        match outcome {
            Ok((real, labels, coef)) => {
                if parameter_labels.is_empty() {
                    parameter_labels = labels;
                    coefficient_labels = coef;
                }
                realizations.push(real);
            }
            Err(e) => {
                log::warn!("realization {index} (seed {seed}) failed: {e}");
                failures.push(FailedRealization {
                    index,
                    seed,
                    error: e.to_string(),
                });
            }
        }
    }
    if realizations.is_empty() {
        return Err(Error::AllRealizationsFailed(r));
    }
    Ok(EnsembleResult {
        parameter_labels,
        coefficient_labels,
        realizations,
        failures,
        seeds,
    })
}

impl EnsembleResult {
    /// `R × n_θ` matrix of identified parameter vectors.
    pub fn theta_samples(&self) -> DMatrix<f64> {
        samples(self.realizations.iter().map(|r| r.theta.clone()).collect())
    }

    /// `R × 2·modes` matrix with columns `f_1, ζ_1, f_2, ζ_2, ...`.
    pub fn modal_samples(&self) -> DMatrix<f64> {
        samples(
            self.realizations
                .iter()
                .map(|r| r.modes.iter().flat_map(|m| [m.freq_hz, m.damping]).collect())
                .collect(),
        )
    }

    pub fn modal_labels(&self) -> Vec<String> {
        let count = self.realizations.first().map_or(0, |r| r.modes.len());
        (1..=count)
            .flat_map(|k| [format!("f{k}"), format!("zeta{k}")])
            .collect()
    }

    /// `R × s` matrix of band-averaged coefficients.
    pub fn coefficient_samples(&self) -> DMatrix<f64> {
        samples(self.realizations.iter().map(|r| r.coefficients.clone()).collect())
    }
}

fn samples(rows: Vec<Vec<f64>>) -> DMatrix<f64> {
    let r = rows.len();
    let c = rows.first().map_or(0, |v| v.len());
    DMatrix::from_fn(r, c, |i, j| rows[i][j])
}

/// Mean, unbiased standard deviation and `100 · std / |mean|` of one entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterStats {
    pub label: String,
    pub mean: f64,
    pub std: f64,
    pub ratio_percent: f64,
}

/// Shifted mean: exact for a constant sample.
fn mean_of(x: &[f64]) -> f64 {
    let x0 = x[0];
    x0 + x.iter().map(|v| v - x0).sum::<f64>() / x.len() as f64
}

/// Column statistics of an `R × p` sample matrix.
pub fn ensemble_stats(samples: &DMatrix<f64>, labels: &[String]) -> Result<Vec<ParameterStats>> {
    let r = samples.nrows();
    if r < 2 {
        return Err(Error::InsufficientData(format!(
            "ensemble statistics need at least 2 realizations, got {r}"
        )));
    }
    if labels.len() != samples.ncols() {
        return Err(Error::Dimension(format!(
            "{} labels for {} columns",
            labels.len(),
            samples.ncols()
        )));
    }
    Ok((0..samples.ncols())
        .map(|j| {
            let x: Vec<f64> = samples.column(j).iter().copied().collect();
            let mean = mean_of(&x);
            let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (r - 1) as f64;
            let std = var.sqrt();
            ParameterStats {
                label: labels[j].clone(),
                mean,
                std,
                ratio_percent: 100.0 * std / mean.abs(),
            }
        })
        .collect())
}

/// Correlation over the columns with nonzero variance.
#[derive(Debug, Clone, PartialEq)]
pub struct Correlation {
    /// Original column indices kept, in order.
    pub kept: Vec<usize>,
    /// Zero-variance columns left out.
    pub excluded: Vec<usize>,
    /// `kept.len()²`, symmetric with unit diagonal.
    pub matrix: DMatrix<f64>,
}

impl Correlation {
    /// Largest `|corr(i, j)|` with `i ≠ j`, if any pair exists.
    pub fn max_off_diagonal(&self) -> Option<f64> {
        let n = self.matrix.nrows();
        (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| self.matrix[(i, j)].abs())
            .reduce(f64::max)
    }
}

/// `corr(i, j) = cov(i, j) / (σ_i σ_j)` of an `R × p` sample matrix.
pub fn correlation_matrix(samples: &DMatrix<f64>) -> Result<Correlation> {
    let r = samples.nrows();
    if r < 2 {
        return Err(Error::InsufficientData(format!(
            "correlation needs at least 2 realizations, got {r}"
        )));
    }
    let p = samples.ncols();
    let mut centered = samples.clone();
    let mut kept = Vec::new();
    let mut excluded = Vec::new();
    for j in 0..p {
        let x: Vec<f64> = samples.column(j).iter().copied().collect();
        let mean = mean_of(&x);
        let mut col = centered.column_mut(j);
        col.add_scalar_mut(-mean);
        if col.norm() > 0.0 {
            kept.push(j);
        } else {
            excluded.push(j);
        }
    }
    if !excluded.is_empty() {
        log::warn!("zero-variance parameters excluded from correlation: {excluded:?}");
    }
    let mut z = DMatrix::zeros(r, kept.len());
    for (k, &j) in kept.iter().enumerate() {
        let col = centered.column(j);
        z.set_column(k, &(col / col.norm()));
    }
    let mut matrix = z.transpose() * &z;
    let n = kept.len();
    for i in 0..n {
        matrix[(i, i)] = 1.0;
        for j in 0..i {
            let v = (0.5 * (matrix[(i, j)] + matrix[(j, i)])).clamp(-1.0, 1.0);
            matrix[(i, j)] = v;
            matrix[(j, i)] = v;
        }
    }
    Ok(Correlation { kept, excluded, matrix })
}

/// JSON summary of an ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleReport {
    pub name: String,
    pub requested: usize,
    pub succeeded: usize,
    pub failures: Vec<FailedRealization>,
    pub seeds: Vec<u64>,
    pub parameters: Vec<ParameterStats>,
    pub modal: Vec<ParameterStats>,
    pub coefficients: Vec<ParameterStats>,
    pub correlation_excluded: Vec<String>,
    pub max_off_diagonal_correlation: Option<f64>,
}

impl EnsembleResult {
    pub fn parameter_stats(&self) -> Result<Vec<ParameterStats>> {
        ensemble_stats(&self.theta_samples(), &self.parameter_labels)
    }

    pub fn modal_stats(&self) -> Result<Vec<ParameterStats>> {
        ensemble_stats(&self.modal_samples(), &self.modal_labels())
    }

    pub fn coefficient_stats(&self) -> Result<Vec<ParameterStats>> {
        ensemble_stats(&self.coefficient_samples(), &self.coefficient_labels)
    }

    pub fn correlation(&self) -> Result<Correlation> {
        correlation_matrix(&self.theta_samples())
    }

    pub fn report(&self, name: &str) -> Result<EnsembleReport> {
        let corr = self.correlation()?;
        Ok(EnsembleReport {
            name: name.to_string(),
            requested: self.seeds.len(),
            succeeded: self.realizations.len(),
            failures: self.failures.clone(),
            seeds: self.seeds.clone(),
            parameters: self.parameter_stats()?,
            modal: self.modal_stats()?,
            coefficients: self.coefficient_stats()?,
            correlation_excluded: corr.excluded.iter().map(|&j| self.parameter_labels[j].clone()).collect(),
            max_off_diagonal_correlation: corr.max_off_diagonal(),
        })
    }
}

/// CSV `parameter,mean,std_x100,std_over_mean_percent`.
pub fn write_stats_table(stats: &[ParameterStats], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["parameter", "mean", "std_x100", "std_over_mean_percent"])?;
    for s in stats {
        w.write_record([
            s.label.clone(),
            format!("{:e}", s.mean),
            format!("{:e}", 100.0 * s.std),
            format!("{:.6}", s.ratio_percent),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Square CSV with the kept parameter labels as header and first column.
pub fn write_correlation(corr: &Correlation, labels: &[String], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let names: Vec<String> = corr.kept.iter().map(|&j| labels[j].clone()).collect();
    let mut header = vec![String::new()];
    header.extend(names.iter().cloned());
    w.write_record(&header)?;
    for (i, name) in names.iter().enumerate() {
        let mut row = vec![name.clone()];
        row.extend((0..names.len()).map(|j| format!("{:.6}", corr.matrix[(i, j)])));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn labels(p: usize) -> Vec<String> {
        (0..p).map(|j| format!("p{j}")).collect()
    }

    #[test]
    fn two_point_sample() {
        let s = DMatrix::from_column_slice(2, 1, &[1.0, 3.0]);
        let st = ensemble_stats(&s, &labels(1)).unwrap();
        assert_eq!(st[0].mean, 2.0);
        assert!((st[0].std - 2f64.sqrt()).abs() < 1e-15);
        assert!((st[0].ratio_percent - 100.0 * 2f64.sqrt() / 2.0).abs() < 1e-12);
    }

    #[test]
    fn constant_ensemble_is_exact() {
        let s = DMatrix::from_element(7, 2, 0.1);
        let st = ensemble_stats(&s, &labels(2)).unwrap();
        assert_eq!(st[0].mean, 0.1);
        assert_eq!(st[0].std, 0.0);
    }

    #[test]
    fn single_realization_rejected() {
        let s = DMatrix::from_element(1, 2, 1.0);
        assert!(matches!(ensemble_stats(&s, &labels(2)), Err(Error::InsufficientData(_))));
        assert!(correlation_matrix(&s).is_err());
    }

    #[test]
    fn proportional_columns_fully_correlated() {
        let s = DMatrix::from_fn(6, 3, |i, j| {
            let x = (i as f64 * 1.7).sin();
            match j {
                0 => x,
                1 => 2.0 * x,
                _ => -x + 4.0,
            }
        });
        let c = correlation_matrix(&s).unwrap();
        assert!((c.matrix[(0, 1)] - 1.0).abs() < 1e-14);
        assert!((c.matrix[(0, 2)] + 1.0).abs() < 1e-14);
    }

    #[test]
    fn zero_variance_columns_excluded() {
        let s = DMatrix::from_fn(4, 3, |i, j| if j == 1 { 5.0 } else { (i * (j + 1)) as f64 });
        let c = correlation_matrix(&s).unwrap();
        assert_eq!(c.excluded, vec![1]);
        assert_eq!(c.kept, vec![0, 2]);
        assert_eq!(c.matrix.nrows(), 2);
    }

    #[test]
    fn independent_columns_nearly_uncorrelated() {
        let r = 400;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let s = DMatrix::from_fn(r, 5, |_, _| StandardNormal.sample(&mut rng));
        let c = correlation_matrix(&s).unwrap();
        let bound = 3.0 / (r as f64).sqrt();
        assert!(c.max_off_diagonal().unwrap() < bound);
    }

    #[test]
    fn monte_carlo_rejects_single_run() {
        let cfg = crate::experiment::smoke();
        assert!(matches!(monte_carlo(&cfg, 1, 0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn monte_carlo_smoke_is_deterministic() {
        let cfg = crate::experiment::smoke();
        let a = monte_carlo(&cfg, 3, 100).unwrap();
        let b = monte_carlo(&cfg, 3, 100).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.seeds, vec![101, 102, 103]);
        assert_eq!(a.realizations.len() + a.failures.len(), 3);
        let report = a.report("smoke").unwrap();
        assert_eq!(report.parameters.len(), a.parameter_labels.len());
        assert_eq!(report.modal.len(), 2);
    }

    #[test]
    fn all_failures_reported() {
        let mut cfg = crate::experiment::smoke();
        // A state order the data cannot support makes every run fail.
        cfg.n_s = 400;
        assert!(matches!(monte_carlo(&cfg, 2, 0), Err(Error::AllRealizationsFailed(2))));
    }

    proptest! {
        #[test]
        fn correlation_is_well_formed(values in prop::collection::vec(-10.0f64..10.0, 24)) {
            let s = DMatrix::from_column_slice(6, 4, &values);
            let c = correlation_matrix(&s).unwrap();
            let n = c.matrix.nrows();
            for i in 0..n {
                prop_assert_eq!(c.matrix[(i, i)], 1.0);
                for j in 0..n {
                    prop_assert_eq!(c.matrix[(i, j)], c.matrix[(j, i)]);
                    prop_assert!(c.matrix[(i, j)].abs() <= 1.0 + 1e-12);
                }
            }
        }
    }
}
