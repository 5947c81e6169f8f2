//! Baseline estimators and the Monte-Carlo benchmark runner.
//!
//! One ground-truth VAR model is drawn per master seed; per sample size and
//! replication a fresh panel is simulated and every estimator in the roster
//! is scored against the model-implied correlation matrix (node level) and
//! RV matrix (cluster level) by squared Frobenius error.

use ndarray::{Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::time::Instant;

use crate::error::{Error, Result};
use crate::global::{cov_to_corr, fit_global, whole_network_cov};
use crate::layout::{center_panel, NetworkLayout, TimeSeriesPanel};
use crate::local::FactorSelection;
use crate::rv::{rv_coefficient, rv_from_covariance, rv_matrix_clusters, Level, RvMatrix};
use crate::seed::child_seed;
use crate::sim::{build_modular_var, implied_stationary_cov, simulate_series, SimulationSpec};

/// Estimators the benchmark can run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EstimatorSpec {
    /// Sample correlation matrix of the centered panel.
    Sample,
    /// Ledoit-Wolf shrinkage toward the scaled identity.
    LedoitWolf,
    /// Factor-model estimator with the given selection policy.
    Msfa { selection: FactorSelection },
    /// Cluster-mean series treated as single factors, RV level only.
    MeanRv,
}

impl EstimatorSpec {
    /// Stable label used in result rows and CSV output.
    pub fn label(&self) -> String {
        match self {
            EstimatorSpec::Sample => "sample".into(),
            EstimatorSpec::LedoitWolf => "ledoit_wolf".into(),
            EstimatorSpec::Msfa { selection } => match selection {
                FactorSelection::Fixed { m } => format!("msfa_fixed_{m}"),
                FactorSelection::VarianceThreshold { tau, .. } => {
                    format!("msfa_tau_{:.2}", tau)
                }
                FactorSelection::Bic { .. } => "msfa_bic".into(),
            },
            EstimatorSpec::MeanRv => "mean_rv".into(),
        }
    }
}

/// Benchmark definition: simulation recipe, sample sizes, replication count,
/// estimator roster and the master seed everything derives from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchConfig {
    pub sim: SimulationSpec,
    pub sample_sizes: Vec<usize>,
    pub replications: usize,
    pub estimators: Vec<EstimatorSpec>,
    pub master_seed: u64,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
}

fn default_burn_in() -> usize {
    crate::sim::DEFAULT_BURN_IN
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        if self.replications < 1 {
            return Err(Error::Parameter {
                name: "replications",
                reason: "need at least one replication".into(),
            });
        }
        if self.sample_sizes.is_empty() || self.sample_sizes.iter().any(|&t| t < 2) {
            return Err(Error::Parameter {
                name: "sample_sizes",
                reason: "every sample size must be at least 2".into(),
            });
        }
        if self.estimators.is_empty() {
            return Err(Error::Parameter {
                name: "estimators",
                reason: "estimator roster is empty".into(),
            });
        }
        Ok(())
    }
}

/// Mean and standard deviation over successful replications.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub mean: f64,
    pub sd: f64,
}

fn summarize(values: &[f64]) -> Option<SummaryStats> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() > 1 {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Some(SummaryStats { mean, sd })
}

/// Aggregated scores for one estimator at one sample size.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchRow {
    pub estimator: String,
    pub t: usize,
    pub replications: usize,
    pub failures: usize,
    /// Squared Frobenius error of the node-level correlation matrix.
    pub corr_error: Option<SummaryStats>,
    /// Squared Frobenius error of the cluster-level RV matrix.
    pub rv_error: Option<SummaryStats>,
    /// Mean wall-clock seconds per fit. Run metadata, not part of the
    /// deterministic result files.
    pub wall_secs_per_fit: f64,
}

/// Full benchmark output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchResult {
    pub rows: Vec<BenchRow>,
    /// Per-replication raw errors, ordered by (estimator, t, replication).
    pub raw_errors: Vec<RawError>,
    /// Whether the sample estimator out-scored every factor estimator at the
    /// largest sample size. Observational, mirrors the large-T crossover.
    pub sample_beats_msfa_at_largest_t: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawError {
    pub estimator: String,
    pub t: usize,
    pub replication: usize,
    pub corr_error: Option<f64>,
    pub rv_error: Option<f64>,
}

/// Sample correlation matrix of the panel after centering.
pub fn sample_correlation(panel: &TimeSeriesPanel) -> Result<Array2<f64>> {
    let centered = center_panel(panel)?;
    let y = centered.data();
    let cov = y.t().dot(y) / y.nrows() as f64;
    cov_to_corr(&cov)
}

/// Ledoit-Wolf shrinkage covariance toward the scaled identity, returning
/// the estimate together with the shrinkage intensity in `[0, 1]`.
///
/// With sample covariance `S`, target mean `mu = tr(S)/N`, dispersion
/// `d^2 = ||S - mu I||_F^2` and noise level
/// `b^2 = min(d^2, (1/T^2) sum_t ||y_t y_t' - S||_F^2)`, the estimate is
/// `(b^2/d^2) mu I + (1 - b^2/d^2) S`.
pub fn ledoit_wolf_with_intensity(panel: &TimeSeriesPanel) -> Result<(Array2<f64>, f64)> {
    let centered = center_panel(panel)?;
    let y = centered.data();
    let (t, n) = (y.nrows(), y.ncols());
    let tf = t as f64;
    let s = y.t().dot(y) / tf;
    let mu = (0..n).map(|i| s[[i, i]]).sum::<f64>() / n as f64;
    let mut d_sq = 0.0;
    for i in 0..n {
        for j in 0..n {
            let target = if i == j { mu } else { 0.0 };
            let diff = s[[i, j]] - target;
            d_sq += diff * diff;
        }
    }
    if d_sq <= f64::EPSILON * mu * mu * n as f64 {
        // Sample covariance already equals the target.
        return Ok((Array2::eye(n) * mu, 1.0));
    }
    let mut b_bar_sq = 0.0;
    for row in y.axis_iter(Axis(0)) {
        let mut dev = 0.0;
        for i in 0..n {
            for j in 0..n {
                let diff = row[i] * row[j] - s[[i, j]];
                dev += diff * diff;
            }
        }
        b_bar_sq += dev;
    }
    b_bar_sq /= tf * tf;
    let b_sq = b_bar_sq.min(d_sq);
    let intensity = b_sq / d_sq;
    let mut out = s * (1.0 - intensity);
    for i in 0..n {
        out[[i, i]] += intensity * mu;
    }
    Ok((out, intensity))
}

/// Ledoit-Wolf shrinkage covariance toward the scaled identity.
pub fn ledoit_wolf(panel: &TimeSeriesPanel) -> Result<Array2<f64>> {
    ledoit_wolf_with_intensity(panel).map(|(cov, _)| cov)
}

/// Cross-node average series per cluster, treated as single-factor blocks,
/// summarized by pairwise RV coefficients.
pub fn mean_series_rv(
    panel: &TimeSeriesPanel,
    layout: &NetworkLayout,
    level: Level,
) -> Result<RvMatrix> {
    layout.ensure_valid()?;
    panel.ensure_matches(layout)?;
    let t = panel.num_samples();
    let y = panel.data();
    let mut means = Array2::<f64>::zeros((t, layout.num_clusters()));
    for (r, cluster) in layout.clusters.iter().enumerate() {
        let inv = 1.0 / cluster.nodes.len() as f64;
        for ti in 0..t {
            let mut acc = 0.0;
            for &node in &cluster.nodes {
                acc += y[[ti, node]];
            }
            means[[ti, r]] = acc * inv;
        }
    }
    let blocks: Vec<Array2<f64>> = match level {
        Level::Cluster => (0..layout.num_clusters())
            .map(|r| {
                means
                    .column(r)
                    .to_owned()
                    .into_shape_with_order((t, 1))
                    .expect("column reshape")
            })
            .collect(),
        Level::Network => layout
            .networks
            .iter()
            .map(|net| {
                let mut block = Array2::zeros((t, net.clusters.len()));
                for (c, &r) in net.clusters.iter().enumerate() {
                    block.column_mut(c).assign(&means.column(r));
                }
                block
            })
            .collect(),
    };
    let k = blocks.len();
    let mut values = Array2::zeros((k, k));
    for i in 0..k {
        values[[i, i]] = 1.0;
        for j in (i + 1)..k {
            let rv = rv_coefficient(&blocks[i].view(), &blocks[j].view())?;
            values[[i, j]] = rv;
            values[[j, i]] = rv;
        }
    }
    Ok(RvMatrix { values, level })
}

/// Sum of squared entry differences between two equally shaped matrices.
pub fn frobenius_sq_error(a: &Array2<f64>, b: &Array2<f64>) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Dimension {
            context: "frobenius_sq_error",
            expected: format!("{:?}", a.dim()),
            actual: format!("{:?}", b.dim()),
        });
    }
    Ok(a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum())
}

struct RepOutcome {
    corr_error: Option<f64>,
    rv_error: Option<f64>,
    seconds: f64,
    failed: bool,
}

fn score_estimator(
    estimator: &EstimatorSpec,
    panel: &TimeSeriesPanel,
    layout: &NetworkLayout,
    truth_corr: &Array2<f64>,
    truth_rv: &RvMatrix,
) -> Result<(Option<f64>, Option<f64>)> {
    match estimator {
        EstimatorSpec::Sample => {
            let corr = sample_correlation(panel)?;
            Ok((Some(frobenius_sq_error(&corr, truth_corr)?), None))
        }
        EstimatorSpec::LedoitWolf => {
            let cov = ledoit_wolf(panel)?;
            let corr = cov_to_corr(&cov)?;
            Ok((Some(frobenius_sq_error(&corr, truth_corr)?), None))
        }
        EstimatorSpec::Msfa { selection } => {
            let centered = center_panel(panel)?;
            let fit = fit_global(&centered, layout, selection)?;
            let corr = cov_to_corr(&whole_network_cov(&fit)?)?;
            let rv = rv_matrix_clusters(&fit)?;
            Ok((
                Some(frobenius_sq_error(&corr, truth_corr)?),
                Some(frobenius_sq_error(&rv.values, &truth_rv.values)?),
            ))
        }
        EstimatorSpec::MeanRv => {
            let centered = center_panel(panel)?;
            let rv = mean_series_rv(&centered, layout, Level::Cluster)?;
            Ok((None, Some(frobenius_sq_error(&rv.values, &truth_rv.values)?)))
        }
    }
}

/// Run the full benchmark. One coefficient matrix is drawn per master seed
/// (unless the simulation spec pins its own), then every `(T, replication)`
/// cell simulates a fresh panel and scores the whole roster. Fully
/// reproducible: replication seeds derive from the master seed by counter.
pub fn run_benchmark(config: &BenchConfig) -> Result<BenchResult> {
    config.validate()?;
    let mut sim = config.sim.clone();
    if sim.seed.is_none() {
        sim.seed = Some(child_seed(config.master_seed, 0));
    }
    let model = build_modular_var(&sim)?;
    let sigma = implied_stationary_cov(&model)?;
    let truth_corr = cov_to_corr(&sigma)?;
    let truth_rv = rv_from_covariance(&sigma, &model.layout, Level::Cluster)?;

    let mut rows = Vec::new();
    let mut raw_errors = Vec::new();
    for (t_idx, &t) in config.sample_sizes.iter().enumerate() {
        // One panel per replication, shared by all estimators.
        let panels: Vec<Result<TimeSeriesPanel>> = (0..config.replications)
            .into_par_iter()
            .map(|rep| {
                let seed = child_seed(
                    config.master_seed,
                    ((t_idx as u64 + 1) << 32) | rep as u64,
                );
                simulate_series(&model, t, config.burn_in, seed)
            })
            .collect();
        for estimator in &config.estimators {
            let outcomes: Vec<RepOutcome> = panels
                .par_iter()
                .map(|panel| match panel {
                    Ok(panel) => {
                        let start = Instant::now();
                        let scored =
                            score_estimator(estimator, panel, &model.layout, &truth_corr, &truth_rv);
                        let seconds = start.elapsed().as_secs_f64();
                        match scored {
                            Ok((corr_error, rv_error)) => RepOutcome {
                                corr_error,
                                rv_error,
                                seconds,
                                failed: false,
                            },
                            Err(_) => RepOutcome {
                                corr_error: None,
                                rv_error: None,
                                seconds,
                                failed: true,
                            },
                        }
                    }
                    Err(_) => RepOutcome {
                        corr_error: None,
                        rv_error: None,
                        seconds: 0.0,
                        failed: true,
                    },
                })
                .collect();
            let failures = outcomes.iter().filter(|o| o.failed).count();
            let corr: Vec<f64> = outcomes.iter().filter_map(|o| o.corr_error).collect();
            let rv: Vec<f64> = outcomes.iter().filter_map(|o| o.rv_error).collect();
            let secs = outcomes.iter().map(|o| o.seconds).sum::<f64>()
                / outcomes.len().max(1) as f64;
            for (rep, o) in outcomes.iter().enumerate() {
                raw_errors.push(RawError {
                    estimator: estimator.label(),
                    t,
                    replication: rep,
                    corr_error: o.corr_error,
                    rv_error: o.rv_error,
                });
            }
            rows.push(BenchRow {
                estimator: estimator.label(),
                t,
                replications: config.replications,
                failures,
                corr_error: summarize(&corr),
                rv_error: summarize(&rv),
                wall_secs_per_fit: secs,
            });
        }
    }

    let largest_t = config.sample_sizes.iter().copied().max().unwrap_or(0);
    let sample_mean = rows
        .iter()
        .find(|r| r.t == largest_t && r.estimator == "sample")
        .and_then(|r| r.corr_error.map(|s| s.mean));
    let msfa_means: Vec<f64> = rows
        .iter()
        .filter(|r| r.t == largest_t && r.estimator.starts_with("msfa"))
        .filter_map(|r| r.corr_error.map(|s| s.mean))
        .collect();
    let sample_beats_msfa_at_largest_t = match (sample_mean, msfa_means.is_empty()) {
        (Some(s), false) => Some(msfa_means.iter().all(|&m| s < m)),
        _ => None,
    };

    Ok(BenchResult {
        rows,
        raw_errors,
        sample_beats_msfa_at_largest_t,
    })
}
