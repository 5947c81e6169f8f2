//! Assembly of cluster fits into the block-structured global model.
//!
//! Concatenating the per-cluster factor series gives the global model
//! `Y(t) = Q f(t) + E(t)` with a block-diagonal mixing matrix, so all
//! between-cluster dependence lives in the factor covariance. The
//! whole-network covariance is reconstructed blockwise from the cluster
//! pieces; the dense `Q Sigma_ff Q' + Sigma_EE` product is never materialized
//! outside test oracles.

use ndarray::{s, Array2};
use rayon::prelude::*;
use std::ops::Range;

use crate::error::{Error, Result};
use crate::layout::{extract_cluster, NetworkLayout, TimeSeriesPanel};
use crate::local::{fit_local, within_cluster_cov, FactorSelection, LocalFactorFit};

/// Dense whole-network assemblies above this node count are refused.
pub const DEFAULT_DENSE_CEILING: usize = 20_000;

/// Cluster fits plus the concatenated factor panel and its covariance.
#[derive(Debug, Clone)]
pub struct GlobalFactorFit {
    pub layout: NetworkLayout,
    pub local_fits: Vec<LocalFactorFit>,
    /// `T x M` concatenation of the cluster factor series, in cluster order.
    pub factors: Array2<f64>,
    /// `M x M` factor covariance: diagonal blocks from the local fits,
    /// off-diagonal blocks sample cross-covariances (divisor `T`).
    pub factor_cov: Array2<f64>,
    /// Column span of each cluster inside `factors`.
    pub block_spans: Vec<Range<usize>>,
}

impl GlobalFactorFit {
    pub fn num_samples(&self) -> usize {
        self.factors.nrows()
    }

    /// Total factor dimension `M`.
    pub fn total_factors(&self) -> usize {
        self.factors.ncols()
    }

    /// Factor columns of cluster `r`.
    pub fn cluster_factors(&self, r: usize) -> Result<ndarray::ArrayView2<'_, f64>> {
        let span = self.block_spans.get(r).ok_or(Error::IndexOutOfRange {
            what: "cluster",
            index: r,
            bound: self.block_spans.len(),
        })?;
        Ok(self.factors.slice(s![.., span.clone()]))
    }

    /// Stacked factor columns of the member clusters of network `s`, in the
    /// declared order. Shared clusters contribute once per occurrence.
    pub fn network_factors(&self, s: usize) -> Result<Array2<f64>> {
        let net = self
            .layout
            .networks
            .get(s)
            .ok_or(Error::IndexOutOfRange {
                what: "network",
                index: s,
                bound: self.layout.networks.len(),
            })?;
        let t = self.num_samples();
        let width: usize = net
            .clusters
            .iter()
            .map(|&r| self.block_spans[r].len())
            .sum();
        let mut out = Array2::zeros((t, width));
        let mut col = 0;
        for &r in &net.clusters {
            let block = self.cluster_factors(r)?;
            let w = block.ncols();
            out.slice_mut(s![.., col..col + w]).assign(&block);
            col += w;
        }
        Ok(out)
    }
}

/// Fit every cluster and assemble the global factor model.
///
/// The layout is validated and the panel is used as supplied; callers are
/// expected to have centered it (the CLI does so by default).
pub fn fit_global(
    panel: &TimeSeriesPanel,
    layout: &NetworkLayout,
    selection: &FactorSelection,
) -> Result<GlobalFactorFit> {
    layout.ensure_valid()?;
    panel.ensure_matches(layout)?;

    let blocks: Vec<Array2<f64>> = (0..layout.num_clusters())
        .map(|r| extract_cluster(panel, layout, r))
        .collect::<Result<_>>()?;
    let local_fits: Vec<LocalFactorFit> = blocks
        .par_iter()
        .map(|y| fit_local(y, selection))
        .collect::<Result<_>>()?;

    let t = panel.num_samples();
    let mut block_spans = Vec::with_capacity(local_fits.len());
    let mut total = 0usize;
    for fit in &local_fits {
        block_spans.push(total..total + fit.num_factors);
        total += fit.num_factors;
    }
    let mut factors = Array2::zeros((t, total));
    for (fit, span) in local_fits.iter().zip(&block_spans) {
        factors.slice_mut(s![.., span.clone()]).assign(&fit.factors);
    }

    let mut factor_cov = Array2::zeros((total, total));
    for (j, span_j) in block_spans.iter().enumerate() {
        for (offset, &lambda) in local_fits[j].factor_cov.iter().enumerate() {
            factor_cov[[span_j.start + offset, span_j.start + offset]] = lambda;
        }
        for span_k in block_spans.iter().skip(j + 1) {
            let fj = factors.slice(s![.., span_j.clone()]);
            let fk = factors.slice(s![.., span_k.clone()]);
            let cross = fj.t().dot(&fk) / t as f64;
            factor_cov
                .slice_mut(s![span_j.clone(), span_k.clone()])
                .assign(&cross);
            factor_cov
                .slice_mut(s![span_k.clone(), span_j.clone()])
                .assign(&cross.t());
        }
    }

    Ok(GlobalFactorFit {
        layout: layout.clone(),
        local_fits,
        factors,
        factor_cov,
        block_spans,
    })
}

/// Sample cross-covariance `(1/T) F_j' F_k` between the factor series of two
/// clusters.
pub fn factor_cross_cov(fit: &GlobalFactorFit, j: usize, k: usize) -> Result<Array2<f64>> {
    let fj = fit.cluster_factors(j)?;
    let fk = fit.cluster_factors(k)?;
    Ok(fj.t().dot(&fk) / fit.num_samples() as f64)
}

/// Sample cross-covariance between the stacked factor series of two networks.
pub fn network_factor_cov(fit: &GlobalFactorFit, p: usize, q: usize) -> Result<Array2<f64>> {
    let fp = fit.network_factors(p)?;
    let fq = fit.network_factors(q)?;
    Ok(fp.t().dot(&fq) / fit.num_samples() as f64)
}

/// Whole-network covariance assembled blockwise: diagonal blocks
/// `Q_r diag(lambda) Q_r' + diag(sigma^2)`, off-diagonal blocks
/// `Q_j Sigma_fjfk Q_k'`, placed at the clusters' node indices.
pub fn whole_network_cov(fit: &GlobalFactorFit) -> Result<Array2<f64>> {
    whole_network_cov_with_ceiling(fit, DEFAULT_DENSE_CEILING)
}

/// Same as [`whole_network_cov`] with an explicit dense-assembly ceiling.
pub fn whole_network_cov_with_ceiling(
    fit: &GlobalFactorFit,
    max_nodes: usize,
) -> Result<Array2<f64>> {
    let n = fit.layout.num_nodes;
    if n > max_nodes {
        return Err(Error::Parameter {
            name: "num_nodes",
            reason: format!("dense assembly of {n} nodes exceeds the ceiling {max_nodes}"),
        });
    }
    let mut out = Array2::<f64>::zeros((n, n));
    let r = fit.layout.num_clusters();
    for j in 0..r {
        let nodes_j = &fit.layout.clusters[j].nodes;
        let diag = within_cluster_cov(&fit.local_fits[j]);
        for (a, &ia) in nodes_j.iter().enumerate() {
            for (b, &ib) in nodes_j.iter().enumerate() {
                out[[ia, ib]] = diag[[a, b]];
            }
        }
        for k in (j + 1)..r {
            let nodes_k = &fit.layout.clusters[k].nodes;
            let cross_f = factor_cross_cov(fit, j, k)?;
            let block = fit.local_fits[j]
                .loadings
                .dot(&cross_f)
                .dot(&fit.local_fits[k].loadings.t());
            for (a, &ia) in nodes_j.iter().enumerate() {
                for (b, &ib) in nodes_k.iter().enumerate() {
                    out[[ia, ib]] = block[[a, b]];
                    out[[ib, ia]] = block[[a, b]];
                }
            }
        }
    }
    Ok(out)
}

/// Correlation matrix from a covariance matrix by diagonal scaling.
///
/// Diagonal entries at or below `1e-15` are rejected. The output diagonal is
/// exactly one.
pub fn cov_to_corr(s: &Array2<f64>) -> Result<Array2<f64>> {
    let p = s.nrows();
    if s.ncols() != p {
        return Err(Error::Dimension {
            context: "cov_to_corr",
            expected: format!("{p}x{p}"),
            actual: format!("{}x{}", s.nrows(), s.ncols()),
        });
    }
    let mut inv_sd = Vec::with_capacity(p);
    for i in 0..p {
        let d = s[[i, i]];
        if d <= 1e-15 {
            return Err(Error::Numerical(format!(
                "cov_to_corr: nonpositive diagonal entry {d:e} at index {i}"
            )));
        }
        inv_sd.push(1.0 / d.sqrt());
    }
    let mut out = Array2::zeros((p, p));
    for i in 0..p {
        for j in 0..p {
            out[[i, j]] = if i == j {
                1.0
            } else {
                s[[i, j]] * inv_sd[i] * inv_sd[j]
            };
        }
    }
    Ok(out)
}
