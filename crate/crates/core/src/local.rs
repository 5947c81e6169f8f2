//! Per-cluster factor model estimation.
//!
//! A cluster's `T x n_r` signal block `Y_r` is modeled as
//!
//! ```text
//! Y_r(t) = Q_r f_r(t) + E_r(t)
//! ```
//!
//! with an orthonormal `n_r x m_r` loading matrix `Q_r`, uncorrelated latent
//! factors `f_r(t)` and diagonal noise covariance. Estimation is by PCA on
//! the sample covariance: the cross-sectional `Y'Y/T` when `T >= n_r`, the
//! temporal `YY'/T` otherwise. Both branches produce identical common-part
//! reconstructions; the temporal branch only avoids the `n_r x n_r`
//! eigenproblem when the cluster out-sizes the sample.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{eig_sym_desc, EIG_RANK_TOL};

/// Which sample covariance the PCA ran on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PcaBranch {
    /// Eigendecomposition of the `n_r x n_r` matrix `Y'Y/T` (used when `T >= n_r`).
    CrossSectional,
    /// Eigendecomposition of the `T x T` matrix `YY'/T` (used when `T < n_r`).
    Temporal,
}

/// Policy for choosing the number of factors per cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FactorSelection {
    /// Use exactly this many factors in every cluster.
    Fixed { m: usize },
    /// Largest count whose cumulative explained-variance fraction stays
    /// within `tau`, optionally capped.
    VarianceThreshold {
        tau: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        cap: Option<usize>,
    },
    /// Penalized log-residual criterion minimized over `1..=l_max`.
    Bic {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        l_max: Option<usize>,
    },
}

/// Estimates for one cluster.
#[derive(Debug, Clone)]
pub struct LocalFactorFit {
    /// `n_r x m_r` orthonormal loading matrix.
    pub loadings: Array2<f64>,
    /// `T x m_r` factor series.
    pub factors: Array2<f64>,
    /// Diagonal of the factor covariance (top eigenvalues, descending).
    pub factor_cov: Vec<f64>,
    /// Diagonal of the noise covariance, one entry per node.
    pub noise_var: Vec<f64>,
    /// Full sample-covariance spectrum, length `min(n_r, T)`, descending.
    pub all_eigenvalues: Vec<f64>,
    pub num_factors: usize,
    pub branch: PcaBranch,
}

impl LocalFactorFit {
    pub fn num_nodes(&self) -> usize {
        self.loadings.nrows()
    }

    pub fn num_samples(&self) -> usize {
        self.factors.nrows()
    }
}

/// Count of eigenvalues considered nonzero for factor extraction.
fn selectable_rank(eigenvalues: &[f64]) -> usize {
    let lambda_max = eigenvalues.first().copied().unwrap_or(0.0);
    if lambda_max <= 0.0 {
        return 0;
    }
    eigenvalues
        .iter()
        .take_while(|&&v| v >= EIG_RANK_TOL * lambda_max)
        .count()
}

/// Number of factors needed to explain at most a `tau` fraction of total
/// variance: the largest `l` with `sum(lambda[..l]) / sum(lambda) <= tau`,
/// floored at 1 and optionally capped.
///
/// The floor covers the case where even the first component exceeds `tau`;
/// a fit always carries at least one factor.
pub fn select_num_factors_variance(
    eigenvalues: &[f64],
    tau: f64,
    cap: Option<usize>,
) -> Result<usize> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::Parameter {
            name: "tau",
            reason: format!("must be in [0, 1], got {tau}"),
        });
    }
    if eigenvalues.is_empty() || eigenvalues.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Parameter {
            name: "eigenvalues",
            reason: "must be a non-empty list of finite nonnegative values".into(),
        });
    }
    if eigenvalues.windows(2).any(|w| w[0] < w[1]) {
        return Err(Error::Parameter {
            name: "eigenvalues",
            reason: "must be sorted in descending order".into(),
        });
    }
    let total: f64 = eigenvalues.iter().sum();
    if total <= 0.0 {
        return Err(Error::Numerical(
            "factor selection on an all-zero spectrum".into(),
        ));
    }
    let limit = cap.unwrap_or(usize::MAX).min(eigenvalues.len()).max(1);
    let mut selected = 1usize;
    let mut cumulative = 0.0;
    for (i, &lambda) in eigenvalues.iter().take(limit).enumerate() {
        cumulative += lambda;
        if cumulative / total <= tau {
            selected = i + 1;
        } else if i == 0 {
            // Floor: first component already above the threshold.
            selected = 1;
            break;
        } else {
            break;
        }
    }
    Ok(selected)
}

/// Residual mean square after removing the top `l` components, for every
/// candidate `l`, via the eigenvalue tail: `V(l) = sum(lambda[l..]) / n_r`.
fn residual_mean_squares(eigenvalues: &[f64], n: usize, l_max: usize) -> Vec<f64> {
    let total: f64 = eigenvalues.iter().sum();
    let mut head = 0.0;
    (1..=l_max)
        .map(|l| {
            head += eigenvalues.get(l - 1).copied().unwrap_or(0.0);
            ((total - head).max(0.0)) / n as f64
        })
        .collect()
}

/// Guard against `ln(0)` when a candidate count fits the data exactly.
const BIC_RESIDUAL_FLOOR: f64 = 1e-12;

/// Penalized model selection of the factor count on a centered block.
///
/// For each `l` in `1..=l_max` the criterion
///
/// ```text
/// ln(max(V(l), 1e-12)) + l * ((n+T)/(nT)) * ln(nT/(n+T))
/// ```
///
/// is evaluated, with `V(l)` the residual mean square of an `l`-factor PCA
/// fit, and the minimizing `l` returned (first one on ties).
pub fn select_num_factors_bic(y: &Array2<f64>, l_max: usize) -> Result<usize> {
    let (t, n) = (y.nrows(), y.ncols());
    if l_max < 1 {
        return Err(Error::Parameter {
            name: "l_max",
            reason: "must be at least 1".into(),
        });
    }
    if l_max > t.min(n) {
        return Err(Error::Parameter {
            name: "l_max",
            reason: format!("must not exceed min(n, T) = {}", t.min(n)),
        });
    }
    let eigenvalues = covariance_spectrum(y)?.0;
    let nt = (n * t) as f64;
    let penalty_unit = ((n + t) as f64 / nt) * (nt / (n + t) as f64).ln();
    let mut best = (1usize, f64::INFINITY);
    for (i, v) in residual_mean_squares(&eigenvalues, n, l_max)
        .into_iter()
        .enumerate()
    {
        let l = i + 1;
        let criterion = v.max(BIC_RESIDUAL_FLOOR).ln() + l as f64 * penalty_unit;
        if criterion < best.1 {
            best = (l, criterion);
        }
    }
    Ok(best.0)
}

/// Spectrum of the branch-appropriate sample covariance, plus the branch and
/// its eigenvectors.
fn covariance_spectrum(y: &Array2<f64>) -> Result<(Vec<f64>, Array2<f64>, PcaBranch)> {
    let (t, n) = (y.nrows(), y.ncols());
    if t < 2 {
        return Err(Error::Parameter {
            name: "panel",
            reason: format!("factor fitting needs T >= 2, got T = {t}"),
        });
    }
    if n < 1 {
        return Err(Error::Parameter {
            name: "panel",
            reason: "cluster has no nodes".into(),
        });
    }
    let branch = if t >= n {
        PcaBranch::CrossSectional
    } else {
        PcaBranch::Temporal
    };
    let cov = match branch {
        PcaBranch::CrossSectional => y.t().dot(y) / t as f64,
        PcaBranch::Temporal => y.dot(&y.t()) / t as f64,
    };
    let (vals, vecs) = eig_sym_desc(&cov)?;
    Ok((vals, vecs, branch))
}

fn resolve_num_factors(
    selection: &FactorSelection,
    eigenvalues: &[f64],
    y: &Array2<f64>,
) -> Result<usize> {
    let (t, n) = (y.nrows(), y.ncols());
    let kappa = t.min(n);
    let rank = selectable_rank(eigenvalues);
    if rank == 0 {
        return Err(Error::Numerical(
            "zero-variance cluster: all sample eigenvalues vanish".into(),
        ));
    }
    let m = match selection {
        FactorSelection::Fixed { m } => *m,
        FactorSelection::VarianceThreshold { tau, cap } => {
            let cap = Some(cap.unwrap_or(usize::MAX).min(rank));
            select_num_factors_variance(eigenvalues, *tau, cap)?
        }
        FactorSelection::Bic { l_max } => {
            let l_max = l_max.unwrap_or_else(|| kappa.min(15)).min(kappa);
            select_num_factors_bic(y, l_max)?
        }
    };
    if m < 1 || m > kappa {
        return Err(Error::Parameter {
            name: "num_factors",
            reason: format!("selected m = {m} outside 1..=min(n, T) = {kappa}"),
        });
    }
    if m > rank {
        return Err(Error::Numerical(format!(
            "selected m = {m} exceeds the numerically nonzero spectrum ({rank} eigenvalues)"
        )));
    }
    Ok(m)
}

/// Fit the factor model on a centered `T x n_r` block, routing `T >= n_r` to
/// the cross-sectional branch and `T < n_r` to the temporal branch.
pub fn fit_local(y: &Array2<f64>, selection: &FactorSelection) -> Result<LocalFactorFit> {
    let (eigenvalues, eigenvectors, branch) = covariance_spectrum(y)?;
    fit_from_spectrum(y, selection, eigenvalues, eigenvectors, branch)
}

/// Fit with an explicit branch choice, regardless of the `T` vs `n_r` shape.
///
/// Mostly useful for cross-checking that the two branches agree on square
/// blocks; [`fit_local`] picks the branch automatically.
pub fn fit_local_with_branch(
    y: &Array2<f64>,
    selection: &FactorSelection,
    branch: PcaBranch,
) -> Result<LocalFactorFit> {
    let (t, n) = (y.nrows(), y.ncols());
    if t < 2 {
        return Err(Error::Parameter {
            name: "panel",
            reason: format!("factor fitting needs T >= 2, got T = {t}"),
        });
    }
    let cov = match branch {
        PcaBranch::CrossSectional => y.t().dot(y) / t as f64,
        PcaBranch::Temporal => y.dot(&y.t()) / t as f64,
    };
    let (vals, vecs) = eig_sym_desc(&cov)?;
    let keep = t.min(n);
    let vals = vals.into_iter().take(keep).collect::<Vec<_>>();
    fit_from_spectrum(y, selection, vals, vecs, branch)
}

fn fit_from_spectrum(
    y: &Array2<f64>,
    selection: &FactorSelection,
    eigenvalues: Vec<f64>,
    eigenvectors: Array2<f64>,
    branch: PcaBranch,
) -> Result<LocalFactorFit> {
    let (t, n) = (y.nrows(), y.ncols());
    let kappa = t.min(n);
    let all_eigenvalues: Vec<f64> = eigenvalues.iter().take(kappa).copied().collect();
    let m = resolve_num_factors(selection, &all_eigenvalues, y)?;

    let (loadings, factors, factor_cov) = match branch {
        PcaBranch::CrossSectional => {
            let loadings = eigenvectors.slice(ndarray::s![.., ..m]).to_owned();
            let factors = y.dot(&loadings);
            let factor_cov = all_eigenvalues[..m].to_vec();
            (loadings, factors, factor_cov)
        }
        PcaBranch::Temporal => {
            let v = eigenvectors.slice(ndarray::s![.., ..m]).to_owned();
            let d = &all_eigenvalues[..m];
            // f = sqrt(T) V D^{1/2},  Q = Y' f D^{-1} / T = Y' V D^{-1/2} / sqrt(T)
            let sqrt_t = (t as f64).sqrt();
            let mut factors = v.clone();
            for (k, mut col) in factors.columns_mut().into_iter().enumerate() {
                col.mapv_inplace(|x| x * sqrt_t * d[k].sqrt());
            }
            let mut loadings = y.t().dot(&v);
            for (k, mut col) in loadings.columns_mut().into_iter().enumerate() {
                col.mapv_inplace(|x| x / (d[k].sqrt() * sqrt_t));
            }
            (loadings, factors, d.to_vec())
        }
    };

    // Noise variances from residuals: sigma_i^2 = (1/T) sum_t e_i(t)^2.
    let common = factors.dot(&loadings.t());
    let mut noise_var = vec![0.0; n];
    for ti in 0..t {
        for i in 0..n {
            let e = y[[ti, i]] - common[[ti, i]];
            noise_var[i] += e * e;
        }
    }
    for v in &mut noise_var {
        *v /= t as f64;
    }

    Ok(LocalFactorFit {
        loadings,
        factors,
        factor_cov,
        noise_var,
        all_eigenvalues,
        num_factors: m,
        branch,
    })
}

/// Within-cluster covariance `Q diag(factor_cov) Q' + diag(noise_var)`.
pub fn within_cluster_cov(fit: &LocalFactorFit) -> Array2<f64> {
    let n = fit.num_nodes();
    let m = fit.num_factors;
    let mut out = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut acc = 0.0;
            for k in 0..m {
                acc += fit.factor_cov[k] * fit.loadings[[i, k]] * fit.loadings[[j, k]];
            }
            out[[i, j]] = acc;
            out[[j, i]] = acc;
        }
        out[[i, i]] += fit.noise_var[i];
    }
    out
}
