//! File formats: numeric CSV, the raw binary matrix format, and the JSON
//! documents for layouts, fits, simulation specs and benchmark configs.
//!
//! Matrix CSV is plain rows of comma-separated numbers; readers accept an
//! optional header line. The raw binary format for large panels is
//! little-endian: 4 magic bytes `MSFA`, `u32` row count, `u32` column count,
//! then the `f64` entries row-major. Values are written with the shortest
//! round-trip decimal representation, so reading back a written file
//! reproduces every bit.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::bench::BenchConfig;
use crate::error::{Error, Result};
use crate::global::GlobalFactorFit;
use crate::layout::NetworkLayout;
use crate::local::{FactorSelection, LocalFactorFit, PcaBranch};
use crate::sim::SimulationSpec;

const BINARY_MAGIC: &[u8; 4] = b"MSFA";

/// Render a matrix as CSV text.
pub fn matrix_to_csv(matrix: &Array2<f64>) -> String {
    let mut out = String::new();
    for row in matrix.rows() {
        let mut first = true;
        for v in row.iter() {
            if !first {
                out.push(',');
            }
            out.push_str(&format!("{v}"));
            first = false;
        }
        out.push('\n');
    }
    out
}

pub fn write_matrix_csv(matrix: &Array2<f64>, path: &Path) -> Result<()> {
    fs::write(path, matrix_to_csv(matrix))?;
    Ok(())
}

/// Parse matrix CSV; a first line with any non-numeric token is treated as a
/// header and skipped.
pub fn read_matrix_csv(path: &Path) -> Result<Array2<f64>> {
    let text = fs::read_to_string(path)?;
    parse_matrix_csv(&text, &path.display().to_string())
}

pub fn parse_matrix_csv(text: &str, origin: &str) -> Result<Array2<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> = trimmed
            .split(',')
            .map(|tok| tok.trim().parse::<f64>())
            .collect();
        match parsed {
            Ok(values) => rows.push(values),
            Err(_) if lineno == 0 && rows.is_empty() => continue, // header
            Err(e) => {
                return Err(Error::Parse {
                    path: origin.into(),
                    reason: format!("line {}: {e}", lineno + 1),
                })
            }
        }
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            path: origin.into(),
            reason: "no numeric rows".into(),
        });
    }
    let cols = rows[0].len();
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::Parse {
            path: origin.into(),
            reason: "ragged rows".into(),
        });
    }
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    let nrows = flat.len() / cols;
    Array2::from_shape_vec((nrows, cols), flat).map_err(|e| Error::Parse {
        path: origin.into(),
        reason: e.to_string(),
    })
}

pub fn write_matrix_binary(matrix: &Array2<f64>, path: &Path) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(BINARY_MAGIC)?;
    w.write_all(&(matrix.nrows() as u32).to_le_bytes())?;
    w.write_all(&(matrix.ncols() as u32).to_le_bytes())?;
    for v in matrix.iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix_binary(path: &Path) -> Result<Array2<f64>> {
    let mut file = fs::File::open(path)?;
    let mut header = [0u8; 12];
    file.read_exact(&mut header).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        reason: format!("truncated header: {e}"),
    })?;
    if &header[..4] != BINARY_MAGIC {
        return Err(Error::Parse {
            path: path.display().to_string(),
            reason: "bad magic bytes".into(),
        });
    }
    let nrows = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    let ncols = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)?;
    let expected = nrows * ncols * 8;
    if bytes.len() != expected {
        return Err(Error::Parse {
            path: path.display().to_string(),
            reason: format!("expected {expected} payload bytes, got {}", bytes.len()),
        });
    }
    let flat: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Array2::from_shape_vec((nrows, ncols), flat).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}

/// Auto-detect CSV vs raw binary panels by extension (`.bin` is binary).
pub fn read_panel_auto(path: &Path) -> Result<Array2<f64>> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("bin") => read_matrix_binary(path),
        _ => read_matrix_csv(path),
    }
}

pub fn read_layout_json(path: &Path) -> Result<NetworkLayout> {
    let text = fs::read_to_string(path)?;
    let layout: NetworkLayout = serde_json::from_str(&text)?;
    Ok(layout)
}

pub fn read_simulation_spec(path: &Path) -> Result<SimulationSpec> {
    let text = fs::read_to_string(path)?;
    let spec: SimulationSpec = serde_json::from_str(&text)?;
    spec.validate()?;
    Ok(spec)
}

pub fn read_bench_config(path: &Path) -> Result<BenchConfig> {
    let text = fs::read_to_string(path)?;
    let config: BenchConfig = serde_json::from_str(&text)?;
    config.validate()?;
    Ok(config)
}

fn matrix_to_rows(matrix: &Array2<f64>) -> Vec<Vec<f64>> {
    matrix.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn rows_to_matrix(rows: &[Vec<f64>], what: &str) -> Result<Array2<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map(|r| r.len()).unwrap_or(0);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Parse {
            path: what.into(),
            reason: "ragged matrix rows".into(),
        });
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Array2::from_shape_vec((nrows, ncols), flat).map_err(|e| Error::Parse {
        path: what.into(),
        reason: e.to_string(),
    })
}

/// Serializable form of one cluster fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterFitArtifact {
    pub name: String,
    pub branch: PcaBranch,
    pub num_factors: usize,
    pub eigenvalues: Vec<f64>,
    pub factor_cov: Vec<f64>,
    pub noise_var: Vec<f64>,
    pub loadings: Vec<Vec<f64>>,
    pub factors: Vec<Vec<f64>>,
}

/// Serializable form of a full fit, sufficient to rebuild a
/// [`GlobalFactorFit`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitArtifact {
    pub layout: NetworkLayout,
    pub selection: FactorSelection,
    pub num_samples: usize,
    pub centered: bool,
    pub standardized: bool,
    pub clusters: Vec<ClusterFitArtifact>,
}

impl FitArtifact {
    pub fn from_fit(
        fit: &GlobalFactorFit,
        selection: &FactorSelection,
        centered: bool,
        standardized: bool,
    ) -> Self {
        let clusters = fit
            .local_fits
            .iter()
            .zip(&fit.layout.clusters)
            .map(|(local, cluster)| ClusterFitArtifact {
                name: cluster.name.clone(),
                branch: local.branch,
                num_factors: local.num_factors,
                eigenvalues: local.all_eigenvalues.clone(),
                factor_cov: local.factor_cov.clone(),
                noise_var: local.noise_var.clone(),
                loadings: matrix_to_rows(&local.loadings),
                factors: matrix_to_rows(&local.factors),
            })
            .collect();
        FitArtifact {
            layout: fit.layout.clone(),
            selection: selection.clone(),
            num_samples: fit.num_samples(),
            centered,
            standardized,
            clusters,
        }
    }

    /// Rebuild the in-memory fit, reassembling the concatenated factor panel
    /// and factor covariance from the stored cluster pieces.
    pub fn into_fit(self) -> Result<GlobalFactorFit> {
        let mut local_fits = Vec::with_capacity(self.clusters.len());
        for c in &self.clusters {
            local_fits.push(LocalFactorFit {
                loadings: rows_to_matrix(&c.loadings, "fit loadings")?,
                factors: rows_to_matrix(&c.factors, "fit factors")?,
                factor_cov: c.factor_cov.clone(),
                noise_var: c.noise_var.clone(),
                all_eigenvalues: c.eigenvalues.clone(),
                num_factors: c.num_factors,
                branch: c.branch,
            });
        }
        let t = self.num_samples;
        let mut block_spans = Vec::with_capacity(local_fits.len());
        let mut total = 0usize;
        for fit in &local_fits {
            if fit.factors.nrows() != t {
                return Err(Error::Parse {
                    path: "fit artifact".into(),
                    reason: "factor panel length disagrees with num_samples".into(),
                });
            }
            block_spans.push(total..total + fit.num_factors);
            total += fit.num_factors;
        }
        let mut factors = Array2::zeros((t, total));
        for (fit, span) in local_fits.iter().zip(&block_spans) {
            factors
                .slice_mut(ndarray::s![.., span.clone()])
                .assign(&fit.factors);
        }
        let mut factor_cov = Array2::zeros((total, total));
        for (j, span_j) in block_spans.iter().enumerate() {
            for (offset, &lambda) in local_fits[j].factor_cov.iter().enumerate() {
                factor_cov[[span_j.start + offset, span_j.start + offset]] = lambda;
            }
            for span_k in block_spans.iter().skip(j + 1) {
                let fj = factors.slice(ndarray::s![.., span_j.clone()]);
                let fk = factors.slice(ndarray::s![.., span_k.clone()]);
                let cross = fj.t().dot(&fk) / t as f64;
                factor_cov
                    .slice_mut(ndarray::s![span_j.clone(), span_k.clone()])
                    .assign(&cross);
                factor_cov
                    .slice_mut(ndarray::s![span_k.clone(), span_j.clone()])
                    .assign(&cross.t());
            }
        }
        Ok(GlobalFactorFit {
            layout: self.layout,
            local_fits,
            factors,
            factor_cov,
            block_spans,
        })
    }
}

pub fn write_fit_artifact(artifact: &FitArtifact, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(artifact)?;
    fs::write(path, text)?;
    Ok(())
}

pub fn read_fit_artifact(path: &Path) -> Result<FitArtifact> {
    let text = fs::read_to_string(path)?;
    let artifact: FitArtifact = serde_json::from_str(&text)?;
    Ok(artifact)
}
