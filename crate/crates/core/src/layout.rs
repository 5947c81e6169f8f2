//! Hierarchy and panel data model shared by all estimators.
//!
//! A [`NetworkLayout`] fixes the two-level hierarchy: `N` nodes partitioned
//! into `R` disjoint clusters, which are grouped (possibly with overlap) into
//! `S` sub-networks. A [`TimeSeriesPanel`] holds the `T x N` observation
//! matrix with one row per time point, column-partitioned by the layout.

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::{Error, Result};

/// Named group of node indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cluster {
    pub name: String,
    pub nodes: Vec<usize>,
}

/// Named group of cluster indices. Networks may share clusters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Network {
    pub name: String,
    pub clusters: Vec<usize>,
}

/// Fixed hierarchy: nodes, clusters and sub-networks.
///
/// Clusters must strictly partition `0..num_nodes`; overlap is permitted only
/// at the network level. All indices are 0-based, including in the JSON file
/// format, to avoid silent off-by-one against external node tables.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkLayout {
    pub num_nodes: usize,
    pub clusters: Vec<Cluster>,
    pub networks: Vec<Network>,
}

/// One rule violation found by [`NetworkLayout::validate`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayoutViolation {
    NodeInMultipleClusters {
        node: usize,
        first: usize,
        second: usize,
    },
    NodeUnassigned {
        node: usize,
    },
    NodeOutOfRange {
        cluster: usize,
        node: usize,
    },
    EmptyCluster {
        cluster: usize,
    },
    EmptyNetwork {
        network: usize,
    },
    ClusterIndexOutOfRange {
        network: usize,
        cluster: usize,
    },
    DuplicateClusterInNetwork {
        network: usize,
        cluster: usize,
    },
}

impl fmt::Display for LayoutViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayoutViolation::NodeInMultipleClusters { node, first, second } => {
                write!(f, "node {node} in two clusters ({first} and {second})")
            }
            LayoutViolation::NodeUnassigned { node } => write!(f, "node {node} unassigned"),
            LayoutViolation::NodeOutOfRange { cluster, node } => {
                write!(f, "cluster {cluster} references node {node} out of range")
            }
            LayoutViolation::EmptyCluster { cluster } => write!(f, "cluster {cluster} is empty"),
            LayoutViolation::EmptyNetwork { network } => write!(f, "network {network} is empty"),
            LayoutViolation::ClusterIndexOutOfRange { network, cluster } => {
                write!(f, "network {network} references cluster {cluster} out of range")
            }
            LayoutViolation::DuplicateClusterInNetwork { network, cluster } => {
                write!(f, "network {network} lists cluster {cluster} twice")
            }
        }
    }
}

impl NetworkLayout {
    /// Layout with contiguous clusters of the given sizes and auto-generated
    /// names. Convenient for simulations and tests.
    pub fn contiguous(cluster_sizes: &[usize], networks: &[Vec<usize>]) -> Self {
        let mut clusters = Vec::with_capacity(cluster_sizes.len());
        let mut next = 0usize;
        for (r, &n) in cluster_sizes.iter().enumerate() {
            clusters.push(Cluster {
                name: format!("c{r}"),
                nodes: (next..next + n).collect(),
            });
            next += n;
        }
        let networks = networks
            .iter()
            .enumerate()
            .map(|(s, members)| Network {
                name: format!("w{s}"),
                clusters: members.clone(),
            })
            .collect();
        NetworkLayout {
            num_nodes: next,
            clusters,
            networks,
        }
    }

    pub fn num_clusters(&self) -> usize {
        self.clusters.len()
    }

    pub fn num_networks(&self) -> usize {
        self.networks.len()
    }

    /// Size `n_r` of cluster `r`.
    pub fn cluster_size(&self, r: usize) -> Result<usize> {
        self.clusters
            .get(r)
            .map(|c| c.nodes.len())
            .ok_or(Error::IndexOutOfRange {
                what: "cluster",
                index: r,
                bound: self.clusters.len(),
            })
    }

    /// Total node count `D_s` covered by network `s`, summed over its member
    /// clusters (shared clusters counted per occurrence).
    pub fn network_dim(&self, s: usize) -> Result<usize> {
        let net = self.networks.get(s).ok_or(Error::IndexOutOfRange {
            what: "network",
            index: s,
            bound: self.networks.len(),
        })?;
        let mut total = 0;
        for &r in &net.clusters {
            total += self.cluster_size(r)?;
        }
        Ok(total)
    }

    /// Check the partition rules and report every violation found.
    pub fn validate(&self) -> Vec<LayoutViolation> {
        let mut violations = Vec::new();
        let mut owner: Vec<Option<usize>> = vec![None; self.num_nodes];
        for (r, cluster) in self.clusters.iter().enumerate() {
            if cluster.nodes.is_empty() {
                violations.push(LayoutViolation::EmptyCluster { cluster: r });
            }
            for &node in &cluster.nodes {
                if node >= self.num_nodes {
                    violations.push(LayoutViolation::NodeOutOfRange { cluster: r, node });
                    continue;
                }
                match owner[node] {
                    Some(first) => violations.push(LayoutViolation::NodeInMultipleClusters {
                        node,
                        first,
                        second: r,
                    }),
                    None => owner[node] = Some(r),
                }
            }
        }
        for (node, o) in owner.iter().enumerate() {
            if o.is_none() {
                violations.push(LayoutViolation::NodeUnassigned { node });
            }
        }
        for (s, net) in self.networks.iter().enumerate() {
            if net.clusters.is_empty() {
                violations.push(LayoutViolation::EmptyNetwork { network: s });
            }
            let mut seen = vec![false; self.clusters.len()];
            for &r in &net.clusters {
                if r >= self.clusters.len() {
                    violations.push(LayoutViolation::ClusterIndexOutOfRange {
                        network: s,
                        cluster: r,
                    });
                } else if seen[r] {
                    violations.push(LayoutViolation::DuplicateClusterInNetwork {
                        network: s,
                        cluster: r,
                    });
                } else {
                    seen[r] = true;
                }
            }
        }
        violations
    }

    /// Error out with the first violations if the layout is invalid.
    pub fn ensure_valid(&self) -> Result<()> {
        let violations = self.validate();
        if violations.is_empty() {
            Ok(())
        } else {
            let joined = violations
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join("; ");
            Err(Error::Layout(joined))
        }
    }
}

/// `T x N` observation matrix, row `t` holding the length-`N` signal vector.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesPanel {
    data: Array2<f64>,
}

impl TimeSeriesPanel {
    /// Wrap a data matrix, rejecting non-finite entries.
    pub fn new(data: Array2<f64>) -> Result<Self> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("panel contains non-finite entries".into()));
        }
        Ok(TimeSeriesPanel { data })
    }

    pub fn num_samples(&self) -> usize {
        self.data.nrows()
    }

    pub fn num_nodes(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array2<f64> {
        self.data
    }

    /// Check the panel width against a layout.
    pub fn ensure_matches(&self, layout: &NetworkLayout) -> Result<()> {
        if self.num_nodes() != layout.num_nodes {
            return Err(Error::Dimension {
                context: "panel vs layout",
                expected: layout.num_nodes.to_string(),
                actual: self.num_nodes().to_string(),
            });
        }
        Ok(())
    }
}

/// Columns of `panel` at the node indices of cluster `r`, in cluster order.
pub fn extract_cluster(
    panel: &TimeSeriesPanel,
    layout: &NetworkLayout,
    r: usize,
) -> Result<Array2<f64>> {
    panel.ensure_matches(layout)?;
    let cluster = layout.clusters.get(r).ok_or(Error::IndexOutOfRange {
        what: "cluster",
        index: r,
        bound: layout.clusters.len(),
    })?;
    for &node in &cluster.nodes {
        if node >= panel.num_nodes() {
            return Err(Error::IndexOutOfRange {
                what: "node",
                index: node,
                bound: panel.num_nodes(),
            });
        }
    }
    Ok(panel.data().select(Axis(1), &cluster.nodes))
}

/// Subtract each column's temporal mean. The input is left untouched.
///
/// A second refinement pass removes the rounding residue of the first, so
/// the result's column means are zero to second-order floating precision
/// and re-centering is idempotent.
pub fn center_panel(panel: &TimeSeriesPanel) -> Result<TimeSeriesPanel> {
    if panel.num_samples() < 2 {
        return Err(Error::Parameter {
            name: "panel",
            reason: format!("centering needs T >= 2, got T = {}", panel.num_samples()),
        });
    }
    let mut data = panel.data().clone();
    for _ in 0..2 {
        let means = data.mean_axis(Axis(0)).expect("T >= 2 checked above");
        for mut row in data.rows_mut() {
            row -= &means;
        }
    }
    Ok(TimeSeriesPanel { data })
}

/// Scale each column to unit variance (divisor `T`), after centering.
///
/// Optional preprocessing step; the default pipeline centers only.
pub fn standardize_panel(panel: &TimeSeriesPanel) -> Result<TimeSeriesPanel> {
    let centered = center_panel(panel)?;
    let t = centered.num_samples() as f64;
    let mut data = centered.into_data();
    for (j, mut col) in data.columns_mut().into_iter().enumerate() {
        let var = col.iter().map(|v| v * v).sum::<f64>() / t;
        if var <= 0.0 {
            return Err(Error::Numerical(format!(
                "cannot standardize zero-variance node column {j}"
            )));
        }
        let sd = var.sqrt();
        col.mapv_inplace(|v| v / sd);
    }
    Ok(TimeSeriesPanel { data })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn four_node_layout() -> NetworkLayout {
        NetworkLayout::contiguous(&[2, 2], &[vec![0], vec![1]])
    }

    #[test]
    fn valid_partition_passes() {
        assert!(four_node_layout().validate().is_empty());
    }

    #[test]
    fn overlapping_clusters_reported() {
        let layout = NetworkLayout {
            num_nodes: 4,
            clusters: vec![
                Cluster {
                    name: "a".into(),
                    nodes: vec![0, 1],
                },
                Cluster {
                    name: "b".into(),
                    nodes: vec![1, 2, 3],
                },
            ],
            networks: vec![],
        };
        let violations = layout.validate();
        assert!(violations.contains(&LayoutViolation::NodeInMultipleClusters {
            node: 1,
            first: 0,
            second: 1
        }));
        assert_eq!(violations.len(), 1);
        assert_eq!(violations[0].to_string(), "node 1 in two clusters (0 and 1)");
    }

    #[test]
    fn unassigned_node_reported() {
        let layout = NetworkLayout {
            num_nodes: 4,
            clusters: vec![
                Cluster {
                    name: "a".into(),
                    nodes: vec![0, 1],
                },
                Cluster {
                    name: "b".into(),
                    nodes: vec![2],
                },
            ],
            networks: vec![],
        };
        let violations = layout.validate();
        assert_eq!(violations, vec![LayoutViolation::NodeUnassigned { node: 3 }]);
        assert_eq!(violations[0].to_string(), "node 3 unassigned");
    }

    #[test]
    fn out_of_range_and_empty_reported() {
        let layout = NetworkLayout {
            num_nodes: 2,
            clusters: vec![
                Cluster {
                    name: "a".into(),
                    nodes: vec![0, 1, 5],
                },
                Cluster {
                    name: "b".into(),
                    nodes: vec![],
                },
            ],
            networks: vec![Network {
                name: "w".into(),
                clusters: vec![0, 0, 7],
            }],
        };
        let violations = layout.validate();
        assert!(violations.contains(&LayoutViolation::NodeOutOfRange { cluster: 0, node: 5 }));
        assert!(violations.contains(&LayoutViolation::EmptyCluster { cluster: 1 }));
        assert!(violations.contains(&LayoutViolation::ClusterIndexOutOfRange {
            network: 0,
            cluster: 7
        }));
        assert!(violations.contains(&LayoutViolation::DuplicateClusterInNetwork {
            network: 0,
            cluster: 0
        }));
    }

    #[test]
    fn networks_may_share_clusters() {
        let layout = NetworkLayout::contiguous(&[2, 2], &[vec![0, 1], vec![1]]);
        assert!(layout.validate().is_empty());
        assert_eq!(layout.network_dim(0).unwrap(), 4);
        assert_eq!(layout.network_dim(1).unwrap(), 2);
    }

    #[test]
    fn extract_cluster_selects_columns() {
        let layout = NetworkLayout {
            num_nodes: 4,
            clusters: vec![
                Cluster {
                    name: "a".into(),
                    nodes: vec![2, 3],
                },
                Cluster {
                    name: "b".into(),
                    nodes: vec![0, 1],
                },
            ],
            networks: vec![],
        };
        let panel = TimeSeriesPanel::new(array![[1., 2., 3., 4.], [5., 6., 7., 8.]]).unwrap();
        let sub = extract_cluster(&panel, &layout, 0).unwrap();
        assert_eq!(sub, array![[3., 4.], [7., 8.]]);
    }

    #[test]
    fn extract_single_cluster_is_identity() {
        let layout = NetworkLayout::contiguous(&[3], &[]);
        let panel = TimeSeriesPanel::new(array![[1., 2., 3.], [4., 5., 6.]]).unwrap();
        let sub = extract_cluster(&panel, &layout, 0).unwrap();
        assert_eq!(&sub, panel.data());
    }

    #[test]
    fn extract_one_node_cluster() {
        let layout = NetworkLayout::contiguous(&[1, 2], &[]);
        let panel = TimeSeriesPanel::new(array![[1., 2., 3.], [4., 5., 6.]]).unwrap();
        let sub = extract_cluster(&panel, &layout, 0).unwrap();
        assert_eq!(sub, array![[1.], [4.]]);
    }

    #[test]
    fn extract_rejects_out_of_range_cluster() {
        let layout = four_node_layout();
        let panel = TimeSeriesPanel::new(Array2::zeros((3, 4))).unwrap();
        assert!(extract_cluster(&panel, &layout, 2).is_err());
    }

    #[test]
    fn center_constant_column_becomes_zero() {
        let panel = TimeSeriesPanel::new(array![[3., 1.], [3., 3.]]).unwrap();
        let centered = center_panel(&panel).unwrap();
        assert_eq!(centered.data().column(0).to_vec(), vec![0., 0.]);
        assert_eq!(centered.data().column(1).to_vec(), vec![-1., 1.]);
    }

    #[test]
    fn center_is_idempotent() {
        // Recentering can only move entries by rounding residue at the
        // column's scale (the recomputed mean of a centered column).
        let panel = TimeSeriesPanel::new(array![[1., -2.], [3., 0.5], [8., 11.]]).unwrap();
        let once = center_panel(&panel).unwrap();
        let twice = center_panel(&once).unwrap();
        for (col_a, col_b) in once
            .data()
            .columns()
            .into_iter()
            .zip(twice.data().columns())
        {
            let scale = col_a.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            for (a, b) in col_a.iter().zip(col_b.iter()) {
                assert!((a - b).abs() <= 4.0 * f64::EPSILON * scale);
            }
        }
    }

    #[test]
    fn center_rejects_single_row() {
        let panel = TimeSeriesPanel::new(array![[1., 2.]]).unwrap();
        assert!(center_panel(&panel).is_err());
    }

    #[test]
    fn standardize_gives_unit_variance() {
        let panel = TimeSeriesPanel::new(array![[1., 10.], [3., 30.], [5., 50.]]).unwrap();
        let std = standardize_panel(&panel).unwrap();
        let t = std.num_samples() as f64;
        for col in std.data().columns() {
            let var = col.iter().map(|v| v * v).sum::<f64>() / t;
            assert!((var - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn standardize_rejects_constant_column() {
        let panel = TimeSeriesPanel::new(array![[2., 1.], [2., 3.]]).unwrap();
        assert!(standardize_panel(&panel).is_err());
    }

    #[test]
    fn panel_rejects_non_finite() {
        assert!(TimeSeriesPanel::new(array![[1., f64::NAN]]).is_err());
    }
}
