//! Problem-instance types: the regression data, the feature-to-group map, the
//! group-level graph and its incidence matrix, and the penalized objective
//!
//! ```text
//! 1/2 ||y - A beta||^2 + lambda1 sum_k w_k |g_k| + lambda2 ||T g||_1 + lambda3 ||s||_1
//! ```
//!
//! with `beta = (M^T g) o s`.

use std::collections::HashSet;

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Column means of `A` and the mean of `y` that were subtracted by [`center_dataset`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Centering {
    pub column_means: Array1<f64>,
    pub y_mean: f64,
}

/// A regression instance: design matrix (samples x features) and response.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub a: Array2<f64>,
    pub y: Array1<f64>,
    pub feature_ids: Vec<String>,
    pub sample_ids: Vec<String>,
    centering: Option<Centering>,
}

impl Dataset {
    pub fn new(
        a: Array2<f64>,
        y: Array1<f64>,
        feature_ids: Vec<String>,
        sample_ids: Vec<String>,
    ) -> Result<Self> {
        let (n, p) = a.dim();
        if n == 0 || p == 0 {
            return Err(Error::validation(format!(
                "dataset must have at least one sample and one feature (got {n}x{p})"
            )));
        }
        check_dim("response length", n, y.len())?;
        check_dim("feature id count", p, feature_ids.len())?;
        check_dim("sample id count", n, sample_ids.len())?;
        for ((row, col), v) in a.indexed_iter() {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    what: "design matrix",
                    row,
                    col,
                });
            }
        }
        if let Some(row) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "response",
                row,
                col: 0,
            });
        }
        Ok(Dataset {
            a,
            y,
            feature_ids,
            sample_ids,
            centering: None,
        })
    }

    /// Dataset with generated identifiers `f0.., s0..`.
    pub fn from_arrays(a: Array2<f64>, y: Array1<f64>) -> Result<Self> {
        let feature_ids = (0..a.ncols()).map(|j| format!("f{j}")).collect();
        let sample_ids = (0..a.nrows()).map(|i| format!("s{i}")).collect();
        Self::new(a, y, feature_ids, sample_ids)
    }

    pub fn n_samples(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.a.ncols()
    }

    /// Statistics subtracted by centering, if this dataset has been centered.
    pub fn centering(&self) -> Option<&Centering> {
        self.centering.as_ref()
    }

    /// Uncentered copy restricted to the given sample rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        Dataset {
            a: self.a.select(Axis(0), rows),
            y: self.y.select(Axis(0), rows),
            feature_ids: self.feature_ids.clone(),
            sample_ids: rows.iter().map(|&i| self.sample_ids[i].clone()).collect(),
            centering: None,
        }
    }
}

/// Subtracts column means from `A` and the mean from `y`.
///
/// The subtracted statistics are kept on the result so that predictions on new
/// data can be made on the original scale. Centering an already centered
/// dataset composes the statistics.
pub fn center_dataset(dataset: &Dataset) -> Result<Dataset> {
    let checked = Dataset::new(
        dataset.a.clone(),
        dataset.y.clone(),
        dataset.feature_ids.clone(),
        dataset.sample_ids.clone(),
    )?;
    let means = checked
        .a
        .mean_axis(Axis(0))
        .expect("dataset has at least one row");
    let y_mean = checked.y.mean().expect("dataset has at least one row");
    let mut a = checked.a;
    a -= &means.view().insert_axis(Axis(0));
    let y = checked.y - y_mean;
    let centering = match &dataset.centering {
        Some(prev) => Centering {
            column_means: &prev.column_means + &means,
            y_mean: prev.y_mean + y_mean,
        },
        None => Centering {
            column_means: means,
            y_mean,
        },
    };
    Ok(Dataset {
        a,
        y,
        feature_ids: checked.feature_ids,
        sample_ids: checked.sample_ids,
        centering: Some(centering),
    })
}

/// Non-overlapping, exhaustive assignment of features to groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMap {
    assignment: Vec<usize>,
    sizes: Vec<usize>,
    members: Vec<Vec<usize>>,
    ids: Vec<String>,
}

impl GroupMap {
    /// `assignment[j]` is the group of feature `j`; groups are `0..k`.
    pub fn new(assignment: Vec<usize>, k: usize) -> Result<Self> {
        let ids = (0..k).map(|i| format!("G{i}")).collect();
        Self::with_ids(assignment, ids)
    }

    pub fn with_ids(assignment: Vec<usize>, ids: Vec<String>) -> Result<Self> {
        let k = ids.len();
        if assignment.is_empty() {
            return Err(Error::validation("group map must cover at least one feature"));
        }
        let mut members = vec![Vec::new(); k];
        for (j, &group) in assignment.iter().enumerate() {
            if group >= k {
                return Err(Error::Index {
                    context: "group assignment",
                    index: group,
                    bound: k,
                });
            }
            members[group].push(j);
        }
        if let Some(empty) = members.iter().position(|m| m.is_empty()) {
            return Err(Error::validation(format!("group {} has no features", ids[empty])));
        }
        let sizes = members.iter().map(Vec::len).collect();
        Ok(GroupMap {
            assignment,
            sizes,
            members,
            ids,
        })
    }

    /// Contiguous groups: the first `sizes[0]` features form group 0, and so on.
    pub fn from_sizes(sizes: &[usize]) -> Result<Self> {
        let assignment = sizes
            .iter()
            .enumerate()
            .flat_map(|(k, &n)| std::iter::repeat(k).take(n))
            .collect();
        Self::new(assignment, sizes.len())
    }

    pub fn k(&self) -> usize {
        self.sizes.len()
    }

    pub fn p(&self) -> usize {
        self.assignment.len()
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn group_of(&self, feature: usize) -> usize {
        self.assignment[feature]
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn members(&self, group: usize) -> &[usize] {
        &self.members[group]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    /// `w_k = sqrt(p_k)`.
    pub fn default_weights(&self) -> Vec<f64> {
        self.sizes.iter().map(|&n| (n as f64).sqrt()).collect()
    }

    /// `M^T g`: broadcasts each group value to its features.
    pub fn expand(&self, g: &Array1<f64>) -> Array1<f64> {
        self.assignment.iter().map(|&k| g[k]).collect()
    }

    /// `M v`: per-group sum of feature values.
    pub fn group_sum(&self, v: &Array1<f64>) -> Array1<f64> {
        let mut out = Array1::zeros(self.k());
        for (&k, &x) in self.assignment.iter().zip(v.iter()) {
            out[k] += x;
        }
        out
    }
}

/// An undirected edge between groups `i < j` with signed correlation weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub weight: f64,
}

/// Weighted undirected graph over groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneGraph {
    pub k: usize,
    pub edges: Vec<Edge>,
}

impl GeneGraph {
    /// Builds a graph, putting each edge in `i < j` order.
    pub fn new(k: usize, edges: impl IntoIterator<Item = (usize, usize, f64)>) -> Result<Self> {
        let edges = edges
            .into_iter()
            .map(|(a, b, weight)| Edge {
                i: a.min(b),
                j: a.max(b),
                weight,
            })
            .collect();
        let graph = GeneGraph { k, edges };
        graph.validate()?;
        Ok(graph)
    }

    pub fn empty(k: usize) -> Self {
        GeneGraph {
            k,
            edges: Vec::new(),
        }
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::with_capacity(self.edges.len());
        for e in &self.edges {
            for idx in [e.i, e.j] {
                if idx >= self.k {
                    return Err(Error::Index {
                        context: "graph node",
                        index: idx,
                        bound: self.k,
                    });
                }
            }
            if e.i >= e.j {
                return Err(Error::validation(format!(
                    "edge ({}, {}) is not in canonical i < j order",
                    e.i, e.j
                )));
            }
            if e.weight == 0.0 || !e.weight.is_finite() {
                return Err(Error::validation(format!(
                    "edge ({}, {}) has weight {}; weights must be finite and nonzero",
                    e.i, e.j, e.weight
                )));
            }
            if !seen.insert((e.i, e.j)) {
                return Err(Error::validation(format!("duplicate edge ({}, {})", e.i, e.j)));
            }
        }
        Ok(())
    }
}

/// The monotone edge-weight function `tau` applied to edge correlations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EdgeWeight {
    /// `tau(r) = |r|`
    #[default]
    Absolute,
    /// `tau(r) = 1`
    Unit,
    /// One positive `tau` per edge, in graph edge order.
    Custom(Vec<f64>),
}

impl EdgeWeight {
    fn tau(&self, edge_index: usize, weight: f64) -> Result<f64> {
        let tau = match self {
            EdgeWeight::Absolute => weight.abs(),
            EdgeWeight::Unit => 1.0,
            EdgeWeight::Custom(table) => *table.get(edge_index).ok_or(Error::Index {
                context: "custom edge weight table",
                index: edge_index,
                bound: table.len(),
            })?,
        };
        if tau > 0.0 && tau.is_finite() {
            Ok(tau)
        } else {
            Err(Error::validation(format!(
                "edge weight function gives tau = {tau} for edge {edge_index}; must be positive"
            )))
        }
    }
}

/// One row of the incidence matrix: `value_i` at column `i`, `value_j` at column `j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IncidenceRow {
    pub i: usize,
    pub j: usize,
    pub value_i: f64,
    pub value_j: f64,
}

/// Sparse |E| x K edge-incidence matrix `T` with `|(T g)_e| = tau(r) |g_i - sign(r) g_j|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncidenceMatrix {
    cols: usize,
    rows: Vec<IncidenceRow>,
}

impl IncidenceMatrix {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.cols
    }

    pub fn rows(&self) -> &[IncidenceRow] {
        &self.rows
    }

    /// `(row, col, value)` triplets, two per row.
    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(e, r)| [(e, r.i, r.value_i), (e, r.j, r.value_j)])
            .collect()
    }

    /// `T x`
    pub fn apply(&self, x: &Array1<f64>) -> Array1<f64> {
        self.rows
            .iter()
            .map(|r| r.value_i * x[r.i] + r.value_j * x[r.j])
            .collect()
    }

    /// `T^T v`
    pub fn apply_transpose(&self, v: &Array1<f64>) -> Array1<f64> {
        let mut out = Array1::zeros(self.cols);
        for (r, &ve) in self.rows.iter().zip(v.iter()) {
            out[r.i] += r.value_i * ve;
            out[r.j] += r.value_j * ve;
        }
        out
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.rows.len(), self.cols));
        for (e, col, v) in self.triplets() {
            out[[e, col]] += v;
        }
        out
    }
}

/// Builds the edge-incidence matrix of `graph` under the edge-weight function.
pub fn build_incidence(graph: &GeneGraph, edge_weight: &EdgeWeight) -> Result<IncidenceMatrix> {
    graph.validate()?;
    if let EdgeWeight::Custom(table) = edge_weight {
        check_dim("custom edge weight table", graph.n_edges(), table.len())?;
    }
    let rows = graph
        .edges
        .iter()
        .enumerate()
        .map(|(e, edge)| {
            let tau = edge_weight.tau(e, edge.weight)?;
            Ok(IncidenceRow {
                i: edge.i,
                j: edge.j,
                value_i: tau,
                value_j: -edge.weight.signum() * tau,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(IncidenceMatrix {
        cols: graph.k,
        rows,
    })
}

/// Regularization parameters and weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Penalty {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub group_weights: Vec<f64>,
    pub edge_weight: EdgeWeight,
}

impl Penalty {
    /// Penalty with group weights `sqrt(p_k)` and `tau(r) = |r|`.
    pub fn new(lambda1: f64, lambda2: f64, lambda3: f64, groups: &GroupMap) -> Self {
        Penalty {
            lambda1,
            lambda2,
            lambda3,
            group_weights: groups.default_weights(),
            edge_weight: EdgeWeight::Absolute,
        }
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::validation(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        check_dim("group weights", k, self.group_weights.len())?;
        if let Some(w) = self.group_weights.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
            return Err(Error::validation(format!("group weights must be positive, got {w}")));
        }
        Ok(())
    }
}

/// `beta = (M^T g) o s`.
pub fn effective_coefficients(
    g: &Array1<f64>,
    s: &Array1<f64>,
    groups: &GroupMap,
) -> Result<Array1<f64>> {
    check_dim("group vector", groups.k(), g.len())?;
    check_dim("feature vector", groups.p(), s.len())?;
    Ok(groups
        .assignment()
        .iter()
        .zip(s.iter())
        .map(|(&k, &sj)| g[k] * sj)
        .collect())
}

/// Penalized least-squares objective at `(g, s)`.
pub fn objective(
    dataset: &Dataset,
    g: &Array1<f64>,
    s: &Array1<f64>,
    groups: &GroupMap,
    t: &IncidenceMatrix,
    penalty: &Penalty,
) -> Result<f64> {
    check_dim("design columns", groups.p(), dataset.n_features())?;
    check_dim("incidence columns", groups.k(), t.n_cols())?;
    check_dim("group weights", groups.k(), penalty.group_weights.len())?;
    let beta = effective_coefficients(g, s, groups)?;
    Ok(penalized_objective(dataset, &beta, g, s, t, penalty))
}

pub(crate) fn penalized_objective(
    dataset: &Dataset,
    beta: &Array1<f64>,
    g: &Array1<f64>,
    s: &Array1<f64>,
    t: &IncidenceMatrix,
    penalty: &Penalty,
) -> f64 {
    let loss = squared_loss(dataset, beta);
    let group_term: f64 = g
        .iter()
        .zip(&penalty.group_weights)
        .map(|(gk, w)| w * gk.abs())
        .sum();
    let fusion_term: f64 = t.apply(g).iter().map(|v| v.abs()).sum();
    let feature_term: f64 = s.iter().map(|v| v.abs()).sum();
    loss + penalty.lambda1 * group_term + penalty.lambda2 * fusion_term + penalty.lambda3 * feature_term
}

/// `1/2 ||y - A beta||^2`
pub(crate) fn squared_loss(dataset: &Dataset, beta: &Array1<f64>) -> f64 {
    let resid = &dataset.y - &dataset.a.dot(beta);
    0.5 * resid.dot(&resid)
}
