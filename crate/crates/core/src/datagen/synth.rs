use std::collections::VecDeque;

use ndarray::{Array1, Array2, Axis};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{effective_coefficients, Dataset, GeneGraph, GroupMap};

/// Recipe for a synthetic instance with planted group and feature support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    /// Features per group; the number of groups is `sizes.len()`.
    pub sizes: Vec<usize>,
    pub active_groups: Vec<usize>,
    pub active_fraction_within: f64,
    /// Group graph as `(i, j, weight)`.
    pub edges: Vec<(usize, usize, f64)>,
    pub noise_sd: f64,
    /// Within-group feature correlation from a shared latent factor.
    pub correlation: f64,
    /// Range of `|s_j|` on active features.
    pub effect_range: (f64, f64),
    #[serde(default)]
    pub feature_signs: FeatureSigns,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn k(&self) -> usize {
        self.sizes.len()
    }

    pub fn p(&self) -> usize {
        self.sizes.iter().sum()
    }

    fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::validation("synthetic data needs at least two samples"));
        }
        if self.sizes.is_empty() || self.sizes.contains(&0) {
            return Err(Error::validation("every synthetic group needs at least one feature"));
        }
        if !(self.active_fraction_within > 0.0 && self.active_fraction_within <= 1.0) {
            return Err(Error::validation("active_fraction_within must be in (0, 1]"));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::validation("noise_sd must be finite and >= 0"));
        }
        if !(0.0..1.0).contains(&self.correlation) {
            return Err(Error::validation("correlation must be in [0, 1)"));
        }
        let (lo, hi) = self.effect_range;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::validation("effect_range must satisfy 0 < lo <= hi"));
        }
        for &g in &self.active_groups {
            if g >= self.k() {
                return Err(Error::Index {
                    context: "active group",
                    index: g,
                    bound: self.k(),
                });
            }
            if self.active_count(g) < 1 {
                return Err(Error::validation(format!(
                    "active group {g} of size {} has no active features at fraction {}",
                    self.sizes[g], self.active_fraction_within
                )));
            }
        }
        Ok(())
    }

    fn active_count(&self, group: usize) -> usize {
        (self.active_fraction_within * self.sizes[group] as f64 + 1e-9).floor() as usize
    }
}

/// Signs of the planted feature effects `s_j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSigns {
    /// Independent fair coin per feature.
    #[default]
    Random,
    /// All positive, so a group's direction is carried by `g_true` alone.
    Positive,
}

/// Planted coefficients of a synthetic instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub g_true: Array1<f64>,
    pub s_true: Array1<f64>,
    pub beta_true: Array1<f64>,
    pub support: Vec<usize>,
}

/// A graph in which the active groups form a positive-weight chain, the
/// inactive groups form a weaker chain, and one low-weight edge joins the two.
pub fn planted_graph_edges(k: usize, active_groups: &[usize]) -> Vec<(usize, usize, f64)> {
    let mut active: Vec<usize> = active_groups.to_vec();
    active.sort_unstable();
    active.dedup();
    let inactive: Vec<usize> = (0..k).filter(|g| !active.contains(g)).collect();
    let mut edges: Vec<(usize, usize, f64)> =
        active.windows(2).map(|w| (w[0], w[1], 0.8)).collect();
    edges.extend(inactive.windows(2).map(|w| (w[0], w[1], 0.5)));
    if let (Some(&a), Some(&b)) = (active.last(), inactive.first()) {
        edges.push((a, b, 0.2));
    }
    edges
}

/// Group values: one value per connected component of active groups, with
/// signs following edge signs; zero on inactive groups.
fn planted_group_values(spec: &SyntheticSpec, graph: &GeneGraph) -> Array1<f64> {
    let k = spec.k();
    let mut is_active = vec![false; k];
    for &g in &spec.active_groups {
        is_active[g] = true;
    }
    let mut adjacency = vec![Vec::new(); k];
    for e in &graph.edges {
        if is_active[e.i] && is_active[e.j] {
            adjacency[e.i].push((e.j, e.weight.signum()));
            adjacency[e.j].push((e.i, e.weight.signum()));
        }
    }
    let mut g = Array1::zeros(k);
    let mut visited = vec![false; k];
    for root in 0..k {
        if !is_active[root] || visited[root] {
            continue;
        }
        visited[root] = true;
        g[root] = 1.0;
        let mut queue = VecDeque::from([root]);
        while let Some(u) = queue.pop_front() {
            for &(v, sign) in &adjacency[u] {
                if !visited[v] {
                    visited[v] = true;
                    g[v] = sign * g[u];
                    queue.push_back(v);
                }
            }
        }
    }
    g
}

/// Draws a synthetic instance.
///
/// Random draws happen in a fixed order (support, effects, design, noise), so
/// changing `noise_sd` alone leaves the design and the truth unchanged.
pub fn simulate(spec: &SyntheticSpec) -> Result<(Dataset, GroupMap, GeneGraph, GroundTruth)> {
    spec.validate()?;
    let (n, k, p) = (spec.n, spec.k(), spec.p());
    let groups = GroupMap::with_ids(
        GroupMap::from_sizes(&spec.sizes)?.assignment().to_vec(),
        (0..k).map(|g| format!("gene{g}")).collect(),
    )?;
    let graph = GeneGraph::new(k, spec.edges.iter().copied())?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut active: Vec<usize> = spec.active_groups.clone();
    active.sort_unstable();
    active.dedup();
    let mut s_true = Array1::zeros(p);
    let (lo, hi) = spec.effect_range;
    for &grp in &active {
        let members = groups.members(grp);
        let mut picked = sample(&mut rng, members.len(), spec.active_count(grp)).into_vec();
        picked.sort_unstable();
        for idx in picked {
            let magnitude = if hi > lo { rng.gen_range(lo..hi) } else { lo };
            // The coin is drawn either way so both sign modes share one random stream.
            let coin = rng.gen_bool(0.5);
            let sign = match spec.feature_signs {
                FeatureSigns::Positive => 1.0,
                FeatureSigns::Random if coin => 1.0,
                FeatureSigns::Random => -1.0,
            };
            s_true[members[idx]] = sign * magnitude;
        }
    }
    let g_true = planted_group_values(spec, &graph);
    let beta_true = effective_coefficients(&g_true, &s_true, &groups)?;
    let support = beta_true
        .iter()
        .enumerate()
        .filter(|(_, b)| **b != 0.0)
        .map(|(j, _)| j)
        .collect();

    let shared = spec.correlation.sqrt();
    let own = (1.0 - spec.correlation).sqrt();
    let mut a = Array2::<f64>::zeros((n, p));
    for grp in 0..k {
        let factor: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        for &j in groups.members(grp) {
            for (i, f) in factor.iter().enumerate() {
                let e: f64 = rng.sample(StandardNormal);
                a[[i, j]] = shared * f + own * e;
            }
        }
    }
    standardize_columns(&mut a);

    let mut y = a.dot(&beta_true);
    if spec.noise_sd > 0.0 {
        for v in y.iter_mut() {
            let e: f64 = rng.sample(StandardNormal);
            *v += spec.noise_sd * e;
        }
    }

    let feature_ids = (0..p)
        .map(|j| format!("{}_snp{}", groups.ids()[groups.group_of(j)], j))
        .collect();
    let sample_ids = (0..n).map(|i| format!("subj{i}")).collect();
    let dataset = Dataset::new(a, y, feature_ids, sample_ids)?;
    Ok((
        dataset,
        groups,
        graph,
        GroundTruth {
            g_true,
            s_true,
            beta_true,
            support,
        },
    ))
}

/// Noise level that gives `Var(A beta) / noise_sd^2 = snr` for this configuration's design.
pub fn noise_sd_for_snr(spec: &SyntheticSpec, snr: f64) -> Result<f64> {
    if !(snr > 0.0 && snr.is_finite()) {
        return Err(Error::validation("snr must be positive"));
    }
    let noiseless = SyntheticSpec {
        noise_sd: 0.0,
        ..spec.clone()
    };
    let (data, ..) = simulate(&noiseless)?;
    let mean = data.y.mean().unwrap_or(0.0);
    let var = data.y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / data.y.len() as f64;
    Ok((var / snr).sqrt())
}

/// Mean 0, population variance 1 per column; constant columns are left at 0.
fn standardize_columns(a: &mut Array2<f64>) {
    let n = a.nrows() as f64;
    for mut col in a.axis_iter_mut(Axis(1)) {
        let mean = col.sum() / n;
        col -= mean;
        let sd = (col.dot(&col) / n).sqrt();
        if sd > 0.0 {
            col /= sd;
        }
    }
}
