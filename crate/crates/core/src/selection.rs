//! Model selection protocols: repeated k-fold cross-validation and stability
//! selection with top-k ranking.
//!
//! Both protocols split the work into independent cells, (replication, fold,
//! grid point) and (subsample, grid point). Each cell draws its randomness from
//! `(seed, cell index)` only and results are reduced in index order, so the
//! reports do not depend on how many threads ran the cells.

use std::fmt::Write as _;

use ndarray::{Array1, Array2};
use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{Baseline, BaselineSpec};
use crate::error::{Error, Result};
use crate::model::{center_dataset, Dataset, EdgeWeight, GeneGraph, GroupMap, Penalty};
use crate::solver::{fit, predict, AdmmSettings, FitResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Sglgg,
    Lasso,
    FusedLasso,
    SparseGroupLasso,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Sglgg,
        Method::Lasso,
        Method::FusedLasso,
        Method::SparseGroupLasso,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Sglgg => "sglgg",
            Method::Lasso => "lasso",
            Method::FusedLasso => "fused_lasso",
            Method::SparseGroupLasso => "sparse_group_lasso",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::validation(format!("unknown method {s:?}")))
    }
}

/// One penalty configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridPoint {
    Sglgg {
        lambda1: f64,
        lambda2: f64,
        lambda3: f64,
    },
    Baseline(Baseline),
}

impl GridPoint {
    pub fn method(&self) -> Method {
        match self {
            GridPoint::Sglgg { .. } => Method::Sglgg,
            GridPoint::Baseline(Baseline::Lasso { .. }) => Method::Lasso,
            GridPoint::Baseline(Baseline::FusedLasso { .. }) => Method::FusedLasso,
            GridPoint::Baseline(Baseline::SparseGroupLasso { .. }) => Method::SparseGroupLasso,
        }
    }

    pub fn lambdas(&self) -> Vec<f64> {
        match self {
            GridPoint::Sglgg {
                lambda1,
                lambda2,
                lambda3,
            } => vec![*lambda1, *lambda2, *lambda3],
            GridPoint::Baseline(b) => b.lambdas(),
        }
    }

    /// Builds the point for `method` from its penalty tuple, in the order of [`GridPoint::lambdas`].
    pub fn from_lambdas(method: Method, l: &[f64]) -> Result<Self> {
        let want = match method {
            Method::Sglgg => 3,
            Method::Lasso => 1,
            _ => 2,
        };
        if l.len() != want {
            return Err(Error::validation(format!(
                "{} takes {want} penalties, got {}",
                method.name(),
                l.len()
            )));
        }
        let point = match method {
            Method::Sglgg => GridPoint::Sglgg {
                lambda1: l[0],
                lambda2: l[1],
                lambda3: l[2],
            },
            Method::Lasso => GridPoint::Baseline(Baseline::Lasso { lambda: l[0] }),
            Method::FusedLasso => GridPoint::Baseline(Baseline::FusedLasso {
                lambda_sparse: l[0],
                lambda_fuse: l[1],
            }),
            Method::SparseGroupLasso => GridPoint::Baseline(Baseline::SparseGroupLasso {
                lambda_group: l[0],
                lambda_feature: l[1],
            }),
        };
        point.validate()?;
        Ok(point)
    }

    fn validate(&self) -> Result<()> {
        match self {
            GridPoint::Baseline(b) => b.validate(),
            GridPoint::Sglgg { .. } => {
                for l in self.lambdas() {
                    if !(l >= 0.0 && l.is_finite()) {
                        return Err(Error::validation(format!(
                            "penalties must be finite and >= 0, got {l}"
                        )));
                    }
                }
                Ok(())
            }
        }
    }
}

/// Ratios of the secondary penalty to the primary one in the default grids.
pub const SECONDARY_RATIOS: [f64; 3] = [0.1, 1.0, 10.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    points: Vec<GridPoint>,
}

impl Grid {
    pub fn new(points: Vec<GridPoint>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::validation("grid must have at least one point"));
        }
        for p in &points {
            p.validate()?;
        }
        Ok(Grid { points })
    }

    pub fn points(&self) -> &[GridPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Default grid of `n_points` configurations for `method`.
    ///
    /// Primary penalties are log-spaced over `[lo, hi] * lambda_max` with
    /// `lambda_max = ||A^T y||_inf`; secondary penalties are the primary one
    /// times each of [`SECONDARY_RATIOS`]. For SGLGG the primary axes are
    /// `lambda1` and `lambda3` (all pairs) and `lambda2` is secondary to
    /// `lambda1`; for the fused lasso `lambda_fuse` is secondary to
    /// `lambda_sparse`; for the sparse group lasso `lambda_group` is secondary to
    /// `lambda_feature`. The full product is thinned to `n_points` evenly
    /// spaced entries.
    pub fn default_for(
        method: Method,
        dataset: &Dataset,
        n_points: usize,
        range: (f64, f64),
    ) -> Result<Self> {
        if n_points == 0 {
            return Err(Error::validation("grid size must be at least 1"));
        }
        let (lo, hi) = range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::validation(format!(
                "grid range must satisfy 0 < lo <= hi, got ({lo}, {hi})"
            )));
        }
        let lmax = lambda_max(dataset);
        let axis = |m: usize| -> Vec<f64> {
            log_spaced(lo, hi, m).into_iter().map(|f| f * lmax).collect()
        };
        let r = SECONDARY_RATIOS.len();
        let mut all = Vec::new();
        match method {
            Method::Sglgg => {
                let mut m = 1;
                while m * m * r < n_points {
                    m += 1;
                }
                let ax = axis(m);
                for &l1 in &ax {
                    for &l3 in &ax {
                        for ratio in SECONDARY_RATIOS {
                            all.push(GridPoint::Sglgg {
                                lambda1: l1,
                                lambda2: ratio * l1,
                                lambda3: l3,
                            });
                        }
                    }
                }
            }
            Method::Lasso => {
                for l in axis(n_points) {
                    all.push(GridPoint::Baseline(Baseline::Lasso { lambda: l }));
                }
            }
            Method::FusedLasso | Method::SparseGroupLasso => {
                for l in axis(n_points.div_ceil(r)) {
                    for ratio in SECONDARY_RATIOS {
                        all.push(GridPoint::from_lambdas(
                            method,
                            &if method == Method::FusedLasso {
                                [l, ratio * l]
                            } else {
                                [ratio * l, l]
                            },
                        )?);
                    }
                }
            }
        }
        let total = all.len();
        let points = (0..n_points.min(total))
            .map(|i| all[i * total / n_points.min(total)])
            .collect();
        Grid::new(points)
    }
}

/// `||A^T y||_inf`, the smallest lasso penalty with an all-zero solution.
pub fn lambda_max(dataset: &Dataset) -> f64 {
    let centered;
    let d = if dataset.centering().is_some() {
        dataset
    } else {
        centered = center_dataset(dataset).expect("a valid dataset can be centered");
        &centered
    };
    d.a.t().dot(&d.y).iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// `m` log-spaced values from `lo` to `hi` inclusive; the geometric mean when `m = 1`.
pub fn log_spaced(lo: f64, hi: f64, m: usize) -> Vec<f64> {
    match m {
        0 => vec![],
        1 => vec![(lo * hi).sqrt()],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            (0..m)
                .map(|i| (a + (b - a) * i as f64 / (m - 1) as f64).exp())
                .collect()
        }
    }
}

/// Everything besides the data and the penalty needed to fit any method.
#[derive(Debug, Clone)]
pub struct FitContext<'a> {
    pub groups: &'a GroupMap,
    pub graph: &'a GeneGraph,
    pub edge_weight: EdgeWeight,
    pub settings: AdmmSettings,
}

impl<'a> FitContext<'a> {
    pub fn new(groups: &'a GroupMap, graph: &'a GeneGraph, settings: AdmmSettings) -> Self {
        FitContext {
            groups,
            graph,
            edge_weight: EdgeWeight::default(),
            settings,
        }
    }

    /// Fits one grid point on a centered dataset.
    pub fn fit(&self, dataset: &Dataset, point: &GridPoint) -> Result<FitResult> {
        match *point {
            GridPoint::Sglgg {
                lambda1,
                lambda2,
                lambda3,
            } => {
                let mut penalty = Penalty::new(lambda1, lambda2, lambda3, self.groups);
                penalty.edge_weight = self.edge_weight.clone();
                fit(dataset, self.groups, self.graph, &penalty, &self.settings)
            }
            GridPoint::Baseline(method) => BaselineSpec {
                method,
                settings: self.settings.clone(),
            }
            .fit(dataset, self.groups),
        }
    }
}

fn cell_rng(seed: u64, cell: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(cell);
    rng
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation; zero for fewer than two values.
fn std_dev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvOptions {
    pub folds: usize,
    pub replications: usize,
    pub seed: u64,
}

impl Default for CvOptions {
    fn default() -> Self {
        CvOptions {
            folds: 5,
            replications: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: usize,
    pub replications: usize,
    pub seed: u64,
    pub grid: Grid,
    /// `mse[point][replication]`: test MSE averaged over the folds of one replication.
    pub mse: Vec<Vec<f64>>,
    pub mean_mse: Vec<f64>,
    pub std_mse: Vec<f64>,
    /// The same statistics for the model `beta = 0` (predicting the training mean).
    pub null_mse: Vec<f64>,
    pub null_mean_mse: f64,
    pub null_std_mse: f64,
    /// Grid index with the lowest mean MSE; ties go to the lower index.
    pub best: usize,
    /// Number of fits that hit `max_iter` without converging.
    pub unconverged: usize,
}

impl CvReport {
    pub fn best_point(&self) -> &GridPoint {
        &self.grid.points()[self.best]
    }

    /// One row per grid point plus a final `null` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("point,method,lambda_a,lambda_b,lambda_c,mean_mse,std_mse,best\n");
        for (i, p) in self.grid.points().iter().enumerate() {
            let l = p.lambdas();
            let get = |j: usize| l.get(j).map(|v| v.to_string()).unwrap_or_default();
            writeln!(
                out,
                "{i},{},{},{},{},{},{},{}",
                p.method().name(),
                get(0),
                get(1),
                get(2),
                self.mean_mse[i],
                self.std_mse[i],
                u8::from(i == self.best)
            )
            .unwrap();
        }
        writeln!(
            out,
            "null,null,,,,{},{},0",
            self.null_mean_mse, self.null_std_mse
        )
        .unwrap();
        out
    }
}

/// Assigns samples to folds for one replication: a seeded shuffle dealt round-robin.
pub fn fold_assignment(n: usize, folds: usize, seed: u64, replication: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut cell_rng(seed, replication as u64));
    let mut fold = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        fold[i] = pos % folds;
    }
    fold
}

struct Split {
    train: Dataset,
    test_a: Array2<f64>,
    test_y: Array1<f64>,
}

/// Repeated k-fold cross-validation of every grid point.
///
/// `dataset` is the uncentered data (an already centered one is fine). Each
/// training fold is centered on its own and the test fold is predicted with
/// the training statistics.
pub fn cross_validate(
    dataset: &Dataset,
    ctx: &FitContext<'_>,
    grid: &Grid,
    options: &CvOptions,
) -> Result<CvReport> {
    let n = dataset.n_samples();
    let CvOptions {
        folds,
        replications,
        seed,
    } = *options;
    if folds < 2 {
        return Err(Error::validation("cross-validation needs at least 2 folds"));
    }
    if replications == 0 {
        return Err(Error::validation("cross-validation needs at least 1 replication"));
    }
    if n < folds {
        return Err(Error::validation(format!(
            "cannot split {n} samples into {folds} folds"
        )));
    }
    let raw = dataset.select_rows(&(0..n).collect::<Vec<_>>());

    let splits: Vec<Split> = (0..replications)
        .flat_map(|rep| {
            let assign = fold_assignment(n, folds, seed, rep);
            (0..folds).map(move |f| (assign.clone(), f))
        })
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(assign, f)| {
            let train_rows: Vec<usize> = (0..n).filter(|&i| assign[i] != f).collect();
            let test_rows: Vec<usize> = (0..n).filter(|&i| assign[i] == f).collect();
            let test = raw.select_rows(&test_rows);
            Ok(Split {
                train: center_dataset(&raw.select_rows(&train_rows))?,
                test_a: test.a,
                test_y: test.y,
            })
        })
        .collect::<Result<_>>()?;

    let n_points = grid.len();
    let cells: Vec<(usize, usize)> = (0..splits.len())
        .flat_map(|s| (0..n_points).map(move |g| (s, g)))
        .collect();
    let results: Vec<(f64, bool)> = cells
        .into_par_iter()
        .map(|(s, g)| {
            let split = &splits[s];
            let fit = ctx.fit(&split.train, &grid.points()[g])?;
            let yhat = predict(&fit, &split.test_a, split.train.centering().unwrap())?;
            let r = &split.test_y - &yhat;
            Ok((r.dot(&r) / r.len() as f64, fit.converged))
        })
        .collect::<Result<_>>()?;

    let mut mse = vec![vec![0.0; replications]; n_points];
    let unconverged = results.iter().filter(|r| !r.1).count();
    for (s, chunk) in results.chunks(n_points).enumerate() {
        for (g, (m, _)) in chunk.iter().enumerate() {
            mse[g][s / folds] += m / folds as f64;
        }
    }
    let mut null_mse = vec![0.0; replications];
    for (s, split) in splits.iter().enumerate() {
        let y_mean = split.train.centering().unwrap().y_mean;
        let m = split.test_y.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>()
            / split.test_y.len() as f64;
        null_mse[s / folds] += m / folds as f64;
    }

    let mean_mse: Vec<f64> = mse.iter().map(|v| mean(v)).collect();
    let std_mse = mse.iter().map(|v| std_dev(v)).collect();
    let best = mean_mse
        .iter()
        .enumerate()
        .fold(0, |b, (i, &m)| if m < mean_mse[b] { i } else { b });
    Ok(CvReport {
        folds,
        replications,
        seed,
        grid: grid.clone(),
        mse,
        mean_mse,
        std_mse,
        null_mean_mse: mean(&null_mse),
        null_std_mse: std_dev(&null_mse),
        null_mse,
        best,
        unconverged,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityOptions {
    pub n_sims: usize,
    pub subsample_fraction: f64,
    pub seed: u64,
    /// Keep each subsample's selected set in the report.
    pub archive: bool,
}

impl Default for StabilityOptions {
    fn default() -> Self {
        StabilityOptions {
            n_sims: 100,
            subsample_fraction: 0.5,
            seed: 0,
            archive: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    /// Fraction of (subsample, grid point) runs that selected each feature.
    pub frequency: Vec<f64>,
    /// Fraction of subsamples in which some grid point selected each feature.
    pub union_frequency: Vec<f64>,
    pub n_sims: usize,
    pub subsample_size: usize,
    pub seed: u64,
    pub grid: Grid,
    /// All features ranked by [`rank_top_k`] order.
    pub ranking: Vec<usize>,
    /// Per subsample, the union of features selected over the grid.
    pub per_sim_selected: Option<Vec<Vec<usize>>>,
    pub unconverged: usize,
}

impl StabilityReport {
    /// One row per feature in input order: `feature_id,frequency,union_frequency,rank` (rank 1 is best).
    pub fn to_csv(&self, feature_ids: &[String]) -> String {
        let mut rank = vec![0; self.frequency.len()];
        for (r, &j) in self.ranking.iter().enumerate() {
            rank[j] = r + 1;
        }
        let mut out = String::from("feature_id,frequency,union_frequency,rank\n");
        for (j, id) in feature_ids.iter().enumerate() {
            writeln!(
                out,
                "{id},{},{},{}",
                self.frequency[j], self.union_frequency[j], rank[j]
            )
            .unwrap();
        }
        out
    }
}

/// Features ordered by descending frequency, ties by ascending index.
fn ranking(frequency: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..frequency.len()).collect();
    idx.sort_by(|&a, &b| frequency[b].total_cmp(&frequency[a]).then(a.cmp(&b)));
    idx
}

/// The `k` most frequently selected features.
pub fn rank_top_k(report: &StabilityReport, k: usize) -> Result<Vec<usize>> {
    let p = report.frequency.len();
    if k > p {
        return Err(Error::validation(format!("k = {k} exceeds the {p} features")));
    }
    Ok(ranking(&report.frequency)[..k].to_vec())
}

/// Stability selection: fit every grid point on `n_sims` random subsamples of
/// `floor(n * subsample_fraction)` samples drawn without replacement.
pub fn stability_select(
    dataset: &Dataset,
    ctx: &FitContext<'_>,
    grid: &Grid,
    options: &StabilityOptions,
) -> Result<StabilityReport> {
    let n = dataset.n_samples();
    let p = dataset.n_features();
    let StabilityOptions {
        n_sims,
        subsample_fraction,
        seed,
        archive,
    } = *options;
    if n_sims == 0 {
        return Err(Error::validation("n_sims must be at least 1"));
    }
    if !(subsample_fraction > 0.0 && subsample_fraction <= 1.0) {
        return Err(Error::validation(format!(
            "subsample fraction must lie in (0, 1], got {subsample_fraction}"
        )));
    }
    let m = (n as f64 * subsample_fraction).floor() as usize;
    if m < 2 {
        return Err(Error::validation(format!(
            "subsample of {m} samples from {n} is too small"
        )));
    }
    let raw = dataset.select_rows(&(0..n).collect::<Vec<_>>());

    let subsamples: Vec<Dataset> = (0..n_sims)
        .into_par_iter()
        .map(|sim| {
            let mut rows = sample(&mut cell_rng(seed, sim as u64), n, m).into_vec();
            rows.sort_unstable();
            center_dataset(&raw.select_rows(&rows))
        })
        .collect::<Result<_>>()?;

    let n_points = grid.len();
    let cells: Vec<(usize, usize)> = (0..n_sims)
        .flat_map(|s| (0..n_points).map(move |g| (s, g)))
        .collect();
    let results: Vec<(Vec<usize>, bool)> = cells
        .into_par_iter()
        .map(|(s, g)| {
            let fit = ctx.fit(&subsamples[s], &grid.points()[g])?;
            Ok((fit.selected, fit.converged))
        })
        .collect::<Result<_>>()?;

    let mut counts = vec![0usize; p];
    let mut union_counts = vec![0usize; p];
    let mut archive_sets = Vec::new();
    for chunk in results.chunks(n_points) {
        let mut hit = vec![false; p];
        for (selected, _) in chunk {
            for &j in selected {
                counts[j] += 1;
                hit[j] = true;
            }
        }
        for j in 0..p {
            union_counts[j] += usize::from(hit[j]);
        }
        if archive {
            archive_sets.push((0..p).filter(|&j| hit[j]).collect());
        }
    }
    let runs = (n_sims * n_points) as f64;
    let frequency: Vec<f64> = counts.iter().map(|&c| c as f64 / runs).collect();
    Ok(StabilityReport {
        ranking: ranking(&frequency),
        frequency,
        union_frequency: union_counts
            .iter()
            .map(|&c| c as f64 / n_sims as f64)
            .collect(),
        n_sims,
        subsample_size: m,
        seed,
        grid: grid.clone(),
        per_sim_selected: archive.then_some(archive_sets),
        unconverged: results.iter().filter(|r| !r.1).count(),
    })
}
