//! Comparator solvers: the lasso, the fused lasso over feature order and the
//! sparse group lasso.
//!
//! All three minimize `1/2 ||y - A beta||^2 + h(D beta)` by two-block ADMM with
//! the same CG and soft-thresholding kernels as the main solver. `D` is the
//! identity, stacked with the first-difference chain for the fused lasso.

use log::warn;
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{cg_solve, soft_threshold_scalar, FnOperator};
use crate::model::{build_incidence, Dataset, EdgeWeight, GeneGraph, GroupMap, IncidenceMatrix};
use crate::solver::{selected_indices, AdmmSettings, FitResult};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Baseline {
    Lasso { lambda: f64 },
    FusedLasso { lambda_sparse: f64, lambda_fuse: f64 },
    SparseGroupLasso { lambda_group: f64, lambda_feature: f64 },
}

impl Baseline {
    pub fn lambdas(&self) -> Vec<f64> {
        match *self {
            Baseline::Lasso { lambda } => vec![lambda],
            Baseline::FusedLasso {
                lambda_sparse,
                lambda_fuse,
            } => vec![lambda_sparse, lambda_fuse],
            Baseline::SparseGroupLasso {
                lambda_group,
                lambda_feature,
            } => vec![lambda_group, lambda_feature],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for l in self.lambdas() {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(Error::validation(format!(
                    "baseline penalties must be finite and >= 0, got {l}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineSpec {
    pub method: Baseline,
    pub settings: AdmmSettings,
}

impl BaselineSpec {
    /// `groups` is only read by the sparse group lasso.
    pub fn fit(&self, dataset: &Dataset, groups: &GroupMap) -> Result<FitResult> {
        match self.method {
            Baseline::Lasso { lambda } => lasso_fit(dataset, lambda, &self.settings),
            Baseline::FusedLasso {
                lambda_sparse,
                lambda_fuse,
            } => fused_lasso_fit(dataset, lambda_sparse, lambda_fuse, &self.settings),
            Baseline::SparseGroupLasso {
                lambda_group,
                lambda_feature,
            } => sparse_group_lasso_fit(dataset, groups, lambda_group, lambda_feature, &self.settings),
        }
    }
}

/// `1/2 ||y - A beta||^2 + lambda ||beta||_1`
pub fn lasso_fit(dataset: &Dataset, lambda: f64, settings: &AdmmSettings) -> Result<FitResult> {
    Baseline::Lasso { lambda }.validate()?;
    let prox = |v: &Array1<f64>, rho: f64| v.mapv(|x| soft_threshold_scalar(x, lambda / rho));
    let penalty = |b: &Array1<f64>| lambda * l1(b);
    run(dataset, None, prox, penalty, settings)
}

/// `1/2 ||y - A beta||^2 + lambda_sparse ||beta||_1 + lambda_fuse sum_j |beta_{j+1} - beta_j|`
pub fn fused_lasso_fit(
    dataset: &Dataset,
    lambda_sparse: f64,
    lambda_fuse: f64,
    settings: &AdmmSettings,
) -> Result<FitResult> {
    Baseline::FusedLasso {
        lambda_sparse,
        lambda_fuse,
    }
    .validate()?;
    // A zero fusion weight drops the difference block, leaving the lasso iteration.
    let chain = if lambda_fuse > 0.0 {
        Some(Fusion {
            d: chain_differences(dataset.n_features())?,
            lambda: lambda_fuse,
        })
    } else {
        None
    };
    let prox = |v: &Array1<f64>, rho: f64| v.mapv(|x| soft_threshold_scalar(x, lambda_sparse / rho));
    let d = chain.as_ref().map(|c| c.d.clone());
    let penalty = move |b: &Array1<f64>| {
        lambda_sparse * l1(b) + d.as_ref().map_or(0.0, |d| lambda_fuse * l1(&d.apply(b)))
    };
    run(dataset, chain, prox, penalty, settings)
}

/// `1/2 ||y - A beta||^2 + lambda_group sum_k sqrt(p_k) ||beta_k||_2 + lambda_feature ||beta||_1`
pub fn sparse_group_lasso_fit(
    dataset: &Dataset,
    groups: &GroupMap,
    lambda_group: f64,
    lambda_feature: f64,
    settings: &AdmmSettings,
) -> Result<FitResult> {
    Baseline::SparseGroupLasso {
        lambda_group,
        lambda_feature,
    }
    .validate()?;
    check_dim("design columns vs group map", groups.p(), dataset.n_features())?;
    let weights = groups.default_weights();
    let prox = |v: &Array1<f64>, rho: f64| {
        let mut z = v.mapv(|x| soft_threshold_scalar(x, lambda_feature / rho));
        if lambda_group > 0.0 {
            for (k, &w) in weights.iter().enumerate() {
                group_shrink(&mut z, groups.members(k), lambda_group * w / rho);
            }
        }
        z
    };
    let penalty = |b: &Array1<f64>| {
        let group_norms: f64 = weights
            .iter()
            .enumerate()
            .map(|(k, &w)| w * groups.members(k).iter().map(|&j| b[j] * b[j]).sum::<f64>().sqrt())
            .sum();
        lambda_group * group_norms + lambda_feature * l1(b)
    };
    run(dataset, None, prox, penalty, settings)
}

/// Scales `z[members]` by `max(0, 1 - t / ||z[members]||)`.
pub fn group_shrink(z: &mut Array1<f64>, members: &[usize], t: f64) {
    let norm = members.iter().map(|&j| z[j] * z[j]).sum::<f64>().sqrt();
    let scale = if norm > t { 1.0 - t / norm } else { 0.0 };
    for &j in members {
        z[j] *= scale;
    }
}

/// First differences `beta_j - beta_{j+1}` over feature order.
pub fn chain_differences(p: usize) -> Result<IncidenceMatrix> {
    let graph = GeneGraph::new(p, (1..p).map(|j| (j - 1, j, 1.0)))?;
    build_incidence(&graph, &EdgeWeight::Unit)
}

fn l1(v: &Array1<f64>) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

struct Fusion {
    d: IncidenceMatrix,
    lambda: f64,
}

fn stacked_norm(parts: &[&Array1<f64>]) -> f64 {
    parts.iter().map(|v| v.dot(*v)).sum::<f64>().sqrt()
}

/// Splits `beta = z` (and `D beta = w` when fusing). `prox(v, rho)` is the
/// proximal map of the penalty on `z` with step `1 / rho`.
fn run(
    dataset: &Dataset,
    fusion: Option<Fusion>,
    prox: impl Fn(&Array1<f64>, f64) -> Array1<f64>,
    penalty: impl Fn(&Array1<f64>) -> f64,
    settings: &AdmmSettings,
) -> Result<FitResult> {
    settings.validate()?;
    let a = &dataset.a;
    let at: Array2<f64> = a.t().as_standard_layout().into_owned();
    let aty = at.dot(&dataset.y);
    let p = a.ncols();
    let rho = settings.rho.resolve(a);
    let d = fusion.as_ref().map(|f| &f.d);
    let m = d.map_or(0, |d| d.n_rows());

    let op = FnOperator::new(p, |x: &Array1<f64>, out: &mut Array1<f64>| {
        out.assign(&at.dot(&a.dot(x)));
        out.scaled_add(rho, x);
        if let Some(d) = d {
            out.scaled_add(rho, &d.apply_transpose(&d.apply(x)));
        }
    });

    let mut beta = Array1::zeros(p);
    let mut z = Array1::zeros(p);
    let mut w = Array1::zeros(m);
    let mut u = Array1::zeros(p);
    let mut v = Array1::zeros(m);

    let mut objective_trace = Vec::new();
    let mut primal_residuals = Vec::new();
    let mut dual_residuals = Vec::new();
    let mut converged = false;
    for iteration in 1..=settings.max_iter {
        let mut rhs = &aty + &(rho * &z) - &u;
        if let Some(d) = d {
            rhs += &d.apply_transpose(&(rho * &w - &v));
        }
        let sol = cg_solve(&op, &rhs, &settings.cg(&beta))?;
        if !sol.converged {
            return Err(Error::Cg {
                iterations: sol.iterations,
                residual: sol.residual,
            });
        }
        beta = sol.x;

        let z_prev = std::mem::replace(&mut z, prox(&(&beta + &(&u / rho)), rho));
        u.scaled_add(rho, &(&beta - &z));
        let (db, dw) = match (d, &fusion) {
            (Some(d), Some(f)) => {
                let db = d.apply(&beta);
                let w_prev = std::mem::replace(
                    &mut w,
                    (&db + &(&v / rho)).mapv(|x| soft_threshold_scalar(x, f.lambda / rho)),
                );
                v.scaled_add(rho, &(&db - &w));
                let dw = d.apply_transpose(&(&w - &w_prev));
                (db, dw)
            }
            _ => (Array1::zeros(0), Array1::zeros(p)),
        };

        let primal = stacked_norm(&[&(&beta - &z), &(&db - &w)]);
        let dual = rho * stacked_norm(&[&(&(&z - &z_prev) + &dw)]);
        if !primal.is_finite() || !dual.is_finite() {
            return Err(Error::Diverged {
                iteration,
                primal,
                dual,
            });
        }
        let dual_scale = match d {
            Some(d) => stacked_norm(&[&(&u + &d.apply_transpose(&v))]),
            None => stacked_norm(&[&u]),
        };
        let primal_tol = settings.abs_tol * ((p + m) as f64).sqrt()
            + settings.rel_tol * stacked_norm(&[&beta, &db]).max(stacked_norm(&[&z, &w]));
        let dual_tol = settings.abs_tol * (p as f64).sqrt() + settings.rel_tol * dual_scale;

        let resid = &dataset.y - &a.dot(&z);
        objective_trace.push(0.5 * resid.dot(&resid) + penalty(&z));
        primal_residuals.push(primal);
        dual_residuals.push(dual);
        if primal <= primal_tol && dual <= dual_tol {
            converged = true;
            break;
        }
    }
    if !converged {
        warn!("baseline ADMM stopped after {} iterations without converging", settings.max_iter);
    }
    Ok(FitResult {
        g: Array1::zeros(0),
        selected: selected_indices(&z, settings.select_eps),
        s: beta,
        beta: z,
        iterations: objective_trace.len(),
        objective_trace,
        primal_residuals,
        dual_residuals,
        converged,
        state: None,
    })
}
