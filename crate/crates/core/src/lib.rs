//! Sparse group lasso with a group-level graph penalty.
//!
//! The model gates each feature coefficient `s_j` by a group coefficient `g_k`,
//! so the effective regression weights are `beta = (M^T g) o s`. Groups are
//! penalized with a weighted l1 norm, linked groups are fused along a signed
//! weighted graph, and features are penalized with an l1 norm. Fits are
//! computed with ADMM and matrix-free conjugate gradients.

pub mod baselines;
pub mod datagen;
pub mod error;
pub mod linalg;
pub mod model;
pub mod selection;
pub mod solver;

pub use baselines::{
    fused_lasso_fit, lasso_fit, sparse_group_lasso_fit, Baseline, BaselineSpec,
};
pub use error::{Error, Result};
pub use model::{
    build_incidence, center_dataset, effective_coefficients, objective, Centering, Dataset, Edge,
    EdgeWeight, GeneGraph, GroupMap, IncidenceMatrix, Penalty,
};
pub use solver::{fit, predict, AdmmSettings, FitResult, ModelState, Rho};
