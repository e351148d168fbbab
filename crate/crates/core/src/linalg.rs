//! Matrix-free conjugate gradient and the soft-thresholding operator.

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// A symmetric positive definite operator, applied without materializing it.
pub trait LinearOperator {
    fn dim(&self) -> usize;

    /// Writes `op(x)` into `out`.
    fn apply(&self, x: &Array1<f64>, out: &mut Array1<f64>);
}

/// Wraps a closure as a [`LinearOperator`].
pub struct FnOperator<F> {
    dim: usize,
    f: F,
}

impl<F> FnOperator<F>
where
    F: Fn(&Array1<f64>, &mut Array1<f64>),
{
    pub fn new(dim: usize, f: F) -> Self {
        FnOperator { dim, f }
    }
}

impl<F> LinearOperator for FnOperator<F>
where
    F: Fn(&Array1<f64>, &mut Array1<f64>),
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, x: &Array1<f64>, out: &mut Array1<f64>) {
        (self.f)(x, out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CgSettings {
    /// Stop once `||op(x) - b|| <= rel_tol * ||b||`.
    pub rel_tol: f64,
    /// Defaults to `10 * dim` when `None`.
    pub max_iter: Option<usize>,
    pub warm_start: Option<Array1<f64>>,
}

impl Default for CgSettings {
    fn default() -> Self {
        CgSettings {
            rel_tol: 1e-8,
            max_iter: None,
            warm_start: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CgOutcome {
    pub x: Array1<f64>,
    pub iterations: usize,
    /// Final residual norm relative to `||b||`.
    pub residual: f64,
    pub converged: bool,
}

const RESIDUAL_REFRESH: usize = 50;

/// Solves `op(x) = b` by conjugate gradients.
///
/// When the iteration budget runs out the iterate with the smallest residual
/// is returned with `converged = false`.
pub fn cg_solve<L: LinearOperator + ?Sized>(
    op: &L,
    b: &Array1<f64>,
    settings: &CgSettings,
) -> Result<CgOutcome> {
    let n = op.dim();
    check_dim("conjugate gradient right-hand side", n, b.len())?;
    if !(settings.rel_tol > 0.0) {
        return Err(Error::validation("CG rel_tol must be positive"));
    }
    let max_iter = settings.max_iter.unwrap_or(10 * n.max(1));
    if max_iter == 0 {
        return Err(Error::validation("CG max_iter must be at least 1"));
    }
    if let Some(i) = b.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "CG right-hand side",
            row: i,
            col: 0,
        });
    }

    let b_norm = b.dot(b).sqrt();
    if b_norm == 0.0 {
        return Ok(CgOutcome {
            x: Array1::zeros(n),
            iterations: 0,
            residual: 0.0,
            converged: true,
        });
    }
    let target = settings.rel_tol * b_norm;

    let mut x = match &settings.warm_start {
        Some(x0) => {
            check_dim("CG warm start", n, x0.len())?;
            x0.clone()
        }
        None => Array1::zeros(n),
    };
    let mut ap = Array1::zeros(n);
    let mut r = b.clone();
    if settings.warm_start.is_some() {
        op.apply(&x, &mut ap);
        r -= &ap;
    }
    let mut rr = r.dot(&r);
    if !rr.is_finite() {
        return Err(Error::Cg {
            iterations: 0,
            residual: f64::NAN,
        });
    }
    if rr.sqrt() <= target {
        return Ok(CgOutcome {
            x,
            iterations: 0,
            residual: rr.sqrt() / b_norm,
            converged: true,
        });
    }

    let mut best = (rr, x.clone());
    let mut d = r.clone();
    for it in 1..=max_iter {
        op.apply(&d, &mut ap);
        let curvature = d.dot(&ap);
        if !(curvature.is_finite() && curvature > 0.0) {
            return Err(Error::Cg {
                iterations: it,
                residual: rr.sqrt() / b_norm,
            });
        }
        let alpha = rr / curvature;
        x.scaled_add(alpha, &d);
        if it % RESIDUAL_REFRESH == 0 {
            op.apply(&x, &mut ap);
            r.assign(b);
            r -= &ap;
        } else {
            r.scaled_add(-alpha, &ap);
        }
        let rr_next = r.dot(&r);
        if !rr_next.is_finite() {
            return Err(Error::Cg {
                iterations: it,
                residual: f64::NAN,
            });
        }
        if rr_next.sqrt() <= target {
            return Ok(CgOutcome {
                x,
                iterations: it,
                residual: rr_next.sqrt() / b_norm,
                converged: true,
            });
        }
        if rr_next < best.0 {
            best.0 = rr_next;
            best.1.assign(&x);
        }
        let beta = rr_next / rr;
        rr = rr_next;
        d *= beta;
        d += &r;
    }
    Ok(CgOutcome {
        x: best.1,
        iterations: max_iter,
        residual: best.0.sqrt() / b_norm,
        converged: false,
    })
}

/// `S_t(x) = sign(x) max(|x| - t, 0)`
#[inline]
pub fn soft_threshold_scalar(x: f64, t: f64) -> f64 {
    x.signum() * (x.abs() - t).max(0.0)
}

/// Threshold for [`soft_threshold`]: one value for every coordinate or one per coordinate.
#[derive(Debug, Clone, Copy)]
pub enum Threshold<'a> {
    Uniform(f64),
    PerCoordinate(&'a [f64]),
}

/// Elementwise soft-thresholding.
pub fn soft_threshold(v: &Array1<f64>, threshold: Threshold<'_>) -> Result<Array1<f64>> {
    match threshold {
        Threshold::Uniform(t) => {
            if !(t >= 0.0) {
                return Err(Error::validation(format!("threshold must be >= 0, got {t}")));
            }
            Ok(v.mapv(|x| soft_threshold_scalar(x, t)))
        }
        Threshold::PerCoordinate(ts) => {
            check_dim("per-coordinate thresholds", v.len(), ts.len())?;
            if let Some(t) = ts.iter().find(|t| !(**t >= 0.0)) {
                return Err(Error::validation(format!("threshold must be >= 0, got {t}")));
            }
            Ok(v.iter()
                .zip(ts)
                .map(|(&x, &t)| soft_threshold_scalar(x, t))
                .collect())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    fn dense(m: Array2<f64>) -> impl LinearOperator {
        FnOperator::new(m.nrows(), move |x: &Array1<f64>, out: &mut Array1<f64>| {
            out.assign(&m.dot(x))
        })
    }

    #[test]
    fn identity_system() {
        let op = FnOperator::new(2, |x: &Array1<f64>, out: &mut Array1<f64>| out.assign(x));
        let out = cg_solve(&op, &array![3.0, -1.0], &CgSettings::default()).unwrap();
        assert!(out.converged);
        assert!((&out.x - &array![3.0, -1.0]).iter().all(|d| d.abs() < 1e-14));
    }

    #[test]
    fn diagonal_system() {
        let op = dense(array![[2.0, 0.0], [0.0, 4.0]]);
        let out = cg_solve(&op, &array![2.0, 4.0], &CgSettings::default()).unwrap();
        assert!((&out.x - &array![1.0, 1.0]).iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn two_by_two_system() {
        let op = dense(array![[4.0, 1.0], [1.0, 3.0]]);
        let out = cg_solve(&op, &array![1.0, 2.0], &CgSettings::default()).unwrap();
        assert!((out.x[0] - 1.0 / 11.0).abs() < 1e-12);
        assert!((out.x[1] - 7.0 / 11.0).abs() < 1e-12);
        assert!(out.iterations <= 2);
    }

    #[test]
    fn zero_rhs_returns_zero() {
        let op = dense(array![[4.0, 1.0], [1.0, 3.0]]);
        let settings = CgSettings {
            warm_start: Some(array![5.0, 5.0]),
            ..CgSettings::default()
        };
        let out = cg_solve(&op, &array![0.0, 0.0], &settings).unwrap();
        assert_eq!(out.x, array![0.0, 0.0]);
        assert_eq!(out.iterations, 0);
    }

    #[test]
    fn warm_start_at_solution_takes_no_iterations() {
        let op = dense(array![[4.0, 1.0], [1.0, 3.0]]);
        let settings = CgSettings {
            warm_start: Some(array![1.0 / 11.0, 7.0 / 11.0]),
            ..CgSettings::default()
        };
        let out = cg_solve(&op, &array![1.0, 2.0], &settings).unwrap();
        assert_eq!(out.iterations, 0);
    }

    #[test]
    fn indefinite_operator_is_an_error() {
        let op = dense(array![[1.0, 0.0], [0.0, -1.0]]);
        assert!(matches!(
            cg_solve(&op, &array![0.0, 1.0], &CgSettings::default()),
            Err(Error::Cg { .. })
        ));
    }

    #[test]
    fn budget_exhaustion_is_flagged() {
        let op = dense(Array2::from_diag(&array![1.0, 10.0, 100.0, 1000.0]));
        let settings = CgSettings {
            rel_tol: 1e-14,
            max_iter: Some(1),
            warm_start: None,
        };
        let out = cg_solve(&op, &array![1.0, 1.0, 1.0, 1.0], &settings).unwrap();
        assert!(!out.converged);
        assert_eq!(out.iterations, 1);
    }

    #[test]
    fn bad_inputs() {
        let op = dense(array![[1.0]]);
        assert!(cg_solve(&op, &array![1.0, 2.0], &CgSettings::default()).is_err());
        assert!(cg_solve(&op, &array![f64::NAN], &CgSettings::default()).is_err());
        let bad = CgSettings {
            rel_tol: 0.0,
            ..CgSettings::default()
        };
        assert!(cg_solve(&op, &array![1.0], &bad).is_err());
    }

    #[test]
    fn soft_threshold_examples() {
        assert!((soft_threshold_scalar(1.2, 0.5) - 0.7).abs() < 1e-15);
        assert_eq!(soft_threshold_scalar(-0.3, 0.5), 0.0);
        assert_eq!(soft_threshold_scalar(-2.0, 1.0), -1.0);
        let v = array![1.2, -0.3, -2.0];
        let out = soft_threshold(&v, Threshold::PerCoordinate(&[0.5, 0.5, 1.0])).unwrap();
        assert_eq!(out[1], 0.0);
        assert_eq!(out[2], -1.0);
        assert_eq!(soft_threshold(&v, Threshold::Uniform(0.0)).unwrap(), v);
    }

    #[test]
    fn negative_threshold_rejected() {
        let v = array![1.0, 2.0];
        assert!(soft_threshold(&v, Threshold::Uniform(-0.1)).is_err());
        assert!(soft_threshold(&v, Threshold::PerCoordinate(&[0.1, -0.1])).is_err());
        assert!(soft_threshold(&v, Threshold::PerCoordinate(&[0.1])).is_err());
    }
}
