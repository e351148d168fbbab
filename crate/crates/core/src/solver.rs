//! ADMM for the sparse group lasso with a group-level graph penalty.
//!
//! The problem is split with slacks `p = g`, `q = T g`, `r = s`. Each
//! iteration runs, in order, the `g` solve, the `s` solve (using the new `g`),
//! the three soft-thresholding slack updates and the dual ascent step. The two
//! quadratic subproblems are solved with matrix-free conjugate gradients,
//! warm-started from the previous iterate.

use log::warn;
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{cg_solve, soft_threshold_scalar, CgSettings, FnOperator};
use crate::model::{
    build_incidence, effective_coefficients, penalized_objective, Centering, Dataset, GeneGraph,
    GroupMap, IncidenceMatrix, Penalty,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GInit {
    Ones,
    /// Unit magnitudes with signs chosen so that `g_i = sign(r) g_j` along a
    /// spanning forest of the graph; equals `Ones` when every edge is positive.
    GraphSigns,
    Custom(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SInit {
    Zeros,
    /// Solution of `(A^T A + rho I) s = A^T y`.
    Ridge,
    Custom(Vec<f64>),
}

/// ADMM penalty parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rho {
    /// `||A||_2^2`, the squared spectral norm of the design.
    Auto,
    Fixed(f64),
}

impl Default for Rho {
    fn default() -> Self {
        Rho::Auto
    }
}

impl Rho {
    pub fn resolve(&self, a: &Array2<f64>) -> f64 {
        match *self {
            Rho::Fixed(v) => v,
            Rho::Auto => {
                let norm2 = spectral_norm_sq(a);
                if norm2 > 0.0 {
                    norm2
                } else {
                    1.0
                }
            }
        }
    }
}

/// Largest eigenvalue of `A^T A` by power iteration.
pub fn spectral_norm_sq(a: &Array2<f64>) -> f64 {
    let p = a.ncols();
    if p == 0 || a.nrows() == 0 {
        return 0.0;
    }
    // A fixed, non-symmetric start keeps the estimate deterministic.
    let mut v: Array1<f64> = (0..p).map(|j| 1.0 + (j % 7) as f64 * 0.1).collect();
    let mut estimate = 0.0;
    for _ in 0..100 {
        let nv = v.dot(&v).sqrt();
        if nv == 0.0 {
            return 0.0;
        }
        v /= nv;
        let w = a.t().dot(&a.dot(&v));
        let next = v.dot(&w);
        v = w;
        if (next - estimate).abs() <= 1e-6 * next {
            return next;
        }
        estimate = next;
    }
    estimate
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmmSettings {
    pub rho: Rho,
    pub max_iter: usize,
    pub abs_tol: f64,
    pub rel_tol: f64,
    /// Doubles or halves `rho` when the primal and dual residuals differ by more than 10x.
    pub adaptive_rho: bool,
    pub g_init: GInit,
    pub s_init: SInit,
    /// A feature is selected when `|beta_j| > select_eps`.
    pub select_eps: f64,
    /// Relative tolerance of the inner CG solves.
    pub cg_tol: f64,
}

impl Default for AdmmSettings {
    fn default() -> Self {
        AdmmSettings {
            rho: Rho::Auto,
            max_iter: 2000,
            abs_tol: 1e-6,
            rel_tol: 1e-4,
            adaptive_rho: false,
            g_init: GInit::GraphSigns,
            s_init: SInit::Zeros,
            select_eps: 1e-6,
            cg_tol: 1e-8,
        }
    }
}

impl AdmmSettings {
    pub fn validate(&self) -> Result<()> {
        if let Rho::Fixed(rho) = self.rho {
            if !(rho > 0.0 && rho.is_finite()) {
                return Err(Error::validation(format!("rho must be positive, got {rho}")));
            }
        }
        for (name, v) in [
            ("abs_tol", self.abs_tol),
            ("rel_tol", self.rel_tol),
            ("select_eps", self.select_eps),
            ("cg_tol", self.cg_tol),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::validation(format!("{name} must be positive, got {v}")));
            }
        }
        if self.max_iter == 0 {
            return Err(Error::validation("max_iter must be at least 1"));
        }
        Ok(())
    }

    pub(crate) fn cg(&self, warm_start: &Array1<f64>) -> CgSettings {
        CgSettings {
            rel_tol: self.cg_tol,
            max_iter: None,
            warm_start: Some(warm_start.clone()),
        }
    }
}

/// Primal, slack and dual variables of one fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub g: Array1<f64>,
    pub s: Array1<f64>,
    pub p_slack: Array1<f64>,
    pub q_slack: Array1<f64>,
    pub r_slack: Array1<f64>,
    pub mu: Array1<f64>,
    pub nu: Array1<f64>,
    pub xi: Array1<f64>,
    pub rho: f64,
}

impl ModelState {
    /// Slacks copied from `(g, T g, s)` and zero duals.
    pub fn initial(g: Array1<f64>, s: Array1<f64>, t: &IncidenceMatrix, rho: f64) -> Self {
        let q = t.apply(&g);
        ModelState {
            p_slack: g.clone(),
            r_slack: s.clone(),
            mu: Array1::zeros(g.len()),
            nu: Array1::zeros(q.len()),
            xi: Array1::zeros(s.len()),
            q_slack: q,
            g,
            s,
            rho,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub g: Array1<f64>,
    pub s: Array1<f64>,
    /// Effective coefficients, built from the thresholded slacks so that
    /// unselected features are exactly zero.
    pub beta: Array1<f64>,
    /// Objective at the thresholded slacks after each iteration.
    pub objective_trace: Vec<f64>,
    pub primal_residuals: Vec<f64>,
    pub dual_residuals: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub selected: Vec<usize>,
    /// Final ADMM state of an SGLGG fit; `None` for the baselines.
    pub state: Option<ModelState>,
}

impl FitResult {
    /// Fitted values `A beta` on the data the model was fit to.
    pub fn fitted(&self, dataset: &Dataset) -> Array1<f64> {
        dataset.a.dot(&self.beta)
    }
}

pub fn selected_indices(beta: &Array1<f64>, eps: f64) -> Vec<usize> {
    beta.iter()
        .enumerate()
        .filter(|(_, b)| b.abs() > eps)
        .map(|(j, _)| j)
        .collect()
}

/// Data shared by every iteration of one fit.
pub struct Problem<'a> {
    pub dataset: &'a Dataset,
    pub groups: &'a GroupMap,
    pub t: IncidenceMatrix,
    pub penalty: &'a Penalty,
    at: Array2<f64>,
    aty: Array1<f64>,
}

impl<'a> Problem<'a> {
    pub fn new(
        dataset: &'a Dataset,
        groups: &'a GroupMap,
        graph: &GeneGraph,
        penalty: &'a Penalty,
    ) -> Result<Self> {
        check_dim("design columns vs group map", groups.p(), dataset.n_features())?;
        check_dim("graph nodes vs group count", groups.k(), graph.k)?;
        penalty.validate(groups.k())?;
        let t = build_incidence(graph, &penalty.edge_weight)?;
        let at = dataset.a.t().as_standard_layout().into_owned();
        let aty = at.dot(&dataset.y);
        Ok(Problem {
            dataset,
            groups,
            t,
            penalty,
            at,
            aty,
        })
    }

    /// `A^T y`
    pub fn aty(&self) -> &Array1<f64> {
        &self.aty
    }

    /// `B = A Diag(s) M^T`, an n x K matrix.
    pub fn group_design(&self, s: &Array1<f64>) -> Array2<f64> {
        let a = &self.dataset.a;
        let assignment = self.groups.assignment();
        let mut b = Array2::zeros((a.nrows(), self.groups.k()));
        for (a_row, mut b_row) in a.rows().into_iter().zip(b.rows_mut()) {
            for ((&aij, &sj), &k) in a_row.iter().zip(s.iter()).zip(assignment) {
                b_row[k] += aij * sj;
            }
        }
        b
    }
}

/// Solves `F_g g = b_g` with `F_g = B^T B + rho (I + T^T T)`, `B = A Diag(s) M^T`.
pub fn update_g(
    state: &ModelState,
    problem: &Problem<'_>,
    settings: &AdmmSettings,
) -> Result<Array1<f64>> {
    let rho = state.rho;
    let t = &problem.t;
    let b = problem.group_design(&state.s);
    let rhs = b.t().dot(&problem.dataset.y) - &state.mu - t.apply_transpose(&state.nu)
        + rho * &state.p_slack
        + rho * t.apply_transpose(&state.q_slack);
    let op = FnOperator::new(problem.groups.k(), |x: &Array1<f64>, out: &mut Array1<f64>| {
        let bx = b.dot(x);
        out.assign(&b.t().dot(&bx));
        out.scaled_add(rho, x);
        if t.n_rows() > 0 {
            out.scaled_add(rho, &t.apply_transpose(&t.apply(x)));
        }
    });
    solve(&op, &rhs, settings, &state.g)
}

/// Solves `F_s s = b_s` with `F_s = C^T C + rho I`, `C = A Diag(M^T g)`.
pub fn update_s(
    state: &ModelState,
    problem: &Problem<'_>,
    settings: &AdmmSettings,
) -> Result<Array1<f64>> {
    let rho = state.rho;
    let (a, at) = (&problem.dataset.a, &problem.at);
    let gate = problem.groups.expand(&state.g);
    let rhs = &gate * problem.aty() - &state.xi + rho * &state.r_slack;
    let op = FnOperator::new(problem.groups.p(), |x: &Array1<f64>, out: &mut Array1<f64>| {
        let cx = a.dot(&(&gate * x));
        out.assign(&(&gate * &at.dot(&cx)));
        out.scaled_add(rho, x);
    });
    solve(&op, &rhs, settings, &state.s)
}

fn solve(
    op: &FnOperator<impl Fn(&Array1<f64>, &mut Array1<f64>)>,
    rhs: &Array1<f64>,
    settings: &AdmmSettings,
    warm: &Array1<f64>,
) -> Result<Array1<f64>> {
    let out = cg_solve(op, rhs, &settings.cg(warm))?;
    if !out.converged {
        return Err(Error::Cg {
            iterations: out.iterations,
            residual: out.residual,
        });
    }
    Ok(out.x)
}

/// `p = S_{lambda1 w / rho}(g + mu / rho)`, coordinatewise.
pub fn update_p(state: &ModelState, penalty: &Penalty) -> Array1<f64> {
    let rho = state.rho;
    state
        .g
        .iter()
        .zip(&state.mu)
        .zip(&penalty.group_weights)
        .map(|((&g, &mu), &w)| soft_threshold_scalar(g + mu / rho, penalty.lambda1 * w / rho))
        .collect()
}

/// `q = S_{lambda2 / rho}(T g + nu / rho)`.
pub fn update_q(state: &ModelState, t: &IncidenceMatrix, penalty: &Penalty) -> Array1<f64> {
    let rho = state.rho;
    let threshold = penalty.lambda2 / rho;
    t.apply(&state.g)
        .iter()
        .zip(&state.nu)
        .map(|(&tg, &nu)| soft_threshold_scalar(tg + nu / rho, threshold))
        .collect()
}

/// `r = S_{lambda3 / rho}(s + xi / rho)`.
pub fn update_r(state: &ModelState, penalty: &Penalty) -> Array1<f64> {
    let rho = state.rho;
    let threshold = penalty.lambda3 / rho;
    state
        .s
        .iter()
        .zip(&state.xi)
        .map(|(&s, &xi)| soft_threshold_scalar(s + xi / rho, threshold))
        .collect()
}

/// Dual ascent: `mu += rho (g - p)`, `nu += rho (T g - q)`, `xi += rho (s - r)`.
pub fn update_duals(
    state: &ModelState,
    t: &IncidenceMatrix,
) -> (Array1<f64>, Array1<f64>, Array1<f64>) {
    let rho = state.rho;
    let mu = &state.mu + &(rho * (&state.g - &state.p_slack));
    let nu = &state.nu + &(rho * (t.apply(&state.g) - &state.q_slack));
    let xi = &state.xi + &(rho * (&state.s - &state.r_slack));
    (mu, nu, xi)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Convergence {
    pub primal: f64,
    pub dual: f64,
    pub primal_tol: f64,
    pub dual_tol: f64,
    pub converged: bool,
}

fn stacked_norm(parts: &[&Array1<f64>]) -> f64 {
    parts.iter().map(|v| v.dot(*v)).sum::<f64>().sqrt()
}

/// Residuals after a full iteration; `previous` holds the slacks of the iteration before.
///
/// The primal residual stacks `(g - p, T g - q, s - r)`. The dual residual is
/// `rho` times the slack change mapped back through the constraint
/// (`dp + T^T dq` for `g`, `dr` for `s`).
pub fn check_convergence(
    state: &ModelState,
    previous: &ModelState,
    t: &IncidenceMatrix,
    settings: &AdmmSettings,
) -> Convergence {
    let tg = t.apply(&state.g);
    let primal = stacked_norm(&[
        &(&state.g - &state.p_slack),
        &(&tg - &state.q_slack),
        &(&state.s - &state.r_slack),
    ]);
    let dp = &state.p_slack - &previous.p_slack;
    let dq = &state.q_slack - &previous.q_slack;
    let dr = &state.r_slack - &previous.r_slack;
    let dual = state.rho * stacked_norm(&[&(dp + t.apply_transpose(&dq)), &dr]);

    let n_constraints = (state.g.len() + tg.len() + state.s.len()) as f64;
    let n_primal = (state.g.len() + state.s.len()) as f64;
    let primal_scale = stacked_norm(&[&state.g, &tg, &state.s])
        .max(stacked_norm(&[&state.p_slack, &state.q_slack, &state.r_slack]));
    let dual_scale = stacked_norm(&[&(&state.mu + &t.apply_transpose(&state.nu)), &state.xi]);
    let primal_tol = settings.abs_tol * n_constraints.sqrt() + settings.rel_tol * primal_scale;
    let dual_tol = settings.abs_tol * n_primal.sqrt() + settings.rel_tol * dual_scale;
    Convergence {
        primal,
        dual,
        primal_tol,
        dual_tol,
        converged: primal <= primal_tol && dual <= dual_tol,
    }
}

fn all_finite(state: &ModelState) -> bool {
    [
        &state.g,
        &state.s,
        &state.p_slack,
        &state.q_slack,
        &state.r_slack,
        &state.mu,
        &state.nu,
        &state.xi,
    ]
    .iter()
    .all(|v| v.iter().all(|x| x.is_finite()))
}

fn initial_state(problem: &Problem<'_>, settings: &AdmmSettings) -> Result<ModelState> {
    let (k, p) = (problem.groups.k(), problem.groups.p());
    let rho = settings.rho.resolve(&problem.dataset.a);
    let g = match &settings.g_init {
        GInit::Ones => Array1::ones(k),
        GInit::GraphSigns => graph_signs(&problem.t),
        GInit::Custom(v) => {
            check_dim("g_init", k, v.len())?;
            Array1::from(v.clone())
        }
    };
    let s = match &settings.s_init {
        SInit::Zeros => Array1::zeros(p),
        SInit::Custom(v) => {
            check_dim("s_init", p, v.len())?;
            Array1::from(v.clone())
        }
        SInit::Ridge => {
            let (a, at) = (&problem.dataset.a, &problem.at);
            let op = FnOperator::new(p, |x: &Array1<f64>, out: &mut Array1<f64>| {
                out.assign(&at.dot(&a.dot(x)));
                out.scaled_add(rho, x);
            });
            solve(&op, problem.aty(), settings, &Array1::zeros(p))?
        }
    };
    Ok(ModelState::initial(g, s, &problem.t, rho))
}

fn graph_signs(t: &IncidenceMatrix) -> Array1<f64> {
    let k = t.n_cols();
    let mut adjacent = vec![Vec::new(); k];
    for row in t.rows() {
        let sign = if row.value_i * row.value_j < 0.0 { 1.0 } else { -1.0 };
        adjacent[row.i].push((row.j, sign));
        adjacent[row.j].push((row.i, sign));
    }
    let mut g = Array1::<f64>::zeros(k);
    for root in 0..k {
        if g[root] != 0.0 {
            continue;
        }
        g[root] = 1.0;
        let mut queue = std::collections::VecDeque::from([root]);
        while let Some(u) = queue.pop_front() {
            for &(v, sign) in &adjacent[u] {
                if g[v] == 0.0 {
                    g[v] = sign * g[u];
                    queue.push_back(v);
                }
            }
        }
    }
    g
}

/// Runs one full ADMM iteration in place.
pub(crate) fn step(
    state: &mut ModelState,
    problem: &Problem<'_>,
    settings: &AdmmSettings,
) -> Result<()> {
    state.g = update_g(state, problem, settings)?;
    state.s = update_s(state, problem, settings)?;
    state.p_slack = update_p(state, problem.penalty);
    state.q_slack = update_q(state, &problem.t, problem.penalty);
    state.r_slack = update_r(state, problem.penalty);
    let (mu, nu, xi) = update_duals(state, &problem.t);
    state.mu = mu;
    state.nu = nu;
    state.xi = xi;
    Ok(())
}

/// Fits the model. The dataset is expected to be centered.
pub fn fit(
    dataset: &Dataset,
    groups: &GroupMap,
    graph: &GeneGraph,
    penalty: &Penalty,
    settings: &AdmmSettings,
) -> Result<FitResult> {
    settings.validate()?;
    let problem = Problem::new(dataset, groups, graph, penalty)?;
    if penalty.lambda1 == 0.0 {
        warn!("lambda1 = 0 leaves the scale split between g and s unpenalized on the group side");
    }
    let state = initial_state(&problem, settings)?;
    let result = fit_from(&problem, state, settings)?;
    let state = result.state.as_ref().expect("ADMM fits carry their state");
    let reached = penalized_objective(
        dataset,
        &result.beta,
        &state.p_slack,
        &state.r_slack,
        &problem.t,
        penalty,
    );
    let null = 0.5 * dataset.y.dot(&dataset.y);
    if result.converged && reached > null {
        // g = s = 0 with zero multipliers is always a fixed point of the iteration.
        warn!("stationary point with objective {reached} above the null model {null}; returning zero");
        return Ok(zero_fit(&problem, state.rho, result));
    }
    Ok(result)
}

fn zero_fit(problem: &Problem<'_>, rho: f64, mut result: FitResult) -> FitResult {
    let (k, p) = (problem.groups.k(), problem.groups.p());
    let state = ModelState::initial(Array1::zeros(k), Array1::zeros(p), &problem.t, rho);
    result.g = state.g.clone();
    result.s = state.s.clone();
    result.beta = Array1::zeros(p);
    result.selected.clear();
    result.state = Some(state);
    result
}

/// Runs ADMM from a given state.
pub fn fit_from(
    problem: &Problem<'_>,
    mut state: ModelState,
    settings: &AdmmSettings,
) -> Result<FitResult> {
    settings.validate()?;
    let mut objective_trace = Vec::new();
    let mut primal_residuals = Vec::new();
    let mut dual_residuals = Vec::new();
    let mut converged = false;
    for iteration in 1..=settings.max_iter {
        let previous = state.clone();
        step(&mut state, problem, settings)?;
        let conv = check_convergence(&state, &previous, &problem.t, settings);
        if !all_finite(&state) || !conv.primal.is_finite() || !conv.dual.is_finite() {
            return Err(Error::Diverged {
                iteration,
                primal: conv.primal,
                dual: conv.dual,
            });
        }
        let beta = effective_coefficients(&state.p_slack, &state.r_slack, problem.groups)?;
        objective_trace.push(penalized_objective(
            problem.dataset,
            &beta,
            &state.p_slack,
            &state.r_slack,
            &problem.t,
            problem.penalty,
        ));
        primal_residuals.push(conv.primal);
        dual_residuals.push(conv.dual);
        if conv.converged {
            converged = true;
            break;
        }
        if settings.adaptive_rho {
            if conv.primal > 10.0 * conv.dual {
                state.rho *= 2.0;
            } else if conv.dual > 10.0 * conv.primal {
                state.rho /= 2.0;
            }
        }
    }
    if !converged {
        warn!("ADMM stopped after {} iterations without converging", settings.max_iter);
    }
    let beta = effective_coefficients(&state.p_slack, &state.r_slack, problem.groups)?;
    Ok(FitResult {
        g: state.g.clone(),
        s: state.s.clone(),
        selected: selected_indices(&beta, settings.select_eps),
        beta,
        iterations: objective_trace.len(),
        objective_trace,
        primal_residuals,
        dual_residuals,
        converged,
        state: Some(state),
    })
}

/// `y_hat = (new_a - column means) beta + y mean`, using training statistics.
pub fn predict(fit: &FitResult, new_a: &Array2<f64>, centering: &Centering) -> Result<Array1<f64>> {
    check_dim("prediction design columns", fit.beta.len(), new_a.ncols())?;
    check_dim("centering statistics", fit.beta.len(), centering.column_means.len())?;
    let offset = centering.y_mean - centering.column_means.dot(&fit.beta);
    Ok(new_a.dot(&fit.beta) + offset)
}
