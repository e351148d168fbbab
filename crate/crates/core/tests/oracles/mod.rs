//! Independent reference solvers used as test oracles.

#![allow(dead_code)]

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sglgg::{center_dataset, Dataset, GroupMap, IncidenceMatrix, Penalty};

pub fn soft(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// Centered Gaussian design with `y = A beta + noise`.
pub fn random_dataset(n: usize, p: usize, beta: &[f64], noise: f64, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = Array2::from_shape_fn((n, p), |_| rng.sample::<f64, _>(StandardNormal));
    let b = Array1::from(beta.to_vec());
    let y = a.dot(&b) + Array1::from_shape_fn(n, |_| noise * rng.sample::<f64, _>(StandardNormal));
    center_dataset(&Dataset::from_arrays(a, y).unwrap()).unwrap()
}

pub fn lasso_objective(d: &Dataset, beta: &Array1<f64>, lambda: f64) -> f64 {
    let r = &d.y - &d.a.dot(beta);
    0.5 * r.dot(&r) + lambda * beta.iter().map(|b| b.abs()).sum::<f64>()
}

/// Cyclic coordinate descent for the lasso, run until no coordinate moves by more than `1e-14`.
pub fn cd_lasso(d: &Dataset, lambda: f64) -> Array1<f64> {
    let p = d.n_features();
    let norms: Vec<f64> = (0..p).map(|j| d.a.column(j).dot(&d.a.column(j))).collect();
    let mut beta = Array1::<f64>::zeros(p);
    let mut r = d.y.clone();
    for _ in 0..1_000_000 {
        let mut max_step = 0.0f64;
        for j in 0..p {
            if norms[j] == 0.0 {
                continue;
            }
            let col = d.a.column(j);
            let rho = col.dot(&r) + norms[j] * beta[j];
            let new = soft(rho, lambda) / norms[j];
            let step = new - beta[j];
            if step != 0.0 {
                r.scaled_add(-step, &col);
                beta[j] = new;
            }
            max_step = max_step.max(step.abs());
        }
        if max_step < 1e-14 {
            break;
        }
    }
    beta
}

pub fn sgl_objective(d: &Dataset, groups: &GroupMap, beta: &Array1<f64>, lg: f64, lf: f64) -> f64 {
    let r = &d.y - &d.a.dot(beta);
    let group: f64 = (0..groups.k())
        .map(|k| {
            (groups.sizes()[k] as f64).sqrt()
                * groups.members(k).iter().map(|&j| beta[j] * beta[j]).sum::<f64>().sqrt()
        })
        .sum();
    0.5 * r.dot(&r) + lg * group + lf * beta.iter().map(|b| b.abs()).sum::<f64>()
}

fn sgl_prox(groups: &GroupMap, v: &Array1<f64>, t: f64, lg: f64, lf: f64) -> Array1<f64> {
    let mut z = v.mapv(|x| soft(x, t * lf));
    for k in 0..groups.k() {
        let m = groups.members(k);
        let norm = m.iter().map(|&j| z[j] * z[j]).sum::<f64>().sqrt();
        let thr = t * lg * (groups.sizes()[k] as f64).sqrt();
        let scale = if norm > thr { 1.0 - thr / norm } else { 0.0 };
        for &j in m {
            z[j] *= scale;
        }
    }
    z
}

/// ISTA with backtracking line search for the sparse group lasso.
pub fn ista_sgl(d: &Dataset, groups: &GroupMap, lg: f64, lf: f64) -> Array1<f64> {
    let p = d.n_features();
    let smooth = |b: &Array1<f64>| {
        let r = &d.y - &d.a.dot(b);
        0.5 * r.dot(&r)
    };
    let mut beta = Array1::<f64>::zeros(p);
    let mut step = 1.0;
    for _ in 0..200_000 {
        let grad = d.a.t().dot(&(&d.a.dot(&beta) - &d.y));
        let f0 = smooth(&beta);
        let next = loop {
            let cand = sgl_prox(groups, &(&beta - &(step * &grad)), step, lg, lf);
            let diff = &cand - &beta;
            if smooth(&cand) <= f0 + grad.dot(&diff) + diff.dot(&diff) / (2.0 * step) {
                break cand;
            }
            step *= 0.5;
        };
        let moved = (&next - &beta).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        beta = next;
        if moved < 1e-14 {
            break;
        }
    }
    beta
}

pub fn fused_objective(d: &Dataset, beta: &Array1<f64>, ls: f64, lf: f64) -> f64 {
    let r = &d.y - &d.a.dot(beta);
    let tv: f64 = beta.windows(2).into_iter().map(|w| (w[1] - w[0]).abs()).sum();
    0.5 * r.dot(&r) + ls * beta.iter().map(|b| b.abs()).sum::<f64>() + lf * tv
}

/// Exhaustive search over `[-2, 2]^2` at `step` for `(beta_1, beta_2)` with the
/// exact minimizer over `beta_3`, for three-feature fused lasso problems.
pub fn fused_grid_p3(d: &Dataset, ls: f64, lf: f64, step: f64) -> (f64, [f64; 3]) {
    assert_eq!(d.n_features(), 3);
    let g = d.a.t().dot(&d.a);
    let aty = d.a.t().dot(&d.y);
    let yy = d.y.dot(&d.y);
    let m = (4.0 / step).round() as i64;
    let mut best = (f64::INFINITY, [0.0; 3]);
    for i in 0..=m {
        let b1 = -2.0 + i as f64 * step;
        for k in 0..=m {
            let b2 = -2.0 + k as f64 * step;
            // f(b3) = const + 1/2 c b3^2 - q b3 + ls |b3| + lf |b3 - b2|
            let c = g[[2, 2]];
            let q = aty[2] - g[[0, 2]] * b1 - g[[1, 2]] * b2;
            let base = 0.5 * yy - aty[0] * b1 - aty[1] * b2
                + 0.5 * (g[[0, 0]] * b1 * b1 + 2.0 * g[[0, 1]] * b1 * b2 + g[[1, 1]] * b2 * b2)
                + ls * (b1.abs() + b2.abs())
                + lf * (b2 - b1).abs();
            let f = |b3: f64| base + 0.5 * c * b3 * b3 - q * b3 + ls * b3.abs() + lf * (b3 - b2).abs();
            let mut cands = vec![0.0, b2];
            for s1 in [-1.0, 1.0] {
                for s2 in [-1.0, 1.0] {
                    cands.push((q - ls * s1 - lf * s2) / c);
                }
            }
            for b3 in cands {
                let v = f(b3);
                if v < best.0 {
                    best = (v, [b1, b2, b3]);
                }
            }
        }
    }
    best
}

/// Exact prox of `x -> a1 |x1| + a2 |x2| + c |x1 - sigma x2|` at `v` with unit step.
///
/// Every minimizer lies on one of the pieces where each absolute value is
/// either zero or of fixed sign; each piece is a projection onto a subspace,
/// so the candidates are enumerated and the best one is kept.
pub fn prox_two_groups(v: [f64; 2], a: [f64; 2], c: f64, sigma: f64) -> [f64; 2] {
    let normals = [[1.0, 0.0], [0.0, 1.0], [1.0, -sigma]];
    let weights = [a[0], a[1], c];
    let f = |x: [f64; 2]| {
        0.5 * ((x[0] - v[0]).powi(2) + (x[1] - v[1]).powi(2))
            + weights
                .iter()
                .zip(&normals)
                .map(|(w, n)| w * (n[0] * x[0] + n[1] * x[1]).abs())
                .sum::<f64>()
    };
    let mut best = ([0.0, 0.0], f([0.0, 0.0]));
    for code in 0..27 {
        let states = [code % 3, (code / 3) % 3, code / 9];
        let mut lin = [0.0, 0.0];
        let mut active = Vec::new();
        for t in 0..3 {
            match states[t] {
                0 => active.push(normals[t]),
                1 => {
                    lin[0] += weights[t] * normals[t][0];
                    lin[1] += weights[t] * normals[t][1];
                }
                _ => {
                    lin[0] -= weights[t] * normals[t][0];
                    lin[1] -= weights[t] * normals[t][1];
                }
            }
        }
        let u = [v[0] - lin[0], v[1] - lin[1]];
        let x = match active.len() {
            0 => u,
            1 => {
                let n = active[0];
                let nn = n[0] * n[0] + n[1] * n[1];
                let d = (n[0] * u[0] + n[1] * u[1]) / nn;
                [u[0] - d * n[0], u[1] - d * n[1]]
            }
            _ => [0.0, 0.0],
        };
        let fx = f(x);
        if fx < best.1 {
            best = (x, fx);
        }
    }
    best.0
}

pub struct PalmResult {
    pub g: Array1<f64>,
    pub s: Array1<f64>,
    pub objective: f64,
    pub stationarity: f64,
}

/// Alternating proximal gradient on `(g, s)` for two groups joined by one edge.
///
/// Each block takes a proximal gradient step with step size the inverse of
/// its block Lipschitz constant; the run stops when the prox-gradient
/// mapping of both blocks is below `tol`.
pub fn palm_two_groups(
    d: &Dataset,
    groups: &GroupMap,
    t: &IncidenceMatrix,
    penalty: &Penalty,
    mut g: Array1<f64>,
    mut s: Array1<f64>,
    tol: f64,
    max_iter: usize,
) -> PalmResult {
    assert_eq!(groups.k(), 2);
    let row = t.rows().first().copied();
    let (c, sigma) = match row {
        Some(r) => (penalty.lambda2 * r.value_i.abs(), -r.value_j / r.value_i),
        None => (0.0, 1.0),
    };
    let w = &penalty.group_weights;
    let mut stationarity = f64::INFINITY;
    for _ in 0..max_iter {
        // g block: B = A Diag(s) M^T.
        let mut b = Array2::<f64>::zeros((d.n_samples(), 2));
        for j in 0..d.n_features() {
            let k = groups.group_of(j);
            for i in 0..d.n_samples() {
                b[[i, k]] += d.a[[i, j]] * s[j];
            }
        }
        let bb = b.t().dot(&b);
        let lg = largest_eig_2x2(&bb).max(1e-12);
        let grad_g = b.t().dot(&(&b.dot(&g) - &d.y));
        let step = 1.0 / lg;
        let v = [g[0] - step * grad_g[0], g[1] - step * grad_g[1]];
        let x = prox_two_groups(
            v,
            [step * penalty.lambda1 * w[0], step * penalty.lambda1 * w[1]],
            step * c,
            sigma,
        );
        let g_new = Array1::from(vec![x[0], x[1]]);
        let dg = (&g_new - &g).mapv(|v| v * lg);
        g = g_new;

        // s block: C = A Diag(M^T g).
        let gate = groups.expand(&g);
        let mut cm = d.a.clone();
        for (j, mut col) in cm.columns_mut().into_iter().enumerate() {
            col *= gate[j];
        }
        let ls = power_eig(&cm.t().dot(&cm)).max(1e-12);
        let grad_s = cm.t().dot(&(&cm.dot(&s) - &d.y));
        let step = 1.0 / ls;
        let s_new = (&s - &(step * &grad_s)).mapv(|x| soft(x, step * penalty.lambda3));
        let ds = (&s_new - &s).mapv(|v| v * ls);
        s = s_new;

        stationarity = (dg.dot(&dg) + ds.dot(&ds)).sqrt();
        if stationarity < tol {
            break;
        }
    }
    let objective = sglgg::objective(d, &g, &s, groups, t, penalty).unwrap();
    PalmResult {
        g,
        s,
        objective,
        stationarity,
    }
}

fn largest_eig_2x2(m: &Array2<f64>) -> f64 {
    let (a, b, c) = (m[[0, 0]], m[[0, 1]], m[[1, 1]]);
    let tr = a + c;
    let det = a * c - b * b;
    tr / 2.0 + ((tr * tr / 4.0 - det).max(0.0)).sqrt()
}

fn power_eig(m: &Array2<f64>) -> f64 {
    let mut v = Array1::<f64>::ones(m.nrows());
    let mut lambda = 0.0;
    for _ in 0..200 {
        let w = m.dot(&v);
        let norm = w.dot(&w).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        lambda = v.dot(&w) / v.dot(&v);
        v = w / norm;
    }
    // Power iteration approaches from below; pad slightly so 1 / L is a safe step.
    lambda * 1.01
}

/// Planted instance with `n = 100`, five groups of ten and a signed four-edge chain,
/// with penalty levels drawn log-uniformly in `[0.05, 0.3] lambda_max`.
pub fn fixed_point_instance(seed: u64) -> (Dataset, GroupMap, sglgg::GeneGraph, Penalty) {
    use sglgg::datagen::{simulate, FeatureSigns, SyntheticSpec};
    let spec = SyntheticSpec {
        n: 100,
        sizes: vec![10; 5],
        active_groups: vec![1, 2],
        active_fraction_within: 0.3,
        edges: vec![(0, 1, 0.5), (1, 2, 1.0), (2, 3, -0.8), (3, 4, 0.3)],
        noise_sd: 1.0,
        correlation: 0.3,
        effect_range: (0.5, 1.5),
        feature_signs: FeatureSigns::Random,
        seed,
    };
    let (d, groups, graph, _) = simulate(&spec).unwrap();
    let d = center_dataset(&d).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let lmax = sglgg::selection::lambda_max(&d);
    let f = (0.05f64.ln() + rng.gen::<f64>() * (0.3f64.ln() - 0.05f64.ln())).exp();
    let ratio = [0.1, 1.0, 10.0][rng.gen_range(0..3)];
    let l = f * lmax;
    let penalty = Penalty::new(l, ratio * l, l, &groups);
    (d, groups, graph, penalty)
}

/// Random instance with `n = 20`, two groups of two and one signed edge.
pub fn small_instance(seed: u64) -> (Dataset, GroupMap, sglgg::GeneGraph, Penalty) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let beta: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.5..1.5)).collect();
    let d = random_dataset(20, 4, &beta, 0.5, seed.wrapping_add(10_000));
    let groups = GroupMap::from_sizes(&[2, 2]).unwrap();
    let weight = if rng.gen_bool(0.5) { 1.0 } else { -0.5 };
    let graph = sglgg::GeneGraph::new(2, [(0, 1, weight)]).unwrap();
    let lmax = sglgg::selection::lambda_max(&d);
    let l1 = rng.gen_range(0.05..0.3) * lmax;
    let l2 = rng.gen_range(0.05..0.5) * lmax;
    let l3 = rng.gen_range(0.05..0.3) * lmax;
    let penalty = Penalty::new(l1, l2, l3, &groups);
    (d, groups, graph, penalty)
}

/// Best PALM objective over `restarts` random starting points.
pub fn palm_best(
    d: &Dataset,
    groups: &GroupMap,
    graph: &sglgg::GeneGraph,
    penalty: &Penalty,
    restarts: usize,
    seed: u64,
) -> PalmResult {
    let t = sglgg::build_incidence(graph, &penalty.edge_weight).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    let mut best: Option<PalmResult> = None;
    for _ in 0..restarts {
        let g0 = Array1::from_shape_fn(2, |_| rng.gen_range(-2.0..2.0));
        let s0 = Array1::from_shape_fn(4, |_| rng.gen_range(-2.0..2.0));
        let r = palm_two_groups(d, groups, &t, penalty, g0, s0, 1e-10, 2_000_000);
        if best.as_ref().map_or(true, |b| r.objective < b.objective) {
            best = Some(r);
        }
    }
    best.unwrap()
}
