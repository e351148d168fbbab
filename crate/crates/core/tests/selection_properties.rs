use ndarray::{Array1, Array2};
use proptest::prelude::*;
use sglgg::datagen::{planted_graph_edges, simulate, FeatureSigns, SyntheticSpec};
use sglgg::selection::*;
use sglgg::*;

/// Four groups of five, group 1 carrying three strong features.
fn fixture() -> (Dataset, GroupMap, GeneGraph, Vec<usize>) {
    let spec = SyntheticSpec {
        n: 60,
        sizes: vec![5; 4],
        active_groups: vec![1],
        active_fraction_within: 0.6,
        edges: planted_graph_edges(4, &[1]),
        noise_sd: 0.5,
        correlation: 0.2,
        effect_range: (1.5, 2.0),
        feature_signs: FeatureSigns::Positive,
        seed: 9,
    };
    let (d, groups, graph, truth) = simulate(&spec).unwrap();
    (d, groups, graph, truth.support)
}

fn small_grid(d: &Dataset) -> Grid {
    let l = lambda_max(d);
    Grid::new(
        [0.1, 0.2, 0.4]
            .iter()
            .map(|f| GridPoint::from_lambdas(Method::Sglgg, &[f * l, f * l, f * l]).unwrap())
            .collect(),
    )
    .unwrap()
}

proptest! {
    #[test]
    fn folds_partition_the_samples(n in 2usize..200, folds in 2usize..10, seed in any::<u64>(), rep in 0usize..5) {
        prop_assume!(folds <= n);
        let assign = fold_assignment(n, folds, seed, rep);
        prop_assert_eq!(assign.len(), n);
        let mut counts = vec![0usize; folds];
        for &f in &assign {
            prop_assert!(f < folds);
            counts[f] += 1;
        }
        let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
        prop_assert!(hi - lo <= 1);
    }
}

#[test]
fn frequency_ignores_grid_order() {
    let (d, groups, graph, _) = fixture();
    let ctx = FitContext::new(&groups, &graph, AdmmSettings::default());
    let grid = small_grid(&d);
    let mut reversed = grid.points().to_vec();
    reversed.reverse();
    let reversed = Grid::new(reversed).unwrap();
    let options = StabilityOptions {
        n_sims: 6,
        seed: 3,
        ..StabilityOptions::default()
    };
    let a = stability_select(&d, &ctx, &grid, &options).unwrap();
    let b = stability_select(&d, &ctx, &reversed, &options).unwrap();
    assert_eq!(a.frequency, b.frequency);
    assert_eq!(a.union_frequency, b.union_frequency);
    assert_eq!(a.ranking, b.ranking);
}

#[test]
fn more_subsamples_keep_the_planted_leader() {
    let (d, groups, graph, support) = fixture();
    let ctx = FitContext::new(&groups, &graph, AdmmSettings::default());
    let grid = small_grid(&d);
    for n_sims in [5, 10] {
        let options = StabilityOptions {
            n_sims,
            seed: 1,
            ..StabilityOptions::default()
        };
        let r = stability_select(&d, &ctx, &grid, &options).unwrap();
        assert!(r.frequency.iter().chain(&r.union_frequency).all(|f| (0.0..=1.0).contains(f)));
        assert!(support.contains(&r.ranking[0]), "n_sims {n_sims}: leader {}", r.ranking[0]);
        let top = rank_top_k(&r, 5).unwrap();
        for w in top.windows(2) {
            let (a, b) = (r.frequency[w[0]], r.frequency[w[1]]);
            assert!(a > b || (a == b && w[0] < w[1]));
        }
    }
}

#[test]
fn protocols_repeat_bit_for_bit() {
    let (d, groups, graph, _) = fixture();
    let ctx = FitContext::new(&groups, &graph, AdmmSettings::default());
    let grid = small_grid(&d);
    let cv = CvOptions {
        folds: 3,
        replications: 2,
        seed: 5,
    };
    let a = cross_validate(&d, &ctx, &grid, &cv).unwrap();
    let b = cross_validate(&d, &ctx, &grid, &cv).unwrap();
    assert_eq!(a.to_csv(), b.to_csv());
    assert!(a.mse.iter().flatten().all(|m| *m >= 0.0));
    let st = StabilityOptions {
        n_sims: 4,
        seed: 5,
        archive: true,
        ..StabilityOptions::default()
    };
    let a = stability_select(&d, &ctx, &grid, &st).unwrap();
    let b = stability_select(&d, &ctx, &grid, &st).unwrap();
    assert_eq!(a.to_csv(&d.feature_ids), b.to_csv(&d.feature_ids));
    assert_eq!(a.per_sim_selected, b.per_sim_selected);
}

/// With `y` independent of a zero design every fit is the null model, so the
/// CV error of each grid point equals the null-model error.
#[test]
fn cv_of_an_uninformative_design_is_the_null_error() {
    let n = 30;
    let a = Array2::<f64>::zeros((n, 4));
    let y = Array1::from_shape_fn(n, |i| ((i * 7919) % 13) as f64 - 6.0);
    let d = Dataset::from_arrays(a, y).unwrap();
    let groups = GroupMap::from_sizes(&[2, 2]).unwrap();
    let graph = GeneGraph::new(2, [(0, 1, 1.0)]).unwrap();
    let ctx = FitContext::new(&groups, &graph, AdmmSettings::default());
    let grid = Grid::new(vec![GridPoint::from_lambdas(Method::Lasso, &[1.0]).unwrap()]).unwrap();
    let r = cross_validate(&d, &ctx, &grid, &CvOptions::default()).unwrap();
    assert!((r.mean_mse[0] - r.null_mean_mse).abs() <= 1e-12);
    assert_eq!(r.best, 0);
}

#[test]
fn baseline_grids_cover_their_axes() {
    let (d, ..) = fixture();
    for method in Method::ALL {
        let grid = Grid::default_for(method, &d, 12, (0.05, 0.5)).unwrap();
        assert_eq!(grid.len(), 12);
        assert!(grid.points().iter().all(|p| p.method() == method));
        assert!(grid.points().iter().all(|p| p.lambdas().iter().all(|l| *l > 0.0)));
    }
}
