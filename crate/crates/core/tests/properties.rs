//! Property tests for the library invariants.

mod common;

use std::collections::BTreeSet;
use std::sync::Arc;

use common::*;
use muse::augment::{drop_edges, mask_features};
use muse::eval::{ari, clustering_accuracy, hungarian, nmi};
use muse::graph::{
    load_graph, make_splits, normalized_adjacency, normalized_adjacency_sparse, write_graph, Graph, SplitRatio,
};
use muse::losses::{ntxent_pair_loss, view_loss, ContrastConfig, ContrastTerms, ControllerConfig};
use muse::model::{controller_lambda, encode_contextual, encode_semantic, FixedLambda, FusionWeights, ModelDims};
use muse::tensor::{CompGraph, Matrix};
use muse::training::{contrast_objective, controller_objective, embed, embed_views};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

const DIMS: ModelDims = ModelDims { embedding: 5, projection: 4, filter: 3 };

fn relabel(labels: &[usize], perm: &[usize]) -> Vec<usize> {
    labels.iter().map(|&l| perm[l]).collect()
}

fn labeling(n: usize, k: usize) -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(0..k, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    // ---- tensor core ----

    #[test]
    fn composite_expression_gradients_match_differences(seed in any::<u64>(), n in 2usize..6, f in 1usize..5) {
        let mut r = rng(seed);
        let a = uniform(n, f, &mut r);
        let b = uniform(f, 3, &mut r);
        let c = uniform(n, 3, &mut r);
        let value = |a: &Matrix, b: &Matrix| {
            let mut g = CompGraph::new();
            let (av, bv, cv) = (g.param(a.clone()), g.param(b.clone()), g.constant(c.clone()));
            let p = g.matmul(av, bv).unwrap();
            let s = g.sigmoid(p);
            let cos = g.cosine_rows(s, cv).unwrap();
            let e = g.exp(cos);
            let m = g.mean(e);
            let nrm = g.norm(s);
            let out = g.add(m, nrm).unwrap();
            (g, av, bv, out)
        };
        let (g, av, bv, out) = value(&a, &b);
        let grads = g.backward(out).unwrap();
        for (which, var, base) in [(0, av, &a), (1, bv, &b)] {
            let analytic = grads.get_or_zeros(var, base.shape());
            for idx in 0..base.len() {
                let mut up = base.clone();
                up.data_mut()[idx] += FD_STEP;
                let mut down = base.clone();
                down.data_mut()[idx] -= FD_STEP;
                let f = |m: &Matrix| {
                    let (g, _, _, out) = if which == 0 { value(m, &b) } else { value(&a, m) };
                    g.value(out).item().unwrap()
                };
                let numeric = (f(&up) - f(&down)) / (2.0 * FD_STEP);
                prop_assert!(rel_error(analytic.data()[idx], numeric) < 1e-4);
            }
        }
    }

    #[test]
    fn backward_is_linear(seed in any::<u64>(), alpha in -3.0f64..3.0, beta in -3.0f64..3.0) {
        let mut r = rng(seed);
        let x = uniform(4, 3, &mut r);
        let y = uniform(4, 3, &mut r);
        let grad = |wa: f64, wb: f64| {
            let mut g = CompGraph::new();
            let xv = g.param(x.clone());
            let yv = g.constant(y.clone());
            let l1 = g.cosine_rows(xv, yv).unwrap();
            let l1 = g.sum(l1);
            let sq = g.mul(xv, xv).unwrap();
            let l2 = g.mean(sq);
            let a = g.scale(l1, wa);
            let b = g.scale(l2, wb);
            let total = g.add(a, b).unwrap();
            g.backward(total).unwrap().get_or_zeros(xv, x.shape())
        };
        let combined = grad(alpha, beta);
        let (g1, g2) = (grad(1.0, 0.0), grad(0.0, 1.0));
        let expect = g1.zip_map(&g2, |p, q| alpha * p + beta * q).unwrap();
        prop_assert!(combined.max_abs_diff(&expect) < 1e-10);
    }

    #[test]
    fn forward_values_are_bitwise_repeatable(seed in any::<u64>()) {
        let mut r = rng(seed);
        let z = uniform(7, 4, &mut r);
        let za = uniform(7, 4, &mut r);
        prop_assert_eq!(view_loss(&z, &za, 0.5).unwrap().to_bits(), view_loss(&z, &za, 0.5).unwrap().to_bits());
    }

    // ---- graph data ----

    #[test]
    fn graph_round_trips_through_disk(seed in any::<u64>(), n in 1usize..9) {
        let mut r = rng(seed);
        let g = random_graph(n, 3, 2, &mut r);
        let dir = tempfile::tempdir().unwrap();
        write_graph(&g, dir.path()).unwrap();
        let back = load_graph(dir.path()).unwrap();
        prop_assert_eq!(&back, &g);
        let again = dir.path().join("again");
        write_graph(&back, &again).unwrap();
        prop_assert_eq!(load_graph(&again).unwrap(), g);
    }

    #[test]
    fn splits_are_deterministic_disjoint_and_covering(seed in any::<u64>(), n in 10usize..60) {
        let mut r = rng(seed);
        let g = random_graph(n, 2, 3, &mut r);
        let a = make_splits(&g, SplitRatio::STANDARD, 3, seed).unwrap();
        prop_assert_eq!(&a, &make_splits(&g, SplitRatio::STANDARD, 3, seed).unwrap());
        for s in &a {
            let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        }
    }

    #[test]
    fn normalized_adjacency_is_symmetric(seed in any::<u64>(), n in 1usize..10, loops in any::<bool>()) {
        let g = random_graph(n, 2, 2, &mut rng(seed));
        let a = normalized_adjacency(&g, loops);
        prop_assert!(a.max_abs_diff(&a.transpose()) == 0.0);
    }

    // ---- augmentation ----

    #[test]
    fn masking_only_zeroes_whole_columns(seed in any::<u64>(), p in 0.0f64..0.99) {
        let mut r = rng(seed);
        let x = uniform(6, 9, &mut r);
        let m = mask_features(&x, p, &mut rng(seed ^ 1));
        prop_assert_eq!(&m, &mask_features(&x, p, &mut rng(seed ^ 1)));
        for j in 0..x.cols() {
            let kept = (0..x.rows()).all(|i| m.get(i, j) == x.get(i, j));
            let zeroed = (0..x.rows()).all(|i| m.get(i, j) == 0.0);
            prop_assert!(kept || zeroed);
        }
    }

    #[test]
    fn dropping_edges_never_adds_any(seed in any::<u64>(), p in 0.0f64..0.99) {
        let g = random_graph(8, 2, 2, &mut rng(seed));
        let d = drop_edges(&g, p, &mut rng(seed ^ 2));
        prop_assert_eq!(&d, &drop_edges(&g, p, &mut rng(seed ^ 2)));
        let before: BTreeSet<_> = g.edges().iter().copied().collect();
        prop_assert!(d.edges().iter().all(|e| before.contains(e)));
        prop_assert_eq!(d.features(), g.features());
        let a = normalized_adjacency(&d, true);
        prop_assert!(a.max_abs_diff(&a.transpose()) == 0.0);
    }

    // ---- model ----

    #[test]
    fn encoders_share_weights(seed in any::<u64>()) {
        let mut r = rng(seed);
        let g = random_graph(6, 4, 2, &mut r);
        let p = random_params(4, DIMS, &mut r);
        let (hs, hc) = embed_views(&g, &p).unwrap();
        prop_assume!(hs.frobenius_norm() > 0.0 && hc.frobenius_norm() > 0.0);
        let mut q = p.clone();
        q.encoder.w2 = q.encoder.w2.map(|v| v + 0.5);
        let (hs2, hc2) = embed_views(&g, &q).unwrap();
        prop_assert!(hs != hs2 && hc != hc2);
    }

    #[test]
    fn contextual_encoder_is_permutation_equivariant(seed in any::<u64>(), n in 2usize..9) {
        let mut r = rng(seed);
        let g = random_graph(n, 3, 2, &mut r);
        let p = random_params(3, DIMS, &mut r);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut r);
        // Node i of g becomes node perm[i].
        let mut inv = vec![0; n];
        for (i, &pi) in perm.iter().enumerate() {
            inv[pi] = i;
        }
        let x = g.features().select_rows(&inv);
        let edges = g.edges().iter().map(|&(a, b)| (perm[a], perm[b]));
        let (h, _) = Graph::from_edge_list("perm", x.clone(), edges, None, 0).unwrap();
        let base = encode_contextual(&p, g.features(), &Arc::new(normalized_adjacency_sparse(&g, true))).unwrap();
        let moved = encode_contextual(&p, &x, &Arc::new(normalized_adjacency_sparse(&h, true))).unwrap();
        prop_assert!(moved.max_abs_diff(&base.select_rows(&inv)) < 1e-12);
    }

    #[test]
    fn fusion_weights_stay_in_open_unit_interval(seed in any::<u64>(), scale in 0.1f64..20.0) {
        let mut r = rng(seed);
        let g = random_graph(7, 4, 2, &mut r);
        let mut p = random_params(4, DIMS, &mut r);
        p.controller.w2.scale_in_place(scale);
        let (hs, hc) = embed_views(&g, &p).unwrap();
        let l = controller_lambda(&p, &hs, &hc, g.degree()).unwrap();
        prop_assert!(l.values().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    // ---- losses ----

    #[test]
    fn view_loss_matches_scalar_oracle(seed in any::<u64>(), n in 2usize..11, tau in 0.1f64..2.0) {
        let mut r = rng(seed);
        let z = uniform(n, 4, &mut r);
        let za = uniform(n, 4, &mut r);
        prop_assert!((view_loss(&z, &za, tau).unwrap() - view_loss_scalar(&z, &za, tau)).abs() < 1e-9);
        for i in 0..n {
            let v = ntxent_pair_loss(&z, &za, i, tau).unwrap();
            prop_assert!((v - ntxent_scalar(&z, &za, i, tau)).abs() < 1e-9);
        }
    }

    #[test]
    fn view_loss_is_symmetric_and_row_scale_invariant(seed in any::<u64>(), n in 2usize..9) {
        let mut r = rng(seed);
        let z = uniform(n, 3, &mut r);
        let za = uniform(n, 3, &mut r);
        let scales: Vec<f64> = (0..n).map(|_| r.gen_range(0.1..10.0)).collect();
        let scaled = Matrix::from_fn(n, 3, |i, j| z.get(i, j) * scales[i]);
        let base = view_loss(&z, &za, 0.5).unwrap();
        prop_assert!((base - view_loss(&za, &z, 0.5).unwrap()).abs() < 1e-12);
        prop_assert!((base - view_loss(&scaled, &za, 0.5).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn sharper_temperature_lowers_a_dominant_positive_loss(seed in any::<u64>(), t1 in 0.05f64..2.0, t2 in 0.05f64..2.0) {
        prop_assume!((t1 - t2).abs() > 1e-3);
        let mut r = rng(seed);
        let n = 4;
        let z = uniform(n, 3, &mut r);
        // Positive equals the anchor, so its similarity (1) is the strict maximum
        // unless another row is parallel.
        let mut za = uniform(n, 3, &mut r);
        za.row_mut(0).copy_from_slice(z.row(0));
        let sims: Vec<f64> = (1..n).map(|j| cos(z.row(0), z.row(j)).max(cos(z.row(0), za.row(j)))).collect();
        prop_assume!(sims.iter().all(|&s| s < 1.0 - 1e-6));
        let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
        prop_assert!(ntxent_pair_loss(&z, &za, 0, lo).unwrap() < ntxent_pair_loss(&z, &za, 0, hi).unwrap());
    }

    #[test]
    fn similarity_term_grows_with_lambda_on_positive_cosines(seed in any::<u64>(), bump in 0.01f64..0.5) {
        let mut r = rng(seed);
        let hs = uniform(5, 3, &mut r);
        let hc = uniform(5, 3, &mut r);
        let i = (0..5).find(|&i| cos(hs.row(i), hc.row(i)) > 0.0);
        prop_assume!(i.is_some());
        let i = i.unwrap();
        let only_similarity = ControllerConfig { alpha1: 0.0, alpha2: 0.0, epsilon: 0.5 };
        let lambda: Vec<f64> = (0..5).map(|_| r.gen_range(0.0..0.5)).collect();
        let mut raised = lambda.clone();
        raised[i] += bump;
        let a = controller_loss_scalar(&lambda, &hs, &hc, &only_similarity);
        let b = muse::losses::controller_loss(&FusionWeights::new(raised).unwrap(), &hs, &hc, &only_similarity).unwrap();
        prop_assert!(b > a);
    }

    #[test]
    fn objectives_ignore_the_other_parameter_group(seed in any::<u64>()) {
        let mut r = rng(seed);
        let g = random_graph(6, 4, 2, &mut r);
        let p = random_params(4, DIMS, &mut r);
        let pert = perturb(&g, &mut r);
        let mut q = p.clone();
        for (_, m) in q.named_mut().into_iter().filter(|(name, _)| name.starts_with("controller")) {
            *m = uniform(m.rows(), m.cols(), &mut r);
        }
        let cfg = ContrastConfig::default();
        let terms = ContrastTerms::default();
        let a = contrast_objective(&p, pert.inputs(&g), &cfg, terms).unwrap();
        let b = contrast_objective(&q, pert.inputs(&g), &cfg, terms).unwrap();
        prop_assert_eq!(a, b);

        let (hs, hc) = embed_views(&g, &p).unwrap();
        let mut s = p.clone();
        s.encoder.w1 = uniform(s.encoder.w1.rows(), s.encoder.w1.cols(), &mut r);
        s.projector.w2 = uniform(s.projector.w2.rows(), s.projector.w2.cols(), &mut r);
        let cc = ControllerConfig::default();
        let x = controller_objective(&p, &hs, &hc, g.degree(), &cc).unwrap();
        let y = controller_objective(&s, &hs, &hc, g.degree(), &cc).unwrap();
        prop_assert_eq!(x.0.to_bits(), y.0.to_bits());
        prop_assert_eq!(x.2, y.2);
    }

    // ---- inference ----

    #[test]
    fn inference_embedding_is_deterministic_and_dropout_free(seed in any::<u64>()) {
        let mut r = rng(seed);
        let g = random_graph(6, 4, 2, &mut r);
        let p = random_params(4, DIMS, &mut r);
        let h = embed(&g, &p, &FixedLambda(0.0)).unwrap();
        prop_assert_eq!(&h, &embed(&g, &p, &FixedLambda(0.0)).unwrap());
        prop_assert_eq!(h, encode_semantic(&p, g.features()).unwrap());
    }

    // ---- evaluation ----

    #[test]
    fn metrics_ignore_label_permutations(pred in labeling(30, 4), truth in labeling(30, 3), seed in any::<u64>()) {
        let mut r = rng(seed);
        let mut pp: Vec<usize> = (0..4).collect();
        pp.shuffle(&mut r);
        let mut tp: Vec<usize> = (0..3).collect();
        tp.shuffle(&mut r);
        let (p2, t2) = (relabel(&pred, &pp), relabel(&truth, &tp));
        for f in [clustering_accuracy, nmi, ari] {
            let (a, b) = (f(&pred, &truth).unwrap(), f(&p2, &t2).unwrap());
            prop_assert!((a - b).abs() < 1e-12);
        }
        prop_assert!((0.0..=1.0).contains(&nmi(&pred, &truth).unwrap()));
        prop_assert!((-1.0..=1.0).contains(&ari(&pred, &truth).unwrap()));
    }

    #[test]
    fn single_cluster_accuracy_is_at_least_the_largest_class(truth in labeling(25, 5)) {
        let mut counts = [0usize; 5];
        for &t in &truth {
            counts[t] += 1;
        }
        let share = *counts.iter().max().unwrap() as f64 / truth.len() as f64;
        prop_assert!(clustering_accuracy(&[7; 25], &truth).unwrap() >= share - 1e-15);
    }

    #[test]
    fn hungarian_is_optimal(seed in any::<u64>(), k in 1usize..6) {
        let mut r = rng(seed);
        let cost: Vec<Vec<f64>> = (0..k).map(|_| (0..k).map(|_| r.gen_range(0.0..10.0)).collect()).collect();
        let a = hungarian(&cost);
        let got: f64 = a.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
        let mut perm: Vec<usize> = (0..k).collect();
        let mut best = f64::INFINITY;
        heap_permutations(&mut perm, k, &mut |p| {
            best = best.min(p.iter().enumerate().map(|(i, &j)| cost[i][j]).sum());
        });
        prop_assert!((got - best).abs() < 1e-9);
    }
}

fn heap_permutations(v: &mut [usize], k: usize, visit: &mut impl FnMut(&[usize])) {
    if k <= 1 {
        visit(v);
        return;
    }
    for i in 0..k {
        heap_permutations(v, k - 1, visit);
        let j = if k % 2 == 0 { i } else { 0 };
        v.swap(j, k - 1);
    }
}
