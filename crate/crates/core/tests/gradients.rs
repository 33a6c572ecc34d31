//! Autodiff gradients against central finite differences.

mod common;

use std::sync::Arc;

use common::*;
use muse::graph::normalized_adjacency_sparse;
use muse::losses::{view_loss_var, ContrastConfig, ContrastTerms, ControllerConfig};
use muse::model::{ModelDims, ModelParams};
use muse::tensor::{CompGraph, Matrix, Var};
use muse::training::{contrast_objective, controller_objective, embed_views};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Build = dyn Fn(&mut CompGraph, &[Var]) -> Var;

fn eval(inputs: &[Matrix], build: &Build) -> f64 {
    let mut g = CompGraph::new();
    let vars: Vec<Var> = inputs.iter().map(|m| g.param(m.clone())).collect();
    let out = build(&mut g, &vars);
    g.value(out).item().unwrap()
}

fn check(inputs: Vec<Matrix>, build: &Build, tol: f64) {
    let mut g = CompGraph::new();
    let vars: Vec<Var> = inputs.iter().map(|m| g.param(m.clone())).collect();
    let out = build(&mut g, &vars);
    let grads = g.backward(out).unwrap();
    let mut probe = inputs.clone();
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(*v, inputs[k].shape());
        for idx in 0..inputs[k].len() {
            let orig = probe[k].data()[idx];
            probe[k].data_mut()[idx] = orig + FD_STEP;
            let up = eval(&probe, build);
            probe[k].data_mut()[idx] = orig - FD_STEP;
            let down = eval(&probe, build);
            probe[k].data_mut()[idx] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let err = rel_error(analytic.data()[idx], numeric);
            assert!(err < tol, "input {k} entry {idx}: analytic {} numeric {numeric}", analytic.data()[idx]);
        }
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Values bounded away from zero so relu/abs kinks are not straddled.
fn away_from_zero(rows: usize, cols: usize, r: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| {
        let v: f64 = r.gen_range(0.1..1.0);
        if r.gen_bool(0.5) {
            v
        } else {
            -v
        }
    })
}

#[test]
fn matmul_and_broadcast_add() {
    let mut r = rng(1);
    let inputs = vec![uniform(3, 4, &mut r), uniform(4, 2, &mut r), uniform(1, 2, &mut r)];
    check(
        inputs,
        &|g, v| {
            let p = g.matmul(v[0], v[1]).unwrap();
            let s = g.add(p, v[2]).unwrap();
            let s = g.mul(s, s).unwrap();
            g.sum(s)
        },
        1e-6,
    );
}

#[test]
fn relu_sigmoid_exp_log() {
    let mut r = rng(2);
    let a = away_from_zero(3, 3, &mut r);
    check(
        vec![a],
        &|g, v| {
            let x = g.relu(v[0]);
            let y = g.sigmoid(v[0]);
            let z = g.exp(y);
            let z = g.log(z).unwrap();
            let t = g.add(x, z).unwrap();
            let t = g.scale(t, 1.7);
            g.mean(t)
        },
        1e-6,
    );
}

#[test]
fn norm_abs_and_scalar_shift() {
    let mut r = rng(3);
    check(
        vec![away_from_zero(5, 1, &mut r)],
        &|g, v| {
            let n = g.norm(v[0]);
            let m = g.mean(v[0]);
            let m = g.add_scalar(m, 0.05);
            let m = g.abs(m);
            g.add(n, m).unwrap()
        },
        1e-6,
    );
}

#[test]
fn sparse_product_and_concat() {
    let mut r = rng(4);
    let graph = random_graph(6, 3, 2, &mut r);
    let adj = Arc::new(normalized_adjacency_sparse(&graph, true));
    let inputs = vec![uniform(6, 3, &mut r), uniform(6, 2, &mut r), uniform(5, 1, &mut r)];
    check(
        inputs,
        &move |g, v| {
            let s = g.spmm(Arc::clone(&adj), v[0]).unwrap();
            let c = g.concat_cols(&[s, v[1]]).unwrap();
            let w = g.constant(Matrix::from_fn(5, 1, |i, _| 0.3 * i as f64 - 0.5));
            let p = g.matmul(c, w).unwrap();
            let p = g.mul(p, p).unwrap();
            let _ = v[2];
            g.sum(p)
        },
        1e-6,
    );
}

#[test]
fn cosine_and_row_scaling() {
    let mut r = rng(5);
    let inputs = vec![uniform(4, 3, &mut r), uniform(4, 3, &mut r), uniform(4, 1, &mut r)];
    check(
        inputs,
        &|g, v| {
            let c = g.cosine_rows(v[0], v[1]).unwrap();
            let s = g.scale_rows(v[1], v[2]).unwrap();
            let s = g.sum(s);
            let c = g.mul(c, v[2]).unwrap();
            let c = g.sum(c);
            g.add(c, s).unwrap()
        },
        1e-6,
    );
}

#[test]
fn softmax_cross_entropy() {
    let mut r = rng(6);
    check(vec![uniform(5, 3, &mut r)], &|g, v| g.softmax_cross_entropy(v[0], &[0, 2, 1, 1, 0]).unwrap(), 1e-6);
}

#[test]
fn ntxent_view_loss_for_several_temperatures() {
    for (seed, tau) in [(7, 0.5), (8, 0.1), (9, 2.0)] {
        let mut r = rng(seed);
        let inputs = vec![uniform(5, 4, &mut r), uniform(5, 4, &mut r)];
        check(inputs, &move |g, v| view_loss_var(g, v[0], v[1], tau).unwrap(), 1e-5);
    }
}

const DIMS: ModelDims = ModelDims { embedding: 5, projection: 4, filter: 3 };

#[test]
fn full_contrast_objective_on_small_graphs() {
    let cfg = ContrastConfig { tau: 0.5, beta1: 0.7, beta2: 0.4 };
    for seed in 0..3 {
        let mut r = rng(100 + seed);
        let g = random_graph(6, 8, 2, &mut r);
        let params = random_params(8, DIMS, &mut r);
        let pert = perturb(&g, &mut r);
        let terms = ContrastTerms::default();
        let (_, grads) = contrast_objective(&params, pert.inputs(&g), &cfg, terms).unwrap();
        let err = max_fd_error(&params, &grads.unwrap(), ModelParams::representation_mut, |p| {
            contrast_objective(p, pert.inputs(&g), &cfg, terms).unwrap().0
        });
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}

#[test]
fn full_controller_objective_on_small_graphs() {
    let cfg = ControllerConfig { alpha1: 0.3, alpha2: 2.0, epsilon: 0.5 };
    for seed in 0..3 {
        let mut r = rng(200 + seed);
        let g = random_graph(6, 8, 2, &mut r);
        let params = random_params(8, DIMS, &mut r);
        let (h_s, h_c) = embed_views(&g, &params).unwrap();
        let (_, _, grads) = controller_objective(&params, &h_s, &h_c, g.degree(), &cfg).unwrap();
        let err = max_fd_error(&params, &grads.unwrap(), ModelParams::controller_mut, |p| {
            controller_objective(p, &h_s, &h_c, g.degree(), &cfg).unwrap().0
        });
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}
