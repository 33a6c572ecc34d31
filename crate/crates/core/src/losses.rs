//! NT-Xent view contrast, the combined contrast objective and the
//! controller objective.
//!
//! For anchor `z_i` with positive `z~_i`, using row cosine `s`:
//!
//! ```text
//! l(z_i, z~_i) = -log( e^{s(z_i,z~_i)/tau}
//!                      / ( sum_{j != i} e^{s(z_i,z_j)/tau} + sum_j e^{s(z_i,z~_j)/tau} ) )
//! ```
//!
//! The positive pair is part of the second sum. A view loss averages
//! `l(z_i, z~_i) + l(z~_i, z_i)` over `2N` anchors.

use std::cell::RefCell;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{project_var, EmbeddingSet, EmbeddingVars, FusionWeights, ModelParams, ProjectorVars};
use crate::tensor::{
    cosine_rows, exp_shifted_in_place, gemm, gram_upper, lane_sum, log_sum_exp, row_cosine, sym_upper_matmul,
    CompGraph, CustomOp, Matrix, TensorError, Var, ZERO_NORM_EPS,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContrastConfig {
    pub tau: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl Default for ContrastConfig {
    fn default() -> Self {
        Self { tau: 0.5, beta1: 0.01, beta2: 0.1 }
    }
}

impl ContrastConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::Contract(format!("tau = {} must be positive", self.tau)));
        }
        if !(self.beta1 >= 0.0 && self.beta2 >= 0.0) {
            return Err(Error::Contract("beta1 and beta2 must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerConfig {
    pub alpha1: f64,
    pub alpha2: f64,
    pub epsilon: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self { alpha1: 100.0, alpha2: 1.0, epsilon: 0.5 }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::Contract(format!("epsilon = {} outside [0, 1]", self.epsilon)));
        }
        if !(self.alpha1 >= 0.0 && self.alpha2 >= 0.0) {
            return Err(Error::Contract("alpha1 and alpha2 must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Which of the three view losses enter the contrast objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContrastTerms {
    pub semantic: bool,
    pub contextual: bool,
    pub fusion: bool,
}

impl Default for ContrastTerms {
    fn default() -> Self {
        Self { semantic: true, contextual: true, fusion: true }
    }
}

impl ContrastTerms {
    /// Weights `(1, beta1, beta2)` with disabled terms zeroed.
    pub fn weights(&self, cfg: &ContrastConfig) -> [f64; 3] {
        [
            if self.semantic { 1.0 } else { 0.0 },
            if self.contextual { cfg.beta1 } else { 0.0 },
            if self.fusion { cfg.beta2 } else { 0.0 },
        ]
    }
}

fn check_pair(z: &Matrix, z_aug: &Matrix) -> Result<()> {
    if z.shape() != z_aug.shape() {
        return Err(TensorError::Shape { op: "ntxent", lhs: z.shape(), rhs: z_aug.shape() }.into());
    }
    if z.rows() < 2 {
        return Err(Error::Contract(format!("NT-Xent needs at least 2 nodes, found {}", z.rows())));
    }
    Ok(())
}

/// Pairwise loss for anchor row `i` of `z` against positive row `i` of `z_aug`.
pub fn ntxent_pair_loss(z: &Matrix, z_aug: &Matrix, i: usize, tau: f64) -> Result<f64> {
    check_pair(z, z_aug)?;
    if i >= z.rows() {
        return Err(Error::Contract(format!("anchor {i} outside {} nodes", z.rows())));
    }
    let anchor = z.row(i);
    let mut logits = Vec::with_capacity(2 * z.rows() - 1);
    for j in 0..z.rows() {
        if j != i {
            logits.push(row_cosine(anchor, z.row(j)) / tau);
        }
        logits.push(row_cosine(anchor, z_aug.row(j)) / tau);
    }
    let positive = row_cosine(anchor, z_aug.row(i)) / tau;
    Ok(log_sum_exp(&logits) - positive)
}

fn normalize_rows(z: &Matrix) -> (Matrix, Vec<f64>) {
    let mut u = z.clone();
    let mut norms = Vec::with_capacity(z.rows());
    for i in 0..z.rows() {
        let row = u.row_mut(i);
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n < ZERO_NORM_EPS {
            row.iter_mut().for_each(|v| *v = 0.0);
        } else {
            row.iter_mut().for_each(|v| *v /= n);
        }
        norms.push(n);
    }
    (u, norms)
}

/// Backprop `du` through `u = z / |z|`.
fn normalize_backward(u: &Matrix, norms: &[f64], du: &Matrix) -> Matrix {
    let mut dz = Matrix::zeros(u.rows(), u.cols());
    for i in 0..u.rows() {
        if norms[i] < ZERO_NORM_EPS {
            continue;
        }
        let (ur, dur) = (u.row(i), du.row(i));
        let dot: f64 = ur.iter().zip(dur).map(|(a, b)| a * b).sum();
        for ((o, a), b) in dz.row_mut(i).iter_mut().zip(ur).zip(dur) {
            *o = (b - a * dot) / norms[i];
        }
    }
    dz
}

/// Loss value and, optionally, gradients with respect to `z` and `z_aug`.
struct ViewLossOutput {
    value: f64,
    grads: Option<(Matrix, Matrix)>,
}

thread_local! {
    static SCRATCH: RefCell<Vec<Vec<f64>>> = const { RefCell::new(Vec::new()) };
}

/// An `n x n` matrix with unspecified entries. Large buffers are cached per
/// thread, since first-touch page faults on fresh allocations cost as much
/// as the products written into them.
fn scratch_square(n: usize) -> Matrix {
    let len = n * n;
    let cached = SCRATCH.with(|s| {
        let mut s = s.borrow_mut();
        s.iter().position(|b| b.len() == len).map(|k| s.swap_remove(k))
    });
    Matrix::from_vec(n, n, cached.unwrap_or_else(|| vec![0.0; len])).expect("square buffer")
}

fn recycle(m: Matrix) {
    SCRATCH.with(|s| {
        let mut s = s.borrow_mut();
        if s.len() >= 3 {
            s.remove(0);
        }
        s.push(m.into_data());
    });
}

/// Shifted exponentials of one row of a Gram matrix above the diagonal.
/// Adds each entry to both endpoints' denominators.
fn exp_upper_row(row: &mut [f64], i: usize, inv_tau: f64, d: &mut [f64]) {
    let above = &mut row[i + 1..];
    exp_shifted_in_place(above, inv_tau);
    d[i] += lane_sum(above);
    for (dj, e) in d[i + 1..].iter_mut().zip(above.iter()) {
        *dj += e;
    }
}

fn view_loss_kernel(z: &Matrix, z_aug: &Matrix, tau: f64, want_grad: bool) -> Result<ViewLossOutput> {
    check_pair(z, z_aug)?;
    let n = z.rows();
    let (u, nu) = normalize_rows(z);
    let (v, nv) = normalize_rows(z_aug);

    // Cosines are at most 1, so shifting every logit by 1/tau keeps all
    // exponentials in (0, 1]. Within-view blocks are symmetric; only their
    // upper triangles are formed until the gradient needs them whole.
    let inv_tau = 1.0 / tau;
    let mut e_uv = scratch_square(n);
    let mut e_uu = scratch_square(n);
    let mut e_vv = scratch_square(n);
    gemm(1.0, &u, false, &v, true, 0.0, &mut e_uv);
    gram_upper(&u, &mut e_uu);
    gram_upper(&v, &mut e_vv);
    let pos: Vec<f64> = (0..n).map(|i| e_uv.get(i, i)).collect();

    let mut d_u = vec![0.0; n];
    let mut d_v = vec![0.0; n];
    for i in 0..n {
        exp_upper_row(e_uu.row_mut(i), i, inv_tau, &mut d_u);
        exp_upper_row(e_vv.row_mut(i), i, inv_tau, &mut d_v);
        let row = e_uv.row_mut(i);
        exp_shifted_in_place(row, inv_tau);
        d_u[i] += lane_sum(row);
        for (dv, e) in d_v.iter_mut().zip(row.iter()) {
            *dv += e;
        }
    }

    let underflow = d_u.iter().chain(&d_v).any(|&d| !(d > 1e-290));
    let out = if underflow {
        view_loss_log_space(&u, &nu, &v, &nv, tau, want_grad)
    } else {
        let mut total = 0.0;
        for i in 0..n {
            total += -2.0 * (pos[i] - 1.0) * inv_tau + d_u[i].ln() + d_v[i].ln();
        }
        let value = total / (2 * n) as f64;
        let grads = want_grad.then(|| {
            // dL/dS per block. Each within-view similarity sits in two
            // anchors' denominators.
            let c = inv_tau / (2 * n) as f64;
            let inv_du: Vec<f64> = d_u.iter().map(|d| 1.0 / d).collect();
            let inv_dv: Vec<f64> = d_v.iter().map(|d| 1.0 / d).collect();
            for i in 0..n {
                for (m, inv) in [(&mut e_uu, &inv_du), (&mut e_vv, &inv_dv)] {
                    let row = &mut m.row_mut(i)[i..];
                    row[0] = 0.0;
                    for (val, inv_j) in row[1..].iter_mut().zip(&inv[i + 1..]) {
                        *val *= c * (inv[i] + inv_j);
                    }
                }
                let row = e_uv.row_mut(i);
                for (val, inv_j) in row.iter_mut().zip(&inv_dv) {
                    *val *= c * (inv_du[i] + inv_j);
                }
                row[i] -= 2.0 * c;
            }
            let (du, dv) = similarity_backward(&e_uu, &e_vv, &e_uv, &u, &v);
            (normalize_backward(&u, &nu, &du), normalize_backward(&v, &nv, &dv))
        });
        ViewLossOutput { value, grads }
    };
    recycle(e_uv);
    recycle(e_uu);
    recycle(e_vv);
    Ok(out)
}

/// Given `dL/dS` for `S_uu = U U^T` and `S_vv` (symmetric, read from their
/// upper triangles) and for `S_uv = U V^T`, returns `dL/dU` and `dL/dV`.
fn similarity_backward(g_uu: &Matrix, g_vv: &Matrix, g_uv: &Matrix, u: &Matrix, v: &Matrix) -> (Matrix, Matrix) {
    let mut du = sym_upper_matmul(g_uu, u);
    gemm(1.0, g_uv, false, v, false, 1.0, &mut du);
    let mut dv = sym_upper_matmul(g_vv, v);
    // (U^T G_uv)^T reads the large matrix row-wise, unlike G_uv^T U.
    let mut dv_t = Matrix::zeros(u.cols(), u.rows());
    gemm(1.0, u, true, g_uv, false, 0.0, &mut dv_t);
    for i in 0..dv.rows() {
        for (j, val) in dv.row_mut(i).iter_mut().enumerate() {
            *val += dv_t.get(j, i);
        }
    }
    (du, dv)
}

/// Slow path for temperatures small enough that shifted exponentials
/// underflow: every anchor is normalized by its own log-sum-exp.
fn view_loss_log_space(u: &Matrix, nu: &[f64], v: &Matrix, nv: &[f64], tau: f64, want_grad: bool) -> ViewLossOutput {
    let s_uu = u.matmul(&u.transpose()).expect("square Gram");
    let s_vv = v.matmul(&v.transpose()).expect("square Gram");
    let s_uv = u.matmul(&v.transpose()).expect("cross Gram");
    let n = u.rows();
    let c = 1.0 / (tau * (2 * n) as f64);
    let mut g_uu = Matrix::zeros(n, n);
    let mut g_vv = Matrix::zeros(n, n);
    let mut g_uv = Matrix::zeros(n, n);
    let mut total = 0.0;
    let mut logits = Vec::with_capacity(2 * n);
    for i in 0..n {
        // Anchor from the first view.
        logits.clear();
        logits.extend((0..n).filter(|&j| j != i).map(|j| s_uu.get(i, j) / tau));
        logits.extend((0..n).map(|j| s_uv.get(i, j) / tau));
        let lse = log_sum_exp(&logits);
        total += lse - s_uv.get(i, i) / tau;
        for j in 0..n {
            if j != i {
                let w = c * (s_uu.get(i, j) / tau - lse).exp();
                g_uu.set(i, j, g_uu.get(i, j) + w);
                g_uu.set(j, i, g_uu.get(j, i) + w);
            }
            g_uv.set(i, j, g_uv.get(i, j) + c * (s_uv.get(i, j) / tau - lse).exp());
        }
        g_uv.set(i, i, g_uv.get(i, i) - c);

        // Anchor from the second view.
        logits.clear();
        logits.extend((0..n).filter(|&j| j != i).map(|j| s_vv.get(i, j) / tau));
        logits.extend((0..n).map(|j| s_uv.get(j, i) / tau));
        let lse = log_sum_exp(&logits);
        total += lse - s_uv.get(i, i) / tau;
        for j in 0..n {
            if j != i {
                let w = c * (s_vv.get(i, j) / tau - lse).exp();
                g_vv.set(i, j, g_vv.get(i, j) + w);
                g_vv.set(j, i, g_vv.get(j, i) + w);
            }
            g_uv.set(j, i, g_uv.get(j, i) + c * (s_uv.get(j, i) / tau - lse).exp());
        }
        g_uv.set(i, i, g_uv.get(i, i) - c);
    }
    let value = total / (2 * n) as f64;
    let grads = want_grad.then(|| {
        let (du, dv) = similarity_backward(&g_uu, &g_vv, &g_uv, u, v);
        (normalize_backward(u, nu, &du), normalize_backward(v, nv, &dv))
    });
    ViewLossOutput { value, grads }
}

/// Symmetrized view loss over `2N` anchors.
pub fn view_loss(z: &Matrix, z_aug: &Matrix, tau: f64) -> Result<f64> {
    Ok(view_loss_kernel(z, z_aug, tau, false)?.value)
}

/// Records the view loss on `g`. Gradients are computed during the forward
/// pass and scaled by the incoming gradient on the backward sweep.
pub fn view_loss_var(g: &mut CompGraph, z: Var, z_aug: Var, tau: f64) -> Result<Var> {
    let want_grad = g.requires_grad(z) || g.requires_grad(z_aug);
    let out = view_loss_kernel(g.value(z), g.value(z_aug), tau, want_grad)?;
    Ok(g.custom(&[z, z_aug], Matrix::scalar(out.value), Box::new(ViewLossGrad { grads: out.grads })))
}

struct ViewLossGrad {
    grads: Option<(Matrix, Matrix)>,
}

impl CustomOp for ViewLossGrad {
    fn name(&self) -> &'static str {
        "ntxent_view_loss"
    }

    fn backward(&self, _: &[&Matrix], _: &Matrix, grad_output: &Matrix) -> Result<Vec<Option<Matrix>>, TensorError> {
        let (gz, gza) =
            self.grads.as_ref().ok_or_else(|| TensorError::Contract("view loss recorded without gradients".into()))?;
        let s = grad_output.item()?;
        Ok(vec![Some(gz.map(|x| x * s)), Some(gza.map(|x| x * s))])
    }
}

/// `w_s L_s + w_c L_c + w_f L_f` over projected embeddings. Zero-weight
/// terms are not evaluated.
pub fn contrast_loss_var(
    g: &mut CompGraph,
    emb: &EmbeddingVars,
    proj: &ProjectorVars,
    cfg: &ContrastConfig,
    terms: ContrastTerms,
) -> Result<Var> {
    cfg.validate()?;
    let weights = terms.weights(cfg);
    let pairs = [(emb.h_s, emb.h_s_aug), (emb.h_c, emb.h_c_aug), (emb.h_f, emb.h_f_aug)];
    let mut total: Option<Var> = None;
    for ((a, b), w) in pairs.into_iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        let za = project_var(g, proj, a)?;
        let zb = project_var(g, proj, b)?;
        let l = view_loss_var(g, za, zb, cfg.tau)?;
        let l = if w == 1.0 { l } else { g.scale(l, w) };
        total = Some(match total {
            Some(t) => g.add(t, l)?,
            None => l,
        });
    }
    total.ok_or_else(|| Error::Contract("every contrast term is disabled or has zero weight".into()))
}

/// Value of the contrast objective for fixed embeddings.
pub fn contrast_loss(
    emb: &EmbeddingSet,
    params: &ModelParams,
    cfg: &ContrastConfig,
    terms: ContrastTerms,
) -> Result<f64> {
    let mut g = CompGraph::new();
    let vars = emb.bind(&mut g);
    let proj = params.projector.bind(&mut g, false);
    let l = contrast_loss_var(&mut g, &vars, &proj, cfg, terms)?;
    Ok(g.value(l).item()?)
}

/// `sum_i lambda_i s(h_s_i, h_c_i) + alpha1 |lambda|_2 + alpha2 |mean(lambda) - epsilon|`.
///
/// `h_s` and `h_c` should be constants on `g`.
pub fn controller_loss_var(g: &mut CompGraph, lambda: Var, h_s: Var, h_c: Var, cfg: &ControllerConfig) -> Result<Var> {
    cfg.validate()?;
    let sim = g.cosine_rows(h_s, h_c)?;
    let weighted = g.mul(lambda, sim)?;
    let similarity = g.sum(weighted);
    let norm = g.norm(lambda);
    let norm = g.scale(norm, cfg.alpha1);
    let mean = g.mean(lambda);
    let gap = g.add_scalar(mean, -cfg.epsilon);
    let gap = g.abs(gap);
    let gap = g.scale(gap, cfg.alpha2);
    let partial = g.add(similarity, norm)?;
    Ok(g.add(partial, gap)?)
}

pub fn controller_loss(lambda: &FusionWeights, h_s: &Matrix, h_c: &Matrix, cfg: &ControllerConfig) -> Result<f64> {
    if lambda.len() != h_s.rows() {
        return Err(Error::Contract(format!("{} weights for {} nodes", lambda.len(), h_s.rows())));
    }
    cosine_rows(h_s, h_c)?;
    let mut g = CompGraph::new();
    let l = g.constant(lambda.as_column());
    let hs = g.constant(h_s.clone());
    let hc = g.constant(h_c.clone());
    let out = controller_loss_var(&mut g, l, hs, hc, cfg)?;
    Ok(g.value(out).item()?)
}
