//! Shared GCN encoder, projection head and information-fusion controller.
//!
//! The encoder has no bias terms; the projector and the controller's MLP do.
//! Filters are single bias-free layers followed by ReLU.

mod checkpoint;
mod fusion;

use std::sync::Arc;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
pub use fusion::{FixedLambda, FusionRegistry, FusionSpec, FusionStrategy, FusionWeights, LearnedController};

use crate::error::{Error, Result};
use crate::tensor::{CompGraph, Matrix, SparseMatrix, Var};

/// Layer widths: embedding `F'`, projection `F_p` and filter `F_g`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelDims {
    pub embedding: usize,
    pub projection: usize,
    pub filter: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self { embedding: 64, projection: 64, filter: 30 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub w1: Matrix,
    pub w2: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectorParams {
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerParams {
    pub filter_s: Matrix,
    pub filter_c: Matrix,
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
}

/// Encoder and projector (representation parameters) plus controller
/// parameters. The two sets are disjoint and optimized in separate phases.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub encoder: EncoderParams,
    pub projector: ProjectorParams,
    pub controller: ControllerParams,
}

fn glorot(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-bound..bound))
}

impl ModelParams {
    pub fn init(n_features: usize, dims: ModelDims, rng: &mut impl Rng) -> Self {
        let ModelDims { embedding: fe, projection: fp, filter: fg } = dims;
        let encoder = EncoderParams { w1: glorot(n_features, fe, rng), w2: glorot(fe, fe, rng) };
        let projector = ProjectorParams {
            w1: glorot(fe, fp, rng),
            b1: Matrix::zeros(1, fp),
            w2: glorot(fp, fp, rng),
            b2: Matrix::zeros(1, fp),
        };
        let controller = ControllerParams {
            filter_s: glorot(fe, fg, rng),
            filter_c: glorot(fe, fg, rng),
            w1: glorot(2 * fg + 1, fg, rng),
            b1: Matrix::zeros(1, fg),
            w2: glorot(fg, 1, rng),
            b2: Matrix::zeros(1, 1),
        };
        Self { encoder, projector, controller }
    }

    pub fn n_features(&self) -> usize {
        self.encoder.w1.rows()
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            embedding: self.encoder.w2.cols(),
            projection: self.projector.w2.cols(),
            filter: self.controller.filter_s.cols(),
        }
    }

    /// Encoder then projector matrices, in a fixed order.
    pub fn representation(&self) -> Vec<(&'static str, &Matrix)> {
        let (e, p) = (&self.encoder, &self.projector);
        vec![
            ("encoder.w1", &e.w1),
            ("encoder.w2", &e.w2),
            ("projector.w1", &p.w1),
            ("projector.b1", &p.b1),
            ("projector.w2", &p.w2),
            ("projector.b2", &p.b2),
        ]
    }

    pub fn representation_mut(&mut self) -> Vec<&mut Matrix> {
        let (e, p) = (&mut self.encoder, &mut self.projector);
        vec![&mut e.w1, &mut e.w2, &mut p.w1, &mut p.b1, &mut p.w2, &mut p.b2]
    }

    pub fn controller(&self) -> Vec<(&'static str, &Matrix)> {
        let c = &self.controller;
        vec![
            ("controller.filter_s", &c.filter_s),
            ("controller.filter_c", &c.filter_c),
            ("controller.w1", &c.w1),
            ("controller.b1", &c.b1),
            ("controller.w2", &c.w2),
            ("controller.b2", &c.b2),
        ]
    }

    pub fn controller_mut(&mut self) -> Vec<&mut Matrix> {
        let c = &mut self.controller;
        vec![&mut c.filter_s, &mut c.filter_c, &mut c.w1, &mut c.b1, &mut c.w2, &mut c.b2]
    }

    pub fn named(&self) -> Vec<(&'static str, &Matrix)> {
        let mut all = self.representation();
        all.extend(self.controller());
        all
    }

    pub fn named_mut(&mut self) -> Vec<(&'static str, &mut Matrix)> {
        let names: Vec<&'static str> = self.named().into_iter().map(|(n, _)| n).collect();
        let Self { encoder: e, projector: p, controller: c } = self;
        let mats = [
            &mut e.w1,
            &mut e.w2,
            &mut p.w1,
            &mut p.b1,
            &mut p.w2,
            &mut p.b2,
            &mut c.filter_s,
            &mut c.filter_c,
            &mut c.w1,
            &mut c.b1,
            &mut c.w2,
            &mut c.b2,
        ];
        names.into_iter().zip(mats).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dims();
        let f = self.n_features();
        let expected: [(usize, usize); 12] = [
            (f, d.embedding),
            (d.embedding, d.embedding),
            (d.embedding, d.projection),
            (1, d.projection),
            (d.projection, d.projection),
            (1, d.projection),
            (d.embedding, d.filter),
            (d.embedding, d.filter),
            (2 * d.filter + 1, d.filter),
            (1, d.filter),
            (d.filter, 1),
            (1, 1),
        ];
        for ((name, m), shape) in self.named().into_iter().zip(expected) {
            if m.shape() != shape {
                return Err(Error::Contract(format!("{name} has shape {:?}, expected {shape:?}", m.shape())));
            }
            if !m.is_finite() {
                return Err(Error::Contract(format!("{name} has non-finite entries")));
            }
        }
        Ok(())
    }
}

/// Encoder weights bound to a graph.
#[derive(Debug, Clone, Copy)]
pub struct EncoderVars {
    pub w1: Var,
    pub w2: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct ProjectorVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct ControllerVars {
    pub filter_s: Var,
    pub filter_c: Var,
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

fn bind(g: &mut CompGraph, m: &Matrix, trainable: bool) -> Var {
    if trainable {
        g.param(m.clone())
    } else {
        g.constant(m.clone())
    }
}

impl EncoderParams {
    pub fn bind(&self, g: &mut CompGraph, trainable: bool) -> EncoderVars {
        EncoderVars { w1: bind(g, &self.w1, trainable), w2: bind(g, &self.w2, trainable) }
    }
}

impl ProjectorParams {
    pub fn bind(&self, g: &mut CompGraph, trainable: bool) -> ProjectorVars {
        ProjectorVars {
            w1: bind(g, &self.w1, trainable),
            b1: bind(g, &self.b1, trainable),
            w2: bind(g, &self.w2, trainable),
            b2: bind(g, &self.b2, trainable),
        }
    }
}

impl ControllerParams {
    pub fn bind(&self, g: &mut CompGraph, trainable: bool) -> ControllerVars {
        ControllerVars {
            filter_s: bind(g, &self.filter_s, trainable),
            filter_c: bind(g, &self.filter_c, trainable),
            w1: bind(g, &self.w1, trainable),
            b1: bind(g, &self.b1, trainable),
            w2: bind(g, &self.w2, trainable),
            b2: bind(g, &self.b2, trainable),
        }
    }
}

/// Inverted dropout on encoder hidden activations.
pub struct Dropout<'a> {
    pub rate: f64,
    pub rng: &'a mut dyn RngCore,
}

/// Two-layer GCN. `adj = None` means the identity adjacency, which makes
/// the encoder a per-node MLP.
pub fn encode(
    g: &mut CompGraph,
    enc: &EncoderVars,
    x: Var,
    adj: Option<&Arc<SparseMatrix>>,
    dropout: Option<&mut Dropout<'_>>,
) -> Result<Var> {
    let mut h = g.matmul(x, enc.w1)?;
    if let Some(a) = adj {
        h = g.spmm(Arc::clone(a), h)?;
    }
    h = g.relu(h);
    if let Some(d) = dropout {
        if d.rate > 0.0 {
            let (r, c) = g.shape(h);
            let keep = 1.0 / (1.0 - d.rate);
            let mask = Matrix::from_fn(r, c, |_, _| if d.rng.gen::<f64>() >= d.rate { keep } else { 0.0 });
            let mask = g.constant(mask);
            h = g.mul(h, mask)?;
        }
    }
    let mut out = g.matmul(h, enc.w2)?;
    if let Some(a) = adj {
        out = g.spmm(Arc::clone(a), out)?;
    }
    Ok(out)
}

/// `relu(h P1 + b1) P2 + b2`.
pub fn project_var(g: &mut CompGraph, p: &ProjectorVars, h: Var) -> Result<Var> {
    let z = g.matmul(h, p.w1)?;
    let z = g.add(z, p.b1)?;
    let z = g.relu(z);
    let z = g.matmul(z, p.w2)?;
    Ok(g.add(z, p.b2)?)
}

/// Per-node fusion weight `sigmoid(MLP([relu(h_s F_s) | relu(h_c F_c) | d]))`, `n x 1`.
pub fn controller_var(g: &mut CompGraph, c: &ControllerVars, h_s: Var, h_c: Var, degree: Var) -> Result<Var> {
    let ws = g.matmul(h_s, c.filter_s)?;
    let ws = g.relu(ws);
    let wc = g.matmul(h_c, c.filter_c)?;
    let wc = g.relu(wc);
    let input = g.concat_cols(&[ws, wc, degree])?;
    let hidden = g.matmul(input, c.w1)?;
    let hidden = g.add(hidden, c.b1)?;
    let hidden = g.relu(hidden);
    let out = g.matmul(hidden, c.w2)?;
    let out = g.add(out, c.b2)?;
    Ok(g.sigmoid(out))
}

/// `h_s + lambda * h_c`, row-wise.
pub fn fuse_var(g: &mut CompGraph, h_s: Var, h_c: Var, lambda: Var) -> Result<Var> {
    let scaled = g.scale_rows(h_c, lambda)?;
    Ok(g.add(h_s, scaled)?)
}

/// The six encoder outputs of one training step: semantic, contextual and
/// fused, each for the original and the augmented input.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub h_s: Matrix,
    pub h_s_aug: Matrix,
    pub h_c: Matrix,
    pub h_c_aug: Matrix,
    pub h_f: Matrix,
    pub h_f_aug: Matrix,
}

#[derive(Debug, Clone, Copy)]
pub struct EmbeddingVars {
    pub h_s: Var,
    pub h_s_aug: Var,
    pub h_c: Var,
    pub h_c_aug: Var,
    pub h_f: Var,
    pub h_f_aug: Var,
}

impl EmbeddingSet {
    /// Binds every embedding as a constant.
    pub fn bind(&self, g: &mut CompGraph) -> EmbeddingVars {
        EmbeddingVars {
            h_s: g.constant(self.h_s.clone()),
            h_s_aug: g.constant(self.h_s_aug.clone()),
            h_c: g.constant(self.h_c.clone()),
            h_c_aug: g.constant(self.h_c_aug.clone()),
            h_f: g.constant(self.h_f.clone()),
            h_f_aug: g.constant(self.h_f_aug.clone()),
        }
    }
}

/// `log(1 + d)` standardized to zero mean and unit variance, as an `n x 1`
/// column. A constant degree vector maps to zeros.
pub fn degree_feature(degree: &[usize]) -> Matrix {
    let n = degree.len().max(1) as f64;
    let logs: Vec<f64> = degree.iter().map(|&d| (d as f64).ln_1p()).collect();
    let mean = logs.iter().sum::<f64>() / n;
    let var = logs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    let values: Vec<f64> =
        if std < 1e-12 { vec![0.0; logs.len()] } else { logs.iter().map(|v| (v - mean) / std).collect() };
    Matrix::column(&values)
}

fn check_input(params: &ModelParams, x: &Matrix) -> Result<()> {
    if x.cols() != params.n_features() {
        return Err(Error::Contract(format!(
            "input has {} features, encoder expects {}",
            x.cols(),
            params.n_features()
        )));
    }
    Ok(())
}

/// Semantic view: the encoder with identity adjacency.
pub fn encode_semantic(params: &ModelParams, x: &Matrix) -> Result<Matrix> {
    check_input(params, x)?;
    let mut g = CompGraph::new();
    let enc = params.encoder.bind(&mut g, false);
    let xv = g.constant(x.clone());
    let h = encode(&mut g, &enc, xv, None, None)?;
    Ok(g.value(h).clone())
}

/// Contextual view: the encoder over the normalized adjacency.
pub fn encode_contextual(params: &ModelParams, x: &Matrix, adj_hat: &Arc<SparseMatrix>) -> Result<Matrix> {
    check_input(params, x)?;
    let mut g = CompGraph::new();
    let enc = params.encoder.bind(&mut g, false);
    let xv = g.constant(x.clone());
    let h = encode(&mut g, &enc, xv, Some(adj_hat), None)?;
    Ok(g.value(h).clone())
}

pub fn project(params: &ModelParams, h: &Matrix) -> Result<Matrix> {
    let mut g = CompGraph::new();
    let p = params.projector.bind(&mut g, false);
    let hv = g.constant(h.clone());
    let z = project_var(&mut g, &p, hv)?;
    Ok(g.value(z).clone())
}

pub fn controller_lambda(params: &ModelParams, h_s: &Matrix, h_c: &Matrix, degree: &[usize]) -> Result<FusionWeights> {
    if degree.len() != h_s.rows() {
        return Err(Error::Contract(format!("{} degrees for {} nodes", degree.len(), h_s.rows())));
    }
    let mut g = CompGraph::new();
    let c = params.controller.bind(&mut g, false);
    let hs = g.constant(h_s.clone());
    let hc = g.constant(h_c.clone());
    let d = g.constant(degree_feature(degree));
    let lambda = controller_var(&mut g, &c, hs, hc, d)?;
    FusionWeights::new(g.value(lambda).data().to_vec())
}

pub fn fuse(h_s: &Matrix, h_c: &Matrix, lambda: &FusionWeights) -> Result<Matrix> {
    if h_s.shape() != h_c.shape() || lambda.len() != h_s.rows() {
        return Err(Error::Contract(format!(
            "fuse: h_s {:?}, h_c {:?}, {} weights",
            h_s.shape(),
            h_c.shape(),
            lambda.len()
        )));
    }
    let l = lambda.values();
    Ok(Matrix::from_fn(h_s.rows(), h_s.cols(), |i, j| h_s.get(i, j) + l[i] * h_c.get(i, j)))
}
