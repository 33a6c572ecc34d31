//! Alternating optimization: one contrast step on the encoder and projector,
//! then one controller step, per epoch.

use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{apply_feature_mask, draw_feature_mask, drop_edges, AugmentConfig};
use crate::error::{Error, Phase, Result};
use crate::graph::{normalized_adjacency_sparse, Graph};
use crate::losses::{contrast_loss_var, controller_loss_var, ContrastConfig, ContrastTerms, ControllerConfig};
use crate::model::{
    controller_var, degree_feature, encode, encode_contextual, encode_semantic, fuse, fuse_var, Dropout, EmbeddingVars,
    FusionRegistry, FusionSpec, FusionStrategy, FusionWeights, ModelDims, ModelParams,
};
use crate::optim::{Adam, AdamState};
use crate::tensor::{CompGraph, Matrix, SparseMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Encoder and projector learning rate.
    pub lr: f64,
    pub lr_controller: f64,
    pub epochs: usize,
    /// Stop after this many epochs without a new best contrast loss; 0 disables.
    pub patience: usize,
    pub dropout: f64,
    pub seed: u64,
    pub contrast: ContrastConfig,
    pub controller: ControllerConfig,
    pub augment: AugmentConfig,
    pub dims: ModelDims,
    pub terms: ContrastTerms,
    pub fusion: FusionSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            lr_controller: 0.001,
            epochs: 500,
            patience: 50,
            dropout: 0.2,
            seed: 0,
            contrast: ContrastConfig::default(),
            controller: ControllerConfig::default(),
            augment: AugmentConfig::default(),
            dims: ModelDims::default(),
            terms: ContrastTerms::default(),
            fusion: FusionSpec::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr_controller > 0.0) {
            return Err(Error::Contract("learning rates must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Contract("epochs must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Contract(format!("dropout = {} outside [0, 1)", self.dropout)));
        }
        let d = self.dims;
        if d.embedding == 0 || d.projection == 0 || d.filter == 0 {
            return Err(Error::Contract("layer widths must be positive".into()));
        }
        self.contrast.validate()?;
        self.controller.validate()?;
        self.augment.validate()?;
        if self.terms.weights(&self.contrast).iter().all(|&w| w == 0.0) {
            return Err(Error::Contract("every contrast term is disabled or has zero weight".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub contrast_loss: f64,
    /// Absent when the fusion weights are not learned.
    pub controller_loss: Option<f64>,
    pub lambda_mean: f64,
    pub lambda_std: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub records: Vec<EpochRecord>,
    pub params: ModelParams,
    pub fusion: FusionSpec,
    pub stopped_early: bool,
}

impl TrainReport {
    /// One JSON object per epoch. Without timing the output depends only on
    /// the graph and the config.
    pub fn to_jsonl(&self, include_timing: bool) -> String {
        let mut out = String::new();
        for r in &self.records {
            let mut r = r.clone();
            if !include_timing {
                r.seconds = None;
            }
            out.push_str(&serde_json::to_string(&r).expect("records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>, include_timing: bool) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_jsonl(include_timing)).map_err(|e| Error::io(path, e))
    }

    pub fn mean_epoch_seconds(&self) -> Option<f64> {
        let secs: Vec<f64> = self.records.iter().filter_map(|r| r.seconds).collect();
        (!secs.is_empty()).then(|| secs.iter().sum::<f64>() / secs.len() as f64)
    }
}

/// Hooks into the training loop.
pub trait TrainObserver {
    fn before_epoch(&mut self, _epoch: usize, _params: &ModelParams) {}
    fn after_phase(&mut self, _epoch: usize, _phase: Phase, _params: &ModelParams) {}
}

struct NoObserver;

impl TrainObserver for NoObserver {}

/// Adam with its moment state for one parameter group.
pub struct PhaseOptimizer {
    pub adam: Adam,
    pub state: AdamState,
}

impl PhaseOptimizer {
    pub fn new<'a>(lr: f64, shapes: impl IntoIterator<Item = &'a Matrix>) -> Self {
        Self { adam: Adam::new(lr), state: AdamState::for_shapes(shapes.into_iter().map(|m| m.shape())) }
    }
}

/// Controller objective against detached view embeddings: its value, the
/// weights it evaluates, and the gradient of every controller parameter in
/// [`ModelParams::controller`] order (`None` when the value is not finite).
pub fn controller_objective(
    params: &ModelParams,
    h_s: &Matrix,
    h_c: &Matrix,
    degree: &[usize],
    cfg: &ControllerConfig,
) -> Result<(f64, FusionWeights, Option<Vec<Matrix>>)> {
    let mut g = CompGraph::new();
    let c = params.controller.bind(&mut g, true);
    let hs = g.constant(h_s.clone());
    let hc = g.constant(h_c.clone());
    let d = g.constant(degree_feature(degree));
    let lambda = controller_var(&mut g, &c, hs, hc, d)?;
    let loss = controller_loss_var(&mut g, lambda, hs, hc, cfg)?;
    let value = g.value(loss).item()?;
    let weights = FusionWeights::new(g.value(lambda).data().to_vec())?;
    if !value.is_finite() {
        return Ok((value, weights, None));
    }
    let grads = g.backward(loss)?;
    let vars = [c.filter_s, c.filter_c, c.w1, c.b1, c.w2, c.b2];
    let grads = vars.iter().zip(params.controller()).map(|(&v, (_, p))| grads.get_or_zeros(v, p.shape())).collect();
    Ok((value, weights, Some(grads)))
}

/// One controller step against detached view embeddings. Returns the loss
/// and the weights evaluated before the step.
pub fn controller_step(
    params: &mut ModelParams,
    opt: &mut PhaseOptimizer,
    h_s: &Matrix,
    h_c: &Matrix,
    degree: &[usize],
    cfg: &ControllerConfig,
) -> Result<(f64, FusionWeights)> {
    let (value, weights, grads) = controller_objective(params, h_s, h_c, degree, cfg)?;
    if let Some(grads) = grads {
        opt.adam.step(&mut params.controller_mut(), &grads, &mut opt.state)?;
    }
    Ok((value, weights))
}

/// One draw of the perturbed inputs for a contrast phase, with the fusion
/// weights held constant.
pub struct ContrastInputs<'a> {
    pub x: &'a Matrix,
    /// Feature-masked copy of `x`.
    pub x_aug: Matrix,
    pub adj: &'a Arc<SparseMatrix>,
    /// Normalized adjacency of the edge-dropped graph.
    pub adj_aug: Arc<SparseMatrix>,
    pub lambda: &'a FusionWeights,
}

fn contrast_graph(
    params: &ModelParams,
    inputs: ContrastInputs<'_>,
    contrast: &ContrastConfig,
    terms: ContrastTerms,
    mut dropout: Option<Dropout<'_>>,
) -> Result<(f64, Option<Vec<Matrix>>)> {
    let mut g = CompGraph::new();
    let enc = params.encoder.bind(&mut g, true);
    let proj = params.projector.bind(&mut g, true);
    let x = g.constant(inputs.x.clone());
    let x_aug = g.constant(inputs.x_aug);
    let h_s = encode(&mut g, &enc, x, None, dropout.as_mut())?;
    let h_s_aug = encode(&mut g, &enc, x_aug, None, dropout.as_mut())?;
    let h_c = encode(&mut g, &enc, x, Some(inputs.adj), dropout.as_mut())?;
    let h_c_aug = encode(&mut g, &enc, x, Some(&inputs.adj_aug), dropout.as_mut())?;
    let lambda = g.constant(inputs.lambda.as_column());
    let h_f = fuse_var(&mut g, h_s, h_c, lambda)?;
    let h_f_aug = fuse_var(&mut g, h_s_aug, h_c_aug, lambda)?;
    let emb = EmbeddingVars { h_s, h_s_aug, h_c, h_c_aug, h_f, h_f_aug };
    let loss = contrast_loss_var(&mut g, &emb, &proj, contrast, terms)?;
    let value = g.value(loss).item()?;
    if !value.is_finite() {
        return Ok((value, None));
    }
    let grads = g.backward(loss)?;
    let vars = [enc.w1, enc.w2, proj.w1, proj.b1, proj.w2, proj.b2];
    let grads = vars.iter().zip(params.representation()).map(|(&v, (_, p))| grads.get_or_zeros(v, p.shape())).collect();
    Ok((value, Some(grads)))
}

/// Contrast objective without dropout for fixed perturbed inputs: its value
/// and the gradient of every encoder and projector parameter in
/// [`ModelParams::representation`] order (`None` when the value is not finite).
pub fn contrast_objective(
    params: &ModelParams,
    inputs: ContrastInputs<'_>,
    contrast: &ContrastConfig,
    terms: ContrastTerms,
) -> Result<(f64, Option<Vec<Matrix>>)> {
    contrast_graph(params, inputs, contrast, terms, None)
}

fn contrast_step(
    params: &mut ModelParams,
    opt: &mut PhaseOptimizer,
    inputs: ContrastInputs<'_>,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let dropout = Dropout { rate: cfg.dropout, rng };
    let (value, grads) = contrast_graph(params, inputs, &cfg.contrast, cfg.terms, Some(dropout))?;
    if let Some(grads) = grads {
        opt.adam.step(&mut params.representation_mut(), &grads, &mut opt.state)?;
    }
    Ok(value)
}

pub fn train(g: &Graph, cfg: &TrainConfig) -> Result<TrainReport> {
    train_with_observer(g, cfg, &mut NoObserver)
}

pub fn train_with_observer(g: &Graph, cfg: &TrainConfig, observer: &mut dyn TrainObserver) -> Result<TrainReport> {
    cfg.validate()?;
    if g.n_nodes() < 2 {
        return Err(Error::Contract("training needs at least 2 nodes".into()));
    }
    let strategy = FusionRegistry::builtin().create(&cfg.fusion)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = ModelParams::init(g.n_features(), cfg.dims, &mut rng);
    let mut rep_opt = PhaseOptimizer::new(cfg.lr, params.representation().into_iter().map(|(_, m)| m));
    let mut ctl_opt = PhaseOptimizer::new(cfg.lr_controller, params.controller().into_iter().map(|(_, m)| m));

    let x = g.features();
    let adj = Arc::new(normalized_adjacency_sparse(g, true));
    let mut views: Option<(Matrix, Matrix)> = None;
    let mut records = Vec::with_capacity(cfg.epochs);
    let mut best = f64::INFINITY;
    let mut since_best = 0;
    let mut stopped_early = false;

    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        observer.before_epoch(epoch, &params);

        let keep = draw_feature_mask(g.n_features(), cfg.augment.p_s, &mut rng);
        let x_aug = apply_feature_mask(x, &keep);
        let adj_aug = Arc::new(normalized_adjacency_sparse(&drop_edges(g, cfg.augment.p_c, &mut rng), true));

        let (h_s, h_c) = match views.take() {
            Some(v) => v,
            None => (encode_semantic(&params, x)?, encode_contextual(&params, x, &adj)?),
        };
        let lambda = strategy.weights(&params, &h_s, &h_c, g.degree())?;

        let inputs = ContrastInputs { x, x_aug, adj: &adj, adj_aug, lambda: &lambda };
        let contrast = contrast_step(&mut params, &mut rep_opt, inputs, cfg, &mut rng)?;
        if !contrast.is_finite() {
            return Err(Error::NonFinite { epoch, phase: Phase::Contrast });
        }
        observer.after_phase(epoch, Phase::Contrast, &params);

        let h_s = encode_semantic(&params, x)?;
        let h_c = encode_contextual(&params, x, &adj)?;
        let controller = if strategy.is_learned() {
            let (loss, _) = controller_step(&mut params, &mut ctl_opt, &h_s, &h_c, g.degree(), &cfg.controller)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite { epoch, phase: Phase::Controller });
            }
            Some(loss)
        } else {
            None
        };
        observer.after_phase(epoch, Phase::Controller, &params);
        views = Some((h_s, h_c));

        records.push(EpochRecord {
            epoch,
            contrast_loss: contrast,
            controller_loss: controller,
            lambda_mean: lambda.mean(),
            lambda_std: lambda.std(),
            seconds: Some(start.elapsed().as_secs_f64()),
        });
        log::debug!("epoch {epoch}: contrast {contrast:.6} lambda {:.4}", lambda.mean());

        if contrast < best {
            best = contrast;
            since_best = 0;
        } else {
            since_best += 1;
            if cfg.patience > 0 && since_best >= cfg.patience {
                stopped_early = epoch < cfg.epochs;
                break;
            }
        }
    }
    Ok(TrainReport { records, params, fusion: cfg.fusion.clone(), stopped_early })
}

/// Fused inference embedding `h_s + lambda * h_c` on the unperturbed graph.
pub fn embed(g: &Graph, params: &ModelParams, strategy: &dyn FusionStrategy) -> Result<Matrix> {
    let (h_s, h_c) = embed_views(g, params)?;
    let lambda = strategy.weights(params, &h_s, &h_c, g.degree())?;
    fuse(&h_s, &h_c, &lambda)
}

/// Semantic and contextual inference embeddings.
pub fn embed_views(g: &Graph, params: &ModelParams) -> Result<(Matrix, Matrix)> {
    let adj = Arc::new(normalized_adjacency_sparse(g, true));
    Ok((encode_semantic(params, g.features())?, encode_contextual(params, g.features(), &adj)?))
}
