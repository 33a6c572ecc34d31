use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{controller_lambda, ModelParams};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Per-node fusion weights.
///
/// The learned controller produces values in `(0, 1)`; fixed-weight
/// ablations may use the closed endpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionWeights {
    lambda: Vec<f64>,
}

impl FusionWeights {
    pub fn new(lambda: Vec<f64>) -> Result<Self> {
        if let Some(bad) = lambda.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Contract(format!("fusion weight {bad} outside [0, 1]")));
        }
        Ok(Self { lambda })
    }

    pub fn constant(n: usize, value: f64) -> Result<Self> {
        Self::new(vec![value; n])
    }

    pub fn values(&self) -> &[f64] {
        &self.lambda
    }

    pub fn len(&self) -> usize {
        self.lambda.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambda.is_empty()
    }

    pub fn as_column(&self) -> Matrix {
        Matrix::column(&self.lambda)
    }

    pub fn mean(&self) -> f64 {
        self.lambda.iter().sum::<f64>() / self.lambda.len().max(1) as f64
    }

    /// Population standard deviation.
    pub fn std(&self) -> f64 {
        let m = self.mean();
        (self.lambda.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / self.lambda.len().max(1) as f64).sqrt()
    }
}

/// How the contextual view is weighted into the fused representation.
pub trait FusionStrategy: Send + Sync {
    fn name(&self) -> &'static str;

    /// Whether the controller phase of training applies.
    fn is_learned(&self) -> bool;

    fn weights(&self, params: &ModelParams, h_s: &Matrix, h_c: &Matrix, degree: &[usize]) -> Result<FusionWeights>;
}

/// Weights from the trained information-fusion controller.
#[derive(Debug, Clone, Copy, Default)]
pub struct LearnedController;

impl FusionStrategy for LearnedController {
    fn name(&self) -> &'static str {
        "controller"
    }

    fn is_learned(&self) -> bool {
        true
    }

    fn weights(&self, params: &ModelParams, h_s: &Matrix, h_c: &Matrix, degree: &[usize]) -> Result<FusionWeights> {
        controller_lambda(params, h_s, h_c, degree)
    }
}

/// The same weight for every node; the controller is never trained.
#[derive(Debug, Clone, Copy)]
pub struct FixedLambda(pub f64);

impl FusionStrategy for FixedLambda {
    fn name(&self) -> &'static str {
        "fixed"
    }

    fn is_learned(&self) -> bool {
        false
    }

    fn weights(&self, _: &ModelParams, h_s: &Matrix, _: &Matrix, _: &[usize]) -> Result<FusionWeights> {
        FusionWeights::constant(h_s.rows(), self.0)
    }
}

/// Serializable selection of a fusion strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionSpec {
    pub strategy: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_lambda: Option<f64>,
}

impl Default for FusionSpec {
    fn default() -> Self {
        Self { strategy: "controller".into(), fixed_lambda: None }
    }
}

impl FusionSpec {
    pub fn fixed(value: f64) -> Self {
        Self { strategy: "fixed".into(), fixed_lambda: Some(value) }
    }
}

type Constructor = fn(&FusionSpec) -> Result<Box<dyn FusionStrategy>>;

/// Name-keyed constructors for fusion strategies.
pub struct FusionRegistry {
    entries: BTreeMap<&'static str, Constructor>,
}

impl Default for FusionRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

impl FusionRegistry {
    pub fn empty() -> Self {
        Self { entries: BTreeMap::new() }
    }

    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register("controller", |spec| {
            if let Some(v) = spec.fixed_lambda {
                return Err(Error::Contract(format!("fixed_lambda = {v} conflicts with controller training")));
            }
            Ok(Box::new(LearnedController))
        });
        r.register("fixed", |spec| {
            let v = spec.fixed_lambda.ok_or_else(|| Error::Contract("strategy `fixed` needs fixed_lambda".into()))?;
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Contract(format!("fixed_lambda = {v} outside [0, 1]")));
            }
            Ok(Box::new(FixedLambda(v)))
        });
        r
    }

    pub fn register(&mut self, name: &'static str, ctor: Constructor) {
        self.entries.insert(name, ctor);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.keys().copied().collect()
    }

    pub fn create(&self, spec: &FusionSpec) -> Result<Box<dyn FusionStrategy>> {
        let ctor = self.entries.get(spec.strategy.as_str()).ok_or_else(|| Error::UnknownStrategy {
            kind: "fusion strategy",
            name: spec.strategy.clone(),
            known: self.names().join(", "),
        })?;
        ctor(spec)
    }
}
