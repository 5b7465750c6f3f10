//! Run configuration. Every key can be set from a TOML file; unknown keys
//! are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::caar::{ClassGraphWeighting, RefineConfig};
use crate::cluster::KMeansConfig;
use crate::error::{Error, Result};
use crate::eval::{EvalConfig, ModelSelection};
use crate::model::TrainConfig;
use crate::optim::OptimizerKind;
use crate::propagate::PropagationConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatioBase {
    /// n / N
    #[default]
    All,
    /// n / N_train
    Train,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// Condense the whole graph, test on its test nodes.
    #[default]
    Transductive,
    /// Condense the subgraph induced by training nodes, test on the full graph.
    Inductive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub ratio: f64,
    pub ratio_base: RatioBase,
    pub protocol: Protocol,

    pub prop_steps: usize,
    pub alpha: f64,

    pub pretrain_epochs: usize,
    pub hidden: usize,
    pub depth: usize,
    pub dropout: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,

    pub kmeans_max_iter: usize,
    pub kmeans_tol: f64,
    pub kmeans_n_init: usize,
    /// Node count above which mini-batch K-Means is used.
    pub minibatch_threshold: usize,
    pub minibatch_size: usize,

    pub beta: f64,
    pub rho: f64,
    pub refine_prop_steps: usize,
    /// Falls back to `alpha` when unset.
    pub refine_alpha: Option<f64>,
    pub refine_epochs: usize,
    pub gamma: f64,
    pub lambda: f64,
    pub refine_learning_rate: f64,
    pub refine_weight_decay: f64,
    pub class_graph_weighting: ClassGraphWeighting,

    pub normalize_fid: bool,
    /// Replace A′ by the identity before evaluation and persistence.
    pub identity_adjacency: bool,
    pub sparsify_epsilon: f64,

    pub eval_epochs: usize,
    pub eval_learning_rate: f64,
    pub eval_weight_decay: f64,
    pub eval_dropout: f64,
    pub eval_hidden: usize,
    pub eval_runs: usize,
    pub eval_selection: ModelSelection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            ratio: 0.026,
            ratio_base: RatioBase::All,
            protocol: Protocol::Transductive,
            prop_steps: 5,
            alpha: 0.8,
            pretrain_epochs: 80,
            hidden: 256,
            depth: 3,
            dropout: 0.6,
            learning_rate: 0.01,
            weight_decay: 5e-4,
            batch_size: 0,
            optimizer: OptimizerKind::Adam,
            kmeans_max_iter: 300,
            kmeans_tol: 1e-4,
            kmeans_n_init: 1,
            minibatch_threshold: 100_000,
            minibatch_size: 1000,
            beta: 0.01,
            rho: 0.4,
            refine_prop_steps: 2,
            refine_alpha: None,
            refine_epochs: 2000,
            gamma: 7.0,
            lambda: 0.1,
            refine_learning_rate: 0.01,
            refine_weight_decay: 5e-4,
            class_graph_weighting: ClassGraphWeighting::Adjacency,
            normalize_fid: true,
            identity_adjacency: false,
            sparsify_epsilon: 0.0,
            eval_epochs: 600,
            eval_learning_rate: 0.01,
            eval_weight_decay: 1e-5,
            eval_dropout: 0.5,
            eval_hidden: 256,
            eval_runs: 5,
            eval_selection: ModelSelection::Final,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.ratio > 0.0 && self.ratio < 1.0) {
            return bad(format!("ratio = {} must lie in (0, 1)", self.ratio));
        }
        for (name, v) in [("dropout", self.dropout), ("eval_dropout", self.eval_dropout)] {
            if !(0.0..1.0).contains(&v) {
                return bad(format!("{name} = {v} must lie in [0, 1)"));
            }
        }
        if self.depth == 0 || self.hidden == 0 || self.eval_hidden == 0 {
            return bad("depth and hidden sizes must be positive".into());
        }
        if self.pretrain_epochs == 0 {
            return bad("pretrain_epochs must be at least 1".into());
        }
        if self.minibatch_size == 0 {
            return bad("minibatch_size must be positive".into());
        }
        if self.sparsify_epsilon < 0.0 {
            return bad("sparsify_epsilon must be nonnegative".into());
        }
        for (name, v) in [
            ("learning_rate", self.learning_rate),
            ("refine_learning_rate", self.refine_learning_rate),
            ("eval_learning_rate", self.eval_learning_rate),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} = {v} must be positive"));
            }
        }
        self.propagation().validate()?;
        self.refine(0).validate()?;
        Ok(())
    }

    pub fn propagation(&self) -> PropagationConfig {
        PropagationConfig {
            alpha: self.alpha,
            steps: self.prop_steps,
        }
    }

    pub fn pretrain(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.pretrain_epochs,
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            seed,
            batch_size: self.batch_size,
            optimizer: self.optimizer,
        }
    }

    pub fn kmeans(&self) -> KMeansConfig {
        KMeansConfig {
            max_iter: self.kmeans_max_iter,
            tol: self.kmeans_tol,
            n_init: self.kmeans_n_init,
        }
    }

    pub fn refine(&self, seed: u64) -> RefineConfig {
        RefineConfig {
            beta: self.beta,
            rho: self.rho,
            steps: self.refine_prop_steps,
            alpha: self.refine_alpha.unwrap_or(self.alpha),
            gamma: self.gamma,
            lambda: self.lambda,
            epochs: self.refine_epochs,
            learning_rate: self.refine_learning_rate,
            weight_decay: self.refine_weight_decay,
            seed,
            optimizer: self.optimizer,
            weighting: self.class_graph_weighting,
        }
    }

    pub fn eval(&self) -> EvalConfig {
        EvalConfig {
            epochs: self.eval_epochs,
            learning_rate: self.eval_learning_rate,
            weight_decay: self.eval_weight_decay,
            dropout: self.eval_dropout,
            hidden: self.eval_hidden,
            runs: self.eval_runs,
            selection: self.eval_selection,
        }
    }

    /// Every configuration key, sorted.
    pub fn keys() -> Vec<String> {
        match serde_json::to_value(PipelineConfig::default()).expect("config serializes") {
            serde_json::Value::Object(map) => map.keys().cloned().collect(),
            _ => unreachable!("config serializes to a map"),
        }
    }

    /// Applies `key = value` overrides. Values are read as TOML literals;
    /// keys holding strings also accept bare words.
    pub fn with_overrides(&self, overrides: &[(String, String)]) -> Result<Self> {
        let mut value = serde_json::to_value(self).expect("config serializes");
        let map = value.as_object_mut().expect("config serializes to a map");
        for (key, raw) in overrides {
            let Some(slot) = map.get_mut(key) else {
                return Err(Error::Config(format!("unknown key `{key}`")));
            };
            let literal = toml::from_str::<toml::Table>(&format!("v = {raw}"))
                .ok()
                .and_then(|mut t| t.remove("v"))
                .map(|v| serde_json::to_value(v).expect("TOML values serialize"));
            *slot = match literal {
                Some(v) if !(slot.is_string() && !v.is_string()) => v,
                _ => serde_json::Value::String(raw.clone()),
            };
        }
        let cfg: PipelineConfig = serde_json::from_value(value).map_err(|e| Error::Config(format!("override: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// SHA-256 over the canonical JSON form (keys sorted), hex encoded.
    pub fn hash(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        let canonical = serde_json::to_string(&value).expect("value serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}
