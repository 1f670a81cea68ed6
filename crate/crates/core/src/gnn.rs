//! The component message-passing models and their softmax readout.
//!
//! GCN layer: `H' = Â · dropout(H) · W`, relu on every layer but the last.
//! SAGE layer: `H' = [dropout(H) ‖ mean_sampled(dropout(H))] · W`, same
//! activation pattern. The readout is `softmax(Z · W_out + b)`.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, NeighborSample, SplitSpec};
use crate::linalg::{
    adam_step, clip_grad_norm, dropout, masked_cross_entropy, one_hot, relu, relu_backward,
    softmax_rows, AdamConfig, DropoutMask, Matrix, Mode, Param,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Gcn,
    Sage,
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gcn" => Ok(ModelKind::Gcn),
            "sage" | "graphsage" => Ok(ModelKind::Sage),
            other => Err(Error::Config(format!("unknown model kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub dropout_p: f64,
    /// Neighbor sample size for SAGE; `None` aggregates whole neighborhoods.
    pub sage_sample_size: Option<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::Gcn,
            hidden_dim: 16,
            num_layers: 2,
            dropout_p: 0.5,
            sage_sample_size: Some(5),
        }
    }
}

impl ModelConfig {
    pub fn gcn() -> Self {
        Self::default()
    }

    pub fn sage() -> Self {
        Self {
            kind: ModelKind::Sage,
            ..Self::default()
        }
    }
}

/// All learnable parameters of one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub config: ModelConfig,
    pub input_dim: usize,
    pub num_classes: usize,
    pub layers: Vec<Param>,
    pub readout_w: Param,
    pub readout_b: Param,
}

struct LayerCache {
    dropout: Option<DropoutMask>,
    /// Layer input after dropout (GCN) or `[input ‖ aggregate]` (SAGE).
    input: Matrix,
    sample: Option<NeighborSample>,
    /// Pre-activation output, kept only for relu layers.
    pre_activation: Option<Matrix>,
}

/// Intermediates of one forward pass, consumed by [`ModelState::backward`].
pub struct ForwardCache {
    layers: Vec<LayerCache>,
}

impl ModelState {
    /// Glorot-uniform weights, zero bias. Embedding width equals `hidden_dim`.
    pub fn new<R: Rng + ?Sized>(
        config: &ModelConfig,
        input_dim: usize,
        num_classes: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if config.num_layers == 0 {
            return Err(Error::Config("a model needs at least one layer".into()));
        }
        if !(0.0..1.0).contains(&config.dropout_p) {
            return Err(Error::Config(format!("dropout {} not in [0, 1)", config.dropout_p)));
        }
        if config.sage_sample_size == Some(0) {
            return Err(Error::Config("SAGE sample size must be at least 1".into()));
        }
        let fan = |d: usize| match config.kind {
            ModelKind::Gcn => d,
            ModelKind::Sage => 2 * d,
        };
        let mut layers = Vec::with_capacity(config.num_layers);
        let mut d_in = input_dim;
        for _ in 0..config.num_layers {
            layers.push(Param::new(Matrix::glorot(fan(d_in), config.hidden_dim, rng)));
            d_in = config.hidden_dim;
        }
        Ok(Self {
            config: *config,
            input_dim,
            num_classes,
            layers,
            readout_w: Param::new(Matrix::glorot(config.hidden_dim, num_classes, rng)),
            readout_b: Param::new(Matrix::zeros(1, num_classes)),
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.config.kind
    }

    pub fn embedding_dim(&self) -> usize {
        self.config.hidden_dim
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out: Vec<&mut Param> = self.layers.iter_mut().collect();
        out.push(&mut self.readout_w);
        out.push(&mut self.readout_b);
        out
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }

    /// Node embeddings `Z` (n x hidden) plus the cache for the backward pass.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        g: &Graph,
        input: &Matrix,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Matrix, ForwardCache)> {
        if input.cols() != self.input_dim {
            return Err(Error::dim("model input", input.shape(), (g.num_nodes(), self.input_dim)));
        }
        if input.rows() != g.num_nodes() {
            return Err(Error::dim("model input", input.shape(), (g.num_nodes(), self.input_dim)));
        }
        let last = self.layers.len() - 1;
        let mut h = input.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        for (l, w) in self.layers.iter().enumerate() {
            let (dropped, mask) = dropout(&h, self.config.dropout_p, mode, rng)?;
            let (layer_in, sample) = match self.config.kind {
                ModelKind::Gcn => (dropped, None),
                ModelKind::Sage => {
                    let sample = g.sample_neighbors(self.config.sage_sample_size, rng);
                    let agg = sample.aggregate(&dropped)?;
                    (dropped.hcat(&agg)?, Some(sample))
                }
            };
            let mut out = layer_in.matmul(&w.value)?;
            if self.config.kind == ModelKind::Gcn {
                out = g.sym_norm_propagate(&out)?;
            }
            let pre_activation = if l < last {
                let pre = out;
                out = relu(&pre);
                Some(pre)
            } else {
                None
            };
            caches.push(LayerCache {
                dropout: mask,
                input: layer_in,
                sample,
                pre_activation,
            });
            h = out;
        }
        Ok((h, ForwardCache { layers: caches }))
    }

    /// Accumulates parameter gradients for upstream gradient `dz` on the
    /// embeddings produced by the forward pass that filled `cache`.
    pub fn backward(&mut self, g: &Graph, cache: &ForwardCache, dz: &Matrix) -> Result<()> {
        let mut upstream = dz.clone();
        for (l, lc) in cache.layers.iter().enumerate().rev() {
            let mut d_out = match &lc.pre_activation {
                Some(pre) => relu_backward(pre, &upstream)?,
                None => upstream,
            };
            if self.config.kind == ModelKind::Gcn {
                // Â is symmetric, so its adjoint is itself
                d_out = g.sym_norm_propagate(&d_out)?;
            }
            let w = &mut self.layers[l];
            w.grad.add_assign(&lc.input.t_matmul(&d_out)?)?;
            if l == 0 {
                break;
            }
            let d_in = d_out.matmul_t(&w.value)?;
            let d_dropped = match &lc.sample {
                None => d_in,
                Some(sample) => {
                    let width = d_in.cols() / 2;
                    let (mut d_self, d_agg) = d_in.split_cols(width);
                    d_self.add_assign(&sample.backward(&d_agg))?;
                    d_self
                }
            };
            upstream = match &lc.dropout {
                Some(mask) => mask.backward(&d_dropped),
                None => d_dropped,
            };
        }
        Ok(())
    }

    pub fn logits(&self, z: &Matrix) -> Result<Matrix> {
        z.matmul(&self.readout_w.value)?
            .add_row_vector(&self.readout_b.value)
    }

    /// `softmax(Z · W + b)`.
    pub fn predict_probs(&self, z: &Matrix) -> Result<Matrix> {
        Ok(softmax_rows(&self.logits(z)?))
    }

    /// Accumulates readout gradients and returns `∂L/∂Z`.
    pub fn readout_backward(&mut self, z: &Matrix, dlogits: &Matrix) -> Result<Matrix> {
        self.readout_w.grad.add_assign(&z.t_matmul(dlogits)?)?;
        self.readout_b.grad.add_assign(&dlogits.column_sums())?;
        dlogits.matmul_t(&self.readout_w.value)
    }

    /// Clips the global gradient norm (if configured) and applies one Adam step.
    pub fn apply_gradients(&mut self, adam: &AdamConfig, clip_norm: Option<f64>, step: u64) -> f64 {
        let mut params = self.params_mut();
        let norm = clip_grad_norm(&mut params, clip_norm.unwrap_or(0.0));
        for p in params {
            adam_step(p, adam, step);
        }
        norm
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let body = serde_json::to_string(self)?;
        std::fs::write(path, body).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&body)?)
    }
}

/// Fraction of `nodes` whose argmax prediction matches their label in `g`.
/// Unlabeled nodes are skipped.
pub fn accuracy_on(probs: &Matrix, g: &Graph, nodes: &[usize]) -> f64 {
    let mut hits = 0;
    let mut total = 0;
    for &v in nodes {
        if let Some(y) = g.labels()[v] {
            total += 1;
            if probs.row_argmax(v) == y {
                hits += 1;
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}

/// Targets and 0/1 row weights for supervised loss on `nodes`.
pub fn supervision(g: &Graph, nodes: &[usize]) -> (Matrix, Vec<f64>) {
    let mut classes = vec![None; g.num_nodes()];
    let mut weights = vec![0.0; g.num_nodes()];
    for &v in nodes {
        if let Some(y) = g.labels()[v] {
            classes[v] = Some(y);
            weights[v] = 1.0;
        }
    }
    (one_hot(&classes, g.num_classes()), weights)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub adam: AdamConfig,
    /// Stop after this many epochs without a validation improvement.
    pub patience: Option<usize>,
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            adam: AdamConfig::default(),
            patience: None,
            clip_norm: Some(5.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were returned; `None` means the initial ones.
    pub best_epoch: Option<usize>,
}

/// Full-graph supervised training on `split.train_labeled`, keeping the
/// parameters of the best validation epoch. Ties keep the earlier epoch.
pub fn train_baseline<R: Rng + ?Sized>(
    mut model: ModelState,
    g: &Graph,
    input: &Matrix,
    split: &SplitSpec,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<(ModelState, TrainHistory)> {
    let (targets, weights) = supervision(g, &split.train_labeled);
    if weights.iter().all(|&w| w == 0.0) {
        return Err(Error::EmptyLabeledSet("baseline training needs labeled nodes"));
    }
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, ModelState)> = None;
    let mut since_best = 0;
    for epoch in 0..cfg.epochs {
        model.zero_grad();
        let (z, cache) = model.forward(g, input, Mode::Train, rng)?;
        let probs = model.predict_probs(&z)?;
        let (loss, dlogits) = masked_cross_entropy(&probs, &targets, &weights)?;
        let dz = model.readout_backward(&z, &dlogits)?;
        model.backward(g, &cache, &dz)?;
        model.apply_gradients(&cfg.adam, cfg.clip_norm, epoch as u64 + 1);

        let (z_eval, _) = model.forward(g, input, Mode::Eval, rng)?;
        let eval_probs = model.predict_probs(&z_eval)?;
        let record = EpochRecord {
            epoch,
            loss,
            train_accuracy: accuracy_on(&eval_probs, g, &split.train_labeled),
            val_accuracy: accuracy_on(&eval_probs, g, &split.validation),
        };
        let score = if split.validation.is_empty() {
            -loss
        } else {
            record.val_accuracy
        };
        history.epochs.push(record);
        if best.as_ref().is_none_or(|(s, _)| score > *s) {
            best = Some((score, model.clone()));
            history.best_epoch = Some(epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if cfg.patience.is_some_and(|p| since_best >= p) {
                break;
            }
        }
    }
    Ok((best.map_or(model, |(_, m)| m), history))
}
