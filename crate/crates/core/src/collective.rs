//! Collective learning around a component GNN.
//!
//! The model input is `[X ‖ Y_L⊙M + Ŷ⊙M̄]`: features, then a label channel
//! that shows the true label for mask-visible nodes and a sampled predicted
//! label elsewhere. Training minimizes cross-entropy on the labeled nodes the
//! mask hides. Predicted labels come from the previous iteration's frozen
//! snapshot, which itself was fed labels from the one before; the chain
//! starts from an all-zero channel.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gnn::{accuracy_on, ForwardCache, ModelState};
use crate::graph::{Graph, SplitSpec};
use crate::linalg::{masked_cross_entropy, one_hot, AdamConfig, Matrix, Mode};

const MAX_MASK_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// The test graph has no observed labels, so every mask is zero.
    TestUnlabeled,
    /// The test graph has some observed labels; training hides a random part.
    TestPartial,
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "test_unlabeled" | "unlabeled" => Ok(Scenario::TestUnlabeled),
            "test_partial" | "partial" => Ok(Scenario::TestPartial),
            other => Err(Error::Config(format!("unknown scenario {other:?}"))),
        }
    }
}

/// Where the predicted-label channel comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Categorical samples from the previous snapshot's predictions.
    Collective,
    /// Categorical samples with uniform class probabilities.
    UniformLabels,
    /// No predicted labels at all; only mask-visible true labels.
    TrueLabelsOnly,
    /// The previous snapshot's probability rows, fed without sampling.
    Deterministic,
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "collective" => Ok(Variant::Collective),
            "uniform_labels" | "uniform" => Ok(Variant::UniformLabels),
            "true_labels_only" | "true_labels" => Ok(Variant::TrueLabelsOnly),
            "deterministic" => Ok(Variant::Deterministic),
            other => Err(Error::Config(format!("unknown variant {other:?}"))),
        }
    }
}

/// When label samples are redrawn during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Redraw {
    /// Fresh samples for every gradient step, conditioned on that step's mask.
    PerStep,
    /// One sample set per iteration, drawn under the iteration's first mask.
    PerIteration,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClConfig {
    /// Label samples per gradient step.
    pub k: usize,
    /// Outer iterations.
    pub t: usize,
    /// Gradient steps per iteration.
    pub j: usize,
    pub scenario: Scenario,
    /// Probability that a labeled node's label is hidden from the input.
    pub mask_rate: f64,
    pub adam: AdamConfig,
    pub clip_norm: Option<f64>,
    pub variant: Variant,
    pub redraw: Redraw,
    /// Validation is checked every this many steps (and on the last one).
    pub val_every: usize,
    /// Ends an iteration after this many validation checks without improvement.
    pub patience: Option<usize>,
    /// Masks drawn per inference iteration; `None` uses `j`.
    pub infer_masks: Option<usize>,
}

impl Default for ClConfig {
    fn default() -> Self {
        Self {
            k: 10,
            t: 10,
            j: 100,
            scenario: Scenario::TestPartial,
            mask_rate: 0.5,
            adam: AdamConfig::default(),
            clip_norm: Some(5.0),
            variant: Variant::Collective,
            redraw: Redraw::PerStep,
            val_every: 1,
            patience: None,
            infer_masks: None,
        }
    }
}

impl ClConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if self.t == 0 {
            return bad("t must be at least 1".into());
        }
        if self.j == 0 {
            return bad("j must be at least 1".into());
        }
        if self.val_every == 0 {
            return bad("val_every must be at least 1".into());
        }
        if self.infer_masks == Some(0) {
            return bad("infer_masks must be at least 1".into());
        }
        if self.scenario == Scenario::TestPartial && !(self.mask_rate > 0.0 && self.mask_rate < 1.0) {
            return bad(format!("mask_rate {} must lie in (0, 1) for test_partial", self.mask_rate));
        }
        if self.variant == Variant::TrueLabelsOnly && self.scenario != Scenario::TestPartial {
            return bad("the true-labels-only variant needs scenario test_partial".into());
        }
        Ok(())
    }

    fn inference_masks(&self) -> usize {
        self.infer_masks.unwrap_or(self.j)
    }
}

/// Node-level label visibility. Logically an `n x C` matrix whose columns
/// are all equal to `visible`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskMatrix {
    visible: Vec<bool>,
}

impl MaskMatrix {
    pub fn zeros(n: usize) -> Self {
        Self { visible: vec![false; n] }
    }

    /// Mask with exactly `nodes` visible. Nodes without a label in `g` stay
    /// hidden.
    pub fn from_visible(g: &Graph, nodes: &[usize]) -> Self {
        let mut m = Self::zeros(g.num_nodes());
        for &v in nodes {
            if g.labels()[v].is_some() {
                m.visible[v] = true;
            }
        }
        m
    }

    pub fn len(&self) -> usize {
        self.visible.len()
    }

    pub fn is_empty(&self) -> bool {
        self.visible.is_empty()
    }

    pub fn is_visible(&self, v: usize) -> bool {
        self.visible[v]
    }

    pub fn bits(&self) -> &[bool] {
        &self.visible
    }

    pub fn visible_nodes(&self) -> Vec<usize> {
        (0..self.len()).filter(|&v| self.visible[v]).collect()
    }

    /// Loss weights: 1 for nodes labeled in `g` whose label the mask hides.
    pub fn hidden_label_weights(&self, g: &Graph) -> Vec<f64> {
        g.labels()
            .iter()
            .zip(&self.visible)
            .map(|(y, &vis)| if y.is_some() && !vis { 1.0 } else { 0.0 })
            .collect()
    }
}

/// Draws a training mask over `labeled`. Each labeled node is visible with
/// probability `1 - mask_rate`; draws that leave no labeled node hidden are
/// rejected. Test-unlabeled always yields the zero mask and uses no
/// randomness.
pub fn sample_mask<R: Rng + ?Sized>(
    g: &Graph,
    labeled: &[usize],
    scenario: Scenario,
    mask_rate: f64,
    rng: &mut R,
) -> Result<MaskMatrix> {
    let mut m = MaskMatrix::zeros(g.num_nodes());
    if scenario == Scenario::TestUnlabeled {
        return Ok(m);
    }
    if !(0.0..1.0).contains(&mask_rate) || mask_rate == 0.0 {
        return Err(Error::Parameter(format!("mask rate {mask_rate} not in (0, 1)")));
    }
    let eligible: Vec<usize> = labeled
        .iter()
        .copied()
        .filter(|&v| g.labels()[v].is_some())
        .collect();
    if eligible.is_empty() {
        return Err(Error::EmptyLabeledSet("a partial mask needs labeled nodes"));
    }
    for _ in 0..MAX_MASK_ATTEMPTS {
        for &v in &eligible {
            m.visible[v] = rng.random::<f64>() >= mask_rate;
        }
        if eligible.iter().any(|&v| !m.visible[v]) {
            return Ok(m);
        }
    }
    Err(Error::SamplingFailure(format!(
        "every one of {MAX_MASK_ATTEMPTS} masks showed all labels"
    )))
}

/// `Y_L⊙M + Ŷ⊙M̄`, with `Y_L` the one-hot observed labels of `g`.
/// `yhat = None` stands for the all-zero matrix.
pub fn label_channel(g: &Graph, yhat: Option<&Matrix>, m: &MaskMatrix) -> Result<Matrix> {
    let n = g.num_nodes();
    let c = g.num_classes();
    if m.len() != n {
        return Err(Error::dim("label channel mask", (n, c), (m.len(), c)));
    }
    if let Some(y) = yhat {
        if y.shape() != (n, c) {
            return Err(Error::dim("label channel", (n, c), y.shape()));
        }
    }
    let mut out = Matrix::zeros(n, c);
    for v in 0..n {
        if m.is_visible(v) {
            if let Some(y) = g.labels()[v] {
                out.set(v, y, 1.0);
            }
        } else if let Some(y) = yhat {
            out.row_mut(v).copy_from_slice(y.row(v));
        }
    }
    Ok(out)
}

/// `[X ‖ Y_L⊙M + Ŷ⊙M̄]`, width `p + C`.
pub fn build_input(g: &Graph, yhat: Option<&Matrix>, m: &MaskMatrix) -> Result<Matrix> {
    g.features().hcat(&label_channel(g, yhat, m)?)
}

/// `K` one-hot label matrices and the iteration whose snapshot drew them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSampleSet {
    pub samples: Vec<Matrix>,
    pub source_iteration: usize,
}

impl LabelSampleSet {
    pub fn k(&self) -> usize {
        self.samples.len()
    }
}

/// The predicted-label term `Ŷ` fed to the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PredictedLabels {
    /// The recursion base: an all-zero channel, one forward pass.
    Zero,
    Sampled(LabelSampleSet),
    /// Probability rows used as they are, one forward pass.
    Soft(Matrix),
}

impl PredictedLabels {
    /// One entry per forward pass; `None` is the zero channel.
    pub fn channels(&self) -> Vec<Option<&Matrix>> {
        match self {
            PredictedLabels::Zero => vec![None],
            PredictedLabels::Sampled(set) => set.samples.iter().map(Some).collect(),
            PredictedLabels::Soft(p) => vec![Some(p)],
        }
    }
}

/// `k` independent draws per node from the rows of `probs`. Draws are made
/// sample by sample, node by node, one uniform variate each.
pub fn sample_categorical<R: Rng + ?Sized>(
    probs: &Matrix,
    k: usize,
    source_iteration: usize,
    rng: &mut R,
) -> LabelSampleSet {
    let (n, c) = probs.shape();
    let samples = (0..k)
        .map(|_| {
            let mut s = Matrix::zeros(n, c);
            for v in 0..n {
                let row = probs.row(v);
                let u = rng.random::<f64>();
                let mut acc = 0.0;
                // rounding can leave the cumulative sum just below u
                let mut pick = row.iter().rposition(|&p| p > 0.0).unwrap_or(0);
                for (cls, &p) in row.iter().enumerate() {
                    acc += p;
                    if u < acc && p > 0.0 {
                        pick = cls;
                        break;
                    }
                }
                s.set(v, pick, 1.0);
            }
            s
        })
        .collect();
    LabelSampleSet {
        samples,
        source_iteration,
    }
}

/// Forward passes for every channel in `labels`, with their caches.
fn mc_forward<R: Rng + ?Sized>(
    model: &ModelState,
    g: &Graph,
    m: &MaskMatrix,
    labels: &PredictedLabels,
    mode: Mode,
    rng: &mut R,
) -> Result<(Matrix, Vec<ForwardCache>)> {
    let channels = labels.channels();
    let mut sum: Option<Matrix> = None;
    let mut caches = Vec::with_capacity(channels.len());
    for yhat in &channels {
        let input = build_input(g, *yhat, m)?;
        let (z, cache) = model.forward(g, &input, mode, rng)?;
        match &mut sum {
            None => sum = Some(z),
            Some(s) => s.add_assign(&z)?,
        }
        caches.push(cache);
    }
    let mut z = sum.expect("at least one channel");
    if channels.len() > 1 {
        z.scale_in_place(1.0 / channels.len() as f64);
    }
    Ok((z, caches))
}

/// Mean embedding over one forward pass per label sample.
pub fn mc_embedding<R: Rng + ?Sized>(
    model: &ModelState,
    g: &Graph,
    m: &MaskMatrix,
    labels: &PredictedLabels,
    mode: Mode,
    rng: &mut R,
) -> Result<Matrix> {
    Ok(mc_forward(model, g, m, labels, mode, rng)?.0)
}

/// Draws `k` label samples from `model`'s predictions, computed in eval mode
/// from input built with `prev` under mask `m`. Also returns the
/// probabilities the samples were drawn from.
#[allow(clippy::too_many_arguments)]
pub fn sample_predicted_labels<R: Rng + ?Sized>(
    model: &ModelState,
    g: &Graph,
    m: &MaskMatrix,
    prev: &PredictedLabels,
    k: usize,
    source_iteration: usize,
    rng: &mut R,
) -> Result<(LabelSampleSet, Matrix)> {
    let probs = predicted_probs(model, g, m, prev, rng)?;
    let set = sample_categorical(&probs, k, source_iteration, rng);
    Ok((set, probs))
}

fn predicted_probs<R: Rng + ?Sized>(
    model: &ModelState,
    g: &Graph,
    m: &MaskMatrix,
    prev: &PredictedLabels,
    rng: &mut R,
) -> Result<Matrix> {
    let z = mc_embedding(model, g, m, prev, Mode::Eval, rng)?;
    model.predict_probs(&z)
}

/// Cross-entropy of the readout of `z` on the labeled nodes of `g` hidden by `m`.
pub fn hidden_label_loss(model: &ModelState, g: &Graph, m: &MaskMatrix, z: &Matrix) -> Result<f64> {
    let probs = model.predict_probs(z)?;
    let targets = one_hot(g.labels(), g.num_classes());
    Ok(masked_cross_entropy(&probs, &targets, &m.hidden_label_weights(g))?.0)
}

/// Loss of the readout of the mean embedding on the labeled nodes that `m`
/// hides, with `targets` the one-hot observed labels of `g`. Parameter
/// gradients are added to `model`'s accumulators.
pub fn accumulate_masked_loss<R: Rng + ?Sized>(
    model: &mut ModelState,
    g: &Graph,
    targets: &Matrix,
    m: &MaskMatrix,
    labels: &PredictedLabels,
    mode: Mode,
    rng: &mut R,
) -> Result<f64> {
    let (z, caches) = mc_forward(model, g, m, labels, mode, rng)?;
    let probs = model.predict_probs(&z)?;
    let (loss, dlogits) = masked_cross_entropy(&probs, targets, &m.hidden_label_weights(g))?;
    let mut dz = model.readout_backward(&z, &dlogits)?;
    dz.scale_in_place(1.0 / caches.len() as f64);
    for cache in &caches {
        model.backward(g, cache, &dz)?;
    }
    Ok(loss)
}

/// Draws the label term for one training or inference step.
struct LabelSource<'a> {
    variant: Variant,
    k: usize,
    /// Frozen snapshot of the previous iteration, absent in the first.
    snapshot: Option<&'a ModelState>,
    /// What the snapshot itself was fed.
    carry: &'a PredictedLabels,
    iteration: usize,
}

impl LabelSource<'_> {
    fn draw<R: Rng + ?Sized>(&self, g: &Graph, m: &MaskMatrix, rng: &mut R) -> Result<PredictedLabels> {
        let Some(snapshot) = self.snapshot else {
            return Ok(PredictedLabels::Zero);
        };
        let source = self.iteration - 1;
        Ok(match self.variant {
            Variant::TrueLabelsOnly => PredictedLabels::Zero,
            Variant::Collective => {
                let (set, _) = sample_predicted_labels(snapshot, g, m, self.carry, self.k, source, rng)?;
                PredictedLabels::Sampled(set)
            }
            Variant::UniformLabels => {
                let c = g.num_classes();
                let uniform = Matrix::filled(g.num_nodes(), c, 1.0 / c as f64);
                PredictedLabels::Sampled(sample_categorical(&uniform, self.k, source, rng))
            }
            Variant::Deterministic => PredictedLabels::Soft(predicted_probs(snapshot, g, m, self.carry, rng)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub steps: Vec<StepRecord>,
    /// Step whose parameters became this iteration's snapshot; `None` keeps
    /// the parameters the iteration started from.
    pub best_step: Option<usize>,
    pub best_val_accuracy: Option<f64>,
}

/// Everything inference needs: one snapshot per iteration plus the settings
/// they were trained under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClHistory {
    pub scenario: Scenario,
    pub variant: Variant,
    pub snapshots: Vec<ModelState>,
    pub iterations: Vec<IterationRecord>,
}

impl ClHistory {
    /// A history made of given snapshots, for inference with untrained or
    /// externally trained models.
    pub fn from_snapshots(snapshots: Vec<ModelState>, scenario: Scenario, variant: Variant) -> Self {
        Self {
            scenario,
            variant,
            snapshots,
            iterations: Vec::new(),
        }
    }

    pub fn final_model(&self) -> Option<&ModelState> {
        self.snapshots.last()
    }
}

/// Trains `model` collectively on `g` with the labels of
/// `split.train_labeled` observed. Validation accuracy is measured against
/// the labels of `g` on `split.validation`; each iteration's best-validation
/// parameters become its snapshot and the starting point of the next one.
pub fn cl_train<R: Rng + ?Sized>(
    mut model: ModelState,
    g: &Graph,
    split: &SplitSpec,
    cfg: &ClConfig,
    rng: &mut R,
) -> Result<ClHistory> {
    cfg.validate()?;
    let g_tr = g.restrict_labels(&split.train_labeled);
    if g_tr.labeled_nodes().is_empty() {
        return Err(Error::EmptyLabeledSet("collective training needs labeled nodes"));
    }
    let expected = g.feature_dim() + g.num_classes();
    if model.input_dim != expected {
        return Err(Error::Config(format!(
            "collective model input width is {}, expected features + classes = {expected}",
            model.input_dim
        )));
    }
    let targets = one_hot(g_tr.labels(), g_tr.num_classes());
    let mut history = ClHistory::from_snapshots(Vec::new(), cfg.scenario, cfg.variant);
    let mut carry = PredictedLabels::Zero;
    let mut global_step = 0u64;

    for t in 1..=cfg.t {
        let prev_snapshot = history.snapshots.last().cloned();
        let source = LabelSource {
            variant: cfg.variant,
            k: cfg.k,
            snapshot: prev_snapshot.as_ref(),
            carry: &carry,
            iteration: t,
        };
        let mut record = IterationRecord {
            iteration: t,
            steps: Vec::with_capacity(cfg.j),
            best_step: None,
            best_val_accuracy: None,
        };
        let mut best: Option<(f64, ModelState)> = None;
        let mut since_best = 0;
        let mut fixed_labels: Option<PredictedLabels> = None;
        let mut last_labels = PredictedLabels::Zero;

        for step in 0..cfg.j {
            let m = sample_mask(&g_tr, &split.train_labeled, cfg.scenario, cfg.mask_rate, rng)?;
            let labels = match (&fixed_labels, cfg.redraw) {
                (Some(l), Redraw::PerIteration) => l.clone(),
                _ => {
                    let l = source.draw(&g_tr, &m, rng)?;
                    if cfg.redraw == Redraw::PerIteration {
                        fixed_labels = Some(l.clone());
                    }
                    l
                }
            };

            model.zero_grad();
            let loss = accumulate_masked_loss(&mut model, &g_tr, &targets, &m, &labels, Mode::Train, rng)?;
            global_step += 1;
            model.apply_gradients(&cfg.adam, cfg.clip_norm, global_step);

            let check = step % cfg.val_every == 0 || step + 1 == cfg.j;
            let mut val_accuracy = None;
            if check {
                let score = if split.validation.is_empty() {
                    -loss
                } else {
                    let z_eval = mc_embedding(&model, &g_tr, &m, &labels, Mode::Eval, rng)?;
                    let acc = accuracy_on(&model.predict_probs(&z_eval)?, g, &split.validation);
                    val_accuracy = Some(acc);
                    acc
                };
                if best.as_ref().is_none_or(|(s, _)| score > *s) {
                    best = Some((score, model.clone()));
                    record.best_step = Some(step);
                    record.best_val_accuracy = val_accuracy;
                    since_best = 0;
                } else {
                    since_best += 1;
                }
            }
            record.steps.push(StepRecord {
                step,
                loss,
                val_accuracy,
            });
            last_labels = labels;
            if cfg.patience.is_some_and(|p| since_best >= p) {
                break;
            }
        }
        if let Some((_, m)) = best {
            model = m;
        }
        history.snapshots.push(model.clone());
        history.iterations.push(record);
        carry = last_labels;
    }
    Ok(history)
}

/// Which masks inference uses.
#[derive(Debug, Clone, PartialEq)]
pub enum MaskSource {
    /// Sample `infer_masks` masks per iteration over the labeled nodes of the
    /// test graph (zero masks for test-unlabeled).
    Sample,
    /// Use exactly these masks in every iteration.
    Fixed(Vec<MaskMatrix>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceIteration {
    pub iteration: usize,
    /// Mean embedding over all mask and label-sample passes.
    pub embedding: Matrix,
    pub probs: Matrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Inference {
    /// Argmax of the last iteration's probabilities, ties to the lowest class.
    pub predictions: Vec<usize>,
    pub probs: Matrix,
    pub iterations: Vec<InferenceIteration>,
}

impl Inference {
    pub fn predictions_on(&self, nodes: &[usize]) -> Vec<usize> {
        nodes.iter().map(|&v| self.predictions[v]).collect()
    }
}

/// Runs the trained chain on `g_te`, whose labels are the observed test
/// labels. Iteration `t` uses snapshot `t` and labels sampled from the
/// probabilities of iteration `t - 1` (zero channel for `t = 1`).
pub fn cl_infer<R: Rng + ?Sized>(
    history: &ClHistory,
    g_te: &Graph,
    cfg: &ClConfig,
    masks: &MaskSource,
    rng: &mut R,
) -> Result<Inference> {
    cfg.validate()?;
    if history.scenario != cfg.scenario {
        return Err(Error::Config(format!(
            "model was trained for {:?} but inference asks for {:?}",
            history.scenario, cfg.scenario
        )));
    }
    if history.snapshots.is_empty() {
        return Err(Error::Config("no trained snapshots to run inference with".into()));
    }
    if let MaskSource::Fixed(list) = masks {
        if list.is_empty() || list.iter().any(|m| m.len() != g_te.num_nodes()) {
            return Err(Error::Config("fixed masks must be non-empty and match the test graph".into()));
        }
    }
    let labeled = g_te.labeled_nodes();
    let mut prev = PredictedLabels::Zero;
    let mut iterations = Vec::with_capacity(history.snapshots.len());
    for (idx, snapshot) in history.snapshots.iter().enumerate() {
        let t = idx + 1;
        let drawn: Vec<MaskMatrix>;
        let mask_list: &[MaskMatrix] = match masks {
            MaskSource::Fixed(list) => list,
            MaskSource::Sample => {
                drawn = (0..cfg.inference_masks())
                    .map(|_| inference_mask(g_te, &labeled, cfg, rng))
                    .collect::<Result<_>>()?;
                &drawn
            }
        };
        let mut sum = Matrix::zeros(g_te.num_nodes(), snapshot.embedding_dim());
        for m in mask_list {
            sum.add_assign(&mc_embedding(snapshot, g_te, m, &prev, Mode::Eval, rng)?)?;
        }
        sum.scale_in_place(1.0 / mask_list.len() as f64);
        let probs = snapshot.predict_probs(&sum)?;
        prev = match history.variant {
            Variant::Collective => PredictedLabels::Sampled(sample_categorical(&probs, cfg.k, t, rng)),
            Variant::UniformLabels => {
                let c = g_te.num_classes();
                let uniform = Matrix::filled(g_te.num_nodes(), c, 1.0 / c as f64);
                PredictedLabels::Sampled(sample_categorical(&uniform, cfg.k, t, rng))
            }
            Variant::TrueLabelsOnly => PredictedLabels::Zero,
            Variant::Deterministic => PredictedLabels::Soft(probs.clone()),
        };
        iterations.push(InferenceIteration {
            iteration: t,
            embedding: sum,
            probs,
        });
    }
    let probs = iterations.last().expect("at least one snapshot").probs.clone();
    let predictions = (0..probs.rows()).map(|v| probs.row_argmax(v)).collect();
    Ok(Inference {
        predictions,
        probs,
        iterations,
    })
}

/// Inference masks are drawn like training masks, except that a graph whose
/// labels are all visible is accepted: there is no loss to protect.
fn inference_mask<R: Rng + ?Sized>(g: &Graph, labeled: &[usize], cfg: &ClConfig, rng: &mut R) -> Result<MaskMatrix> {
    if cfg.scenario == Scenario::TestUnlabeled || labeled.is_empty() {
        return Ok(MaskMatrix::zeros(g.num_nodes()));
    }
    let visible: Vec<usize> = labeled
        .iter()
        .copied()
        .filter(|_| rng.random::<f64>() >= cfg.mask_rate)
        .collect();
    Ok(MaskMatrix::from_visible(g, &visible))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gnn::{train_baseline, ModelConfig, TrainConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    /// Two 5-cliques joined by an edge, labels by clique, uninformative features.
    fn toy(informative: bool) -> (Graph, SplitSpec) {
        let mut edges = Vec::new();
        for base in [0, 5] {
            for u in 0..5 {
                for v in u + 1..5 {
                    edges.push((base + u, base + v));
                }
            }
        }
        edges.push((4, 5));
        let rows: Vec<Vec<f64>> = (0..10)
            .map(|v| match (informative, v < 5) {
                (true, true) => vec![1.0, 0.0],
                (true, false) => vec![0.0, 1.0],
                _ => vec![1.0, 1.0],
            })
            .collect();
        let labels = (0..10).map(|v| Some(usize::from(v >= 5))).collect();
        let g = Graph::new(10, edges, Matrix::from_rows(&rows).unwrap(), labels, 2).unwrap();
        let split = SplitSpec {
            train_labeled: vec![0, 1, 2, 5, 6, 7],
            validation: vec![3, 8],
            test_eval: vec![4, 9],
            test_labeled: vec![],
        };
        (g, split)
    }

    fn small_cfg() -> ClConfig {
        ClConfig {
            k: 3,
            t: 2,
            j: 15,
            ..ClConfig::default()
        }
    }

    #[test]
    fn unlabeled_scenario_gives_zero_mask_without_randomness() {
        let (g, split) = toy(false);
        let mut r = rng(0);
        let m = sample_mask(&g, &split.train_labeled, Scenario::TestUnlabeled, 0.5, &mut r).unwrap();
        assert!(m.bits().iter().all(|&b| !b));
        assert_eq!(r, rng(0));
    }

    #[test]
    fn mask_visibility_frequency() {
        let n = 100;
        let g = Graph::new(n, [], Matrix::zeros(n, 1), vec![Some(0); n], 1).unwrap();
        let labeled: Vec<usize> = (0..n).collect();
        let mut counts = vec![0usize; n];
        let mut r = rng(1);
        let draws = 10_000;
        for _ in 0..draws {
            let m = sample_mask(&g, &labeled, Scenario::TestPartial, 0.5, &mut r).unwrap();
            for v in m.visible_nodes() {
                counts[v] += 1;
            }
        }
        for c in counts {
            let f = c as f64 / draws as f64;
            assert!((f - 0.5).abs() < 0.02, "frequency {f}");
        }
    }

    #[test]
    fn masks_hide_unlabeled_and_keep_a_target() {
        let (g, _) = toy(false);
        let g = g.restrict_labels(&[0, 1]);
        let mut r = rng(2);
        for _ in 0..500 {
            let m = sample_mask(&g, &[0, 1, 2, 3], Scenario::TestPartial, 0.3, &mut r).unwrap();
            assert!((2..10).all(|v| !m.is_visible(v)));
            assert!(!m.is_visible(0) || !m.is_visible(1));
        }
        assert!(matches!(
            sample_mask(&g, &[5], Scenario::TestPartial, 0.5, &mut r),
            Err(Error::EmptyLabeledSet(_))
        ));
    }

    #[test]
    fn label_channel_matches_elementwise_formula() {
        let mut r = rng(3);
        let n = 12;
        let labels: Vec<Option<usize>> = (0..n).map(|v| (v % 3 != 0).then_some(v % 4)).collect();
        let g = Graph::new(n, [], Matrix::uniform(n, 2, 1.0, &mut r), labels.clone(), 4).unwrap();
        let yhat = sample_categorical(&Matrix::filled(n, 4, 0.25), 1, 0, &mut r).samples.remove(0);
        let visible: Vec<usize> = (0..n).filter(|_| r.random::<bool>()).collect();
        let m = MaskMatrix::from_visible(&g, &visible);
        let ch = label_channel(&g, Some(&yhat), &m).unwrap();
        let y_l = one_hot(&labels, 4);
        for v in 0..n {
            let mv = f64::from(u8::from(m.is_visible(v)));
            for c in 0..4 {
                let expect = y_l.get(v, c) * mv + yhat.get(v, c) * (1.0 - mv);
                assert_eq!(ch.get(v, c), expect);
            }
        }
        assert!(label_channel(&g, None, &MaskMatrix::zeros(n)).unwrap().data().iter().all(|&x| x == 0.0));
        let input = build_input(&g, Some(&yhat), &m).unwrap();
        assert_eq!(input.cols(), 6);
    }

    #[test]
    fn categorical_draws() {
        let mut r = rng(4);
        let mut probs = Matrix::filled(3, 4, 0.25);
        probs.row_mut(0).copy_from_slice(&[1.0, 0.0, 0.0, 0.0]);
        let set = sample_categorical(&probs, 2500, 0, &mut r);
        let mut counts = [0usize; 4];
        for s in &set.samples {
            assert_eq!(s.row(0), &[1.0, 0.0, 0.0, 0.0]);
            for v in 1..3 {
                assert_eq!(s.row(v).iter().sum::<f64>(), 1.0);
                counts[s.row_argmax(v)] += 1;
            }
        }
        for c in counts {
            let f = c as f64 / 5000.0;
            assert!((f - 0.25).abs() < 0.02, "frequency {f}");
        }
    }

    #[test]
    fn mc_embedding_is_an_average_of_forwards() {
        let (g, _) = toy(true);
        let mut r = rng(5);
        let model = ModelState::new(&ModelConfig::default(), 4, 2, &mut r).unwrap();
        let m = MaskMatrix::zeros(10);
        let a = sample_categorical(&Matrix::filled(10, 2, 0.5), 1, 0, &mut r).samples.remove(0);
        let b = sample_categorical(&Matrix::filled(10, 2, 0.5), 1, 0, &mut r).samples.remove(0);
        let f = |y: &Matrix| {
            let input = build_input(&g, Some(y), &m).unwrap();
            model.forward(&g, &input, Mode::Eval, &mut rng(0)).unwrap().0
        };
        let two = PredictedLabels::Sampled(LabelSampleSet {
            samples: vec![a.clone(), b.clone()],
            source_iteration: 0,
        });
        let z = mc_embedding(&model, &g, &m, &two, Mode::Eval, &mut r).unwrap();
        let mut expect = f(&a);
        expect.add_assign(&f(&b)).unwrap();
        expect.scale_in_place(0.5);
        assert!(z.max_abs_diff(&expect) < 1e-12);

        let same = PredictedLabels::Sampled(LabelSampleSet {
            samples: vec![a.clone(); 4],
            source_iteration: 0,
        });
        let z = mc_embedding(&model, &g, &m, &same, Mode::Eval, &mut r).unwrap();
        assert!(z.max_abs_diff(&f(&a)) < 1e-12);

        let mut zero = model.clone();
        zero.params_mut().into_iter().for_each(|p| p.value.fill(0.0));
        let z = mc_embedding(&zero, &g, &m, &two, Mode::Eval, &mut r).unwrap();
        assert!(z.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn degenerate_readout_samples_one_class() {
        let (g, _) = toy(false);
        let mut r = rng(6);
        let mut model = ModelState::new(&ModelConfig::default(), 4, 2, &mut r).unwrap();
        model.readout_w.value.fill(0.0);
        model.readout_b.value = Matrix::from_rows(&[vec![800.0, -800.0]]).unwrap();
        let m = MaskMatrix::zeros(10);
        let (set, _) = sample_predicted_labels(&model, &g, &m, &PredictedLabels::Zero, 10, 0, &mut r).unwrap();
        for s in &set.samples {
            assert!((0..10).all(|v| s.get(v, 0) == 1.0));
        }
    }

    #[test]
    fn first_iteration_of_unlabeled_scenario_is_baseline_training() {
        let (g, split) = toy(false);
        let cfg = ClConfig {
            t: 1,
            j: 40,
            scenario: Scenario::TestUnlabeled,
            ..ClConfig::default()
        };
        let model = ModelState::new(&ModelConfig::default(), 4, 2, &mut rng(7)).unwrap();
        let hist = cl_train(model.clone(), &g, &split, &cfg, &mut rng(8)).unwrap();

        let zero_input = build_input(&g.restrict_labels(&[]), None, &MaskMatrix::zeros(10)).unwrap();
        let train_cfg = TrainConfig {
            epochs: 40,
            adam: cfg.adam,
            patience: None,
            clip_norm: cfg.clip_norm,
        };
        let (base, base_hist) = train_baseline(model, &g, &zero_input, &split, &train_cfg, &mut rng(8)).unwrap();
        assert_eq!(hist.snapshots[0], base);
        assert_eq!(hist.iterations[0].best_step, base_hist.best_epoch);
        for (s, e) in hist.iterations[0].steps.iter().zip(&base_hist.epochs) {
            assert_eq!(s.loss, e.loss);
        }
    }

    #[test]
    fn training_is_reproducible() {
        let (g, split) = toy(false);
        let run = |variant| {
            let cfg = ClConfig { variant, ..small_cfg() };
            let model = ModelState::new(&ModelConfig::sage(), 4, 2, &mut rng(9)).unwrap();
            cl_train(model, &g, &split, &cfg, &mut rng(10)).unwrap()
        };
        for v in [Variant::Collective, Variant::UniformLabels, Variant::TrueLabelsOnly, Variant::Deterministic] {
            let a = run(v);
            assert_eq!(a, run(v));
            assert_eq!(a.snapshots.len(), 2);
        }
    }

    #[test]
    fn separable_toy_is_learned() {
        let (g, split) = toy(true);
        let cfg = ClConfig { k: 4, t: 3, j: 60, ..ClConfig::default() };
        let model = ModelState::new(&ModelConfig::default(), 4, 2, &mut rng(11)).unwrap();
        let hist = cl_train(model, &g, &split, &cfg, &mut rng(12)).unwrap();
        let g_te = g.restrict_labels(&split.train_labeled);
        let inf = cl_infer(&hist, &g_te, &cfg, &MaskSource::Sample, &mut rng(13)).unwrap();
        for &v in &split.train_labeled {
            assert_eq!(Some(inf.predictions[v]), g.labels()[v]);
        }
        for r in 0..inf.probs.rows() {
            assert!((inf.probs.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn uniform_ablation_with_one_class_equals_collective() {
        let n = 10;
        let (g, split) = toy(false);
        let g = g.with_labels(vec![Some(0); n], 1).unwrap();
        let run = |variant| {
            let cfg = ClConfig { variant, ..small_cfg() };
            let model = ModelState::new(&ModelConfig::default(), 3, 1, &mut rng(14)).unwrap();
            let mut hist = cl_train(model, &g, &split, &cfg, &mut rng(15)).unwrap();
            hist.variant = Variant::Collective;
            hist
        };
        assert_eq!(run(Variant::Collective), run(Variant::UniformLabels));
    }

    #[test]
    fn single_pass_inference_with_degenerate_readout() {
        let (g, _) = toy(false);
        let mut model = ModelState::new(&ModelConfig::default(), 4, 2, &mut rng(16)).unwrap();
        model.readout_b.value = Matrix::from_rows(&[vec![900.0, -900.0]]).unwrap();
        let hist = ClHistory::from_snapshots(vec![model.clone()], Scenario::TestUnlabeled, Variant::Collective);
        let cfg = ClConfig {
            k: 1,
            j: 1,
            t: 1,
            scenario: Scenario::TestUnlabeled,
            ..ClConfig::default()
        };
        let inf = cl_infer(&hist, &g, &cfg, &MaskSource::Sample, &mut rng(0)).unwrap();
        let input = build_input(&g, None, &MaskMatrix::zeros(10)).unwrap();
        let (z, _) = model.forward(&g, &input, Mode::Eval, &mut rng(0)).unwrap();
        assert_eq!(inf.iterations[0].embedding, z);
        assert!(inf.predictions.iter().all(|&p| p == 0));
    }

    #[test]
    fn scenario_mismatch_is_a_config_error() {
        let (g, _) = toy(false);
        let model = ModelState::new(&ModelConfig::default(), 4, 2, &mut rng(17)).unwrap();
        let hist = ClHistory::from_snapshots(vec![model], Scenario::TestPartial, Variant::Collective);
        let cfg = ClConfig { scenario: Scenario::TestUnlabeled, ..ClConfig::default() };
        assert!(matches!(
            cl_infer(&hist, &g, &cfg, &MaskSource::Sample, &mut rng(0)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn true_labels_only_loss_set_is_the_hidden_labeled_nodes() {
        let (g, split) = toy(false);
        let g_tr = g.restrict_labels(&split.train_labeled);
        let mut r = rng(18);
        for _ in 0..50 {
            let m = sample_mask(&g_tr, &split.train_labeled, Scenario::TestPartial, 0.5, &mut r).unwrap();
            let w = m.hidden_label_weights(&g_tr);
            let oracle: Vec<usize> = split
                .train_labeled
                .iter()
                .copied()
                .filter(|&v| !m.bits()[v])
                .collect();
            let got: Vec<usize> = (0..10).filter(|&v| w[v] == 1.0).collect();
            assert_eq!(got, oracle);
        }
        let all = MaskMatrix::from_visible(&g_tr, &split.train_labeled);
        let ch = label_channel(&g_tr, None, &all).unwrap();
        assert_eq!(ch, one_hot(g_tr.labels(), 2));
    }

    #[test]
    fn soft_channel_rows_are_probabilities_or_one_hot() {
        let (g, split) = toy(false);
        let g_tr = g.restrict_labels(&split.train_labeled);
        let mut r = rng(19);
        let model = ModelState::new(&ModelConfig::default(), 4, 2, &mut r).unwrap();
        let m = sample_mask(&g_tr, &split.train_labeled, Scenario::TestPartial, 0.5, &mut r).unwrap();
        let probs = model.predict_probs(&mc_embedding(&model, &g_tr, &m, &PredictedLabels::Zero, Mode::Eval, &mut r).unwrap()).unwrap();
        let ch = label_channel(&g_tr, Some(&probs), &m).unwrap();
        for v in 0..10 {
            let s: f64 = ch.row(v).iter().sum();
            assert!(s <= 1.0 + 1e-12);
            if m.is_visible(v) {
                assert_eq!(ch.row(v).iter().filter(|&&x| x == 1.0).count(), 1);
            }
        }
    }

    #[test]
    fn config_validation() {
        assert!(ClConfig::default().validate().is_ok());
        for bad in [
            ClConfig { k: 0, ..ClConfig::default() },
            ClConfig { t: 0, ..ClConfig::default() },
            ClConfig { j: 0, ..ClConfig::default() },
            ClConfig { mask_rate: 1.0, ..ClConfig::default() },
            ClConfig {
                variant: Variant::TrueLabelsOnly,
                scenario: Scenario::TestUnlabeled,
                ..ClConfig::default()
            },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))));
        }
    }
}
