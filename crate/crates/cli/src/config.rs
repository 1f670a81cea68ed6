//! Experiment configuration and its JSON overlay.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clgnn::collective::{ClConfig, Scenario, Variant};
use clgnn::graph::{load_cora, load_graph, SplitPlan, TestLabelPlan};
use clgnn::{Graph, ModelConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::metrics::Metric;
use crate::synth::{synth_homophily, SynthSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DatasetSpec {
    /// Generated from the run's master seed.
    Synthetic(SynthSpec),
    Files {
        edges: PathBuf,
        features: PathBuf,
        labels: PathBuf,
    },
    /// The LINQS `cora.content` / `cora.cites` pair.
    Cora { content: PathBuf, cites: PathBuf },
}

impl DatasetSpec {
    pub fn load(&self, seed: u64) -> Result<Graph> {
        Ok(match self {
            DatasetSpec::Synthetic(spec) => synth_homophily(spec, &mut crate::rng(seed))?,
            DatasetSpec::Files { edges, features, labels } => load_graph(edges, features, labels)?,
            DatasetSpec::Cora { content, cites } => load_cora(content, cites)?,
        })
    }

    /// Cora files inside `dir`.
    pub fn cora_dir(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        DatasetSpec::Cora {
            content: dir.join("cora.content"),
            cites: dir.join("cora.cites"),
        }
    }
}

/// A collective variant run on the same trials as the main comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    pub variant: Variant,
    pub scenario: Scenario,
}

impl Ablation {
    pub fn key(&self) -> String {
        format!("{}@{}", enum_name(&self.variant), enum_name(&self.scenario))
    }
}

pub(crate) fn enum_name<T: Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(Value::String(s)) => s,
        _ => String::from("?"),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub model: ModelConfig,
    pub baseline: TrainConfig,
    pub cl: ClConfig,
    /// When false the collective model is skipped and reported equal to the
    /// baseline.
    pub collective: bool,
    pub split: SplitPlan,
    pub trials: usize,
    pub metric: Metric,
    pub seed: u64,
    pub ablations: Vec<Ablation>,
    /// Directory for the report, manifest, splits and snapshots.
    pub output: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    /// The synthetic homophily benchmark: 600 nodes, 3 classes, homophily
    /// 0.9, pure-noise features, 30 connected training labels and half of
    /// the remaining labels observed at test time.
    fn default() -> Self {
        Self {
            dataset: DatasetSpec::Synthetic(SynthSpec::default()),
            model: ModelConfig::gcn(),
            baseline: TrainConfig::default(),
            cl: ClConfig::default(),
            collective: true,
            split: SplitPlan {
                train_labeled: 30,
                test_labeled: TestLabelPlan::RandomFraction(0.5),
                test_size: None,
                validation_size: None,
            },
            trials: 5,
            metric: Metric::Accuracy,
            seed: 0,
            ablations: Vec::new(),
            output: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            bail!("trials: must be at least 1");
        }
        if self.split.train_labeled == 0 {
            bail!("split.train_labeled: must be at least 1");
        }
        if self.model.hidden_dim == 0 {
            bail!("model.hidden_dim: must be at least 1");
        }
        if !(0.0..1.0).contains(&self.model.dropout_p) {
            bail!("model.dropout_p: {} not in [0, 1)", self.model.dropout_p);
        }
        if self.baseline.epochs == 0 {
            bail!("baseline.epochs: must be at least 1");
        }
        self.cl.validate().map_err(|e| anyhow!("cl: {e}"))?;
        if let DatasetSpec::Synthetic(spec) = &self.dataset {
            spec.validate().map_err(|e| anyhow!("dataset: {e}"))?;
            if spec.imbalanced() && self.metric != Metric::BalancedAccuracy {
                bail!("metric: block sizes are imbalanced, use balanced_accuracy");
            }
        }
        let has_test_labels = !matches!(self.split.test_labeled, TestLabelPlan::None);
        for (field, scenario) in std::iter::once(("cl.scenario", self.cl.scenario))
            .chain(self.ablations.iter().map(|a| ("ablations.scenario", a.scenario)))
        {
            if scenario == Scenario::TestPartial && !has_test_labels {
                bail!("{field}: test_partial needs split.test_labeled to be set");
            }
        }
        for a in &self.ablations {
            if a.variant == Variant::TrueLabelsOnly && a.scenario != Scenario::TestPartial {
                bail!("ablations.variant: true_labels_only needs scenario test_partial");
            }
        }
        Ok(())
    }

    /// `base` with every field present in the JSON file at `path` replaced.
    pub fn overlay_file(base: &Self, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let patch: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        Self::overlay(base, patch).with_context(|| format!("applying {}", path.display()))
    }

    pub fn overlay(base: &Self, mut patch: Value) -> Result<Self> {
        let mut value = serde_json::to_value(base)?;
        // datasets of another kind share no fields with the base one
        let retagged = match (value.get("dataset"), patch.get("dataset")) {
            (Some(b), Some(p)) => p.get("kind").is_some_and(|k| Some(k) != b.get("kind")),
            _ => false,
        };
        if retagged {
            if let (Some(b), Some(p)) = (value.as_object_mut(), patch.as_object_mut()) {
                b.insert("dataset".into(), p.remove("dataset").unwrap_or_default());
            }
        }
        merge(&mut value, patch);
        Ok(serde_json::from_value(value)?)
    }
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, patch) => *slot = patch,
    }
}
