//! Paired baseline-versus-collective trials.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use clgnn::collective::{cl_infer, cl_train, ClConfig, ClHistory, Inference, MaskSource, Scenario, Variant};
use clgnn::gnn::train_baseline;
use clgnn::{Graph, Matrix, Mode, ModelState, SplitSpec};
use serde::{Deserialize, Serialize};

use crate::config::{enum_name, Ablation, ExperimentConfig};
use crate::metrics::Metric;
use crate::stats::{mean_and_se, paired_t_test, TTest};

pub const SCHEMA_VERSION: u32 = 1;

/// Seeds of one trial, all at fixed offsets from the master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialSeeds {
    pub split: u64,
    pub init: u64,
    pub baseline: u64,
    pub collective: u64,
    pub inference: u64,
}

impl TrialSeeds {
    pub fn derive(master: u64, trial: usize) -> Self {
        let base = master.wrapping_add(1_000 * (trial as u64 + 1));
        Self {
            split: base.wrapping_add(1),
            init: base.wrapping_add(2),
            baseline: base.wrapping_add(3),
            collective: base.wrapping_add(4),
            inference: base.wrapping_add(5),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationPoint {
    pub iteration: usize,
    pub best_val_accuracy: Option<f64>,
    pub test_metric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantResult {
    pub metric: f64,
    /// `metric - baseline` of the same trial.
    pub improvement: f64,
    pub curve: Vec<IterationPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub seeds: TrialSeeds,
    pub baseline: f64,
    pub baseline_best_epoch: Option<usize>,
    pub collective: f64,
    pub improvement: f64,
    pub curve: Vec<IterationPoint>,
    pub ablations: BTreeMap<String, VariantResult>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
}

impl MeanSe {
    fn of(xs: &[f64]) -> Self {
        let (mean, se) = mean_and_se(xs);
        Self { mean, se }
    }
}

/// A variant's metric and its paired comparison against the baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub metric: MeanSe,
    pub improvement: MeanSe,
    pub t_test: Option<TTest>,
    /// Why `t_test` is missing.
    pub t_test_note: Option<String>,
}

impl Comparison {
    fn of(values: &[f64], baseline: &[f64]) -> Self {
        let diffs: Vec<f64> = values.iter().zip(baseline).map(|(a, b)| a - b).collect();
        let (t_test, t_test_note) = match paired_t_test(values, baseline) {
            Ok(t) => (Some(t), None),
            Err(e) => (None, Some(e.to_string())),
        };
        Self {
            metric: MeanSe::of(values),
            improvement: MeanSe::of(&diffs),
            t_test,
            t_test_note,
        }
    }

    /// Positive mean gain with two-sided `p < alpha`.
    pub fn significant_gain(&self, alpha: f64) -> bool {
        self.t_test.is_some_and(|t| t.mean_difference > 0.0 && t.p_two_sided < alpha)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub baseline: MeanSe,
    pub collective: Comparison,
    pub ablations: BTreeMap<String, Comparison>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub nodes: usize,
    pub edges: usize,
    pub features: usize,
    pub classes: usize,
    pub labeled: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    pub dataset: DatasetSummary,
    pub trials: Vec<TrialRecord>,
    pub summary: Summary,
}

impl TrialReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let report: Self = serde_json::from_str(text)?;
        if report.schema_version != SCHEMA_VERSION {
            bail!("report schema version {} is not {SCHEMA_VERSION}", report.schema_version);
        }
        Ok(report)
    }

    pub fn baseline_values(&self) -> Vec<f64> {
        self.trials.iter().map(|t| t.baseline).collect()
    }

    pub fn collective_values(&self) -> Vec<f64> {
        self.trials.iter().map(|t| t.collective).collect()
    }
}

/// One trained collective chain as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainFiles {
    pub scenario: Scenario,
    pub variant: Variant,
    /// Snapshot file of each iteration, relative to the run directory.
    pub snapshots: Vec<String>,
    pub iterations: Vec<IterationPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestTrial {
    pub trial: usize,
    pub seeds: TrialSeeds,
    pub split_file: String,
    pub baseline_file: String,
    pub collective: Option<ChainFiles>,
    pub ablations: BTreeMap<String, ChainFiles>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    pub report_file: String,
    pub trials: Vec<ManifestTrial>,
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const REPORT_FILE: &str = "report.json";

/// Argmax predictions (ties to the lowest class) and probabilities of a
/// baseline model in eval mode.
pub fn baseline_predictions(model: &ModelState, g: &Graph, seed: u64) -> Result<(Vec<usize>, Matrix)> {
    let (z, _) = model.forward(g, g.features(), Mode::Eval, &mut crate::rng(seed))?;
    let probs = model.predict_probs(&z)?;
    let preds = (0..probs.rows()).map(|v| probs.row_argmax(v)).collect();
    Ok((preds, probs))
}

/// The test graph: shares the structure of `g` and shows only the
/// test-labeled nodes, or nothing for test-unlabeled.
pub fn test_graph(g: &Graph, split: &SplitSpec, scenario: Scenario) -> Graph {
    match scenario {
        Scenario::TestPartial => g.restrict_labels(&split.test_labeled),
        Scenario::TestUnlabeled => g.restrict_labels(&[]),
    }
}

struct Chain {
    history: ClHistory,
    result: VariantResult,
}

fn run_chain(
    g: &Graph,
    split: &SplitSpec,
    cfg: &ExperimentConfig,
    cl: &ClConfig,
    seeds: &TrialSeeds,
    baseline: f64,
) -> Result<Chain> {
    let p = g.feature_dim();
    let c = g.num_classes();
    let model = ModelState::new(&cfg.model, p + c, c, &mut crate::rng(seeds.init))?;
    let history = cl_train(model, g, split, cl, &mut crate::rng(seeds.collective))?;
    let g_te = test_graph(g, split, cl.scenario);
    let inference = cl_infer(&history, &g_te, cl, &MaskSource::Sample, &mut crate::rng(seeds.inference))?;
    let curve = curve(&history, &inference, g, split, cfg.metric);
    let metric = cfg.metric.score(&inference.predictions, g.labels(), &split.test_eval);
    Ok(Chain {
        history,
        result: VariantResult {
            metric,
            improvement: metric - baseline,
            curve,
        },
    })
}

fn curve(history: &ClHistory, inference: &Inference, g: &Graph, split: &SplitSpec, metric: Metric) -> Vec<IterationPoint> {
    inference
        .iterations
        .iter()
        .map(|it| {
            let preds: Vec<usize> = (0..it.probs.rows()).map(|v| it.probs.row_argmax(v)).collect();
            IterationPoint {
                iteration: it.iteration,
                best_val_accuracy: history
                    .iterations
                    .get(it.iteration - 1)
                    .and_then(|r| r.best_val_accuracy),
                test_metric: metric.score(&preds, g.labels(), &split.test_eval),
            }
        })
        .collect()
}

/// Everything one trial produced, for the report and the run directory.
pub struct TrialOutcome {
    pub record: TrialRecord,
    pub split: SplitSpec,
    pub baseline_model: ModelState,
    pub collective: Option<ClHistory>,
    pub ablations: BTreeMap<String, (Ablation, ClHistory)>,
}

pub fn run_trial(g: &Graph, cfg: &ExperimentConfig, trial: usize) -> Result<TrialOutcome> {
    let seeds = TrialSeeds::derive(cfg.seed, trial);
    let split = SplitSpec::generate(g, &cfg.split, &mut crate::rng(seeds.split))
        .with_context(|| format!("trial {trial}: drawing the split"))?;

    let model = ModelState::new(&cfg.model, g.feature_dim(), g.num_classes(), &mut crate::rng(seeds.init))?;
    let (model, history) = train_baseline(model, g, g.features(), &split, &cfg.baseline, &mut crate::rng(seeds.baseline))?;
    let (preds, _) = baseline_predictions(&model, g, seeds.inference)?;
    let baseline = cfg.metric.score(&preds, g.labels(), &split.test_eval);

    let (collective, curve, chain) = if cfg.collective {
        let chain = run_chain(g, &split, cfg, &cfg.cl, &seeds, baseline)
            .with_context(|| format!("trial {trial}: collective model"))?;
        (chain.result.metric, chain.result.curve, Some(chain.history))
    } else {
        (baseline, Vec::new(), None)
    };

    let mut ablations = BTreeMap::new();
    let mut ablation_results = BTreeMap::new();
    for ab in &cfg.ablations {
        let cl = ClConfig {
            variant: ab.variant,
            scenario: ab.scenario,
            ..cfg.cl
        };
        let chain = run_chain(g, &split, cfg, &cl, &seeds, baseline)
            .with_context(|| format!("trial {trial}: ablation {}", ab.key()))?;
        ablation_results.insert(ab.key(), chain.result);
        ablations.insert(ab.key(), (*ab, chain.history));
    }

    Ok(TrialOutcome {
        record: TrialRecord {
            trial,
            seeds,
            baseline,
            baseline_best_epoch: history.best_epoch,
            collective,
            improvement: collective - baseline,
            curve,
            ablations: ablation_results,
        },
        split,
        baseline_model: model,
        collective: chain,
        ablations,
    })
}

pub fn summarize(trials: &[TrialRecord], ablations: &[Ablation]) -> Summary {
    let baseline: Vec<f64> = trials.iter().map(|t| t.baseline).collect();
    let collective: Vec<f64> = trials.iter().map(|t| t.collective).collect();
    let ablations = ablations
        .iter()
        .map(|ab| {
            let key = ab.key();
            let values: Vec<f64> = trials.iter().map(|t| t.ablations[&key].metric).collect();
            (key, Comparison::of(&values, &baseline))
        })
        .collect();
    Summary {
        baseline: MeanSe::of(&baseline),
        collective: Comparison::of(&collective, &baseline),
        ablations,
    }
}

fn dataset_summary(g: &Graph) -> DatasetSummary {
    DatasetSummary {
        nodes: g.num_nodes(),
        edges: g.num_edges(),
        features: g.feature_dim(),
        classes: g.num_classes(),
        labeled: g.labeled_nodes().len(),
    }
}

/// Runs every trial of `cfg` and, when `cfg.output` is set, writes the
/// report, the manifest, and each trial's split and snapshots there.
pub fn run(cfg: &ExperimentConfig) -> Result<TrialReport> {
    cfg.validate()?;
    let g = cfg.dataset.load(cfg.seed).context("loading the dataset")?;
    let mut records = Vec::with_capacity(cfg.trials);
    let mut manifest_trials = Vec::with_capacity(cfg.trials);
    for trial in 0..cfg.trials {
        let outcome = run_trial(&g, cfg, trial)?;
        if let Some(dir) = &cfg.output {
            manifest_trials.push(write_trial(dir, &outcome)?);
        }
        records.push(outcome.record);
    }
    let summary = summarize(&records, &cfg.ablations);
    let report = TrialReport {
        schema_version: SCHEMA_VERSION,
        config: cfg.clone(),
        dataset: dataset_summary(&g),
        trials: records,
        summary,
    };
    if let Some(dir) = &cfg.output {
        write_text(&dir.join(REPORT_FILE), &report.to_json()?)?;
        let manifest = RunManifest {
            schema_version: SCHEMA_VERSION,
            config: cfg.clone(),
            report_file: REPORT_FILE.into(),
            trials: manifest_trials,
        };
        write_text(&dir.join(MANIFEST_FILE), &(serde_json::to_string_pretty(&manifest)? + "\n"))?;
    }
    Ok(report)
}

fn write_text(path: &Path, body: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    std::fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

fn write_chain(dir: &Path, prefix: &str, history: &ClHistory, curve: &[IterationPoint]) -> Result<ChainFiles> {
    let mut snapshots = Vec::with_capacity(history.snapshots.len());
    for (i, snap) in history.snapshots.iter().enumerate() {
        let name = format!("{prefix}_iter{}.json", i + 1);
        let path = dir.join(&name);
        write_text(&path, &serde_json::to_string(snap)?)?;
        snapshots.push(name);
    }
    Ok(ChainFiles {
        scenario: history.scenario,
        variant: history.variant,
        snapshots,
        iterations: curve.to_vec(),
    })
}

fn write_trial(dir: &Path, outcome: &TrialOutcome) -> Result<ManifestTrial> {
    let t = outcome.record.trial;
    let split_file = format!("trial{t}/split.json");
    write_text(&dir.join(&split_file), &(serde_json::to_string_pretty(&outcome.split)? + "\n"))?;
    let baseline_file = format!("trial{t}/baseline.json");
    write_text(&dir.join(&baseline_file), &serde_json::to_string(&outcome.baseline_model)?)?;
    let collective = match &outcome.collective {
        Some(h) => Some(write_chain(dir, &format!("trial{t}/collective"), h, &outcome.record.curve)?),
        None => None,
    };
    let mut ablations = BTreeMap::new();
    for (key, (ab, history)) in &outcome.ablations {
        let prefix = format!("trial{t}/{}_{}", enum_name(&ab.variant), enum_name(&ab.scenario));
        let files = write_chain(dir, &prefix, history, &outcome.record.ablations[key].curve)?;
        ablations.insert(key.clone(), files);
    }
    Ok(ManifestTrial {
        trial: t,
        seeds: outcome.record.seeds,
        split_file,
        baseline_file,
        collective,
        ablations,
    })
}

/// Result of re-running a stored chain.
pub struct Evaluation {
    pub inference: Inference,
    pub metric: f64,
    pub test_eval: Vec<usize>,
}

/// Re-runs inference for a trial stored in `run_dir`. `chain` selects an
/// ablation by key; `None` is the main collective model.
pub fn evaluate(run_dir: &Path, trial: usize, chain: Option<&str>, seed: u64) -> Result<Evaluation> {
    let manifest_path = run_dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&manifest_path).with_context(|| format!("reading {}", manifest_path.display()))?;
    let manifest: RunManifest = serde_json::from_str(&text)?;
    let entry = manifest
        .trials
        .iter()
        .find(|t| t.trial == trial)
        .with_context(|| format!("trial {trial} is not in the manifest"))?;
    let files = match chain {
        None => entry.collective.as_ref().context("the run has no collective model")?,
        Some(key) => entry.ablations.get(key).with_context(|| format!("no ablation {key:?} in trial {trial}"))?,
    };
    let cfg = &manifest.config;
    let g = cfg.dataset.load(cfg.seed)?;
    let split: SplitSpec = serde_json::from_str(&std::fs::read_to_string(run_dir.join(&entry.split_file))?)?;
    let snapshots = files
        .snapshots
        .iter()
        .map(|f| ModelState::load(run_dir.join(f)))
        .collect::<clgnn::Result<Vec<_>>>()?;
    let history = ClHistory::from_snapshots(snapshots, files.scenario, files.variant);
    let cl = ClConfig {
        scenario: files.scenario,
        variant: files.variant,
        ..cfg.cl
    };
    let g_te = test_graph(&g, &split, cl.scenario);
    let inference = cl_infer(&history, &g_te, &cl, &MaskSource::Sample, &mut crate::rng(seed))?;
    let metric = cfg.metric.score(&inference.predictions, g.labels(), &split.test_eval);
    Ok(Evaluation {
        inference,
        metric,
        test_eval: split.test_eval,
    })
}

/// Prediction file body: `node<TAB>argmax<TAB>p_0,...,p_{C-1}` per node.
pub fn format_predictions(inference: &Inference, nodes: &[usize]) -> String {
    let mut out = String::new();
    for &v in nodes {
        let probs: Vec<String> = inference.probs.row(v).iter().map(|p| p.to_string()).collect();
        let _ = writeln!(out, "{v}\t{}\t{}", inference.predictions[v], probs.join(","));
    }
    out
}
