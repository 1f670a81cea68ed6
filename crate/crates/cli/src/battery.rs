//! Expressiveness and sampling checks on the certified graphs.
//!
//! Snapshots are random unless a check says otherwise: the properties hold
//! for any parameters. Seeds are fixed, so the report is reproducible byte
//! for byte.

use anyhow::Result;
use clgnn::collective::{
    build_input, cl_infer, hidden_label_loss, mc_embedding, sample_categorical, sample_mask, ClConfig, ClHistory,
    LabelSampleSet, MaskMatrix, MaskSource, PredictedLabels, Scenario, Variant,
};
use clgnn::linalg::{softmax_rows, AdamConfig, Matrix};
use clgnn::wl::{make_prop2_graph, make_thm2_graph, SeparationCertificate};
use clgnn::gnn::train_baseline;
use clgnn::{Graph, Mode, ModelConfig, ModelState, SplitSpec, TrainConfig};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::experiment::SCHEMA_VERSION;

const PAIR_FIT_EPOCHS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatteryReport {
    pub schema_version: u32,
    pub checks: Vec<Check>,
    pub certificates: Vec<SeparationCertificate>,
    pub passed: bool,
}

impl BatteryReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

fn check(name: &str, passed: bool, detail: String) -> Check {
    Check {
        name: name.to_string(),
        passed,
        detail,
    }
}

fn random_gcn(input_dim: usize, classes: usize, seed: u64) -> Result<ModelState> {
    Ok(ModelState::new(&ModelConfig::gcn(), input_dim, classes, &mut crate::rng(seed))?)
}

/// Largest entrywise difference between any two rows in `nodes`.
pub fn max_pairwise_difference(z: &Matrix, nodes: &[usize]) -> f64 {
    let mut worst: f64 = 0.0;
    for (i, &a) in nodes.iter().enumerate() {
        for &b in &nodes[i + 1..] {
            for (x, y) in z.row(a).iter().zip(z.row(b)) {
                worst = worst.max((x - y).abs());
            }
        }
    }
    worst
}

/// Largest entry of `|mean of rows a - mean of rows b|`.
pub fn group_mean_gap(z: &Matrix, a: &[usize], b: &[usize]) -> f64 {
    let mean = |nodes: &[usize]| -> Vec<f64> {
        let mut m = vec![0.0; z.cols()];
        for &v in nodes {
            for (acc, x) in m.iter_mut().zip(z.row(v)) {
                *acc += x;
            }
        }
        m.iter().map(|x| x / nodes.len() as f64).collect()
    };
    mean(a)
        .iter()
        .zip(mean(b))
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn thm2_setup() -> Result<(SeparationCertificate, Graph, Vec<usize>, MaskMatrix)> {
    let cert = make_thm2_graph()?;
    let g = cert.graph()?;
    let whites: Vec<usize> = cert.group_a.iter().chain(&cert.group_b).copied().collect();
    // hubs are the labeled nodes; their labels stay visible in every pass
    let hubs = g.labeled_nodes();
    let m = MaskMatrix::from_visible(&g, &hubs);
    Ok((cert, g, whites, m))
}

/// A random 2-layer GCN cannot tell the eight white nodes of the Thm-2
/// graph apart, with or without the visible hub labels in the input.
pub fn wl_collapse(seeds: u64) -> Result<Check> {
    let (_, g, whites, m) = thm2_setup()?;
    let with_labels = build_input(&g, None, &m)?;
    let mut worst: f64 = 0.0;
    for seed in 0..seeds {
        for input in [g.features(), &with_labels] {
            let model = random_gcn(input.cols(), g.num_classes(), seed)?;
            let (z, _) = model.forward(&g, input, Mode::Eval, &mut crate::rng(seed))?;
            worst = worst.max(max_pairwise_difference(&z, &whites));
        }
    }
    Ok(check(
        "wl_collapse",
        worst < 1e-6,
        format!("max pairwise embedding difference {worst:.3e} over {seeds} seeds (limit 1e-6)"),
    ))
}

fn thm2_inference(variant: Variant, k: usize, t: usize, seed: u64) -> Result<(clgnn::collective::Inference, Graph, SeparationCertificate, Vec<usize>)> {
    let (cert, g, whites, m) = thm2_setup()?;
    let input_dim = g.feature_dim() + g.num_classes();
    let snapshots = (0..t)
        .map(|i| random_gcn(input_dim, g.num_classes(), seed * 100 + i as u64))
        .collect::<Result<Vec<_>>>()?;
    let history = ClHistory::from_snapshots(snapshots, Scenario::TestPartial, variant);
    let cfg = ClConfig {
        k,
        t,
        variant,
        ..ClConfig::default()
    };
    let inf = cl_infer(&history, &g, &cfg, &MaskSource::Fixed(vec![m]), &mut crate::rng(seed))?;
    Ok((inf, g, cert, whites))
}

/// Sampled predicted labels make the averaged embeddings of the two white
/// groups differ at the last iteration.
pub fn cl_separation(seeds: u64, k: usize, t: usize, required: u64) -> Result<Check> {
    let mut separated = 0;
    let mut gaps = Vec::new();
    for seed in 0..seeds {
        let (inf, _, cert, _) = thm2_inference(Variant::Collective, k, t, seed)?;
        let z = &inf.iterations.last().expect("t >= 1").embedding;
        let gap = group_mean_gap(z, &cert.group_a, &cert.group_b);
        separated += u64::from(gap > 1e-3);
        gaps.push(gap);
    }
    let min = gaps.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(check(
        "cl_separation",
        separated >= required,
        format!(
            "group mean gap > 1e-3 in {separated} of {seeds} seeds (need {required}), smallest gap {min:.3e}, K={k}, T={t}"
        ),
    ))
}

/// Feeding probability rows instead of samples keeps all eight white nodes
/// identical at every iteration.
pub fn deterministic_symmetry(seeds: u64, t: usize) -> Result<Check> {
    let mut worst: f64 = 0.0;
    for seed in 0..seeds {
        let (inf, _, _, whites) = thm2_inference(Variant::Deterministic, 1, t, seed)?;
        for it in &inf.iterations {
            worst = worst.max(max_pairwise_difference(&it.embedding, &whites));
        }
    }
    Ok(check(
        "deterministic_symmetry",
        worst < 1e-9,
        format!("max pairwise difference {worst:.3e} over {t} iterations and {seeds} seeds (limit 1e-9)"),
    ))
}

/// Every label configuration of `g` with its probability under independent
/// rows of `probs`, as one-hot matrices.
fn label_configurations(probs: &Matrix) -> Vec<(f64, Matrix)> {
    let (n, c) = probs.shape();
    let total = c.pow(n as u32);
    (0..total)
        .map(|mut code| {
            let mut y = Matrix::zeros(n, c);
            let mut weight = 1.0;
            for v in 0..n {
                let cls = code % c;
                code /= c;
                y.set(v, cls, 1.0);
                weight *= probs.get(v, cls);
            }
            (weight, y)
        })
        .collect()
}

/// `E[z]` of `model` over all label configurations drawn from `probs`.
fn exact_expected_embedding(model: &ModelState, g: &Graph, m: &MaskMatrix, probs: &Matrix) -> Result<Matrix> {
    let mut expected = Matrix::zeros(g.num_nodes(), model.embedding_dim());
    for (w, y) in label_configurations(probs) {
        let labels = PredictedLabels::Sampled(LabelSampleSet {
            samples: vec![y],
            source_iteration: 1,
        });
        let z = mc_embedding(model, g, m, &labels, Mode::Eval, &mut crate::rng(0))?;
        expected.axpy(w, &z)?;
    }
    Ok(expected)
}

/// On the radius-2 certificate a 2-layer model gives the pair identical
/// embeddings. One round of predicted labels, drawn from a first snapshot
/// fitted to the label pair, makes the exact expected embeddings of a random
/// second snapshot differ.
pub fn radius_extension(seeds: u64, required: u64) -> Result<(Check, SeparationCertificate)> {
    let cert = make_prop2_graph(2)?;
    let g = cert.graph()?;
    let (u, v) = (cert.group_a[0], cert.group_b[0]);
    let (a, b) = cert.label_pair.expect("radius certificates carry a label pair");
    let m = MaskMatrix::zeros(g.num_nodes());
    let input_dim = g.feature_dim() + g.num_classes();
    let mut baseline_worst: f64 = 0.0;
    let mut separated = 0;
    let mut min_gap = f64::INFINITY;
    for seed in 0..seeds {
        let base = random_gcn(g.feature_dim(), g.num_classes(), seed)?;
        let (z, _) = base.forward(&g, g.features(), Mode::Eval, &mut crate::rng(seed))?;
        baseline_worst = baseline_worst.max(max_pairwise_difference(&z, &[u, v]));

        let first = ModelState::new(&pair_fit_model(), input_dim, g.num_classes(), &mut crate::rng(seed * 100))?;
        let first = fit_label_pair(&g, a, b, first, seed)?;
        let second = random_gcn(input_dim, g.num_classes(), seed * 100 + 1)?;
        let z0 = mc_embedding(&first, &g, &m, &PredictedLabels::Zero, Mode::Eval, &mut crate::rng(seed))?;
        baseline_worst = baseline_worst.max(max_pairwise_difference(&z0, &[u, v]));
        let probs = first.predict_probs(&z0)?;
        let expected = exact_expected_embedding(&second, &g, &m, &probs)?;
        let gap = max_pairwise_difference(&expected, &[u, v]);
        separated += u64::from(gap > 1e-3);
        min_gap = min_gap.min(gap);
    }
    let passed = baseline_worst < 1e-6 && separated >= required;
    let detail = format!(
        "pair ({u}, {v}): baseline difference {baseline_worst:.3e} (limit 1e-6); \
         expected collective gap > 1e-3 in {separated} of {seeds} seeds (need {required}), smallest {min_gap:.3e}"
    );
    Ok((check("radius_extension", passed, detail), cert))
}

/// The first snapshot of the chain, trained on the zero label channel to
/// put the certified label pair `a`, `b` in different classes. Their
/// radius-`d` views differ, so a `d`-layer model can do this.
fn pair_fit_model() -> ModelConfig {
    ModelConfig {
        dropout_p: 0.0,
        ..ModelConfig::gcn()
    }
}

fn fit_label_pair(g: &Graph, a: usize, b: usize, model: ModelState, seed: u64) -> Result<ModelState> {
    let mut labels = vec![None; g.num_nodes()];
    labels[a] = Some(0);
    labels[b] = Some(1);
    let g_lab = g.with_labels(labels, g.num_classes())?;
    let split = SplitSpec {
        train_labeled: vec![a, b],
        validation: Vec::new(),
        test_eval: Vec::new(),
        test_labeled: Vec::new(),
    };
    let input = build_input(g, None, &MaskMatrix::zeros(g.num_nodes()))?;
    // the pair's views differ only through degree normalization, so the fit
    // needs large weights: no decay, no clipping, no dropout, and many small
    // steps, since large ones kill the hidden units
    let cfg = TrainConfig {
        epochs: PAIR_FIT_EPOCHS,
        adam: AdamConfig::new(0.01, 0.0),
        patience: None,
        clip_norm: None,
    };
    Ok(train_baseline(model, &g_lab, &input, &split, &cfg, &mut crate::rng(seed))?.0)
}

fn random_instance(seed: u64, n: usize, classes: usize, hidden: usize) -> Result<(Graph, ModelState, MaskMatrix, Matrix)> {
    let mut r = crate::rng(seed);
    let mut edges = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if r.random::<f64>() < 0.4 {
                edges.push((a, b));
            }
        }
    }
    let labels = (0..n).map(|_| Some(r.random_range(0..classes))).collect();
    let g = Graph::new(n, edges, Matrix::uniform(n, 2, 1.0, &mut r), labels, classes)?;
    let cfg = ModelConfig {
        hidden_dim: hidden,
        ..ModelConfig::gcn()
    };
    let model = ModelState::new(&cfg, 2 + classes, classes, &mut r)?;
    let labeled: Vec<usize> = (0..n).collect();
    let m = sample_mask(&g, &labeled, Scenario::TestPartial, 0.5, &mut r)?;
    let probs = softmax_rows(&Matrix::uniform(n, classes, 2.0, &mut r));
    Ok((g, model, m, probs))
}

/// The loss of the averaged embedding never exceeds the average single-sample
/// loss by more than Monte Carlo error.
pub fn surrogate_bound(instances: u64, samples: usize) -> Result<Check> {
    let mut worst_margin = f64::INFINITY;
    let mut held = 0;
    for i in 0..instances {
        let (g, model, m, probs) = random_instance(10_000 + i, 8, 3, 8)?;
        let mut r = crate::rng(20_000 + i);
        let set = sample_categorical(&probs, samples, 1, &mut r);
        let mut losses = Vec::with_capacity(samples);
        let mut mean_z = Matrix::zeros(g.num_nodes(), model.embedding_dim());
        for y in set.samples {
            let single = PredictedLabels::Sampled(LabelSampleSet {
                samples: vec![y],
                source_iteration: 1,
            });
            let z = mc_embedding(&model, &g, &m, &single, Mode::Eval, &mut r)?;
            losses.push(hidden_label_loss(&model, &g, &m, &z)?);
            mean_z.axpy(1.0 / samples as f64, &z)?;
        }
        let (mean_loss, se) = crate::stats::mean_and_se(&losses);
        let at_mean = hidden_label_loss(&model, &g, &m, &mean_z)?;
        let margin = (mean_loss - at_mean + 3.0 * se) / se.max(1e-300);
        worst_margin = worst_margin.min(margin);
        held += u64::from(mean_loss >= at_mean - 3.0 * se);
    }
    Ok(check(
        "surrogate_bound",
        held == instances,
        format!(
            "mean single-sample loss >= loss at mean embedding - 3 SE in {held} of {instances} instances, {samples} samples each; tightest slack {worst_margin:.3} SE"
        ),
    ))
}

/// The Monte Carlo embedding mean matches exhaustive enumeration of the
/// label configurations on a 4-node, 2-class instance.
pub fn unbiasedness(reps: usize, k: usize) -> Result<Check> {
    let (g, model, m, probs) = random_instance(30_000, 4, 2, 4)?;
    let exact = exact_expected_embedding(&model, &g, &m, &probs)?;
    let mut r = crate::rng(30_001);
    let (rows, cols) = exact.shape();
    let mut sum = Matrix::zeros(rows, cols);
    let mut sum_sq = Matrix::zeros(rows, cols);
    for _ in 0..reps {
        let labels = PredictedLabels::Sampled(sample_categorical(&probs, k, 1, &mut r));
        let z = mc_embedding(&model, &g, &m, &labels, Mode::Eval, &mut r)?;
        sum.add_assign(&z)?;
        for (acc, x) in sum_sq.data_mut().iter_mut().zip(z.data()) {
            *acc += x * x;
        }
    }
    let n = reps as f64;
    let mut worst_z: f64 = 0.0;
    let mut all_within = true;
    for i in 0..rows * cols {
        let mean = sum.data()[i] / n;
        let var = ((sum_sq.data()[i] - n * mean * mean) / (n - 1.0)).max(0.0);
        let se = (var / n).sqrt();
        let dev = (mean - exact.data()[i]).abs();
        if se > 0.0 {
            worst_z = worst_z.max(dev / se);
            all_within &= dev <= 3.0 * se;
        } else {
            all_within &= dev < 1e-12;
        }
    }
    Ok(check(
        "unbiasedness",
        all_within,
        format!(
            "{} embedding entries, K={k} x {reps} repetitions; largest deviation {worst_z:.3} standard errors (limit 3)",
            rows * cols
        ),
    ))
}

fn certificate_check(name: &str, cert: &SeparationCertificate) -> Check {
    let facts: Vec<String> = cert
        .facts
        .iter()
        .map(|f| format!("{}={}", f.name, if f.holds { "ok" } else { "FAILED" }))
        .collect();
    check(name, cert.all_hold(), facts.join(", "))
}

/// The full battery with the reference sizes.
pub fn run_battery() -> Result<BatteryReport> {
    let thm2 = make_thm2_graph()?;
    let prop2_d1 = make_prop2_graph(1)?;
    let (radius, prop2_d2) = radius_extension(20, 18)?;
    let checks = vec![
        certificate_check("thm2_certificate", &thm2),
        certificate_check("prop2_certificate_d1", &prop2_d1),
        certificate_check("prop2_certificate_d2", &prop2_d2),
        wl_collapse(10)?,
        cl_separation(20, 10, 2, 18)?,
        deterministic_symmetry(20, 3)?,
        radius,
        surrogate_bound(10, 200)?,
        unbiasedness(1_000, 10)?,
    ];
    let passed = checks.iter().all(|c| c.passed);
    Ok(BatteryReport {
        schema_version: SCHEMA_VERSION,
        checks,
        certificates: vec![thm2, prop2_d1, prop2_d2],
        passed,
    })
}
