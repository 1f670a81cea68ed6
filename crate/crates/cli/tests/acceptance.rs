//! One test per acceptance criterion. Each prints a single
//! `PASS`/`FAIL`/`SKIP` line with the measured values.

#[path = "../../core/tests/support/gradcheck.rs"]
mod gradcheck;

use std::process::Command;
use std::sync::{Mutex, MutexGuard};
use std::time::{Duration, Instant};

use clgnn::collective::{Scenario, Variant};
use clgnn::graph::{SplitPlan, TestLabelPlan};
use clgnn::TrainConfig;
use clgnn_cli::battery;
use clgnn_cli::config::{Ablation, DatasetSpec, ExperimentConfig};
use clgnn_cli::experiment::run;
use clgnn_cli::synth::SynthSpec;

// Criteria run one at a time so each runtime is measured alone.
static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(criterion: u32, passed: bool, elapsed: Duration, limit: Duration, detail: &str) {
    let within = elapsed <= limit;
    let verdict = if passed && within { "PASS" } else { "FAIL" };
    println!(
        "{verdict} criterion {criterion:>2}: {detail} [{:.1}s, limit {}s]",
        elapsed.as_secs_f64(),
        limit.as_secs()
    );
    assert!(passed, "criterion {criterion} failed: {detail}");
    assert!(within, "criterion {criterion} exceeded its runtime limit");
}

#[test]
fn criterion_01_gradient_integrity() {
    let _guard = serial();
    let start = Instant::now();
    let checks = gradcheck::run_all(20);
    let worst = checks.iter().map(|c| c.worst).fold(0.0, |a: f64, b| if b.is_nan() { b } else { a.max(b) });
    let failing: Vec<&str> = checks.iter().filter(|c| !(c.worst < 1e-4)).map(|c| c.name).collect();
    let detail = format!(
        "{} backward passes x {} instances, worst relative error {worst:.2e} (limit 1e-4), failing {failing:?}",
        checks.len(),
        checks.iter().map(|c| c.instances).min().unwrap_or(0)
    );
    report(1, failing.is_empty(), start.elapsed(), Duration::from_secs(60), &detail);
}

#[test]
fn criterion_02_wl_collapse() {
    let _guard = serial();
    let start = Instant::now();
    let c = battery::wl_collapse(10).unwrap();
    report(2, c.passed, start.elapsed(), Duration::from_secs(10), &c.detail);
}

#[test]
fn criterion_03_collective_separation() {
    let _guard = serial();
    let start = Instant::now();
    let c = battery::cl_separation(20, 10, 2, 18).unwrap();
    report(3, c.passed, start.elapsed(), Duration::from_secs(60), &c.detail);
}

#[test]
fn criterion_04_deterministic_variant_keeps_symmetry() {
    let _guard = serial();
    let start = Instant::now();
    let c = battery::deterministic_symmetry(20, 3).unwrap();
    report(4, c.passed, start.elapsed(), Duration::from_secs(60), &c.detail);
}

#[test]
fn criterion_05_radius_extension() {
    let _guard = serial();
    let start = Instant::now();
    let (c, cert) = battery::radius_extension(20, 18).unwrap();
    let passed = c.passed && cert.all_hold() && cert.d == Some(2);
    report(5, passed, start.elapsed(), Duration::from_secs(60), &c.detail);
}

#[test]
fn criterion_06_surrogate_bound() {
    let _guard = serial();
    let start = Instant::now();
    let c = battery::surrogate_bound(10, 200).unwrap();
    report(6, c.passed, start.elapsed(), Duration::from_secs(60), &c.detail);
}

#[test]
fn criterion_07_unbiasedness() {
    let _guard = serial();
    let start = Instant::now();
    let c = battery::unbiasedness(1_000, 10).unwrap();
    report(7, c.passed, start.elapsed(), Duration::from_secs(60), &c.detail);
}

const UNIFORM_UNLABELED: Ablation = Ablation {
    variant: Variant::UniformLabels,
    scenario: Scenario::TestUnlabeled,
};
const UNIFORM_PARTIAL: Ablation = Ablation {
    variant: Variant::UniformLabels,
    scenario: Scenario::TestPartial,
};

#[test]
fn criterion_08_semi_supervised_gain() {
    let _guard = serial();
    let start = Instant::now();
    // 600 nodes, 3 classes, homophily 0.9, pure-noise features, 30 connected
    // training labels (5%), half of the remaining labels observed at test time
    let cfg = ExperimentConfig {
        seed: 0,
        trials: 5,
        ablations: vec![UNIFORM_PARTIAL, UNIFORM_UNLABELED],
        ..ExperimentConfig::default()
    };
    let r = run(&cfg).unwrap();
    let s = &r.summary;
    let p = |c: &clgnn_cli::experiment::Comparison| c.t_test.map_or(f64::NAN, |t| t.p_two_sided);
    let uniform = &s.ablations[&UNIFORM_UNLABELED.key()];
    let uniform_partial = &s.ablations[&UNIFORM_PARTIAL.key()];
    let passed = s.collective.significant_gain(0.05) && !uniform_partial.significant_gain(0.05);
    let detail = format!(
        "baseline {:.3}, CL {:.3} (gain {:+.3} ± {:.3}, p {:.3}); uniform labels: gain {:+.3} ± {:.3}, p {:.3}; \
         uniform labels with unlabeled test graph (not gated): gain {:+.3} ± {:.3}, p {:.3}",
        s.baseline.mean,
        s.collective.metric.mean,
        s.collective.improvement.mean,
        s.collective.improvement.se,
        p(&s.collective),
        uniform_partial.improvement.mean,
        uniform_partial.improvement.se,
        p(uniform_partial),
        uniform.improvement.mean,
        uniform.improvement.se,
        p(uniform),
    );
    report(8, passed, start.elapsed(), Duration::from_secs(600), &detail);
}

#[test]
fn criterion_09_cora_soft_check() {
    let Ok(dir) = std::env::var("CLGNN_CORA_DIR") else {
        println!("SKIP criterion  9: set CLGNN_CORA_DIR to a directory with cora.content and cora.cites");
        return;
    };
    let _guard = serial();
    let start = Instant::now();
    let base = ExperimentConfig::default();
    let cfg = ExperimentConfig {
        dataset: DatasetSpec::cora_dir(dir),
        split: SplitPlan {
            train_labeled: 85,
            test_labeled: TestLabelPlan::None,
            test_size: Some(1000),
            validation_size: None,
        },
        cl: clgnn::collective::ClConfig {
            scenario: Scenario::TestUnlabeled,
            t: 3,
            j: 500,
            patience: Some(20),
            ..base.cl
        },
        seed: 0,
        trials: 5,
        ..base
    };
    let r = run(&cfg).unwrap();
    let c = &r.summary.collective;
    let detail = format!(
        "GCN {:.3}, CL-GCN {:.3}, gain {:+.2} points ± {:.2} (reference gain +6.29), p {:.3}",
        r.summary.baseline.mean,
        c.metric.mean,
        100.0 * c.improvement.mean,
        100.0 * c.improvement.se,
        c.t_test.map_or(f64::NAN, |t| t.p_two_sided)
    );
    report(9, c.significant_gain(0.05), start.elapsed(), Duration::from_secs(3600), &detail);
}

fn tiny_config() -> ExperimentConfig {
    ExperimentConfig {
        dataset: DatasetSpec::Synthetic(SynthSpec {
            nodes: 120,
            avg_degree: 6.0,
            feature_dim: 4,
            ..SynthSpec::default()
        }),
        baseline: TrainConfig {
            epochs: 30,
            ..TrainConfig::default()
        },
        cl: clgnn::collective::ClConfig {
            k: 3,
            t: 2,
            j: 10,
            ..Default::default()
        },
        split: SplitPlan {
            train_labeled: 12,
            ..ExperimentConfig::default().split
        },
        trials: 1,
        seed: 11,
        ablations: vec![UNIFORM_UNLABELED],
        ..ExperimentConfig::default()
    }
}

fn clgnn(args: &[&str]) -> std::process::Output {
    let out = Command::new(env!("CARGO_BIN_EXE_clgnn")).args(args).output().unwrap();
    assert!(out.status.success(), "clgnn {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

#[test]
fn criterion_10_determinism() {
    let _guard = serial();
    let start = Instant::now();
    let mut same = Vec::new();

    let cfg = tiny_config();
    same.push(("run report", run(&cfg).unwrap().to_json().unwrap() == run(&cfg).unwrap().to_json().unwrap()));
    let separation = || serde_json::to_string(&battery::cl_separation(3, 10, 2, 3).unwrap()).unwrap();
    same.push(("separation check", separation() == separation()));

    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("tiny.json");
    // the config file overrides flags, so leave `output` to the command line
    let mut cfg_json = serde_json::to_value(tiny_config()).unwrap();
    cfg_json.as_object_mut().unwrap().remove("output");
    std::fs::write(&cfg_path, cfg_json.to_string()).unwrap();
    let cfg_arg = cfg_path.to_str().unwrap();
    let a = clgnn(&["run", "--seed", "11", "--config", cfg_arg]).stdout;
    let b = clgnn(&["run", "--seed", "11", "--config", cfg_arg]).stdout;
    same.push(("run command output", !a.is_empty() && a == b));

    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        clgnn(&["synth", "--seed", "5", "--nodes", "80", "--out-dir", out.to_str().unwrap()]);
        let files: Vec<Vec<u8>> = ["edges.tsv", "features.tsv", "labels.tsv"]
            .iter()
            .map(|f| std::fs::read(out.join(f)).unwrap())
            .collect();
        outputs.push(files);
    }
    same.push(("synth files", outputs[0] == outputs[1]));

    let mut preds = Vec::new();
    let out = dir.path().join("run");
    for _ in 0..2 {
        if out.exists() {
            std::fs::remove_dir_all(&out).unwrap();
        }
        clgnn(&["run", "--seed", "11", "--config", cfg_arg, "--output", out.to_str().unwrap()]);
        let p = out.join("preds.tsv");
        clgnn(&["eval", "--run-dir", out.to_str().unwrap(), "--seed", "3", "--predictions", p.to_str().unwrap()]);
        preds.push((std::fs::read(out.join("report.json")).unwrap(), std::fs::read(p).unwrap()));
    }
    same.push(("stored report and predictions", preds[0] == preds[1]));

    let differing: Vec<&str> = same.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    let detail = format!("{} reruns compared byte for byte, differing {differing:?}", same.len());
    report(10, differing.is_empty(), start.elapsed(), Duration::from_secs(60), &detail);
}
