use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};
use clgnn::collective::{Scenario, Variant};
use clgnn::graph::{save_graph, TestLabelPlan};
use clgnn::ModelKind;
use clgnn_cli::battery::run_battery;
use clgnn_cli::config::{Ablation, DatasetSpec, ExperimentConfig};
use clgnn_cli::experiment::{evaluate, format_predictions, run, TrialReport};
use clgnn_cli::metrics::Metric;
use clgnn_cli::synth::{synth_homophily, SynthSpec};

const UNLABELED_PATIENCE: usize = 20;

#[derive(Parser)]
#[command(name = "clgnn", version, about = "Collective learning for graph neural networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Paired baseline and collective trials.
    Run(RunArgs),
    /// Like `run`, with ablation variants trained on the same trials.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        /// `variant@scenario`, repeatable. Defaults to the uniform-label and
        /// true-labels-only ablations.
        #[arg(long = "ablation")]
        ablations: Vec<String>,
    },
    /// The expressiveness battery on the certified graphs.
    Expressiveness {
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Write a synthetic homophily graph as edge, feature and label files.
    Synth {
        #[command(flatten)]
        synth: SynthArgs,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Re-run inference for a stored trial and write its predictions.
    Eval {
        #[arg(long)]
        run_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        trial: usize,
        /// Ablation key such as `uniform_labels@test_unlabeled`.
        #[arg(long)]
        ablation: Option<String>,
        #[arg(long)]
        seed: u64,
        /// Prediction file; stdout when absent.
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
}

#[derive(Args, Clone)]
struct SynthArgs {
    #[arg(long)]
    nodes: Option<usize>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    communities: Option<usize>,
    #[arg(long)]
    homophily: Option<f64>,
    #[arg(long)]
    avg_degree: Option<f64>,
    #[arg(long)]
    feature_dim: Option<usize>,
    #[arg(long)]
    feature_signal: Option<f64>,
    /// Noise standard deviation; `inf` gives features that carry no signal.
    #[arg(long)]
    feature_noise: Option<f64>,
    /// Comma-separated relative community sizes.
    #[arg(long, value_delimiter = ',')]
    block_weights: Option<Vec<f64>>,
}

impl SynthArgs {
    fn apply(&self, spec: &mut SynthSpec) {
        if let Some(v) = self.nodes {
            spec.nodes = v;
        }
        if let Some(v) = self.classes {
            spec.classes = v;
        }
        if self.communities.is_some() {
            spec.communities = self.communities;
        }
        if let Some(v) = self.homophily {
            spec.homophily = v;
        }
        if let Some(v) = self.avg_degree {
            spec.avg_degree = v;
        }
        if let Some(v) = self.feature_dim {
            spec.feature_dim = v;
        }
        if let Some(v) = self.feature_signal {
            spec.feature_signal = v;
        }
        if let Some(v) = self.feature_noise {
            spec.feature_noise = v.is_finite().then_some(v);
        }
        if self.block_weights.is_some() {
            spec.block_weights = self.block_weights.clone();
        }
    }
}

#[derive(Args, Clone)]
struct RunArgs {
    /// JSON file whose fields override the flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    model: Option<ModelKind>,
    #[arg(long)]
    scenario: Option<Scenario>,
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long, value_enum)]
    metric: Option<Metric>,
    /// Directory for the report, manifest, splits and snapshots.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    no_collective: bool,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    t: Option<usize>,
    #[arg(long)]
    j: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    train_labeled: Option<usize>,
    /// Fraction of the remaining labeled nodes observed at test time.
    #[arg(long)]
    test_label_fraction: Option<f64>,
    #[arg(long)]
    test_size: Option<usize>,
    /// Directory holding `cora.content` and `cora.cites`.
    #[arg(long, conflicts_with = "edges")]
    cora_dir: Option<PathBuf>,
    #[arg(long, requires_all = ["features", "labels"])]
    edges: Option<PathBuf>,
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[command(flatten)]
    synth: SynthArgs,
}

impl RunArgs {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig {
            seed: self.seed,
            ..ExperimentConfig::default()
        };
        if let Some(dir) = &self.cora_dir {
            cfg.dataset = DatasetSpec::cora_dir(dir);
        } else if let (Some(e), Some(f), Some(l)) = (&self.edges, &self.features, &self.labels) {
            cfg.dataset = DatasetSpec::Files {
                edges: e.clone(),
                features: f.clone(),
                labels: l.clone(),
            };
        } else if let DatasetSpec::Synthetic(spec) = &mut cfg.dataset {
            self.synth.apply(spec);
        }
        if let Some(v) = self.trials {
            cfg.trials = v;
        }
        if let Some(v) = self.model {
            cfg.model.kind = v;
        }
        if let Some(v) = self.scenario {
            cfg.cl.scenario = v;
            if v == Scenario::TestUnlabeled {
                // unlabeled test graphs: few long, early-stopped iterations
                cfg.split.test_labeled = TestLabelPlan::None;
                cfg.cl.t = 3;
                cfg.cl.j = 500;
                cfg.cl.patience = Some(UNLABELED_PATIENCE);
            }
        }
        if let Some(v) = self.variant {
            cfg.cl.variant = v;
        }
        if let Some(v) = self.metric {
            cfg.metric = v;
        }
        if self.output.is_some() {
            cfg.output = self.output.clone();
        }
        cfg.collective = !self.no_collective;
        if let Some(v) = self.k {
            cfg.cl.k = v;
        }
        if let Some(v) = self.t {
            cfg.cl.t = v;
        }
        if let Some(v) = self.j {
            cfg.cl.j = v;
        }
        if let Some(v) = self.epochs {
            cfg.baseline.epochs = v;
        }
        if let Some(v) = self.lr {
            cfg.baseline.adam.lr = v;
            cfg.cl.adam.lr = v;
        }
        if let Some(v) = self.weight_decay {
            cfg.baseline.adam.weight_decay = v;
            cfg.cl.adam.weight_decay = v;
        }
        if let Some(v) = self.train_labeled {
            cfg.split.train_labeled = v;
        }
        if let Some(v) = self.test_label_fraction {
            cfg.split.test_labeled = TestLabelPlan::RandomFraction(v);
        }
        if self.test_size.is_some() {
            cfg.split.test_size = self.test_size;
        }
        if let Some(path) = &self.config {
            cfg = ExperimentConfig::overlay_file(&cfg, path)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_ablation(s: &str, default_scenario: Scenario) -> Result<Ablation> {
    let (variant, scenario) = match s.split_once('@') {
        Some((v, sc)) => (v, Some(sc)),
        None => (s, None),
    };
    Ok(Ablation {
        variant: variant.parse().map_err(|e| anyhow!("--ablation: {e}"))?,
        scenario: match scenario {
            Some(sc) => sc.parse().map_err(|e| anyhow!("--ablation: {e}"))?,
            None => default_scenario,
        },
    })
}

fn print_summary(report: &TrialReport) {
    let s = &report.summary;
    eprintln!("baseline    {:.4} ± {:.4}", s.baseline.mean, s.baseline.se);
    let line = |name: &str, c: &clgnn_cli::experiment::Comparison| {
        let p = c.t_test.map_or_else(|| "n/a".to_string(), |t| format!("{:.4}", t.p_two_sided));
        eprintln!(
            "{name:<11} {:.4} ± {:.4}  gain {:+.4} ± {:.4}  p {p}",
            c.metric.mean, c.metric.se, c.improvement.mean, c.improvement.se
        );
    };
    line("collective", &s.collective);
    for (key, c) in &s.ablations {
        line(key, c);
    }
}

fn emit(report: &TrialReport) -> Result<()> {
    print_summary(report);
    if report.config.output.is_none() {
        print!("{}", report.to_json()?);
    }
    Ok(())
}

fn main_inner(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run(args) => {
            emit(&run(&args.config()?)?)?;
        }
        Command::Ablate { run: args, ablations } => {
            let mut cfg = args.config()?;
            if ablations.is_empty() {
                cfg.ablations = vec![Ablation {
                    variant: Variant::UniformLabels,
                    scenario: cfg.cl.scenario,
                }];
                if cfg.cl.scenario == Scenario::TestPartial {
                    cfg.ablations.push(Ablation {
                        variant: Variant::TrueLabelsOnly,
                        scenario: Scenario::TestPartial,
                    });
                }
            } else {
                cfg.ablations = ablations
                    .iter()
                    .map(|s| parse_ablation(s, cfg.cl.scenario))
                    .collect::<Result<_>>()?;
            }
            cfg.validate()?;
            emit(&run(&cfg)?)?;
        }
        Command::Expressiveness { output } => {
            let report = run_battery()?;
            for c in &report.checks {
                eprintln!("{} {:<24} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            let body = report.to_json()?;
            match output {
                Some(path) => std::fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?,
                None => print!("{body}"),
            }
            if !report.passed {
                return Ok(ExitCode::from(2));
            }
        }
        Command::Synth { synth, seed, out_dir } => {
            let mut spec = SynthSpec::default();
            synth.apply(&mut spec);
            let g = synth_homophily(&spec, &mut clgnn_cli::rng(seed))?;
            std::fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
            save_graph(
                &g,
                out_dir.join("edges.tsv"),
                out_dir.join("features.tsv"),
                out_dir.join("labels.tsv"),
            )?;
            eprintln!("{} nodes, {} edges written to {}", g.num_nodes(), g.num_edges(), out_dir.display());
        }
        Command::Eval {
            run_dir,
            trial,
            ablation,
            seed,
            predictions,
        } => {
            let eval = evaluate(&run_dir, trial, ablation.as_deref(), seed)?;
            eprintln!("test metric {:.4} on {} nodes", eval.metric, eval.test_eval.len());
            let body = format_predictions(&eval.inference, &eval.test_eval);
            match predictions {
                Some(path) => std::fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?,
                None => print!("{body}"),
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match main_inner(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
