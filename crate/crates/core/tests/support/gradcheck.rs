//! Central finite-difference checks for every hand-written backward pass.
//!
//! Each check builds a random instance, computes a scalar loss and its
//! analytic gradient, and compares against `(f(x+ε) - f(x-ε)) / 2ε`. The
//! reported error is `‖g_analytic - g_numeric‖ / max(‖g_analytic‖ + ‖g_numeric‖, 1e-12)`.

use clgnn::collective::{accumulate_masked_loss, sample_categorical, sample_mask, PredictedLabels, Scenario};
use clgnn::gnn::{ModelConfig, ModelKind, ModelState};
use clgnn::graph::Graph;
use clgnn::linalg::{dropout, masked_cross_entropy, one_hot, relu, relu_backward, softmax_rows, Matrix, Mode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const EPS: f64 = 1e-5;

pub struct CheckResult {
    pub name: &'static str,
    pub instances: usize,
    pub worst: f64,
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / (na + nb).max(1e-12)
}

/// Maximum that keeps a NaN instead of discarding it.
fn worst(a: f64, b: f64) -> f64 {
    if b.is_nan() || b > a {
        b
    } else {
        a
    }
}

fn numeric_grad(x: &Matrix, f: &dyn Fn(&Matrix) -> f64) -> Vec<f64> {
    let mut probe = x.clone();
    (0..x.data().len())
        .map(|i| {
            let orig = probe.data()[i];
            probe.data_mut()[i] = orig + EPS;
            let up = f(&probe);
            probe.data_mut()[i] = orig - EPS;
            let down = f(&probe);
            probe.data_mut()[i] = orig;
            (up - down) / (2.0 * EPS)
        })
        .collect()
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_graph(n: usize, p: f64, feats: usize, classes: usize, r: &mut ChaCha8Rng) -> Graph {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if r.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    let labels = (0..n).map(|_| Some(r.random_range(0..classes))).collect();
    Graph::new(n, edges, Matrix::uniform(n, feats, 1.0, r), labels, classes).unwrap()
}

/// Matrix whose entries stay at least `gap` away from zero.
fn away_from_zero(rows: usize, cols: usize, gap: f64, r: &mut ChaCha8Rng) -> Matrix {
    let mut m = Matrix::uniform(rows, cols, 1.0, r);
    for x in m.data_mut() {
        if x.abs() < gap {
            *x = if *x < 0.0 { -gap } else { gap };
        }
    }
    m
}

fn cross_entropy(instances: usize) -> f64 {
    (0..instances)
        .map(|i| {
            let mut r = rng(1000 + i as u64);
            let logits = Matrix::uniform(5, 3, 2.0, &mut r);
            let classes: Vec<Option<usize>> = (0..5).map(|_| Some(r.random_range(0..3))).collect();
            let targets = one_hot(&classes, 3);
            let mut weights: Vec<f64> = (0..5).map(|_| f64::from(u8::from(r.random::<bool>()))).collect();
            weights[0] = 1.0;
            let (_, analytic) = masked_cross_entropy(&softmax_rows(&logits), &targets, &weights).unwrap();
            let f = |l: &Matrix| masked_cross_entropy(&softmax_rows(l), &targets, &weights).unwrap().0;
            rel_err(analytic.data(), &numeric_grad(&logits, &f))
        })
        .fold(0.0, worst)
}

fn relu_op(instances: usize) -> f64 {
    (0..instances)
        .map(|i| {
            let mut r = rng(2000 + i as u64);
            let x = away_from_zero(4, 5, 1e-3, &mut r);
            let up = Matrix::uniform(4, 5, 1.0, &mut r);
            let analytic = relu_backward(&x, &up).unwrap();
            let f = |x: &Matrix| relu(x).data().iter().zip(up.data()).map(|(a, b)| a * b).sum();
            rel_err(analytic.data(), &numeric_grad(&x, &f))
        })
        .fold(0.0, worst)
}

fn dropout_op(instances: usize) -> f64 {
    (0..instances)
        .map(|i| {
            let mut r = rng(3000 + i as u64);
            let x = Matrix::uniform(6, 4, 1.0, &mut r);
            let up = Matrix::uniform(6, 4, 1.0, &mut r);
            let seed = 3500 + i as u64;
            let (_, mask) = dropout(&x, 0.5, Mode::Train, &mut rng(seed)).unwrap();
            let analytic = mask.unwrap().backward(&up);
            let f = |x: &Matrix| {
                let (y, _) = dropout(x, 0.5, Mode::Train, &mut rng(seed)).unwrap();
                y.data().iter().zip(up.data()).map(|(a, b)| a * b).sum()
            };
            rel_err(analytic.data(), &numeric_grad(&x, &f))
        })
        .fold(0.0, worst)
}

fn propagation(instances: usize) -> f64 {
    (0..instances)
        .map(|i| {
            let mut r = rng(4000 + i as u64);
            let g = random_graph(8, 0.35, 1, 2, &mut r);
            let h = Matrix::uniform(8, 3, 1.0, &mut r);
            let up = Matrix::uniform(8, 3, 1.0, &mut r);
            // the propagation operator is symmetric, so it is its own adjoint
            let analytic = g.sym_norm_propagate(&up).unwrap();
            let f = |h: &Matrix| {
                g.sym_norm_propagate(h).unwrap().data().iter().zip(up.data()).map(|(a, b)| a * b).sum()
            };
            rel_err(analytic.data(), &numeric_grad(&h, &f))
        })
        .fold(0.0, worst)
}

fn neighbor_mean(instances: usize) -> f64 {
    (0..instances)
        .map(|i| {
            let mut r = rng(5000 + i as u64);
            let g = random_graph(9, 0.5, 1, 2, &mut r);
            let sample = g.sample_neighbors(Some(3), &mut r);
            let h = Matrix::uniform(9, 2, 1.0, &mut r);
            let up = Matrix::uniform(9, 2, 1.0, &mut r);
            let analytic = sample.backward(&up);
            let f = |h: &Matrix| sample.aggregate(h).unwrap().data().iter().zip(up.data()).map(|(a, b)| a * b).sum();
            rel_err(analytic.data(), &numeric_grad(&h, &f))
        })
        .fold(0.0, worst)
}

/// Gradient of every parameter of `model` under `loss`, which must be
/// deterministic in the parameters (fixed RNG seeds inside).
fn model_error(model: &ModelState, analytic: &ModelState, loss: &dyn Fn(&ModelState) -> f64) -> f64 {
    let mut a = Vec::new();
    let mut b = Vec::new();
    let mut probe = model.clone();
    let count = probe.params_mut().len();
    for p in 0..count {
        let value = probe.params_mut()[p].value.clone();
        let f = |x: &Matrix| {
            let mut m = probe.clone();
            m.params_mut()[p].value = x.clone();
            loss(&m)
        };
        b.extend(numeric_grad(&value, &f));
        let mut an = analytic.clone();
        a.extend_from_slice(an.params_mut()[p].grad.data());
    }
    rel_err(&a, &b)
}

fn full_model(kind: ModelKind, instances: usize, seed_base: u64) -> f64 {
    (0..instances)
        .map(|i| {
            let mut r = rng(seed_base + i as u64);
            let g = random_graph(7, 0.4, 3, 3, &mut r);
            let cfg = ModelConfig {
                kind,
                hidden_dim: 4,
                num_layers: 2,
                dropout_p: 0.3,
                sage_sample_size: Some(2),
            };
            let model = ModelState::new(&cfg, 3, 3, &mut r).unwrap();
            let targets = one_hot(g.labels(), 3);
            let weights: Vec<f64> = (0..7).map(|v| f64::from(u8::from(v % 2 == 0))).collect();
            let fwd_seed = seed_base + 500 + i as u64;
            let loss = |m: &ModelState| {
                let (z, _) = m.forward(&g, g.features(), Mode::Train, &mut rng(fwd_seed)).unwrap();
                masked_cross_entropy(&m.predict_probs(&z).unwrap(), &targets, &weights).unwrap().0
            };
            let mut analytic = model.clone();
            analytic.zero_grad();
            let (z, cache) = analytic.forward(&g, g.features(), Mode::Train, &mut rng(fwd_seed)).unwrap();
            let probs = analytic.predict_probs(&z).unwrap();
            let (_, dlogits) = masked_cross_entropy(&probs, &targets, &weights).unwrap();
            let dz = analytic.readout_backward(&z, &dlogits).unwrap();
            analytic.backward(&g, &cache, &dz).unwrap();
            model_error(&model, &analytic, &loss)
        })
        .fold(0.0, worst)
}

fn collective_loss(instances: usize) -> f64 {
    (0..instances)
        .map(|i| {
            let mut r = rng(8000 + i as u64);
            let g = random_graph(8, 0.4, 2, 2, &mut r);
            let g = g.restrict_labels(&[0, 1, 2, 3, 4]);
            let cfg = ModelConfig {
                hidden_dim: 4,
                dropout_p: 0.2,
                ..ModelConfig::default()
            };
            let model = ModelState::new(&cfg, 4, 2, &mut r).unwrap();
            let targets = one_hot(g.labels(), 2);
            let m = sample_mask(&g, &[0, 1, 2, 3, 4], Scenario::TestPartial, 0.5, &mut r).unwrap();
            let labels = PredictedLabels::Sampled(sample_categorical(&Matrix::filled(8, 2, 0.5), 3, 1, &mut r));
            let seed = 8500 + i as u64;
            let loss = |mm: &ModelState| {
                let mut mm = mm.clone();
                accumulate_masked_loss(&mut mm, &g, &targets, &m, &labels, Mode::Train, &mut rng(seed)).unwrap()
            };
            let mut analytic = model.clone();
            analytic.zero_grad();
            accumulate_masked_loss(&mut analytic, &g, &targets, &m, &labels, Mode::Train, &mut rng(seed)).unwrap();
            model_error(&model, &analytic, &loss)
        })
        .fold(0.0, worst)
}

/// Runs every check on `instances` random instances each.
pub fn run_all(instances: usize) -> Vec<CheckResult> {
    let checks: [(&'static str, fn(usize) -> f64); 8] = [
        ("masked_cross_entropy", cross_entropy),
        ("relu", relu_op),
        ("dropout", dropout_op),
        ("sym_norm_propagate", propagation),
        ("mean_neighbor_aggregate", neighbor_mean),
        ("gcn_model", |n| full_model(ModelKind::Gcn, n, 6000)),
        ("sage_model", |n| full_model(ModelKind::Sage, n, 7000)),
        ("collective_loss", collective_loss),
    ];
    checks
        .into_iter()
        .map(|(name, f)| CheckResult {
            name,
            instances,
            worst: f(instances),
        })
        .collect()
}
