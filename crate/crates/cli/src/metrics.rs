use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Accuracy,
    BalancedAccuracy,
}

impl Metric {
    pub fn score(self, preds: &[usize], truth: &[Option<usize>], nodes: &[usize]) -> f64 {
        match self {
            Metric::Accuracy => accuracy(preds, truth, nodes),
            Metric::BalancedAccuracy => balanced_accuracy(preds, truth, nodes),
        }
    }
}

/// Fraction of labeled nodes in `nodes` predicted correctly. `preds` and
/// `truth` are indexed by node id.
pub fn accuracy(preds: &[usize], truth: &[Option<usize>], nodes: &[usize]) -> f64 {
    let (mut hit, mut total) = (0usize, 0usize);
    for &v in nodes {
        if let Some(y) = truth[v] {
            total += 1;
            hit += usize::from(preds[v] == y);
        }
    }
    if total == 0 {
        0.0
    } else {
        hit as f64 / total as f64
    }
}

/// Mean per-class recall over the classes present among `nodes`.
pub fn balanced_accuracy(preds: &[usize], truth: &[Option<usize>], nodes: &[usize]) -> f64 {
    let classes = nodes.iter().filter_map(|&v| truth[v]).max().map_or(0, |c| c + 1);
    let mut hit = vec![0usize; classes];
    let mut total = vec![0usize; classes];
    for &v in nodes {
        if let Some(y) = truth[v] {
            total[y] += 1;
            hit[y] += usize::from(preds[v] == y);
        }
    }
    let recalls: Vec<f64> = hit
        .iter()
        .zip(&total)
        .filter(|(_, &t)| t > 0)
        .map(|(&h, &t)| h as f64 / t as f64)
        .collect();
    if recalls.is_empty() {
        0.0
    } else {
        recalls.iter().sum::<f64>() / recalls.len() as f64
    }
}
