//! Stochastic-block graphs whose labels follow the blocks.

use anyhow::{bail, Result};
use clgnn::{Graph, Matrix};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub nodes: usize,
    pub classes: usize,
    /// Number of blocks; block `b` carries label `b % classes`. `None` means
    /// one block per class.
    pub communities: Option<usize>,
    /// Expected fraction of edges that stay inside a block.
    pub homophily: f64,
    pub avg_degree: f64,
    pub feature_dim: usize,
    /// Scale of the per-block feature centroid.
    pub feature_signal: f64,
    /// Standard deviation of the per-node noise. `None` gives pure standard
    /// normal features that carry no label information.
    pub feature_noise: Option<f64>,
    /// Relative block sizes; `None` gives equal blocks.
    pub block_weights: Option<Vec<f64>>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            nodes: 600,
            classes: 3,
            communities: None,
            homophily: 0.9,
            avg_degree: 10.0,
            feature_dim: 16,
            feature_signal: 1.0,
            feature_noise: None,
            block_weights: None,
        }
    }
}

impl SynthSpec {
    pub fn num_blocks(&self) -> usize {
        self.communities.unwrap_or(self.classes)
    }

    /// True when the block sizes differ, so plain accuracy would be skewed.
    pub fn imbalanced(&self) -> bool {
        self.block_weights
            .as_ref()
            .is_some_and(|w| w.iter().any(|&x| (x - w[0]).abs() > 1e-12))
    }

    /// Block of every node; blocks are contiguous id ranges.
    pub fn blocks(&self) -> Vec<usize> {
        let k = self.num_blocks();
        let weights = self.block_weights.clone().unwrap_or_else(|| vec![1.0; k]);
        let total: f64 = weights.iter().sum();
        let mut bounds = Vec::with_capacity(k);
        let mut acc = 0.0;
        for w in &weights {
            acc += w;
            bounds.push(((acc / total) * self.nodes as f64).round() as usize);
        }
        (0..self.nodes)
            .map(|v| bounds.iter().position(|&b| v < b).unwrap_or(k - 1))
            .collect()
    }

    /// Within- and between-block edge probabilities giving the requested
    /// average degree and homophily for equal-size blocks:
    /// `p_in (s - 1) = h D` and `p_out (n - s) = (1 - h) D` with `s = n / k`.
    pub fn edge_probabilities(&self) -> (f64, f64) {
        let n = self.nodes as f64;
        let k = self.num_blocks() as f64;
        let s = n / k;
        let d = self.avg_degree;
        let p_in = if s > 1.0 { self.homophily * d / (s - 1.0) } else { 0.0 };
        let p_out = if k > 1.0 { (1.0 - self.homophily) * d / (n - s) } else { 0.0 };
        (p_in, p_out)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nodes == 0 || self.classes == 0 {
            bail!("synthetic graph needs nodes >= 1 and classes >= 1");
        }
        if self.num_blocks() < self.classes {
            bail!("communities ({}) must be at least classes ({})", self.num_blocks(), self.classes);
        }
        if !(0.0..=1.0).contains(&self.homophily) {
            bail!("homophily {} not in [0, 1]", self.homophily);
        }
        if let Some(w) = &self.block_weights {
            if w.len() != self.num_blocks() || w.iter().any(|&x| x <= 0.0) {
                bail!("block_weights needs one positive weight per community");
            }
        }
        let (p_in, p_out) = self.edge_probabilities();
        if p_in > 1.0 || p_out > 1.0 {
            bail!("average degree {} is too high for {} nodes", self.avg_degree, self.nodes);
        }
        Ok(())
    }
}

pub fn synth_homophily<R: Rng + ?Sized>(spec: &SynthSpec, rng: &mut R) -> Result<Graph> {
    spec.validate()?;
    let n = spec.nodes;
    let blocks = spec.blocks();
    let (p_in, p_out) = spec.edge_probabilities();
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let p = if blocks[u] == blocks[v] { p_in } else { p_out };
            if rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    let p = spec.feature_dim;
    let mut features = Matrix::zeros(n, p);
    match spec.feature_noise {
        None => {
            for x in features.data_mut() {
                *x = rng.sample(StandardNormal);
            }
        }
        Some(noise) => {
            let centroids: Vec<Vec<f64>> = (0..spec.num_blocks())
                .map(|_| (0..p).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
                .collect();
            for v in 0..n {
                for (c, x) in features.row_mut(v).iter_mut().enumerate() {
                    let eps: f64 = rng.sample(StandardNormal);
                    *x = spec.feature_signal * centroids[blocks[v]][c] + noise * eps;
                }
            }
        }
    }
    let labels = blocks.iter().map(|&b| Some(b % spec.classes)).collect();
    Ok(Graph::new(n, edges, features, labels, spec.classes)?)
}
