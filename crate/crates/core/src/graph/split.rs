use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Graph;
use crate::error::{Error, Result};

const MAX_START_ATTEMPTS: usize = 100;

/// Node sets of one experimental split. All four sets are pairwise disjoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_labeled: Vec<usize>,
    pub validation: Vec<usize>,
    pub test_eval: Vec<usize>,
    pub test_labeled: Vec<usize>,
}

/// How the labeled part of the test graph is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum TestLabelPlan {
    /// The test graph carries no labels.
    None,
    /// A connected component of the given size.
    Connected(usize),
    /// A uniformly random fraction of the labeled nodes left after the
    /// training component is removed.
    RandomFraction(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train_labeled: usize,
    pub test_labeled: TestLabelPlan,
    /// `None` splits the leftover nodes evenly between test and validation.
    pub test_size: Option<usize>,
    /// `None` means the same size as the test set.
    pub validation_size: Option<usize>,
}

impl SplitSpec {
    /// Draws a split: a connected training component, then the labeled test
    /// nodes, then disjoint test and validation sets from what remains.
    /// Only nodes that carry a label in `g` are eligible.
    pub fn generate<R: Rng + ?Sized>(g: &Graph, plan: &SplitPlan, rng: &mut R) -> Result<Self> {
        let n = g.num_nodes();
        let mut allowed: Vec<bool> = g.labels().iter().map(Option::is_some).collect();
        let train = connected_component_sample_within(g, plan.train_labeled, &allowed, rng)?;
        for &v in &train {
            allowed[v] = false;
        }
        let test_labeled = match plan.test_labeled {
            TestLabelPlan::None => Vec::new(),
            TestLabelPlan::Connected(k) => {
                let set = connected_component_sample_within(g, k, &allowed, rng)?;
                for &v in &set {
                    allowed[v] = false;
                }
                set
            }
            TestLabelPlan::RandomFraction(f) => {
                if !(0.0..=1.0).contains(&f) {
                    return Err(Error::Parameter(format!("test label fraction {f} not in [0, 1]")));
                }
                let mut pool: Vec<usize> = (0..n).filter(|&v| allowed[v]).collect();
                pool.shuffle(rng);
                let k = (f * pool.len() as f64).round() as usize;
                pool.truncate(k);
                pool.sort_unstable();
                for &v in &pool {
                    allowed[v] = false;
                }
                pool
            }
        };
        let mut rest: Vec<usize> = (0..n).filter(|&v| allowed[v]).collect();
        rest.shuffle(rng);
        let test_size = plan.test_size.unwrap_or(rest.len() / 2);
        let val_size = plan.validation_size.unwrap_or(test_size);
        if test_size + val_size > rest.len() {
            return Err(Error::SamplingFailure(format!(
                "{} nodes left for test ({test_size}) and validation ({val_size})",
                rest.len()
            )));
        }
        let mut test_eval = rest[..test_size].to_vec();
        let mut validation = rest[test_size..test_size + val_size].to_vec();
        test_eval.sort_unstable();
        validation.sort_unstable();
        Ok(Self {
            train_labeled: train,
            validation,
            test_eval,
            test_labeled,
        })
    }

    pub fn is_disjoint(&self) -> bool {
        let mut all: Vec<usize> = self
            .train_labeled
            .iter()
            .chain(&self.validation)
            .chain(&self.test_eval)
            .chain(&self.test_labeled)
            .copied()
            .collect();
        let len = all.len();
        all.sort_unstable();
        all.dedup();
        all.len() == len
    }
}

/// Random connected node set of `target_size` nodes.
pub fn connected_component_sample<R: Rng + ?Sized>(
    g: &Graph,
    target_size: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    connected_component_sample_within(g, target_size, &vec![true; g.num_nodes()], rng)
}

/// Randomized breadth-first growth from a random start, restricted to nodes
/// with `allowed[v]`. The result is sorted and induces a connected subgraph.
pub fn connected_component_sample_within<R: Rng + ?Sized>(
    g: &Graph,
    target_size: usize,
    allowed: &[bool],
    rng: &mut R,
) -> Result<Vec<usize>> {
    if target_size == 0 {
        return Err(Error::Parameter("connected sample size must be at least 1".into()));
    }
    let mut starts: Vec<usize> = (0..g.num_nodes()).filter(|&v| allowed[v]).collect();
    if starts.len() < target_size {
        return Err(Error::SamplingFailure(format!(
            "only {} eligible nodes for a connected set of {target_size}",
            starts.len()
        )));
    }
    starts.shuffle(rng);
    let mut visited = vec![false; g.num_nodes()];
    for &start in starts.iter().take(MAX_START_ATTEMPTS) {
        visited.iter_mut().for_each(|x| *x = false);
        let mut set = vec![start];
        visited[start] = true;
        let mut queue = VecDeque::from([start]);
        'grow: while let Some(u) = queue.pop_front() {
            if set.len() == target_size {
                break;
            }
            let mut next: Vec<usize> = g
                .neighbors(u)
                .iter()
                .copied()
                .filter(|&w| allowed[w] && !visited[w])
                .collect();
            next.shuffle(rng);
            for w in next {
                visited[w] = true;
                set.push(w);
                queue.push_back(w);
                if set.len() == target_size {
                    break 'grow;
                }
            }
        }
        if set.len() == target_size {
            set.sort_unstable();
            return Ok(set);
        }
    }
    Err(Error::SamplingFailure(format!(
        "no connected set of {target_size} nodes reachable after {} starts",
        starts.len().min(MAX_START_ATTEMPTS)
    )))
}
