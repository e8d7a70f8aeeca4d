use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{argmax, check_samples, ClassifyError, LabeledSample, Prediction};
use crate::rng::{derive_seed, SplitMix64};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// `None` grows until leaves are pure or cannot be split.
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    /// Train each tree on a bootstrap resample of the data.
    pub bootstrap: bool,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: Some(16),
            min_leaf: 1,
            bootstrap: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeNode {
    Leaf {
        class: usize,
    },
    /// Samples with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// A CART classification tree; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn predict(&self, z: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                TreeNode::Leaf { class } => return class,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if z[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            match t.nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + go(t, left).max(go(t, right)),
            }
        }
        go(self, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForestModel {
    pub n_classes: usize,
    pub trees: Vec<Tree>,
}

impl ForestModel {
    /// Scores are the fraction of trees voting for each class.
    pub fn predict(&self, z: &[f64]) -> Prediction {
        let mut votes = vec![0.0; self.n_classes];
        for t in &self.trees {
            votes[t.predict(z)] += 1.0;
        }
        let n = self.trees.len() as f64;
        votes.iter_mut().for_each(|v| *v /= n);
        Prediction {
            label: argmax(&votes),
            scores: votes,
        }
    }
}

/// Bagged CART trees with Gini splits.
///
/// Tree `t` draws its bootstrap sample from a generator seeded with
/// `seed + t`. Each node samples `floor(sqrt(dim))` candidate features from
/// a generator derived from its position in the tree, so growing a tree
/// deeper only refines the shallower tree. If no candidate admits a split,
/// the remaining features are tried in the same random order until one
/// does.
pub fn train_random_forest(
    data: &[LabeledSample],
    n_classes: usize,
    cfg: &ForestConfig,
    seed: u64,
) -> Result<ForestModel, ClassifyError> {
    let dim = check_samples(data, n_classes)?;
    if cfg.n_trees == 0 || cfg.min_leaf == 0 {
        return Err(ClassifyError::InvalidConfig(
            "forest needs n_trees >= 1 and min_leaf >= 1".into(),
        ));
    }
    let trees = (0..cfg.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = SplitMix64::new(seed.wrapping_add(t as u64));
            let idx: Vec<usize> = if cfg.bootstrap {
                (0..data.len()).map(|_| rng.below(data.len())).collect()
            } else {
                (0..data.len()).collect()
            };
            let root_seed = rng.next_u64();
            let mut b = Builder {
                data,
                n_classes,
                dim,
                mtry: ((dim as f64).sqrt().floor() as usize).max(1),
                cfg,
                nodes: Vec::new(),
            };
            b.grow(idx, 0, root_seed);
            Tree { nodes: b.nodes }
        })
        .collect();
    Ok(ForestModel { n_classes, trees })
}

struct Builder<'a> {
    data: &'a [LabeledSample],
    n_classes: usize,
    dim: usize,
    mtry: usize,
    cfg: &'a ForestConfig,
    nodes: Vec<TreeNode>,
}

struct Split {
    gain: f64,
    feature: usize,
    threshold: f64,
}

fn gini(counts: &[usize], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let inv = 1.0 / n as f64;
    1.0 - counts.iter().map(|&c| (c as f64 * inv).powi(2)).sum::<f64>()
}

impl Builder<'_> {
    fn grow(&mut self, idx: Vec<usize>, depth: usize, node_seed: u64) -> usize {
        let id = self.nodes.len();
        self.nodes.push(TreeNode::Leaf { class: 0 });
        let mut counts = vec![0usize; self.n_classes];
        for &i in &idx {
            counts[self.data[i].label] += 1;
        }
        let majority = argmax(&counts.iter().map(|&c| c as f64).collect::<Vec<_>>());
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        let depth_ok = self.cfg.max_depth.is_none_or(|d| depth < d);
        if pure || !depth_ok || idx.len() < 2 * self.cfg.min_leaf {
            self.nodes[id] = TreeNode::Leaf { class: majority };
            return id;
        }
        let Some(split) = self.best_split(&idx, &counts, node_seed) else {
            self.nodes[id] = TreeNode::Leaf { class: majority };
            return id;
        };
        let (left, right): (Vec<usize>, Vec<usize>) = idx
            .iter()
            .partition(|&&i| self.data[i].features[split.feature] <= split.threshold);
        let l = self.grow(left, depth + 1, derive_seed(node_seed, &[0]));
        let r = self.grow(right, depth + 1, derive_seed(node_seed, &[1]));
        self.nodes[id] = TreeNode::Split {
            feature: split.feature,
            threshold: split.threshold,
            left: l,
            right: r,
        };
        id
    }

    /// Best Gini split over the sampled candidates; ties go to the lower
    /// feature index, then the lower threshold.
    fn best_split(&self, idx: &[usize], counts: &[usize], node_seed: u64) -> Option<Split> {
        let mut order: Vec<usize> = (0..self.dim).collect();
        let mut rng = SplitMix64::new(node_seed);
        let mut best: Option<Split> = None;
        let parent = gini(counts, idx.len());
        for k in 0..self.dim {
            // lazy Fisher-Yates: position k receives a uniform pick of the rest
            let j = k + rng.below(self.dim - k);
            order.swap(k, j);
            if k >= self.mtry && best.is_some() {
                break;
            }
            let f = order[k];
            if let Some(s) = self.best_for_feature(idx, counts, parent, f) {
                let better = match &best {
                    None => true,
                    Some(b) => {
                        s.gain > b.gain
                            || (s.gain == b.gain
                                && (s.feature < b.feature
                                    || (s.feature == b.feature && s.threshold < b.threshold)))
                    }
                };
                if better {
                    best = Some(s);
                }
            }
        }
        best
    }

    fn best_for_feature(
        &self,
        idx: &[usize],
        counts: &[usize],
        parent: f64,
        f: usize,
    ) -> Option<Split> {
        let mut vals: Vec<(f64, usize)> = idx
            .iter()
            .map(|&i| (self.data[i].features[f], self.data[i].label))
            .collect();
        vals.sort_by(|a, b| a.0.total_cmp(&b.0));
        let n = vals.len();
        let min_leaf = self.cfg.min_leaf;
        let mut left = vec![0usize; self.n_classes];
        let mut right = counts.to_vec();
        let mut best: Option<Split> = None;
        for i in 0..n - 1 {
            let (v, label) = vals[i];
            left[label] += 1;
            right[label] -= 1;
            let next = vals[i + 1].0;
            let (nl, nr) = (i + 1, n - i - 1);
            if next <= v || nl < min_leaf || nr < min_leaf {
                continue;
            }
            let gain = parent
                - (nl as f64 * gini(&left, nl) + nr as f64 * gini(&right, nr)) / n as f64;
            if best.as_ref().is_none_or(|b| gain > b.gain) {
                let mut threshold = 0.5 * (v + next);
                if threshold >= next {
                    threshold = v;
                }
                best = Some(Split {
                    gain,
                    feature: f,
                    threshold,
                });
            }
        }
        best
    }
}
