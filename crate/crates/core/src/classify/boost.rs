use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{argmax, check_samples, ClassifyError, LabeledSample, Prediction};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoostConfig {
    pub n_rounds: usize,
    pub depth: usize,
    pub learning_rate: f64,
    pub l2_reg: f64,
}

impl Default for BoostConfig {
    fn default() -> Self {
        Self {
            n_rounds: 200,
            depth: 3,
            learning_rate: 0.1,
            l2_reg: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegNode {
    Leaf {
        value: f64,
    },
    /// Samples with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegTree {
    pub nodes: Vec<RegNode>,
}

impl RegTree {
    pub fn predict(&self, z: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                RegNode::Leaf { value } => return value,
                RegNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if z[feature] <= threshold { left } else { right },
            }
        }
    }
}

/// Softmax ensemble: `trees[c]` holds the per-round trees of class `c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoostModel {
    pub n_classes: usize,
    pub learning_rate: f64,
    pub base_score: Vec<f64>,
    pub trees: Vec<Vec<RegTree>>,
}

impl BoostModel {
    pub fn raw_scores(&self, z: &[f64]) -> Vec<f64> {
        self.base_score
            .iter()
            .zip(&self.trees)
            .map(|(b, ts)| b + self.learning_rate * ts.iter().map(|t| t.predict(z)).sum::<f64>())
            .collect()
    }

    /// Scores are softmax probabilities.
    pub fn predict(&self, z: &[f64]) -> Prediction {
        let scores = softmax(&self.raw_scores(z));
        Prediction {
            label: argmax(&scores),
            scores,
        }
    }
}

pub fn softmax(raw: &[f64]) -> Vec<f64> {
    let m = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = raw.iter().map(|r| (r - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Mean negative log-likelihood of the true labels.
fn log_loss(raw: &[Vec<f64>], data: &[LabeledSample]) -> f64 {
    let total: f64 = raw
        .iter()
        .zip(data)
        .map(|(r, s)| {
            let m = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + r.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            lse - r[s.label]
        })
        .sum();
    total / data.len() as f64
}

/// Second-order gradient boosting with softmax loss.
///
/// Every round fits one depth-limited regression tree per class to the
/// gradients `p - y` and hessians `p (1 - p)` taken at the start of the
/// round, using exact greedy splits on all features. Leaves hold
/// `-G / (H + l2_reg)`; the ensemble adds `learning_rate` times the leaf.
/// Base scores are zero. Returns the model and the training log-loss after
/// each round.
pub fn train_grad_boost(
    data: &[LabeledSample],
    n_classes: usize,
    cfg: &BoostConfig,
) -> Result<(BoostModel, Vec<f64>), ClassifyError> {
    let dim = check_samples(data, n_classes)?;
    if !(cfg.learning_rate > 0.0) || cfg.l2_reg < 0.0 {
        return Err(ClassifyError::InvalidConfig(
            "boosting needs learning_rate > 0 and l2_reg >= 0".into(),
        ));
    }
    let sorted = presort(data, dim);
    let n = data.len();
    let mut raw = vec![vec![0.0; n_classes]; n];
    let mut trees: Vec<Vec<RegTree>> = vec![Vec::with_capacity(cfg.n_rounds); n_classes];
    let mut history = Vec::with_capacity(cfg.n_rounds);
    for _ in 0..cfg.n_rounds {
        let probs: Vec<Vec<f64>> = raw.iter().map(|r| softmax(r)).collect();
        let round: Vec<RegTree> = (0..n_classes)
            .into_par_iter()
            .map(|c| {
                let (grad, hess): (Vec<f64>, Vec<f64>) = probs
                    .iter()
                    .zip(data)
                    .map(|(p, s)| {
                        let y = if s.label == c { 1.0 } else { 0.0 };
                        (p[c] - y, (p[c] * (1.0 - p[c])).max(1e-16))
                    })
                    .unzip();
                fit_tree(data, &sorted, &grad, &hess, cfg.depth, cfg.l2_reg)
            })
            .collect();
        for (r, s) in raw.iter_mut().zip(data) {
            for (c, t) in round.iter().enumerate() {
                r[c] += cfg.learning_rate * t.predict(&s.features);
            }
        }
        for (c, t) in round.into_iter().enumerate() {
            trees[c].push(t);
        }
        history.push(log_loss(&raw, data));
    }
    Ok((
        BoostModel {
            n_classes,
            learning_rate: cfg.learning_rate,
            base_score: vec![0.0; n_classes],
            trees,
        },
        history,
    ))
}

/// Sample indices sorted by value, per feature (ties by index).
fn presort(data: &[LabeledSample], dim: usize) -> Vec<Vec<u32>> {
    (0..dim)
        .into_par_iter()
        .map(|f| {
            let mut idx: Vec<u32> = (0..data.len() as u32).collect();
            idx.sort_by(|&a, &b| {
                data[a as usize].features[f]
                    .total_cmp(&data[b as usize].features[f])
                    .then(a.cmp(&b))
            });
            idx
        })
        .collect()
}

#[derive(Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

/// Level-wise exact greedy tree growth.
fn fit_tree(
    data: &[LabeledSample],
    sorted: &[Vec<u32>],
    grad: &[f64],
    hess: &[f64],
    depth: usize,
    lambda: f64,
) -> RegTree {
    let n = data.len();
    let mut nodes = vec![RegNode::Leaf { value: 0.0 }];
    // node of each sample; usize::MAX once its node is final
    let mut node_of = vec![0usize; n];
    let mut frontier = vec![0usize];
    let leaf_value = |g: f64, h: f64| -g / (h + lambda);
    for _level in 0..=depth {
        if frontier.is_empty() {
            break;
        }
        // per frontier node: sums of g and h
        let slot: std::collections::BTreeMap<usize, usize> =
            frontier.iter().enumerate().map(|(k, &id)| (id, k)).collect();
        let mut gsum = vec![0.0; frontier.len()];
        let mut hsum = vec![0.0; frontier.len()];
        for i in 0..n {
            if let Some(&k) = slot.get(&node_of[i]) {
                gsum[k] += grad[i];
                hsum[k] += hess[i];
            }
        }
        if _level == depth {
            for (k, &id) in frontier.iter().enumerate() {
                nodes[id] = RegNode::Leaf {
                    value: leaf_value(gsum[k], hsum[k]),
                };
            }
            break;
        }
        let local: Vec<usize> = node_of
            .iter()
            .map(|id| slot.get(id).copied().unwrap_or(usize::MAX))
            .collect();
        let per_feature: Vec<Vec<Option<Candidate>>> = sorted
            .par_iter()
            .enumerate()
            .map(|(f, order)| {
                scan_feature(data, order, f, &local, grad, hess, &gsum, &hsum, lambda)
            })
            .collect();
        let mut best: Vec<Option<Candidate>> = vec![None; frontier.len()];
        for cands in &per_feature {
            for (b, c) in best.iter_mut().zip(cands) {
                if let Some(c) = c {
                    if b.is_none_or(|b| c.gain > b.gain) {
                        *b = Some(*c);
                    }
                }
            }
        }
        let mut next = Vec::new();
        let mut split_of: Vec<Option<(usize, f64, usize, usize)>> = vec![None; frontier.len()];
        for (k, &id) in frontier.iter().enumerate() {
            match best[k] {
                Some(c) if c.gain > 0.0 => {
                    let l = nodes.len();
                    nodes.push(RegNode::Leaf { value: 0.0 });
                    nodes.push(RegNode::Leaf { value: 0.0 });
                    nodes[id] = RegNode::Split {
                        feature: c.feature,
                        threshold: c.threshold,
                        left: l,
                        right: l + 1,
                    };
                    split_of[k] = Some((c.feature, c.threshold, l, l + 1));
                    next.extend([l, l + 1]);
                }
                _ => {
                    nodes[id] = RegNode::Leaf {
                        value: leaf_value(gsum[k], hsum[k]),
                    };
                }
            }
        }
        for (i, s) in data.iter().enumerate() {
            let k = local[i];
            if k == usize::MAX {
                continue;
            }
            node_of[i] = match split_of[k] {
                Some((f, t, l, r)) => {
                    if s.features[f] <= t {
                        l
                    } else {
                        r
                    }
                }
                None => usize::MAX,
            };
        }
        frontier = next;
    }
    RegTree { nodes }
}

/// Best split of feature `f` for every frontier node, scanning the
/// presorted order once. Ties keep the lowest threshold.
#[allow(clippy::too_many_arguments)]
fn scan_feature(
    data: &[LabeledSample],
    order: &[u32],
    f: usize,
    local: &[usize],
    grad: &[f64],
    hess: &[f64],
    gsum: &[f64],
    hsum: &[f64],
    lambda: f64,
) -> Vec<Option<Candidate>> {
    let m = gsum.len();
    let mut gl = vec![0.0; m];
    let mut hl = vec![0.0; m];
    let mut last = vec![f64::NAN; m];
    let mut best: Vec<Option<Candidate>> = vec![None; m];
    let score = |g: f64, h: f64| g * g / (h + lambda);
    for &i in order {
        let i = i as usize;
        let k = local[i];
        if k == usize::MAX {
            continue;
        }
        let v = data[i].features[f];
        if !last[k].is_nan() && v > last[k] {
            let (gr, hr) = (gsum[k] - gl[k], hsum[k] - hl[k]);
            let gain = 0.5 * (score(gl[k], hl[k]) + score(gr, hr) - score(gsum[k], hsum[k]));
            if best[k].is_none_or(|b| gain > b.gain) {
                let mut threshold = 0.5 * (last[k] + v);
                if threshold >= v {
                    threshold = last[k];
                }
                best[k] = Some(Candidate {
                    gain,
                    feature: f,
                    threshold,
                });
            }
        }
        gl[k] += grad[i];
        hl[k] += hess[i];
        last[k] = v;
    }
    best
}
