use serde::{Deserialize, Serialize};

use super::{check_samples, ClassifyError, LabeledSample, Prediction};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KnnConfig {
    pub k: usize,
}

impl Default for KnnConfig {
    fn default() -> Self {
        Self { k: 3 }
    }
}

/// Stored training matrix; prediction is a Euclidean majority vote.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KnnModel {
    pub k: usize,
    pub n_classes: usize,
    pub points: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

pub fn train_knn(
    data: &[LabeledSample],
    n_classes: usize,
    k: usize,
) -> Result<KnnModel, ClassifyError> {
    check_samples(data, n_classes)?;
    if k == 0 {
        return Err(ClassifyError::InvalidConfig("k must be at least 1".into()));
    }
    if k > data.len() {
        return Err(ClassifyError::KExceedsData { k, n: data.len() });
    }
    Ok(KnnModel {
        k,
        n_classes,
        points: data.iter().map(|s| s.features.clone()).collect(),
        labels: data.iter().map(|s| s.label).collect(),
    })
}

impl KnnModel {
    /// Majority vote among the `k` nearest points (distance ties resolved by
    /// training order). Vote ties go to the label of the nearest point when
    /// that point is unique among the tied classes, otherwise to the
    /// smallest tied class id.
    pub fn predict(&self, z: &[f64]) -> Prediction {
        let mut dist: Vec<(f64, usize)> = self
            .points
            .iter()
            .enumerate()
            .map(|(i, p)| (sq_dist(p, z), i))
            .collect();
        dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let nearest = &dist[..self.k];
        let mut votes = vec![0usize; self.n_classes];
        for &(_, i) in nearest {
            votes[self.labels[i]] += 1;
        }
        let top = *votes.iter().max().unwrap_or(&0);
        let tied: Vec<usize> = (0..self.n_classes).filter(|&c| votes[c] == top).collect();
        let label = if tied.len() == 1 {
            tied[0]
        } else {
            let d0 = nearest[0].0;
            let mut closest: Vec<usize> = nearest
                .iter()
                .take_while(|(d, _)| *d == d0)
                .map(|&(_, i)| self.labels[i])
                .filter(|l| tied.contains(l))
                .collect();
            closest.sort_unstable();
            closest.dedup();
            match closest.as_slice() {
                [only] => *only,
                [first, ..] => *first,
                [] => tied[0],
            }
        };
        let scores = votes
            .iter()
            .map(|&v| v as f64 / self.k as f64)
            .collect();
        Prediction { label, scores }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
