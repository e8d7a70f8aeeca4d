use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{argmax, check_samples, ClassifyError, LabeledSample, Prediction};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SvmConfig {
    pub lambda: f64,
    pub epochs: usize,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-4,
            epochs: 100,
        }
    }
}

/// One-vs-rest linear decision functions `w_c . x + b_c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SvmModel {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

impl SvmModel {
    pub fn decision_values(&self, z: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.bias)
            .map(|(w, b)| w.iter().zip(z).map(|(a, x)| a * x).sum::<f64>() + b)
            .collect()
    }

    pub fn predict(&self, z: &[f64]) -> Prediction {
        let scores = self.decision_values(z);
        Prediction {
            label: argmax(&scores),
            scores,
        }
    }
}

/// One-vs-rest Pegasos on the L2-regularized hinge loss.
///
/// Each binary problem `c` shuffles with its own generator seeded by
/// `seed + c` and steps with `1 / (lambda t)`. The bias is handled as an
/// extra weight on a constant input of 1, so it shares the regularizer.
pub fn train_linear_svm(
    data: &[LabeledSample],
    n_classes: usize,
    cfg: &SvmConfig,
    seed: u64,
) -> Result<SvmModel, ClassifyError> {
    check_samples(data, n_classes)?;
    if !(cfg.lambda > 0.0) || cfg.epochs == 0 {
        return Err(ClassifyError::InvalidConfig(
            "SVM needs lambda > 0 and epochs >= 1".into(),
        ));
    }
    let first = data[0].label;
    if data.iter().all(|s| s.label == first) {
        return Err(ClassifyError::SingleClassData);
    }
    let solved: Vec<(Vec<f64>, f64)> = (0..n_classes)
        .into_par_iter()
        .map(|c| pegasos(data, c, cfg, seed.wrapping_add(c as u64)))
        .collect();
    let (weights, bias) = solved.into_iter().unzip();
    Ok(SvmModel { weights, bias })
}

fn pegasos(data: &[LabeledSample], positive: usize, cfg: &SvmConfig, seed: u64) -> (Vec<f64>, f64) {
    let dim = data[0].features.len();
    let mut rng = SplitMix64::new(seed);
    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    let mut order: Vec<usize> = (0..data.len()).collect();
    let radius = 1.0 / cfg.lambda.sqrt();
    let mut t = 0u64;
    for _ in 0..cfg.epochs {
        rng.shuffle(&mut order);
        for &i in &order {
            t += 1;
            let s = &data[i];
            let y = if s.label == positive { 1.0 } else { -1.0 };
            let eta = 1.0 / (cfg.lambda * t as f64);
            let margin = y * (dot(&w, &s.features) + b);
            let shrink = 1.0 - eta * cfg.lambda;
            w.iter_mut().for_each(|v| *v *= shrink);
            b *= shrink;
            if margin < 1.0 {
                for (v, x) in w.iter_mut().zip(&s.features) {
                    *v += eta * y * x;
                }
                b += eta * y;
            }
            // projection onto the ball that contains the optimum
            let norm = (dot(&w, &w) + b * b).sqrt();
            if norm > radius {
                let f = radius / norm;
                w.iter_mut().for_each(|v| *v *= f);
                b *= f;
            }
        }
    }
    (w, b)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
