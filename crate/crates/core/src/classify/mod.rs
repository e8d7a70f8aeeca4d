//! The four classifiers (k-NN, linear SVM, random forest, gradient-boosted
//! trees) and the serialized model artifact that bundles one of them with
//! its standardizer and feature layout.
//!
//! Trainers consume standardized samples. [`TrainedModel::fit`] fits the
//! standardizer on the training rows, standardizes, and dispatches; its
//! [`TrainedModel::predict`] standardizes raw vectors with the stored
//! parameters, so inference never refits.

mod boost;
mod forest;
mod knn;
mod svm;

pub use boost::{train_grad_boost, BoostConfig, BoostModel, RegNode, RegTree};
pub use forest::{train_random_forest, ForestConfig, ForestModel, Tree, TreeNode};
pub use knn::{train_knn, KnnConfig, KnnModel};
pub use svm::{train_linear_svm, SvmConfig, SvmModel};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{self, FeatureError, FeatureSchema, FeatureVector, StandardizationParams};
use crate::pipeline::ExtractorConfig;

pub const MODEL_VERSION: &str = "provkit-model/1";

#[derive(Debug, Error, PartialEq)]
pub enum ClassifyError {
    #[error("no training samples")]
    EmptyData,
    #[error("k = {k} exceeds the {n} training samples")]
    KExceedsData { k: usize, n: usize },
    #[error("training data contains a single class")]
    SingleClassData,
    #[error("label {label} out of range for {n_classes} classes")]
    LabelOutOfRange { label: usize, n_classes: usize },
    #[error("need at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("feature dimension {found} does not match model dimension {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error("model format: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ClassifierKind {
    #[serde(rename = "KNN")]
    Knn,
    #[serde(rename = "LINEAR_SVM")]
    LinearSvm,
    #[serde(rename = "RANDOM_FOREST")]
    RandomForest,
    #[serde(rename = "GRAD_BOOST")]
    GradBoost,
}

impl ClassifierKind {
    pub const ALL: [ClassifierKind; 4] = [
        ClassifierKind::Knn,
        ClassifierKind::LinearSvm,
        ClassifierKind::RandomForest,
        ClassifierKind::GradBoost,
    ];

    /// Short name used on the command line and in report tables.
    pub fn short_name(self) -> &'static str {
        match self {
            ClassifierKind::Knn => "knn",
            ClassifierKind::LinearSvm => "svm",
            ClassifierKind::RandomForest => "forest",
            ClassifierKind::GradBoost => "boost",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "knn" => Some(ClassifierKind::Knn),
            "svm" | "linear_svm" => Some(ClassifierKind::LinearSvm),
            "forest" | "rf" | "random_forest" => Some(ClassifierKind::RandomForest),
            "boost" | "xgboost" | "grad_boost" => Some(ClassifierKind::GradBoost),
            _ => None,
        }
    }

    pub fn default_config(self) -> ClassifierConfig {
        match self {
            ClassifierKind::Knn => ClassifierConfig::Knn(KnnConfig::default()),
            ClassifierKind::LinearSvm => ClassifierConfig::LinearSvm(SvmConfig::default()),
            ClassifierKind::RandomForest => ClassifierConfig::RandomForest(ForestConfig::default()),
            ClassifierKind::GradBoost => ClassifierConfig::GradBoost(BoostConfig::default()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum ClassifierConfig {
    Knn(KnnConfig),
    LinearSvm(SvmConfig),
    RandomForest(ForestConfig),
    GradBoost(BoostConfig),
}

impl ClassifierConfig {
    pub fn kind(&self) -> ClassifierKind {
        match self {
            ClassifierConfig::Knn(_) => ClassifierKind::Knn,
            ClassifierConfig::LinearSvm(_) => ClassifierKind::LinearSvm,
            ClassifierConfig::RandomForest(_) => ClassifierKind::RandomForest,
            ClassifierConfig::GradBoost(_) => ClassifierKind::GradBoost,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum ModelParams {
    Knn(KnnModel),
    LinearSvm(SvmModel),
    RandomForest(ForestModel),
    GradBoost(BoostModel),
}

impl ModelParams {
    fn kind(&self) -> ClassifierKind {
        match self {
            ModelParams::Knn(_) => ClassifierKind::Knn,
            ModelParams::LinearSvm(_) => ClassifierKind::LinearSvm,
            ModelParams::RandomForest(_) => ClassifierKind::RandomForest,
            ModelParams::GradBoost(_) => ClassifierKind::GradBoost,
        }
    }

    /// Prediction on an already standardized vector.
    pub fn predict(&self, z: &[f64]) -> Prediction {
        match self {
            ModelParams::Knn(m) => m.predict(z),
            ModelParams::LinearSvm(m) => m.predict(z),
            ModelParams::RandomForest(m) => m.predict(z),
            ModelParams::GradBoost(m) => m.predict(z),
        }
    }
}

/// A standardized training row.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub features: Vec<f64>,
    pub label: usize,
}

/// Predicted class id plus per-class scores: vote fractions (k-NN, forest),
/// decision values (SVM) or softmax probabilities (boosting).
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub label: usize,
    pub scores: Vec<f64>,
}

/// Index of the largest score; ties go to the smaller class id.
pub fn argmax(scores: &[f64]) -> usize {
    scores
        .iter()
        .enumerate()
        .fold(0, |best, (i, &s)| if s > scores[best] { i } else { best })
}

fn check_samples(data: &[LabeledSample], n_classes: usize) -> Result<usize, ClassifyError> {
    let first = data.first().ok_or(ClassifyError::EmptyData)?;
    if n_classes < 2 {
        return Err(ClassifyError::TooFewClasses(n_classes));
    }
    let dim = first.features.len();
    for s in data {
        if s.label >= n_classes {
            return Err(ClassifyError::LabelOutOfRange {
                label: s.label,
                n_classes,
            });
        }
        if s.features.len() != dim {
            return Err(ClassifyError::DimensionMismatch {
                expected: dim,
                found: s.features.len(),
            });
        }
    }
    Ok(dim)
}

/// Everything needed to reproduce a prediction from a raw feature vector.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainedModel {
    pub version: String,
    pub kind: ClassifierKind,
    pub seed: u64,
    pub config: ClassifierConfig,
    pub class_names: Vec<String>,
    pub schema: FeatureSchema,
    pub standardizer: StandardizationParams,
    /// How raw images become feature vectors, when the model was trained on
    /// extracted image features.
    pub extractor: Option<ExtractorConfig>,
    pub params: ModelParams,
}

#[derive(Deserialize)]
struct RawModel {
    version: String,
    kind: ClassifierKind,
    seed: u64,
    config: serde_json::Value,
    class_names: Vec<String>,
    schema: FeatureSchema,
    standardizer: StandardizationParams,
    extractor: Option<ExtractorConfig>,
    params: serde_json::Value,
}

impl TrainedModel {
    /// Fits the standardizer on `rows`, standardizes them and trains the
    /// configured classifier.
    pub fn fit(
        rows: &[FeatureVector],
        labels: &[usize],
        class_names: Vec<String>,
        config: &ClassifierConfig,
        seed: u64,
    ) -> Result<TrainedModel, ClassifyError> {
        if rows.len() != labels.len() {
            return Err(ClassifyError::InvalidConfig(format!(
                "{} rows but {} labels",
                rows.len(),
                labels.len()
            )));
        }
        let standardizer = features::fit_standardizer(rows)?;
        let data: Vec<LabeledSample> = rows
            .iter()
            .zip(labels)
            .map(|(r, &label)| LabeledSample {
                features: standardizer.apply_slice(r.values()),
                label,
            })
            .collect();
        let n_classes = class_names.len();
        let params = train(&data, n_classes, config, seed)?;
        Ok(TrainedModel {
            version: MODEL_VERSION.to_string(),
            kind: config.kind(),
            seed,
            config: config.clone(),
            class_names,
            schema: standardizer.schema.clone(),
            standardizer,
            extractor: None,
            params,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn predict(&self, v: &FeatureVector) -> Result<Prediction, ClassifyError> {
        let z = self.standardizer.apply(v)?;
        Ok(self.params.predict(z.values()))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("model serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<TrainedModel, ClassifyError> {
        let fmt = |e: serde_json::Error| ClassifyError::Format(e.to_string());
        let raw: RawModel = serde_json::from_str(text).map_err(fmt)?;
        if raw.version != MODEL_VERSION {
            return Err(ClassifyError::Format(format!(
                "unsupported version `{}`",
                raw.version
            )));
        }
        let (config, params) = match raw.kind {
            ClassifierKind::Knn => (
                ClassifierConfig::Knn(serde_json::from_value(raw.config).map_err(fmt)?),
                ModelParams::Knn(serde_json::from_value(raw.params).map_err(fmt)?),
            ),
            ClassifierKind::LinearSvm => (
                ClassifierConfig::LinearSvm(serde_json::from_value(raw.config).map_err(fmt)?),
                ModelParams::LinearSvm(serde_json::from_value(raw.params).map_err(fmt)?),
            ),
            ClassifierKind::RandomForest => (
                ClassifierConfig::RandomForest(serde_json::from_value(raw.config).map_err(fmt)?),
                ModelParams::RandomForest(serde_json::from_value(raw.params).map_err(fmt)?),
            ),
            ClassifierKind::GradBoost => (
                ClassifierConfig::GradBoost(serde_json::from_value(raw.config).map_err(fmt)?),
                ModelParams::GradBoost(serde_json::from_value(raw.params).map_err(fmt)?),
            ),
        };
        if raw.standardizer.schema != raw.schema
            || raw.standardizer.mean.len() != raw.schema.total_dim()
            || raw.standardizer.scale.len() != raw.schema.total_dim()
            || raw.standardizer.scale.iter().any(|&s| s <= 0.0 || !s.is_finite())
        {
            return Err(ClassifyError::Format(
                "standardizer inconsistent with schema".into(),
            ));
        }
        debug_assert_eq!(params.kind(), raw.kind);
        Ok(TrainedModel {
            version: raw.version,
            kind: raw.kind,
            seed: raw.seed,
            config,
            class_names: raw.class_names,
            schema: raw.schema,
            standardizer: raw.standardizer,
            extractor: raw.extractor,
            params,
        })
    }
}

/// Trains on standardized samples.
pub fn train(
    data: &[LabeledSample],
    n_classes: usize,
    config: &ClassifierConfig,
    seed: u64,
) -> Result<ModelParams, ClassifyError> {
    Ok(match config {
        ClassifierConfig::Knn(c) => ModelParams::Knn(train_knn(data, n_classes, c.k)?),
        ClassifierConfig::LinearSvm(c) => {
            ModelParams::LinearSvm(train_linear_svm(data, n_classes, c, seed)?)
        }
        ClassifierConfig::RandomForest(c) => {
            ModelParams::RandomForest(train_random_forest(data, n_classes, c, seed)?)
        }
        ClassifierConfig::GradBoost(c) => {
            ModelParams::GradBoost(train_grad_boost(data, n_classes, c)?.0)
        }
    })
}
