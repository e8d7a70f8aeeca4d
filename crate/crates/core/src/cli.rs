//! The `provkit` command line.
//!
//! Exit codes: 0 on success, 2 for usage, configuration and schema errors,
//! 3 for I/O and undecodable data.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write as _};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classify::{
    BoostConfig, ClassifierConfig, ClassifierKind, ForestConfig, KnnConfig, SvmConfig, TrainedModel,
};
use crate::color::{self, ColorSpace};
use crate::eval::{self, Averaging, EvaluationReport};
use crate::features::{FeatureSchema, FeatureTable, FeatureVector};
use crate::imgio::{self, ImageError};
use crate::pipeline::{self, Channel, ExtractorConfig, PipelineError};
use crate::spectral::{self, SpectralKind};
use crate::synth::{self, CorpusSpec, ManifestRow, Split, SynthError};

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Io(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Io(_) => EXIT_IO,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Io(m) => m,
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Invalid(_) | SynthError::Parse(_) => CliError::Usage(e.to_string()),
            _ => CliError::Io(e.to_string()),
        }
    }
}

fn pipeline_err(path: &Path, e: PipelineError) -> CliError {
    match e {
        PipelineError::Config(_) => CliError::Usage(e.to_string()),
        _ => io_err(path, e),
    }
}

#[derive(Debug, Parser)]
#[command(name = "provkit", version, about = "Spectral, color and keypoint forensics for real-vs-synthetic detection and source attribution")]
pub struct Cli {
    /// Master seed for every stochastic step.
    #[arg(long, global = true, default_value_t = 42)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a surrogate corpus from a TOML spec.
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract feature vectors for the images of a manifest into a CSV.
    Extract(ExtractArgs),
    /// Train a classifier on a feature CSV and score it on a validation CSV.
    Fit(FitArgs),
    /// Score a model on a feature CSV.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        test: PathBuf,
        /// Report JSON path; a text table is written next to it with a
        /// `.txt` extension.
        #[arg(long)]
        out: PathBuf,
    },
    /// Classify one image and print the scores as JSON.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        image: PathBuf,
    },
    /// Write per-class mean DCT/FFT heatmaps or mean RGB histograms.
    Heatmap {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum)]
        kind: HeatmapKind,
        /// Restrict to these classes (comma-separated); default all.
        #[arg(long, value_delimiter = ',')]
        class: Vec<String>,
        /// Restrict to one split; default all.
        #[arg(long)]
        split: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cosine similarity between per-class mean standardized features.
    AttributionReport {
        #[arg(long)]
        model: PathBuf,
        /// Images to extract with the model's extractor.
        #[arg(long, conflicts_with = "features", required_unless_present = "features")]
        manifest: Option<PathBuf>,
        /// Precomputed feature CSV instead of a manifest.
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        split: Option<String>,
        #[arg(long, value_delimiter = ',')]
        class: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every (feature set, model) pair of an experiment config and print
    /// a results table.
    RunExperiment {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's `out_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum HeatmapKind {
    Dct,
    Fft,
    RgbHist,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Comma-separated subset of dct, fft, rgb, hsv, sift.
    #[arg(long, default_value = "dct,fft")]
    channels: String,
    #[arg(long, default_value_t = spectral::DEFAULT_DCT_K)]
    dct_k: usize,
    #[arg(long, default_value_t = spectral::DEFAULT_FFT_RINGS)]
    fft_rings: usize,
    #[arg(long, default_value_t = spectral::DEFAULT_FFT_WEDGES)]
    fft_wedges: usize,
    #[arg(long, default_value_t = color::DEFAULT_BINS)]
    hist_bins: usize,
    /// Only rows of this split.
    #[arg(long)]
    split: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    val: PathBuf,
    /// knn, svm, forest or boost.
    #[arg(long)]
    model: String,
    /// Classifier config file (TOML or JSON) with the kind's fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    n_trees: Option<usize>,
    #[arg(long)]
    max_depth: Option<usize>,
    #[arg(long)]
    min_leaf: Option<usize>,
    #[arg(long)]
    no_bootstrap: bool,
    #[arg(long)]
    n_rounds: Option<usize>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    l2_reg: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

/// Sets the global rayon pool size from `PROVKIT_THREADS` when present.
pub fn init_threads() -> CliResult<()> {
    if let Ok(v) = std::env::var("PROVKIT_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| usage(format!("PROVKIT_THREADS must be a positive integer, got `{v}`")))?;
        // a second initialization in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

pub fn run(cli: Cli) -> CliResult<()> {
    init_threads()?;
    let seed = cli.seed;
    match cli.command {
        Command::Synth { config, out } => {
            let manifest = cmd_synth(&config, &out)?;
            emit(&format!("{}\n", manifest.display()))
        }
        Command::Extract(a) => cmd_extract(&a),
        Command::Fit(a) => cmd_fit(&a, seed),
        Command::Evaluate { model, test, out } => {
            let report = cmd_evaluate(&model, &test, &out)?;
            emit(&report.to_text())
        }
        Command::Predict { model, image } => emit(&format!("{}\n", cmd_predict(&model, &image)?)),
        Command::Heatmap {
            manifest,
            kind,
            class,
            split,
            out,
        } => {
            let written = cmd_heatmap(&manifest, kind, &class, split.as_deref(), &out)?;
            emit(&written.iter().map(|p| format!("{}\n", p.display())).collect::<String>())
        }
        Command::AttributionReport {
            model,
            manifest,
            features,
            split,
            class,
            out,
        } => {
            let source = match (manifest, features) {
                (Some(m), None) => FeatureSource::Manifest(m),
                (None, Some(f)) => FeatureSource::Csv(f),
                _ => return Err(usage("give exactly one of --manifest or --features")),
            };
            let m = cmd_attribution_report(&model, &source, split.as_deref(), &class, &out)?;
            emit(&m.to_csv())
        }
        Command::RunExperiment { config, out } => {
            let table = cmd_run_experiment(&config, out.as_deref(), seed)?;
            emit(&table)
        }
    }
}

// ---------------------------------------------------------------------------
// file helpers

/// Writes to stdout; a closed pipe (`provkit ... | head`) is not an error.
fn emit(text: &str) -> CliResult<()> {
    let mut out = io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(CliError::Io(format!("stdout: {e}"))),
        _ => Ok(()),
    }
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

/// Config files that cannot be read are usage errors.
fn read_config(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Sidecar recording how a feature CSV was produced.
pub fn extractor_sidecar(csv: &Path) -> PathBuf {
    with_suffix(csv, ".extract.json")
}

fn parse_split(s: Option<&str>) -> CliResult<Option<Split>> {
    s.map(|s| Split::parse(s).ok_or_else(|| usage(format!("unknown split `{s}` (train, val or test)"))))
        .transpose()
}

fn load_manifest(path: &Path) -> CliResult<Vec<ManifestRow>> {
    if !path.exists() {
        return Err(io_err(path, "no such file"));
    }
    synth::read_manifest(path).map_err(|e| match e {
        SynthError::Manifest(m) => usage(m),
        other => CliError::Io(other.to_string()),
    })
}

fn resolve(manifest: &Path, rel: &str) -> PathBuf {
    let p = Path::new(rel);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        manifest.parent().unwrap_or(Path::new(".")).join(p)
    }
}

fn load_table(path: &Path) -> CliResult<FeatureTable> {
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    FeatureTable::read_csv(file).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn load_model(path: &Path) -> CliResult<TrainedModel> {
    TrainedModel::from_json(&read_text(path)?).map_err(|e| usage(format!("{}: {e}", path.display())))
}

// ---------------------------------------------------------------------------
// commands

pub fn cmd_synth(config: &Path, out: &Path) -> CliResult<PathBuf> {
    let spec = CorpusSpec::from_toml(&read_config(config)?)
        .map_err(|e| usage(format!("{}: {e}", config.display())))?;
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    synth::gen_corpus(&spec, out)?;
    Ok(out.join(synth::MANIFEST_NAME))
}

/// Extracts every row in parallel; the first failing row (in manifest
/// order) is reported.
fn extract_rows(
    manifest: &Path,
    rows: &[&ManifestRow],
    cfg: &ExtractorConfig,
) -> CliResult<Vec<FeatureVector>> {
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let results: Vec<CliResult<FeatureVector>> = rows
        .par_iter()
        .map(|r| {
            let path = resolve(manifest, &r.path);
            let img = imgio::load_image(&path).map_err(|e| io_err(&path, e))?;
            pipeline::extract_features(&img, cfg).map_err(|e| pipeline_err(&path, e))
        })
        .collect();
    results.into_iter().collect()
}

fn select_rows<'a>(
    rows: &'a [ManifestRow],
    split: Option<Split>,
    classes: &[String],
) -> CliResult<Vec<&'a ManifestRow>> {
    let known: BTreeSet<&str> = rows.iter().map(|r| r.class_name.as_str()).collect();
    if let Some(c) = classes.iter().find(|c| !known.contains(c.as_str())) {
        return Err(usage(format!("unknown class `{c}`")));
    }
    Ok(rows
        .iter()
        .filter(|r| split.is_none_or(|s| r.split == s))
        .filter(|r| classes.is_empty() || classes.contains(&r.class_name))
        .collect())
}

fn cmd_extract(a: &ExtractArgs) -> CliResult<()> {
    let channels = pipeline::parse_channels(&a.channels).map_err(usage)?;
    let cfg = ExtractorConfig {
        channels,
        dct_k: a.dct_k,
        fft_rings: a.fft_rings,
        fft_wedges: a.fft_wedges,
        hist_bins: a.hist_bins,
    };
    let rows = load_manifest(&a.manifest)?;
    let selected = select_rows(&rows, parse_split(a.split.as_deref())?, &[])?;
    let table = extract_table(&a.manifest, &selected, &cfg)?;
    write_table(&table, &cfg, &a.out)
}

fn extract_table(manifest: &Path, rows: &[&ManifestRow], cfg: &ExtractorConfig) -> CliResult<FeatureTable> {
    let vectors = extract_rows(manifest, rows, cfg)?;
    let schema = match vectors.first() {
        Some(v) => v.schema().clone(),
        None => schema_of(cfg)?,
    };
    let mut table = FeatureTable::new(schema);
    for (r, v) in rows.iter().zip(&vectors) {
        table.push(&r.class_name, v).map_err(|e| usage(e.to_string()))?;
    }
    Ok(table)
}

fn schema_of(cfg: &ExtractorConfig) -> CliResult<FeatureSchema> {
    FeatureSchema::new(
        cfg.channel_dims()
            .into_iter()
            .map(|(c, d)| (c.name().to_string(), d))
            .collect(),
    )
    .map_err(|e| usage(e.to_string()))
}

fn write_table(table: &FeatureTable, cfg: &ExtractorConfig, out: &Path) -> CliResult<()> {
    let mut buf = Vec::new();
    table.write_csv(&mut buf).map_err(|e| io_err(out, e))?;
    write_file(out, buf)?;
    let mut side = serde_json::to_string_pretty(cfg).expect("extractor config serializes");
    side.push('\n');
    write_file(&extractor_sidecar(out), side)
}

fn read_sidecar(csv: &Path) -> CliResult<Option<ExtractorConfig>> {
    let path = extractor_sidecar(csv);
    if !path.exists() {
        return Ok(None);
    }
    serde_json::from_str(&read_text(&path)?)
        .map(Some)
        .map_err(|e| usage(format!("{}: {e}", path.display())))
}

/// Class ids follow first appearance in the training labels.
fn class_index(labels: &[String]) -> Vec<String> {
    let mut names: Vec<String> = Vec::new();
    for l in labels {
        if !names.contains(l) {
            names.push(l.clone());
        }
    }
    names
}

fn label_ids(labels: &[String], names: &[String], what: &Path) -> CliResult<Vec<usize>> {
    let index: HashMap<&str, usize> = names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    labels
        .iter()
        .map(|l| {
            index
                .get(l.as_str())
                .copied()
                .ok_or_else(|| usage(format!("{}: class `{l}` is unknown to the model", what.display())))
        })
        .collect()
}

fn table_vectors(t: &FeatureTable) -> Vec<FeatureVector> {
    (0..t.len()).map(|i| t.vector(i)).collect()
}

fn classifier_config(a: &FitArgs) -> CliResult<ClassifierConfig> {
    let kind = ClassifierKind::parse(&a.model)
        .ok_or_else(|| usage(format!("unknown model `{}` (knn, svm, forest or boost)", a.model)))?;
    let mut cfg = match &a.config {
        Some(p) => parse_classifier_config(kind, &read_config(p)?, p)?,
        None => kind.default_config(),
    };
    match &mut cfg {
        ClassifierConfig::Knn(c) => {
            if let Some(k) = a.k {
                c.k = k;
            }
        }
        ClassifierConfig::LinearSvm(c) => {
            if let Some(v) = a.lambda {
                c.lambda = v;
            }
            if let Some(v) = a.epochs {
                c.epochs = v;
            }
        }
        ClassifierConfig::RandomForest(c) => {
            if let Some(v) = a.n_trees {
                c.n_trees = v;
            }
            if let Some(v) = a.max_depth {
                c.max_depth = Some(v);
            }
            if let Some(v) = a.min_leaf {
                c.min_leaf = v;
            }
            if a.no_bootstrap {
                c.bootstrap = false;
            }
        }
        ClassifierConfig::GradBoost(c) => {
            if let Some(v) = a.n_rounds {
                c.n_rounds = v;
            }
            if let Some(v) = a.depth {
                c.depth = v;
            }
            if let Some(v) = a.learning_rate {
                c.learning_rate = v;
            }
            if let Some(v) = a.l2_reg {
                c.l2_reg = v;
            }
        }
    }
    Ok(cfg)
}

fn parse_classifier_config(kind: ClassifierKind, text: &str, path: &Path) -> CliResult<ClassifierConfig> {
    let value: serde_json::Value = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(text).map_err(|e| usage(format!("{}: {e}", path.display())))?
    } else {
        toml::from_str(text).map_err(|e| usage(format!("{}: {e}", path.display())))?
    };
    config_from_value(kind, value).map_err(|e| usage(format!("{}: {e}", path.display())))
}

/// Missing fields take the kind's defaults.
fn config_from_value(kind: ClassifierKind, value: serde_json::Value) -> Result<ClassifierConfig, String> {
    fn merge<T: Serialize + for<'de> Deserialize<'de>>(
        default: T,
        over: serde_json::Value,
    ) -> Result<T, String> {
        let mut base = serde_json::to_value(default).expect("config serializes");
        match (base.as_object_mut(), over) {
            (Some(b), serde_json::Value::Object(o)) => b.extend(o),
            (_, other) => return Err(format!("expected a table of settings, got {other}")),
        }
        serde_json::from_value(base).map_err(|e| e.to_string())
    }
    Ok(match kind {
        ClassifierKind::Knn => ClassifierConfig::Knn(merge(KnnConfig::default(), value)?),
        ClassifierKind::LinearSvm => ClassifierConfig::LinearSvm(merge(SvmConfig::default(), value)?),
        ClassifierKind::RandomForest => ClassifierConfig::RandomForest(merge(ForestConfig::default(), value)?),
        ClassifierKind::GradBoost => ClassifierConfig::GradBoost(merge(BoostConfig::default(), value)?),
    })
}

fn fit_model(
    train: &FeatureTable,
    extractor: Option<ExtractorConfig>,
    cfg: &ClassifierConfig,
    seed: u64,
    what: &Path,
) -> CliResult<TrainedModel> {
    let names = class_index(&train.labels);
    let labels = label_ids(&train.labels, &names, what)?;
    let mut model = TrainedModel::fit(&table_vectors(train), &labels, names, cfg, seed)
        .map_err(|e| usage(format!("{}: {e}", what.display())))?;
    model.extractor = extractor;
    Ok(model)
}

fn cmd_fit(a: &FitArgs, seed: u64) -> CliResult<()> {
    let cfg = classifier_config(a)?;
    let train = load_table(&a.train)?;
    let val = load_table(&a.val)?;
    if train.schema != val.schema {
        return Err(usage(format!(
            "schema mismatch: {} has {:?}, {} has {:?}",
            a.train.display(),
            train.schema.channels(),
            a.val.display(),
            val.schema.channels()
        )));
    }
    let model = fit_model(&train, read_sidecar(&a.train)?, &cfg, seed, &a.train)?;
    write_file(&a.out, model.to_json())?;
    if val.is_empty() {
        return Ok(());
    }
    let report = evaluate(&model, &val, &a.val)?;
    let stem = a.out.with_extension("");
    write_file(&with_suffix(&stem, ".val.json"), report.to_json())?;
    write_file(&with_suffix(&stem, ".val.txt"), report.to_text())?;
    emit(&report.to_text())
}

/// SHA-256 over the settings that determine a model: kind, classifier
/// config, extractor, schema, classes and seed.
pub fn config_hash(model: &TrainedModel) -> String {
    let settings = serde_json::json!({
        "kind": model.kind,
        "config": model.config,
        "extractor": model.extractor,
        "schema": model.schema,
        "class_names": model.class_names,
        "seed": model.seed,
    });
    hex::encode(Sha256::digest(settings.to_string().as_bytes()))
}

fn feature_label(schema: &FeatureSchema) -> String {
    schema
        .channels()
        .iter()
        .map(|(n, _)| n.as_str())
        .collect::<Vec<_>>()
        .join("+")
}

fn evaluate(model: &TrainedModel, table: &FeatureTable, what: &Path) -> CliResult<EvaluationReport> {
    if table.schema != model.schema {
        return Err(usage(format!(
            "{}: schema {:?} does not match the model's {:?}",
            what.display(),
            table.schema.channels(),
            model.schema.channels()
        )));
    }
    let truths = label_ids(&table.labels, &model.class_names, what)?;
    let preds: Vec<usize> = table_vectors(table)
        .iter()
        .map(|v| model.predict(v).map(|p| p.label))
        .collect::<Result<_, _>>()
        .map_err(|e| usage(e.to_string()))?;
    let cm = eval::confusion(&truths, &preds, model.n_classes()).map_err(|e| usage(e.to_string()))?;
    let metrics = eval::metrics(&cm).map_err(|e| usage(format!("{}: {e}", what.display())))?;
    Ok(EvaluationReport {
        model: model.kind.short_name().to_string(),
        features: feature_label(&model.schema),
        class_names: model.class_names.clone(),
        seed: model.seed,
        config_hash: config_hash(model),
        confusion: cm,
        metrics,
    })
}

pub fn cmd_evaluate(model: &Path, test: &Path, out: &Path) -> CliResult<EvaluationReport> {
    let m = load_model(model)?;
    let table = load_table(test)?;
    let report = evaluate(&m, &table, test)?;
    write_file(out, report.to_json())?;
    write_file(&out.with_extension("txt"), report.to_text())?;
    Ok(report)
}

#[derive(Debug, Serialize)]
struct ClassScore<'a> {
    class: &'a str,
    score: f64,
}

#[derive(Debug, Serialize)]
struct PredictOutput<'a> {
    label: &'a str,
    scores: Vec<ClassScore<'a>>,
}

pub fn cmd_predict(model: &Path, image: &Path) -> CliResult<String> {
    let m = load_model(model)?;
    let extractor = m
        .extractor
        .as_ref()
        .ok_or_else(|| usage(format!("{}: model has no extractor settings", model.display())))?;
    let img = imgio::load_image(image).map_err(|e| io_err(image, e))?;
    let v = pipeline::extract_features(&img, extractor).map_err(|e| pipeline_err(image, e))?;
    let p = m.predict(&v).map_err(|e| usage(e.to_string()))?;
    let out = PredictOutput {
        label: &m.class_names[p.label],
        scores: m
            .class_names
            .iter()
            .zip(&p.scores)
            .map(|(class, &score)| ClassScore { class, score })
            .collect(),
    };
    Ok(serde_json::to_string_pretty(&out).expect("prediction serializes"))
}

fn group_by_class<'a>(rows: &[&'a ManifestRow]) -> Vec<(String, Vec<&'a ManifestRow>)> {
    let mut groups: Vec<(String, Vec<&ManifestRow>)> = Vec::new();
    for r in rows {
        match groups.iter_mut().find(|(n, _)| *n == r.class_name) {
            Some((_, g)) => g.push(r),
            None => groups.push((r.class_name.clone(), vec![r])),
        }
    }
    groups
}

pub fn cmd_heatmap(
    manifest: &Path,
    kind: HeatmapKind,
    classes: &[String],
    split: Option<&str>,
    out: &Path,
) -> CliResult<Vec<PathBuf>> {
    let rows = load_manifest(manifest)?;
    let selected = select_rows(&rows, parse_split(split)?, classes)?;
    if selected.is_empty() {
        return Err(usage("no images match the class and split filters"));
    }
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let mut written = Vec::new();
    for (name, group) in group_by_class(&selected) {
        let images = group
            .par_iter()
            .map(|r| {
                let path = resolve(manifest, &r.path);
                imgio::load_image(&path).map_err(|e| io_err(&path, e))
            })
            .collect::<Vec<_>>()
            .into_iter()
            .collect::<CliResult<Vec<_>>>()?;
        match kind {
            HeatmapKind::Dct | HeatmapKind::Fft => {
                let sk = if kind == HeatmapKind::Dct {
                    SpectralKind::DctCoeff
                } else {
                    SpectralKind::FftLogPower
                };
                let side = imgio::CANONICAL_SIDE;
                let grays = images
                    .par_iter()
                    .map(|img| imgio::resize(img, side, side).map(|r| imgio::to_grayscale(&r)))
                    .collect::<Result<Vec<_>, ImageError>>()
                    .map_err(|e| CliError::Io(format!("{name}: {e}")))?;
                let mean = spectral::mean_spectral_map(&grays, sk)
                    .map_err(|e| CliError::Io(format!("{name}: {e}")))?;
                let tag = if kind == HeatmapKind::Dct { "dct" } else { "fft" };
                let png = out.join(format!("{name}_{tag}.png"));
                spectral::write_spectral_heatmap(&mean, &png).map_err(|e| io_err(&png, e))?;
                written.push(png);
            }
            HeatmapKind::RgbHist => {
                let hists = images
                    .iter()
                    .map(|img| color::histogram(img, ColorSpace::Rgb, color::DEFAULT_BINS))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|e| CliError::Io(e.to_string()))?;
                let mean = color::mean_histogram(&hists).map_err(|e| CliError::Io(e.to_string()))?;
                let path = out.join(format!("{name}_rgb_hist.csv"));
                let mut buf = Vec::new();
                mean.write_csv(&mut buf).map_err(|e| io_err(&path, e))?;
                write_file(&path, buf)?;
                written.push(path);
            }
        }
    }
    Ok(written)
}

pub enum FeatureSource {
    Manifest(PathBuf),
    Csv(PathBuf),
}

pub fn cmd_attribution_report(
    model: &Path,
    source: &FeatureSource,
    split: Option<&str>,
    classes: &[String],
    out: &Path,
) -> CliResult<eval::SimilarityMatrix> {
    let m = load_model(model)?;
    let split = parse_split(split)?;
    let (labels, vectors) = match source {
        FeatureSource::Manifest(path) => {
            let extractor = m
                .extractor
                .as_ref()
                .ok_or_else(|| usage(format!("{}: model has no extractor settings", model.display())))?;
            let rows = load_manifest(path)?;
            let selected = select_rows(&rows, split, classes)?;
            let vectors = extract_rows(path, &selected, extractor)?;
            (selected.iter().map(|r| r.class_name.clone()).collect::<Vec<_>>(), vectors)
        }
        FeatureSource::Csv(path) => {
            if split.is_some() {
                return Err(usage("--split applies to manifests only"));
            }
            let t = load_table(path)?;
            let keep: Vec<usize> = (0..t.len())
                .filter(|&i| classes.is_empty() || classes.contains(&t.labels[i]))
                .collect();
            (
                keep.iter().map(|&i| t.labels[i].clone()).collect(),
                keep.iter().map(|&i| t.vector(i)).collect(),
            )
        }
    };
    let mut groups: Vec<(String, Vec<FeatureVector>)> = Vec::new();
    for (label, v) in labels.into_iter().zip(vectors) {
        let z = m.standardizer.apply(&v).map_err(|e| usage(e.to_string()))?;
        match groups.iter_mut().find(|(n, _)| *n == label) {
            Some((_, g)) => g.push(z),
            None => groups.push((label, vec![z])),
        }
    }
    if groups.len() < 2 {
        return Err(usage(format!("need at least 2 classes, found {}", groups.len())));
    }
    let matrix = eval::centroid_similarity_matrix(&groups).map_err(|e| usage(e.to_string()))?;
    write_file(out, matrix.to_csv())?;
    Ok(matrix)
}

/// One experiment: a corpus, the feature sets and models to compare, and
/// where to put the results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Existing manifest. Relative paths resolve against the config file.
    #[serde(default)]
    pub manifest: Option<PathBuf>,
    /// Corpus spec to generate into `<out_dir>/corpus` when no manifest is
    /// given.
    #[serde(default)]
    pub synth: Option<PathBuf>,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub averaging: Averaging,
    /// Table rows, each a list of channels.
    pub feature_sets: Vec<Vec<Channel>>,
    pub models: Vec<String>,
    /// Channel parameters; `channels` is ignored.
    #[serde(default)]
    pub extractor: Option<ExtractorParams>,
    /// Per-kind overrides keyed by short name (`knn`, `svm`, `forest`,
    /// `boost`).
    #[serde(default)]
    pub classifiers: HashMap<String, toml::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractorParams {
    #[serde(default = "default_dct_k")]
    pub dct_k: usize,
    #[serde(default = "default_rings")]
    pub fft_rings: usize,
    #[serde(default = "default_wedges")]
    pub fft_wedges: usize,
    #[serde(default = "default_bins")]
    pub hist_bins: usize,
}

fn default_dct_k() -> usize {
    spectral::DEFAULT_DCT_K
}
fn default_rings() -> usize {
    spectral::DEFAULT_FFT_RINGS
}
fn default_wedges() -> usize {
    spectral::DEFAULT_FFT_WEDGES
}
fn default_bins() -> usize {
    color::DEFAULT_BINS
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| e.to_string())?;
        if cfg.feature_sets.is_empty() || cfg.feature_sets.iter().any(|s| s.is_empty()) {
            return Err("every feature set needs at least one channel".into());
        }
        if cfg.models.is_empty() {
            return Err("no models listed".into());
        }
        if cfg.manifest.is_some() == cfg.synth.is_some() {
            return Err("give exactly one of `manifest` or `synth`".into());
        }
        Ok(cfg)
    }
}

/// Restricts a table to `channels`, in that order.
fn slice_table(t: &FeatureTable, channels: &[Channel]) -> CliResult<FeatureTable> {
    let ranges: Vec<_> = channels
        .iter()
        .map(|c| {
            t.schema
                .channel_range(c.name())
                .ok_or_else(|| usage(format!("channel `{c}` was not extracted")))
        })
        .collect::<CliResult<_>>()?;
    let schema = FeatureSchema::new(
        channels
            .iter()
            .zip(&ranges)
            .map(|(c, r)| (c.name().to_string(), r.len()))
            .collect(),
    )
    .map_err(|e| usage(e.to_string()))?;
    let mut out = FeatureTable::new(schema);
    out.labels = t.labels.clone();
    out.rows = t
        .rows
        .iter()
        .map(|row| ranges.iter().flat_map(|r| row[r.clone()].iter().copied()).collect())
        .collect();
    Ok(out)
}

pub fn cmd_run_experiment(config: &Path, out_override: Option<&Path>, cli_seed: u64) -> CliResult<String> {
    let cfg = ExperimentConfig::from_toml(&read_config(config)?)
        .map_err(|e| usage(format!("{}: {e}", config.display())))?;
    let base = config.parent().unwrap_or(Path::new("."));
    let out_dir = out_override.map(Path::to_path_buf).unwrap_or_else(|| base.join(&cfg.out_dir));
    let seed = cfg.seed.unwrap_or(cli_seed);
    let kinds: Vec<ClassifierKind> = cfg
        .models
        .iter()
        .map(|m| ClassifierKind::parse(m).ok_or_else(|| usage(format!("unknown model `{m}`"))))
        .collect::<CliResult<_>>()?;
    let mut classifier_cfgs = Vec::new();
    for &k in &kinds {
        let c = match cfg.classifiers.get(k.short_name()) {
            Some(v) => {
                let json = serde_json::to_value(v).map_err(|e| usage(e.to_string()))?;
                config_from_value(k, json).map_err(|e| usage(format!("classifiers.{}: {e}", k.short_name())))?
            }
            None => k.default_config(),
        };
        classifier_cfgs.push(c);
    }
    let manifest = match (&cfg.manifest, &cfg.synth) {
        (Some(m), _) => base.join(m),
        (None, Some(s)) => cmd_synth(&base.join(s), &out_dir.join("corpus"))?,
        (None, None) => unreachable!("validated"),
    };
    let mut channels: Vec<Channel> = Vec::new();
    for c in cfg.feature_sets.iter().flatten() {
        if !channels.contains(c) {
            channels.push(*c);
        }
    }
    let params = cfg.extractor.clone().unwrap_or(ExtractorParams {
        dct_k: default_dct_k(),
        fft_rings: default_rings(),
        fft_wedges: default_wedges(),
        hist_bins: default_bins(),
    });
    let extractor = ExtractorConfig {
        channels,
        dct_k: params.dct_k,
        fft_rings: params.fft_rings,
        fft_wedges: params.fft_wedges,
        hist_bins: params.hist_bins,
    };
    let rows = load_manifest(&manifest)?;
    let train_rows = select_rows(&rows, Some(Split::Train), &[])?;
    let test_rows = select_rows(&rows, Some(Split::Test), &[])?;
    if train_rows.is_empty() || test_rows.is_empty() {
        return Err(usage(format!("{}: needs train and test rows", manifest.display())));
    }
    let train = extract_table(&manifest, &train_rows, &extractor)?;
    let test = extract_table(&manifest, &test_rows, &extractor)?;
    let mut reports = Vec::new();
    for set in &cfg.feature_sets {
        let tr = slice_table(&train, set)?;
        let te = slice_table(&test, set)?;
        let sub = ExtractorConfig {
            channels: set.clone(),
            ..extractor.clone()
        };
        let tag = set.iter().map(|c| c.name()).collect::<Vec<_>>().join("+");
        for (kind, ccfg) in kinds.iter().zip(&classifier_cfgs) {
            let model = fit_model(&tr, Some(sub.clone()), ccfg, seed, &manifest)?;
            let report = evaluate(&model, &te, &manifest)?;
            let stem = out_dir.join(format!("{tag}_{}", kind.short_name()));
            write_file(&with_suffix(&stem, ".model.json"), model.to_json())?;
            write_file(&with_suffix(&stem, ".report.json"), report.to_json())?;
            reports.push(report);
        }
    }
    let refs: Vec<&EvaluationReport> = reports.iter().collect();
    let mut table = eval::results_table(&refs, cfg.averaging);
    let _ = writeln!(
        table,
        "\n{} averages; seed {seed}; {} train / {} test images",
        match cfg.averaging {
            Averaging::Macro => "macro",
            Averaging::Weighted => "weighted",
        },
        train.len(),
        test.len()
    );
    write_file(&out_dir.join("table.txt"), &table)?;
    Ok(table)
}
