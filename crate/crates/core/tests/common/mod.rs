#![allow(dead_code)]

use std::path::{Path, PathBuf};

use provkit::classify::{ClassifierConfig, TrainedModel};
use provkit::features::{self, FeatureVector};
use provkit::imgio::Image;
use provkit::pipeline::{self, Channel, ExtractorConfig};
use provkit::synth::{self, CorpusSpec, Split};
use rayon::prelude::*;

pub fn repo_path(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

pub fn load_spec(rel: &str) -> CorpusSpec {
    let text = std::fs::read_to_string(repo_path(rel)).expect("corpus config readable");
    CorpusSpec::from_toml(&text).expect("corpus config valid")
}

/// Same images `gen_corpus` would write, kept in memory.
pub fn split_images(spec: &CorpusSpec, split: Split) -> Vec<(usize, Image)> {
    let jobs: Vec<(usize, usize)> = (0..spec.classes.len())
        .flat_map(|c| (0..spec.splits.get(split)).map(move |i| (c, i)))
        .collect();
    jobs.par_iter()
        .map(|&(c, i)| {
            let seed = synth::image_seed(spec.seed, c, split, i);
            (c, synth::gen_image(&spec.classes[c], spec.image_side, seed))
        })
        .collect()
}

pub struct Labeled {
    pub labels: Vec<usize>,
    pub rows: Vec<FeatureVector>,
}

pub fn extract_split(spec: &CorpusSpec, split: Split, channels: &[Channel]) -> Labeled {
    let cfg = ExtractorConfig::with_channels(channels.to_vec());
    let images = split_images(spec, split);
    let rows = images
        .par_iter()
        .map(|(_, img)| pipeline::extract_features(img, &cfg).expect("extraction succeeds"))
        .collect();
    Labeled {
        labels: images.iter().map(|(c, _)| *c).collect(),
        rows,
    }
}

/// Keeps only `channels`, in that order.
pub fn select(data: &Labeled, channels: &[&str]) -> Labeled {
    let rows = data
        .rows
        .iter()
        .map(|v| {
            let parts: Vec<(&str, &[f64])> = channels
                .iter()
                .map(|&c| (c, v.channel(c).expect("channel present")))
                .collect();
            features::concat(&parts).unwrap()
        })
        .collect();
    Labeled {
        labels: data.labels.clone(),
        rows,
    }
}

pub fn fit(train: &Labeled, n_classes: usize, cfg: &ClassifierConfig, seed: u64) -> TrainedModel {
    let names = (0..n_classes).map(|c| format!("c{c}")).collect();
    TrainedModel::fit(&train.rows, &train.labels, names, cfg, seed).expect("training succeeds")
}

pub fn accuracy(model: &TrainedModel, data: &Labeled) -> f64 {
    let hits = data
        .rows
        .iter()
        .zip(&data.labels)
        .filter(|(v, &y)| model.predict(v).unwrap().label == y)
        .count();
    hits as f64 / data.labels.len() as f64
}
