//! Seeded surrogate corpora: procedurally generated "real-like" and
//! "GAN-like" image classes with controllable spectral and color signatures.
//!
//! An image is built in six steps:
//!
//! 1. complex spectrum with amplitude `f^-alpha` and random phase; below
//!    `LAYOUT_CUTOFF` cycles per image the phase is pulled toward a layout
//!    phase shared by every image of the same source (see
//!    [`ClassSpec::layout_coherence`]);
//! 2. extra amplitude `cross_strength * RIDGE_GAIN * f^-RIDGE_EXPONENT` on the
//!    horizontal and vertical frequency axes;
//! 3. real part of the inverse FFT, min-max normalized to `[0, 1]`;
//! 4. plus `checkerboard_strength * COMB_AMPLITUDE * (comb - 1/2)`, where the
//!    comb is the mean of a horizontal and a vertical square wave of the
//!    given period;
//! 5. blend toward the rank-equalized field by `histogram_smoothing`, then
//!    colorize each channel as `CONTRAST * (x - 1/2) + 1/2 + color_bias[c]`;
//! 6. clamp and quantize to 8 bits with round-half-away.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::imgio::{self, Image, ImageError};
use crate::rng::{derive_seed, SplitMix64};
use crate::spectral::fft2_in_place;

pub const RIDGE_GAIN: f64 = 0.3;
pub const RIDGE_EXPONENT: f64 = 0.0;
pub const COMB_AMPLITUDE: f64 = 0.1;
pub const CONTRAST: f64 = 0.75;
pub const LAYOUT_CUTOFF: f64 = 12.0;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid corpus spec: {0}")]
    Invalid(String),
    #[error("cannot parse corpus spec: {0}")]
    Parse(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("manifest: {0}")]
    Manifest(String),
}

impl SynthError {
    fn io(path: &Path, source: io::Error) -> Self {
        SynthError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSpec {
    pub name: String,
    pub spectral_exponent: f64,
    #[serde(default)]
    pub checkerboard_strength: f64,
    #[serde(default = "default_period")]
    pub checkerboard_period: usize,
    #[serde(default)]
    pub cross_strength: f64,
    #[serde(default)]
    pub color_bias: [f64; 3],
    #[serde(default)]
    pub histogram_smoothing: f64,
    /// How strongly low-frequency phases follow the source's fixed layout:
    /// 0 gives independent images, 1 gives identical low-frequency content.
    #[serde(default)]
    pub layout_coherence: f64,
    /// Real-like class this one derives from, by name. Its name keys the
    /// shared layout; exponent and color balance are still set explicitly.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

fn default_period() -> usize {
    2
}

impl ClassSpec {
    /// A class with no artifacts.
    pub fn real_like(name: &str, alpha: f64, color_bias: [f64; 3]) -> Self {
        Self {
            name: name.to_string(),
            spectral_exponent: alpha,
            checkerboard_strength: 0.0,
            checkerboard_period: 2,
            cross_strength: 0.0,
            color_bias,
            histogram_smoothing: 0.0,
            layout_coherence: 0.0,
            source: None,
        }
    }

    /// Name of the source whose layout this class shares: its own name for a
    /// class without a source.
    pub fn layout_key(&self) -> &str {
        self.source.as_deref().unwrap_or(&self.name)
    }

    pub fn has_artifacts(&self) -> bool {
        self.checkerboard_strength > 0.0 || self.cross_strength > 0.0
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |what: &str| Err(SynthError::Invalid(format!("class `{}`: {what}", self.name)));
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if self.name.is_empty() || self.name.contains(['/', '\\', ',', '"']) {
            return bad("name must be non-empty without `/`, `\\`, `,` or quotes");
        }
        if !(0.0..=4.0).contains(&self.spectral_exponent) {
            return bad("spectral_exponent must be in [0, 4]");
        }
        if ![
            self.checkerboard_strength,
            self.cross_strength,
            self.histogram_smoothing,
            self.layout_coherence,
        ]
        .into_iter()
        .all(unit)
        {
            return bad("strengths, smoothing and coherence must be in [0, 1]");
        }
        if self.checkerboard_period < 2 {
            return bad("checkerboard_period must be at least 2");
        }
        if self.color_bias.iter().any(|b| !(-0.2..=0.2).contains(b)) {
            return bad("color_bias entries must be in [-0.2, 0.2]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        Split::ALL.into_iter().find(|x| x.name() == s)
    }

    fn index(self) -> u64 {
        self as u64
    }
}

impl SplitSizes {
    pub fn get(&self, s: Split) -> usize {
        match s {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSpec {
    pub seed: u64,
    pub image_side: usize,
    pub splits: SplitSizes,
    pub classes: Vec<ClassSpec>,
}

impl CorpusSpec {
    pub fn from_toml(text: &str) -> Result<Self, SynthError> {
        let spec: CorpusSpec = toml::from_str(text).map_err(|e| SynthError::Parse(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("corpus spec serializes")
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.image_side < 64 || !self.image_side.is_power_of_two() {
            return Err(SynthError::Invalid(format!(
                "image_side {} must be a power of two >= 64",
                self.image_side
            )));
        }
        if self.classes.len() < 2 {
            return Err(SynthError::Invalid("need at least 2 classes".into()));
        }
        let mut seen = HashSet::new();
        for c in &self.classes {
            c.validate()?;
            if !seen.insert(c.name.as_str()) {
                return Err(SynthError::Invalid(format!("duplicate class `{}`", c.name)));
            }
        }
        for c in &self.classes {
            if let Some(src) = &c.source {
                match self.classes.iter().find(|o| &o.name == src) {
                    Some(o) if o.source.is_none() && o.name != c.name => {}
                    _ => {
                        return Err(SynthError::Invalid(format!(
                            "class `{}`: source `{src}` must name another class without a source",
                            c.name
                        )))
                    }
                }
            }
        }
        Ok(())
    }

    pub fn class_names(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.name.clone()).collect()
    }
}

/// First 8 bytes of the SHA-256 of `key`, little-endian.
pub fn layout_seed(key: &str) -> u64 {
    let digest = Sha256::digest(key.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

fn signed_freq(i: usize, n: usize) -> f64 {
    if i <= n / 2 {
        i as f64
    } else {
        i as f64 - n as f64
    }
}

/// Steps 1 to 4: the normalized luma field before colorization. The comb
/// may push values slightly outside `[0, 1]`.
pub fn gen_field(spec: &ClassSpec, side: usize, seed: u64) -> Vec<f64> {
    assert!(side.is_power_of_two(), "side must be a power of two");
    let n = side;
    let mut rng = SplitMix64::new(seed);
    let mut layout = SplitMix64::new(layout_seed(spec.layout_key()));
    let pull = 1.0 - spec.layout_coherence;
    let mut buf = vec![Complex64::new(0.0, 0.0); n * n];
    for v in 0..n {
        let fv = signed_freq(v, n);
        for u in 0..n {
            let fu = signed_freq(u, n);
            let mut phase = 2.0 * PI * rng.next_f64();
            let shared = 2.0 * PI * layout.next_f64();
            let f = fu.hypot(fv);
            if f <= LAYOUT_CUTOFF {
                phase = shared + pull * (phase - PI);
            }
            if f == 0.0 {
                continue;
            }
            let mut amp = f.powf(-spec.spectral_exponent);
            if fu == 0.0 || fv == 0.0 {
                amp += spec.cross_strength * RIDGE_GAIN * f.powf(-RIDGE_EXPONENT);
            }
            buf[v * n + u] = Complex64::from_polar(amp, phase);
        }
    }
    fft2_in_place(&mut buf, n, true);
    let mut field: Vec<f64> = buf.iter().map(|z| z.re).collect();
    let (lo, hi) = field
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let span = hi - lo;
    for x in &mut field {
        *x = if span > 0.0 { (*x - lo) / span } else { 0.5 };
    }
    if spec.checkerboard_strength > 0.0 {
        let p = spec.checkerboard_period;
        let wave = |i: usize| if (i % p) * 2 < p { 1.0 } else { 0.0 };
        let gain = spec.checkerboard_strength * COMB_AMPLITUDE;
        for y in 0..n {
            for x in 0..n {
                let comb = 0.5 * (wave(x) + wave(y));
                field[y * n + x] += gain * (comb - 0.5);
            }
        }
    }
    field
}

/// Empirical CDF value of every element, ties broken by position.
fn rank_equalize(field: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..field.len()).collect();
    order.sort_by(|&a, &b| field[a].total_cmp(&field[b]).then(a.cmp(&b)));
    let denom = (field.len().max(2) - 1) as f64;
    let mut out = vec![0.0; field.len()];
    for (rank, &i) in order.iter().enumerate() {
        out[i] = rank as f64 / denom;
    }
    out
}

pub fn gen_image(spec: &ClassSpec, side: usize, seed: u64) -> Image {
    let mut field = gen_field(spec, side, seed);
    let s = spec.histogram_smoothing;
    if s > 0.0 {
        let eq = rank_equalize(&field);
        for (x, e) in field.iter_mut().zip(eq) {
            *x = (1.0 - s) * *x + s * e;
        }
    }
    let quantize = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    Image::from_fn(side, side, |x, y| {
        let base = CONTRAST * (field[y * side + x] - 0.5) + 0.5;
        [0, 1, 2].map(|c| quantize(base + spec.color_bias[c]))
    })
}

/// Seed of image `index` of class `class` in `split`.
pub fn image_seed(master: u64, class: usize, split: Split, index: usize) -> u64 {
    derive_seed(master, &[class as u64, split.index(), index as u64])
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub path: String,
    pub class_name: String,
    pub class_id: usize,
    pub split: Split,
}

pub const MANIFEST_NAME: &str = "manifest.csv";

/// Writes `<split>/<class>/<index>.png` for every image plus `manifest.csv`
/// (rows ordered by split, class, index; paths relative to `out_dir`).
/// Images are generated in parallel; the output does not depend on the
/// thread count.
pub fn gen_corpus(spec: &CorpusSpec, out_dir: &Path) -> Result<Vec<ManifestRow>, SynthError> {
    spec.validate()?;
    let mut jobs = Vec::new();
    for split in Split::ALL {
        for (ci, class) in spec.classes.iter().enumerate() {
            let dir = out_dir.join(split.name()).join(&class.name);
            fs::create_dir_all(&dir).map_err(|e| SynthError::io(&dir, e))?;
            for idx in 0..spec.splits.get(split) {
                jobs.push((split, ci, idx));
            }
        }
    }
    let rows: Vec<ManifestRow> = jobs
        .par_iter()
        .map(|&(split, ci, idx)| {
            let class = &spec.classes[ci];
            let img = gen_image(class, spec.image_side, image_seed(spec.seed, ci, split, idx));
            let rel = format!("{}/{}/{idx:04}.png", split.name(), class.name);
            let path = out_dir.join(&rel);
            let bytes = imgio::encode_png_rgb(&img)?;
            fs::write(&path, bytes).map_err(|e| SynthError::io(&path, e))?;
            Ok(ManifestRow {
                path: rel,
                class_name: class.name.clone(),
                class_id: ci,
                split,
            })
        })
        .collect::<Result<_, SynthError>>()?;
    let manifest = out_dir.join(MANIFEST_NAME);
    write_manifest(&rows, &manifest)?;
    Ok(rows)
}

pub fn write_manifest(rows: &[ManifestRow], path: &Path) -> Result<(), SynthError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| SynthError::Manifest(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| SynthError::Manifest(e.to_string()))?;
    fs::write(path, bytes).map_err(|e| SynthError::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>, SynthError> {
    let bytes = fs::read(path).map_err(|e| SynthError::io(path, e))?;
    let mut r = csv::Reader::from_reader(bytes.as_slice());
    r.deserialize()
        .map(|row| row.map_err(|e| SynthError::Manifest(format!("{}: {e}", path.display()))))
        .collect()
}
