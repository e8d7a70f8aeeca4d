//! Per-channel normalized RGB and HSV histograms.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureError, FeatureVector};
use crate::imgio::Image;

pub const DEFAULT_BINS: usize = 32;

#[derive(Debug, Error, PartialEq)]
pub enum ColorError {
    #[error("invalid bin count {0}")]
    InvalidBins(usize),
    #[error("no histograms to average")]
    EmptyInput,
    #[error("histogram layout mismatch")]
    SchemaMismatch,
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ColorSpace {
    Rgb,
    Hsv,
}

impl ColorSpace {
    pub fn channel_name(self) -> &'static str {
        match self {
            ColorSpace::Rgb => "rgb",
            ColorSpace::Hsv => "hsv",
        }
    }

    fn labels(self) -> [&'static str; 3] {
        match self {
            ColorSpace::Rgb => ["R", "G", "B"],
            ColorSpace::Hsv => ["H", "S", "V"],
        }
    }
}

/// Three concatenated per-channel histograms, each summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorHistogram {
    pub space: ColorSpace,
    pub bins_per_channel: usize,
    pub data: Vec<f64>,
}

impl ColorHistogram {
    pub fn channel(&self, c: usize) -> &[f64] {
        &self.data[c * self.bins_per_channel..(c + 1) * self.bins_per_channel]
    }

    pub fn to_feature_vector(&self) -> Result<FeatureVector, ColorError> {
        Ok(FeatureVector::single(
            self.space.channel_name(),
            self.data.clone(),
        )?)
    }

    /// CSV with header `channel,bin,value`, one row per channel-bin.
    pub fn write_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["channel", "bin", "value"])?;
        for (c, label) in self.space.labels().iter().enumerate() {
            for (b, v) in self.channel(c).iter().enumerate() {
                wr.write_record([label.to_string(), b.to_string(), format!("{v:?}")])?;
            }
        }
        wr.flush()?;
        Ok(())
    }

    fn from_counts(space: ColorSpace, bins: usize, counts: Vec<u64>, pixels: usize) -> Self {
        let inv = 1.0 / pixels as f64;
        Self {
            space,
            bins_per_channel: bins,
            data: counts.into_iter().map(|k| k as f64 * inv).collect(),
        }
    }
}

/// Equal-width intensity bins; `bins` must divide 256.
pub fn rgb_histogram(img: &Image, bins: usize) -> Result<ColorHistogram, ColorError> {
    if bins == 0 || bins > 256 || 256 % bins != 0 {
        return Err(ColorError::InvalidBins(bins));
    }
    let width = 256 / bins;
    let mut counts = vec![0u64; 3 * bins];
    for px in img.pixels() {
        for (c, &v) in px.iter().enumerate() {
            counts[c * bins + v as usize / width] += 1;
        }
    }
    let n = img.width() * img.height();
    Ok(ColorHistogram::from_counts(ColorSpace::Rgb, bins, counts, n))
}

/// Hexcone conversion: `h` in degrees `[0, 360)`, `s` and `v` in `[0, 1]`.
/// Achromatic pixels get `h = 0`.
pub fn rgb_to_hsv(r: u8, g: u8, b: u8) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let v = max as f64 / 255.0;
    if max == min {
        return (0.0, 0.0, v);
    }
    let delta = (max - min) as f64;
    let s = delta / max as f64;
    let (r, g, b) = (r as f64, g as f64, b as f64);
    let sector = if max as f64 == r {
        ((g - b) / delta).rem_euclid(6.0)
    } else if max as f64 == g {
        (b - r) / delta + 2.0
    } else {
        (r - g) / delta + 4.0
    };
    let mut h = 60.0 * sector;
    if h >= 360.0 {
        h -= 360.0;
    }
    (h, s, v)
}

/// Inverse of [`rgb_to_hsv`], rounded to the nearest intensity.
pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (u8, u8, u8) {
    let c = v * s;
    let hp = (h / 60.0).rem_euclid(6.0);
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    let q = |t: f64| ((t + m) * 255.0).round().clamp(0.0, 255.0) as u8;
    (q(r), q(g), q(b))
}

/// H binned over `[0, 360)`, S and V over `[0, 1]`; the top edge of S and V
/// falls in the last bin.
pub fn hsv_histogram(img: &Image, bins: usize) -> Result<ColorHistogram, ColorError> {
    if bins < 2 {
        return Err(ColorError::InvalidBins(bins));
    }
    let bin_of = |t: f64| ((t * bins as f64) as usize).min(bins - 1);
    let mut counts = vec![0u64; 3 * bins];
    for [r, g, b] in img.pixels() {
        let (h, s, v) = rgb_to_hsv(r, g, b);
        counts[bin_of(h / 360.0)] += 1;
        counts[bins + bin_of(s)] += 1;
        counts[2 * bins + bin_of(v)] += 1;
    }
    let n = img.width() * img.height();
    Ok(ColorHistogram::from_counts(ColorSpace::Hsv, bins, counts, n))
}

pub fn histogram(img: &Image, space: ColorSpace, bins: usize) -> Result<ColorHistogram, ColorError> {
    match space {
        ColorSpace::Rgb => rgb_histogram(img, bins),
        ColorSpace::Hsv => hsv_histogram(img, bins),
    }
}

/// Element-wise mean, accumulated in input order.
pub fn mean_histogram(histograms: &[ColorHistogram]) -> Result<ColorHistogram, ColorError> {
    let first = histograms.first().ok_or(ColorError::EmptyInput)?;
    let mut acc = vec![0.0; first.data.len()];
    for h in histograms {
        if h.space != first.space || h.bins_per_channel != first.bins_per_channel {
            return Err(ColorError::SchemaMismatch);
        }
        for (a, v) in acc.iter_mut().zip(&h.data) {
            *a += v;
        }
    }
    let inv = 1.0 / histograms.len() as f64;
    Ok(ColorHistogram {
        space: first.space,
        bins_per_channel: first.bins_per_channel,
        data: acc.into_iter().map(|a| a * inv).collect(),
    })
}
