//! Raw image to feature vector, as configured per experiment.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::color::{self, ColorError, ColorSpace};
use crate::features::{FeatureError, FeatureVector};
use crate::imgio::{self, Image, ImageError};
use crate::keypoints::{self, KeypointError};
use crate::spectral::{self, SpectralError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Color(#[from] ColorError),
    #[error(transparent)]
    Keypoint(#[from] KeypointError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error("invalid extractor config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Dct,
    Fft,
    Rgb,
    Hsv,
    Sift,
}

impl Channel {
    pub const ALL: [Channel; 5] = [
        Channel::Dct,
        Channel::Fft,
        Channel::Rgb,
        Channel::Hsv,
        Channel::Sift,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Channel::Dct => "dct",
            Channel::Fft => "fft",
            Channel::Rgb => "rgb",
            Channel::Hsv => "hsv",
            Channel::Sift => "sift",
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Channel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Channel::ALL
            .into_iter()
            .find(|c| c.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| format!("unknown feature channel `{s}` (expected dct, fft, rgb, hsv or sift)"))
    }
}

/// Parses a comma-separated channel list such as `dct,fft,rgb`.
pub fn parse_channels(s: &str) -> Result<Vec<Channel>, String> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(str::parse)
        .collect()
}

/// Selected channels, in output order, plus their parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtractorConfig {
    pub channels: Vec<Channel>,
    pub dct_k: usize,
    pub fft_rings: usize,
    pub fft_wedges: usize,
    pub hist_bins: usize,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        Self {
            channels: vec![Channel::Dct, Channel::Fft],
            dct_k: spectral::DEFAULT_DCT_K,
            fft_rings: spectral::DEFAULT_FFT_RINGS,
            fft_wedges: spectral::DEFAULT_FFT_WEDGES,
            hist_bins: color::DEFAULT_BINS,
        }
    }
}

impl ExtractorConfig {
    pub fn with_channels(channels: Vec<Channel>) -> Self {
        Self {
            channels,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.channels.is_empty() {
            return Err(PipelineError::Config("no feature channels selected".into()));
        }
        for (i, c) in self.channels.iter().enumerate() {
            if self.channels[..i].contains(c) {
                return Err(PipelineError::Config(format!("channel `{c}` listed twice")));
            }
        }
        let side = imgio::CANONICAL_SIDE;
        if self.dct_k == 0 || self.dct_k > side * side {
            return Err(PipelineError::Config(format!(
                "dct_k must be in 1..={}",
                side * side
            )));
        }
        if self.fft_rings == 0 || self.fft_wedges == 0 {
            return Err(PipelineError::Config("fft rings and wedges must be >= 1".into()));
        }
        if self.hist_bins < 2 || 256 % self.hist_bins != 0 {
            return Err(PipelineError::Config(
                "hist_bins must divide 256 and be at least 2".into(),
            ));
        }
        Ok(())
    }

    /// Dimensionality of the output for each selected channel.
    pub fn channel_dims(&self) -> Vec<(Channel, usize)> {
        self.channels
            .iter()
            .map(|&c| {
                let d = match c {
                    Channel::Dct => self.dct_k,
                    Channel::Fft => self.fft_rings * self.fft_wedges,
                    Channel::Rgb | Channel::Hsv => 3 * self.hist_bins,
                    Channel::Sift => keypoints::AGGREGATE_LEN,
                };
                (c, d)
            })
            .collect()
    }
}

/// Spectral and keypoint channels see the canonical luma raster; color
/// histograms use the native pixels.
pub fn extract_features(img: &Image, cfg: &ExtractorConfig) -> Result<FeatureVector, PipelineError> {
    cfg.validate()?;
    if img.width() < imgio::MIN_SIDE || img.height() < imgio::MIN_SIDE {
        return Err(ImageError::InvalidDimensions {
            width: img.width(),
            height: img.height(),
        }
        .into());
    }
    let needs_gray = cfg
        .channels
        .iter()
        .any(|c| matches!(c, Channel::Dct | Channel::Fft | Channel::Sift));
    let gray = if needs_gray {
        let side = imgio::CANONICAL_SIDE;
        Some(imgio::to_grayscale(&imgio::resize(img, side, side)?))
    } else {
        None
    };
    let gray = || gray.as_ref().expect("luma computed");
    let mut parts = Vec::with_capacity(cfg.channels.len());
    for &c in &cfg.channels {
        let v = match c {
            Channel::Dct => spectral::dct_feature_vector(&spectral::dct2(gray())?, cfg.dct_k)?,
            Channel::Fft => spectral::fft_feature_vector(
                &spectral::fft2_log_power(gray())?,
                cfg.fft_rings,
                cfg.fft_wedges,
            )?,
            Channel::Rgb => color::histogram(img, ColorSpace::Rgb, cfg.hist_bins)?.to_feature_vector()?,
            Channel::Hsv => color::histogram(img, ColorSpace::Hsv, cfg.hist_bins)?.to_feature_vector()?,
            Channel::Sift => {
                let (_, descs) = keypoints::extract_sift(gray())?;
                keypoints::aggregate_descriptors(&descs)?
            }
        };
        parts.push(v);
    }
    Ok(FeatureVector::concat(&parts)?)
}
