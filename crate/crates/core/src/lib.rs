//! Interpretable image-forensics features (DCT, FFT, color histograms, SIFT)
//! and classical classifiers for real-vs-synthetic detection and source
//! dataset attribution, plus a seeded surrogate-corpus generator.

pub mod classify;
pub mod cli;
pub mod color;
pub mod eval;
pub mod features;
pub mod imgio;
pub mod keypoints;
pub mod pipeline;
pub mod rng;
pub mod spectral;
pub mod synth;
