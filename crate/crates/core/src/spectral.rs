//! 2-D DCT and FFT representations of luma images and their fixed-length
//! reductions.
//!
//! Map layout is row-major with row = vertical frequency. DCT maps keep the
//! natural coefficient order (DC at the top-left); FFT log-power maps are
//! quadrant-swapped so DC sits at `(width / 2, height / 2)`.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureError, FeatureVector};
use crate::imgio::{self, GrayImage, ImageError};

pub const DEFAULT_DCT_K: usize = 256;
pub const DEFAULT_FFT_RINGS: usize = 32;
pub const DEFAULT_FFT_WEDGES: usize = 8;

#[derive(Debug, Error)]
pub enum SpectralError {
    #[error("input must be square, got {width}x{height}")]
    NonSquareInput { width: usize, height: usize },
    #[error("side {0} is not a power of two")]
    NotPowerOfTwo(usize),
    #[error("k = {k} exceeds the {available} available coefficients")]
    KTooLarge { k: usize, available: usize },
    #[error("expected a {expected:?} map, got {found:?}")]
    WrongKind {
        expected: SpectralKind,
        found: SpectralKind,
    },
    #[error("bin counts must be at least 1")]
    InvalidBinning,
    #[error("no input maps")]
    EmptyInput,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SpectralKind {
    DctCoeff,
    FftLogPower,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralMap {
    pub width: usize,
    pub height: usize,
    pub kind: SpectralKind,
    pub data: Vec<f64>,
}

impl SpectralMap {
    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    fn expect_kind(&self, kind: SpectralKind) -> Result<(), SpectralError> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(SpectralError::WrongKind {
                expected: kind,
                found: self.kind,
            })
        }
    }
}

fn square_side(g: &GrayImage) -> Result<usize, SpectralError> {
    if g.width() != g.height() {
        return Err(SpectralError::NonSquareInput {
            width: g.width(),
            height: g.height(),
        });
    }
    Ok(g.width())
}

// ---------------------------------------------------------------------------
// FFT

/// In-place iterative radix-2 FFT. `inverse` uses the conjugate twiddles and
/// applies no scaling.
pub fn fft_in_place(buf: &mut [Complex64], inverse: bool) {
    let n = buf.len();
    assert!(n.is_power_of_two(), "FFT length must be a power of two");
    if n <= 1 {
        return;
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            buf.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let twiddles: Vec<Complex64> = (0..half)
            .map(|k| Complex64::from_polar(1.0, sign * 2.0 * PI * k as f64 / len as f64))
            .collect();
        for chunk in buf.chunks_exact_mut(len) {
            let (lo, hi) = chunk.split_at_mut(half);
            for ((a, b), w) in lo.iter_mut().zip(hi.iter_mut()).zip(&twiddles) {
                let t = *b * w;
                *b = *a - t;
                *a += t;
            }
        }
        len <<= 1;
    }
}

/// Separable 2-D FFT of a square row-major buffer: rows first, then columns.
pub fn fft2_in_place(buf: &mut [Complex64], side: usize, inverse: bool) {
    assert_eq!(buf.len(), side * side);
    for row in buf.chunks_exact_mut(side) {
        fft_in_place(row, inverse);
    }
    let mut col = vec![Complex64::new(0.0, 0.0); side];
    for c in 0..side {
        for r in 0..side {
            col[r] = buf[r * side + c];
        }
        fft_in_place(&mut col, inverse);
        for r in 0..side {
            buf[r * side + c] = col[r];
        }
    }
}

/// Unshifted complex spectrum of a square, power-of-two luma image.
pub fn fft2(g: &GrayImage) -> Result<Vec<Complex64>, SpectralError> {
    let n = square_side(g)?;
    if !n.is_power_of_two() {
        return Err(SpectralError::NotPowerOfTwo(n));
    }
    let mut buf: Vec<Complex64> = g.data().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft2_in_place(&mut buf, n, false);
    Ok(buf)
}

/// Swaps quadrants so index `(0, 0)` moves to `(side / 2, side / 2)`.
pub fn fftshift<T: Copy>(data: &[T], side: usize) -> Vec<T> {
    let h = side / 2;
    let mut out = data.to_vec();
    for r in 0..side {
        for c in 0..side {
            out[((r + h) % side) * side + (c + h) % side] = data[r * side + c];
        }
    }
    out
}

/// Centered `log(1 + |F(u,v)|^2)`.
pub fn fft2_log_power(g: &GrayImage) -> Result<SpectralMap, SpectralError> {
    let n = g.width();
    let spec = fft2(g)?;
    let power: Vec<f64> = spec.iter().map(|z| z.norm_sqr().ln_1p()).collect();
    Ok(SpectralMap {
        width: n,
        height: n,
        kind: SpectralKind::FftLogPower,
        data: fftshift(&power, n),
    })
}

// ---------------------------------------------------------------------------
// DCT

/// Orthonormal DCT-II basis, `basis[k * n + i] = s(k) cos(pi (2i + 1) k / 2n)`.
fn dct_basis(n: usize) -> Vec<f64> {
    let s0 = (1.0 / n as f64).sqrt();
    let s = (2.0 / n as f64).sqrt();
    let mut basis = vec![0.0; n * n];
    for k in 0..n {
        let scale = if k == 0 { s0 } else { s };
        for i in 0..n {
            basis[k * n + i] =
                scale * (PI * (2 * i + 1) as f64 * k as f64 / (2 * n) as f64).cos();
        }
    }
    basis
}

/// Orthonormal type-II 2-D DCT: every row is transformed, then every column.
pub fn dct2(g: &GrayImage) -> Result<SpectralMap, SpectralError> {
    let n = square_side(g)?;
    let basis = dct_basis(n);
    let src = g.data();
    let mut rows = vec![0.0; n * n];
    for r in 0..n {
        let line = &src[r * n..(r + 1) * n];
        for k in 0..n {
            let b = &basis[k * n..(k + 1) * n];
            rows[r * n + k] = dot(line, b);
        }
    }
    // column pass on the transpose keeps the inner loop contiguous
    let mut t = vec![0.0; n * n];
    for r in 0..n {
        for c in 0..n {
            t[c * n + r] = rows[r * n + c];
        }
    }
    let mut out = vec![0.0; n * n];
    for c in 0..n {
        let line = &t[c * n..(c + 1) * n];
        for k in 0..n {
            let b = &basis[k * n..(k + 1) * n];
            out[k * n + c] = dot(line, b);
        }
    }
    Ok(SpectralMap {
        width: n,
        height: n,
        kind: SpectralKind::DctCoeff,
        data: out,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// JPEG zigzag traversal of a `height x width` grid as `(row, col)` pairs.
///
/// Anti-diagonal `d = row + col` is walked with decreasing row when `d` is
/// even and increasing row when `d` is odd.
pub fn zigzag_order(height: usize, width: usize) -> Vec<(usize, usize)> {
    let mut order = Vec::with_capacity(height * width);
    if height == 0 || width == 0 {
        return order;
    }
    for d in 0..(height + width - 1) {
        let lo = d.saturating_sub(width - 1);
        let hi = d.min(height - 1);
        if d % 2 == 0 {
            order.extend((lo..=hi).rev().map(|r| (r, d - r)));
        } else {
            order.extend((lo..=hi).map(|r| (r, d - r)));
        }
    }
    order
}

/// First `k` zigzag coefficients, each mapped through `sign(c) log(1 + |c|)`.
pub fn dct_feature_vector(m: &SpectralMap, k: usize) -> Result<FeatureVector, SpectralError> {
    m.expect_kind(SpectralKind::DctCoeff)?;
    let available = m.width * m.height;
    if k > available {
        return Err(SpectralError::KTooLarge { k, available });
    }
    let values = zigzag_order(m.height, m.width)
        .into_iter()
        .take(k)
        .map(|(r, c)| {
            let v = m.get(r, c);
            v.signum() * v.abs().ln_1p()
        })
        .collect();
    Ok(FeatureVector::single("dct", values)?)
}

/// Ring-major `(ring, wedge)` cell of every bin of a centered map.
///
/// Rings split `[0, r_max]` into equal widths where `r_max` is the distance
/// from the centre to the farthest corner, so every bin lands in a cell.
/// Angles are `atan2(row - cy, col - cx)` in `[0, 2pi)`.
pub fn ring_wedge_cells(width: usize, height: usize, n_rings: usize, n_wedges: usize) -> Vec<usize> {
    let cx = (width / 2) as f64;
    let cy = (height / 2) as f64;
    let r_max = cx.max(width as f64 - 1.0 - cx).hypot(cy.max(height as f64 - 1.0 - cy));
    let mut cells = Vec::with_capacity(width * height);
    for r in 0..height {
        for c in 0..width {
            let dx = c as f64 - cx;
            let dy = r as f64 - cy;
            let radius = dx.hypot(dy);
            let ring = if r_max > 0.0 {
                ((radius / r_max * n_rings as f64) as usize).min(n_rings - 1)
            } else {
                0
            };
            let mut theta = dy.atan2(dx);
            if theta < 0.0 {
                theta += 2.0 * PI;
            }
            let wedge = ((theta / (2.0 * PI) * n_wedges as f64) as usize).min(n_wedges - 1);
            cells.push(ring * n_wedges + wedge);
        }
    }
    cells
}

/// Mean log-power per (ring, wedge) cell around the centred DC bin. Empty
/// cells are 0.
pub fn fft_feature_vector(
    m: &SpectralMap,
    n_rings: usize,
    n_wedges: usize,
) -> Result<FeatureVector, SpectralError> {
    m.expect_kind(SpectralKind::FftLogPower)?;
    if n_rings == 0 || n_wedges == 0 {
        return Err(SpectralError::InvalidBinning);
    }
    let cells = ring_wedge_cells(m.width, m.height, n_rings, n_wedges);
    let mut sums = vec![0.0; n_rings * n_wedges];
    let mut counts = vec![0usize; n_rings * n_wedges];
    for (&cell, &v) in cells.iter().zip(&m.data) {
        sums[cell] += v;
        counts[cell] += 1;
    }
    let values = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &n)| if n == 0 { 0.0 } else { s / n as f64 })
        .collect();
    Ok(FeatureVector::single("fft", values)?)
}

/// Pixel count of each ring-wedge cell, matching [`fft_feature_vector`].
pub fn ring_wedge_counts(width: usize, height: usize, n_rings: usize, n_wedges: usize) -> Vec<usize> {
    let mut counts = vec![0; n_rings * n_wedges];
    for c in ring_wedge_cells(width, height, n_rings, n_wedges) {
        counts[c] += 1;
    }
    counts
}

pub fn spectral_map(g: &GrayImage, kind: SpectralKind) -> Result<SpectralMap, SpectralError> {
    match kind {
        SpectralKind::DctCoeff => dct2(g),
        SpectralKind::FftLogPower => fft2_log_power(g),
    }
}

/// Element-wise mean of the per-image maps.
///
/// Maps are computed in parallel but accumulated sequentially in input order,
/// so the result is independent of the thread count.
pub fn mean_spectral_map(
    images: &[GrayImage],
    kind: SpectralKind,
) -> Result<SpectralMap, SpectralError> {
    let first = images.first().ok_or(SpectralError::EmptyInput)?;
    if let Some(g) = images
        .iter()
        .find(|g| (g.width(), g.height()) != (first.width(), first.height()))
    {
        return Err(SpectralError::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            first.width(),
            first.height(),
            g.width(),
            g.height()
        )));
    }
    let maps = images
        .par_iter()
        .map(|g| spectral_map(g, kind))
        .collect::<Result<Vec<_>, _>>()?;
    mean_of_maps(&maps)
}

/// Sequential element-wise mean of equally sized maps of the same kind.
pub fn mean_of_maps(maps: &[SpectralMap]) -> Result<SpectralMap, SpectralError> {
    let first = maps.first().ok_or(SpectralError::EmptyInput)?;
    let mut acc = vec![0.0; first.data.len()];
    for m in maps {
        if (m.width, m.height, m.kind) != (first.width, first.height, first.kind) {
            return Err(SpectralError::DimensionMismatch(format!(
                "{}x{} {:?} vs {}x{} {:?}",
                first.width, first.height, first.kind, m.width, m.height, m.kind
            )));
        }
        for (a, v) in acc.iter_mut().zip(&m.data) {
            *a += v;
        }
    }
    let inv = 1.0 / maps.len() as f64;
    acc.iter_mut().for_each(|a| *a *= inv);
    Ok(SpectralMap {
        width: first.width,
        height: first.height,
        kind: first.kind,
        data: acc,
    })
}

/// Axis-band versus off-axis energy of a centred log-power map.
///
/// For every integer radius in `[r_min, r_max]`, bins within `half_width` of
/// the horizontal or vertical axis through DC form the band; the remaining
/// bins at the same radius are off-axis. Returns the sum over radii of the
/// band means divided by the sum of the off-axis means.
pub fn axis_band_ratio(m: &SpectralMap, half_width: f64, r_min: f64, r_max: f64) -> f64 {
    let cx = (m.width / 2) as f64;
    let cy = (m.height / 2) as f64;
    let n_radii = r_max.floor() as usize + 1;
    let mut band = vec![(0.0, 0usize); n_radii];
    let mut off = vec![(0.0, 0usize); n_radii];
    for r in 0..m.height {
        for c in 0..m.width {
            let dx = c as f64 - cx;
            let dy = r as f64 - cy;
            let radius = dx.hypot(dy).round();
            if radius < r_min || radius > r_max {
                continue;
            }
            let slot = if dx.abs() <= half_width || dy.abs() <= half_width {
                &mut band[radius as usize]
            } else {
                &mut off[radius as usize]
            };
            slot.0 += m.get(r, c);
            slot.1 += 1;
        }
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (b, o) in band.iter().zip(&off) {
        if b.1 > 0 && o.1 > 0 {
            num += b.0 / b.1 as f64;
            den += o.0 / o.1 as f64;
        }
    }
    if den > 0.0 {
        num / den
    } else {
        f64::INFINITY
    }
}

/// Writes a min-max normalized 8-bit PNG of `values` plus a sidecar text
/// file `<stem>.range.txt` recording the min and max used. Returns the
/// sidecar path.
pub fn write_heatmap(
    width: usize,
    height: usize,
    values: &[f64],
    png_path: &Path,
) -> Result<PathBuf, SpectralError> {
    if values.len() != width * height {
        return Err(SpectralError::DimensionMismatch(format!(
            "{} values for {width}x{height}",
            values.len()
        )));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let pixels: Vec<u8> = values
        .iter()
        .map(|v| {
            if span > 0.0 {
                ((v - lo) / span * 255.0).round() as u8
            } else {
                0
            }
        })
        .collect();
    fs::write(png_path, imgio::encode_png_gray(width, height, &pixels)?)?;
    let sidecar = png_path.with_extension("range.txt");
    fs::write(&sidecar, format!("min {lo:?}\nmax {hi:?}\n"))?;
    Ok(sidecar)
}

/// Heatmap of a spectral map. DCT coefficients are shown as `log(1 + |c|)`;
/// log-power maps are written as is.
pub fn write_spectral_heatmap(m: &SpectralMap, png_path: &Path) -> Result<PathBuf, SpectralError> {
    let values: Vec<f64> = match m.kind {
        SpectralKind::DctCoeff => m.data.iter().map(|c| c.abs().ln_1p()).collect(),
        SpectralKind::FftLogPower => m.data.clone(),
    };
    write_heatmap(m.width, m.height, &values, png_path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lcg_image(n: usize, seed: u64) -> GrayImage {
        let mut s = seed.wrapping_add(0x9e37_79b9_7f4a_7c15);
        GrayImage::from_fn(n, n, |_, _| {
            s = s
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 53) as f64
        })
    }

    /// Quadruple-loop orthonormal DCT-II.
    fn naive_dct(g: &GrayImage) -> Vec<f64> {
        let n = g.width();
        let nf = n as f64;
        let s = |k: usize| if k == 0 { (1.0 / nf).sqrt() } else { (2.0 / nf).sqrt() };
        let mut out = vec![0.0; n * n];
        for u in 0..n {
            for v in 0..n {
                let mut acc = 0.0;
                for y in 0..n {
                    for x in 0..n {
                        acc += g.get(x, y)
                            * (PI * (2 * y + 1) as f64 * u as f64 / (2.0 * nf)).cos()
                            * (PI * (2 * x + 1) as f64 * v as f64 / (2.0 * nf)).cos();
                    }
                }
                out[u * n + v] = s(u) * s(v) * acc;
            }
        }
        out
    }

    /// Quadruple-loop DFT power, unshifted.
    fn naive_power(g: &GrayImage) -> Vec<f64> {
        let n = g.width();
        let mut out = vec![0.0; n * n];
        for u in 0..n {
            for v in 0..n {
                let mut acc = Complex64::new(0.0, 0.0);
                for y in 0..n {
                    for x in 0..n {
                        let ph = -2.0 * PI * ((u * y) as f64 + (v * x) as f64) / n as f64;
                        acc += g.get(x, y) * Complex64::from_polar(1.0, ph);
                    }
                }
                out[u * n + v] = acc.norm_sqr();
            }
        }
        out
    }

    #[test]
    fn dct_of_constant_is_dc_only() {
        let n = 16;
        let c = 0.37;
        let m = dct2(&GrayImage::from_fn(n, n, |_, _| c)).unwrap();
        assert!((m.get(0, 0) - c * n as f64).abs() < 1e-9);
        for (i, v) in m.data.iter().enumerate().skip(1) {
            assert!(v.abs() < 1e-9, "bin {i} = {v}");
        }
    }

    #[test]
    fn dct_matches_naive_oracle() {
        let g = lcg_image(16, 7);
        let fast = dct2(&g).unwrap();
        let slow = naive_dct(&g);
        let diff = fast
            .data
            .iter()
            .zip(&slow)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-8, "max diff {diff}");
    }

    #[test]
    fn dct_commutes_with_transpose() {
        let g = lcg_image(16, 3);
        let a = dct2(&g).unwrap();
        let b = dct2(&g.transpose()).unwrap();
        for r in 0..16 {
            for c in 0..16 {
                assert!((a.get(r, c) - b.get(c, r)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dct_rejects_non_square() {
        let g = GrayImage::from_fn(16, 8, |_, _| 0.5);
        assert!(matches!(
            dct2(&g),
            Err(SpectralError::NonSquareInput { .. })
        ));
        assert!(matches!(
            fft2_log_power(&g),
            Err(SpectralError::NonSquareInput { .. })
        ));
    }

    #[test]
    fn fft_of_constant_is_centered_dc() {
        let n = 16;
        let c = 0.25;
        let m = fft2_log_power(&GrayImage::from_fn(n, n, |_, _| c)).unwrap();
        let expect = (c * (n * n) as f64).powi(2).ln_1p();
        for r in 0..n {
            for col in 0..n {
                let v = m.get(r, col);
                if (r, col) == (n / 2, n / 2) {
                    assert!((v - expect).abs() < 1e-9);
                } else {
                    assert!(v.abs() < 1e-12, "({r},{col}) = {v}");
                }
            }
        }
    }

    #[test]
    fn fft_of_impulse_is_flat() {
        let m = fft2_log_power(&GrayImage::from_fn(16, 16, |x, y| {
            if x == 0 && y == 0 {
                1.0
            } else {
                0.0
            }
        }))
        .unwrap();
        let first = m.data[0];
        assert!((first - 2f64.ln()).abs() < 1e-12);
        assert!(m.data.iter().all(|v| (v - first).abs() < 1e-12));
    }

    #[test]
    fn fft_matches_naive_dft() {
        let g = lcg_image(16, 11);
        let power: Vec<f64> = fft2(&g).unwrap().iter().map(|z| z.norm_sqr()).collect();
        let slow = naive_power(&g);
        for (a, b) in power.iter().zip(&slow) {
            assert!((a - b).abs() / b.max(1e-12) < 1e-6);
        }
    }

    #[test]
    fn fft_rejects_non_power_of_two() {
        let g = GrayImage::from_fn(12, 12, |_, _| 0.5);
        assert!(matches!(
            fft2_log_power(&g),
            Err(SpectralError::NotPowerOfTwo(12))
        ));
    }

    #[test]
    fn inverse_fft_round_trips() {
        let n = 32;
        let g = lcg_image(n, 5);
        let mut buf = fft2(&g).unwrap();
        fft2_in_place(&mut buf, n, true);
        for (z, v) in buf.iter().zip(g.data()) {
            assert!((z.re / (n * n) as f64 - v).abs() < 1e-12);
            assert!(z.im.abs() < 1e-9);
        }
    }

    #[test]
    fn zigzag_matches_jpeg_table() {
        // standard JPEG zigzag: position of each raster index in scan order
        #[rustfmt::skip]
        let jpeg: [usize; 64] = [
             0,  1,  8, 16,  9,  2,  3, 10,
            17, 24, 32, 25, 18, 11,  4,  5,
            12, 19, 26, 33, 40, 48, 41, 34,
            27, 20, 13,  6,  7, 14, 21, 28,
            35, 42, 49, 56, 57, 50, 43, 36,
            29, 22, 15, 23, 30, 37, 44, 51,
            58, 59, 52, 45, 38, 31, 39, 46,
            53, 60, 61, 54, 47, 55, 62, 63,
        ];
        let ours: Vec<usize> = zigzag_order(8, 8).iter().map(|(r, c)| r * 8 + c).collect();
        assert_eq!(ours, jpeg);
    }

    #[test]
    fn zigzag_matches_sort_oracle() {
        // sort by anti-diagonal, then by row descending on even, ascending on odd
        for (h, w) in [(8, 8), (5, 9), (9, 4), (1, 6)] {
            let mut cells: Vec<(usize, usize)> =
                (0..h).flat_map(|r| (0..w).map(move |c| (r, c))).collect();
            cells.sort_by_key(|&(r, c)| {
                let d = r + c;
                (d, if d % 2 == 0 { h - r } else { r })
            });
            assert_eq!(zigzag_order(h, w), cells);
        }
    }

    #[test]
    fn dct_features_of_constant_image() {
        let n = 16;
        let c = 0.5;
        let m = dct2(&GrayImage::from_fn(n, n, |_, _| c)).unwrap();
        let v = dct_feature_vector(&m, 3).unwrap();
        assert!((v.values()[0] - (c * n as f64).ln_1p()).abs() < 1e-12);
        assert!(v.values()[1].abs() < 1e-9 && v.values()[2].abs() < 1e-9);
        assert_eq!(v.schema().channels()[0].0, "dct");
    }

    #[test]
    fn dct_features_full_and_too_large() {
        let data: Vec<f64> = (0..64).map(|i| i as f64 - 20.0).collect();
        let m = SpectralMap {
            width: 8,
            height: 8,
            kind: SpectralKind::DctCoeff,
            data: data.clone(),
        };
        let v = dct_feature_vector(&m, 64).unwrap();
        for (val, (r, c)) in v.values().iter().zip(zigzag_order(8, 8)) {
            let x = data[r * 8 + c];
            assert_eq!(*val, x.signum() * x.abs().ln_1p());
        }
        assert!(matches!(
            dct_feature_vector(&m, 65),
            Err(SpectralError::KTooLarge { k: 65, available: 64 })
        ));
    }

    #[test]
    fn flat_map_gives_equal_bins() {
        let m = SpectralMap {
            width: 32,
            height: 32,
            kind: SpectralKind::FftLogPower,
            data: vec![0.7; 1024],
        };
        for (rings, wedges) in [(1, 1), (4, 4), (7, 3), (16, 8)] {
            let v = fft_feature_vector(&m, rings, wedges).unwrap();
            assert_eq!(v.len(), rings * wedges);
            let counts = ring_wedge_counts(32, 32, rings, wedges);
            for (&x, &n) in v.values().iter().zip(&counts) {
                let expect = if n == 0 { 0.0 } else { 0.7 };
                assert!((x - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn horizontal_axis_energy_lands_in_zero_and_pi_wedges() {
        let n = 32;
        let mut data = vec![0.0; n * n];
        for c in 0..n {
            if c != n / 2 {
                data[(n / 2) * n + c] = 1.0;
            }
        }
        let m = SpectralMap {
            width: n,
            height: n,
            kind: SpectralKind::FftLogPower,
            data,
        };
        // r_max = 16 sqrt 2, so the axis (radius <= 16) reaches rings 0..=2
        let v = fft_feature_vector(&m, 4, 4).unwrap();
        for (i, &x) in v.values().iter().enumerate() {
            let wedge = i % 4;
            if (wedge == 0 || wedge == 2) && i / 4 < 3 {
                assert!(x > 0.0, "wedge {wedge} ring {} empty", i / 4);
            } else {
                assert_eq!(x, 0.0);
            }
        }
    }

    #[test]
    fn ring_wedge_matches_per_pixel_oracle() {
        let n = 32;
        let g = lcg_image(n, 99);
        let m = SpectralMap {
            width: n,
            height: n,
            kind: SpectralKind::FftLogPower,
            data: g.data().to_vec(),
        };
        let (rings, wedges) = (4, 4);
        let v = fft_feature_vector(&m, rings, wedges).unwrap();
        // independent oracle: loop over cells, test membership per pixel
        let cx = 16.0f64;
        let r_max = (16.0f64 * 16.0 + 16.0 * 16.0).sqrt();
        for ring in 0..rings {
            for wedge in 0..wedges {
                let (mut s, mut k) = (0.0, 0);
                for y in 0..n {
                    for x in 0..n {
                        let dx = x as f64 - cx;
                        let dy = y as f64 - cx;
                        let rad = (dx * dx + dy * dy).sqrt();
                        let ang = dy.atan2(dx).rem_euclid(2.0 * PI);
                        let r_lo = ring as f64 * r_max / rings as f64;
                        let r_hi = (ring + 1) as f64 * r_max / rings as f64;
                        let a_lo = wedge as f64 * 2.0 * PI / wedges as f64;
                        let a_hi = (wedge + 1) as f64 * 2.0 * PI / wedges as f64;
                        let in_ring = rad >= r_lo && (rad < r_hi || ring == rings - 1);
                        let in_wedge = ang >= a_lo && (ang < a_hi || wedge == wedges - 1);
                        if in_ring && in_wedge {
                            s += m.get(y, x);
                            k += 1;
                        }
                    }
                }
                let expect = if k == 0 { 0.0 } else { s / k as f64 };
                let got = v.values()[ring * wedges + wedge];
                assert!((got - expect).abs() < 1e-9, "cell ({ring},{wedge})");
            }
        }
    }

    #[test]
    fn ring_wedge_preserves_total_mass() {
        let g = lcg_image(64, 4);
        let m = fft2_log_power(&g).unwrap();
        let v = fft_feature_vector(&m, 32, 8).unwrap();
        let counts = ring_wedge_counts(64, 64, 32, 8);
        let mass: f64 = v.values().iter().zip(&counts).map(|(x, &k)| x * k as f64).sum();
        let total: f64 = m.data.iter().sum();
        assert!((mass - total).abs() / total < 1e-6);
    }

    #[test]
    fn mean_map_cases() {
        let a = lcg_image(16, 1);
        let b = lcg_image(16, 2);
        let ma = dct2(&a).unwrap();
        let mb = dct2(&b).unwrap();
        let single = mean_spectral_map(std::slice::from_ref(&a), SpectralKind::DctCoeff).unwrap();
        assert_eq!(single, ma);
        let pair = mean_spectral_map(&[a.clone(), b], SpectralKind::DctCoeff).unwrap();
        for i in 0..pair.data.len() {
            assert!((pair.data[i] - 0.5 * (ma.data[i] + mb.data[i])).abs() < 1e-15);
        }
        let copies = vec![a.clone(); 10];
        let ten = mean_spectral_map(&copies, SpectralKind::FftLogPower).unwrap();
        let one = fft2_log_power(&a).unwrap();
        for (x, y) in ten.data.iter().zip(&one.data) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn mean_map_errors() {
        assert!(matches!(
            mean_spectral_map(&[], SpectralKind::DctCoeff),
            Err(SpectralError::EmptyInput)
        ));
        let res = mean_spectral_map(&[lcg_image(16, 1), lcg_image(8, 1)], SpectralKind::DctCoeff);
        assert!(matches!(res, Err(SpectralError::DimensionMismatch(_))));
    }

    #[test]
    fn isotropic_map_has_unit_axis_ratio() {
        let n = 64;
        let c = (n / 2) as f64;
        let data = (0..n * n)
            .map(|i| {
                let (r, col) = ((i / n) as f64, (i % n) as f64);
                1.0 / (1.0 + (r - c).hypot(col - c))
            })
            .collect();
        let m = SpectralMap {
            width: n,
            height: n,
            kind: SpectralKind::FftLogPower,
            data,
        };
        let ratio = axis_band_ratio(&m, 1.0, 4.0, 30.0);
        // only the sub-shell radius spread separates band and off-axis means
        assert!((ratio - 1.0).abs() < 0.01, "{ratio}");
    }

    #[test]
    fn heatmap_writes_png_and_range() {
        let dir = tempfile::tempdir().unwrap();
        let png = dir.path().join("mean.png");
        let values: Vec<f64> = (0..64).map(|i| i as f64 * 0.5 - 3.0).collect();
        let side = write_heatmap(8, 8, &values, &png).unwrap();
        let img = imgio::load_image(&png).unwrap();
        assert_eq!(img.pixel(0, 0), [0, 0, 0]);
        assert_eq!(img.pixel(7, 7), [255, 255, 255]);
        let text = fs::read_to_string(side).unwrap();
        assert_eq!(text, "min -3.0\nmax 28.5\n");
    }
}
