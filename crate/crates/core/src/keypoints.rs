//! Difference-of-Gaussians keypoints and SIFT descriptors, aggregated into a
//! fixed-length channel.
//!
//! The scale space has [`OCTAVES`] octaves with [`SCALES_PER_OCTAVE`]
//! intra-octave scales, so each octave holds `S + 3` Gaussian levels and
//! `S + 2` DoG levels. Extrema are searched in DoG levels `1..=S`.
//!
//! Coordinates follow image convention: `x` to the right, `y` down. Gradient
//! angles are `atan2(dy, dx)` in that frame.

use std::f64::consts::PI;
use std::io::Write;

use thiserror::Error;

use crate::features::{FeatureError, FeatureVector};
use crate::imgio::GrayImage;

pub const OCTAVES: usize = 3;
pub const SCALES_PER_OCTAVE: usize = 3;
pub const BASE_SIGMA: f64 = 1.6;
/// Blur assumed to be already present in the input.
pub const INPUT_BLUR: f64 = 0.5;
pub const CONTRAST_THRESHOLD: f64 = 0.03;
pub const EDGE_RATIO: f64 = 10.0;
pub const MIN_IMAGE_SIDE: usize = 32;
pub const DESCRIPTOR_LEN: usize = 128;
/// Length of the aggregated channel: mean, standard deviation, log count.
pub const AGGREGATE_LEN: usize = 2 * DESCRIPTOR_LEN + 1;

const BORDER: usize = 5;
const MAX_REFINE_STEPS: usize = 5;
const ORI_BINS: usize = 36;
const ORI_SIGMA_FACTOR: f64 = 1.5;
const ORI_RADIUS_FACTOR: f64 = 3.0 * ORI_SIGMA_FACTOR;
const DESC_WIDTH: usize = 4;
const DESC_ORI_BINS: usize = 8;
const DESC_SCALE_FACTOR: f64 = 3.0;
const DESC_CLAMP: f64 = 0.2;

#[derive(Debug, Error, PartialEq)]
pub enum KeypointError {
    #[error("image {width}x{height} is smaller than {MIN_IMAGE_SIDE} on a side")]
    ImageTooSmall { width: usize, height: usize },
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Keypoint {
    /// Sub-pixel position in input-image pixels.
    pub x: f64,
    pub y: f64,
    /// Gaussian sigma of the detecting level, in input-image pixels.
    pub scale: f64,
    /// Dominant gradient orientation in `[0, 2pi)`.
    pub orientation: f64,
    pub octave: usize,
    /// Interpolated DoG value at the extremum.
    pub response: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Descriptor(pub [f64; DESCRIPTOR_LEN]);

impl Descriptor {
    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn distance(&self, other: &Descriptor) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Debug, Clone)]
struct Plane {
    w: usize,
    h: usize,
    data: Vec<f64>,
}

impl Plane {
    #[inline]
    fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.w + x]
    }

    /// Border-clamped access.
    #[inline]
    fn clamped(&self, x: isize, y: isize) -> f64 {
        let x = x.clamp(0, self.w as isize - 1) as usize;
        let y = y.clamp(0, self.h as isize - 1) as usize;
        self.at(x, y)
    }

    /// Central-difference gradient `(dx, dy)` with clamped borders.
    #[inline]
    fn gradient(&self, x: isize, y: isize) -> (f64, f64) {
        (
            self.clamped(x + 1, y) - self.clamped(x - 1, y),
            self.clamped(x, y + 1) - self.clamped(x, y - 1),
        )
    }

    fn blur(&self, sigma: f64) -> Plane {
        let radius = ((3.0 * sigma).ceil() as isize).max(1);
        let kernel: Vec<f64> = {
            let k: Vec<f64> = (-radius..=radius)
                .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
                .collect();
            let s: f64 = k.iter().sum();
            k.into_iter().map(|v| v / s).collect()
        };
        let (w, h) = (self.w as isize, self.h as isize);
        let mut tmp = vec![0.0; self.data.len()];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (t, k) in kernel.iter().enumerate() {
                    acc += k * self.clamped(x + t as isize - radius, y);
                }
                tmp[(y * w + x) as usize] = acc;
            }
        }
        let tmp = Plane {
            w: self.w,
            h: self.h,
            data: tmp,
        };
        let mut out = vec![0.0; self.data.len()];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (t, k) in kernel.iter().enumerate() {
                    acc += k * tmp.clamped(x, y + t as isize - radius);
                }
                out[(y * w + x) as usize] = acc;
            }
        }
        Plane {
            w: self.w,
            h: self.h,
            data: out,
        }
    }

    fn downsample(&self) -> Plane {
        let w = self.w.div_ceil(2);
        let h = self.h.div_ceil(2);
        let mut data = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                data.push(self.at(2 * x, 2 * y));
            }
        }
        Plane { w, h, data }
    }
}

fn level_sigma(level: f64) -> f64 {
    BASE_SIGMA * 2f64.powf(level / SCALES_PER_OCTAVE as f64)
}

/// Gaussian and DoG pyramids of one image.
pub struct ScaleSpace {
    gauss: Vec<Vec<Plane>>,
    dog: Vec<Vec<Plane>>,
    width: usize,
    height: usize,
}

impl ScaleSpace {
    pub fn build(g: &GrayImage) -> Result<Self, KeypointError> {
        if g.width() < MIN_IMAGE_SIDE || g.height() < MIN_IMAGE_SIDE {
            return Err(KeypointError::ImageTooSmall {
                width: g.width(),
                height: g.height(),
            });
        }
        let input = Plane {
            w: g.width(),
            h: g.height(),
            data: g.data().to_vec(),
        };
        let mut base = input.blur((BASE_SIGMA * BASE_SIGMA - INPUT_BLUR * INPUT_BLUR).sqrt());
        let levels = SCALES_PER_OCTAVE + 3;
        let mut gauss = Vec::with_capacity(OCTAVES);
        let mut dog = Vec::with_capacity(OCTAVES);
        for o in 0..OCTAVES {
            if o > 0 {
                let prev: &Vec<Plane> = &gauss[o - 1];
                if prev[0].w < 2 * (2 * BORDER + 1) || prev[0].h < 2 * (2 * BORDER + 1) {
                    break;
                }
                base = prev[SCALES_PER_OCTAVE].downsample();
            }
            let mut octave = vec![base.clone()];
            for i in 1..levels {
                let (s0, s1) = (level_sigma(i as f64 - 1.0), level_sigma(i as f64));
                let next = octave[i - 1].blur((s1 * s1 - s0 * s0).sqrt());
                octave.push(next);
            }
            let diffs = octave
                .windows(2)
                .map(|p| Plane {
                    w: p[0].w,
                    h: p[0].h,
                    data: p[1].data.iter().zip(&p[0].data).map(|(a, b)| a - b).collect(),
                })
                .collect();
            gauss.push(octave);
            dog.push(diffs);
        }
        Ok(Self {
            gauss,
            dog,
            width: g.width(),
            height: g.height(),
        })
    }

    /// Keypoints ordered by octave, then `y`, then `x`.
    pub fn detect(&self) -> Vec<Keypoint> {
        let mut out = Vec::new();
        for (o, dogs) in self.dog.iter().enumerate() {
            let (w, h) = (dogs[0].w, dogs[0].h);
            if w <= 2 * BORDER || h <= 2 * BORDER {
                continue;
            }
            for layer in 1..=SCALES_PER_OCTAVE {
                for y in BORDER..h - BORDER {
                    for x in BORDER..w - BORDER {
                        let v = dogs[layer].at(x, y);
                        if v.abs() <= 0.5 * CONTRAST_THRESHOLD || !is_strict_extremum(dogs, layer, x, y) {
                            continue;
                        }
                        if let Some(kp) = self.refine(o, layer, x, y) {
                            out.push(kp);
                        }
                    }
                }
            }
        }
        out.sort_by(|a, b| {
            a.octave
                .cmp(&b.octave)
                .then(a.y.total_cmp(&b.y))
                .then(a.x.total_cmp(&b.x))
        });
        out
    }

    /// Quadratic sub-pixel refinement, contrast and edge rejection, then
    /// orientation assignment.
    fn refine(&self, o: usize, layer: usize, x: usize, y: usize) -> Option<Keypoint> {
        let dogs = &self.dog[o];
        let (w, h) = (dogs[0].w, dogs[0].h);
        let (mut x, mut y, mut s) = (x, y, layer);
        let mut offset = [0.0; 3];
        let mut converged = false;
        for _ in 0..MAX_REFINE_STEPS {
            let (grad, hess) = derivatives(dogs, s, x, y);
            offset = solve3(&hess, &grad)?.map(|v| -v);
            if offset.iter().all(|v| v.abs() < 0.5) {
                converged = true;
                break;
            }
            let step = |v: f64| v.round() as isize;
            let nx = x as isize + step(offset[0]);
            let ny = y as isize + step(offset[1]);
            let ns = s as isize + step(offset[2]);
            if ns < 1
                || ns > SCALES_PER_OCTAVE as isize
                || nx < BORDER as isize
                || nx >= (w - BORDER) as isize
                || ny < BORDER as isize
                || ny >= (h - BORDER) as isize
            {
                return None;
            }
            (x, y, s) = (nx as usize, ny as usize, ns as usize);
        }
        if !converged {
            return None;
        }
        let (grad, _) = derivatives(dogs, s, x, y);
        let response = dogs[s].at(x, y)
            + 0.5 * (grad[0] * offset[0] + grad[1] * offset[1] + grad[2] * offset[2]);
        if response.abs() < CONTRAST_THRESHOLD {
            return None;
        }
        // principal curvature ratio from the spatial Hessian
        let d = &dogs[s];
        let c = d.at(x, y);
        let dxx = d.at(x + 1, y) + d.at(x - 1, y) - 2.0 * c;
        let dyy = d.at(x, y + 1) + d.at(x, y - 1) - 2.0 * c;
        let dxy = (d.at(x + 1, y + 1) - d.at(x - 1, y + 1) - d.at(x + 1, y - 1)
            + d.at(x - 1, y - 1))
            / 4.0;
        let tr = dxx + dyy;
        let det = dxx * dyy - dxy * dxy;
        if det <= 0.0 || tr * tr * EDGE_RATIO >= (EDGE_RATIO + 1.0).powi(2) * det {
            return None;
        }
        let factor = (1usize << o) as f64;
        let px = (x as f64 + offset[0]) * factor;
        let py = (y as f64 + offset[1]) * factor;
        if px < 0.0 || py < 0.0 || px >= self.width as f64 || py >= self.height as f64 {
            return None;
        }
        let level = s as f64 + offset[2];
        let octave_sigma = level_sigma(level);
        let orientation = dominant_orientation(&self.gauss[o][s], x, y, octave_sigma);
        Some(Keypoint {
            x: px,
            y: py,
            scale: octave_sigma * factor,
            orientation,
            octave: o,
            response,
        })
    }

    /// Pyramid level `(octave, gaussian level)` closest to `scale`.
    fn level_for(&self, scale: f64) -> (usize, usize) {
        let t = (scale / BASE_SIGMA).log2().max(0.0) * SCALES_PER_OCTAVE as f64;
        let o = ((t / SCALES_PER_OCTAVE as f64).floor() as usize).min(self.gauss.len() - 1);
        let l = (t - (o * SCALES_PER_OCTAVE) as f64).round().max(0.0) as usize;
        (o, l.min(SCALES_PER_OCTAVE + 2))
    }

    /// SIFT descriptor: 4x4 spatial cells by 8 orientation bins, sampled in
    /// the keypoint's rotated frame with trilinear interpolation, then
    /// normalized, clamped at 0.2 and renormalized. A patch without any
    /// gradient yields the zero vector.
    pub fn describe(&self, kp: &Keypoint) -> Descriptor {
        let (o, l) = self.level_for(kp.scale);
        let img = &self.gauss[o][l];
        let factor = (1usize << o) as f64;
        let (cx, cy) = (kp.x / factor, kp.y / factor);
        let sigma = kp.scale / factor;
        let (xr, yr) = (cx.round(), cy.round());
        let (fx, fy) = (cx - xr, cy - yr);
        let d = DESC_WIDTH as f64;
        let hist_width = DESC_SCALE_FACTOR * sigma;
        let radius = (hist_width * std::f64::consts::SQRT_2 * (d + 1.0) * 0.5).round() as isize;
        let (sin_t, cos_t) = kp.orientation.sin_cos();
        let mut hist = [0.0; DESCRIPTOR_LEN];
        let bins_per_rad = DESC_ORI_BINS as f64 / (2.0 * PI);
        for i in -radius..=radius {
            for j in -radius..=radius {
                let (dx, dy) = (j as f64 - fx, i as f64 - fy);
                // offset expressed in the keypoint frame, in cell units
                let c_rot = (dx * cos_t + dy * sin_t) / hist_width;
                let r_rot = (-dx * sin_t + dy * cos_t) / hist_width;
                let rbin = r_rot + d / 2.0 - 0.5;
                let cbin = c_rot + d / 2.0 - 0.5;
                if rbin <= -1.0 || rbin >= d || cbin <= -1.0 || cbin >= d {
                    continue;
                }
                let (gx, gy) = img.gradient(xr as isize + j, yr as isize + i);
                let mag = gx.hypot(gy);
                if mag == 0.0 {
                    continue;
                }
                let angle = (gy.atan2(gx) - kp.orientation).rem_euclid(2.0 * PI);
                let obin = angle * bins_per_rad;
                let weight = (-(c_rot * c_rot + r_rot * r_rot) / (2.0 * (d / 2.0).powi(2))).exp();
                trilinear_add(&mut hist, rbin, cbin, obin, mag * weight);
            }
        }
        normalize_clamp(&mut hist);
        Descriptor(hist)
    }
}

fn trilinear_add(hist: &mut [f64; DESCRIPTOR_LEN], rbin: f64, cbin: f64, obin: f64, v: f64) {
    let (r0, c0, o0) = (rbin.floor(), cbin.floor(), obin.floor());
    let (dr, dc, d_o) = (rbin - r0, cbin - c0, obin - o0);
    let (r0, c0, o0) = (r0 as isize, c0 as isize, o0 as isize);
    for (ri, wr) in [(r0, 1.0 - dr), (r0 + 1, dr)] {
        if ri < 0 || ri >= DESC_WIDTH as isize {
            continue;
        }
        for (ci, wc) in [(c0, 1.0 - dc), (c0 + 1, dc)] {
            if ci < 0 || ci >= DESC_WIDTH as isize {
                continue;
            }
            for (oi, wo) in [(o0, 1.0 - d_o), (o0 + 1, d_o)] {
                let oi = oi.rem_euclid(DESC_ORI_BINS as isize) as usize;
                let idx = (ri as usize * DESC_WIDTH + ci as usize) * DESC_ORI_BINS + oi;
                hist[idx] += v * wr * wc * wo;
            }
        }
    }
}

fn normalize_clamp(hist: &mut [f64; DESCRIPTOR_LEN]) {
    let norm = hist.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return;
    }
    for v in hist.iter_mut() {
        *v = (*v / norm).min(DESC_CLAMP);
    }
    let norm = hist.iter().map(|v| v * v).sum::<f64>().sqrt();
    for v in hist.iter_mut() {
        *v /= norm;
    }
}

fn is_strict_extremum(dogs: &[Plane], layer: usize, x: usize, y: usize) -> bool {
    let v = dogs[layer].at(x, y);
    let (mut is_max, mut is_min) = (true, true);
    for plane in &dogs[layer - 1..=layer + 1] {
        for ny in y - 1..=y + 1 {
            for nx in x - 1..=x + 1 {
                if std::ptr::eq(plane, &dogs[layer]) && nx == x && ny == y {
                    continue;
                }
                let n = plane.at(nx, ny);
                is_max &= v > n;
                is_min &= v < n;
                if !is_max && !is_min {
                    return false;
                }
            }
        }
    }
    is_max || is_min
}

/// Finite-difference gradient and Hessian of the DoG stack in `(x, y, s)`.
fn derivatives(dogs: &[Plane], s: usize, x: usize, y: usize) -> ([f64; 3], [[f64; 3]; 3]) {
    let (p, c, n) = (&dogs[s - 1], &dogs[s], &dogs[s + 1]);
    let v = c.at(x, y);
    let dx = (c.at(x + 1, y) - c.at(x - 1, y)) / 2.0;
    let dy = (c.at(x, y + 1) - c.at(x, y - 1)) / 2.0;
    let ds = (n.at(x, y) - p.at(x, y)) / 2.0;
    let dxx = c.at(x + 1, y) + c.at(x - 1, y) - 2.0 * v;
    let dyy = c.at(x, y + 1) + c.at(x, y - 1) - 2.0 * v;
    let dss = n.at(x, y) + p.at(x, y) - 2.0 * v;
    let dxy = (c.at(x + 1, y + 1) - c.at(x - 1, y + 1) - c.at(x + 1, y - 1) + c.at(x - 1, y - 1)) / 4.0;
    let dxs = (n.at(x + 1, y) - n.at(x - 1, y) - p.at(x + 1, y) + p.at(x - 1, y)) / 4.0;
    let dys = (n.at(x, y + 1) - n.at(x, y - 1) - p.at(x, y + 1) + p.at(x, y - 1)) / 4.0;
    (
        [dx, dy, ds],
        [[dxx, dxy, dxs], [dxy, dyy, dys], [dxs, dys, dss]],
    )
}

/// Solves `a x = b` by Cramer's rule; `None` when `a` is singular.
fn solve3(a: &[[f64; 3]; 3], b: &[f64; 3]) -> Option<[f64; 3]> {
    let det3 = |m: &[[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let det = det3(a);
    if det.abs() < 1e-15 {
        return None;
    }
    let mut out = [0.0; 3];
    for (col, slot) in out.iter_mut().enumerate() {
        let mut m = *a;
        for row in 0..3 {
            m[row][col] = b[row];
        }
        *slot = det3(&m) / det;
    }
    Some(out)
}

/// Peak of a smoothed, Gaussian-weighted 36-bin gradient orientation
/// histogram, refined by a parabola through the peak and its neighbours.
fn dominant_orientation(img: &Plane, x: usize, y: usize, sigma: f64) -> f64 {
    let radius = (ORI_RADIUS_FACTOR * sigma).round() as isize;
    let wsig = ORI_SIGMA_FACTOR * sigma;
    let mut hist = [0.0; ORI_BINS];
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            let (gx, gy) = img.gradient(x as isize + dx, y as isize + dy);
            let mag = gx.hypot(gy);
            if mag == 0.0 {
                continue;
            }
            let w = (-((dx * dx + dy * dy) as f64) / (2.0 * wsig * wsig)).exp();
            let theta = gy.atan2(gx).rem_euclid(2.0 * PI);
            let bin = (theta * ORI_BINS as f64 / (2.0 * PI)).round() as usize % ORI_BINS;
            hist[bin] += w * mag;
        }
    }
    let at = |h: &[f64; ORI_BINS], i: isize| h[i.rem_euclid(ORI_BINS as isize) as usize];
    let mut smooth = [0.0; ORI_BINS];
    for (i, s) in smooth.iter_mut().enumerate() {
        let i = i as isize;
        *s = (at(&hist, i - 2) + at(&hist, i + 2)) / 16.0
            + 4.0 * (at(&hist, i - 1) + at(&hist, i + 1)) / 16.0
            + 6.0 * at(&hist, i) / 16.0;
    }
    let peak = (0..ORI_BINS)
        .fold(0, |best, i| if smooth[i] > smooth[best] { i } else { best });
    let (l, c, r) = (
        at(&smooth, peak as isize - 1),
        smooth[peak],
        at(&smooth, peak as isize + 1),
    );
    let denom = l - 2.0 * c + r;
    let shift = if denom.abs() > 0.0 { 0.5 * (l - r) / denom } else { 0.0 };
    ((peak as f64 + shift) * 2.0 * PI / ORI_BINS as f64).rem_euclid(2.0 * PI)
}

pub fn detect_keypoints(g: &GrayImage) -> Result<Vec<Keypoint>, KeypointError> {
    Ok(ScaleSpace::build(g)?.detect())
}

/// Builds the scale space of `g` and describes one keypoint. Use
/// [`ScaleSpace::describe`] to describe many keypoints of one image.
pub fn compute_descriptor(g: &GrayImage, kp: &Keypoint) -> Result<Descriptor, KeypointError> {
    Ok(ScaleSpace::build(g)?.describe(kp))
}

/// Detects keypoints and describes each one from a single scale space.
pub fn extract_sift(g: &GrayImage) -> Result<(Vec<Keypoint>, Vec<Descriptor>), KeypointError> {
    let ss = ScaleSpace::build(g)?;
    let kps = ss.detect();
    let descs = kps.iter().map(|k| ss.describe(k)).collect();
    Ok((kps, descs))
}

/// Element-wise mean, element-wise population standard deviation and
/// `ln(1 + count)`. An empty list gives all zeros.
pub fn aggregate_descriptors(descs: &[Descriptor]) -> Result<FeatureVector, KeypointError> {
    let mut values = vec![0.0; AGGREGATE_LEN];
    if !descs.is_empty() {
        let n = descs.len() as f64;
        let (mean, std) = values.split_at_mut(DESCRIPTOR_LEN);
        for d in descs {
            for (m, v) in mean.iter_mut().zip(&d.0) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        for d in descs {
            for ((s, v), m) in std.iter_mut().zip(&d.0).zip(mean.iter()) {
                *s += (v - m) * (v - m);
            }
        }
        for s in std[..DESCRIPTOR_LEN].iter_mut() {
            *s = (*s / n).sqrt();
        }
        values[AGGREGATE_LEN - 1] = n.ln_1p();
    }
    Ok(FeatureVector::single("sift", values)?)
}

/// Debug dump with header `x,y,scale,orientation`.
pub fn write_keypoints_csv<W: Write>(kps: &[Keypoint], w: W) -> csv::Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["x", "y", "scale", "orientation"])?;
    for k in kps {
        wr.write_record([k.x, k.y, k.scale, k.orientation].map(|v| format!("{v:?}")))?;
    }
    wr.flush()?;
    Ok(())
}
