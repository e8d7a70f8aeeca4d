//! Image loading, luma conversion and bilinear resampling.
//!
//! Every extractor downstream consumes either an [`Image`] (8-bit RGB,
//! interleaved) or a [`GrayImage`] (luma in `[0, 1]`). Only lossless formats
//! are read: PNG and binary PPM (`P6`).

use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

/// Smallest output side accepted by [`resize`].
pub const MIN_SIDE: usize = 8;

/// Side of the square grid every image is resampled to before spectral analysis.
pub const CANONICAL_SIDE: usize = 256;

const PNG_MAGIC: [u8; 8] = [0x89, b'P', b'N', b'G', 0x0d, 0x0a, 0x1a, 0x0a];

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("file not found: {0}")]
    FileNotFound(String),
    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),
    #[error("corrupt image data: {0}")]
    CorruptData(String),
    #[error("invalid dimensions {width}x{height}")]
    InvalidDimensions { width: usize, height: usize },
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
}

/// An RGB raster with 8-bit channels, row-major and channel-interleaved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 || data.len() != width * height * 3 {
            return Err(ImageError::InvalidDimensions { width, height });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Builds an image by evaluating `f(x, y)` for every pixel.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn pixels(&self) -> impl Iterator<Item = [u8; 3]> + '_ {
        self.data.chunks_exact(3).map(|p| [p[0], p[1], p[2]])
    }
}

/// Single-channel image with luma values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayImage {
    /// Values are clamped into `[0, 1]`; non-finite values are rejected.
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(ImageError::InvalidDimensions { width, height });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(ImageError::CorruptData("non-finite luma value".into()));
        }
        let data = data.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y).clamp(0.0, 1.0));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn transpose(&self) -> GrayImage {
        GrayImage::from_fn(self.height, self.width, |x, y| self.get(y, x))
    }
}

/// Reads a PNG or binary PPM file. The format is sniffed from the leading bytes.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image, ImageError> {
    let path = path.as_ref();
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == io::ErrorKind::NotFound => {
            return Err(ImageError::FileNotFound(path.display().to_string()))
        }
        Err(e) => return Err(e.into()),
    };
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase());
    if bytes.len() >= 4 && bytes[..4] == PNG_MAGIC[..4] {
        decode_png(&bytes)
    } else if bytes.starts_with(b"P6") {
        decode_ppm(&bytes)
    } else if matches!(ext.as_deref(), Some("png") | Some("ppm")) {
        Err(ImageError::CorruptData(format!(
            "{}: missing {} signature",
            path.display(),
            ext.unwrap_or_default()
        )))
    } else {
        Err(ImageError::UnsupportedFormat(path.display().to_string()))
    }
}

pub fn decode_png(bytes: &[u8]) -> Result<Image, ImageError> {
    let corrupt = |e: png::DecodingError| ImageError::CorruptData(e.to_string());
    let mut decoder = png::Decoder::new(io::Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(corrupt)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| ImageError::CorruptData("image too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(corrupt)?;
    let (w, h) = (info.width as usize, info.height as usize);
    let buf = &buf[..info.buffer_size()];
    let data: Vec<u8> = match info.color_type {
        png::ColorType::Rgb => buf.to_vec(),
        png::ColorType::Rgba => buf
            .chunks_exact(4)
            .flat_map(|p| [p[0], p[1], p[2]])
            .collect(),
        png::ColorType::Grayscale => buf.iter().flat_map(|&v| [v, v, v]).collect(),
        png::ColorType::GrayscaleAlpha => buf
            .chunks_exact(2)
            .flat_map(|p| [p[0], p[0], p[0]])
            .collect(),
        png::ColorType::Indexed => {
            return Err(ImageError::UnsupportedFormat("unexpanded palette PNG".into()))
        }
    };
    Image::new(w, h, data)
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Image, ImageError> {
    let corrupt = |m: &str| ImageError::CorruptData(format!("PPM: {m}"));
    if !bytes.starts_with(b"P6") {
        return Err(corrupt("missing P6 magic"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(corrupt("truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(corrupt("expected integer in header"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| corrupt("header integer out of range"))?;
    }
    let [w, h, maxval] = fields;
    if maxval != 255 {
        return Err(ImageError::UnsupportedFormat(format!(
            "PPM maxval {maxval} (only 255 supported)"
        )));
    }
    // exactly one whitespace byte separates header and raster
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(corrupt("truncated header"));
    }
    pos += 1;
    let n = w
        .checked_mul(h)
        .and_then(|v| v.checked_mul(3))
        .ok_or_else(|| corrupt("dimensions overflow"))?;
    let raster = bytes
        .get(pos..pos + n)
        .ok_or_else(|| corrupt("truncated raster"))?;
    Image::new(w, h, raster.to_vec())
}

pub fn encode_ppm(img: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

pub fn encode_png_rgb(img: &Image) -> Result<Vec<u8>, ImageError> {
    encode_png(img.width, img.height, png::ColorType::Rgb, &img.data)
}

/// Encodes an 8-bit single-channel raster.
pub fn encode_png_gray(width: usize, height: usize, data: &[u8]) -> Result<Vec<u8>, ImageError> {
    if data.len() != width * height {
        return Err(ImageError::InvalidDimensions { width, height });
    }
    encode_png(width, height, png::ColorType::Grayscale, data)
}

fn encode_png(
    width: usize,
    height: usize,
    color: png::ColorType,
    data: &[u8],
) -> Result<Vec<u8>, ImageError> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc
            .write_header()
            .map_err(|e| ImageError::Io(io::Error::other(e)))?;
        writer
            .write_image_data(data)
            .map_err(|e| ImageError::Io(io::Error::other(e)))?;
    }
    Ok(out)
}

/// Writes an image as PNG or PPM depending on the file extension.
pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<(), ImageError> {
    let path = path.as_ref();
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase());
    let bytes = match ext.as_deref() {
        Some("png") => encode_png_rgb(img)?,
        Some("ppm") => encode_ppm(img),
        _ => return Err(ImageError::UnsupportedFormat(path.display().to_string())),
    };
    fs::write(path, bytes)?;
    Ok(())
}

/// BT.601 luma, scaled to `[0, 1]`.
pub fn to_grayscale(img: &Image) -> GrayImage {
    let data = img
        .pixels()
        .map(|[r, g, b]| {
            let y = (0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64) / 255.0;
            y.clamp(0.0, 1.0)
        })
        .collect();
    GrayImage {
        width: img.width,
        height: img.height,
        data,
    }
}

/// Bilinear resampling with half-pixel centre alignment.
///
/// Output channels are rounded half away from zero. Both output sides must be
/// at least [`MIN_SIDE`].
pub fn resize(img: &Image, out_w: usize, out_h: usize) -> Result<Image, ImageError> {
    if out_w < MIN_SIDE || out_h < MIN_SIDE {
        return Err(ImageError::InvalidDimensions {
            width: out_w,
            height: out_h,
        });
    }
    Ok(resize_bilinear(img, out_w, out_h))
}

/// Same kernel as [`resize`] without the minimum-size check.
pub fn resize_bilinear(img: &Image, out_w: usize, out_h: usize) -> Image {
    if out_w == img.width && out_h == img.height {
        return img.clone();
    }
    let xs = axis_taps(img.width, out_w);
    let ys = axis_taps(img.height, out_h);
    let mut data = Vec::with_capacity(out_w * out_h * 3);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            for c in 0..3 {
                let at = |x: usize, y: usize| img.data[(y * img.width + x) * 3 + c] as f64;
                let top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
                let bottom = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
                let v = top * (1.0 - fy) + bottom * fy;
                data.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    Image {
        width: out_w,
        height: out_h,
        data,
    }
}

/// Source taps `(lo, hi, frac)` for every output coordinate along one axis.
fn axis_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let lo = s.floor() as usize;
            let hi = (lo + 1).min(src - 1);
            (lo, hi, s - lo as f64)
        })
        .collect()
}

/// Resizes to the canonical analysis grid and converts to luma.
pub fn canonical_gray(img: &Image) -> GrayImage {
    to_grayscale(&resize_bilinear(img, CANONICAL_SIDE, CANONICAL_SIDE))
}
