//! Feature vectors with a named channel layout, channel fusion and z-score
//! standardization.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("duplicate channel `{0}`")]
    DuplicateChannel(String),
    #[error("channel `{0}` must have at least one dimension")]
    EmptyChannel(String),
    #[error("schema mismatch: expected {expected}, found {found}")]
    SchemaMismatch { expected: String, found: String },
    #[error("need at least 2 samples to fit a standardizer, got {0}")]
    TooFewSamples(usize),
    #[error("non-finite value in channel `{channel}` at index {index}")]
    NonFinite { channel: String, index: usize },
    #[error("length {values} does not match schema dimension {dims}")]
    LengthMismatch { values: usize, dims: usize },
}

/// Ordered `(channel name, dimension)` layout of a feature vector.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureSchema {
    channels: Vec<(String, usize)>,
}

impl FeatureSchema {
    pub fn new(channels: Vec<(String, usize)>) -> Result<Self, FeatureError> {
        for (i, (name, dim)) in channels.iter().enumerate() {
            if *dim == 0 {
                return Err(FeatureError::EmptyChannel(name.clone()));
            }
            if channels[..i].iter().any(|(n, _)| n == name) {
                return Err(FeatureError::DuplicateChannel(name.clone()));
            }
        }
        Ok(Self { channels })
    }

    pub fn single(name: &str, dim: usize) -> Result<Self, FeatureError> {
        Self::new(vec![(name.to_string(), dim)])
    }

    pub fn channels(&self) -> &[(String, usize)] {
        &self.channels
    }

    pub fn total_dim(&self) -> usize {
        self.channels.iter().map(|(_, d)| d).sum()
    }

    /// Range of the flat vector occupied by `name`.
    pub fn channel_range(&self, name: &str) -> Option<std::ops::Range<usize>> {
        let mut start = 0;
        for (n, d) in &self.channels {
            if n == name {
                return Some(start..start + d);
            }
            start += d;
        }
        None
    }

    /// Column names in `channel.idx` form.
    pub fn column_names(&self) -> Vec<String> {
        self.channels
            .iter()
            .flat_map(|(n, d)| (0..*d).map(move |i| format!("{n}.{i}")))
            .collect()
    }

    /// Rebuilds a schema from `channel.idx` column names. Indices of a
    /// channel must be contiguous and start at zero.
    pub fn from_column_names<S: AsRef<str>>(cols: &[S]) -> Result<Self, String> {
        let mut channels: Vec<(String, usize)> = Vec::new();
        for col in cols {
            let col = col.as_ref();
            let (name, idx) = col
                .rsplit_once('.')
                .ok_or_else(|| format!("column `{col}` is not of the form channel.idx"))?;
            let idx: usize = idx
                .parse()
                .map_err(|_| format!("column `{col}` has a non-numeric index"))?;
            match channels.last_mut() {
                Some((last, d)) if last == name => {
                    if idx != *d {
                        return Err(format!("column `{col}` is out of order"));
                    }
                    *d += 1;
                }
                _ => {
                    if idx != 0 {
                        return Err(format!("column `{col}` does not start at index 0"));
                    }
                    channels.push((name.to_string(), 1));
                }
            }
        }
        Self::new(channels).map_err(|e| e.to_string())
    }

    fn describe(&self) -> String {
        let parts: Vec<String> = self
            .channels
            .iter()
            .map(|(n, d)| format!("{n}:{d}"))
            .collect();
        format!("[{}]", parts.join(","))
    }

    fn ensure_eq(&self, other: &FeatureSchema) -> Result<(), FeatureError> {
        if self == other {
            Ok(())
        } else {
            Err(FeatureError::SchemaMismatch {
                expected: self.describe(),
                found: other.describe(),
            })
        }
    }
}

/// A fixed-length finite real vector tagged with its channel layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    schema: FeatureSchema,
    values: Vec<f64>,
}

impl FeatureVector {
    pub fn new(schema: FeatureSchema, values: Vec<f64>) -> Result<Self, FeatureError> {
        if values.len() != schema.total_dim() {
            return Err(FeatureError::LengthMismatch {
                values: values.len(),
                dims: schema.total_dim(),
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            let channel = schema
                .channels
                .iter()
                .scan(0, |start, (n, d)| {
                    let r = (*start, *start + d, n.clone());
                    *start += d;
                    Some(r)
                })
                .find(|(s, e, _)| (*s..*e).contains(&index))
                .map(|(_, _, n)| n)
                .unwrap_or_default();
            return Err(FeatureError::NonFinite { channel, index });
        }
        Ok(Self { schema, values })
    }

    /// A vector holding one channel.
    pub fn single(channel: &str, values: Vec<f64>) -> Result<Self, FeatureError> {
        Self::new(FeatureSchema::single(channel, values.len())?, values)
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn channel(&self, name: &str) -> Option<&[f64]> {
        self.schema.channel_range(name).map(|r| &self.values[r])
    }

    /// Appends already-tagged vectors in order, merging their schemas.
    pub fn concat(parts: &[FeatureVector]) -> Result<FeatureVector, FeatureError> {
        let mut channels = Vec::new();
        let mut values = Vec::new();
        for p in parts {
            channels.extend(p.schema.channels.iter().cloned());
            values.extend_from_slice(&p.values);
        }
        Self::new(FeatureSchema::new(channels)?, values)
    }
}

/// Fuses named raw channels into one vector, in the given order.
pub fn concat(channels: &[(&str, &[f64])]) -> Result<FeatureVector, FeatureError> {
    let schema = FeatureSchema::new(
        channels
            .iter()
            .map(|(n, v)| (n.to_string(), v.len()))
            .collect(),
    )?;
    let values = channels.iter().flat_map(|(_, v)| v.iter().copied()).collect();
    FeatureVector::new(schema, values)
}

/// Columns whose standard deviation falls below this are only centred.
pub const ZERO_STD_GUARD: f64 = 1e-12;

/// Per-dimension mean and scale fitted on a training matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationParams {
    pub schema: FeatureSchema,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

/// Fits mean and population standard deviation per column.
///
/// Sums run sequentially in row order so the result does not depend on
/// thread scheduling.
pub fn fit_standardizer(rows: &[FeatureVector]) -> Result<StandardizationParams, FeatureError> {
    if rows.len() < 2 {
        return Err(FeatureError::TooFewSamples(rows.len()));
    }
    let schema = rows[0].schema.clone();
    for r in &rows[1..] {
        schema.ensure_eq(&r.schema)?;
    }
    let (mean, scale) = column_moments(rows.iter().map(|r| r.values.as_slice()), schema.total_dim());
    Ok(StandardizationParams {
        schema,
        mean,
        scale,
    })
}

/// Column means and guarded population standard deviations.
pub(crate) fn column_moments<'a>(
    rows: impl Iterator<Item = &'a [f64]> + Clone,
    dim: usize,
) -> (Vec<f64>, Vec<f64>) {
    let mut mean = vec![0.0; dim];
    let mut n = 0usize;
    for r in rows.clone() {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
        n += 1;
    }
    let inv = 1.0 / n as f64;
    mean.iter_mut().for_each(|m| *m *= inv);
    let mut var = vec![0.0; dim];
    for r in rows {
        for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
            let d = v - m;
            *s += d * d;
        }
    }
    let scale = var
        .into_iter()
        .map(|s| {
            let sd = (s * inv).sqrt();
            if sd < ZERO_STD_GUARD {
                1.0
            } else {
                sd
            }
        })
        .collect();
    (mean, scale)
}

impl StandardizationParams {
    /// `(value - mean) / scale` per dimension.
    pub fn apply(&self, v: &FeatureVector) -> Result<FeatureVector, FeatureError> {
        self.schema.ensure_eq(&v.schema)?;
        Ok(FeatureVector {
            schema: v.schema.clone(),
            values: self.apply_slice(&v.values),
        })
    }

    pub fn apply_slice(&self, v: &[f64]) -> Vec<f64> {
        v.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((x, m), s)| (x - m) / s)
            .collect()
    }
}

pub fn apply_standardizer(
    params: &StandardizationParams,
    v: &FeatureVector,
) -> Result<FeatureVector, FeatureError> {
    params.apply(v)
}

/// A labelled feature table as stored on disk: one row per image.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub schema: FeatureSchema,
    pub labels: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl FeatureTable {
    pub fn new(schema: FeatureSchema) -> Self {
        Self {
            schema,
            labels: Vec::new(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, label: &str, v: &FeatureVector) -> Result<(), FeatureError> {
        self.schema.ensure_eq(v.schema())?;
        self.labels.push(label.to_string());
        self.rows.push(v.values.clone());
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn vector(&self, i: usize) -> FeatureVector {
        FeatureVector {
            schema: self.schema.clone(),
            values: self.rows[i].clone(),
        }
    }

    /// Header `label,<channel>.<idx>...`, then one row per sample. Floats use
    /// the shortest representation that round-trips exactly.
    pub fn write_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["label".to_string()];
        header.extend(self.schema.column_names());
        wr.write_record(&header)?;
        let mut buf: Vec<String> = Vec::new();
        for (label, row) in self.labels.iter().zip(&self.rows) {
            buf.clear();
            buf.push(label.clone());
            buf.extend(row.iter().map(|v| format!("{v:?}")));
            wr.write_record(&buf)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self, String> {
        let mut rd = csv::Reader::from_reader(r);
        let header = rd.headers().map_err(|e| e.to_string())?.clone();
        if header.get(0) != Some("label") {
            return Err("first column must be `label`".into());
        }
        let cols: Vec<&str> = header.iter().skip(1).collect();
        let schema = FeatureSchema::from_column_names(&cols)?;
        let mut table = FeatureTable::new(schema);
        for (line, rec) in rd.records().enumerate() {
            let rec = rec.map_err(|e| e.to_string())?;
            if rec.len() != cols.len() + 1 {
                return Err(format!("row {} has {} fields", line + 1, rec.len()));
            }
            let values = rec
                .iter()
                .skip(1)
                .map(|s| s.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| format!("row {}: {e}", line + 1))?;
            if values.iter().any(|v| !v.is_finite()) {
                return Err(format!("row {}: non-finite value", line + 1));
            }
            table.labels.push(rec[0].to_string());
            table.rows.push(values);
        }
        Ok(table)
    }
}
