//! Flat parameter vectors with a named tensor layout.
//!
//! A [`ParamVector`] carries every parameter of a model in one contiguous
//! buffer together with a registry describing which slice belongs to which
//! named tensor. The registry order is deterministic for a given model
//! structure, so flatten → unflatten round-trips are exact and optimizer
//! state lines up across steps.

use std::fmt::Write as _;
use std::io::{BufRead, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Shape and location of one named tensor inside a [`ParamVector`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    /// Row-major dimensions; biases are 1-D.
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Flat parameter buffer plus its tensor registry.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Vec<TensorSpec>,
}

impl ParamVector {
    /// Builds a vector from `(name, shape, data)` tensors in registry order.
    pub fn from_tensors<'a>(
        tensors: impl IntoIterator<Item = (String, Vec<usize>, &'a [f64])>,
    ) -> Self {
        let mut values = Vec::new();
        let mut layout = Vec::new();
        for (name, shape, data) in tensors {
            debug_assert_eq!(shape.iter().product::<usize>(), data.len());
            layout.push(TensorSpec { name, shape, offset: values.len() });
            values.extend_from_slice(data);
        }
        Self { values, layout }
    }

    /// A zero vector with the same layout as `self`.
    pub fn zeros_like(&self) -> Self {
        Self { values: vec![0.0; self.values.len()], layout: self.layout.clone() }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn layout(&self) -> &[TensorSpec] {
        &self.layout
    }

    /// Slice for the tensor at registry position `idx`.
    pub fn tensor(&self, idx: usize) -> &[f64] {
        let spec = &self.layout[idx];
        &self.values[spec.offset..spec.offset + spec.len()]
    }

    /// Name of the tensor owning flat index `i`.
    pub fn tensor_name_at(&self, i: usize) -> &str {
        let pos = self
            .layout
            .partition_point(|s| s.offset <= i)
            .saturating_sub(1);
        &self.layout[pos].name
    }

    /// Errors with the offending tensor's name if any entry is non-finite.
    pub fn ensure_finite(&self, context: &str) -> Result<()> {
        for (i, v) in self.values.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite value in {context}, tensor {}",
                    self.tensor_name_at(i)
                )));
            }
        }
        Ok(())
    }

    /// Writes the layout as text (one `name shape...` line per tensor) and the
    /// values as a little-endian f64 blob.
    pub fn save(&self, meta_path: &Path, blob_path: &Path) -> Result<()> {
        let mut meta = String::new();
        writeln!(meta, "tensors {}", self.layout.len()).unwrap();
        writeln!(meta, "precision f64").unwrap();
        for spec in &self.layout {
            let dims: Vec<String> = spec.shape.iter().map(|d| d.to_string()).collect();
            writeln!(meta, "{} {}", spec.name, dims.join("x")).unwrap();
        }
        std::fs::write(meta_path, meta)?;

        let mut blob = std::io::BufWriter::new(std::fs::File::create(blob_path)?);
        for v in &self.values {
            blob.write_all(&v.to_le_bytes())?;
        }
        blob.flush()?;
        Ok(())
    }

    /// Inverse of [`save`](ParamVector::save).
    pub fn load(meta_path: &Path, blob_path: &Path) -> Result<Self> {
        let meta = std::fs::File::open(meta_path)?;
        let mut lines = std::io::BufReader::new(meta).lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("empty parameter metadata".into()))??;
        let count: usize = header
            .strip_prefix("tensors ")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format(format!("bad metadata header: {header}")))?;
        let precision = lines
            .next()
            .ok_or_else(|| Error::Format("missing precision line".into()))??;
        if precision != "precision f64" {
            return Err(Error::Format(format!("unsupported precision: {precision}")));
        }

        let mut layout = Vec::with_capacity(count);
        let mut offset = 0;
        for _ in 0..count {
            let line = lines
                .next()
                .ok_or_else(|| Error::Format("truncated parameter metadata".into()))??;
            let (name, dims) = line
                .rsplit_once(' ')
                .ok_or_else(|| Error::Format(format!("bad tensor line: {line}")))?;
            let shape: Vec<usize> = dims
                .split('x')
                .map(|d| {
                    d.parse()
                        .map_err(|_| Error::Format(format!("bad tensor shape: {line}")))
                })
                .collect::<Result<_>>()?;
            let spec = TensorSpec { name: name.to_string(), shape, offset };
            offset += spec.len();
            layout.push(spec);
        }

        let mut blob = Vec::new();
        std::fs::File::open(blob_path)?.read_to_end(&mut blob)?;
        if blob.len() != offset * 8 {
            return Err(Error::Format(format!(
                "parameter blob holds {} bytes, layout expects {}",
                blob.len(),
                offset * 8
            )));
        }
        let values = blob
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self { values, layout })
    }
}
