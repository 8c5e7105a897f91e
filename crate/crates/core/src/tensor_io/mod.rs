//! Loading embeddings, labels and dataset manifests.

mod manifest;
pub mod npy;

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use ndarray_npy::WriteNpyExt;

use crate::error::{Error, Result};

pub use manifest::{DatasetManifest, Layer, ManifestLayerSpec, ManifestSpec, MixupSection};
pub use npy::RawArray;

/// Tolerance on label row sums.
pub const ROW_SUM_TOL: f64 = 1e-9;

/// Latent representations of `N` samples at one layer, one sample per row.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix(Array2<f64>);

impl EmbeddingMatrix {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::Empty(format!(
                "embedding matrix has shape {}x{}",
                data.nrows(),
                data.ncols()
            )));
        }
        check_finite(data.view())?;
        Ok(EmbeddingMatrix(data))
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.0.row(i)
    }

    /// Rows `indices` in the given order.
    pub fn select(&self, indices: &[usize]) -> EmbeddingMatrix {
        EmbeddingMatrix(self.0.select(ndarray::Axis(0), indices))
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }
}

/// Row-stochastic `N x C` label signal; one-hot for hard labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMatrix(Array2<f64>);

impl LabelMatrix {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::InvalidLabels(format!(
                "label matrix has shape {}x{}",
                data.nrows(),
                data.ncols()
            )));
        }
        check_finite(data.view())?;
        for (i, row) in data.rows().into_iter().enumerate() {
            if let Some(v) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::InvalidLabels(format!(
                    "row {i} has entry {v} outside [0, 1]"
                )));
            }
            let sum: f64 = row.sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::InvalidLabels(format!("row {i} sums to {sum}")));
            }
        }
        Ok(LabelMatrix(data))
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.0.ncols()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.0.row(i)
    }

    pub fn select(&self, indices: &[usize]) -> LabelMatrix {
        LabelMatrix(self.0.select(ndarray::Axis(0), indices))
    }

    /// Class with the largest weight in each row (first one on ties).
    pub fn argmax(&self) -> Vec<usize> {
        self.0
            .rows()
            .into_iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (c, &v)| {
                        if v > best.1 {
                            (c, v)
                        } else {
                            best
                        }
                    })
                    .0
            })
            .collect()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }
}

/// Labels as found on disk: integer classes or a soft matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum Labels {
    Hard(Vec<usize>),
    Soft(LabelMatrix),
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::Hard(v) => v.len(),
            Labels::Soft(m) => m.rows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Integer class per sample (argmax for soft labels).
    pub fn classes(&self) -> Vec<usize> {
        match self {
            Labels::Hard(v) => v.clone(),
            Labels::Soft(m) => m.argmax(),
        }
    }

    pub fn to_matrix(&self, num_classes: usize) -> Result<LabelMatrix> {
        match self {
            Labels::Hard(v) => {
                let as_i64: Vec<i64> = v.iter().map(|&c| c as i64).collect();
                one_hot(&as_i64, num_classes)
            }
            Labels::Soft(m) if m.num_classes() == num_classes => Ok(m.clone()),
            Labels::Soft(m) => Err(Error::Dimension(format!(
                "soft labels have {} classes, expected {num_classes}",
                m.num_classes()
            ))),
        }
    }
}

fn check_finite(data: ArrayView2<'_, f64>) -> Result<()> {
    for ((row, col), v) in data.indexed_iter() {
        if !v.is_finite() {
            return Err(Error::NonFinite { row, col });
        }
    }
    Ok(())
}

/// One-hot encodes integer labels into an `N x C` matrix.
pub fn one_hot(labels: &[i64], num_classes: usize) -> Result<LabelMatrix> {
    if labels.is_empty() {
        return Err(Error::Empty("label vector".into()));
    }
    let mut out = Array2::zeros((labels.len(), num_classes));
    for (index, &value) in labels.iter().enumerate() {
        if value < 0 || value as usize >= num_classes {
            return Err(Error::LabelOutOfRange {
                index,
                value,
                num_classes,
            });
        }
        out[[index, value as usize]] = 1.0;
    }
    Ok(LabelMatrix(out))
}

/// Reads a `.npy` file or a headerless CSV as a raw array.
///
/// The format is detected from the magic bytes, not the extension.
pub fn read_raw(path: &Path) -> Result<RawArray> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(npy::MAGIC) {
        npy::read_npy_bytes(&bytes)
    } else {
        parse_csv(&bytes)
    }
}

fn parse_csv(bytes: &[u8]) -> Result<RawArray> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let mut values = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| Error::CsvParse {
            line: e.position().map_or(0, |p| p.line() as usize),
            token: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.iter().all(str::is_empty) {
            continue;
        }
        let expected = *cols.get_or_insert(record.len());
        if record.len() != expected {
            return Err(Error::RaggedCsv {
                line,
                expected,
                found: record.len(),
            });
        }
        for token in &record {
            let v: f64 = token.parse().map_err(|_| Error::CsvParse {
                line,
                token: token.to_string(),
            })?;
            values.push(v);
        }
        rows += 1;
    }
    let cols = cols.ok_or_else(|| Error::Empty("csv file has no rows".into()))?;
    Ok(RawArray {
        shape: vec![rows, cols],
        data: values,
    })
}

fn to_matrix(raw: RawArray) -> Result<Array2<f64>> {
    let (rows, cols) = match raw.shape.as_slice() {
        [n] => (*n, 1),
        [n, d] => (*n, *d),
        other => return Err(Error::UnsupportedRank(other.len())),
    };
    Array2::from_shape_vec((rows, cols), raw.data).map_err(|e| Error::NpyHeader(e.to_string()))
}

/// Reads an embedding matrix from `.npy` or CSV, widened to `f64`.
/// A 1-D array of length `N` becomes `N x 1`.
pub fn read_array_file(path: &Path) -> Result<EmbeddingMatrix> {
    EmbeddingMatrix::new(to_matrix(read_raw(path)?)?)
}

/// Reads labels: a vector (or `N x 1` column) of integer classes, or an
/// `N x C` soft-label matrix when the second dimension equals `num_classes`.
pub fn read_labels(path: &Path, num_classes: usize) -> Result<Labels> {
    let matrix = to_matrix(read_raw(path)?)?;
    if matrix.nrows() == 0 {
        return Err(Error::Empty(format!("labels in {}", path.display())));
    }
    if matrix.ncols() == 1 {
        let mut classes = Vec::with_capacity(matrix.nrows());
        for (index, &v) in matrix.column(0).iter().enumerate() {
            if !v.is_finite() || v.fract() != 0.0 {
                return Err(Error::InvalidLabels(format!(
                    "label at index {index} is not an integer: {v}"
                )));
            }
            let value = v as i64;
            if value < 0 || value as usize >= num_classes {
                return Err(Error::LabelOutOfRange {
                    index,
                    value,
                    num_classes,
                });
            }
            classes.push(value as usize);
        }
        Ok(Labels::Hard(classes))
    } else if matrix.ncols() == num_classes {
        Ok(Labels::Soft(LabelMatrix::new(matrix)?))
    } else {
        Err(Error::InvalidLabels(format!(
            "labels in {} have {} columns; expected 1 (hard) or {num_classes} (soft)",
            path.display(),
            matrix.ncols()
        )))
    }
}

fn write_array<A: WriteNpyExt>(path: &Path, array: &A) -> Result<()> {
    let mut out = Vec::new();
    array
        .write_npy(&mut out)
        .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Writes an `f64` matrix as a 2-D `<f8` array.
pub fn write_matrix_f64(path: &Path, m: ArrayView2<'_, f64>) -> Result<()> {
    write_array(path, &m)
}

/// Writes an `f64` matrix as a 2-D `<f4` array.
pub fn write_matrix_f32(path: &Path, m: ArrayView2<'_, f64>) -> Result<()> {
    write_array(path, &m.mapv(|v| v as f32))
}

/// Writes integer class labels as a 1-D `<i8` array.
pub fn write_labels(path: &Path, classes: &[usize]) -> Result<()> {
    let v: Array1<i64> = classes.iter().map(|&c| c as i64).collect();
    write_array(path, &v)
}
