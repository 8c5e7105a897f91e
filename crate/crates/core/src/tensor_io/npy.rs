//! `.npy` reading on top of `ndarray-npy`, accepting any of the dtypes the
//! exporter may produce and widening them to `f64`.

use std::io::Cursor;

use ndarray::ArrayD;
use ndarray_npy::{ReadNpyError, ReadNpyExt, ReadableElement};

use crate::error::{Error, Result};

pub const MAGIC: &[u8] = b"\x93NUMPY";

/// A numeric array of rank 1 or 2 as stored on disk, widened to `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawArray {
    pub shape: Vec<usize>,
    /// Row-major values.
    pub data: Vec<f64>,
}

type Reader = fn(&[u8]) -> Result<Attempt>;

enum Attempt {
    Done(RawArray),
    WrongType(String),
}

fn attempt<T>(bytes: &[u8], widen: fn(T) -> f64) -> Result<Attempt>
where
    T: ReadableElement + Copy,
{
    match ArrayD::<T>::read_npy(Cursor::new(bytes)) {
        Ok(a) => Ok(Attempt::Done(RawArray {
            shape: a.shape().to_vec(),
            // Logical order, so Fortran-order files come out row-major.
            data: a.iter().map(|&v| widen(v)).collect(),
        })),
        Err(ReadNpyError::WrongDescriptor(d)) => Ok(Attempt::WrongType(d.to_string())),
        Err(e) => Err(Error::NpyHeader(e.to_string())),
    }
}

/// Parses a whole `.npy` file held in memory. Accepts `f8`, `f4`, `i8` and
/// `i4` in either byte order.
pub fn read_npy_bytes(bytes: &[u8]) -> Result<RawArray> {
    let tries: [Reader; 4] = [
        |b| attempt::<f64>(b, |v| v),
        |b| attempt::<f32>(b, f64::from),
        |b| attempt::<i64>(b, |v| v as f64),
        |b| attempt::<i32>(b, f64::from),
    ];
    let mut descr = String::new();
    for t in tries {
        match t(bytes)? {
            Attempt::Done(raw) => {
                if raw.shape.is_empty() || raw.shape.len() > 2 {
                    return Err(Error::UnsupportedRank(raw.shape.len()));
                }
                return Ok(raw);
            }
            Attempt::WrongType(d) => descr = d,
        }
    }
    Err(Error::UnsupportedDtype(descr))
}
