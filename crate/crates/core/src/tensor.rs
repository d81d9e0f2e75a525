//! Dense NCHW tensors and per-pixel label masks.
//!
//! Everything downstream (layers, gradients, images) is built from
//! [`Tensor4`]: a rank-4 array in `(batch, channel, height, width)` order,
//! stored row-major in one contiguous `Vec<f64>`. Arithmetic is f64
//! throughout so gradient checks against central finite differences are
//! limited by truncation error, not rounding noise.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A rank-4 tensor in `(n, c, h, w)` layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor4 {
    shape: [usize; 4],
    data: Vec<f64>,
}

impl Tensor4 {
    /// An all-zero tensor of the given shape.
    pub fn zeros(shape: [usize; 4]) -> Self {
        let len = shape.iter().product();
        Tensor4 { shape, data: vec![0.0; len] }
    }

    /// Wraps an existing buffer; `data.len()` must equal the shape volume.
    pub fn from_vec(shape: [usize; 4], data: Vec<f64>) -> Result<Self> {
        let want: usize = shape.iter().product();
        if data.len() != want {
            return Err(Error::ShapeMismatch(format!(
                "buffer of {} elements cannot fill shape {:?} ({} elements)",
                data.len(),
                shape,
                want
            )));
        }
        Ok(Tensor4 { shape, data })
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    /// Total number of elements.
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Flat index of `(n, c, h, w)`.
    #[inline(always)]
    pub fn idx(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.shape[1] + c) * self.shape[2] + h) * self.shape[3] + w
    }

    #[inline(always)]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> f64 {
        self.data[self.idx(n, c, h, w)]
    }

    #[inline(always)]
    pub fn at_mut(&mut self, n: usize, c: usize, h: usize, w: usize) -> &mut f64 {
        let i = self.idx(n, c, h, w);
        &mut self.data[i]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// True when every element is a finite number.
    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Concatenates tensors along the batch axis. All inputs must share
    /// their `(c, h, w)` dimensions.
    pub fn stack_batch(parts: &[&Tensor4]) -> Result<Tensor4> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("cannot stack an empty list".into()))?;
        let [_, c, h, w] = first.shape;
        let mut total_n = 0;
        for p in parts {
            if p.shape[1] != c || p.shape[2] != h || p.shape[3] != w {
                return Err(Error::ShapeMismatch(format!(
                    "cannot stack {:?} with {:?}",
                    p.shape, first.shape
                )));
            }
            total_n += p.shape[0];
        }
        let mut data = Vec::with_capacity(total_n * c * h * w);
        for p in parts {
            data.extend_from_slice(&p.data);
        }
        Tensor4::from_vec([total_n, c, h, w], data)
    }
}

/// Per-pixel class indices in `(n, h, w)` layout.
///
/// Class indices are stored as `u8`; models here have a handful of classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMask {
    shape: [usize; 3],
    data: Vec<u8>,
}

impl LabelMask {
    /// An all-zero (all background) mask.
    pub fn zeros(shape: [usize; 3]) -> Self {
        let len = shape.iter().product();
        LabelMask { shape, data: vec![0; len] }
    }

    pub fn from_vec(shape: [usize; 3], data: Vec<u8>) -> Result<Self> {
        let want: usize = shape.iter().product();
        if data.len() != want {
            return Err(Error::ShapeMismatch(format!(
                "buffer of {} labels cannot fill shape {:?} ({} pixels)",
                data.len(),
                shape,
                want
            )));
        }
        Ok(LabelMask { shape, data })
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline(always)]
    pub fn idx(&self, n: usize, h: usize, w: usize) -> usize {
        (n * self.shape[1] + h) * self.shape[2] + w
    }

    #[inline(always)]
    pub fn at(&self, n: usize, h: usize, w: usize) -> u8 {
        self.data[self.idx(n, h, w)]
    }

    #[inline(always)]
    pub fn at_mut(&mut self, n: usize, h: usize, w: usize) -> &mut u8 {
        let i = self.idx(n, h, w);
        &mut self.data[i]
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    /// Highest class index present, or 0 for an empty mask.
    pub fn max_class(&self) -> u8 {
        self.data.iter().copied().max().unwrap_or(0)
    }

    /// Fraction of pixels labeled with `class`.
    pub fn class_fraction(&self, class: u8) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        let hits = self.data.iter().filter(|&&v| v == class).count();
        hits as f64 / self.data.len() as f64
    }

    /// Concatenates masks along the batch axis.
    pub fn stack_batch(parts: &[&LabelMask]) -> Result<LabelMask> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("cannot stack an empty list".into()))?;
        let [_, h, w] = first.shape;
        let mut total_n = 0;
        for p in parts {
            if p.shape[1] != h || p.shape[2] != w {
                return Err(Error::ShapeMismatch(format!(
                    "cannot stack {:?} with {:?}",
                    p.shape, first.shape
                )));
            }
            total_n += p.shape[0];
        }
        let mut data = Vec::with_capacity(total_n * h * w);
        for p in parts {
            data.extend_from_slice(&p.data);
        }
        LabelMask::from_vec([total_n, h, w], data)
    }
}
