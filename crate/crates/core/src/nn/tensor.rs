use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::RasterGrid;

/// Dense `batch × height × width × channels` array, channels fastest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor4 {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub data: Vec<f64>,
}

impl Tensor4 {
    pub fn zeros(n: usize, h: usize, w: usize, c: usize) -> Self {
        Self {
            n,
            h,
            w,
            c,
            data: vec![0.0; n * h * w * c],
        }
    }

    pub fn from_vec(n: usize, h: usize, w: usize, c: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 || h == 0 || w == 0 || c == 0 {
            return Err(Error::shape(format!("tensor dims must be positive: {n}x{h}x{w}x{c}")));
        }
        if data.len() != n * h * w * c {
            return Err(Error::shape(format!(
                "tensor {n}x{h}x{w}x{c} needs {} values, got {}",
                n * h * w * c,
                data.len()
            )));
        }
        Ok(Self { n, h, w, c, data })
    }

    /// Stacks equally shaped rasters into a batch. NaN becomes 0.
    pub fn from_grids(grids: &[&RasterGrid]) -> Result<Self> {
        let first = grids
            .first()
            .ok_or_else(|| Error::shape("cannot build a batch from zero images"))?;
        let (h, w, c) = (first.rows(), first.cols(), first.channels());
        let mut data = Vec::with_capacity(grids.len() * h * w * c);
        for g in grids {
            if (g.rows(), g.cols(), g.channels()) != (h, w, c) {
                return Err(Error::shape("batch images differ in shape"));
            }
            data.extend(g.values().iter().map(|&v| if v.is_nan() { 0.0 } else { v as f64 }));
        }
        Self::from_vec(grids.len(), h, w, c, data)
    }

    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.n, self.h, self.w, self.c)
    }

    pub fn item_len(&self) -> usize {
        self.h * self.w * self.c
    }

    pub fn item(&self, b: usize) -> &[f64] {
        let len = self.item_len();
        &self.data[b * len..(b + 1) * len]
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.n, self.h, self.w, self.c)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..*self
        }
    }

    pub fn add_assign(&mut self, other: &Tensor4) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Builds a batch by concatenating per-item buffers of equal length.
    pub(crate) fn from_items(h: usize, w: usize, c: usize, items: Vec<Vec<f64>>) -> Self {
        let n = items.len();
        let mut data = Vec::with_capacity(n * h * w * c);
        for it in items {
            debug_assert_eq!(it.len(), h * w * c);
            data.extend_from_slice(&it);
        }
        Self { n, h, w, c, data }
    }
}

impl std::ops::Index<(usize, usize, usize, usize)> for Tensor4 {
    type Output = f64;

    fn index(&self, (b, y, x, c): (usize, usize, usize, usize)) -> &f64 {
        &self.data[((b * self.h + y) * self.w + x) * self.c + c]
    }
}

impl std::ops::IndexMut<(usize, usize, usize, usize)> for Tensor4 {
    fn index_mut(&mut self, (b, y, x, c): (usize, usize, usize, usize)) -> &mut f64 {
        &mut self.data[((b * self.h + y) * self.w + x) * self.c + c]
    }
}
