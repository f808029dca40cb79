use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Dense row-major matrix of `f64`.
///
/// Vectors are `1 × c` rows and scalars are `1 × 1`. The backing array is always
/// in standard (C) layout so [`Tensor::values`] is a plain slice.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor(Array2<f64>);

impl Tensor {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || values.len() != rows * cols {
            return Err(Error::Dimension {
                op: "tensor",
                left: (rows, cols),
                right: (values.len(), 1),
            });
        }
        let array = Array2::from_shape_vec((rows, cols), values).expect("shape checked");
        Ok(Tensor(array))
    }

    pub fn from_array(array: Array2<f64>) -> Self {
        if array.is_standard_layout() {
            Tensor(array)
        } else {
            Tensor(array.as_standard_layout().into_owned())
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension {
                op: "from_rows",
                left: (rows.len(), cols),
                right: (rows.len(), 0),
            });
        }
        Tensor::new(rows.len(), cols, rows.concat())
    }

    pub fn scalar(value: f64) -> Self {
        Tensor(Array2::from_elem((1, 1), value))
    }

    pub fn row_vector(values: &[f64]) -> Self {
        Tensor(Array2::from_shape_vec((1, values.len()), values.to_vec()).expect("row"))
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor(Array2::zeros((rows, cols)))
    }

    pub fn ones(rows: usize, cols: usize) -> Self {
        Tensor::full(rows, cols, 1.0)
    }

    pub fn full(rows: usize, cols: usize, value: f64) -> Self {
        Tensor(Array2::from_elem((rows, cols), value))
    }

    pub fn eye(n: usize) -> Self {
        Tensor(Array2::eye(n))
    }

    /// Glorot-uniform initialization: `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
    pub fn glorot<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        Tensor(Array2::from_shape_simple_fn((rows, cols), || {
            dist.sample(rng)
        }))
    }

    pub fn normal<R: Rng + ?Sized>(
        rows: usize,
        cols: usize,
        mean: f64,
        std: f64,
        rng: &mut R,
    ) -> Self {
        let dist = Normal::new(mean, std).expect("finite std");
        Tensor(Array2::from_shape_simple_fn((rows, cols), || {
            dist.sample(rng)
        }))
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.dim()
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn values(&self) -> &[f64] {
        self.0.as_slice().expect("standard layout")
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        self.0.as_slice_mut().expect("standard layout")
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.0[[row, col]]
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.0.row(i)
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn array(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_array(self) -> Array2<f64> {
        self.0
    }

    /// Value of a `1 × 1` tensor.
    pub fn item(&self) -> Result<f64> {
        if self.shape() != (1, 1) {
            return Err(Error::Dimension {
                op: "item",
                left: self.shape(),
                right: (1, 1),
            });
        }
        Ok(self.0[[0, 0]])
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn select_rows(&self, rows: &[usize]) -> Tensor {
        Tensor(self.0.select(Axis(0), rows))
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape(), other.shape(), "max_abs_diff shape");
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// SHA-256 over the shape and the exact bit patterns of the values.
    pub fn digest(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        self.feed(&mut hasher);
        hasher.finalize().into()
    }

    pub(crate) fn feed(&self, hasher: &mut Sha256) {
        let (r, c) = self.shape();
        hasher.update((r as u64).to_le_bytes());
        hasher.update((c as u64).to_le_bytes());
        for v in self.values() {
            hasher.update(v.to_bits().to_le_bytes());
        }
    }
}

pub(crate) fn ensure_finite(array: &Array2<f64>, op: &'static str) -> Result<()> {
    if array.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(op))
    }
}
