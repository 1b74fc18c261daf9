//! Complex matrices stored as a pair of real arrays.

use ndarray::{Array1, Array2};
use num_complex::Complex64;

use crate::error::{check_finite, Error, Result};
use crate::rng::GaussianStream;

/// A complex matrix kept as separate real and imaginary parts.
///
/// Row `i` of a beamforming matrix is the beamformer of user `i`; row `i` of a
/// channel matrix is the channel vector `h_i`. The split form `[re, im]`
/// (a `rows × 2·cols` real matrix) is what the meta-learners update.
#[derive(Debug, Clone, PartialEq)]
pub struct CMat {
    re: Array2<f64>,
    im: Array2<f64>,
}

impl CMat {
    pub fn new(re: Array2<f64>, im: Array2<f64>) -> Result<Self> {
        if re.dim() != im.dim() {
            return Err(Error::shape("CMat::new", format!("{:?}", re.dim()), format!("{:?}", im.dim())));
        }
        check_finite("CMat::new (re)", re.iter())?;
        check_finite("CMat::new (im)", im.iter())?;
        Ok(Self { re, im })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            re: Array2::zeros((rows, cols)),
            im: Array2::zeros((rows, cols)),
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut out = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                let z = f(i, j);
                out.re[[i, j]] = z.re;
                out.im[[i, j]] = z.im;
            }
        }
        out
    }

    /// Entries drawn i.i.d. from CN(0, 1).
    pub fn random_normal(rows: usize, cols: usize, rng: &mut GaussianStream) -> Self {
        Self::from_fn(rows, cols, |_, _| rng.complex_normal())
    }

    pub fn rows(&self) -> usize {
        self.re.nrows()
    }

    pub fn cols(&self) -> usize {
        self.re.ncols()
    }

    pub fn dim(&self) -> (usize, usize) {
        self.re.dim()
    }

    pub fn re(&self) -> &Array2<f64> {
        &self.re
    }

    pub fn im(&self) -> &Array2<f64> {
        &self.im
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        Complex64::new(self.re[[i, j]], self.im[[i, j]])
    }

    pub fn set(&mut self, i: usize, j: usize, z: Complex64) {
        self.re[[i, j]] = z.re;
        self.im[[i, j]] = z.im;
    }

    pub fn row(&self, i: usize) -> Vec<Complex64> {
        (0..self.cols()).map(|j| self.get(i, j)).collect()
    }

    pub fn set_row(&mut self, i: usize, values: &[Complex64]) {
        for (j, z) in values.iter().enumerate() {
            self.set(i, j, *z);
        }
    }

    /// `Tr(X Xᴴ)`, the squared Frobenius norm.
    pub fn power(&self) -> f64 {
        self.re.iter().chain(self.im.iter()).map(|x| x * x).sum()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            re: &self.re * factor,
            im: &self.im * factor,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.re.iter().chain(self.im.iter()).all(|x| x.is_finite())
    }

    /// The split matrix `[re, im]` of shape `rows × 2·cols`.
    pub fn to_split(&self) -> Array2<f64> {
        let (r, c) = self.dim();
        let mut out = Array2::zeros((r, 2 * c));
        for i in 0..r {
            for j in 0..c {
                out[[i, j]] = self.re[[i, j]];
                out[[i, c + j]] = self.im[[i, j]];
            }
        }
        out
    }

    pub fn from_split(split: &Array2<f64>) -> Result<Self> {
        let c2 = split.ncols();
        if c2 % 2 != 0 {
            return Err(Error::shape("CMat::from_split", "even column count", c2));
        }
        let (mask_re, mask_im) = split_masks(c2 / 2);
        Self::new(split.dot(&mask_re), split.dot(&mask_im))
    }

    /// Row-major flattening of the split matrix: the real coordinates a
    /// coordinatewise optimizer sees.
    pub fn to_coords(&self) -> Array1<f64> {
        let split = self.to_split();
        Array1::from_iter(split.iter().copied())
    }

    pub fn from_coords(rows: usize, cols: usize, coords: &[f64]) -> Result<Self> {
        if coords.len() != 2 * rows * cols {
            return Err(Error::shape("CMat::from_coords", 2 * rows * cols, coords.len()));
        }
        let split = Array2::from_shape_vec((rows, 2 * cols), coords.to_vec())
            .expect("length checked above");
        Self::from_split(&split)
    }
}

/// Selector matrices `(M_re, M_im)`, each `2·cols × cols`, with
/// `[X_re, X_im]·M_re = X_re` and `[X_re, X_im]·M_im = X_im`.
pub fn split_masks(cols: usize) -> (Array2<f64>, Array2<f64>) {
    let mut mask_re = Array2::zeros((2 * cols, cols));
    let mut mask_im = Array2::zeros((2 * cols, cols));
    for j in 0..cols {
        mask_re[[j, j]] = 1.0;
        mask_im[[cols + j, j]] = 1.0;
    }
    (mask_re, mask_im)
}

/// Complex vector as `[re..., im...]` real coordinates.
pub fn cvec_to_coords(v: &[Complex64]) -> Vec<f64> {
    v.iter().map(|z| z.re).chain(v.iter().map(|z| z.im)).collect()
}

pub fn cvec_from_coords(coords: &[f64]) -> Result<Vec<Complex64>> {
    if coords.len() % 2 != 0 {
        return Err(Error::shape("cvec_from_coords", "even length", coords.len()));
    }
    let n = coords.len() / 2;
    Ok((0..n).map(|i| Complex64::new(coords[i], coords[n + i])).collect())
}
