//! Discretely observed functional data: evaluation grids and curve samples.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric;

/// A strictly increasing evaluation grid inside a closed domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    points: Vec<f64>,
    lo: f64,
    hi: f64,
}

impl Grid {
    /// Grid whose domain is the span of the points themselves.
    pub fn new(points: Vec<f64>) -> Result<Self> {
        let (lo, hi) = match (points.first(), points.last()) {
            (Some(&a), Some(&b)) => (a, b),
            _ => return Err(Error::InvalidGrid("empty grid".into())),
        };
        Self::with_domain(points, lo, hi)
    }

    /// Grid inside an explicit domain `[lo, hi]`.
    pub fn with_domain(points: Vec<f64>, lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) {
            return Err(Error::InvalidDomain { lo, hi });
        }
        if points.len() < 4 {
            return Err(Error::InvalidGrid(format!(
                "need at least 4 points, got {}",
                points.len()
            )));
        }
        for w in points.windows(2) {
            if !(w[0] < w[1]) {
                return Err(Error::InvalidGrid(format!(
                    "points must be strictly increasing ({} then {})",
                    w[0], w[1]
                )));
            }
        }
        if !points.iter().all(|p| p.is_finite()) {
            return Err(Error::InvalidGrid("non-finite grid point".into()));
        }
        if points[0] < lo || *points.last().unwrap() > hi {
            return Err(Error::InvalidGrid(format!(
                "points [{}, {}] leave the domain [{lo}, {hi}]",
                points[0],
                points.last().unwrap()
            )));
        }
        Ok(Self { points, lo, hi })
    }

    /// `n` equally spaced points spanning `[lo, hi]`.
    pub fn equally_spaced(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if n < 4 {
            return Err(Error::InvalidGrid(format!("need at least 4 points, got {n}")));
        }
        let step = (hi - lo) / (n - 1) as f64;
        let mut points: Vec<f64> = (0..n).map(|i| lo + i as f64 * step).collect();
        points[n - 1] = hi;
        Self::with_domain(points, lo, hi)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    /// Trapezoidal integral of values sampled on this grid.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        numeric::trapezoid(&self.points, values)
    }
}

/// `n` curves observed on a shared grid; row `i` is curve `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalSample {
    grid: Grid,
    values: DMatrix<f64>,
}

impl FunctionalSample {
    pub fn new(grid: Grid, values: DMatrix<f64>) -> Result<Self> {
        if values.ncols() != grid.len() {
            return Err(Error::Shape(format!(
                "curve matrix has {} columns but the grid has {} points",
                values.ncols(),
                grid.len()
            )));
        }
        if values.nrows() == 0 {
            return Err(Error::Shape("sample contains no curves".into()));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::Shape("non-finite curve value".into()));
        }
        Ok(Self { grid, values })
    }

    /// Build a sample by evaluating a closure `f(curve_index, t)` on the grid.
    pub fn from_fn(grid: Grid, n: usize, f: impl Fn(usize, f64) -> f64) -> Result<Self> {
        let values = DMatrix::from_fn(n, grid.len(), |i, l| f(i, grid.points()[l]));
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn n_curves(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_points(&self) -> usize {
        self.values.ncols()
    }

    /// Pointwise mean curve over the sample.
    pub fn mean_curve(&self) -> DVector<f64> {
        let n = self.n_curves() as f64;
        DVector::from_iterator(
            self.n_points(),
            self.values.column_iter().map(|c| c.sum() / n),
        )
    }

    /// Keep only the listed curve rows (in the given order).
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        for &r in rows {
            if r >= self.n_curves() {
                return Err(Error::Shape(format!(
                    "row {r} out of range for {} curves",
                    self.n_curves()
                )));
            }
        }
        let values = DMatrix::from_fn(rows.len(), self.n_points(), |i, j| {
            self.values[(rows[i], j)]
        });
        Self::new(self.grid.clone(), values)
    }
}
