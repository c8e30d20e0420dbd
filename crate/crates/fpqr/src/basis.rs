//! Clamped B-spline bases: evaluation, Gram matrices with symmetric
//! half-powers, and least-squares projection of observed curves.

use nalgebra::{DMatrix, SVD};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::FunctionalSample;
use crate::numeric::{self, gauss_legendre, symmetrize};

const MIN_GRAM_EIGENVALUE: f64 = 1e-12;
const RANK_TOLERANCE: f64 = 1e-10;

/// A clamped B-spline basis on `[lo, hi]` together with its Gram matrix
/// and the symmetric half-power factors used by the component algebra.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BasisSystem {
    lo: f64,
    hi: f64,
    order: usize,
    n_basis: usize,
    knots: Vec<f64>,
    gram: DMatrix<f64>,
    gram_half: DMatrix<f64>,
    gram_half_inv: DMatrix<f64>,
}

/// Build a clamped (open) uniform B-spline basis.
///
/// The knot vector repeats each boundary `order` times and spaces interior
/// knots uniformly. The Gram matrix is assembled by Gauss-Legendre quadrature
/// with `order` nodes per knot span, which is exact for products of basis
/// functions; its half-power factors come from a symmetric eigendecomposition.
pub fn build_bspline_basis(lo: f64, hi: f64, n_basis: usize, order: usize) -> Result<BasisSystem> {
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidDomain { lo, hi });
    }
    if order < 2 || n_basis < order {
        return Err(Error::InvalidBasis { n_basis, order });
    }

    let n_interior = n_basis - order;
    let mut knots = Vec::with_capacity(n_basis + order);
    knots.extend(std::iter::repeat_n(lo, order));
    for i in 1..=n_interior {
        knots.push(lo + (hi - lo) * i as f64 / (n_interior + 1) as f64);
    }
    knots.extend(std::iter::repeat_n(hi, order));

    let mut basis = BasisSystem {
        lo,
        hi,
        order,
        n_basis,
        knots,
        gram: DMatrix::zeros(n_basis, n_basis),
        gram_half: DMatrix::zeros(n_basis, n_basis),
        gram_half_inv: DMatrix::zeros(n_basis, n_basis),
    };

    let mut gram = DMatrix::zeros(n_basis, n_basis);
    let (nodes, weights) = gauss_legendre(order);
    let degree = order - 1;
    let mut local = vec![0.0; order];
    for span in degree..n_basis {
        let (a, b) = (basis.knots[span], basis.knots[span + 1]);
        if b <= a {
            continue;
        }
        let half_len = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        for (node, weight) in nodes.iter().zip(&weights) {
            let x = mid + half_len * node;
            basis.local_values(span, x, &mut local);
            let w = weight * half_len;
            let first = span - degree;
            for p in 0..order {
                for q in p..order {
                    gram[(first + p, first + q)] += w * local[p] * local[q];
                }
            }
        }
    }
    for i in 0..n_basis {
        for j in 0..i {
            gram[(i, j)] = gram[(j, i)];
        }
    }
    let gram = symmetrize(gram);

    let (half, half_inv) = numeric::sym_sqrt_pair(&gram, MIN_GRAM_EIGENVALUE)?;
    basis.gram = gram;
    basis.gram_half = half;
    basis.gram_half_inv = half_inv;
    Ok(basis)
}

impl BasisSystem {
    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn n_basis(&self) -> usize {
        self.n_basis
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn gram_half(&self) -> &DMatrix<f64> {
        &self.gram_half
    }

    pub fn gram_half_inv(&self) -> &DMatrix<f64> {
        &self.gram_half_inv
    }

    /// Knot span index containing `x`; the right endpoint maps to the last span.
    fn find_span(&self, x: f64) -> usize {
        let degree = self.order - 1;
        if x >= self.hi {
            return self.n_basis - 1;
        }
        // Binary search over the nonempty spans [knots[s], knots[s+1]).
        let mut lo = degree;
        let mut hi = self.n_basis - 1;
        while lo < hi {
            let mid = (lo + hi + 1) / 2;
            if self.knots[mid] <= x {
                lo = mid;
            } else {
                hi = mid - 1;
            }
        }
        lo
    }

    /// The `order` basis values that are nonzero on the span, by the
    /// Cox-de Boor recursion (The NURBS Book, algorithm A2.2).
    fn local_values(&self, span: usize, x: f64, out: &mut [f64]) {
        let degree = self.order - 1;
        let mut left = vec![0.0; self.order];
        let mut right = vec![0.0; self.order];
        out[0] = 1.0;
        for d in 1..=degree {
            left[d] = x - self.knots[span + 1 - d];
            right[d] = self.knots[span + d] - x;
            let mut saved = 0.0;
            for r in 0..d {
                let temp = out[r] / (right[r + 1] + left[d - r]);
                out[r] = saved + right[r + 1] * temp;
                saved = left[d - r] * temp;
            }
            out[d] = saved;
        }
    }

    /// Evaluate every basis function at the given points (rows = points).
    pub fn eval(&self, points: &[f64]) -> Result<DMatrix<f64>> {
        let degree = self.order - 1;
        let mut out = DMatrix::zeros(points.len(), self.n_basis);
        let mut local = vec![0.0; self.order];
        for (l, &x) in points.iter().enumerate() {
            if x < self.lo || x > self.hi {
                return Err(Error::OutOfDomain {
                    point: x,
                    lo: self.lo,
                    hi: self.hi,
                });
            }
            let span = self.find_span(x);
            self.local_values(span, x, &mut local);
            for (p, &v) in local.iter().enumerate() {
                out[(l, span - degree + p)] = v;
            }
        }
        Ok(out)
    }
}

/// Basis-expansion coefficients of one functional variable (rows = curves).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoefBlock {
    pub basis: BasisSystem,
    pub coefs: DMatrix<f64>,
}

/// Project each curve of a sample onto the basis by ordinary least squares.
///
/// Rejects rank-deficient evaluation matrices (e.g. fewer grid points than
/// basis functions) with a conditioning error.
pub fn fit_coefficients(sample: &FunctionalSample, basis: &BasisSystem) -> Result<CoefBlock> {
    let grid = sample.grid();
    if grid.len() < basis.n_basis() {
        return Err(Error::Conditioning(format!(
            "{} grid points cannot identify {} basis coefficients",
            grid.len(),
            basis.n_basis()
        )));
    }
    let eval = basis.eval(grid.points())?;
    let svd = SVD::new(eval.clone(), true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smin <= RANK_TOLERANCE * smax {
        return Err(Error::Conditioning(format!(
            "basis evaluation matrix is rank deficient (sigma_min/sigma_max = {:.3e})",
            smin / smax
        )));
    }
    // E^+ = V S^{-1} U^T, applied to all curves at once: coefs = Y * (E^+)^T.
    let u = svd.u.as_ref().expect("svd with u");
    let vt = svd.v_t.as_ref().expect("svd with v_t");
    let k = basis.n_basis();
    let mut scaled_u = u.clone();
    for j in 0..k {
        let s_inv = 1.0 / svd.singular_values[j];
        for r in 0..grid.len() {
            scaled_u[(r, j)] *= s_inv;
        }
    }
    let pinv_t = scaled_u * vt; // (E^+)^T, L x K
    let coefs = sample.values() * pinv_t;
    Ok(CoefBlock {
        basis: basis.clone(),
        coefs,
    })
}

/// Block-diagonal composite of per-predictor Gram machinery.
///
/// Column blocks follow the input order, so coefficient vectors concatenate
/// the same way the predictors do.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompositeGram {
    offsets: Vec<usize>,
    dim: usize,
    gram: DMatrix<f64>,
    gram_half: DMatrix<f64>,
    gram_half_inv: DMatrix<f64>,
}

pub fn block_diagonal_gram(bases: &[BasisSystem]) -> Result<CompositeGram> {
    if bases.is_empty() {
        return Err(Error::InvalidParameter("no bases given".into()));
    }
    let dim: usize = bases.iter().map(|b| b.n_basis()).sum();
    let mut offsets = Vec::with_capacity(bases.len());
    let mut gram = DMatrix::zeros(dim, dim);
    let mut half = DMatrix::zeros(dim, dim);
    let mut half_inv = DMatrix::zeros(dim, dim);
    let mut at = 0;
    for b in bases {
        offsets.push(at);
        let k = b.n_basis();
        gram.view_mut((at, at), (k, k)).copy_from(b.gram());
        half.view_mut((at, at), (k, k)).copy_from(b.gram_half());
        half_inv
            .view_mut((at, at), (k, k))
            .copy_from(b.gram_half_inv());
        at += k;
    }
    Ok(CompositeGram {
        offsets,
        dim,
        gram,
        gram_half: half,
        gram_half_inv: half_inv,
    })
}

impl CompositeGram {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Column offset of block `m` in the composite coefficient space.
    pub fn offset(&self, m: usize) -> usize {
        self.offsets[m]
    }

    pub fn n_blocks(&self) -> usize {
        self.offsets.len()
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn gram_half(&self) -> &DMatrix<f64> {
        &self.gram_half
    }

    pub fn gram_half_inv(&self) -> &DMatrix<f64> {
        &self.gram_half_inv
    }
}
