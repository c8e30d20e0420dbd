//! Small numerical helpers shared across the crate: Gauss-Legendre rules,
//! trapezoidal quadrature, empirical quantiles, and symmetric matrix roots.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Nodes and weights of the n-point Gauss-Legendre rule on [-1, 1].
///
/// Computed by Newton iteration on the Legendre polynomial; exact for
/// polynomials of degree <= 2n - 1.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "need at least one quadrature node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Chebyshev-based initial guess for the i-th root.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Evaluate P_n and P_n' by the three-term recurrence.
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

/// Trapezoidal quadrature weights for an increasing point set.
pub fn trapezoid_weights(points: &[f64]) -> Vec<f64> {
    let l = points.len();
    assert!(l >= 2, "trapezoid rule needs at least two points");
    let mut w = vec![0.0; l];
    for i in 0..l - 1 {
        let h = points[i + 1] - points[i];
        w[i] += 0.5 * h;
        w[i + 1] += 0.5 * h;
    }
    w
}

/// Trapezoidal integral of sampled values over the given points.
pub fn trapezoid(points: &[f64], values: &[f64]) -> f64 {
    assert_eq!(points.len(), values.len());
    let mut acc = 0.0;
    for i in 0..points.len() - 1 {
        acc += 0.5 * (points[i + 1] - points[i]) * (values[i] + values[i + 1]);
    }
    acc
}

/// Empirical quantile with linear interpolation between order statistics.
///
/// `sorted` must be ascending and non-empty; `q` in [0, 1].
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    debug_assert!(n > 0);
    if n == 1 {
        return sorted[0];
    }
    let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
    let idx = pos.floor() as usize;
    let frac = pos - idx as f64;
    if idx + 1 < n {
        sorted[idx] * (1.0 - frac) + sorted[idx + 1] * frac
    } else {
        sorted[n - 1]
    }
}

/// Sample mean and (n-1)-denominator standard deviation of a column.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let ss = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// Symmetric positive-definite square root and its inverse via eigendecomposition.
///
/// Eigenvalues below `min_eig` are rejected: the downstream algebra relies on
/// both factors existing and being symmetric.
pub fn sym_sqrt_pair(mat: &DMatrix<f64>, min_eig: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = mat.nrows();
    let eig = mat.clone().symmetric_eigen();
    for (i, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda < min_eig {
            return Err(Error::Conditioning(format!(
                "eigenvalue {i} of Gram matrix is {lambda:.3e} (< {min_eig:.1e})"
            )));
        }
    }
    let v = &eig.eigenvectors;
    let sqrt_l = DVector::from_iterator(n, eig.eigenvalues.iter().map(|l| l.sqrt()));
    let inv_sqrt_l = DVector::from_iterator(n, eig.eigenvalues.iter().map(|l| 1.0 / l.sqrt()));
    let half = symmetrize(v * DMatrix::from_diagonal(&sqrt_l) * v.transpose());
    let half_inv = symmetrize(v * DMatrix::from_diagonal(&inv_sqrt_l) * v.transpose());
    Ok((half, half_inv))
}

/// Force exact symmetry by averaging with the transpose.
pub fn symmetrize(mut m: DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
    m
}

/// Pearson correlation of two columns; `None` when either side is constant.
pub fn correlation(a: &[f64], b: &[f64]) -> Option<f64> {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let (ma, mb) = (
        a.iter().sum::<f64>() / n,
        b.iter().sum::<f64>() / n,
    );
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for i in 0..a.len() {
        let da = a[i] - ma;
        let db = b[i] - mb;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if saa <= 1e-300 || sbb <= 1e-300 {
        return None;
    }
    Some(sab / (saa * sbb).sqrt())
}
