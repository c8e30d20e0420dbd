//! Check-loss machinery: the quantile loss, a multivariate quantile
//! regression solver, an exact enumeration oracle for small instances, and
//! the quantile covariance used to build component directions.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Annealing schedule for the smoothed solver.
const EPSILON_SCHEDULE: [f64; 6] = [1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6];
const MAX_ITER_PER_STAGE: usize = 500;
const STAGE_RELATIVE_TOL: f64 = 1e-10;
const MAX_POLISH_PASSES: usize = 80;
const DEGENERATE_COLUMN_NORM: f64 = 1e-10;

/// The check loss `rho_tau(u) = u * (tau - 1{u < 0})`.
#[inline]
pub fn check_loss(u: f64, tau: f64) -> f64 {
    if u >= 0.0 {
        tau * u
    } else {
        (tau - 1.0) * u
    }
}

/// Total check loss of a residual vector.
pub fn total_check_loss(residuals: &[f64], tau: f64) -> f64 {
    residuals.iter().map(|&r| check_loss(r, tau)).sum()
}

/// Solution of a quantile regression fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QrSolution {
    pub intercept: f64,
    pub slopes: DVector<f64>,
    /// Sum of check losses at the optimum.
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl QrSolution {
    pub fn fitted(&self, design: &DMatrix<f64>) -> DVector<f64> {
        let mut out = design * &self.slopes;
        out.add_scalar_mut(self.intercept);
        out
    }

    /// Residuals evaluated as `(y - X b) - intercept`; the solver fixes its
    /// final intercept with the same expression, so interpolated points come
    /// out as exact zeros and the residual-sign bounds hold combinatorially.
    pub fn residuals(&self, design: &DMatrix<f64>, response: &DVector<f64>) -> DVector<f64> {
        let mut r = response - design * &self.slopes;
        r.add_scalar_mut(-self.intercept);
        r
    }
}

fn validate_inputs(design: &DMatrix<f64>, response: &DVector<f64>, tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidTau(tau));
    }
    if design.nrows() != response.len() {
        return Err(Error::Shape(format!(
            "design has {} rows, response has {}",
            design.nrows(),
            response.len()
        )));
    }
    if design.nrows() < design.ncols() + 1 {
        return Err(Error::Shape(format!(
            "need n >= p + 1, got n = {}, p = {}",
            design.nrows(),
            design.ncols()
        )));
    }
    Ok(())
}

/// Smoothed check loss: the asymmetric Huber envelope used by the IRLS
/// stages. `a * u^2 / (2 eps)` inside the band, `a * (|u| - eps/2)` outside,
/// with `a` the tau-dependent side weight.
#[inline]
fn smoothed_loss(u: f64, tau: f64, eps: f64) -> f64 {
    let a = if u >= 0.0 { tau } else { 1.0 - tau };
    let m = u.abs();
    if m <= eps {
        a * m * m / (2.0 * eps)
    } else {
        a * (m - 0.5 * eps)
    }
}

/// Exact minimizer of `b -> sum_i rho_tau(u_i - b * v_i)` over one coordinate.
///
/// Writing each term as `|v_i| * rho_{tau_i}(u_i / v_i - b)` with the side
/// level flipped where `v_i < 0`, the minimizer is the weighted quantile of
/// the ratios: the smallest candidate whose cumulative weight reaches
/// `sum_i |v_i| tau_i`. Entries with `v_i = 0` do not move.
fn coordinate_minimizer(
    u: &[f64],
    v: &[f64],
    tau: f64,
    scratch: &mut Vec<(f64, f64)>,
) -> Option<f64> {
    scratch.clear();
    let mut target = 0.0;
    for i in 0..u.len() {
        let vi = v[i];
        if vi == 0.0 {
            continue;
        }
        let w = vi.abs();
        let side = if vi > 0.0 { tau } else { 1.0 - tau };
        target += w * side;
        scratch.push((u[i] / vi, w));
    }
    if scratch.is_empty() {
        return None;
    }
    scratch.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite candidates"));
    let mut cum = 0.0;
    for &(c, w) in scratch.iter() {
        cum += w;
        if cum >= target {
            return Some(c);
        }
    }
    Some(scratch.last().unwrap().0)
}

/// State shared by the IRLS stages and the polish sweep.
struct WorkingFit {
    beta: DVector<f64>, // slopes then (optionally) intercept last
    residuals: DVector<f64>,
    fit_intercept: bool,
}

impl WorkingFit {
    fn objective(&self, tau: f64) -> f64 {
        total_check_loss(self.residuals.as_slice(), tau)
    }
}

/// Quantile regression by smoothed iteratively reweighted least squares.
///
/// The smoothing parameter anneals over a fixed schedule with warm starts;
/// a cyclic coordinate polish (each coordinate minimized exactly, ending on
/// the intercept) then lands the iterate on an exact vertex, which also
/// guarantees the residual-sign quantile property whenever an intercept is
/// fitted.
pub fn solve_qr(
    design: &DMatrix<f64>,
    response: &DVector<f64>,
    tau: f64,
    fit_intercept: bool,
) -> Result<QrSolution> {
    validate_inputs(design, response, tau)?;
    let n = design.nrows();
    let p = design.ncols();
    let q = p + usize::from(fit_intercept);

    let mut fit = WorkingFit {
        beta: DVector::zeros(q),
        residuals: response.clone(),
        fit_intercept,
    };
    let mut iterations = 0;
    let mut converged = true;

    if q > 0 {
        // Unweighted least squares start; doubles as the rank check.
        let xtx = normal_matrix(design, None, fit_intercept);
        check_rank(&xtx)?;
        let xty = normal_rhs(design, response, None, fit_intercept);
        fit.beta = solve_spd(&xtx, &xty)?;
        update_residuals(design, response, &fit.beta, fit_intercept, &mut fit.residuals);

        let mut weights = DVector::zeros(n);
        for &eps in &EPSILON_SCHEDULE {
            let mut prev_obj = f64::INFINITY;
            let mut stage_converged = false;
            for _ in 0..MAX_ITER_PER_STAGE {
                iterations += 1;
                for i in 0..n {
                    let r = fit.residuals[i];
                    let a = if r >= 0.0 { tau } else { 1.0 - tau };
                    weights[i] = a / r.abs().max(eps);
                }
                let xtwx = normal_matrix(design, Some(&weights), fit_intercept);
                let xtwy = normal_rhs(design, response, Some(&weights), fit_intercept);
                fit.beta = solve_spd(&xtwx, &xtwy)?;
                update_residuals(design, response, &fit.beta, fit_intercept, &mut fit.residuals);
                let obj: f64 = fit
                    .residuals
                    .iter()
                    .map(|&r| smoothed_loss(r, tau, eps))
                    .sum();
                if (prev_obj - obj).abs() <= STAGE_RELATIVE_TOL * (1.0 + obj.abs()) {
                    stage_converged = true;
                    break;
                }
                prev_obj = obj;
            }
            converged &= stage_converged;
        }
    }

    // Exact coordinate polish alternating with vertex snaps. Cyclic
    // coordinate descent on a piecewise-linear objective can stall off the
    // optimal vertex, so after each stall we try interpolating the q points
    // with the smallest residuals and keep the move if it lowers the loss.
    // Every polish pass ends on the intercept, which makes the residual-sign
    // property hold at exit whenever an intercept is fitted.
    let mut scratch: Vec<(f64, f64)> = Vec::with_capacity(n);
    let mut column = vec![0.0; n];
    let mut partial = vec![0.0; n];
    let mut polished = false;
    let mut obj = fit.objective(tau);
    for _round in 0..12 {
        polished = false;
        for _ in 0..MAX_POLISH_PASSES {
            iterations += 1;
            let before = obj;
            for j in 0..q {
                let is_intercept = fit.fit_intercept && j == p;
                for i in 0..n {
                    column[i] = if is_intercept { 1.0 } else { design[(i, j)] };
                    partial[i] = fit.residuals[i] + fit.beta[j] * column[i];
                }
                if let Some(b) = coordinate_minimizer(&partial, &column, tau, &mut scratch) {
                    fit.beta[j] = b;
                    for i in 0..n {
                        fit.residuals[i] = partial[i] - b * column[i];
                    }
                }
            }
            obj = fit.objective(tau);
            if (before - obj).abs() <= 1e-13 * (1.0 + obj.abs()) {
                polished = true;
                break;
            }
        }
        if !polished {
            break;
        }
        match vertex_snap(design, response, tau, fit_intercept, &fit.beta, obj) {
            Some((snapped, snapped_obj)) => {
                fit.beta = snapped;
                update_residuals(design, response, &fit.beta, fit_intercept, &mut fit.residuals);
                obj = snapped_obj;
            }
            None => break,
        }
    }

    let (mut intercept, slopes) = if fit_intercept {
        (fit.beta[p], DVector::from_fn(p, |j, _| fit.beta[j]))
    } else {
        (0.0, fit.beta.clone())
    };
    if fit_intercept {
        // Final exact intercept on residuals recomputed the same way
        // `QrSolution::residuals` computes them.
        let z = response - design * &slopes;
        let mut sorted: Vec<f64> = z.iter().copied().collect();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite residuals"));
        let target = tau * n as f64;
        let mut k = 0;
        while ((k + 1) as f64) < target {
            k += 1;
        }
        // The type-1 quantile minimizes the intercept coordinate exactly, so
        // adopting it never loses objective.
        intercept = sorted[k.min(n - 1)];
        obj = z.iter().map(|&v| check_loss(v - intercept, tau)).sum();
    }
    let solution = QrSolution {
        intercept,
        slopes,
        objective: obj,
        iterations,
        converged: converged && polished,
    };
    if !polished {
        return Err(Error::NotConverged {
            iterations,
            objective: obj,
            last: Box::new(solution),
        });
    }
    Ok(solution)
}

/// Interpolate the q points with the smallest current residuals and return
/// the interpolant when it strictly lowers the check loss.
fn vertex_snap(
    design: &DMatrix<f64>,
    response: &DVector<f64>,
    tau: f64,
    fit_intercept: bool,
    beta: &DVector<f64>,
    current_obj: f64,
) -> Option<(DVector<f64>, f64)> {
    let n = design.nrows();
    let p = design.ncols();
    let q = p + usize::from(fit_intercept);
    if q == 0 || n < q {
        return None;
    }
    let mut residuals = DVector::zeros(n);
    update_residuals(design, response, beta, fit_intercept, &mut residuals);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        residuals[a]
            .abs()
            .partial_cmp(&residuals[b].abs())
            .expect("finite residuals")
    });
    let subset = &order[..q];
    let mut system = vec![0.0; q * q];
    let mut rhs = vec![0.0; q];
    let mut snapped = vec![0.0; q];
    for (r, &i) in subset.iter().enumerate() {
        for c in 0..p {
            system[r * q + c] = design[(i, c)];
        }
        if fit_intercept {
            system[r * q + p] = 1.0;
        }
        rhs[r] = response[i];
    }
    if !solve_dense_inplace(&mut system, &mut rhs, &mut snapped, q) {
        return None;
    }
    let candidate = DVector::from_column_slice(&snapped);
    let mut obj = 0.0;
    for i in 0..n {
        let mut pred = if fit_intercept { candidate[p] } else { 0.0 };
        for c in 0..p {
            pred += design[(i, c)] * candidate[c];
        }
        obj += check_loss(response[i] - pred, tau);
    }
    if obj < current_obj - 1e-15 * (1.0 + current_obj) {
        Some((candidate, obj))
    } else {
        None
    }
}

fn update_residuals(
    design: &DMatrix<f64>,
    response: &DVector<f64>,
    beta: &DVector<f64>,
    fit_intercept: bool,
    out: &mut DVector<f64>,
) {
    let n = design.nrows();
    let p = design.ncols();
    let intercept = if fit_intercept { beta[p] } else { 0.0 };
    for i in 0..n {
        let mut pred = intercept;
        for j in 0..p {
            pred += design[(i, j)] * beta[j];
        }
        out[i] = response[i] - pred;
    }
}

/// `X^T W X` over the (optionally intercept-augmented) design.
fn normal_matrix(
    design: &DMatrix<f64>,
    weights: Option<&DVector<f64>>,
    fit_intercept: bool,
) -> DMatrix<f64> {
    let n = design.nrows();
    let p = design.ncols();
    let q = p + usize::from(fit_intercept);
    let mut out = DMatrix::zeros(q, q);
    for i in 0..n {
        let w = weights.map_or(1.0, |w| w[i]);
        for a in 0..p {
            let xa = design[(i, a)] * w;
            for b in a..p {
                out[(a, b)] += xa * design[(i, b)];
            }
            if fit_intercept {
                out[(a, p)] += xa;
            }
        }
        if fit_intercept {
            out[(p, p)] += w;
        }
    }
    for a in 0..q {
        for b in 0..a {
            out[(a, b)] = out[(b, a)];
        }
    }
    out
}

fn normal_rhs(
    design: &DMatrix<f64>,
    response: &DVector<f64>,
    weights: Option<&DVector<f64>>,
    fit_intercept: bool,
) -> DVector<f64> {
    let n = design.nrows();
    let p = design.ncols();
    let q = p + usize::from(fit_intercept);
    let mut out = DVector::zeros(q);
    for i in 0..n {
        let wy = weights.map_or(1.0, |w| w[i]) * response[i];
        for a in 0..p {
            out[a] += design[(i, a)] * wy;
        }
        if fit_intercept {
            out[p] += wy;
        }
    }
    out
}

fn check_rank(xtx: &DMatrix<f64>) -> Result<()> {
    // Ratio on the eigenvalues of X^T X, i.e. squared singular values: 1e-14
    // here corresponds to a design condition number of about 1e7.
    let eig = xtx.clone().symmetric_eigen();
    let max = eig.eigenvalues.amax();
    let min = eig.eigenvalues.min();
    if !(min > 1e-14 * max.max(1e-300)) {
        return Err(Error::Conditioning(format!(
            "design is rank deficient (eigenvalue ratio {:.3e})",
            min / max
        )));
    }
    Ok(())
}

fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    if let Some(chol) = a.clone().cholesky() {
        return Ok(chol.solve(b));
    }
    // Tiny relative jitter rescues borderline positive semidefinite systems
    // produced by extreme IRLS weights.
    let scale = a.diagonal().amax().max(1e-300);
    let mut jittered = a.clone();
    for i in 0..a.nrows() {
        jittered[(i, i)] += 1e-12 * scale;
    }
    jittered
        .cholesky()
        .map(|c| c.solve(b))
        .ok_or_else(|| Error::Conditioning("weighted normal equations not positive definite".into()))
}

/// Exact reference solver by enumeration of basic solutions.
///
/// A check-loss optimum interpolates as many points as there are free
/// parameters, so trying every such subset and keeping the feasible minimizer
/// is exact. Only viable for small instances; guarded by a subset budget.
pub fn qr_oracle(
    design: &DMatrix<f64>,
    response: &DVector<f64>,
    tau: f64,
    fit_intercept: bool,
) -> Result<QrSolution> {
    validate_inputs(design, response, tau)?;
    let n = design.nrows();
    let p = design.ncols();
    if n > 200 || p > 6 {
        return Err(Error::InstanceTooLarge(format!("n = {n}, p = {p}")));
    }
    let q = p + usize::from(fit_intercept);
    let budget: u128 = 20_000_000;
    if binomial(n as u128, q as u128) > budget {
        return Err(Error::InstanceTooLarge(format!(
            "C({n}, {q}) exceeds the enumeration budget"
        )));
    }

    let mut best: Option<(f64, DVector<f64>)> = None;
    let mut subset: Vec<usize> = (0..q).collect();
    let mut system = vec![0.0; q * q];
    let mut rhs = vec![0.0; q];
    let mut beta = vec![0.0; q];

    loop {
        // Solve the q x q interpolation system for this subset.
        for (r, &i) in subset.iter().enumerate() {
            for c in 0..p {
                system[r * q + c] = design[(i, c)];
            }
            if fit_intercept {
                system[r * q + p] = 1.0;
            }
            rhs[r] = response[i];
        }
        if solve_dense_inplace(&mut system, &mut rhs, &mut beta, q) {
            let mut obj = 0.0;
            for i in 0..n {
                let mut pred = 0.0;
                for c in 0..p {
                    pred += design[(i, c)] * beta[c];
                }
                if fit_intercept {
                    pred += beta[p];
                }
                obj += check_loss(response[i] - pred, tau);
            }
            if best.as_ref().is_none_or(|(b, _)| obj < *b) {
                best = Some((obj, DVector::from_column_slice(&beta)));
            }
        }
        if !next_combination(&mut subset, n) {
            break;
        }
    }

    let (objective, beta) = best.ok_or_else(|| {
        Error::DegenerateDirection("no nonsingular interpolation subset found".into())
    })?;
    let (intercept, slopes) = if fit_intercept {
        (beta[p], DVector::from_fn(p, |j, _| beta[j]))
    } else {
        (0.0, beta)
    };
    Ok(QrSolution {
        intercept,
        slopes,
        objective,
        iterations: 0,
        converged: true,
    })
}

fn binomial(n: u128, k: u128) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul(n - i) / (i + 1);
    }
    acc
}

fn next_combination(subset: &mut [usize], n: usize) -> bool {
    let q = subset.len();
    let mut i = q;
    while i > 0 {
        i -= 1;
        if subset[i] < n - q + i {
            subset[i] += 1;
            for j in i + 1..q {
                subset[j] = subset[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Gaussian elimination with partial pivoting; returns false when singular.
fn solve_dense_inplace(a: &mut [f64], b: &mut [f64], x: &mut [f64], q: usize) -> bool {
    if q == 0 {
        return true;
    }
    for col in 0..q {
        let mut pivot_row = col;
        let mut pivot_val = a[col * q + col].abs();
        for r in col + 1..q {
            let v = a[r * q + col].abs();
            if v > pivot_val {
                pivot_val = v;
                pivot_row = r;
            }
        }
        if pivot_val < 1e-12 {
            return false;
        }
        if pivot_row != col {
            for c in 0..q {
                a.swap(pivot_row * q + c, col * q + c);
            }
            b.swap(pivot_row, col);
        }
        let inv = 1.0 / a[col * q + col];
        for r in col + 1..q {
            let f = a[r * q + col] * inv;
            if f == 0.0 {
                continue;
            }
            for c in col..q {
                a[r * q + c] -= f * a[col * q + c];
            }
            b[r] -= f * b[col];
        }
    }
    for r in (0..q).rev() {
        let mut acc = b[r];
        for c in r + 1..q {
            acc -= a[r * q + c] * x[c];
        }
        x[r] = acc / a[r * q + r];
    }
    true
}

/// Quantile covariance: the slope of the univariate quantile regression of
/// `y` on `z` with an intercept. Callers standardize `z` on first use; the
/// deflated columns of later iterations enter as-is.
pub fn quantile_covariance(y: &DVector<f64>, z: &DVector<f64>, tau: f64) -> Result<f64> {
    if y.len() != z.len() {
        return Err(Error::Shape(format!(
            "y has {} entries, z has {}",
            y.len(),
            z.len()
        )));
    }
    let mean = z.sum() / z.len() as f64;
    let var = z.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (z.len() as f64 - 1.0);
    if var < 1e-12 {
        return Err(Error::DegenerateDirection(
            "covariate is constant (zero variance)".into(),
        ));
    }
    let design = DMatrix::from_column_slice(z.len(), 1, z.as_slice());
    let sol = solve_qr(&design, y, tau, true)?;
    Ok(sol.slopes[0])
}

/// Direction matrix with unit-norm columns; all-zero columns are kept and
/// flagged instead of normalized.
#[derive(Debug, Clone)]
pub struct DirectionMatrix {
    pub matrix: DMatrix<f64>,
    pub degenerate: Vec<bool>,
}

impl DirectionMatrix {
    pub fn all_degenerate(&self) -> bool {
        self.degenerate.iter().all(|&d| d)
    }
}

/// Pairwise quantile covariances between every `z` column and every `omega`
/// column, with each column of the result normalized to unit length.
pub fn quantile_cov_matrix(
    omega: &DMatrix<f64>,
    z: &DMatrix<f64>,
    tau: f64,
) -> Result<DirectionMatrix> {
    if omega.nrows() != z.nrows() {
        return Err(Error::Shape(format!(
            "omega has {} rows, z has {}",
            omega.nrows(),
            z.nrows()
        )));
    }
    let mut matrix = DMatrix::zeros(z.ncols(), omega.ncols());
    for k in 0..omega.ncols() {
        let y_col = DVector::from_column_slice(omega.column(k).as_slice());
        for j in 0..z.ncols() {
            let z_col = DVector::from_column_slice(z.column(j).as_slice());
            matrix[(j, k)] = match quantile_covariance(&y_col, &z_col, tau) {
                Ok(c) => c,
                Err(Error::DegenerateDirection(_)) => 0.0,
                Err(e) => return Err(e),
            };
        }
    }
    Ok(normalize_direction_columns(matrix))
}

/// Shared column normalization for quantile and ordinary covariance
/// directions.
pub fn normalize_direction_columns(mut matrix: DMatrix<f64>) -> DirectionMatrix {
    let mut degenerate = vec![false; matrix.ncols()];
    for k in 0..matrix.ncols() {
        let norm = matrix.column(k).norm();
        if norm < DEGENERATE_COLUMN_NORM {
            degenerate[k] = true;
            matrix.column_mut(k).fill(0.0);
        } else {
            matrix.column_mut(k).scale_mut(1.0 / norm);
        }
    }
    DirectionMatrix { matrix, degenerate }
}

/// Residual-sign bounds for a fitted quantile regression with intercept:
/// `#{r < 0}/n <= tau <= #{r <= 0}/n`.
pub fn residual_sign_property(residuals: &DVector<f64>, tau: f64) -> bool {
    let n = residuals.len() as f64;
    let below = residuals.iter().filter(|&&r| r < 0.0).count() as f64;
    let at_or_below = residuals.iter().filter(|&&r| r <= 0.0).count() as f64;
    below / n <= tau && tau <= at_or_below / n
}
