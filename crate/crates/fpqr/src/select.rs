//! Model selection: BIC over the number of retained components and forward
//! stepwise selection of functional predictors.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{FunctionalSample, Grid};
use crate::numeric;
use crate::pqr::{fit_path, fit_with_components, FitConfig, FpqrFit, Method};
use crate::qr::check_loss;

/// One scored candidate inside a selection step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateScore {
    /// Candidate identity: `[h]` for component counts, a predictor index set
    /// for variable selection (0-based).
    pub candidate: Vec<usize>,
    pub bic: f64,
}

/// One step of a selection procedure.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionStep {
    pub candidates: Vec<CandidateScore>,
    /// Winning candidate of the step, when the step was accepted.
    pub chosen: Option<Vec<usize>>,
    /// Exp-scale improvement ratio against the incumbent, where the
    /// acceptance rule applies.
    pub ratio: Option<f64>,
}

/// Search record: every candidate tried, its BIC, and what was chosen.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SelectionTrace {
    pub steps: Vec<SelectionStep>,
}

impl SelectionTrace {
    pub fn n_evaluated(&self) -> usize {
        self.steps.iter().map(|s| s.candidates.len()).sum()
    }
}

enum SelectionLoss {
    Check(f64),
    Squared,
}

impl SelectionLoss {
    fn for_method(method: Method, tau: f64) -> Self {
        match method {
            Method::Fpqr => SelectionLoss::Check(tau),
            Method::Fpls => SelectionLoss::Squared,
        }
    }

    fn apply(&self, residual: f64) -> f64 {
        match self {
            SelectionLoss::Check(tau) => check_loss(residual, *tau),
            SelectionLoss::Squared => residual * residual,
        }
    }
}

/// BIC core: log of the L2 norm of the pointwise-summed residual loss curve,
/// plus the given complexity penalty. A perfect fit yields `-inf`.
fn bic_from_curve_residuals(
    residuals: &DMatrix<f64>,
    grid: &Grid,
    loss: &SelectionLoss,
    penalty: f64,
) -> f64 {
    let summed: Vec<f64> = (0..residuals.ncols())
        .map(|l| (0..residuals.nrows()).map(|i| loss.apply(residuals[(i, l)])).sum())
        .collect();
    let squared: Vec<f64> = summed.iter().map(|g| g * g).collect();
    let norm = numeric::trapezoid(grid.points(), &squared).sqrt();
    if norm == 0.0 {
        return f64::NEG_INFINITY;
    }
    norm.ln() + penalty
}

/// Check-loss BIC of given residual curves with an explicit penalty term.
pub fn bic_value(residuals: &DMatrix<f64>, grid: &Grid, tau: f64, penalty: f64) -> f64 {
    bic_from_curve_residuals(residuals, grid, &SelectionLoss::Check(tau), penalty)
}

fn residual_curves(
    fit: &FpqrFit,
    y: &FunctionalSample,
    xs: &[FunctionalSample],
) -> Result<DMatrix<f64>> {
    let predicted = fit.predict(xs, y.grid().points())?;
    Ok(y.values() - predicted)
}

fn bic_of_fit(
    fit: &FpqrFit,
    y: &FunctionalSample,
    xs: &[FunctionalSample],
    loss: &SelectionLoss,
    penalty: f64,
) -> Result<f64> {
    let resid = residual_curves(fit, y, xs)?;
    Ok(bic_from_curve_residuals(&resid, y.grid(), loss, penalty))
}

/// BIC of an `h`-component quantile fit: `ln ||sum_i rho_tau(resid_i)|| + h ln n`.
pub fn bic_components(
    y: &FunctionalSample,
    xs: &[FunctionalSample],
    tau: f64,
    h: usize,
    config: &FitConfig,
) -> Result<f64> {
    if h < 1 {
        return Err(Error::InvalidParameter("h must be at least 1".into()));
    }
    let fit = fit_with_components(y, xs, tau, config, h, Method::Fpqr)?;
    let n = y.n_curves() as f64;
    bic_of_fit(&fit, y, xs, &SelectionLoss::Check(tau), h as f64 * n.ln())
}

/// Choose the number of components by BIC over `h = 1..=h_max`; ties break
/// toward the smaller `h`.
pub fn select_n_components(
    y: &FunctionalSample,
    xs: &[FunctionalSample],
    tau: f64,
    h_max: usize,
    config: &FitConfig,
) -> Result<(usize, SelectionTrace)> {
    let (h, trace, _) = select_components_impl(y, xs, tau, h_max, config, Method::Fpqr)?;
    Ok((h, trace))
}

pub(crate) fn select_components_impl(
    y: &FunctionalSample,
    xs: &[FunctionalSample],
    tau: f64,
    h_max: usize,
    config: &FitConfig,
    method: Method,
) -> Result<(usize, SelectionTrace, FpqrFit)> {
    if h_max < 1 {
        return Err(Error::InvalidParameter("h_max must be at least 1".into()));
    }
    let loss = SelectionLoss::for_method(method, tau);
    let n = y.n_curves() as f64;
    let fits = fit_path(y, xs, tau, config, h_max, method)?;
    let mut candidates = Vec::with_capacity(fits.len());
    let mut best: Option<(usize, f64)> = None;
    for fit in &fits {
        let h = fit.n_stages();
        let bic = bic_of_fit(fit, y, xs, &loss, h as f64 * n.ln())?;
        candidates.push(CandidateScore {
            candidate: vec![h],
            bic,
        });
        let better = match best {
            None => true,
            Some((_, b)) => bic < b,
        };
        if better {
            best = Some((h, bic));
        }
    }
    let (h_opt, _) = best.expect("at least one candidate fit");
    let trace = SelectionTrace {
        steps: vec![SelectionStep {
            candidates,
            chosen: Some(vec![h_opt]),
            ratio: None,
        }],
    };
    let idx = fits
        .iter()
        .position(|f| f.n_stages() == h_opt)
        .expect("winning fit present");
    let fit = fits.into_iter().nth(idx).expect("winning fit present");
    Ok((h_opt, trace, fit))
}

/// Forward stepwise predictor selection at a single extracted component.
///
/// Starts from the best single-predictor model by BIC, then adds the best
/// remaining predictor while the step improves the criterion by the required
/// margin (`BIC_new < BIC_current + ln(ratio_threshold)`, the log-scale form
/// of "improves the exp-scale criterion by at least 10%" at the default
/// threshold 0.9). Returns 0-based indices in selection order.
pub fn forward_select(
    y: &FunctionalSample,
    xs: &[FunctionalSample],
    tau: f64,
    ratio_threshold: f64,
    config: &FitConfig,
) -> Result<(Vec<usize>, SelectionTrace)> {
    forward_select_impl(y, xs, tau, ratio_threshold, config, Method::Fpqr)
}

pub(crate) fn forward_select_impl(
    y: &FunctionalSample,
    xs: &[FunctionalSample],
    tau: f64,
    ratio_threshold: f64,
    config: &FitConfig,
    method: Method,
) -> Result<(Vec<usize>, SelectionTrace)> {
    if xs.is_empty() {
        return Err(Error::InvalidParameter("no predictors to select from".into()));
    }
    if !(ratio_threshold > 0.0 && ratio_threshold <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "ratio threshold {ratio_threshold} outside (0, 1]"
        )));
    }
    let loss = SelectionLoss::for_method(method, tau);
    let n = y.n_curves() as f64;
    let penalty_unit = n.ln() / (2.0 * n);
    let margin = ratio_threshold.ln();

    // Selection runs with a single component; basis specs follow the subset.
    let subset_config = |set: &[usize]| -> FitConfig {
        let x_bases = match config.x_bases.len() {
            0 | 1 => config.x_bases.clone(),
            _ => set.iter().map(|&m| config.x_bases[m]).collect(),
        };
        FitConfig {
            y_basis: config.y_basis,
            x_bases,
            components: crate::pqr::Components::Fixed(1),
        }
    };
    let score_set = |set: &[usize]| -> Result<f64> {
        let subset: Vec<FunctionalSample> = set.iter().map(|&m| xs[m].clone()).collect();
        let cfg = subset_config(set);
        let fit = fit_with_components(y, &subset, tau, &cfg, 1, method)?;
        bic_of_fit(&fit, y, &subset, &loss, set.len() as f64 * penalty_unit)
    };

    let mut trace = SelectionTrace::default();
    let mut selected: Vec<usize> = Vec::new();
    let mut current_bic = f64::INFINITY;

    loop {
        let mut candidates = Vec::new();
        let mut best: Option<(usize, f64)> = None;
        for m in 0..xs.len() {
            if selected.contains(&m) {
                continue;
            }
            let mut set = selected.clone();
            set.push(m);
            let bic = score_set(&set)?;
            candidates.push(CandidateScore {
                candidate: set,
                bic,
            });
            let better = match best {
                None => true,
                Some((_, b)) => bic < b,
            };
            if better {
                best = Some((m, bic));
            }
        }
        let Some((m_best, bic_best)) = best else {
            break;
        };
        if selected.is_empty() {
            selected.push(m_best);
            current_bic = bic_best;
            trace.steps.push(SelectionStep {
                candidates,
                chosen: Some(vec![m_best]),
                ratio: None,
            });
        } else {
            let ratio = (bic_best - current_bic).exp();
            let accept = bic_best < current_bic + margin;
            trace.steps.push(SelectionStep {
                candidates,
                chosen: accept.then(|| {
                    let mut s = selected.clone();
                    s.push(m_best);
                    s
                }),
                ratio: Some(ratio),
            });
            if !accept {
                break;
            }
            selected.push(m_best);
            current_bic = bic_best;
        }
        if selected.len() == xs.len() {
            break;
        }
    }
    Ok((selected, trace))
}
