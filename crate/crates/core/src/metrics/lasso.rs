//! L1-regularized least squares by cyclic coordinate descent.
//!
//! Minimizes `(1/2N)‖y − Xβ − β₀‖² + α‖β‖₁` on internally standardized
//! features (zero mean, unit population variance). Coefficients are reported
//! in those standardized units.

use crate::error::{Error, Result};
use crate::tensor::Tensor2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LassoOptions {
    pub alpha: f64,
    pub max_sweeps: usize,
    /// Stop once no coefficient moves by this much within a sweep.
    pub tol: f64,
    pub track_objective: bool,
}

impl Default for LassoOptions {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            max_sweeps: 10_000,
            tol: 1e-6,
            track_objective: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoFit {
    /// Coefficients on standardized features.
    pub coef: Vec<f64>,
    /// Intercept on raw features.
    pub intercept: f64,
    pub feature_mean: Vec<f64>,
    pub feature_scale: Vec<f64>,
    pub sweeps: usize,
    pub converged: bool,
    /// Objective before the first sweep and after each sweep.
    pub objective_trace: Vec<f64>,
}

impl LassoFit {
    /// Coefficients on the raw feature scale.
    pub fn raw_coef(&self) -> Vec<f64> {
        self.coef
            .iter()
            .zip(&self.feature_scale)
            .map(|(b, s)| b / s)
            .collect()
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.intercept + x.iter().zip(self.raw_coef()).map(|(a, b)| a * b).sum::<f64>()
    }
}

#[inline]
pub fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

pub fn lasso_fit(x: &Tensor2, y: &[f64], opts: &LassoOptions) -> Result<LassoFit> {
    let (n, d) = x.shape();
    if n < 2 {
        return Err(Error::Data(format!("lasso needs at least 2 samples, got {n}")));
    }
    if y.len() != n {
        return Err(Error::Dimension(format!("{} targets for {n} samples", y.len())));
    }
    if !x.is_finite() || y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("lasso inputs contain non-finite values".into()));
    }
    if !(opts.alpha >= 0.0) {
        return Err(Error::Config(format!("lasso α must be >= 0, got {}", opts.alpha)));
    }
    let nf = n as f64;
    let y_mean = y.iter().sum::<f64>() / nf;

    // standardized columns, column-major
    let mut cols = vec![0.0; n * d];
    let mut mean = vec![0.0; d];
    let mut scale = vec![1.0; d];
    let mut constant = vec![false; d];
    for j in 0..d {
        let m = (0..n).map(|r| x.get(r, j)).sum::<f64>() / nf;
        let var = (0..n).map(|r| (x.get(r, j) - m).powi(2)).sum::<f64>() / nf;
        mean[j] = m;
        if var > 0.0 {
            scale[j] = var.sqrt();
        } else {
            constant[j] = true;
        }
        for r in 0..n {
            cols[j * n + r] = if constant[j] { 0.0 } else { (x.get(r, j) - m) / scale[j] };
        }
    }

    let mut beta = vec![0.0; d];
    let mut resid: Vec<f64> = y.iter().map(|v| v - y_mean).collect();
    let objective = |resid: &[f64], beta: &[f64]| {
        resid.iter().map(|r| r * r).sum::<f64>() / (2.0 * nf) + opts.alpha * beta.iter().map(|b| b.abs()).sum::<f64>()
    };
    let mut trace = Vec::new();
    if opts.track_objective {
        trace.push(objective(&resid, &beta));
    }
    let mut sweeps = 0;
    let mut converged = false;
    while sweeps < opts.max_sweeps {
        sweeps += 1;
        let mut max_change: f64 = 0.0;
        for j in 0..d {
            if constant[j] {
                continue;
            }
            let z = &cols[j * n..(j + 1) * n];
            let old = beta[j];
            let rho = z.iter().zip(&resid).map(|(a, b)| a * b).sum::<f64>() / nf + old;
            let new = soft_threshold(rho, opts.alpha);
            let delta = new - old;
            if delta != 0.0 {
                resid.iter_mut().zip(z).for_each(|(r, &zi)| *r -= delta * zi);
                beta[j] = new;
            }
            max_change = max_change.max(delta.abs());
        }
        if opts.track_objective {
            trace.push(objective(&resid, &beta));
        }
        if max_change < opts.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("lasso stopped after {sweeps} sweeps without reaching tolerance {}", opts.tol);
    }
    let intercept = y_mean - beta.iter().zip(&mean).zip(&scale).map(|((b, m), s)| b * m / s).sum::<f64>();
    Ok(LassoFit {
        coef: beta,
        intercept,
        feature_mean: mean,
        feature_scale: scale,
        sweeps,
        converged,
        objective_trace: trace,
    })
}
