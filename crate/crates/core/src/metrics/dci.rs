//! Disentanglement, completeness and informativeness from Lasso importance.
//!
//! With importance `R` (`K x D`, entries `|β_kd|`):
//! `D = Σ_d ρ_d (1 − H_K(p_·d))` with `p_kd = R_kd / Σ_k R_kd` and
//! `ρ_d = Σ_k R_kd / Σ R`; `C = mean_k (1 − H_D(q_k·))` with
//! `q_kd = R_kd / Σ_d R_kd`. Entropies use log base `K` and `D`. All-zero
//! rows and columns contribute nothing and are left out of the averages.

use serde::Serialize;

use crate::dataset::LabeledLatentDataset;
use crate::error::{Error, Result};
use crate::metrics::lasso::{lasso_fit, LassoOptions};
use crate::par::{self, Execution};
use crate::space::LatentSpace;

#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceMatrix {
    attributes: usize,
    dims: usize,
    data: Vec<f64>,
}

impl ImportanceMatrix {
    pub fn new(attributes: usize, dims: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != attributes * dims || attributes == 0 || dims == 0 {
            return Err(Error::Dimension(format!(
                "importance matrix {attributes}x{dims} with {} entries",
                data.len()
            )));
        }
        if data.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Data("importance entries must be finite and non-negative".into()));
        }
        Ok(Self { attributes, dims, data })
    }

    pub fn attributes(&self) -> usize {
        self.attributes
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn get(&self, k: usize, d: usize) -> f64 {
        self.data[k * self.dims + d]
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.data[k * self.dims..(k + 1) * self.dims]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(self.attributes, self.dims, self.data.iter().map(|v| v * c).collect())
    }
}

/// Normalized entropy of a non-negative weight vector, in `[0, 1]`.
fn normalized_entropy(weights: impl Iterator<Item = f64> + Clone, base: usize) -> f64 {
    if base <= 1 {
        return 0.0;
    }
    let total: f64 = weights.clone().sum();
    let h: f64 = weights
        .filter(|&w| w > 0.0)
        .map(|w| {
            let p = w / total;
            -p * p.ln()
        })
        .sum();
    h / (base as f64).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DciScores {
    pub disentanglement: f64,
    pub completeness: f64,
}

pub fn dci_scores(r: &ImportanceMatrix) -> DciScores {
    let (k, d) = (r.attributes, r.dims);
    let total: f64 = r.data.iter().sum();
    if total == 0.0 {
        return DciScores {
            disentanglement: 0.0,
            completeness: 0.0,
        };
    }
    let mut disentanglement = 0.0;
    for j in 0..d {
        let col = (0..k).map(|i| r.get(i, j));
        let mass: f64 = col.clone().sum();
        if mass > 0.0 {
            disentanglement += mass / total * (1.0 - normalized_entropy(col, k));
        }
    }
    let mut completeness = 0.0;
    let mut rows = 0usize;
    for i in 0..k {
        let row = r.row(i);
        if row.iter().sum::<f64>() > 0.0 {
            completeness += 1.0 - normalized_entropy(row.iter().copied(), d);
            rows += 1;
        }
    }
    DciScores {
        disentanglement,
        completeness: completeness / rows as f64,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DciConfig {
    pub n_samples: usize,
    pub alpha: f64,
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for DciConfig {
    fn default() -> Self {
        Self {
            n_samples: 2000,
            alpha: 0.05,
            train_fraction: 0.8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DciReport {
    pub disentanglement: f64,
    pub completeness: f64,
    /// Mean held-out classification error; lower is better.
    pub informativeness: f64,
    pub degenerate: bool,
}

/// Fits one Lasso per attribute (targets are the 0/1 labels) on codes of
/// `space`, then scores the importance matrix and the held-out error of
/// the predictions thresholded at 0.5.
pub fn dci(
    dataset: &LabeledLatentDataset,
    space: LatentSpace<'_>,
    cfg: &DciConfig,
    exec: Execution,
) -> Result<(DciReport, ImportanceMatrix)> {
    if cfg.n_samples > dataset.len() {
        return Err(Error::Data(format!(
            "DCI wants {} samples, dataset has {}",
            cfg.n_samples,
            dataset.len()
        )));
    }
    let (mut picked, _) = dataset.split_indices(1.0, cfg.seed);
    picked.truncate(cfg.n_samples);
    let subset = dataset.subset(&picked);
    let (train, held) = subset.split_indices(cfg.train_fraction, cfg.seed.wrapping_add(1));
    if train.len() < 2 || held.is_empty() {
        return Err(Error::Data(format!("DCI split of {} samples is too small", cfg.n_samples)));
    }
    let codes = space.embed(subset.codes(), exec)?;
    let (x_train, x_held) = (codes.select_rows(&train), codes.select_rows(&held));
    let k = dataset.num_attributes();
    let opts = LassoOptions {
        alpha: cfg.alpha,
        ..Default::default()
    };
    let fits = par::map_indices(k, exec, |a| {
        let y: Vec<f64> = train.iter().map(|&r| f64::from(subset.label(r, a))).collect();
        let fit = lasso_fit(&x_train, &y, &opts)?;
        let wrong = held
            .iter()
            .enumerate()
            .filter(|&(i, &r)| (fit.predict(x_held.row(i)) >= 0.5) != (subset.label(r, a) == 1))
            .count();
        Ok((fit.coef.iter().map(|b| b.abs()).collect::<Vec<_>>(), wrong as f64 / held.len() as f64))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let importance = ImportanceMatrix::new(k, dataset.dim(), fits.iter().flat_map(|(r, _)| r.clone()).collect())?;
    let informativeness = fits.iter().map(|(_, e)| e).sum::<f64>() / k as f64;
    let degenerate = importance.is_zero();
    if degenerate {
        log::warn!("DCI importance matrix is identically zero; reporting D=C=0");
    }
    let scores = dci_scores(&importance);
    Ok((
        DciReport {
            disentanglement: scores.disentanglement,
            completeness: scores.completeness,
            informativeness,
            degenerate,
        },
        importance,
    ))
}
