//! Adam optimization of the flow against the combined supervision loss.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::classifiers::ClassifierBank;
use crate::dataset::LabeledLatentDataset;
use crate::error::{Error, Result};
use crate::flow::FlowModel;
use crate::losses::{self, BankTensors, EditSample, LossBreakdown, LossWeights};
use crate::tensor::Tensor2;

/// Magnitude range for the edit step sampled per batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EditRange {
    /// `multiple ×` the median absolute signed distance of the batch.
    Adaptive { multiple: f64 },
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub lambda_lm: f64,
    pub lambda_ap: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub edit_range: EditRange,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_lm: 0.1,
            lambda_ap: 0.1,
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 8,
            epochs: 5,
            edit_range: EditRange::Adaptive { multiple: 3.0 },
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn weights(&self) -> LossWeights {
        LossWeights {
            lambda_lm: self.lambda_lm,
            lambda_ap: self.lambda_ap,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lambda_lm >= 0.0) || !(self.lambda_ap >= 0.0) {
            return bad(format!("loss weights must be >= 0 (λ_lm={}, λ_ap={})", self.lambda_lm, self.lambda_ap));
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0 && self.beta2 > 0.0 && self.beta2 < 1.0) {
            return bad(format!("Adam betas must lie in (0, 1), got {} and {}", self.beta1, self.beta2));
        }
        if !(self.lr > 0.0) || !(self.eps > 0.0) {
            return bad("learning rate and ε must be positive".into());
        }
        match self.edit_range {
            EditRange::Adaptive { multiple } if !(multiple >= 0.0) => bad("edit range multiple must be >= 0".into()),
            EditRange::Fixed(r) if !(r >= 0.0) || !r.is_finite() => bad("edit range must be finite and >= 0".into()),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, cfg: &TrainConfig) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Dimension(format!(
            "adam: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BatchRecord {
    pub epoch: usize,
    pub batch: usize,
    pub l_a: f64,
    pub l_lm: f64,
    pub l_ap: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub batches: Vec<BatchRecord>,
    /// Mean total loss of each epoch.
    pub epoch_means: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainedProxy {
    pub model: FlowModel,
    pub log: TrainLog,
}

fn median_abs(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.iter().map(|x| x.abs()).collect();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Draws the edit attribute and step for one batch.
fn sample_edit(
    rng: &mut ChaCha8Rng,
    range: EditRange,
    bank: &BankTensors,
    model: &FlowModel,
    batch: &Tensor2,
) -> Result<EditSample> {
    let attribute = rng.random_range(0..bank.attributes());
    let r = match range {
        EditRange::Fixed(r) => r,
        EditRange::Adaptive { multiple } => {
            let (proxy, _) = model.forward(batch)?;
            multiple * median_abs(bank.signed_distances(&proxy)?.data())
        }
    };
    let alpha = if r > 0.0 { rng.random_range(-r..=r) } else { 0.0 };
    Ok(EditSample { attribute, alpha })
}

fn check_inputs(dataset: &LabeledLatentDataset, bank: &ClassifierBank, model: &FlowModel) -> Result<()> {
    if !bank.is_frozen() {
        return Err(Error::Contract("proxy training requires a frozen classifier bank".into()));
    }
    if dataset.is_empty() {
        return Err(Error::Data("training dataset is empty".into()));
    }
    if dataset.dim() != model.dim() || bank.dim() != model.dim() {
        return Err(Error::Dimension(format!(
            "dataset D={}, bank D={}, flow D={}",
            dataset.dim(),
            bank.dim(),
            model.dim()
        )));
    }
    if dataset.num_attributes() != bank.len() {
        return Err(Error::Dimension(format!(
            "dataset has {} attributes, bank has {}",
            dataset.num_attributes(),
            bank.len()
        )));
    }
    Ok(())
}

/// Trains only the flow; the bank is borrowed immutably throughout.
pub fn train_proxy(
    dataset: &LabeledLatentDataset,
    bank: &ClassifierBank,
    model: FlowModel,
    cfg: &TrainConfig,
) -> Result<TrainedProxy> {
    cfg.validate()?;
    check_inputs(dataset, bank, &model)?;
    let bt = BankTensors::new(bank)?;
    let labels = losses::label_matrix(dataset.labels(), bank.len())?;
    let mut model = model;
    let mut params = model.flat_params();
    let mut state = AdamState::new(params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut log = TrainLog::default();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut count = 0usize;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch = dataset.codes().select_rows(idx);
            let batch_labels = labels.select_rows(idx);
            let edit = sample_edit(&mut rng, cfg.edit_range, &bt, &model, &batch)?;
            let (terms, grads) = losses::total_loss_with_gradient(&bt, &model, &batch, &batch_labels, edit, cfg.weights())
                .map_err(|e| Error::Numeric(format!("training aborted at epoch {epoch}, batch {b}: {e}")))?;
            if !terms.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::Numeric(format!(
                    "training aborted at epoch {epoch}, batch {b} (step {}): non-finite loss L_a={} L_lm={} L_ap={} total={}",
                    state.step(),
                    terms.attribute,
                    terms.margin,
                    terms.preservation,
                    terms.total
                )));
            }
            adam_step(&mut params, &grads, &mut state, cfg)?;
            model.set_flat_params(&params)?;
            log.batches.push(BatchRecord {
                epoch,
                batch: b,
                l_a: terms.attribute,
                l_lm: terms.margin,
                l_ap: terms.preservation,
                total: terms.total,
            });
            sum += terms.total;
            count += 1;
        }
        let mean = sum / count as f64;
        log::info!("epoch {epoch}: mean total loss {mean:.6}");
        log.epoch_means.push(mean);
    }
    Ok(TrainedProxy { model, log })
}

/// Mean loss terms over the dataset with batches and edits drawn from
/// `seed`, using the current model throughout. Comparable across models.
pub fn evaluate_loss(
    dataset: &LabeledLatentDataset,
    bank: &ClassifierBank,
    model: &FlowModel,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<LossBreakdown> {
    check_inputs(dataset, bank, model)?;
    let bt = BankTensors::new(bank)?;
    let labels = losses::label_matrix(dataset.labels(), bank.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut rng);
    let mut acc = [0.0; 4];
    let mut count = 0usize;
    // edit magnitudes come from the identity geometry so they do not depend on the model
    let reference = FlowModel::init(model.dim(), 1, 1, 0)?;
    for idx in order.chunks(cfg.batch_size.max(1)) {
        let batch = dataset.codes().select_rows(idx);
        let edit = sample_edit(&mut rng, cfg.edit_range, &bt, &reference, &batch)?;
        let t = losses::total_loss(&bt, model, &batch, &labels.select_rows(idx), edit, cfg.weights())?;
        acc[0] += t.attribute;
        acc[1] += t.margin;
        acc[2] += t.preservation;
        acc[3] += t.total;
        count += 1;
    }
    let n = count as f64;
    Ok(LossBreakdown {
        attribute: acc[0] / n,
        margin: acc[1] / n,
        preservation: acc[2] / n,
        total: acc[3] / n,
    })
}
