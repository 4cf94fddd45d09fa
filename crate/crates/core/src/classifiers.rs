//! Linear attribute classifiers.
//!
//! Two kinds live here. The [`ClassifierBank`] holds one affine + sigmoid
//! classifier per attribute, pretrained with BCE on original-space codes and
//! then frozen; it supervises proxy training. [`SvmHyperplane`]s are fitted
//! from scratch in whichever space is being evaluated and supply editing
//! directions.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::sigmoid;
use crate::dataset::LabeledLatentDataset;
use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::tensor::{dot, norm, Tensor2};

/// Per-attribute seed derived from a run seed.
pub(crate) fn attribute_seed(seed: u64, attr: usize) -> u64 {
    seed ^ (attr as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearAttributeClassifier {
    weight: Vec<f64>,
    bias: f64,
}

impl LinearAttributeClassifier {
    pub fn new(weight: Vec<f64>, bias: f64) -> Self {
        Self { weight, bias }
    }

    pub fn weight(&self) -> &[f64] {
        &self.weight
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn dim(&self) -> usize {
        self.weight.len()
    }

    pub fn logit(&self, w: &[f64]) -> f64 {
        dot(&self.weight, w) + self.bias
    }

    pub fn prob(&self, w: &[f64]) -> f64 {
        sigmoid(self.logit(w))
    }

    /// Positive decision; a score of exactly zero counts as positive.
    pub fn decide(&self, w: &[f64]) -> bool {
        self.logit(w) >= 0.0
    }

    pub fn weight_norm(&self) -> f64 {
        norm(&self.weight)
    }

    pub fn unit_normal(&self) -> Result<Vec<f64>> {
        unit(&self.weight)
    }

    pub fn signed_distance(&self, w: &[f64]) -> f64 {
        self.logit(w) / self.weight_norm()
    }
}

pub(crate) fn unit(v: &[f64]) -> Result<Vec<f64>> {
    let n = norm(v);
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::Numeric("hyperplane normal has zero or non-finite length".into()));
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// One classifier per attribute sharing a latent dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierBank {
    names: Vec<String>,
    classifiers: Vec<LinearAttributeClassifier>,
    frozen: bool,
}

impl ClassifierBank {
    pub fn new(names: Vec<String>, classifiers: Vec<LinearAttributeClassifier>, frozen: bool) -> Result<Self> {
        if classifiers.is_empty() {
            return Err(Error::Config("classifier bank needs at least one attribute".into()));
        }
        if names.len() != classifiers.len() {
            return Err(Error::Config(format!(
                "{} names for {} classifiers",
                names.len(),
                classifiers.len()
            )));
        }
        let d = classifiers[0].dim();
        if classifiers.iter().any(|c| c.dim() != d) {
            return Err(Error::Dimension("classifiers disagree on latent dimension".into()));
        }
        Ok(Self {
            names,
            classifiers,
            frozen,
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn classifiers(&self) -> &[LinearAttributeClassifier] {
        &self.classifiers
    }

    pub fn get(&self, attr: usize) -> &LinearAttributeClassifier {
        &self.classifiers[attr]
    }

    pub fn len(&self) -> usize {
        self.classifiers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classifiers.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.classifiers[0].dim()
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(mut self) -> Self {
        self.frozen = true;
        self
    }

    /// `D x K` matrix whose columns are the classifier weights.
    pub fn weight_matrix(&self) -> Tensor2 {
        self.column_matrix(|i| self.classifiers[i].weight.clone())
    }

    /// `D x K` matrix of unit normals.
    pub fn normal_matrix(&self) -> Result<Tensor2> {
        let normals = self
            .classifiers
            .iter()
            .map(LinearAttributeClassifier::unit_normal)
            .collect::<Result<Vec<_>>>()?;
        Ok(self.column_matrix(|i| normals[i].clone()))
    }

    fn column_matrix(&self, col: impl Fn(usize) -> Vec<f64>) -> Tensor2 {
        let (d, k) = (self.dim(), self.len());
        let mut m = Tensor2::zeros(d, k);
        for j in 0..k {
            for (i, v) in col(j).into_iter().enumerate() {
                m.set(i, j, v);
            }
        }
        m
    }

    /// `1 x K` row of biases.
    pub fn bias_row(&self) -> Tensor2 {
        Tensor2::row_vector(&self.classifiers.iter().map(|c| c.bias).collect::<Vec<_>>())
    }

    /// `1 x K` row of `b_i / ‖a_i‖`, the offset of the signed distance.
    pub fn distance_offset_row(&self) -> Tensor2 {
        Tensor2::row_vector(
            &self
                .classifiers
                .iter()
                .map(|c| c.bias / c.weight_norm())
                .collect::<Vec<_>>(),
        )
    }

    /// Decisions of every classifier on every row, row-major `N x K`.
    pub fn decisions(&self, codes: &Tensor2) -> Vec<bool> {
        (0..codes.rows())
            .flat_map(|r| self.classifiers.iter().map(move |c| c.decide(codes.row(r))))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            lr: 1e-2,
            batch_size: 32,
            seed: 0,
        }
    }
}

fn pretrain_one(codes: &Tensor2, labels: &[u8], cfg: &PretrainConfig, seed: u64) -> LinearAttributeClassifier {
    let d = codes.cols();
    let mut weight = vec![0.0; d];
    let mut bias = 0.0;
    let mut order: Vec<usize> = (0..codes.rows()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut grad = vec![0.0; d];
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size.max(1)) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let mut grad_b = 0.0;
            for &r in batch {
                let x = codes.row(r);
                // d BCE / d logit = p - y
                let err = sigmoid(dot(&weight, x) + bias) - f64::from(labels[r]);
                grad.iter_mut().zip(x).for_each(|(g, &xi)| *g += err * xi);
                grad_b += err;
            }
            let step = cfg.lr / batch.len() as f64;
            weight.iter_mut().zip(&grad).for_each(|(w, g)| *w -= step * g);
            bias -= step * grad_b;
        }
    }
    LinearAttributeClassifier { weight, bias }
}

/// Fits one BCE classifier per attribute by mini-batch gradient descent and
/// returns the frozen bank.
pub fn pretrain_bank(dataset: &LabeledLatentDataset, cfg: &PretrainConfig, exec: Execution) -> Result<ClassifierBank> {
    if dataset.is_empty() {
        return Err(Error::Data("cannot pretrain classifiers on an empty dataset".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    let classifiers = par::map_indices(dataset.num_attributes(), exec, |k| {
        let labels = dataset.attribute_labels(k);
        pretrain_one(dataset.codes(), &labels, cfg, attribute_seed(cfg.seed, k))
    });
    if let Some(k) = classifiers.iter().position(|c| c.weight_norm() == 0.0) {
        return Err(Error::Data(format!(
            "attribute '{}' produced a zero classifier weight",
            dataset.names()[k]
        )));
    }
    ClassifierBank::new(dataset.names().to_vec(), classifiers, true)
}

pub fn bank_accuracy(bank: &ClassifierBank, attr: usize, codes: &Tensor2, labels: &[u8]) -> f64 {
    let c = bank.get(attr);
    let hits = (0..codes.rows())
        .filter(|&r| c.decide(codes.row(r)) == (labels[r] == 1))
        .count();
    hits as f64 / codes.rows() as f64
}

/// Linear SVM decision function `weight · w + bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct SvmHyperplane {
    pub attribute: usize,
    pub weight: Vec<f64>,
    pub bias: f64,
}

impl SvmHyperplane {
    pub fn score(&self, w: &[f64]) -> f64 {
        dot(&self.weight, w) + self.bias
    }

    /// Positive decision; ties count as positive.
    pub fn decide(&self, w: &[f64]) -> bool {
        self.score(w) >= 0.0
    }

    pub fn unit_normal(&self) -> Result<Vec<f64>> {
        unit(&self.weight)
    }

    pub fn signed_distance(&self, w: &[f64]) -> f64 {
        self.score(w) / norm(&self.weight)
    }

    /// `λ/2 ‖v‖² + mean hinge(1 − ỹ(v·w + b))`.
    pub fn objective(&self, codes: &Tensor2, labels: &[u8], lambda: f64) -> f64 {
        let hinge: f64 = (0..codes.rows())
            .map(|r| {
                let y = if labels[r] == 1 { 1.0 } else { -1.0 };
                (1.0 - y * self.score(codes.row(r))).max(0.0)
            })
            .sum();
        0.5 * lambda * dot(&self.weight, &self.weight) + hinge / codes.rows() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvmConfig {
    pub lambda: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-3,
            epochs: 20,
            seed: 0,
        }
    }
}

/// Pegasos stochastic subgradient descent with averaging over the second
/// half of the iterates.
///
/// Features are centered on the training mean. The bias is carried as an
/// extra constant feature during descent; the returned bias is then refit
/// exactly for the averaged weight, since the objective leaves it
/// unregularized.
pub fn train_svm(codes: &Tensor2, labels: &[u8], attribute: usize, cfg: &SvmConfig) -> Result<SvmHyperplane> {
    let n = codes.rows();
    if labels.len() != n {
        return Err(Error::Dimension(format!("{} labels for {n} codes", labels.len())));
    }
    let positives = labels.iter().filter(|&&l| l == 1).count();
    if positives == 0 || positives == n {
        return Err(Error::Data(format!(
            "attribute {attribute}: SVM training split contains a single class"
        )));
    }
    if !(cfg.lambda > 0.0) || cfg.epochs == 0 {
        return Err(Error::Config("SVM needs λ > 0 and at least one epoch".into()));
    }
    let d = codes.cols();
    let mut mean = vec![0.0; d];
    for r in 0..n {
        mean.iter_mut().zip(codes.row(r)).for_each(|(m, &x)| *m += x);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    // augmented weight: [v; b]
    let mut w = vec![0.0; d + 1];
    let mut avg = vec![0.0; d + 1];
    let mut averaged = 0usize;
    let total = cfg.epochs * n;
    let avg_from = total / 2;
    let radius = 1.0 / cfg.lambda.sqrt();
    let mut x = vec![0.0; d + 1];
    x[d] = 1.0;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut t = 0usize;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for &r in &order {
            t += 1;
            codes
                .row(r)
                .iter()
                .zip(&mean)
                .zip(x.iter_mut())
                .for_each(|((&c, &m), xi)| *xi = c - m);
            let y = if labels[r] == 1 { 1.0 } else { -1.0 };
            let eta = 1.0 / (cfg.lambda * t as f64);
            let margin = y * dot(&w, &x);
            let shrink = 1.0 - eta * cfg.lambda;
            w.iter_mut().for_each(|v| *v *= shrink);
            if margin < 1.0 {
                w.iter_mut().zip(&x).for_each(|(v, &xi)| *v += eta * y * xi);
            }
            let len = norm(&w);
            if len > radius {
                let f = radius / len;
                w.iter_mut().for_each(|v| *v *= f);
            }
            if t > avg_from {
                averaged += 1;
                let f = 1.0 / averaged as f64;
                avg.iter_mut().zip(&w).for_each(|(a, &v)| *a += (v - *a) * f);
            }
        }
    }
    let weight = avg[..d].to_vec();
    if norm(&weight) == 0.0 {
        return Err(Error::Data(format!("attribute {attribute}: SVM weight collapsed to zero")));
    }
    let scores: Vec<f64> = (0..n).map(|r| dot(&weight, codes.row(r))).collect();
    let bias = hinge_optimal_bias(&scores, labels);
    Ok(SvmHyperplane {
        attribute,
        weight,
        bias,
    })
}

/// Minimizer of `Σ max(0, 1 − ỹ(s + b))` over `b`; the midpoint when the
/// minimizers form an interval.
///
/// The sum is convex and piecewise linear. A positive contributes slope −1
/// while `b < 1 − s`, a negative slope +1 while `b > −1 − s`.
fn hinge_optimal_bias(scores: &[f64], labels: &[u8]) -> f64 {
    let mut pos: Vec<f64> = Vec::new();
    let mut neg: Vec<f64> = Vec::new();
    for (&s, &l) in scores.iter().zip(labels) {
        if l == 1 {
            pos.push(1.0 - s);
        } else {
            neg.push(-1.0 - s);
        }
    }
    pos.sort_by(f64::total_cmp);
    neg.sort_by(f64::total_cmp);
    let mut knots: Vec<f64> = pos.iter().chain(&neg).copied().collect();
    knots.sort_by(f64::total_cmp);
    knots.dedup();
    // slope just to the right of b
    let slope = |b: f64| {
        let pos_active = pos.len() - pos.partition_point(|&t| t <= b);
        let neg_active = neg.partition_point(|&t| t <= b);
        neg_active as i64 - pos_active as i64
    };
    let k = knots.partition_point(|&t| slope(t) < 0);
    match knots.get(k) {
        Some(&t) if slope(t) == 0 => match knots.get(k + 1) {
            Some(&next) => 0.5 * (t + next),
            None => t,
        },
        Some(&t) => t,
        None => *knots.last().expect("both classes present"),
    }
}

/// Trains one SVM per attribute on the full code set.
pub fn train_svms(dataset: &LabeledLatentDataset, cfg: &SvmConfig, exec: Execution) -> Result<Vec<SvmHyperplane>> {
    par::map_indices(dataset.num_attributes(), exec, |k| {
        let labels = dataset.attribute_labels(k);
        let cfg = SvmConfig {
            seed: attribute_seed(cfg.seed, k),
            ..*cfg
        };
        train_svm(dataset.codes(), &labels, k, &cfg)
    })
    .into_iter()
    .collect()
}

/// Fraction of rows whose sign prediction matches the label.
pub fn svm_accuracy(h: &SvmHyperplane, codes: &Tensor2, labels: &[u8]) -> Result<f64> {
    if codes.rows() == 0 {
        return Err(Error::Data("accuracy of an empty split".into()));
    }
    let hits = (0..codes.rows())
        .filter(|&r| h.decide(codes.row(r)) == (labels[r] == 1))
        .count();
    Ok(hits as f64 / codes.rows() as f64)
}
