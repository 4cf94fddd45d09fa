//! Supervision losses for the proxy map.
//!
//! All three terms are written against [`Graph`] so the same code computes
//! plain values ([`Eager`]) and recorded gradients ([`Tape`]). The classifier
//! bank enters only as constants; gradients reach flow parameters alone.

use crate::autodiff::{Eager, Graph, Tape};
use crate::classifiers::ClassifierBank;
use crate::error::{Error, Result};
use crate::flow::{self, BoundFlow, FlowModel};
use crate::tensor::Tensor2;

/// Constant matrices derived from a frozen bank.
#[derive(Debug, Clone)]
pub struct BankTensors {
    /// `D x K` classifier weights.
    pub weights: Tensor2,
    /// `1 x K` biases.
    pub bias: Tensor2,
    /// `D x K` unit normals.
    pub normals: Tensor2,
    /// `1 x K` offsets `b_i / ‖a_i‖`.
    pub offsets: Tensor2,
}

impl BankTensors {
    pub fn new(bank: &ClassifierBank) -> Result<Self> {
        Ok(Self {
            weights: bank.weight_matrix(),
            bias: bank.bias_row(),
            normals: bank.normal_matrix()?,
            offsets: bank.distance_offset_row(),
        })
    }

    pub fn attributes(&self) -> usize {
        self.weights.cols()
    }

    pub fn dim(&self) -> usize {
        self.weights.rows()
    }

    /// Unit normal of attribute `j` as a `1 x D` row.
    pub fn normal_row(&self, j: usize) -> Tensor2 {
        Tensor2::row_vector(&self.normals.column(j))
    }

    /// Signed distances `N x K` of `codes` to every hyperplane.
    pub fn signed_distances(&self, codes: &Tensor2) -> Result<Tensor2> {
        let mut g = Eager;
        let s = g.matmul(codes, &self.normals)?;
        g.add(&s, &self.offsets)
    }

    /// Sigmoid outputs `N x K`.
    pub fn probabilities(&self, codes: &Tensor2) -> Result<Tensor2> {
        let mut g = Eager;
        let z = g.matmul(codes, &self.weights)?;
        let z = g.add(&z, &self.bias)?;
        g.sigmoid(&z)
    }
}

/// Labels as an `N x K` real matrix of zeros and ones.
pub fn label_matrix(labels: &[u8], attributes: usize) -> Result<Tensor2> {
    if attributes == 0 || !labels.len().is_multiple_of(attributes) {
        return Err(Error::Dimension(format!("{} labels for {attributes} attributes", labels.len())));
    }
    Tensor2::new(
        labels.len() / attributes,
        attributes,
        labels.iter().map(|&l| f64::from(l)).collect(),
    )
}

fn check_batch(proxy_rows: usize, labels: &Tensor2, bank: &BankTensors) -> Result<()> {
    if labels.shape() != (proxy_rows, bank.attributes()) {
        return Err(Error::Dimension(format!(
            "labels {:?} for a batch of {proxy_rows} rows and {} attributes",
            labels.shape(),
            bank.attributes()
        )));
    }
    if proxy_rows == 0 {
        return Err(Error::Data("empty batch".into()));
    }
    Ok(())
}

/// Mean over the batch of `Σ_i BCE(C_i(T(w)), y_i)`.
pub fn attribute_loss_on<G: Graph>(g: &mut G, proxy: &G::Node, bank: &BankTensors, labels: &Tensor2) -> Result<G::Node> {
    let n = g.value(proxy).rows();
    check_batch(n, labels, bank)?;
    let w = g.constant(bank.weights.clone());
    let b = g.constant(bank.bias.clone());
    let z = g.matmul(proxy, &w)?;
    let z = g.add(&z, &b)?;
    let log_pos = g.log_sigmoid(&z)?;
    // 1 - σ(z) = σ(-z)
    let neg_z = g.scale(&z, -1.0)?;
    let log_neg = g.log_sigmoid(&neg_z)?;
    let y = g.constant(labels.clone());
    let not_y = g.constant(labels.map(|v| 1.0 - v));
    let a = g.hadamard(&y, &log_pos)?;
    let c = g.hadamard(&not_y, &log_neg)?;
    let ll = g.add(&a, &c)?;
    let total = g.sum_all(&ll)?;
    g.scale(&total, -1.0 / n as f64)
}

/// Mean over the batch of `Σ_i (1 − 2 m_i)|s_i|` where `s_i` is the signed
/// distance of `T(w)` to hyperplane `i` and `m_i` marks a correct decision.
pub fn margin_loss_on<G: Graph>(g: &mut G, proxy: &G::Node, bank: &BankTensors, labels: &Tensor2) -> Result<G::Node> {
    let n = g.value(proxy).rows();
    check_batch(n, labels, bank)?;
    let normals = g.constant(bank.normals.clone());
    let offsets = g.constant(bank.offsets.clone());
    let s = g.matmul(proxy, &normals)?;
    let s = g.add(&s, &offsets)?;
    let mut coef = g.value(&s).clone();
    for (c, &y) in coef.data_mut().iter_mut().zip(labels.data()) {
        let correct = (*c >= 0.0) == (y == 1.0);
        *c = if correct { -1.0 } else { 1.0 };
    }
    let coef = g.constant(coef);
    let mag = g.abs(&s)?;
    let weighted = g.hadamard(&coef, &mag)?;
    let total = g.sum_all(&weighted)?;
    g.scale(&total, 1.0 / n as f64)
}

/// Mean over the batch of `Σ_{i≠j} |C_i(w) − C_i(ŵ)|` with
/// `ŵ = T⁻¹(T(w) + α d_j)`; both classifier evaluations happen in the
/// original space.
#[allow(clippy::too_many_arguments)]
pub fn preservation_loss_on<G: Graph>(
    g: &mut G,
    flow: &BoundFlow<G::Node>,
    proxy: &G::Node,
    original: &Tensor2,
    bank: &BankTensors,
    attr: usize,
    alpha: f64,
) -> Result<G::Node> {
    let k = bank.attributes();
    if attr >= k {
        return Err(Error::Contract(format!("edit attribute {attr} out of range for {k} attributes")));
    }
    let n = original.rows();
    if n == 0 {
        return Err(Error::Data("empty batch".into()));
    }
    if alpha == 0.0 {
        // ŵ = w exactly
        return Ok(g.constant(Tensor2::scalar(0.0)));
    }
    let before = g.constant(bank.probabilities(original)?);
    let step = g.constant(bank.normal_row(attr).map(|v| alpha * v));
    let shifted = g.add(proxy, &step)?;
    let (edited, _) = flow::inverse_on(g, flow, &shifted)?;
    let w = g.constant(bank.weights.clone());
    let b = g.constant(bank.bias.clone());
    let z = g.matmul(&edited, &w)?;
    let z = g.add(&z, &b)?;
    let after = g.sigmoid(&z)?;
    let diff = g.sub(&before, &after)?;
    let diff = g.abs(&diff)?;
    let mut mask = Tensor2::filled(n, k, 1.0);
    (0..n).for_each(|r| mask.set(r, attr, 0.0));
    let mask = g.constant(mask);
    let kept = g.hadamard(&diff, &mask)?;
    let total = g.sum_all(&kept)?;
    g.scale(&total, 1.0 / n as f64)
}

/// Values of the three loss terms and their weighted sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub attribute: f64,
    pub margin: f64,
    pub preservation: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn from_terms(attribute: f64, margin: f64, preservation: f64, weights: LossWeights) -> Self {
        Self {
            attribute,
            margin,
            preservation,
            total: combine(attribute, margin, preservation, weights),
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.attribute, self.margin, self.preservation, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_lm: f64,
    pub lambda_ap: f64,
}

/// `L_a + λ_lm L_lm + λ_ap L_ap`.
pub fn combine(attribute: f64, margin: f64, preservation: f64, weights: LossWeights) -> f64 {
    attribute + weights.lambda_lm * margin + weights.lambda_ap * preservation
}

/// The attribute edit applied inside the preservation term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EditSample {
    pub attribute: usize,
    pub alpha: f64,
}

struct Terms<N> {
    attribute: N,
    margin: N,
    preservation: N,
    total: N,
}

fn terms_on<G: Graph>(
    g: &mut G,
    flow: &BoundFlow<G::Node>,
    batch: &Tensor2,
    labels: &Tensor2,
    bank: &BankTensors,
    edit: EditSample,
    weights: LossWeights,
) -> Result<Terms<G::Node>> {
    let x = g.constant(batch.clone());
    let (proxy, _) = flow::forward_on(g, flow, &x)?;
    let attribute = attribute_loss_on(g, &proxy, bank, labels)?;
    let margin = margin_loss_on(g, &proxy, bank, labels)?;
    let preservation = preservation_loss_on(g, flow, &proxy, batch, bank, edit.attribute, edit.alpha)?;
    let lm = g.scale(&margin, weights.lambda_lm)?;
    let ap = g.scale(&preservation, weights.lambda_ap)?;
    let total = g.add(&attribute, &lm)?;
    let total = g.add(&total, &ap)?;
    Ok(Terms {
        attribute,
        margin,
        preservation,
        total,
    })
}

fn read_terms<G: Graph>(g: &G, t: &Terms<G::Node>) -> LossBreakdown {
    let v = |n: &G::Node| g.value(n).get(0, 0);
    LossBreakdown {
        attribute: v(&t.attribute),
        margin: v(&t.margin),
        preservation: v(&t.preservation),
        total: v(&t.total),
    }
}

fn check_model(model: &FlowModel, bank: &BankTensors, batch: &Tensor2) -> Result<()> {
    if model.dim() != bank.dim() || batch.cols() != model.dim() {
        return Err(Error::Dimension(format!(
            "flow D={}, bank D={}, batch width {}",
            model.dim(),
            bank.dim(),
            batch.cols()
        )));
    }
    Ok(())
}

pub fn loss_attribute(bank: &ClassifierBank, model: &FlowModel, batch: &Tensor2, labels: &[u8]) -> Result<f64> {
    let bt = BankTensors::new(bank)?;
    check_model(model, &bt, batch)?;
    let (proxy, _) = model.forward(batch)?;
    let v = attribute_loss_on(&mut Eager, &proxy, &bt, &label_matrix(labels, bank.len())?)?;
    Ok(v.get(0, 0))
}

pub fn loss_large_margin(bank: &ClassifierBank, model: &FlowModel, batch: &Tensor2, labels: &[u8]) -> Result<f64> {
    let bt = BankTensors::new(bank)?;
    check_model(model, &bt, batch)?;
    let (proxy, _) = model.forward(batch)?;
    let v = margin_loss_on(&mut Eager, &proxy, &bt, &label_matrix(labels, bank.len())?)?;
    Ok(v.get(0, 0))
}

pub fn loss_attribute_preservation(
    bank: &ClassifierBank,
    model: &FlowModel,
    batch: &Tensor2,
    edit: EditSample,
) -> Result<f64> {
    let bt = BankTensors::new(bank)?;
    check_model(model, &bt, batch)?;
    let mut g = Eager;
    let bound = model.bind(&mut g, |_, t| t);
    let (proxy, _) = flow::forward_on(&mut g, &bound, batch)?;
    let v = preservation_loss_on(&mut g, &bound, &proxy, batch, &bt, edit.attribute, edit.alpha)?;
    Ok(v.get(0, 0))
}

pub fn total_loss(
    bank: &BankTensors,
    model: &FlowModel,
    batch: &Tensor2,
    labels: &Tensor2,
    edit: EditSample,
    weights: LossWeights,
) -> Result<LossBreakdown> {
    check_model(model, bank, batch)?;
    let mut g = Eager;
    let bound = model.bind(&mut g, |_, t| t);
    let terms = terms_on(&mut g, &bound, batch, labels, bank, edit, weights)?;
    Ok(read_terms(&g, &terms))
}

/// Loss terms plus the gradient of the total with respect to every flow
/// parameter, flattened in [`FlowModel::flat_params`] order.
pub fn total_loss_with_gradient(
    bank: &BankTensors,
    model: &FlowModel,
    batch: &Tensor2,
    labels: &Tensor2,
    edit: EditSample,
    weights: LossWeights,
) -> Result<(LossBreakdown, Vec<f64>)> {
    check_model(model, bank, batch)?;
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, |t, v| t.parameter(v));
    let terms = terms_on(&mut tape, &bound, batch, labels, bank, edit, weights)?;
    let values = read_terms(&tape, &terms);
    let grads = tape.backward(terms.total)?;
    let mut flat = Vec::with_capacity(model.param_count());
    for (node, tensor) in bound.nodes().zip(model.tensors()) {
        match grads.get(*node) {
            Some(gr) => flat.extend_from_slice(gr.data()),
            None => flat.extend(std::iter::repeat_n(0.0, tensor.len())),
        }
    }
    Ok((values, flat))
}
