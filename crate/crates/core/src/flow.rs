//! Invertible map from the original latent space to the proxy space, built
//! from affine coupling layers with exact inverse and log-determinant.
//!
//! Each layer splits a code into two halves. The passive half passes through
//! unchanged and conditions a scale net `s` and a translation net `t`; the
//! active half becomes `x_a * exp(s(x_p)) + t(x_p)`. Both nets are three
//! fully connected layers with LeakyReLU on the hidden layers. The scale net
//! ends in `tanh`, the translation net is linear at the output. There is no
//! normalization layer anywhere.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Eager, Graph};
use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::tensor::Tensor2;

/// Negative-side slope of the hidden LeakyReLU activations.
pub const LEAKY_SLOPE: f64 = 0.01;

/// Which half of the code a coupling layer transforms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parity {
    /// First half passive, second half transformed.
    TransformSecond,
    /// Second half passive, first half transformed.
    TransformFirst,
}

impl Parity {
    pub fn for_layer(index: usize) -> Self {
        if index.is_multiple_of(2) {
            Parity::TransformSecond
        } else {
            Parity::TransformFirst
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Parity::TransformSecond => 0,
            Parity::TransformFirst => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Parity::TransformSecond),
            1 => Some(Parity::TransformFirst),
            _ => None,
        }
    }
}

/// Fully connected layer computing `x · weight + bias`; `weight` is `in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Tensor2,
    pub bias: Tensor2,
}

impl Dense {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Tensor2::zeros(fan_in, fan_out),
            bias: Tensor2::zeros(1, fan_out),
        }
    }

    fn uniform(fan_in: usize, fan_out: usize, bound: f64, rng: &mut ChaCha8Rng) -> Self {
        let mut layer = Self::zeros(fan_in, fan_out);
        layer
            .weight
            .data_mut()
            .iter_mut()
            .chain(layer.bias.data_mut())
            .for_each(|v| *v = rng.random_range(-bound..=bound));
        layer
    }
}

/// Three-layer perceptron used for the scale and translation functions.
#[derive(Debug, Clone, PartialEq)]
pub struct Subnet {
    pub layers: [Dense; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingLayer {
    pub parity: Parity,
    pub scale: Subnet,
    pub shift: Subnet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowModel {
    dim: usize,
    hidden: usize,
    layers: Vec<CouplingLayer>,
}

fn check_dims(dim: usize, num_layers: usize, hidden: usize) -> Result<()> {
    if dim < 2 || !dim.is_multiple_of(2) {
        return Err(Error::Config(format!("latent dimension must be even and >= 2, got {dim}")));
    }
    if num_layers == 0 {
        return Err(Error::Config("flow needs at least one coupling layer".into()));
    }
    if hidden == 0 {
        return Err(Error::Config("hidden width must be positive".into()));
    }
    Ok(())
}

fn random_subnet(half: usize, hidden: usize, rng: &mut ChaCha8Rng, output_bound: Option<f64>) -> Subnet {
    let b_in = 1.0 / (half as f64).sqrt();
    let b_hidden = 1.0 / (hidden as f64).sqrt();
    let first = Dense::uniform(half, hidden, b_in, rng);
    let second = Dense::uniform(hidden, hidden, b_hidden, rng);
    let third = match output_bound {
        Some(b) => Dense::uniform(hidden, half, b, rng),
        None => Dense::zeros(hidden, half),
    };
    Subnet {
        layers: [first, second, third],
    }
}

impl FlowModel {
    /// Identity-starting flow: hidden layers uniform in `±1/sqrt(fan_in)`,
    /// last layer of every subnet zero.
    pub fn init(dim: usize, num_layers: usize, hidden: usize, seed: u64) -> Result<Self> {
        Self::build(dim, num_layers, hidden, seed, None)
    }

    /// Like [`FlowModel::init`] but with the output layers also drawn from
    /// `±output_bound`, so the map is far from the identity.
    pub fn init_random(
        dim: usize,
        num_layers: usize,
        hidden: usize,
        seed: u64,
        output_bound: f64,
    ) -> Result<Self> {
        Self::build(dim, num_layers, hidden, seed, Some(output_bound))
    }

    fn build(dim: usize, num_layers: usize, hidden: usize, seed: u64, out: Option<f64>) -> Result<Self> {
        check_dims(dim, num_layers, hidden)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let half = dim / 2;
        let layers = (0..num_layers)
            .map(|i| CouplingLayer {
                parity: Parity::for_layer(i),
                scale: random_subnet(half, hidden, &mut rng, out),
                shift: random_subnet(half, hidden, &mut rng, out),
            })
            .collect();
        Ok(Self { dim, hidden, layers })
    }

    /// Assembles a model from explicit layers.
    pub fn from_layers(dim: usize, hidden: usize, layers: Vec<CouplingLayer>) -> Result<Self> {
        check_dims(dim, layers.len(), hidden)?;
        let half = dim / 2;
        for (i, layer) in layers.iter().enumerate() {
            for net in [&layer.scale, &layer.shift] {
                let shapes = [
                    ((half, hidden), (1, hidden)),
                    ((hidden, hidden), (1, hidden)),
                    ((hidden, half), (1, half)),
                ];
                for (dense, (w, b)) in net.layers.iter().zip(shapes) {
                    if dense.weight.shape() != w || dense.bias.shape() != b {
                        return Err(Error::Config(format!("layer {i}: subnet shapes do not match D={dim}, H={hidden}")));
                    }
                }
            }
        }
        Ok(Self { dim, hidden, layers })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layers(&self) -> &[CouplingLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [CouplingLayer] {
        &mut self.layers
    }

    /// Parameter tensors in declared order: per layer, the scale net then the
    /// translation net, each as `weight, bias` for its three dense layers.
    pub fn tensors(&self) -> impl Iterator<Item = &Tensor2> {
        self.layers.iter().flat_map(|l| {
            [&l.scale, &l.shift]
                .into_iter()
                .flat_map(|n| n.layers.iter().flat_map(|d| [&d.weight, &d.bias]))
        })
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor2> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            for n in [&mut l.scale, &mut l.shift] {
                for d in &mut n.layers {
                    out.push(&mut d.weight);
                    out.push(&mut d.bias);
                }
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().map(Tensor2::len).sum()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.tensors().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Dimension(format!(
                "flow has {} parameters, got {}",
                self.param_count(),
                flat.len()
            )));
        }
        let mut offset = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Places every parameter onto `g` through `leaf`.
    pub fn bind<G: Graph>(&self, g: &mut G, mut leaf: impl FnMut(&mut G, Tensor2) -> G::Node) -> BoundFlow<G::Node> {
        let dim = self.dim;
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let mut net = |n: &Subnet| -> BoundSubnet<G::Node> {
                    BoundSubnet {
                        layers: n
                            .layers
                            .iter()
                            .map(|d| (leaf(g, d.weight.clone()), leaf(g, d.bias.clone())))
                            .collect(),
                    }
                };
                BoundLayer {
                    parity: l.parity,
                    scale: net(&l.scale),
                    shift: net(&l.shift),
                }
            })
            .collect();
        BoundFlow { dim, layers }
    }

    fn bind_eager(&self) -> BoundFlow<Tensor2> {
        self.bind(&mut Eager, |_, t| t)
    }

    fn check_width(&self, w: &Tensor2) -> Result<()> {
        if w.cols() != self.dim {
            return Err(Error::Dimension(format!(
                "flow expects codes of width {}, got {}",
                self.dim,
                w.cols()
            )));
        }
        Ok(())
    }

    /// Maps a batch of codes into the proxy space; also returns the
    /// per-row log-determinant of the Jacobian.
    pub fn forward(&self, w: &Tensor2) -> Result<(Tensor2, Vec<f64>)> {
        self.check_width(w)?;
        let bound = self.bind_eager();
        let (y, logdet) = forward_on(&mut Eager, &bound, w)?;
        Ok((y, logdet.into_data()))
    }

    /// Exact inverse of [`FlowModel::forward`].
    pub fn inverse(&self, wstar: &Tensor2) -> Result<Tensor2> {
        Ok(self.inverse_with_logdet(wstar)?.0)
    }

    /// Inverse pass returning the per-row log-determinant of the forward map
    /// at the recovered point, accumulated as `-Σ s` during the inverse.
    pub fn inverse_with_logdet(&self, wstar: &Tensor2) -> Result<(Tensor2, Vec<f64>)> {
        self.check_width(wstar)?;
        let bound = self.bind_eager();
        let (x, neg) = inverse_on(&mut Eager, &bound, wstar)?;
        Ok((x, neg.into_data().into_iter().map(|v| -v).collect()))
    }

    /// Row-chunked forward map; identical output for either execution mode.
    pub fn forward_batch(&self, w: &Tensor2, exec: Execution) -> Result<Tensor2> {
        self.map_chunks(w, exec, |m, chunk| m.forward(chunk).map(|(y, _)| y))
    }

    pub fn inverse_batch(&self, wstar: &Tensor2, exec: Execution) -> Result<Tensor2> {
        self.map_chunks(wstar, exec, |m, chunk| m.inverse(chunk))
    }

    fn map_chunks(
        &self,
        x: &Tensor2,
        exec: Execution,
        f: impl Fn(&Self, &Tensor2) -> Result<Tensor2> + Sync + Send,
    ) -> Result<Tensor2> {
        self.check_width(x)?;
        const CHUNK: usize = 256;
        let chunks = x.rows().div_ceil(CHUNK);
        let parts: Result<Vec<Tensor2>> = par::map_indices(chunks, exec, |c| {
            let idx: Vec<usize> = (c * CHUNK..((c + 1) * CHUNK).min(x.rows())).collect();
            f(self, &x.select_rows(&idx))
        })
        .into_iter()
        .collect();
        let parts = parts?;
        if parts.is_empty() {
            return Ok(Tensor2::zeros(0, self.dim));
        }
        Tensor2::vstack(&parts)
    }
}

#[derive(Debug, Clone)]
pub struct BoundSubnet<N> {
    layers: Vec<(N, N)>,
}

#[derive(Debug, Clone)]
pub struct BoundLayer<N> {
    parity: Parity,
    scale: BoundSubnet<N>,
    shift: BoundSubnet<N>,
}

/// Flow parameters placed on a [`Graph`].
#[derive(Debug, Clone)]
pub struct BoundFlow<N> {
    dim: usize,
    layers: Vec<BoundLayer<N>>,
}

impl<N> BoundFlow<N> {
    /// All parameter nodes in declared order.
    pub fn nodes(&self) -> impl Iterator<Item = &N> {
        self.layers.iter().flat_map(|l| {
            [&l.scale, &l.shift]
                .into_iter()
                .flat_map(|n| n.layers.iter().flat_map(|(w, b)| [w, b]))
        })
    }
}

fn subnet_on<G: Graph>(g: &mut G, net: &BoundSubnet<G::Node>, x: &G::Node, squash: bool) -> Result<G::Node> {
    let mut h = x.clone();
    let last = net.layers.len() - 1;
    for (i, (w, b)) in net.layers.iter().enumerate() {
        let z = g.matmul(&h, w)?;
        let z = g.add(&z, b)?;
        h = if i < last {
            g.leaky_relu(&z, LEAKY_SLOPE)?
        } else if squash {
            g.tanh(&z)?
        } else {
            z
        };
    }
    Ok(h)
}

fn halves(parity: Parity, half: usize, dim: usize) -> ((usize, usize), (usize, usize)) {
    // (passive range, active range)
    match parity {
        Parity::TransformSecond => ((0, half), (half, dim)),
        Parity::TransformFirst => ((half, dim), (0, half)),
    }
}

fn join<G: Graph>(g: &mut G, parity: Parity, passive: &G::Node, active: &G::Node) -> Result<G::Node> {
    match parity {
        Parity::TransformSecond => g.concat_cols(&[passive, active]),
        Parity::TransformFirst => g.concat_cols(&[active, passive]),
    }
}

/// Forward map on an arbitrary graph. Returns the proxy codes and a
/// `rows x 1` log-determinant column.
pub fn forward_on<G: Graph>(g: &mut G, flow: &BoundFlow<G::Node>, x: &G::Node) -> Result<(G::Node, G::Node)> {
    let dim = flow.dim;
    let half = dim / 2;
    let mut h = x.clone();
    let mut logdet: Option<G::Node> = None;
    for layer in &flow.layers {
        let ((ps, pe), (as_, ae)) = halves(layer.parity, half, dim);
        let passive = g.split_cols(&h, ps, pe)?;
        let active = g.split_cols(&h, as_, ae)?;
        let s = subnet_on(g, &layer.scale, &passive, true)?;
        let t = subnet_on(g, &layer.shift, &passive, false)?;
        let es = g.exp(&s)?;
        let scaled = g.hadamard(&active, &es)?;
        let y_active = g.add(&scaled, &t)?;
        h = join(g, layer.parity, &passive, &y_active)?;
        let contrib = g.sum_rows(&s)?;
        logdet = Some(match logdet {
            Some(acc) => g.add(&acc, &contrib)?,
            None => contrib,
        });
    }
    Ok((h, logdet.expect("at least one layer")))
}

/// Inverse map on an arbitrary graph. The second output is the `rows x 1`
/// sum of `-s` over layers.
pub fn inverse_on<G: Graph>(g: &mut G, flow: &BoundFlow<G::Node>, y: &G::Node) -> Result<(G::Node, G::Node)> {
    let dim = flow.dim;
    let half = dim / 2;
    let mut h = y.clone();
    let mut neg_logdet: Option<G::Node> = None;
    for layer in flow.layers.iter().rev() {
        let ((ps, pe), (as_, ae)) = halves(layer.parity, half, dim);
        let passive = g.split_cols(&h, ps, pe)?;
        let active = g.split_cols(&h, as_, ae)?;
        let s = subnet_on(g, &layer.scale, &passive, true)?;
        let t = subnet_on(g, &layer.shift, &passive, false)?;
        let neg_s = g.scale(&s, -1.0)?;
        let inv_scale = g.exp(&neg_s)?;
        let centered = g.sub(&active, &t)?;
        let x_active = g.hadamard(&centered, &inv_scale)?;
        h = join(g, layer.parity, &passive, &x_active)?;
        let contrib = g.sum_rows(&neg_s)?;
        neg_logdet = Some(match neg_logdet {
            Some(acc) => g.add(&acc, &contrib)?,
            None => contrib,
        });
    }
    Ok((h, neg_logdet.expect("at least one layer")))
}
