//! Desk-scale entangled latent datasets with known ground truth.
//!
//! A sample draws binary factors `g ∈ {-γ, +γ}^K` (pairwise correlated
//! through a shared bit) and Gaussian nuisance `n`, then emits
//! `w = ψ(Q · [g; n])` with `Q` orthogonal and `ψ(x) = x + a·tanh(x)`.
//! Label `i` is `1` exactly when `g_i > 0`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dataset::{LabeledLatentDataset, Provenance};
use crate::error::{Error, Result};
use crate::tensor::Tensor2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Rotation {
    Identity,
    Random { seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldSpec {
    pub attributes: usize,
    pub dim: usize,
    /// Strength `a` of the elementwise nonlinearity; must exceed -1.
    pub entangle: f64,
    /// Factor magnitude γ.
    pub margin: f64,
    /// Pairwise correlation ρ between attribute factors.
    pub correlation: f64,
    pub rotation: Rotation,
}

impl WorldSpec {
    /// Axis-aligned world: no rotation, no nonlinearity, independent factors.
    pub fn unentangled(attributes: usize, dim: usize) -> Self {
        Self {
            attributes,
            dim,
            entangle: 0.0,
            margin: 1.0,
            correlation: 0.0,
            rotation: Rotation::Identity,
        }
    }

    /// The entangled benchmark world used for the directional experiments.
    pub fn entangled(attributes: usize, dim: usize, rotation_seed: u64) -> Self {
        Self {
            attributes,
            dim,
            entangle: 2.0,
            margin: 1.0,
            correlation: 0.3,
            rotation: Rotation::Random { seed: rotation_seed },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.attributes == 0 || self.attributes > self.dim {
            return Err(Error::Config(format!(
                "need 1 <= K <= D, got K={} D={}",
                self.attributes, self.dim
            )));
        }
        if !(self.entangle > -1.0) || !self.entangle.is_finite() {
            return Err(Error::Config(format!("entangle strength must be finite and > -1, got {}", self.entangle)));
        }
        if !(self.margin > 0.0) || !self.margin.is_finite() {
            return Err(Error::Config(format!("margin must be positive, got {}", self.margin)));
        }
        if !(0.0..1.0).contains(&self.correlation) {
            return Err(Error::Config(format!("correlation must lie in [0, 1), got {}", self.correlation)));
        }
        Ok(())
    }
}

#[inline]
pub fn entangle(x: f64, a: f64) -> f64 {
    x + a * x.tanh()
}

/// Inverts [`entangle`] by bisection on the bracket `y ± |a|`.
pub fn disentangle(y: f64, a: f64) -> Result<f64> {
    if a == 0.0 {
        return Ok(y);
    }
    let mut lo = y - a.abs() - 1e-9;
    let mut hi = y + a.abs() + 1e-9;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if entangle(mid, a) < y {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 {
            return Ok(0.5 * (lo + hi));
        }
    }
    if hi - lo < 1e-10 {
        Ok(0.5 * (lo + hi))
    } else {
        Err(Error::Numeric(format!("bisection for ψ⁻¹({y}) did not converge")))
    }
}

/// Orthogonal matrix from modified Gram-Schmidt (two passes) on a seeded
/// Gaussian matrix. Columns are the orthonormal basis.
fn random_orthogonal(dim: usize, seed: u64) -> Tensor2 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cols: Vec<Vec<f64>> = (0..dim)
        .map(|_| (0..dim).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    for j in 0..dim {
        for _ in 0..2 {
            for i in 0..j {
                let proj: f64 = cols[j].iter().zip(&cols[i]).map(|(a, b)| a * b).sum();
                let basis = cols[i].clone();
                cols[j].iter_mut().zip(&basis).for_each(|(a, b)| *a -= proj * b);
            }
        }
        let n = cols[j].iter().map(|v| v * v).sum::<f64>().sqrt();
        cols[j].iter_mut().for_each(|v| *v /= n);
    }
    let mut q = Tensor2::zeros(dim, dim);
    for (j, col) in cols.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            q.set(i, j, v);
        }
    }
    q
}

/// A validated [`WorldSpec`] with its rotation materialized.
#[derive(Debug, Clone)]
pub struct World {
    spec: WorldSpec,
    rotation: Tensor2,
}

impl World {
    pub fn new(spec: WorldSpec) -> Result<Self> {
        spec.validate()?;
        let rotation = match spec.rotation {
            Rotation::Identity => {
                let mut q = Tensor2::zeros(spec.dim, spec.dim);
                (0..spec.dim).for_each(|i| q.set(i, i, 1.0));
                q
            }
            Rotation::Random { seed } => random_orthogonal(spec.dim, seed),
        };
        Ok(Self { spec, rotation })
    }

    pub fn spec(&self) -> &WorldSpec {
        &self.spec
    }

    /// Orthogonal matrix `Q`.
    pub fn rotation(&self) -> &Tensor2 {
        &self.rotation
    }

    pub fn attribute_names(&self) -> Vec<String> {
        (0..self.spec.attributes).map(|i| format!("attr{i}")).collect()
    }

    fn sample_factors(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let share = self.spec.correlation.sqrt();
        let gamma = self.spec.margin;
        let sign = |rng: &mut ChaCha8Rng| if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let shared = sign(rng);
        (0..self.spec.attributes)
            .map(|_| {
                // both copy the shared bit with probability ρ, so corr = ρ
                let copy = rng.random::<f64>() < share;
                let own = sign(rng);
                gamma * if copy { shared } else { own }
            })
            .collect()
    }

    /// Encodes a full latent vector `[g; n]` into a code.
    pub fn encode(&self, latent: &[f64]) -> Vec<f64> {
        let d = self.spec.dim;
        (0..d)
            .map(|i| {
                let u: f64 = (0..d).map(|j| self.rotation.get(i, j) * latent[j]).sum();
                entangle(u, self.spec.entangle)
            })
            .collect()
    }

    pub fn generate(&self, n: usize, seed: u64) -> Result<LabeledLatentDataset> {
        if n == 0 {
            return Err(Error::Config("sample count must be at least 1".into()));
        }
        let (k, d) = (self.spec.attributes, self.spec.dim);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut codes = Vec::with_capacity(n * d);
        let mut labels = Vec::with_capacity(n * k);
        for _ in 0..n {
            let mut latent = self.sample_factors(&mut rng);
            labels.extend(latent.iter().map(|&g| u8::from(g > 0.0)));
            latent.extend((k..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
            codes.extend(self.encode(&latent));
        }
        LabeledLatentDataset::new(
            Tensor2::new(n, d, codes)?,
            labels,
            self.attribute_names(),
            Provenance::Synthetic,
            Some(seed),
        )
    }

    /// Recovers the factor vector `g` of a code: first `K` entries of
    /// `Qᵀ ψ⁻¹(code)`.
    pub fn ground_truth(&self, code: &[f64]) -> Result<Vec<f64>> {
        let d = self.spec.dim;
        if code.len() != d {
            return Err(Error::Dimension(format!("code width {} vs world dimension {d}", code.len())));
        }
        let u = code
            .iter()
            .map(|&y| disentangle(y, self.spec.entangle))
            .collect::<Result<Vec<_>>>()?;
        Ok((0..self.spec.attributes)
            .map(|i| (0..d).map(|j| self.rotation.get(j, i) * u[j]).sum())
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rotation_is_orthogonal() {
        let w = World::new(WorldSpec::entangled(4, 32, 11)).unwrap();
        let q = w.rotation();
        for i in 0..32 {
            for j in 0..32 {
                let dot: f64 = (0..32).map(|r| q.get(r, i) * q.get(r, j)).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                assert!((dot - target).abs() < 1e-10, "QᵀQ[{i},{j}] = {dot}");
            }
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut s = WorldSpec::unentangled(4, 8);
        s.entangle = -1.0;
        assert!(World::new(s.clone()).is_err());
        s.entangle = 0.0;
        s.correlation = 1.0;
        assert!(World::new(s.clone()).is_err());
        s.correlation = 0.0;
        s.attributes = 9;
        assert!(World::new(s).is_err());
        let w = World::new(WorldSpec::unentangled(2, 4)).unwrap();
        assert!(matches!(w.generate(0, 1), Err(Error::Config(_))));
    }

    #[test]
    fn same_seed_same_dataset() {
        let w = World::new(WorldSpec::entangled(4, 16, 2)).unwrap();
        assert_eq!(w.generate(50, 7).unwrap(), w.generate(50, 7).unwrap());
        assert_ne!(w.generate(50, 7).unwrap(), w.generate(50, 8).unwrap());
    }

    #[test]
    fn disentangle_inverts_including_negative_strength() {
        for &a in &[2.0, 0.5, -0.9] {
            for i in -40..=40 {
                let x = i as f64 * 0.17;
                let y = entangle(x, a);
                assert!((disentangle(y, a).unwrap() - x).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn unentangled_oracle_is_identity_restriction() {
        let w = World::new(WorldSpec::unentangled(3, 6)).unwrap();
        let code = [0.5, -1.5, 2.0, 7.0, 8.0, 9.0];
        assert_eq!(w.ground_truth(&code).unwrap(), vec![0.5, -1.5, 2.0]);
    }

    #[test]
    fn oracle_recovers_factors_and_labels() {
        let w = World::new(WorldSpec::entangled(4, 32, 5)).unwrap();
        let data = w.generate(300, 3).unwrap();
        for r in 0..data.len() {
            let g = w.ground_truth(data.codes().row(r)).unwrap();
            for (i, &gi) in g.iter().enumerate() {
                let target = if data.label(r, i) == 1 { 1.0 } else { -1.0 };
                assert!((gi - target).abs() < 1e-8, "row {r} attr {i}: {gi}");
                assert_eq!(u8::from(gi > 0.0), data.label(r, i));
            }
        }
    }

    #[test]
    fn labels_are_balanced_and_correlated() {
        let w = World::new(WorldSpec::entangled(4, 32, 5)).unwrap();
        let data = w.generate(4000, 21).unwrap();
        for k in 0..4 {
            let rate = data.attribute_labels(k).iter().map(|&l| l as f64).sum::<f64>() / 4000.0;
            assert!((0.4..=0.6).contains(&rate), "attr {k} positive rate {rate}");
        }
        let s = |l: u8| if l == 1 { 1.0 } else { -1.0 };
        let corr: f64 = (0..4000).map(|r| s(data.label(r, 0)) * s(data.label(r, 1))).sum::<f64>() / 4000.0;
        assert!((corr - 0.3).abs() < 0.06, "pairwise correlation {corr}");
    }
}
