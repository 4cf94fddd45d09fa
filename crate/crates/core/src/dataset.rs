use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Synthetic,
    Imported,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Synthetic => "synthetic",
            Provenance::Imported => "imported",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "synthetic" => Ok(Provenance::Synthetic),
            "imported" => Ok(Provenance::Imported),
            other => Err(Error::Format(format!("unknown provenance '{other}'"))),
        }
    }
}

/// Latent codes with `K` binary attribute labels per row.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledLatentDataset {
    codes: Tensor2,
    labels: Vec<u8>,
    names: Vec<String>,
    provenance: Provenance,
    seed: Option<u64>,
}

impl LabeledLatentDataset {
    /// `labels` is row-major `N x K` with entries in `{0, 1}`.
    pub fn new(
        codes: Tensor2,
        labels: Vec<u8>,
        names: Vec<String>,
        provenance: Provenance,
        seed: Option<u64>,
    ) -> Result<Self> {
        let k = names.len();
        if k == 0 {
            return Err(Error::Data("dataset needs at least one attribute".into()));
        }
        if labels.len() != codes.rows() * k {
            return Err(Error::Data(format!(
                "{} labels for {} rows and {k} attributes",
                labels.len(),
                codes.rows()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::Data(format!("label {bad} is not binary")));
        }
        if !codes.is_finite() {
            return Err(Error::Data("latent codes contain non-finite values".into()));
        }
        Ok(Self {
            codes,
            labels,
            names,
            provenance,
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.codes.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.codes.cols()
    }

    pub fn num_attributes(&self) -> usize {
        self.names.len()
    }

    pub fn codes(&self) -> &Tensor2 {
        &self.codes
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn label(&self, row: usize, attr: usize) -> u8 {
        self.labels[row * self.num_attributes() + attr]
    }

    pub fn label_row(&self, row: usize) -> &[u8] {
        let k = self.num_attributes();
        &self.labels[row * k..(row + 1) * k]
    }

    pub fn attribute_labels(&self, attr: usize) -> Vec<u8> {
        (0..self.len()).map(|r| self.label(r, attr)).collect()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// Same labels, different codes (e.g. the proxy-space image).
    pub fn with_codes(&self, codes: Tensor2) -> Result<Self> {
        if codes.rows() != self.len() {
            return Err(Error::Dimension(format!(
                "replacement codes have {} rows, dataset has {}",
                codes.rows(),
                self.len()
            )));
        }
        Self::new(codes, self.labels.clone(), self.names.clone(), self.provenance, self.seed)
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let k = self.num_attributes();
        let mut labels = Vec::with_capacity(indices.len() * k);
        for &i in indices {
            labels.extend_from_slice(self.label_row(i));
        }
        Self {
            codes: self.codes.select_rows(indices),
            labels,
            names: self.names.clone(),
            provenance: self.provenance,
            seed: self.seed,
        }
    }

    /// Deterministic shuffled split; `train_fraction` of rows go to the
    /// first index list.
    pub fn split_indices(&self, train_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
        split_indices(self.len(), train_fraction, seed)
    }
}

pub fn split_indices(n: usize, train_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = ((n as f64) * train_fraction).round() as usize;
    let val = idx.split_off(cut.min(n));
    (idx, val)
}
