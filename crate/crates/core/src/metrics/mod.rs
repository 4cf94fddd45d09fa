//! Evaluation of a latent space: linear separability, DCI and edit flip
//! rates.

pub mod dci;
pub mod lasso;

use serde::Serialize;

use crate::classifiers::{attribute_seed, svm_accuracy, train_svm, ClassifierBank, SvmConfig, SvmHyperplane};
use crate::dataset::LabeledLatentDataset;
use crate::editor;
use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::space::LatentSpace;
use crate::tensor::Tensor2;

pub use dci::{dci, dci_scores, DciConfig, DciReport, DciScores, ImportanceMatrix};
pub use lasso::{lasso_fit, soft_threshold, LassoFit, LassoOptions};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttributeAccuracy {
    pub index: usize,
    pub name: String,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeparabilityReport {
    pub attributes: Vec<AttributeAccuracy>,
    /// Attributes with a single class in the training split.
    pub skipped: Vec<String>,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeparabilityConfig {
    pub svm: SvmConfig,
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SeparabilityConfig {
    fn default() -> Self {
        Self {
            svm: SvmConfig::default(),
            train_fraction: 0.8,
            seed: 0,
        }
    }
}

/// Fresh SVM per attribute on a seeded 80/20 split of the codes in `space`;
/// reports validation accuracies.
pub fn separability(
    dataset: &LabeledLatentDataset,
    space: LatentSpace<'_>,
    cfg: &SeparabilityConfig,
    exec: Execution,
) -> Result<SeparabilityReport> {
    let codes = space.embed(dataset.codes(), exec)?;
    let (train, val) = dataset.split_indices(cfg.train_fraction, cfg.seed);
    if train.is_empty() || val.is_empty() {
        return Err(Error::Data("separability split leaves an empty side".into()));
    }
    let (x_train, x_val) = (codes.select_rows(&train), codes.select_rows(&val));
    let results = par::map_indices(dataset.num_attributes(), exec, |k| {
        let y_train: Vec<u8> = train.iter().map(|&r| dataset.label(r, k)).collect();
        let y_val: Vec<u8> = val.iter().map(|&r| dataset.label(r, k)).collect();
        let svm_cfg = SvmConfig {
            seed: attribute_seed(cfg.seed, k),
            ..cfg.svm
        };
        match train_svm(&x_train, &y_train, k, &svm_cfg) {
            Ok(h) => svm_accuracy(&h, &x_val, &y_val).map(Some),
            Err(Error::Data(msg)) => {
                log::warn!("skipping attribute '{}': {msg}", dataset.names()[k]);
                Ok(None)
            }
            Err(e) => Err(e),
        }
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let mut attributes = Vec::new();
    let mut skipped = Vec::new();
    for (k, acc) in results.into_iter().enumerate() {
        let name = dataset.names()[k].clone();
        match acc {
            Some(accuracy) => attributes.push(AttributeAccuracy { index: k, name, accuracy }),
            None => skipped.push(name),
        }
    }
    if attributes.is_empty() {
        return Err(Error::Data("every attribute is degenerate; nothing to evaluate".into()));
    }
    let accs = attributes.iter().map(|a| a.accuracy);
    let min = accs.clone().fold(f64::INFINITY, f64::min);
    let max = accs.clone().fold(f64::NEG_INFINITY, f64::max);
    let mean = accs.sum::<f64>() / attributes.len() as f64;
    Ok(SeparabilityReport {
        attributes,
        skipped,
        min,
        max,
        mean,
    })
}

/// Decision changes of the frozen classifiers caused by one edit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FlipStats {
    /// Mean over samples and non-target attributes.
    pub non_target: f64,
    /// Fraction of samples whose targeted decision changed.
    pub target: f64,
}

/// Edits every code along `hyperplane` (fitted in `space`) by `alpha` and
/// counts changed decisions of the bank classifiers, evaluated on
/// original-space codes.
pub fn flip_stats(
    codes: &Tensor2,
    bank: &ClassifierBank,
    space: LatentSpace<'_>,
    hyperplane: &SvmHyperplane,
    alpha: f64,
) -> Result<FlipStats> {
    let j = hyperplane.attribute;
    let k = bank.len();
    if j >= k {
        return Err(Error::Contract(format!("attribute {j} out of range for {k} classifiers")));
    }
    let n = codes.rows();
    if n == 0 {
        return Ok(FlipStats {
            non_target: 0.0,
            target: 0.0,
        });
    }
    if alpha == 0.0 {
        return Ok(FlipStats {
            non_target: 0.0,
            target: 0.0,
        });
    }
    let edited = match space {
        LatentSpace::Original => editor::edit_original(codes, hyperplane, alpha)?,
        LatentSpace::Proxy(model) => editor::edit_proxy(model, codes, hyperplane, alpha)?,
    };
    let before = bank.decisions(codes);
    let after = bank.decisions(&edited);
    let mut other = 0usize;
    let mut target = 0usize;
    for r in 0..n {
        for i in 0..k {
            let changed = before[r * k + i] != after[r * k + i];
            if i == j {
                target += usize::from(changed);
            } else {
                other += usize::from(changed);
            }
        }
    }
    let non_target = if k > 1 {
        other as f64 / (n * (k - 1)) as f64
    } else {
        0.0
    };
    Ok(FlipStats {
        non_target,
        target: target as f64 / n as f64,
    })
}

pub fn flip_rate(
    codes: &Tensor2,
    bank: &ClassifierBank,
    space: LatentSpace<'_>,
    hyperplane: &SvmHyperplane,
    alpha: f64,
) -> Result<f64> {
    Ok(flip_stats(codes, bank, space, hyperplane, alpha)?.non_target)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifiers::LinearAttributeClassifier;
    use crate::flow::FlowModel;
    use crate::synthetic::{World, WorldSpec};

    #[test]
    fn separable_world_is_separable() {
        let world = World::new(WorldSpec::unentangled(4, 8)).unwrap();
        let data = world.generate(1000, 2).unwrap();
        let rep = separability(&data, LatentSpace::Original, &SeparabilityConfig::default(), Execution::Sequential).unwrap();
        assert!(rep.mean >= 0.99, "{rep:?}");
        assert!(rep.min <= rep.mean && rep.mean <= rep.max);
        let again = separability(&data, LatentSpace::Original, &SeparabilityConfig::default(), Execution::Parallel).unwrap();
        assert_eq!(rep, again);
    }

    #[test]
    fn degenerate_attributes_skipped_or_rejected() {
        let rows: Vec<[f64; 2]> = (0..20).map(|i| [if i % 2 == 0 { 1.0 + i as f64 } else { -1.0 - i as f64 }, 0.5]).collect();
        let codes = Tensor2::from_rows(&rows).unwrap();
        let labels: Vec<u8> = (0..20).flat_map(|i| [u8::from(i % 2 == 0), 1]).collect();
        let one = LabeledLatentDataset::new(
            codes.clone(),
            labels,
            vec!["ok".into(), "const".into()],
            crate::dataset::Provenance::Imported,
            None,
        )
        .unwrap();
        let cfg = SeparabilityConfig {
            train_fraction: 0.6,
            ..Default::default()
        };
        let rep = separability(&one, LatentSpace::Original, &cfg, Execution::Sequential).unwrap();
        assert_eq!(rep.skipped, vec!["const".to_string()]);
        let none = LabeledLatentDataset::new(codes, vec![1; 20], vec!["c".into()], crate::dataset::Provenance::Imported, None).unwrap();
        assert!(matches!(
            separability(&none, LatentSpace::Original, &cfg, Execution::Sequential),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn flips_vanish_for_zero_step_and_orthogonal_normals() {
        let bank = ClassifierBank::new(
            vec!["a".into(), "b".into(), "c".into()],
            vec![
                LinearAttributeClassifier::new(vec![1.0, 0.0, 0.0, 0.0], 0.1),
                LinearAttributeClassifier::new(vec![0.0, 2.0, 0.0, 0.0], -0.2),
                LinearAttributeClassifier::new(vec![0.0, 0.0, 1.0, 0.0], 0.0),
            ],
            true,
        )
        .unwrap();
        let codes = Tensor2::from_rows(&[[0.1, 0.2, -0.3, 1.0], [-0.5, 0.05, 0.2, 0.0], [1.0, -1.0, 0.01, 2.0]]).unwrap();
        let plane = SvmHyperplane {
            attribute: 0,
            weight: vec![1.0, 0.0, 0.0, 0.0],
            bias: 0.0,
        };
        let id = FlowModel::init(4, 2, 4, 0).unwrap();
        for space in [LatentSpace::Original, LatentSpace::Proxy(&id)] {
            assert_eq!(flip_rate(&codes, &bank, space, &plane, 0.0).unwrap(), 0.0);
            let stats = flip_stats(&codes, &bank, space, &plane, 5.0).unwrap();
            assert_eq!(stats.non_target, 0.0);
            assert!(stats.target > 0.0);
        }
    }
}
