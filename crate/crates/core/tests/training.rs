use proxy_latent::classifiers::{pretrain_bank, train_svms, PretrainConfig, SvmConfig};
use proxy_latent::metrics::flip_rate;
use proxy_latent::synthetic::{World, WorldSpec};
use proxy_latent::trainer::{evaluate_loss, train_proxy, EditRange, TrainConfig};
use proxy_latent::{
    ClassifierBank, Error, Execution, FlowModel, LabeledLatentDataset, LatentSpace, LinearAttributeClassifier, Provenance,
    Tensor2,
};

fn world(margin: f64, n: usize, seed: u64) -> LabeledLatentDataset {
    let spec = WorldSpec {
        margin,
        ..WorldSpec::entangled(4, 32, seed)
    };
    World::new(spec).unwrap().generate(n, seed).unwrap()
}

fn bank_for(data: &LabeledLatentDataset, seed: u64) -> ClassifierBank {
    pretrain_bank(data, &PretrainConfig { seed, ..Default::default() }, Execution::default()).unwrap()
}

fn bank_bits(bank: &ClassifierBank) -> Vec<u64> {
    bank.classifiers()
        .iter()
        .flat_map(|c| c.weight().iter().chain(std::iter::once(&c.bias())).map(|v| v.to_bits()).collect::<Vec<_>>())
        .collect()
}

#[test]
fn zero_epochs_leave_the_model_untouched() {
    let data = world(1.0, 200, 1);
    let bank = bank_for(&data, 1);
    let model = FlowModel::init_random(32, 3, 32, 4, 0.3).unwrap();
    let cfg = TrainConfig { epochs: 0, ..Default::default() };
    let out = train_proxy(&data, &bank, model.clone(), &cfg).unwrap();
    assert_eq!(out.model, model);
    assert!(out.log.batches.is_empty());
}

#[test]
fn five_epochs_reduce_the_total_loss() {
    let data = world(1.0, 1000, 2);
    let bank = bank_for(&data, 2);
    let cfg = TrainConfig { seed: 2, ..Default::default() };
    let model = FlowModel::init(32, 3, 32, 2).unwrap();
    let before = evaluate_loss(&data, &bank, &model, &cfg, 17).unwrap();
    let out = train_proxy(&data, &bank, model, &cfg).unwrap();
    let after = evaluate_loss(&data, &bank, &out.model, &cfg, 17).unwrap();
    assert!(after.total < before.total, "{} -> {}", before.total, after.total);
    let per_epoch = data.len().div_ceil(cfg.batch_size);
    assert_eq!(out.log.batches.len(), cfg.epochs * per_epoch);
    assert_eq!(out.log.epoch_means.len(), cfg.epochs);
    assert!(out.log.epoch_means.last() < out.log.epoch_means.first());
}

#[test]
fn bank_is_bitwise_frozen_through_training() {
    let data = world(0.5, 600, 3);
    let bank = bank_for(&data, 3);
    assert!(bank.is_frozen());
    let snapshot = bank.clone();
    let bits = bank_bits(&bank);
    let cfg = TrainConfig {
        epochs: 2,
        seed: 3,
        ..Default::default()
    };
    let out = train_proxy(&data, &bank, FlowModel::init(32, 3, 32, 3).unwrap(), &cfg).unwrap();
    assert_ne!(out.model, FlowModel::init(32, 3, 32, 3).unwrap());
    assert_eq!(bank_bits(&bank), bits);
    assert_eq!(bank, snapshot);
}

#[test]
fn unfrozen_bank_is_refused() {
    let data = world(1.0, 50, 4);
    let trained = bank_for(&data, 4);
    let thawed = ClassifierBank::new(trained.names().to_vec(), trained.classifiers().to_vec(), false).unwrap();
    let err = train_proxy(&data, &thawed, FlowModel::init(32, 1, 8, 0).unwrap(), &TrainConfig::default()).unwrap_err();
    assert!(matches!(err, Error::Contract(_)), "{err}");
}

#[test]
fn training_is_deterministic() {
    let data = world(0.5, 400, 5);
    let bank = bank_for(&data, 5);
    let cfg = TrainConfig {
        epochs: 2,
        seed: 9,
        ..Default::default()
    };
    let run = || train_proxy(&data, &bank, FlowModel::init(32, 3, 32, 5).unwrap(), &cfg).unwrap();
    let (a, b) = (run(), run());
    let bits = |m: &FlowModel| m.flat_params().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a.model), bits(&b.model));
    assert_eq!(a.log, b.log);
}

#[test]
fn non_finite_loss_aborts_with_position() {
    let rows: Vec<Vec<f64>> = (0..16)
        .map(|r| vec![if r % 2 == 0 { 1e200 } else { -1e200 }, 1.0])
        .collect();
    let labels = (0..16).map(|r| u8::from(r % 2 == 1)).collect();
    let data = LabeledLatentDataset::new(Tensor2::from_rows(&rows).unwrap(), labels, vec!["x".into()], Provenance::Imported, None)
        .unwrap();
    let bank = ClassifierBank::new(vec!["x".into()], vec![LinearAttributeClassifier::new(vec![1e150, 0.0], 0.0)], true)
        .unwrap();
    let cfg = TrainConfig {
        edit_range: EditRange::Fixed(1.0),
        ..Default::default()
    };
    match train_proxy(&data, &bank, FlowModel::init(2, 1, 4, 0).unwrap(), &cfg) {
        Err(Error::Numeric(msg)) => assert!(msg.contains("epoch 0, batch 0"), "{msg}"),
        other => panic!("expected a numeric abort, got {other:?}"),
    }
}

#[test]
fn preservation_weight_reduces_edit_flips() {
    let data = world(0.2, 2000, 6);
    let bank = bank_for(&data, 6);
    let exec = Execution::default();
    let svm = SvmConfig { seed: 6, ..Default::default() };
    let mean_flip = |lambda_ap: f64| {
        let cfg = TrainConfig {
            lambda_ap,
            seed: 6,
            ..Default::default()
        };
        let out = train_proxy(&data, &bank, FlowModel::init(32, 3, 32, 6).unwrap(), &cfg).unwrap();
        let proxy = data.with_codes(out.model.forward_batch(data.codes(), exec).unwrap()).unwrap();
        let planes = train_svms(&proxy, &svm, exec).unwrap();
        planes
            .iter()
            .map(|h| flip_rate(data.codes(), &bank, LatentSpace::Proxy(&out.model), h, 3.0).unwrap())
            .sum::<f64>()
            / planes.len() as f64
    };
    let without = mean_flip(0.0);
    let with = mean_flip(0.1);
    assert!(with < without, "λ_ap=0: {without}, λ_ap=0.1: {with}");
}
