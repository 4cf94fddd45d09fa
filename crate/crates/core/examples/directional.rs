//! End-to-end run on the entangled synthetic world: pretrain the bank, train
//! the proxy map, then compare separability, DCI and edit flip rates in both
//! spaces.
//!
//! Usage: `directional [seed] [margin] [hidden] [layers]`

use std::time::Instant;

use proxy_latent::classifiers::{pretrain_bank, train_svms, PretrainConfig, SvmConfig};
use proxy_latent::metrics::{dci, flip_rate, separability, DciConfig, SeparabilityConfig};
use proxy_latent::synthetic::{World, WorldSpec};
use proxy_latent::trainer::{evaluate_loss, train_proxy, TrainConfig};
use proxy_latent::{Execution, FlowModel, LatentSpace};

fn arg<T: std::str::FromStr>(i: usize, default: T) -> T {
    std::env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() -> proxy_latent::Result<()> {
    let seed: u64 = arg(1, 7);
    let margin: f64 = arg(2, 0.2);
    let hidden: usize = arg(3, 32);
    let layers: usize = arg(4, 3);
    let exec = Execution::default();

    let world = World::new(WorldSpec {
        margin,
        ..WorldSpec::entangled(4, 32, seed)
    })?;
    let data = world.generate(4000, seed)?;
    let start = Instant::now();
    let bank = pretrain_bank(&data, &PretrainConfig { seed, ..Default::default() }, exec)?;
    let cfg = TrainConfig { seed, ..Default::default() };
    let flow = FlowModel::init(32, layers, hidden, seed)?;
    let before = evaluate_loss(&data, &bank, &flow, &cfg, 99)?;
    let trained = train_proxy(&data, &bank, flow, &cfg)?;
    let after = evaluate_loss(&data, &bank, &trained.model, &cfg, 99)?;
    println!(
        "trained in {:.1}s, loss {:.4} -> {:.4}",
        start.elapsed().as_secs_f64(),
        before.total,
        after.total
    );

    let sep_cfg = SeparabilityConfig { seed, ..Default::default() };
    let dci_cfg = DciConfig { seed, ..Default::default() };
    for space in [LatentSpace::Original, LatentSpace::Proxy(&trained.model)] {
        let sep = separability(&data, space, &sep_cfg, exec)?;
        let (d, _) = dci(&data, space, &dci_cfg, exec)?;
        println!(
            "{:>5}: acc min {:.3} max {:.3} mean {:.3} | D {:.3} C {:.3} I {:.3}",
            space.tag().as_str(),
            sep.min,
            sep.max,
            sep.mean,
            d.disentanglement,
            d.completeness,
            d.informativeness
        );
    }

    let svm_cfg = SvmConfig { seed, ..Default::default() };
    let orig_planes = train_svms(&data, &svm_cfg, exec)?;
    let proxy_data = data.with_codes(trained.model.forward_batch(data.codes(), exec)?)?;
    let proxy_planes = train_svms(&proxy_data, &svm_cfg, exec)?;
    for j in 0..data.num_attributes() {
        let o = flip_rate(data.codes(), &bank, LatentSpace::Original, &orig_planes[j], 3.0)?;
        let p = flip_rate(data.codes(), &bank, LatentSpace::Proxy(&trained.model), &proxy_planes[j], 3.0)?;
        println!("attr {j}: flip orig {o:.4} proxy {p:.4}");
    }
    println!("total {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
