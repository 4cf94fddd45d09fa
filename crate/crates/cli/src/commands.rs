use std::path::Path;

use anyhow::{bail, Context, Result};
use proxy_latent::classifiers::{bank_accuracy, pretrain_bank, train_svms, PretrainConfig, SvmConfig};
use proxy_latent::editor::{self, EditMode, EditRequest};
use proxy_latent::metrics::{dci, flip_stats, separability, DciConfig, SeparabilityConfig};
use proxy_latent::persist::{self, ModelBundle};
use proxy_latent::synthetic::{Rotation, World, WorldSpec};
use proxy_latent::trainer::{train_proxy, EditRange};
use proxy_latent::{Execution, FlowModel, LabeledLatentDataset, LatentSpace, Space, SvmHyperplane, TrainConfig};
use serde::Serialize;
use serde_json::{json, Value};

use crate::plot::{scatter_svg, Point};
use crate::{DciArgs, EditArgs, FlipArgs, GenArgs, PlotArgs, PretrainArgs, SeparabilityArgs, SpaceArg, SvmArgs, TrainArgs};

#[derive(Serialize)]
struct Report<'a, C: Serialize> {
    command: &'a str,
    version: &'a str,
    config: &'a C,
    results: Value,
}

fn exec() -> Execution {
    Execution::default()
}

fn read_dataset(path: &Path) -> Result<LabeledLatentDataset> {
    Ok(persist::load_dataset(path)?)
}

fn read_model(path: &Path) -> Result<ModelBundle> {
    Ok(persist::load_model(path)?)
}

fn write_report<C: Serialize>(out: Option<&Path>, command: &str, config: &C, results: Value) -> Result<()> {
    let Some(out) = out else { return Ok(()) };
    let report = Report {
        command,
        version: env!("CARGO_PKG_VERSION"),
        config,
        results,
    };
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    persist::write_atomic(out, text.as_bytes()).with_context(|| format!("cannot write report '{}'", out.display()))
}

/// Flattens the resolved arguments into `prefix.key=value` manifest entries.
fn echo(prefix: &str, args: &impl Serialize) -> Result<Vec<(String, String)>> {
    let Value::Object(map) = serde_json::to_value(args)? else {
        bail!("arguments do not serialize to an object");
    };
    Ok(map
        .into_iter()
        .map(|(k, v)| {
            let v = match v {
                Value::String(s) => s,
                Value::Null => "none".into(),
                other => other.to_string(),
            };
            (format!("{prefix}.{k}"), v)
        })
        .collect())
}

fn svm_config(svm: &SvmArgs, seed: u64) -> SvmConfig {
    SvmConfig {
        lambda: svm.svm_lambda,
        epochs: svm.svm_epochs,
        seed,
    }
}

fn spaces(requested: Option<SpaceArg>, have_model: bool) -> Result<Vec<Space>> {
    match (requested, have_model) {
        (Some(SpaceArg::Proxy), false) => bail!("the proxy space needs --model"),
        (Some(s), _) => Ok(vec![s.space()]),
        (None, true) => Ok(vec![Space::Original, Space::Proxy]),
        (None, false) => Ok(vec![Space::Original]),
    }
}

fn latent(space: Space, bundle: Option<&ModelBundle>) -> Result<LatentSpace<'_>> {
    match (space, bundle) {
        (Space::Original, _) => Ok(LatentSpace::Original),
        (Space::Proxy, Some(b)) => Ok(LatentSpace::Proxy(&b.flow)),
        (Space::Proxy, None) => bail!("the proxy space needs --model"),
    }
}

fn hyperplanes(bundle: &ModelBundle, space: Space) -> Result<&[SvmHyperplane]> {
    let planes = match space {
        Space::Original => &bundle.svm_original,
        Space::Proxy => &bundle.svm_proxy,
    };
    if planes.is_empty() {
        bail!("model has no {} hyperplanes; produce it with train-proxy", space.as_str());
    }
    Ok(planes)
}

fn check_attribute(attr: usize, k: usize) -> Result<()> {
    if attr >= k {
        bail!("attribute index {attr} out of range for {k} attributes");
    }
    Ok(())
}

pub fn gen_synthetic(a: &GenArgs) -> Result<()> {
    let rotation = if a.axis_aligned {
        Rotation::Identity
    } else {
        Rotation::Random {
            seed: a.rotation_seed.unwrap_or(a.seed),
        }
    };
    let world = World::new(WorldSpec {
        attributes: a.k,
        dim: a.dim,
        entangle: a.entangle,
        margin: a.margin,
        correlation: a.correlation,
        rotation,
    })?;
    let data = world.generate(a.n, a.seed)?;
    persist::save_dataset(&a.out, &data).with_context(|| format!("cannot write dataset '{}'", a.out.display()))?;
    println!("wrote {} codes (D={}, K={}) to {}", data.len(), data.dim(), data.num_attributes(), a.out.display());
    Ok(())
}

pub fn pretrain(a: &PretrainArgs) -> Result<()> {
    let data = read_dataset(&a.dataset)?;
    let cfg = PretrainConfig {
        epochs: a.epochs,
        lr: a.lr,
        batch_size: a.batch,
        seed: a.seed,
    };
    let bank = pretrain_bank(&data, &cfg, exec())?;
    for (k, name) in data.names().iter().enumerate() {
        let acc = bank_accuracy(&bank, k, data.codes(), &data.attribute_labels(k));
        println!("{name}\ttrain_accuracy\t{acc:.4}");
    }
    let flow = FlowModel::init(data.dim(), a.layers, a.hidden.unwrap_or(data.dim()), a.seed)?;
    let bundle = ModelBundle {
        flow,
        bank,
        svm_original: Vec::new(),
        svm_proxy: Vec::new(),
        config: echo("pretrain", a)?,
        seed: a.seed,
    };
    persist::save_model(&a.out, &bundle).with_context(|| format!("cannot write model '{}'", a.out.display()))
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let data = read_dataset(&a.dataset)?;
    let mut bundle = read_model(&a.model)?;
    let flow = if a.layers.is_some() || a.hidden.is_some() {
        FlowModel::init(
            bundle.flow.dim(),
            a.layers.unwrap_or(bundle.flow.num_layers()),
            a.hidden.unwrap_or(bundle.flow.hidden()),
            a.seed,
        )?
    } else {
        bundle.flow.clone()
    };
    let cfg = TrainConfig {
        lambda_lm: a.lambda_lm,
        lambda_ap: a.lambda_ap,
        lr: a.lr,
        batch_size: a.batch,
        epochs: a.epochs,
        edit_range: EditRange::Adaptive { multiple: a.edit_range },
        seed: a.seed,
        ..Default::default()
    };
    let trained = train_proxy(&data, &bundle.bank, flow, &cfg)?;
    for (e, mean) in trained.log.epoch_means.iter().enumerate() {
        println!("epoch {e}\tmean_loss\t{mean:.6}");
    }
    if let Some(path) = &a.log {
        let mut text = String::new();
        for record in &trained.log.batches {
            text.push_str(&serde_json::to_string(record)?);
            text.push('\n');
        }
        persist::write_atomic(path, text.as_bytes()).with_context(|| format!("cannot write log '{}'", path.display()))?;
    }

    let svm = svm_config(&a.svm, a.seed);
    bundle.svm_original = train_svms(&data, &svm, exec())?;
    let proxy = data.with_codes(trained.model.forward_batch(data.codes(), exec())?)?;
    bundle.svm_proxy = train_svms(&proxy, &svm, exec())?;
    bundle.flow = trained.model;
    bundle.seed = a.seed;
    bundle.config.retain(|(k, _)| !k.starts_with("train."));
    bundle.config.extend(echo("train", a)?);
    persist::save_model(&a.out, &bundle).with_context(|| format!("cannot write model '{}'", a.out.display()))
}

pub fn eval_separability(a: &SeparabilityArgs) -> Result<()> {
    let data = read_dataset(&a.dataset)?;
    let bundle = a.model.as_deref().map(read_model).transpose()?;
    let cfg = SeparabilityConfig {
        svm: svm_config(&a.svm, a.seed),
        train_fraction: a.train_fraction,
        seed: a.seed,
    };
    let mut results = Vec::new();
    for space in spaces(a.space, bundle.is_some())? {
        let rep = separability(&data, latent(space, bundle.as_ref())?, &cfg, exec())?;
        for acc in &rep.attributes {
            println!("{}\t{}\taccuracy\t{:.4}", space.as_str(), acc.name, acc.accuracy);
        }
        println!("{}\tmean\taccuracy\t{:.4}", space.as_str(), rep.mean);
        results.push(json!({ "space": space.as_str(), "separability": rep }));
    }
    write_report(a.out.as_deref(), "eval-separability", a, Value::Array(results))
}

pub fn eval_dci(a: &DciArgs) -> Result<()> {
    let data = read_dataset(&a.dataset)?;
    let bundle = a.model.as_deref().map(read_model).transpose()?;
    let cfg = DciConfig {
        n_samples: a.n_samples.unwrap_or(data.len().min(2000)),
        alpha: a.lasso_alpha,
        train_fraction: a.train_fraction,
        seed: a.seed,
    };
    let mut results = Vec::new();
    for space in spaces(a.space, bundle.is_some())? {
        let (rep, importance) = dci(&data, latent(space, bundle.as_ref())?, &cfg, exec())?;
        let s = space.as_str();
        println!("{s}\tdisentanglement\t{:.4}", rep.disentanglement);
        println!("{s}\tcompleteness\t{:.4}", rep.completeness);
        println!("{s}\tinformativeness\t{:.4}", rep.informativeness);
        let rows: Vec<&[f64]> = (0..importance.attributes()).map(|k| importance.row(k)).collect();
        results.push(json!({
            "space": s,
            "n_samples": cfg.n_samples,
            "dci": rep,
            "importance": rows,
        }));
    }
    write_report(a.out.as_deref(), "eval-dci", a, Value::Array(results))
}

pub fn eval_flips(a: &FlipArgs) -> Result<()> {
    let data = read_dataset(&a.dataset)?;
    let bundle = read_model(&a.model)?;
    let k = bundle.bank.len();
    let attrs: Vec<usize> = match a.attr {
        Some(j) => {
            check_attribute(j, k)?;
            vec![j]
        }
        None => (0..k).collect(),
    };
    let spaces = spaces(a.space, true)?;
    let mut results = Vec::new();
    let mut proxy_fewer = 0usize;
    for &j in &attrs {
        let mut entry = serde_json::Map::new();
        entry.insert("attribute".into(), json!(j));
        entry.insert("name".into(), json!(bundle.bank.names()[j]));
        let mut rates = Vec::new();
        for &space in &spaces {
            let h = &hyperplanes(&bundle, space)?[j];
            let stats = flip_stats(data.codes(), &bundle.bank, latent(space, Some(&bundle))?, h, a.alpha)?;
            println!("{}\t{}\tnon_target_flip\t{:.4}", space.as_str(), bundle.bank.names()[j], stats.non_target);
            println!("{}\t{}\ttarget_flip\t{:.4}", space.as_str(), bundle.bank.names()[j], stats.target);
            entry.insert(space.as_str().into(), json!(stats));
            rates.push(stats.non_target);
        }
        if let [orig, proxy] = rates[..] {
            proxy_fewer += usize::from(proxy < orig);
        }
        results.push(Value::Object(entry));
    }
    let mut summary = json!({ "attributes": results });
    if spaces.len() == 2 {
        println!("proxy_fewer_flips\t{proxy_fewer}/{}", attrs.len());
        summary["proxy_fewer_flips"] = json!(proxy_fewer);
    }
    write_report(a.out.as_deref(), "eval-flips", a, summary)
}

pub fn edit(a: &EditArgs) -> Result<()> {
    let data = read_dataset(&a.dataset)?;
    let bundle = read_model(&a.model)?;
    let k = bundle.bank.len();
    check_attribute(a.attr, k)?;
    let data = match a.rows {
        Some(0) => bail!("--rows must be at least 1"),
        Some(n) => data.subset(&(0..n.min(data.len())).collect::<Vec<_>>()),
        None => data,
    };
    let space = a.space.space();
    hyperplanes(&bundle, space)?;
    let mode = match (a.alpha, a.target_dist) {
        (Some(alpha), None) => EditMode::Step(alpha),
        (None, Some(tau)) => EditMode::ToDistance(tau),
        _ => bail!("give exactly one of --alpha and --target-dist"),
    };
    let request = EditRequest {
        attribute: a.attr,
        mode,
        space,
    };
    let edited = editor::apply(&request, &bundle.flow, &bundle.svm_original, &bundle.svm_proxy, data.codes())?;
    let before = bundle.bank.decisions(data.codes());
    let after = bundle.bank.decisions(&edited);
    for (i, name) in bundle.bank.names().iter().enumerate() {
        let changed = (0..data.len()).filter(|r| before[r * k + i] != after[r * k + i]).count();
        println!("{name}\tdecisions_changed\t{changed}/{}", data.len());
    }
    let out = data.with_codes(edited)?;
    persist::save_dataset(&a.out, &out).with_context(|| format!("cannot write dataset '{}'", a.out.display()))
}

pub fn plot2d(a: &PlotArgs) -> Result<()> {
    let data = read_dataset(&a.dataset)?;
    let bundle = read_model(&a.model)?;
    let k = bundle.bank.len();
    let color = a.color_attr.unwrap_or(a.attr);
    for j in [a.attr, a.attr_y, color] {
        check_attribute(j, k)?;
    }
    let space = a.space.space();
    let planes = hyperplanes(&bundle, space)?;
    let n = a.max_points.min(data.len());
    let rows: Vec<usize> = (0..n).collect();
    let codes = latent(space, Some(&bundle))?.embed(&data.codes().select_rows(&rows), exec())?;
    let (hx, hy) = (&planes[a.attr], &planes[a.attr_y]);
    let points: Vec<Point> = rows
        .iter()
        .map(|&r| Point {
            x: hx.signed_distance(codes.row(r)),
            y: hy.signed_distance(codes.row(r)),
            positive: data.label(r, color) == 1,
        })
        .collect();
    let names = bundle.bank.names();
    let svg = scatter_svg(
        &points,
        &format!("{} space, colored by {}", space.as_str(), names[color]),
        &format!("distance to {} hyperplane", names[a.attr]),
        &format!("distance to {} hyperplane", names[a.attr_y]),
    );
    persist::write_atomic(&a.out, svg.as_bytes()).with_context(|| format!("cannot write plot '{}'", a.out.display()))?;
    println!("plotted {n} points to {}", a.out.display());
    Ok(())
}
