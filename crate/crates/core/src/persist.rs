//! On-disk formats.
//!
//! Both formats are a UTF-8 manifest of `key=value` lines headed by a
//! version line and terminated by an empty line, followed by a binary
//! little-endian payload.
//!
//! `LDS1` (datasets): keys `dim`, `attributes`, `count`, `names`
//! (comma-separated), `provenance`, `seed` (`none` when absent). Payload is
//! `count·dim` `f32` codes row-major, then `count·attributes` label bytes.
//!
//! `NFM1` (models): keys `dim`, `layers`, `hidden`, `parities`, `attributes`,
//! `names`, `bank_frozen`, `svm_original`, `svm_proxy`, `seed`, any number of
//! `config.*` echo keys, then `flow_params`, `bank_params`, `svm_params`.
//! Payload is `f64` values in this order: flow parameters per layer (scale
//! net then translation net, each `weight, bias` for three dense layers,
//! weights `in x out` row-major), then per classifier `weight[dim], bias`,
//! then original-space SVMs and proxy-space SVMs as `weight[dim], bias`.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::classifiers::{ClassifierBank, LinearAttributeClassifier, SvmHyperplane};
use crate::dataset::{LabeledLatentDataset, Provenance};
use crate::error::{Error, Result};
use crate::flow::{CouplingLayer, Dense, FlowModel, Parity, Subnet};
use crate::tensor::Tensor2;

pub const DATASET_VERSION: &str = "LDS1";
pub const MODEL_VERSION: &str = "NFM1";

/// Writes through a temporary sibling file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("'{}' is not a file path", path.display())))?;
    let mut tmp_name = file_name.to_os_string();
    tmp_name.push(format!(".tmp-{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

struct Manifest {
    version: String,
    entries: Vec<(String, String)>,
}

impl Manifest {
    fn get(&self, key: &str) -> Result<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| Error::Format(format!("manifest is missing '{key}'")))
    }

    fn usize(&self, key: &str) -> Result<usize> {
        let v = self.get(key)?;
        v.parse()
            .map_err(|_| Error::Format(format!("manifest '{key}' is not a count: '{v}'")))
    }
}

fn split_manifest<'a>(bytes: &'a [u8], expected: &str) -> Result<(Manifest, &'a [u8])> {
    let end = bytes
        .windows(2)
        .position(|w| w == b"\n\n")
        .ok_or_else(|| Error::Format("manifest terminator not found".into()))?;
    let text = std::str::from_utf8(&bytes[..end]).map_err(|_| Error::Format("manifest is not UTF-8".into()))?;
    let mut lines = text.lines();
    let version = lines.next().unwrap_or_default().to_string();
    if version != expected {
        return Err(Error::Format(format!(
            "unsupported format version '{version}' (expected {expected})"
        )));
    }
    let entries = lines
        .map(|l| {
            l.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| Error::Format(format!("malformed manifest line '{l}'")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((Manifest { version, entries }, &bytes[end + 2..]))
}

fn check_names(names: &[String]) -> Result<()> {
    if let Some(bad) = names
        .iter()
        .find(|n| n.is_empty() || n.contains([',', '\n', '=']))
    {
        return Err(Error::Config(format!("attribute name '{bad}' cannot be stored")));
    }
    Ok(())
}

fn parse_names(m: &Manifest, k: usize) -> Result<Vec<String>> {
    let names: Vec<String> = m.get("names")?.split(',').map(str::to_string).collect();
    if names.len() != k {
        return Err(Error::Format(format!("manifest lists {} names for {k} attributes", names.len())));
    }
    Ok(names)
}

fn expect_len(what: &str, payload: &[u8], expected: usize) -> Result<()> {
    if payload.len() != expected {
        let kind = if payload.len() < expected { "truncated" } else { "oversized" };
        return Err(Error::Format(format!(
            "{kind} {what} payload: expected {expected} bytes, found {}",
            payload.len()
        )));
    }
    Ok(())
}

pub fn encode_dataset(data: &LabeledLatentDataset) -> Result<Vec<u8>> {
    check_names(data.names())?;
    let mut out = format!(
        "{DATASET_VERSION}\ndim={}\nattributes={}\ncount={}\nnames={}\nprovenance={}\nseed={}\n\n",
        data.dim(),
        data.num_attributes(),
        data.len(),
        data.names().join(","),
        data.provenance().as_str(),
        data.seed().map_or("none".to_string(), |s| s.to_string()),
    )
    .into_bytes();
    out.reserve(4 * data.codes().len() + data.labels().len());
    for &v in data.codes().data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out.extend_from_slice(data.labels());
    Ok(out)
}

pub fn decode_dataset(bytes: &[u8]) -> Result<LabeledLatentDataset> {
    let (m, payload) = split_manifest(bytes, DATASET_VERSION)?;
    let (d, k, n) = (m.usize("dim")?, m.usize("attributes")?, m.usize("count")?);
    let names = parse_names(&m, k)?;
    let provenance = Provenance::parse(m.get("provenance")?)?;
    let seed = match m.get("seed")? {
        "none" => None,
        s => Some(s.parse().map_err(|_| Error::Format(format!("bad seed '{s}'")))?),
    };
    expect_len("dataset", payload, 4 * n * d + n * k)?;
    let (code_bytes, labels) = payload.split_at(4 * n * d);
    let codes = code_bytes
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect();
    LabeledLatentDataset::new(Tensor2::new(n, d, codes)?, labels.to_vec(), names, provenance, seed)
}

pub fn save_dataset(path: &Path, data: &LabeledLatentDataset) -> Result<()> {
    write_atomic(path, &encode_dataset(data)?)
}

pub fn load_dataset(path: &Path) -> Result<LabeledLatentDataset> {
    let bytes = fs::read(path).map_err(|e| Error::Format(format!("cannot read dataset '{}': {e}", path.display())))?;
    decode_dataset(&bytes)
}

/// Everything persisted in a model file.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub flow: FlowModel,
    pub bank: ClassifierBank,
    pub svm_original: Vec<SvmHyperplane>,
    pub svm_proxy: Vec<SvmHyperplane>,
    /// Configuration echo written as `config.<key>=<value>`.
    pub config: Vec<(String, String)>,
    pub seed: u64,
}

impl ModelBundle {
    pub fn config_value(&self, key: &str) -> Option<&str> {
        self.config.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

fn push_f64s(out: &mut Vec<u8>, values: impl IntoIterator<Item = f64>) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_model(b: &ModelBundle) -> Result<Vec<u8>> {
    let d = b.flow.dim();
    let k = b.bank.len();
    if b.bank.dim() != d {
        return Err(Error::Dimension(format!("bank D={} vs flow D={d}", b.bank.dim())));
    }
    for (planes, name) in [(&b.svm_original, "original"), (&b.svm_proxy, "proxy")] {
        if !(planes.is_empty() || planes.len() == k) {
            return Err(Error::Config(format!("{} {name} SVMs for {k} attributes", planes.len())));
        }
        if let Some((i, p)) = planes.iter().enumerate().find(|(i, p)| p.attribute != *i || p.weight.len() != d) {
            return Err(Error::Config(format!("{name} SVM {i} is inconsistent (attribute {}, dim {})", p.attribute, p.weight.len())));
        }
    }
    check_names(b.bank.names())?;
    if let Some((key, value)) = b
        .config
        .iter()
        .find(|(k, v)| k.is_empty() || k.contains(['=', '\n']) || v.contains('\n'))
    {
        return Err(Error::Config(format!("config entry '{key}={value}' cannot be stored")));
    }
    let parities: Vec<String> = b.flow.layers().iter().map(|l| l.parity.code().to_string()).collect();
    let flow_params = b.flow.param_count();
    let bank_params = k * (d + 1);
    let svm_params = (b.svm_original.len() + b.svm_proxy.len()) * (d + 1);
    let mut text = format!(
        "{MODEL_VERSION}\ndim={d}\nlayers={}\nhidden={}\nparities={}\nattributes={k}\nnames={}\nbank_frozen={}\nsvm_original={}\nsvm_proxy={}\nseed={}\n",
        b.flow.num_layers(),
        b.flow.hidden(),
        parities.join(","),
        b.bank.names().join(","),
        u8::from(b.bank.is_frozen()),
        b.svm_original.len(),
        b.svm_proxy.len(),
        b.seed,
    );
    for (key, value) in &b.config {
        text.push_str(&format!("config.{key}={value}\n"));
    }
    text.push_str(&format!("flow_params={flow_params}\nbank_params={bank_params}\nsvm_params={svm_params}\n\n"));
    let mut out = text.into_bytes();
    out.reserve(8 * (flow_params + bank_params + svm_params));
    push_f64s(&mut out, b.flow.flat_params());
    for c in b.bank.classifiers() {
        push_f64s(&mut out, c.weight().iter().copied().chain([c.bias()]));
    }
    for p in b.svm_original.iter().chain(&b.svm_proxy) {
        push_f64s(&mut out, p.weight.iter().copied().chain([p.bias]));
    }
    Ok(out)
}

pub fn decode_model(bytes: &[u8]) -> Result<ModelBundle> {
    let (m, payload) = split_manifest(bytes, MODEL_VERSION)?;
    let (d, layers, hidden, k) = (m.usize("dim")?, m.usize("layers")?, m.usize("hidden")?, m.usize("attributes")?);
    let parities = m
        .get("parities")?
        .split(',')
        .map(|p| {
            p.parse::<u8>()
                .ok()
                .and_then(Parity::from_code)
                .ok_or_else(|| Error::Format(format!("bad parity '{p}'")))
        })
        .collect::<Result<Vec<_>>>()?;
    if parities.len() != layers {
        return Err(Error::Format(format!("{} parities for {layers} layers", parities.len())));
    }
    let names = parse_names(&m, k)?;
    let frozen = m.get("bank_frozen")? == "1";
    let (n_orig, n_proxy) = (m.usize("svm_original")?, m.usize("svm_proxy")?);
    let seed = m
        .get("seed")?
        .parse()
        .map_err(|_| Error::Format("bad seed".into()))?;
    let config = m
        .entries
        .iter()
        .filter_map(|(key, v)| key.strip_prefix("config.").map(|s| (s.to_string(), v.clone())))
        .collect();

    if d < 2 || d % 2 != 0 || hidden == 0 {
        return Err(Error::Format(format!("invalid flow shape D={d}, H={hidden}")));
    }
    let half = d / 2;
    let subnet_len = half * hidden + hidden + hidden * hidden + hidden + hidden * half + half;
    let flow_params = layers * 2 * subnet_len;
    let bank_params = k * (d + 1);
    let svm_params = (n_orig + n_proxy) * (d + 1);
    for (key, expected) in [("flow_params", flow_params), ("bank_params", bank_params), ("svm_params", svm_params)] {
        let declared = m.usize(key)?;
        if declared != expected {
            return Err(Error::Format(format!("manifest declares {key}={declared}, shape implies {expected}")));
        }
    }
    expect_len("model", payload, 8 * (flow_params + bank_params + svm_params))?;
    let mut values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
    let mut take = |n: usize| -> Vec<f64> { values.by_ref().take(n).collect() };

    let dense = |take: &mut dyn FnMut(usize) -> Vec<f64>, i: usize, o: usize| -> Result<Dense> {
        Ok(Dense {
            weight: Tensor2::new(i, o, take(i * o))?,
            bias: Tensor2::new(1, o, take(o))?,
        })
    };
    let mut coupling = Vec::with_capacity(layers);
    for parity in parities {
        let mut net = || -> Result<Subnet> {
            Ok(Subnet {
                layers: [
                    dense(&mut take, half, hidden)?,
                    dense(&mut take, hidden, hidden)?,
                    dense(&mut take, hidden, half)?,
                ],
            })
        };
        let scale = net()?;
        let shift = net()?;
        coupling.push(CouplingLayer { parity, scale, shift });
    }
    let flow = FlowModel::from_layers(d, hidden, coupling)?;
    let mut linear = |n: usize| -> Vec<(Vec<f64>, f64)> {
        (0..n)
            .map(|_| {
                let mut v = take(d + 1);
                let b = v.pop().expect("bias");
                (v, b)
            })
            .collect()
    };
    let classifiers = linear(k)
        .into_iter()
        .map(|(w, b)| LinearAttributeClassifier::new(w, b))
        .collect();
    let bank = ClassifierBank::new(names, classifiers, frozen)?;
    let planes = |list: Vec<(Vec<f64>, f64)>| {
        list.into_iter()
            .enumerate()
            .map(|(attribute, (weight, bias))| SvmHyperplane { attribute, weight, bias })
            .collect::<Vec<_>>()
    };
    let svm_original = planes(linear(n_orig));
    let svm_proxy = planes(linear(n_proxy));
    debug_assert_eq!(m.version, MODEL_VERSION);
    Ok(ModelBundle {
        flow,
        bank,
        svm_original,
        svm_proxy,
        config,
        seed,
    })
}

pub fn save_model(path: &Path, bundle: &ModelBundle) -> Result<()> {
    write_atomic(path, &encode_model(bundle)?)
}

pub fn load_model(path: &Path) -> Result<ModelBundle> {
    let bytes = fs::read(path).map_err(|e| Error::Format(format!("cannot read model '{}': {e}", path.display())))?;
    decode_model(&bytes)
}
