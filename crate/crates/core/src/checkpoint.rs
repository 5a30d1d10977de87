//! Checkpoint files: one JSON header line, then the tensors as
//! concatenated PFTENSOR records in the order the header lists them.
//!
//! ```text
//! {"format":"predflow-checkpoint","version":1,"kind":"linear","meta":{...},"tensors":["weight",...]}\n
//! PFTENSOR ... PFTENSOR ...
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::distributions::DiagGaussian;
use crate::error::{Error, Result};
use crate::flows::ConstantAffine;
use crate::inference::{InferenceNet, IterativeMode};
use crate::models::{ConditionalGaussian, DeepLatentModel, GenerativeModel, LinearGaussianModel, Link};
use crate::nn::{Activation, Layer, Mlp};
use crate::tensor::{read_tensor, write_tensor, Tensor};

const FORMAT: &str = "predflow-checkpoint";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    kind: String,
    meta: Map<String, Value>,
    tensors: Vec<String>,
}

/// Named tensors plus JSON metadata.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub kind: String,
    pub meta: Map<String, Value>,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn new(kind: &str) -> Self {
        Self { kind: kind.to_string(), ..Self::default() }
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.push((name.into(), t));
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::BadFormat(format!("checkpoint has no tensor `{name}`")))
    }

    fn vector(&self, name: &str) -> Result<Vec<f64>> {
        Ok(self.tensor(name)?.data().to_vec())
    }

    fn meta<T: for<'de> Deserialize<'de>>(&self, key: &str) -> Result<T> {
        let v = self.meta.get(key).ok_or_else(|| Error::BadFormat(format!("checkpoint meta lacks `{key}`")))?;
        serde_json::from_value(v.clone()).map_err(|e| Error::BadFormat(format!("meta `{key}`: {e}")))
    }

    fn expect_kind(&self, kinds: &[&str]) -> Result<()> {
        if !kinds.contains(&self.kind.as_str()) {
            return Err(Error::BadFormat(format!("expected a {} checkpoint, found `{}`", kinds.join("/"), self.kind)));
        }
        Ok(())
    }

    pub fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        let header = Header {
            format: FORMAT.into(),
            version: VERSION,
            kind: self.kind.clone(),
            meta: self.meta.clone(),
            tensors: self.tensors.iter().map(|(n, _)| n.clone()).collect(),
        };
        serde_json::to_writer(&mut *w, &header)?;
        w.write_all(b"\n")?;
        for (_, t) in &self.tensors {
            write_tensor(w, t)?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(r: &mut R) -> Result<Self> {
        let mut line = String::new();
        r.read_line(&mut line)?;
        let header: Header =
            serde_json::from_str(line.trim_end()).map_err(|e| Error::BadFormat(format!("checkpoint header: {e}")))?;
        if header.format != FORMAT || header.version != VERSION {
            return Err(Error::BadFormat(format!("unsupported checkpoint {} v{}", header.format, header.version)));
        }
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for name in header.tensors {
            let t = read_tensor(r)?;
            tensors.push((name, t));
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::BadFormat("trailing bytes after last tensor".into()));
        }
        Ok(Self { kind: header.kind, meta: header.meta, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read(&mut BufReader::new(File::open(path)?))
    }

    fn push_mlp(&mut self, prefix: &str, net: &Mlp) {
        let acts: Vec<Activation> = net.layers().iter().map(|l| l.activation).collect();
        self.meta.insert(prefix.to_string(), json!(acts));
        for (i, l) in net.layers().iter().enumerate() {
            self.push(format!("{prefix}.{i}.weight"), l.weight.clone());
            self.push(format!("{prefix}.{i}.bias"), Tensor::vector(l.bias.clone()));
        }
    }

    fn mlp(&self, prefix: &str) -> Result<Mlp> {
        let acts: Vec<Activation> = self.meta(prefix)?;
        let layers = acts
            .into_iter()
            .enumerate()
            .map(|(i, activation)| {
                Ok(Layer {
                    weight: self.tensor(&format!("{prefix}.{i}.weight"))?.clone(),
                    bias: self.vector(&format!("{prefix}.{i}.bias"))?,
                    activation,
                })
            })
            .collect::<Result<_>>()?;
        Mlp::new(layers)
    }

    fn push_conditional(&mut self, prefix: &str, g: &ConditionalGaussian) {
        self.push_mlp(&format!("{prefix}.net"), &g.net);
        if let Some(l) = &g.log_std {
            self.push(format!("{prefix}.log_std"), Tensor::vector(l.clone()));
        }
    }

    fn conditional(&self, prefix: &str) -> Result<ConditionalGaussian> {
        let name = format!("{prefix}.log_std");
        let log_std = self.tensors.iter().any(|(n, _)| *n == name).then(|| self.vector(&name)).transpose()?;
        ConditionalGaussian::new(self.mlp(&format!("{prefix}.net"))?, log_std)
    }

    fn push_affine(&mut self, prefix: &str, f: &ConstantAffine) {
        self.push(format!("{prefix}.shift"), Tensor::vector(f.shift().to_vec()));
        self.push(format!("{prefix}.scale"), f.scale().clone());
        self.push(format!("{prefix}.inverse_scale"), f.inverse_scale().clone());
    }

    fn affine(&self, prefix: &str) -> Result<ConstantAffine> {
        ConstantAffine::with_inverse(
            self.vector(&format!("{prefix}.shift"))?,
            self.tensor(&format!("{prefix}.scale"))?.clone(),
            self.tensor(&format!("{prefix}.inverse_scale"))?.clone(),
        )
    }
}

impl From<&GenerativeModel> for Checkpoint {
    fn from(model: &GenerativeModel) -> Self {
        match model {
            GenerativeModel::Linear(m) => {
                let mut c = Checkpoint::new("linear");
                c.meta.insert("link".into(), json!(m.link));
                c.push("weight", m.weight.clone());
                c.push("bias", Tensor::vector(m.bias.clone()));
                c.push("obs_std", Tensor::vector(m.obs_std.clone()));
                c.push("prior_mean", Tensor::vector(m.prior_mean.clone()));
                c.push("prior_std", Tensor::vector(m.prior_std.clone()));
                c
            }
            GenerativeModel::Deep(m) => {
                let mut c = Checkpoint::new("deep");
                c.meta.insert("priors".into(), json!(m.priors.len()));
                c.meta.insert("obs_flows".into(), json!(m.obs_flow.len()));
                c.push("top_prior.mean", Tensor::vector(m.top_prior.mean.clone()));
                c.push("top_prior.log_std", Tensor::vector(m.top_prior.log_std.clone()));
                for (l, p) in m.priors.iter().enumerate() {
                    c.push_conditional(&format!("prior{l}"), p);
                }
                c.push_conditional("likelihood", &m.likelihood);
                for (i, f) in m.obs_flow.iter().enumerate() {
                    c.push_affine(&format!("obs_flow{i}"), f);
                }
                c
            }
        }
    }
}

impl TryFrom<&Checkpoint> for GenerativeModel {
    type Error = Error;

    fn try_from(c: &Checkpoint) -> Result<Self> {
        c.expect_kind(&["linear", "deep"])?;
        if c.kind == "linear" {
            let link: Link = c.meta("link")?;
            let m = LinearGaussianModel::new(
                c.tensor("weight")?.clone(),
                c.vector("bias")?,
                c.vector("obs_std")?,
                c.vector("prior_mean")?,
                c.vector("prior_std")?,
                link,
            )?;
            return Ok(m.into());
        }
        let n_priors: usize = c.meta("priors")?;
        let n_flows: usize = c.meta("obs_flows")?;
        let top = DiagGaussian::new(c.vector("top_prior.mean")?, c.vector("top_prior.log_std")?)?;
        let priors = (0..n_priors).map(|l| c.conditional(&format!("prior{l}"))).collect::<Result<_>>()?;
        let flows = (0..n_flows).map(|i| c.affine(&format!("obs_flow{i}"))).collect::<Result<_>>()?;
        Ok(DeepLatentModel::new(top, priors, c.conditional("likelihood")?, flows)?.into())
    }
}

impl From<&ConstantAffine> for Checkpoint {
    fn from(f: &ConstantAffine) -> Self {
        let mut c = Checkpoint::new("affine");
        c.push_affine("flow", f);
        c
    }
}

impl TryFrom<&Checkpoint> for ConstantAffine {
    type Error = Error;

    fn try_from(c: &Checkpoint) -> Result<Self> {
        c.expect_kind(&["affine"])?;
        c.affine("flow")
    }
}

impl From<&InferenceNet> for Checkpoint {
    fn from(net: &InferenceNet) -> Self {
        match net {
            InferenceNet::Direct { net, dims } => {
                let mut c = Checkpoint::new("direct_net");
                c.meta.insert("dims".into(), json!(dims));
                c.push_mlp("net", net);
                c
            }
            InferenceNet::Iterative { net, mode, dims } => {
                let mut c = Checkpoint::new("iterative_net");
                c.meta.insert("dims".into(), json!(dims));
                c.meta.insert("mode".into(), json!(mode));
                c.push_mlp("net", net);
                c
            }
            InferenceNet::Plain { step } => {
                let mut c = Checkpoint::new("plain_net");
                c.meta.insert("step".into(), json!(step));
                c
            }
        }
    }
}

impl TryFrom<&Checkpoint> for InferenceNet {
    type Error = Error;

    fn try_from(c: &Checkpoint) -> Result<Self> {
        c.expect_kind(&["direct_net", "iterative_net", "plain_net"])?;
        Ok(match c.kind.as_str() {
            "direct_net" => InferenceNet::Direct { net: c.mlp("net")?, dims: c.meta("dims")? },
            "iterative_net" => {
                let mode: IterativeMode = c.meta("mode")?;
                InferenceNet::Iterative { net: c.mlp("net")?, mode, dims: c.meta("dims")? }
            }
            _ => InferenceNet::Plain { step: c.meta("step")? },
        })
    }
}
