use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{ModelConfig, NormKind, TcnShape};
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// `U(-bound, bound)` with `bound = sqrt(1 / fan_in)`.
    Uniform { fan_in: usize },
    Constant(f64),
    /// Zero except the forget-gate block (`[h, 2h)` of `i, f, g, o`), which is 1.
    LstmBias { hidden: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    fn new(name: impl Into<String>, shape: &[usize], init: Init) -> Self {
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            init,
        }
    }
}

fn uniform(fan_in: usize) -> Init {
    Init::Uniform { fan_in }
}

fn norm_specs(out: &mut Vec<ParamSpec>, prefix: &str, channels: usize) {
    out.push(ParamSpec::new(format!("{prefix}.gain"), &[channels], Init::Constant(1.0)));
    out.push(ParamSpec::new(format!("{prefix}.bias"), &[channels], Init::Constant(0.0)));
}

fn conv_specs(out: &mut Vec<ParamSpec>, prefix: &str, cout: usize, cin_per_group: usize, k: usize, bias: bool) {
    let fan_in = cin_per_group * k;
    out.push(ParamSpec::new(format!("{prefix}.weight"), &[cout, cin_per_group, k], uniform(fan_in)));
    if bias {
        out.push(ParamSpec::new(format!("{prefix}.bias"), &[cout], uniform(fan_in)));
    }
}

pub(crate) fn tcn_specs(out: &mut Vec<ParamSpec>, prefix: &str, t: &TcnShape) {
    let gln = t.norm == NormKind::Global;
    if gln {
        norm_specs(out, &format!("{prefix}.input_norm"), t.in_channels);
    }
    conv_specs(out, &format!("{prefix}.bottleneck"), t.bottleneck, t.in_channels, 1, true);
    for i in 0..t.blocks * t.repeats {
        let p = format!("{prefix}.blocks.{i}");
        conv_specs(out, &format!("{p}.conv_in"), t.hidden, t.bottleneck, 1, true);
        out.push(ParamSpec::new(format!("{p}.prelu1.slope"), &[t.hidden], Init::Constant(0.25)));
        if gln {
            norm_specs(out, &format!("{p}.norm1"), t.hidden);
        }
        conv_specs(out, &format!("{p}.depthwise"), t.hidden, 1, t.kernel, true);
        out.push(ParamSpec::new(format!("{p}.prelu2.slope"), &[t.hidden], Init::Constant(0.25)));
        if gln {
            norm_specs(out, &format!("{p}.norm2"), t.hidden);
        }
        conv_specs(out, &format!("{p}.conv_out"), t.bottleneck, t.hidden, 1, true);
    }
    out.push(ParamSpec::new(format!("{prefix}.output_prelu.slope"), &[t.bottleneck], Init::Constant(0.25)));
    conv_specs(out, &format!("{prefix}.mask"), t.out_channels, t.bottleneck, 1, true);
}

impl ModelConfig {
    /// Every parameter in initialisation order.
    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut out = Vec::new();
        match self {
            ModelConfig::Tasnet(c) => {
                let (n, l) = (c.encoder_filters, c.filter_len);
                out.push(ParamSpec::new("encoder.weight", &[n, 1, l], uniform(l)));
                tcn_specs(&mut out, "tcn", &c.tcn());
                out.push(ParamSpec::new("decoder.weight", &[n, 1, l], uniform(l)));
            }
            ModelConfig::FdConv(c) => tcn_specs(&mut out, "tcn", &c.tcn()),
            ModelConfig::FdBlstm(c) => {
                let h = c.hidden_units;
                let bins = c.win_len / 2 + 1;
                for layer in 0..c.num_layers {
                    let input = if layer == 0 { bins } else { 2 * h };
                    for dir in ["fwd", "bwd"] {
                        let p = format!("blstm.{layer}.{dir}");
                        out.push(ParamSpec::new(format!("{p}.w_ih"), &[input, 4 * h], uniform(input)));
                        out.push(ParamSpec::new(format!("{p}.w_hh"), &[h, 4 * h], uniform(h)));
                        out.push(ParamSpec::new(format!("{p}.bias"), &[4 * h], Init::LstmBias { hidden: h }));
                    }
                }
                let outputs = c.num_outputs * bins;
                out.push(ParamSpec::new("output.weight", &[2 * h, outputs], uniform(2 * h)));
                out.push(ParamSpec::new("output.bias", &[outputs], uniform(2 * h)));
            }
        }
        out
    }
}

/// Named parameter tensors of one model.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelParams {
    tensors: BTreeMap<String, Tensor>,
}

impl ModelParams {
    pub fn from_map(tensors: BTreeMap<String, Tensor>) -> Self {
        Self { tensors }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Option<Tensor> {
        self.tensors.insert(name.into(), value)
    }

    /// Parameters in name order.
    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    /// Puts every parameter on `tape`, as leaves when `trainable`.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> ParamVars {
        let vars = self
            .tensors
            .iter()
            .map(|(k, t)| {
                let v = if trainable {
                    tape.leaf(t.clone())
                } else {
                    tape.constant(t.clone())
                };
                (k.clone(), v)
            })
            .collect();
        ParamVars { vars }
    }

    /// Verifies names and shapes against `config`.
    pub fn check(&self, config: &ModelConfig) -> Result<()> {
        let specs = config.param_specs();
        for spec in &specs {
            match self.tensors.get(&spec.name) {
                None => {
                    return Err(Error::CheckpointShape {
                        name: spec.name.clone(),
                        expected: spec.shape.clone(),
                        found: vec![],
                    })
                }
                Some(t) if t.shape() != spec.shape.as_slice() => {
                    return Err(Error::CheckpointShape {
                        name: spec.name.clone(),
                        expected: spec.shape.clone(),
                        found: t.shape().to_vec(),
                    })
                }
                Some(t) if !t.is_finite() => return Err(Error::NonFinite(format!("parameter `{}`", spec.name))),
                Some(_) => {}
            }
        }
        if specs.len() != self.tensors.len() {
            let extra = self
                .tensors
                .keys()
                .find(|k| !specs.iter().any(|s| &s.name == *k))
                .cloned()
                .unwrap_or_default();
            return Err(Error::CheckpointFormat(format!("unexpected parameter `{extra}`")));
        }
        Ok(())
    }
}

/// Parameter handles on one tape.
#[derive(Debug, Clone)]
pub struct ParamVars {
    vars: BTreeMap<String, Var>,
}

impl ParamVars {
    /// Pairs parameter names with handles already on a tape.
    pub fn from_pairs(names: impl IntoIterator<Item = String>, vars: &[Var]) -> Self {
        Self {
            vars: names.into_iter().zip(vars.iter().copied()).collect(),
        }
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("missing parameter `{name}`")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }
}

/// Draws parameters for `config` from a generator seeded with `seed`.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<ModelParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tensors = BTreeMap::new();
    for spec in config.param_specs() {
        let n: usize = spec.shape.iter().product();
        let data: Vec<f64> = match spec.init {
            Init::Uniform { fan_in } => {
                let bound = (1.0 / fan_in as f64).sqrt();
                (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
            }
            Init::Constant(v) => vec![v; n],
            Init::LstmBias { hidden } => (0..n)
                .map(|i| if (hidden..2 * hidden).contains(&i) { 1.0 } else { 0.0 })
                .collect(),
        };
        tensors.insert(spec.name, Tensor::new(spec.shape, data)?);
    }
    Ok(ModelParams { tensors })
}
