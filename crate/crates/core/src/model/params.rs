use std::collections::BTreeMap;

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::numcore::{Parameter, ParameterSet, SeededRng, Tensor};

pub(crate) const INIT_STD: f64 = 0.02;

// Embedding slots.
pub(crate) const W_E: usize = 0;
pub(crate) const B_E: usize = 1;
pub(crate) const POS: usize = 2;
pub(crate) const CLS: usize = 3;
pub(crate) const EMB_G: usize = 4;
pub(crate) const EMB_B: usize = 5;
pub(crate) const EMBED_SLOTS: usize = 6;

// Per-layer slots, offset from the layer's base index.
pub(crate) const WQ: usize = 0;
pub(crate) const BQ: usize = 1;
// The key projection has no bias: it would shift every score in a softmax row
// by the same amount, so its gradient is identically zero.
pub(crate) const WK: usize = 2;
pub(crate) const WV: usize = 3;
pub(crate) const BV: usize = 4;
pub(crate) const WO: usize = 5;
pub(crate) const BO: usize = 6;
pub(crate) const LN1_G: usize = 7;
pub(crate) const LN1_B: usize = 8;
pub(crate) const W1: usize = 9;
pub(crate) const B1: usize = 10;
pub(crate) const W2: usize = 11;
pub(crate) const B2: usize = 12;
pub(crate) const LN2_G: usize = 13;
pub(crate) const LN2_B: usize = 14;
pub(crate) const LAYER_SLOTS: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Init {
    Normal,
    Zeros,
    Ones,
}

fn layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let (d, h, f) = (cfg.channels, cfg.hidden, cfg.ff_dim);
    let mut out = vec![
        ("embed.proj.weight".to_string(), vec![d, h], Init::Normal),
        ("embed.proj.bias".to_string(), vec![h], Init::Zeros),
        ("embed.position".to_string(), vec![cfg.max_seq_len, h], Init::Normal),
        ("embed.cls".to_string(), vec![h], Init::Normal),
        ("embed.norm.gamma".to_string(), vec![h], Init::Ones),
        ("embed.norm.beta".to_string(), vec![h], Init::Zeros),
    ];
    for l in 0..cfg.layers {
        let p = |s: &str| format!("encoder.{l}.{s}");
        out.extend([
            (p("attn.query.weight"), vec![h, h], Init::Normal),
            (p("attn.query.bias"), vec![h], Init::Zeros),
            (p("attn.key.weight"), vec![h, h], Init::Normal),
            (p("attn.value.weight"), vec![h, h], Init::Normal),
            (p("attn.value.bias"), vec![h], Init::Zeros),
            (p("attn.output.weight"), vec![h, h], Init::Normal),
            (p("attn.output.bias"), vec![h], Init::Zeros),
            (p("attn.norm.gamma"), vec![h], Init::Ones),
            (p("attn.norm.beta"), vec![h], Init::Zeros),
            (p("ffn.inner.weight"), vec![h, f], Init::Normal),
            (p("ffn.inner.bias"), vec![f], Init::Zeros),
            (p("ffn.outer.weight"), vec![f, h], Init::Normal),
            (p("ffn.outer.bias"), vec![h], Init::Zeros),
            (p("ffn.norm.gamma"), vec![h], Init::Ones),
            (p("ffn.norm.beta"), vec![h], Init::Zeros),
        ]);
    }
    out.push(("head.weight".to_string(), vec![h, d], Init::Normal));
    out.push(("head.bias".to_string(), vec![d], Init::Zeros));
    out
}

fn fresh(name: &str, shape: &[usize], init: Init, rng: &SeededRng) -> Tensor {
    match init {
        Init::Zeros => Tensor::zeros(shape),
        Init::Ones => Tensor::full(shape, 1.0),
        Init::Normal => {
            // Each array draws from its own named stream so that partially
            // transferred models get the same fresh values as a cold start.
            let mut r = rng.derive_str(name);
            let mut t = Tensor::zeros(shape);
            t.data_mut()
                .iter_mut()
                .for_each(|v| *v = INIT_STD * r.normal());
            t
        }
    }
}

/// All learnable arrays of the encoder, in a fixed layout order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    cfg: ModelConfig,
    params: Vec<Parameter>,
}

/// Random initialization: weights and the positional table from
/// `Normal(0, 0.02²)`, biases zero, layer-norm gains one.
pub fn init_params(cfg: &ModelConfig, rng: &SeededRng) -> Result<ModelParams> {
    cfg.validate()?;
    let params = layout(cfg)
        .into_iter()
        .map(|(name, shape, init)| {
            let value = fresh(&name, &shape, init, rng);
            Parameter::new(name, value)
        })
        .collect();
    Ok(ModelParams {
        cfg: cfg.clone(),
        params,
    })
}

impl ModelParams {
    pub fn init(cfg: &ModelConfig, rng: &SeededRng) -> Result<Self> {
        init_params(cfg, rng)
    }

    /// Builds parameters from named arrays. Arrays absent from `source` or of
    /// the wrong shape are freshly initialized from `rng`; the returned lists
    /// are the copied and fresh names, in layout order.
    pub fn from_named_partial(
        cfg: &ModelConfig,
        source: &BTreeMap<String, Tensor>,
        rng: &SeededRng,
    ) -> Result<(Self, Vec<String>, Vec<String>)> {
        cfg.validate()?;
        let mut copied = Vec::new();
        let mut fresh_names = Vec::new();
        let params = layout(cfg)
            .into_iter()
            .map(|(name, shape, init)| {
                let value = match source.get(&name) {
                    Some(t) if t.shape() == shape.as_slice() => {
                        copied.push(name.clone());
                        t.clone()
                    }
                    _ => {
                        fresh_names.push(name.clone());
                        fresh(&name, &shape, init, rng)
                    }
                };
                Parameter::new(name, value)
            })
            .collect();
        Ok((
            Self {
                cfg: cfg.clone(),
                params,
            },
            copied,
            fresh_names,
        ))
    }

    /// Builds parameters from a complete set of named arrays.
    pub fn from_named(cfg: &ModelConfig, source: &BTreeMap<String, Tensor>) -> Result<Self> {
        cfg.validate()?;
        let lay = layout(cfg);
        if source.len() != lay.len() {
            return Err(Error::MalformedCheckpoint(format!(
                "expected {} arrays, found {}",
                lay.len(),
                source.len()
            )));
        }
        let params = lay
            .into_iter()
            .map(|(name, shape, _)| {
                let t = source.get(&name).ok_or_else(|| {
                    Error::MalformedCheckpoint(format!("missing array {name}"))
                })?;
                if t.shape() != shape.as_slice() {
                    return Err(Error::shape("ModelParams::from_named", &shape, t.shape()));
                }
                t.ensure_finite(&name)?;
                Ok(Parameter::new(name, t.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            cfg: cfg.clone(),
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params
            .iter_mut()
            .find(|p| p.name == name)
            .map(|p| &mut p.value)
    }

    pub fn named(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|p| (p.name.as_str(), &p.value))
    }

    pub fn to_named(&self) -> BTreeMap<String, Tensor> {
        self.params
            .iter()
            .map(|p| (p.name.clone(), p.value.clone()))
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        self.params.iter_mut().for_each(Parameter::zero_grad);
    }

    pub(crate) fn value(&self, idx: usize) -> &[f64] {
        self.params[idx].value.data()
    }

    pub(crate) fn layer_base(l: usize) -> usize {
        EMBED_SLOTS + l * LAYER_SLOTS
    }

    pub(crate) fn head_base(&self) -> usize {
        EMBED_SLOTS + self.cfg.layers * LAYER_SLOTS
    }
}

impl ParameterSet for ModelParams {
    fn parameters(&self) -> &[Parameter] {
        &self.params
    }

    fn parameters_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }
}
