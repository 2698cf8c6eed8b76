//! The two-frame forecasting network: variable aggregation and patch
//! tokenization, a weight-shared encoder with lead-time AdaLN conditioning,
//! a cross-self decoder and a linear prediction head.

mod blocks;
mod embed;
mod forward;

use std::collections::BTreeMap;

pub use blocks::{adaln_block, attention, decoder_block, AttentionWeights};
pub use embed::{
    aggregate_variables, detokenize, detokenize_index, lead_time_features, tokenize,
    tokenize_index, LEAD_FEATURES,
};
mod checkpoint;

pub use checkpoint::{load_params, save_params};
pub use forward::{
    attention_maps, attention_row, decode, encode, forward, forward_graph, lead_condition, ForwardOutput,
    Frame2,
};

use crate::error::{Error, Result};
use crate::tensor::{GaussianRng, Graph, Tensor, Var};

/// What frame 2 carries when it holds no target information.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Frame2Mode {
    /// Gaussian noise tokens plus the lead-time token embedding.
    Noise,
    /// Zero tokens plus the lead-time token embedding.
    Zeros,
}

impl std::str::FromStr for Frame2Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "noise" => Ok(Frame2Mode::Noise),
            "zeros" => Ok(Frame2Mode::Zeros),
            _ => Err(Error::Config(format!("frame2 must be `noise` or `zeros`, got `{s}`"))),
        }
    }
}

impl std::fmt::Display for Frame2Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Frame2Mode::Noise => "noise",
            Frame2Mode::Zeros => "zeros",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Token width.
    pub d: usize,
    pub patch: usize,
    pub enc_depth: usize,
    pub dec_depth: usize,
    pub heads: usize,
    /// FFN hidden width as a multiple of `d`.
    pub ffn_mult: usize,
    pub vars: usize,
    pub h: usize,
    pub w: usize,
    pub frame2: Frame2Mode,
}

impl ModelConfig {
    /// Small defaults for an `h×w` grid with `vars` variables.
    pub fn desk(vars: usize, h: usize, w: usize) -> Self {
        Self {
            d: 16,
            patch: 2,
            enc_depth: 2,
            dec_depth: 1,
            heads: 2,
            ffn_mult: 2,
            vars,
            h,
            w,
            frame2: Frame2Mode::Noise,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.heads == 0 || self.patch == 0 || self.vars == 0 || self.ffn_mult == 0 {
            return Err(Error::Config("model sizes must be positive".into()));
        }
        if self.d % self.heads != 0 {
            return Err(Error::Config(format!(
                "token width {} is not divisible by {} heads",
                self.d, self.heads
            )));
        }
        if self.w == 0 || self.w % self.patch != 0 {
            return Err(Error::Config(format!(
                "grid width {} is not divisible by patch size {}",
                self.w, self.patch
            )));
        }
        if self.h == 0 {
            return Err(Error::Config("grid height must be positive".into()));
        }
        Ok(())
    }

    /// Height after padding up to a multiple of the patch size.
    pub fn h_pad(&self) -> usize {
        self.h.div_ceil(self.patch) * self.patch
    }

    pub fn tokens(&self) -> usize {
        (self.h_pad() / self.patch) * (self.w / self.patch)
    }

    /// Token holding grid cell `(i, j)`.
    pub fn token_of_cell(&self, i: usize, j: usize) -> usize {
        (i / self.patch) * (self.w / self.patch) + j / self.patch
    }

    /// Per-cell flags (`H×W`, row-major) for cells inside flagged tokens.
    pub fn cell_flags(&self, token_flags: &[bool]) -> Vec<bool> {
        let mut out = Vec::with_capacity(self.h * self.w);
        for i in 0..self.h {
            for j in 0..self.w {
                out.push(token_flags[self.token_of_cell(i, j)]);
            }
        }
        out
    }

    fn ffn(&self) -> usize {
        self.d * self.ffn_mult
    }
}

/// N tokens of width D with per-token mask flags.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenSequence {
    pub tokens: Tensor,
    pub masked: Vec<bool>,
}

impl TokenSequence {
    pub fn unmasked(tokens: Tensor) -> Self {
        let n = tokens.shape()[0];
        Self {
            tokens,
            masked: vec![false; n],
        }
    }

    pub fn len(&self) -> usize {
        self.masked.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masked.is_empty()
    }
}

/// Every learnable tensor, keyed by a dotted name (`enc.0.attn.wq`, ...).
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ModelParams {
    tensors: BTreeMap<String, Tensor>,
}

pub type ParamGrads = BTreeMap<String, Tensor>;

impl ModelParams {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn count(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    /// Registers every tensor in `g`. With `trainable` set they become
    /// differentiable leaves, otherwise constants.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Bound {
        let vars = self
            .tensors
            .iter()
            .map(|(k, t)| {
                let v = if trainable {
                    g.param(t.clone())
                } else {
                    g.constant(t.clone())
                };
                (k.clone(), v)
            })
            .collect();
        Bound { vars }
    }

    /// Checks finiteness and that shapes match what `cfg` expects.
    pub fn validate(&self, cfg: &ModelConfig) -> Result<()> {
        let expected = Model::init(cfg.clone(), 0)?.params;
        for (name, t) in &expected.tensors {
            let have = self
                .tensors
                .get(name)
                .ok_or_else(|| Error::Config(format!("parameter `{name}` is missing")))?;
            if have.shape() != t.shape() {
                return Err(Error::Config(format!(
                    "parameter `{name}` has shape {:?}, expected {:?}",
                    have.shape(),
                    t.shape()
                )));
            }
            if !have.is_finite() {
                return Err(Error::NonFinite(format!("parameter `{name}`")));
            }
        }
        if let Some(extra) = self.tensors.keys().find(|k| !expected.tensors.contains_key(*k)) {
            return Err(Error::Config(format!("unexpected parameter `{extra}`")));
        }
        Ok(())
    }
}

/// Graph handles for a bound [`ModelParams`].
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("parameter `{name}` is not bound"))
    }

    pub fn override_with(&mut self, name: &str, v: Var) {
        self.vars.insert(name.to_string(), v);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    /// Gradient of every parameter (zeros where nothing flowed).
    pub fn grads(&self, g: &crate::tensor::Gradients) -> ParamGrads {
        self.vars
            .iter()
            .map(|(k, &v)| (k.clone(), g.get_or_zeros(v)))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams,
}

struct Init<'a> {
    p: &'a mut ModelParams,
    rng: GaussianRng,
}

impl Init<'_> {
    fn normal(&mut self, name: String, shape: &[usize], std: f64) {
        let t = Tensor::randn(shape, std, &mut self.rng);
        self.p.insert(name, t);
    }

    /// Weight of a `fan_in → fan_out` linear map.
    fn linear(&mut self, name: String, fan_in: usize, fan_out: usize) {
        self.normal(name, &[fan_in, fan_out], 1.0 / (fan_in as f64).sqrt());
    }

    fn zeros(&mut self, name: String, shape: &[usize]) {
        self.p.insert(name, Tensor::zeros(shape));
    }
}

fn init_attention(init: &mut Init, prefix: &str, d: usize) {
    for w in ["wq", "wk", "wv", "wo"] {
        init.linear(format!("{prefix}.{w}"), d, d);
    }
}

fn init_ffn(init: &mut Init, prefix: &str, d: usize, hidden: usize) {
    init.linear(format!("{prefix}.w1"), d, hidden);
    init.zeros(format!("{prefix}.b1"), &[hidden]);
    init.linear(format!("{prefix}.w2"), hidden, d);
    init.zeros(format!("{prefix}.b2"), &[d]);
}

fn init_decoder(init: &mut Init, cfg: &ModelConfig) {
    for l in 0..cfg.dec_depth {
        init_attention(init, &format!("dec.{l}.cross"), cfg.d);
        init_attention(init, &format!("dec.{l}.self"), cfg.d);
        init_ffn(init, &format!("dec.{l}.ffn"), cfg.d, cfg.ffn());
    }
}

impl Model {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let cfg = &config;
        let (d, v, p) = (cfg.d, cfg.vars, cfg.patch);
        let mut params = ModelParams::default();
        let mut init = Init {
            p: &mut params,
            rng: GaussianRng::derived(seed, &[0x1417]),
        };

        init.normal("embed.w".into(), &[v, d], 1.0);
        init.zeros("embed.b".into(), &[v, d]);
        init.normal("agg.query".into(), &[cfg.h * cfg.w, d], 1.0);
        init.linear("agg.wk".into(), d, d);
        init.linear("agg.wv".into(), d, d);
        init.linear("tok.w".into(), d * p * p, d);
        init.zeros("tok.b".into(), &[d]);
        init.normal("pos".into(), &[cfg.tokens(), d], 0.1);

        init.linear("lead.w1".into(), LEAD_FEATURES, d);
        init.zeros("lead.b1".into(), &[d]);
        init.linear("lead.w2".into(), d, d);
        init.zeros("lead.b2".into(), &[d]);
        init.linear("frame2.w".into(), d, d);
        init.zeros("frame2.b".into(), &[d]);

        for l in 0..cfg.enc_depth {
            // zero conditioner: every block starts as the identity
            init.zeros(format!("enc.{l}.ada.w"), &[d, 6 * d]);
            init.zeros(format!("enc.{l}.ada.b"), &[6 * d]);
            init_attention(&mut init, &format!("enc.{l}.attn"), d);
            init_ffn(&mut init, &format!("enc.{l}.ffn"), d, cfg.ffn());
        }
        init_decoder(&mut init, cfg);

        init.normal("head.w".into(), &[d, p * p * v], 0.1 / (d as f64).sqrt());
        init.zeros("head.b".into(), &[p * p * v]);

        Ok(Self { config, params })
    }

    /// Replaces every decoder tensor with a fresh draw, as when moving from
    /// pre-training to fine-tuning.
    pub fn reinit_decoder(&mut self, seed: u64) {
        let mut fresh = ModelParams::default();
        let mut init = Init {
            p: &mut fresh,
            rng: GaussianRng::derived(seed, &[0xdec]),
        };
        init_decoder(&mut init, &self.config);
        for (k, t) in fresh.tensors {
            self.params.insert(k, t);
        }
    }

    /// Randomizes the AdaLN conditioner (normally zero at start); used to
    /// probe lead-time sensitivity.
    pub fn randomize_conditioner(&mut self, seed: u64, std: f64) {
        let mut rng = GaussianRng::derived(seed, &[0xada]);
        for l in 0..self.config.enc_depth {
            for suffix in ["ada.w", "ada.b"] {
                let name = format!("enc.{l}.{suffix}");
                let shape = self.params.get(&name).expect("conditioner exists").shape().to_vec();
                self.params.insert(name, Tensor::randn(&shape, std, &mut rng));
            }
        }
    }
}
