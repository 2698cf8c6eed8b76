use super::{Bound, ModelConfig};
use crate::error::Result;
use crate::tensor::{Graph, Tensor, Var, LAYER_NORM_EPS};

/// Post-softmax attention matrices (`N×N`, one per head) of one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionWeights {
    pub heads: Vec<Tensor>,
}

impl AttentionWeights {
    pub(crate) fn collect(g: &Graph, probs: &[Var]) -> Self {
        Self {
            heads: probs.iter().map(|&p| g.value(p).clone()).collect(),
        }
    }

    /// Head-averaged row for one query token.
    pub fn row(&self, token: usize) -> Vec<f64> {
        let n = self.heads[0].shape()[1];
        let mut out = vec![0.0; n];
        for h in &self.heads {
            for (o, v) in out.iter_mut().zip(&h.data()[token * n..(token + 1) * n]) {
                *o += v;
            }
        }
        let k = self.heads.len() as f64;
        out.iter_mut().for_each(|v| *v /= k);
        out
    }
}

/// Multi-head attention with queries from `q_in` and keys/values from
/// `kv_in`, using `{prefix}.wq/wk/wv/wo`. Returns the output and the
/// per-head probability matrices.
pub fn attention(
    g: &mut Graph,
    b: &Bound,
    prefix: &str,
    q_in: Var,
    kv_in: Var,
    heads: usize,
) -> Result<(Var, Vec<Var>)> {
    let q = g.matmul(q_in, b.get(&format!("{prefix}.wq")))?;
    let k = g.matmul(kv_in, b.get(&format!("{prefix}.wk")))?;
    let v = g.matmul(kv_in, b.get(&format!("{prefix}.wv")))?;
    let d = g.shape(q)[1];
    let dh = d / heads;
    let inv = 1.0 / (dh as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    let mut probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (lo, hi) = (h * dh, (h + 1) * dh);
        let qh = g.slice_cols(q, lo, hi)?;
        let kh = g.slice_cols(k, lo, hi)?;
        let vh = g.slice_cols(v, lo, hi)?;
        let kt = g.transpose(kh)?;
        let s = g.matmul(qh, kt)?;
        let s = g.scale(s, inv)?;
        let a = g.softmax_rows(s)?;
        outs.push(g.matmul(a, vh)?);
        probs.push(a);
    }
    let cat = if heads == 1 { outs[0] } else { g.concat_cols(&outs)? };
    Ok((g.matmul(cat, b.get(&format!("{prefix}.wo")))?, probs))
}

fn ffn(g: &mut Graph, b: &Bound, prefix: &str, x: Var) -> Result<Var> {
    let h = g.matmul(x, b.get(&format!("{prefix}.w1")))?;
    let h = g.add_row(h, b.get(&format!("{prefix}.b1")))?;
    let h = g.gelu(h)?;
    let h = g.matmul(h, b.get(&format!("{prefix}.w2")))?;
    g.add_row(h, b.get(&format!("{prefix}.b2")))
}

/// Encoder block `l`: pre-norm attention and FFN, each normalized output
/// shifted/scaled and each residual branch gated by vectors computed from
/// the lead-time conditioning `cond` (`1×D`).
pub fn adaln_block(
    g: &mut Graph,
    b: &Bound,
    cfg: &ModelConfig,
    l: usize,
    z: Var,
    cond: Var,
) -> Result<(Var, Vec<Var>)> {
    let d = cfg.d;
    let c = g.silu(cond)?;
    let m = g.matmul(c, b.get(&format!("enc.{l}.ada.w")))?;
    let m = g.add_row(m, b.get(&format!("enc.{l}.ada.b")))?;
    let mut parts = Vec::with_capacity(6);
    for k in 0..6 {
        parts.push(g.slice_cols(m, k * d, (k + 1) * d)?);
    }
    let ones = g.constant(Tensor::ones(&[d]));
    let zeros = g.constant(Tensor::zeros(&[d]));

    let modulate = |g: &mut Graph, x: Var, shift: Var, scale: Var| -> Result<Var> {
        let h = g.layer_norm(x, ones, zeros, LAYER_NORM_EPS)?;
        let s1 = g.add_scalar(scale, 1.0)?;
        let h = g.mul_row(h, s1)?;
        g.add_row(h, shift)
    };

    let h = modulate(g, z, parts[0], parts[1])?;
    let (a, probs) = attention(g, b, &format!("enc.{l}.attn"), h, h, cfg.heads)?;
    let a = g.mul_row(a, parts[2])?;
    let z = g.add(z, a)?;
    let h = modulate(g, z, parts[3], parts[4])?;
    let f = ffn(g, b, &format!("enc.{l}.ffn"), h)?;
    let f = g.mul_row(f, parts[5])?;
    Ok((g.add(z, f)?, probs))
}

/// Decoder block `l`: cross-attention from `z2` onto `z1`, self-attention
/// over `z2`, then an FFN, each added back to `z2`.
pub fn decoder_block(g: &mut Graph, b: &Bound, cfg: &ModelConfig, l: usize, z1: Var, z2: Var) -> Result<Var> {
    let (c, _) = attention(g, b, &format!("dec.{l}.cross"), z2, z1, cfg.heads)?;
    let z2 = g.add(z2, c)?;
    let (s, _) = attention(g, b, &format!("dec.{l}.self"), z2, z2, cfg.heads)?;
    let z2 = g.add(z2, s)?;
    let f = ffn(g, b, &format!("dec.{l}.ffn"), z2)?;
    g.add(z2, f)
}
