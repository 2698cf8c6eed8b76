use std::rc::Rc;

use super::{Bound, ModelConfig};
use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

/// Width of the sinusoidal lead-time feature vector.
pub const LEAD_FEATURES: usize = 8;

const LEAD_PERIODS: [f64; 4] = [12.0, 48.0, 192.0, 768.0];

/// `1×8` sin/cos features of the lead time in hours.
pub fn lead_time_features(hours: f64) -> Tensor {
    let mut f = Vec::with_capacity(LEAD_FEATURES);
    for p in LEAD_PERIODS {
        let a = std::f64::consts::TAU * hours / p;
        f.push(a.sin());
        f.push(a.cos());
    }
    Tensor::from_parts(vec![1, LEAD_FEATURES], f)
}

/// Per grid point, the learnable query attends over the `V` variable
/// embeddings at that point. `x` is `V×H×W`; the result is `(H·W)×D`.
pub fn aggregate_variables(g: &mut Graph, b: &Bound, cfg: &ModelConfig, x: Var) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    if shape != [cfg.vars, cfg.h, cfg.w] {
        return Err(Error::dim(
            "aggregate_variables",
            format!("field {shape:?}, model expects [{}, {}, {}]", cfg.vars, cfg.h, cfg.w),
        ));
    }
    let (hw, d) = (cfg.h * cfg.w, cfg.d);
    let query = b.get("agg.query");
    let (ew, eb) = (b.get("embed.w"), b.get("embed.b"));
    let inv = 1.0 / (d as f64).sqrt();
    let mut scores = Vec::with_capacity(cfg.vars);
    let mut values = Vec::with_capacity(cfg.vars);
    for v in 0..cfg.vars {
        let col = g.gather(x, (v * hw..(v + 1) * hw).collect(), &[hw, 1])?;
        let w_v = g.gather(ew, (v * d..(v + 1) * d).collect(), &[1, d])?;
        let b_v = g.gather(eb, (v * d..(v + 1) * d).collect(), &[d])?;
        let e = g.matmul(col, w_v)?;
        let e = g.add_row(e, b_v)?;
        let k = g.matmul(e, b.get("agg.wk"))?;
        let qk = g.mul(query, k)?;
        let s = g.row_sum(qk)?;
        scores.push(g.scale(s, inv)?);
        values.push(g.matmul(e, b.get("agg.wv"))?);
    }
    let s = g.concat_cols(&scores)?;
    let a = g.softmax_rows(s)?;
    let mut out = None;
    for (v, val) in values.into_iter().enumerate() {
        let a_v = g.slice_cols(a, v, v + 1)?;
        let term = g.mul_col(val, a_v)?;
        out = Some(match out {
            None => term,
            Some(acc) => g.add(acc, term)?,
        });
    }
    Ok(out.expect("at least one variable"))
}

/// Flat gather index taking an `(H·W)×C` grid (row `i·W+j`) to
/// `N×(p²·C)` patches. Rows past the last latitude repeat it.
pub fn tokenize_index(h: usize, w: usize, p: usize, c: usize) -> Vec<usize> {
    let hp = h.div_ceil(p) * p;
    let mut idx = Vec::with_capacity(hp * w * c);
    for ti in 0..hp / p {
        for tj in 0..w / p {
            for di in 0..p {
                let i = (ti * p + di).min(h - 1);
                for dj in 0..p {
                    let j = tj * p + dj;
                    idx.extend((0..c).map(|k| (i * w + j) * c + k));
                }
            }
        }
    }
    idx
}

/// Flat gather index taking `N×(p²·V)` patch values to a `V×H×W` field;
/// pad rows are dropped.
pub fn detokenize_index(h: usize, w: usize, p: usize, v: usize) -> Vec<usize> {
    let row = p * p * v;
    let mut idx = Vec::with_capacity(v * h * w);
    for k in 0..v {
        for i in 0..h {
            for j in 0..w {
                let t = (i / p) * (w / p) + j / p;
                idx.push(t * row + ((i % p) * p + j % p) * v + k);
            }
        }
    }
    idx
}

/// Patchifies an `(H·W)×D` embedding and projects each patch to `D`.
pub fn tokenize(g: &mut Graph, b: &Bound, cfg: &ModelConfig, emb: Var) -> Result<Var> {
    let (p, d) = (cfg.patch, cfg.d);
    let patches = g.gather(
        emb,
        Rc::from(tokenize_index(cfg.h, cfg.w, p, d)),
        &[cfg.tokens(), p * p * d],
    )?;
    let t = g.matmul(patches, b.get("tok.w"))?;
    g.add_row(t, b.get("tok.b"))
}

/// Scatters `N×(p²·V)` head outputs back onto the `V×H×W` grid.
pub fn detokenize(g: &mut Graph, cfg: &ModelConfig, patches: Var) -> Result<Var> {
    g.gather(
        patches,
        Rc::from(detokenize_index(cfg.h, cfg.w, cfg.patch, cfg.vars)),
        &[cfg.vars, cfg.h, cfg.w],
    )
}
