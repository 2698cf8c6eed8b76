use std::rc::Rc;

use super::blocks::{adaln_block, decoder_block, AttentionWeights};
use super::embed::{aggregate_variables, detokenize, lead_time_features, tokenize};
use super::{Bound, Frame2Mode, Model, ModelConfig};
use crate::error::{Error, Result};
use crate::masking::{Frame, MaskPlan, DEFAULT_NOISE_STD};
use crate::synthdata::FieldState;
use crate::tensor::{GaussianRng, Graph, Tensor, Var};

/// What the second frame carries.
#[derive(Clone, Copy, Debug)]
pub enum Frame2<'a> {
    /// Pre-training: the later state with tokens masked per `plan`. The
    /// plan's first-frame mask is applied to frame 1.
    Masked { target: &'a Tensor, plan: &'a MaskPlan },
    /// Fine-tuning and inference: every token replaced according to the
    /// model's [`Frame2Mode`].
    Blank { seed: u64 },
}

pub struct ForwardOutput {
    /// `V×H×W` prediction of the later state.
    pub prediction: Var,
    /// Frame-2 token flags (all true for [`Frame2::Blank`]).
    pub masked: Vec<bool>,
    /// Frame-1 encoder attention, per layer and head.
    pub attention: Vec<Vec<Var>>,
}

/// Lead-time conditioning vector, `1×D`.
pub fn lead_condition(g: &mut Graph, b: &Bound, hours: f64) -> Result<Var> {
    let f = g.constant(lead_time_features(hours));
    let h = g.matmul(f, b.get("lead.w1"))?;
    let h = g.add_row(h, b.get("lead.b1"))?;
    let h = g.silu(h)?;
    let h = g.matmul(h, b.get("lead.w2"))?;
    g.add_row(h, b.get("lead.b2"))
}

fn embed_tokens(g: &mut Graph, b: &Bound, cfg: &ModelConfig, x: Var) -> Result<Var> {
    let e = aggregate_variables(g, b, cfg, x)?;
    tokenize(g, b, cfg, e)
}

/// Replaces the flagged rows of `tokens` (`N×D`) by the rows of `repl`.
fn replace_rows(g: &mut Graph, tokens: Var, flags: &[bool], repl: Var) -> Result<Var> {
    let (n, d) = (flags.len(), g.shape(tokens)[1]);
    if !flags.iter().any(|&f| f) {
        return Ok(tokens);
    }
    let both = g.concat_rows(&[tokens, repl])?;
    let idx: Rc<[usize]> = flags
        .iter()
        .enumerate()
        .flat_map(|(i, &m)| {
            let base = if m { (n + i) * d } else { i * d };
            base..base + d
        })
        .collect();
    g.gather(both, idx, &[n, d])
}

/// Runs both frames through the shared encoder. Returns `(Z₁, Z₂)` and the
/// frame-1 attention per layer.
pub fn encode(
    g: &mut Graph,
    b: &Bound,
    cfg: &ModelConfig,
    frame1: Var,
    frame2: Var,
    cond: Var,
) -> Result<(Var, Var, Vec<Vec<Var>>)> {
    if g.shape(frame1) != g.shape(frame2) {
        return Err(Error::dim(
            "encode",
            format!("frames {:?} and {:?}", g.shape(frame1), g.shape(frame2)),
        ));
    }
    let pos = b.get("pos");
    let mut z1 = g.add(frame1, pos)?;
    let mut z2 = g.add(frame2, pos)?;
    let mut trace = Vec::with_capacity(cfg.enc_depth);
    for l in 0..cfg.enc_depth {
        let (a, probs) = adaln_block(g, b, cfg, l, z1, cond)?;
        z1 = a;
        trace.push(probs);
        z2 = adaln_block(g, b, cfg, l, z2, cond)?.0;
    }
    Ok((z1, z2, trace))
}

pub fn decode(g: &mut Graph, b: &Bound, cfg: &ModelConfig, z1: Var, z2: Var) -> Result<Var> {
    let mut z2 = z2;
    for l in 0..cfg.dec_depth {
        z2 = decoder_block(g, b, cfg, l, z1, z2)?;
    }
    Ok(z2)
}

/// Builds the full network on `g`: aggregate and tokenize both frames,
/// encode, decode, project with the head and scatter back to the grid.
pub fn forward_graph(
    g: &mut Graph,
    b: &Bound,
    cfg: &ModelConfig,
    x0: Var,
    frame2: Frame2,
    lead_hours: f64,
) -> Result<ForwardOutput> {
    let (n, d) = (cfg.tokens(), cfg.d);
    let cond = lead_condition(g, b, lead_hours)?;
    let lt = g.matmul(cond, b.get("frame2.w"))?;
    let lt = g.add_row(lt, b.get("frame2.b"))?;
    let mut t1 = embed_tokens(g, b, cfg, x0)?;

    let (t2, masked) = match frame2 {
        Frame2::Masked { target, plan } => {
            if plan.tokens != n {
                return Err(Error::Contract(format!(
                    "mask plan built for {} tokens, model has {n}",
                    plan.tokens
                )));
            }
            let f1 = plan.flags(Frame::First);
            let noise1 = g.constant(plan.noise(Frame::First, d));
            t1 = replace_rows(g, t1, &f1, noise1)?;
            let x1 = g.constant(target.clone());
            let t2 = embed_tokens(g, b, cfg, x1)?;
            let flags = plan.flags(Frame::Second);
            let noise2 = g.constant(plan.noise(Frame::Second, d));
            let repl = g.add_row(noise2, lt)?;
            (replace_rows(g, t2, &flags, repl)?, flags)
        }
        Frame2::Blank { seed } => {
            let base = match cfg.frame2 {
                Frame2Mode::Noise => {
                    let mut rng = GaussianRng::derived(seed, &[0xb1a]);
                    Tensor::randn(&[n, d], DEFAULT_NOISE_STD, &mut rng)
                }
                Frame2Mode::Zeros => Tensor::zeros(&[n, d]),
            };
            let base = g.constant(base);
            (g.add_row(base, lt)?, vec![true; n])
        }
    };

    let (z1, z2, attention) = encode(g, b, cfg, t1, t2, cond)?;
    let z2 = decode(g, b, cfg, z1, z2)?;
    let out = g.matmul(z2, b.get("head.w"))?;
    let out = g.add_row(out, b.get("head.b"))?;
    let prediction = detokenize(g, cfg, out)?;
    Ok(ForwardOutput {
        prediction,
        masked,
        attention,
    })
}

fn check_state(cfg: &ModelConfig, x: &FieldState) -> Result<()> {
    if x.values.shape() != [cfg.vars, cfg.h, cfg.w] {
        return Err(Error::dim(
            "forward",
            format!(
                "state {:?}, model expects [{}, {}, {}]",
                x.values.shape(),
                cfg.vars,
                cfg.h,
                cfg.w
            ),
        ));
    }
    Ok(())
}

/// Predicts the state `lead_hours` after `x0`.
pub fn forward(model: &Model, x0: &FieldState, frame2: Frame2, lead_hours: u32) -> Result<FieldState> {
    check_state(&model.config, x0)?;
    let mut g = Graph::new();
    let b = model.params.bind(&mut g, false);
    let x = g.constant(x0.values.clone());
    let out = forward_graph(&mut g, &b, &model.config, x, frame2, lead_hours as f64)?;
    FieldState::new(g.value(out.prediction).clone(), x0.time + lead_hours as i64)
}

/// Frame-1 encoder attention of every layer for a blank-frame-2 forward pass.
pub fn attention_maps(model: &Model, x0: &FieldState, lead_hours: u32) -> Result<Vec<AttentionWeights>> {
    check_state(&model.config, x0)?;
    let mut g = Graph::new();
    let b = model.params.bind(&mut g, false);
    let x = g.constant(x0.values.clone());
    let out = forward_graph(&mut g, &b, &model.config, x, Frame2::Blank { seed: 0 }, lead_hours as f64)?;
    Ok(out
        .attention
        .iter()
        .map(|probs| AttentionWeights::collect(&g, probs))
        .collect())
}

/// Head-averaged frame-1 encoder attention of `token` at `layer`.
pub fn attention_row(model: &Model, layer: usize, token: usize, x0: &FieldState, lead_hours: u32) -> Result<Vec<f64>> {
    let cfg = &model.config;
    if layer >= cfg.enc_depth {
        return Err(Error::Contract(format!(
            "layer {layer} out of range for depth {}",
            cfg.enc_depth
        )));
    }
    if token >= cfg.tokens() {
        return Err(Error::Contract(format!(
            "token {token} out of range for {} tokens",
            cfg.tokens()
        )));
    }
    Ok(attention_maps(model, x0, lead_hours)?[layer].row(token))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::masking::make_plan;
    use crate::model::ModelConfig;
    use crate::tensor::grad_check_all;

    fn tiny() -> ModelConfig {
        let mut c = ModelConfig::desk(2, 4, 4);
        c.d = 4;
        c.ffn_mult = 2;
        c.enc_depth = 1;
        c.dec_depth = 1;
        c
    }

    fn state(cfg: &ModelConfig, seed: u64) -> FieldState {
        let mut rng = GaussianRng::new(seed);
        FieldState::new(Tensor::randn(&[cfg.vars, cfg.h, cfg.w], 1.0, &mut rng), 0).unwrap()
    }

    #[test]
    fn zero_conditioner_block_is_identity() {
        let cfg = tiny();
        let m = Model::init(cfg.clone(), 1).unwrap();
        let mut g = Graph::new();
        let b = m.params.bind(&mut g, false);
        let mut rng = GaussianRng::new(2);
        let z = g.constant(Tensor::randn(&[cfg.tokens(), cfg.d], 1.0, &mut rng));
        let cond = lead_condition(&mut g, &b, 6.0).unwrap();
        let (out, _) = adaln_block(&mut g, &b, &cfg, 0, z, cond).unwrap();
        assert_eq!(g.value(out), g.value(z));
    }

    #[test]
    fn lead_time_changes_block_output() {
        let cfg = tiny();
        let mut differs = 0;
        for seed in 0..5 {
            let mut m = Model::init(cfg.clone(), seed).unwrap();
            m.randomize_conditioner(seed, 0.5);
            let mut g = Graph::new();
            let b = m.params.bind(&mut g, false);
            let mut rng = GaussianRng::new(seed + 100);
            let z = g.constant(Tensor::randn(&[cfg.tokens(), cfg.d], 1.0, &mut rng));
            let c6 = lead_condition(&mut g, &b, 6.0).unwrap();
            let c24 = lead_condition(&mut g, &b, 24.0).unwrap();
            let (a, _) = adaln_block(&mut g, &b, &cfg, 0, z, c6).unwrap();
            let (bb, _) = adaln_block(&mut g, &b, &cfg, 0, z, c24).unwrap();
            if g.value(a).max_abs_diff(g.value(bb)) > 1e-6 {
                differs += 1;
            }
        }
        assert_eq!(differs, 5);
    }

    #[test]
    fn conditioning_gradient_checks() {
        let cfg = tiny();
        let mut m = Model::init(cfg.clone(), 3).unwrap();
        m.randomize_conditioner(3, 0.3);
        let mut rng = GaussianRng::new(4);
        let z = Tensor::randn(&[cfg.tokens(), cfg.d], 1.0, &mut rng);
        let cond = Tensor::randn(&[1, cfg.d], 1.0, &mut rng);
        let err = grad_check_all(
            |g, xs| {
                let b = m.params.bind(g, false);
                let (o, _) = adaln_block(g, &b, &cfg, 0, xs[0], xs[1])?;
                let s = g.square(o)?;
                g.sum(s)
            },
            &[z, cond],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn shared_encoder_gives_equal_outputs() {
        let cfg = tiny();
        let mut m = Model::init(cfg.clone(), 5).unwrap();
        m.randomize_conditioner(5, 0.3);
        let mut g = Graph::new();
        let b = m.params.bind(&mut g, false);
        let mut rng = GaussianRng::new(6);
        let t = g.constant(Tensor::randn(&[cfg.tokens(), cfg.d], 1.0, &mut rng));
        let cond = lead_condition(&mut g, &b, 6.0).unwrap();
        let (z1, z2, _) = encode(&mut g, &b, &cfg, t, t, cond).unwrap();
        assert_eq!(g.value(z1), g.value(z2));
    }

    #[test]
    fn depth_zero_encoder_adds_positions() {
        let mut cfg = tiny();
        cfg.enc_depth = 0;
        let m = Model::init(cfg.clone(), 5).unwrap();
        let mut g = Graph::new();
        let b = m.params.bind(&mut g, false);
        let t = g.constant(Tensor::ones(&[cfg.tokens(), cfg.d]));
        let cond = lead_condition(&mut g, &b, 6.0).unwrap();
        let (z1, _, trace) = encode(&mut g, &b, &cfg, t, t, cond).unwrap();
        let want = m.params.get("pos").unwrap().map(|v| v + 1.0);
        assert_eq!(g.value(z1), &want);
        assert!(trace.is_empty());
    }

    #[test]
    fn encode_rejects_length_mismatch() {
        let cfg = tiny();
        let m = Model::init(cfg.clone(), 5).unwrap();
        let mut g = Graph::new();
        let b = m.params.bind(&mut g, false);
        let a = g.constant(Tensor::ones(&[cfg.tokens(), cfg.d]));
        let c = g.constant(Tensor::ones(&[cfg.tokens() - 1, cfg.d]));
        let cond = lead_condition(&mut g, &b, 6.0).unwrap();
        assert!(encode(&mut g, &b, &cfg, a, c, cond).is_err());
    }

    fn zero_decoder(m: &mut Model) {
        for (k, t) in m.params.iter_mut() {
            if k.starts_with("dec.") && (k.ends_with(".wv") || k.contains(".ffn.")) {
                t.data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }

    #[test]
    fn zero_value_decoder_is_identity() {
        let cfg = tiny();
        let mut m = Model::init(cfg.clone(), 7).unwrap();
        zero_decoder(&mut m);
        let mut g = Graph::new();
        let b = m.params.bind(&mut g, false);
        let mut rng = GaussianRng::new(8);
        let z1 = g.constant(Tensor::randn(&[cfg.tokens(), cfg.d], 1.0, &mut rng));
        let z2 = g.constant(Tensor::randn(&[cfg.tokens(), cfg.d], 1.0, &mut rng));
        let out = decode(&mut g, &b, &cfg, z1, z2).unwrap();
        assert_eq!(g.value(out), g.value(z2));
    }

    #[test]
    fn decoder_matches_hand_oracle() {
        // single head, N=2, D=2: only the cross path is active
        let mut cfg = tiny();
        cfg.d = 2;
        cfg.heads = 1;
        let mut m = Model::init(cfg.clone(), 9).unwrap();
        zero_decoder(&mut m);
        let wv = Tensor::new(vec![2, 2], vec![1.0, 0.5, -0.25, 2.0]).unwrap();
        m.params.insert("dec.0.cross.wv", wv.clone());
        let mut g = Graph::new();
        let b = m.params.bind(&mut g, false);
        let z1 = Tensor::new(vec![2, 2], vec![0.3, -1.0, 0.7, 0.2]).unwrap();
        let z2 = Tensor::new(vec![2, 2], vec![-0.5, 0.4, 1.1, 0.9]).unwrap();
        let (v1, v2) = (g.constant(z1.clone()), g.constant(z2.clone()));
        let out = decode(&mut g, &b, &cfg, v1, v2).unwrap();

        let p = |n: &str| m.params.get(n).unwrap().clone();
        let q = z2.matmul(&p("dec.0.cross.wq")).unwrap();
        let k = z1.matmul(&p("dec.0.cross.wk")).unwrap();
        let v = z1.matmul(&wv).unwrap();
        let wo = p("dec.0.cross.wo");
        for i in 0..2 {
            let s: Vec<f64> = (0..2)
                .map(|j| (q.at(&[i, 0]) * k.at(&[j, 0]) + q.at(&[i, 1]) * k.at(&[j, 1])) / 2f64.sqrt())
                .collect();
            let e: Vec<f64> = s.iter().map(|x| x.exp()).collect();
            let a: Vec<f64> = e.iter().map(|x| x / (e[0] + e[1])).collect();
            let att = [a[0] * v.at(&[0, 0]) + a[1] * v.at(&[1, 0]), a[0] * v.at(&[0, 1]) + a[1] * v.at(&[1, 1])];
            for c in 0..2 {
                let want = z2.at(&[i, c]) + att[0] * wo.at(&[0, c]) + att[1] * wo.at(&[1, c]);
                assert!((g.value(out).at(&[i, c]) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cross_attention_reads_frame1() {
        let cfg = tiny();
        let mut m = Model::init(cfg.clone(), 10).unwrap();
        zero_decoder(&mut m);
        let mut rng = GaussianRng::new(11);
        m.params.insert("dec.0.cross.wv", Tensor::randn(&[cfg.d, cfg.d], 1.0, &mut rng));
        let mut g = Graph::new();
        let b = m.params.bind(&mut g, false);
        let z1 = Tensor::randn(&[cfg.tokens(), cfg.d], 1.0, &mut rng);
        let z2 = g.constant(Tensor::randn(&[cfg.tokens(), cfg.d], 1.0, &mut rng));
        let a = g.constant(z1.clone());
        let c = g.constant(z1.map(|v| v + 0.1));
        let oa = decode(&mut g, &b, &cfg, a, z2).unwrap();
        let oc = decode(&mut g, &b, &cfg, c, z2).unwrap();
        assert!(g.value(oa).max_abs_diff(g.value(oc)) > 1e-6);
    }

    #[test]
    fn fresh_model_outputs_are_finite_and_bounded() {
        let cfg = ModelConfig::desk(2, 8, 16);
        for seed in 0..10 {
            let m = Model::init(cfg.clone(), seed).unwrap();
            let x = state(&cfg, seed + 50);
            let y = forward(&m, &x, Frame2::Blank { seed }, 6).unwrap();
            assert_eq!(y.values.shape(), &[2, 8, 16]);
            assert_eq!(y.time, 6);
            assert!(y.values.data().iter().all(|v| v.is_finite() && v.abs() < 1e3));
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let cfg = tiny();
        let m = Model::init(cfg.clone(), 12).unwrap();
        let x = state(&cfg, 13);
        let a = forward(&m, &x, Frame2::Blank { seed: 1 }, 6).unwrap();
        let b = forward(&m, &x, Frame2::Blank { seed: 1 }, 6).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn masked_forward_flags_follow_plan() {
        let cfg = tiny();
        let m = Model::init(cfg.clone(), 12).unwrap();
        let x = state(&cfg, 13);
        let y = state(&cfg, 14);
        let plan = make_plan(cfg.tokens(), 0.75, 0.0, 3).unwrap();
        let mut g = Graph::new();
        let b = m.params.bind(&mut g, false);
        let xv = g.constant(x.values.clone());
        let out = forward_graph(
            &mut g,
            &b,
            &cfg,
            xv,
            Frame2::Masked {
                target: &y.values,
                plan: &plan,
            },
            6.0,
        )
        .unwrap();
        assert_eq!(out.masked, plan.flags(Frame::Second));
        assert_eq!(out.masked.iter().filter(|&&f| f).count(), 3);
    }

    #[test]
    fn attention_rows_are_distributions() {
        let cfg = ModelConfig::desk(2, 8, 16);
        let mut m = Model::init(cfg.clone(), 14).unwrap();
        m.randomize_conditioner(14, 0.3);
        let x = state(&cfg, 15);
        for token in [0, 7, cfg.tokens() - 1] {
            let row = attention_row(&m, 1, token, &x, 6).unwrap();
            assert_eq!(row.len(), cfg.tokens());
            assert!(row.iter().all(|&v| v >= 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        }
        assert!(attention_row(&m, 2, 0, &x, 6).is_err());
        assert!(attention_row(&m, 0, cfg.tokens(), &x, 6).is_err());

        let mut one = ModelConfig::desk(1, 2, 2);
        one.patch = 2;
        let m1 = Model::init(one.clone(), 1).unwrap();
        let x1 = state(&one, 2);
        assert_eq!(attention_row(&m1, 0, 0, &x1, 6).unwrap(), vec![1.0]);
    }

    #[test]
    fn full_model_gradient_checks() {
        let mut cfg = tiny();
        cfg.h = 4;
        cfg.w = 4;
        let mut m = Model::init(cfg.clone(), 16).unwrap();
        m.randomize_conditioner(16, 0.2);
        let x = state(&cfg, 17);
        let y = state(&cfg, 18);
        let plan = make_plan(cfg.tokens(), 0.5, 0.0, 4).unwrap();
        let names: Vec<String> = m.params.names().cloned().collect();
        let xs: Vec<Tensor> = names.iter().map(|n| m.params.get(n).unwrap().clone()).collect();
        let err = grad_check_all(
            |g, vars| {
                let mut b = m.params.bind(g, false);
                for (n, &v) in names.iter().zip(vars) {
                    b.override_with(n, v);
                }
                let xv = g.constant(x.values.clone());
                let out = forward_graph(
                    g,
                    &b,
                    &cfg,
                    xv,
                    Frame2::Masked {
                        target: &y.values,
                        plan: &plan,
                    },
                    6.0,
                )?;
                let t = g.constant(y.values.clone());
                let d = g.sub(out.prediction, t)?;
                let s = g.square(d)?;
                g.mean(s)
            },
            &xs,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-5, "{err}");
    }
}
