use super::optim::{clip_global_norm, optimizer_step, AdamState};
use super::{lr_at, LossCells, ReportRow, SplitName, Stage, StageConfig, TrainData, TrainReport};
use crate::error::{Error, Result};
use crate::grid::{loss_weights, masked_loss_weights, weighted_loss_with, LossMode};
use crate::masking::make_plan;
use crate::model::{forward_graph, Frame2, Model, ModelConfig, ParamGrads};
use crate::synthdata::FieldState;
use crate::tensor::{stream_seed, GaussianRng, Graph};

const SAMPLER_STREAM: u64 = 0x5a4d;
const TRAIN_STREAM: u64 = 0x7a;
const VAL_STREAM: u64 = 0x7a1;

/// Owns the model and optimizer state for one stage. Every random choice is
/// a pure function of `(seed, step)`, so a run resumed from a checkpoint
/// retraces the uninterrupted one exactly.
pub struct Trainer<'a> {
    pub model: Model,
    pub opt: AdamState,
    pub cfg: StageConfig,
    pub step: usize,
    pub report: TrainReport,
    data: &'a TrainData,
    stride: usize,
    starts: usize,
    perm: Option<(usize, Vec<usize>)>,
}

fn add_grads(acc: &mut ParamGrads, g: ParamGrads) {
    for (k, t) in g {
        match acc.get_mut(&k) {
            Some(a) => a
                .data_mut()
                .iter_mut()
                .zip(t.data())
                .for_each(|(x, y)| *x += y),
            None => {
                acc.insert(k, t);
            }
        }
    }
}

fn check_model(cfg: &ModelConfig, data: &TrainData) -> Result<()> {
    if (cfg.vars, cfg.h, cfg.w) != (data.vars.len(), data.grid.h(), data.grid.w()) {
        return Err(Error::Config(format!(
            "model is {}×{}×{}, data is {}×{}×{}",
            cfg.vars,
            cfg.h,
            cfg.w,
            data.vars.len(),
            data.grid.h(),
            data.grid.w()
        )));
    }
    Ok(())
}

impl<'a> Trainer<'a> {
    pub fn new(model: Model, cfg: StageConfig, data: &'a TrainData) -> Result<Self> {
        cfg.validate()?;
        check_model(&model.config, data)?;
        let stride = data.stride(cfg.lead_hours)?;
        let span = stride * Self::span_steps(&cfg);
        if data.train.len() <= span {
            return Err(Error::Contract(format!(
                "training split has {} snapshots, a sample spans {span} steps",
                data.train.len()
            )));
        }
        if data.val.len() <= span {
            return Err(Error::Contract(format!(
                "validation split has {} snapshots, a sample spans {span} steps",
                data.val.len()
            )));
        }
        Ok(Self {
            model,
            opt: AdamState::default(),
            starts: data.train.len() - span,
            cfg,
            step: 0,
            report: TrainReport::default(),
            data,
            stride,
            perm: None,
        })
    }

    fn span_steps(cfg: &StageConfig) -> usize {
        match cfg.stage {
            Stage::Rollout => cfg.n_max,
            _ => 1,
        }
    }

    /// Start index of the `s`-th sample: a fresh permutation of all start
    /// times each epoch.
    fn sample(&mut self, s: usize) -> usize {
        let epoch = s / self.starts;
        if self.perm.as_ref().map(|(e, _)| *e) != Some(epoch) {
            let mut p: Vec<usize> = (0..self.starts).collect();
            GaussianRng::derived(self.cfg.seed, &[SAMPLER_STREAM, epoch as u64]).shuffle(&mut p);
            self.perm = Some((epoch, p));
        }
        self.perm.as_ref().expect("just filled").1[s % self.starts]
    }

    /// Builds one sample's loss on `g` and returns it with the prediction.
    fn sample_loss(
        &self,
        model: &Model,
        g: &mut Graph,
        trainable: bool,
        x0: &FieldState,
        target: &FieldState,
        seed: u64,
    ) -> Result<(crate::model::Bound, crate::tensor::Var, crate::tensor::Var)> {
        let cfg = &model.config;
        let b = model.params.bind(g, trainable);
        let x = g.constant(x0.values.clone());
        let (out, mode, weights) = match self.cfg.stage {
            Stage::Pretrain => {
                let plan = make_plan(cfg.tokens(), self.cfg.mask_ratio, self.cfg.prev_mask_ratio, seed)?;
                let out = forward_graph(
                    g,
                    &b,
                    cfg,
                    x,
                    Frame2::Masked {
                        target: &target.values,
                        plan: &plan,
                    },
                    self.cfg.lead_hours as f64,
                )?;
                let any = out.masked.iter().any(|&m| m);
                let w = if self.cfg.loss_cells == LossCells::Masked && any {
                    masked_loss_weights(&self.data.vars, &self.data.grid, &cfg.cell_flags(&out.masked))?
                } else {
                    loss_weights(&self.data.vars, &self.data.grid)
                };
                (out, LossMode::Mse, w)
            }
            Stage::Finetune | Stage::Rollout => {
                let out = forward_graph(g, &b, cfg, x, Frame2::Blank { seed }, self.cfg.lead_hours as f64)?;
                (out, LossMode::Mae, loss_weights(&self.data.vars, &self.data.grid))
            }
        };
        let loss = weighted_loss_with(g, out.prediction, &target.values, &weights, mode)?;
        Ok((b, loss, out.prediction))
    }

    fn checked(&self, loss: f64, what: &str) -> Result<f64> {
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("{what} loss at step {}", self.step)));
        }
        Ok(loss)
    }

    /// Gradient of the batch-mean loss for inputs `xs` against targets.
    fn batch_grads(&self, pairs: &[(FieldState, FieldState, u64)]) -> Result<(f64, ParamGrads, Vec<FieldState>)> {
        let mut acc = ParamGrads::new();
        let mut total = 0.0;
        let mut preds = Vec::with_capacity(pairs.len());
        let inv = 1.0 / pairs.len() as f64;
        for (x0, target, seed) in pairs {
            let mut g = Graph::new();
            let (b, loss, pred) = self.sample_loss(&self.model, &mut g, true, x0, target, *seed)?;
            let scaled = g.scale(loss, inv)?;
            total += g.value(loss).item() * inv;
            let grads = g.backward(scaled)?;
            add_grads(&mut acc, b.grads(&grads));
            preds.push(FieldState::new(g.value(pred).clone(), target.time)?);
        }
        Ok((total, acc, preds))
    }

    fn apply(&mut self, mut grads: ParamGrads, lr: f64) -> Result<()> {
        if let Some(c) = self.cfg.clip_norm {
            clip_global_norm(&mut grads, c);
        }
        optimizer_step(&mut self.model.params, &grads, &mut self.opt, &self.cfg, lr, self.step)
    }

    pub fn train_step(&mut self) -> Result<f64> {
        let lr = lr_at(self.step, &self.cfg);
        let bs = self.cfg.batch_size;
        let starts: Vec<usize> = (0..bs).map(|b| self.sample(self.step * bs + b)).collect();
        let (seed, step) = (self.cfg.seed, self.step as u64);
        let seed_of = move |b: usize, j: usize| stream_seed(seed, &[TRAIN_STREAM, step, b as u64, j as u64]);
        let loss = match self.cfg.stage {
            Stage::Pretrain | Stage::Finetune => {
                let pairs: Vec<_> = starts
                    .iter()
                    .enumerate()
                    .map(|(b, &s)| {
                        (
                            self.data.train[s].clone(),
                            self.data.train[s + self.stride].clone(),
                            seed_of(b, 0),
                        )
                    })
                    .collect();
                let (loss, grads, _) = self.batch_grads(&pairs)?;
                self.checked(loss, "training")?;
                self.apply(grads, lr)?;
                loss
            }
            Stage::Rollout => {
                // one update per rollout step; predictions are fed back
                // without differentiating through the chain
                let n = self.cfg.horizon_at(self.step);
                let mut inputs: Vec<FieldState> = starts.iter().map(|&s| self.data.train[s].clone()).collect();
                let mut sum = 0.0;
                for j in 1..=n {
                    let pairs: Vec<_> = starts
                        .iter()
                        .zip(&inputs)
                        .enumerate()
                        .map(|(b, (&s, x))| (x.clone(), self.data.train[s + j * self.stride].clone(), seed_of(b, j)))
                        .collect();
                    let (loss, grads, preds) = self.batch_grads(&pairs)?;
                    self.checked(loss, "training")?;
                    self.apply(grads, lr)?;
                    sum += loss;
                    inputs = preds;
                }
                sum / n as f64
            }
        };
        self.report.rows.push(ReportRow {
            step: self.step,
            split: SplitName::Train,
            loss,
        });
        let done = self.step + 1;
        if done == self.cfg.steps || (self.cfg.val_every > 0 && done % self.cfg.val_every == 0) {
            let v = self.validation_loss()?;
            self.report.rows.push(ReportRow {
                step: self.step,
                split: SplitName::Val,
                loss: v,
            });
        }
        self.step = done;
        Ok(loss)
    }

    /// Mean loss over a fixed set of validation samples with fixed seeds.
    pub fn validation_loss(&self) -> Result<f64> {
        let span = self.stride * Self::span_steps(&self.cfg);
        let count = (self.data.val.len() - span).min(self.cfg.val_pairs.max(1));
        let mut total = 0.0;
        for i in 0..count {
            let seed = stream_seed(self.cfg.seed, &[VAL_STREAM, i as u64]);
            total += match self.cfg.stage {
                Stage::Rollout => {
                    let mut x = self.data.val[i].clone();
                    let mut sum = 0.0;
                    for j in 1..=self.cfg.n_max {
                        let mut g = Graph::new();
                        let target = &self.data.val[i + j * self.stride];
                        let (_, loss, pred) = self.sample_loss(&self.model, &mut g, false, &x, target, seed)?;
                        sum += g.value(loss).item();
                        x = FieldState::new(g.value(pred).clone(), target.time)?;
                    }
                    sum / self.cfg.n_max as f64
                }
                _ => {
                    let mut g = Graph::new();
                    let (_, loss, _) =
                        self.sample_loss(&self.model, &mut g, false, &self.data.val[i], &self.data.val[i + span], seed)?;
                    g.value(loss).item()
                }
            };
        }
        self.checked(total / count as f64, "validation")
    }

    pub fn run_until(&mut self, end: usize) -> Result<()> {
        let end = end.min(self.cfg.steps);
        while self.step < end {
            let loss = self.train_step()?;
            if self.step % 100 == 0 {
                log::info!("stage {} step {} loss {loss:.6}", self.cfg.stage as u32, self.step);
            }
        }
        Ok(())
    }

    pub fn run(&mut self) -> Result<()> {
        self.run_until(self.cfg.steps)
    }

    pub(crate) fn restore(&mut self, opt: AdamState, step: usize, report: TrainReport) {
        self.opt = opt;
        self.step = step;
        self.report = report;
    }

    pub fn data(&self) -> &TrainData {
        self.data
    }
}

fn expect_stage(cfg: &StageConfig, stage: Stage) -> Result<()> {
    if cfg.stage != stage {
        return Err(Error::Config(format!(
            "stage {} config passed to stage {} trainer",
            cfg.stage as u32, stage as u32
        )));
    }
    Ok(())
}

/// Trainer for `cfg.stage` starting from `model`. Stage 2 re-initializes the
/// decoder; everything else is carried over.
pub fn stage_trainer<'a>(model: Model, data: &'a TrainData, cfg: &StageConfig) -> Result<Trainer<'a>> {
    let mut model = model;
    if cfg.stage == Stage::Finetune {
        model.reinit_decoder(stream_seed(cfg.seed, &[2]));
    }
    Trainer::new(model, cfg.clone(), data)
}

fn run_stage(model: Model, data: &TrainData, cfg: &StageConfig, stage: Stage) -> Result<(Model, TrainReport)> {
    expect_stage(cfg, stage)?;
    let mut t = stage_trainer(model, data, cfg)?;
    t.run()?;
    Ok((t.model, t.report))
}

/// Siamese masked pre-training from a fresh initialization.
pub fn pretrain_stage1(data: &TrainData, model_cfg: &ModelConfig, cfg: &StageConfig) -> Result<(Model, TrainReport)> {
    let model = Model::init(model_cfg.clone(), cfg.seed)?;
    run_stage(model, data, cfg, Stage::Pretrain)
}

/// Fixed-lead fine-tuning.
pub fn finetune_stage2(model: Model, data: &TrainData, cfg: &StageConfig) -> Result<(Model, TrainReport)> {
    run_stage(model, data, cfg, Stage::Finetune)
}

/// Rolling fine-tuning with a growing horizon.
pub fn finetune_stage3(model: Model, data: &TrainData, cfg: &StageConfig) -> Result<(Model, TrainReport)> {
    run_stage(model, data, cfg, Stage::Rollout)
}
