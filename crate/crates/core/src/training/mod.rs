//! Siamese masked pre-training, fixed-lead fine-tuning and rolling
//! fine-tuning, with AdamW, warmup-cosine schedules and resumable
//! checkpoints.

mod checkpoint;
mod optim;
mod stages;

use std::io::Write;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use optim::{clip_global_norm, optimizer_step, AdamState};
pub use stages::{finetune_stage2, finetune_stage3, pretrain_stage1, stage_trainer, Trainer};

use crate::error::{Error, Result};
use crate::grid::{GridSpec, VariableSet};
use crate::synthdata::{split, DatasetManifest, FieldState, NormStats};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Pretrain = 1,
    Finetune = 2,
    Rollout = 3,
}

impl Stage {
    pub fn from_number(n: u32) -> Result<Self> {
        match n {
            1 => Ok(Stage::Pretrain),
            2 => Ok(Stage::Finetune),
            3 => Ok(Stage::Rollout),
            _ => Err(Error::Config(format!("stage must be 1, 2 or 3, got {n}"))),
        }
    }
}

/// Which cells the stage-1 loss covers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossCells {
    Masked,
    All,
}

impl std::str::FromStr for LossCells {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "masked" => Ok(LossCells::Masked),
            "all" => Ok(LossCells::All),
            _ => Err(Error::Config(format!("loss-cells must be `masked` or `all`, got `{s}`"))),
        }
    }
}

impl std::fmt::Display for LossCells {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossCells::Masked => "masked",
            LossCells::All => "all",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageConfig {
    pub stage: Stage,
    pub lead_hours: u32,
    pub steps: usize,
    pub warmup_steps: usize,
    pub peak_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Frame-2 masking ratio `r_t` (stage 1).
    pub mask_ratio: f64,
    /// Frame-1 masking ratio `r_{t-1}` (stage 1).
    pub prev_mask_ratio: f64,
    pub loss_cells: LossCells,
    /// Longest rolling horizon (stage 3).
    pub n_max: usize,
    /// Steps between horizon increments (stage 3).
    pub cadence: usize,
    pub clip_norm: Option<f64>,
    /// Validation cadence in steps; 0 validates only at the end.
    pub val_every: usize,
    /// Cap on the number of validation pairs.
    pub val_pairs: usize,
    pub seed: u64,
}

impl StageConfig {
    fn base(stage: Stage, lead_hours: u32, steps: usize, seed: u64) -> Self {
        Self {
            stage,
            lead_hours,
            steps,
            warmup_steps: steps / 20,
            peak_lr: 1e-3,
            beta1: 0.9,
            beta2: 0.95,
            weight_decay: 0.01,
            batch_size: 4,
            mask_ratio: 0.75,
            prev_mask_ratio: 0.0,
            loss_cells: LossCells::Masked,
            n_max: 4,
            cadence: steps.max(1),
            clip_norm: Some(1.0),
            val_every: 50,
            val_pairs: 16,
            seed,
        }
    }

    pub fn stage1(lead_hours: u32, seed: u64) -> Self {
        Self::base(Stage::Pretrain, lead_hours, 2000, seed)
    }

    pub fn stage2(lead_hours: u32, seed: u64) -> Self {
        Self::base(Stage::Finetune, lead_hours, 1000, seed)
    }

    pub fn stage3(lead_hours: u32, seed: u64) -> Self {
        let mut c = Self::base(Stage::Rollout, lead_hours, 200, seed);
        c.peak_lr = 1e-4;
        c.warmup_steps = 0;
        c.cadence = 50;
        c
    }

    /// Sets the step count and rescales warmup to a twentieth of it.
    pub fn with_steps(mut self, steps: usize) -> Self {
        self.steps = steps;
        if self.stage != Stage::Rollout {
            self.warmup_steps = steps / 20;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.warmup_steps > self.steps {
            return fail(format!("warmup {} exceeds {} steps", self.warmup_steps, self.steps));
        }
        if self.batch_size == 0 {
            return fail("batch size must be positive".into());
        }
        if self.lead_hours == 0 {
            return fail("lead time must be positive".into());
        }
        if !(self.peak_lr >= 0.0 && self.peak_lr.is_finite()) {
            return fail(format!("bad learning rate {}", self.peak_lr));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return fail("betas must lie in [0, 1)".into());
        }
        for r in [self.mask_ratio, self.prev_mask_ratio] {
            if !(0.0..=1.0).contains(&r) {
                return fail(format!("mask ratio {r} outside [0, 1]"));
            }
        }
        if self.stage == Stage::Rollout && (self.n_max < 2 || self.cadence == 0) {
            return fail("stage 3 needs n_max >= 2 and a positive cadence".into());
        }
        Ok(())
    }

    /// Rolling horizon in force at `step` (stage 3): 2, then one more every
    /// `cadence` steps, capped at `n_max`.
    pub fn horizon_at(&self, step: usize) -> usize {
        (2 + step / self.cadence.max(1)).min(self.n_max)
    }

    pub fn to_kv(&self) -> Vec<(String, String)> {
        [
            ("stage", (self.stage as u32).to_string()),
            ("lead_hours", self.lead_hours.to_string()),
            ("steps", self.steps.to_string()),
            ("warmup_steps", self.warmup_steps.to_string()),
            ("peak_lr", format!("{:?}", self.peak_lr)),
            ("beta1", format!("{:?}", self.beta1)),
            ("beta2", format!("{:?}", self.beta2)),
            ("weight_decay", format!("{:?}", self.weight_decay)),
            ("batch_size", self.batch_size.to_string()),
            ("mask_ratio", format!("{:?}", self.mask_ratio)),
            ("prev_mask_ratio", format!("{:?}", self.prev_mask_ratio)),
            ("loss_cells", self.loss_cells.to_string()),
            ("n_max", self.n_max.to_string()),
            ("cadence", self.cadence.to_string()),
            (
                "clip_norm",
                self.clip_norm.map_or("off".to_string(), |c| format!("{c:?}")),
            ),
            ("val_every", self.val_every.to_string()),
            ("val_pairs", self.val_pairs.to_string()),
            ("seed", self.seed.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    /// Overrides fields from `key=value` pairs; later pairs win.
    pub fn apply_kv(&mut self, kv: &[(String, String)]) -> Result<()> {
        fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Config(format!("bad value `{v}` for `{k}`")))
        }
        for (k, v) in kv {
            let v = v.as_str();
            match k.as_str() {
                "stage" => self.stage = Stage::from_number(num(k, v)?)?,
                "lead_hours" => self.lead_hours = num(k, v)?,
                "steps" => self.steps = num(k, v)?,
                "warmup_steps" => self.warmup_steps = num(k, v)?,
                "peak_lr" => self.peak_lr = num(k, v)?,
                "beta1" => self.beta1 = num(k, v)?,
                "beta2" => self.beta2 = num(k, v)?,
                "weight_decay" => self.weight_decay = num(k, v)?,
                "batch_size" => self.batch_size = num(k, v)?,
                "mask_ratio" => self.mask_ratio = num(k, v)?,
                "prev_mask_ratio" => self.prev_mask_ratio = num(k, v)?,
                "loss_cells" => self.loss_cells = v.parse()?,
                "n_max" => self.n_max = num(k, v)?,
                "cadence" => self.cadence = num(k, v)?,
                "clip_norm" => {
                    self.clip_norm = if v == "off" { None } else { Some(num(k, v)?) }
                }
                "val_every" => self.val_every = num(k, v)?,
                "val_pairs" => self.val_pairs = num(k, v)?,
                "seed" => self.seed = num(k, v)?,
                _ => return Err(Error::Config(format!("unknown training key `{k}`"))),
            }
        }
        Ok(())
    }
}

/// Learning rate at `step`: linear warmup to the peak, then cosine decay to
/// zero at `cfg.steps`. Stage 3 uses the peak throughout.
pub fn lr_at(step: usize, cfg: &StageConfig) -> f64 {
    if cfg.stage == Stage::Rollout {
        return cfg.peak_lr;
    }
    if step < cfg.warmup_steps {
        return cfg.peak_lr * step as f64 / cfg.warmup_steps as f64;
    }
    let span = cfg.steps.saturating_sub(cfg.warmup_steps);
    if span == 0 || step >= cfg.steps {
        return if step >= cfg.steps { 0.0 } else { cfg.peak_lr };
    }
    let t = (step - cfg.warmup_steps) as f64 / span as f64;
    0.5 * cfg.peak_lr * (1.0 + (std::f64::consts::PI * t).cos())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitName {
    Train,
    Val,
}

impl SplitName {
    fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Val => "val",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub step: usize,
    pub split: SplitName,
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct TrainReport {
    pub rows: Vec<ReportRow>,
}

impl TrainReport {
    pub fn train_losses(&self) -> Vec<f64> {
        self.of(SplitName::Train)
    }

    pub fn val_losses(&self) -> Vec<f64> {
        self.of(SplitName::Val)
    }

    fn of(&self, s: SplitName) -> Vec<f64> {
        self.rows.iter().filter(|r| r.split == s).map(|r| r.loss).collect()
    }

    pub fn final_val(&self) -> Option<f64> {
        self.val_losses().last().copied()
    }

    /// Final validation loss minus the mean training loss over the last
    /// tenth of the steps.
    pub fn gap(&self) -> Option<f64> {
        let train = self.train_losses();
        if train.is_empty() {
            return None;
        }
        let tail = (train.len() / 10).max(1);
        let late = train[train.len() - tail..].iter().sum::<f64>() / tail as f64;
        Some(self.final_val()? - late)
    }

    pub fn write_csv(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "step,split,loss")?;
        for r in &self.rows {
            writeln!(out, "{},{},{:?}", r.step, r.split.as_str(), r.loss)?;
        }
        Ok(())
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate().skip(1) {
            let bad = || Error::Parse {
                line: i + 1,
                detail: format!("bad report row `{line}`"),
            };
            let mut f = line.split(',');
            let (Some(step), Some(split), Some(loss), None) = (f.next(), f.next(), f.next(), f.next()) else {
                return Err(bad());
            };
            let split = match split {
                "train" => SplitName::Train,
                "val" => SplitName::Val,
                _ => return Err(bad()),
            };
            rows.push(ReportRow {
                step: step.parse().map_err(|_| bad())?,
                split,
                loss: loss.parse().map_err(|_| bad())?,
            });
        }
        Ok(Self { rows })
    }
}

/// Normalized train/validation snapshots plus the metadata training needs.
#[derive(Clone, Debug)]
pub struct TrainData {
    pub grid: GridSpec,
    pub vars: VariableSet,
    pub step_hours: u32,
    pub train: Vec<FieldState>,
    pub val: Vec<FieldState>,
    pub test: Vec<FieldState>,
    pub norm: NormStats,
}

pub const TRAIN_FRAC: f64 = 0.7;
pub const VAL_FRAC: f64 = 0.15;

impl TrainData {
    /// Chronological split, then standardization with training statistics.
    pub fn new(m: &DatasetManifest, data: &[FieldState]) -> Result<Self> {
        let s = split(data, TRAIN_FRAC, VAL_FRAC)?;
        let norm = NormStats::fit(&s.train, &m.variables)?;
        let apply = |v: &[FieldState]| v.iter().map(|x| norm.apply(x)).collect::<Vec<_>>();
        Ok(Self {
            grid: m.grid.clone(),
            vars: m.variables.clone(),
            step_hours: m.step_hours,
            train: apply(&s.train),
            val: apply(&s.val),
            test: apply(&s.test),
            norm,
        })
    }

    /// Snapshots per lead time; errors unless `lead_hours` is a positive
    /// multiple of the dataset step.
    pub fn stride(&self, lead_hours: u32) -> Result<usize> {
        if lead_hours == 0 || lead_hours % self.step_hours != 0 {
            return Err(Error::Config(format!(
                "lead time {lead_hours} h is not a multiple of the {} h dataset step",
                self.step_hours
            )));
        }
        Ok((lead_hours / self.step_hours) as usize)
    }
}
