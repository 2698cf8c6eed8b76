//! Command-line front end. Every subcommand resolves its options from
//! schema defaults, an optional `--config` file and flags (in that order)
//! before doing any work, and echoes the result into its reports.

mod commands;
mod config;

pub use config::{load_config, RunConfig, AUTO};

use std::ffi::OsString;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

pub const VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

const SUBCOMMANDS: &str = "gen-data, pretrain, finetune, rollout, ensemble, evaluate, theory, spectrum";

#[derive(Parser, Debug)]
#[command(name = "baguan", version, about = "Siamese masked-autoencoder weather emulator at desk scale")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic advection-diffusion dataset
    GenData(GenDataArgs),
    /// Stage-1 Siamese masked pre-training
    Pretrain(TrainArgs),
    /// Stage-2 fixed-lead or stage-3 rolling fine-tuning
    Finetune(TrainArgs),
    /// Autoregressive forecast along one lead-time composition
    Rollout(RolloutArgs),
    /// Mean of every lead-time composition reaching a target horizon
    Ensemble(EnsembleArgs),
    /// Latitude-weighted RMSE and ACC per variable and lead time
    Evaluate(EvaluateArgs),
    /// Ridge regression with and without denoising pre-training
    Theory(TheoryArgs),
    /// Attention-energy spectrum of one token
    Spectrum(SpectrumArgs),
}

type Pairs = Vec<(String, String)>;

fn push<T: ToString>(v: &mut Pairs, key: &str, x: &Option<T>) {
    if let Some(x) = x {
        v.push((key.to_string(), x.to_string()));
    }
}

fn defaults(pairs: &[(&str, &str)]) -> Pairs {
    pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    /// key=value file; flags override it
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    pub out: Option<String>,
    /// Latitude rows [cells, default 8]
    #[arg(long)]
    pub h: Option<usize>,
    /// Longitude columns [cells, default 16]
    #[arg(long)]
    pub w: Option<usize>,
    /// Number of variables [default 3]
    #[arg(long)]
    pub vars: Option<usize>,
    /// Number of snapshots, 6 h apart [default 200]
    #[arg(long)]
    pub steps: Option<usize>,
    /// Master seed [default 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Additive noise standard deviation [field units, default 0.02]
    #[arg(long)]
    pub noise: Option<f64>,
}

impl GenDataArgs {
    fn schema() -> Pairs {
        defaults(&[
            ("out", ""),
            ("h", "8"),
            ("w", "16"),
            ("vars", "3"),
            ("steps", "200"),
            ("seed", "0"),
            ("noise", AUTO),
        ])
    }

    fn flags(&self) -> Pairs {
        let mut v = Vec::new();
        push(&mut v, "out", &self.out);
        push(&mut v, "h", &self.h);
        push(&mut v, "w", &self.w);
        push(&mut v, "vars", &self.vars);
        push(&mut v, "steps", &self.steps);
        push(&mut v, "seed", &self.seed);
        push(&mut v, "noise", &self.noise);
        v
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// key=value file; flags override it
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Dataset directory written by gen-data
    #[arg(long, value_name = "DIR")]
    pub data: Option<String>,
    /// Training stage: 1 pre-train, 2 fixed-lead, 3 rolling [default 1 for pretrain, 2 for finetune]
    #[arg(long)]
    pub stage: Option<u32>,
    /// Checkpoint to start from (finetune) or to resume (with --resume)
    #[arg(long, value_name = "DIR")]
    pub ckpt_in: Option<String>,
    /// Checkpoint directory to write
    #[arg(long, value_name = "DIR")]
    pub ckpt_out: Option<String>,
    /// Continue the run stored in --ckpt-in with its own stage settings
    #[arg(long)]
    pub resume: bool,
    /// Loss-curve CSV (step,split,loss)
    #[arg(long, value_name = "FILE")]
    pub report: Option<String>,
    /// Forecast lead time [hours, default 6]
    #[arg(long)]
    pub lead_hours: Option<u32>,
    /// Optimizer steps [default 2000 / 1000 / 200 by stage]
    #[arg(long)]
    pub steps: Option<usize>,
    /// Linear warmup [steps, default steps/20, 0 in stage 3]
    #[arg(long)]
    pub warmup_steps: Option<usize>,
    /// Peak learning rate [default 1e-3, 1e-4 in stage 3]
    #[arg(long)]
    pub peak_lr: Option<f64>,
    /// Adam first-moment decay [default 0.9]
    #[arg(long)]
    pub beta1: Option<f64>,
    /// Adam second-moment decay [default 0.95]
    #[arg(long)]
    pub beta2: Option<f64>,
    /// Decoupled weight decay [default 0.01]
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Samples per step [default 4]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Frame-2 masking ratio; ablation grid 0.5, 0.75, 0.95, 0.99 [fraction, default 0.75]
    #[arg(long)]
    pub mask_ratio: Option<f64>,
    /// Frame-1 masking ratio [fraction, default 0]
    #[arg(long)]
    pub prev_mask_ratio: Option<f64>,
    /// Pre-training loss cells: masked or all [default masked]
    #[arg(long)]
    pub loss_cells: Option<String>,
    /// Longest rolling horizon in stage 3 [model applications, default 4]
    #[arg(long)]
    pub n_max: Option<usize>,
    /// Steps between horizon increments in stage 3 [steps, default 50]
    #[arg(long)]
    pub cadence: Option<usize>,
    /// Global gradient-norm clip, or `off` [default 1.0]
    #[arg(long)]
    pub clip_norm: Option<String>,
    /// Validation cadence; 0 validates only at the end [steps, default 50]
    #[arg(long)]
    pub val_every: Option<usize>,
    /// Cap on validation pairs [default 16]
    #[arg(long)]
    pub val_pairs: Option<usize>,
    /// Master seed [default 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Token width of a fresh model [default 16]
    #[arg(long)]
    pub d: Option<usize>,
    /// Patch edge [cells, default 2]
    #[arg(long)]
    pub patch: Option<usize>,
    /// Encoder blocks [default 2]
    #[arg(long)]
    pub enc_depth: Option<usize>,
    /// Decoder blocks [default 1]
    #[arg(long)]
    pub dec_depth: Option<usize>,
    /// Attention heads [default 2]
    #[arg(long)]
    pub heads: Option<usize>,
    /// Feed-forward width multiple [default 2]
    #[arg(long)]
    pub ffn_mult: Option<usize>,
    /// Frame-2 input when fine-tuning and forecasting: noise or zeros [default noise]
    #[arg(long)]
    pub frame2: Option<String>,
}

pub(crate) const TRAIN_KEYS: [&str; 17] = [
    "lead-hours",
    "steps",
    "warmup-steps",
    "peak-lr",
    "beta1",
    "beta2",
    "weight-decay",
    "batch-size",
    "mask-ratio",
    "prev-mask-ratio",
    "loss-cells",
    "n-max",
    "cadence",
    "clip-norm",
    "val-every",
    "val-pairs",
    "seed",
];

pub(crate) const MODEL_KEYS: [&str; 7] = ["d", "patch", "enc-depth", "dec-depth", "heads", "ffn-mult", "frame2"];

impl TrainArgs {
    fn schema(stage: u32) -> Pairs {
        let mut v = defaults(&[
            ("data", ""),
            ("stage", &stage.to_string()),
            ("ckpt-in", ""),
            ("ckpt-out", ""),
            ("resume", "false"),
            ("report", ""),
        ]);
        for k in TRAIN_KEYS.iter().chain(&MODEL_KEYS) {
            let d = match *k {
                "lead-hours" => "6",
                "seed" => "0",
                _ => AUTO,
            };
            v.push((k.to_string(), d.to_string()));
        }
        v
    }

    fn flags(&self) -> Pairs {
        let mut v = Vec::new();
        push(&mut v, "data", &self.data);
        push(&mut v, "stage", &self.stage);
        push(&mut v, "ckpt-in", &self.ckpt_in);
        push(&mut v, "ckpt-out", &self.ckpt_out);
        if self.resume {
            v.push(("resume".into(), "true".into()));
        }
        push(&mut v, "report", &self.report);
        push(&mut v, "lead-hours", &self.lead_hours);
        push(&mut v, "steps", &self.steps);
        push(&mut v, "warmup-steps", &self.warmup_steps);
        push(&mut v, "peak-lr", &self.peak_lr);
        push(&mut v, "beta1", &self.beta1);
        push(&mut v, "beta2", &self.beta2);
        push(&mut v, "weight-decay", &self.weight_decay);
        push(&mut v, "batch-size", &self.batch_size);
        push(&mut v, "mask-ratio", &self.mask_ratio);
        push(&mut v, "prev-mask-ratio", &self.prev_mask_ratio);
        push(&mut v, "loss-cells", &self.loss_cells);
        push(&mut v, "n-max", &self.n_max);
        push(&mut v, "cadence", &self.cadence);
        push(&mut v, "clip-norm", &self.clip_norm);
        push(&mut v, "val-every", &self.val_every);
        push(&mut v, "val-pairs", &self.val_pairs);
        push(&mut v, "seed", &self.seed);
        push(&mut v, "d", &self.d);
        push(&mut v, "patch", &self.patch);
        push(&mut v, "enc-depth", &self.enc_depth);
        push(&mut v, "dec-depth", &self.dec_depth);
        push(&mut v, "heads", &self.heads);
        push(&mut v, "ffn-mult", &self.ffn_mult);
        push(&mut v, "frame2", &self.frame2);
        v
    }
}

#[derive(Args, Debug)]
pub struct RolloutArgs {
    /// key=value file; flags override it
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Dataset directory; forecasts start from its test split
    #[arg(long, value_name = "DIR")]
    pub data: Option<String>,
    /// Comma-separated fine-tuned checkpoint directories, one per lead time
    #[arg(long, value_name = "DIR,...")]
    pub ckpt: Option<String>,
    /// Lead-time steps, e.g. 6,6,6,6 [hours]
    #[arg(long, value_name = "H,...")]
    pub comp: Option<String>,
    /// Initial conditions to score; 0 uses every one [default 8]
    #[arg(long)]
    pub samples: Option<usize>,
    /// Directory for predicted fields of the first initial condition
    #[arg(long, value_name = "DIR")]
    pub out: Option<String>,
    /// CSV of RMSE per member and variable
    #[arg(long, value_name = "FILE")]
    pub report: Option<String>,
}

impl RolloutArgs {
    fn schema() -> Pairs {
        defaults(&[
            ("data", ""),
            ("ckpt", ""),
            ("comp", ""),
            ("samples", "8"),
            ("out", ""),
            ("report", ""),
        ])
    }

    fn flags(&self) -> Pairs {
        let mut v = Vec::new();
        push(&mut v, "data", &self.data);
        push(&mut v, "ckpt", &self.ckpt);
        push(&mut v, "comp", &self.comp);
        push(&mut v, "samples", &self.samples);
        push(&mut v, "out", &self.out);
        push(&mut v, "report", &self.report);
        v
    }
}

#[derive(Args, Debug)]
pub struct EnsembleArgs {
    /// key=value file; flags override it
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Dataset directory; forecasts start from its test split
    #[arg(long, value_name = "DIR")]
    pub data: Option<String>,
    /// Comma-separated fine-tuned checkpoint directories, one per lead time
    #[arg(long, value_name = "DIR,...")]
    pub ckpt: Option<String>,
    /// Target horizon [hours, default 48]
    #[arg(long)]
    pub target_hours: Option<u32>,
    /// Longest composition kept [model applications, default 8]
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Initial conditions to score; 0 uses every one [default 8]
    #[arg(long)]
    pub samples: Option<usize>,
    /// Directory for the mean and member fields of the first initial condition
    #[arg(long, value_name = "DIR")]
    pub out: Option<String>,
    /// CSV of RMSE per member and variable
    #[arg(long, value_name = "FILE")]
    pub report: Option<String>,
}

impl EnsembleArgs {
    fn schema() -> Pairs {
        defaults(&[
            ("data", ""),
            ("ckpt", ""),
            ("target-hours", "48"),
            ("max-iters", "8"),
            ("samples", "8"),
            ("out", ""),
            ("report", ""),
        ])
    }

    fn flags(&self) -> Pairs {
        let mut v = Vec::new();
        push(&mut v, "data", &self.data);
        push(&mut v, "ckpt", &self.ckpt);
        push(&mut v, "target-hours", &self.target_hours);
        push(&mut v, "max-iters", &self.max_iters);
        push(&mut v, "samples", &self.samples);
        push(&mut v, "out", &self.out);
        push(&mut v, "report", &self.report);
        v
    }
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// key=value file; flags override it
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Dataset directory; scored on its test split
    #[arg(long, value_name = "DIR")]
    pub data: Option<String>,
    /// Comma-separated fine-tuned checkpoint directories, one per lead time
    #[arg(long, value_name = "DIR,...")]
    pub ckpt: Option<String>,
    /// Lead times to score [hours, default: those of the checkpoints]
    #[arg(long, value_name = "H,...")]
    pub leads: Option<String>,
    /// Longest rollout used to reach a lead [model applications, default 8]
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Initial conditions to score; 0 uses every one [default 0]
    #[arg(long)]
    pub samples: Option<usize>,
    /// Metrics CSV (variable,lead_hours,rmse,acc)
    #[arg(long, value_name = "FILE")]
    pub report: Option<String>,
}

impl EvaluateArgs {
    fn schema() -> Pairs {
        defaults(&[
            ("data", ""),
            ("ckpt", ""),
            ("leads", AUTO),
            ("max-iters", "8"),
            ("samples", "0"),
            ("report", ""),
        ])
    }

    fn flags(&self) -> Pairs {
        let mut v = Vec::new();
        push(&mut v, "data", &self.data);
        push(&mut v, "ckpt", &self.ckpt);
        push(&mut v, "leads", &self.leads);
        push(&mut v, "max-iters", &self.max_iters);
        push(&mut v, "samples", &self.samples);
        push(&mut v, "report", &self.report);
        v
    }
}

#[derive(Args, Debug)]
pub struct TheoryArgs {
    /// key=value file; flags override it
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Input dimension [default 256]
    #[arg(long)]
    pub d: Option<usize>,
    /// Rank of the target subspace, at most d/4 [default 8]
    #[arg(long)]
    pub k: Option<usize>,
    /// Training samples per trial [default 64]
    #[arg(long)]
    pub n: Option<usize>,
    /// Monte-Carlo trials [default 200]
    #[arg(long)]
    pub trials: Option<usize>,
    /// Master seed [default 1]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Spectrum scale R in eigenvalues R²/√k [default 10]
    #[arg(long)]
    pub scale: Option<f64>,
    /// Label noise standard deviation [default 0.5]
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Denoising noise variance [default: median eigenvalue]
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Ridge coefficient [default 1/√n]
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Sample norm bound [default 1.5·√tr Σ]
    #[arg(long)]
    pub radius: Option<f64>,
    /// Bound failure probability [default 0.05]
    #[arg(long)]
    pub delta: Option<f64>,
    /// Sample sizes for the error-rate fit, e.g. 64,128,256 [default: none]
    #[arg(long, value_name = "N,...")]
    pub n_grid: Option<String>,
    /// Trials per rate-fit sample size [default 40]
    #[arg(long)]
    pub grid_trials: Option<usize>,
    /// Per-trial CSV
    #[arg(long, value_name = "FILE")]
    pub report: Option<String>,
}

impl TheoryArgs {
    fn schema() -> Pairs {
        defaults(&[
            ("d", "256"),
            ("k", "8"),
            ("n", "64"),
            ("trials", "200"),
            ("seed", "1"),
            ("scale", "10"),
            ("sigma", "0.5"),
            ("gamma", AUTO),
            ("lambda", AUTO),
            ("radius", AUTO),
            ("delta", "0.05"),
            ("n-grid", ""),
            ("grid-trials", "40"),
            ("report", ""),
        ])
    }

    fn flags(&self) -> Pairs {
        let mut v = Vec::new();
        push(&mut v, "d", &self.d);
        push(&mut v, "k", &self.k);
        push(&mut v, "n", &self.n);
        push(&mut v, "trials", &self.trials);
        push(&mut v, "seed", &self.seed);
        push(&mut v, "scale", &self.scale);
        push(&mut v, "sigma", &self.sigma);
        push(&mut v, "gamma", &self.gamma);
        push(&mut v, "lambda", &self.lambda);
        push(&mut v, "radius", &self.radius);
        push(&mut v, "delta", &self.delta);
        push(&mut v, "n-grid", &self.n_grid);
        push(&mut v, "grid-trials", &self.grid_trials);
        push(&mut v, "report", &self.report);
        v
    }
}

#[derive(Args, Debug)]
pub struct SpectrumArgs {
    /// key=value file; flags override it
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Checkpoint directory
    #[arg(long, value_name = "DIR")]
    pub ckpt: Option<String>,
    /// Dataset directory; inputs come from its validation split
    #[arg(long, value_name = "DIR")]
    pub data: Option<String>,
    /// Encoder layer index or `last` [default last]
    #[arg(long)]
    pub layer: Option<String>,
    /// Query token index or `center` [default center]
    #[arg(long)]
    pub token: Option<String>,
    /// Lead time fed to the conditioner [hours, default: the checkpoint's]
    #[arg(long)]
    pub lead_hours: Option<u32>,
    /// Inputs averaged [default 8]
    #[arg(long)]
    pub samples: Option<usize>,
    /// CSV of cumulative energy per top-k% of tokens
    #[arg(long, value_name = "FILE")]
    pub report: Option<String>,
}

impl SpectrumArgs {
    fn schema() -> Pairs {
        defaults(&[
            ("ckpt", ""),
            ("data", ""),
            ("layer", "last"),
            ("token", "center"),
            ("lead-hours", AUTO),
            ("samples", "8"),
            ("report", ""),
        ])
    }

    fn flags(&self) -> Pairs {
        let mut v = Vec::new();
        push(&mut v, "ckpt", &self.ckpt);
        push(&mut v, "data", &self.data);
        push(&mut v, "layer", &self.layer);
        push(&mut v, "token", &self.token);
        push(&mut v, "lead-hours", &self.lead_hours);
        push(&mut v, "samples", &self.samples);
        push(&mut v, "report", &self.report);
        v
    }
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenData(_) => "gen-data",
            Command::Pretrain(_) => "pretrain",
            Command::Finetune(_) => "finetune",
            Command::Rollout(_) => "rollout",
            Command::Ensemble(_) => "ensemble",
            Command::Evaluate(_) => "evaluate",
            Command::Theory(_) => "theory",
            Command::Spectrum(_) => "spectrum",
        }
    }

    fn parts(&self) -> (Option<&PathBuf>, Pairs, Pairs) {
        match self {
            Command::GenData(a) => (a.config.as_ref(), GenDataArgs::schema(), a.flags()),
            Command::Pretrain(a) => (a.config.as_ref(), TrainArgs::schema(1), a.flags()),
            Command::Finetune(a) => (a.config.as_ref(), TrainArgs::schema(2), a.flags()),
            Command::Rollout(a) => (a.config.as_ref(), RolloutArgs::schema(), a.flags()),
            Command::Ensemble(a) => (a.config.as_ref(), EnsembleArgs::schema(), a.flags()),
            Command::Evaluate(a) => (a.config.as_ref(), EvaluateArgs::schema(), a.flags()),
            Command::Theory(a) => (a.config.as_ref(), TheoryArgs::schema(), a.flags()),
            Command::Spectrum(a) => (a.config.as_ref(), SpectrumArgs::schema(), a.flags()),
        }
    }

    /// Merges defaults, the config file and flags.
    pub fn resolve(&self) -> crate::Result<RunConfig> {
        let (file, schema, flags) = self.parts();
        let file_kv = match file {
            Some(p) => load_config(p)?,
            None => Vec::new(),
        };
        RunConfig::resolve(self.name(), schema, &file_kv, &flags)
    }
}

/// Parses `argv` (program name first), runs one subcommand and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                ErrorKind::InvalidSubcommand => {
                    eprintln!("valid subcommands: {SUBCOMMANDS}");
                    EXIT_USAGE
                }
                _ => EXIT_USAGE,
            };
        }
    };
    let cfg = match cli.command.resolve() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    match commands::execute(&cfg) {
        Ok(()) => EXIT_OK,
        Err(commands::Failure::Usage(e)) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
        Err(commands::Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn help_and_bad_input_exit_codes() {
        assert_eq!(run(["baguan", "--help"]), EXIT_OK);
        assert_eq!(run(["baguan", "pretrain", "--help"]), EXIT_OK);
        assert_eq!(run(["baguan", "pretrain", "--no-such-flag"]), EXIT_USAGE);
        assert_eq!(run(["baguan", "frobnicate"]), EXIT_USAGE);
        assert_eq!(run(["baguan", "theory", "--k", "100"]), EXIT_USAGE);
        assert_eq!(run(["baguan", "gen-data"]), EXIT_USAGE);
    }

    #[test]
    fn flag_overrides_file_in_resolved_config() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.kv");
        std::fs::write(&p, "d=32\nk=4\n").unwrap();
        let cli = Cli::try_parse_from(["baguan", "theory", "--config", p.to_str().unwrap(), "--k", "6"]).unwrap();
        let c = cli.command.resolve().unwrap();
        assert_eq!(c.raw("d"), "32");
        assert_eq!(c.raw("k"), "6");
        assert!(c.header().contains("# k=6\n"));
    }

    #[test]
    fn every_schema_key_has_a_flag() {
        let help = {
            use clap::CommandFactory;
            let mut cmd = Cli::command();
            let mut out = String::new();
            for sub in cmd.get_subcommands_mut() {
                out.push_str(&sub.render_long_help().to_string());
            }
            out
        };
        for schema in [
            GenDataArgs::schema(),
            TrainArgs::schema(1),
            RolloutArgs::schema(),
            EnsembleArgs::schema(),
            EvaluateArgs::schema(),
            TheoryArgs::schema(),
            SpectrumArgs::schema(),
        ] {
            for (k, _) in schema {
                assert!(help.contains(&format!("--{k}")), "{k}");
            }
        }
    }
}
