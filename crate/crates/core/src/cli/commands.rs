use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::{info, warn};

use super::{RunConfig, MODEL_KEYS, TRAIN_KEYS};
use crate::error::{Error, Result};
use crate::forecast::{ensemble_forecast, rollout, EnsemblePlan};
use crate::format::{self, Dtype};
use crate::grid::{acc, rmse, write_metrics_csv, Climatology, GridSpec, MetricRow};
use crate::model::{Model, ModelConfig};
use crate::synthdata::{generate, load_dataset, save_dataset, split, DatasetManifest, FieldState, NormStats};
use crate::theory::{attention_spectrum, center_token, run_experiment, TheoryConfig};
use crate::training::{load_checkpoint, save_checkpoint, stage_trainer, Stage, StageConfig, TrainData, Trainer};
use crate::training::{TRAIN_FRAC, VAL_FRAC};

pub enum Failure {
    Usage(Error),
    Runtime(Error),
}

trait Classify<T> {
    fn usage(self) -> std::result::Result<T, Failure>;
    fn runtime(self) -> std::result::Result<T, Failure>;
}

impl<T> Classify<T> for Result<T> {
    fn usage(self) -> std::result::Result<T, Failure> {
        self.map_err(Failure::Usage)
    }

    fn runtime(self) -> std::result::Result<T, Failure> {
        self.map_err(Failure::Runtime)
    }
}

type Outcome = std::result::Result<(), Failure>;

pub fn execute(c: &RunConfig) -> Outcome {
    match c.command.as_str() {
        "gen-data" => gen_data(c),
        "pretrain" => train(c, true),
        "finetune" => train(c, false),
        "rollout" => rollout_cmd(c),
        "ensemble" => ensemble_cmd(c),
        "evaluate" => evaluate_cmd(c),
        "theory" => theory_cmd(c),
        "spectrum" => spectrum_cmd(c),
        other => Err(Failure::Usage(Error::Config(format!("unknown subcommand `{other}`")))),
    }
}

fn write_report(path: &Path, header: &str, body: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Result<()> {
    let mut buf = header.as_bytes().to_vec();
    body(&mut buf)?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, buf)?;
    Ok(())
}

fn echo(pairs: &[(String, String)]) -> String {
    pairs.iter().map(|(k, v)| format!("# {k}={v}\n")).collect()
}

fn gen_data(c: &RunConfig) -> Outcome {
    let out: PathBuf = c.get("out").usage()?;
    let mut m = DatasetManifest::desk(
        c.get("h").usage()?,
        c.get("w").usage()?,
        c.get("vars").usage()?,
        c.get("steps").usage()?,
        c.get("seed").usage()?,
    )
    .usage()?;
    if let Some(noise) = c.opt("noise").usage()? {
        m.noise_std = noise;
    }
    m.validate().usage()?;
    let data = generate(&m).runtime()?;
    save_dataset(&out, &m, &data).runtime()?;
    println!("wrote {} snapshots to {}", data.len(), out.display());
    Ok(())
}

fn stage_config(c: &RunConfig, stage: Stage) -> Result<StageConfig> {
    let lead = c.get("lead-hours")?;
    let seed = c.get("seed")?;
    let mut cfg = match stage {
        Stage::Pretrain => StageConfig::stage1(lead, seed),
        Stage::Finetune => StageConfig::stage2(lead, seed),
        Stage::Rollout => StageConfig::stage3(lead, seed),
    };
    if let Some(steps) = c.opt("steps")? {
        cfg = cfg.with_steps(steps);
    }
    let explicit: Vec<(String, String)> = TRAIN_KEYS
        .iter()
        .filter(|k| !matches!(**k, "lead-hours" | "seed" | "steps") && c.is_set(k))
        .map(|k| (k.replace('-', "_"), c.raw(k).to_string()))
        .collect();
    cfg.apply_kv(&explicit)?;
    cfg.validate()?;
    Ok(cfg)
}

fn model_config(c: &RunConfig, data: &TrainData) -> Result<ModelConfig> {
    let mut kv = ModelConfig::desk(data.vars.len(), data.grid.h(), data.grid.w()).to_kv();
    for k in MODEL_KEYS {
        if c.is_set(k) {
            kv.push((format!("model.{}", k.replace('-', "_")), c.raw(k).to_string()));
        }
    }
    ModelConfig::from_kv(&kv)
}

fn existing(dir: &Path, what: &str) -> Result<()> {
    if dir.is_dir() {
        Ok(())
    } else {
        Err(Error::Config(format!("{what} directory `{}` not found", dir.display())))
    }
}

fn load_data(dir: &Path) -> Result<(DatasetManifest, Vec<FieldState>)> {
    existing(dir, "dataset")?;
    load_dataset(dir)
}

/// Accepts a training checkpoint directory or a bare model directory.
fn load_model(dir: &Path) -> Result<Model> {
    existing(dir, "checkpoint")?;
    let nested = dir.join("model");
    if nested.join("model.kv").exists() {
        Model::load(&nested)
    } else {
        Model::load(dir)
    }
}

fn train(c: &RunConfig, pretrain: bool) -> Outcome {
    let stage = Stage::from_number(c.get("stage").usage()?).usage()?;
    if pretrain && stage != Stage::Pretrain {
        return Err(Failure::Usage(Error::Config("pretrain runs stage 1; use finetune for stages 2 and 3".into())));
    }
    if !pretrain && stage == Stage::Pretrain {
        return Err(Failure::Usage(Error::Config("finetune runs stages 2 and 3; use pretrain for stage 1".into())));
    }
    let cfg = stage_config(c, stage).usage()?;
    let data_dir: PathBuf = c.get("data").usage()?;
    let ckpt_out: PathBuf = c.get("ckpt-out").usage()?;
    let ckpt_in: Option<PathBuf> = c.opt("ckpt-in").usage()?;
    let resume: bool = c.get("resume").usage()?;
    let report: Option<PathBuf> = c.opt("report").usage()?;
    if resume && ckpt_in.is_none() {
        return Err(Failure::Usage(Error::Config("--resume needs --ckpt-in".into())));
    }
    if pretrain && ckpt_in.is_some() && !resume {
        return Err(Failure::Usage(Error::Config(
            "pre-training starts from a fresh model; add --resume to continue a checkpoint".into(),
        )));
    }
    if ckpt_in.is_some() && MODEL_KEYS.iter().any(|k| c.is_set(k)) {
        warn!("model options are ignored when starting from a checkpoint");
    }

    let (manifest, raw) = load_data(&data_dir).usage()?;
    let data = TrainData::new(&manifest, &raw).runtime()?;
    let mut trainer: Trainer = if resume {
        let dir = ckpt_in.as_ref().expect("checked above");
        let t = load_checkpoint(dir, &data).runtime()?;
        if t.cfg.stage != stage {
            return Err(Failure::Usage(Error::Config(format!(
                "checkpoint holds a stage {} run, not stage {}",
                t.cfg.stage as u32, stage as u32
            ))));
        }
        info!("resuming at step {} of {}", t.step, t.cfg.steps);
        t
    } else {
        let model = match &ckpt_in {
            Some(dir) => load_model(dir).usage()?,
            None => {
                if !pretrain {
                    info!("no --ckpt-in; fine-tuning a freshly initialized model");
                }
                Model::init(model_config(c, &data).usage()?, cfg.seed).usage()?
            }
        };
        stage_trainer(model, &data, &cfg).usage()?
    };
    trainer.run().runtime()?;
    save_checkpoint(&ckpt_out, &trainer).runtime()?;
    format::write_kv(&ckpt_out.join("norm.kv"), &data.norm.to_kv()).runtime()?;
    if let Some(path) = report {
        let mut header = c.header();
        header.push_str(&echo(&prefixed("stage.", &trainer.cfg.to_kv())));
        header.push_str(&echo(&trainer.model.config.to_kv()));
        write_report(&path, &header, |f| trainer.report.write_csv(f)).runtime()?;
    }
    match trainer.report.final_val() {
        Some(v) => println!("stage {} done after {} steps; validation loss {v:.6}", stage as u32, trainer.step),
        None => println!("stage {} done after {} steps", stage as u32, trainer.step),
    }
    Ok(())
}

fn prefixed(prefix: &str, kv: &[(String, String)]) -> Vec<(String, String)> {
    kv.iter().map(|(k, v)| (format!("{prefix}{k}"), v.clone())).collect()
}

struct Bank {
    models: BTreeMap<u32, Model>,
    norm: NormStats,
}

fn checkpoint_lead(dir: &Path) -> Result<u32> {
    let mut cfg = StageConfig::stage2(6, 0);
    cfg.apply_kv(&format::read_kv(&dir.join("stage.kv"))?)?;
    Ok(cfg.lead_hours)
}

fn load_bank(dirs: &[PathBuf]) -> Result<Bank> {
    let mut models = BTreeMap::new();
    let mut norm: Option<NormStats> = None;
    for dir in dirs {
        let lead = checkpoint_lead(dir)?;
        let model = load_model(dir)?;
        if models.insert(lead, model).is_some() {
            return Err(Error::Config(format!("two checkpoints for the {lead} h lead time")));
        }
        let n = NormStats::from_kv(&format::read_kv(&dir.join("norm.kv"))?)?;
        match &norm {
            Some(prev) if *prev != n => {
                return Err(Error::Config("checkpoints were trained with different normalizers".into()));
            }
            _ => norm = Some(n),
        }
    }
    let norm = norm.ok_or_else(|| Error::Config("`ckpt` lists no checkpoints".into()))?;
    Ok(Bank { models, norm })
}

struct EvalSet {
    grid: GridSpec,
    names: Vec<String>,
    step_hours: u32,
    train: Vec<FieldState>,
    val: Vec<FieldState>,
    test: Vec<FieldState>,
}

fn eval_set(dir: &Path) -> Result<EvalSet> {
    let (m, raw) = load_data(dir)?;
    let s = split(&raw, TRAIN_FRAC, VAL_FRAC)?;
    Ok(EvalSet {
        grid: m.grid,
        names: m.variables.names().to_vec(),
        step_hours: m.step_hours,
        train: s.train,
        val: s.val,
        test: s.test,
    })
}

/// Test-split `(input, truth)` index pairs `lead` hours apart.
fn pairs(e: &EvalSet, lead: u32, samples: usize) -> Result<Vec<(usize, usize)>> {
    if lead % e.step_hours != 0 {
        return Err(Error::Config(format!(
            "{lead} h is not a multiple of the {} h dataset step",
            e.step_hours
        )));
    }
    let stride = (lead / e.step_hours) as usize;
    let n = e.test.len().saturating_sub(stride);
    if n == 0 {
        return Err(Error::Config(format!("test split is too short for a {lead} h forecast")));
    }
    let take = if samples == 0 { n } else { samples.min(n) };
    Ok((0..take).map(|i| (i, i + stride)).collect())
}

/// Rollout in physical units; returns every intermediate state.
fn predict(bank: &Bank, x0: &FieldState, comp: &[u32]) -> Result<Vec<FieldState>> {
    let path = rollout(&bank.models, &bank.norm.apply(x0), comp)?;
    Ok(path.iter().map(|s| bank.norm.invert(s)).collect())
}

fn comp_label(comp: &[u32]) -> String {
    comp.iter().map(|h| h.to_string()).collect::<Vec<_>>().join("+")
}

fn rmse_rows(
    out: &mut Vec<u8>,
    member: &str,
    label: &str,
    preds: &[FieldState],
    truth: &[FieldState],
    e: &EvalSet,
) -> Result<()> {
    for (v, name) in e.names.iter().enumerate() {
        let r = rmse(preds, truth, &e.grid, v)?;
        writeln!(out, "{member},{label},{name},{r:.9e}")?;
    }
    Ok(())
}

fn write_fields(dir: &Path, prefix: &str, states: &[FieldState]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for s in states {
        format::write_tensor(&dir.join(format!("{prefix}_t{}.bgn", s.time)), &s.values, Dtype::F32)?;
    }
    Ok(())
}

fn ckpt_dirs(c: &RunConfig) -> Result<Vec<PathBuf>> {
    let dirs: Vec<PathBuf> = c.list("ckpt")?;
    if dirs.is_empty() {
        return Err(Error::Config("`ckpt` is required".into()));
    }
    Ok(dirs)
}

fn rollout_cmd(c: &RunConfig) -> Outcome {
    let data_dir: PathBuf = c.get("data").usage()?;
    let dirs = ckpt_dirs(c).usage()?;
    let comp: Vec<u32> = c.list("comp").usage()?;
    if comp.is_empty() || comp.contains(&0) {
        return Err(Failure::Usage(Error::Config("`comp` needs positive lead times".into())));
    }
    let samples: usize = c.get("samples").usage()?;
    let out: Option<PathBuf> = c.opt("out").usage()?;
    let report: Option<PathBuf> = c.opt("report").usage()?;

    let bank = load_bank(&dirs).usage()?;
    if let Some(h) = comp.iter().find(|h| !bank.models.contains_key(h)) {
        return Err(Failure::Usage(Error::Config(format!("no checkpoint for the {h} h lead time"))));
    }
    let e = eval_set(&data_dir).usage()?;
    let total: u32 = comp.iter().sum();
    let idx = pairs(&e, total, samples).usage()?;
    let mut preds = Vec::with_capacity(idx.len());
    for (k, &(i, _)) in idx.iter().enumerate() {
        let path = predict(&bank, &e.test[i], &comp).runtime()?;
        if k == 0 {
            if let Some(dir) = &out {
                write_fields(dir, "step", &path).runtime()?;
            }
        }
        preds.push(path.last().expect("nonempty composition").clone());
    }
    let truth: Vec<FieldState> = idx.iter().map(|&(_, j)| e.test[j].clone()).collect();
    let mut body = b"member,composition,variable,rmse\n".to_vec();
    rmse_rows(&mut body, "0", &comp_label(&comp), &preds, &truth, &e).runtime()?;
    if let Some(path) = report {
        write_report(&path, &c.header(), |f| f.write_all(&body)).runtime()?;
    }
    print!("{}", String::from_utf8_lossy(&body));
    Ok(())
}

fn ensemble_cmd(c: &RunConfig) -> Outcome {
    let data_dir: PathBuf = c.get("data").usage()?;
    let dirs = ckpt_dirs(c).usage()?;
    let target: u32 = c.get("target-hours").usage()?;
    let max_iters: usize = c.get("max-iters").usage()?;
    let samples: usize = c.get("samples").usage()?;
    let out: Option<PathBuf> = c.opt("out").usage()?;
    let report: Option<PathBuf> = c.opt("report").usage()?;

    let bank = load_bank(&dirs).usage()?;
    let leads: Vec<u32> = bank.models.keys().copied().collect();
    let plan = EnsemblePlan::new(target, &leads, max_iters).usage()?;
    if plan.members.is_empty() {
        return Err(Failure::Usage(Error::Config(format!(
            "no composition of {leads:?} reaches {target} h within {max_iters} steps"
        ))));
    }
    let e = eval_set(&data_dir).usage()?;
    let idx = pairs(&e, target, samples).usage()?;
    let mut means = Vec::with_capacity(idx.len());
    let mut members: Vec<Vec<FieldState>> = vec![Vec::new(); plan.members.len()];
    for (k, &(i, _)) in idx.iter().enumerate() {
        let x0 = bank.norm.apply(&e.test[i]);
        let fc = ensemble_forecast(&bank.models, &x0, &plan).runtime()?;
        let mean = bank.norm.invert(&fc.mean);
        let finals: Vec<FieldState> = fc.members.iter().map(|s| bank.norm.invert(s)).collect();
        if k == 0 {
            if let Some(dir) = &out {
                write_fields(dir, "mean", std::slice::from_ref(&mean)).runtime()?;
                for (m, s) in finals.iter().enumerate() {
                    write_fields(dir, &format!("member{m}"), std::slice::from_ref(s)).runtime()?;
                }
            }
        }
        means.push(mean);
        for (m, s) in finals.into_iter().enumerate() {
            members[m].push(s);
        }
    }
    let truth: Vec<FieldState> = idx.iter().map(|&(_, j)| e.test[j].clone()).collect();
    let mut body = b"member,composition,variable,rmse\n".to_vec();
    for (m, comp) in plan.members.iter().enumerate() {
        rmse_rows(&mut body, &m.to_string(), &comp_label(comp), &members[m], &truth, &e).runtime()?;
    }
    rmse_rows(&mut body, "mean", "mean", &means, &truth, &e).runtime()?;
    if let Some(path) = report {
        write_report(&path, &c.header(), |f| f.write_all(&body)).runtime()?;
    }
    print!("{}", String::from_utf8_lossy(&body));
    Ok(())
}

fn evaluate_cmd(c: &RunConfig) -> Outcome {
    let data_dir: PathBuf = c.get("data").usage()?;
    let dirs = ckpt_dirs(c).usage()?;
    let max_iters: usize = c.get("max-iters").usage()?;
    let samples: usize = c.get("samples").usage()?;
    let report: Option<PathBuf> = c.opt("report").usage()?;
    let mut leads: Vec<u32> = c.list("leads").usage()?;

    let bank = load_bank(&dirs).usage()?;
    let available: Vec<u32> = bank.models.keys().copied().collect();
    if leads.is_empty() {
        leads = available.clone();
    }
    let mut plans = Vec::with_capacity(leads.len());
    for &lead in &leads {
        let plan = EnsemblePlan::new(lead, &available, max_iters).usage()?;
        let comp = plan.members.into_iter().next().ok_or_else(|| {
            Failure::Usage(Error::Config(format!(
                "no composition of {available:?} reaches {lead} h within {max_iters} steps"
            )))
        })?;
        plans.push((lead, comp));
    }
    let e = eval_set(&data_dir).usage()?;
    let clim = Climatology::from_states(&e.train).runtime()?;
    let mut rows = Vec::new();
    for (lead, comp) in &plans {
        let idx = pairs(&e, *lead, samples).usage()?;
        let mut preds = Vec::with_capacity(idx.len());
        for &(i, _) in &idx {
            let path = predict(&bank, &e.test[i], comp).runtime()?;
            preds.push(path.last().expect("nonempty composition").clone());
        }
        let truth: Vec<FieldState> = idx.iter().map(|&(_, j)| e.test[j].clone()).collect();
        for (v, name) in e.names.iter().enumerate() {
            rows.push(MetricRow {
                variable: name.clone(),
                lead_hours: *lead,
                rmse: rmse(&preds, &truth, &e.grid, v).runtime()?,
                acc: acc(&preds, &truth, &clim, &e.grid, v).runtime()?,
            });
        }
    }
    let mut body = Vec::new();
    write_metrics_csv(&mut body, &rows).map_err(Error::from).runtime()?;
    if let Some(path) = report {
        write_report(&path, &c.header(), |f| f.write_all(&body)).runtime()?;
    }
    print!("{}", String::from_utf8_lossy(&body));
    Ok(())
}

fn theory_cmd(c: &RunConfig) -> Outcome {
    let mut cfg = TheoryConfig::new(
        c.get("d").usage()?,
        c.get("k").usage()?,
        c.get("n").usage()?,
        c.get("trials").usage()?,
        c.get("seed").usage()?,
    );
    cfg.scale = c.get("scale").usage()?;
    cfg.sigma = c.get("sigma").usage()?;
    cfg.gamma = c.opt("gamma").usage()?;
    cfg.lambda = c.opt("lambda").usage()?;
    cfg.radius = c.opt("radius").usage()?;
    cfg.delta = c.get("delta").usage()?;
    cfg.n_grid = c.list("n-grid").usage()?;
    cfg.grid_trials = c.get("grid-trials").usage()?;
    let report: Option<PathBuf> = c.opt("report").usage()?;
    cfg.validate().usage()?;

    let r = run_experiment(&cfg).runtime()?;
    let fmt_opt = |x: Option<f64>| x.map_or("none".to_string(), |v| format!("{v:.6}"));
    let mut summary = vec![
        ("win_rate".to_string(), format!("{:.6}", r.win_rate)),
        ("uninformative".to_string(), r.uninformative.to_string()),
        ("coverage_without".to_string(), fmt_opt(r.coverage_without())),
        ("coverage_with".to_string(), fmt_opt(r.coverage_with())),
        ("gamma_used".to_string(), format!("{:.9e}", r.gamma)),
        ("radius_used".to_string(), format!("{:.9e}", r.radius)),
        ("slope".to_string(), fmt_opt(r.slope)),
    ];
    for (n, e) in &r.rate_points {
        summary.push((format!("median_error.n{n}"), format!("{e:.9e}")));
    }
    if let Some(path) = report {
        let header = c.header() + &echo(&summary);
        write_report(&path, &header, |f| r.write_csv(f)).runtime()?;
    }
    for (k, v) in &summary {
        println!("{k}={v}");
    }
    Ok(())
}

fn spectrum_cmd(c: &RunConfig) -> Outcome {
    let dir: PathBuf = c.get("ckpt").usage()?;
    let data_dir: PathBuf = c.get("data").usage()?;
    let samples: usize = c.get("samples").usage()?;
    let report: Option<PathBuf> = c.opt("report").usage()?;
    if samples == 0 {
        return Err(Failure::Usage(Error::Config("`samples` must be positive".into())));
    }
    let model = load_model(&dir).usage()?;
    let norm = NormStats::from_kv(&format::read_kv(&dir.join("norm.kv")).usage()?).usage()?;
    let lead: u32 = match c.opt("lead-hours").usage()? {
        Some(l) => l,
        None => checkpoint_lead(&dir).usage()?,
    };
    let depth = model.config.enc_depth;
    let layer = match c.raw("layer") {
        "last" if depth > 0 => depth - 1,
        "last" => return Err(Failure::Usage(Error::Config("model has no encoder layers".into()))),
        _ => c.get("layer").usage()?,
    };
    let token = match c.raw("token") {
        "center" => center_token(&model),
        _ => c.get("token").usage()?,
    };
    let e = eval_set(&data_dir).usage()?;
    let inputs: Vec<FieldState> = e.val.iter().take(samples).map(|s| norm.apply(s)).collect();
    let spec = attention_spectrum(&model, &inputs, layer, token, lead).runtime()?;
    let resolved = vec![
        ("layer_used".to_string(), layer.to_string()),
        ("token_used".to_string(), token.to_string()),
        ("lead_used".to_string(), lead.to_string()),
    ];
    let mut body = Vec::new();
    spec.write_csv(&mut body).map_err(Error::from).runtime()?;
    if let Some(path) = report {
        write_report(&path, &(c.header() + &echo(&resolved)), |f| f.write_all(&body)).runtime()?;
    }
    print!("{}", String::from_utf8_lossy(&body));
    Ok(())
}
