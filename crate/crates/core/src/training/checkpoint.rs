//! Resumable training checkpoints: the model directory, both Adam moment
//! sets, the stage config, the step counter and the report so far.

use std::fs;
use std::path::Path;

use super::optim::AdamState;
use super::{StageConfig, TrainData, TrainReport, Trainer};
use crate::error::{Error, Result};
use crate::format;
use crate::model::{load_params, save_params, Model, ModelParams};

fn moments_to_params(m: &std::collections::BTreeMap<String, crate::tensor::Tensor>) -> ModelParams {
    let mut p = ModelParams::default();
    for (k, t) in m {
        p.insert(k.clone(), t.clone());
    }
    p
}

fn params_to_moments(p: ModelParams) -> std::collections::BTreeMap<String, crate::tensor::Tensor> {
    p.iter().map(|(k, t)| (k.clone(), t.clone())).collect()
}

pub fn save_checkpoint(dir: &Path, t: &Trainer) -> Result<()> {
    fs::create_dir_all(dir)?;
    t.model.save(&dir.join("model"))?;
    save_params(&dir.join("adam_m"), &moments_to_params(&t.opt.m))?;
    save_params(&dir.join("adam_v"), &moments_to_params(&t.opt.v))?;
    format::write_kv(&dir.join("stage.kv"), &t.cfg.to_kv())?;
    format::write_kv(
        &dir.join("state.kv"),
        &[
            ("step".to_string(), t.step.to_string()),
            ("adam_t".to_string(), t.opt.t.to_string()),
        ],
    )?;
    let mut f = fs::File::create(dir.join("report.csv"))?;
    t.report.write_csv(&mut f)?;
    Ok(())
}

pub fn load_checkpoint<'a>(dir: &Path, data: &'a TrainData) -> Result<Trainer<'a>> {
    let model = Model::load(&dir.join("model"))?;
    let mut cfg = StageConfig::stage1(6, 0);
    cfg.apply_kv(&format::read_kv(&dir.join("stage.kv"))?)?;
    let state = format::read_kv(&dir.join("state.kv"))?;
    let get = |key: &str| -> Result<u64> {
        state
            .iter()
            .find(|(k, _)| k == key)
            .and_then(|(_, v)| v.parse().ok())
            .ok_or_else(|| Error::Format {
                path: dir.join("state.kv"),
                detail: format!("missing or bad `{key}`"),
            })
    };
    let opt = AdamState {
        m: params_to_moments(load_params(&dir.join("adam_m"))?),
        v: params_to_moments(load_params(&dir.join("adam_v"))?),
        t: get("adam_t")?,
    };
    let report = TrainReport::parse_csv(&fs::read_to_string(dir.join("report.csv"))?)?;
    let mut t = Trainer::new(model, cfg, data)?;
    t.restore(opt, get("step")? as usize, report);
    Ok(t)
}
