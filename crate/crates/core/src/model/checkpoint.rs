//! Parameter directories: one `BGN1` (f64) file per tensor, a `params.kv`
//! index mapping names to `file;shape`, and `model.kv` with the config.

use std::fs;
use std::path::Path;

use super::{Frame2Mode, Model, ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::format::{self, Dtype};

fn file_name(name: &str) -> String {
    format!("{}.bgn", name.replace('.', "_"))
}

pub fn save_params(dir: &Path, params: &ModelParams) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut index = Vec::with_capacity(params.len());
    for (name, t) in params.iter() {
        let file = file_name(name);
        format::write_tensor(&dir.join(&file), t, Dtype::F64)?;
        let shape: Vec<String> = t.shape().iter().map(usize::to_string).collect();
        index.push((name.clone(), format!("{file};{}", shape.join("x"))));
    }
    format::write_kv(&dir.join("params.kv"), &index)
}

pub fn load_params(dir: &Path) -> Result<ModelParams> {
    let index_path = dir.join("params.kv");
    let mut params = ModelParams::default();
    for (name, entry) in format::read_kv(&index_path)? {
        let bad = |detail: String| Error::Format {
            path: index_path.clone(),
            detail,
        };
        let (file, shape) = entry
            .split_once(';')
            .ok_or_else(|| bad(format!("entry for `{name}` lacks a shape")))?;
        let shape: Vec<usize> = shape
            .split('x')
            .map(|s| s.parse().map_err(|_| bad(format!("bad shape for `{name}`"))))
            .collect::<Result<_>>()?;
        let t = format::read_tensor(&dir.join(file))?;
        if t.shape() != shape.as_slice() {
            return Err(bad(format!("`{name}` file shape {:?} disagrees with index", t.shape())));
        }
        params.insert(name, t);
    }
    Ok(params)
}

impl ModelConfig {
    pub fn to_kv(&self) -> Vec<(String, String)> {
        [
            ("model.d", self.d.to_string()),
            ("model.patch", self.patch.to_string()),
            ("model.enc_depth", self.enc_depth.to_string()),
            ("model.dec_depth", self.dec_depth.to_string()),
            ("model.heads", self.heads.to_string()),
            ("model.ffn_mult", self.ffn_mult.to_string()),
            ("model.vars", self.vars.to_string()),
            ("model.h", self.h.to_string()),
            ("model.w", self.w.to_string()),
            ("model.frame2", self.frame2.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    pub fn from_kv(kv: &[(String, String)]) -> Result<Self> {
        let get = |key: &str| -> Result<&str> {
            kv.iter()
                .rev()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| Error::Config(format!("missing `{key}`")))
        };
        let num = |key: &str| -> Result<usize> {
            get(key)?
                .parse()
                .map_err(|_| Error::Config(format!("`{key}` is not a nonnegative integer")))
        };
        let cfg = Self {
            d: num("model.d")?,
            patch: num("model.patch")?,
            enc_depth: num("model.enc_depth")?,
            dec_depth: num("model.dec_depth")?,
            heads: num("model.heads")?,
            ffn_mult: num("model.ffn_mult")?,
            vars: num("model.vars")?,
            h: num("model.h")?,
            w: num("model.w")?,
            frame2: get("model.frame2")?.parse::<Frame2Mode>()?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl Model {
    pub fn save(&self, dir: &Path) -> Result<()> {
        save_params(dir, &self.params)?;
        format::write_kv(&dir.join("model.kv"), &self.config.to_kv())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let config = ModelConfig::from_kv(&format::read_kv(&dir.join("model.kv"))?)?;
        let params = load_params(dir)?;
        params.validate(&config)?;
        Ok(Self { config, params })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ModelConfig::desk(3, 5, 8);
        cfg.frame2 = Frame2Mode::Zeros;
        let mut m = Model::init(cfg, 21).unwrap();
        m.randomize_conditioner(2, 0.7);
        m.save(dir.path()).unwrap();
        assert_eq!(Model::load(dir.path()).unwrap(), m);
    }

    #[test]
    fn index_shape_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let m = Model::init(ModelConfig::desk(1, 2, 4), 1).unwrap();
        m.save(dir.path()).unwrap();
        let idx = dir.path().join("params.kv");
        let text = fs::read_to_string(&idx).unwrap().replace("head_b.bgn;4", "head_b.bgn;5");
        fs::write(&idx, text).unwrap();
        assert!(Model::load(dir.path()).is_err());
    }
}
