//! Synthetic atmosphere: per-variable zonal advection, mild diffusion and
//! seeded Gaussian noise on a lat-lon grid, plus splitting, normalization and
//! the on-disk dataset layout.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::format::{self, Dtype};
use crate::grid::{GridSpec, VariableSet};
use crate::tensor::{GaussianRng, Tensor};

/// One atmospheric snapshot: a `V×H×W` field at `time` hours.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldState {
    pub values: Tensor,
    pub time: i64,
}

impl FieldState {
    pub fn new(values: Tensor, time: i64) -> Result<Self> {
        if values.rank() != 3 {
            return Err(Error::dim("field_state", format!("expected V×H×W, got {:?}", values.shape())));
        }
        Ok(Self { values, time })
    }

    pub fn vars(&self) -> usize {
        self.values.shape()[0]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub grid: GridSpec,
    pub variables: VariableSet,
    pub step_hours: u32,
    pub count: usize,
    pub seed: u64,
    /// Eastward advection per step, degrees, one per variable.
    pub speeds: Vec<f64>,
    pub diffusion: f64,
    pub noise_std: f64,
}

impl DatasetManifest {
    /// Desk-scale defaults: speeds of 1, 1.5, 2, ... grid cells per step.
    pub fn desk(h: usize, w: usize, vars: usize, count: usize, seed: u64) -> Result<Self> {
        let cell = 360.0 / w as f64;
        Ok(Self {
            grid: GridSpec::uniform(h, w)?,
            variables: VariableSet::numbered(vars)?,
            step_hours: 6,
            count,
            seed,
            speeds: (0..vars).map(|v| cell * (1.0 + 0.5 * v as f64)).collect(),
            diffusion: 0.05,
            noise_std: 0.02,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.count < 2 {
            return Err(Error::Config("a dataset needs at least 2 snapshots".into()));
        }
        if self.step_hours == 0 {
            return Err(Error::Config("step_hours must be positive".into()));
        }
        if self.speeds.len() != self.variables.len() {
            return Err(Error::Config(format!(
                "{} speeds for {} variables",
                self.speeds.len(),
                self.variables.len()
            )));
        }
        if !(0.0..=0.25).contains(&self.diffusion) {
            return Err(Error::Config("diffusion must lie in [0, 0.25] for stability".into()));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Config("noise_std must be finite and >= 0".into()));
        }
        if self.speeds.iter().any(|s| !s.is_finite()) {
            return Err(Error::Config("advection speeds must be finite".into()));
        }
        Ok(())
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.variables.len(), self.grid.h(), self.grid.w()]
    }

    pub fn to_kv(&self) -> Vec<(String, String)> {
        let mut kv = vec![
            ("grid.h".to_string(), self.grid.h().to_string()),
            ("grid.w".to_string(), self.grid.w().to_string()),
            ("step_hours".to_string(), self.step_hours.to_string()),
            ("count".to_string(), self.count.to_string()),
            ("seed".to_string(), self.seed.to_string()),
        ];
        for (name, s) in self.variables.names().iter().zip(&self.speeds) {
            kv.push((format!("var.{name}.speed"), format!("{s:?}")));
        }
        kv.push(("diffusion".to_string(), format!("{:?}", self.diffusion)));
        kv.push(("noise_std".to_string(), format!("{:?}", self.noise_std)));
        kv
    }

    pub fn from_kv(kv: &[(String, String)]) -> Result<Self> {
        fn get<'a>(kv: &'a [(String, String)], key: &str) -> Result<&'a str> {
            kv.iter()
                .rev()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| Error::Config(format!("manifest is missing `{key}`")))
        }
        fn num<T: std::str::FromStr>(kv: &[(String, String)], key: &str) -> Result<T> {
            get(kv, key)?
                .parse()
                .map_err(|_| Error::Config(format!("manifest key `{key}` is not a number")))
        }
        let mut names = Vec::new();
        let mut speeds = Vec::new();
        for (k, v) in kv {
            if let Some(name) = k.strip_prefix("var.").and_then(|r| r.strip_suffix(".speed")) {
                names.push(name.to_string());
                speeds.push(
                    v.parse()
                        .map_err(|_| Error::Config(format!("bad speed for `{name}`")))?,
                );
            }
        }
        let m = Self {
            grid: GridSpec::uniform(num(kv, "grid.h")?, num(kv, "grid.w")?)?,
            variables: VariableSet::uniform(names)?,
            step_hours: num(kv, "step_hours")?,
            count: num(kv, "count")?,
            seed: num(kv, "seed")?,
            speeds,
            diffusion: num(kv, "diffusion")?,
            noise_std: num(kv, "noise_std")?,
        };
        m.validate()?;
        Ok(m)
    }
}

/// Smooth random initial condition: a zonally symmetric meridional profile
/// plus a few planetary waves, on per-variable offsets and amplitudes.
fn initial_state(m: &DatasetManifest, rng: &mut GaussianRng) -> Tensor {
    let [v, h, w] = m.shape();
    let lats = m.grid.latitudes();
    let lons = m.grid.longitudes();
    let mut data = vec![0.0; v * h * w];
    for var in 0..v {
        let offset = 10.0 * (var as f64 + 1.0) * (rng.uniform() - 0.5);
        let amp = 0.5 + 2.0 * rng.uniform();
        let tilt = rng.normal();
        let waves: Vec<(f64, f64, f64, f64)> = (1..=3)
            .map(|k| {
                (
                    k as f64,
                    rng.normal() / k as f64,
                    2.0 * std::f64::consts::PI * rng.uniform(),
                    rng.normal(),
                )
            })
            .collect();
        for i in 0..h {
            let phi = lats[i].to_radians();
            for j in 0..w {
                let lam = lons[j].to_radians();
                let mut x = tilt * phi.sin();
                for &(k, a, ph, r) in &waves {
                    x += a * phi.cos() * (1.0 + 0.5 * (r * phi).sin()) * (k * lam + ph).cos();
                }
                data[(var * h + i) * w + j] = offset + amp * x;
            }
        }
    }
    Tensor::from_parts(vec![v, h, w], data)
}

/// The deterministic part of one step: shift east by each variable's speed
/// (linear interpolation for fractional cells) then 3-point smoothing in
/// longitude (periodic) and latitude (mirrored at the edges).
pub fn noiseless_step(m: &DatasetManifest, x: &Tensor) -> Tensor {
    let [v, h, w] = m.shape();
    let src = x.data();
    let mut adv = vec![0.0; v * h * w];
    let cell = 360.0 / w as f64;
    for var in 0..v {
        let shift = m.speeds[var] / cell;
        let whole = shift.floor();
        let frac = shift - whole;
        let k = (whole as i64).rem_euclid(w as i64) as usize;
        for i in 0..h {
            let row = &src[(var * h + i) * w..(var * h + i + 1) * w];
            for j in 0..w {
                let a = row[(j + w - k) % w];
                let b = row[(j + 2 * w - k - 1) % w];
                adv[(var * h + i) * w + j] = if frac == 0.0 { a } else { (1.0 - frac) * a + frac * b };
            }
        }
    }
    if m.diffusion == 0.0 {
        return Tensor::from_parts(vec![v, h, w], adv);
    }
    let kappa = m.diffusion;
    let mut out = vec![0.0; v * h * w];
    for var in 0..v {
        for i in 0..h {
            let up = if i == 0 { i } else { i - 1 };
            let down = if i + 1 == h { i } else { i + 1 };
            for j in 0..w {
                let at = |ii: usize, jj: usize| adv[(var * h + ii) * w + jj];
                let c = at(i, j);
                let lap_x = at(i, (j + w - 1) % w) + at(i, (j + 1) % w) - 2.0 * c;
                let lap_y = at(up, j) + at(down, j) - 2.0 * c;
                out[(var * h + i) * w + j] = c + kappa * (lap_x + lap_y);
            }
        }
    }
    Tensor::from_parts(vec![v, h, w], out)
}

pub fn generate(m: &DatasetManifest) -> Result<Vec<FieldState>> {
    m.validate()?;
    let mut init_rng = GaussianRng::derived(m.seed, &[0]);
    let mut noise_rng = GaussianRng::derived(m.seed, &[1]);
    let mut x = initial_state(m, &mut init_rng);
    let mut out = Vec::with_capacity(m.count);
    for t in 0..m.count {
        if t > 0 {
            x = noiseless_step(m, &x);
            if m.noise_std > 0.0 {
                for val in x.data_mut() {
                    *val += m.noise_std * noise_rng.normal();
                }
            }
        }
        out.push(FieldState {
            values: x.clone(),
            time: t as i64 * m.step_hours as i64,
        });
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct Split {
    pub train: Vec<FieldState>,
    pub val: Vec<FieldState>,
    pub test: Vec<FieldState>,
}

/// Contiguous chronological train / validation / test slices.
pub fn split(data: &[FieldState], train_frac: f64, val_frac: f64) -> Result<Split> {
    if !(train_frac > 0.0 && val_frac > 0.0 && train_frac + val_frac < 1.0) {
        return Err(Error::Contract(format!(
            "split fractions must be positive with sum < 1, got {train_frac} and {val_frac}"
        )));
    }
    let n = data.len();
    let n_train = (train_frac * n as f64).round() as usize;
    let n_val = (val_frac * n as f64).round() as usize;
    if n_train == 0 || n_val == 0 || n_train + n_val >= n {
        return Err(Error::Contract(format!(
            "split of {n} snapshots leaves an empty slice ({n_train}/{n_val}/{})",
            n.saturating_sub(n_train + n_val)
        )));
    }
    Ok(Split {
        train: data[..n_train].to_vec(),
        val: data[n_train..n_train + n_val].to_vec(),
        test: data[n_train + n_val..].to_vec(),
    })
}

/// Per-variable mean and standard deviation of the training split.
#[derive(Clone, Debug, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn fit(train: &[FieldState], vars: &VariableSet) -> Result<Self> {
        fit_normalizer(train, vars)
    }

    pub fn apply(&self, s: &FieldState) -> FieldState {
        self.transform(s, |x, m, sd| (x - m) / sd)
    }

    pub fn invert(&self, s: &FieldState) -> FieldState {
        self.transform(s, |x, m, sd| x * sd + m)
    }

    fn transform(&self, s: &FieldState, f: impl Fn(f64, f64, f64) -> f64) -> FieldState {
        let hw = s.values.shape()[1] * s.values.shape()[2];
        let data = s
            .values
            .data()
            .iter()
            .enumerate()
            .map(|(k, &x)| {
                let v = k / hw;
                f(x, self.mean[v], self.std[v])
            })
            .collect();
        FieldState {
            values: Tensor::from_parts(s.values.shape().to_vec(), data),
            time: s.time,
        }
    }
}

impl NormStats {
    pub fn to_kv(&self) -> Vec<(String, String)> {
        let mut out = Vec::with_capacity(2 * self.mean.len());
        for (v, (m, s)) in self.mean.iter().zip(&self.std).enumerate() {
            out.push((format!("mean.{v}"), format!("{m:?}")));
            out.push((format!("std.{v}"), format!("{s:?}")));
        }
        out
    }

    pub fn from_kv(kv: &[(String, String)]) -> Result<Self> {
        let (mut mean, mut std) = (Vec::new(), Vec::new());
        for (k, val) in kv {
            let bad = || Error::Config(format!("bad normalizer entry `{k}={val}`"));
            let (name, idx) = k.split_once('.').ok_or_else(bad)?;
            let idx: usize = idx.parse().map_err(|_| bad())?;
            let x: f64 = val.parse().map_err(|_| bad())?;
            let dst = match name {
                "mean" => &mut mean,
                "std" => &mut std,
                _ => return Err(bad()),
            };
            if dst.len() != idx {
                return Err(bad());
            }
            dst.push(x);
        }
        if mean.is_empty() || mean.len() != std.len() || std.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Config("normalizer needs matching positive mean/std entries".into()));
        }
        Ok(Self { mean, std })
    }
}

pub fn fit_normalizer(train: &[FieldState], vars: &VariableSet) -> Result<NormStats> {
    let first = train
        .first()
        .ok_or_else(|| Error::Contract("cannot fit a normalizer on an empty split".into()))?;
    let v = first.vars();
    if v != vars.len() {
        return Err(Error::dim("fit_normalizer", format!("{v} field variables vs {} names", vars.len())));
    }
    let hw = first.values.numel() / v;
    let count = (hw * train.len()) as f64;
    let mut mean = vec![0.0; v];
    for s in train {
        for (k, x) in s.values.data().iter().enumerate() {
            mean[k / hw] += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= count);
    let mut var = vec![0.0; v];
    for s in train {
        for (k, x) in s.values.data().iter().enumerate() {
            var[k / hw] += (x - mean[k / hw]).powi(2);
        }
    }
    let mut std = Vec::with_capacity(v);
    for (i, s2) in var.iter().enumerate() {
        let sd = (s2 / count).sqrt();
        if !(sd > 1e-12 * mean[i].abs().max(1.0)) {
            return Err(Error::ZeroVariance {
                variable: vars.names()[i].clone(),
            });
        }
        std.push(sd);
    }
    Ok(NormStats { mean, std })
}

pub fn snapshot_file(time: i64) -> String {
    format!("t{time}.bgn")
}

/// Writes `manifest.kv` and one `t<hours>.bgn` (f32) per snapshot.
pub fn save_dataset(dir: &Path, m: &DatasetManifest, data: &[FieldState]) -> Result<()> {
    fs::create_dir_all(dir)?;
    format::write_kv(&dir.join("manifest.kv"), &m.to_kv())?;
    for s in data {
        format::write_tensor(&dir.join(snapshot_file(s.time)), &s.values, Dtype::F32)?;
    }
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<(DatasetManifest, Vec<FieldState>)> {
    let m = DatasetManifest::from_kv(&format::read_kv(&dir.join("manifest.kv"))?)?;
    let mut out = Vec::with_capacity(m.count);
    for t in 0..m.count {
        let time = t as i64 * m.step_hours as i64;
        let path = dir.join(snapshot_file(time));
        let values = format::read_tensor(&path)?;
        if values.shape() != m.shape() {
            return Err(Error::Format {
                path,
                detail: format!("shape {:?}, manifest says {:?}", values.shape(), m.shape()),
            });
        }
        out.push(FieldState { values, time });
    }
    Ok((m, out))
}
