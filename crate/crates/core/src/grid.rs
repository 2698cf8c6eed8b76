//! Lat-lon grid geometry, latitude weighting, climatology, verification
//! metrics and the weighted training losses.

use std::io::Write;

use crate::error::{Error, Result};
use crate::synthdata::FieldState;
use crate::tensor::{Graph, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct GridSpec {
    latitudes: Vec<f64>,
    longitudes: Vec<f64>,
}

impl GridSpec {
    /// Validates latitudes (strictly monotone, inside [-90, 90]) and builds
    /// `w` uniformly spaced longitudes starting at 0.
    pub fn new(latitudes: Vec<f64>, w: usize) -> Result<Self> {
        if latitudes.is_empty() || w == 0 {
            return Err(Error::Config("grid needs at least one row and one column".into()));
        }
        if latitudes.iter().any(|l| !(-90.0..=90.0).contains(l)) {
            return Err(Error::Config("latitudes must lie in [-90, 90]".into()));
        }
        let increasing = latitudes.windows(2).all(|p| p[1] > p[0]);
        let decreasing = latitudes.windows(2).all(|p| p[1] < p[0]);
        if !(increasing || decreasing) {
            return Err(Error::Config("latitudes must be strictly monotone".into()));
        }
        let mean_cos =
            latitudes.iter().map(|l| l.to_radians().cos()).sum::<f64>() / latitudes.len() as f64;
        if mean_cos <= 1e-12 {
            return Err(Error::Config("latitude rows carry no area weight".into()));
        }
        let longitudes = (0..w).map(|j| 360.0 * j as f64 / w as f64).collect();
        Ok(Self {
            latitudes,
            longitudes,
        })
    }

    /// Cell-centred rows from north to south: `90 - (i + 1/2)·180/h`.
    pub fn uniform(h: usize, w: usize) -> Result<Self> {
        let lats = (0..h)
            .map(|i| 90.0 - (i as f64 + 0.5) * 180.0 / h as f64)
            .collect();
        Self::new(lats, w)
    }

    /// Rows that include both poles, `90 - i·180/(h-1)` (the ERA5 layout).
    pub fn with_poles(h: usize, w: usize) -> Result<Self> {
        if h < 2 {
            return Err(Error::Config("a pole-to-pole grid needs h >= 2".into()));
        }
        let lats = (0..h)
            .map(|i| 90.0 - i as f64 * 180.0 / (h - 1) as f64)
            .collect();
        Self::new(lats, w)
    }

    pub fn h(&self) -> usize {
        self.latitudes.len()
    }

    pub fn w(&self) -> usize {
        self.longitudes.len()
    }

    pub fn latitudes(&self) -> &[f64] {
        &self.latitudes
    }

    pub fn longitudes(&self) -> &[f64] {
        &self.longitudes
    }

    /// `L(i) = cos(lat_i) / mean_k cos(lat_k)`, so the row mean is 1.
    pub fn latitude_weights(&self) -> Vec<f64> {
        latitude_weights(self)
    }
}

pub fn latitude_weights(g: &GridSpec) -> Vec<f64> {
    let cos: Vec<f64> = g.latitudes.iter().map(|l| l.to_radians().cos().max(0.0)).collect();
    let mean = cos.iter().sum::<f64>() / cos.len() as f64;
    cos.iter().map(|c| c / mean).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct VariableSet {
    names: Vec<String>,
    pressure_weights: Vec<f64>,
}

impl VariableSet {
    pub fn uniform(names: Vec<String>) -> Result<Self> {
        let n = names.len();
        Self::with_weights(names, vec![1.0; n])
    }

    /// Normalizes `weights` to sum to 1.
    pub fn with_weights(names: Vec<String>, weights: Vec<f64>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::Config("at least one variable is required".into()));
        }
        if names.len() != weights.len() {
            return Err(Error::Config(format!(
                "{} variables but {} weights",
                names.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config("variable weights must be finite and nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::Config("variable weights sum to zero".into()));
        }
        Ok(Self {
            names,
            pressure_weights: weights.iter().map(|w| w / total).collect(),
        })
    }

    /// Weights proportional to level pressure, so near-surface levels count most.
    pub fn pressure_decay(names: Vec<String>, pressures_hpa: &[f64]) -> Result<Self> {
        Self::with_weights(names, pressures_hpa.iter().map(|p| p / 1000.0).collect())
    }

    /// `v0, v1, ...` with uniform weights.
    pub fn numbered(v: usize) -> Result<Self> {
        Self::uniform((0..v).map(|i| format!("v{i}")).collect())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn weights(&self) -> &[f64] {
        &self.pressure_weights
    }
}

/// Temporal mean of ground-truth states.
#[derive(Clone, Debug, PartialEq)]
pub struct Climatology {
    mean: Tensor,
}

impl Climatology {
    pub fn from_states(states: &[FieldState]) -> Result<Self> {
        climatology(states)
    }

    pub fn mean(&self) -> &Tensor {
        &self.mean
    }
}

pub fn climatology(states: &[FieldState]) -> Result<Climatology> {
    let first = states
        .first()
        .ok_or_else(|| Error::Contract("climatology of an empty dataset".into()))?;
    let mut acc = vec![0.0; first.values.numel()];
    for s in states {
        if s.values.shape() != first.values.shape() {
            return Err(Error::dim("climatology", "snapshot shapes differ"));
        }
        acc.iter_mut().zip(s.values.data()).for_each(|(a, v)| *a += v);
    }
    let n = states.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(Climatology {
        mean: Tensor::new(first.values.shape().to_vec(), acc)?,
    })
}

fn check_series(pred: &[FieldState], truth: &[FieldState], g: &GridSpec, var: usize) -> Result<()> {
    if pred.is_empty() {
        return Err(Error::Contract("metric over an empty series".into()));
    }
    if pred.len() != truth.len() {
        return Err(Error::Contract(format!(
            "series lengths differ: {} vs {}",
            pred.len(),
            truth.len()
        )));
    }
    for (p, t) in pred.iter().zip(truth) {
        let s = p.values.shape();
        if s != t.values.shape() || s.len() != 3 || s[1] != g.h() || s[2] != g.w() {
            return Err(Error::dim(
                "metric",
                format!("field shapes {:?} / {:?} on {}x{} grid", s, t.values.shape(), g.h(), g.w()),
            ));
        }
        if var >= s[0] {
            return Err(Error::Contract(format!("variable index {var} out of range")));
        }
    }
    Ok(())
}

fn plane(s: &FieldState, var: usize) -> &[f64] {
    let hw = s.values.shape()[1] * s.values.shape()[2];
    &s.values.data()[var * hw..(var + 1) * hw]
}

/// Latitude-weighted RMSE averaged over the time series.
pub fn rmse(pred: &[FieldState], truth: &[FieldState], g: &GridSpec, var: usize) -> Result<f64> {
    check_series(pred, truth, g, var)?;
    let lw = latitude_weights(g);
    let (h, w) = (g.h(), g.w());
    let mut total = 0.0;
    for (p, t) in pred.iter().zip(truth) {
        let (pp, tp) = (plane(p, var), plane(t, var));
        let mut s = 0.0;
        for i in 0..h {
            for j in 0..w {
                let d = pp[i * w + j] - tp[i * w + j];
                s += lw[i] * d * d;
            }
        }
        total += (s / (h * w) as f64).sqrt();
    }
    Ok(total / pred.len() as f64)
}

/// Latitude-weighted anomaly correlation over the whole series.
pub fn acc(
    pred: &[FieldState],
    truth: &[FieldState],
    clim: &Climatology,
    g: &GridSpec,
    var: usize,
) -> Result<f64> {
    check_series(pred, truth, g, var)?;
    if clim.mean.shape() != pred[0].values.shape() {
        return Err(Error::dim("acc", "climatology shape differs from fields"));
    }
    let lw = latitude_weights(g);
    let (h, w) = (g.h(), g.w());
    let hw = h * w;
    let c = &clim.mean.data()[var * hw..(var + 1) * hw];
    let (mut cross, mut pp_e, mut tt_e) = (0.0, 0.0, 0.0);
    for (p, t) in pred.iter().zip(truth) {
        let (pp, tp) = (plane(p, var), plane(t, var));
        for i in 0..h {
            for j in 0..w {
                let k = i * w + j;
                let a = pp[k] - c[k];
                let b = tp[k] - c[k];
                cross += lw[i] * a * b;
                pp_e += lw[i] * a * a;
                tt_e += lw[i] * b * b;
            }
        }
    }
    if pp_e <= 0.0 {
        return Err(Error::UndefinedCorrelation("prediction anomalies"));
    }
    if tt_e <= 0.0 {
        return Err(Error::UndefinedCorrelation("truth anomalies"));
    }
    Ok((cross / (pp_e * tt_e).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossMode {
    Mse,
    Mae,
}

/// Per-cell loss weights `ω(v)·L(i) / (V·H·W)` as a `V×H×W` tensor.
pub fn loss_weights(vs: &VariableSet, g: &GridSpec) -> Tensor {
    let lw = latitude_weights(g);
    let (v, h, w) = (vs.len(), g.h(), g.w());
    let denom = (v * h * w) as f64;
    Tensor::from_fn(&[v, h, w], |k| {
        let var = k / (h * w);
        let i = (k / w) % h;
        vs.weights()[var] * lw[i] / denom
    })
}

/// Like [`loss_weights`] but restricted to the cells flagged in `cells`
/// (`H×W`, row-major); the normalization counts only the selected cells.
pub fn masked_loss_weights(vs: &VariableSet, g: &GridSpec, cells: &[bool]) -> Result<Tensor> {
    let (v, h, w) = (vs.len(), g.h(), g.w());
    if cells.len() != h * w {
        return Err(Error::dim("masked_loss_weights", format!("{} flags for {}x{} grid", cells.len(), h, w)));
    }
    let selected = cells.iter().filter(|&&c| c).count();
    if selected == 0 {
        return Ok(Tensor::zeros(&[v, h, w]));
    }
    let lw = latitude_weights(g);
    let denom = (v * selected) as f64;
    Ok(Tensor::from_fn(&[v, h, w], |k| {
        let cell = k % (h * w);
        if !cells[cell] {
            return 0.0;
        }
        vs.weights()[k / (h * w)] * lw[cell / w] / denom
    }))
}

/// `Σ weights·err(pred − target)` where `err` is the square or absolute value.
pub fn weighted_loss_with(
    graph: &mut Graph,
    pred: Var,
    target: &Tensor,
    weights: &Tensor,
    mode: LossMode,
) -> Result<Var> {
    if graph.shape(pred) != target.shape() || target.shape() != weights.shape() {
        return Err(Error::dim(
            "weighted_loss",
            format!(
                "pred {:?}, target {:?}, weights {:?}",
                graph.shape(pred),
                target.shape(),
                weights.shape()
            ),
        ));
    }
    let t = graph.constant(target.clone());
    let d = graph.sub(pred, t)?;
    let e = match mode {
        LossMode::Mse => graph.square(d)?,
        LossMode::Mae => graph.abs(d)?,
    };
    let wv = graph.constant(weights.clone());
    let we = graph.mul(e, wv)?;
    graph.sum(we)
}

/// Pressure- and latitude-weighted MSE or MAE over every cell.
pub fn weighted_loss(
    graph: &mut Graph,
    pred: Var,
    target: &Tensor,
    vs: &VariableSet,
    g: &GridSpec,
    mode: LossMode,
) -> Result<Var> {
    weighted_loss_with(graph, pred, target, &loss_weights(vs, g), mode)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub variable: String,
    pub lead_hours: u32,
    pub rmse: f64,
    pub acc: f64,
}

pub fn write_metrics_csv(out: &mut impl Write, rows: &[MetricRow]) -> std::io::Result<()> {
    writeln!(out, "variable,lead_hours,rmse,acc")?;
    for r in rows {
        writeln!(out, "{},{},{:.9},{:.9}", r.variable, r.lead_hours, r.rmse, r.acc)?;
    }
    Ok(())
}
