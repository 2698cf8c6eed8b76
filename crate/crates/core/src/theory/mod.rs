//! Linear-regression lab for denoising pre-training as spectral
//! regularization, plus attention-energy spectra.
//!
//! Covariance eigenvalues follow `λ_k = R²/√k` where `R` is the spectrum
//! scale. Samples are additionally bounded in norm by a separate radius
//! (rejection sampling), which enters the `R/n` and sample-size terms of the
//! bounds.

mod energy;

pub use energy::{attention_energy, attention_spectrum, center_token, SpectrumReport, ENERGY_THRESHOLDS};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::tensor::{stream_seed, GaussianRng};

pub const DEFAULT_DELTA: f64 = 0.05;
pub const DEFAULT_N_GRID: [usize; 7] = [64, 128, 256, 512, 1024, 2048, 4096];

#[derive(Clone, Debug, PartialEq)]
pub struct TheoryConfig {
    pub d: usize,
    pub k: usize,
    pub n: usize,
    /// Spectrum scale `R`.
    pub scale: f64,
    /// Norm bound on samples; `None` uses 1.5·√tr(Σ).
    pub radius: Option<f64>,
    /// Denoising noise variance; `None` uses the median eigenvalue.
    pub gamma: Option<f64>,
    /// Ridge coefficient; `None` uses `1/√n`.
    pub lambda: Option<f64>,
    pub sigma: f64,
    pub trials: usize,
    pub seed: u64,
    pub delta: f64,
    /// Sample sizes for the rate fit; empty skips it.
    pub n_grid: Vec<usize>,
    /// Trials per grid point for the rate fit.
    pub grid_trials: usize,
}

impl TheoryConfig {
    pub fn new(d: usize, k: usize, n: usize, trials: usize, seed: u64) -> Self {
        Self {
            d,
            k,
            n,
            scale: 10.0,
            radius: None,
            gamma: None,
            lambda: None,
            sigma: 0.5,
            trials,
            seed,
            delta: DEFAULT_DELTA,
            n_grid: Vec::new(),
            grid_trials: 40,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.d < 2 {
            return fail(format!("dimension {} must be at least 2", self.d));
        }
        if self.k == 0 || 4 * self.k > self.d {
            return fail(format!("need 1 <= K <= d/4, got K={} d={}", self.k, self.d));
        }
        if self.n == 0 || self.trials == 0 {
            return fail("n and trials must be positive".into());
        }
        let positive = |x: f64| x > 0.0 && x.is_finite();
        if !positive(self.scale) || !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return fail("scale must be positive and sigma nonnegative".into());
        }
        for (name, v) in [("radius", self.radius), ("gamma", self.gamma), ("lambda", self.lambda)] {
            if let Some(v) = v {
                if !positive(v) {
                    return fail(format!("{name} must be positive, got {v}"));
                }
            }
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return fail(format!("delta {} outside (0, 1)", self.delta));
        }
        Ok(())
    }

    fn lambda_for(&self, n: usize) -> f64 {
        self.lambda.unwrap_or(1.0 / (n as f64).sqrt())
    }
}

/// Eigenpairs of Σ, eigenvalues descending, eigenvectors as columns.
#[derive(Clone, Debug)]
pub struct SpectrumModel {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: DMatrix<f64>,
}

impl SpectrumModel {
    pub fn covariance(&self) -> DMatrix<f64> {
        let v = &self.eigenvectors;
        v * DMatrix::from_diagonal(&DVector::from_vec(self.eigenvalues.clone())) * v.transpose()
    }

    pub fn trace(&self) -> f64 {
        self.eigenvalues.iter().sum()
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn median_eigenvalue(&self) -> f64 {
        let e = &self.eigenvalues;
        let d = e.len();
        if d % 2 == 1 {
            e[d / 2]
        } else {
            0.5 * (e[d / 2 - 1] + e[d / 2])
        }
    }

    /// Projector onto the top-`k` eigenvectors.
    pub fn projector(&self, k: usize) -> DMatrix<f64> {
        let vk = self.eigenvectors.columns(0, k);
        &vk * vk.transpose()
    }
}

fn gaussian_matrix(r: usize, c: usize, rng: &mut GaussianRng) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.normal())
}

/// `λ_k = R²/√k` with a seeded random orthonormal basis.
pub fn power_law_spectrum(d: usize, scale: f64, seed: u64) -> Result<SpectrumModel> {
    if d < 2 {
        return Err(Error::Config(format!("dimension {d} must be at least 2")));
    }
    let mut rng = GaussianRng::derived(seed, &[0x5bec]);
    let qr = gaussian_matrix(d, d, &mut rng).qr();
    let (mut q, r) = (qr.q(), qr.r());
    // fix column signs so the basis is Haar-distributed and reproducible
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    let eigenvalues = (1..=d).map(|k| scale * scale / (k as f64).sqrt()).collect();
    Ok(SpectrumModel {
        eigenvalues,
        eigenvectors: q,
    })
}

pub fn default_radius(spec: &SpectrumModel) -> f64 {
    1.5 * spec.trace().sqrt()
}

#[derive(Clone, Debug)]
pub struct Problem {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub w_star: DVector<f64>,
    /// Fraction of Gaussian draws rejected for exceeding the radius.
    pub rejection_rate: f64,
}

/// Rows `x ~ N(0, Σ)` with `|x| ≤ radius` by rejection, `w*` a unit vector in
/// the top-`k` eigenspace, and `y = w*ᵀx + z` with `z ~ N(0, σ²)`.
pub fn sample_problem(
    spec: &SpectrumModel,
    k: usize,
    n: usize,
    sigma: f64,
    radius: f64,
    rng: &mut GaussianRng,
) -> Result<Problem> {
    let d = spec.dim();
    let sqrt_l = DVector::from_iterator(d, spec.eigenvalues.iter().map(|l| l.sqrt()));
    let g = DVector::from_fn(k, |_, _| rng.normal());
    let w_star = spec.eigenvectors.columns(0, k) * (&g / g.norm());

    let mut x = DMatrix::zeros(n, d);
    let (mut kept, mut drawn) = (0usize, 0usize);
    while kept < n {
        let z = DVector::from_fn(d, |_, _| rng.normal());
        let row = &spec.eigenvectors * z.component_mul(&sqrt_l);
        drawn += 1;
        if row.norm() <= radius {
            x.row_mut(kept).copy_from(&row.transpose());
            kept += 1;
        } else if drawn >= 100 && (drawn - kept) as f64 > 0.99 * drawn as f64 {
            return Err(Error::Config(format!(
                "radius {radius} rejects over 99% of samples (trace of Σ is {})",
                spec.trace()
            )));
        }
    }
    let noise = DVector::from_fn(n, |_, _| sigma * rng.normal());
    let y = &x * &w_star + noise;
    Ok(Problem {
        x,
        y,
        w_star,
        rejection_rate: (drawn - kept) as f64 / drawn as f64,
    })
}

/// `((1/n)XᵀX + λI)⁻¹ (1/n)Xᵀy` via Cholesky.
pub fn ridge_solve(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
    if !(lambda > 0.0) {
        return Err(Error::Contract(format!("ridge coefficient must be positive, got {lambda}")));
    }
    if x.nrows() != y.len() {
        return Err(Error::dim("ridge_solve", format!("{} rows vs {} labels", x.nrows(), y.len())));
    }
    let n = x.nrows() as f64;
    let mut a = x.tr_mul(x) / n;
    for i in 0..a.nrows() {
        a[(i, i)] += lambda;
    }
    let b = x.tr_mul(y) / n;
    let chol = a
        .cholesky()
        .ok_or_else(|| Error::LinAlg("ridge system is not positive definite".into()))?;
    let w = chol.solve(&b);
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::LinAlg("ridge solve produced non-finite weights".into()));
    }
    Ok(w)
}

/// `M* = Σ(Σ + γI)⁻¹`, built from the eigendecomposition.
pub fn denoise_operator(spec: &SpectrumModel, gamma: f64) -> Result<DMatrix<f64>> {
    if !(gamma > 0.0) {
        return Err(Error::Contract(format!("denoising variance must be positive, got {gamma}")));
    }
    let v = &spec.eigenvectors;
    let f = DVector::from_iterator(spec.dim(), spec.eigenvalues.iter().map(|l| l / (l + gamma)));
    Ok(v * DMatrix::from_diagonal(&f) * v.transpose())
}

/// Ridge regression on the transformed inputs `M xᵢ`.
pub fn pretrained_ridge_solve(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64, m: &DMatrix<f64>) -> Result<DVector<f64>> {
    ridge_solve(&(x * m.transpose()), y, lambda)
}

/// `tr(M*ΣM*) = Σ λ³/(λ+γ)²`.
pub fn filtered_trace(spec: &SpectrumModel, gamma: f64) -> f64 {
    spec.eigenvalues.iter().map(|l| l * l * l / ((l + gamma) * (l + gamma))).sum()
}

/// Right-hand sides of the high-probability error bounds at one setting.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bounds {
    /// Without pre-training, general spectrum.
    pub without: f64,
    /// Without pre-training, power-law substitution.
    pub power_law: f64,
    /// With pre-training, `σ²` in the noise term.
    pub with_sigma: f64,
    /// With pre-training, `γ` in the noise term (as typeset).
    pub with_gamma: f64,
    /// Sample-size condition for `without` / `power_law`.
    pub regime_without: bool,
    /// Sample-size condition for the pre-trained bounds.
    pub regime_with: bool,
}

pub struct BoundInputs {
    pub n: usize,
    pub k: usize,
    pub scale: f64,
    pub radius: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub sigma: f64,
    pub delta: f64,
    pub w_norm: f64,
}

/// First (shrinkage) term without pre-training.
pub fn shrinkage_without(lambda: f64, lambda_k: f64) -> f64 {
    lambda / (lambda_k / 2.0 + lambda)
}

/// First (shrinkage) term with pre-training.
pub fn shrinkage_with(lambda: f64, lambda_k: f64, gamma: f64) -> f64 {
    lambda / (lambda_k * lambda_k / (2.0 * (lambda_k + gamma)) + lambda)
}

pub fn bounds(spec: &SpectrumModel, b: &BoundInputs) -> Bounds {
    let n = b.n as f64;
    let log = (1.0 / b.delta).ln();
    let lk = spec.eigenvalues[b.k - 1];
    let tr = spec.trace();
    let trm = filtered_trace(spec, b.gamma);
    let d = spec.dim() as f64;
    let edge = b.radius / n;
    let noise = |var: f64, t: f64| (var * t / n * log).sqrt();
    let power_lk = b.scale * b.scale / (b.k as f64).sqrt();
    Bounds {
        without: shrinkage_without(b.lambda, lk) * b.w_norm + edge + noise(b.sigma * b.sigma, tr),
        power_law: shrinkage_without(b.lambda, power_lk) * b.w_norm
            + edge
            + noise(b.sigma * b.sigma, b.scale * d.sqrt()),
        with_sigma: shrinkage_with(b.lambda, lk, b.gamma) * b.w_norm + edge + noise(b.sigma * b.sigma, trm),
        with_gamma: shrinkage_with(b.lambda, lk, b.gamma) * b.w_norm + edge + noise(b.gamma, trm),
        regime_without: n >= 12.0 * b.radius / lk * log,
        regime_with: n >= 12.0 * b.radius * (lk + b.gamma) / (lk * lk) * log,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrialResult {
    pub trial: usize,
    pub n: usize,
    /// `|w₁ − w*|`.
    pub err_plain: f64,
    /// `|w₂ − w*|`, the ridge weights on the filtered inputs.
    pub err_pretrained: f64,
    /// `|M*w₂ − w*|`, the pre-trained predictor expressed in input space.
    pub err_effective: f64,
    pub bounds: Bounds,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TheoryReport {
    pub trials: Vec<TrialResult>,
    /// Fraction of trials with `|w₂ − w*| < |w₁ − w*|`.
    pub win_rate: f64,
    /// Set when both errors are below 1e-6 in every trial, so the win rate
    /// carries no information.
    pub uninformative: bool,
    /// `(n, median |M*w₂ − w*|)` over the n-grid.
    pub rate_points: Vec<(usize, f64)>,
    /// Least-squares slope of log median error against log n.
    pub slope: Option<f64>,
    pub gamma: f64,
    pub radius: f64,
}

impl TheoryReport {
    /// Fraction of in-regime trials whose plain error is within both the
    /// general and power-law bounds; `None` when no trial is in regime.
    pub fn coverage_without(&self) -> Option<f64> {
        let inr: Vec<_> = self.trials.iter().filter(|t| t.bounds.regime_without).collect();
        if inr.is_empty() {
            return None;
        }
        let ok = inr
            .iter()
            .filter(|t| t.err_plain <= t.bounds.without && t.err_plain <= t.bounds.power_law)
            .count();
        Some(ok as f64 / inr.len() as f64)
    }

    /// Same for the pre-trained predictor against the `σ²` variant.
    pub fn coverage_with(&self) -> Option<f64> {
        let inr: Vec<_> = self.trials.iter().filter(|t| t.bounds.regime_with).collect();
        if inr.is_empty() {
            return None;
        }
        let ok = inr.iter().filter(|t| t.err_effective <= t.bounds.with_sigma).count();
        Some(ok as f64 / inr.len() as f64)
    }

    pub fn write_csv(&self, out: &mut impl std::io::Write) -> std::io::Result<()> {
        writeln!(
            out,
            "trial,n,err_plain,err_pretrained,err_effective,bound_without,bound_power_law,bound_with_sigma,bound_with_gamma,regime_without,regime_with"
        )?;
        for t in &self.trials {
            let b = &t.bounds;
            writeln!(
                out,
                "{},{},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{},{}",
                t.trial,
                t.n,
                t.err_plain,
                t.err_pretrained,
                t.err_effective,
                b.without,
                b.power_law,
                b.with_sigma,
                b.with_gamma,
                b.regime_without,
                b.regime_with
            )?;
        }
        Ok(())
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len();
    if m % 2 == 1 {
        v[m / 2]
    } else {
        0.5 * (v[m / 2 - 1] + v[m / 2])
    }
}

/// Least-squares slope of `y` on `x`.
pub fn fit_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    if x.len() < 2 {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    Some(sxy / sxx)
}

struct Lab {
    spec: SpectrumModel,
    m: DMatrix<f64>,
    gamma: f64,
    radius: f64,
}

impl Lab {
    fn trial(&self, cfg: &TheoryConfig, n: usize, trial: usize) -> Result<TrialResult> {
        let mut rng = GaussianRng::new(stream_seed(cfg.seed, &[n as u64, trial as u64]));
        let p = sample_problem(&self.spec, cfg.k, n, cfg.sigma, self.radius, &mut rng)?;
        let lambda = cfg.lambda_for(n);
        let w1 = ridge_solve(&p.x, &p.y, lambda)?;
        let w2 = pretrained_ridge_solve(&p.x, &p.y, lambda, &self.m)?;
        let eff = &self.m * &w2;
        let b = bounds(
            &self.spec,
            &BoundInputs {
                n,
                k: cfg.k,
                scale: cfg.scale,
                radius: self.radius,
                lambda,
                gamma: self.gamma,
                sigma: cfg.sigma,
                delta: cfg.delta,
                w_norm: p.w_star.norm(),
            },
        );
        Ok(TrialResult {
            trial,
            n,
            err_plain: (&w1 - &p.w_star).norm(),
            err_pretrained: (&w2 - &p.w_star).norm(),
            err_effective: (&eff - &p.w_star).norm(),
            bounds: b,
        })
    }
}

/// Monte-Carlo comparison of plain and pre-trained ridge at `cfg.n`, plus
/// the error-rate fit over `cfg.n_grid`.
pub fn run_experiment(cfg: &TheoryConfig) -> Result<TheoryReport> {
    cfg.validate()?;
    let spec = power_law_spectrum(cfg.d, cfg.scale, cfg.seed)?;
    let gamma = cfg.gamma.unwrap_or_else(|| spec.median_eigenvalue());
    let radius = cfg.radius.unwrap_or_else(|| default_radius(&spec));
    let lab = Lab {
        m: denoise_operator(&spec, gamma)?,
        spec,
        gamma,
        radius,
    };
    let trials = (0..cfg.trials)
        .map(|t| lab.trial(cfg, cfg.n, t))
        .collect::<Result<Vec<_>>>()?;
    let wins = trials.iter().filter(|t| t.err_pretrained < t.err_plain).count();
    let uninformative = trials.iter().all(|t| t.err_plain < 1e-6 && t.err_pretrained < 1e-6);

    let mut rate_points = Vec::with_capacity(cfg.n_grid.len());
    for &n in &cfg.n_grid {
        let mut errs = (0..cfg.grid_trials.max(1))
            .map(|t| lab.trial(cfg, n, t).map(|r| r.err_effective))
            .collect::<Result<Vec<_>>>()?;
        rate_points.push((n, median(&mut errs)));
    }
    let lx: Vec<f64> = rate_points.iter().map(|(n, _)| (*n as f64).ln()).collect();
    let ly: Vec<f64> = rate_points.iter().map(|(_, e)| e.ln()).collect();
    Ok(TheoryReport {
        win_rate: wins as f64 / trials.len() as f64,
        uninformative,
        slope: fit_slope(&lx, &ly),
        rate_points,
        trials,
        gamma,
        radius,
    })
}

#[cfg(test)]
mod tests;
