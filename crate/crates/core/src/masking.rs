//! Asymmetric two-frame masking and the task-difficulty score.
//!
//! Frame 1 is the earlier state (`t-1`, ratio `r_{t-1}`), frame 2 the later
//! one (`t`, ratio `r_t`). Siamese pre-training uses `r_{t-1} = 0`; the
//! single-frame MAE setting corresponds to `r_{t-1} = 1`.

use crate::error::{Error, Result};
use crate::model::TokenSequence;
use crate::tensor::{GaussianRng, Tensor};

/// Masking ratios swept by the ablation harness.
pub const ABLATION_RATIOS: [f64; 4] = [0.5, 0.75, 0.95, 0.99];

pub const DEFAULT_NOISE_STD: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Frame {
    /// Earlier frame, `X^{t0}`.
    First,
    /// Later frame, `X^{t0+Δt}`.
    Second,
}

impl Frame {
    fn stream(self) -> u64 {
        match self {
            Frame::First => 1,
            Frame::Second => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaskPlan {
    pub frame1_ratio: f64,
    pub frame2_ratio: f64,
    frame1: Vec<usize>,
    frame2: Vec<usize>,
    pub tokens: usize,
    pub seed: u64,
    pub noise_std: f64,
}

/// `round(r·n)` with halves rounded up.
pub fn masked_count(n: usize, ratio: f64) -> usize {
    ((ratio * n as f64) + 0.5).floor() as usize
}

fn choose(n: usize, k: usize, rng: &mut GaussianRng) -> Vec<usize> {
    // partial Fisher–Yates
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = i + rng.below(n - i);
        idx.swap(i, j);
    }
    let mut out = idx[..k].to_vec();
    out.sort_unstable();
    out
}

fn check_ratio(r: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::Contract(format!("masking ratio {r} outside [0, 1]")));
    }
    Ok(())
}

/// Uniformly random masks of exact size `round(r·n)` for each frame.
pub fn make_plan(n: usize, r_t: f64, r_prev: f64, seed: u64) -> Result<MaskPlan> {
    check_ratio(r_t)?;
    check_ratio(r_prev)?;
    let mut rng1 = GaussianRng::derived(seed, &[Frame::First.stream()]);
    let mut rng2 = GaussianRng::derived(seed, &[Frame::Second.stream()]);
    Ok(MaskPlan {
        frame1_ratio: r_prev,
        frame2_ratio: r_t,
        frame1: choose(n, masked_count(n, r_prev), &mut rng1),
        frame2: choose(n, masked_count(n, r_t), &mut rng2),
        tokens: n,
        seed,
        noise_std: DEFAULT_NOISE_STD,
    })
}

impl MaskPlan {
    pub fn with_noise_std(mut self, std: f64) -> Self {
        self.noise_std = std;
        self
    }

    /// Sorted masked token indices of one frame.
    pub fn masked(&self, frame: Frame) -> &[usize] {
        match frame {
            Frame::First => &self.frame1,
            Frame::Second => &self.frame2,
        }
    }

    pub fn flags(&self, frame: Frame) -> Vec<bool> {
        let mut f = vec![false; self.tokens];
        for &i in self.masked(frame) {
            f[i] = true;
        }
        f
    }

    /// The replacement noise for a frame: `tokens×d` seeded Gaussian values.
    /// Only rows listed in [`MaskPlan::masked`] are ever used.
    pub fn noise(&self, frame: Frame, d: usize) -> Tensor {
        let mut rng = GaussianRng::derived(self.seed, &[10 + frame.stream()]);
        Tensor::randn(&[self.tokens, d], self.noise_std, &mut rng)
    }
}

/// Replaces the masked rows of `tokens` with the plan's noise; unmasked rows
/// are copied untouched.
pub fn apply(tokens: &TokenSequence, plan: &MaskPlan, frame: Frame) -> Result<TokenSequence> {
    let (n, d) = tokens.tokens.dims2("mask_apply")?;
    if n != plan.tokens {
        return Err(Error::Contract(format!(
            "mask plan built for {} tokens applied to {n}",
            plan.tokens
        )));
    }
    let noise = plan.noise(frame, d);
    let mut out = tokens.tokens.clone();
    let mut masked = tokens.masked.clone();
    for &i in plan.masked(frame) {
        out.data_mut()[i * d..(i + 1) * d].copy_from_slice(&noise.data()[i * d..(i + 1) * d]);
        masked[i] = true;
    }
    Ok(TokenSequence {
        tokens: out,
        masked,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DifficultyScore {
    pub value: f64,
    pub lambda_t: f64,
    pub lambda_prev: f64,
}

/// `1 / (λ_t(1−r_t) + λ_{t−1}(1−r_{t−1}))`.
pub fn task_difficulty(lambda_t: f64, lambda_prev: f64, r_t: f64, r_prev: f64) -> Result<DifficultyScore> {
    if lambda_t < 0.0 || lambda_prev < 0.0 {
        return Err(Error::Contract("information weights must be nonnegative".into()));
    }
    check_ratio(r_t)?;
    check_ratio(r_prev)?;
    let denom = lambda_t * (1.0 - r_t) + lambda_prev * (1.0 - r_prev);
    if denom <= 0.0 {
        return Err(Error::InfiniteDifficulty);
    }
    Ok(DifficultyScore {
        value: 1.0 / denom,
        lambda_t,
        lambda_prev,
    })
}
