//! Autoregressive rollout and lead-time-composition ensembles.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::{forward, Frame2, Model};
use crate::synthdata::FieldState;
use crate::tensor::Tensor;

/// Ordered lead-time steps in hours.
pub type Composition = Vec<u32>;

pub const DEFAULT_MAX_ITERATIONS: usize = 8;

/// Seed of the blank frame-2 noise used for every inference call.
pub const INFERENCE_SEED: u64 = 0;

fn normalize_parts(available: &[u32]) -> Result<Vec<u32>> {
    let mut parts = available.to_vec();
    parts.sort_unstable();
    parts.dedup();
    if parts.is_empty() || parts[0] == 0 {
        return Err(Error::Contract("lead times must be a nonempty set of positive hours".into()));
    }
    Ok(parts)
}

/// Walks every composition of `target` over `available` in lexicographic
/// order without materializing them.
pub struct Compositions {
    parts: Vec<u32>,
    target: u32,
    stack: Vec<usize>,
    values: Vec<u32>,
    sum: u32,
    started: bool,
    done: bool,
}

impl Compositions {
    pub fn new(target: u32, available: &[u32]) -> Result<Self> {
        if target == 0 {
            return Err(Error::Contract("target horizon must be positive".into()));
        }
        Ok(Self {
            parts: normalize_parts(available)?,
            target,
            stack: Vec::new(),
            values: Vec::new(),
            sum: 0,
            started: false,
            done: false,
        })
    }

    fn push(&mut self, i: usize) {
        self.stack.push(i);
        self.values.push(self.parts[i]);
        self.sum += self.parts[i];
    }

    /// Replaces the deepest step by its next larger part, popping levels
    /// where no larger part fits.
    fn bump(&mut self) -> bool {
        while let Some(i) = self.stack.pop() {
            self.values.pop();
            self.sum -= self.parts[i];
            if i + 1 < self.parts.len() && self.sum + self.parts[i + 1] <= self.target {
                self.push(i + 1);
                return true;
            }
        }
        false
    }

    #[allow(clippy::should_implement_trait)]
    pub fn next(&mut self) -> Option<&[u32]> {
        if self.done {
            return None;
        }
        if self.started && !self.bump() {
            self.done = true;
            return None;
        }
        self.started = true;
        loop {
            while self.sum < self.target && self.sum + self.parts[0] <= self.target {
                self.push(0);
            }
            if self.sum == self.target {
                return Some(&self.values);
            }
            if !self.bump() {
                self.done = true;
                return None;
            }
        }
    }
}

/// Every ordered sequence over `available` summing to `target`, in
/// lexicographic order. Unreachable targets give an empty list.
pub fn enumerate_compositions(target: u32, available: &[u32]) -> Result<Vec<Composition>> {
    let mut it = Compositions::new(target, available)?;
    let mut out = Vec::new();
    while let Some(c) = it.next() {
        out.push(c.to_vec());
    }
    Ok(out)
}

/// Keeps compositions of at most `max_iterations` steps, shortest first,
/// ties broken lexicographically.
pub fn prune(comps: &[Composition], max_iterations: usize) -> Result<Vec<Composition>> {
    if max_iterations == 0 {
        return Err(Error::Contract("max_iterations must be at least 1".into()));
    }
    let mut kept: Vec<Composition> = comps.iter().filter(|c| c.len() <= max_iterations).cloned().collect();
    kept.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    Ok(kept)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnsemblePlan {
    pub target_hours: u32,
    pub available: Vec<u32>,
    pub max_iterations: usize,
    pub members: Vec<Composition>,
}

impl EnsemblePlan {
    pub fn new(target_hours: u32, available: &[u32], max_iterations: usize) -> Result<Self> {
        let comps = enumerate_compositions(target_hours, available)?;
        Ok(Self {
            target_hours,
            available: normalize_parts(available)?,
            max_iterations,
            members: prune(&comps, max_iterations)?,
        })
    }
}

/// Feeds each prediction back as the next input; returns the state after
/// every step.
pub fn rollout(models: &BTreeMap<u32, Model>, x0: &FieldState, comp: &[u32]) -> Result<Vec<FieldState>> {
    let mut out: Vec<FieldState> = Vec::with_capacity(comp.len());
    for &lead in comp {
        let model = models
            .get(&lead)
            .ok_or_else(|| Error::Config(format!("no fine-tuned model for a {lead} h lead time")))?;
        let x = out.last().unwrap_or(x0);
        let y = forward(model, x, Frame2::Blank { seed: INFERENCE_SEED }, lead)?;
        out.push(y);
    }
    Ok(out)
}

pub struct EnsembleOutput {
    pub mean: FieldState,
    /// Final state of each member, in plan order.
    pub members: Vec<FieldState>,
}

/// Rolls every member to the target and averages them elementwise.
pub fn ensemble_forecast(models: &BTreeMap<u32, Model>, x0: &FieldState, plan: &EnsemblePlan) -> Result<EnsembleOutput> {
    if plan.members.is_empty() {
        return Err(Error::Contract(format!(
            "no composition of {} h survives a cap of {} steps",
            plan.target_hours, plan.max_iterations
        )));
    }
    let mut members = Vec::with_capacity(plan.members.len());
    for comp in &plan.members {
        let path = rollout(models, x0, comp)?;
        members.push(path.into_iter().last().expect("compositions are nonempty"));
    }
    let mut sum = vec![0.0; x0.values.numel()];
    for m in &members {
        sum.iter_mut().zip(m.values.data()).for_each(|(s, v)| *s += v);
    }
    let k = members.len() as f64;
    let mean = Tensor::new(x0.values.shape().to_vec(), sum.into_iter().map(|s| s / k).collect())?;
    Ok(EnsembleOutput {
        mean: FieldState::new(mean, x0.time + plan.target_hours as i64)?,
        members,
    })
}
