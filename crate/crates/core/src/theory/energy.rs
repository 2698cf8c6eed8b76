use crate::error::{Error, Result};
use crate::model::{attention_row, Model};
use crate::synthdata::FieldState;

/// Percent-of-tokens thresholds reported by [`attention_energy`].
pub const ENERGY_THRESHOLDS: [f64; 5] = [0.1, 0.2, 1.0, 5.0, 100.0];

#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumReport {
    /// Normalized scores, descending.
    pub sorted: Vec<f64>,
    /// `(k percent, cumulative energy of the top k% of tokens)`.
    pub energy: Vec<(f64, f64)>,
}

impl SpectrumReport {
    /// Cumulative energy of the top `k` percent of tokens. Fractional token
    /// counts interpolate linearly into the next score.
    pub fn energy_at(&self, k: f64) -> f64 {
        let m = (k / 100.0 * self.sorted.len() as f64).clamp(0.0, self.sorted.len() as f64);
        let whole = m.floor() as usize;
        let mut e: f64 = self.sorted[..whole].iter().sum();
        if whole < self.sorted.len() {
            e += (m - whole as f64) * self.sorted[whole];
        }
        e.min(1.0)
    }

    pub fn write_csv(&self, out: &mut impl std::io::Write) -> std::io::Result<()> {
        writeln!(out, "k_percent,energy")?;
        for (k, e) in &self.energy {
            writeln!(out, "{k},{e:.9}")?;
        }
        Ok(())
    }
}

/// Sorts nonnegative attention scores, normalizes them to sum 1 and reports
/// the energy held by the top k% of tokens.
pub fn attention_energy(scores: &[f64]) -> Result<SpectrumReport> {
    if scores.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
        return Err(Error::Contract("attention scores must be finite and nonnegative".into()));
    }
    let total: f64 = scores.iter().sum();
    if total == 0.0 {
        return Err(Error::Contract("attention scores are all zero".into()));
    }
    let mut sorted: Vec<f64> = scores.iter().map(|s| s / total).collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut r = SpectrumReport {
        sorted,
        energy: Vec::new(),
    };
    r.energy = ENERGY_THRESHOLDS.iter().map(|&k| (k, r.energy_at(k))).collect();
    Ok(r)
}

/// Token at the grid cell nearest the domain center.
pub fn center_token(model: &Model) -> usize {
    let c = &model.config;
    c.token_of_cell(c.h / 2, c.w / 2)
}

/// Energy spectrum of one token's attention row at `layer`, with rows
/// averaged over heads and over `inputs`.
pub fn attention_spectrum(
    model: &Model,
    inputs: &[FieldState],
    layer: usize,
    token: usize,
    lead_hours: u32,
) -> Result<SpectrumReport> {
    if inputs.is_empty() {
        return Err(Error::Contract("attention spectrum needs at least one input".into()));
    }
    let mut acc = vec![0.0; model.config.tokens()];
    for x in inputs {
        let row = attention_row(model, layer, token, x, lead_hours)?;
        acc.iter_mut().zip(&row).for_each(|(a, r)| *a += r);
    }
    attention_energy(&acc)
}
