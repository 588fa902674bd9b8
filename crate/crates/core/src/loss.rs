//! Masked temperature softmax, the aligned KL term, the language-modeling
//! cross entropy and their weighted combination. All arithmetic is f64.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::tensorio::LogitsMatrix;
use crate::vocabmap::AlignedBlock;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub alpha: f64,
    pub temperature: f64,
    pub epsilon: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { alpha: 0.5, temperature: 2.0, epsilon: 1e-12 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!("temperature {} must be positive", self.temperature)));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!("epsilon {} must be positive", self.epsilon)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub kl: f64,
    pub lm: f64,
    pub combined: f64,
    /// aligned positions that contributed to `kl`
    pub positions: usize,
}

/// Softmax of `slots / temperature` over valid slots only; invalid slots get 0.
/// The flag is true when no slot is valid, in which case every output is 0.
pub fn masked_softmax(slots: &[f64], mask: &[bool], temperature: f64) -> (Vec<f64>, bool) {
    debug_assert_eq!(slots.len(), mask.len());
    let max =
        slots.iter().zip(mask).filter(|(_, &m)| m).fold(f64::NEG_INFINITY, |acc, (&s, _)| acc.max(s / temperature));
    if max == f64::NEG_INFINITY {
        return (vec![0.0; slots.len()], true);
    }
    let mut out: Vec<f64> =
        slots.iter().zip(mask).map(|(&s, &m)| if m { (s / temperature - max).exp() } else { 0.0 }).collect();
    let z: f64 = out.iter().sum();
    for p in &mut out {
        *p /= z;
    }
    (out, false)
}

/// Temperature-scaled `KL(p_stu || q_tea)` at one block, or `None` when fewer
/// than two slots are valid.
pub fn block_kl(block: &AlignedBlock, cfg: &LossConfig) -> Option<f64> {
    if block.valid_slots() < 2 {
        return None;
    }
    let (p, _) = masked_softmax(&block.stu, &block.mask, cfg.temperature);
    let (q, _) = masked_softmax(&block.tea, &block.mask, cfg.temperature);
    let eps = cfg.epsilon;
    let kl: f64 = p
        .iter()
        .zip(&q)
        .zip(&block.mask)
        .filter(|(_, &m)| m)
        .map(|((&p, &q), _)| p * ((p + eps) / (q + eps)).ln())
        .sum();
    Some(cfg.temperature * cfg.temperature * kl)
}

/// Sum of per-position losses and the number of positions that produced one.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossSum {
    pub sum: f64,
    pub positions: usize,
}

impl LossSum {
    pub fn mean(&self) -> f64 {
        if self.positions == 0 {
            0.0
        } else {
            self.sum / self.positions as f64
        }
    }

    pub fn add(&mut self, other: LossSum) {
        self.sum += other.sum;
        self.positions += other.positions;
    }
}

pub fn kl_sum(blocks: &[AlignedBlock], cfg: &LossConfig) -> LossSum {
    let per_block = par::map_slice(blocks, |b| block_kl(b, cfg));
    per_block.into_iter().flatten().fold(LossSum::default(), |mut acc, x| {
        acc.sum += x;
        acc.positions += 1;
        acc
    })
}

/// Mean KL over the blocks with at least two valid slots; 0 when there are none.
pub fn kl_loss(blocks: &[AlignedBlock], cfg: &LossConfig) -> f64 {
    kl_sum(blocks, cfg).mean()
}

fn log_softmax_at(row: &[f32], index: usize) -> f64 {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
    let z: f64 = row.iter().map(|&v| (v as f64 - max).exp()).sum();
    row[index] as f64 - max - z.ln()
}

/// Next-token cross entropy summed over positions `0..n-1`, where position `i`
/// predicts `targets[i + 1]`.
pub fn lm_sum(m: &LogitsMatrix, targets: &[u32]) -> Result<LossSum> {
    if targets.len() != m.n_positions() {
        return Err(Error::LengthMismatch { what: "lm targets", left: targets.len(), right: m.n_positions() });
    }
    if let Some(&id) = targets.iter().find(|&&t| t as usize >= m.vocab_size()) {
        return Err(Error::TargetOutOfRange { id, vocab_size: m.vocab_size() });
    }
    let n = m.n_positions().saturating_sub(1);
    let terms = par::map_range(n, |i| -log_softmax_at(m.row(i), targets[i + 1] as usize));
    Ok(LossSum { sum: terms.into_iter().sum(), positions: n })
}

/// Mean next-token cross entropy; 0 for sequences shorter than two tokens.
pub fn lm_loss(m: &LogitsMatrix, targets: &[u32]) -> Result<f64> {
    Ok(lm_sum(m, targets)?.mean())
}

pub fn combined_loss(kl: f64, lm: f64, cfg: &LossConfig) -> f64 {
    cfg.alpha * kl + (1.0 - cfg.alpha) * lm
}

impl LossReport {
    pub fn from_sums(kl: LossSum, lm: LossSum, cfg: &LossConfig) -> Self {
        let (kl_mean, lm_mean) = (kl.mean(), lm.mean());
        Self { kl: kl_mean, lm: lm_mean, combined: combined_loss(kl_mean, lm_mean, cfg), positions: kl.positions }
    }
}
