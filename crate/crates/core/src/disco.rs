//! Diversity estimators and the dissimilarity coefficient between the
//! prediction and conditional distributions.

use serde::{Deserialize, Serialize};

use crate::condnet::InstanceLabeling;
use crate::error::{Error, Result};
use crate::geometry::PixelMask;
use crate::loss::{delta, LossConfig};
use crate::prednet::{expected_loss_vs_sample, self_diversity_pred, PredictiveState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscoConfig {
    pub gamma: f64,
}

impl Default for DiscoConfig {
    fn default() -> Self {
        Self { gamma: 0.5 }
    }
}

impl DiscoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::InvalidConfig("gamma must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Cross diversity: mean over samples of the exact expected loss.
pub fn div_pc(state: &PredictiveState, samples: &[InstanceLabeling], cfg: &LossConfig) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::TooFewSamples { needed: 1, actual: 0 });
    }
    let mut s = 0.0;
    for y in samples {
        s += expected_loss_vs_sample(state, y, cfg)?;
    }
    Ok(s / samples.len() as f64)
}

/// Self diversity of the conditional samples over ordered distinct pairs.
pub fn div_cc(samples: &[InstanceLabeling], pool: &[PixelMask], cfg: &LossConfig) -> Result<f64> {
    let k = samples.len();
    if k < 2 {
        return Err(Error::TooFewSamples { needed: 2, actual: k });
    }
    let mut s = 0.0;
    for (a, ya) in samples.iter().enumerate() {
        for (b, yb) in samples.iter().enumerate() {
            if a != b {
                s += delta(ya, yb, pool, cfg)?.total;
            }
        }
    }
    Ok(s / (k * (k - 1)) as f64)
}

pub fn div_pp(state: &PredictiveState, cfg: &LossConfig) -> f64 {
    self_diversity_pred(state, cfg)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct DiscTerms {
    pub disc: f64,
    pub div_pc: f64,
    pub div_cc: f64,
    pub div_pp: f64,
}

impl DiscTerms {
    pub fn new(div_pc: f64, div_cc: f64, div_pp: f64, gamma: f64) -> Self {
        Self {
            disc: div_pc - gamma * div_cc - (1.0 - gamma) * div_pp,
            div_pc,
            div_cc,
            div_pp,
        }
    }
}

pub fn disc_terms(
    state: &PredictiveState,
    samples: &[InstanceLabeling],
    pool: &[PixelMask],
    loss: &LossConfig,
    cfg: &DiscoConfig,
) -> Result<DiscTerms> {
    Ok(DiscTerms::new(
        div_pc(state, samples, loss)?,
        div_cc(samples, pool, loss)?,
        div_pp(state, loss),
        cfg.gamma,
    ))
}

/// `div_pc - γ div_cc - (1 - γ) div_pp`.
pub fn disc(
    state: &PredictiveState,
    samples: &[InstanceLabeling],
    pool: &[PixelMask],
    loss: &LossConfig,
    cfg: &DiscoConfig,
) -> Result<f64> {
    Ok(disc_terms(state, samples, pool, loss, cfg)?.disc)
}
