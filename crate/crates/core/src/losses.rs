//! Label-smoothed cross-entropy and focal loss.
//!
//! Both take softmax probabilities and return the gradient with respect to
//! the logits that produced them. Since the prior adjustment only adds a
//! per-class constant, that is also the gradient with respect to the raw
//! model logits.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::labelspace::Label;

/// Floor for probabilities entering a logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct SmoothingConfig {
    pub epsilon: f64,
}

impl SmoothingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.epsilon) {
            return Err(domain(format!(
                "label smoothing must lie in [0, 1), got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FocalConfig {
    pub gamma: f64,
}

impl Default for FocalConfig {
    fn default() -> Self {
        Self { gamma: 2.0 }
    }
}

impl FocalConfig {
    /// Focusing values searched during fine-tuning.
    pub const GRID: [f64; 4] = [1.0, 1.5, 2.0, 3.0];

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(domain(format!(
                "focal gamma must be finite and >= 0, got {}",
                self.gamma
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    pub grad: Vec<f64>,
    /// Whether a probability had to be floored at [`PROB_FLOOR`].
    pub clamped: bool,
}

fn check(probs: &[f64], target: Label) -> Result<()> {
    if target.index() >= probs.len() {
        return Err(domain(format!(
            "target {} outside {} classes",
            target.index(),
            probs.len()
        )));
    }
    Ok(())
}

/// `−Σ q_c ln p_c` with `q = (1−ε)·onehot + ε/K`; gradient `p − q`.
///
/// A floored term is constant, so it drops out of the gradient:
/// `∂L/∂z_j = Q p_j − q_j [p_j unfloored]` with `Q` the unfloored target mass.
pub fn ce_smoothed(probs: &[f64], target: Label, cfg: &SmoothingConfig) -> Result<LossOutput> {
    check(probs, target)?;
    let k = probs.len() as f64;
    let off = cfg.epsilon / k;
    let on = 1.0 - cfg.epsilon + off;
    let q = |c: usize| if c == target.index() { on } else { off };
    let mut loss = 0.0;
    let mut clamped = false;
    let mut live_mass = 0.0;
    for (c, &p) in probs.iter().enumerate() {
        if q(c) > 0.0 {
            if p < PROB_FLOOR {
                clamped = true;
            } else {
                live_mass += q(c);
            }
            loss -= q(c) * p.max(PROB_FLOOR).ln();
        }
    }
    let grad = probs
        .iter()
        .enumerate()
        .map(|(c, &p)| live_mass * p - if p < PROB_FLOOR { 0.0 } else { q(c) })
        .collect();
    Ok(LossOutput {
        loss,
        grad,
        clamped,
    })
}

/// `−(1 − p_t)^γ ln p_t`, no class weighting. Flat once `p_t` is floored.
pub fn focal(probs: &[f64], target: Label, cfg: &FocalConfig) -> Result<LossOutput> {
    check(probs, target)?;
    let t = target.index();
    let clamped = probs[t] < PROB_FLOOR;
    let pt = probs[t].max(PROB_FLOOR);
    let gamma = cfg.gamma;
    let miss = 1.0 - pt;
    let log_pt = pt.ln();
    let loss = -miss.powf(gamma) * log_pt;

    // dL/dp_t · p_t; the softmax Jacobian supplies the (δ_tj − p_j) factor
    let coef = if clamped {
        0.0
    } else if gamma == 0.0 {
        -1.0
    } else if miss == 0.0 {
        0.0
    } else {
        gamma * miss.powf(gamma - 1.0) * pt * log_pt - miss.powf(gamma)
    };
    let grad = probs
        .iter()
        .enumerate()
        .map(|(j, &pj)| coef * (if j == t { 1.0 } else { 0.0 } - pj))
        .collect();
    Ok(LossOutput {
        loss,
        grad,
        clamped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossConfig {
    Ce { smoothing: SmoothingConfig },
    Focal { focal: FocalConfig },
}

impl LossConfig {
    pub fn ce() -> Self {
        LossConfig::Ce {
            smoothing: SmoothingConfig::default(),
        }
    }

    pub fn focal(gamma: f64) -> Self {
        LossConfig::Focal {
            focal: FocalConfig { gamma },
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            LossConfig::Ce { smoothing } => smoothing.validate(),
            LossConfig::Focal { focal } => focal.validate(),
        }
    }

    pub fn evaluate(&self, probs: &[f64], target: Label) -> Result<LossOutput> {
        match self {
            LossConfig::Ce { smoothing } => ce_smoothed(probs, target, smoothing),
            LossConfig::Focal { focal: cfg } => focal(probs, target, cfg),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LossConfig::Ce { .. } => "ce",
            LossConfig::Focal { .. } => "focal",
        }
    }
}
