//! Dirichlet prior augmentation.
//!
//! Every training step draws a pseudo class prior `π̃ ~ Dir(α·1)` and shifts
//! the logits of the whole mini-batch by `τ · ln π̃` before the softmax. The
//! model therefore sees a different label-distribution bias at every step and
//! cannot latch onto the (fixed) prior of its training set.
//!
//! The module holds the Gamma/Dirichlet sampler, the logit adjustment, a
//! numerically stable softmax and the Dirichlet log-density used for plot data.

use rand::Rng;
use rand_distr::{Distribution, Open01, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{domain, Result};

/// Floor applied to prior components before taking their logarithm.
pub const LOG_PRIOR_FLOOR: f64 = 1e-12;

/// Concentration and temperature values searched during fine-tuning.
pub const ALPHA_GRID: [f64; 7] = [0.01, 0.1, 0.5, 1.0, 2.0, 3.0, 5.0];
pub const TAU_GRID: [f64; 5] = [0.5, 1.0, 2.0, 5.0, 10.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DirpaMode {
    #[default]
    Symmetric,
    /// One focus class, redrawn every step, uses `asym_focus_alpha`.
    Asymmetric,
    /// Always the uniform prior. A diagnostic stub: the adjustment is then a
    /// constant shift and training must match a run without augmentation.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirpaConfig {
    pub alpha: f64,
    pub tau: f64,
    #[serde(default)]
    pub mode: DirpaMode,
    #[serde(default = "default_focus_alpha")]
    pub asym_focus_alpha: f64,
}

fn default_focus_alpha() -> f64 {
    1.0
}

impl DirpaConfig {
    pub fn symmetric(alpha: f64, tau: f64) -> Self {
        Self {
            alpha,
            tau,
            mode: DirpaMode::Symmetric,
            asym_focus_alpha: default_focus_alpha(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(domain(format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(domain(format!("tau must be positive, got {}", self.tau)));
        }
        if self.mode == DirpaMode::Asymmetric && !(self.asym_focus_alpha > 0.0) {
            return Err(domain("asym_focus_alpha must be positive"));
        }
        Ok(())
    }
}

/// A point on the probability simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoPrior {
    probs: Vec<f64>,
}

impl PseudoPrior {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(domain("prior needs at least one class"));
        }
        if probs.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
            return Err(domain("prior components must be finite and non-negative"));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(domain(format!("prior sums to {sum}, not 1")));
        }
        Ok(Self { probs })
    }

    pub fn uniform(k: usize) -> Self {
        Self {
            probs: vec![1.0 / k as f64; k],
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// Natural log of a `Gamma(shape, 1)` variate.
///
/// Marsaglia–Tsang squeeze for `shape ≥ 1`; for `shape < 1` the boost
/// `Gamma(a) = Gamma(a + 1) · U^{1/a}` is applied in log space, which keeps
/// draws at `a = 0.01` from underflowing to zero.
pub fn sample_log_gamma<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    debug_assert!(shape > 0.0);
    if shape < 1.0 {
        let u: f64 = Open01.sample(rng);
        return sample_log_gamma(shape + 1.0, rng) + u.ln() / shape;
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x: f64 = StandardNormal.sample(rng);
        let t = 1.0 + c * x;
        if t <= 0.0 {
            continue;
        }
        let v = t * t * t;
        let u: f64 = Open01.sample(rng);
        let x2 = x * x;
        if u < 1.0 - 0.0331 * x2 * x2 || u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
            return d.ln() + v.ln();
        }
    }
}

pub fn sample_gamma<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    sample_log_gamma(shape, rng).exp()
}

/// Draws from `Dir(concentrations)` by normalizing independent Gamma
/// variates; normalization happens in log space.
pub fn sample_dirichlet<R: Rng + ?Sized>(
    concentrations: &[f64],
    rng: &mut R,
) -> Result<PseudoPrior> {
    if concentrations.is_empty() {
        return Err(domain("Dirichlet needs at least one component"));
    }
    if let Some(a) = concentrations
        .iter()
        .find(|a| !(**a > 0.0 && a.is_finite()))
    {
        return Err(domain(format!("concentration must be positive, got {a}")));
    }
    if concentrations.len() == 1 {
        return Ok(PseudoPrior { probs: vec![1.0] });
    }
    let logs: Vec<f64> = concentrations
        .iter()
        .map(|&a| sample_log_gamma(a, rng))
        .collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= sum);
    Ok(PseudoPrior { probs })
}

/// One pseudo-prior per training step.
pub fn sample_pseudo_prior<R: Rng + ?Sized>(
    k: usize,
    cfg: &DirpaConfig,
    rng: &mut R,
) -> Result<PseudoPrior> {
    if k == 0 {
        return Err(domain("cannot sample a prior over zero classes"));
    }
    cfg.validate()?;
    match cfg.mode {
        DirpaMode::Uniform => Ok(PseudoPrior::uniform(k)),
        DirpaMode::Symmetric => sample_dirichlet(&vec![cfg.alpha; k], rng),
        DirpaMode::Asymmetric => {
            let focus = rng.random_range(0..k);
            let mut conc = vec![cfg.alpha; k];
            conc[focus] = cfg.asym_focus_alpha;
            sample_dirichlet(&conc, rng)
        }
    }
}

/// Where a training loop gets its per-step prior from.
pub trait PriorSource {
    fn next_prior(&mut self, k: usize) -> Result<PseudoPrior>;
}

/// Fresh Dirichlet draws from an owned RNG stream.
pub struct DirichletPriors<R> {
    cfg: DirpaConfig,
    rng: R,
}

impl<R: Rng> DirichletPriors<R> {
    pub fn new(cfg: DirpaConfig, rng: R) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg, rng })
    }
}

impl<R: Rng> PriorSource for DirichletPriors<R> {
    fn next_prior(&mut self, k: usize) -> Result<PseudoPrior> {
        sample_pseudo_prior(k, &self.cfg, &mut self.rng)
    }
}

/// Returns the same prior at every step.
#[derive(Debug, Clone)]
pub struct FixedPrior(pub PseudoPrior);

impl PriorSource for FixedPrior {
    fn next_prior(&mut self, k: usize) -> Result<PseudoPrior> {
        if self.0.len() != k {
            return Err(domain(format!(
                "fixed prior has {} classes, model {k}",
                self.0.len()
            )));
        }
        Ok(self.0.clone())
    }
}

fn clamped_log(p: f64, clamps: &mut usize) -> f64 {
    if p <= LOG_PRIOR_FLOOR {
        *clamps += 1;
        LOG_PRIOR_FLOOR.ln()
    } else {
        p.ln()
    }
}

/// `z′_c = z_c + τ ln π̃_c`, with `π̃_c` floored at [`LOG_PRIOR_FLOOR`].
/// Returns the adjusted logits and the number of clamped components.
pub fn adjust_logits(logits: &[f64], prior: &PseudoPrior, tau: f64) -> Result<(Vec<f64>, usize)> {
    if logits.len() != prior.len() {
        return Err(domain(format!(
            "{} logits vs {}-class prior",
            logits.len(),
            prior.len()
        )));
    }
    let mut clamps = 0;
    let out = logits
        .iter()
        .zip(prior.probs())
        .map(|(&z, &p)| z + tau * clamped_log(p, &mut clamps))
        .collect();
    Ok((out, clamps))
}

/// Per-step additive logit offsets `τ (ln π̃_c − max_j ln π̃_j)`.
///
/// Differs from [`adjust_logits`] by a per-step constant, which the softmax
/// ignores. Centering makes the offsets of a uniform prior exactly zero, so
/// a uniform draw reproduces unaugmented training bit for bit.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorShift {
    offsets: Vec<f64>,
    clamps: usize,
}

impl PriorShift {
    pub fn new(prior: &PseudoPrior, tau: f64) -> Self {
        let mut clamps = 0;
        let logs: Vec<f64> = prior
            .probs()
            .iter()
            .map(|&p| clamped_log(p, &mut clamps))
            .collect();
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self {
            offsets: logs.iter().map(|l| tau * (l - max)).collect(),
            clamps,
        }
    }

    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    pub fn clamps(&self) -> usize {
        self.clamps
    }

    pub fn apply(&self, logits: &mut [f64]) {
        debug_assert_eq!(logits.len(), self.offsets.len());
        logits
            .iter_mut()
            .zip(&self.offsets)
            .for_each(|(z, o)| *z += o);
    }
}

/// Max-shifted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= sum);
    out
}

/// `ln B(α)` via log-Gamma.
pub fn ln_multivariate_beta(alpha: &[f64]) -> f64 {
    alpha.iter().map(|&a| ln_gamma(a)).sum::<f64>() - ln_gamma(alpha.iter().sum())
}

/// Log-density of `Dir(alpha)` at `x`.
///
/// A point with a zero component is only accepted when the matching
/// concentration is exactly 1 (the factor `x^0` is then 1).
pub fn dirichlet_log_density(x: &[f64], alpha: &[f64]) -> Result<f64> {
    if x.len() != alpha.len() || x.is_empty() {
        return Err(domain(format!(
            "point has {} components, alpha {}",
            x.len(),
            alpha.len()
        )));
    }
    if let Some(a) = alpha.iter().find(|a| !(**a > 0.0 && a.is_finite())) {
        return Err(domain(format!("concentration must be positive, got {a}")));
    }
    let sum: f64 = x.iter().sum();
    if x.iter().any(|v| !(*v >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
        return Err(domain("point does not lie on the simplex"));
    }
    let mut acc = -ln_multivariate_beta(alpha);
    for (&xc, &ac) in x.iter().zip(alpha) {
        if ac == 1.0 {
            continue;
        }
        if xc == 0.0 {
            return Err(domain(
                "density undefined on the simplex boundary for alpha != 1",
            ));
        }
        acc += (ac - 1.0) * xc.ln();
    }
    Ok(acc)
}
