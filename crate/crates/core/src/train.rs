//! Adam, learning-rate schedules, and the training loops.
//!
//! Every run owns its random streams, all derived from the run seed:
//! stream 0 initializes parameters, 1 shuffles mini-batches, 2 draws
//! pseudo-priors, 3 re-initializes the head, 4 downsamples pre-training data.
//! Keeping them apart means switching DirPA on does not perturb the
//! shuffle order or the initialization.

use std::f64::consts::PI;
use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::dirpa::{softmax, DirichletPriors, DirpaConfig, PriorShift, PriorSource};
use crate::error::{config, Error, Result};
use crate::labelspace::Label;
use crate::losses::{LossConfig, SmoothingConfig};
use crate::metrics::{cohen_kappa, micro_accuracy, ConfusionMatrix};
use crate::model::{argmax, Group, ModelConfig, ModelParameters};

pub const STREAM_INIT: u64 = 0;
pub const STREAM_SHUFFLE: u64 = 1;
pub const STREAM_PRIOR: u64 = 2;
pub const STREAM_HEAD: u64 = 3;
pub const STREAM_DOWNSAMPLE: u64 = 4;

pub const DEFAULT_SEEDS: [u64; 5] = [0, 1, 42, 123, 1234];
pub const FREEZE_GRID: [usize; 5] = [0, 2, 5, 8, 15];

/// Independent ChaCha stream `stream` of `seed`.
pub fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    Constant,
    CosineOneCycle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    ValLoss,
    ValKappa,
    ValAccuracy,
}

impl Criterion {
    fn value(self, e: &EpochRecord) -> f64 {
        match self {
            Criterion::ValLoss => e.val_loss,
            Criterion::ValKappa => e.val_kappa,
            Criterion::ValAccuracy => e.val_accuracy,
        }
    }

    /// Strict improvement, so ties keep the earlier epoch.
    fn improves(self, candidate: f64, best: f64) -> bool {
        match self {
            Criterion::ValLoss => candidate < best,
            Criterion::ValKappa | Criterion::ValAccuracy => candidate > best,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Stop once validation loss has not decreased for this many epochs.
    pub patience: usize,
    pub lr_head: f64,
    pub lr_backbone: f64,
    pub schedule: Schedule,
    pub warmup_epochs: usize,
    pub seed: u64,
    pub dirpa: Option<DirpaConfig>,
    pub loss: LossConfig,
    pub freeze_backbone_epochs: usize,
    pub checkpoint_criterion: Criterion,
    /// Keep every pseudo-prior drawn, one per mini-batch.
    #[serde(default)]
    pub record_prior_trace: bool,
}

impl TrainConfig {
    pub fn finetune(seed: u64) -> Self {
        Self {
            batch_size: 16,
            max_epochs: 200,
            patience: 20,
            lr_head: 1e-3,
            lr_backbone: 1e-4,
            schedule: Schedule::Constant,
            warmup_epochs: 0,
            seed,
            dirpa: None,
            loss: LossConfig::ce(),
            freeze_backbone_epochs: 0,
            checkpoint_criterion: Criterion::ValKappa,
            record_prior_trace: false,
        }
    }

    pub fn pretrain(seed: u64) -> Self {
        Self {
            batch_size: 256,
            max_epochs: 100,
            patience: 15,
            lr_head: 1e-3,
            lr_backbone: 1e-3,
            schedule: Schedule::CosineOneCycle,
            warmup_epochs: 1,
            seed,
            dirpa: None,
            loss: LossConfig::Ce {
                smoothing: SmoothingConfig { epsilon: 0.1 },
            },
            freeze_backbone_epochs: 0,
            checkpoint_criterion: Criterion::ValAccuracy,
            record_prior_trace: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(config("batch_size, max_epochs and patience must be >= 1"));
        }
        if !(self.lr_head > 0.0 && self.lr_backbone > 0.0)
            || !self.lr_head.is_finite()
            || !self.lr_backbone.is_finite()
        {
            return Err(config("learning rates must be positive and finite"));
        }
        if self.schedule == Schedule::CosineOneCycle && self.warmup_epochs >= self.max_epochs {
            return Err(config("warmup_epochs must be below max_epochs"));
        }
        if let Some(d) = &self.dirpa {
            d.validate()?;
        }
        self.loss.validate()
    }

    fn lr(&self, base: f64, epoch: usize) -> Result<f64> {
        match self.schedule {
            Schedule::Constant => Ok(base),
            Schedule::CosineOneCycle => {
                cosine_one_cycle_lr(base, epoch, self.max_epochs, self.warmup_epochs)
            }
        }
    }
}

/// Linear warmup from 0, then one half-cosine down towards 0. `epoch` is
/// zero-based.
pub fn cosine_one_cycle_lr(
    base_lr: f64,
    epoch: usize,
    max_epochs: usize,
    warmup_epochs: usize,
) -> Result<f64> {
    if warmup_epochs >= max_epochs {
        return Err(config(format!(
            "warmup {warmup_epochs} >= max_epochs {max_epochs}"
        )));
    }
    if epoch >= max_epochs {
        return Err(config(format!("epoch {epoch} outside [0, {max_epochs})")));
    }
    if epoch < warmup_epochs {
        return Ok(base_lr * epoch as f64 / warmup_epochs as f64);
    }
    let t = (epoch - warmup_epochs) as f64 / (max_epochs - warmup_epochs) as f64;
    Ok(base_lr * (1.0 + (PI * t).cos()) / 2.0)
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moments per parameter block, with one step counter per
/// parameter group so a frozen backbone keeps its own bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    steps: [u64; 2],
}

fn group_slot(g: Group) -> usize {
    match g {
        Group::Backbone => 0,
        Group::Head => 1,
    }
}

impl AdamState {
    pub fn new(params: &ModelParameters) -> Self {
        let m: Vec<Vec<f64>> = params
            .blocks()
            .iter()
            .map(|(_, _, b)| vec![0.0; b.len()])
            .collect();
        Self {
            v: m.clone(),
            m,
            steps: [0, 0],
        }
    }

    pub fn steps(&self, group: Group) -> u64 {
        self.steps[group_slot(group)]
    }

    pub fn moments(&self, block: usize) -> (&[f64], &[f64]) {
        (&self.m[block], &self.v[block])
    }
}

/// One bias-corrected Adam update. Backbone blocks are skipped entirely
/// while frozen. A non-finite gradient aborts before anything is written.
pub fn adam_step(
    params: &mut ModelParameters,
    state: &mut AdamState,
    lr_head: f64,
    lr_backbone: f64,
) -> Result<()> {
    let frozen = params.backbone_frozen();
    for (name, group, block) in params.blocks() {
        if group == Group::Backbone && frozen {
            continue;
        }
        if let Some(i) = block.grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient of {name}[{i}] is {}",
                block.grad[i]
            )));
        }
    }
    for slot in [0, 1] {
        if slot == 0 && frozen {
            continue;
        }
        state.steps[slot] += 1;
    }
    let corrections = state.steps.map(|t| {
        let t = t as i32;
        (1.0 - ADAM_BETA1.powi(t), 1.0 - ADAM_BETA2.powi(t))
    });
    for (bi, (_, group, block)) in params.blocks_mut().into_iter().enumerate() {
        if group == Group::Backbone && frozen {
            continue;
        }
        let lr = if group == Group::Head {
            lr_head
        } else {
            lr_backbone
        };
        let (c1, c2) = corrections[group_slot(group)];
        let (m, v) = (&mut state.m[bi], &mut state.v[bi]);
        for i in 0..block.values.len() {
            let g = block.grad[i];
            m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g;
            v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            block.values[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
    params.bump_version();
    Ok(())
}

/// Loss and confusion matrix of the unadjusted model on a subset.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub confusion: ConfusionMatrix,
}

pub fn evaluate(
    model: &ModelParameters,
    data: &Dataset,
    indices: &[usize],
    loss: &LossConfig,
) -> Result<Evaluation> {
    let k = model.config.num_classes;
    let mut confusion = ConfusionMatrix::zeros(k);
    let mut total = 0.0;
    for &i in indices {
        let s = &data.samples[i];
        let (logits, _) = model.forward(s)?;
        total += loss.evaluate(&softmax(&logits), s.label)?.loss;
        confusion.record(s.label, Label(argmax(&logits)))?;
    }
    let loss = if indices.is_empty() {
        0.0
    } else {
        total / indices.len() as f64
    };
    Ok(Evaluation { loss, confusion })
}

pub fn predict(model: &ModelParameters, data: &Dataset, indices: &[usize]) -> Result<Vec<Label>> {
    indices
        .iter()
        .map(|&i| model.predict(&data.samples[i]).map(Label))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// One-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_kappa: f64,
    pub val_accuracy: f64,
    pub lr_head: f64,
    pub lr_backbone: f64,
    pub backbone_frozen: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub clamp_events: usize,
    pub stopped_early: bool,
    /// [`ModelParameters::checksum`] of the parameters after the last epoch.
    pub final_checksum: u64,
    pub wall_time_secs: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior_trace: Option<Vec<Vec<f64>>>,
}

impl RunRecord {
    pub fn best(&self) -> &EpochRecord {
        &self.epochs[self.best_epoch - 1]
    }

    /// One JSON object per epoch.
    pub fn write_trace<W: Write>(&self, mut out: W) -> Result<()> {
        for e in &self.epochs {
            serde_json::to_writer(&mut out, e)?;
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Trains `model` on `train`, validating on `validation` after every epoch,
/// and returns the best checkpoint under `cfg.checkpoint_criterion`.
///
/// With `cfg.dirpa` set, each mini-batch draws one pseudo-prior from
/// `priors`, or from a Dirichlet stream of the run seed when `priors` is
/// `None`, and trains on the shifted logits.
pub fn train_loop(
    mut model: ModelParameters,
    data: &Dataset,
    train: &[usize],
    validation: &[usize],
    cfg: &TrainConfig,
    priors: Option<&mut dyn PriorSource>,
) -> Result<(ModelParameters, RunRecord)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(config("empty training set"));
    }
    if validation.is_empty() {
        return Err(config("early stopping needs a non-empty validation set"));
    }
    let k = model.config.num_classes;
    if model.config.feature_dim != data.feature_dim || k != data.num_classes() {
        return Err(config(format!(
            "model expects d={} K={}, data has d={} K={}",
            model.config.feature_dim,
            k,
            data.feature_dim,
            data.num_classes()
        )));
    }

    let started = Instant::now();
    let mut default_priors;
    let mut priors: Option<&mut dyn PriorSource> = match (&cfg.dirpa, priors) {
        (None, _) => None,
        (Some(_), Some(p)) => Some(p),
        (Some(d), None) => {
            default_priors = DirichletPriors::new(*d, rng_stream(cfg.seed, STREAM_PRIOR))?;
            Some(&mut default_priors)
        }
    };
    let tau = cfg.dirpa.map(|d| d.tau).unwrap_or(0.0);
    let mut shuffle_rng = rng_stream(cfg.seed, STREAM_SHUFFLE);
    let mut adam = AdamState::new(&model);
    let mut order = train.to_vec();
    let mut epochs = Vec::new();
    let mut clamp_events = 0;
    let mut trace = cfg.record_prior_trace.then(Vec::new);
    let mut best: Option<(usize, f64, ModelParameters)> = None;
    let mut best_loss = f64::INFINITY;
    let mut since_loss_improved = 0;
    let mut stopped_early = false;

    for epoch in 0..cfg.max_epochs {
        let frozen = epoch < cfg.freeze_backbone_epochs;
        model.freeze_backbone(frozen);
        let lr_head = cfg.lr(cfg.lr_head, epoch)?;
        let lr_backbone = cfg.lr(cfg.lr_backbone, epoch)?;
        order.shuffle(&mut shuffle_rng);

        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let shift = match priors.as_deref_mut() {
                Some(source) => {
                    let prior = source.next_prior(k)?;
                    if let Some(t) = trace.as_mut() {
                        t.push(prior.probs().to_vec());
                    }
                    let shift = PriorShift::new(&prior, tau);
                    clamp_events += shift.clamps();
                    Some(shift)
                }
                None => None,
            };
            model.zero_grad();
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let s = &data.samples[i];
                let (mut logits, cache) = model.forward(s)?;
                if let Some(shift) = &shift {
                    shift.apply(&mut logits);
                }
                let out = cfg.loss.evaluate(&softmax(&logits), s.label)?;
                if !out.loss.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "loss at epoch {} sample {}",
                        epoch + 1,
                        s.id
                    )));
                }
                clamp_events += out.clamped as usize;
                epoch_loss += out.loss;
                let grad: Vec<f64> = out.grad.iter().map(|g| g * scale).collect();
                model.backward(&cache, &grad)?;
            }
            adam_step(&mut model, &mut adam, lr_head, lr_backbone)?;
        }

        let eval = evaluate(&model, data, validation, &cfg.loss)?;
        let record = EpochRecord {
            epoch: epoch + 1,
            train_loss: epoch_loss / train.len() as f64,
            val_loss: eval.loss,
            val_kappa: cohen_kappa(&eval.confusion),
            val_accuracy: micro_accuracy(&eval.confusion),
            lr_head,
            lr_backbone,
            backbone_frozen: frozen,
        };
        log::trace!(
            "epoch {} train {:.4} val {:.4} kappa {:.4}",
            record.epoch,
            record.train_loss,
            record.val_loss,
            record.val_kappa
        );

        let score = cfg.checkpoint_criterion.value(&record);
        if best
            .as_ref()
            .is_none_or(|(_, b, _)| cfg.checkpoint_criterion.improves(score, *b))
        {
            let mut snapshot = model.clone();
            snapshot.freeze_backbone(false);
            best = Some((record.epoch, score, snapshot));
        }
        if record.val_loss < best_loss {
            best_loss = record.val_loss;
            since_loss_improved = 0;
        } else {
            since_loss_improved += 1;
        }
        epochs.push(record);
        if since_loss_improved >= cfg.patience {
            stopped_early = true;
            break;
        }
    }

    let (best_epoch, _, best_model) = best.expect("at least one epoch ran");
    let record = RunRecord {
        epochs,
        best_epoch,
        clamp_events,
        stopped_early,
        final_checksum: model.checksum(),
        wall_time_secs: started.elapsed().as_secs_f64(),
        prior_trace: trace,
    };
    Ok((best_model, record))
}

/// Fresh model initialized from the run seed, trained by [`train_loop`].
pub fn train_from_scratch(
    model_cfg: ModelConfig,
    data: &Dataset,
    train: &[usize],
    validation: &[usize],
    cfg: &TrainConfig,
) -> Result<(ModelParameters, RunRecord)> {
    let model = ModelParameters::init(model_cfg, &mut rng_stream(cfg.seed, STREAM_INIT))?;
    train_loop(model, data, train, validation, cfg, None)
}

/// Keeps at most `cap` indices per class, drawn without replacement; classes
/// at or below the cap are kept whole. Returned sorted.
pub fn downsample_per_class(
    data: &Dataset,
    indices: &[usize],
    cap: usize,
    seed: u64,
) -> Vec<usize> {
    let mut rng = rng_stream(seed, STREAM_DOWNSAMPLE);
    let mut out = Vec::new();
    for members in data.indices_by_class(indices.iter().copied()) {
        if members.len() <= cap {
            out.extend_from_slice(&members);
        } else {
            out.extend(
                rand::seq::index::sample(&mut rng, members.len(), cap)
                    .into_iter()
                    .map(|i| members[i]),
            );
        }
    }
    out.sort_unstable();
    out
}

/// A pre-training corpus with its own train/validation partition.
#[derive(Debug, Clone, Copy)]
pub struct Phase<'a> {
    pub data: &'a Dataset,
    pub train: &'a [usize],
    pub validation: &'a [usize],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainSettings {
    pub train: TrainConfig,
    /// Per-class sample cap applied to the pre-training train partition.
    pub per_class_cap: Option<usize>,
}

pub fn pretrain(
    model_cfg: ModelConfig,
    phase: Phase<'_>,
    settings: &PretrainSettings,
) -> Result<(ModelParameters, RunRecord)> {
    let train = match settings.per_class_cap {
        Some(cap) => downsample_per_class(phase.data, phase.train, cap, settings.train.seed),
        None => phase.train.to_vec(),
    };
    train_from_scratch(
        model_cfg,
        phase.data,
        &train,
        phase.validation,
        &settings.train,
    )
}

/// Fine-tunes a copy of `pretrained` on `phase` after replacing its head with
/// a freshly initialized one sized for the fine-tuning classes.
pub fn finetune(
    pretrained: &ModelParameters,
    phase: Phase<'_>,
    cfg: &TrainConfig,
) -> Result<(ModelParameters, RunRecord)> {
    if pretrained.config.feature_dim != phase.data.feature_dim {
        return Err(config(format!(
            "pre-trained backbone expects d={}, fine-tuning data has d={}",
            pretrained.config.feature_dim, phase.data.feature_dim
        )));
    }
    let mut model = pretrained.clone();
    model.reinit_head(
        phase.data.num_classes(),
        &mut rng_stream(cfg.seed, STREAM_HEAD),
    )?;
    model.freeze_backbone(false);
    train_loop(model, phase.data, phase.train, phase.validation, cfg, None)
}

pub fn pretrain_then_finetune(
    model_cfg: ModelConfig,
    pre: Phase<'_>,
    settings: &PretrainSettings,
    fine: Phase<'_>,
    cfg: &TrainConfig,
) -> Result<(ModelParameters, RunRecord, RunRecord)> {
    if pre.data.feature_dim != fine.data.feature_dim {
        return Err(config(
            "pre-training and fine-tuning feature dimensions differ",
        ));
    }
    let (backbone, pre_record) = pretrain(model_cfg, pre, settings)?;
    let (model, fine_record) = finetune(&backbone, fine, cfg)?;
    Ok((model, pre_record, fine_record))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_model() -> ModelParameters {
        let cfg = ModelConfig {
            feature_dim: 1,
            embed_dim: 1,
            use_attention: false,
            max_days: 366,
            num_classes: 2,
        };
        ModelParameters::zeros(cfg).unwrap()
    }

    #[test]
    fn cosine_schedule_landmarks() {
        assert_eq!(cosine_one_cycle_lr(0.1, 1, 11, 1).unwrap(), 0.1);
        assert_eq!(cosine_one_cycle_lr(0.1, 0, 11, 1).unwrap(), 0.0);
        assert!((cosine_one_cycle_lr(0.1, 6, 11, 1).unwrap() - 0.05).abs() < 1e-15);
        assert!(cosine_one_cycle_lr(0.1, 9999, 10000, 1).unwrap() < 1e-8);
        assert!(matches!(
            cosine_one_cycle_lr(0.1, 0, 5, 5),
            Err(Error::Config(_))
        ));
        assert!(cosine_one_cycle_lr(0.1, 5, 5, 1).is_err());
    }

    #[test]
    fn adam_first_step_with_unit_gradient_moves_by_lr() {
        let mut p = scalar_model();
        let mut state = AdamState::new(&p);
        p.head.bias.grad = vec![1.0, 1.0];
        adam_step(&mut p, &mut state, 0.01, 0.01).unwrap();
        // m̂ = 1, v̂ = 1, so the step is lr / (1 + ε)
        for v in &p.head.bias.values {
            assert!((v + 0.01).abs() < 1e-9);
        }
        // zero gradients elsewhere leave those values at zero
        assert!(p.head.weight.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn adam_zero_gradient_changes_nothing() {
        let mut rng = rng_stream(3, 0);
        let cfg = ModelConfig {
            feature_dim: 2,
            embed_dim: 3,
            use_attention: true,
            max_days: 366,
            num_classes: 3,
        };
        let mut p = ModelParameters::init(cfg, &mut rng).unwrap();
        let before = p.clone();
        let mut state = AdamState::new(&p);
        adam_step(&mut p, &mut state, 0.1, 0.1).unwrap();
        for ((_, _, a), (_, _, b)) in p.blocks().iter().zip(before.blocks()) {
            assert_eq!(a.values, b.values);
        }
    }

    #[test]
    fn frozen_backbone_keeps_adam_state() {
        let mut p = scalar_model();
        let mut state = AdamState::new(&p);
        p.freeze_backbone(true);
        for (_, _, b) in p.blocks_mut() {
            b.grad.iter_mut().for_each(|g| *g = 0.5);
        }
        adam_step(&mut p, &mut state, 0.1, 0.1).unwrap();
        assert_eq!(state.steps(Group::Backbone), 0);
        assert_eq!(state.steps(Group::Head), 1);
        assert!(state.moments(0).0.iter().all(|&m| m == 0.0));
        assert_eq!(p.backbone.input_weight.values, vec![0.0]);
    }

    #[test]
    fn nan_gradient_aborts() {
        let mut p = scalar_model();
        let mut state = AdamState::new(&p);
        p.head.weight.grad[0] = f64::NAN;
        assert!(matches!(
            adam_step(&mut p, &mut state, 0.1, 0.1),
            Err(Error::NonFinite(_))
        ));
        assert_eq!(p.head.weight.values, vec![0.0, 0.0]);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::finetune(0).validate().is_ok());
        assert!(TrainConfig::pretrain(0).validate().is_ok());
        let bad = TrainConfig {
            batch_size: 0,
            ..TrainConfig::finetune(0)
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            warmup_epochs: 200,
            schedule: Schedule::CosineOneCycle,
            ..TrainConfig::finetune(0)
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn streams_are_independent() {
        use rand::Rng;
        let a: u64 = rng_stream(7, STREAM_SHUFFLE).random();
        let b: u64 = rng_stream(7, STREAM_PRIOR).random();
        assert_ne!(a, b);
        assert_eq!(a, rng_stream(7, STREAM_SHUFFLE).random::<u64>());
    }
}
