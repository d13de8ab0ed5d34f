use pslab::data::{generate_synthetic, Dataset, Sample, SyntheticSpec};
use pslab::dirpa::{DirpaConfig, FixedPrior, PseudoPrior};
use pslab::error::Error;
use pslab::labelspace::{Label, LabelSpace};
use pslab::model::{ModelConfig, ModelParameters};
use pslab::split::{class_aware_split, SplitSpec};
use pslab::train::*;

fn small_synthetic(k: usize, seed: u64) -> Dataset {
    generate_synthetic(&SyntheticSpec {
        num_classes: k,
        feature_dim: 3,
        num_samples: 240,
        imbalance_exponent: 0.8,
        sequence_length_range: [4, 8],
        noise_sigma: 0.05,
        seed,
        num_parents: None,
    })
    .unwrap()
}

fn model_cfg(k: usize) -> ModelConfig {
    ModelConfig {
        feature_dim: 3,
        embed_dim: 8,
        use_attention: true,
        max_days: 366,
        num_classes: k,
    }
}

fn quick_cfg(seed: u64) -> TrainConfig {
    TrainConfig {
        max_epochs: 6,
        patience: 3,
        lr_head: 0.01,
        lr_backbone: 0.005,
        ..TrainConfig::finetune(seed)
    }
}

fn splits(ds: &Dataset) -> (Vec<usize>, Vec<usize>) {
    let s = class_aware_split(
        ds,
        &SplitSpec {
            test_fraction: 0.2,
            validation_target: 40,
            seed: 0,
        },
    )
    .unwrap();
    (s.train, s.validation)
}

#[test]
fn repeated_runs_are_bit_identical() {
    let ds = small_synthetic(4, 1);
    let (train, val) = splits(&ds);
    let cfg = TrainConfig {
        max_epochs: 1,
        ..quick_cfg(42)
    };
    let (a, ra) = train_from_scratch(model_cfg(4), &ds, &train, &val, &cfg).unwrap();
    let (b, rb) = train_from_scratch(model_cfg(4), &ds, &train, &val, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(ra.epochs, rb.epochs);
}

#[test]
fn uniform_stub_prior_reproduces_plain_training() {
    let ds = small_synthetic(4, 2);
    let (train, val) = splits(&ds);
    let plain_cfg = quick_cfg(1);
    let init = ModelParameters::init(model_cfg(4), &mut rng_stream(1, STREAM_INIT)).unwrap();
    let (plain, plain_rec) = train_loop(init.clone(), &ds, &train, &val, &plain_cfg, None).unwrap();
    for tau in [0.5, 1.0, 10.0] {
        let cfg = TrainConfig {
            dirpa: Some(DirpaConfig::symmetric(0.5, tau)),
            record_prior_trace: true,
            ..plain_cfg.clone()
        };
        let mut stub = FixedPrior(PseudoPrior::uniform(4));
        let (shifted, rec) =
            train_loop(init.clone(), &ds, &train, &val, &cfg, Some(&mut stub)).unwrap();
        assert_eq!(shifted, plain);
        assert_eq!(rec.epochs, plain_rec.epochs);
        assert_eq!(rec.final_checksum, plain_rec.final_checksum);
        let batches_per_epoch = train.len().div_ceil(16);
        assert_eq!(
            rec.prior_trace.unwrap().len(),
            rec.epochs.len() * batches_per_epoch
        );
    }
}

#[test]
fn dirpa_draws_change_training() {
    let ds = small_synthetic(4, 2);
    let (train, val) = splits(&ds);
    let base = quick_cfg(1);
    let (plain, _) = train_from_scratch(model_cfg(4), &ds, &train, &val, &base).unwrap();
    let cfg = TrainConfig {
        dirpa: Some(DirpaConfig::symmetric(0.5, 1.0)),
        ..base
    };
    let (shifted, _) = train_from_scratch(model_cfg(4), &ds, &train, &val, &cfg).unwrap();
    assert_ne!(shifted, plain);
}

#[test]
fn best_checkpoint_has_max_validation_kappa() {
    let ds = small_synthetic(5, 3);
    let (train, val) = splits(&ds);
    let cfg = TrainConfig {
        max_epochs: 15,
        patience: 15,
        ..quick_cfg(0)
    };
    let (model, rec) = train_from_scratch(model_cfg(5), &ds, &train, &val, &cfg).unwrap();
    let max = rec
        .epochs
        .iter()
        .map(|e| e.val_kappa)
        .fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(rec.best().val_kappa, max);
    // earliest epoch among ties
    let first = rec
        .epochs
        .iter()
        .find(|e| e.val_kappa == max)
        .unwrap()
        .epoch;
    assert_eq!(rec.best_epoch, first);
    let eval = evaluate(&model, &ds, &val, &cfg.loss).unwrap();
    assert_eq!(pslab::metrics::cohen_kappa(&eval.confusion), max);
    assert!(rec.epochs.iter().enumerate().all(|(i, e)| e.epoch == i + 1));
}

#[test]
fn early_stopping_triggers_after_patience() {
    let ds = small_synthetic(4, 4);
    let (train, val) = splits(&ds);
    // a huge learning rate makes validation loss stall quickly
    let cfg = TrainConfig {
        max_epochs: 200,
        patience: 2,
        lr_head: 5.0,
        lr_backbone: 5.0,
        ..TrainConfig::finetune(0)
    };
    let (_, rec) = train_from_scratch(model_cfg(4), &ds, &train, &val, &cfg).unwrap();
    assert!(rec.stopped_early);
    let n = rec.epochs.len();
    let best_loss_epoch = rec
        .epochs
        .iter()
        .fold((0, f64::INFINITY), |(be, bl), e| {
            if e.val_loss < bl {
                (e.epoch, e.val_loss)
            } else {
                (be, bl)
            }
        })
        .0;
    assert_eq!(n, best_loss_epoch + 2);
}

#[test]
fn empty_validation_is_config_error() {
    let ds = small_synthetic(4, 5);
    let (train, _) = splits(&ds);
    let res = train_from_scratch(model_cfg(4), &ds, &train, &[], &quick_cfg(0));
    assert!(matches!(res, Err(Error::Config(_))));
}

#[test]
fn frozen_epochs_leave_backbone_untouched() {
    let ds = small_synthetic(4, 6);
    let (train, val) = splits(&ds);
    let init = ModelParameters::init(model_cfg(4), &mut rng_stream(0, STREAM_INIT)).unwrap();
    let checksum = init.backbone_checksum();
    let cfg = TrainConfig {
        max_epochs: 2,
        freeze_backbone_epochs: 2,
        ..quick_cfg(0)
    };
    let (frozen, rec) = train_loop(init.clone(), &ds, &train, &val, &cfg, None).unwrap();
    assert_eq!(frozen.backbone_checksum(), checksum);
    assert!(rec.epochs.iter().all(|e| e.backbone_frozen));
}

#[test]
fn freeze_grid_zero_never_freezes() {
    assert_eq!(FREEZE_GRID[0], 0);
    let ds = small_synthetic(4, 6);
    let (train, val) = splits(&ds);
    let (_, rec) = train_from_scratch(model_cfg(4), &ds, &train, &val, &quick_cfg(0)).unwrap();
    assert!(rec.epochs.iter().all(|e| !e.backbone_frozen));
}

/// Three well-separated classes, one time step each.
fn separable_toy() -> Dataset {
    let centers = [[0.1, 0.1], [1.0, 0.2], [0.3, 1.1]];
    let mut samples = Vec::new();
    for (c, center) in centers.iter().enumerate() {
        for i in 0..20 {
            let jitter = (i as f64 / 20.0 - 0.5) * 0.1;
            let features = vec![center[0] + jitter, center[1] - jitter];
            samples
                .push(Sample::new(format!("{c}-{i}"), vec![100], features, Label(c), 2).unwrap());
        }
    }
    Dataset::new("toy", LabelSpace::identity(3).unwrap(), 2, samples).unwrap()
}

/// Plain multinomial logistic regression by full-batch gradient descent.
fn logistic_regression_accuracy(ds: &Dataset) -> f64 {
    let mut w = [[0.0f64; 3]; 3]; // bias + 2 features per class
    for _ in 0..2000 {
        let mut grad = [[0.0f64; 3]; 3];
        for s in &ds.samples {
            let x = [1.0, s.features[0], s.features[1]];
            let z: Vec<f64> = w
                .iter()
                .map(|r| r.iter().zip(&x).map(|(a, b)| a * b).sum())
                .collect();
            let p = pslab::dirpa::softmax(&z);
            for c in 0..3 {
                let d = p[c] - if c == s.label.index() { 1.0 } else { 0.0 };
                for j in 0..3 {
                    grad[c][j] += d * x[j];
                }
            }
        }
        for c in 0..3 {
            for j in 0..3 {
                w[c][j] -= 0.5 * grad[c][j] / ds.len() as f64;
            }
        }
    }
    let correct = ds
        .samples
        .iter()
        .filter(|s| {
            let x = [1.0, s.features[0], s.features[1]];
            let z: Vec<f64> = w
                .iter()
                .map(|r| r.iter().zip(&x).map(|(a, b)| a * b).sum())
                .collect();
            pslab::model::argmax(&z) == s.label.index()
        })
        .count();
    correct as f64 / ds.len() as f64
}

#[test]
fn separable_toy_reaches_perfect_training_accuracy() {
    let ds = separable_toy();
    assert_eq!(logistic_regression_accuracy(&ds), 1.0);
    let all: Vec<usize> = (0..ds.len()).collect();
    let cfg = TrainConfig {
        max_epochs: 50,
        patience: 50,
        lr_head: 0.05,
        lr_backbone: 0.05,
        checkpoint_criterion: Criterion::ValAccuracy,
        ..TrainConfig::finetune(0)
    };
    let mcfg = ModelConfig {
        feature_dim: 2,
        embed_dim: 8,
        use_attention: false,
        max_days: 366,
        num_classes: 3,
    };
    let (_, rec) = train_from_scratch(mcfg, &ds, &all, &all, &cfg).unwrap();
    assert_eq!(rec.best().val_accuracy, 1.0, "best epoch {:?}", rec.best());
}

#[test]
fn per_class_cap_keeps_small_classes_whole() {
    let ds = small_synthetic(4, 7);
    let counts = ds.class_counts(0..ds.len());
    let all: Vec<usize> = (0..ds.len()).collect();
    let kept = downsample_per_class(&ds, &all, 10, 0);
    let kept_counts = ds.class_counts(kept.iter().copied());
    for (c, k) in counts.iter().zip(&kept_counts) {
        assert_eq!(*k, (*c).min(10));
    }
    let tiny = ds.class_counts(0..ds.len()).iter().position(|&c| c <= 10);
    if let Some(c) = tiny {
        assert_eq!(kept_counts[c], counts[c]);
    }
}

#[test]
fn finetune_with_new_class_count_keeps_backbone() {
    let pre = small_synthetic(6, 8);
    let fine = small_synthetic(4, 9);
    let (pt, pv) = splits(&pre);
    let (ft, fv) = splits(&fine);
    let settings = PretrainSettings {
        train: TrainConfig {
            max_epochs: 3,
            patience: 3,
            batch_size: 32,
            ..TrainConfig::pretrain(0)
        },
        per_class_cap: Some(30),
    };
    let pre_phase = Phase {
        data: &pre,
        train: &pt,
        validation: &pv,
    };
    let (backbone, pre_rec) = pretrain(model_cfg(6), pre_phase, &settings).unwrap();
    assert!(
        pre_rec.epochs[0].lr_head == 0.0,
        "first warmup epoch starts from zero"
    );
    let mut reloaded = backbone.clone();
    reloaded
        .reinit_head(4, &mut rng_stream(0, STREAM_HEAD))
        .unwrap();
    assert_eq!(reloaded.backbone_checksum(), backbone.backbone_checksum());
    assert_eq!(reloaded.head.weight.len(), 4 * 8);

    let fine_phase = Phase {
        data: &fine,
        train: &ft,
        validation: &fv,
    };
    let cfg = TrainConfig {
        freeze_backbone_epochs: 2,
        ..quick_cfg(0)
    };
    let (model, _, rec) =
        pretrain_then_finetune(model_cfg(6), pre_phase, &settings, fine_phase, &cfg).unwrap();
    assert_eq!(model.config.num_classes, 4);
    assert!(!rec.epochs.is_empty());

    let other = small_synthetic(4, 10);
    let mismatched = pslab::data::Dataset {
        feature_dim: 2,
        ..other
    };
    let bad = Phase {
        data: &mismatched,
        train: &ft,
        validation: &fv,
    };
    assert!(matches!(
        finetune(&backbone, bad, &cfg),
        Err(Error::Config(_))
    ));
}

#[test]
fn cold_start_baseline_runs() {
    let ds = small_synthetic(4, 11);
    let (train, val) = splits(&ds);
    let (model, rec) =
        train_from_scratch(model_cfg(4), &ds, &train, &val, &quick_cfg(1234)).unwrap();
    assert!(rec.best_epoch >= 1);
    assert_eq!(predict(&model, &ds, &val).unwrap().len(), val.len());
}

#[test]
fn trace_is_one_json_line_per_epoch() {
    let ds = small_synthetic(4, 12);
    let (train, val) = splits(&ds);
    let (_, rec) = train_from_scratch(model_cfg(4), &ds, &train, &val, &quick_cfg(0)).unwrap();
    let mut buf = Vec::new();
    rec.write_trace(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), rec.epochs.len());
    let first: EpochRecord = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(first, rec.epochs[0]);
}
