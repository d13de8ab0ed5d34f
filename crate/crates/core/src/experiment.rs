//! Declarative experiment runner: one split, a k-shot training set per `k`,
//! and a grid-searched training run for every (k, loss, DirPA on/off, seed)
//! cell, evaluated on the shared test partition.
//!
//! Output files, all with fixed headers:
//!
//! | file | columns |
//! |------|---------|
//! | `results.csv` | `run_id,k,loss,dirpa,alpha,tau,seed,level,kappa,accuracy,macro_f1` |
//! | `summary.csv` | `k,loss,dirpa,level,n,kappa_mean,kappa_std,accuracy_mean,accuracy_std,macro_f1_mean,macro_f1_std` |
//! | `imbalance.csv` | `k,gini_test,bhattacharyya_kshot_vs_test` |
//! | `gain.csv` | `k,loss,level,gini_test,bhattacharyya,metric,baseline,dirpa,gain,sign` |
//! | `selections.csv` | `run_id,gamma,freeze_epochs,alpha,tau,best_epoch,epochs_run,val_kappa` |
//! | `failures.csv` | `run_id,error` |
//! | `traces/<run_id>.jsonl` | one epoch record per line, selected configuration only |

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{generate_synthetic, load_csv, Dataset, Manifest, SyntheticSpec};
use crate::dirpa::{DirpaConfig, DirpaMode, ALPHA_GRID, TAU_GRID};
use crate::error::{config, Error, Result};
use crate::losses::{FocalConfig, LossConfig, SmoothingConfig};
use crate::metrics::{Level, MetricsReport};
use crate::model::{ModelConfig, ModelParameters};
use crate::split::{build_kshot, class_aware_split, FewShotSpec, SplitResult, SplitSpec, K_GRID};
use crate::stats::{bhattacharyya_distance, gini_coefficient, ClassHistogram, Distance};
use crate::train::{
    evaluate, finetune, pretrain, train_from_scratch, Phase, PretrainSettings, RunRecord,
    TrainConfig, DEFAULT_SEEDS,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSource {
    Synthetic { spec: SyntheticSpec },
    Csv { path: PathBuf, manifest: PathBuf },
}

impl DatasetSource {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DatasetSource::Synthetic { spec } => generate_synthetic(spec),
            DatasetSource::Csv { path, manifest } => load_csv(path, &Manifest::read(manifest)?),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Ce,
    Focal,
}

impl LossKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Ce => "ce",
            LossKind::Focal => "focal",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSettings {
    pub embed_dim: usize,
    pub use_attention: bool,
}

impl ModelSettings {
    pub fn config_for(&self, data: &Dataset) -> ModelConfig {
        ModelConfig {
            feature_dim: data.feature_dim,
            embed_dim: self.embed_dim,
            use_attention: self.use_attention,
            max_days: crate::model::DEFAULT_MAX_DAYS,
            num_classes: data.num_classes(),
        }
    }
}

/// Optional pre-training on a separate corpus, once per seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainPlan {
    pub dataset: DatasetSource,
    pub split: SplitSpec,
    pub settings: PretrainSettings,
    /// Backbone-freezing epochs searched during fine-tuning.
    pub freeze_grid: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub name: String,
    pub dataset: DatasetSource,
    pub split: SplitSpec,
    pub k_grid: Vec<usize>,
    pub seeds: Vec<u64>,
    pub losses: Vec<LossKind>,
    /// Which variants to run: `false` is the baseline, `true` adds DirPA.
    pub dirpa: Vec<bool>,
    pub alpha_grid: Vec<f64>,
    pub tau_grid: Vec<f64>,
    pub dirpa_mode: DirpaMode,
    pub asym_focus_alpha: f64,
    pub focal_gamma_grid: Vec<f64>,
    /// Label smoothing for the cross-entropy variant.
    pub smoothing: f64,
    pub model: ModelSettings,
    /// Template for every fine-tuning run; seed, loss, DirPA and freezing
    /// are filled in per grid point.
    pub train: TrainConfig,
    pub pretrain: Option<PretrainPlan>,
    pub record_traces: bool,
    pub threads: Option<usize>,
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            dataset: DatasetSource::Synthetic {
                spec: desk_dataset(0),
            },
            split: SplitSpec {
                test_fraction: 0.2,
                validation_target: 300,
                seed: 0,
            },
            k_grid: K_GRID.to_vec(),
            seeds: DEFAULT_SEEDS.to_vec(),
            losses: vec![LossKind::Ce, LossKind::Focal],
            dirpa: vec![false, true],
            alpha_grid: ALPHA_GRID.to_vec(),
            tau_grid: TAU_GRID.to_vec(),
            dirpa_mode: DirpaMode::Symmetric,
            asym_focus_alpha: 1.0,
            focal_gamma_grid: FocalConfig::GRID.to_vec(),
            smoothing: 0.0,
            model: ModelSettings {
                embed_dim: 16,
                use_attention: true,
            },
            train: TrainConfig {
                lr_head: 1e-2,
                lr_backbone: 5e-3,
                ..TrainConfig::finetune(0)
            },
            pretrain: None,
            record_traces: true,
            threads: None,
            output_dir: None,
        }
    }
}

/// Long-tailed synthetic dataset used by the desk-scale experiment.
pub fn desk_dataset(seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        num_classes: 15,
        feature_dim: 4,
        num_samples: 3000,
        imbalance_exponent: 3.0,
        sequence_length_range: [30, 60],
        noise_sigma: 0.05,
        seed,
        num_parents: Some(5),
    }
}

impl ExperimentConfig {
    /// The reduced grid of the desk-scale method comparison.
    pub fn desk() -> Self {
        Self {
            name: "desk".into(),
            k_grid: vec![1, 5],
            losses: vec![LossKind::Ce],
            alpha_grid: vec![0.5, 1.0, 2.0],
            tau_grid: vec![1.0, 5.0, 10.0],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nonempty = [
            ("k_grid", self.k_grid.is_empty()),
            ("seeds", self.seeds.is_empty()),
            ("losses", self.losses.is_empty()),
            ("dirpa", self.dirpa.is_empty()),
        ];
        if let Some((name, _)) = nonempty.iter().find(|(_, empty)| *empty) {
            return Err(config(format!("{name} must not be empty")));
        }
        if self.dirpa.contains(&true) && (self.alpha_grid.is_empty() || self.tau_grid.is_empty()) {
            return Err(config("DirPA needs non-empty alpha and tau grids"));
        }
        if self.losses.contains(&LossKind::Focal) && self.focal_gamma_grid.is_empty() {
            return Err(config("focal loss needs a non-empty gamma grid"));
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.seeds.len() {
            return Err(config("seeds must be distinct"));
        }
        if self.k_grid.contains(&0) {
            return Err(config("k must be >= 1"));
        }
        if let Some(plan) = &self.pretrain {
            if plan.freeze_grid.is_empty() {
                return Err(config("freeze_grid must not be empty"));
            }
        }
        self.split.validate()?;
        self.train.validate()
    }
}

/// Hyperparameters of one grid point within a cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub gamma: Option<f64>,
    pub alpha: Option<f64>,
    pub tau: Option<f64>,
    pub freeze_epochs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub k: usize,
    pub loss: LossKind,
    pub dirpa: bool,
    pub seed: u64,
}

impl Cell {
    pub fn run_id(&self) -> String {
        let variant = if self.dirpa { "dirpa" } else { "base" };
        format!(
            "k{}-{}-{}-s{}",
            self.k,
            self.loss.as_str(),
            variant,
            self.seed
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub run_id: String,
    pub k: usize,
    pub loss: LossKind,
    pub dirpa: bool,
    pub alpha: Option<f64>,
    pub tau: Option<f64>,
    pub seed: u64,
    pub level: Level,
    pub kappa: f64,
    pub accuracy: f64,
    pub macro_f1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation (`n − 1`); absent for a single value.
    pub std: Option<f64>,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.len() > 1)
            .then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub k: usize,
    pub loss: LossKind,
    pub dirpa: bool,
    pub level: Level,
    pub n: usize,
    pub kappa: MeanStd,
    pub accuracy: MeanStd,
    pub macro_f1: MeanStd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImbalanceRow {
    pub k: usize,
    pub gini_test: f64,
    pub bhattacharyya: Distance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub run_id: String,
    pub point: GridPoint,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub val_kappa: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub run_id: String,
    pub error: String,
}

#[derive(Debug, Clone, Default)]
pub struct ResultsTable {
    pub rows: Vec<ResultRow>,
    pub summary: Vec<SummaryRow>,
    pub imbalance: Vec<ImbalanceRow>,
    pub selections: Vec<Selection>,
    pub failures: Vec<Failure>,
    /// Selected run per `run_id`, in row order.
    pub traces: Vec<(String, RunRecord)>,
}

fn grid_points(cfg: &ExperimentConfig, loss: LossKind, dirpa: bool) -> Vec<GridPoint> {
    let gammas: Vec<Option<f64>> = match loss {
        LossKind::Ce => vec![None],
        LossKind::Focal => cfg.focal_gamma_grid.iter().map(|&g| Some(g)).collect(),
    };
    let shifts: Vec<(Option<f64>, Option<f64>)> = if dirpa {
        cfg.alpha_grid
            .iter()
            .flat_map(|&a| cfg.tau_grid.iter().map(move |&t| (Some(a), Some(t))))
            .collect()
    } else {
        vec![(None, None)]
    };
    let freezes: Vec<usize> = match &cfg.pretrain {
        Some(plan) => plan.freeze_grid.clone(),
        None => vec![0],
    };
    let mut out = Vec::new();
    for &gamma in &gammas {
        for &(alpha, tau) in &shifts {
            for &freeze_epochs in &freezes {
                out.push(GridPoint {
                    gamma,
                    alpha,
                    tau,
                    freeze_epochs,
                });
            }
        }
    }
    out
}

fn train_config_for(cfg: &ExperimentConfig, cell: &Cell, point: &GridPoint) -> TrainConfig {
    let loss = match (cell.loss, point.gamma) {
        (LossKind::Focal, Some(gamma)) => LossConfig::Focal {
            focal: FocalConfig { gamma },
        },
        _ => LossConfig::Ce {
            smoothing: SmoothingConfig {
                epsilon: cfg.smoothing,
            },
        },
    };
    let dirpa = match (point.alpha, point.tau) {
        (Some(alpha), Some(tau)) => Some(DirpaConfig {
            alpha,
            tau,
            mode: cfg.dirpa_mode,
            asym_focus_alpha: cfg.asym_focus_alpha,
        }),
        _ => None,
    };
    TrainConfig {
        seed: cell.seed,
        loss,
        dirpa,
        freeze_backbone_epochs: point.freeze_epochs,
        ..cfg.train.clone()
    }
}

/// Everything shared read-only by the runs of one experiment.
struct Prepared {
    data: Dataset,
    split: SplitResult,
    kshots: BTreeMap<usize, Vec<usize>>,
    backbones: BTreeMap<u64, ModelParameters>,
}

fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    let data = cfg.dataset.load()?;
    let split = class_aware_split(&data, &cfg.split)?;
    let mut kshots = BTreeMap::new();
    for &k in &cfg.k_grid {
        kshots.insert(
            k,
            build_kshot(
                &split.train,
                &data,
                &FewShotSpec {
                    k,
                    seed: cfg.split.seed,
                },
            )?,
        );
    }
    let mut backbones = BTreeMap::new();
    if let Some(plan) = &cfg.pretrain {
        let pre = plan.dataset.load()?;
        if pre.feature_dim != data.feature_dim {
            return Err(config(
                "pre-training and fine-tuning feature dimensions differ",
            ));
        }
        let pre_split = class_aware_split(&pre, &plan.split)?;
        let model_cfg = cfg.model.config_for(&pre);
        let trained: Vec<Result<(u64, ModelParameters)>> = cfg
            .seeds
            .par_iter()
            .map(|&seed| {
                let settings = PretrainSettings {
                    train: TrainConfig {
                        seed,
                        ..plan.settings.train.clone()
                    },
                    per_class_cap: plan.settings.per_class_cap,
                };
                let phase = Phase {
                    data: &pre,
                    train: &pre_split.train,
                    validation: &pre_split.validation,
                };
                let (model, record) = pretrain(model_cfg, phase, &settings)?;
                log::info!(
                    "pre-trained seed {seed}: best epoch {} of {}",
                    record.best_epoch,
                    record.epochs.len()
                );
                Ok((seed, model))
            })
            .collect();
        for r in trained {
            let (seed, model) = r?;
            backbones.insert(seed, model);
        }
    }
    Ok(Prepared {
        data,
        split,
        kshots,
        backbones,
    })
}

/// Gini of the test partition and D_B of every k-shot set against it.
pub fn imbalance_rows(
    data: &Dataset,
    test: &[usize],
    kshots: &BTreeMap<usize, Vec<usize>>,
) -> Result<Vec<ImbalanceRow>> {
    let test_hist = ClassHistogram::new(data.class_counts(test.iter().copied()))?;
    let gini_test = gini_coefficient(&test_hist);
    kshots
        .iter()
        .map(|(&k, idx)| {
            let hist = ClassHistogram::new(data.class_counts(idx.iter().copied()))?;
            Ok(ImbalanceRow {
                k,
                gini_test,
                bhattacharyya: bhattacharyya_distance(&hist, &test_hist)?,
            })
        })
        .collect()
}

struct JobOutcome {
    model: ModelParameters,
    record: RunRecord,
}

fn run_job(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    cell: &Cell,
    point: &GridPoint,
) -> Result<JobOutcome> {
    let train_cfg = train_config_for(cfg, cell, point);
    let train = &prep.kshots[&cell.k];
    let (model, record) = match prep.backbones.get(&cell.seed) {
        Some(backbone) => finetune(
            backbone,
            Phase {
                data: &prep.data,
                train,
                validation: &prep.split.validation,
            },
            &train_cfg,
        )?,
        None => train_from_scratch(
            cfg.model.config_for(&prep.data),
            &prep.data,
            train,
            &prep.split.validation,
            &train_cfg,
        )?,
    };
    Ok(JobOutcome { model, record })
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ResultsTable> {
    cfg.validate()?;
    let work = || -> Result<ResultsTable> {
        let prep = prepare(cfg)?;
        let table = run_cells(cfg, &prep)?;
        if let Some(dir) = &cfg.output_dir {
            write_outputs(&table, dir, cfg.record_traces)?;
        }
        Ok(table)
    };
    match cfg.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| config(format!("thread pool: {e}")))?
            .install(work),
        None => work(),
    }
}

fn run_cells(cfg: &ExperimentConfig, prep: &Prepared) -> Result<ResultsTable> {
    let mut cells = Vec::new();
    for &k in &cfg.k_grid {
        for &loss in &cfg.losses {
            for &dirpa in &cfg.dirpa {
                for &seed in &cfg.seeds {
                    cells.push(Cell {
                        k,
                        loss,
                        dirpa,
                        seed,
                    });
                }
            }
        }
    }
    cells.sort();
    cells.dedup();
    let jobs: Vec<(usize, GridPoint)> = cells
        .iter()
        .enumerate()
        .flat_map(|(ci, c)| {
            grid_points(cfg, c.loss, c.dirpa)
                .into_iter()
                .map(move |p| (ci, p))
        })
        .collect();
    log::info!("{} cells, {} training runs", cells.len(), jobs.len());

    let outcomes: Vec<Result<JobOutcome>> = jobs
        .par_iter()
        .map(|(ci, point)| run_job(cfg, prep, &cells[*ci], point))
        .collect();

    let mut table = ResultsTable {
        imbalance: imbalance_rows(&prep.data, &prep.split.test, &prep.kshots)?,
        ..Default::default()
    };
    let mut by_cell: Vec<Vec<(GridPoint, Result<JobOutcome>)>> =
        (0..cells.len()).map(|_| Vec::new()).collect();
    for ((ci, point), outcome) in jobs.into_iter().zip(outcomes) {
        by_cell[ci].push((point, outcome));
    }

    for (cell, runs) in cells.iter().zip(by_cell) {
        let run_id = cell.run_id();
        if let Some(err) = runs.iter().find_map(|(_, r)| r.as_ref().err()) {
            log::warn!("cell {run_id} failed: {err}");
            table.failures.push(Failure {
                run_id,
                error: err.to_string(),
            });
            continue;
        }
        let mut best: Option<(GridPoint, JobOutcome)> = None;
        for (point, outcome) in runs {
            let outcome = outcome.expect("errors handled above");
            let score = outcome.record.best().val_kappa;
            if best
                .as_ref()
                .is_none_or(|(_, b)| score > b.record.best().val_kappa)
            {
                best = Some((point, outcome));
            }
        }
        let (point, outcome) = best.expect("every cell has at least one grid point");
        match evaluate_cell(cfg, prep, cell, &point, &outcome) {
            Ok(rows) => {
                table.rows.extend(rows);
                table.selections.push(Selection {
                    run_id: run_id.clone(),
                    point,
                    best_epoch: outcome.record.best_epoch,
                    epochs_run: outcome.record.epochs.len(),
                    val_kappa: outcome.record.best().val_kappa,
                });
                table.traces.push((run_id, outcome.record));
            }
            Err(err) => table.failures.push(Failure {
                run_id,
                error: err.to_string(),
            }),
        }
    }
    table.summary = summarize(&table.rows);
    Ok(table)
}

fn evaluate_cell(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    cell: &Cell,
    point: &GridPoint,
    outcome: &JobOutcome,
) -> Result<Vec<ResultRow>> {
    let loss = train_config_for(cfg, cell, point).loss;
    let eval = evaluate(&outcome.model, &prep.data, &prep.split.test, &loss)?;
    let reports = MetricsReport::both_levels(&eval.confusion, &prep.data.space)?;
    Ok(reports
        .iter()
        .map(|r| ResultRow {
            run_id: cell.run_id(),
            k: cell.k,
            loss: cell.loss,
            dirpa: cell.dirpa,
            alpha: point.alpha,
            tau: point.tau,
            seed: cell.seed,
            level: r.level,
            kappa: r.kappa,
            accuracy: r.accuracy,
            macro_f1: r.macro_f1,
        })
        .collect())
}

/// Mean and sample standard deviation over seeds, per (k, loss, variant,
/// level).
pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(usize, LossKind, bool, Level), Vec<&ResultRow>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.k, r.loss, r.dirpa, r.level))
            .or_default()
            .push(r);
    }
    groups
        .into_iter()
        .map(|((k, loss, dirpa, level), rs)| {
            let col = |f: fn(&ResultRow) -> f64| {
                MeanStd::of(&rs.iter().map(|r| f(r)).collect::<Vec<_>>())
            };
            SummaryRow {
                k,
                loss,
                dirpa,
                level,
                n: rs.len(),
                kappa: col(|r| r.kappa),
                accuracy: col(|r| r.accuracy),
                macro_f1: col(|r| r.macro_f1),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainRow {
    pub k: usize,
    pub loss: LossKind,
    pub level: Level,
    pub gini_test: f64,
    pub bhattacharyya: Distance,
    pub metric: String,
    pub baseline: f64,
    pub dirpa: f64,
    pub gain: f64,
}

impl GainRow {
    /// `+` for a gain, `-` for a loss, `0` for a tie.
    pub fn sign(&self) -> &'static str {
        if self.gain > 0.0 {
            "+"
        } else if self.gain < 0.0 {
            "-"
        } else {
            "0"
        }
    }
}

pub const METRICS: [&str; 3] = ["kappa", "accuracy", "macro_f1"];

fn metric(r: &ResultRow, name: &str) -> f64 {
    match name {
        "kappa" => r.kappa,
        "accuracy" => r.accuracy,
        _ => r.macro_f1,
    }
}

/// DirPA minus baseline, averaged over the seeds present for both variants.
/// Cells without a partner are skipped.
pub fn gain_rows(rows: &[ResultRow], imbalance: &[ImbalanceRow]) -> Vec<GainRow> {
    let mut index: BTreeMap<(usize, LossKind, Level, u64), [Option<&ResultRow>; 2]> =
        BTreeMap::new();
    for r in rows {
        index.entry((r.k, r.loss, r.level, r.seed)).or_default()[r.dirpa as usize] = Some(r);
    }
    let mut paired: BTreeMap<(usize, LossKind, Level), Vec<(&ResultRow, &ResultRow)>> =
        BTreeMap::new();
    for ((k, loss, level, seed), pair) in &index {
        match pair {
            [Some(b), Some(d)] => paired.entry((*k, *loss, *level)).or_default().push((b, d)),
            _ => log::warn!(
                "k={k} {} {} seed {seed}: no baseline/DirPA pair",
                loss.as_str(),
                level.as_str()
            ),
        }
    }
    let mut out = Vec::new();
    for ((k, loss, level), pairs) in paired {
        let Some(imb) = imbalance.iter().find(|i| i.k == k) else {
            log::warn!("k={k}: no imbalance row");
            continue;
        };
        let n = pairs.len() as f64;
        for name in METRICS {
            let baseline = pairs.iter().map(|(b, _)| metric(b, name)).sum::<f64>() / n;
            let dirpa = pairs.iter().map(|(_, d)| metric(d, name)).sum::<f64>() / n;
            let gain = pairs
                .iter()
                .map(|(b, d)| metric(d, name) - metric(b, name))
                .sum::<f64>()
                / n;
            out.push(GainRow {
                k,
                loss,
                level,
                gini_test: imb.gini_test,
                bhattacharyya: imb.bhattacharyya,
                metric: name.to_string(),
                baseline,
                dirpa,
                gain,
            });
        }
    }
    out
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub const RESULTS_HEADER: [&str; 11] = [
    "run_id", "k", "loss", "dirpa", "alpha", "tau", "seed", "level", "kappa", "accuracy",
    "macro_f1",
];
pub const SUMMARY_HEADER: [&str; 11] = [
    "k",
    "loss",
    "dirpa",
    "level",
    "n",
    "kappa_mean",
    "kappa_std",
    "accuracy_mean",
    "accuracy_std",
    "macro_f1_mean",
    "macro_f1_std",
];
pub const IMBALANCE_HEADER: [&str; 3] = ["k", "gini_test", "bhattacharyya_kshot_vs_test"];
pub const GAIN_HEADER: [&str; 10] = [
    "k",
    "loss",
    "level",
    "gini_test",
    "bhattacharyya",
    "metric",
    "baseline",
    "dirpa",
    "gain",
    "sign",
];
pub const SELECTIONS_HEADER: [&str; 8] = [
    "run_id",
    "gamma",
    "freeze_epochs",
    "alpha",
    "tau",
    "best_epoch",
    "epochs_run",
    "val_kappa",
];

pub fn write_results<W: Write>(rows: &[ResultRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RESULTS_HEADER)?;
    for r in rows {
        w.write_record([
            r.run_id.clone(),
            r.k.to_string(),
            r.loss.as_str().to_string(),
            r.dirpa.to_string(),
            opt(r.alpha),
            opt(r.tau),
            r.seed.to_string(),
            r.level.as_str().to_string(),
            r.kappa.to_string(),
            r.accuracy.to_string(),
            r.macro_f1.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.iter().ne(RESULTS_HEADER) {
        return Err(config(format!(
            "{} does not have the results header",
            path.display()
        )));
    }
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let bad = |field: &str| Error::Ingestion {
            row: i + 2,
            message: format!("bad {field}"),
        };
        let num = |j: usize, field: &str| rec[j].parse::<f64>().map_err(|_| bad(field));
        let optional = |j: usize, field: &str| -> Result<Option<f64>> {
            if rec[j].is_empty() {
                Ok(None)
            } else {
                Ok(Some(rec[j].parse().map_err(|_| bad(field))?))
            }
        };
        rows.push(ResultRow {
            run_id: rec[0].to_string(),
            k: rec[1].parse().map_err(|_| bad("k"))?,
            loss: match &rec[2] {
                "ce" => LossKind::Ce,
                "focal" => LossKind::Focal,
                _ => return Err(bad("loss")),
            },
            dirpa: rec[3].parse().map_err(|_| bad("dirpa"))?,
            alpha: optional(4, "alpha")?,
            tau: optional(5, "tau")?,
            seed: rec[6].parse().map_err(|_| bad("seed"))?,
            level: match &rec[7] {
                "fine" => Level::Fine,
                "parent" => Level::Parent,
                _ => return Err(bad("level")),
            },
            kappa: num(8, "kappa")?,
            accuracy: num(9, "accuracy")?,
            macro_f1: num(10, "macro_f1")?,
        });
    }
    Ok(rows)
}

pub fn write_summary<W: Write>(rows: &[SummaryRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_HEADER)?;
    for r in rows {
        w.write_record([
            r.k.to_string(),
            r.loss.as_str().to_string(),
            r.dirpa.to_string(),
            r.level.as_str().to_string(),
            r.n.to_string(),
            r.kappa.mean.to_string(),
            opt(r.kappa.std),
            r.accuracy.mean.to_string(),
            opt(r.accuracy.std),
            r.macro_f1.mean.to_string(),
            opt(r.macro_f1.std),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_imbalance<W: Write>(rows: &[ImbalanceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(IMBALANCE_HEADER)?;
    for r in rows {
        w.write_record([
            r.k.to_string(),
            r.gini_test.to_string(),
            r.bhattacharyya.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_imbalance(path: &Path) -> Result<Vec<ImbalanceRow>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let bad = || Error::Ingestion {
            row: i + 2,
            message: "malformed imbalance row".into(),
        };
        if rec.len() != IMBALANCE_HEADER.len() {
            return Err(bad());
        }
        let bhattacharyya = match &rec[2] {
            "inf" => Distance::Infinite,
            v => Distance::Finite(v.parse().map_err(|_| bad())?),
        };
        rows.push(ImbalanceRow {
            k: rec[0].parse().map_err(|_| bad())?,
            gini_test: rec[1].parse().map_err(|_| bad())?,
            bhattacharyya,
        });
    }
    Ok(rows)
}

pub fn write_gain<W: Write>(rows: &[GainRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(GAIN_HEADER)?;
    for r in rows {
        w.write_record([
            r.k.to_string(),
            r.loss.as_str().to_string(),
            r.level.as_str().to_string(),
            r.gini_test.to_string(),
            r.bhattacharyya.to_string(),
            r.metric.clone(),
            r.baseline.to_string(),
            r.dirpa.to_string(),
            r.gain.to_string(),
            r.sign().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_selections<W: Write>(rows: &[Selection], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SELECTIONS_HEADER)?;
    for s in rows {
        w.write_record([
            s.run_id.clone(),
            opt(s.point.gamma),
            s.point.freeze_epochs.to_string(),
            opt(s.point.alpha),
            opt(s.point.tau),
            s.best_epoch.to_string(),
            s.epochs_run.to_string(),
            s.val_kappa.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_failures<W: Write>(rows: &[Failure], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["run_id", "error"])?;
    for f in rows {
        w.write_record([&f.run_id, &f.error])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes every output file of the table into `dir`, creating it if needed.
pub fn write_outputs(table: &ResultsTable, dir: &Path, traces: bool) -> Result<()> {
    fs::create_dir_all(dir)?;
    let file = |name: &str| fs::File::create(dir.join(name)).map(std::io::BufWriter::new);
    write_results(&table.rows, file("results.csv")?)?;
    write_summary(&table.summary, file("summary.csv")?)?;
    write_imbalance(&table.imbalance, file("imbalance.csv")?)?;
    write_gain(&gain_rows(&table.rows, &table.imbalance), file("gain.csv")?)?;
    write_selections(&table.selections, file("selections.csv")?)?;
    write_failures(&table.failures, file("failures.csv")?)?;
    if traces {
        let trace_dir = dir.join("traces");
        fs::create_dir_all(&trace_dir)?;
        for (run_id, record) in &table.traces {
            record.write_trace(std::io::BufWriter::new(fs::File::create(
                trace_dir.join(format!("{run_id}.jsonl")),
            )?))?;
        }
    }
    Ok(())
}
