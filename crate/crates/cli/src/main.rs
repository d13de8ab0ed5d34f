//! `pslab` command line: synthetic data generation, splitting, experiment
//! runs, result reports and Dirichlet density grids.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use pslab::data::{generate_synthetic, load_csv, write_csv, Dataset, Manifest, SyntheticSpec};
use pslab::density::{dirichlet_density_grid, integrate, write_density_csv, DEFAULT_RESOLUTION};
use pslab::dirpa::DirpaMode;
use pslab::experiment::{
    gain_rows, read_imbalance, read_results, run_experiment, summarize, write_gain, write_summary,
    DatasetSource, ExperimentConfig, LossKind,
};
use pslab::split::{class_aware_split, SplitDocument, SplitSpec};
use pslab::stats::{gini_coefficient, ClassHistogram};

#[derive(Parser, Debug)]
#[command(
    name = "pslab",
    version,
    about = "Few-shot training with Dirichlet prior augmentation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic long-tailed dataset as CSV plus manifest.
    Generate(GenerateArgs),
    /// Split a dataset into train/validation/test partitions.
    Split(SplitArgs),
    /// Run an experiment grid and write its result files.
    Run(RunArgs),
    /// Summarize a results.csv (mean ± std over seeds).
    Report(ReportArgs),
    /// Emit a K=3 Dirichlet density grid.
    Density(DensityArgs),
}

#[derive(Args, Debug)]
struct GenerateArgs {
    /// JSON file with a full synthetic spec; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    feature_dim: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    exponent: Option<f64>,
    #[arg(long)]
    min_len: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    parents: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output CSV; the manifest is written next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct DataArgs {
    #[arg(long)]
    data: PathBuf,
    /// Defaults to `<data>.manifest.json`.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

impl DataArgs {
    fn load(&self) -> Result<Dataset> {
        let manifest_path = self
            .manifest
            .clone()
            .unwrap_or_else(|| manifest_path_for(&self.data));
        let manifest = Manifest::read(&manifest_path)
            .with_context(|| format!("reading {}", manifest_path.display()))?;
        load_csv(&self.data, &manifest).with_context(|| format!("loading {}", self.data.display()))
    }
}

#[derive(Args, Debug)]
struct SplitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
    #[arg(long, default_value_t = 300)]
    validation_target: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Variants {
    Off,
    On,
    Both,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// JSON experiment config; missing keys take defaults, flags override.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from the reduced desk-scale preset instead of the full grid.
    #[arg(long)]
    desk: bool,
    /// Use a CSV dataset instead of the synthetic source.
    #[arg(long, requires = "manifest")]
    data: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Seed of the synthetic dataset.
    #[arg(long)]
    data_seed: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    k: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long, value_delimiter = ',', value_parser = parse_loss)]
    losses: Option<Vec<LossKind>>,
    #[arg(long, value_enum)]
    dirpa: Option<Variants>,
    #[arg(long, value_delimiter = ',')]
    alpha_grid: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    tau_grid: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    gamma_grid: Option<Vec<f64>>,
    #[arg(long)]
    asymmetric: bool,
    #[arg(long)]
    split_seed: Option<u64>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr_head: Option<f64>,
    #[arg(long)]
    lr_backbone: Option<f64>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    no_attention: bool,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    no_traces: bool,
    /// Write the effective configuration here before running.
    #[arg(long)]
    dump_config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_loss(s: &str) -> Result<LossKind, String> {
    match s {
        "ce" => Ok(LossKind::Ce),
        "focal" => Ok(LossKind::Focal),
        other => Err(format!("unknown loss {other:?} (expected ce or focal)")),
    }
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Directory holding results.csv (and imbalance.csv for gains).
    #[arg(long)]
    dir: PathBuf,
    /// Rewrite summary.csv and gain.csv in `dir`.
    #[arg(long)]
    write: bool,
}

#[derive(Args, Debug)]
struct DensityArgs {
    #[arg(long)]
    alpha: f64,
    /// Lattice subdivisions; must be 1 mod 3.
    #[arg(long, default_value_t = DEFAULT_RESOLUTION)]
    resolution: usize,
    /// CSV output; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn manifest_path_for(data: &Path) -> PathBuf {
    let mut name = data.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn generate(args: GenerateArgs) -> Result<()> {
    let mut spec: SyntheticSpec = match &args.config {
        Some(path) => read_json(path)?,
        None => pslab::experiment::desk_dataset(0),
    };
    if let Some(v) = args.classes {
        spec.num_classes = v;
    }
    if let Some(v) = args.feature_dim {
        spec.feature_dim = v;
    }
    if let Some(v) = args.samples {
        spec.num_samples = v;
    }
    if let Some(v) = args.exponent {
        spec.imbalance_exponent = v;
    }
    if let Some(v) = args.min_len {
        spec.sequence_length_range[0] = v;
    }
    if let Some(v) = args.max_len {
        spec.sequence_length_range[1] = v;
    }
    if let Some(v) = args.noise {
        spec.noise_sigma = v;
    }
    if let Some(v) = args.parents {
        spec.num_parents = Some(v);
    }
    if let Some(v) = args.seed {
        spec.seed = v;
    }
    let ds = generate_synthetic(&spec)?;
    write_csv(&ds, &args.out)?;
    Manifest::for_dataset(&ds).write(&manifest_path_for(&args.out))?;
    let hist = ClassHistogram::new(ds.class_counts(0..ds.len()))?;
    println!(
        "wrote {} samples, {} classes, Gini {:.4} to {}",
        ds.len(),
        ds.num_classes(),
        gini_coefficient(&hist),
        args.out.display()
    );
    Ok(())
}

fn split(args: SplitArgs) -> Result<()> {
    let ds = args.data.load()?;
    let spec = SplitSpec {
        test_fraction: args.test_fraction,
        validation_target: args.validation_target,
        seed: args.seed,
    };
    let result = class_aware_split(&ds, &spec)?;
    fs::write(
        &args.out,
        serde_json::to_string_pretty(&SplitDocument::new(spec, &result))?,
    )?;
    println!(
        "train {} / validation {} / test {} written to {}",
        result.train.len(),
        result.validation.len(),
        result.test.len(),
        args.out.display()
    );
    Ok(())
}

fn experiment_config(args: &RunArgs) -> Result<ExperimentConfig> {
    let mut cfg = match (&args.config, args.desk) {
        (Some(path), _) => read_json(path)?,
        (None, true) => ExperimentConfig::desk(),
        (None, false) => ExperimentConfig::default(),
    };
    if let (Some(data), Some(manifest)) = (&args.data, &args.manifest) {
        cfg.dataset = DatasetSource::Csv {
            path: data.clone(),
            manifest: manifest.clone(),
        };
    }
    if let Some(seed) = args.data_seed {
        match &mut cfg.dataset {
            DatasetSource::Synthetic { spec } => spec.seed = seed,
            DatasetSource::Csv { .. } => bail!("--data-seed only applies to synthetic data"),
        }
    }
    if let Some(v) = &args.k {
        cfg.k_grid = v.clone();
    }
    if let Some(v) = &args.seeds {
        cfg.seeds = v.clone();
    }
    if let Some(v) = &args.losses {
        cfg.losses = v.clone();
    }
    if let Some(v) = args.dirpa {
        cfg.dirpa = match v {
            Variants::Off => vec![false],
            Variants::On => vec![true],
            Variants::Both => vec![false, true],
        };
    }
    if let Some(v) = &args.alpha_grid {
        cfg.alpha_grid = v.clone();
    }
    if let Some(v) = &args.tau_grid {
        cfg.tau_grid = v.clone();
    }
    if let Some(v) = &args.gamma_grid {
        cfg.focal_gamma_grid = v.clone();
    }
    if args.asymmetric {
        cfg.dirpa_mode = DirpaMode::Asymmetric;
    }
    if let Some(v) = args.split_seed {
        cfg.split.seed = v;
    }
    if let Some(v) = args.max_epochs {
        cfg.train.max_epochs = v;
    }
    if let Some(v) = args.patience {
        cfg.train.patience = v;
    }
    if let Some(v) = args.batch_size {
        cfg.train.batch_size = v;
    }
    if let Some(v) = args.lr_head {
        cfg.train.lr_head = v;
    }
    if let Some(v) = args.lr_backbone {
        cfg.train.lr_backbone = v;
    }
    if let Some(v) = args.embed_dim {
        cfg.model.embed_dim = v;
    }
    if args.no_attention {
        cfg.model.use_attention = false;
    }
    if args.threads.is_some() {
        cfg.threads = args.threads;
    }
    if args.no_traces {
        cfg.record_traces = false;
    }
    if let Some(out) = &args.out {
        cfg.output_dir = Some(out.clone());
    }
    Ok(cfg)
}

fn run(args: RunArgs) -> Result<()> {
    let cfg = experiment_config(&args)?;
    if let Some(path) = &args.dump_config {
        fs::write(path, serde_json::to_string_pretty(&cfg)?)?;
    }
    if cfg.output_dir.is_none() {
        log::warn!("no --out given; results are only printed");
    }
    let table = run_experiment(&cfg)?;
    for f in &table.failures {
        log::error!("{}: {}", f.run_id, f.error);
    }
    print_summary(&table.summary, io::stdout().lock())?;
    Ok(())
}

fn print_summary<W: Write>(rows: &[pslab::experiment::SummaryRow], mut out: W) -> Result<()> {
    let fmt = |m: &pslab::experiment::MeanStd| match m.std {
        Some(s) => format!("{:.4} ± {:.4}", m.mean, s),
        None => format!("{:.4}", m.mean),
    };
    writeln!(
        out,
        "{:>4} {:>6} {:>6} {:>7} {:>3}  {:<18} {:<18} {:<18}",
        "k", "loss", "dirpa", "level", "n", "kappa", "accuracy", "macro_f1"
    )?;
    for r in rows {
        writeln!(
            out,
            "{:>4} {:>6} {:>6} {:>7} {:>3}  {:<18} {:<18} {:<18}",
            r.k,
            r.loss.as_str(),
            r.dirpa,
            r.level.as_str(),
            r.n,
            fmt(&r.kappa),
            fmt(&r.accuracy),
            fmt(&r.macro_f1)
        )?;
    }
    Ok(())
}

fn report(args: ReportArgs) -> Result<()> {
    let rows = read_results(&args.dir.join("results.csv"))?;
    let summary = summarize(&rows);
    print_summary(&summary, io::stdout().lock())?;
    let imbalance_path = args.dir.join("imbalance.csv");
    let gains = if imbalance_path.exists() {
        gain_rows(&rows, &read_imbalance(&imbalance_path)?)
    } else {
        Vec::new()
    };
    for g in gains.iter().filter(|g| g.metric == "kappa") {
        println!(
            "k={:<4} {:<6} {:<7} kappa gain {:+.4} ({})",
            g.k,
            g.loss.as_str(),
            g.level.as_str(),
            g.gain,
            g.sign()
        );
    }
    if args.write {
        write_summary(
            &summary,
            BufWriter::new(fs::File::create(args.dir.join("summary.csv"))?),
        )?;
        write_gain(
            &gains,
            BufWriter::new(fs::File::create(args.dir.join("gain.csv"))?),
        )?;
    }
    Ok(())
}

fn density(args: DensityArgs) -> Result<()> {
    let grid = dirichlet_density_grid(args.alpha, args.resolution)?;
    match &args.out {
        Some(path) => {
            write_density_csv(&grid, BufWriter::new(fs::File::create(path)?))?;
            eprintln!(
                "{} points, integral {:.6}, written to {}",
                grid.len(),
                integrate(&grid),
                path.display()
            );
        }
        None => write_density_csv(&grid, io::stdout().lock())?,
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Generate(a) => generate(a),
        Command::Split(a) => split(a),
        Command::Run(a) => run(a),
        Command::Report(a) => report(a),
        Command::Density(a) => density(a),
    }
}
