//! Samples, datasets, CSV ingestion and the synthetic long-tailed generator.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::labelspace::{Label, LabelSpace};

pub const MIN_DAY: u16 = 1;
pub const MAX_DAY: u16 = 366;
/// Reflectance values are clipped to `[0, MAX_REFLECTANCE]`.
pub const MAX_REFLECTANCE: f64 = 1.2;
/// Divisor turning raw digital numbers into reflectance.
pub const RAW_SCALE: f64 = 1e4;
/// Offset added after clipping raw reflectance.
pub const RAW_OFFSET: f64 = 1e-4;

/// One parcel time series: a day-of-year per step and a `d`-vector per step,
/// stored flat in row-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub days: Vec<u16>,
    pub features: Vec<f64>,
    pub label: Label,
}

impl Sample {
    pub fn new(
        id: String,
        days: Vec<u16>,
        features: Vec<f64>,
        label: Label,
        dim: usize,
    ) -> Result<Self> {
        let sample = Self {
            id,
            days,
            features,
            label,
        };
        sample.validate(dim)?;
        Ok(sample)
    }

    pub fn len(&self) -> usize {
        self.days.len()
    }

    pub fn is_empty(&self) -> bool {
        self.days.is_empty()
    }

    pub fn step(&self, t: usize, dim: usize) -> &[f64] {
        &self.features[t * dim..(t + 1) * dim]
    }

    fn validate(&self, dim: usize) -> Result<()> {
        if self.days.is_empty() {
            return Err(domain(format!("sample {} has no time steps", self.id)));
        }
        if self.features.len() != self.days.len() * dim {
            return Err(domain(format!(
                "sample {} has {} feature values for {} steps of dimension {dim}",
                self.id,
                self.features.len(),
                self.days.len()
            )));
        }
        if self.days.iter().any(|d| !(MIN_DAY..=MAX_DAY).contains(d)) {
            return Err(domain(format!(
                "sample {} has a day outside [1, 366]",
                self.id
            )));
        }
        if self.days.windows(2).any(|w| w[0] >= w[1]) {
            return Err(domain(format!(
                "sample {} days are not strictly increasing",
                self.id
            )));
        }
        if self.features.iter().any(|v| !v.is_finite()) {
            return Err(domain(format!(
                "sample {} has a non-finite feature",
                self.id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub space: LabelSpace,
    pub feature_dim: usize,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        space: LabelSpace,
        feature_dim: usize,
        samples: Vec<Sample>,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(domain("dataset is empty"));
        }
        if feature_dim == 0 {
            return Err(domain("feature dimension must be positive"));
        }
        for s in &samples {
            s.validate(feature_dim)?;
            space.label(s.label.index())?;
        }
        Ok(Self {
            name: name.into(),
            space,
            feature_dim,
            samples,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.space.num_classes()
    }

    pub fn label(&self, index: usize) -> Label {
        self.samples[index].label
    }

    /// Sample counts per class over the given indices.
    pub fn class_counts(&self, indices: impl IntoIterator<Item = usize>) -> Vec<u64> {
        let mut counts = vec![0u64; self.num_classes()];
        for i in indices {
            counts[self.samples[i].label.index()] += 1;
        }
        counts
    }

    /// Indices of each class, in dataset order.
    pub fn indices_by_class(&self, indices: impl IntoIterator<Item = usize>) -> Vec<Vec<usize>> {
        let mut by_class = vec![Vec::new(); self.num_classes()];
        for i in indices {
            by_class[self.samples[i].label.index()].push(i);
        }
        by_class
    }
}

/// Parameters of the synthetic long-tailed generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub feature_dim: usize,
    pub num_samples: usize,
    /// Class `c` gets a share proportional to `(c + 1)^(−imbalance_exponent)`.
    pub imbalance_exponent: f64,
    pub sequence_length_range: [usize; 2],
    pub noise_sigma: f64,
    pub seed: u64,
    /// Number of parent classes; fine classes are grouped in contiguous blocks.
    #[serde(default)]
    pub num_parents: Option<usize>,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let [min, max] = self.sequence_length_range;
        if self.num_classes < 2 {
            return Err(domain("synthetic data needs at least 2 classes"));
        }
        if self.feature_dim == 0 {
            return Err(domain("feature_dim must be >= 1"));
        }
        if self.num_samples < self.num_classes {
            return Err(domain("num_samples must be >= num_classes"));
        }
        if !(self.imbalance_exponent >= 0.0 && self.imbalance_exponent.is_finite()) {
            return Err(domain("imbalance_exponent must be finite and >= 0"));
        }
        if min == 0 || min > max || max > MAX_DAY as usize {
            return Err(domain(format!(
                "invalid sequence length range [{min}, {max}]"
            )));
        }
        if !(self.noise_sigma > 0.0 && self.noise_sigma.is_finite()) {
            return Err(domain("noise_sigma must be positive"));
        }
        Ok(())
    }

    /// Real-valued power-law counts before rounding.
    pub fn ideal_counts(&self) -> Vec<f64> {
        let weights: Vec<f64> = (0..self.num_classes)
            .map(|c| ((c + 1) as f64).powf(-self.imbalance_exponent))
            .collect();
        let total: f64 = weights.iter().sum();
        weights
            .iter()
            .map(|w| self.num_samples as f64 * w / total)
            .collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        self.ideal_counts()
            .iter()
            .map(|c| (c.round() as usize).max(1))
            .collect()
    }
}

/// Seasonal signature of one class: a Gaussian bump per channel.
#[derive(Debug, Clone, Copy)]
struct Signature {
    peak: f64,
    width: f64,
}

// golden-ratio offsets give well-spread, deterministic per-class parameters
const PHI_FRAC: f64 = 0.618_033_988_749_895;
const PLASTIC_FRAC: f64 = 0.754_877_666_246_693;

fn frac(x: f64) -> f64 {
    x - x.floor()
}

impl Signature {
    fn for_class(class: usize, num_classes: usize) -> Self {
        let peak = 60.0 + 240.0 * class as f64 / (num_classes - 1) as f64;
        let width = 18.0 + 22.0 * frac(class as f64 * PHI_FRAC);
        Self { peak, width }
    }

    fn value(&self, class: usize, channel: usize, dim: usize, day: f64) -> f64 {
        let amp = 0.25 + 0.6 * frac(((class + 1) * (channel + 1)) as f64 * PLASTIC_FRAC);
        let base = 0.05 + 0.1 * frac(channel as f64 * PHI_FRAC);
        let shift = (channel as f64 - (dim as f64 - 1.0) / 2.0) * 6.0;
        let z = (day - self.peak - shift) / self.width;
        base + amp * (-0.5 * z * z).exp()
    }
}

/// Builds a long-tailed dataset fully determined by `spec.seed`.
///
/// Samples are emitted class by class; within a class each series gets a
/// random length in the configured range and sorted distinct acquisition days.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let k = spec.num_classes;
    let d = spec.feature_dim;
    let space = match spec.num_parents {
        Some(p) => LabelSpace::grouped(k, p)?,
        None => LabelSpace::identity(k)?,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let [min_len, max_len] = spec.sequence_length_range;
    let mut samples = Vec::with_capacity(spec.num_samples);
    for (class, &count) in spec.class_counts().iter().enumerate() {
        let sig = Signature::for_class(class, k);
        for _ in 0..count {
            let len = rng.random_range(min_len..=max_len);
            let mut days: Vec<u16> = rand::seq::index::sample(&mut rng, MAX_DAY as usize, len)
                .into_iter()
                .map(|i| i as u16 + MIN_DAY)
                .collect();
            days.sort_unstable();
            let mut features = Vec::with_capacity(len * d);
            for &day in &days {
                for ch in 0..d {
                    let noise: f64 = StandardNormal.sample(&mut rng);
                    let v = sig.value(class, ch, d, day as f64) + spec.noise_sigma * noise;
                    features.push(v.clamp(0.0, MAX_REFLECTANCE));
                }
            }
            let id = samples.len().to_string();
            samples.push(Sample {
                id,
                days,
                features,
                label: Label(class),
            });
        }
    }
    Dataset::new(format!("synthetic-{}", spec.seed), space, d, samples)
}

/// Declarative description of a CSV dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default)]
    pub name: Option<String>,
    pub num_classes: usize,
    pub num_parents: usize,
    pub parent_of: Vec<usize>,
    pub feature_dim: usize,
    pub class_names: Vec<String>,
    #[serde(default)]
    pub excluded_classes: Vec<usize>,
    #[serde(default)]
    pub normalize_raw: bool,
}

impl Manifest {
    pub fn for_dataset(dataset: &Dataset) -> Self {
        Self {
            name: Some(dataset.name.clone()),
            num_classes: dataset.num_classes(),
            num_parents: dataset.space.num_parents(),
            parent_of: dataset.space.parent_table().to_vec(),
            feature_dim: dataset.feature_dim,
            class_names: dataset.space.class_names().to_vec(),
            excluded_classes: Vec::new(),
            normalize_raw: false,
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    fn declared_space(&self) -> Result<LabelSpace> {
        if self.num_classes != self.class_names.len() {
            return Err(domain(format!(
                "manifest declares {} classes but lists {} names",
                self.num_classes,
                self.class_names.len()
            )));
        }
        LabelSpace::new(
            self.class_names.clone(),
            self.parent_of.clone(),
            self.num_parents,
        )
    }

    /// Label space after exclusions, with retained fine and parent classes
    /// renumbered densely in their original order. Returns the space and the
    /// old → new fine index map.
    fn retained_space(&self) -> Result<(LabelSpace, Vec<Option<usize>>)> {
        let declared = self.declared_space()?;
        let excluded: HashSet<usize> = self.excluded_classes.iter().copied().collect();
        if let Some(&bad) = excluded.iter().find(|&&c| c >= self.num_classes) {
            return Err(domain(format!("excluded class {bad} is not declared")));
        }
        if excluded.is_empty() {
            return Ok((declared, (0..self.num_classes).map(Some).collect()));
        }
        let mut fine_map = vec![None; self.num_classes];
        let mut parent_map = vec![None; self.num_parents];
        let mut names = Vec::new();
        let mut parents = Vec::new();
        for c in (0..self.num_classes).filter(|c| !excluded.contains(c)) {
            fine_map[c] = Some(names.len());
            names.push(self.class_names[c].clone());
            let old_parent = self.parent_of[c];
            let next = parent_map.iter().flatten().count();
            let p = *parent_map[old_parent].get_or_insert(next);
            parents.push(p);
        }
        let num_parents = parent_map.iter().flatten().count();
        Ok((LabelSpace::new(names, parents, num_parents)?, fine_map))
    }
}

fn ingest(row: usize, message: impl Into<String>) -> Error {
    Error::Ingestion {
        row,
        message: message.into(),
    }
}

/// Reads a long-format CSV (`sample_id, day, f0..f{d−1}, label`).
///
/// Rows of one sample must be contiguous and day-sorted. Empty or `nan`
/// feature cells are no-data and become 0.0. Samples of excluded classes are
/// dropped and the remaining classes renumbered.
pub fn load_csv(path: &Path, manifest: &Manifest) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    let name = manifest
        .name
        .clone()
        .or_else(|| path.file_stem().map(|s| s.to_string_lossy().into_owned()))
        .unwrap_or_else(|| "dataset".to_string());
    read_csv(file, manifest, name)
}

pub fn read_csv<R: Read>(reader: R, manifest: &Manifest, name: String) -> Result<Dataset> {
    let (space, fine_map) = manifest.retained_space()?;
    let d = manifest.feature_dim;
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| ingest(1, format!("missing column {name:?}")))
    };
    let id_col = column("sample_id")?;
    let day_col = column("day")?;
    let label_col = column("label")?;
    let feature_cols = (0..d)
        .map(|i| column(&format!("f{i}")))
        .collect::<Result<Vec<_>>>()?;

    struct Pending {
        id: String,
        days: Vec<u16>,
        features: Vec<f64>,
        label: usize,
    }

    let mut samples = Vec::new();
    let mut seen = HashSet::new();
    let mut current: Option<Pending> = None;
    let finish = |p: Pending, samples: &mut Vec<Sample>| {
        if let Some(new_label) = fine_map[p.label] {
            samples.push(Sample {
                id: p.id,
                days: p.days,
                features: p.features,
                label: Label(new_label),
            });
        }
    };

    for record in rdr.records() {
        let record = record?;
        let row = record.position().map_or(0, |p| p.line() as usize);
        let field = |col: usize| record.get(col).ok_or_else(|| ingest(row, "short row"));
        let id = field(id_col)?.to_string();
        let day: u16 = field(day_col)?.parse().map_err(|_| {
            ingest(
                row,
                format!("day {:?} is not an integer", record.get(day_col)),
            )
        })?;
        if !(MIN_DAY..=MAX_DAY).contains(&day) {
            return Err(ingest(row, format!("day {day} outside [1, 366]")));
        }
        let label: usize = field(label_col)?.parse().map_err(|_| {
            ingest(
                row,
                format!("label {:?} is not an integer", record.get(label_col)),
            )
        })?;
        if label >= manifest.num_classes {
            return Err(ingest(row, format!("unknown label {label}")));
        }
        let mut values = Vec::with_capacity(d);
        for &col in &feature_cols {
            values.push(parse_feature(field(col)?, manifest.normalize_raw, row)?);
        }

        let continues = current.as_ref().is_some_and(|p| p.id == id);
        if continues {
            let p = current.as_mut().expect("checked above");
            if p.days.last().is_some_and(|&last| day <= last) {
                return Err(ingest(
                    row,
                    format!("days of sample {id} are not strictly increasing"),
                ));
            }
            if p.label != label {
                return Err(ingest(row, format!("sample {id} changes label")));
            }
            p.days.push(day);
            p.features.extend(values);
        } else {
            if !seen.insert(id.clone()) {
                return Err(ingest(
                    row,
                    format!("rows of sample {id} are not contiguous"),
                ));
            }
            if let Some(done) = current.take() {
                finish(done, &mut samples);
            }
            current = Some(Pending {
                id,
                days: vec![day],
                features: values,
                label,
            });
        }
    }
    if let Some(done) = current.take() {
        finish(done, &mut samples);
    }
    Dataset::new(name, space, d, samples)
}

fn parse_feature(cell: &str, normalize_raw: bool, row: usize) -> Result<f64> {
    if cell.is_empty() || cell.eq_ignore_ascii_case("nan") {
        return Ok(0.0);
    }
    let v: f64 = cell
        .parse()
        .map_err(|_| ingest(row, format!("feature {cell:?} is not a number")))?;
    if !v.is_finite() {
        return Err(ingest(row, format!("feature {cell:?} is not finite")));
    }
    Ok(if normalize_raw {
        (v / RAW_SCALE).clamp(0.0, MAX_REFLECTANCE) + RAW_OFFSET
    } else {
        v
    })
}

pub fn write_csv_to<W: Write>(dataset: &Dataset, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let d = dataset.feature_dim;
    let mut header = vec!["sample_id".to_string(), "day".to_string()];
    header.extend((0..d).map(|i| format!("f{i}")));
    header.push("label".to_string());
    wtr.write_record(&header)?;
    for s in &dataset.samples {
        for (t, day) in s.days.iter().enumerate() {
            let mut rec = vec![s.id.clone(), day.to_string()];
            rec.extend(s.step(t, d).iter().map(|v| v.to_string()));
            rec.push(s.label.index().to_string());
            wtr.write_record(&rec)?;
        }
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_csv(dataset: &Dataset, path: &Path) -> Result<()> {
    write_csv_to(dataset, std::fs::File::create(path)?)
}
