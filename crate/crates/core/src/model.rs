//! Desk-scale sequence encoder plus linear head, with a hand-written
//! backward pass.
//!
//! ```text
//! e_t = W_in x_t + b_in + PE(day_t)          per step
//! h_t = tanh(e_t)
//! u_t = Σ_j softmax_j(q_t·k_j / √n_e) h_j    (attention on; else u_t = h_t)
//!       q_t = W_q h_t, k_j = W_k h_j
//! g   = mean_t u_t                           backbone output ∈ ℝ^{n_e}
//! z   = W_out g + b_out                      head, K logits
//! ```

use std::io::{BufRead, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Sample, MAX_DAY, MIN_DAY};
use crate::error::{domain, Error, Result};

pub const DEFAULT_MAX_DAYS: usize = MAX_DAY as usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub feature_dim: usize,
    pub embed_dim: usize,
    pub use_attention: bool,
    #[serde(default = "default_max_days")]
    pub max_days: usize,
    pub num_classes: usize,
}

fn default_max_days() -> usize {
    DEFAULT_MAX_DAYS
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.embed_dim == 0 {
            return Err(domain("feature_dim and embed_dim must be >= 1"));
        }
        if self.num_classes < 2 {
            return Err(domain("model needs at least 2 classes"));
        }
        if self.max_days == 0 {
            return Err(domain("max_days must be >= 1"));
        }
        Ok(())
    }
}

/// Sinusoidal encoding of a day of year with base `max_days`:
/// `PE[2i] = sin(day / max_days^{2i/n})`, `PE[2i+1] = cos(…)`.
pub fn positional_encoding(day: usize, embed_dim: usize, max_days: usize) -> Result<Vec<f64>> {
    if day < MIN_DAY as usize || day > max_days {
        return Err(domain(format!("day {day} outside [1, {max_days}]")));
    }
    let mut pe = vec![0.0; embed_dim];
    let base = max_days as f64;
    for i in (0..embed_dim).step_by(2) {
        let angle = day as f64 / base.powf(i as f64 / embed_dim as f64);
        pe[i] = angle.sin();
        if i + 1 < embed_dim {
            pe[i + 1] = angle.cos();
        }
    }
    Ok(pe)
}

/// Parameter values with a same-shaped gradient accumulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub values: Vec<f64>,
    #[serde(skip)]
    pub grad: Vec<f64>,
}

impl Block {
    fn zeros(n: usize) -> Self {
        Self {
            values: vec![0.0; n],
            grad: vec![0.0; n],
        }
    }

    fn uniform<R: Rng + ?Sized>(n: usize, bound: f64, rng: &mut R) -> Self {
        Self {
            values: (0..n).map(|_| rng.random_range(-bound..=bound)).collect(),
            grad: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Backbone,
    Head,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Backbone {
    /// `n_e × d`, row-major.
    pub input_weight: Block,
    pub input_bias: Block,
    /// `n_e × n_e` each; present iff attention is enabled.
    pub query: Option<Block>,
    pub key: Option<Block>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    /// `K × n_e`, row-major.
    pub weight: Block,
    pub bias: Block,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters {
    pub config: ModelConfig,
    pub backbone: Backbone,
    pub head: Head,
    frozen: bool,
    version: u64,
}

fn init_bound(fan_in: usize) -> f64 {
    1.0 / (fan_in as f64).sqrt()
}

impl Backbone {
    fn init<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let (d, n) = (cfg.feature_dim, cfg.embed_dim);
        let input_weight = Block::uniform(n * d, init_bound(d), rng);
        let input_bias = Block::zeros(n);
        let (query, key) = if cfg.use_attention {
            (
                Some(Block::uniform(n * n, init_bound(n), rng)),
                Some(Block::uniform(n * n, init_bound(n), rng)),
            )
        } else {
            (None, None)
        };
        Self {
            input_weight,
            input_bias,
            query,
            key,
        }
    }
}

impl Head {
    fn init<R: Rng + ?Sized>(embed_dim: usize, num_classes: usize, rng: &mut R) -> Self {
        Self {
            weight: Block::uniform(num_classes * embed_dim, init_bound(embed_dim), rng),
            bias: Block::zeros(num_classes),
        }
    }
}

/// Activations kept from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    version: u64,
    steps: usize,
    inputs: Vec<f64>,
    hidden: Vec<f64>,
    queries: Vec<f64>,
    keys: Vec<f64>,
    /// Row-major `T × T` attention weights.
    attention: Vec<f64>,
    pooled: Vec<f64>,
}

impl ForwardCache {
    pub fn attention_weights(&self) -> &[f64] {
        &self.attention
    }

    pub fn pooled(&self) -> &[f64] {
        &self.pooled
    }

    pub fn hidden(&self) -> &[f64] {
        &self.hidden
    }
}

fn matvec(m: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    for r in 0..rows {
        let row = &m[r * cols..(r + 1) * cols];
        out[r] = row.iter().zip(x).map(|(a, b)| a * b).sum();
    }
}

/// `out += mᵀ y`
fn matvec_t_acc(m: &[f64], rows: usize, cols: usize, y: &[f64], out: &mut [f64]) {
    for r in 0..rows {
        let row = &m[r * cols..(r + 1) * cols];
        for (o, w) in out.iter_mut().zip(row) {
            *o += w * y[r];
        }
    }
}

/// `grad += y xᵀ`
fn outer_acc(grad: &mut [f64], y: &[f64], x: &[f64]) {
    let cols = x.len();
    for (r, &yr) in y.iter().enumerate() {
        for (g, &xc) in grad[r * cols..(r + 1) * cols].iter_mut().zip(x) {
            *g += yr * xc;
        }
    }
}

impl ModelParameters {
    pub fn init<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let backbone = Backbone::init(&config, rng);
        let head = Head::init(config.embed_dim, config.num_classes, rng);
        Ok(Self {
            config,
            backbone,
            head,
            frozen: false,
            version: 0,
        })
    }

    /// All weights and biases zero.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let (d, n, k) = (config.feature_dim, config.embed_dim, config.num_classes);
        let attn = config.use_attention.then(|| Block::zeros(n * n));
        Ok(Self {
            config,
            backbone: Backbone {
                input_weight: Block::zeros(n * d),
                input_bias: Block::zeros(n),
                query: attn.clone(),
                key: attn,
            },
            head: Head {
                weight: Block::zeros(k * n),
                bias: Block::zeros(k),
            },
            frozen: false,
            version: 0,
        })
    }

    /// Replaces the head with a fresh one for `num_classes` outputs; the
    /// backbone is left untouched.
    pub fn reinit_head<R: Rng + ?Sized>(&mut self, num_classes: usize, rng: &mut R) -> Result<()> {
        if num_classes < 2 {
            return Err(domain("head needs at least 2 classes"));
        }
        self.config.num_classes = num_classes;
        self.head = Head::init(self.config.embed_dim, num_classes, rng);
        self.bump_version();
        Ok(())
    }

    pub fn freeze_backbone(&mut self, frozen: bool) {
        self.frozen = frozen;
    }

    pub fn backbone_frozen(&self) -> bool {
        self.frozen
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// Call after any in-place parameter change; invalidates older caches.
    pub fn bump_version(&mut self) {
        self.version += 1;
    }

    /// Blocks in their declared (checkpoint) order.
    pub fn blocks(&self) -> Vec<(&'static str, Group, &Block)> {
        let mut out = vec![
            ("input_weight", Group::Backbone, &self.backbone.input_weight),
            ("input_bias", Group::Backbone, &self.backbone.input_bias),
        ];
        if let (Some(q), Some(k)) = (&self.backbone.query, &self.backbone.key) {
            out.push(("attention_query", Group::Backbone, q));
            out.push(("attention_key", Group::Backbone, k));
        }
        out.push(("head_weight", Group::Head, &self.head.weight));
        out.push(("head_bias", Group::Head, &self.head.bias));
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<(&'static str, Group, &mut Block)> {
        let mut out = vec![
            (
                "input_weight",
                Group::Backbone,
                &mut self.backbone.input_weight,
            ),
            ("input_bias", Group::Backbone, &mut self.backbone.input_bias),
        ];
        if let (Some(q), Some(k)) = (&mut self.backbone.query, &mut self.backbone.key) {
            out.push(("attention_query", Group::Backbone, q));
            out.push(("attention_key", Group::Backbone, k));
        }
        out.push(("head_weight", Group::Head, &mut self.head.weight));
        out.push(("head_bias", Group::Head, &mut self.head.bias));
        out
    }

    pub fn zero_grad(&mut self) {
        for (_, _, b) in self.blocks_mut() {
            b.zero_grad();
        }
    }

    pub fn num_parameters(&self) -> usize {
        self.blocks().iter().map(|(_, _, b)| b.len()).sum()
    }

    fn checksum_where(&self, keep: impl Fn(Group) -> bool) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for (_, group, block) in self.blocks() {
            if !keep(group) {
                continue;
            }
            for v in &block.values {
                for byte in v.to_bits().to_le_bytes() {
                    h ^= byte as u64;
                    h = h.wrapping_mul(0x0000_0100_0000_01b3);
                }
            }
        }
        h
    }

    /// FNV-1a over the bit patterns of every backbone value.
    pub fn backbone_checksum(&self) -> u64 {
        self.checksum_where(|g| g == Group::Backbone)
    }

    /// FNV-1a over the bit patterns of every parameter value.
    pub fn checksum(&self) -> u64 {
        self.checksum_where(|_| true)
    }

    pub fn forward(&self, sample: &Sample) -> Result<(Vec<f64>, ForwardCache)> {
        let cfg = &self.config;
        let (d, n, k) = (cfg.feature_dim, cfg.embed_dim, cfg.num_classes);
        let steps = sample.len();
        if steps == 0 || sample.features.len() != steps * d {
            return Err(domain(format!(
                "sample {} has {} values for {steps} steps, model expects dimension {d}",
                sample.id,
                sample.features.len()
            )));
        }

        let mut hidden = vec![0.0; steps * n];
        for t in 0..steps {
            let h = &mut hidden[t * n..(t + 1) * n];
            matvec(
                &self.backbone.input_weight.values,
                n,
                d,
                sample.step(t, d),
                h,
            );
            let pe = positional_encoding(sample.days[t] as usize, n, cfg.max_days)?;
            for ((v, b), p) in h.iter_mut().zip(&self.backbone.input_bias.values).zip(&pe) {
                *v = (*v + b + p).tanh();
            }
        }

        let mut pooled = vec![0.0; n];
        let (mut queries, mut keys, mut attention) = (Vec::new(), Vec::new(), Vec::new());
        if let (Some(wq), Some(wk)) = (&self.backbone.query, &self.backbone.key) {
            queries = vec![0.0; steps * n];
            keys = vec![0.0; steps * n];
            for t in 0..steps {
                let h = &hidden[t * n..(t + 1) * n];
                matvec(&wq.values, n, n, h, &mut queries[t * n..(t + 1) * n]);
                matvec(&wk.values, n, n, h, &mut keys[t * n..(t + 1) * n]);
            }
            let scale = 1.0 / (n as f64).sqrt();
            attention = vec![0.0; steps * steps];
            for t in 0..steps {
                let q = &queries[t * n..(t + 1) * n];
                let scores: Vec<f64> = (0..steps)
                    .map(|j| {
                        q.iter()
                            .zip(&keys[j * n..(j + 1) * n])
                            .map(|(a, b)| a * b)
                            .sum::<f64>()
                            * scale
                    })
                    .collect();
                let weights = crate::dirpa::softmax(&scores);
                for (j, &a) in weights.iter().enumerate() {
                    attention[t * steps + j] = a;
                    for (p, hv) in pooled.iter_mut().zip(&hidden[j * n..(j + 1) * n]) {
                        *p += a * hv;
                    }
                }
            }
        } else {
            for t in 0..steps {
                for (p, hv) in pooled.iter_mut().zip(&hidden[t * n..(t + 1) * n]) {
                    *p += hv;
                }
            }
        }
        pooled.iter_mut().for_each(|p| *p /= steps as f64);

        let mut logits = vec![0.0; k];
        matvec(&self.head.weight.values, k, n, &pooled, &mut logits);
        logits
            .iter_mut()
            .zip(&self.head.bias.values)
            .for_each(|(z, b)| *z += b);
        if logits.iter().any(|z| !z.is_finite()) {
            return Err(Error::NonFinite(format!("logits for sample {}", sample.id)));
        }
        let cache = ForwardCache {
            version: self.version,
            steps,
            inputs: sample.features.clone(),
            hidden,
            queries,
            keys,
            attention,
            pooled,
        };
        Ok((logits, cache))
    }

    /// Accumulates `∂L/∂θ` given `∂L/∂z`. Backbone gradients are skipped
    /// while the backbone is frozen.
    pub fn backward(&mut self, cache: &ForwardCache, grad_logits: &[f64]) -> Result<()> {
        if cache.version != self.version {
            return Err(Error::Contract(format!(
                "cache from parameter version {} used at version {}",
                cache.version, self.version
            )));
        }
        let (d, n, k) = (
            self.config.feature_dim,
            self.config.embed_dim,
            self.config.num_classes,
        );
        if grad_logits.len() != k {
            return Err(domain(format!(
                "{} logit gradients for {k} classes",
                grad_logits.len()
            )));
        }
        outer_acc(&mut self.head.weight.grad, grad_logits, &cache.pooled);
        self.head
            .bias
            .grad
            .iter_mut()
            .zip(grad_logits)
            .for_each(|(g, d)| *g += d);
        if self.frozen {
            return Ok(());
        }

        let steps = cache.steps;
        let mut grad_pooled = vec![0.0; n];
        matvec_t_acc(
            &self.head.weight.values,
            k,
            n,
            grad_logits,
            &mut grad_pooled,
        );
        // every u_t receives dg / T
        let grad_u: Vec<f64> = grad_pooled.iter().map(|g| g / steps as f64).collect();

        let mut grad_hidden = vec![0.0; steps * n];
        if let (Some(wq), Some(wk)) = (&mut self.backbone.query, &mut self.backbone.key) {
            let scale = 1.0 / (n as f64).sqrt();
            let mut grad_q = vec![0.0; steps * n];
            let mut grad_k = vec![0.0; steps * n];
            // value path: dh_j += Σ_t a_tj du
            for t in 0..steps {
                let row = &cache.attention[t * steps..(t + 1) * steps];
                for (j, &a) in row.iter().enumerate() {
                    for (gh, gu) in grad_hidden[j * n..(j + 1) * n].iter_mut().zip(&grad_u) {
                        *gh += a * gu;
                    }
                }
                // score path
                let da: Vec<f64> = (0..steps)
                    .map(|j| {
                        cache.hidden[j * n..(j + 1) * n]
                            .iter()
                            .zip(&grad_u)
                            .map(|(h, g)| h * g)
                            .sum()
                    })
                    .collect();
                let mean_da: f64 = row.iter().zip(&da).map(|(a, g)| a * g).sum();
                for j in 0..steps {
                    let ds = row[j] * (da[j] - mean_da) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    for c in 0..n {
                        grad_q[t * n + c] += ds * cache.keys[j * n + c];
                        grad_k[j * n + c] += ds * cache.queries[t * n + c];
                    }
                }
            }
            for t in 0..steps {
                let h = &cache.hidden[t * n..(t + 1) * n];
                let gq = &grad_q[t * n..(t + 1) * n];
                let gk = &grad_k[t * n..(t + 1) * n];
                outer_acc(&mut wq.grad, gq, h);
                outer_acc(&mut wk.grad, gk, h);
                let gh = &mut grad_hidden[t * n..(t + 1) * n];
                matvec_t_acc(&wq.values, n, n, gq, gh);
                matvec_t_acc(&wk.values, n, n, gk, gh);
            }
        } else {
            for t in 0..steps {
                grad_hidden[t * n..(t + 1) * n].copy_from_slice(&grad_u);
            }
        }

        for t in 0..steps {
            let grad_e: Vec<f64> = grad_hidden[t * n..(t + 1) * n]
                .iter()
                .zip(&cache.hidden[t * n..(t + 1) * n])
                .map(|(g, h)| g * (1.0 - h * h))
                .collect();
            outer_acc(
                &mut self.backbone.input_weight.grad,
                &grad_e,
                &cache.inputs[t * d..(t + 1) * d],
            );
            self.backbone
                .input_bias
                .grad
                .iter_mut()
                .zip(&grad_e)
                .for_each(|(g, e)| *g += e);
        }
        Ok(())
    }

    /// Arg-max of the unadjusted logits; ties resolve to the lower index.
    pub fn predict(&self, sample: &Sample) -> Result<usize> {
        let (logits, _) = self.forward(sample)?;
        Ok(argmax(&logits))
    }
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub const CHECKPOINT_MAGIC: &str = "PSLAB1";

/// Textual checkpoint: magic line, seed, JSON config, then one
/// `block <name> <len>` line per block followed by its values on one line.
/// Values are written in shortest round-trip form, so reloading is exact.
pub fn write_checkpoint<W: Write>(params: &ModelParameters, seed: u64, mut out: W) -> Result<()> {
    writeln!(out, "{CHECKPOINT_MAGIC}")?;
    writeln!(out, "seed {seed}")?;
    writeln!(out, "config {}", serde_json::to_string(&params.config)?)?;
    for (name, _, block) in params.blocks() {
        writeln!(out, "block {name} {}", block.len())?;
        let line: Vec<String> = block.values.iter().map(|v| format!("{v:?}")).collect();
        writeln!(out, "{}", line.join(" "))?;
    }
    Ok(())
}

pub fn read_checkpoint<R: BufRead>(input: R) -> Result<(ModelParameters, u64)> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    let mut lines = input.lines();
    let mut next = || -> Result<String> {
        lines
            .next()
            .ok_or_else(|| bad("unexpected end of file"))?
            .map_err(Error::from)
    };
    if next()? != CHECKPOINT_MAGIC {
        return Err(bad("missing PSLAB1 magic"));
    }
    let seed: u64 = next()?
        .strip_prefix("seed ")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| bad("malformed seed line"))?;
    let config: ModelConfig = serde_json::from_str(
        next()?
            .strip_prefix("config ")
            .ok_or_else(|| bad("malformed config line"))?,
    )?;
    let mut params = ModelParameters::zeros(config)?;
    for (name, _, block) in params.blocks_mut() {
        let header = next()?;
        let expected = format!("block {name} {}", block.len());
        if header != expected {
            return Err(Error::Checkpoint(format!(
                "expected {expected:?}, found {header:?}"
            )));
        }
        let values: Vec<f64> = next()?
            .split_whitespace()
            .map(|v| v.parse::<f64>().map_err(|_| bad("malformed value")))
            .collect::<Result<_>>()?;
        if values.len() != block.len() {
            return Err(Error::Checkpoint(format!(
                "block {name} has {} values",
                values.len()
            )));
        }
        block.values = values;
    }
    Ok((params, seed))
}
