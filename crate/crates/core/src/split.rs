//! Class-aware train/validation/test allocation and k-shot subsampling.
//!
//! Per class with `N_c` samples:
//!
//! * `N_c = 1`: the sample goes to train.
//! * `N_c = 2`: one to train, the other to validation or test, chosen by a
//!   per-class coin derived from the seed.
//! * `N_c = 3`: one to each subset.
//! * `N_c > 3`: one is reserved for each subset, then the remaining test and
//!   validation capacity is apportioned across these classes proportionally
//!   to `N_c` (test first, then validation). Leftovers go to train.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{domain, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub test_fraction: f64,
    pub validation_target: usize,
    pub seed: u64,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(domain(format!(
                "test_fraction must lie in (0, 1), got {}",
                self.test_fraction
            )));
        }
        if self.validation_target == 0 {
            return Err(domain("validation_target must be >= 1"));
        }
        Ok(())
    }

    pub fn test_target(&self, total: usize) -> usize {
        (self.test_fraction * total as f64).round() as usize
    }
}

/// Order in which the remaining capacity was filled; recorded for audit.
pub const FILL_ORDER: &str = "test_then_validation";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitResult {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// Serialized form: the three index arrays plus what produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitDocument {
    pub spec: SplitSpec,
    pub fill_order: String,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitDocument {
    pub fn new(spec: SplitSpec, split: &SplitResult) -> Self {
        Self {
            spec,
            fill_order: FILL_ORDER.to_string(),
            train: split.train.clone(),
            validation: split.validation.clone(),
            test: split.test.clone(),
        }
    }

    pub fn into_split(self) -> SplitResult {
        SplitResult {
            train: self.train,
            validation: self.validation,
            test: self.test,
        }
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Deterministic coin for the `N_c = 2` rule: `true` sends the second sample
/// to validation, `false` to test.
pub fn pair_goes_to_validation(class: usize, seed: u64) -> bool {
    splitmix64(seed ^ splitmix64(class as u64)) & 1 == 1
}

/// Splits `amount` across classes proportionally to `weights`, never giving a
/// class more than its cap. Largest-remainder rounding; ties favor the lower
/// class index.
fn apportion(amount: usize, weights: &[f64], caps: &[usize]) -> Vec<usize> {
    let n = weights.len();
    let mut out = vec![0usize; n];
    let total_cap: usize = caps.iter().sum();
    if amount >= total_cap {
        return caps.to_vec();
    }
    // water-filling on the continuous shares
    let mut share = vec![0.0f64; n];
    let mut saturated = vec![false; n];
    let mut remaining = amount as f64;
    loop {
        let free_weight: f64 = (0..n).filter(|&i| !saturated[i]).map(|i| weights[i]).sum();
        if free_weight <= 0.0 {
            break;
        }
        let mut newly = false;
        let scale = remaining / free_weight;
        for i in 0..n {
            if !saturated[i] && scale * weights[i] >= caps[i] as f64 {
                saturated[i] = true;
                share[i] = caps[i] as f64;
                remaining -= caps[i] as f64;
                newly = true;
            }
        }
        if !newly {
            for i in (0..n).filter(|&i| !saturated[i]) {
                share[i] = remaining * weights[i] / free_weight;
            }
            break;
        }
    }
    let mut assigned = 0;
    for i in 0..n {
        out[i] = (share[i].floor() as usize).min(caps[i]);
        assigned += out[i];
    }
    let mut order: Vec<usize> = (0..n).filter(|&i| out[i] < caps[i]).collect();
    order.sort_by(|&a, &b| {
        let fa = share[a] - share[a].floor();
        let fb = share[b] - share[b].floor();
        fb.partial_cmp(&fa)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    for i in order {
        if assigned >= amount {
            break;
        }
        out[i] += 1;
        assigned += 1;
    }
    out
}

pub fn class_aware_split(dataset: &Dataset, spec: &SplitSpec) -> Result<SplitResult> {
    spec.validate()?;
    if dataset.is_empty() {
        return Err(domain("cannot split an empty dataset"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut by_class = dataset.indices_by_class(0..dataset.len());
    for members in &mut by_class {
        members.shuffle(&mut rng);
    }

    let mut train = Vec::new();
    let mut validation = Vec::new();
    let mut test = Vec::new();
    let mut large = Vec::new();
    for (class, members) in by_class.iter().enumerate() {
        match members.len() {
            0 => {}
            1 => train.push(members[0]),
            2 => {
                train.push(members[0]);
                if pair_goes_to_validation(class, spec.seed) {
                    validation.push(members[1]);
                } else {
                    test.push(members[1]);
                }
            }
            _ => {
                train.push(members[0]);
                validation.push(members[1]);
                test.push(members[2]);
                if members.len() > 3 {
                    large.push(class);
                }
            }
        }
    }

    let weights: Vec<f64> = large.iter().map(|&c| by_class[c].len() as f64).collect();
    let caps: Vec<usize> = large.iter().map(|&c| by_class[c].len() - 3).collect();
    let test_extra = apportion(
        spec.test_target(dataset.len()).saturating_sub(test.len()),
        &weights,
        &caps,
    );
    let caps_left: Vec<usize> = caps.iter().zip(&test_extra).map(|(c, t)| c - t).collect();
    let val_extra = apportion(
        spec.validation_target.saturating_sub(validation.len()),
        &weights,
        &caps_left,
    );

    for (i, &class) in large.iter().enumerate() {
        let rest = &by_class[class][3..];
        let (to_test, rest) = rest.split_at(test_extra[i]);
        let (to_val, to_train) = rest.split_at(val_extra[i]);
        test.extend_from_slice(to_test);
        validation.extend_from_slice(to_val);
        train.extend_from_slice(to_train);
    }
    train.sort_unstable();
    validation.sort_unstable();
    test.sort_unstable();
    Ok(SplitResult {
        train,
        validation,
        test,
    })
}

/// Shots per class evaluated by default.
pub const K_GRID: [usize; 5] = [1, 5, 10, 20, 100];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotSpec {
    pub k: usize,
    pub seed: u64,
}

/// At most `k` training samples per class, drawn uniformly without
/// replacement. Returned sorted.
pub fn build_kshot(train: &[usize], dataset: &Dataset, spec: &FewShotSpec) -> Result<Vec<usize>> {
    if train.is_empty() {
        return Err(domain("k-shot sampling needs a non-empty train partition"));
    }
    if spec.k == 0 {
        return Err(domain("k must be >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = Vec::new();
    for members in dataset.indices_by_class(train.iter().copied()) {
        if members.len() <= spec.k {
            out.extend_from_slice(&members);
        } else {
            out.extend(
                rand::seq::index::sample(&mut rng, members.len(), spec.k)
                    .into_iter()
                    .map(|i| members[i]),
            );
        }
    }
    out.sort_unstable();
    Ok(out)
}
