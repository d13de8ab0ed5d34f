//! Imbalance diagnostics: class histograms, the Gini coefficient and the
//! Bhattacharyya distance between two label distributions.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::labelspace::Label;

/// Per-class sample counts over a fixed label space.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassHistogram {
    counts: Vec<u64>,
}

impl ClassHistogram {
    pub fn new(counts: Vec<u64>) -> Result<Self> {
        if counts.is_empty() {
            return Err(domain("histogram needs at least one class"));
        }
        if counts.iter().all(|&c| c == 0) {
            return Err(domain("histogram has no mass"));
        }
        Ok(Self { counts })
    }

    pub fn from_labels<I>(num_classes: usize, labels: I) -> Result<Self>
    where
        I: IntoIterator<Item = Label>,
    {
        let mut counts = vec![0u64; num_classes];
        for label in labels {
            let slot = counts.get_mut(label.index()).ok_or_else(|| {
                domain(format!(
                    "label {} outside [0, {num_classes})",
                    label.index()
                ))
            })?;
            *slot += 1;
        }
        Self::new(counts)
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn distribution(&self) -> Vec<f64> {
        let total = self.total() as f64;
        self.counts.iter().map(|&c| c as f64 / total).collect()
    }
}

/// Gini coefficient in its population mean-difference form,
/// `Σ_i Σ_j |x_i − x_j| / (2 K² μ)`.
///
/// Evaluated in `O(K log K)` via the sorted-rank identity
/// `Σ_i Σ_j |x_i − x_j| = 2 Σ_i (2i − K + 1) x_(i)`.
pub fn gini_coefficient(hist: &ClassHistogram) -> f64 {
    let mut sorted: Vec<u64> = hist.counts.clone();
    sorted.sort_unstable();
    let k = sorted.len() as f64;
    let total: f64 = sorted.iter().map(|&c| c as f64).sum();
    let weighted: f64 = sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| (2.0 * i as f64 - k + 1.0) * x as f64)
        .sum();
    // 2·weighted / (2 K² μ) with μ = total / K
    weighted / (k * total)
}

/// Bhattacharyya distance, with total disjointness kept distinct from any
/// finite value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Distance {
    Finite(f64),
    Infinite,
}

impl Distance {
    pub fn as_f64(self) -> f64 {
        match self {
            Distance::Finite(d) => d,
            Distance::Infinite => f64::INFINITY,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, Distance::Infinite)
    }
}

impl fmt::Display for Distance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Distance::Finite(d) => write!(f, "{d}"),
            Distance::Infinite => f.write_str("inf"),
        }
    }
}

/// Bhattacharyya coefficient `Σ_c √(p_c q_c)` of the normalized histograms.
pub fn bhattacharyya_coefficient(p: &ClassHistogram, q: &ClassHistogram) -> Result<f64> {
    if p.num_classes() != q.num_classes() {
        return Err(domain(format!(
            "histograms cover {} and {} classes",
            p.num_classes(),
            q.num_classes()
        )));
    }
    let (pt, qt) = (p.total() as f64, q.total() as f64);
    let bc: f64 = p
        .counts
        .iter()
        .zip(&q.counts)
        .map(|(&a, &b)| ((a as f64 / pt) * (b as f64 / qt)).sqrt())
        .sum();
    // rounding can push identical distributions a hair above 1
    Ok(bc.min(1.0))
}

pub fn bhattacharyya_distance(p: &ClassHistogram, q: &ClassHistogram) -> Result<Distance> {
    let bc = bhattacharyya_coefficient(p, q)?;
    if bc <= 0.0 {
        return Ok(Distance::Infinite);
    }
    Ok(Distance::Finite(-bc.ln()))
}

/// Gini of a histogram plus, optionally, its distance to a reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImbalanceReport {
    pub gini: f64,
    pub bhattacharyya: Option<Distance>,
}

impl ImbalanceReport {
    pub fn new(hist: &ClassHistogram, reference: Option<&ClassHistogram>) -> Result<Self> {
        let bhattacharyya = reference
            .map(|r| bhattacharyya_distance(hist, r))
            .transpose()?;
        Ok(Self {
            gini: gini_coefficient(hist),
            bhattacharyya,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn hist(c: &[u64]) -> ClassHistogram {
        ClassHistogram::new(c.to_vec()).unwrap()
    }

    fn gini_brute(counts: &[u64]) -> f64 {
        let k = counts.len() as f64;
        let mu = counts.iter().sum::<u64>() as f64 / k;
        let mut acc = 0.0;
        for &a in counts {
            for &b in counts {
                acc += (a as f64 - b as f64).abs();
            }
        }
        acc / (2.0 * k * k * mu)
    }

    #[test]
    fn balanced_is_zero() {
        assert_eq!(gini_coefficient(&hist(&[10, 10, 10, 10])), 0.0);
    }

    #[test]
    fn single_mass_class() {
        let g = gini_coefficient(&hist(&[100, 0, 0, 0]));
        assert!((g - 0.75).abs() < 1e-15, "{g}");
    }

    #[test]
    fn gini_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let counts: Vec<u64> = (0..8).map(|_| rng.random_range(0..1000)).collect();
            if counts.iter().all(|&c| c == 0) {
                continue;
            }
            let fast = gini_coefficient(&hist(&counts));
            assert!((fast - gini_brute(&counts)).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_histogram_rejected() {
        assert!(ClassHistogram::new(vec![0, 0, 0]).is_err());
        assert!(ClassHistogram::new(vec![]).is_err());
    }

    #[test]
    fn bhattacharyya_examples() {
        let d = bhattacharyya_distance(&hist(&[3, 7, 1]), &hist(&[3, 7, 1])).unwrap();
        assert_eq!(d, Distance::Finite(0.0));

        let d = bhattacharyya_distance(&hist(&[1, 1]), &hist(&[9, 1])).unwrap();
        let expected = -(0.45f64.sqrt() + 0.05f64.sqrt()).ln();
        assert!((d.as_f64() - expected).abs() < 1e-15);
        assert!((d.as_f64() - 0.11157).abs() < 1e-5);

        let d = bhattacharyya_distance(&hist(&[1, 0]), &hist(&[0, 1])).unwrap();
        assert!(d.is_infinite());
        assert_eq!(d.to_string(), "inf");
    }

    #[test]
    fn mismatched_k_is_error() {
        assert!(bhattacharyya_distance(&hist(&[1, 1]), &hist(&[1, 1, 1])).is_err());
    }

    proptest! {
        #[test]
        fn gini_scale_and_permutation_invariant(
            counts in proptest::collection::vec(0u64..500, 2..12),
            scale in 1u64..20,
            rot in 0usize..12,
        ) {
            prop_assume!(counts.iter().any(|&c| c > 0));
            let g = gini_coefficient(&hist(&counts));
            let scaled: Vec<u64> = counts.iter().map(|c| c * scale).collect();
            prop_assert!((g - gini_coefficient(&hist(&scaled))).abs() < 1e-12);
            let mut rotated = counts.clone();
            rotated.rotate_left(rot % counts.len());
            prop_assert!((g - gini_coefficient(&hist(&rotated))).abs() < 1e-12);
            let k = counts.len() as f64;
            prop_assert!(g >= -1e-15 && g <= (k - 1.0) / k + 1e-12);
        }

        #[test]
        fn bhattacharyya_symmetric_nonnegative(
            pairs in proptest::collection::vec((0u64..100, 0u64..100), 2..10),
        ) {
            let p: Vec<u64> = pairs.iter().map(|x| x.0).collect();
            let q: Vec<u64> = pairs.iter().map(|x| x.1).collect();
            prop_assume!(p.iter().any(|&c| c > 0) && q.iter().any(|&c| c > 0));
            let (p, q) = (hist(&p), hist(&q));
            let bc = bhattacharyya_coefficient(&p, &q).unwrap();
            prop_assert!((0.0..=1.0).contains(&bc));
            let pq = bhattacharyya_distance(&p, &q).unwrap().as_f64();
            let qp = bhattacharyya_distance(&q, &p).unwrap().as_f64();
            prop_assert!(pq >= 0.0);
            prop_assert!(pq == qp || (pq - qp).abs() < 1e-12);
        }
    }
}
