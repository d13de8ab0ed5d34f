use pslab::data::Sample;
use pslab::labelspace::Label;
use pslab::model::{positional_encoding, Group, ModelConfig, ModelParameters};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn config(attention: bool) -> ModelConfig {
    ModelConfig {
        feature_dim: 2,
        embed_dim: 4,
        use_attention: attention,
        max_days: 366,
        num_classes: 3,
    }
}

fn random_sample(steps: usize, dim: usize, rng: &mut ChaCha8Rng) -> Sample {
    let mut days: Vec<u16> = rand::seq::index::sample(rng, 366, steps)
        .into_iter()
        .map(|d| d as u16 + 1)
        .collect();
    days.sort_unstable();
    let features = (0..steps * dim)
        .map(|_| rng.random_range(0.0..1.2))
        .collect();
    Sample {
        id: "r".into(),
        days,
        features,
        label: Label(0),
    }
}

/// Straight-line forward pass written from the model equations.
fn reference_forward(p: &ModelParameters, s: &Sample) -> Vec<f64> {
    let c = p.config;
    let (d, n, k, steps) = (c.feature_dim, c.embed_dim, c.num_classes, s.len());
    let w = &p.backbone.input_weight.values;
    let b = &p.backbone.input_bias.values;
    let mut h = vec![vec![0.0; n]; steps];
    for t in 0..steps {
        for r in 0..n {
            let mut e = b[r];
            for j in 0..d {
                e += w[r * d + j] * s.features[t * d + j];
            }
            let freq = (c.max_days as f64).powf((r - r % 2) as f64 / n as f64);
            let angle = s.days[t] as f64 / freq;
            e += if r % 2 == 0 { angle.sin() } else { angle.cos() };
            h[t][r] = e.tanh();
        }
    }
    let mut u = h.clone();
    if c.use_attention {
        let wq = &p.backbone.query.as_ref().unwrap().values;
        let wk = &p.backbone.key.as_ref().unwrap().values;
        let proj = |m: &[f64], x: &[f64]| -> Vec<f64> {
            (0..n)
                .map(|r| (0..n).map(|j| m[r * n + j] * x[j]).sum())
                .collect()
        };
        let q: Vec<Vec<f64>> = h.iter().map(|x| proj(wq, x)).collect();
        let kk: Vec<Vec<f64>> = h.iter().map(|x| proj(wk, x)).collect();
        for t in 0..steps {
            let scores: Vec<f64> = (0..steps)
                .map(|j| (0..n).map(|r| q[t][r] * kk[j][r]).sum::<f64>() / (n as f64).sqrt())
                .collect();
            let m = scores.iter().cloned().fold(f64::MIN, f64::max);
            let ex: Vec<f64> = scores.iter().map(|v| (v - m).exp()).collect();
            let z: f64 = ex.iter().sum();
            for r in 0..n {
                u[t][r] = (0..steps).map(|j| ex[j] / z * h[j][r]).sum();
            }
        }
    }
    let g: Vec<f64> = (0..n)
        .map(|r| u.iter().map(|ut| ut[r]).sum::<f64>() / steps as f64)
        .collect();
    (0..k)
        .map(|i| {
            p.head.bias.values[i]
                + (0..n)
                    .map(|r| p.head.weight.values[i * n + r] * g[r])
                    .sum::<f64>()
        })
        .collect()
}

#[test]
fn forward_matches_reference_implementation() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..50 {
        let cfg = ModelConfig {
            embed_dim: 2 + trial % 5,
            feature_dim: 1 + trial % 3,
            ..config(trial % 2 == 0)
        };
        let params = ModelParameters::init(cfg, &mut rng).unwrap();
        let s = random_sample(1 + trial % 7, cfg.feature_dim, &mut rng);
        let (z, _) = params.forward(&s).unwrap();
        let oracle = reference_forward(&params, &s);
        for (a, b) in z.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-10, "trial {trial}: {a} vs {b}");
        }
    }
}

/// Scalar objective `Σ_c w_c z_c` so that `∂L/∂z = w`.
fn objective(p: &ModelParameters, s: &Sample, w: &[f64]) -> f64 {
    p.forward(s)
        .unwrap()
        .0
        .iter()
        .zip(w)
        .map(|(z, c)| z * c)
        .sum()
}

fn finite_difference_check(attention: bool, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ModelParameters::init(config(attention), &mut rng).unwrap();
    let s = random_sample(3, 2, &mut rng);
    let w: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
    let (_, cache) = params.forward(&s).unwrap();
    params.zero_grad();
    params.backward(&cache, &w).unwrap();
    let analytic: Vec<Vec<f64>> = params
        .blocks()
        .iter()
        .map(|(_, _, b)| b.grad.clone())
        .collect();
    let h = 1e-5;
    for (bi, grads) in analytic.iter().enumerate() {
        for (i, &a) in grads.iter().enumerate() {
            let mut plus = params.clone();
            plus.blocks_mut()[bi].2.values[i] += h;
            let mut minus = params.clone();
            minus.blocks_mut()[bi].2.values[i] -= h;
            let numeric = (objective(&plus, &s, &w) - objective(&minus, &s, &w)) / (2.0 * h);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            assert!(
                rel < 1e-4,
                "block {bi} index {i}: analytic {a}, numeric {numeric}"
            );
        }
    }
}

#[test]
fn gradients_match_central_differences() {
    for seed in 0..10 {
        finite_difference_check(true, seed);
        finite_difference_check(false, seed);
    }
}

#[test]
fn joint_permutation_is_invariant_without_attention() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let params = ModelParameters::init(config(false), &mut rng).unwrap();
    let s = random_sample(6, 2, &mut rng);
    let (z, _) = params.forward(&s).unwrap();
    // reverse (day, feature) pairs together
    let mut rev = s.clone();
    rev.days.reverse();
    rev.features = s.features.chunks(2).rev().flatten().copied().collect();
    let (z_rev, _) = params.forward(&rev).unwrap();
    for (a, b) in z.iter().zip(&z_rev) {
        assert!((a - b).abs() < 1e-14);
    }
}

#[test]
fn unfrozen_backbone_moves_under_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut params = ModelParameters::init(config(true), &mut rng).unwrap();
    let s = random_sample(4, 2, &mut rng);
    let (_, cache) = params.forward(&s).unwrap();
    params.backward(&cache, &[1.0, -0.5, -0.5]).unwrap();
    let before = params.backbone_checksum();
    for (_, group, block) in params.blocks_mut() {
        if group == Group::Backbone {
            let grads = block.grad.clone();
            block
                .values
                .iter_mut()
                .zip(grads)
                .for_each(|(v, g)| *v -= 0.1 * g);
        }
    }
    assert_ne!(params.backbone_checksum(), before);
}

#[test]
fn activations_finite_for_extreme_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let params = ModelParameters::init(config(true), &mut rng).unwrap();
    for value in [0.0, 1.2] {
        let s = Sample {
            id: "e".into(),
            days: vec![1, 180, 366],
            features: vec![value; 6],
            label: Label(1),
        };
        let (z, cache) = params.forward(&s).unwrap();
        assert!(z.iter().chain(cache.hidden()).all(|v| v.is_finite()));
    }
    assert_eq!(positional_encoding(366, 4, 366).unwrap().len(), 4);
}
