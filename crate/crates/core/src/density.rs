//! Dirichlet density on a graded barycentric grid over the 3-class simplex,
//! for density plots and quadrature.
//!
//! The grid starts from the centroids of the `n²` congruent sub-triangles of
//! the simplex (a lattice `y`) and maps each through
//! `x_i = y_i^p / Σ_j y_j^p`. The map is symmetric, so the barycenter and the
//! points nearest each vertex stay where they were, while points crowd
//! toward the boundary where small concentrations put their mass. The
//! Jacobian of the map is `p² Π x_i / Π y_i`, so every point carries the
//! quadrature weight `p² Π x_i / Π y_i / (2n²)` with respect to `dx₁ dx₂`.
//! Choosing `p ≥ 1/α` keeps the integrand bounded at the edges.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dirpa::ln_multivariate_beta;
use crate::error::{domain, Result};

pub const DEFAULT_RESOLUTION: usize = 151;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityPoint {
    pub x: [f64; 3],
    pub log_density: f64,
    /// Quadrature weight with respect to Lebesgue measure on `(x₁, x₂)`.
    pub weight: f64,
}

impl DensityPoint {
    pub fn density(&self) -> f64 {
        self.log_density.exp()
    }
}

/// Grading exponent used for concentration `alpha`.
pub fn grading_exponent(alpha: f64) -> u32 {
    (1.0 / alpha).ceil().max(2.0) as u32
}

/// Centroids of the `n²` sub-triangles, as barycentric triples.
fn centroid_lattice(n: usize) -> Vec<[f64; 3]> {
    let nf = n as f64;
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n - i {
            let l = n - 1 - i - j;
            let (i, j, l) = (i as f64, j as f64, l as f64);
            out.push([
                (i + 1.0 / 3.0) / nf,
                (j + 1.0 / 3.0) / nf,
                (l + 1.0 / 3.0) / nf,
            ]);
            if l >= 1.0 {
                out.push([
                    (i + 2.0 / 3.0) / nf,
                    (j + 2.0 / 3.0) / nf,
                    (l - 1.0 / 3.0) / nf,
                ]);
            }
        }
    }
    out
}

/// Symmetric `Dir(alpha·1)` density for `K = 3` on a grid of `resolution²`
/// points. `resolution` must be `≡ 1 (mod 3)` so the barycenter is a grid
/// point.
pub fn dirichlet_density_grid(alpha: f64, resolution: usize) -> Result<Vec<DensityPoint>> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(domain(format!("alpha must be positive, got {alpha}")));
    }
    if resolution % 3 != 1 {
        return Err(domain(format!("resolution {resolution} is not 1 mod 3")));
    }
    let p = grading_exponent(alpha) as f64;
    let ln_b = ln_multivariate_beta(&[alpha; 3]);
    let cell = 1.0 / (2.0 * (resolution * resolution) as f64);
    let points = centroid_lattice(resolution)
        .into_iter()
        .map(|y| {
            let ly = y.map(f64::ln);
            let m = ly.iter().copied().fold(f64::NEG_INFINITY, f64::max) * p;
            let ln_s = m + ly.iter().map(|l| (p * l - m).exp()).sum::<f64>().ln();
            let lx = ly.map(|l| p * l - ln_s);
            let sum_lx: f64 = lx.iter().sum();
            let sum_ly: f64 = ly.iter().sum();
            DensityPoint {
                x: lx.map(f64::exp),
                log_density: (alpha - 1.0) * sum_lx - ln_b,
                weight: (2.0 * p.ln() + sum_lx - sum_ly).exp() * cell,
            }
        })
        .collect();
    Ok(points)
}

/// `Σ density · weight`; approximates the integral over the simplex.
pub fn integrate(points: &[DensityPoint]) -> f64 {
    points
        .iter()
        .map(|p| (p.log_density + p.weight.ln()).exp())
        .sum()
}

pub const DENSITY_HEADER: [&str; 6] = ["x1", "x2", "x3", "log_density", "density", "weight"];

pub fn write_density_csv<W: Write>(points: &[DensityPoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(DENSITY_HEADER)?;
    for p in points {
        w.write_record([
            p.x[0].to_string(),
            p.x[1].to_string(),
            p.x[2].to_string(),
            p.log_density.to_string(),
            p.density().to_string(),
            p.weight.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dirpa::dirichlet_log_density;

    #[test]
    fn lattice_has_every_subtriangle_once() {
        let n = 7;
        let pts = centroid_lattice(n);
        assert_eq!(pts.len(), n * n);
        for p in &pts {
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(p.iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn uniform_alpha_is_flat() {
        let grid = dirichlet_density_grid(1.0, 10).unwrap();
        for p in &grid {
            assert!((p.log_density - 2f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_direct_log_density() {
        for alpha in [0.5, 2.0, 30.0] {
            for p in dirichlet_density_grid(alpha, 31)
                .unwrap()
                .iter()
                .step_by(17)
            {
                let mut x = p.x;
                let s: f64 = x.iter().sum();
                x.iter_mut().for_each(|v| *v /= s);
                let direct = dirichlet_log_density(&x, &[alpha; 3]).unwrap();
                assert!((direct - p.log_density).abs() < 1e-9 * direct.abs().max(1.0));
            }
        }
    }

    #[test]
    fn weights_sum_to_simplex_area() {
        // density of Dir(1,1,1) is 2, the simplex has area 1/2
        for alpha in [0.05, 0.5, 1.0, 30.0] {
            let p = grading_exponent(alpha);
            let total: f64 = dirichlet_density_grid(alpha, 52)
                .unwrap()
                .iter()
                .map(|d| d.weight)
                .sum();
            assert!((total - 0.5).abs() < 1e-3, "alpha {alpha} p {p}: {total}");
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(dirichlet_density_grid(0.0, 10).is_err());
        assert!(dirichlet_density_grid(1.0, 9).is_err());
    }

    #[test]
    fn csv_has_header_and_rows() {
        let grid = dirichlet_density_grid(2.0, 4).unwrap();
        let mut buf = Vec::new();
        write_density_csv(&grid, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "x1,x2,x3,log_density,density,weight"
        );
        assert_eq!(text.lines().count(), 17);
    }
}
