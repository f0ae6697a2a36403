//! Geometric median and mean absolute deviation of sampled point clouds.
//!
//! Points are stored row-major: point `i` is `points[i*dim..(i+1)*dim]`.
//! The median is found with the Weiszfeld iteration, modified at data points
//! (Vardi-Zhang) so that an iterate sitting on a sample either certifies
//! optimality through the subgradient condition or steps off it. The
//! residual reported is the distance from zero to the subdifferential of
//! the mean-distance objective, scaled by the total weight: away from the
//! data this is `|(1/N) sum (p_i - mu)/|p_i - mu||`, and at a data point the
//! coincident terms count as zero.

use crate::error::{Error, Result};
use crate::model::norm;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MedianOptions {
    /// Residual tolerance on the optimality condition.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for MedianOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 10_000 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MedianResult {
    pub mu: Vec<f64>,
    /// Mean distance of the points from `mu`.
    pub mad: f64,
    pub iterations: usize,
    pub residual: f64,
}

/// Middle order statistic; the average of the two middle values for even counts.
pub fn scalar_median(samples: &[f64]) -> Result<f64> {
    weighted_scalar_median(samples, None)
}

fn weighted_scalar_median(values: &[f64], weights: Option<&[f64]>) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty);
    }
    let weight = |i: usize| weights.map_or(1.0, |w| w[i]);
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let half = 0.5 * (0..values.len()).map(weight).sum::<f64>();
    let mut cumulative = 0.0;
    for (pos, &i) in order.iter().enumerate() {
        cumulative += weight(i);
        if cumulative > half {
            return Ok(values[i]);
        }
        if cumulative == half {
            // flat segment of the L1 objective: take its midpoint
            let next = order[pos + 1..].iter().find(|&&j| weight(j) > 0.0).map_or(values[i], |&j| values[j]);
            return Ok(0.5 * (values[i] + next));
        }
    }
    Ok(values[order[order.len() - 1]])
}

/// Mean distance `(1/N) sum |p_i - mu|`.
pub fn mad_about(points: &[f64], dim: usize, mu: &[f64]) -> f64 {
    weighted_mad_about(points, None, dim, mu)
}

/// Weighted mean distance `sum w_i |p_i - mu| / sum w_i`.
pub fn weighted_mad_about(points: &[f64], weights: Option<&[f64]>, dim: usize, mu: &[f64]) -> f64 {
    let mut total = 0.0;
    let mut weight_sum = 0.0;
    for (i, p) in points.chunks_exact(dim).enumerate() {
        let w = weights.map_or(1.0, |w| w[i]);
        total += w * distance(p, mu);
        weight_sum += w;
    }
    total / weight_sum
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Unscaled distance from zero to the subdifferential of `sum w_i |p_i - mu|`.
fn subgradient_residual(points: &[f64], weights: Option<&[f64]>, dim: usize, mu: &[f64], coincide: f64) -> f64 {
    let mut pull = vec![0.0; dim];
    let mut coincident = 0.0;
    for (i, p) in points.chunks_exact(dim).enumerate() {
        let w = weights.map_or(1.0, |w| w[i]);
        let d = distance(p, mu);
        if d < coincide {
            coincident += w;
        } else if w > 0.0 {
            for j in 0..dim {
                pull[j] += w * (p[j] - mu[j]) / d;
            }
        }
    }
    (norm(&pull) - coincident).max(0.0)
}

/// Geometric median of equally weighted points.
pub fn geometric_median(points: &[f64], dim: usize, opts: &MedianOptions) -> Result<MedianResult> {
    weighted_geometric_median(points, None, dim, opts)
}

/// Geometric median with nonnegative per-point weights (quadrature weights, typically).
pub fn weighted_geometric_median(
    points: &[f64],
    weights: Option<&[f64]>,
    dim: usize,
    opts: &MedianOptions,
) -> Result<MedianResult> {
    if dim == 0 || !points.len().is_multiple_of(dim) {
        return Err(Error::Dimension(format!("{} coordinates do not split into points of dim {dim}", points.len())));
    }
    let count = points.len() / dim;
    if count == 0 {
        return Err(Error::Empty);
    }
    if let Some(w) = weights {
        if w.len() != count || w.iter().any(|v| !(*v >= 0.0)) || w.iter().sum::<f64>() <= 0.0 {
            return Err(Error::InvalidArgument("median weights must be nonnegative, one per point".into()));
        }
    }
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidArgument(format!("median tolerance {} must be positive", opts.tol)));
    }

    let mut mu: Vec<f64> = (0..dim)
        .map(|j| {
            let column: Vec<f64> = points.chunks_exact(dim).map(|p| p[j]).collect();
            weighted_scalar_median(&column, weights)
        })
        .collect::<Result<_>>()?;

    let scale = points.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let coincide = 1e-14 * scale;
    let weight_sum: f64 = weights.map_or(count as f64, |w| w.iter().sum());

    let mut numerator = vec![0.0; dim];
    let mut pull = vec![0.0; dim];
    let mut best: Option<MedianResult> = None;

    let mut last_step = f64::INFINITY;
    for iteration in 0..=opts.max_iter {
        numerator.fill(0.0);
        pull.fill(0.0);
        let mut denominator = 0.0;
        let mut coincident = 0.0;
        let mut nearest = (f64::INFINITY, 0usize);
        for (i, p) in points.chunks_exact(dim).enumerate() {
            let w = weights.map_or(1.0, |w| w[i]);
            if w == 0.0 {
                continue;
            }
            let d = distance(p, &mu);
            if d < nearest.0 {
                nearest = (d, i);
            }
            if d < coincide {
                coincident += w;
                continue;
            }
            let k = w / d;
            denominator += k;
            for j in 0..dim {
                numerator[j] += k * p[j];
                pull[j] += k * (p[j] - mu[j]);
            }
        }
        let pull_norm = norm(&pull);
        let residual = (pull_norm - coincident).max(0.0) / weight_sum;

        if best.as_ref().is_none_or(|b| residual < b.residual) {
            best = Some(MedianResult { mu: mu.clone(), mad: f64::NAN, iterations: iteration, residual });
        }
        if residual <= opts.tol || denominator == 0.0 {
            let mad = weighted_mad_about(points, weights, dim, &mu);
            return Ok(MedianResult { mu, mad, iterations: iteration, residual });
        }
        if iteration == opts.max_iter {
            break;
        }

        // Weiszfeld approaches an optimal sample only sublinearly, so test it directly.
        if coincident == 0.0 && nearest.0 < 100.0 * last_step {
            let candidate = &points[nearest.1 * dim..(nearest.1 + 1) * dim];
            let candidate_residual = subgradient_residual(points, weights, dim, candidate, coincide) / weight_sum;
            if candidate_residual <= opts.tol {
                let mu = candidate.to_vec();
                let mad = weighted_mad_about(points, weights, dim, &mu);
                return Ok(MedianResult { mu, mad, iterations: iteration + 1, residual: candidate_residual });
            }
        }

        let step_weight = if coincident > 0.0 { (coincident / pull_norm).min(1.0) } else { 0.0 };
        let mut step = 0.0;
        for j in 0..dim {
            let target = numerator[j] / denominator;
            let next = (1.0 - step_weight) * target + step_weight * mu[j];
            step += (next - mu[j]) * (next - mu[j]);
            mu[j] = next;
        }
        last_step = step.sqrt();
    }

    let mut best = best.expect("at least one iteration runs");
    best.mad = weighted_mad_about(points, weights, dim, &best.mu);
    Err(Error::NoConverge { best })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn scalar_median_conventions() {
        assert_eq!(scalar_median(&[1.0, 2.0, 10.0]).unwrap(), 2.0);
        assert_eq!(scalar_median(&[4.0, 1.0, 3.0, 2.0]).unwrap(), 2.5);
        assert!(matches!(scalar_median(&[]), Err(Error::Empty)));
    }

    #[test]
    fn scalar_median_of_monotone_samples_is_midpoint_value() {
        let n = 4096;
        let scale = 1.0 / (1.0 - (-2.0f64).exp());
        let samples: Vec<f64> = (0..n).map(|k| (-(2.0 * k as f64 / n as f64)).exp() * scale).collect();
        let want = (-1.0f64).exp() * scale;
        let got = scalar_median(&samples).unwrap();
        assert!((got - want).abs() < 1e-3);
        assert!((want - 0.42546).abs() < 1e-5);
    }

    #[test]
    fn weighted_scalar_median_flat_segment() {
        // weights 1/2, 1, 1/2: half the mass on each side of the middle value
        let m = weighted_scalar_median(&[0.0, 1.0, 5.0], Some(&[0.5, 1.0, 0.5])).unwrap();
        assert_eq!(m, 1.0);
        let m = weighted_scalar_median(&[0.0, 1.0, 5.0, 7.0], Some(&[1.0, 1.0, 1.0, 1.0])).unwrap();
        assert_eq!(m, 3.0);
    }

    #[test]
    fn all_points_equal() {
        let pts = [2.0, -1.0, 2.0, -1.0, 2.0, -1.0];
        let r = geometric_median(&pts, 2, &MedianOptions::default()).unwrap();
        assert_eq!(r.mu, vec![2.0, -1.0]);
        assert_eq!(r.mad, 0.0);
    }

    #[test]
    fn equilateral_triangle() {
        let pts: Vec<f64> = (0..3)
            .flat_map(|k| {
                let a = 2.0 * std::f64::consts::PI * k as f64 / 3.0 + 0.3;
                [a.cos(), a.sin()]
            })
            .collect();
        let opts = MedianOptions::default();
        let r = geometric_median(&pts, 2, &opts).unwrap();
        assert!(r.mu.iter().all(|v| v.abs() < 1e-9), "{:?}", r.mu);
        assert!(r.residual <= opts.tol);
        assert!((r.mad - 1.0).abs() < 1e-9);
    }

    #[test]
    fn one_dimensional_reduces_to_scalar_median() {
        let r = geometric_median(&[1.0, 2.0, 10.0], 1, &MedianOptions::default()).unwrap();
        assert_eq!(r.mu, vec![2.0]);
        assert!((r.mad - 3.0).abs() < 1e-15);
    }

    #[test]
    fn mad_about_arbitrary_points() {
        assert_eq!(mad_about(&[1.5, -2.0], 2, &[1.5, -2.0]), 0.0);
        let at3 = mad_about(&[1.0, 2.0, 10.0], 1, &[3.0]);
        assert!((at3 - 10.0 / 3.0).abs() < 1e-15);
        assert!(at3 > 3.0);
    }

    #[test]
    fn obtuse_vertex_is_optimal() {
        // the angle at the origin exceeds 120 degrees, so the vertex is the median
        let pts = [0.0, 0.0, 1.0, 0.1, -1.0, 0.1];
        let r = geometric_median(&pts, 2, &MedianOptions::default()).unwrap();
        assert!(r.mu[0].abs() < 1e-12 && r.mu[1].abs() < 1e-12, "{:?}", r.mu);
        assert_eq!(r.residual, 0.0);
    }

    #[test]
    fn no_converge_carries_best_iterate() {
        let pts = [0.0, 0.0, 3.0, 0.5, 1.0, 4.0, -2.0, 1.0];
        let opts = MedianOptions { tol: 1e-300, max_iter: 3 };
        match geometric_median(&pts, 2, &opts) {
            Err(Error::NoConverge { best }) => {
                assert!(best.residual > 0.0 && best.mad.is_finite());
                assert!(best.iterations <= 3);
            }
            other => panic!("expected no-converge, got {other:?}"),
        }
    }

    #[test]
    fn random_cloud_is_locally_minimal() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pts: Vec<f64> = (0..400).map(|_| rng.random_range(-1.0..1.0)).collect();
        let r = geometric_median(&pts, 2, &MedianOptions::default()).unwrap();
        for _ in 0..100 {
            let a: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let probe = [r.mu[0] + 1e-3 * a.cos(), r.mu[1] + 1e-3 * a.sin()];
            assert!(r.mad <= mad_about(&pts, 2, &probe) + 1e-12);
        }
    }

    #[test]
    fn collinear_cloud_converges() {
        // points on a tilted line with an even count: the minimizers form a segment
        let pts: Vec<f64> = (0..200)
            .flat_map(|k| {
                let s = ((k * 37) % 200) as f64 / 17.0;
                [1.0 + 0.6 * s, -2.0 + 0.8 * s]
            })
            .collect();
        let r = geometric_median(&pts, 2, &MedianOptions::default()).unwrap();
        let s = (r.mu[0] - 1.0) / 0.6;
        assert!((r.mu[1] - (-2.0 + 0.8 * s)).abs() < 1e-9);
        let sorted: Vec<f64> = {
            let mut v: Vec<f64> = (0..200).map(|k| ((k * 37) % 200) as f64 / 17.0).collect();
            v.sort_by(f64::total_cmp);
            v
        };
        assert!(s >= sorted[99] - 1e-9 && s <= sorted[100] + 1e-9);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::Rng;

        fn cloud(dim: usize) -> impl Strategy<Value = Vec<f64>> {
            (3usize..40).prop_flat_map(move |n| proptest::collection::vec(-5.0f64..5.0, n * dim))
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn minimal_under_perturbation(pts in cloud(2), seed in any::<u64>()) {
                let r = geometric_median(&pts, 2, &MedianOptions::default()).unwrap();
                let spread = pts.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                for _ in 0..100 {
                    let a: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                    let step = 1e-3 * spread;
                    let probe = [r.mu[0] + step * a.cos(), r.mu[1] + step * a.sin()];
                    prop_assert!(r.mad <= mad_about(&pts, 2, &probe) + 1e-9);
                }
            }

            #[test]
            fn translation_equivariant(pts in cloud(2), cx in -10.0f64..10.0, cy in -10.0f64..10.0) {
                let opts = MedianOptions::default();
                let a = geometric_median(&pts, 2, &opts).unwrap();
                let shifted: Vec<f64> = pts.chunks_exact(2).flat_map(|p| [p[0] + cx, p[1] + cy]).collect();
                let b = geometric_median(&shifted, 2, &opts).unwrap();
                prop_assert!((a.mad - b.mad).abs() < 1e-7 * (1.0 + a.mad));
                // the argmin can be non-unique only for collinear clouds, which random data avoids
                prop_assert!((a.mu[0] + cx - b.mu[0]).abs() < 1e-5);
                prop_assert!((a.mu[1] + cy - b.mu[1]).abs() < 1e-5);
            }

            #[test]
            fn scale_equivariant(pts in cloud(2), alpha in prop_oneof![-4.0f64..-0.25, 0.25f64..4.0]) {
                let opts = MedianOptions::default();
                let a = geometric_median(&pts, 2, &opts).unwrap();
                let scaled: Vec<f64> = pts.iter().map(|v| v * alpha).collect();
                let b = geometric_median(&scaled, 2, &opts).unwrap();
                prop_assert!((a.mad * alpha.abs() - b.mad).abs() < 1e-7 * (1.0 + b.mad));
                prop_assert!((a.mu[0] * alpha - b.mu[0]).abs() < 1e-5 * (1.0 + alpha.abs()));
                prop_assert!((a.mu[1] * alpha - b.mu[1]).abs() < 1e-5 * (1.0 + alpha.abs()));
            }

            #[test]
            fn odd_count_1d_matches_scalar_median(half in 1usize..30, seed in any::<u64>()) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let pts: Vec<f64> = (0..2 * half + 1).map(|_| rng.random_range(-3.0..3.0)).collect();
                let r = geometric_median(&pts, 1, &MedianOptions::default()).unwrap();
                prop_assert_eq!(r.mu[0], scalar_median(&pts).unwrap());
            }
        }
    }
}
