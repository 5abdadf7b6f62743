//! Monte-Carlo check of Stein's identity `E[S f^T] = -E[grad f]`.

use nalgebra::Matrix2;
use rand::Rng as _;

use crate::rng::{self, Rng};
use crate::{Error, Result, Vec2};

/// Smooth compactly supported test field `exp(-1/(1-r^2)) (x - c)`,
/// `r = |x - c| / radius`, zero for `r >= 1`.
pub fn bump_field(x: Vec2, center: Vec2, radius: f64) -> Vec2 {
    let d = x - center;
    let r2 = d.norm_squared() / (radius * radius);
    if r2 >= 1.0 {
        return Vec2::zeros();
    }
    (-1.0 / (1.0 - r2)).exp() * d
}

/// Jacobian of [`bump_field`] with entry `(i, j) = d f_j / d x_i`.
pub fn bump_jacobian(x: Vec2, center: Vec2, radius: f64) -> Matrix2<f64> {
    let d = x - center;
    let r2 = d.norm_squared() / (radius * radius);
    if r2 >= 1.0 {
        return Matrix2::zeros();
    }
    let phi = (-1.0 / (1.0 - r2)).exp();
    // grad phi = -2 phi (x - c) / (radius^2 (1 - r^2)^2)
    let grad_phi = d * (-2.0 * phi / (radius * radius * (1.0 - r2).powi(2)));
    Matrix2::identity() * phi + grad_phi * d.transpose()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteinResidual {
    /// Sample mean of `S(x) f(x)^T + grad f(x)`.
    pub residual: Matrix2<f64>,
    pub frobenius: f64,
    /// Frobenius norm of the per-entry standard errors of `residual`.
    pub standard_error: f64,
    pub samples: usize,
}

pub fn stein_residual<F>(score_fn: F, samples: &[Vec2], center: Vec2, radius: f64) -> Result<SteinResidual>
where
    F: Fn(Vec2) -> Vec2,
{
    let scores: Vec<Vec2> = samples.iter().map(|&x| score_fn(x)).collect();
    stein_residual_from_scores(samples, &scores, center, radius)
}

/// [`stein_residual`] with the score already evaluated at every sample.
pub fn stein_residual_from_scores(samples: &[Vec2], scores: &[Vec2], center: Vec2, radius: f64) -> Result<SteinResidual> {
    if samples.len() < 100 {
        return Err(Error::Statistics(format!(
            "Stein residual needs at least 100 samples, got {}",
            samples.len()
        )));
    }
    if scores.len() != samples.len() {
        return Err(Error::Shape(format!("{} scores for {} samples", scores.len(), samples.len())));
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::Config(format!("bump radius must be positive, got {radius}")));
    }
    let n = samples.len() as f64;
    let mut sum = Matrix2::zeros();
    let mut sum_sq = Matrix2::zeros();
    for (&x, &score) in samples.iter().zip(scores) {
        let f = bump_field(x, center, radius);
        let term = if f == Vec2::zeros() {
            Matrix2::zeros()
        } else {
            score * f.transpose() + bump_jacobian(x, center, radius)
        };
        sum += term;
        sum_sq += term.component_mul(&term);
    }
    let mean = sum / n;
    let var = (sum_sq / n - mean.component_mul(&mean)) * (n / (n - 1.0));
    let se2: f64 = var.iter().map(|v| v.max(0.0) / n).sum();
    Ok(SteinResidual { residual: mean, frobenius: mean.norm(), standard_error: se2.sqrt(), samples: samples.len() })
}

/// Draws from `(1/N) sum_i Normal(x_i, sigma^2 I)`.
pub fn sample_mixture(points: &[Vec2], sigma: f64, n: usize, rng: &mut Rng) -> Vec<Vec2> {
    (0..n)
        .map(|_| points[rng.random_range(0..points.len())] + sigma * rng::normal2(rng))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::score::oracle_mixture_score;

    #[test]
    fn jacobian_matches_finite_differences() {
        let c = Vec2::new(0.2, -0.1);
        let h = 1e-6;
        for x in [Vec2::new(0.5, 0.3), Vec2::new(-0.4, 0.1), Vec2::new(0.2, 0.6)] {
            let j = bump_jacobian(x, c, 0.8);
            for i in 0..2 {
                let mut e = Vec2::zeros();
                e[i] = h;
                let df = (bump_field(x + e, c, 0.8) - bump_field(x - e, c, 0.8)) / (2.0 * h);
                for k in 0..2 {
                    assert!((j[(i, k)] - df[k]).abs() < 1e-8, "{i}{k}: {} vs {}", j[(i, k)], df[k]);
                }
            }
        }
    }

    #[test]
    fn needs_enough_samples() {
        let xs = vec![Vec2::zeros(); 99];
        assert!(matches!(stein_residual(|_| Vec2::zeros(), &xs, Vec2::zeros(), 1.0), Err(Error::Statistics(_))));
    }

    #[test]
    fn zero_score_fails_identity_on_dense_region() {
        let pts = vec![Vec2::zeros()];
        let mut r = rng::seeded(1);
        let xs = sample_mixture(&pts, 0.5, 20_000, &mut r);
        let res = stein_residual(|_| Vec2::zeros(), &xs, Vec2::zeros(), 0.6).unwrap();
        assert!(res.frobenius > 10.0 * res.standard_error, "{res:?}");
    }

    #[test]
    fn bump_far_from_support_gives_zero() {
        let pts = vec![Vec2::new(1.0, 0.0), Vec2::new(-1.0, 0.0)];
        let mut r = rng::seeded(2);
        let xs = sample_mixture(&pts, 0.2, 5_000, &mut r);
        // 6 sigma away from both components, plus the bump radius
        let res = stein_residual(|x| oracle_mixture_score(&pts, 0.2, x), &xs, Vec2::new(0.0, 3.0), 0.5).unwrap();
        assert_eq!(res.frobenius, 0.0);
    }
}
