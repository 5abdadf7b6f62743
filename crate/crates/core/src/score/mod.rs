//! Score learning by denoising score matching.
//!
//! The forward perturbation is `x = z + sigma(t) eps` with a geometric noise
//! schedule; the regression target is the conditional score `-eps / sigma(t)`.
//! For a finite waypoint set the population minimizer at noise level `sigma`
//! is the score of an isotropic Gaussian mixture centred on the waypoints,
//! available in closed form from [`oracle_mixture_score`].

mod stein;
mod train;

pub use stein::{bump_field, bump_jacobian, sample_mixture, stein_residual, stein_residual_from_scores, SteinResidual};
pub use train::{train_score, ScoreTrainConfig, ScoreTraining};

use crate::nn::{Matrix, Mlp};
use crate::{Error, Result, Vec2, NORM_FLOOR};

/// Geometric schedule `sigma(t) = sigma_min^(1-t) * sigma_max^t` on `t in [0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSchedule {
    sigma_min: f64,
    sigma_max: f64,
}

impl NoiseSchedule {
    pub fn new(sigma_min: f64, sigma_max: f64) -> Result<Self> {
        if !(sigma_min.is_finite() && sigma_max.is_finite() && 0.0 < sigma_min && sigma_min < sigma_max) {
            return Err(Error::Config(format!(
                "noise schedule needs 0 < sigma_min < sigma_max, got {sigma_min} and {sigma_max}"
            )));
        }
        Ok(Self { sigma_min, sigma_max })
    }

    pub fn sigma_min(&self) -> f64 {
        self.sigma_min
    }

    pub fn sigma_max(&self) -> f64 {
        self.sigma_max
    }

    pub fn sigma(&self, t: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::Domain(format!("t = {t} is outside [0, 1]")));
        }
        Ok(self.sigma_unchecked(t))
    }

    pub(crate) fn sigma_unchecked(&self, t: f64) -> f64 {
        if t == 0.0 {
            return self.sigma_min;
        }
        if t == 1.0 {
            return self.sigma_max;
        }
        self.sigma_min.powf(1.0 - t) * self.sigma_max.powf(t)
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self { sigma_min: 0.25, sigma_max: 0.3 }
    }
}

/// `z + sigma(t) eps`.
pub fn perturb(schedule: &NoiseSchedule, z: Vec2, t: f64, eps: Vec2) -> Result<Vec2> {
    Ok(z + schedule.sigma(t)? * eps)
}

/// Conditional score of the perturbation kernel, `-eps / sigma(t)`.
pub fn dsm_target(schedule: &NoiseSchedule, eps: Vec2, t: f64) -> Result<Vec2> {
    let sigma = schedule.sigma(t)?;
    if sigma < NORM_FLOOR {
        return Err(Error::Numeric(format!("sigma({t}) = {sigma} is below {NORM_FLOOR}")));
    }
    Ok(-eps / sigma)
}

/// Exact score of `(1/N) sum_i Normal(x; x_i, sigma^2 I)`.
pub fn oracle_mixture_score(points: &[Vec2], sigma: f64, x: Vec2) -> Vec2 {
    let inv = 1.0 / (2.0 * sigma * sigma);
    let max = points
        .iter()
        .map(|p| -(x - p).norm_squared() * inv)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    let mut acc = Vec2::zeros();
    for p in points {
        let w = (-(x - p).norm_squared() * inv - max).exp();
        total += w;
        acc += w * (p - x);
    }
    acc / (total * sigma * sigma)
}

/// `log p(x)` for the same Gaussian mixture as [`oracle_mixture_score`].
pub fn mixture_log_density(points: &[Vec2], sigma: f64, x: Vec2) -> f64 {
    let inv = 1.0 / (2.0 * sigma * sigma);
    let logits = points.iter().map(|p| -(x - p).norm_squared() * inv);
    let max = logits.clone().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.map(|l| (l - max).exp()).sum();
    max + sum.ln() - (points.len() as f64).ln() - (2.0 * std::f64::consts::PI * sigma * sigma).ln()
}

/// `tanh(k_s |S|) S / |S|`, or zero when `|S|` is below the norm floor.
pub fn normalize_score(score: Vec2, k_s: f64) -> Vec2 {
    let n = score.norm();
    if n < NORM_FLOOR {
        return Vec2::zeros();
    }
    // tanh saturates to exactly 1.0 in f64 for large arguments; keep the
    // result strictly inside the unit disk.
    score * ((k_s * n).tanh().min(SATURATION) / n)
}

const SATURATION: f64 = 1.0 - 1e-15;

/// A trained score network `S(x, t)` with the schedule it was trained under.
/// The network input is `(x, y, t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreModel {
    pub mlp: Mlp,
    pub schedule: NoiseSchedule,
}

impl ScoreModel {
    pub fn new(mlp: Mlp, schedule: NoiseSchedule) -> Result<Self> {
        if mlp.input_dim() != 3 || mlp.output_dim() != 2 {
            return Err(Error::Shape(format!(
                "score network must map 3 inputs to 2 outputs, got {:?}",
                mlp.sizes()
            )));
        }
        Ok(Self { mlp, schedule })
    }

    pub fn eval(&self, x: Vec2, t: f64) -> Result<Vec2> {
        Ok(self.eval_batch(&[x], t)?[0])
    }

    pub fn eval_batch(&self, xs: &[Vec2], t: f64) -> Result<Vec<Vec2>> {
        let mut input = Matrix::zeros(xs.len(), 3);
        for (i, x) in xs.iter().enumerate() {
            input.row_mut(i).copy_from_slice(&[x.x, x.y, t]);
        }
        let out = self.mlp.forward(&input)?;
        Ok((0..xs.len()).map(|i| Vec2::new(out.row(i)[0], out.row(i)[1])).collect())
    }
}

/// Cosine similarity, zero when either vector is below the norm floor.
pub fn cosine(a: Vec2, b: Vec2) -> f64 {
    let (na, nb) = (a.norm(), b.norm());
    if na < NORM_FLOOR || nb < NORM_FLOOR {
        return 0.0;
    }
    (a.dot(&b) / (na * nb)).clamp(-1.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;

    fn schedule() -> NoiseSchedule {
        NoiseSchedule::new(0.01, 0.5).unwrap()
    }

    #[test]
    fn sigma_endpoints_and_midpoint() {
        let s = schedule();
        assert_eq!(s.sigma(0.0).unwrap(), 0.01);
        assert_eq!(s.sigma(1.0).unwrap(), 0.5);
        assert!((s.sigma(0.5).unwrap() - 0.005f64.sqrt()).abs() < 1e-15);
        assert!((s.sigma(0.5).unwrap() - 0.070_711).abs() < 1e-6);
        assert!(matches!(s.sigma(1.5), Err(Error::Domain(_))));
        assert!(matches!(s.sigma(-1e-9), Err(Error::Domain(_))));
    }

    #[test]
    fn schedule_validation() {
        assert!(NoiseSchedule::new(0.5, 0.01).is_err());
        assert!(NoiseSchedule::new(0.0, 1.0).is_err());
        assert!(NoiseSchedule::new(0.1, 0.1).is_err());
    }

    #[test]
    fn perturb_examples() {
        let s = schedule();
        assert_eq!(perturb(&s, Vec2::zeros(), 0.3, Vec2::zeros()).unwrap(), Vec2::zeros());
        // sigma(1) = 0.5
        let x = perturb(&s, Vec2::new(1.0, 2.0), 1.0, Vec2::new(2.0, -2.0)).unwrap();
        assert_eq!(x, Vec2::new(2.0, 1.0));
        let z = Vec2::new(0.123, -4.5);
        assert_eq!(perturb(&s, z, 0.77, Vec2::zeros()).unwrap(), z);
    }

    #[test]
    fn dsm_target_examples() {
        let s = schedule();
        assert_eq!(dsm_target(&s, Vec2::zeros(), 0.4).unwrap(), Vec2::zeros());
        assert_eq!(dsm_target(&s, Vec2::new(1.0, 0.0), 1.0).unwrap(), Vec2::new(-2.0, 0.0));
        let tiny = NoiseSchedule::new(1e-14, 1e-13).unwrap();
        assert!(matches!(dsm_target(&tiny, Vec2::new(1.0, 0.0), 0.0), Err(Error::Numeric(_))));
    }

    #[test]
    fn dsm_target_matches_conditional_score() {
        // -eps / sigma and -(x - z) / sigma^2 agree up to rounding in x - z.
        let s = schedule();
        let mut r = rng::seeded(3);
        for _ in 0..1000 {
            let z = rng::normal2(&mut r);
            let eps = rng::normal2(&mut r);
            let t: f64 = rand::Rng::random(&mut r);
            let x = perturb(&s, z, t, eps).unwrap();
            let sigma = s.sigma(t).unwrap();
            let a = dsm_target(&s, eps, t).unwrap();
            let b = -(x - z) / (sigma * sigma);
            assert!((a - b).norm() <= 1e-12 * a.norm().max(1.0) / sigma, "{a} vs {b}");
        }
    }

    #[test]
    fn oracle_examples() {
        let z = Vec2::new(0.3, -1.2);
        let x = Vec2::new(2.0, 0.5);
        assert!((oracle_mixture_score(&[z], 0.7, x) - (z - x) / 0.49).norm() < 1e-12);

        let pair = [Vec2::new(1.0, 0.0), Vec2::new(-1.0, 0.0)];
        assert!(oracle_mixture_score(&pair, 1.0, Vec2::zeros()).norm() < 1e-15);
        // w for (-1,0) is e^-2 / (1 + e^-2); its component score is (-2, 0).
        let w = (-2.0f64).exp() / (1.0 + (-2.0f64).exp());
        assert!((w - 0.119_20).abs() < 1e-5);
        let s = oracle_mixture_score(&pair, 1.0, Vec2::new(1.0, 0.0));
        assert!((s.x - (-2.0 * w)).abs() < 1e-12);
        assert!((s.x + 0.238_41).abs() < 1e-5);
        assert_eq!(s.y, 0.0);
    }

    #[test]
    fn oracle_is_stable_far_from_support() {
        let pair = [Vec2::new(1.0, 0.0), Vec2::new(-1.0, 0.0)];
        let x = Vec2::new(1e4, 0.0);
        let s = oracle_mixture_score(&pair, 0.01, x);
        assert!(s.iter().all(|v| v.is_finite()));
        assert!((s.x - (1.0 - 1e4) / 1e-4).abs() < 1e-3 * s.x.abs());
    }

    #[test]
    fn oracle_matches_log_density_gradient() {
        let pts: Vec<Vec2> = (0..5).map(|i| Vec2::new(i as f64 * 0.4, (i as f64).sin())).collect();
        let sigma = 0.35;
        let h = 1e-6;
        for x in [Vec2::new(0.1, 0.2), Vec2::new(1.7, -0.4), Vec2::new(-0.5, 1.5)] {
            let g = oracle_mixture_score(&pts, sigma, x);
            let fx = (mixture_log_density(&pts, sigma, x + Vec2::new(h, 0.0))
                - mixture_log_density(&pts, sigma, x - Vec2::new(h, 0.0)))
                / (2.0 * h);
            let fy = (mixture_log_density(&pts, sigma, x + Vec2::new(0.0, h))
                - mixture_log_density(&pts, sigma, x - Vec2::new(0.0, h)))
                / (2.0 * h);
            assert!((g - Vec2::new(fx, fy)).norm() < 1e-6 * g.norm().max(1.0));
        }
        // single component: log N(x; z, s^2 I)
        let z = Vec2::new(1.0, 1.0);
        let expected = -(2.0 * std::f64::consts::PI * 0.25).ln() - 0.5 / 0.25;
        assert!((mixture_log_density(&[z], 0.5, Vec2::new(2.0, 1.0)) - expected).abs() < 1e-12);
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_score(Vec2::zeros(), 0.2), Vec2::zeros());
        let s = normalize_score(Vec2::new(3.0, 4.0), 0.2);
        assert!((s - Vec2::new(0.456_957, 0.609_276)).norm() < 1e-6);
        assert!((s.norm() - 1f64.tanh()).abs() < 1e-15);
        let big = normalize_score(Vec2::new(1e6, -2e6), 0.2);
        assert!(big.norm() < 1.0 && big.norm() > 1.0 - 1e-12);
        assert!((cosine(big, Vec2::new(1.0, -2.0)) - 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn normalized_score_is_short_and_parallel(x in -1e3f64..1e3, y in -1e3f64..1e3, k in 0.01f64..5.0) {
            let raw = Vec2::new(x, y);
            let s = normalize_score(raw, k);
            prop_assert!(s.norm() < 1.0);
            if raw.norm() >= NORM_FLOOR && s.norm() > 0.0 {
                prop_assert!((cosine(s, raw) - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn sigma_is_increasing(a in 0.0f64..1.0, b in 0.0f64..1.0) {
            prop_assume!(a < b);
            let s = NoiseSchedule::new(0.01, 0.5).unwrap();
            prop_assert!(s.sigma(a).unwrap() < s.sigma(b).unwrap());
        }

        #[test]
        fn dsm_target_inverts_the_perturbation(zx in -5f64..5.0, zy in -5f64..5.0, ex in -4f64..4.0, ey in -4f64..4.0, t in 0f64..=1.0) {
            let s = NoiseSchedule::new(0.01, 0.5).unwrap();
            let eps = Vec2::new(ex, ey);
            let sigma = s.sigma(t).unwrap();
            let close = |a: Vec2, b: Vec2| (a - b).norm() <= 4.0 * f64::EPSILON * b.norm().max(1.0);
            let target = dsm_target(&s, eps, t).unwrap();
            prop_assert!(close(target * sigma, -eps));
            let z = Vec2::new(zx, zy);
            let x = perturb(&s, z, t, eps).unwrap();
            prop_assert!(close(x, z + sigma * eps));
        }
    }
}
