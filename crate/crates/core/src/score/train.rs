use rand::Rng as _;

use super::{NoiseSchedule, ScoreModel};
use crate::datasets::PointCloud;
use crate::nn::{AdamConfig, AdamState, Matrix, Mlp};
use crate::{rng, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub layer_sizes: Vec<usize>,
    /// Decay of the exponential moving average of the weights that becomes
    /// the returned model. Zero returns the last iterate.
    pub ema_decay: f64,
}

impl Default for ScoreTrainConfig {
    fn default() -> Self {
        Self { iterations: 10_000, batch_size: 512, lr: 1e-3, seed: 0, layer_sizes: vec![3, 64, 64, 64, 64, 2], ema_decay: 0.999 }
    }
}

impl ScoreTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.batch_size == 0 {
            return Err(Error::Config("iterations and batch_size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.layer_sizes.first() != Some(&3) || self.layer_sizes.last() != Some(&2) {
            return Err(Error::Config(format!(
                "score network takes (x, y, t) and returns a 2-vector; layer sizes {:?} do not",
                self.layer_sizes
            )));
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return Err(Error::Config(format!("ema_decay must be in [0, 1), got {}", self.ema_decay)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ScoreTraining {
    pub model: ScoreModel,
    /// Mean squared error of every iteration.
    pub loss_history: Vec<f64>,
}

/// Denoising score matching.
///
/// Each iteration draws a batch of waypoints uniformly with replacement, a
/// time `t ~ U(0, 1)` and noise `eps ~ N(0, I)` per sample, and regresses
/// `S(z + sigma(t) eps, t)` onto `-eps / sigma(t)` with the loss
/// `mean |S - target|^2`. Waypoints are put in canonical order first, so the
/// result depends only on the waypoint multiset.
pub fn train_score(waypoints: &PointCloud, config: &ScoreTrainConfig, schedule: NoiseSchedule) -> Result<ScoreTraining> {
    config.validate()?;
    let points = waypoints.canonical_points();
    let mut rng = rng::seeded(config.seed);
    let mut mlp = Mlp::new(&config.layer_sizes, rng.random())?;
    let mut adam = AdamState::new(&mlp, AdamConfig::with_lr(config.lr))?;
    let b = config.batch_size;
    let mut input = Matrix::zeros(b, 3);
    let mut target = vec![0.0; 2 * b];
    let mut history = Vec::with_capacity(config.iterations);
    let mut average = mlp.params();

    for iteration in 0..config.iterations {
        for i in 0..b {
            let z = points[rng.random_range(0..points.len())];
            let t: f64 = rng.random();
            let eps = rng::normal2(&mut rng);
            let sigma = schedule.sigma_unchecked(t);
            let x = z + sigma * eps;
            input.row_mut(i).copy_from_slice(&[x.x, x.y, t]);
            target[2 * i] = -eps.x / sigma;
            target[2 * i + 1] = -eps.y / sigma;
        }
        let (out, cache) = mlp.forward_cached(&input)?;
        let mut grad = Matrix::zeros(b, 2);
        let mut loss = 0.0;
        for ((g, &o), &u) in grad.as_mut_slice().iter_mut().zip(out.as_slice()).zip(&target) {
            let r = o - u;
            loss += r * r;
            *g = 2.0 * r / b as f64;
        }
        loss /= b as f64;
        if !loss.is_finite() {
            return Err(Error::Training { iteration, detail: format!("score loss is {loss}") });
        }
        history.push(loss);
        let grads = mlp.backward(&cache, &grad)?;
        adam.step(&mut mlp, &grads).map_err(|e| match e {
            Error::Training { detail, .. } => Error::Training { iteration, detail },
            e => e,
        })?;
        if config.ema_decay > 0.0 {
            let d = config.ema_decay;
            for (a, p) in average.iter_mut().zip(mlp.params()) {
                *a = d * *a + (1.0 - d) * p;
            }
        }
    }
    if config.ema_decay > 0.0 {
        mlp.set_params(&average)?;
    }
    Ok(ScoreTraining { model: ScoreModel::new(mlp, schedule)?, loss_history: history })
}
