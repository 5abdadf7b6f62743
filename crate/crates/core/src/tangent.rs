//! Tangent field learning on top of a frozen score network.
//!
//! With `s` the normalized score and `v` the tangent network output, each
//! training point contributes
//!
//! - `unit = (|s + v| - 1)^2`
//! - `orth = cos^2(s, v)`
//! - `dir  = 1 - (1/k) sum_j cos(v(x), v(x_j))` over `k` jittered neighbours `x_j`
//!
//! and the objective is `lambda_unit * unit + lambda_orth * orth + lambda_dir * dir`,
//! averaged over the batch. Gradients reach the tangent network through both
//! `v(x)` and the neighbour evaluations `v(x_j)`; the score network is only read.

use std::path::Path;

use rand::Rng as _;

use crate::datasets::PointCloud;
use crate::nn::{AdamConfig, AdamState, Gradients, Matrix, Mlp};
use crate::rng::{self, Rng};
use crate::score::{cosine, normalize_score, ScoreModel};
use crate::{Error, Result, Vec2, NORM_FLOOR};

#[derive(Debug, Clone, PartialEq)]
pub struct TangentTrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub k_neighbors: usize,
    pub neighbor_sigma: f64,
    pub lambda_unit: f64,
    pub lambda_orth: f64,
    pub lambda_dir: f64,
    pub k_s: f64,
    /// Score network time used for `s`.
    pub t_eval: f64,
    pub layer_sizes: Vec<usize>,
    pub seed: u64,
    /// Independently initialized candidates. After `restart_iterations` the
    /// better half by late training loss survives, and each further round
    /// trains 4x longer before halving again. The last one left continues to
    /// `iterations`.
    pub restarts: usize,
    pub restart_iterations: usize,
}

impl Default for TangentTrainConfig {
    fn default() -> Self {
        Self {
            iterations: 10_000,
            batch_size: 512,
            lr: 1e-3,
            k_neighbors: 5,
            neighbor_sigma: 0.05,
            lambda_unit: 1.0,
            lambda_orth: 1.0,
            lambda_dir: 1.0,
            k_s: 0.2,
            t_eval: 1.0,
            layer_sizes: vec![2, 128, 2],
            seed: 0,
            restarts: 8,
            restart_iterations: 200,
        }
    }
}

impl TangentTrainConfig {
    pub fn weights(&self) -> LossWeights {
        LossWeights { unit: self.lambda_unit, orth: self.lambda_orth, dir: self.lambda_dir }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.iterations == 0 || self.batch_size == 0 {
            return bad("iterations and batch_size must be positive".into());
        }
        if self.restarts == 0 {
            return bad("restarts must be at least 1".into());
        }
        if self.restarts > 1 && self.restart_iterations == 0 {
            return bad("restart_iterations must be positive".into());
        }
        if self.k_neighbors == 0 {
            return bad("k_neighbors must be at least 1".into());
        }
        if !(self.lr > 0.0 && self.neighbor_sigma > 0.0 && self.k_s > 0.0) {
            return bad("lr, neighbor_sigma and k_s must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.t_eval) {
            return bad(format!("t_eval = {} is outside [0, 1]", self.t_eval));
        }
        self.weights().validate()?;
        if self.layer_sizes.first() != Some(&2) || self.layer_sizes.last() != Some(&2) {
            return bad(format!("tangent network maps 2 -> 2, got {:?}", self.layer_sizes));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub unit: f64,
    pub orth: f64,
    pub dir: f64,
}

impl LossWeights {
    fn validate(&self) -> Result<()> {
        let all = [self.unit, self.orth, self.dir];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || all.iter().all(|&w| w == 0.0) {
            return Err(Error::Config(format!("loss weights must be non-negative with one positive, got {self:?}")));
        }
        Ok(())
    }
}

/// Batch means of the three terms and their weighted sum.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossTerms {
    pub unit: f64,
    pub orth: f64,
    pub dir: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TangentModel {
    pub mlp: Mlp,
}

impl TangentModel {
    pub fn new(mlp: Mlp) -> Result<Self> {
        if mlp.input_dim() != 2 || mlp.output_dim() != 2 {
            return Err(Error::Shape(format!("tangent network must map 2 -> 2, got {:?}", mlp.sizes())));
        }
        Ok(Self { mlp })
    }

    pub fn eval(&self, x: Vec2) -> Result<Vec2> {
        Ok(self.eval_batch(&[x])?[0])
    }

    pub fn eval_batch(&self, xs: &[Vec2]) -> Result<Vec<Vec2>> {
        let out = self.mlp.forward(&points_matrix(xs))?;
        Ok(rows_to_points(&out))
    }
}

fn points_matrix(xs: &[Vec2]) -> Matrix {
    let mut m = Matrix::zeros(xs.len(), 2);
    for (i, x) in xs.iter().enumerate() {
        m.row_mut(i).copy_from_slice(&[x.x, x.y]);
    }
    m
}

fn rows_to_points(m: &Matrix) -> Vec<Vec2> {
    (0..m.rows()).map(|i| Vec2::new(m.row(i)[0], m.row(i)[1])).collect()
}

pub fn loss_unit(s: Vec2, v: Vec2) -> f64 {
    ((s + v).norm() - 1.0).powi(2)
}

pub fn loss_orth(s: Vec2, v: Vec2) -> f64 {
    cosine(s, v).powi(2)
}

/// Zero-norm vectors contribute a cosine of 0.
pub fn loss_dir(v: Vec2, neighbors: &[Vec2]) -> f64 {
    let mean = neighbors.iter().map(|&n| cosine(v, n)).sum::<f64>() / neighbors.len() as f64;
    1.0 - mean
}

/// `d cos(a, b) / d a = (b^ - cos * a^) / |a|`.
fn cosine_grad(a: Vec2, b: Vec2) -> Vec2 {
    let (na, nb) = (a.norm(), b.norm());
    if na < NORM_FLOOR || nb < NORM_FLOOR {
        return Vec2::zeros();
    }
    let (ah, bh) = (a / na, b / nb);
    (bh - ah.dot(&bh) * ah) / na
}

fn unit_grad(s: Vec2, v: Vec2) -> Vec2 {
    let m = s + v;
    let n = m.norm();
    if n < NORM_FLOOR {
        return Vec2::zeros();
    }
    2.0 * (n - 1.0) * m / n
}

fn orth_grad(s: Vec2, v: Vec2) -> Vec2 {
    2.0 * cosine(s, v) * cosine_grad(v, s)
}

/// `x + neighbor_sigma * eps_j` for `j = 1..k`.
pub fn sample_neighbors(x: Vec2, k: usize, neighbor_sigma: f64, rng: &mut Rng) -> Vec<Vec2> {
    (0..k).map(|_| x + neighbor_sigma * rng::normal2(rng)).collect()
}

/// One fixed tangent-training batch: points, their normalized scores and
/// `k` neighbours per point.
#[derive(Debug, Clone)]
pub struct TangentBatch {
    pub points: Vec<Vec2>,
    pub scores: Vec<Vec2>,
    pub neighbors: Vec<Vec<Vec2>>,
}

impl TangentBatch {
    fn k(&self) -> usize {
        self.neighbors.first().map_or(0, Vec::len)
    }

    fn validate(&self) -> Result<()> {
        let k = self.k();
        if self.points.is_empty() || k == 0 {
            return Err(Error::Input("tangent batch needs points and at least one neighbour".into()));
        }
        if self.scores.len() != self.points.len()
            || self.neighbors.len() != self.points.len()
            || self.neighbors.iter().any(|n| n.len() != k)
        {
            return Err(Error::Shape("tangent batch components disagree in length".into()));
        }
        Ok(())
    }

    /// Points followed by all neighbours, `k` per point in point order.
    fn network_input(&self) -> Matrix {
        let all: Vec<Vec2> = self.points.iter().copied().chain(self.neighbors.iter().flatten().copied()).collect();
        points_matrix(&all)
    }
}

fn evaluate_terms(batch: &TangentBatch, outputs: &[Vec2], weights: LossWeights) -> (LossTerms, Vec<LossTerms>) {
    let b = batch.points.len();
    let k = batch.k();
    let mut mean = LossTerms::default();
    let mut each = Vec::with_capacity(b);
    for i in 0..b {
        let (s, v) = (batch.scores[i], outputs[i]);
        let nbrs = &outputs[b + i * k..b + (i + 1) * k];
        let unit = loss_unit(s, v);
        let orth = loss_orth(s, v);
        let dir = loss_dir(v, nbrs);
        debug_assert!(unit >= 0.0 && (0.0..=1.0).contains(&orth) && (0.0..=2.0).contains(&dir));
        let total = weights.unit * unit + weights.orth * orth + weights.dir * dir;
        each.push(LossTerms { unit, orth, dir, total });
        mean.unit += unit;
        mean.orth += orth;
        mean.dir += dir;
        mean.total += total;
    }
    let n = b as f64;
    mean.unit /= n;
    mean.orth /= n;
    mean.dir /= n;
    mean.total /= n;
    (mean, each)
}

/// Batch loss only.
pub fn composite_loss_value(mlp: &Mlp, batch: &TangentBatch, weights: LossWeights) -> Result<LossTerms> {
    batch.validate()?;
    let out = rows_to_points(&mlp.forward(&batch.network_input())?);
    Ok(evaluate_terms(batch, &out, weights).0)
}

/// Batch loss and its gradient with respect to the tangent network parameters.
pub fn composite_loss(mlp: &Mlp, batch: &TangentBatch, weights: LossWeights) -> Result<(LossTerms, Gradients)> {
    batch.validate()?;
    let (out, cache) = mlp.forward_cached(&batch.network_input())?;
    let outputs = rows_to_points(&out);
    let (terms, _) = evaluate_terms(batch, &outputs, weights);

    let b = batch.points.len();
    let k = batch.k();
    let scale = 1.0 / b as f64;
    let mut grad = vec![Vec2::zeros(); outputs.len()];
    for i in 0..b {
        let (s, v) = (batch.scores[i], outputs[i]);
        let mut gv = weights.unit * unit_grad(s, v) + weights.orth * orth_grad(s, v);
        if weights.dir != 0.0 {
            let c = -weights.dir / k as f64;
            for j in 0..k {
                let n = outputs[b + i * k + j];
                gv += c * cosine_grad(v, n);
                grad[b + i * k + j] += scale * c * cosine_grad(n, v);
            }
        }
        grad[i] += scale * gv;
    }
    let mut g = Matrix::zeros(outputs.len(), 2);
    for (i, d) in grad.iter().enumerate() {
        g.row_mut(i).copy_from_slice(&[d.x, d.y]);
    }
    Ok((terms, mlp.backward(&cache, &g)?))
}

/// Draws a training batch: `x = z + sigma(t) eps` around uniformly chosen
/// waypoints `z` with `t ~ U(0, 1)`, then normalized scores at `t_eval` and
/// neighbours.
pub fn sample_batch(score: &ScoreModel, points: &[Vec2], config: &TangentTrainConfig, rng: &mut Rng) -> Result<TangentBatch> {
    let b = config.batch_size;
    let mut xs = Vec::with_capacity(b);
    for _ in 0..b {
        let z = points[rng.random_range(0..points.len())];
        let t: f64 = rng.random();
        xs.push(z + score.schedule.sigma_unchecked(t) * rng::normal2(rng));
    }
    let neighbors = xs
        .iter()
        .map(|&x| sample_neighbors(x, config.k_neighbors, config.neighbor_sigma, rng))
        .collect();
    let scores = score
        .eval_batch(&xs, config.t_eval)?
        .into_iter()
        .map(|s| normalize_score(s, config.k_s))
        .collect();
    Ok(TangentBatch { points: xs, scores, neighbors })
}

#[derive(Debug, Clone)]
pub struct TangentTraining {
    pub model: TangentModel,
    pub history: Vec<LossTerms>,
}

pub fn train_tangent(score: &ScoreModel, waypoints: &PointCloud, config: &TangentTrainConfig) -> Result<TangentTraining> {
    config.validate()?;
    let points = waypoints.canonical_points();
    let mut rng = rng::seeded(config.seed);
    let mut runs = (0..config.restarts)
        .map(|_| Run::new(config, rng.random(), rng.random()))
        .collect::<Result<Vec<_>>>()?;
    // successive halving: each round trains the survivors 4x longer and keeps
    // the better half by late training loss
    let mut until = config.restart_iterations;
    while runs.len() > 1 {
        let until_now = until.min(config.iterations);
        let mut ranked = Vec::with_capacity(runs.len());
        for mut run in runs {
            run.advance(score, &points, config, until_now)?;
            ranked.push((run.late_loss(), run));
        }
        ranked.sort_by(|a, b| a.0.total_cmp(&b.0));
        ranked.truncate(ranked.len().div_ceil(2));
        runs = ranked.into_iter().map(|(_, run)| run).collect();
        until = until.saturating_mul(4);
    }
    let mut run = runs.pop().expect("at least one restart");
    run.advance(score, &points, config, config.iterations)?;
    Ok(TangentTraining { model: TangentModel::new(run.mlp)?, history: run.history })
}

/// One candidate's network, optimizer and batch stream.
struct Run {
    mlp: Mlp,
    adam: AdamState,
    rng: Rng,
    history: Vec<LossTerms>,
}

impl Run {
    fn new(config: &TangentTrainConfig, init_seed: u64, stream_seed: u64) -> Result<Self> {
        let mlp = Mlp::new(&config.layer_sizes, init_seed)?;
        let adam = AdamState::new(&mlp, AdamConfig::with_lr(config.lr))?;
        Ok(Self { mlp, adam, rng: rng::seeded(stream_seed), history: Vec::with_capacity(config.iterations) })
    }

    /// Mean total loss over the last tenth of the iterations so far.
    fn late_loss(&self) -> f64 {
        let late = &self.history[self.history.len() - self.history.len().div_ceil(10)..];
        late.iter().map(|t| t.total).sum::<f64>() / late.len() as f64
    }

    /// Trains until `until` iterations have been taken in total.
    fn advance(&mut self, score: &ScoreModel, points: &[Vec2], config: &TangentTrainConfig, until: usize) -> Result<()> {
        let weights = config.weights();
        for iteration in self.history.len()..until {
            let batch = sample_batch(score, points, config, &mut self.rng)?;
            let (terms, grads) = composite_loss(&self.mlp, &batch, weights)?;
            if !terms.total.is_finite() {
                return Err(Error::Training {
                    iteration,
                    detail: format!(
                        "tangent loss unit={} orth={} dir={} total={}",
                        terms.unit, terms.orth, terms.dir, terms.total
                    ),
                });
            }
            self.history.push(terms);
            self.adam.step(&mut self.mlp, &grads).map_err(|e| match e {
                Error::Training { detail, .. } => Error::Training { iteration, detail },
                e => e,
            })?;
        }
        Ok(())
    }
}

/// Header `iteration,loss_unit,loss_orth,loss_dir,loss_total`.
pub fn write_loss_history(history: &[LossTerms], path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from("iteration,loss_unit,loss_orth,loss_dir,loss_total\n");
    for (i, t) in history.iter().enumerate() {
        out.push_str(&format!("{i},{},{},{},{}\n", t.unit, t.orth, t.dir, t.total));
    }
    std::fs::write(path, out)?;
    Ok(())
}
