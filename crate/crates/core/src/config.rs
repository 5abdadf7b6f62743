//! Run configuration as flat `section.key = value` text.
//!
//! Every key has a default, unknown keys are rejected, and
//! [`RunConfig::to_text`] writes the fully resolved configuration back out in
//! a form [`RunConfig::from_text`] reads unchanged.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::datasets::{gen_circle, gen_concentric, gen_polygon, gen_separated, PointCloud};
use crate::field::Bounds;
use crate::score::{NoiseSchedule, ScoreTrainConfig};
use crate::sim::{Method, SimOptions, StallParams};
use crate::tangent::TangentTrainConfig;
use crate::{Error, Result, Vec2};

/// Offsets added to the global seed for each stage.
pub const DATA_SEED_OFFSET: u64 = 0;
pub const SCORE_SEED_OFFSET: u64 = 1;
pub const TANGENT_SEED_OFFSET: u64 = 2;
pub const DIAG_SEED_OFFSET: u64 = 3;

pub const SHALLOW_TANGENT: [usize; 3] = [2, 128, 2];
pub const DEEP_TANGENT: [usize; 6] = [2, 64, 64, 64, 64, 2];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    Circle,
    Concentric,
    Separated,
    Polygon,
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "circle" => Ok(Self::Circle),
            "concentric" => Ok(Self::Concentric),
            "separated" => Ok(Self::Separated),
            "polygon" => Ok(Self::Polygon),
            other => Err(Error::Config(format!(
                "unknown scenario '{other}' (expected circle, concentric, separated or polygon)"
            ))),
        }
    }
}

impl Scenario {
    /// Noise schedule used unless `schedule.*` keys override it. Separated
    /// circles need stronger attraction at `t_eval` to keep agents on their
    /// own branch, which a smaller `sigma_max` gives.
    pub fn default_schedule(self) -> NoiseSchedule {
        match self {
            Self::Separated => NoiseSchedule::new(0.15, 0.2).expect("valid bounds"),
            _ => NoiseSchedule::default(),
        }
    }
}

/// Explicit schedule bounds; `None` falls back to the scenario default.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ScheduleConfig {
    pub sigma_min: Option<f64>,
    pub sigma_max: Option<f64>,
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Circle => "circle",
            Self::Concentric => "concentric",
            Self::Separated => "separated",
            Self::Polygon => "polygon",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Depth {
    Shallow,
    Deep,
}

impl Depth {
    pub fn layer_sizes(self) -> Vec<usize> {
        match self {
            Self::Shallow => SHALLOW_TANGENT.to_vec(),
            Self::Deep => DEEP_TANGENT.to_vec(),
        }
    }
}

impl FromStr for Depth {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shallow" => Ok(Self::Shallow),
            "deep" => Ok(Self::Deep),
            other => Err(Error::Config(format!("unknown depth '{other}' (expected shallow or deep)"))),
        }
    }
}

impl fmt::Display for Depth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Shallow => "shallow",
            Self::Deep => "deep",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    /// Points per branch.
    pub n: usize,
    pub jitter: f64,
    pub radius: f64,
    pub r1: f64,
    pub r2: f64,
    /// Separated circles sit at `(+-separation, 0)`.
    pub separation: f64,
    pub circumradius: f64,
    pub sides: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { n: 512, jitter: 0.01, radius: 1.0, r1: 1.0, r2: 2.0, separation: 1.75, circumradius: 1.5, sides: 4 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Ablation {
    pub disable_unit: bool,
    pub disable_orth: bool,
    pub disable_dir: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub method: Method,
    pub dt: f64,
    pub steps: usize,
    /// Empty means the scenario's default starts.
    pub starts: Vec<Vec2>,
    pub teleports: Vec<(usize, Vec2)>,
    pub stall: StallParams,
    pub band_fraction: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        let opts = SimOptions::default();
        Self {
            method: opts.method,
            dt: opts.dt,
            steps: opts.steps,
            starts: Vec::new(),
            teleports: Vec::new(),
            stall: StallParams::default(),
            band_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldConfig {
    /// `None` means the waypoint bounding box grown by `margin`.
    pub bounds: Option<Bounds>,
    pub margin: f64,
    pub nx: usize,
    pub ny: usize,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self { bounds: None, margin: 1.0, nx: 41, ny: 41 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagConfig {
    pub samples: usize,
    pub stein_samples: usize,
    pub stein_radius: f64,
    pub threshold_factor: f64,
}

impl Default for DiagConfig {
    fn default() -> Self {
        Self { samples: 2000, stein_samples: 100_000, stein_radius: 0.5, threshold_factor: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scenario: Scenario,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub data: DataConfig,
    pub schedule: ScheduleConfig,
    pub score: ScoreTrainConfig,
    pub tangent: TangentTrainConfig,
    pub depth: Depth,
    pub ablation: Ablation,
    pub sim: SimConfig,
    pub field: FieldConfig,
    pub diag: DiagConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scenario: Scenario::Concentric,
            seed: 0,
            out_dir: PathBuf::from("out"),
            data: DataConfig::default(),
            schedule: ScheduleConfig::default(),
            score: ScoreTrainConfig::default(),
            tangent: TangentTrainConfig::default(),
            depth: Depth::Shallow,
            ablation: Ablation::default(),
            sim: SimConfig::default(),
            field: FieldConfig::default(),
            diag: DiagConfig::default(),
        }
    }
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value.parse().map_err(|e| Error::Config(format!("{key}: cannot parse '{value}': {e}")))
}

fn auto(key: &str, value: &str) -> Result<Option<f64>> {
    if value == "auto" {
        Ok(None)
    } else {
        num(key, value).map(Some)
    }
}

fn flag(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got '{value}'"))),
    }
}

fn list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: fmt::Display,
{
    value.split(',').map(|v| num(key, v.trim())).collect()
}

fn point(key: &str, value: &str) -> Result<Vec2> {
    match list::<f64>(key, value)?.as_slice() {
        &[x, y] => Ok(Vec2::new(x, y)),
        _ => Err(Error::Config(format!("{key}: expected 'x,y', got '{value}'"))),
    }
}

fn points(key: &str, value: &str) -> Result<Vec<Vec2>> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value.split(';').map(|p| point(key, p.trim())).collect()
}

fn teleports(key: &str, value: &str) -> Result<Vec<(usize, Vec2)>> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(';')
        .map(|item| {
            let (step, at) = item
                .split_once('@')
                .ok_or_else(|| Error::Config(format!("{key}: expected 'step@x,y', got '{item}'")))?;
            Ok((num(key, step.trim())?, point(key, at.trim())?))
        })
        .collect()
}

fn join<T: fmt::Display>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn fmt_points(ps: &[Vec2]) -> String {
    ps.iter().map(|p| format!("{},{}", p.x, p.y)).collect::<Vec<_>>().join(";")
}

/// Waypoints plus the geometry metrics need.
#[derive(Debug, Clone)]
pub struct ScenarioData {
    pub cloud: PointCloud,
    /// Circle centers, one per branch; the polygon center for polygons.
    pub centers: Vec<Vec2>,
    pub corners: Vec<Vec2>,
}

impl RunConfig {
    pub fn from_text(text: &str) -> Result<Self> {
        let mut config = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: duplicate key {key}", n + 1)));
            }
            config.set(key, value.trim())?;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "scenario" => self.scenario = value.parse()?,
            "seed" => self.seed = num(key, value)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            "data.n" => self.data.n = num(key, value)?,
            "data.jitter" => self.data.jitter = num(key, value)?,
            "data.radius" => self.data.radius = num(key, value)?,
            "data.r1" => self.data.r1 = num(key, value)?,
            "data.r2" => self.data.r2 = num(key, value)?,
            "data.separation" => self.data.separation = num(key, value)?,
            "data.circumradius" => self.data.circumradius = num(key, value)?,
            "data.sides" => self.data.sides = num(key, value)?,
            "schedule.sigma_min" => self.schedule.sigma_min = auto(key, value)?,
            "schedule.sigma_max" => self.schedule.sigma_max = auto(key, value)?,
            "score.iterations" => self.score.iterations = num(key, value)?,
            "score.batch_size" => self.score.batch_size = num(key, value)?,
            "score.lr" => self.score.lr = num(key, value)?,
            "score.layers" => self.score.layer_sizes = list(key, value)?,
            "score.ema_decay" => self.score.ema_decay = num(key, value)?,
            "tangent.iterations" => self.tangent.iterations = num(key, value)?,
            "tangent.batch_size" => self.tangent.batch_size = num(key, value)?,
            "tangent.lr" => self.tangent.lr = num(key, value)?,
            "tangent.k" => self.tangent.k_neighbors = num(key, value)?,
            "tangent.neighbor_sigma" => self.tangent.neighbor_sigma = num(key, value)?,
            "tangent.lambda_unit" => self.tangent.lambda_unit = num(key, value)?,
            "tangent.lambda_orth" => self.tangent.lambda_orth = num(key, value)?,
            "tangent.lambda_dir" => self.tangent.lambda_dir = num(key, value)?,
            "tangent.k_s" => self.tangent.k_s = num(key, value)?,
            "tangent.t_eval" => self.tangent.t_eval = num(key, value)?,
            "tangent.restarts" => self.tangent.restarts = num(key, value)?,
            "tangent.restart_iterations" => self.tangent.restart_iterations = num(key, value)?,
            "tangent.depth" => self.depth = value.parse()?,
            "ablation.disable_unit" => self.ablation.disable_unit = flag(key, value)?,
            "ablation.disable_orth" => self.ablation.disable_orth = flag(key, value)?,
            "ablation.disable_dir" => self.ablation.disable_dir = flag(key, value)?,
            "sim.method" => self.sim.method = value.parse()?,
            "sim.dt" => self.sim.dt = num(key, value)?,
            "sim.steps" => self.sim.steps = num(key, value)?,
            "sim.starts" => self.sim.starts = points(key, value)?,
            "sim.teleports" => self.sim.teleports = teleports(key, value)?,
            "sim.stall_speed" => self.sim.stall.speed_threshold = num(key, value)?,
            "sim.stall_window" => self.sim.stall.window = num(key, value)?,
            "sim.corner_radius" => self.sim.stall.corner_radius = num(key, value)?,
            "sim.band_fraction" => self.sim.band_fraction = num(key, value)?,
            "field.bounds" => {
                self.field.bounds = match value {
                    "auto" => None,
                    _ => match list::<f64>(key, value)?.as_slice() {
                        &[a, b, c, d] => Some(Bounds::new(a, b, c, d)?),
                        _ => return Err(Error::Config(format!("{key}: expected 'auto' or 'x_min,x_max,y_min,y_max'"))),
                    },
                }
            }
            "field.margin" => self.field.margin = num(key, value)?,
            "field.nx" => self.field.nx = num(key, value)?,
            "field.ny" => self.field.ny = num(key, value)?,
            "diag.samples" => self.diag.samples = num(key, value)?,
            "diag.stein_samples" => self.diag.stein_samples = num(key, value)?,
            "diag.stein_radius" => self.diag.stein_radius = num(key, value)?,
            "diag.threshold_factor" => self.diag.threshold_factor = num(key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key}"))),
        }
        Ok(())
    }

    /// Every key with its resolved value, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let t = &self.tangent;
        let bounds = match self.field.bounds {
            None => "auto".to_string(),
            Some(b) => join(&[b.x_min, b.x_max, b.y_min, b.y_max]),
        };
        let teleports = self.sim.teleports.iter().map(|(k, p)| format!("{k}@{},{}", p.x, p.y)).collect::<Vec<_>>().join(";");
        vec![
            ("scenario", self.scenario.to_string()),
            ("seed", self.seed.to_string()),
            ("out_dir", self.out_dir.display().to_string()),
            ("data.n", self.data.n.to_string()),
            ("data.jitter", self.data.jitter.to_string()),
            ("data.radius", self.data.radius.to_string()),
            ("data.r1", self.data.r1.to_string()),
            ("data.r2", self.data.r2.to_string()),
            ("data.separation", self.data.separation.to_string()),
            ("data.circumradius", self.data.circumradius.to_string()),
            ("data.sides", self.data.sides.to_string()),
            ("schedule.sigma_min", self.schedule.sigma_min.map_or_else(|| "auto".into(), |v| v.to_string())),
            ("schedule.sigma_max", self.schedule.sigma_max.map_or_else(|| "auto".into(), |v| v.to_string())),
            ("score.iterations", self.score.iterations.to_string()),
            ("score.batch_size", self.score.batch_size.to_string()),
            ("score.lr", self.score.lr.to_string()),
            ("score.layers", join(&self.score.layer_sizes)),
            ("score.ema_decay", self.score.ema_decay.to_string()),
            ("tangent.iterations", t.iterations.to_string()),
            ("tangent.batch_size", t.batch_size.to_string()),
            ("tangent.lr", t.lr.to_string()),
            ("tangent.k", t.k_neighbors.to_string()),
            ("tangent.neighbor_sigma", t.neighbor_sigma.to_string()),
            ("tangent.lambda_unit", t.lambda_unit.to_string()),
            ("tangent.lambda_orth", t.lambda_orth.to_string()),
            ("tangent.lambda_dir", t.lambda_dir.to_string()),
            ("tangent.k_s", t.k_s.to_string()),
            ("tangent.t_eval", t.t_eval.to_string()),
            ("tangent.restarts", t.restarts.to_string()),
            ("tangent.restart_iterations", t.restart_iterations.to_string()),
            ("tangent.depth", self.depth.to_string()),
            ("ablation.disable_unit", self.ablation.disable_unit.to_string()),
            ("ablation.disable_orth", self.ablation.disable_orth.to_string()),
            ("ablation.disable_dir", self.ablation.disable_dir.to_string()),
            ("sim.method", self.sim.method.to_string()),
            ("sim.dt", self.sim.dt.to_string()),
            ("sim.steps", self.sim.steps.to_string()),
            ("sim.starts", fmt_points(&self.sim.starts)),
            ("sim.teleports", teleports),
            ("sim.stall_speed", self.sim.stall.speed_threshold.to_string()),
            ("sim.stall_window", self.sim.stall.window.to_string()),
            ("sim.corner_radius", self.sim.stall.corner_radius.to_string()),
            ("sim.band_fraction", self.sim.band_fraction.to_string()),
            ("field.bounds", bounds),
            ("field.margin", self.field.margin.to_string()),
            ("field.nx", self.field.nx.to_string()),
            ("field.ny", self.field.ny.to_string()),
            ("diag.samples", self.diag.samples.to_string()),
            ("diag.stein_samples", self.diag.stein_samples.to_string()),
            ("diag.stein_radius", self.diag.stein_radius.to_string()),
            ("diag.threshold_factor", self.diag.threshold_factor.to_string()),
        ]
    }

    pub fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// SHA-256 of [`RunConfig::to_text`] without `out_dir`, so moving a run
    /// does not change its identity.
    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for (k, v) in self.entries() {
            if k != "out_dir" {
                h.update(format!("{k} = {v}\n").as_bytes());
            }
        }
        h.finalize().into()
    }

    /// The schedule in effect: explicit bounds where given, the scenario's
    /// default otherwise.
    pub fn schedule(&self) -> Result<NoiseSchedule> {
        let d = self.scenario.default_schedule();
        NoiseSchedule::new(self.schedule.sigma_min.unwrap_or(d.sigma_min()), self.schedule.sigma_max.unwrap_or(d.sigma_max()))
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule()?;
        self.score_config().validate()?;
        self.tangent_config().validate()?;
        self.sim_options().validate()?;
        if !(self.sim.band_fraction > 0.0 && self.sim.band_fraction <= 1.0) {
            return Err(Error::Config(format!("sim.band_fraction must be in (0, 1], got {}", self.sim.band_fraction)));
        }
        if self.sim.stall.window < 2 {
            return Err(Error::Config("sim.stall_window must be at least 2".into()));
        }
        if self.field.nx < 2 || self.field.ny < 2 {
            return Err(Error::Config("field.nx and field.ny must be at least 2".into()));
        }
        if !(self.field.margin >= 0.0 && self.field.margin.is_finite()) {
            return Err(Error::Config("field.margin must be non-negative".into()));
        }
        if self.diag.samples == 0 || !(self.diag.threshold_factor > 0.0) || !(self.diag.stein_radius > 0.0) {
            return Err(Error::Config("diag settings must be positive".into()));
        }
        Ok(())
    }

    pub fn data_seed(&self) -> u64 {
        self.seed.wrapping_add(DATA_SEED_OFFSET)
    }

    pub fn diag_seed(&self) -> u64 {
        self.seed.wrapping_add(DIAG_SEED_OFFSET)
    }

    pub fn score_config(&self) -> ScoreTrainConfig {
        ScoreTrainConfig { seed: self.seed.wrapping_add(SCORE_SEED_OFFSET), ..self.score.clone() }
    }

    /// Tangent settings with the depth preset, ablation switches and derived
    /// seed applied.
    pub fn tangent_config(&self) -> TangentTrainConfig {
        let mut t = self.tangent.clone();
        t.seed = self.seed.wrapping_add(TANGENT_SEED_OFFSET);
        t.layer_sizes = self.depth.layer_sizes();
        if self.ablation.disable_unit {
            t.lambda_unit = 0.0;
        }
        if self.ablation.disable_orth {
            t.lambda_orth = 0.0;
        }
        if self.ablation.disable_dir {
            t.lambda_dir = 0.0;
        }
        t
    }

    pub fn sim_options(&self) -> SimOptions {
        SimOptions { dt: self.sim.dt, steps: self.sim.steps, method: self.sim.method, teleports: self.sim.teleports.clone() }
    }

    pub fn scenario_data(&self) -> Result<ScenarioData> {
        self.scenario_data_seeded(self.data_seed())
    }

    /// Fresh draws from the same scenario, for held-out evaluation.
    pub fn held_out_data(&self) -> Result<ScenarioData> {
        self.scenario_data_seeded(self.diag_seed())
    }

    fn scenario_data_seeded(&self, seed: u64) -> Result<ScenarioData> {
        let d = &self.data;
        let origin = Vec2::zeros();
        Ok(match self.scenario {
            Scenario::Circle => ScenarioData {
                cloud: gen_circle(origin, d.radius, d.n, d.jitter, seed)?,
                centers: vec![origin],
                corners: Vec::new(),
            },
            Scenario::Concentric => ScenarioData {
                cloud: gen_concentric(origin, d.r1, d.r2, d.n, d.jitter, seed)?,
                centers: vec![origin, origin],
                corners: Vec::new(),
            },
            Scenario::Separated => {
                let (c1, c2) = (Vec2::new(-d.separation, 0.0), Vec2::new(d.separation, 0.0));
                ScenarioData { cloud: gen_separated(c1, c2, d.radius, d.n, d.jitter, seed)?, centers: vec![c1, c2], corners: Vec::new() }
            }
            Scenario::Polygon => {
                let poly = gen_polygon(origin, d.sides, d.circumradius, d.n, d.jitter, seed)?;
                ScenarioData { cloud: poly.cloud, centers: vec![origin], corners: poly.corners }
            }
        })
    }

    /// Configured starts, or one point inside and one outside each branch.
    pub fn starts(&self) -> Vec<Vec2> {
        if !self.sim.starts.is_empty() {
            return self.sim.starts.clone();
        }
        let d = &self.data;
        match self.scenario {
            Scenario::Circle => vec![Vec2::new(0.5 * d.radius, 0.0), Vec2::new(0.0, -1.6 * d.radius)],
            Scenario::Concentric => {
                let gap = d.r2 - d.r1;
                vec![
                    Vec2::new(0.6 * d.r1, 0.0),
                    Vec2::new(0.0, d.r1 + 0.35 * gap),
                    Vec2::new(-(d.r2 - 0.25 * gap), 0.0),
                    Vec2::new(0.0, -(d.r2 + 0.5 * gap)),
                ]
            }
            Scenario::Separated => vec![
                Vec2::new(-d.separation, 0.4 * d.radius),
                Vec2::new(-d.separation - 1.25 * d.radius, 0.0),
                Vec2::new(d.separation, -0.4 * d.radius),
                Vec2::new(d.separation + 1.25 * d.radius, 0.0),
            ],
            Scenario::Polygon => vec![Vec2::new(0.4 * d.circumradius, 0.1), Vec2::new(-1.4 * d.circumradius, 0.2)],
        }
    }

    /// The three single-loss-removed variants, named `no_unit`, `no_orth` and
    /// `no_dir`. Each trains one tangent run without candidate selection,
    /// which would otherwise pick the candidate least affected by the
    /// missing term.
    pub fn ablation_variants(&self) -> [(&'static str, RunConfig); 3] {
        let variant = |f: fn(&mut Ablation)| {
            let mut c = self.clone();
            f(&mut c.ablation);
            c.tangent.restarts = 1;
            c
        };
        [
            ("no_unit", variant(|a| a.disable_unit = true)),
            ("no_orth", variant(|a| a.disable_orth = true)),
            ("no_dir", variant(|a| a.disable_dir = true)),
        ]
    }

    pub fn field_bounds(&self, cloud: &PointCloud) -> Result<Bounds> {
        match self.field.bounds {
            Some(b) => Ok(b),
            None => Bounds::around(cloud, self.field.margin),
        }
    }
}

pub fn digest_hex(digest: &[u8; 32]) -> String {
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_round_trips() {
        let mut c = RunConfig::default();
        c.set("sim.starts", "0.5,0;-1.25,2.5").unwrap();
        c.set("sim.teleports", "100@1,1").unwrap();
        c.set("field.bounds", "-3,3,-2.5,2.5").unwrap();
        c.set("score.lr", "0.0003").unwrap();
        c.set("tangent.depth", "deep").unwrap();
        c.set("ablation.disable_orth", "true").unwrap();
        let back = RunConfig::from_text(&c.to_text()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.digest(), c.digest());
        assert_eq!(RunConfig::from_text("").unwrap(), RunConfig::default());
    }

    #[test]
    fn every_entry_is_settable() {
        let c = RunConfig::default();
        let mut d = RunConfig::default();
        for (k, v) in c.entries() {
            d.set(k, &v).unwrap();
        }
        assert_eq!(c, d);
    }

    #[test]
    fn rejects_bad_input() {
        for text in [
            "score.learning_rate = 0.1",
            "seed = -1",
            "scenario = spiral",
            "just words",
            "seed = 1\nseed = 2",
            "schedule.sigma_min = 0.5",
            "sim.dt = 0",
            "tangent.k = 0",
            "field.bounds = 1,0,0,1",
            "ablation.disable_dir = maybe",
        ] {
            assert!(matches!(RunConfig::from_text(text), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn schedule_follows_scenario_unless_set() {
        let c = RunConfig::from_text("scenario = separated").unwrap();
        assert_eq!(c.schedule().unwrap(), NoiseSchedule::new(0.15, 0.2).unwrap());
        assert_eq!(RunConfig::default().schedule().unwrap(), NoiseSchedule::default());
        let c = RunConfig::from_text("scenario = separated\nschedule.sigma_max = 0.4").unwrap();
        assert_eq!(c.schedule().unwrap(), NoiseSchedule::new(0.15, 0.4).unwrap());
        assert!(c.to_text().contains("schedule.sigma_min = auto\n"));
        assert_eq!(RunConfig::from_text(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn ablation_variants_remove_one_term_each() {
        let c = RunConfig::default();
        let v = c.ablation_variants();
        assert_eq!(v.each_ref().map(|(n, _)| *n), ["no_unit", "no_orth", "no_dir"]);
        let weights = v.each_ref().map(|(_, c)| {
            let w = c.tangent_config().weights();
            [w.unit, w.orth, w.dir]
        });
        assert_eq!(weights, [[0.0, 1.0, 1.0], [1.0, 0.0, 1.0], [1.0, 1.0, 0.0]]);
        assert!(v.iter().all(|(_, c)| c.tangent.restarts == 1 && c.validate().is_ok()));
    }

    #[test]
    fn comments_and_whitespace() {
        let c = RunConfig::from_text("# run\n\n  seed=7   # trailing\nscenario = polygon\ndata.sides = 6\n").unwrap();
        assert_eq!((c.seed, c.scenario, c.data.sides), (7, Scenario::Polygon, 6));
    }

    #[test]
    fn derived_settings() {
        let mut c = RunConfig::default();
        c.seed = 10;
        c.ablation.disable_dir = true;
        assert_eq!(c.score_config().seed, 11);
        let t = c.tangent_config();
        assert_eq!((t.seed, t.lambda_dir, t.lambda_unit), (12, 0.0, 1.0));
        assert_eq!(t.layer_sizes, SHALLOW_TANGENT.to_vec());
        c.depth = Depth::Deep;
        assert_eq!(c.tangent_config().layer_sizes, DEEP_TANGENT.to_vec());
        let mut moved = c.clone();
        moved.out_dir = PathBuf::from("elsewhere");
        assert_eq!(moved.digest(), c.digest());
        moved.seed = 11;
        assert_ne!(moved.digest(), c.digest());
        assert_eq!(digest_hex(&c.digest()).len(), 64);
    }

    #[test]
    fn scenarios_build() {
        for (name, branches, corners) in [("circle", 1, 0), ("concentric", 2, 0), ("separated", 2, 0), ("polygon", 1, 4)] {
            let mut c = RunConfig::default();
            c.set("scenario", name).unwrap();
            c.data.n = 64;
            let s = c.scenario_data().unwrap();
            assert_eq!(s.cloud.branch_count(), branches);
            assert_eq!(s.corners.len(), corners);
            assert!(!c.starts().is_empty());
        }
    }
}
