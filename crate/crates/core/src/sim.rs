//! Kinematic agents `x' = m(x)` and path-following metrics.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::field::VectorField;
use crate::{Error, Result, Vec2};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Euler,
    Rk4,
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler" => Ok(Self::Euler),
            "rk4" => Ok(Self::Rk4),
            other => Err(Error::Config(format!("unknown integrator '{other}' (expected euler or rk4)"))),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Euler => "euler",
            Self::Rk4 => "rk4",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct State {
    pub t: f64,
    pub x: Vec2,
    /// Field value at `x`.
    pub m: Vec2,
    pub s_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<State>,
    pub dt: f64,
    pub method: Method,
    /// Step at which the state stopped being finite. `states` ends before it.
    pub diverged_at: Option<usize>,
}

impl Trajectory {
    /// Wraps a list of positions with zero field values, for metric tests and
    /// externally produced paths.
    pub fn from_positions(positions: &[Vec2], dt: f64) -> Self {
        let states = positions
            .iter()
            .enumerate()
            .map(|(n, &x)| State { t: n as f64 * dt, x, m: Vec2::zeros(), s_norm: 0.0 })
            .collect();
        Self { states, dt, method: Method::Euler, diverged_at: None }
    }

    pub fn positions(&self) -> Vec<Vec2> {
        self.states.iter().map(|s| s.x).collect()
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn last(&self) -> Option<&State> {
        self.states.last()
    }

    /// Header `t,x,y,ux,uy,s_norm`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = String::from("t,x,y,ux,uy,s_norm\n");
        for s in &self.states {
            out.push_str(&format!("{},{},{},{},{},{}\n", s.t, s.x.x, s.x.y, s.m.x, s.m.y, s.s_norm));
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOptions {
    pub dt: f64,
    pub steps: usize,
    pub method: Method,
    /// `(step, position)`: before taking `step`, the agent is moved to
    /// `position`. Replaces manual branch switching.
    pub teleports: Vec<(usize, Vec2)>,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self { dt: 0.01, steps: 5000, method: Method::Rk4, teleports: Vec::new() }
    }
}

impl SimOptions {
    pub fn new(dt: f64, steps: usize, method: Method) -> Result<Self> {
        let opts = Self { dt, steps, method, teleports: Vec::new() };
        opts.validate()?;
        Ok(opts)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if self.steps == 0 {
            return Err(Error::Config("steps must be at least 1".into()));
        }
        if let Some((_, p)) = self.teleports.iter().find(|(_, p)| !(p.x.is_finite() && p.y.is_finite())) {
            return Err(Error::Config(format!("teleport target ({}, {}) is not finite", p.x, p.y)));
        }
        Ok(())
    }
}

/// Integrates `x' = field(x)` from `x0`, recording `steps + 1` states.
///
/// A non-finite state or field value ends the run early with
/// `diverged_at` set; this is not an error.
pub fn integrate<F: VectorField + ?Sized>(field: &F, x0: Vec2, opts: &SimOptions) -> Result<Trajectory> {
    opts.validate()?;
    if !(x0.x.is_finite() && x0.y.is_finite()) {
        return Err(Error::Input("start point is not finite".into()));
    }
    let dt = opts.dt;
    let mut states = Vec::with_capacity(opts.steps + 1);
    let mut x = x0;
    let mut diverged_at = None;
    for n in 0..=opts.steps {
        if let Some(&(_, p)) = opts.teleports.iter().rev().find(|(k, _)| *k == n) {
            x = p;
        }
        let here = field.sample(x);
        if !(finite(x) && finite(here.value)) {
            diverged_at = Some(n);
            break;
        }
        states.push(State { t: n as f64 * dt, x, m: here.value, s_norm: here.score_norm });
        if n == opts.steps {
            break;
        }
        x = match opts.method {
            Method::Euler => x + dt * here.value,
            Method::Rk4 => {
                let k1 = here.value;
                let k2 = field.value(x + 0.5 * dt * k1);
                let k3 = field.value(x + 0.5 * dt * k2);
                let k4 = field.value(x + dt * k3);
                x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            }
        };
    }
    Ok(Trajectory { states, dt, method: opts.method, diverged_at })
}

fn finite(v: Vec2) -> bool {
    v.x.is_finite() && v.y.is_finite()
}

/// Distance from `x` to the nearest waypoint. Infinite for an empty set.
pub fn distance_to_waypoints(x: Vec2, waypoints: &[Vec2]) -> f64 {
    waypoints.iter().map(|w| (x - w).norm()).fold(f64::INFINITY, f64::min)
}

/// Signed winding angle of `positions` about `center`.
pub fn angle_swept(positions: &[Vec2], center: Vec2) -> Result<f64> {
    if positions.len() < 2 {
        return Err(Error::Input("angle_swept needs at least 2 states".into()));
    }
    if let Some(k) = positions.iter().position(|&p| p == center) {
        return Err(Error::Geometry(format!("state {k} sits on the center")));
    }
    Ok(positions
        .windows(2)
        .map(|w| {
            let a = w[0] - center;
            let b = w[1] - center;
            let mut d = b.y.atan2(b.x) - a.y.atan2(a.x);
            if d > PI {
                d -= 2.0 * PI;
            } else if d <= -PI {
                d += 2.0 * PI;
            }
            d
        })
        .sum())
}

/// Adherence below this is flagged ambiguous.
pub const AMBIGUOUS_ADHERENCE: f64 = 0.8;

#[derive(Debug, Clone, PartialEq)]
pub struct BranchAssignment {
    pub branch: Option<usize>,
    pub adherence: f64,
    pub ambiguous: bool,
}

/// Majority branch over the second half of the states, with the fraction of
/// those states nearest to it. Ties go to the lower index.
pub fn assign_branch(positions: &[Vec2], branches: &[Vec<Vec2>]) -> Result<BranchAssignment> {
    if branches.is_empty() || branches.iter().any(|b| b.is_empty()) {
        return Err(Error::Input("assign_branch needs non-empty branch sets".into()));
    }
    let tail = &positions[positions.len() / 2..];
    if tail.is_empty() {
        return Ok(BranchAssignment { branch: None, adherence: 0.0, ambiguous: true });
    }
    let mut counts = vec![0usize; branches.len()];
    for &x in tail {
        let nearest = branches
            .iter()
            .map(|b| distance_to_waypoints(x, b))
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(k, _)| k)
            .expect("at least one branch");
        counts[nearest] += 1;
    }
    let (best, &count) = counts.iter().enumerate().rev().max_by_key(|(_, c)| **c).expect("non-empty");
    let adherence = count as f64 / tail.len() as f64;
    Ok(BranchAssignment { branch: Some(best), adherence, ambiguous: adherence < AMBIGUOUS_ADHERENCE })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StallParams {
    pub speed_threshold: f64,
    pub window: usize,
    pub corner_radius: f64,
}

impl Default for StallParams {
    fn default() -> Self {
        Self { speed_threshold: 0.1, window: 100, corner_radius: 0.15 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StallEvent {
    pub start: usize,
    pub len: usize,
}

/// Maximal runs of at least `window` states that are slow and near a corner.
pub fn detect_stalls(traj: &Trajectory, corners: &[Vec2], params: &StallParams) -> Result<Vec<StallEvent>> {
    if params.window < 2 {
        return Err(Error::Config(format!("stall window must be at least 2, got {}", params.window)));
    }
    let stalled = |s: &State| {
        s.m.norm() < params.speed_threshold && distance_to_waypoints(s.x, corners) < params.corner_radius
    };
    let mut events = Vec::new();
    let mut run_start = None;
    for (k, s) in traj.states.iter().enumerate() {
        match (stalled(s), run_start) {
            (true, None) => run_start = Some(k),
            (false, Some(start)) => {
                if k - start >= params.window {
                    events.push(StallEvent { start, len: k - start });
                }
                run_start = None;
            }
            _ => {}
        }
    }
    if let Some(start) = run_start {
        let len = traj.states.len() - start;
        if len >= params.window {
            events.push(StallEvent { start, len });
        }
    }
    Ok(events)
}

/// What a trajectory is measured against.
#[derive(Debug, Clone, Default)]
pub struct MetricContext {
    pub waypoints: Vec<Vec2>,
    /// Winding centers. With one per branch, the angle is taken about the
    /// center of the assigned branch; a single center is used as is; none
    /// skips the angle.
    pub centers: Vec<Vec2>,
    /// Per-branch waypoints; skipped when empty.
    pub branches: Vec<Vec<Vec2>>,
    pub corners: Vec<Vec2>,
    pub stall: StallParams,
    /// Fraction of the trajectory, taken from the end, averaged into
    /// `mean_band_distance`.
    pub band_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathMetrics {
    pub final_distance: f64,
    pub mean_band_distance: f64,
    pub angle_swept: f64,
    pub stall_events: Vec<StallEvent>,
    pub branch: Option<BranchAssignment>,
    pub diverged: bool,
}

impl PathMetrics {
    pub fn evaluate(traj: &Trajectory, ctx: &MetricContext) -> Result<Self> {
        if traj.is_empty() {
            return Err(Error::Input("empty trajectory".into()));
        }
        if ctx.waypoints.is_empty() {
            return Err(Error::Input("no waypoints".into()));
        }
        if !(ctx.band_fraction > 0.0 && ctx.band_fraction <= 1.0) {
            return Err(Error::Config(format!("band fraction must be in (0, 1], got {}", ctx.band_fraction)));
        }
        let positions = traj.positions();
        let dist: Vec<f64> = positions.iter().map(|&x| distance_to_waypoints(x, &ctx.waypoints)).collect();
        let tail = ((positions.len() as f64 * ctx.band_fraction).ceil() as usize).clamp(1, positions.len());
        let band = &dist[dist.len() - tail..];
        let branch = if ctx.branches.is_empty() { None } else { Some(assign_branch(&positions, &ctx.branches)?) };
        let center = match (ctx.centers.len(), branch.as_ref().and_then(|b| b.branch)) {
            (0, _) => None,
            (1, _) => Some(ctx.centers[0]),
            (n, Some(k)) if n == ctx.branches.len() => Some(ctx.centers[k]),
            _ => None,
        };
        let angle = match center {
            Some(c) if positions.len() >= 2 => angle_swept(&positions, c)?,
            _ => 0.0,
        };
        let stall_events = if ctx.corners.is_empty() { Vec::new() } else { detect_stalls(traj, &ctx.corners, &ctx.stall)? };
        Ok(Self {
            final_distance: dist[dist.len() - 1],
            mean_band_distance: band.iter().sum::<f64>() / band.len() as f64,
            angle_swept: angle,
            stall_events,
            branch,
            diverged: traj.diverged_at.is_some(),
        })
    }

    pub fn to_key_values(&self) -> String {
        let mut out = format!(
            "final_distance={}\nmean_band_distance={}\nangle_swept={}\nstall_events={}\n",
            self.final_distance,
            self.mean_band_distance,
            self.angle_swept,
            self.stall_events.len()
        );
        let spans: Vec<String> = self.stall_events.iter().map(|e| format!("{}:{}", e.start, e.len)).collect();
        out.push_str(&format!("stall_spans={}\n", spans.join(";")));
        match &self.branch {
            Some(b) => out.push_str(&format!(
                "branch_id={}\nbranch_adherence={}\nbranch_ambiguous={}\n",
                b.branch.map_or("none".to_string(), |k| k.to_string()),
                b.adherence,
                b.ambiguous
            )),
            None => out.push_str("branch_id=none\n"),
        }
        out.push_str(&format!("diverged={}\n", self.diverged));
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_key_values())?;
        Ok(())
    }
}
