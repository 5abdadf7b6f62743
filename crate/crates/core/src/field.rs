//! The mixed guiding field and its diagnostics.
//!
//! `m(x) = normalize_score(S(x, t_eval), k_s) + v(x)`. Diagnostics measure it
//! against the Lyapunov function `V = -log(p / p_star)` of the analytic
//! waypoint mixture, whose gradient is minus the oracle score.

use std::collections::VecDeque;
use std::path::Path;

use crate::datasets::PointCloud;
use crate::score::{cosine, mixture_log_density, normalize_score, oracle_mixture_score, ScoreModel};
use crate::tangent::TangentModel;
use crate::{Error, Result, Vec2, NORM_FLOOR};

/// Anything that can be integrated or rasterized.
pub trait VectorField {
    fn value(&self, x: Vec2) -> Vec2;

    /// Field value plus the norm of its score component, when it has one.
    fn sample(&self, x: Vec2) -> FieldSample {
        FieldSample { value: self.value(x), score_norm: 0.0 }
    }
}

impl<F: Fn(Vec2) -> Vec2> VectorField for F {
    fn value(&self, x: Vec2) -> Vec2 {
        self(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSample {
    pub value: Vec2,
    pub score_norm: f64,
}

/// Score, tangent and mixed vectors at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Components {
    /// Normalized score.
    pub s: Vec2,
    pub v: Vec2,
    pub m: Vec2,
}

#[derive(Debug, Clone)]
pub struct MixedField {
    pub score: ScoreModel,
    pub tangent: TangentModel,
    pub k_s: f64,
    pub t_eval: f64,
}

impl MixedField {
    pub fn new(score: ScoreModel, tangent: TangentModel, k_s: f64, t_eval: f64) -> Result<Self> {
        if !(k_s > 0.0 && k_s.is_finite()) {
            return Err(Error::Config(format!("k_s must be positive, got {k_s}")));
        }
        if !(0.0..=1.0).contains(&t_eval) {
            return Err(Error::Config(format!("t_eval = {t_eval} is outside [0, 1]")));
        }
        Ok(Self { score, tangent, k_s, t_eval })
    }

    pub fn components(&self, x: Vec2) -> Result<Components> {
        Ok(self.components_batch(&[x])?[0])
    }

    pub fn components_batch(&self, xs: &[Vec2]) -> Result<Vec<Components>> {
        let raw = self.score.eval_batch(xs, self.t_eval)?;
        let tangent = self.tangent.eval_batch(xs)?;
        Ok(raw
            .into_iter()
            .zip(tangent)
            .map(|(r, v)| {
                let s = normalize_score(r, self.k_s);
                Components { s, v, m: s + v }
            })
            .collect())
    }

    pub fn eval(&self, x: Vec2) -> Result<Vec2> {
        Ok(self.components(x)?.m)
    }
}

impl VectorField for MixedField {
    fn value(&self, x: Vec2) -> Vec2 {
        self.sample(x).value
    }

    /// Non-finite inputs yield a NaN value rather than an error.
    fn sample(&self, x: Vec2) -> FieldSample {
        match self.components(x) {
            Ok(c) => FieldSample { value: c.m, score_norm: c.s.norm() },
            Err(_) => FieldSample { value: Vec2::repeat(f64::NAN), score_norm: f64::NAN },
        }
    }
}

/// `V(x) = max(0, log p_star - log p(x))` for the waypoint mixture at `sigma`,
/// with `p_star` the largest density over the waypoints themselves.
#[derive(Debug, Clone)]
pub struct Lyapunov {
    points: Vec<Vec2>,
    sigma: f64,
    log_p_star: f64,
}

impl Lyapunov {
    pub fn new(points: &[Vec2], sigma: f64) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Input("no waypoints".into()));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Config(format!("sigma must be positive, got {sigma}")));
        }
        let log_p_star = points
            .iter()
            .map(|&p| mixture_log_density(points, sigma, p))
            .fold(f64::NEG_INFINITY, f64::max);
        Ok(Self { points: points.to_vec(), sigma, log_p_star })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn log_p_star(&self) -> f64 {
        self.log_p_star
    }

    pub fn value(&self, x: Vec2) -> f64 {
        (self.log_p_star - mixture_log_density(&self.points, self.sigma, x)).max(0.0)
    }

    /// `grad log p`, i.e. `-grad V` wherever `V > 0`.
    pub fn score(&self, x: Vec2) -> Vec2 {
        oracle_mixture_score(&self.points, self.sigma, x)
    }
}

pub fn lyapunov_value(waypoints: &PointCloud, sigma: f64, x: Vec2) -> Result<f64> {
    Ok(Lyapunov::new(waypoints.points(), sigma)?.value(x))
}

/// `dV/dt = -s . m` along `x' = m` when `grad V = -s`.
pub fn lyapunov_rate(s: Vec2, m: Vec2) -> f64 {
    -s.dot(&m)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobustnessMargin {
    /// `|s . v| / (|s| |v|)`, zero when either norm is below the floor.
    pub epsilon: f64,
    /// `-|s|^2 + epsilon |s| |v|`, an upper bound on `lyapunov_rate(s, s + v)`.
    pub bound: f64,
}

/// Cosine error between `s` and `v` and the resulting bound on `dV/dt`.
///
/// The bound is `-(1 - epsilon |v| / |s|) |s|^2`. The tighter-looking
/// [`unit_score_bound`] only holds when `|s| >= 1`.
pub fn robustness_margin(s: Vec2, v: Vec2) -> RobustnessMargin {
    let epsilon = cosine(s, v).abs();
    let bound = -s.norm_squared() + epsilon * s.norm() * v.norm();
    RobustnessMargin { epsilon, bound }
}

/// `-(1 - epsilon |v|) |s|^2`. Agrees with [`robustness_margin`] at `|s| = 1`
/// and is a valid bound for `|s| >= 1`, but can be violated when `|s| < 1`.
pub fn unit_score_bound(s: Vec2, v: Vec2) -> f64 {
    let epsilon = cosine(s, v).abs();
    -(1.0 - epsilon * v.norm()) * s.norm_squared()
}

/// Axis-aligned rectangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Bounds {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Result<Self> {
        let all = [x_min, x_max, y_min, y_max];
        if all.iter().any(|v| !v.is_finite()) || x_min >= x_max || y_min >= y_max {
            return Err(Error::Config(format!("invalid bounds [{x_min}, {x_max}] x [{y_min}, {y_max}]")));
        }
        Ok(Self { x_min, x_max, y_min, y_max })
    }

    /// Bounding box of the waypoints grown by `margin` on every side.
    pub fn around(cloud: &PointCloud, margin: f64) -> Result<Self> {
        let (lo, hi) = cloud.bounding_box();
        Self::new(lo.x - margin, hi.x + margin, lo.y - margin, hi.y + margin)
    }
}

/// Grid resolution, at least 2 points per axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Resolution {
    pub nx: usize,
    pub ny: usize,
}

impl Resolution {
    pub fn new(nx: usize, ny: usize) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return Err(Error::Config(format!("grid resolution must be at least 2x2, got {nx}x{ny}")));
        }
        Ok(Self { nx, ny })
    }

    pub fn square(n: usize) -> Result<Self> {
        Self::new(n, n)
    }
}

/// Field values on a regular grid including the boundary, stored row-major
/// with `y` as the outer index.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldGrid {
    pub bounds: Bounds,
    pub resolution: Resolution,
    pub vectors: Vec<Vec2>,
    pub norms: Vec<f64>,
}

impl FieldGrid {
    pub fn point(bounds: &Bounds, res: Resolution, i: usize, j: usize) -> Vec2 {
        let fx = i as f64 / (res.nx - 1) as f64;
        let fy = j as f64 / (res.ny - 1) as f64;
        Vec2::new(
            bounds.x_min + fx * (bounds.x_max - bounds.x_min),
            bounds.y_min + fy * (bounds.y_max - bounds.y_min),
        )
    }

    pub fn points(bounds: &Bounds, res: Resolution) -> Vec<Vec2> {
        (0..res.ny)
            .flat_map(|j| (0..res.nx).map(move |i| (i, j)))
            .map(|(i, j)| Self::point(bounds, res, i, j))
            .collect()
    }

    pub fn from_vectors(bounds: Bounds, resolution: Resolution, vectors: Vec<Vec2>) -> Result<Self> {
        if vectors.len() != resolution.nx * resolution.ny {
            return Err(Error::Shape(format!(
                "{} vectors for a {}x{} grid",
                vectors.len(),
                resolution.nx,
                resolution.ny
            )));
        }
        let norms = vectors.iter().map(|v| v.norm()).collect();
        Ok(Self { bounds, resolution, vectors, norms })
    }

    pub fn evaluate<F: VectorField + ?Sized>(field: &F, bounds: Bounds, resolution: Resolution) -> Self {
        let vectors = Self::points(&bounds, resolution).into_iter().map(|p| field.value(p)).collect();
        Self::from_vectors(bounds, resolution, vectors).expect("grid sized from its resolution")
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.resolution.nx + i
    }

    pub fn median_norm(&self) -> f64 {
        median(&self.norms)
    }

    /// Header `x,y,ux,uy,norm`, rows ordered by `y` then `x`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = String::from("x,y,ux,uy,norm\n");
        for (p, (v, n)) in Self::points(&self.bounds, self.resolution).iter().zip(self.vectors.iter().zip(&self.norms)) {
            out.push_str(&format!("{},{},{},{},{}\n", p.x, p.y, v.x, v.y, n));
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    /// Reads a grid written by [`FieldGrid::write_csv`]; bounds and
    /// resolution are recovered from the coordinates.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let bad = |line: usize, msg: String| Error::Csv { path: path.to_path_buf(), line: line as u64, msg };
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("x,y,ux,uy,norm") {
            return Err(bad(1, "expected header x,y,ux,uy,norm".into()));
        }
        let mut rows = Vec::new();
        for (k, line) in lines.enumerate() {
            let vals: Vec<f64> = line
                .split(',')
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| bad(k + 2, e.to_string()))?;
            if vals.len() != 5 {
                return Err(bad(k + 2, format!("expected 5 columns, found {}", vals.len())));
            }
            rows.push(vals);
        }
        if rows.len() < 4 {
            return Err(bad(rows.len() + 1, "a grid needs at least 2x2 rows".into()));
        }
        let y0 = rows[0][1];
        let nx = rows.iter().take_while(|r| r[1] == y0).count();
        if nx < 2 || rows.len() % nx != 0 {
            return Err(bad(nx + 2, format!("{} rows do not form a grid with {nx} columns", rows.len())));
        }
        let ny = rows.len() / nx;
        let last = &rows[rows.len() - 1];
        let bounds = Bounds::new(rows[0][0], last[0], y0, last[1])?;
        let resolution = Resolution::new(nx, ny)?;
        let vectors = rows.iter().map(|r| Vec2::new(r[2], r[3])).collect();
        let norms = rows.iter().map(|r| r[4]).collect();
        Ok(Self { bounds, resolution, vectors, norms })
    }
}

/// Evaluates the field on a grid and writes it as CSV.
pub fn export_field_grid<F: VectorField + ?Sized>(
    field: &F,
    bounds: Bounds,
    resolution: Resolution,
    path: impl AsRef<Path>,
) -> Result<FieldGrid> {
    let grid = FieldGrid::evaluate(field, bounds, resolution);
    grid.write_csv(path)?;
    Ok(grid)
}

pub(crate) fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// A 4-connected patch of grid cells where the field nearly vanishes.
#[derive(Debug, Clone, PartialEq)]
pub struct SingularComponent {
    pub cells: Vec<(usize, usize)>,
    pub centroid: Vec2,
    pub min_norm: f64,
}

/// Default vanishing threshold: 5% of the median grid norm.
pub fn default_threshold(grid: &FieldGrid) -> f64 {
    0.05 * grid.median_norm()
}

pub fn scan_singularities<F: VectorField + ?Sized>(
    field: &F,
    bounds: Bounds,
    resolution: Resolution,
    norm_threshold: f64,
) -> Result<Vec<SingularComponent>> {
    scan_grid(&FieldGrid::evaluate(field, bounds, resolution), norm_threshold)
}

/// Connected components of `{cells : norm < threshold}`.
pub fn scan_grid(grid: &FieldGrid, norm_threshold: f64) -> Result<Vec<SingularComponent>> {
    if !(norm_threshold > 0.0) {
        return Err(Error::Config(format!("threshold must be positive, got {norm_threshold}")));
    }
    let Resolution { nx, ny } = grid.resolution;
    let below: Vec<bool> = grid.norms.iter().map(|&n| n < norm_threshold).collect();
    let mut seen = vec![false; nx * ny];
    let mut out = Vec::new();
    for start in 0..nx * ny {
        if !below[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        let mut queue = VecDeque::from([(start % nx, start / nx)]);
        let mut cells = Vec::new();
        while let Some((i, j)) = queue.pop_front() {
            cells.push((i, j));
            let mut visit = |a: usize, b: usize| {
                let k = grid.index(a, b);
                if below[k] && !seen[k] {
                    seen[k] = true;
                    queue.push_back((a, b));
                }
            };
            if i > 0 {
                visit(i - 1, j);
            }
            if i + 1 < nx {
                visit(i + 1, j);
            }
            if j > 0 {
                visit(i, j - 1);
            }
            if j + 1 < ny {
                visit(i, j + 1);
            }
        }
        let centroid = cells
            .iter()
            .map(|&(i, j)| FieldGrid::point(&grid.bounds, grid.resolution, i, j))
            .sum::<Vec2>()
            / cells.len() as f64;
        let min_norm = cells.iter().map(|&(i, j)| grid.norms[grid.index(i, j)]).fold(f64::INFINITY, f64::min);
        out.push(SingularComponent { cells, centroid, min_norm });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    CounterClockwise,
    Clockwise,
}

/// Level-set guiding field for the circle `|x - c| = R`:
/// `u = T - k_n phi grad phi` with `phi = |x - c|^2 - R^2` and `T` the unit
/// rotation of `grad phi` by +90 degrees (counterclockwise) or -90.
pub fn classical_gvf_circle(x: Vec2, center: Vec2, radius: f64, k_n: f64, orientation: Orientation) -> Vec2 {
    let d = x - center;
    let phi = d.norm_squared() - radius * radius;
    let grad = 2.0 * d;
    let n = grad.norm();
    if n < NORM_FLOOR {
        return Vec2::zeros();
    }
    let rotated = match orientation {
        Orientation::CounterClockwise => Vec2::new(-grad.y, grad.x),
        Orientation::Clockwise => Vec2::new(grad.y, -grad.x),
    };
    rotated / n - k_n * phi * grad
}

/// One row of a [`DiagnosticsReport`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagnosticRecord {
    pub x: Vec2,
    pub s_norm: f64,
    pub v_norm: f64,
    pub m_norm: f64,
    pub cos_sv: f64,
    pub v: f64,
    /// `-grad log p . m` with the analytic mixture score.
    pub v_dot: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsSummary {
    pub samples: usize,
    pub mean_abs_cos_sv: f64,
    pub mean_m_norm: f64,
    pub std_m_norm: f64,
    pub max_v_dot: f64,
    pub fraction_v_dot_nonpositive: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsReport {
    pub records: Vec<DiagnosticRecord>,
    pub summary: DiagnosticsSummary,
    pub singularities: Vec<SingularComponent>,
}

pub fn diagnose(field: &MixedField, lyapunov: &Lyapunov, samples: &[Vec2]) -> Result<DiagnosticsReport> {
    if samples.is_empty() {
        return Err(Error::Input("no diagnostic samples".into()));
    }
    let comps = field.components_batch(samples)?;
    let records: Vec<DiagnosticRecord> = samples
        .iter()
        .zip(&comps)
        .map(|(&x, c)| DiagnosticRecord {
            x,
            s_norm: c.s.norm(),
            v_norm: c.v.norm(),
            m_norm: c.m.norm(),
            cos_sv: cosine(c.s, c.v),
            v: lyapunov.value(x),
            v_dot: lyapunov_rate(lyapunov.score(x), c.m),
        })
        .collect();
    let n = records.len() as f64;
    let mean_m = records.iter().map(|r| r.m_norm).sum::<f64>() / n;
    let summary = DiagnosticsSummary {
        samples: records.len(),
        mean_abs_cos_sv: records.iter().map(|r| r.cos_sv.abs()).sum::<f64>() / n,
        mean_m_norm: mean_m,
        std_m_norm: (records.iter().map(|r| (r.m_norm - mean_m).powi(2)).sum::<f64>() / n).sqrt(),
        max_v_dot: records.iter().map(|r| r.v_dot).fold(f64::NEG_INFINITY, f64::max),
        fraction_v_dot_nonpositive: records.iter().filter(|r| r.v_dot <= 0.0).count() as f64 / n,
    };
    Ok(DiagnosticsReport { records, summary, singularities: Vec::new() })
}

impl DiagnosticsReport {
    /// Header `x,y,s_norm,v_norm,m_norm,cos_sv,V,V_dot`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = String::from("x,y,s_norm,v_norm,m_norm,cos_sv,V,V_dot\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.x.x, r.x.y, r.s_norm, r.v_norm, r.m_norm, r.cos_sv, r.v, r.v_dot
            ));
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

/// Measurable effects of each tangent loss term, taken on on-path samples.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationProxies {
    pub samples: usize,
    /// Standard deviation of `|m|`.
    pub std_m_norm: f64,
    pub mean_abs_cos_sv: f64,
    /// Pairs closer than the pair radius whose tangents point apart.
    pub opposed_pairs: usize,
    /// Smallest tangent cosine over pairs closer than the pair radius.
    pub min_pair_cos: f64,
}

pub fn ablation_proxies(field: &MixedField, on_path: &[Vec2], pair_radius: f64) -> Result<AblationProxies> {
    if on_path.is_empty() {
        return Err(Error::Input("no on-path samples".into()));
    }
    let comps = field.components_batch(on_path)?;
    let n = comps.len() as f64;
    let norms: Vec<f64> = comps.iter().map(|c| c.m.norm()).collect();
    let mean = norms.iter().sum::<f64>() / n;
    let mut opposed_pairs = 0;
    let mut min_pair_cos = f64::INFINITY;
    for i in 0..on_path.len() {
        for j in i + 1..on_path.len() {
            if (on_path[i] - on_path[j]).norm() < pair_radius {
                let c = cosine(comps[i].v, comps[j].v);
                min_pair_cos = min_pair_cos.min(c);
                if c < 0.0 {
                    opposed_pairs += 1;
                }
            }
        }
    }
    Ok(AblationProxies {
        samples: comps.len(),
        std_m_norm: (norms.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / n).sqrt(),
        mean_abs_cos_sv: comps.iter().map(|c| cosine(c.s, c.v).abs()).sum::<f64>() / n,
        opposed_pairs,
        min_pair_cos,
    })
}

impl AblationProxies {
    pub fn to_key_values(&self) -> String {
        format!(
            "samples={}\nstd_m_norm={}\nmean_abs_cos_sv={}\nopposed_pairs={}\nmin_pair_cos={}\n",
            self.samples, self.std_m_norm, self.mean_abs_cos_sv, self.opposed_pairs, self.min_pair_cos
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::gen_circle;
    use crate::nn::Mlp;
    use crate::score::NoiseSchedule;

    fn zero_tangent() -> TangentModel {
        TangentModel::new(Mlp::zeros(&[2, 4, 2]).unwrap()).unwrap()
    }

    #[test]
    fn zero_tangent_gives_normalized_score() {
        let score = ScoreModel::new(Mlp::new(&[3, 8, 2], 1).unwrap(), NoiseSchedule::default()).unwrap();
        let mf = MixedField::new(score.clone(), zero_tangent(), 0.2, 1.0).unwrap();
        let x = Vec2::new(0.4, -0.3);
        assert_eq!(mf.eval(x).unwrap(), normalize_score(score.eval(x, 1.0).unwrap(), 0.2));
        let zero = MixedField::new(
            ScoreModel::new(Mlp::zeros(&[3, 4, 2]).unwrap(), NoiseSchedule::default()).unwrap(),
            zero_tangent(),
            0.2,
            1.0,
        )
        .unwrap();
        assert_eq!(zero.eval(x).unwrap(), Vec2::zeros());
    }

    #[test]
    fn lyapunov_examples() {
        let z = Vec2::new(0.5, 0.5);
        let one = PointCloud::new(vec![z], None, "one").unwrap();
        assert_eq!(lyapunov_value(&one, 0.3, z).unwrap(), 0.0);
        let d = 0.7;
        let v = lyapunov_value(&one, 0.3, z + Vec2::new(0.0, d)).unwrap();
        assert!((v - d * d / (2.0 * 0.09)).abs() < 1e-12);

        let cloud = gen_circle(Vec2::zeros(), 1.0, 64, 0.05, 3).unwrap();
        let lyap = Lyapunov::new(cloud.points(), 0.3).unwrap();
        let argmax = cloud
            .points()
            .iter()
            .copied()
            .max_by(|a, b| mixture_log_density(cloud.points(), 0.3, *a).total_cmp(&mixture_log_density(cloud.points(), 0.3, *b)))
            .unwrap();
        assert_eq!(lyap.value(argmax), 0.0);
        let bounds = Bounds::new(-3.0, 3.0, -3.0, 3.0).unwrap();
        for p in FieldGrid::points(&bounds, Resolution::square(31).unwrap()) {
            assert!(lyap.value(p) >= 0.0);
        }
    }

    #[test]
    fn lyapunov_rate_examples() {
        assert_eq!(lyapunov_rate(Vec2::zeros(), Vec2::new(3.0, 1.0)), 0.0);
        let s = Vec2::new(1.0, 0.0);
        assert_eq!(lyapunov_rate(s, s + Vec2::new(0.0, 1.0)), -1.0);
        assert!((lyapunov_rate(s, s + Vec2::new(0.1, 1.0)) + 1.1).abs() < 1e-15);
    }

    #[test]
    fn robustness_examples() {
        let s = Vec2::new(1.0, 0.0);
        let r = robustness_margin(Vec2::new(0.0, 2.0), Vec2::new(3.0, 0.0));
        assert_eq!((r.epsilon, r.bound), (0.0, -4.0));

        let r = robustness_margin(s, s);
        assert_eq!((r.epsilon, r.bound), (1.0, 0.0));
        assert!(lyapunov_rate(s, s + s) <= r.bound);

        let v = Vec2::new(0.1, 1.0);
        let r = robustness_margin(s, v);
        assert!((r.epsilon - 0.1 / 1.01f64.sqrt()).abs() < 1e-15);
        assert!((r.epsilon - 0.099_50).abs() < 1e-5);
        assert!((r.bound + 0.9).abs() < 1e-12);
        assert!((unit_score_bound(s, v) + 0.9).abs() < 1e-12);
        assert!(lyapunov_rate(s, s + v) <= r.bound);
    }

    #[test]
    fn unit_score_bound_needs_unit_scale() {
        // |s| < 1 with a cross term pointing against s
        let s = Vec2::new(0.1, 0.0);
        let v = Vec2::new(-0.5, 0.5);
        let rate = lyapunov_rate(s, s + v);
        assert!((rate - 0.04).abs() < 1e-15);
        assert!(rate > unit_score_bound(s, v));
        assert!(rate <= robustness_margin(s, v).bound + 1e-15);
    }

    #[test]
    fn classical_circle_examples() {
        let c = Vec2::zeros();
        let on = Vec2::new(0.6, 0.8);
        let u = classical_gvf_circle(on, c, 1.0, 0.5, Orientation::CounterClockwise);
        assert!((u - Vec2::new(-0.8, 0.6)).norm() < 1e-12);
        assert_eq!(classical_gvf_circle(c, c, 1.0, 0.5, Orientation::CounterClockwise), Vec2::zeros());
        let u = classical_gvf_circle(Vec2::new(2.0, 0.0), c, 1.0, 0.5, Orientation::CounterClockwise);
        assert_eq!(u, Vec2::new(-6.0, 1.0));
        let u = classical_gvf_circle(Vec2::new(2.0, 0.0), c, 1.0, 0.5, Orientation::Clockwise);
        assert_eq!(u, Vec2::new(-6.0, -1.0));
    }

    #[test]
    fn scan_examples() {
        let bounds = Bounds::new(-1.5, 1.5, -1.5, 1.5).unwrap();
        let res = Resolution::square(31).unwrap();
        let constant = |_: Vec2| Vec2::new(1.0, 0.0);
        assert!(scan_singularities(&constant, bounds, res, 0.05).unwrap().is_empty());

        let pair = [Vec2::new(1.0, 0.0), Vec2::new(-1.0, 0.0)];
        let oracle = |x: Vec2| oracle_mixture_score(&pair, 1.0, x);
        let grid = FieldGrid::evaluate(&oracle, bounds, res);
        let comps = scan_grid(&grid, default_threshold(&grid)).unwrap();
        assert!(comps.iter().any(|c| c.cells.contains(&(15, 15))), "{comps:?}");

        let circle = gen_circle(Vec2::new(0.2, -0.1), 1.0, 128, 0.0, 0).unwrap();
        let oracle = |x: Vec2| oracle_mixture_score(circle.points(), 0.3, x);
        let grid = FieldGrid::evaluate(&oracle, bounds, res);
        let comps = scan_grid(&grid, default_threshold(&grid)).unwrap();
        let cell = 3.0 / 30.0;
        assert!(comps.iter().any(|c| (c.centroid - Vec2::new(0.2, -0.1)).norm() <= cell), "{comps:?}");
        assert!(scan_grid(&grid, 0.0).is_err());
    }

    #[test]
    fn components_are_four_connected() {
        let bounds = Bounds::new(0.0, 2.0, 0.0, 2.0).unwrap();
        let res = Resolution::square(3).unwrap();
        // zeros on the diagonal only: three separate components
        let mut vectors = vec![Vec2::new(1.0, 0.0); 9];
        for k in 0..3 {
            vectors[k * 3 + k] = Vec2::zeros();
        }
        let grid = FieldGrid::from_vectors(bounds, res, vectors).unwrap();
        let comps = scan_grid(&grid, 0.5).unwrap();
        assert_eq!(comps.len(), 3);
        assert!(comps.iter().all(|c| c.cells.len() == 1));
    }

    #[test]
    fn grid_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.csv");
        let bounds = Bounds::new(0.0, 1.0, 0.0, 1.0).unwrap();
        let grid = export_field_grid(&|_: Vec2| Vec2::new(1.0, 0.0), bounds, Resolution::square(2).unwrap(), &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let rows: Vec<&str> = text.lines().skip(1).collect();
        assert_eq!(rows.len(), 4);
        assert!(rows.iter().all(|r| r.ends_with("1,0,1")));
        assert_eq!(FieldGrid::read_csv(&path).unwrap(), grid);

        let zero = FieldGrid::evaluate(&|_: Vec2| Vec2::zeros(), bounds, Resolution::new(4, 3).unwrap());
        assert!(zero.norms.iter().all(|&n| n == 0.0));

        let noisy = |x: Vec2| Vec2::new((3.0 * x.x).sin(), x.y.exp()) * 1.234_567_890_123;
        let b = Bounds::new(-1.3, 2.7, -0.4, 0.9).unwrap();
        let g = export_field_grid(&noisy, b, Resolution::new(7, 5).unwrap(), &path).unwrap();
        let back = FieldGrid::read_csv(&path).unwrap();
        assert_eq!(back.resolution, g.resolution);
        for (a, b) in back.vectors.iter().zip(&g.vectors) {
            assert!((a - b).norm() <= 1e-15);
        }
    }
}
