//! Waypoint clouds: the scenario generators and CSV persistence.
//!
//! CSV layout is a header `x,y` or `x,y,branch` followed by one point per row.

use std::f64::consts::PI;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::rng::{self, Rng};
use crate::{Error, Result, Vec2};

/// An unordered set of planar waypoints, optionally split into labelled branches.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Vec2>,
    labels: Option<Vec<usize>>,
    pub name: String,
}

impl PointCloud {
    pub fn new(points: Vec<Vec2>, labels: Option<Vec<usize>>, name: impl Into<String>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Input("a point cloud needs at least one point".into()));
        }
        if let Some(i) = points.iter().position(|p| !(p.x.is_finite() && p.y.is_finite())) {
            return Err(Error::Input(format!("point {i} is not finite")));
        }
        if let Some(labels) = &labels {
            if labels.len() != points.len() {
                return Err(Error::Input(format!("{} labels for {} points", labels.len(), points.len())));
            }
            let branches = labels.iter().max().unwrap() + 1;
            let mut seen = vec![false; branches];
            labels.iter().for_each(|&l| seen[l] = true);
            if let Some(missing) = seen.iter().position(|s| !s) {
                return Err(Error::Input(format!("branch {missing} has no points")));
            }
        }
        Ok(Self { points, labels, name: name.into() })
    }

    pub fn points(&self) -> &[Vec2] {
        &self.points
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn branch_count(&self) -> usize {
        self.labels.as_ref().map_or(1, |l| l.iter().max().unwrap() + 1)
    }

    /// Points grouped by branch label; a single group when unlabelled.
    pub fn branches(&self) -> Vec<Vec<Vec2>> {
        match &self.labels {
            None => vec![self.points.clone()],
            Some(labels) => {
                let mut out = vec![Vec::new(); self.branch_count()];
                for (p, &l) in self.points.iter().zip(labels) {
                    out[l].push(*p);
                }
                out
            }
        }
    }

    /// Points sorted lexicographically by `(x, y)`; equal for any two
    /// orderings of the same multiset.
    pub fn canonical_points(&self) -> Vec<Vec2> {
        let mut pts = self.points.clone();
        pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
        pts
    }

    /// `(min, max)` corners of the axis-aligned bounding box.
    pub fn bounding_box(&self) -> (Vec2, Vec2) {
        let mut lo = self.points[0];
        let mut hi = self.points[0];
        for p in &self.points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        (lo, hi)
    }
}

fn push_circle(out: &mut Vec<Vec2>, center: Vec2, radius: f64, n: usize, jitter_sigma: f64, rng: &mut Rng) {
    for i in 0..n {
        let theta = 2.0 * PI * i as f64 / n as f64;
        let mut p = center + radius * Vec2::new(theta.cos(), theta.sin());
        if jitter_sigma > 0.0 {
            p += jitter_sigma * rng::normal2(rng);
        }
        out.push(p);
    }
}

fn check_circle(radius: f64, n: usize, jitter_sigma: f64) -> Result<()> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::Config(format!("circle radius must be positive, got {radius}")));
    }
    if n < 3 {
        return Err(Error::Config(format!("a circle needs at least 3 points, got {n}")));
    }
    if !(jitter_sigma >= 0.0 && jitter_sigma.is_finite()) {
        return Err(Error::Config(format!("jitter must be non-negative, got {jitter_sigma}")));
    }
    Ok(())
}

/// `n` points at equal angles starting from angle 0, each with isotropic
/// Gaussian jitter of scale `jitter_sigma`.
pub fn gen_circle(center: Vec2, radius: f64, n: usize, jitter_sigma: f64, seed: u64) -> Result<PointCloud> {
    check_circle(radius, n, jitter_sigma)?;
    let mut rng = rng::seeded(seed);
    let mut pts = Vec::with_capacity(n);
    push_circle(&mut pts, center, radius, n, jitter_sigma, &mut rng);
    PointCloud::new(pts, None, "circle")
}

/// Two circles around one center; branch 0 is the inner circle.
pub fn gen_concentric(center: Vec2, r1: f64, r2: f64, n_each: usize, jitter_sigma: f64, seed: u64) -> Result<PointCloud> {
    check_circle(r1, n_each, jitter_sigma)?;
    check_circle(r2, n_each, jitter_sigma)?;
    if r1 >= r2 {
        return Err(Error::Config(format!("need r1 < r2, got {r1} and {r2}")));
    }
    let mut rng = rng::seeded(seed);
    let mut pts = Vec::with_capacity(2 * n_each);
    push_circle(&mut pts, center, r1, n_each, jitter_sigma, &mut rng);
    push_circle(&mut pts, center, r2, n_each, jitter_sigma, &mut rng);
    let labels = (0..2 * n_each).map(|i| i / n_each).collect();
    PointCloud::new(pts, Some(labels), "concentric")
}

/// Two disjoint circles of equal radius; branch `i` is centred on `centers[i]`.
pub fn gen_separated(c1: Vec2, c2: Vec2, radius: f64, n_each: usize, jitter_sigma: f64, seed: u64) -> Result<PointCloud> {
    check_circle(radius, n_each, jitter_sigma)?;
    if (c1 - c2).norm() <= 2.0 * radius {
        return Err(Error::Config(format!(
            "circles of radius {radius} centred {} apart overlap",
            (c1 - c2).norm()
        )));
    }
    let mut rng = rng::seeded(seed);
    let mut pts = Vec::with_capacity(2 * n_each);
    push_circle(&mut pts, c1, radius, n_each, jitter_sigma, &mut rng);
    push_circle(&mut pts, c2, radius, n_each, jitter_sigma, &mut rng);
    let labels = (0..2 * n_each).map(|i| i / n_each).collect();
    PointCloud::new(pts, Some(labels), "separated")
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolygonCloud {
    pub cloud: PointCloud,
    pub corners: Vec<Vec2>,
}

/// Regular polygon vertices, counterclockwise, with vertex `k` at angle
/// `pi/n + 2 pi k / n` (so the square is axis aligned).
pub fn polygon_corners(center: Vec2, n_sides: usize, circumradius: f64) -> Vec<Vec2> {
    (0..n_sides)
        .map(|k| {
            let a = PI / n_sides as f64 + 2.0 * PI * k as f64 / n_sides as f64;
            center + circumradius * Vec2::new(a.cos(), a.sin())
        })
        .collect()
}

/// `n` points equally spaced by arc length along the polygon boundary,
/// starting at the first corner, plus optional jitter.
pub fn gen_polygon(
    center: Vec2,
    n_sides: usize,
    circumradius: f64,
    n: usize,
    jitter_sigma: f64,
    seed: u64,
) -> Result<PolygonCloud> {
    if !(3..=12).contains(&n_sides) {
        return Err(Error::Config(format!("polygons need 3 to 12 sides, got {n_sides}")));
    }
    if n < n_sides {
        return Err(Error::Config(format!("need at least {n_sides} points, got {n}")));
    }
    check_circle(circumradius, n, jitter_sigma)?;
    let corners = polygon_corners(center, n_sides, circumradius);
    let side = (corners[1] - corners[0]).norm();
    let perimeter = side * n_sides as f64;
    let mut rng = rng::seeded(seed);
    let mut pts = Vec::with_capacity(n);
    for i in 0..n {
        let s = perimeter * i as f64 / n as f64;
        let k = ((s / side).floor() as usize).min(n_sides - 1);
        let frac = (s - k as f64 * side) / side;
        let (a, b) = (corners[k], corners[(k + 1) % n_sides]);
        let mut p = if frac == 0.0 { a } else { a + frac * (b - a) };
        if jitter_sigma > 0.0 {
            p += jitter_sigma * rng::normal2(&mut rng);
        }
        pts.push(p);
    }
    let name = match n_sides {
        4 => "square".to_string(),
        6 => "hexagon".to_string(),
        k => format!("polygon{k}"),
    };
    Ok(PolygonCloud { cloud: PointCloud::new(pts, None, name)?, corners })
}

/// Same multiset in a seeded random order (labels travel with their points).
pub fn shuffle(cloud: &PointCloud, seed: u64) -> PointCloud {
    let mut idx: Vec<usize> = (0..cloud.len()).collect();
    idx.shuffle(&mut rng::seeded(seed));
    PointCloud {
        points: idx.iter().map(|&i| cloud.points[i]).collect(),
        labels: cloud.labels.as_ref().map(|l| idx.iter().map(|&i| l[i]).collect()),
        name: cloud.name.clone(),
    }
}

pub fn save_csv(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    let res = (|| {
        match &cloud.labels {
            None => {
                w.write_record(["x", "y"])?;
                for p in &cloud.points {
                    w.write_record([p.x.to_string(), p.y.to_string()])?;
                }
            }
            Some(labels) => {
                w.write_record(["x", "y", "branch"])?;
                for (p, l) in cloud.points.iter().zip(labels) {
                    w.write_record([p.x.to_string(), p.y.to_string(), l.to_string()])?;
                }
            }
        }
        w.flush()?;
        Ok::<_, csv::Error>(())
    })();
    res.map_err(|e| csv_io(path, e))
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_io(path, e))?;
    let bad = |line: u64, msg: String| Error::Csv { path: path.to_path_buf(), line, msg };

    let mut records = r.records();
    let header = match records.next() {
        None => return Err(bad(1, "empty file".into())),
        Some(h) => h.map_err(|e| csv_io(path, e))?,
    };
    let labelled = match header.iter().collect::<Vec<_>>().as_slice() {
        ["x", "y"] => false,
        ["x", "y", "branch"] => true,
        other => return Err(bad(1, format!("expected header x,y[,branch], found {}", other.join(",")))),
    };
    let width = if labelled { 3 } else { 2 };
    let mut points = Vec::new();
    let mut labels = Vec::new();
    for rec in records {
        let rec = rec.map_err(|e| csv_io(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != width {
            return Err(bad(line, format!("expected {width} columns, found {}", rec.len())));
        }
        let num = |i: usize| -> Result<f64> {
            rec[i].parse::<f64>().map_err(|e| bad(line, format!("column {}: {e}: {:?}", i + 1, &rec[i])))
        };
        points.push(Vec2::new(num(0)?, num(1)?));
        if labelled {
            labels.push(rec[2].parse::<usize>().map_err(|e| bad(line, format!("branch: {e}: {:?}", &rec[2])))?);
        }
    }
    let name = path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
    PointCloud::new(points, labelled.then_some(labels), name)
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Csv { path: path.to_path_buf(), line, msg: format!("{other:?}") },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sorted(points: &[Vec2]) -> Vec<(u64, u64)> {
        let mut v: Vec<_> = points.iter().map(|p| (p.x.to_bits(), p.y.to_bits())).collect();
        v.sort();
        v
    }

    #[test]
    fn circle_without_jitter() {
        let c = gen_circle(Vec2::zeros(), 1.0, 4, 0.0, 0).unwrap();
        let expected = [Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0), Vec2::new(-1.0, 0.0), Vec2::new(0.0, -1.0)];
        for (p, e) in c.points().iter().zip(expected) {
            assert!((p - e).norm() < 1e-15);
        }
    }

    #[test]
    fn circle_jitter_band_and_determinism() {
        let j = 0.01;
        let a = gen_circle(Vec2::new(0.5, -1.0), 2.0, 512, j, 4).unwrap();
        let b = gen_circle(Vec2::new(0.5, -1.0), 2.0, 512, j, 4).unwrap();
        assert_eq!(a, b);
        assert!(a.points().iter().all(|p| ((p - Vec2::new(0.5, -1.0)).norm() - 2.0).abs() <= 6.0 * j));
        assert!(gen_circle(Vec2::zeros(), 0.0, 8, 0.0, 0).is_err());
        assert!(gen_circle(Vec2::zeros(), 1.0, 2, 0.0, 0).is_err());
    }

    #[test]
    fn concentric_construction() {
        let c = gen_concentric(Vec2::zeros(), 1.0, 2.0, 256, 0.01, 1).unwrap();
        assert_eq!(c.len(), 512);
        assert_eq!(c.branch_count(), 2);
        let inner = &c.branches()[0];
        let min = inner.iter().map(|p| p.norm()).fold(f64::INFINITY, f64::min);
        assert!((min - 1.0).abs() <= 6.0 * 0.01);
        assert!(gen_concentric(Vec2::zeros(), 2.0, 1.0, 16, 0.0, 0).is_err());
        assert_eq!(sorted(shuffle(&c, 9).points()), sorted(c.points()));
    }

    #[test]
    fn separated_construction() {
        let c = gen_separated(Vec2::new(-1.75, 0.0), Vec2::new(1.75, 0.0), 1.0, 256, 0.01, 2).unwrap();
        assert_eq!(c.len(), 512);
        let b = c.branches();
        assert!(b[0].iter().all(|p| p.x < 0.0) && b[1].iter().all(|p| p.x > 0.0));
        let min = b[1].iter().map(|p| (p - Vec2::new(1.75, 0.0)).norm()).fold(f64::INFINITY, f64::min);
        assert!((min - 1.0).abs() <= 0.06);
        assert!(matches!(
            gen_separated(Vec2::new(-0.9, 0.0), Vec2::new(0.9, 0.0), 1.0, 16, 0.0, 0),
            Err(Error::Config(_))
        ));
        assert_eq!(sorted(shuffle(&c, 3).points()), sorted(c.points()));
    }

    #[test]
    fn square_contains_its_corners() {
        let sq = gen_polygon(Vec2::zeros(), 4, 1.5, 4 * 25, 0.0, 0).unwrap();
        for c in &sq.corners {
            assert!(sq.cloud.points().iter().any(|p| (p - c).norm() < 1e-12), "{c}");
        }
        // side = sqrt(2) * circumradius
        let unit = polygon_corners(Vec2::zeros(), 4, 1.0);
        let perimeter: f64 = (0..4).map(|k| (unit[(k + 1) % 4] - unit[k]).norm()).sum();
        assert!((perimeter - 4.0 * 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn hexagon_interior_angle() {
        let h = polygon_corners(Vec2::zeros(), 6, 1.5);
        let (a, b, c) = (h[5], h[0], h[1]);
        let angle = (a - b).angle(&(c - b));
        assert!((angle.to_degrees() - 120.0).abs() < 1e-9);
        assert!(gen_polygon(Vec2::zeros(), 13, 1.0, 100, 0.0, 0).is_err());
        assert!(gen_polygon(Vec2::zeros(), 6, 1.0, 5, 0.0, 0).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let c = gen_concentric(Vec2::zeros(), 1.0, 2.0, 64, 0.01, 5).unwrap();
        let path = dir.path().join("c.csv");
        save_csv(&c, &path).unwrap();
        let back = load_csv(&path).unwrap();
        assert_eq!(back.points(), c.points());
        assert_eq!(back.labels(), c.labels());

        let plain = gen_circle(Vec2::zeros(), 1.0, 10, 0.1, 5).unwrap();
        save_csv(&plain, &path).unwrap();
        assert_eq!(load_csv(&path).unwrap().points(), plain.points());
    }

    #[test]
    fn csv_bad_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "x,y\n1.0,2.0\n3.0\n").unwrap();
        match load_csv(&path) {
            Err(Error::Csv { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        std::fs::write(&path, "x,y\n1.0,abc\n").unwrap();
        assert!(matches!(load_csv(&path), Err(Error::Csv { line: 2, .. })));
        std::fs::write(&path, "a,b\n").unwrap();
        assert!(matches!(load_csv(&path), Err(Error::Csv { line: 1, .. })));
        std::fs::write(&path, "x,y\n").unwrap();
        assert!(matches!(load_csv(&path), Err(Error::Input(_))));
    }

    #[test]
    fn invalid_labels_rejected() {
        let pts = vec![Vec2::zeros(), Vec2::new(1.0, 0.0)];
        assert!(PointCloud::new(pts.clone(), Some(vec![0, 2]), "x").is_err());
        assert!(PointCloud::new(pts, Some(vec![0]), "x").is_err());
        assert!(PointCloud::new(vec![Vec2::new(f64::NAN, 0.0)], None, "x").is_err());
    }
}
