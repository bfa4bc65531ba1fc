//! Synthetic objects, simulated LiDAR scans and shared grid layouts.
//!
//! A LiDAR ray only reports where it meets the surface. Labelled samples are made
//! from each hit `h` by stepping `offset` back along the ray (outside, `+1`) and
//! `offset` past it (inside, `-1`). Labels are always taken from [`ObjectShape::inside`].

use std::f64::consts::{PI, TAU};
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::space::{Bbox, Point};

/// Ray/boundary intersections are bisected down to this parameter width.
pub const BISECTION_TOL: f64 = 1e-10;

/// Fraction of the inscribed-disk half angle covered by a scan fan.
const FAN_FILL: f64 = 0.9;

#[derive(Debug, Clone, PartialEq)]
pub struct BlobComponent {
    pub center: Point,
    pub weight: f64,
    pub width: f64,
}

/// A closed planar object described by an implicit function that is negative inside.
#[derive(Debug, Clone, PartialEq)]
pub enum ObjectShape {
    Circle {
        center: Point,
        radius: f64,
    },
    Ellipse {
        center: Point,
        semi_major: f64,
        semi_minor: f64,
        rotation: f64,
    },
    /// Radial star `r(φ) = radius·(1 + amplitude·cos(lobes·(φ - phase)))`.
    Star {
        center: Point,
        radius: f64,
        amplitude: f64,
        lobes: u32,
        phase: f64,
    },
    /// Superlevel set `{x : Σ wᵢ exp(-‖x - cᵢ‖² / (2sᵢ²)) > level}`.
    Blob {
        components: Vec<BlobComponent>,
        level: f64,
    },
}

impl ObjectShape {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        match self {
            ObjectShape::Circle { radius, .. } if !(*radius > 0.0) => bad(format!("circle radius {radius}")),
            ObjectShape::Ellipse {
                semi_major, semi_minor, ..
            } if !(*semi_major > 0.0 && *semi_minor > 0.0) => {
                bad(format!("ellipse semi-axes {semi_major}, {semi_minor}"))
            }
            ObjectShape::Star {
                radius,
                amplitude,
                lobes,
                ..
            } => {
                if !(*radius > 0.0) || !(0.0..1.0).contains(amplitude) || *lobes == 0 {
                    bad(format!(
                        "star needs radius > 0, 0 <= amplitude < 1, lobes >= 1 (got {radius}, {amplitude}, {lobes})"
                    ))
                } else {
                    Ok(())
                }
            }
            ObjectShape::Blob { components, level } => {
                if components.is_empty() || !(*level > 0.0) {
                    return bad("blob needs components and a positive level".into());
                }
                if components.iter().any(|c| !(c.width > 0.0) || !(c.weight > 0.0)) {
                    return bad("blob components need positive weight and width".into());
                }
                if !self.inside(&self.center()) {
                    return bad("blob center of mass must lie inside the blob".into());
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Reference point the shape is star-shaped about.
    pub fn center(&self) -> Point {
        match self {
            ObjectShape::Circle { center, .. }
            | ObjectShape::Ellipse { center, .. }
            | ObjectShape::Star { center, .. } => *center,
            ObjectShape::Blob { components, .. } => {
                let total: f64 = components.iter().map(|c| c.weight).sum();
                let (sx, sy) = components.iter().fold((0.0, 0.0), |(sx, sy), c| {
                    (sx + c.weight * c.center.x, sy + c.weight * c.center.y)
                });
                Point::new(sx / total, sy / total)
            }
        }
    }

    /// Implicit function: negative strictly inside, zero on the boundary, positive outside.
    pub fn implicit(&self, x: &Point) -> f64 {
        match self {
            ObjectShape::Circle { center, radius } => (x - center).norm() - radius,
            ObjectShape::Ellipse {
                center,
                semi_major,
                semi_minor,
                rotation,
            } => {
                let d = x - center;
                let (s, c) = rotation.sin_cos();
                let u = c * d.x + s * d.y;
                let v = -s * d.x + c * d.y;
                ((u / semi_major).powi(2) + (v / semi_minor).powi(2)).sqrt() - 1.0
            }
            ObjectShape::Star { center, .. } => {
                let d = x - center;
                d.norm() - self.star_radius(d.y.atan2(d.x))
            }
            ObjectShape::Blob { components, level } => level - blob_field(components, x),
        }
    }

    /// Membership oracle. Boundary points count as outside.
    pub fn inside(&self, x: &Point) -> bool {
        self.implicit(x) < 0.0
    }

    fn star_radius(&self, phi: f64) -> f64 {
        match self {
            ObjectShape::Star {
                radius,
                amplitude,
                lobes,
                phase,
                ..
            } => radius * (1.0 + amplitude * (*lobes as f64 * (phi - phase)).cos()),
            _ => unreachable!(),
        }
    }

    /// Distance from [`center`](Self::center) to the boundary along direction `phi`.
    pub fn radial_extent(&self, phi: f64) -> f64 {
        match self {
            ObjectShape::Circle { radius, .. } => *radius,
            ObjectShape::Star { .. } => self.star_radius(phi),
            ObjectShape::Ellipse {
                semi_major,
                semi_minor,
                rotation,
                ..
            } => {
                let t = phi - rotation;
                let (s, c) = t.sin_cos();
                1.0 / ((c / semi_major).powi(2) + (s / semi_minor).powi(2)).sqrt()
            }
            ObjectShape::Blob { components, .. } => {
                let center = self.center();
                let dir = nalgebra::Vector2::new(phi.cos(), phi.sin());
                let far = components
                    .iter()
                    .map(|c| (c.center - center).norm() + 12.0 * c.width)
                    .fold(0.0, f64::max);
                bisect(|t| self.implicit(&(center + dir * t)), 0.0, far)
            }
        }
    }

    /// Radius of a disk about the center that lies entirely inside the object.
    pub fn inner_radius(&self) -> f64 {
        match self {
            ObjectShape::Circle { radius, .. } => *radius,
            ObjectShape::Ellipse {
                semi_major, semi_minor, ..
            } => semi_major.min(*semi_minor),
            ObjectShape::Star { radius, amplitude, .. } => radius * (1.0 - amplitude),
            ObjectShape::Blob { .. } => {
                (0..720)
                    .map(|k| self.radial_extent(TAU * k as f64 / 720.0))
                    .fold(f64::INFINITY, f64::min)
                    * 0.98
            }
        }
    }

    /// `samples` boundary points at evenly spaced angles about the center.
    pub fn boundary(&self, samples: usize) -> Vec<Point> {
        let c = self.center();
        (0..samples)
            .map(|k| {
                let phi = TAU * k as f64 / samples as f64;
                let r = self.radial_extent(phi);
                Point::new(c.x + r * phi.cos(), c.y + r * phi.sin())
            })
            .collect()
    }
}

fn blob_field(components: &[BlobComponent], x: &Point) -> f64 {
    components
        .iter()
        .map(|c| c.weight * (-(x - c.center).norm_squared() / (2.0 * c.width * c.width)).exp())
        .sum()
}

/// Root of `f` on `[lo, hi]` where `f(lo) < 0 <= f(hi)`, or the reverse.
fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let lo_neg = f(lo) < 0.0;
    while hi - lo > BISECTION_TOL {
        let mid = 0.5 * (lo + hi);
        if (f(mid) < 0.0) == lo_neg {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// One robot's labelled samples. Label `+1` is outside the object, `-1` inside.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub agent_id: usize,
    pub points: Vec<Point>,
    pub labels: Vec<i8>,
}

impl LabeledDataset {
    pub fn new(agent_id: usize, points: Vec<Point>, labels: Vec<i8>) -> Result<Self> {
        if points.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                what: "labels per point",
                expected: points.len(),
                actual: labels.len(),
            });
        }
        if let Some(bad) = labels.iter().find(|&&l| l != 1 && l != -1) {
            return Err(Error::InvalidArgument(format!("label {bad} is not ±1")));
        }
        if points.iter().any(|p| !(p.x.is_finite() && p.y.is_finite())) {
            return Err(Error::InvalidArgument("non-finite data point".into()));
        }
        Ok(Self {
            agent_id,
            points,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn count(&self, label: i8) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    /// Concatenates several datasets under one id.
    pub fn pooled(agent_id: usize, sets: &[LabeledDataset]) -> Self {
        let mut points = Vec::new();
        let mut labels = Vec::new();
        for s in sets {
            points.extend_from_slice(&s.points);
            labels.extend_from_slice(&s.labels);
        }
        Self {
            agent_id,
            points,
            labels,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LidarConfig {
    pub ray_count: usize,
    pub max_range: f64,
    pub offset: f64,
    /// Uniform angular perturbation per ray, as a fraction of the ray spacing.
    pub angle_jitter: f64,
    pub seed: u64,
}

impl Default for LidarConfig {
    fn default() -> Self {
        Self {
            ray_count: 10,
            max_range: 10.0,
            offset: 0.1,
            angle_jitter: 0.0,
            seed: 0,
        }
    }
}

/// Casts a fan of rays from `robot` toward the object's center.
///
/// The fan spans 90% of the angle subtended by the object's inscribed disk, so from
/// within range every ray hits. Each hit contributes one outside and one inside sample.
pub fn sample_lidar(agent_id: usize, shape: &ObjectShape, robot: Point, cfg: &LidarConfig) -> Result<LabeledDataset> {
    shape.validate()?;
    if cfg.ray_count == 0 {
        return Err(Error::InvalidArgument("ray_count must be at least 1".into()));
    }
    if !(cfg.max_range > 0.0 && cfg.offset > 0.0 && cfg.angle_jitter >= 0.0) {
        return Err(Error::InvalidArgument(
            "max_range and offset must be positive, angle_jitter non-negative".into(),
        ));
    }
    if shape.implicit(&robot) <= 0.0 {
        return Err(Error::InvalidArgument("robot must be outside the object".into()));
    }

    let center = shape.center();
    let to_center = center - robot;
    let dist = to_center.norm();
    let bearing = to_center.y.atan2(to_center.x);
    let half = FAN_FILL * (shape.inner_radius() / dist).min(1.0).asin();
    let spacing = 2.0 * half / cfg.ray_count as f64;
    let march = (shape.inner_radius() / 64.0).min(cfg.max_range / 4096.0);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut points = Vec::with_capacity(2 * cfg.ray_count);
    let mut labels = Vec::with_capacity(2 * cfg.ray_count);
    for k in 0..cfg.ray_count {
        let u: f64 = rng.random::<f64>() - 0.5;
        let angle =
            bearing + half * (2.0 * (k as f64 + 0.5) / cfg.ray_count as f64 - 1.0) + cfg.angle_jitter * spacing * u;
        let dir = nalgebra::Vector2::new(angle.cos(), angle.sin());
        let Some(t_hit) = cast(shape, &robot, &dir, cfg.max_range, march) else {
            continue;
        };
        let hit = robot + dir * t_hit;
        for p in [hit - dir * cfg.offset, hit + dir * cfg.offset] {
            labels.push(if shape.inside(&p) { -1 } else { 1 });
            points.push(p);
        }
    }
    if points.is_empty() {
        return Err(Error::NoReturns);
    }
    LabeledDataset::new(agent_id, points, labels)
}

fn cast(shape: &ObjectShape, origin: &Point, dir: &nalgebra::Vector2<f64>, max_range: f64, step: f64) -> Option<f64> {
    let f = |t: f64| shape.implicit(&(origin + dir * t));
    let mut t0 = 0.0;
    while t0 < max_range {
        let t1 = (t0 + step).min(max_range);
        if f(t1) <= 0.0 {
            return Some(bisect(f, t0, t1));
        }
        t0 = t1;
    }
    None
}

/// The grid points shared by every robot. Points are pairwise distinct.
#[derive(Debug, Clone, PartialEq)]
pub struct GridBasis {
    points: Vec<Point>,
}

impl GridBasis {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidArgument("grid needs at least one point".into()));
        }
        for i in 0..points.len() {
            for j in 0..i {
                if points[i] == points[j] {
                    return Err(Error::InvalidArgument(format!(
                        "grid points {j} and {i} coincide at ({}, {})",
                        points[i].x, points[i].y
                    )));
                }
            }
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Regular `rows × cols` lattice over `bbox`, corners included, x varying fastest.
/// A single row or column sits on the box's center line.
pub fn make_grid(bbox: &Bbox, rows: usize, cols: usize) -> Result<GridBasis> {
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidArgument("grid needs rows >= 1 and cols >= 1".into()));
    }
    if (cols > 1 && !(bbox.width() > 0.0)) || (rows > 1 && !(bbox.height() > 0.0)) {
        return Err(Error::InvalidArgument(
            "degenerate bounding box for a multi-point grid".into(),
        ));
    }
    let axis = |lo: f64, hi: f64, n: usize, i: usize| {
        if n == 1 {
            0.5 * (lo + hi)
        } else {
            lo + (hi - lo) * i as f64 / (n - 1) as f64
        }
    };
    let mut points = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            points.push(Point::new(
                axis(bbox.min.x, bbox.max.x, cols, c),
                axis(bbox.min.y, bbox.max.y, rows, r),
            ));
        }
    }
    GridBasis::new(points)
}

/// Renders datasets as a tab-separated table: `agent_id x y label`.
pub fn write_dataset_table(sets: &[LabeledDataset]) -> String {
    let mut out = String::from("# agent_id\tx\ty\tlabel\n");
    for s in sets {
        for (p, l) in s.points.iter().zip(&s.labels) {
            let _ = writeln!(out, "{}\t{}\t{}\t{}", s.agent_id, p.x, p.y, l);
        }
    }
    out
}

/// Parses [`write_dataset_table`] output. Datasets come back sorted by agent id.
pub fn read_dataset_table(text: &str) -> Result<Vec<LabeledDataset>> {
    let mut by_agent: std::collections::BTreeMap<usize, (Vec<Point>, Vec<i8>)> = Default::default();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| Error::Parse { line: idx + 1, message };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(err(format!("expected 4 fields, found {}", fields.len())));
        }
        let agent: usize = fields[0].parse().map_err(|e| err(format!("agent_id: {e}")))?;
        let x: f64 = fields[1].parse().map_err(|e| err(format!("x: {e}")))?;
        let y: f64 = fields[2].parse().map_err(|e| err(format!("y: {e}")))?;
        let label: i8 = fields[3].parse().map_err(|e| err(format!("label: {e}")))?;
        let entry = by_agent.entry(agent).or_default();
        entry.0.push(Point::new(x, y));
        entry.1.push(label);
    }
    by_agent
        .into_iter()
        .map(|(id, (points, labels))| LabeledDataset::new(id, points, labels))
        .collect()
}

/// Robots evenly placed on a circle of `distance` around the shape, starting at angle `start`.
pub fn ring_positions(shape: &ObjectShape, count: usize, distance: f64, start: f64) -> Vec<Point> {
    let c = shape.center();
    (0..count)
        .map(|k| {
            let a = start + 2.0 * PI * k as f64 / count as f64;
            Point::new(c.x + distance * a.cos(), c.y + distance * a.sin())
        })
        .collect()
}
