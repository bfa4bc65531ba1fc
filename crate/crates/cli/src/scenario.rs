//! Scenario files: a TOML description of one experiment.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use kshape_core::datagen::{BlobComponent, LidarConfig};
use kshape_core::{Bbox, KernelConfig, ObjectShape, Point, SolverConfig, SolverMode};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub shape: ShapeSpec,
    pub robots: Vec<RobotSpec>,
    pub grid: GridSpec,
    #[serde(default)]
    pub kernel: KernelSpec,
    #[serde(default)]
    pub solver: SolverSpec,
    #[serde(default)]
    pub output: OutputSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ShapeSpec {
    Circle {
        center: [f64; 2],
        radius: f64,
    },
    Ellipse {
        center: [f64; 2],
        semi_major: f64,
        semi_minor: f64,
        #[serde(default)]
        rotation: f64,
    },
    Star {
        center: [f64; 2],
        radius: f64,
        amplitude: f64,
        lobes: u32,
        #[serde(default)]
        phase: f64,
    },
    Blob {
        components: Vec<BlobSpec>,
        level: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobSpec {
    pub center: [f64; 2],
    pub weight: f64,
    pub width: f64,
}

/// A robot is placed either at `position`, or at `distance` from the shape center along
/// `bearing_deg` (degrees counter-clockwise from +x).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bearing_deg: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance: Option<f64>,
    #[serde(default = "default_rays")]
    pub rays: usize,
    #[serde(default = "default_offset")]
    pub offset: f64,
    #[serde(default = "default_range")]
    pub max_range: f64,
    #[serde(default)]
    pub angle_jitter: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub min: [f64; 2],
    pub max: [f64; 2],
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    #[serde(default = "one")]
    pub bandwidth_sq: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Mode {
    DiscreteAdmm,
    EulerFlow,
}

impl From<Mode> for SolverMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::DiscreteAdmm => SolverMode::DiscreteAdmm,
            Mode::EulerFlow => SolverMode::EulerFlow,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    #[serde(default = "default_mode")]
    pub mode: Mode,
    #[serde(default = "one")]
    pub rho: f64,
    #[serde(default = "one")]
    pub beta_x: f64,
    #[serde(default = "default_step")]
    pub step_size: f64,
    #[serde(default = "default_time_scale")]
    pub time_scale: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_tol")]
    pub tol_primal: f64,
    #[serde(default = "default_tol")]
    pub tol_dual: f64,
    /// Per-robot penalty weights keyed by robot id (1-based); one entry per sample plus
    /// `M + 1` for the grid coefficients and bias.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub q_scale: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default = "default_resolution")]
    pub resolution: usize,
}

fn one() -> f64 {
    1.0
}
fn default_rays() -> usize {
    10
}
fn default_offset() -> f64 {
    0.1
}
fn default_range() -> f64 {
    10.0
}
fn default_mode() -> Mode {
    Mode::DiscreteAdmm
}
fn default_step() -> f64 {
    0.001
}
fn default_time_scale() -> f64 {
    0.01
}
fn default_max_iter() -> usize {
    50_000
}
fn default_tol() -> f64 {
    1e-6
}
fn default_resolution() -> usize {
    kshape_core::geometry::DEFAULT_RESOLUTION
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self { bandwidth_sq: 1.0 }
    }
}

impl Default for SolverSpec {
    fn default() -> Self {
        Self {
            mode: default_mode(),
            rho: 1.0,
            beta_x: 1.0,
            step_size: default_step(),
            time_scale: default_time_scale(),
            max_iter: default_max_iter(),
            tol_primal: default_tol(),
            tol_dual: default_tol(),
            q_scale: BTreeMap::new(),
        }
    }
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            resolution: default_resolution(),
        }
    }
}

fn point(p: [f64; 2]) -> Point {
    Point::new(p[0], p[1])
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let s: Scenario = toml::from_str(text).map_err(|e| CliError::Config(vec![e.to_string()]))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario fields are all representable in TOML")
    }

    /// Checks every field and reports all problems at once.
    pub fn validate(&self) -> Result<(), CliError> {
        let mut bad = Vec::new();
        let mut positive = |name: String, v: f64| {
            if !(v > 0.0 && v.is_finite()) {
                bad.push(format!("{name}: must be a positive number, got {v}"));
            }
        };

        match &self.shape {
            ShapeSpec::Circle { radius, .. } => positive("shape.radius".into(), *radius),
            ShapeSpec::Ellipse {
                semi_major, semi_minor, ..
            } => {
                positive("shape.semi_major".into(), *semi_major);
                positive("shape.semi_minor".into(), *semi_minor);
            }
            ShapeSpec::Star { radius, .. } => positive("shape.radius".into(), *radius),
            ShapeSpec::Blob { components, .. } => {
                for (i, c) in components.iter().enumerate() {
                    positive(format!("shape.components[{i}].weight"), c.weight);
                    positive(format!("shape.components[{i}].width"), c.width);
                }
            }
        }
        for (i, r) in self.robots.iter().enumerate() {
            positive(format!("robots[{i}].offset"), r.offset);
            positive(format!("robots[{i}].max_range"), r.max_range);
            if let Some(d) = r.distance {
                positive(format!("robots[{i}].distance"), d);
            }
        }
        positive("kernel.bandwidth_sq".into(), self.kernel.bandwidth_sq);
        let s = &self.solver;
        for (name, v) in [
            ("solver.rho", s.rho),
            ("solver.beta_x", s.beta_x),
            ("solver.step_size", s.step_size),
            ("solver.time_scale", s.time_scale),
            ("solver.tol_primal", s.tol_primal),
            ("solver.tol_dual", s.tol_dual),
        ] {
            positive(name.into(), v);
        }

        if let Err(e) = self.object() {
            bad.push(format!("shape: {e}"));
        }
        if self.robots.is_empty() {
            bad.push("robots: at least one robot is required".into());
        }
        for (i, r) in self.robots.iter().enumerate() {
            match (r.position, r.bearing_deg, r.distance) {
                (Some(_), None, None) | (None, Some(_), Some(_)) => {}
                _ => bad.push(format!(
                    "robots[{i}]: give either `position` or both `bearing_deg` and `distance`"
                )),
            }
            if r.rays == 0 {
                bad.push(format!("robots[{i}].rays: must be at least 1"));
            }
            if r.angle_jitter < 0.0 || !r.angle_jitter.is_finite() {
                bad.push(format!("robots[{i}].angle_jitter: must be non-negative"));
            }
        }
        let g = &self.grid;
        if g.rows == 0 {
            bad.push("grid.rows: must be at least 1".into());
        }
        if g.cols == 0 {
            bad.push("grid.cols: must be at least 1".into());
        }
        if g.cols > 1 && !(g.max[0] > g.min[0]) {
            bad.push("grid.max: x must exceed grid.min x when cols > 1".into());
        }
        if g.rows > 1 && !(g.max[1] > g.min[1]) {
            bad.push("grid.max: y must exceed grid.min y when rows > 1".into());
        }
        if s.max_iter == 0 {
            bad.push("solver.max_iter: must be at least 1".into());
        }
        if s.mode == Mode::EulerFlow && s.step_size > s.time_scale {
            bad.push("solver.step_size: must not exceed solver.time_scale".into());
        }
        for (key, diag) in &s.q_scale {
            match key.parse::<usize>() {
                Ok(id) if (1..=self.robots.len()).contains(&id) => {
                    if diag.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                        bad.push(format!("solver.q_scale.{key}: entries must be positive"));
                    }
                }
                _ => bad.push(format!("solver.q_scale.{key}: not a robot id")),
            }
        }
        if self.output.resolution < 2 {
            bad.push("output.resolution: must be at least 2".into());
        }

        if bad.is_empty() {
            Ok(())
        } else {
            Err(CliError::Config(bad))
        }
    }

    pub fn object(&self) -> kshape_core::Result<ObjectShape> {
        let shape = match &self.shape {
            ShapeSpec::Circle { center, radius } => ObjectShape::Circle {
                center: point(*center),
                radius: *radius,
            },
            ShapeSpec::Ellipse {
                center,
                semi_major,
                semi_minor,
                rotation,
            } => ObjectShape::Ellipse {
                center: point(*center),
                semi_major: *semi_major,
                semi_minor: *semi_minor,
                rotation: *rotation,
            },
            ShapeSpec::Star {
                center,
                radius,
                amplitude,
                lobes,
                phase,
            } => ObjectShape::Star {
                center: point(*center),
                radius: *radius,
                amplitude: *amplitude,
                lobes: *lobes,
                phase: *phase,
            },
            ShapeSpec::Blob { components, level } => ObjectShape::Blob {
                components: components
                    .iter()
                    .map(|c| BlobComponent {
                        center: point(c.center),
                        weight: c.weight,
                        width: c.width,
                    })
                    .collect(),
                level: *level,
            },
        };
        shape.validate()?;
        Ok(shape)
    }

    /// Robot positions in id order (ids start at 1).
    pub fn robot_positions(&self) -> kshape_core::Result<Vec<Point>> {
        let center = self.object()?.center();
        Ok(self
            .robots
            .iter()
            .map(|r| match r.position {
                Some(p) => point(p),
                None => {
                    let a = r.bearing_deg.unwrap_or(0.0).to_radians();
                    let d = r.distance.unwrap_or(0.0);
                    Point::new(center.x + d * a.cos(), center.y + d * a.sin())
                }
            })
            .collect())
    }

    pub fn lidar(&self, index: usize) -> LidarConfig {
        let r = &self.robots[index];
        LidarConfig {
            ray_count: r.rays,
            max_range: r.max_range,
            offset: r.offset,
            angle_jitter: r.angle_jitter,
            seed: self.seed.wrapping_add(index as u64),
        }
    }

    pub fn grid_bbox(&self) -> Bbox {
        Bbox::from_corners(self.grid.min[0], self.grid.min[1], self.grid.max[0], self.grid.max[1])
    }

    pub fn kernel_config(&self) -> kshape_core::Result<KernelConfig> {
        KernelConfig::new(self.kernel.bandwidth_sq)
    }

    pub fn solver_config(&self) -> SolverConfig {
        let s = &self.solver;
        SolverConfig {
            beta_x: s.beta_x,
            rho: s.rho,
            q_scale: s
                .q_scale
                .iter()
                .filter_map(|(k, v)| k.parse().ok().map(|id| (id, v.clone())))
                .collect(),
            mode: s.mode.into(),
            step_size: s.step_size,
            time_scale: s.time_scale,
            max_iter: s.max_iter,
            tol_primal: s.tol_primal,
            tol_dual: s.tol_dual,
            ..SolverConfig::default()
        }
    }
}
