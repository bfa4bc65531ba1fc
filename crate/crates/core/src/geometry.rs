//! Learned implicit function, its zero-level curve, and quality metrics.

use std::collections::HashMap;
use std::fmt::Write as _;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::datagen::{GridBasis, LabeledDataset, ObjectShape};
use crate::error::{Error, Result};
use crate::kernel::{self, KernelConfig};
use crate::space::{Bbox, Point};

pub const DEFAULT_RESOLUTION: usize = 201;
pub const DEFAULT_BBOX_INFLATION: f64 = 0.2;
pub const HAUSDORFF_SAMPLES: usize = 2048;
pub const PROBE_COUNT: usize = 4096;

/// `F(x) = Σⱼ cⱼ·k(x, gⱼ) + γ` over the shared grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeModel {
    grid: GridBasis,
    coefficients: DVector<f64>,
    bias: f64,
    kernel: KernelConfig,
}

impl ShapeModel {
    pub fn new(grid: GridBasis, coefficients: DVector<f64>, bias: f64, kernel: KernelConfig) -> Result<Self> {
        if coefficients.len() != grid.len() {
            return Err(Error::DimensionMismatch {
                what: "coefficients per grid point",
                expected: grid.len(),
                actual: coefficients.len(),
            });
        }
        Ok(Self {
            grid,
            coefficients,
            bias,
            kernel,
        })
    }

    /// Builds a model from a stacked `[c; γ]` vector.
    pub fn from_stacked(grid: GridBasis, z: &DVector<f64>, kernel: KernelConfig) -> Result<Self> {
        let m = grid.len();
        if z.len() != m + 1 {
            return Err(Error::DimensionMismatch {
                what: "stacked [c; gamma] length",
                expected: m + 1,
                actual: z.len(),
            });
        }
        Self::new(grid, z.rows(0, m).into_owned(), z[m], kernel)
    }

    pub fn grid(&self) -> &GridBasis {
        &self.grid
    }

    pub fn coefficients(&self) -> &DVector<f64> {
        &self.coefficients
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn kernel(&self) -> &KernelConfig {
        &self.kernel
    }

    pub fn eval(&self, x: &Point) -> f64 {
        kernel::expansion(
            self.coefficients.as_slice(),
            self.grid.points(),
            self.bias,
            x,
            &self.kernel,
        )
    }

    /// `‖c‖₁ + |γ|`, a bound on `|F|` everywhere.
    pub fn sup_bound(&self) -> f64 {
        self.coefficients.iter().map(|c| c.abs()).sum::<f64>() + self.bias.abs()
    }

    /// `½ cᵀ K_G c`.
    pub fn objective(&self) -> f64 {
        let pts = self.grid.points();
        let mut acc = 0.0;
        for i in 0..pts.len() {
            for j in 0..pts.len() {
                acc += self.coefficients[i] * self.coefficients[j] * self.kernel.eval(&pts[i], &pts[j]);
            }
        }
        0.5 * acc
    }
}

/// Scalar samples on a regular lattice; `values[row * nx + col]` sits at `point(col, row)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub bbox: Bbox,
    pub nx: usize,
    pub ny: usize,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn sample(bbox: Bbox, resolution: usize, f: impl Fn(&Point) -> f64) -> Result<Self> {
        if resolution < 2 {
            return Err(Error::InvalidArgument(format!(
                "raster resolution must be >= 2, got {resolution}"
            )));
        }
        let mut values = Vec::with_capacity(resolution * resolution);
        for row in 0..resolution {
            for col in 0..resolution {
                values.push(f(&lattice_point(&bbox, resolution, resolution, col, row)));
            }
        }
        Ok(Self {
            bbox,
            nx: resolution,
            ny: resolution,
            values,
        })
    }

    pub fn point(&self, col: usize, row: usize) -> Point {
        lattice_point(&self.bbox, self.nx, self.ny, col, row)
    }

    pub fn at(&self, col: usize, row: usize) -> f64 {
        self.values[row * self.nx + col]
    }

    pub fn cell_size(&self) -> (f64, f64) {
        (
            self.bbox.width() / (self.nx - 1) as f64,
            self.bbox.height() / (self.ny - 1) as f64,
        )
    }
}

fn lattice_point(bbox: &Bbox, nx: usize, ny: usize, col: usize, row: usize) -> Point {
    Point::new(
        bbox.min.x + bbox.width() * col as f64 / (nx - 1) as f64,
        bbox.min.y + bbox.height() * row as f64 / (ny - 1) as f64,
    )
}

pub fn raster_eval(model: &ShapeModel, bbox: Bbox, resolution: usize) -> Result<ScalarField> {
    ScalarField::sample(bbox, resolution, |p| model.eval(p))
}

/// Data bounding box grown by 20%, the default plotting/contouring window.
pub fn default_window(datasets: &[LabeledDataset]) -> Option<Bbox> {
    Bbox::around(datasets.iter().flat_map(|d| d.points.iter())).map(|b| b.inflate(DEFAULT_BBOX_INFLATION))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Polyline {
    pub points: Vec<Point>,
    pub closed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Contour {
    pub polylines: Vec<Polyline>,
    pub bbox: Bbox,
    pub nx: usize,
    pub ny: usize,
}

impl Contour {
    /// The field never changed sign.
    pub fn is_empty(&self) -> bool {
        self.polylines.is_empty()
    }

    pub fn vertices(&self) -> impl Iterator<Item = &Point> {
        self.polylines.iter().flat_map(|p| p.points.iter())
    }
}

/// Lattice edge: horizontal from `(col,row)` to `(col+1,row)`, or vertical to `(col,row+1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Edge {
    H(usize, usize),
    V(usize, usize),
}

/// Zero-level polylines by marching squares with linear edge interpolation.
///
/// A lattice value counts as positive when `> 0`. Saddle cells are split according to the
/// sign of the mean of their four corners.
pub fn marching_squares(field: &ScalarField) -> Contour {
    let pos = |c: usize, r: usize| field.at(c, r) > 0.0;
    let mut segments: Vec<(Edge, Edge)> = Vec::new();
    for row in 0..field.ny - 1 {
        for col in 0..field.nx - 1 {
            let a = pos(col, row);
            let b = pos(col + 1, row);
            let c = pos(col + 1, row + 1);
            let d = pos(col, row + 1);
            let bottom = Edge::H(col, row);
            let top = Edge::H(col, row + 1);
            let left = Edge::V(col, row);
            let right = Edge::V(col + 1, row);
            let mut crossed = Vec::with_capacity(4);
            if a != b {
                crossed.push(bottom);
            }
            if b != c {
                crossed.push(right);
            }
            if c != d {
                crossed.push(top);
            }
            if d != a {
                crossed.push(left);
            }
            match crossed.len() {
                2 => segments.push((crossed[0], crossed[1])),
                4 => {
                    let center = 0.25
                        * (field.at(col, row)
                            + field.at(col + 1, row)
                            + field.at(col + 1, row + 1)
                            + field.at(col, row + 1));
                    if (center > 0.0) == a {
                        // a and c connect through the center; cut off b and d
                        segments.push((bottom, right));
                        segments.push((top, left));
                    } else {
                        segments.push((left, bottom));
                        segments.push((right, top));
                    }
                }
                _ => {}
            }
        }
    }

    let vertex = |e: Edge| -> Point {
        let (c0, r0, c1, r1) = match e {
            Edge::H(c, r) => (c, r, c + 1, r),
            Edge::V(c, r) => (c, r, c, r + 1),
        };
        let v0 = field.at(c0, r0);
        let v1 = field.at(c1, r1);
        let t = v0 / (v0 - v1);
        let p0 = field.point(c0, r0);
        let p1 = field.point(c1, r1);
        p0 + (p1 - p0) * t
    };

    let mut incident: HashMap<Edge, Vec<usize>> = HashMap::new();
    for (k, (e0, e1)) in segments.iter().enumerate() {
        incident.entry(*e0).or_default().push(k);
        incident.entry(*e1).or_default().push(k);
    }
    let mut used = vec![false; segments.len()];
    let mut polylines = Vec::new();

    // open chains start at an edge with a single incident segment (the raster boundary)
    let starts: Vec<(usize, Edge)> = segments
        .iter()
        .enumerate()
        .flat_map(|(k, (e0, e1))| [(k, *e0), (k, *e1)])
        .filter(|(_, e)| incident[e].len() == 1)
        .collect();
    let walk = |first: usize, from: Edge, used: &mut Vec<bool>| -> Polyline {
        let mut edges = vec![from];
        let mut seg = first;
        let mut at = from;
        loop {
            used[seg] = true;
            let (e0, e1) = segments[seg];
            let next = if e0 == at { e1 } else { e0 };
            edges.push(next);
            at = next;
            match incident[&at].iter().find(|&&s| !used[s]) {
                Some(&s) => seg = s,
                None => break,
            }
        }
        let closed = edges.len() > 2 && edges.first() == edges.last();
        if closed {
            edges.pop();
        }
        Polyline {
            points: edges.into_iter().map(vertex).collect(),
            closed,
        }
    };
    for (k, e) in starts {
        if !used[k] {
            polylines.push(walk(k, e, &mut used));
        }
    }
    for k in 0..segments.len() {
        if !used[k] {
            polylines.push(walk(k, segments[k].0, &mut used));
        }
    }

    Contour {
        polylines,
        bbox: field.bbox,
        nx: field.nx,
        ny: field.ny,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapeMetrics {
    /// Fraction of samples with `θᵢ F(dᵢ) > 0`.
    pub separation_fraction: f64,
    /// `min θᵢ F(dᵢ)`.
    pub min_margin: f64,
    /// Symmetric Hausdorff distance between contour vertices and the true boundary.
    pub hausdorff: f64,
    /// Fraction of random probes where `sign F` matches the true inside/outside label.
    pub agreement: f64,
}

pub fn shape_metrics(
    contour: &Contour,
    truth: &ObjectShape,
    datasets: &[LabeledDataset],
    model: &ShapeModel,
) -> ShapeMetrics {
    let (separation_fraction, min_margin) = separation(datasets, model);

    let boundary = truth.boundary(HAUSDORFF_SAMPLES);
    let hausdorff = if contour.is_empty() {
        f64::INFINITY
    } else {
        let directed = |from: &mut dyn Iterator<Item = &Point>, to: &[Point]| -> f64 {
            from.map(|p| to.iter().map(|q| (p - q).norm()).fold(f64::INFINITY, f64::min))
                .fold(0.0, f64::max)
        };
        let verts: Vec<Point> = contour.vertices().copied().collect();
        directed(&mut verts.iter(), &boundary).max(directed(&mut boundary.iter(), &verts))
    };

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let b = contour.bbox;
    let mut agree = 0usize;
    for _ in 0..PROBE_COUNT {
        let p = Point::new(
            b.min.x + b.width() * rng.random::<f64>(),
            b.min.y + b.height() * rng.random::<f64>(),
        );
        if (model.eval(&p) > 0.0) == !truth.inside(&p) {
            agree += 1;
        }
    }

    ShapeMetrics {
        separation_fraction,
        min_margin,
        hausdorff,
        agreement: agree as f64 / PROBE_COUNT as f64,
    }
}

/// `(fraction with θᵢF(dᵢ) > 0, min θᵢF(dᵢ))` over every sample.
pub fn separation(datasets: &[LabeledDataset], model: &ShapeModel) -> (f64, f64) {
    let mut total = 0usize;
    let mut correct = 0usize;
    let mut min_margin = f64::INFINITY;
    for d in datasets {
        for (p, &l) in d.points.iter().zip(&d.labels) {
            let m = f64::from(l) * model.eval(p);
            total += 1;
            if m > 0.0 {
                correct += 1;
            }
            min_margin = min_margin.min(m);
        }
    }
    if total == 0 {
        return (1.0, f64::INFINITY);
    }
    (correct as f64 / total as f64, min_margin)
}

/// Tab-separated `source polyline closed x y` rows for any number of named contours.
pub fn write_contour_table(contours: &[(String, &Contour)]) -> String {
    let mut out = String::from("# source\tpolyline\tclosed\tx\ty\n");
    for (name, c) in contours {
        for (k, poly) in c.polylines.iter().enumerate() {
            for p in &poly.points {
                let _ = writeln!(out, "{name}\t{k}\t{}\t{}\t{}", u8::from(poly.closed), p.x, p.y);
            }
        }
    }
    out
}

/// Parses [`write_contour_table`] output into `(source, polylines)` in first-seen order.
pub fn read_contour_table(text: &str) -> Result<Vec<(String, Vec<Polyline>)>> {
    let mut out: Vec<(String, Vec<Polyline>)> = Vec::new();
    let mut last: Option<(String, usize)> = None;
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| Error::Parse { line: idx + 1, message };
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 5 {
            return Err(err(format!("expected 5 fields, found {}", f.len())));
        }
        let id: usize = f[1].parse().map_err(|e| err(format!("polyline: {e}")))?;
        let closed = f[2] == "1";
        let x: f64 = f[3].parse().map_err(|e| err(format!("x: {e}")))?;
        let y: f64 = f[4].parse().map_err(|e| err(format!("y: {e}")))?;
        let key = (f[0].to_string(), id);
        if last.as_ref() != Some(&key) {
            if out.last().map(|(s, _)| s.as_str()) != Some(f[0]) {
                out.push((f[0].to_string(), Vec::new()));
            }
            out.last_mut().unwrap().1.push(Polyline {
                points: Vec::new(),
                closed,
            });
            last = Some(key);
        }
        out.last_mut()
            .unwrap()
            .1
            .last_mut()
            .unwrap()
            .points
            .push(Point::new(x, y));
    }
    Ok(out)
}

/// Everything drawn in a result figure.
#[derive(Debug, Clone, Default)]
pub struct Figure<'a> {
    pub window: Option<Bbox>,
    pub truth: Option<Vec<Point>>,
    /// `(label, polylines)`; the first entry is drawn with the consensus style.
    pub curves: Vec<(String, &'a [Polyline])>,
    pub datasets: &'a [LabeledDataset],
    pub grid: Option<&'a GridBasis>,
}

const PALETTE: [&str; 6] = ["#1f77b4", "#2ca02c", "#d62728", "#9467bd", "#ff7f0e", "#17becf"];

/// Renders a standalone SVG: dashed truth outline, one solid curve per source,
/// `○` for outside samples, `×` for inside samples, `+` for grid points.
pub fn render_svg(fig: &Figure<'_>) -> String {
    const SIZE: f64 = 640.0;
    const PAD: f64 = 20.0;
    let window = fig
        .window
        .or_else(|| default_window(fig.datasets))
        .unwrap_or(Bbox::from_corners(-1.0, -1.0, 1.0, 1.0));
    let scale = (SIZE - 2.0 * PAD) / window.width().max(window.height()).max(f64::MIN_POSITIVE);
    let tx = |p: &Point| {
        (
            PAD + (p.x - window.min.x) * scale,
            SIZE - PAD - (p.y - window.min.y) * scale,
        )
    };
    let path = |pts: &[Point], closed: bool| -> String {
        let mut d = String::new();
        for (i, p) in pts.iter().enumerate() {
            let (x, y) = tx(p);
            let _ = write!(d, "{}{x:.3},{y:.3} ", if i == 0 { "M" } else { "L" });
        }
        if closed {
            d.push('Z');
        }
        d
    };

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    if let Some(truth) = &fig.truth {
        let _ = writeln!(
            out,
            r#"<path d="{}" fill="none" stroke="magenta" stroke-width="2" stroke-dasharray="8 5"/>"#,
            path(truth, true)
        );
    }
    if let Some(grid) = fig.grid {
        for g in grid.points() {
            let (x, y) = tx(g);
            let _ = writeln!(
                out,
                r#"<path d="M{:.3},{y:.3} L{:.3},{y:.3} M{x:.3},{:.3} L{x:.3},{:.3}" stroke="black" stroke-width="1.5"/>"#,
                x - 6.0,
                x + 6.0,
                y - 6.0,
                y + 6.0
            );
        }
    }
    for (k, d) in fig.datasets.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        for (p, &l) in d.points.iter().zip(&d.labels) {
            let (x, y) = tx(p);
            if l > 0 {
                let _ = writeln!(
                    out,
                    r#"<circle cx="{x:.3}" cy="{y:.3}" r="4" fill="none" stroke="{color}" stroke-width="1.2"/>"#
                );
            } else {
                let _ = writeln!(
                    out,
                    r#"<path d="M{:.3},{:.3} L{:.3},{:.3} M{:.3},{:.3} L{:.3},{:.3}" stroke="{color}" stroke-width="1.2"/>"#,
                    x - 4.0,
                    y - 4.0,
                    x + 4.0,
                    y + 4.0,
                    x - 4.0,
                    y + 4.0,
                    x + 4.0,
                    y - 4.0
                );
            }
        }
    }
    for (k, (label, polys)) in fig.curves.iter().enumerate() {
        let (color, width) = if k == 0 {
            ("black", 2.5)
        } else {
            (PALETTE[(k - 1) % PALETTE.len()], 1.5)
        };
        let _ = writeln!(
            out,
            r#"<g id="{label}" fill="none" stroke="{color}" stroke-width="{width}">"#
        );
        for poly in polys.iter() {
            let _ = writeln!(out, r#"<path d="{}"/>"#, path(&poly.points, poly.closed));
        }
        let _ = writeln!(out, "</g>");
    }
    out.push_str("</svg>\n");
    out
}
