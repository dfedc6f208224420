//! Numerical kernels over unit-normalized 2D geometry.
//!
//! Coordinates follow image conventions: `x` to the right, `y` downward.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Signed areas below this are treated as degenerate polygons.
pub const MIN_POLYGON_AREA: f64 = 1e-12;

const ON_EDGE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("polyline has no points")]
    EmptyPolyline,
    #[error("point set is empty")]
    EmptyPointSet,
    #[error("polygon is degenerate ({vertices} vertices, area {area:e})")]
    DegeneratePolygon { vertices: usize, area: f64 },
    #[error("grasp rectangle dimensions must be positive (w = {w}, h = {h})")]
    NonPositiveDimension { w: f64, h: f64 },
    #[error("corners do not form a rectangle: {0}")]
    NotARectangle(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    fn lerp(self, other: Point, t: f64) -> Point {
        Point::new(
            self.x + (other.x - self.x) * t,
            self.y + (other.y - self.y) * t,
        )
    }
}

/// Axis-aligned box; corners are normalized so `min <= max` componentwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    min: Point,
    max: Point,
}

impl BBox {
    pub fn from_corners(a: Point, b: Point) -> Self {
        Self {
            min: Point::new(a.x.min(b.x), a.y.min(b.y)),
            max: Point::new(a.x.max(b.x), a.y.max(b.y)),
        }
    }

    pub fn min_corner(&self) -> Point {
        self.min
    }

    pub fn max_corner(&self) -> Point {
        self.max
    }

    pub fn area(&self) -> f64 {
        (self.max.x - self.min.x) * (self.max.y - self.min.y)
    }
}

/// Closed simple polygon with non-zero area.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Polygon {
    vertices: Vec<Point>,
}

impl Polygon {
    pub fn new(vertices: Vec<Point>) -> Result<Self, GeometryError> {
        let area = signed_area(&vertices).abs();
        if vertices.len() < 3 || area < MIN_POLYGON_AREA {
            return Err(GeometryError::DegeneratePolygon {
                vertices: vertices.len(),
                area,
            });
        }
        Ok(Self { vertices })
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.vertices).abs()
    }
}

/// Shoelace formula; positive for counter-clockwise order in a y-up frame.
pub fn signed_area(vertices: &[Point]) -> f64 {
    let n = vertices.len();
    if n < 3 {
        return 0.0;
    }
    let twice: f64 = (0..n)
        .map(|i| {
            let a = vertices[i];
            let b = vertices[(i + 1) % n];
            a.x * b.y - b.x * a.y
        })
        .sum();
    twice / 2.0
}

/// Grasp rectangle in center/size/angle form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraspParam {
    pub cx: f64,
    pub cy: f64,
    /// Gripper opening width.
    pub w: f64,
    pub h: f64,
    /// Radians; positive values rotate +x toward +y.
    pub theta: f64,
}

/// Four ordered corners of an oriented grasp rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraspRect {
    pub corners: [Point; 4],
}

impl GraspRect {
    /// Wraps corners after checking that opposite sides and both diagonals agree
    /// within `tol`, and that the rectangle has positive extent.
    pub fn from_corners(corners: [Point; 4], tol: f64) -> Result<Self, GeometryError> {
        let [a, b, c, d] = corners;
        let (ab, bc, cd, da) = (a.distance(b), b.distance(c), c.distance(d), d.distance(a));
        let (ac, bd) = (a.distance(c), b.distance(d));
        if ab <= tol || bc <= tol {
            return Err(GeometryError::NotARectangle(format!(
                "degenerate sides {ab:.6} x {bc:.6}"
            )));
        }
        if (ab - cd).abs() > tol || (bc - da).abs() > tol {
            return Err(GeometryError::NotARectangle(format!(
                "opposite sides differ: {ab:.6}/{cd:.6}, {bc:.6}/{da:.6}"
            )));
        }
        if (ac - bd).abs() > tol {
            return Err(GeometryError::NotARectangle(format!(
                "diagonals differ: {ac:.6}/{bd:.6}"
            )));
        }
        Ok(Self { corners })
    }

    /// Orientation of the first edge (the gripper width axis), in `[0, π)`.
    pub fn angle(&self) -> f64 {
        let [a, b, ..] = self.corners;
        (b.y - a.y)
            .atan2(b.x - a.x)
            .rem_euclid(std::f64::consts::PI)
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.corners).abs()
    }
}

/// Resamples `points` to `n` points spaced uniformly by arc length.
///
/// Sample `k` sits at arc length `k / (n - 1)` of the total; both endpoints are
/// copied exactly. A zero-length input yields its first point repeated.
pub fn resample_polyline(points: &[Point], n: usize) -> Result<Vec<Point>, GeometryError> {
    let first = *points.first().ok_or(GeometryError::EmptyPolyline)?;
    let last = *points.last().expect("non-empty");
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut cumulative = Vec::with_capacity(points.len());
    let mut total = 0.0;
    cumulative.push(0.0);
    for w in points.windows(2) {
        total += w[0].distance(w[1]);
        cumulative.push(total);
    }
    if total == 0.0 || n == 1 {
        return Ok(vec![first; n]);
    }

    let mut out = Vec::with_capacity(n);
    out.push(first);
    let mut seg = 0;
    for k in 1..n - 1 {
        let target = total * k as f64 / (n - 1) as f64;
        // first segment whose end reaches the target; ties stay on the earlier one
        while cumulative[seg + 1] < target {
            seg += 1;
        }
        let len = cumulative[seg + 1] - cumulative[seg];
        let t = if len > 0.0 {
            (target - cumulative[seg]) / len
        } else {
            0.0
        };
        out.push(points[seg].lerp(points[seg + 1], t));
    }
    out.push(last);
    Ok(out)
}

/// Total length of the polyline through `points`.
pub fn arc_length(points: &[Point]) -> f64 {
    points.windows(2).map(|w| w[0].distance(w[1])).sum()
}

/// Discrete Fréchet distance by dynamic programming over the coupling table.
pub fn discrete_frechet(p: &[Point], g: &[Point]) -> Result<f64, GeometryError> {
    if p.is_empty() || g.is_empty() {
        return Err(GeometryError::EmptyPolyline);
    }
    let (m, n) = (p.len(), g.len());
    let mut table = vec![0.0f64; m * n];
    for i in 0..m {
        for j in 0..n {
            let d = p[i].distance(g[j]);
            let reach = match (i, j) {
                (0, 0) => d,
                (0, _) => table[j - 1],
                (_, 0) => table[(i - 1) * n],
                _ => table[(i - 1) * n + j]
                    .min(table[i * n + j - 1])
                    .min(table[(i - 1) * n + j - 1]),
            };
            table[i * n + j] = d.max(reach);
        }
    }
    Ok(table[m * n - 1])
}

/// Mean over `p` of the distance to the nearest point of `g`.
pub fn directed_mean_distance(p: &[Point], g: &[Point]) -> Result<f64, GeometryError> {
    if p.is_empty() || g.is_empty() {
        return Err(GeometryError::EmptyPointSet);
    }
    let sum: f64 = p
        .iter()
        .map(|&a| {
            g.iter()
                .map(|&b| a.distance(b))
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    Ok(sum / p.len() as f64)
}

/// Chamfer-style average of both directed mean distances.
pub fn bidirectional_mean_distance(p: &[Point], g: &[Point]) -> Result<f64, GeometryError> {
    let forward = directed_mean_distance(p, g)?;
    let backward = directed_mean_distance(g, p)?;
    Ok(0.5 * (forward + backward))
}

/// Even-odd containment; points on the boundary count as inside.
pub fn point_in_polygon(pt: Point, poly: &Polygon) -> bool {
    let v = poly.vertices();
    let n = v.len();
    if (0..n).any(|i| on_segment(pt, v[i], v[(i + 1) % n])) {
        return true;
    }
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (v[i], v[j]);
        if (a.y > pt.y) != (b.y > pt.y) {
            let x_cross = a.x + (pt.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if pt.x < x_cross {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

fn on_segment(p: Point, a: Point, b: Point) -> bool {
    let cross = (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
    if cross.abs() > ON_EDGE_EPS {
        return false;
    }
    p.x >= a.x.min(b.x) - ON_EDGE_EPS
        && p.x <= a.x.max(b.x) + ON_EDGE_EPS
        && p.y >= a.y.min(b.y) - ON_EDGE_EPS
        && p.y <= a.y.max(b.y) + ON_EDGE_EPS
}

/// Intersection over union of two axis-aligned boxes.
///
/// Two zero-area boxes score 1 only when they are the same box.
pub fn box_iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.max.x.min(b.max.x) - a.min.x.max(b.min.x)).max(0.0);
    let ih = (a.max.y.min(b.max.y) - a.min.y.max(b.min.y)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return if a == b { 1.0 } else { 0.0 };
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Corners `center + R(θ)·(±w/2, ±h/2)` in the order
/// `(-w/2,-h/2), (+w/2,-h/2), (+w/2,+h/2), (-w/2,+h/2)`.
pub fn grasp_params_to_corners(gp: &GraspParam) -> Result<GraspRect, GeometryError> {
    if !(gp.w > 0.0 && gp.h > 0.0) {
        return Err(GeometryError::NonPositiveDimension { w: gp.w, h: gp.h });
    }
    let (sin, cos) = gp.theta.sin_cos();
    let (hw, hh) = (gp.w / 2.0, gp.h / 2.0);
    let corner =
        |dx: f64, dy: f64| Point::new(gp.cx + cos * dx - sin * dy, gp.cy + sin * dx + cos * dy);
    Ok(GraspRect {
        corners: [
            corner(-hw, -hh),
            corner(hw, -hh),
            corner(hw, hh),
            corner(-hw, hh),
        ],
    })
}

/// Intersection of two convex polygons (Sutherland–Hodgman).
pub fn convex_intersection(subject: &[Point], clip: &[Point]) -> Vec<Point> {
    let subject = counter_clockwise(subject);
    let clip = counter_clockwise(clip);
    let mut output = subject;
    let n = clip.len();
    for i in 0..n {
        if output.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % n]);
        let side = |p: Point| (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
        let input = std::mem::take(&mut output);
        let m = input.len();
        for k in 0..m {
            let cur = input[k];
            let prev = input[(k + m - 1) % m];
            let (sc, sp) = (side(cur), side(prev));
            if sc >= 0.0 {
                if sp < 0.0 {
                    output.push(prev.lerp(cur, sp / (sp - sc)));
                }
                output.push(cur);
            } else if sp >= 0.0 {
                output.push(prev.lerp(cur, sp / (sp - sc)));
            }
        }
    }
    output
}

fn counter_clockwise(poly: &[Point]) -> Vec<Point> {
    let mut v = poly.to_vec();
    if signed_area(&v) < 0.0 {
        v.reverse();
    }
    v
}

/// IoU of two convex polygons, e.g. rotated rectangles.
pub fn convex_iou(a: &[Point], b: &[Point]) -> f64 {
    let inter = signed_area(&convex_intersection(a, b)).abs();
    let union = signed_area(a).abs() + signed_area(b).abs() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}
