//! Observation windows and the affine map into the unit square.
//!
//! Raw coordinates live in an arbitrary rectangle or simple polygon. Before
//! any kernel is evaluated, the window's bounding box is stretched onto
//! `[0,1]²`, each axis independently, and every observation is pushed through
//! the same [`UnitTransform`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("non-finite coordinate ({x}, {y})")]
    NonFinite { x: f64, y: f64 },

    #[error("degenerate rectangle: need xmin < xmax and ymin < ymax, got x [{xmin}, {xmax}], y [{ymin}, {ymax}]")]
    DegenerateRectangle {
        xmin: f64,
        xmax: f64,
        ymin: f64,
        ymax: f64,
    },

    #[error("polygon needs at least 3 distinct vertices, got {0}")]
    TooFewVertices(usize),

    #[error("polygon has repeated consecutive vertex at index {0}")]
    RepeatedVertex(usize),

    #[error("polygon has zero area")]
    ZeroArea,

    #[error("polygon is self-intersecting: edge {first} crosses edge {second}")]
    SelfIntersecting { first: usize, second: usize },
}

pub type Result<T> = std::result::Result<T, GeometryError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    /// True when both coordinates lie in the closed unit interval.
    pub fn in_unit_square(&self) -> bool {
        (0.0..=1.0).contains(&self.x) && (0.0..=1.0).contains(&self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub xmin: f64,
    pub xmax: f64,
    pub ymin: f64,
    pub ymax: f64,
}

impl Rect {
    pub fn new(xmin: f64, xmax: f64, ymin: f64, ymax: f64) -> Result<Self> {
        let finite = [xmin, xmax, ymin, ymax].iter().all(|v| v.is_finite());
        if !finite || !(xmin < xmax) || !(ymin < ymax) {
            return Err(GeometryError::DegenerateRectangle {
                xmin,
                xmax,
                ymin,
                ymax,
            });
        }
        Ok(Self {
            xmin,
            xmax,
            ymin,
            ymax,
        })
    }

    pub const UNIT: Rect = Rect {
        xmin: 0.0,
        xmax: 1.0,
        ymin: 0.0,
        ymax: 1.0,
    };

    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.xmin && p.x <= self.xmax && p.y >= self.ymin && p.y <= self.ymax
    }
}

/// A simple polygon. Construction validates vertex count, area and the
/// absence of self-intersections, so every value of this type is usable.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    vertices: Vec<Point>,
}

impl Polygon {
    /// Builds a polygon from its vertex ring. A trailing vertex equal to the
    /// first one (an explicitly closed ring) is dropped.
    pub fn new(mut vertices: Vec<Point>) -> Result<Self> {
        if let Some(bad) = vertices.iter().find(|p| !p.is_finite()) {
            return Err(GeometryError::NonFinite { x: bad.x, y: bad.y });
        }
        if vertices.len() > 1 && vertices.first() == vertices.last() {
            vertices.pop();
        }
        if vertices.len() < 3 {
            return Err(GeometryError::TooFewVertices(vertices.len()));
        }
        let n = vertices.len();
        for i in 0..n {
            if vertices[i] == vertices[(i + 1) % n] {
                return Err(GeometryError::RepeatedVertex(i));
            }
        }
        if let Some((first, second)) = find_self_intersection(&vertices) {
            return Err(GeometryError::SelfIntersecting { first, second });
        }
        let poly = Self { vertices };
        if !(poly.area() > 0.0) {
            return Err(GeometryError::ZeroArea);
        }
        Ok(poly)
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    fn edges(&self) -> impl Iterator<Item = (Point, Point)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    /// Signed shoelace sum; positive for counter-clockwise rings.
    pub fn signed_area(&self) -> f64 {
        0.5 * self
            .edges()
            .map(|(a, b)| a.x * b.y - b.x * a.y)
            .sum::<f64>()
    }

    pub fn area(&self) -> f64 {
        self.signed_area().abs()
    }

    pub fn bounding_box(&self) -> Rect {
        let (mut xmin, mut xmax) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in &self.vertices {
            xmin = xmin.min(v.x);
            xmax = xmax.max(v.x);
            ymin = ymin.min(v.y);
            ymax = ymax.max(v.y);
        }
        Rect {
            xmin,
            xmax,
            ymin,
            ymax,
        }
    }

    /// Closed containment: boundary points are inside.
    pub fn contains(&self, p: Point) -> bool {
        if self.edges().any(|(a, b)| on_segment(a, b, p)) {
            return true;
        }
        // even-odd ray cast towards +x
        let mut inside = false;
        for (a, b) in self.edges() {
            if (a.y > p.y) != (b.y > p.y) {
                let x_cross = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
                if p.x < x_cross {
                    inside = !inside;
                }
            }
        }
        inside
    }
}

fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

fn on_segment(a: Point, b: Point, p: Point) -> bool {
    let scale = (b.x - a.x).abs().max((b.y - a.y).abs()).max(1.0);
    if cross(a, b, p).abs() > 1e-12 * scale * scale {
        return false;
    }
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

fn segments_intersect(p1: Point, p2: Point, q1: Point, q2: Point) -> bool {
    let d1 = cross(q1, q2, p1);
    let d2 = cross(q1, q2, p2);
    let d3 = cross(p1, p2, q1);
    let d4 = cross(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(q1, q2, p1))
        || (d2 == 0.0 && on_segment(q1, q2, p2))
        || (d3 == 0.0 && on_segment(p1, p2, q1))
        || (d4 == 0.0 && on_segment(p1, p2, q2))
}

/// Pairwise edge test, O(V²). Adjacent edges share a vertex by construction
/// and only count when they fold back onto each other.
fn find_self_intersection(vertices: &[Point]) -> Option<(usize, usize)> {
    let n = vertices.len();
    let edge = |i: usize| (vertices[i], vertices[(i + 1) % n]);
    for i in 0..n {
        let (a1, a2) = edge(i);
        for j in (i + 1)..n {
            let (b1, b2) = edge(j);
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                // shared vertex is a2 == b1 (or a1 == b2 for the wrap-around pair)
                let (shared, other_a, other_b) = if j == i + 1 {
                    (a2, a1, b2)
                } else {
                    (a1, a2, b1)
                };
                let collinear = cross(shared, other_a, other_b) == 0.0;
                let folds_back = (other_a.x - shared.x) * (other_b.x - shared.x)
                    + (other_a.y - shared.y) * (other_b.y - shared.y)
                    > 0.0;
                if collinear && folds_back {
                    return Some((i, j));
                }
                continue;
            }
            if segments_intersect(a1, a2, b1, b2) {
                return Some((i, j));
            }
        }
    }
    None
}

#[derive(Debug, Clone, PartialEq)]
pub enum Window {
    Rectangle(Rect),
    Polygon(Polygon),
}

impl Window {
    pub fn rectangle(xmin: f64, xmax: f64, ymin: f64, ymax: f64) -> Result<Self> {
        Rect::new(xmin, xmax, ymin, ymax).map(Window::Rectangle)
    }

    pub fn polygon(vertices: Vec<Point>) -> Result<Self> {
        Polygon::new(vertices).map(Window::Polygon)
    }

    pub fn unit_square() -> Self {
        Window::Rectangle(Rect::UNIT)
    }

    pub fn area(&self) -> f64 {
        match self {
            Window::Rectangle(r) => r.area(),
            Window::Polygon(p) => p.area(),
        }
    }

    pub fn contains(&self, p: Point) -> bool {
        match self {
            Window::Rectangle(r) => r.contains(p),
            Window::Polygon(poly) => poly.contains(p),
        }
    }

    pub fn bounding_rect(&self) -> Rect {
        match self {
            Window::Rectangle(r) => *r,
            Window::Polygon(p) => p.bounding_box(),
        }
    }

    /// Smallest axis-aligned rectangle containing the window.
    pub fn bounding_box(&self) -> Window {
        Window::Rectangle(self.bounding_rect())
    }

    /// Largest distance between two points of the bounding box.
    pub fn diameter(&self) -> f64 {
        let r = self.bounding_rect();
        r.width().hypot(r.height())
    }

    /// Maps the window onto the unit square; see [`UnitTransform`].
    pub fn normalize(&self) -> (Window, UnitTransform) {
        let bbox = self.bounding_rect();
        let transform = UnitTransform::from_rect(&bbox);
        let unit = match self {
            Window::Rectangle(_) => Window::Rectangle(Rect::UNIT),
            Window::Polygon(poly) => {
                let vertices = poly
                    .vertices()
                    .iter()
                    .map(|&v| transform.apply_snapped(v, &bbox))
                    .collect();
                // An affine image with positive scales keeps simplicity and
                // orientation, so this re-validation cannot fail.
                Window::Polygon(Polygon::new(vertices).expect("affine image of a simple polygon"))
            }
        };
        (unit, transform)
    }
}

/// Free-function form of [`Window::normalize`].
pub fn normalize_window(window: &Window) -> (Window, UnitTransform) {
    window.normalize()
}

/// Independent per-axis affine map `p ↦ (p + offset) · scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitTransform {
    pub x_offset: f64,
    pub x_scale: f64,
    pub y_offset: f64,
    pub y_scale: f64,
}

impl UnitTransform {
    pub const IDENTITY: UnitTransform = UnitTransform {
        x_offset: 0.0,
        x_scale: 1.0,
        y_offset: 0.0,
        y_scale: 1.0,
    };

    pub fn from_rect(r: &Rect) -> Self {
        Self {
            x_offset: -r.xmin,
            x_scale: 1.0 / r.width(),
            y_offset: -r.ymin,
            y_scale: 1.0 / r.height(),
        }
    }

    pub fn apply(&self, p: Point) -> Point {
        Point {
            x: (p.x + self.x_offset) * self.x_scale,
            y: (p.y + self.y_offset) * self.y_scale,
        }
    }

    pub fn invert(&self, p: Point) -> Point {
        Point {
            x: p.x / self.x_scale - self.x_offset,
            y: p.y / self.y_scale - self.y_offset,
        }
    }

    // Bounding-box extremes land on exactly 0 or 1.
    fn apply_snapped(&self, p: Point, bbox: &Rect) -> Point {
        let q = self.apply(p);
        let snap = |raw: f64, mapped: f64, lo: f64, hi: f64| {
            if raw == lo {
                0.0
            } else if raw == hi {
                1.0
            } else {
                mapped.clamp(0.0, 1.0)
            }
        };
        Point {
            x: snap(p.x, q.x, bbox.xmin, bbox.xmax),
            y: snap(p.y, q.y, bbox.ymin, bbox.ymax),
        }
    }
}

pub fn apply_transform(transform: &UnitTransform, p: Point) -> Point {
    transform.apply(p)
}
