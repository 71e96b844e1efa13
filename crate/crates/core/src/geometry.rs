//! Planar geometry shared by every other module.
//!
//! Frame convention: an ego frame places the vehicle at the origin with its
//! forward axis along +y ("heading points up") and +x to its right. A
//! [`Pose2`] heading is the yaw of the forward axis measured counter-clockwise
//! from the world +y axis, so a heading of zero means the world frame already
//! is the ego frame.

use std::f64::consts::PI;
use std::fmt;
use std::ops::{Add, Mul, Sub};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Consecutive vertices closer than this are merged when a polyline is built.
pub const DUPLICATE_EPS: f64 = 1e-9;

/// Default number of vertices per resampled map element.
pub const DEFAULT_VERTEX_COUNT: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const ORIGIN: Point2 = Point2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn norm(&self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist(&self, other: Point2) -> f64 {
        (*self - other).norm()
    }

    pub fn dot(&self, other: Point2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// Rotates counter-clockwise by `angle` radians.
    pub fn rotate(&self, angle: f64) -> Point2 {
        let (s, c) = angle.sin_cos();
        Point2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn lerp(&self, other: Point2, t: f64) -> Point2 {
        Point2::new(
            self.x + (other.x - self.x) * t,
            self.y + (other.y - self.y) * t,
        )
    }
}

impl From<[f64; 2]> for Point2 {
    fn from(v: [f64; 2]) -> Self {
        Point2::new(v[0], v[1])
    }
}

impl From<Point2> for [f64; 2] {
    fn from(p: Point2) -> Self {
        [p.x, p.y]
    }
}

impl Add for Point2 {
    type Output = Point2;
    fn add(self, rhs: Point2) -> Point2 {
        Point2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Point2 {
    type Output = Point2;
    fn sub(self, rhs: Point2) -> Point2 {
        Point2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, rhs: f64) -> Point2 {
        Point2::new(self.x * rhs, self.y * rhs)
    }
}

/// Wraps an angle into (−π, π].
pub fn normalize_angle(angle: f64) -> f64 {
    let mut a = angle.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    a
}

/// Position and yaw of a vehicle. See the module docs for the convention.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2 {
    pub position: Point2,
    pub heading: f64,
}

impl Default for Pose2 {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose2 {
    pub fn new(position: Point2, heading: f64) -> Self {
        Self {
            position,
            heading: normalize_angle(heading),
        }
    }

    pub fn identity() -> Self {
        Self {
            position: Point2::ORIGIN,
            heading: 0.0,
        }
    }

    /// The pose whose frame transform undoes this one.
    pub fn inverse(&self) -> Pose2 {
        let back = self.position.rotate(-self.heading) * -1.0;
        Pose2::new(back, -self.heading)
    }

    /// Unit forward direction in world coordinates.
    pub fn forward(&self) -> Point2 {
        Point2::new(0.0, 1.0).rotate(self.heading)
    }

    /// Expresses another pose in this pose's frame.
    pub fn relative(&self, other: &Pose2) -> Pose2 {
        Pose2::new(
            transform_point(other.position, self),
            other.heading - self.heading,
        )
    }
}

/// Expresses `p` in the frame of `pose`: `R(−heading)·(p − position)`.
pub fn transform_point(p: Point2, pose: &Pose2) -> Point2 {
    (p - pose.position).rotate(-pose.heading)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElementClass {
    RoadBoundary,
    PedCrossing,
    LaneDivider,
    LaneCenterline,
}

/// Number of semantic classes carried by every vertex.
pub const NUM_CLASSES: usize = 4;

impl ElementClass {
    pub const ALL: [ElementClass; NUM_CLASSES] = [
        ElementClass::RoadBoundary,
        ElementClass::PedCrossing,
        ElementClass::LaneDivider,
        ElementClass::LaneCenterline,
    ];

    pub fn index(self) -> usize {
        match self {
            ElementClass::RoadBoundary => 0,
            ElementClass::PedCrossing => 1,
            ElementClass::LaneDivider => 2,
            ElementClass::LaneCenterline => 3,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ElementClass::RoadBoundary => "road_boundary",
            ElementClass::PedCrossing => "ped_crossing",
            ElementClass::LaneDivider => "lane_divider",
            ElementClass::LaneCenterline => "lane_centerline",
        }
    }
}

impl fmt::Display for ElementClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ElementClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown element class '{s}'")))
    }
}

/// An ordered vertex chain, optionally closed into a polygon ring.
///
/// Closed polylines store each ring vertex once; the closing segment from the
/// last vertex back to the first is implicit.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyline {
    vertices: Vec<Point2>,
    closed: bool,
}

impl Polyline {
    /// Builds a polyline, merging consecutive vertices closer than
    /// [`DUPLICATE_EPS`]. Fails if fewer than two distinct vertices remain or
    /// any coordinate is non-finite.
    pub fn new(vertices: Vec<Point2>, closed: bool) -> Result<Self> {
        if let Some(bad) = vertices.iter().find(|p| !p.is_finite()) {
            return Err(Error::invalid(format!("non-finite vertex {bad:?}")));
        }
        let mut merged: Vec<Point2> = Vec::with_capacity(vertices.len());
        for v in vertices {
            match merged.last() {
                Some(last) if last.dist(v) < DUPLICATE_EPS => {}
                _ => merged.push(v),
            }
        }
        if closed && merged.len() > 2 && merged[0].dist(merged[merged.len() - 1]) < DUPLICATE_EPS {
            merged.pop();
        }
        if merged.len() < 2 {
            return Err(Error::Degenerate(
                "polyline needs at least two distinct vertices".into(),
            ));
        }
        Ok(Self {
            vertices: merged,
            closed,
        })
    }

    pub fn open(vertices: Vec<Point2>) -> Result<Self> {
        Self::new(vertices, false)
    }

    pub fn vertices(&self) -> &[Point2] {
        &self.vertices
    }

    pub fn into_vertices(self) -> Vec<Point2> {
        self.vertices
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Segments in path order, including the closing segment of a ring.
    pub fn segments(&self) -> impl Iterator<Item = (Point2, Point2)> + '_ {
        let n = self.vertices.len();
        let count = if self.closed { n } else { n - 1 };
        (0..count).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    pub fn length(&self) -> f64 {
        self.segments().map(|(a, b)| a.dist(b)).sum()
    }

    /// Cumulative arclength at the start of each segment plus the total.
    fn stations(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.vertices.len() + 1);
        let mut acc = 0.0;
        out.push(acc);
        for (a, b) in self.segments() {
            acc += a.dist(b);
            out.push(acc);
        }
        out
    }

    /// Point at arclength `s` from the first vertex. Open polylines clamp `s`
    /// to `[0, length]`; closed ones wrap around the ring.
    pub fn point_at(&self, s: f64) -> Point2 {
        let stations = self.stations();
        let total = *stations.last().expect("at least one station");
        self.point_at_with(&stations, total, s)
    }

    fn point_at_with(&self, stations: &[f64], total: f64, s: f64) -> Point2 {
        let s = if self.closed {
            s.rem_euclid(total)
        } else {
            s.clamp(0.0, total)
        };
        let n = self.vertices.len();
        // first segment whose end station reaches s
        let seg = match stations[1..].iter().position(|&end| end >= s) {
            Some(i) => i,
            None => stations.len() - 2,
        };
        let a = self.vertices[seg];
        let b = self.vertices[(seg + 1) % n];
        let seg_len = stations[seg + 1] - stations[seg];
        if seg_len <= 0.0 {
            return a;
        }
        a.lerp(b, ((s - stations[seg]) / seg_len).clamp(0.0, 1.0))
    }

    /// Unit tangent of the segment containing arclength `s`.
    pub fn tangent_at(&self, s: f64) -> Point2 {
        let stations = self.stations();
        let total = *stations.last().expect("at least one station");
        let s = if self.closed {
            s.rem_euclid(total)
        } else {
            s.clamp(0.0, total)
        };
        let n = self.vertices.len();
        let seg = stations[1..]
            .iter()
            .position(|&end| end >= s)
            .unwrap_or(stations.len() - 2);
        let d = self.vertices[(seg + 1) % n] - self.vertices[seg];
        d * (1.0 / d.norm())
    }

    /// Closest point on the path to `p`.
    pub fn project(&self, p: Point2) -> Projection {
        let mut best = Projection {
            station: 0.0,
            point: self.vertices[0],
            distance: f64::INFINITY,
        };
        let mut acc = 0.0;
        for (a, b) in self.segments() {
            let d = b - a;
            let len2 = d.dot(d);
            let t = if len2 > 0.0 {
                ((p - a).dot(d) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let q = a.lerp(b, t);
            let dist = p.dist(q);
            if dist < best.distance {
                best = Projection {
                    station: acc + t * len2.sqrt(),
                    point: q,
                    distance: dist,
                };
            }
            acc += len2.sqrt();
        }
        best
    }

    pub fn distance_to(&self, p: Point2) -> f64 {
        self.project(p).distance
    }

    /// Same path traversed in the opposite direction. A ring keeps its first
    /// vertex and visits the rest in reverse.
    pub fn reversed(&self) -> Polyline {
        let mut vertices = self.vertices.clone();
        if self.closed {
            vertices[1..].reverse();
        } else {
            vertices.reverse();
        }
        Polyline {
            vertices,
            closed: self.closed,
        }
    }

    /// Resamples to exactly `count` vertices equally spaced in arclength.
    ///
    /// Open polylines keep both endpoints. Closed polylines keep the first
    /// vertex and space `count` vertices uniformly around the ring (the
    /// closing vertex is not repeated).
    pub fn resample(&self, count: usize) -> Result<Polyline> {
        if count < 2 {
            return Err(Error::invalid(format!(
                "resample count must be at least 2, got {count}"
            )));
        }
        let stations = self.stations();
        let total = *stations.last().expect("at least one station");
        if total <= 0.0 || !total.is_finite() {
            return Err(Error::Degenerate("polyline has zero length".into()));
        }
        let divisions = if self.closed { count } else { count - 1 } as f64;
        let vertices = (0..count)
            .map(|k| {
                if !self.closed && k == count - 1 {
                    self.vertices[self.vertices.len() - 1]
                } else {
                    self.point_at_with(&stations, total, total * k as f64 / divisions)
                }
            })
            .collect();
        Ok(Polyline {
            vertices,
            closed: self.closed,
        })
    }
}

/// Result of [`Polyline::project`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub station: f64,
    pub point: Point2,
    pub distance: f64,
}

/// True when segment `a→b` passes within `radius` of `center` (touching counts).
pub fn segment_intersects_disc(a: Point2, b: Point2, center: Point2, radius: f64) -> bool {
    let d = b - a;
    let len2 = d.dot(d);
    let t = if len2 > 0.0 {
        ((center - a).dot(d) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    a.lerp(b, t).dist(center) <= radius
}
