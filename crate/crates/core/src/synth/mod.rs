//! Deterministic synthetic driving scenes and an observation model that
//! emulates an uncertainty-producing online mapper.
//!
//! The ego sits at the origin facing +y. Scale noise grows linearly with
//! distance from the ego, is inflated behind occluders, and depends on the
//! lighting/weather condition and element class. Observed vertex means are
//! drawn from the Laplace distribution the observation then reports, so the
//! generator is calibrated by construction unless `emitted_scale ≠ 1`.

mod predict;

pub use predict::{predict_blind, predict_weighted, PredictorConfig};

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{segment_intersects_disc, ElementClass, Point2, Polyline, NUM_CLASSES};
use crate::map::{MapElement, PerceptionRange, VectorMap};
use crate::probmap::{
    hard_label_logits, softmax, LaplaceParam, ProbMapElement, ProbVectorMap, ProbVertex, B_FLOOR,
};

pub const RATE_HZ: f64 = 10.0;
pub const DT: f64 = 1.0 / RATE_HZ;
/// 2 s of history at 10 Hz, the last sample being the current position.
pub const HISTORY_STEPS: usize = 20;
/// 3 s of future at 10 Hz.
pub const FUTURE_STEPS: usize = 30;
pub const LANE_WIDTH: f64 = 3.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    StraightRoad,
    Intersection,
    ParkingLot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Day,
    Night,
    Rain,
}

macro_rules! str_enum {
    ($ty:ty, $($variant:path => $name:literal),+ $(,)?) => {
        impl $ty {
            pub fn as_str(self) -> &'static str {
                match self { $($variant => $name),+ }
            }
        }
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($variant),)+
                    other => Err(Error::Config(format!(
                        concat!("unknown ", stringify!($ty), " '{}'"), other
                    ))),
                }
            }
        }
    };
}

str_enum!(Layout,
    Layout::StraightRoad => "straight_road",
    Layout::Intersection => "intersection",
    Layout::ParkingLot => "parking_lot",
);

str_enum!(Condition,
    Condition::Day => "day",
    Condition::Night => "night",
    Condition::Rain => "rain",
);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Occluder {
    pub center: Point2,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub layout: Layout,
    pub seed: u64,
    pub n_agents: usize,
    pub condition: Condition,
    #[serde(default)]
    pub occluders: Vec<Occluder>,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_agents == 0 {
            return Err(Error::Config("a scene needs at least one agent".into()));
        }
        if self
            .occluders
            .iter()
            .any(|o| !(o.radius > 0.0) || !o.center.is_finite())
        {
            return Err(Error::Config("occluder radii must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionMultiplier {
    pub condition: Condition,
    /// `None` applies to every class.
    #[serde(default)]
    pub class: Option<ElementClass>,
    pub factor: f64,
}

/// How per-vertex class logits are produced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClassLogits {
    /// One-hot on the true class.
    Hard,
    /// Gaussian logits (`scale`) with `bias` added to one random class; the
    /// true class is then swapped into a position drawn from the resulting
    /// distribution, which makes top-1 confidence calibrated.
    Sampled { scale: f64, bias: f64 },
}

impl Default for ClassLogits {
    fn default() -> Self {
        ClassLogits::Sampled {
            scale: 1.0,
            bias: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseModel {
    pub base_b: f64,
    /// Added scale per meter of vertex distance from the ego.
    pub distance_coeff: f64,
    pub occlusion_multiplier: f64,
    pub condition_multipliers: Vec<ConditionMultiplier>,
    /// Factor applied to the reported scale only; 1 is calibrated.
    pub emitted_scale: f64,
    pub class_logits: ClassLogits,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            base_b: 0.05,
            distance_coeff: 0.01,
            occlusion_multiplier: 3.0,
            condition_multipliers: vec![
                ConditionMultiplier {
                    condition: Condition::Night,
                    class: Some(ElementClass::PedCrossing),
                    factor: 2.0,
                },
                ConditionMultiplier {
                    condition: Condition::Rain,
                    class: None,
                    factor: 1.3,
                },
            ],
            emitted_scale: 1.0,
            class_logits: ClassLogits::default(),
        }
    }
}

impl NoiseModel {
    /// Noise at the scale floor everywhere, with hard class labels.
    pub fn noiseless() -> Self {
        Self {
            base_b: B_FLOOR,
            distance_coeff: 0.0,
            occlusion_multiplier: 1.0,
            condition_multipliers: Vec::new(),
            emitted_scale: 1.0,
            class_logits: ClassLogits::Hard,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_b >= B_FLOOR) {
            return Err(Error::Config(format!("base_b must be at least {B_FLOOR}")));
        }
        if !(self.distance_coeff >= 0.0) {
            return Err(Error::Config("distance_coeff must be non-negative".into()));
        }
        if !(self.occlusion_multiplier >= 1.0) {
            return Err(Error::Config(
                "occlusion_multiplier must be at least 1".into(),
            ));
        }
        if self
            .condition_multipliers
            .iter()
            .any(|m| !(m.factor >= 1.0))
        {
            return Err(Error::Config(
                "condition multipliers must be at least 1".into(),
            ));
        }
        if !(self.emitted_scale > 0.0 && self.emitted_scale.is_finite()) {
            return Err(Error::Config("emitted_scale must be positive".into()));
        }
        if let ClassLogits::Sampled { scale, bias } = self.class_logits {
            if !(scale >= 0.0 && scale.is_finite() && bias.is_finite()) {
                return Err(Error::Config(
                    "class logit scale must be non-negative".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn condition_factor(&self, condition: Condition, class: ElementClass) -> f64 {
        self.condition_multipliers
            .iter()
            .filter(|m| m.condition == condition && m.class.is_none_or(|c| c == class))
            .map(|m| m.factor)
            .product()
    }

    /// True scale at a ground-truth vertex.
    pub fn true_scale(
        &self,
        vertex: Point2,
        ego: Point2,
        occluders: &[Occluder],
        condition: Condition,
        class: ElementClass,
    ) -> f64 {
        let mut b = self.base_b + self.distance_coeff * vertex.dist(ego);
        if is_occluded(ego, vertex, occluders) {
            b *= self.occlusion_multiplier;
        }
        b * self.condition_factor(condition, class)
    }
}

/// Whether the sight line from `ego` to `p` crosses any occluder disc.
pub fn is_occluded(ego: Point2, p: Point2, occluders: &[Occluder]) -> bool {
    occluders
        .iter()
        .any(|o| segment_intersects_disc(ego, p, o.center, o.radius))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Maneuver {
    Follow,
    LaneChange,
    TurnLeft,
    TurnRight,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub id: usize,
    pub maneuver: Maneuver,
    pub speed: f64,
    /// `HISTORY_STEPS` positions ending at the current one.
    pub history: Vec<Point2>,
    /// `FUTURE_STEPS` positions after the current one.
    pub future: Vec<Point2>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum LaneKind {
    Through,
    Left,
    Right,
}

struct LaneInfo {
    element: usize,
    kind: LaneKind,
}

struct LayoutGeometry {
    elements: Vec<MapElement>,
    lanes: Vec<LaneInfo>,
    /// Straight-road lane index of each centerline, for lane changes.
    parallel: Vec<usize>,
    speed_range: (f64, f64),
}

fn line(pts: &[(f64, f64)]) -> Vec<Point2> {
    pts.iter().map(|&(x, y)| Point2::new(x, y)).collect()
}

fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Vec<Point2> {
    line(&[(x0, y0), (x1, y0), (x1, y1), (x0, y1)])
}

/// Clips an open polyline to the window, keeping the longest inside run.
fn clip_open(pts: &[Point2], range: &PerceptionRange) -> Option<Polyline> {
    let (hx, hy) = (range.lateral / 2.0, range.longitudinal / 2.0);
    let mut runs: Vec<Vec<Point2>> = Vec::new();
    let mut current: Vec<Point2> = Vec::new();
    for w in pts.windows(2) {
        match clip_segment(w[0], w[1], hx, hy) {
            Some((a, b)) => {
                if current.last().is_none_or(|l: &Point2| l.dist(a) > 1e-9) {
                    if current.len() >= 2 {
                        runs.push(std::mem::take(&mut current));
                    }
                    current.clear();
                    current.push(a);
                }
                current.push(b);
            }
            None => {
                if current.len() >= 2 {
                    runs.push(std::mem::take(&mut current));
                }
                current.clear();
            }
        }
    }
    if current.len() >= 2 {
        runs.push(current);
    }
    runs.into_iter()
        .filter_map(|r| Polyline::open(r).ok())
        .filter(|p| p.length() > 1.0)
        .max_by(|a, b| a.length().total_cmp(&b.length()))
}

/// Liang–Barsky clip against `|x| ≤ hx, |y| ≤ hy`.
fn clip_segment(a: Point2, b: Point2, hx: f64, hy: f64) -> Option<(Point2, Point2)> {
    let d = b - a;
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for (p, q) in [
        (-d.x, a.x + hx),
        (d.x, hx - a.x),
        (-d.y, a.y + hy),
        (d.y, hy - a.y),
    ] {
        if p == 0.0 {
            if q < 0.0 {
                return None;
            }
        } else {
            let r = q / p;
            if p < 0.0 {
                t0 = t0.max(r);
            } else {
                t1 = t1.min(r);
            }
        }
    }
    (t0 < t1).then(|| (a.lerp(b, t0), a.lerp(b, t1)))
}

fn closed_inside(pts: Vec<Point2>, range: &PerceptionRange) -> Option<Polyline> {
    if pts.iter().all(|p| range.contains(*p)) {
        Polyline::new(pts, true).ok()
    } else {
        None
    }
}

fn arc(center: Point2, radius: f64, from: f64, to: f64, steps: usize) -> Vec<Point2> {
    (0..=steps)
        .map(|k| {
            let a = from + (to - from) * k as f64 / steps as f64;
            center + Point2::new(a.cos(), a.sin()) * radius
        })
        .collect()
}

struct Builder {
    range: PerceptionRange,
    layout: LayoutGeometry,
}

impl Builder {
    fn new(range: PerceptionRange, speed_range: (f64, f64)) -> Self {
        Self {
            range,
            layout: LayoutGeometry {
                elements: Vec::new(),
                lanes: Vec::new(),
                parallel: Vec::new(),
                speed_range,
            },
        }
    }

    fn open(&mut self, pts: Vec<Point2>, class: ElementClass) -> Option<usize> {
        let poly = clip_open(&pts, &self.range)?;
        self.layout.elements.push(MapElement::new(poly, class));
        Some(self.layout.elements.len() - 1)
    }

    fn closed(&mut self, pts: Vec<Point2>, class: ElementClass) {
        if let Some(poly) = closed_inside(pts, &self.range) {
            self.layout.elements.push(MapElement::new(poly, class));
        }
    }

    fn lane(&mut self, pts: Vec<Point2>, kind: LaneKind) {
        if let Some(element) = self.open(pts, ElementClass::LaneCenterline) {
            self.layout.lanes.push(LaneInfo { element, kind });
        }
    }
}

fn straight_road(rng: &mut ChaCha8Rng, range: &PerceptionRange) -> LayoutGeometry {
    let n_lanes = rng.random_range(2..=4usize);
    let width = n_lanes as f64 * LANE_WIDTH;
    let left = -width / 2.0 + rng.random_range(-1.5..1.5);
    let (y0, y1) = (-range.longitudinal / 2.0, range.longitudinal / 2.0);
    let mut b = Builder::new(*range, (4.0, 12.0));
    b.open(line(&[(left, y0), (left, y1)]), ElementClass::RoadBoundary);
    b.open(
        line(&[(left + width, y0), (left + width, y1)]),
        ElementClass::RoadBoundary,
    );
    for k in 1..n_lanes {
        let x = left + k as f64 * LANE_WIDTH;
        b.open(line(&[(x, y0), (x, y1)]), ElementClass::LaneDivider);
    }
    for k in 0..n_lanes {
        let x = left + (k as f64 + 0.5) * LANE_WIDTH;
        b.lane(line(&[(x, y0), (x, 0.0), (x, y1)]), LaneKind::Through);
        b.layout.parallel.push(k);
    }
    if rng.random_bool(0.7) {
        let yc = rng.random_range(8.0..24.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        b.closed(
            rect(left, yc, left + width, yc + 4.0),
            ElementClass::PedCrossing,
        );
    }
    b.layout
}

/// Four-way junction of two-lane roads centred at `(0, cy)`. Geometry is built
/// for the approach from −y and rotated into the other three.
fn intersection(rng: &mut ChaCha8Rng, range: &PerceptionRange) -> LayoutGeometry {
    let cy = rng.random_range(0.0..12.0);
    let center = Point2::new(0.0, cy);
    let arm = 45.0;
    let (half, lane) = (LANE_WIDTH, LANE_WIDTH / 2.0);
    let mut b = Builder::new(*range, (4.0, 9.0));
    for q in 0..4 {
        let rot = q as f64 * FRAC_PI_2;
        let place = |pts: Vec<Point2>| -> Vec<Point2> {
            pts.into_iter().map(|p| p.rotate(rot) + center).collect()
        };
        b.open(
            place(line(&[(half, -arm), (half, -half), (arm, -half)])),
            ElementClass::RoadBoundary,
        );
        b.open(
            place(line(&[(0.0, -arm), (0.0, -half)])),
            ElementClass::LaneDivider,
        );
        b.closed(
            place(rect(-half, -half - 5.0, half, -half - 1.5)),
            ElementClass::PedCrossing,
        );

        b.lane(
            place(line(&[
                (lane, -arm),
                (lane, -half),
                (lane, half),
                (lane, arm),
            ])),
            LaneKind::Through,
        );
        let mut right = line(&[(lane, -arm)]);
        right.extend(arc(Point2::new(half, -half), half - lane, PI, FRAC_PI_2, 6));
        right.push(Point2::new(arm, -lane));
        b.lane(place(right), LaneKind::Right);
        let mut left = line(&[(lane, -arm)]);
        left.extend(arc(
            Point2::new(-half, -half),
            half + lane,
            0.0,
            FRAC_PI_2,
            10,
        ));
        left.push(Point2::new(-arm, lane));
        b.lane(place(left), LaneKind::Left);
    }
    b.layout
}

fn parking_lot(rng: &mut ChaCha8Rng, range: &PerceptionRange) -> LayoutGeometry {
    let aisle = 3.0;
    let stall_depth = 5.5;
    let pitch = 2.7;
    let (y0, y1) = (-range.longitudinal / 2.0, range.longitudinal / 2.0);
    let mut b = Builder::new(*range, (2.0, 5.0));
    let outer = aisle + stall_depth;
    b.open(
        line(&[(-outer, y0), (-outer, y1)]),
        ElementClass::RoadBoundary,
    );
    b.open(
        line(&[(outer, y0), (outer, y1)]),
        ElementClass::RoadBoundary,
    );
    let offset = rng.random_range(0.0..pitch);
    let mut y = -20.0 + offset;
    while y < 20.0 {
        for side in [-1.0, 1.0] {
            b.open(
                line(&[(side * aisle, y), (side * outer, y)]),
                ElementClass::LaneDivider,
            );
        }
        y += pitch;
    }
    b.lane(
        line(&[(aisle / 2.0, y0), (aisle / 2.0, y1)]),
        LaneKind::Through,
    );
    b.lane(
        line(&[(-aisle / 2.0, y1), (-aisle / 2.0, y0)]),
        LaneKind::Through,
    );
    if rng.random_bool(0.5) {
        let yc = rng.random_range(-25.0..21.0);
        b.closed(rect(-aisle, yc, aisle, yc + 3.0), ElementClass::PedCrossing);
    }
    b.layout
}

fn build_layout(spec: &SceneSpec, rng: &mut ChaCha8Rng, range: &PerceptionRange) -> LayoutGeometry {
    match spec.layout {
        Layout::StraightRoad => straight_road(rng, range),
        Layout::Intersection => intersection(rng, range),
        Layout::ParkingLot => parking_lot(rng, range),
    }
}

/// Smooth 0→1 ramp with zero slope at both ends.
fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

fn spawn_agent(
    id: usize,
    rng: &mut ChaCha8Rng,
    geo: &LayoutGeometry,
    layout: Layout,
) -> Option<Agent> {
    if geo.lanes.is_empty() {
        return None;
    }
    // intersections: pick the maneuver first, then a lane of that kind
    let wanted = match layout {
        Layout::Intersection => match rng.random_range(0..10) {
            0..=7 => LaneKind::Through,
            8 => LaneKind::Right,
            _ => LaneKind::Left,
        },
        _ => LaneKind::Through,
    };
    let options: Vec<&LaneInfo> = geo.lanes.iter().filter(|l| l.kind == wanted).collect();
    let lane = options[rng.random_range(0..options.len())];
    let path = &geo.elements[lane.element].polyline;
    let total = path.length();
    let back = (HISTORY_STEPS - 1) as f64 * DT;
    let ahead = FUTURE_STEPS as f64 * DT;
    let mut speed = rng.random_range(geo.speed_range.0..geo.speed_range.1);
    let span = speed * (back + ahead);
    if span >= total - 1.0 {
        speed *= (total - 1.0) / span * 0.95;
    }
    let (lo, hi) = (speed * back, total - speed * ahead);
    if !(hi > lo) {
        return None;
    }
    // turning agents should reach the junction within their horizon
    let s0 = match lane.kind {
        LaneKind::Through => rng.random_range(lo..hi),
        _ => {
            let turn_start = path.project(path.vertices()[1]).station;
            let earliest = (turn_start - 0.8 * speed * ahead).max(lo);
            let latest = (turn_start - 0.2 * speed * ahead).clamp(earliest, hi);
            if latest > earliest {
                rng.random_range(earliest..latest)
            } else {
                earliest.min(hi)
            }
        }
    };

    let mut maneuver = match lane.kind {
        LaneKind::Through => Maneuver::Follow,
        LaneKind::Left => Maneuver::TurnLeft,
        LaneKind::Right => Maneuver::TurnRight,
    };
    // lane change to a parallel neighbour on straight roads
    let mut lateral = Point2::ORIGIN;
    if layout == Layout::StraightRoad && rng.random_bool(0.1) {
        let idx = geo.lanes.iter().position(|l| l.element == lane.element)?;
        let k = geo.parallel[idx];
        let n = geo.parallel.len();
        let dir: i64 = match (k, k + 1 < n) {
            (0, _) => 1,
            (_, false) => -1,
            _ if rng.random_bool(0.5) => 1,
            _ => -1,
        };
        if n > 1 {
            lateral = Point2::new(dir as f64 * LANE_WIDTH, 0.0);
            maneuver = Maneuver::LaneChange;
        }
    }

    let at = |step: i64| -> Point2 {
        let s = s0 + speed * step as f64 * DT;
        let base = path.point_at(s);
        if step <= 0 {
            base
        } else {
            base + lateral * smoothstep(step as f64 / FUTURE_STEPS as f64)
        }
    };
    let history = (-(HISTORY_STEPS as i64) + 1..=0).map(at).collect();
    let future = (1..=FUTURE_STEPS as i64).map(at).collect();
    Some(Agent {
        id,
        maneuver,
        speed,
        history,
        future,
    })
}

/// Ground-truth map and agent trajectories for a scene. Deterministic in
/// `spec.seed`.
pub fn generate_scene(spec: &SceneSpec) -> Result<(VectorMap, Vec<Agent>)> {
    spec.validate()?;
    let range = PerceptionRange::default();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let geo = build_layout(spec, &mut rng, &range);
    let mut agents = Vec::with_capacity(spec.n_agents);
    let mut attempts = 0;
    while agents.len() < spec.n_agents && attempts < spec.n_agents * 20 {
        attempts += 1;
        if let Some(a) = spawn_agent(agents.len(), &mut rng, &geo, spec.layout) {
            agents.push(a);
        }
    }
    if agents.is_empty() {
        return Err(Error::Degenerate("could not place any agent".into()));
    }
    let map = VectorMap {
        elements: geo.elements,
        ego_pose: Default::default(),
        perception_range: range,
    };
    Ok((map, agents))
}

fn draw_logits(rng: &mut ChaCha8Rng, class: ElementClass, mode: ClassLogits) -> [f64; NUM_CLASSES] {
    match mode {
        ClassLogits::Hard => hard_label_logits(class),
        ClassLogits::Sampled { scale, bias } => {
            let mut z: [f64; NUM_CLASSES] =
                std::array::from_fn(|_| scale * rng.sample::<f64, _>(StandardNormal));
            z[rng.random_range(0..NUM_CLASSES)] += bias;
            let p = softmax(&z);
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let drawn = p
                .iter()
                .position(|pk| {
                    acc += pk;
                    u < acc
                })
                .unwrap_or(NUM_CLASSES - 1);
            z.swap(drawn, class.index());
            z
        }
    }
}

/// Emulated mapper output: each ground-truth element resampled to
/// `vertices` points, each point perturbed with Laplace noise of its true
/// scale.
pub fn observe(
    gt: &VectorMap,
    noise: &NoiseModel,
    spec: &SceneSpec,
    vertices: usize,
    seed: u64,
) -> Result<ProbVectorMap> {
    noise.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ego = gt.ego_pose.position;
    let mut elements = Vec::with_capacity(gt.elements.len());
    for e in &gt.elements {
        let resampled = e.polyline.resample(vertices)?;
        let mut verts = Vec::with_capacity(vertices);
        for &p in resampled.vertices() {
            let b_true = noise.true_scale(p, ego, &spec.occluders, spec.condition, e.class);
            let truth = LaplaceParam::new(0.0, b_true)?;
            let mu = p + Point2::new(truth.sample(&mut rng), truth.sample(&mut rng));
            let b_shown = truth.b * noise.emitted_scale;
            let logits = draw_logits(&mut rng, e.class, noise.class_logits);
            verts.push(ProbVertex::new(
                LaplaceParam::new(mu.x, b_shown)?,
                LaplaceParam::new(mu.y, b_shown)?,
                logits,
            )?);
        }
        let confidence = verts
            .iter()
            .map(|v| v.class_probs()[e.class.index()])
            .sum::<f64>()
            / verts.len() as f64;
        elements.push(ProbMapElement::new(
            verts,
            e.class,
            confidence.clamp(0.0, 1.0),
            resampled.is_closed(),
        )?);
    }
    Ok(ProbVectorMap {
        elements,
        ego_pose: gt.ego_pose,
        perception_range: gt.perception_range,
    })
}

/// Dataset-level generation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub n_scenes: usize,
    pub seed: u64,
    pub layouts: Vec<Layout>,
    pub conditions: Vec<Condition>,
    /// Inclusive range.
    pub agents_per_scene: [usize; 2],
    /// Inclusive range of free-standing occluders (vehicles, walls).
    pub occluders_per_scene: [usize; 2],
    pub occluder_radius: [f64; 2],
    pub vertices_per_element: usize,
    pub noise: NoiseModel,
    pub predictor: PredictorConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_scenes: 500,
            seed: 2024,
            layouts: vec![
                Layout::StraightRoad,
                Layout::Intersection,
                Layout::ParkingLot,
            ],
            conditions: vec![Condition::Day, Condition::Night, Condition::Rain],
            agents_per_scene: [2, 6],
            occluders_per_scene: [0, 4],
            occluder_radius: [0.8, 2.0],
            vertices_per_element: crate::geometry::DEFAULT_VERTEX_COUNT,
            noise: NoiseModel::default(),
            predictor: PredictorConfig::default(),
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        let cfg = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_scenes == 0 {
            return cfg("n_scenes must be positive");
        }
        if self.layouts.is_empty() || self.conditions.is_empty() {
            return cfg("layouts and conditions must be non-empty");
        }
        if self.agents_per_scene[0] == 0 || self.agents_per_scene[0] > self.agents_per_scene[1] {
            return cfg("agents_per_scene must be a range starting at 1 or more");
        }
        if self.occluders_per_scene[0] > self.occluders_per_scene[1] {
            return cfg("occluders_per_scene is not a valid range");
        }
        if !(self.occluder_radius[0] > 0.0 && self.occluder_radius[0] <= self.occluder_radius[1]) {
            return cfg("occluder_radius must be a positive range");
        }
        if self.vertices_per_element < 2 {
            return cfg("vertices_per_element must be at least 2");
        }
        self.predictor.validate()?;
        self.noise.validate()
    }
}

/// SplitMix64 finaliser, used to derive independent per-scene seeds.
pub fn split_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Draws the spec of scene `index`.
pub fn sample_scene_spec(cfg: &DatasetConfig, index: usize) -> SceneSpec {
    let seed = split_seed(cfg.seed, index as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5ce2_e5bc);
    let layout = cfg.layouts[rng.random_range(0..cfg.layouts.len())];
    let condition = cfg.conditions[rng.random_range(0..cfg.conditions.len())];
    let n_agents = rng.random_range(cfg.agents_per_scene[0]..=cfg.agents_per_scene[1]);
    let n_occ = rng.random_range(cfg.occluders_per_scene[0]..=cfg.occluders_per_scene[1]);
    let range = PerceptionRange::default();
    let mut occluders = Vec::with_capacity(n_occ);
    let radius = |rng: &mut ChaCha8Rng| {
        if cfg.occluder_radius[0] < cfg.occluder_radius[1] {
            rng.random_range(cfg.occluder_radius[0]..cfg.occluder_radius[1])
        } else {
            cfg.occluder_radius[0]
        }
    };
    while occluders.len() < n_occ {
        let c = Point2::new(
            rng.random_range(-range.lateral / 2.0..range.lateral / 2.0),
            rng.random_range(-range.longitudinal / 2.0..range.longitudinal / 2.0),
        );
        let r = radius(&mut rng);
        if c.norm() > r + 2.0 {
            occluders.push(Occluder {
                center: c,
                radius: r,
            });
        }
    }
    if layout == Layout::ParkingLot {
        // parked cars in the stalls next to the aisle
        for side in [-1.0, 1.0] {
            for k in 0..rng.random_range(2..6) {
                let y = rng.random_range(-20.0..20.0) + k as f64 * 0.1;
                occluders.push(Occluder {
                    center: Point2::new(side * 5.75, y),
                    radius: 1.2,
                });
            }
        }
    }
    SceneSpec {
        layout,
        seed,
        n_agents,
        condition,
        occluders,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub id: String,
    pub spec: SceneSpec,
    pub observe_seed: u64,
    pub gt: VectorMap,
    pub observed: ProbVectorMap,
    pub agents: Vec<Agent>,
}

pub fn scene_id(index: usize) -> String {
    format!("scene_{index:05}")
}

pub fn generate_one(cfg: &DatasetConfig, index: usize) -> Result<SyntheticScene> {
    let spec = sample_scene_spec(cfg, index);
    let (gt, agents) = generate_scene(&spec)?;
    let observe_seed = split_seed(spec.seed, 1);
    let observed = observe(
        &gt,
        &cfg.noise,
        &spec,
        cfg.vertices_per_element,
        observe_seed,
    )?;
    Ok(SyntheticScene {
        id: scene_id(index),
        spec,
        observe_seed,
        gt,
        observed,
        agents,
    })
}

/// All scenes of a dataset, generated in parallel and returned in index order.
pub fn generate_dataset(cfg: &DatasetConfig) -> Result<Vec<SyntheticScene>> {
    cfg.validate()?;
    (0..cfg.n_scenes)
        .into_par_iter()
        .map(|i| generate_one(cfg, i))
        .collect()
}
