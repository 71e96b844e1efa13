//! Deterministic (mean-only) vector maps.

use serde::{Deserialize, Serialize};

use crate::geometry::{ElementClass, Point2, Polyline, Pose2};

/// Ego-centred window in which map elements are estimated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerceptionRange {
    /// Extent along the ego forward (+y) axis, meters.
    pub longitudinal: f64,
    /// Extent along the ego lateral (x) axis, meters.
    pub lateral: f64,
}

impl Default for PerceptionRange {
    fn default() -> Self {
        Self {
            longitudinal: 60.0,
            lateral: 30.0,
        }
    }
}

impl PerceptionRange {
    /// Whether an ego-frame point lies inside the window.
    pub fn contains(&self, p: Point2) -> bool {
        p.x.abs() <= self.lateral / 2.0 && p.y.abs() <= self.longitudinal / 2.0
    }

    /// Half-diagonal of the window, the farthest an in-range point can be.
    pub fn half_diagonal(&self) -> f64 {
        (self.lateral / 2.0).hypot(self.longitudinal / 2.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapElement {
    pub polyline: Polyline,
    pub class: ElementClass,
    pub confidence: f64,
}

impl MapElement {
    pub fn new(polyline: Polyline, class: ElementClass) -> Self {
        Self {
            polyline,
            class,
            confidence: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct VectorMap {
    pub elements: Vec<MapElement>,
    pub ego_pose: Pose2,
    pub perception_range: PerceptionRange,
}

impl VectorMap {
    pub fn of_class(&self, class: ElementClass) -> impl Iterator<Item = &MapElement> + '_ {
        self.elements.iter().filter(move |e| e.class == class)
    }
}
