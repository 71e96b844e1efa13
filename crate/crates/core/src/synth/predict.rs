//! Map-conditioned multimodal trajectory baselines.
//!
//! Both predictors extrapolate the last observed velocity, rank lane
//! centerlines by distance to the constant-velocity endpoint, and follow the
//! top `modes` centerlines at constant speed. The weighted variant also
//! penalises uncertain centerlines and pulls each mode toward the
//! constant-velocity path where the map is uncertain.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ElementClass, Point2, Polyline};
use crate::map::VectorMap;
use crate::probmap::{ProbVectorMap, B_FLOOR};

use super::{DT, FUTURE_STEPS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictorConfig {
    pub modes: usize,
    pub horizon: usize,
    pub dt: f64,
    /// Score penalty per meter of mean centerline scale.
    pub lambda: f64,
    /// Scale at which a mode is blended halfway toward constant velocity.
    pub b0: f64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            modes: crate::pred_eval::DEFAULT_MODES,
            horizon: FUTURE_STEPS,
            dt: DT,
            lambda: 1.0,
            b0: 0.5,
        }
    }
}

impl PredictorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.modes == 0 || self.horizon == 0 {
            return Err(Error::Config("modes and horizon must be positive".into()));
        }
        if !(self.dt > 0.0) || !(self.lambda >= 0.0) || !(self.b0 > 0.0) {
            return Err(Error::Config(
                "dt and b0 must be positive and lambda non-negative".into(),
            ));
        }
        Ok(())
    }
}

struct Candidate {
    line: Polyline,
    /// Cumulative arclength of each vertex and its scale above the floor.
    stations: Vec<f64>,
    excess: Vec<f64>,
}

impl Candidate {
    fn plain(line: Polyline) -> Self {
        Self {
            line,
            stations: Vec::new(),
            excess: Vec::new(),
        }
    }

    fn mean_excess(&self) -> f64 {
        if self.excess.is_empty() {
            0.0
        } else {
            self.excess.iter().sum::<f64>() / self.excess.len() as f64
        }
    }

    /// Mean excess scale over vertices within the travelled station range,
    /// falling back to the vertex nearest the range when none fall inside.
    fn local_excess(&self, s_from: f64, s_to: f64) -> f64 {
        if self.excess.is_empty() {
            return 0.0;
        }
        let (lo, hi) = if s_from <= s_to {
            (s_from, s_to)
        } else {
            (s_to, s_from)
        };
        let inside: Vec<f64> = self
            .stations
            .iter()
            .zip(&self.excess)
            .filter(|(s, _)| (lo..=hi).contains(*s))
            .map(|(_, b)| *b)
            .collect();
        if !inside.is_empty() {
            return inside.iter().sum::<f64>() / inside.len() as f64;
        }
        let mid = 0.5 * (lo + hi);
        let nearest = self
            .stations
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - mid).abs().total_cmp(&(b.1 - mid).abs()))
            .map(|(i, _)| i)
            .unwrap_or(0);
        self.excess[nearest]
    }
}

struct Motion {
    position: Point2,
    velocity: Point2,
}

fn motion(history: &[Point2], dt: f64) -> Result<Motion> {
    let position = *history
        .last()
        .ok_or_else(|| Error::invalid("trajectory history is empty"))?;
    let velocity = match history.len() {
        1 => Point2::ORIGIN,
        n => (position - history[n - 2]) * (1.0 / dt),
    };
    Ok(Motion { position, velocity })
}

fn cv_path(m: &Motion, cfg: &PredictorConfig) -> Vec<Point2> {
    (1..=cfg.horizon)
        .map(|t| m.position + m.velocity * (t as f64 * cfg.dt))
        .collect()
}

/// Constant-speed path along `line` from the projection of the current
/// position, in whichever direction agrees with the velocity.
fn follow(line: &Polyline, m: &Motion, cfg: &PredictorConfig) -> (Vec<Point2>, f64, f64) {
    let s0 = line.project(m.position).station;
    let sign = if line.tangent_at(s0).dot(m.velocity) >= 0.0 {
        1.0
    } else {
        -1.0
    };
    let speed = m.velocity.norm();
    let path = (1..=cfg.horizon)
        .map(|t| line.point_at(s0 + sign * speed * t as f64 * cfg.dt))
        .collect();
    (path, s0, s0 + sign * speed * cfg.horizon as f64 * cfg.dt)
}

fn predict(
    history: &[Point2],
    cands: &[Candidate],
    weighted: bool,
    cfg: &PredictorConfig,
) -> Result<Vec<Vec<Point2>>> {
    cfg.validate()?;
    let m = motion(history, cfg.dt)?;
    let cv = cv_path(&m, cfg);
    let end = *cv.last().expect("horizon is positive");
    let mut scored: Vec<(f64, usize)> = cands
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let mut score = c.line.distance_to(end);
            if weighted {
                score += cfg.lambda * c.mean_excess();
            }
            (score, i)
        })
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut modes: Vec<Vec<Point2>> = scored
        .iter()
        .take(cfg.modes)
        .map(|&(_, i)| {
            let c = &cands[i];
            let (path, s0, s1) = follow(&c.line, &m, cfg);
            let m_b = if weighted {
                c.local_excess(s0, s1)
            } else {
                0.0
            };
            if m_b == 0.0 {
                return path;
            }
            let w = m_b / (m_b + cfg.b0);
            path.iter().zip(&cv).map(|(p, q)| p.lerp(*q, w)).collect()
        })
        .collect();
    if modes.is_empty() {
        modes.push(cv);
    }
    while modes.len() < cfg.modes {
        modes.push(modes[0].clone());
    }
    Ok(modes)
}

/// Baseline that treats the map as exact.
pub fn predict_blind(
    history: &[Point2],
    map: &VectorMap,
    cfg: &PredictorConfig,
) -> Result<Vec<Vec<Point2>>> {
    let cands: Vec<Candidate> = map
        .of_class(ElementClass::LaneCenterline)
        .map(|e| Candidate::plain(e.polyline.clone()))
        .collect();
    predict(history, &cands, false, cfg)
}

/// Uncertainty-aware baseline over the mean geometry of `map`. Only scale in
/// excess of the floor counts, so a map with every scale at the floor yields
/// exactly the blind prediction on its mean map.
pub fn predict_weighted(
    history: &[Point2],
    map: &ProbVectorMap,
    cfg: &PredictorConfig,
) -> Result<Vec<Vec<Point2>>> {
    let mut cands = Vec::new();
    for e in map
        .elements
        .iter()
        .filter(|e| e.class == ElementClass::LaneCenterline)
    {
        let line = e.mean_polyline()?;
        let mut stations = Vec::with_capacity(e.len());
        let mut acc = 0.0;
        let mut prev: Option<Point2> = None;
        for v in e.vertices() {
            let p = v.mu();
            if let Some(q) = prev {
                acc += p.dist(q);
            }
            stations.push(acc);
            prev = Some(p);
        }
        let excess = e
            .vertices()
            .iter()
            .map(|v| (v.mean_b() - B_FLOOR).max(0.0))
            .collect();
        cands.push(Candidate {
            line,
            stations,
            excess,
        });
    }
    predict(history, &cands, true, cfg)
}
