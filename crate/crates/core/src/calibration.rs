//! Are the emitted uncertainties trustworthy?
//!
//! Regression: fraction of ground-truth coordinates inside central Laplace
//! intervals, compared with the nominal level. Classification: top-1
//! reliability diagram and expected calibration error.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point2, Polyline, NUM_CLASSES};
use crate::map::VectorMap;
use crate::map_eval::{match_elements, ApConfig};
use crate::probmap::{LaplaceParam, ProbMapElement, ProbVectorMap, ProbVertex};

pub const DEFAULT_LEVELS: [f64; 2] = [0.5, 0.9];
pub const DEFAULT_RELIABILITY_BINS: usize = 10;
/// Chamfer threshold under which a predicted element is paired with a
/// ground-truth element for coverage. Looser than the AP thresholds so that
/// noisy but correct elements still contribute, yet well under the spacing of
/// neighbouring lanes.
pub const DEFAULT_PAIR_THRESHOLD: f64 = 3.0;

/// Central interval `μ ± b·ln(1/(1−level))`.
pub fn laplace_interval(param: &LaplaceParam, level: f64) -> Result<(f64, f64)> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid(format!(
            "interval level {level} outside (0, 1)"
        )));
    }
    let half = param.b * (1.0 / (1.0 - level)).ln();
    Ok((param.mu - half, param.mu + half))
}

fn inside(param: &LaplaceParam, level: f64, v: f64) -> Result<bool> {
    let (lo, hi) = laplace_interval(param, level)?;
    Ok(lo <= v && v <= hi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub nominal_levels: Vec<f64>,
    /// x and y pooled.
    pub empirical_coverage: Vec<f64>,
    pub coverage_x: Vec<f64>,
    pub coverage_y: Vec<f64>,
    /// Number of paired vertices (each contributes two coordinates).
    pub n: usize,
}

pub fn coverage(pairs: &[(ProbVertex, Point2)], levels: &[f64]) -> Result<CoverageReport> {
    if pairs.is_empty() {
        return Err(Error::invalid("coverage needs at least one pair"));
    }
    let n = pairs.len() as f64;
    let mut report = CoverageReport {
        nominal_levels: levels.to_vec(),
        empirical_coverage: Vec::with_capacity(levels.len()),
        coverage_x: Vec::with_capacity(levels.len()),
        coverage_y: Vec::with_capacity(levels.len()),
        n: pairs.len(),
    };
    for &level in levels {
        let (mut cx, mut cy) = (0usize, 0usize);
        for (v, gt) in pairs {
            cx += usize::from(inside(&v.x, level, gt.x)?);
            cy += usize::from(inside(&v.y, level, gt.y)?);
        }
        report.coverage_x.push(cx as f64 / n);
        report.coverage_y.push(cy as f64 / n);
        report.empirical_coverage.push((cx + cy) as f64 / (2.0 * n));
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityReport {
    pub bin_edges: Vec<f64>,
    /// Mean top-1 confidence per bin, `None` if empty.
    pub bin_confidence: Vec<Option<f64>>,
    pub bin_accuracy: Vec<Option<f64>>,
    pub bin_count: Vec<usize>,
    pub ece: f64,
    pub n: usize,
}

/// Top-1 reliability over equal-width confidence bins on [0, 1].
pub fn reliability(
    preds: &[([f64; NUM_CLASSES], usize)],
    bins: usize,
) -> Result<ReliabilityReport> {
    if bins == 0 {
        return Err(Error::invalid("reliability needs at least one bin"));
    }
    let mut conf_sum = vec![0.0; bins];
    let mut correct = vec![0usize; bins];
    let mut count = vec![0usize; bins];
    for (probs, label) in preds {
        if *label >= NUM_CLASSES {
            return Err(Error::invalid(format!("class label {label} out of range")));
        }
        let (top, conf) =
            probs
                .iter()
                .copied()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (k, p)| {
                    if p > best.1 {
                        (k, p)
                    } else {
                        best
                    }
                });
        if !(0.0..=1.0).contains(&conf) {
            return Err(Error::invalid(format!("confidence {conf} outside [0, 1]")));
        }
        let b = ((conf * bins as f64) as usize).min(bins - 1);
        conf_sum[b] += conf;
        correct[b] += usize::from(top == *label);
        count[b] += 1;
    }
    let total = preds.len();
    let mut ece = 0.0;
    let mut bin_confidence = Vec::with_capacity(bins);
    let mut bin_accuracy = Vec::with_capacity(bins);
    for b in 0..bins {
        if count[b] == 0 {
            bin_confidence.push(None);
            bin_accuracy.push(None);
            continue;
        }
        let c = conf_sum[b] / count[b] as f64;
        let a = correct[b] as f64 / count[b] as f64;
        ece += count[b] as f64 / total as f64 * (a - c).abs();
        bin_confidence.push(Some(c));
        bin_accuracy.push(Some(a));
    }
    Ok(ReliabilityReport {
        bin_edges: (0..=bins).map(|i| i as f64 / bins as f64).collect(),
        bin_confidence,
        bin_accuracy,
        bin_count: count,
        ece,
        n: total,
    })
}

/// Pairs a predicted element's vertices index-by-index with the ground-truth
/// polyline resampled to the same vertex count, taking whichever traversal
/// direction gives the smaller summed pairing distance (forward on ties).
pub fn pair_vertices(pred: &ProbMapElement, gt: &Polyline) -> Result<Vec<(ProbVertex, Point2)>> {
    let resampled = gt.resample(pred.len())?;
    let forward = resampled.vertices();
    let reversed_line = resampled.reversed();
    let backward = reversed_line.vertices();
    let cost = |pts: &[Point2]| -> f64 {
        pred.vertices()
            .iter()
            .zip(pts)
            .map(|(v, p)| v.mu().dist(*p))
            .sum()
    };
    let pts = if cost(backward) < cost(forward) {
        backward
    } else {
        forward
    };
    Ok(pred
        .vertices()
        .iter()
        .cloned()
        .zip(pts.iter().copied())
        .collect())
}

/// Vertex pairs for one scene: elements are matched class by class under
/// `pair_threshold`, then paired with [`pair_vertices`].
pub fn scene_pairs(
    pred: &ProbVectorMap,
    gt: &VectorMap,
    pair_threshold: f64,
    cfg: &ApConfig,
) -> Result<Vec<(ProbVertex, Point2)>> {
    let mut out = Vec::new();
    for &class in &cfg.classes {
        let preds: Vec<(&ProbMapElement, f64)> = pred
            .elements
            .iter()
            .filter(|e| e.class == class)
            .map(|e| (e, e.confidence))
            .collect();
        let gts: Vec<Polyline> = gt.of_class(class).map(|e| e.polyline.clone()).collect();
        let matches = match_elements(&preds, &gts, pair_threshold, cfg)?;
        for ((e, _), m) in preds.iter().zip(matches) {
            if let Some(g) = m {
                out.extend(pair_vertices(e, &gts[g])?);
            }
        }
    }
    Ok(out)
}

/// Per-vertex `(class probabilities, true class)` for a probabilistic map
/// whose elements carry their true class.
pub fn class_predictions(map: &ProbVectorMap) -> Vec<([f64; NUM_CLASSES], usize)> {
    map.elements
        .iter()
        .flat_map(|e| {
            e.vertices()
                .iter()
                .map(move |v| (v.class_probs(), e.class.index()))
        })
        .collect()
}
