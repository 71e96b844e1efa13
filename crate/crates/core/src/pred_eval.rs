//! Multimodal trajectory prediction metrics.
//!
//! The best of the K modes is the one with the smallest final displacement
//! error (lowest index on ties); minADE is that mode's average displacement,
//! not the smallest ADE over modes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point2;
use crate::stats;

pub const DEFAULT_MODES: usize = 6;
pub const DEFAULT_HORIZON: usize = 30;
pub const DEFAULT_MISS_THRESHOLD: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySet {
    modes: Vec<Vec<Point2>>,
    gt: Vec<Point2>,
}

impl TrajectorySet {
    pub fn new(modes: Vec<Vec<Point2>>, gt: Vec<Point2>) -> Result<Self> {
        if modes.is_empty() {
            return Err(Error::invalid("trajectory set needs at least one mode"));
        }
        if gt.is_empty() {
            return Err(Error::invalid("ground-truth future is empty"));
        }
        if let Some(bad) = modes.iter().find(|m| m.len() != gt.len()) {
            return Err(Error::DimensionMismatch {
                expected: gt.len(),
                found: bad.len(),
            });
        }
        Ok(Self { modes, gt })
    }

    pub fn modes(&self) -> &[Vec<Point2>] {
        &self.modes
    }

    pub fn gt(&self) -> &[Point2] {
        &self.gt
    }

    pub fn fde(&self, mode: usize) -> f64 {
        let last = self.gt.len() - 1;
        self.modes[mode][last].dist(self.gt[last])
    }

    pub fn ade(&self, mode: usize) -> f64 {
        let total: f64 = self.modes[mode]
            .iter()
            .zip(&self.gt)
            .map(|(p, g)| p.dist(*g))
            .sum();
        total / self.gt.len() as f64
    }

    /// Index of the mode with the smallest FDE.
    pub fn best_mode(&self) -> usize {
        let mut best = 0;
        let mut best_fde = self.fde(0);
        for k in 1..self.modes.len() {
            let f = self.fde(k);
            if f < best_fde {
                best = k;
                best_fde = f;
            }
        }
        best
    }
}

pub fn min_ade(ts: &TrajectorySet) -> f64 {
    ts.ade(ts.best_mode())
}

pub fn min_fde(ts: &TrajectorySet) -> f64 {
    ts.fde(ts.best_mode())
}

/// Strictly more than `threshold` meters at the endpoint.
pub fn is_miss(ts: &TrajectorySet, threshold: f64) -> bool {
    min_fde(ts) > threshold
}

pub fn miss_rate(sets: &[TrajectorySet], threshold: f64) -> Result<f64> {
    if sets.is_empty() {
        return Err(Error::invalid("miss rate of an empty set"));
    }
    let misses = sets.iter().filter(|s| is_miss(s, threshold)).count();
    Ok(misses as f64 / sets.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentMetrics {
    pub min_ade: f64,
    pub min_fde: f64,
    pub miss: bool,
    pub best_mode: usize,
}

pub fn agent_metrics(ts: &TrajectorySet, miss_threshold: f64) -> AgentMetrics {
    let best = ts.best_mode();
    let fde = ts.fde(best);
    AgentMetrics {
        min_ade: ts.ade(best),
        min_fde: fde,
        miss: fde > miss_threshold,
        best_mode: best,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredEvalReport {
    #[serde(rename = "minADE")]
    pub min_ade: f64,
    #[serde(rename = "minFDE")]
    pub min_fde: f64,
    #[serde(rename = "MR")]
    pub miss_rate: f64,
    pub n_agents: usize,
}

/// Aggregates per-agent metrics by plain averaging.
pub fn summarize(metrics: &[AgentMetrics]) -> Result<PredEvalReport> {
    if metrics.is_empty() {
        return Err(Error::invalid("no agents to evaluate"));
    }
    let n = metrics.len() as f64;
    Ok(PredEvalReport {
        min_ade: metrics.iter().map(|m| m.min_ade).sum::<f64>() / n,
        min_fde: metrics.iter().map(|m| m.min_fde).sum::<f64>() / n,
        miss_rate: metrics.iter().filter(|m| m.miss).count() as f64 / n,
        n_agents: metrics.len(),
    })
}

pub fn evaluate(sets: &[TrajectorySet], miss_threshold: f64) -> Result<PredEvalReport> {
    let metrics: Vec<AgentMetrics> = sets
        .iter()
        .map(|s| agent_metrics(s, miss_threshold))
        .collect();
    summarize(&metrics)
}

/// Per-bin means with 95% normal-approximation error bars.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinnedStat {
    pub bin_edges: Vec<f64>,
    /// `None` for empty bins.
    pub mean: Vec<Option<f64>>,
    pub ci95_half_width: Vec<f64>,
    pub count: Vec<usize>,
}

/// Bins are half-open `[lo, hi)` except the last, which also includes its
/// upper edge. Keys outside the edges are dropped.
pub fn binned_ci(values: &[(f64, f64)], edges: &[f64]) -> Result<BinnedStat> {
    if edges.len() < 2 {
        return Err(Error::invalid("need at least two bin edges"));
    }
    if edges.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid("bin edges must be strictly increasing"));
    }
    let n_bins = edges.len() - 1;
    let mut buckets: Vec<Vec<f64>> = vec![Vec::new(); n_bins];
    for &(key, value) in values {
        if let Some(b) = bin_index(edges, key) {
            buckets[b].push(value);
        }
    }
    let mut out = BinnedStat {
        bin_edges: edges.to_vec(),
        mean: Vec::with_capacity(n_bins),
        ci95_half_width: Vec::with_capacity(n_bins),
        count: Vec::with_capacity(n_bins),
    };
    for bucket in &buckets {
        out.mean.push(stats::mean(bucket));
        out.ci95_half_width.push(
            stats::sample_std(bucket)
                .map(|s| 1.96 * s / (bucket.len() as f64).sqrt())
                .unwrap_or(0.0),
        );
        out.count.push(bucket.len());
    }
    Ok(out)
}

fn bin_index(edges: &[f64], key: f64) -> Option<usize> {
    let last = edges.len() - 1;
    if !(key >= edges[0] && key <= edges[last]) {
        return None;
    }
    if key == edges[last] {
        return Some(last - 1);
    }
    // first edge strictly greater than key, minus one
    Some(edges.partition_point(|e| *e <= key) - 1)
}

/// Edges `0, step, 2·step, …, max`.
pub fn uniform_edges(max: f64, step: f64) -> Vec<f64> {
    let n = (max / step).round() as usize;
    (0..=n).map(|i| i as f64 * step).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn straight(n: usize, offset: Point2) -> Vec<Point2> {
        (1..=n)
            .map(|t| Point2::new(0.0, t as f64) + offset)
            .collect()
    }

    #[test]
    fn exact_mode_is_zero() {
        let gt = straight(30, Point2::ORIGIN);
        let ts =
            TrajectorySet::new(vec![straight(30, Point2::new(3.0, 0.0)), gt.clone()], gt).unwrap();
        assert_eq!(min_ade(&ts), 0.0);
        assert_eq!(min_fde(&ts), 0.0);
    }

    #[test]
    fn constant_offset() {
        let gt = straight(30, Point2::ORIGIN);
        let ts = TrajectorySet::new(vec![straight(30, Point2::new(1.0, 0.0))], gt).unwrap();
        assert!((min_ade(&ts) - 1.0).abs() < 1e-15);
        assert!((min_fde(&ts) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn best_mode_is_chosen_by_fde() {
        // A: large offsets early, small at the end -> FDE 0.5, ADE 2.0
        // B: tiny offsets early, 1.0 at the end -> FDE 1.0, ADE 0.1
        let gt: Vec<Point2> = (0..10).map(|t| Point2::new(0.0, t as f64)).collect();
        let a: Vec<Point2> = gt
            .iter()
            .enumerate()
            .map(|(t, g)| *g + Point2::new(if t == 9 { 0.5 } else { 19.5 / 9.0 }, 0.0))
            .collect();
        let b: Vec<Point2> = gt
            .iter()
            .enumerate()
            .map(|(t, g)| *g + Point2::new(if t == 9 { 1.0 } else { 0.0 }, 0.0))
            .collect();
        let ts = TrajectorySet::new(vec![a, b], gt).unwrap();
        assert!((ts.fde(0) - 0.5).abs() < 1e-12 && (ts.ade(0) - 2.0).abs() < 1e-12);
        assert!((ts.fde(1) - 1.0).abs() < 1e-12 && (ts.ade(1) - 0.1).abs() < 1e-12);
        assert_eq!(ts.best_mode(), 0);
        assert!((min_ade(&ts) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn min_fde_examples() {
        let gt = straight(5, Point2::ORIGIN);
        let modes: Vec<Vec<Point2>> = (0..6)
            .map(|k| {
                let a = k as f64;
                let mut m = gt.clone();
                *m.last_mut().unwrap() = gt[4] + Point2::new(3.0 * a.cos(), 3.0 * a.sin());
                m
            })
            .collect();
        let ts = TrajectorySet::new(modes, gt.clone()).unwrap();
        assert!((min_fde(&ts) - 3.0).abs() < 1e-12);

        let ts = TrajectorySet::new(
            vec![
                straight(5, Point2::new(1.2, 0.0)),
                straight(5, Point2::new(0.4, 0.0)),
            ],
            gt,
        )
        .unwrap();
        assert!((min_fde(&ts) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn miss_is_strict() {
        let gt = straight(3, Point2::ORIGIN);
        let at = TrajectorySet::new(vec![straight(3, Point2::new(2.0, 0.0))], gt.clone()).unwrap();
        assert!(!is_miss(&at, 2.0));
        let over =
            TrajectorySet::new(vec![straight(3, Point2::new(2.0001, 0.0))], gt.clone()).unwrap();
        assert!(is_miss(&over, 2.0));

        let sets: Vec<TrajectorySet> = (0..10)
            .map(|i| {
                let off = if i < 3 { 3.0 } else { 0.5 };
                TrajectorySet::new(vec![straight(3, Point2::new(off, 0.0))], gt.clone()).unwrap()
            })
            .collect();
        assert!((miss_rate(&sets, 2.0).unwrap() - 0.3).abs() < 1e-15);
        assert!(miss_rate(&[], 2.0).is_err());
    }

    #[test]
    fn shape_validation() {
        let gt = straight(3, Point2::ORIGIN);
        assert!(TrajectorySet::new(vec![], gt.clone()).is_err());
        assert!(TrajectorySet::new(vec![straight(2, Point2::ORIGIN)], gt).is_err());
    }

    #[test]
    fn binned_examples() {
        let edges = [0.0, 1.0, 2.0, 3.0];
        let r = binned_ci(
            &[(0.5, 7.0), (1.5, 1.0), (1.2, 1.0), (1.9, 1.0), (1.0, 1.0)],
            &edges,
        )
        .unwrap();
        assert_eq!(r.mean[0], Some(7.0));
        assert_eq!(r.ci95_half_width[0], 0.0);
        assert_eq!(r.mean[1], Some(1.0));
        assert_eq!(r.ci95_half_width[1], 0.0);
        assert_eq!(r.count, vec![1, 4, 0]);
        assert_eq!(r.mean[2], None);

        let r = binned_ci(&[(0.1, 0.0), (0.2, 2.0)], &[0.0, 1.0]).unwrap();
        assert_eq!(r.mean[0], Some(1.0));
        assert!((r.ci95_half_width[0] - 1.96).abs() < 1e-12);

        // the final edge belongs to the last bin, values beyond are dropped
        let r = binned_ci(&[(1.0, 4.0), (1.5, 9.0), (-0.1, 9.0)], &[0.0, 0.5, 1.0]).unwrap();
        assert_eq!(r.count, vec![0, 1]);
        assert!(binned_ci(&[], &[1.0, 1.0]).is_err());
        assert!(binned_ci(&[], &[1.0]).is_err());
    }

    #[test]
    fn edges_helper() {
        assert_eq!(
            uniform_edges(35.0, 5.0),
            vec![0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 35.0]
        );
    }

    fn traj(n: usize) -> impl Strategy<Value = Vec<Point2>> {
        prop::collection::vec((-50.0..50.0f64, -50.0..50.0f64), n)
            .prop_map(|v| v.into_iter().map(|(x, y)| Point2::new(x, y)).collect())
    }

    fn set() -> impl Strategy<Value = TrajectorySet> {
        (1usize..8, 1usize..6).prop_flat_map(|(t, k)| {
            (prop::collection::vec(traj(t), k), traj(t))
                .prop_map(|(modes, gt)| TrajectorySet::new(modes, gt).unwrap())
        })
    }

    proptest! {
        #[test]
        fn rigid_transform_invariance(ts in set(), angle in -3.2..3.2f64, tx in -100.0..100.0f64, ty in -100.0..100.0f64) {
            let f = |p: &Point2| p.rotate(angle) + Point2::new(tx, ty);
            let moved = TrajectorySet::new(
                ts.modes().iter().map(|m| m.iter().map(f).collect()).collect(),
                ts.gt().iter().map(f).collect(),
            ).unwrap();
            prop_assert!((min_ade(&ts) - min_ade(&moved)).abs() < 1e-9);
            prop_assert!((min_fde(&ts) - min_fde(&moved)).abs() < 1e-9);
        }

        #[test]
        fn min_fde_bounds_and_fde_selection(ts in set()) {
            let best = min_fde(&ts);
            for k in 0..ts.modes().len() {
                prop_assert!(best <= ts.fde(k));
            }
            prop_assert_eq!(min_ade(&ts), ts.ade(ts.best_mode()));
        }

        #[test]
        fn duplicate_mode_changes_nothing(ts in set(), pick in any::<prop::sample::Index>()) {
            let k = pick.index(ts.modes().len());
            let mut modes = ts.modes().to_vec();
            modes.push(modes[k].clone());
            let dup = TrajectorySet::new(modes, ts.gt().to_vec()).unwrap();
            prop_assert_eq!(min_ade(&ts), min_ade(&dup));
            prop_assert_eq!(min_fde(&ts), min_fde(&dup));
            prop_assert_eq!(is_miss(&ts, 2.0), is_miss(&dup, 2.0));
        }

        #[test]
        fn miss_rate_non_increasing_with_more_modes(sets in prop::collection::vec(set(), 1..10), extra in traj(1)) {
            let before = miss_rate(&sets, 2.0).unwrap();
            prop_assert!((0.0..=1.0).contains(&before));
            let grown: Vec<TrajectorySet> = sets.iter().map(|s| {
                let mut modes = s.modes().to_vec();
                modes.push(vec![extra[0]; s.gt().len()]);
                TrajectorySet::new(modes, s.gt().to_vec()).unwrap()
            }).collect();
            prop_assert!(miss_rate(&grown, 2.0).unwrap() <= before);
        }
    }
}
