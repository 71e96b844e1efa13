//! Map estimation metrics: Chamfer distance between point sets, per-class
//! average precision at Chamfer thresholds, and mAP.
//!
//! Predictions are pooled over all scenes of a class, ordered by confidence
//! (stable on ties) and matched greedily to the closest unmatched ground-truth
//! element of their own scene. AP is the area under the precision envelope of
//! the resulting precision/recall curve.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ElementClass, Point2, Polyline, DEFAULT_VERTEX_COUNT};
use crate::map::{MapElement, VectorMap};
use crate::probmap::{ProbMapElement, ProbVectorMap};

/// Default Chamfer thresholds in meters.
pub const DEFAULT_THRESHOLDS: [f64; 3] = [0.5, 1.0, 1.5];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChamferConfig {
    pub resample_count: usize,
}

impl Default for ChamferConfig {
    fn default() -> Self {
        Self {
            resample_count: DEFAULT_VERTEX_COUNT,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchingStrategy {
    /// Confidence-ordered greedy matching.
    #[default]
    Greedy,
    /// Per-scene optimal assignment, for sensitivity analysis.
    Hungarian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApConfig {
    pub thresholds: Vec<f64>,
    pub classes: Vec<ElementClass>,
    pub chamfer: ChamferConfig,
    pub matching: MatchingStrategy,
}

impl Default for ApConfig {
    fn default() -> Self {
        Self {
            thresholds: DEFAULT_THRESHOLDS.to_vec(),
            classes: ElementClass::ALL.to_vec(),
            chamfer: ChamferConfig::default(),
            matching: MatchingStrategy::Greedy,
        }
    }
}

impl ApConfig {
    pub fn validate(&self) -> Result<()> {
        if self.thresholds.is_empty() {
            return Err(Error::Config(
                "at least one AP threshold is required".into(),
            ));
        }
        if self.thresholds.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            return Err(Error::Config("AP thresholds must be positive".into()));
        }
        if self.thresholds.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config(
                "AP thresholds must be strictly increasing".into(),
            ));
        }
        if self.chamfer.resample_count < 2 {
            return Err(Error::Config("resample count must be at least 2".into()));
        }
        Ok(())
    }
}

/// `Σ_{x∈S1} min_y ‖x−y‖/|S1| + Σ_{y∈S2} min_x ‖y−x‖/|S2|`.
pub fn chamfer(s1: &[Point2], s2: &[Point2]) -> Result<f64> {
    if s1.is_empty() || s2.is_empty() {
        return Err(Error::invalid("chamfer distance of an empty point set"));
    }
    Ok(directed_mean(s1, s2) + directed_mean(s2, s1))
}

fn directed_mean(from: &[Point2], to: &[Point2]) -> f64 {
    let total: f64 = from
        .iter()
        .map(|x| to.iter().map(|y| x.dist(*y)).fold(f64::INFINITY, f64::min))
        .sum();
    total / from.len() as f64
}

/// Anything that can be compared as a mean polyline.
pub trait ElementGeometry {
    fn element_polyline(&self) -> Result<Polyline>;
}

impl<T: ElementGeometry + ?Sized> ElementGeometry for &T {
    fn element_polyline(&self) -> Result<Polyline> {
        (**self).element_polyline()
    }
}

impl ElementGeometry for Polyline {
    fn element_polyline(&self) -> Result<Polyline> {
        Ok(self.clone())
    }
}

impl ElementGeometry for MapElement {
    fn element_polyline(&self) -> Result<Polyline> {
        Ok(self.polyline.clone())
    }
}

impl ElementGeometry for ProbMapElement {
    fn element_polyline(&self) -> Result<Polyline> {
        self.mean_polyline()
    }
}

fn resampled_points<E: ElementGeometry + ?Sized>(
    e: &E,
    cfg: &ChamferConfig,
) -> Result<Vec<Point2>> {
    Ok(e.element_polyline()?
        .resample(cfg.resample_count)?
        .into_vertices())
}

/// Chamfer distance between two elements after resampling both.
pub fn chamfer_elements<A: ElementGeometry + ?Sized>(
    a: &A,
    b: &Polyline,
    cfg: &ChamferConfig,
) -> Result<f64> {
    chamfer(&resampled_points(a, cfg)?, &resampled_points(b, cfg)?)
}

/// Pairwise Chamfer distances, `dist[p][g]`.
fn distance_matrix(preds: &[Vec<Point2>], gts: &[Vec<Point2>]) -> Vec<Vec<f64>> {
    preds
        .iter()
        .map(|p| {
            gts.iter()
                .map(|g| chamfer(p, g).expect("resampled sets are non-empty"))
                .collect()
        })
        .collect()
}

/// Greedy assignment in the given prediction order: each prediction takes the
/// closest still-free ground truth below `threshold` (lowest index on ties).
fn greedy_assign(
    dist: &[Vec<f64>],
    order: &[usize],
    n_gt: usize,
    threshold: f64,
) -> Vec<Option<usize>> {
    let mut taken = vec![false; n_gt];
    let mut out = vec![None; dist.len()];
    for &p in order {
        let mut best: Option<(usize, f64)> = None;
        for (g, &d) in dist[p].iter().enumerate() {
            if taken[g] || !(d < threshold) {
                continue;
            }
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((g, d));
            }
        }
        if let Some((g, _)) = best {
            taken[g] = true;
            out[p] = Some(g);
        }
    }
    out
}

/// Maximum-cardinality assignment under `threshold`, ties broken by total
/// distance.
fn hungarian_assign(dist: &[Vec<f64>], n_gt: usize, threshold: f64) -> Vec<Option<usize>> {
    let n_pred = dist.len();
    if n_pred == 0 || n_gt == 0 {
        return vec![None; n_pred];
    }
    let valid_sum: f64 = dist.iter().flatten().filter(|d| **d < threshold).sum();
    let forbidden = valid_sum + 1.0;
    let n = n_pred.max(n_gt);
    let cost: Vec<Vec<f64>> = (0..n)
        .map(|p| {
            (0..n)
                .map(|g| match (p < n_pred, g < n_gt) {
                    (true, true) if dist[p][g] < threshold => dist[p][g],
                    (true, true) => forbidden,
                    _ => 0.0,
                })
                .collect()
        })
        .collect();
    let row_to_col = hungarian(&cost);
    (0..n_pred)
        .map(|p| {
            let g = row_to_col[p];
            (g < n_gt && dist[p][g] < threshold).then_some(g)
        })
        .collect()
}

/// Square min-cost assignment (shortest augmenting paths with potentials).
/// Returns the column assigned to each row.
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut way = vec![0usize; n + 1];
    // col_owner[j] = row matched to column j (1-based, 0 = free)
    let mut col_owner = vec![0usize; n + 1];
    for i in 1..=n {
        col_owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = col_owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[col_owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if col_owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            col_owner[j0] = col_owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0; n];
    for j in 1..=n {
        if col_owner[j] > 0 {
            row_to_col[col_owner[j] - 1] = j - 1;
        }
    }
    row_to_col
}

/// Indices sorted by descending confidence, stable on ties.
fn confidence_order(confidences: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..confidences.len()).collect();
    order.sort_by(|&a, &b| confidences[b].total_cmp(&confidences[a]));
    order
}

/// All-point interpolated AP from TP flags listed in ranked order.
///
/// `None` when there is nothing to evaluate (no ground truth and no
/// predictions); zero when there are predictions but no ground truth.
pub fn ap_from_ranked_hits(hits: &[bool], n_gt: usize) -> Option<f64> {
    if n_gt == 0 {
        return if hits.is_empty() { None } else { Some(0.0) };
    }
    let mut tp = 0usize;
    let mut curve: Vec<(f64, f64)> = Vec::with_capacity(hits.len());
    for (k, &hit) in hits.iter().enumerate() {
        tp += usize::from(hit);
        curve.push((tp as f64 / n_gt as f64, tp as f64 / (k + 1) as f64));
    }
    // precision envelope, right to left
    let mut envelope = 0.0f64;
    for point in curve.iter_mut().rev() {
        envelope = envelope.max(point.1);
        point.1 = envelope;
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (recall, precision) in curve {
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Some(ap)
}

struct PooledClass {
    /// Per scene: resampled prediction point sets and their confidences.
    preds: Vec<Vec<(Vec<Point2>, f64)>>,
    gts: Vec<Vec<Vec<Point2>>>,
}

impl PooledClass {
    fn n_gt(&self) -> usize {
        self.gts.iter().map(Vec::len).sum()
    }

    fn n_pred(&self) -> usize {
        self.preds.iter().map(Vec::len).sum()
    }
}

/// (scene, local index) pairs and the per-scene matches at one threshold.
struct ClassMatches {
    order: Vec<(usize, usize)>,
    assigned: Vec<Vec<Option<usize>>>,
}

fn match_class(
    pooled: &PooledClass,
    dists: &[Vec<Vec<f64>>],
    threshold: f64,
    strategy: MatchingStrategy,
) -> ClassMatches {
    let mut flat: Vec<(usize, usize)> = Vec::new();
    let mut confs = Vec::new();
    for (s, preds) in pooled.preds.iter().enumerate() {
        for (i, (_, c)) in preds.iter().enumerate() {
            flat.push((s, i));
            confs.push(*c);
        }
    }
    let order: Vec<(usize, usize)> = confidence_order(&confs)
        .into_iter()
        .map(|k| flat[k])
        .collect();

    let assigned = match strategy {
        MatchingStrategy::Greedy => {
            // greedy over the pooled order only interacts within a scene, so
            // each scene can be run on its own slice of the global order
            let mut per_scene_order: Vec<Vec<usize>> = vec![Vec::new(); pooled.preds.len()];
            for &(s, i) in &order {
                per_scene_order[s].push(i);
            }
            per_scene_order
                .iter()
                .enumerate()
                .map(|(s, ord)| greedy_assign(&dists[s], ord, pooled.gts[s].len(), threshold))
                .collect()
        }
        MatchingStrategy::Hungarian => (0..pooled.preds.len())
            .map(|s| hungarian_assign(&dists[s], pooled.gts[s].len(), threshold))
            .collect(),
    };
    ClassMatches { order, assigned }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class: ElementClass,
    /// AP per threshold, `None` where undefined.
    pub ap: Vec<Option<f64>>,
    pub n_gt: usize,
    pub n_pred: usize,
    /// Mean Chamfer distance of pairs matched at the loosest threshold.
    pub mean_matched_chamfer: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapEvalReport {
    pub thresholds: Vec<f64>,
    pub classes: Vec<ClassReport>,
    /// Mean over all defined AP cells.
    pub map: Option<f64>,
}

impl MapEvalReport {
    pub fn ap(&self, class: ElementClass, threshold_index: usize) -> Option<f64> {
        self.classes
            .iter()
            .find(|c| c.class == class)
            .and_then(|c| c.ap[threshold_index])
    }
}

/// Single-scene evaluation.
pub fn evaluate_map(
    preds: &ProbVectorMap,
    gt: &VectorMap,
    cfg: &ApConfig,
) -> Result<MapEvalReport> {
    evaluate_maps(&[(preds, gt)], cfg)
}

/// Pooled evaluation over many scenes.
pub fn evaluate_maps(
    scenes: &[(&ProbVectorMap, &VectorMap)],
    cfg: &ApConfig,
) -> Result<MapEvalReport> {
    cfg.validate()?;
    let mut classes = Vec::with_capacity(cfg.classes.len());
    for &class in &cfg.classes {
        let mut pooled = PooledClass {
            preds: Vec::with_capacity(scenes.len()),
            gts: Vec::with_capacity(scenes.len()),
        };
        for (pred, gt) in scenes {
            pooled.preds.push(
                pred.elements
                    .iter()
                    .filter(|e| e.class == class)
                    .map(|e| Ok((resampled_points(e, &cfg.chamfer)?, e.confidence)))
                    .collect::<Result<_>>()?,
            );
            pooled.gts.push(
                gt.of_class(class)
                    .map(|e| resampled_points(&e.polyline, &cfg.chamfer))
                    .collect::<Result<_>>()?,
            );
        }
        classes.push(evaluate_class(class, &pooled, cfg));
    }
    let cells: Vec<f64> = classes
        .iter()
        .flat_map(|c| c.ap.iter().flatten().copied())
        .collect();
    let map = (!cells.is_empty()).then(|| cells.iter().sum::<f64>() / cells.len() as f64);
    Ok(MapEvalReport {
        thresholds: cfg.thresholds.clone(),
        classes,
        map,
    })
}

fn evaluate_class(class: ElementClass, pooled: &PooledClass, cfg: &ApConfig) -> ClassReport {
    let dists: Vec<Vec<Vec<f64>>> = pooled
        .preds
        .iter()
        .zip(&pooled.gts)
        .map(|(p, g)| {
            let pts: Vec<Vec<Point2>> = p.iter().map(|(pts, _)| pts.clone()).collect();
            distance_matrix(&pts, g)
        })
        .collect();
    let n_gt = pooled.n_gt();
    let mut ap = Vec::with_capacity(cfg.thresholds.len());
    let mut mean_matched_chamfer = None;
    for (ti, &threshold) in cfg.thresholds.iter().enumerate() {
        let m = match_class(pooled, &dists, threshold, cfg.matching);
        let hits: Vec<bool> = m
            .order
            .iter()
            .map(|&(s, i)| m.assigned[s][i].is_some())
            .collect();
        ap.push(ap_from_ranked_hits(&hits, n_gt));
        if ti + 1 == cfg.thresholds.len() {
            let matched: Vec<f64> = m
                .assigned
                .iter()
                .enumerate()
                .flat_map(|(s, a)| {
                    let d = &dists[s];
                    a.iter()
                        .enumerate()
                        .filter_map(move |(i, g)| g.map(|g| d[i][g]))
                })
                .collect();
            if !matched.is_empty() {
                mean_matched_chamfer = Some(matched.iter().sum::<f64>() / matched.len() as f64);
            }
        }
    }
    ClassReport {
        class,
        ap,
        n_gt,
        n_pred: pooled.n_pred(),
        mean_matched_chamfer,
    }
}

/// AP of one scene's predictions of a single class against its ground truth.
pub fn average_precision<P: ElementGeometry>(
    preds: &[(P, f64)],
    gts: &[Polyline],
    threshold: f64,
    cfg: &ApConfig,
) -> Result<Option<f64>> {
    let pooled = PooledClass {
        preds: vec![preds
            .iter()
            .map(|(p, c)| Ok((resampled_points(p, &cfg.chamfer)?, *c)))
            .collect::<Result<_>>()?],
        gts: vec![gts
            .iter()
            .map(|g| resampled_points(g, &cfg.chamfer))
            .collect::<Result<_>>()?],
    };
    let preds_pts: Vec<Vec<Point2>> = pooled.preds[0].iter().map(|(p, _)| p.clone()).collect();
    let dists = vec![distance_matrix(&preds_pts, &pooled.gts[0])];
    let m = match_class(&pooled, &dists, threshold, cfg.matching);
    let hits: Vec<bool> = m
        .order
        .iter()
        .map(|&(s, i)| m.assigned[s][i].is_some())
        .collect();
    Ok(ap_from_ranked_hits(&hits, gts.len()))
}

/// Matches one scene's predictions to ground truth at `threshold`, returning
/// the matched ground-truth index for each prediction.
pub fn match_elements<P: ElementGeometry>(
    preds: &[(P, f64)],
    gts: &[Polyline],
    threshold: f64,
    cfg: &ApConfig,
) -> Result<Vec<Option<usize>>> {
    let preds_pts: Vec<Vec<Point2>> = preds
        .iter()
        .map(|(p, _)| resampled_points(p, &cfg.chamfer))
        .collect::<Result<_>>()?;
    let gt_pts: Vec<Vec<Point2>> = gts
        .iter()
        .map(|g| resampled_points(g, &cfg.chamfer))
        .collect::<Result<_>>()?;
    let dist = distance_matrix(&preds_pts, &gt_pts);
    Ok(match cfg.matching {
        MatchingStrategy::Greedy => {
            let confs: Vec<f64> = preds.iter().map(|(_, c)| *c).collect();
            greedy_assign(&dist, &confidence_order(&confs), gts.len(), threshold)
        }
        MatchingStrategy::Hungarian => hungarian_assign(&dist, gts.len(), threshold),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probmap::ProbVertex;
    use proptest::prelude::*;

    fn pts(v: &[(f64, f64)]) -> Vec<Point2> {
        v.iter().map(|&(x, y)| Point2::new(x, y)).collect()
    }

    fn seg(x0: f64, y0: f64, x1: f64, y1: f64) -> Polyline {
        Polyline::open(pts(&[(x0, y0), (x1, y1)])).unwrap()
    }

    #[test]
    fn chamfer_examples() {
        let a = pts(&[(0.0, 0.0), (3.0, 1.0)]);
        assert_eq!(chamfer(&a, &a).unwrap(), 0.0);
        assert_eq!(
            chamfer(&pts(&[(0.0, 0.0)]), &pts(&[(1.0, 0.0)])).unwrap(),
            2.0
        );
        assert_eq!(
            chamfer(&pts(&[(0.0, 0.0), (2.0, 0.0)]), &pts(&[(1.0, 0.0)])).unwrap(),
            2.0
        );
        assert!(chamfer(&[], &a).is_err());
    }

    #[test]
    fn element_chamfer_examples() {
        let cfg = ChamferConfig::default();
        let a = seg(0.0, 0.0, 0.0, 10.0);
        assert_eq!(chamfer_elements(&a, &a, &cfg).unwrap(), 0.0);
        let b = seg(0.4, 0.0, 0.4, 10.0);
        assert!((chamfer_elements(&a, &b, &cfg).unwrap() - 0.8).abs() < 1e-12);
        let fwd = chamfer_elements(&a, &b, &cfg).unwrap();
        let rev = chamfer_elements(&a.reversed(), &b, &cfg).unwrap();
        assert!((fwd - rev).abs() < 1e-12);
    }

    #[test]
    fn ap_hand_case() {
        // 0.9 TP, 0.8 FP, 0.7 TP against 2 GT
        let ap = ap_from_ranked_hits(&[true, false, true], 2).unwrap();
        assert!((ap - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-12);
        assert_eq!(ap_from_ranked_hits(&[], 0), None);
        assert_eq!(ap_from_ranked_hits(&[false], 0), Some(0.0));
        assert_eq!(ap_from_ranked_hits(&[], 3), Some(0.0));
    }

    #[test]
    fn ap_hand_case_through_matching() {
        let cfg = ApConfig::default();
        let gts = vec![seg(0.0, 0.0, 0.0, 10.0), seg(10.0, 0.0, 10.0, 10.0)];
        let preds = vec![
            (seg(0.1, 0.0, 0.1, 10.0), 0.9),
            (seg(5.0, 0.0, 5.0, 10.0), 0.8),
            (seg(10.1, 0.0, 10.1, 10.0), 0.7),
        ];
        let ap = average_precision(&preds, &gts, 1.0, &cfg).unwrap().unwrap();
        assert!((ap - 0.833_333_333_333_333_3).abs() < 1e-12);
    }

    #[test]
    fn ap_perfect_and_zero() {
        let cfg = ApConfig::default();
        let gts = vec![seg(0.0, 0.0, 0.0, 10.0), seg(10.0, 0.0, 10.0, 10.0)];
        let exact: Vec<(Polyline, f64)> = gts.iter().map(|g| (g.clone(), 0.5)).collect();
        assert_eq!(
            average_precision(&exact, &gts, 0.5, &cfg).unwrap(),
            Some(1.0)
        );
        let far: Vec<(Polyline, f64)> = gts
            .iter()
            .map(|g| (g.resample(2).unwrap(), 0.5))
            .map(|(p, c)| {
                let v = p
                    .vertices()
                    .iter()
                    .map(|q| *q + Point2::new(3.0, 0.0))
                    .collect();
                (Polyline::open(v).unwrap(), c)
            })
            .collect();
        assert_eq!(average_precision(&far, &gts, 1.5, &cfg).unwrap(), Some(0.0));
    }

    fn prob_map_from(map: &VectorMap, shift: Point2) -> ProbVectorMap {
        let elements = map
            .elements
            .iter()
            .map(|e| {
                let vs = e
                    .polyline
                    .vertices()
                    .iter()
                    .map(|p| ProbVertex::isotropic(*p + shift, 0.1, e.class).unwrap())
                    .collect();
                ProbMapElement::new(vs, e.class, 1.0, e.polyline.is_closed()).unwrap()
            })
            .collect();
        ProbVectorMap {
            elements,
            ..Default::default()
        }
    }

    fn scene() -> VectorMap {
        let mut elements = Vec::new();
        for (k, class) in ElementClass::ALL.into_iter().enumerate() {
            let x = 8.0 * k as f64;
            elements.push(MapElement::new(seg(x, -20.0, x, 20.0), class));
            elements.push(MapElement::new(seg(x + 4.0, -20.0, x + 4.0, 20.0), class));
        }
        VectorMap {
            elements,
            ..Default::default()
        }
    }

    #[test]
    fn evaluate_identity_and_empty() {
        let gt = scene();
        let cfg = ApConfig::default();
        let r = evaluate_map(&prob_map_from(&gt, Point2::ORIGIN), &gt, &cfg).unwrap();
        assert_eq!(r.map, Some(1.0));
        let r = evaluate_map(&ProbVectorMap::default(), &gt, &cfg).unwrap();
        assert_eq!(r.map, Some(0.0));
        let r = evaluate_map(&ProbVectorMap::default(), &VectorMap::default(), &cfg).unwrap();
        assert_eq!(r.map, None);
    }

    #[test]
    fn evaluate_lateral_shift() {
        // a rigid 0.75 m shift of straight elements: every nearest neighbour is
        // exactly 0.75 m away in both directions, so D_Ch = 1.5 — which is not
        // below the 1.5 m threshold
        let gt = scene();
        let shifted = prob_map_from(&gt, Point2::new(0.75, 0.0));
        let d = chamfer_elements(
            &shifted.elements[0],
            &gt.elements[0].polyline,
            &ChamferConfig::default(),
        )
        .unwrap();
        assert!((d - 1.5).abs() < 1e-12);
        let r = evaluate_map(&shifted, &gt, &ApConfig::default()).unwrap();
        for c in &r.classes {
            assert_eq!(c.ap, vec![Some(0.0), Some(0.0), Some(0.0)]);
        }
        // at 0.45 m the distance is 0.9: matched at 1.0 and 1.5 but not 0.5
        let shifted = prob_map_from(&gt, Point2::new(0.45, 0.0));
        let r = evaluate_map(&shifted, &gt, &ApConfig::default()).unwrap();
        for c in &r.classes {
            assert_eq!(c.ap, vec![Some(0.0), Some(1.0), Some(1.0)]);
            assert!((c.mean_matched_chamfer.unwrap() - 0.9).abs() < 1e-12);
        }
        assert!((r.map.unwrap() - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    #[allow(clippy::field_reassign_with_default)]
    fn config_validation() {
        let mut cfg = ApConfig::default();
        cfg.thresholds = vec![1.0, 0.5];
        assert!(cfg.validate().is_err());
        cfg.thresholds = vec![0.0, 0.5];
        assert!(cfg.validate().is_err());
        cfg.thresholds = vec![];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn hungarian_small() {
        let cost = vec![
            vec![4.0, 1.0, 3.0],
            vec![2.0, 0.0, 5.0],
            vec![3.0, 2.0, 2.0],
        ];
        let a = hungarian(&cost);
        let total: f64 = a.iter().enumerate().map(|(r, &c)| cost[r][c]).sum();
        assert_eq!(total, 5.0);
    }

    #[test]
    fn hungarian_beats_greedy_on_crossed_pairs() {
        // greedy gives the confident prediction the shared GT and leaves the
        // other unmatched; optimal assignment matches both
        let dist = vec![vec![0.2, 0.8], vec![0.3, 5.0]];
        let greedy = greedy_assign(&dist, &[0, 1], 2, 1.0);
        assert_eq!(greedy, vec![Some(0), None]);
        let opt = hungarian_assign(&dist, 2, 1.0);
        assert_eq!(opt, vec![Some(1), Some(0)]);
    }

    proptest! {
        #[test]
        fn chamfer_symmetric_nonnegative(
            a in prop::collection::vec((-10.0..10.0f64, -10.0..10.0f64), 1..20),
            b in prop::collection::vec((-10.0..10.0f64, -10.0..10.0f64), 1..20),
        ) {
            let (a, b) = (pts(&a), pts(&b));
            let ab = chamfer(&a, &b).unwrap();
            prop_assert_eq!(ab, chamfer(&b, &a).unwrap());
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(chamfer(&a, &a).unwrap(), 0.0);
        }

        #[test]
        fn ap_invariant_under_monotone_confidence_map(
            hits_conf in prop::collection::vec((any::<bool>(), 0.01..1.0f64), 1..12),
            n_extra_gt in 0usize..4,
        ) {
            let n_gt = hits_conf.iter().filter(|h| h.0).count() + n_extra_gt;
            let confs: Vec<f64> = hits_conf.iter().map(|h| h.1).collect();
            let ranked = |cs: &[f64]| -> Vec<bool> {
                confidence_order(cs).into_iter().map(|k| hits_conf[k].0).collect()
            };
            let warped: Vec<f64> = confs.iter().map(|c| (3.0 * c).exp() - 7.0).collect();
            prop_assert_eq!(
                ap_from_ranked_hits(&ranked(&confs), n_gt),
                ap_from_ranked_hits(&ranked(&warped), n_gt)
            );
        }
    }
}
