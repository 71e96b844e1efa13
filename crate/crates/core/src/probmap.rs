//! Probabilistic map elements: every vertex coordinate is an independent
//! univariate Laplace distribution, every vertex carries raw class logits.
//!
//! The joint density of an element with `V` vertices is
//! `∏ᵢ ∏ⱼ 1/(2bᵢⱼ) · exp(−|vᵢⱼ − μᵢⱼ| / bᵢⱼ)` and the regression loss is its
//! negative logarithm, `Σᵢ Σⱼ ln(2bᵢⱼ) + |vᵢⱼ − μᵢⱼ| / bᵢⱼ`.

use std::f64::consts::SQRT_2;

use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{transform_point, ElementClass, Point2, Polyline, Pose2, NUM_CLASSES};
use crate::map::{MapElement, PerceptionRange, VectorMap};

/// Smallest scale accepted by [`LaplaceParam::new`]; the loss diverges as b → 0.
pub const B_FLOOR: f64 = 1e-6;

/// Logit assigned to the labelled class when only a hard label is known.
pub const HARD_LABEL_LOGIT: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaplaceParam {
    pub mu: f64,
    pub b: f64,
}

impl LaplaceParam {
    /// Validated constructor; scales below [`B_FLOOR`] are raised to it.
    pub fn new(mu: f64, b: f64) -> Result<Self> {
        let p = Self::exact(mu, b)?;
        Ok(Self {
            b: p.b.max(B_FLOOR),
            ..p
        })
    }

    /// Like [`LaplaceParam::new`] but keeps scales below the floor. Useful for
    /// probing the degenerate limit.
    pub fn exact(mu: f64, b: f64) -> Result<Self> {
        if !mu.is_finite() {
            return Err(Error::invalid(format!("location must be finite, got {mu}")));
        }
        if !(b.is_finite() && b > 0.0) {
            return Err(Error::invalid(format!(
                "scale must be positive and finite, got {b}"
            )));
        }
        Ok(Self { mu, b })
    }

    pub fn log_density(&self, v: f64) -> f64 {
        -(2.0 * self.b).ln() - (v - self.mu).abs() / self.b
    }

    pub fn density(&self, v: f64) -> f64 {
        (-(v - self.mu).abs() / self.b).exp() / (2.0 * self.b)
    }

    pub fn cdf(&self, v: f64) -> f64 {
        let z = (v - self.mu) / self.b;
        if z < 0.0 {
            0.5 * z.exp()
        } else {
            1.0 - 0.5 * (-z).exp()
        }
    }

    /// Inverse-CDF draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.sample::<f64, _>(Open01) - 0.5;
        self.mu - self.b * u.signum() * (1.0 - 2.0 * u.abs()).ln()
    }

    pub fn sigma(&self) -> f64 {
        SQRT_2 * self.b
    }
}

/// One coordinate's contribution to the NLL and its analytic gradient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NllTerm {
    pub loss: f64,
    pub grad_mu: f64,
    pub grad_b: f64,
}

/// `ln(2b) + |v − μ|/b` with `∂/∂μ = −sign(v − μ)/b` (zero at `v = μ`) and
/// `∂/∂b = 1/b − |v − μ|/b²`.
pub fn laplace_nll(v: f64, mu: f64, b: f64) -> Result<NllTerm> {
    if !(b > 0.0) || !b.is_finite() {
        return Err(Error::invalid(format!("scale must be positive, got {b}")));
    }
    let r = v - mu;
    let grad_mu = if r > 0.0 {
        -1.0 / b
    } else if r < 0.0 {
        1.0 / b
    } else {
        0.0
    };
    Ok(NllTerm {
        loss: (2.0 * b).ln() + r.abs() / b,
        grad_mu,
        grad_b: 1.0 / b - r.abs() / (b * b),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbVertex {
    pub x: LaplaceParam,
    pub y: LaplaceParam,
    pub class_logits: [f64; NUM_CLASSES],
}

impl ProbVertex {
    pub fn new(x: LaplaceParam, y: LaplaceParam, class_logits: [f64; NUM_CLASSES]) -> Result<Self> {
        if class_logits.iter().any(|l| !l.is_finite()) {
            return Err(Error::invalid("class logits must be finite"));
        }
        Ok(Self { x, y, class_logits })
    }

    /// Vertex with isotropic scale and hard-label logits for `class`.
    pub fn isotropic(mu: Point2, b: f64, class: ElementClass) -> Result<Self> {
        Self::new(
            LaplaceParam::new(mu.x, b)?,
            LaplaceParam::new(mu.y, b)?,
            hard_label_logits(class),
        )
    }

    pub fn mu(&self) -> Point2 {
        Point2::new(self.x.mu, self.y.mu)
    }

    pub fn b(&self) -> [f64; 2] {
        [self.x.b, self.y.b]
    }

    /// Mean of the two per-axis scales.
    pub fn mean_b(&self) -> f64 {
        0.5 * (self.x.b + self.y.b)
    }

    pub fn class_probs(&self) -> [f64; NUM_CLASSES] {
        softmax(&self.class_logits)
    }
}

pub fn hard_label_logits(class: ElementClass) -> [f64; NUM_CLASSES] {
    let mut l = [0.0; NUM_CLASSES];
    l[class.index()] = HARD_LABEL_LOGIT;
    l
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64; NUM_CLASSES]) -> [f64; NUM_CLASSES] {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = logits.map(|l| (l - max).exp());
    let sum: f64 = out.iter().sum();
    for o in &mut out {
        *o /= sum;
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbMapElement {
    vertices: Vec<ProbVertex>,
    pub class: ElementClass,
    pub confidence: f64,
    pub closed: bool,
}

impl ProbMapElement {
    pub fn new(
        vertices: Vec<ProbVertex>,
        class: ElementClass,
        confidence: f64,
        closed: bool,
    ) -> Result<Self> {
        if vertices.len() < 2 {
            return Err(Error::invalid(format!(
                "map element needs at least 2 vertices, got {}",
                vertices.len()
            )));
        }
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::invalid(format!(
                "confidence {confidence} outside [0, 1]"
            )));
        }
        Ok(Self {
            vertices,
            class,
            confidence,
            closed,
        })
    }

    pub fn vertices(&self) -> &[ProbVertex] {
        &self.vertices
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn mu_points(&self) -> Vec<Point2> {
        self.vertices.iter().map(ProbVertex::mu).collect()
    }

    pub fn mean_polyline(&self) -> Result<Polyline> {
        Polyline::new(self.mu_points(), self.closed)
    }

    pub fn density(&self, sample: &[Point2]) -> Result<f64> {
        density(&self.vertices, sample)
    }

    pub fn log_density(&self, sample: &[Point2]) -> Result<f64> {
        log_density(&self.vertices, sample)
    }

    pub fn nll_loss(&self, target: &[Point2]) -> Result<NllResult> {
        nll_loss(&self.vertices, target)
    }
}

fn check_len(vertices: &[ProbVertex], sample: &[Point2]) -> Result<()> {
    if vertices.len() != sample.len() {
        return Err(Error::DimensionMismatch {
            expected: vertices.len(),
            found: sample.len(),
        });
    }
    Ok(())
}

/// Joint log-density of a vertex sequence.
pub fn log_density(vertices: &[ProbVertex], sample: &[Point2]) -> Result<f64> {
    check_len(vertices, sample)?;
    Ok(vertices
        .iter()
        .zip(sample)
        .map(|(v, s)| v.x.log_density(s.x) + v.y.log_density(s.y))
        .sum())
}

/// Joint density as a direct product. Underflows for long elements; prefer
/// [`log_density`] for anything but small `V`.
pub fn density(vertices: &[ProbVertex], sample: &[Point2]) -> Result<f64> {
    check_len(vertices, sample)?;
    Ok(vertices
        .iter()
        .zip(sample)
        .map(|(v, s)| v.x.density(s.x) * v.y.density(s.y))
        .product())
}

#[derive(Debug, Clone, PartialEq)]
pub struct NllResult {
    pub loss: f64,
    /// Per vertex `[∂L/∂μx, ∂L/∂μy]`.
    pub grad_mu: Vec<[f64; 2]>,
    /// Per vertex `[∂L/∂bx, ∂L/∂by]`.
    pub grad_b: Vec<[f64; 2]>,
}

pub fn nll_loss(vertices: &[ProbVertex], target: &[Point2]) -> Result<NllResult> {
    check_len(vertices, target)?;
    let mut out = NllResult {
        loss: 0.0,
        grad_mu: Vec::with_capacity(vertices.len()),
        grad_b: Vec::with_capacity(vertices.len()),
    };
    for (v, t) in vertices.iter().zip(target) {
        let tx = laplace_nll(t.x, v.x.mu, v.x.b)?;
        let ty = laplace_nll(t.y, v.y.mu, v.y.b)?;
        out.loss += tx.loss + ty.loss;
        out.grad_mu.push([tx.grad_mu, ty.grad_mu]);
        out.grad_b.push([tx.grad_b, ty.grad_b]);
    }
    Ok(out)
}

pub fn sigma_from_b(b: f64) -> Result<f64> {
    if !(b > 0.0) || !b.is_finite() {
        return Err(Error::invalid(format!("scale must be positive, got {b}")));
    }
    Ok(SQRT_2 * b)
}

pub fn b_from_sigma(sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(format!(
            "standard deviation must be positive, got {sigma}"
        )));
    }
    Ok(sigma / SQRT_2)
}

/// Per-axis standard deviations after rotating the frame by `theta`:
/// `σx' = √(σx²cos²θ + σy²sin²θ)`, `σy' = √(σx²sin²θ + σy²cos²θ)`.
pub fn rotate_uncertainty(sigma_x: f64, sigma_y: f64, theta: f64) -> Result<(f64, f64)> {
    if !(sigma_x > 0.0 && sigma_y > 0.0) {
        return Err(Error::invalid(format!(
            "standard deviations must be positive, got ({sigma_x}, {sigma_y})"
        )));
    }
    let (s, c) = theta.sin_cos();
    let (sx2, sy2) = (sigma_x * sigma_x, sigma_y * sigma_y);
    Ok((
        (sx2 * c * c + sy2 * s * s).sqrt(),
        (sx2 * s * s + sy2 * c * c).sqrt(),
    ))
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProbVectorMap {
    pub elements: Vec<ProbMapElement>,
    pub ego_pose: Pose2,
    pub perception_range: PerceptionRange,
}

impl ProbVectorMap {
    /// Number of vertex means outside the perception window, expressed in the
    /// map's own ego frame.
    pub fn out_of_range_count(&self) -> usize {
        self.elements
            .iter()
            .flat_map(|e| e.vertices())
            .filter(|v| {
                let local = transform_point(v.mu(), &self.ego_pose);
                !self.perception_range.contains(local)
            })
            .count()
    }

    /// Logs a warning when vertex means leave the perception window. Not an error.
    pub fn warn_if_out_of_range(&self) {
        let n = self.out_of_range_count();
        if n > 0 {
            log::warn!("{n} vertex means lie outside the perception range");
        }
    }
}

/// Re-expresses a probabilistic map in `frame`: means are rigidly
/// transformed, scales go through `σ = √2·b`, the σ-space rotation, and back.
/// Logits are untouched.
pub fn standardize_map(map: &ProbVectorMap, frame: &Pose2) -> ProbVectorMap {
    let theta = frame.heading;
    let elements = map
        .elements
        .iter()
        .map(|e| {
            let vertices = e
                .vertices
                .iter()
                .map(|v| standardize_vertex(v, frame, theta))
                .collect();
            ProbMapElement {
                vertices,
                class: e.class,
                confidence: e.confidence,
                closed: e.closed,
            }
        })
        .collect();
    ProbVectorMap {
        elements,
        ego_pose: frame.relative(&map.ego_pose),
        perception_range: map.perception_range,
    }
}

fn standardize_vertex(v: &ProbVertex, frame: &Pose2, theta: f64) -> ProbVertex {
    let mu = transform_point(v.mu(), frame);
    let (bx, by) = if theta == 0.0 {
        (v.x.b, v.y.b)
    } else {
        let (sx, sy) = rotate_uncertainty(v.x.sigma(), v.y.sigma(), theta)
            .expect("vertex scales are positive by construction");
        (sx / SQRT_2, sy / SQRT_2)
    };
    ProbVertex {
        x: LaplaceParam { mu: mu.x, b: bx },
        y: LaplaceParam { mu: mu.y, b: by },
        class_logits: v.class_logits,
    }
}

/// Length of the concatenated `[μ; b; c]` vertex feature.
pub const FEATURE_LEN: usize = 4 + NUM_CLASSES;

/// Input vector for a downstream vertex encoder: `[μx, μy, bx, by, c₁..c_C]`
/// with `c = softmax(class_logits)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VertexFeature {
    pub values: [f64; FEATURE_LEN],
}

impl VertexFeature {
    pub fn class_block(&self) -> &[f64] {
        &self.values[4..]
    }
}

pub fn encode_vertex(v: &ProbVertex) -> VertexFeature {
    encode_with_scale(v, v.x.b, v.y.b)
}

/// Variant of [`encode_vertex`] carrying standard deviations instead of scales.
pub fn encode_vertex_sigma(v: &ProbVertex) -> VertexFeature {
    encode_with_scale(v, v.x.sigma(), v.y.sigma())
}

fn encode_with_scale(v: &ProbVertex, sx: f64, sy: f64) -> VertexFeature {
    let mut values = [0.0; FEATURE_LEN];
    values[..4].copy_from_slice(&[v.x.mu, v.y.mu, sx, sy]);
    values[4..].copy_from_slice(&v.class_probs());
    VertexFeature { values }
}

pub fn encode_element(e: &ProbMapElement) -> Vec<VertexFeature> {
    e.vertices.iter().map(encode_vertex).collect()
}

/// Drops the uncertainty, keeping mean polylines, classes and confidences.
/// Fails only if an element's means collapse onto a single point.
pub fn mean_map(map: &ProbVectorMap) -> Result<VectorMap> {
    let elements = map
        .elements
        .iter()
        .map(|e| {
            Ok(MapElement {
                polyline: e.mean_polyline()?,
                class: e.class,
                confidence: e.confidence,
            })
        })
        .collect::<Result<_>>()?;
    Ok(VectorMap {
        elements,
        ego_pose: map.ego_pose,
        perception_range: map.perception_range,
    })
}

/// One Monte-Carlo realisation of the map. Coordinates are drawn in element,
/// vertex, x-then-y order from a ChaCha8 stream seeded with `seed`.
pub fn sample_map(map: &ProbVectorMap, seed: u64) -> Result<VectorMap> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let elements = map
        .elements
        .iter()
        .map(|e| {
            let pts = e
                .vertices
                .iter()
                .map(|v| Point2::new(v.x.sample(&mut rng), v.y.sample(&mut rng)))
                .collect();
            Ok(MapElement {
                polyline: Polyline::new(pts, e.closed)?,
                class: e.class,
                confidence: e.confidence,
            })
        })
        .collect::<Result<_>>()?;
    Ok(VectorMap {
        elements,
        ego_pose: map.ego_pose,
        perception_range: map.perception_range,
    })
}
