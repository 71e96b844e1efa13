//! Laplace maximum-likelihood estimation.
//!
//! The closed form (median, mean absolute deviation about the median) is the
//! exact minimizer of the mean NLL; the gradient route minimizes the same
//! loss iteratively and should land on the same answer.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::Point2;
use crate::map::VectorMap;
use crate::probmap::{
    hard_label_logits, laplace_nll, LaplaceParam, ProbMapElement, ProbVectorMap, ProbVertex,
    B_FLOOR,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitResult {
    pub mu_hat: f64,
    pub b_hat: f64,
    pub iterations: usize,
    /// Mean per-sample NLL at the estimate.
    pub final_loss: f64,
    pub converged: bool,
    /// The raw estimate of b fell below [`B_FLOOR`] and was clamped.
    pub floored: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientConfig {
    /// Initial trial step of the line search.
    pub step_size: f64,
    pub max_iters: usize,
    /// Converged once an accepted step changes the loss by less than this.
    pub tolerance: f64,
    /// Sufficient-decrease constant of the Armijo condition.
    pub armijo: f64,
    /// Starting point `(μ, b)`; `None` starts from the sample mean and the
    /// mean absolute deviation about it.
    pub init: Option<(f64, f64)>,
}

impl Default for GradientConfig {
    fn default() -> Self {
        Self {
            step_size: 1.0,
            max_iters: 10_000,
            tolerance: 1e-10,
            armijo: 1e-4,
            init: None,
        }
    }
}

fn check_samples(samples: &[f64]) -> Result<()> {
    if samples.len() < 2 {
        return Err(Error::invalid(format!(
            "need at least 2 samples, got {}",
            samples.len()
        )));
    }
    if samples.iter().any(|s| !s.is_finite()) {
        return Err(Error::invalid("samples must be finite"));
    }
    Ok(())
}

/// Mean NLL of `samples` under Laplace(μ, b).
pub fn mean_nll(samples: &[f64], mu: f64, b: f64) -> Result<f64> {
    let mut total = 0.0;
    for &x in samples {
        total += laplace_nll(x, mu, b)?.loss;
    }
    Ok(total / samples.len() as f64)
}

/// Lower median: the `⌊(n−1)/2⌋`-th order statistic.
pub fn lower_median(samples: &[f64]) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted[(sorted.len() - 1) / 2]
}

pub fn fit_closed_form(samples: &[f64]) -> Result<FitResult> {
    check_samples(samples)?;
    let mu = lower_median(samples);
    let raw_b = samples.iter().map(|x| (x - mu).abs()).sum::<f64>() / samples.len() as f64;
    let floored = raw_b < B_FLOOR;
    let b = raw_b.max(B_FLOOR);
    Ok(FitResult {
        mu_hat: mu,
        b_hat: b,
        iterations: 0,
        final_loss: mean_nll(samples, mu, b)?,
        converged: true,
        floored,
    })
}

/// Loss and gradient with respect to `(μ, ln b)`.
fn loss_and_grad(samples: &[f64], mu: f64, log_b: f64) -> Result<(f64, f64, f64)> {
    let b = log_b.exp();
    let (mut loss, mut g_mu, mut g_b) = (0.0, 0.0, 0.0);
    for &x in samples {
        let t = laplace_nll(x, mu, b)?;
        loss += t.loss;
        g_mu += t.grad_mu;
        g_b += t.grad_b;
    }
    let n = samples.len() as f64;
    // chain rule through b = exp(s)
    Ok((loss / n, g_mu / n, g_b / n * b))
}

/// Gradient descent on the mean NLL over `(μ, ln b)` with a halving
/// backtracking line search.
pub fn fit_gradient(samples: &[f64], config: &GradientConfig) -> Result<FitResult> {
    fit_gradient_traced(samples, config).map(|(r, _)| r)
}

/// [`fit_gradient`] that also returns the loss after every accepted step,
/// starting with the initial loss.
pub fn fit_gradient_traced(
    samples: &[f64],
    config: &GradientConfig,
) -> Result<(FitResult, Vec<f64>)> {
    check_samples(samples)?;
    if !(config.step_size > 0.0) {
        return Err(Error::invalid("step size must be positive"));
    }
    let (mut mu, b0) = config.init.unwrap_or_else(|| {
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        let mad = samples.iter().map(|x| (x - mean).abs()).sum::<f64>() / samples.len() as f64;
        (mean, mad)
    });
    let mut log_b = b0.max(B_FLOOR).ln();
    let (mut loss, mut g_mu, mut g_s) = loss_and_grad(samples, mu, log_b)?;
    let mut step = config.step_size;
    let mut iterations = 0;
    let mut converged = false;
    let mut trace = vec![loss];

    while iterations < config.max_iters {
        let g2 = g_mu * g_mu + g_s * g_s;
        if g2 == 0.0 {
            converged = true;
            break;
        }
        // line search, starting from a slightly larger step than last time
        let mut alpha = (step * 2.0).min(config.step_size);
        let accepted = loop {
            let trial_mu = mu - alpha * g_mu;
            let trial_s = (log_b - alpha * g_s).max(B_FLOOR.ln());
            // overshooting steps can overflow exp(s); treat them as rejected
            if trial_s.exp().is_finite() && trial_mu.is_finite() {
                let trial = loss_and_grad(samples, trial_mu, trial_s)?;
                if trial.0 <= loss - config.armijo * alpha * g2 {
                    break Some((trial_mu, trial_s, trial));
                }
            }
            alpha *= 0.5;
            if alpha < 1e-16 {
                break None;
            }
        };
        iterations += 1;
        let Some((new_mu, new_s, (new_loss, new_gmu, new_gs))) = accepted else {
            // no descent direction left at machine precision
            converged = true;
            break;
        };
        let change = loss - new_loss;
        mu = new_mu;
        log_b = new_s;
        loss = new_loss;
        g_mu = new_gmu;
        g_s = new_gs;
        step = alpha;
        trace.push(loss);
        if change < config.tolerance {
            converged = true;
            break;
        }
    }

    let b = log_b.exp();
    let result = FitResult {
        mu_hat: mu,
        b_hat: b,
        iterations,
        final_loss: loss,
        converged,
        floored: b <= B_FLOOR,
    };
    Ok((result, trace))
}

/// Fits every vertex coordinate of `template` independently from repeated
/// realisations of the same map. Observation `k`'s element `i` vertex `j` must
/// correspond to the template's element `i` vertex `j`.
pub fn fit_map(observations: &[VectorMap], template: &VectorMap) -> Result<ProbVectorMap> {
    if observations.len() < 2 {
        return Err(Error::invalid(format!(
            "need at least 2 observations, got {}",
            observations.len()
        )));
    }
    for (k, obs) in observations.iter().enumerate() {
        if obs.elements.len() != template.elements.len() {
            return Err(Error::Schema(format!(
                "observation {k} has {} elements, template has {}",
                obs.elements.len(),
                template.elements.len()
            )));
        }
        for (i, (oe, te)) in obs.elements.iter().zip(&template.elements).enumerate() {
            if oe.polyline.len() != te.polyline.len() {
                return Err(Error::Schema(format!(
                    "observation {k} element {i} has {} vertices, template has {}",
                    oe.polyline.len(),
                    te.polyline.len()
                )));
            }
        }
    }

    let elements = template
        .elements
        .par_iter()
        .enumerate()
        .map(|(i, te)| {
            let vertices = (0..te.polyline.len())
                .map(|j| {
                    let pts: Vec<Point2> = observations
                        .iter()
                        .map(|o| o.elements[i].polyline.vertices()[j])
                        .collect();
                    let xs: Vec<f64> = pts.iter().map(|p| p.x).collect();
                    let ys: Vec<f64> = pts.iter().map(|p| p.y).collect();
                    let fx = fit_closed_form(&xs)?;
                    let fy = fit_closed_form(&ys)?;
                    ProbVertex::new(
                        LaplaceParam::new(fx.mu_hat, fx.b_hat)?,
                        LaplaceParam::new(fy.mu_hat, fy.b_hat)?,
                        hard_label_logits(te.class),
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            ProbMapElement::new(vertices, te.class, te.confidence, te.polyline.is_closed())
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(ProbVectorMap {
        elements,
        ego_pose: template.ego_pose,
        perception_range: template.perception_range,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{ElementClass, Polyline};
    use crate::map::MapElement;
    use crate::stats::spearman;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn draws(mu: f64, b: f64, n: usize, seed: u64) -> Vec<f64> {
        let p = LaplaceParam::new(mu, b).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| p.sample(&mut rng)).collect()
    }

    #[test]
    fn closed_form_examples() {
        let r = fit_closed_form(&[-1.0, 0.0, 1.0]).unwrap();
        assert_eq!(r.mu_hat, 0.0);
        assert!((r.b_hat - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.iterations, 0);

        let r = fit_closed_form(&[5.0; 4]).unwrap();
        assert_eq!((r.mu_hat, r.b_hat, r.floored), (5.0, B_FLOOR, true));

        let r = fit_closed_form(&[4.0, 0.0]).unwrap();
        assert_eq!((r.mu_hat, r.b_hat), (0.0, 2.0));
    }

    #[test]
    fn too_few_samples() {
        assert!(fit_closed_form(&[1.0]).is_err());
        assert!(fit_gradient(&[], &GradientConfig::default()).is_err());
    }

    #[test]
    fn gradient_matches_closed_form() {
        let xs = draws(2.5, 0.7, 10_000, 1);
        let cf = fit_closed_form(&xs).unwrap();
        let gd = fit_gradient(&xs, &GradientConfig::default()).unwrap();
        assert!(gd.converged);
        assert!((gd.mu_hat - cf.mu_hat).abs() < 1e-3, "{gd:?} vs {cf:?}");
        assert!((gd.b_hat - cf.b_hat).abs() < 1e-3, "{gd:?} vs {cf:?}");
    }

    #[test]
    fn gradient_started_at_optimum_stops_quickly() {
        let xs = draws(-1.0, 2.0, 1_001, 3);
        let cf = fit_closed_form(&xs).unwrap();
        let cfg = GradientConfig {
            init: Some((cf.mu_hat, cf.b_hat)),
            ..Default::default()
        };
        let gd = fit_gradient(&xs, &cfg).unwrap();
        assert!(gd.converged && gd.iterations <= 2, "{gd:?}");
    }

    #[test]
    fn gradient_recovers_unit_scale() {
        let xs = draws(0.0, 1.0, 100_000, 5);
        let gd = fit_gradient(&xs, &GradientConfig::default()).unwrap();
        assert!((gd.b_hat - 1.0).abs() < 0.02, "{gd:?}");
    }

    #[test]
    fn non_convergence_is_flagged() {
        let xs = draws(0.0, 1.0, 500, 9);
        let cfg = GradientConfig {
            max_iters: 1,
            init: Some((30.0, 0.01)),
            ..Default::default()
        };
        let gd = fit_gradient(&xs, &cfg).unwrap();
        assert!(!gd.converged);
        assert_eq!(gd.iterations, 1);
    }

    fn line(points: &[(f64, f64)]) -> Polyline {
        Polyline::open(points.iter().map(|&(x, y)| Point2::new(x, y)).collect()).unwrap()
    }

    fn template() -> VectorMap {
        VectorMap {
            elements: vec![
                MapElement::new(
                    line(&[(0.0, 0.0), (0.0, 5.0), (0.0, 10.0)]),
                    ElementClass::LaneDivider,
                ),
                MapElement::new(line(&[(3.0, -2.0), (3.5, 2.0)]), ElementClass::RoadBoundary),
            ],
            ..Default::default()
        }
    }

    fn shifted(map: &VectorMap, mut f: impl FnMut(usize, usize, Point2) -> Point2) -> VectorMap {
        let mut out = map.clone();
        for (i, e) in out.elements.iter_mut().enumerate() {
            let pts = e
                .polyline
                .vertices()
                .iter()
                .enumerate()
                .map(|(j, p)| f(i, j, *p))
                .collect();
            e.polyline = Polyline::open(pts).unwrap();
        }
        out
    }

    #[test]
    fn fit_map_identical_observations() {
        let t = template();
        let fitted = fit_map(&[t.clone(), t.clone(), t.clone()], &t).unwrap();
        for (fe, te) in fitted.elements.iter().zip(&t.elements) {
            assert_eq!(fe.mu_points(), te.polyline.vertices());
            assert!(fe.vertices().iter().all(|v| v.b() == [B_FLOOR, B_FLOOR]));
            assert_eq!(fe.class, te.class);
        }
    }

    #[test]
    fn fit_map_two_symmetric_observations() {
        let t = template();
        let lo = shifted(&t, |_, _, p| p - Point2::new(1.0, 1.0));
        let hi = shifted(&t, |_, _, p| p + Point2::new(1.0, 1.0));
        let fitted = fit_map(&[lo, hi], &t).unwrap();
        for v in fitted.elements.iter().flat_map(|e| e.vertices()) {
            assert_eq!(v.b(), [1.0, 1.0]);
        }
    }

    #[test]
    fn fit_map_structure_mismatch() {
        let t = template();
        let mut bad = t.clone();
        bad.elements.pop();
        assert!(matches!(
            fit_map(&[t.clone(), bad], &t),
            Err(Error::Schema(_))
        ));
        let mut bad = t.clone();
        bad.elements[0].polyline = line(&[(0.0, 0.0), (0.0, 10.0)]);
        assert!(matches!(
            fit_map(&[t.clone(), bad], &t),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn fitted_scale_grows_with_distance() {
        // one long element running away from the ego, noise scale grows with range
        let pts: Vec<Point2> = (0..30).map(|k| Point2::new(2.0, k as f64)).collect();
        let t = VectorMap {
            elements: vec![MapElement::new(
                Polyline::open(pts).unwrap(),
                ElementClass::LaneDivider,
            )],
            ..Default::default()
        };
        let true_b = |p: Point2| 0.05 + 0.03 * p.norm();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let observations: Vec<VectorMap> = (0..200)
            .map(|_| {
                shifted(&t, |_, _, p| {
                    let l = LaplaceParam::new(0.0, true_b(p)).unwrap();
                    p + Point2::new(l.sample(&mut rng), l.sample(&mut rng))
                })
            })
            .collect();
        let fitted = fit_map(&observations, &t).unwrap();
        let (bs, ds): (Vec<f64>, Vec<f64>) = fitted.elements[0]
            .vertices()
            .iter()
            .zip(t.elements[0].polyline.vertices())
            .map(|(v, p)| (v.mean_b(), p.norm()))
            .unzip();
        let rho = spearman(&bs, &ds);
        assert!(rho > 0.9, "spearman {rho}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn closed_form_is_global_optimum(
            xs in prop::collection::vec(-20.0..20.0f64, 2..60),
        ) {
            let cf = fit_closed_form(&xs).unwrap();
            let gd = fit_gradient(&xs, &GradientConfig::default()).unwrap();
            prop_assert!(cf.final_loss <= gd.final_loss + 1e-9);
            prop_assert!(gd.b_hat > 0.0);
        }

        #[test]
        fn accepted_steps_never_increase_loss(
            xs in prop::collection::vec(-20.0..20.0f64, 2..80),
            mu0 in -30.0..30.0f64, b0 in 0.01..10.0f64,
        ) {
            let cfg = GradientConfig { init: Some((mu0, b0)), ..Default::default() };
            let (_, trace) = fit_gradient_traced(&xs, &cfg).unwrap();
            prop_assert!(trace.windows(2).all(|w| w[1] <= w[0]));
        }

        #[test]
        fn closed_form_beats_perturbations(
            xs in prop::collection::vec(-20.0..20.0f64, 2..40),
            dmu in -1.0..1.0f64, scale in 0.5..2.0f64,
        ) {
            let cf = fit_closed_form(&xs).unwrap();
            prop_assume!(!cf.floored);
            let other = mean_nll(&xs, cf.mu_hat + dmu, cf.b_hat * scale).unwrap();
            prop_assert!(cf.final_loss <= other + 1e-12);
        }
    }
}
