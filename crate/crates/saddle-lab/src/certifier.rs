//! Classification of points into strict-saddle regimes and estimation of the
//! (alpha, gamma, tau) parameters over sampled regions.
//!
//! A point falls into the first regime (in order) whose condition verifiably
//! holds: gradient norm at least tau; a tangent direction of curvature at
//! most -gamma; or the strongly convex sandwich around the nearest global
//! minimum. Points satisfying none are reported as counterexamples, not
//! errors.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::numerics;
use crate::objective::{lagrangian_state, ConstraintSet, LagrangianState, SmoothObjective};
use crate::stability::{align_minimizer, Symmetry};
use crate::{Error, Result};

/// Slack tolerance when verifying the sandwich inequalities numerically.
const SANDWICH_TOL: f64 = 1e-10;

/// Points sampled on the segment [w, w*] when checking the neighborhood
/// strong-convexity form of the unconstrained definition.
const SEGMENT_SAMPLES: usize = 32;

/// Strict-saddle parameters. `nu` (the neighborhood radius) plays no role in
/// any bound here and is kept optional.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct SaddleParams {
    pub alpha: f64,
    pub gamma: f64,
    pub tau: f64,
    pub nu: Option<f64>,
}

impl SaddleParams {
    pub fn new(alpha: f64, gamma: f64, tau: f64) -> Self {
        assert!(alpha > 0.0 && gamma > 0.0 && tau > 0.0);
        SaddleParams { alpha, gamma, tau, nu: None }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Regime {
    LargeGradient,
    NegativeCurvature,
    StronglyConvexRegion,
    Unclassified,
}

/// Outcome of classifying one point, with a numeric witness: the gradient
/// norm, the minimum restricted curvature, or the smaller sandwich slack.
#[derive(Clone, Debug, Serialize)]
pub struct SaddleClassification {
    pub regime: Regime,
    pub witness: f64,
    pub nearest_minimum: Option<Vec<f64>>,
}

/// Per-point quantities entering the condition-3 sandwich.
#[derive(Clone, Debug, Serialize)]
pub struct SandwichSlacks {
    pub upper: f64,
    pub lower: f64,
}

fn nearest_minimum(
    w: &[f64],
    minima: &[Vec<f64>],
    symmetry: Symmetry,
) -> Option<(Vec<f64>, f64)> {
    minima
        .iter()
        .map(|m| {
            let aligned = align_minimizer(m, w, symmetry);
            let dist = numerics::norm(&numerics::sub(w, &aligned));
            (aligned, dist)
        })
        .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
}

fn sandwich_slacks(
    obj: &dyn SmoothObjective,
    constraints: &dyn ConstraintSet,
    value_at_w: f64,
    grad_norm: f64,
    w: &[f64],
    alpha: f64,
    minima: &[Vec<f64>],
    symmetry: Symmetry,
) -> Option<(SandwichSlacks, Vec<f64>)> {
    let (star, dist) = nearest_minimum(w, minima, symmetry)?;
    let star = constraints.project(&star).unwrap_or(star);
    let excess = value_at_w - obj.value(&star);
    let upper = grad_norm * grad_norm / (2.0 * alpha) - excess;
    let lower = excess - 0.5 * alpha * dist * dist;
    Some((SandwichSlacks { upper, lower }, star))
}

/// Classify a point of a constrained objective from its precomputed
/// Lagrangian state (constrained classification, first-match order 1 -> 2 -> 3).
pub fn classify_point(
    obj: &dyn SmoothObjective,
    constraints: &dyn ConstraintSet,
    state: &LagrangianState,
    params: &SaddleParams,
    minima: &[Vec<f64>],
    symmetry: Symmetry,
) -> Result<SaddleClassification> {
    let grad_norm = state.gradient_norm();
    if grad_norm >= params.tau {
        return Ok(SaddleClassification {
            regime: Regime::LargeGradient,
            witness: grad_norm,
            nearest_minimum: None,
        });
    }
    let min_curv = state.min_restricted_curvature()?;
    if min_curv <= -params.gamma {
        return Ok(SaddleClassification {
            regime: Regime::NegativeCurvature,
            witness: min_curv,
            nearest_minimum: None,
        });
    }
    if let Some((slacks, star)) = sandwich_slacks(
        obj,
        constraints,
        state.lagrangian_value,
        grad_norm,
        &state.point,
        params.alpha,
        minima,
        symmetry,
    ) {
        let witness = slacks.upper.min(slacks.lower);
        if witness >= -SANDWICH_TOL {
            return Ok(SaddleClassification {
                regime: Regime::StronglyConvexRegion,
                witness,
                nearest_minimum: Some(star),
            });
        }
        // none of the conditions hold: report the best slack
        let best = (grad_norm - params.tau).max(-params.gamma - min_curv).max(witness);
        return Ok(SaddleClassification {
            regime: Regime::Unclassified,
            witness: best,
            nearest_minimum: Some(star),
        });
    }
    Ok(SaddleClassification {
        regime: Regime::Unclassified,
        witness: (grad_norm - params.tau).max(-params.gamma - min_curv),
        nearest_minimum: None,
    })
}

/// Classify a point of an unconstrained objective (no feasibility set). The
/// neighborhood strong-convexity condition is checked by sampling the
/// Hessian on the segment [w, w*].
pub fn unconstrained_classify(
    obj: &dyn SmoothObjective,
    w: &[f64],
    params: &SaddleParams,
    minima: &[Vec<f64>],
    symmetry: Symmetry,
) -> Result<SaddleClassification> {
    let grad_norm = numerics::norm(&obj.gradient(w));
    if grad_norm >= params.tau {
        return Ok(SaddleClassification {
            regime: Regime::LargeGradient,
            witness: grad_norm,
            nearest_minimum: None,
        });
    }
    let min_curv = numerics::min_eigenvalue(&obj.hessian(w))?;
    if min_curv <= -params.gamma {
        return Ok(SaddleClassification {
            regime: Regime::NegativeCurvature,
            witness: min_curv,
            nearest_minimum: None,
        });
    }
    if let Some((star, _)) = nearest_minimum(w, minima, symmetry) {
        let mut worst = f64::INFINITY;
        for k in 0..SEGMENT_SAMPLES {
            let t = k as f64 / (SEGMENT_SAMPLES - 1) as f64;
            let x: Vec<f64> = w
                .iter()
                .zip(&star)
                .map(|(a, b)| (1.0 - t) * a + t * b)
                .collect();
            let lmin = numerics::min_eigenvalue(&obj.hessian(&x))?;
            worst = worst.min(lmin - params.alpha);
        }
        if worst >= -SANDWICH_TOL {
            return Ok(SaddleClassification {
                regime: Regime::StronglyConvexRegion,
                witness: worst,
                nearest_minimum: Some(star),
            });
        }
        let best = (grad_norm - params.tau).max(-params.gamma - min_curv).max(worst);
        return Ok(SaddleClassification {
            regime: Regime::Unclassified,
            witness: best,
            nearest_minimum: Some(star),
        });
    }
    Ok(SaddleClassification {
        regime: Regime::Unclassified,
        witness: (grad_norm - params.tau).max(-params.gamma - min_curv),
        nearest_minimum: None,
    })
}

/// A point the classifier could not place in any regime.
#[derive(Clone, Debug, Serialize)]
pub struct Counterexample {
    pub point: Vec<f64>,
    pub gradient_norm: f64,
    pub min_curvature: f64,
    pub best_slack: f64,
}

/// Empirical certification of a sampled region: counts per regime plus every
/// unclassified point with its slacks.
#[derive(Clone, Debug, Serialize)]
pub struct CertificationReport {
    pub samples: usize,
    pub large_gradient: usize,
    pub negative_curvature: usize,
    pub strongly_convex: usize,
    pub counterexamples: Vec<Counterexample>,
}

impl CertificationReport {
    pub fn certified(&self) -> bool {
        self.counterexamples.is_empty()
    }
}

/// Classify `n` sampled feasible points. Sampling is per-index seeded, so
/// the report does not depend on thread scheduling.
pub fn certify_region(
    obj: &dyn SmoothObjective,
    constraints: &dyn ConstraintSet,
    params: &SaddleParams,
    sampler: &(dyn Fn(&mut ChaCha8Rng) -> Vec<f64> + Sync),
    n: usize,
    minima: &[Vec<f64>],
    symmetry: Symmetry,
    seed: u64,
) -> Result<CertificationReport> {
    let classified: Vec<(SaddleClassification, Vec<f64>, f64, f64)> = (0..n)
        .into_par_iter()
        .map(|idx| {
            let mut rng = point_rng(seed, idx);
            let w = sampler(&mut rng);
            let state = lagrangian_state(obj, constraints, &w)?;
            let grad_norm = state.gradient_norm();
            let min_curv = state.min_restricted_curvature()?;
            let c = classify_point(obj, constraints, &state, params, minima, symmetry)?;
            Ok((c, state.point, grad_norm, min_curv))
        })
        .collect::<Result<_>>()?;

    let mut report = CertificationReport {
        samples: n,
        large_gradient: 0,
        negative_curvature: 0,
        strongly_convex: 0,
        counterexamples: vec![],
    };
    for (c, point, gradient_norm, min_curvature) in classified {
        match c.regime {
            Regime::LargeGradient => report.large_gradient += 1,
            Regime::NegativeCurvature => report.negative_curvature += 1,
            Regime::StronglyConvexRegion => report.strongly_convex += 1,
            Regime::Unclassified => report.counterexamples.push(Counterexample {
                point,
                gradient_norm,
                min_curvature,
                best_slack: c.witness,
            }),
        }
    }
    Ok(report)
}

pub(crate) fn point_rng(seed: u64, idx: usize) -> ChaCha8Rng {
    // splitmix-style index hash keeps sampling independent of scheduling
    let mut x = seed ^ (idx as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    x ^= x >> 30;
    x = x.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x ^= x >> 27;
    ChaCha8Rng::seed_from_u64(x)
}

/// Per-point data cached while searching for feasible parameters.
struct PointProfile {
    grad_norm: f64,
    min_curv: f64,
    excess: f64,
    dist_sq: f64,
}

/// Search for the largest feasible (tau, gamma, alpha): a logarithmic grid
/// over tau and gamma, with alpha set to the largest grid value passing the
/// sandwich at every condition-3 point, capped by the restricted curvature at
/// the supplied minima. Returns the triple maximizing min(tau, gamma, alpha).
pub fn estimate_saddle_params(
    obj: &dyn SmoothObjective,
    constraints: &dyn ConstraintSet,
    sampler: &(dyn Fn(&mut ChaCha8Rng) -> Vec<f64> + Sync),
    n: usize,
    minima: &[Vec<f64>],
    symmetry: Symmetry,
    seed: u64,
) -> Result<SaddleParams> {
    assert!(!minima.is_empty(), "estimate_saddle_params needs at least one minimum");

    let profiles: Vec<PointProfile> = (0..n)
        .into_par_iter()
        .map(|idx| {
            let mut rng = point_rng(seed, idx);
            let w = sampler(&mut rng);
            let state = lagrangian_state(obj, constraints, &w)?;
            let grad_norm = state.gradient_norm();
            let min_curv = state.min_restricted_curvature()?;
            let (star, dist) = nearest_minimum(&state.point, minima, symmetry)
                .expect("nonempty minima");
            let star = constraints.project(&star).unwrap_or(star);
            let excess = (state.lagrangian_value - obj.value(&star)).max(0.0);
            Ok(PointProfile { grad_norm, min_curv, excess, dist_sq: dist * dist })
        })
        .collect::<Result<_>>()?;

    // alpha can never exceed the restricted curvature at the minima
    let mut alpha_cap = f64::INFINITY;
    for m in minima {
        let st = lagrangian_state(obj, constraints, m)?;
        alpha_cap = alpha_cap.min(st.min_restricted_curvature()?);
    }

    let tau_scale = profiles
        .iter()
        .fold(0.0f64, |a, p| a.max(p.grad_norm))
        .max(1e-12);
    let gamma_scale = profiles
        .iter()
        .fold(0.0f64, |a, p| a.max(-p.min_curv))
        .max(tau_scale);
    let alpha_scale = if alpha_cap.is_finite() && alpha_cap > 0.0 {
        alpha_cap
    } else {
        gamma_scale
    };

    let tau_grid = log_grid(tau_scale);
    let gamma_grid = log_grid(gamma_scale);
    let alpha_grid = log_grid(alpha_scale);

    let mut best: Option<SaddleParams> = None;
    for &tau in &tau_grid {
        for &gamma in &gamma_grid {
            // the sandwich must hold with one alpha at every fallback point
            let mut alpha_max = alpha_cap;
            let mut feasible = true;
            for p in &profiles {
                if p.grad_norm >= tau || p.min_curv <= -gamma {
                    continue;
                }
                if p.excess > 0.0 {
                    alpha_max = alpha_max.min(p.grad_norm * p.grad_norm / (2.0 * p.excess));
                }
                if p.dist_sq > SANDWICH_TOL {
                    if p.excess <= 0.0 {
                        feasible = false;
                        break;
                    }
                    alpha_max = alpha_max.min(2.0 * p.excess / p.dist_sq);
                }
            }
            if !feasible {
                continue;
            }
            let alpha = alpha_grid
                .iter()
                .copied()
                .filter(|&a| a <= alpha_max)
                .fold(f64::NEG_INFINITY, f64::max);
            if !alpha.is_finite() || alpha <= 0.0 {
                continue;
            }
            let score = tau.min(gamma).min(alpha);
            let better = match &best {
                None => true,
                Some(b) => {
                    let bs = b.tau.min(b.gamma).min(b.alpha);
                    score > bs || (score == bs && (tau, gamma) > (b.tau, b.gamma))
                }
            };
            if better {
                best = Some(SaddleParams { alpha, gamma, tau, nu: None });
            }
        }
    }

    best.ok_or_else(|| {
        let worst = profiles
            .iter()
            .min_by(|a, b| a.grad_norm.partial_cmp(&b.grad_norm).unwrap());
        Error::NoFeasibleParams {
            grad_norm: worst.map(|p| p.grad_norm).unwrap_or(f64::NAN),
            min_curvature: worst.map(|p| p.min_curv).unwrap_or(f64::NAN),
        }
    })
}

/// 24 logarithmic steps spanning [1e-4, 10] times the natural scale.
fn log_grid(scale: f64) -> Vec<f64> {
    let lo = (1e-4 * scale).ln();
    let hi = (10.0 * scale).ln();
    (0..24)
        .map(|k| (lo + (hi - lo) * k as f64 / 23.0).exp())
        .collect()
}
