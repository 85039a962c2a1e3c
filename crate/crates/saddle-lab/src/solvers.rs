//! ERM solvers: an exact eigen-solver for the PCA objective, projected
//! gradient descent on the sphere with negative-curvature escape for
//! everything else, and the leave-one-out minimizer sweep.

use rayon::prelude::*;

use crate::numerics::{self, sym_eig};
use crate::objective::{ConstraintSet, SmoothObjective};
use crate::pca::empirical_correlation;
use crate::stability::{align_minimizer, Symmetry};
use crate::{Error, Result};

/// Eigenvalues closer than this are treated as a degenerate leading pair.
const DEGENERACY_TOL: f64 = 1e-12;

/// Armijo sufficient-decrease coefficient.
const ARMIJO_C1: f64 = 1e-4;

/// Smallest backtracking fraction of the base step before the (tiny) step is
/// accepted as-is.
const BACKTRACK_FLOOR: f64 = 1e-14;

/// Knobs of the projected-descent ERM oracle.
#[derive(Clone, Copy, Debug, serde::Serialize)]
pub struct SolverConfig {
    pub step_size: f64,
    pub max_iters: usize,
    pub grad_tol: f64,
    pub curvature_escape: bool,
    pub escape_threshold: f64,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            step_size: 1.0,
            max_iters: 20_000,
            grad_tol: 1e-10,
            curvature_escape: true,
            escape_threshold: 1e-6,
            restarts: 4,
            seed: 0,
        }
    }
}

impl SolverConfig {
    /// Tolerance scaled so that solver error is negligible against the
    /// measured stability terms (which decay like rho^2 / n).
    pub fn for_lipschitz(rho: f64) -> Self {
        SolverConfig { grad_tol: 1e-10 * rho.max(1.0), ..SolverConfig::default() }
    }

    fn validate(&self) {
        assert!(self.step_size > 0.0 && self.grad_tol > 0.0);
    }
}

/// Result of the exact PCA ERM.
#[derive(Clone, Debug)]
pub struct PcaErm {
    /// Leading eigenvector of the empirical correlation matrix, with its
    /// largest-magnitude entry made positive.
    pub vector: Vec<f64>,
    /// Leading empirical eigengap lambda_1 - lambda_2.
    pub gap: f64,
    /// Set when the two leading eigenvalues coincide within 1e-12; the
    /// returned vector is then the deterministic tie-break by eigen index.
    pub degenerate: bool,
}

/// Exact ERM for the PCA objective: the leading eigenvector of
/// A = (1/n) sum z_i z_i^T.
pub fn pca_erm(sample: &[Vec<f64>]) -> Result<PcaErm> {
    let a = empirical_correlation(sample)?;
    for (i, z) in sample.iter().enumerate() {
        if numerics::dot(z, z) > 1.0 + 1e-9 {
            return Err(Error::InvalidInput(format!(
                "datum {i} lies outside the unit ball (|z|^2 = {})",
                numerics::dot(z, z)
            )));
        }
    }
    leading_eigenvector(&a)
}

/// Leading eigenvector of an explicit symmetric matrix, same contract as
/// [`pca_erm`].
pub fn leading_eigenvector(a: &numerics::SymMatrix) -> Result<PcaErm> {
    let eig = sym_eig(a)?;
    let gap = if eig.values.len() > 1 {
        eig.values[0] - eig.values[1]
    } else {
        f64::INFINITY
    };
    Ok(PcaErm { vector: eig.vector(0), gap, degenerate: gap <= DEGENERACY_TOL })
}

fn projected_gradient(
    obj: &dyn SmoothObjective,
    constraints: &dyn ConstraintSet,
    w: &[f64],
) -> Result<Vec<f64>> {
    let grad = obj.gradient(w);
    if constraints.count() == 0 {
        return Ok(grad);
    }
    let c_mat = constraints.gradient_matrix(w);
    let multipliers = numerics::least_squares_multipliers(&c_mat, &grad)?;
    let mut pg = grad;
    for (s, &lam) in multipliers.iter().enumerate() {
        numerics::axpy(&mut pg, lam, &constraints.gradient(s, w));
    }
    Ok(pg)
}

fn retract(constraints: &dyn ConstraintSet, w: Vec<f64>) -> Result<Vec<f64>> {
    if !numerics::all_finite(&w) {
        return Err(Error::NonFinite { context: "solver iterate" });
    }
    Ok(constraints.project(&w).unwrap_or(w))
}

/// Projected gradient descent with negative-curvature escape.
///
/// Runs full-gradient Armijo steps in the tangent space, retracting onto the
/// manifold after each step. When the projected gradient drops below
/// `grad_tol` but the restricted Hessian still has an eigenvalue below
/// `-escape_threshold`, a step of length `min(escape_threshold / beta2, 0.1)`
/// is taken along the corresponding tangent eigenvector, with the sign that
/// decreases the objective more. Success means both the gradient and the
/// curvature test pass.
pub fn sphere_pgd(
    obj: &dyn SmoothObjective,
    constraints: &dyn ConstraintSet,
    w0: &[f64],
    config: &SolverConfig,
) -> Result<Vec<f64>> {
    config.validate();
    let mut w = retract(constraints, w0.to_vec())?;
    for i in 0..constraints.count() {
        let c = constraints.value(i, &w);
        if c.abs() > crate::objective::FEASIBILITY_TOL {
            return Err(Error::Infeasible { index: i, violation: c.abs() });
        }
    }
    let beta2 = obj.constants().beta2;
    let nu_base = if beta2 > 0.0 {
        (config.escape_threshold / beta2).min(0.1)
    } else {
        0.1
    };
    // never start above the 1/beta2 theory step: an overshooting first trial
    // can pass the floating-point slack with zero progress and cycle
    let step0 = if beta2 > 0.0 {
        config.step_size.min(1.0 / beta2)
    } else {
        config.step_size
    };

    let mut f = obj.value(&w);
    let mut last_curvature = f64::INFINITY;
    for _ in 0..config.max_iters {
        let pg = projected_gradient(obj, constraints, &w)?;
        let pg_norm = numerics::norm(&pg);

        if pg_norm <= config.grad_tol {
            if !config.curvature_escape {
                return Ok(w);
            }
            let state = crate::objective::lagrangian_state(obj, constraints, &w)?;
            let eig = sym_eig(&state.restricted_hessian)?;
            if eig.values.is_empty() {
                // zero-dimensional tangent space: nothing to escape along
                return Ok(w);
            }
            let k = eig.values.len() - 1;
            last_curvature = eig.values[k];
            if last_curvature >= -config.escape_threshold {
                return Ok(w);
            }
            // tangent eigenvector of most negative curvature, lifted to the
            // ambient space
            let v = state.tangent_basis.matvec(&eig.vector(k));
            let mut escaped = false;
            let mut nu = nu_base;
            'shrink: for _ in 0..50 {
                let mut best: Option<(f64, Vec<f64>)> = None;
                for sgn in [1.0, -1.0] {
                    let mut cand = w.clone();
                    numerics::axpy(&mut cand, sgn * nu, &v);
                    let cand = retract(constraints, cand)?;
                    let fc = obj.value(&cand);
                    if best.as_ref().map_or(true, |(fb, _)| fc < *fb) {
                        best = Some((fc, cand));
                    }
                }
                let (fc, cand) = best.expect("two candidates evaluated");
                if fc <= f + 1e-12 {
                    w = cand;
                    f = fc;
                    escaped = true;
                    break 'shrink;
                }
                nu *= 0.5;
            }
            if !escaped {
                break; // stuck: report the budget error with diagnostics
            }
            continue;
        }

        // Armijo backtracking on the tangent step
        let mut t = step0;
        let slack = 1e-15 * (1.0 + f.abs());
        loop {
            let mut cand = w.clone();
            numerics::axpy(&mut cand, -t, &pg);
            let cand = retract(constraints, cand)?;
            let fc = obj.value(&cand);
            if fc <= f - ARMIJO_C1 * t * pg_norm * pg_norm + slack
                || t <= BACKTRACK_FLOOR * step0
            {
                w = cand;
                f = fc;
                break;
            }
            t *= 0.5;
        }
    }

    let pg_norm = numerics::norm(&projected_gradient(obj, constraints, &w)?);
    Err(Error::IterationBudget {
        max_iters: config.max_iters,
        grad_norm: pg_norm,
        min_curvature: last_curvature,
        last_iterate: w,
    })
}

/// Leave-one-out minimizer sweep.
///
/// `solve(i, warm_start)` must return the minimizer of the objective with
/// datum `i` removed; it is called with the full-sample minimizer `hat_w` as
/// the warm start. Results are aligned to `hat_w` under the stated symmetry
/// group of the minima, and solves run in parallel (each must be
/// deterministic given `i`).
pub fn loo_minimizers<F>(
    n: usize,
    hat_w: &[f64],
    symmetry: Symmetry,
    solve: F,
) -> Result<Vec<Vec<f64>>>
where
    F: Fn(usize, &[f64]) -> Result<Vec<f64>> + Sync,
{
    (0..n)
        .into_par_iter()
        .map(|i| {
            let w_i = solve(i, hat_w)
                .map_err(|e| Error::SolveAt { index: i, source: Box::new(e) })?;
            Ok(align_minimizer(&w_i, hat_w, symmetry))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{norm, normalized, sub, unit, SymMatrix};
    use crate::objective::UnitSphere;
    use crate::pca::PcaReducedObjective;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        assert!(norm(&sub(a, b)) <= tol, "{a:?} vs {b:?}");
    }

    #[test]
    fn pca_erm_hand_instances() {
        // {e1, e1, e2}: A = diag(2/3, 1/3)
        let r = pca_erm(&[unit(0, 2), unit(0, 2), unit(1, 2)]).unwrap();
        assert_close(&r.vector, &unit(0, 2), 1e-12);
        assert!(!r.degenerate);
        assert!((r.gap - 1.0 / 3.0).abs() < 1e-12);

        // rank one
        let r = pca_erm(&[unit(1, 3)]).unwrap();
        assert_close(&r.vector, &unit(1, 3), 1e-12);

        // n copies of any unit z
        let z = normalized(&[0.3, -0.4, 0.5]).unwrap();
        let r = pca_erm(&vec![z.clone(); 7]).unwrap();
        // canonical sign: largest-magnitude entry positive
        let aligned = align_minimizer(&z, &r.vector, Symmetry::SignFlip);
        assert_close(&r.vector, &aligned, 1e-12);
    }

    #[test]
    fn pca_erm_degenerate_flag() {
        let r = pca_erm(&[unit(0, 2), unit(1, 2)]).unwrap();
        assert!(r.degenerate);
        assert!(r.gap.abs() <= 1e-12);
        // deterministic tie-break: same result on rerun
        let r2 = pca_erm(&[unit(0, 2), unit(1, 2)]).unwrap();
        assert_eq!(r.vector, r2.vector);
    }

    #[test]
    fn pca_erm_rejects_large_data() {
        assert!(pca_erm(&[vec![2.0, 0.0]]).is_err());
    }

    fn pca_obj(evals: &[f64]) -> (PcaReducedObjective, UnitSphere) {
        (
            PcaReducedObjective::new(SymMatrix::diagonal(evals)),
            UnitSphere::new(evals.len()),
        )
    }

    #[test]
    fn pgd_descends_to_leading_eigenvector() {
        let (obj, cons) = pca_obj(&[1.0, 0.5]);
        let w0 = normalized(&[1.0, 1.0]).unwrap();
        let w = sphere_pgd(&obj, &cons, &w0, &SolverConfig::default()).unwrap();
        let aligned = align_minimizer(&w, &unit(0, 2), Symmetry::SignFlip);
        assert_close(&aligned, &unit(0, 2), 1e-8);
    }

    #[test]
    fn pgd_fixed_point_at_minimum() {
        let (obj, cons) = pca_obj(&[1.0, 0.5]);
        let w = sphere_pgd(&obj, &cons, &unit(0, 2), &SolverConfig::default()).unwrap();
        assert_close(&w, &unit(0, 2), 1e-12);
    }

    #[test]
    fn pgd_escapes_exact_saddle() {
        let (obj, cons) = pca_obj(&[1.0, 0.5, 0.25]);
        // e2 is a saddle with projected gradient exactly zero
        let w = sphere_pgd(&obj, &cons, &unit(1, 3), &SolverConfig::default()).unwrap();
        let aligned = align_minimizer(&w, &unit(0, 3), Symmetry::SignFlip);
        assert_close(&aligned, &unit(0, 3), 1e-7);
    }

    #[test]
    fn pgd_without_escape_accepts_saddle() {
        let (obj, cons) = pca_obj(&[1.0, 0.5]);
        let config = SolverConfig { curvature_escape: false, ..SolverConfig::default() };
        let w = sphere_pgd(&obj, &cons, &unit(1, 2), &config).unwrap();
        assert_close(&w, &unit(1, 2), 1e-12);
    }

    #[test]
    fn pgd_budget_error_carries_iterate() {
        let (obj, cons) = pca_obj(&[1.0, 0.5]);
        let config = SolverConfig { max_iters: 1, grad_tol: 1e-15, ..SolverConfig::default() };
        let w0 = normalized(&[1.0, 1.0]).unwrap();
        match sphere_pgd(&obj, &cons, &w0, &config) {
            Err(Error::IterationBudget { last_iterate, .. }) => {
                assert_eq!(last_iterate.len(), 2);
            }
            other => panic!("expected budget error, got {other:?}"),
        }
    }

    #[test]
    fn pgd_tensor_converges_to_nearby_component() {
        let t = crate::ica::exact_component_tensor(&numerics::Mat::identity(3)).unwrap();
        let obj = crate::ica::TensorObjective::new(t);
        let cons = UnitSphere::new(3);
        let w0 = normalized(&[0.05, 1.0, -0.03]).unwrap();
        let w = sphere_pgd(&obj, &cons, &w0, &SolverConfig::default()).unwrap();
        let aligned = align_minimizer(&w, &unit(1, 3), Symmetry::SignFlip);
        assert_close(&aligned, &unit(1, 3), 1e-7);
    }

    #[test]
    fn pgd_solution_is_feasible_and_stationary() {
        let (obj, cons) = pca_obj(&[0.9, 0.3, 0.1, 0.05]);
        let config = SolverConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let w0 = numerics::random_unit(4, &mut rng);
            let w = sphere_pgd(&obj, &cons, &w0, &config).unwrap();
            assert!((numerics::dot(&w, &w) - 1.0).abs() <= 1e-9);
            let pg = projected_gradient(&obj, &cons, &w).unwrap();
            assert!(norm(&pg) <= config.grad_tol);
        }
    }

    #[test]
    fn pgd_matches_exact_eigensolver() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let d = 4;
        let config = SolverConfig { grad_tol: 1e-12, ..SolverConfig::default() };
        for trial in 0..100 {
            let q = numerics::random_orthonormal(d, &mut rng).unwrap();
            let evals = [0.5, 0.35, 0.2, 0.05];
            let mut a = SymMatrix::zeros(d);
            for (k, &lam) in evals.iter().enumerate() {
                a.add_scaled_outer(lam, &q.col(k));
            }
            let exact = leading_eigenvector(&a).unwrap();
            let obj = PcaReducedObjective::new(a);
            let cons = UnitSphere::new(d);
            let w0 = numerics::random_unit(d, &mut rng);
            let w = sphere_pgd(&obj, &cons, &w0, &config).unwrap();
            let aligned = align_minimizer(&w, &exact.vector, Symmetry::SignFlip);
            assert_close(&aligned, &exact.vector, 1e-6);
            let _ = trial;
        }
    }

    #[test]
    fn loo_identical_data_returns_hat_w() {
        let z = normalized(&[0.6, 0.8]).unwrap();
        let sample = vec![z.clone(); 5];
        let hat = pca_erm(&sample).unwrap().vector;
        let loo = loo_minimizers(5, &hat, Symmetry::SignFlip, |i, _| {
            let reduced: Vec<Vec<f64>> = sample
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, z)| z.clone())
                .collect();
            Ok(pca_erm(&reduced)?.vector)
        })
        .unwrap();
        for w_i in &loo {
            assert_close(w_i, &hat, 1e-12);
        }
    }

    #[test]
    fn loo_two_point_pca() {
        let sample = vec![unit(0, 2), unit(1, 2)];
        let solve = |i: usize, _warm: &[f64]| {
            let reduced: Vec<Vec<f64>> = sample
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, z)| z.clone())
                .collect();
            Ok(pca_erm(&reduced)?.vector)
        };
        let loo = loo_minimizers(2, &unit(0, 2), Symmetry::SignFlip, solve).unwrap();
        assert_close(&loo[0], &unit(1, 2), 1e-12);
        assert_close(&loo[1], &unit(0, 2), 1e-12);
    }

    #[test]
    fn loo_three_point_pca() {
        // {e1, e1, e2}: hat_w = e1; dropping e2 leaves A proportional to
        // e1 e1^T, so the third leave-one-out minimizer is still e1
        let sample = vec![unit(0, 2), unit(0, 2), unit(1, 2)];
        let hat = pca_erm(&sample).unwrap().vector;
        assert_close(&hat, &unit(0, 2), 1e-12);
        let loo = loo_minimizers(3, &hat, Symmetry::SignFlip, |i, _| {
            let reduced: Vec<Vec<f64>> = sample
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, z)| z.clone())
                .collect();
            Ok(pca_erm(&reduced)?.vector)
        })
        .unwrap();
        assert_close(&loo[2], &unit(0, 2), 1e-12);
    }

    #[test]
    fn loo_propagates_failures_with_index() {
        let err = loo_minimizers(3, &unit(0, 2), Symmetry::SignFlip, |i, _| {
            if i == 1 {
                Err(Error::EmptySample)
            } else {
                Ok(unit(0, 2))
            }
        })
        .unwrap_err();
        match err {
            Error::SolveAt { index, .. } => assert_eq!(index, 1),
            other => panic!("unexpected error {other:?}"),
        }
    }
}
