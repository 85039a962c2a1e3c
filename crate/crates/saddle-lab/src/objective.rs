//! Per-datum losses, empirical risks, equality constraints, and the
//! Lagrangian machinery (multipliers, projected gradients, restricted
//! Hessians).

use std::sync::Arc;

use crate::numerics::{self, Mat, SymMatrix};
use crate::{Error, Result};

/// Feasibility tolerance on |c_i(w)|. Points within it are accepted (after an
/// optional re-projection onto the constraint manifold).
pub const FEASIBILITY_TOL: f64 = 1e-8;

/// Lipschitz-type constants of a loss family: gradient bound `rho`, Hessian
/// spectral bound `beta1`, Hessian Lipschitz constant `beta2`, and the domain
/// radius bound.
#[derive(Clone, Copy, Debug, serde::Serialize)]
pub struct LossConstants {
    pub rho: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub domain_bound: f64,
}

impl LossConstants {
    pub fn new(rho: f64, beta1: f64, beta2: f64, domain_bound: f64) -> Self {
        assert!(rho >= 0.0 && beta1 >= 0.0 && beta2 >= 0.0 && domain_bound >= 0.0);
        LossConstants { rho, beta1, beta2, domain_bound }
    }
}

/// A per-datum loss f(w, z) with analytic gradient and Hessian.
///
/// Implementations must be pure: evaluation has no side effects, so samples
/// and objectives can be shared across threads.
pub trait DatumLoss: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, w: &[f64], z: &[f64]) -> f64;
    fn gradient(&self, w: &[f64], z: &[f64]) -> Vec<f64>;
    fn hessian(&self, w: &[f64], z: &[f64]) -> SymMatrix;
}

/// Anything that exposes value/gradient/Hessian of a scalar objective on R^d.
///
/// `EmpiricalObjective` implements this by averaging a `DatumLoss` over a
/// sample; applications may provide algebraically equivalent fast forms (a
/// quadratic form in the empirical correlation matrix, a contracted tensor).
pub trait SmoothObjective: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, w: &[f64]) -> f64;
    fn gradient(&self, w: &[f64]) -> Vec<f64>;
    fn hessian(&self, w: &[f64]) -> SymMatrix;
    fn constants(&self) -> LossConstants;
}

/// Sample-averaged empirical risk, optionally as a leave-one-out view.
///
/// Averaging always divides by the number of included terms, so a
/// leave-one-out view of an n-point sample is the mean over the n-1 kept
/// data. The minimizer is unchanged under any positive rescaling, which is
/// what reconciles the 1/(n-1) and 1/n conventions; the 1/n-weighted
/// decomposition used by the exclusion arguments is exposed separately via
/// [`EmpiricalObjective::loo_gradient_decomposition`].
#[derive(Clone)]
pub struct EmpiricalObjective {
    loss: Arc<dyn DatumLoss>,
    sample: Arc<Vec<Vec<f64>>>,
    excluded: Option<usize>,
    constants: LossConstants,
}

impl EmpiricalObjective {
    pub fn new(
        loss: Arc<dyn DatumLoss>,
        sample: Vec<Vec<f64>>,
        constants: LossConstants,
    ) -> Result<Self> {
        if sample.is_empty() {
            return Err(Error::EmptySample);
        }
        Ok(EmpiricalObjective {
            loss,
            sample: Arc::new(sample),
            excluded: None,
            constants,
        })
    }

    pub fn n(&self) -> usize {
        self.sample.len()
    }

    pub fn datum(&self, i: usize) -> &[f64] {
        &self.sample[i]
    }

    pub fn sample(&self) -> &[Vec<f64>] {
        &self.sample
    }

    pub fn excluded_index(&self) -> Option<usize> {
        self.excluded
    }

    pub fn loss(&self) -> &Arc<dyn DatumLoss> {
        &self.loss
    }

    fn included(&self) -> impl Iterator<Item = &Vec<f64>> {
        let skip = self.excluded;
        self.sample
            .iter()
            .enumerate()
            .filter(move |(i, _)| Some(*i) != skip)
            .map(|(_, z)| z)
    }

    fn included_len(&self) -> usize {
        self.sample.len() - usize::from(self.excluded.is_some())
    }

    /// Leave-one-out view excluding datum `i`. Re-excluding the already
    /// excluded index is a no-op.
    pub fn leave_one_out(&self, i: usize) -> Result<Self> {
        if i >= self.sample.len() {
            return Err(Error::IndexOutOfRange { index: i, len: self.sample.len() });
        }
        if let Some(j) = self.excluded {
            if j != i {
                return Err(Error::InvalidInput(format!(
                    "index {j} is already excluded; cannot also exclude {i}"
                )));
            }
        }
        if self.sample.len() == 1 {
            return Err(Error::EmptySample);
        }
        let mut view = self.clone();
        view.excluded = Some(i);
        Ok(view)
    }

    /// The 1/n-weighted split of the full-sample gradient at `w`:
    /// `(1/n) sum_{j != i} grad f_j(w)` and `(1/n) grad f_i(w)`.
    pub fn loo_gradient_decomposition(&self, w: &[f64], i: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        if i >= self.sample.len() {
            return Err(Error::IndexOutOfRange { index: i, len: self.sample.len() });
        }
        let n = self.sample.len() as f64;
        let mut rest = vec![0.0; self.loss.dim()];
        for (j, z) in self.sample.iter().enumerate() {
            if j != i {
                numerics::axpy(&mut rest, 1.0 / n, &self.loss.gradient(w, z));
            }
        }
        let own = numerics::scale(&self.loss.gradient(w, &self.sample[i]), 1.0 / n);
        Ok((rest, own))
    }
}

impl SmoothObjective for EmpiricalObjective {
    fn dim(&self) -> usize {
        self.loss.dim()
    }

    fn value(&self, w: &[f64]) -> f64 {
        let n = self.included_len() as f64;
        self.included().map(|z| self.loss.value(w, z)).sum::<f64>() / n
    }

    fn gradient(&self, w: &[f64]) -> Vec<f64> {
        let n = self.included_len() as f64;
        let mut g = vec![0.0; self.loss.dim()];
        for z in self.included() {
            numerics::axpy(&mut g, 1.0 / n, &self.loss.gradient(w, z));
        }
        g
    }

    fn hessian(&self, w: &[f64]) -> SymMatrix {
        let n = self.included_len() as f64;
        let mut h = SymMatrix::zeros(self.loss.dim());
        for z in self.included() {
            h.add_scaled(1.0 / n, &self.loss.hessian(w, z));
        }
        h
    }

    fn constants(&self) -> LossConstants {
        self.constants
    }
}

// ---------------------------------------------------------------------------
// constraints

/// A set of m twice-differentiable equality constraints c_i(w) = 0.
pub trait ConstraintSet: Send + Sync {
    fn dim(&self) -> usize;
    fn count(&self) -> usize;
    fn value(&self, i: usize, w: &[f64]) -> f64;
    fn gradient(&self, i: usize, w: &[f64]) -> Vec<f64>;
    fn hessian(&self, i: usize, w: &[f64]) -> SymMatrix;

    /// Optional exact re-projection onto the constraint manifold, used to
    /// absorb solver drift before Lagrangian evaluation.
    fn project(&self, _w: &[f64]) -> Option<Vec<f64>> {
        None
    }

    /// Matrix whose columns are the constraint gradients at `w`.
    fn gradient_matrix(&self, w: &[f64]) -> Mat {
        let cols = (0..self.count()).map(|i| self.gradient(i, w)).collect();
        Mat::from_columns(self.dim(), cols)
    }
}

/// The unit sphere, c(w) = (||w||^2 - 1) / 2.
pub struct UnitSphere {
    dim: usize,
}

impl UnitSphere {
    pub fn new(dim: usize) -> Self {
        UnitSphere { dim }
    }
}

impl ConstraintSet for UnitSphere {
    fn dim(&self) -> usize {
        self.dim
    }

    fn count(&self) -> usize {
        1
    }

    fn value(&self, _i: usize, w: &[f64]) -> f64 {
        0.5 * (numerics::dot(w, w) - 1.0)
    }

    fn gradient(&self, _i: usize, w: &[f64]) -> Vec<f64> {
        w.to_vec()
    }

    fn hessian(&self, _i: usize, _w: &[f64]) -> SymMatrix {
        SymMatrix::identity(self.dim)
    }

    fn project(&self, w: &[f64]) -> Option<Vec<f64>> {
        numerics::normalized(w).ok()
    }
}

/// The empty constraint set (m = 0), for running the constrained machinery on
/// unconstrained problems.
pub struct Unconstrained {
    dim: usize,
}

impl Unconstrained {
    pub fn new(dim: usize) -> Self {
        Unconstrained { dim }
    }
}

impl ConstraintSet for Unconstrained {
    fn dim(&self) -> usize {
        self.dim
    }

    fn count(&self) -> usize {
        0
    }

    fn value(&self, _i: usize, _w: &[f64]) -> f64 {
        unreachable!("no constraints")
    }

    fn gradient(&self, _i: usize, _w: &[f64]) -> Vec<f64> {
        unreachable!("no constraints")
    }

    fn hessian(&self, _i: usize, _w: &[f64]) -> SymMatrix {
        unreachable!("no constraints")
    }
}

// ---------------------------------------------------------------------------
// Lagrangian state

/// Everything the classifiers need at a feasible point: multipliers
/// lambda(w) = -pinv(C) grad F, the projected gradient
/// grad F + sum_s lambda_s grad c_s, an orthonormal tangent basis B, and the
/// restricted Hessian B^T (hess F + sum_s lambda_s hess c_s) B.
#[derive(Clone, Debug)]
pub struct LagrangianState {
    pub point: Vec<f64>,
    pub multipliers: Vec<f64>,
    pub lagrangian_value: f64,
    pub projected_gradient: Vec<f64>,
    pub tangent_basis: Mat,
    pub restricted_hessian: SymMatrix,
}

impl LagrangianState {
    pub fn gradient_norm(&self) -> f64 {
        numerics::norm(&self.projected_gradient)
    }

    pub fn min_restricted_curvature(&self) -> Result<f64> {
        numerics::min_eigenvalue(&self.restricted_hessian)
    }
}

/// Evaluate the Lagrangian state of `obj` at `w` under `constraints`.
///
/// `w` is re-projected onto the manifold when the constraint set supports it,
/// then required to be feasible within [`FEASIBILITY_TOL`].
pub fn lagrangian_state(
    obj: &dyn SmoothObjective,
    constraints: &dyn ConstraintSet,
    w: &[f64],
) -> Result<LagrangianState> {
    if !numerics::all_finite(w) {
        return Err(Error::NonFinite { context: "lagrangian_state point" });
    }
    let w = constraints.project(w).unwrap_or_else(|| w.to_vec());
    for i in 0..constraints.count() {
        let c = constraints.value(i, &w);
        if c.abs() > FEASIBILITY_TOL {
            return Err(Error::Infeasible { index: i, violation: c.abs() });
        }
    }

    let c_mat = constraints.gradient_matrix(&w);
    let grad = obj.gradient(&w);
    let multipliers = numerics::least_squares_multipliers(&c_mat, &grad)?;

    let mut projected = grad;
    for (s, &lam) in multipliers.iter().enumerate() {
        numerics::axpy(&mut projected, lam, &constraints.gradient(s, &w));
    }

    let basis = numerics::tangent_basis(&c_mat)?;
    let mut hess = obj.hessian(&w);
    for (s, &lam) in multipliers.iter().enumerate() {
        hess.add_scaled(lam, &constraints.hessian(s, &w));
    }
    let restricted = basis.conjugate_sym(&hess);

    let mut value = obj.value(&w);
    for (s, &lam) in multipliers.iter().enumerate() {
        value += lam * constraints.value(s, &w);
    }

    Ok(LagrangianState {
        point: w,
        multipliers,
        lagrangian_value: value,
        projected_gradient: projected,
        tangent_basis: basis,
        restricted_hessian: restricted,
    })
}

// ---------------------------------------------------------------------------
// finite-difference validation

/// Central finite-difference gradient of a scalar function.
pub fn fd_gradient(f: &dyn Fn(&[f64]) -> f64, w: &[f64], h: f64) -> Vec<f64> {
    let mut g = vec![0.0; w.len()];
    let mut wp = w.to_vec();
    for i in 0..w.len() {
        let orig = wp[i];
        wp[i] = orig + h;
        let up = f(&wp);
        wp[i] = orig - h;
        let down = f(&wp);
        wp[i] = orig;
        g[i] = (up - down) / (2.0 * h);
    }
    g
}

/// Report of a gradient/Hessian consistency check at a single point.
#[derive(Clone, Debug)]
pub struct FdReport {
    pub grad_rel_err: f64,
    pub hess_rel_err: f64,
}

/// Check a loss's analytic gradient against central differences of its value
/// (relative tolerance 1e-5) and its Hessian against central differences of
/// its gradient (1e-4).
pub fn validate_datum_loss(loss: &dyn DatumLoss, w: &[f64], z: &[f64]) -> Result<FdReport> {
    let d = w.len();
    let h = 1e-5;

    let fd_g = fd_gradient(&|x| loss.value(x, z), w, h);
    let g = loss.gradient(w, z);
    let g_scale = numerics::norm(&g).max(1.0);
    let grad_rel_err = numerics::norm(&numerics::sub(&fd_g, &g)) / g_scale;

    let hess = loss.hessian(w, z);
    let mut hess_err = 0.0f64;
    let mut hess_scale = hess.frobenius_norm().max(1.0);
    let mut wp = w.to_vec();
    for j in 0..d {
        let orig = wp[j];
        wp[j] = orig + h;
        let gp = loss.gradient(&wp, z);
        wp[j] = orig - h;
        let gm = loss.gradient(&wp, z);
        wp[j] = orig;
        for i in 0..d {
            let fd = (gp[i] - gm[i]) / (2.0 * h);
            hess_err += (fd - hess.get(i, j)).powi(2);
        }
    }
    hess_scale = hess_scale.max(1.0);
    let hess_rel_err = hess_err.sqrt() / hess_scale;

    if grad_rel_err > 1e-5 {
        return Err(Error::InvalidInput(format!(
            "gradient/finite-difference mismatch: relative error {grad_rel_err:.3e}"
        )));
    }
    if hess_rel_err > 1e-4 {
        return Err(Error::InvalidInput(format!(
            "hessian/finite-difference mismatch: relative error {hess_rel_err:.3e}"
        )));
    }
    Ok(FdReport { grad_rel_err, hess_rel_err })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::unit;
    use crate::pca::{pca_objective, PcaFullLoss};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    #[test]
    fn full_form_perfect_fit() {
        // sample {e1, e1}, w = e1: (1/2)||z - w w^T z||^2 = 0
        let loss = PcaFullLoss::new(2);
        let w = unit(0, 2);
        assert_close(loss.value(&w, &unit(0, 2)), 0.0, 1e-15);
        let obj = EmpiricalObjective::new(
            Arc::new(loss),
            vec![unit(0, 2), unit(0, 2)],
            LossConstants::new(1.0, 1.0, 0.0, 1.0),
        )
        .unwrap();
        assert_close(obj.value(&w), 0.0, 1e-15);
    }

    #[test]
    fn reduced_form_at_e2() {
        // A = diag(1, .5) realized by the exhaustive sign sample of the
        // sqrt-eigenvalue construction; at w = e2, F = -(1/2) w^T A w = -1/4
        let sample = vec![
            vec![1.0, 0.5f64.sqrt()],
            vec![1.0, -(0.5f64.sqrt())],
            vec![-1.0, 0.5f64.sqrt()],
            vec![-1.0, -(0.5f64.sqrt())],
        ];
        let obj = pca_objective(sample).unwrap();
        assert_close(obj.value(&unit(1, 2)), -0.25, 1e-14);
    }

    #[test]
    fn averaging_invariance() {
        let z = vec![0.3, -0.4];
        let one = pca_objective(vec![z.clone()]).unwrap();
        let two = pca_objective(vec![z.clone(), z]).unwrap();
        let w = numerics::normalized(&[1.0, 2.0]).unwrap();
        assert_close(one.value(&w), two.value(&w), 1e-15);
    }

    #[test]
    fn loo_basics() {
        let obj = pca_objective(vec![unit(0, 2), unit(1, 2)]).unwrap();
        let w = numerics::normalized(&[1.0, 1.0]).unwrap();
        // n = 2, exclude datum 0: the view is f applied to datum 1 alone
        let v = obj.leave_one_out(0).unwrap();
        assert_close(
            v.value(&w),
            obj.loss().value(&w, &unit(1, 2)),
            1e-15,
        );
        // direct average over j != i
        let full = obj.value(&w);
        let f0 = obj.loss().value(&w, &unit(0, 2));
        assert_close(v.value(&w), 2.0 * full - f0, 1e-15);
        // idempotent re-exclusion
        let vv = v.leave_one_out(0).unwrap();
        assert_close(vv.value(&w), v.value(&w), 0.0);
        // original unchanged
        assert_eq!(obj.excluded_index(), None);
        // out of range
        assert!(matches!(obj.leave_one_out(5), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn gradient_linearity() {
        // empirical gradient equals the 1/n-weighted decomposition's sum
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sample: Vec<Vec<f64>> = (0..5)
            .map(|_| {
                let v: Vec<f64> = (0..3).map(|_| rng.gen_range(-0.5..0.5)).collect();
                v
            })
            .collect();
        let obj = pca_objective(sample).unwrap();
        let w = numerics::normalized(&[0.2, -1.0, 0.4]).unwrap();
        let g = obj.gradient(&w);
        let (rest, own) = obj.loo_gradient_decomposition(&w, 2).unwrap();
        for i in 0..3 {
            assert_close(g[i], rest[i] + own[i], 1e-14);
        }
    }

    #[test]
    fn lagrangian_pca_leading_eigvec() {
        // A = diag(1, .5): at w = e1, lambda = 1, projected gradient 0,
        // restricted Hessian (1x1) = [0.5]
        let a = SymMatrix::diagonal(&[1.0, 0.5]);
        let obj = crate::pca::PcaReducedObjective::new(a);
        let sphere = UnitSphere::new(2);
        let st = lagrangian_state(&obj, &sphere, &unit(0, 2)).unwrap();
        assert_close(st.multipliers[0], 1.0, 1e-12);
        assert_close(st.gradient_norm(), 0.0, 1e-12);
        assert_eq!(st.restricted_hessian.dim(), 1);
        assert_close(st.restricted_hessian.get(0, 0), 0.5, 1e-12);
    }

    #[test]
    fn lagrangian_pca_saddle() {
        let a = SymMatrix::diagonal(&[1.0, 0.5]);
        let obj = crate::pca::PcaReducedObjective::new(a);
        let sphere = UnitSphere::new(2);
        let st = lagrangian_state(&obj, &sphere, &unit(1, 2)).unwrap();
        assert_close(st.multipliers[0], 0.5, 1e-12);
        assert_close(st.gradient_norm(), 0.0, 1e-12);
        assert_close(st.restricted_hessian.get(0, 0), -0.5, 1e-12);
    }

    #[test]
    fn lagrangian_tensor_balanced_saddle() {
        // T = sum e_i^x4 (d = 3), u = (e1 + e2)/sqrt(2):
        // lambda = 2, projected gradient 0, min restricted curvature -4
        let t = crate::ica::exact_component_tensor(&Mat::identity(3)).unwrap();
        let obj = crate::ica::TensorObjective::new(t);
        let sphere = UnitSphere::new(3);
        let s = 1.0 / 2.0f64.sqrt();
        let st = lagrangian_state(&obj, &sphere, &[s, s, 0.0]).unwrap();
        assert_close(st.multipliers[0], 2.0, 1e-10);
        assert_close(st.gradient_norm(), 0.0, 1e-10);
        assert_close(st.min_restricted_curvature().unwrap(), -4.0, 1e-9);
    }

    #[test]
    fn lagrangian_infeasible() {
        let a = SymMatrix::diagonal(&[1.0, 0.5]);
        let obj = crate::pca::PcaReducedObjective::new(a);
        // a constraint set without projection: use the sphere via a wrapper
        struct NoProject(UnitSphere);
        impl ConstraintSet for NoProject {
            fn dim(&self) -> usize { self.0.dim() }
            fn count(&self) -> usize { 1 }
            fn value(&self, i: usize, w: &[f64]) -> f64 { self.0.value(i, w) }
            fn gradient(&self, i: usize, w: &[f64]) -> Vec<f64> { self.0.gradient(i, w) }
            fn hessian(&self, i: usize, w: &[f64]) -> SymMatrix { self.0.hessian(i, w) }
        }
        let cons = NoProject(UnitSphere::new(2));
        assert!(matches!(
            lagrangian_state(&obj, &cons, &[2.0, 0.0]),
            Err(Error::Infeasible { .. })
        ));
    }

    #[test]
    fn projection_identity_on_sphere() {
        // grad L(w) = (I - w w^T) grad F(w) for unit w
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = SymMatrix::from_fn(4, |_, _| rng.gen_range(-0.3..0.3));
        let obj = crate::pca::PcaReducedObjective::new(a);
        let sphere = UnitSphere::new(4);
        for _ in 0..20 {
            let raw: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let w = numerics::normalized(&raw).unwrap();
            let st = lagrangian_state(&obj, &sphere, &w).unwrap();
            let g = obj.gradient(&w);
            let proj = numerics::sub(&g, &numerics::scale(&w, numerics::dot(&w, &g)));
            for i in 0..4 {
                assert_close(st.projected_gradient[i], proj[i], 1e-12);
            }
            // orthogonal to the constraint gradient
            assert_close(numerics::dot(&st.projected_gradient, &w), 0.0, 1e-9);
        }
    }

    #[test]
    fn fd_validator_accepts_pca_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let loss = crate::pca::PcaLoss::new(3);
        for _ in 0..20 {
            let z: Vec<f64> = (0..3).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let raw: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let w = numerics::normalized(&raw).unwrap();
            validate_datum_loss(&loss, &w, &z).unwrap();
        }
    }
}
