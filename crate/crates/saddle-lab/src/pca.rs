//! Leading-eigenvector PCA: eigengap-controlled data generation, the gap
//! concentration event, the reduced empirical objective, the three-step
//! strict-saddle classifier for near-stationary points, and the stability
//! model wiring it into the leave-one-out harness.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use std::sync::Arc;

use crate::numerics::{self, sym_eig, Mat, SymMatrix};
use crate::objective::{
    lagrangian_state, DatumLoss, EmpiricalObjective, LossConstants, SmoothObjective,
    UnitSphere,
};
use crate::solvers::leading_eigenvector;
use crate::stability::{StabilityModel, Symmetry, TrialFit};
use crate::{Error, Result};

// ---------------------------------------------------------------------------
// losses and objectives

fn pca_constants() -> LossConstants {
    // on the unit sphere with data in the unit ball the loss -(w^T z)^2 / 2
    // is 1-Lipschitz and 1-smooth, and its Hessian -z z^T is constant in w
    LossConstants::new(1.0, 1.0, 0.0, 1.0)
}

/// Reduced per-datum loss f(w, z) = -(w^T z)^2 / 2.
pub struct PcaLoss {
    dim: usize,
}

impl PcaLoss {
    pub fn new(dim: usize) -> Self {
        PcaLoss { dim }
    }
}

impl DatumLoss for PcaLoss {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, w: &[f64], z: &[f64]) -> f64 {
        let s = numerics::dot(w, z);
        -0.5 * s * s
    }

    fn gradient(&self, w: &[f64], z: &[f64]) -> Vec<f64> {
        numerics::scale(z, -numerics::dot(w, z))
    }

    fn hessian(&self, _w: &[f64], z: &[f64]) -> SymMatrix {
        let mut h = SymMatrix::zeros(self.dim);
        h.add_scaled_outer(-1.0, z);
        h
    }
}

/// Original reconstruction loss f(w, z) = ||z - w w^T z||^2 / 2. On the unit
/// sphere it differs from [`PcaLoss`] by the w-independent constant
/// ||z||^2 / 2.
pub struct PcaFullLoss {
    dim: usize,
}

impl PcaFullLoss {
    pub fn new(dim: usize) -> Self {
        PcaFullLoss { dim }
    }
}

impl DatumLoss for PcaFullLoss {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, w: &[f64], z: &[f64]) -> f64 {
        let s = numerics::dot(w, z);
        let mut r = z.to_vec();
        numerics::axpy(&mut r, -s, w);
        0.5 * numerics::dot(&r, &r)
    }

    fn gradient(&self, w: &[f64], z: &[f64]) -> Vec<f64> {
        // f = ||z||^2/2 - s^2 + s^2 ||w||^2 / 2 with s = w^T z
        let s = numerics::dot(w, z);
        let ww = numerics::dot(w, w);
        let mut g = numerics::scale(z, s * (ww - 2.0));
        numerics::axpy(&mut g, s * s, w);
        g
    }

    fn hessian(&self, w: &[f64], z: &[f64]) -> SymMatrix {
        let s = numerics::dot(w, z);
        let ww = numerics::dot(w, w);
        let mut h = SymMatrix::identity(self.dim).scaled(s * s);
        h.add_scaled_outer(ww - 2.0, z);
        // 2s (z w^T + w z^T)
        let mut sym = SymMatrix::zeros(self.dim);
        for i in 0..self.dim {
            for j in 0..=i {
                sym.set(i, j, 2.0 * s * (z[i] * w[j] + w[i] * z[j]));
            }
        }
        h.add_scaled(1.0, &sym);
        h
    }
}

/// The empirical PCA objective in reduced per-datum form.
pub fn pca_objective(sample: Vec<Vec<f64>>) -> Result<EmpiricalObjective> {
    let dim = sample.first().ok_or(Error::EmptySample)?.len();
    EmpiricalObjective::new(Arc::new(PcaLoss::new(dim)), sample, pca_constants())
}

/// Fast algebraic form of the same objective: F(w) = -(w^T A w) / 2 with the
/// empirical correlation matrix precomputed. Evaluation is O(d^2) regardless
/// of the sample size.
pub struct PcaReducedObjective {
    a: SymMatrix,
}

impl PcaReducedObjective {
    pub fn new(a: SymMatrix) -> Self {
        PcaReducedObjective { a }
    }

    pub fn matrix(&self) -> &SymMatrix {
        &self.a
    }
}

impl SmoothObjective for PcaReducedObjective {
    fn dim(&self) -> usize {
        self.a.dim()
    }

    fn value(&self, w: &[f64]) -> f64 {
        -0.5 * self.a.quadratic_form(w)
    }

    fn gradient(&self, w: &[f64]) -> Vec<f64> {
        numerics::scale(&self.a.matvec(w), -1.0)
    }

    fn hessian(&self, _w: &[f64]) -> SymMatrix {
        self.a.scaled(-1.0)
    }

    fn constants(&self) -> LossConstants {
        pca_constants()
    }
}

/// A = (1/n) sum z_i z_i^T.
pub fn empirical_correlation(sample: &[Vec<f64>]) -> Result<SymMatrix> {
    let first = sample.first().ok_or(Error::EmptySample)?;
    let d = first.len();
    let mut a = SymMatrix::zeros(d);
    let n = sample.len() as f64;
    for z in sample {
        if z.len() != d {
            return Err(Error::DimMismatch { left: d, right: z.len() });
        }
        if !numerics::all_finite(z) {
            return Err(Error::NonFinite { context: "empirical_correlation datum" });
        }
        a.add_scaled_outer(1.0 / n, z);
    }
    Ok(a)
}

// ---------------------------------------------------------------------------
// distribution

/// A distribution over the unit ball with exactly known correlation matrix
/// Sigma = Q diag(lambda) Q^T: draws are z = Q diag(sqrt(lambda)) r with r
/// uniform over the sign vectors, so ||z||^2 = sum lambda_i deterministically
/// and E[z z^T] = Sigma with no approximation.
#[derive(Clone, Debug)]
pub struct PcaDistribution {
    eigenvalues: Vec<f64>,
    q: Mat,
    sigma: SymMatrix,
}

impl PcaDistribution {
    /// Distribution with an explicit orthonormal eigenbasis.
    pub fn with_basis(eigenvalues: Vec<f64>, q: Mat) -> Result<Self> {
        let d = eigenvalues.len();
        if d < 2 {
            return Err(Error::InvalidConfig("need dimension at least 2".into()));
        }
        if q.n_rows() != d || q.n_cols() != d {
            return Err(Error::DimMismatch { left: d, right: q.n_rows() });
        }
        if eigenvalues.iter().any(|&l| l < 0.0) {
            return Err(Error::InvalidConfig("eigenvalues must be nonnegative".into()));
        }
        for k in 1..d.saturating_sub(1) {
            if eigenvalues[k + 1] > eigenvalues[k] {
                return Err(Error::InvalidConfig(
                    "eigenvalues must be nonincreasing".into(),
                ));
            }
        }
        if eigenvalues[0] <= eigenvalues[1] {
            return Err(Error::InvalidConfig(
                "the two leading eigenvalues must have a positive gap".into(),
            ));
        }
        let total: f64 = eigenvalues.iter().sum();
        if total > 1.0 + 1e-12 {
            return Err(Error::InvalidConfig(format!(
                "eigenvalues sum to {total}, exceeding the unit-ball budget of 1"
            )));
        }
        let mut sigma = SymMatrix::zeros(d);
        for (k, &l) in eigenvalues.iter().enumerate() {
            sigma.add_scaled_outer(l, &q.col(k));
        }
        Ok(PcaDistribution { eigenvalues, q, sigma })
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Population eigengap lambda_1 - lambda_2.
    pub fn gap(&self) -> f64 {
        self.eigenvalues[0] - self.eigenvalues[1]
    }

    pub fn sigma(&self) -> &SymMatrix {
        &self.sigma
    }

    /// Leading population eigenvector.
    pub fn leading(&self) -> Vec<f64> {
        self.q.col(0)
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let coords: Vec<f64> = self
            .eigenvalues
            .iter()
            .map(|&l| if rng.gen::<bool>() { l.sqrt() } else { -l.sqrt() })
            .collect();
        self.q.matvec(&coords)
    }

    pub fn sample_n<R: Rng>(&self, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
        (0..n).map(|_| self.sample(rng)).collect()
    }
}

/// Distribution with a seeded random orthonormal eigenbasis.
pub fn gen_pca_distribution(
    d: usize,
    eigenvalues: Vec<f64>,
    seed: u64,
) -> Result<PcaDistribution> {
    use rand::SeedableRng;
    if eigenvalues.len() != d {
        return Err(Error::DimMismatch { left: d, right: eigenvalues.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = numerics::random_orthonormal(d, &mut rng)?;
    PcaDistribution::with_basis(eigenvalues, q)
}

// ---------------------------------------------------------------------------
// gap event

/// Outcome of the concentration event check for one sample.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct GapEvent {
    /// ||A - Sigma|| <= G_{1,2} / 2.
    pub holds: bool,
    pub norm_diff: f64,
    pub empirical_gap: f64,
    /// Whether the empirical gap also reached G_{1,2} / 2 (recorded, not
    /// implied: the eigenvalue-perturbation bound only guarantees
    /// `empirical_gap >= G_{1,2} - 2 norm_diff`).
    pub gap_at_least_half: bool,
}

/// Check whether the empirical correlation matrix concentrated to within
/// half the population eigengap, and measure the empirical gap.
///
/// Panics if the always-valid eigenvalue-perturbation consequence
/// `empirical_gap >= G_{1,2} - 2 ||A - Sigma||` fails, since that would
/// indicate an eigensolver bug rather than sampling noise.
pub fn gap_event(a: &SymMatrix, sigma: &SymMatrix, g12: f64) -> Result<GapEvent> {
    let norm_diff = numerics::operator_norm_diff(a, sigma)?;
    let eig = sym_eig(a)?;
    let empirical_gap = eig.values[0] - eig.values[1];
    let holds = norm_diff <= g12 / 2.0;
    assert!(
        empirical_gap >= g12 - 2.0 * norm_diff - 1e-10,
        "eigenvalue perturbation bound violated: gap {empirical_gap}, diff {norm_diff}"
    );
    Ok(GapEvent {
        holds,
        norm_diff,
        empirical_gap,
        gap_at_least_half: empirical_gap >= g12 / 2.0 - 1e-10,
    })
}

// ---------------------------------------------------------------------------
// near-stationary classifier

/// Which of the two regimes a near-stationary point landed in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum NearStationaryBranch {
    /// The multiplier sits within 2^4 tau of the top eigenvalue: the point
    /// is in the strongly convex basin of the leading eigenvector.
    StronglyConvex,
    /// The multiplier is far from the top eigenvalue: an explicit tangent
    /// direction of curvature at most -6 c G exists.
    StrictSaddle,
}

/// One verified inequality, stored with its nonnegative-slack residual.
#[derive(Clone, Debug, Serialize)]
pub struct NamedSlack {
    pub name: &'static str,
    pub slack: f64,
}

/// Full audit trail for one near-stationary point: the eigenbasis
/// expansion, the dyadic tail masses, the branch taken, and every
/// inequality of that branch's chain with its slack.
#[derive(Clone, Debug, Serialize)]
pub struct NearStationaryWitness {
    pub point: Vec<f64>,
    /// Coefficients of w in the eigenbasis of A.
    pub coefficients: Vec<f64>,
    /// Multiplier lambda(w) = w^T A w.
    pub multiplier: f64,
    pub grad_norm: f64,
    pub tau: f64,
    pub empirical_gap: f64,
    /// Mass of eigen coefficients whose eigenvalue is farther than 2^t tau
    /// from the multiplier, for t = 0..=t_max.
    pub tails: Vec<f64>,
    pub branch: NearStationaryBranch,
    pub slacks: Vec<NamedSlack>,
    /// |  ||grad||^2 - sum alpha_i^2 (lambda - lambda_i)^2  |.
    pub identity_error: f64,
    /// Tangent curvature along the witness direction (saddle branch only).
    pub curvature: Option<f64>,
    /// Witness direction u_1 - alpha_1 w (saddle branch only).
    pub curvature_witness: Option<Vec<f64>>,
}

impl NearStationaryWitness {
    /// All recorded inequalities hold (up to floating-point roundoff) and
    /// the gradient identity checks out.
    pub fn ok(&self) -> bool {
        let scale = self.multiplier.abs().max(1.0);
        self.identity_error <= 1e-11 * scale * scale
            && self.slacks.iter().all(|s| s.slack >= -1e-12)
    }
}

/// Classifier for near-stationary points of F(w) = -(w^T A w)/2 on the
/// sphere, with the eigendecomposition precomputed once.
pub struct NearStationaryClassifier {
    values: Vec<f64>,
    vectors: Mat,
    pub gap: f64,
    pub c: f64,
    pub tau: f64,
}

impl NearStationaryClassifier {
    pub fn new(a: &SymMatrix, c: f64) -> Result<Self> {
        if !(0.0 < c && c < 1.0 / 32.0) {
            return Err(Error::InvalidConfig(format!(
                "branch constant c = {c} outside (0, 1/32)"
            )));
        }
        let eig = sym_eig(a)?;
        if eig.values.len() < 2 {
            return Err(Error::InvalidConfig("need dimension at least 2".into()));
        }
        let gap = eig.values[0] - eig.values[1];
        if gap <= 0.0 {
            return Err(Error::InvalidConfig(
                "empirical spectrum has no leading gap".into(),
            ));
        }
        let tau = c * gap;
        Ok(NearStationaryClassifier { values: eig.values, vectors: eig.vectors, gap, c, tau })
    }

    /// Projected gradient norm of the reduced objective at unit w, via
    /// ||(lambda I - A) w|| in the eigenbasis.
    pub fn grad_norm(&self, w: &[f64]) -> f64 {
        let alpha = self.vectors.t_matvec(w);
        let lambda: f64 = alpha
            .iter()
            .zip(&self.values)
            .map(|(a, l)| a * a * l)
            .sum();
        alpha
            .iter()
            .zip(&self.values)
            .map(|(a, l)| {
                let t = a * (lambda - l);
                t * t
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Classify one unit vector. Errors if the gradient precondition
    /// ||grad L(w)|| <= tau fails.
    pub fn classify(&self, w: &[f64]) -> Result<NearStationaryWitness> {
        let w = numerics::normalized(w)?;
        let d = self.values.len();
        let alpha = self.vectors.t_matvec(&w);
        let lambda: f64 = alpha
            .iter()
            .zip(&self.values)
            .map(|(a, l)| a * a * l)
            .sum();

        // gradient via the eigen identity and via the direct matrix action
        let grad_sq_eigen: f64 = alpha
            .iter()
            .zip(&self.values)
            .map(|(a, l)| a * a * (lambda - l) * (lambda - l))
            .sum();
        let direct: Vec<f64> = (0..d)
            .map(|i| {
                (0..d)
                    .map(|k| self.vectors.get(i, k) * alpha[k] * (lambda - self.values[k]))
                    .sum()
            })
            .collect();
        let grad_norm = numerics::norm(&direct);
        let identity_error = (grad_norm * grad_norm - grad_sq_eigen).abs();

        if grad_norm > self.tau {
            return Err(Error::NotAdmissible { grad_norm, tau: self.tau });
        }

        let mut slacks = vec![NamedSlack {
            name: "multiplier below top eigenvalue",
            slack: self.values[0] - lambda + 1e-14 * self.values[0].abs().max(1.0),
        }];

        // dyadic tail masses: coefficients whose eigenvalue sits farther
        // than 2^t tau from lambda carry mass at most 2^{-2t}
        let spread = self.values[0] - self.values[d - 1];
        let t_max = if spread > self.tau {
            ((spread / self.tau).log2().ceil() as usize + 1).max(6)
        } else {
            6
        };
        let mut tails = vec![];
        for t in 0..=t_max {
            let radius = (1u64 << t.min(62)) as f64 * self.tau;
            let tail: f64 = alpha
                .iter()
                .zip(&self.values)
                .filter(|(_, &l)| (lambda - l).abs() > radius)
                .map(|(a, _)| a * a)
                .sum();
            slacks.push(NamedSlack {
                name: "dyadic tail mass bound",
                slack: 0.25f64.powi(t as i32) - tail,
            });
            tails.push(tail);
        }

        let in_basin = (lambda - self.values[0]).abs() <= 16.0 * self.tau;
        if in_basin {
            // strongly convex branch around +-u_1, sign-matched to w
            let a1 = alpha[0];
            // F(w) - F(u_1) = (lambda_1 - lambda)/2, expanded as a sum of
            // nonnegative terms to keep the slack cancellation-free
            let excess: f64 = alpha[1..]
                .iter()
                .zip(&self.values[1..])
                .map(|(a, l)| 0.5 * a * a * (self.values[0] - l))
                .sum();
            // ||w - sign(a1) u_1||^2 = 2 (1 - |a1|) = 2 tail / (1 + |a1|),
            // folded termwise into the lower-bound slack so that the
            // near-minimum cancellation never touches floating point
            let lower: f64 = alpha[1..]
                .iter()
                .zip(&self.values[1..])
                .map(|(a, l)| {
                    a * a * (0.5 * (self.values[0] - l) - 0.5 * self.gap / (1.0 + a1.abs()))
                })
                .sum();
            slacks.push(NamedSlack {
                name: "basin lower bound: excess >= (gap/4) dist^2",
                slack: lower,
            });
            slacks.push(NamedSlack {
                name: "basin upper bound: excess <= 2 ||grad||^2 / gap",
                slack: 2.0 * grad_sq_eigen / self.gap - excess,
            });
            Ok(NearStationaryWitness {
                point: w,
                coefficients: alpha,
                multiplier: lambda,
                grad_norm,
                tau: self.tau,
                empirical_gap: self.gap,
                tails,
                branch: NearStationaryBranch::StronglyConvex,
                slacks,
                identity_error,
                curvature: None,
                curvature_witness: None,
            })
        } else {
            // saddle branch: v = u_1 - alpha_1 w is tangent at w and
            // v^T (lambda I - A) v / ||v||^2
            //   = (lambda - lambda_1)(1 - 2 a1^2)/(1 - a1^2)
            let a1 = alpha[0];
            let denom = 1.0 - a1 * a1;
            let curvature = (lambda - self.values[0]) * (1.0 - 2.0 * a1 * a1) / denom;
            slacks.push(NamedSlack {
                name: "saddle curvature <= -6 c gap",
                slack: -curvature - 6.0 * self.c * self.gap,
            });
            // the witness must carry most of its mass: being outside the
            // basin forces a1^2 <= 2^{-8} by the t = 4 tail bound
            slacks.push(NamedSlack {
                name: "leading coefficient mass a1^2 <= 2^{-8}",
                slack: 0.25f64.powi(4) - a1 * a1,
            });
            let mut v = self.vectors.col(0);
            numerics::axpy(&mut v, -a1, &w);
            Ok(NearStationaryWitness {
                point: w,
                coefficients: alpha,
                multiplier: lambda,
                grad_norm,
                tau: self.tau,
                empirical_gap: self.gap,
                tails,
                branch: NearStationaryBranch::StrictSaddle,
                slacks,
                identity_error,
                curvature: Some(curvature),
                curvature_witness: Some(v),
            })
        }
    }
}

/// One-off classification of a single point.
pub fn classify_near_stationary(w: &[f64], a: &SymMatrix, c: f64) -> Result<NearStationaryWitness> {
    NearStationaryClassifier::new(a, c)?.classify(w)
}

/// Sample `count` unit vectors with ||grad L(w)|| <= c * gap: a mixture of
/// uniform sphere points (rarely admissible in high dimension) and
/// eigenvector perturbations at radii 1e-3, 1e-2, 1e-1.
pub fn sample_admissible(
    a: &SymMatrix,
    c: f64,
    count: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    use rand::SeedableRng;
    let cls = NearStationaryClassifier::new(a, c)?;
    let d = a.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    let radii = [1e-3, 1e-2, 1e-1];
    let mut attempts = 0usize;
    let budget = count.saturating_mul(2000).max(100_000);
    while out.len() < count {
        attempts += 1;
        if attempts > budget {
            return Err(Error::InvalidInput(format!(
                "could not find {count} admissible points in {budget} attempts \
                 (found {})",
                out.len()
            )));
        }
        let cand = if rng.gen::<f64>() < 0.25 {
            numerics::random_unit(d, &mut rng)
        } else {
            let k = rng.gen_range(0..d);
            let r = radii[rng.gen_range(0..radii.len())];
            let mut v = cls.vectors.col(k);
            let noise = numerics::random_unit(d, &mut rng);
            numerics::axpy(&mut v, r, &noise);
            match numerics::normalized(&v) {
                Ok(u) => u,
                Err(_) => continue,
            }
        };
        if cls.grad_norm(&cand) <= cls.tau {
            out.push(cand);
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// stability model

/// The PCA learning problem for the stability harness: exact
/// eigendecomposition ERM, leave-one-out solves via rank-one downdates of
/// the empirical correlation matrix, and exact population risk from the
/// generator.
pub struct PcaModel {
    dist: PcaDistribution,
}

impl PcaModel {
    pub fn new(dist: PcaDistribution) -> Self {
        PcaModel { dist }
    }

    pub fn distribution(&self) -> &PcaDistribution {
        &self.dist
    }

    /// (n A - z_i z_i^T) / (n - 1): the correlation matrix of the sample
    /// with datum i removed, without re-summing the outer products.
    pub fn downdate(a: &SymMatrix, n: usize, z_i: &[f64]) -> SymMatrix {
        let nf = n as f64;
        let mut out = a.scaled(nf / (nf - 1.0));
        out.add_scaled_outer(-1.0 / (nf - 1.0), z_i);
        out
    }
}

impl StabilityModel for PcaModel {
    fn dim(&self) -> usize {
        self.dist.dim()
    }

    fn symmetry(&self) -> Symmetry {
        Symmetry::SignFlip
    }

    fn constants(&self) -> LossConstants {
        pca_constants()
    }

    fn draw(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        self.dist.sample_n(n, rng)
    }

    fn fit(&self, sample: &[Vec<f64>]) -> Result<TrialFit> {
        let n = sample.len();
        if n < 2 {
            return Err(Error::EmptySample);
        }
        let a = empirical_correlation(sample)?;
        let hat_w = leading_eigenvector(&a)?.vector;
        let obj = PcaReducedObjective::new(a.clone());
        let sphere = UnitSphere::new(self.dim());

        let per_index: Vec<(Vec<f64>, f64, f64, f64)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let a_i = PcaModel::downdate(&a, n, &sample[i]);
                let w_i = leading_eigenvector(&a_i)
                    .map_err(|e| Error::SolveAt { index: i, source: Box::new(e) })?
                    .vector;
                let w_i = crate::stability::align_minimizer(&w_i, &hat_w, Symmetry::SignFlip);
                let risk = obj.value(&w_i);
                let state = lagrangian_state(&obj, &sphere, &w_i)?;
                let curv = state.min_restricted_curvature()?;
                Ok((w_i, risk, state.gradient_norm(), curv))
            })
            .collect::<Result<_>>()?;

        let mut loo = Vec::with_capacity(n);
        let mut empirical_risk_loo = Vec::with_capacity(n);
        let mut loo_grad_norms = Vec::with_capacity(n);
        let mut loo_min_curvatures = Vec::with_capacity(n);
        for (w_i, risk, g, c) in per_index {
            loo.push(w_i);
            empirical_risk_loo.push(risk);
            loo_grad_norms.push(g);
            loo_min_curvatures.push(c);
        }
        let empirical_risk_hat = obj.value(&hat_w);
        Ok(TrialFit {
            hat_w,
            loo,
            empirical_risk_hat,
            empirical_risk_loo,
            loo_grad_norms,
            loo_min_curvatures,
        })
    }

    fn loss(&self, w: &[f64], z: &[f64]) -> f64 {
        let s = numerics::dot(w, z);
        -0.5 * s * s
    }

    fn population_risk(&self, w: &[f64]) -> f64 {
        -0.5 * self.dist.sigma().quadratic_form(w)
    }

    fn population_min(&self) -> f64 {
        -0.5 * self.dist.eigenvalues()[0]
    }

    fn gap_event(&self, sample: &[Vec<f64>]) -> Result<Option<bool>> {
        let a = empirical_correlation(sample)?;
        Ok(Some(gap_event(&a, self.dist.sigma(), self.dist.gap())?.holds))
    }

    fn population_gap(&self) -> Option<f64> {
        Some(self.dist.gap())
    }
}
