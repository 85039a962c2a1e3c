//! Orthogonal fourth-order tensor decomposition for ICA with Rademacher
//! sources: the constant correction tensor, exact and empirical component
//! tensors, multilinear calculus, the sphere-constrained component
//! objective, deflation-based recovery, and the near-minimum /
//! balanced-saddle invariant checks.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::sync::Arc;

use crate::numerics::{self, Mat, SymMatrix};
use crate::objective::{DatumLoss, EmpiricalObjective, LossConstants, SmoothObjective};
use crate::solvers::{sphere_pgd, SolverConfig};
use crate::{Error, Result};

/// Dense d^4 storage cap: 16^4 = 65536 entries.
pub const TENSOR_DIM_CAP: usize = 16;

/// Derivative bounds of the tensor objective: the p-th derivative magnitude
/// scales like sqrt(d), with the explicit constant 4 sqrt(d) max(3, d)
/// covering the correction-tensor term (factor 3 on the diagonal) and the
/// data term ((u^T y)^3 ||y|| with ||y|| = sqrt(d)).
fn tensor_constants(d: usize) -> LossConstants {
    let b = 4.0 * (d as f64).sqrt() * 3.0f64.max(d as f64);
    LossConstants::new(b, b, b, 1.0)
}

// ---------------------------------------------------------------------------
// symmetric 4-tensor

/// Dense symmetric fourth-order tensor on R^d.
#[derive(Clone, Debug, PartialEq)]
pub struct SymTensor4 {
    dim: usize,
    data: Vec<f64>,
}

impl SymTensor4 {
    pub fn zeros(dim: usize) -> Result<Self> {
        if dim == 0 || dim > TENSOR_DIM_CAP {
            return Err(Error::TensorDimCap { dim, cap: TENSOR_DIM_CAP });
        }
        Ok(SymTensor4 { dim, data: vec![0.0; dim * dim * dim * dim] })
    }

    /// Build from an arbitrary entry function, then symmetrize by averaging
    /// over all 24 index permutations.
    pub fn from_fn(dim: usize, f: impl Fn(usize, usize, usize, usize) -> f64) -> Result<Self> {
        let mut t = SymTensor4::zeros(dim)?;
        for i in 0..dim {
            for j in 0..dim {
                for k in 0..dim {
                    for l in 0..dim {
                        let at = t.idx(i, j, k, l);
                        t.data[at] = f(i, j, k, l);
                    }
                }
            }
        }
        t.symmetrize();
        Ok(t)
    }

    fn idx(&self, i: usize, j: usize, k: usize, l: usize) -> usize {
        ((i * self.dim + j) * self.dim + k) * self.dim + l
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        self.data[self.idx(i, j, k, l)]
    }

    /// Average every entry over its 24 index permutations.
    pub fn symmetrize(&mut self) {
        let d = self.dim;
        let mut out = vec![0.0; self.data.len()];
        for i in 0..d {
            for j in 0..d {
                for k in 0..d {
                    for l in 0..d {
                        let mut s = 0.0;
                        for p in permutations_of([i, j, k, l]) {
                            s += self.data[self.idx(p[0], p[1], p[2], p[3])];
                        }
                        out[self.idx(i, j, k, l)] = s / 24.0;
                    }
                }
            }
        }
        self.data = out;
    }

    /// Add s * u^{x4} (already symmetric).
    pub fn add_scaled_rank_one(&mut self, s: f64, u: &[f64]) {
        let d = self.dim;
        assert_eq!(u.len(), d);
        for i in 0..d {
            for j in 0..d {
                for k in 0..d {
                    for l in 0..d {
                        let at = self.idx(i, j, k, l);
                        self.data[at] += s * u[i] * u[j] * u[k] * u[l];
                    }
                }
            }
        }
    }

    pub fn add_scaled(&mut self, s: f64, other: &SymTensor4) {
        assert_eq!(self.dim, other.dim);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    pub fn scaled(&self, s: f64) -> SymTensor4 {
        SymTensor4 { dim: self.dim, data: self.data.iter().map(|x| s * x).collect() }
    }

    /// Full contraction T(u, u, u, u).
    pub fn eval(&self, u: &[f64]) -> f64 {
        let d = self.dim;
        let mut s = 0.0;
        for i in 0..d {
            for j in 0..d {
                let uij = u[i] * u[j];
                for k in 0..d {
                    let uijk = uij * u[k];
                    let base = (i * d + j) * d * d + k * d;
                    for l in 0..d {
                        s += self.data[base + l] * uijk * u[l];
                    }
                }
            }
        }
        s
    }

    /// Partial contraction T(u, u, u, .) (the gradient of eval is 4 times
    /// this, by symmetry).
    pub fn contract3(&self, u: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let mut out = vec![0.0; d];
        for i in 0..d {
            for j in 0..d {
                let uij = u[i] * u[j];
                for k in 0..d {
                    let uijk = uij * u[k];
                    let base = (i * d + j) * d * d + k * d;
                    for (l, o) in out.iter_mut().enumerate() {
                        *o += self.data[base + l] * uijk;
                    }
                }
            }
        }
        out
    }

    /// Partial contraction T(u, u, ., .) as a symmetric matrix (the Hessian
    /// of eval is 12 times this).
    pub fn contract2(&self, u: &[f64]) -> SymMatrix {
        let d = self.dim;
        let mut m = SymMatrix::zeros(d);
        for k in 0..d {
            for l in 0..=k {
                let mut s = 0.0;
                for i in 0..d {
                    for j in 0..d {
                        s += self.data[self.idx(i, j, k, l)] * u[i] * u[j];
                    }
                }
                m.set(k, l, s);
            }
        }
        m
    }

    pub fn max_abs_entry(&self) -> f64 {
        self.data.iter().fold(0.0f64, |a, x| a.max(x.abs()))
    }

    pub fn max_abs_diff(&self, other: &SymTensor4) -> f64 {
        assert_eq!(self.dim, other.dim);
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0f64, |a, (x, y)| a.max((x - y).abs()))
    }
}

fn permutations_of(idx: [usize; 4]) -> impl Iterator<Item = [usize; 4]> {
    // all 24 permutations of four indices, generated statically
    const PERMS: [[usize; 4]; 24] = [
        [0, 1, 2, 3], [0, 1, 3, 2], [0, 2, 1, 3], [0, 2, 3, 1], [0, 3, 1, 2],
        [0, 3, 2, 1], [1, 0, 2, 3], [1, 0, 3, 2], [1, 2, 0, 3], [1, 2, 3, 0],
        [1, 3, 0, 2], [1, 3, 2, 0], [2, 0, 1, 3], [2, 0, 3, 1], [2, 1, 0, 3],
        [2, 1, 3, 0], [2, 3, 0, 1], [2, 3, 1, 0], [3, 0, 1, 2], [3, 0, 2, 1],
        [3, 1, 0, 2], [3, 1, 2, 0], [3, 2, 0, 1], [3, 2, 1, 0],
    ];
    PERMS.iter().map(move |p| [idx[p[0]], idx[p[1]], idx[p[2]], idx[p[3]]])
}

/// T(u, u, u, u).
pub fn multilinear_eval(t: &SymTensor4, u: &[f64]) -> Result<f64> {
    if u.len() != t.dim() {
        return Err(Error::DimMismatch { left: t.dim(), right: u.len() });
    }
    Ok(t.eval(u))
}

/// Gradient of u -> T(u, u, u, u): 4 T(u, u, u, .).
pub fn multilinear_grad(t: &SymTensor4, u: &[f64]) -> Result<Vec<f64>> {
    if u.len() != t.dim() {
        return Err(Error::DimMismatch { left: t.dim(), right: u.len() });
    }
    Ok(numerics::scale(&t.contract3(u), 4.0))
}

// ---------------------------------------------------------------------------
// the Z correction tensor and instances

/// The constant tensor with 3 on the full diagonal and 1 on every entry
/// whose index multiset is a pair of pairs {i,i,j,j}; zero elsewhere.
pub fn make_z(d: usize) -> Result<SymTensor4> {
    let mut z = SymTensor4::zeros(d)?;
    for i in 0..d {
        for j in 0..d {
            for k in 0..d {
                for l in 0..d {
                    let mut counts = std::collections::BTreeMap::new();
                    for x in [i, j, k, l] {
                        *counts.entry(x).or_insert(0usize) += 1;
                    }
                    let v = match counts.len() {
                        1 => 3.0,
                        2 if counts.values().all(|&c| c == 2) => 1.0,
                        _ => 0.0,
                    };
                    let at = z.idx(i, j, k, l);
                    z.data[at] = v;
                }
            }
        }
    }
    Ok(z)
}

/// An ICA problem: an orthonormal mixing matrix and its exact component
/// tensor sum_i a_i^{x4}.
pub struct IcaInstance {
    mixing: Mat,
    tensor: SymTensor4,
}

impl IcaInstance {
    pub fn new(mixing: Mat) -> Result<Self> {
        let d = mixing.n_rows();
        if mixing.n_cols() != d {
            return Err(Error::DimMismatch { left: d, right: mixing.n_cols() });
        }
        for i in 0..d {
            for j in 0..=i {
                let g = numerics::dot(&mixing.col(i), &mixing.col(j));
                let target = if i == j { 1.0 } else { 0.0 };
                if (g - target).abs() > 1e-10 {
                    return Err(Error::InvalidInput(format!(
                        "mixing matrix is not orthonormal: <a_{i}, a_{j}> = {g}"
                    )));
                }
            }
        }
        let tensor = exact_component_tensor(&mixing)?;
        Ok(IcaInstance { mixing, tensor })
    }

    /// Instance with a seeded random orthonormal mixing matrix.
    pub fn random(d: usize, seed: u64) -> Result<Self> {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        IcaInstance::new(numerics::random_orthonormal(d, &mut rng)?)
    }

    pub fn dim(&self) -> usize {
        self.mixing.n_rows()
    }

    pub fn mixing(&self) -> &Mat {
        &self.mixing
    }

    pub fn tensor(&self) -> &SymTensor4 {
        &self.tensor
    }
}

/// sum_i (column a_i)^{x4}.
pub fn exact_component_tensor(a: &Mat) -> Result<SymTensor4> {
    let mut t = SymTensor4::zeros(a.n_rows())?;
    for k in 0..a.n_cols() {
        t.add_scaled_rank_one(1.0, &a.col(k));
    }
    Ok(t)
}

/// Draw n observations y = A x with x uniform on the sign vectors.
pub fn sample_ica<R: Rng>(instance: &IcaInstance, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let d = instance.dim();
    (0..n)
        .map(|_| {
            let x: Vec<f64> =
                (0..d).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect();
            instance.mixing.matvec(&x)
        })
        .collect()
}

/// All 2^d sign observations, for exact expectations.
pub fn exhaustive_ica_sample(instance: &IcaInstance) -> Vec<Vec<f64>> {
    let d = instance.dim();
    assert!(d <= 20, "exhaustive enumeration is 2^d");
    (0..1usize << d)
        .map(|mask| {
            let x: Vec<f64> = (0..d)
                .map(|i| if mask >> i & 1 == 1 { 1.0 } else { -1.0 })
                .collect();
            instance.mixing.matvec(&x)
        })
        .collect()
}

/// (1/2)(Z - mean over the sample of y^{x4}).
pub fn empirical_tensor(sample: &[Vec<f64>], z: &SymTensor4) -> Result<SymTensor4> {
    if sample.is_empty() {
        return Err(Error::EmptySample);
    }
    let n = sample.len() as f64;
    let mut t = z.scaled(0.5);
    for y in sample {
        if y.len() != z.dim() {
            return Err(Error::DimMismatch { left: z.dim(), right: y.len() });
        }
        t.add_scaled_rank_one(-0.5 / n, y);
    }
    Ok(t)
}

// ---------------------------------------------------------------------------
// objectives

/// Per-datum loss f(u, y) = -(Z(u,u,u,u) - (u^T y)^4) / 2, whose sample mean
/// is the negated contracted empirical tensor.
pub struct TensorDatumLoss {
    z: Arc<SymTensor4>,
}

impl TensorDatumLoss {
    pub fn new(z: Arc<SymTensor4>) -> Self {
        TensorDatumLoss { z }
    }
}

impl DatumLoss for TensorDatumLoss {
    fn dim(&self) -> usize {
        self.z.dim()
    }

    fn value(&self, u: &[f64], y: &[f64]) -> f64 {
        let s = numerics::dot(u, y);
        -0.5 * (self.z.eval(u) - s * s * s * s)
    }

    fn gradient(&self, u: &[f64], y: &[f64]) -> Vec<f64> {
        let s = numerics::dot(u, y);
        let mut g = numerics::scale(&self.z.contract3(u), -2.0);
        numerics::axpy(&mut g, 2.0 * s * s * s, y);
        g
    }

    fn hessian(&self, u: &[f64], y: &[f64]) -> SymMatrix {
        let s = numerics::dot(u, y);
        let mut h = self.z.contract2(u).scaled(-6.0);
        h.add_scaled_outer(6.0 * s * s, y);
        h
    }
}

/// The per-datum empirical objective for one component.
pub fn tensor_objective(sample: Vec<Vec<f64>>) -> Result<EmpiricalObjective> {
    let d = sample.first().ok_or(Error::EmptySample)?.len();
    let z = Arc::new(make_z(d)?);
    EmpiricalObjective::new(Arc::new(TensorDatumLoss::new(z)), sample, tensor_constants(d))
}

/// Fast algebraic form: F(u) = -T(u, u, u, u) for a fixed (exact or
/// empirical) tensor, evaluated in O(d^4) regardless of sample size.
pub struct TensorObjective {
    t: SymTensor4,
}

impl TensorObjective {
    pub fn new(t: SymTensor4) -> Self {
        TensorObjective { t }
    }

    pub fn tensor(&self) -> &SymTensor4 {
        &self.t
    }
}

impl SmoothObjective for TensorObjective {
    fn dim(&self) -> usize {
        self.t.dim()
    }

    fn value(&self, u: &[f64]) -> f64 {
        -self.t.eval(u)
    }

    fn gradient(&self, u: &[f64]) -> Vec<f64> {
        numerics::scale(&self.t.contract3(u), -4.0)
    }

    fn hessian(&self, u: &[f64]) -> SymMatrix {
        self.t.contract2(u).scaled(-12.0)
    }

    fn constants(&self) -> LossConstants {
        tensor_constants(self.t.dim())
    }
}

// ---------------------------------------------------------------------------
// deflation and recovery

/// T - u^{x4} for a unit u.
pub fn deflate(t: &SymTensor4, u: &[f64]) -> Result<SymTensor4> {
    if u.len() != t.dim() {
        return Err(Error::DimMismatch { left: t.dim(), right: u.len() });
    }
    if (numerics::dot(u, u) - 1.0).abs() > 1e-8 {
        return Err(Error::InvalidInput("deflation direction must be unit".into()));
    }
    let mut out = t.clone();
    out.add_scaled_rank_one(-1.0, u);
    Ok(out)
}

fn canonical_sign(mut v: Vec<f64>) -> Vec<f64> {
    let mut best = 0usize;
    for i in 1..v.len() {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        for x in &mut v {
            *x = -*x;
        }
    }
    v
}

/// Recover all d components of a (near-)orthogonally-decomposable tensor by
/// repeated maximization and deflation. Each round takes the best of
/// `config.restarts + 1` seeded random starts; a round where every start
/// fails reports the failing round index.
pub fn recover_from_tensor(t: &SymTensor4, config: &SolverConfig) -> Result<Mat> {
    let d = t.dim();
    let sphere = crate::objective::UnitSphere::new(d);
    let mut current = t.clone();
    let mut cols = Vec::with_capacity(d);
    for round in 0..d {
        let obj = TensorObjective::new(current.clone());
        let mut best: Option<(f64, Vec<f64>)> = None;
        let mut last_err = None;
        for restart in 0..=config.restarts {
            let mut rng = crate::certifier::point_rng(
                config.seed ^ (round as u64).wrapping_mul(0xD134_2543_DE82_EF95),
                restart,
            );
            let w0 = numerics::random_unit(d, &mut rng);
            match sphere_pgd(&obj, &sphere, &w0, config) {
                Ok(w) => {
                    let v = obj.value(&w);
                    if best.as_ref().map_or(true, |(bv, _)| v < *bv) {
                        best = Some((v, w));
                    }
                }
                Err(e) => last_err = Some(e),
            }
        }
        let (_, w) = best.ok_or_else(|| Error::SolveAt {
            index: round,
            source: Box::new(last_err.expect("at least one start attempted")),
        })?;
        let w = canonical_sign(w);
        current = deflate(&current, &w)?;
        cols.push(w);
    }
    Ok(Mat::from_columns(d, cols))
}

/// Recover the mixing matrix from raw observations: build the empirical
/// tensor, then peel components off it.
pub fn recover_components(sample: &[Vec<f64>], config: &SolverConfig) -> Result<Mat> {
    let d = sample.first().ok_or(Error::EmptySample)?.len();
    let t = empirical_tensor(sample, &make_z(d)?)?;
    recover_from_tensor(&t, config)
}

/// Greedy signed matching of recovered columns to true columns: repeatedly
/// pair the two most-aligned unused columns. Returns the worst matched
/// distance max_i min_{+-} ||a_hat_i -+ a_{pi(i)}||.
pub fn match_error(a_hat: &Mat, a: &Mat) -> Result<f64> {
    let d = a.n_cols();
    if a_hat.n_cols() != d || a_hat.n_rows() != a.n_rows() {
        return Err(Error::DimMismatch { left: a_hat.n_cols(), right: d });
    }
    let mut used_hat = vec![false; d];
    let mut used_true = vec![false; d];
    let mut worst = 0.0f64;
    for _ in 0..d {
        let mut pick = None;
        let mut best_dot = -1.0;
        for i in 0..d {
            if used_hat[i] {
                continue;
            }
            for j in 0..d {
                if used_true[j] {
                    continue;
                }
                let dot = numerics::dot(&a_hat.col(i), &a.col(j)).abs();
                if dot > best_dot {
                    best_dot = dot;
                    pick = Some((i, j));
                }
            }
        }
        let (i, j) = pick.expect("unused pair remains");
        used_hat[i] = true;
        used_true[j] = true;
        let hi = numerics::dot(&a_hat.col(i), &a_hat.col(i));
        let tj = numerics::dot(&a.col(j), &a.col(j));
        let dist_sq = (hi + tj - 2.0 * best_dot).max(0.0);
        worst = worst.max(dist_sq.sqrt());
    }
    Ok(worst)
}

// ---------------------------------------------------------------------------
// near-minimum and saddle invariants

/// The polynomially small thresholds attached to dimension d: the support
/// cutoff tau0 = (10 d)^{-4}, the gradient threshold tau = 4 tau0^2, and the
/// basin radius bound 2 d tau0.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct NearMinimumThresholds {
    pub tau0: f64,
    pub tau: f64,
    pub radius: f64,
}

pub fn near_minimum_thresholds(d: usize) -> NearMinimumThresholds {
    let tau0 = (10.0 * d as f64).powi(-4);
    NearMinimumThresholds { tau0, tau: 4.0 * tau0 * tau0, radius: 2.0 * d as f64 * tau0 }
}

/// Indices with |v_i| above the support cutoff.
pub fn support(v: &[f64], tau0: f64) -> Vec<usize> {
    v.iter()
        .enumerate()
        .filter(|(_, x)| x.abs() > tau0)
        .map(|(i, _)| i)
        .collect()
}

/// A unit vector near a component minimum of the exact tensor objective,
/// kept in structured form: the dominant coordinate is represented through
/// q = sum of the squared off-coordinates, so the quantities of interest
/// (all of order q or smaller, far below machine epsilon relative to 1)
/// never suffer catastrophic cancellation against 1.
#[derive(Clone, Debug)]
pub struct NearMinimumPoint {
    pub dominant: usize,
    pub sign: f64,
    /// Off-coordinates in the component basis; entry `dominant` is zero.
    pub small: Vec<f64>,
}

/// Every measured quantity of one near-minimum check, in the component
/// basis with F(v) = -sum v_i^4 on the sphere.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct NearMinimumReport {
    pub grad_norm: f64,
    pub support_size: usize,
    /// F(v) - F(e_k) = 2 sum_{i<j} v_i^2 v_j^2.
    pub excess: f64,
    /// ||v - sign e_k||^2 = 2 q / (1 + |v_k|).
    pub dist_sq: f64,
    /// excess - dist_sq / 4, assembled from nonnegative terms.
    pub lower_slack: f64,
    /// excess / ||grad||^2, the measured constant of the upper bound.
    pub upper_ratio: f64,
}

impl NearMinimumPoint {
    fn q(&self) -> f64 {
        self.small.iter().map(|x| x * x).sum()
    }

    /// Materialize the unit vector (the dominant entry collapses to 1.0 in
    /// floating point when q is below machine epsilon; the structured
    /// accessors below exist precisely because of that).
    pub fn vector(&self) -> Vec<f64> {
        let mut v = self.small.clone();
        v[self.dominant] = self.sign * (1.0 - self.q()).sqrt();
        v
    }

    /// Projected gradient norm of F(v) = -sum v_i^4 on the sphere,
    /// component i: -4 v_i (v_i^2 - s4). The dominant component is expanded
    /// as sum_{i != k} v_i^2 (v_k^2 - v_i^2) and the off components use
    /// 1 - s4 = q(2 - q) - sum_{i != k} v_i^4, so every term is a product
    /// of small quantities.
    pub fn grad_norm(&self) -> f64 {
        let k = self.dominant;
        let q = self.q();
        let vk2 = 1.0 - q;
        let s4_deficit =
            q * (2.0 - q) - self.small.iter().map(|x| x * x * x * x).sum::<f64>();
        let mut sum_sq = 0.0;
        for (i, &v) in self.small.iter().enumerate() {
            if i == k {
                continue;
            }
            let g = 4.0 * v * (1.0 - v * v - s4_deficit);
            sum_sq += g * g;
        }
        let gk: f64 = self
            .small
            .iter()
            .map(|&v| v * v * (vk2 - v * v))
            .sum::<f64>()
            * 4.0;
        sum_sq += gk * gk;
        sum_sq.sqrt()
    }

    /// Verify the near-minimum inequalities for this point. Errors if the
    /// gradient misses the admissibility threshold.
    pub fn check(&self) -> Result<NearMinimumReport> {
        let d = self.small.len();
        let th = near_minimum_thresholds(d);
        let grad_norm = self.grad_norm();
        if grad_norm > th.tau {
            return Err(Error::NotAdmissible { grad_norm, tau: th.tau });
        }
        let k = self.dominant;
        let q = self.q();
        let vk = (1.0 - q).sqrt();
        let mut support_size = usize::from(vk > th.tau0);
        for (i, &v) in self.small.iter().enumerate() {
            if i != k && v.abs() > th.tau0 {
                support_size += 1;
            }
        }
        let mut pair_sum = 0.0;
        for i in 0..d {
            if i == k {
                continue;
            }
            for j in (i + 1)..d {
                if j == k {
                    continue;
                }
                pair_sum += self.small[i] * self.small[i] * self.small[j] * self.small[j];
            }
        }
        let excess = 2.0 * (1.0 - q) * q + 2.0 * pair_sum;
        let dist_sq = 2.0 * q / (1.0 + vk);
        let lower_slack =
            q * (2.0 * (1.0 - q) - 0.5 / (1.0 + vk)) + 2.0 * pair_sum;
        Ok(NearMinimumReport {
            grad_norm,
            support_size,
            excess,
            dist_sq,
            lower_slack,
            upper_ratio: if grad_norm > 0.0 { excess / (grad_norm * grad_norm) } else { 0.0 },
        })
    }
}

/// Sample structured near-minimum points with admissible gradients and a
/// single-coordinate support.
pub fn sample_near_minimum_points(
    d: usize,
    count: usize,
    seed: u64,
) -> Vec<NearMinimumPoint> {
    use rand::SeedableRng;
    let th = near_minimum_thresholds(d);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let k = rng.gen_range(0..d);
        let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
        // the projected gradient is ~ 4 * radius, so radius <= tau / 8 keeps
        // the point admissible with margin
        let radius = th.tau / 4.0 * rng.gen_range(0.05..0.5);
        let mut small = vec![0.0; d];
        let dir = numerics::random_unit(d - 1, &mut rng);
        let mut t = 0;
        for (i, s) in small.iter_mut().enumerate() {
            if i != k {
                *s = radius * dir[t];
                t += 1;
            }
        }
        let p = NearMinimumPoint { dominant: k, sign, small };
        if p.grad_norm() <= th.tau {
            out.push(p);
        }
    }
    out
}

/// Minimum restricted curvature at every balanced two-component saddle
/// (a_i + a_j)/sqrt(2) of the instance's exact objective.
pub fn balanced_saddle_curvatures(instance: &IcaInstance) -> Result<Vec<f64>> {
    let d = instance.dim();
    let obj = TensorObjective::new(instance.tensor().clone());
    let sphere = crate::objective::UnitSphere::new(d);
    let mut out = vec![];
    for i in 0..d {
        for j in (i + 1)..d {
            let mut w = instance.mixing.col(i);
            numerics::axpy(&mut w, 1.0, &instance.mixing.col(j));
            let w = numerics::normalized(&w)?;
            let st = crate::objective::lagrangian_state(&obj, &sphere, &w)?;
            out.push(st.min_restricted_curvature()?);
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// stability model

/// The single-component ICA problem for the stability harness: empirical
/// tensors with mean downdates for the leave-one-out solves, projected
/// descent ERM warm-started at the full-sample solution.
pub struct IcaModel {
    instance: IcaInstance,
    z: SymTensor4,
    solver: SolverConfig,
}

impl IcaModel {
    pub fn new(instance: IcaInstance, solver: SolverConfig) -> Result<Self> {
        let z = make_z(instance.dim())?;
        Ok(IcaModel { instance, z, solver })
    }

    pub fn instance(&self) -> &IcaInstance {
        &self.instance
    }

    /// Empirical tensor of the sample with datum i removed, via the mean
    /// downdate T_{-i} = T + (y_i^{x4} - mean y^{x4}) / (2(n-1)).
    fn downdate(&self, t: &SymTensor4, sample: &[Vec<f64>], i: usize) -> SymTensor4 {
        let n = sample.len() as f64;
        // T = (Z - M)/2 with M the sample mean of y^{x4}; removing y_i gives
        // M_{-i} = (n M - y_i^{x4})/(n-1), i.e.
        // T_{-i} = T n/(n-1) - Z/(2(n-1)) + y_i^{x4}/(2(n-1))
        let mut out = t.scaled(n / (n - 1.0));
        out.add_scaled(-0.5 / (n - 1.0), &self.z);
        out.add_scaled_rank_one(0.5 / (n - 1.0), &sample[i]);
        out
    }
}

impl crate::stability::StabilityModel for IcaModel {
    fn dim(&self) -> usize {
        self.instance.dim()
    }

    fn symmetry(&self) -> crate::stability::Symmetry {
        // the warm-started leave-one-out solves stay in the basin of the
        // full-sample component, so only the sign ambiguity needs fixing
        crate::stability::Symmetry::SignFlip
    }

    fn constants(&self) -> LossConstants {
        tensor_constants(self.instance.dim())
    }

    fn draw(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        sample_ica(&self.instance, n, rng)
    }

    fn fit(&self, sample: &[Vec<f64>]) -> Result<crate::stability::TrialFit> {
        use rayon::prelude::*;
        let n = sample.len();
        let d = self.dim();
        let sphere = crate::objective::UnitSphere::new(d);
        let t_hat = empirical_tensor(sample, &self.z)?;
        let obj = TensorObjective::new(t_hat.clone());

        let mut best: Option<(f64, Vec<f64>)> = None;
        let mut last_err = None;
        for restart in 0..=self.solver.restarts {
            let mut rng = crate::certifier::point_rng(self.solver.seed, restart);
            let w0 = numerics::random_unit(d, &mut rng);
            match sphere_pgd(&obj, &sphere, &w0, &self.solver) {
                Ok(w) => {
                    let v = obj.value(&w);
                    if best.as_ref().map_or(true, |(bv, _)| v < *bv) {
                        best = Some((v, w));
                    }
                }
                Err(e) => last_err = Some(e),
            }
        }
        let hat_w = canonical_sign(
            best.ok_or_else(|| last_err.expect("at least one restart ran"))?.1,
        );

        let per_index: Vec<(Vec<f64>, f64, f64, f64)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let t_i = self.downdate(&t_hat, sample, i);
                let obj_i = TensorObjective::new(t_i);
                let w_i = sphere_pgd(&obj_i, &sphere, &hat_w, &self.solver)
                    .map_err(|e| Error::SolveAt { index: i, source: Box::new(e) })?;
                let w_i = crate::stability::align_minimizer(
                    &w_i,
                    &hat_w,
                    crate::stability::Symmetry::SignFlip,
                );
                let risk = obj.value(&w_i);
                let st = crate::objective::lagrangian_state(&obj, &sphere, &w_i)?;
                let curv = st.min_restricted_curvature()?;
                Ok((w_i, risk, st.gradient_norm(), curv))
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
        Ok(crate::stability::TrialFit {
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
        -0.5 * (self.z.eval(w) - s * s * s * s)
    }

    fn population_risk(&self, w: &[f64]) -> f64 {
        -self.instance.tensor().eval(w)
    }

    fn population_min(&self) -> f64 {
        -1.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{norm, normalized, sub, unit};
    use rand::SeedableRng;

    fn assert_near(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    #[test]
    fn z_tensor_entries() {
        let z = make_z(1).unwrap();
        assert_near(z.get(0, 0, 0, 0), 3.0, 0.0);
        let z = make_z(2).unwrap();
        assert_near(z.get(0, 0, 0, 0), 3.0, 0.0);
        assert_near(z.get(1, 1, 1, 1), 3.0, 0.0);
        for p in [
            (0, 0, 1, 1), (0, 1, 1, 0), (0, 1, 0, 1),
            (1, 1, 0, 0), (1, 0, 0, 1), (1, 0, 1, 0),
        ] {
            assert_near(z.get(p.0, p.1, p.2, p.3), 1.0, 0.0);
        }
        assert_near(z.get(0, 0, 0, 1), 0.0, 0.0);
        let z = make_z(3).unwrap();
        assert_near(z.get(0, 1, 2, 0), 0.0, 0.0);
        assert_near(z.get(2, 0, 0, 2), 1.0, 0.0);
    }

    #[test]
    fn symmetry_spot_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let inst = IcaInstance::random(4, 2).unwrap();
        let sample = sample_ica(&inst, 50, &mut rng);
        let t = empirical_tensor(&sample, &make_z(4).unwrap()).unwrap();
        for _ in 0..1000 {
            let idx: Vec<usize> = (0..4).map(|_| rng.gen_range(0..4)).collect();
            let v = t.get(idx[0], idx[1], idx[2], idx[3]);
            for p in permutations_of([idx[0], idx[1], idx[2], idx[3]]) {
                assert_near(t.get(p[0], p[1], p[2], p[3]), v, 1e-12);
            }
        }
    }

    #[test]
    fn tensor_dim_cap() {
        assert!(matches!(SymTensor4::zeros(17), Err(Error::TensorDimCap { .. })));
        assert!(SymTensor4::zeros(16).is_ok());
    }

    #[test]
    fn sample_properties() {
        let inst = IcaInstance::new(Mat::identity(2)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for y in sample_ica(&inst, 50, &mut rng) {
            assert_near(y[0].abs(), 1.0, 0.0);
            assert_near(y[1].abs(), 1.0, 0.0);
        }
        let inst = IcaInstance::random(3, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for y in sample_ica(&inst, 50, &mut rng) {
            // orthonormal mixing preserves the norm of the sign vector
            assert_near(numerics::dot(&y, &y), 3.0, 1e-12);
        }
        // exhaustive mean is exactly zero by sign symmetry
        let all = exhaustive_ica_sample(&inst);
        let mut mean = vec![0.0; 3];
        for y in &all {
            numerics::axpy(&mut mean, 1.0 / all.len() as f64, y);
        }
        assert!(norm(&mean) <= 1e-14);
    }

    #[test]
    fn exhaustive_identity_basis() {
        // d = 2, A = I: the exhaustive expectation gives exactly
        // e1^{x4} + e2^{x4}
        let inst = IcaInstance::new(Mat::identity(2)).unwrap();
        let t = empirical_tensor(&exhaustive_ica_sample(&inst), &make_z(2).unwrap())
            .unwrap();
        assert_near(t.get(0, 0, 0, 0), 1.0, 0.0);
        assert_near(t.get(1, 1, 1, 1), 1.0, 0.0);
        assert_near(t.get(0, 0, 1, 1), 0.0, 0.0);
        assert_near(t.get(0, 1, 0, 1), 0.0, 0.0);
        // d = 1: single entry (3 - 1)/2 = 1
        let inst = IcaInstance::new(Mat::identity(1)).unwrap();
        let t = empirical_tensor(&exhaustive_ica_sample(&inst), &make_z(1).unwrap())
            .unwrap();
        assert_near(t.get(0, 0, 0, 0), 1.0, 0.0);
    }

    #[test]
    fn exhaustive_identity_random_bases() {
        for d in 2..=5 {
            for s in 0..3 {
                let inst = IcaInstance::random(d, 100 + s).unwrap();
                let t = empirical_tensor(
                    &exhaustive_ica_sample(&inst),
                    &make_z(d).unwrap(),
                )
                .unwrap();
                let err = t.max_abs_diff(inst.tensor());
                assert!(err <= 1e-10, "d = {d}, seed {s}: max entry error {err}");
            }
        }
    }

    #[test]
    fn multilinear_examples() {
        let t = exact_component_tensor(&Mat::identity(3)).unwrap();
        assert_near(multilinear_eval(&t, &unit(0, 3)).unwrap(), 1.0, 0.0);
        let g = multilinear_grad(&t, &unit(0, 3)).unwrap();
        assert_near(g[0], 4.0, 0.0);
        assert_near(g[1], 0.0, 0.0);
        let u = normalized(&[1.0, 1.0, 0.0]).unwrap();
        assert_near(multilinear_eval(&t, &u).unwrap(), 0.5, 1e-14);
        assert!(multilinear_eval(&t, &[1.0]).is_err());
    }

    #[test]
    fn multilinear_grad_matches_finite_differences() {
        let inst = IcaInstance::random(3, 7).unwrap();
        let t = inst.tensor();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..10 {
            let u = numerics::random_unit(3, &mut rng);
            let g = multilinear_grad(t, &u).unwrap();
            let fd = crate::objective::fd_gradient(&|w| t.eval(w), &u, 1e-6);
            assert!(norm(&sub(&g, &fd)) <= 1e-6, "{g:?} vs {fd:?}");
        }
    }

    #[test]
    fn per_datum_mean_equals_negated_tensor() {
        let inst = IcaInstance::random(3, 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let sample = sample_ica(&inst, 40, &mut rng);
        let obj = tensor_objective(sample.clone()).unwrap();
        let t = empirical_tensor(&sample, &make_z(3).unwrap()).unwrap();
        for _ in 0..100 {
            let u = numerics::random_unit(3, &mut rng);
            assert_near(obj.value(&u), -t.eval(&u), 1e-10);
        }
    }

    #[test]
    fn exact_component_is_stationary_minimum() {
        let inst = IcaInstance::random(4, 11).unwrap();
        let obj = TensorObjective::new(inst.tensor().clone());
        let sphere = crate::objective::UnitSphere::new(4);
        for k in 0..4 {
            let a_k = inst.mixing().col(k);
            assert_near(obj.value(&a_k), -1.0, 1e-12);
            let st = crate::objective::lagrangian_state(&obj, &sphere, &a_k).unwrap();
            assert!(st.gradient_norm() <= 1e-10);
            assert!(st.min_restricted_curvature().unwrap() > 0.0);
        }
    }

    #[test]
    fn tensor_loss_passes_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let loss = TensorDatumLoss::new(Arc::new(make_z(3).unwrap()));
        let inst = IcaInstance::random(3, 13).unwrap();
        let ys = sample_ica(&inst, 5, &mut rng);
        for y in &ys {
            let u = numerics::random_unit(3, &mut rng);
            crate::objective::validate_datum_loss(&loss, &u, y).unwrap();
        }
    }

    #[test]
    fn deflation_examples() {
        let t = exact_component_tensor(&Mat::identity(2)).unwrap();
        let d1 = deflate(&t, &unit(0, 2)).unwrap();
        assert_near(d1.get(0, 0, 0, 0), 0.0, 0.0);
        assert_near(d1.get(1, 1, 1, 1), 1.0, 0.0);
        // deflating every exact component telescopes to zero
        let inst = IcaInstance::random(4, 14).unwrap();
        let mut t = inst.tensor().clone();
        for k in 0..4 {
            t = deflate(&t, &inst.mixing().col(k)).unwrap();
        }
        assert!(t.max_abs_entry() <= 1e-12);
        assert!(deflate(&t, &[0.5, 0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn recover_exact_tensor() {
        let inst = IcaInstance::random(4, 15).unwrap();
        let config = SolverConfig { seed: 16, ..SolverConfig::default() };
        let a_hat = recover_from_tensor(inst.tensor(), &config).unwrap();
        let err = match_error(&a_hat, inst.mixing()).unwrap();
        assert!(err <= 1e-6, "match error {err}");
    }

    #[test]
    fn recover_one_dimensional() {
        let inst = IcaInstance::new(Mat::identity(1)).unwrap();
        let config = SolverConfig { seed: 17, ..SolverConfig::default() };
        let a_hat = recover_from_tensor(inst.tensor(), &config).unwrap();
        assert_near(a_hat.get(0, 0).abs(), 1.0, 1e-9);
    }

    fn all_permutations(d: usize) -> Vec<Vec<usize>> {
        if d == 1 {
            return vec![vec![0]];
        }
        let mut out = vec![];
        for p in all_permutations(d - 1) {
            for pos in 0..d {
                let mut q: Vec<usize> = p.clone();
                q.insert(pos, d - 1);
                out.push(q);
            }
        }
        out
    }

    #[test]
    fn greedy_matching_agrees_with_brute_force() {
        // near-orthonormal perturbed copies: greedy equals the optimal
        // assignment over all signed permutations
        for seed in 0..5 {
            let inst = IcaInstance::random(4, 300 + seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
            let cols: Vec<Vec<f64>> = (0..4)
                .map(|k| {
                    let mut c = inst.mixing().col(3 - k);
                    let noise = numerics::random_unit(4, &mut rng);
                    numerics::axpy(&mut c, 0.01, &noise);
                    let c = normalized(&c).unwrap();
                    if rng.gen::<bool>() {
                        numerics::scale(&c, -1.0)
                    } else {
                        c
                    }
                })
                .collect();
            let a_hat = Mat::from_columns(4, cols);
            let greedy = match_error(&a_hat, inst.mixing()).unwrap();
            let mut best = f64::INFINITY;
            for p in all_permutations(4) {
                let mut worst = 0.0f64;
                for (i, &j) in p.iter().enumerate() {
                    let dot = numerics::dot(&a_hat.col(i), &inst.mixing().col(j)).abs();
                    let h = numerics::dot(&a_hat.col(i), &a_hat.col(i));
                    worst = worst.max(((h + 1.0 - 2.0 * dot).max(0.0)).sqrt());
                }
                best = best.min(worst);
            }
            assert_near(greedy, best, 1e-12);
        }
    }

    #[test]
    fn near_minimum_points_satisfy_lower_bound() {
        for d in 3..=8 {
            let th = near_minimum_thresholds(d);
            let points = sample_near_minimum_points(d, 50, 500 + d as u64);
            for p in &points {
                let r = p.check().unwrap();
                assert!(r.grad_norm <= th.tau);
                assert_eq!(r.support_size, 1, "support must be the dominant index");
                assert!(
                    r.lower_slack >= 0.0,
                    "d = {d}: excess {} vs dist^2/4 {}",
                    r.excess,
                    r.dist_sq / 4.0
                );
                // excess and squared distance agree to leading order 2q vs q
                assert!(r.excess >= 0.25 * r.dist_sq);
                assert!(r.upper_ratio.is_finite());
            }
        }
    }

    #[test]
    fn near_minimum_check_rejects_far_points() {
        let d = 3;
        let mut small = vec![0.0; d];
        small[1] = 1e-3; // far above the admissible radius
        let p = NearMinimumPoint { dominant: 0, sign: 1.0, small };
        assert!(matches!(p.check(), Err(Error::NotAdmissible { .. })));
    }

    #[test]
    fn support_and_thresholds() {
        let th = near_minimum_thresholds(3);
        assert_near(th.tau0, 30f64.powi(-4), 1e-20);
        assert_near(th.tau, 4.0 * 30f64.powi(-8), 1e-24);
        assert_near(th.radius, 6.0 * 30f64.powi(-4), 1e-18);
        let v = vec![0.9, th.tau0 / 2.0, -2.0 * th.tau0];
        assert_eq!(support(&v, th.tau0), vec![0, 2]);
    }

    #[test]
    fn balanced_saddles_have_strong_negative_curvature() {
        for d in 2..=5 {
            let inst = IcaInstance::random(d, 600 + d as u64).unwrap();
            for curv in balanced_saddle_curvatures(&inst).unwrap() {
                // measured -4 dominates the -7/d guarantee for all d >= 2
                assert!(curv <= -7.0 / d as f64, "d = {d}: curvature {curv}");
                assert_near(curv, -4.0, 1e-8);
            }
        }
    }

    #[test]
    fn empirical_tensor_error_decays() {
        let inst = IcaInstance::random(4, 19).unwrap();
        let z = make_z(4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let mut errs = vec![];
        for &n in &[100usize, 1000, 10000] {
            let sample = sample_ica(&inst, n, &mut rng);
            let t = empirical_tensor(&sample, &z).unwrap();
            errs.push(t.max_abs_diff(inst.tensor()));
        }
        assert!(errs[2] < errs[0], "errors not decreasing: {errs:?}");
    }

    #[test]
    fn downdate_matches_direct_recomputation() {
        let inst = IcaInstance::random(3, 21).unwrap();
        let model = IcaModel::new(
            IcaInstance::random(3, 21).unwrap(),
            SolverConfig::default(),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let sample = sample_ica(&inst, 10, &mut rng);
        let z = make_z(3).unwrap();
        let t = empirical_tensor(&sample, &z).unwrap();
        for i in 0..sample.len() {
            let reduced: Vec<Vec<f64>> = sample
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, y)| y.clone())
                .collect();
            let direct = empirical_tensor(&reduced, &z).unwrap();
            let down = model.downdate(&t, &sample, i);
            assert!(direct.max_abs_diff(&down) <= 1e-12);
        }
    }

    #[test]
    fn ica_stability_trial_runs() {
        let model = IcaModel::new(
            IcaInstance::random(3, 23).unwrap(),
            SolverConfig { grad_tol: 1e-9, seed: 24, ..SolverConfig::default() },
        )
        .unwrap();
        let r = crate::stability::run_trial(&model, 30, 25).unwrap();
        assert!(r.delta_mean >= -1e-8);
        assert!(r.excess_risk >= -1e-10);
        for i in 0..r.n {
            assert!(r.delta_terms[i] >= r.n as f64 * r.femp_diffs[i] - 1e-8);
        }
    }
}
