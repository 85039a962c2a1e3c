//! Runnable experiments shared by the command-line runner and the
//! acceptance suite: each takes a typed config, runs deterministically from
//! its seed, and returns an outcome carrying both the measured data and a
//! list of named pass/fail checks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::io::Write;

use crate::certifier::{
    certify_region, estimate_saddle_params, CertificationReport, SaddleParams,
};
use crate::config::{Experiment, Settings};
use crate::ica::{
    balanced_saddle_curvatures, empirical_tensor, make_z, match_error, recover_components,
    recover_from_tensor, sample_ica, sample_near_minimum_points, IcaInstance, IcaModel,
};
use crate::numerics::{self, SymMatrix};
use crate::objective::UnitSphere;
use crate::pca::{
    empirical_correlation, gen_pca_distribution, sample_admissible, NearStationaryBranch,
    NearStationaryClassifier, PcaModel,
};
use crate::solvers::SolverConfig;
use crate::stability::{
    stability_sweep, write_records_jsonl, write_table_csv, StabilityModel, StabilityReport,
    Symmetry, CHAIN_TOL,
};
use crate::{Error, Result};

/// One named pass/fail check with a human-readable detail line.
#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &str, passed: bool, detail: String) -> Check {
    Check { name: name.to_string(), passed, detail }
}

pub fn all_passed(checks: &[Check]) -> bool {
    checks.iter().all(|c| c.passed)
}

fn mix_seed(root: u64, tag: u64) -> u64 {
    let mut x = root ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    x ^= x >> 30;
    x = x.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x ^= x >> 31;
    x
}

/// Default covariance spectrum: leading eigenvalue 0.40, second 0.10 (gap
/// 0.30), then a geometric tail keeping the total at most 1 so the data
/// distribution fits in the unit ball.
pub fn default_pca_spectrum(d: usize) -> Vec<f64> {
    assert!(d >= 2);
    let mut v = vec![0.40, 0.10];
    let mut next = 0.05;
    while v.len() < d {
        v.push(next);
        next *= 0.5;
    }
    v
}

// ===========================================================================
// certify

#[derive(Clone, Debug)]
pub struct CertifyConfig {
    pub d: usize,
    pub eigenvalues: Vec<f64>,
    pub points: usize,
    pub estimate_points: usize,
    pub seed: u64,
}

impl CertifyConfig {
    pub fn from_settings(s: &Settings) -> Result<Self> {
        Ok(CertifyConfig {
            d: s.usize_of("d")?,
            eigenvalues: s.f64_list("eigenvalues")?,
            points: s.usize_of("points")?,
            estimate_points: s.usize_of("estimate_points")?,
            seed: s.u64_of("seed")?,
        })
    }
}

#[derive(Debug, Serialize)]
pub struct CertifyOutcome {
    pub params: SaddleParams,
    pub report: CertificationReport,
    pub checks: Vec<Check>,
}

/// Estimate strict-saddle parameters for the population PCA objective on
/// the sphere, then certify a fresh batch of sampled points against them.
pub fn run_certify(cfg: &CertifyConfig) -> Result<CertifyOutcome> {
    if cfg.d < 2 {
        return Err(Error::InvalidConfig("certify needs d >= 2".into()));
    }
    if cfg.points == 0 || cfg.estimate_points == 0 {
        return Err(Error::InvalidConfig("point counts must be positive".into()));
    }
    let eigenvalues = if cfg.eigenvalues.is_empty() {
        default_pca_spectrum(cfg.d)
    } else {
        cfg.eigenvalues.clone()
    };
    let dist = gen_pca_distribution(cfg.d, eigenvalues, cfg.seed)?;
    let obj = crate::pca::PcaReducedObjective::new(dist.sigma().clone());
    let sphere = UnitSphere::new(cfg.d);
    let leading = dist.leading();
    let minima = vec![leading.clone(), numerics::scale(&leading, -1.0)];
    let sampler =
        |rng: &mut ChaCha8Rng| numerics::random_unit(obj.matrix().dim(), rng);

    let estimated = estimate_saddle_params(
        &obj,
        &sphere,
        &sampler,
        cfg.estimate_points,
        &minima,
        Symmetry::SignFlip,
        mix_seed(cfg.seed, 1),
    )?;
    // certify against a uniformly shrunk copy of the estimate: scaling
    // (tau, gamma, alpha) down weakens every regime condition monotonically,
    // giving the out-of-sample margin the raw empirical maximizer lacks
    let params = SaddleParams {
        tau: 0.5 * estimated.tau,
        gamma: 0.5 * estimated.gamma,
        alpha: 0.5 * estimated.alpha,
        nu: estimated.nu,
    };
    let report = certify_region(
        &obj,
        &sphere,
        &params,
        &sampler,
        cfg.points,
        &minima,
        Symmetry::SignFlip,
        mix_seed(cfg.seed, 2),
    )?;
    let covered = report.large_gradient + report.negative_curvature + report.strongly_convex;
    let checks = vec![
        check(
            "certified",
            report.certified(),
            format!(
                "{} / {} points classified ({} counterexamples)",
                covered,
                report.samples,
                report.counterexamples.len()
            ),
        ),
        check(
            "positive-parameters",
            params.tau > 0.0 && params.gamma > 0.0 && params.alpha > 0.0,
            format!(
                "tau = {:.3e}, gamma = {:.3e}, alpha = {:.3e}",
                params.tau, params.gamma, params.alpha
            ),
        ),
    ];
    Ok(CertifyOutcome { params, report, checks })
}

impl CertifyOutcome {
    pub fn write_records(&self, mut w: impl Write) -> Result<()> {
        for ce in &self.report.counterexamples {
            serde_json::to_writer(&mut w, ce)
                .map_err(|e| Error::InvalidInput(format!("serialization failed: {e}")))?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn write_summary(&self, mut w: impl Write) -> Result<()> {
        writeln!(
            w,
            "samples,large_gradient,negative_curvature,strongly_convex,counterexamples,tau,gamma,alpha"
        )?;
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            self.report.samples,
            self.report.large_gradient,
            self.report.negative_curvature,
            self.report.strongly_convex,
            self.report.counterexamples.len(),
            self.params.tau,
            self.params.gamma,
            self.params.alpha
        )?;
        Ok(())
    }
}

// ===========================================================================
// stability-pca

#[derive(Clone, Debug)]
pub struct PcaStabilityConfig {
    pub d: usize,
    pub eigenvalues: Vec<f64>,
    pub n_values: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
}

impl PcaStabilityConfig {
    pub fn from_settings(s: &Settings) -> Result<Self> {
        Ok(PcaStabilityConfig {
            d: s.usize_of("d")?,
            eigenvalues: s.f64_list("eigenvalues")?,
            n_values: s.usize_list("n_values")?,
            trials: s.usize_of("trials")?,
            seed: s.u64_of("seed")?,
        })
    }
}

/// Outcome of the inequality-chain audit over gap-event trials: the
/// strong-convexity constant is instantiated per trial as half the
/// empirical eigengap of that trial's correlation matrix, which is the
/// exact curvature of the trial's own objective at its minimizer.
#[derive(Debug, Serialize)]
pub struct ChainAudit {
    pub pairs: usize,
    pub violations: Vec<String>,
}

/// Outcome of the stationarity-exclusion audit: above the sample-size
/// threshold n > max(rho/tau, beta1/gamma) no leave-one-out minimizer may
/// sit in the large-gradient or negative-curvature regime of the
/// full-sample objective, and each must be rho/n-stationary.
#[derive(Debug, Serialize)]
pub struct ExclusionAudit {
    pub params: SaddleParams,
    pub threshold_n: f64,
    pub checked: usize,
    pub regime_failures: usize,
    pub grad_failures: usize,
}

#[derive(Debug, Serialize)]
pub struct PcaStabilityOutcome {
    pub gap: f64,
    pub rho: f64,
    /// Strong-convexity constant used for the aggregate bound: half the
    /// population eigengap.
    pub alpha: f64,
    pub report: StabilityReport,
    pub chain: ChainAudit,
    pub exclusion: ExclusionAudit,
    pub checks: Vec<Check>,
}

/// Additional stationarity slack granted to the exact eigensolver.
const EIG_SOLVER_TOL: f64 = 1e-9;

pub fn run_stability_pca(cfg: &PcaStabilityConfig) -> Result<PcaStabilityOutcome> {
    if cfg.d < 2 {
        return Err(Error::InvalidConfig("stability-pca needs d >= 2".into()));
    }
    if cfg.n_values.is_empty() || cfg.n_values.iter().any(|&n| n < 2) {
        return Err(Error::InvalidConfig("n_values must all be >= 2".into()));
    }
    if cfg.trials < 2 {
        return Err(Error::InvalidConfig("trials must be >= 2".into()));
    }
    let eigenvalues = if cfg.eigenvalues.is_empty() {
        default_pca_spectrum(cfg.d)
    } else {
        cfg.eigenvalues.clone()
    };
    let dist = gen_pca_distribution(cfg.d, eigenvalues, cfg.seed)?;
    let gap = dist.gap();
    let alpha = gap / 2.0;
    let model = PcaModel::new(dist);
    let constants = model.constants();
    let rho = constants.rho;

    let report = stability_sweep(&model, &cfg.n_values, cfg.trials, cfg.seed, Some(alpha))?;

    // --- saddle parameters of the population objective, for the exclusion
    // threshold
    let obj = crate::pca::PcaReducedObjective::new(model.distribution().sigma().clone());
    let sphere = UnitSphere::new(cfg.d);
    let leading = model.distribution().leading();
    let minima = vec![leading.clone(), numerics::scale(&leading, -1.0)];
    let params = estimate_saddle_params(
        &obj,
        &sphere,
        &|rng: &mut ChaCha8Rng| numerics::random_unit(cfg.d, rng),
        400,
        &minima,
        Symmetry::SignFlip,
        mix_seed(cfg.seed, 3),
    )?;
    let threshold_n = (rho / params.tau).max(constants.beta1 / params.gamma);

    // --- per-trial audits
    let mut chain = ChainAudit { pairs: 0, violations: vec![] };
    let mut exclusion = ExclusionAudit {
        params,
        threshold_n,
        checked: 0,
        regime_failures: 0,
        grad_failures: 0,
    };
    for r in &report.records {
        if r.gap_event == Some(true) {
            // re-derive the trial's correlation matrix from its seed to get
            // the empirical eigengap
            let mut rng = ChaCha8Rng::seed_from_u64(r.seed);
            let sample = model.draw(r.n, &mut rng);
            let a = empirical_correlation(&sample)?;
            let eig = numerics::sym_eig(&a)?;
            let alpha_trial = (eig.values[0] - eig.values[1]).max(0.0) / 2.0;
            for i in 0..r.n {
                chain.pairs += 1;
                let lip = rho * r.dists[i] - r.delta_terms[i];
                if lip < -CHAIN_TOL {
                    chain.violations.push(format!(
                        "n={} seed={} i={i}: delta_i > rho dist_i by {lip:e}",
                        r.n, r.seed
                    ));
                }
                let sub = r.delta_terms[i] / r.n as f64 - r.femp_diffs[i];
                if sub < -CHAIN_TOL {
                    chain.violations.push(format!(
                        "n={} seed={} i={i}: femp_diff_i > delta_i/n by {sub:e}",
                        r.n, r.seed
                    ));
                }
                let sc = r.femp_diffs[i] - 0.5 * alpha_trial * r.dists[i] * r.dists[i];
                if sc < -CHAIN_TOL {
                    chain.violations.push(format!(
                        "n={} seed={} i={i}: femp_diff_i < (alpha/2) dist_i^2 by {sc:e}",
                        r.n, r.seed
                    ));
                }
            }
        }
        if (r.n as f64) > threshold_n {
            for i in 0..r.n {
                exclusion.checked += 1;
                // the first two regimes of the classifier are exactly these
                // threshold comparisons on the full-sample Lagrangian state
                if r.loo_grad_norms[i] >= exclusion.params.tau
                    || r.loo_min_curvatures[i] <= -exclusion.params.gamma
                {
                    exclusion.regime_failures += 1;
                }
                if r.loo_grad_norms[i] > rho / r.n as f64 + EIG_SOLVER_TOL {
                    exclusion.grad_failures += 1;
                }
            }
        }
    }

    // --- named checks
    let mut checks = vec![];
    let mut fast_ok = true;
    let mut fast_detail = String::new();
    for a in &report.aggregates {
        if a.gap_frequency.unwrap_or(0.0) >= 0.95 {
            let bound = a.bound_gap.expect("pca model has an eigengap");
            let ok = a.mean_delta <= bound;
            fast_ok &= ok;
            fast_detail.push_str(&format!(
                "n={}: mean delta {:.3e} vs 4/(nG) {:.3e}{}; ",
                a.n,
                a.mean_delta,
                bound,
                if ok { "" } else { " VIOLATED" }
            ));
        } else {
            fast_detail.push_str(&format!(
                "n={}: gap frequency {:.2} < 0.95, bound not applicable; ",
                a.n,
                a.gap_frequency.unwrap_or(0.0)
            ));
        }
    }
    checks.push(check("fast-rate-bound", fast_ok, fast_detail));

    let slope = report.rate_slope;
    checks.push(check(
        "rate-slope",
        slope.map_or(false, |s| (-1.2..=-0.8).contains(&s)),
        format!("log-log slope of mean delta vs n: {slope:?} (required [-1.2, -0.8])"),
    ));

    let mut agree_ok = true;
    let mut agree_detail = String::new();
    for a in &report.aggregates {
        let diff = (a.mean_gen_gap - a.mean_delta).abs();
        let band = 3.0 * (a.se_gen_gap * a.se_gen_gap + a.se_delta * a.se_delta).sqrt();
        let ok = diff <= band;
        agree_ok &= ok;
        agree_detail.push_str(&format!(
            "n={}: |gen-stab| {:.3e} vs 3se {:.3e}{}; ",
            a.n,
            diff,
            band,
            if ok { "" } else { " VIOLATED" }
        ));
    }
    checks.push(check("generalization-equals-stability", agree_ok, agree_detail));

    checks.push(check(
        "inequality-chain",
        chain.violations.is_empty(),
        format!("{} violations over {} (trial, i) pairs", chain.violations.len(), chain.pairs),
    ));
    checks.push(check(
        "stationarity-exclusion",
        exclusion.regime_failures == 0 && exclusion.grad_failures == 0,
        format!(
            "n > {:.1}: {} checked, {} regime failures, {} gradient failures \
             (tau = {:.3e}, gamma = {:.3e})",
            exclusion.threshold_n,
            exclusion.checked,
            exclusion.regime_failures,
            exclusion.grad_failures,
            exclusion.params.tau,
            exclusion.params.gamma
        ),
    ));

    Ok(PcaStabilityOutcome { gap, rho, alpha, report, chain, exclusion, checks })
}

impl PcaStabilityOutcome {
    pub fn write_records(&self, w: impl Write) -> Result<()> {
        write_records_jsonl(&self.report.records, w)
    }

    pub fn write_summary(&self, w: impl Write) -> Result<()> {
        write_table_csv(
            &self.report.records,
            self.rho,
            Some(self.alpha),
            Some(self.gap),
            w,
        )
    }
}

// ===========================================================================
// stability-ica

#[derive(Clone, Debug)]
pub struct IcaStabilityConfig {
    pub d: usize,
    pub n_values: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
    pub solver: SolverConfig,
}

impl IcaStabilityConfig {
    pub fn from_settings(s: &Settings) -> Result<Self> {
        let seed = s.u64_of("seed")?;
        Ok(IcaStabilityConfig {
            d: s.usize_of("d")?,
            n_values: s.usize_list("n_values")?,
            trials: s.usize_of("trials")?,
            seed,
            solver: SolverConfig {
                grad_tol: s.f64_of("grad_tol")?,
                max_iters: s.usize_of("max_iters")?,
                restarts: s.usize_of("restarts")?,
                seed: mix_seed(seed, 11),
                ..SolverConfig::default()
            },
        })
    }
}

#[derive(Debug, Serialize)]
pub struct IcaStabilityOutcome {
    pub rho: f64,
    pub report: StabilityReport,
    pub checks: Vec<Check>,
}

pub fn run_stability_ica(cfg: &IcaStabilityConfig) -> Result<IcaStabilityOutcome> {
    if cfg.d < 2 {
        return Err(Error::InvalidConfig("stability-ica needs d >= 2".into()));
    }
    if cfg.n_values.is_empty() || cfg.n_values.iter().any(|&n| n < 2) {
        return Err(Error::InvalidConfig("n_values must all be >= 2".into()));
    }
    if cfg.trials < 2 {
        return Err(Error::InvalidConfig("trials must be >= 2".into()));
    }
    let instance = IcaInstance::random(cfg.d, mix_seed(cfg.seed, 10))?;
    let model = IcaModel::new(instance, cfg.solver.clone())?;
    let rho = model.constants().rho;
    let report = stability_sweep(&model, &cfg.n_values, cfg.trials, cfg.seed, None)?;

    // the model-free chain links hold for any ERM pair regardless of
    // curvature assumptions
    let mut pairs = 0usize;
    let mut violations = 0usize;
    for r in &report.records {
        for i in 0..r.n {
            pairs += 1;
            if rho * r.dists[i] - r.delta_terms[i] < -CHAIN_TOL {
                violations += 1;
            }
            if r.delta_terms[i] / r.n as f64 - r.femp_diffs[i] < -CHAIN_TOL {
                violations += 1;
            }
        }
    }
    let checks = vec![
        check(
            "inequality-chain",
            violations == 0,
            format!("{violations} violations over {pairs} (trial, i) pairs"),
        ),
        check(
            "nonnegative-excess",
            report.records.iter().all(|r| r.excess_risk >= -1e-9),
            "population excess risk of the fitted component".into(),
        ),
    ];
    Ok(IcaStabilityOutcome { rho, report, checks })
}

impl IcaStabilityOutcome {
    pub fn write_records(&self, w: impl Write) -> Result<()> {
        write_records_jsonl(&self.report.records, w)
    }

    pub fn write_summary(&self, w: impl Write) -> Result<()> {
        write_table_csv(&self.report.records, self.rho, None, None, w)
    }
}

// ===========================================================================
// near-stationary (PCA classifier sweep)

#[derive(Clone, Debug)]
pub struct NearStationaryConfig {
    pub d: usize,
    pub spectra: usize,
    pub points: usize,
    pub c: f64,
    pub min_gap: f64,
    pub seed: u64,
}

impl NearStationaryConfig {
    pub fn from_settings(s: &Settings) -> Result<Self> {
        Ok(NearStationaryConfig {
            d: s.usize_of("d")?,
            spectra: s.usize_of("spectra")?,
            points: s.usize_of("points")?,
            c: s.f64_of("c")?,
            min_gap: s.f64_of("min_gap")?,
            seed: s.u64_of("seed")?,
        })
    }
}

#[derive(Debug, Serialize)]
pub struct SpectrumSummary {
    pub spectrum: usize,
    pub gap: f64,
    pub tau: f64,
    pub points: usize,
    pub strongly_convex: usize,
    pub strict_saddle: usize,
    pub failures: usize,
    pub min_slack: f64,
    pub max_identity_error: f64,
}

#[derive(Debug, Serialize)]
pub struct PointRow {
    pub spectrum: usize,
    pub branch: NearStationaryBranch,
    pub grad_norm: f64,
    pub min_slack: f64,
    pub identity_error: f64,
    pub curvature: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct NearStationaryOutcome {
    pub summaries: Vec<SpectrumSummary>,
    pub rows: Vec<PointRow>,
    pub checks: Vec<Check>,
}

/// Random spectrum with a leading gap of at least `min_gap` and total mass
/// at most 1 (so the matching data distribution fits the unit ball).
fn random_gapped_spectrum(d: usize, min_gap: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    use rand::Rng;
    let l1: f64 = rng.gen_range(0.45..0.60);
    let gap: f64 = rng.gen_range(min_gap..min_gap + 0.1);
    let l2 = l1 - gap;
    let mut v = vec![l1, l2];
    let budget = (1.0 - l1 - l2).max(0.0);
    let mut tail: Vec<f64> = (0..d.saturating_sub(2))
        .map(|k| l2 * 0.5f64.powi(k as i32 + 1))
        .collect();
    let tail_sum: f64 = tail.iter().sum();
    if tail_sum > budget {
        let f = 0.999 * budget / tail_sum;
        for t in &mut tail {
            *t *= f;
        }
    }
    v.extend(tail);
    v
}

pub fn run_near_stationary(cfg: &NearStationaryConfig) -> Result<NearStationaryOutcome> {
    if cfg.d < 2 || cfg.spectra == 0 || cfg.points == 0 {
        return Err(Error::InvalidConfig(
            "near-stationary needs d >= 2 and positive spectra / points".into(),
        ));
    }
    if !(0.0..1.0 / 32.0).contains(&cfg.c) || cfg.c <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "c must lie in (0, 1/32), got {}",
            cfg.c
        )));
    }
    let per_spectrum = cfg.points.div_ceil(cfg.spectra);
    let mut summaries = vec![];
    let mut rows = vec![];
    for s in 0..cfg.spectra {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 20 + s as u64));
        let spectrum = random_gapped_spectrum(cfg.d, cfg.min_gap, &mut rng);
        let q = numerics::random_orthonormal(cfg.d, &mut rng)?;
        let a = q.conjugate_sym(&SymMatrix::diagonal(&spectrum));
        let cls = NearStationaryClassifier::new(&a, cfg.c)?;
        let points =
            sample_admissible(&a, cfg.c, per_spectrum, mix_seed(cfg.seed, 50 + s as u64))?;
        let mut summary = SpectrumSummary {
            spectrum: s,
            gap: cls.gap,
            tau: cls.tau,
            points: points.len(),
            strongly_convex: 0,
            strict_saddle: 0,
            failures: 0,
            min_slack: f64::INFINITY,
            max_identity_error: 0.0,
        };
        for w in &points {
            let witness = cls.classify(w)?;
            let min_slack = witness
                .slacks
                .iter()
                .map(|s| s.slack)
                .fold(f64::INFINITY, f64::min);
            if witness.ok() {
                match witness.branch {
                    NearStationaryBranch::StronglyConvex => summary.strongly_convex += 1,
                    NearStationaryBranch::StrictSaddle => summary.strict_saddle += 1,
                }
            } else {
                summary.failures += 1;
            }
            summary.min_slack = summary.min_slack.min(min_slack);
            summary.max_identity_error =
                summary.max_identity_error.max(witness.identity_error);
            rows.push(PointRow {
                spectrum: s,
                branch: witness.branch,
                grad_norm: witness.grad_norm,
                min_slack,
                identity_error: witness.identity_error,
                curvature: witness.curvature,
            });
        }
        summaries.push(summary);
    }
    let total: usize = summaries.iter().map(|s| s.points).sum();
    let failures: usize = summaries.iter().map(|s| s.failures).sum();
    let checks = vec![
        check(
            "all-points-classified",
            failures == 0 && total >= cfg.points,
            format!("{failures} failures over {total} admissible points"),
        ),
        check(
            "nonnegative-slacks",
            summaries.iter().all(|s| s.min_slack >= 0.0),
            format!(
                "worst slack {:.3e}",
                summaries.iter().map(|s| s.min_slack).fold(f64::INFINITY, f64::min)
            ),
        ),
    ];
    Ok(NearStationaryOutcome { summaries, rows, checks })
}

impl NearStationaryOutcome {
    pub fn write_records(&self, mut w: impl Write) -> Result<()> {
        for r in &self.rows {
            serde_json::to_writer(&mut w, r)
                .map_err(|e| Error::InvalidInput(format!("serialization failed: {e}")))?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn write_summary(&self, mut w: impl Write) -> Result<()> {
        writeln!(
            w,
            "spectrum,gap,tau,points,strongly_convex,strict_saddle,failures,min_slack,max_identity_error"
        )?;
        for s in &self.summaries {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                s.spectrum,
                s.gap,
                s.tau,
                s.points,
                s.strongly_convex,
                s.strict_saddle,
                s.failures,
                s.min_slack,
                s.max_identity_error
            )?;
        }
        Ok(())
    }
}

// ===========================================================================
// near-minimum (ICA invariants)

#[derive(Clone, Debug)]
pub struct NearMinimumConfig {
    pub d_values: Vec<usize>,
    pub points: usize,
    pub seed: u64,
}

impl NearMinimumConfig {
    pub fn from_settings(s: &Settings) -> Result<Self> {
        Ok(NearMinimumConfig {
            d_values: s.usize_list("d_values")?,
            points: s.usize_of("points")?,
            seed: s.u64_of("seed")?,
        })
    }
}

#[derive(Debug, Serialize)]
pub struct NearMinimumRow {
    pub d: usize,
    pub points: usize,
    pub tau: f64,
    pub max_grad_norm: f64,
    pub min_lower_slack: f64,
    pub support_violations: usize,
    pub worst_saddle_curvature: f64,
    pub curvature_bound: f64,
}

#[derive(Debug, Serialize)]
pub struct NearMinimumOutcome {
    pub rows: Vec<NearMinimumRow>,
    pub checks: Vec<Check>,
}

pub fn run_near_minimum(cfg: &NearMinimumConfig) -> Result<NearMinimumOutcome> {
    if cfg.d_values.is_empty() || cfg.points == 0 {
        return Err(Error::InvalidConfig(
            "near-minimum needs d_values and positive points".into(),
        ));
    }
    if cfg.d_values.iter().any(|&d| d < 2) {
        return Err(Error::InvalidConfig("d_values must all be >= 2".into()));
    }
    let mut rows = vec![];
    for &d in &cfg.d_values {
        let th = crate::ica::near_minimum_thresholds(d);
        let points = sample_near_minimum_points(d, cfg.points, mix_seed(cfg.seed, d as u64));
        let mut row = NearMinimumRow {
            d,
            points: points.len(),
            tau: th.tau,
            max_grad_norm: 0.0,
            min_lower_slack: f64::INFINITY,
            support_violations: 0,
            worst_saddle_curvature: f64::NEG_INFINITY,
            curvature_bound: -7.0 / d as f64,
        };
        for p in &points {
            let r = p.check()?;
            row.max_grad_norm = row.max_grad_norm.max(r.grad_norm);
            row.min_lower_slack = row.min_lower_slack.min(r.lower_slack);
            if r.support_size != 1 {
                row.support_violations += 1;
            }
        }
        let instance = IcaInstance::random(d, mix_seed(cfg.seed, 100 + d as u64))?;
        for c in balanced_saddle_curvatures(&instance)? {
            row.worst_saddle_curvature = row.worst_saddle_curvature.max(c);
        }
        rows.push(row);
    }
    let checks = vec![
        check(
            "basin-lower-bound",
            rows.iter()
                .all(|r| r.min_lower_slack >= 0.0 && r.support_violations == 0),
            format!(
                "worst slack {:.3e}",
                rows.iter().map(|r| r.min_lower_slack).fold(f64::INFINITY, f64::min)
            ),
        ),
        check(
            "saddle-curvature",
            rows.iter().all(|r| r.worst_saddle_curvature <= r.curvature_bound),
            rows.iter()
                .map(|r| {
                    format!("d={}: {:.4} <= {:.4}", r.d, r.worst_saddle_curvature, r.curvature_bound)
                })
                .collect::<Vec<_>>()
                .join("; "),
        ),
    ];
    Ok(NearMinimumOutcome { rows, checks })
}

impl NearMinimumOutcome {
    pub fn write_records(&self, mut w: impl Write) -> Result<()> {
        for r in &self.rows {
            serde_json::to_writer(&mut w, r)
                .map_err(|e| Error::InvalidInput(format!("serialization failed: {e}")))?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn write_summary(&self, mut w: impl Write) -> Result<()> {
        writeln!(
            w,
            "d,points,tau,max_grad_norm,min_lower_slack,support_violations,worst_saddle_curvature,curvature_bound"
        )?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                r.d,
                r.points,
                r.tau,
                r.max_grad_norm,
                r.min_lower_slack,
                r.support_violations,
                r.worst_saddle_curvature,
                r.curvature_bound
            )?;
        }
        Ok(())
    }
}

// ===========================================================================
// recover-ica

#[derive(Clone, Debug)]
pub struct RecoverIcaConfig {
    pub d: usize,
    pub trials: usize,
    pub n: usize,
    pub n_values: Vec<usize>,
    pub seed: u64,
    pub solver: SolverConfig,
}

impl RecoverIcaConfig {
    pub fn from_settings(s: &Settings) -> Result<Self> {
        let seed = s.u64_of("seed")?;
        Ok(RecoverIcaConfig {
            d: s.usize_of("d")?,
            trials: s.usize_of("trials")?,
            n: s.usize_of("n")?,
            n_values: s.usize_list("n_values")?,
            seed,
            solver: SolverConfig {
                grad_tol: s.f64_of("grad_tol")?,
                max_iters: s.usize_of("max_iters")?,
                restarts: s.usize_of("restarts")?,
                seed: mix_seed(seed, 31),
                ..SolverConfig::default()
            },
        })
    }
}

#[derive(Debug, Serialize)]
pub struct RecoverIcaOutcome {
    pub exact_errors: Vec<f64>,
    pub empirical_errors: Vec<f64>,
    /// (n, mean max-entry tensor error over seeds).
    pub tensor_errors: Vec<(usize, f64)>,
    pub tensor_slope: Option<f64>,
    pub checks: Vec<Check>,
}

pub fn run_recover_ica(cfg: &RecoverIcaConfig) -> Result<RecoverIcaOutcome> {
    use rayon::prelude::*;
    if cfg.d < 2 || cfg.trials == 0 {
        return Err(Error::InvalidConfig("recover-ica needs d >= 2 and trials >= 1".into()));
    }
    if cfg.n < 10 {
        return Err(Error::InvalidConfig("n must be at least 10".into()));
    }
    let z = make_z(cfg.d)?;

    let per_trial: Vec<(f64, f64)> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| {
            let instance = IcaInstance::random(cfg.d, mix_seed(cfg.seed, 200 + t as u64))?;
            let solver = SolverConfig {
                seed: mix_seed(cfg.solver.seed, t as u64),
                ..cfg.solver.clone()
            };
            let a_exact = recover_from_tensor(instance.tensor(), &solver)?;
            let exact_err = match_error(&a_exact, instance.mixing())?;
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 300 + t as u64));
            let sample = sample_ica(&instance, cfg.n, &mut rng);
            let a_emp = recover_components(&sample, &solver)?;
            let emp_err = match_error(&a_emp, instance.mixing())?;
            Ok((exact_err, emp_err))
        })
        .collect::<Result<_>>()?;
    let exact_errors: Vec<f64> = per_trial.iter().map(|p| p.0).collect();
    let empirical_errors: Vec<f64> = per_trial.iter().map(|p| p.1).collect();

    // tensor estimation error vs sample size, averaged over a few seeds
    let slope_seeds = cfg.trials.min(5).max(2);
    let tensor_errors: Vec<(usize, f64)> = cfg
        .n_values
        .par_iter()
        .map(|&n| {
            let mut total = 0.0;
            for s in 0..slope_seeds {
                let instance =
                    IcaInstance::random(cfg.d, mix_seed(cfg.seed, 400 + s as u64))?;
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(
                    cfg.seed,
                    500 + (s * cfg.n_values.len() + n) as u64,
                ));
                let sample = sample_ica(&instance, n, &mut rng);
                let t = empirical_tensor(&sample, &z)?;
                total += t.max_abs_diff(instance.tensor());
            }
            Ok((n, total / slope_seeds as f64))
        })
        .collect::<Result<_>>()?;
    let tensor_slope = if tensor_errors.len() >= 2 {
        let xs: Vec<f64> = tensor_errors.iter().map(|(n, _)| (*n as f64).ln()).collect();
        let ys: Vec<f64> = tensor_errors.iter().map(|(_, e)| e.ln()).collect();
        let mx = xs.iter().sum::<f64>() / xs.len() as f64;
        let my = ys.iter().sum::<f64>() / ys.len() as f64;
        let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        Some(sxy / sxx)
    } else {
        None
    };

    let worst_exact = exact_errors.iter().fold(0.0f64, |a, &x| a.max(x));
    let emp_hits = empirical_errors.iter().filter(|&&e| e <= 1e-2).count();
    let emp_rate = emp_hits as f64 / empirical_errors.len() as f64;
    let checks = vec![
        check(
            "exact-recovery",
            worst_exact <= 1e-6,
            format!("worst match error {worst_exact:.3e} over {} instances", cfg.trials),
        ),
        check(
            "empirical-recovery",
            emp_rate >= 0.9,
            format!(
                "{emp_hits} / {} seeds with match error <= 1e-2 at n = {}",
                cfg.trials, cfg.n
            ),
        ),
        check(
            "tensor-error-rate",
            tensor_slope.map_or(false, |s| (s + 0.5).abs() <= 0.15),
            format!("log-log slope {tensor_slope:?} (required -0.5 +- 0.15)"),
        ),
    ];
    Ok(RecoverIcaOutcome {
        exact_errors,
        empirical_errors,
        tensor_errors,
        tensor_slope,
        checks,
    })
}

impl RecoverIcaOutcome {
    pub fn write_records(&self, mut w: impl Write) -> Result<()> {
        #[derive(Serialize)]
        struct Row<'a> {
            kind: &'a str,
            index: usize,
            value: f64,
        }
        let mut rows = vec![];
        for (i, e) in self.exact_errors.iter().enumerate() {
            rows.push(Row { kind: "exact_match_error", index: i, value: *e });
        }
        for (i, e) in self.empirical_errors.iter().enumerate() {
            rows.push(Row { kind: "empirical_match_error", index: i, value: *e });
        }
        for (n, e) in &self.tensor_errors {
            rows.push(Row { kind: "tensor_error", index: *n, value: *e });
        }
        for r in rows {
            serde_json::to_writer(&mut w, &r)
                .map_err(|e| Error::InvalidInput(format!("serialization failed: {e}")))?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn write_summary(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "metric,index,value")?;
        for (i, e) in self.exact_errors.iter().enumerate() {
            writeln!(w, "exact_match_error,{i},{e}")?;
        }
        for (i, e) in self.empirical_errors.iter().enumerate() {
            writeln!(w, "empirical_match_error,{i},{e}")?;
        }
        for (n, e) in &self.tensor_errors {
            writeln!(w, "tensor_error,{n},{e}")?;
        }
        writeln!(
            w,
            "tensor_slope,,{}",
            self.tensor_slope.map(|s| s.to_string()).unwrap_or_default()
        )?;
        Ok(())
    }
}

// ===========================================================================
// dispatch

/// Run the experiment named by the settings and write records.jsonl,
/// summary.csv, and manifest.txt into `out_dir`. Returns the pass/fail
/// checks of the run.
pub fn run_from_settings(
    settings: &Settings,
    out_dir: &std::path::Path,
) -> Result<Vec<Check>> {
    struct Output {
        records: Vec<u8>,
        summary: Vec<u8>,
        checks: Vec<Check>,
    }
    // run fully (and buffer output) before touching the filesystem, so a
    // failed run leaves no partial files
    let output = match settings.experiment() {
        Experiment::Certify => {
            let o = run_certify(&CertifyConfig::from_settings(settings)?)?;
            let mut records = vec![];
            let mut summary = vec![];
            o.write_records(&mut records)?;
            o.write_summary(&mut summary)?;
            Output { records, summary, checks: o.checks }
        }
        Experiment::StabilityPca => {
            let o = run_stability_pca(&PcaStabilityConfig::from_settings(settings)?)?;
            let mut records = vec![];
            let mut summary = vec![];
            o.write_records(&mut records)?;
            o.write_summary(&mut summary)?;
            Output { records, summary, checks: o.checks }
        }
        Experiment::StabilityIca => {
            let o = run_stability_ica(&IcaStabilityConfig::from_settings(settings)?)?;
            let mut records = vec![];
            let mut summary = vec![];
            o.write_records(&mut records)?;
            o.write_summary(&mut summary)?;
            Output { records, summary, checks: o.checks }
        }
        Experiment::NearStationary => {
            let o = run_near_stationary(&NearStationaryConfig::from_settings(settings)?)?;
            let mut records = vec![];
            let mut summary = vec![];
            o.write_records(&mut records)?;
            o.write_summary(&mut summary)?;
            Output { records, summary, checks: o.checks }
        }
        Experiment::NearMinimum => {
            let o = run_near_minimum(&NearMinimumConfig::from_settings(settings)?)?;
            let mut records = vec![];
            let mut summary = vec![];
            o.write_records(&mut records)?;
            o.write_summary(&mut summary)?;
            Output { records, summary, checks: o.checks }
        }
        Experiment::RecoverIca => {
            let o = run_recover_ica(&RecoverIcaConfig::from_settings(settings)?)?;
            let mut records = vec![];
            let mut summary = vec![];
            o.write_records(&mut records)?;
            o.write_summary(&mut summary)?;
            Output { records, summary, checks: o.checks }
        }
    };
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("records.jsonl"), &output.records)?;
    std::fs::write(out_dir.join("summary.csv"), &output.summary)?;
    let mut manifest = settings.manifest();
    for c in &output.checks {
        manifest.push_str(&format!(
            "check.{} = {}\n",
            c.name,
            if c.passed { "pass" } else { "fail" }
        ));
    }
    std::fs::write(out_dir.join("manifest.txt"), manifest)?;
    Ok(output.checks)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn settings(exp: Experiment, overrides: &[(&str, &str)]) -> Settings {
        let pairs: Vec<(String, String)> = overrides
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        Settings::resolve(exp, None, None, &pairs).unwrap()
    }

    #[test]
    fn default_spectrum_shape() {
        let s = default_pca_spectrum(10);
        assert_eq!(s.len(), 10);
        assert!((s[0] - s[1] - 0.30).abs() < 1e-15);
        assert!(s.iter().sum::<f64>() <= 1.0);
        assert!(s.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn certify_small_run_passes() {
        let cfg = CertifyConfig {
            d: 4,
            eigenvalues: vec![],
            points: 200,
            estimate_points: 100,
            seed: 7,
        };
        let o = run_certify(&cfg).unwrap();
        assert!(all_passed(&o.checks), "{:#?}", o.checks);
        let mut csv = vec![];
        o.write_summary(&mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 2);
    }

    #[test]
    fn stability_pca_small_run() {
        let cfg = PcaStabilityConfig {
            d: 4,
            eigenvalues: vec![],
            n_values: vec![50, 100, 200],
            trials: 10,
            seed: 11,
        };
        let o = run_stability_pca(&cfg).unwrap();
        // small runs must still produce clean chains and exclusion audits
        assert!(o.chain.violations.is_empty(), "{:?}", o.chain.violations);
        assert_eq!(o.exclusion.regime_failures, 0);
        assert_eq!(o.exclusion.grad_failures, 0);
        assert!(o.chain.pairs > 0);
        assert!(o.report.aggregates.len() == 3);
    }

    #[test]
    fn near_stationary_small_run() {
        let cfg = NearStationaryConfig {
            d: 8,
            spectra: 2,
            points: 100,
            c: 1.0 / 64.0,
            min_gap: 0.2,
            seed: 13,
        };
        let o = run_near_stationary(&cfg).unwrap();
        assert!(all_passed(&o.checks), "{:#?}", o.checks);
        assert!(o.rows.len() >= 100);
    }

    #[test]
    fn near_stationary_rejects_bad_c() {
        let cfg = NearStationaryConfig {
            d: 8,
            spectra: 1,
            points: 10,
            c: 0.5,
            min_gap: 0.2,
            seed: 13,
        };
        assert!(matches!(run_near_stationary(&cfg), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn near_minimum_small_run() {
        let cfg = NearMinimumConfig { d_values: vec![3, 4], points: 50, seed: 17 };
        let o = run_near_minimum(&cfg).unwrap();
        assert!(all_passed(&o.checks), "{:#?}", o.checks);
    }

    #[test]
    fn recover_ica_small_run() {
        let cfg = RecoverIcaConfig {
            d: 3,
            trials: 2,
            n: 20000,
            n_values: vec![500, 4000, 32000],
            seed: 19,
            solver: SolverConfig { grad_tol: 1e-10, ..SolverConfig::default() },
        };
        let o = run_recover_ica(&cfg).unwrap();
        let exact = &o.checks[0];
        assert!(exact.passed, "{:#?}", o.checks);
        assert!(o.tensor_slope.is_some());
    }

    #[test]
    fn run_from_settings_writes_files_and_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let s = settings(
            Experiment::NearMinimum,
            &[("d_values", "3"), ("points", "20"), ("seed", "23")],
        );
        let out1 = dir.path().join("a");
        let out2 = dir.path().join("b");
        let checks = run_from_settings(&s, &out1).unwrap();
        assert!(all_passed(&checks));
        run_from_settings(&s, &out2).unwrap();
        for f in ["records.jsonl", "summary.csv", "manifest.txt"] {
            let a = std::fs::read(out1.join(f)).unwrap();
            let b = std::fs::read(out2.join(f)).unwrap();
            assert_eq!(a, b, "{f} not byte-identical");
            assert!(!a.is_empty() || f == "records.jsonl");
        }
        let manifest = std::fs::read_to_string(out1.join("manifest.txt")).unwrap();
        assert!(manifest.contains("experiment = near-minimum"));
        assert!(manifest.contains("seed = 23"));
        assert!(manifest.contains("check.basin-lower-bound = pass"));
    }

    #[test]
    fn invalid_settings_leave_no_output() {
        let dir = tempfile::tempdir().unwrap();
        let s = settings(Experiment::StabilityPca, &[("trials", "1")]);
        let out = dir.path().join("x");
        assert!(run_from_settings(&s, &out).is_err());
        assert!(!out.exists());
    }
}
