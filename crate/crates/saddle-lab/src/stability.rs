//! Leave-one-out stability measurement: trial running, aggregation across
//! sample sizes, and numerical verification of the inequality chain that
//! links the stability terms to strong convexity.

use std::io::Write;

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::numerics;
use crate::objective::LossConstants;
use crate::{Error, Result};

/// Slack allowed when checking the per-trial inequality chain.
pub const CHAIN_TOL: f64 = 1e-8;

/// Gap-event frequency below which an n value is excluded from rate fits.
const GAP_FREQ_CUTOFF: f64 = 0.95;

// ---------------------------------------------------------------------------
// symmetry alignment

/// Symmetry group identifying equivalent global minimizers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Symmetry {
    /// w and -w are the same minimizer (PCA).
    SignFlip,
    /// Any signed coordinate permutation of w is the same minimizer
    /// (orthogonal tensor components in the source basis).
    SignedPermutation,
}

/// The group element applied to `w` that minimizes distance to `reference`.
/// Exact ties leave `w` unchanged.
pub fn align_minimizer(w: &[f64], reference: &[f64], symmetry: Symmetry) -> Vec<f64> {
    match symmetry {
        Symmetry::SignFlip => {
            if numerics::dot(w, reference) < 0.0 {
                numerics::scale(w, -1.0)
            } else {
                w.to_vec()
            }
        }
        Symmetry::SignedPermutation => {
            // maximize sum_i |w_{pi(i)}| |r_i|: by the rearrangement
            // inequality the optimum matches magnitudes rank-for-rank
            let d = w.len();
            let mut w_order: Vec<usize> = (0..d).collect();
            w_order.sort_by(|&a, &b| w[b].abs().partial_cmp(&w[a].abs()).unwrap());
            let mut r_order: Vec<usize> = (0..d).collect();
            r_order.sort_by(|&a, &b| {
                reference[b].abs().partial_cmp(&reference[a].abs()).unwrap()
            });
            let mut out = vec![0.0; d];
            for k in 0..d {
                let src = w_order[k];
                let dst = r_order[k];
                let mut v = w[src];
                if v * reference[dst] < 0.0 {
                    v = -v;
                }
                out[dst] = v;
            }
            out
        }
    }
}

// ---------------------------------------------------------------------------
// model interface

/// Everything the ERM solver produced for one sample, with the empirical
/// risks and per-minimizer diagnostics evaluated through the model's fast
/// objective form.
#[derive(Clone, Debug)]
pub struct TrialFit {
    /// Full-sample minimizer.
    pub hat_w: Vec<f64>,
    /// Leave-one-out minimizers, already symmetry-aligned to `hat_w`.
    pub loo: Vec<Vec<f64>>,
    /// Full-sample empirical risk at `hat_w`.
    pub empirical_risk_hat: f64,
    /// Full-sample empirical risk at each leave-one-out minimizer.
    pub empirical_risk_loo: Vec<f64>,
    /// Full-sample projected gradient norm at each leave-one-out minimizer.
    pub loo_grad_norms: Vec<f64>,
    /// Full-sample minimum restricted curvature at each leave-one-out
    /// minimizer.
    pub loo_min_curvatures: Vec<f64>,
}

/// A learning problem the stability harness can run: a data distribution
/// with an exactly known population risk, a per-datum loss, and an ERM
/// solver including the leave-one-out sweep.
pub trait StabilityModel: Sync {
    fn dim(&self) -> usize;
    fn symmetry(&self) -> Symmetry;
    fn constants(&self) -> LossConstants;
    /// Draw n i.i.d. data vectors.
    fn draw(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>>;
    /// Solve the full-sample ERM and all leave-one-out ERMs.
    fn fit(&self, sample: &[Vec<f64>]) -> Result<TrialFit>;
    /// Per-datum loss f(w, z).
    fn loss(&self, w: &[f64], z: &[f64]) -> f64;
    /// Exact population risk F(w).
    fn population_risk(&self, w: &[f64]) -> f64;
    /// Exact minimum of F.
    fn population_min(&self) -> f64;
    /// Whether the sample realizes the concentration event the fast-rate
    /// bound is conditioned on (None when the model has no such event).
    fn gap_event(&self, _sample: &[Vec<f64>]) -> Result<Option<bool>> {
        Ok(None)
    }
    /// Population eigengap entering the 4/(nG) bound, when defined.
    fn population_gap(&self) -> Option<f64> {
        None
    }
}

// ---------------------------------------------------------------------------
// trials

/// One draw: the stability terms Delta_i = f_i(w_i) - f_i(w), the
/// generalization gap against the exact population risk, and the raw
/// quantities needed to audit the inequality chain afterwards.
#[derive(Clone, Debug, Serialize)]
pub struct TrialRecord {
    pub n: usize,
    pub seed: u64,
    pub delta_terms: Vec<f64>,
    pub delta_mean: f64,
    /// F(hat_w) - F_hat(hat_w), population minus empirical risk.
    pub gen_gap: f64,
    /// F(hat_w) - min F.
    pub excess_risk: f64,
    pub gap_event: Option<bool>,
    pub hat_w: Vec<f64>,
    /// ||w_i - hat_w|| after alignment.
    pub dists: Vec<f64>,
    /// F_hat(w_i) - F_hat(hat_w) on the full sample.
    pub femp_diffs: Vec<f64>,
    pub loo_grad_norms: Vec<f64>,
    pub loo_min_curvatures: Vec<f64>,
    /// Aligned leave-one-out minimizers (omitted from serialized records;
    /// they dominate the record size and are re-derivable from the seed).
    #[serde(skip)]
    pub loo_ws: Vec<Vec<f64>>,
}

/// Deterministic per-trial seed: a hash mix of the root seed, the sample
/// size, and the trial index, so trials are independent of scheduling.
pub fn trial_seed(root: u64, n: usize, trial: usize) -> u64 {
    let mut x = root
        ^ (n as u64).wrapping_mul(0xA24B_AED4_963E_E407)
        ^ (trial as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    x ^= x >> 30;
    x = x.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x ^= x >> 31;
    x
}

/// Run one trial: draw n data, fit the ERM and its leave-one-out
/// perturbations, and measure every stability quantity.
pub fn run_trial(model: &dyn StabilityModel, n: usize, seed: u64) -> Result<TrialRecord> {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sample = model.draw(n, &mut rng);
    if sample.len() != n || n == 0 {
        return Err(Error::EmptySample);
    }
    let fit = model.fit(&sample)?;

    let delta_terms: Vec<f64> = (0..n)
        .map(|i| model.loss(&fit.loo[i], &sample[i]) - model.loss(&fit.hat_w, &sample[i]))
        .collect();
    let delta_mean = delta_terms.iter().sum::<f64>() / n as f64;
    let dists: Vec<f64> = fit
        .loo
        .iter()
        .map(|w_i| numerics::norm(&numerics::sub(w_i, &fit.hat_w)))
        .collect();
    let femp_diffs: Vec<f64> = fit
        .empirical_risk_loo
        .iter()
        .map(|f| f - fit.empirical_risk_hat)
        .collect();

    let pop = model.population_risk(&fit.hat_w);
    let gen_gap = pop - fit.empirical_risk_hat;
    let excess_risk = pop - model.population_min();
    let gap_event = model.gap_event(&sample)?;

    Ok(TrialRecord {
        n,
        seed,
        delta_terms,
        delta_mean,
        gen_gap,
        excess_risk,
        gap_event,
        hat_w: fit.hat_w,
        dists,
        femp_diffs,
        loo_grad_norms: fit.loo_grad_norms,
        loo_min_curvatures: fit.loo_min_curvatures,
        loo_ws: fit.loo,
    })
}

// ---------------------------------------------------------------------------
// sweeps and aggregation

/// Per-sample-size aggregate over trials.
#[derive(Clone, Debug, Serialize)]
pub struct NAggregate {
    pub n: usize,
    pub trials: usize,
    pub failed: usize,
    pub mean_delta: f64,
    pub se_delta: f64,
    pub mean_gen_gap: f64,
    pub se_gen_gap: f64,
    pub mean_excess_risk: f64,
    /// Fraction of trials whose concentration event held (None when the
    /// model defines no event).
    pub gap_frequency: Option<f64>,
    /// 2 rho^2 / (alpha n), when alpha is supplied.
    pub bound_general: Option<f64>,
    /// 4 / (n G), when the model has a population eigengap.
    pub bound_gap: Option<f64>,
}

/// Aggregates plus the fitted decay rate of the stability terms.
#[derive(Clone, Debug, Serialize)]
pub struct StabilityReport {
    pub aggregates: Vec<NAggregate>,
    /// Least-squares slope of log mean Delta vs log n, fitted over n values
    /// whose gap-event frequency is at least 95% (all n when the model has
    /// no event); absent with fewer than two usable points.
    pub rate_slope: Option<f64>,
    pub alpha: Option<f64>,
    #[serde(skip)]
    pub records: Vec<TrialRecord>,
}

/// Run `trials` trials at every n, in parallel, with per-trial seeds derived
/// from `root_seed`. Solver failures are excluded and counted; an n where
/// every trial failed is an error.
pub fn stability_sweep(
    model: &dyn StabilityModel,
    n_values: &[usize],
    trials: usize,
    root_seed: u64,
    alpha: Option<f64>,
) -> Result<StabilityReport> {
    assert!(trials >= 2, "aggregates need at least two trials");
    let jobs: Vec<(usize, usize)> = n_values
        .iter()
        .flat_map(|&n| (0..trials).map(move |t| (n, t)))
        .collect();
    let outcomes: Vec<(usize, Result<TrialRecord>)> = jobs
        .par_iter()
        .map(|&(n, t)| (n, run_trial(model, n, trial_seed(root_seed, n, t))))
        .collect();

    let mut records: Vec<TrialRecord> = vec![];
    let mut failures: Vec<(usize, usize)> = n_values.iter().map(|&n| (n, 0)).collect();
    for (n, outcome) in outcomes {
        match outcome {
            Ok(r) => records.push(r),
            Err(_) => {
                let slot = failures.iter_mut().find(|(m, _)| *m == n).expect("known n");
                slot.1 += 1;
            }
        }
    }
    records.sort_by(|a, b| (a.n, a.seed).cmp(&(b.n, b.seed)));

    let constants = model.constants();
    let mut aggregates = vec![];
    for &(n, failed) in &failures {
        let group: Vec<&TrialRecord> = records.iter().filter(|r| r.n == n).collect();
        if group.is_empty() {
            return Err(Error::InvalidInput(format!(
                "all {trials} trials failed at n = {n}"
            )));
        }
        let deltas: Vec<f64> = group.iter().map(|r| r.delta_mean).collect();
        let gens: Vec<f64> = group.iter().map(|r| r.gen_gap).collect();
        let excesses: Vec<f64> = group.iter().map(|r| r.excess_risk).collect();
        let gap_frequency = if group.iter().all(|r| r.gap_event.is_some()) {
            let hits = group.iter().filter(|r| r.gap_event == Some(true)).count();
            Some(hits as f64 / group.len() as f64)
        } else {
            None
        };
        aggregates.push(NAggregate {
            n,
            trials: group.len(),
            failed,
            mean_delta: mean(&deltas),
            se_delta: standard_error(&deltas),
            mean_gen_gap: mean(&gens),
            se_gen_gap: standard_error(&gens),
            mean_excess_risk: mean(&excesses),
            gap_frequency,
            bound_general: alpha
                .map(|a| 2.0 * constants.rho * constants.rho / (a * n as f64)),
            bound_gap: model.population_gap().map(|g| 4.0 / (n as f64 * g)),
        });
    }

    let rate_slope = fit_rate_slope(&aggregates);
    Ok(StabilityReport { aggregates, rate_slope, alpha, records })
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn standard_error(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return f64::NAN;
    }
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64;
    (var / xs.len() as f64).sqrt()
}

/// Least-squares slope of log mean Delta against log n over usable
/// aggregates (positive mean, gap frequency at least the cutoff).
fn fit_rate_slope(aggregates: &[NAggregate]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = aggregates
        .iter()
        .filter(|a| a.mean_delta > 0.0)
        .filter(|a| a.gap_frequency.map_or(true, |f| f >= GAP_FREQ_CUTOFF))
        .map(|a| ((a.n as f64).ln(), a.mean_delta.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let mx = mean(&pts.iter().map(|p| p.0).collect::<Vec<_>>());
    let my = mean(&pts.iter().map(|p| p.1).collect::<Vec<_>>());
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Some(sxy / sxx)
}

// ---------------------------------------------------------------------------
// bound chain checks

/// One violated inequality of the stability chain, with how far it failed.
#[derive(Clone, Debug, Serialize)]
pub struct Violation {
    pub n: usize,
    pub seed: u64,
    /// Leave-one-out index, or None for whole-trial inequalities.
    pub index: Option<usize>,
    pub inequality: &'static str,
    pub slack: f64,
}

/// Audit the full inequality chain on every recorded trial whose
/// concentration event held (trials where it failed are outside the bound's
/// hypothesis and are skipped):
///
/// 1. `Delta_i <= rho ||w_i - hat_w||` (Lipschitz link),
/// 2. `F_hat(w_i) - F_hat(hat_w) <= Delta_i / n` (suboptimality link),
/// 3. `F_hat(w_i) - F_hat(hat_w) >= (alpha/2) ||w_i - hat_w||^2`
///    (strong-convexity link),
/// 4. `mean Delta <= 2 rho^2 / (alpha n)`.
pub fn check_bounds(
    records: &[TrialRecord],
    constants: &LossConstants,
    alpha: f64,
) -> Vec<Violation> {
    assert!(constants.rho > 0.0 && alpha > 0.0);
    let mut violations = vec![];
    for r in records {
        if r.gap_event == Some(false) {
            continue;
        }
        for i in 0..r.n {
            let lip = constants.rho * r.dists[i] - r.delta_terms[i];
            if lip < -CHAIN_TOL {
                violations.push(Violation {
                    n: r.n,
                    seed: r.seed,
                    index: Some(i),
                    inequality: "delta_i <= rho * dist_i",
                    slack: lip,
                });
            }
            let sub = r.delta_terms[i] / r.n as f64 - r.femp_diffs[i];
            if sub < -CHAIN_TOL {
                violations.push(Violation {
                    n: r.n,
                    seed: r.seed,
                    index: Some(i),
                    inequality: "femp_diff_i <= delta_i / n",
                    slack: sub,
                });
            }
            let sc = r.femp_diffs[i] - 0.5 * alpha * r.dists[i] * r.dists[i];
            if sc < -CHAIN_TOL {
                violations.push(Violation {
                    n: r.n,
                    seed: r.seed,
                    index: Some(i),
                    inequality: "femp_diff_i >= (alpha/2) * dist_i^2",
                    slack: sc,
                });
            }
        }
        let bound = 2.0 * constants.rho * constants.rho / (alpha * r.n as f64);
        let agg = bound - r.delta_mean;
        if agg < -CHAIN_TOL {
            violations.push(Violation {
                n: r.n,
                seed: r.seed,
                index: None,
                inequality: "mean delta <= 2 rho^2 / (alpha n)",
                slack: agg,
            });
        }
    }
    violations
}

// ---------------------------------------------------------------------------
// output

/// One serialized record per line.
pub fn write_records_jsonl(records: &[TrialRecord], mut out: impl Write) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)
            .map_err(|e| Error::InvalidInput(format!("serialization failed: {e}")))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Flat per-trial table. Column order is fixed:
/// `n,seed,delta_mean,gen_gap,excess_risk,gap_event,bound_2rho2_alphan,bound_4nG`.
/// Bound columns are empty when alpha / the eigengap are not available;
/// `gap_event` is empty for models without a concentration event.
pub fn write_table_csv(
    records: &[TrialRecord],
    rho: f64,
    alpha: Option<f64>,
    gap: Option<f64>,
    mut out: impl Write,
) -> Result<()> {
    writeln!(
        out,
        "n,seed,delta_mean,gen_gap,excess_risk,gap_event,bound_2rho2_alphan,bound_4nG"
    )?;
    for r in records {
        let gap_event = match r.gap_event {
            Some(true) => "true",
            Some(false) => "false",
            None => "",
        };
        let b1 = alpha
            .map(|a| format!("{}", 2.0 * rho * rho / (a * r.n as f64)))
            .unwrap_or_default();
        let b2 = gap
            .map(|g| format!("{}", 4.0 / (r.n as f64 * g)))
            .unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.n, r.seed, r.delta_mean, r.gen_gap, r.excess_risk, gap_event, b1, b2
        )?;
    }
    Ok(())
}
