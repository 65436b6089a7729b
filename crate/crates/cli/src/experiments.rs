//! Experiment drivers: threshold sweeps, per-organization probability sweeps,
//! organization removal and the four analytic cases, each reporting exact
//! and simulated acceptance side by side.

use endorse_core::smc::RNG_ID;
use endorse_core::{
    estimate_probability, exact_acceptance_probability, Organization, Policy, PolicyError,
    SimConfig, SmcError,
};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Smc(#[from] SmcError),
    #[error("invalid sweep: {0}")]
    InvalidSweep(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),
}

/// The three-organization policy used throughout the experiments: weights
/// 1, 3, 2 and refusal probabilities 0.07, 0.01, 0.02; thresholds 5 and 0.95.
pub fn reference_policy() -> Policy {
    Policy::new(
        vec![
            Organization::new("O1", 1, 0.07).unwrap(),
            Organization::new("O2", 3, 0.01).unwrap(),
            Organization::new("O3", 2, 0.02).unwrap(),
        ],
        5,
        0.95,
    )
    .unwrap()
}

/// Published simulated acceptance per weight threshold 1..=7 for
/// [`reference_policy`], with the reported halfwidths.
pub const REFERENCE_TABLE: [(u64, f64, f64); 7] = [
    (1, 0.9990, 0.0004),
    (2, 0.9997, 0.0005),
    (3, 0.9989, 0.001),
    (4, 0.9894, 0.0003),
    (5, 0.9717, 0.0005),
    (6, 0.9035, 0.0009),
    (7, 0.0, 0.0),
];

/// Tolerance between exact values and the published table for thresholds 4..=7.
pub const REFERENCE_TOLERANCE: f64 = 0.002;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub weight_threshold: u64,
    pub exact_p: f64,
    pub p_hat: f64,
    pub ci_halfwidth: f64,
    pub samples: u64,
    pub seed: u64,
}

/// One row per threshold in `w_min..=w_max`. Fails if the exact column is
/// not non-increasing.
pub fn sweep_weight(
    policy: &Policy,
    w_min: u64,
    w_max: u64,
    cfg: &SimConfig,
) -> Result<Vec<SweepRow>, ExperimentError> {
    if w_min > w_max {
        return Err(ExperimentError::InvalidSweep(format!(
            "w_min {w_min} exceeds w_max {w_max}"
        )));
    }
    let mut rows = Vec::new();
    for th in w_min..=w_max {
        let p = policy.with_weight_threshold(th);
        let est = estimate_probability(&p, cfg)?;
        rows.push(SweepRow {
            weight_threshold: th,
            exact_p: exact_acceptance_probability(&p),
            p_hat: est.p_hat,
            ci_halfwidth: est.ci_halfwidth,
            samples: est.samples_used,
            seed: cfg.seed,
        });
    }
    if let Some(w) = rows.windows(2).find(|w| w[1].exact_p > w[0].exact_p) {
        return Err(ExperimentError::Invariant(format!(
            "exact acceptance rises from {} to {} between thresholds {} and {}",
            w[0].exact_p, w[1].exact_p, w[0].weight_threshold, w[1].weight_threshold
        )));
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbSweepRow {
    pub varied_org_id: String,
    pub acceptance_prob: f64,
    pub exact_p: f64,
    pub p_hat: f64,
}

/// Sweep points from `from` towards `to` in increments of `step`, both ends
/// included when `to` is reached on the grid.
pub fn sweep_points(from: f64, to: f64, step: f64) -> Result<Vec<f64>, ExperimentError> {
    let in_range = |x: f64| (0.0..=1.0).contains(&x);
    if !in_range(from) || !in_range(to) {
        return Err(ExperimentError::InvalidSweep(format!(
            "sweep bounds {from}..{to} must lie in [0, 1]"
        )));
    }
    if step.is_nan() || step <= 0.0 {
        return Err(ExperimentError::InvalidSweep(format!(
            "step must be positive, got {step}"
        )));
    }
    let count = ((to - from).abs() / step + 1e-9).floor() as u64 + 1;
    let dir = if to < from { -1.0 } else { 1.0 };
    Ok((0..count)
        .map(|k| {
            // round to the grid so repeated steps do not drift
            let x = from + dir * k as f64 * step;
            ((x * 1e12).round() / 1e12).clamp(0.0, 1.0)
        })
        .collect())
}

pub fn sweep_orgprob(
    policy: &Policy,
    org_id: &str,
    from: f64,
    to: f64,
    step: f64,
    cfg: &SimConfig,
) -> Result<Vec<ProbSweepRow>, ExperimentError> {
    if policy.organization(org_id).is_none() {
        return Err(PolicyError::UnknownOrganization(org_id.to_owned()).into());
    }
    sweep_points(from, to, step)?
        .into_iter()
        .map(|q| {
            let p = policy.with_acceptance_prob(org_id, q)?;
            Ok(ProbSweepRow {
                varied_org_id: org_id.to_owned(),
                acceptance_prob: q,
                exact_p: exact_acceptance_probability(&p),
                p_hat: estimate_probability(&p, cfg)?.p_hat,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub max_residual: f64,
}

/// Ordinary least-squares line through `(x, y)` pairs.
pub fn fit_line(points: &[(f64, f64)]) -> LineFit {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|&(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = points.iter().map(|&(x, _)| (x - mx) * (x - mx)).sum();
    let slope = if sxx == 0.0 { 0.0 } else { sxy / sxx };
    let intercept = my - slope * mx;
    let max_residual = points
        .iter()
        .map(|&(x, y)| (y - (intercept + slope * x)).abs())
        .fold(0.0, f64::max);
    LineFit {
        slope,
        intercept,
        max_residual,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DropReport {
    pub dropped_org_id: String,
    pub exact_before: f64,
    pub exact_after: f64,
    pub p_hat_before: f64,
    pub p_hat_after: f64,
    pub ci_halfwidth: f64,
    pub samples: u64,
    pub seed: u64,
    pub rng_id: &'static str,
}

/// Slack for the "never increases" check; removing an organization changes
/// the floating-point evaluation order of the exact recursion.
pub const DROP_SLACK: f64 = 1e-12;

pub fn drop_org(
    policy: &Policy,
    org_id: &str,
    cfg: &SimConfig,
) -> Result<DropReport, ExperimentError> {
    let after_policy = policy.without_organization(org_id)?;
    let before = estimate_probability(policy, cfg)?;
    let after = estimate_probability(&after_policy, cfg)?;
    let report = DropReport {
        dropped_org_id: org_id.to_owned(),
        exact_before: exact_acceptance_probability(policy),
        exact_after: exact_acceptance_probability(&after_policy),
        p_hat_before: before.p_hat,
        p_hat_after: after.p_hat,
        ci_halfwidth: before.ci_halfwidth,
        samples: cfg.samples,
        seed: cfg.seed,
        rng_id: RNG_ID,
    };
    if report.exact_after > report.exact_before + DROP_SLACK {
        return Err(ExperimentError::Invariant(format!(
            "dropping {org_id} raised exact acceptance from {} to {}",
            report.exact_before, report.exact_after
        )));
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalyticCase {
    pub case: u32,
    pub description: &'static str,
    pub refusal_probs: String,
    pub expected: f64,
    pub exact_p: f64,
    pub p_hat: f64,
    pub ci_halfwidth: f64,
    pub exact_matches: bool,
    pub estimate_within_ci: bool,
}

/// The four closed-form cases on the reference weights and thresholds.
pub fn analytic_cases(cfg: &SimConfig) -> Result<Vec<AnalyticCase>, ExperimentError> {
    let base = reference_policy();
    let cases: [(&str, [f64; 3], f64); 4] = [
        ("all organizations accept", [0.0, 0.0, 0.0], 1.0),
        ("O2 and O3 accept, O1 refuses", [1.0, 0.0, 0.0], 1.0),
        ("O1 accepts, O2 and O3 refuse", [0.0, 1.0, 1.0], 0.0),
        (
            "every organization accepts with probability 0.5",
            [0.5, 0.5, 0.5],
            0.25,
        ),
    ];
    cases
        .iter()
        .zip(1..)
        .map(|(&(description, probs, expected), case)| {
            let p = base.with_refusal_probs(&probs)?;
            let exact_p = exact_acceptance_probability(&p);
            let est = estimate_probability(&p, cfg)?;
            Ok(AnalyticCase {
                case,
                description,
                refusal_probs: probs.map(|x| x.to_string()).join(";"),
                expected,
                exact_p,
                p_hat: est.p_hat,
                ci_halfwidth: est.ci_halfwidth,
                exact_matches: exact_p == expected,
                estimate_within_ci: (est.p_hat - expected).abs() <= est.ci_halfwidth,
            })
        })
        .collect()
}

/// `# seed=.. rng=.. samples=.. batch_size=..` provenance line for CSV output.
pub fn csv_header_comment(cfg: &SimConfig) -> String {
    format!(
        "# seed={} rng={} samples={} batch_size={}\n",
        cfg.seed, RNG_ID, cfg.samples, cfg.batch_size
    )
}

/// Renders rows as CSV with a header row, preceded by the provenance comment.
pub fn to_csv<T: Serialize>(cfg: &SimConfig, rows: &[T]) -> Result<String, ExperimentError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let body = String::from_utf8(
        w.into_inner()
            .map_err(|e| csv::Error::from(e.into_error()))?,
    )
    .expect("csv output is utf-8");
    Ok(csv_header_comment(cfg) + &body)
}
