//! The full reproduction run behind `paper-suite`: analytic cases,
//! invariants 1 and 2, and the weight-threshold table, each written as CSV
//! with a plain-text summary of every check.

use std::fmt::Write as _;

use endorse_core::oracle::enumerate_distribution;
use endorse_core::smc::RNG_ID;
use endorse_core::{exact_acceptance_probability, hypothesis_test, Decision, SimConfig};
use serde::Serialize;

use crate::experiments::{
    analytic_cases, drop_org, fit_line, reference_policy, sweep_orgprob, sweep_weight, to_csv,
    ExperimentError, REFERENCE_TABLE, REFERENCE_TOLERANCE,
};

/// Maximum deviation of the exact probability sweep from its fitted line.
pub const LINEARITY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableRow {
    pub weight_threshold: u64,
    pub exact_p: f64,
    pub p_hat: f64,
    pub ci_halfwidth: f64,
    pub samples: u64,
    pub seed: u64,
    pub reference_p: f64,
    pub reference_halfwidth: f64,
    pub abs_diff: f64,
    /// Rows 1–3 sit next to 1 where the reference values are non-monotone
    /// sampling noise; they are reported but not asserted.
    pub asserted: bool,
    pub within_tolerance: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub checks: Vec<Check>,
    pub analytic_csv: String,
    pub table_csv: String,
    pub invariant1_csv: String,
    pub invariant2_csv: String,
    pub summary: String,
}

impl SuiteReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn files(&self) -> [(&'static str, &String); 5] {
        [
            ("analytic_cases.csv", &self.analytic_csv),
            ("weight_threshold_table.csv", &self.table_csv),
            ("invariant1_orgprob.csv", &self.invariant1_csv),
            ("invariant2_drop.csv", &self.invariant2_csv),
            ("summary.txt", &self.summary),
        ]
    }
}

fn check(checks: &mut Vec<Check>, name: &str, passed: bool, detail: String) {
    checks.push(Check {
        name: name.to_owned(),
        passed,
        detail,
    });
}

pub fn run_suite(cfg: &SimConfig) -> Result<SuiteReport, ExperimentError> {
    let base = reference_policy();
    let mut checks = Vec::new();

    let cases = analytic_cases(cfg)?;
    for c in &cases {
        check(
            &mut checks,
            &format!("analytic case {}", c.case),
            c.exact_matches && c.estimate_within_ci,
            format!(
                "{}: expected {}, exact {}, estimate {} ± {}",
                c.description, c.expected, c.exact_p, c.p_hat, c.ci_halfwidth
            ),
        );
    }

    let exact = exact_acceptance_probability(&base);
    let brute = enumerate_distribution(&base).tail(base.weight_threshold());
    let sprt = hypothesis_test(&base, cfg)?;
    check(
        &mut checks,
        "base policy",
        (exact - 0.9702).abs() <= 1e-12 && (exact - brute).abs() <= 1e-12,
        format!("exact {exact}, enumeration {brute}"),
    );
    check(
        &mut checks,
        "base policy sprt",
        sprt.decision == Decision::Holds,
        format!(
            "decision {} after {} samples (p_hat {})",
            sprt.decision.as_str(),
            sprt.samples_used,
            sprt.p_hat()
        ),
    );

    let sweep = sweep_weight(&base, 1, 7, cfg)?;
    let mut table = Vec::new();
    for (row, &(th, reference_p, reference_halfwidth)) in sweep.iter().zip(&REFERENCE_TABLE) {
        debug_assert_eq!(row.weight_threshold, th);
        let abs_diff = (row.exact_p - reference_p).abs();
        table.push(TableRow {
            weight_threshold: th,
            exact_p: row.exact_p,
            p_hat: row.p_hat,
            ci_halfwidth: row.ci_halfwidth,
            samples: row.samples,
            seed: row.seed,
            reference_p,
            reference_halfwidth,
            abs_diff,
            asserted: th >= 4,
            within_tolerance: abs_diff <= REFERENCE_TOLERANCE,
        });
    }
    let enumerated_ok = sweep.iter().all(|r| {
        let e = enumerate_distribution(&base).tail(r.weight_threshold);
        (e - r.exact_p).abs() <= 1e-12
    });
    check(
        &mut checks,
        "threshold table exact column",
        enumerated_ok,
        format!(
            "exact {:?}",
            sweep.iter().map(|r| r.exact_p).collect::<Vec<_>>()
        ),
    );
    let asserted_ok = table
        .iter()
        .filter(|r| r.asserted)
        .all(|r| r.within_tolerance);
    check(
        &mut checks,
        "threshold table vs reference (thresholds 4-7)",
        asserted_ok,
        format!(
            "max |exact - reference| {:.6} (tolerance {REFERENCE_TOLERANCE})",
            table
                .iter()
                .filter(|r| r.asserted)
                .map(|r| r.abs_diff)
                .fold(0.0, f64::max)
        ),
    );

    let inv1 = sweep_orgprob(&base, "O3", 0.98, 0.79, 0.01, cfg)?;
    let pts: Vec<_> = inv1
        .iter()
        .map(|r| (r.acceptance_prob, r.exact_p))
        .collect();
    let fit = fit_line(&pts);
    let decreasing = inv1.windows(2).all(|w| w[1].exact_p <= w[0].exact_p);
    check(
        &mut checks,
        "invariant 1 (linear in O3 acceptance)",
        fit.max_residual <= LINEARITY_TOLERANCE && (fit.slope - 0.99).abs() <= 1e-9 && decreasing,
        format!(
            "{} points, slope {}, intercept {:e}, max residual {:e}",
            inv1.len(),
            fit.slope,
            fit.intercept,
            fit.max_residual
        ),
    );

    let mut drops = Vec::new();
    for org in base.organizations() {
        drops.push(drop_org(&base, org.id(), cfg)?);
    }
    let o1 = &drops[0];
    check(
        &mut checks,
        "invariant 2 (O1 irrelevant)",
        o1.exact_after == o1.exact_before,
        format!(
            "exact {} -> {}, estimate {} -> {}",
            o1.exact_before, o1.exact_after, o1.p_hat_before, o1.p_hat_after
        ),
    );
    check(
        &mut checks,
        "invariant 2 (removal never helps)",
        drops.iter().all(|d| d.exact_after <= d.exact_before),
        drops
            .iter()
            .map(|d| {
                format!(
                    "{}: {} -> {}",
                    d.dropped_org_id, d.exact_before, d.exact_after
                )
            })
            .collect::<Vec<_>>()
            .join(", "),
    );

    let mut summary = String::new();
    writeln!(
        summary,
        "# seed={} rng={} samples={} batch_size={} accuracy={} delta={}",
        cfg.seed, RNG_ID, cfg.samples, cfg.batch_size, cfg.accuracy, cfg.confidence_delta
    )
    .unwrap();
    for c in &checks {
        let tag = if c.passed { "PASS" } else { "FAIL" };
        writeln!(summary, "{tag} {}: {}", c.name, c.detail).unwrap();
    }
    for r in table.iter().filter(|r| !r.asserted) {
        let se = (r.exact_p * (1.0 - r.exact_p) / cfg.samples as f64).sqrt();
        writeln!(
            summary,
            "NOTE threshold {}: reference {} vs exact {} ({:.1} standard errors at {} samples); \
             reference values near 1 are non-monotone in the threshold and are not asserted",
            r.weight_threshold,
            r.reference_p,
            r.exact_p,
            r.abs_diff / se,
            cfg.samples
        )
        .unwrap();
    }

    Ok(SuiteReport {
        analytic_csv: to_csv(cfg, &cases)?,
        table_csv: to_csv(cfg, &table)?,
        invariant1_csv: to_csv(cfg, &inv1)?,
        invariant2_csv: to_csv(cfg, &drops)?,
        summary,
        checks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_suite_passes() {
        let report = run_suite(&SimConfig::default()).unwrap();
        for c in &report.checks {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
        assert!(report.summary.contains("NOTE threshold 1"));
        assert_eq!(report.table_csv.lines().count(), 1 + 1 + 7);
    }

    #[test]
    fn suite_is_deterministic() {
        let cfg = SimConfig {
            seed: 99,
            ..SimConfig::default()
        };
        assert_eq!(run_suite(&cfg).unwrap(), run_suite(&cfg).unwrap());
    }
}
