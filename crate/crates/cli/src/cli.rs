//! Argument parsing and subcommand dispatch.
//!
//! Exit codes: 0 success (for `verify`: holds), 1 usage, parse or I/O
//! error, 2 `verify` fails, 3 `verify` indeterminate, 4 a checked invariant
//! or assertion failed.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use endorse_core::oracle::weight_distribution;
use endorse_core::prism;
use endorse_core::smc::{fixed_sample_test, simulate_histogram, RNG_ID};
use endorse_core::{
    build_dtmc, estimate_probability, exact_acceptance_probability, generate_rejection_spec,
    generate_spec, hypothesis_test, label_weights, parse_policy, required_samples, total_weight,
    verdict_exact, Decision, Execution, IntervalKind, Policy, ResultRecord, SimConfig,
};
use serde::Serialize;

use crate::experiments::{self, ExperimentError};
use crate::suite;

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_FAILS: i32 = 2;
pub const EXIT_INDETERMINATE: i32 = 3;
pub const EXIT_INVARIANT: i32 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "endorse-verify",
    version,
    about = "Verify weighted endorsement policies"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum IntervalArg {
    Hoeffding,
    Wald,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TestArg {
    Sprt,
    Fixed,
}

#[derive(Debug, Args)]
pub struct SmcArgs {
    #[arg(long, default_value_t = 10_000)]
    pub samples: u64,
    /// Estimation accuracy ε (also sets the SPRT cap, 10 × required samples).
    #[arg(long, default_value_t = 0.001)]
    pub accuracy: f64,
    /// Confidence parameter δ.
    #[arg(long, default_value_t = 0.01)]
    pub delta: f64,
    #[arg(long, default_value_t = 0.01)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.01)]
    pub beta: f64,
    /// Half-width of the SPRT indifference region.
    #[arg(long, default_value_t = 0.005)]
    pub indifference: f64,
    #[arg(long, env = "ENDORSE_VERIFY_SEED", default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 1000)]
    pub batch_size: u64,
    #[arg(long, value_enum, default_value_t = IntervalArg::Hoeffding)]
    pub interval: IntervalArg,
    /// Explicit SPRT sample cap.
    #[arg(long)]
    pub max_samples: Option<u64>,
    /// Run simulation batches on the current thread only.
    #[arg(long)]
    pub sequential: bool,
    /// Write the primary output here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl SmcArgs {
    pub fn config(&self) -> SimConfig {
        SimConfig {
            samples: self.samples,
            accuracy: self.accuracy,
            confidence_delta: self.delta,
            seed: self.seed,
            batch_size: self.batch_size,
            alpha: self.alpha,
            beta: self.beta,
            indifference_delta: self.indifference,
            interval: match self.interval {
                IntervalArg::Hoeffding => IntervalKind::Hoeffding,
                IntervalArg::Wald => IntervalKind::Wald,
            },
            max_samples: self.max_samples,
            execution: if self.sequential {
                Execution::Sequential
            } else {
                Execution::Parallel
            },
        }
    }
}

#[derive(Debug, Args)]
pub struct PolicyArgs {
    #[arg(long)]
    pub policy: PathBuf,
    /// Override the document's weight threshold.
    #[arg(long)]
    pub weight_threshold: Option<u64>,
    /// Override the document's probability threshold.
    #[arg(long)]
    pub probability_threshold: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Hypothesis test of `P > θ [ F accepted ]`, next to the exact verdict.
    Verify {
        #[command(flatten)]
        policy: PolicyArgs,
        #[command(flatten)]
        smc: SmcArgs,
        #[arg(long, value_enum, default_value_t = TestArg::Sprt)]
        test: TestArg,
    },
    /// Fixed-sample estimate of the acceptance probability.
    Estimate {
        #[command(flatten)]
        policy: PolicyArgs,
        #[command(flatten)]
        smc: SmcArgs,
    },
    /// CSV of acceptance probability per weight threshold.
    SweepWeight {
        #[command(flatten)]
        policy: PolicyArgs,
        #[command(flatten)]
        smc: SmcArgs,
        #[arg(long, default_value_t = 1)]
        w_min: u64,
        /// Defaults to total weight + 1.
        #[arg(long)]
        w_max: Option<u64>,
    },
    /// CSV of acceptance probability while one organization's acceptance probability varies.
    SweepOrgprob {
        #[command(flatten)]
        policy: PolicyArgs,
        #[command(flatten)]
        smc: SmcArgs,
        #[arg(long)]
        org: String,
        #[arg(long)]
        from: f64,
        #[arg(long)]
        to: f64,
        #[arg(long, default_value_t = 0.01)]
        step: f64,
    },
    /// Acceptance before and after one organization leaves.
    DropOrg {
        #[command(flatten)]
        policy: PolicyArgs,
        #[command(flatten)]
        smc: SmcArgs,
        #[arg(long)]
        org: String,
    },
    /// Write the model (`model.pm`) and property (`property.pctl`) in PRISM syntax.
    ExportPrism {
        #[command(flatten)]
        policy: PolicyArgs,
        #[arg(long)]
        out_dir: PathBuf,
        /// Export the rejection property instead of the acceptance property.
        #[arg(long)]
        rejection: bool,
    },
    /// Run the analytic cases, both invariants and the threshold table.
    PaperSuite {
        #[command(flatten)]
        smc: SmcArgs,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Histogram of simulated accepted weight against the exact distribution.
    Simulate {
        #[command(flatten)]
        policy: PolicyArgs,
        #[command(flatten)]
        smc: SmcArgs,
    },
}

/// Captured result of one invocation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outcome {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

impl Outcome {
    fn ok(stdout: String) -> Self {
        Self::with_code(EXIT_OK, stdout)
    }

    fn with_code(code: i32, stdout: String) -> Self {
        Self {
            code,
            stdout,
            stderr: String::new(),
        }
    }

    fn error(code: i32, msg: impl std::fmt::Display) -> Self {
        Self {
            code,
            stdout: String::new(),
            stderr: format!("error: {msg}\n"),
        }
    }
}

type CmdResult = Result<Outcome, Outcome>;

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run<I, T>(args: I) -> Outcome
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
            let text = e.render().to_string();
            return if code == EXIT_OK {
                Outcome::ok(text)
            } else {
                Outcome {
                    code,
                    stdout: String::new(),
                    stderr: text,
                }
            };
        }
    };
    match execute(cli.command) {
        Ok(o) | Err(o) => o,
    }
}

fn load_policy(args: &PolicyArgs) -> Result<Policy, Outcome> {
    let text = fs::read_to_string(&args.policy)
        .map_err(|e| Outcome::error(EXIT_ERROR, format!("{}: {e}", args.policy.display())))?;
    let mut policy = parse_policy(&text)
        .map_err(|e| Outcome::error(EXIT_ERROR, format!("{}: {e}", args.policy.display())))?;
    if let Some(w) = args.weight_threshold {
        policy = policy.with_weight_threshold(w);
    }
    if let Some(p) = args.probability_threshold {
        policy = policy
            .with_probability_threshold(p)
            .map_err(|e| Outcome::error(EXIT_ERROR, e))?;
    }
    Ok(policy)
}

fn checked_config(smc: &SmcArgs) -> Result<SimConfig, Outcome> {
    let cfg = smc.config();
    cfg.validate().map_err(|e| Outcome::error(EXIT_ERROR, e))?;
    Ok(cfg)
}

fn experiment_error(e: ExperimentError) -> Outcome {
    let code = match e {
        ExperimentError::Invariant(_) => EXIT_INVARIANT,
        _ => EXIT_ERROR,
    };
    Outcome::error(code, e)
}

/// Sends `text` to `--out` when given (echoing a one-line note), else stdout.
fn emit(out: &Option<PathBuf>, text: String, code: i32) -> CmdResult {
    match out {
        None => Ok(Outcome::with_code(code, text)),
        Some(path) => {
            fs::write(path, &text)
                .map_err(|e| Outcome::error(EXIT_ERROR, format!("{}: {e}", path.display())))?;
            Ok(Outcome::with_code(
                code,
                format!("wrote {}\n", path.display()),
            ))
        }
    }
}

fn json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report serializes") + "\n"
}

#[derive(Serialize)]
struct VerifyReport {
    #[serde(flatten)]
    record: ResultRecord,
    successes: u64,
    threshold: f64,
    indifference_lower: f64,
    indifference_upper: f64,
    indifference_clipped: bool,
    weight_threshold: u64,
    exact_p: f64,
    exact_decision: Decision,
}

#[derive(Serialize)]
struct EstimateReport {
    p_hat: f64,
    ci_halfwidth: f64,
    interval: IntervalKind,
    samples: u64,
    successes: u64,
    seed: u64,
    rng_id: &'static str,
    batch_size: u64,
    weight_threshold: u64,
    exact_p: f64,
    accuracy: f64,
    delta: f64,
    required_samples: u64,
}

#[derive(Serialize)]
struct HistogramRow {
    weight: u64,
    count: u64,
    empirical: f64,
    exact: f64,
}

fn execute(cmd: Command) -> CmdResult {
    match cmd {
        Command::Verify { policy, smc, test } => {
            let pol = load_policy(&policy)?;
            let cfg = checked_config(&smc)?;
            let res = match test {
                TestArg::Sprt => hypothesis_test(&pol, &cfg),
                TestArg::Fixed => fixed_sample_test(&pol, &cfg),
            }
            .map_err(|e| Outcome::error(EXIT_ERROR, e))?;
            let report = VerifyReport {
                record: ResultRecord::from_hypothesis(&res, &cfg),
                successes: res.successes,
                threshold: res.threshold,
                indifference_lower: res.lower,
                indifference_upper: res.upper,
                indifference_clipped: res.clipped,
                weight_threshold: pol.weight_threshold(),
                exact_p: exact_acceptance_probability(&pol),
                exact_decision: verdict_exact(&pol),
            };
            let code = match res.decision {
                Decision::Holds => EXIT_OK,
                Decision::Fails => EXIT_FAILS,
                Decision::Indeterminate => EXIT_INDETERMINATE,
            };
            let mut out = emit(&smc.out, json(&report), code)?;
            if res.clipped {
                out.stderr
                    .push_str("warning: indifference region clipped into (0, 1)\n");
            }
            Ok(out)
        }
        Command::Estimate { policy, smc } => {
            let pol = load_policy(&policy)?;
            let cfg = checked_config(&smc)?;
            let est =
                estimate_probability(&pol, &cfg).map_err(|e| Outcome::error(EXIT_ERROR, e))?;
            let report = EstimateReport {
                p_hat: est.p_hat,
                ci_halfwidth: est.ci_halfwidth,
                interval: est.interval,
                samples: est.samples_used,
                successes: est.successes,
                seed: cfg.seed,
                rng_id: RNG_ID,
                batch_size: cfg.batch_size,
                weight_threshold: pol.weight_threshold(),
                exact_p: exact_acceptance_probability(&pol),
                accuracy: cfg.accuracy,
                delta: cfg.confidence_delta,
                required_samples: required_samples(cfg.accuracy, cfg.confidence_delta)
                    .map_err(|e| Outcome::error(EXIT_ERROR, e))?,
            };
            emit(&smc.out, json(&report), EXIT_OK)
        }
        Command::SweepWeight {
            policy,
            smc,
            w_min,
            w_max,
        } => {
            let pol = load_policy(&policy)?;
            let cfg = checked_config(&smc)?;
            let w_max = w_max.unwrap_or(total_weight(&pol) + 1);
            let rows =
                experiments::sweep_weight(&pol, w_min, w_max, &cfg).map_err(experiment_error)?;
            let csv = experiments::to_csv(&cfg, &rows).map_err(experiment_error)?;
            emit(&smc.out, csv, EXIT_OK)
        }
        Command::SweepOrgprob {
            policy,
            smc,
            org,
            from,
            to,
            step,
        } => {
            let pol = load_policy(&policy)?;
            let cfg = checked_config(&smc)?;
            let rows = experiments::sweep_orgprob(&pol, &org, from, to, step, &cfg)
                .map_err(experiment_error)?;
            let pts: Vec<_> = rows
                .iter()
                .map(|r| (r.acceptance_prob, r.exact_p))
                .collect();
            let fit = experiments::fit_line(&pts);
            let csv = experiments::to_csv(&cfg, &rows).map_err(experiment_error)?;
            if fit.max_residual > suite::LINEARITY_TOLERANCE {
                let mut o = emit(&smc.out, csv, EXIT_INVARIANT)?;
                writeln!(
                    o.stderr,
                    "error: exact column deviates from a line by {}",
                    fit.max_residual
                )
                .unwrap();
                return Err(o);
            }
            emit(&smc.out, csv, EXIT_OK)
        }
        Command::DropOrg { policy, smc, org } => {
            let pol = load_policy(&policy)?;
            let cfg = checked_config(&smc)?;
            let report = experiments::drop_org(&pol, &org, &cfg).map_err(experiment_error)?;
            emit(&smc.out, json(&report), EXIT_OK)
        }
        Command::ExportPrism {
            policy,
            out_dir,
            rejection,
        } => {
            let pol = load_policy(&policy)?;
            let model = build_dtmc(&pol).map_err(|e| Outcome::error(EXIT_ERROR, e))?;
            let model = label_weights(model);
            let spec = if rejection {
                generate_rejection_spec(&model, &pol)
            } else {
                generate_spec(&model, &pol)
            };
            let art = prism::export(&model, &spec).map_err(|e| Outcome::error(EXIT_ERROR, e))?;
            let model_path = out_dir.join("model.pm");
            let prop_path = out_dir.join("property.pctl");
            write_files(
                &out_dir,
                &[
                    (&model_path, &art.model_text),
                    (&prop_path, &art.property_text),
                ],
            )?;
            Ok(Outcome::ok(format!(
                "wrote {}\nwrote {}\n{}\n",
                model_path.display(),
                prop_path.display(),
                spec.render()
            )))
        }
        Command::PaperSuite { smc, out_dir } => {
            let cfg = checked_config(&smc)?;
            let report = suite::run_suite(&cfg).map_err(experiment_error)?;
            let files = report.files();
            let paths: Vec<(PathBuf, &String)> = files
                .iter()
                .map(|(name, text)| (out_dir.join(name), *text))
                .collect();
            let refs: Vec<(&Path, &String)> =
                paths.iter().map(|(p, t)| (p.as_path(), *t)).collect();
            write_files(&out_dir, &refs)?;
            let code = if report.all_passed() {
                EXIT_OK
            } else {
                EXIT_INVARIANT
            };
            emit(&smc.out, report.summary.clone(), code)
        }
        Command::Simulate { policy, smc } => {
            let pol = load_policy(&policy)?;
            let cfg = checked_config(&smc)?;
            let hist = simulate_histogram(&pol, &cfg).map_err(|e| Outcome::error(EXIT_ERROR, e))?;
            let exact = weight_distribution(&pol);
            let rows: Vec<_> = hist
                .iter()
                .enumerate()
                .map(|(w, &count)| HistogramRow {
                    weight: w as u64,
                    count,
                    empirical: count as f64 / cfg.samples as f64,
                    exact: exact.mass(w as u64),
                })
                .collect();
            let csv = experiments::to_csv(&cfg, &rows).map_err(experiment_error)?;
            emit(&smc.out, csv, EXIT_OK)
        }
    }
}

fn write_files<P: AsRef<Path>>(dir: &Path, files: &[(P, &String)]) -> Result<(), Outcome> {
    fs::create_dir_all(dir)
        .map_err(|e| Outcome::error(EXIT_ERROR, format!("{}: {e}", dir.display())))?;
    for (path, text) in files {
        let path = path.as_ref();
        fs::write(path, text)
            .map_err(|e| Outcome::error(EXIT_ERROR, format!("{}: {e}", path.display())))?;
    }
    Ok(())
}
