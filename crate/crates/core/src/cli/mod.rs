//! Command-line front end.
//!
//! Every subcommand reads one TOML [`ExperimentConfig`], writes its outputs to
//! the configured directory and finishes with `manifest.json`, also on
//! failure. Exit codes: 0 when all gates pass, 1 on a failed gate or runtime
//! error, 2 on usage, config or I/O errors.
//!
//! Output schemas:
//!
//! | command      | file                  | format |
//! |--------------|-----------------------|--------|
//! | `train`      | `history.csv`         | `iter,theta_0..theta_{d-1},grad_norm,step,cumulative_transitions,return_mean,return_se` |
//! | `compare`    | `compare.csv`         | `iter,seed,return_wd,return_sf,diff` |
//! | `compare`    | `compare_summary.jsonl` | gates, per-seed finals, per-iteration bootstrap CIs |
//! | `eval`       | `eval.jsonl`          | one return estimate |
//! | `gradcheck`  | `gradcheck.jsonl`     | one verdict per (theta, estimator) |
//! | `variance`   | `variance.jsonl`      | two reports and one ordering verdict per theta |
//! | `complexity` | `complexity.jsonl`    | one verdict |
//!
//! Subtask seeds come from [`derive_seed`] and [`StreamFamily`] labels under
//! the master seed; `manifest.json` lists every derived seed.

pub mod config;
pub mod output;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::analysis::{
    evaluate_return, finite_difference_gradient, gradient_samples, sample_complexity_stats,
    variance_ordering, ReturnEstimate, VarianceReport,
};
use crate::env::{AnyEnv, EnvSpec};
use crate::error::Error;
use crate::estimator::EstimatorKind;
use crate::optimizer::{train, RunStatus, TrainConfig, TrainRun};
use crate::policy::{GaussianPolicy, ParamVector};
use crate::rng::{derive_seed, StreamFamily};
use crate::stats;

pub use config::ExperimentConfig;
use output::{unix_now, Cell, CsvTable, JsonLines, OutputDir, RunManifest};

#[derive(Debug, Parser)]
#[command(
    name = "pgjd",
    version,
    about = "Weak-derivative policy gradient experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Experiment config (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Override the master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Override the output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Worker threads (results do not depend on this).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Train one policy and write the evaluated learning curve.
    Train,
    /// Matched-seed weak-derivative vs score-function training.
    Compare,
    /// Evaluate the initial policy.
    Eval,
    /// Estimator means against the finite-difference oracle.
    Gradcheck,
    /// Estimator variances and the ordering test.
    Variance,
    /// Phantom transitions per iteration against the closed form.
    Complexity,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Self::Train => "train",
            Self::Compare => "compare",
            Self::Eval => "eval",
            Self::Gradcheck => "gradcheck",
            Self::Variance => "variance",
            Self::Complexity => "complexity",
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("usage: {0}")]
    Usage(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Core(Error::Config(_)) | Self::Usage(_) | Self::Io(_) => 2,
            Self::Core(_) => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommandReport {
    pub gates_passed: bool,
    pub out: PathBuf,
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run_parsed(&cli) {
        Ok(report) => {
            if report.gates_passed {
                eprintln!(
                    "{}: all gates passed ({})",
                    cli.command.name(),
                    report.out.display()
                );
                0
            } else {
                eprintln!(
                    "{}: gate failure, see {}",
                    cli.command.name(),
                    report.out.display()
                );
                1
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run_parsed(cli: &Cli) -> Result<CommandReport, CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Usage("--config <path> is required".into()))?;
    let mut config = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.out = out.clone();
    }
    execute(cli.command, &config, cli.workers)
}

/// Runs `command` and always writes `manifest.json` once the output
/// directory exists.
pub fn execute(
    command: Command,
    config: &ExperimentConfig,
    workers: Option<usize>,
) -> Result<CommandReport, CliError> {
    config.validate()?;
    let mut out = OutputDir::prepare(&config.out)?;
    let started = unix_now();
    let mut seeds = BTreeMap::new();

    let result = with_workers(workers, || {
        let mut ctx = Context {
            config,
            out: &mut out,
            seeds: &mut seeds,
        };
        match command {
            Command::Train => ctx.train(),
            Command::Compare => ctx.compare(),
            Command::Eval => ctx.eval(),
            Command::Gradcheck => ctx.gradcheck(),
            Command::Variance => ctx.variance(),
            Command::Complexity => ctx.complexity(),
        }
    });

    let manifest = RunManifest {
        command: command.name().to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        master_seed: config.seed,
        config: config.clone(),
        seeds,
        started_at_unix: started,
        finished_at_unix: unix_now(),
        outputs: out.inventory(),
        gates_passed: result.as_ref().ok().copied(),
        error: result.as_ref().err().map(|e| e.to_string()),
    };
    let text = serde_json::to_string(&manifest).expect("manifest serializes") + "\n";
    out.write("manifest.json", &text)?;

    let gates_passed = result?;
    Ok(CommandReport {
        gates_passed,
        out: out.root().to_path_buf(),
    })
}

fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> T {
    match workers {
        Some(n) if n > 0 => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        },
        _ => f(),
    }
}

/// Training seed of replicate `r`.
pub fn train_seed(master: u64, replicate: u64) -> u64 {
    derive_seed(master, "train", replicate)
}

/// Evaluation streams of replicate `r`, shared by every evaluation point and
/// both estimators of that replicate.
pub fn eval_family(master: u64, replicate: u64) -> StreamFamily {
    StreamFamily::new(master, "eval").indexed("replicate", replicate)
}

/// Update counts at which a learning curve is evaluated.
pub fn eval_points(iterations: u64, every: u64) -> Vec<u64> {
    let mut pts: Vec<u64> = (0..=iterations).step_by(every.max(1) as usize).collect();
    if pts.last() != Some(&iterations) {
        pts.push(iterations);
    }
    pts
}

/// Parameters after `n` updates; a diverged run stays at its last finite iterate.
fn theta_at(run: &TrainRun, n: u64) -> &ParamVector {
    let last_ok = match run.status {
        RunStatus::Completed => run.records.len(),
        RunStatus::Diverged { .. } => run.records.len() - 1,
    };
    run.theta_after((n as usize).min(last_ok))
}

struct Curve {
    run: TrainRun,
    returns: Vec<ReturnEstimate>,
}

fn train_and_evaluate(
    env: &AnyEnv,
    policy: &GaussianPolicy,
    cfg: &ExperimentConfig,
    train_cfg: &TrainConfig,
    eval: &StreamFamily,
    points: &[u64],
) -> Result<Curve, Error> {
    let run = train(env, policy, train_cfg)?;
    let returns = points
        .iter()
        .map(|&n| {
            let p = policy.with_theta(theta_at(&run, n).clone())?;
            evaluate_return(
                env,
                &p,
                cfg.analysis.n_traj,
                train_cfg.gamma,
                cfg.analysis.truncation_t,
                eval,
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Curve { run, returns })
}

#[derive(Serialize)]
struct Gate<'a, T: Serialize> {
    gate: &'a str,
    passed: bool,
    #[serde(flatten)]
    detail: T,
}

struct Context<'a> {
    config: &'a ExperimentConfig,
    out: &'a mut OutputDir,
    seeds: &'a mut BTreeMap<String, u64>,
}

impl Context<'_> {
    fn setup(&self) -> Result<(AnyEnv, GaussianPolicy), Error> {
        let env = self.config.build_env()?;
        let policy = self.config.build_policy(&env)?;
        Ok((env, policy))
    }

    fn train(&mut self) -> Result<bool, CliError> {
        let cfg = self.config;
        let (env, policy) = self.setup()?;
        let seed = train_seed(cfg.seed, 0);
        self.seeds.insert("train".into(), seed);
        let train_cfg = TrainConfig {
            seed,
            ..cfg.train.clone()
        };
        let points = eval_points(train_cfg.iterations, train_cfg.eval_every);
        let curve = train_and_evaluate(
            &env,
            &policy,
            cfg,
            &train_cfg,
            &eval_family(cfg.seed, 0),
            &points,
        )?;

        let d = policy.dim();
        let mut header = vec!["iter".to_string()];
        header.extend((0..d).map(|i| format!("theta_{i}")));
        header.extend(
            [
                "grad_norm",
                "step",
                "cumulative_transitions",
                "return_mean",
                "return_se",
            ]
            .iter()
            .map(|s| s.to_string()),
        );
        let mut table = CsvTable::new(&header);
        for (&n, ret) in points.iter().zip(&curve.returns) {
            let mut row = vec![Cell::Int(n)];
            row.extend(theta_at(&curve.run, n).iter().map(|&t| Cell::Float(t)));
            match n
                .checked_sub(1)
                .and_then(|i| curve.run.records.get(i as usize))
            {
                Some(rec) => row.extend([
                    Cell::Float(rec.grad.norm_sq().sqrt()),
                    Cell::Float(rec.step),
                    Cell::Int(rec.cumulative_transitions),
                ]),
                None if n == 0 => row.extend([Cell::Empty, Cell::Empty, Cell::Int(0)]),
                None => row.extend([Cell::Empty, Cell::Empty, Cell::Empty]),
            }
            row.extend([Cell::Float(ret.mean), Cell::Float(ret.std_error)]);
            table.row(&row);
        }
        self.out.write("history.csv", table.as_str())?;
        Ok(curve.run.status == RunStatus::Completed)
    }

    fn compare(&mut self) -> Result<bool, CliError> {
        let cfg = self.config;
        let (env, policy) = self.setup()?;
        let a = &cfg.analysis;
        let points = eval_points(cfg.train.iterations, cfg.train.eval_every);
        for r in 0..a.seeds {
            self.seeds
                .insert(format!("train#{r}"), train_seed(cfg.seed, r));
        }

        let replicates: Vec<(Curve, Curve)> = (0..a.seeds)
            .into_par_iter()
            .map(|r| {
                let eval = eval_family(cfg.seed, r);
                let seed = train_seed(cfg.seed, r);
                let run = |estimator| {
                    let tc = TrainConfig {
                        seed,
                        estimator,
                        ..cfg.train.clone()
                    };
                    train_and_evaluate(&env, &policy, cfg, &tc, &eval, &points)
                };
                Ok((run(EstimatorKind::Wd)?, run(EstimatorKind::Sf)?))
            })
            .collect::<Result<_, Error>>()?;

        let mut table = CsvTable::new(&["iter", "seed", "return_wd", "return_sf", "diff"]);
        for (r, (wd, sf)) in replicates.iter().enumerate() {
            for (i, &n) in points.iter().enumerate() {
                let (w, s) = (wd.returns[i].mean, sf.returns[i].mean);
                table.row(&[
                    Cell::Int(n),
                    Cell::Int(r as u64),
                    Cell::Float(w),
                    Cell::Float(s),
                    Cell::Float(w - s),
                ]);
            }
        }
        self.out.write("compare.csv", table.as_str())?;

        let last = points.len() - 1;
        let improvement: Vec<f64> = replicates
            .iter()
            .map(|(wd, _)| wd.returns[last].mean - wd.returns[0].mean)
            .collect();
        let final_diff: Vec<f64> = replicates
            .iter()
            .map(|(wd, sf)| wd.returns[last].mean - sf.returns[last].mean)
            .collect();
        let boot = StreamFamily::new(cfg.seed, "bootstrap");

        let mut lines = JsonLines::default();
        let improve_lb = stats::t_lower_bound(&improvement, a.ci_level);
        let improves = improve_lb > 0.0;
        lines.push(&Gate {
            gate: "wd_final_exceeds_initial",
            passed: improves,
            detail: json!({
                "initial_mean": stats::mean(&replicates.iter().map(|(w, _)| w.returns[0].mean).collect::<Vec<_>>()),
                "final_mean": stats::mean(&replicates.iter().map(|(w, _)| w.returns[last].mean).collect::<Vec<_>>()),
                "mean_improvement": stats::mean(&improvement),
                "one_sided_lower_bound": improve_lb,
                "level": a.ci_level,
                "seeds": a.seeds,
            }),
        });
        let ci = stats::bootstrap_mean_ci(
            &final_diff,
            a.bootstrap_resamples,
            a.ci_level,
            &mut boot.stream(0),
        );
        let sign = if ci.estimate > 0.0 {
            "positive"
        } else if ci.estimate < 0.0 {
            "negative"
        } else {
            "zero"
        };
        let wd_not_worse = ci.estimate >= 0.0;
        lines.push(&Gate {
            gate: "wd_minus_sf_final_sign",
            passed: wd_not_worse,
            detail: json!({ "mean_diff": ci.estimate, "ci": ci, "sign": sign }),
        });
        for (r, (wd, sf)) in replicates.iter().enumerate() {
            lines.push(&json!({
                "record": "replicate",
                "seed": r,
                "train_seed": train_seed(cfg.seed, r as u64),
                "initial_wd": wd.returns[0].mean,
                "final_wd": wd.returns[last].mean,
                "final_sf": sf.returns[last].mean,
                "final_theta_wd": wd.run.final_theta,
                "final_theta_sf": sf.run.final_theta,
                "status_wd": wd.run.status,
                "status_sf": sf.run.status,
            }));
        }
        for (i, &n) in points.iter().enumerate() {
            let diffs: Vec<f64> = replicates
                .iter()
                .map(|(wd, sf)| wd.returns[i].mean - sf.returns[i].mean)
                .collect();
            let ci = stats::bootstrap_mean_ci(
                &diffs,
                a.bootstrap_resamples,
                a.ci_level,
                &mut boot.stream(1 + n),
            );
            lines.push(&json!({ "record": "iteration_ci", "iter": n, "diff": ci }));
        }
        self.out.write("compare_summary.jsonl", lines.as_str())?;
        Ok(improves && wd_not_worse)
    }

    fn eval(&mut self) -> Result<bool, CliError> {
        let cfg = self.config;
        let (env, policy) = self.setup()?;
        let fam = eval_family(cfg.seed, 0);
        let est = evaluate_return(
            &env,
            &policy,
            cfg.analysis.n_traj,
            cfg.train.gamma,
            cfg.analysis.truncation_t,
            &fam,
        )?;
        let mut lines = JsonLines::default();
        lines.push(&json!({ "record": "return", "theta": policy.theta(), "estimate": est }));
        self.out.write("eval.jsonl", lines.as_str())?;
        Ok(true)
    }

    fn gradcheck(&mut self) -> Result<bool, CliError> {
        let cfg = self.config;
        let (env, base) = self.setup()?;
        let a = &cfg.analysis;
        let gamma = cfg.train.gamma;
        let mut lines = JsonLines::default();
        let mut all_pass = true;
        for (i, theta) in cfg.analysis_thetas(&base).into_iter().enumerate() {
            let policy = base.with_theta(theta)?;
            let fam = StreamFamily::new(cfg.seed, "gradcheck").indexed("theta", i as u64);
            let fd = finite_difference_gradient(
                &env,
                &policy,
                a.fd_h,
                a.fd_n,
                gamma,
                a.truncation_t,
                &fam.child("oracle"),
            )?;
            for kind in [EstimatorKind::Wd, EstimatorKind::Sf] {
                let samples = gradient_samples(
                    &env,
                    &policy,
                    kind,
                    a.gradcheck_n,
                    gamma,
                    cfg.train.estimator_options(),
                    &fam.child("estimates"),
                )?;
                let mean = samples.mean();
                let se = samples.std_error();
                let z: Vec<f64> = (0..mean.len())
                    .map(|j| {
                        let combined = (se[j] * se[j] + fd.std_error[j] * fd.std_error[j]).sqrt();
                        let gap = (mean[j] - fd.gradient[j]).abs();
                        if combined > 0.0 {
                            gap / combined
                        } else if gap == 0.0 {
                            0.0
                        } else {
                            f64::INFINITY
                        }
                    })
                    .collect();
                let passed = z.iter().all(|&z| z <= 3.0);
                all_pass &= passed;
                lines.push(&Gate {
                    gate: "unbiased_gradient",
                    passed,
                    detail: json!({
                        "kind": kind,
                        "theta": policy.theta(),
                        "n": a.gradcheck_n,
                        "estimate_mean": mean,
                        "estimate_se": se,
                        "oracle": fd.gradient,
                        "oracle_se": fd.std_error,
                        "z": z,
                        "threshold": 3.0,
                    }),
                });
            }
        }
        self.out.write("gradcheck.jsonl", lines.as_str())?;
        Ok(all_pass)
    }

    fn variance(&mut self) -> Result<bool, CliError> {
        let cfg = self.config;
        let (env, base) = self.setup()?;
        let a = &cfg.analysis;
        let gamma = cfg.train.gamma;
        let spec = EnvSpec::of(&env, gamma)?;
        let mut lines = JsonLines::default();
        let mut all_pass = true;
        for (i, theta) in cfg.analysis_thetas(&base).into_iter().enumerate() {
            let policy = base.with_theta(theta)?;
            let fam = StreamFamily::new(cfg.seed, "variance").indexed("theta", i as u64);
            let opts = cfg.train.estimator_options();
            if a.variance_n < crate::analysis::MIN_VARIANCE_SAMPLES {
                return Err(Error::Config(format!(
                    "analysis.variance_n must be at least {}",
                    crate::analysis::MIN_VARIANCE_SAMPLES
                ))
                .into());
            }
            let wd = gradient_samples(
                &env,
                &policy,
                EstimatorKind::Wd,
                a.variance_n,
                gamma,
                opts,
                &fam.child("estimates"),
            )?;
            let sf = gradient_samples(
                &env,
                &policy,
                EstimatorKind::Sf,
                a.variance_n,
                gamma,
                opts,
                &fam.child("estimates"),
            )?;
            let wd_report = VarianceReport::from_samples(&wd, policy.theta(), &spec);
            let sf_report = VarianceReport::from_samples(&sf, policy.theta(), &spec);
            let ordering = variance_ordering(
                &wd,
                &sf,
                a.bootstrap_resamples,
                a.variance_confidence,
                &fam.child("bootstrap"),
            )?;
            all_pass &= ordering.passed;
            lines.push(&json!({ "record": "variance_report", "report": wd_report }));
            lines.push(&json!({ "record": "variance_report", "report": sf_report }));
            lines.push(&Gate {
                gate: "variance_ordering",
                passed: ordering.passed,
                detail: json!({
                    "theta": policy.theta(),
                    "test": ordering,
                    "g_wd_over_g_sf_score": wd.g.wd_over_sf_score(),
                    "g_wd_over_g_sf_density": wd.g.wd_over_sf_density(),
                    "reference_ratio_one_over_two_pi": 1.0 / (2.0 * std::f64::consts::PI),
                }),
            });
        }
        self.out.write("variance.jsonl", lines.as_str())?;
        Ok(all_pass)
    }

    fn complexity(&mut self) -> Result<bool, CliError> {
        let cfg = self.config;
        let (env, policy) = self.setup()?;
        let seed = derive_seed(cfg.seed, "complexity", 0);
        self.seeds.insert("complexity".into(), seed);
        let tc = TrainConfig {
            seed,
            iterations: cfg.analysis.complexity_iterations,
            estimator: EstimatorKind::Wd,
            ..cfg.train.clone()
        };
        let run = train(&env, &policy, &tc)?;
        let s = sample_complexity_stats(&run.records, tc.gamma)?;
        let tolerance = 3.0 * s.predicted_sd / (s.iterations as f64).sqrt();
        let passed = (s.mean_per_iter - s.predicted).abs() <= tolerance
            && run.status == RunStatus::Completed;
        let mut lines = JsonLines::default();
        lines.push(&Gate {
            gate: "sample_complexity",
            passed,
            detail: json!({
                "stats": s,
                "tolerance": tolerance,
                "status": run.status,
                "note": "predicted counts T+1 transitions per rollout; the (1+gamma)/(1-gamma) form counts T",
            }),
        });
        self.out.write("complexity.jsonl", lines.as_str())?;
        Ok(passed)
    }
}
