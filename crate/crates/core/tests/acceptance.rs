//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fails.
//!
//! Criterion 8 reruns 1-7 with the same seeds and compares every emitted
//! file byte for byte (run manifests carry timestamps and are excluded).

mod common;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use common::{adaptive_simpson, settings};
use pgjd::cli::{execute, Command, ExperimentConfig};
use pgjd::env::{ConstReward, EnvState};
use pgjd::estimator::{rollout_return, sample_horizon};
use pgjd::policy::{gaussian_density, Component, FeatureMap, GaussianPolicy, ParamVector};
use pgjd::rng::StreamFamily;

const MASTER: u64 = 20_240_601;

struct Outcome {
    id: &'static str,
    title: &'static str,
    passed: bool,
    detail: String,
    elapsed: Duration,
    budget: Option<Duration>,
}

impl Outcome {
    fn ok(&self) -> bool {
        self.passed && self.budget.is_none_or(|b| self.elapsed <= b)
    }

    fn print(&self) {
        let budget = match self.budget {
            Some(b) => format!("{:.2}s / {}s", self.elapsed.as_secs_f64(), b.as_secs()),
            None => format!("{:.2}s", self.elapsed.as_secs_f64()),
        };
        println!(
            "{} [{}] {}: {} ({budget})",
            if self.ok() { "PASS" } else { "FAIL" },
            self.id,
            self.title,
            self.detail
        );
    }
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn load(name: &str, out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::load(&configs().join(name)).expect("shipped config parses");
    cfg.out = out.to_path_buf();
    cfg
}

fn jsonl(path: &Path) -> Vec<serde_json::Value> {
    fs::read_to_string(path)
        .unwrap_or_default()
        .lines()
        .map(|l| serde_json::from_str(l).expect("valid json line"))
        .collect()
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let v = f();
    (v, start.elapsed())
}

fn horizon_law(out: &Path) -> (bool, String) {
    let fam = StreamFamily::new(MASTER, "acceptance-horizon");
    let mut rng = fam.stream(0);
    let n = 1_000_000;
    let mean = (0..n)
        .map(|_| sample_horizon(0.97, &mut rng) as f64)
        .sum::<f64>()
        / n as f64;
    let mut rng = fam.stream(1);
    let tail = (0..n)
        .filter(|_| sample_horizon(0.9, &mut rng) >= 10)
        .count() as f64
        / n as f64;
    let passed = (mean - 32.333).abs() <= 0.15 && (tail - 0.34867).abs() <= 0.002;
    let detail = format!("mean(T | 0.97) = {mean:.4} vs 32.333 +- 0.15, P(T >= 10 | 0.9) = {tail:.5} vs 0.34867 +- 0.002");
    fs::write(out.join("horizon.txt"), format!("{mean:e} {tail:e}\n")).unwrap();
    (passed, detail)
}

fn const_rollouts(out: &Path) -> (bool, String) {
    let fam = StreamFamily::new(MASTER, "acceptance-rollout");
    let policy = GaussianPolicy::new(vec![0.0].into(), 1.0, FeatureMap::Bias).unwrap();
    let n = 100_000;
    let total: f64 = (0..n)
        .map(|i| {
            let mut rng = fam.stream(i);
            let t = sample_horizon(0.9, &mut rng);
            rollout_return(&ConstReward, &EnvState::empty(), 0.0, &policy, t, &mut rng)
                .unwrap()
                .path_reward
        })
        .sum();
    let mean = total / n as f64;
    fs::write(out.join("rollout.txt"), format!("{mean:e}\n")).unwrap();
    (
        (mean - 10.0).abs() <= 0.3,
        format!("mean return {mean:.4} vs 10 +- 0.3"),
    )
}

fn jordan_identity(out: &Path) -> (bool, String) {
    let h = 1e-5;
    let mut worst_rel: f64 = 0.0;
    let mut worst_mass: f64 = 0.0;
    let mut checked = 0;
    let mut log = String::new();
    for (features, theta, x, sigma) in settings() {
        let policy =
            GaussianPolicy::new(ParamVector(theta.clone()), sigma, features.clone()).unwrap();
        let pair = policy.jordan_decompose(&x).unwrap();
        let phi = features.evaluate(&x).unwrap();
        let mean = policy.mean(&x).unwrap();
        for j in 0..401 {
            let a = mean - 8.0 * sigma + 16.0 * sigma * j as f64 / 400.0;
            let analytic = pair.signed_derivative(a);
            for i in 0..theta.len() {
                let shifted = |d: f64| -> f64 {
                    let m: f64 = theta
                        .iter()
                        .zip(phi.iter())
                        .map(|(t, p)| t * p)
                        .sum::<f64>()
                        + d * phi[i];
                    gaussian_density(a, m, sigma)
                };
                let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
                if fd.abs() > 1e-8 {
                    worst_rel = worst_rel.max((analytic[i] - fd).abs() / fd.abs());
                    checked += 1;
                }
            }
        }
        let m = pair.mean;
        let plus = adaptive_simpson(
            &|a| pair.density(a, Component::Positive),
            m,
            m + 12.0 * sigma,
            1e-12,
        );
        let minus = adaptive_simpson(
            &|a| pair.density(a, Component::Negative),
            m - 12.0 * sigma,
            m,
            1e-12,
        );
        worst_mass = worst_mass.max((plus - 1.0).abs()).max((minus - 1.0).abs());
        writeln!(log, "{plus:e} {minus:e}").unwrap();
    }
    writeln!(log, "{worst_rel:e} {checked}").unwrap();
    fs::write(out.join("jordan.txt"), log).unwrap();
    (
        worst_rel <= 1e-5 && worst_mass <= 1e-6,
        format!("max relative error {worst_rel:.2e} over {checked} points, max |mass - 1| {worst_mass:.2e}"),
    )
}

fn cli_gate(command: Command, config: &str, out: &Path) -> bool {
    let cfg = load(config, out);
    match execute(command, &cfg, None) {
        Ok(report) => report.gates_passed,
        Err(e) => {
            println!("    error: {e}");
            false
        }
    }
}

fn unbiasedness(out: &Path) -> (bool, String) {
    let passed = cli_gate(Command::Gradcheck, "bandit.toml", out);
    let mut detail = Vec::new();
    for v in jsonl(&out.join("gradcheck.jsonl")) {
        detail.push(format!(
            "{}@{}: z={:.2}",
            v["kind"].as_str().unwrap_or("?"),
            v["theta"][0],
            v["z"][0].as_f64().unwrap_or(f64::NAN)
        ));
    }
    (
        passed && detail.len() == 6,
        format!("{} (gate z <= 3)", detail.join(", ")),
    )
}

fn variance(out: &Path) -> (bool, String) {
    let passed = cli_gate(Command::Variance, "bandit.toml", out);
    let mut detail = Vec::new();
    let mut ratio = f64::NAN;
    for v in jsonl(&out.join("variance.jsonl")) {
        if v["gate"] == "variance_ordering" {
            detail.push(format!(
                "theta={}: tr WD {:.1} < tr SF {:.1} (99% lb of gap {:.1})",
                v["theta"][0],
                v["test"]["trace_wd"].as_f64().unwrap(),
                v["test"]["trace_sf"].as_f64().unwrap(),
                v["test"]["lower_bound"].as_f64().unwrap()
            ));
            ratio = v["g_wd_over_g_sf_score"].as_f64().unwrap();
        }
    }
    let n = detail.len();
    detail.push(format!(
        "reported G_wd/G_sf = {ratio:.6} vs 1/(2 pi) = {:.6}",
        1.0 / (2.0 * std::f64::consts::PI)
    ));
    (passed && n == 3, detail.join("; "))
}

fn complexity(out: &Path) -> (bool, String) {
    let passed = cli_gate(Command::Complexity, "bandit.toml", out);
    let v = jsonl(&out.join("complexity.jsonl"))
        .pop()
        .unwrap_or_default();
    let measured = v["stats"]["mean_per_iter"].as_f64().unwrap_or(f64::NAN);
    let ok = passed && (measured - 20.0).abs() <= 0.6;
    (
        ok,
        format!(
            "mean phantom transitions {measured:.3} vs 20 +- 0.6 (T-counting form {})",
            v["stats"]["t_convention"]
        ),
    )
}

fn pendulum(out: &Path) -> [(bool, String); 2] {
    cli_gate(Command::Compare, "pendulum_pgjd.toml", out);
    let records = jsonl(&out.join("compare_summary.jsonl"));
    let gate = |name: &str| {
        records
            .iter()
            .find(|r| r["gate"] == name)
            .cloned()
            .unwrap_or_default()
    };
    let a = gate("wd_final_exceeds_initial");
    let b = gate("wd_minus_sf_final_sign");
    [
        (
            a["passed"] == true,
            format!(
                "WD initial {:.2} -> final {:.2}, 95% lower bound of improvement {:.3}",
                a["initial_mean"].as_f64().unwrap_or(f64::NAN),
                a["final_mean"].as_f64().unwrap_or(f64::NAN),
                a["one_sided_lower_bound"].as_f64().unwrap_or(f64::NAN)
            ),
        ),
        (
            b["passed"] == true,
            format!(
                "final WD - SF = {:.2}, 95% bootstrap CI [{:.2}, {:.2}], sign {}",
                b["mean_diff"].as_f64().unwrap_or(f64::NAN),
                b["ci"]["lower"].as_f64().unwrap_or(f64::NAN),
                b["ci"]["upper"].as_f64().unwrap_or(f64::NAN),
                b["sign"].as_str().unwrap_or("missing")
            ),
        ),
    ]
}

/// Runs criteria 1-7 into `root`, one subdirectory each.
fn run_all(root: &Path) -> Vec<Outcome> {
    let dir = |name: &str| {
        let p = root.join(name);
        fs::create_dir_all(&p).unwrap();
        p
    };
    let secs = Duration::from_secs;
    let mut outcomes = Vec::new();
    let mut push = |id, title, budget, run: &dyn Fn() -> (bool, String)| {
        let ((passed, detail), elapsed) = timed(run);
        outcomes.push(Outcome {
            id,
            title,
            passed,
            detail,
            elapsed,
            budget: Some(budget),
        });
    };
    push("1", "geometric horizon law", secs(5), &|| {
        horizon_law(&dir("1"))
    });
    push("2", "unbiased random-horizon return", secs(10), &|| {
        const_rollouts(&dir("2"))
    });
    push("3", "Jordan decomposition identity", secs(1), &|| {
        jordan_identity(&dir("3"))
    });
    push("4", "gradient unbiasedness", secs(120), &|| {
        unbiasedness(&dir("4"))
    });
    push("5", "variance ordering", secs(60), &|| variance(&dir("5")));
    push("6", "sample complexity accounting", secs(120), &|| {
        complexity(&dir("6"))
    });

    let ([a, b], elapsed) = timed(|| pendulum(&dir("7")));
    let budget = Some(secs(30 * 60));
    outcomes.push(Outcome {
        id: "7a",
        title: "pendulum: PG-JD improves",
        passed: a.0,
        detail: a.1,
        elapsed,
        budget,
    });
    outcomes.push(Outcome {
        id: "7b",
        title: "pendulum: PG-JD vs PG-SF sign",
        passed: b.0,
        detail: b.1,
        elapsed,
        budget,
    });
    outcomes
}

fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().is_some_and(|n| n != "manifest.json") {
                files.insert(
                    p.strip_prefix(root).unwrap().to_path_buf(),
                    fs::read(&p).unwrap(),
                );
            }
        }
    }
    files
}

fn main() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let first = tmp.path().join("first");
    let second = tmp.path().join("second");

    let mut outcomes = run_all(&first);
    for o in &outcomes {
        o.print();
    }

    let (rerun, elapsed) = timed(|| {
        run_all(&second);
        (snapshot(&first), snapshot(&second))
    });
    let (a, b) = rerun;
    let differing: Vec<String> = a
        .keys()
        .chain(b.keys())
        .filter(|k| a.get(*k) != b.get(*k))
        .map(|k| k.display().to_string())
        .collect();
    let det = Outcome {
        id: "8",
        title: "determinism",
        passed: differing.is_empty() && !a.is_empty(),
        detail: if differing.is_empty() {
            format!("{} output files byte-identical across reruns", a.len())
        } else {
            format!("differing files: {}", differing.join(", "))
        },
        elapsed,
        budget: None,
    };
    det.print();
    outcomes.push(det);

    let failed = outcomes.iter().filter(|o| !o.ok()).count();
    println!(
        "acceptance: {} passed, {failed} failed",
        outcomes.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
