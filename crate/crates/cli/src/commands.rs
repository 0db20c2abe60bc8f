use std::fmt::Write as _;

use nys_sink::benchmark::{time_to_accuracy, uniform_cube_instance, Method, RankChoice};
use nys_sink::pipeline::{stage_rng, Stream};
use nys_sink::reference::reference_w_eta_with_cap;
use nys_sink::validation::{run_all, SuiteOutcome, ValidationConfig};
use nys_sink::{merge_supports, solve, Error, Problem, SolverConfig};
use serde::Serialize;

use crate::config::{CliConfig, RankSpec};
use crate::error::{CliError, Result};
use crate::io::{emit, load_point_cloud};

/// Tolerance of the dense reference value in benchmark runs.
pub const REFERENCE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WallTimesOutput {
    pub nystrom_ms: f64,
    pub sinkhorn_ms: f64,
    pub round_ms: f64,
    pub total_ms: f64,
}

/// The JSON document written by `compute`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComputeOutput {
    pub w_hat: f64,
    pub rank: usize,
    pub eps_prime: f64,
    pub tau: f64,
    pub sinkhorn_iterations: usize,
    pub nystrom_rounds: usize,
    pub retries: usize,
    pub marginal_violation: f64,
    pub wall_times: WallTimesOutput,
    pub seed: u64,
    pub eta: f64,
    pub eps: f64,
    pub n: usize,
    pub d: usize,
}

/// One line of the `benchmark` CSV.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchmarkRow {
    pub method: &'static str,
    pub eta: f64,
    pub rank: usize,
    pub repeat: usize,
    pub elapsed_ms: f64,
    pub abs_error_vs_reference: f64,
    pub n: usize,
    pub d: usize,
    pub seed: u64,
}

fn solver_config(cfg: &CliConfig) -> SolverConfig {
    SolverConfig {
        seed: cfg.seed,
        r_max: cfg.r_max,
        dense_cap: cfg.dense_cap,
        max_retries: cfg.max_retries,
        max_sinkhorn_iters: cfg.max_iters,
        ..SolverConfig::default()
    }
}

fn load_instance(cfg: &CliConfig, eta: f64) -> Result<Problem> {
    let (Some(a), Some(b)) = (&cfg.points_a, &cfg.points_b) else {
        return Err(CliError::Config("--points-a and --points-b are both required".into()));
    };
    let a = load_point_cloud(a)?;
    let b = load_point_cloud(b)?;
    Ok(merge_supports(&a, &b, eta, cfg.eps)?)
}

pub fn compute(cfg: &CliConfig) -> Result<ComputeOutput> {
    let instance = load_instance(cfg, cfg.eta)?;
    log::info!("solving n = {}, d = {}, η = {}, ε = {}", instance.len(), instance.dim(), cfg.eta, cfg.eps);
    let sol = solve(&instance, &solver_config(cfg))?;
    let r = sol.report;
    if r.dense_fallback {
        log::warn!("fell back to the exact kernel");
    }
    if r.eta_out_of_range {
        log::warn!("η = {} lies outside [1, n]; the accuracy guarantee may not hold", cfg.eta);
    }
    Ok(ComputeOutput {
        w_hat: r.w_hat,
        rank: r.rank,
        eps_prime: r.eps_prime,
        tau: r.tau,
        sinkhorn_iterations: r.sinkhorn_iterations,
        nystrom_rounds: r.nystrom_rounds,
        retries: r.retries,
        marginal_violation: r.marginal_violation,
        wall_times: WallTimesOutput {
            nystrom_ms: r.wall_times.nystrom_ms,
            sinkhorn_ms: r.wall_times.sinkhorn_ms,
            round_ms: r.wall_times.round_ms,
            total_ms: r.wall_times.total_ms,
        },
        seed: cfg.seed,
        eta: cfg.eta,
        eps: cfg.eps,
        n: instance.len(),
        d: instance.dim(),
    })
}

pub fn run_compute(cfg: &CliConfig) -> Result<()> {
    let out = compute(cfg)?;
    emit(cfg.output.as_deref(), &(serde_json::to_string_pretty(&out)? + "\n"))
}

/// Runs the benchmark grid. Both methods are timed on the same instance for
/// every `(η, rank, repeat)`; the dense method ignores the rank and reports
/// the support size instead. Repeat `k` samples landmarks from seed `seed + k`.
pub fn benchmark(cfg: &CliConfig) -> Result<Vec<BenchmarkRow>> {
    let first_eta = cfg.etas[0];
    let base = if cfg.points_a.is_some() || cfg.points_b.is_some() {
        load_instance(cfg, first_eta)?
    } else {
        uniform_cube_instance(cfg.n, cfg.d, first_eta, cfg.eps, false, &mut stage_rng(cfg.seed, Stream::Instance))?
    };
    let (n, d) = (base.len(), base.dim());
    if n > cfg.dense_cap {
        return Err(Error::Capacity { requested: n, cap: cfg.dense_cap }.into());
    }

    let mut rows = Vec::new();
    for &eta in &cfg.etas {
        let instance = base.with_params(eta, cfg.eps)?;
        let (reference, _) = reference_w_eta_with_cap(&instance, REFERENCE_TOL, cfg.dense_cap)?;
        log::info!("η = {eta}: reference W_η = {reference}");
        for &rank in &cfg.ranks {
            let choice = match rank {
                RankSpec::Auto => RankChoice::Adaptive,
                RankSpec::Fixed(r) => RankChoice::Fixed(r),
            };
            for repeat in 0..cfg.repeats {
                for method in [Method::DenseSinkhorn, Method::NysSink] {
                    let mut rng = stage_rng(cfg.seed.wrapping_add(repeat as u64), Stream::Nystrom);
                    let run = time_to_accuracy(&instance, method, choice, reference, cfg.target, cfg.dense_cap, &mut rng)?;
                    if !run.reached {
                        log::warn!("{} at η = {eta}, rank {} did not reach the target", method.name(), run.rank);
                    }
                    rows.push(BenchmarkRow {
                        method: method.name(),
                        eta,
                        rank: run.rank,
                        repeat,
                        elapsed_ms: run.elapsed_ms,
                        abs_error_vs_reference: run.abs_error,
                        n,
                        d,
                        seed: cfg.seed,
                    });
                }
            }
        }
    }
    Ok(rows)
}

pub fn benchmark_csv(rows: &[BenchmarkRow]) -> Result<String> {
    let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    for row in rows {
        out.serialize(row)?;
    }
    if rows.is_empty() {
        out.write_record(["method", "eta", "rank", "repeat", "elapsed_ms", "abs_error_vs_reference", "n", "d", "seed"])?;
    }
    let bytes = out.into_inner().map_err(|e| CliError::io("<csv>", e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("CSV output is ASCII"))
}

pub fn run_benchmark(cfg: &CliConfig) -> Result<()> {
    let rows = benchmark(cfg)?;
    emit(cfg.output.as_deref(), &benchmark_csv(&rows)?)
}

pub fn validate(cfg: &CliConfig) -> Vec<SuiteOutcome> {
    run_all(&ValidationConfig {
        seed: cfg.seed,
        samples: cfg.samples,
        skip_rounding: cfg.skip_rounding,
        ..ValidationConfig::default()
    })
}

pub fn validation_table(outcomes: &[SuiteOutcome]) -> String {
    let mut s = format!("{:<26} {:>8} {:>10} {:>12}  result\n", "suite", "samples", "violations", "worst");
    for o in outcomes {
        let _ = writeln!(
            s,
            "{:<26} {:>8} {:>10} {:>12.3e}  {}",
            o.suite.id(),
            o.samples,
            o.violations,
            o.worst_excess,
            if o.passed() { "PASS" } else { "FAIL" }
        );
    }
    s
}

/// Returns the ids of the failing suites.
pub fn run_validate(cfg: &CliConfig) -> Result<Vec<&'static str>> {
    let outcomes = validate(cfg);
    emit(cfg.output.as_deref(), &validation_table(&outcomes))?;
    for o in outcomes.iter().filter(|o| !o.passed()) {
        if let Some(e) = &o.first_error {
            log::error!("{}: {e}", o.suite.id());
        }
    }
    Ok(outcomes.iter().filter(|o| !o.passed()).map(|o| o.suite.id()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nys_sink::{PointSet, WeightedCloud};

    fn write_cloud(dir: &std::path::Path, name: &str, points: &[Vec<f64>]) -> std::path::PathBuf {
        let path = dir.join(name);
        let cloud = WeightedCloud::uniform(PointSet::from_points(points).unwrap()).unwrap();
        crate::io::write_point_cloud(&path, &cloud).unwrap();
        path
    }

    #[test]
    fn singleton_clouds_cost_the_squared_distance() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = CliConfig {
            points_a: Some(write_cloud(dir.path(), "a.csv", &[vec![0.0, 0.0]])),
            points_b: Some(write_cloud(dir.path(), "b.csv", &[vec![3.0, 4.0]])),
            eps: 0.1,
            ..CliConfig::default()
        };
        let out = compute(&cfg).unwrap();
        assert!((24.9..=25.1).contains(&out.w_hat), "{}", out.w_hat);
        assert_eq!((out.n, out.d), (2, 2));
    }

    #[test]
    fn compute_agrees_with_the_dense_reference() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = stage_rng(11, Stream::Instance);
        let inst = uniform_cube_instance::<f64, _>(200, 2, 2.0, 0.1, false, &mut rng).unwrap();
        let pts: Vec<Vec<f64>> = inst.support().iter().map(<[f64]>::to_vec).collect();
        let cfg = CliConfig {
            points_a: Some(write_cloud(dir.path(), "a.csv", &pts[..100])),
            points_b: Some(write_cloud(dir.path(), "b.csv", &pts[100..])),
            eta: 2.0,
            eps: 0.1,
            seed: 11,
            ..CliConfig::default()
        };
        let out = compute(&cfg).unwrap();
        let (reference, _) = reference_w_eta_with_cap(&load_instance(&cfg, 2.0).unwrap(), 1e-10, 1000).unwrap();
        assert!((out.w_hat - reference).abs() <= 0.1, "{} vs {reference}", out.w_hat);
    }

    #[test]
    fn compute_needs_both_clouds() {
        let err = compute(&CliConfig::default()).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn benchmark_rejects_supports_above_the_cap() {
        let cfg = CliConfig { n: 50, dense_cap: 20, etas: vec![1.0], ..CliConfig::default() };
        let err = benchmark(&cfg).unwrap_err();
        assert_eq!(err.kind(), "capacity");
    }

    #[test]
    fn dense_rows_meet_the_target() {
        let cfg = CliConfig { n: 60, etas: vec![2.0], ranks: vec![RankSpec::Fixed(8)], repeats: 1, target: 1e-3, ..CliConfig::default() };
        let rows = benchmark(&cfg).unwrap();
        assert_eq!(rows.len(), 2);
        let dense = rows.iter().find(|r| r.method == "dense_sinkhorn").unwrap();
        assert!(dense.abs_error_vs_reference <= 1e-3);
        assert_eq!(dense.rank, 60);
    }
}
