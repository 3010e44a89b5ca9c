//! The three reproduction pipelines and their presets.
//!
//! Every stochastic step draws from streams derived from the config seed,
//! so a run is a pure function of `(config, seed)`.

use crate::bounds::BoundReport;
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::learn::{
    certify_truncgauss, evaluate_posterior, learn_finite, learn_infinite, InfiniteLearnResult, PosteriorRef,
    SgdConfig, TraceRow,
};
use crate::lqg::{lqg_expected_cost, riccati_solve};
use crate::output::{fmt_num, CsvTable};
use crate::rng::{derive_seed, domain};
use crate::sysmodel::generate_dataset;

const EXAMPLE1: &str = include_str!("../presets/example1.toml");
const EXAMPLE2: &str = include_str!("../presets/example2.toml");
const EXAMPLE3: &str = include_str!("../presets/example3.toml");

pub const PRESET_NAMES: [&str; 3] = ["example1", "example2", "example3"];

/// The raw TOML text of a named preset.
pub fn preset_text(name: &str) -> Result<&'static str> {
    match name {
        "example1" | "1" => Ok(EXAMPLE1),
        "example2" | "2" => Ok(EXAMPLE2),
        "example3" | "3" => Ok(EXAMPLE3),
        other => Err(Error::Config(format!("unknown preset {other:?}"))),
    }
}

pub fn preset(name: &str) -> Result<ExperimentConfig> {
    ExperimentConfig::from_toml_str(preset_text(name)?)
}

/// One output file of a pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputFile {
    pub name: String,
    pub contents: String,
}

fn table(cfg: &ExperimentConfig, header: &[&str]) -> CsvTable {
    CsvTable::new(cfg.seed, &cfg.hash(), header)
}

/// Seed of sweep point `index`.
fn point_seed(cfg: &ExperimentConfig, index: usize) -> u64 {
    derive_seed(cfg.seed, domain::SWEEP, index as u64)
}

/// Test stream shared by every sweep point.
fn test_seed(cfg: &ExperimentConfig) -> u64 {
    derive_seed(cfg.seed, domain::TEST, 0)
}

pub const EXAMPLE1_HEADER: [&str; 11] = [
    "n",
    "bound_total",
    "expected_cost_estimate",
    "std_error",
    "lambda_star",
    "gibbs_empirical",
    "lambda_term",
    "kl",
    "kl_term",
    "b_cost_kind",
    "b_cost",
];

/// Finite controller space: for each `n`, learn `P★` and certify it, then
/// evaluate it on a shared independent test set.
pub fn run_example1(cfg: &ExperimentConfig) -> Result<CsvTable> {
    let controllers = cfg.controllers()?;
    let weights = cfg.weights()?;
    let p0 = cfg.finite_prior()?;
    let mut out = table(cfg, &EXAMPLE1_HEADER);
    for n in cfg.n_sweep() {
        let data = generate_dataset(&cfg.system, &controllers, n, cfg.horizon, point_seed(cfg, n))?;
        let res = learn_finite(&data, &controllers, &weights, &p0, &cfg.system, &cfg.bound)?;
        let est = evaluate_posterior(
            &cfg.system,
            PosteriorRef::Finite {
                posterior: &res.posterior,
                controllers: &controllers,
            },
            &weights,
            cfg.horizon,
            controllers.len(),
            cfg.evaluation.test_trajectories,
            test_seed(cfg),
        )?;
        let r = &res.report;
        out.push_row(vec![
            n.to_string(),
            fmt_num(r.total),
            fmt_num(est.mean),
            fmt_num(est.std_error),
            fmt_num(r.lambda_star),
            fmt_num(r.gibbs_empirical),
            fmt_num(r.lambda_term.value()),
            fmt_num(r.kl),
            fmt_num(r.kl_term),
            r.b_cost_kind.name().to_string(),
            fmt_num(r.b_cost.value()),
        ]);
    }
    Ok(out)
}

pub const EXAMPLE2_HEADER: [&str; 8] = [
    "T",
    "cost_prior",
    "cost_prior_std_error",
    "cost_pac",
    "cost_pac_std_error",
    "cost_lqg",
    "lambda_star",
    "bound_total",
];

/// Fixed `(A, B)`: for each horizon, compare the prior, the learned
/// posterior and the finite-horizon Riccati controller.
pub fn run_example2(cfg: &ExperimentConfig) -> Result<CsvTable> {
    if !cfg.system.is_deterministic() {
        return Err(Error::Config("example 2 needs zero system standard deviations".into()));
    }
    let controllers = cfg.controllers()?;
    let weights = cfg.weights()?;
    let p0 = cfg.finite_prior()?;
    let cov = cfg.system.noise_covariance();
    let mut out = table(cfg, &EXAMPLE2_HEADER);
    for t in cfg.horizon_sweep() {
        let data = generate_dataset(&cfg.system, &controllers, cfg.n, t, point_seed(cfg, t))?;
        let res = learn_finite(&data, &controllers, &weights, &p0, &cfg.system, &cfg.bound)?;
        let eval = |posterior| {
            evaluate_posterior(
                &cfg.system,
                PosteriorRef::Finite {
                    posterior,
                    controllers: &controllers,
                },
                &weights,
                t,
                controllers.len(),
                cfg.evaluation.test_trajectories,
                derive_seed(test_seed(cfg), domain::SWEEP, t as u64),
            )
        };
        let prior = eval(&p0)?;
        let pac = eval(&res.posterior)?;
        let sol = riccati_solve(&cfg.system.mean_a, &cfg.system.mean_b, &weights, t)?;
        let lqg = lqg_expected_cost(&sol, &cov)?;
        out.push_numbers(&[
            t as f64,
            prior.mean,
            prior.std_error,
            pac.mean,
            pac.std_error,
            lqg,
            res.lambda_star,
            res.report.total,
        ]);
    }
    Ok(out)
}

pub const TRACE_HEADER: [&str; 6] = ["iteration", "phi_theta", "phi_theta_prime", "grad_norm", "kl", "b_hat"];

/// Per-iteration trace with θ snapshots appended as `theta_0..`.
pub fn trace_table(cfg: &ExperimentConfig, res: &InfiniteLearnResult) -> CsvTable {
    let dim = res.trace.first().map_or(0, |r| r.theta.len());
    let theta_names: Vec<String> = (0..dim).map(|i| format!("theta_{i}")).collect();
    let mut header: Vec<&str> = TRACE_HEADER.to_vec();
    header.extend(theta_names.iter().map(String::as_str));
    let mut out = table(cfg, &header);
    out.annotate(&format!("lambda={}", fmt_num(res.lambda)));
    for TraceRow {
        iteration,
        phi_theta,
        phi_theta_prime,
        grad_norm,
        kl,
        b_hat,
        theta,
    } in &res.trace
    {
        let mut row = vec![
            iteration.to_string(),
            fmt_num(*phi_theta),
            fmt_num(*phi_theta_prime),
            fmt_num(*grad_norm),
            fmt_num(*kl),
            fmt_num(*b_hat),
        ];
        row.extend(theta.iter().map(|&v| fmt_num(v)));
        out.push_row(row);
    }
    out
}

pub const EXAMPLE3_HEADER: [&str; 7] = [
    "n",
    "cost_prior",
    "cost_prior_std_error",
    "cost_posterior",
    "cost_posterior_std_error",
    "lambda",
    "bound_total",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Example3Output {
    pub summary: CsvTable,
    /// `(n, trace)` per sweep point.
    pub traces: Vec<(usize, CsvTable)>,
}

/// Infinite controller space: for each `n`, train from the prior, certify
/// on fresh data and evaluate prior and posterior by sampling.
pub fn run_example3(cfg: &ExperimentConfig) -> Result<Example3Output> {
    let weights = cfg.weights()?;
    let prior = cfg.truncgauss_prior()?;
    let base_sgd = cfg.sgd()?;
    let mut summary = table(cfg, &EXAMPLE3_HEADER);
    let mut traces = Vec::new();
    for n in cfg.n_sweep() {
        let seed = point_seed(cfg, n);
        let sgd = SgdConfig {
            n_per_controller: n,
            ..base_sgd.clone()
        };
        let res = learn_infinite(&cfg.system, &prior, &prior, &weights, &cfg.bound, &sgd, cfg.horizon, seed)?;
        let report: BoundReport = certify_truncgauss(
            &cfg.system,
            &res.posterior,
            &prior,
            &weights,
            &cfg.bound,
            res.lambda,
            res.admissible.card(),
            sgd.mc_controllers,
            n,
            cfg.horizon,
            derive_seed(seed, domain::TRAIN, u64::MAX),
        )?;
        let eval_seed = derive_seed(test_seed(cfg), domain::SWEEP, n as u64);
        let eval = |p| {
            evaluate_posterior(
                &cfg.system,
                PosteriorRef::TruncGauss(p),
                &weights,
                cfg.horizon,
                cfg.evaluation.test_controllers,
                cfg.evaluation.test_trajectories,
                eval_seed,
            )
        };
        let c0 = eval(&prior)?;
        let c1 = eval(&res.posterior)?;
        summary.push_numbers(&[
            n as f64,
            c0.mean,
            c0.std_error,
            c1.mean,
            c1.std_error,
            res.lambda,
            report.total,
        ]);
        traces.push((n, trace_table(cfg, &res)));
    }
    Ok(Example3Output { summary, traces })
}

/// Runs example `which` (1, 2 or 3) and returns its output files.
pub fn reproduce(which: u8, cfg: &ExperimentConfig) -> Result<Vec<OutputFile>> {
    let file = |name: &str, t: &CsvTable| OutputFile {
        name: name.to_string(),
        contents: t.render(),
    };
    match which {
        1 => Ok(vec![file("example1.csv", &run_example1(cfg)?)]),
        2 => Ok(vec![file("example2.csv", &run_example2(cfg)?)]),
        3 => {
            let out = run_example3(cfg)?;
            let mut files = vec![file("example3.csv", &out.summary)];
            for (n, t) in &out.traces {
                files.push(file(&format!("example3_trace_n{n}.csv"), t));
            }
            Ok(files)
        }
        other => Err(Error::Config(format!("no example {other}; expected 1, 2 or 3"))),
    }
}
