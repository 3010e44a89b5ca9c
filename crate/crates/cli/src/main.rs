use clap::{Args, Parser, Subcommand};
use pbcontrol::bounds::{
    admissible_lambdas, b_cost_empirical, b_cost_theoretical, coverage_check, finite_bound_rhs,
    per_controller_costs, BoundReport, CostProxy, CoverageProblem,
};
use pbcontrol::config::{ExperimentConfig, PriorSpec};
use pbcontrol::experiments::{self, trace_table};
use pbcontrol::learn::{certify_truncgauss, learn_finite, learn_infinite};
use pbcontrol::lqg::{lqg_expected_cost, riccati_solve};
use pbcontrol::numerics::{mean, LogValue};
use pbcontrol::output::{fmt_num, CsvTable};
use pbcontrol::posterior::{FinitePosterior, TruncGaussPosterior};
use pbcontrol::rng::{derive_seed, domain};
use pbcontrol::sysmodel::generate_dataset;
use pbcontrol::{Error, Result};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Exit code for command-line usage errors (unknown flags and the like).
const USAGE_EXIT: u8 = 2;

#[derive(Parser, Debug)]
#[command(name = "pbcontrol", version, about = "PAC-Bayes controller learning for unknown linear systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Experiment config (TOML). With --preset it is merged onto the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from a named preset: example1, example2 or example3.
    #[arg(long)]
    preset: Option<String>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides `output_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a training dataset and write it as CSV.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Learn a posterior over a finite controller grid and certify it.
    LearnFinite {
        #[command(flatten)]
        common: Common,
    },
    /// Learn a truncated-Gaussian posterior over a box of gains.
    LearnInfinite {
        #[command(flatten)]
        common: Common,
    },
    /// Finite-horizon Riccati gains and their expected cost for fixed (A, B).
    LqgBaseline {
        #[command(flatten)]
        common: Common,
    },
    /// Certify a given posterior on data drawn from the config.
    Bound {
        #[command(flatten)]
        common: Common,
        /// Posterior file in the same format as the config's [prior] table.
        #[arg(long)]
        posterior: PathBuf,
    },
    /// Monte Carlo coverage of the finite-space bound.
    Coverage {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        delta: Option<f64>,
    },
    /// Run one of the three reproduction pipelines.
    ReproduceExample {
        #[arg(value_parser = clap::value_parser!(u8).range(1..=3))]
        example: u8,
        #[command(flatten)]
        common: Common,
    },
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))
}

fn load(common: &Common, default_preset: Option<&str>) -> Result<ExperimentConfig> {
    let preset = common.preset.as_deref().or(default_preset);
    let mut cfg = match (preset, &common.config) {
        (Some(name), None) => experiments::preset(name)?,
        (Some(name), Some(path)) => experiments::preset(name)?.with_overrides(&read(path)?)?,
        (None, Some(path)) => ExperimentConfig::from_toml_str(&read(path)?)?,
        (None, None) => return Err(Error::Config("pass --config or --preset".into())),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    std::fs::write(&path, contents)?;
    println!("{}", path.display());
    Ok(())
}

fn table(cfg: &ExperimentConfig, header: &[&str]) -> CsvTable {
    CsvTable::new(cfg.seed, &cfg.hash(), header)
}

fn report_table(cfg: &ExperimentConfig, reports: &[&BoundReport]) -> String {
    let mut t = table(cfg, &BoundReport::CSV_HEADER);
    for r in reports {
        t.push_row(r.csv_row());
    }
    t.render()
}

fn posterior_toml(spec: &PriorSpec) -> String {
    toml::to_string(spec).expect("posterior serializes")
}

fn simulate(cfg: &ExperimentConfig) -> Result<()> {
    let controllers = match cfg.controllers() {
        Ok(ks) => ks,
        Err(_) => {
            let prior = cfg.truncgauss_prior()?;
            let count = cfg.sgd.as_ref().map_or(10, |s| s.mc_controllers);
            (0..count)
                .map(|j| {
                    let mut rng = pbcontrol::rng::substream(cfg.seed, domain::CONTROLLER_SAMPLING, 0, j as u64);
                    prior.sample_gain(&mut rng)
                })
                .collect()
        }
    };
    let data = generate_dataset(&cfg.system, &controllers, cfg.n, cfg.horizon, cfg.seed)?;
    let mut body = Vec::new();
    data.write_csv(&mut body)?;
    let mut gains = table(cfg, &["controller_index", "row", "col", "value"]);
    for (j, k) in controllers.iter().enumerate() {
        for r in 0..k.nrows() {
            for c in 0..k.ncols() {
                gains.push_row(vec![j.to_string(), r.to_string(), c.to_string(), fmt_num(k[(r, c)])]);
            }
        }
    }
    let meta = table(cfg, &[]).metadata;
    write(&cfg.output_dir, "dataset.csv", &format!("{meta}\n{}", String::from_utf8_lossy(&body)))?;
    write(&cfg.output_dir, "controllers.csv", &gains.render())
}

fn run_learn_finite(cfg: &ExperimentConfig) -> Result<()> {
    let controllers = cfg.controllers()?;
    let weights = cfg.weights()?;
    let p0 = cfg.finite_prior()?;
    let data = generate_dataset(&cfg.system, &controllers, cfg.n, cfg.horizon, cfg.seed)?;
    let res = learn_finite(&data, &controllers, &weights, &p0, &cfg.system, &cfg.bound)?;
    let mut per_lambda = table(cfg, &["lambda", "objective"]);
    for (l, o) in &res.per_lambda {
        per_lambda.push_numbers(&[*l, *o]);
    }
    let spec = PriorSpec::Pmf {
        probs: res.posterior.probs().to_vec(),
    };
    write(&cfg.output_dir, "posterior.toml", &posterior_toml(&spec))?;
    write(&cfg.output_dir, "per_lambda.csv", &per_lambda.render())?;
    write(&cfg.output_dir, "bound.csv", &report_table(cfg, &[&res.report]))
}

fn run_learn_infinite(cfg: &ExperimentConfig) -> Result<()> {
    let weights = cfg.weights()?;
    let prior = cfg.truncgauss_prior()?;
    let sgd = cfg.sgd()?;
    let res = learn_infinite(&cfg.system, &prior, &prior, &weights, &cfg.bound, sgd, cfg.horizon, cfg.seed)?;
    let report = certify_truncgauss(
        &cfg.system,
        &res.posterior,
        &prior,
        &weights,
        &cfg.bound,
        res.lambda,
        res.admissible.card(),
        sgd.mc_controllers,
        sgd.n_per_controller,
        cfg.horizon,
        derive_seed(cfg.seed, domain::TRAIN, u64::MAX),
    )?;
    let spec = PriorSpec::TruncatedGaussian(res.posterior.clone());
    write(&cfg.output_dir, "posterior.toml", &posterior_toml(&spec))?;
    write(&cfg.output_dir, "trace.csv", &trace_table(cfg, &res).render())?;
    write(&cfg.output_dir, "bound.csv", &report_table(cfg, &[&report]))
}

fn lqg_baseline(cfg: &ExperimentConfig) -> Result<()> {
    if !cfg.system.is_deterministic() {
        return Err(Error::Config("lqg-baseline needs zero system standard deviations".into()));
    }
    let weights = cfg.weights()?;
    let cov = cfg.system.noise_covariance();
    let (du, dx) = (cfg.system.dim_u, cfg.system.dim_x);
    let mut header = vec!["T".to_string(), "t".to_string()];
    for r in 0..du {
        for c in 0..dx {
            header.push(format!("k_{r}_{c}"));
        }
    }
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut gains = table(cfg, &header_refs);
    let mut costs = table(cfg, &["T", "cost_lqg"]);
    for t in cfg.horizon_sweep() {
        let sol = riccati_solve(&cfg.system.mean_a, &cfg.system.mean_b, &weights, t)?;
        for (step, k) in sol.gains.iter().enumerate() {
            let mut row = vec![t.to_string(), step.to_string()];
            row.extend(k.transpose().iter().map(|&v| fmt_num(v)));
            gains.push_row(row);
        }
        costs.push_numbers(&[t as f64, lqg_expected_cost(&sol, &cov)?]);
    }
    write(&cfg.output_dir, "lqg_gains.csv", &gains.render())?;
    write(&cfg.output_dir, "lqg_cost.csv", &costs.render())
}

fn certify(cfg: &ExperimentConfig, posterior_path: &Path) -> Result<()> {
    let text = read(posterior_path)?;
    let spec: PriorSpec = toml::from_str(&text).map_err(|e| Error::Config(one_line(&e.to_string())))?;
    let weights = cfg.weights()?;
    let reports: Vec<BoundReport> = match spec {
        PriorSpec::TruncatedGaussian(p) => certify_infinite(cfg, &p, &weights)?,
        PriorSpec::Uniform => certify_finite(cfg, &cfg.finite_prior()?, &weights)?,
        PriorSpec::Pmf { probs } => certify_finite(cfg, &FinitePosterior::new(probs)?, &weights)?,
    };
    let best = reports
        .iter()
        .min_by(|a, b| a.total.total_cmp(&b.total))
        .expect("Γ is not empty");
    write(&cfg.output_dir, "bound.csv", &report_table(cfg, &[best]))?;
    write(&cfg.output_dir, "bound_per_lambda.csv", &report_table(cfg, &reports.iter().collect::<Vec<_>>()))
}

/// One report per λ ∈ Γ; the minimum is a valid certificate.
fn certify_finite(
    cfg: &ExperimentConfig,
    p: &FinitePosterior,
    weights: &pbcontrol::Weights,
) -> Result<Vec<BoundReport>> {
    let controllers = cfg.controllers()?;
    let p0 = cfg.finite_prior()?;
    if p.len() != controllers.len() {
        return Err(Error::Dimension(format!(
            "posterior over {} controllers, space has {}",
            p.len(),
            controllers.len()
        )));
    }
    let space = cfg.controller_space()?;
    let consts = cfg.system.constants();
    let gamma = admissible_lambdas(&cfg.bound, &space, weights, &consts, cfg.horizon)?;
    let data = generate_dataset(&cfg.system, &controllers, cfg.n, cfg.horizon, cfg.seed)?;
    let per_traj = per_controller_costs(&data, weights)?;
    let costs: Vec<f64> = per_traj.iter().map(|c| mean(c)).collect();
    let b = match cfg.bound.proxy {
        CostProxy::Empirical => LogValue::from_value(b_cost_empirical(&per_traj, cfg.bound.c_b)?),
        CostProxy::Theoretical => b_cost_theoretical(&space, weights, &consts, cfg.horizon)?,
    };
    gamma
        .gamma
        .iter()
        .map(|&l| finite_bound_rhs(p, &p0, &costs, l, b, cfg.bound.proxy, cfg.n, gamma.card(), cfg.bound.delta))
        .collect()
}

fn certify_infinite(
    cfg: &ExperimentConfig,
    p: &TruncGaussPosterior,
    weights: &pbcontrol::Weights,
) -> Result<Vec<BoundReport>> {
    let prior = cfg.truncgauss_prior()?;
    let sgd = cfg.sgd()?;
    let space = cfg.controller_space()?;
    let gamma = admissible_lambdas(&cfg.bound, &space, weights, &cfg.system.constants(), cfg.horizon)?;
    gamma
        .gamma
        .iter()
        .map(|&l| {
            certify_truncgauss(
                &cfg.system,
                p,
                &prior,
                weights,
                &cfg.bound,
                l,
                gamma.card(),
                sgd.mc_controllers,
                cfg.n,
                cfg.horizon,
                cfg.seed,
            )
        })
        .collect()
}

fn coverage(cfg: &ExperimentConfig, reps: Option<usize>, delta: Option<f64>) -> Result<()> {
    let mut cfg = cfg.clone();
    if let Some(d) = delta {
        cfg.bound.delta = d;
        cfg.bound.validate()?;
    }
    let reps = reps.unwrap_or(cfg.coverage.repetitions);
    let controllers = cfg.controllers()?;
    let weights = cfg.weights()?;
    let p0 = cfg.finite_prior()?;
    let problem = CoverageProblem {
        dist: &cfg.system,
        controllers: &controllers,
        weights: &weights,
        prior: &p0,
        config: &cfg.bound,
        n: cfg.n,
        horizon: cfg.horizon,
        fixed_posterior: None,
    };
    let res = coverage_check(&problem, reps, cfg.coverage.oracle_draws, cfg.seed)?;
    let mut t = table(&cfg, &["repetition", "bound_total", "true_cost", "covered"]);
    for (r, (b, c)) in res.bounds.iter().zip(&res.true_costs).enumerate() {
        t.push_row(vec![r.to_string(), fmt_num(*b), fmt_num(*c), u8::from(b >= c).to_string()]);
    }
    t.annotate(&format!("coverage={}", fmt_num(res.coverage)));
    write(&cfg.output_dir, "coverage.csv", &t.render())?;
    println!("coverage={} covered={} repetitions={}", fmt_num(res.coverage), res.covered, res.repetitions);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { common } => simulate(&load(&common, None)?),
        Command::LearnFinite { common } => run_learn_finite(&load(&common, None)?),
        Command::LearnInfinite { common } => run_learn_infinite(&load(&common, None)?),
        Command::LqgBaseline { common } => lqg_baseline(&load(&common, None)?),
        Command::Bound { common, posterior } => certify(&load(&common, None)?, &posterior),
        Command::Coverage { common, reps, delta } => coverage(&load(&common, None)?, reps, delta),
        Command::ReproduceExample { example, common } => {
            let name = format!("example{example}");
            let cfg = load(&common, Some(&name))?;
            for f in experiments::reproduce(example, &cfg)? {
                write(&cfg.output_dir, &f.name, &f.contents)?;
            }
            Ok(())
        }
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let msg = e.to_string();
            let first = msg.lines().find(|l| !l.trim().is_empty()).unwrap_or("bad arguments");
            eprintln!("error[usage]: {}", one_line(first.trim_start_matches("error: ")));
            return ExitCode::from(USAGE_EXIT);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.category(), one_line(&e.to_string()));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
