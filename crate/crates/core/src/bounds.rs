//! Ingredients of the PAC-Bayes cost certificates: the growth constants
//! `ρ_Z`, `ρ_M`, the theoretical and empirical cost proxies, the admissible
//! set Γ of λ values, and the finite- and infinite-space bound values.

use crate::cost::{quadratic_cost, CostWeights};
use crate::error::{dim_err, param_err, Error, Result};
use crate::linalg::{frobenius_norm, spectral_norm};
use crate::learn::learn_finite;
use crate::lqg::expected_cost_static;
use crate::numerics::{log_sum_exp, mean, sample_variance, LogValue};
use crate::rng::{derive_seed, domain, substream};
use crate::output::fmt_num;
use crate::posterior::{kl_finite, FinitePosterior};
use crate::sysmodel::{generate_dataset, Dataset, SystemConstants, SystemDistribution};
use rayon::prelude::*;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// Box spaces with more corners than this are rejected.
pub const MAX_BOX_CORNERS: u32 = 20;

/// The controller space `𝒦`.
#[derive(Debug, Clone, PartialEq)]
pub enum ControllerSpace {
    Finite(Vec<DMatrix<f64>>),
    /// Entrywise box for a `dim_u × dim_x` gain, bounds row-major.
    Box {
        dim_u: usize,
        dim_x: usize,
        lower: Vec<f64>,
        upper: Vec<f64>,
    },
}

impl ControllerSpace {
    /// The largest spectral norm over the space. For a box with a single
    /// input row this is the corner of largest magnitude in every
    /// coordinate; otherwise all corners are enumerated.
    pub fn max_gain_norm(&self) -> Result<f64> {
        match self {
            ControllerSpace::Finite(gains) => {
                if gains.is_empty() {
                    return Err(param_err("finite controller space is empty"));
                }
                Ok(gains.iter().map(spectral_norm).fold(0.0, f64::max))
            }
            ControllerSpace::Box {
                dim_u,
                dim_x,
                lower,
                upper,
            } => {
                let d = dim_u * dim_x;
                if lower.len() != d || upper.len() != d {
                    return Err(dim_err(format!("box bounds must have {d} entries")));
                }
                if lower.iter().chain(upper).any(|v| !v.is_finite()) {
                    return Err(Error::UnboundedSpace);
                }
                if *dim_u == 1 {
                    let sq: f64 = lower
                        .iter()
                        .zip(upper)
                        .map(|(l, u)| l.abs().max(u.abs()).powi(2))
                        .sum();
                    return Ok(sq.sqrt());
                }
                if d as u32 > MAX_BOX_CORNERS {
                    return Err(param_err(format!(
                        "box over {d} gain entries has more than 2^{MAX_BOX_CORNERS} corners"
                    )));
                }
                let mut best = 0.0f64;
                for mask in 0u64..(1u64 << d) {
                    let vals: Vec<f64> = (0..d)
                        .map(|i| if mask >> i & 1 == 1 { upper[i] } else { lower[i] })
                        .collect();
                    let k = DMatrix::from_row_slice(*dim_u, *dim_x, &vals);
                    best = best.max(spectral_norm(&k));
                }
                Ok(best)
            }
        }
    }
}

/// Which cost proxy backs the `λB²/(8n)` term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CostProxy {
    Theoretical,
    #[default]
    Empirical,
}

impl CostProxy {
    pub fn name(self) -> &'static str {
        match self {
            CostProxy::Theoretical => "theoretical",
            CostProxy::Empirical => "empirical",
        }
    }
}

fn default_c_b() -> f64 {
    1.0
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundConfig {
    /// Candidate λ values Ω.
    pub omega: Vec<f64>,
    pub delta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_prime: Option<f64>,
    #[serde(default = "default_c_b")]
    pub c_b: f64,
    /// `B_k`, the gain-norm bound of the infinite-space certificate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gain_norm_bound: Option<f64>,
    /// When false, Γ = Ω is used even where λ exceeds the admissibility
    /// threshold.
    #[serde(default = "default_true")]
    pub enforce_admissible: bool,
    #[serde(default)]
    pub proxy: CostProxy,
}

impl BoundConfig {
    pub fn new(omega: Vec<f64>, delta: f64) -> Self {
        BoundConfig {
            omega,
            delta,
            delta_prime: None,
            c_b: 1.0,
            gain_norm_bound: None,
            enforce_admissible: true,
            proxy: CostProxy::Empirical,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.omega.is_empty() {
            return Err(param_err("Ω must not be empty"));
        }
        if let Some(l) = self.omega.iter().find(|l| !(**l > 0.0) || !l.is_finite()) {
            return Err(param_err(format!("Ω entry {l} must be a positive number")));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(param_err(format!("δ = {} must lie in (0, 1)", self.delta)));
        }
        if let Some(dp) = self.delta_prime {
            if !(dp > 0.0 && dp < 1.0) || !(self.delta + dp < 1.0) {
                return Err(param_err(format!(
                    "δ' = {dp} must lie in (0, 1) with δ + δ' < 1"
                )));
            }
        }
        if !(self.c_b >= 1.0) {
            return Err(param_err(format!("c_B = {} must be at least 1", self.c_b)));
        }
        if let Some(bk) = self.gain_norm_bound {
            if !(bk > 0.0) || !bk.is_finite() {
                return Err(param_err(format!("B_k = {bk} must be positive and finite")));
            }
        }
        Ok(())
    }
}

/// `(ρ_Z, ρ_M)` for gain `K`: `ρ_Z = ‖Q‖_F + ‖K‖²‖R‖_F`,
/// `ρ_M = ρ_A + ρ_B‖K‖` with the spectral norm `‖K‖`.
pub fn rho_quantities(
    k: &DMatrix<f64>,
    weights: &CostWeights<f64>,
    consts: &SystemConstants,
) -> (f64, f64) {
    rho_from_norm(spectral_norm(k), weights, consts)
}

fn rho_from_norm(
    knorm: f64,
    weights: &CostWeights<f64>,
    consts: &SystemConstants,
) -> (f64, f64) {
    let rho_z = frobenius_norm(&weights.q) + knorm * knorm * frobenius_norm(&weights.r);
    let rho_m = consts.rho_a + consts.rho_b * knorm;
    (rho_z, rho_m)
}

/// `x · ln ρ`, with `ρ⁰ = 1` even when `ρ = 0`.
fn ln_pow(ln_rho: f64, exponent: usize) -> f64 {
    if exponent == 0 {
        0.0
    } else {
        exponent as f64 * ln_rho
    }
}

/// `ln B_cost` for given `(ρ_Z, ρ_M)`.
pub fn ln_b_cost(rho_z: f64, rho_m: f64, sigma_w: f64, dim_x: usize, horizon: usize) -> f64 {
    let t = horizon;
    let lr = rho_m.ln();
    let mut terms = Vec::with_capacity((t + 1) * (t + 2) / 2);
    for i in 0..=t {
        terms.push(128f64.ln() + ln_pow(lr, 4 * (t - i)));
    }
    for i in 0..=t {
        for j in i + 1..=t {
            // 4T - 2(i + j) ≥ 0 because i < j ≤ T
            terms.push(64f64.ln() + ln_pow(lr, 4 * t - 2 * (i + j)));
        }
    }
    let ln_sum = log_sum_exp(&terms);
    0.5 * (4.0 * sigma_w.ln() + (dim_x as f64).ln() + 2.0 * rho_z.ln() + ln_sum)
}

/// The theoretical proxy `B_cost` as a supremum over the space. Both `ρ_Z`
/// and `ρ_M` grow with `‖K‖`, so the supremum sits at the largest norm.
pub fn b_cost_theoretical(
    space: &ControllerSpace,
    weights: &CostWeights<f64>,
    consts: &SystemConstants,
    horizon: usize,
) -> Result<LogValue> {
    let knorm = space.max_gain_norm()?;
    let (rho_z, rho_m) = rho_from_norm(knorm, weights, consts);
    Ok(LogValue::from_ln(ln_b_cost(
        rho_z,
        rho_m,
        consts.sigma_w,
        consts.dim_x,
        horizon,
    )))
}

/// `ln` of the λ threshold `min_K 1/(4σ_w² ρ_Z ρ_M^{2T})`.
pub fn ln_lambda_threshold(
    space: &ControllerSpace,
    weights: &CostWeights<f64>,
    consts: &SystemConstants,
    horizon: usize,
) -> Result<f64> {
    let knorm = space.max_gain_norm()?;
    let (rho_z, rho_m) = rho_from_norm(knorm, weights, consts);
    Ok(-(4f64.ln()
        + 2.0 * consts.sigma_w.ln()
        + rho_z.ln()
        + ln_pow(rho_m.ln(), 2 * horizon)))
}

/// Γ together with the threshold it was cut at.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmissibleSet {
    pub gamma: Vec<f64>,
    pub ln_threshold: f64,
    /// Ω values above the threshold that were kept anyway.
    pub unchecked: Vec<f64>,
}

impl AdmissibleSet {
    pub fn card(&self) -> usize {
        self.gamma.len()
    }
}

/// `Γ = {λ ∈ Ω : λ < threshold}`; with `enforce_admissible = false` every
/// Ω value is kept and the violating ones are listed in `unchecked`.
pub fn admissible_lambdas(
    config: &BoundConfig,
    space: &ControllerSpace,
    weights: &CostWeights<f64>,
    consts: &SystemConstants,
    horizon: usize,
) -> Result<AdmissibleSet> {
    config.validate()?;
    let ln_threshold = ln_lambda_threshold(space, weights, consts, horizon)?;
    let below = |l: &f64| l.ln() < ln_threshold;
    let mut gamma: Vec<f64> = if config.enforce_admissible {
        config.omega.iter().copied().filter(below).collect()
    } else {
        config.omega.clone()
    };
    gamma.sort_by(f64::total_cmp);
    gamma.dedup();
    if gamma.is_empty() {
        return Err(Error::EmptyLambdaSet {
            threshold: ln_threshold.exp(),
        });
    }
    let unchecked = gamma.iter().copied().filter(|l| !below(l)).collect();
    Ok(AdmissibleSet {
        gamma,
        ln_threshold,
        unchecked,
    })
}

/// Per-controller trajectory costs, in the dataset's controller order.
pub fn per_controller_costs(
    dataset: &Dataset,
    weights: &CostWeights<f64>,
) -> Result<Vec<Vec<f64>>> {
    dataset
        .per_controller
        .values()
        .map(|trajs| {
            trajs
                .iter()
                .map(|t| quadratic_cost(&t.controller, t, weights))
                .collect()
        })
        .collect()
}

/// `B̂_cost = max_j 2 c_B √Var̂_j` with the unbiased `1/(n-1)` variance.
pub fn b_cost_empirical(costs: &[Vec<f64>], c_b: f64) -> Result<f64> {
    if costs.is_empty() {
        return Err(param_err("B̂_cost needs at least one controller"));
    }
    let mut best = 0.0f64;
    for c in costs {
        if c.len() < 2 {
            return Err(param_err(format!(
                "B̂_cost needs n ≥ 2 trajectories per controller, got {}",
                c.len()
            )));
        }
        best = best.max(2.0 * c_b * sample_variance(c).sqrt());
    }
    Ok(best)
}

/// Decomposed bound value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub n: usize,
    pub lambda_star: f64,
    pub gibbs_empirical: f64,
    pub mc_deviation: f64,
    pub lambda_term: LogValue,
    pub kl: f64,
    pub kl_term: f64,
    pub total: f64,
    pub b_cost_kind: CostProxy,
    pub b_cost: LogValue,
    pub overflow: bool,
}

impl BoundReport {
    pub const CSV_HEADER: [&'static str; 10] = [
        "n",
        "lambda_star",
        "gibbs_empirical",
        "mc_deviation",
        "lambda_term",
        "kl_term",
        "total",
        "b_cost_kind",
        "b_cost_value",
        "overflow_flag",
    ];

    pub fn csv_row(&self) -> Vec<String> {
        vec![
            self.n.to_string(),
            fmt_num(self.lambda_star),
            fmt_num(self.gibbs_empirical),
            fmt_num(self.mc_deviation),
            fmt_num(self.lambda_term.value()),
            fmt_num(self.kl_term),
            fmt_num(self.total),
            self.b_cost_kind.name().to_string(),
            fmt_num(self.b_cost.value()),
            u8::from(self.overflow).to_string(),
        ]
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        n: usize,
        lambda: f64,
        gibbs_empirical: f64,
        mc_deviation: f64,
        b_cost: LogValue,
        kind: CostProxy,
        kl: f64,
        card_gamma: usize,
        delta: f64,
    ) -> Self {
        let lambda_term = lambda_term(lambda, b_cost, n);
        let kl_term = (kl + (card_gamma as f64 / delta).ln()) / lambda;
        let overflow = lambda_term.overflows() || b_cost.overflows();
        let total = if overflow {
            f64::INFINITY
        } else {
            gibbs_empirical + mc_deviation + lambda_term.value() + kl_term
        };
        BoundReport {
            n,
            lambda_star: lambda,
            gibbs_empirical,
            mc_deviation,
            lambda_term,
            kl,
            kl_term,
            total,
            b_cost_kind: kind,
            b_cost,
            overflow,
        }
    }
}

/// `λ B² / (8n)` in log space.
pub fn lambda_term(lambda: f64, b_cost: LogValue, n: usize) -> LogValue {
    if b_cost.ln == f64::NEG_INFINITY {
        return LogValue::ZERO;
    }
    LogValue::from_ln(lambda.ln() + 2.0 * b_cost.ln - (8.0 * n as f64).ln())
}

fn check_lambda(lambda: f64, n: usize, card_gamma: usize) -> Result<()> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(param_err(format!("λ = {lambda} must be positive")));
    }
    if n == 0 || card_gamma == 0 {
        return Err(param_err("n and card(Γ) must be positive"));
    }
    Ok(())
}

/// Finite-space certificate:
/// `C̃(P) + λB²/(8n) + (KL(P‖P0) + ln(card(Γ)/δ))/λ`.
#[allow(clippy::too_many_arguments)]
pub fn finite_bound_rhs(
    p: &FinitePosterior,
    p0: &FinitePosterior,
    costs: &[f64],
    lambda: f64,
    b_cost: LogValue,
    kind: CostProxy,
    n: usize,
    card_gamma: usize,
    delta: f64,
) -> Result<BoundReport> {
    check_lambda(lambda, n, card_gamma)?;
    let kl = kl_finite(p, p0)?;
    if kl.is_infinite() {
        return Err(Error::InfiniteKl(
            "posterior puts mass on a controller the prior excludes".into(),
        ));
    }
    let gibbs = crate::cost::gibbs_empirical_cost(p.probs(), costs)?;
    Ok(BoundReport::assemble(
        n, lambda, gibbs, 0.0, b_cost, kind, kl, card_gamma, delta,
    ))
}

/// `√(ln(2/δ') / (2L'))`, the Hoeffding coefficient of `C_max`.
pub fn hoeffding_coefficient(l_prime: usize, delta_prime: f64) -> f64 {
    ((2.0 / delta_prime).ln() / (2.0 * l_prime as f64)).sqrt()
}

/// `V(𝒮) = max_j (1/n) Σ_i Σ_{t=1}^T ‖x_{K_j}^{(i)}(t)‖²`.
pub fn state_energy(dataset: &Dataset) -> f64 {
    dataset
        .per_controller
        .values()
        .map(|trajs| {
            let s = crate::numerics::neumaier_sum(trajs.iter().map(|t| t.sum_squared_norms()));
            s / trajs.len().max(1) as f64
        })
        .fold(0.0, f64::max)
}

/// `C_max(𝒮) = (‖Q‖_F + B_k²‖R‖_F) V(𝒮)`; every gain in the dataset must
/// satisfy `‖K‖ ≤ B_k`.
pub fn c_max(dataset: &Dataset, gain_norm_bound: f64, weights: &CostWeights<f64>) -> Result<f64> {
    for trajs in dataset.per_controller.values() {
        if let Some(t) = trajs.first() {
            let norm = spectral_norm(&t.controller);
            if norm > gain_norm_bound * (1.0 + 1e-12) {
                return Err(Error::GainNormExceeded {
                    norm,
                    bound: gain_norm_bound,
                });
            }
        }
    }
    let rho_z_max = frobenius_norm(&weights.q)
        + gain_norm_bound * gain_norm_bound * frobenius_norm(&weights.r);
    Ok(rho_z_max * state_energy(dataset))
}

/// Inputs of the infinite-space certificate besides the dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InfiniteBoundInputs {
    pub mc_cost: f64,
    pub gain_norm_bound: f64,
    pub kl: f64,
    pub lambda: f64,
    pub b_cost: LogValue,
    pub kind: CostProxy,
    pub l_prime: usize,
    pub card_gamma: usize,
    pub delta: f64,
    pub delta_prime: f64,
}

/// Infinite-space certificate:
/// `C̃_{L'}(P) + C_max √(ln(2/δ')/(2L')) + λB²/(8n) + (KL + ln(card(Γ)/δ))/λ`.
pub fn infinite_bound_rhs(
    dataset: &Dataset,
    weights: &CostWeights<f64>,
    inputs: &InfiniteBoundInputs,
) -> Result<BoundReport> {
    let n = dataset.n();
    check_lambda(inputs.lambda, n, inputs.card_gamma)?;
    if inputs.l_prime == 0 {
        return Err(param_err("L' must be at least 1"));
    }
    if inputs.kl.is_infinite() {
        return Err(Error::InfiniteKl(
            "posterior support leaves the prior support".into(),
        ));
    }
    let cm = c_max(dataset, inputs.gain_norm_bound, weights)?;
    let mc_deviation = cm * hoeffding_coefficient(inputs.l_prime, inputs.delta_prime);
    Ok(BoundReport::assemble(
        n,
        inputs.lambda,
        inputs.mc_cost,
        mc_deviation,
        inputs.b_cost,
        inputs.kind,
        inputs.kl,
        inputs.card_gamma,
        inputs.delta,
    ))
}

/// Brute-force `C(K_j)` for every controller: the exact noise expectation
/// averaged over `draws` system draws, shared by all controllers.
pub fn oracle_costs(
    dist: &SystemDistribution,
    controllers: &[DMatrix<f64>],
    weights: &CostWeights<f64>,
    horizon: usize,
    draws: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if draws == 0 {
        return Err(param_err("oracle needs at least one system draw"));
    }
    let draws = if dist.is_deterministic() { 1 } else { draws };
    let cov = dist.noise_covariance();
    let systems: Vec<(DMatrix<f64>, DMatrix<f64>)> = (0..draws)
        .map(|d| dist.sample_system(&mut substream(seed, domain::ORACLE, 0, d as u64)))
        .collect();
    controllers
        .par_iter()
        .map(|k| {
            let per_system = systems
                .iter()
                .map(|(a, b)| expected_cost_static(a, b, k, weights, &cov, horizon))
                .collect::<Result<Vec<f64>>>()?;
            Ok(mean(&per_system))
        })
        .collect()
}

/// A finite-space learning problem whose certificate is checked by
/// repetition.
#[derive(Debug, Clone, Copy)]
pub struct CoverageProblem<'a> {
    pub dist: &'a SystemDistribution,
    pub controllers: &'a [DMatrix<f64>],
    pub weights: &'a CostWeights<f64>,
    pub prior: &'a FinitePosterior,
    pub config: &'a BoundConfig,
    pub n: usize,
    pub horizon: usize,
    /// Certify this posterior (best λ ∈ Γ) instead of the learned one.
    pub fixed_posterior: Option<&'a FinitePosterior>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageResult {
    pub repetitions: usize,
    pub covered: usize,
    /// `covered / repetitions`
    pub coverage: f64,
    /// Certified bound of each repetition.
    pub bounds: Vec<f64>,
    /// Brute-force `C̄(P)` of each repetition's posterior.
    pub true_costs: Vec<f64>,
    pub oracle: Vec<f64>,
}

/// Repeats data generation, learning and certification on fresh seeds
/// (`derive_seed(seed, REPETITION, r)`) and counts how often the bound
/// dominates the brute-force Gibbs cost.
pub fn coverage_check(
    problem: &CoverageProblem<'_>,
    repetitions: usize,
    oracle_draws: usize,
    seed: u64,
) -> Result<CoverageResult> {
    if repetitions == 0 {
        return Err(param_err("coverage needs at least one repetition"));
    }
    let oracle = oracle_costs(
        problem.dist,
        problem.controllers,
        problem.weights,
        problem.horizon,
        oracle_draws,
        seed,
    )?;
    let outcomes = (0..repetitions)
        .into_par_iter()
        .map(|r| {
            let rep_seed = derive_seed(seed, domain::REPETITION, r as u64);
            let data = generate_dataset(problem.dist, problem.controllers, problem.n, problem.horizon, rep_seed)?;
            let (posterior, total) = match problem.fixed_posterior {
                None => {
                    let res = learn_finite(
                        &data,
                        problem.controllers,
                        problem.weights,
                        problem.prior,
                        problem.dist,
                        problem.config,
                    )?;
                    (res.posterior, res.report.total)
                }
                Some(p) => (p.clone(), fixed_posterior_bound(problem, p, &data)?),
            };
            let true_cost = crate::cost::gibbs_empirical_cost(posterior.probs(), &oracle)?;
            Ok((total, true_cost))
        })
        .collect::<Result<Vec<(f64, f64)>>>()?;
    let covered = outcomes.iter().filter(|(b, c)| b >= c).count();
    Ok(CoverageResult {
        repetitions,
        covered,
        coverage: covered as f64 / repetitions as f64,
        bounds: outcomes.iter().map(|o| o.0).collect(),
        true_costs: outcomes.iter().map(|o| o.1).collect(),
        oracle,
    })
}

fn fixed_posterior_bound(problem: &CoverageProblem<'_>, p: &FinitePosterior, data: &Dataset) -> Result<f64> {
    let space = ControllerSpace::Finite(problem.controllers.to_vec());
    let consts = problem.dist.constants();
    let admissible = admissible_lambdas(problem.config, &space, problem.weights, &consts, problem.horizon)?;
    let per_traj = per_controller_costs(data, problem.weights)?;
    let costs: Vec<f64> = per_traj.iter().map(|c| mean(c)).collect();
    let b_cost = match problem.config.proxy {
        CostProxy::Empirical => LogValue::from_value(b_cost_empirical(&per_traj, problem.config.c_b)?),
        CostProxy::Theoretical => b_cost_theoretical(&space, problem.weights, &consts, problem.horizon)?,
    };
    let mut best = f64::INFINITY;
    for &lambda in &admissible.gamma {
        let r = finite_bound_rhs(
            p,
            problem.prior,
            &costs,
            lambda,
            b_cost,
            problem.config.proxy,
            data.n(),
            admissible.card(),
            problem.config.delta,
        )?;
        best = best.min(r.total);
    }
    Ok(best)
}
