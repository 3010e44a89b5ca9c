//! Posterior learning by minimizing the empirical PAC-Bayes objective.
//!
//! Finite spaces use the closed-form Gibbs posterior for every candidate λ
//! and keep the best. Truncated-Gaussian posteriors over a continuous gain
//! space are trained with a two-point random-direction gradient estimate.

use crate::bounds::{
    self, admissible_lambdas, b_cost_empirical, b_cost_theoretical, finite_bound_rhs,
    hoeffding_coefficient, lambda_term, per_controller_costs, AdmissibleSet, BoundConfig,
    BoundReport, ControllerSpace, CostProxy, InfiniteBoundInputs,
};
use crate::cost::CostWeights;
use crate::error::{param_err, Error, Result};
use crate::numerics::{mean, mean_and_std_error, neumaier_sum, LogValue};
use crate::posterior::{kl_truncgauss, FinitePosterior, TruncGaussPosterior};
use crate::rng::{derive_seed, domain, substream};
use crate::sysmodel::{generate_dataset_indexed, Dataset, SystemDistribution};
use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// `P_j ∝ P0_j exp(-λ Ĉ_j)`, the minimizer of `C̃(P) + KL(P‖P0)/λ`.
pub fn gibbs_posterior(p0: &FinitePosterior, costs: &[f64], lambda: f64) -> Result<FinitePosterior> {
    if p0.len() != costs.len() {
        return Err(crate::error::dim_err(format!(
            "prior over {} controllers, {} costs",
            p0.len(),
            costs.len()
        )));
    }
    if !(lambda > 0.0) {
        return Err(param_err(format!("λ = {lambda} must be positive")));
    }
    let logw: Vec<f64> = p0
        .probs()
        .iter()
        .zip(costs)
        .map(|(&p, &c)| if p > 0.0 { p.ln() - lambda * c } else { f64::NEG_INFINITY })
        .collect();
    FinitePosterior::from_log_weights(&logw)
}

/// Everything `learn_finite` found.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteLearnResult {
    pub posterior: FinitePosterior,
    pub lambda_star: f64,
    /// `(λ, objective)` for every λ ∈ Γ, in increasing λ.
    pub per_lambda: Vec<(f64, f64)>,
    /// The certificate at `(λ★, P★)` with the configured cost proxy.
    pub report: BoundReport,
    pub costs: Vec<f64>,
    pub b_hat: f64,
    pub admissible: AdmissibleSet,
}

/// Learning over an enumerated controller list. `dataset` must hold the
/// trajectories of controller `j` under key `j`.
pub fn learn_finite(
    dataset: &Dataset,
    controllers: &[DMatrix<f64>],
    weights: &CostWeights<f64>,
    p0: &FinitePosterior,
    dist: &SystemDistribution,
    config: &BoundConfig,
) -> Result<FiniteLearnResult> {
    if controllers.len() != p0.len() || dataset.num_controllers() != controllers.len() {
        return Err(crate::error::dim_err(format!(
            "{} controllers, prior over {}, dataset with {}",
            controllers.len(),
            p0.len(),
            dataset.num_controllers()
        )));
    }
    if dataset.per_controller.keys().copied().ne(0..controllers.len()) {
        return Err(param_err("dataset keys must be 0..L"));
    }
    let space = ControllerSpace::Finite(controllers.to_vec());
    let consts = dist.constants();
    let admissible = admissible_lambdas(config, &space, weights, &consts, dataset.horizon)?;
    let per_traj = per_controller_costs(dataset, weights)?;
    let costs: Vec<f64> = per_traj.iter().map(|c| mean(c)).collect();
    let b_hat = b_cost_empirical(&per_traj, config.c_b)?;
    let n = dataset.n();
    let card = admissible.card();
    let b_learn = LogValue::from_value(b_hat);

    let mut per_lambda = Vec::with_capacity(card);
    let mut best: Option<(f64, f64, FinitePosterior)> = None;
    for &lambda in &admissible.gamma {
        let p = gibbs_posterior(p0, &costs, lambda)?;
        let r = finite_bound_rhs(&p, p0, &costs, lambda, b_learn, CostProxy::Empirical, n, card, config.delta)?;
        per_lambda.push((lambda, r.total));
        if best.as_ref().is_none_or(|(_, obj, _)| r.total < *obj) {
            best = Some((lambda, r.total, p));
        }
    }
    let (lambda_star, _, posterior) = best.expect("Γ is not empty");
    let b_cert = match config.proxy {
        CostProxy::Empirical => b_learn,
        CostProxy::Theoretical => b_cost_theoretical(&space, weights, &consts, dataset.horizon)?,
    };
    let report = finite_bound_rhs(
        &posterior,
        p0,
        &costs,
        lambda_star,
        b_cert,
        config.proxy,
        n,
        card,
        config.delta,
    )?;
    Ok(FiniteLearnResult {
        posterior,
        lambda_star,
        per_lambda,
        report,
        costs,
        b_hat,
        admissible,
    })
}

/// Per-controller objective: `Ĉ(K) + C_max √(ln(2/δ')/(2L')) + λB̂²/(8n)
/// + (KL + ln(card(Γ)/δ))/λ`; `+∞` when the KL is infinite.
#[allow(clippy::too_many_arguments)]
pub fn phi_objective(
    cost_hat: f64,
    c_max: f64,
    b_hat: f64,
    kl: f64,
    lambda: f64,
    n: usize,
    l_prime: usize,
    card_gamma: usize,
    delta: f64,
    delta_prime: f64,
) -> f64 {
    if kl.is_infinite() {
        return f64::INFINITY;
    }
    let lt = lambda_term(lambda, LogValue::from_value(b_hat), n);
    cost_hat
        + c_max * hoeffding_coefficient(l_prime, delta_prime)
        + lt.value()
        + (kl + (card_gamma as f64 / delta).ln()) / lambda
}

fn default_sigma_min() -> f64 {
    1e-4
}

fn default_min_width() -> f64 {
    1e-3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdConfig {
    /// η
    pub step_size: f64,
    /// h
    pub smoothing: f64,
    pub iterations: usize,
    /// L'
    pub mc_controllers: usize,
    pub n_per_controller: usize,
    /// Floor applied to every σ after an update.
    #[serde(default = "default_sigma_min")]
    pub sigma_min: f64,
    /// Smallest support width `U - L` kept after an update.
    #[serde(default = "default_min_width")]
    pub min_width: f64,
    /// Optional cap on the Euclidean norm of one update `ηĜ`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_step: Option<f64>,
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size >= 0.0) || !self.step_size.is_finite() {
            return Err(param_err("step size η must be finite and nonnegative"));
        }
        if !(self.smoothing > 0.0) {
            return Err(param_err("smoothing h must be positive"));
        }
        if self.iterations == 0 || self.mc_controllers == 0 {
            return Err(param_err("iterations and L' must be at least 1"));
        }
        if self.n_per_controller < 2 {
            return Err(param_err("Algorithm needs n ≥ 2 trajectories per controller"));
        }
        if !(self.sigma_min > 0.0) || !(self.min_width > 0.0) {
            return Err(param_err("σ floor and support width floor must be positive"));
        }
        if let Some(c) = self.max_step {
            if !(c > 0.0) {
                return Err(param_err("max_step must be positive"));
            }
        }
        Ok(())
    }
}

/// One row of the learning trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub phi_theta: f64,
    pub phi_theta_prime: f64,
    /// `NaN` when the update was skipped.
    pub grad_norm: f64,
    pub kl: f64,
    pub b_hat: f64,
    /// θ after the update.
    pub theta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InfiniteLearnResult {
    pub posterior: TruncGaussPosterior,
    pub lambda: f64,
    pub admissible: AdmissibleSet,
    /// `(λ, Φ(P_θ0))` for every λ ∈ Γ, used to fix λ.
    pub initial_objectives: Vec<(f64, f64)>,
    pub trace: Vec<TraceRow>,
    pub skipped: usize,
}

/// Projects θ back to a valid posterior inside the prior's support: the
/// support is clipped to the prior box (keeping a minimum width) and σ is
/// floored.
pub fn project(theta: &TruncGaussPosterior, prior: &TruncGaussPosterior, sgd: &SgdConfig) -> TruncGaussPosterior {
    let mut p = theta.clone();
    for i in 0..p.dim() {
        let (lo0, hi0) = (prior.lower[i], prior.upper[i]);
        let width = (sgd.min_width * (hi0 - lo0)).min(hi0 - lo0);
        let mut lo = finite_or(p.lower[i], lo0).clamp(lo0, hi0);
        let mut hi = finite_or(p.upper[i], hi0).clamp(lo0, hi0);
        if lo > hi {
            std::mem::swap(&mut lo, &mut hi);
        }
        if hi - lo < width {
            let mid = (0.5 * (lo + hi)).clamp(lo0 + 0.5 * width, hi0 - 0.5 * width);
            lo = mid - 0.5 * width;
            hi = mid + 0.5 * width;
        }
        p.lower[i] = lo;
        p.upper[i] = hi;
        p.sigma[i] = finite_or(p.sigma[i], prior.sigma[i]).max(sgd.sigma_min);
        p.mu[i] = finite_or(p.mu[i], prior.mu[i]);
    }
    p
}

fn finite_or(x: f64, fallback: f64) -> f64 {
    if x.is_finite() {
        x
    } else {
        fallback
    }
}

/// Draws `count` gains from `p`, gain `j` from stream `(seed, major, first + j)`.
fn sample_gains(p: &TruncGaussPosterior, count: usize, seed: u64, major: u64, first: usize) -> Vec<DMatrix<f64>> {
    (0..count)
        .map(|j| {
            let mut rng = substream(seed, domain::CONTROLLER_SAMPLING, major, (first + j) as u64);
            p.sample_gain(&mut rng)
        })
        .collect()
}

/// Costs of one batch of sampled controllers.
struct Batch {
    mean_costs: Vec<f64>,
    per_traj: Vec<Vec<f64>>,
    dataset: Dataset,
}

fn run_batch(
    dist: &SystemDistribution,
    gains: &[DMatrix<f64>],
    weights: &CostWeights<f64>,
    n: usize,
    horizon: usize,
    seed: u64,
) -> Result<Batch> {
    let indexed: Vec<(usize, &DMatrix<f64>)> = gains.iter().enumerate().collect();
    let dataset = generate_dataset_indexed(dist, &indexed, n, horizon, seed, domain::TRAIN)?;
    let per_traj = per_controller_costs(&dataset, weights)?;
    let mean_costs = per_traj.iter().map(|c| mean(c)).collect();
    Ok(Batch {
        mean_costs,
        per_traj,
        dataset,
    })
}

/// The gain-norm bound `B_k` used for `C_max`: configured, or the largest
/// norm in the prior's support.
pub fn gain_norm_bound(config: &BoundConfig, prior: &TruncGaussPosterior) -> f64 {
    config.gain_norm_bound.unwrap_or_else(|| prior.max_gain_norm())
}

/// Trains a truncated-Gaussian posterior from `theta0`.
///
/// λ is fixed once per run to the element of Γ with the smallest objective
/// at `theta0`. Each iteration draws `Δ ~ N(0, I)`, evaluates the mean
/// objective over `L'` controllers from `P_θ` and from the projected
/// `P_{θ+hΔ}` (independent samples, `n` fresh trajectories each, `B̂` and
/// `C_max` from the union of both batches), and steps
/// `θ ← proj(θ - η ((Φ' - Φ)/h) Δ)`. Non-finite estimates skip the step.
#[allow(clippy::too_many_arguments)]
pub fn learn_infinite(
    dist: &SystemDistribution,
    prior: &TruncGaussPosterior,
    theta0: &TruncGaussPosterior,
    weights: &CostWeights<f64>,
    config: &BoundConfig,
    sgd: &SgdConfig,
    horizon: usize,
    seed: u64,
) -> Result<InfiniteLearnResult> {
    sgd.validate()?;
    config.validate()?;
    let delta_prime = config
        .delta_prime
        .ok_or_else(|| param_err("the infinite-space objective needs δ'"))?;
    if !theta0.support_within(prior) {
        return Err(Error::InfiniteKl("θ0 support leaves the prior support".into()));
    }
    let space = ControllerSpace::Box {
        dim_u: prior.dim_u,
        dim_x: prior.dim_x,
        lower: prior.lower.clone(),
        upper: prior.upper.clone(),
    };
    let admissible = admissible_lambdas(config, &space, weights, &dist.constants(), horizon)?;
    let card = admissible.card();
    let (lp, n) = (sgd.mc_controllers, sgd.n_per_controller);
    let b_k = gain_norm_bound(config, prior);

    let objective = |batch_costs: &[f64], c_max: f64, b_hat: f64, kl: f64, lambda: f64| {
        let phis: Vec<f64> = batch_costs
            .iter()
            .map(|&c| phi_objective(c, c_max, b_hat, kl, lambda, n, lp, card, config.delta, delta_prime))
            .collect();
        if phis.iter().any(|p| p.is_infinite()) {
            f64::INFINITY
        } else {
            neumaier_sum(phis) / lp as f64
        }
    };

    // λ selection on a dedicated batch at θ0 (stream index 0).
    let mut theta = project(theta0, prior, sgd);
    let gains0 = sample_gains(&theta, lp, seed, 0, 0);
    let batch0 = run_batch(dist, &gains0, weights, n, horizon, derive_seed(seed, domain::TRAIN, 0))?;
    let b0 = b_cost_empirical(&batch0.per_traj, config.c_b)?;
    let cm0 = bounds::c_max(&batch0.dataset, b_k, weights)?;
    let kl0 = kl_truncgauss(&theta, prior)?;
    let initial_objectives: Vec<(f64, f64)> = admissible
        .gamma
        .iter()
        .map(|&l| (l, objective(&batch0.mean_costs, cm0, b0, kl0, l)))
        .collect();
    let lambda = initial_objectives
        .iter()
        .fold((f64::NAN, f64::INFINITY), |best, &(l, o)| {
            if o < best.1 || best.0.is_nan() {
                (l, o)
            } else {
                best
            }
        })
        .0;

    let dim = 4 * theta.dim();
    let mut trace = Vec::with_capacity(sgd.iterations);
    let mut skipped = 0;
    for it in 1..=sgd.iterations {
        let mut rng = substream(seed, domain::PERTURBATION, it as u64, 0);
        let delta_dir: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let base = theta.theta();
        let shifted: Vec<f64> = base.iter().zip(&delta_dir).map(|(t, d)| t + sgd.smoothing * d).collect();
        let theta_p = project(&theta.with_theta(&shifted), prior, sgd);

        let mut gains = sample_gains(&theta, lp, seed, it as u64, 0);
        gains.extend(sample_gains(&theta_p, lp, seed, it as u64, lp));
        let batch = run_batch(dist, &gains, weights, n, horizon, derive_seed(seed, domain::TRAIN, it as u64))?;
        let b_hat = b_cost_empirical(&batch.per_traj, config.c_b)?;
        let cm = bounds::c_max(&batch.dataset, b_k, weights)?;
        let kl = kl_truncgauss(&theta, prior)?;
        let kl_p = kl_truncgauss(&theta_p, prior)?;
        let phi = objective(&batch.mean_costs[..lp], cm, b_hat, kl, lambda);
        let phi_p = objective(&batch.mean_costs[lp..], cm, b_hat, kl_p, lambda);

        let scale = (phi_p - phi) / sgd.smoothing;
        let grad_norm = scale.abs() * delta_dir.iter().map(|d| d * d).sum::<f64>().sqrt();
        if grad_norm.is_finite() {
            let mut factor = sgd.step_size * scale;
            if let Some(cap) = sgd.max_step {
                let step_norm = sgd.step_size * grad_norm;
                if step_norm > cap {
                    factor *= cap / step_norm;
                }
            }
            let next: Vec<f64> = base
                .iter()
                .zip(&delta_dir)
                .map(|(t, d)| t - factor * d)
                .collect();
            theta = project(&theta.with_theta(&next), prior, sgd);
        } else {
            skipped += 1;
        }
        trace.push(TraceRow {
            iteration: it,
            phi_theta: phi,
            phi_theta_prime: phi_p,
            grad_norm: if grad_norm.is_finite() { grad_norm } else { f64::NAN },
            kl,
            b_hat,
            theta: theta.theta(),
        });
    }
    if skipped == sgd.iterations {
        return Err(Error::NoProgress(skipped));
    }
    Ok(InfiniteLearnResult {
        posterior: theta,
        lambda,
        admissible,
        initial_objectives,
        trace,
        skipped,
    })
}

/// Certificate for a fixed truncated-Gaussian posterior on fresh data:
/// `L'` controllers sampled from `posterior`, `n` trajectories each.
#[allow(clippy::too_many_arguments)]
pub fn certify_truncgauss(
    dist: &SystemDistribution,
    posterior: &TruncGaussPosterior,
    prior: &TruncGaussPosterior,
    weights: &CostWeights<f64>,
    config: &BoundConfig,
    lambda: f64,
    card_gamma: usize,
    l_prime: usize,
    n: usize,
    horizon: usize,
    seed: u64,
) -> Result<BoundReport> {
    let delta_prime = config
        .delta_prime
        .ok_or_else(|| param_err("the infinite-space certificate needs δ'"))?;
    let gains = sample_gains(posterior, l_prime, seed, u64::MAX, 0);
    let batch = run_batch(dist, &gains, weights, n, horizon, derive_seed(seed, domain::TRAIN, u64::MAX))?;
    let b_cost = match config.proxy {
        CostProxy::Empirical => LogValue::from_value(b_cost_empirical(&batch.per_traj, config.c_b)?),
        CostProxy::Theoretical => {
            let space = ControllerSpace::Box {
                dim_u: prior.dim_u,
                dim_x: prior.dim_x,
                lower: prior.lower.clone(),
                upper: prior.upper.clone(),
            };
            b_cost_theoretical(&space, weights, &dist.constants(), horizon)?
        }
    };
    let inputs = InfiniteBoundInputs {
        mc_cost: crate::cost::mc_gibbs_cost(&batch.mean_costs)?,
        gain_norm_bound: gain_norm_bound(config, prior),
        kl: kl_truncgauss(posterior, prior)?,
        lambda,
        b_cost,
        kind: config.proxy,
        l_prime,
        card_gamma,
        delta: config.delta,
        delta_prime,
    };
    bounds::infinite_bound_rhs(&batch.dataset, weights, &inputs)
}

/// A posterior to evaluate.
#[derive(Debug, Clone, Copy)]
pub enum PosteriorRef<'a> {
    Finite {
        posterior: &'a FinitePosterior,
        controllers: &'a [DMatrix<f64>],
    },
    TruncGauss(&'a TruncGaussPosterior),
}

/// Monte Carlo estimate of the Gibbs expected cost.
#[derive(Debug, Clone, PartialEq)]
pub struct CostEstimate {
    pub mean: f64,
    pub std_error: f64,
    /// Per-controller mean test cost (enumerated or sampled controllers).
    pub per_controller: Vec<f64>,
}

/// Estimates `C̄(P)` on fresh test trajectories. Finite posteriors are
/// enumerated (every controller with positive mass gets `n_trajectories`
/// trajectories); truncated Gaussians are sampled `n_controllers` times.
/// Test trajectories of controller `j` depend only on `(seed, j)`, so two
/// posteriors over the same list share their test set.
pub fn evaluate_posterior(
    dist: &SystemDistribution,
    posterior: PosteriorRef<'_>,
    weights: &CostWeights<f64>,
    horizon: usize,
    n_controllers: usize,
    n_trajectories: usize,
    seed: u64,
) -> Result<CostEstimate> {
    if n_controllers == 0 || n_trajectories == 0 {
        return Err(param_err("evaluation counts must be at least 1"));
    }
    match posterior {
        PosteriorRef::Finite {
            posterior,
            controllers,
        } => {
            if posterior.len() != controllers.len() {
                return Err(crate::error::dim_err("posterior and controller list differ in length"));
            }
            let active: Vec<(usize, &DMatrix<f64>)> = controllers
                .iter()
                .enumerate()
                .filter(|(j, _)| posterior.probs()[*j] > 0.0)
                .collect();
            let ds = generate_dataset_indexed(dist, &active, n_trajectories, horizon, seed, domain::TEST)?;
            let per_traj = per_controller_costs(&ds, weights)?;
            let mut per_controller = vec![0.0; controllers.len()];
            let mut var = Vec::with_capacity(active.len());
            let mut terms = Vec::with_capacity(active.len());
            for ((j, _), c) in active.iter().zip(&per_traj) {
                let (m, se) = mean_and_std_error(c);
                let p = posterior.probs()[*j];
                per_controller[*j] = m;
                terms.push(p * m);
                var.push((p * se).powi(2));
            }
            Ok(CostEstimate {
                mean: neumaier_sum(terms),
                std_error: neumaier_sum(var).sqrt(),
                per_controller,
            })
        }
        PosteriorRef::TruncGauss(p) => {
            let gains = sample_gains(p, n_controllers, seed, u64::MAX - 1, 0);
            let indexed: Vec<(usize, &DMatrix<f64>)> = gains.iter().enumerate().collect();
            let ds = generate_dataset_indexed(dist, &indexed, n_trajectories, horizon, seed, domain::TEST)?;
            let per_controller: Vec<f64> = per_controller_costs(&ds, weights)?
                .iter()
                .map(|c| mean(c))
                .collect();
            let (m, se) = mean_and_std_error(&per_controller);
            Ok(CostEstimate {
                mean: m,
                std_error: se,
                per_controller,
            })
        }
    }
}
