use nalgebra::DMatrix;
use pbcontrol::bounds::oracle_costs;
use pbcontrol::experiments::preset;
use pbcontrol::learn::{evaluate_posterior, PosteriorRef};
use pbcontrol::lqg::{expected_cost_time_varying, lqg_expected_cost, riccati_solve};
use pbcontrol::posterior::FinitePosterior;
use pbcontrol::sysmodel::simulate;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn monte_carlo_matches_the_oracle_on_example1() {
    let cfg = preset("example1").unwrap();
    let controllers = cfg.controllers().unwrap();
    let weights = cfg.weights().unwrap();
    let truth = oracle_costs(&cfg.system, &controllers, &weights, cfg.horizon, 5000, 3).unwrap();
    let p = FinitePosterior::uniform(controllers.len()).unwrap();
    let est = evaluate_posterior(
        &cfg.system,
        PosteriorRef::Finite {
            posterior: &p,
            controllers: &controllers,
        },
        &weights,
        cfg.horizon,
        controllers.len(),
        2000,
        11,
    )
    .unwrap();
    let want = truth.iter().sum::<f64>() / truth.len() as f64;
    assert!((est.mean - want).abs() < 4.0 * est.std_error, "{} vs {want} ± {}", est.mean, est.std_error);
}

#[test]
fn simulated_riccati_gains_reach_the_closed_form() {
    let cfg = preset("example2").unwrap();
    let weights = cfg.weights().unwrap();
    let (a, b) = (&cfg.system.mean_a, &cfg.system.mean_b);
    let horizon = 10;
    let sol = riccati_solve(a, b, &weights, horizon).unwrap();
    let j = lqg_expected_cost(&sol, &cfg.system.noise_covariance()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let runs = 20_000;
    let mut costs = Vec::with_capacity(runs);
    for _ in 0..runs {
        let noise = cfg.system.sample_noise(horizon, &mut rng);
        // roll forward by hand with the time-varying gains
        let mut x = nalgebra::DVector::zeros(2);
        let mut c = 0.0;
        for (t, w) in noise.iter().enumerate() {
            let u = &sol.gains[t] * &x;
            c += x.dot(&(&weights.q * &x)) + u.dot(&(&weights.r * &u));
            x = a * &x + b * u + w;
        }
        costs.push(c + x.dot(&(&weights.q * &x)));
    }
    let (m, se) = pbcontrol::numerics::mean_and_std_error(&costs);
    assert!((m - j).abs() < 4.0 * se, "{m} ± {se} vs {j}");
    let direct = expected_cost_time_varying(a, b, &sol.gains, &weights, &cfg.system.noise_covariance()).unwrap();
    assert!((direct - j).abs() < 1e-9 * j);
}

proptest! {
    #[test]
    fn riccati_beats_every_static_gain(
        k in proptest::collection::vec(-1.5f64..1.5, 2),
        horizon in 1usize..12,
    ) {
        let cfg = preset("example2").unwrap();
        let weights = cfg.weights().unwrap();
        let (a, b) = (&cfg.system.mean_a, &cfg.system.mean_b);
        let cov = cfg.system.noise_covariance();
        let j = lqg_expected_cost(&riccati_solve(a, b, &weights, horizon).unwrap(), &cov).unwrap();
        let k = DMatrix::from_row_slice(1, 2, &k);
        let gains = vec![k.clone(); horizon];
        let c = expected_cost_time_varying(a, b, &gains, &weights, &cov).unwrap();
        prop_assert!(c >= j * (1.0 - 1e-12));
    }

    #[test]
    fn simulation_is_linear_in_the_noise(
        seed in any::<u64>(),
        alpha in -3.0f64..3.0,
    ) {
        let cfg = preset("example1").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b) = cfg.system.sample_system(&mut rng);
        let noise = cfg.system.sample_noise(6, &mut rng);
        let scaled: Vec<_> = noise.iter().map(|w| w * alpha).collect();
        let k = &cfg.controllers().unwrap()[7];
        let x = simulate(&a, &b, k, &noise).unwrap();
        let y = simulate(&a, &b, k, &scaled).unwrap();
        for (xs, ys) in x.states.iter().zip(&y.states) {
            prop_assert!((xs * alpha - ys).norm() <= 1e-12 * (1.0 + xs.norm()));
        }
    }
}
