//! Finite-horizon LQG baseline with full state feedback: backward Riccati
//! recursion and exact expected costs from state covariance propagation.

use crate::cost::CostWeights;
use crate::error::{dim_err, Error, Result};
use crate::scalar::Scalar;
use nalgebra::{Cholesky, DMatrix};

/// Largest accepted condition number of `R + BᵀP B`.
pub const MAX_CONDITION: f64 = 1e12;

/// Time-varying gains `K(0)..K(T-1)` and value matrices `P(0)..P(T)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution<S: Scalar> {
    pub gains: Vec<DMatrix<S>>,
    pub value_matrices: Vec<DMatrix<S>>,
}

impl<S: Scalar> RiccatiSolution<S> {
    pub fn horizon(&self) -> usize {
        self.gains.len()
    }
}

fn check_system<S: Scalar>(a: &DMatrix<S>, b: &DMatrix<S>, weights: &CostWeights<S>) -> Result<()> {
    let dx = weights.dim_x();
    if a.shape() != (dx, dx) {
        return Err(dim_err(format!("A is {:?}, expected ({dx}, {dx})", a.shape())));
    }
    if b.shape() != (dx, weights.dim_u()) {
        return Err(dim_err(format!(
            "B is {:?}, expected ({dx}, {})",
            b.shape(),
            weights.dim_u()
        )));
    }
    Ok(())
}

/// Backward recursion from `P(T) = Q`:
/// `K(t) = -(R + BᵀP B)⁻¹ BᵀP A`,
/// `P(t) = Q + AᵀP A - AᵀP B (R + BᵀP B)⁻¹ BᵀP A`, with `P = P(t+1)`.
pub fn riccati_solve<S: Scalar>(
    a: &DMatrix<S>,
    b: &DMatrix<S>,
    weights: &CostWeights<S>,
    horizon: usize,
) -> Result<RiccatiSolution<S>> {
    check_system(a, b, weights)?;
    let half = S::of(0.5);
    let mut value = vec![weights.q.clone(); horizon + 1];
    let mut gains = vec![DMatrix::zeros(weights.dim_u(), weights.dim_x()); horizon];
    for t in (0..horizon).rev() {
        let p = &value[t + 1];
        let bt_p = b.transpose() * p;
        let s = &weights.r + &bt_p * b;
        let s = (&s + s.transpose()) * half;
        let eig = s.clone().symmetric_eigenvalues();
        let (lo, hi) = eig.iter().fold((S::max_value().unwrap(), S::zero()), |(lo, hi), &e| {
            (if e < lo { e } else { lo }, if e > hi { e } else { hi })
        });
        if !(lo > S::zero()) || (hi / lo).as_f64() > MAX_CONDITION {
            return Err(Error::Singular(format!(
                "R + BᵀPB at t={t} has condition number {}",
                (hi / lo).as_f64()
            )));
        }
        let chol = Cholesky::new(s)
            .ok_or_else(|| Error::Singular(format!("R + BᵀPB at t={t} is not positive definite")))?;
        let bt_pa = &bt_p * a;
        let x = chol.solve(&bt_pa);
        let k = -&x;
        let at_p = a.transpose() * p;
        let next = &weights.q + &at_p * a - bt_pa.transpose() * &x;
        gains[t] = k;
        value[t] = (&next + next.transpose()) * half;
    }
    Ok(RiccatiSolution {
        gains,
        value_matrices: value,
    })
}

/// `J = Σ_{t=0}^{T-1} tr(P(t+1) Σ_w)`, the expected cost of the Riccati
/// gains from `x(0) = 0`.
pub fn lqg_expected_cost<S: Scalar>(solution: &RiccatiSolution<S>, noise_cov: &DMatrix<S>) -> Result<S> {
    let mut total = S::zero();
    for p in &solution.value_matrices[1..] {
        if p.shape() != noise_cov.shape() {
            return Err(dim_err("noise covariance does not match the state dimension"));
        }
        total += (p * noise_cov).trace();
    }
    Ok(total)
}

/// Exact expected cost of time-varying gains `K(t)` on a fixed `(A, B)`,
/// by propagating `Σ(t+1) = M(t) Σ(t) M(t)ᵀ + Σ_w` from `Σ(0) = 0`.
pub fn expected_cost_time_varying<S: Scalar>(
    a: &DMatrix<S>,
    b: &DMatrix<S>,
    gains: &[DMatrix<S>],
    weights: &CostWeights<S>,
    noise_cov: &DMatrix<S>,
) -> Result<S> {
    check_system(a, b, weights)?;
    let dx = weights.dim_x();
    let mut sigma = DMatrix::<S>::zeros(dx, dx);
    let mut total = S::zero();
    for k in gains {
        if k.shape() != (weights.dim_u(), dx) {
            return Err(dim_err(format!("gain is {:?}", k.shape())));
        }
        total += (weights.stage_matrix(k) * &sigma).trace();
        let m = a + b * k;
        sigma = &m * &sigma * m.transpose() + noise_cov;
    }
    total += (&weights.q * &sigma).trace();
    Ok(total)
}

/// Exact expected cost `C(K)` of a static gain on a fixed `(A, B)`.
pub fn expected_cost_static<S: Scalar>(
    a: &DMatrix<S>,
    b: &DMatrix<S>,
    k: &DMatrix<S>,
    weights: &CostWeights<S>,
    noise_cov: &DMatrix<S>,
    horizon: usize,
) -> Result<S> {
    let gains = vec![k.clone(); horizon];
    expected_cost_time_varying(a, b, &gains, weights, noise_cov)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    fn unit_weights() -> CostWeights<f64> {
        CostWeights::new(scalar(1.0), scalar(1.0)).unwrap()
    }

    #[test]
    fn one_step_hand_case() {
        let sol = riccati_solve(&scalar(1.0), &scalar(1.0), &unit_weights(), 1).unwrap();
        assert!((sol.gains[0][(0, 0)] + 0.5).abs() < 1e-15);
        // P(0) = 1 + 1 - 1·1/2 = 1.5
        assert!((sol.value_matrices[0][(0, 0)] - 1.5).abs() < 1e-15);
        let j = lqg_expected_cost(&sol, &scalar(0.25)).unwrap();
        assert!((j - 0.25).abs() < 1e-15);
    }

    #[test]
    fn no_input_gives_zero_gains() {
        let a = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.0, 0.7]);
        let b = DMatrix::zeros(2, 1);
        let w = CostWeights::new(DMatrix::identity(2, 2), scalar(0.1)).unwrap();
        let sol = riccati_solve(&a, &b, &w, 4).unwrap();
        assert!(sol.gains.iter().all(|k| k.iter().all(|&v| v == 0.0)));
        for t in 0..4 {
            let want = &w.q + a.transpose() * &sol.value_matrices[t + 1] * &a;
            assert!((&sol.value_matrices[t] - want).norm() < 1e-14);
        }
    }

    #[test]
    fn zero_noise_costs_nothing() {
        let sol = riccati_solve(&scalar(1.2), &scalar(0.5), &unit_weights(), 5).unwrap();
        assert_eq!(lqg_expected_cost(&sol, &scalar(0.0)).unwrap(), 0.0);
    }

    #[test]
    fn closed_form_matches_covariance_propagation() {
        let a = DMatrix::from_row_slice(2, 2, &[1.1, 0.4, -0.3, 0.9]);
        let b = DMatrix::from_row_slice(2, 1, &[0.5, 1.0]);
        let w = CostWeights::new(DMatrix::identity(2, 2), scalar(0.1)).unwrap();
        let cov = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![0.2, 0.25]));
        let sol = riccati_solve(&a, &b, &w, 12).unwrap();
        let j = lqg_expected_cost(&sol, &cov).unwrap();
        let direct = expected_cost_time_varying(&a, &b, &sol.gains, &w, &cov).unwrap();
        assert!((j - direct).abs() < 1e-10 * j);
        for t in 0..=12 {
            let p = &sol.value_matrices[t];
            assert!((p - p.transpose()).norm() <= 1e-10 * p.norm());
            assert!(crate::linalg::min_sym_eigenvalue(p) > -1e-10);
        }
        // any static gain does no better
        let k = DMatrix::from_row_slice(1, 2, &[0.2, -0.8]);
        assert!(expected_cost_static(&a, &b, &k, &w, &cov, 12).unwrap() >= j);
    }

    #[test]
    fn larger_state_weight_gives_larger_value() {
        let lo = riccati_solve(&scalar(0.9), &scalar(1.0), &unit_weights(), 6).unwrap();
        let hi_w = CostWeights::new(scalar(2.0), scalar(1.0)).unwrap();
        let hi = riccati_solve(&scalar(0.9), &scalar(1.0), &hi_w, 6).unwrap();
        for t in 0..=6 {
            assert!(hi.value_matrices[t][(0, 0)] >= lo.value_matrices[t][(0, 0)]);
        }
    }

    #[test]
    fn single_precision_agrees() {
        let one = DMatrix::from_element(1, 1, 1.0f32);
        let w = CostWeights::new(one.clone(), one.clone()).unwrap();
        let sol = riccati_solve(&one, &one, &w, 1).unwrap();
        assert!((sol.gains[0][(0, 0)] + 0.5).abs() < 1e-6);
    }
}
