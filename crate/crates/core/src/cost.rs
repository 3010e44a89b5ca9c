//! Quadratic trajectory costs and their Gibbs averages.
//!
//! Also houses the noise-expansion form of the cost, which rewrites the
//! cost of a closed-loop run as a quadratic form in the noise sequence.
//! It is quadratic in `T` and is only used to cross-check the recursion.

use crate::error::{dim_err, param_err, Result};
use crate::linalg::min_sym_eigenvalue;
use crate::numerics::neumaier_sum;
use crate::scalar::Scalar;
use crate::sysmodel::Trajectory;
use nalgebra::{DMatrix, DVector};
use std::collections::BTreeMap;

/// State and input weights `(Q, R)` with `Q ⪰ 0`, `R ≻ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostWeights<S: Scalar> {
    pub q: DMatrix<S>,
    pub r: DMatrix<S>,
}

impl<S: Scalar> CostWeights<S> {
    pub fn new(q: DMatrix<S>, r: DMatrix<S>) -> Result<Self> {
        if !q.is_square() || !r.is_square() {
            return Err(dim_err("Q and R must be square"));
        }
        let tol = S::of(1e-10);
        if crate::linalg::asymmetry(&q) > tol * (S::one() + q.norm())
            || crate::linalg::asymmetry(&r) > tol * (S::one() + r.norm())
        {
            return Err(param_err("Q and R must be symmetric"));
        }
        if min_sym_eigenvalue(&q) < -tol {
            return Err(param_err("Q must be positive semidefinite"));
        }
        if !(min_sym_eigenvalue(&r) > S::zero()) {
            return Err(param_err("R must be positive definite"));
        }
        Ok(CostWeights { q, r })
    }

    pub fn dim_x(&self) -> usize {
        self.q.nrows()
    }

    pub fn dim_u(&self) -> usize {
        self.r.nrows()
    }

    /// `Z = Q + Kᵀ R K`.
    pub fn stage_matrix(&self, k: &DMatrix<S>) -> DMatrix<S> {
        &self.q + k.transpose() * &self.r * k
    }
}

fn check_gain<S: Scalar>(k: &DMatrix<S>, weights: &CostWeights<S>) -> Result<()> {
    if k.shape() != (weights.dim_u(), weights.dim_x()) {
        return Err(dim_err(format!(
            "K is {:?}, weights expect ({}, {})",
            k.shape(),
            weights.dim_u(),
            weights.dim_x()
        )));
    }
    Ok(())
}

/// `Σ_{t=0}^{T-1} [x(t)ᵀQx(t) + (Kx(t))ᵀR(Kx(t))] + x(T)ᵀQx(T)` with
/// `x(0) = 0`.
pub fn quadratic_cost<S: Scalar>(
    k: &DMatrix<S>,
    traj: &Trajectory<S>,
    weights: &CostWeights<S>,
) -> Result<S> {
    check_gain(k, weights)?;
    if let Some(x) = traj.states.iter().find(|x| x.len() != weights.dim_x()) {
        return Err(dim_err(format!(
            "state of length {}, expected {}",
            x.len(),
            weights.dim_x()
        )));
    }
    let horizon = traj.horizon();
    let mut total = S::zero();
    for t in 0..horizon {
        let x = traj.state(t);
        let u = k * &x;
        total += x.dot(&(&weights.q * &x)) + u.dot(&(&weights.r * &u));
    }
    let xt = traj.state(horizon);
    total += xt.dot(&(&weights.q * &xt));
    Ok(total)
}

/// `Ĉ(K)`: mean quadratic cost over `n ≥ 1` trajectories.
pub fn empirical_cost(
    k: &DMatrix<f64>,
    trajectories: &[Trajectory<f64>],
    weights: &CostWeights<f64>,
) -> Result<f64> {
    if trajectories.is_empty() {
        return Err(param_err("empirical cost needs at least one trajectory"));
    }
    let costs = trajectories
        .iter()
        .map(|t| quadratic_cost(k, t, weights))
        .collect::<Result<Vec<_>>>()?;
    Ok(neumaier_sum(costs.iter().copied()) / costs.len() as f64)
}

/// `C̃(P) = Σ_j P_j Ĉ(K_j)`.
pub fn gibbs_empirical_cost(probs: &[f64], costs: &[f64]) -> Result<f64> {
    if probs.len() != costs.len() {
        return Err(dim_err(format!(
            "{} probabilities for {} costs",
            probs.len(),
            costs.len()
        )));
    }
    Ok(neumaier_sum(
        probs
            .iter()
            .zip(costs)
            .filter(|(&p, _)| p > 0.0)
            .map(|(&p, &c)| p * c),
    ))
}

/// `C̃_{L'}(P)`: plain average of the empirical costs of `L'` sampled
/// controllers.
pub fn mc_gibbs_cost(sampled_costs: &[f64]) -> Result<f64> {
    if sampled_costs.is_empty() {
        return Err(param_err("Monte Carlo Gibbs cost needs at least one controller"));
    }
    Ok(neumaier_sum(sampled_costs.iter().copied()) / sampled_costs.len() as f64)
}

/// The closed-loop matrices of the noise expansion:
/// `M = A + BK`, `Z = Q + KᵀRK`, and the grouped weights `H_i`, `H_ij`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopMatrices<S: Scalar> {
    pub m: DMatrix<S>,
    pub z: DMatrix<S>,
    pub h_diag: Vec<DMatrix<S>>,
    /// `H_ij` for `i < j`.
    pub h_cross: BTreeMap<(usize, usize), DMatrix<S>>,
}

impl<S: Scalar> ClosedLoopMatrices<S> {
    pub fn new(
        a: &DMatrix<S>,
        b: &DMatrix<S>,
        k: &DMatrix<S>,
        weights: &CostWeights<S>,
        horizon: usize,
    ) -> Result<Self> {
        check_gain(k, weights)?;
        if a.shape() != (weights.dim_x(), weights.dim_x()) || b.shape() != (weights.dim_x(), weights.dim_u()) {
            return Err(dim_err("A and B do not match the weights"));
        }
        let m = a + b * k;
        let z = weights.stage_matrix(k);
        Ok(Self::from_parts(m, z, &weights.q, horizon))
    }

    /// Builds `H_i = Σ_{t=i+1}^T (M^{t-1-i})ᵀ W_t M^{t-1-i}` and
    /// `H_ij = Σ_{t=j+1}^T (M^{t-1-i})ᵀ W_t M^{t-1-j}`, where `W_t = Z`
    /// for `t < T` and `W_T = Q` (terminal weight).
    pub fn from_parts(m: DMatrix<S>, z: DMatrix<S>, q: &DMatrix<S>, horizon: usize) -> Self {
        let dx = m.nrows();
        let mut powers = vec![DMatrix::<S>::identity(dx, dx)];
        for p in 1..horizon.max(1) {
            let next = &m * &powers[p - 1];
            powers.push(next);
        }
        let weight = |t: usize| if t < horizon { &z } else { q };
        let mut h_diag = Vec::with_capacity(horizon);
        let mut h_cross = BTreeMap::new();
        for i in 0..horizon {
            let mut hi = DMatrix::<S>::zeros(dx, dx);
            for t in (i + 1)..=horizon {
                let p = &powers[t - 1 - i];
                hi += p.transpose() * weight(t) * p;
            }
            h_diag.push(hi);
            for j in (i + 1)..horizon {
                let mut hij = DMatrix::<S>::zeros(dx, dx);
                for t in (j + 1)..=horizon {
                    hij += powers[t - 1 - i].transpose() * weight(t) * &powers[t - 1 - j];
                }
                h_cross.insert((i, j), hij);
            }
        }
        ClosedLoopMatrices {
            m,
            z,
            h_diag,
            h_cross,
        }
    }

    /// `Σ_i w(i)ᵀH_i w(i) + Σ_{i<j} (w(i)ᵀH_ij w(j) + w(j)ᵀH_ijᵀ w(i))`.
    pub fn cost_of_noise(&self, noise: &[DVector<S>]) -> Result<S> {
        if noise.len() != self.h_diag.len() {
            return Err(dim_err(format!(
                "noise has {} steps, expansion built for {}",
                noise.len(),
                self.h_diag.len()
            )));
        }
        let mut total = S::zero();
        for (i, h) in self.h_diag.iter().enumerate() {
            total += noise[i].dot(&(h * &noise[i]));
        }
        for (&(i, j), h) in &self.h_cross {
            let bilinear = noise[i].dot(&(h * &noise[j]));
            total += bilinear + bilinear;
        }
        Ok(total)
    }
}

/// Cost of a closed-loop run computed purely from its noise sequence.
pub fn noise_expansion_cost<S: Scalar>(
    m: &DMatrix<S>,
    z: &DMatrix<S>,
    q: &DMatrix<S>,
    noise: &[DVector<S>],
    horizon: usize,
) -> Result<S> {
    if !m.is_square() || z.shape() != m.shape() || q.shape() != m.shape() {
        return Err(dim_err("M, Z and Q must share one square shape"));
    }
    ClosedLoopMatrices::from_parts(m.clone(), z.clone(), q, horizon).cost_of_noise(noise)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sysmodel::simulate;
    use proptest::prelude::*;

    fn one(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    fn scalar_weights() -> CostWeights<f64> {
        CostWeights::new(one(1.0), one(0.1)).unwrap()
    }

    #[test]
    fn hand_evaluated_scalar_cost() {
        let traj = Trajectory {
            states: vec![DVector::from_element(1, 1.0), DVector::from_element(1, 1.7)],
            controller: one(0.2),
        };
        let c = quadratic_cost(&one(0.2), &traj, &scalar_weights()).unwrap();
        assert!((c - 3.894).abs() < 1e-12, "{c}");
    }

    #[test]
    fn zero_trajectory_costs_nothing() {
        let traj = Trajectory {
            states: vec![DVector::zeros(1); 4],
            controller: one(0.2),
        };
        assert_eq!(quadratic_cost(&one(0.2), &traj, &scalar_weights()).unwrap(), 0.0);
    }

    #[test]
    fn weights_are_validated() {
        assert!(CostWeights::new(one(-1.0), one(1.0)).is_err());
        assert!(CostWeights::new(one(1.0), one(0.0)).is_err());
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(CostWeights::new(asym, one(1.0)).is_err());
    }

    #[test]
    fn empirical_cost_is_the_mean() {
        let w = scalar_weights();
        let traj = |v: f64| Trajectory {
            states: vec![DVector::from_element(1, v)],
            controller: one(0.0),
        };
        // T = 1: cost = x(1)² (terminal only)
        let single = empirical_cost(&one(0.0), &[traj(2.0)], &w).unwrap();
        assert_eq!(single, 4.0);
        let two = empirical_cost(&one(0.0), &[traj(2.0_f64.sqrt()), traj(2.0)], &w).unwrap();
        assert!((two - 3.0).abs() < 1e-12);
        assert!(empirical_cost(&one(0.0), &[], &w).is_err());
    }

    #[test]
    fn gibbs_costs() {
        assert_eq!(gibbs_empirical_cost(&[0.25, 0.75], &[4.0, 8.0]).unwrap(), 7.0);
        assert_eq!(gibbs_empirical_cost(&[0.0, 1.0, 0.0], &[1.0, 5.0, 9.0]).unwrap(), 5.0);
        assert_eq!(gibbs_empirical_cost(&[1.0 / 3.0; 3], &[2.5; 3]).unwrap(), 2.5);
        assert!(gibbs_empirical_cost(&[1.0], &[1.0, 2.0]).is_err());
        assert_eq!(mc_gibbs_cost(&[4.2]).unwrap(), 4.2);
        assert_eq!(mc_gibbs_cost(&[3.0, 3.0, 3.0]).unwrap(), 3.0);
        assert!(mc_gibbs_cost(&[]).is_err());
    }

    #[test]
    fn single_step_expansion_is_terminal_weight() {
        let q = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let z = DMatrix::from_row_slice(2, 2, &[5.0, 0.0, 0.0, 5.0]);
        let m = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, -0.4, 0.2]);
        let w = vec![DVector::from_vec(vec![0.7, -1.1])];
        let c: f64 = noise_expansion_cost(&m, &z, &q, &w, 1).unwrap();
        let want = w[0].dot(&(&q * &w[0]));
        assert!((c - want).abs() < 1e-14);
        let zero = vec![DVector::zeros(2)];
        assert_eq!(noise_expansion_cost(&m, &z, &q, &zero, 1).unwrap(), 0.0);
    }

    #[test]
    fn h_matrices_are_symmetric_psd() {
        let a = DMatrix::from_row_slice(2, 2, &[0.5, 0.2, -0.1, 0.4]);
        let b = DMatrix::from_row_slice(2, 1, &[1.0, 0.3]);
        let k = DMatrix::from_row_slice(1, 2, &[-0.2, 0.1]);
        let w = CostWeights::new(DMatrix::identity(2, 2), one(0.1)).unwrap();
        let cl = ClosedLoopMatrices::new(&a, &b, &k, &w, 6).unwrap();
        assert_eq!(cl.h_diag.len(), 6);
        assert_eq!(cl.h_cross.len(), 15);
        for h in &cl.h_diag {
            assert!(crate::linalg::asymmetry(h) < 1e-12);
            assert!(min_sym_eigenvalue(h) > -1e-12);
        }
        assert!(crate::linalg::asymmetry(&cl.z) < 1e-15);
    }

    proptest! {
        #[test]
        fn cost_is_nonnegative_and_quadratic_in_noise(
            entries in proptest::collection::vec(-1.0f64..1.0, 4 + 2 + 2 + 10),
            alpha in -3.0f64..3.0,
        ) {
            let a = DMatrix::from_row_slice(2, 2, &entries[0..4]);
            let b = DMatrix::from_row_slice(2, 1, &entries[4..6]);
            let k = DMatrix::from_row_slice(1, 2, &entries[6..8]);
            let noise: Vec<_> = entries[8..].chunks(2).map(DVector::from_row_slice).collect();
            let scaled: Vec<_> = noise.iter().map(|w| w * alpha).collect();
            let w = CostWeights::new(DMatrix::identity(2, 2), one(0.1)).unwrap();
            let t1 = simulate(&a, &b, &k, &noise).unwrap();
            let t2 = simulate(&a, &b, &k, &scaled).unwrap();
            let c1 = quadratic_cost(&k, &t1, &w).unwrap();
            let c2 = quadratic_cost(&k, &t2, &w).unwrap();
            prop_assert!(c1 >= 0.0);
            prop_assert!((c2 - alpha * alpha * c1).abs() <= 1e-10 * (1.0 + c2.abs()));
            for (x1, x2) in t1.states.iter().zip(&t2.states) {
                prop_assert!((x2 - x1 * alpha).norm() <= 1e-12 * (1.0 + x2.norm()));
            }
        }

        #[test]
        fn gibbs_cost_is_monotone_in_costs(
            raw in proptest::collection::vec(0.01f64..1.0, 5),
            costs in proptest::collection::vec(0.0f64..100.0, 5),
            bumps in proptest::collection::vec(0.0f64..10.0, 5),
        ) {
            let s: f64 = raw.iter().sum();
            let p: Vec<f64> = raw.iter().map(|v| v / s).collect();
            let bigger: Vec<f64> = costs.iter().zip(&bumps).map(|(c, b)| c + b).collect();
            prop_assert!(gibbs_empirical_cost(&p, &costs).unwrap() <= gibbs_empirical_cost(&p, &bigger).unwrap() + 1e-12);
        }
    }
}
