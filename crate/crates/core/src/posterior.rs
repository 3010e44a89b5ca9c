//! Distributions over controllers: finite pmfs over an enumerated space and
//! product truncated Gaussians over the entries of a gain.

use crate::error::{dim_err, param_err, Result};
use crate::truncnorm::TruncatedNormal;
use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Renormalization tolerance for pmfs.
pub const PMF_TOLERANCE: f64 = 1e-12;

/// Probability mass function over `L` enumerated controllers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct FinitePosterior {
    probs: Vec<f64>,
}

impl FinitePosterior {
    /// Accepts a nonnegative vector whose sum is within [`PMF_TOLERANCE`]
    /// of one, and renormalizes it exactly.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(param_err("a pmf needs at least one entry"));
        }
        if let Some(p) = probs.iter().find(|p| !(**p >= 0.0) || !p.is_finite()) {
            return Err(param_err(format!("pmf entry {p} is not a nonnegative number")));
        }
        let total: f64 = crate::numerics::neumaier_sum(probs.iter().copied());
        if (total - 1.0).abs() > PMF_TOLERANCE {
            return Err(param_err(format!("pmf sums to {total}, not 1")));
        }
        Ok(FinitePosterior {
            probs: probs.into_iter().map(|p| p / total).collect(),
        })
    }

    pub fn uniform(len: usize) -> Result<Self> {
        if len == 0 {
            return Err(param_err("a pmf needs at least one entry"));
        }
        Ok(FinitePosterior {
            probs: vec![1.0 / len as f64; len],
        })
    }

    pub fn point_mass(len: usize, at: usize) -> Result<Self> {
        if at >= len {
            return Err(param_err(format!("point mass index {at} out of {len}")));
        }
        let mut probs = vec![0.0; len];
        probs[at] = 1.0;
        Ok(FinitePosterior { probs })
    }

    /// Builds a pmf from unnormalized log-weights via log-sum-exp.
    pub fn from_log_weights(log_weights: &[f64]) -> Result<Self> {
        let lse = crate::numerics::log_sum_exp(log_weights);
        if !lse.is_finite() {
            return Err(param_err("log-weights do not define a pmf"));
        }
        let probs: Vec<f64> = log_weights.iter().map(|w| (w - lse).exp()).collect();
        let total: f64 = crate::numerics::neumaier_sum(probs.iter().copied());
        Ok(FinitePosterior {
            probs: probs.into_iter().map(|p| p / total).collect(),
        })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

impl TryFrom<Vec<f64>> for FinitePosterior {
    type Error = crate::Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        FinitePosterior::new(v)
    }
}

impl From<FinitePosterior> for Vec<f64> {
    fn from(p: FinitePosterior) -> Self {
        p.probs
    }
}

/// `KL(P ‖ P0)` with `0 ln 0 = 0`; `+∞` when `P` puts mass where `P0` has none.
pub fn kl_finite(p: &FinitePosterior, p0: &FinitePosterior) -> Result<f64> {
    if p.len() != p0.len() {
        return Err(dim_err(format!("pmfs of length {} and {}", p.len(), p0.len())));
    }
    let mut terms = Vec::with_capacity(p.len());
    for (&pj, &qj) in p.probs.iter().zip(&p0.probs) {
        if pj == 0.0 {
            continue;
        }
        if qj == 0.0 {
            return Ok(f64::INFINITY);
        }
        terms.push(pj * (pj / qj).ln());
    }
    Ok(crate::numerics::neumaier_sum(terms).max(0.0))
}

/// Product of independent truncated normals over the entries of a
/// `dim_u × dim_x` gain, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TruncGaussSpec", into = "TruncGaussSpec")]
pub struct TruncGaussPosterior {
    pub dim_u: usize,
    pub dim_x: usize,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// File form of [`TruncGaussPosterior`]: the parameter θ as four vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruncGaussSpec {
    pub dim_u: usize,
    pub dim_x: usize,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl TryFrom<TruncGaussSpec> for TruncGaussPosterior {
    type Error = crate::Error;
    fn try_from(s: TruncGaussSpec) -> Result<Self> {
        TruncGaussPosterior::new(s.dim_u, s.dim_x, s.mu, s.sigma, s.lower, s.upper)
    }
}

impl From<TruncGaussPosterior> for TruncGaussSpec {
    fn from(p: TruncGaussPosterior) -> Self {
        TruncGaussSpec {
            dim_u: p.dim_u,
            dim_x: p.dim_x,
            mu: p.mu,
            sigma: p.sigma,
            lower: p.lower,
            upper: p.upper,
        }
    }
}

impl TruncGaussPosterior {
    pub fn new(
        dim_u: usize,
        dim_x: usize,
        mu: Vec<f64>,
        sigma: Vec<f64>,
        lower: Vec<f64>,
        upper: Vec<f64>,
    ) -> Result<Self> {
        let d = dim_u * dim_x;
        if d == 0 {
            return Err(param_err("gain dimensions must be positive"));
        }
        for (name, v) in [("mu", &mu), ("sigma", &sigma), ("lower", &lower), ("upper", &upper)] {
            if v.len() != d {
                return Err(dim_err(format!("{name} has {} entries, expected {d}", v.len())));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(param_err(format!("{name} has a non-finite entry")));
            }
        }
        for i in 0..d {
            if !(sigma[i] > 0.0) {
                return Err(param_err(format!("sigma[{i}] = {} must be positive", sigma[i])));
            }
            if !(lower[i] < upper[i]) {
                return Err(param_err(format!(
                    "support [{}, {}] of entry {i} is empty",
                    lower[i], upper[i]
                )));
            }
        }
        Ok(TruncGaussPosterior {
            dim_u,
            dim_x,
            mu,
            sigma,
            lower,
            upper,
        })
    }

    /// Number of gain entries.
    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn entry(&self, i: usize) -> TruncatedNormal {
        TruncatedNormal {
            mu: self.mu[i],
            sigma: self.sigma[i],
            lower: self.lower[i],
            upper: self.upper[i],
        }
    }

    /// θ flattened as `(μ, σ, L, U)`.
    pub fn theta(&self) -> Vec<f64> {
        [&self.mu, &self.sigma, &self.lower, &self.upper]
            .into_iter()
            .flatten()
            .copied()
            .collect()
    }

    /// Inverse of [`TruncGaussPosterior::theta`]; no validation.
    pub fn with_theta(&self, theta: &[f64]) -> Self {
        let d = self.dim();
        assert_eq!(theta.len(), 4 * d, "theta length");
        TruncGaussPosterior {
            dim_u: self.dim_u,
            dim_x: self.dim_x,
            mu: theta[..d].to_vec(),
            sigma: theta[d..2 * d].to_vec(),
            lower: theta[2 * d..3 * d].to_vec(),
            upper: theta[3 * d..].to_vec(),
        }
    }

    /// True when every entry's support lies inside `other`'s.
    pub fn support_within(&self, other: &TruncGaussPosterior) -> bool {
        self.dim() == other.dim()
            && (0..self.dim())
                .all(|i| self.lower[i] >= other.lower[i] && self.upper[i] <= other.upper[i])
    }

    /// Independent per-entry draw reshaped row-major to `dim_u × dim_x`.
    pub fn sample_gain<R: Rng + ?Sized>(&self, rng: &mut R) -> DMatrix<f64> {
        let vals: Vec<f64> = (0..self.dim()).map(|i| self.entry(i).sample(rng)).collect();
        DMatrix::from_row_slice(self.dim_u, self.dim_x, &vals)
    }

    pub fn mean_gain(&self) -> DMatrix<f64> {
        let vals: Vec<f64> = (0..self.dim()).map(|i| self.entry(i).mean()).collect();
        DMatrix::from_row_slice(self.dim_u, self.dim_x, &vals)
    }

    /// Largest spectral norm any gain in the support can have (only exact
    /// for row gains, an upper bound via Frobenius otherwise).
    pub fn max_gain_norm(&self) -> f64 {
        let corner: f64 = (0..self.dim())
            .map(|i| {
                let m = self.lower[i].abs().max(self.upper[i].abs());
                m * m
            })
            .sum();
        corner.sqrt()
    }
}

/// Sum of per-entry truncated-normal KLs; `+∞` when any support of `P`
/// leaves the corresponding support of `P0`.
pub fn kl_truncgauss(p: &TruncGaussPosterior, p0: &TruncGaussPosterior) -> Result<f64> {
    if p.dim() != p0.dim() {
        return Err(dim_err(format!(
            "posteriors over {} and {} entries",
            p.dim(),
            p0.dim()
        )));
    }
    let mut total = 0.0;
    for i in 0..p.dim() {
        let kl = p.entry(i).kl_divergence(&p0.entry(i));
        if kl.is_infinite() {
            return Ok(f64::INFINITY);
        }
        total += kl;
    }
    Ok(total)
}
