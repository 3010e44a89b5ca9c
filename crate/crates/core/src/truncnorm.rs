//! Univariate truncated normal: inverse-CDF sampling, closed-form moments
//! and the KL divergence between two truncated normals.

use crate::error::{param_err, Result};
use crate::numerics::{
    ln_interval_mass, ln_std_normal_pdf, ln_std_normal_sf, std_normal_cdf, std_normal_isf_ln,
    std_normal_quantile,
};
use rand::Rng;

/// `N(mu, sigma²)` restricted to `[lower, upper]`.
///
/// `sigma == 0` is accepted and denotes the point mass at `mu` clamped into
/// the interval; moments and KL require `sigma > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncatedNormal {
    pub mu: f64,
    pub sigma: f64,
    pub lower: f64,
    pub upper: f64,
}

impl TruncatedNormal {
    pub fn new(mu: f64, sigma: f64, lower: f64, upper: f64) -> Result<Self> {
        if !(sigma >= 0.0) || !mu.is_finite() || sigma.is_infinite() {
            return Err(param_err(format!(
                "truncated normal needs finite mu and sigma >= 0, got mu={mu}, sigma={sigma}"
            )));
        }
        if !(lower <= upper) || lower.is_nan() || upper.is_nan() {
            return Err(param_err(format!(
                "truncated normal needs lower <= upper, got [{lower}, {upper}]"
            )));
        }
        Ok(TruncatedNormal {
            mu,
            sigma,
            lower,
            upper,
        })
    }

    fn is_point(&self) -> bool {
        self.sigma == 0.0 || self.lower == self.upper
    }

    /// Standardized truncation points `(α, β)`.
    pub fn alpha_beta(&self) -> (f64, f64) {
        (
            (self.lower - self.mu) / self.sigma,
            (self.upper - self.mu) / self.sigma,
        )
    }

    /// `ln(Φ(β) - Φ(α))`, the log of the untruncated mass kept by the interval.
    pub fn ln_mass(&self) -> f64 {
        let (a, b) = self.alpha_beta();
        ln_interval_mass(a, b)
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        if x < self.lower || x > self.upper {
            return f64::NEG_INFINITY;
        }
        ln_std_normal_pdf((x - self.mu) / self.sigma) - self.sigma.ln() - self.ln_mass()
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.ln_pdf(x).exp()
    }

    /// Draws one value by mapping a single uniform through the truncated
    /// inverse CDF. Exactly one `f64` is consumed from `rng` per call.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        self.quantile(u)
    }

    /// Truncated quantile function for `u ∈ [0, 1)`.
    pub fn quantile(&self, u: f64) -> f64 {
        if self.is_point() {
            return self.mu.clamp(self.lower, self.upper);
        }
        let (a, b) = self.alpha_beta();
        let z = if a >= 0.0 {
            right_tail_quantile(a, b, u)
        } else if b <= 0.0 {
            -right_tail_quantile(-b, -a, 1.0 - u)
        } else {
            let pa = std_normal_cdf(a);
            let pb = std_normal_cdf(b);
            std_normal_quantile(pa + u * (pb - pa))
        };
        (self.mu + self.sigma * z).clamp(self.lower, self.upper)
    }

    /// `(E[z], E[z²])` of the standardized variable `z = (x - mu)/sigma`.
    fn standardized_moments(&self) -> (f64, f64) {
        let (a, b) = self.alpha_beta();
        let ln_z = ln_interval_mass(a, b);
        let ratio = |t: f64| {
            if t.is_infinite() {
                0.0
            } else {
                (ln_std_normal_pdf(t) - ln_z).exp()
            }
        };
        let (ra, rb) = (ratio(a), ratio(b));
        let m1 = ra - rb;
        let m2 = 1.0 + finite_or_zero(a) * ra - finite_or_zero(b) * rb;
        (m1, m2.max(m1 * m1))
    }

    pub fn mean(&self) -> f64 {
        if self.is_point() {
            return self.mu.clamp(self.lower, self.upper);
        }
        let (m1, _) = self.standardized_moments();
        (self.mu + self.sigma * m1).clamp(self.lower, self.upper)
    }

    pub fn variance(&self) -> f64 {
        if self.is_point() {
            return 0.0;
        }
        let (m1, m2) = self.standardized_moments();
        (self.sigma * self.sigma * (m2 - m1 * m1)).max(0.0)
    }

    /// `KL(self ‖ other)`; `+∞` when the support of `self` is not contained
    /// in the support of `other`.
    pub fn kl_divergence(&self, other: &TruncatedNormal) -> f64 {
        if self.lower < other.lower || self.upper > other.upper {
            return f64::INFINITY;
        }
        if self.sigma <= 0.0 || other.sigma <= 0.0 {
            return if self == other { 0.0 } else { f64::INFINITY };
        }
        let (m1, m2) = self.standardized_moments();
        let mean = self.mu + self.sigma * m1;
        let var = self.sigma * self.sigma * (m2 - m1 * m1).max(0.0);
        let d0 = mean - other.mu;
        let e_other = (var + d0 * d0) / (other.sigma * other.sigma);
        let kl = other.ln_mass() + other.sigma.ln() - self.ln_mass() - self.sigma.ln() - 0.5 * m2
            + 0.5 * e_other;
        kl.max(0.0)
    }
}

fn finite_or_zero(t: f64) -> f64 {
    if t.is_finite() {
        t
    } else {
        0.0
    }
}

/// Quantile of the standard normal truncated to `[a, b]` with `a >= 0`,
/// computed through the upper tail to avoid cancellation.
fn right_tail_quantile(a: f64, b: f64, u: f64) -> f64 {
    let la = ln_std_normal_sf(a);
    let lb = ln_std_normal_sf(b);
    if la < -700.0 {
        // Far tail: the truncated law is exponential with rate `a` to
        // leading order.
        let width = b - a;
        let keep = -(-a * width).exp_m1();
        let e = -(-u * keep).ln_1p();
        return (a + e / a).min(b);
    }
    let r = (lb - la).exp();
    let ln_q = la + (-u * (1.0 - r)).ln_1p();
    std_normal_isf_ln(ln_q).clamp(a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_sigma_is_the_clamped_mean() {
        let t = TruncatedNormal::new(0.7, 0.0, -0.3, 0.3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(t.sample(&mut rng), 0.3);
        let t = TruncatedNormal::new(0.1, 0.0, -0.3, 0.3).unwrap();
        assert_eq!(t.sample(&mut rng), 0.1);
    }

    #[test]
    fn symmetric_interval_has_mean_at_center() {
        let t = TruncatedNormal::new(0.0, 0.1, -0.3, 0.3).unwrap();
        assert!(t.mean().abs() < 1e-15);
        // Var of N(0,1) truncated to [-3,3]: 1 - 6φ(3)/(2Φ(3)-1)
        let phi3 = (-4.5f64).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let z = 2.0 * std_normal_cdf(3.0) - 1.0;
        let want = 0.01 * (1.0 - 6.0 * phi3 / z);
        assert!((t.variance() - want).abs() < 1e-15);
    }

    #[test]
    fn one_sided_mean_is_inverse_mills_ratio() {
        let t = TruncatedNormal::new(0.0, 1.0, 0.0, f64::INFINITY).unwrap();
        assert!((t.mean() - (2.0 / std::f64::consts::PI).sqrt()).abs() < 1e-14);
        assert!((t.variance() - (1.0 - 2.0 / std::f64::consts::PI)).abs() < 1e-14);
    }

    #[test]
    fn far_tail_sampling_stays_in_bounds() {
        let t = TruncatedNormal::new(-1.0, 1e-4, 0.0, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let x = t.sample(&mut rng);
            assert!((0.0..=0.5).contains(&x));
            assert!(x < 1e-6);
        }
        let m = t.mean();
        assert!((0.0..1e-6).contains(&m), "{m}");
    }

    #[test]
    fn quantile_is_monotone_and_hits_endpoints() {
        let t = TruncatedNormal::new(0.2, 0.5, -0.5, 1.5).unwrap();
        let mut prev = f64::NEG_INFINITY;
        for k in 0..=100 {
            let q = t.quantile(k as f64 / 100.0);
            assert!(q >= prev);
            prev = q;
        }
        assert!((t.quantile(0.0) - (-0.5)).abs() < 1e-12);
        assert!((t.quantile(1.0) - 1.5).abs() < 1e-9);
    }

    #[test]
    fn kl_of_identical_is_zero_and_non_nested_is_infinite() {
        let p = TruncatedNormal::new(0.3, 0.8, -1.0, 1.0).unwrap();
        assert!(p.kl_divergence(&p).abs() < 1e-12);
        let q = TruncatedNormal::new(0.0, 1.0, -0.5, 2.0).unwrap();
        assert_eq!(p.kl_divergence(&q), f64::INFINITY);
    }
}
