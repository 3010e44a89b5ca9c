//! Numerically careful helpers: log-space arithmetic, compensated sums,
//! and standard-normal tail functions that stay accurate far into the tails.

use libm::erfc;
use statrs::function::erf::erfc_inv;
use std::f64::consts::SQRT_2;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Beyond this standardized point `erfc` is replaced by the asymptotic
/// expansion of the Gaussian tail.
const TAIL_SWITCH: f64 = 20.0;

/// `ln Σ exp(x_i)` without overflow. `-inf` entries are ignored; an empty
/// slice (or all `-inf`) gives `-inf`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let s = neumaier_sum(xs.iter().map(|&x| (x - max).exp()));
    max + s.ln()
}

/// Neumaier-compensated summation. Deterministic for a fixed input order.
pub fn neumaier_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0_f64;
    let mut comp = 0.0_f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    neumaier_sum(values.iter().copied()) / values.len() as f64
}

/// Unbiased (1/(n-1)) sample variance. NaN for fewer than two values.
pub fn sample_variance(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return f64::NAN;
    }
    let m = mean(values);
    neumaier_sum(values.iter().map(|&v| (v - m) * (v - m))) / (n - 1) as f64
}

/// Sample mean and its standard error. The error is 0 for a single value.
pub fn mean_and_std_error(values: &[f64]) -> (f64, f64) {
    let m = mean(values);
    if values.len() < 2 {
        return (m, 0.0);
    }
    (m, (sample_variance(values) / values.len() as f64).sqrt())
}

/// A nonnegative quantity carried as its natural logarithm so that huge
/// powers such as `ρ^{4T}` never silently overflow.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LogValue {
    pub ln: f64,
}

impl LogValue {
    pub const ZERO: LogValue = LogValue {
        ln: f64::NEG_INFINITY,
    };

    pub fn from_ln(ln: f64) -> Self {
        LogValue { ln }
    }

    pub fn from_value(v: f64) -> Self {
        debug_assert!(v >= 0.0);
        LogValue { ln: v.ln() }
    }

    /// Linear value; `+inf` when it does not fit in an `f64`.
    pub fn value(self) -> f64 {
        self.ln.exp()
    }

    pub fn overflows(self) -> bool {
        self.ln.is_finite() && self.ln.exp().is_infinite() || self.ln == f64::INFINITY
    }

    pub fn times(self, other: LogValue) -> LogValue {
        if self.ln == f64::NEG_INFINITY || other.ln == f64::NEG_INFINITY {
            return LogValue::ZERO;
        }
        LogValue {
            ln: self.ln + other.ln,
        }
    }

    pub fn powi(self, k: i32) -> LogValue {
        if k == 0 {
            return LogValue { ln: 0.0 };
        }
        if self.ln == f64::NEG_INFINITY {
            return if k > 0 {
                LogValue::ZERO
            } else {
                LogValue { ln: f64::INFINITY }
            };
        }
        LogValue {
            ln: self.ln * k as f64,
        }
    }

    pub fn sqrt(self) -> LogValue {
        LogValue { ln: 0.5 * self.ln }
    }
}

pub fn std_normal_pdf(z: f64) -> f64 {
    if z.is_infinite() {
        return 0.0;
    }
    (-0.5 * z * z - LN_SQRT_2PI).exp()
}

pub fn ln_std_normal_pdf(z: f64) -> f64 {
    -0.5 * z * z - LN_SQRT_2PI
}

/// Upper tail `Q(z) = 1 - Φ(z)`.
pub fn std_normal_sf(z: f64) -> f64 {
    0.5 * erfc(z / SQRT_2)
}

pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / SQRT_2)
}

/// `ln Q(z)`, accurate for arbitrarily large `z`.
pub fn ln_std_normal_sf(z: f64) -> f64 {
    if z == f64::INFINITY {
        return f64::NEG_INFINITY;
    }
    if z <= TAIL_SWITCH {
        return std_normal_sf(z).ln();
    }
    // Q(z) = φ(z)/z · (1 - 1/z² + 3/z⁴ - 15/z⁶ + ...)
    let inv2 = 1.0 / (z * z);
    let mut term = 1.0;
    let mut series = 1.0;
    for k in 1..12 {
        term *= -((2 * k - 1) as f64) * inv2;
        series += term;
        if term.abs() < 1e-17 {
            break;
        }
    }
    ln_std_normal_pdf(z) - z.ln() + series.ln()
}

pub fn ln_std_normal_cdf(z: f64) -> f64 {
    ln_std_normal_sf(-z)
}

/// `ln(Φ(b) - Φ(a))` for standardized `a < b` (either may be infinite),
/// without cancellation in either tail.
pub fn ln_interval_mass(a: f64, b: f64) -> f64 {
    if !(a < b) {
        return f64::NEG_INFINITY;
    }
    if a >= 0.0 {
        let la = ln_std_normal_sf(a);
        let lb = ln_std_normal_sf(b);
        la + (-(lb - la).exp()).ln_1p()
    } else if b <= 0.0 {
        ln_interval_mass(-b, -a)
    } else {
        (-(std_normal_sf(b) + std_normal_sf(-a))).ln_1p()
    }
}

/// Standard normal quantile `Φ⁻¹(p)`.
pub fn std_normal_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    if p <= 0.5 {
        lower_quantile(p)
    } else {
        -lower_quantile(1.0 - p)
    }
}

/// `Φ⁻¹(p)` for `p ∈ (0, 0.5]`: a rational starting point polished by one
/// Halley step against the accurate CDF.
fn lower_quantile(p: f64) -> f64 {
    let z = -SQRT_2 * erfc_inv(2.0 * p);
    let dens = std_normal_pdf(z);
    if !z.is_finite() || dens == 0.0 {
        return z;
    }
    let u = (std_normal_cdf(z) - p) / dens;
    z - u / (1.0 + 0.5 * z * u)
}

/// Inverse of the upper tail, `Q⁻¹(q)`, given `ln q`. Falls back to Newton
/// steps on the asymptotic tail when `q` underflows.
pub fn std_normal_isf_ln(ln_q: f64) -> f64 {
    if ln_q >= 0.0 {
        return f64::NEG_INFINITY;
    }
    if ln_q > -700.0 {
        let q = ln_q.exp();
        return if q <= 0.5 {
            -lower_quantile(q)
        } else {
            lower_quantile(1.0 - q)
        };
    }
    // ln Q(z) ≈ -z²/2 - ln z - ln√(2π); solve by Newton from the leading term.
    let mut z = (-2.0 * ln_q).sqrt();
    for _ in 0..50 {
        let f = ln_std_normal_sf(z) - ln_q;
        // d/dz ln Q(z) = -φ(z)/Q(z) ≈ -(z + 1/z)
        let df = -(z + 1.0 / z);
        let step = f / df;
        z -= step;
        if step.abs() < 1e-14 * z.abs() {
            break;
        }
    }
    z
}
