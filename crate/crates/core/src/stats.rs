//! Small statistics helpers: binomial intervals and the regularized incomplete beta.

#[allow(unused_imports)] // shadowed by inherent methods whenever std is linked
use num_traits::Float;

/// Proportion with its normal-approximation standard error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Proportion {
    pub k: u64,
    pub n: u64,
}

impl Proportion {
    pub fn new(k: u64, n: u64) -> Self {
        Proportion { k, n }
    }

    pub fn estimate(&self) -> f64 {
        if self.n == 0 {
            return f64::NAN;
        }
        self.k as f64 / self.n as f64
    }

    /// `√(p(1−p)/n)`.
    pub fn sigma(&self) -> f64 {
        binomial_sigma(self.estimate(), self.n)
    }

    /// Exact two-sided Clopper–Pearson interval at confidence `1 − alpha`.
    pub fn clopper_pearson(&self, alpha: f64) -> (f64, f64) {
        let (k, n) = (self.k as f64, self.n as f64);
        if self.n == 0 {
            return (0.0, 1.0);
        }
        let lo = if self.k == 0 { 0.0 } else { beta_quantile(alpha / 2.0, k, n - k + 1.0) };
        let hi = if self.k == self.n { 1.0 } else { beta_quantile(1.0 - alpha / 2.0, k + 1.0, n - k) };
        (lo, hi)
    }
}

/// Value with a 1σ uncertainty.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Measured {
    pub value: f64,
    pub sigma: f64,
}

impl Measured {
    pub fn new(value: f64, sigma: f64) -> Self {
        Measured { value, sigma }
    }

    pub fn exact(value: f64) -> Self {
        Measured { value, sigma: 0.0 }
    }

    pub fn relative(&self) -> f64 {
        self.sigma / self.value.abs()
    }
}

pub fn binomial_sigma(p: f64, n: u64) -> f64 {
    if n == 0 {
        return f64::NAN;
    }
    (p * (1.0 - p) / n as f64).max(0.0).sqrt()
}

/// `|x − expected| ≤ k·σ`.
pub fn within_sigmas(x: f64, expected: f64, sigma: f64, k: f64) -> bool {
    (x - expected).abs() <= k * sigma
}

/// Regularized incomplete beta `I_x(a, b)` by Lentz's continued fraction.
pub fn incomplete_beta(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = libm::lgamma(a + b) - libm::lgamma(a) - libm::lgamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_fraction(x, a, b) / a
    } else {
        1.0 - front * beta_fraction(1.0 - x, b, a) / b
    }
}

fn beta_fraction(x: f64, a: f64, b: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut c = 1.0;
    let mut d = 1.0 - (a + b) * x / (a + 1.0);
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..500 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let num = m * (b - m) * x / ((a + m2 - 1.0) * (a + m2));
        for num in [num, -(a + m) * (a + b + m) * x / ((a + m2) * (a + m2 + 1.0))] {
            d = 1.0 + num * d;
            if d.abs() < TINY {
                d = TINY;
            }
            c = 1.0 + num / c;
            if c.abs() < TINY {
                c = TINY;
            }
            d = 1.0 / d;
            h *= d * c;
        }
        if (d * c - 1.0).abs() < 1e-15 {
            break;
        }
    }
    h
}

/// `x` with `I_x(a, b) = q`, by bisection.
pub fn beta_quantile(q: f64, a: f64, b: f64) -> f64 {
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if incomplete_beta(mid, a, b) < q {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}
