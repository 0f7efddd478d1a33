//! Efficiency budgets and entanglement rate versus dimension.

use alloc::string::String;
use alloc::vec::Vec;

#[allow(unused_imports)] // shadowed by inherent methods whenever std is linked
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::experiment::Timing;
use crate::interference::success_fraction;
use crate::protocol::check_dimension;
use crate::stats::Measured;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetFactor {
    pub name: String,
    pub value: f64,
    #[serde(default)]
    pub sigma: f64,
}

/// Photon collection and detection chain of one node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EfficiencyBudget {
    pub factors: Vec<BudgetFactor>,
}

const FACTOR_NAMES: [&str; 7] = [
    "lens_solid_angle",
    "fiber_coupling",
    "trap_clipping",
    "optical_losses",
    "detector_efficiency",
    "excitation_probability",
    "branching_ratio",
];

impl EfficiencyBudget {
    fn from_table(rows: [(f64, f64); 7]) -> Self {
        EfficiencyBudget {
            factors: FACTOR_NAMES
                .iter()
                .zip(rows)
                .map(|(n, (value, sigma))| BudgetFactor { name: String::from(*n), value, sigma })
                .collect(),
        }
    }

    pub fn system_a() -> Self {
        Self::from_table([
            (0.1, 0.0),
            (0.30, 0.04),
            (0.78, 0.02),
            (0.90, 0.02),
            (0.65, 0.03),
            (0.70, 0.05),
            (0.486, 0.0),
        ])
    }

    pub fn system_b() -> Self {
        Self::from_table([
            (0.2, 0.0),
            (0.20, 0.03),
            (0.97, 0.01),
            (0.80, 0.02),
            (0.65, 0.03),
            (0.70, 0.05),
            (0.486, 0.0),
        ])
    }

    pub fn validate(&self) -> Result<()> {
        if self.factors.is_empty() {
            return Err(Error::param("factors", "budget has no factors"));
        }
        for f in &self.factors {
            if !(f.value > 0.0 && f.value <= 1.0) {
                return Err(Error::param("factors", alloc::format!("{} = {} outside (0, 1]", f.name, f.value)));
            }
            if !(f.sigma >= 0.0 && f.sigma.is_finite()) {
                return Err(Error::param("factors", alloc::format!("{} has invalid sigma {}", f.name, f.sigma)));
            }
        }
        Ok(())
    }
}

/// Product of the factors; relative errors add in quadrature.
pub fn budget_total(budget: &EfficiencyBudget) -> Result<Measured> {
    budget.validate()?;
    let p: f64 = budget.factors.iter().map(|f| f.value).product();
    let rel2: f64 = budget.factors.iter().map(|f| (f.sigma / f.value).powi(2)).sum();
    Ok(Measured::new(p, p * rel2.sqrt()))
}

/// `R = 𝓕·p_A·p_B / period(d)` per second.
pub fn entanglement_rate(d: u32, p_a: f64, p_b: f64, timing: &Timing) -> Result<f64> {
    check_dimension(d)?;
    timing.validate()?;
    let period = timing.period_us(d) * 1e-6;
    if period <= 0.0 {
        return Err(Error::param("timing", "attempt period must be > 0"));
    }
    Ok(success_fraction(d) * p_a * p_b / period)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub d: u32,
    pub success_fraction: f64,
    pub p_ent: f64,
    pub period_us: f64,
    pub rate_per_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateTable {
    pub rows: Vec<RateRow>,
    pub optimal_d: u32,
}

/// Evaluates every `d` in the range. Exact ties go to the smaller `d`.
///
/// `timing` applies to every `d`, so any period override is ignored; use
/// [`rate_table`] with per-`d` timings to keep measured periods.
pub fn optimal_dimension(
    p_a: f64,
    p_b: f64,
    timing: &Timing,
    d_range: impl IntoIterator<Item = u32>,
) -> Result<RateTable> {
    let linear = Timing { period_override_us: None, ..*timing };
    rate_table(p_a, p_b, d_range, |_| linear)
}

/// Rate table with a timing model chosen per dimension.
pub fn rate_table(
    p_a: f64,
    p_b: f64,
    d_range: impl IntoIterator<Item = u32>,
    timing: impl Fn(u32) -> Timing,
) -> Result<RateTable> {
    rate_table_with_fractions(p_a, p_b, d_range, timing, success_fraction)
}

/// [`rate_table`] with the success fraction supplied per dimension, e.g. measured values.
pub fn rate_table_with_fractions(
    p_a: f64,
    p_b: f64,
    d_range: impl IntoIterator<Item = u32>,
    timing: impl Fn(u32) -> Timing,
    fraction: impl Fn(u32) -> f64,
) -> Result<RateTable> {
    let mut rows = Vec::new();
    for d in d_range {
        let t = timing(d);
        let f = fraction(d);
        if !(0.0..=1.0).contains(&f) {
            return Err(Error::param("success_fraction", "must lie in [0, 1]"));
        }
        entanglement_rate(d, p_a, p_b, &t)?;
        let p_ent = f * p_a * p_b;
        let period_us = t.period_us(d);
        rows.push(RateRow { d, success_fraction: f, p_ent, period_us, rate_per_s: p_ent / (period_us * 1e-6) });
    }
    let mut best: Option<&RateRow> = None;
    for r in &rows {
        if best.is_none_or(|b| r.rate_per_s > b.rate_per_s || (r.rate_per_s == b.rate_per_s && r.d < b.d)) {
            best = Some(r);
        }
    }
    let optimal_d = best.ok_or_else(|| Error::param("d_range", "must be nonempty"))?.d;
    Ok(RateTable { rows, optimal_d })
}

/// Least-squares `τ₀ + τ_bin·(d−1)` through measured `(d, period µs)` points.
pub fn fit_timing(points: &[(u32, f64)]) -> Result<Timing> {
    if points.len() < 2 {
        return Err(Error::param("points", "need at least two periods"));
    }
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|&(d, _)| d as f64 - 1.0).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::param("points", "need two distinct dimensions"));
    }
    let sxy: f64 = xs.iter().zip(points).map(|(x, p)| (x - mx) * (p.1 - my)).sum();
    let tau_bin_us = sxy / sxx;
    Ok(Timing { tau0_us: my - tau_bin_us * mx, tau_bin_us, period_override_us: None })
}
