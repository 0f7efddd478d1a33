//! Error channels acting on heralded states and the differential field model.
//!
//! A slow differential field `δB(t)` between the two nodes rotates each Bell
//! state's relative phase by `φ = δB·γ·T`, where `γ` depends on which pair of
//! levels the atoms occupy. Fast field noise is modelled as a Gaussian phase
//! kick per trial.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;
#[allow(unused_imports)] // shadowed by inherent methods whenever std is linked
use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::interference::{BellLabel, Detection};
use crate::statevec::{BasisLabel, HybridState, Level, Port};
use crate::{Error, Result};

fn pair_key(d: u32, pair: (u32, u32)) -> (u32, u32, u32) {
    (d, pair.0.min(pair.1), pair.0.max(pair.1))
}

/// Zeeman phase sensitivity `γ` (rad/mG) per dimension and unordered level pair.
#[derive(Clone, Debug, PartialEq)]
pub struct SensitivityTable {
    entries: BTreeMap<(u32, u32, u32), f64>,
}

const STANDARD_SENSITIVITIES: [(u32, u32, u32, f64); 10] = [
    (4, 0, 1, 0.31),
    (4, 0, 2, -1.24),
    (4, 0, 3, 1.71),
    (4, 1, 2, 1.64),
    (4, 1, 3, -0.50),
    (4, 2, 3, -3.22),
    (3, 0, 1, 0.61),
    (3, 0, 2, -0.92),
    (3, 1, 2, 1.65),
    (2, 0, 1, 0.49),
];

impl SensitivityTable {
    /// Measured sensitivities for d = 2, 3, 4.
    pub fn standard() -> Self {
        Self::from_entries(STANDARD_SENSITIVITIES.iter().map(|&(d, a, b, g)| (d, (a, b), g)))
    }

    pub fn from_entries(entries: impl IntoIterator<Item = (u32, (u32, u32), f64)>) -> Self {
        SensitivityTable { entries: entries.into_iter().map(|(d, p, g)| (pair_key(d, p), g)).collect() }
    }

    pub fn gamma(&self, d: u32, pair: (u32, u32)) -> Result<f64> {
        self.entries
            .get(&pair_key(d, pair))
            .copied()
            .ok_or(Error::MissingSensitivity(pair.0 as u8, pair.1 as u8, d))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `(d, (lo, hi), γ)` in key order.
    pub fn iter(&self) -> impl Iterator<Item = (u32, (u32, u32), f64)> + '_ {
        self.entries.iter().map(|(&(d, a, b), &g)| (d, (a, b), g))
    }
}

impl Default for SensitivityTable {
    fn default() -> Self {
        Self::standard()
    }
}

/// Per-state decoherence error `e` for d = 2, 3, 4, keyed like [`SensitivityTable`].
const STANDARD_DECOHERENCE: [(u32, u32, u32, f64); 10] = [
    (4, 0, 1, 0.001),
    (4, 0, 2, 0.009),
    (4, 1, 2, 0.016),
    (4, 0, 3, 0.017),
    (4, 1, 3, 0.002),
    (4, 2, 3, 0.059),
    (3, 0, 1, 0.002),
    (3, 0, 2, 0.005),
    (3, 1, 2, 0.016),
    (2, 0, 1, 0.001),
];

/// Decoherence error of a state; 0 for pairs without an entry.
pub fn decoherence_error(d: u32, pair: (u32, u32)) -> f64 {
    let key = pair_key(d, pair);
    STANDARD_DECOHERENCE.iter().find(|&&(dd, a, b, _)| (dd, a, b) == key).map_or(0.0, |e| e.3)
}

/// Phase-kick width whose ensemble contrast factor `e^{−σ²/2}` equals `1 − 2e`.
pub fn dephasing_sigma(error: f64) -> f64 {
    if error <= 0.0 {
        return 0.0;
    }
    (-2.0 * (1.0 - 2.0 * error).max(f64::MIN_POSITIVE).ln()).sqrt()
}

/// Fast dephasing, background and readout errors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DephasingParams {
    /// Multiplier on the per-state decoherence errors (0 disables fast dephasing).
    pub decoherence_scale: f64,
    /// Mean false counts per detection window (one bin on one port).
    pub background_rate: f64,
    /// Probability that an atom's readout assigns its bright round to the wrong round.
    pub spam_error: f64,
}

impl Default for DephasingParams {
    fn default() -> Self {
        DephasingParams { decoherence_scale: 1.0, background_rate: DEFAULT_BACKGROUND_RATE, spam_error: 0.005 }
    }
}

impl DephasingParams {
    pub fn none() -> Self {
        DephasingParams { decoherence_scale: 0.0, background_rate: 0.0, spam_error: 0.0 }
    }

    pub fn error_for(&self, d: u32, pair: (u32, u32)) -> f64 {
        (decoherence_error(d, pair) * self.decoherence_scale).clamp(0.0, 0.5)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.decoherence_scale >= 0.0 && self.decoherence_scale.is_finite()) {
            return Err(Error::param("decoherence_scale", "must be finite and ≥ 0"));
        }
        if !(self.background_rate >= 0.0 && self.background_rate.is_finite()) {
            return Err(Error::param("background_rate", "must be finite and ≥ 0"));
        }
        if !(0.0..=1.0).contains(&self.spam_error) {
            return Err(Error::param("spam_error", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

pub const DEFAULT_BACKGROUND_RATE: f64 = 1e-6;
pub const DEFAULT_DRIFT_AMPLITUDE_MG: f64 = 1.0;
pub const DEFAULT_DRIFT_PERIOD_S: f64 = 7200.0;

/// Description of the slow differential field `δB(t)` in mG.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldModel {
    Constant {
        value_mg: f64,
    },
    Sinusoid {
        amplitude_mg: f64,
        period_s: f64,
        #[serde(default)]
        phase_rad: f64,
    },
    /// Gaussian random walk from 0 with step variance `amplitude²·Δt/timescale`,
    /// sampled every `timescale/100` up to `horizon_s` and held afterwards.
    RandomWalk {
        amplitude_mg: f64,
        timescale_s: f64,
        seed: u64,
        #[serde(default = "default_horizon")]
        horizon_s: f64,
    },
    /// Linear interpolation through `(time_s, field_mG)` points, held beyond the ends.
    Piecewise {
        points: Vec<(f64, f64)>,
    },
}

fn default_horizon() -> f64 {
    86_400.0
}

impl Default for FieldModel {
    fn default() -> Self {
        FieldModel::Sinusoid {
            amplitude_mg: DEFAULT_DRIFT_AMPLITUDE_MG,
            period_s: DEFAULT_DRIFT_PERIOD_S,
            phase_rad: 0.0,
        }
    }
}

impl FieldModel {
    pub fn zero() -> Self {
        FieldModel::Constant { value_mg: 0.0 }
    }

    /// Precomputes the profile. Random walks are drawn here, once.
    pub fn build(&self) -> Result<Field> {
        let finite = |name, v: f64| if v.is_finite() { Ok(()) } else { Err(Error::param(name, "must be finite")) };
        let positive =
            |name, v: f64| if v > 0.0 && v.is_finite() { Ok(()) } else { Err(Error::param(name, "must be > 0")) };
        match *self {
            FieldModel::Constant { value_mg } => {
                finite("value_mg", value_mg)?;
                Ok(Field::Constant(value_mg))
            }
            FieldModel::Sinusoid { amplitude_mg, period_s, phase_rad } => {
                finite("amplitude_mg", amplitude_mg)?;
                finite("phase_rad", phase_rad)?;
                positive("period_s", period_s)?;
                Ok(Field::Sinusoid { amplitude: amplitude_mg, omega: 2.0 * PI / period_s, phase: phase_rad })
            }
            FieldModel::RandomWalk { amplitude_mg, timescale_s, seed, horizon_s } => {
                finite("amplitude_mg", amplitude_mg)?;
                positive("timescale_s", timescale_s)?;
                positive("horizon_s", horizon_s)?;
                let dt = timescale_s / 100.0;
                let steps = (horizon_s / dt).ceil() as usize;
                if steps > 50_000_000 {
                    return Err(Error::param("horizon_s", "more than 5·10⁷ grid points"));
                }
                let scale = amplitude_mg * (dt / timescale_s).sqrt();
                let mut rng = crate::rng_stream(seed, 0);
                let mut points = Vec::with_capacity(steps + 1);
                let mut v = 0.0;
                points.push((0.0, v));
                for k in 1..=steps {
                    let z: f64 = rng.sample(StandardNormal);
                    v += scale * z;
                    points.push((k as f64 * dt, v));
                }
                Piecewise::new(points).map(Field::Piecewise)
            }
            FieldModel::Piecewise { ref points } => Piecewise::new(points.clone()).map(Field::Piecewise),
        }
    }
}

/// Evaluable field profile.
#[derive(Clone, Debug, PartialEq)]
pub enum Field {
    Constant(f64),
    Sinusoid { amplitude: f64, omega: f64, phase: f64 },
    Piecewise(Piecewise),
}

impl Field {
    pub fn value(&self, t: f64) -> f64 {
        match self {
            Field::Constant(v) => *v,
            Field::Sinusoid { amplitude, omega, phase } => amplitude * (omega * t + phase).sin(),
            Field::Piecewise(p) => p.value(t),
        }
    }

    /// Exact average of `δB` over `[t0, t1]`.
    pub fn mean(&self, t0: f64, t1: f64) -> f64 {
        if t1 <= t0 {
            return self.value(t0);
        }
        match self {
            Field::Constant(v) => *v,
            Field::Sinusoid { amplitude, omega, phase } => {
                amplitude * ((omega * t0 + phase).cos() - (omega * t1 + phase).cos()) / (omega * (t1 - t0))
            }
            Field::Piecewise(p) => (p.integral(t1) - p.integral(t0)) / (t1 - t0),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Piecewise {
    points: Vec<(f64, f64)>,
    /// `∫` from the first knot to each knot.
    cumulative: Vec<f64>,
}

impl Piecewise {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::param("points", "at least one point required"));
        }
        if points.iter().any(|(t, v)| !t.is_finite() || !v.is_finite()) {
            return Err(Error::param("points", "values must be finite"));
        }
        if points.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::FieldOrder);
        }
        let mut cumulative = Vec::with_capacity(points.len());
        let mut acc = 0.0;
        cumulative.push(0.0);
        for w in points.windows(2) {
            acc += 0.5 * (w[0].1 + w[1].1) * (w[1].0 - w[0].0);
            cumulative.push(acc);
        }
        Ok(Piecewise { points, cumulative })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    /// Index `i` with `t_i ≤ t < t_{i+1}`, for `t` inside the span.
    fn segment(&self, t: f64) -> usize {
        self.points.partition_point(|&(ti, _)| ti <= t).saturating_sub(1).min(self.points.len() - 2)
    }

    pub fn value(&self, t: f64) -> f64 {
        let (first, last) = (self.points[0], self.points[self.points.len() - 1]);
        if t <= first.0 {
            return first.1;
        }
        if t >= last.0 {
            return last.1;
        }
        let i = self.segment(t);
        let (t0, v0) = self.points[i];
        let (t1, v1) = self.points[i + 1];
        v0 + (v1 - v0) * (t - t0) / (t1 - t0)
    }

    fn integral(&self, t: f64) -> f64 {
        let n = self.points.len();
        let (first, last) = (self.points[0], self.points[n - 1]);
        if t <= first.0 {
            return (t - first.0) * first.1;
        }
        if t >= last.0 {
            return self.cumulative[n - 1] + (t - last.0) * last.1;
        }
        let i = self.segment(t);
        let (t0, v0) = self.points[i];
        self.cumulative[i] + 0.5 * (v0 + self.value(t)) * (t - t0)
    }
}

/// Everything that acts on a heralded state besides the pulse errors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub field: FieldModel,
    /// `T` in `φ = δB·γ·T`, also the window (s) over which `δB` is averaged.
    pub exposure_s: f64,
    pub dephasing: DephasingParams,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig { field: FieldModel::default(), exposure_s: 1.0, dephasing: DephasingParams::default() }
    }
}

impl NoiseConfig {
    pub fn none() -> Self {
        NoiseConfig { field: FieldModel::zero(), exposure_s: 1.0, dephasing: DephasingParams::none() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.exposure_s >= 0.0 && self.exposure_s.is_finite()) {
            return Err(Error::param("exposure_s", "must be finite and ≥ 0"));
        }
        self.dephasing.validate()?;
        self.field.build().map(|_| ())
    }
}

/// `φ = δB·γ·T` in radians.
pub fn phase_accumulation(delta_b_mg: f64, gamma: f64, exposure: f64) -> f64 {
    delta_b_mg * gamma * exposure
}

/// Multiplies the `|m'⟩_A|n'⟩_B` branch by `e^{−iφ}`.
pub fn apply_relative_phase(state: &HybridState, label: &BellLabel, phi: f64) -> HybridState {
    if phi == 0.0 {
        return state.clone();
    }
    let (np, mp) = label.atomic_pair;
    let a = Level::Qudit(mp as u8);
    let b = Level::Qudit(np as u8);
    let kick = Complex64::from_polar(1.0, -phi);
    state.map_terms(|l, amp, out| {
        let hit = l.atom(crate::statevec::Node::A) == Some(a) && l.atom(crate::statevec::Node::B) == Some(b);
        out.push(l.clone(), if hit { amp * kick } else { amp });
    })
}

/// Phase from the field averaged over `[t, t + T]`. Returns the new state and `φ`.
pub fn apply_entangled_phase(
    state: &HybridState,
    label: &BellLabel,
    field: &Field,
    sensitivities: &SensitivityTable,
    t_herald: f64,
    exposure: f64,
) -> Result<(HybridState, f64)> {
    let gamma = sensitivities.gamma(state.d(), label.atomic_pair)?;
    let phi = phase_accumulation(field.mean(t_herald, t_herald + exposure), gamma, exposure);
    Ok((apply_relative_phase(state, label, phi), phi))
}

/// Gaussian phase kick sized by the state's decoherence error. One normal draw per call.
pub fn apply_fast_dephasing<R: Rng + ?Sized>(
    state: &HybridState,
    label: &BellLabel,
    params: &DephasingParams,
    rng: &mut R,
) -> HybridState {
    let z: f64 = rng.sample(StandardNormal);
    let sigma = dephasing_sigma(params.error_for(state.d(), label.atomic_pair));
    apply_relative_phase(state, label, sigma * z)
}

/// Poisson false clicks over `d` bins × two output ports.
pub fn inject_background<R: Rng + ?Sized>(d: u32, rate: f64, rng: &mut R) -> Vec<Detection> {
    let mean = rate * 2.0 * d as f64;
    if mean <= 0.0 {
        return Vec::new();
    }
    let count = Poisson::new(mean).map(|p| p.sample(rng) as u64).unwrap_or(0);
    (0..count).map(|_| random_window(d, rng)).collect()
}

pub(crate) fn random_window<R: Rng + ?Sized>(d: u32, rng: &mut R) -> Detection {
    let cell = rng.random_range(0..2 * d);
    Detection { time_bin: cell / 2, port: if cell % 2 == 0 { Port::OutC } else { Port::OutD } }
}

/// Atom-only basis label helper for the two-atom states produced after heralding.
pub fn atoms(a: u32, b: u32) -> BasisLabel {
    BasisLabel::atoms(Level::Qudit(a as u8), Level::Qudit(b as u8))
}
