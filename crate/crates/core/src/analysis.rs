//! Offline estimation from event logs.
//!
//! Populations and parity contrasts are estimated per herald class and
//! combined into `F = (P + C)/2`. Slow differential-field drift is recovered
//! from per-window state phases and removed from the analysis phases.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::{PI, TAU};

#[allow(unused_imports)] // shadowed by inherent methods whenever std is linked
use num_traits::Float;
use num_traits::Euclid;
use serde::{Deserialize, Serialize};

use crate::experiment::{EventLog, EventRecord};
use crate::interference::{BellLabel, Sign};
use crate::noise::SensitivityTable;
use crate::protocol::wrap_phase;
use crate::stats::{binomial_sigma, Measured};
use crate::{Error, Result};

/// Default field-fit window: ten minutes of wall time.
pub const DEFAULT_WINDOW_S: f64 = 600.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopulationEstimate {
    pub successes: u64,
    pub in_target: u64,
    /// NaN when there are no successes.
    pub p: f64,
    pub sigma: f64,
}

impl PopulationEstimate {
    pub fn is_empty(&self) -> bool {
        self.successes == 0
    }
}

/// Fraction of population-measurement successes landing in `|n'm'⟩` or `|m'n'⟩`.
pub fn estimate_populations<'a>(
    records: impl IntoIterator<Item = &'a EventRecord>,
    label: &BellLabel,
) -> PopulationEstimate {
    let (mut successes, mut in_target) = (0, 0);
    for r in records {
        if r.bell().as_ref() != Some(label) {
            continue;
        }
        if let Some(hit) = r.in_target_population() {
            successes += 1;
            in_target += u64::from(hit);
        }
    }
    let p = if successes > 0 { in_target as f64 / successes as f64 } else { f64::NAN };
    PopulationEstimate { successes, in_target, p, sigma: binomial_sigma(p, successes) }
}

/// One parity measurement.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParityTrial {
    pub delta_phi: f64,
    pub parity: i8,
    pub t: f64,
}

pub fn parity_trials<'a>(records: impl IntoIterator<Item = &'a EventRecord>, label: &BellLabel) -> Vec<ParityTrial> {
    records
        .into_iter()
        .filter(|r| r.bell().as_ref() == Some(label))
        .filter_map(|r| {
            let phases = r.analysis?;
            Some(ParityTrial { delta_phi: phases.delta(), parity: r.parity()?, t: r.wall_time_s })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParityPoint {
    pub delta_phi: f64,
    /// Shots with parity `+1`.
    pub even: u64,
    /// Shots with parity `−1`.
    pub odd: u64,
    pub timestamps: Vec<f64>,
}

impl ParityPoint {
    pub fn shots(&self) -> u64 {
        self.even + self.odd
    }

    pub fn mean(&self) -> f64 {
        (self.even as f64 - self.odd as f64) / self.shots() as f64
    }

    /// Binomial standard error of the mean parity.
    pub fn sigma(&self) -> f64 {
        let p = self.even as f64 / self.shots() as f64;
        2.0 * binomial_sigma(p, self.shots())
    }
}

/// Parity counts per analysis phase, in ascending phase order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParityScanData {
    pub label: Option<BellLabel>,
    pub points: Vec<ParityPoint>,
}

impl ParityScanData {
    /// Groups trials with bit-identical phases into one point.
    pub fn from_trials(label: Option<BellLabel>, trials: impl IntoIterator<Item = ParityTrial>) -> Self {
        let mut by_phase: BTreeMap<u64, ParityPoint> = BTreeMap::new();
        for t in trials {
            let key = ordered_bits(t.delta_phi);
            let pt = by_phase.entry(key).or_insert_with(|| ParityPoint {
                delta_phi: t.delta_phi,
                even: 0,
                odd: 0,
                timestamps: Vec::new(),
            });
            if t.parity > 0 {
                pt.even += 1;
            } else {
                pt.odd += 1;
            }
            pt.timestamps.push(t.t);
        }
        ParityScanData { label, points: by_phase.into_values().collect() }
    }

    pub fn from_log(log: &EventLog, label: &BellLabel) -> Self {
        Self::from_trials(Some(*label), parity_trials(&log.records, label))
    }

    pub fn shots(&self) -> u64 {
        self.points.iter().map(ParityPoint::shots).sum()
    }
}

/// Maps `f64` to `u64` preserving order.
fn ordered_bits(x: f64) -> u64 {
    let b = x.to_bits();
    if b >> 63 == 1 {
        !b
    } else {
        b | 1 << 63
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParityFit {
    /// `C ≥ 0`.
    pub contrast: f64,
    pub sigma_contrast: f64,
    /// In `(−π, π]`.
    pub phi0: f64,
    pub sigma_phi0: f64,
}

impl ParityFit {
    pub fn model(&self, delta_phi: f64) -> f64 {
        self.contrast * (delta_phi - self.phi0).cos()
    }
}

/// Largest arc of the circle covered by the phases, `2π − max gap`.
pub fn phase_span(phases: &[f64]) -> f64 {
    let mut wrapped: Vec<f64> = phases.iter().map(|p| Euclid::rem_euclid(p, &TAU)).collect();
    if wrapped.len() < 2 {
        return 0.0;
    }
    wrapped.sort_by(f64::total_cmp);
    let mut gap = wrapped[0] + TAU - wrapped[wrapped.len() - 1];
    for w in wrapped.windows(2) {
        gap = gap.max(w[1] - w[0]);
    }
    TAU - gap
}

/// Weighted least-squares fit of `Π(Δφ) = C·cos(Δφ − φ₀)`.
///
/// Written as `a·cos Δφ + b·sin Δφ` the model is linear, so each pass is a
/// 2×2 solve. Weights are `n/(1 − Π̂²)` from the current fit, iterated to
/// convergence; the variance is floored at `1/(n+1)` so saturated points keep
/// finite weight.
pub fn fit_parity(scan: &ParityScanData) -> Result<ParityFit> {
    let pts: Vec<&ParityPoint> = scan.points.iter().filter(|p| p.shots() > 0).collect();
    let phases: Vec<f64> = pts.iter().map(|p| p.delta_phi).collect();
    let mut distinct: Vec<f64> = phases.iter().map(|p| Euclid::rem_euclid(p, &TAU)).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    if distinct.len() < 4 {
        return Err(Error::DegenerateScan(format!("{} distinct phases, need 4", distinct.len())));
    }
    let span = phase_span(&phases);
    if span < PI - 1e-9 {
        return Err(Error::DegenerateScan(format!("phases span {span:.3} rad, need π")));
    }

    let mut model: Option<(f64, f64)> = None;
    let mut cov = [[0.0; 2]; 2];
    let mut coef = (0.0, 0.0);
    for _ in 0..50 {
        let (mut scc, mut scs, mut sss, mut syc, mut sys) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for p in &pts {
            let (s, c) = p.delta_phi.sin_cos();
            let n = p.shots() as f64;
            let w = match model {
                None => n,
                Some((a, b)) => {
                    let pred = (a * c + b * s).clamp(-1.0, 1.0);
                    n / (1.0 - pred * pred).max(1.0 / (n + 1.0))
                }
            };
            let y = p.mean();
            scc += w * c * c;
            scs += w * c * s;
            sss += w * s * s;
            syc += w * y * c;
            sys += w * y * s;
        }
        let det = scc * sss - scs * scs;
        if det.abs() < 1e-300 {
            return Err(Error::DegenerateScan("singular normal equations".into()));
        }
        cov = [[sss / det, -scs / det], [-scs / det, scc / det]];
        let next = (cov[0][0] * syc + cov[0][1] * sys, cov[1][0] * syc + cov[1][1] * sys);
        let done = model.is_some_and(|(a, b)| (a - next.0).abs() < 1e-12 && (b - next.1).abs() < 1e-12);
        coef = next;
        model = Some(next);
        if done {
            break;
        }
    }
    let (a, b) = coef;
    let contrast = a.hypot(b);
    let phi0 = b.atan2(a);
    let (sigma_contrast, sigma_phi0) = if contrast > 0.0 {
        let g_c = [a / contrast, b / contrast];
        let g_p = [-b / (contrast * contrast), a / (contrast * contrast)];
        let quad = |g: [f64; 2]| {
            (g[0] * g[0] * cov[0][0] + 2.0 * g[0] * g[1] * cov[0][1] + g[1] * g[1] * cov[1][1]).max(0.0).sqrt()
        };
        (quad(g_c), quad(g_p))
    } else {
        ((cov[0][0] + cov[1][1]).sqrt() / 2.0f64.sqrt(), PI)
    };
    Ok(ParityFit { contrast, sigma_contrast, phi0, sigma_phi0 })
}

/// `F = (P + C)/2` with `σ_F = √(σ_P² + σ_C²)/2`.
pub fn fidelity(population: Measured, contrast: Measured) -> Measured {
    Measured::new(
        (population.value + contrast.value) / 2.0,
        population.sigma.hypot(contrast.sigma) / 2.0,
    )
}

/// Population, contrast and fidelity of one herald class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateEstimate {
    pub label: BellLabel,
    pub population: PopulationEstimate,
    pub parity_shots: u64,
    pub fit: Option<ParityFit>,
    /// Present when both the population and the contrast are.
    pub fidelity: Option<Measured>,
}

impl StateEstimate {
    pub fn is_empty(&self) -> bool {
        self.population.is_empty() && self.parity_shots == 0
    }
}

pub fn estimate_state(records: &[EventRecord], label: &BellLabel) -> StateEstimate {
    let scan = ParityScanData::from_trials(Some(*label), parity_trials(records, label));
    estimate_state_with_scan(records, label, &scan)
}

/// Like [`estimate_state`] but fits the given scan, e.g. a rephased one.
pub fn estimate_state_with_scan(records: &[EventRecord], label: &BellLabel, scan: &ParityScanData) -> StateEstimate {
    let population = estimate_populations(records, label);
    let fit = fit_parity(scan).ok();
    let fidelity = match (population.is_empty(), fit) {
        (false, Some(f)) => Some(fidelity(
            Measured::new(population.p, population.sigma),
            Measured::new(f.contrast, f.sigma_contrast),
        )),
        _ => None,
    };
    StateEstimate { label: *label, population, parity_shots: scan.shots(), fit, fidelity }
}

/// One estimate per herald class of dimension `d`, in label order.
pub fn state_table(records: &[EventRecord], d: u32) -> Vec<StateEstimate> {
    BellLabel::all(d).iter().map(|l| estimate_state(records, l)).collect()
}

/// Phase of one state over one time window, with the Minus offset removed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseSample {
    pub t: f64,
    pub label: BellLabel,
    pub phase: f64,
    pub sigma: f64,
}

/// Window index of time `t` for windows `[kW, (k+1)W)`.
fn window_index(t: f64, window_s: f64) -> i64 {
    (t / window_s).floor() as i64
}

/// Per-window, per-class parity phases. Windows whose fit is degenerate are skipped.
pub fn phase_series(records: &[EventRecord], d: u32, window_s: f64) -> Result<Vec<PhaseSample>> {
    check_window(window_s)?;
    let mut out = Vec::new();
    for label in BellLabel::all(d) {
        let mut by_window: BTreeMap<i64, Vec<ParityTrial>> = BTreeMap::new();
        for t in parity_trials(records, &label) {
            by_window.entry(window_index(t.t, window_s)).or_default().push(t);
        }
        for (_, trials) in by_window {
            let t = trials.iter().map(|x| x.t).sum::<f64>() / trials.len() as f64;
            let Ok(fit) = fit_parity(&ParityScanData::from_trials(Some(label), trials)) else { continue };
            if fit.contrast <= 0.0 || !fit.sigma_phi0.is_finite() {
                continue;
            }
            let offset = if label.sign == Sign::Minus { PI } else { 0.0 };
            out.push(PhaseSample { t, label, phase: wrap_phase(fit.phi0 - offset), sigma: fit.sigma_phi0.max(1e-6) });
        }
    }
    out.sort_by(|a, b| a.t.total_cmp(&b.t));
    Ok(out)
}

fn check_window(window_s: f64) -> Result<()> {
    if !(window_s.is_finite() && window_s > 0.0) {
        return Err(Error::param("window_s", "must be > 0"));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldWindow {
    pub start: f64,
    pub end: f64,
    /// Weighted mean sample time.
    pub centre: f64,
    /// `None` when every sensitivity in the window is zero.
    pub delta_b: Option<Measured>,
    /// Fewer than two distinct nonzero sensitivities contributed.
    pub underdetermined: bool,
    /// Unwrapped phase minus fitted phase, per sample.
    pub residuals: Vec<(BellLabel, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldFit {
    pub window_s: f64,
    pub exposure_s: f64,
    pub windows: Vec<FieldWindow>,
}

impl FieldFit {
    /// `δB̂` interpolated linearly between window centres, held flat beyond the
    /// outermost centres, `None` outside the fitted windows.
    pub fn delta_b_at(&self, t: f64) -> Option<f64> {
        let fitted: Vec<(f64, f64)> =
            self.windows.iter().filter_map(|w| w.delta_b.map(|b| (w.centre, b.value))).collect();
        let first = self.windows.first()?;
        let last = self.windows.last()?;
        if fitted.is_empty() || t < first.start || t >= last.end {
            return None;
        }
        let i = fitted.partition_point(|&(c, _)| c <= t);
        Some(match i {
            0 => fitted[0].1,
            i if i == fitted.len() => fitted[i - 1].1,
            i => {
                let (c0, b0) = fitted[i - 1];
                let (c1, b1) = fitted[i];
                b0 + (b1 - b0) * (t - c0) / (c1 - c0)
            }
        })
    }
}

/// Scalar least-squares `δB̂ = Σ w·g·φ / Σ w·g²` per window, with `g = γT` and
/// `w = 1/σ²`.
///
/// Phases are unwrapped against the best `δB` on a coarse grid first, so
/// sensitive states that wrapped past `±π` still contribute. Ties on the grid
/// resolve to the smallest `|δB|`.
pub fn fit_differential_field(
    samples: &[PhaseSample],
    d: u32,
    table: &SensitivityTable,
    window_s: f64,
    exposure_s: f64,
) -> Result<FieldFit> {
    check_window(window_s)?;
    if !(exposure_s.is_finite() && exposure_s > 0.0) {
        return Err(Error::param("exposure_s", "must be > 0"));
    }
    let mut groups: BTreeMap<i64, Vec<(PhaseSample, f64)>> = BTreeMap::new();
    for s in samples {
        let g = table.gamma(d, s.label.atomic_pair).unwrap_or(0.0) * exposure_s;
        groups.entry(window_index(s.t, window_s)).or_default().push((*s, g));
    }
    let windows = groups
        .into_iter()
        .map(|(k, group)| {
            let start = k as f64 * window_s;
            let weight = |s: &PhaseSample| 1.0 / (s.sigma * s.sigma);
            let wsum: f64 = group.iter().map(|(s, _)| weight(s)).sum();
            let centre = group.iter().map(|(s, _)| weight(s) * s.t).sum::<f64>() / wsum;
            let mut gammas: Vec<f64> = group.iter().map(|&(_, g)| g).filter(|g| *g != 0.0).collect();
            gammas.sort_by(f64::total_cmp);
            gammas.dedup();
            let underdetermined = gammas.len() < 2;
            let sgg: f64 = group.iter().map(|(s, g)| weight(s) * g * g).sum();
            if sgg <= 0.0 {
                return FieldWindow { start, end: start + window_s, centre, delta_b: None, underdetermined, residuals: Vec::new() };
            }
            let coarse = coarse_field(&group, &gammas);
            let unwrapped: Vec<f64> =
                group.iter().map(|(s, g)| g * coarse + wrap_phase(s.phase - g * coarse)).collect();
            let sgp: f64 = group.iter().zip(&unwrapped).map(|((s, g), p)| weight(s) * g * p).sum();
            let b = sgp / sgg;
            let residuals = group.iter().zip(&unwrapped).map(|((s, g), p)| (s.label, p - g * b)).collect();
            FieldWindow {
                start,
                end: start + window_s,
                centre,
                delta_b: Some(Measured::new(b, 1.0 / sgg.sqrt())),
                underdetermined,
                residuals,
            }
        })
        .collect();
    Ok(FieldFit { window_s, exposure_s, windows })
}

/// Grid minimum of `Σ w(1 − cos(φ − gB))` over one wrap of the least sensitive state.
fn coarse_field(group: &[(PhaseSample, f64)], gammas: &[f64]) -> f64 {
    let g_min = gammas.iter().fold(f64::INFINITY, |m, g| m.min(g.abs()));
    let g_max = gammas.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let range = TAU / g_min;
    let step = PI / (16.0 * g_max);
    let cost = |b: f64| {
        group.iter().map(|(s, g)| (1.0 - (s.phase - g * b).cos()) / (s.sigma * s.sigma)).sum::<f64>()
    };
    let mut best = (cost(0.0), 0.0);
    let steps = (range / step).ceil() as i64;
    for k in 1..=steps {
        for b in [k as f64 * step, -(k as f64) * step] {
            let c = cost(b);
            if c < best.0 - 1e-9 * best.0.abs().max(1.0) {
                best = (c, b);
            }
        }
    }
    best.1
}

/// Corrected scan of one class plus the number of trials outside the fit.
#[derive(Clone, Debug, PartialEq)]
pub struct Rephased {
    pub scan: ParityScanData,
    pub excluded: u64,
}

/// Shifts each trial's analysis phase by `−δB̂(t)·γ·T` and regroups the scan.
pub fn feed_forward_rephase(
    records: &[EventRecord],
    label: &BellLabel,
    d: u32,
    table: &SensitivityTable,
    fit: &FieldFit,
) -> Rephased {
    let gamma = table.gamma(d, label.atomic_pair).unwrap_or(0.0);
    let t_exp = fit.exposure_s;
    let mut excluded = 0;
    let trials: Vec<ParityTrial> = parity_trials(records, label)
        .into_iter()
        .filter_map(|tr| match fit.delta_b_at(tr.t + t_exp / 2.0) {
            Some(b) => Some(ParityTrial { delta_phi: tr.delta_phi - b * gamma * t_exp, ..tr }),
            None => {
                excluded += 1;
                None
            }
        })
        .collect();
    Rephased { scan: ParityScanData::from_trials(Some(*label), trials), excluded }
}

/// `𝓕̂ = P_ent/(p_A·p_B)` with relative errors added in quadrature.
pub fn extract_success_fraction(p_ent: Measured, p_a: Measured, p_b: Measured) -> Result<Measured> {
    for (name, m) in [("p_a", p_a), ("p_b", p_b)] {
        if m.value.is_nan() || m.value <= 0.0 {
            return Err(Error::param(name, "must be > 0"));
        }
    }
    if p_ent.value < 0.0 {
        return Err(Error::param("p_ent", "must be ≥ 0"));
    }
    let f = p_ent.value / (p_a.value * p_b.value);
    let rel2 = [p_ent, p_a, p_b]
        .iter()
        .filter(|m| m.value != 0.0)
        .map(|m| m.relative() * m.relative())
        .sum::<f64>();
    Ok(Measured::new(f, f * rel2.sqrt()))
}

/// Per-node atom-photon fidelity bound `√F_AB` from the product bound `F_AB ≤ F_A·F_B`.
pub fn fidelity_lower_bound_atom_photon(f_ab: f64) -> f64 {
    f_ab.max(0.0).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::{
        parity_grid, parity_scan, run_campaign, AnalysisPhases, Disposition, ExperimentConfig, Fluorescence, Stop,
    };
    use crate::interference::Herald;
    use crate::stats::Proportion;
    use proptest::prelude::*;
    use rand::Rng;

    fn synthetic_scan(c: f64, phi0: f64, grid: &[f64], shots: u64, rng: &mut impl Rng) -> ParityScanData {
        let trials = grid.iter().flat_map(|&x| {
            let p_even = (1.0 + c * (x - phi0).cos()) / 2.0;
            (0..shots)
                .map(|_| ParityTrial { delta_phi: x, parity: if rng.random::<f64>() < p_even { 1 } else { -1 }, t: 0.0 })
                .collect::<Vec<_>>()
        });
        ParityScanData::from_trials(None, trials.collect::<Vec<_>>())
    }

    fn exact_scan(c: f64, phi0: f64, grid: &[f64]) -> ParityScanData {
        // 10⁶ shots split exactly by the model.
        let n = 1_000_000u64;
        ParityScanData {
            label: None,
            points: grid
                .iter()
                .map(|&x| {
                    let even = ((1.0 + c * (x - phi0).cos()) / 2.0 * n as f64).round() as u64;
                    ParityPoint { delta_phi: x, even, odd: n - even, timestamps: Vec::new() }
                })
                .collect(),
        }
    }

    fn record(label: BellLabel, t: f64, analysis: Option<f64>, same_round: bool) -> EventRecord {
        use Fluorescence::*;
        let f = if same_round { [[Bright, Dark], [Bright, Dark]] } else { [[Bright, Dark], [Dark, Bright]] };
        EventRecord {
            attempt_index: 0,
            wall_time_s: t,
            clicks: Vec::new(),
            herald: Some(Herald::Bell(label)),
            background: false,
            analysis: analysis.map(|x| AnalysisPhases { phi_a: x, phi_b: 0.0 }),
            fluorescence: Some(f),
            disposition: Disposition::Success,
            field_phase: None,
            state_fidelity: None,
        }
    }

    #[test]
    fn noiseless_fit_is_exact() {
        let grid = parity_grid(8);
        let f = fit_parity(&exact_scan(1.0, 0.0, &grid)).unwrap();
        assert!((f.contrast - 1.0).abs() < 1e-9 && f.phi0.abs() < 1e-9);
        let f = fit_parity(&exact_scan(0.6, 1.1, &grid)).unwrap();
        assert!((f.contrast - 0.6).abs() < 1e-6 && (f.phi0 - 1.1).abs() < 1e-5);
    }

    #[test]
    fn minus_state_fit_shifts_by_pi() {
        let grid = parity_grid(8);
        let plus = fit_parity(&exact_scan(0.9, 0.3, &grid)).unwrap();
        let minus = fit_parity(&exact_scan(-0.9, 0.3, &grid)).unwrap();
        assert!((minus.contrast - plus.contrast).abs() < 1e-9);
        assert!((wrap_phase(minus.phi0 - plus.phi0).abs() - PI).abs() < 1e-9);
    }

    #[test]
    fn degenerate_scans_rejected() {
        let few = exact_scan(1.0, 0.0, &[0.0, 1.0, 2.0]);
        assert!(matches!(fit_parity(&few), Err(Error::DegenerateScan(_))));
        let narrow = exact_scan(1.0, 0.0, &[0.0, 0.5, 1.0, 1.5, 2.0]);
        assert!(matches!(fit_parity(&narrow), Err(Error::DegenerateScan(_))));
        let wrapping = exact_scan(1.0, 0.0, &[5.5, 6.0, 0.2, 0.7, 2.4]);
        assert!(fit_parity(&wrapping).is_ok());
    }

    #[test]
    fn fit_is_unbiased_with_calibrated_errors() {
        let mut rng = crate::rng_stream(11, 0);
        let grid = parity_grid(8);
        for c in [0.9, 0.5] {
            let (mut bias, mut inside, mut sig) = (0.0, 0, 0.0);
            let reps = 300;
            for _ in 0..reps {
                let f = fit_parity(&synthetic_scan(c, 0.4, &grid, 100, &mut rng)).unwrap();
                bias += f.contrast - c;
                sig += f.sigma_contrast;
                inside += usize::from((f.contrast - c).abs() < 2.0 * f.sigma_contrast);
            }
            let (bias, sig) = (bias / reps as f64, sig / reps as f64);
            assert!(bias.abs() < sig / 3.0, "c={c} bias={bias} σ={sig}");
            assert!(inside as f64 / reps as f64 > 0.9, "c={c}: {inside}");
        }
    }

    #[test]
    fn fidelity_identity() {
        let f = fidelity(Measured::new(0.988, 0.006), Measured::new(0.987, 0.025));
        assert!((f.value - 0.9875).abs() < 1e-12);
        assert!((f.sigma - (0.006f64.powi(2) + 0.025f64.powi(2)).sqrt() / 2.0).abs() < 1e-15);
        let f = fidelity(Measured::new(0.982, 0.0), Measured::new(0.741, 0.0));
        assert!((f.value - 0.8615).abs() < 1e-12);
    }

    #[test]
    fn populations_from_synthetic_mixture() {
        let label = BellLabel::new(0, 1, Sign::Plus, 2).unwrap();
        let mut rng = crate::rng_stream(3, 0);
        let n = 20_000;
        let records: Vec<_> = (0..n).map(|_| record(label, 0.0, None, rng.random::<f64>() >= 0.98)).collect();
        let est = estimate_populations(&records, &label);
        assert_eq!(est.successes, n);
        assert!((est.p - 0.98).abs() < 3.0 * est.sigma, "{}", est.p);
        let other = BellLabel::new(0, 1, Sign::Minus, 2).unwrap();
        assert!(estimate_populations(&records, &other).is_empty());
    }

    #[test]
    fn ideal_log_state_table() {
        let cfg = ExperimentConfig { schedule: crate::experiment::AnalysisSchedule::default(), ..ExperimentConfig::ideal(2) };
        let log = run_campaign(&cfg, Stop::Attempts(40_000)).unwrap();
        for est in state_table(&log.records, 2) {
            assert_eq!(est.population.p, 1.0);
            let fit = est.fit.unwrap();
            // Shots off the grid extremes are random even for a perfect state.
            assert!((fit.contrast - 1.0).abs() < 3.0 * fit.sigma_contrast + 1e-9, "{}", fit.contrast);
            assert!((est.fidelity.unwrap().value - 1.0).abs() < 0.01);
        }
    }

    #[test]
    fn dephased_scan_recovers_contrast() {
        // Fast dephasing scaled to a 0.9 contrast multiplier on |01⟩+|10⟩.
        let label = BellLabel::new(0, 1, Sign::Plus, 2).unwrap();
        let e = crate::noise::decoherence_error(2, label.atomic_pair);
        let scale = 0.05 / e;
        let mut cfg = ExperimentConfig::ideal(2);
        cfg.noise.dephasing.decoherence_scale = scale;
        let log = parity_scan(&cfg, |b| *b == label, &parity_grid(8), 6000).unwrap();
        let fit = fit_parity(&ParityScanData::from_log(&log, &label)).unwrap();
        assert!((fit.contrast - 0.9).abs() < 0.02, "{}", fit.contrast);
    }

    #[test]
    fn field_fit_inverts_noiseless_phases() {
        let table = SensitivityTable::standard();
        let (b, t_exp) = (2.0, 0.05);
        let samples: Vec<PhaseSample> = BellLabel::all(4)
            .into_iter()
            .map(|label| {
                let g = table.gamma(4, label.atomic_pair).unwrap();
                PhaseSample { t: 10.0, label, phase: wrap_phase(b * g * t_exp), sigma: 0.1 }
            })
            .collect();
        let fit = fit_differential_field(&samples, 4, &table, 600.0, t_exp).unwrap();
        let w = &fit.windows[0];
        assert!((w.delta_b.unwrap().value - b).abs() < 1e-9);
        assert!(!w.underdetermined);
        assert!(w.residuals.iter().all(|(_, r)| r.abs() < 1e-9));

        // Large field: the most sensitive state wraps several times.
        let big: Vec<PhaseSample> = samples
            .iter()
            .map(|s| PhaseSample { phase: wrap_phase(3.0 * table.gamma(4, s.label.atomic_pair).unwrap()), ..*s })
            .collect();
        let fit = fit_differential_field(&big, 4, &table, 600.0, 1.0).unwrap();
        assert!((fit.windows[0].delta_b.unwrap().value - 3.0).abs() < 1e-9);
    }

    #[test]
    fn field_fit_zero_and_flags() {
        let table = SensitivityTable::standard();
        let label = BellLabel::new(0, 1, Sign::Plus, 2).unwrap();
        let samples = [PhaseSample { t: 1.0, label, phase: 0.0, sigma: 0.1 }];
        let fit = fit_differential_field(&samples, 2, &table, 600.0, 1.0).unwrap();
        assert_eq!(fit.windows[0].delta_b.unwrap().value, 0.0);
        assert!(fit.windows[0].underdetermined);
        let empty = SensitivityTable::from_entries([]);
        let fit = fit_differential_field(&samples, 2, &empty, 600.0, 1.0).unwrap();
        assert!(fit.windows[0].delta_b.is_none());
    }

    #[test]
    fn noisy_field_fit_is_calibrated() {
        let table = SensitivityTable::standard();
        let mut rng = crate::rng_stream(21, 0);
        let truth = 0.7;
        let reps = 400;
        let mut inside = 0;
        let mut corr = (0.0, 0.0, 0.0);
        for _ in 0..reps {
            let samples: Vec<PhaseSample> = BellLabel::all(4)
                .into_iter()
                .map(|label| {
                    let g = table.gamma(4, label.atomic_pair).unwrap();
                    let z: f64 = rng.sample(rand_distr::StandardNormal);
                    PhaseSample { t: 1.0, label, phase: wrap_phase(truth * g + 0.1 * z), sigma: 0.1 }
                })
                .collect();
            let w = &fit_differential_field(&samples, 4, &table, 600.0, 1.0).unwrap().windows[0];
            let b = w.delta_b.unwrap();
            inside += usize::from((b.value - truth).abs() < 3.0 * b.sigma);
            for (label, r) in &w.residuals {
                let g = table.gamma(4, label.atomic_pair).unwrap();
                corr.0 += r * g;
                corr.1 += r * r;
                corr.2 += g * g;
            }
        }
        assert!(inside as f64 / reps as f64 > 0.97);
        let rho = corr.0 / (corr.1 * corr.2).sqrt();
        assert!(rho.abs() < 0.05, "{rho}");
    }

    #[test]
    fn rephase_is_identity_without_drift() {
        let label = BellLabel::new(0, 1, Sign::Plus, 2).unwrap();
        let records: Vec<_> =
            parity_grid(4).into_iter().enumerate().map(|(i, x)| record(label, i as f64, Some(x), i % 2 == 0)).collect();
        let fit = FieldFit {
            window_s: 600.0,
            exposure_s: 1.0,
            windows: alloc::vec![FieldWindow {
                start: 0.0,
                end: 600.0,
                centre: 1.0,
                delta_b: Some(Measured::exact(0.0)),
                underdetermined: false,
                residuals: Vec::new(),
            }],
        };
        let out = feed_forward_rephase(&records, &label, 2, &SensitivityTable::standard(), &fit);
        assert_eq!(out.excluded, 0);
        assert_eq!(out.scan, ParityScanData::from_trials(Some(label), parity_trials(&records, &label)));
        let late = [record(label, 700.0, Some(0.0), true)];
        assert_eq!(feed_forward_rephase(&late, &label, 2, &SensitivityTable::standard(), &fit).excluded, 1);
    }

    #[test]
    fn interpolation_between_centres() {
        let w = |start: f64, b: f64| FieldWindow {
            start,
            end: start + 10.0,
            centre: start + 5.0,
            delta_b: Some(Measured::exact(b)),
            underdetermined: false,
            residuals: Vec::new(),
        };
        let fit = FieldFit { window_s: 10.0, exposure_s: 1.0, windows: alloc::vec![w(0.0, 1.0), w(10.0, 3.0)] };
        assert_eq!(fit.delta_b_at(2.0), Some(1.0));
        assert_eq!(fit.delta_b_at(10.0), Some(2.0));
        assert_eq!(fit.delta_b_at(19.0), Some(3.0));
        assert_eq!(fit.delta_b_at(20.0), None);
    }

    #[test]
    fn success_fraction_extraction() {
        let f = extract_success_fraction(Measured::exact(1.17e-5), Measured::new(0.0047, 0.0008), Measured::new(0.0069, 0.0012))
            .unwrap();
        assert!((f.value - 1.17e-5 / (0.0047 * 0.0069)).abs() < 1e-12);
        assert!(extract_success_fraction(Measured::exact(1e-5), Measured::exact(0.0), Measured::exact(0.1)).is_err());
    }

    #[test]
    fn atom_photon_bound() {
        assert_eq!(fidelity_lower_bound_atom_photon(1.0), 1.0);
        assert!((fidelity_lower_bound_atom_photon(0.92) - 0.92f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn binomial_interval_matches_sigma_scale() {
        let est = Proportion::new(980, 1000);
        let (lo, hi) = est.clopper_pearson(0.3173);
        assert!(((hi - lo) / 2.0 - est.sigma()).abs() < 0.002);
    }

    proptest! {
        #[test]
        fn extraction_inverts_product(f in 0.01f64..1.0, pa in 1e-4f64..1.0, pb in 1e-4f64..1.0) {
            let got = extract_success_fraction(Measured::exact(f * pa * pb), Measured::exact(pa), Measured::exact(pb)).unwrap();
            prop_assert!((got.value - f).abs() < 1e-12);
        }

        #[test]
        fn fidelity_is_mean(p in 0.0f64..1.0, c in 0.0f64..1.0) {
            let f = fidelity(Measured::exact(p), Measured::exact(c));
            prop_assert_eq!(f.value, (p + c) / 2.0);
        }

        #[test]
        fn span_is_rotation_invariant(mut xs in proptest::collection::vec(0.0f64..TAU, 2..10), shift in 0.0f64..TAU) {
            let a = phase_span(&xs);
            for x in xs.iter_mut() { *x += shift; }
            prop_assert!((phase_span(&xs) - a).abs() < 1e-9);
        }
    }
}
