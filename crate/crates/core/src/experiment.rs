//! Monte Carlo attempt loop, campaigns, parity scans and the event log.
//!
//! Every attempt runs both photon trains, interferes them and reads out the
//! detectors. Whether each emitted photon survives is sampled before any
//! state algebra, one coin per photon in emission order. That makes it cheap
//! to skip the vast majority of attempts, in which too few photons survive to
//! ever produce two clicks.
//!
//! Campaigns are split into fixed-size shards. Shard `k` draws from random
//! stream `(seed, k)`, so results do not depend on how shards are scheduled.

use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::FRAC_PI_2;

#[allow(unused_imports)] // shadowed by inherent methods whenever std is linked
use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, Geometric};
use serde::{Deserialize, Serialize};

use crate::interference::{
    beamsplit, classify_herald, detections, ideal_bell_state, BellLabel, Detection, Herald, Sign,
};
use crate::noise::{
    apply_entangled_phase, apply_fast_dephasing, random_window, Field, NoiseConfig, SensitivityTable,
};
use crate::protocol::{
    check_dimension, node_train, sample_swap_failures, Collection, NodeParams, PulseErrorParams, TrainPlan,
};
use crate::statevec::{BasisLabel, HybridState, Level, Node, PhotonMode, SubspaceUnitary};
use crate::stats::binomial_sigma;
use crate::{Error, Result, RngStream};

/// Attempts per shard.
pub const SHARD_SIZE: u64 = 1 << 20;

/// Log format identifier written into every header.
pub const LOG_FORMAT: &str = "qudit-net-log/1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// True detection probabilities; the rare successes are found by skipping.
    Physical,
    /// Every photon detected. Wall time advances as if in physical mode, i.e.
    /// by `period / (p_A·p_B)` per attempt.
    PostSelected,
}

/// Attempt period model `τ₀ + τ_bin·(d−1)` in µs with an optional override.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Timing {
    pub tau0_us: f64,
    pub tau_bin_us: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period_override_us: Option<f64>,
}

impl Timing {
    /// Measured attempt periods: 17.0, 22.7 and 34.1 µs for d = 2, 3, 4.
    pub fn measured(d: u32) -> Self {
        let period_override_us = match d {
            2 => Some(17.0),
            3 => Some(22.7),
            4 => Some(34.1),
            _ => None,
        };
        Timing { tau0_us: 11.3, tau_bin_us: 5.7, period_override_us }
    }

    pub fn period_us(&self, d: u32) -> f64 {
        self.period_override_us.unwrap_or(self.tau0_us + self.tau_bin_us * (d as f64 - 1.0))
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.tau0_us) || !ok(self.tau_bin_us) {
            return Err(Error::param("timing", "tau0_us and tau_bin_us must be finite and ≥ 0"));
        }
        if let Some(p) = self.period_override_us {
            if !(p.is_finite() && p > 0.0) {
                return Err(Error::param("period_override_us", "must be > 0"));
            }
        }
        Ok(())
    }
}

/// What the analysis pulses do before readout.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AnalysisSetting {
    /// No pulses: measure populations.
    Population,
    /// `π/2` pulses with phases `φ_A = Δφ`, `φ_B = 0`.
    Parity { delta_phi: f64 },
}

impl AnalysisSetting {
    pub fn phases(&self) -> Option<AnalysisPhases> {
        match *self {
            AnalysisSetting::Population => None,
            AnalysisSetting::Parity { delta_phi } => Some(AnalysisPhases { phi_a: delta_phi, phi_b: 0.0 }),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleEntry {
    pub setting: AnalysisSetting,
    #[serde(default = "one")]
    pub repetitions: u32,
}

fn one() -> u32 {
    1
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Ordering {
    /// Setting `i mod n` for attempt `i`.
    Interleaved,
    /// Setting `(i / block) mod n`.
    Blocked { block: u64 },
}

/// Analysis settings cycled over attempts by attempt index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSchedule {
    pub entries: Vec<ScheduleEntry>,
    #[serde(default = "interleaved")]
    pub ordering: Ordering,
}

fn interleaved() -> Ordering {
    Ordering::Interleaved
}

impl Default for AnalysisSchedule {
    /// Populations plus eight equally spaced parity phases, interleaved.
    fn default() -> Self {
        Self::population_and_parity(8)
    }
}

impl AnalysisSchedule {
    pub fn population_only() -> Self {
        AnalysisSchedule {
            entries: alloc::vec![ScheduleEntry { setting: AnalysisSetting::Population, repetitions: 1 }],
            ordering: Ordering::Interleaved,
        }
    }

    pub fn population_and_parity(points: u32) -> Self {
        let mut entries = alloc::vec![ScheduleEntry { setting: AnalysisSetting::Population, repetitions: 1 }];
        entries.extend(parity_grid(points).into_iter().map(|delta_phi| ScheduleEntry {
            setting: AnalysisSetting::Parity { delta_phi },
            repetitions: 1,
        }));
        AnalysisSchedule { entries, ordering: Ordering::Interleaved }
    }

    pub fn parity_only(points: u32) -> Self {
        let mut s = Self::population_and_parity(points);
        s.entries.remove(0);
        s
    }

    fn cycle_len(&self) -> u64 {
        self.entries.iter().map(|e| u64::from(e.repetitions)).sum()
    }

    pub fn setting_for(&self, attempt: u64) -> AnalysisSetting {
        let n = self.cycle_len();
        let slot = match self.ordering {
            Ordering::Interleaved => attempt % n,
            Ordering::Blocked { block } => (attempt / block.max(1)) % n,
        };
        let mut acc = 0;
        for e in &self.entries {
            acc += u64::from(e.repetitions);
            if slot < acc {
                return e.setting;
            }
        }
        unreachable!("slot below cycle length")
    }

    pub fn validate(&self) -> Result<()> {
        if self.cycle_len() == 0 {
            return Err(Error::param("schedule", "needs at least one entry with repetitions > 0"));
        }
        if let Ordering::Blocked { block: 0 } = self.ordering {
            return Err(Error::param("block", "must be > 0"));
        }
        Ok(())
    }
}

/// `n` phases `2πk/n`.
pub fn parity_grid(n: u32) -> Vec<f64> {
    (0..n).map(|k| 2.0 * core::f64::consts::PI * k as f64 / n as f64).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub d: u32,
    #[serde(default)]
    pub node_a: NodeParams,
    #[serde(default)]
    pub node_b: NodeParams,
    #[serde(default)]
    pub pulse_errors: PulseErrorParams,
    #[serde(default)]
    pub noise: NoiseConfig,
    pub timing: Timing,
    pub mode: Mode,
    #[serde(default)]
    pub schedule: AnalysisSchedule,
    pub seed: u64,
}

/// Per-node detection probabilities of the two systems.
pub const P_DETECT_A: f64 = 0.0047;
pub const P_DETECT_B: f64 = 0.0069;
/// Mode overlap of the two nodes' photons.
pub const DEFAULT_OVERLAP: f64 = 0.996;

/// Per-bin phase jitter giving a 0.3 % infidelity from the four jitter terms
/// entering the relative phase: `e^{−2σ²} = 1 − 0.006`.
pub fn default_motional_jitter() -> f64 {
    (-(1.0 - 0.006f64).ln() / 2.0).sqrt()
}

impl ExperimentConfig {
    /// Lossless, error-free, post-selected configuration.
    pub fn ideal(d: u32) -> Self {
        ExperimentConfig {
            d,
            node_a: NodeParams::ideal(),
            node_b: NodeParams::ideal(),
            pulse_errors: PulseErrorParams::none(),
            noise: NoiseConfig::none(),
            timing: Timing::measured(d),
            mode: Mode::PostSelected,
            schedule: AnalysisSchedule::population_only(),
            seed: 0,
        }
    }

    /// Physical-mode configuration with every default error channel on.
    pub fn calibrated(d: u32) -> Self {
        let jitter = default_motional_jitter();
        ExperimentConfig {
            d,
            node_a: NodeParams { p_detect: P_DETECT_A, motional_phase_jitter: jitter, ..NodeParams::ideal() },
            node_b: NodeParams {
                p_detect: P_DETECT_B,
                motional_phase_jitter: jitter,
                wavepacket_overlap: DEFAULT_OVERLAP,
                ..NodeParams::ideal()
            },
            pulse_errors: PulseErrorParams::calibrated(d),
            noise: NoiseConfig::default(),
            timing: Timing::measured(d),
            mode: Mode::Physical,
            schedule: AnalysisSchedule::default(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_dimension(self.d)?;
        self.node_a.validate()?;
        self.node_b.validate()?;
        self.pulse_errors.validate()?;
        self.noise.validate()?;
        self.timing.validate()?;
        self.schedule.validate()
    }

    pub fn period_s(&self) -> f64 {
        self.timing.period_us(self.d) * 1e-6
    }

    /// Wall time between consecutive attempts.
    pub fn attempt_spacing_s(&self) -> f64 {
        match self.mode {
            Mode::Physical => self.period_s(),
            Mode::PostSelected => {
                let pp = self.node_a.p_detect * self.node_b.p_detect;
                if pp > 0.0 {
                    self.period_s() / pp
                } else {
                    self.period_s()
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fluorescence {
    Bright,
    Dark,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Disposition {
    Success,
    DiscardSameBin,
    DiscardDarkDark,
    ErasureVeto,
    NoHerald,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisPhases {
    pub phi_a: f64,
    pub phi_b: f64,
}

impl AnalysisPhases {
    pub fn delta(&self) -> f64 {
        self.phi_a - self.phi_b
    }
}

/// One attempt that produced exactly two clicks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub attempt_index: u64,
    pub wall_time_s: f64,
    pub clicks: Vec<Detection>,
    pub herald: Option<Herald>,
    /// A background count is among the clicks.
    pub background: bool,
    pub analysis: Option<AnalysisPhases>,
    /// `[atom A, atom B]` × `[round n', round m']`.
    pub fluorescence: Option<[[Fluorescence; 2]; 2]>,
    pub disposition: Disposition,
    /// Field phase `φ` applied to the state (ground truth, for diagnostics).
    pub field_phase: Option<f64>,
    /// Overlap of the heralded atomic state with its ideal Bell state before readout.
    pub state_fidelity: Option<f64>,
}

impl EventRecord {
    pub fn bell(&self) -> Option<BellLabel> {
        match self.herald {
            Some(Herald::Bell(b)) => Some(b),
            _ => None,
        }
    }

    pub fn is_success(&self) -> bool {
        self.disposition == Disposition::Success
    }

    /// `+1` if both atoms lit up in the same round, `−1` otherwise. Successes only.
    pub fn parity(&self) -> Option<i8> {
        if !self.is_success() {
            return None;
        }
        let f = self.fluorescence?;
        Some(if f[0] == f[1] { 1 } else { -1 })
    }

    /// Population-measurement success in which the atoms sit in different levels.
    pub fn in_target_population(&self) -> Option<bool> {
        if !self.is_success() || self.analysis.is_some() {
            return None;
        }
        self.parity().map(|p| p < 0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stop {
    Attempts(u64),
    Successes(u64),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DispositionCounts {
    pub success: u64,
    pub discard_same_bin: u64,
    pub discard_dark_dark: u64,
    pub erasure_veto: u64,
    pub no_herald: u64,
}

impl DispositionCounts {
    pub fn add(&mut self, d: Disposition) {
        match d {
            Disposition::Success => self.success += 1,
            Disposition::DiscardSameBin => self.discard_same_bin += 1,
            Disposition::DiscardDarkDark => self.discard_dark_dark += 1,
            Disposition::ErasureVeto => self.erasure_veto += 1,
            Disposition::NoHerald => self.no_herald += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.success + self.discard_same_bin + self.discard_dark_dark + self.erasure_veto + self.no_herald
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub format: String,
    pub config: ExperimentConfig,
    pub seed: u64,
    pub mode: Mode,
    /// Detection probabilities of the physical system, kept for rate bookkeeping.
    pub physical_p_a: f64,
    pub physical_p_b: f64,
    pub stop: Stop,
    pub shard_size: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub attempts: u64,
    pub counts: DispositionCounts,
    /// Attempts heralding a Bell label.
    pub bell_heralds: u64,
    /// `bell_heralds / attempts`.
    pub p_ent: f64,
    pub sigma_p_ent: f64,
    /// `successes / attempts`.
    pub success_rate: f64,
    /// `(erasure vetoes + dark-dark discards) / bell_heralds`.
    pub rejection_fraction: f64,
    pub wall_time_s: f64,
}

/// Heralded attempts in attempt order. Attempts without a record were `NoHerald`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventLog {
    pub header: LogHeader,
    pub records: Vec<EventRecord>,
    pub attempts: u64,
}

impl EventLog {
    pub fn summary(&self) -> Summary {
        let mut counts = DispositionCounts::default();
        let mut bell_heralds = 0;
        for r in &self.records {
            counts.add(r.disposition);
            if r.bell().is_some() {
                bell_heralds += 1;
            }
        }
        counts.no_herald += self.attempts - self.records.len() as u64;
        let n = self.attempts;
        let p_ent = if n > 0 { bell_heralds as f64 / n as f64 } else { 0.0 };
        let rejected = counts.erasure_veto + counts.discard_dark_dark;
        Summary {
            attempts: n,
            counts,
            bell_heralds,
            p_ent,
            sigma_p_ent: binomial_sigma(p_ent, n),
            success_rate: if n > 0 { counts.success as f64 / n as f64 } else { 0.0 },
            rejection_fraction: if bell_heralds > 0 { rejected as f64 / bell_heralds as f64 } else { 0.0 },
            wall_time_s: n as f64 * self.header.config.attempt_spacing_s(),
        }
    }

    pub fn successes(&self) -> impl Iterator<Item = &EventRecord> {
        self.records.iter().filter(|r| r.is_success())
    }
}

/// Output of one shard.
#[derive(Clone, Debug, PartialEq)]
pub struct ShardResult {
    pub shard: u64,
    /// Attempts covered: `[start, end)`.
    pub start: u64,
    pub end: u64,
    pub records: Vec<EventRecord>,
}

/// Presampled randomness of one attempt. `transmit` holds one coin per
/// photon in emission order, `d` coins per node.
#[derive(Clone, Debug, PartialEq)]
struct AttemptPlan {
    transmit: [u64; 2],
    failures: [u64; 2],
    background: Vec<Detection>,
}

/// Prepared configuration: built field, effective probabilities, skip statistics.
#[derive(Clone, Debug)]
pub struct Simulator {
    config: ExperimentConfig,
    field: Field,
    sensitivities: SensitivityTable,
    p: [f64; 2],
    /// Probability that node `k` transmits no photon in any bin.
    q_node: [f64; 2],
    /// Mean background clicks per attempt.
    lambda_bg: f64,
    spacing_s: f64,
}

impl Simulator {
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let d = config.d;
        let p = match config.mode {
            Mode::Physical => [config.node_a.p_detect, config.node_b.p_detect],
            Mode::PostSelected => [1.0, 1.0],
        };
        let q_node = p.map(|p| (1.0 - p).powi(d as i32));
        Ok(Simulator {
            field: config.noise.field.build()?,
            sensitivities: SensitivityTable::standard(),
            p,
            q_node,
            lambda_bg: config.noise.dephasing.background_rate * 2.0 * d as f64,
            spacing_s: config.attempt_spacing_s(),
            config: config.clone(),
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn wall_time(&self, attempt: u64) -> f64 {
        attempt as f64 * self.spacing_s
    }

    fn node_params(&self, k: usize) -> NodeParams {
        let base = if k == 0 { self.config.node_a } else { self.config.node_b };
        NodeParams { p_detect: self.p[k], ..base }
    }

    /// Samples every random element of the attempt without conditioning.
    fn sample_plan<R: Rng + ?Sized>(&self, rng: &mut R) -> AttemptPlan {
        let d = self.config.d;
        let mut transmit = [0u64; 2];
        for (k, mask) in transmit.iter_mut().enumerate() {
            for j in 0..d {
                if rng.random::<f64>() < self.p[k] {
                    *mask |= 1 << j;
                }
            }
        }
        let failures = [0, 1].map(|_| sample_swap_failures(d, &self.config.pulse_errors, rng));
        let count = if self.lambda_bg > 0.0 { poisson_count(self.lambda_bg, 0, rng) } else { 0 };
        AttemptPlan { transmit, failures, background: (0..count).map(|_| random_window(d, rng)).collect() }
    }

    /// Probability that an attempt transmits no photon and sees no background.
    fn quiet_probability(&self) -> f64 {
        self.q_node[0] * self.q_node[1] * (-self.lambda_bg).exp()
    }

    /// Samples a plan conditioned on at least one transmitted photon or background click.
    fn sample_active_plan<R: Rng + ?Sized>(&self, rng: &mut R) -> AttemptPlan {
        let d = self.config.d;
        let p_bg = 1.0 - (-self.lambda_bg).exp();
        let active = [1.0 - self.q_node[0], 1.0 - self.q_node[1], p_bg];
        let weight = |flags: u32| {
            (0..3).map(|i| if flags >> i & 1 == 1 { active[i] } else { 1.0 - active[i] }).product::<f64>()
        };
        let total: f64 = (1..8).map(weight).sum();
        let mut u = rng.random::<f64>() * total;
        let mut flags = 7;
        for f in 1..8 {
            let w = weight(f);
            if u < w {
                flags = f;
                break;
            }
            u -= w;
        }
        let mut transmit = [0u64; 2];
        for (k, mask) in transmit.iter_mut().enumerate() {
            if flags >> k & 1 == 1 {
                *mask = nonempty_mask(d, self.p[k], rng);
            }
        }
        let count = if flags & 4 != 0 { poisson_count(self.lambda_bg, 1, rng) } else { 0 };
        let background = (0..count).map(|_| random_window(d, rng)).collect();
        let failures = [0, 1].map(|_| sample_swap_failures(d, &self.config.pulse_errors, rng));
        AttemptPlan { transmit, failures, background }
    }

    /// Runs a single attempt with freshly sampled randomness. `None` means `NoHerald`.
    pub fn attempt<R: Rng + ?Sized>(&self, index: u64, rng: &mut R) -> Result<Option<EventRecord>> {
        let plan = self.sample_plan(rng);
        self.evaluate(index, &plan, self.config.schedule.setting_for(index), rng)
    }

    /// Upper bound on clicks the plan can produce. A node emits at most one
    /// photon plus one per failed swap, so only that many leading coins matter.
    fn click_bound(&self, plan: &AttemptPlan) -> u32 {
        let node = |k: usize| {
            let emitted = 1 + plan.failures[k].count_ones();
            let reach = if emitted >= 64 { u64::MAX } else { (1u64 << emitted) - 1 };
            (plan.transmit[k] & reach).count_ones()
        };
        node(0) + node(1) + plan.background.len() as u32
    }

    fn evaluate<R: Rng + ?Sized>(
        &self,
        index: u64,
        plan: &AttemptPlan,
        setting: AnalysisSetting,
        rng: &mut R,
    ) -> Result<Option<EventRecord>> {
        let cfg = &self.config;
        let d = cfg.d;
        if self.click_bound(plan) < 2 {
            return Ok(None);
        }
        let mut factors = Vec::with_capacity(2);
        for (k, node) in Node::BOTH.into_iter().enumerate() {
            let train = TrainPlan {
                collection: Collection::Presampled { transmit: plan.transmit[k] },
                swap_failures: plan.failures[k],
            };
            factors.push(node_train(node, d, &self.node_params(k), &cfg.pulse_errors, train, rng)?);
        }
        let split = beamsplit(&factors[0].tensor(&factors[1])?)?;

        let outcome = split.sample(rng)?;
        let mut clicks = detections(&outcome);
        clicks.extend(plan.background.iter().copied());
        clicks.sort();
        clicks.dedup();
        if clicks.len() != 2 {
            return Ok(None);
        }
        let background = plan.background.iter().any(|b| clicks.contains(b));
        let t = self.wall_time(index);
        let herald = classify_herald(&clicks, d)?;
        let mut record = EventRecord {
            attempt_index: index,
            wall_time_s: t,
            clicks: clicks.clone(),
            herald: Some(herald),
            background,
            analysis: None,
            fluorescence: None,
            disposition: Disposition::DiscardSameBin,
            field_phase: None,
            state_fidelity: None,
        };
        let Herald::Bell(label) = herald else {
            return Ok(Some(record));
        };

        // Condition on the clicks and on the sampled record of lost photons.
        let bg = &plan.background;
        let lost = lost_photons(&outcome);
        let heralded = split
            .project(|l| {
                let mut c = detections(l);
                c.extend(bg.iter().copied());
                c.sort();
                c.dedup();
                c == clicks && lost_photons(l) == lost
            })
            .state
            .ok_or_else(|| Error::Detections("sampled pattern has zero weight".into()))?;

        let exposure = cfg.noise.exposure_s;
        let (state, phi) = match apply_entangled_phase(&heralded, &label, &self.field, &self.sensitivities, t, exposure) {
            Ok(x) => x,
            Err(Error::MissingSensitivity(..)) => (heralded, 0.0),
            Err(e) => return Err(e),
        };
        let state = apply_fast_dephasing(&state, &label, &cfg.noise.dephasing, rng);
        record.field_phase = Some(phi);
        record.state_fidelity = Some(state.atomic_fidelity(&ideal_bell_state(&label, d, 0.0)?));

        let phases = setting.phases();
        let state = match phases {
            Some(ph) => analysis_rotations(&state, &label, ph)?,
            None => state,
        };
        record.analysis = phases;

        let (fluorescence, disposition) = readout(&state, &label, cfg.noise.dephasing.spam_error, rng)?;
        record.fluorescence = Some(fluorescence);
        record.disposition = disposition;
        Ok(Some(record))
    }

    /// Runs attempts `[start, end)` of shard `shard`, stopping early after
    /// `max_successes` successes if given.
    pub fn run_range(&self, shard: u64, start: u64, end: u64, max_successes: Option<u64>) -> Result<ShardResult> {
        let mut rng = crate::rng_stream(self.config.seed, shard);
        let mut records = Vec::new();
        let mut successes = 0;
        let mut stop_at = end;
        self.walk(&mut rng, start, end, |idx| self.config.schedule.setting_for(idx), |rec| {
            if rec.is_success() {
                successes += 1;
            }
            let idx = rec.attempt_index;
            records.push(rec);
            if max_successes.is_some_and(|m| successes >= m) {
                stop_at = idx + 1;
                return false;
            }
            true
        })?;
        Ok(ShardResult { shard, start, end: stop_at, records })
    }

    /// Walks attempts from `start` until `end` or until `sink` returns false,
    /// skipping attempts that cannot produce two clicks.
    fn walk(
        &self,
        rng: &mut RngStream,
        start: u64,
        end: u64,
        mut setting: impl FnMut(u64) -> AnalysisSetting,
        mut sink: impl FnMut(EventRecord) -> bool,
    ) -> Result<()> {
        let q = self.quiet_probability();
        let skip = if q > 0.0 && q < 1.0 { Some(Geometric::new(1.0 - q).map_err(|_| Error::param("p_detect", "invalid skip probability"))?) } else { None };
        let mut idx = start;
        while idx < end {
            if q >= 1.0 {
                break;
            }
            if let Some(g) = &skip {
                idx = idx.saturating_add(g.sample(rng));
                if idx >= end {
                    break;
                }
            }
            let plan = self.sample_active_plan(rng);
            if let Some(rec) = self.evaluate(idx, &plan, setting(idx), rng)? {
                if !sink(rec) {
                    break;
                }
            }
            idx += 1;
        }
        Ok(())
    }

    fn header(&self, stop: Stop) -> LogHeader {
        LogHeader {
            format: String::from(LOG_FORMAT),
            config: self.config.clone(),
            seed: self.config.seed,
            mode: self.config.mode,
            physical_p_a: self.config.node_a.p_detect,
            physical_p_b: self.config.node_b.p_detect,
            stop,
            shard_size: SHARD_SIZE,
        }
    }

    /// Shard ranges needed for `stop = Attempts(n)`.
    pub fn shard_ranges(n_attempts: u64) -> impl Iterator<Item = (u64, u64, u64)> {
        let shards = n_attempts.div_ceil(SHARD_SIZE);
        (0..shards).map(move |k| (k, k * SHARD_SIZE, ((k + 1) * SHARD_SIZE).min(n_attempts)))
    }

    pub fn run_shard(&self, shard: u64, n_attempts: u64) -> Result<ShardResult> {
        let start = shard * SHARD_SIZE;
        self.run_range(shard, start, ((shard + 1) * SHARD_SIZE).min(n_attempts), None)
    }

    /// Concatenates shard results in shard order and truncates at the
    /// `n`-th success for `Stop::Successes(n)`.
    pub fn merge(&self, stop: Stop, mut shards: Vec<ShardResult>) -> EventLog {
        shards.sort_by_key(|s| s.shard);
        let mut records = Vec::new();
        let mut attempts = 0;
        let mut successes = 0;
        'outer: for s in shards {
            for r in s.records {
                let idx = r.attempt_index;
                let success = r.is_success();
                records.push(r);
                if success {
                    successes += 1;
                    if let Stop::Successes(n) = stop {
                        if successes >= n {
                            attempts = idx + 1;
                            break 'outer;
                        }
                    }
                }
            }
            attempts = s.end;
        }
        EventLog { header: self.header(stop), records, attempts }
    }
}

/// Runs a campaign on the calling thread.
pub fn run_campaign(config: &ExperimentConfig, stop: Stop) -> Result<EventLog> {
    let sim = Simulator::new(config)?;
    match stop {
        Stop::Attempts(0) | Stop::Successes(0) => Err(Error::param("stop", "must be positive")),
        Stop::Attempts(n) => {
            let shards =
                Simulator::shard_ranges(n).map(|(k, start, end)| sim.run_range(k, start, end, None)).collect::<Result<Vec<_>>>()?;
            Ok(sim.merge(stop, shards))
        }
        Stop::Successes(n) => {
            let mut shards = Vec::new();
            let mut found = 0;
            let mut k = 0;
            while found < n {
                let s = sim.run_range(k, k * SHARD_SIZE, (k + 1) * SHARD_SIZE, Some(n - found))?;
                found += s.records.iter().filter(|r| r.is_success()).count() as u64;
                shards.push(s);
                k += 1;
                if k == u64::MAX / SHARD_SIZE {
                    break;
                }
            }
            Ok(sim.merge(stop, shards))
        }
    }
}

/// Collects `reps` successes of the selected herald class at every phase of
/// `grid`, always measuring the least-filled point next.
pub fn parity_scan(
    config: &ExperimentConfig,
    filter: impl Fn(&BellLabel) -> bool,
    grid: &[f64],
    reps: u64,
) -> Result<EventLog> {
    if grid.is_empty() {
        return Err(Error::param("grid", "needs at least one phase"));
    }
    if reps == 0 {
        return Err(Error::param("reps", "must be positive"));
    }
    let sim = Simulator::new(config)?;
    let mut filled = alloc::vec![0u64; grid.len()];
    let mut rng = crate::rng_stream(config.seed, u64::MAX);
    let mut records = Vec::new();
    let mut last = 0;
    let pick = |filled: &[u64]| {
        let mut best = 0;
        for (i, &c) in filled.iter().enumerate() {
            if c < filled[best] {
                best = i;
            }
        }
        best
    };
    let current = core::cell::Cell::new(pick(&filled));
    sim.walk(&mut rng, 0, u64::MAX, |_| AnalysisSetting::Parity { delta_phi: grid[current.get()] }, |rec| {
        last = rec.attempt_index;
        if rec.is_success() && rec.bell().is_some_and(|b| filter(&b)) {
            filled[current.get()] += 1;
            current.set(pick(&filled));
        }
        records.push(rec);
        filled.iter().any(|&c| c < reps)
    })?;
    let attempts = last + 1;
    let mut header = sim.header(Stop::Attempts(attempts));
    header.shard_size = u64::MAX;
    Ok(EventLog { header, records, attempts })
}

/// `π/2` pulses on each atom's `{m', n'}` pair with the given phases.
pub fn analysis_rotations(state: &HybridState, label: &BellLabel, phases: AnalysisPhases) -> Result<HybridState> {
    let (np, mp) = label.atomic_pair;
    let (n, m) = (Level::Qudit(np as u8), Level::Qudit(mp as u8));
    let s = state.apply_unitary(&SubspaceUnitary::rotation(Node::A, m, n, FRAC_PI_2, phases.phi_a))?;
    s.apply_unitary(&SubspaceUnitary::rotation(Node::B, m, n, FRAC_PI_2, phases.phi_b))
}

/// Shelves `X → X'`, then reads out level `n'` and level `m'` in two rounds.
pub fn readout<R: Rng + ?Sized>(
    state: &HybridState,
    label: &BellLabel,
    spam_error: f64,
    rng: &mut R,
) -> Result<([[Fluorescence; 2]; 2], Disposition)> {
    let shelved = state.map_terms(|l, amp, out| {
        let mut l = l.clone();
        for node in Node::BOTH {
            if l.atom(node) == Some(Level::X) {
                l.set_atom(node, Level::Xp);
            }
        }
        out.push(l, amp);
    });
    let sample = shelved.sample(rng)?;
    let (np, mp) = label.atomic_pair;
    let mut lights = [[Fluorescence::Dark; 2]; 2];
    let mut erasure = false;
    for (k, node) in Node::BOTH.into_iter().enumerate() {
        let level = sample.atom(node);
        if level == Some(Level::Qudit(np as u8)) {
            lights[k][0] = Fluorescence::Bright;
        } else if level == Some(Level::Qudit(mp as u8)) {
            lights[k][1] = Fluorescence::Bright;
        } else if level == Some(Level::Xp) {
            erasure = true;
        }
        if rng.random::<f64>() < spam_error {
            lights[k].swap(0, 1);
        }
    }
    let one_bright = |l: &[Fluorescence; 2]| (l[0] == Fluorescence::Bright) != (l[1] == Fluorescence::Bright);
    let disposition = if lights.iter().all(one_bright) {
        Disposition::Success
    } else if erasure {
        Disposition::ErasureVeto
    } else {
        Disposition::DiscardDarkDark
    };
    Ok((lights, disposition))
}

/// `d` transmission coins conditioned on at least one success.
fn nonempty_mask<R: Rng + ?Sized>(d: u32, p: f64, rng: &mut R) -> u64 {
    let mut mask = 0;
    let mut first = d - 1;
    for i in 0..d {
        // P(first = i | first ≥ i, some transmission in bins i..d).
        let rest = 1.0 - (1.0 - p).powi((d - i) as i32);
        if rest <= 0.0 || rng.random::<f64>() < p / rest {
            first = i;
            break;
        }
    }
    mask |= 1 << first;
    for j in first + 1..d {
        if rng.random::<f64>() < p {
            mask |= 1 << j;
        }
    }
    mask
}

/// Poisson draw with mean `lambda` conditioned on being at least `min`.
fn poisson_count<R: Rng + ?Sized>(lambda: f64, min: u64, rng: &mut R) -> u64 {
    let mut pmf = (-lambda).exp();
    let mut cdf_below = 0.0;
    for k in 0..min {
        cdf_below += pmf;
        pmf *= lambda / (k + 1) as f64;
    }
    let mut u = rng.random::<f64>() * (1.0 - cdf_below);
    let mut k = min;
    while u >= pmf && k < min + 1000 {
        u -= pmf;
        k += 1;
        pmf *= lambda / k as f64;
    }
    k
}

fn lost_photons(label: &BasisLabel) -> Vec<(PhotonMode, u8)> {
    label.photons().iter().filter(|(m, _)| !m.port.is_input() && !m.port.is_output()).copied().collect()
}

/// Basis label of atoms in `(a, b)` without photons.
pub fn atom_label(a: u32, b: u32) -> BasisLabel {
    BasisLabel::atoms(Level::Qudit(a as u8), Level::Qudit(b as u8))
}

/// `+1` for Plus, `−1` for Minus: the sign of the ideal parity at `Δφ = φ`.
pub fn sign_factor(sign: Sign) -> f64 {
    match sign {
        Sign::Plus => 1.0,
        Sign::Minus => -1.0,
    }
}
