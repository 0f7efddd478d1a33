//! Atom-photon entanglement sequence for one or two nodes.
//!
//! Each node starts in an equal superposition of its `d` qudit levels. Bin `j`
//! excites level 0, which emits a photon into time bin `j`, and a swap then
//! brings level `j+1` down to 0 for the next bin. After the last bin a photon
//! in bin `j` is correlated with the atom in level `j+1 mod d`.

use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;
#[allow(unused_imports)] // shadowed by inherent methods whenever std is linked
use num_traits::Float;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::statevec::{BasisLabel, HybridState, Level, Node, OverlapBranch, PhotonMode, Port};
use crate::{Error, Result};

/// Largest supported qudit dimension. Transmission and failure plans are bit masks.
pub const MAX_DIMENSION: u32 = 64;

/// Per-node optical parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NodeParams {
    /// Probability that an emitted photon is collected and detected.
    pub p_detect: f64,
    /// Static optical phase added to every emitted photon (rad).
    pub phase_opt: f64,
    /// RMS of the per-bin residual phase (rad).
    pub motional_phase_jitter: f64,
    /// Overlap ν of this node's wavepacket with the reference node's.
    /// Node A is the reference, so only node B's value is used.
    pub wavepacket_overlap: f64,
}

impl Default for NodeParams {
    fn default() -> Self {
        NodeParams { p_detect: 1.0, phase_opt: 0.0, motional_phase_jitter: 0.0, wavepacket_overlap: 1.0 }
    }
}

impl NodeParams {
    pub fn ideal() -> Self {
        Self::default()
    }

    pub fn with_p_detect(mut self, p: f64) -> Self {
        self.p_detect = p;
        self
    }

    pub fn validate(&self) -> Result<()> {
        unit("p_detect", self.p_detect)?;
        unit("wavepacket_overlap", self.wavepacket_overlap)?;
        if !self.phase_opt.is_finite() {
            return Err(Error::param("phase_opt", "must be finite"));
        }
        if !(self.motional_phase_jitter >= 0.0 && self.motional_phase_jitter.is_finite()) {
            return Err(Error::param("motional_phase_jitter", "must be finite and ≥ 0"));
        }
        Ok(())
    }
}

/// Imperfections of the shelving pulses and of the emission step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PulseErrorParams {
    /// Fraction of the level-0 population a swap pulse leaves behind.
    pub swap_infidelity: f64,
    /// Probability that an excitation decays to `X` instead of back to level 0.
    pub x_decay_prob: f64,
    /// Probability that the photon of an `X` decay passes the polarization filter.
    pub pol_leakage: f64,
}

impl Default for PulseErrorParams {
    fn default() -> Self {
        Self::none()
    }
}

impl PulseErrorParams {
    pub fn none() -> Self {
        PulseErrorParams { swap_infidelity: 0.0, x_decay_prob: 0.0, pol_leakage: 0.0 }
    }

    /// Defaults tuned by simulation to the observed rejection fractions and
    /// double-excitation infidelities.
    pub fn calibrated(d: u32) -> Self {
        let x_decay_prob = match d {
            2 => CALIBRATED_X_DECAY[0],
            3 => CALIBRATED_X_DECAY[1],
            _ => CALIBRATED_X_DECAY[2],
        };
        PulseErrorParams { swap_infidelity: CALIBRATED_SWAP_INFIDELITY, x_decay_prob, pol_leakage: DEFAULT_POL_LEAKAGE }
    }

    pub fn validate(&self) -> Result<()> {
        unit("swap_infidelity", self.swap_infidelity)?;
        unit("x_decay_prob", self.x_decay_prob)?;
        unit("pol_leakage", self.pol_leakage)
    }
}

pub const DEFAULT_POL_LEAKAGE: f64 = 0.5;
pub const CALIBRATED_SWAP_INFIDELITY: f64 = 0.025;
/// `x_decay_prob` for d = 2, 3, 4.
pub const CALIBRATED_X_DECAY: [f64; 3] = [0.107, 0.030, 0.040];

fn unit(name: &'static str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::param(name, alloc::format!("{v} is outside [0, 1]")))
    }
}

pub(crate) fn check_dimension(d: u32) -> Result<()> {
    if (2..=MAX_DIMENSION).contains(&d) {
        Ok(())
    } else {
        Err(Error::Dimension(d))
    }
}

/// How photon loss enters the emission step.
///
/// Lost photons are kept in the node's lost port with their time bin, which
/// is the environment record that makes loss incoherent.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Collection {
    /// Each photon branch splits into `√p` transmitted and `√(1−p)` lost.
    Coherent,
    /// Loss already sampled per photon: bit `i` set means the node's `i`-th
    /// emitted photon (counted from 0 within each branch) is transmitted.
    Presampled { transmit: u64 },
}

impl Collection {
    /// `(transmitted, lost)` amplitudes for a photon that is the `ordinal`-th from its node.
    fn amplitudes(self, p: f64, ordinal: usize) -> (f64, f64) {
        match self {
            Collection::Coherent => (p.sqrt(), (1.0 - p).sqrt()),
            Collection::Presampled { transmit } if ordinal < 64 && transmit >> ordinal & 1 == 1 => (1.0, 0.0),
            Collection::Presampled { .. } => (0.0, 1.0),
        }
    }
}

/// Photons from `node` already present in `label`.
fn emitted_count(label: &BasisLabel, node: Node) -> usize {
    label.photons().iter().filter(|(m, _)| m.port.source() == Some(node)).map(|(_, n)| usize::from(*n)).sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SwapOutcome {
    Swapped,
    /// The emitted branch is left behind in level 0.
    Failed,
}

/// Equal superposition of levels `0..d` for one node, all phases 0.
pub fn prepare_superposition(node: Node, d: u32) -> Result<HybridState> {
    check_dimension(d)?;
    let amp = Complex64::new(1.0 / (d as f64).sqrt(), 0.0);
    HybridState::from_terms(d, (0..d).map(|k| (BasisLabel::single(node, Level::Qudit(k as u8)), amp)))
}

/// Excites level 0 of `node` and emits into time bin `bin`.
///
/// Decay to `X` is unravelled: with probability `x_decay_prob · w₀` (`w₀` the
/// level-0 weight) the state collapses onto its level-0 part relabelled `X`;
/// otherwise that part is damped by `√(1−x)` and the state renormalized.
pub fn emission_step<R: Rng + ?Sized>(
    state: &HybridState,
    node: Node,
    bin: u32,
    params: &NodeParams,
    errors: &PulseErrorParams,
    collection: Collection,
    rng: &mut R,
) -> Result<HybridState> {
    let d = state.d();
    if bin >= d {
        return Err(Error::TimeBin { bin, d });
    }
    let occupied = state.labels().any(|l| {
        l.photons().iter().any(|(m, _)| u32::from(m.time_bin) == bin && m.port.source() == Some(node))
    });
    if occupied {
        return Err(Error::BinOccupied(bin));
    }

    // Fixed draw count per call keeps streams aligned across parameter changes.
    let z: f64 = rng.sample(StandardNormal);
    let u_decay: f64 = rng.random();
    let u_leak: f64 = rng.random();

    let phase = Complex64::from_polar(1.0, params.phase_opt + params.motional_phase_jitter * z);
    let ground = Level::Qudit(0);
    let t = bin as u8;
    let (port_in, port_lost) = (Port::input(node), Port::lost(node));

    let x = errors.x_decay_prob;
    if x > 0.0 {
        let w0: f64 =
            state.iter().filter(|(l, _)| l.atom(node) == Some(ground)).map(|(_, a)| a.norm_sqr()).sum();
        if u_decay < x * w0 {
            let leaked = u_leak < errors.pol_leakage;
            let collapsed = state.try_map_terms(|label, amp, out| {
                if label.atom(node) != Some(ground) {
                    return Ok(());
                }
                let atom = label.clone().with_atom(node, Level::X);
                let (a_in, a_lost) = collection.amplitudes(params.p_detect, emitted_count(label, node));
                // A π photon blocked by the polarizer is lost whatever its fate would have been.
                let (a_in, a_lost) = if leaked { (a_in, a_lost) } else { (0.0, 1.0) };
                for (port, w) in [(port_in, a_in), (port_lost, a_lost)] {
                    if w > 0.0 {
                        out.push(atom.clone().with_photon(PhotonMode::new(t, port, OverlapBranch::Pi))?, amp * phase * w);
                    }
                }
                Ok(())
            })?;
            return Ok(collapsed.normalized());
        }
    }

    let damp = (1.0 - x).sqrt();
    let split = match node {
        Node::B => {
            let nu = params.wavepacket_overlap;
            [(OverlapBranch::Matched, nu.sqrt()), (OverlapBranch::Orthogonal, (1.0 - nu).sqrt())]
        }
        Node::A => [(OverlapBranch::Matched, 1.0), (OverlapBranch::Orthogonal, 0.0)],
    };
    let emitted = state.try_map_terms(|label, amp, out| {
        if label.atom(node) != Some(ground) {
            out.push(label.clone(), amp);
            return Ok(());
        }
        let amp = amp * damp * phase;
        let (a_in, a_lost) = collection.amplitudes(params.p_detect, emitted_count(label, node));
        if a_in > 0.0 {
            for (branch, w) in split {
                if w > 0.0 {
                    out.push(label.clone().with_photon(PhotonMode::new(t, port_in, branch))?, amp * (a_in * w));
                }
            }
        }
        if a_lost > 0.0 {
            // Lost photons carry no overlap information worth tracking.
            out.push(label.clone().with_photon(PhotonMode::new(t, port_lost, OverlapBranch::Matched))?, amp * a_lost);
        }
        Ok(())
    })?;
    Ok(if x > 0.0 { emitted.normalized() } else { emitted })
}

/// Exchanges levels 0 and `level` of `node` with a pulse of the given infidelity.
///
/// The two outcomes unravel a pulse that leaves a fraction `infidelity` of
/// the level-0 population behind. [`SwapOutcome::Failed`] keeps only the
/// leftover, which has just emitted and stays in level 0. On
/// [`SwapOutcome::Swapped`] the level-0 amplitude is damped by
/// `√(1 − infidelity)` before the exchange. Both results are renormalized.
pub fn apply_swap(
    state: &HybridState,
    node: Node,
    level: u32,
    outcome: SwapOutcome,
    infidelity: f64,
) -> Result<HybridState> {
    if level == 0 || level >= state.d() {
        return Err(Error::SwapLevel(level));
    }
    let j = Level::Qudit(level as u8);
    let zero = Level::Qudit(0);
    let damp = Complex64::new((1.0 - infidelity).max(0.0).sqrt(), 0.0);
    let out = state.map_terms(|label, amp, out| match (outcome, label.atom(node)) {
        (SwapOutcome::Failed, Some(l)) if l == zero => out.push(label.clone(), amp),
        (SwapOutcome::Failed, _) => {}
        (SwapOutcome::Swapped, Some(l)) if l == zero => out.push(label.clone().with_atom(node, j), amp * damp),
        (SwapOutcome::Swapped, Some(l)) if l == j => out.push(label.clone().with_atom(node, zero), amp),
        (SwapOutcome::Swapped, _) => out.push(label.clone(), amp),
    });
    if out.norm_sqr() == 0.0 {
        return Ok(out);
    }
    Ok(out.normalized())
}

/// Weight of `node`'s level 0 relative to the whole state.
fn ground_weight(state: &HybridState, node: Node) -> f64 {
    let total = state.norm_sqr();
    if total == 0.0 {
        return 0.0;
    }
    let zero = Some(Level::Qudit(0));
    state.iter().filter(|(l, _)| l.atom(node) == zero).map(|(_, a)| a.norm_sqr()).sum::<f64>() / total
}

/// Swap pulse whose leftover branch fires with probability
/// `swap_infidelity × (level-0 weight)`.
pub fn swap_populations<R: Rng + ?Sized>(
    state: &HybridState,
    node: Node,
    level: u32,
    errors: &PulseErrorParams,
    rng: &mut R,
) -> Result<(HybridState, SwapOutcome)> {
    let eps = errors.swap_infidelity;
    let fired = rng.random::<f64>() < eps && rng.random::<f64>() < ground_weight(state, node);
    let outcome = if fired { SwapOutcome::Failed } else { SwapOutcome::Swapped };
    Ok((apply_swap(state, node, level, outcome, eps)?, outcome))
}

/// Presampled randomness for one node's train.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TrainPlan {
    pub collection: Collection,
    /// Bit `j` set: the swap after bin `j` may leave a leftover. It does so
    /// with probability equal to the level-0 weight at that point.
    pub swap_failures: u64,
}

/// Runs the full `d`-bin sequence for one node and returns its factor.
pub fn node_train<R: Rng + ?Sized>(
    node: Node,
    d: u32,
    params: &NodeParams,
    errors: &PulseErrorParams,
    plan: TrainPlan,
    rng: &mut R,
) -> Result<HybridState> {
    let mut state = prepare_superposition(node, d)?;
    for bin in 0..d {
        state = emission_step(&state, node, bin, params, errors, plan.collection, rng)?;
        if bin + 1 < d {
            let fired = plan.swap_failures >> bin & 1 == 1 && rng.random::<f64>() < ground_weight(&state, node);
            let outcome = if fired { SwapOutcome::Failed } else { SwapOutcome::Swapped };
            state = apply_swap(&state, node, bin + 1, outcome, errors.swap_infidelity)?;
        }
    }
    Ok(state)
}

/// Draws the possible leftover swaps among the `d−1` swaps of one train.
pub fn sample_swap_failures<R: Rng + ?Sized>(d: u32, errors: &PulseErrorParams, rng: &mut R) -> u64 {
    let mut mask = 0;
    for j in 0..d.saturating_sub(1) {
        if rng.random::<f64>() < errors.swap_infidelity {
            mask |= 1 << j;
        }
    }
    mask
}

/// Two-node state after both trains, with coherent loss and freshly sampled swap failures.
pub fn generate_photon_train<R: Rng + ?Sized>(
    a: &NodeParams,
    b: &NodeParams,
    errors: &PulseErrorParams,
    d: u32,
    rng: &mut R,
) -> Result<HybridState> {
    check_dimension(d)?;
    a.validate()?;
    b.validate()?;
    errors.validate()?;
    let mut factors = Vec::with_capacity(2);
    for (node, params) in [(Node::A, a), (Node::B, b)] {
        let swap_failures = sample_swap_failures(d, errors, rng);
        let plan = TrainPlan { collection: Collection::Coherent, swap_failures };
        factors.push(node_train(node, d, params, errors, plan, rng)?);
    }
    factors[0].tensor(&factors[1])
}

/// Level the atom sits in after emitting into `bin` on an ideal train.
pub fn advanced_level(bin: u32, d: u32) -> u32 {
    (bin + 1) % d
}

/// Wraps a phase into `(−π, π]`.
pub fn wrap_phase(x: f64) -> f64 {
    let y = x - 2.0 * PI * libm::floor((x + PI) / (2.0 * PI));
    if y <= -PI {
        y + 2.0 * PI
    } else {
        y
    }
}
