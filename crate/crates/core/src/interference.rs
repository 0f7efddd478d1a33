//! Beamsplitter, detection patterns and herald classification.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use num_complex::Complex64;
#[allow(unused_imports)] // shadowed by inherent methods whenever std is linked
use num_traits::Float;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::protocol::{advanced_level, check_dimension, generate_photon_train, NodeParams, PulseErrorParams};
use crate::statevec::{BasisLabel, HybridState, Level, Node, PhotonMode, Port};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn symbol(self) -> char {
        match self {
            Sign::Plus => '+',
            Sign::Minus => '-',
        }
    }

    pub fn flipped(self) -> Sign {
        match self {
            Sign::Plus => Sign::Minus,
            Sign::Minus => Sign::Plus,
        }
    }
}

/// Entangled state announced by a two-click pattern in bins `n < m`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BellLabel {
    pub n: u32,
    pub m: u32,
    pub sign: Sign,
    /// `(n+1 mod d, m+1 mod d)`: the levels the atoms end up in.
    pub atomic_pair: (u32, u32),
}

impl BellLabel {
    pub fn new(n: u32, m: u32, sign: Sign, d: u32) -> Result<Self> {
        if n >= m || m >= d {
            return Err(Error::Detections(alloc::format!("bins ({n}, {m}) invalid for d = {d}")));
        }
        Ok(BellLabel { n, m, sign, atomic_pair: (advanced_level(n, d), advanced_level(m, d)) })
    }

    /// All `d² − d` labels for dimension `d`.
    pub fn all(d: u32) -> Vec<BellLabel> {
        let mut out = Vec::new();
        for n in 0..d {
            for m in n + 1..d {
                for sign in [Sign::Plus, Sign::Minus] {
                    out.push(BellLabel { n, m, sign, atomic_pair: (advanced_level(n, d), advanced_level(m, d)) });
                }
            }
        }
        out
    }

    /// State name such as `|23⟩+|32⟩`, written with the atomic levels.
    pub fn state_name(&self) -> alloc::string::String {
        let (a, b) = self.atomic_pair;
        alloc::format!("|{a}{b}⟩{}|{b}{a}⟩", self.sign.symbol())
    }

    pub fn bin_gap(&self) -> u32 {
        self.m - self.n
    }
}

/// One detector click.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Detection {
    pub time_bin: u32,
    pub port: Port,
}

/// Result of classifying a two-click pattern.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Herald {
    Bell(BellLabel),
    /// Both clicks in one time bin: no entanglement.
    SameBin,
}

/// Applies the 50:50 beamsplitter to every photon on an input port.
///
/// `a† → (c† + d†)/√2`, `b† → (c† − d†)/√2`, mode by mode within each time bin
/// and branch. Photons on lost ports pass through.
pub fn beamsplit(state: &HybridState) -> Result<HybridState> {
    let h = core::f64::consts::FRAC_1_SQRT_2;
    state.try_map_terms(|label, amp, out| {
        let mut rest = label.atoms_only();
        let mut inputs: SmallVec<[(PhotonMode, f64); 4]> = SmallVec::new();
        let mut norm = 1.0;
        for &(mode, count) in label.photons() {
            if mode.port.is_output() {
                return Err(Error::AlreadySplit);
            }
            if mode.port.is_input() {
                let sign = if mode.port == Port::InA { 1.0 } else { -1.0 };
                for _ in 0..count {
                    inputs.push((mode, sign));
                }
                norm /= factorial(count).sqrt();
            } else {
                for _ in 0..count {
                    rest.add_photon(mode)?;
                }
            }
        }
        let k = inputs.len();
        let spread = h.powi(k as i32);
        for choice in 0u32..1 << k {
            let mut target = rest.clone();
            let mut coeff = norm * spread;
            for (i, &(mode, sign)) in inputs.iter().enumerate() {
                let to_d = choice >> i & 1 == 1;
                let port = if to_d { Port::OutD } else { Port::OutC };
                if to_d {
                    coeff *= sign;
                }
                target.add_photon(PhotonMode::new(mode.time_bin, port, mode.branch))?;
            }
            for &(mode, count) in target.photons() {
                if mode.port.is_output() {
                    coeff *= factorial(count).sqrt();
                }
            }
            out.push(target, amp * coeff);
        }
        Ok(())
    })
}

fn factorial(n: u8) -> f64 {
    (1..=u32::from(n)).map(f64::from).product()
}

/// Clicks produced by a basis label: one per `(bin, output port)` with any photon in it.
pub fn detections(label: &BasisLabel) -> Vec<Detection> {
    let set: BTreeSet<Detection> = label
        .photons()
        .iter()
        .filter(|(m, _)| m.port.is_output())
        .map(|(m, _)| Detection { time_bin: u32::from(m.time_bin), port: m.port })
        .collect();
    set.into_iter().collect()
}

/// Maps a two-click pattern to a Bell label or a same-bin discard.
pub fn classify_herald(clicks: &[Detection], d: u32) -> Result<Herald> {
    let [a, b] = clicks else {
        return Err(Error::Detections(alloc::format!("expected 2 clicks, got {}", clicks.len())));
    };
    for c in [a, b] {
        if !c.port.is_output() || c.time_bin >= d {
            return Err(Error::Detections(alloc::format!("click {c:?} is not a valid output record")));
        }
    }
    if a == b {
        return Err(Error::Detections("duplicate click".into()));
    }
    if a.time_bin == b.time_bin {
        return Ok(Herald::SameBin);
    }
    let (first, second) = if a.time_bin < b.time_bin { (a, b) } else { (b, a) };
    let sign = if first.port == second.port { Sign::Plus } else { Sign::Minus };
    Ok(Herald::Bell(BellLabel::new(first.time_bin, second.time_bin, sign, d)?))
}

/// Fraction of two-photon input patterns that herald entanglement, `1 − 1/d`.
pub fn success_fraction(d: u32) -> f64 {
    if d == 0 {
        return 0.0;
    }
    1.0 - 1.0 / d as f64
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HeraldCensus {
    /// Distinct Bell labels reached with nonzero probability.
    pub entangled_states: u32,
    /// Input bin pairs `(j_A, j_B)` with `j_A = j_B`.
    pub discarded_inputs: u32,
    pub total_inputs: u32,
    /// Probability that the ideal lossless interferometer output heralds a Bell label.
    pub entangling_mass: f64,
}

/// Exhaustive expansion of the ideal lossless two-node state through the beamsplitter.
pub fn enumerate_heralds(d: u32) -> Result<HeraldCensus> {
    check_dimension(d)?;
    let mut rng = crate::rng_stream(0, 0);
    let ideal = NodeParams::ideal();
    let train = generate_photon_train(&ideal, &ideal, &PulseErrorParams::none(), d, &mut rng)?;

    let mut inputs = BTreeSet::new();
    for label in train.labels() {
        let bin_of = |node| {
            label.photons().iter().find(|(m, _)| m.port == Port::input(node)).map(|(m, _)| m.time_bin)
        };
        inputs.insert((bin_of(Node::A), bin_of(Node::B)));
    }
    let discarded_inputs = inputs.iter().filter(|(a, b)| a == b).count() as u32;

    let split = beamsplit(&train)?;
    let mut mass: BTreeMap<BellLabel, f64> = BTreeMap::new();
    for (label, amp) in split.iter() {
        let clicks = detections(label);
        if clicks.len() == 2 {
            if let Herald::Bell(bell) = classify_herald(&clicks, d)? {
                *mass.entry(bell).or_insert(0.0) += amp.norm_sqr();
            }
        }
    }
    Ok(HeraldCensus {
        entangled_states: mass.values().filter(|&&p| p > 0.0).count() as u32,
        discarded_inputs,
        total_inputs: inputs.len() as u32,
        entangling_mass: mass.values().sum(),
    })
}

/// Projects a post-beamsplitter state onto the labels producing exactly `clicks`.
///
/// Photons stay in the returned labels as a record of undetected which-path
/// information; [`HybridState::atomic_fidelity`] traces them out. `None` when
/// the pattern has zero probability.
pub fn post_herald_state(state: &HybridState, clicks: &[Detection]) -> Option<(f64, HybridState)> {
    let mut wanted: Vec<Detection> = clicks.to_vec();
    wanted.sort();
    let projection = state.project(|l| detections(l) == wanted);
    projection.state.map(|s| (projection.probability, s))
}

/// `(|n'⟩_A|m'⟩_B ± e^{iθ}|m'⟩_A|n'⟩_B)/√2` for the label's atomic pair.
pub fn ideal_bell_state(label: &BellLabel, d: u32, theta: f64) -> Result<HybridState> {
    let (np, mp) = label.atomic_pair;
    let h = core::f64::consts::FRAC_1_SQRT_2;
    let sign = match label.sign {
        Sign::Plus => 1.0,
        Sign::Minus => -1.0,
    };
    let q = |k: u32| Level::Qudit(k as u8);
    HybridState::from_terms(
        d,
        [
            (BasisLabel::atoms(q(np), q(mp)), Complex64::new(h, 0.0)),
            (BasisLabel::atoms(q(mp), q(np)), Complex64::from_polar(sign * h, theta)),
        ],
    )
}
