//! Sparse state vectors over the hybrid atomic/photonic basis.
//!
//! A [`HybridState`] is a flat map from [`BasisLabel`] to complex amplitude.
//! The reachable space in a two-node experiment is a few hundred labels at
//! most, so every operation simply rebuilds the map. States are values:
//! operations borrow `self` and return a new state.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::fmt;

use num_complex::Complex64;
#[allow(unused_imports)] // shadowed by inherent methods whenever std is linked
use num_traits::Float;
use rand::Rng;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::{Error, Result};

/// Amplitudes with magnitude below this are dropped from the map.
pub const DEFAULT_PRUNE: f64 = 1e-15;

/// Largest photon number held in one mode.
pub const MAX_OCCUPATION: u8 = 8;

/// Tolerance for the unitarity check of [`SubspaceUnitary`].
pub const UNITARY_TOLERANCE: f64 = 1e-10;

/// Tolerance on `‖ψ‖² − 1` accepted by [`HybridState::sample`].
pub const NORM_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Node {
    A,
    B,
}

impl Node {
    pub const BOTH: [Node; 2] = [Node::A, Node::B];

    pub fn other(self) -> Node {
        match self {
            Node::A => Node::B,
            Node::B => Node::A,
        }
    }
}

/// Internal level of one atom.
///
/// `X` and `Xp` are the ground and metastable error levels. Nothing maps
/// population out of them.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Level {
    Qudit(u8),
    X,
    Xp,
}

impl Level {
    pub fn is_error(self) -> bool {
        matches!(self, Level::X | Level::Xp)
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Level::Qudit(k) => write!(f, "{k}"),
            Level::X => f.write_str("X"),
            Level::Xp => f.write_str("X'"),
        }
    }
}

/// Optical port a photon occupies.
///
/// `LostA`/`LostB` hold photons absorbed between a node and the beamsplitter.
/// They are never detected, but keeping them in the label keeps trajectories
/// with different lost photons orthogonal.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Port {
    InA,
    InB,
    OutC,
    OutD,
    LostA,
    LostB,
}

impl Port {
    pub fn input(node: Node) -> Port {
        match node {
            Node::A => Port::InA,
            Node::B => Port::InB,
        }
    }

    pub fn lost(node: Node) -> Port {
        match node {
            Node::A => Port::LostA,
            Node::B => Port::LostB,
        }
    }

    pub fn is_input(self) -> bool {
        matches!(self, Port::InA | Port::InB)
    }

    pub fn is_output(self) -> bool {
        matches!(self, Port::OutC | Port::OutD)
    }

    /// Node a pre-beamsplitter photon came from.
    pub fn source(self) -> Option<Node> {
        match self {
            Port::InA | Port::LostA => Some(Node::A),
            Port::InB | Port::LostB => Some(Node::B),
            Port::OutC | Port::OutD => None,
        }
    }
}

/// Mode branch of a photon. Photons in different branches never interfere.
///
/// `Orthogonal` carries the mode-mismatched part of a wavepacket and `Pi`
/// carries photons from decays to `X` that leak through the polarization filter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum OverlapBranch {
    Matched,
    Orthogonal,
    Pi,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PhotonMode {
    pub time_bin: u8,
    pub port: Port,
    pub branch: OverlapBranch,
}

impl PhotonMode {
    pub fn new(time_bin: u8, port: Port, branch: OverlapBranch) -> Self {
        PhotonMode { time_bin, port, branch }
    }

    pub fn matched(time_bin: u8, port: Port) -> Self {
        PhotonMode::new(time_bin, port, OverlapBranch::Matched)
    }
}

pub type PhotonOcc = SmallVec<[(PhotonMode, u8); 4]>;

/// One basis vector: the level of each atom plus photon occupations.
///
/// An atom slot is `None` when the label belongs to a single-node factor that
/// does not describe that atom yet; [`HybridState::tensor`] fills it in.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BasisLabel {
    atom_a: Option<Level>,
    atom_b: Option<Level>,
    photons: PhotonOcc,
}

impl BasisLabel {
    pub fn atoms(a: Level, b: Level) -> Self {
        BasisLabel { atom_a: Some(a), atom_b: Some(b), photons: PhotonOcc::new() }
    }

    pub fn single(node: Node, level: Level) -> Self {
        let mut label = BasisLabel { atom_a: None, atom_b: None, photons: PhotonOcc::new() };
        label.set_atom(node, level);
        label
    }

    pub fn atom(&self, node: Node) -> Option<Level> {
        match node {
            Node::A => self.atom_a,
            Node::B => self.atom_b,
        }
    }

    pub fn set_atom(&mut self, node: Node, level: Level) {
        match node {
            Node::A => self.atom_a = Some(level),
            Node::B => self.atom_b = Some(level),
        }
    }

    pub fn with_atom(mut self, node: Node, level: Level) -> Self {
        self.set_atom(node, level);
        self
    }

    pub fn photons(&self) -> &[(PhotonMode, u8)] {
        &self.photons
    }

    pub fn photon_count(&self) -> u32 {
        self.photons.iter().map(|&(_, n)| u32::from(n)).sum()
    }

    pub fn occupation(&self, mode: PhotonMode) -> u8 {
        self.photons
            .binary_search_by(|(m, _)| m.cmp(&mode))
            .map(|i| self.photons[i].1)
            .unwrap_or(0)
    }

    /// Adds one photon to `mode`. Fails if the occupation would exceed [`MAX_OCCUPATION`].
    pub fn add_photon(&mut self, mode: PhotonMode) -> Result<()> {
        match self.photons.binary_search_by(|(m, _)| m.cmp(&mode)) {
            Ok(i) => {
                if self.photons[i].1 >= MAX_OCCUPATION {
                    return Err(Error::Occupation);
                }
                self.photons[i].1 += 1;
            }
            Err(i) => self.photons.insert(i, (mode, 1)),
        }
        Ok(())
    }

    pub fn with_photon(mut self, mode: PhotonMode) -> Result<Self> {
        self.add_photon(mode)?;
        Ok(self)
    }

    /// Label with the same atoms and no photons.
    pub fn atoms_only(&self) -> BasisLabel {
        BasisLabel { atom_a: self.atom_a, atom_b: self.atom_b, photons: PhotonOcc::new() }
    }

}

impl fmt::Display for BasisLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let show = |l: Option<Level>| match l {
            Some(l) => alloc::format!("{l}"),
            None => alloc::string::String::from("-"),
        };
        write!(f, "|{}{}⟩", show(self.atom_a), show(self.atom_b))?;
        for (mode, n) in &self.photons {
            write!(f, " {:?}{}{}", mode.port, mode.time_bin, if *n > 1 { "²" } else { "" })?;
            match mode.branch {
                OverlapBranch::Matched => {}
                OverlapBranch::Orthogonal => f.write_str("⊥")?,
                OverlapBranch::Pi => f.write_str("π")?,
            }
        }
        Ok(())
    }
}

/// Sink collecting the output terms of a linear map.
pub(crate) struct Terms {
    map: BTreeMap<BasisLabel, Complex64>,
}

impl Terms {
    pub(crate) fn new() -> Self {
        Terms { map: BTreeMap::new() }
    }

    pub(crate) fn push(&mut self, label: BasisLabel, amp: Complex64) {
        *self.map.entry(label).or_insert(Complex64::new(0.0, 0.0)) += amp;
    }
}

/// Pure state over [`BasisLabel`]s for qudit dimension `d`.
#[derive(Clone, Debug, PartialEq)]
pub struct HybridState {
    d: u8,
    prune: f64,
    amps: BTreeMap<BasisLabel, Complex64>,
}

/// Outcome of [`HybridState::project`]. `state` is `None` when nothing was selected.
#[derive(Clone, Debug)]
pub struct Projection {
    pub probability: f64,
    pub state: Option<HybridState>,
}

impl HybridState {
    pub fn empty(d: u32) -> Result<Self> {
        if !(1..=u8::MAX as u32).contains(&d) {
            return Err(Error::Dimension(d));
        }
        Ok(HybridState { d: d as u8, prune: DEFAULT_PRUNE, amps: BTreeMap::new() })
    }

    pub fn basis(d: u32, label: BasisLabel) -> Result<Self> {
        Self::from_terms(d, [(label, Complex64::new(1.0, 0.0))])
    }

    /// Sums the given terms (repeated labels accumulate) and prunes.
    pub fn from_terms(d: u32, terms: impl IntoIterator<Item = (BasisLabel, Complex64)>) -> Result<Self> {
        let mut out = Terms::new();
        for (label, amp) in terms {
            out.push(label, amp);
        }
        Ok(Self::empty(d)?.with_terms(out))
    }

    pub fn with_prune_threshold(mut self, threshold: f64) -> Self {
        self.prune = threshold;
        self.amps.retain(|_, a| a.norm() >= threshold);
        self
    }

    pub(crate) fn with_terms(&self, terms: Terms) -> Self {
        let prune = self.prune;
        let mut amps = terms.map;
        amps.retain(|_, a| a.norm() >= prune);
        HybridState { d: self.d, prune, amps }
    }

    /// Applies a linear map term by term.
    pub(crate) fn map_terms(&self, mut f: impl FnMut(&BasisLabel, Complex64, &mut Terms)) -> Self {
        let mut out = Terms::new();
        for (label, &amp) in &self.amps {
            f(label, amp, &mut out);
        }
        self.with_terms(out)
    }

    pub(crate) fn try_map_terms(
        &self,
        mut f: impl FnMut(&BasisLabel, Complex64, &mut Terms) -> Result<()>,
    ) -> Result<Self> {
        let mut out = Terms::new();
        for (label, &amp) in &self.amps {
            f(label, amp, &mut out)?;
        }
        Ok(self.with_terms(out))
    }

    pub fn d(&self) -> u32 {
        u32::from(self.d)
    }

    pub fn len(&self) -> usize {
        self.amps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amps.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&BasisLabel, &Complex64)> {
        self.amps.iter()
    }

    pub fn labels(&self) -> impl Iterator<Item = &BasisLabel> {
        self.amps.keys()
    }

    pub fn amplitude(&self, label: &BasisLabel) -> Complex64 {
        self.amps.get(label).copied().unwrap_or_default()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.values().map(|a| a.norm_sqr()).sum()
    }

    pub fn normalized(&self) -> Self {
        let n = self.norm_sqr();
        if n == 0.0 {
            return self.clone();
        }
        let s = 1.0 / n.sqrt();
        self.map_terms(|l, a, out| out.push(l.clone(), a * s))
    }

    /// Multiplies every amplitude by `factor`.
    pub fn scaled(&self, factor: Complex64) -> Self {
        self.map_terms(|l, a, out| out.push(l.clone(), a * factor))
    }

    /// `⟨self|other⟩`.
    pub fn inner(&self, other: &HybridState) -> Complex64 {
        self.amps.iter().map(|(l, a)| a.conj() * other.amplitude(l)).sum()
    }

    pub fn apply_unitary(&self, op: &SubspaceUnitary) -> Result<Self> {
        for level in &op.levels {
            if let Level::Qudit(k) = level {
                if *k >= self.d {
                    return Err(Error::param("levels", alloc::format!("level {k} outside d = {}", self.d)));
                }
            }
        }
        let k = op.levels.len();
        Ok(self.map_terms(|label, amp, out| {
            let col = label.atom(op.node).and_then(|l| op.levels.iter().position(|&x| x == l));
            match col {
                None => out.push(label.clone(), amp),
                Some(j) => {
                    for (i, &level) in op.levels.iter().enumerate() {
                        let m = op.matrix[i * k + j];
                        if m != Complex64::new(0.0, 0.0) {
                            out.push(label.clone().with_atom(op.node, level), m * amp);
                        }
                    }
                }
            }
        }))
    }

    /// Projects onto the labels selected by `keep` and renormalizes.
    pub fn project(&self, keep: impl Fn(&BasisLabel) -> bool) -> Projection {
        let mut kept = BTreeMap::new();
        let mut probability = 0.0;
        for (label, &amp) in &self.amps {
            if keep(label) {
                probability += amp.norm_sqr();
                kept.insert(label.clone(), amp);
            }
        }
        if probability == 0.0 || kept.is_empty() {
            return Projection { probability: 0.0, state: None };
        }
        let s = 1.0 / probability.sqrt();
        for a in kept.values_mut() {
            *a *= s;
        }
        Projection { probability, state: Some(HybridState { d: self.d, prune: self.prune, amps: kept }) }
    }

    /// Draws a label with probability `|amp|²`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<BasisLabel> {
        let norm_sqr = self.norm_sqr();
        if (norm_sqr - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::Unnormalized { norm_sqr });
        }
        let u: f64 = rng.random::<f64>() * norm_sqr;
        let mut acc = 0.0;
        let mut last = None;
        for (label, amp) in &self.amps {
            acc += amp.norm_sqr();
            last = Some(label);
            if u < acc {
                return Ok(label.clone());
            }
        }
        last.cloned().ok_or(Error::Unnormalized { norm_sqr })
    }

    /// Tensor product of two factors that describe disjoint atoms and photon modes.
    pub fn tensor(&self, other: &HybridState) -> Result<Self> {
        if self.d != other.d {
            return Err(Error::Dimension(other.d()));
        }
        let mut out = Terms::new();
        for (l1, &a1) in &self.amps {
            for (l2, &a2) in &other.amps {
                let mut label = l1.clone();
                for node in Node::BOTH {
                    match (l1.atom(node), l2.atom(node)) {
                        (Some(_), Some(_)) => return Err(Error::TensorOverlap),
                        (None, Some(level)) => label.set_atom(node, level),
                        _ => {}
                    }
                }
                for &(mode, n) in l2.photons() {
                    if l1.occupation(mode) > 0 {
                        return Err(Error::TensorOverlap);
                    }
                    for _ in 0..n {
                        label.add_photon(mode)?;
                    }
                }
                out.push(label, a1 * a2);
            }
        }
        Ok(self.with_terms(out))
    }

    /// Squared overlap of the atomic reduced state with an atoms-only target,
    /// `⟨t|ρ_atoms|t⟩`. Photon configurations are traced out.
    pub fn atomic_fidelity(&self, target: &HybridState) -> f64 {
        let mut by_photons: BTreeMap<PhotonOcc, Complex64> = BTreeMap::new();
        for (label, &amp) in &self.amps {
            let t = target.amplitude(&label.atoms_only());
            if t != Complex64::new(0.0, 0.0) {
                *by_photons.entry(label.photons.clone()).or_default() += t.conj() * amp;
            }
        }
        by_photons.values().map(|c| c.norm_sqr()).sum::<f64>() / self.norm_sqr()
    }

    /// Probability mass on each joint atomic configuration.
    pub fn atomic_populations(&self) -> BTreeMap<(Option<Level>, Option<Level>), f64> {
        let mut out = BTreeMap::new();
        for (label, amp) in &self.amps {
            *out.entry((label.atom_a, label.atom_b)).or_insert(0.0) += amp.norm_sqr();
        }
        out
    }
}

/// Unitary acting on a named subspace of atomic levels of one node.
///
/// `matrix` is row-major over `levels`: the amplitude landing on `levels[i]`
/// is `Σ_j matrix[i·k + j] · amp(levels[j])`.
#[derive(Clone, Debug, PartialEq)]
pub struct SubspaceUnitary {
    node: Node,
    levels: SmallVec<[Level; 4]>,
    matrix: Vec<Complex64>,
}

impl SubspaceUnitary {
    pub fn new(node: Node, levels: &[Level], matrix: Vec<Complex64>) -> Result<Self> {
        let k = levels.len();
        if k == 0 || matrix.len() != k * k {
            return Err(Error::param("matrix", "must be square over the listed levels"));
        }
        for (i, a) in levels.iter().enumerate() {
            if levels[..i].contains(a) {
                return Err(Error::param("levels", "levels must be distinct"));
            }
        }
        let defect = unitarity_defect(&matrix, k);
        if defect > UNITARY_TOLERANCE {
            return Err(Error::NotUnitary { defect });
        }
        Ok(SubspaceUnitary { node, levels: levels.into(), matrix })
    }

    /// Resonant rotation by `theta` with phase `phi` between `l0` and `l1`.
    pub fn rotation(node: Node, l0: Level, l1: Level, theta: f64, phi: f64) -> Self {
        let c = Complex64::new((theta / 2.0).cos(), 0.0);
        let s = (theta / 2.0).sin();
        let minus_i = Complex64::new(0.0, -1.0);
        let matrix = alloc::vec![
            c,
            minus_i * Complex64::from_polar(s, -phi),
            minus_i * Complex64::from_polar(s, phi),
            c,
        ];
        SubspaceUnitary { node, levels: SmallVec::from_slice(&[l0, l1]), matrix }
    }

    /// Permutation exchanging two levels.
    pub fn exchange(node: Node, l0: Level, l1: Level) -> Self {
        let one = Complex64::new(1.0, 0.0);
        let zero = Complex64::new(0.0, 0.0);
        SubspaceUnitary { node, levels: SmallVec::from_slice(&[l0, l1]), matrix: alloc::vec![zero, one, one, zero] }
    }

    pub fn node(&self) -> Node {
        self.node
    }

    pub fn levels(&self) -> &[Level] {
        &self.levels
    }

    pub fn matrix(&self) -> &[Complex64] {
        &self.matrix
    }
}

/// `max |(U†U − I)_ij|` for a row-major `k×k` matrix.
pub fn unitarity_defect(m: &[Complex64], k: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..k {
        for j in 0..k {
            let mut s = Complex64::new(0.0, 0.0);
            for r in 0..k {
                s += m[r * k + i].conj() * m[r * k + j];
            }
            if i == j {
                s -= 1.0;
            }
            worst = worst.max(s.norm());
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use core::f64::consts::{FRAC_1_SQRT_2, PI};
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn q(k: u8) -> Level {
        Level::Qudit(k)
    }

    fn plus(a: BasisLabel, b: BasisLabel) -> HybridState {
        HybridState::from_terms(4, [(a, c(FRAC_1_SQRT_2, 0.0)), (b, c(FRAC_1_SQRT_2, 0.0))]).unwrap()
    }

    /// Dense oracle: the full basis spanned by the state's labels with node A's
    /// level replaced by every level of the op's subspace.
    fn dense_apply(state: &HybridState, op: &SubspaceUnitary) -> BTreeMap<BasisLabel, Complex64> {
        let mut basis: Vec<BasisLabel> = Vec::new();
        for label in state.labels() {
            basis.push(label.clone());
            if label.atom(op.node()).is_some_and(|l| op.levels().contains(&l)) {
                for &l in op.levels() {
                    basis.push(label.clone().with_atom(op.node(), l));
                }
            }
        }
        basis.sort();
        basis.dedup();
        let n = basis.len();
        let k = op.levels().len();
        let mut matrix = vec![c(0.0, 0.0); n * n];
        for (col, from) in basis.iter().enumerate() {
            for (row, to) in basis.iter().enumerate() {
                let same_rest = from.clone().with_atom(op.node(), q(0)) == to.clone().with_atom(op.node(), q(0));
                let fi = from.atom(op.node()).and_then(|l| op.levels().iter().position(|&x| x == l));
                let ti = to.atom(op.node()).and_then(|l| op.levels().iter().position(|&x| x == l));
                matrix[row * n + col] = match (fi, ti) {
                    (Some(j), Some(i)) if same_rest => op.matrix()[i * k + j],
                    (None, None) if from == to => c(1.0, 0.0),
                    _ => c(0.0, 0.0),
                };
            }
        }
        let v: Vec<Complex64> = basis.iter().map(|l| state.amplitude(l)).collect();
        let mut out = BTreeMap::new();
        for row in 0..n {
            let s: Complex64 = (0..n).map(|col| matrix[row * n + col] * v[col]).sum();
            if s.norm() > 1e-15 {
                out.insert(basis[row].clone(), s);
            }
        }
        out
    }

    #[test]
    fn identity_leaves_state_alone() {
        let s = plus(BasisLabel::atoms(q(0), q(1)), BasisLabel::atoms(q(2), q(3)));
        let id = SubspaceUnitary::new(Node::A, &[q(0), q(2)], vec![c(1., 0.), c(0., 0.), c(0., 0.), c(1., 0.)]).unwrap();
        assert_eq!(s.apply_unitary(&id).unwrap(), s);
    }

    #[test]
    fn two_half_pi_pulses_transfer_population() {
        let s = HybridState::basis(2, BasisLabel::atoms(q(0), q(0))).unwrap();
        let r = SubspaceUnitary::rotation(Node::A, q(0), q(1), PI / 2.0, 0.3);
        let out = s.apply_unitary(&r).unwrap().apply_unitary(&r).unwrap();
        let p1 = out.amplitude(&BasisLabel::atoms(q(1), q(0))).norm_sqr();
        assert!((p1 - 1.0).abs() < 1e-12);
        assert!(out.amplitude(&BasisLabel::atoms(q(0), q(0))).norm() < 1e-12);
    }

    #[test]
    fn random_unitary_matches_dense_oracle() {
        // U = e^{iα} [[e^{iβ} cos t, e^{iγ} sin t], [−e^{−iγ} sin t, e^{−iβ} cos t]]
        let (alpha, beta, gamma, t) = (0.4_f64, 1.1_f64, -0.7_f64, 0.9_f64);
        let g = Complex64::from_polar(1.0, alpha);
        let u = vec![
            g * Complex64::from_polar(t.cos(), beta),
            g * Complex64::from_polar(t.sin(), gamma),
            -g * Complex64::from_polar(t.sin(), -gamma),
            g * Complex64::from_polar(t.cos(), -beta),
        ];
        let op = SubspaceUnitary::new(Node::A, &[q(1), q(3)], u).unwrap();
        let photon = PhotonMode::matched(2, Port::InA);
        let s = HybridState::from_terms(
            4,
            [
                (BasisLabel::atoms(q(1), q(0)), c(0.6, 0.0)),
                (BasisLabel::atoms(q(3), q(2)).with_photon(photon).unwrap(), c(0.0, 0.48)),
                (BasisLabel::atoms(q(2), q(2)), c(0.64, 0.0)),
            ],
        )
        .unwrap();
        let fast = s.apply_unitary(&op).unwrap();
        let dense = dense_apply(&s, &op);
        assert_eq!(fast.len(), dense.len());
        for (label, amp) in &dense {
            assert!((fast.amplitude(label) - amp).norm() < 1e-10, "{label}");
        }
        assert!((fast.norm_sqr() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn non_unitary_rejected_with_defect() {
        let err = SubspaceUnitary::new(Node::B, &[q(0), q(1)], vec![c(1., 0.), c(0.1, 0.), c(0., 0.), c(1., 0.)])
            .unwrap_err();
        match err {
            Error::NotUnitary { defect } => assert!(defect > 0.05 && defect < 0.2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn project_half_and_full() {
        let a = BasisLabel::atoms(q(0), q(1));
        let b = BasisLabel::atoms(q(1), q(0));
        let s = plus(a.clone(), b.clone());
        let p = s.project(|l| *l == a);
        assert!((p.probability - 0.5).abs() < 1e-15);
        let st = p.state.unwrap();
        assert_eq!(st.len(), 1);
        assert!((st.amplitude(&a) - c(1.0, 0.0)).norm() < 1e-15);

        let full = s.project(|_| true);
        assert!((full.probability - 1.0).abs() < 1e-12);
        assert_eq!(full.state.unwrap(), s);

        let none = s.project(|_| false);
        assert_eq!(none.probability, 0.0);
        assert!(none.state.is_none());
    }

    #[test]
    fn sample_single_and_replay() {
        let a = BasisLabel::atoms(q(2), q(3));
        let s = HybridState::basis(4, a.clone()).unwrap();
        let mut rng = crate::rng_stream(1, 0);
        for _ in 0..100 {
            assert_eq!(s.sample(&mut rng).unwrap(), a);
        }
        let s = plus(BasisLabel::atoms(q(0), q(1)), a);
        let run = |seed| {
            let mut rng = crate::RngStream::seed_from_u64(seed);
            (0..64).map(|_| s.sample(&mut rng).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(run(9), run(9));
    }

    #[test]
    fn sample_frequencies_binomial() {
        let a = BasisLabel::atoms(q(0), q(1));
        let s = plus(a.clone(), BasisLabel::atoms(q(1), q(0)));
        let mut rng = crate::rng_stream(42, 0);
        let n = 100_000;
        let hits = (0..n).filter(|_| s.sample(&mut rng).unwrap() == a).count() as f64;
        let sigma = (n as f64 * 0.25).sqrt();
        assert!((hits - 0.5 * n as f64).abs() < 5.0 * sigma);
    }

    #[test]
    fn sample_rejects_unnormalized() {
        let s = HybridState::from_terms(2, [(BasisLabel::atoms(q(0), q(0)), c(0.5, 0.0))]).unwrap();
        let mut rng = crate::rng_stream(0, 0);
        assert!(matches!(s.sample(&mut rng), Err(Error::Unnormalized { .. })));
    }

    #[test]
    fn pruning_drops_tiny_amplitudes() {
        let s = HybridState::from_terms(
            2,
            [(BasisLabel::atoms(q(0), q(0)), c(1.0, 0.0)), (BasisLabel::atoms(q(1), q(0)), c(1e-16, 0.0))],
        )
        .unwrap();
        assert_eq!(s.len(), 1);
    }

    #[test]
    fn tensor_rejects_overlap_and_composes() {
        let a = HybridState::basis(2, BasisLabel::single(Node::A, q(1))).unwrap();
        let b = HybridState::basis(2, BasisLabel::single(Node::B, q(0))).unwrap();
        let ab = a.tensor(&b).unwrap();
        assert_eq!(ab.labels().next().unwrap(), &BasisLabel::atoms(q(1), q(0)));
        assert_eq!(a.tensor(&a).unwrap_err(), Error::TensorOverlap);
    }

    #[test]
    fn occupation_is_capped() {
        let mode = PhotonMode::matched(0, Port::OutC);
        let mut l = BasisLabel::atoms(q(0), q(0));
        for _ in 0..MAX_OCCUPATION {
            l.add_photon(mode).unwrap();
        }
        assert_eq!(l.occupation(mode), MAX_OCCUPATION);
        assert_eq!(l.with_photon(mode).unwrap_err(), Error::Occupation);
    }

    fn arb_state() -> impl Strategy<Value = HybridState> {
        prop::collection::vec((0u8..4, 0u8..4, -1.0f64..1.0, -1.0f64..1.0), 1..12).prop_filter_map(
            "nonzero",
            |terms| {
                let s = HybridState::from_terms(
                    4,
                    terms.into_iter().map(|(a, b, re, im)| (BasisLabel::atoms(q(a), q(b)), c(re, im))),
                )
                .ok()?;
                (s.norm_sqr() > 1e-6).then(|| s.normalized())
            },
        )
    }

    proptest! {
        #[test]
        fn rotations_conserve_norm(
            state in arb_state(),
            ops in prop::collection::vec((any::<bool>(), 0u8..4, 0u8..4, -PI..PI, -PI..PI), 1..20),
        ) {
            let mut s = state;
            let mut count = 0usize;
            for (node_a, l0, l1, theta, phi) in ops {
                if l0 == l1 { continue; }
                let node = if node_a { Node::A } else { Node::B };
                s = s.apply_unitary(&SubspaceUnitary::rotation(node, q(l0), q(l1), theta, phi)).unwrap();
                count += 1;
            }
            prop_assert!((s.norm_sqr() - 1.0).abs() < 1e-12 * (count.max(1) as f64));
        }

        #[test]
        fn projections_of_partition_sum_to_one(state in arb_state(), cut in 0u8..4) {
            let p0 = state.project(|l| l.atom(Node::A) < Some(q(cut))).probability;
            let p1 = state.project(|l| l.atom(Node::A) >= Some(q(cut))).probability;
            prop_assert!((p0 + p1 - 1.0).abs() < 1e-12);
        }
    }
}
