//! Simulation and analysis of heralded entanglement between two remote atomic
//! qudit memories linked by time-bin encoded photons.
//!
//! The crate is `no_std` and only needs `alloc`. Everything here is pure
//! computation over explicit random streams; file formats, configuration
//! parsing and the command line live in the `qudit-net` companion crate.
//!
//! Layout:
//!
//! * [`statevec`]: sparse complex amplitudes over the hybrid atom/photon basis.
//! * [`protocol`]: superposition preparation, emission and swap pulses, photon trains.
//! * [`interference`]: beamsplitter, herald classification, success fraction.
//! * [`noise`]: field drift, Zeeman sensitivities, dephasing, background counts.
//! * [`experiment`]: attempt loop, campaigns, parity scans and the event log.
//! * [`analysis`]: populations, parity fits, fidelity, field fits and rephasing.
//! * [`ratemodel`]: efficiency budgets and entanglement-rate modeling.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod analysis;
pub mod error;
pub mod experiment;
pub mod interference;
pub mod noise;
pub mod protocol;
pub mod ratemodel;
pub mod stats;
pub mod statevec;

pub use error::{Error, Result};

/// Random stream used throughout the simulator.
pub type RngStream = rand_chacha::ChaCha8Rng;

/// Builds the random stream for `(seed, stream)`. Distinct stream ids give
/// independent substreams of the same seed.
pub fn rng_stream(seed: u64, stream: u64) -> RngStream {
    use rand::SeedableRng;
    let mut rng = RngStream::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
