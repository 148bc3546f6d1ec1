//! Benchmark fixtures shared by the criterion benches.

use evrecon_core::sim::{SimConfig, SimulatedSequence};

/// The default two-plane sequence used by every benchmark.
pub fn sequence() -> SimulatedSequence {
    SimulatedSequence::generate(&SimConfig::two_plane(1)).expect("default scene simulates")
}
