//! Deterministic time-frame simulation over the bulletin board.

pub mod adversary;
pub mod config;
pub mod run;
pub mod sim;
pub mod topology;

pub use adversary::{adversary_grind, GrindSession};
pub use config::{
    layer_count, payload, AdversarySpec, ConfigError, Fault, FaultTarget, MixBehavior, MixSpec, Phase, ReBehavior,
    TimeFrameConfig,
};
pub use run::{
    party_rng, run_in, run_timeframe, Delivery, EngineError, LayerStats, Outcome, TimeFrameResult, VerdictRecord,
};
pub use sim::{CaptureCount, RouteSim};
pub use topology::{build_topology, LayerTopology, TopologyError, TopologyMix};
