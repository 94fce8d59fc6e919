//! Spatially aware Bloom-filter encoding of IP flow spaces, and a reactive
//! SDN flow-table simulator whose eviction can be steered by a DQN agent
//! acting on perturbed Bloom-filter states.

pub mod bloom;
pub mod dqn;
pub mod eviction;
pub mod flowspace;
pub mod lab;
pub mod metrics;
pub mod seed;
pub mod sim;
pub mod trace;

pub use bloom::{compute_size, BitArray, BloomError, BloomFilter, BloomParams, ChunkedState};
pub use dqn::{AgentConfig, DqnAgent, DqnError, QNetwork, Transition, NUM_ACTIONS};
pub use eviction::{DecisionRecord, EvictMode, EvictionAgent, FixedActionAgent};
pub use lab::{Experiment, LabConfig};
pub use metrics::{normalized_miss_rate, RunSummary};
pub use flowspace::{make_flow_id, FlowError, FlowId, LocalityWindow, SortedFlowSpace};
pub use sim::{run_simulation, Policy, SimConfig, SimError, SimOutcome, SimStats};
pub use trace::{Packet, Trace, TraceError};
