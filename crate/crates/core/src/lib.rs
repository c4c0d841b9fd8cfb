//! Deterministic desk-scale simulation of a distributed IoT gateway built
//! from NFV and SDN pieces: gateway functions run as VNF instances on
//! capable devices, application-level SDN switches steer flows through them
//! along labeled chains, two P2P overlays carry data and signaling, and a
//! MANO-style orchestrator provisions the whole thing behind a resource API.
//!
//! Everything runs in simulated ticks on a single-threaded event loop, so a
//! `(config, seed)` pair fully determines the event log and every metric.

pub mod agents;
pub mod control;
pub mod fabric;
pub mod model;
pub mod orchestrator;
pub mod overlay;
pub mod sim;
pub mod vnf;

pub use model::{
    Aggregation, AppRequirements, Body, CanonicalRecord, ChainId, ChainSpec, DeviceClass,
    DeviceDescriptor, DeviceProps, Envelope, InfoModelKind, ProtocolKind, Tick,
    decode_envelope, encode_envelope, validate_descriptor,
};
pub use vnf::{DaConfig, DaMode, VnfFamily, VnfKind};
