//! Epoch-synchronized Byzantine fault tolerant state machine replication.
//!
//! Replicas advance through epochs of f+1 views, paying O(n²) messages only
//! once per epoch to resynchronize and O(n) per view otherwise. The crate also
//! contains a deterministic partial-synchrony simulator, an adversary library,
//! and trace-driven complexity metrics.

pub mod adversary;
pub mod ba;
pub mod crypto;
pub mod harness;
pub mod message;
pub mod metrics;
pub mod replica;
pub mod sim;
pub mod super_epoch;
pub mod types;
pub mod verify;
pub mod wire;
