//! Discrete-event simulator for DAG-based proof-of-work networks.
//!
//! Miners either pick block transactions at random (honest) or by highest
//! fee (malicious). Runs write a CSV data file, a metadata file and a
//! progress log; the [`analysis`] module turns those into collision and
//! profit reports.

pub mod analysis;
pub mod engine;
pub mod formats;
pub mod mempool;
pub mod model;
pub mod output;
pub mod sweep;
pub mod topology_gen;

pub use mempool::{Mempool, MempoolError};
pub use model::{
    validate_config, Block, Link, MinerId, NodeSpec, RandomAccessVariant, SimConfig, Strategy,
    Topology, Transaction, Violation,
};
