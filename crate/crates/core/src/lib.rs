//! Privacy-preserving contact tracing over secret-shared location reports.
//!
//! Clients split their stay points into additive shares, one per tracing
//! server. Servers index the shares in a grid-partitioned tree and answer
//! contact queries with multi-party comparisons that reveal only whether
//! two records match.

pub mod analytics;
pub mod client;
pub mod error;
pub mod field;
pub mod grid;
pub mod harness;
pub mod mpc;
pub mod orchestrator;
pub mod registry;
pub mod server;
pub mod stats;
pub mod transport;

pub use error::{Error, Result};
pub use field::FieldElement;
