//! Anonymous scheduling: Poisson transmission schedules, delay-constrained
//! covert relaying, equivocation over multihop sessions, and the
//! throughput/anonymity tradeoff.

pub mod analytic;
pub mod anonymity;
pub mod error;
pub mod experiments;
pub mod network;
pub mod point_process;
pub mod relay;
pub mod stats;

pub use error::{Error, Result};
pub use point_process::{NodeId, Schedule};
