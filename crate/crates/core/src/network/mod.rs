//! Multihop sessions, the eavesdropper's view, and session sum-rates.

pub mod lp;
pub mod observe;
pub mod rates;
pub mod sim;
pub mod topology;

pub use observe::{observe, observe_single, Observation};
pub use rates::{
    covert_sum_rate, covert_sum_rate_with, max_sum_rate_visible, CovertParams, CovertRates,
    EpsCache, EpsMode, VisibleRates,
};
pub use sim::{simulate_session, simulate_with_rates, RelayStats, SessionSim, SimConfig};
pub use topology::{
    builtin, switching_network, CovertSet, Network, Path, Session, SessionPrior, Topology,
};
