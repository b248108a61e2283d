//! Equivocation-based anonymity, covert relay selection, and the
//! throughput/anonymity tradeoff.

pub mod measure;
pub mod rd;
pub mod select;
pub mod tradeoff;

pub use measure::{
    anonymity_of, anonymity_of_policy, entropy, entropy_bits, fano_bound, CovertPolicy,
};
pub use rd::{
    blahut_arimoto, distortion_matrix, expectation, subsets, BaOptions, BaSolution,
    DistortionMatrix, RateTable,
};
pub use select::{
    best_among, best_deterministic, convex_hull_deterministic, deterministic_points,
    DeterministicPoint, Hull, DEFAULT_RELAY_CAP,
};
pub use tradeoff::{tradeoff_curve, CurvePoint, PointStatus, TradeoffCurve};
