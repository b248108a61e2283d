use std::io;

use thiserror::Error;

use crate::point_process::NodeId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid generator spec: {0}")]
    InvalidSpec(String),

    #[error("rate is undefined for an empty schedule")]
    EmptySchedule,

    #[error("schedule for node {0} is not strictly increasing or has a negative epoch")]
    UnsortedSchedule(NodeId),

    #[error("no rate bound declared for node {0}")]
    MissingBound(NodeId),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid topology: {0}")]
    InvalidTopology(String),

    #[error("invalid path {path}: {reason}")]
    InvalidPath { path: String, reason: String },

    #[error("invalid session prior: {0}")]
    InvalidPrior(String),

    #[error("session contains a forwarding cycle through {0}")]
    ForwardingCycle(NodeId),

    #[error("{count} candidate relays exceed the enumeration cap of {cap}")]
    TooManyRelays { count: usize, cap: usize },

    #[error(
        "anonymity {target} is not attainable; the best any covert subset reaches is {max_alpha}"
    )]
    Infeasible { target: f64, max_alpha: f64 },

    #[error(
        "observation of session {session} is produced by two covert sets ({first} and {second})"
    )]
    NonUniqueCover {
        session: String,
        first: String,
        second: String,
    },

    #[error("rate target {target} bits is below the smallest attainable mutual information {min_rate} bits")]
    RateTooLow { target: f64, min_rate: f64 },

    #[error(
        "Blahut-Arimoto did not converge after {iterations} iterations \
         (certified gap {gap:.3e}, best distortion {distortion})"
    )]
    NotConverged {
        iterations: usize,
        gap: f64,
        distortion: f64,
        /// Best conditional distribution reached, laid out like the distortion matrix rows.
        best: Vec<Vec<f64>>,
    },

    #[error("linear program is {0}")]
    Lp(&'static str),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("config: {0}")]
    Config(String),
}
