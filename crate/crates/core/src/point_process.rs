//! Node transmission schedules: Poisson generation, rate measurement and the
//! per-node medium-access check.
//!
//! A [`Schedule`] is the sorted list of epochs at which one node transmits.
//! Rates are measured on a finite horizon as `n / Y(n)`, the ratio of the
//! packet count to the epoch of the last packet.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Opaque node identifier. Ordering is lexicographic and is used to break
/// ties between epochs of different nodes.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(String);

impl NodeId {
    pub fn new(name: impl Into<String>) -> Self {
        NodeId(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for NodeId {
    fn from(s: &str) -> Self {
        NodeId(s.to_owned())
    }
}

impl From<String> for NodeId {
    fn from(s: String) -> Self {
        NodeId(s)
    }
}

/// Seeded counter-based generator. Distinct `stream` values give independent
/// substreams under the same seed.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    node: NodeId,
    epochs: Vec<f64>,
    horizon: f64,
}

impl Schedule {
    /// Builds a schedule whose horizon is its last epoch (0 when empty).
    pub fn new(node: impl Into<NodeId>, epochs: Vec<f64>) -> Result<Self> {
        let horizon = epochs.last().copied().unwrap_or(0.0);
        Self::with_horizon(node, epochs, horizon)
    }

    pub fn with_horizon(node: impl Into<NodeId>, epochs: Vec<f64>, horizon: f64) -> Result<Self> {
        let node = node.into();
        let sorted = epochs.windows(2).all(|w| w[0] < w[1]);
        let in_range = epochs
            .iter()
            .all(|&t| t.is_finite() && t >= 0.0 && t <= horizon);
        if !sorted || !in_range || !(horizon >= 0.0) {
            return Err(Error::UnsortedSchedule(node));
        }
        Ok(Schedule {
            node,
            epochs,
            horizon,
        })
    }

    pub fn node(&self) -> &NodeId {
        &self.node
    }

    pub fn epochs(&self) -> &[f64] {
        &self.epochs
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn into_epochs(self) -> Vec<f64> {
        self.epochs
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateBound {
    pub node: NodeId,
    pub capacity: f64,
}

impl RateBound {
    pub fn new(node: impl Into<NodeId>, capacity: f64) -> Result<Self> {
        if !(capacity.is_finite() && capacity > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "capacity must be finite and positive, got {capacity}"
            )));
        }
        Ok(RateBound {
            node: node.into(),
            capacity,
        })
    }
}

/// Parameters of a homogeneous Poisson schedule on `[0, horizon]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    pub rate: f64,
    pub horizon: f64,
    pub seed: u64,
}

impl GenSpec {
    pub fn new(rate: f64, horizon: f64, seed: u64) -> Self {
        GenSpec {
            rate,
            horizon,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.rate.is_finite() && self.rate > 0.0) {
            return Err(Error::InvalidSpec(format!(
                "rate must be positive, got {}",
                self.rate
            )));
        }
        // A zero-length window is allowed and yields an empty schedule.
        if !(self.horizon.is_finite() && self.horizon >= 0.0) {
            return Err(Error::InvalidSpec(format!(
                "horizon must be finite and non-negative, got {}",
                self.horizon
            )));
        }
        Ok(())
    }
}

/// Poisson epochs on `[0, horizon]` drawn from `rng` by accumulating
/// exponential inter-arrival times.
pub fn poisson_epochs<R: rand::Rng + ?Sized>(rng: &mut R, rate: f64, horizon: f64) -> Vec<f64> {
    let exp = Exp::new(rate).expect("rate checked by caller");
    let mut epochs = Vec::with_capacity((rate * horizon * 1.01) as usize + 16);
    let mut t = exp.sample(rng);
    while t <= horizon {
        epochs.push(t);
        t += exp.sample(rng);
    }
    epochs
}

/// Generates a Poisson schedule for `node`. Deterministic in `spec.seed`.
pub fn gen_poisson(node: impl Into<NodeId>, spec: &GenSpec) -> Result<Schedule> {
    gen_poisson_stream(node, spec, 0)
}

/// Like [`gen_poisson`] but drawing from substream `stream` of the seed.
pub fn gen_poisson_stream(
    node: impl Into<NodeId>,
    spec: &GenSpec,
    stream: u64,
) -> Result<Schedule> {
    spec.validate()?;
    let mut rng = seeded_rng(spec.seed, stream);
    let epochs = poisson_epochs(&mut rng, spec.rate, spec.horizon);
    Ok(Schedule {
        node: node.into(),
        epochs,
        horizon: spec.horizon,
    })
}

/// Finite-horizon rate estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateEstimate {
    pub rate: f64,
    /// Poisson standard error `rate / sqrt(n)`.
    pub std_error: f64,
}

/// `n / Y(n)` for a schedule with `n` epochs.
pub fn empirical_rate(s: &Schedule) -> Result<f64> {
    rate_estimate(s).map(|e| e.rate)
}

pub fn rate_estimate(s: &Schedule) -> Result<RateEstimate> {
    let n = s.len();
    let last = *s.epochs.last().ok_or(Error::EmptySchedule)?;
    if last <= 0.0 {
        return Err(Error::EmptySchedule);
    }
    let rate = n as f64 / last;
    Ok(RateEstimate {
        rate,
        std_error: rate / (n as f64).sqrt(),
    })
}

/// True iff every node transmits at or below its bound. Empty schedules have
/// rate zero.
pub fn validate_network_schedule(schedules: &[Schedule], bounds: &[RateBound]) -> Result<bool> {
    let caps: BTreeMap<&NodeId, f64> = bounds.iter().map(|b| (&b.node, b.capacity)).collect();
    let mut valid = true;
    for s in schedules {
        let cap = *caps
            .get(&s.node)
            .ok_or_else(|| Error::MissingBound(s.node.clone()))?;
        let rate = if s.is_empty() {
            0.0
        } else {
            empirical_rate(s)?
        };
        valid &= rate <= cap;
    }
    Ok(valid)
}

/// Merges schedules into one time-ordered stream of `(epoch, index of source
/// schedule)`. Equal epochs are ordered by node id.
pub fn merge(schedules: &[&Schedule]) -> Vec<(f64, usize)> {
    let mut out: Vec<(f64, usize)> = schedules
        .iter()
        .enumerate()
        .flat_map(|(k, s)| s.epochs.iter().map(move |&t| (t, k)))
        .collect();
    out.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then_with(|| schedules[a.1].node.cmp(&schedules[b.1].node))
    });
    out
}

/// Writes `node <id> rate <C>` followed by one epoch per line.
pub fn write_schedule<W: Write>(w: &mut W, s: &Schedule, capacity: f64) -> std::io::Result<()> {
    writeln!(w, "node {} rate {}", s.node, capacity)?;
    for t in &s.epochs {
        writeln!(w, "{t}")?;
    }
    Ok(())
}

/// Reads one or more schedule blocks. Blank lines and `#` comments are skipped.
pub fn read_schedules<R: BufRead>(r: R) -> Result<Vec<(Schedule, RateBound)>> {
    let mut blocks: Vec<(NodeId, f64, Vec<f64>, usize)> = Vec::new();
    for (idx, line) in r.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if line.starts_with("node") {
            let parts: Vec<&str> = line.split_whitespace().collect();
            match parts.as_slice() {
                ["node", id, "rate", cap] => {
                    let cap: f64 = cap.parse().map_err(|_| Error::Parse {
                        line: lineno,
                        msg: format!("bad rate `{cap}`"),
                    })?;
                    blocks.push((NodeId::from(*id), cap, Vec::new(), lineno));
                }
                _ => {
                    return Err(Error::Parse {
                        line: lineno,
                        msg: "expected `node <id> rate <C>`".into(),
                    })
                }
            }
            continue;
        }
        let t: f64 = line.parse().map_err(|_| Error::Parse {
            line: lineno,
            msg: format!("bad epoch `{line}`"),
        })?;
        match blocks.last_mut() {
            Some(b) => b.2.push(t),
            None => {
                return Err(Error::Parse {
                    line: lineno,
                    msg: "epoch before any `node` header".into(),
                })
            }
        }
    }
    blocks
        .into_iter()
        .map(|(node, cap, epochs, lineno)| {
            let bound = RateBound::new(node.clone(), cap).map_err(|e| Error::Parse {
                line: lineno,
                msg: e.to_string(),
            })?;
            let sched = Schedule::new(node, epochs).map_err(|e| Error::Parse {
                line: lineno,
                msg: e.to_string(),
            })?;
            Ok((sched, bound))
        })
        .collect()
}
