//! Multi-source relaying: strict priority orders, time-sharing between
//! orders, and origin-blind (equal priority) matching.

use std::collections::BTreeSet;

use serde::Serialize;

use super::matching::{bgm_indices, IndexMatch, MatchResult};
use crate::error::{Error, Result};
use crate::point_process::{merge, NodeId, Schedule};

/// Weighted set of priority orderings over the source streams. Each ordering
/// lists node ids highest priority first.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PriorityOrder {
    orderings: Vec<(Vec<NodeId>, f64)>,
}

impl PriorityOrder {
    pub fn strict(order: Vec<NodeId>) -> Self {
        PriorityOrder {
            orderings: vec![(order, 1.0)],
        }
    }

    pub fn time_shared(orderings: Vec<(Vec<NodeId>, f64)>) -> Result<Self> {
        let total: f64 = orderings.iter().map(|o| o.1).sum();
        if orderings.is_empty()
            || orderings.iter().any(|o| !(o.1 >= 0.0))
            || (total - 1.0).abs() > 1e-9
        {
            return Err(Error::InvalidParameter(
                "priority weights must be non-negative and sum to 1".into(),
            ));
        }
        Ok(PriorityOrder { orderings })
    }

    pub fn orderings(&self) -> &[(Vec<NodeId>, f64)] {
        &self.orderings
    }
}

/// Per-stream results of a multi-source relay. `streams[k]` describes input
/// `k`: its pairs and drops, and as dummies every departure that did not carry
/// one of its packets. `dummies` are departures that carried nothing at all.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MultiMatch {
    pub streams: Vec<MatchResult>,
    pub dummies: Vec<f64>,
}

/// Sorted `all \ used`, both sorted.
fn difference(all: &[f64], used: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(all.len().saturating_sub(used.len()));
    let mut u = 0;
    for &t in all {
        if u < used.len() && used[u] == t {
            u += 1;
        } else {
            out.push(t);
        }
    }
    out
}

fn successive(streams: &[&[f64]], departures: &[f64], order: &[usize], delta: f64) -> MultiMatch {
    let mut free: Vec<f64> = departures.to_vec();
    let mut results: Vec<Option<MatchResult>> = vec![None; streams.len()];
    for &k in order {
        let r = bgm_indices(streams[k], &free, delta);
        let pairs: Vec<(f64, f64)> = r
            .pairs
            .iter()
            .map(|&(i, j)| (streams[k][i], free[j]))
            .collect();
        let used: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let dropped = r.dropped.iter().map(|&i| streams[k][i]).collect();
        free = r.dummies.iter().map(|&j| free[j]).collect();
        results[k] = Some(MatchResult {
            dummies: difference(departures, &used),
            pairs,
            dropped,
            delay_bound: delta,
        });
    }
    MultiMatch {
        streams: results
            .into_iter()
            .map(|r| r.expect("order covers every stream"))
            .collect(),
        dummies: free,
    }
}

fn check_streams(streams: &[Schedule]) -> Result<()> {
    let ids: BTreeSet<&NodeId> = streams.iter().map(|s| s.node()).collect();
    if ids.len() != streams.len() {
        return Err(Error::InvalidParameter(
            "arrival streams must have distinct node ids".into(),
        ));
    }
    Ok(())
}

fn resolve_order(streams: &[Schedule], order: &[NodeId]) -> Result<Vec<usize>> {
    let idx: Vec<usize> = order
        .iter()
        .map(|id| {
            streams.iter().position(|s| s.node() == id).ok_or_else(|| {
                Error::InvalidParameter(format!("ordering names unknown stream {id}"))
            })
        })
        .collect::<Result<_>>()?;
    let distinct: BTreeSet<usize> = idx.iter().copied().collect();
    if distinct.len() != streams.len() || idx.len() != streams.len() {
        return Err(Error::InvalidParameter(
            "ordering must be a permutation of the streams".into(),
        ));
    }
    Ok(idx)
}

/// Priority relaying, realized as successive bounded greedy matching in
/// priority order: the top stream is matched against all departures, the next
/// against the departures left unused, and so on.
///
/// With several weighted orderings the horizon is cut into consecutive
/// segments of proportional length and each segment uses one ordering.
pub fn priority_relay(
    streams: &[Schedule],
    departures: &Schedule,
    order: &PriorityOrder,
    delta: f64,
) -> Result<MultiMatch> {
    check_streams(streams)?;
    let orders: Vec<(Vec<usize>, f64)> = order
        .orderings
        .iter()
        .map(|(o, w)| Ok((resolve_order(streams, o)?, *w)))
        .collect::<Result<_>>()?;
    if orders.len() == 1 {
        let s: Vec<&[f64]> = streams.iter().map(|s| s.epochs()).collect();
        return Ok(successive(&s, departures.epochs(), &orders[0].0, delta));
    }

    let horizon = streams
        .iter()
        .map(|s| s.horizon())
        .fold(departures.horizon(), f64::max);
    let mut out = MultiMatch {
        streams: vec![
            MatchResult {
                pairs: vec![],
                dropped: vec![],
                dummies: vec![],
                delay_bound: delta,
            };
            streams.len()
        ],
        dummies: vec![],
    };
    let mut start = 0.0;
    let n = orders.len();
    for (k, (ord, w)) in orders.iter().enumerate() {
        let end = if k + 1 == n {
            f64::INFINITY
        } else {
            start + w * horizon
        };
        let slice = |e: &[f64]| -> Vec<f64> {
            e.iter()
                .copied()
                .filter(|&t| t >= start && t < end)
                .collect()
        };
        let seg_streams: Vec<Vec<f64>> = streams.iter().map(|s| slice(s.epochs())).collect();
        let seg_refs: Vec<&[f64]> = seg_streams.iter().map(|v| v.as_slice()).collect();
        let seg = successive(&seg_refs, &slice(departures.epochs()), ord, delta);
        for (acc, r) in out.streams.iter_mut().zip(seg.streams) {
            acc.pairs.extend(r.pairs);
            acc.dropped.extend(r.dropped);
            acc.dummies.extend(r.dummies);
        }
        out.dummies.extend(seg.dummies);
        start = end;
    }
    Ok(out)
}

/// Origin-blind relaying: one bounded greedy match on the merged input.
pub fn equal_priority_relay(
    streams: &[Schedule],
    departures: &Schedule,
    delta: f64,
) -> Result<MultiMatch> {
    check_streams(streams)?;
    let refs: Vec<&Schedule> = streams.iter().collect();
    let merged = merge(&refs);
    let epochs: Vec<f64> = merged.iter().map(|m| m.0).collect();
    let deps = departures.epochs();
    let IndexMatch {
        pairs,
        dropped,
        dummies,
    } = bgm_indices(&epochs, deps, delta);

    let mut out: Vec<MatchResult> = (0..streams.len())
        .map(|_| MatchResult {
            pairs: vec![],
            dropped: vec![],
            dummies: vec![],
            delay_bound: delta,
        })
        .collect();
    let mut used: Vec<Vec<f64>> = vec![Vec::new(); streams.len()];
    for (i, j) in pairs {
        let k = merged[i].1;
        out[k].pairs.push((epochs[i], deps[j]));
        used[k].push(deps[j]);
    }
    for i in dropped {
        out[merged[i].1].dropped.push(epochs[i]);
    }
    for (r, u) in out.iter_mut().zip(&used) {
        r.dummies = difference(deps, u);
    }
    Ok(MultiMatch {
        streams: out,
        dummies: dummies.into_iter().map(|j| deps[j]).collect(),
    })
}
