//! Deterministic covert-set selection and its time-sharing hull.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::network::{CovertParams, CovertSet, EpsCache, SessionPrior, Topology};

use super::measure::anonymity_of;
use super::rd::{expectation, subsets, RateTable};

pub const DEFAULT_RELAY_CAP: usize = 20;
const ALPHA_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeterministicPoint {
    pub covert: CovertSet,
    pub alpha: f64,
    /// Expected session sum-rate.
    pub rate: f64,
}

/// Anonymity and expected sum-rate of every covert set shared by all
/// sessions.
pub fn deterministic_points(
    prior: &SessionPrior,
    table: &RateTable,
    cap: usize,
) -> Result<Vec<DeterministicPoint>> {
    let relays: Vec<_> = prior.relays().into_iter().collect();
    if relays.len() > cap {
        return Err(Error::TooManyRelays {
            count: relays.len(),
            cap,
        });
    }
    let probs = prior.probs();
    Ok(subsets(&relays)
        .into_par_iter()
        .map(|b| {
            let b: CovertSet = b.into_iter().collect();
            let rates: Vec<f64> = (0..probs.len()).map(|i| table.rate(i, &b)).collect();
            let rate = expectation(&probs, &rates);
            DeterministicPoint {
                alpha: anonymity_of(prior, &b),
                covert: b,
                rate,
            }
        })
        .collect())
}

/// Highest-rate point meeting `alpha_target`; ties go to the smaller set.
pub fn best_among(points: &[DeterministicPoint], alpha_target: f64) -> Result<DeterministicPoint> {
    let max_alpha = points.iter().map(|p| p.alpha).fold(0.0, f64::max);
    if alpha_target > 1.0 + ALPHA_TOL || alpha_target > max_alpha + ALPHA_TOL {
        return Err(Error::Infeasible {
            target: alpha_target,
            max_alpha,
        });
    }
    points
        .iter()
        .filter(|p| p.alpha >= alpha_target - ALPHA_TOL)
        .min_by(|a, b| {
            b.rate
                .total_cmp(&a.rate)
                .then(a.covert.len().cmp(&b.covert.len()))
                .then_with(|| a.covert.cmp(&b.covert))
        })
        .cloned()
        .ok_or(Error::Infeasible {
            target: alpha_target,
            max_alpha,
        })
}

pub fn best_deterministic(
    prior: &SessionPrior,
    topo: &Topology,
    alpha_target: f64,
    params: &CovertParams,
    cache: &EpsCache,
    cap: usize,
) -> Result<DeterministicPoint> {
    if alpha_target > 1.0 + ALPHA_TOL {
        return Err(Error::Infeasible {
            target: alpha_target,
            max_alpha: 1.0,
        });
    }
    let table = RateTable::build(prior, topo, params, cache)?;
    best_among(&deterministic_points(prior, &table, cap)?, alpha_target)
}

/// Upper boundary of the time-sharing region of deterministic points, as a
/// nonincreasing concave function of anonymity.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Hull {
    /// (alpha, rate), alpha increasing.
    pub vertices: Vec<(f64, f64)>,
}

impl Hull {
    /// Best rate at anonymity `alpha`; `None` beyond the largest attainable
    /// anonymity.
    pub fn eval(&self, alpha: f64) -> Option<f64> {
        let first = self.vertices.first()?;
        if alpha <= first.0 {
            return Some(first.1);
        }
        let last = self.vertices.last().expect("nonempty");
        if alpha > last.0 + ALPHA_TOL {
            return None;
        }
        if alpha >= last.0 {
            return Some(last.1);
        }
        let k = self.vertices.partition_point(|v| v.0 <= alpha);
        let (a0, r0) = self.vertices[k - 1];
        let (a1, r1) = self.vertices[k];
        Some(r0 + (r1 - r0) * (alpha - a0) / (a1 - a0))
    }
}

/// Hull of `(rate, alpha)` pairs.
pub fn convex_hull_deterministic(points: &[(f64, f64)]) -> Hull {
    let mut pts: Vec<(f64, f64)> = points.iter().map(|&(r, a)| (a, r)).collect();
    // Per alpha keep the best rate.
    pts.sort_by(|x, y| x.0.total_cmp(&y.0).then(y.1.total_cmp(&x.1)));
    pts.dedup_by(|b, a| a.0 == b.0);
    let Some(start) = pts
        .iter()
        .enumerate()
        .max_by(|(_, x), (_, y)| x.1.total_cmp(&y.1).then(x.0.total_cmp(&y.0)))
        .map(|(i, _)| i)
    else {
        return Hull { vertices: vec![] };
    };
    let mut hull: Vec<(f64, f64)> = Vec::new();
    for &p in &pts[start..] {
        while hull.len() >= 2 {
            let (o, a) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            let cross = (a.0 - o.0) * (p.1 - o.1) - (a.1 - o.1) * (p.0 - o.0);
            if cross >= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(p);
    }
    Hull { vertices: hull }
}
