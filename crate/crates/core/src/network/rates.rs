//! Session sum-rates: the visible packing LP and the covert loss product.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use dashmap::DashMap;
use serde::{Deserialize, Serialize};

use crate::analytic::loss_fraction;
use crate::error::{Error, Result};
use crate::point_process::NodeId;

use super::lp::{maximize, Cmp, Constraint};
use super::sim::{simulate_with_rates, SessionSim, SimConfig};
use super::topology::{CovertSet, Path, Session, Topology};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VisibleRates {
    pub total: f64,
    pub per_path: Vec<f64>,
}

/// Maximum total rate with every relay visible: maximize the sum of path
/// rates subject to each node's capacity over the paths it lies on.
///
/// Among maximizers the one with the largest minimum path rate is returned,
/// so symmetric sessions get symmetric allocations.
pub fn max_sum_rate_visible(session: &Session, topo: &Topology) -> Result<VisibleRates> {
    session.validate(topo)?;
    let n = session.paths.len();
    let packing: Vec<Constraint> = session
        .nodes()
        .iter()
        .map(|b| {
            let row = session
                .paths
                .iter()
                .map(|p| if p.contains(b) { 1.0 } else { 0.0 })
                .collect();
            Constraint::new(row, Cmp::Le, topo.capacity(b).expect("validated node"))
        })
        .collect();
    let best = maximize(&vec![1.0; n], &packing)?;
    let total = best.objective;

    // Second stage over (lambda, t): maximize t with t <= lambda_i and the
    // sum pinned at the optimum.
    let mut cons: Vec<Constraint> = packing
        .iter()
        .map(|c| {
            let mut row = c.coeffs.clone();
            row.push(0.0);
            Constraint::new(row, Cmp::Le, c.rhs)
        })
        .collect();
    for i in 0..n {
        let mut row = vec![0.0; n + 1];
        row[i] = -1.0;
        row[n] = 1.0;
        cons.push(Constraint::new(row, Cmp::Le, 0.0));
    }
    let mut sum_row = vec![1.0; n + 1];
    sum_row[n] = 0.0;
    let mut obj = vec![0.0; n + 1];
    obj[n] = 1.0;
    let mut pinned = cons.clone();
    pinned.push(Constraint::new(sum_row.clone(), Cmp::Eq, total));
    let fair = match maximize(&obj, &pinned) {
        Ok(f) => f,
        Err(_) => {
            cons.push(Constraint::new(sum_row, Cmp::Ge, total * (1.0 - 1e-12)));
            maximize(&obj, &cons)?
        }
    };
    let mut per_path = fair.x[..n].to_vec();

    // Keep every node within capacity despite rounding.
    for c in &packing {
        let load: f64 = c.coeffs.iter().zip(&per_path).map(|(a, x)| a * x).sum();
        if load > c.rhs {
            let s = c.rhs / load;
            for (x, &a) in per_path.iter_mut().zip(&c.coeffs) {
                if a > 0.0 {
                    *x *= s;
                }
            }
        }
    }
    Ok(VisibleRates { total, per_path })
}

/// How a source feeds its paths.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct SourcePlan {
    /// Emission rate, boosted to capacity when every path leaves through a
    /// covert relay.
    pub rate: f64,
    /// (path index, weight) with weights the visible path rates.
    pub paths: Vec<(usize, f64)>,
    pub total_weight: f64,
    pub boosted: bool,
}

pub(crate) fn source_plan(
    session: &Session,
    topo: &Topology,
    rates: &[f64],
    covert: &BTreeSet<&NodeId>,
    boost: bool,
) -> BTreeMap<NodeId, SourcePlan> {
    let mut plans: BTreeMap<NodeId, SourcePlan> = BTreeMap::new();
    for (i, p) in session.paths.iter().enumerate() {
        let plan = plans.entry(p.source().clone()).or_insert(SourcePlan {
            rate: 0.0,
            paths: vec![],
            total_weight: 0.0,
            boosted: false,
        });
        if rates[i] > 0.0 {
            plan.paths.push((i, rates[i]));
            plan.total_weight += rates[i];
        }
    }
    for (src, plan) in plans.iter_mut() {
        let all_covert = !plan.paths.is_empty()
            && plan
                .paths
                .iter()
                .all(|&(i, _)| covert.contains(&session.paths[i].nodes()[1]));
        plan.boosted = boost && all_covert;
        plan.rate = if plan.boosted {
            topo.capacity(src)
                .expect("validated node")
                .max(plan.total_weight)
        } else {
            plan.total_weight
        };
    }
    plans
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EpsMode {
    /// Every covert relay uses the closed-form loss on its merged input rate.
    Analytic,
    /// Relays after the first covert one on a path use simulated losses.
    Simulated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CovertParams {
    pub delta: f64,
    pub mode: EpsMode,
    pub boost: bool,
    /// Simulation horizon and seed, used only for cascaded relays.
    pub horizon: f64,
    pub seed: u64,
}

impl CovertParams {
    pub fn new(delta: f64) -> Self {
        CovertParams {
            delta,
            mode: EpsMode::Simulated,
            boost: true,
            horizon: 20_000.0,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CovertRates {
    pub total: f64,
    pub std_error: f64,
    pub visible_total: f64,
    pub per_path: Vec<f64>,
    /// Per path, the covert relays crossed and the loss fraction at each.
    pub losses: Vec<Vec<(NodeId, f64)>>,
    /// Source boost factor per path (1 when not boosted).
    pub boost: Vec<f64>,
    pub simulated: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct SimKey {
    paths: Vec<Path>,
    covert: Vec<NodeId>,
    rates: Vec<u64>,
    delta: u64,
    horizon: u64,
    seed: u64,
    boost: bool,
}

/// Concurrent memo of cascaded-relay simulations.
#[derive(Debug, Default)]
pub struct EpsCache {
    map: DashMap<SimKey, Arc<SessionSim>>,
}

impl EpsCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    fn get_or_run(
        &self,
        session: &Session,
        covert: &CovertSet,
        topo: &Topology,
        rates: &[f64],
        cfg: &SimConfig,
    ) -> Result<Arc<SessionSim>> {
        let key = SimKey {
            paths: session.paths.clone(),
            covert: covert.iter().cloned().collect(),
            rates: rates.iter().map(|r| r.to_bits()).collect(),
            delta: cfg.delta.to_bits(),
            horizon: cfg.horizon.to_bits(),
            seed: cfg.seed,
            boost: cfg.boost,
        };
        if let Some(hit) = self.map.get(&key) {
            return Ok(hit.clone());
        }
        let sim = Arc::new(simulate_with_rates(session, covert, topo, rates, cfg)?);
        Ok(self.map.entry(key).or_insert(sim).clone())
    }
}

/// Sum-rate once the relays in `covert` schedule independently.
///
/// Each path keeps `λ^v Π (1 - ε)` over the covert relays it crosses, capped
/// at `λ^v`. At the first covert relay the loss is the closed form for the
/// merged input rate there; a boosted source multiplies its path's rate by
/// `C_A / T_A` before that relay. Later covert relays see a thinned,
/// non-Poisson stream and take their loss from simulation unless `mode` is
/// `Analytic`.
pub fn covert_sum_rate(
    session: &Session,
    covert: &CovertSet,
    topo: &Topology,
    params: &CovertParams,
    cache: Option<&EpsCache>,
) -> Result<CovertRates> {
    let vis = max_sum_rate_visible(session, topo)?;
    covert_sum_rate_with(session, covert, topo, &vis, params, cache)
}

pub fn covert_sum_rate_with(
    session: &Session,
    covert: &CovertSet,
    topo: &Topology,
    vis: &VisibleRates,
    params: &CovertParams,
    cache: Option<&EpsCache>,
) -> Result<CovertRates> {
    if !(params.delta >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "delta must be >= 0, got {}",
            params.delta
        )));
    }
    let interior = session.interior_relays();
    let active: BTreeSet<&NodeId> = covert.iter().filter(|n| interior.contains(*n)).collect();
    let plans = source_plan(session, topo, &vis.per_path, &active, params.boost);
    let n = session.paths.len();

    let boost: Vec<f64> = (0..n)
        .map(|i| {
            let plan = &plans[session.paths[i].source()];
            if plan.boosted && plan.total_weight > 0.0 {
                plan.rate / plan.total_weight
            } else {
                1.0
            }
        })
        .collect();
    let mut carried: Vec<f64> = (0..n).map(|i| vis.per_path[i] * boost[i]).collect();
    let mut losses: Vec<Vec<(NodeId, f64)>> = vec![Vec::new(); n];
    let mut seen_covert = vec![false; n];

    let cascaded = session
        .paths
        .iter()
        .any(|p| p.interior().iter().filter(|r| active.contains(r)).count() > 1);
    let need_sim = cascaded && params.mode == EpsMode::Simulated;
    let sim = if need_sim {
        let mut cfg = SimConfig::new(params.delta, params.horizon, params.seed);
        cfg.boost = params.boost;
        let active_set: CovertSet = active.iter().map(|n| (*n).clone()).collect();
        Some(match cache {
            Some(c) => c.get_or_run(session, &active_set, topo, &vis.per_path, &cfg)?,
            None => Arc::new(simulate_with_rates(
                session,
                &active_set,
                topo,
                &vis.per_path,
                &cfg,
            )?),
        })
    } else {
        None
    };

    // Relays are processed so that every path meets its covert relays in order.
    let order = relay_order(session, &active);
    let mut se_rel = vec![0.0; n];
    for b in order {
        let through: Vec<usize> = (0..n)
            .filter(|&i| session.paths[i].interior().contains(b))
            .collect();
        let r_in: f64 = through.iter().map(|&i| carried[i]).sum();
        let cap = topo.capacity(b).expect("validated node");
        let analytic = if r_in > 0.0 {
            loss_fraction(r_in, cap, params.delta)
        } else {
            0.0
        };
        for &i in &through {
            let (eps, se) = match (&sim, seen_covert[i]) {
                (Some(s), true) => s
                    .relays
                    .get(b)
                    .map(|st| (st.loss.value, st.loss.std_error))
                    .unwrap_or((0.0, 0.0)),
                _ => (analytic, 0.0),
            };
            carried[i] *= 1.0 - eps;
            if eps < 1.0 {
                se_rel[i] += se / (1.0 - eps);
            }
            losses[i].push((b.clone(), eps));
            seen_covert[i] = true;
        }
    }

    let per_path: Vec<f64> = (0..n).map(|i| carried[i].min(vis.per_path[i])).collect();
    let shortfall: f64 = (0..n).map(|i| vis.per_path[i] - per_path[i]).sum();
    let std_error = (0..n).map(|i| per_path[i] * se_rel[i]).sum();
    Ok(CovertRates {
        total: vis.total - shortfall,
        std_error,
        visible_total: vis.total,
        per_path,
        losses,
        boost,
        simulated: need_sim,
    })
}

/// Covert relays ordered consistently with every path.
fn relay_order<'a>(session: &'a Session, active: &BTreeSet<&'a NodeId>) -> Vec<&'a NodeId> {
    let mut placed: Vec<&NodeId> = Vec::new();
    let mut remaining: BTreeSet<&NodeId> = active
        .iter()
        .copied()
        .filter(|b| session.paths.iter().any(|p| p.interior().contains(b)))
        .collect();
    while !remaining.is_empty() {
        let next = remaining
            .iter()
            .copied()
            .find(|b| {
                session
                    .paths
                    .iter()
                    .all(|p| match p.nodes().iter().position(|x| x == *b) {
                        None => true,
                        Some(k) => p.nodes()[..k].iter().all(|u| !remaining.contains(u)),
                    })
            })
            .unwrap_or_else(|| *remaining.iter().next().expect("nonempty"));
        placed.push(next);
        remaining.remove(next);
    }
    placed
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::topology::{single_relay_network, switching_network};

    fn chain(caps: &[f64]) -> (Topology, Session) {
        let mut t = Topology::new();
        let names: Vec<String> = (0..caps.len()).map(|i| format!("N{i}")).collect();
        for (n, &c) in names.iter().zip(caps) {
            t.add_node(n.as_str(), c).unwrap();
        }
        for w in names.windows(2) {
            t.add_edge(w[0].as_str(), w[1].as_str()).unwrap();
        }
        (
            t,
            Session::new("c", vec![Path::new(names.iter().map(|s| s.as_str()))]),
        )
    }

    #[test]
    fn bottleneck_and_disjoint_paths() {
        let (t, s) = chain(&[1.0, 2.0, 3.0]);
        assert_eq!(max_sum_rate_visible(&s, &t).unwrap().total, 1.0);

        let mut t = Topology::new();
        for n in ["A", "B", "C", "D"] {
            t.add_node(n, 1.0).unwrap();
        }
        t.add_edge("A", "B").unwrap();
        t.add_edge("C", "D").unwrap();
        let s = Session::new("d", vec![Path::new(["A", "B"]), Path::new(["C", "D"])]);
        assert_eq!(max_sum_rate_visible(&s, &t).unwrap().total, 2.0);
    }

    #[test]
    fn switching_network_is_four() {
        let net = switching_network(2.0).unwrap();
        for (s, _) in net.prior.entries() {
            let v = max_sum_rate_visible(s, &net.topology).unwrap();
            assert_eq!(v.total, 4.0);
            for x in &v.per_path {
                assert!((x - 1.0).abs() < 1e-9, "{:?}", v.per_path);
            }
        }
    }

    #[test]
    fn lp_invariant_under_path_order() {
        let net = switching_network(2.0).unwrap();
        let (s, _) = &net.prior.entries()[9];
        let mut rev = s.clone();
        rev.paths.reverse();
        let a = max_sum_rate_visible(s, &net.topology).unwrap();
        let b = max_sum_rate_visible(&rev, &net.topology).unwrap();
        assert_eq!(a.total, b.total);
    }

    #[test]
    fn empty_covert_set_keeps_visible_rate() {
        let net = switching_network(2.0).unwrap();
        let (s, _) = &net.prior.entries()[0];
        let r = covert_sum_rate(
            s,
            &CovertSet::new(),
            &net.topology,
            &CovertParams::new(1.0),
            None,
        )
        .unwrap();
        assert_eq!(r.total, r.visible_total);
        assert!(!r.simulated);
    }

    #[test]
    fn single_relay_uses_loss_formula() {
        let net = single_relay_network(1.0, 2.0).unwrap();
        let (s, _) = &net.prior.entries()[0];
        let covert: CovertSet = ["B".into()].into_iter().collect();
        let mut p = CovertParams::new(0.7);
        p.boost = false;
        let r = covert_sum_rate(s, &covert, &net.topology, &p, None).unwrap();
        let want = 1.0 - loss_fraction(1.0, 2.0, 0.7);
        assert!((r.total - want).abs() < 1e-12);
    }

    #[test]
    fn first_stage_covert_in_switching_network() {
        let net = switching_network(2.0).unwrap();
        let (s, _) = &net.prior.entries()[0];
        let covert: CovertSet = ["M1".into(), "M3".into()].into_iter().collect();
        let mut p = CovertParams::new(1.0);
        p.boost = false;
        let plain = covert_sum_rate(s, &covert, &net.topology, &p, None).unwrap();
        assert!((plain.total - 4.0 * (1.0 - loss_fraction(2.0, 2.0, 1.0))).abs() < 1e-12);
        p.boost = true;
        let boosted = covert_sum_rate(s, &covert, &net.topology, &p, None).unwrap();
        assert!(
            (boosted.total - 8.0 * (1.0 - loss_fraction(4.0, 2.0, 1.0))).abs() < 1e-12,
            "{boosted:?}"
        );
        assert!(boosted.total > plain.total && boosted.total < 4.0);
    }

    #[test]
    fn cascade_is_simulated_and_cached() {
        let net = switching_network(2.0).unwrap();
        let (s, _) = &net.prior.entries()[0];
        let all = s.interior_relays();
        let mut p = CovertParams::new(1.0);
        p.horizon = 5_000.0;
        let cache = EpsCache::new();
        let a = covert_sum_rate(s, &all, &net.topology, &p, Some(&cache)).unwrap();
        let b = covert_sum_rate(s, &all, &net.topology, &p, Some(&cache)).unwrap();
        assert!(a.simulated);
        assert_eq!(cache.len(), 1);
        assert_eq!(a, b);
        let first_only: CovertSet = ["M1".into(), "M3".into()].into_iter().collect();
        let c = covert_sum_rate(s, &first_only, &net.topology, &p, None).unwrap();
        assert!(a.total < c.total);
        for l in &a.losses {
            assert_eq!(l.len(), 2);
        }
    }
}
