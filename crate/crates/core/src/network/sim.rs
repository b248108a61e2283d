//! End-to-end discrete-event simulation of one session.
//!
//! Sources emit Poisson packet streams labelled by path. Visible relays
//! forward everything they receive, dummies included, after a fixed
//! processing delay. Covert relays draw their own Poisson departure schedule
//! and run bounded greedy matching on the merged data stream; idle departures
//! leave as dummies. Covert relays recognise and discard incoming dummies.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::point_process::{poisson_epochs, seeded_rng, NodeId};
use crate::relay::bgm_indices;
use crate::stats::{batch_ratio, Estimate};

use super::rates::{source_plan, SourcePlan};
use super::topology::{CovertSet, Session, Topology};

pub const DEFAULT_PROC_DELAY: f64 = 1e-6;
const BATCHES: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimConfig {
    pub delta: f64,
    pub horizon: f64,
    pub seed: u64,
    /// Sources whose paths all start with a covert relay send at capacity.
    pub boost: bool,
    pub proc_delay: f64,
}

impl SimConfig {
    pub fn new(delta: f64, horizon: f64, seed: u64) -> Self {
        SimConfig {
            delta,
            horizon,
            seed,
            boost: true,
            proc_delay: DEFAULT_PROC_DELAY,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelayStats {
    pub arrivals: u64,
    pub drops: u64,
    /// Drop fraction of data arrivals, batch-means error.
    pub loss: Estimate,
    /// Per path index: (arrivals, drops).
    pub per_path: BTreeMap<usize, (u64, u64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionSim {
    pub horizon: f64,
    /// Source emission rate per path (packets/s).
    pub offered: Vec<f64>,
    /// Delivered data rate per path, batched by emission time.
    pub delivered: Vec<Estimate>,
    /// Statistics for every covert relay that carries data.
    pub relays: BTreeMap<NodeId, RelayStats>,
}

impl SessionSim {
    pub fn total_delivered(&self) -> Estimate {
        let value = self.delivered.iter().map(|e| e.value).sum();
        // Path rates share relays, so errors are combined conservatively.
        let se = self.delivered.iter().map(|e| e.std_error).sum();
        Estimate::new(value, se)
    }
}

#[derive(Debug, Clone, Copy)]
struct Pkt {
    path: Option<usize>,
    born: f64,
}

/// Nodes of the session in an order where every edge used by a path goes
/// forward.
fn topo_order(session: &Session) -> Result<Vec<NodeId>> {
    let nodes = session.nodes();
    let mut succ: BTreeMap<&NodeId, BTreeSet<&NodeId>> = BTreeMap::new();
    for p in &session.paths {
        for w in p.nodes().windows(2) {
            succ.entry(&w[0]).or_default().insert(&w[1]);
        }
    }
    let mut indeg: BTreeMap<&NodeId, usize> = nodes.iter().map(|n| (n, 0)).collect();
    for targets in succ.values() {
        for t in targets {
            *indeg.get_mut(t).expect("node of session") += 1;
        }
    }
    let mut ready: VecDeque<&NodeId> = indeg
        .iter()
        .filter(|(_, &d)| d == 0)
        .map(|(n, _)| *n)
        .collect();
    let mut order = Vec::with_capacity(nodes.len());
    while let Some(n) = ready.pop_front() {
        order.push(n.clone());
        if let Some(ts) = succ.get(n) {
            for t in ts {
                let d = indeg.get_mut(t).expect("node of session");
                *d -= 1;
                if *d == 0 {
                    ready.push_back(t);
                }
            }
        }
    }
    if order.len() != nodes.len() {
        let stuck = indeg
            .into_iter()
            .find(|(_, d)| *d > 0)
            .map(|(n, _)| n.clone())
            .expect("cycle node");
        return Err(Error::ForwardingCycle(stuck));
    }
    Ok(order)
}

pub fn simulate_session(
    session: &Session,
    covert: &CovertSet,
    topo: &Topology,
    cfg: &SimConfig,
) -> Result<SessionSim> {
    let vis = super::rates::max_sum_rate_visible(session, topo)?;
    simulate_with_rates(session, covert, topo, &vis.per_path, cfg)
}

/// Simulation with explicit per-path data rates.
pub fn simulate_with_rates(
    session: &Session,
    covert: &CovertSet,
    topo: &Topology,
    rates: &[f64],
    cfg: &SimConfig,
) -> Result<SessionSim> {
    if !(cfg.horizon > 0.0) || !(cfg.delta >= 0.0) || !(cfg.proc_delay >= 0.0) {
        return Err(Error::InvalidParameter(
            "simulation needs horizon > 0, delta >= 0, proc_delay >= 0".into(),
        ));
    }
    if rates.len() != session.paths.len() {
        return Err(Error::InvalidParameter("one rate per path required".into()));
    }
    session.validate(topo)?;
    let order = topo_order(session)?;
    let index: BTreeMap<&NodeId, usize> = order.iter().enumerate().map(|(i, n)| (n, i)).collect();
    let interior = session.interior_relays();
    let covert: BTreeSet<&NodeId> = covert.iter().filter(|n| interior.contains(*n)).collect();
    let plans: BTreeMap<NodeId, SourcePlan> = source_plan(session, topo, rates, &covert, cfg.boost);

    let mut out_nbrs: BTreeMap<&NodeId, Vec<&NodeId>> = BTreeMap::new();
    for p in &session.paths {
        for w in p.nodes().windows(2) {
            let v = out_nbrs.entry(&w[0]).or_default();
            if !v.contains(&&w[1]) {
                v.push(&w[1]);
            }
        }
    }

    let n_paths = session.paths.len();
    let mut inbox: Vec<Vec<(f64, Pkt)>> = vec![Vec::new(); order.len()];
    let mut delivered_born: Vec<Vec<f64>> = vec![Vec::new(); n_paths];
    let mut relays = BTreeMap::new();

    for (k, node) in order.iter().enumerate() {
        let mut rng = seeded_rng(cfg.seed, 3 * k as u64 + 1);
        let mut outgoing: Vec<(f64, Pkt, &NodeId)> = Vec::new();

        if let Some(plan) = plans.get(node) {
            if plan.rate > 0.0 {
                let mut erng = seeded_rng(cfg.seed, 3 * k as u64);
                let epochs = poisson_epochs(&mut erng, plan.rate, cfg.horizon);
                for t in epochs {
                    let u: f64 = rng.random::<f64>() * plan.total_weight;
                    let mut acc = 0.0;
                    let mut pick = plan.paths[plan.paths.len() - 1].0;
                    for &(pi, w) in &plan.paths {
                        acc += w;
                        if u < acc {
                            pick = pi;
                            break;
                        }
                    }
                    let next = session.paths[pick]
                        .next_after(node)
                        .expect("source has a next hop");
                    outgoing.push((
                        t,
                        Pkt {
                            path: Some(pick),
                            born: t,
                        },
                        next,
                    ));
                }
            }
        }

        let mut incoming = std::mem::take(&mut inbox[k]);
        incoming.sort_by(|a, b| a.0.total_cmp(&b.0));
        let nbrs = out_nbrs.get(node).cloned().unwrap_or_default();
        let mut transit: Vec<(f64, Pkt, &NodeId)> = Vec::new();
        for (t, pkt) in incoming {
            match pkt.path {
                Some(pi) => match session.paths[pi].next_after(node) {
                    None => delivered_born[pi].push(pkt.born),
                    Some(next) => transit.push((t, pkt, next)),
                },
                None => {
                    if !covert.contains(node) && !nbrs.is_empty() {
                        let next = nbrs[rng.random_range(0..nbrs.len())];
                        transit.push((t, pkt, next));
                    }
                }
            }
        }

        if covert.contains(node) {
            let cap = topo.capacity(node).expect("validated node");
            let arrivals: Vec<f64> = transit.iter().map(|x| x.0).collect();
            let last = arrivals.last().copied().unwrap_or(0.0).max(cfg.horizon);
            let slack = if cfg.delta.is_finite() {
                cfg.delta
            } else {
                0.0
            } + 10.0 / cap;
            let mut drng = seeded_rng(cfg.seed, 3 * k as u64 + 2);
            let departures = poisson_epochs(&mut drng, cap, last + slack);
            let m = bgm_indices(&arrivals, &departures, cfg.delta);

            let mut per_path: BTreeMap<usize, (u64, u64)> = BTreeMap::new();
            for x in &transit {
                per_path
                    .entry(x.1.path.expect("data packet"))
                    .or_default()
                    .0 += 1;
            }
            let mut dropped = vec![false; arrivals.len()];
            for &i in &m.dropped {
                dropped[i] = true;
                per_path
                    .entry(transit[i].1.path.expect("data packet"))
                    .or_default()
                    .1 += 1;
            }
            if !arrivals.is_empty() {
                let size = arrivals.len().div_ceil(BATCHES);
                let (num, den): (Vec<f64>, Vec<f64>) = dropped
                    .chunks(size)
                    .map(|c| (c.iter().filter(|&&d| d).count() as f64, c.len() as f64))
                    .unzip();
                relays.insert(
                    node.clone(),
                    RelayStats {
                        arrivals: arrivals.len() as u64,
                        drops: m.dropped.len() as u64,
                        loss: batch_ratio(&num, &den),
                        per_path,
                    },
                );
            }
            for &(i, j) in &m.pairs {
                outgoing.push((departures[j], transit[i].1, transit[i].2));
            }
            if !nbrs.is_empty() {
                for &j in &m.dummies {
                    let next = nbrs[rng.random_range(0..nbrs.len())];
                    outgoing.push((
                        departures[j],
                        Pkt {
                            path: None,
                            born: departures[j],
                        },
                        next,
                    ));
                }
            }
        } else {
            for (t, pkt, next) in transit {
                outgoing.push((t + cfg.proc_delay, pkt, next));
            }
        }

        for (t, pkt, next) in outgoing {
            let j = index[next];
            debug_assert!(j > k, "forwarding goes forward in topological order");
            inbox[j].push((t, pkt));
        }
    }

    let offered: Vec<f64> = (0..n_paths)
        .map(|pi| {
            let src = session.paths[pi].source();
            plans
                .get(src)
                .map(|p| {
                    let w = p
                        .paths
                        .iter()
                        .find(|x| x.0 == pi)
                        .map(|x| x.1)
                        .unwrap_or(0.0);
                    if p.total_weight > 0.0 {
                        p.rate * w / p.total_weight
                    } else {
                        0.0
                    }
                })
                .unwrap_or(0.0)
        })
        .collect();
    let batch = cfg.horizon / BATCHES as f64;
    let delivered = delivered_born
        .iter()
        .map(|born| {
            let mut counts = vec![0.0; BATCHES];
            for &b in born {
                counts[((b / batch) as usize).min(BATCHES - 1)] += 1.0;
            }
            batch_ratio(&counts, &vec![batch; BATCHES])
        })
        .collect();
    Ok(SessionSim {
        horizon: cfg.horizon,
        offered,
        delivered,
        relays,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::loss_fraction;
    use crate::network::topology::{single_relay_network, switching_network, Path};

    #[test]
    fn all_visible_delivers_everything() {
        let net = switching_network(2.0).unwrap();
        let (s, _) = &net.prior.entries()[3];
        let sim = simulate_session(
            s,
            &CovertSet::new(),
            &net.topology,
            &SimConfig::new(1.0, 20_000.0, 5),
        )
        .unwrap();
        for e in &sim.delivered {
            assert!(e.within(1.0, 4.0), "{e:?}");
        }
        assert!(sim.relays.is_empty());
    }

    #[test]
    fn single_covert_relay_matches_loss_formula() {
        let net = single_relay_network(1.0, 1.0).unwrap();
        let (s, _) = &net.prior.entries()[0];
        let covert: CovertSet = ["B".into()].into_iter().collect();
        let mut cfg = SimConfig::new(1.0, 200_000.0, 8);
        cfg.boost = false;
        let sim = simulate_session(s, &covert, &net.topology, &cfg).unwrap();
        let st = &sim.relays[&NodeId::from("B")];
        assert!(
            st.loss.within(loss_fraction(1.0, 1.0, 1.0), 4.0),
            "{:?}",
            st.loss
        );
        assert!(sim.delivered[0].within(0.5, 4.0), "{:?}", sim.delivered[0]);
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let net = switching_network(2.0).unwrap();
        let (s, _) = &net.prior.entries()[7];
        let covert = s.interior_relays();
        let cfg = SimConfig::new(1.0, 2_000.0, 42);
        let a = simulate_session(s, &covert, &net.topology, &cfg).unwrap();
        let b = simulate_session(s, &covert, &net.topology, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn cycles_are_rejected() {
        let mut t = Topology::new();
        for n in ["A", "B", "C"] {
            t.add_node(n, 1.0).unwrap();
        }
        for (a, b) in [("A", "B"), ("B", "C"), ("C", "A")] {
            t.add_edge(a, b).unwrap();
        }
        let s = Session::new("x", vec![Path::new(["A", "B", "C"]), Path::new(["C", "A"])]);
        let err = simulate_with_rates(
            &s,
            &CovertSet::new(),
            &t,
            &[0.5, 0.5],
            &SimConfig::new(1.0, 10.0, 1),
        );
        assert!(matches!(err, Err(Error::ForwardingCycle(_))));
    }
}
