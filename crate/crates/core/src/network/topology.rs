//! Network graph, sessions, priors, and their text configuration format.
//!
//! ```text
//! # comment
//! node S1 cap 2
//! edge S1 M1
//! session 0.5 label
//! path S1 M1 D1
//! end
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, Write};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::point_process::NodeId;

pub type CovertSet = BTreeSet<NodeId>;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct Path(pub Vec<NodeId>);

impl Path {
    pub fn new<I, T>(nodes: I) -> Self
    where
        I: IntoIterator<Item = T>,
        T: Into<NodeId>,
    {
        Path(nodes.into_iter().map(Into::into).collect())
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn source(&self) -> &NodeId {
        &self.0[0]
    }

    pub fn destination(&self) -> &NodeId {
        &self.0[self.0.len() - 1]
    }

    pub fn contains(&self, n: &NodeId) -> bool {
        self.0.contains(n)
    }

    /// Nodes strictly between source and destination.
    pub fn interior(&self) -> &[NodeId] {
        if self.0.len() <= 2 {
            &[]
        } else {
            &self.0[1..self.0.len() - 1]
        }
    }

    /// Node following `n` on the path, if any.
    pub fn next_after(&self, n: &NodeId) -> Option<&NodeId> {
        let i = self.0.iter().position(|x| x == n)?;
        self.0.get(i + 1)
    }

    pub fn prev_before(&self, n: &NodeId) -> Option<&NodeId> {
        let i = self.0.iter().position(|x| x == n)?;
        i.checked_sub(1).map(|j| &self.0[j])
    }
}

impl fmt::Display for Path {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.0.iter().map(|n| n.as_str()).collect();
        write!(f, "({})", names.join(","))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Topology {
    nodes: BTreeMap<NodeId, f64>,
    edges: BTreeSet<(NodeId, NodeId)>,
}

impl Topology {
    pub fn new() -> Self {
        Topology {
            nodes: BTreeMap::new(),
            edges: BTreeSet::new(),
        }
    }

    pub fn add_node(&mut self, id: impl Into<NodeId>, capacity: f64) -> Result<()> {
        let id = id.into();
        if !(capacity > 0.0) || !capacity.is_finite() {
            return Err(Error::InvalidTopology(format!(
                "node {id}: capacity must be positive, got {capacity}"
            )));
        }
        if self.nodes.insert(id.clone(), capacity).is_some() {
            return Err(Error::InvalidTopology(format!("node {id} declared twice")));
        }
        Ok(())
    }

    pub fn add_edge(&mut self, from: impl Into<NodeId>, to: impl Into<NodeId>) -> Result<()> {
        let (from, to) = (from.into(), to.into());
        for n in [&from, &to] {
            if !self.nodes.contains_key(n) {
                return Err(Error::InvalidTopology(format!(
                    "edge references unknown node {n}"
                )));
            }
        }
        if from == to {
            return Err(Error::InvalidTopology(format!("self-loop at {from}")));
        }
        self.edges.insert((from, to));
        Ok(())
    }

    pub fn capacity(&self, n: &NodeId) -> Option<f64> {
        self.nodes.get(n).copied()
    }

    pub fn nodes(&self) -> impl Iterator<Item = (&NodeId, f64)> {
        self.nodes.iter().map(|(k, &v)| (k, v))
    }

    pub fn edges(&self) -> impl Iterator<Item = &(NodeId, NodeId)> {
        self.edges.iter()
    }

    pub fn has_edge(&self, a: &NodeId, b: &NodeId) -> bool {
        self.edges.contains(&(a.clone(), b.clone()))
    }

    pub fn validate_path(&self, p: &Path) -> Result<()> {
        let bad = |reason: &str| Error::InvalidPath {
            path: p.to_string(),
            reason: reason.to_string(),
        };
        if p.len() < 2 {
            return Err(bad("a path needs at least two nodes"));
        }
        if let Some(n) = p.nodes().iter().find(|n| !self.nodes.contains_key(*n)) {
            return Err(bad(&format!("unknown node {n}")));
        }
        let distinct: BTreeSet<&NodeId> = p.nodes().iter().collect();
        if distinct.len() != p.len() {
            return Err(bad("paths must not revisit a node"));
        }
        for w in p.nodes().windows(2) {
            if !self.has_edge(&w[0], &w[1]) {
                return Err(bad(&format!("no edge {} -> {}", w[0], w[1])));
            }
        }
        Ok(())
    }
}

impl Default for Topology {
    fn default() -> Self {
        Self::new()
    }
}

/// A set of simultaneously active paths.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Session {
    pub label: String,
    pub paths: Vec<Path>,
}

impl Session {
    pub fn new(label: impl Into<String>, paths: Vec<Path>) -> Self {
        Session {
            label: label.into(),
            paths,
        }
    }

    pub fn validate(&self, topo: &Topology) -> Result<()> {
        if self.paths.is_empty() {
            return Err(Error::InvalidTopology(format!(
                "session {} has no paths",
                self.label
            )));
        }
        let distinct: BTreeSet<&Path> = self.paths.iter().collect();
        if distinct.len() != self.paths.len() {
            return Err(Error::InvalidTopology(format!(
                "session {} repeats a path",
                self.label
            )));
        }
        self.paths.iter().try_for_each(|p| topo.validate_path(p))
    }

    /// Relays strictly inside at least one path.
    pub fn interior_relays(&self) -> BTreeSet<NodeId> {
        self.paths
            .iter()
            .flat_map(|p| p.interior().iter().cloned())
            .collect()
    }

    pub fn nodes(&self) -> BTreeSet<NodeId> {
        self.paths
            .iter()
            .flat_map(|p| p.nodes().iter().cloned())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionPrior {
    entries: Vec<(Session, f64)>,
}

impl SessionPrior {
    /// Probabilities must be positive and sum to 1 within 1e-9. Sums off by
    /// more than rounding are renormalized; otherwise values are kept as
    /// given so that a written prior reads back unchanged.
    pub fn new(entries: Vec<(Session, f64)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidPrior("prior has no sessions".into()));
        }
        if let Some((s, p)) = entries.iter().find(|(_, p)| !(*p > 0.0) || !p.is_finite()) {
            return Err(Error::InvalidPrior(format!(
                "session {} has probability {p}",
                s.label
            )));
        }
        let total: f64 = entries.iter().map(|e| e.1).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidPrior(format!(
                "probabilities sum to {total}, not 1"
            )));
        }
        let labels: BTreeSet<&str> = entries.iter().map(|e| e.0.label.as_str()).collect();
        if labels.len() != entries.len() {
            return Err(Error::InvalidPrior(
                "session labels must be distinct".into(),
            ));
        }
        let scale = if (total - 1.0).abs() <= 1e-12 {
            1.0
        } else {
            total
        };
        let entries = entries.into_iter().map(|(s, p)| (s, p / scale)).collect();
        Ok(SessionPrior { entries })
    }

    pub fn uniform(sessions: Vec<Session>) -> Result<Self> {
        let p = 1.0 / sessions.len() as f64;
        Self::new(sessions.into_iter().map(|s| (s, p)).collect())
    }

    pub fn entries(&self) -> &[(Session, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn probs(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.1).collect()
    }

    /// Union of interior relays over all sessions.
    pub fn relays(&self) -> BTreeSet<NodeId> {
        self.entries
            .iter()
            .flat_map(|(s, _)| s.interior_relays())
            .collect()
    }
}

/// Topology plus a session prior, as read from one config file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Network {
    pub topology: Topology,
    pub prior: SessionPrior,
}

impl Network {
    pub fn new(topology: Topology, prior: SessionPrior) -> Result<Self> {
        for (s, _) in prior.entries() {
            s.validate(&topology)?;
        }
        Ok(Network { topology, prior })
    }

    pub fn read<R: BufRead>(r: R) -> Result<Self> {
        let mut topo = Topology::new();
        let mut sessions: Vec<(Session, f64)> = Vec::new();
        let mut open: Option<(Session, f64)> = None;
        let mut last = 0;
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            let lineno = i + 1;
            last = lineno;
            let err = |msg: String| Error::Parse { line: lineno, msg };
            let text = line.split('#').next().unwrap_or("").trim();
            if text.is_empty() {
                continue;
            }
            let tok: Vec<&str> = text.split_whitespace().collect();
            match (tok[0], open.is_some()) {
                ("node", false) => {
                    if tok.len() != 4 || tok[2] != "cap" {
                        return Err(err("expected `node <id> cap <C>`".into()));
                    }
                    let c: f64 = tok[3]
                        .parse()
                        .map_err(|_| err(format!("bad capacity {:?}", tok[3])))?;
                    topo.add_node(tok[1], c).map_err(|e| err(e.to_string()))?;
                }
                ("edge", false) => {
                    if tok.len() != 3 {
                        return Err(err("expected `edge <from> <to>`".into()));
                    }
                    topo.add_edge(tok[1], tok[2])
                        .map_err(|e| err(e.to_string()))?;
                }
                ("session", false) => {
                    if tok.len() < 2 || tok.len() > 3 {
                        return Err(err("expected `session <probability> [label]`".into()));
                    }
                    let p: f64 = tok[1]
                        .parse()
                        .map_err(|_| err(format!("bad probability {:?}", tok[1])))?;
                    let label = tok
                        .get(2)
                        .map(|s| s.to_string())
                        .unwrap_or_else(|| format!("s{}", sessions.len()));
                    open = Some((Session::new(label, vec![]), p));
                }
                ("path", true) => {
                    if tok.len() < 3 {
                        return Err(err("a path needs at least two nodes".into()));
                    }
                    let path = Path::new(tok[1..].iter().copied());
                    topo.validate_path(&path).map_err(|e| err(e.to_string()))?;
                    open.as_mut().expect("inside session").0.paths.push(path);
                }
                ("end", true) => {
                    let (s, p) = open.take().expect("inside session");
                    s.validate(&topo).map_err(|e| err(e.to_string()))?;
                    sessions.push((s, p));
                }
                (kw, inside) => {
                    let ctx = if inside {
                        "inside a session block"
                    } else {
                        "at top level"
                    };
                    return Err(err(format!("unexpected `{kw}` {ctx}")));
                }
            }
        }
        if open.is_some() {
            return Err(Error::Parse {
                line: last,
                msg: "session block not closed with `end`".into(),
            });
        }
        Network::new(topo, SessionPrior::new(sessions)?)
    }

    pub fn write<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        for (n, c) in self.topology.nodes() {
            writeln!(w, "node {n} cap {c}")?;
        }
        for (a, b) in self.topology.edges() {
            writeln!(w, "edge {a} {b}")?;
        }
        for (s, p) in self.prior.entries() {
            writeln!(w, "session {p} {}", s.label)?;
            for path in &s.paths {
                let names: Vec<&str> = path.nodes().iter().map(|n| n.as_str()).collect();
                writeln!(w, "path {}", names.join(" "))?;
            }
            writeln!(w, "end")?;
        }
        Ok(())
    }
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for k in 0..=p.len() {
            let mut q = p.clone();
            q.insert(k, n - 1);
            out.push(q);
        }
    }
    out.sort();
    out
}

/// The 4x4 two-stage switching network: S1,S2 feed M1 and S3,S4 feed M3;
/// M1 and M3 both connect to M2 and M4; M2 serves D1,D2 and M4 serves D3,D4.
/// Every node has capacity `c`. Sessions are the 24 source/destination
/// pairings, uniformly likely.
pub fn switching_network(c: f64) -> Result<Network> {
    let mut t = Topology::new();
    for k in 1..=4 {
        for prefix in ["S", "M", "D"] {
            t.add_node(format!("{prefix}{k}"), c)?;
        }
    }
    let first = |i: usize| if i <= 2 { "M1" } else { "M3" };
    let last = |d: usize| if d <= 2 { "M2" } else { "M4" };
    for i in 1..=4 {
        t.add_edge(format!("S{i}"), first(i))?;
        t.add_edge(last(i), format!("D{i}"))?;
    }
    for a in ["M1", "M3"] {
        for b in ["M2", "M4"] {
            t.add_edge(a, b)?;
        }
    }
    let sessions = permutations(4)
        .into_iter()
        .map(|perm| {
            let dests: Vec<usize> = perm.iter().map(|&d| d + 1).collect();
            let label = format!(
                "D{}",
                dests.iter().map(|d| d.to_string()).collect::<String>()
            );
            let paths = dests
                .iter()
                .enumerate()
                .map(|(k, &d)| {
                    let i = k + 1;
                    Path::new([
                        format!("S{i}"),
                        first(i).to_string(),
                        last(d).to_string(),
                        format!("D{d}"),
                    ])
                })
                .collect();
            Session::new(label, paths)
        })
        .collect();
    Network::new(t, SessionPrior::uniform(sessions)?)
}

/// One source, one relay, one destination.
pub fn single_relay_network(c_s: f64, c_b: f64) -> Result<Network> {
    let mut t = Topology::new();
    t.add_node("S1", c_s)?;
    t.add_node("B", c_b)?;
    t.add_node("D1", c_b)?;
    t.add_edge("S1", "B")?;
    t.add_edge("B", "D1")?;
    let s = Session::new("s0", vec![Path::new(["S1", "B", "D1"])]);
    Network::new(t, SessionPrior::uniform(vec![s])?)
}

pub fn builtin(name: &str, c: f64) -> Result<Network> {
    match name {
        "switching" => switching_network(c),
        "single" => single_relay_network(c, c),
        other => Err(Error::Config(format!(
            "unknown builtin topology {other:?} (known: switching, single)"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn switching_network_shape() {
        let n = switching_network(2.0).unwrap();
        assert_eq!(n.prior.len(), 24);
        let relays: Vec<String> = n.prior.relays().iter().map(|r| r.to_string()).collect();
        assert_eq!(relays, ["M1", "M2", "M3", "M4"]);
        for (s, p) in n.prior.entries() {
            assert_eq!(s.paths.len(), 4);
            assert!((p - 1.0 / 24.0).abs() < 1e-15);
        }
    }

    #[test]
    fn config_round_trip() {
        let n = switching_network(2.0).unwrap();
        let mut buf = Vec::new();
        n.write(&mut buf).unwrap();
        let back = Network::read(buf.as_slice()).unwrap();
        assert_eq!(back.topology, n.topology);
        assert_eq!(back.prior.len(), 24);
        for ((a, pa), (b, pb)) in back.prior.entries().iter().zip(n.prior.entries()) {
            assert_eq!(a, b);
            assert!((pa - pb).abs() < 1e-15);
        }
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = "node A cap 1\nnode B cap 1\nedge A C\n";
        match Network::read(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let text = "node A cap 1\nnode B cap 1\nedge A B\nsession 1\npath B A\nend\n";
        assert!(matches!(
            Network::read(text.as_bytes()),
            Err(Error::Parse { line: 5, .. })
        ));
        let text = "node A cap 1\nnode B cap 1\nedge A B\nsession 0.5\npath A B\nend\n";
        assert!(matches!(
            Network::read(text.as_bytes()),
            Err(Error::InvalidPrior(_))
        ));
        let text = "node A cap 1\nnode B cap 1\nedge A B\nsession 1\npath A B\n";
        assert!(matches!(
            Network::read(text.as_bytes()),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn rejects_bad_topologies() {
        let mut t = Topology::new();
        t.add_node("A", 1.0).unwrap();
        assert!(t.add_node("A", 1.0).is_err());
        assert!(t.add_node("B", 0.0).is_err());
        assert!(t.add_edge("A", "A").is_err());
        t.add_node("B", 1.0).unwrap();
        t.add_node("C", 1.0).unwrap();
        t.add_edge("A", "B").unwrap();
        t.add_edge("B", "A").unwrap();
        assert!(t.validate_path(&Path::new(["A", "B", "A"])).is_err());
        assert!(t.validate_path(&Path::new(["A", "C"])).is_err());
    }

    #[test]
    fn interior_and_neighbours() {
        let p = Path::new(["S", "M", "N", "D"]);
        assert_eq!(p.interior().len(), 2);
        assert_eq!(p.next_after(&"M".into()), Some(&NodeId::from("N")));
        assert_eq!(p.prev_before(&"S".into()), None);
        assert_eq!(Path::new(["S", "D"]).interior().len(), 0);
    }
}
