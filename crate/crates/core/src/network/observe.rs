//! What an eavesdropper sees of a session once some relays are covert.
//!
//! Destinations are never observable. A covert relay breaks every path
//! through it into the part before it and the part from it onward, since its
//! schedule no longer reveals which arrivals it forwards.

use std::collections::BTreeSet;

use crate::point_process::NodeId;

use super::topology::{CovertSet, Path, Session};

pub type Observation = BTreeSet<Path>;

/// One application of the observation map. `None` strips the final node of
/// every path; `Some(b)` splits every path containing `b` at `b`. Empty
/// fragments vanish.
pub fn observe_single(paths: &BTreeSet<Path>, b: Option<&NodeId>) -> BTreeSet<Path> {
    let mut out = BTreeSet::new();
    for p in paths {
        match b {
            None => {
                if p.len() > 1 {
                    out.insert(Path(p.nodes()[..p.len() - 1].to_vec()));
                }
            }
            Some(b) => match p.nodes().iter().position(|n| n == b) {
                None => {
                    out.insert(p.clone());
                }
                Some(k) => {
                    if k > 0 {
                        out.insert(Path(p.nodes()[..k].to_vec()));
                    }
                    out.insert(Path(p.nodes()[k..].to_vec()));
                }
            },
        }
    }
    out
}

/// Destination stripping followed by a split at every covert relay.
pub fn observe(session: &Session, covert: &CovertSet) -> Observation {
    let paths: BTreeSet<Path> = session.paths.iter().cloned().collect();
    let mut obs = observe_single(&paths, None);
    for b in covert {
        obs = observe_single(&obs, Some(b));
    }
    obs
}
