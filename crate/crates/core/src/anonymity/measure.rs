//! Entropy, normalized equivocation, and covert-selection policies.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::network::{observe, CovertSet, Observation, SessionPrior};

/// Shannon entropy in bits of a probability vector (zeros ignored).
pub fn entropy_bits(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| x * x.log2())
        .sum::<f64>()
}

fn entropy_nats(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| x * x.ln())
        .sum::<f64>()
}

pub fn entropy(prior: &SessionPrior) -> f64 {
    entropy_bits(&prior.probs())
}

/// For each session, a distribution over covert sets.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CovertPolicy {
    pub rows: Vec<Vec<(CovertSet, f64)>>,
}

impl CovertPolicy {
    /// Every session uses `b`.
    pub fn deterministic(prior: &SessionPrior, b: &CovertSet) -> Self {
        CovertPolicy {
            rows: prior
                .entries()
                .iter()
                .map(|(s, _)| {
                    let own: CovertSet = b.intersection(&s.interior_relays()).cloned().collect();
                    vec![(own, 1.0)]
                })
                .collect(),
        }
    }

    pub fn validate(&self, prior: &SessionPrior) -> Result<()> {
        if self.rows.len() != prior.len() {
            return Err(Error::InvalidParameter(
                "policy needs one row per session".into(),
            ));
        }
        for (row, (s, _)) in self.rows.iter().zip(prior.entries()) {
            let total: f64 = row.iter().map(|r| r.1).sum();
            if (total - 1.0).abs() > 1e-9 || row.iter().any(|r| r.1 < 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "policy row for {} is not a distribution",
                    s.label
                )));
            }
        }
        Ok(())
    }
}

/// Joint distribution of (session index, observation).
fn joint(prior: &SessionPrior, policy: &CovertPolicy) -> BTreeMap<(Observation, usize), f64> {
    let mut out: BTreeMap<(Observation, usize), f64> = BTreeMap::new();
    for (i, ((s, p), row)) in prior.entries().iter().zip(&policy.rows).enumerate() {
        for (b, q) in row {
            if *q > 0.0 {
                *out.entry((observe(s, b), i)).or_default() += p * q;
            }
        }
    }
    out
}

/// Conditional entropy H(S | observation) in bits and nats.
fn equivocation(prior: &SessionPrior, policy: &CovertPolicy) -> (f64, f64) {
    let j = joint(prior, policy);
    let mut by_obs: BTreeMap<&Observation, Vec<f64>> = BTreeMap::new();
    for ((o, _), &p) in &j {
        by_obs.entry(o).or_default().push(p);
    }
    let (mut bits, mut nats) = (0.0, 0.0);
    for ps in by_obs.values() {
        let tot: f64 = ps.iter().sum();
        let cond: Vec<f64> = ps.iter().map(|p| p / tot).collect();
        bits += tot * entropy_bits(&cond);
        nats += tot * entropy_nats(&cond);
    }
    (bits, nats)
}

/// Normalized equivocation `H(S|Ŝ)/H(S)` of a randomized policy; 1 when the
/// prior has no uncertainty.
pub fn anonymity_of_policy(prior: &SessionPrior, policy: &CovertPolicy) -> Result<f64> {
    policy.validate(prior)?;
    // Same normalization as a single observation class, so that revealing
    // nothing gives exactly 1.
    let total: f64 = prior.probs().iter().sum();
    let probs: Vec<f64> = prior.probs().iter().map(|p| p / total).collect();
    let h_bits = total * entropy_bits(&probs);
    if h_bits <= 0.0 {
        return Ok(1.0);
    }
    let (eq_bits, eq_nats) = equivocation(prior, policy);
    let alpha = eq_bits / h_bits;
    let alpha_nats = eq_nats / (total * entropy_nats(&probs));
    assert!(
        (alpha - alpha_nats).abs() <= 1e-12,
        "anonymity depends on the logarithm base: {alpha} vs {alpha_nats}"
    );
    Ok(alpha.clamp(0.0, 1.0))
}

/// Anonymity when every session uses the same covert set.
pub fn anonymity_of(prior: &SessionPrior, covert: &CovertSet) -> f64 {
    anonymity_of_policy(prior, &CovertPolicy::deterministic(prior, covert))
        .expect("deterministic policy is valid")
}

/// Lower bound on the eavesdropper's error probability at anonymity `alpha`:
/// `(α H(S) - 1) / log2 |support|`, clamped to [0, 1].
pub fn fano_bound(alpha: f64, prior: &SessionPrior) -> f64 {
    if prior.len() <= 1 {
        return 0.0;
    }
    let bound = (alpha * entropy(prior) - 1.0) / (prior.len() as f64).log2();
    bound.clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::switching_network;

    fn set(names: &[&str]) -> CovertSet {
        names.iter().map(|&n| n.into()).collect()
    }

    #[test]
    fn entropy_values() {
        assert!((entropy_bits(&[0.5, 0.5]) - 1.0).abs() < 1e-15);
        assert_eq!(entropy_bits(&[1.0]), 0.0);
        let net = switching_network(2.0).unwrap();
        assert!((entropy(&net.prior) - 24f64.log2()).abs() < 1e-12);
    }

    #[test]
    fn switching_network_anonymity() {
        let net = switching_network(2.0).unwrap();
        let h = 24f64.log2();
        assert!((anonymity_of(&net.prior, &set(&[])) - 2.0 / h).abs() < 1e-12);
        let want = (2.0 / 3.0 + 8.0 / 3.0) / h;
        assert!((anonymity_of(&net.prior, &set(&["M1", "M3"])) - want).abs() < 1e-12);
        assert_eq!(anonymity_of(&net.prior, &set(&["M2", "M4"])), 1.0);
        assert_eq!(
            anonymity_of(&net.prior, &set(&["M1", "M2", "M3", "M4"])),
            1.0
        );
    }

    #[test]
    fn single_session_is_perfectly_anonymous() {
        let net = crate::network::topology::single_relay_network(1.0, 1.0).unwrap();
        assert_eq!(anonymity_of(&net.prior, &set(&[])), 1.0);
        assert_eq!(fano_bound(0.5, &net.prior), 0.0);
    }

    #[test]
    fn fano_values() {
        let net = switching_network(2.0).unwrap();
        assert_eq!(fano_bound(0.0, &net.prior), 0.0);
        let h = 24f64.log2();
        assert!((fano_bound(0.9, &net.prior) - (0.9 * h - 1.0) / h).abs() < 1e-12);
    }

    #[test]
    fn randomized_policy_mixes_observations() {
        let net = switching_network(2.0).unwrap();
        let half = CovertPolicy {
            rows: net
                .prior
                .entries()
                .iter()
                .map(|_| vec![(set(&[]), 0.5), (set(&["M2", "M4"]), 0.5)])
                .collect(),
        };
        let a = anonymity_of_policy(&net.prior, &half).unwrap();
        assert!(a > anonymity_of(&net.prior, &set(&[])) && a < 1.0);
        let bad = CovertPolicy {
            rows: vec![vec![(set(&[]), 0.3)]; 24],
        };
        assert!(anonymity_of_policy(&net.prior, &bad).is_err());
    }
}
