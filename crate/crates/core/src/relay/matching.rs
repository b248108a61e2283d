//! Bounded greedy matching of an arrival stream onto a departure schedule.

use std::io::{BufRead, Write};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::point_process::Schedule;
use crate::stats::{batch_ratio, Estimate};

/// Index-level outcome of a matching: which arrival left at which departure.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IndexMatch {
    /// `(arrival index, departure index)`, increasing in both coordinates.
    pub pairs: Vec<(usize, usize)>,
    pub dropped: Vec<usize>,
    pub dummies: Vec<usize>,
}

/// Bounded greedy match on sorted epoch slices.
///
/// Each departure takes the earliest unmatched arrival in
/// `[departure - delta, departure]`; arrivals whose window has closed before
/// the departure under consideration are dropped and departures with nothing
/// to carry become dummies. Arrival and departure at the same instant match
/// (zero delay is allowed).
pub fn bgm_indices(arrivals: &[f64], departures: &[f64], delta: f64) -> IndexMatch {
    let mut out = IndexMatch {
        pairs: Vec::with_capacity(arrivals.len().min(departures.len())),
        ..Default::default()
    };
    let mut i = 0;
    for (j, &d) in departures.iter().enumerate() {
        while i < arrivals.len() && d - arrivals[i] > delta {
            out.dropped.push(i);
            i += 1;
        }
        if i < arrivals.len() && arrivals[i] <= d {
            out.pairs.push((i, j));
            i += 1;
        } else {
            out.dummies.push(j);
        }
    }
    out.dropped.extend(i..arrivals.len());
    out
}

/// Relayed pairs, dropped arrivals and dummy departures of one relay.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchResult {
    /// `(arrival epoch, departure epoch)`.
    pub pairs: Vec<(f64, f64)>,
    pub dropped: Vec<f64>,
    pub dummies: Vec<f64>,
    pub delay_bound: f64,
}

impl MatchResult {
    pub fn from_indices(
        arrivals: &[f64],
        departures: &[f64],
        m: &IndexMatch,
        delay_bound: f64,
    ) -> Self {
        MatchResult {
            pairs: m
                .pairs
                .iter()
                .map(|&(i, j)| (arrivals[i], departures[j]))
                .collect(),
            dropped: m.dropped.iter().map(|&i| arrivals[i]).collect(),
            dummies: m.dummies.iter().map(|&j| departures[j]).collect(),
            delay_bound,
        }
    }

    pub fn arrivals(&self) -> usize {
        self.pairs.len() + self.dropped.len()
    }

    pub fn drop_fraction(&self) -> f64 {
        self.dropped.len() as f64 / self.arrivals() as f64
    }

    pub fn mean_delay(&self) -> f64 {
        self.pairs.iter().map(|(a, d)| d - a).sum::<f64>() / self.pairs.len() as f64
    }

    /// Per-arrival drop flags in arrival order.
    fn drop_flags(&self) -> Vec<bool> {
        let mut flags = Vec::with_capacity(self.arrivals());
        let (mut p, mut q) = (0, 0);
        while p < self.pairs.len() || q < self.dropped.len() {
            let take_pair = q == self.dropped.len()
                || (p < self.pairs.len() && self.pairs[p].0 <= self.dropped[q]);
            if take_pair {
                flags.push(false);
                p += 1;
            } else {
                flags.push(true);
                q += 1;
            }
        }
        flags
    }

    /// Drop fraction with a batch-means standard error over `batches`
    /// consecutive blocks of arrivals.
    pub fn drop_fraction_estimate(&self, batches: usize) -> Estimate {
        let flags = self.drop_flags();
        let batches = batches.clamp(1, flags.len().max(1));
        let size = flags.len().div_ceil(batches).max(1);
        let (num, den): (Vec<f64>, Vec<f64>) = flags
            .chunks(size)
            .map(|c| (c.iter().filter(|&&f| f).count() as f64, c.len() as f64))
            .unzip();
        batch_ratio(&num, &den)
    }

    /// Mean delay of relayed pairs with a batch-means standard error.
    pub fn mean_delay_estimate(&self, batches: usize) -> Estimate {
        let batches = batches.clamp(1, self.pairs.len().max(1));
        let size = self.pairs.len().div_ceil(batches).max(1);
        let (num, den): (Vec<f64>, Vec<f64>) = self
            .pairs
            .chunks(size)
            .map(|c| (c.iter().map(|(a, d)| d - a).sum::<f64>(), c.len() as f64))
            .unzip();
        batch_ratio(&num, &den)
    }

    /// Checks the relaying invariants against the inputs: delay window,
    /// order preservation, and that pairs/drops and pairs/dummies partition the
    /// arrival and departure schedules.
    pub fn is_valid_for(&self, arrivals: &[f64], departures: &[f64]) -> bool {
        let window = self
            .pairs
            .iter()
            .all(|&(a, d)| d - a >= 0.0 && d - a <= self.delay_bound);
        let fifo = self
            .pairs
            .windows(2)
            .all(|w| w[0].0 < w[1].0 && w[0].1 < w[1].1);
        let mut arr: Vec<f64> = self
            .pairs
            .iter()
            .map(|p| p.0)
            .chain(self.dropped.iter().copied())
            .collect();
        arr.sort_by(f64::total_cmp);
        let mut dep: Vec<f64> = self
            .pairs
            .iter()
            .map(|p| p.1)
            .chain(self.dummies.iter().copied())
            .collect();
        dep.sort_by(f64::total_cmp);
        window && fifo && arr == arrivals && dep == departures
    }

    /// Three-section text dump: `delay_bound`, then `pairs`, `drops` and
    /// `dummies` sections each headed by their length.
    pub fn write_text<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "delay_bound {}", self.delay_bound)?;
        writeln!(w, "pairs {}", self.pairs.len())?;
        for (a, d) in &self.pairs {
            writeln!(w, "{a} {d}")?;
        }
        writeln!(w, "drops {}", self.dropped.len())?;
        for t in &self.dropped {
            writeln!(w, "{t}")?;
        }
        writeln!(w, "dummies {}", self.dummies.len())?;
        for t in &self.dummies {
            writeln!(w, "{t}")?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines().enumerate().filter_map(|(k, l)| match l {
            Ok(s) if s.trim().is_empty() => None,
            other => Some((k + 1, other)),
        });
        let mut next = |what: &str| -> Result<(usize, String)> {
            match lines.next() {
                Some((k, Ok(s))) => Ok((k, s)),
                Some((_, Err(e))) => Err(e.into()),
                None => Err(Error::Parse {
                    line: 0,
                    msg: format!("unexpected end of input, expected {what}"),
                }),
            }
        };
        let parse_f = |k: usize, s: &str| -> Result<f64> {
            s.parse().map_err(|_| Error::Parse {
                line: k,
                msg: format!("bad number `{s}`"),
            })
        };
        let header = |k: usize, s: &str, key: &str| -> Result<String> {
            match s.split_whitespace().collect::<Vec<_>>().as_slice() {
                [h, v] if *h == key => Ok(v.to_string()),
                _ => Err(Error::Parse {
                    line: k,
                    msg: format!("expected `{key} <value>`"),
                }),
            }
        };
        let (k, s) = next("delay_bound")?;
        let delay_bound = parse_f(k, &header(k, &s, "delay_bound")?)?;
        let count = |k: usize, v: String| -> Result<usize> {
            v.parse().map_err(|_| Error::Parse {
                line: k,
                msg: format!("bad count `{v}`"),
            })
        };
        let (k, s) = next("pairs")?;
        let n = count(k, header(k, &s, "pairs")?)?;
        let mut pairs = Vec::with_capacity(n);
        for _ in 0..n {
            let (k, s) = next("pair")?;
            let mut it = s.split_whitespace();
            match (it.next(), it.next(), it.next()) {
                (Some(a), Some(d), None) => pairs.push((parse_f(k, a)?, parse_f(k, d)?)),
                _ => {
                    return Err(Error::Parse {
                        line: k,
                        msg: "expected `<arrival> <departure>`".into(),
                    })
                }
            }
        }
        let mut section = |key: &str| -> Result<Vec<f64>> {
            let (k, s) = next(key)?;
            let n = count(k, header(k, &s, key)?)?;
            (0..n)
                .map(|_| {
                    let (k, s) = next("epoch")?;
                    parse_f(k, s.trim())
                })
                .collect()
        };
        let dropped = section("drops")?;
        let dummies = section("dummies")?;
        Ok(MatchResult {
            pairs,
            dropped,
            dummies,
            delay_bound,
        })
    }
}

/// Bounded greedy match between two schedules.
pub fn bgm(arrivals: &Schedule, departures: &Schedule, delta: f64) -> MatchResult {
    bgm_epochs(arrivals.epochs(), departures.epochs(), delta)
}

pub fn bgm_epochs(arrivals: &[f64], departures: &[f64], delta: f64) -> MatchResult {
    assert!(delta >= 0.0, "delay bound must be non-negative");
    let m = bgm_indices(arrivals, departures, delta);
    MatchResult::from_indices(arrivals, departures, &m, delta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Largest order-preserving matching with delays in `[0, delta]`, by
    /// dynamic programming over prefixes.
    fn max_pairs_dp(a: &[f64], d: &[f64], delta: f64) -> usize {
        let mut best = vec![vec![0usize; d.len() + 1]; a.len() + 1];
        for i in 1..=a.len() {
            for j in 1..=d.len() {
                let gap = d[j - 1] - a[i - 1];
                let take = if (0.0..=delta).contains(&gap) {
                    best[i - 1][j - 1] + 1
                } else {
                    0
                };
                best[i][j] = take.max(best[i - 1][j]).max(best[i][j - 1]);
            }
        }
        best[a.len()][d.len()]
    }

    #[test]
    fn every_arrival_has_a_window() {
        let r = bgm_epochs(&[1.0, 2.0], &[1.5, 2.5], 1.0);
        assert_eq!(r.pairs, vec![(1.0, 1.5), (2.0, 2.5)]);
        assert!(r.dropped.is_empty() && r.dummies.is_empty());
    }

    #[test]
    fn missed_window_drops_and_dummies() {
        let r = bgm_epochs(&[1.0], &[5.0], 1.0);
        assert!(r.pairs.is_empty());
        assert_eq!(r.dropped, vec![1.0]);
        assert_eq!(r.dummies, vec![5.0]);
    }

    #[test]
    fn tie_is_a_zero_delay_match() {
        let r = bgm_epochs(&[2.0], &[2.0], 0.0);
        assert_eq!(r.pairs, vec![(2.0, 2.0)]);
        // Boundary of the window is inclusive.
        let r = bgm_epochs(&[1.0], &[2.0], 1.0);
        assert_eq!(r.pairs, vec![(1.0, 2.0)]);
    }

    #[test]
    fn degenerate_inputs() {
        let r = bgm_epochs(&[], &[1.0, 2.0], 1.0);
        assert_eq!(r.dummies.len(), 2);
        let r = bgm_epochs(&[1.0, 2.0], &[], 1.0);
        assert_eq!(r.dropped.len(), 2);
        let r = bgm_epochs(&[1.0, 2.0], &[0.5], f64::INFINITY);
        assert_eq!(r.dummies, vec![0.5]);
    }

    #[test]
    fn text_round_trip() {
        let r = bgm_epochs(&[0.1, 0.2, 3.0, 7.25], &[0.15, 0.4, 5.0, 7.5], 0.3);
        let mut buf = Vec::new();
        r.write_text(&mut buf).unwrap();
        let back = MatchResult::read_text(buf.as_slice()).unwrap();
        assert_eq!(back, r);
        let inf = bgm_epochs(&[1.0], &[2.0], f64::INFINITY);
        let mut buf = Vec::new();
        inf.write_text(&mut buf).unwrap();
        assert_eq!(MatchResult::read_text(buf.as_slice()).unwrap(), inf);
        assert!(MatchResult::read_text("delay_bound 1\npairs 2\n1 2\n".as_bytes()).is_err());
    }

    #[test]
    fn batch_estimate_counts_every_arrival() {
        let r = bgm_epochs(&[0.0, 1.0, 2.0, 3.0], &[0.5, 3.1], 0.2);
        let e = r.drop_fraction_estimate(2);
        assert_eq!(e.value, r.drop_fraction());
        assert_eq!(r.drop_fraction(), 0.75);
    }

    fn sorted_epochs(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0u32..400, 0..=max_len).prop_map(|mut v| {
            v.sort_unstable();
            v.dedup();
            v.into_iter().map(|k| k as f64 * 0.05).collect()
        })
    }

    proptest! {
        #[test]
        fn invariants_and_drop_minimality(
            a in sorted_epochs(12),
            d in sorted_epochs(12),
            delta in 0u32..40,
        ) {
            let delta = delta as f64 * 0.1;
            let r = bgm_epochs(&a, &d, delta);
            prop_assert!(r.is_valid_for(&a, &d));
            prop_assert_eq!(r.pairs.len(), max_pairs_dp(&a, &d, delta));
        }

        #[test]
        fn drops_nonincreasing_in_delay(
            a in sorted_epochs(30),
            d in sorted_epochs(30),
            lo in 0u32..30,
            extra in 0u32..30,
        ) {
            let small = bgm_epochs(&a, &d, lo as f64 * 0.1);
            let large = bgm_epochs(&a, &d, (lo + extra) as f64 * 0.1);
            prop_assert!(large.dropped.len() <= small.dropped.len());
        }
    }
}
