//! Reflected random walk with barriers at 0 and Δ, an independent model of
//! the delay process seen by a bounded greedy relay.
//!
//! Each step adds `Exp(c_b) - Exp(c_s)` (rates, so means `1/c_b` and `1/c_s`)
//! and clamps to `[0, Δ]`. A clamp at the top is a lost packet, a clamp at 0
//! an idle departure.

use rand_distr::{Distribution, Exp};
use serde::Serialize;

use crate::point_process::seeded_rng;
use crate::stats::{batch_ratio, Estimate};

const BATCHES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WalkStats {
    pub steps: u64,
    pub p_zero: f64,
    pub p_top: f64,
    /// `p_top / (1 - p_zero)`.
    pub loss: Estimate,
    /// Mean position over steps that hit neither barrier.
    pub mean_interior: Estimate,
}

pub fn random_walk_oracle(c_s: f64, c_b: f64, delta: f64, steps: u64, seed: u64) -> WalkStats {
    assert!(steps >= 1, "need at least one step");
    assert!(c_s > 0.0 && c_b > 0.0 && delta >= 0.0);
    let mut rng = seeded_rng(seed, 0);
    let dep = Exp::new(c_b).expect("positive rate");
    let arr = Exp::new(c_s).expect("positive rate");

    let batch_len = steps.div_ceil(BATCHES as u64);
    let mut top_b = Vec::with_capacity(BATCHES);
    let mut nonzero_b = Vec::with_capacity(BATCHES);
    let mut sum_b = Vec::with_capacity(BATCHES);
    let mut interior_b = Vec::with_capacity(BATCHES);
    let (mut zero, mut top) = (0u64, 0u64);

    let mut x = 0.0f64;
    let mut done = 0u64;
    while done < steps {
        let n = batch_len.min(steps - done);
        let (mut bt, mut bz, mut bi, mut bs) = (0u64, 0u64, 0u64, 0.0f64);
        for _ in 0..n {
            let y = x + dep.sample(&mut rng) - arr.sample(&mut rng);
            if y < 0.0 {
                x = 0.0;
                bz += 1;
            } else if y > delta {
                x = delta;
                bt += 1;
            } else {
                x = y;
                bi += 1;
                bs += y;
            }
        }
        zero += bz;
        top += bt;
        top_b.push(bt as f64);
        nonzero_b.push((n - bz) as f64);
        sum_b.push(bs);
        interior_b.push(bi as f64);
        done += n;
    }
    let total = steps as f64;
    WalkStats {
        steps,
        p_zero: zero as f64 / total,
        p_top: top as f64 / total,
        loss: batch_ratio(&top_b, &nonzero_b),
        mean_interior: batch_ratio(&sum_b, &interior_b),
    }
}
