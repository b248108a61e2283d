//! Relaying under a long-run mean delay constraint.

use serde::Serialize;

use super::matching::{bgm, MatchResult};
use crate::analytic::solve_delta_star;
use crate::error::{Error, Result};
use crate::point_process::{empirical_rate, Schedule};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AvgDelayOutcome {
    pub result: MatchResult,
    /// Strict delay actually used; infinite means plain FIFO.
    pub delta_star: f64,
    pub rate_in: f64,
    pub rate_out: f64,
}

/// Picks the strict delay whose mean delay equals `mean_target` at the
/// empirical input/output rates, then runs bounded greedy matching with it.
pub fn avg_delay_relay(
    arrivals: &Schedule,
    departures: &Schedule,
    mean_target: f64,
) -> Result<AvgDelayOutcome> {
    if !(mean_target > 0.0) || !mean_target.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "mean delay target must be positive and finite, got {mean_target}"
        )));
    }
    let rate_in = empirical_rate(arrivals)?;
    let rate_out = empirical_rate(departures)?;
    let delta_star = solve_delta_star(mean_target, rate_in, rate_out);
    Ok(AvgDelayOutcome {
        result: bgm(arrivals, departures, delta_star),
        delta_star,
        rate_in,
        rate_out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::point_process::{gen_poisson_stream, GenSpec};

    #[test]
    fn fast_relay_uses_fifo() {
        let a = gen_poisson_stream("s", &GenSpec::new(1.0, 20_000.0, 3), 0).unwrap();
        let d = gen_poisson_stream("b", &GenSpec::new(3.0, 20_000.0, 3), 1).unwrap();
        let out = avg_delay_relay(&a, &d, 1.0).unwrap();
        assert!(out.delta_star.is_infinite());
        // Only packets arriving after the last departure can be lost.
        assert!(out.result.dropped.len() <= 5);
    }

    #[test]
    fn relaxation_never_hurts() {
        let a = gen_poisson_stream("s", &GenSpec::new(1.0, 50_000.0, 4), 0).unwrap();
        let d = gen_poisson_stream("b", &GenSpec::new(1.2, 50_000.0, 4), 1).unwrap();
        let out = avg_delay_relay(&a, &d, 0.5).unwrap();
        assert!(out.delta_star > 0.5);
        assert!(out.result.dropped.len() <= bgm(&a, &d, 0.5).dropped.len());
        let est = out.result.mean_delay_estimate(50);
        assert!(est.within(0.5, 4.0), "{est:?}");
    }

    #[test]
    fn rejects_bad_target() {
        let a = Schedule::new("s", vec![1.0]).unwrap();
        assert!(avg_delay_relay(&a, &a, 0.0).is_err());
        let empty = Schedule::with_horizon("s", vec![], 1.0).unwrap();
        assert!(avg_delay_relay(&empty, &a, 1.0).is_err());
    }
}
