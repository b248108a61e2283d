//! Sum-rate versus anonymity, randomized and deterministic.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::network::SessionPrior;

use super::measure::{entropy, CovertPolicy};
use super::rd::{blahut_arimoto, BaOptions, BaSolution, DistortionMatrix};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub alpha: f64,
    pub rate: f64,
    pub info_bits: f64,
    pub distortion: f64,
    pub policy_id: usize,
    pub status: PointStatus,
    /// Certified suboptimality of `distortion`.
    pub gap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PointStatus {
    Converged,
    /// Best iterate reported; `gap` says how far it may be from optimal.
    NotConverged,
    /// No policy reaches this anonymity.
    Infeasible,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TradeoffCurve {
    pub points: Vec<CurvePoint>,
    pub policies: Vec<CovertPolicy>,
    /// Rate with every relay visible.
    pub r0: f64,
    pub entropy_bits: f64,
}

/// `R(α) = R(0) - D(H(S)(1 - α))` on `alpha_grid`.
pub fn tradeoff_curve(
    prior: &SessionPrior,
    dm: &DistortionMatrix,
    r0: f64,
    alpha_grid: &[f64],
    opts: &BaOptions,
) -> Result<TradeoffCurve> {
    if let Some(a) = alpha_grid.iter().find(|a| !(0.0..=1.0).contains(*a)) {
        return Err(Error::InvalidParameter(format!("alpha {a} outside [0, 1]")));
    }
    let h = entropy(prior);
    let probs = prior.probs();
    let sols: Vec<Result<BaSolution>> = alpha_grid
        .par_iter()
        .map(|&a| blahut_arimoto(&dm.d, &probs, h * (1.0 - a), opts))
        .collect();
    let mut points = Vec::with_capacity(sols.len());
    let mut policies = Vec::with_capacity(sols.len());
    for (k, (sol, &alpha)) in sols.into_iter().zip(alpha_grid).enumerate() {
        let (status, q, distortion, info_bits, gap) = match sol {
            Ok(s) => (
                PointStatus::Converged,
                s.q,
                s.distortion,
                s.info_bits,
                s.gap,
            ),
            Err(Error::NotConverged {
                gap,
                distortion,
                best,
                ..
            }) => (PointStatus::NotConverged, best, distortion, f64::NAN, gap),
            Err(Error::RateTooLow { .. }) => (
                PointStatus::Infeasible,
                vec![],
                f64::NAN,
                f64::NAN,
                f64::NAN,
            ),
            Err(e) => return Err(e),
        };
        let rows = q
            .iter()
            .enumerate()
            .map(|(i, qrow)| {
                dm.covert_of[i]
                    .iter()
                    .filter(|(c, _)| qrow[**c] > 0.0)
                    .map(|(c, b)| (b.clone(), qrow[*c]))
                    .collect()
            })
            .collect();
        policies.push(CovertPolicy { rows });
        points.push(CurvePoint {
            alpha,
            rate: r0 - distortion,
            info_bits,
            distortion,
            policy_id: k,
            status,
            gap,
        });
    }
    Ok(TradeoffCurve {
        points,
        policies,
        r0,
        entropy_bits: h,
    })
}

impl TradeoffCurve {
    pub fn write_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "alpha,rate,info_bits,policy_id")?;
        for p in &self.points {
            writeln!(
                w,
                "{:.12},{:.12},{:.12},{}",
                p.alpha, p.rate, p.info_bits, p.policy_id
            )?;
        }
        Ok(())
    }

    /// One line per (policy, session, covert set) with positive probability.
    pub fn write_policies<W: Write>(&self, w: &mut W, prior: &SessionPrior) -> std::io::Result<()> {
        writeln!(w, "policy_id,session,covert,probability")?;
        for (k, pol) in self.policies.iter().enumerate() {
            for ((s, _), row) in prior.entries().iter().zip(&pol.rows) {
                for (b, q) in row {
                    let names: Vec<&str> = b.iter().map(|n| n.as_str()).collect();
                    writeln!(w, "{k},{},{{{}}},{:.11e}", s.label, names.join(" "), q)?;
                }
            }
        }
        Ok(())
    }
}
