//! Rate loss as a distortion measure, and the distortion-rate function via
//! Blahut-Arimoto.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::network::{
    covert_sum_rate_with, max_sum_rate_visible, observe, CovertParams, CovertSet, EpsCache,
    Observation, SessionPrior, Topology,
};

/// All subsets of `items`, smallest first, each sorted.
pub fn subsets<T: Clone + Ord>(items: &[T]) -> Vec<Vec<T>> {
    let n = items.len();
    let mut out: Vec<Vec<T>> = (0u64..(1u64 << n))
        .map(|mask| {
            items
                .iter()
                .enumerate()
                .filter(|(i, _)| mask >> i & 1 == 1)
                .map(|(_, x)| x.clone())
                .collect()
        })
        .collect();
    out.sort_by(|a: &Vec<T>, b: &Vec<T>| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    out
}

/// `Σ p v / Σ p`, so equal values average back to themselves exactly.
pub fn expectation(p: &[f64], v: &[f64]) -> f64 {
    let num: f64 = p.iter().zip(v).map(|(a, b)| a * b).sum();
    num / p.iter().sum::<f64>()
}

/// Session sum-rates for every session and every subset of its relays.
#[derive(Debug, Clone, Serialize)]
pub struct RateTable {
    pub visible: Vec<f64>,
    /// Per session: covert subset of its own interior relays -> sum-rate.
    pub covert: Vec<BTreeMap<CovertSet, f64>>,
    /// Per session: its interior relays.
    pub relays: Vec<CovertSet>,
    /// Largest standard error among simulated entries.
    pub max_std_error: f64,
}

impl RateTable {
    pub fn build(
        prior: &SessionPrior,
        topo: &Topology,
        params: &CovertParams,
        cache: &EpsCache,
    ) -> Result<Self> {
        let sessions: Vec<_> = prior.entries().iter().map(|e| &e.0).collect();
        let visible: Vec<_> = sessions
            .par_iter()
            .map(|s| max_sum_rate_visible(s, topo))
            .collect::<Result<Vec<_>>>()?;
        let jobs: Vec<(usize, CovertSet)> = sessions
            .iter()
            .enumerate()
            .flat_map(|(i, s)| {
                let relays: Vec<_> = s.interior_relays().into_iter().collect();
                subsets(&relays)
                    .into_iter()
                    .map(move |b| (i, b.into_iter().collect()))
            })
            .collect();
        let rates: Vec<(f64, f64)> = jobs
            .par_iter()
            .map(|(i, b)| {
                covert_sum_rate_with(sessions[*i], b, topo, &visible[*i], params, Some(cache))
                    .map(|r| (r.total, r.std_error))
            })
            .collect::<Result<_>>()?;
        let mut covert = vec![BTreeMap::new(); sessions.len()];
        let mut max_std_error: f64 = 0.0;
        for ((i, b), (r, se)) in jobs.into_iter().zip(rates) {
            covert[i].insert(b, r);
            max_std_error = max_std_error.max(se);
        }
        Ok(RateTable {
            visible: visible.into_iter().map(|v| v.total).collect(),
            covert,
            relays: sessions.iter().map(|s| s.interior_relays()).collect(),
            max_std_error,
        })
    }

    /// Sum-rate of session `i` when the relays in `b` are covert.
    pub fn rate(&self, i: usize, b: &CovertSet) -> f64 {
        let restricted: CovertSet = b.intersection(&self.relays[i]).cloned().collect();
        self.covert[i][&restricted]
    }

    /// `E[Λ^v]`.
    pub fn expected_visible(&self, prior: &SessionPrior) -> f64 {
        expectation(&prior.probs(), &self.visible)
    }
}

/// `d[s][ŝ] = Λ^v(s) - Λ^c(s, B)` where `B` is the covert set that produces
/// observation `ŝ` from session `s`; infinite when no covert set does.
#[derive(Debug, Clone, Serialize)]
pub struct DistortionMatrix {
    pub observations: Vec<Observation>,
    pub d: Vec<Vec<f64>>,
    /// Per session: column -> the covert set producing it.
    pub covert_of: Vec<BTreeMap<usize, CovertSet>>,
}

pub fn distortion_matrix(prior: &SessionPrior, table: &RateTable) -> Result<DistortionMatrix> {
    let mut cells: Vec<Vec<(Observation, CovertSet, f64)>> = Vec::with_capacity(prior.len());
    for (i, (s, _)) in prior.entries().iter().enumerate() {
        let mut seen: BTreeMap<Observation, CovertSet> = BTreeMap::new();
        let mut row = Vec::new();
        for (b, &rate) in &table.covert[i] {
            let o = observe(s, b);
            if let Some(prev) = seen.get(&o) {
                return Err(Error::NonUniqueCover {
                    session: s.label.clone(),
                    first: format!("{prev:?}"),
                    second: format!("{b:?}"),
                });
            }
            seen.insert(o.clone(), b.clone());
            row.push((o, b.clone(), (table.visible[i] - rate).max(0.0)));
        }
        cells.push(row);
    }
    let columns: BTreeMap<Observation, usize> = {
        let mut all: Vec<&Observation> = cells.iter().flatten().map(|c| &c.0).collect();
        all.sort();
        all.dedup();
        all.into_iter()
            .enumerate()
            .map(|(k, o)| (o.clone(), k))
            .collect()
    };
    let m = columns.len();
    let mut d = vec![vec![f64::INFINITY; m]; prior.len()];
    let mut covert_of = vec![BTreeMap::new(); prior.len()];
    for (i, row) in cells.into_iter().enumerate() {
        for (o, b, v) in row {
            let k = columns[&o];
            d[i][k] = v;
            covert_of[i].insert(k, b);
        }
    }
    let mut observations = vec![Observation::new(); m];
    for (o, k) in columns {
        observations[k] = o;
    }
    Ok(DistortionMatrix {
        observations,
        d,
        covert_of,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BaOptions {
    /// Stopping tolerance (nats) on the duality gap of each fixed-slope solve.
    pub tol: f64,
    /// Iteration cap per fixed-slope solve.
    pub max_iter: usize,
    /// Largest accepted certified suboptimality of the returned distortion.
    pub certificate_tol: f64,
}

impl Default for BaOptions {
    fn default() -> Self {
        BaOptions {
            tol: 1e-13,
            max_iter: 20_000,
            certificate_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BaSolution {
    pub distortion: f64,
    pub info_bits: f64,
    /// q[s][ŝ].
    pub q: Vec<Vec<f64>>,
    /// Slope of the last fixed-slope solve.
    pub beta: f64,
    pub iterations: usize,
    /// Distortion minus the best dual lower bound found.
    pub gap: f64,
    pub lower_bound: f64,
}

struct Problem<'a> {
    p: &'a [f64],
    /// Finite entries per row: (column, distortion).
    rows: Vec<Vec<(usize, f64)>>,
    m: usize,
}

#[derive(Clone)]
struct Fixed {
    q: Vec<Vec<f64>>,
    info: f64,
    dist: f64,
    iters: usize,
    /// Lower bound on min over q of I + beta * D (nats).
    f_lower: f64,
    /// Output marginal.
    r: Vec<f64>,
    converged: bool,
    /// Largest minus mean log update factor; zero at the optimum.
    gap: f64,
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let mx = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return mx;
    }
    mx + xs.map(|x| (x - mx).exp()).sum::<f64>().ln()
}

impl Problem<'_> {
    fn dense(&self, sparse: &[Vec<(usize, f64)>]) -> Vec<Vec<f64>> {
        sparse
            .iter()
            .map(|row| {
                let mut v = vec![0.0; self.m];
                for &(c, q) in row {
                    v[c] = q;
                }
                v
            })
            .collect()
    }

    /// Mutual information (nats) and expected distortion of `q`.
    fn evaluate(&self, q: &[Vec<f64>]) -> (f64, f64) {
        let mut marg = vec![0.0; self.m];
        for (ps, row) in self.p.iter().zip(q) {
            for (c, &x) in row.iter().enumerate() {
                marg[c] += ps * x;
            }
        }
        let (mut info, mut dist) = (0.0, 0.0);
        for ((ps, qrow), drow) in self.p.iter().zip(q).zip(&self.rows) {
            for &(c, d) in drow {
                let x = qrow[c];
                // Skips mass that underflows once weighted by the prior.
                if ps * x > 0.0 {
                    info += ps * x * (x / marg[c]).ln();
                    dist += ps * x * d;
                }
            }
        }
        (info.max(0.0), dist)
    }

    /// Lower bound on min over q of I + beta * D (nats), from the output
    /// marginal of `q`. Valid for any `q`.
    fn dual_bound(&self, q: &[Vec<f64>], beta: f64) -> f64 {
        let mut marg = vec![0.0; self.m];
        for (ps, row) in self.p.iter().zip(q) {
            for (c, &x) in row.iter().enumerate() {
                marg[c] += ps * x;
            }
        }
        let log_r: Vec<f64> = marg.iter().map(|x| x.ln()).collect();
        let mut terms: Vec<Vec<f64>> = vec![Vec::new(); self.m];
        let mut obj = 0.0;
        for (ps, row) in self.p.iter().zip(&self.rows) {
            if *ps > 0.0 {
                let l = log_sum_exp(row.iter().map(|&(c, d)| log_r[c] - beta * d));
                if l == f64::NEG_INFINITY {
                    return f64::NEG_INFINITY;
                }
                obj -= ps * l;
                for &(c, d) in row {
                    terms[c].push(ps.ln() - beta * d - l);
                }
            }
        }
        let max_c = terms
            .iter()
            .map(|t| log_sum_exp(t.iter().copied()))
            .fold(f64::NEG_INFINITY, f64::max);
        obj - max_c
    }

    /// Fixed-slope solve. `init` warm-starts the output marginal.
    fn solve(&self, beta: f64, init: Option<&[f64]>, opts: &BaOptions) -> Fixed {
        let s = self
            .solve_linear(beta, init, opts)
            .unwrap_or_else(|| self.solve_log(beta, opts));
        if s.converged {
            return s;
        }
        match self.polish(beta, &s.r, opts) {
            Some(p) if p.gap < s.gap => Fixed {
                iters: s.iters + p.iters,
                f_lower: p.f_lower.max(s.f_lower),
                ..p
            },
            _ => s,
        }
    }

    /// Row-scaled weights `exp(-β (d - row min))` and the row minima.
    fn weights(&self, beta: f64) -> (Vec<Vec<(usize, f64)>>, Vec<f64>) {
        let dmin: Vec<f64> = self
            .rows
            .iter()
            .map(|r| r.iter().map(|e| e.1).fold(f64::INFINITY, f64::min))
            .collect();
        let w = self
            .rows
            .iter()
            .zip(&dmin)
            .map(|(row, &m0)| {
                row.iter()
                    .map(|&(c, d)| (c, (-beta * (d - m0)).exp()))
                    .collect()
            })
            .collect();
        (w, dmin)
    }

    /// Newton's method on the fixed-point equations `c(r) = 1` restricted to
    /// the support of `r0`. Plain iteration crawls near slopes where the
    /// optimal support changes; there this converges in a few steps.
    fn polish(&self, beta: f64, r0: &[f64], opts: &BaOptions) -> Option<Fixed> {
        // Columns still fading out may belong to neither optimum, so also try
        // without them.
        [1e-9, 1e-3]
            .into_iter()
            .filter_map(|cut| self.polish_on(beta, r0, cut, opts))
            .min_by(|a, b| a.gap.total_cmp(&b.gap))
    }

    fn polish_on(&self, beta: f64, r0: &[f64], cut: f64, opts: &BaOptions) -> Option<Fixed> {
        let (w, dmin) = self.weights(beta);
        let top = r0.iter().copied().fold(0.0, f64::max);
        let support: Vec<usize> = (0..self.m).filter(|&c| r0[c] > cut * top).collect();
        let mut pos = vec![usize::MAX; self.m];
        for (k, &c) in support.iter().enumerate() {
            pos[c] = k;
        }
        let n = support.len();
        let mut r = vec![0.0; self.m];
        for &c in &support {
            r[c] = r0[c];
        }
        let ratios = |r: &[f64]| -> Option<(Vec<f64>, Vec<f64>)> {
            let mut z = vec![0.0; w.len()];
            let mut c = vec![0.0; self.m];
            for ((zs, row), ps) in z.iter_mut().zip(&w).zip(self.p) {
                *zs = row.iter().map(|&(k, x)| r[k] * x).sum();
                if *ps > 0.0 {
                    if !(*zs > 0.0) {
                        return None;
                    }
                    for &(k, x) in row {
                        c[k] += ps * x / *zs;
                    }
                }
            }
            Some((z, c))
        };
        let residual = |c: &[f64]| {
            support
                .iter()
                .map(|&k| (c[k] - 1.0).abs())
                .fold(0.0, f64::max)
        };
        let (mut z, mut c) = ratios(&r)?;
        let mut res = residual(&c);
        let mut steps = 0;
        while res > 1e-15 && steps < 50 {
            steps += 1;
            let mut jac = DMatrix::<f64>::zeros(n, n);
            for ((row, zs), ps) in w.iter().zip(&z).zip(self.p) {
                if *ps == 0.0 {
                    continue;
                }
                let k = ps / (zs * zs);
                let on: Vec<(usize, f64)> = row
                    .iter()
                    .filter(|e| pos[e.0] != usize::MAX)
                    .map(|&(c, x)| (pos[c], x))
                    .collect();
                for &(a, xa) in &on {
                    for &(b, xb) in &on {
                        jac[(a, b)] -= k * xa * xb;
                    }
                }
            }
            let g = DVector::from_iterator(n, support.iter().map(|&k| 1.0 - c[k]));
            // The Jacobian has rank at most the number of sessions, so take
            // the least-norm step.
            let delta = jac.svd(true, true).solve(&g, 1e-14).ok()?;
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..40 {
                let mut trial = r.clone();
                for (k, &col) in support.iter().enumerate() {
                    trial[col] += t * delta[k];
                }
                if support.iter().all(|&col| trial[col] > 0.0) {
                    if let Some((z2, c2)) = ratios(&trial) {
                        let res2 = residual(&c2);
                        if res2 < res {
                            (r, z, c, res) = (trial, z2, c2, res2);
                            accepted = true;
                            break;
                        }
                    }
                }
                t *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        let norm: f64 = r.iter().sum();
        r.iter_mut().for_each(|x| *x /= norm);
        self.finish(beta, &w, &dmin, r, steps, f64::NEG_INFINITY, opts)
    }

    /// Policy, objective bound and convergence test at output marginal `r`.
    #[allow(clippy::too_many_arguments)]
    fn finish(
        &self,
        beta: f64,
        w: &[Vec<(usize, f64)>],
        dmin: &[f64],
        r: Vec<f64>,
        iters: usize,
        f_lower: f64,
        opts: &BaOptions,
    ) -> Option<Fixed> {
        let mut c = vec![0.0; self.m];
        let mut obj: f64 = self.p.iter().zip(dmin).map(|(p, m0)| p * beta * m0).sum();
        let mut q_sparse = Vec::with_capacity(w.len());
        for (row, ps) in w.iter().zip(self.p) {
            let zs: f64 = row.iter().map(|&(k, x)| r[k] * x).sum();
            let q: Vec<(usize, f64)> = row.iter().map(|&(k, x)| (k, r[k] * x / zs)).collect();
            if q.iter().any(|e| !e.1.is_finite()) {
                return None;
            }
            if *ps > 0.0 {
                obj -= ps * zs.ln();
                for &(k, x) in row {
                    c[k] += ps * x / zs;
                }
            }
            q_sparse.push(q);
        }
        let max_c = c.iter().copied().fold(0.0, f64::max).ln();
        let mean_c: f64 = (0..self.m)
            .filter(|&k| r[k] > 0.0 && c[k] > 0.0)
            .map(|k| r[k] * c[k] * c[k].ln())
            .sum();
        let q = self.dense(&q_sparse);
        let (info, dist) = self.evaluate(&q);
        if !info.is_finite() || !dist.is_finite() || !obj.is_finite() {
            return None;
        }
        Some(Fixed {
            q,
            info,
            dist,
            iters,
            f_lower: f_lower.max(obj - max_c),
            converged: max_c - mean_c <= opts.tol,
            gap: (max_c - mean_c).max(0.0),
            r,
        })
    }

    /// Multiplicative updates on row-scaled weights. `None` when a row
    /// weight underflows, in which case the log-domain solve takes over.
    fn solve_linear(&self, beta: f64, init: Option<&[f64]>, opts: &BaOptions) -> Option<Fixed> {
        let (w, dmin) = self.weights(beta);
        let mut active = vec![false; self.m];
        for row in &self.rows {
            for &(c, _) in row {
                active[c] = true;
            }
        }
        let n_active = active.iter().filter(|&&a| a).count() as f64;
        let mut r: Vec<f64> = active
            .iter()
            .map(|&a| if a { 1.0 / n_active } else { 0.0 })
            .collect();
        if let Some(init) = init {
            // Keep every active column alive so the support can change.
            let eps = 1e-9;
            for c in 0..self.m {
                if active[c] {
                    r[c] = (1.0 - eps) * init[c] + eps / n_active;
                }
            }
        }
        let base: f64 = self.p.iter().zip(&dmin).map(|(p, m0)| p * beta * m0).sum();
        let mut z = vec![0.0; self.rows.len()];
        let mut cvec = vec![0.0; self.m];
        let mut prev_obj = f64::INFINITY;
        let mut f_lower = f64::NEG_INFINITY;
        let mut iters = 0;
        while iters < opts.max_iter {
            iters += 1;
            for (zs, row) in z.iter_mut().zip(&w) {
                *zs = row.iter().map(|&(c, x)| r[c] * x).sum();
                if !(*zs > 0.0) || !zs.is_finite() {
                    return None;
                }
            }
            cvec.iter_mut().for_each(|x| *x = 0.0);
            for ((ps, row), zs) in self.p.iter().zip(&w).zip(&z) {
                if *ps > 0.0 {
                    let k = ps / zs;
                    for &(c, x) in row {
                        cvec[c] += k * x;
                    }
                }
            }
            let check = iters % 16 == 0 || iters == opts.max_iter;
            if check {
                let obj = base
                    - self
                        .p
                        .iter()
                        .zip(&z)
                        .map(|(p, zs)| if *p > 0.0 { p * zs.ln() } else { 0.0 })
                        .sum::<f64>();
                assert!(
                    obj <= prev_obj + 1e-12 * (1.0 + obj.abs()),
                    "Blahut-Arimoto objective increased: {prev_obj} -> {obj}"
                );
                prev_obj = obj;
                let max_c = cvec.iter().copied().fold(0.0, f64::max).ln();
                let mean_c: f64 = (0..self.m)
                    .filter(|&c| r[c] > 0.0 && cvec[c] > 0.0)
                    .map(|c| r[c] * cvec[c] * cvec[c].ln())
                    .sum();
                f_lower = f_lower.max(obj - max_c);
                if (max_c - mean_c).max(0.0) <= opts.tol {
                    break;
                }
            }
            let mut norm = 0.0;
            for (rc, cc) in r.iter_mut().zip(&cvec) {
                *rc *= cc;
                norm += *rc;
            }
            r.iter_mut().for_each(|x| *x /= norm);
        }
        self.finish(beta, &w, &dmin, r, iters, f_lower, opts)
    }

    fn solve_log(&self, beta: f64, opts: &BaOptions) -> Fixed {
        let mut log_r: Vec<f64> = vec![f64::NEG_INFINITY; self.m];
        let active: Vec<bool> = {
            let mut a = vec![false; self.m];
            for row in &self.rows {
                for &(c, _) in row {
                    a[c] = true;
                }
            }
            a
        };
        let n_active = active.iter().filter(|&&a| a).count() as f64;
        for (c, lr) in log_r.iter_mut().enumerate() {
            if active[c] {
                *lr = -n_active.ln();
            }
        }
        let mut prev_obj = f64::INFINITY;
        let mut q_sparse: Vec<Vec<(usize, f64)>> = Vec::new();
        let mut f_lower = f64::NEG_INFINITY;
        let mut iters = 0;
        let mut converged = false;
        let mut last_gap = f64::INFINITY;
        while iters < opts.max_iter {
            iters += 1;
            // q-step and the objective at the current output marginal.
            let lse: Vec<f64> = self
                .rows
                .iter()
                .map(|row| log_sum_exp(row.iter().map(|&(c, d)| log_r[c] - beta * d)))
                .collect();
            let obj = -self.p.iter().zip(&lse).map(|(p, l)| p * l).sum::<f64>();
            assert!(
                obj <= prev_obj + 1e-12 * (1.0 + obj.abs()),
                "Blahut-Arimoto objective increased: {prev_obj} -> {obj}"
            );
            prev_obj = obj;
            q_sparse = self
                .rows
                .iter()
                .zip(&lse)
                .map(|(row, &l)| {
                    row.iter()
                        .map(|&(c, d)| (c, (log_r[c] - beta * d - l).exp()))
                        .collect()
                })
                .collect();
            // r-step: r_new = r * c with log c(ŝ) = log sum_s p_s e^{-βd - lse_s}.
            let mut terms: Vec<Vec<f64>> = vec![Vec::new(); self.m];
            for ((ps, row), &l) in self.p.iter().zip(&self.rows).zip(&lse) {
                if *ps > 0.0 {
                    for &(c, d) in row {
                        terms[c].push(ps.ln() - beta * d - l);
                    }
                }
            }
            let log_c: Vec<f64> = terms
                .iter()
                .map(|t| log_sum_exp(t.iter().copied()))
                .collect();
            let max_c = log_c.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mean_c: f64 = (0..self.m)
                .filter(|&c| log_r[c] > f64::NEG_INFINITY && log_c[c] > f64::NEG_INFINITY)
                .map(|c| (log_r[c] + log_c[c]).exp() * log_c[c])
                .sum();
            let gap = (max_c - mean_c).max(0.0);
            f_lower = f_lower.max(obj - max_c);
            for c in 0..self.m {
                log_r[c] += log_c[c];
            }
            // Renormalize against rounding drift.
            let norm = log_sum_exp(log_r.iter().copied());
            for lr in log_r.iter_mut() {
                *lr -= norm;
            }
            last_gap = gap;
            if gap <= opts.tol {
                converged = true;
                break;
            }
        }
        let q = self.dense(&q_sparse);
        let (info, dist) = self.evaluate(&q);
        Fixed {
            q,
            info,
            dist,
            iters,
            f_lower,
            r: log_r.iter().map(|x| x.exp()).collect(),
            converged,
            gap: last_gap,
        }
    }
}

/// Distortion-rate function at `rate_bits`: the least expected distortion
/// over conditional distributions with mutual information at most
/// `rate_bits`. Infinite entries of `d` are never used.
///
/// The returned policy satisfies the rate constraint exactly (up to
/// rounding); where the curve is linear it is a mixture of the two
/// fixed-slope solutions bracketing the target.
pub fn blahut_arimoto(
    d: &[Vec<f64>],
    prior: &[f64],
    rate_bits: f64,
    opts: &BaOptions,
) -> Result<BaSolution> {
    if d.len() != prior.len() || d.is_empty() {
        return Err(Error::InvalidParameter(
            "distortion matrix needs one row per session".into(),
        ));
    }
    let m = d[0].len();
    if d.iter().any(|r| r.len() != m) {
        return Err(Error::InvalidParameter(
            "distortion matrix is ragged".into(),
        ));
    }
    if !(rate_bits >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "rate must be >= 0, got {rate_bits}"
        )));
    }
    let total: f64 = prior.iter().sum();
    if (total - 1.0).abs() > 1e-9 || prior.iter().any(|&p| p < 0.0) {
        return Err(Error::InvalidPrior("prior must be a distribution".into()));
    }
    let rows: Vec<Vec<(usize, f64)>> = d
        .iter()
        .map(|r| {
            r.iter()
                .enumerate()
                .filter(|(_, v)| v.is_finite())
                .map(|(c, &v)| (c, v))
                .collect()
        })
        .collect();
    if rows.iter().any(|r: &Vec<(usize, f64)>| r.is_empty()) {
        return Err(Error::InvalidParameter(
            "every row needs a finite distortion".into(),
        ));
    }
    if rows.iter().flatten().any(|e| e.1 < 0.0) {
        return Err(Error::InvalidParameter(
            "distortions must be non-negative".into(),
        ));
    }
    let prob = Problem { p: prior, rows, m };
    let target = rate_bits * std::f64::consts::LN_2;
    let d_min: f64 = prior
        .iter()
        .zip(&prob.rows)
        .map(|(p, r)| p * r.iter().map(|e| e.1).fold(f64::INFINITY, f64::min))
        .sum();

    let mut lb = d_min;
    let mut bound = |f: &Fixed, beta: f64| {
        if beta > 0.0 {
            lb = lb.max((f.f_lower - target) / beta);
        }
    };

    // Zero rate: the best single column usable by every session.
    let constant = (0..m)
        .filter(|&c| {
            d.iter()
                .zip(prior)
                .all(|(r, &p)| p == 0.0 || r[c].is_finite())
        })
        .map(|c| {
            (
                c,
                d.iter()
                    .zip(prior)
                    .map(|(r, p)| if *p > 0.0 { p * r[c] } else { 0.0 })
                    .sum::<f64>(),
            )
        })
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let mut lo = match constant {
        Some((c, dist)) => {
            let q: Vec<Vec<f64>> = (0..d.len())
                .map(|_| {
                    let mut v = vec![0.0; m];
                    v[c] = 1.0;
                    v
                })
                .collect();
            Fixed {
                q,
                info: 0.0,
                dist,
                iters: 0,
                f_lower: 0.0,
                converged: true,
                gap: 0.0,
                r: (0..m).map(|k| if k == c { 1.0 } else { 0.0 }).collect(),
            }
        }
        None => prob.solve(0.0, None, opts),
    };
    let rate_slack = 1e-12;
    if target < lo.info - rate_slack {
        return Err(Error::RateTooLow {
            target: rate_bits,
            min_rate: lo.info / std::f64::consts::LN_2,
        });
    }

    let (mut beta_lo, mut beta_hi) = (0.0, 1.0);
    let mut seen: Vec<Fixed> = vec![lo.clone()];
    let mut betas: Vec<f64> = vec![0.0];
    let mut hi: Option<Fixed> = None;
    if lo.dist > d_min {
        while hi.is_none() {
            let s = prob.solve(beta_hi, seen.last().map(|f| f.r.as_slice()), opts);
            bound(&s, beta_hi);
            seen.push(s.clone());
            betas.push(beta_hi);
            if s.info > target {
                hi = Some(s);
            } else {
                let done = s.dist <= d_min + 1e-14 || beta_hi > 1e15;
                lo = s;
                beta_lo = beta_hi;
                if done {
                    break;
                }
                beta_hi *= 2.0;
            }
        }
    }
    let (bracket_lo, bracket_hi) = (beta_lo, beta_hi);
    let bracketed = hi.is_some();
    if let Some(mut hi) = hi {
        for _ in 0..200 {
            if lo.dist - hi.dist <= 1e-13 || beta_hi - beta_lo <= 1e-12 * beta_hi {
                break;
            }
            let mid = 0.5 * (beta_lo + beta_hi);
            let warm = if lo.iters >= hi.iters { &hi.r } else { &lo.r };
            let s = prob.solve(mid, Some(warm), opts);
            bound(&s, mid);
            seen.push(s.clone());
            betas.push(mid);
            if s.info <= target {
                lo = s;
                beta_lo = mid;
            } else {
                hi = s;
                beta_hi = mid;
            }
        }
    }
    let mut slope = if beta_lo > 0.0 { beta_lo } else { beta_hi };
    let (mut best, mut lb) = certify(&prob, &seen, target, slope, lb, opts);

    // Bisection trusts which side of the critical slope each solve lands on,
    // and a capped solve can land on the wrong one. The dual
    // (F(1/s) - target) * s is concave in s, so golden section on its value
    // recovers the slope without that trust.
    if bracketed && best.dist - lb > opts.certificate_tol {
        let at = |sv: f64, seen: &mut Vec<Fixed>, betas: &mut Vec<f64>, lb: &mut f64| -> f64 {
            let beta = 1.0 / sv;
            let warm = seen
                .iter()
                .zip(betas.iter())
                .min_by(|a, b| (a.1 - beta).abs().total_cmp(&(b.1 - beta).abs()))
                .map(|(f, _)| f.r.clone());
            let f = prob.solve(beta, warm.as_deref(), opts);
            let v = (f.f_lower - target) * sv;
            *lb = lb.max(v);
            seen.push(f);
            betas.push(beta);
            v
        };
        let g = 0.5 * (5f64.sqrt() - 1.0);
        let mut a = 0.5 / bracket_hi;
        let mut b = if bracket_lo > 0.0 {
            2.0 / bracket_lo
        } else {
            8.0 / bracket_hi
        };
        let mut x1 = b - g * (b - a);
        let mut x2 = a + g * (b - a);
        let mut f1 = at(x1, &mut seen, &mut betas, &mut lb);
        let mut f2 = at(x2, &mut seen, &mut betas, &mut lb);
        for _ in 0..200 {
            if b - a <= 1e-12 * b {
                break;
            }
            if f1 >= f2 {
                b = x2;
                x2 = x1;
                f2 = f1;
                x1 = b - g * (b - a);
                f1 = at(x1, &mut seen, &mut betas, &mut lb);
            } else {
                a = x1;
                x1 = x2;
                f1 = f2;
                x2 = a + g * (b - a);
                f2 = at(x2, &mut seen, &mut betas, &mut lb);
            }
        }
        slope = 2.0 / (a + b);
        (best, lb) = certify(&prob, &seen, target, slope, lb, opts);
    }
    let gap = (best.dist - lb).max(0.0);
    let sol = BaSolution {
        distortion: best.dist,
        info_bits: best.info / std::f64::consts::LN_2,
        q: best.q,
        beta: slope,
        iterations: seen.iter().map(|f| f.iters).sum(),
        gap,
        lower_bound: lb,
    };
    check(sol, opts)
}

/// Best primal point among `seen` and the tightest dual bound found for it.
fn certify(
    prob: &Problem,
    seen: &[Fixed],
    target: f64,
    slope: f64,
    mut lb: f64,
    opts: &BaOptions,
) -> (Fixed, f64) {
    let best = best_mixture(prob, seen, target);
    if best.dist > lb {
        for f in std::iter::once(&best).chain(seen) {
            lb = lb.max(best_dual_bound(prob, &f.q, target, slope));
            if best.dist - lb <= opts.certificate_tol * 1e-3 {
                break;
            }
        }
    }
    (best, lb)
}

/// Lowest-distortion policy with information at most `target` among the
/// feasible solves and two-point mixtures of the solves found.
fn best_mixture(prob: &Problem, seen: &[Fixed], target: f64) -> Fixed {
    let mut best = seen
        .iter()
        .filter(|f| f.info <= target)
        .min_by(|a, b| a.dist.total_cmp(&b.dist))
        .expect("the zero-rate start is feasible")
        .clone();
    for a in seen.iter().filter(|f| f.info <= target) {
        for b in seen.iter().filter(|f| f.info > target) {
            if b.dist >= best.dist {
                continue;
            }
            // The chord value bounds the mixture from above by convexity.
            let t0 = (b.info - target) / (b.info - a.info);
            if t0 * a.dist + (1.0 - t0) * b.dist >= best.dist {
                continue;
            }
            let mix = |t: f64| -> Vec<Vec<f64>> {
                a.q.iter()
                    .zip(&b.q)
                    .map(|(x, y)| {
                        x.iter()
                            .zip(y)
                            .map(|(u, v)| t * u + (1.0 - t) * v)
                            .collect()
                    })
                    .collect()
            };
            // Information is convex along the segment: move towards `b`
            // while the rate constraint still holds.
            let (mut feas, mut infeas) = (t0, 0.0);
            for _ in 0..60 {
                let t = 0.5 * (feas + infeas);
                if prob.evaluate(&mix(t)).0 <= target {
                    feas = t;
                } else {
                    infeas = t;
                }
            }
            let q = mix(feas);
            let (info, dist) = prob.evaluate(&q);
            if info <= target && dist < best.dist {
                let r =
                    a.r.iter()
                        .zip(&b.r)
                        .map(|(u, v)| feas * u + (1.0 - feas) * v)
                        .collect();
                best = Fixed {
                    q,
                    info,
                    dist,
                    iters: 0,
                    f_lower: f64::NEG_INFINITY,
                    converged: false,
                    gap: f64::INFINITY,
                    r,
                };
            }
        }
    }
    best
}

/// Largest `(F_L(β) - rate) / β` found by a log-scale scan around `beta`
/// followed by golden-section refinement.
fn best_dual_bound(prob: &Problem, q: &[Vec<f64>], target: f64, beta: f64) -> f64 {
    let g = |lb: f64| {
        let b = lb.exp();
        (prob.dual_bound(q, b) - target) / b
    };
    let center = beta.max(1e-3).ln();
    let step = 0.25;
    let (mut best_x, mut best) = (center, g(center));
    for k in -80..=80 {
        let x = center + k as f64 * step;
        let v = g(x);
        if v > best {
            best = v;
            best_x = x;
        }
    }
    let (mut a, mut b) = (best_x - step, best_x + step);
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let (mut x1, mut x2) = (b - phi * (b - a), a + phi * (b - a));
    let (mut f1, mut f2) = (g(x1), g(x2));
    for _ in 0..100 {
        if f1 > f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - phi * (b - a);
            f1 = g(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + phi * (b - a);
            f2 = g(x2);
        }
    }
    [best, f1, f2]
        .into_iter()
        .filter(|v| v.is_finite())
        .fold(f64::NEG_INFINITY, f64::max)
}

fn check(sol: BaSolution, opts: &BaOptions) -> Result<BaSolution> {
    if sol.gap > opts.certificate_tol {
        return Err(Error::NotConverged {
            iterations: sol.iterations,
            gap: sol.gap,
            distortion: sol.distortion,
            best: sol.q,
        });
    }
    Ok(sol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::switching_network;

    fn toy() -> (Vec<Vec<f64>>, Vec<f64>) {
        (
            vec![
                vec![0.0, 1.0, 3.0],
                vec![2.0, 0.0, 1.0],
                vec![1.0, 2.0, 0.0],
            ],
            vec![0.5, 0.3, 0.2],
        )
    }

    #[test]
    fn lossless_and_zero_rate() {
        let (d, p) = toy();
        let h = crate::anonymity::entropy_bits(&p);
        let full = blahut_arimoto(&d, &p, h + 0.1, &BaOptions::default()).unwrap();
        assert!(full.distortion < 1e-9, "{full:?}");
        let zero = blahut_arimoto(&d, &p, 0.0, &BaOptions::default()).unwrap();
        // Best constant column: col0 -> 0.3*2+0.2*1 = 0.8, col1 -> 0.5+0.4 = 0.9, col2 -> 1.5+0.3 = 1.8.
        assert!((zero.distortion - 0.8).abs() < 1e-12);
        assert!(zero.info_bits < 1e-12);
    }

    #[test]
    fn rate_constraint_holds_and_curve_is_convex() {
        let (d, p) = toy();
        let grid: Vec<f64> = (0..=20).map(|k| k as f64 * 0.075).collect();
        let ds: Vec<f64> = grid
            .iter()
            .map(|&r| {
                let s = blahut_arimoto(&d, &p, r, &BaOptions::default()).unwrap();
                assert!(s.info_bits <= r + 1e-9);
                s.distortion
            })
            .collect();
        for w in ds.windows(2) {
            assert!(w[1] <= w[0] + 1e-10);
        }
        for w in ds.windows(3) {
            assert!(w[0] + w[2] - 2.0 * w[1] >= -1e-8, "{w:?}");
        }
    }

    #[test]
    fn infinite_entries_get_no_mass() {
        let inf = f64::INFINITY;
        let d = vec![vec![0.0, inf, 1.0], vec![inf, 0.0, 1.0]];
        let p = vec![0.5, 0.5];
        for r in [0.0, 0.3, 0.7, 1.0] {
            let s = blahut_arimoto(&d, &p, r, &BaOptions::default()).unwrap();
            assert_eq!(s.q[0][1], 0.0);
            assert_eq!(s.q[1][0], 0.0);
            // Time-sharing between the lossless and constant columns is optimal.
            assert!((s.distortion - (1.0 - r)).abs() < 1e-6, "r={r} {s:?}");
        }
    }

    #[test]
    fn rate_below_minimum_is_an_error() {
        let inf = f64::INFINITY;
        let d = vec![vec![0.0, inf], vec![inf, 0.0]];
        let p = vec![0.5, 0.5];
        assert!(matches!(
            blahut_arimoto(&d, &p, 0.5, &BaOptions::default()),
            Err(Error::RateTooLow { .. })
        ));
        let s = blahut_arimoto(&d, &p, 1.0, &BaOptions::default()).unwrap();
        assert_eq!(s.distortion, 0.0);
    }

    #[test]
    fn switching_matrix_shape() {
        let net = switching_network(2.0).unwrap();
        let mut params = CovertParams::new(1.0);
        params.horizon = 2_000.0;
        let cache = EpsCache::new();
        let table = RateTable::build(&net.prior, &net.topology, &params, &cache).unwrap();
        let dm = distortion_matrix(&net.prior, &table).unwrap();
        for (i, row) in dm.d.iter().enumerate() {
            assert_eq!(row.iter().filter(|v| v.is_finite()).count(), 16);
            let empty = dm.covert_of[i]
                .iter()
                .find(|(_, b)| b.is_empty())
                .unwrap()
                .0;
            assert_eq!(row[*empty], 0.0);
        }
        assert_eq!(table.expected_visible(&net.prior), 4.0);
    }
}
