//! Experiment drivers behind the command-line tool.
//!
//! Every driver takes a plain config struct, writes plot-ready CSV plus a JSON
//! report into the output directory, and says whether all of its statistical
//! checks passed. Output depends only on the config (the output directory
//! itself is not recorded), so reruns are byte-identical.

use std::fmt::Write as _;
use std::fs;
use std::io::BufReader;
use std::path::{Path as FsPath, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::analytic::{loss_fraction, RateRegion2};
use crate::anonymity::{
    anonymity_of, best_among, convex_hull_deterministic, deterministic_points, distortion_matrix,
    entropy, expectation, fano_bound, subsets, tradeoff_curve, BaOptions, PointStatus, RateTable,
};
use crate::error::{Error, Result};
use crate::network::topology::single_relay_network;
use crate::network::{
    builtin, simulate_session, switching_network, CovertParams, CovertSet, EpsCache, EpsMode,
    Network, SimConfig,
};
use crate::point_process::{
    empirical_rate, gen_poisson_stream, read_schedules, GenSpec, NodeId, Schedule,
};
use crate::relay::{
    avg_delay_relay, bgm, equal_priority_relay, priority_relay, MatchResult, PriorityOrder,
};
use crate::stats::{batch_ratio, Estimate};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
/// Width of the Monte-Carlo acceptance band, in standard errors.
pub const SIGMAS: f64 = 3.0;
/// Tolerance for exact (non-random) comparisons.
pub const EXACT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub predicted: f64,
    pub empirical: f64,
    pub std_error: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Check {
    /// `|empirical - predicted| <= k σ`.
    pub fn sigma(name: impl Into<String>, predicted: f64, est: Estimate, k: f64) -> Self {
        let tolerance = k * est.std_error;
        Check {
            name: name.into(),
            predicted,
            empirical: est.value,
            std_error: est.std_error,
            tolerance,
            pass: (est.value - predicted).abs() <= tolerance,
        }
    }

    pub fn close(name: impl Into<String>, predicted: f64, value: f64, tolerance: f64) -> Self {
        Check {
            name: name.into(),
            predicted,
            empirical: value,
            std_error: 0.0,
            tolerance,
            pass: (value - predicted).abs() <= tolerance,
        }
    }

    /// `empirical >= bound - tolerance`.
    pub fn at_least(
        name: impl Into<String>,
        bound: f64,
        value: f64,
        std_error: f64,
        tolerance: f64,
    ) -> Self {
        Check {
            name: name.into(),
            predicted: bound,
            empirical: value,
            std_error,
            tolerance,
            pass: value >= bound - tolerance,
        }
    }

    /// `empirical <= bound + tolerance`.
    pub fn at_most(
        name: impl Into<String>,
        bound: f64,
        value: f64,
        std_error: f64,
        tolerance: f64,
    ) -> Self {
        Check {
            name: name.into(),
            predicted: bound,
            empirical: value,
            std_error,
            tolerance,
            pass: value <= bound + tolerance,
        }
    }

    /// `empirical > 0`.
    pub fn positive(name: impl Into<String>, est: Estimate) -> Self {
        Check {
            name: name.into(),
            predicted: 0.0,
            empirical: est.value,
            std_error: est.std_error,
            tolerance: 0.0,
            pass: est.value > 0.0,
        }
    }

    pub fn holds(name: impl Into<String>, ok: bool) -> Self {
        Check {
            name: name.into(),
            predicted: 1.0,
            empirical: if ok { 1.0 } else { 0.0 },
            std_error: 0.0,
            tolerance: 0.0,
            pass: ok,
        }
    }
}

pub fn checks_csv(checks: &[Check]) -> String {
    let mut out = String::from("check,predicted,empirical,std_error,tolerance,pass\n");
    for c in checks {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            c.name,
            c.predicted,
            c.empirical,
            c.std_error,
            c.tolerance,
            if c.pass { "PASS" } else { "FAIL" }
        );
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct Metadata {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub seed: u64,
    pub horizon: Option<f64>,
    pub config: Value,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub metadata: Metadata,
    pub results: Value,
    pub checks: Vec<Check>,
    pub pass: bool,
}

impl Report {
    fn new(
        command: &'static str,
        seed: u64,
        horizon: Option<f64>,
        config: &impl Serialize,
    ) -> Result<Self> {
        Ok(Report {
            metadata: Metadata {
                tool: "anonsched",
                version: VERSION,
                command,
                seed,
                horizon,
                config: serde_json::to_value(config)?,
            },
            results: Value::Null,
            checks: vec![],
            pass: true,
        })
    }

    fn finish(mut self, results: Value, checks: Vec<Check>) -> Self {
        self.pass = checks.iter().all(|c| c.pass);
        self.results = results;
        self.checks = checks;
        self
    }
}

/// A finished run: its report and the files written.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub report: Report,
    pub files: Vec<PathBuf>,
}

impl Outcome {
    pub fn pass(&self) -> bool {
        self.report.pass
    }
}

struct Writer {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Writer {
    fn new(dir: &FsPath) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Writer {
            dir: dir.to_path_buf(),
            files: vec![],
        })
    }

    fn put(&mut self, name: &str, contents: &str) -> Result<()> {
        let p = self.dir.join(name);
        fs::write(&p, contents)?;
        self.files.push(p);
        Ok(())
    }

    fn finish(mut self, name: &str, report: Report) -> Result<Outcome> {
        let mut text = serde_json::to_string_pretty(&report)?;
        text.push('\n');
        self.put(name, &text)?;
        Ok(Outcome {
            report,
            files: self.files,
        })
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "{name} must be a positive number, got {v}"
        )))
    }
}

fn non_negative(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "{name} must be a non-negative number, got {v}"
        )))
    }
}

/// Rate of `epochs` over `[0, horizon]` with a batch-means error over equal
/// time slices.
pub fn rate_by_time(epochs: &[f64], horizon: f64, batches: usize) -> Estimate {
    let k = batches.max(2);
    let width = horizon / k as f64;
    let mut counts = vec![0.0; k];
    for &t in epochs {
        if t <= horizon {
            let b = ((t / width) as usize).min(k - 1);
            counts[b] += 1.0;
        }
    }
    batch_ratio(&counts, &vec![width; k])
}

fn relayed_rate(r: &MatchResult, horizon: f64, batches: usize) -> Estimate {
    let arrivals: Vec<f64> = r.pairs.iter().map(|p| p.0).collect();
    rate_by_time(&arrivals, horizon, batches)
}

fn summed_rate(rs: &[&MatchResult], horizon: f64, batches: usize) -> Estimate {
    let mut all: Vec<f64> = rs
        .iter()
        .flat_map(|r| r.pairs.iter().map(|p| p.0))
        .collect();
    all.sort_by(f64::total_cmp);
    rate_by_time(&all, horizon, batches)
}

// ---------------------------------------------------------------- relay

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RelayMode {
    /// Bounded greedy matching under a strict delay.
    Strict,
    /// Mean-delay constraint.
    Avg,
    /// Two sources, priority relaying.
    Priority,
    /// Two sources, origin-blind relaying.
    Equal,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RelayConfig {
    pub mode: RelayMode,
    /// Source rate (packets/s).
    #[serde(alias = "cs1")]
    pub cs: f64,
    /// Second source rate (packets/s), two-source modes only.
    pub cs2: f64,
    /// Relay rate (packets/s).
    pub cb: f64,
    /// Strict delay bound (s).
    pub delta: f64,
    /// Mean delay target (s), avg mode only.
    pub dbar: Option<f64>,
    /// Arrival window length (s).
    pub horizon: f64,
    pub seed: u64,
    pub batches: usize,
    /// Fraction of the horizon in which source 1 has priority.
    pub share: f64,
    /// Arrival and departure schedules to use instead of generating them.
    pub schedules: Option<PathBuf>,
    /// Also write the match in text form.
    pub dump_match: bool,
    #[serde(skip_serializing)]
    pub out: PathBuf,
}

impl Default for RelayConfig {
    fn default() -> Self {
        RelayConfig {
            mode: RelayMode::Strict,
            cs: 1.0,
            cs2: 1.0,
            cb: 1.0,
            delta: 1.0,
            dbar: None,
            horizon: 1e5,
            seed: 1,
            batches: 100,
            share: 1.0,
            schedules: None,
            dump_match: false,
            out: PathBuf::from("out"),
        }
    }
}

impl RelayConfig {
    fn validate(&self) -> Result<()> {
        positive("cs", self.cs)?;
        positive("cs2", self.cs2)?;
        positive("cb", self.cb)?;
        non_negative("delta", self.delta)?;
        positive("horizon", self.horizon)?;
        if self.batches < 2 {
            return Err(Error::Config("batches must be at least 2".into()));
        }
        if !(0.0..=1.0).contains(&self.share) {
            return Err(Error::Config(format!(
                "share must lie in [0, 1], got {}",
                self.share
            )));
        }
        if let Some(d) = self.dbar {
            positive("dbar", d)?;
        }
        if self.mode == RelayMode::Avg && self.dbar.is_none() {
            return Err(Error::Config(
                "avg mode needs a mean delay target (--dbar)".into(),
            ));
        }
        if let Some(p) = &self.schedules {
            if !p.is_file() {
                return Err(Error::Config(format!(
                    "schedule file {} does not exist",
                    p.display()
                )));
            }
        }
        Ok(())
    }

    fn arrivals(&self, stream: u64, rate: f64, node: &str) -> Result<Schedule> {
        gen_poisson_stream(node, &GenSpec::new(rate, self.horizon, self.seed), stream)
    }

    /// Departures run past the arrival window by `tail` so late arrivals
    /// still see their full window.
    fn departures(&self, tail: f64) -> Result<Schedule> {
        gen_poisson_stream(
            "B",
            &GenSpec::new(self.cb, self.horizon + tail, self.seed),
            1,
        )
    }
}

pub fn cmd_relay(cfg: &RelayConfig) -> Result<Outcome> {
    cfg.validate()?;
    let mut w = Writer::new(&cfg.out)?;
    let report = Report::new("relay", cfg.seed, Some(cfg.horizon), cfg)?;
    let mut checks = Vec::new();
    let results = match cfg.mode {
        RelayMode::Strict => {
            let (a, d, cs, cb) = match &cfg.schedules {
                Some(p) => {
                    let scheds = read_schedules(BufReader::new(fs::File::open(p)?))?;
                    if scheds.len() != 2 {
                        return Err(Error::Config(format!(
                            "{} must hold exactly two schedules (arrivals, then departures), found {}",
                            p.display(),
                            scheds.len()
                        )));
                    }
                    let mut it = scheds.into_iter().map(|s| s.0);
                    let (a, d) = (it.next().expect("two"), it.next().expect("two"));
                    let (cs, cb) = (empirical_rate(&a)?, empirical_rate(&d)?);
                    (a, d, cs, cb)
                }
                None => (
                    cfg.arrivals(0, cfg.cs, "S1")?,
                    cfg.departures(cfg.delta)?,
                    cfg.cs,
                    cfg.cb,
                ),
            };
            let r = bgm(&a, &d, cfg.delta);
            checks.push(Check::holds(
                "valid_matching",
                r.is_valid_for(a.epochs(), d.epochs()),
            ));
            let predicted = loss_fraction(cs, cb, cfg.delta);
            let eps = r.drop_fraction_estimate(cfg.batches);
            checks.push(Check::sigma("loss", predicted, eps, SIGMAS));
            if cfg.dump_match {
                let mut buf = Vec::new();
                r.write_text(&mut buf)?;
                w.put("match.txt", &String::from_utf8(buf).expect("ascii"))?;
            }
            json!({
                "arrivals": r.arrivals(),
                "relayed": r.pairs.len(),
                "dummies": r.dummies.len(),
                "predicted_loss": predicted,
                "empirical_loss": eps,
                "mean_delay": r.mean_delay_estimate(cfg.batches),
            })
        }
        RelayMode::Avg => {
            let dbar = cfg.dbar.expect("validated");
            // Long enough for a FIFO relay to drain its queue.
            let tail = 100.0 * dbar + 1000.0 / cfg.cb;
            let a = cfg.arrivals(0, cfg.cs, "S1")?;
            let d = cfg.departures(tail)?;
            let out = avg_delay_relay(&a, &d, dbar)?;
            let r = &out.result;
            checks.push(Check::holds(
                "valid_matching",
                r.is_valid_for(a.epochs(), d.epochs()),
            ));
            let eps = r.drop_fraction_estimate(cfg.batches);
            let delay = r.mean_delay_estimate(cfg.batches);
            let fifo = out.delta_star.is_infinite();
            let predicted_loss = if out.delta_star.is_finite() {
                loss_fraction(cfg.cs, cfg.cb, out.delta_star)
            } else {
                0.0
            };
            if fifo {
                checks.push(Check::close("drops", 0.0, r.dropped.len() as f64, 0.0));
            } else {
                checks.push(Check::sigma("mean_delay", dbar, delay, SIGMAS));
                checks.push(Check::sigma("loss", predicted_loss, eps, SIGMAS));
            }
            json!({
                "fifo": fifo,
                "delta_star": if out.delta_star.is_finite() { json!(out.delta_star) } else { json!("inf") },
                "rate_in": out.rate_in,
                "rate_out": out.rate_out,
                "arrivals": r.arrivals(),
                "drops": r.dropped.len(),
                "predicted_loss": predicted_loss,
                "empirical_loss": eps,
                "mean_delay": delay,
            })
        }
        RelayMode::Priority => {
            let a1 = cfg.arrivals(0, cfg.cs, "S1")?;
            let a2 = cfg.arrivals(2, cfg.cs2, "S2")?;
            let d = cfg.departures(cfg.delta)?;
            let (s1, s2) = (NodeId::new("S1"), NodeId::new("S2"));
            let order = if cfg.share == 1.0 {
                PriorityOrder::strict(vec![s1, s2])
            } else if cfg.share == 0.0 {
                PriorityOrder::strict(vec![s2, s1])
            } else {
                PriorityOrder::time_shared(vec![
                    (vec![s1.clone(), s2.clone()], cfg.share),
                    (vec![s2, s1], 1.0 - cfg.share),
                ])?
            };
            let m = priority_relay(&[a1, a2], &d, &order, cfg.delta)?;
            let region = RateRegion2::new(cfg.cs, cfg.cs2, cfg.cb, cfg.delta);
            let rates = [
                relayed_rate(&m.streams[0], cfg.horizon, cfg.batches),
                relayed_rate(&m.streams[1], cfg.horizon, cfg.batches),
            ];
            let sum = summed_rate(&[&m.streams[0], &m.streams[1]], cfg.horizon, cfg.batches);
            checks.extend(outer_checks(&region, &rates, sum, ""));
            if cfg.share == 1.0 || cfg.share == 0.0 {
                let top = if cfg.share == 1.0 { 0 } else { 1 };
                checks.extend(corner_checks(&region, top, &rates, ""));
            }
            json!({
                "share": cfg.share,
                "relay_rates": rates,
                "sum_rate": sum,
                "region": region,
            })
        }
        RelayMode::Equal => {
            let a1 = cfg.arrivals(0, cfg.cs, "S1")?;
            let a2 = cfg.arrivals(2, cfg.cs2, "S2")?;
            let d = cfg.departures(cfg.delta)?;
            let m = equal_priority_relay(&[a1, a2], &d, cfg.delta)?;
            let predicted = loss_fraction(cfg.cs + cfg.cs2, cfg.cb, cfg.delta);
            let losses: Vec<Estimate> = m
                .streams
                .iter()
                .map(|r| r.drop_fraction_estimate(cfg.batches))
                .collect();
            for (k, e) in losses.iter().enumerate() {
                checks.push(Check::sigma(
                    format!("loss_stream{}", k + 1),
                    predicted,
                    *e,
                    SIGMAS,
                ));
            }
            json!({
                "predicted_loss": predicted,
                "empirical_loss": losses,
            })
        }
    };
    w.put("relay.csv", &checks_csv(&checks))?;
    w.finish("relay.json", report.finish(results, checks))
}

/// Simulated rates must respect the outer bound.
fn outer_checks(
    region: &RateRegion2,
    rates: &[Estimate; 2],
    sum: Estimate,
    tag: &str,
) -> Vec<Check> {
    vec![
        Check::at_most(
            format!("{tag}outer_cap1"),
            region.caps[0],
            rates[0].value,
            rates[0].std_error,
            SIGMAS * rates[0].std_error,
        ),
        Check::at_most(
            format!("{tag}outer_cap2"),
            region.caps[1],
            rates[1].value,
            rates[1].std_error,
            SIGMAS * rates[1].std_error,
        ),
        Check::at_most(
            format!("{tag}outer_sum"),
            region.sum_cap,
            sum.value,
            sum.std_error,
            SIGMAS * sum.std_error,
        ),
    ]
}

/// With full priority to source `top`, its rate is its single-source cap, the
/// other source still gets through, and the point is no worse than the inner
/// region's corner.
fn corner_checks(region: &RateRegion2, top: usize, rates: &[Estimate; 2], tag: &str) -> Vec<Check> {
    let other = 1 - top;
    let corner = region
        .inner_vertices
        .iter()
        .filter(|v| v[top] >= region.caps[top] - 1e-12)
        .map(|v| v[other])
        .fold(0.0, f64::max);
    vec![
        Check::sigma(
            format!("{tag}priority{}_cap", top + 1),
            region.caps[top],
            rates[top],
            SIGMAS,
        ),
        Check::positive(
            format!("{tag}priority{}_other_positive", top + 1),
            rates[other],
        ),
        Check::at_least(
            format!("{tag}priority{}_inner_corner", top + 1),
            corner,
            rates[other].value,
            rates[other].std_error,
            SIGMAS * rates[other].std_error,
        ),
    ]
}

// ---------------------------------------------------------------- region

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegionConfig {
    #[serde(alias = "cs")]
    pub cs1: f64,
    pub cs2: f64,
    pub cb: f64,
    pub delta: f64,
    pub horizon: f64,
    pub seed: u64,
    pub batches: usize,
    /// Also check containment on the standard parameter grid.
    pub grid: bool,
    #[serde(skip_serializing)]
    pub out: PathBuf,
}

impl Default for RegionConfig {
    fn default() -> Self {
        RegionConfig {
            cs1: 1.0,
            cs2: 1.0,
            cb: 2.0,
            delta: 1.0,
            horizon: 1e5,
            seed: 1,
            batches: 100,
            grid: false,
            out: PathBuf::from("out"),
        }
    }
}

/// Convex hull of `pts`, counter-clockwise from the lowest-leftmost point.
fn convex_hull(pts: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut p = pts.to_vec();
    p.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    p.dedup();
    if p.len() < 3 {
        return p;
    }
    let cross = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| {
        (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
    };
    let mut lower: Vec<[f64; 2]> = Vec::new();
    for &q in &p {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], q) <= 0.0 {
            lower.pop();
        }
        lower.push(q);
    }
    let mut upper: Vec<[f64; 2]> = Vec::new();
    for &q in p.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], q) <= 0.0 {
            upper.pop();
        }
        upper.push(q);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Rate grid and delays on which the inner region must sit inside the outer.
pub const REGION_GRID_RATES: [f64; 3] = [0.5, 1.0, 2.0];
pub const REGION_GRID_DELTAS: [f64; 3] = [0.1, 1.0, 10.0];

/// Containment on the full grid and coincidence of the sum-rate at a long
/// delay. Returns the checks and one CSV row per grid point.
pub fn region_grid_checks() -> (Vec<Check>, String) {
    let mut checks = Vec::new();
    let mut csv = String::from("cs1,cs2,cb,delta,inner_within_outer,max_inner_sum,sum_cap\n");
    let mut contained = true;
    let mut worst_gap: f64 = 0.0;
    for &c1 in &REGION_GRID_RATES {
        for &c2 in &REGION_GRID_RATES {
            for &cb in &REGION_GRID_RATES {
                for &delta in &REGION_GRID_DELTAS {
                    let r = RateRegion2::new(c1, c2, cb, delta);
                    let ok = r.inner_within_outer(1e-12);
                    contained &= ok;
                    let _ = writeln!(
                        csv,
                        "{c1},{c2},{cb},{delta},{ok},{},{}",
                        r.max_inner_sum(),
                        r.sum_cap
                    );
                }
                let long = 50.0 / c1.max(c2).max(cb);
                let r = RateRegion2::new(c1, c2, cb, long);
                worst_gap = worst_gap.max((r.sum_cap - r.max_inner_sum()).abs());
            }
        }
    }
    checks.push(Check::holds("inner_within_outer_grid", contained));
    checks.push(Check::close("long_delay_sum_gap", 0.0, worst_gap, 1e-6));
    (checks, csv)
}

pub fn cmd_region(cfg: &RegionConfig) -> Result<Outcome> {
    positive("cs1", cfg.cs1)?;
    positive("cs2", cfg.cs2)?;
    positive("cb", cfg.cb)?;
    non_negative("delta", cfg.delta)?;
    positive("horizon", cfg.horizon)?;
    let mut w = Writer::new(&cfg.out)?;
    let report = Report::new("region", cfg.seed, Some(cfg.horizon), cfg)?;
    let region = RateRegion2::new(cfg.cs1, cfg.cs2, cfg.cb, cfg.delta);
    w.put("region.csv", &region.to_csv())?;
    let mut checks = vec![Check::holds(
        "inner_within_outer",
        region.inner_within_outer(1e-12),
    )];

    let spec = |rate| GenSpec::new(rate, cfg.horizon, cfg.seed);
    let a1 = gen_poisson_stream("S1", &spec(cfg.cs1), 0)?;
    let a2 = gen_poisson_stream("S2", &spec(cfg.cs2), 2)?;
    let d = gen_poisson_stream(
        "B",
        &GenSpec::new(cfg.cb, cfg.horizon + cfg.delta, cfg.seed),
        1,
    )?;
    let streams = [a1, a2];
    let orders = [
        PriorityOrder::strict(vec!["S1".into(), "S2".into()]),
        PriorityOrder::strict(vec!["S2".into(), "S1".into()]),
    ];
    let mut corners = Vec::new();
    for (top, order) in orders.iter().enumerate() {
        let m = priority_relay(&streams, &d, order, cfg.delta)?;
        let rates = [
            relayed_rate(&m.streams[0], cfg.horizon, cfg.batches),
            relayed_rate(&m.streams[1], cfg.horizon, cfg.batches),
        ];
        let sum = summed_rate(&[&m.streams[0], &m.streams[1]], cfg.horizon, cfg.batches);
        let tag = format!("s{}_first_", top + 1);
        checks.extend(corner_checks(&region, top, &rates, &tag));
        checks.extend(outer_checks(&region, &rates, sum, &tag));
        corners.push(rates);
    }
    let m = equal_priority_relay(&streams, &d, cfg.delta)?;
    let equal = [
        relayed_rate(&m.streams[0], cfg.horizon, cfg.batches),
        relayed_rate(&m.streams[1], cfg.horizon, cfg.batches),
    ];
    for k in 0..2 {
        checks.push(Check::sigma(
            format!("equal_point{}", k + 1),
            region.equal_point[k],
            equal[k],
            SIGMAS,
        ));
    }
    let mut sim_csv = String::from("strategy,lambda1,lambda1_se,lambda2,lambda2_se\n");
    for (name, r) in [
        ("s1_first", &corners[0]),
        ("s2_first", &corners[1]),
        ("equal", &equal),
    ] {
        let _ = writeln!(
            sim_csv,
            "{name},{},{},{},{}",
            r[0].value, r[0].std_error, r[1].value, r[1].std_error
        );
    }
    w.put("region_sim.csv", &sim_csv)?;
    // Inner region from the simulated strategies and time-sharing between them.
    let sim_inner = convex_hull(&[
        [0.0, 0.0],
        [corners[0][0].value, 0.0],
        [corners[0][0].value, corners[0][1].value],
        [equal[0].value, equal[1].value],
        [corners[1][0].value, corners[1][1].value],
        [0.0, corners[1][1].value],
    ]);
    let mut hull_csv = String::from("index,lambda1,lambda2\n");
    for (k, v) in sim_inner.iter().enumerate() {
        let _ = writeln!(hull_csv, "{k},{},{}", v[0], v[1]);
    }
    w.put("region_inner_sim.csv", &hull_csv)?;
    if cfg.grid {
        let (grid_checks, grid_csv) = region_grid_checks();
        checks.extend(grid_checks);
        w.put("region_grid.csv", &grid_csv)?;
    }
    w.put("region_checks.csv", &checks_csv(&checks))?;
    let results = json!({
        "region": region,
        "outer_vertices": region.outer_vertices(),
        "simulated": { "s1_first": corners[0], "s2_first": corners[1], "equal": equal },
        "simulated_inner_vertices": sim_inner,
    });
    w.finish("region.json", report.finish(results, checks))
}

// ---------------------------------------------------------------- networks

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    /// Built-in network name, used when no topology file is given.
    pub network: String,
    pub topology: Option<PathBuf>,
    /// Node capacity of built-in networks (packets/s).
    pub capacity: f64,
    /// Strict delay at covert relays (s).
    pub delta: f64,
    pub eps_mode: EpsMode,
    /// Sources in front of a covert relay send at capacity.
    pub boost: bool,
    /// Simulation length for cascaded covert relays (s).
    pub horizon: f64,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            network: "switching".into(),
            topology: None,
            capacity: 2.0,
            delta: 1.0,
            eps_mode: EpsMode::Simulated,
            boost: true,
            horizon: 20_000.0,
            seed: 1,
        }
    }
}

impl NetworkConfig {
    pub fn load(&self) -> Result<Network> {
        positive("capacity", self.capacity)?;
        non_negative("delta", self.delta)?;
        positive("horizon", self.horizon)?;
        match &self.topology {
            Some(p) => {
                let f = fs::File::open(p).map_err(|e| {
                    Error::Config(format!("cannot open topology file {}: {e}", p.display()))
                })?;
                Network::read(BufReader::new(f))
            }
            None => builtin(&self.network, self.capacity),
        }
    }

    pub fn params(&self) -> CovertParams {
        CovertParams {
            delta: self.delta,
            mode: self.eps_mode,
            boost: self.boost,
            horizon: self.horizon,
            seed: self.seed,
        }
    }
}

fn set_name(b: &CovertSet) -> String {
    let names: Vec<&str> = b.iter().map(|n| n.as_str()).collect();
    format!("{{{}}}", names.join(" "))
}

fn set_of(names: &[&str]) -> CovertSet {
    names.iter().map(|&n| NodeId::new(n)).collect()
}

// ---------------------------------------------------------------- switching

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SwitchingConfig {
    pub capacity: f64,
    pub delta: f64,
    pub eps_mode: EpsMode,
    pub boost: bool,
    pub horizon: f64,
    pub seed: u64,
    #[serde(skip_serializing)]
    pub out: PathBuf,
}

impl Default for SwitchingConfig {
    fn default() -> Self {
        let n = NetworkConfig::default();
        SwitchingConfig {
            capacity: n.capacity,
            delta: n.delta,
            eps_mode: n.eps_mode,
            boost: n.boost,
            horizon: n.horizon,
            seed: n.seed,
            out: PathBuf::from("out"),
        }
    }
}

/// Independent end-to-end simulation of every session with all relays
/// covert: aggregate loss at the first and second covert stage and the mean
/// delivered rate.
struct CascadeSim {
    first: Estimate,
    second: Estimate,
    delivered: Estimate,
}

fn pooled_loss(parts: &[(u64, Estimate)]) -> Estimate {
    let total: f64 = parts.iter().map(|p| p.0 as f64).sum();
    let value = parts.iter().map(|p| p.0 as f64 * p.1.value).sum::<f64>() / total;
    let var = parts
        .iter()
        .map(|p| (p.0 as f64 / total * p.1.std_error).powi(2))
        .sum::<f64>();
    Estimate::new(value, var.sqrt())
}

fn cascade_sim(net: &Network, cfg: &SwitchingConfig, seed: u64) -> Result<CascadeSim> {
    let all = set_of(&["M1", "M2", "M3", "M4"]);
    let sim_cfg = SimConfig {
        boost: cfg.boost,
        ..SimConfig::new(cfg.delta, cfg.horizon, seed)
    };
    let sims = net
        .prior
        .entries()
        .par_iter()
        .map(|(s, _)| simulate_session(s, &all, &net.topology, &sim_cfg))
        .collect::<Result<Vec<_>>>()?;
    let stage = |names: [&str; 2]| {
        let parts: Vec<(u64, Estimate)> = sims
            .iter()
            .flat_map(|s| names.iter().filter_map(|n| s.relays.get(&NodeId::new(*n))))
            .filter(|r| r.arrivals > 0)
            .map(|r| (r.arrivals, r.loss))
            .collect();
        pooled_loss(&parts)
    };
    let probs = net.prior.probs();
    let totals: Vec<Estimate> = sims.iter().map(|s| s.total_delivered()).collect();
    let mean = expectation(&probs, &totals.iter().map(|e| e.value).collect::<Vec<_>>());
    let se = probs
        .iter()
        .zip(&totals)
        .map(|(p, e)| (p * e.std_error).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok(CascadeSim {
        first: stage(["M1", "M3"]),
        second: stage(["M2", "M4"]),
        delivered: Estimate::new(mean, se),
    })
}

pub fn cmd_switching(cfg: &SwitchingConfig) -> Result<Outcome> {
    positive("capacity", cfg.capacity)?;
    non_negative("delta", cfg.delta)?;
    positive("horizon", cfg.horizon)?;
    let mut w = Writer::new(&cfg.out)?;
    let report = Report::new("switching", cfg.seed, Some(cfg.horizon), cfg)?;
    let net = switching_network(cfg.capacity)?;
    let prior = &net.prior;
    let c = cfg.capacity;
    let h = entropy(prior);
    let mut checks = vec![Check::close("entropy_bits", 24f64.log2(), h, EXACT_TOL)];

    let named: [(&str, CovertSet, f64); 4] = [
        ("none", set_of(&[]), 4f64.log2() / h),
        (
            "M1_M3",
            set_of(&["M1", "M3"]),
            (4f64.log2() / 3.0 + 2.0 * 16f64.log2() / 3.0) / h,
        ),
        ("M2_M4", set_of(&["M2", "M4"]), 1.0),
        ("all", set_of(&["M1", "M2", "M3", "M4"]), 1.0),
    ];
    for (name, b, want) in &named {
        checks.push(Check::close(
            format!("alpha_{name}"),
            *want,
            anonymity_of(prior, b),
            EXACT_TOL,
        ));
    }

    let params = CovertParams {
        delta: cfg.delta,
        mode: cfg.eps_mode,
        boost: cfg.boost,
        horizon: cfg.horizon,
        seed: cfg.seed,
    };
    let cache = EpsCache::new();
    let table = RateTable::build(prior, &net.topology, &params, &cache)?;
    let visible = table.expected_visible(prior);
    checks.push(Check::close("visible_rate_2C", 2.0 * c, visible, 0.0));

    let points = deterministic_points(prior, &table, usize::MAX)?;
    let mut csv = String::from("covert,alpha,rate\n");
    for p in &points {
        let _ = writeln!(csv, "{},{},{}", set_name(&p.covert), p.alpha, p.rate);
    }
    w.put("switching_subsets.csv", &csv)?;
    let rate_of = |b: &CovertSet| {
        points
            .iter()
            .find(|p| &p.covert == b)
            .map(|p| p.rate)
            .expect("all subsets")
    };
    checks.push(Check::close(
        "rate_none_equals_visible",
        visible,
        rate_of(&named[0].1),
        0.0,
    ));

    // The all-covert rate against the two-stage product, with the second
    // stage loss measured by an independent simulation.
    let indep = cascade_sim(&net, cfg, cfg.seed.wrapping_add(7919))?;
    let offered = if cfg.boost { 4.0 * c } else { visible };
    let eps1 = loss_fraction(offered / 2.0, c, cfg.delta);
    checks.push(Check::sigma("first_stage_loss", eps1, indep.first, SIGMAS));
    let all = &named[3].1;
    let r_all = rate_of(all);
    let predicted = offered * (1.0 - eps1) * (1.0 - indep.second.value);
    let pred_se = offered * (1.0 - eps1) * indep.second.std_error;
    let combined = (pred_se.powi(2) + table.max_std_error.powi(2)).sqrt();
    checks.push(Check::sigma(
        "all_covert_rate",
        predicted,
        Estimate::new(r_all, combined),
        SIGMAS,
    ));
    let delivered_se = (indep.delivered.std_error.powi(2) + table.max_std_error.powi(2)).sqrt();
    checks.push(Check::sigma(
        "all_covert_rate_vs_simulation",
        indep.delivered.value,
        Estimate::new(r_all, delivered_se),
        SIGMAS,
    ));

    let named_json: Vec<Value> = named
        .iter()
        .map(|(name, b, _)| {
            json!({
                "name": name,
                "covert": set_name(b),
                "alpha": anonymity_of(prior, b),
                "rate": rate_of(b),
            })
        })
        .collect();
    let results = json!({
        "entropy_bits": h,
        "expected_visible_rate": visible,
        "named": named_json,
        "first_stage_loss_closed_form": eps1,
        "independent_simulation": {
            "first_stage_loss": indep.first,
            "second_stage_loss": indep.second,
            "delivered_rate": indep.delivered,
        },
        "predicted_all_covert_rate": predicted,
        "max_rate_std_error": table.max_std_error,
    });
    w.put("switching_checks.csv", &checks_csv(&checks))?;
    w.finish("switching.json", report.finish(results, checks))
}

// ---------------------------------------------------------------- tradeoff

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TradeoffConfig {
    pub network: String,
    pub topology: Option<PathBuf>,
    pub capacity: f64,
    pub delta: f64,
    pub eps_mode: EpsMode,
    pub boost: bool,
    pub horizon: f64,
    pub seed: u64,
    /// Evenly spaced anonymity levels on [0, 1], ignored when `alphas` is set.
    pub alpha_points: usize,
    pub alphas: Option<Vec<f64>>,
    pub relay_cap: usize,
    pub ba_tol: f64,
    pub ba_max_iter: usize,
    pub ba_certificate_tol: f64,
    #[serde(skip_serializing)]
    pub out: PathBuf,
}

impl Default for TradeoffConfig {
    fn default() -> Self {
        let ba = BaOptions::default();
        let n = NetworkConfig::default();
        TradeoffConfig {
            network: n.network,
            topology: n.topology,
            capacity: n.capacity,
            delta: n.delta,
            eps_mode: n.eps_mode,
            boost: n.boost,
            horizon: n.horizon,
            seed: n.seed,
            alpha_points: 21,
            alphas: None,
            relay_cap: crate::anonymity::DEFAULT_RELAY_CAP,
            ba_tol: ba.tol,
            ba_max_iter: ba.max_iter,
            ba_certificate_tol: ba.certificate_tol,
            out: PathBuf::from("out"),
        }
    }
}

impl TradeoffConfig {
    pub fn net(&self) -> NetworkConfig {
        NetworkConfig {
            network: self.network.clone(),
            topology: self.topology.clone(),
            capacity: self.capacity,
            delta: self.delta,
            eps_mode: self.eps_mode,
            boost: self.boost,
            horizon: self.horizon,
            seed: self.seed,
        }
    }

    pub fn grid(&self) -> Result<Vec<f64>> {
        match &self.alphas {
            Some(a) => {
                if a.is_empty() {
                    return Err(Error::Config("alpha list is empty".into()));
                }
                Ok(a.clone())
            }
            None => {
                if self.alpha_points < 2 {
                    return Err(Error::Config("alpha_points must be at least 2".into()));
                }
                let n = self.alpha_points - 1;
                Ok((0..=n).map(|k| k as f64 / n as f64).collect())
            }
        }
    }
}

/// Tolerance of the pointwise dominance of the randomized curve.
pub const DOMINANCE_TOL: f64 = 1e-9;

pub fn cmd_tradeoff(cfg: &TradeoffConfig) -> Result<Outcome> {
    let grid = cfg.grid()?;
    let net_cfg = cfg.net();
    let net = net_cfg.load()?;
    let prior = &net.prior;
    let mut w = Writer::new(&cfg.out)?;
    let report = Report::new("tradeoff", cfg.seed, Some(cfg.horizon), cfg)?;
    let cache = EpsCache::new();
    let table = RateTable::build(prior, &net.topology, &net_cfg.params(), &cache)?;
    let r0 = table.expected_visible(prior);

    let points = deterministic_points(prior, &table, cfg.relay_cap)?;
    let mut subsets_csv = String::from("covert,alpha,rate\n");
    for p in &points {
        let _ = writeln!(
            subsets_csv,
            "{},{},{}",
            set_name(&p.covert),
            p.alpha,
            p.rate
        );
    }
    w.put("subsets.csv", &subsets_csv)?;
    let hull =
        convex_hull_deterministic(&points.iter().map(|p| (p.rate, p.alpha)).collect::<Vec<_>>());

    let dm = distortion_matrix(prior, &table)?;
    let opts = BaOptions {
        tol: cfg.ba_tol,
        max_iter: cfg.ba_max_iter,
        certificate_tol: cfg.ba_certificate_tol,
    };
    let curve = tradeoff_curve(prior, &dm, r0, &grid, &opts)?;
    let mut buf = Vec::new();
    curve.write_csv(&mut buf)?;
    w.put("tradeoff.csv", &String::from_utf8(buf).expect("ascii"))?;
    let mut buf = Vec::new();
    curve.write_policies(&mut buf, prior)?;
    w.put("policies.csv", &String::from_utf8(buf).expect("ascii"))?;

    let mut det_csv = String::from("alpha,best_rate,best_covert,hull_rate\n");
    let mut hull_at = Vec::with_capacity(grid.len());
    for &a in &grid {
        let best = best_among(&points, a).ok();
        let h = hull.eval(a);
        hull_at.push(h);
        let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let _ = writeln!(
            det_csv,
            "{a},{},{},{}",
            fmt(best.as_ref().map(|b| b.rate)),
            best.as_ref()
                .map(|b| set_name(&b.covert))
                .unwrap_or_default(),
            fmt(h)
        );
    }
    w.put("deterministic.csv", &det_csv)?;
    let mut hull_csv = String::from("alpha,rate\n");
    for (a, r) in &hull.vertices {
        let _ = writeln!(hull_csv, "{a},{r}");
    }
    w.put("hull.csv", &hull_csv)?;

    let mut checks = Vec::new();
    for p in &curve.points {
        let ok = p.status == PointStatus::Converged;
        let mut c = Check::holds(format!("ba_converged_alpha_{}", p.alpha), ok);
        c.empirical = p.gap;
        c.predicted = 0.0;
        c.tolerance = opts.certificate_tol;
        checks.push(c);
    }
    let mut worst = f64::INFINITY;
    for (p, h) in curve.points.iter().zip(&hull_at) {
        if let (Some(h), PointStatus::Converged) = (h, p.status) {
            worst = worst.min(p.rate - h);
        }
    }
    if worst.is_finite() {
        checks.push(Check::at_least(
            "randomized_dominates_hull",
            0.0,
            worst,
            0.0,
            DOMINANCE_TOL,
        ));
    }
    let rates: Vec<f64> = curve.points.iter().map(|p| p.rate).collect();
    let alphas_sorted = grid.windows(2).all(|w| w[0] < w[1]);
    if alphas_sorted && rates.iter().all(|r| r.is_finite()) {
        let rise = rates
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::NEG_INFINITY, f64::max);
        checks.push(Check::at_most(
            "nonincreasing",
            0.0,
            rise,
            0.0,
            DOMINANCE_TOL,
        ));
        // Concave in alpha: slopes never increase.
        let slopes: Vec<f64> = grid
            .windows(2)
            .zip(rates.windows(2))
            .map(|(a, r)| (r[1] - r[0]) / (a[1] - a[0]))
            .collect();
        let bend = slopes
            .windows(2)
            .map(|s| s[1] - s[0])
            .fold(f64::NEG_INFINITY, f64::max);
        if bend.is_finite() {
            checks.push(Check::at_most("concave", 0.0, bend, 0.0, 1e-6));
        }
    }
    if grid.first() == Some(&0.0) {
        checks.push(Check::close(
            "rate_at_zero_anonymity",
            r0,
            rates[0],
            EXACT_TOL,
        ));
    }
    if grid.last() == Some(&1.0) {
        let r1 = *rates.last().expect("nonempty");
        checks.push(Check::holds(
            "rate_at_full_anonymity_inside",
            r1 > 0.0 && r1 < r0,
        ));
    }

    let fano: Vec<f64> = grid.iter().map(|&a| fano_bound(a, prior)).collect();
    let results = json!({
        "r0": r0,
        "entropy_bits": curve.entropy_bits,
        "points": curve.points,
        "hull": hull.vertices,
        "fano_error_bound": fano,
        "max_rate_std_error": table.max_std_error,
        "relays": prior.relays().iter().map(|n| n.as_str().to_string()).collect::<Vec<_>>(),
        "subsets": subsets(&prior.relays().into_iter().collect::<Vec<_>>()).len(),
    });
    w.put("tradeoff_checks.csv", &checks_csv(&checks))?;
    w.finish("tradeoff.json", report.finish(results, checks))
}

// ---------------------------------------------------------------- gen-topology

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenTopologyConfig {
    /// `switching` or `single`.
    pub builtin: String,
    pub capacity: f64,
    /// Source and relay capacity of the `single` network.
    pub cs: f64,
    pub cb: f64,
    pub out: Option<PathBuf>,
}

impl Default for GenTopologyConfig {
    fn default() -> Self {
        GenTopologyConfig {
            builtin: "switching".into(),
            capacity: 2.0,
            cs: 1.0,
            cb: 1.0,
            out: None,
        }
    }
}

/// Network config text; also written to `out` when set.
pub fn gen_topology(cfg: &GenTopologyConfig) -> Result<String> {
    let net = match cfg.builtin.as_str() {
        "single" => {
            positive("cs", cfg.cs)?;
            positive("cb", cfg.cb)?;
            single_relay_network(cfg.cs, cfg.cb)?
        }
        other => {
            positive("capacity", cfg.capacity)?;
            builtin(other, cfg.capacity)?
        }
    };
    let mut buf = Vec::new();
    net.write(&mut buf)?;
    let text = String::from_utf8(buf).expect("ascii");
    if let Some(p) = &cfg.out {
        if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        fs::write(p, &text)?;
    }
    Ok(text)
}
