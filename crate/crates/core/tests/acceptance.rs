//! Acceptance suite: one PASS/FAIL line per criterion.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use anonsched::analytic::{loss_fraction, mean_delay};
use anonsched::anonymity::{
    anonymity_of, blahut_arimoto, distortion_matrix, entropy, BaOptions, RateTable,
};
use anonsched::experiments::{
    cmd_region, cmd_relay, cmd_switching, cmd_tradeoff, gen_topology, Check, GenTopologyConfig,
    Outcome, RegionConfig, RelayConfig, RelayMode, SwitchingConfig, TradeoffConfig,
};
use anonsched::network::{switching_network, CovertParams, CovertSet, EpsCache};
use anonsched::point_process::{gen_poisson_stream, GenSpec};
use anonsched::relay::{bgm, bgm_indices, random_walk_oracle};

type Verdict = Result<String, String>;

const RATES: [f64; 3] = [0.5, 1.0, 2.0];
const DELTAS: [f64; 3] = [0.2, 1.0, 5.0];

fn grid() -> Vec<(f64, f64, f64)> {
    let mut v = Vec::new();
    for cs in RATES {
        for cb in RATES {
            for d in DELTAS {
                v.push((cs, cb, d));
            }
        }
    }
    v
}

fn failed_checks(o: &Outcome, names: Option<&[&str]>) -> Vec<String> {
    o.report
        .checks
        .iter()
        .filter(|c| names.is_none_or(|n| n.iter().any(|k| c.name.starts_with(k))))
        .filter(|c| !c.pass)
        .map(describe)
        .collect()
}

fn describe(c: &Check) -> String {
    format!(
        "{} predicted {} got {} (tol {})",
        c.name, c.predicted, c.empirical, c.tolerance
    )
}

fn tmp(name: &str) -> tempfile::TempDir {
    tempfile::Builder::new()
        .prefix(name)
        .tempdir()
        .expect("temp dir")
}

/// BGM drop fraction against the closed form over at least 10^6 arrivals.
fn loss_grid() -> Verdict {
    let mut worst_z: f64 = 0.0;
    let mut worst_abs: f64 = 0.0;
    let mut bad = Vec::new();
    for (k, (cs, cb, d)) in grid().into_iter().enumerate() {
        let horizon = 1.01e6 / cs;
        let seed = 100 + k as u64;
        let a = gen_poisson_stream("S", &GenSpec::new(cs, horizon, seed), 0)
            .map_err(|e| e.to_string())?;
        let b = gen_poisson_stream("B", &GenSpec::new(cb, horizon + d, seed), 1)
            .map_err(|e| e.to_string())?;
        if a.len() < 1_000_000 {
            return Err(format!("only {} arrivals at ({cs},{cb},{d})", a.len()));
        }
        let est = bgm(&a, &b, d).drop_fraction_estimate(100);
        let f = loss_fraction(cs, cb, d);
        let abs = (est.value - f).abs();
        worst_abs = worst_abs.max(abs);
        worst_z = worst_z.max(est.z_score(f).abs());
        if abs > 3.0 * est.std_error || abs > 0.005 {
            bad.push(format!(
                "({cs},{cb},{d}): {} vs {f} ± {}",
                est.value, est.std_error
            ));
        }
        if (cs, cb, d) == (1.0, 1.0, 1.0) && (est.value - 0.5).abs() > 0.005 {
            bad.push(format!("equal-rate case gave {}", est.value));
        }
    }
    if bad.is_empty() {
        Ok(format!(
            "27 points, max |err| {worst_abs:.2e}, max |z| {worst_z:.2}"
        ))
    } else {
        Err(bad.join("; "))
    }
}

/// Random-walk loss and mean interior position against the closed forms.
fn walk_grid() -> Verdict {
    let mut worst_z: f64 = 0.0;
    let mut bad = Vec::new();
    for (k, (cs, cb, d)) in grid().into_iter().enumerate() {
        let w = random_walk_oracle(cs, cb, d, 10_000_000, 500 + k as u64);
        let (f, m) = (loss_fraction(cs, cb, d), mean_delay(d, cs, cb));
        worst_z = worst_z
            .max(w.loss.z_score(f).abs())
            .max(w.mean_interior.z_score(m).abs());
        if !w.loss.within(f, 3.0) {
            bad.push(format!(
                "loss ({cs},{cb},{d}): {} vs {f} ± {}",
                w.loss.value, w.loss.std_error
            ));
        }
        if !w.mean_interior.within(m, 3.0) {
            bad.push(format!(
                "delay ({cs},{cb},{d}): {} vs {m} ± {}",
                w.mean_interior.value, w.mean_interior.std_error
            ));
        }
    }
    if bad.is_empty() {
        Ok(format!("27 points x 1e7 steps, max |z| {worst_z:.2}"))
    } else {
        Err(bad.join("; "))
    }
}

/// Fewest drops over all matchings with delays in `[0, delta]`, each
/// departure carrying at most one arrival.
fn min_drops(a: &[f64], b: &[f64], delta: f64) -> usize {
    fn go(
        i: usize,
        used: u32,
        a: &[f64],
        b: &[f64],
        delta: f64,
        memo: &mut HashMap<(usize, u32), usize>,
    ) -> usize {
        if i == a.len() {
            return 0;
        }
        if let Some(&v) = memo.get(&(i, used)) {
            return v;
        }
        let mut best = 1 + go(i + 1, used, a, b, delta, memo);
        for (j, &d) in b.iter().enumerate() {
            if used & (1 << j) == 0 && d >= a[i] && d - a[i] <= delta {
                best = best.min(go(i + 1, used | (1 << j), a, b, delta, memo));
            }
        }
        memo.insert((i, used), best);
        best
    }
    go(0, 0, a, b, delta, &mut HashMap::new())
}

fn random_epochs(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    // Half-unit lattice so that ties and exact window edges occur.
    let mut v: Vec<f64> = (0..n)
        .map(|_| rng.random_range(0..20) as f64 * 0.5)
        .collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

fn bgm_optimality() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let n = 2000;
    let mut violations = Vec::new();
    for k in 0..n {
        let na = rng.random_range(0..=12);
        let nd = rng.random_range(0..=12);
        let a = random_epochs(&mut rng, na);
        let b = random_epochs(&mut rng, nd);
        let delta = rng.random_range(0..8) as f64 * 0.5;
        let got = bgm_indices(&a, &b, delta).dropped.len();
        let best = min_drops(&a, &b, delta);
        if got != best {
            violations.push(format!("instance {k}: bgm {got} vs optimum {best}"));
        }
    }
    if violations.is_empty() {
        Ok(format!("{n} instances, 0 violations"))
    } else {
        Err(format!(
            "{} violations: {}",
            violations.len(),
            violations[0]
        ))
    }
}

fn region() -> Verdict {
    let dir = tmp("region");
    let cfg = RegionConfig {
        grid: true,
        out: dir.path().to_path_buf(),
        ..RegionConfig::default()
    };
    let o = cmd_region(&cfg).map_err(|e| e.to_string())?;
    let keys = [
        "inner_within_outer",
        "long_delay_sum_gap",
        "s1_first_priority1_",
        "s2_first_priority2_",
    ];
    let bad = failed_checks(&o, Some(&keys));
    let gap = o
        .report
        .checks
        .iter()
        .find(|c| c.name == "long_delay_sum_gap")
        .map(|c| c.empirical);
    if bad.is_empty() {
        Ok(format!(
            "grid containment holds, long-delay sum gap {:.1e}, corners within 3σ",
            gap.unwrap_or(f64::NAN)
        ))
    } else {
        Err(bad.join("; "))
    }
}

fn avg_delay() -> Verdict {
    let mut notes = Vec::new();
    for (cb, label) in [(3.0, "fifo"), (1.2, "bounded")] {
        let dir = tmp("avg");
        let cfg = RelayConfig {
            mode: RelayMode::Avg,
            cs: 1.0,
            cb,
            dbar: Some(1.0),
            horizon: 1.01e6,
            out: dir.path().to_path_buf(),
            ..RelayConfig::default()
        };
        let o = cmd_relay(&cfg).map_err(|e| e.to_string())?;
        let bad = failed_checks(&o, None);
        if !bad.is_empty() {
            return Err(format!("{label}: {}", bad.join("; ")));
        }
        let r = &o.report.results;
        if label == "fifo" {
            let drops = &r["drops"];
            if drops.as_u64() != Some(0) {
                return Err(format!("fifo case dropped {drops} packets"));
            }
            notes.push(format!("C_B-C_S=2: {} arrivals, 0 drops", r["arrivals"]));
        } else {
            notes.push(format!(
                "C_B=1.2: mean delay {:.4}",
                r["mean_delay"]["value"].as_f64().unwrap_or(f64::NAN)
            ));
        }
    }
    Ok(notes.join(", "))
}

fn exact_anonymity() -> Verdict {
    let net = switching_network(2.0).map_err(|e| e.to_string())?;
    let set = |names: &[&str]| -> CovertSet { names.iter().map(|&n| n.into()).collect() };
    let l24 = 24f64.ln();
    let cases = [
        ("none", anonymity_of(&net.prior, &set(&[])), 4f64.ln() / l24),
        (
            "M1,M3",
            anonymity_of(&net.prior, &set(&["M1", "M3"])),
            (4f64.ln() / 3.0 + 2.0 * 16f64.ln() / 3.0) / l24,
        ),
        ("M2,M4", anonymity_of(&net.prior, &set(&["M2", "M4"])), 1.0),
        ("H(S)", entropy(&net.prior), 24f64.log2()),
    ];
    let worst = cases.iter().map(|c| (c.1 - c.2).abs()).fold(0.0, f64::max);
    if worst <= 1e-9 {
        Ok(format!(
            "α(∅)={:.6} α(M1,M3)={:.6} α(M2,M4)={} H={:.6}, max err {worst:.1e}",
            cases[0].1, cases[1].1, cases[2].1, cases[3].1
        ))
    } else {
        Err(cases
            .iter()
            .map(|c| format!("{} {} vs {}", c.0, c.1, c.2))
            .collect::<Vec<_>>()
            .join("; "))
    }
}

fn endpoints() -> Verdict {
    let dir = tmp("switching");
    let cfg = SwitchingConfig {
        out: dir.path().to_path_buf(),
        ..SwitchingConfig::default()
    };
    let o = cmd_switching(&cfg).map_err(|e| e.to_string())?;
    let keys = [
        "visible_rate_2C",
        "rate_none_equals_visible",
        "first_stage_loss",
        "all_covert_rate",
    ];
    let bad = failed_checks(&o, Some(&keys));
    let get = |n: &str| o.report.checks.iter().find(|c| c.name == n).cloned();
    let (Some(none), Some(all)) = (get("rate_none_equals_visible"), get("all_covert_rate")) else {
        return Err("missing checks".into());
    };
    if none.empirical != 4.0 {
        return Err(format!("R(∅) = {}", none.empirical));
    }
    if bad.is_empty() {
        Ok(format!(
            "R(∅)={} exactly, all-covert {:.4} vs {:.4} ± {:.4}",
            none.empirical, all.empirical, all.predicted, all.tolerance
        ))
    } else {
        Err(bad.join("; "))
    }
}

fn info_bits(p: &[f64], q: &[Vec<f64>]) -> f64 {
    let m = q[0].len();
    let marg: Vec<f64> = (0..m)
        .map(|c| p.iter().zip(q).map(|(ps, r)| ps * r[c]).sum())
        .collect();
    let mut i = 0.0;
    for (ps, row) in p.iter().zip(q) {
        for (c, &x) in row.iter().enumerate() {
            if ps * x > 0.0 {
                i += ps * x * (x / marg[c]).log2();
            }
        }
    }
    i
}

/// `min over m of -Σ p_s ln Σ m(ŝ) e^{-β (d(s,ŝ) - min_ŝ d(s,ŝ))}` by a
/// shrinking lattice search over the output simplex; the function is convex
/// in `m`.
fn min_over_simplex(p: &[f64], d: &[Vec<f64>], beta: f64) -> f64 {
    let n = d[0].len();
    let w: Vec<Vec<f64>> = d
        .iter()
        .map(|r| {
            let lo = r.iter().copied().fold(f64::INFINITY, f64::min);
            r.iter().map(|x| (-beta * (x - lo)).exp()).collect()
        })
        .collect();
    let f = |m: &[f64]| -> f64 {
        -p.iter()
            .zip(&w)
            .map(|(ps, r)| ps * r.iter().zip(m).map(|(a, b)| a * b).sum::<f64>().ln())
            .sum::<f64>()
    };
    let free = n - 1;
    let k: i64 = 6;
    let mut center = vec![1.0 / n as f64; n];
    let mut best = f(&center);
    let mut step = 1.0 / (2.0 * k as f64);
    let combos = (2 * k + 1).pow(free as u32);
    let mut trial = vec![0.0; n];
    for _ in 0..40 {
        let mut improved = center.clone();
        for idx in 0..combos {
            let mut rest = idx;
            let mut ok = true;
            let mut sum = 0.0;
            for (c, t) in trial.iter_mut().take(free).enumerate() {
                let off = (rest % (2 * k + 1)) - k;
                rest /= 2 * k + 1;
                *t = center[c] + off as f64 * step;
                ok &= *t >= -1e-15;
                sum += *t;
            }
            trial[free] = 1.0 - sum;
            if !ok || trial[free] < -1e-15 {
                continue;
            }
            trial.iter_mut().for_each(|x| *x = x.max(0.0));
            let v = f(&trial);
            if v < best {
                best = v;
                improved.copy_from_slice(&trial);
            }
        }
        if improved == center {
            step /= 2.0;
        }
        center = improved;
    }
    best
}

/// Distortion-rate value by maximizing the dual over `s = 1/β`, which is
/// concave, with each inner minimum found by grid search.
fn brute_force_dr(p: &[f64], d: &[Vec<f64>], rate_bits: f64) -> f64 {
    let r = rate_bits * std::f64::consts::LN_2;
    let d_min: f64 = p
        .iter()
        .zip(d)
        .map(|(ps, row)| ps * row.iter().copied().fold(f64::INFINITY, f64::min))
        .sum();
    let g = |s: f64| -> f64 {
        if s <= 0.0 {
            return d_min;
        }
        d_min + s * (min_over_simplex(p, d, 1.0 / s) - r)
    };
    let (mut a, mut b) = (0.0, 200.0);
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let (mut x1, mut x2) = (b - phi * (b - a), a + phi * (b - a));
    let (mut f1, mut f2) = (g(x1), g(x2));
    for _ in 0..60 {
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + phi * (b - a);
            f2 = g(x2);
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - phi * (b - a);
            f1 = g(x1);
        }
    }
    f1.max(f2).max(d_min)
}

fn blahut_arimoto_checks() -> Verdict {
    let opts = BaOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst: f64 = 0.0;
    for k in 0..10 {
        let ns = rng.random_range(2..=3);
        let nh = rng.random_range(2..=4);
        let raw: Vec<f64> = (0..ns).map(|_| rng.random_range(0.2..1.0)).collect();
        let tot: f64 = raw.iter().sum();
        let p: Vec<f64> = raw.iter().map(|x| x / tot).collect();
        let d: Vec<Vec<f64>> = (0..ns)
            .map(|_| (0..nh).map(|_| rng.random_range(0.0..3.0)).collect())
            .collect();
        let h = anonsched::anonymity::entropy_bits(&p);
        for frac in [0.2, 0.5, 0.8] {
            let rate = frac * h;
            let sol = blahut_arimoto(&d, &p, rate, &opts)
                .map_err(|e| format!("toy {k}: {e} at rate {rate:.3}"))?;
            if info_bits(&p, &sol.q) > rate + 1e-9 {
                return Err(format!("toy {k}: policy exceeds the rate"));
            }
            let bf = brute_force_dr(&p, &d, rate);
            let err = (sol.distortion - bf).abs();
            worst = worst.max(err);
            if err > 1e-4 {
                return Err(format!(
                    "toy {k} rate {rate:.3}: BA {} vs grid {bf}",
                    sol.distortion
                ));
            }
        }
    }

    let net = switching_network(2.0).map_err(|e| e.to_string())?;
    let table = RateTable::build(
        &net.prior,
        &net.topology,
        &CovertParams::new(1.0),
        &EpsCache::new(),
    )
    .map_err(|e| e.to_string())?;
    let dm = distortion_matrix(&net.prior, &table).map_err(|e| e.to_string())?;
    let probs = net.prior.probs();
    let h = entropy(&net.prior);
    let rates: Vec<f64> = (0..20).map(|k| h * k as f64 / 19.0).collect();
    let mut curve = Vec::new();
    for &r in &rates {
        curve.push(
            blahut_arimoto(&dm.d, &probs, r, &opts)
                .map_err(|e| format!("switching r={r}: {e}"))?
                .distortion,
        );
    }
    let step_up = curve
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::NEG_INFINITY, f64::max);
    let bend = curve
        .windows(3)
        .map(|w| w[0] - 2.0 * w[1] + w[2])
        .fold(f64::INFINITY, f64::min);
    if step_up > 1e-9 || bend < -1e-6 {
        return Err(format!("switching D(r): largest increase {step_up:.2e}, most negative second difference {bend:.2e}"));
    }
    Ok(format!(
        "30 toy solves within {worst:.1e} of grid search; switching D(r) nonincreasing and convex on 20 rates"
    ))
}

fn dominance() -> Verdict {
    let dir = tmp("tradeoff");
    let cfg = TradeoffConfig {
        out: dir.path().to_path_buf(),
        ..TradeoffConfig::default()
    };
    let o = cmd_tradeoff(&cfg).map_err(|e| e.to_string())?;
    let bad = failed_checks(&o, None);
    let dom = o
        .report
        .checks
        .iter()
        .find(|c| c.name == "randomized_dominates_hull")
        .map(|c| c.empirical);
    if bad.is_empty() {
        Ok(format!(
            "21 levels converged, min(randomized - hull) {:.1e}, convex, nonincreasing, R(0)=4, 0<R(1)<4",
            dom.unwrap_or(f64::NAN)
        ))
    } else {
        Err(bad.join("; "))
    }
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .expect("output dir")
        .map(|e| {
            let e = e.expect("entry");
            (
                e.file_name().to_string_lossy().into_owned(),
                fs::read(e.path()).expect("readable"),
            )
        })
        .collect();
    v.sort();
    v
}

fn determinism() -> Verdict {
    type Run = Box<dyn Fn(&Path) -> anonsched::Result<()>>;
    let runs: Vec<(&str, Run)> = vec![
        (
            "relay",
            Box::new(|p| {
                let cfg = RelayConfig {
                    horizon: 20_000.0,
                    dump_match: true,
                    out: p.to_path_buf(),
                    ..RelayConfig::default()
                };
                cmd_relay(&cfg).map(|_| ())
            }),
        ),
        (
            "region",
            Box::new(|p| {
                let cfg = RegionConfig {
                    horizon: 20_000.0,
                    out: p.to_path_buf(),
                    ..RegionConfig::default()
                };
                cmd_region(&cfg).map(|_| ())
            }),
        ),
        (
            "switching",
            Box::new(|p| {
                let cfg = SwitchingConfig {
                    horizon: 5_000.0,
                    out: p.to_path_buf(),
                    ..SwitchingConfig::default()
                };
                cmd_switching(&cfg).map(|_| ())
            }),
        ),
        (
            "tradeoff",
            Box::new(|p| {
                let cfg = TradeoffConfig {
                    horizon: 5_000.0,
                    alphas: Some(vec![0.0, 0.5, 0.8, 0.9, 1.0]),
                    out: p.to_path_buf(),
                    ..TradeoffConfig::default()
                };
                cmd_tradeoff(&cfg).map(|_| ())
            }),
        ),
        (
            "gen-topology",
            Box::new(|p| {
                let cfg = GenTopologyConfig {
                    out: Some(p.join("net.txt")),
                    ..GenTopologyConfig::default()
                };
                gen_topology(&cfg).map(|_| ())
            }),
        ),
    ];
    let mut files = 0;
    for (name, run) in &runs {
        let (a, b) = (tmp("det_a"), tmp("det_b"));
        run(a.path()).map_err(|e| format!("{name}: {e}"))?;
        run(b.path()).map_err(|e| format!("{name}: {e}"))?;
        let (x, y) = (dir_bytes(a.path()), dir_bytes(b.path()));
        if x.is_empty() || x != y {
            return Err(format!("{name}: outputs differ between identical runs"));
        }
        files += x.len();
    }
    Ok(format!(
        "{} commands rerun, {files} files byte-identical",
        runs.len()
    ))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Verdict); 10] = [
        ("strict-delay loss matches closed form", loss_grid),
        ("random-walk oracle agrees", walk_grid),
        ("greedy matching drops the fewest packets", bgm_optimality),
        ("two-source rate region", region),
        ("mean-delay relaying", avg_delay),
        ("switching-network anonymity is exact", exact_anonymity),
        ("throughput endpoints", endpoints),
        ("Blahut-Arimoto correctness", blahut_arimoto_checks),
        ("randomized selection dominates deterministic", dominance),
        ("byte-identical reruns", determinism),
    ];
    let mut all = true;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let verdict = std::panic::catch_unwind(run).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = t.elapsed().as_secs_f64();
        match verdict {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} [{secs:.1}s]", k + 1),
            Err(why) => {
                all = false;
                println!("FAIL {:>2} {name}: {why} [{secs:.1}s]", k + 1);
            }
        }
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
