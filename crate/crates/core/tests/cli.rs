use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use anonsched::network::Network;
use serde_json::Value;

fn anonsched(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_anonsched"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    v.sort();
    v
}

fn report(dir: &Path, name: &str) -> Value {
    serde_json::from_slice(&fs::read(dir.join(name)).unwrap()).unwrap()
}

fn assert_reruns_identical(args: &[&str]) {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for dir in [&a, &b] {
        let mut full = args.to_vec();
        full.extend(["--out", dir.path().to_str().unwrap()]);
        let o = anonsched(&full);
        assert_eq!(
            o.status.code(),
            Some(0),
            "{}",
            String::from_utf8_lossy(&o.stdout)
        );
    }
    let (fa, fb) = (files(a.path()), files(b.path()));
    assert!(!fa.is_empty());
    assert_eq!(fa, fb, "outputs of {args:?} differ between runs");
}

#[test]
fn relay_modes_rerun_byte_identical() {
    assert_reruns_identical(&[
        "relay",
        "--mode",
        "strict",
        "--horizon",
        "5000",
        "--seed",
        "9",
        "--dump-match",
    ]);
    assert_reruns_identical(&[
        "relay",
        "--mode",
        "avg",
        "--cs",
        "1",
        "--cb",
        "1.5",
        "--dbar",
        "1",
        "--horizon",
        "5000",
    ]);
    assert_reruns_identical(&[
        "relay",
        "--mode",
        "priority",
        "--horizon",
        "5000",
        "--share",
        "0.3",
    ]);
    assert_reruns_identical(&["region", "--horizon", "5000"]);
}

#[test]
fn network_commands_rerun_byte_identical() {
    assert_reruns_identical(&["switching", "--horizon", "2000"]);
    assert_reruns_identical(&["tradeoff", "--horizon", "2000", "--alphas", "0,0.5,0.8,1"]);
}

#[test]
fn seed_changes_output() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for (dir, seed) in [(&a, "1"), (&b, "2")] {
        let o = anonsched(&[
            "relay",
            "--horizon",
            "2000",
            "--seed",
            seed,
            "--out",
            dir.path().to_str().unwrap(),
        ]);
        assert!(o.status.code().is_some());
    }
    assert_ne!(files(a.path()), files(b.path()));
}

#[test]
fn config_file_overrides_flags_and_flags_override_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let out_s = out.to_str().unwrap();

    anonsched(&["relay", "--horizon", "2000", "--out", out_s]);
    assert_eq!(report(&out, "relay.json")["metadata"]["seed"], 1);

    anonsched(&["relay", "--horizon", "2000", "--seed", "3", "--out", out_s]);
    assert_eq!(report(&out, "relay.json")["metadata"]["seed"], 3);

    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "seed = 5\ncb = 2.0\n").unwrap();
    anonsched(&[
        "relay",
        "--horizon",
        "2000",
        "--seed",
        "3",
        "--cb",
        "1.5",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_s,
    ]);
    let r = report(&out, "relay.json");
    assert_eq!(r["metadata"]["seed"], 5);
    assert_eq!(r["metadata"]["config"]["cb"], 2.0);
    assert_eq!(r["metadata"]["config"]["horizon"], 2000.0);
}

#[test]
fn bad_input_exits_with_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "no_such_key = 1\n").unwrap();
    let o = anonsched(&[
        "relay",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no_such_key"));

    let o = anonsched(&[
        "relay",
        "--mode",
        "bogus",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let o = anonsched(&["relay", "--cb", "-1", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn generated_topology_reads_back() {
    let o = anonsched(&["gen-topology", "--builtin", "switching", "--capacity", "2"]);
    assert_eq!(o.status.code(), Some(0));
    let net = Network::read(o.stdout.as_slice()).unwrap();
    assert_eq!(net.prior.len(), 24);
    assert_eq!(net, anonsched::network::switching_network(2.0).unwrap());

    let dir = tempfile::tempdir().unwrap();
    let topo = dir.path().join("net.txt");
    fs::write(&topo, &o.stdout).unwrap();
    let out = dir.path().join("o");
    let o = anonsched(&[
        "tradeoff",
        "--topology",
        topo.to_str().unwrap(),
        "--eps-mode",
        "analytic",
        "--alphas",
        "0,1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stdout)
    );
    let csv = fs::read_to_string(out.join("tradeoff.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}
