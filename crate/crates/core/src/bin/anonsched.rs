//! Command-line driver. Values come from built-in defaults, then command-line
//! flags, then the `--config` TOML file, each overriding the previous.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use anonsched::experiments::{
    cmd_region, cmd_relay, cmd_switching, cmd_tradeoff, gen_topology, GenTopologyConfig, Outcome,
    RegionConfig, RelayConfig, SwitchingConfig, TradeoffConfig,
};
use anonsched::{Error, Result};

#[derive(Parser)]
#[command(
    name = "anonsched",
    version,
    about = "Anonymous scheduling experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Single relay experiments: strict delay, mean delay, priority and
    /// origin-blind relaying against closed-form predictions.
    Relay(RelayFlags),
    /// Two-source rate region with simulated priority corner points.
    Region(RegionFlags),
    /// Anonymity and sum-rates of the 4x4 switching network.
    Switching(SwitchingFlags),
    /// Sum-rate versus anonymity, randomized and deterministic.
    Tradeoff(TradeoffFlags),
    /// Print or write a built-in network config.
    GenTopology(GenTopologyFlags),
}

#[derive(Args, Serialize)]
struct RelayFlags {
    /// strict | avg | priority | equal
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    mode: Option<String>,
    /// Source rate, packets/s
    #[arg(long, visible_alias = "cs1")]
    #[serde(skip_serializing_if = "Option::is_none")]
    cs: Option<f64>,
    /// Second source rate, packets/s
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    cs2: Option<f64>,
    /// Relay rate, packets/s
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    cb: Option<f64>,
    /// Strict delay bound, s
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    delta: Option<f64>,
    /// Mean delay target, s
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    dbar: Option<f64>,
    /// Arrival window, s
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    horizon: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    /// Batches for batch-means error bars
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    batches: Option<usize>,
    /// Fraction of time source 1 has priority (priority mode)
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    share: Option<f64>,
    /// File with arrival then departure schedules (strict mode)
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    schedules: Option<PathBuf>,
    /// Also write match.txt (strict mode)
    #[arg(long)]
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    dump_match: bool,
    /// Run the two-source region experiment instead
    #[arg(long)]
    #[serde(skip)]
    region: bool,
    /// With --region, also check the standard parameter grid
    #[arg(long)]
    #[serde(skip)]
    grid: bool,
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
}

#[derive(Args, Serialize)]
struct Common {
    /// Output directory
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    out: Option<PathBuf>,
    /// TOML file whose values override flags
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct RegionFlags {
    #[arg(long, visible_alias = "cs")]
    #[serde(skip_serializing_if = "Option::is_none")]
    cs1: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    cs2: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    cb: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    delta: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    horizon: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    batches: Option<usize>,
    /// Also check the standard parameter grid
    #[arg(long)]
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    grid: bool,
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
}

#[derive(Args, Serialize)]
struct NetFlags {
    /// Node capacity, packets/s
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    capacity: Option<f64>,
    /// Strict delay at covert relays, s
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    delta: Option<f64>,
    /// analytic | simulated loss at cascaded covert relays
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    eps_mode: Option<String>,
    /// Keep sources at their visible rates in front of covert relays
    #[arg(long)]
    #[serde(skip)]
    no_boost: bool,
    /// Simulation length for cascaded relays, s
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    horizon: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

#[derive(Args, Serialize)]
struct SwitchingFlags {
    #[command(flatten)]
    #[serde(flatten)]
    net: NetFlags,
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
}

#[derive(Args, Serialize)]
struct TradeoffFlags {
    /// Built-in network name
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    network: Option<String>,
    /// Network config file (overrides --network)
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    topology: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    net: NetFlags,
    /// Number of evenly spaced anonymity levels on [0, 1]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    alpha_points: Option<usize>,
    /// Explicit anonymity levels, comma separated
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    alphas: Option<Vec<f64>>,
    /// Largest number of candidate relays to enumerate
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    relay_cap: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    ba_tol: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    ba_max_iter: Option<usize>,
    /// Largest accepted certified suboptimality per anonymity level
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    ba_certificate_tol: Option<f64>,
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
}

#[derive(Args, Serialize)]
struct GenTopologyFlags {
    /// switching | single
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    builtin: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    capacity: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    cs: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    cb: Option<f64>,
    /// Output file; stdout when absent
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

fn read_config(path: Option<&Path>) -> Result<Map<String, Value>> {
    let Some(path) = path else {
        return Ok(Map::new());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config file {}: {e}", path.display())))?;
    let table: toml::Table =
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    match serde_json::to_value(table)? {
        Value::Object(m) => Ok(m),
        _ => unreachable!("a TOML table is an object"),
    }
}

/// Layers `flags` then the config file over the defaults of `T`.
fn resolve<T: Serialize + DeserializeOwned + Default>(
    flags: Map<String, Value>,
    file: &Map<String, Value>,
) -> Result<T> {
    let mut merged = match serde_json::to_value(T::default())? {
        Value::Object(m) => m,
        _ => unreachable!("configs are structs"),
    };
    merged.extend(flags);
    merged.extend(file.clone());
    serde_json::from_value(Value::Object(merged)).map_err(|e| Error::Config(e.to_string()))
}

fn to_map(v: &impl Serialize) -> Result<Map<String, Value>> {
    match serde_json::to_value(v)? {
        Value::Object(m) => Ok(m),
        _ => unreachable!("flags are structs"),
    }
}

fn boost_flag(m: &mut Map<String, Value>, no_boost: bool) {
    if no_boost {
        m.insert("boost".into(), Value::Bool(false));
    }
}

fn print_outcome(o: &Outcome) {
    for c in &o.report.checks {
        println!(
            "{} {} predicted={} empirical={} tolerance={}",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            c.predicted,
            c.empirical,
            c.tolerance
        );
    }
    for f in &o.files {
        println!("wrote {}", f.display());
    }
}

fn run(cli: Cli) -> Result<bool> {
    let outcome = match cli.command {
        Command::Relay(f) => {
            let file = read_config(f.common.config.as_deref())?;
            let mut flags = to_map(&f)?;
            if f.region {
                for k in ["mode", "dbar", "share", "schedules", "dump_match"] {
                    flags.remove(k);
                }
                if let Some(v) = flags.remove("cs") {
                    flags.insert("cs1".into(), v);
                }
                if f.grid {
                    flags.insert("grid".into(), Value::Bool(true));
                }
                cmd_region(&resolve::<RegionConfig>(flags, &file)?)?
            } else {
                cmd_relay(&resolve::<RelayConfig>(flags, &file)?)?
            }
        }
        Command::Region(f) => {
            let file = read_config(f.common.config.as_deref())?;
            cmd_region(&resolve::<RegionConfig>(to_map(&f)?, &file)?)?
        }
        Command::Switching(f) => {
            let file = read_config(f.common.config.as_deref())?;
            let mut flags = to_map(&f)?;
            boost_flag(&mut flags, f.net.no_boost);
            cmd_switching(&resolve::<SwitchingConfig>(flags, &file)?)?
        }
        Command::Tradeoff(f) => {
            let file = read_config(f.common.config.as_deref())?;
            let mut flags = to_map(&f)?;
            boost_flag(&mut flags, f.net.no_boost);
            cmd_tradeoff(&resolve::<TradeoffConfig>(flags, &file)?)?
        }
        Command::GenTopology(f) => {
            let file = read_config(f.config.as_deref())?;
            let cfg: GenTopologyConfig = resolve(to_map(&f)?, &file)?;
            let text = gen_topology(&cfg)?;
            match &cfg.out {
                Some(p) => println!("wrote {}", p.display()),
                None => print!("{text}"),
            }
            return Ok(true);
        }
    };
    print_outcome(&outcome);
    Ok(outcome.pass())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
