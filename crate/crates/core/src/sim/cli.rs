//! The `ema` command line: `simulate`, `serve`, `bench`, `inspect`.
//!
//! Exit codes: 0 on success, 1 on runtime failure, 2 on config errors.
//! `simulate` and `bench` draw all randomness from the seed; their CSVs are
//! byte-identical across runs with the same arguments.

use crate::config::Config;
use crate::error::Error;
use crate::service::{serve, ServiceConfig};
use crate::sim::drift::{drift_suite, run_drift_sequence};
use crate::sim::env::Task;
use crate::sim::strategy::{report_csv, ReportRow, SimSettings, Strategy};
use crate::store::{StateStore, StorePolicy};
use clap::{Parser, Subcommand};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "ema",
    version,
    about = "Model adaptation toolkit: state matching, cost-aware labeling, budget orchestration"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a simulation suite described by a config file.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Master seed; overrides the config's `seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Store directory (default: a fresh `store/` under --out).
        #[arg(long)]
        store: Option<PathBuf>,
        /// Output directory for report CSVs (default `.`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Start the repository service.
    Serve {
        #[arg(long, default_value = "127.0.0.1:4650")]
        listen: String,
        #[arg(long)]
        store: PathBuf,
        /// Optional service config (capacity, noise, decay).
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run the full benchmark matrix and emit CSV.
    Bench {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Root for the per-strategy stores (default: under --out).
        #[arg(long)]
        store: Option<PathBuf>,
    },
    /// Dump store contents.
    Inspect {
        #[arg(long)]
        store: PathBuf,
    },
}

/// Entry point used by the binary; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e @ Error::Config { .. }) => {
            eprintln!("error: {e}");
            2
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn dispatch(cli: Cli) -> crate::error::Result<()> {
    match cli.cmd {
        Cmd::Simulate {
            config,
            seed,
            store,
            out,
        } => cmd_simulate(&config, seed, store, out),
        Cmd::Serve {
            listen,
            store,
            config,
        } => cmd_serve(&listen, store, config),
        Cmd::Bench { seed, out, store } => cmd_bench(seed, out, store),
        Cmd::Inspect { store } => cmd_inspect(&store),
    }
}

fn parse_task(s: &str) -> crate::error::Result<Task> {
    match s {
        "regression" => Ok(Task::Regression),
        "classification" => Ok(Task::Classification),
        other => Err(Error::Config {
            line: 0,
            msg: format!("task must be regression or classification, got {other:?}"),
        }),
    }
}

fn settings_from(cfg: &Config, seed: u64) -> crate::error::Result<SimSettings> {
    let d = SimSettings::default();
    Ok(SimSettings {
        target_accuracy: cfg.get_f64_or("target_accuracy", d.target_accuracy)?,
        max_rounds: cfg.get_usize_or("max_rounds", d.max_rounds)?,
        epochs_per_round: cfg.get_usize_or("epochs_per_round", d.epochs_per_round)?,
        initial_budget: cfg.get_f64_or("budget", d.initial_budget)?,
        proxy_fraction: cfg.get_f64_or("proxy_fraction", d.proxy_fraction)?,
        fit_sample_cap: cfg.get_usize_or("fit_sample_cap", d.fit_sample_cap)?,
        regimes: cfg.get_usize_or("regimes", d.regimes)?,
        latent_dims: cfg.get_usize_or("latent_dims", d.latent_dims)?,
        seed,
    })
}

fn cmd_simulate(
    config_path: &PathBuf,
    seed_flag: Option<u64>,
    store: Option<PathBuf>,
    out: Option<PathBuf>,
) -> crate::error::Result<()> {
    let cfg = Config::from_file(config_path)?;
    // Required keys first, so a missing one is named before any work runs.
    let task = parse_task(cfg.get("task")?)?;
    let dim = cfg.get_usize("dim")?;
    let seed = seed_flag.unwrap_or(cfg.get_u64_or("seed", 0)?);
    let settings = settings_from(&cfg, seed)?;
    let strategies: Vec<Strategy> = match cfg.get_or("strategies", "ema_full") {
        "all" => Strategy::all().to_vec(),
        list => list
            .split(',')
            .map(|s| Strategy::parse(s.trim()))
            .collect::<crate::error::Result<_>>()?,
    };
    let steps = cfg.get_usize_or("envs", 12)?.clamp(1, 12);

    let out_dir = out.unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out_dir)?;
    let store_root = store.unwrap_or_else(|| out_dir.join("store"));
    if store_root.exists() {
        std::fs::remove_dir_all(&store_root)?;
    }

    let suite = drift_suite(seed, task, dim);
    let mut rows: Vec<ReportRow> = Vec::new();
    for strategy in strategies {
        rows.extend(run_drift_sequence(
            &suite[..steps],
            strategy,
            &store_root,
            &settings,
        )?);
    }
    let csv = report_csv(&rows);
    let path = out_dir.join("simulate.csv");
    std::fs::write(&path, &csv)?;
    print!("{csv}");
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn cmd_serve(
    listen: &str,
    store: PathBuf,
    config: Option<PathBuf>,
) -> crate::error::Result<()> {
    let mut svc = ServiceConfig::new(listen, store);
    if let Some(path) = config {
        let cfg = Config::from_file(&path)?;
        svc.policy = StorePolicy {
            capacity: cfg.get_usize_or("capacity", svc.policy.capacity)?,
            decay_factor: cfg.get_f64_or("decay_factor", svc.policy.decay_factor)?,
            dkw_epsilon: cfg.get_f64_or("dkw_epsilon", svc.policy.dkw_epsilon)?,
            dkw_delta: cfg.get_f64_or("dkw_delta", svc.policy.dkw_delta)?,
            noise: crate::store::NoiseSpec::new(
                cfg.get_f64_or("noise_sigma", 0.0)?,
                cfg.get_f64_or("noise_clamp", 1.0)?,
            )?,
        };
        svc.regimes = cfg.get_usize_or("regimes", svc.regimes)?;
        svc.fit_sample_cap = cfg.get_usize_or("fit_sample_cap", svc.fit_sample_cap)?;
    }
    let handle = serve(svc)?;
    eprintln!("listening on {}", handle.addr());
    // Serve until interrupted.
    loop {
        std::thread::sleep(std::time::Duration::from_secs(3600));
    }
}

fn cmd_bench(seed: u64, out: Option<PathBuf>, store: Option<PathBuf>) -> crate::error::Result<()> {
    let out_dir = out.unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out_dir)?;
    let store_root = store.unwrap_or_else(|| out_dir.join("bench-store"));
    // A benchmark is a reproducible experiment: it owns its store root and
    // starts it empty, so rerunning with the same seed is byte-identical.
    if store_root.exists() {
        std::fs::remove_dir_all(&store_root)?;
    }

    let settings = SimSettings {
        seed,
        ..SimSettings::default()
    };
    let suite = drift_suite(seed, Task::Classification, 4);
    let mut rows = Vec::new();
    for &strategy in Strategy::all() {
        rows.extend(run_drift_sequence(&suite, strategy, &store_root, &settings)?);
    }
    let csv = report_csv(&rows);
    let path = out_dir.join("bench.csv");
    std::fs::write(&path, &csv)?;

    // One summary line per strategy.
    for &strategy in Strategy::all() {
        let mine: Vec<&ReportRow> =
            rows.iter().filter(|r| r.strategy == strategy.name()).collect();
        let total: f64 = mine.iter().map(|r| r.total_cost).sum();
        let hit = mine.iter().filter(|r| r.rounds_to_target.is_some()).count();
        let acc: f64 =
            mine.iter().map(|r| r.final_accuracy).sum::<f64>() / mine.len().max(1) as f64;
        println!(
            "{:<22} total_cost={:<12.1} reached_target={}/{} mean_accuracy={:.4}",
            strategy.name(),
            total,
            hit,
            mine.len(),
            acc
        );
    }
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn cmd_inspect(store_path: &PathBuf) -> crate::error::Result<()> {
    let store = StateStore::open(store_path, StorePolicy::default())?;
    println!(
        "store {} entries={} model_bytes={}",
        store_path.display(),
        store.len(),
        store.model_bytes()
    );
    let mut entries: Vec<_> = store.entries().to_vec();
    entries.sort_by(|a, b| a.key.cmp(&b.key));
    for e in entries {
        println!(
            "{:<24} env={:<16} v{} cluster={} freq={:.3} acc={:.4} samples={} bytes={}{}",
            e.key,
            e.env_id,
            e.version,
            e.medoid_cluster,
            e.decayed_freq,
            e.accuracy,
            e.samples.len(),
            e.model_blob.len(),
            if e.superseded { " superseded" } else { "" }
        );
    }
    Ok(())
}
