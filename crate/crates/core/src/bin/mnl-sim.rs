use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use mnl_online::harness::{
    self, config::DEFAULT_COMPARISON_SEEDS, output::final_summary, ExperimentConfig, KeyValues, RunMetadata,
    Trajectory,
};
use mnl_online::Result;

/// Regret simulations for contextual MNL pricing and assortment policies.
#[derive(Parser)]
#[command(name = "mnl-sim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment config and write `<out>/<policy>.csv` plus a JSON sidecar.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// onssc, onsp, corollary1, ofu_mnl or oracle.
        #[arg(long)]
        policy: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Run two configs on the same seeds and write one joined `<out>/compare.csv`.
    Compare {
        #[arg(long, num_args = 2, value_names = ["P1", "P2"])]
        configs: Vec<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    /// Horizon.
    #[arg(long = "T")]
    horizon: Option<usize>,
    /// Seed list: `0,1,2`, `0..20` or a mix.
    #[arg(long)]
    seeds: Option<String>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Extra `key=value` overrides, e.g. `--set env.w=5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Common {
    fn apply(&self, kv: &mut KeyValues) -> Result<()> {
        for s in &self.set {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| mnl_online::Error::Config(format!("--set expects KEY=VALUE, got `{s}`")))?;
            kv.set(k.trim(), v.trim())?;
        }
        if let Some(t) = self.horizon {
            kv.set("horizon", t.to_string())?;
        }
        if let Some(s) = &self.seeds {
            kv.set("seeds", s.clone())?;
        }
        if let Some(j) = self.jobs {
            kv.set("jobs", j.to_string())?;
        }
        if let Some(o) = &self.out {
            kv.set("out", o.display().to_string())?;
        }
        Ok(())
    }
}

fn write_outputs(dir: &Path, stem: &str, configs: Vec<ExperimentConfig>, trs: &[Trajectory], secs: f64) -> Result<()> {
    let csv = dir.join(format!("{stem}.csv"));
    harness::emit_csv(trs, &csv)?;
    let meta = RunMetadata::new(configs, csv.clone(), trs, secs)?;
    harness::write_sidecar(&meta, &dir.join(format!("{stem}.json")))?;
    for row in &meta.final_summary {
        println!(
            "{}: T = {}, seeds = {}, mean cumulative regret = {:.6} (sd {:.6})",
            row.policy, row.t, row.seeds, row.mean, row.std
        );
    }
    println!("wrote {}", csv.display());
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, policy, common } => {
            let mut kv = KeyValues::load(&config)?;
            if let Some(p) = policy {
                kv.set("policy", p)?;
            }
            common.apply(&mut kv)?;
            let cfg = kv.resolve(None)?;
            let start = Instant::now();
            let trs = harness::run(&cfg)?;
            let stem = cfg.policy.to_string();
            write_outputs(&cfg.out.clone(), &stem, vec![cfg], &trs, start.elapsed().as_secs_f64())
        }
        Command::Compare { configs, common } => {
            let mut resolved = Vec::new();
            for path in &configs {
                let mut kv = KeyValues::load(path)?;
                common.apply(&mut kv)?;
                resolved.push(kv.resolve(Some(DEFAULT_COMPARISON_SEEDS))?);
            }
            let start = Instant::now();
            let mut all = Vec::new();
            for cfg in &resolved {
                all.extend(harness::run(cfg)?);
            }
            let summary = final_summary(&harness::aggregate(&all)?);
            if summary.len() != resolved.len() {
                eprintln!("note: both configs use the same policy; their rows share one policy label");
            }
            let dir = resolved[0].out.clone();
            write_outputs(&dir, "compare", resolved, &all, start.elapsed().as_secs_f64())
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mnl-sim: error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::FAILURE
        }
    }
}
