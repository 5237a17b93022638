use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use hypermix_cli::{self as cli, Config};

#[derive(Parser)]
#[command(name = "hypermix", version, about = "Value-decomposition experiments on toy cooperative games")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every configured seed (or one) into per-seed run directories.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Greedy evaluation of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 32)]
        episodes: usize,
    },
    /// Write the incidence matrix of every step of one greedy episode.
    DumpHypergraph {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train several mixers on k seeds and write median/quartile curves.
    Compare {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated kinds, `hgcn-mix:m` overrides m. Defaults to the config's sweep.
        #[arg(long)]
        mixers: Option<String>,
        #[arg(long, default_value_t = 5)]
        seeds: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("HYPERMIX_LOG", "info")).init();
    let args = Args::parse();
    match args.command {
        Command::Train { config, out, seed } => {
            let cfg = Config::load(&config)?;
            let runs = cli::run_train(&cfg, &out, seed)?;
            for r in &runs {
                let last = r.metrics.last().context("run produced no metrics")?;
                println!(
                    "{} seed {}: return {:.4} success {:.3} ({})",
                    r.variant.label(),
                    r.seed,
                    last.mean_return,
                    last.success_rate,
                    r.dir.display()
                );
            }
        }
        Command::Eval {
            checkpoint,
            config,
            episodes,
        } => {
            let cfg = Config::load(&config)?;
            let report = cli::run_eval(&cfg, &checkpoint, episodes)?;
            println!(
                "mean return {:.4}, success rate {:.3} over {} episodes",
                report.mean_return, report.success_rate, report.episodes
            );
            println!("{}", serde_json::to_string(&report)?);
        }
        Command::DumpHypergraph {
            checkpoint,
            config,
            seed,
            out,
        } => {
            let cfg = Config::load(&config)?;
            let graphs = cli::dump_hypergraph(&cfg, &checkpoint, seed, &out)?;
            println!("wrote {} hypergraphs to {}", graphs.len(), out.display());
        }
        Command::Compare {
            config,
            mixers,
            seeds,
            out,
        } => {
            let cfg = Config::load(&config)?;
            let variants = cli::parse_variants(mixers.as_deref(), &cfg)?;
            let cmp = cli::compare(&cfg, &variants, seeds, &out)?;
            for (label, median) in &cmp.final_medians {
                println!("{label}: final median success {median:.3}");
            }
            if cmp.final_medians.len() > 1 {
                println!("monotone in listed order: {}", cmp.is_monotone());
            }
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}
