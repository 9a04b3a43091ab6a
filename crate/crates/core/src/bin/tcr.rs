use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tcr::harness::{
    compare_variants, dump_lattice, evaluate, find_example, load_or_generate_data, parse_override,
    parse_pairs, train, write_run_dir, EvalSettings, ExperimentConfig, RegMode,
};
use tcr::model::Checkpoint;
use tcr::{Error, Result};

/// Transducer training with consistency regularization on synthetic data.
///
/// Exit codes: 0 success, 2 configuration or usage error, 3 numerical
/// failure, 4 I/O or file format error.
#[derive(Parser)]
#[command(name = "tcr", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct ConfigArgs {
    /// `key = value` config file.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Overrides applied after the file, e.g. `--set tcr.lambda=0.2`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut pairs = match &self.config {
            Some(p) => parse_pairs(&std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?)?,
            None => Vec::new(),
        };
        for o in &self.overrides {
            pairs.push(parse_override(o)?);
        }
        ExperimentConfig::from_pairs(pairs)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Train one model and write a run directory.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Decode a dataset's eval split with a checkpoint.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train several variants over several seeds and print a table.
    Compare {
        #[command(flatten)]
        config: ConfigArgs,
        /// Comma-separated variant names, or `all`.
        #[arg(long, default_value = "baseline,tcr")]
        variants: String,
        /// Runs seeds 1..=N.
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write lattices and occupancy heatmaps of two views of one example.
    DumpLattice {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Example id, e.g. `eval-00003`.
        #[arg(long)]
        id: String,
        #[arg(long, default_value_t = 0)]
        view_seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate the synthetic dataset described by the config.
    GenData {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Train { config, out } => {
            let mut cfg = config.load()?;
            if out.is_some() {
                cfg.output_dir = out;
            }
            let start = std::time::Instant::now();
            let run = train(&cfg)?;
            let e = &run.report.eval;
            println!(
                "config {}  variant {}  seed {}",
                run.report.config_hash, run.report.variant, cfg.seed
            );
            if let Some(last) = run.report.epochs.last() {
                println!(
                    "final epoch nll {:.4}/{:.4}  d_c {:.5}",
                    last.nll_a, last.nll_b, last.d_c
                );
            }
            println!(
                "TER greedy {:.2}%  beam {:.2}%",
                100.0 * e.ter_greedy,
                100.0 * e.ter_beam
            );
            if let Some(d) = e.inter_view_divergence {
                println!("inter-view divergence {d:.5}");
            }
            if let Some(dir) = &cfg.output_dir {
                write_run_dir(dir, &cfg, &run, start.elapsed().as_secs_f64())?;
                println!("wrote {}", dir.display());
            }
        }
        Cmd::Eval {
            config,
            checkpoint,
            out,
        } => {
            let cfg = config.load()?;
            let ck = Checkpoint::load(&checkpoint)?;
            let data = load_or_generate_data(&cfg)?;
            let m = evaluate(&ck.params, &data.eval, &EvalSettings::from_config(&cfg))?;
            println!("{} utterances", m.per_utterance.len());
            println!(
                "TER greedy {:.2}%  beam {:.2}%",
                100.0 * m.ter_greedy,
                100.0 * m.ter_beam
            );
            if let Some(d) = m.inter_view_divergence {
                println!("inter-view divergence {d:.5}");
            }
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                write(&dir.join("eval.csv"), m.to_csv().as_bytes())?;
                let json = serde_json::to_vec_pretty(&m)
                    .map_err(|e| Error::format("metrics", e.to_string()))?;
                write(&dir.join("metrics.json"), &json)?;
            }
        }
        Cmd::Compare {
            config,
            variants,
            seeds,
            out,
        } => {
            let mut cfg = config.load()?;
            if out.is_some() {
                cfg.output_dir = out;
            }
            let variants: Vec<RegMode> = if variants == "all" {
                RegMode::ALL.to_vec()
            } else {
                variants.split(',').map(str::parse).collect::<Result<_>>()?
            };
            let seeds: Vec<u64> = (1..=seeds).collect();
            let table = compare_variants(&cfg, &variants, &seeds)?;
            print!("{}", table.render());
            if let Some(dir) = &cfg.output_dir {
                write(&dir.join("table.txt"), table.render().as_bytes())?;
                let json = serde_json::to_vec_pretty(&table)
                    .map_err(|e| Error::format("table", e.to_string()))?;
                write(&dir.join("table.json"), &json)?;
            }
        }
        Cmd::DumpLattice {
            config,
            checkpoint,
            id,
            view_seed,
            out,
        } => {
            let cfg = config.load()?;
            let ck = Checkpoint::load(&checkpoint)?;
            let data = load_or_generate_data(&cfg)?;
            let ex = find_example(&data, &id)?;
            let s = dump_lattice(
                &ck.params,
                ex,
                &cfg.resolved_augment(),
                cfg.dropout,
                cfg.band_width,
                view_seed,
                &out,
            )?;
            println!(
                "{}: T={} U={}  loss {:.4}/{:.4}",
                s.id, s.t_len, s.u_len, s.loss_a, s.loss_b
            );
            println!(
                "path distance {}  antidiagonal agreement {:.3}  top-mass overlap {:.3}",
                s.path_chebyshev, s.antidiagonal_agreement, s.top_mass_overlap
            );
            println!("wrote {}", out.display());
        }
        Cmd::GenData { config, out } => {
            let cfg = config.load()?;
            let data = load_or_generate_data(&cfg)?;
            data.save(&out)?;
            println!(
                "{} train + {} eval examples -> {}",
                data.train.len(),
                data.eval.len(),
                out.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
