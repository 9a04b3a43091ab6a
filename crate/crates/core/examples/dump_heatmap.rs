//! Trains a model, then writes lattice dumps and occupancy heatmaps (CSV and
//! PGM) of two views of one eval utterance.
//!
//!     cargo run --release --example dump_heatmap -- /tmp/heatmaps eval-00003

use std::path::PathBuf;

use tcr::harness::{dump_lattice, find_example, train, ExperimentConfig};

fn main() -> tcr::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "heatmaps".into()));
    let id = args.next().unwrap_or_else(|| "eval-00000".into());
    let mut cfg = ExperimentConfig::with_seed(1);
    cfg.set("optim.peak_lr", "1e-2")?;
    cfg.set("train.epochs", "10")?;
    cfg.set("eval.views", "false")?;
    let run = train(&cfg)?;
    let ex = find_example(&run.dataset, &id)?;
    let s = dump_lattice(
        &run.checkpoint.params,
        ex,
        &cfg.resolved_augment(),
        cfg.dropout,
        cfg.band_width,
        7,
        &out,
    )?;
    println!("{} T={} U={}", s.id, s.t_len, s.u_len);
    println!(
        "mass within 3 cells of the Viterbi path: {:.3} / {:.3}",
        s.mass_near_path_a, s.mass_near_path_b
    );
    println!(
        "path distance {}, antidiagonal agreement {:.3}",
        s.path_chebyshev, s.antidiagonal_agreement
    );
    println!("wrote {}", out.display());
    Ok(())
}
