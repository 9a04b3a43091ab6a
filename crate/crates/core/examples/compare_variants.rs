//! Trains several regularizer variants over several seeds and prints a
//! mean ± sd table of TER and inter-view divergence.
//!
//!     cargo run --release --example compare_variants -- variants=baseline,tcr,full_joint seeds=5 train.epochs=10

use tcr::harness::{compare_variants, parse_override, ExperimentConfig, RegMode};

fn main() -> tcr::Result<()> {
    let mut cfg = ExperimentConfig::with_seed(0);
    let mut variants = vec![
        RegMode::Baseline,
        RegMode::Consistency(tcr::consistency::Variant::Tcr),
    ];
    let mut n_seeds = 3u64;
    for arg in std::env::args().skip(1) {
        let (k, v) = parse_override(&arg)?;
        match k.as_str() {
            "variants" if v == "all" => variants = RegMode::ALL.to_vec(),
            "variants" => variants = v.split(',').map(str::parse).collect::<tcr::Result<_>>()?,
            "seeds" => {
                n_seeds = v
                    .parse()
                    .map_err(|_| tcr::Error::Config(format!("bad seed count {v:?}")))?
            }
            _ => cfg.set(&k, &v)?,
        }
    }
    let seeds: Vec<u64> = (1..=n_seeds).collect();
    let start = std::time::Instant::now();
    let table = compare_variants(&cfg, &variants, &seeds)?;
    print!("{}", table.render());
    for row in &table.rows {
        let per_seed: Vec<String> = row
            .runs
            .iter()
            .map(|r| {
                format!(
                    "{:.3}/{:.3}",
                    r.eval.ter_beam,
                    r.eval.inter_view_divergence.unwrap_or(f64::NAN)
                )
            })
            .collect();
        println!(
            "{:<16} beam TER / div per seed: {}",
            row.variant,
            per_seed.join("  ")
        );
    }
    println!("elapsed {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
