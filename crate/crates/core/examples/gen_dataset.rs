//! Generates a synthetic dataset, saves it, reloads it and prints a few
//! statistics.
//!
//!     cargo run --example gen_dataset -- toy.tcrdata noise_std=0.3

use std::path::PathBuf;

use tcr::synthdata::{generate_split, Dataset, TaskSpec};

fn main() -> tcr::Result<()> {
    let mut args = std::env::args().skip(1);
    let path = PathBuf::from(args.next().unwrap_or_else(|| "toy.tcrdata".into()));
    let mut spec = TaskSpec::default();
    for arg in args {
        if let Some(v) = arg.strip_prefix("noise_std=") {
            spec.noise_std = v
                .parse()
                .map_err(|_| tcr::Error::Config(format!("bad noise_std {v:?}")))?;
        }
    }
    let data = generate_split(&spec, 200, 50, 1)?;
    data.save(&path)?;
    let back = Dataset::load(&path)?;
    assert_eq!(back, data);
    let frames: usize = data.train.iter().map(|e| e.features.t_len()).sum();
    let tokens: usize = data.train.iter().map(|e| e.target.len()).sum();
    println!(
        "{} train / {} eval utterances -> {}",
        data.train.len(),
        data.eval.len(),
        path.display()
    );
    println!(
        "V={} F={} noise {}",
        spec.vocab, spec.feat_dim, spec.noise_std
    );
    println!(
        "frames per token {:.3} (runs {}..={})",
        frames as f64 / tokens as f64,
        spec.frames_per_token.0,
        spec.frames_per_token.1
    );
    let ex = &data.train[0];
    println!(
        "{}: {:?} over {} frames",
        ex.features.id,
        ex.target.tokens(),
        ex.features.t_len()
    );
    Ok(())
}
