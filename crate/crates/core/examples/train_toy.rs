//! Trains the toy transducer once and prints the per-epoch losses and the
//! final evaluation. Extra `key=value` arguments override config keys.
//!
//!     cargo run --release --example train_toy -- tcr.variant=baseline train.epochs=5

use tcr::harness::{parse_override, train, ExperimentConfig};

fn main() -> tcr::Result<()> {
    let mut cfg = ExperimentConfig::with_seed(7);
    for arg in std::env::args().skip(1) {
        let (k, v) = parse_override(&arg)?;
        cfg.set(&k, &v)?;
    }
    let start = std::time::Instant::now();
    let out = train(&cfg)?;
    for e in &out.report.epochs {
        println!(
            "epoch {:>3}  nll_a {:.4}  nll_b {:.4}  d_c {:.6}  total {:.4}",
            e.epoch, e.nll_a, e.nll_b, e.d_c, e.total
        );
    }
    let ev = &out.report.eval;
    println!("variant         {}", out.report.variant);
    println!("TER greedy      {:.4}", ev.ter_greedy);
    println!("TER beam        {:.4}", ev.ter_beam);
    if let Some(d) = ev.inter_view_divergence {
        println!("inter-view div  {d:.6}");
    }
    println!("config hash     {}", out.report.config_hash);
    println!("elapsed         {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
