//! Trains a small model briefly, then decodes eval utterances with greedy
//! search and beam search.
//!
//!     cargo run --release --example decode -- train.epochs=8

use tcr::decode::{beam_decode, greedy_decode, token_error_rate, BeamConfig};
use tcr::harness::{parse_override, train, ExperimentConfig};

fn main() -> tcr::Result<()> {
    let mut cfg = ExperimentConfig::with_seed(2);
    cfg.set("train.epochs", "8")?;
    cfg.set("optim.peak_lr", "1e-2")?;
    cfg.set("eval.views", "false")?;
    for arg in std::env::args().skip(1) {
        let (k, v) = parse_override(&arg)?;
        cfg.set(&k, &v)?;
    }
    let run = train(&cfg)?;
    let params = &run.checkpoint.params;
    for ex in run.dataset.eval.iter().take(6) {
        let g = greedy_decode(params, &ex.features)?;
        println!("{} ref    {:?}", ex.features.id, ex.target.tokens());
        println!(
            "{:>11} greedy {:?}  TER {:.2}",
            "",
            g.tokens,
            token_error_rate(&g.tokens, ex.target.tokens())
        );
        for k in [2, 4, 8] {
            let b = beam_decode(
                params,
                &ex.features,
                &BeamConfig {
                    beam_size: k,
                    ..Default::default()
                },
            )?;
            println!(
                "{:>11} beam-{k} {:?}  score {:.3}",
                "", b.tokens, b.log_prob
            );
        }
    }
    println!(
        "\ncorpus TER greedy {:.2}%  beam {:.2}%",
        100.0 * run.report.eval.ter_greedy,
        100.0 * run.report.eval.ter_beam
    );
    Ok(())
}
