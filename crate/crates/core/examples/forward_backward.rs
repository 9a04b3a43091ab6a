//! Forward-backward on a small random lattice: loss, gradient, occupancies
//! and the Viterbi alignment.
//!
//!     cargo run --example forward_backward -- 5 3

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tcr::lattice::{EmissionLattice, TargetSeq};
use tcr::transducer::{antidiagonal_check, loss_grad, occupancies, viterbi_path, LatticeTables};

fn main() -> tcr::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>());
    let t = args.next().transpose().ok().flatten().unwrap_or(4);
    let u = args.next().transpose().ok().flatten().unwrap_or(2);
    let v = 3;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let logits = Array3::from_shape_fn((t, u + 1, v + 1), |_| rng.random_range(-2.0..2.0));
    let lat = EmissionLattice::from_logits(logits)?;
    let y = TargetSeq::new((0..u).map(|_| rng.random_range(1..=v)).collect(), v)?;

    let tables = LatticeTables::compute(&lat, &y)?;
    println!("T={t} U={u} target {:?}", y.tokens());
    println!("loss -ln Pr(y|x) = {:.6}", -tables.log_prob_total);
    println!(
        "antidiagonal identity max deviation {:.2e}",
        antidiagonal_check(&tables)
    );

    let occ = occupancies(&lat, &y, &tables)?;
    println!("\nblank occupancy (rows t, columns u):");
    for ti in 0..t {
        let row: Vec<String> = (0..=u)
            .map(|ui| format!("{:.3}", occ.raw_blank(ti, ui)))
            .collect();
        println!("  {}", row.join(" "));
    }
    if u > 0 {
        println!("emission occupancy:");
        for ti in 0..t {
            let row: Vec<String> = (0..u)
                .map(|ui| format!("{:.3}", occ.raw_nonblank(ti, ui)))
                .collect();
            println!("  {}", row.join(" "));
        }
    }

    let g = loss_grad(&lat, &y)?;
    println!(
        "\ngradient mass on blank {:.4}, on tokens {:.4}",
        g.slice(ndarray::s![.., .., 0]).sum(),
        g.sum() - g.slice(ndarray::s![.., .., 0]).sum()
    );

    let path = viterbi_path(&lat, &y)?;
    println!(
        "Viterbi path {:?} (log score {:.4})",
        path.cells, path.log_score
    );
    Ok(())
}
