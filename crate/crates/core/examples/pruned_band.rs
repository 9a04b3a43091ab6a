//! Selects pruning bands of increasing width on a random lattice and shows
//! how the banded loss approaches the full loss.
//!
//!     cargo run --example pruned_band

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tcr::lattice::{EmissionLattice, TargetSeq};
use tcr::pruning::{banded_loss, select_band};
use tcr::transducer::{transducer_loss, LatticeTables};

fn main() -> tcr::Result<()> {
    let (t, u, v) = (12, 6, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let logits = Array3::from_shape_fn((t, u + 1, v + 1), |_| rng.random_range(-3.0..3.0));
    let lat = EmissionLattice::from_logits(logits)?;
    let y = TargetSeq::new((0..u).map(|_| rng.random_range(1..=v)).collect(), v)?;
    let tables = LatticeTables::compute(&lat, &y)?;
    println!("full loss {:.6}", transducer_loss(&lat, &y)?);
    for w in 1..=u + 1 {
        let band = select_band(&tables, w)?;
        println!(
            "width {w}: banded loss {:.6}  lower bounds {:?}",
            banded_loss(&lat, &y, &band)?,
            band.lower()
        );
    }
    let band = select_band(&tables, 2)?;
    println!("\nwidth 2 band (u up, # inside):");
    for ui in (0..=u).rev() {
        let row: String = (0..t)
            .map(|ti| if band.contains(ti, ui) { '#' } else { '.' })
            .collect();
        println!("  u={ui} {row}");
    }
    Ok(())
}
