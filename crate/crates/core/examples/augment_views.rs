//! Draws view pairs of one utterance and prints which frames and feature
//! bins each view masked.
//!
//!     cargo run --example augment_views -- 4

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tcr::synthdata::{generate_split, TaskSpec};
use tcr::views::{make_view_pair, spec_augment_with_record, AugmentSpec};

fn marks(mask: &[bool]) -> String {
    mask.iter().map(|&m| if m { '#' } else { '.' }).collect()
}

fn main() -> tcr::Result<()> {
    let n: usize = std::env::args()
        .nth(1)
        .and_then(|a| a.parse().ok())
        .unwrap_or(3);
    let spec = TaskSpec::default();
    let data = generate_split(&spec, 1, 1, 2)?;
    let x = &data.train[0].features;
    let aug = AugmentSpec::for_features(spec.feat_dim);
    println!(
        "utterance {}: {} frames x {} bins",
        x.id,
        x.t_len(),
        x.feat_dim()
    );
    println!(
        "{} time masks up to {:.0}% of T, {} freq masks of width {}\n",
        aug.n_time_masks,
        100.0 * aug.time_mask_frac,
        aug.n_freq_masks,
        aug.freq_mask_width
    );
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for i in 0..n {
        let pair = make_view_pair(x, &aug, &mut rng);
        for (tag, seed, drop) in [
            ("a", pair.augment_seed_a, pair.dropout_seed_a),
            ("b", pair.augment_seed_b, pair.dropout_seed_b),
        ] {
            let (_, rec) = spec_augment_with_record(x, &aug.with_seed(seed));
            println!(
                "pair {i} view {tag}: frames {}  bins {}  dropout seed {drop:016x}",
                marks(&rec.frames),
                marks(&rec.bins)
            );
        }
    }
    Ok(())
}
