mod common;

use common::{edit_distance_oracle, rng};
use ndarray::Array2;
use proptest::prelude::*;
use rand::Rng;
use tcr::decode::{
    beam_decode, edit_distance, greedy_decode, greedy_decode_with, occupancy_heatmap,
    token_error_rate, BeamConfig,
};
use tcr::lattice::{EmissionLattice, TargetSeq};
use tcr::model::{ModelDims, TransducerParams};
use tcr::views::FeatureSeq;

fn dims() -> ModelDims {
    ModelDims {
        feat_dim: 4,
        hidden: 6,
        joiner: 6,
        vocab: 4,
        context: 1,
        stride: 1,
    }
}

/// Random model scaled up so its output distributions are peaky enough for
/// the search to matter.
fn random_model(seed: u64, scale: f64) -> TransducerParams {
    let mut p = TransducerParams::init(dims(), seed).unwrap();
    p.scale(scale);
    p
}

fn random_features(seed: u64, t: usize) -> FeatureSeq {
    let mut r = rng(seed);
    FeatureSeq::new(
        Array2::from_shape_fn((t, 4), |_| r.random_range(-2.0..2.0)),
        "f",
    )
    .unwrap()
}

fn beam(k: usize) -> BeamConfig {
    BeamConfig {
        beam_size: k,
        ..BeamConfig::default()
    }
}

#[test]
fn beam_one_equals_greedy() {
    for seed in 0..100 {
        let p = random_model(seed, 3.0);
        let x = random_features(1000 + seed, 3 + (seed as usize % 6));
        let g = greedy_decode(&p, &x).unwrap();
        let b = beam_decode(&p, &x, &beam(1)).unwrap();
        assert_eq!(g.tokens, b.tokens, "seed {seed}");
        assert!((g.log_prob - b.log_prob).abs() < 1e-12);
    }
}

/// Beam-4 never scores below greedy. Intermediate widths can lose a little
/// when pooled pruning keeps a different prefix, so those are only counted.
#[test]
fn wider_beams_score_at_least_as_well() {
    let mut worse = 0;
    for seed in 0..100 {
        let p = random_model(seed, 3.0);
        let x = random_features(2000 + seed, 4 + (seed as usize % 5));
        let scores: Vec<f64> = (1..=4)
            .map(|k| beam_decode(&p, &x, &beam(k)).unwrap().log_prob)
            .collect();
        assert!(
            scores[3] >= scores[0] - 1e-12,
            "seed {seed}: beam-4 {} < greedy {}",
            scores[3],
            scores[0]
        );
        if scores.windows(2).any(|w| w[1] < w[0] - 1e-12) {
            worse += 1;
        }
    }
    assert!(
        worse <= 20,
        "{worse} of 100 models lost score when widening the beam by one"
    );
}

#[test]
fn blank_only_model_outputs_nothing() {
    let mut p = TransducerParams::zeros(dims());
    p.out_b[0] = 40.0;
    let x = random_features(5, 7);
    assert!(greedy_decode(&p, &x).unwrap().tokens.is_empty());
    assert!(beam_decode(&p, &x, &beam(4)).unwrap().tokens.is_empty());
}

#[test]
fn symbol_cap_bounds_output_length() {
    let mut p = TransducerParams::zeros(dims());
    p.out_b[0] = 20.0;
    p.out_b[2] = 40.0;
    let x = random_features(6, 5);
    for cap in 1..4 {
        let cfg = BeamConfig {
            max_symbols_per_step: cap,
            ..beam(3)
        };
        assert_eq!(
            greedy_decode_with(&p, &x, &cfg).unwrap().tokens,
            vec![2; 5 * cap]
        );
        assert!(beam_decode(&p, &x, &cfg).unwrap().tokens.len() <= 5 * cap);
    }
}

#[test]
fn blank_penalty_shifts_output_length() {
    let p = random_model(3, 1.0);
    let x = random_features(7, 12);
    let len = |pen: f64| {
        let cfg = BeamConfig {
            blank_penalty: pen,
            ..beam(1)
        };
        greedy_decode_with(&p, &x, &cfg).unwrap().tokens.len()
    };
    assert!(len(-10.0) <= len(0.0));
    assert!(len(0.0) <= len(10.0));
    assert_eq!(len(1e6), len(10.0));
}

#[test]
fn heatmap_of_single_path_lattice_is_that_path() {
    // T=3, U=1: force emit at t=1 only
    let (t, u, v) = (3, 1, 2);
    let mut probs = ndarray::Array3::from_elem((t, u + 1, v + 1), 0.0);
    for ti in 0..t {
        for ui in 0..=u {
            probs[[ti, ui, 0]] = 1.0;
        }
    }
    probs[[1, 0, 0]] = 0.0;
    probs[[1, 0, 2]] = 1.0;
    let lat = EmissionLattice::from_probs(probs).unwrap();
    let y = TargetSeq::new(vec![2], v).unwrap();
    let h = occupancy_heatmap(&lat, &y).unwrap();
    assert_eq!(h.viterbi_path, vec![(0, 0), (1, 0), (1, 1), (2, 1)]);
    for ((ti, ui), &m) in h.grid.indexed_iter() {
        let on = h.viterbi_path.contains(&(ti, ui));
        assert!((m - f64::from(u8::from(on))).abs() < 1e-12);
    }
    assert!((h.mass_near_path(0) - 1.0).abs() < 1e-12);
}

#[test]
fn error_rate_edge_cases() {
    assert_eq!(token_error_rate(&[], &[]), 0.0);
    assert_eq!(token_error_rate(&[1, 2], &[]), 2.0);
    assert_eq!(token_error_rate(&[], &[1, 2, 3, 4]), 1.0);
    assert_eq!(token_error_rate(&[1, 3, 3, 4], &[1, 2, 3, 4]), 0.25);
}

proptest! {
    #[test]
    fn edit_distance_matches_oracle(
        a in prop::collection::vec(1usize..5, 0..12),
        b in prop::collection::vec(1usize..5, 0..12),
    ) {
        let d = edit_distance(&a, &b);
        prop_assert_eq!(d, edit_distance_oracle(&a, &b));
        prop_assert_eq!(d, edit_distance(&b, &a));
        prop_assert!(d <= a.len().max(b.len()));
        prop_assert!(d >= a.len().abs_diff(b.len()));
    }
}
