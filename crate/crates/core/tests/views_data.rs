mod common;

use common::rng;
use ndarray::Array2;
use rand::Rng;
use tcr::synthdata::{generate_example, generate_split, Dataset, TaskSpec};
use tcr::views::{make_view_pair, spec_augment_with_record, AugmentSpec, FeatureSeq, MaskFill};

fn noisy(seed: u64, t: usize, f: usize) -> FeatureSeq {
    let mut r = rng(seed);
    FeatureSeq::new(
        Array2::from_shape_fn((t, f), |_| r.random_range(-2.0..2.0)),
        "n",
    )
    .unwrap()
}

#[test]
fn views_of_short_utterances_differ() {
    let spec = AugmentSpec::for_features(12);
    let mut differ = 0;
    let mut r = rng(1);
    for i in 0..100 {
        let x = noisy(1000 + i, 16, 12);
        let pair = make_view_pair(&x, &spec, &mut r);
        let (_, ra) = spec_augment_with_record(&x, &spec.with_seed(pair.augment_seed_a));
        let (_, rb) = spec_augment_with_record(&x, &spec.with_seed(pair.augment_seed_b));
        if ra != rb && pair.view_a != pair.view_b {
            differ += 1;
        }
        assert_ne!(pair.dropout_seed_a, pair.dropout_seed_b);
    }
    assert!(differ >= 99, "only {differ} of 100 pairs differ");
}

#[test]
fn unmasked_cells_are_untouched_and_masked_cells_filled() {
    for seed in 0..50 {
        let x = noisy(seed, 20 + seed as usize, 12);
        for fill in [MaskFill::Mean, MaskFill::Zero] {
            let spec = AugmentSpec {
                fill,
                ..AugmentSpec::for_features(12).with_seed(seed)
            };
            let (y, rec) = spec_augment_with_record(&x, &spec);
            assert_eq!(y.frames().dim(), x.frames().dim());
            let v = if fill == MaskFill::Mean {
                x.mean()
            } else {
                0.0
            };
            for ((t, f), &val) in y.frames().indexed_iter() {
                if rec.frames[t] || rec.bins[f] {
                    assert_eq!(val, v);
                } else {
                    assert_eq!(val, x.frames()[[t, f]]);
                }
            }
            assert!(rec.frames.iter().any(|m| !m));
            let max_w = (0.05 * x.t_len() as f64).ceil() as usize;
            let masked = rec.frames.iter().filter(|&&m| m).count();
            assert!(masked <= 10 * max_w);
        }
    }
}

#[test]
fn frequency_masks_have_fixed_width() {
    let spec = AugmentSpec {
        n_freq_masks: 2,
        freq_mask_width: 3,
        ..AugmentSpec::disabled()
    };
    for seed in 0..100 {
        let (_, rec) = spec_augment_with_record(&noisy(seed, 10, 8), &spec.with_seed(seed));
        let n = rec.bins.iter().filter(|&&m| m).count();
        assert!((3..=6).contains(&n));
        assert!(rec.frames.iter().all(|m| !m));
    }
}

#[test]
fn view_pairs_are_reproducible() {
    let x = noisy(3, 30, 12);
    let spec = AugmentSpec::for_features(12);
    let a = make_view_pair(&x, &spec, &mut rng(42));
    let b = make_view_pair(&x, &spec, &mut rng(42));
    assert_eq!(a, b);
}

#[test]
fn frame_to_token_ratio_matches_run_lengths() {
    let spec = TaskSpec::default();
    let protos = spec.prototypes();
    let mut r = rng(7);
    let mut ratio = 0.0;
    let n = 10_000;
    for i in 0..n {
        let ex = generate_example(&spec, &protos, &mut r, format!("r{i}")).unwrap();
        let u = ex.target.len();
        assert!((spec.len_range.0..=spec.len_range.1).contains(&u));
        assert!(ex.target.tokens().windows(2).all(|w| w[0] != w[1]));
        ratio += ex.features.t_len() as f64 / u as f64;
    }
    let mean = ratio / n as f64;
    let expect = spec.mean_frames_per_token();
    assert!(
        (mean - expect).abs() <= 0.05 * expect,
        "mean T/U {mean} vs {expect}"
    );
}

#[test]
fn noiseless_runs_follow_prototypes() {
    let spec = TaskSpec {
        noise_std: 0.0,
        ..TaskSpec::default()
    };
    let protos = spec.prototypes();
    let mut r = rng(8);
    for i in 0..200 {
        let ex = generate_example(&spec, &protos, &mut r, format!("n{i}")).unwrap();
        let mut runs: Vec<(usize, usize)> = Vec::new();
        for row in ex.features.frames().rows() {
            let tok = (0..spec.vocab)
                .find(|&k| protos.row(k) == row)
                .expect("frame equals a prototype")
                + 1;
            match runs.last_mut() {
                Some((t, n)) if *t == tok => *n += 1,
                _ => runs.push((tok, 1)),
            }
        }
        let toks: Vec<usize> = runs.iter().map(|r| r.0).collect();
        assert_eq!(toks, ex.target.tokens());
        let (lo, hi) = spec.frames_per_token;
        assert!(runs.iter().all(|&(_, n)| (lo..=hi).contains(&n)));
    }
}

#[test]
fn splits_are_deterministic_and_disjoint() {
    let spec = TaskSpec::default();
    let a = generate_split(&spec, 30, 10, 5).unwrap();
    let b = generate_split(&spec, 30, 10, 5).unwrap();
    assert_eq!(a, b);
    let c = generate_split(&spec, 30, 10, 6).unwrap();
    assert_ne!(a.train, c.train);
    for e in &a.eval {
        assert!(a.train.iter().all(|t| t.features != e.features));
        assert!(e.features.id.starts_with("eval-"));
    }
    assert!(generate_split(&spec, 0, 10, 5).is_err());
    assert!(generate_split(
        &TaskSpec {
            frames_per_token: (3, 2),
            ..spec
        },
        1,
        1,
        5
    )
    .is_err());
}

#[test]
fn dataset_round_trips_through_disk() {
    let data = generate_split(&TaskSpec::default(), 12, 4, 9).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("toy.tcrdata");
    data.save(&path).unwrap();
    let back = Dataset::load(&path).unwrap();
    assert_eq!(back, data);

    let mut bytes = std::fs::read(&path).unwrap();
    bytes.truncate(bytes.len() - 3);
    assert!(Dataset::read(bytes.as_slice()).is_err());
    assert!(Dataset::read(&b"NOTDATA\0"[..]).is_err());
    assert!(Dataset::load(&dir.path().join("missing")).is_err());
}
