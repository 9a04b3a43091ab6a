mod common;

use common::*;
use ndarray::Array3;
use proptest::prelude::*;
use tcr::lattice::{EmissionLattice, TargetSeq, BLANK};
use tcr::transducer::*;

#[test]
fn loss_matches_enumeration_on_random_lattices() {
    let mut r = rng(11);
    for _ in 0..300 {
        let (lat, y) = random_instance(&mut r, 4, 3, 3, 3.0);
        let brute = -brute_force_prob(&lat, &y).ln();
        let loss = transducer_loss(&lat, &y).unwrap();
        assert!((loss - brute).abs() < 1e-9, "{loss} vs {brute}");
    }
}

#[test]
fn uniform_two_by_one_matches_enumeration() {
    let lat = EmissionLattice::uniform(2, 1, 1);
    let y = TargetSeq::new(vec![1], 1).unwrap();
    assert_eq!(enumerate_alignments(2, 1).len(), 2);
    let p = brute_force_prob(&lat, &y);
    assert!((p - 0.25).abs() < 1e-15);
    assert!((transducer_loss(&lat, &y).unwrap() - 4f64.ln()).abs() < 1e-12);
    let tables = LatticeTables::compute(&lat, &y).unwrap();
    assert!((tables.log_beta[[0, 0]] - p.ln()).abs() < 1e-12);
    // (0,0) alone on the first antidiagonal
    assert!(
        (tables.log_alpha[[0, 0]] + tables.log_beta[[0, 0]] - tables.log_prob_total).abs() < 1e-15
    );
}

#[test]
fn certain_emission_has_zero_loss() {
    let mut p = Array3::zeros((1, 1, 3));
    p[[0, 0, BLANK]] = 1.0;
    let lat = EmissionLattice::from_probs(p).unwrap();
    let y = TargetSeq::new(vec![], 2).unwrap();
    assert_eq!(transducer_loss(&lat, &y).unwrap(), 0.0);
}

#[test]
fn gradient_matches_finite_differences() {
    let mut r = rng(12);
    for _ in 0..100 {
        let (lat, y) = random_instance(&mut r, 4, 3, 3, 2.0);
        let g = loss_grad(&lat, &y).unwrap();
        let f = |l: &EmissionLattice| transducer_loss(l, &y).unwrap();
        for ((t, u, k), _) in g.indexed_iter() {
            let fd = fd_cell(&lat, t, u, k, 1e-5, &f);
            let an = project(&lat, &g, t, u, k);
            assert!(
                rel_err(fd, an) <= 1e-4,
                "({t},{u},{k}): fd {fd} analytic {an}"
            );
        }
    }
}

#[test]
fn gradient_is_zero_off_the_aligned_tokens() {
    let mut r = rng(13);
    for _ in 0..50 {
        let (lat, y) = random_instance(&mut r, 4, 3, 3, 2.0);
        let g = loss_grad(&lat, &y).unwrap();
        for ((_, u, k), &x) in g.indexed_iter() {
            if k != BLANK && y.next_token(u) != Some(k) {
                assert_eq!(x, 0.0);
            } else {
                assert!(x <= 0.0);
            }
        }
    }
}

#[test]
fn occupancies_match_path_posteriors() {
    let mut r = rng(14);
    for _ in 0..200 {
        let (lat, y) = random_instance(&mut r, 4, 3, 3, 2.5);
        let tables = LatticeTables::compute(&lat, &y).unwrap();
        let occ = occupancies(&lat, &y, &tables).unwrap();
        let (nb, bl) = brute_force_transition_posteriors(&lat, &y);
        for t in 0..lat.t_len() {
            for u in 0..=lat.u_len() {
                if u < lat.u_len() {
                    assert!((occ.raw_nonblank(t, u) - nb[[t, u]]).abs() < 1e-9);
                }
                assert!((occ.raw_blank(t, u) - bl[[t, u]]).abs() < 1e-9);
                // per-cell identity against alpha*beta / Pr
                let cell = (tables.log_alpha[[t, u]] + tables.log_beta[[t, u]]
                    - tables.log_prob_total)
                    .exp();
                let nb_raw = if u < lat.u_len() {
                    occ.raw_nonblank(t, u)
                } else {
                    0.0
                };
                assert!((nb_raw + occ.raw_blank(t, u) - cell).abs() < 1e-9);
            }
        }
        assert!((occ.w_blank.sum() - 1.0).abs() < 1e-9);
        if lat.u_len() > 0 {
            assert!((occ.w_nonblank.sum() - 1.0).abs() < 1e-9);
        }
        // expected number of emissions and blanks
        assert!((occ.norm_nonblank - lat.u_len() as f64).abs() < 1e-9);
        assert!((occ.norm_blank - lat.t_len() as f64).abs() < 1e-9);
    }
}

#[test]
fn single_alignment_lattice_has_degenerate_occupancy() {
    // T=3, U=2, forced path: emit, blank, emit, blank, blank
    let y = TargetSeq::new(vec![1, 2], 2).unwrap();
    let mut p = Array3::zeros((3, 3, 3));
    let forced = [
        ((0, 0), 1usize),
        ((0, 1), BLANK),
        ((1, 1), 2),
        ((1, 2), BLANK),
        ((2, 2), BLANK),
    ];
    for t in 0..3 {
        for u in 0..3 {
            p[[t, u, 1]] = 1.0; // default: a token that never advances the target here
        }
    }
    for ((t, u), k) in forced {
        p[[t, u, 1]] = 0.0;
        p[[t, u, k]] = 1.0;
    }
    let lat = EmissionLattice::from_probs(p).unwrap();
    let tables = LatticeTables::compute(&lat, &y).unwrap();
    assert!(tables.log_prob_total.abs() < 1e-15);
    let occ = occupancies(&lat, &y, &tables).unwrap();
    assert_eq!(occ.raw_nonblank(0, 0), 1.0);
    assert_eq!(occ.raw_nonblank(1, 1), 1.0);
    assert_eq!(occ.raw_blank(0, 1), 1.0);
    assert_eq!(occ.raw_blank(1, 2), 1.0);
    assert_eq!(occ.raw_blank(2, 2), 1.0);
    assert_eq!(occ.raw_blank(0, 0), 0.0);
    assert_eq!(occ.raw_nonblank(2, 0), 0.0);
    assert!(antidiagonal_check(&tables) < 1e-15);
    let path = viterbi_path(&lat, &y).unwrap();
    assert_eq!(path.cells, vec![(0, 0), (0, 1), (1, 1), (1, 2), (2, 2)]);
}

#[test]
fn antidiagonal_sums_hold_on_random_lattices() {
    let mut r = rng(15);
    for _ in 0..1000 {
        let (lat, y) = random_instance(&mut r, 4, 3, 3, 3.0);
        let tables = LatticeTables::compute(&lat, &y).unwrap();
        assert!(antidiagonal_check(&tables) <= 1e-9);
    }
}

#[test]
fn viterbi_matches_best_enumerated_path() {
    let mut r = rng(16);
    for _ in 0..200 {
        let (lat, y) = random_instance(&mut r, 4, 3, 3, 3.0);
        let best = enumerate_alignments(lat.t_len(), lat.u_len())
            .iter()
            .map(|p| path_prob(&lat, &y, p).ln())
            .fold(f64::NEG_INFINITY, f64::max);
        let path = viterbi_path(&lat, &y).unwrap();
        assert!((path.log_score - best).abs() < 1e-9);
        assert_eq!(path.cells.len(), lat.t_len() + lat.u_len());
    }
}

#[test]
fn cell_posteriors_match_enumeration() {
    let mut r = rng(17);
    for _ in 0..100 {
        let (lat, y) = random_instance(&mut r, 4, 3, 3, 2.0);
        let tables = LatticeTables::compute(&lat, &y).unwrap();
        let post = cell_posteriors(&tables).unwrap();
        let brute = brute_force_cell_posteriors(&lat, &y);
        for (a, b) in post.iter().zip(brute.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn forward_and_backward_agree(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (lat, y) = random_instance(&mut r, 6, 5, 4, 4.0);
        let tables = LatticeTables::compute(&lat, &y).unwrap();
        prop_assert!((tables.log_prob_total - tables.log_beta[[0, 0]]).abs() < 1e-9);
        prop_assert_eq!(tables.log_alpha[[0, 0]], 0.0);
        let (t, u) = (lat.t_len() - 1, lat.u_len());
        prop_assert_eq!(tables.log_beta[[t, u]], lat.lp(t, u, BLANK));
    }

    #[test]
    fn boosting_a_viterbi_transition_never_lowers_probability(seed in any::<u64>(), frac in 0.01f64..0.99) {
        let mut r = rng(seed);
        let (lat, y) = random_instance(&mut r, 4, 3, 3, 2.0);
        prop_assume!(lat.vocab() >= 2);
        let path = viterbi_path(&lat, &y).unwrap();
        let (t, u) = path.cells[0];
        let (t2, _) = path.cells.get(1).copied().unwrap_or((t + 1, u));
        let k = if t2 > t { BLANK } else { y.tokens()[u] };
        // move a fraction of the unused tokens' mass onto k
        let other = if u < y.len() { Some(y.tokens()[u]) } else { None };
        let mut p: Array3<f64> = lat.log_probs().mapv(f64::exp);
        let mut moved = 0.0;
        for m in 0..=lat.vocab() {
            if m != BLANK && Some(m) != other && m != k {
                let d = p[[t, u, m]] * frac;
                p[[t, u, m]] -= d;
                moved += d;
            }
        }
        p[[t, u, k]] += moved;
        let boosted = EmissionLattice::from_probs(p).unwrap();
        let before = transducer_loss(&lat, &y).unwrap();
        let after = transducer_loss(&boosted, &y).unwrap();
        prop_assert!(after <= before + 1e-12);
    }
}
