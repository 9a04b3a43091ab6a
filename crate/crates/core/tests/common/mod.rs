//! Independent oracles shared by the integration and acceptance tests.
//!
//! Nothing here calls the forward-backward code under test: alignment sums are
//! computed by explicit path enumeration and gradients by finite differences.

#![allow(dead_code)]

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tcr::lattice::{EmissionLattice, TargetSeq, BLANK};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random lattice with `T <= max_t`, `U <= max_u`, `V <= max_v` and logits in
/// `[-spread, spread]`.
pub fn random_instance(
    rng: &mut ChaCha8Rng,
    max_t: usize,
    max_u: usize,
    max_v: usize,
    spread: f64,
) -> (EmissionLattice, TargetSeq) {
    let t = rng.random_range(1..=max_t);
    let u = rng.random_range(0..=max_u);
    let v = rng.random_range(1..=max_v);
    random_lattice(rng, t, u, v, spread)
}

pub fn random_lattice(
    rng: &mut ChaCha8Rng,
    t: usize,
    u: usize,
    v: usize,
    spread: f64,
) -> (EmissionLattice, TargetSeq) {
    let logits = Array3::from_shape_fn((t, u + 1, v + 1), |_| rng.random_range(-spread..spread));
    let tokens = (0..u).map(|_| rng.random_range(1..=v)).collect();
    (
        EmissionLattice::from_logits(logits).unwrap(),
        TargetSeq::new(tokens, v).unwrap(),
    )
}

/// Move in an alignment: the cell it leaves and whether it is a blank.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Step {
    pub t: usize,
    pub u: usize,
    pub blank: bool,
}

/// Every monotone alignment from `(0,0)` through the final blank at `(T-1,U)`.
pub fn enumerate_alignments(t_len: usize, u_len: usize) -> Vec<Vec<Step>> {
    fn go(
        t: usize,
        u: usize,
        t_len: usize,
        u_len: usize,
        cur: &mut Vec<Step>,
        out: &mut Vec<Vec<Step>>,
    ) {
        if t == t_len - 1 && u == u_len {
            cur.push(Step { t, u, blank: true });
            out.push(cur.clone());
            cur.pop();
            return;
        }
        if t + 1 < t_len {
            cur.push(Step { t, u, blank: true });
            go(t + 1, u, t_len, u_len, cur, out);
            cur.pop();
        }
        if u < u_len {
            cur.push(Step { t, u, blank: false });
            go(t, u + 1, t_len, u_len, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(0, 0, t_len, u_len, &mut Vec::new(), &mut out);
    out
}

pub fn path_prob(lat: &EmissionLattice, y: &TargetSeq, path: &[Step]) -> f64 {
    path.iter()
        .map(|s| {
            let k = if s.blank { BLANK } else { y.tokens()[s.u] };
            lat.lp(s.t, s.u, k).exp()
        })
        .product()
}

/// `Pr(y|x)` by summing products over all alignments.
pub fn brute_force_prob(lat: &EmissionLattice, y: &TargetSeq) -> f64 {
    enumerate_alignments(lat.t_len(), lat.u_len())
        .iter()
        .map(|p| path_prob(lat, y, p))
        .sum()
}

/// Posterior expected counts of each transition: `(nonblank (T,U), blank (T,U+1))`.
pub fn brute_force_transition_posteriors(
    lat: &EmissionLattice,
    y: &TargetSeq,
) -> (Array2<f64>, Array2<f64>) {
    let (t_len, u_len) = (lat.t_len(), lat.u_len());
    let mut nb = Array2::zeros((t_len, u_len));
    let mut bl = Array2::zeros((t_len, u_len + 1));
    let paths = enumerate_alignments(t_len, u_len);
    let z: f64 = paths.iter().map(|p| path_prob(lat, y, p)).sum();
    for p in &paths {
        let w = path_prob(lat, y, p) / z;
        for s in p {
            if s.blank {
                bl[[s.t, s.u]] += w;
            } else {
                nb[[s.t, s.u]] += w;
            }
        }
    }
    (nb, bl)
}

/// Per-cell posterior: probability that an alignment visits `(t, u)`.
pub fn brute_force_cell_posteriors(lat: &EmissionLattice, y: &TargetSeq) -> Array2<f64> {
    let (t_len, u_len) = (lat.t_len(), lat.u_len());
    let mut out = Array2::zeros((t_len, u_len + 1));
    let paths = enumerate_alignments(t_len, u_len);
    let z: f64 = paths.iter().map(|p| path_prob(lat, y, p)).sum();
    for p in &paths {
        let w = path_prob(lat, y, p) / z;
        for s in p {
            out[[s.t, s.u]] += w;
        }
    }
    out
}

/// Adds `eps` to `logp[t,u,k]` and renormalizes that cell.
pub fn perturb_cell(
    lat: &EmissionLattice,
    t: usize,
    u: usize,
    k: usize,
    eps: f64,
) -> EmissionLattice {
    let mut lp = lat.log_probs().clone();
    lp[[t, u, k]] += eps;
    let cell: Vec<f64> = lp.slice(ndarray::s![t, u, ..]).to_vec();
    let m = cell.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z = m + cell.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
    for kk in 0..cell.len() {
        lp[[t, u, kk]] -= z;
    }
    EmissionLattice::from_log_probs(lp).unwrap()
}

/// Central difference of `f` along the renormalized perturbation of one entry.
pub fn fd_cell(
    lat: &EmissionLattice,
    t: usize,
    u: usize,
    k: usize,
    eps: f64,
    f: &dyn Fn(&EmissionLattice) -> f64,
) -> f64 {
    (f(&perturb_cell(lat, t, u, k, eps)) - f(&perturb_cell(lat, t, u, k, -eps))) / (2.0 * eps)
}

/// Analytic gradient w.r.t. free log-probabilities projected onto the
/// renormalized perturbation direction: `g_k - p_k * sum(g)`.
pub fn project(lat: &EmissionLattice, g: &Array3<f64>, t: usize, u: usize, k: usize) -> f64 {
    let sum: f64 = g.slice(ndarray::s![t, u, ..]).sum();
    g[[t, u, k]] - lat.lp(t, u, k).exp() * sum
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Exact Levenshtein distance by full-matrix dynamic programming.
pub fn edit_distance_oracle(a: &[usize], b: &[usize]) -> usize {
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=b.len() {
        d[0][j] = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let sub = d[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    d[a.len()][b.len()]
}
