//! Forward-backward over the transducer alignment lattice.
//!
//! Grid coordinates are 0-based: cell `(t, u)` means "at input step `t`,
//! `u` target tokens emitted". A blank moves `(t, u) -> (t+1, u)`, emitting
//! `y_{u+1}` moves `(t, u) -> (t, u+1)`, and every alignment ends with the
//! blank leaving `(T-1, U)`.
//!
//! All tables are in log space. Cells outside a [`CellMask`] (or unreachable)
//! hold `-inf`.

use ndarray::{Array2, Array3};

use crate::error::{Error, Result};
use crate::lattice::{EmissionLattice, TargetSeq, BLANK};
use crate::logspace::{log_add, LOG_ZERO};

/// Subset of lattice cells that alignments may visit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CellMask {
    rows: usize,
    allowed: Vec<bool>,
    t_len: usize,
}

impl CellMask {
    pub fn full(t_len: usize, u_len: usize) -> Self {
        Self {
            rows: u_len + 1,
            allowed: vec![true; t_len * (u_len + 1)],
            t_len,
        }
    }

    pub fn from_fn(t_len: usize, u_len: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let rows = u_len + 1;
        let allowed = (0..t_len * rows).map(|i| f(i / rows, i % rows)).collect();
        Self {
            rows,
            allowed,
            t_len,
        }
    }

    #[inline]
    pub fn contains(&self, t: usize, u: usize) -> bool {
        self.allowed[t * self.rows + u]
    }

    pub fn t_len(&self) -> usize {
        self.t_len
    }

    pub fn u_len(&self) -> usize {
        self.rows - 1
    }

    pub fn count(&self) -> usize {
        self.allowed.iter().filter(|&&a| a).count()
    }

    /// Allowed cells in row-major `(t, u)` order.
    pub fn cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.allowed
            .iter()
            .enumerate()
            .filter(|(_, &a)| a)
            .map(|(i, _)| (i / self.rows, i % self.rows))
    }

    fn check(&self, lattice: &EmissionLattice) -> Result<()> {
        if self.t_len != lattice.t_len() || self.rows != lattice.u_len() + 1 {
            return Err(Error::shape(format!(
                "mask is {}x{} but lattice grid is {}x{}",
                self.t_len,
                self.rows,
                lattice.t_len(),
                lattice.u_len() + 1
            )));
        }
        Ok(())
    }
}

/// Log-domain forward and backward tables for one lattice/target pair.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeTables {
    pub log_alpha: Array2<f64>,
    pub log_beta: Array2<f64>,
    /// `ln Pr(y|x)`.
    pub log_prob_total: f64,
}

impl LatticeTables {
    pub fn compute(lattice: &EmissionLattice, target: &TargetSeq) -> Result<Self> {
        Self::compute_masked(lattice, target, None)
    }

    pub fn compute_masked(
        lattice: &EmissionLattice,
        target: &TargetSeq,
        mask: Option<&CellMask>,
    ) -> Result<Self> {
        let log_alpha = forward_masked(lattice, target, mask)?;
        let log_beta = backward_masked(lattice, target, mask)?;
        let (t_last, u_last) = (lattice.t_len() - 1, lattice.u_len());
        let log_prob_total = log_alpha[[t_last, u_last]] + lattice.lp(t_last, u_last, BLANK);
        Ok(Self {
            log_alpha,
            log_beta,
            log_prob_total,
        })
    }

    pub fn t_len(&self) -> usize {
        self.log_alpha.dim().0
    }

    pub fn u_len(&self) -> usize {
        self.log_alpha.dim().1 - 1
    }

    /// `ln beta(t+1, u)` with the past-the-end convention: 1 at the final row,
    /// 0 elsewhere.
    #[inline]
    pub fn log_beta_after_blank(&self, t: usize, u: usize) -> f64 {
        if t + 1 < self.t_len() {
            self.log_beta[[t + 1, u]]
        } else if u == self.u_len() {
            0.0
        } else {
            LOG_ZERO
        }
    }
}

/// `ln alpha(t, u)`: probability of having emitted `y_1..y_u` on arrival at step `t`.
pub fn forward_pass(lattice: &EmissionLattice, target: &TargetSeq) -> Result<Array2<f64>> {
    forward_masked(lattice, target, None)
}

/// `ln beta(t, u)`: probability of completing `y_{u+1}..y_U` from `(t, u)`,
/// including the final blank.
pub fn backward_pass(lattice: &EmissionLattice, target: &TargetSeq) -> Result<Array2<f64>> {
    backward_masked(lattice, target, None)
}

fn forward_masked(
    lattice: &EmissionLattice,
    target: &TargetSeq,
    mask: Option<&CellMask>,
) -> Result<Array2<f64>> {
    target.check_against(lattice)?;
    if let Some(m) = mask {
        m.check(lattice)?;
    }
    let (t_len, u_len) = (lattice.t_len(), lattice.u_len());
    let y = target.tokens();
    let mut alpha = Array2::from_elem((t_len, u_len + 1), LOG_ZERO);
    for t in 0..t_len {
        for u in 0..=u_len {
            if mask.is_some_and(|m| !m.contains(t, u)) {
                continue;
            }
            if t == 0 && u == 0 {
                alpha[[0, 0]] = 0.0;
                continue;
            }
            let mut acc = LOG_ZERO;
            if t > 0 {
                acc = log_add(acc, alpha[[t - 1, u]] + lattice.lp(t - 1, u, BLANK));
            }
            if u > 0 {
                acc = log_add(acc, alpha[[t, u - 1]] + lattice.lp(t, u - 1, y[u - 1]));
            }
            alpha[[t, u]] = acc;
        }
    }
    Ok(alpha)
}

fn backward_masked(
    lattice: &EmissionLattice,
    target: &TargetSeq,
    mask: Option<&CellMask>,
) -> Result<Array2<f64>> {
    target.check_against(lattice)?;
    if let Some(m) = mask {
        m.check(lattice)?;
    }
    let (t_len, u_len) = (lattice.t_len(), lattice.u_len());
    let y = target.tokens();
    let mut beta = Array2::from_elem((t_len, u_len + 1), LOG_ZERO);
    for t in (0..t_len).rev() {
        for u in (0..=u_len).rev() {
            if mask.is_some_and(|m| !m.contains(t, u)) {
                continue;
            }
            if t == t_len - 1 && u == u_len {
                beta[[t, u]] = lattice.lp(t, u, BLANK);
                continue;
            }
            let mut acc = LOG_ZERO;
            if t + 1 < t_len {
                acc = log_add(acc, beta[[t + 1, u]] + lattice.lp(t, u, BLANK));
            }
            if u < u_len {
                acc = log_add(acc, beta[[t, u + 1]] + lattice.lp(t, u, y[u]));
            }
            beta[[t, u]] = acc;
        }
    }
    Ok(beta)
}

/// `-ln Pr(y|x)`; `+inf` when no alignment has nonzero probability.
pub fn transducer_loss(lattice: &EmissionLattice, target: &TargetSeq) -> Result<f64> {
    let alpha = forward_pass(lattice, target)?;
    let (t, u) = (lattice.t_len() - 1, lattice.u_len());
    Ok(-(alpha[[t, u]] + lattice.lp(t, u, BLANK)))
}

/// Gradient of `-ln Pr(y|x)` with respect to every `logp[t, u, k]`, treating
/// the log-probabilities as free variables. Nonzero only at the blank and the
/// aligned next token of each cell, where it equals minus the posterior
/// occupancy of that transition.
pub fn loss_grad(lattice: &EmissionLattice, target: &TargetSeq) -> Result<Array3<f64>> {
    let tables = LatticeTables::compute(lattice, target)?;
    loss_grad_from_tables(lattice, target, &tables)
}

pub fn loss_grad_from_tables(
    lattice: &EmissionLattice,
    target: &TargetSeq,
    tables: &LatticeTables,
) -> Result<Array3<f64>> {
    let log_z = tables.log_prob_total;
    if !log_z.is_finite() {
        return Err(Error::ZeroProbability);
    }
    let (t_len, u_len) = (lattice.t_len(), lattice.u_len());
    let mut grad = Array3::zeros(lattice.log_probs().dim());
    for t in 0..t_len {
        for u in 0..=u_len {
            let a = tables.log_alpha[[t, u]];
            if a == LOG_ZERO {
                continue;
            }
            let blank = a + lattice.lp(t, u, BLANK) + tables.log_beta_after_blank(t, u) - log_z;
            grad[[t, u, BLANK]] = -blank.exp();
            if let Some(k) = target.next_token(u) {
                let emit = a + lattice.lp(t, u, k) + tables.log_beta[[t, u + 1]] - log_z;
                grad[[t, u, k]] = -emit.exp();
            }
        }
    }
    Ok(grad)
}

/// Normalized blank / non-blank transition occupancies.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyMaps {
    /// `(T, U)`: emission of `y_{u+1}` from `(t, u)`, normalized to sum 1.
    pub w_nonblank: Array2<f64>,
    /// `(T, U+1)`: blank from `(t, u)`, normalized to sum 1.
    pub w_blank: Array2<f64>,
    /// Sum of raw non-blank occupancies (the expected number of emissions, `U`).
    pub norm_nonblank: f64,
    /// Sum of raw blank occupancies (the expected number of blanks, `T`).
    pub norm_blank: f64,
}

impl OccupancyMaps {
    pub fn t_len(&self) -> usize {
        self.w_blank.dim().0
    }

    pub fn u_len(&self) -> usize {
        self.w_blank.dim().1 - 1
    }

    /// Raw (posterior) non-blank occupancy at `(t, u)`.
    pub fn raw_nonblank(&self, t: usize, u: usize) -> f64 {
        self.w_nonblank[[t, u]] * self.norm_nonblank
    }

    pub fn raw_blank(&self, t: usize, u: usize) -> f64 {
        self.w_blank[[t, u]] * self.norm_blank
    }

    /// Multiplies both groups of raw weights by `c > 0`; the normalized maps
    /// are unchanged.
    pub fn rescaled(&self, c: f64) -> Self {
        Self {
            norm_nonblank: self.norm_nonblank * c,
            norm_blank: self.norm_blank * c,
            ..self.clone()
        }
    }
}

/// Transition occupancies normalized by `Pr(y|x)` and then by each group's sum.
pub fn occupancies(
    lattice: &EmissionLattice,
    target: &TargetSeq,
    tables: &LatticeTables,
) -> Result<OccupancyMaps> {
    if tables.t_len() != lattice.t_len() || tables.u_len() != lattice.u_len() {
        return Err(Error::shape("tables do not match lattice"));
    }
    target.check_against(lattice)?;
    let log_z = tables.log_prob_total;
    if !log_z.is_finite() {
        return Err(Error::ZeroProbability);
    }
    let (t_len, u_len) = (lattice.t_len(), lattice.u_len());
    let mut w_nonblank = Array2::zeros((t_len, u_len));
    let mut w_blank = Array2::zeros((t_len, u_len + 1));
    for t in 0..t_len {
        for u in 0..=u_len {
            let a = tables.log_alpha[[t, u]];
            if a == LOG_ZERO {
                continue;
            }
            w_blank[[t, u]] =
                (a + lattice.lp(t, u, BLANK) + tables.log_beta_after_blank(t, u) - log_z).exp();
            if let Some(k) = target.next_token(u) {
                w_nonblank[[t, u]] =
                    (a + lattice.lp(t, u, k) + tables.log_beta[[t, u + 1]] - log_z).exp();
            }
        }
    }
    let norm_nonblank = w_nonblank.sum();
    let norm_blank = w_blank.sum();
    if norm_nonblank > 0.0 {
        w_nonblank /= norm_nonblank;
    }
    w_blank /= norm_blank;
    Ok(OccupancyMaps {
        w_nonblank,
        w_blank,
        norm_nonblank,
        norm_blank,
    })
}

/// Per-cell posterior mass `alpha(t,u) beta(t,u) / Pr(y|x)`: the probability
/// that an alignment passes through `(t, u)`.
pub fn cell_posteriors(tables: &LatticeTables) -> Result<Array2<f64>> {
    let log_z = tables.log_prob_total;
    if !log_z.is_finite() {
        return Err(Error::ZeroProbability);
    }
    Ok(ndarray::Zip::from(&tables.log_alpha)
        .and(&tables.log_beta)
        .map_collect(|&a, &b| (a + b - log_z).exp()))
}

/// Largest deviation, over antidiagonals `t + u = n`, between
/// `ln sum alpha*beta` on that diagonal and `ln Pr(y|x)`. Every alignment
/// crosses each antidiagonal exactly once, so the deviation is zero up to
/// rounding.
pub fn antidiagonal_check(tables: &LatticeTables) -> f64 {
    let log_z = tables.log_prob_total;
    if !log_z.is_finite() {
        return 0.0;
    }
    let (t_len, u_len) = (tables.t_len(), tables.u_len());
    let mut worst = 0.0f64;
    for n in 0..t_len + u_len {
        let u_lo = n.saturating_sub(t_len - 1);
        let u_hi = n.min(u_len);
        let mut acc = LOG_ZERO;
        for u in u_lo..=u_hi {
            let t = n - u;
            acc = log_add(acc, tables.log_alpha[[t, u]] + tables.log_beta[[t, u]]);
        }
        worst = worst.max((acc - log_z).abs());
    }
    worst
}

/// Single best alignment.
#[derive(Debug, Clone, PartialEq)]
pub struct ViterbiPath {
    /// Visited cells from `(0, 0)` to `(T-1, U)`; length `T + U`.
    pub cells: Vec<(usize, usize)>,
    /// Log-probability of the path including the final blank.
    pub log_score: f64,
}

/// Max-product alignment. Ties go to the blank (horizontal) move, decided in
/// forward time order.
pub fn viterbi_path(lattice: &EmissionLattice, target: &TargetSeq) -> Result<ViterbiPath> {
    target.check_against(lattice)?;
    let (t_len, u_len) = (lattice.t_len(), lattice.u_len());
    let y = target.tokens();
    // best score from (t, u) to the end
    let mut best = Array2::from_elem((t_len, u_len + 1), LOG_ZERO);
    for t in (0..t_len).rev() {
        for u in (0..=u_len).rev() {
            best[[t, u]] = if t == t_len - 1 && u == u_len {
                lattice.lp(t, u, BLANK)
            } else {
                let h = if t + 1 < t_len {
                    best[[t + 1, u]] + lattice.lp(t, u, BLANK)
                } else {
                    LOG_ZERO
                };
                let v = if u < u_len {
                    best[[t, u + 1]] + lattice.lp(t, u, y[u])
                } else {
                    LOG_ZERO
                };
                h.max(v)
            };
        }
    }
    let log_score = best[[0, 0]];
    if log_score == LOG_ZERO {
        return Err(Error::ZeroProbability);
    }
    let mut cells = Vec::with_capacity(t_len + u_len);
    let (mut t, mut u) = (0, 0);
    cells.push((t, u));
    while (t, u) != (t_len - 1, u_len) {
        let h = if t + 1 < t_len {
            best[[t + 1, u]] + lattice.lp(t, u, BLANK)
        } else {
            LOG_ZERO
        };
        let v = if u < u_len {
            best[[t, u + 1]] + lattice.lp(t, u, y[u])
        } else {
            LOG_ZERO
        };
        if h >= v && h > LOG_ZERO {
            t += 1;
        } else {
            u += 1;
        }
        cells.push((t, u));
    }
    Ok(ViterbiPath { cells, log_score })
}
