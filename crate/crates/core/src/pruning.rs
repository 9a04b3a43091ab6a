//! Pruned band: a monotone strip of `U_r` target positions per input step.
//!
//! Bands are grown one row at a time from width 1, each step choosing
//! (by a monotone DP over per-cell posterior mass) whether to extend the
//! previous band downward or upward at every `t`. Bands of increasing width
//! are therefore nested, so the banded loss can only fall as the width grows.
//!
//! The width-1 spine advances at most `k = max(1, ceil(U / (T-1)))` positions
//! per step and a band of width `w` at most `k + w - 2`. When `T - 1 >= U`
//! this keeps every band of width 2 or more connected: it always contains at
//! least one complete alignment, so the banded loss is finite.

use crate::error::{Error, Result};
use crate::lattice::{EmissionLattice, TargetSeq};
use crate::transducer::{cell_posteriors, CellMask, LatticeTables};

pub const DEFAULT_BAND_WIDTH: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PruneBand {
    width: usize,
    lower: Vec<usize>,
    u_len: usize,
}

impl PruneBand {
    /// Validated band: `lower` non-decreasing, within `0..=U+1-width`, first
    /// entry 0 and last entry `U+1-width` so both lattice corners are covered.
    pub fn new(width: usize, lower: Vec<usize>, u_len: usize) -> Result<Self> {
        if width == 0 || width > u_len + 1 {
            return Err(Error::invalid(format!(
                "band width {width} outside 1..={}",
                u_len + 1
            )));
        }
        if lower.is_empty() {
            return Err(Error::invalid("band needs at least one step"));
        }
        let max_lower = u_len + 1 - width;
        if lower.iter().any(|&l| l > max_lower) {
            return Err(Error::invalid(format!("band start exceeds {max_lower}")));
        }
        if lower.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::invalid("band starts must be non-decreasing"));
        }
        if lower[0] != 0 || *lower.last().expect("nonempty") != max_lower {
            return Err(Error::invalid("band must cover (0, 0) and (T-1, U)"));
        }
        Ok(Self {
            width,
            lower,
            u_len,
        })
    }

    pub fn full(t_len: usize, u_len: usize) -> Self {
        Self {
            width: u_len + 1,
            lower: vec![0; t_len],
            u_len,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn lower(&self) -> &[usize] {
        &self.lower
    }

    pub fn t_len(&self) -> usize {
        self.lower.len()
    }

    pub fn u_len(&self) -> usize {
        self.u_len
    }

    pub fn contains(&self, t: usize, u: usize) -> bool {
        let l = self.lower[t];
        u >= l && u < l + self.width
    }

    pub fn to_mask(&self) -> CellMask {
        CellMask::from_fn(self.t_len(), self.u_len, |t, u| self.contains(t, u))
    }

    /// `# band ...` comment lines for the lattice text format.
    pub fn comment_lines(&self) -> Vec<String> {
        let mut out = vec![format!("band width {}", self.width)];
        out.extend(
            self.lower
                .iter()
                .enumerate()
                .map(|(t, l)| format!("band t={t} u={}..{}", l, l + self.width - 1)),
        );
        out
    }
}

/// Chooses a band of width `u_r` concentrating posterior mass. Widths of
/// `U+1` or more (and single-step lattices) saturate to the full grid.
pub fn select_band(tables: &LatticeTables, u_r: usize) -> Result<PruneBand> {
    if u_r == 0 {
        return Err(Error::invalid("band width must be >= 1"));
    }
    let (t_len, u_len) = (tables.t_len(), tables.u_len());
    if u_r > u_len || t_len == 1 {
        return Ok(PruneBand::full(t_len, u_len));
    }
    let mass = cell_posteriors(tables)?;
    let k = max_spine_step(t_len, u_len);
    let mut lower = narrowest_band(&mass, k);
    for width in 2..=u_r {
        lower = widen(&mass, &lower, width, k + width - 2);
    }
    PruneBand::new(u_r, lower, u_len)
}

fn max_spine_step(t_len: usize, u_len: usize) -> usize {
    u_len.div_ceil(t_len - 1).max(1)
}

/// Width-1 band: one monotone cell per step from `(0,0)` to `(T-1,U)`,
/// advancing at most `max_step` positions per step.
fn narrowest_band(mass: &ndarray::Array2<f64>, max_step: usize) -> Vec<usize> {
    let (t_len, rows) = mass.dim();
    let u_len = rows - 1;
    let neg = f64::NEG_INFINITY;
    let mut score = vec![vec![neg; rows]; t_len];
    // back[t][l]: start chosen at t-1
    let mut back = vec![vec![0usize; rows]; t_len];
    score[0][0] = mass[[0, 0]];
    for t in 1..t_len {
        for l in 0..rows {
            let (mut best, mut arg) = (neg, 0);
            for pl in l.saturating_sub(max_step)..=l {
                if score[t - 1][pl] > best {
                    best = score[t - 1][pl];
                    arg = pl;
                }
            }
            if best > neg {
                score[t][l] = best + mass[[t, l]];
                back[t][l] = arg;
            }
        }
    }
    let mut lower = vec![0; t_len];
    lower[t_len - 1] = u_len;
    for t in (1..t_len).rev() {
        lower[t - 1] = back[t][lower[t]];
    }
    lower
}

/// Grows a band of width `width - 1` by one row at every step, keeping
/// consecutive starts within `max_step` of each other.
fn widen(mass: &ndarray::Array2<f64>, prev: &[usize], width: usize, max_step: usize) -> Vec<usize> {
    let t_len = prev.len();
    let u_len = mass.dim().1 - 1;
    let max_lower = u_len + 1 - width;
    // choice 0 extends downward (start l-1), choice 1 upward (start l)
    let start = |t: usize, c: usize| -> Option<usize> {
        let l = prev[t];
        let s = if c == 0 { l.checked_sub(1)? } else { l };
        (s <= max_lower).then_some(s)
    };
    let gain = |t: usize, c: usize| -> f64 {
        let l = prev[t];
        if c == 0 {
            mass[[t, l - 1]]
        } else {
            mass[[t, l + width - 1]]
        }
    };
    let neg = f64::NEG_INFINITY;
    let mut score = vec![[neg; 2]; t_len];
    let mut back = vec![[0usize; 2]; t_len];
    for c in 0..2 {
        if start(0, c) == Some(0) {
            score[0][c] = gain(0, c);
        }
    }
    for t in 1..t_len {
        for c in 0..2 {
            let Some(s) = start(t, c) else { continue };
            for pc in 0..2 {
                let Some(ps) = start(t - 1, pc) else { continue };
                if ps <= s && s - ps <= max_step && score[t - 1][pc] > neg {
                    let cand = score[t - 1][pc] + gain(t, c);
                    if cand > score[t][c] {
                        score[t][c] = cand;
                        back[t][c] = pc;
                    }
                }
            }
        }
    }
    let mut c = (0..2)
        .find(|&c| start(t_len - 1, c) == Some(max_lower) && score[t_len - 1][c] > neg)
        .expect("extending upward until the start leaves 0, then downward, is feasible");
    let mut lower = vec![0; t_len];
    for t in (0..t_len).rev() {
        lower[t] = start(t, c).expect("feasible choice");
        c = back[t][c];
    }
    lower
}

/// Transducer loss restricted to alignments inside the band; `+inf` when the
/// band admits no alignment.
pub fn banded_loss(lattice: &EmissionLattice, target: &TargetSeq, band: &PruneBand) -> Result<f64> {
    if band.t_len() != lattice.t_len() || band.u_len() != lattice.u_len() {
        return Err(Error::shape("band does not match lattice"));
    }
    masked_loss(lattice, target, &band.to_mask())
}

/// Transducer loss over alignments that stay inside an arbitrary cell mask.
pub fn masked_loss(lattice: &EmissionLattice, target: &TargetSeq, mask: &CellMask) -> Result<f64> {
    let tables = LatticeTables::compute_masked(lattice, target, Some(mask))?;
    Ok(-tables.log_prob_total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn invariants_enforced() {
        assert!(PruneBand::new(2, vec![0, 1, 0], 2).is_err());
        assert!(PruneBand::new(2, vec![1, 1], 2).is_err());
        assert!(PruneBand::new(2, vec![0, 0], 2).is_err());
        assert!(PruneBand::new(4, vec![0, 0], 2).is_err());
        assert!(PruneBand::new(2, vec![0, 1], 2).is_ok());
    }

    #[test]
    fn saturated_band_covers_everything() {
        let lat = EmissionLattice::uniform(4, 3, 2);
        let y = TargetSeq::new(vec![1, 2, 1], 2).unwrap();
        let tables = LatticeTables::compute(&lat, &y).unwrap();
        for w in [4, 9] {
            let band = select_band(&tables, w).unwrap();
            assert_eq!(band.to_mask().count(), 16);
        }
        assert!(select_band(&tables, 0).is_err());
    }

    #[test]
    fn full_band_loss_is_exact() {
        let lat = EmissionLattice::uniform(3, 2, 2);
        let y = TargetSeq::new(vec![1, 2], 2).unwrap();
        let full = crate::transducer::transducer_loss(&lat, &y).unwrap();
        assert_eq!(banded_loss(&lat, &y, &PruneBand::full(3, 2)).unwrap(), full);
    }

    #[test]
    fn mask_keeping_blank_first_path() {
        let lat = EmissionLattice::uniform(2, 1, 1);
        let y = TargetSeq::new(vec![1], 1).unwrap();
        let mask = CellMask::from_fn(2, 1, |t, u| !(t == 0 && u == 1));
        let loss = masked_loss(&lat, &y, &mask).unwrap();
        assert!((loss + 0.125f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn comments_describe_band() {
        let band = PruneBand::new(2, vec![0, 1], 2).unwrap();
        let lines = band.comment_lines();
        assert_eq!(lines[0], "band width 2");
        assert_eq!(lines[2], "band t=1 u=1..2");
    }
}
