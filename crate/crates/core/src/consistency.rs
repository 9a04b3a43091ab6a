//! Consistency regularization between two views' emission lattices.
//!
//! Every variant reduces to a weighted sum of per-cell divergences between
//! view `i` and view `j`, so a single evaluator computes values and
//! gradients (with respect to both lattices' log-probabilities) for all of
//! them. Occupancy weights enter as constants.

use std::fmt;
use std::str::FromStr;

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{EmissionLattice, TargetSeq, BLANK};
use crate::logspace::{log_sum_exp_iter, xlogx_ratio, LOG_ZERO};
use crate::transducer::{viterbi_path, CellMask, OccupancyMaps};

/// Which consistency term fills the `lambda` slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Tcr,
    FullJoint,
    ThresholdTopk,
    BestOnePath,
    CompressedProb,
    /// Mean squared error between encoder outputs; handled by the model.
    EncoderMse,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Tcr,
        Variant::FullJoint,
        Variant::ThresholdTopk,
        Variant::BestOnePath,
        Variant::CompressedProb,
        Variant::EncoderMse,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Tcr => "tcr",
            Variant::FullJoint => "full_joint",
            Variant::ThresholdTopk => "threshold_topk",
            Variant::BestOnePath => "best_one_path",
            Variant::CompressedProb => "compressed_prob",
            Variant::EncoderMse => "encoder_mse",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }
}

/// How the per-cell divergence in the occupancy-weighted term is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlMode {
    /// Two-outcome KL between `(p, 1-p)` of the named token in both views.
    TokenBernoulli,
    /// KL over all `V+1` outputs of the cell.
    FullVocab,
}

impl KlMode {
    pub fn name(self) -> &'static str {
        match self {
            KlMode::TokenBernoulli => "token_bernoulli",
            KlMode::FullVocab => "full_vocab",
        }
    }
}

impl FromStr for KlMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "token_bernoulli" => Ok(KlMode::TokenBernoulli),
            "full_vocab" => Ok(KlMode::FullVocab),
            _ => Err(Error::Config(format!("unknown kl mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TcrConfig {
    pub lambda: f64,
    pub beta_nonblank: f64,
    pub beta_blank: f64,
    /// Upper bound applied to each directional consistency value.
    pub clamp: f64,
    pub variant: Variant,
    pub kl_mode: KlMode,
    pub topk_blank: usize,
    pub topk_nonblank: usize,
}

impl Default for TcrConfig {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            beta_nonblank: 1.0,
            beta_blank: 1.0,
            clamp: 5e-3,
            variant: Variant::Tcr,
            kl_mode: KlMode::TokenBernoulli,
            topk_blank: 2,
            topk_nonblank: 2,
        }
    }
}

impl TcrConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        if !(self.clamp > 0.0) {
            return Err(Error::Config(format!(
                "clamp must be > 0, got {}",
                self.clamp
            )));
        }
        if self.topk_blank == 0 || self.topk_nonblank == 0 {
            return Err(Error::Config("top-k counts must be >= 1".into()));
        }
        if !self.beta_blank.is_finite() || !self.beta_nonblank.is_finite() {
            return Err(Error::Config("beta weights must be finite".into()));
        }
        Ok(())
    }
}

/// Blank / non-blank split of the occupancy-weighted term (after the beta
/// weights, before clamping).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupSplit {
    pub nonblank: f64,
    pub blank: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyResult {
    /// `min(d_c_raw, clamp)`.
    pub d_c: f64,
    pub d_c_raw: f64,
    /// Present for the occupancy-weighted variant only.
    pub per_group: Option<GroupSplit>,
    pub cells_used: usize,
}

/// Gradients of a consistency value with respect to both lattices'
/// log-probabilities (as free variables).
#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyGrad {
    pub wrt_i: Array3<f64>,
    pub wrt_j: Array3<f64>,
}

impl ConsistencyGrad {
    fn zeros(lat: &EmissionLattice) -> Self {
        let dim = lat.log_probs().dim();
        Self {
            wrt_i: Array3::zeros(dim),
            wrt_j: Array3::zeros(dim),
        }
    }

    pub fn scaled(mut self, c: f64) -> Self {
        self.wrt_i *= c;
        self.wrt_j *= c;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum CellDivergence {
    FullVocab,
    /// Two-outcome KL on one token's probability.
    Token(usize),
    /// KL over {next target token, blank, everything else}.
    Compressed(Option<usize>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Group {
    NonBlank,
    Blank,
    Cell,
}

#[derive(Debug, Clone, Copy)]
struct Term {
    t: usize,
    u: usize,
    weight: f64,
    kind: CellDivergence,
    group: Group,
}

struct Evaluated {
    value: f64,
    nonblank: f64,
    blank: f64,
    cells_used: usize,
    grad: Option<ConsistencyGrad>,
}

fn check_pair(lat_i: &EmissionLattice, lat_j: &EmissionLattice) -> Result<()> {
    if !lat_i.same_shape(lat_j) {
        return Err(Error::shape(format!(
            "view lattices differ: {:?} vs {:?}",
            lat_i.log_probs().dim(),
            lat_j.log_probs().dim()
        )));
    }
    Ok(())
}

fn evaluate(
    lat_i: &EmissionLattice,
    lat_j: &EmissionLattice,
    terms: &[Term],
    want_grad: bool,
) -> Evaluated {
    let mut grad = want_grad.then(|| ConsistencyGrad::zeros(lat_i));
    let (mut value, mut nonblank, mut blank) = (0.0, 0.0, 0.0);
    let mut used = std::collections::BTreeSet::new();
    for term in terms {
        if term.weight == 0.0 {
            continue;
        }
        used.insert((term.t, term.u));
        let li = lat_i.cell(term.t, term.u);
        let lj = lat_j.cell(term.t, term.u);
        let li = li.as_slice().expect("standard layout");
        let lj = lj.as_slice().expect("standard layout");
        let div = match grad.as_mut() {
            Some(g) => {
                let gi = &mut g.wrt_i.as_slice_mut().expect("standard layout")
                    [cell_range(lat_i, term.t, term.u)];
                let div = cell_divergence(li, lj, term.kind, Some(gi), None, term.weight);
                let gj = &mut g.wrt_j.as_slice_mut().expect("standard layout")
                    [cell_range(lat_i, term.t, term.u)];
                cell_divergence(li, lj, term.kind, None, Some(gj), term.weight);
                div
            }
            None => cell_divergence(li, lj, term.kind, None, None, 0.0),
        };
        let contrib = term.weight * div;
        value += contrib;
        match term.group {
            Group::NonBlank => nonblank += contrib,
            Group::Blank => blank += contrib,
            Group::Cell => {}
        }
    }
    Evaluated {
        value,
        nonblank,
        blank,
        cells_used: used.len(),
        grad,
    }
}

fn cell_range(lat: &EmissionLattice, t: usize, u: usize) -> std::ops::Range<usize> {
    let v1 = lat.vocab() + 1;
    let start = (t * (lat.u_len() + 1) + u) * v1;
    start..start + v1
}

/// Divergence of view `i` from view `j` at one cell. When gradient slices are
/// supplied, `scale * d(div)/d(logp)` is accumulated into them.
fn cell_divergence(
    li: &[f64],
    lj: &[f64],
    kind: CellDivergence,
    gi: Option<&mut [f64]>,
    gj: Option<&mut [f64]>,
    scale: f64,
) -> f64 {
    match kind {
        CellDivergence::FullVocab => {
            let kl: f64 = li.iter().zip(lj).map(|(&a, &b)| xlogx_ratio(a, b)).sum();
            if let Some(gi) = gi {
                for ((g, &a), &b) in gi.iter_mut().zip(li).zip(lj) {
                    if a > LOG_ZERO {
                        *g += scale * a.exp() * (a - b + 1.0);
                    }
                }
            }
            if let Some(gj) = gj {
                for (g, &a) in gj.iter_mut().zip(li) {
                    *g -= scale * a.exp();
                }
            }
            kl
        }
        CellDivergence::Token(k) => {
            let others = |l: &[f64]| {
                log_sum_exp_iter(
                    l.iter()
                        .enumerate()
                        .filter(move |&(m, _)| m != k)
                        .map(|(_, &x)| x),
                )
            };
            let (la, lb) = (li[k], lj[k]);
            let (l_rest_i, l_rest_j) = (others(li), others(lj));
            let kl = xlogx_ratio(la, lb) + xlogx_ratio(l_rest_i, l_rest_j);
            if let Some(gi) = gi {
                for (m, g) in gi.iter_mut().enumerate() {
                    let x = li[m];
                    if x == LOG_ZERO {
                        continue;
                    }
                    let ratio = if m == k { la - lb } else { l_rest_i - l_rest_j };
                    *g += scale * x.exp() * (ratio + 1.0);
                }
            }
            if let Some(gj) = gj {
                let rest_i = l_rest_i.exp();
                for (m, g) in gj.iter_mut().enumerate() {
                    if m == k {
                        *g -= scale * la.exp();
                    } else if l_rest_j > LOG_ZERO {
                        *g -= scale * rest_i * (lj[m] - l_rest_j).exp();
                    }
                }
            }
            kl
        }
        CellDivergence::Compressed(tok) => {
            let qi = compress(li, tok);
            let qj = compress(lj, tok);
            let kl: f64 = qi.iter().zip(&qj).map(|(&a, &b)| xlogx_ratio(a, b)).sum();
            if let Some(gi) = gi {
                for (m, g) in gi.iter_mut().enumerate() {
                    let c = class_of(m, tok);
                    if li[m] == LOG_ZERO {
                        continue;
                    }
                    let d_class = qi[c].exp() * (qi[c] - qj[c] + 1.0);
                    *g += scale * d_class * (li[m] - qi[c]).exp();
                }
            }
            if let Some(gj) = gj {
                for (m, g) in gj.iter_mut().enumerate() {
                    let c = class_of(m, tok);
                    if qj[c] == LOG_ZERO {
                        continue;
                    }
                    *g -= scale * qi[c].exp() * (lj[m] - qj[c]).exp();
                }
            }
            kl
        }
    }
}

#[inline]
fn class_of(m: usize, tok: Option<usize>) -> usize {
    if Some(m) == tok {
        0
    } else if m == BLANK {
        1
    } else {
        2
    }
}

/// Log-masses of {target, blank, others}.
fn compress(l: &[f64], tok: Option<usize>) -> [f64; 3] {
    let mut q = [LOG_ZERO; 3];
    for c in 0..3 {
        q[c] = log_sum_exp_iter(
            l.iter()
                .enumerate()
                .filter(move |&(m, _)| class_of(m, tok) == c)
                .map(|(_, &x)| x),
        );
    }
    q
}

/// Three-class distribution `[P(y_{u+1}), P(blank), P(other)]` at a cell. The
/// first entry is zero on the last row, where no target token remains.
pub fn compressed_distribution(
    lattice: &EmissionLattice,
    target: &TargetSeq,
    t: usize,
    u: usize,
) -> [f64; 3] {
    let cell = lattice.cell(t, u);
    compress(
        cell.as_slice().expect("standard layout"),
        target.next_token(u),
    )
    .map(f64::exp)
}

fn finish(
    ev: Evaluated,
    clamp: f64,
    per_group: bool,
) -> Result<(ConsistencyResult, Option<ConsistencyGrad>)> {
    if ev.value.is_nan() {
        return Err(Error::NonFinite("consistency value is NaN".into()));
    }
    let clamped = ev.value > clamp;
    let result = ConsistencyResult {
        d_c: ev.value.min(clamp),
        d_c_raw: ev.value,
        per_group: per_group.then_some(GroupSplit {
            nonblank: ev.nonblank,
            blank: ev.blank,
        }),
        cells_used: ev.cells_used,
    };
    let grad = ev.grad.map(|g| if clamped { g.scaled(0.0) } else { g });
    Ok((result, grad))
}

fn tcr_terms(
    lat_i: &EmissionLattice,
    occ_i: &OccupancyMaps,
    target: &TargetSeq,
    cfg: &TcrConfig,
) -> Result<Vec<Term>> {
    if occ_i.t_len() != lat_i.t_len() || occ_i.u_len() != lat_i.u_len() {
        return Err(Error::shape(format!(
            "occupancy maps are {}x{} but lattice grid is {}x{}",
            occ_i.t_len(),
            occ_i.u_len() + 1,
            lat_i.t_len(),
            lat_i.u_len() + 1
        )));
    }
    target.check_against(lat_i)?;
    let mut terms = Vec::new();
    for t in 0..lat_i.t_len() {
        for u in 0..=lat_i.u_len() {
            if let Some(k) = target.next_token(u) {
                let kind = match cfg.kl_mode {
                    KlMode::TokenBernoulli => CellDivergence::Token(k),
                    KlMode::FullVocab => CellDivergence::FullVocab,
                };
                terms.push(Term {
                    t,
                    u,
                    weight: cfg.beta_nonblank * occ_i.w_nonblank[[t, u]],
                    kind,
                    group: Group::NonBlank,
                });
            }
            let kind = match cfg.kl_mode {
                KlMode::TokenBernoulli => CellDivergence::Token(BLANK),
                KlMode::FullVocab => CellDivergence::FullVocab,
            };
            terms.push(Term {
                t,
                u,
                weight: cfg.beta_blank * occ_i.w_blank[[t, u]],
                kind,
                group: Group::Blank,
            });
        }
    }
    Ok(terms)
}

/// Occupancy-weighted consistency `D_c(i|j)`: blank and non-blank transition
/// divergences weighted by view `i`'s normalized occupancies.
pub fn tcr_loss(
    lat_i: &EmissionLattice,
    lat_j: &EmissionLattice,
    occ_i: &OccupancyMaps,
    target: &TargetSeq,
    cfg: &TcrConfig,
) -> Result<ConsistencyResult> {
    check_pair(lat_i, lat_j)?;
    let terms = tcr_terms(lat_i, occ_i, target, cfg)?;
    finish(evaluate(lat_i, lat_j, &terms, false), cfg.clamp, true).map(|(r, _)| r)
}

/// [`tcr_loss`] plus the gradient of the clamped value with occupancies held
/// fixed.
pub fn tcr_loss_with_grad(
    lat_i: &EmissionLattice,
    lat_j: &EmissionLattice,
    occ_i: &OccupancyMaps,
    target: &TargetSeq,
    cfg: &TcrConfig,
) -> Result<(ConsistencyResult, ConsistencyGrad)> {
    check_pair(lat_i, lat_j)?;
    let terms = tcr_terms(lat_i, occ_i, target, cfg)?;
    let (r, g) = finish(evaluate(lat_i, lat_j, &terms, true), cfg.clamp, true)?;
    Ok((r, g.expect("gradient requested")))
}

/// `D_c(a|b) + D_c(b|a)`, each direction weighted by its own view's occupancies.
pub fn symmetric_tcr(
    lat_a: &EmissionLattice,
    lat_b: &EmissionLattice,
    occ_a: &OccupancyMaps,
    occ_b: &OccupancyMaps,
    target: &TargetSeq,
    cfg: &TcrConfig,
) -> Result<f64> {
    let ab = tcr_loss(lat_a, lat_b, occ_a, target, cfg)?;
    let ba = tcr_loss(lat_b, lat_a, occ_b, target, cfg)?;
    Ok(ab.d_c + ba.d_c)
}

fn mean_terms(
    cells: impl Iterator<Item = (usize, usize)>,
    kind: impl Fn(usize) -> CellDivergence,
) -> Vec<Term> {
    let cells: Vec<_> = cells.collect();
    let w = 1.0 / cells.len().max(1) as f64;
    cells
        .into_iter()
        .map(|(t, u)| Term {
            t,
            u,
            weight: w,
            kind: kind(u),
            group: Group::Cell,
        })
        .collect()
}

fn region_or_full(lat: &EmissionLattice, region: Option<&CellMask>) -> Result<CellMask> {
    match region {
        Some(m) => {
            if m.t_len() != lat.t_len() || m.u_len() != lat.u_len() {
                return Err(Error::shape("region does not match lattice"));
            }
            Ok(m.clone())
        }
        None => Ok(CellMask::full(lat.t_len(), lat.u_len())),
    }
}

fn full_joint_terms(lat_i: &EmissionLattice, region: Option<&CellMask>) -> Result<Vec<Term>> {
    let mask = region_or_full(lat_i, region)?;
    Ok(mean_terms(mask.cells(), |_| CellDivergence::FullVocab))
}

/// Mean full-vocabulary KL over every cell of the region (default: whole lattice).
pub fn full_joint_loss(
    lat_i: &EmissionLattice,
    lat_j: &EmissionLattice,
    region: Option<&CellMask>,
) -> Result<f64> {
    check_pair(lat_i, lat_j)?;
    let terms = full_joint_terms(lat_i, region)?;
    Ok(evaluate(lat_i, lat_j, &terms, false).value)
}

/// Cells picked per input step: the `k_nonblank` rows with the highest
/// probability of the aligned next token and the `k_blank` rows with the
/// highest blank probability, both measured on `lat_i`. Counts larger than
/// the available rows saturate.
pub fn topk_selection(
    lat_i: &EmissionLattice,
    target: &TargetSeq,
    k_blank: usize,
    k_nonblank: usize,
) -> Result<CellMask> {
    target.check_against(lat_i)?;
    let (t_len, u_len) = (lat_i.t_len(), lat_i.u_len());
    let mut chosen = vec![false; t_len * (u_len + 1)];
    let y = target.tokens();
    for t in 0..t_len {
        let mut nb: Vec<usize> = (0..u_len).collect();
        nb.sort_by(|&a, &b| lat_i.lp(t, b, y[b]).total_cmp(&lat_i.lp(t, a, y[a])));
        let mut bl: Vec<usize> = (0..=u_len).collect();
        bl.sort_by(|&a, &b| lat_i.lp(t, b, BLANK).total_cmp(&lat_i.lp(t, a, BLANK)));
        for &u in nb.iter().take(k_nonblank).chain(bl.iter().take(k_blank)) {
            chosen[t * (u_len + 1) + u] = true;
        }
    }
    Ok(CellMask::from_fn(t_len, u_len, |t, u| {
        chosen[t * (u_len + 1) + u]
    }))
}

fn topk_terms(
    lat_i: &EmissionLattice,
    target: &TargetSeq,
    k_blank: usize,
    k_nonblank: usize,
) -> Result<Vec<Term>> {
    let mask = topk_selection(lat_i, target, k_blank, k_nonblank)?;
    Ok(mean_terms(mask.cells(), |_| CellDivergence::FullVocab))
}

/// Mean full-vocabulary KL over the per-step top-k selected cells.
pub fn threshold_topk_loss(
    lat_i: &EmissionLattice,
    lat_j: &EmissionLattice,
    target: &TargetSeq,
    k_blank: usize,
    k_nonblank: usize,
) -> Result<f64> {
    check_pair(lat_i, lat_j)?;
    let terms = topk_terms(lat_i, target, k_blank, k_nonblank)?;
    Ok(evaluate(lat_i, lat_j, &terms, false).value)
}

fn best_path_terms(lat_i: &EmissionLattice, target: &TargetSeq) -> Result<Vec<Term>> {
    let path = viterbi_path(lat_i, target)?;
    Ok(mean_terms(path.cells.into_iter(), |_| {
        CellDivergence::FullVocab
    }))
}

/// Mean full-vocabulary KL along the Viterbi alignment of `lat_i`.
pub fn best_one_path_loss(
    lat_i: &EmissionLattice,
    lat_j: &EmissionLattice,
    target: &TargetSeq,
) -> Result<f64> {
    check_pair(lat_i, lat_j)?;
    let terms = best_path_terms(lat_i, target)?;
    Ok(evaluate(lat_i, lat_j, &terms, false).value)
}

fn compressed_terms(
    lat_i: &EmissionLattice,
    target: &TargetSeq,
    region: Option<&CellMask>,
) -> Result<Vec<Term>> {
    target.check_against(lat_i)?;
    let mask = region_or_full(lat_i, region)?;
    Ok(mean_terms(mask.cells(), |u| {
        CellDivergence::Compressed(target.next_token(u))
    }))
}

/// Mean three-class KL (next target token, blank, other) over the region.
pub fn compressed_prob_loss(
    lat_i: &EmissionLattice,
    lat_j: &EmissionLattice,
    target: &TargetSeq,
    region: Option<&CellMask>,
) -> Result<f64> {
    check_pair(lat_i, lat_j)?;
    let terms = compressed_terms(lat_i, target, region)?;
    Ok(evaluate(lat_i, lat_j, &terms, false).value)
}

/// Inputs to one directional consistency evaluation `D(i|j)`.
pub struct DirectionInputs<'a> {
    pub lat_i: &'a EmissionLattice,
    pub lat_j: &'a EmissionLattice,
    pub target: &'a TargetSeq,
    /// Required for [`Variant::Tcr`].
    pub occ_i: Option<&'a OccupancyMaps>,
    /// Restricts full-joint and compressed variants.
    pub region: Option<&'a CellMask>,
}

/// Evaluates the configured lattice-level variant in one direction, clamps
/// it, and optionally returns the gradient of the clamped value.
pub fn directional_consistency(
    inputs: &DirectionInputs<'_>,
    cfg: &TcrConfig,
    want_grad: bool,
) -> Result<(ConsistencyResult, Option<ConsistencyGrad>)> {
    let DirectionInputs {
        lat_i,
        lat_j,
        target,
        occ_i,
        region,
    } = *inputs;
    check_pair(lat_i, lat_j)?;
    let terms = match cfg.variant {
        Variant::Tcr => {
            let occ = occ_i.ok_or_else(|| Error::invalid("tcr variant needs occupancies"))?;
            tcr_terms(lat_i, occ, target, cfg)?
        }
        Variant::FullJoint => full_joint_terms(lat_i, region)?,
        Variant::ThresholdTopk => topk_terms(lat_i, target, cfg.topk_blank, cfg.topk_nonblank)?,
        Variant::BestOnePath => best_path_terms(lat_i, target)?,
        Variant::CompressedProb => compressed_terms(lat_i, target, region)?,
        Variant::EncoderMse => {
            return Err(Error::invalid(
                "encoder_mse compares encoder outputs, not lattices",
            ))
        }
    };
    finish(
        evaluate(lat_i, lat_j, &terms, want_grad),
        cfg.clamp,
        cfg.variant == Variant::Tcr,
    )
}
