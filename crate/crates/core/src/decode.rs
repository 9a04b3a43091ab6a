//! Greedy and beam decoding, token error rate, and occupancy heatmaps.

use std::collections::HashMap;
use std::io::Write;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{EmissionLattice, TargetSeq, BLANK};
use crate::logspace::log_add;
use crate::model::{encode, joint_log_probs, predictor_output, DropoutPlan, TransducerParams};
use crate::transducer::{cell_posteriors, viterbi_path, LatticeTables};
use crate::views::FeatureSeq;

/// Blank penalties are clamped to `±MAX_BLANK_PENALTY`.
pub const MAX_BLANK_PENALTY: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamConfig {
    pub beam_size: usize,
    /// Subtracted from the blank log-probability before expansion.
    pub blank_penalty: f64,
    pub max_symbols_per_step: usize,
}

impl Default for BeamConfig {
    fn default() -> Self {
        Self {
            beam_size: 4,
            blank_penalty: 0.0,
            max_symbols_per_step: 5,
        }
    }
}

impl BeamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_size == 0 || self.max_symbols_per_step == 0 {
            return Err(Error::Config(
                "beam size and max symbols per step must be >= 1".into(),
            ));
        }
        if self.blank_penalty.is_nan() {
            return Err(Error::Config("blank penalty is NaN".into()));
        }
        Ok(())
    }

    pub fn effective_blank_penalty(&self) -> f64 {
        self.blank_penalty
            .clamp(-MAX_BLANK_PENALTY, MAX_BLANK_PENALTY)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<usize>,
    /// Search score: alignment log-probability with the blank penalty applied,
    /// summed over merged alignments for beam search.
    pub log_prob: f64,
}

/// Predictor outputs memoized by their two-token context.
struct PredictorCache<'a> {
    params: &'a TransducerParams,
    states: HashMap<(usize, usize), Array1<f64>>,
}

impl<'a> PredictorCache<'a> {
    fn new(params: &'a TransducerParams) -> Self {
        Self {
            params,
            states: HashMap::new(),
        }
    }

    fn get(&mut self, tokens: &[usize]) -> &Array1<f64> {
        let n = tokens.len();
        let prev1 = if n >= 1 { tokens[n - 1] } else { 0 };
        let prev2 = if n >= 2 { tokens[n - 2] } else { 0 };
        let params = self.params;
        self.states
            .entry((prev1, prev2))
            .or_insert_with(|| predictor_output(params, prev1, prev2))
    }
}

fn step_log_probs(
    params: &TransducerParams,
    cache: &mut PredictorCache,
    enc: &Array2<f64>,
    t: usize,
    tokens: &[usize],
    penalty: f64,
) -> Array1<f64> {
    let pred = cache.get(tokens);
    let mut lp = joint_log_probs(params, enc.row(t), pred.view());
    lp[BLANK] -= penalty;
    lp
}

/// Frame-synchronous greedy search with no blank penalty.
pub fn greedy_decode(params: &TransducerParams, features: &FeatureSeq) -> Result<Hypothesis> {
    greedy_decode_with(params, features, &BeamConfig::default())
}

/// Greedy search honoring `cfg.blank_penalty` and `cfg.max_symbols_per_step`.
pub fn greedy_decode_with(
    params: &TransducerParams,
    features: &FeatureSeq,
    cfg: &BeamConfig,
) -> Result<Hypothesis> {
    cfg.validate()?;
    let enc = encode(params, features, &DropoutPlan::none())?;
    let penalty = cfg.effective_blank_penalty();
    let mut cache = PredictorCache::new(params);
    let mut tokens = Vec::new();
    let mut score = 0.0;
    for t in 0..enc.nrows() {
        for emitted in 0..=cfg.max_symbols_per_step {
            let lp = step_log_probs(params, &mut cache, &enc, t, &tokens, penalty);
            let k = if emitted == cfg.max_symbols_per_step {
                BLANK
            } else {
                argmax(&lp)
            };
            score += lp[k];
            if k == BLANK {
                break;
            }
            tokens.push(k);
        }
    }
    Ok(Hypothesis {
        tokens,
        log_prob: score,
    })
}

/// First index of the maximum, so blank wins ties.
fn argmax(xs: &Array1<f64>) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Beam search with prefix merging by log-sum. Within a frame, hypotheses
/// take up to `max_symbols_per_step` emissions; after each emission round the
/// frame's finished and open hypotheses share one pool of `beam_size`.
pub fn beam_decode(
    params: &TransducerParams,
    features: &FeatureSeq,
    cfg: &BeamConfig,
) -> Result<Hypothesis> {
    cfg.validate()?;
    let enc = encode(params, features, &DropoutPlan::none())?;
    let penalty = cfg.effective_blank_penalty();
    let mut cache = PredictorCache::new(params);
    let mut hyps: Vec<(Vec<usize>, f64)> = vec![(Vec::new(), 0.0)];
    for t in 0..enc.nrows() {
        // finished this frame, in insertion order for deterministic ties
        let mut closed: Vec<(Vec<usize>, f64)> = Vec::new();
        let mut open = hyps;
        for round in 0..=cfg.max_symbols_per_step {
            if open.is_empty() {
                break;
            }
            let mut fresh: Vec<(Vec<usize>, f64)> = Vec::new();
            for (tokens, s) in &open {
                let lp = step_log_probs(params, &mut cache, &enc, t, tokens, penalty);
                merge_into(&mut closed, tokens.clone(), s + lp[BLANK]);
                if round < cfg.max_symbols_per_step {
                    for k in 1..lp.len() {
                        let mut y = tokens.clone();
                        y.push(k);
                        merge_into(&mut fresh, y, s + lp[k]);
                    }
                }
            }
            // pooled pruning over finished and still-open hypotheses
            let mut pool: Vec<(bool, Vec<usize>, f64)> = closed
                .drain(..)
                .map(|(y, s)| (true, y, s))
                .chain(fresh.into_iter().map(|(y, s)| (false, y, s)))
                .collect();
            pool.sort_by(|a, b| b.2.total_cmp(&a.2));
            pool.truncate(cfg.beam_size);
            open = Vec::new();
            for (done, y, s) in pool {
                if done {
                    closed.push((y, s));
                } else {
                    open.push((y, s));
                }
            }
        }
        hyps = closed;
    }
    let (tokens, log_prob) = hyps
        .into_iter()
        .reduce(|a, b| if b.1 > a.1 { b } else { a })
        .expect("the beam always keeps at least one hypothesis");
    Ok(Hypothesis { tokens, log_prob })
}

fn merge_into(set: &mut Vec<(Vec<usize>, f64)>, y: Vec<usize>, s: f64) {
    match set.iter_mut().find(|(z, _)| *z == y) {
        Some(entry) => entry.1 = log_add(entry.1, s),
        None => set.push((y, s)),
    }
}

/// Levenshtein distance with unit costs.
pub fn edit_distance(a: &[usize], b: &[usize]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Edit distance over reference length; with an empty reference this is the
/// hypothesis length.
pub fn token_error_rate(hyp: &[usize], reference: &[usize]) -> f64 {
    let d = edit_distance(hyp, reference) as f64;
    if reference.is_empty() {
        d
    } else {
        d / reference.len() as f64
    }
}

/// Per-cell occupancy and best alignment of one lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapDump {
    /// `(T, U+1)`, entry `(t, u)` is the posterior probability of visiting it.
    pub grid: Array2<f64>,
    pub viterbi_path: Vec<(usize, usize)>,
}

pub fn occupancy_heatmap(lattice: &EmissionLattice, target: &TargetSeq) -> Result<HeatmapDump> {
    let tables = LatticeTables::compute(lattice, target)?;
    let grid = cell_posteriors(&tables)?.mapv(|x| x.clamp(0.0, 1.0));
    let path = viterbi_path(lattice, target)?;
    Ok(HeatmapDump {
        grid,
        viterbi_path: path.cells,
    })
}

impl HeatmapDump {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,u,value")?;
        for ((t, u), v) in self.grid.indexed_iter() {
            writeln!(w, "{t},{u},{v:?}")?;
        }
        Ok(())
    }

    pub fn write_path_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,u")?;
        for (t, u) in &self.viterbi_path {
            writeln!(w, "{t},{u}")?;
        }
        Ok(())
    }

    /// Binary graymap, `T` wide and `U+1` tall with `u = U` on the top row.
    /// Pixel = round(255 * value / max value); an all-zero grid stays black.
    pub fn write_pgm<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let (t_len, rows) = self.grid.dim();
        let max = self.grid.iter().cloned().fold(0.0, f64::max);
        write!(w, "P5\n{t_len} {rows}\n255\n")?;
        let mut px = Vec::with_capacity(t_len * rows);
        for u in (0..rows).rev() {
            for t in 0..t_len {
                let v = if max > 0.0 {
                    self.grid[[t, u]] / max
                } else {
                    0.0
                };
                px.push((255.0 * v).round() as u8);
            }
        }
        w.write_all(&px)
    }

    /// Share of occupancy mass within Chebyshev distance `radius` of the path.
    pub fn mass_near_path(&self, radius: usize) -> f64 {
        let total: f64 = self.grid.sum();
        if total <= 0.0 {
            return 0.0;
        }
        let near: f64 = self
            .grid
            .indexed_iter()
            .filter(|&((t, u), _)| chebyshev_to_path(&self.viterbi_path, t, u) <= radius)
            .map(|(_, v)| v)
            .sum();
        near / total
    }

    /// The `k` highest-mass cells, ties broken by row-major order.
    pub fn top_cells(&self, k: usize) -> Vec<(usize, usize)> {
        let mut cells: Vec<((usize, usize), f64)> =
            self.grid.indexed_iter().map(|(c, &v)| (c, v)).collect();
        cells.sort_by(|a, b| b.1.total_cmp(&a.1));
        cells.into_iter().take(k).map(|(c, _)| c).collect()
    }
}

fn chebyshev_to_path(path: &[(usize, usize)], t: usize, u: usize) -> usize {
    path.iter()
        .map(|&(pt, pu)| pt.abs_diff(t).max(pu.abs_diff(u)))
        .min()
        .unwrap_or(usize::MAX)
}

/// Largest Chebyshev distance from a cell on either path to the other path.
pub fn path_chebyshev_distance(a: &[(usize, usize)], b: &[(usize, usize)]) -> usize {
    let one_way = |x: &[(usize, usize)], y: &[(usize, usize)]| {
        x.iter()
            .map(|&(t, u)| chebyshev_to_path(y, t, u))
            .max()
            .unwrap_or(0)
    };
    one_way(a, b).max(one_way(b, a))
}

/// Fraction of antidiagonals `t + u = n` on which two alignments cross at
/// the same cell. Each alignment visits exactly one cell per antidiagonal.
pub fn antidiagonal_agreement(a: &[(usize, usize)], b: &[(usize, usize)]) -> f64 {
    let n = a.len().max(b.len());
    if n == 0 {
        return 1.0;
    }
    let same = a.iter().zip(b).filter(|(x, y)| x == y).count();
    same as f64 / n as f64
}

/// Overlap of the two heatmaps' `k` highest-mass cells, as a fraction of `k`.
pub fn top_mass_overlap(a: &HeatmapDump, b: &HeatmapDump, k: usize) -> f64 {
    if k == 0 {
        return 1.0;
    }
    let ta = a.top_cells(k);
    let tb = b.top_cells(k);
    ta.iter().filter(|c| tb.contains(c)).count() as f64 / k as f64
}
