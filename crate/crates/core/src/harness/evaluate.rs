use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::objective::eval_view;
use crate::consistency::{symmetric_tcr, KlMode, TcrConfig, Variant};
use crate::decode::{beam_decode, edit_distance, greedy_decode, BeamConfig};
use crate::error::{Error, Result};
use crate::model::{DropoutPlan, TransducerParams};
use crate::seeds::derive_seed;
use crate::synthdata::Example;
use crate::transducer::occupancies;
use crate::views::{make_view_pair, AugmentSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSettings {
    pub beam: BeamConfig,
    pub augment: AugmentSpec,
    pub dropout: f64,
    /// Seeds the fresh views of the divergence measurement.
    pub seed: u64,
    /// Measure inter-view divergence (two extra forwards per utterance).
    pub measure_views: bool,
}

impl EvalSettings {
    pub fn from_config(cfg: &ExperimentConfig) -> Self {
        Self {
            beam: cfg.beam,
            augment: cfg.resolved_augment(),
            dropout: cfg.dropout,
            seed: derive_seed(cfg.seed, "eval"),
            measure_views: cfg.eval_views,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UttEval {
    pub id: String,
    pub ref_len: usize,
    pub greedy_errors: usize,
    pub beam_errors: usize,
    pub greedy_hyp: Vec<usize>,
    pub beam_hyp: Vec<usize>,
    /// Symmetric occupancy-weighted divergence between two fresh views.
    pub divergence: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    /// Corpus-level: total edit distance over total reference length.
    pub ter_greedy: f64,
    pub ter_beam: f64,
    pub inter_view_divergence: Option<f64>,
    pub per_utterance: Vec<UttEval>,
}

impl EvalMetrics {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("id,ref_len,greedy_errors,beam_errors,divergence\n");
        for u in &self.per_utterance {
            let d = u.divergence.map(|d| format!("{d:?}")).unwrap_or_default();
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                u.id, u.ref_len, u.greedy_errors, u.beam_errors, d
            ));
        }
        s
    }
}

/// The divergence statistic: raw symmetric token-Bernoulli TCR over the
/// full lattice with unit beta weights.
pub fn divergence_measure() -> TcrConfig {
    TcrConfig {
        lambda: 0.0,
        beta_nonblank: 1.0,
        beta_blank: 1.0,
        clamp: f64::INFINITY,
        variant: Variant::Tcr,
        kl_mode: KlMode::TokenBernoulli,
        ..Default::default()
    }
}

/// Inter-view divergence of one example under views drawn from `seed`.
pub fn inter_view_divergence(
    params: &TransducerParams,
    ex: &Example,
    augment: &AugmentSpec,
    dropout: f64,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let views = make_view_pair(&ex.features, augment, &mut rng);
    let a = eval_view(
        params,
        &views.view_a,
        &ex.target,
        &DropoutPlan::everywhere(dropout, views.dropout_seed_a)?,
    )?;
    let b = eval_view(
        params,
        &views.view_b,
        &ex.target,
        &DropoutPlan::everywhere(dropout, views.dropout_seed_b)?,
    )?;
    let oa = occupancies(&a.forward.lattice, &ex.target, &a.tables)?;
    let ob = occupancies(&b.forward.lattice, &ex.target, &b.tables)?;
    symmetric_tcr(
        &a.forward.lattice,
        &b.forward.lattice,
        &oa,
        &ob,
        &ex.target,
        &divergence_measure(),
    )
}

pub fn evaluate(
    params: &TransducerParams,
    examples: &[Example],
    s: &EvalSettings,
) -> Result<EvalMetrics> {
    if examples.is_empty() {
        return Err(Error::invalid("evaluation set is empty"));
    }
    let dims = params.dims;
    if let Some(ex) = examples.iter().find(|e| {
        e.features.feat_dim() != dims.feat_dim || e.target.tokens().iter().any(|&k| k > dims.vocab)
    }) {
        return Err(Error::shape(format!(
            "example {} does not fit a model with F={} V={}",
            ex.features.id, dims.feat_dim, dims.vocab
        )));
    }
    let per_utterance = examples
        .par_iter()
        .map(|ex| -> Result<UttEval> {
            let greedy = greedy_decode(params, &ex.features)?;
            let beam = beam_decode(params, &ex.features, &s.beam)?;
            let divergence = if s.measure_views {
                let seed = derive_seed(s.seed, &ex.features.id);
                Some(inter_view_divergence(
                    params, ex, &s.augment, s.dropout, seed,
                )?)
            } else {
                None
            };
            let y = ex.target.tokens();
            Ok(UttEval {
                id: ex.features.id.clone(),
                ref_len: y.len(),
                greedy_errors: edit_distance(&greedy.tokens, y),
                beam_errors: edit_distance(&beam.tokens, y),
                greedy_hyp: greedy.tokens,
                beam_hyp: beam.tokens,
                divergence,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let ref_total: usize = per_utterance.iter().map(|u| u.ref_len).sum();
    let ter = |errs: usize| {
        if ref_total == 0 {
            errs as f64
        } else {
            errs as f64 / ref_total as f64
        }
    };
    let ter_greedy = ter(per_utterance.iter().map(|u| u.greedy_errors).sum());
    let ter_beam = ter(per_utterance.iter().map(|u| u.beam_errors).sum());
    let inter_view_divergence = if s.measure_views {
        let d: f64 = per_utterance.iter().filter_map(|u| u.divergence).sum();
        Some(d / per_utterance.len() as f64)
    } else {
        None
    };
    Ok(EvalMetrics {
        ter_greedy,
        ter_beam,
        inter_view_divergence,
        per_utterance,
    })
}
