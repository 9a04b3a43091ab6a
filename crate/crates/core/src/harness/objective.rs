//! Per-utterance objective: two views, two transducer losses, and the
//! selected consistency term in both directions.

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use super::config::RegMode;
use crate::consistency::{directional_consistency, DirectionInputs, TcrConfig, Variant};
use crate::error::{Error, Result};
use crate::lattice::{EmissionLattice, TargetSeq};
use crate::model::{
    encoder_mse, encoder_mse_grad, model_backward, model_forward, DropoutPlan, ForwardPass,
    TransducerParams,
};
use crate::pruning::select_band;
use crate::transducer::{
    loss_grad_from_tables, occupancies, CellMask, LatticeTables, OccupancyMaps,
};
use crate::views::ViewPair;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainStepReport {
    pub transducer_loss_a: f64,
    pub transducer_loss_b: f64,
    /// Sum of the two clamped directional terms.
    pub d_c: f64,
    pub d_c_raw: f64,
    /// `transducer_loss_a + transducer_loss_b + lambda * d_c`.
    pub total: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveSettings {
    pub reg: RegMode,
    pub lambda: f64,
    pub tcr: TcrConfig,
    /// Band width for region-restricted variants; `None` uses the full lattice.
    pub band_width: Option<usize>,
    pub dropout: f64,
    pub duplicate_views: bool,
}

/// Occupancies and region used by one direction. They carry no gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct DetachedWeights {
    pub occ: Option<OccupancyMaps>,
    pub region: Option<CellMask>,
}

/// Weights for the direction whose reference view has lattice `lat`.
pub fn detached_weights(
    lat: &EmissionLattice,
    tables: &LatticeTables,
    target: &TargetSeq,
    variant: Variant,
    band_width: Option<usize>,
) -> Result<DetachedWeights> {
    let uses_region = matches!(
        variant,
        Variant::Tcr | Variant::FullJoint | Variant::CompressedProb
    );
    let region = match band_width {
        Some(w) if uses_region => Some(select_band(tables, w)?.to_mask()),
        _ => None,
    };
    let occ = if variant == Variant::Tcr {
        let occ = match &region {
            Some(mask) => {
                let banded = LatticeTables::compute_masked(lat, target, Some(mask))?;
                occupancies(lat, target, &banded)?
            }
            None => occupancies(lat, target, tables)?,
        };
        Some(occ)
    } else {
        None
    };
    Ok(DetachedWeights { occ, region })
}

/// One view's forward pass and transducer loss.
pub struct ViewEval {
    pub forward: ForwardPass,
    pub tables: LatticeTables,
    pub nll: f64,
}

pub fn eval_view(
    params: &TransducerParams,
    features: &crate::views::FeatureSeq,
    target: &TargetSeq,
    dropout: &DropoutPlan,
) -> Result<ViewEval> {
    let forward = model_forward(params, features, target, dropout)?;
    let tables = LatticeTables::compute(&forward.lattice, target)?;
    let nll = -tables.log_prob_total;
    if !nll.is_finite() {
        return Err(Error::NonFinite(format!(
            "transducer loss {nll} for {}",
            features.id
        )));
    }
    Ok(ViewEval {
        forward,
        tables,
        nll,
    })
}

pub struct ObjectiveOutput {
    pub report: TrainStepReport,
    pub grads: TransducerParams,
}

/// Value and parameter gradient of the per-utterance objective. `frozen`
/// replaces the weights derived from the current lattices (used to check
/// gradients with the weights held fixed).
pub fn pair_objective(
    params: &TransducerParams,
    target: &TargetSeq,
    views: &ViewPair,
    settings: &ObjectiveSettings,
    frozen: Option<&[DetachedWeights; 2]>,
) -> Result<ObjectiveOutput> {
    let plan = |seed| DropoutPlan::everywhere(settings.dropout, seed);
    let a = eval_view(params, &views.view_a, target, &plan(views.dropout_seed_a)?)?;
    let mut ga = loss_grad_from_tables(&a.forward.lattice, target, &a.tables)?;
    if !settings.duplicate_views {
        let grads = model_backward(params, &a.forward.cache, &ga, None)?;
        let report = TrainStepReport {
            transducer_loss_a: a.nll,
            transducer_loss_b: 0.0,
            d_c: 0.0,
            d_c_raw: 0.0,
            total: a.nll,
            grad_norm: grads.norm(),
        };
        return Ok(ObjectiveOutput { report, grads });
    }
    let b = eval_view(params, &views.view_b, target, &plan(views.dropout_seed_b)?)?;
    let mut gb = loss_grad_from_tables(&b.forward.lattice, target, &b.tables)?;
    let lambda = settings.lambda;
    let (mut d_c, mut d_c_raw) = (0.0, 0.0);
    let mut enc_grads = None;

    if let RegMode::Consistency(variant) = settings.reg {
        let cfg = TcrConfig {
            variant,
            ..settings.tcr.clone()
        };
        if variant == Variant::EncoderMse {
            let (ea, eb) = (
                a.forward.cache.encoder_output(),
                b.forward.cache.encoder_output(),
            );
            let mse = encoder_mse(ea, eb)?;
            // the same value in both directions, each clamped
            d_c_raw = 2.0 * mse;
            d_c = 2.0 * mse.min(cfg.clamp);
            if mse <= cfg.clamp && lambda != 0.0 {
                let (gea, geb) = encoder_mse_grad(ea, eb)?;
                enc_grads = Some((gea * (2.0 * lambda), geb * (2.0 * lambda)));
            }
        } else {
            let owned;
            let weights = match frozen {
                Some(w) => w,
                None => {
                    owned = [
                        detached_weights(
                            &a.forward.lattice,
                            &a.tables,
                            target,
                            variant,
                            settings.band_width,
                        )?,
                        detached_weights(
                            &b.forward.lattice,
                            &b.tables,
                            target,
                            variant,
                            settings.band_width,
                        )?,
                    ];
                    &owned
                }
            };
            let want_grad = lambda != 0.0;
            let dirs = [
                (&a.forward.lattice, &b.forward.lattice, &weights[0]),
                (&b.forward.lattice, &a.forward.lattice, &weights[1]),
            ];
            for (k, (li, lj, w)) in dirs.into_iter().enumerate() {
                let inputs = DirectionInputs {
                    lat_i: li,
                    lat_j: lj,
                    target,
                    occ_i: w.occ.as_ref(),
                    region: w.region.as_ref(),
                };
                let (r, g) = directional_consistency(&inputs, &cfg, want_grad)?;
                d_c += r.d_c;
                d_c_raw += r.d_c_raw;
                if let Some(g) = g {
                    let (gi, gj): (&mut Array3<f64>, &mut Array3<f64>) = if k == 0 {
                        (&mut ga, &mut gb)
                    } else {
                        (&mut gb, &mut ga)
                    };
                    gi.scaled_add(lambda, &g.wrt_i);
                    gj.scaled_add(lambda, &g.wrt_j);
                }
            }
        }
    }

    let (ega, egb) = match &enc_grads {
        Some((x, y)) => (Some(x), Some(y)),
        None => (None, None),
    };
    let mut grads = model_backward(params, &a.forward.cache, &ga, ega)?;
    grads.add_scaled(&model_backward(params, &b.forward.cache, &gb, egb)?, 1.0);
    let report = TrainStepReport {
        transducer_loss_a: a.nll,
        transducer_loss_b: b.nll,
        d_c,
        d_c_raw,
        total: a.nll + b.nll + lambda * d_c,
        grad_norm: grads.norm(),
    };
    Ok(ObjectiveOutput { report, grads })
}
