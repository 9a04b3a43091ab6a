use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::evaluate::{evaluate, EvalMetrics, EvalSettings};
use super::objective::{pair_objective, ObjectiveSettings, TrainStepReport};
use crate::error::{Error, Result};
use crate::lattice::EmissionLattice;
use crate::model::{
    model_forward, optimizer_step, Checkpoint, DropoutPlan, OptimizerState, TransducerParams,
};
use crate::seeds::derive_seed;
use crate::synthdata::{generate_split, Dataset, Example};
use crate::views::{make_view_pair, ViewPair};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub epoch: usize,
    pub lr: f64,
    /// Batch means of the per-utterance values.
    pub nll_a: f64,
    pub nll_b: f64,
    pub d_c: f64,
    pub d_c_raw: f64,
    pub total: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub steps: usize,
    pub nll_a: f64,
    pub nll_b: f64,
    pub d_c: f64,
    pub total: f64,
}

/// Everything a run produces that is a function of its config. Wall-clock
/// time is kept outside so identical configs give identical reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config_hash: String,
    pub variant: String,
    pub seed: u64,
    pub epochs: Vec<EpochReport>,
    pub steps: Vec<StepLog>,
    pub eval: EvalMetrics,
}

pub struct TrainOutcome {
    pub report: RunReport,
    pub checkpoint: Checkpoint,
    pub dataset: Dataset,
}

pub fn load_or_generate_data(cfg: &ExperimentConfig) -> Result<Dataset> {
    match &cfg.data_path {
        Some(p) => {
            let d = Dataset::load(p)?;
            if d.spec.vocab != cfg.task.vocab || d.spec.feat_dim != cfg.task.feat_dim {
                return Err(Error::Config(format!(
                    "dataset {} has V={} F={}, config expects V={} F={}",
                    p.display(),
                    d.spec.vocab,
                    d.spec.feat_dim,
                    cfg.task.vocab,
                    cfg.task.feat_dim
                )));
            }
            Ok(d)
        }
        None => generate_split(
            &cfg.resolved_task(),
            cfg.n_train,
            cfg.n_eval,
            derive_seed(cfg.seed, "data"),
        ),
    }
}

pub fn objective_settings(cfg: &ExperimentConfig) -> ObjectiveSettings {
    ObjectiveSettings {
        reg: cfg.reg,
        lambda: cfg.effective_lambda(),
        tcr: cfg.resolved_tcr(),
        band_width: (!cfg.tcr_full_lattice).then_some(cfg.band_width),
        dropout: cfg.dropout,
        duplicate_views: cfg.duplicate_views,
    }
}

/// The view pair used for training example `idx` in `epoch`.
pub fn training_views(cfg: &ExperimentConfig, epoch: usize, idx: usize, ex: &Example) -> ViewPair {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &format!("views/{epoch}/{idx}")));
    make_view_pair(&ex.features, &cfg.resolved_augment(), &mut rng)
}

pub fn train(cfg: &ExperimentConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let dataset = load_or_generate_data(cfg)?;
    train_on(cfg, dataset)
}

/// Trains on an already loaded dataset. Batches are processed utterance-wise
/// in parallel and reduced in a fixed order, so results do not depend on the
/// thread count.
pub fn train_on(cfg: &ExperimentConfig, dataset: Dataset) -> Result<TrainOutcome> {
    cfg.validate()?;
    let settings = objective_settings(cfg);
    let mut params = TransducerParams::init(cfg.model_dims(), derive_seed(cfg.seed, "model"))?;
    let mut opt = OptimizerState::new(&params);
    let mut steps = Vec::new();
    let mut epochs = Vec::new();
    let n = dataset.train.len();
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
            cfg.seed,
            &format!("shuffle/{epoch}"),
        )));
        let mut sums = [0.0; 4];
        let first_step = steps.len();
        for batch in order.chunks(cfg.batch_size) {
            let outs: Vec<_> = batch
                .par_iter()
                .map(|&i| {
                    let ex = &dataset.train[i];
                    let views = training_views(cfg, epoch, i, ex);
                    pair_objective(&params, &ex.target, &views, &settings, None)
                        .map_err(|e| (e, i, views))
                })
                .collect();
            let mut grads = TransducerParams::zeros(params.dims);
            let mut reports: Vec<TrainStepReport> = Vec::with_capacity(batch.len());
            for out in outs {
                match out {
                    Ok(out) => {
                        grads.add_scaled(&out.grads, 1.0);
                        reports.push(out.report);
                    }
                    Err((e, i, views)) => {
                        return Err(abort(
                            cfg,
                            &params,
                            &dataset.train[i],
                            &views,
                            steps.len(),
                            e,
                        ));
                    }
                }
            }
            let m = batch.len() as f64;
            grads.scale(1.0 / m);
            let grad_norm = grads.norm();
            if !grad_norm.is_finite() {
                let i = batch[0];
                let views = training_views(cfg, epoch, i, &dataset.train[i]);
                return Err(abort(
                    cfg,
                    &params,
                    &dataset.train[i],
                    &views,
                    steps.len(),
                    Error::NonFinite(format!("gradient norm {grad_norm}")),
                ));
            }
            let lr = optimizer_step(&mut params, &grads, &mut opt, &cfg.optim);
            let mean = |f: fn(&TrainStepReport) -> f64| reports.iter().map(f).sum::<f64>() / m;
            let log = StepLog {
                step: opt.step,
                epoch,
                lr,
                nll_a: mean(|r| r.transducer_loss_a),
                nll_b: mean(|r| r.transducer_loss_b),
                d_c: mean(|r| r.d_c),
                d_c_raw: mean(|r| r.d_c_raw),
                total: mean(|r| r.total),
                grad_norm,
            };
            sums[0] += log.nll_a * m;
            sums[1] += log.nll_b * m;
            sums[2] += log.d_c * m;
            sums[3] += log.total * m;
            steps.push(log);
        }
        let nf = n as f64;
        epochs.push(EpochReport {
            epoch,
            steps: steps.len() - first_step,
            nll_a: sums[0] / nf,
            nll_b: sums[1] / nf,
            d_c: sums[2] / nf,
            total: sums[3] / nf,
        });
    }
    let eval = evaluate(&params, &dataset.eval, &EvalSettings::from_config(cfg))?;
    let report = RunReport {
        config_hash: cfg.hash(),
        variant: cfg.reg.to_string(),
        seed: cfg.seed,
        epochs,
        steps,
        eval,
    };
    Ok(TrainOutcome {
        report,
        checkpoint: Checkpoint {
            params,
            optimizer: opt,
        },
        dataset,
    })
}

/// Writes a diagnostic bundle (when an output directory is configured) and
/// returns the error to propagate.
fn abort(
    cfg: &ExperimentConfig,
    params: &TransducerParams,
    ex: &Example,
    views: &ViewPair,
    step: usize,
    err: Error,
) -> Error {
    let Some(dir) = &cfg.output_dir else {
        return err;
    };
    let diag = dir.join("diagnostic");
    match write_diagnostic(&diag, cfg, params, ex, views, step, &err) {
        Ok(()) => Error::NonFinite(format!("{err}; diagnostic bundle in {}", diag.display())),
        Err(e) => Error::NonFinite(format!("{err}; writing diagnostic bundle failed: {e}")),
    }
}

fn write_diagnostic(
    dir: &Path,
    cfg: &ExperimentConfig,
    params: &TransducerParams,
    ex: &Example,
    views: &ViewPair,
    step: usize,
    err: &Error,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, bytes: &[u8]| -> Result<()> {
        let p = dir.join(name);
        std::fs::write(&p, bytes).map_err(|e| Error::io(p, e))
    };
    write("config.txt", cfg.to_text().as_bytes())?;
    let summary = format!(
        "error: {err}\nstep: {step}\nutterance: {}\ntarget: {:?}\nparams finite: {}\nparam norm: {:?}\n\
         dropout seeds: {} {}\naugment seeds: {} {}\n",
        ex.features.id,
        ex.target.tokens(),
        params.is_finite(),
        params.norm(),
        views.dropout_seed_a,
        views.dropout_seed_b,
        views.augment_seed_a,
        views.augment_seed_b,
    );
    write("summary.txt", summary.as_bytes())?;
    let ck = Checkpoint {
        params: params.clone(),
        optimizer: OptimizerState::new(params),
    };
    ck.save(&dir.join("params.ckpt"))?;
    for (name, view, seed) in [
        ("lattice_a.txt", &views.view_a, views.dropout_seed_a),
        ("lattice_b.txt", &views.view_b, views.dropout_seed_b),
    ] {
        let plan = DropoutPlan::everywhere(cfg.dropout, seed)?;
        let text = match model_forward(params, view, &ex.target, &plan) {
            Ok(f) => lattice_text(&f.lattice, ex, &[]),
            Err(e) => format!("# forward failed: {e}\n"),
        };
        write(name, text.as_bytes())?;
    }
    Ok(())
}

pub(crate) fn lattice_text(lat: &EmissionLattice, ex: &Example, comments: &[String]) -> String {
    let mut buf = Vec::new();
    let mut all = vec![format!("utterance {}", ex.features.id)];
    all.extend_from_slice(comments);
    lat.write_text(&mut buf, Some(&ex.target), &all)
        .expect("writing to memory cannot fail");
    String::from_utf8(buf).expect("lattice text is utf-8")
}

/// Run directory layout: `config.txt` (resolved), `report.json`,
/// `steps.csv`, `eval.csv`, `model.ckpt`, `timing.json`.
pub fn write_run_dir(
    dir: &Path,
    cfg: &ExperimentConfig,
    out: &TrainOutcome,
    wall_clock_secs: f64,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let put = |name: &str, bytes: Vec<u8>| -> Result<PathBuf> {
        let p = dir.join(name);
        std::fs::write(&p, bytes).map_err(|e| Error::io(&p, e))?;
        Ok(p)
    };
    put("config.txt", cfg.to_text().into_bytes())?;
    let json = serde_json::to_vec_pretty(&out.report)
        .map_err(|e| Error::format("report", e.to_string()))?;
    put("report.json", json)?;
    let mut csv = String::from("step,epoch,lr,nll_a,nll_b,d_c,d_c_raw,total,grad_norm\n");
    for s in &out.report.steps {
        csv.push_str(&format!(
            "{},{},{:?},{:?},{:?},{:?},{:?},{:?},{:?}\n",
            s.step, s.epoch, s.lr, s.nll_a, s.nll_b, s.d_c, s.d_c_raw, s.total, s.grad_norm
        ));
    }
    put("steps.csv", csv.into_bytes())?;
    put("eval.csv", out.report.eval.to_csv().into_bytes())?;
    out.checkpoint.save(&dir.join("model.ckpt"))?;
    put(
        "timing.json",
        format!("{{\"wall_clock_secs\": {wall_clock_secs:?}}}\n").into_bytes(),
    )?;
    Ok(())
}
