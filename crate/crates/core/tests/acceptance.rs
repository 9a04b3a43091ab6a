//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Exact checks fail the process. The toy-scale training comparison is an
//! empirical outcome: its FAIL line is printed and counted, but it only sets
//! a nonzero exit with `--strict` (or `TCR_ACCEPTANCE_STRICT=1`).
//!
//!     cargo test --release --test acceptance
//!     cargo test --release --test acceptance -- --strict 8 9

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use common::*;
use ndarray::Array2;
use rand::Rng;
use tcr::consistency::*;
use tcr::harness::{
    compare_variants, detached_weights, pair_objective, train, view_heatmaps, DetachedWeights,
    ExperimentConfig, ObjectiveSettings, RegMode,
};
use tcr::lattice::{EmissionLattice, TargetSeq, BLANK};
use tcr::model::{
    encoder_mse, model_forward, Checkpoint, DropoutPlan, ModelDims, TransducerParams,
};
use tcr::pruning::{banded_loss, select_band, PruneBand};
use tcr::seeds::derive_seed;
use tcr::transducer::*;
use tcr::views::{make_view_pair, AugmentSpec, FeatureSeq};

const CONFIG: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/configs/acceptance.cfg");

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn instances(n: usize) -> Vec<(EmissionLattice, TargetSeq)> {
    let mut r = rng(2024);
    (0..n)
        .map(|_| random_instance(&mut r, 4, 3, 3, 3.0))
        .collect()
}

fn oracle_equivalence() -> Check {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for (lat, y) in instances(1000) {
        let brute = -brute_force_prob(&lat, &y).ln();
        let loss = transducer_loss(&lat, &y).map_err(|e| e.to_string())?;
        worst = worst.max((loss - brute).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(worst <= 1e-9, || format!("max |loss - brute| = {worst:e}"))?;
    ensure(secs < 10.0, || format!("took {secs:.1}s"))?;
    Ok(format!(
        "1000 instances, max abs diff {worst:.2e}, {secs:.2}s"
    ))
}

fn forward_backward_identities() -> Check {
    let (mut end, mut diag): (f64, f64) = (0.0, 0.0);
    for (lat, y) in instances(1000) {
        let tables = LatticeTables::compute(&lat, &y).map_err(|e| e.to_string())?;
        let (t, u) = (lat.t_len() - 1, lat.u_len());
        let via_alpha = (tables.log_alpha[[t, u]] + lat.lp(t, u, BLANK)).exp();
        end = end.max((via_alpha - tables.log_beta[[0, 0]].exp()).abs());
        diag = diag.max(antidiagonal_check(&tables));
    }
    ensure(end <= 1e-9 && diag <= 1e-9, || {
        format!("end {end:e}, antidiagonal {diag:e}")
    })?;
    Ok(format!(
        "alpha/beta endpoint {end:.2e}, antidiagonal {diag:.2e}"
    ))
}

fn lattice_gradients() -> Check {
    let mut r = rng(77);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (lat, y) = random_instance(&mut r, 4, 3, 3, 2.0);
        let g = loss_grad(&lat, &y).map_err(|e| e.to_string())?;
        let f = |l: &EmissionLattice| transducer_loss(l, &y).unwrap();
        for ((t, u, k), _) in g.indexed_iter() {
            worst = worst.max(rel_err(
                fd_cell(&lat, t, u, k, 1e-5, &f),
                project(&lat, &g, t, u, k),
            ));
        }
    }
    ensure(worst <= 1e-4, || format!("max rel err {worst:e}"))?;
    Ok(format!("100 lattices, max rel err {worst:.2e}"))
}

fn end_to_end_gradients() -> Check {
    let start = Instant::now();
    let dims = ModelDims {
        feat_dim: 4,
        hidden: 5,
        joiner: 5,
        vocab: 3,
        context: 1,
        stride: 1,
    };
    let p = TransducerParams::init(dims, 5).map_err(|e| e.to_string())?;
    let mut r = rng(6);
    let x = FeatureSeq::new(
        Array2::from_shape_fn((5, 4), |_| r.random_range(-1.5..1.5)),
        "x",
    )
    .unwrap();
    let y = TargetSeq::new(vec![2, 3], 3).unwrap();
    let spec = AugmentSpec {
        n_freq_masks: 1,
        freq_mask_width: 1,
        ..AugmentSpec::disabled()
    };
    let views = make_view_pair(&x, &spec, &mut r);
    let lambda = 0.5;
    let settings = ObjectiveSettings {
        reg: RegMode::Consistency(Variant::Tcr),
        lambda,
        tcr: TcrConfig {
            lambda,
            clamp: 1e9,
            ..Default::default()
        },
        band_width: Some(3),
        dropout: 0.2,
        duplicate_views: true,
    };
    let frozen: [DetachedWeights; 2] = [
        (&views.view_a, views.dropout_seed_a),
        (&views.view_b, views.dropout_seed_b),
    ]
    .map(|(v, seed)| {
        let f = model_forward(&p, v, &y, &DropoutPlan::everywhere(0.2, seed).unwrap()).unwrap();
        let tables = LatticeTables::compute(&f.lattice, &y).unwrap();
        detached_weights(&f.lattice, &tables, &y, Variant::Tcr, settings.band_width).unwrap()
    });
    let base =
        pair_objective(&p, &y, &views, &settings, Some(&frozen)).map_err(|e| e.to_string())?;
    let total = |q: &TransducerParams| {
        pair_objective(q, &y, &views, &settings, Some(&frozen))
            .unwrap()
            .report
            .total
    };
    let n = 80;
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let i = r.random_range(0..p.num_params());
        let mut q = p.clone();
        q.set(i, p.get(i) + 1e-5);
        let up = total(&q);
        q.set(i, p.get(i) - 1e-5);
        let fd = (up - total(&q)) / 2e-5;
        worst = worst.max(rel_err(fd, base.grads.get(i)));
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(base.report.d_c > 0.0, || "consistency term is zero".into())?;
    ensure(worst <= 1e-3, || format!("max rel err {worst:e}"))?;
    ensure(secs < 120.0, || format!("took {secs:.1}s"))?;
    Ok(format!(
        "{n} params, D_c {:.4}, max rel err {worst:.2e}, {secs:.2}s",
        base.report.d_c
    ))
}

fn occupancy_correctness() -> Check {
    let mut worst: f64 = 0.0;
    for (lat, y) in instances(1000) {
        let tables = LatticeTables::compute(&lat, &y).map_err(|e| e.to_string())?;
        let occ = occupancies(&lat, &y, &tables).map_err(|e| e.to_string())?;
        worst = worst.max((occ.w_blank.sum() - 1.0).abs());
        if lat.u_len() > 0 {
            worst = worst.max((occ.w_nonblank.sum() - 1.0).abs());
        }
        for t in 0..lat.t_len() {
            for u in 0..=lat.u_len() {
                let nb = if u < lat.u_len() {
                    occ.raw_nonblank(t, u)
                } else {
                    0.0
                };
                let cell = (tables.log_alpha[[t, u]] + tables.log_beta[[t, u]]
                    - tables.log_prob_total)
                    .exp();
                worst = worst.max((nb + occ.raw_blank(t, u) - cell).abs());
            }
        }
    }
    ensure(worst <= 1e-9, || format!("max deviation {worst:e}"))?;
    let lat = EmissionLattice::uniform(2, 1, 1);
    let y = TargetSeq::new(vec![1], 1).unwrap();
    let tables = LatticeTables::compute(&lat, &y).unwrap();
    let occ = occupancies(&lat, &y, &tables).unwrap();
    let expect_nb = [((0, 0), 0.5), ((1, 0), 0.5)];
    let expect_bl = [((0, 0), 0.5), ((0, 1), 0.5), ((1, 0), 0.0), ((1, 1), 1.0)];
    for ((t, u), v) in expect_nb {
        ensure((occ.raw_nonblank(t, u) - v).abs() < 1e-12, || {
            format!("raw nonblank ({t},{u})")
        })?;
        ensure((occ.w_nonblank[[t, u]] - v).abs() < 1e-12, || {
            format!("w nonblank ({t},{u})")
        })?;
    }
    for ((t, u), v) in expect_bl {
        ensure((occ.raw_blank(t, u) - v).abs() < 1e-12, || {
            format!("raw blank ({t},{u})")
        })?;
        ensure((occ.w_blank[[t, u]] - v / 2.0).abs() < 1e-12, || {
            format!("w blank ({t},{u})")
        })?;
    }
    Ok(format!(
        "1000 instances, max deviation {worst:.2e}; uniform 2x1 hand values match"
    ))
}

fn consistency_properties() -> Check {
    let mut r = rng(303);
    let mut sat: f64 = 0.0;
    for _ in 0..100 {
        let (a, y) = random_instance(&mut r, 4, 3, 3, 2.0);
        let (b, _) = random_lattice(&mut r, a.t_len(), a.u_len(), a.vocab(), 2.0);
        let ta = LatticeTables::compute(&a, &y).unwrap();
        let tb = LatticeTables::compute(&b, &y).unwrap();
        let (oa, ob) = (
            occupancies(&a, &y, &ta).unwrap(),
            occupancies(&b, &y, &tb).unwrap(),
        );
        let clamp = r.random_range(1e-4..1.0);
        for variant in Variant::ALL
            .into_iter()
            .filter(|v| *v != Variant::EncoderMse)
        {
            let cfg = TcrConfig {
                variant,
                clamp,
                ..Default::default()
            };
            for (li, lj) in [(&a, &a), (&a, &b)] {
                let inputs = DirectionInputs {
                    lat_i: li,
                    lat_j: lj,
                    target: &y,
                    occ_i: Some(&oa),
                    region: None,
                };
                let (rep, _) =
                    directional_consistency(&inputs, &cfg, false).map_err(|e| e.to_string())?;
                ensure(rep.d_c <= clamp, || {
                    format!("{variant}: d_c {} > clamp {clamp}", rep.d_c)
                })?;
                if std::ptr::eq(li, lj) {
                    ensure(rep.d_c_raw == 0.0, || {
                        format!("{variant}: {} on identical views", rep.d_c_raw)
                    })?;
                }
            }
        }
        let enc = Array2::from_shape_fn((3, 4), |_| r.random_range(-1.0..1.0));
        ensure(encoder_mse(&enc, &enc).unwrap() == 0.0, || {
            "encoder_mse on identical views".into()
        })?;
        let cfg = TcrConfig {
            clamp,
            ..Default::default()
        };
        let ab = symmetric_tcr(&a, &b, &oa, &ob, &y, &cfg).unwrap();
        let ba = symmetric_tcr(&b, &a, &ob, &oa, &y, &cfg).unwrap();
        ensure(ab == ba, || format!("swap: {ab} vs {ba}"))?;
        ensure(ab <= 2.0 * clamp, || {
            "symmetric term exceeds two clamps".into()
        })?;
        let k = a.u_len() + 1;
        let topk = threshold_topk_loss(&a, &b, &y, k, k).unwrap();
        let full = full_joint_loss(&a, &b, None).unwrap();
        sat = sat.max((topk - full).abs());
    }
    ensure(sat <= 1e-12, || {
        format!("saturated threshold vs full joint {sat:e}")
    })?;
    Ok(format!(
        "100 pairs, saturated threshold vs full joint {sat:.2e}"
    ))
}

fn pruning_contract() -> Check {
    let mut r = rng(404);
    for i in 0..100 {
        let (lat, y) = random_instance(&mut r, 6, 5, 3, 3.0);
        let full = transducer_loss(&lat, &y).unwrap();
        let whole = PruneBand::full(lat.t_len(), lat.u_len());
        let banded = banded_loss(&lat, &y, &whole).map_err(|e| e.to_string())?;
        ensure(banded == full, || {
            format!("instance {i}: full band {banded} vs {full}")
        })?;
        let tables = LatticeTables::compute(&lat, &y).unwrap();
        let mut prev = f64::INFINITY;
        for w in 1..=lat.u_len() + 2 {
            let loss = banded_loss(&lat, &y, &select_band(&tables, w).unwrap()).unwrap();
            ensure(loss <= prev, || {
                format!("instance {i}: width {w} loss {loss} > {prev}")
            })?;
            prev = loss;
        }
        ensure(prev == full, || {
            format!("instance {i}: saturated band {prev} vs {full}")
        })?;
    }
    Ok("100 instances, full band exact, loss non-increasing in width".into())
}

fn acceptance_config() -> Result<ExperimentConfig, String> {
    ExperimentConfig::load(std::path::Path::new(CONFIG)).map_err(|e| e.to_string())
}

fn toy_tcr_effect() -> Check {
    let start = Instant::now();
    let cfg = acceptance_config()?;
    let tcr = RegMode::Consistency(Variant::Tcr);
    let seeds = [1, 2, 3, 4, 5];
    let table =
        compare_variants(&cfg, &[RegMode::Baseline, tcr], &seeds).map_err(|e| e.to_string())?;
    for line in table.render().lines() {
        println!("    {line}");
    }
    let (b, t) = (
        table.row(RegMode::Baseline).unwrap(),
        table.row(tcr).unwrap(),
    );
    let (db, dt) = (b.divergence.unwrap().mean, t.divergence.unwrap().mean);
    let secs = start.elapsed().as_secs_f64();
    let summary = format!(
        "divergence {dt:.5} vs {db:.5}; beam TER {:.2}% vs {:.2}% (greedy {:.2}% vs {:.2}%); {secs:.0}s",
        100.0 * t.ter_beam.mean,
        100.0 * b.ter_beam.mean,
        100.0 * t.ter_greedy.mean,
        100.0 * b.ter_greedy.mean
    );
    ensure(dt < db, || format!("divergence not lower: {summary}"))?;
    ensure(t.ter_beam.mean <= b.ter_beam.mean, || {
        format!("TER above baseline: {summary}")
    })?;
    ensure(secs < 1200.0, || format!("too slow: {summary}"))?;
    Ok(summary)
}

fn heatmap_locality() -> Check {
    let cfg = acceptance_config()?;
    let out = train(&cfg).map_err(|e| e.to_string())?;
    let mut min_mass: f64 = 1.0;
    let (mut agree, mut crossings) = (0.0, 0.0);
    for ex in out.dataset.eval.iter().take(20) {
        let seed = derive_seed(cfg.seed, &format!("heatmap/{}", ex.features.id));
        let v = view_heatmaps(
            &out.checkpoint.params,
            ex,
            &cfg.resolved_augment(),
            cfg.dropout,
            seed,
        )
        .map_err(|e| e.to_string())?;
        for h in &v.heatmaps {
            min_mass = min_mass.min(h.mass_near_path(3));
        }
        let [ha, hb] = &v.heatmaps;
        let n = ha.viterbi_path.len() as f64;
        agree += n * tcr::decode::antidiagonal_agreement(&ha.viterbi_path, &hb.viterbi_path);
        crossings += n;
    }
    let frac = agree / crossings;
    ensure(min_mass >= 0.9, || {
        format!("min mass near path {min_mass:.4}")
    })?;
    ensure(frac >= 0.8, || format!("path agreement {frac:.4}"))?;
    Ok(format!(
        "20 examples, min mass within 3 of path {min_mass:.4}, path agreement {frac:.4}"
    ))
}

fn determinism() -> Check {
    let mut cfg = acceptance_config()?;
    cfg.set("train.epochs", "3").map_err(|e| e.to_string())?;
    let bytes = |c: &Checkpoint| {
        let mut buf = Vec::new();
        c.write(&mut buf).unwrap();
        buf
    };
    let a = train(&cfg).map_err(|e| e.to_string())?;
    let b = train(&cfg).map_err(|e| e.to_string())?;
    ensure(a.report == b.report, || "reports differ".into())?;
    ensure(bytes(&a.checkpoint) == bytes(&b.checkpoint), || {
        "checkpoints differ".into()
    })?;
    let json = serde_json::to_string(&a.report).unwrap();
    ensure(json == serde_json::to_string(&b.report).unwrap(), || {
        "serialized reports differ".into()
    })?;
    Ok(format!(
        "{} steps, report and checkpoint bit-identical",
        a.report.steps.len()
    ))
}

fn main() {
    // (name, check, empirical)
    let criteria: [(&str, fn() -> Check, bool); 10] = [
        ("oracle equivalence", oracle_equivalence, false),
        ("forward-backward identities", forward_backward_identities, false),
        ("lattice gradient exactness", lattice_gradients, false),
        ("end-to-end parameter gradients", end_to_end_gradients, false),
        ("occupancy correctness", occupancy_correctness, false),
        ("consistency-loss properties", consistency_properties, false),
        ("pruning contract", pruning_contract, false),
        ("toy-scale TCR effect", toy_tcr_effect, true),
        ("occupancy heatmap locality", heatmap_locality, false),
        ("determinism", determinism, false),
    ];
    let args: Vec<String> = std::env::args().skip(1).collect();
    let strict = args.iter().any(|a| a == "--strict")
        || std::env::var("TCR_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let only: Vec<usize> = args.iter().filter_map(|a| a.parse().ok()).collect();
    let (mut failed, mut fatal) = (0, 0);
    for (i, (name, f, empirical)) in criteria.into_iter().enumerate() {
        let n = i + 1;
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        match result {
            Ok(detail) => println!("PASS {n:>2} {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                if strict || !empirical {
                    fatal += 1;
                }
                println!("FAIL {n:>2} {name}: {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
    }
    if fatal > 0 {
        std::process::exit(1);
    }
}
