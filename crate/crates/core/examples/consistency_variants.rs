//! Compares every consistency variant on two views of one example under a
//! freshly initialized model.
//!
//!     cargo run --example consistency_variants

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tcr::consistency::{
    best_one_path_loss, compressed_prob_loss, full_joint_loss, symmetric_tcr, threshold_topk_loss,
    TcrConfig,
};
use tcr::model::{encoder_mse, model_forward, DropoutPlan, ModelDims, TransducerParams};
use tcr::synthdata::{generate_split, TaskSpec};
use tcr::transducer::{occupancies, LatticeTables};
use tcr::views::{make_view_pair, AugmentSpec};

fn main() -> tcr::Result<()> {
    let spec = TaskSpec::default();
    let data = generate_split(&spec, 1, 1, 3)?;
    let ex = &data.train[0];
    let params = TransducerParams::init(ModelDims::default(), 5)?;
    let views = make_view_pair(
        &ex.features,
        &AugmentSpec::for_features(spec.feat_dim),
        &mut ChaCha8Rng::seed_from_u64(9),
    );
    let fa = model_forward(
        &params,
        &views.view_a,
        &ex.target,
        &DropoutPlan::everywhere(0.1, views.dropout_seed_a)?,
    )?;
    let fb = model_forward(
        &params,
        &views.view_b,
        &ex.target,
        &DropoutPlan::everywhere(0.1, views.dropout_seed_b)?,
    )?;
    let (a, b, y) = (&fa.lattice, &fb.lattice, &ex.target);
    let oa = occupancies(a, y, &LatticeTables::compute(a, y)?)?;
    let ob = occupancies(b, y, &LatticeTables::compute(b, y)?)?;

    println!(
        "example {}: T={} U={}",
        ex.features.id,
        a.t_len(),
        a.u_len()
    );
    let unclamped = TcrConfig {
        clamp: f64::INFINITY,
        ..Default::default()
    };
    println!("{:<22} {:>10}", "variant", "a->b + b->a");
    println!(
        "{:<22} {:>10.5}",
        "tcr",
        symmetric_tcr(a, b, &oa, &ob, y, &unclamped)?
    );
    println!(
        "{:<22} {:>10.5}",
        "tcr (clamp 5e-3)",
        symmetric_tcr(a, b, &oa, &ob, y, &TcrConfig::default())?
    );
    println!(
        "{:<22} {:>10.5}",
        "full_joint",
        full_joint_loss(a, b, None)? + full_joint_loss(b, a, None)?
    );
    println!(
        "{:<22} {:>10.5}",
        "threshold_topk (2,2)",
        threshold_topk_loss(a, b, y, 2, 2)? + threshold_topk_loss(b, a, y, 2, 2)?
    );
    println!(
        "{:<22} {:>10.5}",
        "best_one_path",
        best_one_path_loss(a, b, y)? + best_one_path_loss(b, a, y)?
    );
    println!(
        "{:<22} {:>10.5}",
        "compressed_prob",
        compressed_prob_loss(a, b, y, None)? + compressed_prob_loss(b, a, y, None)?
    );
    let mse = encoder_mse(fa.cache.encoder_output(), fb.cache.encoder_output())?;
    println!("{:<22} {:>10.5}", "encoder_mse", 2.0 * mse);
    Ok(())
}
