use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::objective::eval_view;
use super::train::lattice_text;
use crate::decode::{
    antidiagonal_agreement, occupancy_heatmap, path_chebyshev_distance, top_mass_overlap,
    HeatmapDump,
};
use crate::error::{Error, Result};
use crate::lattice::EmissionLattice;
use crate::model::{DropoutPlan, TransducerParams};
use crate::pruning::select_band;
use crate::synthdata::{Dataset, Example};
use crate::transducer::transducer_loss;
use crate::views::{make_view_pair, AugmentSpec};

/// Two views of one example, each with its lattice and heatmap.
pub struct ViewHeatmaps {
    pub lattices: [EmissionLattice; 2],
    pub heatmaps: [HeatmapDump; 2],
    pub losses: [f64; 2],
}

pub fn view_heatmaps(
    params: &TransducerParams,
    ex: &Example,
    augment: &AugmentSpec,
    dropout: f64,
    view_seed: u64,
) -> Result<ViewHeatmaps> {
    let mut rng = ChaCha8Rng::seed_from_u64(view_seed);
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
    let ha = occupancy_heatmap(&a.forward.lattice, &ex.target)?;
    let hb = occupancy_heatmap(&b.forward.lattice, &ex.target)?;
    Ok(ViewHeatmaps {
        losses: [a.nll, b.nll],
        lattices: [a.forward.lattice, b.forward.lattice],
        heatmaps: [ha, hb],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DumpSummary {
    pub id: String,
    pub view_seed: u64,
    pub t_len: usize,
    pub u_len: usize,
    pub loss_a: f64,
    pub loss_b: f64,
    /// Largest |loss(reloaded lattice) - loss| over both views.
    pub reload_max_abs_diff: f64,
    /// Shared fraction of the two views' `T+U` highest-mass cells.
    pub top_mass_overlap: f64,
    pub path_chebyshev: usize,
    pub antidiagonal_agreement: f64,
    pub mass_near_path_a: f64,
    pub mass_near_path_b: f64,
}

pub fn find_example<'a>(data: &'a Dataset, id: &str) -> Result<&'a Example> {
    data.train
        .iter()
        .chain(&data.eval)
        .find(|e| e.features.id == id)
        .ok_or_else(|| Error::invalid(format!("no example with id {id:?}")))
}

/// Writes `lattice_{a,b}.txt` (with the pruned band as comments),
/// `heatmap_{a,b}.csv`, `heatmap_{a,b}.pgm`, `path_{a,b}.csv` and
/// `summary.json` into `out_dir`.
#[allow(clippy::too_many_arguments)]
pub fn dump_lattice(
    params: &TransducerParams,
    ex: &Example,
    augment: &AugmentSpec,
    dropout: f64,
    band_width: usize,
    view_seed: u64,
    out_dir: &Path,
) -> Result<DumpSummary> {
    let v = view_heatmaps(params, ex, augment, dropout, view_seed)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let put = |name: &str, bytes: Vec<u8>| -> Result<()> {
        let p = out_dir.join(name);
        std::fs::write(&p, bytes).map_err(|e| Error::io(p, e))
    };
    let mut reload_diff: f64 = 0.0;
    for (k, tag) in ["a", "b"].into_iter().enumerate() {
        let lat = &v.lattices[k];
        let tables = crate::transducer::LatticeTables::compute(lat, &ex.target)?;
        let band = select_band(&tables, band_width)?;
        let text = lattice_text(lat, ex, &band.comment_lines());
        let (back, target) = EmissionLattice::read_text(text.as_bytes())?;
        let target = target.ok_or_else(|| Error::format("lattice text", "target line missing"))?;
        reload_diff = reload_diff.max((transducer_loss(&back, &target)? - v.losses[k]).abs());
        put(&format!("lattice_{tag}.txt"), text.into_bytes())?;
        let h = &v.heatmaps[k];
        let mut buf = Vec::new();
        h.write_csv(&mut buf).map_err(|e| Error::io(out_dir, e))?;
        put(&format!("heatmap_{tag}.csv"), buf)?;
        let mut buf = Vec::new();
        h.write_pgm(&mut buf).map_err(|e| Error::io(out_dir, e))?;
        put(&format!("heatmap_{tag}.pgm"), buf)?;
        let mut buf = Vec::new();
        h.write_path_csv(&mut buf)
            .map_err(|e| Error::io(out_dir, e))?;
        put(&format!("path_{tag}.csv"), buf)?;
    }
    let [ha, hb] = &v.heatmaps;
    let (t_len, u_len) = (v.lattices[0].t_len(), v.lattices[0].u_len());
    let summary = DumpSummary {
        id: ex.features.id.clone(),
        view_seed,
        t_len,
        u_len,
        loss_a: v.losses[0],
        loss_b: v.losses[1],
        reload_max_abs_diff: reload_diff,
        top_mass_overlap: top_mass_overlap(ha, hb, t_len + u_len),
        path_chebyshev: path_chebyshev_distance(&ha.viterbi_path, &hb.viterbi_path),
        antidiagonal_agreement: antidiagonal_agreement(&ha.viterbi_path, &hb.viterbi_path),
        mass_near_path_a: ha.mass_near_path(3),
        mass_near_path_b: hb.mass_near_path(3),
    };
    let json =
        serde_json::to_vec_pretty(&summary).map_err(|e| Error::format("summary", e.to_string()))?;
    put("summary.json", json)?;
    Ok(summary)
}
