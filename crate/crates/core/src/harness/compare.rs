use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, RegMode};
use super::train::{train, write_run_dir, RunReport};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single run.
    pub sd: f64,
}

impl MeanSd {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let sd = if xs.len() > 1 {
            (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, sd }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub variant: String,
    pub seeds: Vec<u64>,
    pub ter_greedy: MeanSd,
    pub ter_beam: MeanSd,
    pub divergence: Option<MeanSd>,
    pub runs: Vec<RunReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    pub fn row(&self, variant: RegMode) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.variant == variant.name())
    }

    /// Plain-text table: TER in percent, divergence as mean ± sd.
    pub fn render(&self) -> String {
        let mut s = format!(
            "{:<16} {:>16} {:>16} {:>22}\n",
            "variant", "TER greedy %", "TER beam %", "inter-view div"
        );
        for r in &self.rows {
            let pct = |m: MeanSd| format!("{:.2} ± {:.2}", 100.0 * m.mean, 100.0 * m.sd);
            let div = r
                .divergence
                .map(|d| format!("{:.5} ± {:.5}", d.mean, d.sd))
                .unwrap_or_else(|| "-".into());
            s.push_str(&format!(
                "{:<16} {:>16} {:>16} {:>22}\n",
                r.variant,
                pct(r.ter_greedy),
                pct(r.ter_beam),
                div
            ));
        }
        s
    }
}

/// Trains every `(variant, seed)` pair, in parallel, from `base`. With an
/// output directory, each run writes to `<dir>/<variant>/seed-<seed>`.
pub fn compare_variants(
    base: &ExperimentConfig,
    variants: &[RegMode],
    seeds: &[u64],
) -> Result<ComparisonTable> {
    if seeds.is_empty() || variants.is_empty() {
        return Err(crate::Error::Config(
            "compare needs at least one variant and one seed".into(),
        ));
    }
    let jobs: Vec<(RegMode, u64)> = variants
        .iter()
        .flat_map(|&v| seeds.iter().map(move |&s| (v, s)))
        .collect();
    let reports = jobs
        .par_iter()
        .map(|&(variant, seed)| -> Result<RunReport> {
            let mut cfg = base.clone();
            cfg.reg = variant;
            cfg.seed = seed;
            if let Some(dir) = &base.output_dir {
                cfg.output_dir = Some(dir.join(variant.name()).join(format!("seed-{seed}")));
            }
            let start = std::time::Instant::now();
            let out = train(&cfg)?;
            if let Some(dir) = &cfg.output_dir {
                write_run_dir(dir, &cfg, &out, start.elapsed().as_secs_f64())?;
            }
            Ok(out.report)
        })
        .collect::<Result<Vec<_>>>()?;
    let rows = variants
        .iter()
        .enumerate()
        .map(|(vi, &v)| {
            let runs: Vec<RunReport> = reports[vi * seeds.len()..(vi + 1) * seeds.len()].to_vec();
            let col =
                |f: fn(&RunReport) -> f64| MeanSd::of(&runs.iter().map(f).collect::<Vec<_>>());
            let divergence = runs
                .iter()
                .map(|r| r.eval.inter_view_divergence)
                .collect::<Option<Vec<f64>>>()
                .map(|d| MeanSd::of(&d));
            ComparisonRow {
                variant: v.name().to_string(),
                seeds: seeds.to_vec(),
                ter_greedy: col(|r| r.eval.ter_greedy),
                ter_beam: col(|r| r.eval.ter_beam),
                divergence,
                runs,
            }
        })
        .collect();
    Ok(ComparisonTable { rows })
}
