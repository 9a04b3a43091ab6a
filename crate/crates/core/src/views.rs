//! Feature sequences and spec-augment style view generation.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSeq {
    frames: Array2<f64>,
    pub id: String,
}

impl FeatureSeq {
    pub fn new(frames: Array2<f64>, id: impl Into<String>) -> Result<Self> {
        let (t, f) = frames.dim();
        if t == 0 || f == 0 {
            return Err(Error::shape(format!(
                "feature sequence must be non-empty, got {t}x{f}"
            )));
        }
        if frames.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("feature frames".into()));
        }
        Ok(Self {
            frames,
            id: id.into(),
        })
    }

    pub fn frames(&self) -> &Array2<f64> {
        &self.frames
    }

    pub fn t_len(&self) -> usize {
        self.frames.nrows()
    }

    pub fn feat_dim(&self) -> usize {
        self.frames.ncols()
    }

    pub fn mean(&self) -> f64 {
        self.frames.mean().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskFill {
    Mean,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentSpec {
    pub n_time_masks: usize,
    /// Upper bound on each time mask's width as a fraction of the frame count.
    pub time_mask_frac: f64,
    pub n_freq_masks: usize,
    pub freq_mask_width: usize,
    pub fill: MaskFill,
    pub seed: u64,
}

impl AugmentSpec {
    /// Masking scaled from 80-bin filterbanks to `feat_dim` bins.
    pub fn for_features(feat_dim: usize) -> Self {
        Self {
            n_time_masks: 10,
            time_mask_frac: 0.05,
            n_freq_masks: 2,
            freq_mask_width: (27.0 * feat_dim as f64 / 80.0).round() as usize,
            fill: MaskFill::Mean,
            seed: 0,
        }
    }

    pub fn disabled() -> Self {
        Self {
            n_time_masks: 0,
            time_mask_frac: 0.0,
            n_freq_masks: 0,
            freq_mask_width: 0,
            fill: MaskFill::Mean,
            seed: 0,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.time_mask_frac) {
            return Err(Error::Config(format!(
                "time mask fraction {} outside [0, 1]",
                self.time_mask_frac
            )));
        }
        Ok(())
    }
}

/// Which frames and feature bins a mask draw touched.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskRecord {
    pub frames: Vec<bool>,
    pub bins: Vec<bool>,
}

/// Masks time spans and feature bands with the fill value. Each time mask
/// draws a real width uniformly from `[0, time_mask_frac * T]` and rounds it
/// stochastically, so the expected width is `time_mask_frac * T / 2` at any
/// length and short inputs still get one-frame masks. Widths are clipped to
/// `T - 1`, and a time mask that would blank every frame is skipped.
pub fn spec_augment(x: &FeatureSeq, spec: &AugmentSpec) -> FeatureSeq {
    spec_augment_with_record(x, spec).0
}

pub fn spec_augment_with_record(x: &FeatureSeq, spec: &AugmentSpec) -> (FeatureSeq, MaskRecord) {
    let (t_len, f_len) = x.frames.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut frames = vec![false; t_len];
    let max_width = spec.time_mask_frac * t_len as f64;
    for _ in 0..spec.n_time_masks {
        let real = rng.random_range(0.0..=max_width);
        let up = rng.random::<f64>() < real.fract();
        let w = (real.floor() as usize + up as usize).min(t_len - 1);
        let start = rng.random_range(0..=t_len - w);
        let covered = frames
            .iter()
            .enumerate()
            .filter(|&(i, &m)| m || (start..start + w).contains(&i))
            .count();
        if covered < t_len {
            frames[start..start + w].iter_mut().for_each(|m| *m = true);
        }
    }
    let mut bins = vec![false; f_len];
    let fw = spec.freq_mask_width.min(f_len);
    for _ in 0..spec.n_freq_masks {
        let start = rng.random_range(0..=f_len - fw);
        bins[start..start + fw].iter_mut().for_each(|m| *m = true);
    }
    let fill = match spec.fill {
        MaskFill::Mean => x.mean(),
        MaskFill::Zero => 0.0,
    };
    let mut out = x.frames.clone();
    for ((t, f), v) in out.indexed_iter_mut() {
        if frames[t] || bins[f] {
            *v = fill;
        }
    }
    let seq = FeatureSeq {
        frames: out,
        id: x.id.clone(),
    };
    (seq, MaskRecord { frames, bins })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewPair {
    pub view_a: FeatureSeq,
    pub view_b: FeatureSeq,
    pub augment_seed_a: u64,
    pub augment_seed_b: u64,
    pub dropout_seed_a: u64,
    pub dropout_seed_b: u64,
}

/// Two independent augmentations of `x` plus two distinct dropout seeds.
pub fn make_view_pair<R: Rng>(x: &FeatureSeq, spec: &AugmentSpec, rng: &mut R) -> ViewPair {
    let augment_seed_a = rng.random();
    let augment_seed_b = rng.random();
    let dropout_seed_a: u64 = rng.random();
    let mut dropout_seed_b: u64 = rng.random();
    while dropout_seed_b == dropout_seed_a {
        dropout_seed_b = rng.random();
    }
    ViewPair {
        view_a: spec_augment(x, &spec.with_seed(augment_seed_a)),
        view_b: spec_augment(x, &spec.with_seed(augment_seed_b)),
        augment_seed_a,
        augment_seed_b,
        dropout_seed_a,
        dropout_seed_b,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(t: usize, f: usize) -> FeatureSeq {
        FeatureSeq::new(
            Array2::from_shape_fn((t, f), |(i, j)| (i * f + j) as f64 + 0.5),
            "ramp",
        )
        .unwrap()
    }

    #[test]
    fn rejects_empty_and_nan() {
        assert!(FeatureSeq::new(Array2::zeros((0, 3)), "x").is_err());
        assert!(FeatureSeq::new(Array2::from_elem((2, 2), f64::NAN), "x").is_err());
    }

    #[test]
    fn disabled_spec_is_identity() {
        let x = ramp(20, 8);
        assert_eq!(spec_augment(&x, &AugmentSpec::disabled()), x);
    }

    #[test]
    fn single_freq_mask_covers_exact_width() {
        let x = ramp(30, 8);
        let spec = AugmentSpec {
            n_freq_masks: 1,
            freq_mask_width: 2,
            seed: 17,
            ..AugmentSpec::disabled()
        };
        let y = spec_augment(&x, &spec);
        let fill = x.mean();
        let masked: Vec<usize> = (0..8)
            .filter(|&f| y.frames().column(f).iter().all(|&v| v == fill))
            .collect();
        assert_eq!(masked.len(), 2);
        assert_eq!(masked[1], masked[0] + 1);
    }

    #[test]
    fn toy_freq_width_scales() {
        assert_eq!(AugmentSpec::for_features(80).freq_mask_width, 27);
        assert_eq!(AugmentSpec::for_features(12).freq_mask_width, 4);
        assert_eq!(AugmentSpec::for_features(8).freq_mask_width, 3);
    }

    #[test]
    fn mean_time_mask_width_is_half_the_bound() {
        let x = ramp(26, 2);
        let spec = AugmentSpec {
            n_time_masks: 1,
            time_mask_frac: 0.05,
            ..AugmentSpec::disabled()
        };
        let n = 20_000;
        let total: usize = (0..n)
            .map(|seed| {
                let (_, rec) = spec_augment_with_record(&x, &spec.with_seed(seed));
                rec.frames.iter().filter(|&&m| m).count()
            })
            .sum();
        let mean = total as f64 / n as f64;
        assert!((mean - 0.65).abs() < 0.02, "mean width {mean}");
    }

    #[test]
    fn never_masks_every_frame() {
        let x = ramp(3, 2);
        let spec = AugmentSpec {
            n_time_masks: 50,
            time_mask_frac: 1.0,
            ..AugmentSpec::disabled()
        };
        for seed in 0..200 {
            let (_, rec) = spec_augment_with_record(&x, &spec.with_seed(seed));
            assert!(rec.frames.iter().any(|m| !m));
        }
    }
}
