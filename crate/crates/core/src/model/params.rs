use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub feat_dim: usize,
    pub hidden: usize,
    pub joiner: usize,
    /// Real tokens; outputs are `vocab + 1` wide with blank at 0.
    pub vocab: usize,
    /// Frames on each side of the centre frame.
    pub context: usize,
    /// Frame subsampling stride.
    pub stride: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self {
            feat_dim: 12,
            hidden: 32,
            joiner: 32,
            vocab: 16,
            context: 2,
            stride: 1,
        }
    }
}

impl ModelDims {
    pub fn window_dim(&self) -> usize {
        (2 * self.context + 1) * self.feat_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.feat_dim == 0 || self.hidden == 0 || self.joiner == 0 || self.vocab == 0 {
            return Err(Error::Config("model dims must be >= 1".into()));
        }
        if self.stride == 0 {
            return Err(Error::Config("model stride must be >= 1".into()));
        }
        Ok(())
    }

    /// Encoder steps produced from `t_raw` input frames.
    pub fn encoder_len(&self, t_raw: usize) -> usize {
        t_raw.div_ceil(self.stride)
    }
}

pub const PARAM_NAMES: [&str; 12] = [
    "enc_w1",
    "enc_b1",
    "enc_w2",
    "enc_b2",
    "embed",
    "pred_w",
    "pred_b",
    "join_enc",
    "join_pred",
    "join_b",
    "out_w",
    "out_b",
];

/// All weights. Matrices map column inputs to row outputs (`y = W x`).
#[derive(Debug, Clone, PartialEq)]
pub struct TransducerParams {
    pub dims: ModelDims,
    pub enc_w1: Array2<f64>,
    pub enc_b1: Array1<f64>,
    pub enc_w2: Array2<f64>,
    pub enc_b2: Array1<f64>,
    /// Row 0 embeds the start-of-sequence context.
    pub embed: Array2<f64>,
    pub pred_w: Array2<f64>,
    pub pred_b: Array1<f64>,
    pub join_enc: Array2<f64>,
    pub join_pred: Array2<f64>,
    pub join_b: Array1<f64>,
    pub out_w: Array2<f64>,
    pub out_b: Array1<f64>,
}

impl TransducerParams {
    pub fn zeros(dims: ModelDims) -> Self {
        let (h, j, o) = (dims.hidden, dims.joiner, dims.vocab + 1);
        Self {
            dims,
            enc_w1: Array2::zeros((h, dims.window_dim())),
            enc_b1: Array1::zeros(h),
            enc_w2: Array2::zeros((h, h)),
            enc_b2: Array1::zeros(h),
            embed: Array2::zeros((o, h)),
            pred_w: Array2::zeros((h, 2 * h)),
            pred_b: Array1::zeros(h),
            join_enc: Array2::zeros((j, h)),
            join_pred: Array2::zeros((j, h)),
            join_b: Array1::zeros(j),
            out_w: Array2::zeros((o, j)),
            out_b: Array1::zeros(o),
        }
    }

    /// Weights uniform in `±1/sqrt(fan_in)`, embeddings uniform in `±1`,
    /// biases zero.
    pub fn init(dims: ModelDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut p = Self::zeros(dims);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |a: &mut Array2<f64>, scale: f64| {
            a.iter_mut()
                .for_each(|x| *x = rng.random_range(-scale..=scale));
        };
        let fan = |n: usize| 1.0 / (n as f64).sqrt();
        fill(&mut p.enc_w1, fan(dims.window_dim()));
        fill(&mut p.enc_w2, fan(dims.hidden));
        fill(&mut p.embed, 1.0);
        fill(&mut p.pred_w, fan(2 * dims.hidden));
        fill(&mut p.join_enc, fan(dims.hidden));
        fill(&mut p.join_pred, fan(dims.hidden));
        fill(&mut p.out_w, fan(dims.joiner));
        Ok(p)
    }

    /// Parameter arrays in `PARAM_NAMES` order, flattened row major.
    pub fn slices(&self) -> [&[f64]; 12] {
        fn s2(a: &Array2<f64>) -> &[f64] {
            a.as_slice().expect("standard layout")
        }
        fn s1(a: &Array1<f64>) -> &[f64] {
            a.as_slice().expect("standard layout")
        }
        [
            s2(&self.enc_w1),
            s1(&self.enc_b1),
            s2(&self.enc_w2),
            s1(&self.enc_b2),
            s2(&self.embed),
            s2(&self.pred_w),
            s1(&self.pred_b),
            s2(&self.join_enc),
            s2(&self.join_pred),
            s1(&self.join_b),
            s2(&self.out_w),
            s1(&self.out_b),
        ]
    }

    pub fn slices_mut(&mut self) -> [&mut [f64]; 12] {
        [
            self.enc_w1.as_slice_mut().expect("standard layout"),
            self.enc_b1.as_slice_mut().expect("standard layout"),
            self.enc_w2.as_slice_mut().expect("standard layout"),
            self.enc_b2.as_slice_mut().expect("standard layout"),
            self.embed.as_slice_mut().expect("standard layout"),
            self.pred_w.as_slice_mut().expect("standard layout"),
            self.pred_b.as_slice_mut().expect("standard layout"),
            self.join_enc.as_slice_mut().expect("standard layout"),
            self.join_pred.as_slice_mut().expect("standard layout"),
            self.join_b.as_slice_mut().expect("standard layout"),
            self.out_w.as_slice_mut().expect("standard layout"),
            self.out_b.as_slice_mut().expect("standard layout"),
        ]
    }

    pub fn num_params(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    /// Flat read by global index across all arrays.
    pub fn get(&self, mut idx: usize) -> f64 {
        for s in self.slices() {
            if idx < s.len() {
                return s[idx];
            }
            idx -= s.len();
        }
        panic!("parameter index out of range");
    }

    pub fn set(&mut self, mut idx: usize, v: f64) {
        for s in self.slices_mut() {
            if idx < s.len() {
                s[idx] = v;
                return;
            }
            idx -= s.len();
        }
        panic!("parameter index out of range");
    }

    /// `self += c * other`.
    pub fn add_scaled(&mut self, other: &Self, c: f64) {
        for (a, b) in self.slices_mut().into_iter().zip(other.slices()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += c * y);
        }
    }

    pub fn scale(&mut self, c: f64) {
        for a in self.slices_mut() {
            a.iter_mut().for_each(|x| *x *= c);
        }
    }

    pub fn norm(&self) -> f64 {
        self.slices()
            .iter()
            .flat_map(|s| s.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.slices()
            .iter()
            .all(|s| s.iter().all(|x| x.is_finite()))
    }
}
