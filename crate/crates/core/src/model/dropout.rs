use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropoutSite {
    Encoder,
    Predictor,
    Joiner,
}

impl DropoutSite {
    pub const ALL: [DropoutSite; 3] = [
        DropoutSite::Encoder,
        DropoutSite::Predictor,
        DropoutSite::Joiner,
    ];

    fn label(self) -> &'static str {
        match self {
            DropoutSite::Encoder => "dropout/encoder",
            DropoutSite::Predictor => "dropout/predictor",
            DropoutSite::Joiner => "dropout/joiner",
        }
    }
}

/// Inverted dropout: kept units are scaled by `1/(1-rate)`. Each site draws
/// its mask from its own stream derived from `seed`.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutPlan {
    pub rate: f64,
    pub seed: u64,
    pub sites: Vec<DropoutSite>,
}

impl DropoutPlan {
    pub fn none() -> Self {
        Self {
            rate: 0.0,
            seed: 0,
            sites: Vec::new(),
        }
    }

    pub fn new(rate: f64, seed: u64, sites: Vec<DropoutSite>) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        Ok(Self { rate, seed, sites })
    }

    pub fn everywhere(rate: f64, seed: u64) -> Result<Self> {
        Self::new(rate, seed, DropoutSite::ALL.to_vec())
    }

    pub fn is_active(&self, site: DropoutSite) -> bool {
        self.rate > 0.0 && self.sites.contains(&site)
    }

    /// `None` when the site is inactive.
    pub(crate) fn mask(&self, site: DropoutSite, rows: usize, cols: usize) -> Option<Array2<f64>> {
        if !self.is_active(site) {
            return None;
        }
        let keep = 1.0 - self.rate;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, site.label()));
        Some(Array2::from_shape_simple_fn((rows, cols), || {
            if rng.random::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        }))
    }
}
