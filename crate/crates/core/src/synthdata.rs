//! Synthetic monotone transduction task: each target token emits a run of
//! noisy copies of a token-specific prototype frame.

use std::io::{Read, Write};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::TargetSeq;
use crate::seeds::derive_seed;
use crate::views::FeatureSeq;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub vocab: usize,
    pub feat_dim: usize,
    pub frames_per_token: (usize, usize),
    pub noise_std: f64,
    pub len_range: (usize, usize),
    /// Seeds the prototype table.
    pub seed: u64,
}

impl Default for TaskSpec {
    fn default() -> Self {
        Self {
            vocab: 16,
            feat_dim: 12,
            frames_per_token: (2, 4),
            noise_std: 0.5,
            len_range: (3, 8),
            seed: 1,
        }
    }
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.vocab < 2 {
            return bad("task vocab must be >= 2");
        }
        if self.feat_dim == 0 {
            return bad("task feat_dim must be >= 1");
        }
        let (lo, hi) = self.frames_per_token;
        if lo == 0 || lo > hi {
            return bad("frames_per_token must satisfy 1 <= min <= max");
        }
        if self.len_range.0 > self.len_range.1 {
            return bad("len_range must satisfy min <= max");
        }
        if self.len_range.1 == 0 {
            return bad("len_range max must be >= 1");
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad("noise_std must be finite and >= 0");
        }
        Ok(())
    }

    pub fn mean_frames_per_token(&self) -> f64 {
        (self.frames_per_token.0 + self.frames_per_token.1) as f64 / 2.0
    }

    /// Row `k - 1` is the prototype of token `k`.
    pub fn prototypes(&self) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, "prototypes"));
        Array2::from_shape_simple_fn((self.vocab, self.feat_dim), || {
            StandardNormal.sample(&mut rng)
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub features: FeatureSeq,
    pub target: TargetSeq,
}

/// Draws one example. Adjacent target tokens always differ, so token
/// boundaries stay visible in the features.
pub fn generate_example<R: Rng>(
    spec: &TaskSpec,
    prototypes: &Array2<f64>,
    rng: &mut R,
    id: impl Into<String>,
) -> Result<Example> {
    let u_len = rng.random_range(spec.len_range.0..=spec.len_range.1);
    let mut tokens = Vec::with_capacity(u_len);
    for i in 0..u_len {
        let tok = if i == 0 {
            rng.random_range(1..=spec.vocab)
        } else {
            // uniform over the vocab minus the previous token
            let prev = tokens[i - 1];
            let k = rng.random_range(1..spec.vocab);
            if k >= prev {
                k + 1
            } else {
                k
            }
        };
        tokens.push(tok);
    }
    let runs: Vec<usize> = tokens
        .iter()
        .map(|_| rng.random_range(spec.frames_per_token.0..=spec.frames_per_token.1))
        .collect();
    let t_len: usize = runs.iter().sum::<usize>().max(1);
    let noise = Normal::new(0.0, spec.noise_std).map_err(|e| Error::Config(e.to_string()))?;
    let mut frames = Array2::zeros((t_len, spec.feat_dim));
    let mut row = 0;
    for (&tok, &n) in tokens.iter().zip(&runs) {
        for _ in 0..n {
            for f in 0..spec.feat_dim {
                let eps = if spec.noise_std > 0.0 {
                    noise.sample(rng)
                } else {
                    0.0
                };
                frames[[row, f]] = prototypes[[tok - 1, f]] + eps;
            }
            row += 1;
        }
    }
    // an empty target still needs one frame; it carries pure noise
    if tokens.is_empty() && spec.noise_std > 0.0 {
        frames.iter_mut().for_each(|v| *v = noise.sample(rng));
    }
    Ok(Example {
        features: FeatureSeq::new(frames, id)?,
        target: TargetSeq::new(tokens, spec.vocab)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: TaskSpec,
    pub train: Vec<Example>,
    pub eval: Vec<Example>,
}

/// Train and eval draw from disjoint seed streams; prototypes are shared.
pub fn generate_split(
    spec: &TaskSpec,
    n_train: usize,
    n_eval: usize,
    seed: u64,
) -> Result<Dataset> {
    spec.validate()?;
    if n_train == 0 || n_eval == 0 {
        return Err(Error::Config("split sizes must be >= 1".into()));
    }
    let protos = spec.prototypes();
    let draw = |label: &str, n: usize| -> Result<Vec<Example>> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, label));
        (0..n)
            .map(|i| generate_example(spec, &protos, &mut rng, format!("{label}-{i:05}")))
            .collect()
    };
    Ok(Dataset {
        spec: spec.clone(),
        train: draw("train", n_train)?,
        eval: draw("eval", n_eval)?,
    })
}

const DATA_MAGIC: &[u8; 8] = b"TCRDATA\0";
const DATA_VERSION: u32 = 1;

impl Dataset {
    /// Binary layout, little endian: magic, version u32, spec JSON (u32
    /// length, then bytes), V u32, F u32, n_train u32, n_eval u32, then per
    /// example: id (u32 length, then bytes), T u32, U u32, T*F f64 features
    /// (row major), U u32 tokens.
    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(DATA_MAGIC)?;
        w.write_all(&DATA_VERSION.to_le_bytes())?;
        let spec = serde_json::to_vec(&self.spec).map_err(std::io::Error::other)?;
        write_u32(&mut w, spec.len())?;
        w.write_all(&spec)?;
        write_u32(&mut w, self.spec.vocab)?;
        write_u32(&mut w, self.spec.feat_dim)?;
        write_u32(&mut w, self.train.len())?;
        write_u32(&mut w, self.eval.len())?;
        for ex in self.train.iter().chain(&self.eval) {
            write_u32(&mut w, ex.features.id.len())?;
            w.write_all(ex.features.id.as_bytes())?;
            write_u32(&mut w, ex.features.t_len())?;
            write_u32(&mut w, ex.target.len())?;
            for v in ex.features.frames().iter() {
                w.write_all(&v.to_le_bytes())?;
            }
            for &k in ex.target.tokens() {
                write_u32(&mut w, k)?;
            }
        }
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let bad = |m: &str| Error::format("dataset", m);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)
            .map_err(|_| bad("truncated header"))?;
        if &magic != DATA_MAGIC {
            return Err(bad("bad magic"));
        }
        let version = read_u32(&mut r)?;
        if version != DATA_VERSION as usize {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let n = read_u32(&mut r)?;
        let mut spec = vec![0u8; n];
        r.read_exact(&mut spec).map_err(|_| bad("truncated spec"))?;
        let spec: TaskSpec = serde_json::from_slice(&spec).map_err(|e| bad(&e.to_string()))?;
        let (v, f) = (read_u32(&mut r)?, read_u32(&mut r)?);
        if v != spec.vocab || f != spec.feat_dim {
            return Err(bad("header dims disagree with spec"));
        }
        let (n_train, n_eval) = (read_u32(&mut r)?, read_u32(&mut r)?);
        let mut read_example = || -> Result<Example> {
            let n = read_u32(&mut r)?;
            let mut id = vec![0u8; n];
            r.read_exact(&mut id).map_err(|_| bad("truncated id"))?;
            let id = String::from_utf8(id).map_err(|_| bad("id is not utf-8"))?;
            let (t, u) = (read_u32(&mut r)?, read_u32(&mut r)?);
            let mut frames = Array2::zeros((t, f));
            for x in frames.iter_mut() {
                *x = read_f64(&mut r)?;
            }
            let tokens = (0..u)
                .map(|_| read_u32(&mut r))
                .collect::<Result<Vec<_>>>()?;
            Ok(Example {
                features: FeatureSeq::new(frames, id)?,
                target: TargetSeq::new(tokens, v)?,
            })
        };
        let train = (0..n_train)
            .map(|_| read_example())
            .collect::<Result<Vec<_>>>()?;
        let eval = (0..n_eval)
            .map(|_| read_example())
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { spec, train, eval })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(std::io::BufReader::new(file))
    }
}

fn write_u32<W: Write>(w: &mut W, x: usize) -> std::io::Result<()> {
    let x = u32::try_from(x).map_err(std::io::Error::other)?;
    w.write_all(&x.to_le_bytes())
}

fn read_u32<R: Read>(r: &mut R) -> Result<usize> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| Error::format("dataset", "truncated record"))?;
    Ok(u32::from_le_bytes(b) as usize)
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)
        .map_err(|_| Error::format("dataset", "truncated record"))?;
    Ok(f64::from_le_bytes(b))
}
