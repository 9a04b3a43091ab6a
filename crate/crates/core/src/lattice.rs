//! Emission lattices and target sequences, plus their on-disk forms.
//!
//! A lattice holds `T x (U+1)` cells; each cell is a normalized log-probability
//! distribution over `V+1` outputs where index [`BLANK`] is the blank symbol
//! and `1..=V` are vocabulary tokens.
//!
//! Text form (indices are 0-based, values use Rust's shortest round-trip
//! float formatting, `-inf` for exact zero):
//!
//! ```text
//! # free-form comment lines start with '#'
//! T U V
//! target y_1 ... y_U          (optional)
//! t u logp_0 logp_1 ... logp_V   (one line per cell, T*(U+1) lines)
//! ```
//!
//! Binary form: magic `TCRLAT01`, then `T`, `U`, `V` as little-endian `u32`,
//! then `T*(U+1)*(V+1)` little-endian `f64` in row-major order.

use std::io::{BufRead, Write};

use ndarray::{Array3, ArrayView1};

use crate::error::{Error, Result};
use crate::logspace::log_sum_exp;

pub const BLANK: usize = 0;

const NORMALIZATION_TOL: f64 = 1e-9;
const BINARY_MAGIC: &[u8; 8] = b"TCRLAT01";

/// Per-cell output distributions of a transducer joiner, in log space.
#[derive(Debug, Clone, PartialEq)]
pub struct EmissionLattice {
    logp: Array3<f64>,
}

impl EmissionLattice {
    /// Wraps an array of shape `(T, U+1, V+1)`, checking that every cell is a
    /// normalized distribution.
    pub fn from_log_probs(logp: Array3<f64>) -> Result<Self> {
        let (t, u1, v1) = logp.dim();
        if t == 0 || u1 == 0 || v1 < 2 {
            return Err(Error::shape(format!(
                "lattice needs T >= 1, U >= 0, V >= 1; got shape ({t}, {u1}, {v1})"
            )));
        }
        for ((ti, ui, k), &x) in logp.indexed_iter() {
            if x.is_nan() || x > 0.0 {
                return Err(Error::invalid(format!(
                    "logp[{ti},{ui},{k}] = {x} is not a log-probability"
                )));
            }
        }
        for ti in 0..t {
            for ui in 0..u1 {
                let row = logp.slice(ndarray::s![ti, ui, ..]);
                let z = log_sum_exp(row.as_slice().expect("standard layout"));
                if z.is_nan() || z.abs() > NORMALIZATION_TOL {
                    return Err(Error::invalid(format!(
                        "cell ({ti},{ui}) is not normalized: logsumexp = {z}"
                    )));
                }
            }
        }
        Ok(Self {
            logp: logp.as_standard_layout().into_owned(),
        })
    }

    /// Normalizes each cell of arbitrary finite scores with a log-softmax.
    pub fn from_logits(mut logits: Array3<f64>) -> Result<Self> {
        for mut row in logits.lanes_mut(ndarray::Axis(2)) {
            let z = log_sum_exp(&row.to_vec());
            row.mapv_inplace(|x| x - z);
        }
        Self::from_log_probs(logits)
    }

    /// Builds a lattice from plain probabilities (each cell must sum to one).
    pub fn from_probs(probs: Array3<f64>) -> Result<Self> {
        Self::from_log_probs(probs.mapv(f64::ln))
    }

    /// Every cell uniform over `V+1` outputs.
    pub fn uniform(t: usize, u: usize, v: usize) -> Self {
        let lp = -((v + 1) as f64).ln();
        Self {
            logp: Array3::from_elem((t, u + 1, v + 1), lp),
        }
    }

    pub fn t_len(&self) -> usize {
        self.logp.dim().0
    }

    /// Number of target tokens `U` (the grid has `U+1` rows).
    pub fn u_len(&self) -> usize {
        self.logp.dim().1 - 1
    }

    /// Vocabulary size without blank.
    pub fn vocab(&self) -> usize {
        self.logp.dim().2 - 1
    }

    pub fn log_probs(&self) -> &Array3<f64> {
        &self.logp
    }

    pub fn into_log_probs(self) -> Array3<f64> {
        self.logp
    }

    #[inline]
    pub fn lp(&self, t: usize, u: usize, k: usize) -> f64 {
        self.logp[[t, u, k]]
    }

    pub fn cell(&self, t: usize, u: usize) -> ArrayView1<'_, f64> {
        self.logp.slice(ndarray::s![t, u, ..])
    }

    /// Same `(T, U, V)` shape.
    pub fn same_shape(&self, other: &EmissionLattice) -> bool {
        self.logp.dim() == other.logp.dim()
    }

    pub fn write_text<W: Write>(
        &self,
        mut w: W,
        target: Option<&TargetSeq>,
        comments: &[String],
    ) -> std::io::Result<()> {
        writeln!(w, "# transducer emission lattice v1")?;
        for c in comments {
            writeln!(w, "# {c}")?;
        }
        writeln!(w, "{} {} {}", self.t_len(), self.u_len(), self.vocab())?;
        if let Some(y) = target {
            write!(w, "target")?;
            for tok in y.tokens() {
                write!(w, " {tok}")?;
            }
            writeln!(w)?;
        }
        for t in 0..self.t_len() {
            for u in 0..=self.u_len() {
                write!(w, "{t} {u}")?;
                for x in self.cell(t, u) {
                    write!(w, " {x:?}")?;
                }
                writeln!(w)?;
            }
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<(Self, Option<TargetSeq>)> {
        let bad = |m: String| Error::format("lattice text", m);
        let mut lines = r
            .lines()
            .map(|l| l.map_err(|e| bad(e.to_string())))
            .filter(|l| match l {
                Ok(s) => {
                    let s = s.trim();
                    !s.is_empty() && !s.starts_with('#')
                }
                Err(_) => true,
            });
        let header = lines.next().ok_or_else(|| bad("missing header".into()))??;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|s| s.parse().map_err(|e| bad(format!("header: {e}"))))
            .collect::<Result<_>>()?;
        let [t, u, v] = dims[..] else {
            return Err(bad(format!("header needs 3 fields, got {header:?}")));
        };
        let mut logp = Array3::from_elem((t, u + 1, v + 1), f64::NAN);
        let mut seen = vec![false; t * (u + 1)];
        let mut target = None;
        for line in lines {
            let line = line?;
            let mut fields = line.split_whitespace();
            let first = fields.next().unwrap_or_default();
            if first == "target" {
                let toks = fields
                    .map(|s| s.parse().map_err(|e| bad(format!("target: {e}"))))
                    .collect::<Result<Vec<usize>>>()?;
                target = Some(TargetSeq::new(toks, v)?);
                continue;
            }
            let ti: usize = first.parse().map_err(|e| bad(format!("t: {e}")))?;
            let ui: usize = fields
                .next()
                .ok_or_else(|| bad("missing u".into()))?
                .parse()
                .map_err(|e| bad(format!("u: {e}")))?;
            if ti >= t || ui > u {
                return Err(bad(format!("cell ({ti},{ui}) outside ({t},{u})")));
            }
            let vals = fields
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|e| bad(format!("value {s:?}: {e}")))
                })
                .collect::<Result<Vec<_>>>()?;
            if vals.len() != v + 1 {
                return Err(bad(format!("cell ({ti},{ui}) has {} values", vals.len())));
            }
            let idx = ti * (u + 1) + ui;
            if seen[idx] {
                return Err(bad(format!("duplicate cell ({ti},{ui})")));
            }
            seen[idx] = true;
            for (k, x) in vals.into_iter().enumerate() {
                logp[[ti, ui, k]] = x;
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(bad(format!(
                "missing cell ({},{})",
                missing / (u + 1),
                missing % (u + 1)
            )));
        }
        if let Some(y) = &target {
            if y.len() != u {
                return Err(bad(format!(
                    "target has {} tokens, header says {u}",
                    y.len()
                )));
            }
        }
        Ok((Self::from_log_probs(logp)?, target))
    }

    pub fn write_binary<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(BINARY_MAGIC)?;
        for d in [self.t_len(), self.u_len(), self.vocab()] {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for x in self.logp.iter() {
            w.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: std::io::Read>(mut r: R) -> Result<Self> {
        let bad = |m: String| Error::format("lattice binary", m);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|e| bad(e.to_string()))?;
        if &magic != BINARY_MAGIC {
            return Err(bad("bad magic".into()));
        }
        let mut dims = [0usize; 3];
        for d in dims.iter_mut() {
            let mut b = [0u8; 4];
            r.read_exact(&mut b).map_err(|e| bad(e.to_string()))?;
            *d = u32::from_le_bytes(b) as usize;
        }
        let [t, u, v] = dims;
        let n = t * (u + 1) * (v + 1);
        let mut data = Vec::with_capacity(n);
        let mut b = [0u8; 8];
        for _ in 0..n {
            r.read_exact(&mut b).map_err(|e| bad(e.to_string()))?;
            data.push(f64::from_le_bytes(b));
        }
        let logp =
            Array3::from_shape_vec((t, u + 1, v + 1), data).map_err(|e| bad(e.to_string()))?;
        Self::from_log_probs(logp)
    }
}

/// Target token sequence `y_1..y_U`; tokens live in `1..=V`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TargetSeq(Vec<usize>);

impl TargetSeq {
    pub fn new(tokens: Vec<usize>, vocab: usize) -> Result<Self> {
        if let Some(&bad) = tokens.iter().find(|&&k| k == BLANK || k > vocab) {
            return Err(Error::invalid(format!(
                "target token {bad} outside 1..={vocab}"
            )));
        }
        Ok(Self(tokens))
    }

    pub fn tokens(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Token emitted when leaving row `u`, i.e. `y_{u+1}`.
    #[inline]
    pub fn next_token(&self, u: usize) -> Option<usize> {
        self.0.get(u).copied()
    }

    pub(crate) fn check_against(&self, lattice: &EmissionLattice) -> Result<()> {
        if self.len() != lattice.u_len() {
            return Err(Error::shape(format!(
                "target has {} tokens but lattice has U = {}",
                self.len(),
                lattice.u_len()
            )));
        }
        if let Some(&bad) = self.0.iter().find(|&&k| k > lattice.vocab()) {
            return Err(Error::invalid(format!(
                "target token {bad} exceeds lattice vocabulary {}",
                lattice.vocab()
            )));
        }
        Ok(())
    }
}
