use std::io::{Read, Write};
use std::path::Path;

use super::optim::OptimizerState;
use super::params::{ModelDims, TransducerParams};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"TCRCKPT\0";
const VERSION: u32 = 1;

/// Parameters plus optimizer state.
///
/// Binary layout, little endian: magic, version u32, dims JSON (u32 length +
/// bytes), optimizer step u64, then params, first moments and second moments,
/// each as every array in `PARAM_NAMES` order as raw f64.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: TransducerParams,
    pub optimizer: OptimizerState,
}

impl Checkpoint {
    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        let dims = serde_json::to_vec(&self.params.dims).map_err(std::io::Error::other)?;
        w.write_all(&(dims.len() as u32).to_le_bytes())?;
        w.write_all(&dims)?;
        w.write_all(&self.optimizer.step.to_le_bytes())?;
        for p in [&self.params, &self.optimizer.m, &self.optimizer.v] {
            for s in p.slices() {
                for x in s {
                    w.write_all(&x.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let bad = |m: &str| Error::format("checkpoint", m);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)
            .map_err(|_| bad("truncated header"))?;
        if &magic != MAGIC {
            return Err(bad("bad magic"));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4).map_err(|_| bad("truncated header"))?;
        if u32::from_le_bytes(b4) != VERSION {
            return Err(bad("unsupported version"));
        }
        r.read_exact(&mut b4).map_err(|_| bad("truncated header"))?;
        let mut dims = vec![0u8; u32::from_le_bytes(b4) as usize];
        r.read_exact(&mut dims).map_err(|_| bad("truncated dims"))?;
        let dims: ModelDims = serde_json::from_slice(&dims).map_err(|e| bad(&e.to_string()))?;
        dims.validate()?;
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8).map_err(|_| bad("truncated header"))?;
        let step = u64::from_le_bytes(b8);
        let mut read_params = || -> Result<TransducerParams> {
            let mut p = TransducerParams::zeros(dims);
            for s in p.slices_mut() {
                for x in s.iter_mut() {
                    r.read_exact(&mut b8).map_err(|_| bad("truncated arrays"))?;
                    *x = f64::from_le_bytes(b8);
                }
            }
            Ok(p)
        };
        let params = read_params()?;
        let m = read_params()?;
        let v = read_params()?;
        if r.read(&mut b8).map_err(|_| bad("read failed"))? != 0 {
            return Err(bad("trailing bytes"));
        }
        Ok(Self {
            params,
            optimizer: OptimizerState { step, m, v },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write(&mut buf).map_err(|e| Error::io(path, e))?;
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::read(bytes.as_slice())
    }
}
