//! Versioned little-endian model checkpoints.
//!
//! Layout (all integers unsigned little-endian, floats IEEE-754 binary64 LE):
//!
//! ```text
//! magic        8 bytes  "WNCSQNET"
//! version      u32      1
//! head kind    u8       0 plain, 1 dueling, 2 branching
//! input dim    u64
//! n_hidden     u32      followed by n_hidden × u64 layer widths
//! n_branches   u32      followed by n_branches × u64 branch sizes
//! n_params     u64      followed by n_params × f64 (canonical layer order,
//!                       each layer's weights row-major (in, out) then bias)
//! stats count  u64
//! stats dim    u64      followed by dim × f64 means, then dim × f64 M2 sums
//! rng seed     32 bytes ChaCha8 key
//! rng stream   u64
//! rng word pos u128
//! ```

use std::io::{Read, Write};
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use super::net::{Head, QNet};
use crate::env::RunningStats;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"WNCSQNET";
pub const VERSION: u32 = 1;

/// Everything needed to resume or evaluate a trained agent.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub net: QNet,
    pub stats: RunningStats,
    pub rng: ChaCha8Rng,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64s(out: &mut Vec<u8>, v: &[f64]) {
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION);
        out.push(self.net.head().code());
        put_u64(&mut out, self.net.input_dim() as u64);
        let hidden = self.net.hidden_dims();
        put_u32(&mut out, hidden.len() as u32);
        for h in hidden {
            put_u64(&mut out, h as u64);
        }
        let branches = self.net.head().branch_sizes();
        put_u32(&mut out, branches.len() as u32);
        for b in branches {
            put_u64(&mut out, b as u64);
        }
        let params = self.net.flat_params();
        put_u64(&mut out, params.len() as u64);
        put_f64s(&mut out, &params);
        let (count, mean, m2) = self.stats.raw_parts();
        put_u64(&mut out, count);
        put_u64(&mut out, mean.len() as u64);
        put_f64s(&mut out, mean);
        put_f64s(&mut out, m2);
        out.extend_from_slice(&self.rng.get_seed());
        put_u64(&mut out, self.rng.get_stream());
        out.extend_from_slice(&self.rng.get_word_pos().to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let code = r.take(1)?[0];
        let input = r.usize()?;
        let n_hidden = r.u32()? as usize;
        let hidden = (0..n_hidden).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
        let n_branches = r.u32()? as usize;
        let sizes = (0..n_branches).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
        let head = Head::from_code(code, sizes)?;
        // any rng works: every parameter is overwritten below
        let mut scratch = ChaCha8Rng::seed_from_u64(0);
        let mut net = QNet::new(input, &hidden, head, &mut scratch)
            .map_err(|e| Error::Checkpoint(format!("bad architecture: {e}")))?;
        let n_params = r.usize()?;
        let params = r.f64s(n_params)?;
        net.set_flat_params(&params)
            .map_err(|_| Error::Checkpoint(format!("expected {} parameters, got {n_params}", net.n_params())))?;
        let count = r.u64()?;
        let dim = r.usize()?;
        let mean = r.f64s(dim)?;
        let m2 = r.f64s(dim)?;
        let stats = RunningStats::from_raw_parts(count, mean, m2)?;
        let seed: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let stream = r.u64()?;
        let word_pos = u128::from_le_bytes(r.take(16)?.try_into().expect("16 bytes"));
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(stream);
        rng.set_word_pos(word_pos);
        Ok(Self { net, stats, rng })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut buf))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn usize(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| Error::Checkpoint(format!("size {v} out of range")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}
