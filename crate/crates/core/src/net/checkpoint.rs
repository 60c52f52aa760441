//! Checkpoint container.
//!
//! Little-endian layout:
//!
//! ```text
//! magic        b"RDCKPT\0\x01"
//! version      u32                  (= 1)
//! fingerprint  u64                  FNV-1a of the network description
//! net config   u32 base, u32 levels, u32 mults[levels], u32 blocks[levels], u32 temb
//! schedule     u8 kind (0 cosine, 1 linear), u32 T_train, u64 fingerprint
//! step         u64
//! rng          [u8; 32] seed, u64 stream, u128 word position
//! tensors      u32 count, then per tensor:
//!              u32 name length, name (UTF-8), u32 dims[4], f32 values[prod(dims)]
//! ```
//!
//! Tensor names are `param/<name>`, `adam.m/<name>` and `adam.v/<name>`.

use std::fs;
use std::path::Path;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::tensor::Tensor;
use super::unet::{NetConfig, ParamSet, UNet};
use crate::diffusion::{NoiseSchedule, ScheduleKind};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"RDCKPT\0\x01";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor<f32>>,
    pub v: Vec<Tensor<f32>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub net_config: NetConfig,
    pub params: ParamSet<f32>,
    pub schedule_kind: ScheduleKind,
    pub schedule_t_train: usize,
    pub schedule_fingerprint: u64,
    pub step: u64,
    pub rng: RngState,
    pub adam: Option<AdamState>,
    /// Moving-average weights; preferred over `params` for inference.
    pub ema: Option<ParamSet<f32>>,
}

impl Checkpoint {
    /// The inference network, paired with the stored schedule.
    pub fn net(&self) -> Result<UNet<f32>> {
        let params = self.ema.as_ref().unwrap_or(&self.params).clone();
        Ok(UNet::from_params(self.net_config.clone(), params)?.with_noise_skip(&self.schedule()?))
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        let s = NoiseSchedule::new(self.schedule_t_train, self.schedule_kind)?;
        if s.fingerprint() != self.schedule_fingerprint {
            return Err(Error::Checkpoint(format!(
                "schedule fingerprint {:016x} does not match stored {:016x}",
                s.fingerprint(),
                self.schedule_fingerprint
            )));
        }
        Ok(s)
    }

    /// Drops optimizer state, keeping what inference needs.
    pub fn without_optimizer(mut self) -> Self {
        self.adam = None;
        self
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION);
        out.extend_from_slice(&self.net_config.fingerprint().to_le_bytes());
        let c = &self.net_config;
        put_u32(&mut out, c.base_channels as u32);
        put_u32(&mut out, c.levels() as u32);
        for &m in &c.channel_mults {
            put_u32(&mut out, m as u32);
        }
        for &b in &c.blocks {
            put_u32(&mut out, b as u32);
        }
        put_u32(&mut out, c.temb_dim as u32);
        out.push(match self.schedule_kind {
            ScheduleKind::Cosine => 0,
            ScheduleKind::Linear => 1,
        });
        put_u32(&mut out, self.schedule_t_train as u32);
        out.extend_from_slice(&self.schedule_fingerprint.to_le_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&self.rng.seed);
        out.extend_from_slice(&self.rng.stream.to_le_bytes());
        out.extend_from_slice(&self.rng.word_pos.to_le_bytes());

        let mut tensors: Vec<(String, &Tensor<f32>)> = self
            .params
            .names
            .iter()
            .zip(&self.params.tensors)
            .map(|(n, t)| (format!("param/{n}"), t))
            .collect();
        if let Some(ema) = &self.ema {
            for (n, t) in ema.names.iter().zip(&ema.tensors) {
                tensors.push((format!("ema/{n}"), t));
            }
        }
        if let Some(adam) = &self.adam {
            for (prefix, bufs) in [("adam.m", &adam.m), ("adam.v", &adam.v)] {
                for (n, t) in self.params.names.iter().zip(bufs) {
                    tensors.push((format!("{prefix}/{n}"), t));
                }
            }
        }
        put_u32(&mut out, tensors.len() as u32);
        for (name, t) in tensors {
            put_u32(&mut out, name.len() as u32);
            out.extend_from_slice(name.as_bytes());
            for d in t.shape {
                put_u32(&mut out, d as u32);
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(r.fail("bad magic bytes"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version} (expected {VERSION})"
            )));
        }
        let stored_fp = r.u64()?;
        let base = r.u32()? as usize;
        let levels = r.u32()? as usize;
        if levels == 0 || levels > 16 {
            return Err(r.fail("implausible level count"));
        }
        let mults = (0..levels).map(|_| r.u32().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
        let blocks = (0..levels).map(|_| r.u32().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
        let temb = r.u32()? as usize;
        let net_config = NetConfig {
            base_channels: base,
            channel_mults: mults,
            blocks,
            temb_dim: temb,
        };
        net_config.validate()?;
        if net_config.fingerprint() != stored_fp {
            return Err(Error::Checkpoint(format!(
                "config fingerprint mismatch: header {stored_fp:016x}, stored config {:016x}",
                net_config.fingerprint()
            )));
        }
        let schedule_kind = match r.take(1)?[0] {
            0 => ScheduleKind::Cosine,
            1 => ScheduleKind::Linear,
            k => return Err(r.fail(&format!("unknown schedule kind {k}"))),
        };
        let schedule_t_train = r.u32()? as usize;
        let schedule_fingerprint = r.u64()?;
        let step = r.u64()?;
        let seed: [u8; 32] = r.take(32)?.try_into().unwrap();
        let stream = r.u64()?;
        let word_pos = u128::from_le_bytes(r.take(16)?.try_into().unwrap());

        let count = r.u32()? as usize;
        let mut named = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| r.fail("tensor name is not UTF-8"))?;
            let mut shape = [0usize; 4];
            for d in &mut shape {
                *d = r.u32()? as usize;
            }
            let n = shape
                .iter()
                .try_fold(4usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| r.fail("tensor too large"))?;
            let raw = r.take(n)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            named.push((name, Tensor::from_vec(shape, data)));
        }
        if r.pos != bytes.len() {
            return Err(r.fail("trailing bytes after tensors"));
        }

        let take_group = |prefix: &str| -> (Vec<String>, Vec<Tensor<f32>>) {
            named
                .iter()
                .filter_map(|(n, t)| n.strip_prefix(prefix).map(|s| (s.to_string(), t.clone())))
                .unzip()
        };
        let (names, tensors) = take_group("param/");
        let params = ParamSet { names, tensors };
        // validates names, shapes and finiteness against the architecture
        UNet::from_params(net_config.clone(), params.clone())?;
        let (en, e) = take_group("ema/");
        let ema = if en.is_empty() {
            None
        } else {
            let set = ParamSet { names: en, tensors: e };
            UNet::from_params(net_config.clone(), set.clone())?;
            Some(set)
        };
        let (mn, m) = take_group("adam.m/");
        let (vn, v) = take_group("adam.v/");
        let adam = match (m.is_empty(), v.is_empty()) {
            (true, true) => None,
            (false, false) if mn == params.names && vn == params.names => Some(AdamState { m, v }),
            _ => return Err(Error::Checkpoint("optimizer state does not match parameters".into())),
        };
        Ok(Self {
            net_config,
            params,
            schedule_kind,
            schedule_t_train,
            schedule_fingerprint,
            step,
            rng: RngState { seed, stream, word_pos },
            adam,
            ema,
        })
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn fail(&self, message: &str) -> Error {
        Error::Format {
            what: "checkpoint",
            message: format!("{message} (at byte {})", self.pos),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.fail(&format!("truncated: needed {n} more bytes")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    fs::write(path, ckpt.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

/// Loads and refuses checkpoints built for a different architecture.
pub fn load_checkpoint_expecting(path: &Path, expected: &NetConfig) -> Result<Checkpoint> {
    let ckpt = load_checkpoint(path)?;
    let (want, got) = (expected.fingerprint(), ckpt.net_config.fingerprint());
    if want != got {
        return Err(Error::Checkpoint(format!(
            "config fingerprint mismatch: expected {want:016x} ({}), file has {got:016x} ({})",
            expected.describe(),
            ckpt.net_config.describe()
        )));
    }
    Ok(ckpt)
}
