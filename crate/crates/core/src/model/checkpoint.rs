//! Binary checkpoint format.
//!
//! ```text
//! magic        b"SPNT"
//! version      u32 = 1
//! config       depth u32, base_channels u32, in_channels u32,
//!              pyramid_levels u32, share_decoder u8, side_output u8
//!              (0 = sdm, 1 = conv1x1), use_batchnorm u8
//! count        u32
//! headers      per tensor: name_len u16, UTF-8 name, ndim u8, dims u32 * ndim
//! payload      f32 values of every tensor, concatenated in header order
//! ```
//!
//! All integers and floats are little-endian. Tensors are always stored in
//! 32-bit precision.

use std::io::{Read, Write};
use std::path::Path;

use super::config::{SideOutput, SpnetConfig};
use super::params::ParameterStore;
use crate::error::{Error, Result};
use crate::tensor::Real;

pub const MAGIC: &[u8; 4] = b"SPNT";
pub const VERSION: u32 = 1;

fn u32_of(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{what} {v} exceeds u32")))
}

pub fn write_checkpoint<T: Real>(store: &ParameterStore<T>, out: &mut impl Write) -> Result<()> {
    let c = store.config();
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    for v in [c.depth, c.base_channels, c.in_channels, c.pyramid_levels] {
        buf.extend_from_slice(&u32_of(v, "config field")?.to_le_bytes());
    }
    buf.push(c.share_decoder as u8);
    buf.push(match c.side_output {
        SideOutput::Sdm => 0,
        SideOutput::Conv1x1 => 1,
    });
    buf.push(c.use_batchnorm as u8);
    buf.extend_from_slice(&u32_of(store.len(), "entry count")?.to_le_bytes());
    for (name, p) in store.iter() {
        let len = u16::try_from(name.len())
            .map_err(|_| Error::Checkpoint(format!("name too long: {name}")))?;
        buf.extend_from_slice(&len.to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        let ndim = u8::try_from(p.dims.len())
            .map_err(|_| Error::Checkpoint(format!("too many dims for {name}")))?;
        buf.push(ndim);
        for &d in &p.dims {
            buf.extend_from_slice(&u32_of(d, "dim")?.to_le_bytes());
        }
    }
    for (_, p) in store.iter() {
        for v in &p.data {
            buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    out.write_all(&buf)
        .map_err(|e| Error::Checkpoint(format!("write failed: {e}")))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("unexpected end of file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(
            self.take(2)?.try_into().expect("2 bytes"),
        ))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn flag(&mut self, what: &str) -> Result<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            v => Err(Error::Checkpoint(format!("invalid {what} flag {v}"))),
        }
    }
}

pub fn read_checkpoint(input: &mut impl Read) -> Result<ParameterStore<f32>> {
    let mut bytes = Vec::new();
    input
        .read_to_end(&mut bytes)
        .map_err(|e| Error::Checkpoint(format!("read failed: {e}")))?;
    let mut cur = Cursor {
        bytes: &bytes,
        pos: 0,
    };
    if cur.take(4)? != MAGIC {
        return Err(Error::Checkpoint(
            "bad magic, not an SPNT checkpoint".into(),
        ));
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let depth = cur.u32()? as usize;
    let base_channels = cur.u32()? as usize;
    let in_channels = cur.u32()? as usize;
    let pyramid_levels = cur.u32()? as usize;
    let share_decoder = cur.flag("share_decoder")?;
    let side_output = match cur.u8()? {
        0 => SideOutput::Sdm,
        1 => SideOutput::Conv1x1,
        v => return Err(Error::Checkpoint(format!("invalid side_output {v}"))),
    };
    let use_batchnorm = cur.flag("use_batchnorm")?;
    let config = SpnetConfig {
        depth,
        base_channels,
        in_channels,
        pyramid_levels,
        share_decoder,
        side_output,
        use_batchnorm,
    };
    config
        .validate()
        .map_err(|e| Error::Checkpoint(format!("stored configuration is invalid: {e}")))?;

    let count = cur.u32()? as usize;
    let mut headers = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = cur.u16()? as usize;
        let name = std::str::from_utf8(cur.take(len)?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let ndim = cur.u8()? as usize;
        let dims = (0..ndim)
            .map(|_| cur.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        headers.push((name, dims));
    }
    let mut raw = Vec::with_capacity(headers.len());
    for (name, dims) in headers {
        let n: usize = dims.iter().product();
        let bytes = cur.take(n * 4)?;
        let data = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        raw.push((name, dims, data));
    }
    if cur.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes",
            bytes.len() - cur.pos
        )));
    }
    ParameterStore::from_entries(&config, raw)
}

pub fn save_checkpoint<T: Real>(store: &ParameterStore<T>, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(store, &mut f)
}

pub fn load_checkpoint(path: &Path) -> Result<ParameterStore<f32>> {
    let mut f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&mut f)
}
