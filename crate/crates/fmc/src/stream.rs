//! Compressed-stream container and its binary format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "FMCZ" | version u16 = 1
//! channels u32 | height u32 | width u32 | m u8 | level u8 | per-block-scale u8
//! per channel:
//!   f_min f32, f_max f32            -- only when per-block-scale = 0
//!   per block (raster order):
//!     index u64
//!     f_min f32, f_max f32          -- only when per-block-scale = 1
//!     payload: popcount(index) x i16
//! ```
//!
//! Ratio accounting charges the block records (index, per-block scale,
//! payload words); the 21-byte container header and the per-channel scale
//! prologue are container overhead, reported separately.

use crate::quant::{GemmScale, CUSTOM_TABLE_LEVEL};
use crate::sparse::{EncodedBlock, IndexMatrix};
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"FMCZ";
pub const VERSION: u16 = 1;
/// Stored payload word width in bits.
pub const PAYLOAD_BITS: u64 = 16;
/// Index matrix width in bits.
pub const INDEX_BITS: u64 = 64;
/// One scale record (two f32) in bits.
pub const SCALE_BITS: u64 = 64;
/// Fixed container header: magic, version, dims, m, level, flag.
pub const HEADER_BYTES: u64 = 21;

/// A compressed feature map: dimensions, codec parameters, and the encoded
/// blocks in channel-major raster order.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedStream {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub m: u8,
    pub level: u8,
    pub per_block_scale: bool,
    /// One scale per channel when `per_block_scale` is off.
    pub channel_scales: Vec<GemmScale>,
    pub blocks: Vec<EncodedBlock>,
}

impl EncodedStream {
    pub fn blocks_per_channel(&self) -> usize {
        self.height.div_ceil(8) * self.width.div_ceil(8)
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn validate(&self) -> Result<()> {
        let expect = self.channels * self.blocks_per_channel();
        if self.blocks.len() != expect {
            return Err(Error::MalformedStream(format!(
                "{}x{}x{} stream needs {} blocks, holds {}",
                self.channels,
                self.height,
                self.width,
                expect,
                self.blocks.len()
            )));
        }
        if !self.per_block_scale && self.channel_scales.len() != self.channels {
            return Err(Error::MalformedStream(format!(
                "per-channel mode needs {} scales, holds {}",
                self.channels,
                self.channel_scales.len()
            )));
        }
        for (n, b) in self.blocks.iter().enumerate() {
            if b.payload.len() != b.index.popcount() as usize {
                return Err(Error::MalformedStream(format!(
                    "block {n}: payload {} vs popcount {}",
                    b.payload.len(),
                    b.index.popcount()
                )));
            }
        }
        Ok(())
    }

    /// Bits of the source tensor at the given storage word width.
    pub fn origin_bits(&self, word_bits: u64) -> u64 {
        (self.channels * self.height * self.width) as u64 * word_bits
    }

    /// Bits of the compressed block records: index, per-block scale when
    /// enabled, and 16-bit payload words.
    pub fn data_bits(&self) -> u64 {
        let scale = if self.per_block_scale { SCALE_BITS } else { 0 };
        self.blocks
            .iter()
            .map(|b| INDEX_BITS + scale + PAYLOAD_BITS * u64::from(b.index.popcount()))
            .sum()
    }

    /// Same accounting with payload words at the logical grid width `m`
    /// instead of the 16-bit storage word.
    pub fn logical_bits(&self) -> u64 {
        let scale = if self.per_block_scale { SCALE_BITS } else { 0 };
        self.blocks
            .iter()
            .map(|b| INDEX_BITS + scale + u64::from(self.m) * u64::from(b.index.popcount()))
            .sum()
    }

    /// Compressed size over origin size; lower is better.
    pub fn compression_ratio(&self, word_bits: u64) -> f64 {
        self.data_bits() as f64 / self.origin_bits(word_bits) as f64
    }

    /// Container bytes that are not block records: header plus the
    /// per-channel scale prologue.
    pub fn container_overhead_bytes(&self) -> u64 {
        let scales = if self.per_block_scale {
            0
        } else {
            8 * self.channels as u64
        };
        HEADER_BYTES + scales
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(
            (self.container_overhead_bytes() + self.data_bits() / 8) as usize,
        );
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.channels as u32).to_le_bytes());
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.push(self.m);
        out.push(self.level);
        out.push(u8::from(self.per_block_scale));
        let bpc = self.blocks_per_channel();
        for c in 0..self.channels {
            if !self.per_block_scale {
                let s = &self.channel_scales[c];
                out.extend_from_slice(&s.f_min.to_le_bytes());
                out.extend_from_slice(&s.f_max.to_le_bytes());
            }
            for b in &self.blocks[c * bpc..(c + 1) * bpc] {
                out.extend_from_slice(&b.index.0.to_le_bytes());
                if self.per_block_scale {
                    out.extend_from_slice(&b.scale.f_min.to_le_bytes());
                    out.extend_from_slice(&b.scale.f_max.to_le_bytes());
                }
                for v in &b.payload {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4)?;
        if magic != MAGIC {
            return Err(Error::MalformedStream(format!(
                "bad magic {:02x?}, expected {MAGIC:02x?}",
                magic
            )));
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(Error::MalformedStream(format!(
                "unsupported version {version}"
            )));
        }
        let channels = r.u32()? as usize;
        let height = r.u32()? as usize;
        let width = r.u32()? as usize;
        let m = r.u8()?;
        let level = r.u8()?;
        let per_block_scale = match r.u8()? {
            0 => false,
            1 => true,
            other => {
                return Err(Error::MalformedStream(format!(
                    "bad per-block-scale flag {other}"
                )))
            }
        };
        if !(2..=15).contains(&m) {
            return Err(Error::MalformedStream(format!("bad grid width m={m}")));
        }
        if level > 3 && level != CUSTOM_TABLE_LEVEL {
            return Err(Error::MalformedStream(format!("bad level {level}")));
        }

        let bpc = height.div_ceil(8) * width.div_ceil(8);
        let mut channel_scales = Vec::new();
        let mut blocks = Vec::with_capacity(channels * bpc);
        for _ in 0..channels {
            let channel_scale = if per_block_scale {
                None
            } else {
                let s = GemmScale::new(r.f32()?, r.f32()?, m)
                    .map_err(|e| Error::MalformedStream(e.to_string()))?;
                channel_scales.push(s);
                Some(s)
            };
            for _ in 0..bpc {
                let index = IndexMatrix(r.u64()?);
                let scale = match channel_scale {
                    Some(s) => s,
                    None => GemmScale::new(r.f32()?, r.f32()?, m)
                        .map_err(|e| Error::MalformedStream(e.to_string()))?,
                };
                let n = index.popcount() as usize;
                let mut payload = Vec::with_capacity(n);
                for _ in 0..n {
                    payload.push(r.i16()?);
                }
                blocks.push(EncodedBlock {
                    index,
                    payload,
                    scale,
                    level,
                });
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::MalformedStream(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        let stream = EncodedStream {
            channels,
            height,
            width,
            m,
            level,
            per_block_scale,
            channel_scales,
            blocks,
        };
        stream.validate()?;
        Ok(stream)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::MalformedStream(format!(
                "truncated at byte {} (need {n} more)",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn i16(&mut self) -> Result<i16> {
        Ok(i16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}
