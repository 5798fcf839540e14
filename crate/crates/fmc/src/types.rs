//! Shared value types: 8x8 blocks, feature-map tensors, the dynamic
//! fixed-point format, and row-frame tiling.
//!
//! All reference arithmetic is `f64`; fixed-point is an explicit conversion
//! layer applied at storage boundaries, never the ambient representation.

use crate::{Error, Result};

/// Signed fixed-point storage format. 16 total bits with a per-layer
/// fractional split is the accelerator's native word.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FixedPointFormat {
    total_bits: u8,
    frac_bits: u8,
}

impl FixedPointFormat {
    pub fn new(total_bits: u8, frac_bits: u8) -> Result<Self> {
        if !matches!(total_bits, 8 | 16) || frac_bits >= total_bits {
            return Err(Error::BadFixedPointFormat {
                total: total_bits,
                frac: frac_bits,
            });
        }
        Ok(Self {
            total_bits,
            frac_bits,
        })
    }

    pub fn total_bits(&self) -> u8 {
        self.total_bits
    }

    pub fn frac_bits(&self) -> u8 {
        self.frac_bits
    }

    pub fn max_int(&self) -> i32 {
        (1 << (self.total_bits - 1)) - 1
    }

    pub fn min_int(&self) -> i32 {
        -(1 << (self.total_bits - 1))
    }
}

impl Default for FixedPointFormat {
    fn default() -> Self {
        Self {
            total_bits: 16,
            frac_bits: 8,
        }
    }
}

/// Converts a real value to the fixed-point grid: `round(x * 2^frac)`,
/// half away from zero, saturated to the signed range. Never traps.
pub fn to_fixed(x: f64, fmt: FixedPointFormat) -> i32 {
    let scaled = (x * f64::from(1u32 << fmt.frac_bits)).round();
    if scaled >= f64::from(fmt.max_int()) {
        fmt.max_int()
    } else if scaled <= f64::from(fmt.min_int()) {
        fmt.min_int()
    } else {
        scaled as i32
    }
}

/// Inverse of [`to_fixed`] on the representable grid.
pub fn from_fixed(v: i32, fmt: FixedPointFormat) -> f64 {
    f64::from(v) / f64::from(1u32 << fmt.frac_bits)
}

/// An 8x8 tile of real-valued samples: the atomic unit of the transform,
/// quantization and encoding stages.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Block8(pub [[f64; 8]; 8]);

impl Block8 {
    pub const SIZE: usize = 8;

    pub fn zero() -> Self {
        Block8([[0.0; 8]; 8])
    }

    pub fn constant(v: f64) -> Self {
        Block8([[v; 8]; 8])
    }

    pub fn from_fn(mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut b = [[0.0; 8]; 8];
        for (i, row) in b.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = f(i, j);
            }
        }
        Block8(b)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[i][j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.0[i][j] = v;
    }

    /// Frobenius norm, used by the energy-conservation checks.
    pub fn frobenius_norm(&self) -> f64 {
        self.0
            .iter()
            .flatten()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn max_abs_diff(&self, other: &Block8) -> f64 {
        self.0
            .iter()
            .flatten()
            .zip(other.0.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// A channels x height x width tensor, data row-major per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
    pub format: FixedPointFormat,
}

impl FeatureMap {
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        data: Vec<f64>,
        format: FixedPointFormat,
    ) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::DimensionMismatch(format!(
                "feature map {}x{}x{} needs {} values, got {}",
                channels,
                height,
                width,
                channels * height * width,
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
            format,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
            format: FixedPointFormat::default(),
        }
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut fm = Self::zeros(channels, height, width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    let v = f(c, y, x);
                    fm.set(c, y, x, v);
                }
            }
        }
        fm
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn channel(&self, c: usize) -> Result<&[f64]> {
        if c >= self.channels {
            return Err(Error::ChannelOutOfRange {
                channel: c,
                channels: self.channels,
            });
        }
        let n = self.height * self.width;
        Ok(&self.data[c * n..(c + 1) * n])
    }

    /// Number of 8-row frames covering the height.
    pub fn row_frame_count(&self) -> usize {
        self.height.div_ceil(8)
    }

    /// Extracts one row frame: 8 consecutive rows starting at
    /// `8 * frame_index`, zero-padded past the bottom edge.
    pub fn row_frame(&self, channel: usize, frame_index: usize) -> Result<RowFrame> {
        if channel >= self.channels {
            return Err(Error::ChannelOutOfRange {
                channel,
                channels: self.channels,
            });
        }
        if frame_index >= self.row_frame_count() {
            return Err(Error::DimensionMismatch(format!(
                "row frame {} out of range ({} frames)",
                frame_index,
                self.row_frame_count()
            )));
        }
        let mut rows = vec![0.0; 8 * self.width];
        for r in 0..8 {
            let y = 8 * frame_index + r;
            if y < self.height {
                for x in 0..self.width {
                    rows[r * self.width + x] = self.get(channel, y, x);
                }
            }
        }
        Ok(RowFrame {
            channel,
            frame_index,
            width: self.width,
            rows,
        })
    }

    pub fn max_abs_diff(&self, other: &FeatureMap) -> f64 {
        assert_eq!(self.data.len(), other.data.len());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// A band of 8 consecutive feature-map rows: the tiling unit shared by the
/// codec and the convolution dataflow. Rows past the bottom edge are zero.
#[derive(Debug, Clone)]
pub struct RowFrame {
    pub channel: usize,
    pub frame_index: usize,
    pub width: usize,
    rows: Vec<f64>,
}

impl RowFrame {
    /// Sample row `r` (0..8), column `x`; columns past the right edge read
    /// as zero so block extraction can pad uniformly.
    #[inline]
    pub fn get(&self, r: usize, x: usize) -> f64 {
        if x < self.width {
            self.rows[r * self.width + x]
        } else {
            0.0
        }
    }

    /// 8x8 blocks of this frame, left to right.
    pub fn blocks(&self) -> Vec<Block8> {
        let nblocks = self.width.div_ceil(8);
        (0..nblocks)
            .map(|b| Block8::from_fn(|i, j| self.get(i, 8 * b + j)))
            .collect()
    }
}

/// Splits one channel into 8x8 blocks in raster order: row frames top to
/// bottom, blocks left to right within a frame. Edges are zero-padded.
pub fn tile_into_blocks(fm: &FeatureMap, channel: usize) -> Result<Vec<Block8>> {
    let mut blocks = Vec::with_capacity(fm.row_frame_count() * fm.width.div_ceil(8));
    for frame in 0..fm.row_frame_count() {
        blocks.extend(fm.row_frame(channel, frame)?.blocks());
    }
    Ok(blocks)
}

/// Inverse of [`tile_into_blocks`]: reassembles a channel of the given
/// dimensions, dropping the padding.
pub fn untile_blocks(blocks: &[Block8], height: usize, width: usize) -> Result<Vec<f64>> {
    let frames = height.div_ceil(8);
    let per_row = width.div_ceil(8);
    if blocks.len() != frames * per_row {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} channel needs {} blocks, got {}",
            height,
            width,
            frames * per_row,
            blocks.len()
        )));
    }
    let mut data = vec![0.0; height * width];
    for (n, block) in blocks.iter().enumerate() {
        let frame = n / per_row;
        let bx = n % per_row;
        for i in 0..8 {
            let y = 8 * frame + i;
            if y >= height {
                break;
            }
            for j in 0..8 {
                let x = 8 * bx + j;
                if x >= width {
                    break;
                }
                data[y * width + x] = block.get(i, j);
            }
        }
    }
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fmt16_8() -> FixedPointFormat {
        FixedPointFormat::new(16, 8).unwrap()
    }

    #[test]
    fn to_fixed_zero_and_unit() {
        assert_eq!(to_fixed(0.0, fmt16_8()), 0);
        assert_eq!(to_fixed(1.0, fmt16_8()), 256);
    }

    #[test]
    fn to_fixed_saturates_instead_of_overflowing() {
        // 200 * 256 = 51200 exceeds the signed-16 maximum.
        assert_eq!(to_fixed(200.0, fmt16_8()), 32767);
        assert_eq!(to_fixed(-200.0, fmt16_8()), -32768);
    }

    #[test]
    fn to_fixed_rounds_half_away_from_zero() {
        let fmt = FixedPointFormat::new(16, 0).unwrap();
        assert_eq!(to_fixed(2.5, fmt), 3);
        assert_eq!(to_fixed(-2.5, fmt), -3);
        assert_eq!(to_fixed(2.4, fmt), 2);
    }

    #[test]
    fn to_fixed_is_monotone() {
        let fmt = fmt16_8();
        let mut prev = i32::MIN;
        let mut x = -300.0;
        while x <= 300.0 {
            let v = to_fixed(x, fmt);
            assert!(v >= prev, "to_fixed not monotone at x={x}");
            prev = v;
            x += 0.0371;
        }
    }

    #[test]
    fn fixed_point_format_validation() {
        assert!(FixedPointFormat::new(16, 8).is_ok());
        assert!(FixedPointFormat::new(8, 0).is_ok());
        assert!(FixedPointFormat::new(16, 16).is_err());
        assert!(FixedPointFormat::new(12, 4).is_err());
    }

    #[test]
    fn tile_single_block_is_identity() {
        let fm = FeatureMap::from_fn(1, 8, 8, |_, y, x| (y * 8 + x) as f64);
        let blocks = tile_into_blocks(&fm, 0).unwrap();
        assert_eq!(blocks.len(), 1);
        for i in 0..8 {
            for j in 0..8 {
                assert_eq!(blocks[0].get(i, j), (i * 8 + j) as f64);
            }
        }
    }

    #[test]
    fn tile_16x16_raster_order() {
        // Mark each quadrant with a distinct value; raster order is
        // (0,0), (0,1), (1,0), (1,1).
        let fm = FeatureMap::from_fn(1, 16, 16, |_, y, x| ((y / 8) * 2 + x / 8) as f64);
        let blocks = tile_into_blocks(&fm, 0).unwrap();
        assert_eq!(blocks.len(), 4);
        for (n, b) in blocks.iter().enumerate() {
            assert_eq!(b.get(0, 0), n as f64, "block {n} out of raster order");
        }
    }

    #[test]
    fn tile_pads_partial_blocks_with_zeros() {
        let fm = FeatureMap::from_fn(1, 10, 10, |_, y, x| 1.0 + (y * 10 + x) as f64);
        let blocks = tile_into_blocks(&fm, 0).unwrap();
        assert_eq!(blocks.len(), 4);
        // Block (1,1) covers rows 8..10, cols 8..10: only its top-left 2x2
        // holds samples.
        let b = &blocks[3];
        for i in 0..8 {
            for j in 0..8 {
                if i < 2 && j < 2 {
                    assert_ne!(b.get(i, j), 0.0);
                } else {
                    assert_eq!(b.get(i, j), 0.0);
                }
            }
        }
    }

    #[test]
    fn untile_inverts_tile_for_all_small_dims() {
        for h in 1..=32 {
            for w in 1..=32 {
                let fm = FeatureMap::from_fn(1, h, w, |_, y, x| (y * w + x) as f64 * 0.5 - 3.0);
                let blocks = tile_into_blocks(&fm, 0).unwrap();
                let back = untile_blocks(&blocks, h, w).unwrap();
                assert_eq!(back, fm.data, "roundtrip failed for {h}x{w}");
            }
        }
    }

    #[test]
    fn tile_rejects_bad_channel() {
        let fm = FeatureMap::zeros(2, 8, 8);
        assert!(matches!(
            tile_into_blocks(&fm, 2),
            Err(Error::ChannelOutOfRange { .. })
        ));
    }

    #[test]
    fn row_frame_zero_pads_past_bottom() {
        let fm = FeatureMap::from_fn(1, 10, 4, |_, _, _| 7.0);
        let rf = fm.row_frame(0, 1).unwrap();
        assert_eq!(rf.get(0, 0), 7.0);
        assert_eq!(rf.get(1, 3), 7.0);
        for r in 2..8 {
            for x in 0..4 {
                assert_eq!(rf.get(r, x), 0.0);
            }
        }
    }
}
