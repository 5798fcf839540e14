//! Two-stage quantization of coefficient blocks and its exact inverse.
//!
//! Stage one maps the block onto an m-bit integer grid spanning its min/max
//! range. Stage two divides elementwise by an 8x8 table whose entries grow
//! toward the high-frequency corner, zeroing most of the bottom-right
//! region. Four built-in tables trade compression against fidelity; custom
//! tables load from a plain-text file.

use std::path::Path;

use crate::types::Block8;
use crate::{Error, Result};

/// Stage-one integer matrix: values on the `[0, i_max]` grid.
pub type GemmMatrix = [[i32; 8]; 8];
/// Stage-two integer matrix: what gets encoded and stored.
pub type CoeffMatrix = [[i16; 8]; 8];

/// Min/max scale of one quantized array. Stored as `f32`, matching the
/// stream format; `f_min` is rounded down and `f_max` up so every source
/// value stays inside the recorded range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GemmScale {
    pub f_min: f32,
    pub f_max: f32,
    pub m: u8,
}

impl GemmScale {
    pub fn new(f_min: f32, f_max: f32, m: u8) -> Result<Self> {
        if !(2..=15).contains(&m) {
            return Err(Error::BitCountOutOfRange(m));
        }
        if f_max < f_min {
            return Err(Error::MalformedStream(format!(
                "scale range inverted: min {f_min} > max {f_max}"
            )));
        }
        Ok(Self { f_min, f_max, m })
    }

    /// Top of the integer grid: `2^m - 1`.
    pub fn i_max(&self) -> i32 {
        (1 << self.m) - 1
    }

    /// Builds the scale from an observed f64 range with outward rounding.
    pub fn from_range(lo: f64, hi: f64, m: u8) -> Result<Self> {
        Self::new(f32_round_down(lo), f32_round_up(hi), m)
    }
}

fn f32_round_down(x: f64) -> f32 {
    let y = x as f32;
    if f64::from(y) > x {
        next_toward_neg_inf(y)
    } else {
        y
    }
}

fn f32_round_up(x: f64) -> f32 {
    let y = x as f32;
    if f64::from(y) < x {
        next_toward_pos_inf(y)
    } else {
        y
    }
}

fn next_toward_neg_inf(x: f32) -> f32 {
    if x.is_nan() || x == f32::NEG_INFINITY {
        return x;
    }
    let bits = x.to_bits();
    let next = if x > 0.0 {
        bits - 1
    } else if bits == 0 {
        0x8000_0001 // smallest negative subnormal
    } else {
        bits + 1
    };
    f32::from_bits(next)
}

fn next_toward_pos_inf(x: f32) -> f32 {
    -next_toward_neg_inf(-x)
}

/// A quantized block ready for encoding: stage-two integers plus the scale
/// metadata needed to invert both stages.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedBlock {
    pub q2: CoeffMatrix,
    pub scale: GemmScale,
    pub level: u8,
}

/// Round half away from zero for an integer ratio `a / b`, `b >= 1`.
fn round_div(a: i32, b: i32) -> i32 {
    debug_assert!(b >= 1);
    let (a, b) = (i64::from(a), i64::from(b));
    let q = if a >= 0 {
        (2 * a + b) / (2 * b)
    } else {
        -((2 * (-a) + b) / (2 * b))
    };
    q as i32
}

/// Stage one: affine min/max quantization onto the m-bit grid.
///
/// Each output is `round((f - f_min) / (f_max - f_min) * i_max)`, half away
/// from zero, always landing in `[0, i_max]`. A constant block quantizes to
/// all zeros with the constant kept in `f_min`.
pub fn gemm_quantize(f: &Block8, m: u8) -> Result<(GemmMatrix, GemmScale)> {
    let lo = f.0.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    let hi = f
        .0
        .iter()
        .flatten()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let scale = GemmScale::from_range(lo, hi, m)?;
    Ok((gemm_quantize_with_scale(f, &scale), scale))
}

/// Stage one against a caller-provided scale (per-channel mode). Values are
/// clamped into the grid if they stray outside the recorded range.
pub fn gemm_quantize_with_scale(f: &Block8, scale: &GemmScale) -> GemmMatrix {
    let range = f64::from(scale.f_max) - f64::from(scale.f_min);
    let i_max = scale.i_max();
    let mut q1 = [[0i32; 8]; 8];
    if range <= 0.0 {
        return q1;
    }
    for i in 0..8 {
        for j in 0..8 {
            let norm = (f.get(i, j) - f64::from(scale.f_min)) / range;
            let q = (norm * f64::from(i_max)).round() as i32;
            q1[i][j] = q.clamp(0, i_max);
        }
    }
    q1
}

/// Exact affine inverse of stage one.
pub fn gemm_dequantize(q1: &GemmMatrix, scale: &GemmScale) -> Result<Block8> {
    let i_max = scale.i_max();
    for row in q1 {
        for &v in row {
            if v < 0 || v > i_max {
                return Err(Error::MalformedStream(format!(
                    "grid value {v} outside [0, {i_max}]"
                )));
            }
        }
    }
    let range = f64::from(scale.f_max) - f64::from(scale.f_min);
    Ok(Block8::from_fn(|i, j| {
        f64::from(q1[i][j]) / f64::from(i_max) * range + f64::from(scale.f_min)
    }))
}

/// An 8x8 table of positive divisors, small toward the low-frequency corner
/// and large toward the high-frequency corner.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QTable {
    entries: [[u16; 8]; 8],
    level: u8,
}

/// Level marker written to streams quantized with a caller-supplied table.
pub const CUSTOM_TABLE_LEVEL: u8 = 0xFF;

/// Base divisor table (the standard luminance table used for 8x8 image
/// coding); the four built-in levels scale it.
const BASE_TABLE: [[u16; 8]; 8] = [
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
];

/// Scale applied to the base table per level: level 0 is the most
/// aggressive, level 3 the gentlest.
const LEVEL_SCALE: [f64; 4] = [2.0, 1.0, 0.5, 0.125];

impl QTable {
    pub fn from_entries(entries: [[u16; 8]; 8], level: u8) -> Result<Self> {
        if entries.iter().flatten().any(|&v| v == 0) {
            return Err(Error::BadQTable("entries must be >= 1".into()));
        }
        if entries[0][0] > entries[7][7] {
            return Err(Error::BadQTable(format!(
                "low-frequency entry {} exceeds high-frequency entry {}",
                entries[0][0], entries[7][7]
            )));
        }
        Ok(Self { entries, level })
    }

    /// All-ones table: both stages become lossless passthroughs.
    pub fn ones() -> Self {
        Self {
            entries: [[1; 8]; 8],
            level: CUSTOM_TABLE_LEVEL,
        }
    }

    pub fn get(&self, i: usize, j: usize) -> u16 {
        self.entries[i][j]
    }

    pub fn level(&self) -> u8 {
        self.level
    }

    /// Loads a table from plain text: 8 lines of 8 space-separated positive
    /// integers.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut entries = [[0u16; 8]; 8];
        let mut rows = 0;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if rows == 8 {
                return Err(Error::BadQTable("more than 8 rows".into()));
            }
            let vals: Vec<&str> = line.split_whitespace().collect();
            if vals.len() != 8 {
                return Err(Error::Config {
                    line: lineno + 1,
                    msg: format!("expected 8 entries, got {}", vals.len()),
                });
            }
            for (j, v) in vals.iter().enumerate() {
                entries[rows][j] = v.parse::<u16>().map_err(|_| Error::Config {
                    line: lineno + 1,
                    msg: format!("bad table entry '{v}'"),
                })?;
            }
            rows += 1;
        }
        if rows != 8 {
            return Err(Error::BadQTable(format!("expected 8 rows, got {rows}")));
        }
        Self::from_entries(entries, CUSTOM_TABLE_LEVEL)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for row in &self.entries {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

/// Returns the built-in table for a quantization level in `0..=3`.
pub fn select_qtable(level: u8) -> Result<QTable> {
    if level > 3 {
        return Err(Error::LevelOutOfRange(level));
    }
    let s = LEVEL_SCALE[level as usize];
    let mut entries = [[0u16; 8]; 8];
    for i in 0..8 {
        for j in 0..8 {
            let scaled = (f64::from(BASE_TABLE[i][j]) * s).round();
            entries[i][j] = (scaled as u16).max(1);
        }
    }
    QTable::from_entries(entries, level)
}

/// Stage two: elementwise rounded division by the table.
pub fn qtable_quantize(q1: &GemmMatrix, qt: &QTable) -> CoeffMatrix {
    let mut out = [[0i16; 8]; 8];
    for i in 0..8 {
        for j in 0..8 {
            out[i][j] = round_div(q1[i][j], i32::from(qt.get(i, j))) as i16;
        }
    }
    out
}

/// Inverse of stage two: elementwise product. Each entry lands within
/// `qt/2` of the stage-one value it encodes.
pub fn qtable_dequantize(q2: &CoeffMatrix, qt: &QTable) -> GemmMatrix {
    let mut out = [[0i32; 8]; 8];
    for i in 0..8 {
        for j in 0..8 {
            out[i][j] = i32::from(q2[i][j]) * i32::from(qt.get(i, j));
        }
    }
    out
}

/// Full quantization of one coefficient block with a per-block scale.
pub fn quantize_block(z: &Block8, m: u8, qt: &QTable) -> Result<QuantizedBlock> {
    let (q1, scale) = gemm_quantize(z, m)?;
    Ok(QuantizedBlock {
        q2: qtable_quantize(&q1, qt),
        scale,
        level: qt.level(),
    })
}

/// Inverse of [`quantize_block`].
///
/// Stage-two products can overshoot the grid top by up to half a divisor;
/// they are clamped back onto `[0, i_max]`, which never widens the error.
pub fn dequantize_block(qb: &QuantizedBlock, qt: &QTable) -> Result<Block8> {
    let mut q1 = qtable_dequantize(&qb.q2, qt);
    let i_max = qb.scale.i_max();
    for row in &mut q1 {
        for v in row {
            *v = (*v).clamp(0, i_max);
        }
    }
    gemm_dequantize(&q1, &qb.scale)
}
