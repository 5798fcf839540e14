//! Frequency-domain compression codec for CNN interlayer feature maps, plus a
//! functional model of the accelerator dataflow that consumes the compressed
//! streams.
//!
//! The codec transforms each 8x8 tile of a feature map into the frequency
//! domain, quantizes it in two stages (min/max affine grid, then an 8x8
//! divisor table), and stores only the non-zero coefficients next to a 64-bit
//! occupancy index. The simulator side models the row-frame convolution
//! dataflow with partial-sum splicing, the 8-bank flip storage of the
//! feature-map buffer, and the reconfigurable on-chip memory split.
//!
//! Modules:
//!
//! - [`types`] -- blocks, feature maps, fixed-point format, row-frame tiling
//! - [`dct`] -- direct and factorized 8x8 DCT-II / inverse
//! - [`quant`] -- two-stage quantization and the four built-in divisor tables
//! - [`sparse`] -- index + payload block encoding and the banked flip store
//! - [`mem`] -- buffer-bank layout configuration and layer tiling plans
//! - [`pe`] -- convolution oracle, row-frame PE model, non-linear ops
//! - [`stream`] -- compressed stream container and its binary format
//! - [`pipeline`] -- fusion-layer orchestration and whole-network runs
//! - [`io`] -- tensor files and network config parsing

pub mod dct;
pub mod io;
pub mod mem;
pub mod pe;
pub mod pipeline;
pub mod quant;
pub mod sparse;
pub mod stream;
pub mod types;

pub use types::{Block8, FeatureMap, FixedPointFormat, RowFrame};

/// Errors shared across the codec and simulator.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("channel {channel} out of range ({channels} channels)")]
    ChannelOutOfRange { channel: usize, channels: usize },
    #[error("quantization level {0} out of range (0..=3)")]
    LevelOutOfRange(u8),
    #[error("quantized-grid bit count {0} out of range (2..=15)")]
    BitCountOutOfRange(u8),
    #[error("invalid fixed-point format: total {total}, frac {frac}")]
    BadFixedPointFormat { total: u8, frac: u8 },
    #[error("malformed stream: {0}")]
    MalformedStream(String),
    #[error("bank {bank} full: capacity {capacity} words, block needs {needed} more")]
    BufferFull {
        bank: usize,
        capacity: usize,
        needed: usize,
    },
    #[error("block {index} out of range ({count} blocks stored)")]
    BlockOutOfRange { index: usize, count: usize },
    #[error("no values stored; utilization is undefined")]
    EmptyBuffer,
    #[error("unsupported scratch size {0} KB (must be 64, 128 or 192)")]
    UnsupportedScratchSize(usize),
    #[error("layer does not fit on chip under any tiling: {0}")]
    InfeasiblePlan(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("kernel size {0} out of range ({1})")]
    KernelSize(usize, &'static str),
    #[error("invalid non-linear op list: {0}")]
    BadNonLinearConfig(String),
    #[error("invalid quantization table: {0}")]
    BadQTable(String),
    #[error("line {line}: {msg}")]
    Config { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
