//! Model of the 480 KB buffer bank: two ping-pong feature-map buffers, a
//! partial-sum scratch pad, a fixed 32 KB index buffer, and two 64 KB
//! configurable memories (each split into two 32 KB sub-banks) that can be
//! lent to either side. Layer planning decides whether a layer fits
//! on-chip and how many row-frame tiles it takes when it does not.

use crate::{Error, Result};

pub const KB: usize = 1024;

/// Total on-chip SRAM.
pub const TOTAL_BYTES: usize = 480 * KB;
/// Fixed index buffer, split in two halves like the ping-pong buffers.
pub const INDEX_BYTES: usize = 32 * KB;
/// Base size of each feature-map buffer before any configurable memory is
/// attached.
pub const FEATURE_BASE_BYTES: usize = 128 * KB;
/// Base scratch pad size.
pub const SCRATCH_BASE_BYTES: usize = 64 * KB;
/// One configurable memory (two sub-banks of 32 KB).
pub const CFG_MEMORY_BYTES: usize = 64 * KB;
pub const SUB_BANK_BYTES: usize = 32 * KB;

/// Owner of one configurable sub-bank.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Owner {
    FeatureA,
    FeatureB,
    Scratch,
}

/// A concrete split of the buffer bank.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemoryLayout {
    pub feature_a: usize,
    pub feature_b: usize,
    pub scratch: usize,
    pub index: usize,
    /// Sub-bank owners of the two configurable memories. Sub-banks only
    /// split between the feature buffers in the 128 KB scratch case.
    pub assignment: [[Owner; 2]; 2],
}

impl MemoryLayout {
    pub fn total(&self) -> usize {
        self.feature_a + self.feature_b + self.scratch + self.index
    }

    pub fn with_scratch_kb(kb: usize) -> Result<Self> {
        configure(kb * KB)
    }
}

impl Default for MemoryLayout {
    fn default() -> Self {
        configure(SCRATCH_BASE_BYTES).expect("base scratch size is always valid")
    }
}

/// Assigns the configurable memories for a requested scratch size.
///
/// 64 KB: both memories extend the feature buffers (192 KB each).
/// 128 KB: one memory extends the scratch pad, the other splits one
/// sub-bank to each feature buffer (160 KB each, keeping ping-pong
/// symmetric). 192 KB: both memories extend the scratch pad (feature
/// buffers stay 128 KB).
pub fn configure(scratch_request: usize) -> Result<MemoryLayout> {
    let assignment = match scratch_request / KB {
        64 => [
            [Owner::FeatureA, Owner::FeatureA],
            [Owner::FeatureB, Owner::FeatureB],
        ],
        128 => [
            [Owner::Scratch, Owner::Scratch],
            [Owner::FeatureA, Owner::FeatureB],
        ],
        192 => [
            [Owner::Scratch, Owner::Scratch],
            [Owner::Scratch, Owner::Scratch],
        ],
        other => return Err(Error::UnsupportedScratchSize(other)),
    };
    let mut feature_a = FEATURE_BASE_BYTES;
    let mut feature_b = FEATURE_BASE_BYTES;
    let mut scratch = SCRATCH_BASE_BYTES;
    for memory in &assignment {
        for owner in memory {
            match owner {
                Owner::FeatureA => feature_a += SUB_BANK_BYTES,
                Owner::FeatureB => feature_b += SUB_BANK_BYTES,
                Owner::Scratch => scratch += SUB_BANK_BYTES,
            }
        }
    }
    let layout = MemoryLayout {
        feature_a,
        feature_b,
        scratch,
        index: INDEX_BYTES,
        assignment,
    };
    debug_assert_eq!(layout.total(), TOTAL_BYTES);
    debug_assert_eq!(layout.scratch, scratch_request);
    Ok(layout)
}

/// Per-layer storage demand, all in bytes.
#[derive(Debug, Clone, Copy)]
pub struct LayerDemand {
    /// Compressed (or raw, for bypass layers) input feature-map size.
    pub input_bytes: usize,
    /// Compressed output estimate.
    pub output_bytes: usize,
    /// Partial-sum working set: out rows x out cols x filters in flight x
    /// accumulator word.
    pub psum_bytes: usize,
    /// Row frames in the input; the finest tiling grain.
    pub row_frames: usize,
}

/// Outcome of planning one layer against a layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct TilingPlan {
    pub fits_on_chip: bool,
    pub tiles: usize,
    /// Extra off-chip traffic: the compressed input is re-streamed once per
    /// additional pass.
    pub spill_bytes: usize,
}

fn fits(demand: &LayerDemand, layout: &MemoryLayout, tiles: usize) -> bool {
    demand.input_bytes.div_ceil(tiles) <= layout.feature_a
        && demand.output_bytes.div_ceil(tiles) <= layout.feature_b
        && demand.psum_bytes.div_ceil(tiles) <= layout.scratch
}

/// Finds the smallest row-frame partition of the layer that fits the
/// layout. One tile means the layer runs entirely on-chip.
pub fn plan_layer(demand: &LayerDemand, layout: &MemoryLayout) -> Result<TilingPlan> {
    let max_tiles = demand.row_frames.max(1);
    for tiles in 1..=max_tiles {
        if fits(demand, layout, tiles) {
            return Ok(TilingPlan {
                fits_on_chip: tiles == 1,
                tiles,
                spill_bytes: (tiles - 1) * demand.input_bytes,
            });
        }
    }
    Err(Error::InfeasiblePlan(format!(
        "demand {}/{}/{} KB (in/out/psum) exceeds {}/{}/{} KB even at {} row-frame tiles",
        demand.input_bytes / KB,
        demand.output_bytes / KB,
        demand.psum_bytes / KB,
        layout.feature_a / KB,
        layout.feature_b / KB,
        layout.scratch / KB,
        max_tiles
    )))
}

/// Tries all three scratch configurations and keeps the one with the least
/// spill (ties broken by tile count).
pub fn plan_best(demand: &LayerDemand) -> Result<(MemoryLayout, TilingPlan)> {
    let mut best: Option<(MemoryLayout, TilingPlan)> = None;
    for kb in [64, 128, 192] {
        let layout = configure(kb * KB)?;
        if let Ok(plan) = plan_layer(demand, &layout) {
            let better = match &best {
                None => true,
                Some((_, b)) => (plan.spill_bytes, plan.tiles) < (b.spill_bytes, b.tiles),
            };
            if better {
                best = Some((layout, plan));
            }
        }
    }
    best.ok_or_else(|| {
        Error::InfeasiblePlan(format!(
            "demand {}/{}/{} KB (in/out/psum) does not fit any configuration",
            demand.input_bytes / KB,
            demand.output_bytes / KB,
            demand.psum_bytes / KB
        ))
    })
}
