//! Sparse block encoding and the banked flip store.
//!
//! Each quantized block is reduced to a 64-bit occupancy index plus its
//! non-zero values in column-major scan order. The store models the 8-SRAM
//! feature-map buffer: bank `i` holds row `i` of even-numbered blocks, and
//! odd-numbered blocks are flipped (row `i` lands in bank `7 - i`) so that
//! top-heavy blocks fill the banks evenly. Readback is steered entirely by
//! the index stream; banks are touched only where index bits are set.

use std::cell::Cell;

use crate::quant::{CoeffMatrix, GemmScale, QuantizedBlock};
use crate::{Error, Result};

/// 64-bit occupancy mask: bit `8*i + j` set iff entry `(i, j)` is non-zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IndexMatrix(pub u64);

impl IndexMatrix {
    pub fn from_matrix(q2: &CoeffMatrix) -> Self {
        let mut bits = 0u64;
        for (i, row) in q2.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if v != 0 {
                    bits |= 1 << (8 * i + j);
                }
            }
        }
        IndexMatrix(bits)
    }

    #[inline]
    pub fn is_set(&self, i: usize, j: usize) -> bool {
        self.0 & (1 << (8 * i + j)) != 0
    }

    pub fn popcount(&self) -> u32 {
        self.0.count_ones()
    }

    /// Non-zeros per row; row `i` is byte `i` of the mask.
    pub fn row_counts(&self) -> [u32; 8] {
        let mut counts = [0u32; 8];
        for (i, c) in counts.iter_mut().enumerate() {
            *c = ((self.0 >> (8 * i)) & 0xFF).count_ones();
        }
        counts
    }
}

/// One encoded block: occupancy index, non-zero payload in column-major
/// order, and the scale metadata needed for dequantization.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedBlock {
    pub index: IndexMatrix,
    pub payload: Vec<i16>,
    pub scale: GemmScale,
    pub level: u8,
}

/// Encodes a quantized block: zeros are dropped, non-zeros are scanned
/// column 0..7, row 0..7 within a column, matching the bank write order.
pub fn encode_block(qb: &QuantizedBlock) -> EncodedBlock {
    let index = IndexMatrix::from_matrix(&qb.q2);
    let mut payload = Vec::with_capacity(index.popcount() as usize);
    for j in 0..8 {
        for row in &qb.q2 {
            if row[j] != 0 {
                payload.push(row[j]);
            }
        }
    }
    EncodedBlock {
        index,
        payload,
        scale: qb.scale,
        level: qb.level,
    }
}

/// Inverse of [`encode_block`]: payload values land where index bits are
/// set, zeros everywhere else.
pub fn decode_block(e: &EncodedBlock) -> Result<QuantizedBlock> {
    if e.payload.len() != e.index.popcount() as usize {
        return Err(Error::MalformedStream(format!(
            "payload holds {} values but index marks {}",
            e.payload.len(),
            e.index.popcount()
        )));
    }
    let mut q2 = [[0i16; 8]; 8];
    let mut next = 0;
    for j in 0..8 {
        for (i, row) in q2.iter_mut().enumerate() {
            if e.index.is_set(i, j) {
                row[j] = e.payload[next];
                next += 1;
            }
        }
    }
    Ok(QuantizedBlock {
        q2,
        scale: e.scale,
        level: e.level,
    })
}

/// Per-block record kept alongside the banks; models the index buffer.
#[derive(Debug, Clone)]
struct BlockMeta {
    index: IndexMatrix,
    scale: GemmScale,
    level: u8,
}

/// The 8-bank feature-map buffer with flip storage.
///
/// Single-owner mutable state: one writer or one reader at a time. Bank
/// element reads are counted so tests can assert the index gates every
/// access.
#[derive(Debug)]
pub struct BufferBankState {
    banks: [Vec<i16>; 8],
    capacity: usize,
    flip: bool,
    meta: Vec<BlockMeta>,
    /// Cumulative start offset of each block in each bank. Derived purely
    /// from the index stream (see [`Self::directory_from_indices`]); kept
    /// incrementally so reads stay O(block size).
    directory: Vec<[usize; 8]>,
    reads: Cell<u64>,
}

impl BufferBankState {
    /// A store whose banks each hold `capacity` payload words.
    pub fn new(capacity: usize) -> Self {
        Self::with_flip(capacity, true)
    }

    /// Capacity derived from a feature-map buffer size in bytes: 8 banks of
    /// 16-bit words.
    pub fn for_buffer_bytes(bytes: usize) -> Self {
        Self::new(bytes / 8 / 2)
    }

    /// `flip = false` disables the alternating row reversal; used to
    /// measure what the flip buys.
    pub fn with_flip(capacity: usize, flip: bool) -> Self {
        BufferBankState {
            banks: Default::default(),
            capacity,
            flip,
            meta: Vec::new(),
            directory: Vec::new(),
            reads: Cell::new(0),
        }
    }

    pub fn block_count(&self) -> usize {
        self.meta.len()
    }

    pub fn bank_fills(&self) -> [usize; 8] {
        let mut fills = [0; 8];
        for (f, b) in fills.iter_mut().zip(&self.banks) {
            *f = b.len();
        }
        fills
    }

    pub fn total_stored(&self) -> usize {
        self.banks.iter().map(Vec::len).sum()
    }

    /// Bank element reads performed so far.
    pub fn read_accesses(&self) -> u64 {
        self.reads.get()
    }

    pub fn reset_read_accesses(&self) {
        self.reads.set(0);
    }

    #[inline]
    fn row_bank(&self, row: usize, block_n: usize) -> usize {
        if self.flip && block_n % 2 == 1 {
            7 - row
        } else {
            row
        }
    }

    /// Appends one encoded block. The write is atomic: if any bank would
    /// overflow, the state is left untouched.
    pub fn write_block(&mut self, e: &EncodedBlock) -> Result<()> {
        let n = self.meta.len();
        let counts = e.index.row_counts();
        for (row, &count) in counts.iter().enumerate() {
            let bank = self.row_bank(row, n);
            let needed = count as usize;
            if self.banks[bank].len() + needed > self.capacity {
                return Err(Error::BufferFull {
                    bank,
                    capacity: self.capacity,
                    needed,
                });
            }
        }
        self.directory.push(self.bank_fills());
        // Column-major scan, same order the payload was packed in.
        let mut next = 0;
        for j in 0..8 {
            for i in 0..8 {
                if e.index.is_set(i, j) {
                    let bank = self.row_bank(i, n);
                    self.banks[bank].push(e.payload[next]);
                    next += 1;
                }
            }
        }
        debug_assert_eq!(next, e.payload.len());
        self.meta.push(BlockMeta {
            index: e.index,
            scale: e.scale,
            level: e.level,
        });
        Ok(())
    }

    /// Reconstructs block `n` exactly as written, touching only the banks
    /// its index marks.
    pub fn read_block(&self, n: usize) -> Result<EncodedBlock> {
        let meta = self.meta.get(n).ok_or(Error::BlockOutOfRange {
            index: n,
            count: self.meta.len(),
        })?;
        let mut cursors = self.directory[n];
        let mut payload = Vec::with_capacity(meta.index.popcount() as usize);
        for j in 0..8 {
            for i in 0..8 {
                if meta.index.is_set(i, j) {
                    let bank = self.row_bank(i, n);
                    payload.push(self.banks[bank][cursors[bank]]);
                    cursors[bank] += 1;
                    self.reads.set(self.reads.get() + 1);
                }
            }
        }
        Ok(EncodedBlock {
            index: meta.index,
            payload,
            scale: meta.scale,
            level: meta.level,
        })
    }

    /// Recomputes every block's bank offsets from the index stream alone,
    /// ignoring the incrementally-kept directory. Addressing needs nothing
    /// but the indices; tests hold the cached copy to this ground truth.
    pub fn directory_from_indices(&self) -> Vec<[usize; 8]> {
        let mut dir = Vec::with_capacity(self.meta.len());
        let mut fills = [0usize; 8];
        for (n, meta) in self.meta.iter().enumerate() {
            dir.push(fills);
            for (row, &count) in meta.index.row_counts().iter().enumerate() {
                fills[self.row_bank(row, n)] += count as usize;
            }
        }
        dir
    }

    /// Fill balance: total stored values over `8 * max bank fill`. 1.0
    /// means perfectly level banks.
    pub fn utilization(&self) -> Result<f64> {
        let max_fill = self.bank_fills().into_iter().max().unwrap_or(0);
        if max_fill == 0 {
            return Err(Error::EmptyBuffer);
        }
        Ok(self.total_stored() as f64 / (8.0 * max_fill as f64))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn scale() -> GemmScale {
        GemmScale::new(0.0, 255.0, 8).unwrap()
    }

    fn block_from(q2: CoeffMatrix) -> QuantizedBlock {
        QuantizedBlock {
            q2,
            scale: scale(),
            level: 1,
        }
    }

    fn random_sparse(rng: &mut StdRng, density: f64) -> QuantizedBlock {
        let mut q2 = [[0i16; 8]; 8];
        for row in &mut q2 {
            for v in row.iter_mut() {
                if rng.random_bool(density) {
                    *v = rng.random_range(1..256);
                }
            }
        }
        block_from(q2)
    }

    /// Block whose row `i` holds `counts[i]` non-zeros in the leftmost
    /// columns.
    fn block_with_row_counts(counts: [usize; 8]) -> QuantizedBlock {
        let mut q2 = [[0i16; 8]; 8];
        for (i, &c) in counts.iter().enumerate() {
            for j in 0..c {
                q2[i][j] = (i * 8 + j + 1) as i16;
            }
        }
        block_from(q2)
    }

    #[test]
    fn encode_all_zero_block() {
        let e = encode_block(&block_from([[0; 8]; 8]));
        assert_eq!(e.index.0, 0);
        assert!(e.payload.is_empty());
    }

    #[test]
    fn encode_single_corner_value() {
        let mut q2 = [[0i16; 8]; 8];
        q2[0][0] = 42;
        let e = encode_block(&block_from(q2));
        assert_eq!(e.index.0, 1);
        assert_eq!(e.payload, vec![42]);
    }

    #[test]
    fn payload_is_column_major() {
        let mut q2 = [[0i16; 8]; 8];
        q2[0][0] = 1;
        q2[3][0] = 2;
        q2[1][2] = 3;
        let e = encode_block(&block_from(q2));
        assert_eq!(e.payload, vec![1, 2, 3]);
    }

    #[test]
    fn decode_full_index() {
        let mut q2 = [[0i16; 8]; 8];
        for (i, row) in q2.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (i * 8 + j + 1) as i16;
            }
        }
        let qb = block_from(q2);
        let decoded = decode_block(&encode_block(&qb)).unwrap();
        assert_eq!(decoded.q2, qb.q2);
    }

    #[test]
    fn decode_rejects_length_mismatch() {
        let mut e = encode_block(&random_sparse(&mut StdRng::seed_from_u64(31), 0.3));
        e.payload.pop();
        assert!(matches!(decode_block(&e), Err(Error::MalformedStream(_))));
    }

    #[test]
    fn encode_decode_roundtrip_random() {
        let mut rng = StdRng::seed_from_u64(32);
        for _ in 0..10_000 {
            let density = rng.random_range(0.0..1.0);
            let qb = random_sparse(&mut rng, density);
            let back = decode_block(&encode_block(&qb)).unwrap();
            assert_eq!(back.q2, qb.q2);
        }
    }

    #[test]
    fn flip_balances_top_heavy_pattern() {
        let counts = [8, 6, 4, 2, 1, 0, 0, 0];
        let qb = block_with_row_counts(counts);
        let e = encode_block(&qb);

        let mut flipped = BufferBankState::new(64);
        flipped.write_block(&e).unwrap();
        flipped.write_block(&e).unwrap();
        assert_eq!(flipped.bank_fills(), [8, 6, 4, 3, 3, 4, 6, 8]);
        assert!((flipped.utilization().unwrap() - 0.65625).abs() < 1e-15);

        let mut straight = BufferBankState::with_flip(64, false);
        straight.write_block(&e).unwrap();
        straight.write_block(&e).unwrap();
        assert_eq!(straight.bank_fills(), [16, 12, 8, 4, 2, 0, 0, 0]);
        assert!((straight.utilization().unwrap() - 0.328125).abs() < 1e-15);
    }

    #[test]
    fn all_zero_block_only_bumps_count() {
        let mut state = BufferBankState::new(16);
        state.write_block(&encode_block(&block_from([[0; 8]; 8]))).unwrap();
        assert_eq!(state.block_count(), 1);
        assert_eq!(state.total_stored(), 0);
        let read = state.read_block(0).unwrap();
        assert_eq!(read.index.0, 0);
        assert_eq!(state.read_accesses(), 0);
    }

    #[test]
    fn full_bank_write_is_atomic() {
        // Row-0-only blocks: everything targets bank 0 (even) / bank 7 (odd).
        let qb = block_with_row_counts([8, 0, 0, 0, 0, 0, 0, 0]);
        let e = encode_block(&qb);
        let mut state = BufferBankState::with_flip(20, false);
        state.write_block(&e).unwrap();
        state.write_block(&e).unwrap();
        let before = state.bank_fills();
        let err = state.write_block(&e).unwrap_err();
        match err {
            Error::BufferFull { bank, .. } => assert_eq!(bank, 0),
            other => panic!("expected BufferFull, got {other:?}"),
        }
        assert_eq!(state.bank_fills(), before, "failed write must not change state");
        assert_eq!(state.block_count(), 2);
    }

    #[test]
    fn write_read_roundtrip_mixed_parities() {
        let mut rng = StdRng::seed_from_u64(33);
        let mut state = BufferBankState::new(1 << 16);
        let mut blocks = Vec::new();
        for _ in 0..1000 {
            let density = rng.random_range(0.0..0.9);
            let qb = random_sparse(&mut rng, density);
            let e = encode_block(&qb);
            state.write_block(&e).unwrap();
            blocks.push(e);
        }
        for (n, expect) in blocks.iter().enumerate() {
            let got = state.read_block(n).unwrap();
            assert_eq!(&got, expect, "block {n} mismatched");
        }
    }

    #[test]
    fn interleaved_dense_top_blocks_read_back_exactly() {
        let a = encode_block(&block_with_row_counts([8, 8, 0, 0, 0, 0, 0, 0]));
        let b = encode_block(&block_with_row_counts([7, 5, 0, 0, 0, 0, 0, 0]));
        let mut state = BufferBankState::new(64);
        state.write_block(&a).unwrap();
        state.write_block(&b).unwrap();
        assert_eq!(state.read_block(0).unwrap(), a);
        assert_eq!(state.read_block(1).unwrap(), b);
    }

    #[test]
    fn bank_reads_equal_popcount() {
        let mut rng = StdRng::seed_from_u64(34);
        let mut state = BufferBankState::new(1 << 12);
        let qb = random_sparse(&mut rng, 0.4);
        let e = encode_block(&qb);
        state.write_block(&e).unwrap();
        state.reset_read_accesses();
        state.read_block(0).unwrap();
        assert_eq!(state.read_accesses(), u64::from(e.index.popcount()));
    }

    #[test]
    fn read_out_of_range() {
        let state = BufferBankState::new(8);
        assert!(matches!(
            state.read_block(0),
            Err(Error::BlockOutOfRange { .. })
        ));
    }

    #[test]
    fn utilization_undefined_when_empty() {
        let mut state = BufferBankState::new(8);
        assert!(matches!(state.utilization(), Err(Error::EmptyBuffer)));
        state.write_block(&encode_block(&block_from([[0; 8]; 8]))).unwrap();
        assert!(matches!(state.utilization(), Err(Error::EmptyBuffer)));
    }

    #[test]
    fn uniform_dense_blocks_reach_full_utilization() {
        let mut q2 = [[1i16; 8]; 8];
        q2[4][4] = 9;
        let e = encode_block(&block_from(q2));
        let mut state = BufferBankState::new(256);
        for _ in 0..5 {
            state.write_block(&e).unwrap();
        }
        assert_eq!(state.utilization().unwrap(), 1.0);
    }

    #[test]
    fn cached_directory_matches_index_stream_recomputation() {
        let mut rng = StdRng::seed_from_u64(35);
        let mut state = BufferBankState::new(1 << 14);
        for _ in 0..500 {
            let density = rng.random_range(0.0..1.0);
            let qb = random_sparse(&mut rng, density);
            state.write_block(&encode_block(&qb)).unwrap();
        }
        assert_eq!(state.directory_from_indices(), state.directory);
    }

    #[test]
    fn flip_never_worsens_max_fill_on_codec_like_streams() {
        // Blocks drawn from a top-heavy occupancy profile, the shape the
        // quantizer actually produces.
        let mut rng = StdRng::seed_from_u64(36);
        for _ in 0..20 {
            let mut flipped = BufferBankState::new(1 << 14);
            let mut straight = BufferBankState::with_flip(1 << 14, false);
            for _ in 0..200 {
                let mut q2 = [[0i16; 8]; 8];
                for (i, row) in q2.iter_mut().enumerate() {
                    for (j, v) in row.iter_mut().enumerate() {
                        let p = 0.9 / (1.0 + (i + j) as f64);
                        if rng.random_bool(p) {
                            *v = rng.random_range(1..100);
                        }
                    }
                }
                let e = encode_block(&block_from(q2));
                flipped.write_block(&e).unwrap();
                straight.write_block(&e).unwrap();
            }
            let max_flip = flipped.bank_fills().into_iter().max().unwrap();
            let max_straight = straight.bank_fills().into_iter().max().unwrap();
            assert!(
                max_flip <= max_straight,
                "flip {max_flip} vs straight {max_straight}"
            );
        }
    }
}
