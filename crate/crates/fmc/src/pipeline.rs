//! Fusion-layer orchestration: decompress, convolve, apply the non-linear
//! stage, recompress, and account for every bit moved.
//!
//! A fusion layer is one convolution plus its following normalization /
//! activation / pooling ops executed as a single stream; compression is
//! applied to the layer output when enabled. Whole networks run layer by
//! layer with the two feature-map buffers alternating input/output roles.

use serde::Serialize;

use crate::dct::{dct2_fast, idct2_fast_masked};
use crate::mem::{configure, plan_layer, LayerDemand, TilingPlan, KB};
use crate::pe::{
    conv_decomposed, conv_rf, estimate_cycles, nonlinear, ConvLayer, NonLinearConfig,
    FILTER_GROUP_1X1, FILTER_GROUP_3X3,
};
use crate::quant::{
    dequantize_block, gemm_quantize, gemm_quantize_with_scale, qtable_quantize, select_qtable,
    GemmScale, QTable, QuantizedBlock, CUSTOM_TABLE_LEVEL,
};
use crate::sparse::{decode_block, encode_block};
use crate::stream::EncodedStream;
use crate::types::{tile_into_blocks, untile_blocks, Block8, FeatureMap};
use crate::{Error, Result};

/// Codec parameters for one compression pass.
#[derive(Debug, Clone, Copy)]
pub struct CodecConfig {
    /// Built-in quantization level, 0 (most aggressive) to 3 (gentlest).
    pub level: u8,
    /// Grid width of the min/max quantization stage.
    pub m: u8,
    /// Record one scale per block (default) or one per channel.
    pub per_block_scale: bool,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self {
            level: 1,
            m: 8,
            per_block_scale: true,
        }
    }
}

/// Compresses a feature map with one of the built-in quantization tables.
pub fn compress_featuremap(fm: &FeatureMap, cfg: &CodecConfig) -> Result<EncodedStream> {
    compress_with_table(fm, cfg, &select_qtable(cfg.level)?)
}

/// Compresses with an explicit quantization table. Streams written with a
/// custom table carry the marker level and need the table again to decode.
pub fn compress_with_table(
    fm: &FeatureMap,
    cfg: &CodecConfig,
    qt: &QTable,
) -> Result<EncodedStream> {
    if fm.channels * fm.height * fm.width == 0 {
        return Err(Error::DimensionMismatch("empty feature map".into()));
    }
    let mut blocks = Vec::new();
    let mut channel_scales = Vec::new();
    for c in 0..fm.channels {
        let spatial = tile_into_blocks(fm, c)?;
        let coeffs: Vec<Block8> = spatial.iter().map(dct2_fast).collect();
        if cfg.per_block_scale {
            for z in &coeffs {
                let (q1, scale) = gemm_quantize(z, cfg.m)?;
                blocks.push(encode_block(&QuantizedBlock {
                    q2: qtable_quantize(&q1, qt),
                    scale,
                    level: qt.level(),
                }));
            }
        } else {
            let lo = coeffs
                .iter()
                .flat_map(|z| z.0.iter().flatten())
                .copied()
                .fold(f64::INFINITY, f64::min);
            let hi = coeffs
                .iter()
                .flat_map(|z| z.0.iter().flatten())
                .copied()
                .fold(f64::NEG_INFINITY, f64::max);
            let scale = GemmScale::from_range(lo, hi, cfg.m)?;
            channel_scales.push(scale);
            for z in &coeffs {
                let q1 = gemm_quantize_with_scale(z, &scale);
                blocks.push(encode_block(&QuantizedBlock {
                    q2: qtable_quantize(&q1, qt),
                    scale,
                    level: qt.level(),
                }));
            }
        }
    }
    let stream = EncodedStream {
        channels: fm.channels,
        height: fm.height,
        width: fm.width,
        m: cfg.m,
        level: qt.level(),
        per_block_scale: cfg.per_block_scale,
        channel_scales,
        blocks,
    };
    stream.validate()?;
    Ok(stream)
}

/// Counters from one decompression pass.
#[derive(Debug, Default, Clone, Copy)]
pub struct DecompressStats {
    /// Multiplier activations in the inverse transform; zero coefficients
    /// keep their multipliers off.
    pub idct_mults: u64,
    /// Blocks whose entire inverse transform was skipped.
    pub blocks_skipped: u64,
    pub blocks_total: u64,
}

/// Inverse of [`compress_featuremap`] for streams using built-in tables.
pub fn decompress_featuremap(stream: &EncodedStream) -> Result<FeatureMap> {
    decompress_with_stats(stream, None).map(|(fm, _)| fm)
}

/// Full decompression: decode, inverse quantize, inverse transform. Pass
/// the quantization table for streams compressed with a custom one.
///
/// The inverse-transform skip mask follows the zero pattern of the
/// dequantized coefficients, so masking is always exact; it coincides with
/// the stored occupancy index whenever the quantization grid origin is
/// zero (in particular for all-zero blocks).
pub fn decompress_with_stats(
    stream: &EncodedStream,
    table: Option<&QTable>,
) -> Result<(FeatureMap, DecompressStats)> {
    stream.validate()?;
    let qt = match (table, stream.level) {
        (Some(t), _) => t.clone(),
        (None, CUSTOM_TABLE_LEVEL) => {
            return Err(Error::MalformedStream(
                "stream was quantized with a custom table; supply it to decode".into(),
            ))
        }
        (None, level) => select_qtable(level)?,
    };
    let mut stats = DecompressStats {
        blocks_total: stream.block_count() as u64,
        ..Default::default()
    };
    let bpc = stream.blocks_per_channel();
    let mut fm = FeatureMap::zeros(stream.channels, stream.height, stream.width);
    for c in 0..stream.channels {
        let mut spatial = Vec::with_capacity(bpc);
        for e in &stream.blocks[c * bpc..(c + 1) * bpc] {
            let qb = decode_block(e)?;
            let coeffs = dequantize_block(&qb, &qt)?;
            let mut mask = 0u64;
            for i in 0..8 {
                for j in 0..8 {
                    if coeffs.get(i, j) != 0.0 {
                        mask |= 1 << (8 * i + j);
                    }
                }
            }
            let (block, mults) = idct2_fast_masked(&coeffs, mask);
            stats.idct_mults += mults;
            if mask == 0 {
                stats.blocks_skipped += 1;
            }
            spatial.push(block);
        }
        let data = untile_blocks(&spatial, stream.height, stream.width)?;
        for (i, v) in data.into_iter().enumerate() {
            fm.data[c * stream.height * stream.width + i] = v;
        }
    }
    Ok((fm, stats))
}

/// Data flowing between fusion layers: raw or compressed.
#[derive(Debug, Clone)]
pub enum LayerData {
    Plain(FeatureMap),
    Compressed(EncodedStream),
}

impl LayerData {
    pub fn channels(&self) -> usize {
        match self {
            LayerData::Plain(fm) => fm.channels,
            LayerData::Compressed(s) => s.channels,
        }
    }

    /// On-chip footprint in bytes: compressed record bytes or raw 16-bit
    /// words.
    pub fn storage_bytes(&self) -> usize {
        match self {
            LayerData::Plain(fm) => fm.data.len() * 2,
            LayerData::Compressed(s) => (s.data_bits() / 8) as usize,
        }
    }
}

/// One fusion layer: convolution, non-linear stage, codec settings, and
/// the scratch-pad size to configure.
#[derive(Debug, Clone)]
pub struct FusionLayerConfig {
    pub name: String,
    pub conv: ConvLayer,
    pub nonlinear: NonLinearConfig,
    pub level: u8,
    pub m: u8,
    pub compress: bool,
    pub scratch_kb: usize,
}

/// Per-layer measurements.
#[derive(Debug, Clone, Serialize)]
pub struct LayerReport {
    pub name: String,
    /// Output bits at the layer's storage word width.
    pub origin_bits: u64,
    /// Compressed record bits (index + scales + payload words).
    pub compressed_bits: u64,
    /// `compressed_bits / origin_bits`; 1.0 for bypass layers.
    pub ratio: f64,
    /// Same records with payload words at the logical grid width.
    pub compressed_bits_logical: u64,
    /// Full container size on disk, overhead included.
    pub container_bytes: u64,
    /// Reconstruction error of the compressed output against the
    /// uncompressed same-arithmetic output.
    pub max_abs_error: f64,
    /// None when the roundtrip is exact.
    pub psnr_db: Option<f64>,
    pub tiling: TilingPlan,
    pub cycles: u64,
    pub input_buffer: char,
    pub output_buffer: char,
}

fn error_and_psnr(reference: &FeatureMap, test: &FeatureMap) -> (f64, Option<f64>) {
    let max_err = reference.max_abs_diff(test);
    let n = reference.data.len() as f64;
    let mse = reference
        .data
        .iter()
        .zip(&test.data)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n;
    let lo = reference.data.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = reference
        .data
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let peak = hi - lo;
    if mse == 0.0 || peak <= 0.0 {
        (max_err, None)
    } else {
        (max_err, Some(10.0 * (peak * peak / mse).log10()))
    }
}

/// Runs one fusion layer: decompress if needed, convolve through the
/// row-frame path (decomposing kernels above 3x3), apply the non-linear
/// ops, then compress the output when configured.
pub fn run_fusion_layer(
    input: LayerData,
    cfg: &FusionLayerConfig,
    input_buffer: char,
) -> Result<(LayerData, LayerReport)> {
    let input_bytes = input.storage_bytes();
    let fm_in = match input {
        LayerData::Plain(fm) => fm,
        LayerData::Compressed(s) => decompress_featuremap(&s)?,
    };
    if fm_in.channels != cfg.conv.in_channels {
        return Err(Error::DimensionMismatch(format!(
            "input has {} channels, convolution expects {}",
            fm_in.channels, cfg.conv.in_channels
        )));
    }

    let conv_out = if cfg.conv.kernel <= 3 {
        conv_rf(&fm_in, &cfg.conv)?
    } else {
        conv_decomposed(&fm_in, &cfg.conv)?
    };
    let (conv_h, conv_w) = (conv_out.height, conv_out.width);
    let nl_out = nonlinear(&conv_out, &cfg.nonlinear)?;

    let word_bits = u64::from(nl_out.format.total_bits());
    let origin_bits = nl_out.data.len() as u64 * word_bits;
    let cycles = estimate_cycles(&cfg.conv, fm_in.height, fm_in.width);

    let in_flight = if cfg.conv.kernel == 1 {
        FILTER_GROUP_1X1
    } else {
        FILTER_GROUP_3X3
    };
    let codec = CodecConfig {
        level: cfg.level,
        m: cfg.m,
        per_block_scale: true,
    };

    let (output, compressed_bits, logical_bits, container_bytes, max_err, psnr) = if cfg.compress {
        let stream = compress_featuremap(&nl_out, &codec)?;
        let reconstructed = decompress_featuremap(&stream)?;
        let (max_err, psnr) = error_and_psnr(&nl_out, &reconstructed);
        (
            LayerData::Compressed(stream.clone()),
            stream.data_bits(),
            stream.logical_bits(),
            stream.to_bytes().len() as u64,
            max_err,
            psnr,
        )
    } else {
        (
            LayerData::Plain(nl_out.clone()),
            origin_bits,
            origin_bits,
            nl_out.data.len() as u64 * 2,
            0.0,
            None,
        )
    };

    let demand = LayerDemand {
        input_bytes,
        output_bytes: output.storage_bytes(),
        psum_bytes: conv_h * conv_w * in_flight * 4,
        row_frames: fm_in.row_frame_count(),
    };
    let layout = configure(cfg.scratch_kb * KB)?;
    let tiling = plan_layer(&demand, &layout)?;

    let report = LayerReport {
        name: cfg.name.clone(),
        origin_bits,
        compressed_bits,
        ratio: compressed_bits as f64 / origin_bits as f64,
        compressed_bits_logical: logical_bits,
        container_bytes,
        max_abs_error: max_err,
        psnr_db: psnr,
        tiling,
        cycles,
        input_buffer,
        output_buffer: if input_buffer == 'A' { 'B' } else { 'A' },
    };
    Ok((output, report))
}

/// Whole-run totals. The overall ratio covers compressed layers only.
#[derive(Debug, Clone, Serialize)]
pub struct NetworkSummary {
    pub layers: usize,
    pub compressed_layers: usize,
    pub total_origin_bits: u64,
    pub total_compressed_bits: u64,
    pub overall_ratio: f64,
    pub total_cycles: u64,
    pub total_spill_bytes: u64,
}

/// Runs the layers sequentially, alternating the ping-pong buffer roles,
/// and aggregates the per-layer reports.
pub fn run_network(
    layers: &[FusionLayerConfig],
    input: FeatureMap,
) -> Result<(Vec<LayerReport>, NetworkSummary)> {
    let mut data = LayerData::Plain(input);
    let mut reports = Vec::with_capacity(layers.len());
    for (i, cfg) in layers.iter().enumerate() {
        if data.channels() != cfg.conv.in_channels {
            return Err(Error::DimensionMismatch(format!(
                "layer '{}' expects {} input channels, previous layer produced {}",
                cfg.name,
                cfg.conv.in_channels,
                data.channels()
            )));
        }
        let input_buffer = if i % 2 == 0 { 'A' } else { 'B' };
        let (out, report) = run_fusion_layer(data, cfg, input_buffer).map_err(|e| match e {
            Error::DimensionMismatch(m) => {
                Error::DimensionMismatch(format!("layer '{}': {m}", cfg.name))
            }
            Error::InfeasiblePlan(m) => Error::InfeasiblePlan(format!("layer '{}': {m}", cfg.name)),
            other => other,
        })?;
        reports.push(report);
        data = out;
    }
    let compressed: Vec<&LayerReport> = reports
        .iter()
        .zip(layers)
        .filter(|(_, c)| c.compress)
        .map(|(r, _)| r)
        .collect();
    let total_origin_bits: u64 = compressed.iter().map(|r| r.origin_bits).sum();
    let total_compressed_bits: u64 = compressed.iter().map(|r| r.compressed_bits).sum();
    let summary = NetworkSummary {
        layers: layers.len(),
        compressed_layers: compressed.len(),
        total_origin_bits,
        total_compressed_bits,
        overall_ratio: if total_origin_bits == 0 {
            1.0
        } else {
            total_compressed_bits as f64 / total_origin_bits as f64
        },
        total_cycles: reports.iter().map(|r| r.cycles).sum(),
        total_spill_bytes: reports.iter().map(|r| r.tiling.spill_bytes as u64).sum(),
    };
    Ok((reports, summary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pe::{conv_direct, ConvMode, NlOp};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use std::f64::consts::PI;

    /// Non-negative slow-varying content with a dominant per-block DC, the
    /// profile interlayer feature maps have after an activation. At most
    /// half a cosine cycle spans the map in each direction.
    fn smooth_map(h: usize, w: usize) -> FeatureMap {
        FeatureMap::from_fn(1, h, w, |_, y, x| {
            let (yf, xf) = (y as f64, x as f64);
            80.0 + 40.0 * (2.0 * PI * yf / (2 * h) as f64).cos()
                + 25.0 * (2.0 * PI * xf / (2 * w) as f64).cos()
                + 12.0 * (2.0 * PI * (xf + yf) / (2 * (h + w)) as f64).cos()
        })
    }

    fn noise_map(h: usize, w: usize, lo: f64, hi: f64, seed: u64) -> FeatureMap {
        let mut rng = StdRng::seed_from_u64(seed);
        FeatureMap::from_fn(1, h, w, |_, _, _| rng.random_range(lo..hi))
    }

    fn value_range(fm: &FeatureMap) -> (f64, f64) {
        let lo = fm.data.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = fm.data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }

    #[test]
    fn all_zero_map_compresses_to_indices_and_scales() {
        let fm = FeatureMap::zeros(2, 16, 16);
        let cfg = CodecConfig::default();
        let stream = compress_featuremap(&fm, &cfg).unwrap();
        assert!(stream.blocks.iter().all(|b| b.index.0 == 0));
        let blocks = stream.block_count() as u64;
        assert_eq!(stream.data_bits(), blocks * (64 + 64));
        let (back, stats) = decompress_with_stats(&stream, None).unwrap();
        assert_eq!(back.data, fm.data);
        assert_eq!(stats.idct_mults, 0);
        assert_eq!(stats.blocks_skipped, blocks);
    }

    #[test]
    fn roundtrip_preserves_dimensions() {
        let mut rng = StdRng::seed_from_u64(71);
        for (c, h, w) in [(1, 9, 13), (3, 8, 8), (2, 30, 17)] {
            let fm = FeatureMap::from_fn(c, h, w, |_, _, _| rng.random_range(-10.0..10.0));
            let stream = compress_featuremap(&fm, &CodecConfig::default()).unwrap();
            let back = decompress_featuremap(&stream).unwrap();
            assert_eq!((back.channels, back.height, back.width), (c, h, w));
        }
    }

    #[test]
    fn smooth_input_stores_fewer_values_than_noise() {
        let smooth = smooth_map(16, 16);
        let (lo, hi) = value_range(&smooth);
        let noise = noise_map(16, 16, lo, hi, 72);
        let cfg = CodecConfig::default();
        let s1 = compress_featuremap(&smooth, &cfg).unwrap();
        let s2 = compress_featuremap(&noise, &cfg).unwrap();
        let payload = |s: &EncodedStream| -> usize { s.blocks.iter().map(|b| b.payload.len()).sum() };
        assert!(
            payload(&s1) < payload(&s2),
            "smooth {} vs noise {}",
            payload(&s1),
            payload(&s2)
        );
    }

    #[test]
    fn identity_table_roundtrip_meets_grid_bound() {
        let mut rng = StdRng::seed_from_u64(73);
        let qt = QTable::ones();
        let cfg = CodecConfig {
            level: 0,
            m: 8,
            per_block_scale: true,
        };
        for _ in 0..50 {
            let (c, h, w) = (
                rng.random_range(1..3usize),
                rng.random_range(4..20usize),
                rng.random_range(4..20usize),
            );
            let fm = FeatureMap::from_fn(c, h, w, |_, _, _| rng.random_range(-40.0..40.0));
            let stream = compress_with_table(&fm, &cfg, &qt).unwrap();
            let (back, _) = decompress_with_stats(&stream, Some(&qt)).unwrap();
            // Per-block bound: 4 * range / (2^8 - 1), checked region by
            // region against each block's recorded scale.
            let bpc = stream.blocks_per_channel();
            let per_row = w.div_ceil(8);
            for (n, b) in stream.blocks.iter().enumerate() {
                let ch = n / bpc;
                let local = n % bpc;
                let by = (local / per_row) * 8;
                let bx = (local % per_row) * 8;
                let bound =
                    4.0 * f64::from(b.scale.f_max - b.scale.f_min) / 255.0 + 1e-9;
                for i in 0..8 {
                    for j in 0..8 {
                        let (y, x) = (by + i, bx + j);
                        if y < h && x < w {
                            let err = (back.get(ch, y, x) - fm.get(ch, y, x)).abs();
                            assert!(
                                err <= bound,
                                "block {n} pixel ({y},{x}): {err} > {bound}"
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn gentler_level_gives_higher_fidelity() {
        let fm = smooth_map(64, 64);
        let mk = |level| CodecConfig {
            level,
            m: 8,
            per_block_scale: true,
        };
        let s0 = compress_featuremap(&fm, &mk(0)).unwrap();
        let s3 = compress_featuremap(&fm, &mk(3)).unwrap();
        let r0 = decompress_featuremap(&s0).unwrap();
        let r3 = decompress_featuremap(&s3).unwrap();
        let (_, p0) = error_and_psnr(&fm, &r0);
        let (_, p3) = error_and_psnr(&fm, &r3);
        assert!(
            p3.unwrap() > p0.unwrap(),
            "psnr level3 {:?} <= level0 {:?}",
            p3,
            p0
        );
    }

    #[test]
    fn custom_table_stream_requires_the_table() {
        let fm = smooth_map(16, 16);
        let qt = QTable::ones();
        let stream = compress_with_table(&fm, &CodecConfig::default(), &qt).unwrap();
        assert!(decompress_featuremap(&stream).is_err());
        assert!(decompress_with_stats(&stream, Some(&qt)).is_ok());
    }

    fn small_layer(
        rng: &mut StdRng,
        c: usize,
        f: usize,
        compress: bool,
        level: u8,
    ) -> FusionLayerConfig {
        let weights = (0..f * c * 9)
            .map(|_| rng.random_range(-0.5..0.5))
            .collect();
        FusionLayerConfig {
            name: format!("conv{c}x{f}"),
            conv: ConvLayer::new(c, f, 3, 1, 1, weights, ConvMode::Standard).unwrap(),
            nonlinear: NonLinearConfig::new(vec![NlOp::Relu]).unwrap(),
            level,
            m: 8,
            compress,
            scratch_kb: 64,
        }
    }

    #[test]
    fn bypass_layer_reproduces_direct_path_exactly() {
        let mut rng = StdRng::seed_from_u64(74);
        let fm = FeatureMap::from_fn(2, 12, 12, |_, _, _| f64::from(rng.random_range(-20..20)));
        // Integer weights: the row-frame path is then bit-identical to the
        // direct oracle, so the bypass comparison is exact.
        let mut cfg = small_layer(&mut rng, 2, 3, false, 1);
        for w in &mut cfg.conv.weights {
            *w = w.signum() * (w.abs() * 16.0).round();
        }
        let reference =
            nonlinear(&conv_direct(&fm, &cfg.conv).unwrap(), &cfg.nonlinear).unwrap();
        let (out, report) = run_fusion_layer(LayerData::Plain(fm), &cfg, 'A').unwrap();
        match out {
            LayerData::Plain(got) => assert_eq!(got.data, reference.data),
            LayerData::Compressed(_) => panic!("bypass layer must stay uncompressed"),
        }
        assert_eq!(report.ratio, 1.0);
        assert_eq!(report.max_abs_error, 0.0);
        assert!(report.psnr_db.is_none());
    }

    #[test]
    fn two_layer_compressed_run_obeys_propagated_bound() {
        let mut rng = StdRng::seed_from_u64(75);
        let fm = smooth_map(32, 32);
        let l1 = small_layer(&mut rng, 1, 2, true, 3);
        let l2 = small_layer(&mut rng, 2, 1, true, 3);

        // Uncompressed reference chain.
        let ref1 = nonlinear(&conv_direct(&fm, &l1.conv).unwrap(), &l1.nonlinear).unwrap();
        let ref2 = nonlinear(&conv_direct(&ref1, &l2.conv).unwrap(), &l2.nonlinear).unwrap();

        let (out1, rep1) = run_fusion_layer(LayerData::Plain(fm), &l1, 'A').unwrap();
        let (out2, rep2) = run_fusion_layer(out1, &l2, 'B').unwrap();
        let got2 = match out2 {
            LayerData::Compressed(s) => decompress_featuremap(&s).unwrap(),
            LayerData::Plain(fm) => fm,
        };

        // Layer-1 reconstruction error propagates through conv2 by at most
        // the max absolute row sum of its weights (relu is 1-Lipschitz),
        // then layer 2 adds its own reconstruction error.
        let w_norm: f64 = (0..l2.conv.out_channels)
            .map(|f| {
                (0..l2.conv.in_channels)
                    .map(|c| {
                        (0..9)
                            .map(|ij| l2.conv.weight(f, c, ij / 3, ij % 3).abs())
                            .sum::<f64>()
                    })
                    .sum::<f64>()
            })
            .fold(0.0, f64::max);
        let bound = rep1.max_abs_error * w_norm + rep2.max_abs_error + 1e-9;
        let diff = ref2.max_abs_diff(&got2);
        assert!(diff <= bound, "{diff} > propagated bound {bound}");
    }

    #[test]
    fn network_run_alternates_buffers_and_totals_ratio() {
        let mut rng = StdRng::seed_from_u64(76);
        let fm = smooth_map(32, 32);
        let layers = vec![
            small_layer(&mut rng, 1, 2, true, 1),
            small_layer(&mut rng, 2, 2, true, 1),
            small_layer(&mut rng, 2, 1, false, 1),
        ];
        let (reports, summary) = run_network(&layers, fm).unwrap();
        assert_eq!(reports.len(), 3);
        assert_eq!(
            reports.iter().map(|r| r.input_buffer).collect::<Vec<_>>(),
            vec!['A', 'B', 'A']
        );
        for r in &reports {
            assert_ne!(r.input_buffer, r.output_buffer);
        }
        assert_eq!(summary.compressed_layers, 2);
        let expect = (reports[0].compressed_bits + reports[1].compressed_bits) as f64
            / (reports[0].origin_bits + reports[1].origin_bits) as f64;
        assert!((summary.overall_ratio - expect).abs() < 1e-12);
    }

    #[test]
    fn all_zero_input_layer_pays_only_index_and_scale_overhead() {
        let mut rng = StdRng::seed_from_u64(83);
        let layers = vec![
            small_layer(&mut rng, 1, 2, true, 1),
            small_layer(&mut rng, 2, 1, true, 1),
        ];
        let fm = FeatureMap::zeros(1, 16, 16);
        let (reports, _) = run_network(&layers, fm).unwrap();
        // Zero input convolves to a zero map: every block is empty and the
        // layer's compressed size is exactly index + scale per block.
        let blocks = (16usize.div_ceil(8) * 16usize.div_ceil(8) * 2) as u64;
        assert_eq!(reports[0].compressed_bits, blocks * (64 + 64));
        assert_eq!(reports[0].max_abs_error, 0.0);
    }

    #[test]
    fn uncompressed_network_reports_unit_ratio() {
        let mut rng = StdRng::seed_from_u64(77);
        let fm = noise_map(16, 16, -5.0, 5.0, 78);
        let layers = vec![small_layer(&mut rng, 1, 1, false, 1)];
        let (_, summary) = run_network(&layers, fm).unwrap();
        assert_eq!(summary.overall_ratio, 1.0);
        assert_eq!(summary.compressed_layers, 0);
    }

    #[test]
    fn channel_mismatch_names_the_layer() {
        let mut rng = StdRng::seed_from_u64(79);
        let fm = noise_map(16, 16, -5.0, 5.0, 80);
        let layers = vec![small_layer(&mut rng, 3, 1, false, 1)];
        let err = run_network(&layers, fm).unwrap_err();
        assert!(err.to_string().contains("conv3x1"), "{err}");
    }

    #[test]
    fn smooth_network_compresses_better_than_noise() {
        let mut rng = StdRng::seed_from_u64(81);
        let layers = vec![
            small_layer(&mut rng, 1, 2, true, 1),
            small_layer(&mut rng, 2, 2, true, 1),
            small_layer(&mut rng, 2, 1, true, 1),
        ];
        let smooth = smooth_map(64, 64);
        let (lo, hi) = value_range(&smooth);
        let noise = noise_map(64, 64, lo, hi, 82);
        let (_, s_smooth) = run_network(&layers, smooth).unwrap();
        let (_, s_noise) = run_network(&layers, noise).unwrap();
        assert!(
            s_smooth.overall_ratio < s_noise.overall_ratio,
            "smooth {} vs noise {}",
            s_smooth.overall_ratio,
            s_noise.overall_ratio
        );
    }
}
