//! Functional model of the PE array and its dataflow.
//!
//! [`conv_direct`] is the literal quadruple-loop convolution and serves as
//! the oracle for everything else. [`conv_rf`] computes the same result by
//! streaming 8-row frames column by column through a modeled PE group: six
//! of the eight row slots per frame complete inside the frame, while rows
//! whose kernel window crosses a frame boundary are spliced from two
//! partial sums held in the scratch pad (the previous frame deposits, the
//! next frame completes). Kernels above 3x3 are decomposed into 3x3 tiles
//! that each run through the row-frame path.
//!
//! The model is functional, not clocked: the PE structure constrains the
//! computation order and the splice bookkeeping, arithmetic is evaluated
//! eagerly in f64 (exact for integer data).

use std::collections::HashMap;

use crate::types::{FeatureMap, RowFrame};
use crate::{Error, Result};

/// PE multipliers active in 3x3 mode: 32 PE units of 9.
pub const PES_3X3: usize = 288;
/// In 1x1 mode one multiplier per PE unit is off.
pub const PES_1X1: usize = 256;
/// Input channels processed in parallel.
pub const CHANNEL_GROUP: usize = 4;
/// Output filters rotated through in 3x3 mode / computed at once in 1x1.
pub const FILTER_GROUP_3X3: usize = 4;
pub const FILTER_GROUP_1X1: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvMode {
    Standard,
    Depthwise,
}

/// One convolution layer: geometry plus flat weights.
#[derive(Debug, Clone)]
pub struct ConvLayer {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub weights: Vec<f64>,
    pub mode: ConvMode,
}

impl ConvLayer {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        weights: Vec<f64>,
        mode: ConvMode,
    ) -> Result<Self> {
        if !(1..=7).contains(&kernel) {
            return Err(Error::KernelSize(kernel, "1..=7"));
        }
        if stride != 1 && stride != 2 {
            return Err(Error::DimensionMismatch(format!(
                "stride {stride} unsupported (1 or 2)"
            )));
        }
        let expect = match mode {
            ConvMode::Standard => out_channels * in_channels * kernel * kernel,
            ConvMode::Depthwise => {
                if out_channels != in_channels {
                    return Err(Error::DimensionMismatch(format!(
                        "depthwise layer needs out == in channels, got {out_channels} vs \
                         {in_channels}"
                    )));
                }
                in_channels * kernel * kernel
            }
        };
        if weights.len() != expect {
            return Err(Error::DimensionMismatch(format!(
                "layer needs {expect} weights, got {}",
                weights.len()
            )));
        }
        Ok(Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            weights,
            mode,
        })
    }

    #[inline]
    pub fn weight(&self, f: usize, c: usize, i: usize, j: usize) -> f64 {
        let k = self.kernel;
        match self.mode {
            ConvMode::Standard => self.weights[((f * self.in_channels + c) * k + i) * k + j],
            ConvMode::Depthwise => {
                debug_assert_eq!(f, c);
                self.weights[(c * k + i) * k + j]
            }
        }
    }

    /// Input channels feeding output filter `f`.
    fn filter_channels(&self, f: usize) -> std::ops::Range<usize> {
        match self.mode {
            ConvMode::Standard => 0..self.in_channels,
            ConvMode::Depthwise => f..f + 1,
        }
    }

    pub fn out_dims(&self, in_h: usize, in_w: usize) -> Result<(usize, usize)> {
        let span_h = in_h + 2 * self.padding;
        let span_w = in_w + 2 * self.padding;
        if span_h < self.kernel || span_w < self.kernel {
            return Err(Error::DimensionMismatch(format!(
                "kernel {} does not fit {}x{} input with padding {}",
                self.kernel, in_h, in_w, self.padding
            )));
        }
        Ok((
            (span_h - self.kernel) / self.stride + 1,
            (span_w - self.kernel) / self.stride + 1,
        ))
    }
}

fn check_channels(input: &FeatureMap, layer: &ConvLayer) -> Result<()> {
    if input.channels != layer.in_channels {
        return Err(Error::DimensionMismatch(format!(
            "input has {} channels, layer expects {}",
            input.channels, layer.in_channels
        )));
    }
    Ok(())
}

/// Literal quadruple-loop convolution: the oracle. Zero padding, no bias.
pub fn conv_direct(input: &FeatureMap, layer: &ConvLayer) -> Result<FeatureMap> {
    check_channels(input, layer)?;
    let (out_h, out_w) = layer.out_dims(input.height, input.width)?;
    let mut out = FeatureMap::zeros(layer.out_channels, out_h, out_w);
    let (k, s, p) = (layer.kernel, layer.stride, layer.padding as isize);
    for f in 0..layer.out_channels {
        for r in 0..out_h {
            for c in 0..out_w {
                let mut acc = 0.0;
                for ch in layer.filter_channels(f) {
                    for i in 0..k {
                        let y = (r * s + i) as isize - p;
                        if y < 0 || y >= input.height as isize {
                            continue;
                        }
                        for j in 0..k {
                            let x = (c * s + j) as isize - p;
                            if x < 0 || x >= input.width as isize {
                                continue;
                            }
                            acc += input.get(ch, y as usize, x as usize)
                                * layer.weight(f, ch, i, j);
                        }
                    }
                }
                out.set(f, r, c, acc);
            }
        }
    }
    Ok(out)
}

/// Splice bookkeeping for one row-frame sweep.
///
/// `carry` holds partial output rows deposited by the frame whose kernel
/// windows reach past its bottom edge; the next frame consumes each entry
/// exactly once when it completes the row.
#[derive(Debug, Default)]
pub struct PsumBank {
    carry: HashMap<(usize, usize), Vec<f64>>,
    /// (filter, output row, frame that deposited).
    pub deposits: Vec<(usize, usize, usize)>,
    /// (filter, output row, frame that consumed).
    pub consumes: Vec<(usize, usize, usize)>,
}

impl PsumBank {
    fn deposit(&mut self, f: usize, row: usize, rf: usize, out_w: usize) -> &mut Vec<f64> {
        self.carry.entry((f, row)).or_insert_with(|| {
            self.deposits.push((f, row, rf));
            vec![0.0; out_w]
        })
    }

    fn consume(&mut self, f: usize, row: usize, rf: usize) -> Option<Vec<f64>> {
        let v = self.carry.remove(&(f, row));
        if v.is_some() {
            self.consumes.push((f, row, rf));
        }
        v
    }

    pub fn outstanding(&self) -> usize {
        self.carry.len()
    }
}

/// Counters from one row-frame convolution.
#[derive(Debug, Default)]
pub struct RfStats {
    /// Modeled multipliers active for this layer's mode.
    pub active_pes: usize,
    /// (filter, output row, frame) of each cross-frame partial deposit.
    pub deposits: Vec<(usize, usize, usize)>,
    /// (filter, output row, frame) of each merge of a deposited partial.
    pub consumes: Vec<(usize, usize, usize)>,
}

/// How one output row relates to the frame being processed.
#[derive(Debug, Clone, Copy)]
struct RowTask {
    row: usize,
    /// Kernel window extends into the next frame: partials go to the carry.
    crosses_down: bool,
    /// Kernel window started in the previous frame: merge its carry when
    /// this row completes.
    crosses_up: bool,
}

/// Output rows whose kernel window intersects frame `rf`, with their
/// splice classification. Rows whose window holds no real input rows never
/// appear (their output is pure zero padding).
fn frame_row_tasks(rf: usize, out_h: usize, in_h: usize, layer: &ConvLayer) -> Vec<RowTask> {
    let (k, s, p) = (
        layer.kernel as isize,
        layer.stride as isize,
        layer.padding as isize,
    );
    let lo = 8 * rf as isize;
    let hi = lo + 7;
    let mut tasks = Vec::new();
    for row in 0..out_h {
        let ws = row as isize * s - p;
        let first = ws.max(0);
        let last = (ws + k - 1).min(in_h as isize - 1);
        if first > last || first > hi || last < lo {
            continue;
        }
        // The frame holding the window's last real row owns the completion;
        // last >= lo already guarantees own >= rf.
        let own = (last / 8) as usize;
        tasks.push(RowTask {
            row,
            crosses_down: own > rf,
            crosses_up: first < lo,
        });
    }
    tasks
}

/// Row-frame convolution: streams 8-row frames through the modeled PE
/// group, accumulating channels in groups of four and filters in groups of
/// four (3x3) or eight (1x1). Matches [`conv_direct`] exactly on integer
/// data. Kernels above 3x3 must be decomposed first.
pub fn conv_rf(input: &FeatureMap, layer: &ConvLayer) -> Result<FeatureMap> {
    conv_rf_with_stats(input, layer).map(|(fm, _)| fm)
}

pub fn conv_rf_with_stats(input: &FeatureMap, layer: &ConvLayer) -> Result<(FeatureMap, RfStats)> {
    check_channels(input, layer)?;
    if layer.kernel > 3 {
        return Err(Error::KernelSize(
            layer.kernel,
            "row-frame path supports up to 3; decompose larger kernels",
        ));
    }
    let (out_h, out_w) = layer.out_dims(input.height, input.width)?;
    let (k, s, p) = (layer.kernel, layer.stride, layer.padding as isize);
    let filter_group = if k == 1 {
        FILTER_GROUP_1X1
    } else {
        FILTER_GROUP_3X3
    };

    let mut out = FeatureMap::zeros(layer.out_channels, out_h, out_w);
    let mut psum = PsumBank::default();
    let num_rfs = input.row_frame_count();

    for rf in 0..num_rfs {
        let frames: Vec<RowFrame> = (0..input.channels)
            .map(|ch| input.row_frame(ch, rf))
            .collect::<Result<_>>()?;
        let tasks = frame_row_tasks(rf, out_h, input.height, layer);
        let lo = 8 * rf as isize;

        for fg in (0..layer.out_channels).step_by(filter_group) {
            let fg_end = (fg + filter_group).min(layer.out_channels);
            for f in fg..fg_end {
                let channels = layer.filter_channels(f);
                for cg in channels.clone().step_by(CHANNEL_GROUP) {
                    let cg_end = (cg + CHANNEL_GROUP).min(channels.end);
                    for task in &tasks {
                        let ws = task.row as isize * s as isize - p;
                        // Contribution of this frame's rows to the output row,
                        // streamed one column at a time.
                        let mut partial: Option<&mut Vec<f64>> = None;
                        if task.crosses_down {
                            partial = Some(psum.deposit(f, task.row, rf, out_w));
                        }
                        for col in 0..out_w {
                            let mut acc = 0.0;
                            for ch in cg..cg_end {
                                for ki in 0..k {
                                    let y = ws + ki as isize;
                                    if y < lo || y > lo + 7 {
                                        continue;
                                    }
                                    let local = (y - lo) as usize;
                                    for kj in 0..k {
                                        let x = (col * s + kj) as isize - p;
                                        if x < 0 || x >= input.width as isize {
                                            continue;
                                        }
                                        acc += frames[ch].get(local, x as usize)
                                            * layer.weight(f, ch, ki, kj);
                                    }
                                }
                            }
                            match &mut partial {
                                Some(row) => row[col] += acc,
                                None => {
                                    let prev = out.get(f, task.row, col);
                                    out.set(f, task.row, col, prev + acc);
                                }
                            }
                        }
                    }
                }
            }
        }

        // Rows completing in this frame splice in the previous frame's
        // deposit.
        for task in &tasks {
            if task.crosses_up && !task.crosses_down {
                for f in 0..layer.out_channels {
                    if let Some(carried) = psum.consume(f, task.row, rf) {
                        for (col, v) in carried.into_iter().enumerate() {
                            let prev = out.get(f, task.row, col);
                            out.set(f, task.row, col, prev + v);
                        }
                    }
                }
            }
        }
    }

    debug_assert_eq!(psum.outstanding(), 0, "unconsumed cross-frame partials");
    let stats = RfStats {
        active_pes: if k == 1 { PES_1X1 } else { PES_3X3 },
        deposits: psum.deposits,
        consumes: psum.consumes,
    };
    Ok((out, stats))
}

/// One 3x3 tile of a decomposed large kernel, with its offset inside the
/// padded original.
#[derive(Debug, Clone)]
pub struct SubKernel {
    pub row_offset: usize,
    pub col_offset: usize,
    /// Same layout as the parent layer's weights, kernel size 3.
    pub weights: Vec<f64>,
}

/// Splits a 4..7 kernel into `ceil(K/3)^2` disjoint 3x3 tiles (the kernel
/// is zero-padded up to the tile grid). Summing the offset-shifted
/// sub-convolutions reproduces the original convolution.
pub fn decompose_kernel(layer: &ConvLayer) -> Result<Vec<SubKernel>> {
    if !(4..=7).contains(&layer.kernel) {
        return Err(Error::KernelSize(layer.kernel, "4..=7"));
    }
    let k = layer.kernel;
    let tiles = k.div_ceil(3);
    let filters = match layer.mode {
        ConvMode::Standard => layer.out_channels,
        ConvMode::Depthwise => layer.in_channels,
    };
    let per_filter_channels = match layer.mode {
        ConvMode::Standard => layer.in_channels,
        ConvMode::Depthwise => 1,
    };
    let mut subs = Vec::with_capacity(tiles * tiles);
    for tr in 0..tiles {
        for tc in 0..tiles {
            let mut weights = vec![0.0; filters * per_filter_channels * 9];
            for f in 0..filters {
                for c in 0..per_filter_channels {
                    for i in 0..3 {
                        for j in 0..3 {
                            let (ki, kj) = (3 * tr + i, 3 * tc + j);
                            if ki < k && kj < k {
                                let src = match layer.mode {
                                    ConvMode::Standard => layer.weight(f, c, ki, kj),
                                    ConvMode::Depthwise => layer.weight(f, f, ki, kj),
                                };
                                weights[((f * per_filter_channels + c) * 3 + i) * 3 + j] = src;
                            }
                        }
                    }
                }
            }
            subs.push(SubKernel {
                row_offset: 3 * tr,
                col_offset: 3 * tc,
                weights,
            });
        }
    }
    Ok(subs)
}

/// Runs a 4..7-kernel layer as the sum of its decomposed 3x3 tiles, each
/// streamed through the row-frame path over a shifted view of the input.
pub fn conv_decomposed(input: &FeatureMap, layer: &ConvLayer) -> Result<FeatureMap> {
    check_channels(input, layer)?;
    let subs = decompose_kernel(layer)?;
    let (out_h, out_w) = layer.out_dims(input.height, input.width)?;
    let s = layer.stride;
    let shifted_h = (out_h - 1) * s + 3;
    let shifted_w = (out_w - 1) * s + 3;
    let p = layer.padding as isize;

    let mut out = FeatureMap::zeros(layer.out_channels, out_h, out_w);
    for sub in subs {
        let (dr, dc) = (sub.row_offset as isize, sub.col_offset as isize);
        let shifted = FeatureMap::from_fn(input.channels, shifted_h, shifted_w, |c, y, x| {
            let sy = y as isize + dr - p;
            let sx = x as isize + dc - p;
            if sy < 0 || sx < 0 || sy >= input.height as isize || sx >= input.width as isize {
                0.0
            } else {
                input.get(c, sy as usize, sx as usize)
            }
        });
        let sub_layer = ConvLayer::new(
            layer.in_channels,
            layer.out_channels,
            3,
            s,
            0,
            sub.weights,
            layer.mode,
        )?;
        let partial = conv_rf(&shifted, &sub_layer)?;
        for (o, v) in out.data.iter_mut().zip(&partial.data) {
            *o += v;
        }
    }
    Ok(out)
}

/// Subsamples a stride-1 convolution result at even row/column indices,
/// the functional effect of the column-bypass stride-2 mode.
pub fn apply_stride2(stride1_output: &FeatureMap) -> FeatureMap {
    let out_h = stride1_output.height.div_ceil(2);
    let out_w = stride1_output.width.div_ceil(2);
    FeatureMap::from_fn(stride1_output.channels, out_h, out_w, |c, y, x| {
        stride1_output.get(c, 2 * y, 2 * x)
    })
}

/// One step of the non-linear module.
#[derive(Debug, Clone)]
pub enum NlOp {
    Relu,
    LeakyRelu(f64),
    /// Per-channel negative slope.
    PRelu(Vec<f64>),
    BatchNorm {
        gamma: Vec<f64>,
        beta: Vec<f64>,
        mean: Vec<f64>,
        var: Vec<f64>,
        eps: f64,
    },
    MaxPool {
        k: usize,
        s: usize,
    },
    AvgPool {
        k: usize,
        s: usize,
    },
}

impl NlOp {
    fn is_pool(&self) -> bool {
        matches!(self, NlOp::MaxPool { .. } | NlOp::AvgPool { .. })
    }
}

/// Ordered list of non-linear steps: at most three ops, at most one of
/// them pooling. Order is applied as configured.
#[derive(Debug, Clone, Default)]
pub struct NonLinearConfig {
    ops: Vec<NlOp>,
}

impl NonLinearConfig {
    pub fn new(ops: Vec<NlOp>) -> Result<Self> {
        if ops.len() > 3 {
            return Err(Error::BadNonLinearConfig(format!(
                "{} ops, at most 3 allowed",
                ops.len()
            )));
        }
        if ops.iter().filter(|op| op.is_pool()).count() > 1 {
            return Err(Error::BadNonLinearConfig(
                "at most one pooling op allowed".into(),
            ));
        }
        Ok(Self { ops })
    }

    pub fn none() -> Self {
        Self { ops: Vec::new() }
    }

    pub fn ops(&self) -> &[NlOp] {
        &self.ops
    }
}

fn pool(
    fm: &FeatureMap,
    k: usize,
    s: usize,
    mut combine: impl FnMut(&[f64]) -> f64,
) -> Result<FeatureMap> {
    if k == 0 || s == 0 || fm.height < k || fm.width < k {
        return Err(Error::DimensionMismatch(format!(
            "pooling {k}x{k}/{s} does not fit {}x{}",
            fm.height, fm.width
        )));
    }
    let out_h = (fm.height - k) / s + 1;
    let out_w = (fm.width - k) / s + 1;
    let mut window = Vec::with_capacity(k * k);
    let mut out = FeatureMap::zeros(fm.channels, out_h, out_w);
    for c in 0..fm.channels {
        for y in 0..out_h {
            for x in 0..out_w {
                window.clear();
                for i in 0..k {
                    for j in 0..k {
                        window.push(fm.get(c, y * s + i, x * s + j));
                    }
                }
                out.set(c, y, x, combine(&window));
            }
        }
    }
    Ok(out)
}

fn check_per_channel(name: &str, len: usize, channels: usize) -> Result<()> {
    if len != channels {
        return Err(Error::DimensionMismatch(format!(
            "{name} has {len} entries for {channels} channels"
        )));
    }
    Ok(())
}

/// Applies the configured non-linear ops in order.
pub fn nonlinear(fm: &FeatureMap, cfg: &NonLinearConfig) -> Result<FeatureMap> {
    let mut cur = fm.clone();
    for op in cfg.ops() {
        cur = match op {
            NlOp::Relu => {
                let mut next = cur;
                next.data.iter_mut().for_each(|v| *v = v.max(0.0));
                next
            }
            NlOp::LeakyRelu(alpha) => {
                let mut next = cur;
                next.data
                    .iter_mut()
                    .for_each(|v| *v = if *v >= 0.0 { *v } else { alpha * *v });
                next
            }
            NlOp::PRelu(alpha) => {
                check_per_channel("prelu slopes", alpha.len(), cur.channels)?;
                let mut next = cur.clone();
                for c in 0..cur.channels {
                    for y in 0..cur.height {
                        for x in 0..cur.width {
                            let v = cur.get(c, y, x);
                            next.set(c, y, x, if v >= 0.0 { v } else { alpha[c] * v });
                        }
                    }
                }
                next
            }
            NlOp::BatchNorm {
                gamma,
                beta,
                mean,
                var,
                eps,
            } => {
                check_per_channel("bn gamma", gamma.len(), cur.channels)?;
                check_per_channel("bn beta", beta.len(), cur.channels)?;
                check_per_channel("bn mean", mean.len(), cur.channels)?;
                check_per_channel("bn var", var.len(), cur.channels)?;
                let mut next = cur.clone();
                for c in 0..cur.channels {
                    let inv = 1.0 / (var[c] + eps).sqrt();
                    for y in 0..cur.height {
                        for x in 0..cur.width {
                            let v = cur.get(c, y, x);
                            next.set(c, y, x, gamma[c] * (v - mean[c]) * inv + beta[c]);
                        }
                    }
                }
                next
            }
            NlOp::MaxPool { k, s } => {
                pool(&cur, *k, *s, |w| w.iter().copied().fold(f64::MIN, f64::max))?
            }
            NlOp::AvgPool { k, s } => {
                pool(&cur, *k, *s, |w| w.iter().sum::<f64>() / w.len() as f64)?
            }
        };
    }
    Ok(cur)
}

/// Coarse throughput estimate of the streaming dataflow.
///
/// Per row frame, one column sweep walks the input width: a computed
/// column costs four cycles in 3x3 mode (the four-filter weight rotation)
/// or one cycle in 1x1 mode; a column bypassed by stride 2 costs one
/// cycle. Channel and filter parallelism divide into groups of 4 and 4
/// (3x3) or 8 (1x1). Kernels above 3x3 multiply by the number of
/// decomposed tiles; depthwise layers run channels independently.
/// Documented as an estimate, not a timing claim.
pub fn estimate_cycles(layer: &ConvLayer, in_h: usize, in_w: usize) -> u64 {
    let rfs = in_h.div_ceil(8) as u64;
    let w = in_w as u64;
    let (computed, bypassed) = if layer.stride == 2 {
        (w.div_ceil(2), w / 2)
    } else {
        (w, 0)
    };
    let one_by_one = layer.kernel == 1;
    let sweep = if one_by_one {
        computed + bypassed
    } else {
        4 * computed + bypassed
    };
    let tile_factor = if layer.kernel > 3 {
        (layer.kernel.div_ceil(3) * layer.kernel.div_ceil(3)) as u64
    } else {
        1
    };
    let groups = match layer.mode {
        ConvMode::Standard => {
            let cg = layer.in_channels.div_ceil(CHANNEL_GROUP) as u64;
            let fg = if one_by_one {
                layer.out_channels.div_ceil(FILTER_GROUP_1X1) as u64
            } else {
                layer.out_channels.div_ceil(FILTER_GROUP_3X3) as u64
            };
            cg * fg
        }
        ConvMode::Depthwise => layer.in_channels as u64,
    };
    groups * rfs * sweep * tile_factor
}
