//! `fmc` -- compress, decompress and simulate feature-map streams.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use fmc::dct::{dct2_direct, dct2_double_sum, dct2_fast, idct2_fast, DctMatrix};
use fmc::io::{
    parse_network_config, read_feature_map, write_feature_map, write_report, TensorDtype,
};
use fmc::mem::{configure, KB};
use fmc::pe::{conv_decomposed, conv_direct, conv_rf, ConvLayer, ConvMode};
use fmc::pipeline::{
    compress_featuremap, compress_with_table, decompress_with_stats, run_network, CodecConfig,
};
use fmc::quant::{gemm_dequantize, gemm_quantize, QTable};
use fmc::sparse::{decode_block, encode_block, BufferBankState};
use fmc::stream::EncodedStream;
use fmc::types::{Block8, FeatureMap};
use fmc::{Error, Result};

#[derive(Parser)]
#[command(
    name = "fmc",
    about = "Frequency-domain feature-map compression codec and accelerator dataflow simulator",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Compress a feature-map tensor into a stream file.
    Compress {
        /// Input tensor (.fmap, channels x height x width).
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Quantization level: 0 (most aggressive) to 3 (gentlest).
        #[arg(long, default_value_t = 1)]
        level: u8,
        /// Grid width of the min/max quantization stage.
        #[arg(long, default_value_t = 8)]
        m: u8,
        /// Record one scale per channel instead of per block.
        #[arg(long)]
        per_channel_scale: bool,
        /// Custom quantization table (8 lines of 8 integers); overrides
        /// --level.
        #[arg(long)]
        qtable: Option<PathBuf>,
    },
    /// Decompress a stream file back into a tensor.
    Decompress {
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Table used at compression time, for streams with a custom one.
        #[arg(long)]
        qtable: Option<PathBuf>,
    },
    /// Compress and decompress in memory, printing ratio and error.
    Roundtrip {
        input: PathBuf,
        #[arg(long, default_value_t = 1)]
        level: u8,
        #[arg(long, default_value_t = 8)]
        m: u8,
    },
    /// Run a network config over an input tensor.
    Run {
        config: PathBuf,
        input: PathBuf,
        /// Write the per-layer report as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Run the built-in oracle checks.
    Selftest,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.cmd) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::InfeasiblePlan(_) => ExitCode::from(3),
                _ => ExitCode::from(2),
            }
        }
    }
}

fn dispatch(cmd: Cmd) -> Result<ExitCode> {
    match cmd {
        Cmd::Compress {
            input,
            output,
            level,
            m,
            per_channel_scale,
            qtable,
        } => {
            let fm = read_feature_map(&input)?;
            let cfg = CodecConfig {
                level,
                m,
                per_block_scale: !per_channel_scale,
            };
            let stream = match qtable {
                Some(path) => compress_with_table(&fm, &cfg, &QTable::load(&path)?)?,
                None => compress_featuremap(&fm, &cfg)?,
            };
            std::fs::write(&output, stream.to_bytes())?;
            println!(
                "{} -> {}: {} blocks, ratio {:.4}",
                input.display(),
                output.display(),
                stream.block_count(),
                stream.compression_ratio(u64::from(fm.format.total_bits()))
            );
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Decompress {
            input,
            output,
            qtable,
        } => {
            let bytes = std::fs::read(&input)?;
            let stream = EncodedStream::from_bytes(&bytes)?;
            let table = qtable.map(|p| QTable::load(&p)).transpose()?;
            let (fm, stats) = decompress_with_stats(&stream, table.as_ref())?;
            write_feature_map(&output, &fm, TensorDtype::F32)?;
            println!(
                "{} -> {}: {}x{}x{}, {} blocks skipped, {} transform multiplies",
                input.display(),
                output.display(),
                fm.channels,
                fm.height,
                fm.width,
                stats.blocks_skipped,
                stats.idct_mults
            );
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Roundtrip { input, level, m } => {
            let fm = read_feature_map(&input)?;
            let cfg = CodecConfig {
                level,
                m,
                per_block_scale: true,
            };
            let stream = compress_featuremap(&fm, &cfg)?;
            let (back, _) = decompress_with_stats(&stream, None)?;
            let max_err = fm.max_abs_diff(&back);
            let mse = fm
                .data
                .iter()
                .zip(&back.data)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                / fm.data.len() as f64;
            let lo = fm.data.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = fm.data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let peak = hi - lo;
            println!(
                "ratio {:.4} ({} -> {} bits)",
                stream.compression_ratio(u64::from(fm.format.total_bits())),
                stream.origin_bits(u64::from(fm.format.total_bits())),
                stream.data_bits()
            );
            println!("max abs error {max_err:.6}");
            if mse == 0.0 || peak <= 0.0 {
                println!("psnr inf dB");
            } else {
                println!("psnr {:.2} dB", 10.0 * (peak * peak / mse).log10());
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Run {
            config,
            input,
            report,
        } => {
            let layers = parse_network_config(&config)?;
            let fm = read_feature_map(&input)?;
            let (reports, summary) = run_network(&layers, fm)?;
            for r in &reports {
                println!(
                    "{:<12} ratio {:>7.4}  err {:>10.4e}  tiles {}  spill {} B  cycles {}",
                    r.name, r.ratio, r.max_abs_error, r.tiling.tiles, r.tiling.spill_bytes, r.cycles
                );
            }
            println!(
                "overall ratio {:.4} over {} compressed layer(s), {} cycles",
                summary.overall_ratio, summary.compressed_layers, summary.total_cycles
            );
            if let Some(path) = report {
                write_report(&path, &reports, &summary)?;
                println!("report written to {}", path.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Selftest => selftest(),
    }
}

struct Harness {
    failures: usize,
}

impl Harness {
    fn check(&mut self, name: &str, ok: bool) {
        if ok {
            println!("[PASS] {name}");
        } else {
            println!("[FAIL] {name}");
            self.failures += 1;
        }
    }
}

fn selftest() -> Result<ExitCode> {
    let mut h = Harness { failures: 0 };
    let mut rng = StdRng::seed_from_u64(0xF3C0);

    // Transform matrix orthonormality.
    let dm = DctMatrix::new();
    let mut max_dev: f64 = 0.0;
    for i in 0..8 {
        for j in 0..8 {
            let dot: f64 = (0..8).map(|k| dm.c[i][k] * dm.c[j][k]).sum();
            let expect = if i == j { 1.0 } else { 0.0 };
            max_dev = max_dev.max((dot - expect).abs());
        }
    }
    h.check("transform matrix orthonormal within 1e-12", max_dev < 1e-12);

    // Fast path against direct product and raw double sum; roundtrip.
    let mut dev_fast: f64 = 0.0;
    let mut dev_sum: f64 = 0.0;
    let mut dev_rt: f64 = 0.0;
    for _ in 0..2000 {
        let x = Block8::from_fn(|_, _| rng.random_range(-128.0..128.0));
        let fast = dct2_fast(&x);
        dev_fast = dev_fast.max(fast.max_abs_diff(&dct2_direct(&x)));
        dev_sum = dev_sum.max(fast.max_abs_diff(&dct2_double_sum(&x)));
        dev_rt = dev_rt.max(idct2_fast(&fast).max_abs_diff(&x));
    }
    h.check("factorized transform matches direct product", dev_fast < 1e-9);
    h.check("factorized transform matches double sum", dev_sum < 1e-9);
    h.check("inverse transform roundtrip", dev_rt < 1e-9);

    // Quantization grid bound.
    let mut grid_ok = true;
    for _ in 0..500 {
        let f = Block8::from_fn(|_, _| rng.random_range(-100.0..100.0));
        let (q1, scale) = gemm_quantize(&f, 8)?;
        let back = gemm_dequantize(&q1, &scale)?;
        let step = f64::from(scale.f_max - scale.f_min) / 255.0;
        grid_ok &= back.max_abs_diff(&f) <= step / 2.0 + 1e-9;
    }
    h.check("min/max grid roundtrip within half step", grid_ok);

    // Sparse codec and banked store.
    let mut store = BufferBankState::new(1 << 16);
    let mut codec_ok = true;
    let mut originals = Vec::new();
    for _ in 0..2000 {
        let mut q2 = [[0i16; 8]; 8];
        for row in &mut q2 {
            for v in row.iter_mut() {
                if rng.random_bool(0.3) {
                    *v = rng.random_range(-200..200);
                }
            }
        }
        let qb = fmc::quant::QuantizedBlock {
            q2,
            scale: fmc::quant::GemmScale::new(0.0, 1.0, 8).unwrap(),
            level: 1,
        };
        store.write_block(&encode_block(&qb))?;
        originals.push(qb);
    }
    for (n, qb) in originals.iter().enumerate() {
        let read = store.read_block(n)?;
        codec_ok &= decode_block(&read)?.q2 == qb.q2;
    }
    h.check("encode/store/read/decode lossless across parities", codec_ok);

    // Flip storage on the reference pattern.
    let mut q2 = [[0i16; 8]; 8];
    for (i, &c) in [8usize, 6, 4, 2, 1, 0, 0, 0].iter().enumerate() {
        for j in 0..c {
            q2[i][j] = 1;
        }
    }
    let e = encode_block(&fmc::quant::QuantizedBlock {
        q2,
        scale: fmc::quant::GemmScale::new(0.0, 1.0, 8).unwrap(),
        level: 0,
    });
    let mut flip_state = BufferBankState::new(64);
    flip_state.write_block(&e)?;
    flip_state.write_block(&e)?;
    h.check(
        "flip storage balances the reference pattern",
        flip_state.bank_fills() == [8, 6, 4, 3, 3, 4, 6, 8]
            && (flip_state.utilization()? - 0.65625).abs() < 1e-15,
    );

    // Row-frame dataflow against the direct convolution.
    let mut conv_ok = true;
    for _ in 0..40 {
        let c = rng.random_range(1..=4);
        let f = rng.random_range(1..=4);
        let k = if rng.random_bool(0.5) { 1 } else { 3 };
        let stride = rng.random_range(1..=2);
        let pad = rng.random_range(0..=1);
        let h_in = rng.random_range(5..=32);
        let w_in = rng.random_range(5..=32);
        let input = FeatureMap::from_fn(c, h_in, w_in, |_, _, _| {
            f64::from(rng.random_range(-64..64))
        });
        let weights = (0..f * c * k * k)
            .map(|_| f64::from(rng.random_range(-8..8)))
            .collect();
        let layer = ConvLayer::new(c, f, k, stride, pad, weights, ConvMode::Standard).unwrap();
        if layer.out_dims(h_in, w_in).is_err() {
            continue;
        }
        conv_ok &= conv_rf(&input, &layer)?.data == conv_direct(&input, &layer)?.data;
    }
    h.check("row-frame convolution equals direct convolution", conv_ok);

    // Kernel decomposition.
    let mut dec_ok = true;
    for k in 4..=7usize {
        let input = FeatureMap::from_fn(2, 18, 18, |_, _, _| rng.random_range(-4.0..4.0));
        let weights = (0..2 * 2 * k * k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let layer = ConvLayer::new(2, 2, k, 1, k / 2, weights, ConvMode::Standard).unwrap();
        let direct = conv_direct(&input, &layer)?;
        let dec = conv_decomposed(&input, &layer)?;
        dec_ok &= direct.max_abs_diff(&dec) < 1e-9;
    }
    h.check("decomposed large kernels recompose exactly", dec_ok);

    // Memory configurations.
    let mut mem_ok = true;
    for kb in [64usize, 128, 192] {
        let layout = configure(kb * KB)?;
        mem_ok &= layout.total() == 480 * KB && layout.scratch == kb * KB;
    }
    h.check("buffer bank configurations sum to 480 KB", mem_ok);

    // End-to-end reconstruction bound with the identity table.
    let qt = QTable::ones();
    let cfg = CodecConfig {
        level: 0,
        m: 8,
        per_block_scale: true,
    };
    let mut bound_ok = true;
    for _ in 0..100 {
        let fm = FeatureMap::from_fn(1, 16, 16, |_, _, _| rng.random_range(-50.0..50.0));
        let stream = compress_with_table(&fm, &cfg, &qt)?;
        let (back, _) = decompress_with_stats(&stream, Some(&qt))?;
        let worst_range = stream
            .blocks
            .iter()
            .map(|b| f64::from(b.scale.f_max - b.scale.f_min))
            .fold(0.0, f64::max);
        bound_ok &= fm.max_abs_diff(&back) <= 4.0 * worst_range / 255.0 + 1e-9;
    }
    h.check("pipeline reconstruction within the grid bound", bound_ok);

    if h.failures == 0 {
        println!("all checks passed");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("{} check(s) failed", h.failures);
        Ok(ExitCode::FAILURE)
    }
}
