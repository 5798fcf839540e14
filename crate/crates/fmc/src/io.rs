//! Tensor files and network configuration.
//!
//! Tensor format (little-endian):
//!
//! ```text
//! magic "FMAP" | version u16 = 1 | dtype u8 | frac_bits u8 (dtype 1 only)
//! ndim u8 | ndim x dims u32 | row-major data
//! ```
//!
//! dtype 0 stores f32 words, dtype 1 stores i16 fixed-point words with the
//! given fractional split.
//!
//! Network configs are line-oriented text, one fusion layer per line:
//!
//! ```text
//! layer <name> conv in=<C> out=<F> k=<K> stride=<1|2> pad=<P> [depthwise]
//!       nl=<op[,op...]> level=<0..3> compress=<on|off>
//!       scratch_kb=<64|128|192> weights=<file> [m=<2..15>]
//! ```

use std::path::Path;

use crate::pe::{ConvLayer, ConvMode, NlOp, NonLinearConfig};
use crate::pipeline::FusionLayerConfig;
use crate::types::{from_fixed, to_fixed, FeatureMap, FixedPointFormat};
use crate::{Error, Result};

pub const TENSOR_MAGIC: &[u8; 4] = b"FMAP";
pub const TENSOR_VERSION: u16 = 1;

/// Storage word of a tensor file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorDtype {
    F32,
    /// 16-bit fixed point with this many fractional bits.
    I16 { frac_bits: u8 },
}

/// A tensor read from disk: dimensions, data widened to f64, and the
/// fixed-point format when the file stored one.
#[derive(Debug, Clone)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
    pub format: FixedPointFormat,
}

pub fn write_tensor(path: &Path, dims: &[usize], data: &[f64], dtype: TensorDtype) -> Result<()> {
    let count: usize = dims.iter().product();
    if count != data.len() {
        return Err(Error::DimensionMismatch(format!(
            "dims {:?} need {count} values, got {}",
            dims,
            data.len()
        )));
    }
    let mut out = Vec::with_capacity(16 + data.len() * 4);
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&TENSOR_VERSION.to_le_bytes());
    match dtype {
        TensorDtype::F32 => out.push(0),
        TensorDtype::I16 { frac_bits } => {
            out.push(1);
            out.push(frac_bits);
        }
    }
    out.push(dims.len() as u8);
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    match dtype {
        TensorDtype::F32 => {
            for &v in data {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        TensorDtype::I16 { frac_bits } => {
            let fmt = FixedPointFormat::new(16, frac_bits)
                .map_err(|_| Error::DimensionMismatch(format!("bad frac_bits {frac_bits}")))?;
            for &v in data {
                out.extend_from_slice(&(to_fixed(v, fmt) as i16).to_le_bytes());
            }
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    let bytes = std::fs::read(path)?;
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        if *pos + n > bytes.len() {
            return Err(Error::MalformedStream(format!(
                "{}: truncated at byte {}",
                path.display(),
                *pos
            )));
        }
        let s = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    if take(&mut pos, 4)? != TENSOR_MAGIC {
        return Err(Error::MalformedStream(format!(
            "{}: not a tensor file",
            path.display()
        )));
    }
    let version = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap());
    if version != TENSOR_VERSION {
        return Err(Error::MalformedStream(format!(
            "{}: unsupported version {version}",
            path.display()
        )));
    }
    let dtype = take(&mut pos, 1)?[0];
    let (dtype, format) = match dtype {
        0 => (TensorDtype::F32, FixedPointFormat::default()),
        1 => {
            let frac = take(&mut pos, 1)?[0];
            let fmt = FixedPointFormat::new(16, frac).map_err(|_| {
                Error::MalformedStream(format!("{}: bad frac_bits {frac}", path.display()))
            })?;
            (TensorDtype::I16 { frac_bits: frac }, fmt)
        }
        other => {
            return Err(Error::MalformedStream(format!(
                "{}: unknown dtype {other}",
                path.display()
            )))
        }
    };
    let ndim = take(&mut pos, 1)?[0] as usize;
    let mut dims = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        dims.push(u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize);
    }
    let count: usize = dims.iter().product();
    let mut data = Vec::with_capacity(count);
    match dtype {
        TensorDtype::F32 => {
            for _ in 0..count {
                data.push(f64::from(f32::from_le_bytes(
                    take(&mut pos, 4)?.try_into().unwrap(),
                )));
            }
        }
        TensorDtype::I16 { .. } => {
            for _ in 0..count {
                let v = i16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap());
                data.push(from_fixed(i32::from(v), format));
            }
        }
    }
    if pos != bytes.len() {
        return Err(Error::MalformedStream(format!(
            "{}: {} trailing bytes",
            path.display(),
            bytes.len() - pos
        )));
    }
    Ok(Tensor { dims, data, format })
}

/// Reads a channels x height x width tensor as a feature map.
pub fn read_feature_map(path: &Path) -> Result<FeatureMap> {
    let t = read_tensor(path)?;
    if t.dims.len() != 3 {
        return Err(Error::MalformedStream(format!(
            "{}: feature map needs 3 dims, file has {:?}",
            path.display(),
            t.dims
        )));
    }
    FeatureMap::new(t.dims[0], t.dims[1], t.dims[2], t.data, t.format)
}

pub fn write_feature_map(path: &Path, fm: &FeatureMap, dtype: TensorDtype) -> Result<()> {
    write_tensor(path, &[fm.channels, fm.height, fm.width], &fm.data, dtype)
}

fn cfg_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Config {
        line,
        msg: msg.into(),
    }
}

/// Parses `op[,op...]`: `none`, `relu`, `leaky_relu(a)`, `bn(g,b,mean,var[,eps])`
/// (scalar coefficients broadcast over channels), `maxpool(k,s)`,
/// `avgpool(k,s)`.
fn parse_nl(spec: &str, channels: usize, line: usize) -> Result<NonLinearConfig> {
    if spec == "none" {
        return Ok(NonLinearConfig::none());
    }
    let mut ops = Vec::new();
    for part in split_top_level(spec) {
        let (name, args) = match part.find('(') {
            Some(open) => {
                if !part.ends_with(')') {
                    return Err(cfg_err(line, format!("unbalanced parens in '{part}'")));
                }
                let args: Vec<&str> = part[open + 1..part.len() - 1]
                    .split(',')
                    .map(str::trim)
                    .collect();
                (&part[..open], args)
            }
            None => (part, Vec::new()),
        };
        let want = |n: usize| -> Result<()> {
            if args.len() != n {
                Err(cfg_err(
                    line,
                    format!("{name} takes {n} argument(s), got {}", args.len()),
                ))
            } else {
                Ok(())
            }
        };
        let num = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| cfg_err(line, format!("bad number '{s}' in {name}")))
        };
        match name {
            "relu" => {
                want(0)?;
                ops.push(NlOp::Relu);
            }
            "leaky_relu" => {
                want(1)?;
                ops.push(NlOp::LeakyRelu(num(args[0])?));
            }
            "prelu" => {
                return Err(cfg_err(
                    line,
                    "prelu needs per-channel slopes; configure it through the library API",
                ))
            }
            "bn" => {
                if args.len() != 4 && args.len() != 5 {
                    return Err(cfg_err(line, "bn takes 4 or 5 arguments"));
                }
                let eps = if args.len() == 5 { num(args[4])? } else { 1e-5 };
                ops.push(NlOp::BatchNorm {
                    gamma: vec![num(args[0])?; channels],
                    beta: vec![num(args[1])?; channels],
                    mean: vec![num(args[2])?; channels],
                    var: vec![num(args[3])?; channels],
                    eps,
                });
            }
            "maxpool" | "avgpool" => {
                want(2)?;
                let k = args[0]
                    .parse()
                    .map_err(|_| cfg_err(line, format!("bad pool size '{}'", args[0])))?;
                let s = args[1]
                    .parse()
                    .map_err(|_| cfg_err(line, format!("bad pool stride '{}'", args[1])))?;
                ops.push(if name == "maxpool" {
                    NlOp::MaxPool { k, s }
                } else {
                    NlOp::AvgPool { k, s }
                });
            }
            other => return Err(cfg_err(line, format!("unknown non-linear op '{other}'"))),
        }
    }
    NonLinearConfig::new(ops).map_err(|e| cfg_err(line, e.to_string()))
}

/// Splits on commas not inside parentheses.
fn split_top_level(s: &str) -> Vec<&str> {
    let mut parts = Vec::new();
    let mut depth = 0usize;
    let mut start = 0;
    for (i, ch) in s.char_indices() {
        match ch {
            '(' => depth += 1,
            ')' => depth = depth.saturating_sub(1),
            ',' if depth == 0 => {
                parts.push(s[start..i].trim());
                start = i + 1;
            }
            _ => {}
        }
    }
    parts.push(s[start..].trim());
    parts.retain(|p| !p.is_empty());
    parts
}

/// Parses a network config file, loading weights relative to its directory.
pub fn parse_network_config(path: &Path) -> Result<Vec<FusionLayerConfig>> {
    let text = std::fs::read_to_string(path)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut layers = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut tokens = line.split_whitespace();
        if tokens.next() != Some("layer") {
            return Err(cfg_err(lineno, format!("expected 'layer', got '{line}'")));
        }
        let name = tokens
            .next()
            .ok_or_else(|| cfg_err(lineno, "missing layer name"))?
            .to_string();
        let kind = tokens
            .next()
            .ok_or_else(|| cfg_err(lineno, "missing layer kind"))?;
        if kind == "fc" {
            return Err(cfg_err(
                lineno,
                format!(
                    "layer '{name}': fully-connected layers are not supported by this \
                     accelerator model; run them on the host"
                ),
            ));
        }
        if kind != "conv" {
            return Err(cfg_err(lineno, format!("unknown layer kind '{kind}'")));
        }

        let mut depthwise = false;
        let mut fields: std::collections::HashMap<&str, &str> = Default::default();
        for tok in tokens {
            if tok == "depthwise" {
                depthwise = true;
                continue;
            }
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| cfg_err(lineno, format!("bad token '{tok}'")))?;
            fields.insert(k, v);
        }
        let get = |key: &str| -> Result<&str> {
            fields
                .get(key)
                .copied()
                .ok_or_else(|| cfg_err(lineno, format!("missing {key}=")))
        };
        let parse_usize = |key: &str| -> Result<usize> {
            get(key)?
                .parse()
                .map_err(|_| cfg_err(lineno, format!("bad {key}='{}'", get(key).unwrap())))
        };

        let in_channels = parse_usize("in")?;
        let out_channels = parse_usize("out")?;
        let kernel = parse_usize("k")?;
        let stride = parse_usize("stride")?;
        let pad = parse_usize("pad")?;
        let level: u8 = get("level")?
            .parse()
            .map_err(|_| cfg_err(lineno, "bad level"))?;
        if level > 3 {
            return Err(cfg_err(lineno, format!("level {level} out of range 0..=3")));
        }
        let compress = match get("compress")? {
            "on" => true,
            "off" => false,
            other => return Err(cfg_err(lineno, format!("compress must be on|off, got '{other}'"))),
        };
        let scratch_kb = parse_usize("scratch_kb")?;
        if !matches!(scratch_kb, 64 | 128 | 192) {
            return Err(cfg_err(
                lineno,
                format!("scratch_kb {scratch_kb} must be 64, 128 or 192"),
            ));
        }
        let m: u8 = match fields.get("m") {
            Some(v) => v.parse().map_err(|_| cfg_err(lineno, "bad m"))?,
            None => 8,
        };

        let weights_path = base.join(get("weights")?);
        let tensor = read_tensor(&weights_path)?;
        let mode = if depthwise {
            ConvMode::Depthwise
        } else {
            ConvMode::Standard
        };
        let expected_dims: &[&[usize]] = match mode {
            ConvMode::Standard => &[&[out_channels, in_channels, kernel, kernel]],
            ConvMode::Depthwise => &[
                &[in_channels, kernel, kernel],
                &[in_channels, 1, kernel, kernel],
            ],
        };
        if !expected_dims.iter().any(|d| tensor.dims == *d) {
            return Err(cfg_err(
                lineno,
                format!(
                    "layer '{name}': weights {} has dims {:?}, expected one of {:?}",
                    weights_path.display(),
                    tensor.dims,
                    expected_dims
                ),
            ));
        }
        let conv = ConvLayer::new(
            in_channels,
            out_channels,
            kernel,
            stride,
            pad,
            tensor.data,
            mode,
        )
        .map_err(|e| cfg_err(lineno, format!("layer '{name}': {e}")))?;
        let nonlinear = parse_nl(get("nl")?, out_channels, lineno)?;

        layers.push(FusionLayerConfig {
            name,
            conv,
            nonlinear,
            level,
            m,
            compress,
            scratch_kb,
        });
    }
    Ok(layers)
}

/// Writes a run report as JSON: per-layer entries plus the summary.
pub fn write_report(
    path: &Path,
    reports: &[crate::pipeline::LayerReport],
    summary: &crate::pipeline::NetworkSummary,
) -> Result<()> {
    let doc = serde_json::json!({
        "layers": reports,
        "summary": summary,
    });
    std::fs::write(path, serde_json::to_string_pretty(&doc).unwrap())?;
    Ok(())
}
