//! `.cnmx` files: `CNMX`, a version byte, a little-endian `u32` header
//! length, a UTF-8 `key=value` header, then every parameter as little-endian
//! `f32` in serialization order.

use std::fmt::Write as _;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::Checkpoint;
use crate::error::{CheckpointError, Error, Result};
use crate::model::{ModelState, NetworkSpec};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CNMX";
pub const CHECKPOINT_VERSION: u8 = 1;

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn render_header(cp: &Checkpoint) -> Result<String> {
    let spec = cp.model.spec();
    let mut h = String::new();
    // `{:?}` on floats prints the shortest string that parses back exactly.
    let _ = writeln!(h, "epoch={}", cp.epoch);
    let _ = writeln!(h, "val_accuracy={:?}", cp.val_accuracy);
    let _ = writeln!(h, "input={}", join(&spec.input_size));
    let _ = writeln!(h, "conv_channels={}", join(&spec.conv_channels));
    let _ = writeln!(h, "fc_width={}", spec.fc_width);
    let dropout: Vec<String> = spec.dropout_probs.iter().map(|p| format!("{p:?}")).collect();
    let _ = writeln!(h, "dropout={}", dropout.join(","));
    let _ = writeln!(h, "l2_fc1={:?}", spec.l2_fc1);
    let _ = writeln!(h, "pool_after={}", join(&spec.pool_after));
    let _ = writeln!(h, "conv_stride={}", spec.conv_stride);
    for (name, p) in cp.model.names().iter().zip(cp.model.parameters()) {
        let _ = writeln!(h, "param={name} {}", join(p.shape()));
    }
    Ok(h)
}

pub fn write_checkpoint(cp: &Checkpoint, mut out: impl Write) -> Result<()> {
    let header = render_header(cp)?;
    let header_len = u32::try_from(header.len()).map_err(|_| Error::Format("checkpoint header too large".into()))?;
    let mut bytes = Vec::with_capacity(9 + header.len() + 4 * cp.model.count_parameters());
    bytes.extend_from_slice(CHECKPOINT_MAGIC);
    bytes.push(CHECKPOINT_VERSION);
    bytes.extend_from_slice(&header_len.to_le_bytes());
    bytes.extend_from_slice(header.as_bytes());
    for p in cp.model.parameters() {
        for v in p.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.write_all(&bytes)?;
    Ok(())
}

pub fn save_checkpoint(cp: &Checkpoint, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(cp, &mut buf)?;
    fs::write(path, buf).map_err(|e| Error::file(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::file(path, e))?;
    decode(&bytes).map_err(|e| match e {
        Error::Checkpoint(c) => Error::Format(format!("{}: {c}", path.display())),
        other => other,
    })
}

pub fn read_checkpoint(mut input: impl Read) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    decode(&bytes)
}

fn header_err(msg: impl Into<String>) -> Error {
    CheckpointError::Header(msg.into()).into()
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',')
        .map(|s| {
            s.trim()
                .parse::<T>()
                .map_err(|_| header_err(format!("bad value `{s}` for {key}")))
        })
        .collect()
}

fn parse_one<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse::<T>()
        .map_err(|_| header_err(format!("bad value `{v}` for {key}")))
}

fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let magic_len = bytes.len().min(4);
    if bytes[..magic_len] != CHECKPOINT_MAGIC[..magic_len] {
        return Err(CheckpointError::BadMagic.into());
    }
    if bytes.len() < 9 {
        return Err(CheckpointError::Truncated("file ends inside the preamble").into());
    }
    if bytes[4] != CHECKPOINT_VERSION {
        return Err(CheckpointError::UnsupportedVersion(bytes[4]).into());
    }
    let header_len = u32::from_le_bytes([bytes[5], bytes[6], bytes[7], bytes[8]]) as usize;
    let rest = &bytes[9..];
    if rest.len() < header_len {
        return Err(CheckpointError::Truncated("file ends inside the header").into());
    }
    let header = std::str::from_utf8(&rest[..header_len]).map_err(|_| header_err("header is not UTF-8"))?;
    let blob = &rest[header_len..];

    let (mut epoch, mut acc) = (None, None);
    let (mut input, mut channels, mut fc, mut dropout, mut l2, mut pools, mut stride) =
        (None, None, None, None, None, None, None);
    let mut params: Vec<(String, Vec<usize>)> = Vec::new();
    for line in header.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| header_err(format!("line `{line}` is not key=value")))?;
        match k {
            "epoch" => epoch = Some(parse_one::<usize>(k, v)?),
            "val_accuracy" => acc = Some(parse_one::<f64>(k, v)?),
            "input" => input = Some(parse_list::<usize>(k, v)?),
            "conv_channels" => channels = Some(parse_list::<usize>(k, v)?),
            "fc_width" => fc = Some(parse_one::<usize>(k, v)?),
            "dropout" => dropout = Some(parse_list::<f64>(k, v)?),
            "l2_fc1" => l2 = Some(parse_one::<f64>(k, v)?),
            "pool_after" => pools = Some(parse_list::<usize>(k, v)?),
            "conv_stride" => stride = Some(parse_one::<usize>(k, v)?),
            "param" => {
                let (name, shape) = v
                    .split_once(' ')
                    .ok_or_else(|| header_err(format!("bad parameter line `{v}`")))?;
                params.push((name.to_string(), parse_list::<usize>(k, shape)?));
            }
            other => return Err(header_err(format!("unknown key `{other}`"))),
        }
    }
    let missing = |k: &str| header_err(format!("missing `{k}`"));
    let input = input.ok_or_else(|| missing("input"))?;
    let input_size: [usize; 3] = input
        .try_into()
        .map_err(|_| header_err("input must have three extents"))?;
    let spec = NetworkSpec {
        input_size,
        conv_channels: channels.ok_or_else(|| missing("conv_channels"))?,
        fc_width: fc.ok_or_else(|| missing("fc_width"))?,
        dropout_probs: dropout.ok_or_else(|| missing("dropout"))?,
        l2_fc1: l2.ok_or_else(|| missing("l2_fc1"))?,
        pool_after: pools.ok_or_else(|| missing("pool_after"))?,
        conv_stride: stride.ok_or_else(|| missing("conv_stride"))?,
    };
    let layout = spec.parameter_layout().map_err(|e| header_err(e.to_string()))?;
    if layout != params {
        return Err(header_err(
            "parameter blocks do not match the network described in the header",
        ));
    }
    let expected: usize = layout.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
    if blob.len() != 4 * expected {
        return Err(CheckpointError::ParameterCountMismatch {
            expected,
            found_bytes: blob.len(),
        }
        .into());
    }
    let mut values = blob
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
    let tensors = layout
        .into_iter()
        .map(|(_, shape)| {
            let n = shape.iter().product();
            Tensor::new(shape, values.by_ref().take(n).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Checkpoint {
        model: ModelState::from_parameters(spec, tensors)?,
        epoch: epoch.ok_or_else(|| missing("epoch"))?,
        val_accuracy: acc.ok_or_else(|| missing("val_accuracy"))?,
    })
}
