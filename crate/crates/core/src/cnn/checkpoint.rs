//! Self-describing checkpoint files.
//!
//! ```text
//! palmpipe-ckpt v1
//! input <channels> <height> <width>
//! tensor <name> <dim>...        (one line per tensor, storage order)
//! data
//! <little-endian f64 values, manifest order>
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::model::{ModelConfig, ModelParams};
use crate::error::{Error, Result};

const MAGIC: &str = "palmpipe-ckpt v1";

pub fn write_checkpoint<W: Write>(p: &ModelParams, mut w: W) -> Result<()> {
    let c = &p.config;
    let mut header = format!("{MAGIC}\ninput {} {} {}\n", c.in_channels, c.height, c.width);
    let tensors = p.named_tensors();
    for (name, t) in &tensors {
        let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
        header.push_str(&format!("tensor {name} {}\n", dims.join(" ")));
    }
    header.push_str("data\n");
    w.write_all(header.as_bytes())?;
    let mut buf = Vec::with_capacity(8 * p.parameter_count());
    for (_, t) in &tensors {
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

pub fn save_checkpoint(p: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(p, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

struct Manifest {
    input: (usize, usize, usize),
    tensors: Vec<(String, Vec<usize>)>,
    data_offset: usize,
}

fn parse_manifest(bytes: &[u8]) -> std::result::Result<Manifest, String> {
    let mut pos = 0;
    let mut next_line = || -> std::result::Result<&str, String> {
        let rest = &bytes[pos..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or("truncated header")?;
        pos += end + 1;
        std::str::from_utf8(&rest[..end]).map_err(|_| "header is not UTF-8".to_string())
    };
    if next_line()? != MAGIC {
        return Err(format!("missing '{MAGIC}' magic"));
    }
    let input_line = next_line()?;
    let dims: Vec<usize> = match input_line.strip_prefix("input ") {
        Some(rest) => rest
            .split_whitespace()
            .map(|d| d.parse().map_err(|_| format!("bad input line {input_line:?}")))
            .collect::<std::result::Result<_, _>>()?,
        None => return Err(format!("expected input line, found {input_line:?}")),
    };
    let [c, h, w] = dims[..] else {
        return Err(format!("input line needs 3 dims, found {input_line:?}"));
    };
    let mut tensors = Vec::new();
    loop {
        let line = next_line()?;
        if line == "data" {
            break;
        }
        let mut parts = line.split_whitespace();
        if parts.next() != Some("tensor") {
            return Err(format!("unexpected manifest line {line:?}"));
        }
        let name = parts.next().ok_or_else(|| format!("tensor line without name: {line:?}"))?;
        let shape = parts
            .map(|d| d.parse::<usize>().map_err(|_| format!("bad dims for {name}")))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        tensors.push((name.to_string(), shape));
    }
    Ok(Manifest { input: (c, h, w), tensors, data_offset: pos })
}

fn shape_of<'a>(m: &'a Manifest, name: &str) -> std::result::Result<&'a [usize], String> {
    m.tensors
        .iter()
        .find(|(n, _)| n == name)
        .map(|(_, s)| s.as_slice())
        .ok_or_else(|| format!("missing tensor {name}"))
}

/// Recovers the architecture from the manifest shapes.
fn infer_config(m: &Manifest) -> std::result::Result<ModelConfig, String> {
    let conv1 = shape_of(m, "conv1.weight")?;
    let conv2 = shape_of(m, "conv2.weight")?;
    let (conv1_channels, conv2_channels) = match (conv1, conv2) {
        ([o1, _, 3, 3], [o2, _, 3, 3]) => (*o1, *o2),
        _ => return Err("conv weights must be [out, in, 3, 3]".into()),
    };
    let mut head_widths = Vec::new();
    let mut i = 0;
    while let Ok(s) = shape_of(m, &format!("angle_head.{i}.weight")) {
        if s.len() != 2 {
            return Err(format!("angle_head.{i}.weight must be 2-D"));
        }
        head_widths.push(s[0]);
        i += 1;
    }
    // The last layer's width is the class count, not a hidden width.
    head_widths.pop();
    Ok(ModelConfig {
        in_channels: m.input.0,
        height: m.input.1,
        width: m.input.2,
        conv1_channels,
        conv2_channels,
        head_widths,
    })
}

fn load_bytes(bytes: &[u8], expected: Option<&ModelConfig>, path: &Path) -> Result<ModelParams> {
    let err = |message: String| Error::Checkpoint { path: PathBuf::from(path), message };
    let manifest = parse_manifest(bytes).map_err(err)?;
    let config = match expected {
        Some(c) => c.clone(),
        None => infer_config(&manifest).map_err(err)?,
    };
    let mut params = ModelParams::init(&config, 0);

    let names: Vec<String> = params.named_tensors().into_iter().map(|(n, _)| n).collect();
    if manifest.input != (config.in_channels, config.height, config.width) {
        return Err(err(format!(
            "input {:?} does not match expected {:?}",
            manifest.input,
            (config.in_channels, config.height, config.width)
        )));
    }
    for (i, (name, t)) in params.named_tensors().iter().enumerate() {
        match manifest.tensors.get(i) {
            Some((n, s)) if n == name && s.as_slice() == t.shape() => {}
            Some((n, s)) if n == name => {
                return Err(err(format!(
                    "shape mismatch in layer {name}: checkpoint {s:?}, expected {:?}",
                    t.shape()
                )))
            }
            Some((n, _)) => return Err(err(format!("layer {name} expected, found {n}"))),
            None => return Err(err(format!("layer {name} missing"))),
        }
    }
    if manifest.tensors.len() != names.len() {
        return Err(err(format!(
            "unexpected extra layer {}",
            manifest.tensors[names.len()].0
        )));
    }

    let total: usize = params.named_tensors().iter().map(|(_, t)| t.len()).sum();
    let data = &bytes[manifest.data_offset..];
    if data.len() != total * 8 {
        return Err(err(format!(
            "payload has {} bytes, manifest needs {}{}",
            data.len(),
            total * 8,
            if data.len() < total * 8 { " (truncated)" } else { "" }
        )));
    }
    let mut values = data.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    for t in params.named_tensors_mut() {
        for v in t.data_mut() {
            *v = values.next().expect("length checked");
        }
    }
    if params.bn1.running_var.data().iter().chain(params.bn2.running_var.data()).any(|&v| v.is_nan() || v <= 0.0) {
        return Err(err("batch-norm running variance must be positive".into()));
    }
    Ok(params)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams> {
    let path = path.as_ref();
    load_bytes(&fs::read(path)?, None, path)
}

/// Loads and checks every layer against `expected`, naming the first one
/// whose shape differs.
pub fn load_checkpoint_expecting(path: impl AsRef<Path>, expected: &ModelConfig) -> Result<ModelParams> {
    let path = path.as_ref();
    load_bytes(&fs::read(path)?, Some(expected), path)
}
