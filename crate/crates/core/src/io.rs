//! On-disk formats.
//!
//! Arrays are a little-endian `f64` binary next to a JSON sidecar with the
//! same stem. Layer stacks use a JSON header naming the kernel shapes plus
//! one binary holding every kernel in layer order. Traces and loss curves
//! are CSV; images for viewing are 16-bit binary PGM.

use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::conv::{ConvLayer, LayerStack};
use crate::error::{Error, Result};
use crate::init::{AdvanceKind, ViewAdvanceMap};
use crate::regularizer::{Regularizer, Role};
use crate::solver::IterationRecord;
use crate::tensor::Tensor;
use crate::tomo::Geometry;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArrayKind {
    Image,
    Sinogram,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayHeader {
    pub shape: Vec<usize>,
    pub kind: ArrayKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geometry: Option<Geometry>,
}

pub fn sidecar_path(bin: &Path) -> PathBuf {
    bin.with_extension("json")
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = read_file(path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e.to_string()))?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn encode_f64(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn decode_f64(path: &Path, bytes: &[u8], expected: usize) -> Result<Vec<f64>> {
    if bytes.len() != expected * 8 {
        return Err(Error::format(
            path,
            format!("expected {} bytes, found {}", expected * 8, bytes.len()),
        ));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

/// Writes `bin` and its JSON sidecar.
pub fn write_array(bin: &Path, tensor: &Tensor, kind: ArrayKind, geometry: Option<&Geometry>) -> Result<()> {
    let header = ArrayHeader {
        shape: tensor.shape().to_vec(),
        kind,
        geometry: geometry.copied(),
    };
    write_file(bin, &encode_f64(tensor.data()))?;
    write_json(&sidecar_path(bin), &header)
}

pub fn read_array(bin: &Path) -> Result<(Tensor, ArrayHeader)> {
    let side = sidecar_path(bin);
    let header: ArrayHeader = read_json(&side)?;
    let count = header.shape.iter().product();
    let data = decode_f64(bin, &read_file(bin)?, count)?;
    let tensor = Tensor::from_vec(&header.shape, data).map_err(|e| Error::format(bin, e.to_string()))?;
    if let Some(g) = &header.geometry {
        let want: &[usize] = match header.kind {
            ArrayKind::Image => &g.image_shape(),
            ArrayKind::Sinogram => &g.sinogram_shape(),
        };
        if header.shape != want {
            return Err(Error::format(
                &side,
                format!("shape {:?} disagrees with geometry {want:?}", header.shape),
            ));
        }
    }
    Ok((tensor, header))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerHeader {
    /// `[out, in, kh, kw]`.
    pub shape: [usize; 4],
    pub padding: [usize; 2],
    pub delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapHeader {
    pub kind: AdvanceKind,
    pub rate: usize,
    pub n_views: usize,
    #[serde(default)]
    pub skip: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StackHeader {
    pub layers: Vec<LayerHeader>,
    pub final_linear: bool,
    /// Kernel binary, relative to the header's directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<Role>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub map: Option<MapHeader>,
}

fn stack_header(stack: &LayerStack, weights: String) -> StackHeader {
    let layers = stack
        .layers()
        .iter()
        .map(|l| {
            let s = l.kernel().shape();
            let (ph, pw) = l.padding();
            LayerHeader {
                shape: [s[0], s[1], s[2], s[3]],
                padding: [ph, pw],
                delta: l.smoothing_delta(),
            }
        })
        .collect();
    StackHeader {
        layers,
        final_linear: stack.final_linear(),
        weights: Some(weights),
        role: None,
        map: None,
    }
}

fn weights_path(header_path: &Path) -> PathBuf {
    header_path.with_extension("bin")
}

fn write_stack_with(path: &Path, stack: &LayerStack, tweak: impl FnOnce(&mut StackHeader)) -> Result<()> {
    let bin = weights_path(path);
    let name = bin
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::format(path, "header path has no usable file name"))?
        .to_string();
    let mut header = stack_header(stack, name);
    tweak(&mut header);
    let flat: Vec<f64> = stack.kernels().iter().flat_map(|k| k.data().iter().copied()).collect();
    write_file(&bin, &encode_f64(&flat))?;
    write_json(path, &header)
}

fn stack_from_header(path: &Path, header: &StackHeader) -> Result<LayerStack> {
    let name = header
        .weights
        .as_ref()
        .ok_or_else(|| Error::format(path, "missing \"weights\" entry"))?;
    let bin = path.parent().unwrap_or(Path::new("")).join(name);
    let count: usize = header.layers.iter().map(|l| l.shape.iter().product::<usize>()).sum();
    let flat = decode_f64(&bin, &read_file(&bin)?, count)?;
    let mut offset = 0;
    let mut layers = Vec::with_capacity(header.layers.len());
    for (i, lh) in header.layers.iter().enumerate() {
        let n: usize = lh.shape.iter().product();
        let kernel = Tensor::from_vec(&lh.shape, flat[offset..offset + n].to_vec())
            .map_err(|e| Error::format(&bin, format!("layer {i}: {e}")))?;
        offset += n;
        let layer = ConvLayer::with_padding(kernel, (lh.padding[0], lh.padding[1]), lh.delta)
            .map_err(|e| Error::format(path, format!("layer {i}: {e}")))?;
        layers.push(layer);
    }
    LayerStack::new(layers, header.final_linear).map_err(|e| Error::format(path, e.to_string()))
}

/// Writes the JSON header at `path` and the kernels at `path` with a `.bin`
/// extension.
pub fn write_layer_stack(path: &Path, stack: &LayerStack) -> Result<()> {
    write_stack_with(path, stack, |_| {})
}

pub fn read_layer_stack(path: &Path) -> Result<LayerStack> {
    let header: StackHeader = read_json(path)?;
    stack_from_header(path, &header)
}

pub fn write_regularizer(path: &Path, reg: &Regularizer) -> Result<()> {
    write_stack_with(path, reg.extractor(), |h| h.role = Some(reg.role()))
}

/// Reads a regularizer file; the stored role must match `role` when present.
pub fn read_regularizer(path: &Path, role: Role) -> Result<Regularizer> {
    let header: StackHeader = read_json(path)?;
    if let Some(stored) = header.role {
        if stored != role {
            return Err(Error::format(
                path,
                format!("file holds a {stored:?} regularizer, expected {role:?}"),
            ));
        }
    }
    let stack = stack_from_header(path, &header)?;
    Regularizer::new(stack, role).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_advance_map(path: &Path, map: &ViewAdvanceMap) -> Result<()> {
    let meta = MapHeader {
        kind: map.kind(),
        rate: map.rate(),
        n_views: map.n_views(),
        skip: map.skip(),
    };
    match map.stack() {
        Some(stack) => write_stack_with(path, stack, |h| h.map = Some(meta)),
        None => write_json(
            path,
            &StackHeader {
                layers: Vec::new(),
                final_linear: true,
                weights: None,
                role: None,
                map: Some(meta),
            },
        ),
    }
}

pub fn read_advance_map(path: &Path) -> Result<ViewAdvanceMap> {
    let header: StackHeader = read_json(path)?;
    let meta = header
        .map
        .clone()
        .ok_or_else(|| Error::format(path, "missing \"map\" metadata"))?;
    let built = match meta.kind {
        AdvanceKind::Interpolation => ViewAdvanceMap::interpolation(meta.n_views, meta.rate),
        AdvanceKind::Convolutional => {
            let stack = stack_from_header(path, &header)?;
            ViewAdvanceMap::convolutional(meta.n_views, meta.rate, stack, meta.skip)
        }
    };
    built.map_err(|e| Error::format(path, e.to_string()))
}

pub const TRACE_HEADER: &str = "k,eps,phi_eps,phi,grad_norm,branch,linesearch_count,reduced";

pub fn write_trace(path: &Path, trace: &[IterationRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for rec in trace {
        w.serialize(rec).map_err(|e| Error::format(path, e.to_string()))?;
    }
    if trace.is_empty() {
        w.write_record(TRACE_HEADER.split(',')).map_err(|e| Error::format(path, e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::format(path, e.to_string()))?;
    write_file(path, &bytes)
}

pub fn read_trace(path: &Path) -> Result<Vec<IterationRecord>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    let header = r.headers().map_err(|e| Error::format(path, e.to_string()))?;
    if header.iter().collect::<Vec<_>>().join(",") != TRACE_HEADER {
        return Err(Error::format(path, format!("trace header must be {TRACE_HEADER}")));
    }
    r.deserialize()
        .map(|row| row.map_err(|e| Error::format(path, e.to_string())))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
struct LossRow {
    epoch: usize,
    loss: f64,
}

pub fn write_loss_curve(path: &Path, curve: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if curve.is_empty() {
        w.write_record(["epoch", "loss"]).map_err(|e| Error::format(path, e.to_string()))?;
    }
    for (epoch, &loss) in curve.iter().enumerate() {
        w.serialize(LossRow { epoch, loss }).map_err(|e| Error::format(path, e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::format(path, e.to_string()))?;
    write_file(path, &bytes)
}

pub fn read_loss_curve(path: &Path) -> Result<Vec<f64>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    r.deserialize::<LossRow>()
        .map(|row| row.map(|r| r.loss).map_err(|e| Error::format(path, e.to_string())))
        .collect()
}

/// Maps `[min, max]` linearly onto `0..=65535`; a constant image is all zero.
pub fn window_u16(image: &Tensor) -> Vec<u16> {
    let (lo, hi) = (image.min(), image.max());
    let span = hi - lo;
    image
        .data()
        .iter()
        .map(|&v| {
            if span > 0.0 {
                ((v - lo) / span * 65535.0).round().clamp(0.0, 65535.0) as u16
            } else {
                0
            }
        })
        .collect()
}

/// Binary 16-bit PGM (P5, maxval 65535, big-endian samples).
pub fn write_pgm(path: &Path, image: &Tensor) -> Result<()> {
    if image.shape().len() != 2 {
        return Err(Error::Shape(format!("pgm needs a 2D image, got {:?}", image.shape())));
    }
    let mut bytes = format!("P5\n{} {}\n65535\n", image.cols(), image.rows()).into_bytes();
    for v in window_u16(image) {
        bytes.extend_from_slice(&v.to_be_bytes());
    }
    write_file(path, &bytes)
}

/// Reads a file written by [`write_pgm`]: `(width, height, samples)`.
pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u16>)> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut tokens = Vec::new();
    let mut line = String::new();
    while tokens.len() < 4 {
        line.clear();
        if r.read_line(&mut line).map_err(|e| Error::io(path, e))? == 0 {
            return Err(Error::format(path, "truncated pgm header"));
        }
        let content = line.split('#').next().unwrap_or("");
        tokens.extend(content.split_whitespace().map(str::to_string));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| Error::format(path, format!("bad pgm field {s:?}")));
    if tokens[0] != "P5" || parse(&tokens[3])? != 65535 {
        return Err(Error::format(path, "only 16-bit P5 is supported"));
    }
    let (w, h) = (parse(&tokens[1])?, parse(&tokens[2])?);
    let mut raw = Vec::new();
    r.read_to_end(&mut raw).map_err(|e| Error::io(path, e))?;
    if raw.len() != w * h * 2 {
        return Err(Error::format(path, "pgm payload length mismatch"));
    }
    Ok((w, h, raw.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()))
}

/// Writes `rows` as CSV with the given header.
pub fn write_csv_rows(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(|e| Error::format(path, e.to_string()))?;
    for row in rows {
        w.write_record(row).map_err(|e| Error::format(path, e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::format(path, e.to_string()))?;
    write_file(path, &bytes)
}
