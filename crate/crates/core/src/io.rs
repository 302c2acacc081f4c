//! On-disk formats. All integers and reals are little-endian.
//!
//! Tensor container:
//!
//! ```text
//! "SOART" 0x01 | rank: u8 (<= 6) | dims: rank x u32 | payload: prod(dims) x f64
//! ```
//!
//! Mask file:
//!
//! ```text
//! "SOARM" 0x01 | N: u32 | T C H W t h w: 7 x u32 | ceil(N/8) bytes
//! ```
//!
//! Token `i` is bit `i % 8` of byte `i / 8`; 1 means visible and unused
//! trailing bits are zero.
//!
//! Detections are JSON lines `{"frame":f,"cx":..,"cy":..,"sx":..,"sy":..}`.
//! Frames without boxes have no lines; the frame count comes from the video.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heatmap::{PixelHeatmap, SigmaPolicy};
use crate::objectness::ObjectnessMap;
use crate::toymae::{ModelConfig, ToyModel};
use crate::types::{BoundingBox, DetectionSet, MaskSpec, PatchGeometry, VideoTensor};

pub const TENSOR_MAGIC: &[u8; 6] = b"SOART\x01";
pub const MASK_MAGIC: &[u8; 6] = b"SOARM\x01";
pub const MAX_RANK: usize = 6;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Length(format!(
                "truncated {what}: need {n} bytes at offset {}, have {}",
                self.pos,
                self.buf.len() - self.pos
            ))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn magic(&mut self, expect: &[u8; 6]) -> Result<()> {
        let got = self.take(6, "magic")?;
        if got != expect {
            return Err(Error::Format(format!("bad magic {got:02x?}, expected {expect:02x?}")));
        }
        Ok(())
    }
}

fn dim_u32(d: usize) -> Result<u32> {
    u32::try_from(d).map_err(|_| Error::Value(format!("dimension {d} exceeds u32")))
}

pub fn encode_tensor(dims: &[usize], data: &[f64]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(7 + 4 * dims.len() + 8 * data.len());
    write_tensor_into(&mut out, dims, data)?;
    Ok(out)
}

fn write_tensor_into(out: &mut Vec<u8>, dims: &[usize], data: &[f64]) -> Result<()> {
    if dims.len() > MAX_RANK {
        return Err(Error::Value(format!("rank {} exceeds {MAX_RANK}", dims.len())));
    }
    let count: usize = dims.iter().product();
    if count != data.len() {
        return Err(Error::Shape(format!("dims {dims:?} hold {count} values, got {}", data.len())));
    }
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::Value(format!("non-finite value at index {i}")));
    }
    out.extend_from_slice(TENSOR_MAGIC);
    out.push(dims.len() as u8);
    for &d in dims {
        out.extend_from_slice(&dim_u32(d)?.to_le_bytes());
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(())
}

fn read_tensor(r: &mut Reader<'_>) -> Result<Tensor> {
    r.magic(TENSOR_MAGIC)?;
    let rank = r.take(1, "rank")?[0] as usize;
    if rank > MAX_RANK {
        return Err(Error::Format(format!("rank {rank} exceeds {MAX_RANK}")));
    }
    let dims = (0..rank).map(|_| r.u32("dims").map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
    let count = dims
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or_else(|| Error::Format(format!("dims {dims:?} overflow")))?;
    let bytes = r.take(count.checked_mul(8).ok_or_else(|| Error::Format("payload overflow".into()))?, "payload")?;
    let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(Tensor { dims, data })
}

/// Decodes exactly one tensor; trailing bytes are a format error.
pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor> {
    let mut r = Reader::new(bytes);
    let t = read_tensor(&mut r)?;
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes after tensor", bytes.len() - r.pos)));
    }
    Ok(t)
}

/// Decodes back-to-back tensors until the input is exhausted.
pub fn decode_tensors(bytes: &[u8]) -> Result<Vec<Tensor>> {
    let mut r = Reader::new(bytes);
    let mut out = Vec::new();
    while r.pos < bytes.len() {
        out.push(read_tensor(&mut r)?);
    }
    Ok(out)
}

/// Video as a rank-4 `[T, C, H, W]` tensor.
pub fn encode_video(video: &VideoTensor) -> Result<Vec<u8>> {
    let g = video.geometry();
    encode_tensor(&[g.frames(), g.channels(), g.height(), g.width()], video.data())
}

/// Reads a `[T, C, H, W]` tensor and attaches the given patch sizes.
pub fn decode_video(bytes: &[u8], patch_t: usize, patch_h: usize, patch_w: usize) -> Result<VideoTensor> {
    let t = decode_tensor(bytes)?;
    let [f, c, h, w]: [usize; 4] = t
        .dims
        .as_slice()
        .try_into()
        .map_err(|_| Error::Format(format!("video tensor must be rank 4, got {:?}", t.dims)))?;
    VideoTensor::new(PatchGeometry::new(f, c, h, w, patch_t, patch_h, patch_w)?, t.data)
}

pub fn encode_heatmap(map: &PixelHeatmap) -> Result<Vec<u8>> {
    encode_tensor(&[map.height(), map.width()], map.values())
}

pub fn decode_heatmap(bytes: &[u8], sigma: SigmaPolicy) -> Result<PixelHeatmap> {
    let t = decode_tensor(bytes)?;
    match t.dims.as_slice() {
        &[h, w] => PixelHeatmap::from_values(h, w, t.data, sigma),
        d => Err(Error::Format(format!("heatmap tensor must be rank 2, got {d:?}"))),
    }
}

pub fn encode_objectness(map: &ObjectnessMap) -> Result<Vec<u8>> {
    let g = map.geometry();
    encode_tensor(&[g.patch_rows(), g.patch_cols()], map.scores())
}

pub fn decode_objectness(bytes: &[u8], geometry: PatchGeometry) -> Result<ObjectnessMap> {
    let t = decode_tensor(bytes)?;
    if t.dims != [geometry.patch_rows(), geometry.patch_cols()] {
        return Err(Error::Shape(format!(
            "objectness tensor {:?} does not match a {}x{} grid",
            t.dims,
            geometry.patch_rows(),
            geometry.patch_cols()
        )));
    }
    ObjectnessMap::new(geometry, t.data)
}

pub fn encode_mask(mask: &MaskSpec) -> Result<Vec<u8>> {
    let n = mask.visible().len();
    let mut out = Vec::with_capacity(6 + 4 + 28 + n.div_ceil(8));
    out.extend_from_slice(MASK_MAGIC);
    out.extend_from_slice(&dim_u32(n)?.to_le_bytes());
    for d in mask.geometry().to_array() {
        out.extend_from_slice(&dim_u32(d)?.to_le_bytes());
    }
    let mut bits = vec![0u8; n.div_ceil(8)];
    for (i, &v) in mask.visible().iter().enumerate() {
        if v {
            bits[i / 8] |= 1 << (i % 8);
        }
    }
    out.extend_from_slice(&bits);
    Ok(out)
}

pub fn decode_mask(bytes: &[u8]) -> Result<MaskSpec> {
    let mut r = Reader::new(bytes);
    r.magic(MASK_MAGIC)?;
    let n = r.u32("token count")? as usize;
    let mut dims = [0usize; 7];
    for d in dims.iter_mut() {
        *d = r.u32("geometry")? as usize;
    }
    let geometry = PatchGeometry::from_array(dims).map_err(|e| Error::Format(format!("invalid mask geometry: {e}")))?;
    if geometry.token_count() != n {
        return Err(Error::Format(format!("mask declares {n} tokens, geometry has {}", geometry.token_count())));
    }
    let bits = r.take(n.div_ceil(8), "bitset")?;
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes after mask", bytes.len() - r.pos)));
    }
    if !n.is_multiple_of(8) && bits[n / 8] >> (n % 8) != 0 {
        return Err(Error::Format("nonzero padding bits in mask".into()));
    }
    let visible = (0..n).map(|i| bits[i / 8] >> (i % 8) & 1 == 1).collect();
    MaskSpec::new(geometry, visible)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DetectionLine {
    frame: i64,
    cx: f64,
    cy: f64,
    sx: f64,
    sy: f64,
}

/// One line per box, frames ascending, boxes in stored order.
pub fn encode_detections(dets: &DetectionSet) -> Result<String> {
    let mut out = String::new();
    for (frame, boxes) in dets.frames().iter().enumerate() {
        for b in boxes {
            b.validate()?;
            let line = DetectionLine { frame: frame as i64, cx: b.cx, cy: b.cy, sx: b.sx, sy: b.sy };
            out.push_str(&serde_json::to_string(&line)?);
            out.push('\n');
        }
    }
    Ok(out)
}

/// Parses detection lines for a video with `frames` frames. Blank lines are
/// ignored; lines may be in any order.
pub fn decode_detections(text: &str, frames: usize) -> Result<DetectionSet> {
    let mut dets = DetectionSet::empty(frames);
    for (no, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let d: DetectionLine =
            serde_json::from_str(line).map_err(|e| Error::Format(format!("detection line {}: {e}", no + 1)))?;
        if d.frame < 0 {
            return Err(Error::Format(format!("detection line {}: negative frame", no + 1)));
        }
        dets.push(d.frame as usize, BoundingBox::new(d.cx, d.cy, d.sx, d.sy)?)?;
    }
    Ok(dets)
}

/// Checkpoint: the seven parameter tensors back to back, in
/// [`PARAM_NAMES`](crate::toymae::PARAM_NAMES) order. Matrices are rank 2.
pub fn encode_model(model: &ToyModel) -> Result<Vec<u8>> {
    let (p, d) = (model.geometry().patch_len(), model.dim());
    let shapes: [&[usize]; 7] = [&[d, p], &[d], &[d, d], &[d], &[d], &[p, d], &[p]];
    let mut out = Vec::new();
    for (shape, t) in shapes.iter().zip(model.params.tensors()) {
        write_tensor_into(&mut out, shape, t)?;
    }
    Ok(out)
}

pub fn decode_model(bytes: &[u8], geometry: PatchGeometry, config: ModelConfig) -> Result<ToyModel> {
    let mut model = ToyModel::zeros(geometry, config)?;
    let tensors = decode_tensors(bytes)?;
    if tensors.len() != 7 {
        return Err(Error::Format(format!("checkpoint holds {} tensors, expected 7", tensors.len())));
    }
    for (slot, t) in model.params.tensors_mut().into_iter().zip(tensors) {
        if t.data.len() != slot.len() {
            return Err(Error::Shape(format!("checkpoint tensor {:?} does not fit the model", t.dims)));
        }
        *slot = t.data;
    }
    Ok(model)
}
