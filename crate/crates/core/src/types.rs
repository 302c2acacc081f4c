//! Patch geometry, videos, detections and masks.
//!
//! Tokens are flattened temporal-slot-major, then row-major over the spatial
//! patch grid: `token = slot * N_s + row * (W / w) + col`. Video samples are
//! stored frame-major, then channel, then row-major within each frame.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawGeometry", into = "RawGeometry")]
pub struct PatchGeometry {
    frames: usize,
    channels: usize,
    height: usize,
    width: usize,
    patch_t: usize,
    patch_h: usize,
    patch_w: usize,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
struct RawGeometry {
    frames: usize,
    channels: usize,
    height: usize,
    width: usize,
    patch_t: usize,
    patch_h: usize,
    patch_w: usize,
}

impl TryFrom<RawGeometry> for PatchGeometry {
    type Error = Error;

    fn try_from(r: RawGeometry) -> Result<Self> {
        PatchGeometry::new(r.frames, r.channels, r.height, r.width, r.patch_t, r.patch_h, r.patch_w)
    }
}

impl From<PatchGeometry> for RawGeometry {
    fn from(g: PatchGeometry) -> Self {
        RawGeometry {
            frames: g.frames,
            channels: g.channels,
            height: g.height,
            width: g.width,
            patch_t: g.patch_t,
            patch_h: g.patch_h,
            patch_w: g.patch_w,
        }
    }
}

impl PatchGeometry {
    /// Builds a geometry; every extent must be positive and divisible by its
    /// patch size.
    pub fn new(
        frames: usize,
        channels: usize,
        height: usize,
        width: usize,
        patch_t: usize,
        patch_h: usize,
        patch_w: usize,
    ) -> Result<Self> {
        let dims = [frames, channels, height, width, patch_t, patch_h, patch_w];
        if dims.contains(&0) {
            return Err(Error::Param(format!("geometry extents must be positive: {dims:?}")));
        }
        for (name, full, part) in [("frames", frames, patch_t), ("height", height, patch_h), ("width", width, patch_w)]
        {
            if full % part != 0 {
                return Err(Error::Param(format!("{name} {full} is not divisible by patch size {part}")));
            }
        }
        Ok(PatchGeometry { frames, channels, height, width, patch_t, patch_h, patch_w })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }
    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn patch_t(&self) -> usize {
        self.patch_t
    }
    pub fn patch_h(&self) -> usize {
        self.patch_h
    }
    pub fn patch_w(&self) -> usize {
        self.patch_w
    }

    /// `T / t`
    pub fn temporal_slots(&self) -> usize {
        self.frames / self.patch_t
    }
    /// `H / h`
    pub fn patch_rows(&self) -> usize {
        self.height / self.patch_h
    }
    /// `W / w`
    pub fn patch_cols(&self) -> usize {
        self.width / self.patch_w
    }
    /// Number of spatial cells `N_s`.
    pub fn spatial_count(&self) -> usize {
        self.patch_rows() * self.patch_cols()
    }
    /// Number of tokens `N`.
    pub fn token_count(&self) -> usize {
        self.temporal_slots() * self.spatial_count()
    }
    /// Values per patch, `t * C * h * w`.
    pub fn patch_len(&self) -> usize {
        self.patch_t * self.channels * self.patch_h * self.patch_w
    }
    /// Values per video, `T * C * H * W`.
    pub fn video_len(&self) -> usize {
        self.frames * self.channels * self.height * self.width
    }

    /// Seven extents in the order `T, C, H, W, t, h, w`.
    pub fn to_array(&self) -> [usize; 7] {
        [self.frames, self.channels, self.height, self.width, self.patch_t, self.patch_h, self.patch_w]
    }

    pub fn from_array(a: [usize; 7]) -> Result<Self> {
        Self::new(a[0], a[1], a[2], a[3], a[4], a[5], a[6])
    }

    pub fn token_index(&self, slot: usize, row: usize, col: usize) -> Result<usize> {
        if slot >= self.temporal_slots() || row >= self.patch_rows() || col >= self.patch_cols() {
            return Err(Error::Range(format!(
                "token coordinate ({slot}, {row}, {col}) outside {}x{}x{} grid",
                self.temporal_slots(),
                self.patch_rows(),
                self.patch_cols()
            )));
        }
        Ok(slot * self.spatial_count() + row * self.patch_cols() + col)
    }

    /// Inverse of [`token_index`](Self::token_index): `(slot, row, col)`.
    pub fn token_coord(&self, token: usize) -> Result<(usize, usize, usize)> {
        self.check_token(token)?;
        let ns = self.spatial_count();
        let cell = token % ns;
        Ok((token / ns, cell / self.patch_cols(), cell % self.patch_cols()))
    }

    /// Spatial cell index of a token.
    pub fn cell_of(&self, token: usize) -> usize {
        token % self.spatial_count()
    }

    pub(crate) fn check_token(&self, token: usize) -> Result<()> {
        if token >= self.token_count() {
            return Err(Error::Range(format!("token {token} out of range for {} tokens", self.token_count())));
        }
        Ok(())
    }

    /// Flat sample offset of `(frame, channel, y, x)`.
    #[inline]
    pub fn offset(&self, frame: usize, channel: usize, y: usize, x: usize) -> usize {
        ((frame * self.channels + channel) * self.height + y) * self.width + x
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VideoTensor {
    geometry: PatchGeometry,
    data: Vec<f64>,
}

impl VideoTensor {
    pub fn new(geometry: PatchGeometry, data: Vec<f64>) -> Result<Self> {
        if data.len() != geometry.video_len() {
            return Err(Error::Shape(format!(
                "video data has {} values, geometry needs {}",
                data.len(),
                geometry.video_len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Value(format!("non-finite video sample at offset {i}")));
        }
        Ok(VideoTensor { geometry, data })
    }

    pub fn zeros(geometry: PatchGeometry) -> Self {
        VideoTensor { geometry, data: vec![0.0; geometry.video_len()] }
    }

    pub fn geometry(&self) -> &PatchGeometry {
        &self.geometry
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn at(&self, frame: usize, channel: usize, y: usize, x: usize) -> f64 {
        self.data[self.geometry.offset(frame, channel, y, x)]
    }

    /// Copies the `t * C * h * w` block of `token`, ordered frame, channel,
    /// row, column.
    pub fn extract_patch(&self, token: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.geometry.patch_len());
        self.patch_into(token, &mut out)?;
        Ok(out)
    }

    pub(crate) fn patch_into(&self, token: usize, out: &mut Vec<f64>) -> Result<()> {
        let (slot, row, col) = self.geometry.token_coord(token)?;
        let g = &self.geometry;
        out.clear();
        for f in slot * g.patch_t..(slot + 1) * g.patch_t {
            for c in 0..g.channels {
                for y in row * g.patch_h..(row + 1) * g.patch_h {
                    let start = g.offset(f, c, y, col * g.patch_w);
                    out.extend_from_slice(&self.data[start..start + g.patch_w]);
                }
            }
        }
        Ok(())
    }

    /// All patches in token order.
    pub fn patches(&self) -> Vec<Vec<f64>> {
        (0..self.geometry.token_count()).map(|i| self.extract_patch(i).expect("token in range")).collect()
    }

    /// Reassembles a video from patches given in token order.
    pub fn from_patches(geometry: PatchGeometry, patches: &[Vec<f64>]) -> Result<Self> {
        if patches.len() != geometry.token_count() {
            return Err(Error::Shape(format!(
                "{} patches supplied, geometry has {} tokens",
                patches.len(),
                geometry.token_count()
            )));
        }
        let g = &geometry;
        let mut data = vec![0.0; g.video_len()];
        for (token, patch) in patches.iter().enumerate() {
            if patch.len() != g.patch_len() {
                return Err(Error::Shape(format!(
                    "patch {token} has {} values, expected {}",
                    patch.len(),
                    g.patch_len()
                )));
            }
            let (slot, row, col) = g.token_coord(token)?;
            let mut src = patch.chunks_exact(g.patch_w);
            for f in slot * g.patch_t..(slot + 1) * g.patch_t {
                for c in 0..g.channels {
                    for y in row * g.patch_h..(row + 1) * g.patch_h {
                        let start = g.offset(f, c, y, col * g.patch_w);
                        data[start..start + g.patch_w].copy_from_slice(src.next().unwrap());
                    }
                }
            }
        }
        VideoTensor::new(geometry, data)
    }
}

/// Axis-aligned box: center `(cx, cy)` and size `(sx, sy)` in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub cx: f64,
    pub cy: f64,
    pub sx: f64,
    pub sy: f64,
}

impl BoundingBox {
    pub fn new(cx: f64, cy: f64, sx: f64, sy: f64) -> Result<Self> {
        let b = BoundingBox { cx, cy, sx, sy };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if ![self.cx, self.cy, self.sx, self.sy].iter().all(|v| v.is_finite()) {
            return Err(Error::Value(format!("non-finite bounding box {self:?}")));
        }
        if self.sx <= 0.0 || self.sy <= 0.0 {
            return Err(Error::Param(format!("bounding box size must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// Per-frame detections. Every frame of the video has an entry, possibly empty.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DetectionSet {
    frames: Vec<Vec<BoundingBox>>,
}

impl DetectionSet {
    pub fn empty(frames: usize) -> Self {
        DetectionSet { frames: vec![Vec::new(); frames] }
    }

    pub fn from_frames(frames: Vec<Vec<BoundingBox>>) -> Result<Self> {
        for b in frames.iter().flatten() {
            b.validate()?;
        }
        Ok(DetectionSet { frames })
    }

    pub fn push(&mut self, frame: usize, b: BoundingBox) -> Result<()> {
        b.validate()?;
        let n = self.frames.len();
        self.frames
            .get_mut(frame)
            .ok_or_else(|| Error::Range(format!("detection frame {frame} >= {n} frames")))?
            .push(b);
        Ok(())
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    pub fn frame(&self, t: usize) -> &[BoundingBox] {
        &self.frames[t]
    }

    pub fn frames(&self) -> &[Vec<BoundingBox>] {
        &self.frames
    }

    pub fn total(&self) -> usize {
        self.frames.iter().map(Vec::len).sum()
    }
}

/// Per-token visibility; `true` marks a visible (unmasked) token.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct MaskSpec {
    geometry: PatchGeometry,
    visible: Vec<bool>,
    visible_count: usize,
}

impl MaskSpec {
    pub fn new(geometry: PatchGeometry, visible: Vec<bool>) -> Result<Self> {
        if visible.len() != geometry.token_count() {
            return Err(Error::Shape(format!(
                "mask has {} entries, geometry has {} tokens",
                visible.len(),
                geometry.token_count()
            )));
        }
        let visible_count = visible.iter().filter(|&&v| v).count();
        Ok(MaskSpec { geometry, visible, visible_count })
    }

    /// Tiles a spatial mask (length `N_s`) across every temporal slot.
    pub fn replicate_spatial(geometry: PatchGeometry, spatial: &[bool]) -> Result<Self> {
        if spatial.len() != geometry.spatial_count() {
            return Err(Error::Shape(format!(
                "spatial mask has {} cells, geometry has {}",
                spatial.len(),
                geometry.spatial_count()
            )));
        }
        let visible = spatial.repeat(geometry.temporal_slots());
        Self::new(geometry, visible)
    }

    pub fn geometry(&self) -> &PatchGeometry {
        &self.geometry
    }

    pub fn visible(&self) -> &[bool] {
        &self.visible
    }

    pub fn is_visible(&self, token: usize) -> bool {
        self.visible[token]
    }

    pub fn visible_count(&self) -> usize {
        self.visible_count
    }

    pub fn masked_count(&self) -> usize {
        self.visible.len() - self.visible_count
    }

    /// `K^vis`, ascending.
    pub fn visible_tokens(&self) -> Vec<usize> {
        self.visible.iter().enumerate().filter(|(_, &v)| v).map(|(i, _)| i).collect()
    }

    /// `K^inv`, ascending.
    pub fn masked_tokens(&self) -> Vec<usize> {
        self.visible.iter().enumerate().filter(|(_, &v)| !v).map(|(i, _)| i).collect()
    }

    /// True when every spatial cell has the same visibility in all slots.
    pub fn is_slot_consistent(&self) -> bool {
        let ns = self.geometry.spatial_count();
        let (first, rest) = self.visible.split_at(ns);
        rest.chunks_exact(ns).all(|slot| slot == first)
    }
}
