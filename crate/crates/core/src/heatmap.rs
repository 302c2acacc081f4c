//! Pixel-wise objectness heatmaps built from detection boxes.
//!
//! Each box contributes an isotropic Gaussian evaluated at integer pixel
//! coordinates (pixel centers, origin top-left). Per-frame maps are summed
//! and divided by the frame count.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::{self, Exec};
use crate::types::{BoundingBox, DetectionSet, PatchGeometry};

/// Default box-scaled sigma fraction: a box edge sits at roughly 3 sigma.
pub const DEFAULT_SIGMA_SCALE: f64 = 1.0 / 6.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "value")]
pub enum SigmaPolicy {
    /// Same sigma, in pixels, for every box.
    Fixed(f64),
    /// `sigma = f * min(sx, sy)`.
    BoxScaled(f64),
}

impl Default for SigmaPolicy {
    fn default() -> Self {
        SigmaPolicy::BoxScaled(DEFAULT_SIGMA_SCALE)
    }
}

impl SigmaPolicy {
    pub fn validate(&self) -> Result<()> {
        let v = match *self {
            SigmaPolicy::Fixed(s) | SigmaPolicy::BoxScaled(s) => s,
        };
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::Param(format!("sigma parameter must be positive, got {v}")));
        }
        Ok(())
    }

    pub fn sigma_for(&self, b: &BoundingBox) -> f64 {
        match *self {
            SigmaPolicy::Fixed(s) => s,
            SigmaPolicy::BoxScaled(f) => f * b.sx.min(b.sy),
        }
    }
}

/// Evaluation window for each Gaussian.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    /// Every pixel of the frame.
    #[default]
    Full,
    /// Only pixels within `3 sigma` of the center; each box then deviates
    /// from the full map by at most `exp(-4.5)`.
    ThreeSigma,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PixelHeatmap {
    height: usize,
    width: usize,
    values: Vec<f64>,
    sigma: SigmaPolicy,
}

impl PixelHeatmap {
    pub fn zeros(height: usize, width: usize, sigma: SigmaPolicy) -> Self {
        PixelHeatmap { height, width, values: vec![0.0; height * width], sigma }
    }

    /// Wraps raw row-major values; they must be finite and non-negative.
    pub fn from_values(height: usize, width: usize, values: Vec<f64>, sigma: SigmaPolicy) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::Shape(format!("heatmap has {} values, expected {height}x{width}", values.len())));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Value("heatmap values must be finite and non-negative".into()));
        }
        Ok(PixelHeatmap { height, width, values, sigma })
    }

    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn sigma(&self) -> SigmaPolicy {
        self.sigma
    }

    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    /// `(x, y)` of the first maximal pixel in row-major order.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        (best % self.width, best / self.width)
    }

    /// Binary 8-bit PGM, min-max scaled. A constant map renders black.
    pub fn to_pgm(&self) -> Vec<u8> {
        grid_to_pgm(self.width, self.height, &self.values)
    }
}

/// Min-max scaled binary PGM (`P5`, maxval 255) of a row-major grid.
pub fn grid_to_pgm(width: usize, height: usize, values: &[f64]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    out.extend(values.iter().map(|&v| if span > 0.0 { (255.0 * (v - lo) / span).round() as u8 } else { 0 }));
    out
}

fn add_box(map: &mut [f64], width: usize, height: usize, b: &BoundingBox, sigma: f64, window: Window) {
    let inv = 1.0 / (2.0 * sigma * sigma);
    let (x0, x1, y0, y1) = match window {
        Window::Full => (0, width, 0, height),
        Window::ThreeSigma => {
            let r = 3.0 * sigma;
            let clamp = |v: f64, n: usize| v.max(0.0).min(n as f64) as usize;
            (
                clamp((b.cx - r).ceil(), width),
                clamp((b.cx + r).floor() + 1.0, width),
                clamp((b.cy - r).ceil(), height),
                clamp((b.cy + r).floor() + 1.0, height),
            )
        }
    };
    if x0 >= x1 || y0 >= y1 {
        return;
    }
    // exp(-(dx^2 + dy^2) / 2s^2) factors into a row term times a column term.
    let gx: Vec<f64> = (x0..x1)
        .map(|x| {
            let d = x as f64 - b.cx;
            (-d * d * inv).exp()
        })
        .collect();
    let r2 = 9.0 * sigma * sigma;
    for y in y0..y1 {
        let dy = y as f64 - b.cy;
        let gy = (-dy * dy * inv).exp();
        let row = &mut map[y * width + x0..y * width + x1];
        for (i, (cell, g)) in row.iter_mut().zip(&gx).enumerate() {
            if window == Window::ThreeSigma {
                let dx = (x0 + i) as f64 - b.cx;
                if dx * dx + dy * dy > r2 {
                    continue;
                }
            }
            *cell += g * gy;
        }
    }
}

/// Sum of one Gaussian per box over a single `H x W` frame.
pub fn frame_heatmap(boxes: &[BoundingBox], geometry: &PatchGeometry, sigma: SigmaPolicy) -> Result<PixelHeatmap> {
    frame_heatmap_windowed(boxes, geometry, sigma, Window::Full)
}

pub fn frame_heatmap_windowed(
    boxes: &[BoundingBox],
    geometry: &PatchGeometry,
    sigma: SigmaPolicy,
    window: Window,
) -> Result<PixelHeatmap> {
    sigma.validate()?;
    let (h, w) = (geometry.height(), geometry.width());
    let mut map = PixelHeatmap::zeros(h, w, sigma);
    for b in boxes {
        b.validate()?;
        add_box(&mut map.values, w, h, b, sigma.sigma_for(b), window);
    }
    Ok(map)
}

/// Mean of the per-frame heatmaps over all `T` frames.
pub fn video_heatmap(dets: &DetectionSet, geometry: &PatchGeometry, sigma: SigmaPolicy) -> Result<PixelHeatmap> {
    video_heatmap_with(dets, geometry, sigma, Window::Full, Exec::default())
}

/// Frames may be evaluated concurrently; they are always summed in frame
/// order.
pub fn video_heatmap_with(
    dets: &DetectionSet,
    geometry: &PatchGeometry,
    sigma: SigmaPolicy,
    window: Window,
    exec: Exec,
) -> Result<PixelHeatmap> {
    sigma.validate()?;
    let frames = geometry.frames();
    if dets.frame_count() > frames {
        return Err(Error::Range(format!("detections cover {} frames, video has {frames}", dets.frame_count())));
    }
    let per_frame = par::map_slice(exec, dets.frames(), |boxes| frame_heatmap_windowed(boxes, geometry, sigma, window));
    let mut acc = PixelHeatmap::zeros(geometry.height(), geometry.width(), sigma);
    for fm in per_frame {
        for (a, v) in acc.values.iter_mut().zip(&fm?.values) {
            *a += v;
        }
    }
    let scale = frames as f64;
    acc.values.iter_mut().for_each(|v| *v /= scale);
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom(t: usize, h: usize, w: usize) -> PatchGeometry {
        PatchGeometry::new(t, 1, h, w, 1, 1, 1).unwrap()
    }

    fn bx(cx: f64, cy: f64, s: f64) -> BoundingBox {
        BoundingBox::new(cx, cy, s, s).unwrap()
    }

    #[test]
    fn empty_frame_is_zero() {
        let m = frame_heatmap(&[], &geom(1, 8, 8), SigmaPolicy::default()).unwrap();
        assert!(m.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unit_peak_at_integer_center() {
        let m = frame_heatmap(&[bx(3.0, 5.0, 6.0)], &geom(1, 10, 10), SigmaPolicy::default()).unwrap();
        assert_eq!(m.at(3, 5), 1.0);
        assert_eq!(m.argmax(), (3, 5));
    }

    #[test]
    fn two_identical_boxes() {
        let sigma = 2.0;
        let b = bx(8.0, 8.0, 12.0);
        let m = frame_heatmap(&[b, b], &geom(1, 16, 16), SigmaPolicy::Fixed(sigma)).unwrap();
        assert_eq!(m.at(8, 8), 2.0);
        // Distance sigma along x: scalar re-evaluation of the formula.
        let d2: f64 = 2.0 * 2.0;
        let expect = 2.0 * (-d2 / (2.0 * sigma * sigma)).exp();
        assert!((m.at(10, 8) - expect).abs() < 1e-15);
        assert!((m.at(10, 8) - 2.0 * (-0.5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn rejects_non_positive_sigma() {
        let g = geom(1, 4, 4);
        assert!(matches!(frame_heatmap(&[], &g, SigmaPolicy::Fixed(0.0)), Err(Error::Param(_))));
        assert!(matches!(frame_heatmap(&[], &g, SigmaPolicy::BoxScaled(-1.0)), Err(Error::Param(_))));
    }

    #[test]
    fn single_frame_box_scaled_by_frame_count() {
        let g = geom(4, 12, 12);
        let b = bx(5.0, 6.0, 6.0);
        let mut d = DetectionSet::empty(4);
        d.push(0, b).unwrap();
        let v = video_heatmap(&d, &g, SigmaPolicy::default()).unwrap();
        let f = frame_heatmap(&[b], &g, SigmaPolicy::default()).unwrap();
        for (a, e) in v.values().iter().zip(f.values()) {
            assert_eq!(*a, e * 0.25);
        }
    }

    #[test]
    fn identical_frames_average_to_one_frame() {
        let g = geom(3, 10, 10);
        let boxes = [bx(2.0, 3.0, 4.0), bx(7.5, 6.2, 3.0)];
        let d = DetectionSet::from_frames(vec![boxes.to_vec(); 3]).unwrap();
        let v = video_heatmap(&d, &g, SigmaPolicy::default()).unwrap();
        let f = frame_heatmap(&boxes, &g, SigmaPolicy::default()).unwrap();
        for (a, e) in v.values().iter().zip(f.values()) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn disjoint_boxes_over_two_frames() {
        let g = geom(2, 20, 20);
        let d = DetectionSet::from_frames(vec![vec![bx(3.0, 3.0, 3.0)], vec![bx(15.0, 15.0, 3.0)]]).unwrap();
        let v = video_heatmap(&d, &g, SigmaPolicy::default()).unwrap();
        // sigma = 0.5 px; the other box's tail at distance 12*sqrt(2) is far below 1e-12.
        assert!((v.at(3, 3) - 0.5).abs() < 1e-12);
        assert!((v.at(15, 15) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn too_many_detection_frames() {
        let d = DetectionSet::empty(5);
        assert!(matches!(video_heatmap(&d, &geom(4, 4, 4), SigmaPolicy::default()), Err(Error::Range(_))));
    }

    #[test]
    fn truncation_error_bound() {
        let g = geom(1, 40, 40);
        let boxes = [bx(12.3, 20.7, 18.0), bx(30.0, 9.5, 9.0)];
        let full = frame_heatmap(&boxes, &g, SigmaPolicy::default()).unwrap();
        let cut = frame_heatmap_windowed(&boxes, &g, SigmaPolicy::default(), Window::ThreeSigma).unwrap();
        let bound = boxes.len() as f64 * (-4.5f64).exp();
        for (a, b) in full.values().iter().zip(cut.values()) {
            assert!(a >= b);
            assert!(a - b <= bound);
        }
    }

    #[test]
    fn pgm_layout() {
        let m = PixelHeatmap::zeros(2, 3, SigmaPolicy::default());
        let pgm = m.to_pgm();
        assert_eq!(&pgm[..11], b"P5\n3 2\n255\n");
        assert_eq!(&pgm[11..], &[0u8; 6]);
        let m = PixelHeatmap::from_values(1, 3, vec![0.0, 0.5, 1.0], SigmaPolicy::default()).unwrap();
        assert_eq!(&m.to_pgm()[11..], &[0u8, 128, 255]);
    }

    #[test]
    fn box_outside_frame_contributes_tail_only() {
        let g = geom(1, 8, 8);
        let m = frame_heatmap(&[bx(-3.0, 4.0, 6.0)], &g, SigmaPolicy::Fixed(2.0)).unwrap();
        let expect = (-9.0f64 / 8.0).exp();
        assert!((m.at(0, 4) - expect).abs() < 1e-15);
        assert!(m.max() < 1.0);
    }
}
