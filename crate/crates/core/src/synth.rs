//! Synthetic long-tailed videos: low-amplitude noise background with small,
//! high-contrast square objects and exact (or jittered) detections.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::types::{BoundingBox, DetectionSet, PatchGeometry, VideoTensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Motion {
    #[default]
    Static,
    /// Pixels per frame; the path reflects at the frame borders.
    Drift { dx: i64, dy: i64 },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    /// Uniform top-left corner per object, drawn from the video seed.
    #[default]
    Random,
    /// Top-left pixel of each object in frame 0.
    Fixed(Vec<(usize, usize)>),
}

/// Detector imperfection applied to the emitted boxes only.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectorNoise {
    /// Center offset, uniform in `[-j, j]` pixels per axis.
    pub center_jitter: f64,
    /// Size factor, uniform in `[1 - s, 1 + s]`.
    pub size_jitter: f64,
    /// Probability that a box is missing in a frame.
    pub dropout: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub geometry: PatchGeometry,
    #[serde(default = "one")]
    pub object_count: usize,
    /// Square side in pixels; derived from `coverage` when absent.
    #[serde(default)]
    pub object_size: Option<usize>,
    /// Fraction of the frame area covered by one object.
    pub coverage: f64,
    #[serde(default)]
    pub motion: Motion,
    #[serde(default)]
    pub placement: Placement,
    /// Fixes the texture for every video; drawn per video when absent.
    #[serde(default)]
    pub texture_seed: Option<u64>,
    pub background_amplitude: f64,
    pub object_amplitude: f64,
    #[serde(default)]
    pub detector: DetectorNoise,
}

fn one() -> usize {
    1
}

impl SynthConfig {
    pub fn new(geometry: PatchGeometry, coverage: f64) -> Self {
        SynthConfig {
            geometry,
            object_count: 1,
            object_size: None,
            coverage,
            motion: Motion::Static,
            placement: Placement::Random,
            texture_seed: None,
            background_amplitude: 0.1,
            object_amplitude: 1.0,
            detector: DetectorNoise::default(),
        }
    }

    /// `round(sqrt(coverage * H * W))` unless set explicitly.
    pub fn side(&self) -> usize {
        self.object_size.unwrap_or_else(|| {
            let area = self.coverage * (self.geometry.height() * self.geometry.width()) as f64;
            area.sqrt().round() as usize
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.coverage > 0.0 && self.coverage <= 0.5) {
            return Err(Error::Param(format!("coverage must lie in (0, 0.5], got {}", self.coverage)));
        }
        let side = self.side();
        if side == 0 || side > self.geometry.height() || side > self.geometry.width() {
            return Err(Error::Param(format!("object side {side} does not fit the frame")));
        }
        if self.object_count == 0 {
            return Err(Error::Param("object count must be positive".into()));
        }
        if let Placement::Fixed(p) = &self.placement {
            if p.len() != self.object_count {
                return Err(Error::Param(format!("{} fixed placements for {} objects", p.len(), self.object_count)));
            }
            for &(x, y) in p {
                if x + side > self.geometry.width() || y + side > self.geometry.height() {
                    return Err(Error::Param(format!("object at ({x}, {y}) leaves the frame")));
                }
            }
        }
        for (name, v) in [
            ("background amplitude", self.background_amplitude),
            ("object amplitude", self.object_amplitude),
            ("center jitter", self.detector.center_jitter),
            ("size jitter", self.detector.size_jitter),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Param(format!("{name} must be finite and non-negative")));
            }
        }
        if self.detector.size_jitter >= 1.0 || !(0.0..=1.0).contains(&self.detector.dropout) {
            return Err(Error::Param("detector jitter/dropout out of range".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSample {
    pub video: VideoTensor,
    pub detections: DetectionSet,
    /// Tokens whose block overlaps an object footprint, ascending.
    pub object_tokens: Vec<usize>,
}

/// Bounces `start` along `[0, max]` with velocity `v` for `frames` frames.
fn reflected_path(start: usize, v: i64, max: usize, frames: usize) -> Vec<usize> {
    let max = max as i64;
    let (mut p, mut v) = (start as i64, v);
    let mut out = Vec::with_capacity(frames);
    for _ in 0..frames {
        out.push(p as usize);
        if max == 0 {
            continue;
        }
        p += v;
        // Velocities larger than the track fold repeatedly.
        while p < 0 || p > max {
            if p < 0 {
                p = -p;
            } else {
                p = 2 * max - p;
            }
            v = -v;
        }
    }
    out
}

#[derive(Clone, Copy)]
struct Texture {
    sign: f64,
    ramp_x: bool,
}

impl Texture {
    fn draw(rng: &mut Stream) -> Self {
        Texture { sign: if rng.below(2) == 0 { 1.0 } else { -1.0 }, ramp_x: rng.below(2) == 0 }
    }

    /// Checkerboard plus linear ramp, in `[-1, 1]`.
    fn value(&self, u: usize, v: usize, side: usize, channel: usize) -> f64 {
        let checker = if (u + v + channel).is_multiple_of(2) { 1.0 } else { -1.0 };
        let along = if self.ramp_x { u } else { v };
        let ramp = if side > 1 { along as f64 / (side - 1) as f64 - 0.5 } else { 0.0 };
        0.5 * self.sign * checker + ramp
    }
}

pub fn generate(config: &SynthConfig, seed: u64) -> Result<SynthSample> {
    config.validate()?;
    let g = config.geometry;
    let side = config.side();
    let (frames, h, w) = (g.frames(), g.height(), g.width());
    let mut place_rng = Stream::new(seed, "synth-placement");
    let mut noise_rng = Stream::new(seed, "synth-noise");
    let mut det_rng = Stream::new(seed, "synth-detector");
    let mut tex_rng = match config.texture_seed {
        Some(s) => Stream::new(s, "synth-texture"),
        None => Stream::new(seed, "synth-texture"),
    };

    let starts: Vec<(usize, usize)> = match &config.placement {
        Placement::Fixed(p) => p.clone(),
        Placement::Random => {
            (0..config.object_count).map(|_| (place_rng.index(w - side + 1), place_rng.index(h - side + 1))).collect()
        }
    };
    let (dx, dy) = match config.motion {
        Motion::Static => (0, 0),
        Motion::Drift { dx, dy } => (dx, dy),
    };
    // paths[o][f] = top-left corner of object o in frame f
    let paths: Vec<Vec<(usize, usize)>> = starts
        .iter()
        .map(|&(x, y)| {
            let xs = reflected_path(x, dx, w - side, frames);
            let ys = reflected_path(y, dy, h - side, frames);
            xs.into_iter().zip(ys).collect()
        })
        .collect();
    let textures: Vec<Texture> = (0..config.object_count).map(|_| Texture::draw(&mut tex_rng)).collect();

    let a = config.background_amplitude;
    let mut data: Vec<f64> = (0..g.video_len()).map(|_| if a > 0.0 { noise_rng.range(-a, a) } else { 0.0 }).collect();
    for (path, tex) in paths.iter().zip(&textures) {
        for (f, &(x0, y0)) in path.iter().enumerate() {
            for c in 0..g.channels() {
                for v in 0..side {
                    for u in 0..side {
                        data[g.offset(f, c, y0 + v, x0 + u)] = config.object_amplitude * tex.value(u, v, side, c);
                    }
                }
            }
        }
    }

    let mut detections = DetectionSet::empty(frames);
    let noise = config.detector;
    for f in 0..frames {
        for path in &paths {
            let (x0, y0) = path[f];
            let half = (side as f64 - 1.0) / 2.0;
            let mut b = BoundingBox { cx: x0 as f64 + half, cy: y0 as f64 + half, sx: side as f64, sy: side as f64 };
            if noise.dropout > 0.0 && det_rng.unit() < noise.dropout {
                continue;
            }
            if noise.center_jitter > 0.0 {
                b.cx += det_rng.range(-noise.center_jitter, noise.center_jitter);
                b.cy += det_rng.range(-noise.center_jitter, noise.center_jitter);
            }
            if noise.size_jitter > 0.0 {
                b.sx *= det_rng.range(1.0 - noise.size_jitter, 1.0 + noise.size_jitter);
                b.sy *= det_rng.range(1.0 - noise.size_jitter, 1.0 + noise.size_jitter);
            }
            detections.push(f, b)?;
        }
    }

    let mut object = vec![false; g.token_count()];
    for path in &paths {
        for (f, &(x0, y0)) in path.iter().enumerate() {
            let slot = f / g.patch_t();
            for row in y0 / g.patch_h()..=(y0 + side - 1) / g.patch_h() {
                for col in x0 / g.patch_w()..=(x0 + side - 1) / g.patch_w() {
                    object[g.token_index(slot, row, col)?] = true;
                }
            }
        }
    }
    let object_tokens = object.iter().enumerate().filter(|(_, &o)| o).map(|(i, _)| i).collect();

    Ok(SynthSample { video: VideoTensor::new(g, data)?, detections, object_tokens })
}
