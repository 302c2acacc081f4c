//! Patch-level objectness: pixel heatmap mass summed per spatial cell, then
//! broadcast to every temporal slot.

use crate::error::{Error, Result};
use crate::heatmap::PixelHeatmap;
use crate::types::PatchGeometry;

/// Spatial score grid, `(H/h) x (W/w)` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectnessMap {
    geometry: PatchGeometry,
    scores: Vec<f64>,
}

impl ObjectnessMap {
    pub fn new(geometry: PatchGeometry, scores: Vec<f64>) -> Result<Self> {
        if scores.len() != geometry.spatial_count() {
            return Err(Error::Shape(format!(
                "{} spatial scores for {} cells",
                scores.len(),
                geometry.spatial_count()
            )));
        }
        if scores.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::Value("objectness scores must be finite and non-negative".into()));
        }
        Ok(ObjectnessMap { geometry, scores })
    }

    pub fn geometry(&self) -> &PatchGeometry {
        &self.geometry
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn total(&self) -> f64 {
        self.scores.iter().sum()
    }
}

/// One score per token plus their mean `mu`.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenScores {
    scores: Vec<f64>,
    mean: f64,
}

impl TokenScores {
    pub fn new(scores: Vec<f64>) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::Shape("token scores must not be empty".into()));
        }
        if scores.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::Value("token scores must be finite and non-negative".into()));
        }
        let mean = scores.iter().sum::<f64>() / scores.len() as f64;
        Ok(TokenScores { scores, mean })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }
}

pub fn patch_objectness(heatmap: &PixelHeatmap, geometry: &PatchGeometry) -> Result<ObjectnessMap> {
    if heatmap.height() != geometry.height() || heatmap.width() != geometry.width() {
        return Err(Error::Shape(format!(
            "heatmap {}x{} does not match frame {}x{}",
            heatmap.height(),
            heatmap.width(),
            geometry.height(),
            geometry.width()
        )));
    }
    let (ph, pw, cols) = (geometry.patch_h(), geometry.patch_w(), geometry.patch_cols());
    let mut scores = vec![0.0; geometry.spatial_count()];
    for (y, row) in heatmap.values().chunks_exact(geometry.width()).enumerate() {
        let base = (y / ph) * cols;
        for (col, chunk) in row.chunks_exact(pw).enumerate() {
            scores[base + col] += chunk.iter().sum::<f64>();
        }
    }
    ObjectnessMap::new(*geometry, scores)
}

/// Replicates the spatial scores over all temporal slots.
pub fn token_scores(map: &ObjectnessMap) -> TokenScores {
    TokenScores::new(map.scores.repeat(map.geometry.temporal_slots())).expect("objectness map invariants hold")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heatmap::SigmaPolicy;

    #[test]
    fn zero_and_uniform_heatmaps() {
        let g = PatchGeometry::new(2, 1, 4, 6, 1, 2, 3).unwrap();
        let z = PixelHeatmap::zeros(4, 6, SigmaPolicy::default());
        assert!(patch_objectness(&z, &g).unwrap().scores().iter().all(|&s| s == 0.0));
        let u = PixelHeatmap::from_values(4, 6, vec![0.75; 24], SigmaPolicy::default()).unwrap();
        let m = patch_objectness(&u, &g).unwrap();
        assert_eq!(m.scores(), &[4.5; 4]);
    }

    #[test]
    fn pixel_loop_oracle() {
        let vals: Vec<f64> = (0..16).map(|k| ((k * 37 % 11) as f64) * 0.13).collect();
        let hm = PixelHeatmap::from_values(4, 4, vals.clone(), SigmaPolicy::default()).unwrap();
        let g = PatchGeometry::new(1, 1, 4, 4, 1, 2, 2).unwrap();
        let m = patch_objectness(&hm, &g).unwrap();
        let mut expect = [0.0; 4];
        for y in 0..4 {
            for x in 0..4 {
                expect[(y / 2) * 2 + x / 2] += vals[y * 4 + x];
            }
        }
        for (a, e) in m.scores().iter().zip(expect) {
            assert!((a - e).abs() < 1e-15);
        }
    }

    #[test]
    fn shape_mismatch() {
        let g = PatchGeometry::new(1, 1, 4, 4, 1, 2, 2).unwrap();
        let hm = PixelHeatmap::zeros(4, 6, SigmaPolicy::default());
        assert!(matches!(patch_objectness(&hm, &g), Err(Error::Shape(_))));
    }

    #[test]
    fn token_broadcast() {
        let g = PatchGeometry::new(4, 1, 4, 4, 2, 2, 2).unwrap();
        let m = ObjectnessMap::new(g, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let s = token_scores(&m);
        assert_eq!(s.scores(), &[1.0, 2.0, 3.0, 4.0, 1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean(), 2.5);

        let g1 = PatchGeometry::new(1, 1, 4, 4, 1, 2, 2).unwrap();
        let m1 = ObjectnessMap::new(g1, vec![0.0; 4]).unwrap();
        let s1 = token_scores(&m1);
        assert_eq!(s1.scores(), &[0.0; 4]);
        assert_eq!(s1.mean(), 0.0);
    }
}
