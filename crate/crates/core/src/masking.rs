//! Mask generation: object-aware segment sampling, its X-ratio and 3D
//! variants, and the random / tube / block baselines.
//!
//! Object-aware masking sorts spatial cells by descending objectness (ties by
//! ascending cell index), splits the sorted list into `k` contiguous segments
//! whose lengths differ by at most one (longer segments first), keeps one
//! uniformly drawn cell per segment visible, and tiles the spatial mask over
//! every temporal slot. `k = round_half_even((1 - rho) * N_s)`, at least 1.
//!
//! All randomness comes from [`Stream::new(seed, strategy.tag())`](Stream),
//! consumed in segment (or pool) order.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objectness::{ObjectnessMap, TokenScores};
use crate::par::{self, Exec};
use crate::rng::Stream;
use crate::types::{MaskSpec, PatchGeometry};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    ObjectAware,
    /// Fraction `X` of the visible budget drawn from above-mean tokens.
    RatioX(f64),
    /// Segment sampling over all tokens jointly, no temporal tiling.
    #[serde(rename = "leaky-3d")]
    Leaky3d,
    Random,
    Tube,
    Block,
}

impl Strategy {
    pub fn tag(&self) -> &'static str {
        match self {
            Strategy::ObjectAware => "object-aware",
            Strategy::RatioX(_) => "ratio-x",
            Strategy::Leaky3d => "leaky-3d",
            Strategy::Random => "random",
            Strategy::Tube => "tube",
            Strategy::Block => "block",
        }
    }

    /// Whether the strategy guarantees identical masks in every slot.
    pub fn slot_consistent(&self) -> bool {
        matches!(self, Strategy::ObjectAware | Strategy::Tube | Strategy::Block)
    }

    /// Parses a tag; `ratio-x` takes its fraction from `x`.
    pub fn parse(tag: &str, x: Option<f64>) -> Result<Self> {
        Ok(match tag {
            "object-aware" => Strategy::ObjectAware,
            "ratio-x" => {
                Strategy::RatioX(x.ok_or_else(|| Error::Param("ratio-x strategy needs an X fraction".into()))?)
            }
            "leaky-3d" => Strategy::Leaky3d,
            "random" => Strategy::Random,
            "tube" => Strategy::Tube,
            "block" => Strategy::Block,
            other => return Err(Error::Param(format!("unknown masking strategy `{other}`"))),
        })
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::RatioX(x) => write!(f, "ratio-x({x})"),
            s => f.write_str(s.tag()),
        }
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::parse(s, None)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskParams {
    pub rho: f64,
    pub seed: u64,
    pub strategy: Strategy,
}

impl MaskParams {
    pub fn new(strategy: Strategy, rho: f64, seed: u64) -> Self {
        MaskParams { rho, seed, strategy }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        MaskParams { seed, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        check_rho(self.rho)?;
        if let Strategy::RatioX(x) = self.strategy {
            check_fraction(x)?;
        }
        Ok(())
    }
}

fn check_rho(rho: f64) -> Result<()> {
    if !rho.is_finite() || rho < 0.0 {
        return Err(Error::Param(format!("mask ratio must lie in [0, 1), got {rho}")));
    }
    if rho >= 1.0 {
        return Err(Error::Param(format!("mask ratio {rho} leaves no visible patches")));
    }
    Ok(())
}

fn check_fraction(x: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::Param(format!("X fraction must lie in [0, 1], got {x}")));
    }
    Ok(())
}

/// `round_half_even((1 - rho) * count)`, floored at 1.
pub fn visible_budget(rho: f64, count: usize) -> Result<usize> {
    check_rho(rho)?;
    let k = ((1.0 - rho) * count as f64).round_ties_even() as usize;
    Ok(k.clamp(1, count.max(1)))
}

/// Lengths of `k` segments covering `n` items: the first `n mod k` get
/// `ceil(n / k)`, the rest `floor(n / k)`.
pub fn segment_lengths(n: usize, k: usize) -> Vec<usize> {
    assert!(k >= 1 && k <= n, "need 1 <= k <= n, got k={k}, n={n}");
    let (q, r) = (n / k, n % k);
    (0..k).map(|i| if i < r { q + 1 } else { q }).collect()
}

/// Indices sorted by descending score, ties by ascending index.
pub fn descending_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// One uniformly drawn member per segment of `order`, in segment order.
fn segment_pick(order: &[usize], k: usize, rng: &mut Stream) -> Vec<usize> {
    let mut start = 0;
    segment_lengths(order.len(), k)
        .into_iter()
        .map(|len| {
            let pick = order[start + rng.index(len)];
            start += len;
            pick
        })
        .collect()
}

fn flags(n: usize, on: impl IntoIterator<Item = usize>) -> Vec<bool> {
    let mut v = vec![false; n];
    for i in on {
        v[i] = true;
    }
    v
}

pub fn object_aware_mask(map: &ObjectnessMap, params: &MaskParams) -> Result<MaskSpec> {
    params.validate()?;
    let g = *map.geometry();
    let ns = g.spatial_count();
    let k = visible_budget(params.rho, ns)?;
    let mut rng = Stream::new(params.seed, Strategy::ObjectAware.tag());
    let picks = segment_pick(&descending_order(map.scores()), k, &mut rng);
    MaskSpec::replicate_spatial(g, &flags(ns, picks))
}

/// Segment sampling over all `N` token scores at once.
pub fn leaky_3d_mask(geometry: &PatchGeometry, scores: &TokenScores, params: &MaskParams) -> Result<MaskSpec> {
    params.validate()?;
    let n = geometry.token_count();
    if scores.len() != n {
        return Err(Error::Shape(format!("{} token scores for {n} tokens", scores.len())));
    }
    let k = visible_budget(params.rho, n)?;
    let mut rng = Stream::new(params.seed, Strategy::Leaky3d.tag());
    let picks = segment_pick(&descending_order(scores.scores()), k, &mut rng);
    MaskSpec::new(*geometry, flags(n, picks))
}

/// Draws `round_half_even(x * visible_n)` tokens from the above-mean pool and
/// the rest from the at-or-below-mean pool. A pool too small for its quota
/// passes the deficit to the other pool.
pub fn ratio_x_mask(
    geometry: &PatchGeometry,
    scores: &TokenScores,
    visible_n: usize,
    x: f64,
    seed: u64,
) -> Result<MaskSpec> {
    check_fraction(x)?;
    let n = geometry.token_count();
    if scores.len() != n {
        return Err(Error::Shape(format!("{} token scores for {n} tokens", scores.len())));
    }
    if visible_n > n {
        return Err(Error::Param(format!("visible count {visible_n} exceeds {n} tokens")));
    }
    let mean = scores.mean();
    let (mut fg, mut bg): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| scores.scores()[i] > mean);
    let quota = ((x * visible_n as f64).round_ties_even() as usize).min(visible_n);
    let mut take_fg = quota.min(fg.len());
    let mut take_bg = visible_n - take_fg;
    if take_bg > bg.len() {
        take_bg = bg.len();
        take_fg = visible_n - take_bg;
    }
    let mut rng = Stream::new(seed, Strategy::RatioX(x).tag());
    let mut chosen = rng.choose_prefix(&mut fg, take_fg).to_vec();
    chosen.extend_from_slice(rng.choose_prefix(&mut bg, take_bg));
    MaskSpec::new(*geometry, flags(n, chosen))
}

/// Visible rectangle `(rows, cols)` whose area is closest to `area`,
/// preferring the squarest shape, then the shorter one.
pub fn block_shape(rows: usize, cols: usize, area: usize) -> (usize, usize) {
    let mut best = (1, 1);
    let mut best_key = (usize::MAX, usize::MAX, usize::MAX);
    for bh in 1..=rows {
        for bw in 1..=cols {
            let key = ((bh * bw).abs_diff(area), bh.abs_diff(bw), bh);
            if key < best_key {
                best_key = key;
                best = (bh, bw);
            }
        }
    }
    best
}

pub fn baseline_mask(geometry: &PatchGeometry, params: &MaskParams) -> Result<MaskSpec> {
    params.validate()?;
    let g = *geometry;
    let mut rng = Stream::new(params.seed, params.strategy.tag());
    match params.strategy {
        Strategy::Random => {
            let n = g.token_count();
            let k = visible_budget(params.rho, n)?;
            let mut pool: Vec<usize> = (0..n).collect();
            let chosen = rng.choose_prefix(&mut pool, k).to_vec();
            MaskSpec::new(g, flags(n, chosen))
        }
        Strategy::Tube => {
            let ns = g.spatial_count();
            let k = visible_budget(params.rho, ns)?;
            let mut pool: Vec<usize> = (0..ns).collect();
            let chosen = rng.choose_prefix(&mut pool, k).to_vec();
            MaskSpec::replicate_spatial(g, &flags(ns, chosen))
        }
        Strategy::Block => {
            let (rows, cols) = (g.patch_rows(), g.patch_cols());
            let k = visible_budget(params.rho, g.spatial_count())?;
            let (bh, bw) = block_shape(rows, cols, k);
            let top = rng.index(rows - bh + 1);
            let left = rng.index(cols - bw + 1);
            let cells = (top..top + bh).flat_map(|r| (left..left + bw).map(move |c| r * cols + c));
            MaskSpec::replicate_spatial(g, &flags(g.spatial_count(), cells))
        }
        other => Err(Error::Param(format!("`{other}` is not a baseline strategy"))),
    }
}

/// Dispatches on `params.strategy`. Score-driven strategies read `map`;
/// ratio-x uses a token budget of `round_half_even((1 - rho) * N)`.
pub fn generate_mask(map: &ObjectnessMap, params: &MaskParams) -> Result<MaskSpec> {
    let g = map.geometry();
    match params.strategy {
        Strategy::ObjectAware => object_aware_mask(map, params),
        Strategy::Leaky3d => leaky_3d_mask(g, &crate::objectness::token_scores(map), params),
        Strategy::RatioX(x) => {
            params.validate()?;
            let budget = visible_budget(params.rho, g.token_count())?;
            ratio_x_mask(g, &crate::objectness::token_scores(map), budget, x, params.seed)
        }
        Strategy::Random | Strategy::Tube | Strategy::Block => baseline_mask(g, params),
    }
}

/// Visible-token count each strategy promises for `geometry` and `rho`.
pub fn expected_visible(geometry: &PatchGeometry, strategy: Strategy, rho: f64) -> Result<usize> {
    let slots = geometry.temporal_slots();
    let ns = geometry.spatial_count();
    Ok(match strategy {
        Strategy::ObjectAware | Strategy::Tube => visible_budget(rho, ns)? * slots,
        Strategy::Leaky3d | Strategy::Random | Strategy::RatioX(_) => visible_budget(rho, geometry.token_count())?,
        Strategy::Block => {
            let (bh, bw) = block_shape(geometry.patch_rows(), geometry.patch_cols(), visible_budget(rho, ns)?);
            bh * bw * slots
        }
    })
}

/// Aggregated object-visibility counts over many mask draws.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct VisibilityStats {
    pub trials: u64,
    /// Trials in which at least one object token was visible.
    pub any_object_visible: u64,
    pub object_tokens_visible: u64,
    pub tokens_visible: u64,
}

impl VisibilityStats {
    pub fn p_any_object_visible(&self) -> f64 {
        self.any_object_visible as f64 / self.trials as f64
    }

    pub fn mean_object_visible(&self) -> f64 {
        self.object_tokens_visible as f64 / self.trials as f64
    }

    pub fn mean_visible(&self) -> f64 {
        self.tokens_visible as f64 / self.trials as f64
    }

    fn merge(self, o: Self) -> Self {
        VisibilityStats {
            trials: self.trials + o.trials,
            any_object_visible: self.any_object_visible + o.any_object_visible,
            object_tokens_visible: self.object_tokens_visible + o.object_tokens_visible,
            tokens_visible: self.tokens_visible + o.tokens_visible,
        }
    }
}

/// Seed of trial `trial` in a Monte-Carlo run keyed by `seed`.
pub fn trial_seed(seed: u64, trial: u64) -> u64 {
    Stream::new(seed, "trial").child(trial).key()
}

const CHUNK: u64 = 1024;

/// Draws `trials` masks with per-trial derived seeds and counts how often the
/// tokens flagged in `object_tokens` are visible. Counts are summed, so the
/// result does not depend on `exec`.
pub fn visibility_stats(
    map: &ObjectnessMap,
    object_tokens: &[bool],
    template: &MaskParams,
    trials: u64,
    seed: u64,
    exec: Exec,
) -> Result<VisibilityStats> {
    template.validate()?;
    if object_tokens.len() != map.geometry().token_count() {
        return Err(Error::Shape("object token flags must cover every token".into()));
    }
    let chunks = trials.div_ceil(CHUNK) as usize;
    let parts = par::map_indices(exec, chunks, |c| -> Result<VisibilityStats> {
        let lo = c as u64 * CHUNK;
        let hi = (lo + CHUNK).min(trials);
        let mut acc = VisibilityStats::default();
        for t in lo..hi {
            let mask = generate_mask(map, &template.with_seed(trial_seed(seed, t)))?;
            let obj = mask.visible().iter().zip(object_tokens).filter(|(&v, &o)| v && o).count() as u64;
            acc.trials += 1;
            acc.any_object_visible += u64::from(obj > 0);
            acc.object_tokens_visible += obj;
            acc.tokens_visible += mask.visible_count() as u64;
        }
        Ok(acc)
    });
    parts.into_iter().try_fold(VisibilityStats::default(), |a, p| Ok(a.merge(p?)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(slots: usize, side: usize) -> PatchGeometry {
        PatchGeometry::new(slots, 1, side, side, 1, 1, 1).unwrap()
    }

    fn map(g: PatchGeometry, scores: Vec<f64>) -> ObjectnessMap {
        ObjectnessMap::new(g, scores).unwrap()
    }

    #[test]
    fn budget_rounding() {
        assert_eq!(visible_budget(0.9, 196).unwrap(), 20); // 19.6
        assert_eq!(visible_budget(0.75, 196).unwrap(), 49);
        assert_eq!(visible_budget(0.875, 4).unwrap(), 1); // 0.5 -> 0 -> floored to 1
        assert_eq!(visible_budget(0.625, 4).unwrap(), 2); // 1.5 -> 2
        assert_eq!(visible_budget(0.0, 16).unwrap(), 16);
        assert!(matches!(visible_budget(1.0, 16), Err(Error::Param(_))));
        assert!(matches!(visible_budget(-0.1, 16), Err(Error::Param(_))));
    }

    #[test]
    fn segments_balanced_long_first() {
        assert_eq!(segment_lengths(16, 4), vec![4, 4, 4, 4]);
        assert_eq!(segment_lengths(196, 20), [vec![10; 16], vec![9; 4]].concat());
        assert_eq!(segment_lengths(7, 3), vec![3, 2, 2]);
    }

    #[test]
    fn stable_descending_order() {
        assert_eq!(descending_order(&[1.0, 3.0, 3.0, 0.0, 1.0]), vec![1, 2, 0, 4, 3]);
    }

    #[test]
    fn object_aware_one_per_segment() {
        let g = grid(3, 4);
        let scores: Vec<f64> = (0..16).map(|i| ((i * 7) % 16) as f64).collect();
        let m = map(g, scores.clone());
        let order = descending_order(&scores);
        for seed in 0..50 {
            let mask = object_aware_mask(&m, &MaskParams::new(Strategy::ObjectAware, 0.75, seed)).unwrap();
            assert_eq!(mask.visible_count(), 12);
            assert!(mask.is_slot_consistent());
            for seg in order.chunks(4) {
                assert_eq!(seg.iter().filter(|&&c| mask.is_visible(c)).count(), 1);
            }
        }
    }

    #[test]
    fn zero_ratio_keeps_everything() {
        let g = grid(2, 4);
        let m = map(g, vec![1.0; 16]);
        for s in [Strategy::ObjectAware, Strategy::Leaky3d, Strategy::Random, Strategy::Tube, Strategy::Block] {
            let mask = generate_mask(&m, &MaskParams::new(s, 0.0, 5)).unwrap();
            assert_eq!(mask.visible_count(), 32, "{s}");
        }
    }

    #[test]
    fn full_ratio_rejected() {
        let m = map(grid(1, 4), vec![0.0; 16]);
        let err = generate_mask(&m, &MaskParams::new(Strategy::ObjectAware, 1.0, 0)).unwrap_err();
        assert!(err.to_string().contains("no visible patches"));
    }

    #[test]
    fn ratio_x_pool_split() {
        let g = PatchGeometry::new(1, 1, 1, 8, 1, 1, 1).unwrap();
        let s = TokenScores::new(vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 4.0, 4.0]).unwrap();
        for seed in 0..20 {
            let m = ratio_x_mask(&g, &s, 4, 0.5, seed).unwrap();
            assert_eq!(m.visible_count(), 4);
            assert!(m.is_visible(6) && m.is_visible(7));
        }
        // Only two foreground tokens: X = 1 spills two draws to the background.
        let m = ratio_x_mask(&g, &s, 4, 1.0, 3).unwrap();
        assert_eq!(m.visible_count(), 4);
        assert!(m.is_visible(6) && m.is_visible(7));
        let m = ratio_x_mask(&g, &s, 4, 0.0, 3).unwrap();
        assert!(!m.is_visible(6) && !m.is_visible(7));
        assert!(matches!(ratio_x_mask(&g, &s, 9, 0.5, 0), Err(Error::Param(_))));
        assert!(matches!(ratio_x_mask(&g, &s, 2, 1.5, 0), Err(Error::Param(_))));
    }

    #[test]
    fn block_shapes() {
        assert_eq!(block_shape(4, 4, 4), (2, 2));
        assert_eq!(block_shape(14, 14, 49), (7, 7));
        assert_eq!(block_shape(4, 4, 6), (2, 3));
        assert_eq!(block_shape(2, 2, 1), (1, 1));
        let g = grid(2, 4);
        let mask = baseline_mask(&g, &MaskParams::new(Strategy::Block, 0.75, 11)).unwrap();
        assert_eq!(mask.visible_count(), 8);
        assert!(mask.is_slot_consistent());
    }

    #[test]
    fn tube_count() {
        let g = PatchGeometry::new(16, 3, 224, 224, 2, 16, 16).unwrap();
        let mask = baseline_mask(&g, &MaskParams::new(Strategy::Tube, 0.75, 1)).unwrap();
        assert_eq!(mask.visible_count(), 392);
        assert!(mask.is_slot_consistent());
    }

    #[test]
    fn baseline_rejects_score_strategies() {
        let g = grid(1, 2);
        assert!(baseline_mask(&g, &MaskParams::new(Strategy::ObjectAware, 0.5, 0)).is_err());
    }

    #[test]
    fn deterministic_given_seed() {
        let m = map(grid(2, 4), (0..16).map(|i| i as f64).collect());
        for s in [
            Strategy::ObjectAware,
            Strategy::RatioX(0.3),
            Strategy::Leaky3d,
            Strategy::Random,
            Strategy::Tube,
            Strategy::Block,
        ] {
            let p = MaskParams::new(s, 0.7, 1234);
            assert_eq!(generate_mask(&m, &p).unwrap(), generate_mask(&m, &p).unwrap());
        }
    }

    #[test]
    fn strategy_tags_round_trip() {
        for tag in ["object-aware", "leaky-3d", "random", "tube", "block"] {
            assert_eq!(tag.parse::<Strategy>().unwrap().tag(), tag);
        }
        assert_eq!(Strategy::parse("ratio-x", Some(0.25)).unwrap(), Strategy::RatioX(0.25));
        assert!(Strategy::parse("ratio-x", None).is_err());
        assert!("mgmae".parse::<Strategy>().is_err());
    }

    #[test]
    fn stats_independent_of_exec() {
        let g = grid(1, 4);
        let m = map(g, (0..16).map(|i| if i < 2 { 5.0 } else { 0.0 }).collect());
        let obj: Vec<bool> = (0..16).map(|i| i < 2).collect();
        let p = MaskParams::new(Strategy::Tube, 0.75, 0);
        let a = visibility_stats(&m, &obj, &p, 10_000, 9, Exec::Sequential).unwrap();
        let b = visibility_stats(&m, &obj, &p, 10_000, 9, Exec::Parallel).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.tokens_visible, 40_000);
    }
}
