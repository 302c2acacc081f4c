//! Three-arm toy comparison: tube masking with uniform loss, object-aware
//! masking with uniform loss, object-aware masking with object-aware loss.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::heatmap::SigmaPolicy;
use crate::masking::MaskParams;
use crate::par::{self, Exec};
use crate::synth::{generate, Placement, SynthConfig};
use crate::toymae::{evaluate, train_with, Arm, ModelConfig, ToyModel, TrainConfig, TrainSample};
use crate::types::PatchGeometry;

pub const ARMS: [Arm; 3] = [Arm::Vanilla, Arm::MaskOnly, Arm::MaskAndLoss];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LongTailConfig {
    pub synth: SynthConfig,
    pub train_videos: usize,
    pub eval_videos: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub rho: f64,
    pub model: ModelConfig,
    pub eval_seed: u64,
    pub eval_repeats: usize,
}

impl Default for LongTailConfig {
    /// 2 frames of 24x24, one temporal slot of 6x6 tokens, one object at 5%
    /// coverage near the centre.
    fn default() -> Self {
        let g = PatchGeometry::new(2, 1, 24, 24, 2, 4, 4).expect("valid geometry");
        let mut synth = SynthConfig::new(g, 0.05);
        synth.placement = Placement::Fixed(vec![(10, 10)]);
        LongTailConfig {
            synth,
            train_videos: 16,
            eval_videos: 16,
            steps: 500,
            learning_rate: 1.0,
            batch_size: 8,
            rho: 0.75,
            model: ModelConfig { dim: 16, pool_visible: false },
            eval_seed: 99,
            eval_repeats: 4,
        }
    }
}

/// Held-out masked-token errors of each arm, in [`ARMS`] order.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SeedResult {
    pub seed: u64,
    pub object_mse: [f64; 3],
    pub background_mse: [f64; 3],
}

fn dataset(cfg: &LongTailConfig, base: u64, count: usize) -> Result<Vec<TrainSample>> {
    (0..count as u64)
        .map(|i| TrainSample::from_synth(&generate(&cfg.synth, base + i)?, SigmaPolicy::default(), false))
        .collect()
}

/// Trains every arm from the same initialisation on the same videos.
pub fn run_seed(cfg: &LongTailConfig, seed: u64, exec: Exec) -> Result<SeedResult> {
    let base = seed.wrapping_mul(1000);
    let train_set = dataset(cfg, base, cfg.train_videos)?;
    let eval_set = dataset(cfg, base + 500, cfg.eval_videos)?;
    let runs = par::map_slice(exec, &ARMS, |&arm| -> Result<(f64, f64)> {
        let tc = TrainConfig {
            steps: cfg.steps,
            learning_rate: cfg.learning_rate,
            seed,
            batch_size: cfg.batch_size,
            mask: MaskParams::new(arm.strategy(), cfg.rho, 0),
            objectness: arm.objectness(),
            use_mu: true,
            model: cfg.model,
        };
        let mut model = ToyModel::init(cfg.synth.geometry, cfg.model, seed)?;
        train_with(&mut model, &train_set, &tc, Exec::Sequential)?;
        let e = evaluate(&model, &eval_set, &tc.mask, cfg.eval_seed, cfg.eval_repeats)?;
        Ok((e.object_mse(), e.background_mse()))
    });
    let mut out = SeedResult { seed, object_mse: [0.0; 3], background_mse: [0.0; 3] };
    for (i, r) in runs.into_iter().enumerate() {
        let (o, b) = r?;
        out.object_mse[i] = o;
        out.background_mse[i] = b;
    }
    Ok(out)
}

/// Runs `seeds` in parallel (per `exec`); results are in seed order.
pub fn run(cfg: &LongTailConfig, seeds: &[u64], exec: Exec) -> Result<Vec<SeedResult>> {
    par::map_slice(exec, seeds, |&s| run_seed(cfg, s, exec)).into_iter().collect()
}

/// Median object MSE per arm (upper median for even counts).
pub fn median_object_mse(results: &[SeedResult]) -> [f64; 3] {
    let mut out = [f64::NAN; 3];
    for (a, slot) in out.iter_mut().enumerate() {
        let mut v: Vec<f64> = results.iter().map(|r| r.object_mse[a]).collect();
        if v.is_empty() {
            continue;
        }
        v.sort_by(f64::total_cmp);
        *slot = v[v.len() / 2];
    }
    out
}
