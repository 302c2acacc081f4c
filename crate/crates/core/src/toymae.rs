//! A deliberately small masked autoencoder used to exercise masks and loss
//! weights end to end.
//!
//! Per token `n` with patch `x_n` and fixed sinusoidal position `p_n`:
//!
//! ```text
//! e_n  = We x_n + be                       (patch embedding)
//! z_n  = e_n + p_n                         (visible)
//! z_n  = m + p_n                           (masked, m = learned mask token)
//! h_n  = tanh(Wc z_n + bc)                 (encoder)
//! y_n  = Wd h_n + bd                       (decoder)
//! ```
//!
//! With [`ModelConfig::pool_visible`] masked tokens also receive
//! `ctx = mean_{j visible} e_j`, a crude stand-in for attention that lets
//! visible content reach masked positions. It is off by default.
//!
//! Gradients are derived by hand and checked against finite differences in
//! the tests. Training is plain gradient descent with a fixed step.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heatmap::{video_heatmap, SigmaPolicy};
use crate::loss::{self, patch_mse, LossWeights, TokenPatches};
use crate::masking::{generate_mask, MaskParams, Strategy};
use crate::objectness::{patch_objectness, token_scores, ObjectnessMap, TokenScores};
use crate::par::{self, Exec};
use crate::rng::Stream;
use crate::synth::SynthSample;
use crate::types::{MaskSpec, PatchGeometry};

/// Trainable parameters, all row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Params {
    /// `D x P`
    pub embed_w: Vec<f64>,
    pub embed_b: Vec<f64>,
    /// `D x D`
    pub enc_w: Vec<f64>,
    pub enc_b: Vec<f64>,
    pub mask_token: Vec<f64>,
    /// `P x D`
    pub dec_w: Vec<f64>,
    pub dec_b: Vec<f64>,
}

pub const PARAM_NAMES: [&str; 7] = ["embed_w", "embed_b", "enc_w", "enc_b", "mask_token", "dec_w", "dec_b"];

impl Params {
    pub fn zeros(patch_len: usize, dim: usize) -> Self {
        Params {
            embed_w: vec![0.0; dim * patch_len],
            embed_b: vec![0.0; dim],
            enc_w: vec![0.0; dim * dim],
            enc_b: vec![0.0; dim],
            mask_token: vec![0.0; dim],
            dec_w: vec![0.0; patch_len * dim],
            dec_b: vec![0.0; patch_len],
        }
    }

    pub fn tensors(&self) -> [&Vec<f64>; 7] {
        [&self.embed_w, &self.embed_b, &self.enc_w, &self.enc_b, &self.mask_token, &self.dec_w, &self.dec_b]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<f64>; 7] {
        [
            &mut self.embed_w,
            &mut self.embed_b,
            &mut self.enc_w,
            &mut self.enc_b,
            &mut self.mask_token,
            &mut self.dec_w,
            &mut self.dec_b,
        ]
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, other: &Params, scale: f64) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += scale * y);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub dim: usize,
    /// Feed the mean visible embedding to masked tokens.
    #[serde(default)]
    pub pool_visible: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { dim: 16, pool_visible: false }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyModel {
    pub params: Params,
    geometry: PatchGeometry,
    config: ModelConfig,
    pos: Vec<f64>,
}

/// `pos[n][2i] = sin(n / 10000^(2i/D))`, `pos[n][2i+1] = cos(..)`.
pub fn sinusoidal_table(tokens: usize, dim: usize) -> Vec<f64> {
    let mut t = vec![0.0; tokens * dim];
    for n in 0..tokens {
        for d in 0..dim {
            let i = (d / 2) * 2;
            let angle = n as f64 / 10000f64.powf(i as f64 / dim as f64);
            t[n * dim + d] = if d % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    t
}

fn matvec(m: &[f64], cols: usize, x: &[f64], bias: &[f64], out: &mut [f64]) {
    for (r, o) in out.iter_mut().enumerate() {
        let row = &m[r * cols..(r + 1) * cols];
        *o = bias[r] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `out += m^T g` for an `rows x cols` matrix.
fn matvec_t_acc(m: &[f64], cols: usize, g: &[f64], out: &mut [f64]) {
    for (r, gr) in g.iter().enumerate() {
        if *gr == 0.0 {
            continue;
        }
        let row = &m[r * cols..(r + 1) * cols];
        out.iter_mut().zip(row).for_each(|(o, a)| *o += gr * a);
    }
}

/// `m += g x^T`
fn outer_acc(m: &mut [f64], cols: usize, g: &[f64], x: &[f64]) {
    for (r, gr) in g.iter().enumerate() {
        if *gr == 0.0 {
            continue;
        }
        m[r * cols..(r + 1) * cols].iter_mut().zip(x).for_each(|(a, b)| *a += gr * b);
    }
}

struct Cache {
    z: Vec<f64>,
    h: Vec<f64>,
    y: TokenPatches,
    visible: Vec<usize>,
}

impl ToyModel {
    pub fn zeros(geometry: PatchGeometry, config: ModelConfig) -> Result<Self> {
        if config.dim == 0 {
            return Err(Error::Param("model dimension must be at least 1".into()));
        }
        Ok(ToyModel {
            params: Params::zeros(geometry.patch_len(), config.dim),
            pos: sinusoidal_table(geometry.token_count(), config.dim),
            geometry,
            config,
        })
    }

    /// Weights uniform in `+-1/sqrt(fan_in)`, mask token in `+-0.1`, biases zero.
    pub fn init(geometry: PatchGeometry, config: ModelConfig, seed: u64) -> Result<Self> {
        let mut m = Self::zeros(geometry, config)?;
        let mut rng = Stream::new(seed, "toymae-init");
        let (p, d) = (geometry.patch_len(), config.dim);
        let mut fill = |v: &mut Vec<f64>, scale: f64| v.iter_mut().for_each(|x| *x = rng.range(-scale, scale));
        fill(&mut m.params.embed_w, 1.0 / (p as f64).sqrt());
        fill(&mut m.params.enc_w, 1.0 / (d as f64).sqrt());
        fill(&mut m.params.mask_token, 0.1);
        fill(&mut m.params.dec_w, 1.0 / (d as f64).sqrt());
        Ok(m)
    }

    pub fn geometry(&self) -> &PatchGeometry {
        &self.geometry
    }

    pub fn config(&self) -> ModelConfig {
        self.config
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn positions(&self) -> &[f64] {
        &self.pos
    }

    fn check(&self, inputs: &TokenPatches, mask: &MaskSpec) -> Result<()> {
        let g = &self.geometry;
        if mask.geometry() != g {
            return Err(Error::Shape("mask geometry differs from model geometry".into()));
        }
        if inputs.token_count() != g.token_count() || inputs.patch_len() != g.patch_len() {
            return Err(Error::Shape(format!(
                "inputs {}x{} do not match model {}x{}",
                inputs.token_count(),
                inputs.patch_len(),
                g.token_count(),
                g.patch_len()
            )));
        }
        if !self.params.is_finite() {
            return Err(Error::Value("model parameters are not finite".into()));
        }
        Ok(())
    }

    fn forward_cached(&self, inputs: &TokenPatches, mask: &MaskSpec) -> Result<Cache> {
        self.check(inputs, mask)?;
        let (n, d, p) = (self.geometry.token_count(), self.config.dim, self.geometry.patch_len());
        let prm = &self.params;
        let visible = mask.visible_tokens();
        let mut z = vec![0.0; n * d];
        let mut e = vec![0.0; d];
        let mut ctx = vec![0.0; d];
        for &j in &visible {
            matvec(&prm.embed_w, p, inputs.patch(j), &prm.embed_b, &mut e);
            z[j * d..(j + 1) * d].copy_from_slice(&e);
            ctx.iter_mut().zip(&e).for_each(|(c, v)| *c += v);
        }
        if self.config.pool_visible && !visible.is_empty() {
            let inv = 1.0 / visible.len() as f64;
            ctx.iter_mut().for_each(|c| *c *= inv);
        } else {
            ctx.iter_mut().for_each(|c| *c = 0.0);
        }
        for tok in 0..n {
            let zt = &mut z[tok * d..(tok + 1) * d];
            if !mask.is_visible(tok) {
                for k in 0..d {
                    zt[k] = prm.mask_token[k] + ctx[k];
                }
            }
            zt.iter_mut().zip(&self.pos[tok * d..(tok + 1) * d]).for_each(|(a, b)| *a += b);
        }
        let mut h = vec![0.0; n * d];
        let mut y = TokenPatches::zeros(n, p);
        for tok in 0..n {
            let ht = &mut h[tok * d..(tok + 1) * d];
            matvec(&prm.enc_w, d, &z[tok * d..(tok + 1) * d], &prm.enc_b, ht);
            ht.iter_mut().for_each(|v| *v = v.tanh());
            matvec(&prm.dec_w, d, ht, &prm.dec_b, y.patch_mut(tok));
        }
        Ok(Cache { z, h, y, visible })
    }

    /// Reconstruction of all `N` tokens.
    pub fn forward(&self, inputs: &TokenPatches, mask: &MaskSpec) -> Result<TokenPatches> {
        Ok(self.forward_cached(inputs, mask)?.y)
    }

    pub fn loss(
        &self,
        inputs: &TokenPatches,
        targets: &TokenPatches,
        mask: &MaskSpec,
        weights: &LossWeights,
    ) -> Result<f64> {
        loss::weighted_mse_patches(targets, &self.forward(inputs, mask)?, weights)
    }

    /// Loss, reconstruction and exact parameter gradients of the weighted MSE.
    pub fn backward(
        &self,
        inputs: &TokenPatches,
        targets: &TokenPatches,
        mask: &MaskSpec,
        weights: &LossWeights,
    ) -> Result<(f64, TokenPatches, Params)> {
        let cache = self.forward_cached(inputs, mask)?;
        let loss_value = loss::weighted_mse_patches(targets, &cache.y, weights)?;
        let gy = loss::weighted_mse_gradient_patches(targets, &cache.y, weights)?;
        let (d, p) = (self.config.dim, self.geometry.patch_len());
        let prm = &self.params;
        let mut g = Params::zeros(p, d);
        let mut gctx = vec![0.0; d];
        // Gradient reaching each visible token's embedding directly.
        let mut ge_direct: Vec<(usize, Vec<f64>)> = Vec::new();
        let mut ga = vec![0.0; d];
        let mut gz = vec![0.0; d];
        for &tok in weights.tokens() {
            let gyt = gy.patch(tok);
            let ht = &cache.h[tok * d..(tok + 1) * d];
            let zt = &cache.z[tok * d..(tok + 1) * d];
            g.dec_b.iter_mut().zip(gyt).for_each(|(a, b)| *a += b);
            outer_acc(&mut g.dec_w, d, gyt, ht);
            ga.iter_mut().for_each(|v| *v = 0.0);
            matvec_t_acc(&prm.dec_w, d, gyt, &mut ga);
            ga.iter_mut().zip(ht).for_each(|(a, hv)| *a *= 1.0 - hv * hv);
            g.enc_b.iter_mut().zip(&ga).for_each(|(a, b)| *a += b);
            outer_acc(&mut g.enc_w, d, &ga, zt);
            gz.iter_mut().for_each(|v| *v = 0.0);
            matvec_t_acc(&prm.enc_w, d, &ga, &mut gz);
            if mask.is_visible(tok) {
                ge_direct.push((tok, gz.clone()));
            } else {
                g.mask_token.iter_mut().zip(&gz).for_each(|(a, b)| *a += b);
                gctx.iter_mut().zip(&gz).for_each(|(a, b)| *a += b);
            }
        }
        let pooled = self.config.pool_visible && !cache.visible.is_empty();
        if pooled {
            let inv = 1.0 / cache.visible.len() as f64;
            let share: Vec<f64> = gctx.iter().map(|v| v * inv).collect();
            let mut xsum = vec![0.0; p];
            for &j in &cache.visible {
                xsum.iter_mut().zip(inputs.patch(j)).for_each(|(a, b)| *a += b);
            }
            outer_acc(&mut g.embed_w, p, &share, &xsum);
            g.embed_b.iter_mut().zip(&gctx).for_each(|(a, b)| *a += b);
        }
        for (tok, ge) in ge_direct {
            outer_acc(&mut g.embed_w, p, &ge, inputs.patch(tok));
            g.embed_b.iter_mut().zip(&ge).for_each(|(a, b)| *a += b);
        }
        Ok((loss_value, cache.y, g))
    }
}

/// One preprocessed training video.
#[derive(Clone, Debug)]
pub struct TrainSample {
    pub inputs: TokenPatches,
    pub targets: TokenPatches,
    pub map: ObjectnessMap,
    pub scores: TokenScores,
    /// Per-token flag: overlaps an object.
    pub object: Vec<bool>,
}

impl TrainSample {
    pub fn from_synth(sample: &SynthSample, sigma: SigmaPolicy, normalize_targets: bool) -> Result<Self> {
        let g = sample.video.geometry();
        let heat = video_heatmap(&sample.detections, g, sigma)?;
        let map = patch_objectness(&heat, g)?;
        let inputs = TokenPatches::from_video(&sample.video);
        let targets = if normalize_targets { inputs.normalized() } else { inputs.clone() };
        let mut object = vec![false; g.token_count()];
        for &t in &sample.object_tokens {
            object[t] = true;
        }
        Ok(TrainSample { scores: token_scores(&map), inputs, targets, map, object })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub batch_size: usize,
    pub mask: MaskParams,
    /// Object-aware weights when true, uniform weights otherwise.
    pub objectness: bool,
    pub use_mu: bool,
    #[serde(default)]
    pub model: ModelConfig,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Param("steps must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Param("learning rate must be finite and non-negative".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Param("batch size must be at least 1".into()));
        }
        self.mask.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub total_loss: f64,
    /// Mean patch MSE over masked object tokens in the batch (NaN if none).
    pub object_mse: f64,
    /// Mean patch MSE over masked background tokens in the batch (NaN if none).
    pub background_mse: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trace {
    pub rows: Vec<TraceRow>,
}

impl Trace {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,total_loss,object_mse,background_mse\n");
        for r in &self.rows {
            writeln!(s, "{},{:e},{:e},{:e}", r.step, r.total_loss, r.object_mse, r.background_mse)
                .expect("write to string");
        }
        s
    }
}

/// Mask seed for `(run seed, sample id, step)`.
pub fn mask_seed(run_seed: u64, sample: usize, step: usize) -> u64 {
    Stream::new(run_seed, "train-mask").child(sample as u64).child(step as u64).key()
}

/// Weights for one sample under the configured loss flags.
pub fn sample_weights(sample: &TrainSample, mask: &MaskSpec, objectness: bool, use_mu: bool) -> Result<LossWeights> {
    if objectness {
        loss::loss_weights(&sample.scores, mask, use_mu)
    } else {
        loss::uniform_weights(mask)
    }
}

/// Split reconstruction error into object and background sums/counts.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ErrorSplit {
    pub object_sum: f64,
    pub object_count: usize,
    pub background_sum: f64,
    pub background_count: usize,
}

impl ErrorSplit {
    fn add(&mut self, o: &ErrorSplit) {
        self.object_sum += o.object_sum;
        self.object_count += o.object_count;
        self.background_sum += o.background_sum;
        self.background_count += o.background_count;
    }

    pub fn object_mse(&self) -> f64 {
        self.object_sum / self.object_count as f64
    }

    pub fn background_mse(&self) -> f64 {
        self.background_sum / self.background_count as f64
    }
}

fn split_errors(sample: &TrainSample, recon: &TokenPatches, mask: &MaskSpec) -> ErrorSplit {
    let mut s = ErrorSplit::default();
    for tok in mask.masked_tokens() {
        let e = patch_mse(sample.targets.patch(tok), recon.patch(tok));
        if sample.object[tok] {
            s.object_sum += e;
            s.object_count += 1;
        } else {
            s.background_sum += e;
            s.background_count += 1;
        }
    }
    s
}

/// Plain gradient descent over `dataset`. Step `s` uses samples
/// `(s * B + b) mod len`; batch gradients are averaged in batch order.
pub fn train(model: &mut ToyModel, dataset: &[TrainSample], config: &TrainConfig) -> Result<Trace> {
    train_with(model, dataset, config, Exec::default())
}

pub fn train_with(model: &mut ToyModel, dataset: &[TrainSample], config: &TrainConfig, exec: Exec) -> Result<Trace> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Param("training dataset is empty".into()));
    }
    let b = config.batch_size;
    let mut trace = Trace::default();
    for step in 0..config.steps {
        let frozen = &*model;
        let results = par::map_indices(exec, b, |k| -> Result<(f64, Params, ErrorSplit)> {
            let id = (step * b + k) % dataset.len();
            let sample = &dataset[id];
            let mask = generate_mask(&sample.map, &config.mask.with_seed(mask_seed(config.seed, id, step)))?;
            let weights = sample_weights(sample, &mask, config.objectness, config.use_mu)?;
            let (l, recon, g) = frozen.backward(&sample.inputs, &sample.targets, &mask, &weights)?;
            Ok((l, g, split_errors(sample, &recon, &mask)))
        });
        let d = model.dim();
        let mut grad = Params::zeros(model.geometry.patch_len(), d);
        let mut total = 0.0;
        let mut split = ErrorSplit::default();
        for r in results {
            let (l, g, s) = r?;
            total += l;
            grad.add_scaled(&g, 1.0);
            split.add(&s);
        }
        let total = total / b as f64;
        if !total.is_finite() {
            return Err(Error::Diverged { step, loss: total });
        }
        trace.rows.push(TraceRow {
            step,
            total_loss: total,
            object_mse: split.object_mse(),
            background_mse: split.background_mse(),
        });
        if config.learning_rate > 0.0 {
            model.params.add_scaled(&grad, -config.learning_rate / b as f64);
        }
    }
    Ok(trace)
}

/// Mean masked-token errors of a frozen model over `dataset`, drawing
/// `repeats` masks per sample from `seed`.
pub fn evaluate(
    model: &ToyModel,
    dataset: &[TrainSample],
    mask: &MaskParams,
    seed: u64,
    repeats: usize,
) -> Result<ErrorSplit> {
    let mut total = ErrorSplit::default();
    let eval = Stream::new(seed, "eval-mask");
    for (id, sample) in dataset.iter().enumerate() {
        for r in 0..repeats {
            let ms = eval.child(id as u64).child(r as u64).key();
            let m = generate_mask(&sample.map, &mask.with_seed(ms))?;
            let recon = model.forward(&sample.inputs, &m)?;
            total.add(&split_errors(sample, &recon, &m));
        }
    }
    Ok(total)
}

/// The three ablation arms compared in the long-tail experiment.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Arm {
    /// Tube masking, uniform loss.
    Vanilla,
    /// Object-aware masking, uniform loss.
    MaskOnly,
    /// Object-aware masking, object-aware loss.
    MaskAndLoss,
}

impl Arm {
    pub fn strategy(self) -> Strategy {
        match self {
            Arm::Vanilla => Strategy::Tube,
            Arm::MaskOnly | Arm::MaskAndLoss => Strategy::ObjectAware,
        }
    }

    pub fn objectness(self) -> bool {
        self == Arm::MaskAndLoss
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom() -> PatchGeometry {
        PatchGeometry::new(2, 1, 4, 4, 1, 2, 2).unwrap()
    }

    #[test]
    fn zero_model_reconstructs_zero() {
        let g = geom();
        let m = ToyModel::zeros(g, ModelConfig { dim: 4, pool_visible: true }).unwrap();
        let inputs = TokenPatches::new(4, (0..32).map(|v| v as f64).collect()).unwrap();
        let mask = MaskSpec::replicate_spatial(g, &[true, false, false, true]).unwrap();
        assert!(m.forward(&inputs, &mask).unwrap().values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_is_deterministic() {
        let g = geom();
        let m = ToyModel::init(g, ModelConfig::default(), 3).unwrap();
        let inputs = TokenPatches::new(4, (0..32).map(|v| (v as f64).sin()).collect()).unwrap();
        let mask = MaskSpec::replicate_spatial(g, &[false, true, false, false]).unwrap();
        assert_eq!(m.forward(&inputs, &mask).unwrap(), m.forward(&inputs, &mask).unwrap());
    }

    #[test]
    fn shape_errors() {
        let g = geom();
        let m = ToyModel::zeros(g, ModelConfig::default()).unwrap();
        let bad = TokenPatches::zeros(3, 4);
        let mask = MaskSpec::new(g, vec![true; 8]).unwrap();
        assert!(matches!(m.forward(&bad, &mask), Err(Error::Shape(_))));
        let other = PatchGeometry::new(1, 1, 4, 4, 1, 2, 2).unwrap();
        let mask2 = MaskSpec::new(other, vec![true; 4]).unwrap();
        assert!(matches!(m.forward(&TokenPatches::zeros(8, 4), &mask2), Err(Error::Shape(_))));
        assert!(ToyModel::zeros(g, ModelConfig { dim: 0, pool_visible: true }).is_err());
    }

    #[test]
    fn positions_are_sinusoids() {
        let t = sinusoidal_table(3, 4);
        assert_eq!(t[0..4], [0.0, 1.0, 0.0, 1.0]);
        assert!((t[4] - 1f64.sin()).abs() < 1e-15);
        assert!((t[6] - (1.0 / 100.0f64).sin()).abs() < 1e-15);
        assert!((t[7] - (1.0 / 100.0f64).cos()).abs() < 1e-15);
    }

    #[test]
    fn csv_header() {
        let t = Trace { rows: vec![TraceRow { step: 0, total_loss: 1.5, object_mse: 2.0, background_mse: 0.5 }] };
        let csv = t.to_csv();
        assert!(csv.starts_with("step,total_loss,object_mse,background_mse\n0,1.5e0,2e0,5e-1"));
    }
}
