//! Object-aware reconstruction loss.
//!
//! For masked tokens `i` the weight is `(S_i + mu) / sum_j (S_j + mu)` where
//! `mu` is the mean score over all `N` tokens. The per-token error is the mean
//! squared difference over the patch's `t * C * h * w` values.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::objectness::TokenScores;
use crate::types::{MaskSpec, VideoTensor};

/// Weights over the masked tokens `K^inv`, ascending token order.
#[derive(Clone, Debug, PartialEq)]
pub struct LossWeights {
    tokens: Vec<usize>,
    weights: Vec<f64>,
    token_count: usize,
    mu_used: bool,
    mu_value: f64,
}

#[derive(Serialize)]
struct WeightLine {
    token: usize,
    weight: f64,
}

impl LossWeights {
    pub fn tokens(&self) -> &[usize] {
        &self.tokens
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.tokens.iter().copied().zip(self.weights.iter().copied())
    }

    pub fn mu_used(&self) -> bool {
        self.mu_used
    }

    pub fn mu_value(&self) -> f64 {
        self.mu_value
    }

    pub fn token_count(&self) -> usize {
        self.token_count
    }

    /// Length-`N` vector with zeros at visible tokens.
    pub fn dense(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.token_count];
        for (t, w) in self.iter() {
            d[t] = w;
        }
        d
    }

    /// One `{"token": i, "weight": w}` object per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for (token, weight) in self.iter() {
            out.push_str(&serde_json::to_string(&WeightLine { token, weight }).expect("plain struct"));
            out.push('\n');
        }
        out
    }
}

fn masked_or_err(mask: &MaskSpec) -> Result<Vec<usize>> {
    let masked = mask.masked_tokens();
    if masked.is_empty() {
        return Err(Error::Param("mask leaves nothing to reconstruct".into()));
    }
    Ok(masked)
}

/// Equal weights `1 / |K^inv|`: the conventional masked MSE.
pub fn uniform_weights(mask: &MaskSpec) -> Result<LossWeights> {
    let tokens = masked_or_err(mask)?;
    let w = 1.0 / tokens.len() as f64;
    Ok(LossWeights {
        weights: vec![w; tokens.len()],
        tokens,
        token_count: mask.visible().len(),
        mu_used: false,
        mu_value: 0.0,
    })
}

/// Object-aware weights. Without `mu`, zero-score tokens get zero weight.
/// Equal raw terms (including an all-zero denominator) give exactly uniform
/// weights.
pub fn loss_weights(scores: &TokenScores, mask: &MaskSpec, use_mu: bool) -> Result<LossWeights> {
    let n = mask.visible().len();
    if scores.len() != n {
        return Err(Error::Shape(format!("{} scores for a {n}-token mask", scores.len())));
    }
    let tokens = masked_or_err(mask)?;
    let mu = if use_mu { scores.mean() } else { 0.0 };
    let raw: Vec<f64> = tokens.iter().map(|&i| scores.scores()[i] + mu).collect();
    let total: f64 = raw.iter().sum();
    let weights = if total == 0.0 || raw.iter().all(|&r| r == raw[0]) {
        vec![1.0 / raw.len() as f64; raw.len()]
    } else {
        raw.iter().map(|r| r / total).collect()
    };
    Ok(LossWeights { tokens, weights, token_count: n, mu_used: use_mu, mu_value: mu })
}

/// Dense per-token patch values, `token_count * patch_len`.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenPatches {
    patch_len: usize,
    values: Vec<f64>,
}

impl TokenPatches {
    pub fn new(patch_len: usize, values: Vec<f64>) -> Result<Self> {
        if patch_len == 0 || !values.len().is_multiple_of(patch_len) {
            return Err(Error::Shape(format!("{} values do not split into patches of {patch_len}", values.len())));
        }
        Ok(TokenPatches { patch_len, values })
    }

    pub fn zeros(tokens: usize, patch_len: usize) -> Self {
        TokenPatches { patch_len, values: vec![0.0; tokens * patch_len] }
    }

    pub fn from_video(video: &VideoTensor) -> Self {
        let g = video.geometry();
        let mut values = Vec::with_capacity(g.video_len());
        let mut buf = Vec::with_capacity(g.patch_len());
        for i in 0..g.token_count() {
            video.patch_into(i, &mut buf).expect("token in range");
            values.extend_from_slice(&buf);
        }
        TokenPatches { patch_len: g.patch_len(), values }
    }

    pub fn patch_len(&self) -> usize {
        self.patch_len
    }

    pub fn token_count(&self) -> usize {
        self.values.len() / self.patch_len
    }

    pub fn patch(&self, token: usize) -> &[f64] {
        &self.values[token * self.patch_len..(token + 1) * self.patch_len]
    }

    pub fn patch_mut(&mut self, token: usize) -> &mut [f64] {
        &mut self.values[token * self.patch_len..(token + 1) * self.patch_len]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Per-patch standardization `(x - mean) / sqrt(var + 1e-6)`.
    pub fn normalized(&self) -> TokenPatches {
        let mut out = self.clone();
        for p in out.values.chunks_exact_mut(self.patch_len) {
            let n = p.len() as f64;
            let mean = p.iter().sum::<f64>() / n;
            let var = p.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let inv = 1.0 / (var + 1e-6).sqrt();
            p.iter_mut().for_each(|v| *v = (*v - mean) * inv);
        }
        out
    }
}

fn check_pair(targets: &TokenPatches, recon: &TokenPatches, weights: &LossWeights) -> Result<()> {
    if targets.patch_len != recon.patch_len || targets.values.len() != recon.values.len() {
        return Err(Error::Shape(format!(
            "reconstruction {}x{} does not match target {}x{}",
            recon.token_count(),
            recon.patch_len,
            targets.token_count(),
            targets.patch_len
        )));
    }
    if weights.token_count != targets.token_count() {
        return Err(Error::Shape(format!(
            "weights index {} tokens, targets have {}",
            weights.token_count,
            targets.token_count()
        )));
    }
    Ok(())
}

/// Mean squared difference over one patch.
pub fn patch_mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

/// `sum_i w_i * mean((V_i - V^_i)^2)` against explicit targets.
pub fn weighted_mse_patches(targets: &TokenPatches, recon: &TokenPatches, weights: &LossWeights) -> Result<f64> {
    check_pair(targets, recon, weights)?;
    Ok(weights.iter().map(|(i, w)| w * patch_mse(targets.patch(i), recon.patch(i))).sum())
}

pub fn weighted_mse(original: &VideoTensor, recon: &TokenPatches, weights: &LossWeights) -> Result<f64> {
    weighted_mse_patches(&TokenPatches::from_video(original), recon, weights)
}

/// `d loss / d V^_i = 2 w_i (V^_i - V_i) / P`; zero for unweighted tokens.
pub fn weighted_mse_gradient_patches(
    targets: &TokenPatches,
    recon: &TokenPatches,
    weights: &LossWeights,
) -> Result<TokenPatches> {
    check_pair(targets, recon, weights)?;
    let mut grad = TokenPatches::zeros(targets.token_count(), targets.patch_len);
    let scale = 2.0 / targets.patch_len as f64;
    for (i, w) in weights.iter() {
        for ((g, y), v) in grad.patch_mut(i).iter_mut().zip(recon.patch(i)).zip(targets.patch(i)) {
            *g = scale * w * (y - v);
        }
    }
    Ok(grad)
}

pub fn weighted_mse_gradient(
    original: &VideoTensor,
    recon: &TokenPatches,
    weights: &LossWeights,
) -> Result<TokenPatches> {
    weighted_mse_gradient_patches(&TokenPatches::from_video(original), recon, weights)
}
