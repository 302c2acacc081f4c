use proptest::prelude::*;

use soar_core::loss::{loss_weights, uniform_weights, weighted_mse, weighted_mse_patches, TokenPatches};
use soar_core::rng::Stream;
use soar_core::{MaskSpec, PatchGeometry, TokenScores, VideoTensor};

fn geom() -> PatchGeometry {
    PatchGeometry::new(4, 1, 8, 8, 2, 2, 2).unwrap()
}

/// Random scores (some exactly zero) and a mask with at least one masked token.
fn instance(seed: u64, n: usize) -> (TokenScores, MaskSpec) {
    let mut r = Stream::new(seed, "loss-instance");
    let g = geom();
    let scores = (0..n).map(|_| if r.below(3) == 0 { 0.0 } else { r.range(0.0, 10.0) }).collect();
    let mut vis: Vec<bool> = (0..n).map(|_| r.below(2) == 0).collect();
    vis[r.index(n)] = false;
    (TokenScores::new(scores).unwrap(), MaskSpec::new(g, vis).unwrap())
}

#[test]
fn weights_sum_to_one() {
    let n = geom().token_count();
    for seed in 0..1000 {
        let (s, m) = instance(seed, n);
        for use_mu in [true, false] {
            let w = loss_weights(&s, &m, use_mu).unwrap();
            let sum: f64 = w.weights().iter().sum();
            assert!((sum - 1.0).abs() < 1e-9, "seed {seed}: {sum}");
            assert_eq!(w.tokens(), m.masked_tokens().as_slice());
        }
    }
}

/// Integer scores: weights are exact rationals (S_i * N + sum S) / (|K| * sum S + N * sum_K S).
fn rational_weights(scores: &[u64], masked: &[usize]) -> Vec<f64> {
    let n = scores.len() as u128;
    let total: u128 = scores.iter().map(|&s| s as u128).sum();
    let num: Vec<u128> = masked.iter().map(|&i| scores[i] as u128 * n + total).collect();
    let den: u128 = num.iter().sum();
    num.iter().map(|&x| x as f64 / den as f64).collect()
}

#[test]
fn matches_rational_oracle() {
    let g = geom();
    let n = g.token_count();
    let mut r = Stream::new(9, "loss-rational");
    for _ in 0..200 {
        let ints: Vec<u64> = (0..n).map(|_| r.below(50)).collect();
        if ints.iter().all(|&v| v == 0) {
            continue;
        }
        let mut vis: Vec<bool> = (0..n).map(|_| r.below(2) == 0).collect();
        vis[0] = false;
        let m = MaskSpec::new(g, vis).unwrap();
        let s = TokenScores::new(ints.iter().map(|&v| v as f64).collect()).unwrap();
        let w = loss_weights(&s, &m, true).unwrap();
        let masked = m.masked_tokens();
        if masked.iter().all(|&i| ints[i] == ints[masked[0]]) {
            continue;
        }
        for (a, b) in w.weights().iter().zip(rational_weights(&ints, &masked)) {
            assert!((a - b).abs() <= 1e-14 * b.max(1e-300), "{a} vs {b}");
        }
    }
}

#[test]
fn hand_example() {
    let g = PatchGeometry::new(1, 1, 1, 3, 1, 1, 1).unwrap();
    let m = MaskSpec::new(g, vec![false; 3]).unwrap();
    let w = loss_weights(&TokenScores::new(vec![0.0, 1.0, 3.0]).unwrap(), &m, true).unwrap();
    for (a, b) in w.weights().iter().zip([1.0 / 6.0, 7.0 / 24.0, 13.0 / 24.0]) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn constant_scores_reduce_to_masked_mse() {
    let g = geom();
    let n = g.token_count();
    let mut r = Stream::new(4, "loss-reduce");
    for c in [0.0, 1.0, 3.7] {
        let (_, m) = instance(c as u64 + 10, n);
        let w = loss_weights(&TokenScores::new(vec![c; n]).unwrap(), &m, true).unwrap();
        assert_eq!(w.weights(), uniform_weights(&m).unwrap().weights());
        assert!(w.weights().iter().all(|&x| x == 1.0 / m.masked_count() as f64));
        let video = VideoTensor::new(g, (0..g.video_len()).map(|_| r.range(-1.0, 1.0)).collect()).unwrap();
        let recon = TokenPatches::new(g.patch_len(), (0..g.video_len()).map(|_| r.range(-1.0, 1.0)).collect()).unwrap();
        let ours = weighted_mse(&video, &recon, &w).unwrap();
        let orig = TokenPatches::from_video(&video);
        let mut sum = 0.0;
        let mut count = 0;
        for t in m.masked_tokens() {
            for (a, b) in orig.patch(t).iter().zip(recon.patch(t)) {
                sum += (a - b) * (a - b);
                count += 1;
            }
        }
        assert!((ours - sum / count as f64).abs() < 1e-12);
    }
}

#[test]
fn no_mu_zeroes_zero_score_tokens() {
    let n = geom().token_count();
    for seed in 0..200 {
        let (s, m) = instance(seed, n);
        let w = loss_weights(&s, &m, false).unwrap();
        let positive = w.tokens().iter().any(|&t| s.scores()[t] > 0.0);
        for (t, wt) in w.iter() {
            if positive && s.scores()[t] == 0.0 {
                assert_eq!(wt, 0.0);
            }
        }
    }
}

#[test]
fn unmasked_tokens_never_affect_loss() {
    let g = geom();
    let n = g.token_count();
    let mut r = Stream::new(8, "loss-unmasked");
    for seed in 0..100 {
        let (s, m) = instance(seed, n);
        let w = loss_weights(&s, &m, true).unwrap();
        let target =
            TokenPatches::new(g.patch_len(), (0..g.video_len()).map(|_| r.range(-1.0, 1.0)).collect()).unwrap();
        let mut recon =
            TokenPatches::new(g.patch_len(), (0..g.video_len()).map(|_| r.range(-1.0, 1.0)).collect()).unwrap();
        let before = weighted_mse_patches(&target, &recon, &w).unwrap();
        for t in m.visible_tokens() {
            recon.patch_mut(t).iter_mut().for_each(|v| *v = 1e6);
        }
        assert_eq!(weighted_mse_patches(&target, &recon, &w).unwrap(), before);
    }
}

proptest! {
    #[test]
    fn scale_invariance(seed in 0u64..10_000, c in 0.01f64..100.0, use_mu in any::<bool>()) {
        let (s, m) = instance(seed, geom().token_count());
        let scaled = TokenScores::new(s.scores().iter().map(|v| v * c).collect()).unwrap();
        let a = loss_weights(&s, &m, use_mu).unwrap();
        let b = loss_weights(&scaled, &m, use_mu).unwrap();
        for (x, y) in a.weights().iter().zip(b.weights()) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn bias_direction(seed in 0u64..10_000) {
        let (s, m) = instance(seed, geom().token_count());
        let w = loss_weights(&s, &m, true).unwrap();
        let pairs: Vec<(usize, f64)> = w.iter().collect();
        for &(a, wa) in &pairs {
            for &(b, wb) in &pairs {
                if s.scores()[a] > s.scores()[b] {
                    prop_assert!(wa > wb);
                }
            }
        }
    }
}
