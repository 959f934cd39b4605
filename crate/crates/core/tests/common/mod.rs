//! Brute-force reference implementations and random instances shared by the
//! integration tests.
#![allow(dead_code)]

use pms_core::increments::{scale_increments, Anchor, FusionWeights};
use pms_core::losses::{loss_current, loss_future, loss_past, mpjpe};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_frames(rng: &mut ChaCha8Rng, frames: usize, joints: usize) -> Vec<Vec<f64>> {
    (0..frames).map(|_| (0..joints * 3).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
}

/// Random convex weights of length `n`.
pub fn random_simplex(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|v| v / s).collect()
}

/// `out[k][n][c] = window[start + k·δ + n][c]`, written as explicit loops.
pub fn oracle_segments(window: &[Vec<f64>], delta: usize, anchor_end: bool) -> Vec<Vec<Vec<f64>>> {
    let start = if anchor_end { window.len() - 5 * delta } else { 0 };
    let mut out = Vec::new();
    for k in 0..5 {
        let mut seg = Vec::new();
        for n in 0..delta {
            let mut row = Vec::new();
            for c in 0..window[0].len() {
                row.push(window[start + k * delta + n][c]);
            }
            seg.push(row);
        }
        out.push(seg);
    }
    out
}

fn seg_sub(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; a[0].len()]; a.len()];
    for n in 0..a.len() {
        for c in 0..a[0].len() {
            out[n][c] = a[n][c] - b[n][c];
        }
    }
    out
}

pub fn oracle_velocity(s: &[Vec<Vec<f64>>]) -> Vec<Vec<Vec<f64>>> {
    (0..4).map(|k| seg_sub(&s[k + 1], &s[k])).collect()
}

/// Second differences straight from the segments: `S₍ₖ₊₂₎ − 2S₍ₖ₊₁₎ + Sₖ`.
pub fn oracle_accel(s: &[Vec<Vec<f64>>]) -> Vec<Vec<Vec<f64>>> {
    let mut out = Vec::new();
    for k in 0..3 {
        let mut seg = vec![vec![0.0; s[0][0].len()]; s[0].len()];
        for n in 0..s[0].len() {
            for c in 0..s[0][0].len() {
                seg[n][c] = s[k + 2][n][c] - 2.0 * s[k + 1][n][c] + s[k][n][c];
            }
        }
        out.push(seg);
    }
    out
}

pub fn oracle_fuse(diffs: &[Vec<Vec<f64>>], w: &[f64]) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; diffs[0][0].len()]; diffs[0].len()];
    for n in 0..diffs[0].len() {
        for c in 0..diffs[0][0].len() {
            let mut acc = 0.0;
            for (k, d) in diffs.iter().enumerate() {
                acc += w[k] * d[n][c];
            }
            out[n][c] = acc;
        }
    }
    out
}

pub fn oracle_l1(pred: &[Vec<f64>], truth: &[Vec<f64>], frames: usize) -> f64 {
    let mut s = 0.0;
    for t in 0..frames {
        for c in 0..pred[t].len() {
            s += (pred[t][c] - truth[t][c]).abs();
        }
    }
    s / (frames * pred[0].len()) as f64
}

pub fn oracle_mpjpe(pred: &[Vec<f64>], truth: &[Vec<f64>]) -> f64 {
    let joints = pred[0].len() / 3;
    let mut s = 0.0;
    for t in 0..pred.len() {
        for j in 0..joints {
            let dx = pred[t][3 * j] - truth[t][3 * j];
            let dy = pred[t][3 * j + 1] - truth[t][3 * j + 1];
            let dz = pred[t][3 * j + 2] - truth[t][3 * j + 2];
            s += (dx * dx + dy * dy + dz * dz).sqrt();
        }
    }
    s / (pred.len() * joints) as f64
}

pub fn max_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs())).fold(0.0, f64::max)
}

/// Runs `instances` random comparisons of every increment and loss kernel
/// against the oracles above; returns the largest absolute deviation seen.
pub fn oracle_sweep(seed: u64, instances: usize) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let joints = r.gen_range(1..=4);
        let delta = r.gen_range(1..=6);
        let k = 5 * delta + r.gen_range(0..6);
        let window = random_frames(&mut r, k, joints);
        let anchor_end = r.gen_bool(0.5);
        let alpha = random_simplex(&mut r, 4);
        let beta = random_simplex(&mut r, 3);
        let weights = FusionWeights {
            alpha: [alpha[0], alpha[1], alpha[2], alpha[3]],
            beta: [beta[0], beta[1], beta[2]],
        };
        let anchor = if anchor_end { Anchor::End } else { Anchor::Start };
        let inc = scale_increments(&window, delta, anchor, &weights).unwrap();
        let segs = oracle_segments(&window, delta, anchor_end);
        let vel = oracle_velocity(&segs);
        let acc = oracle_accel(&segs);
        for k in 0..5 {
            worst = worst.max(max_diff(&inc.segments[k], &segs[k]));
        }
        for k in 0..4 {
            worst = worst.max(max_diff(&inc.velocity[k], &vel[k]));
        }
        for k in 0..3 {
            worst = worst.max(max_diff(&inc.accel[k], &acc[k]));
        }
        worst = worst.max(max_diff(&inc.fused_velocity, &oracle_fuse(&vel, &alpha)));
        worst = worst.max(max_diff(&inc.fused_accel, &oracle_fuse(&acc, &beta)));

        let len = r.gen_range(1..=12);
        let pred = random_frames(&mut r, len, joints);
        let truth = random_frames(&mut r, len, joints);
        worst = worst.max((loss_current(&pred, &truth).unwrap() - oracle_l1(&pred, &truth, len)).abs());
        let deltas: Vec<usize> = (0..r.gen_range(1..=3)).map(|_| r.gen_range(1..=len)).collect();
        let past: f64 = deltas.iter().map(|&d| oracle_l1(&pred, &truth, d)).sum();
        worst = worst.max((loss_past(&pred, &truth, &deltas).unwrap() - past).abs());
        let avail = r.gen_range(0..=len);
        let fdeltas: Vec<usize> = (0..r.gen_range(1..=3)).map(|_| r.gen_range(1..=len + 2)).collect();
        let (fut, skipped) = loss_future(&pred, &truth[..avail], &fdeltas).unwrap();
        let expect: f64 = fdeltas.iter().filter(|&&d| d <= avail).map(|&d| oracle_l1(&pred, &truth, d)).sum();
        assert_eq!(skipped, fdeltas.iter().filter(|&&d| d > avail).count());
        worst = worst.max((fut - expect).abs());
        worst = worst.max((mpjpe(&pred, &truth).unwrap() - oracle_mpjpe(&pred, &truth)).abs());
    }
    worst
}
