#![allow(dead_code)]

use lbc_core::nnet::Classifier;
use lbc_core::sampler::GroupIndex;
use rand::Rng;

/// Smallest within-cluster SSE over every 2-partition of `points`, by
/// enumeration. Point 0 is pinned to the first block to skip mirror images.
pub fn brute_force_two_cluster_sse(points: &[Vec<f64>]) -> f64 {
    let n = points.len();
    let sse_of = |members: &[&Vec<f64>]| -> f64 {
        let d = members[0].len();
        let mut mean = vec![0.0; d];
        for p in members {
            for (m, v) in mean.iter_mut().zip(p.iter()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= members.len() as f64);
        members.iter().map(|p| p.iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()).sum()
    };
    let mut best = f64::INFINITY;
    for mask in 0u32..(1 << (n - 1)) {
        let mask = mask << 1;
        let (a, b): (Vec<_>, Vec<_>) = points.iter().enumerate().partition(|(i, _)| mask & (1 << i) == 0);
        if b.is_empty() {
            continue;
        }
        let a: Vec<&Vec<f64>> = a.into_iter().map(|(_, p)| p).collect();
        let b: Vec<&Vec<f64>> = b.into_iter().map(|(_, p)| p).collect();
        best = best.min(sse_of(&a) + sse_of(&b));
    }
    best
}

/// Central finite-difference gradient of the mean batch loss.
pub fn numeric_gradient(model: &Classifier<f64>, inputs: &[&[f64]], targets: &[usize], h: f64) -> Vec<f64> {
    let base = model.parameters();
    let mut probe = model.clone();
    let mut out = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        let mut p = base.clone();
        p[i] = base[i] + h;
        probe.set_parameters(&p);
        let up = probe.loss(inputs, targets).unwrap();
        p[i] = base[i] - h;
        probe.set_parameters(&p);
        let down = probe.loss(inputs, targets).unwrap();
        out.push((up - down) / (2.0 * h));
    }
    out
}

/// `||a - b|| / max(||a||, ||b||)`, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Random index with 2..=5 classes, K in 2..=5 and cells of 0..=60 samples;
/// every class keeps at least one sample.
pub fn random_index<R: Rng>(rng: &mut R) -> GroupIndex {
    let nc = rng.random_range(2..=5);
    let k = rng.random_range(2..=5);
    let mut next = 0;
    let mut cells = Vec::with_capacity(nc * k);
    for _ in 0..nc {
        let mut sizes: Vec<usize> =
            (0..k).map(|_| if rng.random_bool(0.25) { 0 } else { rng.random_range(1..=60) }).collect();
        if sizes.iter().all(|&s| s == 0) {
            sizes[rng.random_range(0..k)] = rng.random_range(1..=60);
        }
        for s in sizes {
            cells.push((next..next + s).collect());
            next += s;
        }
    }
    GroupIndex::from_cells(nc, k, cells)
}
