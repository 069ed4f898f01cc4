//! Seeded Lloyd's k-means with k-means++ initialization, shared by PQ
//! training and shard planning. Rows are stored flat (`n × dim`).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::vectors::l2_squared;

/// Index of the nearest centroid under squared L2; ties go to the lowest index.
#[inline]
pub(crate) fn nearest(centroids: &[f32], dim: usize, x: &[f32]) -> (usize, f32) {
    let mut best = (0usize, f32::INFINITY);
    for (c, row) in centroids.chunks_exact(dim).enumerate() {
        let d = l2_squared(row, x);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Two nearest centroid indices (primary, secondary). With a single centroid
/// both entries are 0.
pub(crate) fn nearest_two(centroids: &[f32], dim: usize, x: &[f32]) -> (usize, usize) {
    let mut first = (0usize, f32::INFINITY);
    let mut second = (0usize, f32::INFINITY);
    for (c, row) in centroids.chunks_exact(dim).enumerate() {
        let d = l2_squared(row, x);
        if d < first.1 {
            second = first;
            first = (c, d);
        } else if d < second.1 {
            second = (c, d);
        }
    }
    if second.1.is_infinite() {
        (first.0, first.0)
    } else {
        (first.0, second.0)
    }
}

fn plus_plus_init(data: &[f32], dim: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let n = data.len() / dim;
    let row = |i: usize| &data[i * dim..(i + 1) * dim];
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.gen_range(0..n);
    centroids.extend_from_slice(row(first));
    let mut d2: Vec<f64> = (0..n).map(|i| l2_squared(row(i), row(first)) as f64).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if acc > target && w > 0.0 {
                    chosen = i;
                    break;
                }
            }
            // guard against rounding landing on a zero-weight tail row
            if d2[chosen] == 0.0 {
                chosen = d2.iter().rposition(|&w| w > 0.0).unwrap_or(chosen);
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        let c = row(pick).to_vec();
        for (i, d) in d2.iter_mut().enumerate() {
            let nd = l2_squared(row(i), &c) as f64;
            if nd < *d {
                *d = nd;
            }
        }
        centroids.extend_from_slice(&c);
    }
    centroids
}

/// Runs `iters` Lloyd iterations from a seeded k-means++ start. `iters == 0`
/// returns the initialization unchanged. Empty clusters keep their previous
/// centroid. Requires `data.len() / dim >= k >= 1`.
pub(crate) fn train(data: &[f32], dim: usize, k: usize, iters: usize, seed: u64) -> Vec<f32> {
    let n = data.len() / dim;
    assert!(k >= 1 && n >= k, "k-means needs at least k rows");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_init(data, dim, k, &mut rng);
    let mut sums = vec![0.0f64; k * dim];
    let mut counts = vec![0usize; k];
    for _ in 0..iters {
        sums.iter_mut().for_each(|s| *s = 0.0);
        counts.iter_mut().for_each(|c| *c = 0);
        for x in data.chunks_exact(dim) {
            let (c, _) = nearest(&centroids, dim, x);
            counts[c] += 1;
            for (s, &v) in sums[c * dim..(c + 1) * dim].iter_mut().zip(x) {
                *s += v as f64;
            }
        }
        let mut moved = false;
        for c in 0..k {
            if counts[c] == 0 {
                continue;
            }
            let inv = 1.0 / counts[c] as f64;
            for j in 0..dim {
                let v = (sums[c * dim + j] * inv) as f32;
                if v != centroids[c * dim + j] {
                    moved = true;
                }
                centroids[c * dim + j] = v;
            }
        }
        if !moved {
            break;
        }
    }
    centroids
}
