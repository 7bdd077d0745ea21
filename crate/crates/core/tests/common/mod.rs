//! Scalar-loop oracles shared by the integration tests. Written against the
//! math directly, not the library's internals.

#![allow(dead_code)]

use rand::Rng;
use semxfer::random;
use semxfer::{CorrespondenceMap, FeatureMap, ObjectMask};

fn norm32(v: &[f32]) -> f32 {
    let mut s = 0.0f32;
    for x in v {
        s = x.mul_add(*x, s);
    }
    s.sqrt()
}

/// Cosine in f32 with the same arithmetic as the engine contract: dot and
/// squared norm as sequential fused multiply-adds, each norm clamped below
/// by epsilon.
pub fn cosine32(a: &[f32], b: &[f32], eps: f32) -> f32 {
    let mut dot = 0.0f32;
    for k in 0..a.len() {
        dot = a[k].mul_add(b[k], dot);
    }
    (dot / (norm32(a).max(eps) * norm32(b).max(eps))).clamp(-1.0, 1.0)
}

pub fn cosine64(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
    let na: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Double loop over every (q, p) pair, strict `>` so the lowest p wins ties.
pub fn naive_match(
    target: &FeatureMap,
    reference: &FeatureMap,
    m_target: &ObjectMask,
    m_ref: &ObjectMask,
    eps: f64,
) -> CorrespondenceMap {
    let eps = eps as f32;
    let entries = (0..target.pixels())
        .map(|q| {
            if !m_target.get(q) {
                return None;
            }
            let mut best = (f32::NEG_INFINITY, 0u32);
            for p in 0..reference.pixels() {
                if !m_ref.get(p) {
                    continue;
                }
                let s = cosine32(target.pixel(q), reference.pixel(p), eps);
                if s > best.0 {
                    best = (s, p as u32);
                }
            }
            Some(best.1)
        })
        .collect();
    CorrespondenceMap::new(target.height(), target.width(), entries).unwrap()
}

/// Matching instance in which every masked target pixel has a unique best
/// reference pixel, beating the runner-up by at least `margin` in f64
/// cosine. Target pixels are noisy copies of random reference pixels;
/// queries that still fall short of the margin are dropped from the mask.
pub struct UniqueInstance {
    pub target: FeatureMap,
    pub reference: FeatureMap,
    pub m_target: ObjectMask,
    pub m_ref: ObjectMask,
}

pub fn unique_instance(seed: u64, max_dim: usize, max_channels: usize, margin: f64) -> UniqueInstance {
    let mut rng = random::rng(seed);
    let c = rng.gen_range(3..=max_channels.max(3));
    let (rh, rw) = (rng.gen_range(1..=max_dim), rng.gen_range(1..=max_dim));
    let (th, tw) = (rng.gen_range(1..=max_dim), rng.gen_range(1..=max_dim));
    let reference = random::feature_map(&mut rng, rh, rw, c);
    let m_ref = random::non_empty_mask(&mut rng, rh, rw, 0.5);
    let ref_idx = m_ref.indices();
    let mut data = Vec::with_capacity(th * tw * c);
    for _ in 0..th * tw {
        let p = ref_idx[rng.gen_range(0..ref_idx.len())] as usize;
        for v in reference.pixel(p) {
            data.push(v + rng.gen_range(-0.05f32..0.05));
        }
    }
    let target = FeatureMap::new(th, tw, c, data).unwrap();
    let m0 = random::mask(&mut rng, th, tw, 0.8);
    let m_target = ObjectMask::from_fn(th, tw, |x, y| {
        let q = y * tw + x;
        m0.get(q) && top_gap(&target, &reference, &m_ref, q) >= margin
    });
    UniqueInstance {
        target,
        reference,
        m_target,
        m_ref,
    }
}

fn top_gap(target: &FeatureMap, reference: &FeatureMap, m_ref: &ObjectMask, q: usize) -> f64 {
    let mut scores: Vec<f64> = m_ref
        .indices()
        .iter()
        .map(|&p| cosine64(target.pixel(q), reference.pixel(p as usize)))
        .collect();
    scores.sort_by(|a, b| b.partial_cmp(a).unwrap());
    if scores.len() < 2 {
        return f64::INFINITY;
    }
    scores[0] - scores[1]
}

/// out(q) = reference(corr(q)), zero where unmatched.
pub fn scalar_gather(reference: &FeatureMap, corr: &CorrespondenceMap) -> FeatureMap {
    let c = reference.channels();
    let mut data = vec![0.0f32; corr.height() * corr.width() * c];
    for q in 0..corr.height() * corr.width() {
        if let Some(p) = corr.get(q) {
            for k in 0..c {
                data[q * c + k] = reference.data()[p as usize * c + k];
            }
        }
    }
    FeatureMap::new(corr.height(), corr.width(), c, data).unwrap()
}

/// out(q) = if mask(q) { inside(q) } else { outside(q) }.
pub fn splice(inside: &FeatureMap, outside: &FeatureMap, mask: &ObjectMask) -> FeatureMap {
    let c = outside.channels();
    let mut data = outside.data().to_vec();
    for q in 0..outside.pixels() {
        if mask.get(q) {
            data[q * c..(q + 1) * c].copy_from_slice(inside.pixel(q));
        }
    }
    FeatureMap::new(outside.height(), outside.width(), c, data).unwrap()
}

/// Masked per-channel (mean, population std) in f64.
pub fn moments(map: &FeatureMap, mask: &ObjectMask) -> Vec<(f64, f64)> {
    let idx = mask.indices();
    let n = idx.len() as f64;
    (0..map.channels())
        .map(|k| {
            let mean = idx.iter().map(|&q| map.pixel(q as usize)[k] as f64).sum::<f64>() / n;
            let var = idx
                .iter()
                .map(|&q| (map.pixel(q as usize)[k] as f64 - mean).powi(2))
                .sum::<f64>()
                / n;
            (mean, var.sqrt())
        })
        .collect()
}

pub fn bits_eq(a: &FeatureMap, b: &FeatureMap) -> bool {
    a.dims() == b.dims()
        && a.channels() == b.channels()
        && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits())
}

pub mod golden;
