//! Seeded random instances for the self-check battery, benchmarks and tests.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::types::{FeatureMap, ObjectMask};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Values uniform in `[-1, 1)`.
pub fn feature_map(rng: &mut impl Rng, height: usize, width: usize, channels: usize) -> FeatureMap {
    let data = (0..height * width * channels)
        .map(|_| rng.gen_range(-1.0f32..1.0))
        .collect();
    FeatureMap::new(height, width, channels, data).expect("generated data is finite")
}

/// Each pixel set with probability `fill`.
pub fn mask(rng: &mut impl Rng, height: usize, width: usize, fill: f64) -> ObjectMask {
    let bits = (0..height * width)
        .map(|_| rng.gen_bool(fill.clamp(0.0, 1.0)))
        .collect();
    ObjectMask::new(height, width, bits).expect("length matches")
}

/// Like [`mask`] but with at least one pixel set.
pub fn non_empty_mask(rng: &mut impl Rng, height: usize, width: usize, fill: f64) -> ObjectMask {
    let m = mask(rng, height, width, fill);
    if !m.is_empty() {
        return m;
    }
    let keep = rng.gen_range(0..height * width);
    ObjectMask::from_fn(height, width, |x, y| y * width + x == keep)
}

/// One random matching problem. Grids may differ in size.
#[derive(Debug, Clone)]
pub struct MatchInstance {
    pub target: FeatureMap,
    pub reference: FeatureMap,
    pub m_target: ObjectMask,
    pub m_ref: ObjectMask,
}

/// Random instance with both grids at most `max_dim` on a side and at most
/// `max_channels` channels.
pub fn match_instance(rng: &mut impl Rng, max_dim: usize, max_channels: usize) -> MatchInstance {
    let max_dim = max_dim.max(1);
    let c = rng.gen_range(1..=max_channels.max(1));
    let (th, tw) = (rng.gen_range(1..=max_dim), rng.gen_range(1..=max_dim));
    let (rh, rw) = (rng.gen_range(1..=max_dim), rng.gen_range(1..=max_dim));
    let t_fill = rng.gen_range(0.0..1.0);
    let r_fill = rng.gen_range(0.05..1.0);
    MatchInstance {
        target: feature_map(rng, th, tw, c),
        reference: feature_map(rng, rh, rw, c),
        m_target: mask(rng, th, tw, t_fill),
        m_ref: non_empty_mask(rng, rh, rw, r_fill),
    }
}
