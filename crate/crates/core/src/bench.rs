//! Microbenchmark for the matching kernel.

use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::matching::masked_cosine_match;
use crate::random;
use crate::types::{CorrespondenceMap, ObjectMask};

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Fraction of pixels set in both masks; `1.0` gives full masks.
    pub mask_fill: f64,
    pub iters: usize,
    pub seed: u64,
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            channels: 640,
            mask_fill: 1.0,
            iters: 10,
            seed: 0,
            threads: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub latencies: Vec<Duration>,
    /// Matched target pixels per call.
    pub matches_per_call: usize,
    /// FNV-1a over the last correspondence's raw entries.
    pub checksum: u64,
}

impl BenchReport {
    pub fn mean_latency(&self) -> Duration {
        self.latencies.iter().sum::<Duration>() / self.latencies.len().max(1) as u32
    }

    pub fn matches_per_sec(&self) -> f64 {
        let total: f64 = self.latencies.iter().map(Duration::as_secs_f64).sum();
        (self.matches_per_call * self.latencies.len()) as f64 / total
    }
}

pub fn checksum(corr: &CorrespondenceMap) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    corr.to_raw()
        .iter()
        .flat_map(|v| v.to_le_bytes())
        .fold(OFFSET, |h, b| (h ^ b as u64).wrapping_mul(PRIME))
}

pub fn run(cfg: &BenchConfig) -> Result<BenchReport> {
    if cfg.height == 0 || cfg.width == 0 || cfg.channels == 0 {
        return Err(Error::InvalidConfig("bench dimensions must be positive".into()));
    }
    if cfg.iters == 0 {
        return Err(Error::InvalidConfig("iters must be positive".into()));
    }
    if !(0.0..=1.0).contains(&cfg.mask_fill) {
        return Err(Error::InvalidConfig(format!(
            "mask fill {} outside [0, 1]",
            cfg.mask_fill
        )));
    }
    let (h, w, c) = (cfg.height, cfg.width, cfg.channels);
    let mut rng = random::rng(cfg.seed);
    let target = random::feature_map(&mut rng, h, w, c);
    let reference = random::feature_map(&mut rng, h, w, c);
    let (m_target, m_ref) = if cfg.mask_fill >= 1.0 {
        (ObjectMask::full(h, w), ObjectMask::full(h, w))
    } else {
        (
            random::mask(&mut rng, h, w, cfg.mask_fill),
            random::non_empty_mask(&mut rng, h, w, cfg.mask_fill),
        )
    };

    let body = || -> Result<BenchReport> {
        let mut latencies = Vec::with_capacity(cfg.iters);
        let mut last = None;
        for _ in 0..cfg.iters {
            let start = Instant::now();
            let corr = masked_cosine_match(&target, &reference, &m_target, &m_ref, 1e-8)?;
            latencies.push(start.elapsed());
            last = Some(corr);
        }
        Ok(BenchReport {
            latencies,
            matches_per_call: m_target.count(),
            checksum: checksum(last.as_ref().expect("iters > 0")),
        })
    };

    match cfg.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?
            .install(body),
        None => body(),
    }
}
