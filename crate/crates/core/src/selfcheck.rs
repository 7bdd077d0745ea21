//! Randomized oracle battery: matcher vs. brute force, the injection mask
//! law, and the AdaIN moment law.

use std::fmt;

use rand::Rng;

use crate::config::SessionConfig;
use crate::error::Result;
use crate::matching::brute_force_match;
use crate::random;
use crate::transfer::{masked_moments, transfer_step, ObjectPair};
use crate::types::{CorrespondenceMap, FeatureMap, ObjectMask};

pub type MatchFn = fn(&FeatureMap, &FeatureMap, &ObjectMask, &ObjectMask, f64) -> Result<CorrespondenceMap>;
pub type InjectFn = fn(&FeatureMap, &FeatureMap, &ObjectMask) -> Result<FeatureMap>;
pub type AdainFn = fn(&FeatureMap, &FeatureMap, &ObjectMask, &ObjectMask, f64) -> Result<FeatureMap>;

/// Implementations under test. [`Kernels::default`] is the real engine;
/// tests swap in faulty ones to prove the battery can fail.
#[derive(Clone, Copy)]
pub struct Kernels {
    pub matcher: MatchFn,
    pub inject: InjectFn,
    pub adain: AdainFn,
}

impl Default for Kernels {
    fn default() -> Self {
        Self {
            matcher: crate::matching::masked_cosine_match,
            inject: crate::transfer::inject,
            adain: crate::transfer::adain_masked,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SelfCheckConfig {
    pub seeds: u64,
    pub max_dim: usize,
    pub max_channels: usize,
}

impl Default for SelfCheckConfig {
    fn default() -> Self {
        Self {
            seeds: 100,
            max_dim: 16,
            max_channels: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Tally {
    pub passed: u64,
    pub failed: u64,
}

impl Tally {
    fn record(&mut self, ok: bool) {
        if ok {
            self.passed += 1;
        } else {
            self.failed += 1;
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct SelfCheckReport {
    pub oracle: Tally,
    pub mask_law: Tally,
    pub adain: Tally,
    /// First few failure descriptions.
    pub failures: Vec<String>,
}

impl SelfCheckReport {
    pub fn all_passed(&self) -> bool {
        self.oracle.failed + self.mask_law.failed + self.adain.failed == 0
    }

    pub fn exit_code(&self) -> i32 {
        if self.all_passed() {
            0
        } else {
            1
        }
    }

    fn fail(&mut self, msg: String) {
        if self.failures.len() < 10 {
            self.failures.push(msg);
        }
    }
}

impl fmt::Display for SelfCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (name, t) in [
            ("oracle", self.oracle),
            ("mask-law", self.mask_law),
            ("adain-moments", self.adain),
        ] {
            writeln!(f, "{name}\tpass={}\tfail={}", t.passed, t.failed)?;
        }
        for msg in &self.failures {
            writeln!(f, "FAIL {msg}")?;
        }
        write!(f, "{}", if self.all_passed() { "OK" } else { "FAILED" })
    }
}

const EPS: f64 = 1e-8;
const MOMENT_TOL: f64 = 1e-5;

pub fn run(cfg: &SelfCheckConfig) -> SelfCheckReport {
    run_with(cfg, &Kernels::default())
}

pub fn run_with(cfg: &SelfCheckConfig, kernels: &Kernels) -> SelfCheckReport {
    let mut report = SelfCheckReport::default();
    for seed in 0..cfg.seeds {
        let mut rng = random::rng(seed);
        check_oracle(&mut rng, cfg, kernels, seed, &mut report);
        check_mask_law(&mut rng, cfg, kernels, seed, &mut report);
        check_adain(&mut rng, cfg, kernels, seed, &mut report);
    }
    report
}

fn check_oracle(rng: &mut impl Rng, cfg: &SelfCheckConfig, k: &Kernels, seed: u64, report: &mut SelfCheckReport) {
    let inst = random::match_instance(rng, cfg.max_dim, cfg.max_channels);
    let fast = (k.matcher)(&inst.target, &inst.reference, &inst.m_target, &inst.m_ref, EPS);
    let slow = brute_force_match(&inst.target, &inst.reference, &inst.m_target, &inst.m_ref, EPS);
    let ok = matches!((&fast, &slow), (Ok(a), Ok(b)) if a == b);
    report.oracle.record(ok);
    if !ok {
        report.fail(format!("seed {seed}: matcher disagrees with brute force"));
    }
}

fn check_mask_law(rng: &mut impl Rng, cfg: &SelfCheckConfig, k: &Kernels, seed: u64, report: &mut SelfCheckReport) {
    let (h, w) = (rng.gen_range(1..=cfg.max_dim), rng.gen_range(1..=cfg.max_dim));
    let c = rng.gen_range(1..=cfg.max_channels);
    let target = random::feature_map(rng, h, w, c);
    let rearranged = random::feature_map(rng, h, w, c);
    let fill = rng.gen_range(0.0..1.0);
    let m = random::mask(rng, h, w, fill);
    let ok = match (k.inject)(&rearranged, &target, &m) {
        Ok(out) => (0..h * w).all(|q| {
            let expect = if m.get(q) { rearranged.pixel(q) } else { target.pixel(q) };
            bits_equal(out.pixel(q), expect)
        }),
        Err(_) => false,
    };

    // Two objects with disjoint target masks through the full step.
    let split = rng.gen_range(0..=w);
    let m_a = ObjectMask::from_fn(h, w, |x, y| x < split && m.get(y * w + x));
    let m_b = ObjectMask::from_fn(h, w, |x, y| x >= split && m.get(y * w + x));
    let objects = [m_a, m_b].map(|m_target| {
        let (rh, rw) = (rng.gen_range(1..=cfg.max_dim), rng.gen_range(1..=cfg.max_dim));
        let reference = random::feature_map(rng, rh, rw, c);
        let m_ref = random::non_empty_mask(rng, rh, rw, 0.5);
        ObjectPair::new(reference, m_ref, m_target).expect("generated pair is valid")
    });
    let step_ok = match transfer_step(&target, &objects, &SessionConfig::default(), 92, 2) {
        Ok(out) => (0..h * w)
            .filter(|q| !m.get(*q))
            .all(|q| bits_equal(out.pixel(q), target.pixel(q))),
        Err(_) => false,
    };
    report.mask_law.record(ok && step_ok);
    if !(ok && step_ok) {
        report.fail(format!("seed {seed}: pixels outside the target mask changed"));
    }
}

fn check_adain(rng: &mut impl Rng, cfg: &SelfCheckConfig, k: &Kernels, seed: u64, report: &mut SelfCheckReport) {
    let c = rng.gen_range(1..=cfg.max_channels);
    let dim = cfg.max_dim.max(2);
    let (h, w) = (rng.gen_range(2..=dim), rng.gen_range(1..=dim));
    let content = random::feature_map(rng, h, w, c);
    let style = random::feature_map(rng, h, w, c);
    let mut m_c = random::non_empty_mask(rng, h, w, 0.6);
    if m_c.count() < 2 {
        m_c = ObjectMask::full(h, w);
    }
    let m_s = random::non_empty_mask(rng, h, w, 0.6);
    let Ok(cm) = masked_moments(&content, &m_c) else {
        report.adain.record(false);
        return;
    };
    if cm.iter().any(|m| m.std < 1e-3) {
        return;
    }
    let ok = (k.adain)(&content, &style, &m_c, &m_s, EPS)
        .and_then(|out| {
            let om = masked_moments(&out, &m_c)?;
            let sm = masked_moments(&style, &m_s)?;
            let moments_ok = om
                .iter()
                .zip(&sm)
                .all(|(o, s)| (o.mean - s.mean).abs() <= MOMENT_TOL && (o.std - s.std).abs() <= MOMENT_TOL);
            let outside_ok = (0..h * w)
                .filter(|q| !m_c.get(*q))
                .all(|q| bits_equal(out.pixel(q), content.pixel(q)));
            Ok(moments_ok && outside_ok)
        })
        .unwrap_or(false);
    report.adain.record(ok);
    if !ok {
        report.fail(format!("seed {seed}: AdaIN output moments differ from style moments"));
    }
}

fn bits_equal(a: &[f32], b: &[f32]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}
