//! Masked dense semantic matching by argmax cosine similarity.
//!
//! For every target pixel `q` inside the target mask, the match is the
//! reference pixel `p` inside the reference mask maximizing
//! `cos(F_target(q), F_ref(p))`. Ties go to the lowest linear index `p`.
//!
//! The fast path ([`PreparedReference`]) packs the masked reference pixels
//! channel-major in blocks and caches their norms, then evaluates blocks of
//! dot products at once. Each similarity is still produced by the same
//! sequence of IEEE operations as [`cosine_similarity`]: a dot product
//! accumulated in channel order with one fused multiply-add per channel,
//! divided by the product of the two guarded norms, then clamped. That is
//! what makes [`masked_cosine_match`] and [`brute_force_match`] agree bit
//! for bit, on any thread count.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::types::{validate_pair, CorrespondenceMap, FeatureMap, FlowMap, ObjectMask};

/// Queries scored together in the inner kernel.
const QUERY_BLOCK: usize = 8;
/// Reference pixels per packed block.
const REF_BLOCK: usize = 16;
/// Query blocks per parallel task; a task streams every reference block once.
const BLOCKS_PER_TASK: usize = 16;

/// `a·b / (max(‖a‖, ε) · max(‖b‖, ε))`, clamped to `[-1, 1]`. Dot product
/// and squared norm accumulate in index order, one fused multiply-add per
/// term.
pub fn cosine_similarity(a: &[f32], b: &[f32], epsilon: f32) -> Result<f32> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let mut dot = 0.0f32;
    for k in 0..a.len() {
        dot = a[k].mul_add(b[k], dot);
    }
    let denom = norm(a).max(epsilon) * norm(b).max(epsilon);
    Ok((dot / denom).clamp(-1.0, 1.0))
}

#[inline]
fn norm(v: &[f32]) -> f32 {
    let mut s = 0.0f32;
    for x in v {
        s = x.mul_add(*x, s);
    }
    s.sqrt()
}

fn check_inputs(target: &FeatureMap, reference: &FeatureMap, m_target: &ObjectMask, m_ref: &ObjectMask) -> Result<()> {
    validate_pair(target, reference)?;
    m_target.check_dims("target mask vs target map", target.dims())?;
    m_ref.check_dims("reference mask vs reference map", reference.dims())?;
    if m_ref.is_empty() {
        return Err(Error::EmptyReferenceMask);
    }
    Ok(())
}

/// Naive double loop over every `(q, p)` pair. Verification oracle for
/// [`masked_cosine_match`]; same contract, same tie-break.
pub fn brute_force_match(
    target: &FeatureMap,
    reference: &FeatureMap,
    m_target: &ObjectMask,
    m_ref: &ObjectMask,
    epsilon: f64,
) -> Result<CorrespondenceMap> {
    check_inputs(target, reference, m_target, m_ref)?;
    let eps = epsilon as f32;
    let mut entries = vec![None; target.pixels()];
    for (q, entry) in entries.iter_mut().enumerate() {
        if !m_target.get(q) {
            continue;
        }
        let mut best_p = None;
        let mut best_s = f32::NEG_INFINITY;
        for p in 0..reference.pixels() {
            if !m_ref.get(p) {
                continue;
            }
            if best_p.is_none() {
                best_p = Some(p as u32);
            }
            let s = cosine_similarity(target.pixel(q), reference.pixel(p), eps)?;
            if s > best_s {
                best_s = s;
                best_p = Some(p as u32);
            }
        }
        *entry = best_p;
    }
    CorrespondenceMap::new(target.height(), target.width(), entries)
}

/// Exact masked argmax-cosine matching.
pub fn masked_cosine_match(
    target: &FeatureMap,
    reference: &FeatureMap,
    m_target: &ObjectMask,
    m_ref: &ObjectMask,
    epsilon: f64,
) -> Result<CorrespondenceMap> {
    check_inputs(target, reference, m_target, m_ref)?;
    PreparedReference::new(reference, m_ref, epsilon)?.match_target(target, m_target)
}

/// Masked reference features packed for repeated matching against
/// changing targets. Built once per `(object, t, layer)`.
#[derive(Debug, Clone)]
pub struct PreparedReference {
    height: usize,
    width: usize,
    channels: usize,
    epsilon: f32,
    /// Linear indices of masked reference pixels, ascending.
    indices: Vec<u32>,
    /// Guarded norms `max(‖F_ref(p)‖, ε)`, padded to whole blocks.
    norms: Vec<f32>,
    /// Per block: `channels` rows of `REF_BLOCK` values, zero padded.
    packed: Vec<f32>,
}

impl PreparedReference {
    pub fn new(reference: &FeatureMap, m_ref: &ObjectMask, epsilon: f64) -> Result<Self> {
        reference.check_finite()?;
        m_ref.check_dims("reference mask vs reference map", reference.dims())?;
        if m_ref.is_empty() {
            return Err(Error::EmptyReferenceMask);
        }
        let eps = epsilon as f32;
        let c = reference.channels();
        let indices = m_ref.indices();
        let n_blocks = indices.len().div_ceil(REF_BLOCK);
        let mut norms = vec![1.0f32; n_blocks * REF_BLOCK];
        let mut packed = vec![0.0f32; n_blocks * REF_BLOCK * c];
        for (slot, &p) in indices.iter().enumerate() {
            let v = reference.pixel(p as usize);
            norms[slot] = norm(v).max(eps);
            let (b, j) = (slot / REF_BLOCK, slot % REF_BLOCK);
            let block = &mut packed[b * REF_BLOCK * c..(b + 1) * REF_BLOCK * c];
            for (ch, x) in v.iter().enumerate() {
                block[ch * REF_BLOCK + j] = *x;
            }
        }
        Ok(Self {
            height: reference.height(),
            width: reference.width(),
            channels: c,
            epsilon: eps,
            indices,
            norms,
            packed,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Number of masked reference pixels.
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Matches every masked target pixel against the cached reference.
    pub fn match_target(&self, target: &FeatureMap, m_target: &ObjectMask) -> Result<CorrespondenceMap> {
        if target.channels() != self.channels {
            return Err(Error::ChannelMismatch {
                left: target.channels(),
                right: self.channels,
            });
        }
        target.check_finite()?;
        m_target.check_dims("target mask vs target map", target.dims())?;

        let queries = m_target.indices();
        let task_len = QUERY_BLOCK * BLOCKS_PER_TASK;
        let mut best = vec![0u32; queries.len()];
        queries
            .par_chunks(task_len)
            .zip(best.par_chunks_mut(task_len))
            .for_each(|(qs, out)| self.scan_task(target, qs, out));

        let mut entries = vec![None; target.pixels()];
        for (q, slot) in queries.iter().zip(best) {
            entries[*q as usize] = Some(self.indices[slot as usize]);
        }
        CorrespondenceMap::new(target.height(), target.width(), entries)
    }

    /// Scores up to `QUERY_BLOCK * BLOCKS_PER_TASK` queries against all
    /// reference blocks, writing the winning slot (position in `indices`).
    fn scan_task(&self, target: &FeatureMap, queries: &[u32], out: &mut [u32]) {
        let c = self.channels;
        let n_groups = queries.len().div_ceil(QUERY_BLOCK);
        // Channel-major interleave of each query group, zero padded.
        let mut qbuf = vec![0.0f32; n_groups * c * QUERY_BLOCK];
        let mut qnorm = vec![1.0f32; n_groups * QUERY_BLOCK];
        for (i, &q) in queries.iter().enumerate() {
            let v = target.pixel(q as usize);
            qnorm[i] = norm(v).max(self.epsilon);
            let (g, lane) = (i / QUERY_BLOCK, i % QUERY_BLOCK);
            let group = &mut qbuf[g * c * QUERY_BLOCK..(g + 1) * c * QUERY_BLOCK];
            for (ch, x) in v.iter().enumerate() {
                group[ch * QUERY_BLOCK + lane] = *x;
            }
        }

        let mut best_s = vec![f32::NEG_INFINITY; queries.len()];
        out.fill(0);
        let n_refs = self.indices.len();
        for (b, block) in self.packed.chunks_exact(c * REF_BLOCK).enumerate() {
            let base = b * REF_BLOCK;
            let valid = REF_BLOCK.min(n_refs - base);
            for g in 0..n_groups {
                let acc = block_dots(&qbuf[g * c * QUERY_BLOCK..(g + 1) * c * QUERY_BLOCK], block);
                let lanes = QUERY_BLOCK.min(queries.len() - g * QUERY_BLOCK);
                for (lane, row) in acc.iter().enumerate().take(lanes) {
                    let i = g * QUERY_BLOCK + lane;
                    for (j, dot) in row.iter().enumerate().take(valid) {
                        let s = (dot / (qnorm[i] * self.norms[base + j])).clamp(-1.0, 1.0);
                        if s > best_s[i] {
                            best_s[i] = s;
                            out[i] = (base + j) as u32;
                        }
                    }
                }
            }
        }
    }
}

type Accumulator = [[f32; REF_BLOCK]; QUERY_BLOCK];

/// Dot products of one query group against one reference block, each
/// accumulated in ascending channel order.
///
/// Every path performs one fused multiply-add per lane per channel, so all
/// of them produce the same bits as the scalar loop.
#[inline]
fn block_dots(queries: &[f32], block: &[f32]) -> Accumulator {
    debug_assert_eq!(queries.len() / QUERY_BLOCK, block.len() / REF_BLOCK);
    #[cfg(target_arch = "x86_64")]
    {
        if std::is_x86_feature_detected!("avx512f") {
            // SAFETY: the CPU supports AVX-512F, checked above.
            return unsafe { block_dots_avx512(queries, block) };
        }
        if std::is_x86_feature_detected!("avx2") && std::is_x86_feature_detected!("fma") {
            // SAFETY: the CPU supports AVX2 and FMA, checked above.
            return unsafe { block_dots_avx2(queries, block) };
        }
    }
    block_dots_scalar(queries, block)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f")]
unsafe fn block_dots_avx512(queries: &[f32], block: &[f32]) -> Accumulator {
    use std::arch::x86_64::*;
    let c = block.len() / REF_BLOCK;
    let mut acc = [_mm512_setzero_ps(); QUERY_BLOCK];
    for ch in 0..c {
        let r = _mm512_loadu_ps(block.as_ptr().add(ch * REF_BLOCK));
        let q = &queries[ch * QUERY_BLOCK..(ch + 1) * QUERY_BLOCK];
        for (a, &qi) in acc.iter_mut().zip(q) {
            *a = _mm512_fmadd_ps(_mm512_set1_ps(qi), r, *a);
        }
    }
    let mut out = [[0.0f32; REF_BLOCK]; QUERY_BLOCK];
    for (row, a) in out.iter_mut().zip(acc) {
        _mm512_storeu_ps(row.as_mut_ptr(), a);
    }
    out
}

// Two ymm halves per reference row; queries in halves of four to stay
// within sixteen registers.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn block_dots_avx2(queries: &[f32], block: &[f32]) -> Accumulator {
    use std::arch::x86_64::*;
    const HALF: usize = QUERY_BLOCK / 2;
    let c = block.len() / REF_BLOCK;
    let mut out = [[0.0f32; REF_BLOCK]; QUERY_BLOCK];
    for part in 0..2 {
        let mut lo = [_mm256_setzero_ps(); HALF];
        let mut hi = [_mm256_setzero_ps(); HALF];
        for ch in 0..c {
            let r = block.as_ptr().add(ch * REF_BLOCK);
            let (r0, r1) = (_mm256_loadu_ps(r), _mm256_loadu_ps(r.add(8)));
            let q = &queries[ch * QUERY_BLOCK + part * HALF..ch * QUERY_BLOCK + (part + 1) * HALF];
            for i in 0..HALF {
                let b = _mm256_set1_ps(q[i]);
                lo[i] = _mm256_fmadd_ps(b, r0, lo[i]);
                hi[i] = _mm256_fmadd_ps(b, r1, hi[i]);
            }
        }
        for i in 0..HALF {
            let row = out[part * HALF + i].as_mut_ptr();
            _mm256_storeu_ps(row, lo[i]);
            _mm256_storeu_ps(row.add(8), hi[i]);
        }
    }
    out
}

fn block_dots_scalar(queries: &[f32], block: &[f32]) -> Accumulator {
    let mut acc = [[0.0f32; REF_BLOCK]; QUERY_BLOCK];
    for (qv, rv) in queries.chunks_exact(QUERY_BLOCK).zip(block.chunks_exact(REF_BLOCK)) {
        for (row, &qi) in acc.iter_mut().zip(qv) {
            for (a, &r) in row.iter_mut().zip(rv) {
                *a = qi.mul_add(r, *a);
            }
        }
    }
    acc
}

/// Displacement field induced by a correspondence: for matched `q`, the
/// offset from `q`'s coordinates to its match's coordinates on a reference
/// grid `ref_width` pixels wide.
pub fn correspondence_to_flow(corr: &CorrespondenceMap, ref_width: usize) -> Result<FlowMap> {
    let n = corr.height() * corr.width();
    let mut displacement = vec![[0.0f32; 2]; n];
    let mut validity = vec![false; n];
    for (q, entry) in corr.entries().iter().enumerate() {
        let Some(p) = *entry else { continue };
        if ref_width == 0 {
            return Err(Error::IndexOutOfRange {
                index: p as usize,
                len: 0,
            });
        }
        let (xq, yq) = ((q % corr.width()) as f32, (q / corr.width()) as f32);
        let (xp, yp) = ((p as usize % ref_width) as f32, (p as usize / ref_width) as f32);
        displacement[q] = [xp - xq, yp - yq];
        validity[q] = true;
    }
    FlowMap::new(corr.height(), corr.width(), displacement, validity)
}

/// [`correspondence_to_flow`] with the matched indices checked against a
/// full `ref_height x ref_width` grid.
pub fn correspondence_to_flow_checked(
    corr: &CorrespondenceMap,
    ref_height: usize,
    ref_width: usize,
) -> Result<FlowMap> {
    corr.check_indices(ref_height * ref_width)?;
    correspondence_to_flow(corr, ref_width)
}
