//! Feature rearrangement, masked injection, masked AdaIN and the per-step
//! orchestration over one or more objects.

use rayon::prelude::*;

use crate::config::SessionConfig;
use crate::error::{dims_mismatch, Error, Result};
use crate::matching::PreparedReference;
use crate::types::{CorrespondenceMap, FeatureMap, ObjectMask};

/// One object to transfer: reference features, the object's mask in the
/// reference, and the region it should land on in the target.
#[derive(Debug, Clone)]
pub struct ObjectPair {
    pub reference: FeatureMap,
    pub m_ref: ObjectMask,
    pub m_target: ObjectMask,
}

impl ObjectPair {
    pub fn new(reference: FeatureMap, m_ref: ObjectMask, m_target: ObjectMask) -> Result<Self> {
        m_ref.check_dims("reference mask vs reference map", reference.dims())?;
        if m_ref.is_empty() {
            return Err(Error::EmptyReferenceMask);
        }
        Ok(Self {
            reference,
            m_ref,
            m_target,
        })
    }
}

/// Gathers reference features into the target layout:
/// `out(q) = reference(corr(q))`, zero where unmatched.
pub fn rearrange(reference: &FeatureMap, corr: &CorrespondenceMap, target_dims: (usize, usize)) -> Result<FeatureMap> {
    if corr.dims() != target_dims {
        return Err(dims_mismatch("correspondence vs target", corr.dims(), target_dims));
    }
    corr.check_indices(reference.pixels())?;
    let mut out = FeatureMap::zeros(target_dims.0, target_dims.1, reference.channels());
    for (q, entry) in corr.entries().iter().enumerate() {
        if let Some(p) = entry {
            out.pixel_mut(q).copy_from_slice(reference.pixel(*p as usize));
        }
    }
    Ok(out)
}

/// Masked blend `rearranged ⊙ M + target ⊙ (1 − M)`. Pixels outside the
/// mask are copied from `target` unchanged.
pub fn inject(rearranged: &FeatureMap, target: &FeatureMap, m_target: &ObjectMask) -> Result<FeatureMap> {
    if rearranged.dims() != target.dims() {
        return Err(dims_mismatch("rearranged vs target", rearranged.dims(), target.dims()));
    }
    if rearranged.channels() != target.channels() {
        return Err(Error::DimensionMismatch(format!(
            "channels: {} vs {}",
            rearranged.channels(),
            target.channels()
        )));
    }
    m_target.check_dims("target mask vs target map", target.dims())?;
    let mut out = target.clone();
    for q in 0..target.pixels() {
        if m_target.get(q) {
            out.pixel_mut(q).copy_from_slice(rearranged.pixel(q));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelMoments {
    pub mean: f64,
    pub std: f64,
}

/// Per-channel mean and population standard deviation over masked pixels.
pub fn masked_moments(map: &FeatureMap, mask: &ObjectMask) -> Result<Vec<ChannelMoments>> {
    mask.check_dims("mask vs feature map", map.dims())?;
    let idx = mask.indices();
    if idx.is_empty() {
        return Err(Error::EmptyMask);
    }
    let n = idx.len() as f64;
    let c = map.channels();
    let mut mean = vec![0.0f64; c];
    for &p in &idx {
        for (m, v) in mean.iter_mut().zip(map.pixel(p as usize)) {
            *m += *v as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0f64; c];
    for &p in &idx {
        for ((s, m), v) in var.iter_mut().zip(&mean).zip(map.pixel(p as usize)) {
            let d = *v as f64 - m;
            *s += d * d;
        }
    }
    Ok(mean
        .into_iter()
        .zip(var)
        .map(|(mean, v)| ChannelMoments {
            mean,
            std: (v / n).sqrt(),
        })
        .collect())
}

/// Masked AdaIN: per channel, masked content pixels are renormalized to the
/// masked style statistics, `(x − μ_c) / max(σ_c, ε) · σ_s + μ_s`.
/// Pixels outside `m_content` are left untouched.
pub fn adain_masked(
    content: &FeatureMap,
    style: &FeatureMap,
    m_content: &ObjectMask,
    m_style: &ObjectMask,
    epsilon: f64,
) -> Result<FeatureMap> {
    if content.channels() != style.channels() {
        return Err(Error::ChannelMismatch {
            left: content.channels(),
            right: style.channels(),
        });
    }
    let cm = masked_moments(content, m_content)?;
    let sm = masked_moments(style, m_style)?;
    let mut out = content.clone();
    for q in 0..content.pixels() {
        if !m_content.get(q) {
            continue;
        }
        for ((x, c), s) in out.pixel_mut(q).iter_mut().zip(&cm).zip(&sm) {
            *x = ((*x as f64 - c.mean) / c.std.max(epsilon) * s.std + s.mean) as f32;
        }
    }
    Ok(out)
}

fn check_disjoint(masks: &[&ObjectMask]) -> Result<()> {
    let Some(first) = masks.first() else {
        return Ok(());
    };
    let mut owner: Vec<Option<usize>> = vec![None; first.bits().len()];
    for (i, m) in masks.iter().enumerate() {
        if m.dims() != first.dims() {
            return Err(dims_mismatch("target masks", m.dims(), first.dims()));
        }
        for (q, bit) in m.bits().iter().enumerate() {
            if *bit {
                if let Some(j) = owner[q] {
                    return Err(Error::OverlappingTargetMasks(j, i));
                }
                owner[q] = Some(i);
            }
        }
    }
    Ok(())
}

/// Rearranges each object's reference and splices all of them into the
/// target in one pass. Returns the injected map and each object's
/// correspondence.
pub fn inject_objects(
    target: &FeatureMap,
    objects: &[(&PreparedReference, &FeatureMap, &ObjectMask)],
) -> Result<(FeatureMap, Vec<CorrespondenceMap>)> {
    let masks: Vec<&ObjectMask> = objects.iter().map(|o| o.2).collect();
    check_disjoint(&masks)?;
    for m in &masks {
        m.check_dims("target mask vs target map", target.dims())?;
    }
    let corrs = objects
        .par_iter()
        .map(|(prepared, _, m_target)| prepared.match_target(target, m_target))
        .collect::<Result<Vec<_>>>()?;
    let out = apply_correspondences(
        target,
        &objects
            .iter()
            .zip(&corrs)
            .map(|((_, reference, m_target), corr)| (*reference, corr, *m_target))
            .collect::<Vec<_>>(),
    )?;
    Ok((out, corrs))
}

/// Rearranges and injects with correspondences supplied by the caller. With
/// correspondences computed once and reused across steps this is the fixed
/// matching baseline.
pub fn apply_correspondences(
    target: &FeatureMap,
    objects: &[(&FeatureMap, &CorrespondenceMap, &ObjectMask)],
) -> Result<FeatureMap> {
    let masks: Vec<&ObjectMask> = objects.iter().map(|o| o.2).collect();
    check_disjoint(&masks)?;
    let mut out = target.clone();
    for (reference, corr, m_target) in objects {
        if reference.channels() != target.channels() {
            return Err(Error::ChannelMismatch {
                left: target.channels(),
                right: reference.channels(),
            });
        }
        m_target.check_dims("target mask vs target map", target.dims())?;
        let rearranged = rearrange(reference, corr, target.dims())?;
        for q in 0..target.pixels() {
            if m_target.get(q) {
                out.pixel_mut(q).copy_from_slice(rearranged.pixel(q));
            }
        }
    }
    Ok(out)
}

/// Per-step transfer at `(t, layer)`. Outside the configured injection
/// window the target is returned unchanged.
pub fn transfer_step(
    target: &FeatureMap,
    objects: &[ObjectPair],
    config: &SessionConfig,
    t: u32,
    layer: u32,
) -> Result<FeatureMap> {
    Ok(transfer_step_detailed(target, objects, config, t, layer)?.0)
}

/// [`transfer_step`] that also returns the per-object correspondences
/// (empty when the step is inactive).
pub fn transfer_step_detailed(
    target: &FeatureMap,
    objects: &[ObjectPair],
    config: &SessionConfig,
    t: u32,
    layer: u32,
) -> Result<(FeatureMap, Vec<CorrespondenceMap>)> {
    if !config.injection_active(t, layer) {
        return Ok((target.clone(), Vec::new()));
    }
    let prepared = objects
        .iter()
        .map(|o| {
            if o.reference.channels() != target.channels() {
                return Err(Error::ChannelMismatch {
                    left: target.channels(),
                    right: o.reference.channels(),
                });
            }
            PreparedReference::new(&o.reference, &o.m_ref, config.epsilon)
        })
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<_> = objects
        .iter()
        .zip(&prepared)
        .map(|(o, p)| (p, &o.reference, &o.m_target))
        .collect();
    inject_objects(target, &refs)
}
