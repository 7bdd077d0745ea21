//! Manifest-driven evaluation batteries.
//!
//! A manifest is a text file of `id<TAB>role<TAB>path` lines; blank lines and
//! lines starting with `#` are skipped, and relative paths resolve against
//! the manifest's directory. Each battery reads the roles it needs per
//! sample, scores the sample, and reports `id<TAB>value` lines followed by
//! `MEAN<TAB>value`. Samples that fail are reported as `id<TAB>ERROR<TAB>code`
//! and left out of the mean.
//!
//! | battery | roles                                                        |
//! |---------|--------------------------------------------------------------|
//! | hist    | `gt_image`, `gt_mask`, `out_image`, `out_mask` (opt.)        |
//! | clip    | `gt_embedding`, `out_embedding`                              |
//! | depth   | `target_depth`, `out_depth`, `mask`                          |
//! | miou    | `gt_mask`, `out_mask`                                        |
//! | oks     | `gt_keypoints`, `pred_keypoints` (adds an `AP` line)         |
//! | flow    | `pred_flow`, `gt_flow`, `pred_valid` (opt.), `gt_valid` (opt.) |

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::metrics;
use crate::tensor_io::{read_flow, read_image, read_keypoints, read_tensor};
use crate::types::{DepthMap, EmbeddingVector, ObjectMask};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Battery {
    Hist,
    Clip,
    Depth,
    Miou,
    Oks,
    Flow,
}

impl Battery {
    pub fn required_roles(self) -> &'static [&'static str] {
        match self {
            Battery::Hist => &["gt_image", "gt_mask", "out_image"],
            Battery::Clip => &["gt_embedding", "out_embedding"],
            Battery::Depth => &["target_depth", "out_depth", "mask"],
            Battery::Miou => &["gt_mask", "out_mask"],
            Battery::Oks => &["gt_keypoints", "pred_keypoints"],
            Battery::Flow => &["pred_flow", "gt_flow"],
        }
    }
}

impl FromStr for Battery {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "hist" => Battery::Hist,
            "clip" => Battery::Clip,
            "depth" => Battery::Depth,
            "miou" => Battery::Miou,
            "oks" => Battery::Oks,
            "flow" => Battery::Flow,
            other => return Err(Error::Parse(format!("unknown evaluation {other:?}"))),
        })
    }
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub bins_per_channel: u32,
    /// Min-max normalize each depth map before the RMSE.
    pub normalize_depth: bool,
    pub ap_thresholds: Vec<f64>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            bins_per_channel: metrics::DEFAULT_BINS_PER_CHANNEL,
            normalize_depth: true,
            ap_thresholds: metrics::default_ap_thresholds(),
        }
    }
}

/// Sample id → role → file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub samples: BTreeMap<String, BTreeMap<String, PathBuf>>,
}

impl Manifest {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut samples: BTreeMap<String, BTreeMap<String, PathBuf>> = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [id, role, path] = fields.as_slice() else {
                return Err(Error::Parse(format!(
                    "manifest line {}: expected id<TAB>role<TAB>path",
                    n + 1
                )));
            };
            let path = base_dir.join(path.trim_end_matches('\r'));
            let roles = samples.entry(id.to_string()).or_default();
            if roles.insert(role.to_string(), path).is_some() {
                return Err(Error::Parse(format!(
                    "manifest line {}: duplicate role {role:?} for {id:?}",
                    n + 1
                )));
            }
        }
        Ok(Self { samples })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    /// Per-sample value or error code, ordered by id.
    pub rows: Vec<(String, std::result::Result<f64, &'static str>)>,
    /// Mean over successful samples; `None` when every sample failed.
    pub mean: Option<f64>,
    /// Additional summary lines, e.g. keypoint AP.
    pub extra: Vec<(String, f64)>,
}

impl Report {
    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        for (id, row) in &self.rows {
            match row {
                Ok(v) => writeln!(s, "{id}\t{v:?}"),
                Err(code) => writeln!(s, "{id}\tERROR\t{code}"),
            }
            .expect("writing to a String");
        }
        match self.mean {
            Some(m) => writeln!(s, "MEAN\t{m:?}"),
            None => writeln!(s, "MEAN\tNaN"),
        }
        .expect("writing to a String");
        for (k, v) in &self.extra {
            writeln!(s, "{k}\t{v:?}").expect("writing to a String");
        }
        s
    }
}

fn role<'a>(roles: &'a BTreeMap<String, PathBuf>, name: &str) -> Result<&'a Path> {
    roles
        .get(name)
        .map(PathBuf::as_path)
        .ok_or_else(|| Error::MissingRole(name.to_string()))
}

fn mask(path: &Path) -> Result<ObjectMask> {
    ObjectMask::try_from(read_tensor(path)?)
}

fn score_sample(battery: Battery, roles: &BTreeMap<String, PathBuf>, opts: &EvalOptions) -> Result<f64> {
    for name in battery.required_roles() {
        role(roles, name)?;
    }
    match battery {
        Battery::Hist => {
            let gt_mask = mask(role(roles, "gt_mask")?)?;
            let out_mask = match roles.get("out_mask") {
                Some(p) => mask(p)?,
                None => gt_mask.clone(),
            };
            let hg = metrics::color_histogram(&read_image(role(roles, "gt_image")?)?, &gt_mask, opts.bins_per_channel)?;
            let ho = metrics::color_histogram(
                &read_image(role(roles, "out_image")?)?,
                &out_mask,
                opts.bins_per_channel,
            )?;
            metrics::bhattacharyya(&hg, &ho)
        }
        Battery::Clip => {
            let g = EmbeddingVector::try_from(read_tensor(role(roles, "gt_embedding")?)?)?;
            let o = EmbeddingVector::try_from(read_tensor(role(roles, "out_embedding")?)?)?;
            metrics::clip_score(&g, &o)
        }
        Battery::Depth => {
            let mut t = DepthMap::try_from(read_tensor(role(roles, "target_depth")?)?)?;
            let mut o = DepthMap::try_from(read_tensor(role(roles, "out_depth")?)?)?;
            if opts.normalize_depth {
                t = t.min_max_normalized();
                o = o.min_max_normalized();
            }
            metrics::depth_rmse(&t, &o, &mask(role(roles, "mask")?)?)
        }
        Battery::Miou => metrics::iou(&mask(role(roles, "gt_mask")?)?, &mask(role(roles, "out_mask")?)?),
        Battery::Oks => {
            let gt = read_keypoints(role(roles, "gt_keypoints")?)?;
            let pred = read_keypoints(role(roles, "pred_keypoints")?)?;
            metrics::oks(&pred, &gt)
        }
        Battery::Flow => {
            let pred = read_flow(role(roles, "pred_flow")?, roles.get("pred_valid").map(PathBuf::as_path))?;
            let gt = read_flow(role(roles, "gt_flow")?, roles.get("gt_valid").map(PathBuf::as_path))?;
            metrics::flow_l1(&pred, &gt)
        }
    }
}

/// Scores every sample in the manifest. Samples are evaluated in parallel;
/// rows come back ordered by id.
pub fn run(battery: Battery, manifest: &Manifest, opts: &EvalOptions) -> Report {
    let rows: Vec<(String, std::result::Result<f64, &'static str>)> = manifest
        .samples
        .par_iter()
        .map(|(id, roles)| (id.clone(), score_sample(battery, roles, opts).map_err(|e| e.code())))
        .collect();
    let ok: Vec<f64> = rows.iter().filter_map(|(_, r)| r.as_ref().ok().copied()).collect();
    let mean = (!ok.is_empty()).then(|| ok.iter().sum::<f64>() / ok.len() as f64);
    let mut extra = Vec::new();
    if battery == Battery::Oks && !ok.is_empty() {
        if let Ok(ap) = metrics::keypoint_ap(&ok, &opts.ap_thresholds) {
            extra.push(("AP".to_string(), ap));
        }
    }
    Report { rows, mean, extra }
}
