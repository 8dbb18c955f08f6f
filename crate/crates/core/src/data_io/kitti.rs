//! KITTI stereo directory layout.
//!
//! ```text
//! <root>/training/            (or <root> itself)
//!   image_0/ image_1/         left/right images, 2012   (image_2/ image_3/ for 2015)
//!   disp_occ/ disp_noc/       ground truth, 2012        (disp_occ_0/ disp_noc_0/ for 2015)
//! ```
//!
//! Only frames named `<id>_10.png` are used. `disp_occ` holds every
//! ground-truth pixel, `disp_noc` only those visible in both views.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::disparity::{read_disparity_png, DisparityMap};
use super::image::{load_image, normalize, ColorMode};
use crate::error::{Error, Result};
use crate::rng::{stream, Stream};
use crate::tensor::Tensor4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Edition {
    #[serde(rename = "2012")]
    Kitti2012,
    #[serde(rename = "2015")]
    Kitti2015,
}

impl Edition {
    fn dirs(self) -> [&'static str; 4] {
        match self {
            Edition::Kitti2012 => ["image_0", "image_1", "disp_occ", "disp_noc"],
            Edition::Kitti2015 => ["image_2", "image_3", "disp_occ_0", "disp_noc_0"],
        }
    }

    /// Training frames in the official release.
    pub fn training_frames(self) -> usize {
        match self {
            Edition::Kitti2012 => 194,
            Edition::Kitti2015 => 200,
        }
    }

    /// Frames used for training in the usual 160 / rest split.
    pub const TRAIN_FRAMES: usize = 160;

    /// Training-split size for a dataset of `total` frames: 160 for the full
    /// release, the same proportion otherwise.
    pub fn train_count(self, total: usize) -> usize {
        if total == self.training_frames() {
            Self::TRAIN_FRAMES
        } else {
            ((total * Self::TRAIN_FRAMES) as f64 / self.training_frames() as f64).round() as usize
        }
        .min(total)
    }
}

impl std::str::FromStr for Edition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "2012" => Ok(Edition::Kitti2012),
            "2015" => Ok(Edition::Kitti2015),
            other => Err(Error::Config(format!("unknown KITTI edition `{other}` (2012|2015)"))),
        }
    }
}

impl std::fmt::Display for Edition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Edition::Kitti2012 => "2012",
            Edition::Kitti2015 => "2015",
        })
    }
}

/// A rectified pair with optional ground truth.
#[derive(Clone, Debug)]
pub struct StereoSample {
    pub id: String,
    /// Standardized `1 x C x H x W` images.
    pub left: Tensor4<f32>,
    pub right: Tensor4<f32>,
    /// All ground-truth pixels (occluded and visible).
    pub gt: Option<DisparityMap>,
    /// `true` where the pixel is visible in both views. Present with `gt`.
    pub noc: Option<Vec<bool>>,
}

impl StereoSample {
    pub fn rows(&self) -> usize {
        self.left.shape().rows
    }

    pub fn cols(&self) -> usize {
        self.left.shape().cols
    }

    /// Checks the sample invariants: equal image sizes, ground truth matching
    /// them, non-negative disparities, mask matching the ground truth.
    pub fn validate(&self) -> Result<()> {
        let (l, r) = (self.left.shape(), self.right.shape());
        if l != r {
            return Err(Error::Format(format!(
                "{}: left image {l} but right image {r}",
                self.id
            )));
        }
        if let Some(gt) = &self.gt {
            if (gt.rows, gt.cols) != (l.rows, l.cols) {
                return Err(Error::Format(format!(
                    "{}: ground truth is {}x{}, images are {}x{}",
                    self.id, gt.rows, gt.cols, l.rows, l.cols
                )));
            }
            if gt.values.iter().zip(&gt.valid).any(|(&d, &v)| v && !(d >= 0.0)) {
                return Err(Error::Format(format!("{}: negative ground-truth disparity", self.id)));
            }
            match &self.noc {
                Some(m) if m.len() == gt.len() => {}
                _ => {
                    return Err(Error::Format(format!(
                        "{}: non-occluded mask missing or mis-sized",
                        self.id
                    )))
                }
            }
        }
        Ok(())
    }
}

fn frame_ids(dir: &Path) -> Result<Vec<String>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut ids = Vec::new();
    for e in entries {
        let e = e.map_err(|e| Error::io(dir, e))?;
        let name = e.file_name();
        if let Some(id) = name.to_str().and_then(|n| n.strip_suffix("_10.png")) {
            ids.push(id.to_owned());
        }
    }
    ids.sort();
    Ok(ids)
}

fn resolve_root(root: &Path) -> PathBuf {
    let t = root.join("training");
    if t.is_dir() {
        t
    } else {
        root.to_owned()
    }
}

/// Loads every frame under `root`. Frames without ground truth load with
/// `gt: None` (usable for inference only).
pub fn load_kitti(root: &Path, edition: Edition, color: ColorMode) -> Result<Vec<StereoSample>> {
    let root = resolve_root(root);
    let [ldir, rdir, occ, noc] = edition.dirs().map(|d| root.join(d));
    let ids = frame_ids(&ldir)?;
    if ids.is_empty() {
        return Err(Error::Format(format!("{}: no `*_10.png` frames", ldir.display())));
    }
    let mut out = Vec::with_capacity(ids.len());
    for id in ids {
        let file = format!("{id}_10.png");
        let left = load_image(&ldir.join(&file), color)?;
        let rpath = rdir.join(&file);
        if !rpath.exists() {
            return Err(Error::Format(format!("{}: missing right image", rpath.display())));
        }
        let right = load_image(&rpath, color)?;
        let all = occ.join(&file);
        let vis = noc.join(&file);
        let all = all.exists().then(|| read_disparity_png(&all)).transpose()?;
        let vis = vis.exists().then(|| read_disparity_png(&vis)).transpose()?;
        let (gt, mask) = match (all, vis) {
            (Some(a), Some(v)) => {
                if (a.rows, a.cols) != (v.rows, v.cols) {
                    return Err(Error::Format(format!(
                        "{}: occ/noc maps differ in size",
                        noc.join(&file).display()
                    )));
                }
                let m = v.valid.iter().zip(&a.valid).map(|(&x, &y)| x && y).collect();
                (Some(a), Some(m))
            }
            (Some(a), None) => {
                let m = a.valid.clone();
                (Some(a), Some(m))
            }
            (None, Some(v)) => {
                let m = v.valid.clone();
                (Some(v), Some(m))
            }
            (None, None) => (None, None),
        };
        let sample = StereoSample {
            id: id.clone(),
            left: normalize(&left),
            right: normalize(&right),
            gt,
            noc: mask,
        };
        sample
            .validate()
            .map_err(|e| Error::Format(format!("{}: {e}", ldir.join(&file).display())))?;
        out.push(sample);
    }
    Ok(out)
}

/// Seeded train/validation partition of frame ids.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub seed: u64,
}

/// Shuffles `ids` with the `Split` stream of `seed` and takes the first
/// `n_train` for training. Both halves come back sorted.
pub fn split_ids(ids: &[String], n_train: usize, seed: u64) -> Result<DatasetSplit> {
    if n_train > ids.len() {
        return Err(Error::Config(format!(
            "cannot take {n_train} training frames from {}",
            ids.len()
        )));
    }
    let mut shuffled = ids.to_vec();
    shuffled.sort();
    shuffled.shuffle(&mut stream(seed, Stream::Split));
    let mut val = shuffled.split_off(n_train);
    shuffled.sort();
    val.sort();
    Ok(DatasetSplit {
        train: shuffled,
        val,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("{i:06}")).collect()
    }

    #[test]
    fn standard_split_sizes() {
        let s = split_ids(&ids(194), Edition::Kitti2012.train_count(194), 1).unwrap();
        assert_eq!((s.train.len(), s.val.len()), (160, 34));
        let s = split_ids(&ids(200), Edition::Kitti2015.train_count(200), 1).unwrap();
        assert_eq!((s.train.len(), s.val.len()), (160, 40));
    }

    #[test]
    fn split_is_a_seeded_partition() {
        let all = ids(50);
        let a = split_ids(&all, 40, 7).unwrap();
        assert_eq!(a, split_ids(&all, 40, 7).unwrap());
        assert_ne!(a, split_ids(&all, 40, 8).unwrap());
        let mut union: Vec<_> = a.train.iter().chain(&a.val).cloned().collect();
        union.sort();
        assert_eq!(union, all);
        assert!(split_ids(&all, 51, 0).is_err());
    }
}
