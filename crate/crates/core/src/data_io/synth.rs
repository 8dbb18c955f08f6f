//! Synthetic layered stereo scenes with exact ground truth.
//!
//! A scene is a textured background plane at one disparity plus rectangular
//! fronto-parallel occluders at larger disparities. Each layer owns a texture
//! in left-image coordinates; the right image shows, at column `j'`, the
//! frontmost layer covering left column `j' + d` and samples its texture
//! there. Left and right pixels of a visible match are therefore equal.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::disparity::{write_disparity_png, DisparityMap};
use super::image::{normalize, save_gray_png};
use super::kitti::StereoSample;
use crate::error::{Error, Result};
use crate::rng::{stream, Stream, StreamRng};
use crate::tensor::{Shape4, Tensor4};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub max_disp: usize,
    /// Box-blur radius applied to the uniform noise textures.
    pub blur_radius: usize,
    pub occluders: usize,
    /// Fixed background disparity; random in `[0, max_disp / 2]` when unset.
    pub bg_disp: Option<usize>,
    /// Fixed occluder disparity; random above the background when unset.
    pub occluder_disp: Option<usize>,
    /// Constant-intensity vertical bands painted into the background texture.
    pub bands: usize,
    /// Inclusive band width range.
    pub band_width: (usize, usize),
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            count: 20,
            rows: 64,
            cols: 96,
            max_disp: 16,
            blur_radius: 2,
            occluders: 2,
            bg_disp: None,
            occluder_disp: None,
            bands: 0,
            band_width: (12, 24),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::Config("synthetic images need at least one pixel".into()));
        }
        if self.max_disp >= self.cols {
            return Err(Error::DisparityTooLarge {
                max_disp: self.max_disp,
                cols: self.cols,
            });
        }
        if self.bg_disp.is_some_and(|d| d > self.max_disp) || self.occluder_disp.is_some_and(|d| d > self.max_disp) {
            return Err(Error::Config(format!(
                "planted disparities must not exceed {}",
                self.max_disp
            )));
        }
        if self.band_width.0 == 0 || self.band_width.0 > self.band_width.1 {
            return Err(Error::Config(format!("bad band width range {:?}", self.band_width)));
        }
        Ok(())
    }
}

/// One generated pair with 8-bit images.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthSample {
    pub id: String,
    pub rows: usize,
    pub cols: usize,
    pub left: Vec<u8>,
    pub right: Vec<u8>,
    /// Dense, left-referenced ground truth.
    pub gt: DisparityMap,
    /// `true` where the left pixel is visible in the right image.
    pub noc: Vec<bool>,
}

impl SynthSample {
    pub fn to_stereo_sample(&self) -> StereoSample {
        let img = |px: &[u8]| {
            let t = Tensor4::from_vec(
                Shape4::new(1, 1, self.rows, self.cols),
                px.iter().map(|&v| f32::from(v)).collect(),
            )
            .expect("pixel buffer matches its dimensions");
            normalize(&t)
        };
        StereoSample {
            id: self.id.clone(),
            left: img(&self.left),
            right: img(&self.right),
            gt: Some(self.gt.clone()),
            noc: Some(self.noc.clone()),
        }
    }
}

struct Layer {
    disp: usize,
    /// Row/column ranges in left-image coordinates; `None` covers everything.
    rect: Option<(usize, usize, usize, usize)>,
    texture: Vec<u8>,
}

impl Layer {
    fn covers(&self, i: usize, x: usize) -> bool {
        match self.rect {
            None => true,
            Some((r0, r1, c0, c1)) => (r0..r1).contains(&i) && (c0..c1).contains(&x),
        }
    }
}

fn box_blur(src: &[u8], rows: usize, cols: usize, r: usize) -> Vec<u8> {
    if r == 0 {
        return src.to_vec();
    }
    let mut out = vec![0u8; src.len()];
    for i in 0..rows {
        for j in 0..cols {
            let (i0, i1) = (i.saturating_sub(r), (i + r + 1).min(rows));
            let (j0, j1) = (j.saturating_sub(r), (j + r + 1).min(cols));
            let mut sum = 0u32;
            for ii in i0..i1 {
                sum += src[ii * cols + j0..ii * cols + j1]
                    .iter()
                    .map(|&v| u32::from(v))
                    .sum::<u32>();
            }
            let n = ((i1 - i0) * (j1 - j0)) as u32;
            out[i * cols + j] = ((sum + n / 2) / n) as u8;
        }
    }
    out
}

fn texture(rng: &mut StreamRng, rows: usize, width: usize, cfg: &SynthConfig, bands: usize) -> Vec<u8> {
    let noise: Vec<u8> = (0..rows * width).map(|_| rng.random()).collect();
    let mut t = box_blur(&noise, rows, width, cfg.blur_radius);
    for _ in 0..bands {
        let w = rng.random_range(cfg.band_width.0..=cfg.band_width.1).min(width);
        let c0 = rng.random_range(0..=width - w);
        let v: u8 = rng.random();
        for i in 0..rows {
            t[i * width + c0..i * width + c0 + w].fill(v);
        }
    }
    t
}

fn scene(rng: &mut StreamRng, cfg: &SynthConfig, id: String) -> SynthSample {
    let (rows, cols, dmax) = (cfg.rows, cfg.cols, cfg.max_disp);
    let width = cols + dmax + 1;
    let bg = cfg.bg_disp.unwrap_or_else(|| rng.random_range(0..=dmax / 2));
    let mut layers = vec![Layer {
        disp: bg,
        rect: None,
        texture: texture(rng, rows, width, cfg, cfg.bands),
    }];
    for _ in 0..cfg.occluders {
        let disp = match cfg.occluder_disp {
            Some(d) => d,
            None if bg < dmax => rng.random_range(bg + 1..=dmax),
            None => break,
        };
        let h = rng.random_range((rows / 5).max(1)..=(rows / 2).max(1));
        let w = rng.random_range((cols / 8).max(1)..=(cols / 3).max(1));
        let r0 = rng.random_range(0..=rows - h);
        let c0 = rng.random_range(0..=cols - w);
        layers.push(Layer {
            disp,
            rect: Some((r0, r0 + h, c0, c0 + w)),
            texture: texture(rng, rows, width, cfg, 0),
        });
    }
    // later entries with larger disparity are in front
    layers.sort_by_key(|l| l.disp);

    let front = |i: usize, x: usize, shift: bool| -> usize {
        layers
            .iter()
            .enumerate()
            .rev()
            .find(|(_, l)| l.covers(i, if shift { x + l.disp } else { x }))
            .map(|(k, _)| k)
            .expect("background covers everything")
    };
    let mut left = vec![0u8; rows * cols];
    let mut right = vec![0u8; rows * cols];
    let mut gt = vec![0f32; rows * cols];
    let mut noc = vec![false; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            let k = front(i, j, false);
            let l = &layers[k];
            left[i * cols + j] = l.texture[i * width + j];
            gt[i * cols + j] = l.disp as f32;
            noc[i * cols + j] = j >= l.disp && front(i, j - l.disp, true) == k;

            let kr = front(i, j, true);
            let lr = &layers[kr];
            right[i * cols + j] = lr.texture[i * width + j + lr.disp];
        }
    }
    SynthSample {
        id,
        rows,
        cols,
        left,
        right,
        gt: DisparityMap::dense(rows, cols, gt),
        noc,
    }
}

/// Generates `cfg.count` scenes from the `Synth` stream of `seed`.
pub fn synth_generate(cfg: &SynthConfig, seed: u64) -> Result<Vec<SynthSample>> {
    cfg.validate()?;
    let mut rng = stream(seed, Stream::Synth);
    Ok((0..cfg.count)
        .map(|n| scene(&mut rng, cfg, format!("{n:06}")))
        .collect())
}

/// Writes samples in the KITTI 2012 layout under `<dir>/training`.
pub fn write_dataset(dir: &Path, samples: &[SynthSample]) -> Result<()> {
    let root = dir.join("training");
    for sub in ["image_0", "image_1", "disp_occ", "disp_noc"] {
        let p = root.join(sub);
        std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    for s in samples {
        let file = format!("{}_10.png", s.id);
        save_gray_png(&root.join("image_0").join(&file), s.rows, s.cols, &s.left)?;
        save_gray_png(&root.join("image_1").join(&file), s.rows, s.cols, &s.right)?;
        write_disparity_png(&s.gt, &root.join("disp_occ").join(&file))?;
        write_disparity_png(&s.gt.masked(&s.noc), &root.join("disp_noc").join(&file))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_io::{load_kitti, ColorMode, Edition};

    fn cfg() -> SynthConfig {
        SynthConfig {
            count: 3,
            rows: 24,
            cols: 40,
            max_disp: 12,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn two_layers_give_two_disparity_modes() {
        let c = SynthConfig {
            occluders: 1,
            bg_disp: Some(4),
            occluder_disp: Some(12),
            ..cfg()
        };
        for s in synth_generate(&c, 1).unwrap() {
            let mut seen: Vec<f32> = s.gt.values.clone();
            seen.sort_by(f32::total_cmp);
            seen.dedup();
            assert_eq!(seen, vec![4.0, 12.0]);
        }
    }

    #[test]
    fn flat_zero_disparity_scene_is_identical() {
        let c = SynthConfig {
            occluders: 0,
            bg_disp: Some(0),
            ..cfg()
        };
        for s in synth_generate(&c, 2).unwrap() {
            assert_eq!(s.left, s.right);
            assert!(s.gt.values.iter().all(|&d| d == 0.0));
            assert!(s.noc.iter().all(|&v| v));
        }
    }

    #[test]
    fn visible_pixels_rewarp_exactly() {
        let c = SynthConfig { bands: 2, ..cfg() };
        for s in synth_generate(&c, 3).unwrap() {
            let mut visible = 0;
            for i in 0..s.rows {
                for j in 0..s.cols {
                    let k = i * s.cols + j;
                    if s.noc[k] {
                        let d = s.gt.values[k] as usize;
                        assert_eq!(s.right[k - d], s.left[k]);
                        visible += 1;
                    }
                }
            }
            assert!(visible > s.rows * s.cols / 2);
        }
    }

    #[test]
    fn occluders_hide_background_in_the_right_view() {
        let c = SynthConfig {
            occluders: 1,
            bg_disp: Some(2),
            occluder_disp: Some(10),
            ..cfg()
        };
        let s = &synth_generate(&c, 4).unwrap()[0];
        assert!(s.noc.iter().zip(&s.gt.values).any(|(&v, &d)| !v && d == 2.0));
    }

    #[test]
    fn seeded() {
        assert_eq!(synth_generate(&cfg(), 5).unwrap(), synth_generate(&cfg(), 5).unwrap());
        assert_ne!(synth_generate(&cfg(), 5).unwrap(), synth_generate(&cfg(), 6).unwrap());
    }

    #[test]
    fn written_dataset_loads_back() {
        let dir = tempfile::tempdir().unwrap();
        let samples = synth_generate(&cfg(), 7).unwrap();
        write_dataset(dir.path(), &samples).unwrap();
        let loaded = load_kitti(dir.path(), Edition::Kitti2012, ColorMode::Gray).unwrap();
        assert_eq!(loaded.len(), samples.len());
        for (l, s) in loaded.iter().zip(&samples) {
            assert_eq!(l.id, s.id);
            assert_eq!(l.gt.as_ref().unwrap(), &s.gt);
            assert_eq!(l.noc.as_ref().unwrap(), &s.noc);
            let direct = s.to_stereo_sample();
            assert_eq!(l.left.data(), direct.left.data());
            assert_eq!(l.right.data(), direct.right.data());
        }
    }

    #[test]
    fn rejects_disparity_as_wide_as_the_image() {
        let c = SynthConfig { max_disp: 40, ..cfg() };
        assert!(synth_generate(&c, 0).is_err());
    }
}
