//! Image decoding and per-image standardization.

use std::path::Path;

use image::{ImageBuffer, Luma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Shape4, Tensor4};

/// Floor on the standard deviation used by [`normalize`].
pub const NORMALIZE_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorMode {
    /// Single luminance channel.
    #[default]
    Gray,
    Rgb,
}

impl ColorMode {
    pub fn channels(self) -> usize {
        match self {
            ColorMode::Gray => 1,
            ColorMode::Rgb => 3,
        }
    }
}

impl std::str::FromStr for ColorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gray" | "grey" => Ok(ColorMode::Gray),
            "rgb" => Ok(ColorMode::Rgb),
            other => Err(Error::Config(format!("unknown color mode `{other}` (gray|rgb)"))),
        }
    }
}

/// Decodes an image file into a `1 x C x H x W` tensor of raw intensities (0..=255).
pub fn load_image(path: &Path, color: ColorMode) -> Result<Tensor4<f32>> {
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.to_owned(),
        source: e,
    })?;
    let (cols, rows) = (img.width() as usize, img.height() as usize);
    let data: Vec<f32> = match color {
        ColorMode::Gray => img.to_luma8().into_raw().into_iter().map(f32::from).collect(),
        ColorMode::Rgb => {
            let rgb = img.to_rgb8();
            let mut planar = vec![0.0; 3 * rows * cols];
            for (k, px) in rgb.pixels().enumerate() {
                for c in 0..3 {
                    planar[c * rows * cols + k] = f32::from(px.0[c]);
                }
            }
            planar
        }
    };
    Tensor4::from_vec(Shape4::new(1, color.channels(), rows, cols), data)
}

/// Writes an 8-bit grayscale PNG from row-major pixels.
pub fn save_gray_png(path: &Path, rows: usize, cols: usize, pixels: &[u8]) -> Result<()> {
    let img = ImageBuffer::<Luma<u8>, _>::from_raw(cols as u32, rows as u32, pixels.to_vec())
        .ok_or_else(|| Error::Format(format!("{}: pixel buffer does not match {rows}x{cols}", path.display())))?;
    img.save(path).map_err(|e| Error::Image {
        path: path.to_owned(),
        source: e,
    })
}

/// Standardizes every channel of every image to zero mean and unit standard
/// deviation. Constant channels become all zeros.
pub fn normalize(image: &Tensor4<f32>) -> Tensor4<f32> {
    let s = image.shape();
    let mut out = image.clone();
    let plane = s.plane();
    for chunk in out.data_mut().chunks_exact_mut(plane) {
        let n = chunk.len() as f64;
        let mean = chunk.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = chunk.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        if std < NORMALIZE_EPS {
            chunk.fill(0.0);
        } else {
            for v in chunk.iter_mut() {
                *v = ((*v as f64 - mean) / std) as f32;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::random_tensor;

    fn moments(x: &[f32]) -> (f64, f64) {
        let n = x.len() as f64;
        let m = x.iter().map(|&v| v as f64).sum::<f64>() / n;
        let v = x.iter().map(|&v| (v as f64 - m).powi(2)).sum::<f64>() / n;
        (m, v.sqrt())
    }

    #[test]
    fn standardizes_each_channel() {
        let x = random_tensor::<f32>(Shape4::new(2, 3, 9, 11), 1).map(|v| 100.0 + 40.0 * v);
        let y = normalize(&x);
        for chunk in y.data().chunks(99) {
            let (m, s) = moments(chunk);
            assert!(m.abs() < 1e-6 && (s - 1.0).abs() < 1e-4, "{m} {s}");
        }
    }

    #[test]
    fn constant_image_becomes_zero() {
        let x = Tensor4::filled(Shape4::new(1, 1, 4, 4), 17.0f32);
        assert!(normalize(&x).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn idempotent() {
        let x = random_tensor::<f32>(Shape4::new(1, 1, 12, 12), 2).map(|v| 3.0 * v + 1.0);
        let once = normalize(&x);
        let twice = normalize(&once);
        for (a, b) in once.data().iter().zip(twice.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn gray_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.png");
        let px: Vec<u8> = (0..12).map(|v| v * 20).collect();
        save_gray_png(&path, 3, 4, &px).unwrap();
        let t = load_image(&path, ColorMode::Gray).unwrap();
        assert_eq!(t.shape(), Shape4::new(1, 1, 3, 4));
        assert_eq!(t.data(), px.iter().map(|&v| v as f32).collect::<Vec<_>>().as_slice());
        let rgb = load_image(&path, ColorMode::Rgb).unwrap();
        assert_eq!(rgb.shape().channels, 3);
        assert!(matches!(
            load_image(&dir.path().join("none.png"), ColorMode::Gray),
            Err(Error::Image { .. })
        ));
    }
}
