//! Disparity maps and their 16-bit PNG encoding (value = round(d * 256), 0 = no data).

use std::io::Cursor;
use std::path::Path;

use image::{ImageBuffer, ImageFormat, Luma};

use crate::error::{Error, Result};

/// Per-pixel disparities with a validity mask, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct DisparityMap {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f32>,
    pub valid: Vec<bool>,
}

impl DisparityMap {
    pub fn invalid(rows: usize, cols: usize) -> Self {
        DisparityMap {
            rows,
            cols,
            values: vec![0.0; rows * cols],
            valid: vec![false; rows * cols],
        }
    }

    /// Fully valid map.
    pub fn dense(rows: usize, cols: usize, values: Vec<f32>) -> Self {
        assert_eq!(values.len(), rows * cols, "disparity map size");
        DisparityMap {
            rows,
            cols,
            valid: vec![true; values.len()],
            values,
        }
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Option<f32> {
        let k = i * self.cols + j;
        self.valid[k].then_some(self.values[k])
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, d: Option<f32>) {
        let k = i * self.cols + j;
        self.valid[k] = d.is_some();
        self.values[k] = d.unwrap_or(0.0);
    }

    /// Copy keeping only pixels where `keep` is true.
    pub fn masked(&self, keep: &[bool]) -> Self {
        let mut out = self.clone();
        for (v, &k) in out.valid.iter_mut().zip(keep) {
            *v &= k;
        }
        out
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

/// Encodes a map as a 16-bit grayscale PNG.
///
/// A valid disparity that rounds to 0 is stored as 1 so it stays
/// distinguishable from "no data"; [`decode_disparity_png`] reads 1 back as 0.
pub fn encode_disparity_png(map: &DisparityMap) -> Result<Vec<u8>> {
    let mut raw = Vec::with_capacity(map.len());
    for (&d, &ok) in map.values.iter().zip(&map.valid) {
        if !ok {
            raw.push(0u16);
            continue;
        }
        if !(0.0..256.0).contains(&d) {
            return Err(Error::EncodeRange(d));
        }
        raw.push(((d * 256.0).round() as u16).max(1));
    }
    let img = ImageBuffer::<Luma<u16>, _>::from_raw(map.cols as u32, map.rows as u32, raw)
        .ok_or_else(|| Error::Format("disparity map dimensions".into()))?;
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)
        .map_err(|e| Error::Format(format!("png encode: {e}")))?;
    Ok(out.into_inner())
}

pub fn decode_disparity_png(bytes: &[u8]) -> Result<DisparityMap> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)
        .map_err(|e| Error::Format(format!("png decode: {e}")))?;
    let img = match img {
        image::DynamicImage::ImageLuma16(b) => b,
        other => {
            return Err(Error::Format(format!(
                "disparity png must be 16-bit grayscale, found {:?}",
                other.color()
            )))
        }
    };
    let (cols, rows) = (img.width() as usize, img.height() as usize);
    let mut map = DisparityMap::invalid(rows, cols);
    for (k, &v) in img.as_raw().iter().enumerate() {
        if v > 0 {
            map.valid[k] = true;
            map.values[k] = if v == 1 { 0.0 } else { v as f32 / 256.0 };
        }
    }
    Ok(map)
}

pub fn read_disparity_png(path: &Path) -> Result<DisparityMap> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_disparity_png(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub fn write_disparity_png(map: &DisparityMap, path: &Path) -> Result<()> {
    std::fs::write(path, encode_disparity_png(map)?).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};
    use rand::Rng;

    #[test]
    fn stores_value_times_256() {
        let mut m = DisparityMap::dense(1, 3, vec![37.0, 0.0, 1.5]);
        m.set(0, 1, None);
        let img = image::load_from_memory(&encode_disparity_png(&m).unwrap())
            .unwrap()
            .to_luma16();
        assert_eq!(img.as_raw(), &vec![9472, 0, 384]);
        let back = decode_disparity_png(&encode_disparity_png(&m).unwrap()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn random_integer_maps_round_trip() {
        let mut rng = stream(5, Stream::Test);
        for _ in 0..5 {
            let (rows, cols) = (rng.random_range(1..20), rng.random_range(1..30));
            let mut m = DisparityMap::invalid(rows, cols);
            for i in 0..rows {
                for j in 0..cols {
                    let d = rng.random_range(0..256) as f32;
                    m.set(i, j, rng.random_bool(0.8).then_some(d));
                }
            }
            assert_eq!(decode_disparity_png(&encode_disparity_png(&m).unwrap()).unwrap(), m);
        }
    }

    #[test]
    fn out_of_range_is_rejected() {
        let m = DisparityMap::dense(1, 1, vec![256.0]);
        assert!(matches!(encode_disparity_png(&m), Err(Error::EncodeRange(_))));
        let m = DisparityMap::dense(1, 1, vec![-1.0]);
        assert!(encode_disparity_png(&m).is_err());
    }

    #[test]
    fn eight_bit_png_is_not_a_disparity_map() {
        let img = ImageBuffer::<Luma<u8>, _>::from_raw(2, 2, vec![1u8, 2, 3, 4]).unwrap();
        let mut out = Cursor::new(Vec::new());
        img.write_to(&mut out, ImageFormat::Png).unwrap();
        assert!(matches!(decode_disparity_png(out.get_ref()), Err(Error::Format(_))));
        assert!(decode_disparity_png(b"garbage").is_err());
    }
}
