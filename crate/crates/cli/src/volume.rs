//! Raw cost-volume dump.
//!
//! Little-endian layout:
//!
//! | bytes | content                                   |
//! |-------|-------------------------------------------|
//! | 4     | magic `SVCV`                              |
//! | 4     | u32 format version (1)                    |
//! | 4     | u32 value type (0 = f32)                  |
//! | 4     | u32 rank (3)                              |
//! | 24    | u64 rows, u64 cols, u64 disparities (D+1) |
//! | ...   | f32 scores in row, column, disparity order|
//!
//! Disparities whose right pixel falls outside the image are never selected.
//! Inner-product volumes hold `f32::MIN` there; learned-head volumes hold the
//! head's output for an all-zero right descriptor.

use std::io::Write;
use std::path::Path;

use anyhow::Context;
use siamstereo::correlation::CostVolume;

pub const MAGIC: &[u8; 4] = b"SVCV";

pub fn encode(v: &CostVolume<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(40 + 4 * v.scores.len());
    out.extend_from_slice(MAGIC);
    for x in [1u32, 0, 3] {
        out.extend_from_slice(&x.to_le_bytes());
    }
    for x in [v.rows, v.cols, v.max_disp + 1] {
        out.extend_from_slice(&(x as u64).to_le_bytes());
    }
    for s in &v.scores {
        out.extend_from_slice(&s.to_le_bytes());
    }
    out
}

#[cfg(test)]
pub fn decode(buf: &[u8]) -> anyhow::Result<CostVolume<f32>> {
    anyhow::ensure!(buf.len() >= 40 && &buf[..4] == MAGIC, "not a cost-volume dump");
    let u32_at = |o: usize| u32::from_le_bytes(buf[o..o + 4].try_into().expect("4 bytes"));
    let u64_at = |o: usize| u64::from_le_bytes(buf[o..o + 8].try_into().expect("8 bytes")) as usize;
    anyhow::ensure!(
        u32_at(4) == 1 && u32_at(8) == 0 && u32_at(12) == 3,
        "unsupported cost-volume header"
    );
    let (rows, cols, nd) = (u64_at(16), u64_at(24), u64_at(32));
    anyhow::ensure!(nd >= 1, "empty disparity axis");
    let n = rows * cols * nd;
    anyhow::ensure!(buf.len() == 40 + 4 * n, "cost-volume payload has the wrong length");
    let scores = buf[40..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok(CostVolume {
        rows,
        cols,
        max_disp: nd - 1,
        scores,
    })
}

pub fn write(v: &CostVolume<f32>, path: &Path) -> anyhow::Result<()> {
    let mut f = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    f.write_all(&encode(v))
        .with_context(|| format!("writing {}", path.display()))
}
