//! Model checkpoint files.
//!
//! Little-endian binary layout:
//!
//! ```text
//! magic      4 bytes  "SVLT"
//! version    u32      1
//! convs      u32
//! pools      u32, followed by that many u32 block indices (1-based)
//! theta      u32
//! in_chans   u32
//! corr mode  u8       0 = inner product, 1 = learned head
//! blobs      u32 count, then per blob:
//!              name length u32, name bytes (UTF-8)
//!              ndim u32, dims u32 * ndim
//!              values f32 * prod(dims)
//! ```
//!
//! Blobs are the trainable tensors in [`StereoModel::params`] order followed
//! by the batchnorm running moments (`<block>.bn.running_mean` / `_var`) of
//! every layer that has them. A file is therefore `4 * #params` bytes plus a
//! header of a few bytes per tensor (S7 at the default width: about 1 KiB).

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{CorrMode, StereoModel};
use crate::ops::RunningMoments;
use crate::siamese::{ArchSpec, InitConfig};

pub const MAGIC: &[u8; 4] = b"SVLT";
pub const VERSION: u32 = 1;

struct Blob {
    name: String,
    dims: Vec<usize>,
    values: Vec<f32>,
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_blob(out: &mut Vec<u8>, name: &str, dims: &[usize], values: &[f32]) {
    put_u32(out, name.len());
    out.extend_from_slice(name.as_bytes());
    put_u32(out, dims.len());
    for &d in dims {
        put_u32(out, d);
    }
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn running_blobs(model: &StereoModel<f32>) -> Vec<(String, &RunningMoments<f32>)> {
    model
        .net
        .blocks()
        .filter_map(|b| {
            b.bn.as_ref()
                .and_then(|bn| bn.running.as_ref())
                .map(|r| (b.name.clone(), r))
        })
        .collect()
}

pub fn to_bytes(model: &StereoModel<f32>) -> Vec<u8> {
    let arch = model.arch();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION as usize);
    put_u32(&mut out, arch.convs);
    put_u32(&mut out, arch.pools_after.len());
    for &p in &arch.pools_after {
        put_u32(&mut out, p);
    }
    put_u32(&mut out, arch.theta);
    put_u32(&mut out, arch.in_channels);
    out.push(match model.mode() {
        CorrMode::Inner => 0,
        CorrMode::Learned => 1,
    });
    let params = model.params();
    let running = running_blobs(model);
    put_u32(&mut out, params.len() + 2 * running.len());
    for (name, t) in &params {
        put_blob(&mut out, name, &t.shape().dims(), t.data());
    }
    for (name, r) in &running {
        put_blob(&mut out, &format!("{name}.bn.running_mean"), &[r.mean.len()], &r.mean);
        put_blob(&mut out, &format!("{name}.bn.running_var"), &[r.var.len()], &r.var);
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Format(format!("truncated checkpoint while reading {what}")))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn blob(&mut self) -> Result<Blob> {
        let len = self.u32("blob name length")?;
        let name = std::str::from_utf8(self.take(len, "blob name")?)
            .map_err(|_| Error::Format("blob name is not UTF-8".into()))?
            .to_owned();
        let ndim = self.u32("blob rank")?;
        if ndim > 4 {
            return Err(Error::Format(format!("blob `{name}` has rank {ndim}")));
        }
        let dims = (0..ndim).map(|_| self.u32("blob dims")).collect::<Result<Vec<_>>>()?;
        let count = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::Format(format!("blob `{name}` is too large")))?;
        let bytes = self.take(count.saturating_mul(4), "blob values")?;
        let values = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Blob { name, dims, values })
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<StereoModel<f32>> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Format("not a model checkpoint (bad magic)".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION as usize {
        return Err(Error::Format(format!("checkpoint version {version} is not supported")));
    }
    let convs = r.u32("conv count")?;
    let n_pools = r.u32("pool count")?;
    if n_pools > convs {
        return Err(Error::Format(format!("{n_pools} pools for {convs} convs")));
    }
    let pools_after = (0..n_pools)
        .map(|_| r.u32("pool positions"))
        .collect::<Result<Vec<_>>>()?;
    let theta = r.u32("theta")?;
    let in_channels = r.u32("input channels")?;
    let mode = match r.u8("correlation mode")? {
        0 => CorrMode::Inner,
        1 => CorrMode::Learned,
        m => return Err(Error::Format(format!("unknown correlation mode {m}"))),
    };
    let arch = ArchSpec {
        convs,
        pools_after,
        theta,
        in_channels,
    };
    arch.validate()
        .map_err(|e| Error::Format(format!("checkpoint architecture is invalid: {e}")))?;
    let n_blobs = r.u32("blob count")?;
    let mut blobs = HashMap::new();
    for _ in 0..n_blobs {
        let b = r.blob()?;
        if blobs.contains_key(&b.name) {
            return Err(Error::Format(format!("duplicate blob `{}`", b.name)));
        }
        blobs.insert(b.name.clone(), b);
    }
    if r.pos != buf.len() {
        return Err(Error::Format(format!("{} trailing bytes", buf.len() - r.pos)));
    }

    let mut model = StereoModel::<f32>::build(&arch, mode, InitConfig::default(), 0)?;
    let names: Vec<String> = model.params().into_iter().map(|(n, _)| n).collect();
    for (name, p) in names.iter().zip(model.params_mut()) {
        let b = blobs
            .remove(name)
            .ok_or_else(|| Error::Format(format!("missing parameter `{name}`")))?;
        if b.dims != p.shape().dims() {
            return Err(Error::Format(format!(
                "parameter `{name}` has shape {:?}, expected {:?}",
                b.dims,
                p.shape().dims()
            )));
        }
        p.data_mut().copy_from_slice(&b.values);
    }
    for block in model.net.blocks_mut() {
        let Some(bn) = &mut block.bn else { continue };
        let mean = blobs.remove(&format!("{}.bn.running_mean", block.name));
        let var = blobs.remove(&format!("{}.bn.running_var", block.name));
        bn.running = match (mean, var) {
            (None, None) => None,
            (Some(m), Some(v)) if m.values.len() == bn.gamma.shape().len() && v.values.len() == m.values.len() => {
                Some(RunningMoments {
                    mean: m.values,
                    var: v.values,
                })
            }
            _ => {
                return Err(Error::Format(format!(
                    "inconsistent running moments for `{}`",
                    block.name
                )))
            }
        };
    }
    if let Some(name) = blobs.keys().min() {
        return Err(Error::Format(format!("unexpected blob `{name}`")));
    }
    Ok(model)
}

pub fn save(model: &StereoModel<f32>, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<StereoModel<f32>> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::Mode;
    use crate::siamese::Preset;
    use crate::tensor::Shape4;
    use crate::testutil::random_tensor;

    fn trained_once(preset: Preset, mode: CorrMode) -> StereoModel<f32> {
        let arch = ArchSpec::preset(preset).with_theta(8);
        let mut m = StereoModel::build(&arch, mode, InitConfig::default(), 3).unwrap();
        let x = random_tensor(Shape4::new(2, 1, 8, 8), 4);
        m.net.forward_train(&x).unwrap();
        m
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        for mode in [CorrMode::Inner, CorrMode::Learned] {
            let m = trained_once(Preset::S7, mode);
            let bytes = to_bytes(&m);
            let back = from_bytes(&bytes).unwrap();
            assert_eq!(back, m);
            assert_eq!(to_bytes(&back), bytes);
        }
    }

    #[test]
    fn untrained_model_round_trips_without_moments() {
        let arch = ArchSpec::preset(Preset::S4).with_theta(4);
        let m = StereoModel::<f32>::build(&arch, CorrMode::Learned, InitConfig::default(), 9).unwrap();
        let back = from_bytes(&to_bytes(&m)).unwrap();
        assert_eq!(back, m);
        let x = random_tensor(Shape4::new(1, 1, 4, 4), 1);
        assert!(back.net.forward(&x, Mode::Infer).is_err());
    }

    #[test]
    fn truncated_or_corrupt_files_are_rejected() {
        let bytes = to_bytes(&trained_once(Preset::S4, CorrMode::Learned));
        for cut in [0, 3, 10, 40, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(from_bytes(&bytes[..cut]), Err(Error::Format(_))), "cut {cut}");
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(from_bytes(&bad), Err(Error::Format(_))));
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(matches!(from_bytes(&bad), Err(Error::Format(_))));
        let mut long = bytes;
        long.push(0);
        assert!(matches!(from_bytes(&long), Err(Error::Format(_))));
    }

    #[test]
    fn size_is_parameters_plus_small_header() {
        let arch = ArchSpec::preset(Preset::S7);
        let m = StereoModel::<f32>::build(&arch, CorrMode::Inner, InitConfig::default(), 1).unwrap();
        let bytes = to_bytes(&m).len();
        let payload = 4 * arch.param_count();
        assert!(bytes > payload && bytes < payload + 2048, "{bytes} vs {payload}");
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.svlt");
        let m = trained_once(Preset::S4, CorrMode::Inner);
        save(&m, &path).unwrap();
        assert_eq!(load(&path).unwrap(), m);
        assert!(matches!(load(&dir.path().join("missing")), Err(Error::Io { .. })));
    }
}
