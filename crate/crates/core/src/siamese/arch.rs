use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Named architecture presets: conv-layer count / pool count.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Preset {
    S4,
    S7,
    S9,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::S4, Preset::S7, Preset::S9];

    pub fn convs(self) -> usize {
        match self {
            Preset::S4 => 4,
            Preset::S7 => 7,
            Preset::S9 => 9,
        }
    }

    pub fn pools(self) -> usize {
        match self {
            Preset::S4 => 1,
            Preset::S7 => 2,
            Preset::S9 => 3,
        }
    }

    /// Default square training patch side.
    pub fn patch_size(self) -> usize {
        match self {
            Preset::S4 => 10,
            Preset::S7 => 28,
            Preset::S9 => 56,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Preset::S4 => "s4",
            Preset::S7 => "s7",
            Preset::S9 => "s9",
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "s4" => Ok(Preset::S4),
            "s7" => Ok(Preset::S7),
            "s9" => Ok(Preset::S9),
            other => Err(Error::Config(format!(
                "unknown architecture `{other}` (expected s4, s7 or s9)"
            ))),
        }
    }
}

impl std::fmt::Display for Preset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One layer of the unrolled branch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerSpec {
    /// 3x3 same-padded convolution, optionally followed by batchnorm + relu.
    Conv {
        inputs: usize,
        outputs: usize,
        bn_relu: bool,
    },
    /// 2x2 stride-2 max pooling.
    Pool,
    /// 3x3 stride-2 transposed convolution, optionally followed by batchnorm + relu.
    Deconv {
        inputs: usize,
        outputs: usize,
        bn_relu: bool,
    },
}

/// Shape of one siamese branch.
///
/// `convs` 3x3 conv blocks, a max pool after each block listed in
/// `pools_after` (1-based), then one stride-2 deconvolution per pool. Every
/// block carries batchnorm + relu except the last conv and the last deconv.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ArchSpec {
    pub convs: usize,
    pub pools_after: Vec<usize>,
    pub theta: usize,
    pub in_channels: usize,
}

impl ArchSpec {
    pub const DEFAULT_THETA: usize = 64;

    /// Preset with pools after blocks 2, 4, 6, ... and 64 feature channels.
    pub fn preset(preset: Preset) -> Self {
        ArchSpec {
            convs: preset.convs(),
            pools_after: (1..=preset.pools()).map(|i| 2 * i).collect(),
            theta: Self::DEFAULT_THETA,
            in_channels: 1,
        }
    }

    pub fn with_theta(mut self, theta: usize) -> Self {
        self.theta = theta;
        self
    }

    pub fn with_in_channels(mut self, c: usize) -> Self {
        self.in_channels = c;
        self
    }

    pub fn pools(&self) -> usize {
        self.pools_after.len()
    }

    /// Spatial sizes must be multiples of this for pooling to line up.
    pub fn size_multiple(&self) -> usize {
        1 << self.pools()
    }

    pub fn validate(&self) -> Result<()> {
        if self.convs == 0 {
            return Err(Error::Config("architecture needs at least one conv layer".into()));
        }
        if self.theta == 0 || self.in_channels == 0 {
            return Err(Error::Config("theta and input channels must be >= 1".into()));
        }
        let mut prev = 0;
        for &p in &self.pools_after {
            if p <= prev || p >= self.convs {
                return Err(Error::Config(format!(
                    "pool positions must be strictly increasing and lie between conv blocks 1..{}, got {:?}",
                    self.convs - 1,
                    self.pools_after
                )));
            }
            prev = p;
        }
        Ok(())
    }

    /// Rejects inputs that the pooling stack cannot halve cleanly.
    pub fn check_patch_size(&self, size: usize) -> Result<()> {
        let m = self.size_multiple();
        if size < m {
            return Err(Error::Config(format!(
                "{} pooling layers need inputs of at least {m} pixels, got {size}",
                self.pools()
            )));
        }
        if !size.is_multiple_of(m) {
            return Err(Error::Config(format!("patch size {size} is not a multiple of {m}")));
        }
        Ok(())
    }

    /// The unrolled layer sequence.
    pub fn layers(&self) -> Vec<LayerSpec> {
        let t = self.theta;
        let mut out = Vec::new();
        for i in 1..=self.convs {
            out.push(LayerSpec::Conv {
                inputs: if i == 1 { self.in_channels } else { t },
                outputs: t,
                bn_relu: i != self.convs,
            });
            if self.pools_after.contains(&i) {
                out.push(LayerSpec::Pool);
            }
        }
        let n = self.pools();
        for i in 1..=n {
            out.push(LayerSpec::Deconv {
                inputs: t,
                outputs: t,
                bn_relu: i != n,
            });
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.layers()
            .iter()
            .map(|l| match *l {
                LayerSpec::Conv {
                    inputs,
                    outputs,
                    bn_relu,
                }
                | LayerSpec::Deconv {
                    inputs,
                    outputs,
                    bn_relu,
                } => inputs * outputs * 9 + outputs + if bn_relu { 2 * outputs } else { 0 },
                LayerSpec::Pool => 0,
            })
            .sum()
    }
}

/// Global receptive field of a branch, by the recurrence
/// `rf += (k - 1) * jump; jump *= stride` over the convolutions and pools.
///
/// A 3x3 stride-2 deconvolution gives even outputs one input and odd outputs
/// two neighbouring inputs, so after `m` of them output `o` reads only
/// positions `floor(o / 2^m)` and `ceil(o / 2^m)` of the coarsest map. The
/// whole upsampling stack adds one coarse step, however many layers it has.
pub fn receptive_field(arch: &ArchSpec) -> usize {
    let mut rf = 1usize;
    let mut jump = 1usize;
    let mut upsampling = false;
    for layer in arch.layers() {
        match layer {
            LayerSpec::Conv { .. } => rf += 2 * jump,
            LayerSpec::Pool => {
                rf += jump;
                jump *= 2;
            }
            LayerSpec::Deconv { .. } => {
                if !upsampling {
                    rf += jump;
                    upsampling = true;
                }
                jump /= 2;
            }
        }
    }
    rf
}

/// Receptive field of `n` stacked `w x w` stride-1 convolutions.
pub fn stacked_receptive_field(n: usize, w: usize) -> usize {
    n * (w - 1) + 1
}
