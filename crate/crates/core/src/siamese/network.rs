use rand_distr::{Distribution, Normal};

use super::arch::{ArchSpec, LayerSpec};
use crate::error::{Error, Result};
use crate::ops::{
    batchnorm_backward, batchnorm_forward, conv2d, conv2d_backward, deconv2, deconv2_backward, maxpool2,
    maxpool2_backward, relu, relu_backward, BnContext, ConvGeometry, Mode, RunningMoments,
};
use crate::real::Real;
use crate::rng::{stream, Stream};
use crate::tensor::{Shape4, Tensor4};

/// Weight initialization. `std: None` means He scaling, `sqrt(2 / fan_in)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct InitConfig {
    pub std: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormParams<T> {
    pub gamma: Tensor4<T>,
    pub beta: Tensor4<T>,
    pub running: Option<RunningMoments<T>>,
}

/// A convolution (or transposed convolution) block with its optional batchnorm.
#[derive(Clone, Debug, PartialEq)]
pub struct Block<T> {
    pub name: String,
    pub transposed: bool,
    pub weight: Tensor4<T>,
    pub bias: Tensor4<T>,
    pub bn: Option<BatchNormParams<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer<T> {
    Block(Block<T>),
    Pool,
}

/// Per-op forward state kept for the backward pass.
#[derive(Clone, Debug)]
enum Saved<T> {
    Conv { input: Tensor4<T> },
    Deconv { input: Tensor4<T> },
    BatchNorm(BnContext<T>),
    Relu { output: Tensor4<T> },
    Pool { input_shape: Shape4, argmax: Vec<u32> },
}

/// Record of one forward pass. Backward consumes it, so it can only run after
/// the forward it belongs to.
#[derive(Clone, Debug)]
pub struct Trace<T> {
    saved: Vec<(usize, Saved<T>)>,
    input_shape: Shape4,
    padded: (usize, usize),
    output_shape: Shape4,
}

impl<T: Real> Trace<T> {
    /// Train-mode batch moments per batchnorm layer, in layer order.
    fn batch_moments(&self) -> impl Iterator<Item = (usize, &RunningMoments<T>)> {
        self.saved.iter().filter_map(|(i, s)| match s {
            Saved::BatchNorm(ctx) => ctx.batch_moments.as_ref().map(|m| (*i, m)),
            _ => None,
        })
    }

    pub fn output_shape(&self) -> Shape4 {
        self.output_shape
    }
}

/// One siamese branch. Both images go through the same `Network`, so the
/// left and right branches share every parameter by construction.
#[derive(Clone, Debug, PartialEq)]
pub struct Network<T> {
    arch: ArchSpec,
    layers: Vec<Layer<T>>,
}

fn column<T: Real>(len: usize, value: T) -> Tensor4<T> {
    Tensor4::filled(Shape4::new(1, len, 1, 1), value)
}

impl<T: Real> Network<T> {
    /// Allocates and initializes parameters from the `Init` stream of `seed`.
    pub fn build(arch: &ArchSpec, init: InitConfig, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = stream(seed, Stream::Init);
        let mut layers = Vec::new();
        let (mut n_conv, mut n_deconv) = (0, 0);
        for spec in arch.layers() {
            match spec {
                LayerSpec::Pool => layers.push(Layer::Pool),
                LayerSpec::Conv {
                    inputs,
                    outputs,
                    bn_relu,
                }
                | LayerSpec::Deconv {
                    inputs,
                    outputs,
                    bn_relu,
                } => {
                    let transposed = matches!(spec, LayerSpec::Deconv { .. });
                    let (name, shape) = if transposed {
                        n_deconv += 1;
                        (format!("deconv{n_deconv}"), Shape4::new(inputs, outputs, 3, 3))
                    } else {
                        n_conv += 1;
                        (format!("conv{n_conv}"), Shape4::new(outputs, inputs, 3, 3))
                    };
                    let std = init.std.unwrap_or_else(|| (2.0 / (inputs * 9) as f64).sqrt());
                    let normal = Normal::new(0.0, std).map_err(|e| Error::Config(format!("init std: {e}")))?;
                    let weight = Tensor4::from_fn(shape, |_| T::from_f64(normal.sample(&mut rng)));
                    let bn = bn_relu.then(|| BatchNormParams {
                        gamma: column(outputs, T::ONE),
                        beta: column(outputs, T::ZERO),
                        running: None,
                    });
                    layers.push(Layer::Block(Block {
                        name,
                        transposed,
                        weight,
                        bias: column(outputs, T::ZERO),
                        bn,
                    }));
                }
            }
        }
        Ok(Network {
            arch: arch.clone(),
            layers,
        })
    }

    pub fn arch(&self) -> &ArchSpec {
        &self.arch
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn blocks(&self) -> impl Iterator<Item = &Block<T>> {
        self.layers.iter().filter_map(|l| match l {
            Layer::Block(b) => Some(b),
            Layer::Pool => None,
        })
    }

    pub fn blocks_mut(&mut self) -> impl Iterator<Item = &mut Block<T>> {
        self.layers.iter_mut().filter_map(|l| match l {
            Layer::Block(b) => Some(b),
            Layer::Pool => None,
        })
    }

    /// Trainable tensors in a fixed order, with stable names.
    pub fn params(&self) -> Vec<(String, &Tensor4<T>)> {
        let mut out = Vec::new();
        for b in self.blocks() {
            out.push((format!("{}.weight", b.name), &b.weight));
            out.push((format!("{}.bias", b.name), &b.bias));
            if let Some(bn) = &b.bn {
                out.push((format!("{}.bn.gamma", b.name), &bn.gamma));
                out.push((format!("{}.bn.beta", b.name), &bn.beta));
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor4<T>> {
        let mut out = Vec::new();
        for b in self.blocks_mut() {
            out.push(&mut b.weight);
            out.push(&mut b.bias);
            if let Some(bn) = &mut b.bn {
                out.push(&mut bn.gamma);
                out.push(&mut bn.beta);
            }
        }
        out
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        let layers = self
            .layers
            .iter()
            .map(|l| match l {
                Layer::Pool => Layer::Pool,
                Layer::Block(b) => Layer::Block(Block {
                    name: b.name.clone(),
                    transposed: b.transposed,
                    weight: b.weight.cast(),
                    bias: b.bias.cast(),
                    bn: b.bn.as_ref().map(|bn| BatchNormParams {
                        gamma: bn.gamma.cast(),
                        beta: bn.beta.cast(),
                        running: bn.running.as_ref().map(|rm| RunningMoments {
                            mean: rm.mean.iter().map(|v| U::from_f64(v.to_f64())).collect(),
                            var: rm.var.iter().map(|v| U::from_f64(v.to_f64())).collect(),
                        }),
                    }),
                }),
            })
            .collect();
        Network {
            arch: self.arch.clone(),
            layers,
        }
    }

    /// Runs the branch. Inputs whose size is not a multiple of `2^pools` are
    /// zero-padded on the bottom/right and the output is cropped back, so the
    /// output always has the input's spatial size and `theta` channels.
    ///
    /// Train mode uses batch statistics but does not touch the running
    /// moments; apply them with [`Network::commit`].
    pub fn forward(&self, input: &Tensor4<T>, mode: Mode) -> Result<(Tensor4<T>, Trace<T>)> {
        let s = input.shape();
        if s.channels != self.arch.in_channels {
            return Err(Error::shape(
                "network",
                "input channels",
                self.arch.in_channels,
                s.channels,
            ));
        }
        let m = self.arch.size_multiple();
        if s.rows < m || s.cols < m {
            return Err(Error::Config(format!(
                "input {}x{} is smaller than the {m}x{m} minimum for {} pooling layers",
                s.rows,
                s.cols,
                self.arch.pools()
            )));
        }
        let padded = (s.rows.div_ceil(m) * m, s.cols.div_ceil(m) * m);
        let mut x = input.pad_to(padded.0, padded.1);
        let mut saved = Vec::with_capacity(3 * self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                Layer::Pool => {
                    let p = maxpool2(&x)?;
                    saved.push((
                        i,
                        Saved::Pool {
                            input_shape: x.shape(),
                            argmax: p.argmax,
                        },
                    ));
                    x = p.output;
                }
                Layer::Block(b) => {
                    let y = if b.transposed {
                        deconv2(&x, &b.weight, b.bias.data())?
                    } else {
                        conv2d(&x, &b.weight, b.bias.data(), ConvGeometry::same(3, 3))?
                    };
                    saved.push((
                        i,
                        if b.transposed {
                            Saved::Deconv { input: x }
                        } else {
                            Saved::Conv { input: x }
                        },
                    ));
                    x = y;
                    if let Some(bn) = &b.bn {
                        let (y, ctx) =
                            batchnorm_forward(&x, bn.gamma.data(), bn.beta.data(), mode, bn.running.as_ref(), &b.name)?;
                        saved.push((i, Saved::BatchNorm(ctx)));
                        x = relu(&y);
                        saved.push((i, Saved::Relu { output: x.clone() }));
                    }
                }
            }
        }
        let out = x.crop(s.rows, s.cols);
        let output_shape = out.shape();
        Ok((
            out,
            Trace {
                saved,
                input_shape: s,
                padded,
                output_shape,
            },
        ))
    }

    /// Folds a train-mode trace's batch statistics into the running moments.
    pub fn commit(&mut self, trace: &Trace<T>) {
        for (i, batch) in trace.batch_moments() {
            if let Layer::Block(Block { bn: Some(bn), .. }) = &mut self.layers[i] {
                RunningMoments::update(&mut bn.running, batch);
            }
        }
    }

    /// Train-mode forward followed by [`Network::commit`].
    pub fn forward_train(&mut self, input: &Tensor4<T>) -> Result<(Tensor4<T>, Trace<T>)> {
        let (out, trace) = self.forward(input, Mode::Train)?;
        self.commit(&trace);
        Ok((out, trace))
    }

    /// Backpropagates `grad_out` through the recorded pass, accumulating into
    /// each parameter's gradient buffer. Returns the gradient w.r.t. the input.
    pub fn backward(&mut self, trace: Trace<T>, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
        if grad_out.shape() != trace.output_shape {
            return Err(Error::shape(
                "network backward",
                "grad_out elements",
                trace.output_shape.len(),
                grad_out.shape().len(),
            ));
        }
        let mut g = grad_out.pad_to(trace.padded.0, trace.padded.1);
        for (i, saved) in trace.saved.into_iter().rev() {
            g = match (saved, &mut self.layers[i]) {
                (Saved::Pool { input_shape, argmax }, Layer::Pool) => maxpool2_backward(input_shape, &argmax, &g)?,
                (Saved::Relu { output }, Layer::Block(_)) => relu_backward(&output, &g),
                (Saved::BatchNorm(ctx), Layer::Block(Block { bn: Some(bn), .. })) => {
                    let grads = batchnorm_backward(&ctx, bn.gamma.data(), &g)?;
                    accumulate(&mut bn.gamma, &grads.gamma);
                    accumulate(&mut bn.beta, &grads.beta);
                    grads.input
                }
                (Saved::Conv { input }, Layer::Block(b)) => {
                    let grads = conv2d_backward(&input, &b.weight, ConvGeometry::same(3, 3), &g)?;
                    accumulate(&mut b.weight, &grads.weights);
                    accumulate(&mut b.bias, &grads.bias);
                    grads.input
                }
                (Saved::Deconv { input }, Layer::Block(b)) => {
                    let grads = deconv2_backward(&input, &b.weight, &g)?;
                    accumulate(&mut b.weight, &grads.weights);
                    accumulate(&mut b.bias, &grads.bias);
                    grads.input
                }
                _ => unreachable!("trace does not match network layout"),
            };
        }
        Ok(g.crop(trace.input_shape.rows, trace.input_shape.cols))
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Per-pixel descriptors of a single image (`1 x C x H x W`) in infer mode.
    pub fn extract(&self, image: &Tensor4<T>) -> Result<FeatureMap<T>> {
        if image.shape().batch != 1 {
            return Err(Error::shape("extract", "batch", 1, image.shape().batch));
        }
        let (out, _) = self.forward(image, Mode::Infer)?;
        Ok(FeatureMap::from_tensor(out))
    }
}

fn accumulate<T: Real>(param: &mut Tensor4<T>, grad: &[T]) {
    for (a, &g) in param.grad_mut().iter_mut().zip(grad) {
        *a += g;
    }
}

/// Per-pixel `theta`-dimensional descriptors of one image, channel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap<T> {
    pub theta: usize,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

/// Borrowed [`FeatureMap`] (or one batch item of a feature tensor).
#[derive(Clone, Copy, Debug)]
pub struct FeatureView<'a, T> {
    pub theta: usize,
    pub rows: usize,
    pub cols: usize,
    pub data: &'a [T],
}

impl<T: Real> FeatureMap<T> {
    pub fn from_tensor(t: Tensor4<T>) -> Self {
        let s = t.shape();
        assert_eq!(s.batch, 1, "feature map holds a single image");
        FeatureMap {
            theta: s.channels,
            rows: s.rows,
            cols: s.cols,
            data: t.into_data(),
        }
    }

    pub fn view(&self) -> FeatureView<'_, T> {
        FeatureView {
            theta: self.theta,
            rows: self.rows,
            cols: self.cols,
            data: &self.data,
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, c: usize) -> T {
        self.data[(c * self.rows + i) * self.cols + j]
    }
}

impl<'a, T: Real> FeatureView<'a, T> {
    /// View of batch item `b` of a `B x theta x H x W` tensor.
    pub fn of_item(t: &'a Tensor4<T>, b: usize) -> Self {
        let s = t.shape();
        FeatureView {
            theta: s.channels,
            rows: s.rows,
            cols: s.cols,
            data: t.item(b),
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, c: usize) -> T {
        self.data[(c * self.rows + i) * self.cols + j]
    }

    pub fn plane(&self) -> usize {
        self.rows * self.cols
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::siamese::arch::Preset;
    use crate::testutil::random_tensor;

    fn small(p: Preset) -> ArchSpec {
        ArchSpec::preset(p).with_theta(8)
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = Network::<f32>::build(&ArchSpec::preset(Preset::S7), InitConfig::default(), 3).unwrap();
        let b = Network::<f32>::build(&ArchSpec::preset(Preset::S7), InitConfig::default(), 3).unwrap();
        let c = Network::<f32>::build(&ArchSpec::preset(Preset::S7), InitConfig::default(), 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn s4_patch_goes_through_half_resolution() {
        let net = Network::<f64>::build(&ArchSpec::preset(Preset::S4), InitConfig::default(), 1).unwrap();
        let x = random_tensor::<f64>(Shape4::new(2, 1, 10, 10), 2);
        let (y, trace) = net.forward(&x, Mode::Train).unwrap();
        assert_eq!(y.shape(), Shape4::new(2, 64, 10, 10));
        let pooled = trace
            .saved
            .iter()
            .find_map(|(_, s)| match s {
                Saved::Pool { input_shape, argmax } => Some((*input_shape, argmax.len())),
                _ => None,
            })
            .unwrap();
        assert_eq!(pooled, (Shape4::new(2, 64, 10, 10), 2 * 64 * 5 * 5));
    }

    #[test]
    fn output_matches_input_size_for_awkward_shapes() {
        for p in Preset::ALL {
            let net = Network::<f32>::build(&small(p), InitConfig::default(), 1).unwrap();
            for (r, c) in [(8, 8), (13, 21), (9, 30)] {
                let x = random_tensor::<f32>(Shape4::new(1, 1, r, c), 5);
                let (y, _) = net.forward(&x, Mode::Train).unwrap();
                assert_eq!(y.shape(), Shape4::new(1, 8, r, c));
            }
        }
    }

    #[test]
    fn too_small_input_rejected() {
        let net = Network::<f32>::build(&small(Preset::S9), InitConfig::default(), 1).unwrap();
        let x = random_tensor::<f32>(Shape4::new(1, 1, 4, 16), 5);
        assert!(net.forward(&x, Mode::Train).is_err());
    }

    #[test]
    fn shared_weights_give_identical_features() {
        let mut net = Network::<f32>::build(&small(Preset::S7), InitConfig::default(), 1).unwrap();
        let x = random_tensor::<f32>(Shape4::new(1, 1, 16, 20), 5);
        net.forward_train(&x).unwrap();
        let l = net.extract(&x).unwrap();
        let r = net.extract(&x).unwrap();
        assert_eq!(l, r);
    }

    #[test]
    fn infer_before_training_errors() {
        let net = Network::<f32>::build(&small(Preset::S4), InitConfig::default(), 1).unwrap();
        let x = random_tensor::<f32>(Shape4::new(1, 1, 8, 8), 5);
        assert!(matches!(net.extract(&x), Err(Error::UninitializedMoments(_))));
    }

    #[test]
    fn backward_shapes_and_param_grads() {
        let mut net = Network::<f64>::build(&small(Preset::S7), InitConfig::default(), 1).unwrap();
        let x = random_tensor::<f64>(Shape4::new(2, 1, 12, 14), 6);
        let (y, trace) = net.forward(&x, Mode::Train).unwrap();
        let g = net.backward(trace, &random_tensor(y.shape(), 7)).unwrap();
        assert_eq!(g.shape(), x.shape());
        for (name, p) in net.params() {
            let grad = p.grad().unwrap_or_else(|| panic!("{name} has no gradient"));
            assert!(grad.iter().any(|&v| v != 0.0), "{name} gradient is all zero");
        }
    }
}
