//! Central finite-difference checks of the analytic gradients, run in double
//! precision through the same generic code as training.
//!
//! Every case is a scalar loss over a few named tensors ("slots"). Ops use the
//! loss `sum(out * w)` for a fixed random `w`, so the upstream gradient is `w`.
//! Composed models use the real training loss.

use std::time::Instant;

use rand::Rng;
use serde::Serialize;

use crate::correlation::{
    build_psi, inner_product_backward, inner_product_volume, learned_scores, learned_scores_backward,
    learned_scores_factored, learned_scores_factored_backward, learned_scores_forward, psi_backward, CorrHead, Pairing,
    PsiVolume,
};
use crate::error::{Error, Result};
use crate::model::{CorrMode, StereoModel};
use crate::ops::{
    batchnorm_backward, batchnorm_forward, conv2d, conv2d_backward, deconv2, deconv2_backward, maxpool2,
    maxpool2_backward, relu, relu_backward, softmax_xent, ConvGeometry, Mode, RunningMoments,
};
use crate::rng::{stream, uniform_tensor, Stream, StreamRng};
use crate::siamese::{ArchSpec, FeatureView, InitConfig, Preset};
use crate::tensor::{Shape4, Tensor4};
use crate::training::{batch_loss, batch_loss_with_input_grads, PatchExample, Target};

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_TOL: f64 = 1e-4;
/// Gradients below this magnitude are compared in absolute terms.
pub const REL_FLOOR: f64 = 1e-6;

/// `|a - n| / max(|a|, |n|, REL_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// A scalar function of named tensors with an analytic gradient.
pub trait GradCase {
    fn slots(&self) -> Vec<String>;
    fn slot_mut(&mut self, k: usize) -> &mut [f64];
    fn loss(&mut self) -> Result<f64>;
    /// One gradient per slot, same lengths as the slots.
    fn gradients(&mut self) -> Result<Vec<Vec<f64>>>;
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_err: f64,
    /// `slot[index]` of the worst coordinate.
    pub worst_at: String,
    pub coords: usize,
    /// Step refinements taken at non-differentiable points.
    pub refined: usize,
    pub seconds: f64,
}

impl CheckResult {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// Compares every coordinate of every slot against central differences.
///
/// A coordinate that fails at `eps` and whose one-sided differences disagree
/// (a relu or max-pool switch inside the step) is re-measured with steps
/// `eps / 10` and `eps / 100`; its error is the one at the last step taken.
pub fn check_case(name: &str, case: &mut dyn GradCase, eps: f64) -> Result<CheckResult> {
    check_case_with(name, case, eps, DEFAULT_TOL)
}

pub fn check_case_with(name: &str, case: &mut dyn GradCase, eps: f64, tol: f64) -> Result<CheckResult> {
    let start = Instant::now();
    let slots = case.slots();
    let analytic = case.gradients()?;
    let mut worst = (0.0f64, String::new());
    let mut coords = 0;
    let mut refined = 0;
    for (k, slot) in slots.iter().enumerate() {
        let n = case.slot_mut(k).len();
        if analytic[k].len() != n {
            return Err(Error::shape("gradcheck", "gradient length", n, analytic[k].len()));
        }
        for idx in 0..n {
            let a = analytic[k][idx];
            let orig = case.slot_mut(k)[idx];
            let at = |case: &mut dyn GradCase, x: f64| -> Result<f64> {
                case.slot_mut(k)[idx] = x;
                let l = case.loss();
                case.slot_mut(k)[idx] = orig;
                l
            };
            let mut step = eps;
            let mut center = None;
            let err = loop {
                let plus = at(case, orig + step)?;
                let minus = at(case, orig - step)?;
                let err = relative_error(a, (plus - minus) / (2.0 * step));
                if err < tol || step < eps / 50.0 {
                    break err;
                }
                let f0 = match center {
                    Some(v) => v,
                    None => *center.insert(case.loss()?),
                };
                if relative_error((plus - f0) / step, (f0 - minus) / step) < tol {
                    break err;
                }
                refined += 1;
                step /= 10.0;
            };
            if err > worst.0 || err.is_nan() {
                worst = (err, format!("{slot}[{idx}]"));
            }
            coords += 1;
        }
    }
    Ok(CheckResult {
        name: name.to_string(),
        max_rel_err: worst.0,
        worst_at: worst.1,
        coords,
        refined,
        seconds: start.elapsed().as_secs_f64(),
    })
}

type LossFn = Box<dyn FnMut(&[Vec<f64>]) -> Result<f64>>;
type GradFn = Box<dyn FnMut(&[Vec<f64>]) -> Result<Vec<Vec<f64>>>>;

/// Case over plain value vectors with closures for the loss and gradients.
struct FnCase {
    names: Vec<String>,
    values: Vec<Vec<f64>>,
    loss: LossFn,
    grads: GradFn,
}

impl GradCase for FnCase {
    fn slots(&self) -> Vec<String> {
        self.names.clone()
    }

    fn slot_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.values[k]
    }

    fn loss(&mut self) -> Result<f64> {
        (self.loss)(&self.values)
    }

    fn gradients(&mut self) -> Result<Vec<Vec<f64>>> {
        (self.grads)(&self.values)
    }
}

fn fn_case(
    slots: Vec<(&str, Vec<f64>)>,
    loss: impl FnMut(&[Vec<f64>]) -> Result<f64> + 'static,
    grads: impl FnMut(&[Vec<f64>]) -> Result<Vec<Vec<f64>>> + 'static,
) -> Box<dyn GradCase> {
    let (names, values) = slots.into_iter().map(|(n, v)| (n.to_string(), v)).unzip();
    Box::new(FnCase {
        names,
        values,
        loss: Box::new(loss),
        grads: Box::new(grads),
    })
}

fn tensor(shape: Shape4, v: &[f64]) -> Tensor4<f64> {
    Tensor4::from_vec(shape, v.to_vec()).expect("slot length matches its shape")
}

fn random(shape: Shape4, rng: &mut StreamRng) -> Vec<f64> {
    uniform_tensor::<f64>(shape, rng).into_data()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Random shape no larger than `2 x 8 x 12 x 12`, spatial sizes even.
fn op_shape(rng: &mut StreamRng) -> Shape4 {
    Shape4::new(
        rng.random_range(1..=2),
        rng.random_range(1..=8),
        2 * rng.random_range(2..=6),
        2 * rng.random_range(2..=6),
    )
}

fn conv_case(rng: &mut StreamRng, geom: ConvGeometry, mutate: bool) -> Box<dyn GradCase> {
    let is = op_shape(rng);
    let out_c = rng.random_range(1..=8);
    let ws = Shape4::new(out_c, is.channels, 3, 3);
    let (or, oc) = geom.output_size(is.rows, is.cols, 3, 3).expect("3x3 fits");
    let os = Shape4::new(is.batch, out_c, or, oc);
    let w = random(os, rng);
    let slots = vec![
        ("input", random(is, rng)),
        ("weights", random(ws, rng)),
        ("bias", random(Shape4::new(1, 1, 1, out_c), rng)),
    ];
    let wl = w.clone();
    fn_case(
        slots,
        move |v| Ok(conv2d(&tensor(is, &v[0]), &tensor(ws, &v[1]), &v[2], geom)?.dot(&tensor(os, &wl))),
        move |v| {
            let mut g = tensor(os, &w);
            if mutate {
                // off-by-one: upstream gradient read one column too far
                let shifted: Vec<f64> = (0..os.len())
                    .map(|k| if (k + 1) % os.cols == 0 { 0.0 } else { w[k + 1] })
                    .collect();
                g = tensor(os, &shifted);
            }
            let r = conv2d_backward(&tensor(is, &v[0]), &tensor(ws, &v[1]), geom, &g)?;
            Ok(vec![r.input.into_data(), r.weights, r.bias])
        },
    )
}

fn deconv_case(rng: &mut StreamRng) -> Box<dyn GradCase> {
    let mut is = op_shape(rng);
    is.rows /= 2;
    is.cols /= 2;
    let out_c = rng.random_range(1..=8);
    let ws = Shape4::new(is.channels, out_c, 3, 3);
    let os = Shape4::new(is.batch, out_c, 2 * is.rows, 2 * is.cols);
    let w = random(os, rng);
    let slots = vec![
        ("input", random(is, rng)),
        ("weights", random(ws, rng)),
        ("bias", random(Shape4::new(1, 1, 1, out_c), rng)),
    ];
    let wl = w.clone();
    fn_case(
        slots,
        move |v| Ok(deconv2(&tensor(is, &v[0]), &tensor(ws, &v[1]), &v[2])?.dot(&tensor(os, &wl))),
        move |v| {
            let r = deconv2_backward(&tensor(is, &v[0]), &tensor(ws, &v[1]), &tensor(os, &w))?;
            Ok(vec![r.input.into_data(), r.weights, r.bias])
        },
    )
}

fn maxpool_case(rng: &mut StreamRng) -> Box<dyn GradCase> {
    let is = op_shape(rng);
    let os = Shape4::new(is.batch, is.channels, is.rows / 2, is.cols / 2);
    let w = random(os, rng);
    let wl = w.clone();
    fn_case(
        vec![("input", random(is, rng))],
        move |v| Ok(maxpool2(&tensor(is, &v[0]))?.output.dot(&tensor(os, &wl))),
        move |v| {
            let p = maxpool2(&tensor(is, &v[0]))?;
            Ok(vec![maxpool2_backward(is, &p.argmax, &tensor(os, &w))?.into_data()])
        },
    )
}

fn batchnorm_case(rng: &mut StreamRng, mode: Mode) -> Box<dyn GradCase> {
    let is = op_shape(rng);
    let c = is.channels;
    let w = random(is, rng);
    let running = RunningMoments {
        mean: (0..c).map(|_| rng.random_range(-1.0..1.0)).collect(),
        var: (0..c).map(|_| rng.random_range(0.2..2.0)).collect(),
    };
    let slots = vec![
        ("input", random(is, rng)),
        ("gamma", (0..c).map(|_| rng.random_range(0.5..1.5)).collect()),
        ("beta", random(Shape4::new(1, 1, 1, c), rng)),
    ];
    let (wl, rl) = (w.clone(), running.clone());
    fn_case(
        slots,
        move |v| {
            let (out, _) = batchnorm_forward(&tensor(is, &v[0]), &v[1], &v[2], mode, Some(&rl), "bn")?;
            Ok(out.dot(&tensor(is, &wl)))
        },
        move |v| {
            let (_, ctx) = batchnorm_forward(&tensor(is, &v[0]), &v[1], &v[2], mode, Some(&running), "bn")?;
            let g = batchnorm_backward(&ctx, &v[1], &tensor(is, &w))?;
            Ok(vec![g.input.into_data(), g.gamma, g.beta])
        },
    )
}

fn relu_case(rng: &mut StreamRng) -> Box<dyn GradCase> {
    let is = op_shape(rng);
    let w = random(is, rng);
    let wl = w.clone();
    // keep inputs clear of the kink, where the derivative is undefined
    let input = random(is, rng)
        .into_iter()
        .map(|x: f64| x.signum() * (0.01 + x.abs()))
        .collect();
    fn_case(
        vec![("input", input)],
        move |v| Ok(relu(&tensor(is, &v[0])).dot(&tensor(is, &wl))),
        move |v| {
            Ok(vec![
                relu_backward(&relu(&tensor(is, &v[0])), &tensor(is, &w)).into_data()
            ])
        },
    )
}

fn softmax_case(rng: &mut StreamRng) -> Box<dyn GradCase> {
    let n = rng.random_range(2..=33);
    let target = rng.random_range(0..n);
    let logits: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
    fn_case(
        vec![("logits", logits)],
        move |v| Ok(softmax_xent(&v[0], target, 0)?.0),
        move |v| Ok(vec![softmax_xent(&v[0], target, 0)?.1]),
    )
}

/// Random feature-map pair `(theta, rows, cols)` and disparity range.
fn feature_dims(rng: &mut StreamRng) -> (Shape4, usize) {
    let theta = rng.random_range(1..=4);
    let rows = rng.random_range(1..=4);
    let cols = rng.random_range(3..=10);
    let max_disp = rng.random_range(1..cols.min(8));
    (Shape4::new(1, theta, rows, cols), max_disp)
}

fn inner_product_case(rng: &mut StreamRng) -> Box<dyn GradCase> {
    let (fs, dmax) = feature_dims(rng);
    let mut w = random(Shape4::new(1, 1, fs.rows * fs.cols, dmax + 1), rng);
    // off-image entries hold the constant "no match" score
    for (k, v) in w.iter_mut().enumerate() {
        if k / (dmax + 1) % fs.cols < k % (dmax + 1) {
            *v = 0.0;
        }
    }
    let pairing = Pairing::full_image(dmax);
    let wl = w.clone();
    fn_case(
        vec![("left", random(fs, rng)), ("right", random(fs, rng))],
        move |v| {
            let (l, r) = (tensor(fs, &v[0]), tensor(fs, &v[1]));
            Ok(dot(
                &inner_product_volume(FeatureView::of_item(&l, 0), FeatureView::of_item(&r, 0), dmax)?.scores,
                &wl,
            ))
        },
        move |v| {
            let (l, r) = (tensor(fs, &v[0]), tensor(fs, &v[1]));
            let (dl, dr) =
                inner_product_backward(FeatureView::of_item(&l, 0), FeatureView::of_item(&r, 0), pairing, &w);
            Ok(vec![dl, dr])
        },
    )
}

fn random_psi(rows: usize, cols: usize, dmax: usize, theta: usize, rng: &mut StreamRng) -> PsiVolume<f64> {
    let mut psi = PsiVolume::zeros(rows, cols, dmax, theta);
    for p in 0..rows * cols {
        for d in 0..=dmax {
            psi.at_mut(p, d)
                .iter_mut()
                .for_each(|x| *x = rng.random_range(-1.0..1.0));
        }
    }
    psi
}

fn psi_from_dense(rows: usize, cols: usize, dmax: usize, theta: usize, dense: &[f64]) -> PsiVolume<f64> {
    let mut psi = PsiVolume::zeros(rows, cols, dmax, theta);
    let w = 2 * theta;
    for p in 0..rows * cols {
        for d in 0..=dmax {
            let o = (p * (dmax + 1) + d) * w;
            psi.at_mut(p, d).copy_from_slice(&dense[o..o + w]);
        }
    }
    psi
}

fn build_psi_case(rng: &mut StreamRng) -> Box<dyn GradCase> {
    let (fs, dmax) = feature_dims(rng);
    let (rows, cols, theta) = (fs.rows, fs.cols, fs.channels);
    let g = random_psi(rows, cols, dmax, theta, rng);
    let gl = g.clone();
    let pairing = Pairing::full_image(dmax);
    fn_case(
        vec![("left", random(fs, rng)), ("right", random(fs, rng))],
        move |v| {
            let (l, r) = (tensor(fs, &v[0]), tensor(fs, &v[1]));
            Ok(dot(
                &build_psi(FeatureView::of_item(&l, 0), FeatureView::of_item(&r, 0), dmax)?.data,
                &gl.data,
            ))
        },
        move |v| {
            let (l, r) = (tensor(fs, &v[0]), tensor(fs, &v[1]));
            let (mut dl, mut dr) = (vec![0.0; fs.len()], vec![0.0; fs.len()]);
            psi_backward(
                &g,
                FeatureView::of_item(&l, 0),
                FeatureView::of_item(&r, 0),
                pairing,
                0..rows,
                &mut dl,
                &mut dr,
            );
            Ok(vec![dl, dr])
        },
    )
}

fn head_with(theta: usize, v: &[Vec<f64>]) -> CorrHead<f64> {
    let w = 2 * theta;
    CorrHead {
        theta,
        hidden_weight: tensor(Shape4::new(w, w, 1, 3), &v[0]),
        hidden_bias: tensor(Shape4::new(1, w, 1, 1), &v[1]),
        output_weight: tensor(Shape4::new(1, w, 1, 3), &v[2]),
        output_bias: tensor(Shape4::new(1, 1, 1, 1), &v[3]),
    }
}

fn head_slots(theta: usize, rng: &mut StreamRng) -> Vec<(&'static str, Vec<f64>)> {
    let head = CorrHead::<f64>::new(theta, InitConfig::default(), rng).expect("valid theta");
    // random biases so the hidden relu is not symmetric around zero
    let nb = head.hidden_bias.shape().len();
    vec![
        ("head.hidden.weight", head.hidden_weight.into_data()),
        ("head.hidden.bias", random(Shape4::new(1, 1, 1, nb), rng)),
        ("head.output.weight", head.output_weight.into_data()),
        ("head.output.bias", random(Shape4::new(1, 1, 1, 1), rng)),
    ]
}

fn head_psi_case(rng: &mut StreamRng) -> Box<dyn GradCase> {
    let (fs, dmax) = feature_dims(rng);
    let (rows, cols, theta) = (fs.rows, fs.cols, fs.channels);
    let psi = random_psi(rows, cols, dmax, theta, rng).to_dense();
    let w = random(Shape4::new(1, 1, rows * cols, dmax + 1), rng);
    let mut slots = head_slots(theta, rng);
    slots.push(("psi", psi));
    let wl = w.clone();
    fn_case(
        slots,
        move |v| {
            let psi = psi_from_dense(rows, cols, dmax, theta, &v[4]);
            Ok(dot(&learned_scores(&psi, &head_with(theta, v))?.scores, &wl))
        },
        move |v| {
            let psi = psi_from_dense(rows, cols, dmax, theta, &v[4]);
            let head = head_with(theta, v);
            let (_, act) = learned_scores_forward(&psi, &head)?;
            let (dpsi, g) = learned_scores_backward(&psi, &head, &act, &w)?;
            Ok(vec![
                g.hidden_weight,
                g.hidden_bias,
                g.output_weight,
                g.output_bias,
                dpsi.to_dense(),
            ])
        },
    )
}

fn head_factored_case(rng: &mut StreamRng) -> Box<dyn GradCase> {
    let (fs, dmax) = feature_dims(rng);
    let (rows, theta) = (fs.rows, fs.channels);
    let pairing = Pairing::full_image(dmax);
    let w = random(Shape4::new(1, 1, rows * fs.cols, dmax + 1), rng);
    let mut slots = head_slots(theta, rng);
    slots.push(("left", random(fs, rng)));
    slots.push(("right", random(fs, rng)));
    let wl = w.clone();
    fn_case(
        slots,
        move |v| {
            let (l, r) = (tensor(fs, &v[4]), tensor(fs, &v[5]));
            let (l, r) = (FeatureView::of_item(&l, 0), FeatureView::of_item(&r, 0));
            Ok(dot(
                &learned_scores_factored(l, r, pairing, 0..rows, &head_with(theta, v))?.scores,
                &wl,
            ))
        },
        move |v| {
            let (l, r) = (tensor(fs, &v[4]), tensor(fs, &v[5]));
            let (l, r) = (FeatureView::of_item(&l, 0), FeatureView::of_item(&r, 0));
            let (dl, dr, g) = learned_scores_factored_backward(l, r, pairing, 0..rows, &head_with(theta, v), &w)?;
            Ok(vec![
                g.hidden_weight,
                g.hidden_bias,
                g.output_weight,
                g.output_bias,
                dl,
                dr,
            ])
        },
    )
}

/// Full siamese model plus training loss on a small batch of patches.
struct ModelCase {
    model: StereoModel<f64>,
    batch: Vec<PatchExample<f64>>,
    names: Vec<String>,
}

impl ModelCase {
    const THETA: usize = 4;
    const MAX_DISP: usize = 6;

    fn new(preset: Preset, mode: CorrMode, seed: u64) -> Result<Self> {
        let arch = ArchSpec::preset(preset).with_theta(Self::THETA);
        let mut model = StereoModel::build(&arch, mode, InitConfig::default(), seed)?;
        let mut rng = stream(seed, Stream::Test);
        // Dead pixels (all features zero after the last relu) would put hidden
        // units with a zero bias exactly on their kink.
        if let Some(h) = &mut model.head {
            for b in [&mut h.hidden_bias, &mut h.output_bias] {
                b.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
            }
        }
        let size = arch.size_multiple().max(12).next_multiple_of(arch.size_multiple());
        let d = Self::MAX_DISP;
        let context = model.context();
        let batch: Vec<PatchExample<f64>> = (0..2)
            .map(|_| {
                let mut targets = Vec::new();
                for k in 0..size * size {
                    if rng.random_bool(0.3) {
                        let (row, col) = (k / size, k % size);
                        // left patch starts at column 2, so the support is min(D, col + 2) + 1
                        let disp = rng.random_range(0..=d.min(col + 2));
                        targets.push(Target { row, col, disp });
                    }
                }
                PatchExample {
                    left: uniform_tensor(Shape4::new(1, 1, size, size), &mut rng),
                    right: uniform_tensor(Shape4::new(1, 1, size, size + d + context), &mut rng),
                    max_disp: d,
                    context,
                    top_row: 0,
                    left_col: 2,
                    targets,
                }
            })
            .collect();
        let mut names: Vec<String> = model.params().into_iter().map(|(n, _)| n).collect();
        for b in 0..batch.len() {
            names.push(format!("left{b}"));
            names.push(format!("right{b}"));
        }
        Ok(ModelCase { model, batch, names })
    }
}

impl GradCase for ModelCase {
    fn slots(&self) -> Vec<String> {
        self.names.clone()
    }

    fn slot_mut(&mut self, k: usize) -> &mut [f64] {
        let np = self.names.len() - 2 * self.batch.len();
        if k < np {
            return self.model.params_mut().swap_remove(k).data_mut();
        }
        let ex = &mut self.batch[(k - np) / 2];
        if (k - np).is_multiple_of(2) {
            ex.left.data_mut()
        } else {
            ex.right.data_mut()
        }
    }

    fn loss(&mut self) -> Result<f64> {
        Ok(batch_loss(&mut self.model, &self.batch, false)?.loss)
    }

    fn gradients(&mut self) -> Result<Vec<Vec<f64>>> {
        self.model.zero_grad();
        let (_, inputs) = batch_loss_with_input_grads(&mut self.model, &self.batch, false)?;
        let mut out: Vec<Vec<f64>> = self
            .model
            .params()
            .into_iter()
            .map(|(_, p)| p.grad().map_or_else(|| vec![0.0; p.shape().len()], <[f64]>::to_vec))
            .collect();
        for b in 0..self.batch.len() {
            out.push(inputs.left.item(b).to_vec());
            out.push(inputs.right.item(b).to_vec());
        }
        Ok(out)
    }
}

/// Per-op cases, each drawn with random shapes from its seed.
pub const OP_CASES: [&str; 12] = [
    "conv2d",
    "conv2d_stride2",
    "deconv2",
    "maxpool2",
    "batchnorm_train",
    "batchnorm_infer",
    "relu",
    "softmax_xent",
    "inner_product",
    "build_psi",
    "head_psi",
    "head_factored",
];

/// Composed model cases: siamese branches, correlation and training loss.
pub const MODEL_CASES: [&str; 6] = [
    "model_s4_inner",
    "model_s4_learned",
    "model_s7_inner",
    "model_s7_learned",
    "model_s9_inner",
    "model_s9_learned",
];

/// Conv whose backward reads the upstream gradient one column off; must fail.
pub const MUTANT_CASE: &str = "conv2d_mutant";

pub fn all_cases() -> Vec<&'static str> {
    OP_CASES.iter().chain(MODEL_CASES.iter()).copied().collect()
}

pub fn build_case(name: &str, seed: u64) -> Result<Box<dyn GradCase>> {
    let mut rng = stream(seed, Stream::Test);
    let rng = &mut rng;
    Ok(match name {
        "conv2d" => conv_case(rng, ConvGeometry::same(3, 3), false),
        "conv2d_stride2" => conv_case(rng, ConvGeometry::new(2, 1), false),
        MUTANT_CASE => conv_case(rng, ConvGeometry::same(3, 3), true),
        "deconv2" => deconv_case(rng),
        "maxpool2" => maxpool_case(rng),
        "batchnorm_train" => batchnorm_case(rng, Mode::Train),
        "batchnorm_infer" => batchnorm_case(rng, Mode::Infer),
        "relu" => relu_case(rng),
        "softmax_xent" => softmax_case(rng),
        "inner_product" => inner_product_case(rng),
        "build_psi" => build_psi_case(rng),
        "head_psi" => head_psi_case(rng),
        "head_factored" => head_factored_case(rng),
        model => {
            let mut parts = model.strip_prefix("model_").unwrap_or("").split('_');
            let (Some(p), Some(m), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(Error::Config(format!("unknown gradient check `{name}`")));
            };
            let preset: Preset = p
                .parse()
                .map_err(|_| Error::Config(format!("unknown gradient check `{name}`")))?;
            let mode: CorrMode = m.parse()?;
            Box::new(ModelCase::new(preset, mode, seed)?)
        }
    })
}

/// Runs the named cases at one seed.
pub fn run_checks(names: &[&str], seed: u64, eps: f64) -> Result<Vec<CheckResult>> {
    names
        .iter()
        .map(|&n| check_case(n, build_case(n, seed)?.as_mut(), eps))
        .collect()
}
