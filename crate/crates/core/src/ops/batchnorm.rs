//! Per-channel batch normalization over (batch, rows, cols).

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor4;

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Mode {
    Train,
    Infer,
}

/// Exponential moving averages of the per-channel batch mean and (biased) variance.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningMoments<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

/// Saved forward state for the backward pass.
#[derive(Clone, Debug)]
pub struct BnContext<T> {
    pub mode: Mode,
    pub normalized: Vec<T>,
    pub inv_std: Vec<T>,
    /// Batch statistics (train mode only).
    pub batch_moments: Option<RunningMoments<T>>,
}

impl<T: Real> RunningMoments<T> {
    /// Folds one batch's moments into `running`: the first batch initializes it,
    /// later batches are averaged in with momentum 0.9.
    pub fn update(running: &mut Option<Self>, batch: &RunningMoments<T>) {
        match running {
            Some(rm) => {
                let mom = T::from_f64(BN_MOMENTUM);
                for c in 0..rm.mean.len() {
                    rm.mean[c] = mom * rm.mean[c] + (T::ONE - mom) * batch.mean[c];
                    rm.var[c] = mom * rm.var[c] + (T::ONE - mom) * batch.var[c];
                }
            }
            None => *running = Some(batch.clone()),
        }
    }
}

/// Normalizes `input` and updates the running moments in place (train mode),
/// or normalizes with the existing running moments (infer mode).
pub fn batchnorm<T: Real>(
    input: &Tensor4<T>,
    gamma: &[T],
    beta: &[T],
    mode: Mode,
    running: &mut Option<RunningMoments<T>>,
    layer: &str,
) -> Result<(Tensor4<T>, BnContext<T>)> {
    let (out, ctx) = batchnorm_forward(input, gamma, beta, mode, running.as_ref(), layer)?;
    if let Some(batch) = &ctx.batch_moments {
        RunningMoments::update(running, batch);
    }
    Ok((out, ctx))
}

/// Pure forward pass; in train mode the batch moments are returned in the
/// context instead of being applied.
pub fn batchnorm_forward<T: Real>(
    input: &Tensor4<T>,
    gamma: &[T],
    beta: &[T],
    mode: Mode,
    running: Option<&RunningMoments<T>>,
    layer: &str,
) -> Result<(Tensor4<T>, BnContext<T>)> {
    let s = input.shape();
    if gamma.len() != s.channels {
        return Err(Error::shape("batchnorm", "gamma length", s.channels, gamma.len()));
    }
    if beta.len() != s.channels {
        return Err(Error::shape("batchnorm", "beta length", s.channels, beta.len()));
    }
    let eps = T::from_f64(BN_EPSILON);
    let count = T::from_f64((s.batch * s.plane()) as f64);
    let (mean, var, batch_moments) = match mode {
        Mode::Train => {
            let mut mean = vec![T::ZERO; s.channels];
            let mut var = vec![T::ZERO; s.channels];
            for (c, (m, v)) in mean.iter_mut().zip(var.iter_mut()).enumerate() {
                let mut acc = T::ZERO;
                for b in 0..s.batch {
                    acc += channel(input, b, c).iter().copied().sum::<T>();
                }
                *m = acc / count;
                let mut sq = T::ZERO;
                for b in 0..s.batch {
                    sq += channel(input, b, c).iter().map(|&x| (x - *m) * (x - *m)).sum::<T>();
                }
                *v = sq / count;
            }
            let batch = RunningMoments {
                mean: mean.clone(),
                var: var.clone(),
            };
            (mean, var, Some(batch))
        }
        Mode::Infer => {
            let rm = running.ok_or_else(|| Error::UninitializedMoments(layer.to_string()))?;
            (rm.mean.clone(), rm.var.clone(), None)
        }
    };
    let inv_std: Vec<T> = var.iter().map(|&v| T::ONE / (v + eps).sqrt()).collect();
    let mut normalized = vec![T::ZERO; s.len()];
    let mut out = Tensor4::zeros(s);
    let plane = s.plane();
    for b in 0..s.batch {
        for c in 0..s.channels {
            let off = (b * s.channels + c) * plane;
            let src = &input.data()[off..off + plane];
            let xh = &mut normalized[off..off + plane];
            for (h, &x) in xh.iter_mut().zip(src) {
                *h = (x - mean[c]) * inv_std[c];
            }
            for (y, &h) in out.data_mut()[off..off + plane].iter_mut().zip(xh.iter()) {
                *y = gamma[c] * h + beta[c];
            }
        }
    }
    Ok((
        out,
        BnContext {
            mode,
            normalized,
            inv_std,
            batch_moments,
        },
    ))
}

fn channel<T: Real>(t: &Tensor4<T>, b: usize, c: usize) -> &[T] {
    let s = t.shape();
    let off = (b * s.channels + c) * s.plane();
    &t.data()[off..off + s.plane()]
}

/// Gradients of [`batchnorm`].
#[derive(Clone, Debug)]
pub struct BnGrads<T> {
    pub input: Tensor4<T>,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

pub fn batchnorm_backward<T: Real>(ctx: &BnContext<T>, gamma: &[T], grad_out: &Tensor4<T>) -> Result<BnGrads<T>> {
    let s = grad_out.shape();
    if ctx.normalized.len() != s.len() {
        return Err(Error::shape(
            "batchnorm_backward",
            "grad_out elements",
            ctx.normalized.len(),
            s.len(),
        ));
    }
    let plane = s.plane();
    let count = T::from_f64((s.batch * plane) as f64);
    let mut dgamma = vec![T::ZERO; s.channels];
    let mut dbeta = vec![T::ZERO; s.channels];
    for b in 0..s.batch {
        for c in 0..s.channels {
            let off = (b * s.channels + c) * plane;
            let dy = &grad_out.data()[off..off + plane];
            let xh = &ctx.normalized[off..off + plane];
            dbeta[c] += dy.iter().copied().sum::<T>();
            dgamma[c] += dy.iter().zip(xh).map(|(&d, &h)| d * h).sum::<T>();
        }
    }
    let mut grad_in = Tensor4::zeros(s);
    for b in 0..s.batch {
        for c in 0..s.channels {
            let off = (b * s.channels + c) * plane;
            let dy = &grad_out.data()[off..off + plane];
            let xh = &ctx.normalized[off..off + plane];
            let dx = &mut grad_in.data_mut()[off..off + plane];
            let scale = gamma[c] * ctx.inv_std[c];
            match ctx.mode {
                Mode::Train => {
                    // dx = g/sigma * (dy - mean(dy) - xhat * mean(dy * xhat))
                    let mean_dy = dbeta[c] / count;
                    let mean_dyx = dgamma[c] / count;
                    for ((d, &g), &h) in dx.iter_mut().zip(dy).zip(xh) {
                        *d = scale * (g - mean_dy - h * mean_dyx);
                    }
                }
                Mode::Infer => {
                    for (d, &g) in dx.iter_mut().zip(dy) {
                        *d = scale * g;
                    }
                }
            }
        }
    }
    Ok(BnGrads {
        input: grad_in,
        gamma: dgamma,
        beta: dbeta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape4;
    use crate::testutil::random_tensor;

    #[test]
    fn train_mode_standardizes_channels() {
        let x = random_tensor::<f64>(Shape4::new(3, 4, 5, 6), 1).map(|v| 3.0 * v + 7.0);
        let mut rm = None;
        let (y, _) = batchnorm(&x, &[1.0; 4], &[0.0; 4], Mode::Train, &mut rm, "bn").unwrap();
        for c in 0..4 {
            let vals: Vec<f64> = (0..3).flat_map(|b| channel(&y, b, c).to_vec()).collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-3, "{var}");
        }
        assert!(rm.is_some());
    }

    #[test]
    fn constant_channel_maps_to_zero() {
        let x = Tensor4::from_fn(Shape4::new(2, 2, 3, 3), |[_, c, _, _]| c as f32 + 4.0);
        let mut rm = None;
        let (y, _) = batchnorm(&x, &[1.0; 2], &[0.0; 2], Mode::Train, &mut rm, "bn").unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn infer_without_moments_errors() {
        let x = random_tensor::<f32>(Shape4::new(1, 2, 2, 2), 3);
        let mut rm = None;
        let err = batchnorm(&x, &[1.0; 2], &[0.0; 2], Mode::Infer, &mut rm, "bn3").unwrap_err();
        assert!(matches!(err, Error::UninitializedMoments(ref l) if l == "bn3"));
    }

    #[test]
    fn running_moments_follow_momentum() {
        let x1 = Tensor4::filled(Shape4::new(1, 1, 2, 2), 1.0f64);
        let x2 = Tensor4::filled(Shape4::new(1, 1, 2, 2), 3.0f64);
        let mut rm = None;
        batchnorm(&x1, &[1.0], &[0.0], Mode::Train, &mut rm, "bn").unwrap();
        batchnorm(&x2, &[1.0], &[0.0], Mode::Train, &mut rm, "bn").unwrap();
        let rm = rm.unwrap();
        assert!((rm.mean[0] - (0.9 * 1.0 + 0.1 * 3.0)).abs() < 1e-12);
        assert_eq!(rm.var[0], 0.0);
    }

    #[test]
    fn sum_loss_gradient_matches_finite_differences() {
        let x = random_tensor::<f64>(Shape4::new(2, 3, 4, 4), 4);
        let gamma = [1.3, 0.7, -0.4];
        let beta = [0.1, 0.0, 0.2];
        let w = random_tensor::<f64>(x.shape(), 5);
        let loss = |x: &Tensor4<f64>| {
            let mut rm = None;
            let (y, _) = batchnorm(x, &gamma, &beta, Mode::Train, &mut rm, "bn").unwrap();
            y.data().iter().sum::<f64>() + y.dot(&w)
        };
        let mut rm = None;
        let (y, ctx) = batchnorm(&x, &gamma, &beta, Mode::Train, &mut rm, "bn").unwrap();
        let up = w.map(|v| v + 1.0);
        let g = batchnorm_backward(&ctx, &gamma, &up).unwrap();
        assert_eq!(y.shape(), g.input.shape());
        let eps = 1e-5;
        for i in 0..x.data().len() {
            let mut xp = x.clone();
            xp.data_mut()[i] += eps;
            let mut xm = x.clone();
            xm.data_mut()[i] -= eps;
            let fd = (loss(&xp) - loss(&xm)) / (2.0 * eps);
            let an = g.input.data()[i];
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
            assert!(rel < 1e-4, "element {i}: fd {fd} vs analytic {an}");
        }
    }
}
