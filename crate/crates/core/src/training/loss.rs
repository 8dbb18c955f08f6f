use rayon::prelude::*;

use super::patch::PatchExample;
use crate::correlation::{
    inner_product_backward, inner_product_rows, learned_scores_factored, learned_scores_factored_backward, HeadGrads,
    Pairing,
};
use crate::error::{Error, Result};
use crate::model::{stack, StereoModel};
use crate::ops::{softmax_xent_masked, Mode};
use crate::real::Real;
use crate::siamese::FeatureView;
use crate::tensor::Tensor4;

#[derive(Clone, Debug, PartialEq)]
pub struct BatchLoss<T> {
    /// Mean of `per_example`.
    pub loss: T,
    /// Mean cross-entropy over each example's labeled pixels.
    pub per_example: Vec<T>,
}

struct ExampleGrads<T> {
    loss: T,
    left: Vec<T>,
    right: Vec<T>,
    head: Option<HeadGrads<T>>,
}

fn example_loss<T: Real>(
    model: &StereoModel<T>,
    ex: &PatchExample<T>,
    left: FeatureView<'_, T>,
    right: FeatureView<'_, T>,
    scale: T,
) -> Result<ExampleGrads<T>> {
    let s = ex.size();
    let wide = ex.max_disp + ex.context;
    let pairing = Pairing {
        max_disp: wide,
        right_offset: wide,
    };
    let volume = match &model.head {
        None => inner_product_rows(left, right, pairing, 0..s),
        Some(h) => learned_scores_factored(left, right, pairing, 0..s, h)?,
    };
    let nd = pairing.disparities();
    let n = T::from_f64(ex.targets.len() as f64);
    let mut dscores = vec![T::ZERO; volume.scores.len()];
    let mut total = T::ZERO;
    for (k, t) in ex.targets.iter().enumerate() {
        let scores = &volume.at(t.row, t.col)[..=ex.max_disp];
        let (l, g) = softmax_xent_masked(scores, ex.support(t.col), t.disp, k)?;
        total += l;
        let o = (t.row * s + t.col) * nd;
        for (d, gv) in dscores[o..o + nd].iter_mut().zip(g) {
            *d += gv * scale / n;
        }
    }
    let (dl, dr, head) = match &model.head {
        Some(h) => {
            let (dl, dr, hg) = learned_scores_factored_backward(left, right, pairing, 0..s, h, &dscores)?;
            (dl, dr, Some(hg))
        }
        None => {
            let (dl, dr) = inner_product_backward(left, right, pairing, &dscores);
            (dl, dr, None)
        }
    };
    Ok(ExampleGrads {
        loss: total / n,
        left: dl,
        right: dr,
        head,
    })
}

/// Loss of a batch of patches: each example contributes the mean softmax
/// cross-entropy over its labeled pixels, the batch loss is the mean over
/// examples. Gradients are added to the model's parameter gradients (zero
/// them first). With `commit`, the batchnorm statistics of both branch passes
/// are folded into the running moments, left branch first.
pub fn batch_loss<T: Real>(
    model: &mut StereoModel<T>,
    batch: &[PatchExample<T>],
    commit: bool,
) -> Result<BatchLoss<T>> {
    batch_loss_with_input_grads(model, batch, commit).map(|(l, _)| l)
}

/// Gradients of the batch loss with respect to the stacked left and right
/// patch images.
#[derive(Clone, Debug)]
pub struct InputGrads<T> {
    pub left: Tensor4<T>,
    pub right: Tensor4<T>,
}

/// [`batch_loss`] that also returns the gradients reaching the input images.
pub fn batch_loss_with_input_grads<T: Real>(
    model: &mut StereoModel<T>,
    batch: &[PatchExample<T>],
    commit: bool,
) -> Result<(BatchLoss<T>, InputGrads<T>)> {
    let first = batch.first().ok_or_else(|| Error::Config("empty batch".into()))?;
    for ex in batch {
        ex.validate()?;
        if ex.max_disp != first.max_disp || ex.size() != first.size() {
            return Err(Error::Config("batch mixes patch sizes or disparity ranges".into()));
        }
        if ex.context != model.context() {
            return Err(Error::Config(format!(
                "patch carries {} context columns, the {} model reads {}",
                ex.context,
                model.mode(),
                model.context()
            )));
        }
    }
    let lefts: Vec<Tensor4<T>> = batch.iter().map(|e| e.left.clone()).collect();
    let rights: Vec<Tensor4<T>> = batch.iter().map(|e| e.right.clone()).collect();
    let (fl, tl) = model.net.forward(&stack(&lefts)?, Mode::Train)?;
    let (fr, tr) = model.net.forward(&stack(&rights)?, Mode::Train)?;
    if commit {
        model.net.commit(&tl);
        model.net.commit(&tr);
    }

    let scale = T::ONE / T::from_f64(batch.len() as f64);
    let shared: &StereoModel<T> = model;
    let grads = batch
        .par_iter()
        .enumerate()
        .map(|(b, ex)| {
            example_loss(
                shared,
                ex,
                FeatureView::of_item(&fl, b),
                FeatureView::of_item(&fr, b),
                scale,
            )
        })
        .collect::<Result<Vec<_>>>()?;

    let mut dl = Tensor4::zeros(fl.shape());
    let mut dr = Tensor4::zeros(fr.shape());
    let mut per_example = Vec::with_capacity(batch.len());
    for (b, g) in grads.iter().enumerate() {
        dl.item_mut(b).copy_from_slice(&g.left);
        dr.item_mut(b).copy_from_slice(&g.right);
        per_example.push(g.loss);
    }
    if let Some(h) = &mut model.head {
        for g in &grads {
            h.accumulate(g.head.as_ref().expect("learned head produces head gradients"));
        }
    }
    let left = model.net.backward(tl, &dl)?;
    let right = model.net.backward(tr, &dr)?;
    let loss = per_example.iter().copied().sum::<T>() * scale;
    Ok((BatchLoss { loss, per_example }, InputGrads { left, right }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CorrMode;
    use crate::siamese::{ArchSpec, InitConfig, Preset};
    use crate::tensor::Shape4;
    use crate::testutil::random_tensor;
    use crate::training::Target;

    fn example(seed: u64, s: usize, d: usize, context: usize) -> PatchExample<f64> {
        PatchExample {
            left: random_tensor(Shape4::new(1, 1, s, s), seed),
            right: random_tensor(Shape4::new(1, 1, s, s + d + context), seed + 100),
            max_disp: d,
            context,
            top_row: 0,
            left_col: 3,
            targets: vec![
                Target {
                    row: 0,
                    col: 0,
                    disp: 2,
                },
                Target {
                    row: 1,
                    col: 3,
                    disp: d,
                },
                Target {
                    row: 3,
                    col: 2,
                    disp: 0,
                },
            ],
        }
    }

    #[test]
    fn untrained_loss_is_near_uniform_baseline() {
        let arch = ArchSpec::preset(Preset::S4).with_theta(8);
        let init = InitConfig { std: Some(1e-4) };
        for mode in [CorrMode::Inner, CorrMode::Learned] {
            let mut m = StereoModel::<f64>::build(&arch, mode, init, 1).unwrap();
            let mut ex = example(1, 4, 4, m.context());
            ex.left_col = 10;
            ex.targets.retain(|t| t.disp <= 4);
            let l = batch_loss(&mut m, &[ex], false).unwrap().loss;
            assert!((l - 5f64.ln()).abs() < 1e-3, "{mode}: {l}");
        }
    }

    #[test]
    fn batch_loss_is_mean_of_example_losses() {
        let arch = ArchSpec::preset(Preset::S4).with_theta(4);
        let mut m = StereoModel::<f64>::build(&arch, CorrMode::Learned, InitConfig::default(), 2).unwrap();
        let batch = [example(3, 4, 4, 2), example(4, 4, 4, 2)];
        let r = batch_loss(&mut m, &batch, false).unwrap();
        assert_eq!(r.per_example.len(), 2);
        assert!((r.loss - (r.per_example[0] + r.per_example[1]) / 2.0).abs() < 1e-15);
        assert!(r.loss >= 0.0);
    }

    #[test]
    fn invalid_targets_are_rejected() {
        let arch = ArchSpec::preset(Preset::S4).with_theta(4);
        let mut m = StereoModel::<f64>::build(&arch, CorrMode::Inner, InitConfig::default(), 2).unwrap();
        let mut ex = example(5, 4, 4, 0);
        ex.left_col = 0;
        assert!(matches!(
            batch_loss(&mut m, &[ex.clone()], false),
            Err(Error::TargetOutOfRange { .. })
        ));
        ex.targets.clear();
        assert!(matches!(batch_loss(&mut m, &[ex], false), Err(Error::NoLabels)));
    }

    #[test]
    fn patch_context_must_match_the_model() {
        let arch = ArchSpec::preset(Preset::S4).with_theta(4);
        let mut m = StereoModel::<f64>::build(&arch, CorrMode::Learned, InitConfig::default(), 2).unwrap();
        assert!(matches!(
            batch_loss(&mut m, &[example(8, 4, 4, 0)], false),
            Err(Error::Config(_))
        ));
        let mut ex = example(8, 4, 4, 2);
        ex.context = 3;
        assert!(matches!(batch_loss(&mut m, &[ex], false), Err(Error::Shape { .. })));
    }

    #[test]
    fn learned_mode_reaches_every_parameter() {
        let arch = ArchSpec::preset(Preset::S7).with_theta(4);
        let mut m = StereoModel::<f64>::build(&arch, CorrMode::Learned, InitConfig::default(), 3).unwrap();
        let batch = [example(6, 8, 4, 2), example(7, 8, 4, 2)];
        batch_loss(&mut m, &batch, false).unwrap();
        for (name, p) in m.params() {
            let g = p.grad().unwrap();
            // conv biases feeding batchnorm cancel out and carry no gradient
            if name.ends_with(".bias") && !name.starts_with("head") {
                continue;
            }
            assert!(g.iter().any(|&v| v != 0.0), "{name} has no gradient");
        }
    }
}
