use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{multi_task_loss, ArchitectureConfig, BatchLabels, Model, ModelError};
use crate::nn::{finite_difference_check, GradCheckOptions, GradCheckReport, Mode, Module, NnError};
use crate::task::{TaskSet, SED_CLASSES, TAG_CLASSES};
use crate::Tensor;

/// Finite-difference check of the full multi-task loss in double precision.
///
/// Batch norm runs in eval mode on statistics from one warm-up batch, and
/// dropout is forced off, so the loss is a deterministic function of the
/// parameters.
pub fn check_model_gradients(
    config: &ArchitectureConfig,
    frames: usize,
    seed: u64,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport, ModelError> {
    let config = ArchitectureConfig {
        dropout: 0.0,
        ..config.clone()
    };
    let mut model = Model::<f64>::new(config.clone(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    // zero biases put dead units exactly on the ReLU kink
    model.visit_params_mut(&mut |p| {
        if p.name.ends_with(".bias") || p.name.ends_with(".beta") {
            p.value.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-0.2..0.2));
        } else if p.name.ends_with(".gamma") {
            p.value.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(0.8..1.2));
        }
    });
    let bs = 2;
    let x = Tensor::from_fn(&[bs, 1, frames, config.n_mels], |_| rng.gen_range(-1.0..1.0));
    let warm = Tensor::from_fn(x.shape(), |_| rng.gen_range(-1.0..1.0));
    model.forward(&warm, TaskSet::all(), Mode::Train, &mut rng)?;

    let t_out = config.pooled_frames(frames);
    let scenes: Vec<usize> = (0..bs).map(|_| rng.gen_range(0..10)).collect();
    let mut labels = BatchLabels::from_scenes(&scenes);
    labels.tags = Some(Tensor::from_fn(&[bs, TAG_CLASSES], |_| {
        (rng.gen::<f64>() < 0.1) as u8 as f64
    }));
    labels.events = Some(Tensor::from_fn(&[bs, t_out, SED_CLASSES], |_| {
        (rng.gen::<f64>() < 0.2) as u8 as f64
    }));

    let mut loss_fn = |m: &mut Model<f64>, with_grad: bool| -> Result<f64, NnError> {
        let mut unused = ChaCha8Rng::seed_from_u64(0);
        let run = |m: &mut Model<f64>, rng: &mut ChaCha8Rng| -> Result<f64, ModelError> {
            let (out, cache) = m.forward(&x, TaskSet::all(), Mode::Eval, rng)?;
            let (report, grads) = multi_task_loss(&out, &labels, TaskSet::all())?;
            if with_grad {
                m.backward(&cache, &grads);
            }
            Ok(report.total)
        };
        run(m, &mut unused).map_err(|e| match e {
            ModelError::Nn(e) => e,
            other => NnError::InvalidArgument(other.to_string()),
        })
    };
    Ok(finite_difference_check(&mut model, &mut loss_fn, opts)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Variant;

    #[test]
    fn v2_quick_check() {
        let opts = GradCheckOptions {
            tolerance: 1e-3,
            max_elements_per_param: Some(8),
            ..GradCheckOptions::default()
        };
        let r = check_model_gradients(&ArchitectureConfig::gradcheck(Variant::V2), 16, 1, &opts).unwrap();
        assert!(r.passed(), "{r:?}");
    }
}
