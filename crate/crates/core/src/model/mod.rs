//! The three integrated network variants, their labels, loss, mix-up and
//! checkpoint format.

mod checkpoint;
mod config;
mod labels;
mod network;
mod verify;

pub use checkpoint::{Checkpoint, CheckpointHeader, OptimizerSnapshot, CHECKPOINT_VERSION};
pub use config::{ArchitectureConfig, Variant};
pub use labels::{
    mixup_batch, mixup_with, multi_task_loss, rasterize_events, roll_to_events, BatchLabels,
    LossReport, POOLED_FRAME_S, PROB_CLAMP,
};
pub use network::{Model, ModelCache, ModelOutputs, OutputGrads};
pub use verify::check_model_gradients;

use thiserror::Error;

use crate::nn::NnError;
use crate::task::Task;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("invalid architecture config: {0}")]
    InvalidConfig(String),
    #[error("input shape {got:?} does not match {expected}")]
    InputShape { expected: String, got: Vec<usize> },
    #[error("input has {frames} frames, at least {min} required")]
    TooFewFrames { frames: usize, min: usize },
    #[error("no active task")]
    NoActiveTask,
    #[error("labels missing for active task {0}")]
    MissingLabels(Task),
    #[error("model output missing for active task {0}")]
    MissingOutput(Task),
    #[error("{task} labels have shape {got:?}, outputs {expected:?}")]
    LabelShape {
        task: Task,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("mix-up needs at least 2 examples, got {0}")]
    BatchTooSmall(usize),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ops::softmax_rows;
    use crate::nn::{Mode, Module};
    use crate::task::TaskSet;
    use crate::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn input(bs: usize, frames: usize, mels: usize, seed: u64) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(&[bs, 1, frames, mels], |_| rng.gen_range(-1.0..1.0))
    }

    fn warmed(variant: Variant) -> Model<f32> {
        let mut m = Model::new(ArchitectureConfig::tiny(variant), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        m.forward(&input(3, 20, 128, 1), TaskSet::all(), Mode::Train, &mut rng)
            .unwrap();
        m
    }

    #[test]
    fn v3_has_more_parameters_than_v2() {
        for cfg in [ArchitectureConfig::full, ArchitectureConfig::tiny] {
            let v2 = Model::<f32>::new(cfg(Variant::V2), 0).unwrap();
            let v3 = Model::<f32>::new(cfg(Variant::V3), 0).unwrap();
            assert!(v3.parameter_count() > v2.parameter_count());
        }
    }

    #[test]
    fn full_scale_structure() {
        for v in Variant::ALL {
            let m = Model::<f32>::new(ArchitectureConfig::full(v), 0).unwrap();
            assert_eq!(m.final_conv_channels(), 512);
            assert_eq!(m.conv_layer_count(), 8);
            assert_eq!(m.head_dims(), (10, 80, 14));
        }
    }

    #[test]
    fn output_shapes_and_ranges() {
        for v in Variant::ALL {
            let mut m = warmed(v);
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let (out, _) = m
                .forward(&input(2, 37, 128, 2), TaskSet::all(), Mode::Eval, &mut rng)
                .unwrap();
            assert_eq!(out.asc_logits.as_ref().unwrap().shape(), &[2, 10]);
            let tag = out.tag_probs.as_ref().unwrap();
            assert_eq!(tag.shape(), &[2, 80]);
            assert!(tag.data().iter().all(|&p| p > 0.0 && p < 1.0));
            assert_eq!(out.sed_roll.as_ref().unwrap().shape(), &[2, 9, 14]);
            for row in softmax_rows(out.asc_logits.as_ref().unwrap()).data().chunks(10) {
                assert!((row.iter().sum::<f32>() - 1.0).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn rejects_short_input_and_empty_task_set() {
        let mut m = warmed(Variant::V2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            m.forward(&input(1, 15, 128, 0), TaskSet::all(), Mode::Eval, &mut rng),
            Err(ModelError::TooFewFrames { frames: 15, min: 16 })
        ));
        assert!(matches!(
            m.forward(&input(1, 20, 128, 0), TaskSet::empty(), Mode::Eval, &mut rng),
            Err(ModelError::NoActiveTask)
        ));
    }

    #[test]
    fn inactive_heads_do_not_change_scene_logits() {
        for v in Variant::ALL {
            let mut m = warmed(v);
            let x = input(2, 24, 128, 4);
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let (a, _) = m.forward(&x, TaskSet::only(Task::Asc), Mode::Eval, &mut rng).unwrap();
            let (b, _) = m.forward(&x, TaskSet::all(), Mode::Eval, &mut rng).unwrap();
            assert_eq!(a.asc_logits, b.asc_logits);
            assert!(a.tag_probs.is_none() && a.sed_roll.is_none());
        }
    }

    #[test]
    fn batch_permutation_permutes_outputs() {
        let mut m = warmed(Variant::V3);
        let x = input(3, 20, 128, 5);
        let row = 20 * 128;
        let perm = [2, 0, 1];
        let mut px = Vec::new();
        for &j in &perm {
            px.extend_from_slice(&x.data()[j * row..(j + 1) * row]);
        }
        let px = Tensor::from_vec(x.shape(), px);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (a, _) = m.forward(&x, TaskSet::all(), Mode::Eval, &mut rng).unwrap();
        let (b, _) = m.forward(&px, TaskSet::all(), Mode::Eval, &mut rng).unwrap();
        let sa = a.sed_roll.unwrap();
        let sb = b.sed_roll.unwrap();
        let srow = sa.len() / 3;
        for (i, &j) in perm.iter().enumerate() {
            assert_eq!(&sb.data()[i * srow..(i + 1) * srow], &sa.data()[j * srow..(j + 1) * srow]);
        }
    }

    #[test]
    fn parameter_names_are_unique() {
        for v in Variant::ALL {
            let m = Model::<f32>::new(ArchitectureConfig::tiny(v), 0).unwrap();
            let mut names = Vec::new();
            m.visit_params(&mut |p| names.push(p.name.clone()));
            let n = names.len();
            names.sort();
            names.dedup();
            assert_eq!(names.len(), n);
        }
    }
}
