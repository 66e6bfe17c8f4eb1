//! The PoseFormer network: temporal input convolutions, a per-frame dense
//! embedding, intermediate convolutions, a stack of pre-norm multi-head
//! self-attention blocks, masked mean pooling and a removable linear
//! classifier.
//!
//! Ablation flags drop a block entirely; when the widths around the
//! attention stack then disagree, a linear adapter
//! (`adapter.attention_input`) maps the incoming width to the
//! representation size.

mod config;
mod model;
mod train;

pub use config::{
    Ablation, AttentionConfig, ConvBlockConfig, FrameEmbeddingConfig, ModelConfig, PositionalEncoding,
    TrainConfig, FEED_FORWARD_MULTIPLIER,
};
pub use model::{mix_seed, EmbeddingVector, ForwardOutput, Mode, PoseFormerModel};
pub use train::{evaluate_islr, mean_loss, rank_from_logits, train, EpochStats, TrainOutcome, TrainingExample};

use ndarray::{Array2, ArrayD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::keypoints::{KeypointError, ModelInput};
use crate::metrics::MetricsError;
use crate::nncore::{finite_difference_check, GradCheckConfig, GradCheckReport, NnError, WeightsError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("input shape {found:?} does not match the model's {expected:?}")]
    InputShape { expected: (usize, usize), found: (usize, usize) },
    #[error("input has no valid frames")]
    EmptyInput,
    #[error("empty dataset")]
    EmptyDataset,
    #[error("model header: {0}")]
    Header(String),
    #[error("model file: {0}")]
    Weights(#[from] WeightsError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Keypoints(#[from] KeypointError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("i/o: {0}")]
    Io(String),
}

/// Checks the analytic gradient of the mean evaluation-mode cross-entropy over
/// `examples` against central differences, for every model parameter.
pub fn model_gradient_check(
    model: &PoseFormerModel,
    examples: &[TrainingExample],
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport, ModelError> {
    if examples.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let loss_and_grads = |m: &PoseFormerModel| -> Result<(f64, Vec<ArrayD<f64>>), ModelError> {
        let mut total = 0.0;
        let mut grads: Option<Vec<ArrayD<f64>>> = None;
        for e in examples {
            let (loss, _, g) = train::sample_gradients(m, e, None)?;
            total += loss;
            match &mut grads {
                None => grads = Some(g),
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
            }
        }
        let n = examples.len() as f64;
        let mut grads = grads.expect("non-empty");
        grads.iter_mut().for_each(|g| *g /= n);
        Ok((total / n, grads))
    };
    let (_, analytic) = loss_and_grads(model)?;
    let params: Vec<ArrayD<f64>> = model.params().iter().map(|p| p.value.clone()).collect();
    let mut probe = model.clone();
    let report = finite_difference_check(
        |values| {
            probe.update_params_unchecked(values);
            let mut total = 0.0;
            for e in examples {
                total += train::sample_loss(&probe, e).expect("shapes validated by the analytic pass");
            }
            total / examples.len() as f64
        },
        &params,
        &analytic,
        cfg,
    );
    Ok(report)
}

/// Gradient check of a freshly built model on random inputs, the standard
/// probe behind the `gradcheck` command.
///
/// Biases and layer-norm parameters start at constants, so they are jittered
/// first; otherwise coordinates with exactly symmetric roles would go
/// unexercised. Every coordinate of every parameter is checked at step 1e-5
/// over `samples` inputs, the last of which has two padded frames.
pub fn gradient_check_probe(config: ModelConfig, seed: u64, samples: usize) -> Result<GradCheckReport, ModelError> {
    let mut model = PoseFormerModel::build(config, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 0x6772_6164]));
    model.update_params(|params| {
        for p in params.iter_mut() {
            if !p.name.ends_with(".w") && !p.name.ends_with(".kernel") {
                p.value.mapv_inplace(|v| v + rng.random_range(-0.2..0.2));
            }
        }
    });
    let cfg = model.config().clone();
    let (t, c) = (cfg.sequence_len, cfg.input_channels);
    let examples: Vec<TrainingExample> = (0..samples.max(1))
        .map(|i| {
            let valid = if i + 1 == samples && t > 2 { t - 2 } else { t };
            let mut values = Array2::from_shape_fn((t, c), |_| rng.random_range(-1.5..1.5));
            values.rows_mut().into_iter().skip(valid).for_each(|mut r| r.fill(0.0));
            let valid_mask = (0..t).map(|f| f < valid).collect();
            TrainingExample { input: ModelInput { values, valid_mask }, class: i % cfg.num_classes }
        })
        .collect();
    model_gradient_check(&model, &examples, &GradCheckConfig { step: 1e-5, coords_per_param: None, seed })
}
