use ndarray::ArrayD;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::config::TrainConfig;
use super::model::{mix_seed, Mode, PoseFormerModel};
use super::ModelError;
use crate::keypoints::ModelInput;
use crate::metrics::{compute_metrics, MetricSet, RankList};
use crate::nncore::{from_matrix, Adam, Graph, NnError};

/// A preprocessed input with its class index.
#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub input: ModelInput,
    pub class: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub train_accuracy: f64,
    pub validation_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub history: Vec<EpochStats>,
    /// Epoch whose weights were kept (differs from the last epoch after early stopping).
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Samples per sequential gradient accumulation unit. Fixed so summation
/// order, and therefore the result, does not depend on the thread count.
const CHUNK: usize = 4;

/// Loss and parameter gradients of one sample (train-mode forward).
pub(crate) fn sample_gradients(
    model: &PoseFormerModel,
    example: &TrainingExample,
    dropout_seed: Option<u64>,
) -> Result<(f64, bool, Vec<ArrayD<f64>>), ModelError> {
    let mut g = Graph::new();
    let vars = model.bind(&mut g);
    let out = match dropout_seed {
        Some(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            model.forward_sample(&mut g, &vars, &example.input, Some(&mut rng))?
        }
        None => model.forward_sample::<ChaCha8Rng>(&mut g, &vars, &example.input, None)?,
    };
    let loss = g.cross_entropy(out.logits, &[example.class])?;
    let logits = g.value(out.logits);
    let predicted = argmax(logits.row(0).iter().copied());
    let mut grads = g.backward(loss)?;
    let grads = vars
        .iter()
        .zip(model.params().iter())
        .map(|(&v, p)| match grads.take(v) {
            Some(m) => from_matrix(m, p.value.shape()),
            None => ArrayD::zeros(p.value.raw_dim()),
        })
        .collect();
    Ok((g.value(loss)[[0, 0]], predicted == example.class, grads))
}

/// Mean loss and gradients over a batch, summed in a thread-count independent order.
fn batch_gradients(
    model: &PoseFormerModel,
    batch: &[&TrainingExample],
    seeds: &[u64],
) -> Result<(f64, usize, Vec<ArrayD<f64>>), ModelError> {
    let partials: Vec<(f64, usize, Vec<ArrayD<f64>>)> = batch
        .par_chunks(CHUNK)
        .zip(seeds.par_chunks(CHUNK))
        .map(|(examples, seeds)| {
            let mut acc: Option<(f64, usize, Vec<ArrayD<f64>>)> = None;
            for (ex, &seed) in examples.iter().zip(seeds) {
                let (loss, correct, grads) = sample_gradients(model, ex, Some(seed))?;
                acc = Some(match acc {
                    None => (loss, correct as usize, grads),
                    Some((l, c, mut gs)) => {
                        for (a, g) in gs.iter_mut().zip(&grads) {
                            *a += g;
                        }
                        (l + loss, c + correct as usize, gs)
                    }
                });
            }
            Ok(acc.expect("chunks are non-empty"))
        })
        .collect::<Result<_, ModelError>>()?;
    let mut iter = partials.into_iter();
    let (mut loss, mut correct, mut grads) = iter.next().expect("batch is non-empty");
    for (l, c, gs) in iter {
        loss += l;
        correct += c;
        for (a, g) in grads.iter_mut().zip(&gs) {
            *a += g;
        }
    }
    let n = batch.len() as f64;
    for g in &mut grads {
        *g /= n;
    }
    Ok((loss / n, correct, grads))
}

/// Per-class stratified hold-out: `round(fraction * n_c)` examples of each
/// class with at least two examples, chosen by a seeded shuffle.
fn split_validation(examples: &[TrainingExample], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    if fraction <= 0.0 {
        return ((0..examples.len()).collect(), Vec::new());
    }
    let classes = examples.iter().map(|e| e.class).max().map_or(0, |m| m + 1);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, e) in examples.iter().enumerate() {
        by_class[e.class].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 0x0076_616c_6964]));
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for mut idx in by_class {
        idx.shuffle(&mut rng);
        let n_val = if idx.len() >= 2 { ((fraction * idx.len() as f64).round() as usize).clamp(1, idx.len() - 1) } else { 0 };
        val.extend_from_slice(&idx[..n_val]);
        train.extend_from_slice(&idx[n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

/// Minimizes cross-entropy with Adam. Shuffling and dropout are seeded from
/// `tcfg.seed`; with a validation fraction the best held-out weights are kept.
/// Final weights are rounded to 32-bit precision.
pub fn train(
    model: &mut PoseFormerModel,
    examples: &[TrainingExample],
    tcfg: &TrainConfig,
) -> Result<TrainOutcome, ModelError> {
    tcfg.validate()?;
    if examples.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let classes = model.config().num_classes;
    if let Some(bad) = examples.iter().find(|e| e.class >= classes) {
        return Err(ModelError::Nn(NnError::LabelOutOfRange { label: bad.class, classes }));
    }
    let (train_idx, val_idx) = split_validation(examples, tcfg.validation_fraction, tcfg.seed);
    let val: Vec<TrainingExample> = val_idx.iter().map(|&i| examples[i].clone()).collect();
    let mut opt = Adam::new(tcfg.learning_rate);
    let mut history = Vec::with_capacity(tcfg.epochs);
    let mut best: Option<(f64, usize, crate::nncore::ParamSet)> = None;
    let mut since_best = 0;
    let mut stopped_early = false;
    let mut order = train_idx.clone();

    for epoch in 0..tcfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[tcfg.seed, epoch as u64, 1]));
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (step, chunk) in order.chunks(tcfg.batch_size).enumerate() {
            let batch: Vec<&TrainingExample> = chunk.iter().map(|&i| &examples[i]).collect();
            let seeds: Vec<u64> =
                chunk.iter().map(|&i| mix_seed(&[tcfg.seed, epoch as u64, step as u64, i as u64])).collect();
            let (loss, c, grads) = batch_gradients(model, &batch, &seeds)?;
            loss_sum += loss * batch.len() as f64;
            correct += c;
            opt.step(model.params_mut_unchecked().iter_mut().map(|p| &mut p.value), &grads)?;
        }
        let n = order.len() as f64;
        let validation_accuracy = if val.is_empty() { None } else { Some(accuracy(model, &val)?) };
        let stats = EpochStats { epoch, loss: loss_sum / n, train_accuracy: correct as f64 / n, validation_accuracy };
        log::info!(
            "epoch {epoch}: loss {:.4} train acc {:.3} val acc {}",
            stats.loss,
            stats.train_accuracy,
            validation_accuracy.map_or("-".to_string(), |a| format!("{a:.3}"))
        );
        history.push(stats);

        if let Some(acc) = validation_accuracy {
            if best.as_ref().map_or(true, |(b, _, _)| acc > *b) {
                best = Some((acc, epoch, model.params().clone()));
                since_best = 0;
            } else {
                since_best += 1;
                if tcfg.patience > 0 && since_best >= tcfg.patience {
                    stopped_early = true;
                    break;
                }
            }
        }
    }

    let last_epoch = history.len() - 1;
    let best_epoch = match best {
        Some((_, epoch, params)) => {
            model.update_params(|p| *p = params);
            epoch
        }
        None => last_epoch,
    };
    model.update_params(|p| p.round_to_f32());
    Ok(TrainOutcome { history, best_epoch, stopped_early })
}

fn accuracy(model: &PoseFormerModel, examples: &[TrainingExample]) -> Result<f64, ModelError> {
    let inputs: Vec<ModelInput> = examples.iter().map(|e| e.input.clone()).collect();
    let out = model.forward(&inputs, Mode::Eval, 0)?;
    let correct = out
        .logits
        .rows()
        .into_iter()
        .zip(examples)
        .filter(|(row, e)| argmax(row.iter().copied()) == e.class)
        .count();
    Ok(correct as f64 / examples.len() as f64)
}

/// Mean evaluation-mode cross-entropy.
pub fn mean_loss(model: &PoseFormerModel, examples: &[TrainingExample]) -> Result<f64, ModelError> {
    let losses: Vec<f64> = examples
        .par_iter()
        .map(|e| sample_loss(model, e))
        .collect::<Result<_, _>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len().max(1) as f64)
}

pub(crate) fn sample_loss(model: &PoseFormerModel, e: &TrainingExample) -> Result<f64, ModelError> {
    let mut g = Graph::new();
    let vars = model.bind(&mut g);
    let out = model.forward_sample::<ChaCha8Rng>(&mut g, &vars, &e.input, None)?;
    let loss = g.cross_entropy(out.logits, &[e.class])?;
    Ok(g.value(loss)[[0, 0]])
}

/// First index of the maximum.
fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// 1-based rank of `class` when classes are sorted by descending logit,
/// ties resolved in favour of the lower class index.
pub fn rank_from_logits(logits: &[f64], class: usize) -> usize {
    let target = logits[class];
    1 + logits
        .iter()
        .enumerate()
        .filter(|&(j, &v)| v > target || (v == target && j < class))
        .count()
}

/// Ranks each example's true class among the model's logits and summarizes
/// Recall@1/5/10, MRR and nDCG.
pub fn evaluate_islr(model: &PoseFormerModel, examples: &[TrainingExample]) -> Result<MetricSet, ModelError> {
    if examples.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let inputs: Vec<ModelInput> = examples.iter().map(|e| e.input.clone()).collect();
    let out = model.forward(&inputs, Mode::Eval, 0)?;
    let ranks: Vec<usize> = out
        .logits
        .rows()
        .into_iter()
        .zip(examples)
        .map(|(row, e)| rank_from_logits(row.as_slice().expect("standard layout"), e.class))
        .collect();
    Ok(compute_metrics(&RankList::new(ranks)?, &[1, 5, 10])?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_from_logits_ties_and_order() {
        assert_eq!(rank_from_logits(&[0.1, 0.9, 0.5], 1), 1);
        assert_eq!(rank_from_logits(&[0.1, 0.9, 0.5], 0), 3);
        assert_eq!(rank_from_logits(&[0.5, 0.5, 0.5], 2), 3);
        assert_eq!(rank_from_logits(&[0.5, 0.5, 0.5], 0), 1);
    }

    #[test]
    fn argmax_prefers_first() {
        assert_eq!(argmax([1.0, 3.0, 3.0].into_iter()), 1);
    }
}
