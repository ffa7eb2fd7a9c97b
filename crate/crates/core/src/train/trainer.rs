use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    sgd_momentum_step, zero_velocity, Model, ModelSpec, ParamSet, TrainConfig, TrainError,
};
use crate::autodiff::AutodiffError;
use crate::skeleton::SkeletonSequence;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub predictions: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub epochs: Vec<EpochRecord>,
    pub final_test: Option<Evaluation>,
    pub wall_clock_secs: f64,
}

/// Everything needed to continue training: parameters, momentum buffers and
/// the per-epoch history so far.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: ParamSet,
    pub velocity: ParamSet,
    /// Number of completed epochs.
    pub epoch: usize,
    pub history: Vec<EpochRecord>,
}

impl TrainState {
    pub fn new(params: ParamSet) -> Self {
        let velocity = zero_velocity(&params);
        Self {
            params,
            velocity,
            epoch: 0,
            history: Vec::new(),
        }
    }
}

fn shuffle_seed(seed: u64, epoch: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (epoch as u64).wrapping_add(1)
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate() {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

fn label_of(seq: &SkeletonSequence, index: usize) -> Result<u32, TrainError> {
    seq.label.ok_or(TrainError::Unlabeled(index))
}

/// Top-1 accuracy and confusion counts.
pub fn evaluate(
    model: &Model,
    params: &ParamSet,
    data: &[SkeletonSequence],
) -> Result<Evaluation, TrainError> {
    let k = model.spec().classes;
    let mut confusion = vec![vec![0; k]; k];
    let mut predictions = Vec::with_capacity(data.len());
    let mut correct = 0;
    for (i, seq) in data.iter().enumerate() {
        let label = label_of(seq, i)?;
        if label as usize >= k {
            return Err(TrainError::LabelOutOfRange { label, classes: k });
        }
        let out = model.forward(params, seq, None)?;
        let pred = argmax(&out.logits);
        confusion[label as usize][pred] += 1;
        correct += usize::from(pred == label as usize);
        predictions.push(pred);
    }
    Ok(Evaluation {
        accuracy: if data.is_empty() {
            0.0
        } else {
            correct as f64 / data.len() as f64
        },
        confusion,
        predictions,
    })
}

/// Initialises parameters from `config.seed` and trains for `config.epochs`.
pub fn train(
    spec: &ModelSpec,
    train_set: &[SkeletonSequence],
    test_set: Option<&[SkeletonSequence]>,
    config: &TrainConfig,
) -> Result<(TrainState, RunReport), TrainError> {
    let model = Model::build(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let state = TrainState::new(spec.init_params(&mut rng)?);
    train_from(&model, state, train_set, test_set, config, config.epochs)
}

/// Continues from `state` until `until` epochs (capped at `config.epochs`)
/// are complete. The shuffle for each epoch depends only on the seed and the
/// epoch index, so a resumed run replays the uninterrupted one exactly.
pub fn train_from(
    model: &Model,
    mut state: TrainState,
    train_set: &[SkeletonSequence],
    test_set: Option<&[SkeletonSequence]>,
    config: &TrainConfig,
    until: usize,
) -> Result<(TrainState, RunReport), TrainError> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let labels = train_set
        .iter()
        .enumerate()
        .map(|(i, s)| label_of(s, i))
        .collect::<Result<Vec<_>, _>>()?;
    let started = Instant::now();
    let until = until.min(config.epochs);
    let mut final_test = None;
    while state.epoch < until {
        let epoch = state.epoch;
        let lr = config.lr_at(epoch);
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle_seed(
            config.seed,
            epoch,
        )));

        let mut loss_sum = 0.0;
        let mut correct = 0;
        for batch in order.chunks(config.batch_size) {
            let mut grads: Option<ParamSet> = None;
            for &i in batch {
                let diverged = |state: &TrainState| TrainError::DivergenceDetected {
                    epoch,
                    sample: i,
                    state: Box::new(state.clone()),
                };
                let (out, g) = match model.forward_backward(&state.params, &train_set[i], labels[i])
                {
                    Ok(r) => r,
                    Err(TrainError::Autodiff(AutodiffError::NonFiniteIntermediate { .. })) => {
                        return Err(diverged(&state))
                    }
                    Err(e) => return Err(e),
                };
                if !out.loss.is_finite() {
                    return Err(diverged(&state));
                }
                loss_sum += out.loss;
                correct += usize::from(argmax(&out.logits) == labels[i] as usize);
                match grads.as_mut() {
                    None => grads = Some(g),
                    Some(acc) => {
                        for (name, t) in g {
                            acc.get_mut(&name)
                                .expect("same parameter set for every sample")
                                .add_assign(&t);
                        }
                    }
                }
            }
            let mut grads = grads.expect("batches are nonempty");
            let inv = 1.0 / batch.len() as f64;
            for t in grads.values_mut() {
                t.data_mut().iter_mut().for_each(|x| *x *= inv);
            }
            sgd_momentum_step(
                &mut state.params,
                &grads,
                &mut state.velocity,
                lr,
                config.momentum,
            )?;
        }
        state.epoch += 1;
        let is_last = state.epoch == config.epochs;
        let due = config.eval_every > 0 && state.epoch % config.eval_every == 0;
        let mut test_accuracy = None;
        if let Some(test) = test_set {
            if is_last {
                let eval = evaluate(model, &state.params, test)?;
                test_accuracy = Some(eval.accuracy);
                final_test = Some(eval);
            } else if due {
                test_accuracy = Some(evaluate(model, &state.params, test)?.accuracy);
            }
        }
        let record = EpochRecord {
            epoch,
            lr,
            train_loss: loss_sum / train_set.len() as f64,
            train_accuracy: correct as f64 / train_set.len() as f64,
            test_accuracy,
        };
        log::info!(
            "epoch {epoch}: lr {lr} loss {:.4} train acc {:.3}{}",
            record.train_loss,
            record.train_accuracy,
            test_accuracy.map_or(String::new(), |a| format!(" test acc {a:.3}"))
        );
        state.history.push(record);
    }
    if final_test.is_none() && state.epoch == config.epochs {
        if let Some(test) = test_set {
            final_test = Some(evaluate(model, &state.params, test)?);
        }
    }
    let report = RunReport {
        epochs: state.history.clone(),
        final_test,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    };
    Ok((state, report))
}
