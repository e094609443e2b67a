use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::assemble::SequenceInput;
use super::config::ModelConfig;
use super::model::{mse_loss, Classifier};
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::io::{Item, LabeledSample, Record};
use crate::nn::{adam_step, AdamConfig, AdamState};
use crate::packing::Vocab;
use crate::rng;
use crate::scalar::Scalar;
use crate::synthgen::QualityLabel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// `total_steps` is derived from the data and ignored here.
    pub optimizer: AdamConfig,
    pub vocab_min_freq: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 8,
            optimizer: AdamConfig::default(),
            vocab_min_freq: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: u64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub val_macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were returned.
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub best_val_macro_f1: f64,
    pub train_size: usize,
    pub val_size: usize,
    pub total_steps: u64,
}

pub fn record_texts(record: &Record) -> Vec<&str> {
    match record {
        Record::Caption(c) => vec![c.text.as_str()],
        Record::Interleaved(d) => d
            .items
            .iter()
            .filter_map(|i| match i {
                Item::Text { text } => Some(text.as_str()),
                Item::Image { .. } => None,
            })
            .collect(),
    }
}

/// Vocabulary over every text of the training split.
pub fn build_vocab(samples: &[LabeledSample], min_freq: usize) -> Vocab {
    Vocab::build(samples.iter().flat_map(|s| record_texts(&s.record)), min_freq)
}

fn prepare_all<S: Scalar>(model: &Classifier<S>, samples: &[LabeledSample]) -> Result<Vec<SequenceInput<S>>> {
    samples
        .iter()
        .map(|s| {
            model
                .prepare(&s.record)
                .map_err(|e| Error::invalid(format!("{}: {e}", s.id())))
        })
        .collect()
}

/// Builds the vocabulary from `train_set`, initializes a classifier and trains it.
pub fn fit<S: Scalar>(
    mut config: ModelConfig,
    train_set: &[LabeledSample],
    val_set: &[LabeledSample],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(Classifier<S>, TrainHistory)> {
    let vocab = build_vocab(train_set, cfg.vocab_min_freq);
    config.vocab_size = vocab.len();
    let model = Classifier::new(config, vocab, seed)?;
    train(model, train_set, val_set, cfg, seed)
}

/// Minibatch MSE training. Returns the parameters of the epoch with the best
/// validation accuracy, ties broken by validation loss.
pub fn train<S: Scalar>(
    mut model: Classifier<S>,
    train_set: &[LabeledSample],
    val_set: &[LabeledSample],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(Classifier<S>, TrainHistory)> {
    if train_set.is_empty() {
        return Err(Error::invalid("empty split: training set"));
    }
    if val_set.is_empty() {
        return Err(Error::invalid("empty split: validation set"));
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(Error::Config("epochs and batch_size must be positive".into()));
    }
    let train_inputs = prepare_all(&model, train_set)?;
    let val_inputs = prepare_all(&model, val_set)?;
    let train_labels: Vec<u8> = train_set.iter().map(|s| s.label.value()).collect();
    let val_labels: Vec<QualityLabel> = val_set.iter().map(|s| s.label).collect();

    let steps_per_epoch = train_set.len().div_ceil(cfg.batch_size) as u64;
    let total_steps = steps_per_epoch * cfg.epochs as u64;
    let opt = AdamConfig {
        total_steps,
        ..cfg.optimizer.clone()
    };
    opt.validate()?;
    let mut state = AdamState::new(&model.params, opt);

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, f64, f64, _)> = None;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng::stream(seed, "train-shuffle", epoch as u64));
        let mut loss_sum = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let inputs: Vec<&SequenceInput<S>> = chunk.iter().map(|&i| &train_inputs[i]).collect();
            let labels: Vec<u8> = chunk.iter().map(|&i| train_labels[i]).collect();
            let (loss, grads) = model.loss_and_grad(&inputs, &labels)?;
            let loss = loss.as_f64();
            if !loss.is_finite() {
                let ids: Vec<&str> = chunk.iter().map(|&i| train_set[i].id()).collect();
                return Err(Error::NonFinite(format!(
                    "loss {loss} at epoch {epoch}, batch {b}, step {}; batch ids {ids:?}",
                    state.step + 1
                )));
            }
            loss_sum += loss * chunk.len() as f64;
            adam_step(&mut model.params, &grads, &mut state)?;
        }
        let (val_loss, report) = validate(&model, &val_inputs, &val_labels)?;
        let rec = EpochRecord {
            epoch,
            steps: state.step,
            train_loss: loss_sum / train_set.len() as f64,
            val_loss,
            val_accuracy: report.accuracy,
            val_macro_f1: report.macro_f1,
        };
        log::info!(
            "epoch {epoch}: train_loss {:.4} val_loss {:.4} val_acc {:.4} val_f1 {:.4}",
            rec.train_loss,
            rec.val_loss,
            rec.val_accuracy,
            rec.val_macro_f1
        );
        // accuracy first; ties go to the lower validation loss
        let better = best.as_ref().is_none_or(|b| {
            rec.val_accuracy > b.1 || (rec.val_accuracy == b.1 && rec.val_loss < b.3)
        });
        if better {
            best = Some((epoch, rec.val_accuracy, rec.val_macro_f1, rec.val_loss, model.params.clone()));
        }
        history.push(rec);
    }
    let (best_epoch, best_val_accuracy, best_val_macro_f1, _, params) = best.expect("at least one epoch");
    model.params = params;
    Ok((
        model,
        TrainHistory {
            epochs: history,
            best_epoch,
            best_val_accuracy,
            best_val_macro_f1,
            train_size: train_set.len(),
            val_size: val_set.len(),
            total_steps,
        },
    ))
}

const EVAL_BATCH: usize = 32;

fn validate<S: Scalar>(
    model: &Classifier<S>,
    inputs: &[SequenceInput<S>],
    labels: &[QualityLabel],
) -> Result<(f64, crate::eval::EvalReport)> {
    let mut preds = Vec::with_capacity(inputs.len());
    for chunk in inputs.chunks(EVAL_BATCH) {
        let refs: Vec<&SequenceInput<S>> = chunk.iter().collect();
        preds.extend(model.score_batch(&refs)?.into_iter().map(|s| s.as_f64()));
    }
    let mut loss = 0.0;
    for (&p, l) in preds.iter().zip(labels) {
        loss += mse_loss(p, l.value())?.0;
    }
    Ok((loss / preds.len() as f64, evaluate(&preds, labels)?))
}
