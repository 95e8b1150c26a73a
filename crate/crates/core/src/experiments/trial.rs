use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ArmSpec, ExperimentConfig, Framework, PreparedData};
use crate::corpus::{build_vocab, compute_stats, undersample_indices, LabeledCorpus, Vocabulary};
use crate::error::{Error, Result};
use crate::losses::{compute_class_weights, SequenceLoss};
use crate::metrics::{evaluate, spans_to_bio, MetricsReport, Span};
use crate::model::{
    adam_step, backward_into, forward, forward_cached, init_params, predict_labels, AdamConfig, AdamState, ModelConfig,
    ModelParameters, OutputKind, PredictionMatrix,
};
use crate::mrc::{convert_bio_to_mrc, decode_spans, mrc_forward, mrc_forward_cached, MrcExample, MrcLoss};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub arm: String,
    pub seed: u64,
    pub fraction: f64,
    pub n_train: usize,
    /// Mean training loss of each epoch.
    pub loss_trace: Vec<f64>,
    pub val: MetricsReport,
    pub test: MetricsReport,
}

/// A fitted model with what is needed to apply it to new text.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub framework: Framework,
    pub params: ModelParameters,
    pub vocab: Vocabulary,
    pub threshold: f64,
    pub loss_trace: Vec<f64>,
}

/// Seed of the training subsample for `(seed, fraction)`; arms share it.
pub fn sample_seed(seed: u64, fraction: f64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ fraction.to_bits()
}

fn sampled_train(data: &PreparedData, seed: u64, fraction: f64) -> Result<LabeledCorpus> {
    if fraction == 1.0 {
        return Ok(data.train.clone());
    }
    let idx = undersample_indices(data.train.len(), fraction, sample_seed(seed, fraction))?;
    if idx.is_empty() {
        return Err(Error::Empty("undersampled train split"));
    }
    Ok(data.train.select(&idx))
}

fn model_config(cfg: &ExperimentConfig, train: &LabeledCorpus, vocab: &Vocabulary, seed: u64) -> ModelConfig {
    let scheme = train.scheme();
    let m = &cfg.model;
    let (n_classes, n_queries, output) = match cfg.framework {
        Framework::Sequence => (scheme.len(), 0, OutputKind::Softmax),
        Framework::Mrc => (2, scheme.categories().len().max(1), OutputKind::Sigmoid),
    };
    ModelConfig {
        vocab_size: vocab.len(),
        embed_dim: m.embed_dim,
        context_radius: m.context_radius,
        hidden_dim: m.hidden_dim,
        n_classes,
        max_len: m.max_len,
        init_scale: m.init_scale,
        seed,
        n_queries,
        output,
    }
}

/// Trains one arm with one seed on `train` for the configured epochs.
pub fn train_model(cfg: &ExperimentConfig, train: &LabeledCorpus, arm: &ArmSpec, seed: u64) -> Result<TrainedModel> {
    let vocab = build_vocab(train, cfg.training.min_frequency);
    let mut params = init_params(&model_config(cfg, train, &vocab, seed))?;
    let adam = AdamConfig {
        learning_rate: cfg.training.learning_rate,
        ..AdamConfig::default()
    };
    let mut state = AdamState::new(&params, adam);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);

    let loss_trace = match cfg.framework {
        Framework::Sequence => {
            let loss_cfg = arm.loss_config();
            let weights = if arm.loss.is_weighted() {
                Some(compute_class_weights(&compute_stats(train)?, arm.loss, arm.beta)?)
            } else {
                None
            };
            let loss = SequenceLoss::new(loss_cfg, train.scheme().majority(), weights)?;
            let items: Vec<(Vec<usize>, &[usize])> = train
                .sentences()
                .iter()
                .map(|s| (vocab.encode(s), s.labels()))
                .collect();
            run_epochs(
                cfg,
                &mut params,
                &mut state,
                &mut rng,
                items.len(),
                |params, i, grads| {
                    let (ids, labels) = &items[i];
                    let cache = forward_cached(params, ids, None)?;
                    let probs = PredictionMatrix::new(params.config().n_classes, cache.outputs.clone())?;
                    let (l, dlogits) = loss.logit_gradient(labels, &probs)?;
                    backward_into(params, &cache, &dlogits, grads)?;
                    Ok(l)
                },
            )?
        }
        Framework::Mrc => {
            let loss = MrcLoss::new(arm.loss_config())?;
            let examples = convert_bio_to_mrc(train)?;
            let ids: Vec<Vec<usize>> = train.sentences().iter().map(|s| vocab.encode(s)).collect();
            run_epochs(
                cfg,
                &mut params,
                &mut state,
                &mut rng,
                examples.len(),
                |params, i, grads| {
                    let ex: &MrcExample = &examples[i];
                    let cache = mrc_forward_cached(params, &ids[ex.sentence], ex.category)?;
                    let (l, dlogits) = loss.logit_gradient(ex, &cache.outputs)?;
                    backward_into(params, &cache, &dlogits, grads)?;
                    Ok(l)
                },
            )?
        }
    };
    Ok(TrainedModel {
        framework: cfg.framework,
        params,
        vocab,
        threshold: cfg.training.threshold,
        loss_trace,
    })
}

fn run_epochs<F>(
    cfg: &ExperimentConfig,
    params: &mut ModelParameters,
    state: &mut AdamState,
    rng: &mut ChaCha8Rng,
    n_items: usize,
    mut step: F,
) -> Result<Vec<f64>>
where
    F: FnMut(&ModelParameters, usize, &mut ModelParameters) -> Result<f64>,
{
    let mut order: Vec<usize> = (0..n_items).collect();
    let mut trace = Vec::with_capacity(cfg.training.epochs);
    let mut grads = params.zeros_like();
    for _ in 0..cfg.training.epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.training.batch_size) {
            grads.scale(0.0);
            for &i in batch {
                total += step(params, i, &mut grads)?;
            }
            grads.scale(1.0 / batch.len() as f64);
            adam_step(params, &grads, state)?;
        }
        trace.push(total / n_items as f64);
    }
    Ok(trace)
}

impl TrainedModel {
    /// Predicted label indices for every sentence of `corpus`.
    pub fn predict(&self, corpus: &LabeledCorpus) -> Result<Vec<Vec<usize>>> {
        let scheme = corpus.scheme();
        corpus
            .sentences()
            .iter()
            .map(|s| {
                let ids = self.vocab.encode(s);
                match self.framework {
                    Framework::Sequence => Ok(predict_labels(&forward(&self.params, &ids)?)),
                    Framework::Mrc => {
                        let mut spans: Vec<Span> = Vec::new();
                        for cat in 0..scheme.categories().len() {
                            let out = mrc_forward(&self.params, &ids, cat)?;
                            let found = decode_spans(&out.start, &out.end, self.threshold, cat)?;
                            spans.extend(found.iter().map(|p| p.span()));
                        }
                        spans.sort_by_key(|s| (s.start, s.end, s.category));
                        Ok(spans_to_bio(&spans, s.len(), scheme))
                    }
                }
            })
            .collect()
    }

    pub fn evaluate(&self, corpus: &LabeledCorpus) -> Result<MetricsReport> {
        evaluate(corpus, &self.predict(corpus)?)
    }
}

/// Trains on the `(seed, fraction)` subsample of the train split and
/// evaluates on validation and test.
pub fn run_trial(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    arm: &ArmSpec,
    seed: u64,
    fraction: f64,
) -> Result<TrialResult> {
    let wrap = |e: Error| Error::Trial {
        arm: arm.name.clone(),
        seed,
        fraction,
        source: Box::new(e),
    };
    let train = sampled_train(data, seed, fraction).map_err(wrap)?;
    let model = train_model(cfg, &train, arm, seed).map_err(wrap)?;
    log::debug!(
        "arm `{}` seed {seed} fraction {fraction}: final loss {:?}",
        arm.name,
        model.loss_trace.last()
    );
    Ok(TrialResult {
        arm: arm.name.clone(),
        seed,
        fraction,
        n_train: train.len(),
        val: model.evaluate(&data.val).map_err(wrap)?,
        test: model.evaluate(&data.test).map_err(wrap)?,
        loss_trace: model.loss_trace,
    })
}
