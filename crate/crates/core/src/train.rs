//! Supervised training: SGD over threads (batch size one thread) with full
//! backpropagation through the answer sequence, ADADELTA step sizes scaled
//! by a global learning rate, dropout, and early stopping on dev macro-F1.

use std::time::Instant;

use crate::corpus::Thread;
use crate::embedding::{tokenize, Embedder};
use crate::error::{Error, Result};
use crate::lstm::Label;
use crate::metrics::{confusion, macro_metrics, MetricReport};
use crate::model::{
    argmax_label, encode_thread, predict_thread, thread_loss_and_grads, Mode, ModelConfig,
    ModelParams,
};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// RNG stream ids, so one user seed yields independent deterministic streams.
pub const STREAM_INIT: u64 = 1;
pub const STREAM_TRAIN: u64 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Global scale applied to the ADADELTA delta.
    pub learning_rate: f64,
    pub rho: f64,
    pub epsilon: f64,
    /// Dropout rate on the joint representation and the pre-readout hidden
    /// vector; 0 disables.
    pub dropout: f64,
    /// Epochs without dev improvement tolerated before stopping.
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub class_weights: [f64; 3],
    /// Optional global-norm gradient clip.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            rho: 0.95,
            epsilon: 1e-6,
            dropout: 0.5,
            patience: 10,
            max_epochs: 100,
            seed: 42,
            class_weights: [1.0; 3],
            grad_clip: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(Error::Config("rho must be in [0,1)".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must be in [0,1)".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be at least 1".into()));
        }
        if self.class_weights.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(Error::Config("class weights must be non-negative".into()));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::Config("grad_clip must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Per-parameter running averages of squared gradients and squared updates,
/// mirroring the model tensors exactly.
#[derive(Debug)]
pub struct AdadeltaState {
    pub eg2: ModelParams,
    pub edx2: ModelParams,
    pub fault_count: u64,
}

impl AdadeltaState {
    pub fn new(params: &ModelParams) -> AdadeltaState {
        AdadeltaState {
            eg2: params.zeros_like(),
            edx2: params.zeros_like(),
            fault_count: 0,
        }
    }
}

/// One ADADELTA step for a single tensor:
///   Eg2  <- rho Eg2 + (1-rho) g^2
///   dx    = -(sqrt(Edx2+eps)/sqrt(Eg2+eps)) g
///   Edx2 <- rho Edx2 + (1-rho) dx^2
/// The applied delta is lr*dx. Returns None (accumulators untouched) when the
/// gradient holds any non-finite value.
pub fn adadelta_update(
    grad: &Tensor,
    eg2: &mut Tensor,
    edx2: &mut Tensor,
    cfg: &TrainConfig,
) -> Option<Tensor> {
    if !grad.all_finite() {
        return None;
    }
    let rho = cfg.rho;
    let eps = cfg.epsilon;
    let mut delta = grad.zeros_like();
    for i in 0..grad.numel() {
        let g = grad.data()[i];
        let eg = rho * eg2.data()[i] + (1.0 - rho) * g * g;
        eg2.data_mut()[i] = eg;
        let dx = -((edx2.data()[i] + eps).sqrt() / (eg + eps).sqrt()) * g;
        edx2.data_mut()[i] = rho * edx2.data()[i] + (1.0 - rho) * dx * dx;
        delta.data_mut()[i] = cfg.learning_rate * dx;
    }
    Some(delta)
}

/// Applies one optimizer step over every model tensor, in place (same math
/// as `adadelta_update`, fused to one pass per tensor).
pub fn apply_adadelta(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut AdadeltaState,
    cfg: &TrainConfig,
) {
    let grad_tensors = grads.tensors();
    let mut eg2_tensors = state.eg2.tensors_mut();
    let mut edx2_tensors = state.edx2.tensors_mut();
    let mut params_tensors = params.tensors_mut();
    let rho = cfg.rho;
    let eps = cfg.epsilon;
    let lr = cfg.learning_rate;
    for i in 0..grad_tensors.len() {
        let g = grad_tensors[i].1;
        if !g.all_finite() {
            state.fault_count += 1;
            continue;
        }
        let gd = g.data();
        let eg2 = eg2_tensors[i].1.data_mut();
        let edx2 = edx2_tensors[i].1.data_mut();
        let p = params_tensors[i].1.data_mut();
        let n = gd.len();
        for j in 0..n {
            let gv = gd[j];
            let eg = rho * eg2[j] + (1.0 - rho) * gv * gv;
            eg2[j] = eg;
            let dx = -((edx2[j] + eps).sqrt() / (eg + eps).sqrt()) * gv;
            edx2[j] = rho * edx2[j] + (1.0 - rho) * dx * dx;
            p[j] += lr * dx;
        }
    }
}

/// Scales all gradients so their global L2 norm does not exceed `max_norm`.
pub fn clip_gradients(grads: &mut ModelParams, max_norm: f64) {
    let mut sq = 0.0;
    for (_, t) in grads.tensors() {
        for &v in t.data() {
            sq += v * v;
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for (_, t) in grads.tensors_mut() {
            for v in t.data_mut() {
                *v *= scale;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_macro_f1: Option<f64>,
    /// Wall time is diagnostic only and never written into history files.
    pub wall_secs: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub clamp_events: u64,
    pub optimizer_faults: u64,
}

/// Deterministic history serialization (no timestamps).
pub fn history_tsv(history: &TrainHistory) -> String {
    let mut out = String::from("epoch\ttrain_loss\tdev_macro_f1\n");
    for e in &history.epochs {
        let dev = e
            .dev_macro_f1
            .map(|v| format!("{v}"))
            .unwrap_or_else(|| "-".into());
        out.push_str(&format!("{}\t{}\t{}\n", e.epoch, e.train_loss, dev));
    }
    out.push_str(&format!("best_epoch\t{}\n", history.best_epoch));
    out
}

/// A tokenized, gold-labeled thread ready for encoding.
struct PreparedThread {
    qid: String,
    q_tokens: Vec<String>,
    a_tokens: Vec<Vec<String>>,
    gold: Vec<Label>,
}

fn prepare(threads: &[Thread]) -> Vec<PreparedThread> {
    threads
        .iter()
        .filter_map(|t| {
            let mut a_tokens = Vec::new();
            let mut gold = Vec::new();
            for a in &t.answers {
                if let Some(l) = a.gold {
                    a_tokens.push(tokenize(&a.text));
                    gold.push(l);
                }
            }
            if gold.is_empty() {
                None
            } else {
                Some(PreparedThread {
                    qid: t.qid.clone(),
                    q_tokens: tokenize(&t.question),
                    a_tokens,
                    gold,
                })
            }
        })
        .collect()
}

#[derive(Debug)]
pub struct TrainOutcome {
    /// Parameters from the best dev epoch (never the last epoch's, unless it
    /// was the best).
    pub best_params: ModelParams,
    pub history: TrainHistory,
    pub optimizer: AdadeltaState,
    pub rng_state: [u64; 4],
}

/// Runs the full training loop and returns the best-epoch parameters.
///
/// Per epoch: shuffle threads (seeded), then for each thread run the full
/// forward (towers, join, head), the weighted sequence NLL, the full
/// backward, and one ADADELTA update. Dropout applies during training only.
/// Dev macro-F1 decides early stopping; with an empty dev set, negative
/// training loss is the stand-in metric.
pub fn train(
    train_threads: &[Thread],
    dev_threads: &[Thread],
    embedder: &Embedder,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    init: ModelParams,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let prepared = prepare(train_threads);
    if prepared.iter().map(|p| p.gold.len()).sum::<usize>() == 0 {
        return Err(Error::EmptyInput("training corpus has no labeled answers"));
    }
    let dev_prepared = prepare(dev_threads);

    let mut params = init;
    let mut grads = params.zeros_like();
    let mut optimizer = AdadeltaState::new(&params);
    let mut rng = Rng::seed(cfg.seed, STREAM_TRAIN);

    let mut history = TrainHistory::default();
    let mut best_metric = f64::NEG_INFINITY;
    let mut best_epoch = 0usize;
    let mut best_params = params.clone();

    let mut order: Vec<usize> = (0..prepared.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        let start = Instant::now();
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for &ti in &order {
            let t = &prepared[ti];
            let enc = encode_thread(embedder, model_cfg, &t.q_tokens, &t.a_tokens);
            zero_params(&mut grads);
            let report = thread_loss_and_grads(
                &params,
                model_cfg,
                &enc,
                &t.gold,
                &cfg.class_weights,
                Some((cfg.dropout, &mut rng)),
                &mut grads,
            )?;
            if !report.loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    thread: t.qid.clone(),
                });
            }
            history.clamp_events += report.clamped as u64;
            epoch_loss += report.loss;
            if let Some(c) = cfg.grad_clip {
                clip_gradients(&mut grads, c);
            }
            apply_adadelta(&mut params, &grads, &mut optimizer, cfg);
        }

        let dev_f1 = if dev_prepared.is_empty() {
            None
        } else {
            Some(evaluate_prepared(&params, model_cfg, embedder, &dev_prepared)?.macro_f1)
        };
        let metric = dev_f1.unwrap_or(-epoch_loss);

        history.epochs.push(EpochStats {
            epoch,
            train_loss: epoch_loss,
            dev_macro_f1: dev_f1,
            wall_secs: start.elapsed().as_secs_f64(),
        });

        if metric > best_metric {
            best_metric = metric;
            best_epoch = epoch;
            best_params = params.clone();
        }
        if epoch - best_epoch >= cfg.patience {
            break;
        }
    }

    history.best_epoch = best_epoch;
    history.optimizer_faults = optimizer.fault_count;
    Ok(TrainOutcome {
        best_params,
        history,
        optimizer,
        rng_state: rng.state(),
    })
}

/// The ablation: identical pipeline with the per-answer affine head instead
/// of the LSTM. `init` must have been built with `Mode::CnnOnly`.
pub fn train_cnn_only(
    train_threads: &[Thread],
    dev_threads: &[Thread],
    embedder: &Embedder,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    init: ModelParams,
) -> Result<TrainOutcome> {
    if init.mode() != Mode::CnnOnly || model_cfg.mode != Mode::CnnOnly {
        return Err(Error::Config(
            "train_cnn_only requires mode cnn".into(),
        ));
    }
    train(train_threads, dev_threads, embedder, model_cfg, cfg, init)
}

fn zero_params(p: &mut ModelParams) {
    for (_, t) in p.tensors_mut() {
        t.fill(0.0);
    }
}

fn evaluate_prepared(
    params: &ModelParams,
    model_cfg: &ModelConfig,
    embedder: &Embedder,
    threads: &[PreparedThread],
) -> Result<MetricReport> {
    let mut preds = Vec::new();
    let mut golds = Vec::new();
    for t in threads {
        let enc = encode_thread(embedder, model_cfg, &t.q_tokens, &t.a_tokens);
        let dists = predict_thread(params, model_cfg, &enc)?;
        for (d, &g) in dists.iter().zip(t.gold.iter()) {
            preds.push(argmax_label(d));
            golds.push(g);
        }
    }
    macro_metrics(&confusion(&preds, &golds)?)
}

/// Scores a labeled corpus with frozen parameters (no dropout).
pub fn evaluate_threads(
    params: &ModelParams,
    model_cfg: &ModelConfig,
    embedder: &Embedder,
    threads: &[Thread],
) -> Result<MetricReport> {
    let prepared = prepare(threads);
    if prepared.is_empty() {
        return Err(Error::EmptyInput("no labeled answers to evaluate"));
    }
    evaluate_prepared(params, model_cfg, embedder, &prepared)
}

/// One prediction row: thread id, answer id, predicted label, distribution.
pub type Prediction = (String, String, Label, Vec<f64>);

/// Per-answer predictions for a corpus (gold labels not required).
pub fn predict_corpus(
    params: &ModelParams,
    model_cfg: &ModelConfig,
    embedder: &Embedder,
    threads: &[Thread],
) -> Result<Vec<Prediction>> {
    let mut out = Vec::new();
    for t in threads {
        if t.answers.is_empty() {
            continue;
        }
        let q_tokens = tokenize(&t.question);
        let a_tokens: Vec<Vec<String>> = t.answers.iter().map(|a| tokenize(&a.text)).collect();
        let enc = encode_thread(embedder, model_cfg, &q_tokens, &a_tokens);
        let dists = predict_thread(params, model_cfg, &enc)?;
        for (a, d) in t.answers.iter().zip(dists) {
            out.push((t.qid.clone(), a.id.clone(), argmax_label(&d), d));
        }
    }
    Ok(out)
}

/// Fraction of labeled answers predicted correctly.
pub fn training_accuracy(
    params: &ModelParams,
    model_cfg: &ModelConfig,
    embedder: &Embedder,
    threads: &[Thread],
) -> Result<f64> {
    let prepared = prepare(threads);
    let mut correct = 0usize;
    let mut total = 0usize;
    for t in &prepared {
        let enc = encode_thread(embedder, model_cfg, &t.q_tokens, &t.a_tokens);
        let dists = predict_thread(params, model_cfg, &enc)?;
        for (d, &g) in dists.iter().zip(t.gold.iter()) {
            if argmax_label(d) == g {
                correct += 1;
            }
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::EmptyInput("no labeled answers"));
    }
    Ok(correct as f64 / total as f64)
}
