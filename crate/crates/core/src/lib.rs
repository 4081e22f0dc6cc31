//! Answer-sequence labeling for community question answering.
//!
//! A question and each of its answers are encoded by two convolutional
//! sentence towers, fused into a joint representation per question-answer
//! pair, and labeled Good / Bad / Potential by a peephole LSTM running over
//! the thread's answers in order (or by a per-answer softmax in the
//! CNN-only ablation). Everything is plain f64 on the CPU with hand-written
//! gradients, verified by finite differences.

pub mod checkpoint;
pub mod corpus;
pub mod embedding;
pub mod error;
pub mod gradcheck;
pub mod join;
pub mod lstm;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod rng;
pub mod tensor;
pub mod tower;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use corpus::{dataset_stats, map_label, parse_semeval_xml, CorpusStats, Thread};
pub use embedding::{encode_sentence, load_embeddings, tokenize, Embedder, EmbeddingSource};
pub use error::{Error, Result};
pub use gradcheck::{grad_check, GradCheckReport};
pub use lstm::{label_sequence, lstm_step, sequence_nll, Label, LstmParams, LstmState};
pub use metrics::{confusion, emit_report, macro_metrics, reference_scores, MetricReport};
pub use model::{apply_dropout, predict_thread, Mode, ModelConfig, ModelParams};
pub use ops::{activate, conv2d, pool2d, softmax, Activation};
pub use rng::Rng;
pub use tensor::Tensor;
pub use train::{
    adadelta_update, evaluate_threads, predict_corpus, train, train_cnn_only, AdadeltaState,
    TrainConfig, TrainHistory,
};
