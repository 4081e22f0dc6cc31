//! The full model: two convolutional sentence towers, the joint layer, and
//! either the LSTM sequence head or a per-answer affine head (the ablation
//! without recurrence). Holds the thread-level forward/backward used by
//! training, inference, and gradient checking.

use crate::embedding::{encode_sentence_fixed, Embedder};
use crate::error::{Error, Result};
use crate::join::{join, join_backward, JoinParams};
use crate::lstm::{
    label_sequence, lstm_step_backward, lstm_step_cached, nll_logit_grad, output_backward,
    output_logits, sequence_nll, Label, LstmParams, LstmState, NUM_CLASSES,
};
use crate::ops::{softmax, Activation};
use crate::rng::Rng;
use crate::tensor::{matvec, matvec_t_acc, outer_acc, Tensor};
use crate::tower::{tower_backward, tower_forward, ConvLayerSpec, TowerParams};

/// Whether answers are labeled through the LSTM over the sequence or
/// independently from each joint representation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Rcnn,
    CnnOnly,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Rcnn => "rcnn",
            Mode::CnnOnly => "cnn",
        }
    }

    pub fn parse(s: &str) -> Result<Mode> {
        match s {
            "rcnn" => Ok(Mode::Rcnn),
            "cnn" | "cnn_only" => Ok(Mode::CnnOnly),
            other => Err(Error::Config(format!("unknown mode '{other}'"))),
        }
    }
}

/// All architecture dimensions. The defaults are the reference configuration;
/// `reduced()` is the small configuration used by gradient checking.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub window: usize,
    pub max_len: usize,
    pub sentence_dim: usize,
    pub joint_dim: usize,
    pub hidden: usize,
    pub layer_specs: Vec<ConvLayerSpec>,
    pub mode: Mode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embed_dim: 50,
            window: 2,
            max_len: 50,
            sentence_dim: 100,
            joint_dim: 200,
            hidden: 360,
            layer_specs: crate::tower::default_layer_specs(100),
            mode: Mode::Rcnn,
        }
    }
}

impl ModelConfig {
    /// Small dims for exhaustive finite-difference checks. The pool windows
    /// differ from the default stack so the tiny grid survives all three
    /// layers; every window kind (1x1/2x2 conv, 1x1/2x2 pool) is still
    /// exercised.
    pub fn reduced() -> Self {
        ModelConfig {
            embed_dim: 6,
            window: 2,
            max_len: 8,
            sentence_dim: 8,
            joint_dim: 10,
            hidden: 6,
            layer_specs: vec![
                ConvLayerSpec::new((1, 1), (1, 1), 2),
                ConvLayerSpec::new((2, 2), (2, 2), 2),
                ConvLayerSpec::new((2, 2), (1, 1), 2),
            ],
            mode: Mode::Rcnn,
        }
    }

    /// Grid shape every sentence is padded/truncated to.
    pub fn grid_shape(&self) -> (usize, usize) {
        (self.max_len - self.window + 1, self.window * self.embed_dim)
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }
}

/// Head on top of the joint representations.
#[derive(Debug, Clone, PartialEq)]
pub enum HeadParams {
    Lstm(LstmParams),
    /// Per-answer affine + softmax on p_t; no cross-answer state.
    Affine { w: Tensor, b: Tensor },
}

/// Every trainable tensor in the model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub q_tower: TowerParams,
    pub a_tower: TowerParams,
    pub join: JoinParams,
    pub head: HeadParams,
}

impl ModelParams {
    /// Seeded initialization. The two towers are independent (untied).
    pub fn init(cfg: &ModelConfig, rng: &mut Rng) -> Result<ModelParams> {
        let grid = cfg.grid_shape();
        let q_tower = TowerParams::init(grid, &cfg.layer_specs, cfg.sentence_dim, rng)?;
        let a_tower = TowerParams::init(grid, &cfg.layer_specs, cfg.sentence_dim, rng)?;
        let join = JoinParams::init(cfg.sentence_dim, cfg.joint_dim, rng);
        let head = match cfg.mode {
            Mode::Rcnn => HeadParams::Lstm(LstmParams::init(cfg.joint_dim, cfg.hidden, rng)),
            Mode::CnnOnly => HeadParams::Affine {
                w: Tensor::glorot(&[NUM_CLASSES, cfg.joint_dim], cfg.joint_dim, NUM_CLASSES, rng),
                b: Tensor::zeros(&[NUM_CLASSES]),
            },
        };
        Ok(ModelParams {
            q_tower,
            a_tower,
            join,
            head,
        })
    }

    pub fn mode(&self) -> Mode {
        match self.head {
            HeadParams::Lstm(_) => Mode::Rcnn,
            HeadParams::Affine { .. } => Mode::CnnOnly,
        }
    }

    pub fn zeros_like(&self) -> ModelParams {
        ModelParams {
            q_tower: self.q_tower.zeros_like(),
            a_tower: self.a_tower.zeros_like(),
            join: self.join.zeros_like(),
            head: match &self.head {
                HeadParams::Lstm(p) => HeadParams::Lstm(p.zeros_like()),
                HeadParams::Affine { w, b } => HeadParams::Affine {
                    w: w.zeros_like(),
                    b: b.zeros_like(),
                },
            },
        }
    }

    /// Named tensors in a fixed order shared by the optimizer, the gradient
    /// checker, and the checkpoint format.
    pub fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = Vec::new();
        for (prefix, tower) in [("q_tower", &self.q_tower), ("a_tower", &self.a_tower)] {
            for (i, k) in tower.kernels.iter().enumerate() {
                out.push((format!("{prefix}.conv{}.kernels", i + 1), k));
            }
            for (i, b) in tower.biases.iter().enumerate() {
                out.push((format!("{prefix}.conv{}.bias", i + 1), b));
            }
            out.push((format!("{prefix}.proj.w"), &tower.proj_w));
            out.push((format!("{prefix}.proj.b"), &tower.proj_b));
        }
        out.push(("join.w".into(), &self.join.w));
        out.push(("join.b".into(), &self.join.b));
        match &self.head {
            HeadParams::Lstm(p) => {
                out.push(("lstm.w_xi".into(), &p.w_xi));
                out.push(("lstm.w_xf".into(), &p.w_xf));
                out.push(("lstm.w_xc".into(), &p.w_xc));
                out.push(("lstm.w_xo".into(), &p.w_xo));
                out.push(("lstm.w_hi".into(), &p.w_hi));
                out.push(("lstm.w_hf".into(), &p.w_hf));
                out.push(("lstm.w_hc".into(), &p.w_hc));
                out.push(("lstm.w_ho".into(), &p.w_ho));
                out.push(("lstm.peep_ci".into(), &p.w_ci));
                out.push(("lstm.peep_cf".into(), &p.w_cf));
                out.push(("lstm.peep_co".into(), &p.w_co));
                out.push(("lstm.b_i".into(), &p.b_i));
                out.push(("lstm.b_f".into(), &p.b_f));
                out.push(("lstm.b_c".into(), &p.b_c));
                out.push(("lstm.b_o".into(), &p.b_o));
                out.push(("output.w".into(), &p.w_y));
                out.push(("output.b".into(), &p.b_y));
            }
            HeadParams::Affine { w, b } => {
                out.push(("output.w".into(), w));
                out.push(("output.b".into(), b));
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = Vec::new();
        for (prefix, tower) in [
            ("q_tower", &mut self.q_tower),
            ("a_tower", &mut self.a_tower),
        ] {
            for (i, k) in tower.kernels.iter_mut().enumerate() {
                out.push((format!("{prefix}.conv{}.kernels", i + 1), k));
            }
            for (i, b) in tower.biases.iter_mut().enumerate() {
                out.push((format!("{prefix}.conv{}.bias", i + 1), b));
            }
            out.push((format!("{prefix}.proj.w"), &mut tower.proj_w));
            out.push((format!("{prefix}.proj.b"), &mut tower.proj_b));
        }
        out.push(("join.w".into(), &mut self.join.w));
        out.push(("join.b".into(), &mut self.join.b));
        match &mut self.head {
            HeadParams::Lstm(p) => {
                out.push(("lstm.w_xi".into(), &mut p.w_xi));
                out.push(("lstm.w_xf".into(), &mut p.w_xf));
                out.push(("lstm.w_xc".into(), &mut p.w_xc));
                out.push(("lstm.w_xo".into(), &mut p.w_xo));
                out.push(("lstm.w_hi".into(), &mut p.w_hi));
                out.push(("lstm.w_hf".into(), &mut p.w_hf));
                out.push(("lstm.w_hc".into(), &mut p.w_hc));
                out.push(("lstm.w_ho".into(), &mut p.w_ho));
                out.push(("lstm.peep_ci".into(), &mut p.w_ci));
                out.push(("lstm.peep_cf".into(), &mut p.w_cf));
                out.push(("lstm.peep_co".into(), &mut p.w_co));
                out.push(("lstm.b_i".into(), &mut p.b_i));
                out.push(("lstm.b_f".into(), &mut p.b_f));
                out.push(("lstm.b_c".into(), &mut p.b_c));
                out.push(("lstm.b_o".into(), &mut p.b_o));
                out.push(("output.w".into(), &mut p.w_y));
                out.push(("output.b".into(), &mut p.b_y));
            }
            HeadParams::Affine { w, b } => {
                out.push(("output.w".into(), w));
                out.push(("output.b".into(), b));
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.all_finite())
    }
}

/// A thread's sentences encoded to fixed-shape grids.
pub struct EncodedThread {
    pub q_grid: Tensor,
    pub a_grids: Vec<Tensor>,
}

pub fn encode_thread(
    embedder: &Embedder,
    cfg: &ModelConfig,
    q_tokens: &[String],
    a_tokens: &[Vec<String>],
) -> EncodedThread {
    let q_grid = encode_sentence_fixed(embedder, q_tokens, cfg.window, cfg.max_len).matrix;
    let a_grids = a_tokens
        .iter()
        .map(|t| encode_sentence_fixed(embedder, t, cfg.window, cfg.max_len).matrix)
        .collect();
    EncodedThread { q_grid, a_grids }
}

/// Inverted dropout: zero each entry with probability `rate`, scale survivors
/// by 1/(1-rate). Returns (masked vector, mask). Identity at rate 0.
pub fn apply_dropout(v: &[f64], rate: f64, rng: &mut Rng) -> (Vec<f64>, Vec<f64>) {
    assert!((0.0..1.0).contains(&rate), "dropout rate must be in [0,1)");
    if rate == 0.0 {
        return (v.to_vec(), vec![1.0; v.len()]);
    }
    let keep = 1.0 / (1.0 - rate);
    let mask: Vec<f64> = v
        .iter()
        .map(|_| if rng.next_f64() < rate { 0.0 } else { keep })
        .collect();
    let masked = v.iter().zip(mask.iter()).map(|(x, m)| x * m).collect();
    (masked, mask)
}

const TOWER_ACT: Activation = Activation::Relu;
const JOIN_ACT: Activation = Activation::Relu;

/// Per-answer class distributions for one thread, no dropout. Pure.
pub fn predict_thread(
    params: &ModelParams,
    cfg: &ModelConfig,
    enc: &EncodedThread,
) -> Result<Vec<Vec<f64>>> {
    if enc.a_grids.is_empty() {
        return Err(Error::EmptyInput("thread with no answers"));
    }
    let q_cache = tower_forward(&enc.q_grid, &params.q_tower, &cfg.layer_specs, TOWER_ACT)?;
    let mut joints = Vec::with_capacity(enc.a_grids.len());
    for a_grid in &enc.a_grids {
        let a_cache = tower_forward(a_grid, &params.a_tower, &cfg.layer_specs, TOWER_ACT)?;
        let jc = join(&q_cache.rep, &a_cache.rep, &params.join, JOIN_ACT)?;
        joints.push(jc.joint);
    }
    match &params.head {
        HeadParams::Lstm(lstm) => label_sequence(&joints, lstm),
        HeadParams::Affine { w, b } => joints
            .iter()
            .map(|p| {
                let mut logits = b.data().to_vec();
                let mut wx = vec![0.0; NUM_CLASSES];
                matvec(w, p, &mut wx);
                for (l, x) in logits.iter_mut().zip(wx.iter()) {
                    *l += x;
                }
                softmax(&logits)
            })
            .collect(),
    }
}

/// Argmax label per answer (first index wins ties).
pub fn argmax_label(dist: &[f64]) -> Label {
    let mut best = 0usize;
    for k in 1..dist.len() {
        if dist[k] > dist[best] {
            best = k;
        }
    }
    Label::from_index(best)
}

pub struct ThreadLossReport {
    pub loss: f64,
    pub clamped: usize,
}

/// Forward-only weighted NLL of a thread, no dropout. Used by evaluation and
/// as the deterministic loss function under finite differences.
pub fn thread_loss(
    params: &ModelParams,
    cfg: &ModelConfig,
    enc: &EncodedThread,
    gold: &[Label],
    class_weights: &[f64; 3],
) -> Result<f64> {
    let dists = predict_thread(params, cfg, enc)?;
    let (loss, _) = sequence_nll(&dists, gold, class_weights)?;
    Ok(loss)
}

/// Full forward + backward over one thread, accumulating parameter gradients
/// into `grads`. Dropout (when `dropout` is Some) is applied to each joint
/// representation before the head and, in LSTM mode, to the hidden vector
/// feeding the readout; the recurrent path stays unmasked.
pub fn thread_loss_and_grads(
    params: &ModelParams,
    cfg: &ModelConfig,
    enc: &EncodedThread,
    gold: &[Label],
    class_weights: &[f64; 3],
    mut dropout: Option<(f64, &mut Rng)>,
    grads: &mut ModelParams,
) -> Result<ThreadLossReport> {
    let n = enc.a_grids.len();
    if n == 0 {
        return Err(Error::EmptyInput("thread with no answers"));
    }
    if gold.len() != n {
        return Err(Error::ShapeMismatch {
            context: "thread_loss_and_grads".into(),
            expected: format!("{n} gold labels"),
            got: format!("{}", gold.len()),
        });
    }

    let draw = |v: &[f64], dropout: &mut Option<(f64, &mut Rng)>| -> (Vec<f64>, Vec<f64>) {
        match dropout {
            Some((rate, rng)) if *rate > 0.0 => apply_dropout(v, *rate, rng),
            _ => (v.to_vec(), vec![1.0; v.len()]),
        }
    };

    // Forward. The question tower runs once; its representation is shared by
    // every answer and its gradient accumulates over all of them.
    let q_cache = tower_forward(&enc.q_grid, &params.q_tower, &cfg.layer_specs, TOWER_ACT)?;
    let mut a_caches = Vec::with_capacity(n);
    let mut join_caches = Vec::with_capacity(n);
    let mut p_masked = Vec::with_capacity(n);
    let mut p_masks = Vec::with_capacity(n);
    for a_grid in &enc.a_grids {
        let a_cache = tower_forward(a_grid, &params.a_tower, &cfg.layer_specs, TOWER_ACT)?;
        let jc = join(&q_cache.rep, &a_cache.rep, &params.join, JOIN_ACT)?;
        let (masked, mask) = draw(&jc.joint, &mut dropout);
        a_caches.push(a_cache);
        join_caches.push(jc);
        p_masked.push(masked);
        p_masks.push(mask);
    }

    let mut probs = Vec::with_capacity(n);
    let mut loss_report;
    let mut d_q_rep = vec![0.0; cfg.sentence_dim];

    match &params.head {
        HeadParams::Lstm(lstm) => {
            let mut state = LstmState::zero(cfg.hidden);
            let mut step_caches = Vec::with_capacity(n);
            let mut h_masked = Vec::with_capacity(n);
            let mut h_masks = Vec::with_capacity(n);
            for p in &p_masked {
                let cache = lstm_step_cached(p, &state, lstm)?;
                state = cache.state();
                let (hm, mask) = draw(&cache.h, &mut dropout);
                probs.push(softmax(&output_logits(&hm, lstm))?);
                h_masked.push(hm);
                h_masks.push(mask);
                step_caches.push(cache);
            }
            let (loss, clamped) = sequence_nll(&probs, gold, class_weights)?;
            loss_report = ThreadLossReport { loss, clamped };

            let lstm_grads = match &mut grads.head {
                HeadParams::Lstm(g) => g,
                _ => unreachable!("gradient head mode mismatch"),
            };
            let hidden = cfg.hidden;
            let mut dh_next = vec![0.0; hidden];
            let mut dc_next = vec![0.0; hidden];
            for t in (0..n).rev() {
                let d_logits = nll_logit_grad(&probs[t], gold[t], class_weights[gold[t].index()]);
                let dh_m = output_backward(lstm, &h_masked[t], &d_logits, lstm_grads);
                let mut dh = dh_next.clone();
                for r in 0..hidden {
                    dh[r] += dh_m[r] * h_masks[t][r];
                }
                let (d_p_m, dh_prev, dc_prev) =
                    lstm_step_backward(lstm, &step_caches[t], &dh, &dc_next, lstm_grads);
                dh_next = dh_prev;
                dc_next = dc_prev;
                let d_p: Vec<f64> = d_p_m
                    .iter()
                    .zip(p_masks[t].iter())
                    .map(|(d, m)| d * m)
                    .collect();
                let (dq, da) =
                    join_backward(&params.join, &join_caches[t], &d_p, JOIN_ACT, &mut grads.join);
                for (acc, d) in d_q_rep.iter_mut().zip(dq.iter()) {
                    *acc += d;
                }
                tower_backward(
                    &params.a_tower,
                    &cfg.layer_specs,
                    &a_caches[t],
                    &da,
                    TOWER_ACT,
                    &mut grads.a_tower,
                );
            }
        }
        HeadParams::Affine { w, b } => {
            for p in &p_masked {
                let mut logits = b.data().to_vec();
                let mut wx = vec![0.0; NUM_CLASSES];
                matvec(w, p, &mut wx);
                for (l, x) in logits.iter_mut().zip(wx.iter()) {
                    *l += x;
                }
                probs.push(softmax(&logits)?);
            }
            let (loss, clamped) = sequence_nll(&probs, gold, class_weights)?;
            loss_report = ThreadLossReport { loss, clamped };

            let (gw, gb) = match &mut grads.head {
                HeadParams::Affine { w, b } => (w, b),
                _ => unreachable!("gradient head mode mismatch"),
            };
            for t in (0..n).rev() {
                let d_logits = nll_logit_grad(&probs[t], gold[t], class_weights[gold[t].index()]);
                outer_acc(gw, &d_logits, &p_masked[t]);
                for (g, d) in gb.data_mut().iter_mut().zip(d_logits.iter()) {
                    *g += d;
                }
                let mut d_p_m = vec![0.0; cfg.joint_dim];
                matvec_t_acc(w, &d_logits, &mut d_p_m);
                let d_p: Vec<f64> = d_p_m
                    .iter()
                    .zip(p_masks[t].iter())
                    .map(|(d, m)| d * m)
                    .collect();
                let (dq, da) =
                    join_backward(&params.join, &join_caches[t], &d_p, JOIN_ACT, &mut grads.join);
                for (acc, d) in d_q_rep.iter_mut().zip(dq.iter()) {
                    *acc += d;
                }
                tower_backward(
                    &params.a_tower,
                    &cfg.layer_specs,
                    &a_caches[t],
                    &da,
                    TOWER_ACT,
                    &mut grads.a_tower,
                );
            }
        }
    }

    tower_backward(
        &params.q_tower,
        &cfg.layer_specs,
        &q_cache,
        &d_q_rep,
        TOWER_ACT,
        &mut grads.q_tower,
    );

    if !loss_report.loss.is_finite() {
        loss_report.loss = f64::NAN;
    }
    Ok(loss_report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::tokenize;

    fn tiny_thread(cfg: &ModelConfig, seed: u64) -> (Embedder, EncodedThread, Vec<Label>) {
        let embedder = Embedder::Hashed {
            dim: cfg.embed_dim,
            seed,
        };
        let q = tokenize("how do I register my car ?");
        let answers = vec![
            tokenize("go to the traffic department"),
            tokenize("no idea , sorry"),
            tokenize("maybe ask the dealer"),
        ];
        let enc = encode_thread(&embedder, cfg, &q, &answers);
        (
            embedder,
            enc,
            vec![Label::Good, Label::Bad, Label::Potential],
        )
    }

    #[test]
    fn predict_emits_one_distribution_per_answer() {
        let cfg = ModelConfig::reduced();
        let mut rng = Rng::seed(101, 0);
        let params = ModelParams::init(&cfg, &mut rng).unwrap();
        let (_e, enc, _gold) = tiny_thread(&cfg, 5);
        let dists = predict_thread(&params, &cfg, &enc).unwrap();
        assert_eq!(dists.len(), 3);
        for d in &dists {
            let s: f64 = d.iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
            assert!(d.iter().all(|&p| p > 0.0 && p < 1.0));
        }
    }

    #[test]
    fn loss_matches_forward_only_path_without_dropout() {
        let cfg = ModelConfig::reduced();
        let mut rng = Rng::seed(103, 0);
        let params = ModelParams::init(&cfg, &mut rng).unwrap();
        let (_e, enc, gold) = tiny_thread(&cfg, 5);
        let mut grads = params.zeros_like();
        let report = thread_loss_and_grads(
            &params,
            &cfg,
            &enc,
            &gold,
            &[1.0; 3],
            None,
            &mut grads,
        )
        .unwrap();
        let direct = thread_loss(&params, &cfg, &enc, &gold, &[1.0; 3]).unwrap();
        assert!((report.loss - direct).abs() < 1e-12);
    }

    #[test]
    fn causality_later_answers_do_not_affect_earlier_steps() {
        let cfg = ModelConfig::reduced();
        let mut rng = Rng::seed(107, 0);
        let params = ModelParams::init(&cfg, &mut rng).unwrap();
        let embedder = Embedder::Hashed { dim: 6, seed: 9 };
        let q = tokenize("what is the best bank ?");
        let base = vec![
            tokenize("use the one downtown"),
            tokenize("i prefer the other branch"),
            tokenize("this answer will be perturbed"),
        ];
        let mut perturbed = base.clone();
        perturbed[2] = tokenize("completely different text entirely now");
        let enc_a = encode_thread(&embedder, &cfg, &q, &base);
        let enc_b = encode_thread(&embedder, &cfg, &q, &perturbed);
        let da = predict_thread(&params, &cfg, &enc_a).unwrap();
        let db = predict_thread(&params, &cfg, &enc_b).unwrap();
        for t in 0..2 {
            assert_eq!(da[t], db[t], "step {t} changed");
        }
        assert_ne!(da[2], db[2]);
    }

    #[test]
    fn cnn_mode_is_order_invariant() {
        let cfg = ModelConfig::reduced().with_mode(Mode::CnnOnly);
        let mut rng = Rng::seed(109, 0);
        let params = ModelParams::init(&cfg, &mut rng).unwrap();
        let (_e, enc, _gold) = tiny_thread(&cfg, 5);
        let d = predict_thread(&params, &cfg, &enc).unwrap();
        let swapped = EncodedThread {
            q_grid: enc.q_grid.clone(),
            a_grids: vec![
                enc.a_grids[2].clone(),
                enc.a_grids[0].clone(),
                enc.a_grids[1].clone(),
            ],
        };
        let ds = predict_thread(&params, &cfg, &swapped).unwrap();
        assert_eq!(ds[0], d[2]);
        assert_eq!(ds[1], d[0]);
        assert_eq!(ds[2], d[1]);
    }

    #[test]
    fn rcnn_mode_is_order_sensitive() {
        let cfg = ModelConfig::reduced();
        let mut rng = Rng::seed(113, 0);
        let params = ModelParams::init(&cfg, &mut rng).unwrap();
        let (_e, enc, _gold) = tiny_thread(&cfg, 5);
        let d = predict_thread(&params, &cfg, &enc).unwrap();
        let swapped = EncodedThread {
            q_grid: enc.q_grid.clone(),
            a_grids: vec![
                enc.a_grids[1].clone(),
                enc.a_grids[0].clone(),
                enc.a_grids[2].clone(),
            ],
        };
        let ds = predict_thread(&params, &cfg, &swapped).unwrap();
        // The step-2 distribution conditions on step 1 through the state, so
        // swapping answers must not merely permute the outputs.
        assert_ne!(ds[1], d[0]);
    }

    #[test]
    fn dropout_identity_at_rate_zero() {
        let mut rng = Rng::seed(127, 0);
        let v = vec![1.0, -2.0, 3.0];
        let (masked, mask) = apply_dropout(&v, 0.0, &mut rng);
        assert_eq!(masked, v);
        assert!(mask.iter().all(|&m| m == 1.0));
    }

    #[test]
    fn dropout_zero_vector_stays_zero() {
        let mut rng = Rng::seed(131, 0);
        let (masked, _) = apply_dropout(&vec![0.0; 64], 0.5, &mut rng);
        assert!(masked.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dropout_preserves_expectation() {
        let mut rng = Rng::seed(137, 0);
        let v = vec![1.0; 100_000];
        let (masked, _) = apply_dropout(&v, 0.5, &mut rng);
        let mean: f64 = masked.iter().sum::<f64>() / masked.len() as f64;
        assert!((mean - 1.0).abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn named_tensors_cover_both_heads() {
        let cfg = ModelConfig::reduced();
        let mut rng = Rng::seed(139, 0);
        let rcnn = ModelParams::init(&cfg, &mut rng).unwrap();
        let names: Vec<String> = rcnn.tensors().into_iter().map(|(n, _)| n).collect();
        assert!(names.iter().any(|n| n == "lstm.peep_ci"));
        assert!(names.iter().any(|n| n == "q_tower.conv3.kernels"));
        assert_eq!(
            names.len(),
            names.iter().collect::<std::collections::HashSet<_>>().len()
        );

        let cnn_cfg = ModelConfig::reduced().with_mode(Mode::CnnOnly);
        let cnn = ModelParams::init(&cnn_cfg, &mut rng).unwrap();
        let cnames: Vec<String> = cnn.tensors().into_iter().map(|(n, _)| n).collect();
        assert!(cnames.iter().any(|n| n == "output.w"));
        assert!(cnames.iter().all(|n| !n.starts_with("lstm.")));
    }

    #[test]
    fn empty_thread_errors() {
        let cfg = ModelConfig::reduced();
        let mut rng = Rng::seed(149, 0);
        let params = ModelParams::init(&cfg, &mut rng).unwrap();
        let enc = EncodedThread {
            q_grid: Tensor::zeros(&[7, 12]),
            a_grids: vec![],
        };
        assert!(predict_thread(&params, &cfg, &enc).is_err());
    }
}
