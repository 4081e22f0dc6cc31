//! Exhaustive finite-difference verification on the reduced configuration:
//! every scalar parameter in every group, both heads.

use answerseq_core::embedding::{tokenize, Embedder};
use answerseq_core::gradcheck::{grad_check, jitter_zero_biases};
use answerseq_core::lstm::Label;
use answerseq_core::model::{
    encode_thread, thread_loss, thread_loss_and_grads, EncodedThread, Mode, ModelConfig,
    ModelParams,
};
use answerseq_core::rng::Rng;

fn fixture(cfg: &ModelConfig) -> Vec<(EncodedThread, Vec<Label>)> {
    let embedder = Embedder::Hashed {
        dim: cfg.embed_dim,
        seed: 2024,
    };
    let threads = vec![
        (
            "is there a good dentist in town",
            vec![
                ("yes doctor amal near the souq is great", Label::Good),
                ("why do you ask", Label::Bad),
                ("someone mentioned a clinic west side maybe", Label::Potential),
            ],
        ),
        (
            "best route to the airport at rush hour",
            vec![
                ("take the ring road it avoids traffic", Label::Good),
                ("i hate traffic", Label::Bad),
            ],
        ),
        (
            "where to exchange currency",
            vec![("the mall has a kiosk open late", Label::Good)],
        ),
    ];
    threads
        .into_iter()
        .map(|(q, answers)| {
            let q_tokens = tokenize(q);
            let a_tokens: Vec<Vec<String>> = answers.iter().map(|(t, _)| tokenize(t)).collect();
            let gold: Vec<Label> = answers.iter().map(|(_, l)| *l).collect();
            (encode_thread(&embedder, cfg, &q_tokens, &a_tokens), gold)
        })
        .collect()
}

fn run_full_check(mode: Mode) {
    let cfg = ModelConfig::reduced().with_mode(mode);
    let data = fixture(&cfg);
    let mut rng = Rng::seed(515, 0);
    let mut params = ModelParams::init(&cfg, &mut rng).unwrap();
    jitter_zero_biases(&mut params, &mut rng);
    let weights = [1.0; 3];

    let mut analytic = params.zeros_like();
    for (enc, gold) in &data {
        thread_loss_and_grads(&params, &cfg, enc, gold, &weights, None, &mut analytic).unwrap();
    }
    let loss_fn = |p: &ModelParams| -> answerseq_core::Result<f64> {
        let mut total = 0.0;
        for (enc, gold) in &data {
            total += thread_loss(p, &cfg, enc, gold, &weights)?;
        }
        Ok(total)
    };
    // No sampling cap: every scalar parameter is checked.
    let report = grad_check(&mut params, &analytic, loss_fn, 1e-5, None).unwrap();
    let expected_groups = params.tensors().len();
    assert_eq!(report.groups.len(), expected_groups);
    for g in &report.groups {
        assert!(
            g.max_rel_err < 1e-4,
            "group {} fails: rel err {} at index {}",
            g.name,
            g.max_rel_err,
            g.worst_index
        );
        assert_eq!(g.checked, {
            let ts = params.tensors();
            ts.iter().find(|(n, _)| *n == g.name).unwrap().1.numel()
        });
    }
    assert!(report.passes(1e-4), "worst {}", report.worst_path);
}

#[test]
fn full_gradient_check_rcnn() {
    run_full_check(Mode::Rcnn);
}

#[test]
fn full_gradient_check_cnn_only() {
    run_full_check(Mode::CnnOnly);
}

#[test]
fn single_lstm_step_gate_gradients() {
    // One-answer thread: the sequence loss degenerates to a single step, so
    // this checks every gate parameter through one application of the cell.
    let cfg = ModelConfig::reduced();
    let embedder = Embedder::Hashed { dim: 6, seed: 33 };
    let enc = encode_thread(
        &embedder,
        &cfg,
        &tokenize("single question"),
        &[tokenize("single answer here")],
    );
    let gold = vec![Label::Potential];
    let mut rng = Rng::seed(517, 0);
    let mut params = ModelParams::init(&cfg, &mut rng).unwrap();
    jitter_zero_biases(&mut params, &mut rng);
    let weights = [1.0; 3];
    let mut analytic = params.zeros_like();
    thread_loss_and_grads(&params, &cfg, &enc, &gold, &weights, None, &mut analytic).unwrap();
    let report = grad_check(
        &mut params,
        &analytic,
        |p| thread_loss(p, &cfg, &enc, &gold, &weights),
        1e-5,
        None,
    )
    .unwrap();
    for g in report.groups.iter().filter(|g| g.name.starts_with("lstm.")) {
        assert!(g.max_rel_err < 1e-4, "{}: {}", g.name, g.max_rel_err);
    }
    assert!(report.passes(1e-4), "worst {}", report.worst_path);
}
