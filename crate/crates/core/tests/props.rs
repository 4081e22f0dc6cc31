//! Property tests for the numeric primitives, the sentence encoder, the
//! canonical corpus format, and the metrics.

use proptest::prelude::*;

use answerseq_core::corpus::{dataset_stats, from_canonical, map_label, to_canonical, Answer, Thread};
use answerseq_core::embedding::{encode_sentence, Embedder};
use answerseq_core::lstm::Label;
use answerseq_core::metrics::{confusion, macro_metrics};
use answerseq_core::ops::{conv2d, pool2d, softmax, Activation};
use answerseq_core::rng::Rng;
use answerseq_core::tensor::Tensor;
use answerseq_core::tower::{output_shape, tower_forward, ConvLayerSpec, TowerParams};

fn label_strategy() -> impl Strategy<Value = Label> {
    prop_oneof![
        Just(Label::Good),
        Just(Label::Bad),
        Just(Label::Potential)
    ]
}

// Text without carriage returns: the canonical format's escape set is
// backslash/tab/newline, and bare \r is not representable at a record end.
fn text_strategy() -> impl Strategy<Value = String> {
    "[ -~\t\néüλ]{0,40}".prop_map(|s| s.replace('\r', " "))
}

proptest! {
    #[test]
    fn softmax_is_a_distribution(logits in prop::collection::vec(-50.0f64..50.0, 1..8)) {
        let p = softmax(&logits).unwrap();
        prop_assert_eq!(p.len(), logits.len());
        let sum: f64 = p.iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-9);
        for &v in &p {
            prop_assert!(v > 0.0 && v < 1.0 + 1e-12);
        }
    }

    #[test]
    fn encoder_shape_invariants(
        len in 0usize..80,
        k in 1usize..4,
        max_len in 4usize..60,
        dim in 1usize..8,
        seed in 0u64..1000,
    ) {
        prop_assume!(max_len >= k);
        let embedder = Embedder::Hashed { dim, seed };
        let tokens: Vec<String> = (0..len).map(|i| format!("tok{i}")).collect();
        let grid = encode_sentence(&embedder, &tokens, k, max_len);
        // Column count is always k*d.
        prop_assert_eq!(grid.matrix.shape()[1], k * dim);
        // Row count = max(min(L, max_len), k) - k + 1.
        let eff = len.min(max_len).max(k);
        prop_assert_eq!(grid.matrix.shape()[0], eff - k + 1);
        prop_assert_eq!(grid.source_len, len);
    }

    #[test]
    fn lookup_is_total(token in "[a-zA-Z0-9!?.,]{0,12}", dim in 1usize..8) {
        let embedder = Embedder::Hashed { dim, seed: 7 };
        let v = embedder.lookup(&token);
        prop_assert_eq!(v.len(), dim);
        prop_assert!(v.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn pool_bounded_by_input_max(
        seed in 0u64..500,
        maps in 1usize..3,
        h in 2usize..7,
        w in 2usize..7,
    ) {
        let mut rng = Rng::seed(seed, 9);
        let input = Tensor::uniform(&[maps, h, w], 2.0, &mut rng);
        let (out, _) = pool2d(&input, (2, 2)).unwrap();
        let in_max = input.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for &v in out.data() {
            prop_assert!(v <= in_max + 1e-15);
        }
    }

    #[test]
    fn conv_identity_kernel_is_identity(seed in 0u64..500, h in 1usize..6, w in 1usize..6) {
        let mut rng = Rng::seed(seed, 11);
        let input = Tensor::uniform(&[1, h, w], 3.0, &mut rng);
        let kernel = Tensor::from_vec(&[1, 1, 1, 1], vec![1.0]).unwrap();
        let bias = Tensor::zeros(&[1]);
        let out = conv2d(&input, &kernel, &bias).unwrap();
        prop_assert_eq!(out.data(), input.data());
    }

    #[test]
    fn canonical_round_trip(
        qid in "[A-Za-z0-9_]{1,8}",
        question in text_strategy(),
        answers in prop::collection::vec(
            ("[A-Za-z0-9_]{1,8}", text_strategy(), "[A-Za-z ]{0,12}", label_strategy()),
            1..5
        ),
    ) {
        let threads = vec![Thread {
            qid,
            question,
            answers: answers
                .into_iter()
                .map(|(id, text, raw, gold)| Answer { id, text, gold: Some(gold), raw_label: raw })
                .collect(),
        }];
        let mut buf = Vec::new();
        to_canonical(&threads, &mut buf).unwrap();
        let back = from_canonical(&buf[..]).unwrap();
        prop_assert_eq!(back, threads);
    }

    #[test]
    fn label_mapping_total_and_idempotent(raw in "\\PC{0,16}") {
        let mapped = map_label(&raw);
        prop_assert_eq!(map_label(mapped.name()), mapped);
    }

    #[test]
    fn metrics_permutation_invariant(
        pairs in prop::collection::vec((label_strategy(), label_strategy()), 1..40),
        seed in 0u64..1000,
    ) {
        let preds: Vec<Label> = pairs.iter().map(|(p, _)| *p).collect();
        let golds: Vec<Label> = pairs.iter().map(|(_, g)| *g).collect();
        let direct = macro_metrics(&confusion(&preds, &golds).unwrap()).unwrap();

        let mut order: Vec<usize> = (0..pairs.len()).collect();
        let mut rng = Rng::seed(seed, 13);
        rng.shuffle(&mut order);
        let pp: Vec<Label> = order.iter().map(|&i| preds[i]).collect();
        let pg: Vec<Label> = order.iter().map(|&i| golds[i]).collect();
        let permuted = macro_metrics(&confusion(&pp, &pg).unwrap()).unwrap();
        prop_assert_eq!(direct, permuted);
    }

    #[test]
    fn confusion_merge_matches_concatenation(
        left in prop::collection::vec((label_strategy(), label_strategy()), 1..20),
        right in prop::collection::vec((label_strategy(), label_strategy()), 1..20),
    ) {
        let (lp, lg): (Vec<Label>, Vec<Label>) = left.iter().cloned().unzip();
        let (rp, rg): (Vec<Label>, Vec<Label>) = right.iter().cloned().unzip();
        let merged = confusion(&lp, &lg).unwrap().merge(&confusion(&rp, &rg).unwrap());
        let mut cp = lp.clone();
        cp.extend(rp);
        let mut cg = lg.clone();
        cg.extend(rg);
        prop_assert_eq!(merged, confusion(&cp, &cg).unwrap());
        prop_assert_eq!(
            macro_metrics(&merged).unwrap(),
            macro_metrics(&confusion(&cp, &cg).unwrap()).unwrap()
        );
    }

    #[test]
    fn output_shape_agrees_with_tower_forward(
        rows in 4usize..14,
        cols in 4usize..14,
        windows in prop::collection::vec((1usize..3, 1usize..3, 1usize..3, 1usize..3), 1..4),
        maps in 1usize..3,
        seed in 0u64..500,
    ) {
        let specs: Vec<ConvLayerSpec> = windows
            .iter()
            .map(|&(ch, cw, ph, pw)| ConvLayerSpec::new((ch, cw), (ph, pw), maps))
            .collect();
        // Only chains that survive the shape arithmetic are runnable.
        let Ok(shapes) = output_shape((rows, cols), &specs) else {
            return Ok(());
        };
        let mut rng = Rng::seed(seed, 21);
        let grid = Tensor::uniform(&[rows, cols], 1.0, &mut rng);
        let params = TowerParams::init((rows, cols), &specs, 3, &mut rng).unwrap();
        let cache = tower_forward(&grid, &params, &specs, Activation::Relu).unwrap();
        prop_assert_eq!(cache.rep.len(), 3);
        // Predicted chain matches the real tensor shapes at every layer.
        for (predicted, actual) in shapes.iter().zip(cache.layer_shapes()) {
            prop_assert_eq!(
                vec![maps, predicted.after_pool.0, predicted.after_pool.1],
                actual
            );
        }
    }

    #[test]
    fn stats_mean_is_truncated_ratio(counts in prop::collection::vec(1usize..12, 1..30)) {
        let threads: Vec<Thread> = counts
            .iter()
            .enumerate()
            .map(|(i, &n)| Thread {
                qid: format!("q{i}"),
                question: "q".into(),
                answers: (0..n)
                    .map(|j| Answer {
                        id: format!("a{i}_{j}"),
                        text: "t".into(),
                        gold: Some(Label::Good),
                        raw_label: "Good".into(),
                    })
                    .collect(),
            })
            .collect();
        let stats = dataset_stats(&threads);
        let total: usize = counts.iter().sum();
        prop_assert_eq!(stats.questions, counts.len());
        prop_assert_eq!(stats.answers, total);
        prop_assert_eq!(
            stats.mean_hundredths,
            (total as u64 * 100) / counts.len() as u64
        );
    }
}
