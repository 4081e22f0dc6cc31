//! Finite-difference verification of analytic gradients.
//!
//! Central differences (f(x+e) - f(x-e)) / 2e per scalar parameter, compared
//! against the backward pass with relative error |a-n| / max(|a|, |n|, 1e-8).

use crate::error::{Error, Result};
use crate::model::ModelParams;

#[derive(Debug, Clone)]
pub struct GroupReport {
    pub name: String,
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub checked: usize,
}

/// Outcome of one gradient check across all parameter groups.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub groups: Vec<GroupReport>,
    pub max_rel_err: f64,
    /// "group[index]" of the worst parameter.
    pub worst_path: String,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_err < tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Central difference of a scalar function, exposed for directed tests.
pub fn central_diff<F: FnMut(f64) -> f64>(mut f: F, x: f64, eps: f64) -> f64 {
    (f(x + eps) - f(x - eps)) / (2.0 * eps)
}

fn read_param(params: &ModelParams, group: usize, idx: usize) -> f64 {
    params.tensors()[group].1.data()[idx]
}

fn write_param(params: &mut ModelParams, group: usize, idx: usize, v: f64) {
    params.tensors_mut()[group].1.data_mut()[idx] = v;
}

/// Checks `analytic` (a gradient in ModelParams shape) against central
/// differences of `loss_fn` at the current `params`.
///
/// `loss_fn` must be deterministic: dropout disabled, any randomness fixed.
/// When a group holds more than `max_per_group` scalars, a deterministic
/// evenly-spaced sample of that size is checked instead.
/// Moves exactly-zero bias entries off zero. Fresh inits hold zero biases,
/// which place the padded grid rows exactly on the ReLU kink where central
/// differences straddle the non-differentiable point; checks must run away
/// from kinks, like pooling is checked away from ties.
pub fn jitter_zero_biases(params: &mut ModelParams, rng: &mut crate::rng::Rng) {
    for (name, t) in params.tensors_mut() {
        let is_bias = name.ends_with(".bias") || name.ends_with(".b") || name.contains(".b_");
        if is_bias {
            for v in t.data_mut() {
                if *v == 0.0 {
                    *v = rng.uniform(-0.3, 0.3);
                }
            }
        }
    }
}

pub fn grad_check<F>(
    params: &mut ModelParams,
    analytic: &ModelParams,
    mut loss_fn: F,
    eps: f64,
    max_per_group: Option<usize>,
) -> Result<GradCheckReport>
where
    F: FnMut(&ModelParams) -> Result<f64>,
{
    let group_count = params.tensors().len();
    let mut groups = Vec::with_capacity(group_count);
    let mut worst = 0.0f64;
    let mut worst_path = String::new();

    for g in 0..group_count {
        let (name, numel) = {
            let ts = params.tensors();
            (ts[g].0.clone(), ts[g].1.numel())
        };
        let analytic_data: Vec<f64> = {
            let ts = analytic.tensors();
            debug_assert_eq!(ts[g].0, name, "group order must match");
            ts[g].1.data().to_vec()
        };

        let sample: Vec<usize> = match max_per_group {
            Some(cap) if numel > cap => (0..cap).map(|i| i * numel / cap).collect(),
            _ => (0..numel).collect(),
        };

        let mut group_worst = 0.0f64;
        let mut group_worst_idx = 0usize;
        for &idx in &sample {
            let original = read_param(params, g, idx);
            write_param(params, g, idx, original + eps);
            let up = loss_fn(params)?;
            write_param(params, g, idx, original - eps);
            let down = loss_fn(params)?;
            write_param(params, g, idx, original);
            if !up.is_finite() || !down.is_finite() {
                return Err(Error::NonFinite(format!("loss while perturbing {name}[{idx}]")));
            }
            let numeric = (up - down) / (2.0 * eps);
            let rel = relative_error(analytic_data[idx], numeric);
            if rel > group_worst {
                group_worst = rel;
                group_worst_idx = idx;
            }
        }
        if group_worst > worst {
            worst = group_worst;
            worst_path = format!("{name}[{group_worst_idx}]");
        }
        groups.push(GroupReport {
            name,
            max_rel_err: group_worst,
            worst_index: group_worst_idx,
            checked: sample.len(),
        });
    }

    Ok(GradCheckReport {
        groups,
        max_rel_err: worst,
        worst_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{tokenize, Embedder};
    use crate::model::{encode_thread, thread_loss, thread_loss_and_grads, Mode, ModelConfig};
    use crate::lstm::Label;
    use crate::rng::Rng;

    #[test]
    fn central_diff_on_quadratic() {
        let numeric = central_diff(|w| w * w, 3.0, 1e-5);
        assert!(relative_error(6.0, numeric) < 1e-8);
    }

    #[test]
    fn constant_loss_gives_zero_gradients() {
        let cfg = ModelConfig::reduced();
        let mut rng = Rng::seed(211, 0);
        let mut params = crate::model::ModelParams::init(&cfg, &mut rng).unwrap();
        let analytic = params.zeros_like();
        let report = grad_check(&mut params, &analytic, |_| Ok(0.0), 1e-5, Some(4)).unwrap();
        assert_eq!(report.max_rel_err, 0.0);
    }

    fn reduced_fixture(mode: Mode) -> (ModelConfig, Embedder, Vec<(crate::model::EncodedThread, Vec<Label>)>) {
        let cfg = ModelConfig::reduced().with_mode(mode);
        let embedder = Embedder::Hashed {
            dim: cfg.embed_dim,
            seed: 400,
        };
        let threads = vec![
            (
                tokenize("where can i buy good coffee"),
                vec![
                    (tokenize("try the shop near the corniche"), Label::Good),
                    (tokenize("no clue"), Label::Bad),
                    (tokenize("maybe the mall has one"), Label::Potential),
                ],
            ),
            (
                tokenize("how to renew a visa"),
                vec![
                    (tokenize("go to immigration with your passport"), Label::Good),
                    (tokenize("lol"), Label::Bad),
                ],
            ),
        ];
        let encoded = threads
            .into_iter()
            .map(|(q, answers)| {
                let toks: Vec<Vec<String>> = answers.iter().map(|(t, _)| t.clone()).collect();
                let gold: Vec<Label> = answers.iter().map(|(_, l)| *l).collect();
                (encode_thread(&embedder, &cfg, &q, &toks), gold)
            })
            .collect();
        (cfg, embedder, encoded)
    }

    fn check_reduced_model(mode: Mode, cap: Option<usize>) -> GradCheckReport {
        let (cfg, _emb, data) = reduced_fixture(mode);
        let mut rng = Rng::seed(401, 0);
        let mut params = crate::model::ModelParams::init(&cfg, &mut rng).unwrap();
        jitter_zero_biases(&mut params, &mut rng);
        let weights = [1.0; 3];

        let mut analytic = params.zeros_like();
        for (enc, gold) in &data {
            thread_loss_and_grads(&params, &cfg, enc, gold, &weights, None, &mut analytic)
                .unwrap();
        }
        let loss_fn = |p: &crate::model::ModelParams| -> crate::error::Result<f64> {
            let mut total = 0.0;
            for (enc, gold) in &data {
                total += thread_loss(p, &cfg, enc, gold, &weights)?;
            }
            Ok(total)
        };
        grad_check(&mut params, &analytic, loss_fn, 1e-5, cap).unwrap()
    }

    #[test]
    fn reduced_rcnn_model_passes() {
        // Sampled here to stay quick; the acceptance suite runs every scalar.
        let report = check_reduced_model(Mode::Rcnn, Some(24));
        assert!(
            report.passes(1e-4),
            "max rel err {} at {}",
            report.max_rel_err,
            report.worst_path
        );
    }

    #[test]
    fn reduced_cnn_model_passes() {
        let report = check_reduced_model(Mode::CnnOnly, Some(24));
        assert!(
            report.passes(1e-4),
            "max rel err {} at {}",
            report.max_rel_err,
            report.worst_path
        );
    }

    #[test]
    fn corrupted_backward_is_detected() {
        let (cfg, _emb, data) = reduced_fixture(Mode::Rcnn);
        let mut rng = Rng::seed(419, 0);
        let mut params = crate::model::ModelParams::init(&cfg, &mut rng).unwrap();
        jitter_zero_biases(&mut params, &mut rng);
        let weights = [1.0; 3];
        let mut analytic = params.zeros_like();
        for (enc, gold) in &data {
            thread_loss_and_grads(&params, &cfg, enc, gold, &weights, None, &mut analytic)
                .unwrap();
        }
        // Sabotage one gradient tensor.
        for (name, t) in analytic.tensors_mut() {
            if name == "lstm.w_hi" {
                for v in t.data_mut().iter_mut() {
                    *v += 0.5;
                }
            }
        }
        let loss_fn = |p: &crate::model::ModelParams| -> crate::error::Result<f64> {
            let mut total = 0.0;
            for (enc, gold) in &data {
                total += thread_loss(p, &cfg, enc, gold, &weights)?;
            }
            Ok(total)
        };
        let report = grad_check(&mut params, &analytic, loss_fn, 1e-5, Some(16)).unwrap();
        assert!(!report.passes(1e-4));
        assert!(report.worst_path.starts_with("lstm.w_hi"));
    }
}
