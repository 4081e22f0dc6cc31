//! Fuses the question and answer sentence vectors into the joint
//! representation: p = activation(W * concat(q, a) + b).

use crate::error::{Error, Result};
use crate::ops::Activation;
use crate::rng::Rng;
use crate::tensor::{matvec, matvec_t_acc, outer_acc, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct JoinParams {
    pub w: Tensor, // [joint_dim, 2 * sentence_dim]
    pub b: Tensor, // [joint_dim]
}

impl JoinParams {
    pub fn init(sentence_dim: usize, joint_dim: usize, rng: &mut Rng) -> JoinParams {
        let in_dim = 2 * sentence_dim;
        JoinParams {
            w: Tensor::glorot(&[joint_dim, in_dim], in_dim, joint_dim, rng),
            b: Tensor::zeros(&[joint_dim]),
        }
    }

    pub fn zeros_like(&self) -> JoinParams {
        JoinParams {
            w: self.w.zeros_like(),
            b: self.b.zeros_like(),
        }
    }

    pub fn joint_dim(&self) -> usize {
        self.w.shape()[0]
    }
}

pub struct JoinCache {
    concat: Vec<f64>,
    pub joint: Vec<f64>, // post-activation p
}

/// Computes p = act(W concat(q, a) + b). Concatenation order is question
/// first, answer second.
pub fn join(
    q_rep: &[f64],
    a_rep: &[f64],
    params: &JoinParams,
    act: Activation,
) -> Result<JoinCache> {
    let in_dim = params.w.shape()[1];
    if q_rep.len() + a_rep.len() != in_dim {
        return Err(Error::ShapeMismatch {
            context: "join".into(),
            expected: format!("q + a lengths = {in_dim}"),
            got: format!("{} + {}", q_rep.len(), a_rep.len()),
        });
    }
    let mut concat = Vec::with_capacity(in_dim);
    concat.extend_from_slice(q_rep);
    concat.extend_from_slice(a_rep);
    let out_dim = params.w.shape()[0];
    let mut pre = vec![0.0; out_dim];
    matvec(&params.w, &concat, &mut pre);
    for (p, b) in pre.iter_mut().zip(params.b.data()) {
        *p += b;
    }
    let joint = pre.iter().map(|&x| act.apply(x)).collect();
    Ok(JoinCache { concat, joint })
}

/// Backprop through the join; splits the concat gradient back into the
/// question-side and answer-side pieces.
pub fn join_backward(
    params: &JoinParams,
    cache: &JoinCache,
    upstream: &[f64],
    act: Activation,
    grads: &mut JoinParams,
) -> (Vec<f64>, Vec<f64>) {
    let d_pre: Vec<f64> = upstream
        .iter()
        .zip(cache.joint.iter())
        .map(|(u, y)| u * act.dydx_from_output(*y))
        .collect();
    outer_acc(&mut grads.w, &d_pre, &cache.concat);
    for (g, d) in grads.b.data_mut().iter_mut().zip(d_pre.iter()) {
        *g += d;
    }
    let mut d_concat = vec![0.0; cache.concat.len()];
    matvec_t_acc(&params.w, &d_pre, &mut d_concat);
    let half = d_concat.len() / 2;
    let d_a = d_concat.split_off(half);
    (d_concat, d_a)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_everything_gives_zero_vector() {
        let params = JoinParams {
            w: Tensor::zeros(&[200, 200]),
            b: Tensor::zeros(&[200]),
        };
        let c = join(&vec![0.0; 100], &vec![0.0; 100], &params, Activation::Relu).unwrap();
        assert_eq!(c.joint.len(), 200);
        assert!(c.joint.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_weights_reproduce_concat() {
        // w = I over nonnegative inputs: p = ReLU(concat) = concat
        let dim = 6;
        let mut w = Tensor::zeros(&[2 * dim, 2 * dim]);
        for i in 0..2 * dim {
            w.data_mut()[i * 2 * dim + i] = 1.0;
        }
        let params = JoinParams {
            w,
            b: Tensor::zeros(&[2 * dim]),
        };
        let q: Vec<f64> = (0..dim).map(|i| i as f64 * 0.5).collect();
        let a: Vec<f64> = (0..dim).map(|i| 1.0 + i as f64).collect();
        let c = join(&q, &a, &params, Activation::Relu).unwrap();
        assert_eq!(&c.joint[..dim], &q[..]);
        assert_eq!(&c.joint[dim..], &a[..]);
    }

    #[test]
    fn matches_scalar_matvec_oracle() {
        let mut rng = Rng::seed(41, 0);
        let params = JoinParams::init(100, 200, &mut rng);
        let q: Vec<f64> = (0..100).map(|_| rng.uniform(0.0, 1.0)).collect();
        let a: Vec<f64> = (0..100).map(|_| rng.uniform(0.0, 1.0)).collect();
        let c = join(&q, &a, &params, Activation::Relu).unwrap();
        for r in 0..200 {
            let mut acc = params.b.data()[r];
            for j in 0..200 {
                let x = if j < 100 { q[j] } else { a[j - 100] };
                acc += params.w.data()[r * 200 + j] * x;
            }
            let expect = if acc > 0.0 { acc } else { 0.0 };
            assert!((c.joint[r] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn concat_order_matters() {
        let mut rng = Rng::seed(43, 0);
        let params = JoinParams::init(8, 10, &mut rng);
        let q: Vec<f64> = (0..8).map(|_| rng.uniform(0.0, 1.0)).collect();
        let a: Vec<f64> = (0..8).map(|_| rng.uniform(0.0, 1.0)).collect();
        let qa = join(&q, &a, &params, Activation::Relu).unwrap();
        let aq = join(&a, &q, &params, Activation::Relu).unwrap();
        assert_ne!(qa.joint, aq.joint);
    }

    #[test]
    fn length_mismatch_errors() {
        let mut rng = Rng::seed(47, 0);
        let params = JoinParams::init(8, 10, &mut rng);
        assert!(join(&vec![0.0; 7], &vec![0.0; 8], &params, Activation::Relu).is_err());
    }

    #[test]
    fn zero_upstream_zero_grads() {
        let mut rng = Rng::seed(53, 0);
        let params = JoinParams::init(4, 6, &mut rng);
        let q = vec![0.3; 4];
        let a = vec![0.7; 4];
        let cache = join(&q, &a, &params, Activation::Relu).unwrap();
        let mut grads = params.zeros_like();
        let (dq, da) = join_backward(&params, &cache, &[0.0; 6], Activation::Relu, &mut grads);
        assert!(grads.w.data().iter().all(|&v| v == 0.0));
        assert!(dq.iter().chain(da.iter()).all(|&v| v == 0.0));
    }

    #[test]
    fn identity_case_splits_upstream() {
        let dim = 3;
        let mut w = Tensor::zeros(&[2 * dim, 2 * dim]);
        for i in 0..2 * dim {
            w.data_mut()[i * 2 * dim + i] = 1.0;
        }
        let params = JoinParams {
            w,
            b: Tensor::zeros(&[2 * dim]),
        };
        let q = vec![1.0, 2.0, 3.0];
        let a = vec![4.0, 5.0, 6.0];
        let cache = join(&q, &a, &params, Activation::Relu).unwrap();
        let upstream = vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
        let mut grads = params.zeros_like();
        let (dq, da) = join_backward(&params, &cache, &upstream, Activation::Relu, &mut grads);
        // all activations positive, so the mask is all-ones
        assert_eq!(dq, vec![0.1, 0.2, 0.3]);
        assert_eq!(da, vec![0.4, 0.5, 0.6]);
    }
}
