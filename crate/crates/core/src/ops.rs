//! Convolution, pooling, activations and softmax with analytic gradients.
//!
//! Feature-map stacks are [maps, h, w] tensors. Convolution is valid (no
//! padding), stride 1; pooling is max over non-overlapping windows with
//! stride equal to the window, trailing rows/cols dropped.

use crate::error::{Error, Result};
use crate::tensor::{axpy, dot, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed in terms of the activation output.
    #[inline]
    pub fn dydx_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

/// Elementwise activation, shape preserved.
pub fn activate(x: &Tensor, kind: Activation) -> Tensor {
    let mut out = x.clone();
    for v in out.data_mut() {
        *v = kind.apply(*v);
    }
    out
}

/// upstream (.) f'(y) where y is the cached activation output.
pub fn activate_backward(output: &Tensor, upstream: &Tensor, kind: Activation) -> Tensor {
    debug_assert_eq!(output.shape(), upstream.shape());
    let mut grad = upstream.clone();
    for (g, y) in grad.data_mut().iter_mut().zip(output.data().iter()) {
        *g *= kind.dydx_from_output(*y);
    }
    grad
}

/// Valid 2-D convolution over a stack of input maps.
///
/// `input` is [in_maps, h, w]; `kernels` is [out_maps, in_maps, kh, kw];
/// `bias` is [out_maps]. Each output map sums contributions from every input
/// map plus one scalar bias.
pub fn conv2d(input: &Tensor, kernels: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (in_maps, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (out_maps, k_in, kh, kw) = (
        kernels.shape()[0],
        kernels.shape()[1],
        kernels.shape()[2],
        kernels.shape()[3],
    );
    if k_in != in_maps || bias.shape() != [out_maps] {
        return Err(Error::ShapeMismatch {
            context: "conv2d".into(),
            expected: format!("kernels [*, {in_maps}, *, *] and bias [{out_maps}]"),
            got: format!("kernels {:?}, bias {:?}", kernels.shape(), bias.shape()),
        });
    }
    if kh > h || kw > w {
        return Err(Error::ShapeMismatch {
            context: "conv2d".into(),
            expected: format!("window within input {h}x{w}"),
            got: format!("window {kh}x{kw}"),
        });
    }
    let (oh, ow) = (h - kh + 1, w - kw + 1);
    let mut out = Tensor::zeros(&[out_maps, oh, ow]);
    for om in 0..out_maps {
        out.plane_mut(om).iter_mut().for_each(|v| *v = bias.data()[om]);
        for im in 0..in_maps {
            if (kh, kw) == (2, 2) {
                // Fused 2x2 path: one pass per output row over both input
                // rows, all four taps applied together.
                let k0 = ((om * in_maps + im) * 2) * 2;
                let w00 = kernels.data()[k0];
                let w01 = kernels.data()[k0 + 1];
                let w10 = kernels.data()[k0 + 2];
                let w11 = kernels.data()[k0 + 3];
                for oy in 0..oh {
                    let r0 = (im * h + oy) * w;
                    let r1 = r0 + w;
                    let (top, rest) = input.data().split_at(r1);
                    let row0 = &top[r0..];
                    let row1 = rest;
                    let out_off = (om * oh + oy) * ow;
                    let out_row = &mut out.data_mut()[out_off..out_off + ow];
                    for j in 0..ow {
                        out_row[j] += w00 * row0[j]
                            + w01 * row0[j + 1]
                            + w10 * row1[j]
                            + w11 * row1[j + 1];
                    }
                }
            } else {
                for ky in 0..kh {
                    for kx in 0..kw {
                        let wgt = kernels.data()[((om * in_maps + im) * kh + ky) * kw + kx];
                        for oy in 0..oh {
                            let in_off = (im * h + oy + ky) * w + kx;
                            let in_row = &input.data()[in_off..in_off + ow];
                            let out_off = (om * oh + oy) * ow;
                            axpy(wgt, in_row, &mut out.data_mut()[out_off..out_off + ow]);
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of `conv2d` w.r.t. kernels, bias, and input.
pub fn conv2d_backward(
    input: &Tensor,
    kernels: &Tensor,
    upstream: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let (in_maps, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (out_maps, _, kh, kw) = (
        kernels.shape()[0],
        kernels.shape()[1],
        kernels.shape()[2],
        kernels.shape()[3],
    );
    let (oh, ow) = (upstream.shape()[1], upstream.shape()[2]);
    debug_assert_eq!(upstream.shape()[0], out_maps);

    let mut d_kernels = kernels.zeros_like();
    let mut d_bias = Tensor::zeros(&[out_maps]);
    let mut d_input = input.zeros_like();

    for om in 0..out_maps {
        d_bias.data_mut()[om] = upstream.plane(om).iter().sum();
        for im in 0..in_maps {
            if (kh, kw) == (2, 2) {
                // Fused 2x2 path: hoist the upstream row, accumulate all four
                // kernel-tap inner products and scatter all four input-shift
                // contributions per output row.
                let k0 = ((om * in_maps + im) * 2) * 2;
                let w00 = kernels.data()[k0];
                let w01 = kernels.data()[k0 + 1];
                let w10 = kernels.data()[k0 + 2];
                let w11 = kernels.data()[k0 + 3];
                let (mut dk00, mut dk01, mut dk10, mut dk11) = (0.0, 0.0, 0.0, 0.0);
                for oy in 0..oh {
                    let up_off = (om * oh + oy) * ow;
                    let up_row = &upstream.data()[up_off..up_off + ow];
                    let r0 = (im * h + oy) * w;
                    let r1 = r0 + w;
                    // dK accumulates <upstream row, shifted input row>;
                    // dX scatters upstream back through the same shift.
                    dk00 += dot(up_row, &input.data()[r0..r0 + ow]);
                    dk01 += dot(up_row, &input.data()[r0 + 1..r0 + 1 + ow]);
                    dk10 += dot(up_row, &input.data()[r1..r1 + ow]);
                    dk11 += dot(up_row, &input.data()[r1 + 1..r1 + 1 + ow]);
                    let din = d_input.data_mut();
                    axpy(w00, up_row, &mut din[r0..r0 + ow]);
                    axpy(w01, up_row, &mut din[r0 + 1..r0 + 1 + ow]);
                    axpy(w10, up_row, &mut din[r1..r1 + ow]);
                    axpy(w11, up_row, &mut din[r1 + 1..r1 + 1 + ow]);
                }
                let dkd = d_kernels.data_mut();
                dkd[k0] += dk00;
                dkd[k0 + 1] += dk01;
                dkd[k0 + 2] += dk10;
                dkd[k0 + 3] += dk11;
            } else {
                for ky in 0..kh {
                    for kx in 0..kw {
                        let kidx = ((om * in_maps + im) * kh + ky) * kw + kx;
                        let wgt = kernels.data()[kidx];
                        let mut dk = 0.0;
                        for oy in 0..oh {
                            let up_off = (om * oh + oy) * ow;
                            let up_row = &upstream.data()[up_off..up_off + ow];
                            let in_off = (im * h + oy + ky) * w + kx;
                            dk += dot(up_row, &input.data()[in_off..in_off + ow]);
                            axpy(wgt, up_row, &mut d_input.data_mut()[in_off..in_off + ow]);
                        }
                        d_kernels.data_mut()[kidx] += dk;
                    }
                }
            }
        }
    }
    (d_kernels, d_bias, d_input)
}

/// Max pooling over non-overlapping windows, stride = window.
///
/// Returns the pooled maps and, per output cell, the flat index of the winning
/// input cell (first occurrence in row-major order on ties) for the backward
/// pass.
pub fn pool2d(input: &Tensor, window: (usize, usize)) -> Result<(Tensor, Vec<usize>)> {
    let (maps, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (ph, pw) = window;
    if ph == 0 || pw == 0 || ph > h || pw > w {
        return Err(Error::ShapeMismatch {
            context: "pool2d".into(),
            expected: format!("window within input {h}x{w}"),
            got: format!("window {ph}x{pw}"),
        });
    }
    let (oh, ow) = (h / ph, w / pw);
    let mut out = Tensor::zeros(&[maps, oh, ow]);
    let mut argmax = vec![0usize; maps * oh * ow];
    for m in 0..maps {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0usize;
                for dy in 0..ph {
                    let y = oy * ph + dy;
                    for dx in 0..pw {
                        let x = ox * pw + dx;
                        let idx = (m * h + y) * w + x;
                        let v = input.data()[idx];
                        if v > best {
                            best = v;
                            best_idx = idx;
                        }
                    }
                }
                let oidx = (m * oh + oy) * ow + ox;
                out.data_mut()[oidx] = best;
                argmax[oidx] = best_idx;
            }
        }
    }
    Ok((out, argmax))
}

/// Routes each upstream cell's gradient to the argmax cell recorded forward.
pub fn pool2d_backward(input_shape: &[usize], argmax: &[usize], upstream: &Tensor) -> Tensor {
    let mut d_input = Tensor::zeros(input_shape);
    for (up, &idx) in upstream.data().iter().zip(argmax.iter()) {
        d_input.data_mut()[idx] += up;
    }
    d_input
}

/// Numerically stable softmax (max subtraction).
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::EmptyInput("softmax over empty vector"));
    }
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&x| (x - m).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in out.iter_mut() {
        *v /= sum;
    }
    Ok(out)
}
