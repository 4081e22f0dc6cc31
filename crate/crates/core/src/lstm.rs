//! Peephole LSTM over the answer sequence of a thread, with a three-class
//! softmax readout per step.
//!
//! Gate equations (logistic sigmoid, diagonal peepholes stored as vectors):
//!   i = sig(Wxi x + Whi h' + wci c' + bi)
//!   f = sig(Wxf x + Whf h' + wcf c' + bf)
//!   c = f c' + i tanh(Wxc x + Whc h' + bc)
//!   o = sig(Wxo x + Who h' + wco c + bo)   -- reads the NEW cell
//!   h = o tanh(c)

use crate::error::{Error, Result};
use crate::ops::softmax;
use crate::rng::Rng;
use crate::tensor::{matvec_t_acc, outer_acc, Tensor};

pub const NUM_CLASSES: usize = 3;

/// Answer quality classes, in fixed index order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Good = 0,
    Bad = 1,
    Potential = 2,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Good, Label::Bad, Label::Potential];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Label {
        Label::ALL[i]
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::Good => "Good",
            Label::Bad => "Bad",
            Label::Potential => "Potential",
        }
    }
}

/// All trainable tensors of the LSTM unit plus the softmax output layer.
/// Peepholes are vectors: diagonal matrices applied by elementwise multiply.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub w_xi: Tensor,
    pub w_xf: Tensor,
    pub w_xc: Tensor,
    pub w_xo: Tensor,
    pub w_hi: Tensor,
    pub w_hf: Tensor,
    pub w_hc: Tensor,
    pub w_ho: Tensor,
    pub w_ci: Tensor,
    pub w_cf: Tensor,
    pub w_co: Tensor,
    pub b_i: Tensor,
    pub b_f: Tensor,
    pub b_c: Tensor,
    pub b_o: Tensor,
    pub w_y: Tensor,
    pub b_y: Tensor,
}

impl LstmParams {
    /// Seeded init: Glorot-style uniform for dense transforms, small uniform
    /// peepholes, forget-gate bias 1.0 to ease early gradient flow.
    pub fn init(input_dim: usize, hidden: usize, rng: &mut Rng) -> LstmParams {
        let gx = |rng: &mut Rng| Tensor::glorot(&[hidden, input_dim], input_dim, hidden, rng);
        let gh = |rng: &mut Rng| Tensor::glorot(&[hidden, hidden], hidden, hidden, rng);
        let peep_scale = 1.0 / (hidden as f64).sqrt();
        let w_xi = gx(rng);
        let w_xf = gx(rng);
        let w_xc = gx(rng);
        let w_xo = gx(rng);
        let w_hi = gh(rng);
        let w_hf = gh(rng);
        let w_hc = gh(rng);
        let w_ho = gh(rng);
        let w_ci = Tensor::uniform(&[hidden], peep_scale, rng);
        let w_cf = Tensor::uniform(&[hidden], peep_scale, rng);
        let w_co = Tensor::uniform(&[hidden], peep_scale, rng);
        let mut b_f = Tensor::zeros(&[hidden]);
        b_f.fill(1.0);
        LstmParams {
            w_xi,
            w_xf,
            w_xc,
            w_xo,
            w_hi,
            w_hf,
            w_hc,
            w_ho,
            w_ci,
            w_cf,
            w_co,
            b_i: Tensor::zeros(&[hidden]),
            b_f,
            b_c: Tensor::zeros(&[hidden]),
            b_o: Tensor::zeros(&[hidden]),
            w_y: Tensor::glorot(&[NUM_CLASSES, hidden], hidden, NUM_CLASSES, rng),
            b_y: Tensor::zeros(&[NUM_CLASSES]),
        }
    }

    pub fn zeros_like(&self) -> LstmParams {
        LstmParams {
            w_xi: self.w_xi.zeros_like(),
            w_xf: self.w_xf.zeros_like(),
            w_xc: self.w_xc.zeros_like(),
            w_xo: self.w_xo.zeros_like(),
            w_hi: self.w_hi.zeros_like(),
            w_hf: self.w_hf.zeros_like(),
            w_hc: self.w_hc.zeros_like(),
            w_ho: self.w_ho.zeros_like(),
            w_ci: self.w_ci.zeros_like(),
            w_cf: self.w_cf.zeros_like(),
            w_co: self.w_co.zeros_like(),
            b_i: self.b_i.zeros_like(),
            b_f: self.b_f.zeros_like(),
            b_c: self.b_c.zeros_like(),
            b_o: self.b_o.zeros_like(),
            w_y: self.w_y.zeros_like(),
            b_y: self.b_y.zeros_like(),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hi.shape()[0]
    }

    pub fn input_dim(&self) -> usize {
        self.w_xi.shape()[1]
    }
}

/// Hidden output and memory cell carried across answers.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zero(hidden: usize) -> LstmState {
        LstmState {
            h: vec![0.0; hidden],
            c: vec![0.0; hidden],
        }
    }
}

/// Everything the backward pass needs from one step.
#[derive(Debug, Clone)]
pub struct LstmStepCache {
    pub input: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    pub i: Vec<f64>,
    pub f: Vec<f64>,
    pub g: Vec<f64>, // tanh candidate
    pub o: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
    pub h: Vec<f64>,
}

impl LstmStepCache {
    pub fn state(&self) -> LstmState {
        LstmState {
            h: self.h.clone(),
            c: self.c.clone(),
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn gate_preact(wx: &Tensor, wh: &Tensor, b: &Tensor, x: &[f64], h_prev: &[f64]) -> Vec<f64> {
    let hidden = wx.shape()[0];
    let mut z = b.data().to_vec();
    debug_assert_eq!(z.len(), hidden);
    let in_dim = wx.shape()[1];
    for r in 0..hidden {
        z[r] += crate::tensor::dot(&wx.data()[r * in_dim..(r + 1) * in_dim], x);
        z[r] += crate::tensor::dot(&wh.data()[r * hidden..(r + 1) * hidden], h_prev);
    }
    z
}

/// One LSTM step with full cache.
pub fn lstm_step_cached(input: &[f64], prev: &LstmState, params: &LstmParams) -> Result<LstmStepCache> {
    let hidden = params.hidden();
    if input.len() != params.input_dim() || prev.h.len() != hidden || prev.c.len() != hidden {
        return Err(Error::ShapeMismatch {
            context: "lstm_step".into(),
            expected: format!("input {}, state {}", params.input_dim(), hidden),
            got: format!("input {}, h {}, c {}", input.len(), prev.h.len(), prev.c.len()),
        });
    }

    let mut zi = gate_preact(&params.w_xi, &params.w_hi, &params.b_i, input, &prev.h);
    let mut zf = gate_preact(&params.w_xf, &params.w_hf, &params.b_f, input, &prev.h);
    let zg = gate_preact(&params.w_xc, &params.w_hc, &params.b_c, input, &prev.h);
    // Input and forget peepholes read the previous cell.
    for r in 0..hidden {
        zi[r] += params.w_ci.data()[r] * prev.c[r];
        zf[r] += params.w_cf.data()[r] * prev.c[r];
    }
    let i: Vec<f64> = zi.iter().map(|&z| sigmoid(z)).collect();
    let f: Vec<f64> = zf.iter().map(|&z| sigmoid(z)).collect();
    let g: Vec<f64> = zg.iter().map(|&z| z.tanh()).collect();
    let c: Vec<f64> = (0..hidden).map(|r| f[r] * prev.c[r] + i[r] * g[r]).collect();
    // Output peephole reads the new cell.
    let mut zo = gate_preact(&params.w_xo, &params.w_ho, &params.b_o, input, &prev.h);
    for r in 0..hidden {
        zo[r] += params.w_co.data()[r] * c[r];
    }
    let o: Vec<f64> = zo.iter().map(|&z| sigmoid(z)).collect();
    let tanh_c: Vec<f64> = c.iter().map(|&v| v.tanh()).collect();
    let h: Vec<f64> = (0..hidden).map(|r| o[r] * tanh_c[r]).collect();

    Ok(LstmStepCache {
        input: input.to_vec(),
        h_prev: prev.h.clone(),
        c_prev: prev.c.clone(),
        i,
        f,
        g,
        o,
        c,
        tanh_c,
        h,
    })
}

/// One LSTM step: new (h, c) from the joint representation and previous state.
pub fn lstm_step(input: &[f64], prev: &LstmState, params: &LstmParams) -> Result<LstmState> {
    Ok(lstm_step_cached(input, prev, params)?.state())
}

/// Class logits from a (possibly dropout-masked) hidden vector.
pub fn output_logits(h: &[f64], params: &LstmParams) -> Vec<f64> {
    let mut logits = params.b_y.data().to_vec();
    let hidden = params.w_y.shape()[1];
    for k in 0..NUM_CLASSES {
        logits[k] += crate::tensor::dot(&params.w_y.data()[k * hidden..(k + 1) * hidden], h);
    }
    logits
}

/// Labels a whole answer sequence: one class distribution per answer, left to
/// right, from zero initial state.
pub fn label_sequence(reps: &[Vec<f64>], params: &LstmParams) -> Result<Vec<Vec<f64>>> {
    if reps.is_empty() {
        return Err(Error::EmptyInput("label_sequence over empty answer list"));
    }
    let mut state = LstmState::zero(params.hidden());
    let mut out = Vec::with_capacity(reps.len());
    for rep in reps {
        state = lstm_step(rep, &state, params)?;
        out.push(softmax(&output_logits(&state.h, params))?);
    }
    Ok(out)
}

/// Negative log-likelihood of the gold labels under per-step distributions,
/// with optional per-class weights. Probabilities below 1e-12 are clamped;
/// the clamp count is returned for diagnostics.
pub fn sequence_nll(
    distributions: &[Vec<f64>],
    gold: &[Label],
    class_weights: &[f64; 3],
) -> Result<(f64, usize)> {
    if distributions.len() != gold.len() {
        return Err(Error::ShapeMismatch {
            context: "sequence_nll".into(),
            expected: format!("{} labels", distributions.len()),
            got: format!("{}", gold.len()),
        });
    }
    let mut loss = 0.0;
    let mut clamped = 0usize;
    for (dist, &label) in distributions.iter().zip(gold.iter()) {
        let mut p = dist[label.index()];
        if p < 1e-12 {
            p = 1e-12;
            clamped += 1;
        }
        loss -= class_weights[label.index()] * p.ln();
    }
    Ok((loss, clamped))
}

/// Backprop one step. `dh` is the total gradient on h_t (readout plus
/// recurrent); `dc_in` the cell gradient arriving from the next step.
/// Returns (d_input, dh_prev, dc_prev); parameter gradients accumulate into
/// `grads` (peepholes only ever on the diagonal, by construction).
pub fn lstm_step_backward(
    params: &LstmParams,
    cache: &LstmStepCache,
    dh: &[f64],
    dc_in: &[f64],
    grads: &mut LstmParams,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let hidden = params.hidden();
    let mut dzo = vec![0.0; hidden];
    let mut dc = vec![0.0; hidden];
    for r in 0..hidden {
        let do_r = dh[r] * cache.tanh_c[r];
        dzo[r] = do_r * cache.o[r] * (1.0 - cache.o[r]);
        dc[r] = dh[r] * cache.o[r] * (1.0 - cache.tanh_c[r] * cache.tanh_c[r])
            + dc_in[r]
            + dzo[r] * params.w_co.data()[r];
    }
    let mut dzi = vec![0.0; hidden];
    let mut dzf = vec![0.0; hidden];
    let mut dzg = vec![0.0; hidden];
    let mut dc_prev = vec![0.0; hidden];
    for r in 0..hidden {
        dzg[r] = dc[r] * cache.i[r] * (1.0 - cache.g[r] * cache.g[r]);
        dzi[r] = dc[r] * cache.g[r] * cache.i[r] * (1.0 - cache.i[r]);
        dzf[r] = dc[r] * cache.c_prev[r] * cache.f[r] * (1.0 - cache.f[r]);
        dc_prev[r] = dc[r] * cache.f[r]
            + dzi[r] * params.w_ci.data()[r]
            + dzf[r] * params.w_cf.data()[r];
    }

    // Parameter gradients.
    outer_acc(&mut grads.w_xi, &dzi, &cache.input);
    outer_acc(&mut grads.w_xf, &dzf, &cache.input);
    outer_acc(&mut grads.w_xc, &dzg, &cache.input);
    outer_acc(&mut grads.w_xo, &dzo, &cache.input);
    outer_acc(&mut grads.w_hi, &dzi, &cache.h_prev);
    outer_acc(&mut grads.w_hf, &dzf, &cache.h_prev);
    outer_acc(&mut grads.w_hc, &dzg, &cache.h_prev);
    outer_acc(&mut grads.w_ho, &dzo, &cache.h_prev);
    for r in 0..hidden {
        grads.w_ci.data_mut()[r] += dzi[r] * cache.c_prev[r];
        grads.w_cf.data_mut()[r] += dzf[r] * cache.c_prev[r];
        grads.w_co.data_mut()[r] += dzo[r] * cache.c[r];
        grads.b_i.data_mut()[r] += dzi[r];
        grads.b_f.data_mut()[r] += dzf[r];
        grads.b_c.data_mut()[r] += dzg[r];
        grads.b_o.data_mut()[r] += dzo[r];
    }

    // Flow back to the previous step and the input.
    let mut dh_prev = vec![0.0; hidden];
    matvec_t_acc(&params.w_hi, &dzi, &mut dh_prev);
    matvec_t_acc(&params.w_hf, &dzf, &mut dh_prev);
    matvec_t_acc(&params.w_hc, &dzg, &mut dh_prev);
    matvec_t_acc(&params.w_ho, &dzo, &mut dh_prev);
    let mut d_input = vec![0.0; params.input_dim()];
    matvec_t_acc(&params.w_xi, &dzi, &mut d_input);
    matvec_t_acc(&params.w_xf, &dzf, &mut d_input);
    matvec_t_acc(&params.w_xc, &dzg, &mut d_input);
    matvec_t_acc(&params.w_xo, &dzo, &mut d_input);

    (d_input, dh_prev, dc_prev)
}

/// Gradient of the weighted NLL w.r.t. the logits: w * (p - onehot(gold)).
pub fn nll_logit_grad(probs: &[f64], gold: Label, weight: f64) -> Vec<f64> {
    let mut d: Vec<f64> = probs.iter().map(|&p| weight * p).collect();
    d[gold.index()] -= weight;
    d
}

/// Accumulates the readout-layer gradient and returns the gradient on the
/// (masked) hidden vector.
pub fn output_backward(
    params: &LstmParams,
    h_masked: &[f64],
    d_logits: &[f64],
    grads: &mut LstmParams,
) -> Vec<f64> {
    outer_acc(&mut grads.w_y, d_logits, h_masked);
    for (g, d) in grads.b_y.data_mut().iter_mut().zip(d_logits.iter()) {
        *g += d;
    }
    let mut dh = vec![0.0; params.hidden()];
    matvec_t_acc(&params.w_y, d_logits, &mut dh);
    dh
}
