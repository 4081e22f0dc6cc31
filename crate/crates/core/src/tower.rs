//! Convolutional sentence model: a fixed stack of conv -> max-pool -> ReLU
//! layers over the sentence grid, flattened into a dense projection that
//! yields the sentence representation vector.
//!
//! The activation is applied after pooling, and the first layer's 1x1
//! convolution fans the single input map out to the configured number of
//! feature maps.

use crate::error::{Error, Result};
use crate::ops::{activate, activate_backward, conv2d, conv2d_backward, pool2d, pool2d_backward, Activation};
use crate::rng::Rng;
use crate::tensor::{matvec, matvec_t_acc, outer_acc, Tensor};

/// One conv+pool layer of the stack.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvLayerSpec {
    pub conv: (usize, usize),
    pub pool: (usize, usize),
    pub maps: usize,
}

impl ConvLayerSpec {
    pub fn new(conv: (usize, usize), pool: (usize, usize), maps: usize) -> Self {
        ConvLayerSpec { conv, pool, maps }
    }
}

/// The standard three-layer stack: conv windows [1x1, 2x2, 2x2], pool
/// windows [2x2, 2x2, 1x1], `maps` feature maps per layer.
pub fn default_layer_specs(maps: usize) -> Vec<ConvLayerSpec> {
    vec![
        ConvLayerSpec::new((1, 1), (2, 2), maps),
        ConvLayerSpec::new((2, 2), (2, 2), maps),
        ConvLayerSpec::new((2, 2), (1, 1), maps),
    ]
}

/// Shapes produced by one layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub after_conv: (usize, usize),
    pub after_pool: (usize, usize),
}

/// Pure shape arithmetic for the stack: conv (H,W) -> (H-h+1, W-w+1), pool
/// (H,W) -> (floor(H/h), floor(W/w)). Errors if any dimension collapses.
pub fn output_shape(input: (usize, usize), specs: &[ConvLayerSpec]) -> Result<Vec<LayerShape>> {
    let (mut h, mut w) = input;
    let mut out = Vec::with_capacity(specs.len());
    for (i, spec) in specs.iter().enumerate() {
        let layer = i + 1;
        if spec.conv.0 == 0 || spec.conv.1 == 0 || spec.pool.0 == 0 || spec.pool.1 == 0 || spec.maps == 0
        {
            return Err(Error::Config(format!(
                "layer {layer}: window dims and feature maps must be at least 1"
            )));
        }
        let (ch, cw) = spec.conv;
        let ch_out = h as isize - ch as isize + 1;
        let cw_out = w as isize - cw as isize + 1;
        if ch_out < 1 || cw_out < 1 {
            return Err(Error::DegenerateShape {
                layer,
                stage: "conv",
                rows: ch_out,
                cols: cw_out,
            });
        }
        let (ph, pw) = spec.pool;
        let ph_out = ch_out as usize / ph;
        let pw_out = cw_out as usize / pw;
        if ph_out < 1 || pw_out < 1 {
            return Err(Error::DegenerateShape {
                layer,
                stage: "pool",
                rows: ph_out as isize,
                cols: pw_out as isize,
            });
        }
        out.push(LayerShape {
            after_conv: (ch_out as usize, cw_out as usize),
            after_pool: (ph_out, pw_out),
        });
        h = ph_out;
        w = pw_out;
    }
    Ok(out)
}

/// Trainable state of one tower: per-layer kernels/biases plus the dense
/// projection mapping the flattened final maps to the sentence vector.
#[derive(Debug, Clone, PartialEq)]
pub struct TowerParams {
    pub kernels: Vec<Tensor>, // [maps_out, maps_in, kh, kw] per layer
    pub biases: Vec<Tensor>,  // [maps_out] per layer
    pub proj_w: Tensor,       // [sentence_dim, flat]
    pub proj_b: Tensor,       // [sentence_dim]
}

impl TowerCache {
    /// Post-pool map-stack shape per layer, [maps, h, w].
    pub fn layer_shapes(&self) -> Vec<Vec<usize>> {
        self.act_outs.iter().map(|t| t.shape().to_vec()).collect()
    }
}

impl TowerParams {
    /// Seeded init. Kernels and projection use Glorot-style uniform, biases 0.
    pub fn init(
        input: (usize, usize),
        specs: &[ConvLayerSpec],
        sentence_dim: usize,
        rng: &mut Rng,
    ) -> Result<TowerParams> {
        let shapes = output_shape(input, specs)?;
        let mut kernels = Vec::new();
        let mut biases = Vec::new();
        let mut in_maps = 1usize;
        for spec in specs {
            let (kh, kw) = spec.conv;
            let fan_in = in_maps * kh * kw;
            let fan_out = spec.maps * kh * kw;
            kernels.push(Tensor::glorot(
                &[spec.maps, in_maps, kh, kw],
                fan_in,
                fan_out,
                rng,
            ));
            biases.push(Tensor::zeros(&[spec.maps]));
            in_maps = spec.maps;
        }
        let last = shapes.last().expect("at least one layer");
        let flat = in_maps * last.after_pool.0 * last.after_pool.1;
        let proj_w = Tensor::glorot(&[sentence_dim, flat], flat, sentence_dim, rng);
        let proj_b = Tensor::zeros(&[sentence_dim]);
        Ok(TowerParams {
            kernels,
            biases,
            proj_w,
            proj_b,
        })
    }

    pub fn zeros_like(&self) -> TowerParams {
        TowerParams {
            kernels: self.kernels.iter().map(Tensor::zeros_like).collect(),
            biases: self.biases.iter().map(Tensor::zeros_like).collect(),
            proj_w: self.proj_w.zeros_like(),
            proj_b: self.proj_b.zeros_like(),
        }
    }
}

/// Activations cached by the forward pass for backprop.
pub struct TowerCache {
    layer_inputs: Vec<Tensor>, // input map stack per layer
    act_outs: Vec<Tensor>,     // post-activation maps per layer
    argmaxes: Vec<Vec<usize>>,
    flat: Vec<f64>,
    pub rep: Vec<f64>, // post-activation sentence representation
}

/// Runs the stack over a grid (as a single input map) and projects to the
/// sentence representation. Layer order inside each block is conv, pool,
/// activation.
pub fn tower_forward(
    grid: &Tensor,
    params: &TowerParams,
    specs: &[ConvLayerSpec],
    act: Activation,
) -> Result<TowerCache> {
    let (rows, cols) = (grid.shape()[0], grid.shape()[1]);
    // Validate the whole chain before touching any layer.
    output_shape((rows, cols), specs)?;

    let mut current = Tensor::from_vec(&[1, rows, cols], grid.data().to_vec())?;
    let mut layer_inputs = Vec::with_capacity(specs.len());
    let mut act_outs = Vec::with_capacity(specs.len());
    let mut argmaxes = Vec::with_capacity(specs.len());

    for (i, spec) in specs.iter().enumerate() {
        let conved = conv2d(&current, &params.kernels[i], &params.biases[i]).map_err(|e| {
            Error::ShapeMismatch {
                context: format!("tower layer {}", i + 1),
                expected: "compatible conv shapes".into(),
                got: e.to_string(),
            }
        })?;
        let (pooled, argmax) = pool2d(&conved, spec.pool)?;
        let activated = activate(&pooled, act);
        layer_inputs.push(current);
        argmaxes.push(argmax);
        current = activated.clone();
        act_outs.push(activated);
    }

    let flat = current.data().to_vec();
    let expected = params.proj_w.shape()[1];
    if flat.len() != expected {
        return Err(Error::ShapeMismatch {
            context: "tower projection".into(),
            expected: format!("flattened length {expected}"),
            got: format!("{}", flat.len()),
        });
    }
    let out_dim = params.proj_w.shape()[0];
    let mut pre = vec![0.0; out_dim];
    matvec(&params.proj_w, &flat, &mut pre);
    for (p, b) in pre.iter_mut().zip(params.proj_b.data()) {
        *p += b;
    }
    let rep: Vec<f64> = pre.iter().map(|&x| act.apply(x)).collect();

    Ok(TowerCache {
        layer_inputs,
        act_outs,
        argmaxes,
        flat,
        rep,
    })
}

/// Backprop through the tower. Returns parameter gradients (accumulated into
/// `grads`) and the gradient w.r.t. the input grid.
pub fn tower_backward(
    params: &TowerParams,
    specs: &[ConvLayerSpec],
    cache: &TowerCache,
    upstream: &[f64],
    act: Activation,
    grads: &mut TowerParams,
) -> Tensor {
    // Through the projection activation.
    let mut d_pre: Vec<f64> = upstream
        .iter()
        .zip(cache.rep.iter())
        .map(|(u, y)| u * act.dydx_from_output(*y))
        .collect();

    outer_acc(&mut grads.proj_w, &d_pre, &cache.flat);
    for (g, d) in grads.proj_b.data_mut().iter_mut().zip(d_pre.iter()) {
        *g += d;
    }
    let mut d_flat = vec![0.0; cache.flat.len()];
    matvec_t_acc(&params.proj_w, &d_pre, &mut d_flat);
    d_pre.clear();

    // Unflatten to the last layer's map stack.
    let last_shape = cache.act_outs.last().expect("nonempty stack").shape().to_vec();
    let mut d_current = Tensor::from_vec(&last_shape, d_flat).expect("flat length matches");

    for i in (0..specs.len()).rev() {
        let d_pool = activate_backward(&cache.act_outs[i], &d_current, act);
        // argmax indices point into the conv output, so scatter there.
        let conv_shape = conv_output_shape(&cache.layer_inputs[i], &params.kernels[i]);
        let d_conv = pool2d_backward(&conv_shape, &cache.argmaxes[i], &d_pool);
        let (dk, db, d_input) = conv2d_backward(&cache.layer_inputs[i], &params.kernels[i], &d_conv);
        add_into(&mut grads.kernels[i], &dk);
        add_into(&mut grads.biases[i], &db);
        d_current = d_input;
    }

    // Strip the leading single-map axis back to the 2-D grid.
    let (h, w) = (d_current.shape()[1], d_current.shape()[2]);
    Tensor::from_vec(&[h, w], d_current.data().to_vec()).expect("grid shape")
}

fn conv_output_shape(input: &Tensor, kernels: &Tensor) -> Vec<usize> {
    let (h, w) = (input.shape()[1], input.shape()[2]);
    let (out_maps, kh, kw) = (kernels.shape()[0], kernels.shape()[2], kernels.shape()[3]);
    vec![out_maps, h - kh + 1, w - kw + 1]
}

fn add_into(dst: &mut Tensor, src: &Tensor) {
    for (d, s) in dst.data_mut().iter_mut().zip(src.data().iter()) {
        *d += s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_chain_shape_arithmetic() {
        // 49x100 through conv [1x1,2x2,2x2] / pool [2x2,2x2,1x1]
        let shapes = output_shape((49, 100), &default_layer_specs(100)).unwrap();
        assert_eq!(shapes[0].after_pool, (24, 50));
        assert_eq!(shapes[1].after_pool, (11, 24));
        assert_eq!(shapes[2].after_pool, (10, 23));
        assert_eq!(shapes[0].after_conv, (49, 100));
        assert_eq!(shapes[1].after_conv, (23, 49));
        assert_eq!(shapes[2].after_conv, (10, 23));
    }

    #[test]
    fn window_exceeding_input_errors() {
        let specs = vec![ConvLayerSpec::new((3, 3), (1, 1), 1)];
        let err = output_shape((2, 2), &specs).unwrap_err();
        assert!(err.to_string().contains("layer 1"));
    }

    #[test]
    fn identity_specs_keep_shape() {
        let specs = vec![ConvLayerSpec::new((1, 1), (1, 1), 1)];
        let shapes = output_shape((7, 13), &specs).unwrap();
        assert_eq!(shapes[0].after_pool, (7, 13));
    }

    #[test]
    fn zero_windows_rejected() {
        for spec in [
            ConvLayerSpec::new((0, 1), (1, 1), 1),
            ConvLayerSpec::new((1, 1), (0, 1), 1),
            ConvLayerSpec::new((1, 1), (1, 1), 0),
        ] {
            assert!(output_shape((7, 13), &[spec]).is_err());
        }
    }

    #[test]
    fn forward_shapes_agree_with_output_shape() {
        let mut rng = Rng::seed(17, 0);
        let specs = vec![
            ConvLayerSpec::new((1, 1), (2, 2), 3),
            ConvLayerSpec::new((2, 2), (2, 2), 3),
        ];
        let grid = Tensor::uniform(&[9, 10], 1.0, &mut rng);
        let params = TowerParams::init((9, 10), &specs, 5, &mut rng).unwrap();
        let cache = tower_forward(&grid, &params, &specs, Activation::Relu).unwrap();
        let shapes = output_shape((9, 10), &specs).unwrap();
        for (i, s) in shapes.iter().enumerate() {
            assert_eq!(
                cache.act_outs[i].shape(),
                &[specs[i].maps, s.after_pool.0, s.after_pool.1]
            );
        }
        assert_eq!(cache.rep.len(), 5);
    }

    #[test]
    fn zero_grid_zero_bias_gives_zero_representation() {
        let mut rng = Rng::seed(23, 0);
        let specs = default_layer_specs(2);
        let grid = Tensor::zeros(&[11, 12]);
        let params = TowerParams::init((11, 12), &specs, 4, &mut rng).unwrap();
        let cache = tower_forward(&grid, &params, &specs, Activation::Relu).unwrap();
        assert!(cache.rep.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn relu_representation_nonnegative() {
        let mut rng = Rng::seed(29, 0);
        let specs = default_layer_specs(2);
        for _ in 0..5 {
            let grid = Tensor::uniform(&[11, 12], 1.0, &mut rng);
            let params = TowerParams::init((11, 12), &specs, 4, &mut rng).unwrap();
            let cache = tower_forward(&grid, &params, &specs, Activation::Relu).unwrap();
            assert!(cache.rep.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn single_identity_layer_is_activation_of_input() {
        // 1x1 conv with weight 1 and bias 0, 1x1 pool: tower output before the
        // projection equals activation(input).
        let specs = vec![ConvLayerSpec::new((1, 1), (1, 1), 1)];
        let grid = Tensor::from_vec(&[2, 2], vec![1.0, -2.0, 0.5, -0.1]).unwrap();
        let mut rng = Rng::seed(31, 0);
        let mut params = TowerParams::init((2, 2), &specs, 4, &mut rng).unwrap();
        params.kernels[0] = Tensor::from_vec(&[1, 1, 1, 1], vec![1.0]).unwrap();
        params.biases[0] = Tensor::zeros(&[1]);
        let cache = tower_forward(&grid, &params, &specs, Activation::Relu).unwrap();
        assert_eq!(cache.act_outs[0].data(), &[1.0, 0.0, 0.5, 0.0]);
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut rng = Rng::seed(37, 0);
        let specs = default_layer_specs(2);
        let grid = Tensor::uniform(&[11, 12], 1.0, &mut rng);
        let params = TowerParams::init((11, 12), &specs, 4, &mut rng).unwrap();
        let cache = tower_forward(&grid, &params, &specs, Activation::Relu).unwrap();
        let mut grads = params.zeros_like();
        let d_grid = tower_backward(
            &params,
            &specs,
            &cache,
            &vec![0.0; 4],
            Activation::Relu,
            &mut grads,
        );
        assert!(grads.proj_w.data().iter().all(|&v| v == 0.0));
        assert!(grads.kernels.iter().all(|k| k.data().iter().all(|&v| v == 0.0)));
        assert!(d_grid.data().iter().all(|&v| v == 0.0));
    }
}
