use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ParamVector;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }

    pub fn code(self) -> u32 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Tanh),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }
}

/// Where one affine layer lives inside the flat parameter vector.
///
/// The weight block is `fan_in x fan_out`, row-major, starting at
/// `offset`; the `fan_out` biases follow immediately after it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerShape {
    pub fan_in: usize,
    pub fan_out: usize,
    pub offset: usize,
}

impl LayerShape {
    pub fn weight_len(&self) -> usize {
        self.fan_in * self.fan_out
    }

    pub fn bias_offset(&self) -> usize {
        self.offset + self.weight_len()
    }

    pub fn end(&self) -> usize {
        self.bias_offset() + self.fan_out
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkArchitecture {
    pub input_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub activation: Activation,
    pub output_dim: usize,
}

impl NetworkArchitecture {
    pub fn new(
        input_dim: usize,
        hidden_widths: Vec<usize>,
        activation: Activation,
        output_dim: usize,
    ) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 {
            return Err(Error::contract("input and output dims must be >= 1"));
        }
        if hidden_widths.is_empty() || hidden_widths.contains(&0) {
            return Err(Error::contract(
                "hidden_widths must be non-empty with every width >= 1",
            ));
        }
        Ok(NetworkArchitecture {
            input_dim,
            hidden_widths,
            activation,
            output_dim,
        })
    }

    /// Layer shapes in forward order.
    pub fn layers(&self) -> Vec<LayerShape> {
        let mut dims = Vec::with_capacity(self.hidden_widths.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden_widths);
        dims.push(self.output_dim);
        let mut offset = 0;
        dims.windows(2)
            .map(|w| {
                let shape = LayerShape {
                    fan_in: w[0],
                    fan_out: w[1],
                    offset,
                };
                offset = shape.end();
                shape
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers().last().map_or(0, LayerShape::end)
    }

    /// He-uniform weights (bound `sqrt(6 / fan_in)`) and biases drawn from
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector {
        let mut params = ParamVector::zeros(self.param_count());
        for layer in self.layers() {
            let w_bound = (6.0 / layer.fan_in as f64).sqrt();
            let b_bound = 1.0 / (layer.fan_in as f64).sqrt();
            for w in &mut params[layer.offset..layer.bias_offset()] {
                *w = rng.random_range(-w_bound..w_bound);
            }
            for b in &mut params[layer.bias_offset()..layer.end()] {
                *b = rng.random_range(-b_bound..b_bound);
            }
        }
        params
    }

    pub(crate) fn check_params(&self, params: &[f64]) -> Result<()> {
        let expected = self.param_count();
        if params.len() != expected {
            return Err(Error::DimensionMismatch {
                what: "parameter vector",
                expected,
                got: params.len(),
            });
        }
        Ok(())
    }
}

fn weights<'p>(params: &'p [f64], layer: &LayerShape) -> ArrayView2<'p, f64> {
    ArrayView2::from_shape(
        (layer.fan_in, layer.fan_out),
        &params[layer.offset..layer.bias_offset()],
    )
    .expect("layer slice matches its shape")
}

fn biases<'p>(params: &'p [f64], layer: &LayerShape) -> ArrayView1<'p, f64> {
    ArrayView1::from(&params[layer.bias_offset()..layer.end()])
}

/// Cached activations of one batched forward pass.
///
/// `inputs[l]` is the input to layer `l` (so `inputs[0]` is the batch
/// itself); the last layer is affine with no activation.
pub struct ForwardPass<'a> {
    arch: &'a NetworkArchitecture,
    params: &'a [f64],
    inputs: Vec<Array2<f64>>,
    output: Array2<f64>,
}

pub fn forward_batch<'a>(
    params: &'a [f64],
    arch: &'a NetworkArchitecture,
    batch: ArrayView2<'_, f64>,
) -> Result<ForwardPass<'a>> {
    arch.check_params(params)?;
    if batch.ncols() != arch.input_dim {
        return Err(Error::DimensionMismatch {
            what: "network input",
            expected: arch.input_dim,
            got: batch.ncols(),
        });
    }
    let layers = arch.layers();
    let mut inputs = Vec::with_capacity(layers.len());
    let mut current = batch.to_owned();
    for (idx, layer) in layers.iter().enumerate() {
        let mut next = Array2::zeros((current.nrows(), layer.fan_out));
        next.assign(&biases(params, layer).broadcast((current.nrows(), layer.fan_out)).unwrap());
        general_mat_mul(1.0, &current, &weights(params, layer), 1.0, &mut next);
        if idx + 1 < layers.len() {
            next.mapv_inplace(|x| arch.activation.apply(x));
        }
        inputs.push(std::mem::replace(&mut current, next));
    }
    Ok(ForwardPass {
        arch,
        params,
        inputs,
        output: current,
    })
}

impl<'a> ForwardPass<'a> {
    pub fn output(&self) -> ArrayView2<'_, f64> {
        self.output.view()
    }

    pub fn batch_len(&self) -> usize {
        self.output.nrows()
    }

    /// First output column, for scalar-output networks.
    pub fn values(&self) -> Vec<f64> {
        self.output.column(0).to_vec()
    }

    /// Per-layer output deltas `dL/dz_l` for the given output seeds.
    fn layer_deltas(&self, seeds: ArrayView2<'_, f64>) -> Result<Vec<Array2<f64>>> {
        if seeds.dim() != self.output.dim() {
            return Err(Error::DimensionMismatch {
                what: "backward seeds",
                expected: self.output.len(),
                got: seeds.len(),
            });
        }
        let layers = self.arch.layers();
        let mut deltas = vec![Array2::zeros((0, 0)); layers.len()];
        let mut delta = seeds.to_owned();
        for l in (0..layers.len()).rev() {
            if l > 0 {
                let w = weights(self.params, &layers[l]);
                let mut prev = Array2::zeros((delta.nrows(), layers[l].fan_in));
                general_mat_mul(1.0, &delta, &w.t(), 0.0, &mut prev);
                let act = self.arch.activation;
                prev.zip_mut_with(&self.inputs[l], |d, &h| *d *= act.derivative_from_output(h));
                deltas[l] = std::mem::replace(&mut delta, prev);
            } else {
                deltas[0] = std::mem::replace(&mut delta, Array2::zeros((0, 0)));
            }
        }
        Ok(deltas)
    }

    /// Reverse-mode gradient of `sum_i <seeds_i, output_i>` with respect to
    /// every parameter.
    pub fn backward(&self, seeds: ArrayView2<'_, f64>) -> Result<ParamVector> {
        let layers = self.arch.layers();
        let deltas = self.layer_deltas(seeds)?;
        let mut grad = ParamVector::zeros(self.params.len());
        for (l, layer) in layers.iter().enumerate() {
            let delta = &deltas[l];
            {
                let mut gw = ArrayViewMut2::from_shape(
                    (layer.fan_in, layer.fan_out),
                    &mut grad[layer.offset..layer.bias_offset()],
                )
                .expect("layer slice matches its shape");
                general_mat_mul(1.0, &self.inputs[l].t(), delta, 0.0, &mut gw);
            }
            let gb = &mut grad[layer.bias_offset()..layer.end()];
            for row in delta.axis_iter(Axis(0)) {
                for (g, d) in gb.iter_mut().zip(row) {
                    *g += d;
                }
            }
        }
        Ok(grad)
    }

    /// Backward pass for a scalar-output network with one seed per sample.
    pub fn backward_scalar(&self, seeds: &[f64]) -> Result<ParamVector> {
        if self.arch.output_dim != 1 {
            return Err(Error::contract("backward_scalar needs a scalar-output network"));
        }
        let seeds = ArrayView2::from_shape((seeds.len(), 1), seeds).expect("column view");
        self.backward(seeds)
    }
}

/// Single-input forward pass.
pub fn forward(params: &ParamVector, arch: &NetworkArchitecture, x: &[f64]) -> Result<Vec<f64>> {
    let input = ArrayView2::from_shape((1, x.len()), x).expect("row view");
    let pass = forward_batch(params, arch, input)?;
    Ok(pass.output.row(0).to_vec())
}

/// Exact gradient of the scalar output at `x` with respect to all parameters.
pub fn grad_value(
    params: &ParamVector,
    arch: &NetworkArchitecture,
    x: &[f64],
) -> Result<ParamVector> {
    if arch.output_dim != 1 {
        return Err(Error::contract(format!(
            "grad_value needs a scalar-output network, got output_dim {}",
            arch.output_dim
        )));
    }
    let input = ArrayView2::from_shape((1, x.len()), x).expect("row view");
    let pass = forward_batch(params, arch, input)?;
    pass.backward_scalar(&[1.0])
}

/// Inner products between per-sample parameter gradients of paired inputs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradDots {
    /// `<grad V(x_i), grad V(y_i)>`
    pub cross: f64,
    /// `|grad V(x_i)|^2`
    pub x_norm_sq: f64,
    /// `|grad V(y_i)|^2`
    pub y_norm_sq: f64,
}

impl GradDots {
    /// Cosine of the angle between the two gradients, 0 when either vanishes.
    pub fn cosine(&self) -> f64 {
        let denom = (self.x_norm_sq * self.y_norm_sq).sqrt();
        if denom > 0.0 {
            (self.cross / denom).clamp(-1.0, 1.0)
        } else {
            0.0
        }
    }
}

/// Per-sample gradient inner products for row-paired batches `xs`, `ys`,
/// without materialising any per-sample gradient.
///
/// Each layer's weight gradient for one sample is the outer product of its
/// input and output delta, so `<dW(x), dW(y)> = (h_x . h_y)(d_x . d_y)` and
/// the bias contributes `d_x . d_y`.
pub fn per_sample_grad_dots(
    params: &ParamVector,
    arch: &NetworkArchitecture,
    xs: ArrayView2<'_, f64>,
    ys: ArrayView2<'_, f64>,
) -> Result<Vec<GradDots>> {
    if arch.output_dim != 1 {
        return Err(Error::contract("per-sample gradients need a scalar-output network"));
    }
    if xs.nrows() != ys.nrows() {
        return Err(Error::DimensionMismatch {
            what: "paired batch",
            expected: xs.nrows(),
            got: ys.nrows(),
        });
    }
    let n = xs.nrows();
    let px = forward_batch(params, arch, xs)?;
    let py = forward_batch(params, arch, ys)?;
    let ones = Array2::from_elem((n, 1), 1.0);
    let dx = px.layer_deltas(ones.view())?;
    let dy = py.layer_deltas(ones.view())?;
    let row_dot = |a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>| -> f64 {
        a.iter().zip(b.iter()).map(|(p, q)| p * q).sum()
    };
    let mut out = vec![
        GradDots {
            cross: 0.0,
            x_norm_sq: 0.0,
            y_norm_sq: 0.0,
        };
        n
    ];
    for l in 0..dx.len() {
        let (hx, hy) = (&px.inputs[l], &py.inputs[l]);
        let (ex, ey) = (&dx[l], &dy[l]);
        for (i, slot) in out.iter_mut().enumerate() {
            let (hxi, hyi, exi, eyi) = (hx.row(i), hy.row(i), ex.row(i), ey.row(i));
            slot.cross += (row_dot(hxi, hyi) + 1.0) * row_dot(exi, eyi);
            slot.x_norm_sq += (row_dot(hxi, hxi) + 1.0) * row_dot(exi, exi);
            slot.y_norm_sq += (row_dot(hyi, hyi) + 1.0) * row_dot(eyi, eyi);
        }
    }
    Ok(out)
}
