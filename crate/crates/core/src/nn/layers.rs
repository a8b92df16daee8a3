//! The fixed layer vocabulary: dense, strided convolution, transposed
//! convolution, ReLU and sigmoid. Each layer works on one sample at a time,
//! stored channel-major (`[channels, height, width]` flattened).

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Layer {
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Conv2d {
        geometry: ConvGeometry,
    },
    ConvTranspose2d {
        geometry: ConvGeometry,
        output_padding: usize,
    },
    Relu {
        size: usize,
    },
    Sigmoid {
        size: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    /// Input height.
    pub height: usize,
    /// Input width.
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    fn conv_out(&self) -> (usize, usize) {
        let h = (self.height + 2 * self.padding - self.kernel) / self.stride + 1;
        let w = (self.width + 2 * self.padding - self.kernel) / self.stride + 1;
        (h, w)
    }

    fn transposed_out(&self, output_padding: usize) -> (usize, usize) {
        let h = (self.height - 1) * self.stride + self.kernel + output_padding - 2 * self.padding;
        let w = (self.width - 1) * self.stride + self.kernel + output_padding - 2 * self.padding;
        (h, w)
    }

    fn weight_count(&self) -> usize {
        self.in_channels * self.out_channels * self.kernel * self.kernel
    }
}

impl Layer {
    pub fn input_size(&self) -> usize {
        match self {
            Layer::Dense { inputs, .. } => *inputs,
            Layer::Conv2d { geometry } | Layer::ConvTranspose2d { geometry, .. } => {
                geometry.in_channels * geometry.height * geometry.width
            }
            Layer::Relu { size } | Layer::Sigmoid { size } => *size,
        }
    }

    pub fn output_size(&self) -> usize {
        match self {
            Layer::Dense { outputs, .. } => *outputs,
            Layer::Conv2d { geometry } => {
                let (h, w) = geometry.conv_out();
                geometry.out_channels * h * w
            }
            Layer::ConvTranspose2d {
                geometry,
                output_padding,
            } => {
                let (h, w) = geometry.transposed_out(*output_padding);
                geometry.out_channels * h * w
            }
            Layer::Relu { size } | Layer::Sigmoid { size } => *size,
        }
    }

    /// Spatial output `(channels, height, width)` for convolutional layers.
    pub fn output_volume(&self) -> Option<(usize, usize, usize)> {
        match self {
            Layer::Conv2d { geometry } => {
                let (h, w) = geometry.conv_out();
                Some((geometry.out_channels, h, w))
            }
            Layer::ConvTranspose2d {
                geometry,
                output_padding,
            } => {
                let (h, w) = geometry.transposed_out(*output_padding);
                Some((geometry.out_channels, h, w))
            }
            _ => None,
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Layer::Dense { inputs, outputs } => inputs * outputs + outputs,
            Layer::Conv2d { geometry } | Layer::ConvTranspose2d { geometry, .. } => {
                geometry.weight_count() + geometry.out_channels
            }
            Layer::Relu { .. } | Layer::Sigmoid { .. } => 0,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Dense { .. } => "dense",
            Layer::Conv2d { .. } => "conv",
            Layer::ConvTranspose2d { .. } => "transposed_conv",
            Layer::Relu { .. } => "relu",
            Layer::Sigmoid { .. } => "sigmoid",
        }
    }

    /// He-normal weights, zero biases.
    pub fn init_params<R: Rng>(&self, params: &mut [f64], rng: &mut R) {
        let fan_in = match self {
            Layer::Dense { inputs, .. } => *inputs,
            Layer::Conv2d { geometry } => geometry.in_channels * geometry.kernel * geometry.kernel,
            Layer::ConvTranspose2d { geometry, .. } => {
                // Each output pixel receives roughly in_channels * (kernel / stride)^2 taps.
                let taps = (geometry.kernel as f64 / geometry.stride as f64).powi(2);
                ((geometry.in_channels as f64 * taps).round() as usize).max(1)
            }
            Layer::Relu { .. } | Layer::Sigmoid { .. } => return,
        };
        let std = (2.0 / fan_in as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        let weights = self.param_count() - self.bias_count();
        for p in params[..weights].iter_mut() {
            *p = normal.sample(rng);
        }
        for p in params[weights..].iter_mut() {
            *p = 0.0;
        }
    }

    fn bias_count(&self) -> usize {
        match self {
            Layer::Dense { outputs, .. } => *outputs,
            Layer::Conv2d { geometry } | Layer::ConvTranspose2d { geometry, .. } => geometry.out_channels,
            _ => 0,
        }
    }

    pub fn forward(&self, params: &[f64], input: &[f64], output: &mut [f64]) {
        match self {
            Layer::Dense { inputs, outputs } => {
                let (w, b) = params.split_at(inputs * outputs);
                for o in 0..*outputs {
                    let row = &w[o * inputs..(o + 1) * inputs];
                    output[o] = b[o] + dot(row, input);
                }
            }
            Layer::Conv2d { geometry: g } => conv_forward(g, params, input, output),
            Layer::ConvTranspose2d {
                geometry: g,
                output_padding,
            } => transposed_forward(g, *output_padding, params, input, output),
            Layer::Relu { .. } => {
                for (o, &x) in output.iter_mut().zip(input) {
                    *o = if x > 0.0 { x } else { 0.0 };
                }
            }
            Layer::Sigmoid { .. } => {
                for (o, &x) in output.iter_mut().zip(input) {
                    *o = sigmoid(x);
                }
            }
        }
    }

    /// Accumulates parameter gradients into `param_grad` and writes the input
    /// cotangent into `grad_in`.
    pub fn backward(
        &self,
        params: &[f64],
        input: &[f64],
        output: &[f64],
        grad_out: &[f64],
        param_grad: &mut [f64],
        grad_in: &mut [f64],
    ) {
        match self {
            Layer::Dense { inputs, outputs } => {
                let (w, _) = params.split_at(inputs * outputs);
                let (gw, gb) = param_grad.split_at_mut(inputs * outputs);
                grad_in.iter_mut().for_each(|g| *g = 0.0);
                for o in 0..*outputs {
                    let go = grad_out[o];
                    if go == 0.0 {
                        continue;
                    }
                    gb[o] += go;
                    let row = &w[o * inputs..(o + 1) * inputs];
                    let grow = &mut gw[o * inputs..(o + 1) * inputs];
                    for i in 0..*inputs {
                        grow[i] += go * input[i];
                        grad_in[i] += go * row[i];
                    }
                }
            }
            Layer::Conv2d { geometry: g } => conv_backward(g, params, input, grad_out, param_grad, grad_in),
            Layer::ConvTranspose2d {
                geometry: g,
                output_padding,
            } => transposed_backward(g, *output_padding, params, input, grad_out, param_grad, grad_in),
            Layer::Relu { .. } => {
                for ((gi, &go), &x) in grad_in.iter_mut().zip(grad_out).zip(input) {
                    *gi = if x > 0.0 { go } else { 0.0 };
                }
            }
            Layer::Sigmoid { .. } => {
                for ((gi, &go), &y) in grad_in.iter_mut().zip(grad_out).zip(output) {
                    *gi = go * y * (1.0 - y);
                }
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// weights: [out, in, k, k]
fn conv_forward(g: &ConvGeometry, params: &[f64], input: &[f64], output: &mut [f64]) {
    let (oh, ow) = g.conv_out();
    let k = g.kernel;
    let (w, b) = params.split_at(g.weight_count());
    for co in 0..g.out_channels {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = b[co];
                for ci in 0..g.in_channels {
                    let wbase = (co * g.in_channels + ci) * k * k;
                    let ibase = ci * g.height * g.width;
                    for ky in 0..k {
                        let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                        if iy < 0 || iy >= g.height as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                            if ix < 0 || ix >= g.width as isize {
                                continue;
                            }
                            acc += w[wbase + ky * k + kx]
                                * input[ibase + iy as usize * g.width + ix as usize];
                        }
                    }
                }
                output[(co * oh + oy) * ow + ox] = acc;
            }
        }
    }
}

fn conv_backward(
    g: &ConvGeometry,
    params: &[f64],
    input: &[f64],
    grad_out: &[f64],
    param_grad: &mut [f64],
    grad_in: &mut [f64],
) {
    let (oh, ow) = g.conv_out();
    let k = g.kernel;
    let (w, _) = params.split_at(g.weight_count());
    let (gw, gb) = param_grad.split_at_mut(g.weight_count());
    grad_in.iter_mut().for_each(|v| *v = 0.0);
    for co in 0..g.out_channels {
        for oy in 0..oh {
            for ox in 0..ow {
                let go = grad_out[(co * oh + oy) * ow + ox];
                if go == 0.0 {
                    continue;
                }
                gb[co] += go;
                for ci in 0..g.in_channels {
                    let wbase = (co * g.in_channels + ci) * k * k;
                    let ibase = ci * g.height * g.width;
                    for ky in 0..k {
                        let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                        if iy < 0 || iy >= g.height as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                            if ix < 0 || ix >= g.width as isize {
                                continue;
                            }
                            let ii = ibase + iy as usize * g.width + ix as usize;
                            gw[wbase + ky * k + kx] += go * input[ii];
                            grad_in[ii] += go * w[wbase + ky * k + kx];
                        }
                    }
                }
            }
        }
    }
}

// weights: [in, out, k, k]
fn transposed_forward(g: &ConvGeometry, output_padding: usize, params: &[f64], input: &[f64], output: &mut [f64]) {
    let (oh, ow) = g.transposed_out(output_padding);
    let k = g.kernel;
    let (w, b) = params.split_at(g.weight_count());
    for co in 0..g.out_channels {
        output[co * oh * ow..(co + 1) * oh * ow]
            .iter_mut()
            .for_each(|v| *v = b[co]);
    }
    for ci in 0..g.in_channels {
        for iy in 0..g.height {
            for ix in 0..g.width {
                let x = input[(ci * g.height + iy) * g.width + ix];
                if x == 0.0 {
                    continue;
                }
                for co in 0..g.out_channels {
                    let wbase = (ci * g.out_channels + co) * k * k;
                    for ky in 0..k {
                        let oy = (iy * g.stride + ky) as isize - g.padding as isize;
                        if oy < 0 || oy >= oh as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ox = (ix * g.stride + kx) as isize - g.padding as isize;
                            if ox < 0 || ox >= ow as isize {
                                continue;
                            }
                            output[(co * oh + oy as usize) * ow + ox as usize] += x * w[wbase + ky * k + kx];
                        }
                    }
                }
            }
        }
    }
}

fn transposed_backward(
    g: &ConvGeometry,
    output_padding: usize,
    params: &[f64],
    input: &[f64],
    grad_out: &[f64],
    param_grad: &mut [f64],
    grad_in: &mut [f64],
) {
    let (oh, ow) = g.transposed_out(output_padding);
    let k = g.kernel;
    let (w, _) = params.split_at(g.weight_count());
    let (gw, gb) = param_grad.split_at_mut(g.weight_count());
    for co in 0..g.out_channels {
        gb[co] += grad_out[co * oh * ow..(co + 1) * oh * ow].iter().sum::<f64>();
    }
    for ci in 0..g.in_channels {
        for iy in 0..g.height {
            for ix in 0..g.width {
                let ii = (ci * g.height + iy) * g.width + ix;
                let x = input[ii];
                let mut acc = 0.0;
                for co in 0..g.out_channels {
                    let wbase = (ci * g.out_channels + co) * k * k;
                    for ky in 0..k {
                        let oy = (iy * g.stride + ky) as isize - g.padding as isize;
                        if oy < 0 || oy >= oh as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ox = (ix * g.stride + kx) as isize - g.padding as isize;
                            if ox < 0 || ox >= ow as isize {
                                continue;
                            }
                            let go = grad_out[(co * oh + oy as usize) * ow + ox as usize];
                            gw[wbase + ky * k + kx] += go * x;
                            acc += go * w[wbase + ky * k + kx];
                        }
                    }
                }
                grad_in[ii] = acc;
            }
        }
    }
}
