//! Semantic encoder, decoder and the frozen pragmatic classifier.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::layers::{ConvGeometry, Layer};
use super::loss::{argmax, softmax_cross_entropy};
use super::network::{Network, Trace};
use crate::data::{Dataset, ImageShape};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Shape of the encoder/decoder/classifier stacks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub image: ImageShape,
    /// Complex channel symbols per sample (`2 * symbols` reals).
    pub symbols: usize,
    /// Output channels of each encoder convolution; the decoder mirrors them.
    pub conv_channels: Vec<usize>,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub classes: usize,
    pub classifier_hidden: usize,
}

impl Topology {
    /// Two 3x3 stride-2 convolutions followed by a dense projection.
    pub fn desk_scale(image: ImageShape, symbols: usize, classes: usize) -> Self {
        Topology {
            image,
            symbols,
            conv_channels: vec![8, 16],
            kernel: 3,
            stride: 2,
            padding: 1,
            classes,
            classifier_hidden: 64,
        }
    }

    /// Four 6x6 stride-2 convolutions, closer to a full-size codec.
    pub fn four_layer(image: ImageShape, symbols: usize, classes: usize) -> Self {
        Topology {
            image,
            symbols,
            conv_channels: vec![16, 32, 32, 32],
            kernel: 6,
            stride: 2,
            padding: 2,
            classes,
            classifier_hidden: 64,
        }
    }

    pub fn channel_reals(&self) -> usize {
        2 * self.symbols
    }

    fn conv_stages(&self) -> Result<Vec<ConvGeometry>> {
        let mut stages = Vec::new();
        let (mut c, mut h, mut w) = (self.image.channels, self.image.height, self.image.width);
        for &out in &self.conv_channels {
            if h + 2 * self.padding < self.kernel || w + 2 * self.padding < self.kernel {
                return Err(Error::Config(format!(
                    "feature map {h}x{w} too small for kernel {}",
                    self.kernel
                )));
            }
            let g = ConvGeometry {
                in_channels: c,
                out_channels: out,
                height: h,
                width: w,
                kernel: self.kernel,
                stride: self.stride,
                padding: self.padding,
            };
            let (oc, oh, ow) = Layer::Conv2d { geometry: g }.output_volume().expect("conv");
            stages.push(g);
            (c, h, w) = (oc, oh, ow);
        }
        Ok(stages)
    }

    fn bottleneck(&self) -> Result<(usize, usize, usize)> {
        let stages = self.conv_stages()?;
        Ok(match stages.last() {
            Some(g) => Layer::Conv2d { geometry: *g }.output_volume().expect("conv"),
            None => (self.image.channels, self.image.height, self.image.width),
        })
    }

    pub fn encoder_layers(&self) -> Result<Vec<Layer>> {
        let mut layers = Vec::new();
        for g in self.conv_stages()? {
            let conv = Layer::Conv2d { geometry: g };
            let size = conv.output_size();
            layers.push(conv);
            layers.push(Layer::Relu { size });
        }
        let (c, h, w) = self.bottleneck()?;
        layers.push(Layer::Dense {
            inputs: c * h * w,
            outputs: self.channel_reals(),
        });
        Ok(layers)
    }

    pub fn decoder_layers(&self) -> Result<Vec<Layer>> {
        let stages = self.conv_stages()?;
        let (c, h, w) = self.bottleneck()?;
        let mut layers = vec![Layer::Dense {
            inputs: self.channel_reals(),
            outputs: c * h * w,
        }];
        if stages.is_empty() {
            return Ok(layers);
        }
        layers.push(Layer::Relu { size: c * h * w });
        let (mut cur_c, mut cur_h, mut cur_w) = (c, h, w);
        for (i, enc) in stages.iter().enumerate().rev() {
            let base_h = (cur_h - 1) * self.stride + self.kernel - 2 * self.padding;
            let base_w = (cur_w - 1) * self.stride + self.kernel - 2 * self.padding;
            let pad = enc.height.checked_sub(base_h).filter(|p| *p < self.stride);
            let pad_w = enc.width.checked_sub(base_w).filter(|p| *p < self.stride);
            let output_padding = match (pad, pad_w) {
                (Some(a), Some(b)) if a == b => a,
                _ => {
                    return Err(Error::Config(format!(
                        "transposed convolution cannot restore {}x{} from {cur_h}x{cur_w}",
                        enc.height, enc.width
                    )))
                }
            };
            let layer = Layer::ConvTranspose2d {
                geometry: ConvGeometry {
                    in_channels: cur_c,
                    out_channels: enc.in_channels,
                    height: cur_h,
                    width: cur_w,
                    kernel: self.kernel,
                    stride: self.stride,
                    padding: self.padding,
                },
                output_padding,
            };
            let size = layer.output_size();
            layers.push(layer);
            if i > 0 {
                layers.push(Layer::Relu { size });
            }
            (cur_c, cur_h, cur_w) = (enc.in_channels, enc.height, enc.width);
        }
        Ok(layers)
    }

    pub fn classifier_layers(&self) -> Vec<Layer> {
        vec![
            Layer::Dense {
                inputs: self.image.len(),
                outputs: self.classifier_hidden,
            },
            Layer::Relu {
                size: self.classifier_hidden,
            },
            Layer::Dense {
                inputs: self.classifier_hidden,
                outputs: self.classes,
            },
        ]
    }
}

/// Encoder output after per-batch power normalization.
#[derive(Debug, Clone)]
pub struct PowerNorm {
    /// Applied scale; 1 when bypassed.
    pub scale: f64,
    /// Sum of squared pre-normalization values.
    pub energy: f64,
    /// True for an all-zero batch, which is passed through unchanged.
    pub bypassed: bool,
}

impl PowerNorm {
    /// Scales `z` in place so the mean complex-symbol power is one.
    pub fn apply(z: &mut [f64]) -> PowerNorm {
        let symbols = z.len() / 2;
        let energy: f64 = z.iter().map(|v| v * v).sum();
        if energy == 0.0 || symbols == 0 {
            return PowerNorm {
                scale: 1.0,
                energy,
                bypassed: true,
            };
        }
        let scale = (symbols as f64 / energy).sqrt();
        z.iter_mut().for_each(|v| *v *= scale);
        PowerNorm {
            scale,
            energy,
            bypassed: false,
        }
    }

    /// Pulls the cotangent of the normalized output `x` back to the raw
    /// encoder output `z`.
    pub fn backward(&self, z: &[f64], grad_x: &[f64]) -> Vec<f64> {
        if self.bypassed {
            return grad_x.to_vec();
        }
        let gz: f64 = grad_x.iter().zip(z).map(|(g, v)| g * v).sum();
        let k = gz / self.energy;
        grad_x
            .iter()
            .zip(z)
            .map(|(g, v)| self.scale * (g - v * k))
            .collect()
    }
}

/// A recorded encoder pass, held by the transmitter until feedback arrives.
#[derive(Debug, Clone)]
pub struct EncoderRecord {
    traces: Vec<Trace>,
    /// Raw (pre-normalization) outputs, row-major `[rows, 2B]`.
    raw: Vec<f64>,
    pub norm: PowerNorm,
    /// Channel input `[rows, 2B]`.
    pub x: Tensor,
}

impl EncoderRecord {
    pub fn raw(&self) -> &[f64] {
        &self.raw
    }
}

/// Learner parameters (encoder and decoder) plus the pragmatic classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnerState {
    pub encoder: Network,
    pub decoder: Network,
    classifier: Network,
    classifier_frozen: bool,
    pub topology: Option<Topology>,
}

impl LearnerState {
    pub fn from_topology<R: Rng>(topology: &Topology, rng: &mut R) -> Result<Self> {
        let encoder = Network::new(topology.encoder_layers()?)?.init(rng);
        let decoder = Network::new(topology.decoder_layers()?)?.init(rng);
        let classifier = Network::new(topology.classifier_layers())?.init(rng);
        let mut s = LearnerState::from_networks(encoder, decoder, classifier)?;
        s.topology = Some(topology.clone());
        Ok(s)
    }

    pub fn from_networks(encoder: Network, decoder: Network, classifier: Network) -> Result<Self> {
        if encoder.output_size() % 2 != 0 {
            return Err(Error::Config("encoder must emit an even number of reals".into()));
        }
        if decoder.input_size() != encoder.output_size() {
            return Err(Error::Config(format!(
                "decoder takes {} values but encoder emits {}",
                decoder.input_size(),
                encoder.output_size()
            )));
        }
        if decoder.output_size() != encoder.input_size() {
            return Err(Error::Config(format!(
                "decoder reconstructs {} values but sources have {}",
                decoder.output_size(),
                encoder.input_size()
            )));
        }
        if classifier.input_size() != encoder.input_size() {
            return Err(Error::Config("classifier input does not match source size".into()));
        }
        Ok(LearnerState {
            encoder,
            decoder,
            classifier,
            classifier_frozen: false,
            topology: None,
        })
    }

    pub fn classifier(&self) -> &Network {
        &self.classifier
    }

    pub fn classifier_mut(&mut self) -> Result<&mut Network> {
        if self.classifier_frozen {
            return Err(Error::State("pragmatic classifier is frozen".into()));
        }
        Ok(&mut self.classifier)
    }

    /// Installs trained classifier parameters and freezes them.
    pub fn freeze_classifier(&mut self, classifier: Network) -> Result<()> {
        if self.classifier_frozen {
            return Err(Error::State("pragmatic classifier is already frozen".into()));
        }
        if classifier.input_size() != self.classifier.input_size() {
            return Err(Error::Config("classifier shape mismatch".into()));
        }
        self.classifier = classifier;
        self.classifier_frozen = true;
        Ok(())
    }

    pub fn is_frozen(&self) -> bool {
        self.classifier_frozen
    }

    pub fn source_len(&self) -> usize {
        self.encoder.input_size()
    }

    pub fn channel_reals(&self) -> usize {
        self.encoder.output_size()
    }

    pub fn classes(&self) -> usize {
        self.classifier.output_size()
    }

    /// Encodes a `[rows, source...]` batch and power-normalizes it.
    pub fn encode(&self, batch: &Tensor) -> Result<EncoderRecord> {
        if batch.row_len() != self.source_len() {
            return Err(Error::Config(format!(
                "batch rows have {} values, encoder expects {}",
                batch.row_len(),
                self.source_len()
            )));
        }
        let traces: Vec<Trace> = (0..batch.rows())
            .into_par_iter()
            .map(|i| self.encoder.forward(batch.row(i)))
            .collect::<Result<_>>()?;
        let mut raw = Vec::with_capacity(batch.rows() * self.channel_reals());
        for t in &traces {
            raw.extend_from_slice(t.output());
        }
        let mut x = raw.clone();
        let norm = PowerNorm::apply(&mut x);
        let x = Tensor::new(vec![batch.rows(), self.channel_reals()], x)?;
        Ok(EncoderRecord { traces, raw, norm, x })
    }

    pub fn forward_encoder(&self, batch: &Tensor) -> Result<Tensor> {
        Ok(self.encode(batch)?.x)
    }

    /// Decodes a `[rows, 2B]` batch of equalized symbols.
    pub fn forward_decoder(&self, xhat: &Tensor) -> Result<Tensor> {
        if xhat.row_len() != self.channel_reals() {
            return Err(Error::Config(format!(
                "decoder expects {} reals per row, got {}",
                self.channel_reals(),
                xhat.row_len()
            )));
        }
        let rows: Vec<Vec<f64>> = (0..xhat.rows())
            .into_par_iter()
            .map(|i| self.decoder.predict(xhat.row(i)))
            .collect::<Result<_>>()?;
        let mut data = Vec::with_capacity(xhat.rows() * self.source_len());
        for r in rows {
            data.extend(r);
        }
        Tensor::new(vec![xhat.rows(), self.source_len()], data)
    }

    /// Gradient of a loss with respect to the encoder parameters, given the
    /// cotangent of the normalized channel input `x`.
    pub fn encoder_backward(&self, record: &EncoderRecord, grad_x: &[f64]) -> Result<Vec<f64>> {
        if grad_x.len() != record.raw.len() {
            return Err(Error::Config("channel-input cotangent has wrong length".into()));
        }
        let grad_z = record.norm.backward(&record.raw, grad_x);
        let width = self.channel_reals();
        let per_row: Vec<Vec<f64>> = record
            .traces
            .par_iter()
            .enumerate()
            .map(|(i, t)| {
                let mut g = vec![0.0; self.encoder.param_count()];
                self.encoder.backward(t, &grad_z[i * width..(i + 1) * width], &mut g)?;
                Ok(g)
            })
            .collect::<Result<_>>()?;
        Ok(sum_rows(per_row, self.encoder.param_count()))
    }

    /// Encoder-parameter gradient contributed by row `i` alone, ignoring the
    /// normalization coupling (`J_i^T g`).
    pub(crate) fn encoder_row_vjp(&self, record: &EncoderRecord, i: usize, g: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.encoder.param_count()];
        self.encoder.backward(&record.traces[i], g, &mut out)?;
        Ok(out)
    }

    pub fn classify(&self, image: &[f64]) -> Result<usize> {
        Ok(argmax(&self.classifier.predict(image)?))
    }
}

/// Deterministic in-order sum of per-row vectors.
pub(crate) fn sum_rows(rows: Vec<Vec<f64>>, len: usize) -> Vec<f64> {
    let mut acc = vec![0.0; len];
    for r in rows {
        for (a, v) in acc.iter_mut().zip(r) {
            *a += v;
        }
    }
    acc
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierTraining {
    pub epochs: usize,
    pub batch: usize,
    pub learning_rate: f64,
    /// Minimum held-out accuracy.
    pub floor: f64,
}

impl Default for ClassifierTraining {
    fn default() -> Self {
        ClassifierTraining {
            epochs: 30,
            batch: 32,
            learning_rate: 0.05,
            floor: 0.9,
        }
    }
}

/// Trains the pragmatic classifier on clean data with mini-batch SGD and
/// checks its held-out accuracy. Returns the network and that accuracy.
pub fn train_pragmatic_classifier<R: Rng>(
    mut net: Network,
    train: &Dataset,
    holdout: &Dataset,
    cfg: &ClassifierTraining,
    rng: &mut R,
) -> Result<(Network, f64)> {
    if train.is_empty() || holdout.is_empty() {
        return Err(Error::Validation("classifier training needs non-empty splits".into()));
    }
    if net.input_size() != train.shape().len() {
        return Err(Error::Config("classifier input does not match image size".into()));
    }
    let mut order: Vec<usize> = (0..train.len()).collect();
    let batch = cfg.batch.max(1);
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(batch) {
            let grads: Vec<Vec<f64>> = chunk
                .par_iter()
                .map(|&i| {
                    let s = &train.samples()[i];
                    let trace = net.forward(&s.image)?;
                    let (_, dl) = softmax_cross_entropy(trace.output(), s.label);
                    let mut g = vec![0.0; net.param_count()];
                    net.backward(&trace, &dl, &mut g)?;
                    Ok(g)
                })
                .collect::<Result<_>>()?;
            let g = sum_rows(grads, net.param_count());
            let step = cfg.learning_rate / chunk.len() as f64;
            for (p, gi) in net.params_mut().iter_mut().zip(&g) {
                *p -= step * gi;
            }
        }
    }
    let acc = classifier_accuracy(&net, holdout)?;
    if acc < cfg.floor {
        return Err(Error::AccuracyFloor {
            achieved: acc,
            floor: cfg.floor,
            epochs: cfg.epochs,
        });
    }
    Ok((net, acc))
}

pub fn classifier_accuracy(net: &Network, data: &Dataset) -> Result<f64> {
    let hits: Vec<bool> = data
        .samples()
        .par_iter()
        .map(|s| Ok(argmax(&net.predict(&s.image)?) == s.label))
        .collect::<Result<_>>()?;
    Ok(hits.iter().filter(|&&h| h).count() as f64 / data.len() as f64)
}
