//! A sequential stack of layers over one flat parameter vector.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicU64, Ordering};

use super::layers::Layer;
use crate::error::{Error, Result};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

#[derive(Debug, Serialize, Deserialize)]
pub struct Network {
    layers: Vec<Layer>,
    params: Vec<f64>,
    offsets: Vec<usize>,
    /// Identity of this network instance; traces recorded on one network are
    /// rejected by another.
    #[serde(skip, default = "fresh_id")]
    id: u64,
    /// Bumped on every parameter mutation so stale traces are detected.
    #[serde(skip)]
    version: u64,
}

fn fresh_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

impl Clone for Network {
    fn clone(&self) -> Self {
        Network {
            layers: self.layers.clone(),
            params: self.params.clone(),
            offsets: self.offsets.clone(),
            id: fresh_id(),
            version: 0,
        }
    }
}

impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers && self.params == other.params
    }
}

/// Activations recorded by a forward pass, consumed by [`Network::backward`].
#[derive(Debug, Clone)]
pub struct Trace {
    acts: Vec<Vec<f64>>,
    network: u64,
    version: u64,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("trace holds the input at least")
    }

    pub fn input(&self) -> &[f64] {
        &self.acts[0]
    }
}

impl Network {
    /// Builds a network with zeroed parameters after checking that adjacent
    /// layer sizes agree.
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("network needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].output_size() != pair[1].input_size() {
                return Err(Error::Config(format!(
                    "{} layer emits {} values but next {} layer expects {}",
                    pair[0].kind(),
                    pair[0].output_size(),
                    pair[1].kind(),
                    pair[1].input_size()
                )));
            }
        }
        let mut offsets = Vec::with_capacity(layers.len() + 1);
        let mut total = 0;
        for l in &layers {
            offsets.push(total);
            total += l.param_count();
        }
        offsets.push(total);
        Ok(Network {
            layers,
            params: vec![0.0; total],
            offsets,
            id: fresh_id(),
            version: 0,
        })
    }

    pub fn init<R: Rng>(mut self, rng: &mut R) -> Self {
        for (i, l) in self.layers.iter().enumerate() {
            l.init_params(&mut self.params[self.offsets[i]..self.offsets[i + 1]], rng);
        }
        self
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].input_size()
    }

    pub fn output_size(&self) -> usize {
        self.layers.last().map(Layer::output_size).unwrap_or(0)
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Mutable parameter access; invalidates outstanding traces.
    pub fn params_mut(&mut self) -> &mut [f64] {
        self.version += 1;
        &mut self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::Config(format!(
                "expected {} parameters, got {}",
                self.params.len(),
                params.len()
            )));
        }
        self.params_mut().copy_from_slice(params);
        Ok(())
    }

    /// Parameter range `[start, end)` of layer `i` inside the flat vector.
    pub fn layer_params(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    pub fn forward(&self, input: &[f64]) -> Result<Trace> {
        if input.len() != self.input_size() {
            return Err(Error::Config(format!(
                "network expects {} inputs, got {}",
                self.input_size(),
                input.len()
            )));
        }
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(input.to_vec());
        for (i, l) in self.layers.iter().enumerate() {
            let mut out = vec![0.0; l.output_size()];
            l.forward(&self.params[self.offsets[i]..self.offsets[i + 1]], &acts[i], &mut out);
            acts.push(out);
        }
        Ok(Trace {
            acts,
            network: self.id,
            version: self.version,
        })
    }

    /// Convenience forward pass that keeps only the output.
    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        let mut trace = self.forward(input)?;
        Ok(trace.acts.pop().unwrap_or_default())
    }

    /// Reverse pass. Adds parameter gradients into `param_grad` (length
    /// `param_count`) and returns the input cotangent.
    pub fn backward(&self, trace: &Trace, grad_out: &[f64], param_grad: &mut [f64]) -> Result<Vec<f64>> {
        self.check_trace(trace)?;
        if grad_out.len() != self.output_size() {
            return Err(Error::Config(format!(
                "output cotangent has {} values, network emits {}",
                grad_out.len(),
                self.output_size()
            )));
        }
        if param_grad.len() != self.params.len() {
            return Err(Error::Config("parameter gradient buffer has wrong length".into()));
        }
        let mut g = grad_out.to_vec();
        for (i, l) in self.layers.iter().enumerate().rev() {
            let range = self.offsets[i]..self.offsets[i + 1];
            let mut gi = vec![0.0; l.input_size()];
            l.backward(
                &self.params[range.clone()],
                &trace.acts[i],
                &trace.acts[i + 1],
                &g,
                &mut param_grad[range],
                &mut gi,
            );
            g = gi;
        }
        Ok(g)
    }

    /// Input cotangent only.
    pub fn backward_input(&self, trace: &Trace, grad_out: &[f64]) -> Result<Vec<f64>> {
        let mut scratch = vec![0.0; self.params.len()];
        self.backward(trace, grad_out, &mut scratch)
    }

    fn check_trace(&self, trace: &Trace) -> Result<()> {
        if trace.network != self.id {
            return Err(Error::State("trace was recorded on a different network".into()));
        }
        if trace.version != self.version {
            return Err(Error::State(
                "trace is stale: parameters changed after the forward pass".into(),
            ));
        }
        Ok(())
    }
}
