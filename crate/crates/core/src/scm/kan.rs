//! Kolmogorov-Arnold network with pure B-spline edge activations.
//!
//! Layer `l` maps `n_l` inputs to `n_{l+1}` outputs; output `j` is the sum
//! over inputs `i` of a spline `f_{l,j,i}(x_i)`. Every spline shares one
//! [`SplineSpec`] and owns `G + k` contiguous coefficients. Inputs of every
//! layer are clamped into the spline domain.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::spline::{LocalBasis, SplineSpec};
use crate::error::{Error, Result};
use crate::nn::sigmoid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kan {
    shape: Vec<usize>,
    spec: SplineSpec,
    coeffs: Vec<f64>,
}

/// Per-layer basis evaluations recorded by [`Kan::forward`].
#[derive(Debug, Clone)]
pub struct KanTrace {
    bases: Vec<Vec<LocalBasis>>,
    raw: f64,
}

impl KanTrace {
    /// Output before the final sigmoid.
    pub fn raw(&self) -> f64 {
        self.raw
    }
}

impl Kan {
    /// A network with all coefficients zero.
    pub fn zeros(shape: Vec<usize>, spec: SplineSpec) -> Result<Self> {
        if shape.len() < 2 || shape[0] != 1 || *shape.last().unwrap() != 1 || shape.contains(&0) {
            return Err(Error::Config(format!(
                "KAN shape must start and end with 1 and have no empty layer, got {shape:?}"
            )));
        }
        let groups: usize = shape.windows(2).map(|w| w[0] * w[1]).sum();
        Ok(Kan {
            coeffs: vec![0.0; groups * spec.basis_count()],
            shape,
            spec,
        })
    }

    /// Hidden layers start near `x -> x / n_l` (so hidden values stay in the
    /// domain); the output layer gets small random coefficients, giving an
    /// initial significance close to 0.5.
    pub fn init<R: Rng>(shape: Vec<usize>, spec: SplineSpec, rng: &mut R) -> Result<Self> {
        let mut kan = Kan::zeros(shape, spec)?;
        let greville = spec.greville();
        let jitter = Normal::new(0.0, 0.01 * (spec.b - spec.a)).expect("positive spread");
        let out_noise = Normal::new(0.0, 0.1).expect("positive spread");
        let last = kan.shape.len() - 2;
        for l in 0..=last {
            let fan_in = kan.shape[l] as f64;
            for i in 0..kan.shape[l] {
                for j in 0..kan.shape[l + 1] {
                    let q = kan.group(l, i, j);
                    let c = kan.group_coeffs_mut(q);
                    for (m, cm) in c.iter_mut().enumerate() {
                        *cm = if l == last {
                            out_noise.sample(rng)
                        } else {
                            greville[m] / fan_in + jitter.sample(rng)
                        };
                    }
                }
            }
        }
        Ok(kan)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn spec(&self) -> SplineSpec {
        self.spec
    }

    /// Number of edge activations `sum_l n_l n_{l+1}`.
    pub fn groups(&self) -> usize {
        self.coeffs.len() / self.spec.basis_count()
    }

    /// Index of the activation from input `i` of layer `l` to output `j`.
    pub fn group(&self, l: usize, i: usize, j: usize) -> usize {
        let offset: usize = self.shape[..l + 1].windows(2).map(|w| w[0] * w[1]).sum();
        offset + i * self.shape[l + 1] + j
    }

    pub fn group_coeffs(&self, q: usize) -> &[f64] {
        let w = self.spec.basis_count();
        &self.coeffs[q * w..(q + 1) * w]
    }

    pub fn group_coeffs_mut(&mut self, q: usize) -> &mut [f64] {
        let w = self.spec.basis_count();
        &mut self.coeffs[q * w..(q + 1) * w]
    }

    pub fn params(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn param_count(&self) -> usize {
        self.coeffs.len()
    }

    /// Replaces the spline grid and coefficients at once; used by grid extension.
    pub fn with_grid(&self, spec: SplineSpec, coeffs: Vec<f64>) -> Result<Kan> {
        let groups = self.groups();
        if coeffs.len() != groups * spec.basis_count() {
            return Err(Error::Config(format!(
                "expected {} coefficients for {groups} activations, got {}",
                groups * spec.basis_count(),
                coeffs.len()
            )));
        }
        Ok(Kan {
            shape: self.shape.clone(),
            spec,
            coeffs,
        })
    }

    pub fn forward(&self, x: f64) -> KanTrace {
        let mut values = vec![x];
        let mut bases = Vec::with_capacity(self.shape.len() - 1);
        for l in 0..self.shape.len() - 1 {
            let local: Vec<LocalBasis> = values.iter().map(|&v| self.spec.local(v)).collect();
            let mut out = vec![0.0; self.shape[l + 1]];
            for (i, b) in local.iter().enumerate() {
                for (j, o) in out.iter_mut().enumerate() {
                    let c = &self.group_coeffs(self.group(l, i, j))[b.first..];
                    *o += b.values.iter().zip(c).map(|(v, c)| v * c).sum::<f64>();
                }
            }
            bases.push(local);
            values = out;
        }
        KanTrace { bases, raw: values[0] }
    }

    /// Significance `sigmoid(raw)`.
    pub fn eval(&self, x: f64) -> f64 {
        sigmoid(self.forward(x).raw)
    }

    /// Gradients of `v = sigmoid(raw)` with respect to the coefficients
    /// (added into `grad` scaled by `scale`) and to the input.
    pub fn backward(&self, trace: &KanTrace, scale: f64, grad: &mut [f64]) -> f64 {
        let v = sigmoid(trace.raw);
        let mut g_out = vec![scale * v * (1.0 - v)];
        let w = self.spec.basis_count();
        for l in (0..self.shape.len() - 1).rev() {
            let local = &trace.bases[l];
            let mut g_in = vec![0.0; self.shape[l]];
            for (i, b) in local.iter().enumerate() {
                for (j, gj) in g_out.iter().enumerate() {
                    let q = self.group(l, i, j);
                    let base = q * w + b.first;
                    for (m, val) in b.values.iter().enumerate() {
                        grad[base + m] += gj * val;
                    }
                    let c = &self.coeffs[base..];
                    g_in[i] += gj * b.derivs.iter().zip(c).map(|(d, c)| d * c).sum::<f64>();
                }
            }
            g_out = g_in;
        }
        g_out[0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Stream};

    fn spec() -> SplineSpec {
        SplineSpec::new(0.0, 10.0, 8, 3).unwrap()
    }

    #[test]
    fn group_count_and_layout() {
        let k = Kan::zeros(vec![1, 8, 1], spec()).unwrap();
        assert_eq!(k.groups(), 16);
        assert_eq!(k.param_count(), 16 * 11);
        assert_eq!(k.group(0, 0, 7), 7);
        assert_eq!(k.group(1, 3, 0), 11);
    }

    #[test]
    fn zero_network_gives_one_half() {
        let k = Kan::zeros(vec![1, 4, 1], spec()).unwrap();
        assert_eq!(k.eval(3.0), 0.5);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(Kan::zeros(vec![2, 1], spec()).is_err());
        assert!(Kan::zeros(vec![1], spec()).is_err());
        assert!(Kan::zeros(vec![1, 0, 1], spec()).is_err());
    }

    #[test]
    fn init_starts_near_one_half() {
        let mut rng = substream(3, Stream::Init);
        let k = Kan::init(vec![1, 8, 1], spec(), &mut rng).unwrap();
        for x in [0.0, 2.5, 7.0, 10.0] {
            assert!((k.eval(x) - 0.5).abs() < 0.3);
        }
    }

    #[test]
    fn backward_matches_central_differences() {
        let mut rng = substream(5, Stream::Init);
        let mut k = Kan::init(vec![1, 3, 2, 1], spec(), &mut rng).unwrap();
        let normal = Normal::new(0.0, 0.5).unwrap();
        for c in k.params_mut() {
            *c += normal.sample(&mut rng);
        }
        let x = 4.3;
        let t = k.forward(x);
        let mut g = vec![0.0; k.param_count()];
        let dx = k.backward(&t, 1.0, &mut g);
        let h = 1e-6;
        for idx in (0..k.param_count()).step_by(3) {
            let mut kp = k.clone();
            kp.params_mut()[idx] += h;
            let mut km = k.clone();
            km.params_mut()[idx] -= h;
            let fd = (kp.eval(x) - km.eval(x)) / (2.0 * h);
            assert!((fd - g[idx]).abs() <= 1e-6 + 1e-4 * fd.abs(), "coeff {idx}: {fd} vs {}", g[idx]);
        }
        let fd = (k.eval(x + h) - k.eval(x - h)) / (2.0 * h);
        assert!((fd - dx).abs() <= 1e-6 + 1e-4 * fd.abs());
    }
}
