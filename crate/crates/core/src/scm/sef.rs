//! Significance evaluation function: task loss to a weight in `(0, 1)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::kan::Kan;
use super::spline::SplineSpec;
use crate::error::{Error, Result};
use crate::nn::{sigmoid, Layer, Network};

/// Backend of the significance function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Sef {
    /// `Dense(1,h) -> ReLU -> ... -> Dense(h,1) -> Sigmoid` on the raw loss.
    Mlp(Network),
    /// B-spline KAN with a sigmoid on its scalar output.
    Kan(Kan),
    /// A fixed weight with no parameters; turns training into plain SGD.
    Constant(f64),
}

/// Value and gradients of one evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct SefGrad {
    pub v: f64,
    /// `dv / dTheta`, length `param_count`.
    pub params: Vec<f64>,
    /// `dv / dloss`.
    pub input: f64,
}

impl Sef {
    pub fn mlp<R: Rng>(hidden: &[usize], rng: &mut R) -> Result<Sef> {
        let mut layers = Vec::new();
        let mut width = 1;
        for &h in hidden {
            layers.push(Layer::Dense {
                inputs: width,
                outputs: h,
            });
            layers.push(Layer::Relu { size: h });
            width = h;
        }
        layers.push(Layer::Dense {
            inputs: width,
            outputs: 1,
        });
        layers.push(Layer::Sigmoid { size: 1 });
        Ok(Sef::Mlp(Network::new(layers)?.init(rng)))
    }

    pub fn kan<R: Rng>(shape: Vec<usize>, spec: SplineSpec, rng: &mut R) -> Result<Sef> {
        Ok(Sef::Kan(Kan::init(shape, spec, rng)?))
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Sef::Mlp(_) => "mlp",
            Sef::Kan(_) => "kan",
            Sef::Constant(_) => "constant",
        }
    }

    fn check(loss: f64) -> Result<()> {
        if loss.is_nan() {
            return Err(Error::Validation("significance function received a NaN loss".into()));
        }
        Ok(())
    }

    pub fn eval(&self, loss: f64) -> Result<f64> {
        Sef::check(loss)?;
        Ok(match self {
            Sef::Mlp(net) => net.predict(&[loss])?[0],
            Sef::Kan(k) => k.eval(loss),
            Sef::Constant(c) => *c,
        })
    }

    pub fn eval_grad(&self, loss: f64) -> Result<SefGrad> {
        let mut params = vec![0.0; self.param_count()];
        let (v, input) = self.backward_into(loss, 1.0, &mut params)?;
        Ok(SefGrad { v, params, input })
    }

    /// Adds `scale * dv/dTheta` into `grad`; returns `(v, dv/dloss)`.
    pub fn backward_into(&self, loss: f64, scale: f64, grad: &mut [f64]) -> Result<(f64, f64)> {
        Sef::check(loss)?;
        if grad.len() != self.param_count() {
            return Err(Error::Config("significance gradient buffer has wrong length".into()));
        }
        let mut unit = vec![0.0; grad.len()];
        let (v, d) = match self {
            Sef::Mlp(net) => {
                let trace = net.forward(&[loss])?;
                let v = trace.output()[0];
                (v, net.backward(&trace, &[1.0], &mut unit)?[0])
            }
            Sef::Kan(k) => {
                let trace = k.forward(loss);
                (sigmoid(trace.raw()), k.backward(&trace, 1.0, &mut unit))
            }
            Sef::Constant(c) => (*c, 0.0),
        };
        for (g, u) in grad.iter_mut().zip(unit) {
            *g += scale * u;
        }
        Ok((v, d))
    }

    pub fn params(&self) -> &[f64] {
        match self {
            Sef::Mlp(net) => net.params(),
            Sef::Kan(k) => k.params(),
            Sef::Constant(_) => &[],
        }
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        match self {
            Sef::Mlp(net) => net.params_mut(),
            Sef::Kan(k) => k.params_mut(),
            Sef::Constant(_) => &mut [],
        }
    }

    /// Adds `delta` to the pre-sigmoid output at every loss. The KAN spreads
    /// it over the output edges (the basis sums to one on the clamped
    /// domain); the MLP puts it on the output bias.
    pub fn shift_logit(&mut self, delta: f64) {
        match self {
            Sef::Mlp(net) => {
                if let Some(b) = net.params_mut().last_mut() {
                    *b += delta;
                }
            }
            Sef::Kan(k) => {
                let shape = k.shape().to_vec();
                let l = shape.len() - 2;
                let per_edge = delta / shape[l] as f64;
                for i in 0..shape[l] {
                    let q = k.group(l, i, 0);
                    k.group_coeffs_mut(q).iter_mut().for_each(|c| *c += per_edge);
                }
            }
            Sef::Constant(_) => {}
        }
    }

    pub fn param_count(&self) -> usize {
        self.params().len()
    }

    /// `(loss, v)` at `count` evenly spaced losses over `[lo, hi]`.
    pub fn probe(&self, lo: f64, hi: f64, count: usize) -> Result<Vec<(f64, f64)>> {
        (0..count)
            .map(|i| {
                let x = if count == 1 {
                    lo
                } else {
                    lo + (hi - lo) * i as f64 / (count - 1) as f64
                };
                Ok((x, self.eval(x)?))
            })
            .collect()
    }
}

/// Hidden width of a one-hidden-layer MLP whose parameter count (`3h + 1`)
/// is closest to `params`.
pub fn mlp_width_for(params: usize) -> usize {
    (((params as f64 - 1.0) / 3.0).round() as usize).max(1)
}

/// Parameter count of a KAN with the given shape and spline.
pub fn kan_param_count(shape: &[usize], spec: &SplineSpec) -> usize {
    shape.windows(2).map(|w| w[0] * w[1]).sum::<usize>() * spec.basis_count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Stream};

    #[test]
    fn shift_logit_moves_every_output_by_delta() {
        let logit = |v: f64| (v / (1.0 - v)).ln();
        let spec = SplineSpec::new(0.0, 4.0, 8, 3).unwrap();
        let mut rng = substream(3, Stream::Init);
        let sefs = [Sef::kan(vec![1, 8, 1], spec, &mut rng).unwrap(), Sef::mlp(&[16], &mut rng).unwrap()];
        for before in sefs {
            let mut after = before.clone();
            after.shift_logit(2.0);
            for x in [-1.0, 0.0, 0.37, 1.9, 3.99, 4.0, 7.5] {
                let d = logit(after.eval(x).unwrap()) - logit(before.eval(x).unwrap());
                assert!((d - 2.0).abs() < 1e-9, "{} at {x}: {d}", before.kind());
            }
        }
    }

    #[test]
    fn zero_mlp_gives_one_half_with_quarter_chain_factor() {
        let mut rng = substream(1, Stream::Init);
        let mut s = Sef::mlp(&[4], &mut rng).unwrap();
        s.params_mut().iter_mut().for_each(|p| *p = 0.0);
        for x in [0.0, 1.0, 7.5] {
            assert_eq!(s.eval(x).unwrap(), 0.5);
        }
        let g = s.eval_grad(2.0).unwrap();
        // Only the output bias sees a nonzero signal: dv/db = 0.25.
        assert_eq!(*g.params.last().unwrap(), 0.25);
    }

    #[test]
    fn nan_loss_is_rejected() {
        assert!(Sef::Constant(1.0).eval(f64::NAN).is_err());
    }

    #[test]
    fn kan_input_derivative_vanishes_when_clamped() {
        let mut rng = substream(2, Stream::Init);
        let s = Sef::kan(vec![1, 4, 1], SplineSpec::new(0.0, 10.0, 8, 3).unwrap(), &mut rng).unwrap();
        assert_eq!(s.eval_grad(15.0).unwrap().input, 0.0);
        assert_eq!(s.eval_grad(-1.0).unwrap().input, 0.0);
    }

    #[test]
    fn parity_helper() {
        let spec = SplineSpec::new(0.0, 10.0, 40, 3).unwrap();
        let p = kan_param_count(&[1, 8, 1], &spec);
        assert_eq!(p, 688);
        let h = mlp_width_for(p);
        let q = 3 * h + 1;
        assert!((q as f64 - p as f64).abs() / p as f64 <= 0.05);
    }

    #[test]
    fn mlp_gradient_matches_central_differences() {
        let mut rng = substream(4, Stream::Init);
        let s = Sef::mlp(&[6], &mut rng).unwrap();
        let x = 1.7;
        let g = s.eval_grad(x).unwrap();
        let h = 1e-6;
        for i in 0..s.param_count() {
            let mut p = s.clone();
            p.params_mut()[i] += h;
            let mut m = s.clone();
            m.params_mut()[i] -= h;
            let fd = (p.eval(x).unwrap() - m.eval(x).unwrap()) / (2.0 * h);
            assert!((fd - g.params[i]).abs() < 1e-7 + 1e-4 * fd.abs());
        }
    }
}
