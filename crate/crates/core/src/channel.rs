//! Complex-baseband channel: AWGN, Rayleigh and Rician block fading with
//! perfect-CSI equalization.
//!
//! Symbols travel as interleaved `(re, im)` pairs so the learner stays
//! real-valued. One fading coefficient `h` covers a whole block (one
//! training batch); noise is i.i.d. `CN(0, sigma^2)` per symbol.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fades with |h| below this are not equalized.
pub const DEEP_FADE_THRESHOLD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelKind {
    Awgn,
    Rayleigh,
    Rician,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    pub kind: ChannelKind,
    pub snr_db: f64,
    /// Rician coefficient `r`; required for, and only for, Rician fading.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rician_r: Option<f64>,
}

impl ChannelConfig {
    pub fn awgn(snr_db: f64) -> Self {
        ChannelConfig {
            kind: ChannelKind::Awgn,
            snr_db,
            rician_r: None,
        }
    }

    pub fn rayleigh(snr_db: f64) -> Self {
        ChannelConfig {
            kind: ChannelKind::Rayleigh,
            snr_db,
            rician_r: None,
        }
    }

    pub fn rician(snr_db: f64, r: f64) -> Self {
        ChannelConfig {
            kind: ChannelKind::Rician,
            snr_db,
            rician_r: Some(r),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.snr_db.is_finite() && self.snr_db != f64::INFINITY {
            return Err(Error::Validation(format!("snr_db must be finite, got {}", self.snr_db)));
        }
        match (self.kind, self.rician_r) {
            (ChannelKind::Rician, Some(r)) if r > 0.0 && r.is_finite() => Ok(()),
            (ChannelKind::Rician, Some(r)) => Err(Error::Validation(format!("rician_r must be positive, got {r}"))),
            (ChannelKind::Rician, None) => Err(Error::Validation("Rician channel requires rician_r".into())),
            (_, Some(_)) => Err(Error::Validation("rician_r is only valid for a Rician channel".into())),
            (_, None) => Ok(()),
        }
    }

    pub fn noise_variance(&self) -> f64 {
        snr_to_sigma(self.snr_db)
    }

    /// Draws the fading coefficient and noise seed for one block.
    pub fn draw<R: Rng>(&self, rng: &mut R) -> Result<ChannelRealization> {
        self.validate()?;
        let h = match self.kind {
            ChannelKind::Awgn => Complex64::new(1.0, 0.0),
            ChannelKind::Rayleigh => complex_normal(Complex64::new(0.0, 0.0), 1.0, rng),
            ChannelKind::Rician => {
                let (mu, sigma) = rician_moments(self.rician_r.expect("validated"));
                complex_normal(Complex64::new(mu, 0.0), sigma * sigma, rng)
            }
        };
        Ok(ChannelRealization {
            h,
            noise_seed: rng.random(),
            noise_variance: self.noise_variance(),
        })
    }
}

/// `(mu, sigma)` of the Rician coefficient: `mu = sqrt(r/(r+1))`, `sigma = sqrt(1/(r+1))`.
pub fn rician_moments(r: f64) -> (f64, f64) {
    ((r / (r + 1.0)).sqrt(), (1.0 / (r + 1.0)).sqrt())
}

/// `sigma_n^2 = 10^(-snr_db/10)` under unit signal power.
pub fn snr_to_sigma(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

fn complex_normal<R: Rng>(mean: Complex64, variance: f64, rng: &mut R) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    mean + Complex64::new(re * s, im * s)
}

/// One block's channel state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelRealization {
    pub h: Complex64,
    pub noise_seed: u64,
    pub noise_variance: f64,
}

impl ChannelRealization {
    /// A noiseless realization with the given coefficient.
    pub fn fixed(h: Complex64) -> Self {
        ChannelRealization {
            h,
            noise_seed: 0,
            noise_variance: 0.0,
        }
    }

    /// `y = h x + n`. Distinct `stream` values give independent noise under
    /// the same coefficient, so several batches can share one block.
    pub fn apply(&self, x: &[f64], stream: u64) -> Result<Vec<f64>> {
        if x.len() % 2 != 0 {
            return Err(Error::Validation("complex vector must have even length".into()));
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("channel input entry {i} is not finite")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.noise_seed);
        rng.set_stream(stream);
        let s = (self.noise_variance / 2.0).sqrt();
        let mut y = Vec::with_capacity(x.len());
        for pair in x.chunks_exact(2) {
            let hx = self.h * Complex64::new(pair[0], pair[1]);
            let (nr, ni) = if self.noise_variance > 0.0 {
                let a: f64 = StandardNormal.sample(&mut rng);
                let b: f64 = StandardNormal.sample(&mut rng);
                (a * s, b * s)
            } else {
                (0.0, 0.0)
            };
            y.push(hx.re + nr);
            y.push(hx.im + ni);
        }
        Ok(y)
    }

    pub fn check_fade(&self) -> Result<()> {
        let m = self.h.norm();
        if m < DEEP_FADE_THRESHOLD {
            return Err(Error::DeepFade {
                magnitude: m,
                threshold: DEEP_FADE_THRESHOLD,
            });
        }
        Ok(())
    }
}

/// Sends `x` through a freshly drawn block.
pub fn transmit<R: Rng>(x: &[f64], cfg: &ChannelConfig, rng: &mut R) -> Result<(Vec<f64>, ChannelRealization)> {
    let realization = cfg.draw(rng)?;
    let y = realization.apply(x, 0)?;
    Ok((y, realization))
}

/// `x_hat = conj(h) y / |h|^2`.
pub fn equalize(y: &[f64], realization: &ChannelRealization) -> Result<Vec<f64>> {
    realization.check_fade()?;
    let h = realization.h;
    let scale = h.conj() / h.norm_sqr();
    Ok(map_pairs(y, scale))
}

/// Cotangent of `y = h x` pulled back to `x`: `conj(h) g_y`.
pub fn channel_vjp(h: Complex64, grad_y: &[f64]) -> Vec<f64> {
    map_pairs(grad_y, h.conj())
}

/// Cotangent of the equalizer pulled back to `y`: `h g_xhat / |h|^2`.
pub fn equalize_vjp(h: Complex64, grad_xhat: &[f64]) -> Vec<f64> {
    map_pairs(grad_xhat, h / h.norm_sqr())
}

fn map_pairs(v: &[f64], a: Complex64) -> Vec<f64> {
    let mut out = Vec::with_capacity(v.len());
    for pair in v.chunks_exact(2) {
        let c = a * Complex64::new(pair[0], pair[1]);
        out.push(c.re);
        out.push(c.im);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Stream};

    #[test]
    fn snr_conversion() {
        assert_eq!(snr_to_sigma(0.0), 1.0);
        assert!((snr_to_sigma(10.0) - 0.1).abs() < 1e-15);
        assert!((snr_to_sigma(8.0) - 0.158_489_319_246_111_35).abs() < 1e-12);
    }

    #[test]
    fn rician_r8_moments() {
        let (mu, sigma) = rician_moments(8.0);
        assert!((mu - (8.0f64 / 9.0).sqrt()).abs() < 1e-15);
        assert!((mu - 0.9428).abs() < 1e-4);
        assert!((sigma - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn noiseless_awgn_is_identity() {
        let x = vec![0.5, -1.0, 2.0, 0.25];
        let cfg = ChannelConfig::awgn(f64::INFINITY);
        let mut rng = substream(1, Stream::Channel);
        let (y, r) = transmit(&x, &cfg, &mut rng).unwrap();
        assert_eq!(r.noise_variance, 0.0);
        assert_eq!(y, x);
        assert_eq!(equalize(&y, &r).unwrap(), y);
    }

    #[test]
    fn imaginary_unit_equalization_expands_by_hand() {
        // h = i: y = i x + n, x_hat = -i y = x - i n.
        let x = [0.3, -0.7];
        let n = [0.05, 0.02];
        let y = [-x[1] + n[0], x[0] + n[1]];
        let r = ChannelRealization::fixed(Complex64::new(0.0, 1.0));
        let xh = equalize(&y, &r).unwrap();
        // conj(h) n = -i (0.05 + 0.02i) = 0.02 - 0.05i
        assert!((xh[0] - (x[0] + 0.02)).abs() < 1e-15);
        assert!((xh[1] - (x[1] - 0.05)).abs() < 1e-15);
    }

    #[test]
    fn deep_fade_is_rejected() {
        let r = ChannelRealization::fixed(Complex64::new(1e-13, 0.0));
        assert!(matches!(equalize(&[1.0, 0.0], &r), Err(Error::DeepFade { .. })));
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let r = ChannelRealization::fixed(Complex64::new(1.0, 0.0));
        assert!(r.apply(&[f64::NAN, 0.0], 0).is_err());
    }

    #[test]
    fn rician_requires_coefficient() {
        let mut cfg = ChannelConfig::rician(8.0, 8.0);
        assert!(cfg.validate().is_ok());
        cfg.rician_r = None;
        assert!(cfg.validate().is_err());
        let mut awgn = ChannelConfig::awgn(8.0);
        awgn.rician_r = Some(2.0);
        assert!(awgn.validate().is_err());
    }
}
