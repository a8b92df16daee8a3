//! Uniform-knot B-splines on a bounded domain.
//!
//! A spline of order `k` on `[a, b]` split into `G` intervals uses the
//! extended knot vector `t_{-k}, ..., t_{G+k}` with `t_j = a + j h`,
//! `h = (b - a) / G`, giving `G + k` basis functions. Basis `i` (zero-based)
//! is supported on `[t_{i-k}, t_{i+1}]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplineSpec {
    pub a: f64,
    pub b: f64,
    pub grid: usize,
    pub order: usize,
}

/// Nonzero basis values at one point: entries `first..=first + order`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalBasis {
    pub first: usize,
    pub values: Vec<f64>,
    /// Derivatives with respect to the (clamped) input.
    pub derivs: Vec<f64>,
    /// Whether the input lay inside `[a, b]`; a clamped input has zero
    /// derivative.
    pub inside: bool,
}

impl SplineSpec {
    pub fn new(a: f64, b: f64, grid: usize, order: usize) -> Result<Self> {
        if !(a < b) || !a.is_finite() || !b.is_finite() {
            return Err(Error::Config(format!("spline domain [{a}, {b}] is empty")));
        }
        if grid == 0 {
            return Err(Error::Config("spline grid needs at least one interval".into()));
        }
        Ok(SplineSpec { a, b, grid, order })
    }

    pub fn step(&self) -> f64 {
        (self.b - self.a) / self.grid as f64
    }

    pub fn basis_count(&self) -> usize {
        self.grid + self.order
    }

    /// `t_j` for `j` in `-k..=G+k`.
    pub fn knot(&self, j: isize) -> f64 {
        self.a + j as f64 * self.step()
    }

    /// The full extended knot vector, length `G + 2k + 1`.
    pub fn knots(&self) -> Vec<f64> {
        let k = self.order as isize;
        (-k..=self.grid as isize + k).map(|j| self.knot(j)).collect()
    }

    /// Greville abscissae; the spline with these coefficients is `f(x) = x`
    /// on `[a, b]` when `k >= 1`.
    pub fn greville(&self) -> Vec<f64> {
        let k = self.order as isize;
        (0..self.basis_count() as isize)
            .map(|i| {
                if k == 0 {
                    self.knot(i) + 0.5 * self.step()
                } else {
                    (i - k + 1..=i).map(|j| self.knot(j)).sum::<f64>() / k as f64
                }
            })
            .collect()
    }

    pub fn clamp(&self, x: f64) -> (f64, bool) {
        if x < self.a {
            log::debug!("spline input {x} clamped to {}", self.a);
            (self.a, false)
        } else if x > self.b {
            log::debug!("spline input {x} clamped to {}", self.b);
            (self.b, false)
        } else {
            (x, true)
        }
    }

    /// Interval index `j` with `x` in `[t_j, t_{j+1})`; `b` maps to the last interval.
    fn span(&self, x: f64) -> usize {
        let j = ((x - self.a) / self.step()).floor();
        if j < 0.0 {
            0
        } else {
            (j as usize).min(self.grid - 1)
        }
    }

    /// Cox-de Boor triangle for the `order + 1` nonzero bases of order `order`
    /// on interval `span`.
    fn triangle(&self, x: f64, span: usize, order: usize) -> Vec<f64> {
        // Knot u_i = t_{i-k}; interval j lives at u-index s = j + k.
        let k = self.order as isize;
        let s = span as isize + k;
        let u = |i: isize| self.knot(i - k);
        let mut n = vec![0.0; order + 1];
        let mut left = vec![0.0; order + 1];
        let mut right = vec![0.0; order + 1];
        n[0] = 1.0;
        for r in 1..=order {
            left[r] = x - u(s + 1 - r as isize);
            right[r] = u(s + r as isize) - x;
            let mut saved = 0.0;
            for i in 0..r {
                let temp = n[i] / (right[i + 1] + left[r - i]);
                n[i] = saved + right[i + 1] * temp;
                saved = left[r - i] * temp;
            }
            n[r] = saved;
        }
        n
    }

    /// Nonzero bases and their derivatives at `x` (clamped into the domain).
    pub fn local(&self, x: f64) -> LocalBasis {
        let (xc, inside) = self.clamp(x);
        let span = self.span(xc);
        let values = self.triangle(xc, span, self.order);
        let mut derivs = vec![0.0; self.order + 1];
        if self.order > 0 && inside {
            let lower = self.triangle(xc, span, self.order - 1);
            let h = self.step();
            for m in 0..=self.order {
                let a = if m >= 1 { lower[m - 1] } else { 0.0 };
                let b = if m < self.order { lower[m] } else { 0.0 };
                derivs[m] = (a - b) / h;
            }
        }
        LocalBasis {
            first: span,
            values,
            derivs,
            inside,
        }
    }

    /// All `G + k` basis values at `x`.
    pub fn basis(&self, x: f64) -> Vec<f64> {
        let local = self.local(x);
        let mut out = vec![0.0; self.basis_count()];
        out[local.first..local.first + local.values.len()].copy_from_slice(&local.values);
        out
    }

    /// `sum_i c_i B_i(x)`.
    pub fn eval(&self, coeffs: &[f64], x: f64) -> f64 {
        let local = self.local(x);
        local
            .values
            .iter()
            .zip(&coeffs[local.first..])
            .map(|(v, c)| v * c)
            .sum()
    }
}

/// `G + k` basis values at `x`; inputs outside the domain are clamped.
pub fn spline_basis(spec: &SplineSpec, x: f64) -> Vec<f64> {
    spec.basis(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Textbook Cox-de Boor recursion over an explicit knot vector.
    fn cox_de_boor(knots: &[f64], i: usize, k: usize, x: f64) -> f64 {
        if k == 0 {
            return if knots[i] <= x && x < knots[i + 1] { 1.0 } else { 0.0 };
        }
        let mut v = 0.0;
        let d1 = knots[i + k] - knots[i];
        if d1 > 0.0 {
            v += (x - knots[i]) / d1 * cox_de_boor(knots, i, k - 1, x);
        }
        let d2 = knots[i + k + 1] - knots[i + 1];
        if d2 > 0.0 {
            v += (knots[i + k + 1] - x) / d2 * cox_de_boor(knots, i + 1, k - 1, x);
        }
        v
    }

    #[test]
    fn matches_recursive_definition() {
        let spec = SplineSpec::new(0.0, 10.0, 5, 3).unwrap();
        let knots = spec.knots();
        assert_eq!(knots.len(), 5 + 2 * 3 + 1);
        for step in 0..97 {
            let x = step as f64 * 0.103;
            let fast = spec.basis(x);
            for (i, f) in fast.iter().enumerate() {
                assert!((f - cox_de_boor(&knots, i, 3, x)).abs() < 1e-12, "i={i} x={x}");
            }
        }
    }

    #[test]
    fn order_zero_is_an_indicator() {
        let spec = SplineSpec::new(0.0, 1.0, 4, 0).unwrap();
        for x in [0.0, 0.1, 0.3, 0.5, 0.99, 1.0] {
            let b = spec.basis(x);
            assert_eq!(b.iter().filter(|&&v| v == 1.0).count(), 1);
            assert_eq!(b.iter().sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn partition_of_unity_on_domain() {
        let spec = SplineSpec::new(0.0, 10.0, 8, 3).unwrap();
        for step in 0..=1000 {
            let x = step as f64 * 0.01;
            let s: f64 = spec.basis(x).iter().sum();
            assert!((s - 1.0).abs() < 1e-10, "x={x} sum={s}");
        }
    }

    #[test]
    fn support_width_is_order_plus_one() {
        for order in 0..5 {
            let spec = SplineSpec::new(-1.0, 2.0, 7, order).unwrap();
            for step in 0..=300 {
                let x = -1.0 + step as f64 * 0.01;
                let nz = spec.basis(x).iter().filter(|v| **v != 0.0).count();
                assert!(nz <= order + 1);
            }
        }
    }

    #[test]
    fn greville_coefficients_reproduce_identity() {
        let spec = SplineSpec::new(0.0, 10.0, 6, 3).unwrap();
        let c = spec.greville();
        for x in [0.0, 0.7, 3.3, 9.99, 10.0] {
            assert!((spec.eval(&c, x) - x).abs() < 1e-12);
        }
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let spec = SplineSpec::new(0.0, 10.0, 8, 3).unwrap();
        let coeffs: Vec<f64> = (0..spec.basis_count()).map(|i| ((i * 7 % 5) as f64) - 2.0).collect();
        for x in [0.4, 2.6, 5.1, 8.8] {
            let local = spec.local(x);
            let d: f64 = local.derivs.iter().zip(&coeffs[local.first..]).map(|(a, b)| a * b).sum();
            let h = 1e-6;
            let fd = (spec.eval(&coeffs, x + h) - spec.eval(&coeffs, x - h)) / (2.0 * h);
            assert!((d - fd).abs() < 1e-6, "x={x}: {d} vs {fd}");
        }
    }

    #[test]
    fn clamped_inputs_have_zero_derivative() {
        let spec = SplineSpec::new(0.0, 10.0, 8, 3).unwrap();
        let l = spec.local(12.0);
        assert!(!l.inside);
        assert!(l.derivs.iter().all(|d| *d == 0.0));
        assert_eq!(spec.basis(12.0), spec.basis(10.0));
    }
}
