//! Least-squares spline fitting and coarse-to-fine grid extension.
//!
//! Moving coefficients `c1` on grid 1 to grid 2 solves
//! `min_c2 sum_s (B2(x_s) c2 - B1(x_s) c1)^2` over sample points `x_s`,
//! i.e. `c2 = B2^+ B1 c1 = T c1`. The pseudoinverse is applied through a
//! column-pivoted QR factorization of `B2`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::kan::Kan;
use super::spline::SplineSpec;
use crate::error::{Error, Result};

/// Relative threshold on `|R_ii|` below which the basis matrix counts as rank deficient.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Number of recent task losses kept as the extension sample distribution.
pub const LOSS_HISTORY: usize = 4096;

/// Solves `min_X ||A X - B||` for a tall, full-column-rank `A`.
pub fn least_squares(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (rows, cols) = a.shape();
    if rows < cols {
        return Err(Error::Solver(format!(
            "{rows} sample points cannot determine {cols} coefficients; draw more samples"
        )));
    }
    if b.nrows() != rows {
        return Err(Error::Config("right-hand side row count differs from the basis matrix".into()));
    }
    let qr = nalgebra::linalg::ColPivQR::new(a.clone());
    let r = qr.r();
    let scale = (0..cols).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    for i in 0..cols {
        if !(r[(i, i)].abs() > RANK_TOLERANCE * scale) {
            return Err(Error::Solver(format!(
                "basis matrix is rank deficient ({} of {cols} columns resolved); draw more or denser samples",
                i
            )));
        }
    }
    let mut rhs = b.clone();
    qr.q_tr_mul(&mut rhs);
    let top = rhs.rows(0, cols).into_owned();
    let mut x = r
        .solve_upper_triangular(&top)
        .ok_or_else(|| Error::Solver("triangular solve failed".into()))?;
    qr.p().inv_permute_rows(&mut x);
    Ok(x)
}

/// Rows are sample points, columns basis functions.
pub fn basis_matrix(spec: &SplineSpec, xs: &[f64]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(xs.len(), spec.basis_count());
    for (s, &x) in xs.iter().enumerate() {
        let local = spec.local(x);
        for (o, v) in local.values.iter().enumerate() {
            m[(s, local.first + o)] = *v;
        }
    }
    m
}

/// Least-squares spline coefficients for samples `(xs, ys)`.
pub fn fit_spline(spec: &SplineSpec, xs: &[f64], ys: &[f64]) -> Result<Vec<f64>> {
    if xs.len() != ys.len() {
        return Err(Error::Config("fit needs as many targets as sample points".into()));
    }
    let a = basis_matrix(spec, xs);
    let b = DMatrix::from_column_slice(ys.len(), 1, ys);
    Ok(least_squares(&a, &b)?.column(0).iter().copied().collect())
}

/// Coefficient map from one spline grid to another.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformMatrix {
    pub matrix: DMatrix<f64>,
    pub source: SplineSpec,
    pub target: SplineSpec,
}

impl TransformMatrix {
    /// `T = B2^+ B1` on the given sample points.
    pub fn fit(source: SplineSpec, target: SplineSpec, samples: &[f64]) -> Result<Self> {
        let b1 = basis_matrix(&source, samples);
        let b2 = basis_matrix(&target, samples);
        let matrix = least_squares(&b2, &b1)?;
        Ok(TransformMatrix { matrix, source, target })
    }

    pub fn apply(&self, theta: &[f64]) -> Result<Vec<f64>> {
        if theta.len() != self.source.basis_count() {
            return Err(Error::Config(format!(
                "expected {} source coefficients, got {}",
                self.source.basis_count(),
                theta.len()
            )));
        }
        let v = &self.matrix * DVector::from_column_slice(theta);
        Ok(v.iter().copied().collect())
    }
}

/// Extends one coefficient group to the target grid.
pub fn grid_extend(theta: &[f64], source: SplineSpec, target: SplineSpec, samples: &[f64]) -> Result<Vec<f64>> {
    TransformMatrix::fit(source, target, samples)?.apply(theta)
}

/// Extends every activation of a KAN with one shared transform.
pub fn extend_all(kan: &Kan, target: SplineSpec, samples: &[f64]) -> Result<Kan> {
    let t = TransformMatrix::fit(kan.spec(), target, samples)?;
    let mut coeffs = Vec::with_capacity(kan.groups() * target.basis_count());
    for q in 0..kan.groups() {
        coeffs.extend(t.apply(kan.group_coeffs(q))?);
    }
    kan.with_grid(target, coeffs)
}

/// Sample points for the extension fit: the most recent observed losses
/// (clamped into the domain) plus a uniform stratum of `2 (G + k)` points
/// that keeps the target basis matrix full rank where losses are sparse.
pub fn extension_samples<R: Rng>(history: &[f64], target: &SplineSpec, rng: &mut R) -> Vec<f64> {
    let start = history.len().saturating_sub(LOSS_HISTORY);
    let mut xs: Vec<f64> = history[start..]
        .iter()
        .filter(|x| x.is_finite())
        .map(|&x| x.clamp(target.a, target.b))
        .collect();
    let stratum = 2 * target.basis_count();
    let width = (target.b - target.a) / stratum as f64;
    for s in 0..stratum {
        xs.push(target.a + width * (s as f64 + rng.random::<f64>()));
    }
    xs
}

/// Sup-norm spline approximation errors for a target function over grids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApproximationTable {
    pub order: usize,
    pub rows: Vec<(usize, f64)>,
    /// Least-squares slope of `ln error` against `ln G`.
    pub slope: f64,
}

impl ApproximationTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("grid,sup_error\n");
        for (g, e) in &self.rows {
            s.push_str(&format!("{g},{e:.6e}\n"));
        }
        s
    }
}

/// Fits `f` on `[a, b]` with order-`order` splines for each grid size and
/// measures the sup error on a dense probe grid.
pub fn verify_theorem1<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    order: usize,
    grids: &[usize],
) -> Result<ApproximationTable> {
    let mut rows = Vec::with_capacity(grids.len());
    for &g in grids {
        let spec = SplineSpec::new(a, b, g, order)?;
        let n = 20 * spec.basis_count();
        let xs: Vec<f64> = (0..n).map(|i| a + (b - a) * (i as f64 + 0.5) / n as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
        let c = fit_spline(&spec, &xs, &ys)?;
        let probes = 4000;
        let err = (0..=probes)
            .map(|i| {
                let x = a + (b - a) * i as f64 / probes as f64;
                (spec.eval(&c, x) - f(x)).abs()
            })
            .fold(0.0, f64::max);
        rows.push((g, err));
    }
    Ok(ApproximationTable {
        order,
        slope: loglog_slope(&rows),
        rows,
    })
}

/// Ordinary least-squares slope of `ln e` on `ln g`; NaN when undefined.
pub fn loglog_slope(rows: &[(usize, f64)]) -> f64 {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|(_, e)| *e > 0.0)
        .map(|&(g, e)| ((g as f64).ln(), e.ln()))
        .collect();
    if pts.len() < 2 {
        return f64::NAN;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}
