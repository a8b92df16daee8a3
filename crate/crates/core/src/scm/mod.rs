//! Sample confidence module: the learned significance function and the
//! spline machinery behind its KAN backend.

pub mod grid;
pub mod kan;
pub mod sef;
pub mod spline;

pub use grid::{extend_all, extension_samples, fit_spline, grid_extend, verify_theorem1, ApproximationTable, TransformMatrix};
pub use kan::Kan;
pub use sef::{kan_param_count, mlp_width_for, Sef, SefGrad};
pub use spline::{spline_basis, SplineSpec};
