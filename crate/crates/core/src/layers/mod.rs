//! Network building blocks: affine layers, the multivariate RBF layer, the
//! univariate RBF (U-RBF) layer, and networks composed from them.

mod affine;
mod checks;
mod mrbf;
mod network;
mod urbf;

pub use affine::{Activation, AffineLayer};
pub use checks::{
    check_injectivity, check_interpolation, fit_points, interpolation_problem, kernel_maps_differ,
    InterpolationCheck, DISTINCT_TOL,
};
pub use mrbf::MrbfLayer;
pub use network::{Layer, LayerSpec, Network, NetworkSpec};
pub use urbf::{init_urbf_centers, kernel_map, InitRange, UrbfLayer};

use crate::error::{contract, Result};

/// Lower bound on every RBF spread.
pub const SIGMA_MIN: f64 = 1e-3;

/// `exp(-u² / (2 v²))`.
pub fn gaussian_kernel(u: f64, v: f64) -> Result<f64> {
    if !(v >= SIGMA_MIN) {
        return Err(contract(format!("kernel spread {v} below floor {SIGMA_MIN}")));
    }
    Ok(gaussian_kernel_unchecked(u, v))
}

pub(crate) fn gaussian_kernel_unchecked(u: f64, v: f64) -> f64 {
    (-(u * u) / (2.0 * v * v)).exp()
}

#[cfg(test)]
mod tests;
