use serde::{Deserialize, Serialize};

use super::{gaussian_kernel_unchecked, SIGMA_MIN};
use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{contract, Result};

/// Closed interval used to lay out kernel centers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitRange {
    pub lo: f64,
    pub hi: f64,
}

impl InitRange {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(contract(format!("init range needs finite lo < hi, got [{lo}, {hi}]")));
        }
        Ok(Self { lo, hi })
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// `k` equidistant values from `lo` to `hi`, both endpoints included exactly.
pub fn init_urbf_centers(range: InitRange, k: usize) -> Result<Vec<f64>> {
    if k < 2 {
        return Err(contract(format!("a U-RBF unit needs at least 2 kernels, got {k}")));
    }
    InitRange::new(range.lo, range.hi)?;
    let gap = range.width() / (k - 1) as f64;
    let mut centers: Vec<f64> = (0..k).map(|i| range.lo + i as f64 * gap).collect();
    centers[k - 1] = range.hi;
    Ok(centers)
}

/// One bank of 1-D Gaussian kernels per input dimension.
///
/// Input column `d` is expanded into `K` activations
/// `z[d*K + k] = exp(-(x_d - c[d,k])² / (2 σ[d,k]²))`, giving an output of
/// width `D*K`. Centers and spreads are stored `[D, K]`.
#[derive(Debug, Clone, PartialEq)]
pub struct UrbfLayer {
    centers: Tensor,
    spreads: Tensor,
    init_range: InitRange,
    spreads_learnable: bool,
}

impl UrbfLayer {
    /// Equidistant centers over `range`; every spread starts at one
    /// inter-center gap.
    pub fn new(input_dim: usize, kernels_per_input: usize, range: InitRange, spreads_learnable: bool) -> Result<Self> {
        if input_dim == 0 {
            return Err(contract("U-RBF input dimension must be positive"));
        }
        let row = init_urbf_centers(range, kernels_per_input)?;
        let sigma0 = range.width() / (kernels_per_input - 1) as f64;
        let centers: Vec<f64> = (0..input_dim).flat_map(|_| row.iter().copied()).collect();
        Self::from_parts(
            Tensor::from_parts(vec![input_dim, kernels_per_input], centers),
            Tensor::full(&[input_dim, kernels_per_input], sigma0.max(SIGMA_MIN)),
            range,
            spreads_learnable,
        )
    }

    pub fn from_parts(centers: Tensor, spreads: Tensor, init_range: InitRange, spreads_learnable: bool) -> Result<Self> {
        if centers.rank() != 2 || centers.shape() != spreads.shape() {
            return Err(contract(format!(
                "U-RBF centers {:?} and spreads {:?} must both be [D, K]",
                centers.shape(),
                spreads.shape()
            )));
        }
        if centers.cols() < 2 {
            return Err(contract("U-RBF units need at least 2 kernels"));
        }
        if spreads.data().iter().any(|&s| !(s >= SIGMA_MIN)) {
            return Err(contract(format!("U-RBF spreads must be >= {SIGMA_MIN}")));
        }
        for d in 0..centers.rows() {
            let row = centers.row(d);
            if row.iter().all(|&c| c == row[0]) {
                return Err(contract(format!("U-RBF unit {d} has all centers equal")));
            }
        }
        Ok(Self {
            centers,
            spreads,
            init_range,
            spreads_learnable,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.centers.rows()
    }

    pub fn kernels_per_input(&self) -> usize {
        self.centers.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.centers.len()
    }

    pub fn centers(&self) -> &Tensor {
        &self.centers
    }

    pub fn spreads(&self) -> &Tensor {
        &self.spreads
    }

    pub fn init_range(&self) -> InitRange {
        self.init_range
    }

    pub fn spreads_learnable(&self) -> bool {
        self.spreads_learnable
    }

    /// Kernel activations of unit `d` for a scalar input `u`.
    pub fn kernel_map(&self, d: usize, u: f64) -> Vec<f64> {
        kernel_map(self.centers.row(d), self.spreads.row(d), u)
    }

    /// Restores the spread floor after an optimizer step.
    pub fn clamp_spreads(&mut self) {
        for s in self.spreads.data_mut() {
            if *s < SIGMA_MIN || s.is_nan() {
                *s = SIGMA_MIN;
            }
        }
    }

    pub(crate) fn params_mut(&mut self) -> Vec<&mut Tensor> {
        if self.spreads_learnable {
            vec![&mut self.centers, &mut self.spreads]
        } else {
            vec![&mut self.centers]
        }
    }

    pub(crate) fn params(&self) -> Vec<&Tensor> {
        if self.spreads_learnable {
            vec![&self.centers, &self.spreads]
        } else {
            vec![&self.centers]
        }
    }

    pub(crate) fn forward(&self, g: &mut Graph, x: Var, leaves: &mut Vec<Var>) -> Result<Var> {
        let (dims, k) = (self.input_dim(), self.kernels_per_input());
        let xs = g.value(x).shape().to_vec();
        if xs.len() != 2 || xs[1] != dims {
            return Err(contract(format!("U-RBF expects [batch, {dims}] input, got {xs:?}")));
        }
        let width = dims * k;
        // Flattened row-major [D, K] lines up with output column d*K + k.
        let c = g.param(Tensor::from_parts(vec![width], self.centers.data().to_vec()));
        let sigma_value = Tensor::from_parts(vec![width], self.spreads.data().to_vec());
        let sigma = if self.spreads_learnable {
            g.param(sigma_value)
        } else {
            g.constant(sigma_value)
        };
        leaves.push(c);
        if self.spreads_learnable {
            leaves.push(sigma);
        }

        let mut select = Tensor::zeros(&[dims, width]);
        for d in 0..dims {
            for j in 0..k {
                select.data_mut()[d * width + d * k + j] = 1.0;
            }
        }
        let select = g.constant(select);
        let repeated = g.matmul(x, select)?;
        let diff = g.sub(repeated, c)?;
        let sq = g.square(diff)?;
        let var = g.square(sigma)?;
        let two_var = g.add(var, var)?;
        let ratio = g.div(sq, two_var)?;
        let neg = g.neg(ratio)?;
        g.exp(neg)
    }
}

/// `(G(u - c_k, σ_k))_k` for one kernel bank.
pub fn kernel_map(centers: &[f64], spreads: &[f64], u: f64) -> Vec<f64> {
    centers
        .iter()
        .zip(spreads)
        .map(|(&c, &s)| gaussian_kernel_unchecked(u - c, s))
        .collect()
}
