use rand::Rng;

use super::{InitRange, SIGMA_MIN};
use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{contract, Result};

/// Classical RBF layer: `f_j(x) = Σ_k w[j,k] G(‖x − c_k‖, σ_k)`.
///
/// Centers `[K, D]`, spreads `[K]`, output weights `[J, K]` (no bias).
#[derive(Debug, Clone, PartialEq)]
pub struct MrbfLayer {
    centers: Tensor,
    spreads: Tensor,
    weights: Tensor,
}

impl MrbfLayer {
    pub fn new(centers: Tensor, spreads: Tensor, weights: Tensor) -> Result<Self> {
        let ok = centers.rank() == 2
            && spreads.rank() == 1
            && weights.rank() == 2
            && spreads.len() == centers.rows()
            && weights.cols() == centers.rows();
        if !ok {
            return Err(contract(format!(
                "M-RBF: centers {:?}, spreads {:?}, weights {:?} do not compose",
                centers.shape(),
                spreads.shape(),
                weights.shape()
            )));
        }
        if spreads.data().iter().any(|&s| !(s >= SIGMA_MIN)) {
            return Err(contract(format!("M-RBF spreads must be >= {SIGMA_MIN}")));
        }
        Ok(Self {
            centers,
            spreads,
            weights,
        })
    }

    /// Centers uniform in `range` per coordinate, spreads set to the side of
    /// a cube holding one kernel, weights uniform in `±1/sqrt(K)`.
    pub fn init<R: Rng>(inputs: usize, kernels: usize, outputs: usize, range: InitRange, rng: &mut R) -> Self {
        let centers = (0..kernels * inputs)
            .map(|_| rng.gen_range(range.lo..=range.hi))
            .collect();
        let sigma0 = (range.width() / (kernels as f64).powf(1.0 / inputs as f64)).max(SIGMA_MIN);
        let bound = 1.0 / (kernels as f64).sqrt();
        let weights = (0..outputs * kernels)
            .map(|_| rng.gen_range(-bound..=bound))
            .collect();
        Self {
            centers: Tensor::from_parts(vec![kernels, inputs], centers),
            spreads: Tensor::full(&[kernels], sigma0),
            weights: Tensor::from_parts(vec![outputs, kernels], weights),
        }
    }

    pub fn inputs(&self) -> usize {
        self.centers.cols()
    }

    pub fn kernels(&self) -> usize {
        self.centers.rows()
    }

    pub fn outputs(&self) -> usize {
        self.weights.rows()
    }

    pub fn centers(&self) -> &Tensor {
        &self.centers
    }

    pub fn spreads(&self) -> &Tensor {
        &self.spreads
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn clamp_spreads(&mut self) {
        for s in self.spreads.data_mut() {
            if *s < SIGMA_MIN || s.is_nan() {
                *s = SIGMA_MIN;
            }
        }
    }

    pub(crate) fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.centers, &mut self.spreads, &mut self.weights]
    }

    pub(crate) fn params(&self) -> Vec<&Tensor> {
        vec![&self.centers, &self.spreads, &self.weights]
    }

    pub(crate) fn forward(&self, g: &mut Graph, x: Var, leaves: &mut Vec<Var>) -> Result<Var> {
        let (dims, kernels) = (self.inputs(), self.kernels());
        let xs = g.value(x).shape().to_vec();
        if xs.len() != 2 || xs[1] != dims {
            return Err(contract(format!("M-RBF expects [batch, {dims}] input, got {xs:?}")));
        }
        let batch = xs[0];
        let c = g.param(self.centers.clone());
        let sigma = g.param(self.spreads.clone());
        let w = g.param(self.weights.clone());
        leaves.extend([c, sigma, w]);

        // ‖x − c‖² = ‖x‖² − 2 x·c + ‖c‖²
        let ones_d = g.constant(Tensor::full(&[dims, 1], 1.0));
        let x_sq = g.square(x)?;
        let x_norm = g.matmul(x_sq, ones_d)?;
        let x_norm = g.broadcast_to(x_norm, &[batch, kernels])?;
        let ct = g.transpose(c)?;
        let cross = g.matmul(x, ct)?;
        let two_cross = g.add(cross, cross)?;
        let ones_row = g.constant(Tensor::full(&[1, dims], 1.0));
        let ct_sq = g.square(ct)?;
        let c_norm = g.matmul(ones_row, ct_sq)?;
        let c_norm = g.broadcast_to(c_norm, &[batch, kernels])?;
        let partial = g.sub(x_norm, two_cross)?;
        let dist_sq = g.add(partial, c_norm)?;

        let var = g.square(sigma)?;
        let two_var = g.add(var, var)?;
        let ratio = g.div(dist_sq, two_var)?;
        let neg = g.neg(ratio)?;
        let phi = g.exp(neg)?;
        let wt = g.transpose(w)?;
        g.matmul(phi, wt)
    }
}
