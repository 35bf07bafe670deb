//! Empirical checks of the kernel-map injectivity and finite-point
//! interpolation properties of U-RBF networks.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{kernel_map, InitRange, Network, NetworkSpec, UrbfLayer};
use crate::autodiff::{Graph, Tensor};
use crate::error::Result;
use crate::optim::{Adam, AdamConfig};
use crate::rng::{stream, Stream};

/// Minimum componentwise gap for two kernel vectors to count as distinct.
pub const DISTINCT_TOL: f64 = 1e-12;

/// True when the kernel maps of `u` and `v` differ somewhere by more than
/// [`DISTINCT_TOL`].
pub fn kernel_maps_differ(centers: &[f64], spreads: &[f64], u: f64, v: f64) -> bool {
    kernel_map(centers, spreads, u)
        .iter()
        .zip(kernel_map(centers, spreads, v))
        .any(|(a, b)| (a - b).abs() > DISTINCT_TOL)
}

/// Draws `samples` pairs `u != v` from the layer's init range for every
/// unit and reports whether all of them map to distinct kernel vectors.
pub fn check_injectivity(layer: &UrbfLayer, samples: usize, seed: u64) -> bool {
    let mut rng = stream(seed, Stream::Verification);
    let InitRange { lo, hi } = layer.init_range();
    for d in 0..layer.input_dim() {
        let centers = layer.centers().row(d);
        let spreads = layer.spreads().row(d);
        for _ in 0..samples {
            let u = rng.gen_range(lo..=hi);
            let mut v = rng.gen_range(lo..=hi);
            while v == u {
                v = rng.gen_range(lo..=hi);
            }
            if !kernel_maps_differ(centers, spreads, u, v) {
                return false;
            }
        }
    }
    true
}

/// Settings for [`check_interpolation`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterpolationCheck {
    pub points: usize,
    pub input_dim: usize,
    pub nnpi: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Targets are uniform in `[-target_scale, target_scale]`.
    pub target_scale: f64,
}

impl Default for InterpolationCheck {
    fn default() -> Self {
        Self {
            points: 10,
            input_dim: 2,
            nnpi: 10,
            hidden: 32,
            epochs: 5000,
            learning_rate: 1e-2,
            target_scale: 1.0,
        }
    }
}

/// Distinct points in `[-5, 5]^D` with random scalar targets.
pub fn interpolation_problem(cfg: &InterpolationCheck, seed: u64) -> (Tensor, Tensor) {
    let mut rng = stream(seed, Stream::Data);
    let mut inputs: Vec<f64> = Vec::with_capacity(cfg.points * cfg.input_dim);
    while inputs.len() < cfg.points * cfg.input_dim {
        let p: Vec<f64> = (0..cfg.input_dim).map(|_| rng.gen_range(-5.0..=5.0)).collect();
        let dup = inputs.chunks(cfg.input_dim).any(|q| q == p.as_slice());
        if !dup {
            inputs.extend(p);
        }
    }
    let targets = (0..cfg.points)
        .map(|_| rng.gen_range(-cfg.target_scale..=cfg.target_scale))
        .collect();
    (
        Tensor::from_parts(vec![cfg.points, cfg.input_dim], inputs),
        Tensor::from_parts(vec![cfg.points, 1], targets),
    )
}

/// Fits a U-RBF network to the given points with full-batch Adam and
/// returns the final training MSE.
pub fn fit_points(cfg: &InterpolationCheck, inputs: &Tensor, targets: &Tensor, seed: u64) -> Result<f64> {
    let spec = NetworkSpec::urbf(
        cfg.input_dim,
        cfg.nnpi,
        InitRange::new(-5.0, 5.0)?,
        true,
        &[cfg.hidden],
        1,
    )?;
    let mut init_rng: ChaCha8Rng = stream(seed, Stream::Init);
    let mut net = Network::new(spec, &mut init_rng)?;
    let mut adam = Adam::new(AdamConfig::with_learning_rate(cfg.learning_rate));
    let mut mse = mse(&net, inputs, targets)?;
    for _ in 0..cfg.epochs {
        let mut g = Graph::new();
        let x = g.constant(inputs.clone());
        let y = g.constant(targets.clone());
        let (pred, leaves) = net.forward(&mut g, x)?;
        let diff = g.sub(pred, y)?;
        let sq = g.square(diff)?;
        let loss = g.mean(sq)?;
        g.backward(loss)?;
        net.apply_gradients(&mut adam, &g, &leaves)?;
    }
    if cfg.epochs > 0 {
        mse = self::mse(&net, inputs, targets)?;
    }
    Ok(mse)
}

/// Random interpolation problem of `cfg.points` points, fitted from scratch.
pub fn check_interpolation(cfg: &InterpolationCheck, seed: u64) -> Result<f64> {
    let (x, y) = interpolation_problem(cfg, seed);
    fit_points(cfg, &x, &y, seed)
}

fn mse(net: &Network, x: &Tensor, y: &Tensor) -> Result<f64> {
    let pred = net.predict(x)?;
    Ok(pred
        .data()
        .iter()
        .zip(y.data())
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / y.len() as f64)
}
