//! Synthetic 2-D regression targets and the mini-batch training protocol.
//!
//! Both target families sit on the plane `x + y` over `[-5, 5]²`:
//! Gaussian bumps of height 3, or flat rectangular plateaus of random
//! height.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor};
use crate::error::{Error, Result};
use crate::layers::{Network, NetworkSpec};
use crate::optim::{Adam, AdamConfig};
use crate::rng::{stream, Stream};

/// Half-width of the square input domain.
pub const DOMAIN: f64 = 5.0;
/// Peak height added by each Gaussian component.
pub const GAUSS_ELEVATION: f64 = 3.0;
/// Rejection-sampling budget for disjoint plateaus.
pub const RECT_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianComponent {
    pub mu_x: f64,
    pub mu_y: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GaussianTarget {
    pub components: Vec<GaussianComponent>,
}

impl GaussianTarget {
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        x + y
            + self
                .components
                .iter()
                .map(|c| {
                    let two_var = 2.0 * c.sigma * c.sigma;
                    GAUSS_ELEVATION
                        * ((-(x - c.mu_x).powi(2) / two_var).exp()
                            * (-(y - c.mu_y).powi(2) / two_var).exp())
                })
                .sum::<f64>()
    }
}

/// Axis-aligned rectangle `[x0, x1) × [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    /// True when the interiors intersect.
    pub fn overlaps(&self, other: &Rect) -> bool {
        self.x0 < other.x1 && other.x0 < self.x1 && self.y0 < other.y1 && other.y0 < self.y1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plateau {
    pub region: Rect,
    pub height: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DiscontinuousTarget {
    components: Vec<Plateau>,
}

impl DiscontinuousTarget {
    pub fn new(components: Vec<Plateau>) -> Result<Self> {
        for (i, a) in components.iter().enumerate() {
            for b in &components[i + 1..] {
                if a.region.overlaps(&b.region) {
                    return Err(Error::Contract("plateau regions overlap".into()));
                }
            }
        }
        Ok(Self { components })
    }

    pub fn components(&self) -> &[Plateau] {
        &self.components
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let lift = self
            .components
            .iter()
            .find(|p| p.region.contains(x, y))
            .map_or(0.0, |p| p.height);
        x + y + lift
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetKind {
    Gaussian,
    Discontinuous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TargetFunction {
    Gaussian(GaussianTarget),
    Discontinuous(DiscontinuousTarget),
}

impl TargetFunction {
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        match self {
            TargetFunction::Gaussian(t) => t.eval(x, y),
            TargetFunction::Discontinuous(t) => t.eval(x, y),
        }
    }

    pub fn complexity(&self) -> usize {
        match self {
            TargetFunction::Gaussian(t) => t.components.len(),
            TargetFunction::Discontinuous(t) => t.components.len(),
        }
    }
}

/// Distributions of the random target parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetSampling {
    pub sigma: (f64, f64),
    pub height: (f64, f64),
    pub rect_side: (f64, f64),
}

impl Default for TargetSampling {
    fn default() -> Self {
        Self {
            sigma: (0.4, 0.8),
            height: (1.0, 10.0),
            rect_side: (1.0, 3.0),
        }
    }
}

pub fn sample_target(kind: TargetKind, components: usize, seed: u64) -> Result<TargetFunction> {
    let mut rng = stream(seed, Stream::Target);
    sample_target_with(kind, components, &TargetSampling::default(), &mut rng)
}

pub fn sample_target_with<R: Rng>(
    kind: TargetKind,
    components: usize,
    sampling: &TargetSampling,
    rng: &mut R,
) -> Result<TargetFunction> {
    match kind {
        TargetKind::Gaussian => Ok(TargetFunction::Gaussian(GaussianTarget {
            components: (0..components)
                .map(|_| GaussianComponent {
                    mu_x: rng.gen_range(-DOMAIN..=DOMAIN),
                    mu_y: rng.gen_range(-DOMAIN..=DOMAIN),
                    sigma: rng.gen_range(sampling.sigma.0..=sampling.sigma.1),
                })
                .collect(),
        })),
        TargetKind::Discontinuous => {
            let mut plateaus: Vec<Plateau> = Vec::with_capacity(components);
            let mut attempts = 0;
            while plateaus.len() < components {
                if attempts == RECT_ATTEMPTS {
                    return Err(Error::BudgetExhausted {
                        attempts,
                        what: format!("placing {components} disjoint plateaus"),
                    });
                }
                attempts += 1;
                let region = sample_rect(sampling.rect_side, rng);
                let height = rng.gen_range(sampling.height.0..=sampling.height.1);
                if plateaus.iter().all(|p| !p.region.overlaps(&region)) {
                    plateaus.push(Plateau { region, height });
                }
            }
            Ok(TargetFunction::Discontinuous(DiscontinuousTarget::new(plateaus)?))
        }
    }
}

fn sample_rect<R: Rng>(side: (f64, f64), rng: &mut R) -> Rect {
    let cx = rng.gen_range(-DOMAIN..=DOMAIN);
    let cy = rng.gen_range(-DOMAIN..=DOMAIN);
    let w = rng.gen_range(side.0..=side.1);
    let h = rng.gen_range(side.0..=side.1);
    Rect {
        x0: (cx - w / 2.0).max(-DOMAIN),
        x1: (cx + w / 2.0).min(DOMAIN),
        y0: (cy - h / 2.0).max(-DOMAIN),
        y1: (cy + h / 2.0).min(DOMAIN),
    }
}

/// Noise-free samples of a target, inputs uniform on the domain.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionDataset {
    pub train_inputs: Tensor,
    pub train_targets: Tensor,
    pub test_inputs: Tensor,
    pub test_targets: Tensor,
}

impl RegressionDataset {
    pub const TRAIN_SIZE: usize = 7500;
    pub const TEST_SIZE: usize = 1000;

    pub fn generate<R: Rng>(target: &TargetFunction, train: usize, test: usize, rng: &mut R) -> Result<Self> {
        if train == 0 || test == 0 {
            return Err(Error::Contract("dataset splits must be non-empty".into()));
        }
        let mut draw = |n: usize| {
            let inputs: Vec<f64> = (0..2 * n).map(|_| rng.gen_range(-DOMAIN..=DOMAIN)).collect();
            let targets: Vec<f64> = inputs.chunks_exact(2).map(|p| target.eval(p[0], p[1])).collect();
            (
                Tensor::from_parts(vec![n, 2], inputs),
                Tensor::from_parts(vec![n, 1], targets),
            )
        };
        let (train_inputs, train_targets) = draw(train);
        let (test_inputs, test_targets) = draw(test);
        Ok(Self {
            train_inputs,
            train_targets,
            test_inputs,
            test_targets,
        })
    }

    pub fn train_len(&self) -> usize {
        self.train_inputs.rows()
    }

    pub fn test_len(&self) -> usize {
        self.test_inputs.rows()
    }

    /// Writes `train.csv` and `test.csv` (header `x,y,target`) into `dir`.
    pub fn export(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_split(&dir.join("train.csv"), &self.train_inputs, &self.train_targets)?;
        write_split(&dir.join("test.csv"), &self.test_inputs, &self.test_targets)
    }

    pub fn import(dir: &Path) -> Result<Self> {
        let (train_inputs, train_targets) = read_split(&dir.join("train.csv"))?;
        let (test_inputs, test_targets) = read_split(&dir.join("test.csv"))?;
        Ok(Self {
            train_inputs,
            train_targets,
            test_inputs,
            test_targets,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct Row {
    x: f64,
    y: f64,
    target: f64,
}

fn write_split(path: &Path, inputs: &Tensor, targets: &Tensor) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for i in 0..inputs.rows() {
        w.serialize(Row {
            x: inputs.at(i, 0),
            y: inputs.at(i, 1),
            target: targets.data()[i],
        })?;
    }
    w.flush()?;
    Ok(())
}

fn read_split(path: &Path) -> Result<(Tensor, Tensor)> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    if headers != vec!["x", "y", "target"] {
        return Err(Error::Contract(format!(
            "{}: expected header x,y,target, got {:?}",
            path.display(),
            headers
        )));
    }
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    for row in r.deserialize() {
        let row: Row = row?;
        inputs.extend([row.x, row.y]);
        targets.push(row.target);
    }
    let n = targets.len();
    Ok((Tensor::matrix(n, 2, inputs)?, Tensor::matrix(n, 1, targets)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionTraining {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for RegressionTraining {
    fn default() -> Self {
        Self {
            epochs: 300,
            batch_size: 256,
            learning_rate: 1e-4,
        }
    }
}

/// Per-epoch mean squared errors.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RegressionTrace {
    pub train_mse: Vec<f64>,
    pub test_mse: Vec<f64>,
}

impl RegressionTrace {
    pub fn final_test_mse(&self) -> Option<f64> {
        self.test_mse.last().copied()
    }
}

pub fn mse(net: &Network, inputs: &Tensor, targets: &Tensor) -> Result<f64> {
    let pred = net.predict(inputs)?;
    Ok(pred
        .data()
        .iter()
        .zip(targets.data())
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / targets.len() as f64)
}

/// Mini-batch Adam on the MSE loss. Shuffling and initialization draw from
/// `seed`; the test MSE is recorded after every epoch.
pub fn train_regression(
    spec: &NetworkSpec,
    data: &RegressionDataset,
    cfg: &RegressionTraining,
    seed: u64,
) -> Result<(Network, RegressionTrace)> {
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    if spec.input_dim() != 2 || spec.output_dim() != 1 {
        return Err(Error::Config("regression networks map 2 inputs to 1 output".into()));
    }
    let mut net = Network::new(spec.clone(), &mut stream(seed, Stream::Init))?;
    let mut shuffle_rng = stream(seed, Stream::Shuffle);
    let mut adam = Adam::new(AdamConfig::with_learning_rate(cfg.learning_rate));
    let n = data.train_len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut trace = RegressionTrace::default();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut sq_err = 0.0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let (x, y) = gather(&data.train_inputs, &data.train_targets, idx);
            let mut g = Graph::new();
            let xv = g.constant(x);
            let yv = g.constant(y);
            let (pred, leaves) = net.forward(&mut g, xv)?;
            let diff = g.sub(pred, yv)?;
            let sq = g.square(diff)?;
            let loss = g.mean(sq)?;
            let value = g.value(loss).item();
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss(format!("epoch {epoch}, batch {b}")));
            }
            sq_err += value * idx.len() as f64;
            g.backward(loss)?;
            net.apply_gradients(&mut adam, &g, &leaves)?;
        }
        trace.train_mse.push(sq_err / n as f64);
        trace.test_mse.push(mse(&net, &data.test_inputs, &data.test_targets)?);
    }
    Ok((net, trace))
}

fn gather(inputs: &Tensor, targets: &Tensor, idx: &[usize]) -> (Tensor, Tensor) {
    let cols = inputs.cols();
    let mut x = Vec::with_capacity(idx.len() * cols);
    let mut y = Vec::with_capacity(idx.len());
    for &i in idx {
        x.extend_from_slice(inputs.row(i));
        y.push(targets.data()[i]);
    }
    (
        Tensor::from_parts(vec![idx.len(), cols], x),
        Tensor::from_parts(vec![idx.len(), 1], y),
    )
}

/// Samples a fresh target and dataset from `seed`, then trains `spec` on it.
pub fn run_repetition(
    spec: &NetworkSpec,
    kind: TargetKind,
    components: usize,
    sizes: (usize, usize),
    cfg: &RegressionTraining,
    seed: u64,
) -> Result<(TargetFunction, RegressionTrace)> {
    let target = sample_target(kind, components, seed)?;
    let data = RegressionDataset::generate(&target, sizes.0, sizes.1, &mut stream(seed, Stream::Data))?;
    let (_, trace) = train_regression(spec, &data, cfg, seed)?;
    Ok((target, trace))
}
