//! Gradient-check and kernel-property suites behind the `gradcheck` and
//! `verify` commands.
//!
//! Every gradient case compares reverse-mode gradients with central finite
//! differences. The two RBF layers additionally get a closed-form gradient
//! computed without the graph.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{finite_difference_gradient, relative_error, Graph, OpKind, Tensor, Var};
use crate::error::Result;
use crate::layers::{
    check_injectivity, check_interpolation, InitRange, InterpolationCheck, MrbfLayer, UrbfLayer,
};
use crate::rng::{stream, Stream};

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCase {
    pub kind: String,
    pub shapes: Vec<Vec<usize>>,
    /// Worst relative error over the case's inputs, autodiff vs. finite
    /// differences.
    pub fd_error: f64,
    /// Worst relative error against the closed form, where one exists.
    pub analytic_error: Option<f64>,
}

impl GradCase {
    pub fn passed(&self, tol: f64) -> bool {
        self.fd_error < tol && self.analytic_error.is_none_or(|e| e < tol)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub cases: Vec<GradCase>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.cases.iter().all(|c| c.passed(self.tolerance))
    }

    pub fn failures(&self) -> impl Iterator<Item = &GradCase> {
        self.cases.iter().filter(|c| !c.passed(self.tolerance))
    }

    pub fn worst(&self) -> f64 {
        self.cases
            .iter()
            .flat_map(|c| std::iter::once(c.fd_error).chain(c.analytic_error))
            .fold(0.0, f64::max)
    }

    pub fn kinds(&self) -> Vec<&str> {
        let mut k: Vec<&str> = self.cases.iter().map(|c| c.kind.as_str()).collect();
        k.sort_unstable();
        k.dedup();
        k
    }
}

/// Op kinds exercised by [`run_gradcheck`], plus the two layer kinds.
pub const GRADCHECK_KINDS: [&str; 16] = [
    "add",
    "subtract",
    "multiply",
    "divide",
    "negate",
    "exp",
    "square",
    "matmul",
    "sum",
    "mean",
    "relu",
    "broadcast_to",
    "concat",
    "transpose",
    "urbf",
    "mrbf",
];

/// `cases_per_kind` random cases for every entry of [`GRADCHECK_KINDS`].
pub fn run_gradcheck(seed: u64, cases_per_kind: usize) -> Result<GradcheckReport> {
    let mut rng = stream(seed, Stream::Verification);
    let mut cases = Vec::with_capacity(cases_per_kind * GRADCHECK_KINDS.len());
    for kind in GRADCHECK_KINDS {
        for _ in 0..cases_per_kind {
            cases.push(match kind {
                "urbf" => urbf_case(&mut rng)?,
                "mrbf" => mrbf_case(&mut rng)?,
                _ => op_case(kind, &mut rng)?,
            });
        }
    }
    Ok(GradcheckReport {
        tolerance: GRADCHECK_TOLERANCE,
        cases,
    })
}

fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_parts(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..=hi)).collect())
}

/// Values in `[-2, 2]` kept at least `gap` away from zero.
fn away_from_zero(shape: &[usize], gap: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let mut t = uniform(shape, gap, 2.0, rng);
    for v in t.data_mut() {
        if rng.gen_bool(0.5) {
            *v = -*v;
        }
    }
    t
}

fn small_dim(rng: &mut ChaCha8Rng) -> usize {
    rng.gen_range(1..=4)
}

/// Random shape of rank 1 or 2.
fn random_shape(rng: &mut ChaCha8Rng) -> Vec<usize> {
    if rng.gen_bool(0.5) {
        vec![small_dim(rng)]
    } else {
        vec![small_dim(rng), small_dim(rng)]
    }
}

/// Builds `op` over `inputs` in a fresh graph and contracts the output with
/// a fixed random weighting so every output entry feeds the loss.
fn weighted_loss(g: &mut Graph, out: Var, weights: &Tensor) -> Result<Var> {
    let w = g.constant(weights.clone());
    let prod = g.mul(out, w)?;
    g.sum(prod)
}

fn op_case(kind: &str, rng: &mut ChaCha8Rng) -> Result<GradCase> {
    let (op, inputs) = op_inputs(kind, rng);
    let eval = |g: &mut Graph, vars: &[Var]| g.forward_op(op.clone(), vars);

    // Output shape fixes the loss weighting.
    let mut probe = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| probe.constant(t.clone())).collect();
    let probe_out = eval(&mut probe, &vars)?;
    let out_shape = probe.value(probe_out).shape().to_vec();
    let weights = uniform(&out_shape, -1.0, 1.0, rng);

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = eval(&mut g, &vars)?;
    let loss = weighted_loss(&mut g, out, &weights)?;
    g.backward(loss)?;
    let auto: Vec<Tensor> = vars.iter().map(|&v| grad_or_zero(&g, v)).collect();

    let fd = finite_difference_gradient(
        |p| {
            let mut g = Graph::new();
            let vars: Vec<Var> = p.iter().map(|t| g.constant(t.clone())).collect();
            let out = eval(&mut g, &vars)?;
            let loss = weighted_loss(&mut g, out, &weights)?;
            Ok(g.value(loss).item())
        },
        &inputs,
        FD_STEP,
    )?;
    Ok(GradCase {
        kind: kind.to_string(),
        shapes: inputs.iter().map(|t| t.shape().to_vec()).collect(),
        fd_error: worst(&auto, &fd),
        analytic_error: None,
    })
}

fn op_inputs(kind: &str, rng: &mut ChaCha8Rng) -> (OpKind, Vec<Tensor>) {
    let binary_shapes = |rng: &mut ChaCha8Rng| {
        let a = random_shape(rng);
        // Half the rank-2 cases broadcast a row vector.
        let b = if a.len() == 2 && rng.gen_bool(0.5) {
            vec![a[1]]
        } else {
            a.clone()
        };
        (a, b)
    };
    match kind {
        "add" | "subtract" | "multiply" => {
            let (a, b) = binary_shapes(rng);
            let op = match kind {
                "add" => OpKind::Add,
                "subtract" => OpKind::Subtract,
                _ => OpKind::Multiply,
            };
            (op, vec![uniform(&a, -2.0, 2.0, rng), uniform(&b, -2.0, 2.0, rng)])
        }
        "divide" => {
            let (a, b) = binary_shapes(rng);
            (OpKind::Divide, vec![uniform(&a, -2.0, 2.0, rng), away_from_zero(&b, 0.5, rng)])
        }
        "negate" | "exp" | "square" | "sum" | "mean" | "transpose" => {
            let mut s = random_shape(rng);
            if kind == "transpose" && s.len() == 1 {
                s.push(small_dim(rng));
            }
            let op = match kind {
                "negate" => OpKind::Negate,
                "exp" => OpKind::Exp,
                "square" => OpKind::Square,
                "sum" => OpKind::Sum,
                "mean" => OpKind::Mean,
                _ => OpKind::Transpose,
            };
            (op, vec![uniform(&s, -2.0, 2.0, rng)])
        }
        "relu" => {
            // Stay clear of the kink so central differences are exact.
            let s = random_shape(rng);
            (OpKind::Relu, vec![away_from_zero(&s, 0.05, rng)])
        }
        "matmul" => {
            let (m, k, n) = (small_dim(rng), small_dim(rng), small_dim(rng));
            (OpKind::MatMul, vec![uniform(&[m, k], -2.0, 2.0, rng), uniform(&[k, n], -2.0, 2.0, rng)])
        }
        "broadcast_to" => {
            let (m, n) = (small_dim(rng) + 1, small_dim(rng));
            let from = match rng.gen_range(0..4) {
                0 => vec![n],
                1 => vec![1, n],
                2 => vec![m, 1],
                _ => vec![1],
            };
            (OpKind::BroadcastTo(vec![m, n]), vec![uniform(&from, -2.0, 2.0, rng)])
        }
        "concat" => {
            let parts = rng.gen_range(2..=3);
            let rows = small_dim(rng);
            let rank2 = rng.gen_bool(0.5);
            let inputs = (0..parts)
                .map(|_| {
                    let s = if rank2 { vec![rows, small_dim(rng)] } else { vec![small_dim(rng)] };
                    uniform(&s, -2.0, 2.0, rng)
                })
                .collect();
            (OpKind::Concat, inputs)
        }
        other => unreachable!("no gradient case for `{other}`"),
    }
}

fn grad_or_zero(g: &Graph, v: Var) -> Tensor {
    g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(g.value(v).shape()))
}

fn worst(a: &[Tensor], b: &[Tensor]) -> f64 {
    a.iter().zip(b).map(|(x, y)| relative_error(x, y)).fold(0.0, f64::max)
}

/// Gradients of `Σ R ⊙ layer(x)` w.r.t. (x, centers, spreads).
fn urbf_case(rng: &mut ChaCha8Rng) -> Result<GradCase> {
    let (batch, dims, k) = (small_dim(rng), small_dim(rng), rng.gen_range(2..=5));
    let x = uniform(&[batch, dims], -2.0, 2.0, rng);
    let centers = uniform(&[dims, k], -2.0, 2.0, rng);
    let spreads = uniform(&[dims, k], 0.5, 2.0, rng);
    let weights = uniform(&[batch, dims * k], -1.0, 1.0, rng);
    let range = InitRange::new(-2.0, 2.0)?;
    let build = |c: &Tensor, s: &Tensor| UrbfLayer::from_parts(c.clone(), s.clone(), range, true);

    let layer = build(&centers, &spreads)?;
    let mut g = Graph::new();
    let xv = g.param(x.clone());
    let mut leaves = Vec::new();
    let out = layer.forward(&mut g, xv, &mut leaves)?;
    let loss = weighted_loss(&mut g, out, &weights)?;
    g.backward(loss)?;
    let auto = vec![
        grad_or_zero(&g, xv),
        grad_or_zero(&g, leaves[0]).reshape(vec![dims, k])?,
        grad_or_zero(&g, leaves[1]).reshape(vec![dims, k])?,
    ];

    let params = [x.clone(), centers.clone(), spreads.clone()];
    let fd = finite_difference_gradient(
        |p| {
            let layer = build(&p[1], &p[2])?;
            let mut g = Graph::new();
            let xv = g.constant(p[0].clone());
            let out = layer.forward(&mut g, xv, &mut Vec::new())?;
            let loss = weighted_loss(&mut g, out, &weights)?;
            Ok(g.value(loss).item())
        },
        &params,
        FD_STEP,
    )?;

    // z = exp(-(x-c)²/(2σ²)): dz/dx = -z(x-c)/σ², dz/dc = z(x-c)/σ², dz/dσ = z(x-c)²/σ³.
    let mut gx = Tensor::zeros(&[batch, dims]);
    let mut gc = Tensor::zeros(&[dims, k]);
    let mut gs = Tensor::zeros(&[dims, k]);
    for b in 0..batch {
        for d in 0..dims {
            for j in 0..k {
                let (c, s) = (centers.at(d, j), spreads.at(d, j));
                let u = x.at(b, d) - c;
                let z = (-u * u / (2.0 * s * s)).exp();
                let r = weights.at(b, d * k + j);
                gx.data_mut()[b * dims + d] -= r * z * u / (s * s);
                gc.data_mut()[d * k + j] += r * z * u / (s * s);
                gs.data_mut()[d * k + j] += r * z * u * u / (s * s * s);
            }
        }
    }
    Ok(GradCase {
        kind: "urbf".into(),
        shapes: params.iter().map(|t| t.shape().to_vec()).collect(),
        fd_error: worst(&auto, &fd),
        analytic_error: Some(worst(&auto, &[gx, gc, gs])),
    })
}

/// Gradients of `Σ R ⊙ layer(x)` w.r.t. (x, centers, spreads, weights).
fn mrbf_case(rng: &mut ChaCha8Rng) -> Result<GradCase> {
    let (batch, dims, k, j) = (small_dim(rng), small_dim(rng), small_dim(rng), small_dim(rng));
    let x = uniform(&[batch, dims], -2.0, 2.0, rng);
    let centers = uniform(&[k, dims], -2.0, 2.0, rng);
    let spreads = uniform(&[k], 0.8, 2.0, rng);
    let w = uniform(&[j, k], -1.0, 1.0, rng);
    let r = uniform(&[batch, j], -1.0, 1.0, rng);

    let layer = MrbfLayer::new(centers.clone(), spreads.clone(), w.clone())?;
    let mut g = Graph::new();
    let xv = g.param(x.clone());
    let mut leaves = Vec::new();
    let out = layer.forward(&mut g, xv, &mut leaves)?;
    let loss = weighted_loss(&mut g, out, &r)?;
    g.backward(loss)?;
    let auto: Vec<Tensor> = [xv, leaves[0], leaves[1], leaves[2]].iter().map(|&v| grad_or_zero(&g, v)).collect();

    let params = [x.clone(), centers.clone(), spreads.clone(), w.clone()];
    let fd = finite_difference_gradient(
        |p| {
            let layer = MrbfLayer::new(p[1].clone(), p[2].clone(), p[3].clone())?;
            let mut g = Graph::new();
            let xv = g.constant(p[0].clone());
            let out = layer.forward(&mut g, xv, &mut Vec::new())?;
            let loss = weighted_loss(&mut g, out, &r)?;
            Ok(g.value(loss).item())
        },
        &params,
        FD_STEP,
    )?;

    // φ_k = exp(-‖x-c_k‖²/(2σ_k²)), y_j = Σ_k w_jk φ_k, upstream a_k = Σ_j r_j w_jk.
    let mut gx = Tensor::zeros(&[batch, dims]);
    let mut gc = Tensor::zeros(&[k, dims]);
    let mut gs = Tensor::zeros(&[k]);
    let mut gw = Tensor::zeros(&[j, k]);
    for b in 0..batch {
        for kk in 0..k {
            let s = spreads.data()[kk];
            let d2: f64 = (0..dims).map(|d| (x.at(b, d) - centers.at(kk, d)).powi(2)).sum();
            let phi = (-d2 / (2.0 * s * s)).exp();
            let a: f64 = (0..j).map(|jj| r.at(b, jj) * w.at(jj, kk)).sum();
            for jj in 0..j {
                gw.data_mut()[jj * k + kk] += r.at(b, jj) * phi;
            }
            gs.data_mut()[kk] += a * phi * d2 / (s * s * s);
            for d in 0..dims {
                let u = x.at(b, d) - centers.at(kk, d);
                gx.data_mut()[b * dims + d] -= a * phi * u / (s * s);
                gc.data_mut()[kk * dims + d] += a * phi * u / (s * s);
            }
        }
    }
    Ok(GradCase {
        kind: "mrbf".into(),
        shapes: params.iter().map(|t| t.shape().to_vec()).collect(),
        fd_error: worst(&auto, &fd),
        analytic_error: Some(worst(&auto, &[gx, gc, gs, gw])),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectivityResult {
    pub kernels: usize,
    pub pairs: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpolationResult {
    pub seed: u64,
    pub final_mse: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub injectivity: Vec<InjectivityResult>,
    pub interpolation: Vec<InterpolationResult>,
    pub mse_threshold: f64,
    pub required_fits: usize,
}

impl VerifyReport {
    pub fn injectivity_passed(&self) -> bool {
        self.injectivity.iter().all(|r| r.passed)
    }

    pub fn fits(&self) -> usize {
        self.interpolation.iter().filter(|r| r.passed).count()
    }

    pub fn passed(&self) -> bool {
        self.injectivity_passed() && self.fits() >= self.required_fits
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifySettings {
    pub kernel_counts: Vec<usize>,
    pub pairs: usize,
    pub interpolation: InterpolationCheck,
    pub seeds: usize,
    pub mse_threshold: f64,
    pub required_fits: usize,
}

impl Default for VerifySettings {
    fn default() -> Self {
        Self {
            kernel_counts: vec![2, 5, 20],
            pairs: 1000,
            interpolation: InterpolationCheck::default(),
            seeds: 5,
            mse_threshold: 1e-3,
            required_fits: 4,
        }
    }
}

/// Injectivity of equidistant 1-D kernel banks and finite-point
/// interpolation, seeds `seed..seed + settings.seeds`.
pub fn run_verify(settings: &VerifySettings, seed: u64) -> Result<VerifyReport> {
    let range = InitRange::new(-5.0, 5.0)?;
    let injectivity = settings
        .kernel_counts
        .iter()
        .map(|&k| {
            let layer = UrbfLayer::new(1, k, range, true)?;
            Ok(InjectivityResult {
                kernels: k,
                pairs: settings.pairs,
                passed: check_injectivity(&layer, settings.pairs, seed),
            })
        })
        .collect::<Result<_>>()?;
    let interpolation = (0..settings.seeds as u64)
        .map(|i| {
            let mse = check_interpolation(&settings.interpolation, seed + i)?;
            Ok(InterpolationResult {
                seed: seed + i,
                final_mse: mse,
                passed: mse < settings.mse_threshold,
            })
        })
        .collect::<Result<_>>()?;
    Ok(VerifyReport {
        injectivity,
        interpolation,
        mse_threshold: settings.mse_threshold,
        required_fits: settings.required_fits,
    })
}
