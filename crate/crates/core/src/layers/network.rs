use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Activation, AffineLayer, InitRange, MrbfLayer, UrbfLayer};
use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::optim::Adam;

/// One entry of a [`NetworkSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayerSpec {
    Affine {
        units: usize,
        activation: Activation,
    },
    Urbf {
        nnpi: usize,
        range: InitRange,
        learn_spreads: bool,
    },
    Mrbf {
        kernels: usize,
        outputs: usize,
        range: InitRange,
    },
}

impl LayerSpec {
    pub fn hidden(units: usize) -> Self {
        LayerSpec::Affine {
            units,
            activation: Activation::Relu,
        }
    }

    pub fn linear(units: usize) -> Self {
        LayerSpec::Affine {
            units,
            activation: Activation::None,
        }
    }

    fn is_rbf(&self) -> bool {
        !matches!(self, LayerSpec::Affine { .. })
    }

    fn output_width(&self, input: usize) -> usize {
        match self {
            LayerSpec::Affine { units, .. } => *units,
            LayerSpec::Urbf { nnpi, .. } => input * nnpi,
            LayerSpec::Mrbf { outputs, .. } => *outputs,
        }
    }

    fn param_count(&self, input: usize) -> usize {
        match self {
            LayerSpec::Affine { units, .. } => input * units + units,
            LayerSpec::Urbf {
                nnpi, learn_spreads, ..
            } => input * nnpi * if *learn_spreads { 2 } else { 1 },
            LayerSpec::Mrbf { kernels, outputs, .. } => kernels * input + kernels + outputs * kernels,
        }
    }
}

/// Layer layout of a network, validated at construction.
///
/// RBF layers carry no activation and must be followed directly by an
/// affine layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    input_dim: usize,
    layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    pub fn new(input_dim: usize, layers: Vec<LayerSpec>) -> Result<Self> {
        let bad = |msg: String| Err(Error::Config(msg));
        if input_dim == 0 {
            return bad("network input width must be positive".into());
        }
        if layers.is_empty() {
            return bad("network needs at least one layer".into());
        }
        for (i, layer) in layers.iter().enumerate() {
            match layer {
                LayerSpec::Affine { units: 0, .. } => return bad(format!("layer {i}: zero units")),
                LayerSpec::Urbf { nnpi, .. } if *nnpi < 2 => {
                    return bad(format!("layer {i}: U-RBF needs at least 2 kernels per input"))
                }
                LayerSpec::Mrbf { kernels, outputs, .. } if *kernels == 0 || *outputs == 0 => {
                    return bad(format!("layer {i}: M-RBF sizes must be positive"))
                }
                LayerSpec::Urbf { range, .. } | LayerSpec::Mrbf { range, .. } => {
                    InitRange::new(range.lo, range.hi)
                        .map_err(|e| Error::Config(format!("layer {i}: {e}")))?;
                }
                _ => {}
            }
            if layer.is_rbf() && !matches!(layers.get(i + 1), Some(LayerSpec::Affine { .. })) {
                return bad(format!("layer {i}: an RBF layer must be followed by an affine layer"));
            }
        }
        Ok(Self { input_dim, layers })
    }

    pub fn mlp(input_dim: usize, hidden: &[usize], outputs: usize) -> Result<Self> {
        let mut layers: Vec<LayerSpec> = hidden.iter().map(|&u| LayerSpec::hidden(u)).collect();
        layers.push(LayerSpec::linear(outputs));
        Self::new(input_dim, layers)
    }

    /// U-RBF expansion of the raw input, then the given hidden stack.
    pub fn urbf(
        input_dim: usize,
        nnpi: usize,
        range: InitRange,
        learn_spreads: bool,
        hidden: &[usize],
        outputs: usize,
    ) -> Result<Self> {
        let mut layers = vec![LayerSpec::Urbf {
            nnpi,
            range,
            learn_spreads,
        }];
        layers.extend(hidden.iter().map(|&u| LayerSpec::hidden(u)));
        layers.push(LayerSpec::linear(outputs));
        Self::new(input_dim, layers)
    }

    /// First hidden width becomes an M-RBF layer with as many kernels and
    /// outputs; the remaining widths stay affine.
    pub fn mrbf(input_dim: usize, hidden: &[usize], range: InitRange, outputs: usize) -> Result<Self> {
        let (&first, rest) = hidden
            .split_first()
            .ok_or_else(|| Error::Config("M-RBF network needs a hidden width".into()))?;
        let mut layers = vec![LayerSpec::Mrbf {
            kernels: first,
            outputs: first,
            range,
        }];
        layers.extend(rest.iter().map(|&u| LayerSpec::hidden(u)));
        layers.push(LayerSpec::linear(outputs));
        Self::new(input_dim, layers)
    }

    /// Parses compact descriptors such as `affine:32`, `urbf:20`, `urbf`
    /// (takes `default_nnpi`), `mrbf:16` or `mrbf:16:128`. A linear head of
    /// width `outputs` is appended.
    pub fn from_descriptors(
        input_dim: usize,
        descriptors: &[String],
        outputs: usize,
        range: InitRange,
        learn_spreads: bool,
        default_nnpi: Option<usize>,
    ) -> Result<Self> {
        let mut layers = Vec::with_capacity(descriptors.len() + 1);
        for raw in descriptors {
            let mut parts = raw.trim().split(':');
            let kind = parts.next().unwrap_or_default();
            let nums: Vec<usize> = parts
                .map(|p| {
                    p.trim()
                        .parse()
                        .map_err(|_| Error::Config(format!("bad number in layer descriptor `{raw}`")))
                })
                .collect::<Result<_>>()?;
            let layer = match (kind, nums.as_slice()) {
                ("affine", [units]) => LayerSpec::hidden(*units),
                ("linear", [units]) => LayerSpec::linear(*units),
                ("urbf", []) => LayerSpec::Urbf {
                    nnpi: default_nnpi
                        .ok_or_else(|| Error::Config(format!("`{raw}` needs an nnpi value")))?,
                    range,
                    learn_spreads,
                },
                ("urbf", [nnpi]) => LayerSpec::Urbf {
                    nnpi: *nnpi,
                    range,
                    learn_spreads,
                },
                ("mrbf", [k]) => LayerSpec::Mrbf {
                    kernels: *k,
                    outputs: *k,
                    range,
                },
                ("mrbf", [k, j]) => LayerSpec::Mrbf {
                    kernels: *k,
                    outputs: *j,
                    range,
                },
                _ => return Err(Error::Config(format!("unknown layer descriptor `{raw}`"))),
            };
            layers.push(layer);
        }
        layers.push(LayerSpec::linear(outputs));
        Self::new(input_dim, layers)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn output_dim(&self) -> usize {
        self.layers
            .iter()
            .fold(self.input_dim, |width, l| l.output_width(width))
    }

    /// Trainable parameter count derived from the layout alone.
    pub fn param_count(&self) -> usize {
        let mut width = self.input_dim;
        let mut total = 0;
        for layer in &self.layers {
            total += layer.param_count(width);
            width = layer.output_width(width);
        }
        total
    }

    pub fn has_urbf(&self) -> bool {
        self.layers.iter().any(|l| matches!(l, LayerSpec::Urbf { .. }))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Affine(AffineLayer),
    Urbf(UrbfLayer),
    Mrbf(MrbfLayer),
}

/// Parameters of a [`NetworkSpec`], evaluated by rebuilding a graph per call.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: NetworkSpec,
    layers: Vec<Layer>,
}

impl Network {
    pub fn new<R: Rng>(spec: NetworkSpec, rng: &mut R) -> Result<Self> {
        let mut width = spec.input_dim;
        let mut layers = Vec::with_capacity(spec.layers.len());
        for layer in &spec.layers {
            layers.push(match layer {
                LayerSpec::Affine { units, activation } => {
                    Layer::Affine(AffineLayer::init(width, *units, *activation, rng))
                }
                LayerSpec::Urbf {
                    nnpi,
                    range,
                    learn_spreads,
                } => Layer::Urbf(UrbfLayer::new(width, *nnpi, *range, *learn_spreads)?),
                LayerSpec::Mrbf {
                    kernels,
                    outputs,
                    range,
                } => Layer::Mrbf(MrbfLayer::init(width, *kernels, *outputs, *range, rng)),
            });
            width = layer.output_width(width);
        }
        Ok(Self { spec, layers })
    }

    /// Assembles a network from explicit layers; shapes must chain.
    pub fn from_layers(input_dim: usize, layers: Vec<Layer>) -> Result<Self> {
        let mut specs = Vec::with_capacity(layers.len());
        let mut width = input_dim;
        for (i, layer) in layers.iter().enumerate() {
            let (inputs, spec) = match layer {
                Layer::Affine(a) => (
                    a.inputs(),
                    LayerSpec::Affine {
                        units: a.outputs(),
                        activation: a.activation(),
                    },
                ),
                Layer::Urbf(u) => (
                    u.input_dim(),
                    LayerSpec::Urbf {
                        nnpi: u.kernels_per_input(),
                        range: u.init_range(),
                        learn_spreads: u.spreads_learnable(),
                    },
                ),
                Layer::Mrbf(m) => (
                    m.inputs(),
                    LayerSpec::Mrbf {
                        kernels: m.kernels(),
                        outputs: m.outputs(),
                        range: span_of(m.centers().data()),
                    },
                ),
            };
            if inputs != width {
                return Err(Error::Config(format!(
                    "layer {i} expects width {inputs}, previous layer gives {width}"
                )));
            }
            width = spec.output_width(width);
            specs.push(spec);
        }
        Ok(Self {
            spec: NetworkSpec::new(input_dim, specs)?,
            layers,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    /// Adds the network to `g`. Returns the output and the trainable
    /// parameter leaves in [`Network::trainable_params_mut`] order.
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<(Var, Vec<Var>)> {
        let xs = g.value(x).shape();
        if xs.len() != 2 || xs[1] != self.spec.input_dim {
            return Err(Error::Contract(format!(
                "network expects [batch, {}] input, got {:?}",
                self.spec.input_dim, xs
            )));
        }
        let mut leaves = Vec::new();
        let mut h = x;
        for layer in &self.layers {
            h = match layer {
                Layer::Affine(l) => l.forward(g, h, &mut leaves)?,
                Layer::Urbf(l) => l.forward(g, h, &mut leaves)?,
                Layer::Mrbf(l) => l.forward(g, h, &mut leaves)?,
            };
        }
        Ok((h, leaves))
    }

    /// Forward pass on plain values, `[batch, in] -> [batch, out]`.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let (y, _) = self.forward(&mut g, xv)?;
        Ok(g.value(y).clone())
    }

    pub fn trainable_params(&self) -> Vec<&Tensor> {
        self.layers
            .iter()
            .flat_map(|l| match l {
                Layer::Affine(a) => a.params(),
                Layer::Urbf(u) => u.params(),
                Layer::Mrbf(m) => m.params(),
            })
            .collect()
    }

    pub fn trainable_params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| match l {
                Layer::Affine(a) => a.params_mut(),
                Layer::Urbf(u) => u.params_mut(),
                Layer::Mrbf(m) => m.params_mut(),
            })
            .collect()
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            let fields: &[&str] = match l {
                Layer::Affine(_) => &["weight", "bias"],
                Layer::Urbf(u) if u.spreads_learnable() => &["centers", "spreads"],
                Layer::Urbf(_) => &["centers"],
                Layer::Mrbf(_) => &["centers", "spreads", "weights"],
            };
            names.extend(fields.iter().map(|f| format!("layer{i}.{f}")));
        }
        names
    }

    pub fn param_count(&self) -> usize {
        self.trainable_params().iter().map(|t| t.len()).sum()
    }

    /// Re-imposes the spread floor on every RBF layer.
    pub fn project_constraints(&mut self) {
        for l in &mut self.layers {
            match l {
                Layer::Urbf(u) => u.clamp_spreads(),
                Layer::Mrbf(m) => m.clamp_spreads(),
                Layer::Affine(_) => {}
            }
        }
    }

    /// Applies one optimizer step from the gradients of `leaves` in `g`,
    /// then projects the constraints.
    pub fn apply_gradients(&mut self, adam: &mut Adam, g: &Graph, leaves: &[Var]) -> Result<()> {
        let grads: Vec<Tensor> = leaves
            .iter()
            .map(|v| {
                g.grad(*v)
                    .cloned()
                    .ok_or_else(|| Error::Contract("parameter leaf has no gradient; run backward first".into()))
            })
            .collect::<Result<_>>()?;
        let names = self.param_names();
        adam.step(&mut self.trainable_params_mut(), &grads, &names)?;
        self.project_constraints();
        Ok(())
    }
}

fn span_of(values: &[f64]) -> InitRange {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo < hi {
        InitRange { lo, hi }
    } else {
        InitRange { lo, hi: lo + 1.0 }
    }
}
