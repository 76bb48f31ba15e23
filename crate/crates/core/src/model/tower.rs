use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{
    dropout_mask, layer_norm_backward, layer_norm_forward, linear_backward, linear_forward, relu,
    relu_backward, HasParams, LayerNormCache, Matrix, ParamTensor, RngState,
};

/// Shape and regularization of one fully connected tower.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TowerSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub dropout_p: f64,
    pub normalize: bool,
}

impl TowerSpec {
    pub const DEFAULT_LATENT: usize = 7;

    /// Item tower: 7560 inputs tapering to the latent space.
    pub fn default_item(input_dim: usize) -> Self {
        TowerSpec {
            input_dim,
            hidden_dims: vec![1024, 256, 64, 16],
            output_dim: Self::DEFAULT_LATENT,
            dropout_p: 0.2,
            normalize: true,
        }
    }

    pub fn default_user(input_dim: usize) -> Self {
        TowerSpec {
            input_dim,
            hidden_dims: vec![32, 32, 16, 16],
            output_dim: Self::DEFAULT_LATENT,
            dropout_p: 0.2,
            normalize: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::Config(
                "tower input/output dims must be positive".into(),
            ));
        }
        if self.hidden_dims.is_empty() {
            return Err(Error::Config(
                "tower needs at least one hidden layer".into(),
            ));
        }
        if self.hidden_dims.contains(&0) {
            return Err(Error::Config("hidden layer widths must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!(
                "dropout probability {} not in [0, 1)",
                self.dropout_p
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: ParamTensor,
    pub bias: ParamTensor,
}

impl Dense {
    fn glorot(d_in: usize, d_out: usize, rng: &mut RngState) -> Self {
        Dense {
            weight: ParamTensor::glorot(d_in, d_out, rng),
            bias: ParamTensor::zeros(1, d_out),
        }
    }

    fn zeros(d_in: usize, d_out: usize) -> Self {
        Dense {
            weight: ParamTensor::zeros(d_in, d_out),
            bias: ParamTensor::zeros(1, d_out),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Norm {
    pub gain: ParamTensor,
    pub shift: ParamTensor,
}

impl Norm {
    fn identity(d: usize) -> Self {
        Norm {
            gain: ParamTensor::new(Matrix::filled(1, d, 1.0)),
            shift: ParamTensor::zeros(1, d),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HiddenLayer {
    pub dense: Dense,
    pub norm: Option<Norm>,
}

/// Parameters of one tower: hidden blocks of
/// linear → normalize → ReLU → dropout, then a linear output layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Tower {
    spec: TowerSpec,
    pub hidden: Vec<HiddenLayer>,
    pub output: Dense,
}

/// How dropout behaves during a forward pass.
pub enum Dropout<'a> {
    Off,
    Sample(&'a mut RngState),
    /// Reuse masks from an earlier pass, one per hidden layer. An empty
    /// slice means no dropout.
    Frozen(&'a [Matrix]),
}

/// Activations cached by [`Tower::forward`] for the backward pass.
#[derive(Clone, Debug)]
pub struct TowerTrace {
    layers: Vec<LayerTrace>,
    last_hidden: Matrix,
    pub output: Matrix,
}

#[derive(Clone, Debug)]
struct LayerTrace {
    input: Matrix,
    norm: Option<LayerNormCache>,
    pre_activation: Matrix,
    mask: Option<Matrix>,
}

impl TowerTrace {
    /// Dropout masks applied in this pass; empty when dropout was off.
    pub fn masks(&self) -> Vec<Matrix> {
        self.layers.iter().filter_map(|l| l.mask.clone()).collect()
    }
}

impl Tower {
    pub fn new(spec: TowerSpec, rng: &mut RngState) -> Result<Self> {
        spec.validate()?;
        let mut d_in = spec.input_dim;
        let mut hidden = Vec::with_capacity(spec.hidden_dims.len());
        for &d_out in &spec.hidden_dims {
            hidden.push(HiddenLayer {
                dense: Dense::glorot(d_in, d_out, rng),
                norm: spec.normalize.then(|| Norm::identity(d_out)),
            });
            d_in = d_out;
        }
        let output = Dense::glorot(d_in, spec.output_dim, rng);
        Ok(Tower {
            spec,
            hidden,
            output,
        })
    }

    /// All weights and biases zero; normalization gains one.
    pub fn zeroed(spec: TowerSpec) -> Result<Self> {
        spec.validate()?;
        let mut d_in = spec.input_dim;
        let mut hidden = Vec::with_capacity(spec.hidden_dims.len());
        for &d_out in &spec.hidden_dims {
            hidden.push(HiddenLayer {
                dense: Dense::zeros(d_in, d_out),
                norm: spec.normalize.then(|| Norm::identity(d_out)),
            });
            d_in = d_out;
        }
        let output = Dense::zeros(d_in, spec.output_dim);
        Ok(Tower {
            spec,
            hidden,
            output,
        })
    }

    pub fn spec(&self) -> &TowerSpec {
        &self.spec
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim
    }

    pub fn forward(&self, x: &Matrix, mut dropout: Dropout<'_>) -> Result<TowerTrace> {
        if x.cols() != self.spec.input_dim {
            return Err(Error::Shape {
                op: "tower input",
                left: x.shape(),
                right: (x.rows(), self.spec.input_dim),
            });
        }
        if let Dropout::Frozen(masks) = &dropout {
            if masks.is_empty() {
                dropout = Dropout::Off;
            } else if masks.len() != self.hidden.len() {
                return Err(Error::Config(format!(
                    "expected {} frozen dropout masks, got {}",
                    self.hidden.len(),
                    masks.len()
                )));
            }
        }
        let mut h = x.clone();
        let mut layers = Vec::with_capacity(self.hidden.len());
        for (i, layer) in self.hidden.iter().enumerate() {
            let lin = linear_forward(&h, &layer.dense.weight, &layer.dense.bias)?;
            let (pre_activation, norm) = match &layer.norm {
                Some(n) => {
                    let (out, cache) = layer_norm_forward(&lin, &n.gain, &n.shift)?;
                    (out, Some(cache))
                }
                None => (lin, None),
            };
            let act = relu(&pre_activation);
            let mask = match &mut dropout {
                Dropout::Off => None,
                Dropout::Sample(rng) if self.spec.dropout_p > 0.0 => Some(dropout_mask(
                    act.rows(),
                    act.cols(),
                    self.spec.dropout_p,
                    rng,
                )?),
                Dropout::Sample(_) => None,
                Dropout::Frozen(masks) => Some(masks[i].clone()),
            };
            let input = std::mem::replace(
                &mut h,
                match &mask {
                    Some(m) => act.hadamard(m)?,
                    None => act,
                },
            );
            layers.push(LayerTrace {
                input,
                norm,
                pre_activation,
                mask,
            });
        }
        let output = linear_forward(&h, &self.output.weight, &self.output.bias)?;
        Ok(TowerTrace {
            layers,
            last_hidden: h,
            output,
        })
    }

    /// Inference-mode forward pass.
    pub fn embed(&self, x: &Matrix) -> Result<Matrix> {
        self.forward(x, Dropout::Off).map(|t| t.output)
    }

    /// Accumulates parameter gradients given `∂L/∂output`; returns `∂L/∂input`.
    pub fn backward(&mut self, trace: &TowerTrace, d_output: &Matrix) -> Result<Matrix> {
        let mut d = linear_backward(
            &trace.last_hidden,
            &mut self.output.weight,
            &mut self.output.bias,
            d_output,
        )?;
        for i in (0..self.hidden.len()).rev() {
            let lt = &trace.layers[i];
            if let Some(mask) = &lt.mask {
                d = d.hadamard(mask)?;
            }
            d = relu_backward(&lt.pre_activation, &d);
            let layer = &mut self.hidden[i];
            if let (Some(norm), Some(cache)) = (&mut layer.norm, &lt.norm) {
                d = layer_norm_backward(cache, &mut norm.gain, &mut norm.shift, &d);
            }
            d = linear_backward(
                &lt.input,
                &mut layer.dense.weight,
                &mut layer.dense.bias,
                &d,
            )?;
        }
        Ok(d)
    }

    /// Parameter names in [`HasParams`] order.
    pub fn param_names(&self, prefix: &str) -> Vec<String> {
        let mut names = Vec::new();
        for (i, layer) in self.hidden.iter().enumerate() {
            names.push(format!("{prefix}.hidden{i}.weight"));
            names.push(format!("{prefix}.hidden{i}.bias"));
            if layer.norm.is_some() {
                names.push(format!("{prefix}.hidden{i}.gain"));
                names.push(format!("{prefix}.hidden{i}.shift"));
            }
        }
        names.push(format!("{prefix}.output.weight"));
        names.push(format!("{prefix}.output.bias"));
        names
    }
}

impl HasParams for Tower {
    fn params(&self) -> Vec<&ParamTensor> {
        let mut out = Vec::new();
        for layer in &self.hidden {
            out.push(&layer.dense.weight);
            out.push(&layer.dense.bias);
            if let Some(n) = &layer.norm {
                out.push(&n.gain);
                out.push(&n.shift);
            }
        }
        out.push(&self.output.weight);
        out.push(&self.output.bias);
        out
    }

    fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        let mut out = Vec::new();
        for layer in &mut self.hidden {
            out.push(&mut layer.dense.weight);
            out.push(&mut layer.dense.bias);
            if let Some(n) = &mut layer.norm {
                out.push(&mut n.gain);
                out.push(&mut n.shift);
            }
        }
        out.push(&mut self.output.weight);
        out.push(&mut self.output.bias);
        out
    }
}

/// User tower forward pass (`training` enables dropout).
pub fn embed_user(
    tower: &Tower,
    users: &Matrix,
    training: bool,
    rng: &mut RngState,
) -> Result<Matrix> {
    let mode = if training {
        Dropout::Sample(rng)
    } else {
        Dropout::Off
    };
    tower.forward(users, mode).map(|t| t.output)
}

/// Item tower forward pass (`training` enables dropout).
pub fn embed_item(
    tower: &Tower,
    items: &Matrix,
    training: bool,
    rng: &mut RngState,
) -> Result<Matrix> {
    embed_user(tower, items, training, rng)
}
