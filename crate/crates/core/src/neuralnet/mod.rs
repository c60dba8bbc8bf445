//! Coordinate networks with residual blocks: architecture description,
//! parameter storage, positional encoding, forward/backward, Adam
//! optimization, and uniform parameter quantization.

mod engine;
mod optim;

pub use engine::{Engine, Tape};
pub use optim::{AdamState, LrSchedule};

use crate::rng::CounterRng;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sine,
}

/// Shape of one coordinate network. Tensor shapes are fully determined by
/// this description.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkArch {
    /// 3 for a single frame, 4 for spatio-temporal input
    pub input_dim: usize,
    /// positional-encoding levels for each spatial component
    pub posenc_levels_spatial: usize,
    /// positional-encoding levels for the temporal component (0 when input_dim == 3)
    pub posenc_levels_temporal: usize,
    pub residual_blocks: usize,
    /// hidden width between residual blocks
    pub inter_width: usize,
    /// hidden width inside each residual block
    pub intra_width: usize,
    /// 1 for occupancy, 3 for color
    pub output_dim: usize,
    pub core_activation: Activation,
    /// frequency applied inside the sine activation
    pub sine_frequency: f64,
    pub layer_norm: bool,
}

/// Initialization rule for one tensor, derived from its role.
#[derive(Debug, Clone, Copy, PartialEq)]
enum InitRule {
    /// first fully-connected layer of a sine network: U(-1/fan_in, 1/fan_in)
    SineFirst,
    /// layers feeding a sine activation: U(-sqrt(6/fan_in)/w0, +sqrt(6/fan_in)/w0)
    SineCore,
    /// Kaiming-uniform, U(-sqrt(6/fan_in), +sqrt(6/fan_in))
    Kaiming,
    Zero,
    One,
}

#[derive(Debug, Clone)]
pub struct TensorSpec {
    pub name: String,
    pub dims: Vec<usize>,
    init: InitRule,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl NetworkArch {
    /// Positional-encoding levels per input component, spatial first.
    pub fn component_levels(&self) -> Vec<usize> {
        let mut v = vec![self.posenc_levels_spatial; 3];
        v.extend(vec![self.posenc_levels_temporal; self.input_dim - 3]);
        v
    }

    /// Width of the encoded input vector.
    pub fn encoded_width(&self) -> usize {
        3 * (2 * self.posenc_levels_spatial + 1)
            + (self.input_dim - 3) * (2 * self.posenc_levels_temporal + 1)
    }

    /// Ordered tensor shapes; the flattened parameter vector concatenates
    /// them in exactly this order.
    pub fn tensor_specs(&self) -> Vec<TensorSpec> {
        let enc = self.encoded_width();
        let (inter, intra) = (self.inter_width, self.intra_width);
        let first_rule = match self.core_activation {
            Activation::Sine => InitRule::SineFirst,
            Activation::Relu => InitRule::Kaiming,
        };
        let core_rule = match self.core_activation {
            Activation::Sine => InitRule::SineCore,
            Activation::Relu => InitRule::Kaiming,
        };
        let mut specs = vec![
            TensorSpec {
                name: "input.weight".into(),
                dims: vec![inter, enc],
                init: first_rule,
            },
            TensorSpec {
                name: "input.bias".into(),
                dims: vec![inter],
                init: InitRule::Zero,
            },
        ];
        for b in 0..self.residual_blocks {
            specs.push(TensorSpec {
                name: format!("block{b}.fc1.weight"),
                dims: vec![intra, inter],
                init: core_rule,
            });
            specs.push(TensorSpec {
                name: format!("block{b}.fc1.bias"),
                dims: vec![intra],
                init: InitRule::Zero,
            });
            if self.layer_norm {
                specs.push(TensorSpec {
                    name: format!("block{b}.ln1.gain"),
                    dims: vec![intra],
                    init: InitRule::One,
                });
                specs.push(TensorSpec {
                    name: format!("block{b}.ln1.shift"),
                    dims: vec![intra],
                    init: InitRule::Zero,
                });
            }
            specs.push(TensorSpec {
                name: format!("block{b}.fc2.weight"),
                dims: vec![inter, intra],
                init: InitRule::Kaiming,
            });
            specs.push(TensorSpec {
                name: format!("block{b}.fc2.bias"),
                dims: vec![inter],
                init: InitRule::Zero,
            });
            if self.layer_norm {
                specs.push(TensorSpec {
                    name: format!("block{b}.ln2.gain"),
                    dims: vec![inter],
                    init: InitRule::One,
                });
                specs.push(TensorSpec {
                    name: format!("block{b}.ln2.shift"),
                    dims: vec![inter],
                    init: InitRule::Zero,
                });
            }
        }
        specs.push(TensorSpec {
            name: "output.weight".into(),
            dims: vec![self.output_dim, inter],
            init: InitRule::Kaiming,
        });
        specs.push(TensorSpec {
            name: "output.bias".into(),
            dims: vec![self.output_dim],
            init: InitRule::Zero,
        });
        specs
    }

    pub fn param_count(&self) -> usize {
        self.tensor_specs().iter().map(TensorSpec::len).sum()
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum NetError {
    #[error("input width {got} does not match encoded width {expected}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("gradient shape {got} does not match output size {expected}")]
    GradientShapeMismatch { expected: usize, got: usize },
    #[error("tensor count or length mismatch against the architecture")]
    TensorShapeMismatch,
    #[error("coordinate component {value} at index {index} outside [-1, 1]")]
    CoordinateOutOfRange { index: usize, value: f64 },
    #[error("reference parameters have a different architecture")]
    ReferenceMismatch,
}

/// The full parameter set of one network: ordered named tensors, stored in
/// 32-bit precision. Training and inference upcast to f64 internally.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub arch: NetworkArch,
    tensors: Vec<Vec<f32>>,
}

impl NetworkParams {
    pub fn zeros(arch: &NetworkArch) -> Self {
        let tensors = arch
            .tensor_specs()
            .iter()
            .map(|s| vec![0.0f32; s.len()])
            .collect();
        NetworkParams {
            arch: arch.clone(),
            tensors,
        }
    }

    /// Seeded initialization: weights by their role (SIREN-style for sine
    /// layers, Kaiming-uniform for ReLU layers), biases zero, layer-norm
    /// gain one / shift zero. Draw order is the tensor order, so identical
    /// seeds give identical networks.
    pub fn initialize(arch: &NetworkArch, rng: &mut CounterRng) -> Self {
        let mut tensors = Vec::new();
        for spec in arch.tensor_specs() {
            let fan_in = if spec.dims.len() == 2 { spec.dims[1] } else { 1 } as f64;
            let data: Vec<f32> = match spec.init {
                InitRule::Zero => vec![0.0; spec.len()],
                InitRule::One => vec![1.0; spec.len()],
                InitRule::SineFirst => {
                    let b = 1.0 / fan_in;
                    (0..spec.len()).map(|_| rng.range_f64(-b, b) as f32).collect()
                }
                InitRule::SineCore => {
                    let b = (6.0 / fan_in).sqrt() / arch.sine_frequency;
                    (0..spec.len()).map(|_| rng.range_f64(-b, b) as f32).collect()
                }
                InitRule::Kaiming => {
                    let b = (6.0 / fan_in).sqrt();
                    (0..spec.len()).map(|_| rng.range_f64(-b, b) as f32).collect()
                }
            };
            tensors.push(data);
        }
        NetworkParams {
            arch: arch.clone(),
            tensors,
        }
    }

    pub fn tensors(&self) -> &[Vec<f32>] {
        &self.tensors
    }

    /// Concatenation of all tensors in spec order.
    pub fn flatten(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.arch.param_count());
        for t in &self.tensors {
            out.extend_from_slice(t);
        }
        out
    }

    /// Inverse of [`flatten`]. Fails if the length does not match the
    /// architecture.
    pub fn unflatten(arch: &NetworkArch, flat: &[f32]) -> Result<Self, NetError> {
        let specs = arch.tensor_specs();
        let total: usize = specs.iter().map(TensorSpec::len).sum();
        if flat.len() != total {
            return Err(NetError::TensorShapeMismatch);
        }
        let mut tensors = Vec::with_capacity(specs.len());
        let mut at = 0;
        for spec in &specs {
            tensors.push(flat[at..at + spec.len()].to_vec());
            at += spec.len();
        }
        Ok(NetworkParams {
            arch: arch.clone(),
            tensors,
        })
    }

    pub fn flatten_f64(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.arch.param_count());
        for t in &self.tensors {
            out.extend(t.iter().map(|&v| v as f64));
        }
        out
    }

    pub fn from_f64(arch: &NetworkArch, flat: &[f64]) -> Result<Self, NetError> {
        let as_f32: Vec<f32> = flat.iter().map(|&v| v as f32).collect();
        Self::unflatten(arch, &as_f32)
    }
}

/// Quantized parameter set: signed indices at a uniform step size.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedParams {
    pub arch: NetworkArch,
    pub step_size: f64,
    tensors: Vec<Vec<i32>>,
}

impl QuantizedParams {
    pub fn tensors(&self) -> &[Vec<i32>] {
        &self.tensors
    }

    /// All indices concatenated in tensor order, ready for entropy coding.
    pub fn flatten(&self) -> Vec<i32> {
        let mut out = Vec::with_capacity(self.arch.param_count());
        for t in &self.tensors {
            out.extend_from_slice(t);
        }
        out
    }

    pub fn unflatten(
        arch: &NetworkArch,
        step_size: f64,
        flat: &[i32],
    ) -> Result<Self, NetError> {
        let specs = arch.tensor_specs();
        let total: usize = specs.iter().map(TensorSpec::len).sum();
        if flat.len() != total {
            return Err(NetError::TensorShapeMismatch);
        }
        let mut tensors = Vec::with_capacity(specs.len());
        let mut at = 0;
        for spec in &specs {
            tensors.push(flat[at..at + spec.len()].to_vec());
            at += spec.len();
        }
        Ok(QuantizedParams {
            arch: arch.clone(),
            step_size,
            tensors,
        })
    }
}

/// Uniform scalar quantization: `index = round(theta / step)` with ties
/// away from zero.
pub fn quantize(params: &NetworkParams, step_size: f64) -> QuantizedParams {
    assert!(step_size > 0.0, "step size must be positive");
    let tensors = params
        .tensors
        .iter()
        .map(|t| {
            t.iter()
                .map(|&v| {
                    let q = (v as f64 / step_size).round();
                    q.clamp(i32::MIN as f64, i32::MAX as f64) as i32
                })
                .collect()
        })
        .collect();
    QuantizedParams {
        arch: params.arch.clone(),
        step_size,
        tensors,
    }
}

/// `theta = index * step`, computed in f64 and stored back at 32-bit.
pub fn dequantize(q: &QuantizedParams) -> NetworkParams {
    let tensors = q
        .tensors
        .iter()
        .map(|t| t.iter().map(|&i| (i as f64 * q.step_size) as f32).collect())
        .collect();
    NetworkParams {
        arch: q.arch.clone(),
        tensors,
    }
}

/// Maps each coordinate component `c` with level `L` to
/// `(c, sin(pi c), cos(pi c), ..., sin(2^(L-1) pi c), cos(2^(L-1) pi c))`,
/// concatenated in input order. `L = 0` leaves the component unchanged.
pub fn positional_encode(coord: &[f64], levels: &[usize]) -> Result<Vec<f64>, NetError> {
    assert_eq!(coord.len(), levels.len(), "one level per component");
    for (i, &c) in coord.iter().enumerate() {
        if c.abs() > 1.0 + 1e-9 {
            return Err(NetError::CoordinateOutOfRange { index: i, value: c });
        }
    }
    let mut out = Vec::with_capacity(coord.iter().len() + 2 * levels.iter().sum::<usize>());
    for (&c, &lv) in coord.iter().zip(levels) {
        out.push(c);
        let mut freq = std::f64::consts::PI;
        for _ in 0..lv {
            out.push((freq * c).sin());
            out.push((freq * c).cos());
            freq *= 2.0;
        }
    }
    Ok(out)
}

/// Batched forward pass over pre-encoded inputs (row-major, width =
/// `arch.encoded_width()`). Outputs are row-major with width
/// `arch.output_dim`, strictly inside (0, 1).
pub fn forward(params: &NetworkParams, encoded: &[f64]) -> Result<Vec<f64>, NetError> {
    let enc_w = params.arch.encoded_width();
    if enc_w == 0 || !encoded.len().is_multiple_of(enc_w) {
        return Err(NetError::WidthMismatch {
            expected: enc_w,
            got: encoded.len(),
        });
    }
    let n = encoded.len() / enc_w;
    let engine = Engine::new(&params.arch);
    let mut tape = Tape::new(&params.arch, n);
    let flat = params.flatten_f64();
    engine.forward_encoded(&flat, encoded, n, &mut tape);
    Ok(engine.outputs(&tape).to_vec())
}

/// Exact reverse-mode gradients: given dLoss/dOutput for each sample of the
/// batch, returns dLoss/dParams as one flat vector in tensor order.
pub fn backward(
    params: &NetworkParams,
    encoded: &[f64],
    output_grads: &[f64],
) -> Result<Vec<f64>, NetError> {
    let enc_w = params.arch.encoded_width();
    if enc_w == 0 || !encoded.len().is_multiple_of(enc_w) {
        return Err(NetError::WidthMismatch {
            expected: enc_w,
            got: encoded.len(),
        });
    }
    let n = encoded.len() / enc_w;
    if output_grads.len() != n * params.arch.output_dim {
        return Err(NetError::GradientShapeMismatch {
            expected: n * params.arch.output_dim,
            got: output_grads.len(),
        });
    }
    let engine = Engine::new(&params.arch);
    let mut tape = Tape::new(&params.arch, n);
    let flat = params.flatten_f64();
    engine.forward_encoded(&flat, encoded, n, &mut tape);
    let mut grads = vec![0.0; flat.len()];
    engine.backward(&flat, &mut tape, output_grads, &mut grads);
    Ok(grads)
}

/// Elementwise L1 subgradient: `sign(theta - reference)` (zero at exact
/// equality), unscaled. The reference, when given, receives no gradient.
pub fn l1_subgradient(
    params: &NetworkParams,
    reference: Option<&NetworkParams>,
) -> Result<Vec<f64>, NetError> {
    if let Some(r) = reference {
        if r.arch != params.arch {
            return Err(NetError::ReferenceMismatch);
        }
    }
    let flat = params.flatten_f64();
    let out = match reference {
        None => flat.iter().map(|&v| sign(v)).collect(),
        Some(r) => {
            let rf = r.flatten_f64();
            flat.iter().zip(&rf).map(|(&v, &r)| sign(v - r)).collect()
        }
    };
    Ok(out)
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}
