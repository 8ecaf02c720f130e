//! Learnable parameters and their fixed declared order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::datagen::N_PHYSICS_PARAMS;
use crate::hetgraph::NodeKind;
use crate::scalar::Scalar;

/// The update nonlinearity in the residual layer update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UpdateActivation {
    Relu,
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Hidden width d.
    pub hidden: usize,
    /// Attention depth L.
    pub depth: usize,
    /// Temporal window N.
    pub history_len: usize,
    /// Per-kind state channels.
    pub channels: usize,
    pub pos_dim: usize,
    /// Sinusoidal time-embedding width (even).
    pub time_dim: usize,
    pub n_physics: usize,
    pub update_activation: UpdateActivation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            depth: 4,
            history_len: 10,
            channels: 2,
            pos_dim: 1,
            time_dim: 8,
            n_physics: N_PHYSICS_PARAMS,
            update_activation: UpdateActivation::Relu,
        }
    }
}

impl ModelConfig {
    /// Encoder input width: state history + position + time embedding.
    pub fn input_dim(&self) -> usize {
        self.history_len * self.channels + self.pos_dim + self.time_dim
    }
}

const N_RELATIONS: usize = 4;
const PER_MLP: usize = 4; // W1, b1, W2, b2
const PER_RELATION: usize = 4; // Wq, Wk, Wv, a

/// Index arithmetic for the flat parameter list. The order here is the
/// checkpoint order; never reorder without bumping the format version.
#[derive(Debug, Clone, Copy)]
pub struct ParamLayout {
    depth: usize,
}

impl ParamLayout {
    pub fn new(config: &ModelConfig) -> Self {
        Self {
            depth: config.depth,
        }
    }

    fn kind_offset(kind: NodeKind) -> usize {
        match kind {
            NodeKind::Fluid => 0,
            NodeKind::Solid => 1,
        }
    }

    /// Encoder tensor: i in 0..4 for W1, b1, W2, b2.
    pub fn enc(&self, kind: NodeKind, i: usize) -> usize {
        Self::kind_offset(kind) * PER_MLP + i
    }

    /// Attention tensor for relation index r (F2F, S2S, F2S, S2F):
    /// i in 0..4 for Wq, Wk, Wv, a.
    pub fn rel(&self, r: usize, i: usize) -> usize {
        2 * PER_MLP + r * PER_RELATION + i
    }

    /// Aggregation logit: which = 0 for self, 1 for cross.
    pub fn agg(&self, kind: NodeKind, which: usize) -> usize {
        2 * PER_MLP + N_RELATIONS * PER_RELATION + Self::kind_offset(kind) * 2 + which
    }

    /// Layer-norm affine for layer l: i = 0 gain, 1 bias.
    pub fn ln(&self, layer: usize, i: usize) -> usize {
        2 * PER_MLP + N_RELATIONS * PER_RELATION + 4 + layer * 2 + i
    }

    /// Gate tensor: i = 0 for W_g, 1 for b_g.
    pub fn gate(&self, i: usize) -> usize {
        self.ln(self.depth, 0) + i
    }

    /// Decoder tensor, same i convention as `enc`.
    pub fn dec(&self, kind: NodeKind, i: usize) -> usize {
        self.gate(2) + Self::kind_offset(kind) * PER_MLP + i
    }

    /// Per-domain log-variance scalar.
    pub fn log_var(&self, kind: NodeKind) -> usize {
        self.dec(NodeKind::Solid, PER_MLP) + Self::kind_offset(kind)
    }

    pub fn n_tensors(&self) -> usize {
        self.log_var(NodeKind::Solid) + 1
    }
}

/// Shapes of every tensor in declared order.
pub fn tensor_shapes(config: &ModelConfig) -> Vec<(usize, usize)> {
    let d = config.hidden;
    let input = config.input_dim();
    let mlp = |fan_in: usize, out: usize| vec![(fan_in, d), (1, d), (d, out), (1, out)];
    let mut shapes = Vec::new();
    // Encoders: input -> d -> d.
    shapes.extend(mlp(input, d));
    shapes.extend(mlp(input, d));
    // Per-relation attention projections and attention vector.
    for _ in 0..N_RELATIONS {
        shapes.push((d, d));
        shapes.push((d, d));
        shapes.push((d, d));
        shapes.push((d, 1));
    }
    // Aggregation logits (self/cross per node kind).
    for _ in 0..4 {
        shapes.push((1, 1));
    }
    // Layer-norm affine per layer.
    for _ in 0..config.depth {
        shapes.push((1, d));
        shapes.push((1, d));
    }
    // Gate.
    shapes.push((2 * d + config.n_physics, 1));
    shapes.push((1, 1));
    // Decoders: d -> d -> channels.
    shapes.extend(mlp(d, config.channels));
    shapes.extend(mlp(d, config.channels));
    // Log variances.
    shapes.push((1, 1));
    shapes.push((1, 1));
    shapes
}

/// All learnable weights as a flat tensor list in the declared order.
#[derive(Debug, Clone)]
pub struct ModelParams<T: Scalar> {
    pub config: ModelConfig,
    pub layout: ParamLayout,
    pub tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> ModelParams<T> {
    /// Seeded initialization: uniform fan-in scaling for matrices, zero
    /// biases, small-uniform attention vectors, unit aggregation weights
    /// (zero logits), identity layer norm, half-open gate, sigma^2 = 1.
    pub fn init(config: ModelConfig, seed: u64) -> Self {
        let layout = ParamLayout::new(&config);
        let shapes = tensor_shapes(&config);
        debug_assert_eq!(shapes.len(), layout.n_tensors());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors = Vec::with_capacity(shapes.len());
        for (idx, &(rows, cols)) in shapes.iter().enumerate() {
            tensors.push(init_tensor(&config, &layout, idx, rows, cols, &mut rng));
        }
        Self {
            config,
            layout,
            tensors,
        }
    }

    pub fn zeros_like(&self) -> Vec<Tensor<T>> {
        self.tensors
            .iter()
            .map(|t| Tensor::zeros(t.rows(), t.cols()))
            .collect()
    }

    pub fn n_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Register every tensor as a tape leaf, in declared order.
    pub fn bind(&self, tape: &mut Tape<T>) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.leaf(t.clone())).collect()
    }
}

fn init_tensor<T: Scalar>(
    config: &ModelConfig,
    layout: &ParamLayout,
    idx: usize,
    rows: usize,
    cols: usize,
    rng: &mut ChaCha8Rng,
) -> Tensor<T> {
    // Layer-norm gains start at one.
    for l in 0..config.depth {
        if idx == layout.ln(l, 0) {
            return Tensor::new(rows, cols, vec![T::one(); cols]).expect("ln gain");
        }
        if idx == layout.ln(l, 1) {
            return Tensor::zeros(rows, cols);
        }
    }
    // Attention vectors are small-uniform.
    for r in 0..N_RELATIONS {
        if idx == layout.rel(r, 3) {
            return random_uniform(rows, cols, 0.1, rng);
        }
    }
    // Biases, aggregation logits, gate bias, and log variances start at zero.
    if cols == 1 && rows == 1 {
        return Tensor::zeros(rows, cols);
    }
    if rows == 1 {
        return Tensor::zeros(rows, cols);
    }
    // Weight matrices: uniform with fan-in scaling.
    let bound = (1.0 / rows as f64).sqrt();
    random_uniform(rows, cols, bound, rng)
}

fn random_uniform<T: Scalar>(
    rows: usize,
    cols: usize,
    bound: f64,
    rng: &mut ChaCha8Rng,
) -> Tensor<T> {
    let data = (0..rows * cols)
        .map(|_| T::from_f64(rng.gen_range(-bound..bound)))
        .collect();
    Tensor::new(rows, cols, data).expect("random tensor")
}
