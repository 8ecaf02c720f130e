//! Heterogeneous graph attention surrogate for coupled fluid-solid
//! dynamics, with a built-in classical oracle for data generation and a
//! tape-based reverse-mode autodiff engine for training.
//!
//! The numeric kernels are generic over the scalar type; the concrete
//! aliases below pin the shipped configuration (f64 everywhere, so
//! gradient checks stay tight).

pub mod autodiff;
pub mod datagen;
pub mod hetgraph;
pub mod loss_metrics;
pub mod model;
pub mod scalar;
pub mod trainer;

pub use scalar::Scalar;

/// Shipped scalar type: 64-bit floats throughout.
pub type Real = f64;

pub type Tensor = autodiff::Tensor<Real>;
pub type Tape = autodiff::Tape<Real>;
pub type HeteroGraph = hetgraph::HeteroGraph<Real>;
pub type NodeWindow = hetgraph::NodeWindow<Real>;
pub type ModelParams = model::ModelParams<Real>;
pub type Trajectory = datagen::Trajectory<Real>;
pub type PhysicsParams = datagen::PhysicsParams<Real>;
