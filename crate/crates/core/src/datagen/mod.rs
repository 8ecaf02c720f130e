//! Classical-oracle generator of coupled fluid-solid trajectories plus
//! dataset serialization.
//!
//! The oracle stands in for full FSI simulation at desk scale: a 1D (or
//! 2D-grid) advection-diffusion fluid coupled to a mass-spring-damper
//! chain. The solid imposes its boundary velocity on the adjacent fluid
//! node (kinematic condition) and receives the interface momentum flux as
//! a force (dynamic condition).

mod dataset;
mod oracle;

pub use dataset::{
    compute_stats, kind_index, load_manifest, load_trajectory_file, make_dataset, windows, Dataset,
    GenConfig, Manifest, NormStats, Split, TrajectoryEntry, CHANNELS,
};
pub use oracle::{simulate, solid_mechanical_energy, BoundaryMode, SimOptions};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hetgraph::{GraphError, HeteroGraph};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("need at least {min} trajectories for an 8:1:1 split, got {got}")]
    TooFew { got: usize, min: usize },
    #[error("trajectory too short: {got} frames, need at least {need}")]
    TooShort { got: usize, need: usize },
    #[error("unstable oracle configuration: {0}")]
    UnstableConfig(String),
    #[error("oracle state diverged: {0}")]
    NonFinite(String),
    #[error("bad file format: {0}")]
    BadFormat(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Spatial discretization of a coupled-domain scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleGeometry<T: Scalar> {
    pub n_fluid: usize,
    pub n_solid: usize,
    pub fluid_spacing: T,
    pub solid_spacing: T,
    pub layout: Layout,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Layout {
    Channel1D,
    Grid2D { cols: usize },
}

/// Static physical coefficients of one trajectory (simplified analogues
/// of density, viscosity, and elasticity).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicsParams<T: Scalar> {
    pub rho_f: T,
    /// Diffusivity (viscosity analogue).
    pub nu: T,
    pub rho_s: T,
    pub k_spring: T,
    pub damping: T,
    /// Interface force scale.
    pub coupling_gain: T,
}

pub const N_PHYSICS_PARAMS: usize = 6;

impl<T: Scalar> PhysicsParams<T> {
    pub fn as_array(&self) -> [T; N_PHYSICS_PARAMS] {
        [
            self.rho_f,
            self.nu,
            self.rho_s,
            self.k_spring,
            self.damping,
            self.coupling_gain,
        ]
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let positive = [
            ("rho_f", self.rho_f),
            ("nu", self.nu),
            ("rho_s", self.rho_s),
            ("k_spring", self.k_spring),
            ("coupling_gain", self.coupling_gain),
        ];
        for (name, v) in positive {
            if !(v > T::zero()) {
                return Err(DataError::UnstableConfig(format!("{name} must be > 0")));
            }
        }
        if self.damping < T::zero() {
            return Err(DataError::UnstableConfig("damping must be >= 0".into()));
        }
        Ok(())
    }
}

/// Pulsatile inflow waveform: sum of 1-3 sinusoids.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Inflow<T: Scalar> {
    /// (amplitude, angular frequency, phase) triples.
    pub components: Vec<(T, T, T)>,
}

impl<T: Scalar> Inflow<T> {
    pub fn value(&self, t: T) -> T {
        self.components
            .iter()
            .map(|&(a, w, p)| a * (w * t + p).sin())
            .sum()
    }

    pub fn is_zero(&self) -> bool {
        self.components.is_empty()
    }
}

/// One simulated time series of node states on a fixed graph.
#[derive(Debug, Clone)]
pub struct Trajectory<T: Scalar> {
    pub graph: HeteroGraph<T>,
    /// n_frames * n_nodes * CHANNELS, row-major.
    pub frames: Vec<T>,
    pub n_frames: usize,
    pub dt_sim: T,
    pub dt_frame: T,
    pub physics: PhysicsParams<T>,
    pub inflow: Inflow<T>,
    pub seed: u64,
}

impl<T: Scalar> Trajectory<T> {
    pub fn n_nodes(&self) -> usize {
        self.graph.node_kinds.len()
    }

    /// Frame `t` as an (n_nodes x CHANNELS) slice, row-major.
    pub fn frame(&self, t: usize) -> &[T] {
        let stride = self.n_nodes() * CHANNELS;
        &self.frames[t * stride..(t + 1) * stride]
    }

    pub fn state(&self, t: usize, node: usize, channel: usize) -> T {
        self.frames[(t * self.n_nodes() + node) * CHANNELS + channel]
    }
}
