//! Heterogeneous graph data model: typed fluid/solid nodes, the four
//! relation kinds, and construction from discretized coupled-domain
//! geometries. Graphs are immutable after construction and safe to share
//! across threads.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::{Layout, OracleGeometry};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("no fluid-solid pair lies within the interface radius")]
    NoInterfaceEdges,
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("invalid edge: {0}")]
    InvalidEdge(String),
}

/// Node domain tag. Exactly two kinds exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeKind {
    Fluid,
    Solid,
}

/// Edge relation tag. F2F/S2S are intra-domain, F2S/S2F inter-domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RelationKind {
    F2F,
    S2S,
    F2S,
    S2F,
}

pub const ALL_RELATIONS: [RelationKind; 4] = [
    RelationKind::F2F,
    RelationKind::S2S,
    RelationKind::F2S,
    RelationKind::S2F,
];

impl RelationKind {
    /// (source kind, destination kind) this relation connects.
    pub fn endpoint_kinds(self) -> (NodeKind, NodeKind) {
        match self {
            RelationKind::F2F => (NodeKind::Fluid, NodeKind::Fluid),
            RelationKind::S2S => (NodeKind::Solid, NodeKind::Solid),
            RelationKind::F2S => (NodeKind::Fluid, NodeKind::Solid),
            RelationKind::S2F => (NodeKind::Solid, NodeKind::Fluid),
        }
    }

    pub fn is_intra_domain(self) -> bool {
        matches!(self, RelationKind::F2F | RelationKind::S2S)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub relation: RelationKind,
}

/// Typed nodes, typed edges, spatial positions, and interface membership.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeteroGraph<T: Scalar> {
    pub node_kinds: Vec<NodeKind>,
    /// Spatial coordinates; only the first `pos_dim` components are
    /// meaningful (1D layouts store y = 0).
    pub positions: Vec<[T; 2]>,
    pub pos_dim: usize,
    /// Canonically sorted by (relation, dst, src).
    pub edges: Vec<Edge>,
    pub interface_flags: Vec<bool>,
}

impl<T: Scalar + Serialize> HeteroGraph<T> {
    pub fn n_nodes(&self) -> usize {
        self.node_kinds.len()
    }

    pub fn node_indices_of(&self, kind: NodeKind) -> Vec<usize> {
        (0..self.n_nodes())
            .filter(|&i| self.node_kinds[i] == kind)
            .collect()
    }

    /// Sources j of in-edges (j -> node, relation), ascending.
    pub fn neighbors(&self, node: usize, relation: RelationKind) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .edges
            .iter()
            .filter(|e| e.dst == node && e.relation == relation)
            .map(|e| e.src)
            .collect();
        out.sort_unstable();
        out
    }

    pub fn edges_of(&self, relation: RelationKind) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(move |e| e.relation == relation)
    }

    /// Check relation/endpoint consistency, index validity, interface
    /// coverage, and intra-domain symmetry.
    pub fn validate(&self) -> Result<(), GraphError> {
        let n = self.n_nodes();
        if self.positions.len() != n || self.interface_flags.len() != n {
            return Err(GraphError::DegenerateGeometry(
                "per-node arrays disagree on node count".into(),
            ));
        }
        for e in &self.edges {
            if e.src >= n || e.dst >= n {
                return Err(GraphError::InvalidEdge(format!(
                    "endpoint out of range: {} -> {}",
                    e.src, e.dst
                )));
            }
            let (sk, dk) = e.relation.endpoint_kinds();
            if self.node_kinds[e.src] != sk || self.node_kinds[e.dst] != dk {
                return Err(GraphError::InvalidEdge(format!(
                    "{:?} edge {} -> {} violates endpoint kinds",
                    e.relation, e.src, e.dst
                )));
            }
        }
        // Intra-domain symmetry.
        for rel in [RelationKind::F2F, RelationKind::S2S] {
            for e in self.edges_of(rel) {
                let mirrored = Edge {
                    src: e.dst,
                    dst: e.src,
                    relation: rel,
                };
                if !self.edges.contains(&mirrored) {
                    return Err(GraphError::InvalidEdge(format!(
                        "{:?} edge {} -> {} has no mirror",
                        rel, e.src, e.dst
                    )));
                }
            }
        }
        // Every interface-flagged node has an outgoing cross-domain edge.
        for i in 0..n {
            if !self.interface_flags[i] {
                continue;
            }
            let rel = match self.node_kinds[i] {
                NodeKind::Fluid => RelationKind::F2S,
                NodeKind::Solid => RelationKind::S2F,
            };
            if !self.edges.iter().any(|e| e.src == i && e.relation == rel) {
                return Err(GraphError::InvalidEdge(format!(
                    "interface node {} has no outgoing {:?} edge",
                    i, rel
                )));
            }
        }
        Ok(())
    }
}

fn dist2<T: Scalar>(a: [T; 2], b: [T; 2]) -> T {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

/// Node positions implied by a geometry: fluid nodes first, then solid.
pub fn node_layout<T: Scalar>(geometry: &OracleGeometry<T>) -> (Vec<NodeKind>, Vec<[T; 2]>, usize) {
    let fs = geometry.fluid_spacing;
    let ss = geometry.solid_spacing;
    let mut kinds = Vec::with_capacity(geometry.n_fluid + geometry.n_solid);
    let mut positions = Vec::with_capacity(geometry.n_fluid + geometry.n_solid);
    let half = T::from_f64(0.5);
    let pos_dim = match geometry.layout {
        Layout::Channel1D => {
            for i in 0..geometry.n_fluid {
                kinds.push(NodeKind::Fluid);
                positions.push([fs * T::from_usize(i), T::zero()]);
            }
            let solid_start = fs * T::from_usize(geometry.n_fluid - 1) + half * ss;
            for j in 0..geometry.n_solid {
                kinds.push(NodeKind::Solid);
                positions.push([solid_start + ss * T::from_usize(j), T::zero()]);
            }
            1
        }
        Layout::Grid2D { cols } => {
            let rows = geometry.n_fluid / cols;
            for r in 0..rows {
                for c in 0..cols {
                    kinds.push(NodeKind::Fluid);
                    positions.push([fs * T::from_usize(c), fs * T::from_usize(r)]);
                }
            }
            // Elastic wall along the top edge.
            let wall_y = fs * T::from_usize(rows - 1) + half * ss;
            for j in 0..geometry.n_solid {
                kinds.push(NodeKind::Solid);
                positions.push([ss * T::from_usize(j), wall_y]);
            }
            2
        }
    };
    (kinds, positions, pos_dim)
}

/// Build the heterogeneous graph for a discretized geometry.
///
/// Intra-domain edges connect nearest spatial neighbors (1D: index-adjacent,
/// 2D grid: 4-neighborhood), emitted symmetrically. Inter-domain edges
/// connect every fluid-solid pair within `interface_radius`, in both F2S
/// and S2F directions; their endpoints get interface flags.
pub fn build_graph<T: Scalar + Serialize>(
    geometry: &OracleGeometry<T>,
    interface_radius: T,
) -> Result<HeteroGraph<T>, GraphError> {
    if geometry.n_fluid < 2 || geometry.n_solid < 1 {
        return Err(GraphError::DegenerateGeometry(format!(
            "need >=2 fluid and >=1 solid points, got {} fluid / {} solid",
            geometry.n_fluid, geometry.n_solid
        )));
    }
    if let Layout::Grid2D { cols } = geometry.layout {
        if cols < 2 || geometry.n_fluid % cols != 0 || geometry.n_fluid / cols < 2 {
            return Err(GraphError::DegenerateGeometry(format!(
                "grid layout needs n_fluid divisible by cols ({} / {}) and >=2 rows",
                geometry.n_fluid, cols
            )));
        }
    }
    let (kinds, positions, pos_dim) = node_layout(geometry);
    let n_fluid = geometry.n_fluid;
    let n = kinds.len();
    let mut edges = Vec::new();

    match geometry.layout {
        Layout::Channel1D => {
            for i in 0..n_fluid - 1 {
                edges.push(Edge {
                    src: i,
                    dst: i + 1,
                    relation: RelationKind::F2F,
                });
                edges.push(Edge {
                    src: i + 1,
                    dst: i,
                    relation: RelationKind::F2F,
                });
            }
        }
        Layout::Grid2D { cols } => {
            let rows = n_fluid / cols;
            let idx = |r: usize, c: usize| r * cols + c;
            for r in 0..rows {
                for c in 0..cols {
                    if c + 1 < cols {
                        edges.push(Edge {
                            src: idx(r, c),
                            dst: idx(r, c + 1),
                            relation: RelationKind::F2F,
                        });
                        edges.push(Edge {
                            src: idx(r, c + 1),
                            dst: idx(r, c),
                            relation: RelationKind::F2F,
                        });
                    }
                    if r + 1 < rows {
                        edges.push(Edge {
                            src: idx(r, c),
                            dst: idx(r + 1, c),
                            relation: RelationKind::F2F,
                        });
                        edges.push(Edge {
                            src: idx(r + 1, c),
                            dst: idx(r, c),
                            relation: RelationKind::F2F,
                        });
                    }
                }
            }
        }
    }
    for j in 0..geometry.n_solid.saturating_sub(1) {
        let (a, b) = (n_fluid + j, n_fluid + j + 1);
        edges.push(Edge {
            src: a,
            dst: b,
            relation: RelationKind::S2S,
        });
        edges.push(Edge {
            src: b,
            dst: a,
            relation: RelationKind::S2S,
        });
    }

    let mut interface_flags = vec![false; n];
    let r2 = interface_radius * interface_radius;
    let mut any_interface = false;
    for f in 0..n_fluid {
        for s in n_fluid..n {
            if interface_radius > T::zero() && dist2(positions[f], positions[s]) <= r2 {
                edges.push(Edge {
                    src: f,
                    dst: s,
                    relation: RelationKind::F2S,
                });
                edges.push(Edge {
                    src: s,
                    dst: f,
                    relation: RelationKind::S2F,
                });
                interface_flags[f] = true;
                interface_flags[s] = true;
                any_interface = true;
            }
        }
    }
    if !any_interface {
        return Err(GraphError::NoInterfaceEdges);
    }

    edges.sort_by_key(|e| (e.relation, e.dst, e.src));
    let graph = HeteroGraph {
        node_kinds: kinds,
        positions,
        pos_dim,
        edges,
        interface_flags,
    };
    graph.validate()?;
    Ok(graph)
}

/// Per-node model input for one time step: the last N frames of
/// normalized state, static normalized physics parameters, and the
/// frame time step.
#[derive(Debug, Clone)]
pub struct NodeWindow<T: Scalar> {
    /// n x (N * channels), row per node, oldest frame first, z-scored.
    pub state_history: crate::autodiff::Tensor<T>,
    /// n x d_p static physics parameters, z-scored.
    pub physics_params: crate::autodiff::Tensor<T>,
    /// Frame spacing in seconds.
    pub dt: T,
    /// History length N.
    pub history_len: usize,
}

/// Per-relation edge index precomputed for attention: edges sorted by
/// (dst, src), with contiguous softmax segment ids per destination.
#[derive(Debug, Clone)]
pub struct RelationIndex {
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    /// Contiguous group id per edge, one group per destination node.
    pub softmax_seg: Vec<usize>,
}

impl RelationIndex {
    pub fn build<T: Scalar + Serialize>(graph: &HeteroGraph<T>, relation: RelationKind) -> Self {
        let mut pairs: Vec<(usize, usize)> = graph
            .edges_of(relation)
            .map(|e| (e.dst, e.src))
            .collect();
        pairs.sort_unstable();
        let mut src = Vec::with_capacity(pairs.len());
        let mut dst = Vec::with_capacity(pairs.len());
        let mut softmax_seg = Vec::with_capacity(pairs.len());
        let mut seg = 0usize;
        for (k, &(d, s)) in pairs.iter().enumerate() {
            if k > 0 && d != pairs[k - 1].0 {
                seg += 1;
            }
            dst.push(d);
            src.push(s);
            softmax_seg.push(seg);
        }
        Self {
            src,
            dst,
            softmax_seg,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{Layout, OracleGeometry};

    fn chain_geometry() -> OracleGeometry<f64> {
        OracleGeometry {
            n_fluid: 4,
            n_solid: 2,
            fluid_spacing: 1.0,
            solid_spacing: 1.0,
            layout: Layout::Channel1D,
        }
    }

    /// Brute-force all-pairs distance check over the documented layout:
    /// fluid at x = 0..3, solid at x = 3.5, 4.5, radius 0.6.
    #[test]
    fn chain_edge_counts() {
        let g = build_graph(&chain_geometry(), 0.6).unwrap();
        assert_eq!(g.positions[4][0], 3.5);
        assert_eq!(g.positions[5][0], 4.5);
        let count = |rel| g.edges_of(rel).count();
        assert_eq!(count(RelationKind::F2F), 6);
        assert_eq!(count(RelationKind::S2S), 2);
        assert_eq!(count(RelationKind::F2S), 1);
        assert_eq!(count(RelationKind::S2F), 1);
        assert!(g.interface_flags[3] && g.interface_flags[4]);
        assert!(!g.interface_flags[0] && !g.interface_flags[5]);
    }

    #[test]
    fn chain_neighbors() {
        let g = build_graph(&chain_geometry(), 0.6).unwrap();
        assert_eq!(g.neighbors(4, RelationKind::F2S), vec![3]);
        assert_eq!(g.neighbors(1, RelationKind::F2F), vec![0, 2]);
        assert!(g.neighbors(0, RelationKind::S2F).is_empty());
    }

    #[test]
    fn zero_radius_has_no_interface() {
        let err = build_graph(&chain_geometry(), 0.0).unwrap_err();
        assert!(matches!(err, GraphError::NoInterfaceEdges));
    }

    #[test]
    fn degenerate_geometry_rejected() {
        let mut geo = chain_geometry();
        geo.n_fluid = 1;
        assert!(matches!(
            build_graph(&geo, 0.6),
            Err(GraphError::DegenerateGeometry(_))
        ));
    }

    #[test]
    fn grid_layout_builds_and_validates() {
        let geo = OracleGeometry {
            n_fluid: 12,
            n_solid: 4,
            fluid_spacing: 1.0,
            solid_spacing: 1.0,
            layout: Layout::Grid2D { cols: 4 },
        };
        let g = build_graph(&geo, 1.5).unwrap();
        g.validate().unwrap();
        assert_eq!(g.pos_dim, 2);
        // 4-neighborhood: 2*(rows*(cols-1) + cols*(rows-1)) directed edges.
        assert_eq!(g.edges_of(RelationKind::F2F).count(), 2 * (3 * 3 + 4 * 2));
        assert!(g.edges_of(RelationKind::F2S).count() >= 4);
    }

    #[test]
    fn serialization_round_trip() {
        let g = build_graph(&chain_geometry(), 0.6).unwrap();
        let text = serde_json::to_string(&g).unwrap();
        let back: HeteroGraph<f64> = serde_json::from_str(&text).unwrap();
        assert_eq!(g, back);
    }

    #[test]
    fn determinism_byte_identical() {
        let a = serde_json::to_vec(&build_graph(&chain_geometry(), 0.6).unwrap()).unwrap();
        let b = serde_json::to_vec(&build_graph(&chain_geometry(), 0.6).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn relation_index_segments() {
        let g = build_graph(&chain_geometry(), 0.6).unwrap();
        let idx = RelationIndex::build(&g, RelationKind::F2F);
        // Destinations 0..3; node 0 and 3 have one in-edge, 1 and 2 have two.
        assert_eq!(idx.dst, vec![0, 1, 1, 2, 2, 3]);
        assert_eq!(idx.src, vec![1, 0, 2, 1, 3, 2]);
        assert_eq!(idx.softmax_seg, vec![0, 1, 1, 2, 2, 3]);
    }
}
