//! The surrogate forward pass: type-specific encoders, L heterogeneous
//! attention layers, the physics-conditioned gate, type-specific decoders.

use serde::Serialize;

use crate::autodiff::{sinusoid_embed, Tape, Tensor, Var};
use crate::hetgraph::{
    HeteroGraph, NodeKind, NodeWindow, RelationIndex, ALL_RELATIONS,
};
use crate::scalar::Scalar;

use super::{ModelError, ModelParams, UpdateActivation};

const LEAKY_SLOPE: f64 = 0.2;
const LN_EPS: f64 = 1e-5;

/// Ablation switches mirroring the architecture's component removals.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AblationFlags {
    /// Skip the gate: the final representation is h^(L).
    pub no_pcgm: bool,
    /// Fix self/cross aggregation weights to 1.
    pub no_learnable_agg: bool,
    /// Zero the time-embedding input channels.
    pub no_time_embed: bool,
    /// Zero the physics parameters fed to the gate.
    pub no_physics: bool,
    /// Single-relation baseline: all edges share one projection set and
    /// one aggregation weight.
    pub homogeneous: bool,
}

impl AblationFlags {
    pub fn parse(name: &str) -> Option<Self> {
        let mut flags = Self::default();
        match name {
            "none" | "full" => {}
            "no_pcgm" => flags.no_pcgm = true,
            "no_learnable_agg" => flags.no_learnable_agg = true,
            "no_time_embed" => flags.no_time_embed = true,
            "no_physics" => flags.no_physics = true,
            "homogeneous" => flags.homogeneous = true,
            _ => return None,
        }
        Some(flags)
    }

    pub fn name(&self) -> &'static str {
        if self.no_pcgm {
            "no_pcgm"
        } else if self.no_learnable_agg {
            "no_learnable_agg"
        } else if self.no_time_embed {
            "no_time_embed"
        } else if self.no_physics {
            "no_physics"
        } else if self.homogeneous {
            "homogeneous"
        } else {
            "full"
        }
    }
}

/// Immutable per-graph indices precomputed once and shared across passes.
#[derive(Debug, Clone)]
pub struct GraphEncoding<T: Scalar> {
    pub n_nodes: usize,
    pub node_kinds: Vec<NodeKind>,
    pub fluid_idx: Vec<usize>,
    pub solid_idx: Vec<usize>,
    /// Indexed like [`ALL_RELATIONS`].
    pub relations: [RelationIndex; 4],
    /// Every edge as one relation (homogeneous baseline).
    pub merged: RelationIndex,
    /// n x pos_dim node coordinates.
    pub positions: Tensor<T>,
}

impl<T: Scalar + Serialize> GraphEncoding<T> {
    pub fn build(graph: &HeteroGraph<T>) -> Self {
        let relations = ALL_RELATIONS.map(|rel| RelationIndex::build(graph, rel));
        let merged = {
            let mut pairs: Vec<(usize, usize)> =
                graph.edges.iter().map(|e| (e.dst, e.src)).collect();
            pairs.sort_unstable();
            merged_index(&pairs)
        };
        let n = graph.n_nodes();
        let mut positions = Tensor::zeros(n, graph.pos_dim);
        for i in 0..n {
            for k in 0..graph.pos_dim {
                positions.set(i, k, graph.positions[i][k]);
            }
        }
        Self {
            n_nodes: n,
            node_kinds: graph.node_kinds.clone(),
            fluid_idx: graph.node_indices_of(NodeKind::Fluid),
            solid_idx: graph.node_indices_of(NodeKind::Solid),
            relations,
            merged,
            positions,
        }
    }
}

impl<T: Scalar> GraphEncoding<T> {
    /// Disjoint-union batch graph: block-diagonal adjacency with node
    /// indices offset per part.
    pub fn union(parts: &[&GraphEncoding<T>]) -> Self {
        let pos_dim = parts[0].positions.cols();
        let total: usize = parts.iter().map(|p| p.n_nodes).sum();
        let mut node_kinds = Vec::with_capacity(total);
        let mut fluid_idx = Vec::new();
        let mut solid_idx = Vec::new();
        let mut positions = Tensor::zeros(total, pos_dim);
        let mut rel_pairs: [Vec<(usize, usize)>; 4] = Default::default();
        let mut merged_pairs: Vec<(usize, usize)> = Vec::new();
        let mut offset = 0;
        for part in parts {
            node_kinds.extend_from_slice(&part.node_kinds);
            fluid_idx.extend(part.fluid_idx.iter().map(|&i| i + offset));
            solid_idx.extend(part.solid_idx.iter().map(|&i| i + offset));
            for i in 0..part.n_nodes {
                for k in 0..pos_dim {
                    positions.set(offset + i, k, part.positions.get(i, k));
                }
            }
            for (r, idx) in part.relations.iter().enumerate() {
                for e in 0..idx.src.len() {
                    rel_pairs[r].push((idx.dst[e] + offset, idx.src[e] + offset));
                }
            }
            for e in 0..part.merged.src.len() {
                merged_pairs.push((part.merged.dst[e] + offset, part.merged.src[e] + offset));
            }
            offset += part.n_nodes;
        }
        Self {
            n_nodes: total,
            node_kinds,
            fluid_idx,
            solid_idx,
            relations: rel_pairs.map(|p| merged_index(&p)),
            merged: merged_index(&merged_pairs),
            positions,
        }
    }
}

/// Sorted (dst, src) pairs -> RelationIndex with contiguous softmax groups.
fn merged_index(pairs: &[(usize, usize)]) -> RelationIndex {
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
    RelationIndex {
        src,
        dst,
        softmax_seg,
    }
}

/// Intermediate and final representations of one forward pass.
pub struct ForwardOutput {
    /// Encoder output h^(0), n x d.
    pub h0: Var,
    /// After L attention layers, n x d.
    pub h_last: Var,
    /// Post-gate representation (== h_last under no_pcgm).
    pub h_final: Var,
    /// Per-node gate in (0,1); None under no_pcgm.
    pub gate: Option<Var>,
    /// Predicted normalized state delta, n x channels.
    pub delta: Var,
}

/// 2-layer MLP: relu(x W1 + b1) W2 + b2.
fn mlp<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    vars: &[Var],
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
) -> Result<Var, ModelError> {
    let h = tape.matmul(x, vars[w1])?;
    let h = tape.add_bcast_row(h, vars[b1])?;
    let h = tape.relu(h)?;
    let h = tape.matmul(h, vars[w2])?;
    Ok(tape.add_bcast_row(h, vars[b2])?)
}

/// Build the per-node input matrix [state_history || position || time].
pub fn build_inputs<T: Scalar>(
    enc: &GraphEncoding<T>,
    window: &NodeWindow<T>,
    time_dim: usize,
    no_time_embed: bool,
) -> Tensor<T> {
    let n = enc.n_nodes;
    let hist_cols = window.state_history.cols();
    let pos_cols = enc.positions.cols();
    let time = if no_time_embed {
        vec![T::zero(); time_dim]
    } else {
        sinusoid_embed(window.dt, time_dim)
    };
    let mut x = Tensor::zeros(n, hist_cols + pos_cols + time_dim);
    for i in 0..n {
        for c in 0..hist_cols {
            x.set(i, c, window.state_history.get(i, c));
        }
        for c in 0..pos_cols {
            x.set(i, hist_cols + c, enc.positions.get(i, c));
        }
        for (c, &tv) in time.iter().enumerate() {
            x.set(i, hist_cols + pos_cols + c, tv);
        }
    }
    x
}

/// Kind-specific MLP applied to the rows of each domain, recombined by
/// scatter so fluid and solid rows never mix encoders.
fn per_kind_mlp<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    enc: &GraphEncoding<T>,
    vars: &[Var],
    slots: impl Fn(NodeKind, usize) -> usize,
) -> Result<Var, ModelError> {
    let mut acc: Option<Var> = None;
    for (kind, idx) in [
        (NodeKind::Fluid, &enc.fluid_idx),
        (NodeKind::Solid, &enc.solid_idx),
    ] {
        if idx.is_empty() {
            continue;
        }
        let rows = tape.gather_rows(x, idx)?;
        let out = mlp(
            tape,
            rows,
            vars,
            slots(kind, 0),
            slots(kind, 1),
            slots(kind, 2),
            slots(kind, 3),
        )?;
        let scattered = tape.scatter_rows(out, idx, enc.n_nodes)?;
        acc = Some(match acc {
            Some(a) => tape.add(a, scattered)?,
            None => scattered,
        });
    }
    acc.ok_or(ModelError::EmptyGraph)
}

/// One relation's attention message: softmax(aT leaky_relu(Wq h_i + Wk h_j))
/// weighted sum of Wv h_j per destination node. Returns None when the
/// relation has no edges (empty neighborhoods contribute zero message).
fn relation_message<T: Scalar>(
    tape: &mut Tape<T>,
    h: Var,
    idx: &RelationIndex,
    vars: &[Var],
    wq: usize,
    wk: usize,
    wv: usize,
    att: usize,
    n_nodes: usize,
) -> Result<Option<Var>, ModelError> {
    if idx.is_empty() {
        return Ok(None);
    }
    let q = tape.matmul(h, vars[wq])?;
    let k = tape.matmul(h, vars[wk])?;
    let v = tape.matmul(h, vars[wv])?;
    let qi = tape.gather_rows(q, &idx.dst)?;
    let kj = tape.gather_rows(k, &idx.src)?;
    let sum = tape.add(qi, kj)?;
    let act = tape.leaky_relu(sum, T::from_f64(LEAKY_SLOPE))?;
    let energy = tape.matmul(act, vars[att])?;
    let alpha = tape.segment_softmax(energy, &idx.softmax_seg)?;
    let vj = tape.gather_rows(v, &idx.src)?;
    let weighted = tape.mul_row_scalar(vj, alpha)?;
    Ok(Some(tape.segment_sum(weighted, &idx.dst, n_nodes)?))
}

/// Per-node column holding exp(logit) of the matching node kind.
fn kind_scale_column<T: Scalar>(
    tape: &mut Tape<T>,
    enc: &GraphEncoding<T>,
    vars: &[Var],
    fluid_logit: usize,
    solid_logit: usize,
) -> Result<Var, ModelError> {
    let mut acc: Option<Var> = None;
    for (idx, logit) in [
        (&enc.fluid_idx, fluid_logit),
        (&enc.solid_idx, solid_logit),
    ] {
        if idx.is_empty() {
            continue;
        }
        let w = tape.exp(vars[logit])?;
        let ones = tape.leaf(Tensor::new(idx.len(), 1, vec![T::one(); idx.len()]).expect("ones"));
        let col = tape.scale_by_scalar(ones, w)?;
        let scattered = tape.scatter_rows(col, idx, enc.n_nodes)?;
        acc = Some(match acc {
            Some(a) => tape.add(a, scattered)?,
            None => scattered,
        });
    }
    acc.ok_or(ModelError::EmptyGraph)
}

/// Full forward pass: encode, L attention layers, gate, decode.
/// Returns the predicted normalized per-node state delta.
pub fn forward<T: Scalar>(
    tape: &mut Tape<T>,
    enc: &GraphEncoding<T>,
    window: &NodeWindow<T>,
    params: &ModelParams<T>,
    vars: &[Var],
    flags: &AblationFlags,
) -> Result<ForwardOutput, ModelError> {
    let config = &params.config;
    let layout = &params.layout;
    let n = enc.n_nodes;
    if window.state_history.rows() != n || window.physics_params.rows() != n {
        return Err(ModelError::ChannelMismatch(format!(
            "window rows {} vs {} graph nodes",
            window.state_history.rows(),
            n
        )));
    }
    if window.state_history.cols() != config.history_len * config.channels {
        return Err(ModelError::ChannelMismatch(format!(
            "history width {} vs configured {}",
            window.state_history.cols(),
            config.history_len * config.channels
        )));
    }

    // Encode.
    let x = build_inputs(enc, window, config.time_dim, flags.no_time_embed);
    let x = tape.leaf(x);
    let h0 = per_kind_mlp(tape, x, enc, vars, |kind, i| layout.enc(kind, i))?;

    // L heterogeneous attention layers.
    let mut h = h0;
    for layer in 0..config.depth {
        let mut m_self: Option<Var> = None;
        let mut m_cross: Option<Var> = None;
        if flags.homogeneous {
            // One projection set (the first relation slot) over all edges.
            m_self = relation_message(
                tape,
                h,
                &enc.merged,
                vars,
                layout.rel(0, 0),
                layout.rel(0, 1),
                layout.rel(0, 2),
                layout.rel(0, 3),
                n,
            )?;
        } else {
            for (r, rel) in ALL_RELATIONS.iter().enumerate() {
                let msg = relation_message(
                    tape,
                    h,
                    &enc.relations[r],
                    vars,
                    layout.rel(r, 0),
                    layout.rel(r, 1),
                    layout.rel(r, 2),
                    layout.rel(r, 3),
                    n,
                )?;
                let Some(msg) = msg else { continue };
                let slot = if rel.is_intra_domain() {
                    &mut m_self
                } else {
                    &mut m_cross
                };
                *slot = Some(match slot.take() {
                    Some(acc) => tape.add(acc, msg)?,
                    None => msg,
                });
            }
        }

        let learnable = !flags.no_learnable_agg;
        let mut m: Option<Var> = None;
        if flags.homogeneous {
            // Single aggregation weight for the merged relation.
            m = match m_self {
                Some(ms) if learnable => {
                    let w = tape.exp(vars[layout.agg(NodeKind::Fluid, 0)])?;
                    Some(tape.scale_by_scalar(ms, w)?)
                }
                other => other,
            };
        } else {
            for (group, logit_kind) in [(m_self, 0usize), (m_cross, 1usize)] {
                let Some(msg) = group else { continue };
                let scaled = if learnable {
                    let col = kind_scale_column(
                        tape,
                        enc,
                        vars,
                        layout.agg(NodeKind::Fluid, logit_kind),
                        layout.agg(NodeKind::Solid, logit_kind),
                    )?;
                    tape.mul_row_scalar(msg, col)?
                } else {
                    msg
                };
                m = Some(match m {
                    Some(acc) => tape.add(acc, scaled)?,
                    None => scaled,
                });
            }
        }
        let m = match m {
            Some(m) => m,
            None => tape.leaf(Tensor::zeros(n, config.hidden)),
        };

        // Residual update: h + act(affine(LayerNorm(m))).
        let ln = tape.layer_norm(m, T::from_f64(LN_EPS))?;
        let ln = tape.mul_bcast_row(ln, vars[layout.ln(layer, 0)])?;
        let ln = tape.add_bcast_row(ln, vars[layout.ln(layer, 1)])?;
        let act = match config.update_activation {
            UpdateActivation::Relu => tape.relu(ln)?,
            UpdateActivation::Tanh => tape.tanh(ln)?,
        };
        h = tape.add(h, act)?;
    }
    let h_last = h;

    // Physics-conditioned gate: convex blend of h^(0) and h^(L).
    let (h_final, gate) = if flags.no_pcgm {
        (h_last, None)
    } else {
        let physics = if flags.no_physics {
            Tensor::zeros(n, config.n_physics)
        } else {
            window.physics_params.clone()
        };
        if physics.cols() != config.n_physics {
            return Err(ModelError::ChannelMismatch(format!(
                "physics width {} vs configured {}",
                physics.cols(),
                config.n_physics
            )));
        }
        let p = tape.leaf(physics);
        let cat = tape.concat_cols(&[h0, h_last, p])?;
        let pre = tape.matmul(cat, vars[layout.gate(0)])?;
        let pre = tape.add_bcast_row(pre, vars[layout.gate(1)])?;
        let g = tape.sigmoid(pre)?;
        let one_minus_g = tape.affine(g, T::from_f64(-1.0), T::one())?;
        let keep = tape.mul_row_scalar(h0, one_minus_g)?;
        let update = tape.mul_row_scalar(h_last, g)?;
        (tape.add(keep, update)?, Some(g))
    };

    // Decode to per-kind state deltas.
    let delta = per_kind_mlp(tape, h_final, enc, vars, |kind, i| layout.dec(kind, i))?;

    Ok(ForwardOutput {
        h0,
        h_last,
        h_final,
        gate,
        delta,
    })
}
