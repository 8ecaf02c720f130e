//! Dataset directory format: a JSON manifest (geometry, physics, graphs,
//! splits, normalization statistics) plus one binary file per trajectory
//! (header + row-major 32-bit little-endian floats). Writes are atomic
//! (temp file then rename); regeneration under a fixed master seed is
//! byte-identical.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::hetgraph::{HeteroGraph, NodeKind, NodeWindow};
use crate::scalar::Scalar;

use super::{
    simulate, DataError, Inflow, Layout, OracleGeometry, PhysicsParams, SimOptions, Trajectory,
    N_PHYSICS_PARAMS,
};

/// State channels per node: fluid (velocity, pressure analogue),
/// solid (displacement, velocity).
pub const CHANNELS: usize = 2;

const TRAJ_MAGIC: &[u8; 8] = b"HSTRAJ01";
const MANIFEST_VERSION: u32 = 1;
const STD_FLOOR: f64 = 1e-12;

pub fn kind_index(kind: NodeKind) -> usize {
    match kind {
        NodeKind::Fluid => 0,
        NodeKind::Solid => 1,
    }
}

/// Z-score statistics computed from the training split only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats<T: Scalar> {
    /// Indexed [node kind][channel].
    pub state_mean: [[T; CHANNELS]; 2],
    pub state_std: [[T; CHANNELS]; 2],
    /// Statistics of next-frame deltas, same indexing.
    pub delta_mean: [[T; CHANNELS]; 2],
    pub delta_std: [[T; CHANNELS]; 2],
    pub phys_mean: [T; N_PHYSICS_PARAMS],
    pub phys_std: [T; N_PHYSICS_PARAMS],
}

impl<T: Scalar> NormStats<T> {
    /// Identity statistics (mean 0, std 1).
    pub fn identity() -> Self {
        Self {
            state_mean: [[T::zero(); CHANNELS]; 2],
            state_std: [[T::one(); CHANNELS]; 2],
            delta_mean: [[T::zero(); CHANNELS]; 2],
            delta_std: [[T::one(); CHANNELS]; 2],
            phys_mean: [T::zero(); N_PHYSICS_PARAMS],
            phys_std: [T::one(); N_PHYSICS_PARAMS],
        }
    }

    pub fn normalize_state(&self, kind: NodeKind, ch: usize, v: T) -> T {
        let k = kind_index(kind);
        (v - self.state_mean[k][ch]) / self.state_std[k][ch]
    }

    pub fn normalize_delta(&self, kind: NodeKind, ch: usize, v: T) -> T {
        let k = kind_index(kind);
        (v - self.delta_mean[k][ch]) / self.delta_std[k][ch]
    }

    pub fn denormalize_delta(&self, kind: NodeKind, ch: usize, v: T) -> T {
        let k = kind_index(kind);
        v * self.delta_std[k][ch] + self.delta_mean[k][ch]
    }

    pub fn normalize_physics(&self, params: &PhysicsParams<T>) -> [T; N_PHYSICS_PARAMS] {
        let raw = params.as_array();
        let mut out = [T::zero(); N_PHYSICS_PARAMS];
        for i in 0..N_PHYSICS_PARAMS {
            out[i] = (raw[i] - self.phys_mean[i]) / self.phys_std[i];
        }
        out
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryEntry<T: Scalar> {
    pub file: String,
    pub seed: u64,
    pub geometry: OracleGeometry<T>,
    pub physics: PhysicsParams<T>,
    pub inflow: Inflow<T>,
    pub dt_sim: T,
    pub dt_frame: T,
    pub n_frames: usize,
    pub graph: HeteroGraph<T>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest<T: Scalar> {
    pub version: u32,
    pub channels: usize,
    pub entries: Vec<TrajectoryEntry<T>>,
    /// Indices into `entries`, 8:1:1.
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub stats: NormStats<T>,
}

/// Sampling configuration for dataset generation. For `Grid2D` layouts
/// the fluid count range is interpreted as a grid-row range.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenConfig<T: Scalar> {
    pub n_traj: usize,
    pub layout: Layout,
    pub n_fluid_range: (usize, usize),
    pub n_solid_range: (usize, usize),
    pub fluid_spacing: T,
    pub solid_spacing: T,
    pub n_frames: usize,
    pub dt_sim: T,
    pub frame_stride: usize,
    pub advection_speed: T,
    pub master_seed: u64,
    pub rho_f_range: (T, T),
    pub nu_range: (T, T),
    pub rho_s_range: (T, T),
    pub k_spring_range: (T, T),
    pub damping_range: (T, T),
    pub coupling_range: (T, T),
}

impl<T: Scalar> Default for GenConfig<T> {
    fn default() -> Self {
        let r = |a: f64, b: f64| (T::from_f64(a), T::from_f64(b));
        Self {
            n_traj: 40,
            layout: Layout::Channel1D,
            n_fluid_range: (20, 28),
            n_solid_range: (4, 6),
            fluid_spacing: T::one(),
            solid_spacing: T::one(),
            n_frames: 40,
            dt_sim: T::from_f64(0.01),
            frame_stride: 10,
            advection_speed: T::one(),
            master_seed: 0,
            rho_f_range: r(0.8, 1.2),
            nu_range: r(0.05, 0.3),
            rho_s_range: r(0.8, 1.2),
            k_spring_range: r(1.0, 5.0),
            damping_range: r(0.05, 0.3),
            coupling_range: r(0.2, 1.0),
        }
    }
}

fn sample_range<T: Scalar>(rng: &mut ChaCha8Rng, range: (T, T)) -> T {
    let (a, b) = (range.0.to_f64(), range.1.to_f64());
    if a == b {
        return range.0;
    }
    T::from_f64(rng.gen_range(a..b))
}

fn sample_usize(rng: &mut ChaCha8Rng, range: (usize, usize)) -> usize {
    rng.gen_range(range.0..=range.1)
}

/// Randomized pulsatile inflow: 1-3 sinusoids.
pub fn sample_inflow<T: Scalar>(rng: &mut ChaCha8Rng) -> Inflow<T> {
    let n = rng.gen_range(1..=3);
    let components = (0..n)
        .map(|_| {
            (
                T::from_f64(rng.gen_range(0.3..1.0)),
                T::from_f64(rng.gen_range(0.5..3.0)),
                T::from_f64(rng.gen_range(0.0..std::f64::consts::TAU)),
            )
        })
        .collect();
    Inflow { components }
}

fn sample_trajectory<T: Scalar + Serialize>(
    config: &GenConfig<T>,
    seed: u64,
) -> Result<Trajectory<T>, DataError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n_fluid, layout) = match config.layout {
        Layout::Channel1D => (sample_usize(&mut rng, config.n_fluid_range), Layout::Channel1D),
        Layout::Grid2D { cols } => (
            sample_usize(&mut rng, config.n_fluid_range) * cols,
            Layout::Grid2D { cols },
        ),
    };
    let geometry = OracleGeometry {
        n_fluid,
        n_solid: sample_usize(&mut rng, config.n_solid_range),
        fluid_spacing: config.fluid_spacing,
        solid_spacing: config.solid_spacing,
        layout,
    };
    let physics = PhysicsParams {
        rho_f: sample_range(&mut rng, config.rho_f_range),
        nu: sample_range(&mut rng, config.nu_range),
        rho_s: sample_range(&mut rng, config.rho_s_range),
        k_spring: sample_range(&mut rng, config.k_spring_range),
        damping: sample_range(&mut rng, config.damping_range),
        coupling_gain: sample_range(&mut rng, config.coupling_range),
    };
    let inflow = sample_inflow(&mut rng);
    let mut opts = SimOptions::coupled(&geometry, config.dt_sim, config.frame_stride);
    opts.advection_speed = config.advection_speed;
    simulate(&geometry, &physics, &inflow, &opts, config.n_frames, seed)
}

fn split_indices(n: usize) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let n_train = n * 8 / 10;
    let n_val = (n / 10).max(1);
    let train = (0..n_train).collect();
    let val = (n_train..n_train + n_val).collect();
    let test = (n_train + n_val..n).collect();
    (train, val, test)
}

struct Accumulator {
    sum: f64,
    sum_sq: f64,
    count: usize,
}

impl Accumulator {
    fn new() -> Self {
        Self {
            sum: 0.0,
            sum_sq: 0.0,
            count: 0,
        }
    }
    fn push(&mut self, v: f64) {
        self.sum += v;
        self.sum_sq += v * v;
        self.count += 1;
    }
    fn mean_std(&self) -> (f64, f64) {
        if self.count == 0 {
            return (0.0, 1.0);
        }
        let mean = self.sum / self.count as f64;
        let var = (self.sum_sq / self.count as f64 - mean * mean).max(0.0);
        let std = var.sqrt();
        (mean, if std < STD_FLOOR { 1.0 } else { std })
    }
}

/// Population statistics over the given (training) trajectories.
pub fn compute_stats<'a, T: Scalar + 'a>(
    trajectories: impl Iterator<Item = &'a Trajectory<T>> + Clone,
) -> NormStats<T> {
    let mut state = [[(); CHANNELS]; 2].map(|row| row.map(|_| Accumulator::new()));
    let mut delta = [[(); CHANNELS]; 2].map(|row| row.map(|_| Accumulator::new()));
    let mut phys: [Accumulator; N_PHYSICS_PARAMS] =
        std::array::from_fn(|_| Accumulator::new());

    for traj in trajectories {
        let n = traj.n_nodes();
        for t in 0..traj.n_frames {
            for node in 0..n {
                let k = kind_index(traj.graph.node_kinds[node]);
                for ch in 0..CHANNELS {
                    let v = traj.state(t, node, ch).to_f64();
                    state[k][ch].push(v);
                    if t + 1 < traj.n_frames {
                        let d = traj.state(t + 1, node, ch).to_f64() - v;
                        delta[k][ch].push(d);
                    }
                }
            }
        }
        for (i, v) in traj.physics.as_array().into_iter().enumerate() {
            phys[i].push(v.to_f64());
        }
    }

    let unpack = |acc: &[[Accumulator; CHANNELS]; 2]| {
        let mut mean = [[T::zero(); CHANNELS]; 2];
        let mut std = [[T::one(); CHANNELS]; 2];
        for k in 0..2 {
            for ch in 0..CHANNELS {
                let (m, s) = acc[k][ch].mean_std();
                mean[k][ch] = T::from_f64(m);
                std[k][ch] = T::from_f64(s);
            }
        }
        (mean, std)
    };
    let (state_mean, state_std) = unpack(&state);
    let (delta_mean, delta_std) = unpack(&delta);
    let mut phys_mean = [T::zero(); N_PHYSICS_PARAMS];
    let mut phys_std = [T::one(); N_PHYSICS_PARAMS];
    for i in 0..N_PHYSICS_PARAMS {
        let (m, s) = phys[i].mean_std();
        phys_mean[i] = T::from_f64(m);
        phys_std[i] = T::from_f64(s);
    }
    NormStats {
        state_mean,
        state_std,
        delta_mean,
        delta_std,
        phys_mean,
        phys_std,
    }
}

fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), std::io::Error> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

fn trajectory_bytes<T: Scalar>(traj: &Trajectory<T>) -> Vec<u8> {
    let n = traj.n_nodes();
    let mut out = Vec::with_capacity(8 + 20 + traj.frames.len() * 4);
    out.extend_from_slice(TRAJ_MAGIC);
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&(traj.n_frames as u32).to_le_bytes());
    out.extend_from_slice(&(CHANNELS as u32).to_le_bytes());
    out.extend_from_slice(&traj.dt_frame.to_f64().to_le_bytes());
    for &v in &traj.frames {
        out.extend_from_slice(&(v.to_f64() as f32).to_le_bytes());
    }
    out
}

/// Read a trajectory binary; graph/physics/inflow come from the manifest
/// entry.
pub fn load_trajectory_file<T: Scalar>(
    path: &Path,
    entry: &TrajectoryEntry<T>,
) -> Result<Trajectory<T>, DataError>
where
    T: Serialize + DeserializeOwned,
{
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 28 || &bytes[0..8] != TRAJ_MAGIC {
        return Err(DataError::BadFormat(format!(
            "{} is not a trajectory file",
            path.display()
        )));
    }
    let u32_at = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as usize;
    let n = u32_at(8);
    let n_frames = u32_at(12);
    let channels = u32_at(16);
    let dt_frame = f64::from_le_bytes(bytes[20..28].try_into().unwrap());
    if channels != CHANNELS || n != entry.graph.node_kinds.len() {
        return Err(DataError::BadFormat(format!(
            "{} header disagrees with manifest",
            path.display()
        )));
    }
    let expected = 28 + n_frames * n * channels * 4;
    if bytes.len() != expected {
        return Err(DataError::BadFormat(format!(
            "{}: expected {} bytes, got {}",
            path.display(),
            expected,
            bytes.len()
        )));
    }
    let frames = bytes[28..]
        .chunks_exact(4)
        .map(|c| T::from_f64(f32::from_le_bytes(c.try_into().unwrap()) as f64))
        .collect();
    Ok(Trajectory {
        graph: entry.graph.clone(),
        frames,
        n_frames,
        dt_sim: entry.dt_sim,
        dt_frame: T::from_f64(dt_frame),
        physics: entry.physics,
        inflow: entry.inflow.clone(),
        seed: entry.seed,
    })
}

/// Generate `config.n_traj` trajectories, split 8:1:1, compute training
/// statistics, and write the dataset directory.
pub fn make_dataset<T>(out_dir: &Path, config: &GenConfig<T>) -> Result<Manifest<T>, DataError>
where
    T: Scalar + Serialize + DeserializeOwned,
{
    if config.n_traj < 10 {
        return Err(DataError::TooFew {
            got: config.n_traj,
            min: 10,
        });
    }
    fs::create_dir_all(out_dir)?;

    let mut seed_rng = ChaCha8Rng::seed_from_u64(config.master_seed);
    let mut trajectories = Vec::with_capacity(config.n_traj);
    let mut entries = Vec::with_capacity(config.n_traj);
    for i in 0..config.n_traj {
        let seed = seed_rng.gen::<u64>();
        let mut traj = sample_trajectory(config, seed)?;
        // Quantize to the f32 storage precision up front so the stored
        // statistics match what consumers load from disk.
        for v in &mut traj.frames {
            *v = T::from_f64(v.to_f64() as f32 as f64);
        }
        let file = format!("traj_{i:04}.bin");
        atomic_write(&out_dir.join(&file), &trajectory_bytes(&traj))?;
        entries.push(TrajectoryEntry {
            file,
            seed,
            geometry: OracleGeometry {
                n_fluid: traj.graph.node_indices_of(NodeKind::Fluid).len(),
                n_solid: traj.graph.node_indices_of(NodeKind::Solid).len(),
                fluid_spacing: config.fluid_spacing,
                solid_spacing: config.solid_spacing,
                layout: config.layout,
            },
            physics: traj.physics,
            inflow: traj.inflow.clone(),
            dt_sim: traj.dt_sim,
            dt_frame: traj.dt_frame,
            n_frames: traj.n_frames,
            graph: traj.graph.clone(),
        });
        trajectories.push(traj);
    }

    let (train, val, test) = split_indices(config.n_traj);
    let stats = compute_stats(train.iter().map(|&i| &trajectories[i]));
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        channels: CHANNELS,
        entries,
        train,
        val,
        test,
        stats,
    };
    let json = serde_json::to_vec_pretty(&manifest)
        .map_err(|e| DataError::BadFormat(e.to_string()))?;
    atomic_write(&out_dir.join("manifest.json"), &json)?;
    Ok(manifest)
}

pub fn load_manifest<T>(dir: &Path) -> Result<Manifest<T>, DataError>
where
    T: Scalar + Serialize + DeserializeOwned,
{
    let bytes = fs::read(dir.join("manifest.json"))?;
    let manifest: Manifest<T> =
        serde_json::from_slice(&bytes).map_err(|e| DataError::BadFormat(e.to_string()))?;
    if manifest.version != MANIFEST_VERSION {
        return Err(DataError::BadFormat(format!(
            "manifest version {} unsupported",
            manifest.version
        )));
    }
    Ok(manifest)
}

/// A dataset loaded into memory.
pub struct Dataset<T: Scalar> {
    pub dir: PathBuf,
    pub manifest: Manifest<T>,
    pub trajectories: Vec<Trajectory<T>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl<T: Scalar + Serialize + DeserializeOwned> Dataset<T> {
    pub fn load(dir: &Path) -> Result<Self, DataError> {
        let manifest = load_manifest::<T>(dir)?;
        let trajectories = manifest
            .entries
            .iter()
            .map(|e| load_trajectory_file(&dir.join(&e.file), e))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest,
            trajectories,
        })
    }
}

impl<T: Scalar> Dataset<T> {
    pub fn split_indices(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.manifest.train,
            Split::Val => &self.manifest.val,
            Split::Test => &self.manifest.test,
        }
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Trajectory<T>> {
        self.split_indices(split).iter().map(|&i| &self.trajectories[i])
    }
}

/// Sliding training pairs: a normalized N-frame window plus the
/// normalized next-frame delta target. Yields `n_frames - N` pairs.
pub fn windows<T: Scalar>(
    traj: &Trajectory<T>,
    history_len: usize,
    stats: &NormStats<T>,
) -> Result<Vec<(NodeWindow<T>, Tensor<T>)>, DataError> {
    if traj.n_frames < history_len + 1 {
        return Err(DataError::TooShort {
            got: traj.n_frames,
            need: history_len + 1,
        });
    }
    let n = traj.n_nodes();
    let phys_rows: Vec<Vec<T>> = {
        let normalized = stats.normalize_physics(&traj.physics);
        (0..n).map(|_| normalized.to_vec()).collect()
    };
    let physics_params = Tensor::from_rows(&phys_rows).expect("physics rows");

    let mut out = Vec::with_capacity(traj.n_frames - history_len);
    for t0 in 0..traj.n_frames - history_len {
        let mut hist = Tensor::zeros(n, history_len * CHANNELS);
        let mut target = Tensor::zeros(n, CHANNELS);
        for node in 0..n {
            let kind = traj.graph.node_kinds[node];
            for f in 0..history_len {
                for ch in 0..CHANNELS {
                    let v = traj.state(t0 + f, node, ch);
                    hist.set(node, f * CHANNELS + ch, stats.normalize_state(kind, ch, v));
                }
            }
            let last = t0 + history_len - 1;
            for ch in 0..CHANNELS {
                let d = traj.state(last + 1, node, ch) - traj.state(last, node, ch);
                target.set(node, ch, stats.normalize_delta(kind, ch, d));
            }
        }
        out.push((
            NodeWindow {
                state_history: hist,
                physics_params: physics_params.clone(),
                dt: traj.dt_frame,
                history_len,
            },
            target,
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> GenConfig<f64> {
        GenConfig {
            n_traj: 10,
            n_fluid_range: (8, 12),
            n_solid_range: (2, 3),
            n_frames: 15,
            ..GenConfig::default()
        }
    }

    #[test]
    fn too_few_trajectories_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config();
        cfg.n_traj = 9;
        assert!(matches!(
            make_dataset(dir.path(), &cfg),
            Err(DataError::TooFew { .. })
        ));
    }

    #[test]
    fn split_is_8_1_1() {
        let dir = tempfile::tempdir().unwrap();
        let m = make_dataset(dir.path(), &tiny_config()).unwrap();
        assert_eq!(m.train.len(), 8);
        assert_eq!(m.val.len(), 1);
        assert_eq!(m.test.len(), 1);
    }

    #[test]
    fn regeneration_is_byte_identical() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        make_dataset(d1.path(), &tiny_config()).unwrap();
        make_dataset(d2.path(), &tiny_config()).unwrap();
        for name in ["manifest.json", "traj_0000.bin", "traj_0009.bin"] {
            let a = fs::read(d1.path().join(name)).unwrap();
            let b = fs::read(d2.path().join(name)).unwrap();
            assert_eq!(a, b, "{name} differs");
        }
    }

    #[test]
    fn stats_zscore_training_states() {
        let dir = tempfile::tempdir().unwrap();
        make_dataset(dir.path(), &tiny_config()).unwrap();
        let ds = Dataset::<f64>::load(dir.path()).unwrap();
        let stats = &ds.manifest.stats;
        let mut acc = [[(0.0f64, 0.0f64, 0usize); CHANNELS]; 2];
        for traj in ds.split(Split::Train) {
            for t in 0..traj.n_frames {
                for node in 0..traj.n_nodes() {
                    let kind = traj.graph.node_kinds[node];
                    let k = kind_index(kind);
                    for ch in 0..CHANNELS {
                        let z = stats.normalize_state(kind, ch, traj.state(t, node, ch));
                        acc[k][ch].0 += z;
                        acc[k][ch].1 += z * z;
                        acc[k][ch].2 += 1;
                    }
                }
            }
        }
        for k in 0..2 {
            for ch in 0..CHANNELS {
                let (s, ss, cnt) = acc[k][ch];
                let mean = s / cnt as f64;
                let std = (ss / cnt as f64 - mean * mean).sqrt();
                assert!(mean.abs() < 1e-10, "mean {mean} kind {k} ch {ch}");
                assert!((std - 1.0).abs() < 1e-6, "std {std} kind {k} ch {ch}");
            }
        }
    }

    #[test]
    fn load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        make_dataset(dir.path(), &tiny_config()).unwrap();
        let ds = Dataset::<f64>::load(dir.path()).unwrap();
        assert_eq!(ds.trajectories.len(), 10);
        for (traj, entry) in ds.trajectories.iter().zip(&ds.manifest.entries) {
            assert_eq!(traj.n_frames, entry.n_frames);
            assert_eq!(traj.graph, entry.graph);
            assert!(traj.frames.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn window_counts() {
        let dir = tempfile::tempdir().unwrap();
        make_dataset(dir.path(), &tiny_config()).unwrap();
        let ds = Dataset::<f64>::load(dir.path()).unwrap();
        let traj = &ds.trajectories[0];
        let stats = &ds.manifest.stats;
        assert_eq!(windows(traj, traj.n_frames - 1, stats).unwrap().len(), 1);
        assert_eq!(windows(traj, traj.n_frames - 5, stats).unwrap().len(), 5);
        assert!(matches!(
            windows(traj, traj.n_frames, stats),
            Err(DataError::TooShort { .. })
        ));
    }

    /// Last frame + denormalized target delta reconstructs frame t+1.
    #[test]
    fn target_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        make_dataset(dir.path(), &tiny_config()).unwrap();
        let ds = Dataset::<f64>::load(dir.path()).unwrap();
        let traj = &ds.trajectories[0];
        let stats = &ds.manifest.stats;
        let history_len = 10;
        let pairs = windows(traj, history_len, stats).unwrap();
        for (t0, (_, target)) in pairs.iter().enumerate() {
            let last = t0 + history_len - 1;
            for node in 0..traj.n_nodes() {
                let kind = traj.graph.node_kinds[node];
                for ch in 0..CHANNELS {
                    let rebuilt = traj.state(last, node, ch)
                        + stats.denormalize_delta(kind, ch, target.get(node, ch));
                    let truth = traj.state(last + 1, node, ch);
                    assert!((rebuilt - truth).abs() < 1e-12);
                }
            }
        }
    }
}
