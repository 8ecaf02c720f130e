//! Optimization loop, evaluation, autoregressive rollout, and the ablation
//! harness.

mod optimizer;

pub use optimizer::{clip_global_norm, cosine_lr, global_norm, OptimizerState};

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::{Tape, Tensor, Var};
use crate::datagen::{
    kind_index, windows, DataError, Dataset, NormStats, Split, Trajectory, CHANNELS,
};
use crate::hetgraph::{NodeKind, NodeWindow};
use crate::loss_metrics::{
    domain_losses, fixed_weight_loss, igbl, kind_masks, relative_l2, DomainLosses, MetricsError,
    MetricsRow,
};
use crate::model::{
    forward, save_checkpoint, AblationFlags, GraphEncoding, ModelConfig, ModelError, ModelParams,
};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFinite { epoch: usize, step: usize },
    #[error("bad training configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Which total loss the optimizer minimizes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossMode<T> {
    /// Uncertainty-balanced loss with learnable per-domain log-variances.
    Igbl,
    /// Fixed manual weights w_f * L_f + w_s * L_s.
    Fixed { w_f: T, w_s: T },
}

#[derive(Debug, Clone)]
pub struct TrainConfig<T: Scalar> {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_max: T,
    pub lr_min: T,
    pub weight_decay: T,
    /// Temporal window N.
    pub history_len: usize,
    pub seed: u64,
    pub loss_mode: LossMode<T>,
    pub ablation: AblationFlags,
    /// Hidden width d.
    pub hidden: usize,
    /// Attention depth L.
    pub depth: usize,
    /// Global-norm gradient clip threshold; None disables clipping.
    pub clip_norm: Option<T>,
    /// Evaluate train/val metrics every this many epochs (the final epoch
    /// is always evaluated). 1 logs every epoch.
    pub eval_every: usize,
}

impl<T: Scalar> Default for TrainConfig<T> {
    fn default() -> Self {
        Self {
            epochs: 500,
            batch_size: 16,
            lr_max: T::from_f64(1e-3),
            lr_min: T::from_f64(1e-6),
            weight_decay: T::from_f64(1e-4),
            history_len: 10,
            seed: 0,
            loss_mode: LossMode::Igbl,
            ablation: AblationFlags::default(),
            hidden: 64,
            depth: 4,
            clip_norm: Some(T::one()),
            eval_every: 1,
        }
    }
}

impl<T: Scalar> TrainConfig<T> {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 {
            return Err(TrainError::Config("epochs must be >= 1".into()));
        }
        if !(self.lr_min > T::zero() && self.lr_max >= self.lr_min) {
            return Err(TrainError::Config(
                "learning rates must satisfy lr_max >= lr_min > 0".into(),
            ));
        }
        if self.history_len == 0 {
            return Err(TrainError::Config("history_len must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be >= 1".into()));
        }
        if self.eval_every == 0 {
            return Err(TrainError::Config("eval_every must be >= 1".into()));
        }
        if let LossMode::Fixed { w_f, w_s } = self.loss_mode {
            if !(w_f > T::zero() && w_s > T::zero()) {
                return Err(TrainError::Config("fixed loss weights must be > 0".into()));
            }
        }
        Ok(())
    }

    pub fn model_config(&self, pos_dim: usize) -> ModelConfig {
        ModelConfig {
            hidden: self.hidden,
            depth: self.depth,
            history_len: self.history_len,
            pos_dim,
            ..ModelConfig::default()
        }
    }
}

/// One trajectory's precomputed graph encoding and sliding windows.
struct Prepped<T: Scalar> {
    enc: GraphEncoding<T>,
    windows: Vec<(NodeWindow<T>, Tensor<T>)>,
}

fn prep_split<T: Scalar + serde::Serialize>(
    dataset: &Dataset<T>,
    split: Split,
    history_len: usize,
) -> Result<Vec<Prepped<T>>, TrainError> {
    dataset
        .split(split)
        .map(|traj| {
            Ok(Prepped {
                enc: GraphEncoding::build(&traj.graph),
                windows: windows(traj, history_len, &dataset.manifest.stats)?,
            })
        })
        .collect()
}

/// Stack several (graph, window, target) samples into one disjoint-union
/// sample with block-diagonal adjacency.
fn make_batch<T: Scalar>(
    parts: &[(&GraphEncoding<T>, &NodeWindow<T>, &Tensor<T>)],
) -> (GraphEncoding<T>, NodeWindow<T>, Tensor<T>) {
    let encs: Vec<&GraphEncoding<T>> = parts.iter().map(|p| p.0).collect();
    let enc = GraphEncoding::union(&encs);
    let hist_cols = parts[0].1.state_history.cols();
    let phys_cols = parts[0].1.physics_params.cols();
    let dt = parts[0].1.dt;
    let mut hist = Tensor::zeros(enc.n_nodes, hist_cols);
    let mut phys = Tensor::zeros(enc.n_nodes, phys_cols);
    let mut target = Tensor::zeros(enc.n_nodes, parts[0].2.cols());
    let mut offset = 0;
    for (part_enc, window, tgt) in parts {
        debug_assert!((window.dt - dt).abs() <= T::zero());
        for i in 0..part_enc.n_nodes {
            for c in 0..hist_cols {
                hist.set(offset + i, c, window.state_history.get(i, c));
            }
            for c in 0..phys_cols {
                phys.set(offset + i, c, window.physics_params.get(i, c));
            }
            for c in 0..tgt.cols() {
                target.set(offset + i, c, tgt.get(i, c));
            }
        }
        offset += part_enc.n_nodes;
    }
    let window = NodeWindow {
        state_history: hist,
        physics_params: phys,
        dt,
        history_len: parts[0].1.history_len,
    };
    (enc, window, target)
}

/// Record the loss for one already-assembled sample on a fresh region of
/// the tape. Returns (total, per-domain losses, predicted delta).
fn sample_loss<T: Scalar>(
    tape: &mut Tape<T>,
    enc: &GraphEncoding<T>,
    window: &NodeWindow<T>,
    target: &Tensor<T>,
    params: &ModelParams<T>,
    vars: &[Var],
    config: &TrainConfig<T>,
) -> Result<(Var, DomainLosses, Var), TrainError> {
    let out = forward(tape, enc, window, params, vars, &config.ablation)?;
    let target = tape.leaf(target.clone());
    let losses = domain_losses(tape, out.delta, target, &enc.node_kinds)?;
    let total = match config.loss_mode {
        LossMode::Igbl => {
            let s_f = vars[params.layout.log_var(NodeKind::Fluid)];
            let s_s = vars[params.layout.log_var(NodeKind::Solid)];
            igbl(tape, losses, s_f, s_s)?
        }
        LossMode::Fixed { w_f, w_s } => fixed_weight_loss(tape, losses, w_f, w_s)?,
    };
    Ok((total, losses, out.delta))
}

/// Split-level single-step evaluation numbers.
#[derive(Debug, Clone, Copy)]
pub struct EvalResult {
    pub l_fluid: f64,
    pub l_solid: f64,
    pub rel_l2_fluid: f64,
    pub rel_l2_solid: f64,
    pub rel_l2_combined: f64,
}

/// Denormalize the last history frame back to raw per-node states.
fn raw_last_frame<T: Scalar>(
    window: &NodeWindow<T>,
    node_kinds: &[NodeKind],
    stats: &NormStats<T>,
) -> Tensor<T> {
    let n = window.state_history.rows();
    let last = window.history_len - 1;
    let mut out = Tensor::zeros(n, CHANNELS);
    for i in 0..n {
        let k = kind_index(node_kinds[i]);
        for ch in 0..CHANNELS {
            let norm = window.state_history.get(i, last * CHANNELS + ch);
            out.set(i, ch, norm * stats.state_std[k][ch] + stats.state_mean[k][ch]);
        }
    }
    out
}

fn denorm_delta<T: Scalar>(
    delta: &Tensor<T>,
    node_kinds: &[NodeKind],
    stats: &NormStats<T>,
) -> Tensor<T> {
    let mut out = delta.clone();
    for i in 0..out.rows() {
        let kind = node_kinds[i];
        for ch in 0..out.cols() {
            out.set(i, ch, stats.denormalize_delta(kind, ch, delta.get(i, ch)));
        }
    }
    out
}

/// Single-step evaluation over every window of a split: per-domain MSE on
/// normalized deltas plus relative l2 on the reconstructed raw next states.
fn evaluate<T: Scalar>(
    prepped: &[Prepped<T>],
    params: &ModelParams<T>,
    config: &TrainConfig<T>,
    stats: &NormStats<T>,
) -> Result<EvalResult, TrainError> {
    let mut sum_f = 0.0;
    let mut sum_s = 0.0;
    let mut count = 0usize;
    let mut preds = Vec::new();
    let mut truths = Vec::new();
    let mut masks = Vec::new();
    for traj in prepped {
        for (window, target) in &traj.windows {
            let mut tape = Tape::new();
            let vars = params.bind(&mut tape);
            let (_, losses, delta) =
                sample_loss(&mut tape, &traj.enc, window, target, params, &vars, config)?;
            sum_f += tape.value(losses.l_fluid).item().to_f64();
            sum_s += tape.value(losses.l_solid).item().to_f64();
            count += 1;

            let last = raw_last_frame(window, &traj.enc.node_kinds, stats);
            let mut pred = denorm_delta(tape.value(delta), &traj.enc.node_kinds, stats);
            let mut truth = denorm_delta(target, &traj.enc.node_kinds, stats);
            pred.add_assign(&last);
            truth.add_assign(&last);
            preds.push(pred);
            truths.push(truth);
            masks.push(kind_masks(&traj.enc.node_kinds));
        }
    }
    if count == 0 {
        return Err(TrainError::Config("split has no windows".into()));
    }
    let per_domain = |which: fn(&(Vec<bool>, Vec<bool>)) -> &Vec<bool>| -> Result<f64, TrainError> {
        let mut total = 0.0;
        let mut used = 0usize;
        for ((p, t), m) in preds.iter().zip(&truths).zip(&masks) {
            match relative_l2(
                std::slice::from_ref(p),
                std::slice::from_ref(t),
                Some(which(m)),
            ) {
                Ok(r) => {
                    total += r.percent;
                    used += 1;
                }
                Err(MetricsError::ZeroNorm) => continue,
                Err(e) => return Err(e.into()),
            }
        }
        Ok(if used == 0 { f64::NAN } else { total / used as f64 })
    };
    let rel_f = per_domain(|m| &m.0)?;
    let rel_s = per_domain(|m| &m.1)?;
    let combined = match relative_l2(&preds, &truths, None) {
        Ok(r) => r.percent,
        Err(MetricsError::ZeroNorm) => f64::NAN,
        Err(e) => return Err(e.into()),
    };
    Ok(EvalResult {
        l_fluid: sum_f / count as f64,
        l_solid: sum_s / count as f64,
        rel_l2_fluid: rel_f,
        rel_l2_solid: rel_s,
        rel_l2_combined: combined,
    })
}

/// Everything `train` produces: the learned parameters, the epoch metrics
/// table, and where the artifacts were written.
pub struct TrainReport<T: Scalar> {
    pub final_params: ModelParams<T>,
    pub best_params: ModelParams<T>,
    pub best_val_epoch: usize,
    pub best_val_error: f64,
    pub metrics: Vec<MetricsRow>,
    pub final_ckpt: PathBuf,
    pub best_ckpt: PathBuf,
    pub metrics_csv: PathBuf,
}

/// Full training loop: shuffled disjoint-union batches, AdamW with cosine
/// schedule, per-epoch train/val metrics, best-validation plus final
/// checkpoints. Deterministic for a fixed seed.
pub fn train<T: Scalar + serde::Serialize>(
    dataset: &Dataset<T>,
    config: &TrainConfig<T>,
    out_dir: &Path,
) -> Result<TrainReport<T>, TrainError> {
    config.validate()?;
    fs::create_dir_all(out_dir)?;
    let stats = &dataset.manifest.stats;
    let train_set = prep_split(dataset, Split::Train, config.history_len)?;
    let val_set = prep_split(dataset, Split::Val, config.history_len)?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(TrainError::Config("empty train or val split".into()));
    }
    let pos_dim = train_set[0].enc.positions.cols();
    let mut params = ModelParams::<T>::init(config.model_config(pos_dim), config.seed);
    let mut opt = OptimizerState::new(&params.tensors, config.weight_decay);

    let mut samples: Vec<(usize, usize)> = train_set
        .iter()
        .enumerate()
        .flat_map(|(ti, p)| (0..p.windows.len()).map(move |wi| (ti, wi)))
        .collect();
    let n_batches = samples.len().div_ceil(config.batch_size);
    let total_steps = config.epochs * n_batches;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut metrics = Vec::new();
    let mut best_val_error = f64::INFINITY;
    let mut best_val_epoch = 0;
    let mut best_params = params.clone();

    for epoch in 0..config.epochs {
        samples.shuffle(&mut rng);
        for (batch_idx, chunk) in samples.chunks(config.batch_size).enumerate() {
            let parts: Vec<_> = chunk
                .iter()
                .map(|&(ti, wi)| {
                    let p = &train_set[ti];
                    (&p.enc, &p.windows[wi].0, &p.windows[wi].1)
                })
                .collect();
            let (enc, window, target) = make_batch(&parts);
            let mut tape = Tape::new();
            let vars = params.bind(&mut tape);
            let (total, _, _) =
                sample_loss(&mut tape, &enc, &window, &target, &params, &vars, config)?;
            if !tape.value(total).item().is_finite() {
                return Err(TrainError::NonFinite {
                    epoch,
                    step: batch_idx,
                });
            }
            let grads = tape.grad(total).map_err(MetricsError::Ad)?;
            let mut grad_tensors: Vec<Tensor<T>> =
                vars.iter().map(|&v| grads.get(v, &tape)).collect();
            if let Some(max_norm) = config.clip_norm {
                clip_global_norm(&mut grad_tensors, max_norm);
            }
            let lr = cosine_lr(opt.step_count(), total_steps, config.lr_max, config.lr_min);
            opt.step(&mut params.tensors, &grad_tensors, lr);
        }

        if (epoch + 1) % config.eval_every != 0 && epoch + 1 != config.epochs {
            continue;
        }
        let sigma2_f = params.tensors[params.layout.log_var(NodeKind::Fluid)]
            .item()
            .to_f64()
            .exp();
        let sigma2_s = params.tensors[params.layout.log_var(NodeKind::Solid)]
            .item()
            .to_f64()
            .exp();
        for (split_name, set) in [("train", &train_set), ("val", &val_set)] {
            let eval = evaluate(set, &params, config, stats)?;
            metrics.push(MetricsRow {
                epoch,
                split: split_name.into(),
                l_fluid: eval.l_fluid,
                l_solid: eval.l_solid,
                sigma2_f,
                sigma2_s,
                rel_l2_fluid: eval.rel_l2_fluid,
                rel_l2_solid: eval.rel_l2_solid,
                rel_l2_combined: eval.rel_l2_combined,
            });
            if split_name == "val" && eval.rel_l2_combined < best_val_error {
                best_val_error = eval.rel_l2_combined;
                best_val_epoch = epoch;
                best_params = params.clone();
            }
        }
    }

    let final_ckpt = out_dir.join("model_final.ckpt");
    let best_ckpt = out_dir.join("model_best.ckpt");
    save_checkpoint(&params, &final_ckpt)?;
    save_checkpoint(&best_params, &best_ckpt)?;
    let metrics_csv = out_dir.join("metrics.csv");
    write_metrics_csv(&metrics_csv, &metrics)?;

    Ok(TrainReport {
        final_params: params,
        best_params,
        best_val_epoch,
        best_val_error,
        metrics,
        final_ckpt,
        best_ckpt,
        metrics_csv,
    })
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<(), std::io::Error> {
    let mut f = fs::File::create(path)?;
    writeln!(f, "{}", MetricsRow::CSV_HEADER)?;
    for row in rows {
        writeln!(f, "{}", row.to_csv())?;
    }
    Ok(())
}

/// Autoregressive rollout outcome. A non-finite prediction marks the
/// rollout as diverged at that step instead of aborting.
#[derive(Debug, Clone)]
pub struct RolloutReport<T: Scalar> {
    /// Predicted raw (denormalized) states, one n x channels frame per step.
    pub frames: Vec<Tensor<T>>,
    /// Per-step relative l2 in percent; NaN where the ground truth had
    /// zero norm for that domain.
    pub per_step_fluid: Vec<f64>,
    pub per_step_solid: Vec<f64>,
    pub mean_fluid: f64,
    pub mean_solid: f64,
    pub diverged_at: Option<usize>,
}

/// Roll the model forward `horizon` steps from the first N frames of a
/// trajectory, feeding its own predictions back into the window.
pub fn rollout<T: Scalar + serde::Serialize>(
    params: &ModelParams<T>,
    traj: &Trajectory<T>,
    stats: &NormStats<T>,
    horizon: usize,
    ablation: &AblationFlags,
) -> Result<RolloutReport<T>, TrainError> {
    let n_hist = params.config.history_len;
    if traj.n_frames < n_hist + horizon {
        return Err(TrainError::Config(format!(
            "horizon {horizon} exceeds {} available frames",
            traj.n_frames.saturating_sub(n_hist)
        )));
    }
    let enc = GraphEncoding::build(&traj.graph);
    let n = enc.n_nodes;
    let kinds = &enc.node_kinds;
    let (fluid_mask, solid_mask) = kind_masks(kinds);

    // Raw state window seeded from the ground truth.
    let mut raw_window: Vec<Tensor<T>> = (0..n_hist)
        .map(|t| {
            let mut f = Tensor::zeros(n, CHANNELS);
            for i in 0..n {
                for ch in 0..CHANNELS {
                    f.set(i, ch, traj.state(t, i, ch));
                }
            }
            f
        })
        .collect();
    let normalized_physics = {
        let p = stats.normalize_physics(&traj.physics);
        let rows: Vec<Vec<T>> = (0..n).map(|_| p.to_vec()).collect();
        Tensor::from_rows(&rows).expect("physics rows")
    };

    let mut report = RolloutReport {
        frames: Vec::with_capacity(horizon),
        per_step_fluid: Vec::with_capacity(horizon),
        per_step_solid: Vec::with_capacity(horizon),
        mean_fluid: f64::NAN,
        mean_solid: f64::NAN,
        diverged_at: None,
    };
    for step in 0..horizon {
        let mut hist = Tensor::zeros(n, n_hist * CHANNELS);
        for (f, frame) in raw_window.iter().enumerate() {
            for i in 0..n {
                for ch in 0..CHANNELS {
                    let v = stats.normalize_state(kinds[i], ch, frame.get(i, ch));
                    hist.set(i, f * CHANNELS + ch, v);
                }
            }
        }
        let window = NodeWindow {
            state_history: hist,
            physics_params: normalized_physics.clone(),
            dt: traj.dt_frame,
            history_len: n_hist,
        };
        let mut tape = Tape::new();
        let vars = params.bind(&mut tape);
        let out = forward(&mut tape, &enc, &window, params, &vars, ablation)?;
        let delta = denorm_delta(tape.value(out.delta), kinds, stats);
        let mut next = raw_window.last().expect("window nonempty").clone();
        next.add_assign(&delta);
        if !next.all_finite() {
            report.diverged_at = Some(step);
            break;
        }

        let mut truth = Tensor::zeros(n, CHANNELS);
        for i in 0..n {
            for ch in 0..CHANNELS {
                truth.set(i, ch, traj.state(n_hist + step, i, ch));
            }
        }
        for (mask, per_step) in [
            (&fluid_mask, &mut report.per_step_fluid),
            (&solid_mask, &mut report.per_step_solid),
        ] {
            let err = match relative_l2(
                std::slice::from_ref(&next),
                std::slice::from_ref(&truth),
                Some(mask),
            ) {
                Ok(r) => r.percent,
                Err(MetricsError::ZeroNorm) => f64::NAN,
                Err(e) => return Err(e.into()),
            };
            per_step.push(err);
        }
        report.frames.push(next.clone());
        raw_window.rotate_left(1);
        *raw_window.last_mut().expect("window nonempty") = next;
    }
    let mean = |xs: &[f64]| {
        let finite: Vec<f64> = xs.iter().copied().filter(|v| v.is_finite()).collect();
        if finite.is_empty() {
            f64::NAN
        } else {
            finite.iter().sum::<f64>() / finite.len() as f64
        }
    };
    report.mean_fluid = mean(&report.per_step_fluid);
    report.mean_solid = mean(&report.per_step_solid);
    Ok(report)
}

/// The persistence baseline: hold the last seen frame forever. Returns the
/// same per-step relative-l2 series as `rollout` for comparison.
pub fn persistence_errors<T: Scalar>(
    traj: &Trajectory<T>,
    history_len: usize,
    horizon: usize,
) -> (Vec<f64>, Vec<f64>, f64, f64) {
    let n = traj.n_nodes();
    let (fluid_mask, solid_mask) = kind_masks(&traj.graph.node_kinds);
    let mut frozen = Tensor::zeros(n, CHANNELS);
    for i in 0..n {
        for ch in 0..CHANNELS {
            frozen.set(i, ch, traj.state(history_len - 1, i, ch));
        }
    }
    let mut fluid = Vec::with_capacity(horizon);
    let mut solid = Vec::with_capacity(horizon);
    for step in 0..horizon {
        let mut truth = Tensor::zeros(n, CHANNELS);
        for i in 0..n {
            for ch in 0..CHANNELS {
                truth.set(i, ch, traj.state(history_len + step, i, ch));
            }
        }
        for (mask, out) in [(&fluid_mask, &mut fluid), (&solid_mask, &mut solid)] {
            let err = match relative_l2(
                std::slice::from_ref(&frozen),
                std::slice::from_ref(&truth),
                Some(mask),
            ) {
                Ok(r) => r.percent,
                Err(_) => f64::NAN,
            };
            out.push(err);
        }
    }
    let mean = |xs: &[f64]| {
        let finite: Vec<f64> = xs.iter().copied().filter(|v| v.is_finite()).collect();
        if finite.is_empty() {
            f64::NAN
        } else {
            finite.iter().sum::<f64>() / finite.len() as f64
        }
    };
    let (mf, ms) = (mean(&fluid), mean(&solid));
    (fluid, solid, mf, ms)
}

/// One trained variant's held-out errors.
#[derive(Debug, Clone)]
pub struct AblationRow {
    pub variant: String,
    pub rel_l2_fluid: f64,
    pub rel_l2_solid: f64,
    pub rel_l2_combined: f64,
}

pub struct AblationReport {
    pub variants: Vec<AblationRow>,
    pub pareto: Vec<AblationRow>,
    pub variants_csv: PathBuf,
    pub pareto_csv: PathBuf,
}

/// Evaluate trained parameters on the test split (single-step).
pub fn evaluate_split<T: Scalar + serde::Serialize>(
    dataset: &Dataset<T>,
    split: Split,
    params: &ModelParams<T>,
    config: &TrainConfig<T>,
) -> Result<EvalResult, TrainError> {
    let set = prep_split(dataset, split, config.history_len)?;
    evaluate(&set, params, config, &dataset.manifest.stats)
}

/// Train the full model and every ablated variant under identical seeds
/// and budgets, then sweep fixed loss-weight ratios 1:1..1:5. Writes two
/// CSV tables and returns the rows.
pub fn ablation_suite<T: Scalar + serde::Serialize>(
    dataset: &Dataset<T>,
    base: &TrainConfig<T>,
    out_dir: &Path,
) -> Result<AblationReport, TrainError> {
    fs::create_dir_all(out_dir)?;
    let run = |name: &str, config: &TrainConfig<T>| -> Result<AblationRow, TrainError> {
        let dir = out_dir.join(name);
        let report = train(dataset, config, &dir)?;
        let eval = evaluate_split(dataset, Split::Test, &report.best_params, config)?;
        Ok(AblationRow {
            variant: name.into(),
            rel_l2_fluid: eval.rel_l2_fluid,
            rel_l2_solid: eval.rel_l2_solid,
            rel_l2_combined: eval.rel_l2_combined,
        })
    };

    let mut variants = Vec::new();
    variants.push(run("full", base)?);
    for name in [
        "no_pcgm",
        "no_learnable_agg",
        "no_time_embed",
        "no_physics",
        "homogeneous",
    ] {
        let mut config = base.clone();
        config.ablation = AblationFlags::parse(name).expect("known variant");
        variants.push(run(name, &config)?);
    }
    {
        // The learned-weighting ablation: fixed 1:1 weights instead.
        let mut config = base.clone();
        config.loss_mode = LossMode::Fixed {
            w_f: T::one(),
            w_s: T::one(),
        };
        variants.push(run("no_igbl", &config)?);
    }

    let mut pareto = Vec::new();
    for ratio in 1..=5u32 {
        let mut config = base.clone();
        config.loss_mode = LossMode::Fixed {
            w_f: T::one(),
            w_s: T::from_f64(ratio as f64),
        };
        pareto.push(run(&format!("fixed_1_to_{ratio}"), &config)?);
    }

    let variants_csv = out_dir.join("ablations.csv");
    let pareto_csv = out_dir.join("pareto.csv");
    write_ablation_csv(&variants_csv, &variants)?;
    write_ablation_csv(&pareto_csv, &pareto)?;
    Ok(AblationReport {
        variants,
        pareto,
        variants_csv,
        pareto_csv,
    })
}

pub fn write_ablation_csv(path: &Path, rows: &[AblationRow]) -> Result<(), std::io::Error> {
    let mut f = fs::File::create(path)?;
    writeln!(f, "variant,rel_l2_fluid,rel_l2_solid,rel_l2_combined")?;
    for row in rows {
        writeln!(
            f,
            "{},{},{},{}",
            row.variant, row.rel_l2_fluid, row.rel_l2_solid, row.rel_l2_combined
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{make_dataset, GenConfig};
    use crate::model::load_checkpoint;

    fn tiny_dataset(dir: &Path) -> Dataset<f64> {
        make_dataset(
            dir,
            &GenConfig::<f64> {
                n_traj: 10,
                n_fluid_range: (6, 8),
                n_solid_range: (2, 3),
                n_frames: 10,
                ..GenConfig::default()
            },
        )
        .unwrap();
        Dataset::load(dir).unwrap()
    }

    fn tiny_config() -> TrainConfig<f64> {
        TrainConfig {
            epochs: 2,
            batch_size: 4,
            history_len: 4,
            hidden: 8,
            depth: 1,
            seed: 3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        let mut c = tiny_config();
        c.epochs = 0;
        assert!(matches!(c.validate(), Err(TrainError::Config(_))));
        let mut c = tiny_config();
        c.lr_min = 2e-3; // above lr_max
        assert!(matches!(c.validate(), Err(TrainError::Config(_))));
        let mut c = tiny_config();
        c.loss_mode = LossMode::Fixed { w_f: 0.0, w_s: 1.0 };
        assert!(matches!(c.validate(), Err(TrainError::Config(_))));
        assert!(tiny_config().validate().is_ok());
    }

    #[test]
    fn train_smoke_determinism_and_checkpoint_identity() {
        let data_dir = tempfile::tempdir().unwrap();
        let dataset = tiny_dataset(data_dir.path());
        let config = tiny_config();

        let out_a = tempfile::tempdir().unwrap();
        let out_b = tempfile::tempdir().unwrap();
        let a = train(&dataset, &config, out_a.path()).unwrap();
        let b = train(&dataset, &config, out_b.path()).unwrap();

        // Same seed, bit-identical parameters and logged losses.
        assert_eq!(a.final_params.tensors, b.final_params.tensors);
        let (la, lb) = (a.metrics.last().unwrap(), b.metrics.last().unwrap());
        assert_eq!(la.l_fluid.to_bits(), lb.l_fluid.to_bits());
        assert_eq!(la.l_solid.to_bits(), lb.l_solid.to_bits());

        // Both checkpoints load, and the loaded model's forward pass is
        // bit-identical to the in-memory one.
        let loaded = load_checkpoint::<f64>(&a.final_ckpt).unwrap();
        assert_eq!(loaded.tensors, a.final_params.tensors);
        let traj = &dataset.trajectories[0];
        let enc = GraphEncoding::build(&traj.graph);
        let (window, _) = &windows(traj, config.history_len, &dataset.manifest.stats).unwrap()[0];
        let run = |p: &ModelParams<f64>| {
            let mut tape = Tape::new();
            let vars = p.bind(&mut tape);
            let out = forward(&mut tape, &enc, window, p, &vars, &config.ablation).unwrap();
            tape.value(out.delta).clone()
        };
        assert_eq!(run(&a.final_params), run(&loaded));

        // Metrics CSV exists with header plus one train and one val row
        // per epoch.
        let csv = fs::read_to_string(&a.metrics_csv).unwrap();
        assert_eq!(csv.lines().count(), 1 + 2 * config.epochs);
        assert!(csv.starts_with(MetricsRow::CSV_HEADER));
    }

    /// Repeating one sample, the loss must keep falling once the optimizer
    /// moments warm up.
    #[test]
    fn single_sample_overfit_is_monotone_after_warmup() {
        let data_dir = tempfile::tempdir().unwrap();
        let dataset = tiny_dataset(data_dir.path());
        let config = TrainConfig::<f64> {
            clip_norm: None,
            ..tiny_config()
        };
        let traj = &dataset.trajectories[0];
        let enc = GraphEncoding::build(&traj.graph);
        let (window, target) =
            windows(traj, config.history_len, &dataset.manifest.stats).unwrap()[0].clone();
        let mut params =
            ModelParams::<f64>::init(config.model_config(enc.positions.cols()), config.seed);
        let mut opt = OptimizerState::new(&params.tensors, 0.0);
        let mut losses = Vec::new();
        for _ in 0..60 {
            let mut tape = Tape::new();
            let vars = params.bind(&mut tape);
            let (total, _, _) =
                sample_loss(&mut tape, &enc, &window, &target, &params, &vars, &config).unwrap();
            losses.push(tape.value(total).item());
            let grads = tape.grad(total).unwrap();
            let grad_tensors: Vec<Tensor<f64>> =
                vars.iter().map(|&v| grads.get(v, &tape)).collect();
            opt.step(&mut params.tensors, &grad_tensors, 1e-3);
        }
        for t in 10..losses.len() - 1 {
            assert!(
                losses[t + 1] <= losses[t],
                "loss rose at step {t}: {} -> {}",
                losses[t],
                losses[t + 1]
            );
        }
    }

    #[test]
    fn rollout_horizon_one_equals_single_step_prediction() {
        let data_dir = tempfile::tempdir().unwrap();
        let dataset = tiny_dataset(data_dir.path());
        let config = tiny_config();
        let stats = &dataset.manifest.stats;
        let traj = &dataset.trajectories[1];
        let enc = GraphEncoding::build(&traj.graph);
        let params =
            ModelParams::<f64>::init(config.model_config(enc.positions.cols()), config.seed);

        let report = rollout(&params, traj, stats, 1, &config.ablation).unwrap();
        assert_eq!(report.frames.len(), 1);
        assert!(report.diverged_at.is_none());

        // Manual single step from the first window.
        let (window, _) = &windows(traj, config.history_len, stats).unwrap()[0];
        let mut tape = Tape::new();
        let vars = params.bind(&mut tape);
        let out = forward(&mut tape, &enc, window, &params, &vars, &config.ablation).unwrap();
        let mut expected = denorm_delta(tape.value(out.delta), &enc.node_kinds, stats);
        let mut last = Tensor::zeros(enc.n_nodes, CHANNELS);
        for i in 0..enc.n_nodes {
            for ch in 0..CHANNELS {
                last.set(i, ch, traj.state(config.history_len - 1, i, ch));
            }
        }
        expected.add_assign(&last);
        assert_eq!(report.frames[0], expected);
    }

    /// An untrained model rolled out on an all-zero trajectory must report
    /// NaN errors via the zero-norm skip path rather than crash.
    #[test]
    fn rollout_on_zero_trajectory_reports_without_crash() {
        let data_dir = tempfile::tempdir().unwrap();
        let dataset = tiny_dataset(data_dir.path());
        let config = tiny_config();
        let mut traj = dataset.trajectories[0].clone();
        for v in &mut traj.frames {
            *v = 0.0;
        }
        let enc = GraphEncoding::build(&traj.graph);
        let params =
            ModelParams::<f64>::init(config.model_config(enc.positions.cols()), config.seed);
        let report = rollout(&params, &traj, &dataset.manifest.stats, 3, &config.ablation).unwrap();
        assert_eq!(report.per_step_fluid.len(), 3);
        assert!(report.per_step_fluid.iter().all(|v| v.is_nan()));
        assert!(report.mean_solid.is_nan());
    }

    #[test]
    fn persistence_on_frozen_trajectory_is_exact() {
        let data_dir = tempfile::tempdir().unwrap();
        let dataset = tiny_dataset(data_dir.path());
        let mut traj = dataset.trajectories[0].clone();
        // Freeze every frame to frame 3's values: persistence is perfect.
        let stride = traj.n_nodes() * CHANNELS;
        let frozen: Vec<f64> = traj.frame(3).to_vec();
        for t in 0..traj.n_frames {
            traj.frames[t * stride..(t + 1) * stride].copy_from_slice(&frozen);
        }
        let (fluid, solid, mf, ms) = persistence_errors(&traj, 4, 5);
        assert_eq!(fluid.len(), 5);
        assert!(fluid.iter().chain(&solid).all(|&v| v == 0.0));
        assert_eq!((mf, ms), (0.0, 0.0));
    }
}
