//! Command-line front end: dataset generation, training, evaluation,
//! autoregressive rollout, the ablation suite, and error-map figures.

mod config;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use thiserror::Error;

use config::{parse_loss, ConfigError, FileConfig};
use hetsolver_core::datagen::{
    make_dataset, DataError, Dataset, GenConfig, Layout, Split, CHANNELS,
};
use hetsolver_core::model::{load_checkpoint, AblationFlags, ModelError, ModelParams};
use hetsolver_core::trainer::{
    ablation_suite, evaluate_split, persistence_errors, rollout, train, TrainConfig, TrainError,
};

#[derive(Debug, Error)]
enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    BadArg(String),
}

impl CliError {
    fn class(&self) -> &'static str {
        match self {
            CliError::Config(_) => "ConfigError",
            CliError::Data(_) => "DataError",
            CliError::Train(_) => "TrainError",
            CliError::Model(_) => "ModelError",
            CliError::Io(_) => "IoError",
            CliError::BadArg(_) => "BadArg",
        }
    }
}

#[derive(Parser)]
#[command(
    name = "hetsolver",
    about = "Heterogeneous graph attention surrogate for coupled fluid-solid dynamics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum LayoutArg {
    Channel1d,
    Grid2d,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic coupled-dynamics dataset.
    Generate {
        /// Output directory for trajectories and the manifest.
        #[arg(long)]
        out: PathBuf,
        /// Number of trajectories (minimum 10 for the 8:1:1 split).
        #[arg(long)]
        n_traj: Option<usize>,
        /// Domain layout.
        #[arg(long, value_enum, default_value = "channel1d")]
        layout: LayoutArg,
        /// Grid columns (grid2d layout only).
        #[arg(long, default_value_t = 4)]
        grid_cols: usize,
        /// Master seed for trajectory sampling.
        #[arg(long)]
        seed: Option<u64>,
        /// key=value config file with [generate] / [physics] sections.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train the surrogate on a generated dataset.
    Train {
        /// Dataset directory (from `generate`).
        #[arg(long)]
        data: PathBuf,
        /// Output directory for checkpoints and metrics.
        #[arg(long)]
        out: PathBuf,
        /// key=value config file with a [train] section.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Ablation variant: none, no_pcgm, no_learnable_agg,
        /// no_time_embed, no_physics, homogeneous.
        #[arg(long)]
        ablation: Option<String>,
        /// Loss: igbl or fixed:WF:WS.
        #[arg(long)]
        loss: Option<String>,
        /// Epoch count override.
        #[arg(long)]
        epochs: Option<usize>,
        /// Training seed override.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Single-step evaluation of a checkpoint on one split.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// Ablation flags the checkpoint was trained with.
        #[arg(long, default_value = "none")]
        ablation: String,
        /// Optional CSV output path (stdout otherwise).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Autoregressive rollout of a checkpoint on one trajectory.
    Rollout {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Trajectory index into the manifest.
        #[arg(long, default_value_t = 0)]
        traj: usize,
        /// Number of autoregressive steps.
        #[arg(long)]
        horizon: usize,
        #[arg(long, default_value = "none")]
        ablation: String,
        /// Optional CSV output path (stdout otherwise).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the full model, every ablated variant, and the fixed-weight
    /// sweep under one budget; emit comparison CSVs.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Space-time rollout error heatmap (binary PPM) plus raw CSV matrix.
    Plot {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Trajectory index into the manifest.
        #[arg(long)]
        traj: usize,
        /// Rollout horizon; defaults to every frame past the history.
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long, default_value = "none")]
        ablation: String,
        /// Output image path; the CSV lands next to it with a .csv suffix.
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.class());
            ExitCode::FAILURE
        }
    }
}

/// `HETSOLVER_SEED` wins over both flags and config files.
fn env_seed() -> Option<u64> {
    std::env::var("HETSOLVER_SEED").ok()?.parse().ok()
}

fn parse_ablation(name: &str) -> Result<AblationFlags, CliError> {
    AblationFlags::parse(name)
        .ok_or_else(|| CliError::BadArg(format!("unknown ablation variant '{name}'")))
}

fn load_file_config(path: &Option<PathBuf>) -> Result<FileConfig, CliError> {
    Ok(match path {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    })
}

fn build_train_config(
    config: &Option<PathBuf>,
    ablation: &Option<String>,
    loss: &Option<String>,
    epochs: Option<usize>,
    seed: Option<u64>,
) -> Result<TrainConfig<f64>, CliError> {
    let mut tc = TrainConfig::<f64>::default();
    load_file_config(config)?.apply_train(&mut tc)?;
    if let Some(name) = ablation {
        tc.ablation = parse_ablation(name)?;
    }
    if let Some(spec) = loss {
        tc.loss_mode = parse_loss(spec)?;
    }
    if let Some(e) = epochs {
        tc.epochs = e;
    }
    if let Some(s) = seed {
        tc.seed = s;
    }
    if let Some(s) = env_seed() {
        tc.seed = s;
    }
    Ok(tc)
}

/// Rebuild the training-shape fields from a checkpoint so evaluation uses
/// the same architecture.
fn eval_config(params: &ModelParams<f64>, ablation: &str) -> Result<TrainConfig<f64>, CliError> {
    Ok(TrainConfig {
        hidden: params.config.hidden,
        depth: params.config.depth,
        history_len: params.config.history_len,
        ablation: parse_ablation(ablation)?,
        ..TrainConfig::default()
    })
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Generate {
            out,
            n_traj,
            layout,
            grid_cols,
            seed,
            config,
        } => {
            let mut gc = GenConfig::<f64>::default();
            load_file_config(&config)?.apply_generate(&mut gc)?;
            gc.layout = match layout {
                LayoutArg::Channel1d => Layout::Channel1D,
                LayoutArg::Grid2d => Layout::Grid2D { cols: grid_cols },
            };
            if let Some(n) = n_traj {
                gc.n_traj = n;
            }
            if let Some(s) = seed {
                gc.master_seed = s;
            }
            if let Some(s) = env_seed() {
                gc.master_seed = s;
            }
            let manifest = make_dataset(&out, &gc)?;
            println!(
                "wrote {} trajectories ({} train / {} val / {} test) to {}",
                manifest.entries.len(),
                manifest.train.len(),
                manifest.val.len(),
                manifest.test.len(),
                out.display()
            );
            Ok(())
        }
        Command::Train {
            data,
            out,
            config,
            ablation,
            loss,
            epochs,
            seed,
        } => {
            let tc = build_train_config(&config, &ablation, &loss, epochs, seed)?;
            let dataset = Dataset::<f64>::load(&data)?;
            println!(
                "training variant '{}' for {} epochs (seed {})",
                tc.ablation.name(),
                tc.epochs,
                tc.seed
            );
            let report = train(&dataset, &tc, &out)?;
            println!(
                "best val combined rel-l2 {:.4}% at epoch {}",
                report.best_val_error, report.best_val_epoch
            );
            println!("final checkpoint: {}", report.final_ckpt.display());
            println!("metrics: {}", report.metrics_csv.display());
            Ok(())
        }
        Command::Eval {
            ckpt,
            data,
            split,
            ablation,
            out,
        } => {
            let params = load_checkpoint::<f64>(&ckpt)?;
            let tc = eval_config(&params, &ablation)?;
            let dataset = Dataset::<f64>::load(&data)?;
            let eval = evaluate_split(&dataset, split.into(), &params, &tc)?;
            let csv = format!(
                "split,l_fluid,l_solid,rel_l2_fluid,rel_l2_solid,rel_l2_combined\n{:?},{},{},{},{},{}\n",
                Split::from(split),
                eval.l_fluid,
                eval.l_solid,
                eval.rel_l2_fluid,
                eval.rel_l2_solid,
                eval.rel_l2_combined
            );
            match out {
                Some(path) => std::fs::write(path, csv)?,
                None => print!("{csv}"),
            }
            Ok(())
        }
        Command::Rollout {
            ckpt,
            data,
            traj,
            horizon,
            ablation,
            out,
        } => {
            let params = load_checkpoint::<f64>(&ckpt)?;
            let flags = parse_ablation(&ablation)?;
            let dataset = Dataset::<f64>::load(&data)?;
            let trajectory = dataset
                .trajectories
                .get(traj)
                .ok_or_else(|| CliError::BadArg(format!("trajectory {traj} out of range")))?;
            let report = rollout(
                &params,
                trajectory,
                &dataset.manifest.stats,
                horizon,
                &flags,
            )?;
            let mut csv = String::from("step,rel_l2_fluid,rel_l2_solid\n");
            for (k, (f, s)) in report
                .per_step_fluid
                .iter()
                .zip(&report.per_step_solid)
                .enumerate()
            {
                csv.push_str(&format!("{k},{f},{s}\n"));
            }
            csv.push_str(&format!(
                "mean,{},{}\n",
                report.mean_fluid, report.mean_solid
            ));
            match out {
                Some(path) => std::fs::write(path, &csv)?,
                None => print!("{csv}"),
            }
            if let Some(step) = report.diverged_at {
                println!("rollout diverged at step {step}");
            }
            let (_, _, pf, ps) =
                persistence_errors(trajectory, params.config.history_len, horizon);
            println!(
                "persistence baseline horizon means: fluid {pf:.4}%, solid {ps:.4}%"
            );
            Ok(())
        }
        Command::Ablate {
            data,
            out,
            config,
            seed,
        } => {
            let tc = build_train_config(&config, &None, &None, None, seed)?;
            let dataset = Dataset::<f64>::load(&data)?;
            let report = ablation_suite(&dataset, &tc, &out)?;
            println!("variant,rel_l2_fluid,rel_l2_solid,rel_l2_combined");
            for row in report.variants.iter().chain(&report.pareto) {
                println!(
                    "{},{},{},{}",
                    row.variant, row.rel_l2_fluid, row.rel_l2_solid, row.rel_l2_combined
                );
            }
            println!("tables: {} , {}", report.variants_csv.display(), report.pareto_csv.display());
            Ok(())
        }
        Command::Plot {
            ckpt,
            data,
            traj,
            horizon,
            ablation,
            out,
        } => {
            let params = load_checkpoint::<f64>(&ckpt)?;
            let flags = parse_ablation(&ablation)?;
            let dataset = Dataset::<f64>::load(&data)?;
            let trajectory = dataset
                .trajectories
                .get(traj)
                .ok_or_else(|| CliError::BadArg(format!("trajectory {traj} out of range")))?;
            let n_hist = params.config.history_len;
            let horizon = horizon.unwrap_or(trajectory.n_frames.saturating_sub(n_hist));
            let report = rollout(
                &params,
                trajectory,
                &dataset.manifest.stats,
                horizon,
                &flags,
            )?;
            let matrix = plot::error_matrix(&report.frames, trajectory, n_hist);
            plot::write_ppm(&out, &matrix)?;
            let csv_path = out.with_extension("csv");
            plot::write_error_csv(&csv_path, &matrix)?;
            println!(
                "wrote {} ({} steps x {} nodes x {} channels) and {}",
                out.display(),
                matrix.len(),
                trajectory.n_nodes(),
                CHANNELS,
                csv_path.display()
            );
            Ok(())
        }
    }
}
