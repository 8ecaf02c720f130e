//! Space-time error heatmap emission: binary PPM (P6) image plus the raw
//! error matrix as CSV.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use hetsolver_core::autodiff::Tensor;
use hetsolver_core::datagen::{Trajectory, CHANNELS};

/// Per-(step, node) absolute error: l2 over the state channels between a
/// predicted frame and the matching ground-truth frame.
pub fn error_matrix(
    predicted: &[Tensor<f64>],
    traj: &Trajectory<f64>,
    history_len: usize,
) -> Vec<Vec<f64>> {
    let n = traj.n_nodes();
    predicted
        .iter()
        .enumerate()
        .map(|(step, frame)| {
            (0..n)
                .map(|i| {
                    let mut sq = 0.0;
                    for ch in 0..CHANNELS {
                        let d = frame.get(i, ch) - traj.state(history_len + step, i, ch);
                        sq += d * d;
                    }
                    sq.sqrt()
                })
                .collect()
        })
        .collect()
}

/// Binary PPM heatmap: width = steps, height = nodes, linear blue-to-red
/// ramp normalized by the matrix maximum. A zero matrix renders uniformly
/// at the bottom of the ramp.
pub fn write_ppm(path: &Path, matrix: &[Vec<f64>]) -> std::io::Result<()> {
    let width = matrix.len();
    let height = matrix.first().map_or(0, |row| row.len());
    let max = matrix
        .iter()
        .flatten()
        .cloned()
        .fold(0.0f64, f64::max);
    let mut out = BufWriter::new(File::create(path)?);
    write!(out, "P6\n{width} {height}\n255\n")?;
    for node in 0..height {
        for col in matrix {
            let v = if max > 0.0 { col[node] / max } else { 0.0 };
            let r = (v * 255.0).round() as u8;
            let b = ((1.0 - v) * 255.0).round() as u8;
            out.write_all(&[r, 0, b])?;
        }
    }
    out.flush()
}

/// The raw error matrix: one CSV row per rollout step, one column per node.
pub fn write_error_csv(path: &Path, matrix: &[Vec<f64>]) -> std::io::Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for row in matrix {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    out.flush()
}
