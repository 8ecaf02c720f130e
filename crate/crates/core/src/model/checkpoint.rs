//! Versioned binary checkpoint: header (magic, version, configuration),
//! then every parameter tensor in declared order as 64-bit little-endian
//! floats.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::autodiff::Tensor;
use crate::scalar::Scalar;

use super::{tensor_shapes, ModelConfig, ModelError, ModelParams, ParamLayout, UpdateActivation};

const MAGIC: &[u8; 8] = b"HSCKPT01";

pub fn save_checkpoint<T: Scalar>(params: &ModelParams<T>, path: &Path) -> Result<(), ModelError> {
    let c = &params.config;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    for field in [
        c.hidden,
        c.depth,
        c.history_len,
        c.channels,
        c.pos_dim,
        c.time_dim,
        c.n_physics,
    ] {
        out.extend_from_slice(&(field as u32).to_le_bytes());
    }
    out.push(match c.update_activation {
        UpdateActivation::Relu => 0,
        UpdateActivation::Tanh => 1,
    });
    out.extend_from_slice(&(params.tensors.len() as u32).to_le_bytes());
    for t in &params.tensors {
        out.extend_from_slice(&(t.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(t.cols() as u32).to_le_bytes());
        for &v in t.data() {
            out.extend_from_slice(&v.to_f64().to_le_bytes());
        }
    }
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&out)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<ModelParams<T>, ModelError> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 8 + 7 * 4 + 1 + 4 || &bytes[0..8] != MAGIC {
        return Err(ModelError::BadCheckpoint(format!(
            "{} is not a checkpoint",
            path.display()
        )));
    }
    let mut off = 8;
    let read_u32 = |off: &mut usize| {
        let v = u32::from_le_bytes(bytes[*off..*off + 4].try_into().unwrap()) as usize;
        *off += 4;
        v
    };
    let hidden = read_u32(&mut off);
    let depth = read_u32(&mut off);
    let history_len = read_u32(&mut off);
    let channels = read_u32(&mut off);
    let pos_dim = read_u32(&mut off);
    let time_dim = read_u32(&mut off);
    let n_physics = read_u32(&mut off);
    let update_activation = match bytes[off] {
        0 => UpdateActivation::Relu,
        1 => UpdateActivation::Tanh,
        other => {
            return Err(ModelError::BadCheckpoint(format!(
                "unknown activation tag {other}"
            )))
        }
    };
    off += 1;
    let config = ModelConfig {
        hidden,
        depth,
        history_len,
        channels,
        pos_dim,
        time_dim,
        n_physics,
        update_activation,
    };
    let n_tensors = u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as usize;
    off += 4;
    let shapes = tensor_shapes(&config);
    if n_tensors != shapes.len() {
        return Err(ModelError::BadCheckpoint(format!(
            "{} tensors, layout expects {}",
            n_tensors,
            shapes.len()
        )));
    }
    let mut tensors = Vec::with_capacity(n_tensors);
    for &(rows, cols) in &shapes {
        if bytes.len() < off + 8 {
            return Err(ModelError::BadCheckpoint("truncated".into()));
        }
        let r = u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as usize;
        let c = u32::from_le_bytes(bytes[off + 4..off + 8].try_into().unwrap()) as usize;
        off += 8;
        if (r, c) != (rows, cols) {
            return Err(ModelError::BadCheckpoint(format!(
                "tensor shape {r}x{c}, layout expects {rows}x{cols}"
            )));
        }
        let need = r * c * 8;
        if bytes.len() < off + need {
            return Err(ModelError::BadCheckpoint("truncated tensor data".into()));
        }
        let data = bytes[off..off + need]
            .chunks_exact(8)
            .map(|chunk| T::from_f64(f64::from_le_bytes(chunk.try_into().unwrap())))
            .collect();
        off += need;
        tensors.push(Tensor::new(r, c, data).expect("checkpoint tensor"));
    }
    if off != bytes.len() {
        return Err(ModelError::BadCheckpoint("trailing bytes".into()));
    }
    Ok(ModelParams {
        config,
        layout: ParamLayout::new(&config),
        tensors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_everything() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let params = ModelParams::<f64>::init(
            ModelConfig {
                hidden: 6,
                depth: 2,
                ..ModelConfig::default()
            },
            7,
        );
        save_checkpoint(&params, &path).unwrap();
        let loaded = load_checkpoint::<f64>(&path).unwrap();
        assert_eq!(loaded.config, params.config);
        assert_eq!(loaded.tensors, params.tensors);
    }

    #[test]
    fn rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        fs::write(&path, b"definitely not a checkpoint").unwrap();
        assert!(matches!(
            load_checkpoint::<f64>(&path),
            Err(ModelError::BadCheckpoint(_))
        ));
    }
}
