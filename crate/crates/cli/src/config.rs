//! Flat key=value configuration files with `[section]` headers. Unknown
//! sections or keys are hard errors so typos never silently fall back to
//! defaults.
//!
//! ```text
//! [train]
//! epochs = 200
//! loss = fixed:1:3
//!
//! [physics]
//! nu_min = 0.05
//! nu_max = 0.3
//! ```

use std::path::Path;

use hetsolver_core::datagen::GenConfig;
use hetsolver_core::model::AblationFlags;
use hetsolver_core::trainer::{LossMode, TrainConfig};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("unknown section [{0}]")]
    UnknownSection(String),
    #[error("unknown key '{key}' in section [{section}]")]
    UnknownKey { section: String, key: String },
    #[error("bad value for '{key}': {msg}")]
    BadValue { key: String, msg: String },
}

/// Parsed overrides, applied on top of the built-in defaults.
#[derive(Debug, Clone, Default)]
pub struct FileConfig {
    entries: Vec<(String, String, String)>, // (section, key, value)
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut section = String::new();
        let mut entries = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                section = name.trim().to_string();
                if !matches!(section.as_str(), "train" | "physics" | "generate") {
                    return Err(ConfigError::UnknownSection(section));
                }
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::Parse {
                    line: idx + 1,
                    msg: format!("expected key = value, got '{line}'"),
                });
            };
            if section.is_empty() {
                return Err(ConfigError::Parse {
                    line: idx + 1,
                    msg: "key outside any [section]".into(),
                });
            }
            entries.push((
                section.clone(),
                key.trim().to_string(),
                value.trim().to_string(),
            ));
        }
        Ok(Self { entries })
    }

    fn section<'a>(&'a self, name: &'a str) -> impl Iterator<Item = (&'a str, &'a str)> + 'a {
        self.entries
            .iter()
            .filter(move |(s, _, _)| s == name)
            .map(|(_, k, v)| (k.as_str(), v.as_str()))
    }

    /// Apply `[train]` overrides.
    pub fn apply_train(&self, config: &mut TrainConfig<f64>) -> Result<(), ConfigError> {
        for (key, value) in self.section("train") {
            match key {
                "epochs" => config.epochs = parse(key, value)?,
                "batch_size" => config.batch_size = parse(key, value)?,
                "lr_max" => config.lr_max = parse(key, value)?,
                "lr_min" => config.lr_min = parse(key, value)?,
                "weight_decay" => config.weight_decay = parse(key, value)?,
                "history_len" => config.history_len = parse(key, value)?,
                "seed" => config.seed = parse(key, value)?,
                "eval_every" => config.eval_every = parse(key, value)?,
                "hidden" => config.hidden = parse(key, value)?,
                "depth" => config.depth = parse(key, value)?,
                "clip_norm" => {
                    config.clip_norm = if value == "none" {
                        None
                    } else {
                        Some(parse(key, value)?)
                    }
                }
                "loss" => config.loss_mode = parse_loss(value)?,
                "ablation" => {
                    config.ablation =
                        AblationFlags::parse(value).ok_or_else(|| ConfigError::BadValue {
                            key: key.into(),
                            msg: format!("unknown ablation '{value}'"),
                        })?
                }
                _ => {
                    return Err(ConfigError::UnknownKey {
                        section: "train".into(),
                        key: key.into(),
                    })
                }
            }
        }
        Ok(())
    }

    /// Apply `[generate]` and `[physics]` overrides.
    pub fn apply_generate(&self, config: &mut GenConfig<f64>) -> Result<(), ConfigError> {
        for (key, value) in self.section("generate") {
            match key {
                "n_traj" => config.n_traj = parse(key, value)?,
                "n_frames" => config.n_frames = parse(key, value)?,
                "frame_stride" => config.frame_stride = parse(key, value)?,
                "dt_sim" => config.dt_sim = parse(key, value)?,
                "seed" => config.master_seed = parse(key, value)?,
                "n_fluid_min" => config.n_fluid_range.0 = parse(key, value)?,
                "n_fluid_max" => config.n_fluid_range.1 = parse(key, value)?,
                "n_solid_min" => config.n_solid_range.0 = parse(key, value)?,
                "n_solid_max" => config.n_solid_range.1 = parse(key, value)?,
                "advection_speed" => config.advection_speed = parse(key, value)?,
                _ => {
                    return Err(ConfigError::UnknownKey {
                        section: "generate".into(),
                        key: key.into(),
                    })
                }
            }
        }
        for (key, value) in self.section("physics") {
            let slot = match key {
                "rho_f_min" => &mut config.rho_f_range.0,
                "rho_f_max" => &mut config.rho_f_range.1,
                "nu_min" => &mut config.nu_range.0,
                "nu_max" => &mut config.nu_range.1,
                "rho_s_min" => &mut config.rho_s_range.0,
                "rho_s_max" => &mut config.rho_s_range.1,
                "k_spring_min" => &mut config.k_spring_range.0,
                "k_spring_max" => &mut config.k_spring_range.1,
                "damping_min" => &mut config.damping_range.0,
                "damping_max" => &mut config.damping_range.1,
                "coupling_min" => &mut config.coupling_range.0,
                "coupling_max" => &mut config.coupling_range.1,
                _ => {
                    return Err(ConfigError::UnknownKey {
                        section: "physics".into(),
                        key: key.into(),
                    })
                }
            };
            *slot = parse(key, value)?;
        }
        Ok(())
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| ConfigError::BadValue {
        key: key.into(),
        msg: format!("{e}"),
    })
}

/// `igbl` or `fixed:WF:WS`.
pub fn parse_loss(value: &str) -> Result<LossMode<f64>, ConfigError> {
    if value == "igbl" {
        return Ok(LossMode::Igbl);
    }
    if let Some(rest) = value.strip_prefix("fixed:") {
        let mut parts = rest.splitn(2, ':');
        let (Some(wf), Some(ws)) = (parts.next(), parts.next()) else {
            return Err(ConfigError::BadValue {
                key: "loss".into(),
                msg: "expected fixed:WF:WS".into(),
            });
        };
        return Ok(LossMode::Fixed {
            w_f: parse("loss", wf)?,
            w_s: parse("loss", ws)?,
        });
    }
    Err(ConfigError::BadValue {
        key: "loss".into(),
        msg: format!("expected 'igbl' or 'fixed:WF:WS', got '{value}'"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_comments_and_values() {
        let cfg = FileConfig::parse(
            "# top comment\n[train]\nepochs = 7\nloss = fixed:1:3 # inline\n\n[physics]\nnu_min = 0.1\n",
        )
        .unwrap();
        let mut train = TrainConfig::<f64>::default();
        cfg.apply_train(&mut train).unwrap();
        assert_eq!(train.epochs, 7);
        assert_eq!(train.loss_mode, LossMode::Fixed { w_f: 1.0, w_s: 3.0 });
        let mut gen = GenConfig::<f64>::default();
        cfg.apply_generate(&mut gen).unwrap();
        assert_eq!(gen.nu_range.0, 0.1);
    }

    #[test]
    fn unknown_key_is_a_hard_error() {
        let cfg = FileConfig::parse("[train]\nepohcs = 7\n").unwrap();
        let mut train = TrainConfig::<f64>::default();
        assert!(matches!(
            cfg.apply_train(&mut train),
            Err(ConfigError::UnknownKey { .. })
        ));
    }

    #[test]
    fn unknown_section_is_a_hard_error() {
        assert!(matches!(
            FileConfig::parse("[trian]\nepochs = 7\n"),
            Err(ConfigError::UnknownSection(_))
        ));
    }

    #[test]
    fn loss_spec_parsing() {
        assert_eq!(parse_loss("igbl").unwrap(), LossMode::Igbl);
        assert_eq!(
            parse_loss("fixed:1:3").unwrap(),
            LossMode::Fixed { w_f: 1.0, w_s: 3.0 }
        );
        assert!(parse_loss("fixed:1").is_err());
        assert!(parse_loss("adaptive").is_err());
    }
}
