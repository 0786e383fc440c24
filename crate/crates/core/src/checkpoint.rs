//! Model checkpoints: both parameter sets together with the configuration
//! that trained them, one JSON file per outer iteration.

use std::fs;
use std::path::{Path, PathBuf};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::error::{mismatch, Error, Result};
use crate::prednet::PredParams;
use crate::scorer::CondParams;
use crate::train::{log_csv, FitConfig, FitResult};

pub const CHECKPOINT_VERSION: u32 = 1;
pub const LOG_FILE: &str = "log.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub outer: usize,
    pub num_classes: usize,
    pub config: FitConfig,
    pub theta_c: CondParams,
    pub theta_p: PredParams,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Weights {
    outputs: usize,
    inputs: usize,
    #[serde(default)]
    hidden: Option<usize>,
    /// Little-endian `f64`, base64.
    data: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    version: u32,
    outer: usize,
    num_classes: usize,
    config: FitConfig,
    theta_c: Weights,
    theta_p: Weights,
}

fn encode(w: &[f64]) -> String {
    B64.encode(w.iter().flat_map(|v| v.to_le_bytes()).collect::<Vec<u8>>())
}

fn decode(s: &str) -> Result<Vec<f64>> {
    let bytes = B64.decode(s).map_err(|e| Error::Format(format!("weights: {e}")))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Format("weights: truncated buffer".into()));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        let file = CheckpointFile {
            version: CHECKPOINT_VERSION,
            outer: self.outer,
            num_classes: self.num_classes,
            config: self.config.clone(),
            theta_c: Weights {
                outputs: self.theta_c.outputs,
                inputs: self.theta_c.inputs,
                hidden: self.theta_c.hidden,
                data: encode(&self.theta_c.weights),
            },
            theta_p: Weights {
                outputs: self.theta_p.outputs,
                inputs: self.theta_p.inputs,
                hidden: None,
                data: encode(&self.theta_p.weights),
            },
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: CheckpointFile = serde_json::from_str(s)?;
        if f.version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                found: f.version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let mut theta_c = CondParams::zeros(f.theta_c.outputs, f.theta_c.inputs, f.theta_c.hidden);
        let wc = decode(&f.theta_c.data)?;
        if wc.len() != theta_c.len() {
            return Err(mismatch(theta_c.len(), wc.len()));
        }
        theta_c.weights = wc;
        let mut theta_p = PredParams::zeros(f.theta_p.outputs, f.theta_p.inputs);
        let wp = decode(&f.theta_p.data)?;
        if wp.len() != theta_p.len() {
            return Err(mismatch(theta_p.len(), wp.len()));
        }
        theta_p.weights = wp;
        f.config.validate()?;
        Ok(Self {
            outer: f.outer,
            num_classes: f.num_classes,
            config: f.config,
            theta_c,
            theta_p,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

pub fn checkpoint_path(dir: impl AsRef<Path>, outer: usize) -> PathBuf {
    dir.as_ref().join(format!("checkpoint_{outer:02}.json"))
}

/// Write every snapshot of a fit and its training log into `dir`.
pub fn save_model(dir: impl AsRef<Path>, result: &FitResult, config: &FitConfig, num_classes: usize) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    for s in &result.snapshots {
        Checkpoint {
            outer: s.outer,
            num_classes,
            config: config.clone(),
            theta_c: s.theta_c.clone(),
            theta_p: s.theta_p.clone(),
        }
        .save(checkpoint_path(dir, s.outer))?;
    }
    fs::write(dir.join(LOG_FILE), log_csv(&result.log))?;
    Ok(())
}

/// All checkpoints in `dir`, ordered by outer iteration.
pub fn load_model(dir: impl AsRef<Path>) -> Result<Vec<Checkpoint>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir.as_ref())? {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        if name.starts_with("checkpoint_") && name.ends_with(".json") {
            out.push(Checkpoint::load(&path)?);
        }
    }
    if out.is_empty() {
        return Err(Error::Format(format!("no checkpoint in {}", dir.as_ref().display())));
    }
    out.sort_by_key(|c| c.outer);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scorer::ScorerConfig;

    #[test]
    fn json_roundtrip_is_exact() {
        let cfg = FitConfig::default();
        let mlp = ScorerConfig {
            hidden: Some(4),
            ..Default::default()
        };
        let ck = Checkpoint {
            outer: 3,
            num_classes: 2,
            config: cfg,
            theta_c: CondParams::for_classes(2, &mlp, 7),
            theta_p: PredParams::random(3, 10, 0.5, 9),
        };
        let back = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap();
        assert_eq!(back, ck);
    }

    #[test]
    fn rejects_bad_lengths_and_versions() {
        let ck = Checkpoint {
            outer: 0,
            num_classes: 1,
            config: FitConfig::default(),
            theta_c: CondParams::zeros(2, 3, None),
            theta_p: PredParams::zeros(2, 3),
        };
        let json = ck.to_json().unwrap();
        let short = json.replace(&encode(&[0.0; 6]), &encode(&[0.0; 5]));
        assert!(matches!(Checkpoint::from_json(&short), Err(Error::DimensionMismatch { .. })));
        let old = json.replace("\"version\": 1", "\"version\": 9");
        assert!(matches!(Checkpoint::from_json(&old), Err(Error::Version { found: 9, .. })));
    }
}
