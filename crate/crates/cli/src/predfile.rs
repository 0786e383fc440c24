//! Prediction files written by `infer`: one JSON line per scene.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use annoconsist::prednet::PredictionRecord;
use annoconsist::{InstanceLabeling, InstancePrediction, SceneRecord};
use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

/// State of both networks after one outer iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IterationEntry {
    pub outer: usize,
    /// K conditional samples, each a label per proposal.
    pub samples: Vec<InstanceLabeling>,
    pub predictions: Vec<PredictionRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneEntry {
    pub scene: u64,
    pub width: usize,
    pub height: usize,
    /// Decoded predictions of the final checkpoint.
    pub predictions: Vec<PredictionRecord>,
    #[serde(default)]
    pub iterations: Vec<IterationEntry>,
}

impl SceneEntry {
    pub fn decoded(&self) -> Result<Vec<InstancePrediction>> {
        decode_records(&self.predictions, self.width, self.height)
    }
}

pub fn decode_records(recs: &[PredictionRecord], width: usize, height: usize) -> Result<Vec<InstancePrediction>> {
    recs.iter()
        .map(|r| InstancePrediction::from_record(r, width, height).map_err(Into::into))
        .collect()
}

pub fn write(entries: &[SceneEntry], path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    for e in entries {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read(path: &Path) -> Result<Vec<SceneEntry>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).with_context(|| format!("{} line {}", path.display(), n + 1))?);
    }
    Ok(out)
}

/// Predictions in dataset order. Scenes without an entry get none.
pub fn align(entries: &[SceneEntry], data: &[SceneRecord]) -> Result<Vec<Vec<InstancePrediction>>> {
    let mut out = Vec::with_capacity(data.len());
    for s in data {
        match entries.iter().find(|e| e.scene == s.id) {
            Some(e) => {
                if (e.width, e.height) != (s.width(), s.height()) {
                    bail!("scene {}: prediction size {}x{} does not match the data", s.id, e.width, e.height);
                }
                out.push(e.decoded()?);
            }
            None => out.push(Vec::new()),
        }
    }
    Ok(out)
}
