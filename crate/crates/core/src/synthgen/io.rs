//! JSON-lines dataset files: one scene per line, masks run-length encoded,
//! float buffers as base64 little-endian `f32`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{Annotation, ClassBox, Image, LabeledMask, SceneRecord};
use crate::error::{Error, Result};
use crate::geometry::{Adjacency, EdgeMap, PixelMask};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MaskEntry {
    class_id: usize,
    rle: Vec<u32>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnnotationEntry {
    presence: Vec<u8>,
    boxes: Option<Vec<ClassBox>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProposalEntry {
    rle: Vec<u32>,
    neighbors: Vec<usize>,
    edge_weights: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneLine {
    version: u32,
    id: u64,
    width: usize,
    height: usize,
    image: String,
    edges: String,
    gt: Vec<MaskEntry>,
    annotation: AnnotationEntry,
    pool: Vec<ProposalEntry>,
    seeds: Vec<MaskEntry>,
}

pub(crate) fn encode_f32(values: &[f32]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    B64.encode(bytes)
}

pub(crate) fn decode_f32(s: &str, expected: usize) -> Result<Vec<f32>> {
    let bytes = B64
        .decode(s)
        .map_err(|e| Error::Format(format!("bad base64: {e}")))?;
    if bytes.len() != expected * 4 {
        return Err(Error::Format(format!(
            "float buffer has {} bytes, expected {}",
            bytes.len(),
            expected * 4
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn to_line(r: &SceneRecord) -> SceneLine {
    let mask_entry = |m: &LabeledMask| MaskEntry {
        class_id: m.class_id,
        rle: m.mask.to_rle(),
    };
    SceneLine {
        version: FORMAT_VERSION,
        id: r.id,
        width: r.width(),
        height: r.height(),
        image: encode_f32(&r.image.data),
        edges: encode_f32(&r.edges.values),
        gt: r.gt.iter().map(mask_entry).collect(),
        annotation: AnnotationEntry {
            presence: r.annotation.presence.iter().map(|&p| p as u8).collect(),
            boxes: r.annotation.boxes.clone(),
        },
        pool: r
            .pool
            .iter()
            .enumerate()
            .map(|(u, m)| ProposalEntry {
                rle: m.to_rle(),
                neighbors: r.adjacency.neighbors.get(u).cloned().unwrap_or_default(),
                edge_weights: r.adjacency.weights.get(u).cloned().unwrap_or_default(),
            })
            .collect(),
        seeds: r.seeds.iter().map(mask_entry).collect(),
    }
}

fn from_line(l: SceneLine) -> Result<SceneRecord> {
    if l.version != FORMAT_VERSION {
        return Err(Error::Version {
            found: l.version,
            expected: FORMAT_VERSION,
        });
    }
    let (w, h) = (l.width, l.height);
    let num_classes = l.annotation.presence.len();
    let labeled = |e: MaskEntry| -> Result<LabeledMask> {
        if e.class_id == 0 || e.class_id > num_classes {
            return Err(Error::Format(format!("class id {} out of range", e.class_id)));
        }
        Ok(LabeledMask {
            class_id: e.class_id,
            mask: PixelMask::from_rle(w, h, &e.rle)?,
        })
    };
    let mut pool = Vec::with_capacity(l.pool.len());
    let mut adjacency = Adjacency::empty(l.pool.len());
    for (u, p) in l.pool.into_iter().enumerate() {
        if p.neighbors.len() != p.edge_weights.len() {
            return Err(Error::Format("neighbor and weight lists differ in length".into()));
        }
        pool.push(PixelMask::from_rle(w, h, &p.rle)?);
        adjacency.neighbors[u] = p.neighbors;
        adjacency.weights[u] = p.edge_weights;
    }
    if adjacency.neighbors.iter().flatten().any(|&v| v >= pool.len()) || !adjacency.is_symmetric() {
        return Err(Error::Format("adjacency is not a symmetric graph over the pool".into()));
    }
    Ok(SceneRecord {
        id: l.id,
        image: Image {
            width: w,
            height: h,
            data: decode_f32(&l.image, w * h * 3)?,
        },
        edges: EdgeMap {
            width: w,
            height: h,
            values: decode_f32(&l.edges, w * h)?,
        },
        gt: l.gt.into_iter().map(labeled).collect::<Result<_>>()?,
        annotation: Annotation {
            presence: l.annotation.presence.iter().map(|&p| p != 0).collect(),
            boxes: l.annotation.boxes,
        },
        pool,
        adjacency,
        seeds: l.seeds.into_iter().map(labeled).collect::<Result<_>>()?,
    })
}

pub fn write_dataset<W: Write>(records: &[SceneRecord], mut out: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, &to_line(r))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_dataset<R: Read>(input: R) -> Result<Vec<SceneRecord>> {
    let mut records = Vec::new();
    for (n, line) in BufReader::new(input).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: SceneLine = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("line {}: {e}", n + 1)))?;
        records.push(from_line(parsed)?);
    }
    Ok(records)
}

pub fn save_dataset(records: &[SceneRecord], path: impl AsRef<Path>) -> Result<()> {
    write_dataset(records, BufWriter::new(File::create(path)?))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<SceneRecord>> {
    read_dataset(File::open(path)?)
}
