//! Synthetic scenes standing in for real images, region proposals and
//! class-peak seed masks.

mod io;
mod proposals;
mod scene;

pub use io::{load_dataset, read_dataset, save_dataset, write_dataset, FORMAT_VERSION};
pub use proposals::{filter_by_boxes, gen_proposals, FilteredPool, ProposalConfig};
pub use scene::{gen_scene, ShapeKind, SceneConfig};

use serde::{Deserialize, Serialize};

use crate::geometry::{Adjacency, BBox, EdgeMap, PixelMask};

/// A mask tagged with a foreground class id (`1..=C`).
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledMask {
    pub class_id: usize,
    pub mask: PixelMask,
}

pub type GroundTruthInstance = LabeledMask;
pub type SeedMask = LabeledMask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassBox {
    pub class_id: usize,
    #[serde(rename = "box")]
    pub bbox: BBox,
}

/// Weak supervision for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    /// `presence[j - 1]` is true when class `j` appears in the image.
    pub presence: Vec<bool>,
    pub boxes: Option<Vec<ClassBox>>,
}

impl Annotation {
    pub fn image_level(presence: Vec<bool>) -> Self {
        Self {
            presence,
            boxes: None,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.presence.len()
    }

    /// Annotated class ids, ascending.
    pub fn classes(&self) -> Vec<usize> {
        self.presence
            .iter()
            .enumerate()
            .filter(|(_, &p)| p)
            .map(|(i, _)| i + 1)
            .collect()
    }

    pub fn is_present(&self, class_id: usize) -> bool {
        class_id >= 1 && self.presence.get(class_id - 1).copied().unwrap_or(false)
    }

    /// Same annotation with the box list dropped.
    pub fn without_boxes(&self) -> Self {
        Self::image_level(self.presence.clone())
    }
}

/// RGB image with interleaved `f32` channels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        for (c, v) in rgb.iter().enumerate() {
            self.data[i + c] = v.clamp(0.0, 1.0);
        }
    }
}

/// One training or evaluation unit.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneRecord {
    pub id: u64,
    pub image: Image,
    pub edges: EdgeMap,
    pub gt: Vec<GroundTruthInstance>,
    pub annotation: Annotation,
    pub pool: Vec<PixelMask>,
    pub adjacency: Adjacency,
    pub seeds: Vec<SeedMask>,
}

impl SceneRecord {
    pub fn width(&self) -> usize {
        self.image.width
    }

    pub fn height(&self) -> usize {
        self.image.height
    }

    pub fn num_classes(&self) -> usize {
        self.annotation.num_classes()
    }
}

/// Scene plus proposal pool for one seed: the usual way to build datasets.
pub fn gen_record(
    scene_cfg: &SceneConfig,
    proposal_cfg: &ProposalConfig,
    seed: u64,
) -> crate::Result<SceneRecord> {
    let mut scene = gen_scene(scene_cfg, seed)?;
    let (pool, adjacency) = gen_proposals(&scene, proposal_cfg, seed)?;
    scene.pool = pool;
    scene.adjacency = adjacency;
    Ok(scene)
}

/// Records for seeds `first..first + count`, generated in parallel.
pub fn gen_dataset(
    scene_cfg: &SceneConfig,
    proposal_cfg: &ProposalConfig,
    first: u64,
    count: usize,
) -> crate::Result<Vec<SceneRecord>> {
    use rayon::prelude::*;
    (first..first + count as u64)
        .into_par_iter()
        .map(|s| gen_record(scene_cfg, proposal_cfg, s))
        .collect()
}
