use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Annotation, ClassBox, Image, LabeledMask, SceneRecord};
use crate::error::{Error, Result};
use crate::geometry::{tight_box, Adjacency, EdgeMap, PixelMask};
use crate::rng;

const PALETTE: [[f32; 3]; 5] = [
    [0.85, 0.25, 0.20],
    [0.20, 0.75, 0.30],
    [0.25, 0.35, 0.90],
    [0.90, 0.80, 0.20],
    [0.70, 0.30, 0.80],
];
const BACKGROUND: [f32; 3] = [0.45, 0.45, 0.45];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Rect,
    Ellipse,
    L,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    pub num_classes: usize,
    /// Classes objects are drawn from; empty means `1..=num_classes`.
    pub classes: Vec<usize>,
    pub min_objects: usize,
    pub max_objects: usize,
    pub shapes: Vec<ShapeKind>,
    pub min_size: usize,
    pub max_size: usize,
    /// Largest fraction of a new object that may be drawn over earlier ones.
    pub max_overlap: f64,
    /// Probability that a pixel carries clutter edge response.
    pub edge_noise_density: f64,
    pub edge_noise_amplitude: f64,
    pub pixel_noise: f64,
    pub color_jitter: f64,
    pub seed_fraction_min: f64,
    pub seed_fraction_max: f64,
    pub with_boxes: bool,
    pub max_retries: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            width: 48,
            height: 48,
            num_classes: 3,
            classes: Vec::new(),
            min_objects: 1,
            max_objects: 3,
            shapes: vec![ShapeKind::Rect, ShapeKind::Ellipse, ShapeKind::L],
            min_size: 10,
            max_size: 20,
            max_overlap: 0.1,
            edge_noise_density: 0.02,
            edge_noise_amplitude: 0.5,
            pixel_noise: 0.05,
            color_jitter: 0.05,
            seed_fraction_min: 0.2,
            seed_fraction_max: 0.5,
            with_boxes: true,
            max_retries: 100,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.width == 0 || self.height == 0 || self.width > 128 || self.height > 128 {
            return bad("image dimensions must be in 1..=128");
        }
        if self.num_classes == 0 || self.num_classes > PALETTE.len() {
            return bad("num_classes must be in 1..=5");
        }
        if self.classes.iter().any(|&c| c == 0 || c > self.num_classes) {
            return bad("classes must lie in 1..=num_classes");
        }
        if self.min_objects == 0 || self.min_objects > self.max_objects || self.max_objects > 6 {
            return bad("object count must satisfy 1 <= min <= max <= 6");
        }
        if self.shapes.is_empty() {
            return bad("at least one shape kind is required");
        }
        if self.min_size < 3 || self.min_size > self.max_size {
            return bad("object size range is invalid");
        }
        if self.max_size > self.width.min(self.height) {
            return bad("objects must fit inside the image");
        }
        if !(0.0..=1.0).contains(&self.max_overlap) {
            return bad("max_overlap must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.edge_noise_density)
            || !(0.0..=1.0).contains(&self.edge_noise_amplitude)
        {
            return bad("edge noise parameters must lie in [0, 1]");
        }
        if !(0.0 < self.seed_fraction_min
            && self.seed_fraction_min <= self.seed_fraction_max
            && self.seed_fraction_max <= 1.0)
        {
            return bad("seed fraction range must lie in (0, 1]");
        }
        Ok(())
    }
}

fn shape_mask(
    cfg: &SceneConfig,
    kind: ShapeKind,
    x0: usize,
    y0: usize,
    w: usize,
    h: usize,
    rng: &mut ChaCha8Rng,
) -> PixelMask {
    let (x0i, y0i, x1i, y1i) = (x0 as i64, y0 as i64, (x0 + w - 1) as i64, (y0 + h - 1) as i64);
    match kind {
        ShapeKind::Rect => PixelMask::rect(cfg.width, cfg.height, x0i, y0i, x1i, y1i),
        ShapeKind::Ellipse => {
            let cx = x0 as f64 + (w as f64 - 1.0) / 2.0;
            let cy = y0 as f64 + (h as f64 - 1.0) / 2.0;
            let a = w as f64 / 2.0;
            let b = h as f64 / 2.0;
            PixelMask::from_fn(cfg.width, cfg.height, |x, y| {
                let dx = (x as f64 - cx) / a;
                let dy = (y as f64 - cy) / b;
                dx * dx + dy * dy <= 1.0
            })
        }
        ShapeKind::L => {
            let full = PixelMask::rect(cfg.width, cfg.height, x0i, y0i, x1i, y1i);
            let cw = (w / 2).max(1) as i64;
            let ch = (h / 2).max(1) as i64;
            let (cx0, cy0) = match rng.gen_range(0..4) {
                0 => (x0i, y0i),
                1 => (x1i - cw + 1, y0i),
                2 => (x0i, y1i - ch + 1),
                _ => (x1i - cw + 1, y1i - ch + 1),
            };
            let notch = PixelMask::rect(cfg.width, cfg.height, cx0, cy0, cx0 + cw - 1, cy0 + ch - 1);
            full.and_not(&notch)
        }
    }
}

/// Contiguous region inside `mask` grown breadth-first from a random pixel
/// until it holds `target` pixels (or the component is exhausted).
pub(crate) fn grow_region(mask: &PixelMask, target: usize, rng: &mut ChaCha8Rng) -> PixelMask {
    let pixels: Vec<(usize, usize)> = mask.pixels().collect();
    let mut out = PixelMask::new(mask.width(), mask.height());
    let Some(&start) = pixels.choose(rng) else {
        return out;
    };
    let mut queue = VecDeque::from([start]);
    out.set(start.0, start.1, true);
    let mut count = 1;
    while let Some((x, y)) = queue.pop_front() {
        if count >= target {
            break;
        }
        let (xi, yi) = (x as i64, y as i64);
        for (nx, ny) in [(xi + 1, yi), (xi - 1, yi), (xi, yi + 1), (xi, yi - 1)] {
            if count >= target {
                break;
            }
            if mask.get_signed(nx, ny) && !out.get(nx as usize, ny as usize) {
                out.set(nx as usize, ny as usize, true);
                queue.push_back((nx as usize, ny as usize));
                count += 1;
            }
        }
    }
    out
}

/// Deterministic scene for `(cfg, seed)`. The proposal pool is left empty;
/// see [`gen_proposals`](super::gen_proposals).
pub fn gen_scene(cfg: &SceneConfig, seed: u64) -> Result<SceneRecord> {
    cfg.validate()?;
    let mut rng = rng::stream(&[seed, 0x5CE4E]);
    let classes: Vec<usize> = if cfg.classes.is_empty() {
        (1..=cfg.num_classes).collect()
    } else {
        cfg.classes.clone()
    };
    let n_objects = rng.gen_range(cfg.min_objects..=cfg.max_objects);

    // Visible masks; later objects occlude earlier ones.
    let mut placed: Vec<(usize, PixelMask, [f32; 3])> = Vec::new();
    for _ in 0..n_objects {
        let class_id = *classes.choose(&mut rng).expect("non-empty class list");
        let mut accepted = None;
        for _ in 0..cfg.max_retries {
            let kind = *cfg.shapes.choose(&mut rng).expect("non-empty shape list");
            let w = rng.gen_range(cfg.min_size..=cfg.max_size);
            let h = rng.gen_range(cfg.min_size..=cfg.max_size);
            let x0 = rng.gen_range(0..=cfg.width - w);
            let y0 = rng.gen_range(0..=cfg.height - h);
            let m = shape_mask(cfg, kind, x0, y0, w, h, &mut rng);
            if m.area() < 4 {
                continue;
            }
            let covered = placed
                .iter()
                .map(|(_, p, _)| p.intersection_area(&m))
                .sum::<usize>();
            if covered as f64 > cfg.max_overlap * m.area() as f64 {
                continue;
            }
            // Earlier objects must keep most of their area once occluded.
            let ok = placed.iter().all(|(_, p, _)| {
                let left = p.and_not(&m).area();
                left * 2 >= p.area() && left >= 4
            });
            if ok {
                accepted = Some(m);
                break;
            }
        }
        let m = accepted.ok_or_else(|| {
            Error::Generation(format!("could not place object after {} tries", cfg.max_retries))
        })?;
        for (_, p, _) in placed.iter_mut() {
            *p = p.and_not(&m);
        }
        let base = PALETTE[class_id - 1];
        let jitter = cfg.color_jitter as f32;
        let color = base.map(|c| c + rng.gen_range(-1.0f32..=1.0) * jitter);
        placed.push((class_id, m, color));
    }

    let mut image = Image::new(cfg.width, cfg.height);
    let tint: f32 = rng.gen_range(-0.08..=0.08);
    let noise = cfg.pixel_noise as f32;
    for y in 0..cfg.height {
        for x in 0..cfg.width {
            let mut rgb = BACKGROUND.map(|c| c + tint);
            for (_, m, color) in &placed {
                if m.get(x, y) {
                    rgb = *color;
                }
            }
            let rgb = rgb.map(|c| c + rng.gen_range(-1.0f32..=1.0) * noise);
            image.set_pixel(x, y, rgb);
        }
    }

    let mut edges = EdgeMap::zeros(cfg.width, cfg.height);
    for (_, m, _) in &placed {
        for (x, y) in m.outer_contour().pixels() {
            edges.set(x, y, 1.0);
        }
    }
    for y in 0..cfg.height {
        for x in 0..cfg.width {
            if rng.gen_bool(cfg.edge_noise_density) {
                let v: f32 = rng.gen_range(0.0..=cfg.edge_noise_amplitude as f32);
                if v > edges.get(x, y) {
                    edges.set(x, y, v);
                }
            }
        }
    }

    let gt: Vec<LabeledMask> = placed
        .iter()
        .map(|(c, m, _)| LabeledMask {
            class_id: *c,
            mask: m.clone(),
        })
        .collect();

    let seeds = gt
        .iter()
        .map(|inst| {
            let f = rng.gen_range(cfg.seed_fraction_min..=cfg.seed_fraction_max);
            let target = ((f * inst.mask.area() as f64).round() as usize).max(1);
            LabeledMask {
                class_id: inst.class_id,
                mask: grow_region(&inst.mask, target, &mut rng),
            }
        })
        .collect();

    let mut presence = vec![false; cfg.num_classes];
    for inst in &gt {
        presence[inst.class_id - 1] = true;
    }
    let boxes = if cfg.with_boxes {
        Some(
            gt.iter()
                .map(|inst| {
                    Ok(ClassBox {
                        class_id: inst.class_id,
                        bbox: tight_box(&inst.mask)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?,
        )
    } else {
        None
    };

    Ok(SceneRecord {
        id: seed,
        image,
        edges,
        gt,
        annotation: Annotation { presence, boxes },
        pool: Vec::new(),
        adjacency: Adjacency::empty(0),
        seeds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_for_fixed_seed() {
        let cfg = SceneConfig::default();
        assert_eq!(gen_scene(&cfg, 7).unwrap(), gen_scene(&cfg, 7).unwrap());
        assert_ne!(gen_scene(&cfg, 7).unwrap(), gen_scene(&cfg, 8).unwrap());
    }

    #[test]
    fn single_object_presence() {
        let cfg = SceneConfig {
            num_classes: 3,
            classes: vec![2],
            min_objects: 1,
            max_objects: 1,
            ..SceneConfig::default()
        };
        let s = gen_scene(&cfg, 3).unwrap();
        assert_eq!(s.annotation.presence, vec![false, true, false]);
        assert_eq!(s.gt.len(), 1);
    }

    #[test]
    fn seeds_are_contiguous_subsets() {
        let cfg = SceneConfig::default();
        for seed in 0..100 {
            let s = gen_scene(&cfg, seed).unwrap();
            assert_eq!(s.seeds.len(), s.gt.len());
            for (inst, sd) in s.gt.iter().zip(&s.seeds) {
                assert_eq!(inst.class_id, sd.class_id);
                assert!(!sd.mask.is_empty());
                assert!(sd.mask.is_subset_of(&inst.mask));
                let frac = sd.mask.area() as f64 / inst.mask.area() as f64;
                assert!(frac <= cfg.seed_fraction_max + 0.05, "seed fraction {frac}");
                // One 4-connected component.
                let grown = grow_region(&sd.mask, usize::MAX, &mut rng::stream(&[seed]));
                assert_eq!(grown, sd.mask);
            }
            for v in &s.edges.values {
                assert!((0.0..=1.0).contains(v));
            }
        }
    }

    #[test]
    fn ground_truth_masks_are_disjoint() {
        let cfg = SceneConfig {
            max_objects: 6,
            min_objects: 4,
            max_overlap: 0.3,
            width: 64,
            height: 64,
            ..SceneConfig::default()
        };
        let s = gen_scene(&cfg, 11).unwrap();
        for i in 0..s.gt.len() {
            for j in i + 1..s.gt.len() {
                assert!(!s.gt[i].mask.intersects(&s.gt[j].mask));
            }
        }
    }

    #[test]
    fn impossible_placement_fails() {
        let cfg = SceneConfig {
            width: 12,
            height: 12,
            min_size: 12,
            max_size: 12,
            min_objects: 3,
            max_objects: 3,
            max_overlap: 0.0,
            max_retries: 5,
            ..SceneConfig::default()
        };
        assert!(matches!(gen_scene(&cfg, 1), Err(Error::Generation(_))));
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = SceneConfig {
            width: 200,
            ..SceneConfig::default()
        };
        assert!(gen_scene(&cfg, 0).is_err());
    }
}
