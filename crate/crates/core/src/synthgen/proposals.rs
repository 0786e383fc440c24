use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::scene::grow_region;
use super::{ClassBox, SceneRecord};
use crate::error::{Error, Result};
use crate::geometry::{box_iou, build_adjacency_with, tight_box, Adjacency, EdgeAggregation, EdgeMap, PixelMask};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProposalConfig {
    /// Keep every ground-truth mask in the pool.
    pub include_exact: bool,
    /// Add eroded, dilated and shifted variants of each instance.
    pub perturb: bool,
    /// Also add halves and grown parts. These lie strictly inside the
    /// instance, so no edge separates them from it or from each other.
    pub crops: bool,
    pub variants_per_object: usize,
    pub max_shift: i64,
    pub distractors: usize,
    /// Keep only proposals touching a seed mask in at least one pixel.
    pub seed_filter: bool,
    pub target_size: usize,
    pub min_area: usize,
    pub dilation: usize,
    pub edge_aggregation: EdgeAggregation,
}

impl Default for ProposalConfig {
    fn default() -> Self {
        Self {
            include_exact: true,
            perturb: true,
            crops: false,
            variants_per_object: 8,
            max_shift: 3,
            distractors: 12,
            seed_filter: true,
            target_size: 24,
            min_area: 4,
            dilation: 1,
            edge_aggregation: EdgeAggregation::Sum,
        }
    }
}

impl ProposalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.target_size == 0 || self.target_size > 64 {
            return Err(Error::InvalidConfig("target_size must be in 1..=64".into()));
        }
        if self.dilation == 0 {
            return Err(Error::InvalidConfig("dilation must be at least 1".into()));
        }
        Ok(())
    }
}

fn variants(m: &PixelMask, cfg: &ProposalConfig, rng: &mut rand_chacha::ChaCha8Rng) -> Vec<PixelMask> {
    let area = m.area();
    let mut out = vec![
        m.erode(1),
        m.erode(2),
        m.dilate(1),
        m.dilate(2),
    ];
    for _ in 0..2 {
        let mut d = || {
            let s = rng.gen_range(1..=cfg.max_shift.max(1));
            if rng.gen_bool(0.5) {
                s
            } else {
                -s
            }
        };
        let (dx, dy) = (d(), d());
        out.push(m.shift(dx, dy));
    }
    if !cfg.crops {
        out.shuffle(rng);
        out.truncate(cfg.variants_per_object);
        return out;
    }
    // Crops: halves split through the centroid, plus a few grown parts.
    let n = area.max(1) as f64;
    let cx = m.pixels().map(|p| p.0 as f64).sum::<f64>() / n;
    let cy = m.pixels().map(|p| p.1 as f64).sum::<f64>() / n;
    let (w, h) = (m.width(), m.height());
    let left = PixelMask::from_fn(w, h, |x, _| (x as f64) < cx);
    let top = PixelMask::from_fn(w, h, |_, y| (y as f64) < cy);
    out.push(m.and(&left));
    out.push(m.and_not(&left));
    out.push(m.and(&top));
    out.push(m.and_not(&top));
    for _ in 0..2 {
        let f = rng.gen_range(0.2..=0.5);
        out.push(grow_region(m, ((f * n).round() as usize).max(1), rng));
    }
    out.shuffle(rng);
    out.truncate(cfg.variants_per_object);
    out
}

fn distractor(w: usize, h: usize, rng: &mut rand_chacha::ChaCha8Rng) -> PixelMask {
    let bw = rng.gen_range(4..=(w / 3).max(5)) as i64;
    let bh = rng.gen_range(4..=(h / 3).max(5)) as i64;
    let x0 = rng.gen_range(0..=(w as i64 - bw).max(0));
    let y0 = rng.gen_range(0..=(h as i64 - bh).max(0));
    if rng.gen_bool(0.5) {
        PixelMask::rect(w, h, x0, y0, x0 + bw - 1, y0 + bh - 1)
    } else {
        let cx = x0 as f64 + (bw as f64 - 1.0) / 2.0;
        let cy = y0 as f64 + (bh as f64 - 1.0) / 2.0;
        let (a, b) = (bw as f64 / 2.0, bh as f64 / 2.0);
        PixelMask::from_fn(w, h, |x, y| {
            let dx = (x as f64 - cx) / a;
            let dy = (y as f64 - cy) / b;
            dx * dx + dy * dy <= 1.0
        })
    }
}

/// Build the proposal pool for a generated scene.
///
/// The pool holds the exact instance masks, perturbed variants and
/// distractor blobs, optionally filtered to proposals touching a seed, then
/// capped at `target_size` (exact masks are always kept) and shuffled.
pub fn gen_proposals(
    scene: &SceneRecord,
    cfg: &ProposalConfig,
    seed: u64,
) -> Result<(Vec<PixelMask>, Adjacency)> {
    cfg.validate()?;
    let mut rng = rng::stream(&[seed, 0xB00_5EED]);
    let (w, h) = (scene.width(), scene.height());

    let exact: Vec<PixelMask> = if cfg.include_exact {
        scene.gt.iter().map(|g| g.mask.clone()).collect()
    } else {
        Vec::new()
    };
    let mut extra = Vec::new();
    if cfg.perturb {
        for g in &scene.gt {
            extra.extend(variants(&g.mask, cfg, &mut rng));
        }
    }
    for _ in 0..cfg.distractors {
        extra.push(distractor(w, h, &mut rng));
    }

    let mut seen: HashSet<PixelMask> = exact.iter().cloned().collect();
    let keep = |m: &PixelMask| {
        m.area() >= cfg.min_area
            && (!cfg.seed_filter || scene.seeds.iter().any(|s| s.mask.intersects(m)))
    };
    let mut rest: Vec<PixelMask> = Vec::new();
    for m in extra {
        if keep(&m) && seen.insert(m.clone()) {
            rest.push(m);
        }
    }
    rest.shuffle(&mut rng);
    let room = cfg.target_size.saturating_sub(exact.len());
    rest.truncate(room);

    let mut pool: Vec<PixelMask> = exact.into_iter().filter(|m| !m.is_empty()).collect();
    pool.truncate(cfg.target_size.max(scene.gt.len()));
    pool.extend(rest);
    pool.shuffle(&mut rng);
    let adjacency = build_adjacency_with(&pool, &scene.edges, cfg.dilation, cfg.edge_aggregation)?;
    Ok((pool, adjacency))
}

/// Survivors of box filtering, with adjacency rebuilt over them.
#[derive(Debug, Clone)]
pub struct FilteredPool {
    pub pool: Vec<PixelMask>,
    pub adjacency: Adjacency,
    /// Index of each survivor in the input pool.
    pub kept: Vec<usize>,
}

/// Keep proposals whose tight box reaches `min_iou` box-IoU with some annotated box.
pub fn filter_by_boxes(
    pool: &[PixelMask],
    boxes: &[ClassBox],
    min_iou: f64,
    edges: &EdgeMap,
    dilation: usize,
) -> Result<FilteredPool> {
    if !(min_iou > 0.0 && min_iou <= 1.0) {
        return Err(Error::InvalidConfig("min_iou must lie in (0, 1]".into()));
    }
    let mut kept = Vec::new();
    for (i, m) in pool.iter().enumerate() {
        let Ok(b) = tight_box(m) else { continue };
        if boxes.iter().any(|cb| box_iou(&b, &cb.bbox) >= min_iou) {
            kept.push(i);
        }
    }
    if kept.is_empty() {
        return Err(Error::EmptyPool);
    }
    let survivors: Vec<PixelMask> = kept.iter().map(|&i| pool[i].clone()).collect();
    let adjacency = build_adjacency_with(&survivors, edges, dilation, EdgeAggregation::Sum)?;
    Ok(FilteredPool {
        pool: survivors,
        adjacency,
        kept,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BBox;
    use crate::synthgen::{gen_scene, SceneConfig};

    fn scene(seed: u64) -> SceneRecord {
        gen_scene(&SceneConfig::default(), seed).unwrap()
    }

    #[test]
    fn bare_pool_is_ground_truth() {
        let s = scene(4);
        let cfg = ProposalConfig {
            perturb: false,
            distractors: 0,
            ..ProposalConfig::default()
        };
        let (pool, adj) = gen_proposals(&s, &cfg, 4).unwrap();
        let got: HashSet<_> = pool.iter().cloned().collect();
        let want: HashSet<_> = s.gt.iter().map(|g| g.mask.clone()).collect();
        assert_eq!(got, want);
        assert_eq!(adj.len(), pool.len());
    }

    #[test]
    fn seed_filter_postcondition() {
        for seed in 0..30 {
            let s = scene(seed);
            let (pool, adj) = gen_proposals(&s, &ProposalConfig::default(), seed).unwrap();
            assert!(adj.is_symmetric());
            for m in &pool {
                assert!(s.seeds.iter().any(|sd| sd.mask.intersects(m)));
            }
        }
    }

    #[test]
    fn pool_size_bounds() {
        let cfg = SceneConfig {
            min_objects: 2,
            max_objects: 2,
            ..SceneConfig::default()
        };
        let pcfg = ProposalConfig {
            target_size: 20,
            ..ProposalConfig::default()
        };
        for seed in 0..20 {
            let s = gen_scene(&cfg, seed).unwrap();
            let (pool, _) = gen_proposals(&s, &pcfg, seed).unwrap();
            assert!(pool.len() <= 20 && pool.len() >= 2, "{}", pool.len());
        }
    }

    #[test]
    fn box_filter_cases() {
        let s = scene(9);
        let boxes = s.annotation.boxes.clone().unwrap();
        let gt: Vec<PixelMask> = s.gt.iter().map(|g| g.mask.clone()).collect();
        let f = filter_by_boxes(&gt, &boxes, 1.0, &s.edges, 1).unwrap();
        assert_eq!(f.kept, (0..gt.len()).collect::<Vec<_>>());

        let w = 20;
        let e = EdgeMap::zeros(w, w);
        let b = [ClassBox {
            class_id: 1,
            bbox: BBox::new(0, 0, 9, 9),
        }];
        let far = PixelMask::rect(w, w, 15, 15, 19, 19);
        // 10x6 box inside the 10x10 one: IoU 0.6.
        let partial = PixelMask::rect(w, w, 0, 0, 9, 5);
        let f = filter_by_boxes(&[far.clone(), partial], &b, 0.5, &e, 1).unwrap();
        assert_eq!(f.kept, vec![1]);
        assert!(matches!(
            filter_by_boxes(&[far], &b, 0.5, &e, 1),
            Err(Error::EmptyPool)
        ));
    }
}
