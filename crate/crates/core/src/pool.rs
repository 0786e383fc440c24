//! Per-scene precomputation over a proposal pool.

use serde::{Deserialize, Serialize};

use crate::error::{mismatch, Result};
use crate::geometry::{tight_box, Adjacency, BBox, PixelMask};

/// How two same-class proposals are judged to collide.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlapRule {
    /// Either `|a∩b|/|b|` or `|a∩b|/|a|` above the threshold.
    #[default]
    Symmetric,
    /// Only `|kept∩other|/|other|` is tested.
    OneWay,
}

#[derive(Debug, Clone)]
pub struct PoolContext {
    pub width: usize,
    pub height: usize,
    /// `overlap[i * P + l] = |r_i ∩ r_l| / |r_l|`.
    overlap: Vec<f64>,
    pub boxes: Vec<BBox>,
    /// Neighbour lists with `exp(-I_uv)` weights.
    pub neighbors: Vec<Vec<(usize, f64)>>,
    /// Proposals the conditional side may select (box filtering).
    pub allowed: Vec<bool>,
}

impl PoolContext {
    pub fn new(pool: &[PixelMask], adjacency: &Adjacency) -> Result<Self> {
        let p = pool.len();
        if adjacency.len() != p {
            return Err(mismatch(p, adjacency.len()));
        }
        let (width, height) = pool.first().map_or((0, 0), |m| (m.width(), m.height()));
        let mut overlap = vec![0.0; p * p];
        for i in 0..p {
            pool[i].check_shape(&pool[0])?;
            for l in 0..p {
                let area = pool[l].area();
                if area > 0 {
                    overlap[i * p + l] = pool[i].intersection_area(&pool[l]) as f64 / area as f64;
                }
            }
        }
        let boxes = pool
            .iter()
            .map(|m| tight_box(m).unwrap_or(BBox::new(0, 0, 0, 0)))
            .collect();
        let neighbors = adjacency
            .neighbors
            .iter()
            .zip(&adjacency.weights)
            .map(|(ns, ws)| ns.iter().zip(ws).map(|(&v, &w)| (v, (-w).exp())).collect())
            .collect();
        Ok(Self {
            width,
            height,
            overlap,
            boxes,
            neighbors,
            allowed: vec![true; p],
        })
    }

    /// Restrict selectable proposals to `kept` (indices into the pool).
    pub fn restrict_to(&mut self, kept: &[usize]) {
        self.allowed.iter_mut().for_each(|a| *a = false);
        for &k in kept {
            self.allowed[k] = true;
        }
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn overlap_fraction(&self, i: usize, l: usize) -> f64 {
        self.overlap[i * self.len() + l]
    }

    /// Does keeping `kept` suppress `other`?
    pub fn conflicts(&self, kept: usize, other: usize, t: f64, rule: OverlapRule) -> bool {
        match rule {
            OverlapRule::OneWay => self.overlap_fraction(kept, other) > t,
            OverlapRule::Symmetric => {
                self.overlap_fraction(kept, other) > t || self.overlap_fraction(other, kept) > t
            }
        }
    }
}
