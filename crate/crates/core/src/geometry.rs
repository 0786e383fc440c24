//! Binary masks, boxes, edge maps and the proposal adjacency structure.
//!
//! Masks are stored row-major as packed bits. Pixel `(x, y)` lives at flat
//! index `y * width + x`. Bits past `width * height` in the last word are
//! always zero so word-level popcounts are exact.

use serde::{Deserialize, Serialize};

use crate::error::{mismatch, Error, Result};

const WORD: usize = 64;

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct PixelMask {
    width: usize,
    height: usize,
    words: Vec<u64>,
}

impl std::fmt::Debug for PixelMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PixelMask")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("area", &self.area())
            .finish()
    }
}

impl PixelMask {
    pub fn new(width: usize, height: usize) -> Self {
        assert!(width > 0 && height > 0, "mask dimensions must be positive");
        let n = width * height;
        Self {
            width,
            height,
            words: vec![0; n.div_ceil(WORD)],
        }
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self::from_fn(width, height, |_, _| true)
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut m = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                if f(x, y) {
                    m.set(x, y, true);
                }
            }
        }
        m
    }

    /// Axis-aligned filled rectangle, inclusive corners, clipped to the image.
    pub fn rect(width: usize, height: usize, x0: i64, y0: i64, x1: i64, y1: i64) -> Self {
        Self::from_fn(width, height, |x, y| {
            let (x, y) = (x as i64, y as i64);
            x >= x0 && x <= x1 && y >= y0 && y <= y1
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        debug_assert!(x < self.width && y < self.height);
        let i = y * self.width + x;
        self.words[i / WORD] >> (i % WORD) & 1 == 1
    }

    /// Like [`get`](Self::get) but returns `false` outside the image.
    pub fn get_signed(&self, x: i64, y: i64) -> bool {
        x >= 0
            && y >= 0
            && (x as usize) < self.width
            && (y as usize) < self.height
            && self.get(x as usize, y as usize)
    }

    pub fn set(&mut self, x: usize, y: usize, on: bool) {
        debug_assert!(x < self.width && y < self.height);
        let i = y * self.width + x;
        if on {
            self.words[i / WORD] |= 1 << (i % WORD);
        } else {
            self.words[i / WORD] &= !(1 << (i % WORD));
        }
    }

    pub fn area(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn same_shape(&self, other: &PixelMask) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub(crate) fn check_shape(&self, other: &PixelMask) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(mismatch(
                format!("{}x{}", self.width, self.height),
                format!("{}x{}", other.width, other.height),
            ))
        }
    }

    /// Flat indices of set pixels, ascending.
    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| {
            let mut bits = w;
            std::iter::from_fn(move || {
                if bits == 0 {
                    None
                } else {
                    let b = bits.trailing_zeros() as usize;
                    bits &= bits - 1;
                    Some(wi * WORD + b)
                }
            })
        })
    }

    /// `(x, y)` coordinates of set pixels in row-major order.
    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.indices().map(move |i| (i % w, i / w))
    }

    pub fn intersection_area(&self, other: &PixelMask) -> usize {
        debug_assert!(self.same_shape(other));
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a & b).count_ones() as usize)
            .sum()
    }

    pub fn union_area(&self, other: &PixelMask) -> usize {
        debug_assert!(self.same_shape(other));
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a | b).count_ones() as usize)
            .sum()
    }

    pub fn intersects(&self, other: &PixelMask) -> bool {
        self.words.iter().zip(&other.words).any(|(a, b)| a & b != 0)
    }

    pub fn is_subset_of(&self, other: &PixelMask) -> bool {
        self.words.iter().zip(&other.words).all(|(a, b)| a & !b == 0)
    }

    fn zip_with(&self, other: &PixelMask, f: impl Fn(u64, u64) -> u64) -> PixelMask {
        debug_assert!(self.same_shape(other));
        PixelMask {
            width: self.width,
            height: self.height,
            words: self
                .words
                .iter()
                .zip(&other.words)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn and(&self, other: &PixelMask) -> PixelMask {
        self.zip_with(other, |a, b| a & b)
    }

    pub fn or(&self, other: &PixelMask) -> PixelMask {
        self.zip_with(other, |a, b| a | b)
    }

    pub fn and_not(&self, other: &PixelMask) -> PixelMask {
        self.zip_with(other, |a, b| a & !b)
    }

    /// Grow by `radius` steps of 4-neighbourhood dilation, clipped to the image.
    pub fn dilate(&self, radius: usize) -> PixelMask {
        let mut cur = self.clone();
        for _ in 0..radius {
            let mut next = cur.clone();
            for (x, y) in cur.pixels() {
                if x > 0 {
                    next.set(x - 1, y, true);
                }
                if x + 1 < self.width {
                    next.set(x + 1, y, true);
                }
                if y > 0 {
                    next.set(x, y - 1, true);
                }
                if y + 1 < self.height {
                    next.set(x, y + 1, true);
                }
            }
            cur = next;
        }
        cur
    }

    /// Shrink by `radius` steps of 4-neighbourhood erosion. Pixels outside
    /// the image count as background.
    pub fn erode(&self, radius: usize) -> PixelMask {
        let mut cur = self.clone();
        for _ in 0..radius {
            let next = PixelMask::from_fn(self.width, self.height, |x, y| {
                let (xi, yi) = (x as i64, y as i64);
                cur.get(x, y)
                    && cur.get_signed(xi - 1, yi)
                    && cur.get_signed(xi + 1, yi)
                    && cur.get_signed(xi, yi - 1)
                    && cur.get_signed(xi, yi + 1)
            });
            cur = next;
        }
        cur
    }

    /// Translate by `(dx, dy)`; pixels leaving the image are dropped.
    pub fn shift(&self, dx: i64, dy: i64) -> PixelMask {
        let mut out = PixelMask::new(self.width, self.height);
        for (x, y) in self.pixels() {
            let nx = x as i64 + dx;
            let ny = y as i64 + dy;
            if nx >= 0 && ny >= 0 && (nx as usize) < self.width && (ny as usize) < self.height {
                out.set(nx as usize, ny as usize, true);
            }
        }
        out
    }

    /// Pixels outside the mask that are 4-adjacent to it.
    pub fn outer_contour(&self) -> PixelMask {
        self.dilate(1).and_not(self)
    }

    /// Pixels inside the mask with at least one 4-neighbour outside it
    /// (the image border counts as outside).
    pub fn inner_contour(&self) -> PixelMask {
        self.and_not(&self.erode(1))
    }

    /// Row-major run lengths, starting with a (possibly zero) run of unset pixels.
    pub fn to_rle(&self) -> Vec<u32> {
        let mut counts = Vec::new();
        let mut current = false;
        let mut run = 0u32;
        for i in 0..self.len() {
            let v = self.words[i / WORD] >> (i % WORD) & 1 == 1;
            if v != current {
                counts.push(run);
                run = 0;
                current = v;
            }
            run += 1;
        }
        counts.push(run);
        counts
    }

    pub fn from_rle(width: usize, height: usize, counts: &[u32]) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Format("mask with zero dimension".into()));
        }
        let total: u64 = counts.iter().map(|&c| c as u64).sum();
        if total != (width * height) as u64 {
            return Err(Error::Format(format!(
                "run lengths sum to {total}, expected {}",
                width * height
            )));
        }
        let mut m = PixelMask::new(width, height);
        let mut idx = 0usize;
        let mut on = false;
        for &c in counts {
            if on {
                for i in idx..idx + c as usize {
                    m.words[i / WORD] |= 1 << (i % WORD);
                }
            }
            idx += c as usize;
            on = !on;
        }
        Ok(m)
    }
}

/// Pixel-aligned box with inclusive corners.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: usize,
    pub y_min: usize,
    pub x_max: usize,
    pub y_max: usize,
}

impl BBox {
    pub fn new(x_min: usize, y_min: usize, x_max: usize, y_max: usize) -> Self {
        assert!(x_min <= x_max && y_min <= y_max, "inverted box");
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    pub fn area(&self) -> usize {
        (self.x_max - self.x_min + 1) * (self.y_max - self.y_min + 1)
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }

    /// Coordinates scaled to `[0, 1]` by the image size.
    pub fn normalized(&self, width: usize, height: usize) -> [f64; 4] {
        let (w, h) = (width as f64, height as f64);
        [
            self.x_min as f64 / w,
            self.y_min as f64 / h,
            self.x_max as f64 / w,
            self.y_max as f64 / h,
        ]
    }
}

/// IoU between inclusive pixel boxes.
pub fn box_iou(a: &BBox, b: &BBox) -> f64 {
    let ix0 = a.x_min.max(b.x_min);
    let iy0 = a.y_min.max(b.y_min);
    let ix1 = a.x_max.min(b.x_max);
    let iy1 = a.y_max.min(b.y_max);
    if ix0 > ix1 || iy0 > iy1 {
        return 0.0;
    }
    let inter = ((ix1 - ix0 + 1) * (iy1 - iy0 + 1)) as f64;
    inter / (a.area() as f64 + b.area() as f64 - inter)
}

/// Per-pixel edge strength in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f32>,
}

impl EdgeMap {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            values: vec![0.0; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.values[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.values[y * self.width + x] = v.clamp(0.0, 1.0);
    }

    /// Sum of edge values over the set pixels of `mask`.
    pub fn sum_over(&self, mask: &PixelMask) -> f64 {
        mask.indices().map(|i| self.values[i] as f64).sum()
    }

    fn check_mask(&self, m: &PixelMask) -> Result<()> {
        if m.width() == self.width && m.height() == self.height {
            Ok(())
        } else {
            Err(mismatch(
                format!("{}x{}", self.width, self.height),
                format!("{}x{}", m.width(), m.height()),
            ))
        }
    }
}

/// Symmetric neighbourhood over proposals with non-negative edge weights `I(u, v)`.
///
/// `neighbors[u]` is sorted ascending and `weights[u][i]` is the weight of the
/// edge to `neighbors[u][i]`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Adjacency {
    pub neighbors: Vec<Vec<usize>>,
    pub weights: Vec<Vec<f64>>,
}

impl Adjacency {
    pub fn empty(n: usize) -> Self {
        Self {
            neighbors: vec![Vec::new(); n],
            weights: vec![Vec::new(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn edge_weight(&self, u: usize, v: usize) -> Option<f64> {
        let i = self.neighbors.get(u)?.binary_search(&v).ok()?;
        Some(self.weights[u][i])
    }

    pub fn num_edges(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Add an undirected edge; used when assembling adjacency by hand.
    pub fn connect(&mut self, u: usize, v: usize, weight: f64) {
        assert_ne!(u, v, "self loops are not allowed");
        for (a, b) in [(u, v), (v, u)] {
            match self.neighbors[a].binary_search(&b) {
                Ok(i) => self.weights[a][i] = weight,
                Err(i) => {
                    self.neighbors[a].insert(i, b);
                    self.weights[a].insert(i, weight);
                }
            }
        }
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.len()).all(|u| {
            self.neighbors[u]
                .iter()
                .zip(&self.weights[u])
                .all(|(&v, &w)| v != u && self.edge_weight(v, u) == Some(w))
        })
    }
}

/// How the contact-band edge values are aggregated into `I(u, v)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeAggregation {
    #[default]
    Sum,
    Mean,
}

pub fn mask_iou(a: &PixelMask, b: &PixelMask) -> Result<f64> {
    a.check_shape(b)?;
    let union = a.union_area(b);
    if union == 0 {
        return Ok(0.0);
    }
    Ok(a.intersection_area(b) as f64 / union as f64)
}

/// `|r_i ∩ r_l| / |r_l|`.
pub fn overlap_fraction(r_i: &PixelMask, r_l: &PixelMask) -> Result<f64> {
    r_i.check_shape(r_l)?;
    let denom = r_l.area();
    if denom == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(r_i.intersection_area(r_l) as f64 / denom as f64)
}

pub fn tight_box(m: &PixelMask) -> Result<BBox> {
    let mut it = m.pixels();
    let (x0, y0) = it.next().ok_or(Error::EmptyMask)?;
    let mut b = BBox::new(x0, y0, x0, y0);
    for (x, y) in it {
        b.x_min = b.x_min.min(x);
        b.x_max = b.x_max.max(x);
        b.y_min = b.y_min.min(y);
        b.y_max = b.y_max.max(y);
    }
    Ok(b)
}

pub fn build_adjacency(pool: &[PixelMask], edges: &EdgeMap, dilation: usize) -> Result<Adjacency> {
    build_adjacency_with(pool, edges, dilation, EdgeAggregation::Sum)
}

/// Proposals `u != v` are neighbours when `dilate(u) ∩ v` is non-empty. The
/// edge weight aggregates the edge map over the contact band
/// `(dilate(u) ∩ v) ∪ (dilate(v) ∩ u)`.
pub fn build_adjacency_with(
    pool: &[PixelMask],
    edges: &EdgeMap,
    dilation: usize,
    aggregation: EdgeAggregation,
) -> Result<Adjacency> {
    if dilation == 0 {
        return Err(Error::InvalidConfig("dilation must be at least 1".into()));
    }
    for m in pool {
        edges.check_mask(m)?;
    }
    let dilated: Vec<PixelMask> = pool.iter().map(|m| m.dilate(dilation)).collect();
    let mut adj = Adjacency::empty(pool.len());
    for u in 0..pool.len() {
        for v in u + 1..pool.len() {
            let a = dilated[u].and(&pool[v]);
            let b = dilated[v].and(&pool[u]);
            if a.is_empty() && b.is_empty() {
                continue;
            }
            let band = a.or(&b);
            let sum = edges.sum_over(&band);
            let weight = match aggregation {
                EdgeAggregation::Sum => sum,
                EdgeAggregation::Mean => sum / band.area() as f64,
            };
            adj.neighbors[u].push(v);
            adj.weights[u].push(weight);
            adj.neighbors[v].push(u);
            adj.weights[v].push(weight);
        }
    }
    // Lists were filled in ascending v for u, but entries pushed from smaller
    // u into neighbors[v] are also ascending; keep the invariant explicit.
    for u in 0..adj.len() {
        let mut pairs: Vec<(usize, f64)> = adj.neighbors[u]
            .iter()
            .copied()
            .zip(adj.weights[u].iter().copied())
            .collect();
        pairs.sort_by_key(|p| p.0);
        adj.neighbors[u] = pairs.iter().map(|p| p.0).collect();
        adj.weights[u] = pairs.iter().map(|p| p.1).collect();
    }
    Ok(adj)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cols(w: usize, h: usize, x0: usize, x1: usize) -> PixelMask {
        PixelMask::from_fn(w, h, |x, _| x >= x0 && x <= x1)
    }

    fn rows(w: usize, h: usize, y0: usize, y1: usize) -> PixelMask {
        PixelMask::from_fn(w, h, |_, y| y >= y0 && y <= y1)
    }

    #[test]
    fn iou_cases() {
        let a = cols(4, 4, 0, 1);
        let b = rows(4, 4, 0, 1);
        assert_eq!(mask_iou(&a, &a).unwrap(), 1.0);
        assert_eq!(mask_iou(&a, &cols(4, 4, 2, 3)).unwrap(), 0.0);
        assert!((mask_iou(&a, &b).unwrap() - 4.0 / 12.0).abs() < 1e-12);
        let empty = PixelMask::new(4, 4);
        assert_eq!(mask_iou(&empty, &empty).unwrap(), 0.0);
        assert!(mask_iou(&a, &PixelMask::new(5, 4)).is_err());
    }

    #[test]
    fn overlap_fraction_cases() {
        let a = cols(8, 8, 0, 3);
        assert_eq!(overlap_fraction(&a, &a).unwrap(), 1.0);
        let inner = PixelMask::rect(8, 8, 1, 1, 2, 2);
        assert_eq!(overlap_fraction(&a, &inner).unwrap(), 1.0);
        let half = cols(8, 8, 2, 5);
        assert_eq!(overlap_fraction(&a, &half).unwrap(), 0.5);
        assert!(matches!(
            overlap_fraction(&a, &PixelMask::new(8, 8)),
            Err(Error::EmptyMask)
        ));
    }

    #[test]
    fn tight_box_cases() {
        let mut m = PixelMask::new(8, 8);
        m.set(2, 3, true);
        assert_eq!(tight_box(&m).unwrap(), BBox::new(2, 3, 2, 3));
        assert_eq!(tight_box(&PixelMask::full(8, 8)).unwrap(), BBox::new(0, 0, 7, 7));
        // L shape: vertical bar at x=2 over rows 1..=4, foot along row 4 to x=5.
        let l = PixelMask::from_fn(8, 8, |x, y| (x == 2 && (1..=4).contains(&y)) || (y == 4 && (2..=5).contains(&x)));
        assert_eq!(tight_box(&l).unwrap(), BBox::new(2, 1, 5, 4));
        assert!(tight_box(&PixelMask::new(3, 3)).is_err());
    }

    #[test]
    fn box_iou_cases() {
        let a = BBox::new(0, 0, 3, 3);
        assert!((box_iou(&a, &a) - 1.0).abs() < 1e-12);
        assert_eq!(box_iou(&a, &BBox::new(5, 5, 6, 6)), 0.0);
        // 4x4 vs 4x2 inside it: 8 / 16.
        assert!((box_iou(&a, &BBox::new(0, 0, 3, 1)) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn adjacency_separated_masks_are_not_neighbors() {
        let a = cols(10, 4, 0, 2);
        let b = cols(10, 4, 5, 9);
        let adj = build_adjacency(&[a, b], &EdgeMap::zeros(10, 4), 1).unwrap();
        assert_eq!(adj.num_edges(), 0);
    }

    #[test]
    fn adjacency_abutting_zero_edges() {
        let a = cols(6, 3, 0, 2);
        let b = cols(6, 3, 3, 5);
        let adj = build_adjacency(&[a, b], &EdgeMap::zeros(6, 3), 1).unwrap();
        assert_eq!(adj.neighbors[0], vec![1]);
        assert_eq!(adj.edge_weight(0, 1), Some(0.0));
        assert!(adj.is_symmetric());
    }

    #[test]
    fn adjacency_band_sum() {
        // Two 3-row masks touching along x=2|x=3: the band is the 3 pixels of
        // column 2 plus the 3 pixels of column 3.
        let a = cols(6, 3, 0, 2);
        let b = cols(6, 3, 3, 5);
        let mut edges = EdgeMap::zeros(6, 3);
        for y in 0..3 {
            edges.set(2, y, 1.0);
            edges.set(3, y, 1.0);
            edges.set(0, y, 1.0); // outside the band
        }
        let adj = build_adjacency(&[a.clone(), b.clone()], &edges, 1).unwrap();
        assert_eq!(adj.edge_weight(1, 0), Some(6.0));
        let mean = build_adjacency_with(&[a, b], &edges, 1, EdgeAggregation::Mean).unwrap();
        assert_eq!(mean.edge_weight(0, 1), Some(1.0));
        assert!(build_adjacency(&[], &edges, 0).is_err());
    }

    #[test]
    fn rle_roundtrip_and_errors() {
        let m = PixelMask::from_fn(7, 5, |x, y| (x + y) % 3 == 0);
        let rle = m.to_rle();
        assert_eq!(PixelMask::from_rle(7, 5, &rle).unwrap(), m);
        assert_eq!(PixelMask::full(3, 2).to_rle(), vec![0, 6]);
        assert!(PixelMask::from_rle(7, 5, &[3, 4]).is_err());
    }

    #[test]
    fn morphology() {
        let m = PixelMask::rect(9, 9, 3, 3, 5, 5);
        assert_eq!(m.dilate(1).area(), 9 + 12);
        assert_eq!(m.erode(1).area(), 1);
        assert_eq!(m.outer_contour().area(), 12);
        assert_eq!(m.inner_contour().area(), 8);
        assert_eq!(m.shift(10, 0).area(), 0);
        assert_eq!(m.shift(1, -1).area(), 9);
    }
}
