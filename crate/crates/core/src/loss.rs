//! Task loss between two instance labelings: class, box and mask parts.

use serde::{Deserialize, Serialize};

use crate::condnet::InstanceLabeling;
use crate::error::{mismatch, Error, Result};
use crate::geometry::{mask_iou, tight_box, BBox, PixelMask};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub w_cls: f64,
    pub w_box: f64,
    pub w_mask: f64,
    /// Cost of a class disagreement or of an unmatched foreground instance.
    pub mismatch_cost: f64,
    /// Probability clamp for the mask cross entropy.
    pub mask_clamp: f64,
    pub match_iou_floor: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            w_cls: 1.0,
            w_box: 1.0,
            w_mask: 1.0,
            mismatch_cost: 1.0,
            mask_clamp: 1e-3,
            match_iou_floor: 0.1,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if [self.w_cls, self.w_box, self.w_mask, self.mismatch_cost]
            .iter()
            .any(|w| !(*w >= 0.0) || !w.is_finite())
        {
            return Err(Error::InvalidConfig("loss weights must be finite and non-negative".into()));
        }
        if !(self.mask_clamp > 0.0 && self.mask_clamp < 0.5) {
            return Err(Error::InvalidConfig("mask_clamp must lie in (0, 0.5)".into()));
        }
        Ok(())
    }

    /// The same loss with the box term switched off, as used on the
    /// conditional side, which never predicts boxes.
    pub fn conditional(&self) -> Self {
        Self {
            w_box: 0.0,
            ..self.clone()
        }
    }
}

/// An instance with its own box, so box and mask terms can disagree.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub class_id: usize,
    pub mask: PixelMask,
    pub bbox: BBox,
}

impl Instance {
    pub fn from_mask(class_id: usize, mask: PixelMask) -> Result<Self> {
        let bbox = tight_box(&mask)?;
        Ok(Self { class_id, mask, bbox })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct LossParts {
    pub total: f64,
    pub cls: f64,
    pub bbox: f64,
    pub mask: f64,
}

impl LossParts {
    fn add(&mut self, other: LossParts) {
        self.total += other.total;
        self.cls += other.cls;
        self.bbox += other.bbox;
        self.mask += other.mask;
    }

    fn unmatched(cfg: &LossConfig) -> Self {
        Self {
            total: cfg.w_cls * cfg.mismatch_cost,
            cls: cfg.mismatch_cost,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Matching {
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_first: Vec<usize>,
    pub unmatched_second: Vec<usize>,
}

/// Identity pairing over a shared pool: a proposal selected by both
/// labelings pairs with itself.
pub fn match_instances(y1: &InstanceLabeling, y2: &InstanceLabeling) -> Result<Matching> {
    if y1.len() != y2.len() {
        return Err(mismatch(y1.len(), y2.len()));
    }
    let mut m = Matching::default();
    for (u, (&a, &b)) in y1.labels.iter().zip(&y2.labels).enumerate() {
        match (a != 0, b != 0) {
            (true, true) => m.pairs.push((u, u)),
            (true, false) => m.unmatched_first.push(u),
            (false, true) => m.unmatched_second.push(u),
            (false, false) => {}
        }
    }
    Ok(m)
}

/// Greedy matching in descending mask-IoU order; pairs below `floor` are
/// left unmatched. Ties go to the lower index pair.
pub fn match_by_iou(a: &[Instance], b: &[Instance], floor: f64) -> Result<Matching> {
    let mut cand = Vec::new();
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            let iou = mask_iou(&x.mask, &y.mask)?;
            if iou >= floor && iou > 0.0 {
                cand.push((iou, i, j));
            }
        }
    }
    cand.sort_by(|p, q| q.0.total_cmp(&p.0).then((p.1, p.2).cmp(&(q.1, q.2))));
    let (mut ua, mut ub) = (vec![false; a.len()], vec![false; b.len()]);
    let mut m = Matching::default();
    for (_, i, j) in cand {
        if !ua[i] && !ub[j] {
            ua[i] = true;
            ub[j] = true;
            m.pairs.push((i, j));
        }
    }
    m.unmatched_first = (0..a.len()).filter(|&i| !ua[i]).collect();
    m.unmatched_second = (0..b.len()).filter(|&j| !ub[j]).collect();
    Ok(m)
}

fn smooth_l1(x: f64) -> f64 {
    let a = x.abs();
    if a < 1.0 {
        0.5 * x * x
    } else {
        a - 0.5
    }
}

/// Loss of a matched pair.
pub fn pair_loss(a: &Instance, b: &Instance, cfg: &LossConfig) -> Result<LossParts> {
    a.mask.check_shape(&b.mask)?;
    let (w, h) = (a.mask.width(), a.mask.height());
    let cls = if a.class_id == b.class_id { 0.0 } else { cfg.mismatch_cost };
    let (na, nb) = (a.bbox.normalized(w, h), b.bbox.normalized(w, h));
    let bbox: f64 = na.iter().zip(&nb).map(|(x, y)| smooth_l1(x - y)).sum();
    let differ = a.mask.union_area(&b.mask) - a.mask.intersection_area(&b.mask);
    let mask = differ as f64 / a.mask.len() as f64 * -cfg.mask_clamp.ln();
    Ok(LossParts {
        total: cfg.w_cls * cls + cfg.w_box * bbox + cfg.w_mask * mask,
        cls,
        bbox,
        mask,
    })
}

/// Loss between labelings of a shared pool under identity pairing.
pub fn delta(y1: &InstanceLabeling, y2: &InstanceLabeling, pool: &[PixelMask], cfg: &LossConfig) -> Result<LossParts> {
    if y1.len() != pool.len() {
        return Err(mismatch(pool.len(), y1.len()));
    }
    let m = match_instances(y1, y2)?;
    let mut out = LossParts::default();
    for &(u, _) in &m.pairs {
        // Same proposal on both sides: mask and box agree, only the class can differ.
        if y1.labels[u] != y2.labels[u] {
            out.add(LossParts {
                total: cfg.w_cls * cfg.mismatch_cost,
                cls: cfg.mismatch_cost,
                ..Default::default()
            });
        }
    }
    for _ in m.unmatched_first.iter().chain(&m.unmatched_second) {
        out.add(LossParts::unmatched(cfg));
    }
    Ok(out)
}

/// Loss between two instance lists on possibly different supports.
pub fn delta_instances(a: &[Instance], b: &[Instance], cfg: &LossConfig) -> Result<LossParts> {
    let m = match_by_iou(a, b, cfg.match_iou_floor)?;
    let mut out = LossParts::default();
    for &(i, j) in &m.pairs {
        out.add(pair_loss(&a[i], &b[j], cfg)?);
    }
    for _ in m.unmatched_first.iter().chain(&m.unmatched_second) {
        out.add(LossParts::unmatched(cfg));
    }
    Ok(out)
}

/// Contribution of proposal `u` labeled `c` against label `c_ref` under
/// identity pairing: `delta` is the sum of these over proposals.
pub fn proposal_delta(c: usize, c_ref: usize, cfg: &LossConfig) -> f64 {
    if c == c_ref {
        0.0
    } else {
        cfg.w_cls * cfg.mismatch_cost
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pool(n: usize) -> Vec<PixelMask> {
        (0..n as i64).map(|i| PixelMask::rect(3 * n, 3, 3 * i, 0, 3 * i + 1, 1)).collect()
    }

    #[test]
    fn identity_pairing() {
        let y: InstanceLabeling = vec![1, 0, 2].into();
        let m = match_instances(&y, &y).unwrap();
        assert_eq!(m.pairs, vec![(0, 0), (2, 2)]);
        assert!(m.unmatched_first.is_empty() && m.unmatched_second.is_empty());
        let m = match_instances(&vec![1, 0].into(), &vec![0, 0].into()).unwrap();
        assert_eq!(m.unmatched_first, vec![0]);
    }

    #[test]
    fn greedy_iou_matching() {
        let w = 10;
        let target = Instance::from_mask(1, PixelMask::rect(w, 1, 0, 0, 9, 0)).unwrap();
        let p8 = Instance::from_mask(1, PixelMask::rect(w, 1, 0, 0, 7, 0)).unwrap();
        let p6 = Instance::from_mask(1, PixelMask::rect(w, 1, 0, 0, 5, 0)).unwrap();
        let m = match_by_iou(&[p6, p8], &[target], 0.1).unwrap();
        assert_eq!(m.pairs, vec![(1, 0)]);
        assert_eq!(m.unmatched_first, vec![0]);
    }

    #[test]
    fn zero_on_self_and_symmetric() {
        let p = pool(4);
        let cfg = LossConfig::default();
        let a: InstanceLabeling = vec![1, 0, 2, 2].into();
        let b: InstanceLabeling = vec![2, 1, 0, 2].into();
        assert_eq!(delta(&a, &a, &p, &cfg).unwrap().total, 0.0);
        let ab = delta(&a, &b, &p, &cfg).unwrap();
        assert_eq!(ab, delta(&b, &a, &p, &cfg).unwrap());
        assert_eq!(ab.total, 3.0);
        let per: f64 = (0..4).map(|u| proposal_delta(a.labels[u], b.labels[u], &cfg)).sum();
        assert_eq!(per, ab.total);
    }

    #[test]
    fn box_part_smooth_l1() {
        let w = 10;
        let mask = PixelMask::rect(w, w, 0, 0, 4, 4);
        let a = Instance {
            class_id: 1,
            mask: mask.clone(),
            bbox: BBox::new(0, 0, 4, 4),
        };
        let b = Instance {
            bbox: BBox::new(0, 0, 9, 4),
            ..a.clone()
        };
        let l = pair_loss(&a, &b, &LossConfig::default()).unwrap();
        assert!((l.bbox - 0.125).abs() < 1e-12);
        assert_eq!((l.cls, l.mask), (0.0, 0.0));
        let cond = pair_loss(&a, &b, &LossConfig::default().conditional()).unwrap();
        assert_eq!(cond.total, 0.0);
    }

    #[test]
    fn mask_part_half_disagreement() {
        let w = 4;
        let a = Instance::from_mask(1, PixelMask::rect(w, w, 0, 0, 3, 1)).unwrap();
        let mut b = Instance::from_mask(1, PixelMask::rect(w, w, 0, 2, 3, 3)).unwrap();
        b.bbox = a.bbox;
        let l = pair_loss(&a, &b, &LossConfig::default()).unwrap();
        // Both masks cover half the image and are disjoint: every pixel disagrees.
        assert!((l.mask - 6.907755278982137).abs() < 1e-9);
        let c = Instance::from_mask(1, PixelMask::rect(w, w, 0, 0, 3, 3)).unwrap();
        let mut a2 = a.clone();
        a2.bbox = c.bbox;
        let l = pair_loss(&a2, &c, &LossConfig::default()).unwrap();
        assert!((l.mask - 3.453877639491069).abs() < 1e-9);
    }

    #[test]
    fn config_validation() {
        assert!(LossConfig::default().validate().is_ok());
        let bad = LossConfig {
            mask_clamp: 0.7,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let neg = LossConfig {
            w_box: -1.0,
            ..Default::default()
        };
        assert!(neg.validate().is_err());
    }
}
