//! Mask AP / mAP^r and the ablation harness.

use serde::{Deserialize, Serialize};

use crate::condnet::TermMode;
use crate::error::Result;
use crate::geometry::mask_iou;
use crate::prednet::{decode, predict, InstancePrediction, PredParams, DEFAULT_SCORE_THRESH};
use crate::scorer::scene_features;
use crate::synthgen::{GroundTruthInstance, SceneRecord};
use crate::train::{fit, FitConfig};

pub const THRESHOLDS: [f64; 4] = [0.25, 0.5, 0.7, 0.75];
/// Thresholds reported by the ablation table.
pub const ABLATION_THRESHOLDS: [f64; 3] = [0.25, 0.5, 0.75];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    pub score_thresh: f64,
    pub nms_t: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            score_thresh: DEFAULT_SCORE_THRESH,
            nms_t: 0.5,
        }
    }
}

/// Predictions and ground truth of one image.
#[derive(Debug, Clone, Copy)]
pub struct SceneEval<'a> {
    pub preds: &'a [InstancePrediction],
    pub gts: &'a [GroundTruthInstance],
}

/// AP of one class over a set of images, or `None` when the class has no
/// ground-truth instance. Predictions are matched in descending confidence
/// (ties by image, then list order) to the unmatched ground truth of highest
/// IoU; the area under the all-point interpolated PR curve is returned.
pub fn average_precision(scenes: &[SceneEval<'_>], class_id: usize, iou_thresh: f64) -> Result<Option<f64>> {
    let n_gt: usize = scenes
        .iter()
        .map(|s| s.gts.iter().filter(|g| g.class_id == class_id).count())
        .sum();
    if n_gt == 0 {
        return Ok(None);
    }
    let mut ranked: Vec<(f64, usize, usize)> = Vec::new();
    for (si, s) in scenes.iter().enumerate() {
        for (pi, p) in s.preds.iter().enumerate() {
            if p.class_id == class_id {
                ranked.push((p.confidence, si, pi));
            }
        }
    }
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    let mut used: Vec<Vec<bool>> = scenes.iter().map(|s| vec![false; s.gts.len()]).collect();
    let mut hits = Vec::with_capacity(ranked.len());
    for &(_, si, pi) in &ranked {
        let p = &scenes[si].preds[pi];
        let mut best = None::<(f64, usize)>;
        for (gi, g) in scenes[si].gts.iter().enumerate() {
            if g.class_id != class_id || used[si][gi] {
                continue;
            }
            let iou = mask_iou(&p.mask, &g.mask)?;
            if best.map_or(true, |b| iou > b.0) {
                best = Some((iou, gi));
            }
        }
        let hit = match best {
            Some((iou, gi)) if iou >= iou_thresh => {
                used[si][gi] = true;
                true
            }
            _ => false,
        };
        hits.push(hit);
    }
    Ok(Some(pr_area(&hits, n_gt)))
}

/// All-point interpolated area under the PR curve of a ranked hit list.
pub fn pr_area(hits: &[bool], n_gt: usize) -> f64 {
    let mut prec = Vec::with_capacity(hits.len());
    let mut rec = Vec::with_capacity(hits.len());
    let mut tp = 0usize;
    for (i, &h) in hits.iter().enumerate() {
        tp += h as usize;
        prec.push(tp as f64 / (i + 1) as f64);
        rec.push(tp as f64 / n_gt as f64);
    }
    for i in (0..prec.len().saturating_sub(1)).rev() {
        prec[i] = prec[i].max(prec[i + 1]);
    }
    let mut area = 0.0;
    let mut last_r = 0.0;
    for (p, r) in prec.iter().zip(&rec) {
        if *r > last_r {
            area += (r - last_r) * p;
            last_r = *r;
        }
    }
    area
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalResult {
    pub thresholds: Vec<f64>,
    /// `per_class[t][j - 1]`: AP of class `j` at threshold `t`.
    pub per_class: Vec<Vec<Option<f64>>>,
    /// Mean over classes present in the ground truth.
    pub map: Vec<f64>,
}

impl EvalResult {
    pub fn at(&self, thresh: f64) -> Option<f64> {
        self.thresholds
            .iter()
            .position(|&t| (t - thresh).abs() < 1e-12)
            .map(|i| self.map[i])
    }

    /// Plain-text table, one row per threshold.
    pub fn table(&self) -> String {
        let mut s = String::from("threshold\tmAP");
        let classes = self.per_class.first().map_or(0, Vec::len);
        for j in 1..=classes {
            s.push_str(&format!("\tAP_c{j}"));
        }
        s.push('\n');
        for (i, t) in self.thresholds.iter().enumerate() {
            s.push_str(&format!("{t:.2}\t{:.4}", self.map[i]));
            for ap in &self.per_class[i] {
                match ap {
                    Some(v) => s.push_str(&format!("\t{v:.4}")),
                    None => s.push_str("\t-"),
                }
            }
            s.push('\n');
        }
        s
    }
}

pub fn map_r(scenes: &[SceneEval<'_>], num_classes: usize, thresholds: &[f64]) -> Result<EvalResult> {
    let mut per_class = Vec::with_capacity(thresholds.len());
    let mut map = Vec::with_capacity(thresholds.len());
    for &t in thresholds {
        let aps = (1..=num_classes)
            .map(|j| average_precision(scenes, j, t))
            .collect::<Result<Vec<_>>>()?;
        let present: Vec<f64> = aps.iter().flatten().copied().collect();
        map.push(if present.is_empty() {
            0.0
        } else {
            present.iter().sum::<f64>() / present.len() as f64
        });
        per_class.push(aps);
    }
    Ok(EvalResult {
        thresholds: thresholds.to_vec(),
        per_class,
        map,
    })
}

/// Decoded predictions of the prediction network for each scene.
pub fn predict_dataset(
    theta_p: &PredParams,
    data: &[SceneRecord],
    cfg: &DecodeConfig,
) -> Result<Vec<Vec<InstancePrediction>>> {
    use rayon::prelude::*;
    data.par_iter()
        .map(|s| {
            let state = predict(theta_p, &scene_features(s))?;
            decode(&state, &s.pool, cfg.score_thresh, cfg.nms_t)
        })
        .collect()
}

pub fn evaluate(
    preds: &[Vec<InstancePrediction>],
    data: &[SceneRecord],
    thresholds: &[f64],
) -> Result<EvalResult> {
    let num_classes = data.first().map_or(0, SceneRecord::num_classes);
    let scenes: Vec<SceneEval<'_>> = preds
        .iter()
        .zip(data)
        .map(|(p, s)| SceneEval { preds: p, gts: &s.gt })
        .collect();
    map_r(&scenes, num_classes, thresholds)
}

pub fn evaluate_model(
    theta_p: &PredParams,
    data: &[SceneRecord],
    decode_cfg: &DecodeConfig,
    thresholds: &[f64],
) -> Result<EvalResult> {
    evaluate(&predict_dataset(theta_p, data, decode_cfg)?, data, thresholds)
}

/// Which of the two distributions are replaced by pointwise versions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pointwise {
    pub pred: bool,
    pub cond: bool,
}

impl Pointwise {
    /// Column order of the ablation table.
    pub const GRID: [Pointwise; 4] = [
        Pointwise { pred: false, cond: false },
        Pointwise { pred: true, cond: false },
        Pointwise { pred: false, cond: true },
        Pointwise { pred: true, cond: true },
    ];

    pub fn label(self) -> &'static str {
        match (self.pred, self.cond) {
            (false, false) => "Pr_p/Pr_c",
            (true, false) => "PW_p/Pr_c",
            (false, true) => "Pr_p/PW_c",
            (true, true) => "PW_p/PW_c",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationCell {
    pub term_mode: TermMode,
    pub pointwise: Pointwise,
    /// mAP at each of `ABLATION_THRESHOLDS`.
    pub map: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationTable {
    pub cells: Vec<AblationCell>,
}

impl AblationTable {
    pub fn get(&self, mode: TermMode, pw: Pointwise) -> Option<&AblationCell> {
        self.cells.iter().find(|c| c.term_mode == mode && c.pointwise == pw)
    }

    /// One row per term mode; each pointwise setting contributes one column
    /// per threshold.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("terms");
        for pw in Pointwise::GRID {
            for t in ABLATION_THRESHOLDS {
                s.push_str(&format!(",{}@{t:.2}", pw.label()));
            }
        }
        s.push('\n');
        for mode in TermMode::ALL {
            if !self.cells.iter().any(|c| c.term_mode == mode) {
                continue;
            }
            s.push_str(mode.label());
            for pw in Pointwise::GRID {
                match self.get(mode, pw) {
                    Some(c) => c.map.iter().for_each(|m| s.push_str(&format!(",{m:.4}"))),
                    None => ABLATION_THRESHOLDS.iter().for_each(|_| s.push(',')),
                }
            }
            s.push('\n');
        }
        s
    }
}

/// Train one ablated configuration on `train` and score it on `test`.
pub fn ablation_cell(
    train: &[SceneRecord],
    test: &[SceneRecord],
    base: &FitConfig,
    mode: TermMode,
    pw: Pointwise,
) -> Result<AblationCell> {
    let mut cfg = base.clone();
    cfg.train.term_mode = mode;
    cfg.train.pointwise_pred = pw.pred;
    cfg.train.pointwise_cond = pw.cond;
    let r = fit(train, &cfg)?;
    let ev = evaluate_model(&r.theta_p, test, &cfg.decode, &ABLATION_THRESHOLDS)?;
    Ok(AblationCell {
        term_mode: mode,
        pointwise: pw,
        map: ev.map,
    })
}

/// The full grid: every term mode crossed with every pointwise setting,
/// all sharing the base seed.
pub fn ablation_run(train: &[SceneRecord], test: &[SceneRecord], base: &FitConfig) -> Result<AblationTable> {
    let mut cells = Vec::new();
    for mode in TermMode::ALL {
        for pw in Pointwise::GRID {
            cells.push(ablation_cell(train, test, base, mode, pw)?);
        }
    }
    Ok(AblationTable { cells })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{tight_box, PixelMask};
    use crate::synthgen::LabeledMask;

    fn pred(class_id: usize, mask: PixelMask, confidence: f64) -> InstancePrediction {
        InstancePrediction {
            class_id,
            confidence,
            bbox: tight_box(&mask).unwrap(),
            mask,
            proposal: 0,
        }
    }

    fn gt() -> Vec<GroundTruthInstance> {
        vec![LabeledMask {
            class_id: 1,
            mask: PixelMask::rect(10, 10, 0, 0, 4, 4),
        }]
    }

    #[test]
    fn hand_pr_curves() {
        let g = gt();
        let tp = pred(1, g[0].mask.clone(), 0.9);
        let fp = pred(1, PixelMask::rect(10, 10, 6, 6, 9, 9), 0.8);
        let s = [SceneEval {
            preds: &[tp.clone(), fp.clone()],
            gts: &g,
        }];
        assert_eq!(average_precision(&s, 1, 0.5).unwrap(), Some(1.0));
        let tp2 = InstancePrediction { confidence: 0.7, ..tp };
        let s = [SceneEval {
            preds: &[tp2, fp],
            gts: &g,
        }];
        assert_eq!(average_precision(&s, 1, 0.5).unwrap(), Some(0.5));
    }

    #[test]
    fn perfect_and_empty() {
        let g = gt();
        let perfect = [pred(1, g[0].mask.clone(), 0.3)];
        let r = map_r(&[SceneEval { preds: &perfect, gts: &g }], 2, &THRESHOLDS).unwrap();
        assert_eq!(r.map, vec![1.0; 4]);
        assert_eq!(r.per_class[0][1], None);
        let r = map_r(&[SceneEval { preds: &[], gts: &g }], 2, &THRESHOLDS).unwrap();
        assert_eq!(r.map, vec![0.0; 4]);
    }

    #[test]
    fn threshold_crossing() {
        // 5x5 ground truth against a 5x3 prediction inside it: IoU 0.6.
        let g = gt();
        let p = [pred(1, PixelMask::rect(10, 10, 0, 0, 4, 2), 0.9)];
        let r = map_r(&[SceneEval { preds: &p, gts: &g }], 1, &THRESHOLDS).unwrap();
        assert_eq!(r.map, vec![1.0, 1.0, 0.0, 0.0]);
    }
}
