//! The prediction distribution: an independent softmax over classes per
//! proposal, its closed-form diversities, and test-time decoding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::condnet::InstanceLabeling;
use crate::error::{mismatch, Error, Result};
use crate::geometry::{overlap_fraction, tight_box, BBox, PixelMask};
use crate::loss::{proposal_delta, LossConfig};
use crate::scorer::{feature_dim, FeatureVector};

/// Softmax head weights, `outputs x inputs` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PredParams {
    pub outputs: usize,
    pub inputs: usize,
    pub weights: Vec<f64>,
}

impl PredParams {
    pub fn zeros(outputs: usize, inputs: usize) -> Self {
        Self {
            outputs,
            inputs,
            weights: vec![0.0; outputs * inputs],
        }
    }

    pub fn random(outputs: usize, inputs: usize, scale: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros(outputs, inputs);
        for w in &mut p.weights {
            *w = rng.gen_range(-scale..=scale);
        }
        p
    }

    pub fn for_classes(num_classes: usize) -> Self {
        Self::zeros(num_classes + 1, feature_dim(num_classes))
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    fn logits(&self, x: &[f64]) -> Vec<f64> {
        (0..self.outputs)
            .map(|c| {
                self.weights[c * self.inputs..(c + 1) * self.inputs]
                    .iter()
                    .zip(x)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect()
    }
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Class probabilities per proposal.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveState {
    pub probs: Vec<Vec<f64>>,
}

impl PredictiveState {
    /// Point mass on `y`.
    pub fn from_labeling(y: &InstanceLabeling, num_labels: usize) -> Self {
        Self {
            probs: y
                .labels
                .iter()
                .map(|&c| (0..num_labels).map(|k| if k == c { 1.0 } else { 0.0 }).collect())
                .collect(),
        }
    }

    pub fn num_proposals(&self) -> usize {
        self.probs.len()
    }

    pub fn num_labels(&self) -> usize {
        self.probs.first().map_or(0, Vec::len)
    }

    /// Most probable label per proposal, ties to the lower label.
    pub fn mode(&self) -> InstanceLabeling {
        self.probs
            .iter()
            .map(|p| {
                let mut best = 0;
                for (c, &v) in p.iter().enumerate() {
                    if v > p[best] {
                        best = c;
                    }
                }
                best
            })
            .collect::<Vec<_>>()
            .into()
    }

    /// Draw one labeling.
    pub fn sample(&self, rng: &mut impl Rng) -> InstanceLabeling {
        self.probs
            .iter()
            .map(|p| {
                let r: f64 = rng.gen();
                let mut acc = 0.0;
                for (c, &v) in p.iter().enumerate() {
                    acc += v;
                    if r < acc {
                        return c;
                    }
                }
                p.len() - 1
            })
            .collect::<Vec<_>>()
            .into()
    }
}

pub fn predict(theta: &PredParams, feats: &[FeatureVector]) -> Result<PredictiveState> {
    if let Some(f) = feats.first() {
        if f.len() != theta.inputs {
            return Err(mismatch(theta.inputs, f.len()));
        }
    }
    Ok(PredictiveState {
        probs: feats.iter().map(|f| softmax(&theta.logits(&f.0))).collect(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstancePrediction {
    pub class_id: usize,
    pub confidence: f64,
    pub mask: PixelMask,
    pub bbox: BBox,
    /// Index of the source proposal.
    pub proposal: usize,
}

/// Serialized form of a prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRecord {
    pub class: usize,
    pub confidence: f64,
    pub rle_mask: Vec<u32>,
    #[serde(rename = "box")]
    pub bbox: BBox,
}

impl InstancePrediction {
    pub fn to_record(&self) -> PredictionRecord {
        PredictionRecord {
            class: self.class_id,
            confidence: self.confidence,
            rle_mask: self.mask.to_rle(),
            bbox: self.bbox,
        }
    }

    pub fn from_record(r: &PredictionRecord, width: usize, height: usize) -> Result<Self> {
        let mask = PixelMask::from_rle(width, height, &r.rle_mask)?;
        Ok(Self {
            class_id: r.class,
            confidence: r.confidence,
            bbox: tight_box(&mask)?,
            mask,
            proposal: usize::MAX,
        })
    }
}

pub const DEFAULT_SCORE_THRESH: f64 = 0.7;

/// Threshold on the best foreground probability, then per-class greedy
/// suppression by confidence (a candidate is dropped when its overlap
/// fraction with a kept one exceeds `nms_t` in either direction).
pub fn decode(
    state: &PredictiveState,
    pool: &[PixelMask],
    score_thresh: f64,
    nms_t: f64,
) -> Result<Vec<InstancePrediction>> {
    if state.num_proposals() != pool.len() {
        return Err(mismatch(pool.len(), state.num_proposals()));
    }
    if !(0.0..=1.0).contains(&score_thresh) || !(0.0..=1.0).contains(&nms_t) {
        return Err(Error::InvalidConfig("decode thresholds must lie in [0, 1]".into()));
    }
    let mut cands: Vec<(usize, usize, f64)> = Vec::new();
    for (u, p) in state.probs.iter().enumerate() {
        let mut best = None::<(usize, f64)>;
        for (c, &v) in p.iter().enumerate().skip(1) {
            if best.map_or(true, |b| v > b.1) {
                best = Some((c, v));
            }
        }
        if let Some((c, v)) = best {
            if v >= score_thresh && !pool[u].is_empty() {
                cands.push((u, c, v));
            }
        }
    }
    cands.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)));
    let mut kept: Vec<(usize, usize, f64)> = Vec::new();
    for (u, c, v) in cands {
        let suppressed = kept.iter().filter(|k| k.1 == c).any(|k| {
            overlap_fraction(&pool[k.0], &pool[u]).unwrap_or(0.0) > nms_t
                || overlap_fraction(&pool[u], &pool[k.0]).unwrap_or(0.0) > nms_t
        });
        if !suppressed {
            kept.push((u, c, v));
        }
    }
    kept.into_iter()
        .map(|(u, c, v)| {
            Ok(InstancePrediction {
                class_id: c,
                confidence: v,
                mask: pool[u].clone(),
                bbox: tight_box(&pool[u])?,
                proposal: u,
            })
        })
        .collect()
}

/// Exact expectation over the factorized state of the loss against `y`.
pub fn expected_loss_vs_sample(state: &PredictiveState, y: &InstanceLabeling, cfg: &LossConfig) -> Result<f64> {
    if state.num_proposals() != y.len() {
        return Err(mismatch(state.num_proposals(), y.len()));
    }
    Ok(state
        .probs
        .iter()
        .zip(&y.labels)
        .map(|(p, &t)| p.iter().enumerate().map(|(c, &v)| v * proposal_delta(c, t, cfg)).sum::<f64>())
        .sum())
}

/// Expected loss between two independent draws from the state.
pub fn self_diversity_pred(state: &PredictiveState, cfg: &LossConfig) -> f64 {
    state
        .probs
        .iter()
        .map(|p| {
            let mut s = 0.0;
            for (c, &a) in p.iter().enumerate() {
                for (c2, &b) in p.iter().enumerate() {
                    s += a * b * proposal_delta(c, c2, cfg);
                }
            }
            s
        })
        .sum()
}

/// `(1/K) Σ_k E[Δ(y, y^k)] - self_weight · E[Δ(y, y')]` for one scene, and
/// its gradient with respect to the head weights (added into `grad`).
pub fn objective_and_grad(
    theta: &PredParams,
    feats: &[FeatureVector],
    samples: &[InstanceLabeling],
    self_weight: f64,
    cfg: &LossConfig,
    grad: Option<&mut [f64]>,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::TooFewSamples { needed: 1, actual: 0 });
    }
    let state = predict(theta, feats)?;
    let k = samples.len() as f64;
    let mut value = 0.0;
    for y in samples {
        value += expected_loss_vs_sample(&state, y, cfg)? / k;
    }
    value -= self_weight * self_diversity_pred(&state, cfg);
    if let Some(grad) = grad {
        let l = theta.outputs;
        let cost = cfg.w_cls * cfg.mismatch_cost;
        for (u, p) in state.probs.iter().enumerate() {
            let mut q = vec![0.0; l];
            for y in samples {
                q[y.labels[u]] += 1.0 / k;
            }
            // d/dp_c of cost·[(1 - p·q) - w(1 - |p|²)]
            let g: Vec<f64> = (0..l).map(|c| cost * (-q[c] + 2.0 * self_weight * p[c])).collect();
            let pg: f64 = p.iter().zip(&g).map(|(a, b)| a * b).sum();
            let f = &feats[u].0;
            for c in 0..l {
                let dz = p[c] * (g[c] - pg);
                if dz == 0.0 {
                    continue;
                }
                for (gw, x) in grad[c * theta.inputs..(c + 1) * theta.inputs].iter_mut().zip(f) {
                    *gw += dz * x;
                }
            }
        }
    }
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_params_uniform() {
        let theta = PredParams::zeros(4, 3);
        let feats = vec![FeatureVector(vec![0.2, 0.5, 1.0]); 2];
        let s = predict(&theta, &feats).unwrap();
        for p in &s.probs {
            for &v in p {
                assert!((v - 0.25).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn hand_softmax() {
        let theta = PredParams {
            outputs: 2,
            inputs: 1,
            weights: vec![0.0, 3f64.ln()],
        };
        let s = predict(&theta, &[FeatureVector(vec![1.0])]).unwrap();
        assert!((s.probs[0][0] - 0.25).abs() < 1e-12);
        assert!((s.probs[0][1] - 0.75).abs() < 1e-12);
    }

    fn pool() -> Vec<PixelMask> {
        vec![
            PixelMask::rect(8, 8, 0, 0, 3, 3),
            PixelMask::rect(8, 8, 0, 0, 3, 3),
            PixelMask::rect(8, 8, 5, 5, 7, 7),
        ]
    }

    #[test]
    fn decode_cases() {
        let bg = PredictiveState::from_labeling(&vec![0, 0, 0].into(), 2);
        assert!(decode(&bg, &pool(), 0.7, 0.5).unwrap().is_empty());
        let s = PredictiveState {
            probs: vec![vec![0.1, 0.9], vec![0.2, 0.8], vec![0.5, 0.5]],
        };
        let d = decode(&s, &pool(), 0.7, 0.5).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!((d[0].proposal, d[0].class_id, d[0].confidence), (0, 1, 0.9));
        assert_eq!(d[0].bbox, BBox::new(0, 0, 3, 3));
        assert_eq!(DEFAULT_SCORE_THRESH, 0.7);
    }

    #[test]
    fn closed_forms() {
        let cfg = LossConfig::default();
        let y: InstanceLabeling = vec![1, 0, 2].into();
        let det = PredictiveState::from_labeling(&y, 3);
        assert_eq!(expected_loss_vs_sample(&det, &y, &cfg).unwrap(), 0.0);
        assert_eq!(self_diversity_pred(&det, &cfg), 0.0);
        let uni = PredictiveState {
            probs: vec![vec![1.0 / 3.0; 3]; 3],
        };
        let e = expected_loss_vs_sample(&uni, &y, &cfg).unwrap();
        assert!((e - 3.0 * 2.0 / 3.0).abs() < 1e-12);
        let half = PredictiveState {
            probs: vec![vec![0.5, 0.5]],
        };
        assert!((self_diversity_pred(&half, &cfg) - 0.5).abs() < 1e-15);
    }
}
