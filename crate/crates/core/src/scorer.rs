//! Noise-conditioned proposal scorer for the conditional distribution.
//!
//! Each proposal is described by a fixed-length [`FeatureVector`]; the score
//! of proposal `u` for class `c` under noise `z` is `model_c(concat(f_u, z))`
//! where the model is either linear or a one-hidden-layer tanh network.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{mismatch, Error, Result};
use crate::geometry::PixelMask;
use crate::synthgen::SceneRecord;

/// Number of class-independent feature entries (area, centroid, colour,
/// boundary edge strength, bias).
const BASE_FEATURES: usize = 8;

pub fn feature_dim(num_classes: usize) -> usize {
    BASE_FEATURES + num_classes
}

/// `[area, cx, cy, r, g, b, boundary_edge, seed_overlap_1..=C, 1.0]`
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn mask_features(scene: &SceneRecord, mask: &PixelMask) -> FeatureVector {
    let c = scene.num_classes();
    let (w, h) = (scene.width() as f64, scene.height() as f64);
    let mut f = vec![0.0; feature_dim(c)];
    let area = mask.area();
    *f.last_mut().unwrap() = 1.0;
    if area == 0 {
        return FeatureVector(f);
    }
    let n = area as f64;
    f[0] = n / (w * h);
    let (mut sx, mut sy) = (0.0, 0.0);
    let mut rgb = [0.0f64; 3];
    for (x, y) in mask.pixels() {
        sx += x as f64;
        sy += y as f64;
        let p = scene.image.pixel(x, y);
        for k in 0..3 {
            rgb[k] += p[k] as f64;
        }
    }
    f[1] = (sx / n + 0.5) / w;
    f[2] = (sy / n + 0.5) / h;
    for k in 0..3 {
        f[3 + k] = rgb[k] / n;
    }
    let contour = mask.outer_contour();
    let len = contour.area();
    if len > 0 {
        f[6] = scene.edges.sum_over(&contour) / len as f64;
    }
    for s in &scene.seeds {
        let frac = s.mask.intersection_area(mask) as f64 / s.mask.area().max(1) as f64;
        let slot = &mut f[6 + s.class_id];
        *slot = slot.max(frac);
    }
    FeatureVector(f)
}

pub fn features(scene: &SceneRecord, proposal: usize) -> Result<FeatureVector> {
    let m = scene.pool.get(proposal).ok_or(Error::OutOfRange {
        index: proposal,
        len: scene.pool.len(),
    })?;
    Ok(mask_features(scene, m))
}

pub fn scene_features(scene: &SceneRecord) -> Vec<FeatureVector> {
    scene.pool.iter().map(|m| mask_features(scene, m)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseVector(pub Vec<f64>);

impl NoiseVector {
    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn sample(cfg: &NoiseConfig, rng: &mut impl Rng) -> Self {
        Self((0..cfg.dim).map(|_| rng.gen_range(cfg.low..=cfg.high)).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub dim: usize,
    pub low: f64,
    pub high: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            dim: 8,
            low: 0.0,
            high: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScorerConfig {
    pub noise: NoiseConfig,
    /// Hidden width of the tanh layer; `None` selects the linear scorer.
    pub hidden: Option<usize>,
    pub init_scale: f64,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        Self {
            noise: NoiseConfig::default(),
            hidden: None,
            init_scale: 0.01,
        }
    }
}

/// Conditional-network parameters, stored flat.
///
/// Linear: `W` is `outputs x inputs`, row-major. MLP: `W1` (`hidden x inputs`)
/// followed by `W2` (`outputs x hidden`).
#[derive(Debug, Clone, PartialEq)]
pub struct CondParams {
    pub outputs: usize,
    pub inputs: usize,
    pub hidden: Option<usize>,
    pub weights: Vec<f64>,
}

impl CondParams {
    pub fn zeros(outputs: usize, inputs: usize, hidden: Option<usize>) -> Self {
        let n = match hidden {
            None => outputs * inputs,
            Some(hd) => hd * inputs + outputs * hd,
        };
        Self {
            outputs,
            inputs,
            hidden,
            weights: vec![0.0; n],
        }
    }

    /// Small uniform initialisation in `[-scale, scale]`.
    pub fn random(outputs: usize, inputs: usize, hidden: Option<usize>, scale: f64, seed: u64) -> Self {
        let mut p = Self::zeros(outputs, inputs, hidden);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for w in &mut p.weights {
            *w = rng.gen_range(-scale..=scale);
        }
        p
    }

    /// Shape for a scene with `num_classes` foreground classes.
    pub fn for_classes(num_classes: usize, cfg: &ScorerConfig, seed: u64) -> Self {
        Self::random(
            num_classes + 1,
            feature_dim(num_classes) + cfg.noise.dim,
            cfg.hidden,
            cfg.init_scale,
            seed,
        )
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    fn hidden_activations(&self, x: &[f64], hd: usize) -> Vec<f64> {
        (0..hd)
            .map(|k| {
                let row = &self.weights[k * self.inputs..(k + 1) * self.inputs];
                row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>().tanh()
            })
            .collect()
    }

    /// Scores for all outputs given the concatenated input.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.inputs);
        match self.hidden {
            None => (0..self.outputs)
                .map(|c| {
                    let row = &self.weights[c * self.inputs..(c + 1) * self.inputs];
                    row.iter().zip(x).map(|(a, b)| a * b).sum()
                })
                .collect(),
            Some(hd) => {
                let h = self.hidden_activations(x, hd);
                let w2 = &self.weights[hd * self.inputs..];
                (0..self.outputs)
                    .map(|c| w2[c * hd..(c + 1) * hd].iter().zip(&h).map(|(a, b)| a * b).sum())
                    .collect()
            }
        }
    }

    /// Adds `d/dθ Σ_c adjoint[c] · forward(x)[c]` into `grad`.
    pub fn accumulate_grad(&self, x: &[f64], adjoint: &[f64], grad: &mut [f64]) {
        debug_assert_eq!(adjoint.len(), self.outputs);
        debug_assert_eq!(grad.len(), self.weights.len());
        match self.hidden {
            None => {
                for (c, &a) in adjoint.iter().enumerate() {
                    if a == 0.0 {
                        continue;
                    }
                    let row = &mut grad[c * self.inputs..(c + 1) * self.inputs];
                    for (g, xi) in row.iter_mut().zip(x) {
                        *g += a * xi;
                    }
                }
            }
            Some(hd) => {
                if adjoint.iter().all(|&a| a == 0.0) {
                    return;
                }
                let h = self.hidden_activations(x, hd);
                let off = hd * self.inputs;
                let mut dh = vec![0.0; hd];
                for (c, &a) in adjoint.iter().enumerate() {
                    if a == 0.0 {
                        continue;
                    }
                    for k in 0..hd {
                        grad[off + c * hd + k] += a * h[k];
                        dh[k] += a * self.weights[off + c * hd + k];
                    }
                }
                for k in 0..hd {
                    let dpre = dh[k] * (1.0 - h[k] * h[k]);
                    if dpre == 0.0 {
                        continue;
                    }
                    let row = &mut grad[k * self.inputs..(k + 1) * self.inputs];
                    for (g, xi) in row.iter_mut().zip(x) {
                        *g += dpre * xi;
                    }
                }
            }
        }
    }
}

/// `P x (C + 1)` scores; column 0 is background.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl ScoreTable {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged score rows");
        Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        }
    }

    pub fn num_proposals(&self) -> usize {
        self.rows
    }

    pub fn num_labels(&self) -> usize {
        self.cols
    }

    pub fn get(&self, u: usize, c: usize) -> f64 {
        self.data[u * self.cols + c]
    }

    pub fn set(&mut self, u: usize, c: usize, v: f64) {
        self.data[u * self.cols + c] = v;
    }

    pub fn add(&mut self, u: usize, c: usize, v: f64) {
        self.data[u * self.cols + c] += v;
    }

    pub fn row(&self, u: usize) -> &[f64] {
        &self.data[u * self.cols..(u + 1) * self.cols]
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

fn concat_input(f: &FeatureVector, z: &NoiseVector) -> Vec<f64> {
    let mut x = Vec::with_capacity(f.len() + z.0.len());
    x.extend_from_slice(&f.0);
    x.extend_from_slice(&z.0);
    x
}

fn check_dims(theta: &CondParams, feats: &[FeatureVector], z: &NoiseVector) -> Result<()> {
    if let Some(f) = feats.first() {
        if f.len() + z.0.len() != theta.inputs {
            return Err(mismatch(theta.inputs, f.len() + z.0.len()));
        }
    }
    Ok(())
}

pub fn score_all(theta: &CondParams, feats: &[FeatureVector], z: &NoiseVector) -> Result<ScoreTable> {
    check_dims(theta, feats, z)?;
    let mut table = ScoreTable::zeros(feats.len(), theta.outputs);
    for (u, f) in feats.iter().enumerate() {
        for (c, s) in theta.forward(&concat_input(f, z)).into_iter().enumerate() {
            table.set(u, c, s);
        }
    }
    Ok(table)
}

/// Gradient of the single entry `F[proposal][class_id]` with respect to θ_c.
pub fn score_grad(
    theta: &CondParams,
    feats: &[FeatureVector],
    z: &NoiseVector,
    proposal: usize,
    class_id: usize,
) -> Result<Vec<f64>> {
    check_dims(theta, feats, z)?;
    let f = feats.get(proposal).ok_or(Error::OutOfRange {
        index: proposal,
        len: feats.len(),
    })?;
    if class_id >= theta.outputs {
        return Err(Error::OutOfRange {
            index: class_id,
            len: theta.outputs,
        });
    }
    let mut adj = vec![0.0; theta.outputs];
    adj[class_id] = 1.0;
    let mut g = vec![0.0; theta.len()];
    theta.accumulate_grad(&concat_input(f, z), &adj, &mut g);
    Ok(g)
}

/// Gradient of `Σ_{u,c} adjoint[u][c] · F[u][c]` with respect to θ_c.
pub fn table_grad(
    theta: &CondParams,
    feats: &[FeatureVector],
    z: &NoiseVector,
    adjoint: &ScoreTable,
    grad: &mut [f64],
) {
    for (u, f) in feats.iter().enumerate() {
        let row = adjoint.row(u);
        if row.iter().all(|&a| a == 0.0) {
            continue;
        }
        theta.accumulate_grad(&concat_input(f, z), row, grad);
    }
}
