//! Alternating training of the two networks.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::condnet::{
    draw_noise, infer, refine_backprop, refine_trace, InferenceConfig, InstanceLabeling, SamplerConfig, TermMode,
};
use crate::disco::{disc_terms, DiscTerms, DiscoConfig};
use crate::error::{Error, Result};
use crate::eval::{evaluate, DecodeConfig};
use crate::geometry::{mask_iou, PixelMask};
use crate::loss::{proposal_delta, LossConfig};
use crate::pool::PoolContext;
use crate::prednet::{decode, objective_and_grad, predict, PredParams, PredictiveState};
use crate::rng;
use crate::scorer::{score_all, scene_features, table_grad, CondParams, FeatureVector, ScoreTable, ScorerConfig};
use crate::synthgen::{filter_by_boxes, Annotation, SceneRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Class presence only.
    #[default]
    ImageLevel,
    /// Class boxes: proposals are box-filtered and every box must be covered.
    Boxes,
}

/// Sign of the loss term in loss-augmented inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentSign {
    #[default]
    Plus,
    Minus,
}

impl AugmentSign {
    pub fn value(self) -> f64 {
        match self {
            AugmentSign::Plus => 1.0,
            AugmentSign::Minus => -1.0,
        }
    }
}

/// How seed masks become the labelings the conditional network starts from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedTarget {
    /// Proposal with the highest IoU to the seed.
    #[default]
    BestIou,
    /// Proposal maximising seed coverage plus mean boundary edge strength.
    Retrieval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub outer_iters: usize,
    pub init_epochs: usize,
    pub cond_epochs: usize,
    pub pred_epochs: usize,
    pub batch_size: usize,
    pub lr_pred: f64,
    pub lr_cond: f64,
    pub optimizer_pred: OptimizerKind,
    pub optimizer_cond: OptimizerKind,
    pub k: usize,
    pub epsilon: f64,
    pub sign: AugmentSign,
    pub seed: u64,
    pub term_mode: TermMode,
    pub regime: Regime,
    pub seed_target: SeedTarget,
    /// Drop the prediction self-diversity term.
    pub pointwise_pred: bool,
    /// Zero noise and no conditional self-diversity term.
    pub pointwise_cond: bool,
    /// Train the prediction network before the conditional one in each
    /// outer iteration.
    pub pred_first: bool,
    /// Log disc terms and train mAP after every epoch.
    pub log_every_epoch: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            outer_iters: 4,
            init_epochs: 5,
            cond_epochs: 5,
            pred_epochs: 5,
            batch_size: 10,
            lr_pred: 0.5,
            lr_cond: 0.05,
            optimizer_pred: OptimizerKind::Sgd,
            optimizer_cond: OptimizerKind::Adam,
            k: 10,
            epsilon: 1.0,
            sign: AugmentSign::Plus,
            seed: 0,
            term_mode: TermMode::Full,
            regime: Regime::ImageLevel,
            seed_target: SeedTarget::default(),
            pointwise_pred: false,
            pointwise_cond: false,
            pred_first: true,
            log_every_epoch: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.k < 2 {
            return bad("k must be at least 2");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.lr_pred >= 0.0 && self.lr_cond >= 0.0) {
            return bad("learning rates must be non-negative");
        }
        if !self.epsilon.is_finite() || self.epsilon <= 0.0 {
            return bad("epsilon must be positive");
        }
        Ok(())
    }
}

/// Everything `fit` needs besides the data.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub scorer: ScorerConfig,
    pub inference: InferenceConfig,
    pub loss: LossConfig,
    pub disco: DiscoConfig,
    pub train: TrainConfig,
    pub decode: DecodeConfig,
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        self.inference.validate()?;
        self.loss.validate()?;
        self.disco.validate()?;
        self.train.validate()?;
        if self.scorer.noise.low > self.scorer.noise.high {
            return Err(Error::InvalidConfig("noise low must not exceed high".into()));
        }
        Ok(())
    }

    pub fn sampler(&self) -> SamplerConfig {
        SamplerConfig {
            k: self.train.k,
            noise: self.scorer.noise.clone(),
            term_mode: self.train.term_mode,
            zero_noise: self.train.pointwise_cond,
        }
    }

    /// Self-diversity weight for the prediction objective.
    fn pred_self_weight(&self) -> f64 {
        if self.train.pointwise_pred {
            0.0
        } else {
            1.0 - self.disco.gamma
        }
    }

    /// Self-diversity weight for the conditional objective.
    fn cond_gamma(&self) -> f64 {
        if self.train.pointwise_cond {
            0.0
        } else {
            self.disco.gamma
        }
    }
}

/// A scene prepared for training: features, pool context and the
/// annotation as seen by the conditional network.
#[derive(Debug, Clone)]
pub struct TrainScene<'a> {
    pub record: &'a SceneRecord,
    pub feats: Vec<FeatureVector>,
    pub ctx: PoolContext,
    pub ann: Annotation,
}

impl<'a> TrainScene<'a> {
    pub fn new(record: &'a SceneRecord, regime: Regime, inference: &InferenceConfig) -> Result<Self> {
        let mut ctx = PoolContext::new(&record.pool, &record.adjacency)?;
        let ann = match (regime, &record.annotation.boxes) {
            (Regime::Boxes, Some(boxes)) => {
                match filter_by_boxes(&record.pool, boxes, inference.box_overlap, &record.edges, 1) {
                    Ok(f) => {
                        ctx.restrict_to(&f.kept);
                        record.annotation.clone()
                    }
                    Err(Error::EmptyPool) => record.annotation.without_boxes(),
                    Err(e) => return Err(e),
                }
            }
            _ => record.annotation.without_boxes(),
        };
        Ok(Self {
            record,
            feats: scene_features(record),
            ctx,
            ann,
        })
    }

    pub fn pool(&self) -> &[PixelMask] {
        &self.record.pool
    }
}

pub fn prepare<'a>(data: &'a [SceneRecord], regime: Regime, inference: &InferenceConfig) -> Result<Vec<TrainScene<'a>>> {
    data.par_iter().map(|r| TrainScene::new(r, regime, inference)).collect()
}

/// Seed-derived labeling: each seed labels one proposal with its class.
pub fn seed_labeling(scene: &TrainScene<'_>, target: SeedTarget) -> Result<InstanceLabeling> {
    let pool = scene.pool();
    let mut y = InstanceLabeling::background(pool.len());
    for s in &scene.record.seeds {
        let mut best = None::<(f64, usize)>;
        for (u, m) in pool.iter().enumerate() {
            if !scene.ctx.allowed[u] || y.labels[u] != 0 {
                continue;
            }
            let score = match target {
                SeedTarget::BestIou => mask_iou(&s.mask, m)?,
                SeedTarget::Retrieval => {
                    let cover = s.mask.intersection_area(m) as f64 / s.mask.area().max(1) as f64;
                    cover + scene.feats[u].0[6]
                }
            };
            if best.map_or(true, |b| score > b.0) {
                best = Some((score, u));
            }
        }
        if let Some((_, u)) = best {
            y.labels[u] = s.class_id;
        }
    }
    Ok(y)
}

/// Greedy inference on `G + sign·ε·Δ(·, y_ref)`.
pub fn loss_augmented_infer(
    g: &ScoreTable,
    scene: &TrainScene<'_>,
    y_ref: &InstanceLabeling,
    sign: AugmentSign,
    epsilon: f64,
    cfg: &FitConfig,
) -> Result<InstanceLabeling> {
    let loss = cfg.loss.conditional();
    let mut aug = g.clone();
    let scale = sign.value() * epsilon;
    for u in 0..g.num_proposals() {
        for c in 0..g.num_labels() {
            let d = proposal_delta(c, y_ref.labels[u], &loss);
            if d != 0.0 {
                aug.add(u, c, scale * d);
            }
        }
    }
    infer(&aug, &scene.ctx, &scene.ann, &cfg.inference, cfg.train.term_mode)
}

fn add_onehot(table: &mut ScoreTable, y: &InstanceLabeling, w: f64) {
    for (u, &c) in y.labels.iter().enumerate() {
        table.add(u, c, w);
    }
}

/// Estimated gradient of the dissimilarity objective with respect to θ_c
/// for one scene, with `y_ref` standing for the prediction side.
///
/// Returns the gradient and the K plain samples.
pub fn cond_grad(
    theta: &CondParams,
    scene: &TrainScene<'_>,
    y_ref: &InstanceLabeling,
    cfg: &FitConfig,
    noise_seed: u64,
) -> Result<(Vec<f64>, Vec<InstanceLabeling>)> {
    let kk = cfg.train.k;
    if kk < 2 {
        return Err(Error::TooFewSamples { needed: 2, actual: kk });
    }
    let sampler = cfg.sampler();
    let mode = cfg.train.term_mode;
    let mut noises = Vec::with_capacity(kk);
    let mut traces = Vec::with_capacity(kk);
    let mut y_c = Vec::with_capacity(kk);
    for k in 0..kk {
        let z = draw_noise(&sampler, noise_seed, k);
        let f = score_all(theta, &scene.feats, &z)?;
        let trace = if mode.pairwise() {
            refine_trace(&f, &scene.ctx, &cfg.inference)
        } else {
            vec![f]
        };
        let g = trace.last().unwrap();
        if !g.is_finite() {
            return Err(Error::NonFinite("conditional scores".into()));
        }
        y_c.push(infer(g, &scene.ctx, &scene.ann, &cfg.inference, mode)?);
        noises.push(z);
        traces.push(trace);
    }
    let (sign, eps) = (cfg.train.sign, cfg.train.epsilon);
    let gamma = cfg.cond_gamma();
    let p = scene.feats.len();
    let labels = theta.outputs;
    let kf = kk as f64;
    // The minus-augmented estimator has the opposite sign.
    let dir = sign.value();
    let pair_w = dir * gamma * 2.0 / (kf * (kf - 1.0));
    let mut grad = vec![0.0; theta.len()];
    for k in 0..kk {
        let g = traces[k].last().unwrap();
        let mut adj = ScoreTable::zeros(p, labels);
        let y_a = loss_augmented_infer(g, scene, y_ref, sign, eps, cfg)?;
        add_onehot(&mut adj, &y_a, dir / kf);
        add_onehot(&mut adj, &y_c[k], -dir / kf);
        if gamma != 0.0 {
            for k2 in (0..kk).filter(|&k2| k2 != k) {
                let y_b = loss_augmented_infer(g, scene, &y_c[k2], sign, eps, cfg)?;
                add_onehot(&mut adj, &y_b, -pair_w);
                add_onehot(&mut adj, &y_c[k], pair_w);
            }
        }
        if adj.values().iter().all(|&v| v == 0.0) {
            continue;
        }
        let adj_f = if mode.pairwise() {
            refine_backprop(&traces[k], &scene.ctx, &cfg.inference, &adj)
        } else {
            adj
        };
        table_grad(theta, &scene.feats, &noises[k], &adj_f, &mut grad);
    }
    if grad.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("conditional gradient".into()));
    }
    Ok((grad, y_c))
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Optimizer {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    pub fn new(kind: OptimizerKind, lr: f64, n: usize) -> Self {
        Self {
            kind,
            lr,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= self.lr * g;
                }
            }
            OptimizerKind::Adam => {
                self.t += 1;
                let b1 = 1.0 - Self::BETA1.powi(self.t);
                let b2 = 1.0 - Self::BETA2.powi(self.t);
                for i in 0..params.len() {
                    self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * grad[i];
                    self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * grad[i] * grad[i];
                    let mh = self.m[i] / b1;
                    let vh = self.v[i] / b2;
                    params[i] -= self.lr * mh / (vh.sqrt() + Self::EPS);
                }
            }
        }
    }
}

fn check_finite(g: &[f64], what: &str) -> Result<()> {
    if g.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.into()))
    }
}

/// Mean prediction objective over a batch and its gradient.
pub fn pred_objective(
    theta: &PredParams,
    scenes: &[&TrainScene<'_>],
    samples: &[&[InstanceLabeling]],
    cfg: &FitConfig,
) -> Result<(f64, Vec<f64>)> {
    let sw = cfg.pred_self_weight();
    let parts: Vec<(f64, Vec<f64>)> = scenes
        .par_iter()
        .zip(samples.par_iter())
        .map(|(s, ys)| {
            let mut g = vec![0.0; theta.len()];
            let v = objective_and_grad(theta, &s.feats, ys, sw, &cfg.loss, Some(&mut g))?;
            Ok((v, g))
        })
        .collect::<Result<_>>()?;
    let n = scenes.len().max(1) as f64;
    let mut grad = vec![0.0; theta.len()];
    let mut value = 0.0;
    for (v, g) in parts {
        value += v / n;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b / n;
        }
    }
    Ok((value, grad))
}

/// One gradient step of the prediction network on a batch.
pub fn pred_step(
    theta: &PredParams,
    scenes: &[&TrainScene<'_>],
    samples: &[&[InstanceLabeling]],
    cfg: &FitConfig,
    opt: &mut Optimizer,
) -> Result<PredParams> {
    let (_, grad) = pred_objective(theta, scenes, samples, cfg)?;
    check_finite(&grad, "prediction gradient")?;
    let mut next = theta.clone();
    opt.step(&mut next.weights, &grad);
    Ok(next)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogRow {
    pub epoch: usize,
    pub outer: usize,
    pub phase: &'static str,
    pub disc: f64,
    pub div_pc: f64,
    pub div_cc: f64,
    pub div_pp: f64,
    pub map50: f64,
}

pub fn log_csv(rows: &[LogRow]) -> String {
    let mut s = String::from("epoch,outer,phase,disc,div_pc,div_cc,div_pp,map50\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.epoch, r.outer, r.phase, r.disc, r.div_pc, r.div_cc, r.div_pp, r.map50
        ));
    }
    s
}

/// Parameters after the initial phase (`outer = 0`) and after each outer iteration.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub outer: usize,
    pub theta_c: CondParams,
    pub theta_p: PredParams,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub theta_p: PredParams,
    pub theta_c: CondParams,
    pub log: Vec<LogRow>,
    pub snapshots: Vec<Snapshot>,
    /// Pseudo labels that failed the annotation-consistency check.
    pub inconsistent_samples: usize,
}

fn scene_seed(seed: u64, scene: &TrainScene<'_>, parts: &[u64]) -> u64 {
    let mut key = vec![seed, scene.record.id];
    key.extend_from_slice(parts);
    rng::stream_seed(&key)
}

const TAG_INIT: u64 = 1;
const TAG_COND: u64 = 2;
const TAG_RESAMPLE: u64 = 3;
const TAG_LOG: u64 = 4;

/// Draw K pseudo labels per scene.
pub fn resample(
    theta_c: &CondParams,
    scenes: &[TrainScene<'_>],
    cfg: &FitConfig,
    tag: &[u64],
) -> Result<Vec<Vec<InstanceLabeling>>> {
    let sampler = cfg.sampler();
    scenes
        .par_iter()
        .map(|s| {
            let seed = scene_seed(cfg.train.seed, s, tag);
            let samples =
                crate::condnet::sample_k(theta_c, &s.feats, &s.ctx, &s.ann, &sampler, &cfg.inference, seed)?;
            Ok(samples.into_iter().map(|x| x.labeling).collect())
        })
        .collect()
}

struct Trainer<'a, 'b> {
    scenes: &'b [TrainScene<'a>],
    cfg: &'b FitConfig,
    theta_c: CondParams,
    theta_p: PredParams,
    opt_c: Optimizer,
    opt_p: Optimizer,
    log: Vec<LogRow>,
    epoch: usize,
    inconsistent: usize,
}

impl Trainer<'_, '_> {
    fn batches(&self) -> Vec<Vec<usize>> {
        (0..self.scenes.len())
            .collect::<Vec<_>>()
            .chunks(self.cfg.train.batch_size)
            .map(<[usize]>::to_vec)
            .collect()
    }

    fn cond_epoch(&mut self, refs: &[InstanceLabeling], tag: u64, outer: usize) -> Result<()> {
        for (bi, batch) in self.batches().into_iter().enumerate() {
            let theta = &self.theta_c;
            let cfg = self.cfg;
            let parts: Vec<Vec<f64>> = batch
                .par_iter()
                .map(|&i| {
                    let s = &self.scenes[i];
                    let seed = scene_seed(cfg.train.seed, s, &[tag, outer as u64, self.epoch as u64, bi as u64]);
                    cond_grad(theta, s, &refs[i], cfg, seed).map(|r| r.0)
                })
                .collect::<Result<_>>()?;
            let mut grad = vec![0.0; self.theta_c.len()];
            for g in parts {
                for (a, b) in grad.iter_mut().zip(g) {
                    *a += b / batch.len() as f64;
                }
            }
            check_finite(&grad, "conditional gradient")?;
            self.opt_c.step(&mut self.theta_c.weights, &grad);
        }
        Ok(())
    }

    fn pred_epoch(&mut self, samples: &[Vec<InstanceLabeling>]) -> Result<()> {
        for batch in self.batches() {
            let sc: Vec<&TrainScene<'_>> = batch.iter().map(|&i| &self.scenes[i]).collect();
            let sm: Vec<&[InstanceLabeling]> = batch.iter().map(|&i| samples[i].as_slice()).collect();
            self.theta_p = pred_step(&self.theta_p, &sc, &sm, self.cfg, &mut self.opt_p)?;
        }
        Ok(())
    }

    fn states(&self) -> Result<Vec<PredictiveState>> {
        self.scenes.par_iter().map(|s| predict(&self.theta_p, &s.feats)).collect()
    }

    fn count_inconsistent(&mut self, samples: &[Vec<InstanceLabeling>]) {
        if !self.cfg.train.term_mode.higher_order() {
            return;
        }
        for (s, ys) in self.scenes.iter().zip(samples) {
            for y in ys {
                if !crate::condnet::higher_order_feasible(y, &s.ann, &s.ctx, &self.cfg.inference) {
                    self.inconsistent += 1;
                }
            }
        }
    }

    fn record(&mut self, phase: &'static str, outer: usize) -> Result<()> {
        let epoch = self.epoch;
        self.epoch += 1;
        if !self.cfg.train.log_every_epoch {
            return Ok(());
        }
        let samples = resample(&self.theta_c, self.scenes, self.cfg, &[TAG_LOG, epoch as u64])?;
        let states = self.states()?;
        let cfg = self.cfg;
        let terms: Vec<DiscTerms> = self
            .scenes
            .par_iter()
            .zip(states.par_iter())
            .zip(samples.par_iter())
            .map(|((s, st), ys)| disc_terms(st, ys, s.pool(), &cfg.loss, &cfg.disco))
            .collect::<Result<_>>()?;
        let n = terms.len().max(1) as f64;
        let mean = |f: fn(&DiscTerms) -> f64| terms.iter().map(f).sum::<f64>() / n;
        let preds = self
            .scenes
            .iter()
            .zip(&states)
            .map(|(s, st)| decode(st, s.pool(), cfg.decode.score_thresh, cfg.decode.nms_t))
            .collect::<Result<Vec<_>>>()?;
        let records: Vec<SceneRecord> = self.scenes.iter().map(|s| s.record.clone()).collect();
        let map50 = evaluate(&preds, &records, &[0.5])?.map[0];
        let row = LogRow {
            epoch,
            outer,
            phase,
            disc: mean(|t| t.disc),
            div_pc: mean(|t| t.div_pc),
            div_cc: mean(|t| t.div_cc),
            div_pp: mean(|t| t.div_pp),
            map50,
        };
        if ![row.disc, row.div_pc, row.div_cc, row.div_pp, row.map50].iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(format!("training metrics at epoch {epoch}")));
        }
        self.log.push(row);
        Ok(())
    }

    fn pred_phase(&mut self, outer: usize) -> Result<()> {
        let samples = resample(&self.theta_c, self.scenes, self.cfg, &[TAG_RESAMPLE, outer as u64])?;
        self.count_inconsistent(&samples);
        for _ in 0..self.cfg.train.pred_epochs {
            self.pred_epoch(&samples)?;
            self.record("pred", outer)?;
        }
        Ok(())
    }

    fn cond_phase(&mut self, outer: usize) -> Result<()> {
        let refs: Vec<InstanceLabeling> = self.states()?.iter().map(PredictiveState::mode).collect();
        for _ in 0..self.cfg.train.cond_epochs {
            self.cond_epoch(&refs, TAG_COND, outer)?;
            self.record("cond", outer)?;
        }
        Ok(())
    }
}

/// Initial parameters for a dataset with `num_classes` classes.
pub fn init_params(num_classes: usize, cfg: &FitConfig) -> (CondParams, PredParams) {
    (
        CondParams::for_classes(num_classes, &cfg.scorer, rng::stream_seed(&[cfg.train.seed, 0xC0D])),
        PredParams::for_classes(num_classes),
    )
}

/// Train both networks: seed initialisation of θ_c, then `outer_iters`
/// alternations between the conditional and prediction networks.
pub fn fit(data: &[SceneRecord], cfg: &FitConfig) -> Result<FitResult> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyPool);
    }
    let num_classes = data[0].num_classes();
    let scenes = prepare(data, cfg.train.regime, &cfg.inference)?;
    let (theta_c, theta_p) = init_params(num_classes, cfg);
    let mut t = Trainer {
        opt_c: Optimizer::new(cfg.train.optimizer_cond, cfg.train.lr_cond, theta_c.len()),
        opt_p: Optimizer::new(cfg.train.optimizer_pred, cfg.train.lr_pred, theta_p.len()),
        scenes: &scenes,
        cfg,
        theta_c,
        theta_p,
        log: Vec::new(),
        epoch: 0,
        inconsistent: 0,
    };
    let mut snapshots = Vec::new();
    if cfg.train.outer_iters > 0 {
        let seeds = scenes
            .iter()
            .map(|s| seed_labeling(s, cfg.train.seed_target))
            .collect::<Result<Vec<_>>>()?;
        for _ in 0..cfg.train.init_epochs {
            t.cond_epoch(&seeds, TAG_INIT, 0)?;
            t.record("init", 0)?;
        }
        snapshots.push(Snapshot {
            outer: 0,
            theta_c: t.theta_c.clone(),
            theta_p: t.theta_p.clone(),
        });
        for outer in 1..=cfg.train.outer_iters {
            if cfg.train.pred_first {
                t.pred_phase(outer)?;
                t.cond_phase(outer)?;
            } else {
                t.cond_phase(outer)?;
                t.pred_phase(outer)?;
            }
            snapshots.push(Snapshot {
                outer,
                theta_c: t.theta_c.clone(),
                theta_p: t.theta_p.clone(),
            });
        }
    }
    Ok(FitResult {
        theta_p: t.theta_p,
        theta_c: t.theta_c,
        log: t.log,
        snapshots,
        inconsistent_samples: t.inconsistent,
    })
}
