//! The conditional distribution: edge-aware refinement of proposal scores,
//! the annotation-consistency term, greedy and exhaustive inference, and
//! K-sample drawing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{box_iou, BBox};
use crate::pool::{OverlapRule, PoolContext};
use crate::rng;
use crate::scorer::{score_all, CondParams, FeatureVector, NoiseConfig, NoiseVector, ScoreTable};
use crate::synthgen::Annotation;

/// When greedy inference keeps adding proposals for a class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionRule {
    /// Candidate for `j` when `G[u][j]` beats every other admissible label
    /// of `u` (background included) by more than the threshold.
    #[default]
    BackgroundMargin,
    /// Candidate for `j` when `G[u][j]` minus the pool median of column `j`
    /// exceeds the threshold.
    MedianCentered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceConfig {
    pub delta: f64,
    pub n_iters: usize,
    pub overlap_t: f64,
    pub select_threshold: f64,
    pub box_overlap: f64,
    pub selection: SelectionRule,
    pub overlap_rule: OverlapRule,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            delta: 0.1,
            n_iters: 3,
            overlap_t: 0.5,
            select_threshold: 0.0,
            box_overlap: 0.5,
            selection: SelectionRule::default(),
            overlap_rule: OverlapRule::default(),
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if !(self.delta > 0.0) {
            return bad("delta must be positive");
        }
        if self.n_iters == 0 {
            return bad("n_iters must be at least 1");
        }
        if !(self.overlap_t > 0.0 && self.overlap_t <= 1.0) {
            return bad("overlap_t must lie in (0, 1]");
        }
        if !(self.box_overlap > 0.0 && self.box_overlap <= 1.0) {
            return bad("box_overlap must lie in (0, 1]");
        }
        if !self.select_threshold.is_finite() {
            return bad("select_threshold must be finite");
        }
        Ok(())
    }
}

/// Which terms of the conditional model are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum TermMode {
    #[serde(rename = "u")]
    Unary,
    #[serde(rename = "u+p")]
    UnaryPairwise,
    #[default]
    #[serde(rename = "u+p+h")]
    Full,
}

impl TermMode {
    pub const ALL: [TermMode; 3] = [TermMode::Unary, TermMode::UnaryPairwise, TermMode::Full];

    pub fn pairwise(self) -> bool {
        self != TermMode::Unary
    }

    pub fn higher_order(self) -> bool {
        self == TermMode::Full
    }

    pub fn label(self) -> &'static str {
        match self {
            TermMode::Unary => "U",
            TermMode::UnaryPairwise => "U+P",
            TermMode::Full => "U+P+H",
        }
    }
}

/// Label per proposal, 0 for background.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct InstanceLabeling {
    pub labels: Vec<usize>,
}

impl InstanceLabeling {
    pub fn background(p: usize) -> Self {
        Self { labels: vec![0; p] }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `(proposal, class)` for every foreground proposal.
    pub fn selected(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.labels.iter().enumerate().filter(|(_, &c)| c != 0).map(|(u, &c)| (u, c))
    }
}

impl From<Vec<usize>> for InstanceLabeling {
    fn from(labels: Vec<usize>) -> Self {
        Self { labels }
    }
}

fn refine_step(g: &ScoreTable, ctx: &PoolContext, delta: f64) -> ScoreTable {
    let mut next = g.clone();
    for u in 0..g.num_proposals() {
        for &(v, w) in &ctx.neighbors[u] {
            for c in 0..g.num_labels() {
                let d = g.get(u, c) - g.get(v, c);
                next.add(u, c, w / (d * d + delta));
            }
        }
    }
    next
}

/// Synchronous neighbour refinement; `n_iters` rounds.
pub fn pairwise_refine(f: &ScoreTable, ctx: &PoolContext, cfg: &InferenceConfig) -> ScoreTable {
    let mut g = f.clone();
    for _ in 0..cfg.n_iters {
        g = refine_step(&g, ctx, cfg.delta);
    }
    g
}

/// All intermediate tables, `trace[0] = F`, `trace[n_iters] = G`.
pub fn refine_trace(f: &ScoreTable, ctx: &PoolContext, cfg: &InferenceConfig) -> Vec<ScoreTable> {
    let mut trace = vec![f.clone()];
    for _ in 0..cfg.n_iters {
        let next = refine_step(trace.last().unwrap(), ctx, cfg.delta);
        trace.push(next);
    }
    trace
}

/// Pull an adjoint on the refined table back to the unrefined one.
pub fn refine_backprop(
    trace: &[ScoreTable],
    ctx: &PoolContext,
    cfg: &InferenceConfig,
    adjoint: &ScoreTable,
) -> ScoreTable {
    let mut a = adjoint.clone();
    for g in trace[..trace.len() - 1].iter().rev() {
        let mut prev = a.clone();
        for u in 0..g.num_proposals() {
            for &(v, w) in &ctx.neighbors[u] {
                for c in 0..g.num_labels() {
                    let (au, av) = (a.get(u, c), a.get(v, c));
                    if au == 0.0 && av == 0.0 {
                        continue;
                    }
                    let d = g.get(u, c) - g.get(v, c);
                    let s = d * d + cfg.delta;
                    prev.add(u, c, w * (-2.0 * d) / (s * s) * (au + av));
                }
            }
        }
        a = prev;
    }
    a
}

/// One coverage demand of the annotation.
#[derive(Debug, Clone, Copy)]
struct Requirement {
    class_id: usize,
    bbox: Option<BBox>,
}

fn requirements(ann: &Annotation) -> Vec<Requirement> {
    let mut reqs = Vec::new();
    let boxes = ann.boxes.as_deref().unwrap_or(&[]);
    for b in boxes {
        reqs.push(Requirement {
            class_id: b.class_id,
            bbox: Some(b.bbox),
        });
    }
    for j in ann.classes() {
        if !boxes.iter().any(|b| b.class_id == j) {
            reqs.push(Requirement { class_id: j, bbox: None });
        }
    }
    reqs
}

fn satisfies(ctx: &PoolContext, u: usize, r: &Requirement, cfg: &InferenceConfig) -> bool {
    match r.bbox {
        None => true,
        Some(b) => box_iou(&ctx.boxes[u], &b) >= cfg.box_overlap,
    }
}

fn req_met(y: &InstanceLabeling, ctx: &PoolContext, r: &Requirement, cfg: &InferenceConfig) -> bool {
    y.selected()
        .any(|(u, c)| c == r.class_id && satisfies(ctx, u, r, cfg))
}

pub fn higher_order_feasible(
    y: &InstanceLabeling,
    ann: &Annotation,
    ctx: &PoolContext,
    cfg: &InferenceConfig,
) -> bool {
    ann.classes().iter().all(|&j| y.labels.contains(&j))
        && requirements(ann).iter().all(|r| req_met(y, ctx, r, cfg))
}

/// Sum of the chosen entries, or `-inf` for an annotation-inconsistent labeling.
pub fn total_score(
    g: &ScoreTable,
    y: &InstanceLabeling,
    ann: &Annotation,
    ctx: &PoolContext,
    cfg: &InferenceConfig,
) -> f64 {
    if !higher_order_feasible(y, ann, ctx, cfg) {
        return f64::NEG_INFINITY;
    }
    y.labels.iter().enumerate().map(|(u, &c)| g.get(u, c)).sum()
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Proposals ordered by descending column-`j` score, ties by index.
fn ranked(g: &ScoreTable, ctx: &PoolContext, j: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..g.num_proposals()).filter(|&u| ctx.allowed[u]).collect();
    order.sort_by(|&a, &b| g.get(b, j).total_cmp(&g.get(a, j)).then(a.cmp(&b)));
    order
}

/// Per-proposal candidate classes and the value of the unforced choice.
fn candidates(
    g: &ScoreTable,
    ctx: &PoolContext,
    classes: &[usize],
    cfg: &InferenceConfig,
) -> (Vec<Vec<bool>>, Vec<f64>) {
    let p = g.num_proposals();
    let mut cand = vec![vec![false; p]; classes.len()];
    let mut value: Vec<f64> = (0..p).map(|u| g.get(u, 0)).collect();
    match cfg.selection {
        SelectionRule::BackgroundMargin => {
            for u in (0..p).filter(|&u| ctx.allowed[u]) {
                let mut best = (0usize, g.get(u, 0));
                for (i, &j) in classes.iter().enumerate() {
                    if g.get(u, j) > best.1 {
                        best = (i + 1, g.get(u, j));
                    }
                }
                if best.0 == 0 {
                    continue;
                }
                let bi = best.0 - 1;
                let rival = std::iter::once(g.get(u, 0))
                    .chain(classes.iter().enumerate().filter(|&(i, _)| i != bi).map(|(_, &j)| g.get(u, j)))
                    .fold(f64::NEG_INFINITY, f64::max);
                if best.1 - rival > cfg.select_threshold {
                    cand[bi][u] = true;
                    value[u] = best.1;
                }
            }
        }
        SelectionRule::MedianCentered => {
            for (i, &j) in classes.iter().enumerate() {
                let col: Vec<f64> = (0..p).filter(|&u| ctx.allowed[u]).map(|u| g.get(u, j)).collect();
                let m = median(col);
                for u in (0..p).filter(|&u| ctx.allowed[u]) {
                    cand[i][u] = g.get(u, j) - m > cfg.select_threshold;
                }
            }
            for u in 0..p {
                if let Some(i) = (0..classes.len()).find(|&i| cand[i][u]) {
                    value[u] = g.get(u, classes[i]);
                }
            }
        }
    }
    (cand, value)
}

/// Demands of class `c` that proposal `u` satisfies, as a bit mask.
fn served(ctx: &PoolContext, u: usize, c: usize, reqs: &[Requirement], cfg: &InferenceConfig) -> usize {
    reqs.iter()
        .enumerate()
        .filter(|(_, q)| q.class_id == c && satisfies(ctx, u, q, cfg))
        .map(|(i, _)| 1 << i)
        .sum()
}

/// Lexicographic goal: most demands served, then least cost, then best rank.
fn improves(count: usize, cost: f64, rank: usize, best: Option<(usize, f64, usize)>) -> bool {
    match best {
        None => true,
        Some((bc, bcost, brank)) => {
            count > bc || (count == bc && (cost < bcost || (cost == bcost && rank < brank)))
        }
    }
}

/// Shared inputs of the representative searches.
struct Coverage<'a> {
    g: &'a ScoreTable,
    ctx: &'a PoolContext,
    reqs: &'a [Requirement],
    value: &'a [f64],
    cfg: &'a InferenceConfig,
    /// `rank[c][u]`: position of `u` in the column-`c` ranking.
    rank: Vec<Vec<usize>>,
    /// Demands that must be served (class presence without a box).
    class_mask: usize,
}

impl Coverage<'_> {
    fn cost(&self, u: usize, c: usize) -> f64 {
        (self.value[u] - self.g.get(u, c)).max(0.0)
    }

    /// Subset DP in which every proposal serves all demands of one class it
    /// satisfies. Ignores overlap between the chosen proposals.
    fn dp(&self) -> Option<Vec<(usize, usize)>> {
        let p = self.g.num_proposals();
        let states = 1usize << self.reqs.len();
        let mut classes: Vec<usize> = self.reqs.iter().map(|q| q.class_id).collect();
        classes.dedup();
        let mut dp: Vec<Option<(usize, f64, usize)>> = vec![None; states];
        dp[0] = Some((0, 0.0, 0));
        // choice[u][t]: (class, previous state) on the best path into t.
        let mut choice = vec![vec![None::<(usize, usize)>; states]; p];
        for u in (0..p).filter(|&u| self.ctx.allowed[u]) {
            let mut next = dp.clone();
            for &c in &classes {
                let m = served(self.ctx, u, c, self.reqs, self.cfg);
                if m == 0 {
                    continue;
                }
                let (cost_u, rank_u) = (self.cost(u, c), self.rank[c][u]);
                for s in 0..states {
                    let Some((_, cost, rank)) = dp[s] else { continue };
                    if m & !s == 0 {
                        continue;
                    }
                    let t = s | m;
                    let cand = (t.count_ones() as usize, cost + cost_u, rank + rank_u);
                    if next[t].map_or(true, |b| cand.1 < b.1 || (cand.1 == b.1 && cand.2 < b.2)) {
                        next[t] = Some(cand);
                        choice[u][t] = Some((c, s));
                    }
                }
            }
            dp = next;
        }
        let mut best: Option<(usize, f64, usize)> = None;
        let mut target = None;
        for t in (0..states).filter(|&t| t & self.class_mask == self.class_mask) {
            if let Some((n, cost, rank)) = dp[t] {
                if improves(n, cost, rank, best) {
                    best = Some((n, cost, rank));
                    target = Some(t);
                }
            }
        }
        let mut s = target?;
        let mut reps = Vec::new();
        for u in (0..p).rev() {
            if s == 0 {
                break;
            }
            if let Some((c, prev)) = choice[u][s] {
                reps.push((u, c));
                s = prev;
            }
        }
        reps.reverse();
        Some(reps)
    }

    fn conflicting(&self, reps: &[(usize, usize)]) -> bool {
        reps.iter().enumerate().any(|(i, &(u, c))| {
            reps[i + 1..]
                .iter()
                .any(|&(v, c2)| c == c2 && self.ctx.conflicts(u, v, self.cfg.overlap_t, self.cfg.overlap_rule))
        })
    }

    /// Exhaustive branch and bound over non-overlapping representatives.
    fn search(&self) -> Option<Vec<(usize, usize)>> {
        struct State {
            chosen: Vec<(usize, usize)>,
            best: Option<(usize, f64, usize)>,
            best_reps: Vec<(usize, usize)>,
        }
        fn go(cov: &Coverage<'_>, st: &mut State, covered: usize, skipped: usize, cost: f64, rank: usize) {
            let r = cov.reqs.len();
            let open = r - (covered | skipped).count_ones() as usize;
            if let Some((bc, bcost, brank)) = st.best {
                let reach = covered.count_ones() as usize + open;
                if reach < bc || (reach == bc && (cost > bcost || (cost == bcost && rank >= brank))) {
                    return;
                }
            }
            let Some(qi) = (0..r).find(|&i| (covered | skipped) & (1 << i) == 0) else {
                let n = covered.count_ones() as usize;
                if improves(n, cost, rank, st.best) {
                    st.best = Some((n, cost, rank));
                    st.best_reps = st.chosen.clone();
                }
                return;
            };
            let q = cov.reqs[qi];
            let c = q.class_id;
            for u in ranked(cov.g, cov.ctx, c) {
                if !satisfies(cov.ctx, u, &q, cov.cfg) || st.chosen.iter().any(|&(v, _)| v == u) {
                    continue;
                }
                if st.chosen.iter().any(|&(v, c2)| {
                    c2 == c && cov.ctx.conflicts(v, u, cov.cfg.overlap_t, cov.cfg.overlap_rule)
                }) {
                    continue;
                }
                let m = served(cov.ctx, u, c, cov.reqs, cov.cfg) & !covered;
                st.chosen.push((u, c));
                go(cov, st, covered | m, skipped & !m, cost + cov.cost(u, c), rank + cov.rank[c][u]);
                st.chosen.pop();
            }
            if q.bbox.is_some() {
                go(cov, st, covered, skipped | (1 << qi), cost, rank);
            }
        }
        let mut st = State {
            chosen: Vec::new(),
            best: None,
            best_reps: Vec::new(),
        };
        go(self, &mut st, 0, 0, 0.0, 0);
        st.best.map(|_| st.best_reps)
    }
}

/// Cheapest set of `(proposal, class)` picks serving the coverage demands.
///
/// A pick serves every demand of its class that it satisfies, and picks of
/// one class never overlap. Cost of a pick is the score given up relative
/// to the unforced label of the proposal. When not every box demand can be
/// served, the largest servable subset is; a missing class demand is an
/// error.
fn assign_representatives(
    g: &ScoreTable,
    ctx: &PoolContext,
    reqs: &[Requirement],
    value: &[f64],
    cfg: &InferenceConfig,
) -> Result<Vec<(usize, usize)>> {
    let mut rank = vec![Vec::new(); g.num_labels()];
    for q in reqs {
        if rank[q.class_id].is_empty() {
            let mut pos = vec![usize::MAX; g.num_proposals()];
            for (k, u) in ranked(g, ctx, q.class_id).into_iter().enumerate() {
                pos[u] = k;
            }
            rank[q.class_id] = pos;
        }
    }
    let class_mask = reqs
        .iter()
        .enumerate()
        .filter(|(_, q)| q.bbox.is_none())
        .map(|(i, _)| 1usize << i)
        .sum();
    let cov = Coverage {
        g,
        ctx,
        reqs,
        value,
        cfg,
        rank,
        class_mask,
    };
    let reps = match cov.dp() {
        Some(r) if !cov.conflicting(&r) => Some(r),
        _ => cov.search(),
    };
    reps.ok_or_else(|| {
        let first = reqs.iter().find(|q| q.bbox.is_none()).map_or(0, |q| q.class_id);
        Error::NoCandidate(first)
    })
}

fn select(
    g: &ScoreTable,
    ctx: &PoolContext,
    classes: &[usize],
    reqs: &[Requirement],
    cfg: &InferenceConfig,
) -> Result<InstanceLabeling> {
    let p = g.num_proposals();
    if ctx.len() != p {
        return Err(crate::error::mismatch(ctx.len(), p));
    }
    let (cand, value) = candidates(g, ctx, classes, cfg);
    let reps = if reqs.is_empty() {
        Vec::new()
    } else {
        assign_representatives(g, ctx, reqs, &value, cfg)?
    };
    let mut y = InstanceLabeling::background(p);
    for &(u, c) in &reps {
        y.labels[u] = c;
    }
    for (i, &j) in classes.iter().enumerate() {
        let mut kept: Vec<usize> = (0..p).filter(|&u| y.labels[u] == j).collect();
        for u in ranked(g, ctx, j) {
            if !cand[i][u] || y.labels[u] != 0 {
                continue;
            }
            if kept.iter().any(|&s| ctx.conflicts(s, u, cfg.overlap_t, cfg.overlap_rule)) {
                continue;
            }
            y.labels[u] = j;
            kept.push(u);
        }
    }
    Ok(y)
}

/// Greedy annotation-consistent inference.
///
/// Annotated classes are processed in ascending id. Each class first gets
/// the proposals needed to satisfy coverage (chosen jointly at least cost),
/// then takes its remaining candidates in descending score order, skipping
/// any that collide with an already kept same-class proposal.
pub fn greedy_infer(
    g: &ScoreTable,
    ctx: &PoolContext,
    ann: &Annotation,
    cfg: &InferenceConfig,
) -> Result<InstanceLabeling> {
    let classes = ann.classes();
    for &j in &classes {
        if j >= g.num_labels() {
            return Err(Error::OutOfRange {
                index: j,
                len: g.num_labels(),
            });
        }
    }
    select(g, ctx, &classes, &requirements(ann), cfg)
}

/// Greedy selection over every class with no coverage term.
pub fn greedy_infer_unconstrained(
    g: &ScoreTable,
    ctx: &PoolContext,
    cfg: &InferenceConfig,
) -> Result<InstanceLabeling> {
    let classes: Vec<usize> = (1..g.num_labels()).collect();
    select(g, ctx, &classes, &[], cfg)
}

pub const EXACT_MAX_PROPOSALS: usize = 12;

/// Exhaustive argmax of [`total_score`] over labelings that use annotated
/// classes only and never keep two same-class proposals overlapping above
/// `overlap_t` in either direction. Ties go to the lexicographically
/// smallest labeling.
pub fn exact_infer(
    g: &ScoreTable,
    ctx: &PoolContext,
    ann: &Annotation,
    cfg: &InferenceConfig,
) -> Result<InstanceLabeling> {
    let p = g.num_proposals();
    if p > EXACT_MAX_PROPOSALS {
        return Err(Error::TooManyProposals {
            max: EXACT_MAX_PROPOSALS,
            actual: p,
        });
    }
    let mut labels: Vec<usize> = vec![0];
    labels.extend(ann.classes());
    let options: Vec<Vec<usize>> = (0..p)
        .map(|u| if ctx.allowed[u] { labels.clone() } else { vec![0] })
        .collect();
    // suffix[u] = best possible contribution of proposals u.. ignoring constraints.
    let mut suffix = vec![0.0; p + 1];
    for u in (0..p).rev() {
        let m = options[u].iter().map(|&c| g.get(u, c)).fold(f64::NEG_INFINITY, f64::max);
        suffix[u] = suffix[u + 1] + m;
    }
    struct Search<'a> {
        g: &'a ScoreTable,
        ctx: &'a PoolContext,
        ann: &'a Annotation,
        cfg: &'a InferenceConfig,
        options: Vec<Vec<usize>>,
        suffix: Vec<f64>,
        current: InstanceLabeling,
        best: Option<(f64, InstanceLabeling)>,
    }
    impl Search<'_> {
        fn go(&mut self, u: usize, acc: f64) {
            let p = self.current.len();
            if let Some((b, _)) = &self.best {
                if acc + self.suffix[u] <= *b {
                    return;
                }
            }
            if u == p {
                if higher_order_feasible(&self.current, self.ann, self.ctx, self.cfg) {
                    self.best = Some((acc, self.current.clone()));
                }
                return;
            }
            for oi in 0..self.options[u].len() {
                let c = self.options[u][oi];
                if c != 0
                    && (0..u).any(|s| {
                        self.current.labels[s] == c
                            && self.ctx.conflicts(s, u, self.cfg.overlap_t, OverlapRule::Symmetric)
                    })
                {
                    continue;
                }
                self.current.labels[u] = c;
                self.go(u + 1, acc + self.g.get(u, c));
                self.current.labels[u] = 0;
            }
        }
    }
    let mut search = Search {
        g,
        ctx,
        ann,
        cfg,
        options,
        suffix,
        current: InstanceLabeling::background(p),
        best: None,
    };
    search.go(0, 0.0);
    search
        .best
        .map(|(_, y)| y)
        .ok_or_else(|| Error::NoCandidate(ann.classes().first().copied().unwrap_or(0)))
}

/// Inference under the given term mode.
pub fn infer(
    g: &ScoreTable,
    ctx: &PoolContext,
    ann: &Annotation,
    cfg: &InferenceConfig,
    mode: TermMode,
) -> Result<InstanceLabeling> {
    if mode.higher_order() {
        greedy_infer(g, ctx, ann, cfg)
    } else {
        greedy_infer_unconstrained(g, ctx, cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub k: usize,
    pub noise: NoiseConfig,
    pub term_mode: TermMode,
    /// Pointwise mode: every sample uses `z = 0`.
    pub zero_noise: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            k: 10,
            noise: NoiseConfig::default(),
            term_mode: TermMode::Full,
            zero_noise: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub noise: NoiseVector,
    /// Scores after refinement (equal to the raw scores when refinement is off).
    pub scores: ScoreTable,
    pub labeling: InstanceLabeling,
}

pub fn draw_noise(scfg: &SamplerConfig, seed: u64, k: usize) -> NoiseVector {
    if scfg.zero_noise {
        NoiseVector::zeros(scfg.noise.dim)
    } else {
        NoiseVector::sample(&scfg.noise, &mut rng::stream(&[seed, k as u64]))
    }
}

/// Scores for one noise draw, refined when the mode asks for it.
pub fn scores_for(
    theta: &CondParams,
    feats: &[FeatureVector],
    ctx: &PoolContext,
    z: &NoiseVector,
    cfg: &InferenceConfig,
    mode: TermMode,
) -> Result<ScoreTable> {
    let f = score_all(theta, feats, z)?;
    Ok(if mode.pairwise() { pairwise_refine(&f, ctx, cfg) } else { f })
}

/// Draw `K` labelings from the conditional distribution.
pub fn sample_k(
    theta: &CondParams,
    feats: &[FeatureVector],
    ctx: &PoolContext,
    ann: &Annotation,
    scfg: &SamplerConfig,
    cfg: &InferenceConfig,
    seed: u64,
) -> Result<Vec<Sample>> {
    if scfg.k == 0 {
        return Err(Error::TooFewSamples { needed: 1, actual: 0 });
    }
    (0..scfg.k)
        .map(|k| {
            let noise = draw_noise(scfg, seed, k);
            let scores = scores_for(theta, feats, ctx, &noise, cfg, scfg.term_mode)?;
            let labeling = infer(&scores, ctx, ann, cfg, scfg.term_mode)?;
            Ok(Sample {
                noise,
                scores,
                labeling,
            })
        })
        .collect()
}
