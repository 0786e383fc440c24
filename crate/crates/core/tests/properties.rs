use annoconsist::condnet::{exact_infer, greedy_infer, higher_order_feasible, pairwise_refine, total_score};
use annoconsist::disco::{disc, div_cc};
use annoconsist::eval::{average_precision, pr_area, SceneEval};
use annoconsist::loss::delta;
use annoconsist::prednet::objective_and_grad;
use annoconsist::scorer::table_grad;
use annoconsist::synthgen::LabeledMask;
use annoconsist::*;
use proptest::prelude::*;

const W: usize = 10;

fn rect_strategy() -> impl Strategy<Value = PixelMask> {
    (0..W as i64, 0..W as i64, 1..5i64, 1..5i64).prop_map(|(x, y, w, h)| PixelMask::rect(W, W, x, y, x + w - 1, y + h - 1))
}

fn pool_strategy(max: usize) -> impl Strategy<Value = Vec<PixelMask>> {
    prop::collection::vec(rect_strategy(), 2..=max)
}

/// Pool of disjoint 1x1 cells so that only the adjacency matters.
fn cells(n: usize) -> Vec<PixelMask> {
    (0..n as i64).map(|i| PixelMask::rect(2 * n, 1, 2 * i, 0, 2 * i, 0)).collect()
}

fn labeling(p: usize, labels: usize) -> impl Strategy<Value = InstanceLabeling> {
    prop::collection::vec(0..labels, p).prop_map(InstanceLabeling::from)
}

fn table(p: usize, l: usize) -> impl Strategy<Value = ScoreTable> {
    prop::collection::vec(prop::collection::vec(-2.0..2.0f64, l), p).prop_map(|rows| ScoreTable::from_rows(&rows))
}

fn pred(mask: PixelMask, confidence: f64, proposal: usize) -> InstancePrediction {
    InstancePrediction {
        class_id: 1,
        bbox: tight_box(&mask).unwrap(),
        mask,
        confidence,
        proposal,
    }
}

fn random_adjacency(n: usize, edges: &[(usize, usize, f64)]) -> Adjacency {
    let mut adj = Adjacency::empty(n);
    for &(u, v, w) in edges {
        if u % n != v % n {
            adj.connect(u % n, v % n, w);
        }
    }
    adj
}

fn permute_table(t: &ScoreTable, perm: &[usize]) -> ScoreTable {
    let rows: Vec<Vec<f64>> = perm.iter().map(|&u| t.row(u).to_vec()).collect();
    ScoreTable::from_rows(&rows)
}

fn permute_adjacency(adj: &Adjacency, perm: &[usize]) -> Adjacency {
    // perm[new] = old
    let mut inv = vec![0; perm.len()];
    for (new, &old) in perm.iter().enumerate() {
        inv[old] = new;
    }
    let mut out = Adjacency::empty(adj.len());
    for u in 0..adj.len() {
        for (&v, &w) in adj.neighbors[u].iter().zip(&adj.weights[u]) {
            if u < v {
                out.connect(inv[u], inv[v], w);
            }
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn table_grad_matches_finite_differences(
        mlp in any::<bool>(),
        seed in any::<u64>(),
        p in 1..4usize,
        adj_vals in prop::collection::vec(-1.0..1.0f64, 12),
        feat_vals in prop::collection::vec(-1.0..1.0f64, 12),
        z in prop::collection::vec(0.0..1.0f64, 2),
    ) {
        let theta = CondParams::random(3, 4, mlp.then_some(3), 0.8, seed);
        let feats: Vec<FeatureVector> = (0..p).map(|u| FeatureVector(feat_vals[2 * u..2 * u + 2].to_vec())).collect();
        let z = NoiseVector(z);
        let adj = ScoreTable::from_rows(&(0..p).map(|u| adj_vals[3 * u..3 * u + 3].to_vec()).collect::<Vec<_>>());
        let objective = |t: &CondParams| -> f64 {
            let s = annoconsist::scorer::score_all(t, &feats, &z).unwrap();
            s.values().iter().zip(adj.values()).map(|(a, b)| a * b).sum()
        };
        let mut grad = vec![0.0; theta.len()];
        table_grad(&theta, &feats, &z, &adj, &mut grad);
        let h = 1e-6;
        for i in 0..theta.len() {
            let (mut a, mut b) = (theta.clone(), theta.clone());
            a.weights[i] += h;
            b.weights[i] -= h;
            let fd = (objective(&a) - objective(&b)) / (2.0 * h);
            prop_assert!((fd - grad[i]).abs() < 1e-6 * (1.0 + fd.abs()), "param {}: fd {} vs {}", i, fd, grad[i]);
        }
    }

    #[test]
    fn pred_gradient_matches_finite_differences(
        seed in any::<u64>(),
        self_weight in 0.0..1.0f64,
        ys in prop::collection::vec(labeling(3, 3), 1..4),
        feat_vals in prop::collection::vec(-1.0..1.0f64, 6),
    ) {
        let theta = PredParams::random(3, 2, 0.7, seed);
        let feats: Vec<FeatureVector> = (0..3).map(|u| FeatureVector(feat_vals[2 * u..2 * u + 2].to_vec())).collect();
        let cfg = LossConfig::default();
        let mut grad = vec![0.0; theta.len()];
        objective_and_grad(&theta, &feats, &ys, self_weight, &cfg, Some(&mut grad)).unwrap();
        let h = 1e-6;
        for i in 0..theta.len() {
            let (mut a, mut b) = (theta.clone(), theta.clone());
            a.weights[i] += h;
            b.weights[i] -= h;
            let fa = objective_and_grad(&a, &feats, &ys, self_weight, &cfg, None).unwrap();
            let fb = objective_and_grad(&b, &feats, &ys, self_weight, &cfg, None).unwrap();
            let fd = (fa - fb) / (2.0 * h);
            prop_assert!((fd - grad[i]).abs() < 1e-6 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn pred_objective_ignores_sample_order(
        seed in any::<u64>(),
        ys in prop::collection::vec(labeling(4, 3), 2..6),
        rot in 0..6usize,
    ) {
        let theta = PredParams::random(3, 1, 1.0, seed);
        let feats: Vec<FeatureVector> = (0..4).map(|u| FeatureVector(vec![u as f64 / 4.0])).collect();
        let cfg = LossConfig::default();
        let mut rotated = ys.clone();
        rotated.rotate_left(rot % ys.len());
        let (mut ga, mut gb) = (vec![0.0; theta.len()], vec![0.0; theta.len()]);
        let a = objective_and_grad(&theta, &feats, &ys, 0.5, &cfg, Some(&mut ga)).unwrap();
        let b = objective_and_grad(&theta, &feats, &rotated, 0.5, &cfg, Some(&mut gb)).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
        for (x, y) in ga.iter().zip(&gb) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn refinement_never_lowers_scores(
        f in table(5, 3),
        edges in prop::collection::vec((0..5usize, 0..5usize, 0.0..5.0f64), 0..10),
    ) {
        let adj = random_adjacency(5, &edges);
        let ctx = PoolContext::new(&cells(5), &adj).unwrap();
        let g = pairwise_refine(&f, &ctx, &InferenceConfig::default());
        for (a, b) in f.values().iter().zip(g.values()) {
            prop_assert!(b >= a);
        }
        let bare = PoolContext::new(&cells(5), &Adjacency::empty(5)).unwrap();
        prop_assert_eq!(pairwise_refine(&f, &bare, &InferenceConfig::default()), f);
    }

    #[test]
    fn refinement_commutes_with_relabeling_proposals(
        f in table(5, 3),
        edges in prop::collection::vec((0..5usize, 0..5usize, 0.0..5.0f64), 0..10),
        perm in Just((0..5usize).collect::<Vec<_>>()).prop_shuffle(),
    ) {
        let cfg = InferenceConfig::default();
        let adj = random_adjacency(5, &edges);
        let g = pairwise_refine(&f, &PoolContext::new(&cells(5), &adj).unwrap(), &cfg);
        let ctx_p = PoolContext::new(&cells(5), &permute_adjacency(&adj, &perm)).unwrap();
        let g_p = pairwise_refine(&permute_table(&f, &perm), &ctx_p, &cfg);
        let expect = permute_table(&g, &perm);
        for (a, b) in g_p.values().iter().zip(expect.values()) {
            prop_assert!((a - b).abs() < 1e-9 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn greedy_is_annotation_consistent(
        pool in pool_strategy(8),
        g_vals in prop::collection::vec(-2.0..2.0f64, 8 * 3),
        presence in prop::collection::vec(any::<bool>(), 2),
    ) {
        prop_assume!(presence.iter().any(|&b| b));
        let p = pool.len();
        let g = ScoreTable::from_rows(&(0..p).map(|u| g_vals[3 * u..3 * u + 3].to_vec()).collect::<Vec<_>>());
        let ctx = PoolContext::new(&pool, &Adjacency::empty(p)).unwrap();
        let ann = Annotation::image_level(presence);
        let cfg = InferenceConfig::default();
        let y = greedy_infer(&g, &ctx, &ann, &cfg).unwrap();
        prop_assert!(higher_order_feasible(&y, &ann, &ctx, &cfg));
        let classes = ann.classes();
        for (u, c) in y.selected() {
            prop_assert!(classes.contains(&c));
            for (v, c2) in y.selected() {
                if u != v && c == c2 {
                    prop_assert!(!ctx.conflicts(u, v, cfg.overlap_t, OverlapRule::Symmetric));
                }
            }
        }
        let best = exact_infer(&g, &ctx, &ann, &cfg).unwrap();
        prop_assert!(total_score(&g, &y, &ann, &ctx, &cfg) <= total_score(&g, &best, &ann, &ctx, &cfg) + 1e-12);
    }

    #[test]
    fn greedy_meets_box_requirements(
        pool in pool_strategy(8),
        g_vals in prop::collection::vec(-2.0..2.0f64, 8 * 2),
        pick in prop::collection::vec(0..8usize, 1..3),
    ) {
        let p = pool.len();
        let g = ScoreTable::from_rows(&(0..p).map(|u| g_vals[2 * u..2 * u + 2].to_vec()).collect::<Vec<_>>());
        let ctx = PoolContext::new(&pool, &Adjacency::empty(p)).unwrap();
        // Boxes taken from proposals, so every box has at least one match.
        let boxes = pick.iter().map(|&i| ClassBox { class_id: 1, bbox: ctx.boxes[i % p] }).collect();
        let ann = Annotation { presence: vec![true], boxes: Some(boxes) };
        let cfg = InferenceConfig::default();
        if let Ok(best) = exact_infer(&g, &ctx, &ann, &cfg) {
            let y = greedy_infer(&g, &ctx, &ann, &cfg).unwrap();
            prop_assert!(higher_order_feasible(&y, &ann, &ctx, &cfg));
            for (u, _) in y.selected() {
                for (v, _) in y.selected() {
                    prop_assert!(u == v || !ctx.conflicts(u, v, cfg.overlap_t, OverlapRule::Symmetric));
                }
            }
            prop_assert!(total_score(&g, &y, &ann, &ctx, &cfg) <= total_score(&g, &best, &ann, &ctx, &cfg) + 1e-12);
        }
    }

    #[test]
    fn delta_is_a_metric(
        a in labeling(6, 4),
        b in labeling(6, 4),
        c in labeling(6, 4),
    ) {
        let pool = cells(6);
        let cfg = LossConfig::default();
        let d = |x: &InstanceLabeling, y: &InstanceLabeling| delta(x, y, &pool, &cfg).unwrap().total;
        prop_assert_eq!(d(&a, &a), 0.0);
        prop_assert_eq!(d(&a, &b), d(&b, &a));
        prop_assert!(d(&a, &b) >= 0.0);
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-12);
        prop_assert_eq!(d(&a, &b) == 0.0, a == b);
    }

    #[test]
    fn self_diversity_ignores_sample_order(
        ys in prop::collection::vec(labeling(5, 3), 2..6),
        perm_seed in any::<u64>(),
        probs in prop::collection::vec(prop::collection::vec(0.01..1.0f64, 3), 5),
    ) {
        let pool = cells(5);
        let cfg = LossConfig::default();
        let mut shuffled = ys.clone();
        let n = shuffled.len();
        for i in (1..n).rev() {
            shuffled.swap(i, (perm_seed as usize).wrapping_add(i * 7919) % (i + 1));
        }
        let a = div_cc(&ys, &pool, &cfg).unwrap();
        let b = div_cc(&shuffled, &pool, &cfg).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
        let probs: Vec<Vec<f64>> = probs
            .into_iter()
            .map(|r| { let s: f64 = r.iter().sum(); r.into_iter().map(|v| v / s).collect() })
            .collect();
        let state = PredictiveState { probs };
        let dc = DiscoConfig::default();
        let da = disc(&state, &ys, &pool, &cfg, &dc).unwrap();
        let db = disc(&state, &shuffled, &pool, &cfg, &dc).unwrap();
        prop_assert!((da - db).abs() < 1e-12);
    }

    #[test]
    fn adjacency_is_symmetric(
        pool in pool_strategy(6),
        edge_vals in prop::collection::vec(0.0..1.0f32, W * W),
        dilation in 1..3usize,
    ) {
        let mut edges = EdgeMap::zeros(W, W);
        for (i, &v) in edge_vals.iter().enumerate() {
            edges.set(i % W, i / W, v);
        }
        let adj = build_adjacency(&pool, &edges, dilation).unwrap();
        prop_assert!(adj.is_symmetric());
        for u in 0..adj.len() {
            prop_assert!(adj.weights[u].iter().all(|&w| w >= 0.0));
            prop_assert!(!adj.neighbors[u].contains(&u));
        }
        // Overlapping proposals always touch.
        for u in 0..pool.len() {
            for v in u + 1..pool.len() {
                if pool[u].intersects(&pool[v]) {
                    prop_assert!(adj.edge_weight(u, v).is_some());
                }
            }
        }
    }

    #[test]
    fn pr_area_matches_direct_sum(hits in prop::collection::vec(any::<bool>(), 0..8), extra in 0..3usize) {
        let n_gt = hits.iter().filter(|&&h| h).count() + extra;
        prop_assume!(n_gt > 0);
        // Each hit contributes 1/n_gt times the best precision at or below its rank.
        let prec: Vec<f64> = (0..hits.len())
            .map(|i| hits[..=i].iter().filter(|&&h| h).count() as f64 / (i + 1) as f64)
            .collect();
        let direct: f64 = (0..hits.len())
            .filter(|&i| hits[i])
            .map(|i| prec[i..].iter().copied().fold(0.0, f64::max) / n_gt as f64)
            .sum();
        prop_assert!((pr_area(&hits, n_gt) - direct).abs() < 1e-12);
    }

    #[test]
    fn average_precision_matches_brute_force(
        gts in prop::collection::vec(rect_strategy(), 1..4),
        preds in prop::collection::vec((rect_strategy(), 0.0..1.0f64), 0..6),
        thresh in 0.1..0.9f64,
    ) {
        let gts: Vec<LabeledMask> = gts.into_iter().map(|mask| LabeledMask { class_id: 1, mask }).collect();
        let preds: Vec<InstancePrediction> = preds
            .into_iter()
            .enumerate()
            .map(|(proposal, (mask, confidence))| pred(mask, confidence, proposal))
            .collect();
        let scenes = [SceneEval { preds: &preds, gts: &gts }];
        let ap = average_precision(&scenes, 1, thresh).unwrap().unwrap();
        // Independent oracle: stable sort, greedy best-IoU match, then the
        // precision envelope summed over recall steps.
        let mut order: Vec<usize> = (0..preds.len()).collect();
        order.sort_by(|&a, &b| preds[b].confidence.partial_cmp(&preds[a].confidence).unwrap());
        let mut used = vec![false; gts.len()];
        let mut tp = 0;
        let mut curve = Vec::new();
        for (rank, &i) in order.iter().enumerate() {
            let best = (0..gts.len())
                .filter(|&g| !used[g])
                .map(|g| (mask_iou(&preds[i].mask, &gts[g].mask).unwrap(), g))
                .fold(None::<(f64, usize)>, |acc, x| match acc { Some(a) if a.0 >= x.0 => Some(a), _ => Some(x) });
            let hit = matches!(best, Some((iou, _)) if iou >= thresh);
            if hit {
                used[best.unwrap().1] = true;
                tp += 1;
            }
            curve.push((hit, tp as f64 / (rank + 1) as f64));
        }
        let mut oracle = 0.0;
        for i in 0..curve.len() {
            if curve[i].0 {
                oracle += curve[i..].iter().map(|c| c.1).fold(0.0, f64::max) / gts.len() as f64;
            }
        }
        prop_assert!((ap - oracle).abs() < 1e-12, "ap {} oracle {}", ap, oracle);
    }

    #[test]
    fn average_precision_monotone_and_scale_free(
        gts in prop::collection::vec(rect_strategy(), 1..4),
        preds in prop::collection::vec((rect_strategy(), 0.01..1.0f64), 0..6),
        t1 in 0.05..0.95f64,
        t2 in 0.05..0.95f64,
        scale in 0.1..10.0f64,
    ) {
        let gts: Vec<LabeledMask> = gts.into_iter().map(|mask| LabeledMask { class_id: 1, mask }).collect();
        let preds: Vec<InstancePrediction> = preds
            .into_iter()
            .enumerate()
            .map(|(proposal, (mask, confidence))| pred(mask, confidence, proposal))
            .collect();
        let scaled: Vec<InstancePrediction> = preds
            .iter()
            .map(|p| InstancePrediction { confidence: p.confidence * scale, ..p.clone() })
            .collect();
        let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
        let ap = |ps: &[InstancePrediction], t: f64| {
            average_precision(&[SceneEval { preds: ps, gts: &gts }], 1, t).unwrap().unwrap()
        };
        prop_assert!(ap(&preds, lo) >= ap(&preds, hi));
        prop_assert_eq!(ap(&preds, lo), ap(&scaled, lo));
    }
}
