use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use ndarray::Array2;
use rand::Rng;

use super::SuiteReport;
use crate::autodiff::{ParamStore, Tape};
use crate::error::Result;
use crate::hin::{compose_metapath_adjacency, compose_metapath_counts, GraphBuilder, HeteroGraph, MetaPath, MetaPathStep};
use crate::loss::{bpr_loss, inter_loss, sce_loss};
use crate::mae::{GnnKind, GnnLayer, ViewGraph};
use crate::rng::{derive_seed, seeded, Rng as ChaRng};
use crate::sampler::{build_sample_sets, SampleSets};
use crate::sparse::{CsrPattern, SparseMatrix};
use crate::train::{f1_scores, lightgcn_propagate, rank_eval, split_interactions, LinkEmbeddings};

const HINS: usize = 100;
const MAX_NODES: usize = 30;
const LOSS_TOLERANCE: f64 = 1e-6;
const F1_TOLERANCE: f64 = 1e-9;
const LAYER_TOLERANCE: f64 = 1e-5;

/// Small random heterogeneous graph with its raw edge list and a few closed
/// meta-paths over it.
pub struct RandomHin {
    pub graph: HeteroGraph,
    pub counts: Vec<usize>,
    /// `(relation, source local id, destination local id)`.
    pub edges: Vec<(usize, usize, usize)>,
    pub metapaths: Vec<MetaPath>,
}

/// Random HIN with at most [`MAX_NODES`] nodes over two or three types.
pub fn random_hin(rng: &mut ChaRng) -> Result<RandomHin> {
    let n_types = rng.random_range(2..=3);
    let counts: Vec<usize> = (0..n_types).map(|_| rng.random_range(1..=MAX_NODES / n_types)).collect();
    let mut b = GraphBuilder::new();
    let types: Vec<usize> = (0..n_types).map(|t| b.node_type(&format!("t{t}"))).collect();
    let offset: Vec<usize> = counts.iter().scan(0, |acc, &c| Some(std::mem::replace(acc, *acc + c))).collect();
    for t in 0..n_types {
        for i in 0..counts[t] {
            b.add_node(offset[t] + i, types[t]);
        }
    }
    let mut rels = Vec::new();
    for s in 0..n_types {
        for d in s..n_types {
            let p = if s == d { 0.25 } else { 0.8 };
            if rng.random_bool(p) {
                rels.push((s, d));
            }
        }
    }
    if !rels.iter().any(|&(s, d)| s != d) {
        rels.push((0, 1));
    }
    let mut edges = Vec::new();
    for (r, &(s, d)) in rels.iter().enumerate() {
        let rel = b.relation(&format!("r{r}"), types[s], types[d])?;
        let density = rng.random_range(0.1..0.35);
        for i in 0..counts[s] {
            for j in 0..counts[d] {
                if rng.random_bool(density) {
                    b.add_edge(rel, offset[s] + i, offset[d] + j);
                    edges.push((rel, i, j));
                }
            }
        }
    }
    for t in 0..n_types {
        b.features(types[t], Array2::zeros((counts[t], 1)));
    }
    let graph = b.build()?;

    // Closed meta-paths: a random walk over the schema that either returns to
    // its start on its own or walks its own steps back.
    let moves = |at: usize| -> Vec<(MetaPathStep, usize)> {
        let mut out = Vec::new();
        for (r, &(s, d)) in rels.iter().enumerate() {
            if s == at {
                out.push((MetaPathStep { relation: r, reversed: false }, d));
            }
            if d == at {
                out.push((MetaPathStep { relation: r, reversed: true }, s));
            }
        }
        out
    };
    let mut metapaths = Vec::new();
    let connected: Vec<usize> = (0..n_types).filter(|&t| !moves(t).is_empty()).collect();
    for k in 0..3 {
        let start = connected[rng.random_range(0..connected.len())];
        let mut steps = Vec::new();
        let mut at = start;
        for _ in 0..rng.random_range(1..=3) {
            let options = moves(at);
            let (step, next) = options[rng.random_range(0..options.len())];
            steps.push(step);
            at = next;
        }
        if at != start {
            let back: Vec<MetaPathStep> = steps
                .iter()
                .rev()
                .map(|s| MetaPathStep {
                    relation: s.relation,
                    reversed: !s.reversed,
                })
                .collect();
            steps.extend(back);
        }
        metapaths.push(MetaPath::new(format!("mp{k}"), steps));
    }
    Ok(RandomHin {
        graph,
        counts,
        edges,
        metapaths,
    })
}

/// Number of path instances between every pair of start-type nodes, by
/// explicit depth-first enumeration over the raw edge list.
pub fn enumerate_metapath_counts(h: &RandomHin, mp: &MetaPath) -> BTreeMap<(usize, usize), u64> {
    let g = &h.graph;
    let rel_types = |s: MetaPathStep| {
        let r = &g.relations()[s.relation];
        if s.reversed {
            (r.dst_type, r.src_type)
        } else {
            (r.src_type, r.dst_type)
        }
    };
    let start_type = rel_types(mp.steps[0]).0;
    fn walk(h: &RandomHin, steps: &[MetaPathStep], at: usize, start: usize, out: &mut BTreeMap<(usize, usize), u64>) {
        let Some((&step, rest)) = steps.split_first() else {
            *out.entry((start, at)).or_insert(0) += 1;
            return;
        };
        for &(r, s, d) in &h.edges {
            if r != step.relation {
                continue;
            }
            let (from, to) = if step.reversed { (d, s) } else { (s, d) };
            if from == at {
                walk(h, rest, to, start, out);
            }
        }
    }
    let mut out = BTreeMap::new();
    for u in 0..h.counts[start_type] {
        walk(h, &mp.steps, u, u, &mut out);
    }
    out
}

/// Mismatched entries between the composed meta-path matrices and
/// enumeration, summed over all paths of `HINS` random graphs.
fn metapath_mismatches(seed: u64) -> Result<f64> {
    let mut mismatches = 0usize;
    for k in 0..HINS {
        let h = random_hin(&mut seeded(derive_seed(seed, k as u64)))?;
        for mp in &h.metapaths {
            let truth = enumerate_metapath_counts(&h, mp);
            let counts = compose_metapath_counts(&h.graph, mp)?;
            let adj = compose_metapath_adjacency(&h.graph, mp)?;
            for u in 0..counts.rows() {
                for v in 0..counts.cols() {
                    let expected = truth.get(&(u, v)).copied().unwrap_or(0);
                    mismatches += usize::from(counts.get(u, v) != expected);
                    mismatches += usize::from(adj.contains(u, v) != (expected > 0 && u != v));
                }
            }
        }
    }
    Ok(mismatches as f64)
}

fn mat(rng: &mut ChaRng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-1.0..1.0))
}

fn cosine(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    let (na, nb) = (a.dot(&a).sqrt(), b.dot(&b).sqrt());
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        a.dot(&b) / (na * nb)
    }
}

/// Directional InfoNCE straight from the positive sets: anchors are batch
/// nodes with a positive inside the batch, candidates are the batch minus
/// the anchor.
fn info_nce_oracle(a: &Array2<f64>, b: &Array2<f64>, sets: &SampleSets, batch: &[usize], tau: f64) -> f64 {
    let mut losses = Vec::new();
    for &i in batch {
        let pos: Vec<usize> = batch.iter().copied().filter(|j| sets.positives[i].contains(j)).collect();
        if pos.is_empty() {
            continue;
        }
        let score = |j: usize| (cosine(a.row(i), b.row(j)) / tau).exp();
        let all: f64 = batch.iter().filter(|&&j| j != i).map(|&j| score(j)).sum();
        let num: f64 = pos.iter().map(|&j| score(j)).sum();
        losses.push(-(num / all).ln());
    }
    if losses.is_empty() {
        0.0
    } else {
        losses.iter().sum::<f64>() / losses.len() as f64
    }
}

fn random_sets(rng: &mut ChaRng, n: usize) -> SampleSets {
    let loc: Vec<Vec<usize>> = (0..n).map(|i| (0..n).filter(|&j| j != i && rng.random_bool(0.2)).collect()).collect();
    let sem: Vec<Vec<usize>> = (0..n).map(|_| (0..n).filter(|_| rng.random_bool(0.1)).collect()).collect();
    let degrees: Vec<usize> = (0..n).map(|_| rng.random_range(0..6)).collect();
    build_sample_sets(&loc, &sem, &degrees, 0.5)
}

fn inter_error(rng: &mut ChaRng) -> Result<f64> {
    let (n, d) = (rng.random_range(4..=14), rng.random_range(2..=6));
    let sets = random_sets(rng, n);
    let batch: Vec<usize> = (0..n).filter(|_| rng.random_bool(0.8)).collect();
    let (h1, h2) = (mat(rng, n, d), mat(rng, n, d));
    let (balance, tau) = (rng.random_range(0.0..1.0), rng.random_range(0.1..1.0));
    let plan = sets.contrast_plan(Some(&batch));
    let mut t = Tape::<f64>::new();
    let (a, b) = (t.constant(h1.clone())?, t.constant(h2.clone())?);
    let got = inter_loss(&mut t, a, b, &plan, balance, tau)?;
    let expected = balance * info_nce_oracle(&h1, &h2, &sets, &batch, tau) + (1.0 - balance) * info_nce_oracle(&h2, &h1, &sets, &batch, tau);
    Ok((t.scalar(got) - expected).abs())
}

fn sce_error(rng: &mut ChaRng) -> Result<f64> {
    let (n, d, m) = (rng.random_range(2..=10), rng.random_range(2..=5), rng.random_range(1..=4));
    let views: Vec<Array2<f64>> = (0..m).map(|_| mat(rng, n, d)).collect();
    let rows: Vec<usize> = (0..n).filter(|_| rng.random_bool(0.6)).collect();
    let eta = rng.random_range(1.0..3.0);
    let mut t = Tape::<f64>::new();
    let vars = views.iter().map(|v| t.constant(v.clone())).collect::<Result<Vec<_>, _>>()?;
    let got = sce_loss(&mut t, &vars, &rows, eta)?;
    let (mut total, mut pairs) = (0.0, 0);
    for x in 0..m {
        for z in x + 1..m {
            pairs += 1;
            if rows.is_empty() {
                continue;
            }
            let per: f64 = rows.iter().map(|&r| (1.0 - cosine(views[x].row(r), views[z].row(r))).powf(eta)).sum();
            total += per / rows.len() as f64;
        }
    }
    let expected = if pairs == 0 { 0.0 } else { total / pairs as f64 };
    Ok((t.scalar(got) - expected).abs())
}

fn bpr_error(rng: &mut ChaRng) -> Result<f64> {
    let (u, i, d) = (rng.random_range(1..=8), rng.random_range(2..=10), rng.random_range(1..=6));
    let (users, items) = (mat(rng, u, d).mapv(|v| 3.0 * v), mat(rng, i, d).mapv(|v| 3.0 * v));
    let triples: Vec<(usize, usize, usize)> = (0..rng.random_range(1..=20))
        .map(|_| (rng.random_range(0..u), rng.random_range(0..i), rng.random_range(0..i)))
        .collect();
    let mut t = Tape::<f64>::new();
    let (uv, iv) = (t.constant(users.clone())?, t.constant(items.clone())?);
    let got = bpr_loss(&mut t, uv, iv, &triples)?;
    let expected = -triples
        .iter()
        .map(|&(a, j, k)| {
            let x = users.row(a).dot(&items.row(j)) - users.row(a).dot(&items.row(k));
            (1.0 / (1.0 + (-x).exp())).ln()
        })
        .sum::<f64>()
        / triples.len() as f64;
    Ok((t.scalar(got) - expected).abs())
}

fn random_pattern(rng: &mut ChaRng, rows: usize, cols: usize, p: f64) -> CsrPattern {
    let entries: Vec<(usize, usize)> = (0..rows)
        .flat_map(|r| (0..cols).map(move |c| (r, c)))
        .collect::<Vec<_>>()
        .into_iter()
        .filter(|_| rng.random_bool(p))
        .collect();
    CsrPattern::from_entries(rows, cols, entries)
}

/// Recall@K and NDCG@K by counting, for every candidate, how many other
/// candidates outrank it.
fn rank_errors(rng: &mut ChaRng) -> Result<(f64, f64)> {
    let (u, i, d) = (rng.random_range(2..=10), rng.random_range(3..=20), rng.random_range(1..=4));
    let adj = random_pattern(rng, u, i, 0.4);
    let split = split_interactions(&adj, 0.5, rng.random());
    // Coarse values force score ties.
    let coarse = |rng: &mut ChaRng, r, c| Array2::from_shape_simple_fn((r, c), || rng.random_range(-2i32..=2) as f32 * 0.5);
    let emb = LinkEmbeddings {
        users: coarse(rng, u, d),
        items: coarse(rng, i, d),
    };
    let k = rng.random_range(1..=5);
    let got = match rank_eval(&emb, &split, k) {
        Ok(m) => m,
        Err(_) => return Ok((0.0, 0.0)),
    };
    let (mut recalls, mut ndcgs) = (Vec::new(), Vec::new());
    for user in 0..u {
        let held = &split.test[user];
        if held.is_empty() {
            continue;
        }
        let score = |item: usize| (0..d).map(|c| emb.users[[user, c]] as f64 * emb.items[[item, c]] as f64).sum::<f64>();
        let candidates: Vec<usize> = (0..i).filter(|x| !split.train[user].contains(x)).collect();
        let (mut hits, mut dcg) = (0.0, 0.0);
        for &x in held {
            let rank = candidates.iter().filter(|&&y| score(y) > score(x) || (score(y) == score(x) && y < x)).count();
            if rank < k {
                hits += 1.0;
                dcg += 1.0 / (rank as f64 + 2.0).log2();
            }
        }
        let ideal: f64 = (0..held.len().min(k)).map(|r| 1.0 / (r as f64 + 2.0).log2()).sum();
        recalls.push(hits / held.len() as f64);
        ndcgs.push(dcg / ideal);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(((got.recall_at_k.unwrap() - mean(&recalls)).abs(), (got.ndcg_at_k.unwrap() - mean(&ndcgs)).abs()))
}

fn f1_error(rng: &mut ChaRng) -> f64 {
    let c = rng.random_range(1..=5);
    let n = rng.random_range(1..=60);
    let truth: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
    let pred: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
    let classes: Vec<usize> = (0..c).collect();
    let (macro_f1, micro_f1) = f1_scores(&truth, &pred, &classes);
    let (mut tp_all, mut fp_all, mut fn_all, mut per_class) = (0.0, 0.0, 0.0, 0.0);
    for &k in &classes {
        let tp = (0..n).filter(|&r| truth[r] == k && pred[r] == k).count() as f64;
        let fp = (0..n).filter(|&r| truth[r] != k && pred[r] == k).count() as f64;
        let fn_ = (0..n).filter(|&r| truth[r] == k && pred[r] != k).count() as f64;
        per_class += if tp + fp + fn_ == 0.0 { 0.0 } else { 2.0 * tp / (2.0 * tp + fp + fn_) };
        tp_all += tp;
        fp_all += fp;
        fn_all += fn_;
    }
    let expected_macro = per_class / c as f64;
    let expected_micro = 2.0 * tp_all / (2.0 * tp_all + fp_all + fn_all);
    (macro_f1 - expected_macro).abs().max((micro_f1 - expected_micro).abs())
}

fn max_abs(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    (a - b).iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// LightGCN against dense propagation with `D_u^{-1/2} R D_i^{-1/2}`.
fn lightgcn_error(rng: &mut ChaRng) -> Result<f64> {
    let (u, i, d, layers) = (
        rng.random_range(1..=8),
        rng.random_range(1..=8),
        rng.random_range(1..=4),
        rng.random_range(0..=3),
    );
    let pattern = random_pattern(rng, u, i, 0.4);
    let dense = pattern.to_dense().mapv(|b| if b { 1.0 } else { 0.0 });
    let du: Vec<f64> = (0..u).map(|r| dense.row(r).sum()).collect();
    let di: Vec<f64> = (0..i).map(|c| dense.column(c).sum()).collect();
    let inv = |x: f64| if x > 0.0 { 1.0 / x.sqrt() } else { 0.0 };
    let norm = Array2::from_shape_fn((u, i), |(r, c)| dense[[r, c]] * inv(du[r]) * inv(di[c]));
    let (eu, ei) = (mat(rng, u, d), mat(rng, i, d));
    let (mut cu, mut ci) = (eu.clone(), ei.clone());
    let (mut su, mut si) = (eu.clone(), ei.clone());
    for _ in 0..layers {
        let nu = norm.dot(&ci);
        let ni = norm.t().dot(&cu);
        cu = nu;
        ci = ni;
        su += &cu;
        si += &ci;
    }
    let scale = 1.0 / (layers + 1) as f64;
    let (su, si) = (su * scale, si * scale);

    let sparse = SparseMatrix::<f64>::bipartite_normalized(Arc::new(pattern));
    let sparse_t = Arc::new(sparse.transpose());
    let sparse = Arc::new(sparse);
    let mut t = Tape::new();
    let (a, b) = (t.constant(eu)?, t.constant(ei)?);
    let (ou, oi) = lightgcn_propagate(&mut t, &sparse, &sparse_t, a, b, layers)?;
    Ok(max_abs(t.value(ou), &su).max(max_abs(t.value(oi), &si)))
}

/// GCN layer against `ELU(D^{-1/2} (A + I) D^{-1/2} X W)` in dense form.
fn gcn_error(rng: &mut ChaRng) -> Result<f64> {
    let (n, din, dout) = (rng.random_range(1..=10), rng.random_range(1..=5), rng.random_range(1..=5));
    let half = random_pattern(rng, n, n, 0.3);
    let adjacency = half.union(&half.transpose()).without_diagonal();
    let mut dense = adjacency.to_dense().mapv(|b| if b { 1.0 } else { 0.0 });
    for r in 0..n {
        dense[[r, r]] = 1.0;
    }
    let deg: Vec<f64> = (0..n).map(|r| dense.row(r).sum()).collect();
    let norm = Array2::from_shape_fn((n, n), |(r, c)| dense[[r, c]] / (deg[r] * deg[c]).sqrt());
    let mut store = ParamStore::<f64>::new(rng.random());
    let layer = GnnLayer::new(&mut store, "gcn", GnnKind::Gcn, din, dout, true)?;
    let x = mat(rng, n, din);
    let pre = norm.dot(&x).dot(store.value(layer.weight));
    let expected = pre.mapv(|v| if v > 0.0 { v } else { v.exp() - 1.0 });
    let graph = ViewGraph::new("v", &adjacency);
    let mut t = Tape::new();
    let xv = t.constant(x)?;
    let out = layer.forward(&mut t, &store, &graph, xv)?;
    Ok(max_abs(t.value(out), &expected))
}

/// Every oracle comparison, each repeated over freshly drawn inputs.
pub fn oracle_suite(seed: u64) -> Result<SuiteReport> {
    const TRIALS: usize = 50;
    let started = Instant::now();
    let mut report = SuiteReport::default();
    report.push("metapath_enumeration", metapath_mismatches(derive_seed(seed, 0))?, 0.0);

    let mut rng = seeded(derive_seed(seed, 1));
    let mut worst = [0.0f64; 7];
    for _ in 0..TRIALS {
        worst[0] = worst[0].max(inter_error(&mut rng)?);
        worst[1] = worst[1].max(sce_error(&mut rng)?);
        worst[2] = worst[2].max(bpr_error(&mut rng)?);
        let (recall, ndcg) = rank_errors(&mut rng)?;
        worst[3] = worst[3].max(recall.max(ndcg));
        worst[4] = worst[4].max(f1_error(&mut rng));
        worst[5] = worst[5].max(lightgcn_error(&mut rng)?);
        worst[6] = worst[6].max(gcn_error(&mut rng)?);
    }
    report.push("info_nce", worst[0], LOSS_TOLERANCE);
    report.push("sce", worst[1], LOSS_TOLERANCE);
    report.push("bpr", worst[2], LOSS_TOLERANCE);
    report.push("recall_ndcg", worst[3], LOSS_TOLERANCE);
    report.push("f1", worst[4], F1_TOLERANCE);
    report.push("lightgcn_layer", worst[5], LAYER_TOLERANCE);
    report.push("gcn_layer", worst[6], LAYER_TOLERANCE);
    report.seconds = started.elapsed().as_secs_f64();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_hins_respect_the_size_bound_and_close_their_paths() {
        for k in 0..HINS as u64 {
            let h = random_hin(&mut seeded(k)).unwrap();
            assert!(h.graph.num_nodes() <= MAX_NODES);
            for mp in &h.metapaths {
                mp.target_type(&h.graph).unwrap();
            }
        }
    }

    #[test]
    fn enumeration_counts_a_hand_built_case() {
        // Papers 0,1 share author 2; paper 1 also has author 3.
        let mut b = GraphBuilder::new();
        let p = b.node_type("paper");
        let a = b.node_type("author");
        for (id, t) in [(0, p), (1, p), (2, a), (3, a)] {
            b.add_node(id, t);
        }
        let r = b.relation("PA", p, a).unwrap();
        b.add_edge(r, 0, 2).add_edge(r, 1, 2).add_edge(r, 1, 3);
        let graph = b.build().unwrap();
        let mp = MetaPath::parse(&graph, "paper-author-paper").unwrap();
        let h = RandomHin {
            graph,
            counts: vec![2, 2],
            edges: vec![(0, 0, 0), (0, 1, 0), (0, 1, 1)],
            metapaths: vec![mp.clone()],
        };
        let counts = enumerate_metapath_counts(&h, &mp);
        assert_eq!(counts.get(&(0, 0)), Some(&1));
        assert_eq!(counts.get(&(0, 1)), Some(&1));
        assert_eq!(counts.get(&(1, 1)), Some(&2));
    }
}
