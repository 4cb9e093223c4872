use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;

use super::node::{divergence, epoch_batch, BranchForward, MetaPathBranch};
use super::{build_sample_sets_for, mean_std, resolve_metapaths, MetricsReport, TrainError};
use crate::autodiff::{Adam, Init, ParamId, ParamStore, Real, Tape, Var};
use crate::config::RunConfig;
use crate::error::Result;
use crate::hin::HeteroGraph;
use crate::loss::{bpr_loss, hcl_total, inter_loss, link_total, sce_loss, LossWeights};
use crate::mae::{generative_loss, MaskPlan};
use crate::rng::{derive_seed, seeded};
use crate::sampler::SampleSets;
use crate::sparse::{CsrPattern, SparseMatrix};

/// Per-user held-out interactions. Item lists are sorted local indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InteractionSplit {
    pub num_items: usize,
    pub train: Vec<Vec<usize>>,
    pub test: Vec<Vec<usize>>,
}

impl InteractionSplit {
    pub fn train_pattern(&self) -> CsrPattern {
        CsrPattern::from_entries(
            self.train.len(),
            self.num_items,
            self.train.iter().enumerate().flat_map(|(u, items)| items.iter().map(move |&i| (u, i))),
        )
    }

    pub fn num_train(&self) -> usize {
        self.train.iter().map(Vec::len).sum()
    }
}

/// Holds out `round(test_fraction · deg)` interactions of every user with at
/// least two, always keeping one for training.
pub fn split_interactions(adj: &CsrPattern, test_fraction: f64, seed: u64) -> InteractionSplit {
    let mut train = Vec::with_capacity(adj.rows());
    let mut test = Vec::with_capacity(adj.rows());
    for u in 0..adj.rows() {
        let mut items = adj.row(u).to_vec();
        items.shuffle(&mut seeded(derive_seed(seed, u as u64)));
        let n_test = if items.len() < 2 {
            0
        } else {
            ((test_fraction * items.len() as f64).round() as usize).clamp(usize::from(test_fraction > 0.0), items.len() - 1)
        };
        let mut held: Vec<usize> = items.drain(..n_test).collect();
        held.sort_unstable();
        items.sort_unstable();
        test.push(held);
        train.push(items);
    }
    InteractionSplit {
        num_items: adj.cols(),
        train,
        test,
    }
}

/// One uniform non-interacted item per training interaction.
pub fn sample_bpr_triples(split: &InteractionSplit, seed: u64) -> Vec<(usize, usize, usize)> {
    let mut rng = seeded(seed);
    let mut out = Vec::with_capacity(split.num_train());
    for (u, items) in split.train.iter().enumerate() {
        if items.len() >= split.num_items {
            continue;
        }
        for &i in items {
            let k = loop {
                let k = rng.random_range(0..split.num_items);
                if items.binary_search(&k).is_err() {
                    break k;
                }
            };
            out.push((u, i, k));
        }
    }
    out
}

/// Parameter-free LightGCN propagation; the result is the mean of the layer
/// 0..=`layers` embeddings.
pub fn lightgcn_propagate<T: Real>(
    tape: &mut Tape<T>,
    norm: &Arc<SparseMatrix<T>>,
    norm_t: &Arc<SparseMatrix<T>>,
    users: Var,
    items: Var,
    layers: usize,
) -> Result<(Var, Var)> {
    let (mut eu, mut ei) = (users, items);
    let (mut su, mut si) = (users, items);
    for _ in 0..layers {
        let nu = tape.sparse_dense_matmul(norm, ei)?;
        let ni = tape.sparse_dense_matmul(norm_t, eu)?;
        eu = nu;
        ei = ni;
        su = tape.add(su, eu)?;
        si = tape.add(si, ei)?;
    }
    let scale = T::one() / T::from_usize(layers + 1).unwrap();
    Ok((tape.scalar_mul(su, scale)?, tape.scalar_mul(si, scale)?))
}

/// LightGCN over projected features in place of the schema view, plus a
/// meta-path branch per side.
#[derive(Clone, Debug)]
pub struct LinkModel<T> {
    pub user_type: usize,
    pub item_type: usize,
    pub layers: usize,
    pub norm: Arc<SparseMatrix<T>>,
    pub norm_t: Arc<SparseMatrix<T>>,
    pub user_proj: ParamId,
    pub item_proj: ParamId,
    pub user_branch: Option<MetaPathBranch<T>>,
    pub item_branch: Option<MetaPathBranch<T>>,
    user_features: Array2<T>,
    item_features: Array2<T>,
}

pub struct LinkForward {
    pub user_h0: Var,
    pub item_h0: Var,
    pub user_h1: Var,
    pub item_h1: Var,
    pub user_branch: Option<BranchForward>,
    pub item_branch: Option<BranchForward>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinkEmbeddings {
    pub users: Array2<f32>,
    pub items: Array2<f32>,
}

/// Orients `relation` as users x items.
fn interaction_pattern(g: &HeteroGraph, cfg: &RunConfig) -> Result<(usize, usize, usize, CsrPattern)> {
    let user_type = g.type_id(&cfg.dataset.user_type)?;
    let item_type = g.type_id(&cfg.dataset.item_type)?;
    let r = g.relation_id(&cfg.dataset.interaction)?;
    let rel = &g.relations()[r];
    let pattern = if (rel.src_type, rel.dst_type) == (user_type, item_type) {
        (**g.adjacency(r)).clone()
    } else if (rel.src_type, rel.dst_type) == (item_type, user_type) {
        g.adjacency(r).transpose()
    } else {
        return Err(TrainError::Setup(format!(
            "relation `{}` does not join `{}` and `{}`",
            rel.name, cfg.dataset.user_type, cfg.dataset.item_type
        ))
        .into());
    };
    Ok((user_type, item_type, r, pattern))
}

impl<T: Real> LinkModel<T> {
    /// `g` must already hold only the training interactions.
    pub fn new(g: &HeteroGraph, cfg: &RunConfig, store: &mut ParamStore<T>) -> Result<Self> {
        let (user_type, item_type, _, pattern) = interaction_pattern(g, cfg)?;
        let norm = SparseMatrix::bipartite_normalized(Arc::new(pattern));
        let norm_t = Arc::new(norm.transpose());
        let d = cfg.model.hidden;
        let xu = g.require_features(user_type)?;
        let xi = g.require_features(item_type)?;
        let user_proj = store.register("link.proj.user", xu.ncols(), d, Init::XavierUniform)?;
        let item_proj = store.register("link.proj.item", xi.ncols(), d, Init::XavierUniform)?;
        let branch = |specs: &[String], prefix: &str, store: &mut ParamStore<T>| -> Result<Option<MetaPathBranch<T>>> {
            if specs.is_empty() {
                return Ok(None);
            }
            let paths = resolve_metapaths(g, specs)?;
            Ok(Some(MetaPathBranch::new(g, &paths, prefix, &cfg.model, store)?))
        };
        let user_branch = branch(&cfg.dataset.user_metapaths, "user_mp", store)?;
        let item_branch = branch(&cfg.dataset.item_metapaths, "item_mp", store)?;
        Ok(Self {
            user_type,
            item_type,
            layers: cfg.model.lightgcn_layers,
            norm: Arc::new(norm),
            norm_t,
            user_proj,
            item_proj,
            user_branch,
            item_branch,
            user_features: xu.mapv(|v| T::of(v as f64)),
            item_features: xi.mapv(|v| T::of(v as f64)),
        })
    }

    pub fn forward(&self, tape: &mut Tape<T>, store: &ParamStore<T>, user_plan: &MaskPlan, item_plan: &MaskPlan) -> Result<LinkForward> {
        let xu = tape.constant(self.user_features.clone())?;
        let xi = tape.constant(self.item_features.clone())?;
        let pu = tape.param(store, self.user_proj)?;
        let pi = tape.param(store, self.item_proj)?;
        let user_h0 = tape.matmul(xu, pu)?;
        let item_h0 = tape.matmul(xi, pi)?;
        let (user_h1, item_h1) = lightgcn_propagate(tape, &self.norm, &self.norm_t, user_h0, item_h0, self.layers)?;
        let user_branch = match &self.user_branch {
            Some(b) => Some(b.forward(tape, store, user_plan)?),
            None => None,
        };
        let item_branch = match &self.item_branch {
            Some(b) => Some(b.forward(tape, store, item_plan)?),
            None => None,
        };
        Ok(LinkForward {
            user_h0,
            item_h0,
            user_h1,
            item_h1,
            user_branch,
            item_branch,
        })
    }

    /// `λ_hcl ℒ_hcl + λ_bpr ℒ_BPR` for one epoch, returned with the BPR term.
    /// Sides without a meta-path branch or sample sets add no HCL term.
    #[allow(clippy::too_many_arguments)]
    pub fn objective(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        plans: (&MaskPlan, &MaskPlan),
        sets: (Option<&SampleSets>, Option<&SampleSets>),
        triples: &[(usize, usize, usize)],
        cfg: &RunConfig,
        epoch_seed: u64,
    ) -> Result<(Var, Var)> {
        let fwd = self.forward(tape, store, plans.0, plans.1)?;
        let bpr = bpr_loss(tape, fwd.user_h1, fwd.item_h1, triples)?;
        let mut hcl = tape.constant(Array2::zeros((1, 1)))?;
        let sides = [
            (fwd.user_h0, fwd.user_h1, &fwd.user_branch, sets.0, plans.0, 4),
            (fwd.item_h0, fwd.item_h1, &fwd.item_branch, sets.1, plans.1, 5),
        ];
        for (h0, h1, branch, side_sets, plan, stream) in sides {
            if let (Some(b), Some(s)) = (branch, side_sets) {
                let seed = derive_seed(epoch_seed, stream);
                let l = side_loss(tape, h0, h1, b, s, plan, cfg.sampling.batch_size, seed, &cfg.losses)?;
                hcl = tape.add(hcl, l)?;
            }
        }
        let total = link_total(tape, hcl, bpr, &cfg.losses)?;
        Ok((total, bpr))
    }

    pub fn embed(&self, store: &ParamStore<T>) -> Result<LinkEmbeddings> {
        let mut tape = Tape::new();
        let fwd = self.forward(
            &mut tape,
            store,
            &MaskPlan::none(self.user_features.nrows()),
            &MaskPlan::none(self.item_features.nrows()),
        )?;
        Ok(LinkEmbeddings {
            users: tape.value(fwd.user_h1).mapv(|x| x.as_f64() as f32),
            items: tape.value(fwd.item_h1).mapv(|x| x.as_f64() as f32),
        })
    }
}

/// Self-supervised loss of one side: generative, intra and inter terms.
#[allow(clippy::too_many_arguments)]
fn side_loss<T: Real>(
    tape: &mut Tape<T>,
    h0: Var,
    h1: Var,
    branch: &BranchForward,
    sets: &SampleSets,
    plan: &MaskPlan,
    batch_size: usize,
    seed: u64,
    w: &LossWeights,
) -> Result<Var> {
    let gen = generative_loss(tape, h0, branch.fused, &plan.mask)?;
    let intra = sce_loss(tape, &branch.views, &sets.intra, w.eta)?;
    let batch = epoch_batch(sets.num_nodes(), batch_size, seed);
    let contrast = sets.contrast_plan(batch.as_deref());
    let inter = inter_loss(tape, h1, branch.fused, &contrast, w.balance, w.tau)?;
    hcl_total(tape, intra, inter, gen, w)
}

/// Seeded per-user split and the graph holding only training interactions.
pub fn prepare_link(g: &HeteroGraph, cfg: &RunConfig) -> Result<(InteractionSplit, HeteroGraph)> {
    let (user_type, _, r, full) = interaction_pattern(g, cfg)?;
    let split = split_interactions(&full, cfg.eval.test_fraction, derive_seed(cfg.train.seed, 0x5B11));
    let train_pattern = split.train_pattern();
    let stored = if user_type == g.relations()[r].src_type {
        train_pattern
    } else {
        train_pattern.transpose()
    };
    let train_graph = g.with_relation_edges(r, stored);
    Ok((split, train_graph))
}

/// Rebuilds the link model for `cfg`, loads `checkpoint` and ranks the
/// held-out interactions of the same seeded split.
pub fn evaluate_link_checkpoint(g: &HeteroGraph, cfg: &RunConfig, checkpoint: &Path) -> Result<MetricsReport> {
    let (split, train_graph) = prepare_link(g, cfg)?;
    let mut store = ParamStore::<f32>::new(cfg.train.seed);
    let model = LinkModel::new(&train_graph, cfg, &mut store)?;
    store.load_checkpoint(checkpoint)?;
    rank_eval(&model.embed(&store)?, &split, cfg.eval.k)
}

pub struct LinkTrained {
    pub model: LinkModel<f32>,
    pub store: ParamStore<f32>,
    pub split: InteractionSplit,
    pub embeddings: LinkEmbeddings,
    pub losses: Vec<f64>,
    pub bpr_losses: Vec<f64>,
    pub epoch_seconds: Vec<f64>,
}

/// Splits the interactions, then optimises `λ_hcl ℒ_hcl + λ_bpr ℒ_BPR` on the
/// training graph.
pub fn train_link(g: &HeteroGraph, cfg: &RunConfig, cache_dir: Option<&Path>) -> Result<LinkTrained> {
    cfg.validate()?;
    let seed = cfg.train.seed;
    let (split, train_graph) = prepare_link(g, cfg)?;

    let mut store = ParamStore::<f32>::new(seed);
    let model = LinkModel::new(&train_graph, cfg, &mut store)?;
    let sets_for = |branch: &Option<MetaPathBranch<f32>>, stream: u64| -> Result<Option<SampleSets>> {
        match branch {
            None => Ok(None),
            Some(b) => {
                let mut side = cfg.clone();
                side.train.seed = derive_seed(seed, stream);
                Ok(Some(build_sample_sets_for(&train_graph, &b.index.paths, &side, cache_dir)?))
            }
        }
    };
    let user_sets = sets_for(&model.user_branch, 1)?;
    let item_sets = sets_for(&model.item_branch, 2)?;

    let n_users = split.train.len();
    let n_items = split.num_items;
    let mut adam = Adam::with_lr(cfg.train.lr);
    let (mut losses, mut bpr_losses, mut epoch_seconds) = (Vec::new(), Vec::new(), Vec::new());
    for epoch in 0..cfg.train.epochs {
        let started = Instant::now();
        let es = derive_seed(seed, 0x30_0000 + epoch as u64);
        let p = cfg.model.mask_ratio;
        let p2 = cfg.model.effective_remask_ratio();
        let user_plan = MaskPlan::sample(n_users, p, p2, derive_seed(es, 1));
        let item_plan = MaskPlan::sample(n_items, p, p2, derive_seed(es, 2));
        let triples = sample_bpr_triples(&split, derive_seed(es, 3));
        let mut tape = Tape::new();
        let step = (|| -> Result<(f64, f64)> {
            let sets = (user_sets.as_ref(), item_sets.as_ref());
            let (total, bpr) = model.objective(&mut tape, &store, (&user_plan, &item_plan), sets, &triples, cfg, es)?;
            tape.backward_into(total, &mut store)?;
            Ok((tape.scalar(total) as f64, tape.scalar(bpr) as f64))
        })();
        let (loss, bpr) = step.map_err(|e| divergence(epoch, e))?;
        if !loss.is_finite() {
            return Err(TrainError::Divergence {
                epoch,
                detail: format!("loss = {loss}"),
            }
            .into());
        }
        adam.step(&mut store);
        losses.push(loss);
        bpr_losses.push(bpr);
        epoch_seconds.push(started.elapsed().as_secs_f64());
    }
    let embeddings = model.embed(&store)?;
    Ok(LinkTrained {
        model,
        store,
        split,
        embeddings,
        losses,
        bpr_losses,
        epoch_seconds,
    })
}

/// Recall@K and NDCG@K over users with held-out items. Training items are
/// excluded from the candidates; ties rank the lower item index first.
pub fn rank_eval(emb: &LinkEmbeddings, split: &InteractionSplit, k: usize) -> Result<MetricsReport> {
    let scores = emb.users.mapv(|v| v as f64).dot(&emb.items.mapv(|v| v as f64).t());
    let (mut recalls, mut ndcgs) = (Vec::new(), Vec::new());
    for (u, held) in split.test.iter().enumerate() {
        if held.is_empty() {
            continue;
        }
        let train = &split.train[u];
        let mut candidates: Vec<usize> = (0..split.num_items).filter(|i| train.binary_search(i).is_err()).collect();
        candidates.sort_by(|&a, &b| scores[[u, b]].total_cmp(&scores[[u, a]]).then(a.cmp(&b)));
        let (mut hits, mut dcg) = (0usize, 0.0);
        for (rank, item) in candidates.iter().take(k).enumerate() {
            if held.binary_search(item).is_ok() {
                hits += 1;
                dcg += 1.0 / ((rank + 2) as f64).log2();
            }
        }
        let ideal: f64 = (0..held.len().min(k)).map(|r| 1.0 / ((r + 2) as f64).log2()).sum();
        recalls.push(hits as f64 / held.len() as f64);
        ndcgs.push(dcg / ideal);
    }
    if recalls.is_empty() {
        return Err(TrainError::NoTestInteractions.into());
    }
    Ok(MetricsReport {
        recall_at_k: Some(mean_std(&recalls).0),
        ndcg_at_k: Some(mean_std(&ndcgs).0),
        ..MetricsReport::default()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn split_keeps_a_training_item() {
        let adj = CsrPattern::from_entries(3, 6, [(0, 0), (0, 1), (0, 2), (0, 3), (0, 4), (1, 5), (2, 1), (2, 2)]);
        let s = split_interactions(&adj, 0.2, 7);
        assert_eq!(s.test[0].len(), 1);
        assert_eq!(s.train[0].len(), 4);
        assert!(s.test[1].is_empty());
        assert_eq!(s.test[2].len(), 1);
        for u in 0..3 {
            let mut all: Vec<usize> = s.train[u].iter().chain(&s.test[u]).copied().collect();
            all.sort_unstable();
            assert_eq!(all, adj.row(u));
        }
        assert_eq!(s, split_interactions(&adj, 0.2, 7));
    }

    #[test]
    fn bpr_triples_use_unseen_negatives() {
        let adj = CsrPattern::from_entries(2, 5, [(0, 0), (0, 3), (1, 1)]);
        let s = split_interactions(&adj, 0.0, 1);
        let t = sample_bpr_triples(&s, 4);
        assert_eq!(t.len(), 3);
        for &(u, i, k) in &t {
            assert!(s.train[u].contains(&i) && !s.train[u].contains(&k));
        }
    }

    fn propagate(pattern: &CsrPattern, u: Array2<f64>, i: Array2<f64>, layers: usize) -> (Array2<f64>, Array2<f64>) {
        let norm = SparseMatrix::<f64>::bipartite_normalized(Arc::new(pattern.clone()));
        let norm_t = Arc::new(norm.transpose());
        let mut t = Tape::new();
        let (uv, iv) = (t.constant(u).unwrap(), t.constant(i).unwrap());
        let (a, b) = lightgcn_propagate(&mut t, &Arc::new(norm), &norm_t, uv, iv, layers).unwrap();
        (t.value(a).clone(), t.value(b).clone())
    }

    #[test]
    fn lightgcn_trivial_cases() {
        let p = CsrPattern::from_entries(1, 1, [(0, 0)]);
        let (u, i) = (array![[1.0, 2.0]], array![[3.0, -1.0]]);
        let (u0, i0) = propagate(&p, u.clone(), i.clone(), 0);
        assert_eq!((u0, i0), (u.clone(), i.clone()));
        let (u1, i1) = propagate(&p, u.clone(), i.clone(), 1);
        assert_eq!(u1, (&u + &i) / 2.0);
        assert_eq!(i1, (&u + &i) / 2.0);
    }

    #[test]
    fn lightgcn_matches_dense_oracle() {
        let p = CsrPattern::from_entries(4, 5, [(0, 0), (0, 2), (1, 2), (1, 3), (2, 4), (3, 0), (3, 1), (3, 4)]);
        let u = Array2::from_shape_fn((4, 3), |(a, b)| ((a * 3 + b) as f64).sin());
        let i = Array2::from_shape_fn((5, 3), |(a, b)| ((a * 5 + b) as f64).cos());
        let (gu, gi) = propagate(&p, u.clone(), i.clone(), 3);
        // Full (users + items) adjacency with symmetric normalisation.
        let n = 9;
        let mut a = Array2::<f64>::zeros((n, n));
        for (r, c) in p.entries() {
            a[[r, 4 + c]] = 1.0;
            a[[4 + c, r]] = 1.0;
        }
        let deg: Vec<f64> = a.rows().into_iter().map(|r| r.sum()).collect();
        let norm = Array2::from_shape_fn((n, n), |(x, y)| if a[[x, y]] > 0.0 { 1.0 / (deg[x] * deg[y]).sqrt() } else { 0.0 });
        let mut e = ndarray::concatenate(ndarray::Axis(0), &[u.view(), i.view()]).unwrap();
        let mut sum = e.clone();
        for _ in 0..3 {
            e = norm.dot(&e);
            sum = sum + &e;
        }
        let want = sum / 4.0;
        for r in 0..4 {
            for c in 0..3 {
                assert!((gu[[r, c]] - want[[r, c]]).abs() < 1e-12);
            }
        }
        for r in 0..5 {
            for c in 0..3 {
                assert!((gi[[r, c]] - want[[4 + r, c]]).abs() < 1e-12);
            }
        }
    }

    /// Brute-force metrics: rank by explicit pairwise comparison counts.
    fn oracle(scores: &Array2<f64>, split: &InteractionSplit, k: usize) -> (f64, f64) {
        let (mut rs, mut ns, mut users) = (0.0, 0.0, 0.0);
        for u in 0..scores.nrows() {
            if split.test[u].is_empty() {
                continue;
            }
            users += 1.0;
            let cands: Vec<usize> = (0..split.num_items).filter(|i| !split.train[u].contains(i)).collect();
            let (mut hits, mut dcg) = (0.0, 0.0);
            for &i in &split.test[u] {
                let rank = cands
                    .iter()
                    .filter(|&&j| scores[[u, j]] > scores[[u, i]] || (scores[[u, j]] == scores[[u, i]] && j < i))
                    .count();
                if rank < k {
                    hits += 1.0;
                    dcg += 1.0 / (rank as f64 + 2.0).log2();
                }
            }
            let idcg: f64 = (0..split.test[u].len().min(k)).map(|r| 1.0 / (r as f64 + 2.0).log2()).sum();
            rs += hits / split.test[u].len() as f64;
            ns += dcg / idcg;
        }
        (rs / users, ns / users)
    }

    #[test]
    fn rank_metrics_match_oracle_and_trivial_case() {
        let mut rng = seeded(3);
        let (nu, ni) = (12, 30);
        let entries: Vec<(usize, usize)> = (0..nu).flat_map(|u| (0..ni).map(move |i| (u, i))).filter(|_| rng.random_bool(0.2)).collect();
        let adj = CsrPattern::from_entries(nu, ni, entries);
        let split = split_interactions(&adj, 0.4, 2);
        let mut rng = seeded(5);
        let emb = LinkEmbeddings {
            users: Array2::from_shape_simple_fn((nu, 4), || rng.random_range(-1.0f32..1.0)),
            items: Array2::from_shape_simple_fn((ni, 4), || rng.random_range(-1.0f32..1.0)),
        };
        let scores = emb.users.mapv(|v| v as f64).dot(&emb.items.mapv(|v| v as f64).t());
        for k in [1, 5, 20] {
            let r = rank_eval(&emb, &split, k).unwrap();
            let (recall, ndcg) = oracle(&scores, &split, k);
            assert!((r.recall_at_k.unwrap() - recall).abs() < 1e-12);
            assert!((r.ndcg_at_k.unwrap() - ndcg).abs() < 1e-12);
        }

        // The held-out item scores highest.
        let split = InteractionSplit {
            num_items: 3,
            train: vec![vec![0]],
            test: vec![vec![2]],
        };
        let emb = LinkEmbeddings {
            users: array![[1.0f32]],
            items: array![[9.0f32], [0.0], [5.0]],
        };
        let r = rank_eval(&emb, &split, 20).unwrap();
        assert_eq!((r.recall_at_k, r.ndcg_at_k), (Some(1.0), Some(1.0)));
        let none = InteractionSplit { test: vec![vec![]], ..split };
        assert!(rank_eval(&emb, &none, 20).is_err());
    }

    #[test]
    fn random_scores_recall_is_k_over_candidates() {
        // One relevant item among C candidates: E[Recall@K] = K / C.
        let (users, c, k) = (4000, 50, 10);
        let split = InteractionSplit {
            num_items: c,
            train: vec![Vec::new(); users],
            test: (0..users).map(|u| vec![u % c]).collect(),
        };
        let mut rng = seeded(11);
        let emb = LinkEmbeddings {
            users: Array2::from_shape_simple_fn((users, 8), || rng.random_range(-1.0f32..1.0)),
            items: Array2::from_shape_simple_fn((c, 8), || rng.random_range(-1.0f32..1.0)),
        };
        let r = rank_eval(&emb, &split, k).unwrap();
        let expected = k as f64 / c as f64;
        let sigma = (expected * (1.0 - expected) / users as f64).sqrt();
        assert!((r.recall_at_k.unwrap() - expected).abs() < 4.0 * sigma + 0.02);
    }

    #[test]
    fn trained_link_model_beats_chance() {
        use crate::synthetic::{generate_link_synthetic, LinkSpec};
        let g = generate_link_synthetic(&LinkSpec {
            n_users: 80,
            n_items: 100,
            n_categories: 8,
            intra_edge_prob: 0.15,
            inter_edge_prob: 0.005,
            ..LinkSpec::default()
        })
        .unwrap();
        let mut cfg = RunConfig::default();
        cfg.model.hidden = 16;
        cfg.sampling.k_loc = 0;
        cfg.train.epochs = 40;
        cfg.train.lr = 1e-2;
        cfg.eval.k = 10;
        let run = train_link(&g, &cfg, None).unwrap();
        assert!(run.losses.last().unwrap() < &run.losses[0]);
        let m = rank_eval(&run.embeddings, &run.split, 10).unwrap();
        // Roughly 10 of ~95 unseen items per user at random.
        assert!(m.recall_at_k.unwrap() > 0.25, "{m:?}");
    }

    #[test]
    fn checkpoint_evaluation_matches_training_run() {
        use crate::synthetic::{generate_link_synthetic, LinkSpec};
        let g = generate_link_synthetic(&LinkSpec {
            n_users: 30,
            n_items: 40,
            n_categories: 4,
            ..LinkSpec::default()
        })
        .unwrap();
        let mut cfg = RunConfig::default();
        cfg.model.hidden = 8;
        cfg.sampling.k_loc = 0;
        cfg.train.epochs = 5;
        let run = train_link(&g, &cfg, None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("link.ckpt");
        run.store.save_checkpoint(&path).unwrap();
        let direct = rank_eval(&run.embeddings, &run.split, cfg.eval.k).unwrap();
        assert_eq!(evaluate_link_checkpoint(&g, &cfg, &path).unwrap(), direct);
    }
}
