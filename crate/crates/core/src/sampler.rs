//! Positive and negative sample construction.
//!
//! Location-aware positives come from metapath2vec: typed random walks
//! followed by skip-gram with negative sampling, then top-k cosine
//! neighbours. Semantic-aware positives rank nodes by how many meta-paths
//! connect them to the anchor. Both are merged into [`SampleSets`].

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng as _;
use rayon::prelude::*;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::fmat::{load_fmat, save_fmat};
use crate::hin::{step_pattern, GraphError, HeteroGraph, MetaPath, MetaPathIndex};
use crate::rng::{derive_seed, seeded};
use crate::sparse::CsrPattern;

#[derive(Debug, Error)]
pub enum SampleError {
    #[error("walk corpus contains no skip-gram training pairs")]
    EmptyCorpus,
    #[error("invalid sampling parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WalkConfig {
    pub walks_per_node: usize,
    /// Maximum number of nodes per walk, intermediaries included.
    pub walk_len: usize,
    pub seed: u64,
}

impl Default for WalkConfig {
    fn default() -> Self {
        Self {
            walks_per_node: 10,
            walk_len: 20,
            seed: 0,
        }
    }
}

/// One typed walk. `nodes` holds global ids; `targets` holds the local
/// indices of the target-type nodes visited, in order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Walk {
    pub scheme: usize,
    pub nodes: Vec<usize>,
    pub targets: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WalkCorpus {
    pub target_type: usize,
    pub num_targets: usize,
    pub schemes: Vec<MetaPath>,
    pub walks: Vec<Walk>,
}

impl WalkCorpus {
    /// Appends the walks of another corpus over the same target type.
    pub fn extend(&mut self, other: WalkCorpus) {
        assert_eq!(self.target_type, other.target_type, "corpora target different types");
        let offset = self.schemes.len();
        self.schemes.extend(other.schemes);
        self.walks.extend(other.walks.into_iter().map(|mut w| {
            w.scheme += offset;
            w
        }));
    }
}

/// Walks from every target node following `scheme` cyclically. The next node
/// is uniform over the admissible neighbours; walks stop at dead ends.
pub fn metapath_walks(g: &HeteroGraph, scheme: &MetaPath, cfg: WalkConfig) -> Result<WalkCorpus, SampleError> {
    if cfg.walk_len < 2 {
        return Err(SampleError::InvalidParameter(format!("walk_len must be >= 2, got {}", cfg.walk_len)));
    }
    let target = scheme.target_type(g)?;
    let mut step_types = Vec::with_capacity(scheme.steps.len());
    let mut patterns: Vec<CsrPattern> = Vec::with_capacity(scheme.steps.len());
    for &s in &scheme.steps {
        let rel = &g.relations()[s.relation];
        step_types.push(if s.reversed { rel.src_type } else { rel.dst_type });
        patterns.push(step_pattern(g, s));
    }
    let n = g.node_count(target);
    // Every walk owns its seed, so the parallel collection is order-stable.
    let walks = (0..n * cfg.walks_per_node)
        .into_par_iter()
        .map(|id| {
            let start = id / cfg.walks_per_node;
            let mut rng = seeded(derive_seed(cfg.seed, id as u64));
            let mut nodes = vec![g.global_id(target, start)];
            let mut targets = vec![start];
            let mut at = start;
            let mut step = 0;
            while nodes.len() < cfg.walk_len {
                let k = step % patterns.len();
                let options = patterns[k].row(at);
                if options.is_empty() {
                    break;
                }
                at = options[rng.random_range(0..options.len())];
                let ty = step_types[k];
                nodes.push(g.global_id(ty, at));
                if ty == target {
                    targets.push(at);
                }
                step += 1;
            }
            Walk { scheme: 0, nodes, targets }
        })
        .collect();
    Ok(WalkCorpus {
        target_type: target,
        num_targets: n,
        schemes: vec![scheme.clone()],
        walks,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SkipGramConfig {
    pub dim: usize,
    /// Context radius, counted in target-type nodes along the walk.
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub lr: f32,
    pub seed: u64,
}

impl Default for SkipGramConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            window: 5,
            negatives: 5,
            epochs: 3,
            lr: 0.025,
            seed: 0,
        }
    }
}

fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Skip-gram with negative sampling over co-window target pairs. Negatives
/// are drawn from the unigram distribution raised to 0.75. Returns the input
/// embedding table, one row per target node.
pub fn skipgram_train(corpus: &WalkCorpus, cfg: SkipGramConfig) -> Result<Array2<f32>, SampleError> {
    let n = corpus.num_targets;
    let dim = cfg.dim;
    if dim == 0 {
        return Err(SampleError::InvalidParameter("embedding dim must be positive".into()));
    }
    let has_pairs = corpus.walks.iter().any(|w| w.targets.windows(2).any(|p| p[0] != p[1]));
    if !has_pairs || cfg.window == 0 {
        return Err(SampleError::EmptyCorpus);
    }
    let mut rng = seeded(cfg.seed);
    let bound = 0.5 / dim as f32;
    let mut input = Array2::from_shape_simple_fn((n, dim), || rng.random_range(-bound..bound));
    let mut output = Array2::<f32>::zeros((n, dim));

    let mut freq = vec![0f64; n];
    for w in &corpus.walks {
        for &t in &w.targets {
            freq[t] += 1.0;
        }
    }
    let noise = WeightedIndex::new(freq.iter().map(|f| f.powf(0.75))).map_err(|_| SampleError::EmptyCorpus)?;

    let mut grad_in = vec![0f32; dim];
    for _ in 0..cfg.epochs {
        for walk in &corpus.walks {
            let t = &walk.targets;
            for (i, &center) in t.iter().enumerate() {
                let lo = i.saturating_sub(cfg.window);
                let hi = (i + cfg.window + 1).min(t.len());
                for (j, &context) in t.iter().enumerate().take(hi).skip(lo) {
                    if j == i || context == center {
                        continue;
                    }
                    grad_in.iter_mut().for_each(|g| *g = 0.0);
                    for d in 0..=cfg.negatives {
                        let (other, label) = if d == 0 {
                            (context, 1.0)
                        } else {
                            let neg = noise.sample(&mut rng);
                            if neg == context {
                                continue;
                            }
                            (neg, 0.0)
                        };
                        let row_in = input.row(center);
                        let mut row_out = output.row_mut(other);
                        let dot: f32 = row_in.iter().zip(row_out.iter()).map(|(a, b)| a * b).sum();
                        let g = cfg.lr * (label - sigmoid(dot));
                        for k in 0..dim {
                            grad_in[k] += g * row_out[k];
                            row_out[k] += g * row_in[k];
                        }
                    }
                    let mut row_in = input.row_mut(center);
                    for k in 0..dim {
                        row_in[k] += grad_in[k];
                    }
                }
            }
        }
    }
    Ok(input)
}

/// Hex digest over the graph structure and every walk/skip-gram setting.
pub fn cache_key(g: &HeteroGraph, paths: &[MetaPath], walk: WalkConfig, sg: SkipGramConfig) -> String {
    let mut h = Sha256::new();
    for (t, name) in g.type_names().iter().enumerate() {
        h.update(name.as_bytes());
        for &id in g.nodes_of_type(t) {
            h.update((id as u64).to_le_bytes());
        }
    }
    for (r, rel) in g.relations().iter().enumerate() {
        h.update(rel.name.as_bytes());
        let a = g.adjacency(r);
        for &x in a.indptr().iter().chain(a.indices()) {
            h.update((x as u64).to_le_bytes());
        }
    }
    for mp in paths {
        h.update(mp.name.as_bytes());
        for s in &mp.steps {
            h.update((s.relation as u64).to_le_bytes());
            h.update([s.reversed as u8]);
        }
    }
    for v in [walk.walks_per_node, walk.walk_len, sg.dim, sg.window, sg.negatives, sg.epochs] {
        h.update((v as u64).to_le_bytes());
    }
    h.update(walk.seed.to_le_bytes());
    h.update(sg.seed.to_le_bytes());
    h.update(sg.lr.to_le_bytes());
    hex::encode(&h.finalize()[..8])
}

/// Cache directory: `$GCHGNN_CACHE` when set, else `./cache`.
pub fn default_cache_dir() -> PathBuf {
    std::env::var_os("GCHGNN_CACHE").map_or_else(|| PathBuf::from("cache"), PathBuf::from)
}

/// Walks every meta-path scheme, trains skip-gram on the merged corpus and
/// caches the result under `cache_dir/mp2v_<hash>.fmat` when a directory is
/// given.
pub fn location_embeddings(
    g: &HeteroGraph,
    paths: &[MetaPath],
    walk: WalkConfig,
    sg: SkipGramConfig,
    cache_dir: Option<&Path>,
) -> Result<Array2<f32>, SampleError> {
    let file = cache_dir.map(|d| d.join(format!("mp2v_{}.fmat", cache_key(g, paths, walk, sg))));
    if let Some(f) = &file {
        if f.exists() {
            match load_fmat(f) {
                Ok(m) => return Ok(m),
                Err(e) => log::warn!("ignoring unreadable cache {}: {e}", f.display()),
            }
        }
    }
    let mut corpus: Option<WalkCorpus> = None;
    for (j, mp) in paths.iter().enumerate() {
        let c = metapath_walks(
            g,
            mp,
            WalkConfig {
                seed: derive_seed(walk.seed, j as u64),
                ..walk
            },
        )?;
        match corpus.as_mut() {
            None => corpus = Some(c),
            Some(all) => all.extend(c),
        }
    }
    let corpus = corpus.ok_or_else(|| SampleError::InvalidParameter("no meta-paths given".into()))?;
    let emb = skipgram_train(&corpus, sg)?;
    if let Some(f) = &file {
        if let Some(dir) = f.parent() {
            std::fs::create_dir_all(dir)?;
        }
        save_fmat(f, &emb)?;
    }
    Ok(emb)
}

/// Per anchor, the `k` most cosine-similar other rows, ties by ascending
/// index. Zero rows have similarity 0 to everything.
pub fn location_positives(embeddings: &Array2<f32>, k: usize) -> Vec<Vec<usize>> {
    assert!(k >= 1, "k must be at least 1");
    let n = embeddings.nrows();
    let norms: Vec<f64> = embeddings
        .rows()
        .into_iter()
        .map(|r| r.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt())
        .collect();
    (0..n)
        .map(|i| {
            let xi = embeddings.row(i);
            let mut scored: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    let denom = norms[i] * norms[j];
                    let sim = if denom > 0.0 {
                        xi.iter().zip(embeddings.row(j)).map(|(&a, &b)| a as f64 * b as f64).sum::<f64>() / denom
                    } else {
                        0.0
                    };
                    (sim, j)
                })
                .collect();
            scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            let mut top: Vec<usize> = scored.into_iter().take(k).map(|(_, j)| j).collect();
            top.sort_unstable();
            top
        })
        .collect()
}

/// Per anchor, nodes ranked by the number of connecting meta-paths, then by
/// total path instances, then by index; the first `k_sem` are kept.
pub fn semantic_positives(index: &MetaPathIndex, k_sem: usize) -> Vec<Vec<usize>> {
    (0..index.num_nodes())
        .map(|u| {
            let candidates: BTreeSet<usize> = index.adjacency.iter().flat_map(|a| a.row(u).iter().copied()).filter(|&v| v != u).collect();
            let mut ranked: Vec<(usize, u64, usize)> = candidates
                .into_iter()
                .map(|v| (index.pair_count(u, v), index.instance_count(u, v), v))
                .collect();
            ranked.sort_by(|a, b| b.0.cmp(&a.0).then(b.1.cmp(&a.1)).then(a.2.cmp(&b.2)));
            let mut top: Vec<usize> = ranked.into_iter().take(k_sem).map(|(_, _, v)| v).collect();
            top.sort_unstable();
            top
        })
        .collect()
}

/// Positive sets per anchor plus the intra-contrast node set. Negatives are
/// implicit: everything in the batch outside `positives[i] ∪ {i}`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampleSets {
    /// Sorted positives per target node; an empty set means the node is not
    /// an anchor of the edge set.
    pub positives: Vec<Vec<usize>>,
    /// Sorted intra-contrast nodes.
    pub intra: Vec<usize>,
}

/// Rows and columns taking part in one contrastive evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct ContrastPlan {
    pub anchors: Vec<usize>,
    pub columns: Vec<usize>,
    /// `[anchors x columns]`, true at positives.
    pub positive: Array2<bool>,
    /// `[anchors x columns]`, true at positives and negatives.
    pub candidate: Array2<bool>,
    /// Anchors with positives overall but none inside the batch.
    pub skipped: usize,
}

impl SampleSets {
    pub fn num_nodes(&self) -> usize {
        self.positives.len()
    }

    pub fn anchors(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.positives.len()).filter(|&i| !self.positives[i].is_empty())
    }

    pub fn negatives(&self, i: usize, batch: &[usize]) -> Vec<usize> {
        batch
            .iter()
            .copied()
            .filter(|&j| j != i && self.positives[i].binary_search(&j).is_err())
            .collect()
    }

    /// Plan over `batch` (all nodes when `None`).
    pub fn contrast_plan(&self, batch: Option<&[usize]>) -> ContrastPlan {
        let all: Vec<usize>;
        let columns: &[usize] = match batch {
            Some(b) => b,
            None => {
                all = (0..self.num_nodes()).collect();
                &all
            }
        };
        let mut slot = vec![usize::MAX; self.num_nodes()];
        for (c, &j) in columns.iter().enumerate() {
            slot[j] = c;
        }
        let mut anchors = Vec::new();
        let mut skipped = 0;
        for &i in columns {
            if self.positives[i].is_empty() {
                continue;
            }
            if self.positives[i].iter().any(|&j| slot[j] != usize::MAX) {
                anchors.push(i);
            } else {
                skipped += 1;
            }
        }
        let mut positive = Array2::from_elem((anchors.len(), columns.len()), false);
        let mut candidate = Array2::from_elem((anchors.len(), columns.len()), true);
        for (a, &i) in anchors.iter().enumerate() {
            candidate[[a, slot[i]]] = false;
            for &j in &self.positives[i] {
                if slot[j] != usize::MAX {
                    positive[[a, slot[j]]] = true;
                }
            }
        }
        ContrastPlan {
            anchors,
            columns: columns.to_vec(),
            positive,
            candidate,
            skipped,
        }
    }
}

/// `ℙ_i = loc(i) ∪ sem(i)`; `Ṽ` is the top `⌈intra_fraction · N⌉` anchors by
/// meta-path degree, ties by index.
pub fn build_sample_sets(loc: &[Vec<usize>], sem: &[Vec<usize>], degrees: &[usize], intra_fraction: f64) -> SampleSets {
    assert_eq!(loc.len(), sem.len(), "location and semantic positives must cover the same anchors");
    assert_eq!(loc.len(), degrees.len());
    assert!((0.0..=1.0).contains(&intra_fraction), "intra_fraction must lie in [0, 1]");
    let n = loc.len();
    let positives: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            let set: BTreeSet<usize> = loc[i].iter().chain(&sem[i]).copied().filter(|&j| j != i).collect();
            set.into_iter().collect()
        })
        .collect();
    let mut anchors: Vec<usize> = (0..n).filter(|&i| !positives[i].is_empty()).collect();
    anchors.sort_by(|&a, &b| degrees[b].cmp(&degrees[a]).then(a.cmp(&b)));
    let take = (intra_fraction * n as f64).ceil() as usize;
    let mut intra: Vec<usize> = anchors.into_iter().take(take).collect();
    intra.sort_unstable();
    SampleSets { positives, intra }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hin::fixtures::toy;
    use crate::hin::GraphBuilder;
    use proptest::prelude::*;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn star(leaves: usize) -> HeteroGraph {
        let mut b = GraphBuilder::new();
        let p = b.node_type("paper");
        let a = b.node_type("author");
        b.add_node(0, p);
        let r = b.relation("PA", p, a).unwrap();
        for k in 0..leaves {
            b.add_node(100 + k, a);
            b.add_edge(r, 0, 100 + k);
        }
        b.features(p, Array2::zeros((1, 2)));
        b.build().unwrap()
    }

    fn pap(g: &HeteroGraph) -> MetaPath {
        MetaPath::parse(g, "paper-author-paper").unwrap()
    }

    /// Two groups of papers, each sharing its own authors.
    fn two_cliques(size: usize) -> HeteroGraph {
        let mut b = GraphBuilder::new();
        let p = b.node_type("paper");
        let a = b.node_type("author");
        let r = b.relation("PA", p, a).unwrap();
        for i in 0..2 * size {
            b.add_node(i, p);
        }
        for c in 0..2 {
            for k in 0..3 {
                let author = 1000 + c * 10 + k;
                b.add_node(author, a);
                for i in 0..size {
                    b.add_edge(r, c * size + i, author);
                }
            }
        }
        b.features(p, Array2::zeros((2 * size, 2)));
        b.build().unwrap()
    }

    #[test]
    fn star_transitions_are_uniform() {
        let leaves = 4;
        let g = star(leaves);
        let cfg = WalkConfig {
            walks_per_node: 100_000,
            walk_len: 2,
            seed: 7,
        };
        let corpus = metapath_walks(&g, &pap(&g), cfg).unwrap();
        let mut counts = vec![0f64; leaves];
        for w in &corpus.walks {
            assert_eq!(w.nodes.len(), 2);
            counts[w.nodes[1] - 100] += 1.0;
        }
        let expected = cfg.walks_per_node as f64 / leaves as f64;
        let stat: f64 = counts.iter().map(|c| (c - expected).powi(2) / expected).sum();
        let p_value = 1.0 - ChiSquared::new((leaves - 1) as f64).unwrap().cdf(stat);
        assert!(p_value > 0.01, "chi-square p = {p_value}");
    }

    #[test]
    fn walks_follow_the_scheme_and_reproduce() {
        let g = toy();
        let mp = MetaPath::parse(&g, "paper-author-paper-subject-paper").unwrap();
        let cfg = WalkConfig {
            walks_per_node: 5,
            walk_len: 9,
            seed: 3,
        };
        let corpus = metapath_walks(&g, &mp, cfg).unwrap();
        assert_eq!(corpus, metapath_walks(&g, &mp, cfg).unwrap());
        let (pa, ps) = (g.relation_id("PA").unwrap(), g.relation_id("PS").unwrap());
        for w in &corpus.walks {
            assert!(w.nodes.len() <= 9);
            for (k, pair) in w.nodes.windows(2).enumerate() {
                let rel = [pa, pa, ps, ps][k % 4];
                let (x, y) = if k % 2 == 0 { (pair[0], pair[1]) } else { (pair[1], pair[0]) };
                let (_, lx) = g.locate(x).unwrap();
                let (_, ly) = g.locate(y).unwrap();
                assert!(g.adjacency(rel).contains(lx, ly), "step {k} of {:?}", w.nodes);
            }
        }
        // Paper 4 is isolated: its walks hold just the start node.
        assert!(corpus.walks.iter().filter(|w| w.nodes[0] == 4).all(|w| w.nodes.len() == 1));
        // walk_len = 2 gives one typed edge per walk.
        let short = metapath_walks(&g, &mp, WalkConfig { walk_len: 2, ..cfg }).unwrap();
        assert!(short.walks.iter().all(|w| w.nodes.len() <= 2));
        assert!(metapath_walks(&g, &mp, WalkConfig { walk_len: 1, ..cfg }).is_err());
    }

    #[test]
    fn skipgram_separates_cliques() {
        let g = two_cliques(8);
        let corpus = metapath_walks(
            &g,
            &pap(&g),
            WalkConfig {
                walks_per_node: 10,
                walk_len: 21,
                seed: 1,
            },
        )
        .unwrap();
        let cfg = SkipGramConfig {
            dim: 16,
            epochs: 5,
            ..SkipGramConfig::default()
        };
        let emb = skipgram_train(&corpus, cfg).unwrap();
        assert_eq!(emb, skipgram_train(&corpus, cfg).unwrap());
        let cos = |i: usize, j: usize| {
            let (a, b) = (emb.row(i), emb.row(j));
            a.dot(&b) / (a.dot(&a).sqrt() * b.dot(&b).sqrt())
        };
        let (mut intra, mut inter, mut ni, mut ne) = (0.0, 0.0, 0, 0);
        for i in 0..16 {
            for j in 0..16 {
                if i == j {
                    continue;
                }
                if (i < 8) == (j < 8) {
                    intra += cos(i, j);
                    ni += 1;
                } else {
                    inter += cos(i, j);
                    ne += 1;
                }
            }
        }
        assert!(intra / ni as f32 > inter / ne as f32 + 0.1);
    }

    #[test]
    fn skipgram_zero_epochs_and_empty_corpus() {
        let g = two_cliques(3);
        let corpus = metapath_walks(&g, &pap(&g), WalkConfig::default()).unwrap();
        let cfg = SkipGramConfig {
            dim: 4,
            epochs: 0,
            seed: 5,
            ..SkipGramConfig::default()
        };
        let init = skipgram_train(&corpus, cfg).unwrap();
        let mut rng = seeded(5);
        let want = Array2::from_shape_simple_fn((6, 4), || rng.random_range(-0.125f32..0.125));
        assert_eq!(init, want);

        let lonely = star(3);
        let corpus = metapath_walks(&lonely, &pap(&lonely), WalkConfig::default()).unwrap();
        assert!(matches!(skipgram_train(&corpus, cfg), Err(SampleError::EmptyCorpus)));
    }

    #[test]
    fn location_embeddings_cache_round_trip() {
        let g = two_cliques(4);
        let dir = tempfile::tempdir().unwrap();
        let walk = WalkConfig {
            walks_per_node: 2,
            walk_len: 6,
            seed: 2,
        };
        let sg = SkipGramConfig {
            dim: 4,
            epochs: 1,
            ..SkipGramConfig::default()
        };
        let paths = [pap(&g)];
        let first = location_embeddings(&g, &paths, walk, sg, Some(dir.path())).unwrap();
        let file = dir.path().join(format!("mp2v_{}.fmat", cache_key(&g, &paths, walk, sg)));
        assert!(file.exists());
        assert_eq!(location_embeddings(&g, &paths, walk, sg, Some(dir.path())).unwrap(), first);
        assert_ne!(cache_key(&g, &paths, WalkConfig { seed: 3, ..walk }, sg), cache_key(&g, &paths, walk, sg));
    }

    fn brute_force_top_k(e: &Array2<f32>, k: usize) -> Vec<Vec<usize>> {
        let n = e.nrows();
        (0..n)
            .map(|i| {
                let mut all: Vec<(f64, usize)> = Vec::new();
                for j in 0..n {
                    if j == i {
                        continue;
                    }
                    let (mut dot, mut ni, mut nj) = (0.0, 0.0, 0.0);
                    for d in 0..e.ncols() {
                        dot += e[[i, d]] as f64 * e[[j, d]] as f64;
                        ni += (e[[i, d]] as f64).powi(2);
                        nj += (e[[j, d]] as f64).powi(2);
                    }
                    let sim = if ni * nj > 0.0 { dot / (ni.sqrt() * nj.sqrt()) } else { 0.0 };
                    all.push((sim, j));
                }
                // Insertion sort: larger similarity first, then smaller id.
                let mut sorted: Vec<(f64, usize)> = Vec::new();
                for item in all {
                    let pos = sorted
                        .iter()
                        .position(|s| item.0 > s.0 || (item.0 == s.0 && item.1 < s.1))
                        .unwrap_or(sorted.len());
                    sorted.insert(pos, item);
                }
                let mut top: Vec<usize> = sorted.into_iter().take(k).map(|s| s.1).collect();
                top.sort_unstable();
                top
            })
            .collect()
    }

    #[test]
    fn location_positives_ties_and_limits() {
        let same = Array2::from_elem((6, 3), 1.0f32);
        let pos = location_positives(&same, 2);
        assert_eq!(pos[0], vec![1, 2]);
        assert_eq!(pos[3], vec![0, 1]);
        let all = location_positives(&same, 10);
        assert!(all.iter().enumerate().all(|(i, p)| p.len() == 5 && !p.contains(&i)));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn location_positives_match_brute_force(
            n in 2usize..40,
            k in 1usize..6,
            seed in any::<u64>(),
        ) {
            let mut rng = seeded(seed);
            // Coarse values so exact ties appear.
            let e = Array2::from_shape_simple_fn((n, 3), || rng.random_range(-2i32..=2) as f32);
            prop_assert_eq!(location_positives(&e, k), brute_force_top_k(&e, k));
        }

        #[test]
        fn location_positives_are_permutation_equivariant(n in 2usize..30, seed in any::<u64>()) {
            let mut rng = seeded(seed);
            let e = Array2::from_shape_simple_fn((n, 4), || rng.random_range(-1.0f32..1.0));
            let mut perm: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                perm.swap(i, rng.random_range(0..=i));
            }
            // Row perm[i] of the relabelled matrix is row i of the original.
            let mut relabelled = Array2::zeros((n, 4));
            for i in 0..n {
                relabelled.row_mut(perm[i]).assign(&e.row(i));
            }
            let base = location_positives(&e, 3);
            let moved = location_positives(&relabelled, 3);
            for i in 0..n {
                let mut want: Vec<usize> = base[i].iter().map(|&j| perm[j]).collect();
                want.sort_unstable();
                prop_assert_eq!(&moved[perm[i]], &want);
            }
        }
    }

    #[test]
    fn semantic_positives_rank_multi_path_nodes_first() {
        // Paper 0 reaches 1 via both PAP and PSP, and 2 via PAP only.
        let g = toy();
        let index = MetaPathIndex::new(&g, &[pap(&g), MetaPath::parse(&g, "paper-subject-paper").unwrap()]).unwrap();
        let top1 = semantic_positives(&index, 1);
        assert_eq!(top1[0], vec![1]);
        assert_eq!(semantic_positives(&index, 8)[0], vec![1, 2]);
        assert!(top1[4].is_empty());
    }

    #[test]
    fn semantic_positives_match_count_sort_oracle() {
        let g = toy();
        let paths = [pap(&g), MetaPath::parse(&g, "paper-subject-paper").unwrap()];
        let index = MetaPathIndex::new(&g, &paths).unwrap();
        let got = semantic_positives(&index, 2);
        for u in 0..5 {
            let mut keyed: Vec<(usize, u64, usize)> = (0..5)
                .filter(|&v| v != u)
                .map(|v| {
                    let c = crate::hin::metapath_pair_count(&g, u, v, &paths).unwrap();
                    (c, index.instance_count(u, v), v)
                })
                .filter(|k| k.0 >= 1)
                .collect();
            keyed.sort_by_key(|&(c, inst, v)| (std::cmp::Reverse(c), std::cmp::Reverse(inst), v));
            let mut want: Vec<usize> = keyed.into_iter().take(2).map(|k| k.2).collect();
            want.sort_unstable();
            assert_eq!(got[u], want, "anchor {u}");
        }
    }

    #[test]
    fn sample_sets_union_and_partition() {
        let loc = vec![vec![1, 2], vec![0], vec![], vec![]];
        let sem = vec![vec![3], vec![], vec![], vec![]];
        let sets = build_sample_sets(&loc, &sem, &[1, 1, 1, 1], 1.0);
        assert_eq!(sets.positives[0], vec![1, 2, 3]);
        assert_eq!(sets.anchors().collect::<Vec<_>>(), vec![0, 1]);
        assert_eq!(sets.intra, vec![0, 1]);

        let loc: Vec<Vec<usize>> = (0..7).map(|i| vec![(i + 1) % 7, (i + 2) % 7]).collect();
        let sem: Vec<Vec<usize>> = (0..7).map(|i| vec![(i + 3) % 7, (i + 4) % 7, (i + 5) % 7]).collect();
        let degrees = vec![3, 9, 1, 9, 4, 0, 2];
        let sets = build_sample_sets(&loc, &sem, &degrees, 0.4);
        assert!(sets.positives.iter().all(|p| p.len() == 5));
        // ⌈0.4·7⌉ = 3: degrees 9, 9, 4 → nodes 1, 3, 4.
        assert_eq!(sets.intra, vec![1, 3, 4]);
        let full = build_sample_sets(&loc, &sem, &degrees, 1.0);
        assert_eq!(full.intra, (0..7).collect::<Vec<_>>());

        let batch: Vec<usize> = (0..7).collect();
        for i in 0..7 {
            let neg = sets.negatives(i, &batch);
            let mut union: Vec<usize> = neg.iter().chain(&sets.positives[i]).copied().chain([i]).collect();
            union.sort_unstable();
            assert_eq!(union, batch);
            assert!(neg.iter().all(|j| !sets.positives[i].contains(j)));
        }
    }

    #[test]
    fn contrast_plan_masks() {
        let loc = vec![vec![1], vec![0, 2], vec![], vec![0]];
        let sem = vec![vec![], vec![], vec![], vec![]];
        let sets = build_sample_sets(&loc, &sem, &[0; 4], 0.5);
        let plan = sets.contrast_plan(None);
        assert_eq!(plan.anchors, vec![0, 1, 3]);
        assert_eq!(plan.positive.row(1).to_vec(), vec![true, false, true, false]);
        assert_eq!(plan.candidate.row(1).to_vec(), vec![true, false, true, true]);
        let batch = [1, 2];
        let plan = sets.contrast_plan(Some(&batch));
        assert_eq!(plan.anchors, vec![1]);
        assert_eq!(plan.positive.row(0).to_vec(), vec![false, true]);
        assert_eq!(plan.candidate.row(0).to_vec(), vec![false, true]);
    }
}
