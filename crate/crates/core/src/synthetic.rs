//! Planted-community heterogeneous graphs for tests and benchmarks.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::hin::{GraphBuilder, GraphError, HeteroGraph};
use crate::rng::{derive_seed, seeded, Rng as ChaRng};

#[derive(Debug, Error)]
pub enum SpecError {
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// ACM-shaped graph: `paper` targets linked to `author` and `subject` nodes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub n_target: usize,
    pub n_aux_per_type: usize,
    pub n_communities: usize,
    /// Attachment probability between a paper and an auxiliary node of the
    /// same community.
    pub intra_edge_prob: f64,
    pub inter_edge_prob: f64,
    pub feature_dim: usize,
    pub feature_noise_sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_target: 900,
            n_aux_per_type: 150,
            n_communities: 3,
            intra_edge_prob: 0.04,
            inter_edge_prob: 0.002,
            feature_dim: 32,
            feature_noise_sigma: 2.5,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), SpecError> {
        let bad = |m: &str| Err(SpecError::InvalidSpec(m.into()));
        for p in [self.intra_edge_prob, self.inter_edge_prob] {
            if !(0.0..=1.0).contains(&p) {
                return bad("edge probabilities must lie in [0, 1]");
            }
        }
        if self.intra_edge_prob <= self.inter_edge_prob {
            return bad("intra_edge_prob must exceed inter_edge_prob");
        }
        if self.n_communities == 0 || self.n_target < self.n_communities {
            return bad("need at least one community and one target node per community");
        }
        if self.n_aux_per_type == 0 || self.feature_dim == 0 {
            return bad("auxiliary node count and feature dimension must be positive");
        }
        if !(self.feature_noise_sigma.is_finite() && self.feature_noise_sigma >= 0.0) {
            return bad("feature_noise_sigma must be finite and >= 0");
        }
        Ok(())
    }
}

/// Community of node `i` out of `n`, in contiguous balanced blocks.
pub fn community_of(i: usize, n: usize, k: usize) -> usize {
    i * k / n
}

fn prototypes(k: usize, dim: usize, rng: &mut ChaRng) -> Array2<f32> {
    let unit = Normal::new(0.0, 1.0).unwrap();
    Array2::from_shape_simple_fn((k, dim), || unit.sample(rng) as f32)
}

fn noisy_features(communities: &[usize], protos: &Array2<f32>, scale: f32, sigma: f64, rng: &mut ChaRng) -> Array2<f32> {
    let noise = Normal::new(0.0, sigma.max(f64::MIN_POSITIVE)).unwrap();
    let dim = protos.ncols();
    let mut x = Array2::zeros((communities.len(), dim));
    for (i, &c) in communities.iter().enumerate() {
        for d in 0..dim {
            let eps = if sigma > 0.0 { noise.sample(rng) as f32 } else { 0.0 };
            x[[i, d]] = scale * protos[[c, d]] + eps;
        }
    }
    x
}

/// Bernoulli attachments between `rows` and `cols` nodes, more likely inside
/// a community.
fn attach(rows: &[usize], cols: &[usize], p_in: f64, p_out: f64, rng: &mut ChaRng) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for (i, &ci) in rows.iter().enumerate() {
        for (j, &cj) in cols.iter().enumerate() {
            let p = if ci == cj { p_in } else { p_out };
            if rng.random_bool(p) {
                edges.push((i, j));
            }
        }
    }
    edges
}

/// Generates the graph. Papers get ids `0..n_target`, authors and subjects
/// follow. Labels are paper communities.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<HeteroGraph, SpecError> {
    spec.validate()?;
    let (n, m, k) = (spec.n_target, spec.n_aux_per_type, spec.n_communities);
    let mut rng = seeded(spec.seed);
    let paper_comm: Vec<usize> = (0..n).map(|i| community_of(i, n, k)).collect();
    let aux_comm: Vec<usize> = (0..m).map(|i| community_of(i, m, k)).collect();

    let mut b = GraphBuilder::new();
    let p = b.node_type("paper");
    let a = b.node_type("author");
    let s = b.node_type("subject");
    for i in 0..n {
        b.add_node(i, p);
    }
    for j in 0..m {
        b.add_node(n + j, a);
    }
    for j in 0..m {
        b.add_node(n + m + j, s);
    }
    let pa = b.relation("PA", p, a)?;
    let ps = b.relation("PS", p, s)?;
    let mut edge_rng = seeded(derive_seed(spec.seed, 1));
    for (i, j) in attach(&paper_comm, &aux_comm, spec.intra_edge_prob, spec.inter_edge_prob, &mut edge_rng) {
        b.add_edge(pa, i, n + j);
    }
    for (i, j) in attach(&paper_comm, &aux_comm, spec.intra_edge_prob, spec.inter_edge_prob, &mut edge_rng) {
        b.add_edge(ps, i, n + m + j);
    }

    let protos = prototypes(k, spec.feature_dim, &mut rng);
    let sigma = spec.feature_noise_sigma;
    b.features(p, noisy_features(&paper_comm, &protos, 1.0, sigma, &mut rng));
    b.features(a, noisy_features(&aux_comm, &protos, 1.0, sigma, &mut rng));
    b.features(s, noisy_features(&aux_comm, &protos, 1.0, sigma, &mut rng));
    for (i, &c) in paper_comm.iter().enumerate() {
        b.label(i, c);
    }
    Ok(b.build()?)
}

/// Recommendation-shaped graph: `user`, `item` and `category` nodes with
/// user-item interactions (`UI`) and item categories (`IC`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinkSpec {
    pub n_users: usize,
    pub n_items: usize,
    pub n_categories: usize,
    pub n_communities: usize,
    pub intra_edge_prob: f64,
    pub inter_edge_prob: f64,
    pub feature_dim: usize,
    pub feature_noise_sigma: f64,
    pub seed: u64,
}

impl Default for LinkSpec {
    fn default() -> Self {
        Self {
            n_users: 300,
            n_items: 400,
            n_categories: 12,
            n_communities: 4,
            intra_edge_prob: 0.06,
            inter_edge_prob: 0.004,
            feature_dim: 16,
            feature_noise_sigma: 2.0,
            seed: 0,
        }
    }
}

pub fn generate_link_synthetic(spec: &LinkSpec) -> Result<HeteroGraph, SpecError> {
    if spec.intra_edge_prob <= spec.inter_edge_prob || spec.intra_edge_prob > 1.0 || spec.inter_edge_prob < 0.0 {
        return Err(SpecError::InvalidSpec("need 0 <= inter_edge_prob < intra_edge_prob <= 1".into()));
    }
    if spec.n_communities == 0 || spec.n_users < spec.n_communities || spec.n_items < spec.n_communities || spec.n_categories < spec.n_communities {
        return Err(SpecError::InvalidSpec("every community needs users, items and categories".into()));
    }
    let k = spec.n_communities;
    let (nu, ni, nc) = (spec.n_users, spec.n_items, spec.n_categories);
    let user_comm: Vec<usize> = (0..nu).map(|i| community_of(i, nu, k)).collect();
    let item_comm: Vec<usize> = (0..ni).map(|i| community_of(i, ni, k)).collect();
    let cat_comm: Vec<usize> = (0..nc).map(|i| community_of(i, nc, k)).collect();

    let mut b = GraphBuilder::new();
    let u = b.node_type("user");
    let it = b.node_type("item");
    let c = b.node_type("category");
    for i in 0..nu {
        b.add_node(i, u);
    }
    for i in 0..ni {
        b.add_node(nu + i, it);
    }
    for i in 0..nc {
        b.add_node(nu + ni + i, c);
    }
    let ui = b.relation("UI", u, it)?;
    let ic = b.relation("IC", it, c)?;
    let mut rng = seeded(derive_seed(spec.seed, 1));
    for (x, y) in attach(&user_comm, &item_comm, spec.intra_edge_prob, spec.inter_edge_prob, &mut rng) {
        b.add_edge(ui, x, nu + y);
    }
    // Each item gets one category from its own community.
    for (x, &cm) in item_comm.iter().enumerate() {
        let own: Vec<usize> = (0..nc).filter(|&j| cat_comm[j] == cm).collect();
        let y = own[rng.random_range(0..own.len())];
        b.add_edge(ic, nu + x, nu + ni + y);
    }
    let mut frng = seeded(spec.seed);
    let protos = prototypes(k, spec.feature_dim, &mut frng);
    let sigma = spec.feature_noise_sigma;
    b.features(u, noisy_features(&user_comm, &protos, 1.0, sigma, &mut frng));
    b.features(it, noisy_features(&item_comm, &protos, 1.0, sigma, &mut frng));
    b.features(c, noisy_features(&cat_comm, &protos, 1.0, sigma, &mut frng));
    Ok(b.build()?)
}

/// Share of meta-path view edges joining two nodes with the same label.
pub fn label_assortativity(adjacency: &crate::sparse::CsrPattern, labels: &[Option<usize>]) -> f64 {
    let (mut same, mut total) = (0usize, 0usize);
    for (r, c) in adjacency.entries() {
        if let (Some(a), Some(b)) = (labels[r], labels[c]) {
            total += 1;
            same += usize::from(a == b);
        }
    }
    if total == 0 {
        0.0
    } else {
        same as f64 / total as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hin::{compose_metapath_adjacency, save_hin, MetaPath};

    fn small() -> SyntheticSpec {
        SyntheticSpec {
            n_target: 90,
            n_aux_per_type: 30,
            intra_edge_prob: 0.15,
            inter_edge_prob: 0.01,
            feature_dim: 4,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn spec_validation() {
        assert!(SyntheticSpec::default().validate().is_ok());
        assert!(SyntheticSpec {
            intra_edge_prob: 0.01,
            inter_edge_prob: 0.02,
            ..small()
        }
        .validate()
        .is_err());
        assert!(SyntheticSpec {
            intra_edge_prob: 1.5,
            ..small()
        }
        .validate()
        .is_err());
        assert!(SyntheticSpec { n_communities: 0, ..small() }.validate().is_err());
    }

    #[test]
    fn zero_inter_probability_gives_block_diagonal_views() {
        let g = generate_synthetic(&SyntheticSpec {
            inter_edge_prob: 0.0,
            ..small()
        })
        .unwrap();
        let labels = g.labels_for_type(0);
        for spec in ["paper-author-paper", "paper-subject-paper"] {
            let adj = compose_metapath_adjacency(&g, &MetaPath::parse(&g, spec).unwrap()).unwrap();
            assert!(adj.nnz() > 0);
            assert!(adj.entries().all(|(r, c)| labels[r] == labels[c]));
        }
    }

    #[test]
    fn single_community_has_one_label() {
        let g = generate_synthetic(&SyntheticSpec { n_communities: 1, ..small() }).unwrap();
        assert!(g.labels().values().all(|&c| c == 0));
    }

    #[test]
    fn default_spec_pap_view_is_assortative() {
        let g = generate_synthetic(&SyntheticSpec::default()).unwrap();
        let adj = compose_metapath_adjacency(&g, &MetaPath::parse(&g, "paper-author-paper").unwrap()).unwrap();
        let labels = g.labels_for_type(0);
        // Independent count over the dense pattern.
        let dense = adj.to_dense();
        let (mut same, mut total) = (0, 0);
        for r in 0..dense.nrows() {
            for c in 0..dense.ncols() {
                if dense[[r, c]] {
                    total += 1;
                    same += usize::from(labels[r] == labels[c]);
                }
            }
        }
        let oracle = same as f64 / total as f64;
        assert!((label_assortativity(&adj, &labels) - oracle).abs() < 1e-12);
        assert!(oracle > 0.8, "assortativity {oracle}");
    }

    #[test]
    fn generation_is_deterministic_on_disk() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        save_hin(&generate_synthetic(&small()).unwrap(), a.path()).unwrap();
        save_hin(&generate_synthetic(&small()).unwrap(), b.path()).unwrap();
        for name in ["nodes.tsv", "edges.tsv", "labels.tsv", "features_paper.fmat"] {
            assert_eq!(std::fs::read(a.path().join(name)).unwrap(), std::fs::read(b.path().join(name)).unwrap());
        }
    }

    #[test]
    fn link_graph_shape() {
        let spec = LinkSpec {
            n_users: 40,
            n_items: 60,
            n_categories: 8,
            ..LinkSpec::default()
        };
        let g = generate_link_synthetic(&spec).unwrap();
        let ic = g.relation_id("IC").unwrap();
        assert_eq!(g.adjacency(ic).nnz(), 60);
        assert!(g.adjacency(g.relation_id("UI").unwrap()).nnz() > 0);
        assert_eq!(g, generate_link_synthetic(&spec).unwrap());
    }
}
