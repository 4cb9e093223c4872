//! Heterogeneous graph storage, meta-path composition and dataset IO.
//!
//! Node ids are global and unique across types. Within a type, nodes are
//! indexed `0..n_type` in ascending global-id order; feature rows and the
//! rows/columns of relation adjacency matrices use these local indices.

mod dataset;
mod metapath;

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use ndarray::Array2;
use thiserror::Error;

use crate::sparse::CsrPattern;

pub use dataset::{load_hin, save_hin};
pub(crate) use metapath::step_pattern;
pub use metapath::{build_view, compose_metapath_adjacency, compose_metapath_counts, metapath_pair_count, MetaPath, MetaPathIndex, MetaPathStep, MetaPathView};

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("missing file {0}")]
    MissingFile(String),
    #[error("{file}:{line}: {message}")]
    Parse { file: String, line: usize, message: String },
    #[error("unknown node type `{0}`")]
    UnknownType(String),
    #[error("unknown node {0}")]
    UnknownNode(usize),
    #[error("unknown relation `{0}`")]
    UnknownRelation(String),
    #[error("node {0} declared twice")]
    DuplicateNode(usize),
    #[error("edge {src}->{dst} violates relation `{relation}` ({expected})")]
    TypeMismatch {
        relation: String,
        src: usize,
        dst: usize,
        expected: String,
    },
    #[error("features for `{node_type}` have {rows} rows, expected {expected}")]
    RaggedFeatures { node_type: String, rows: usize, expected: usize },
    #[error("no feature matrix for node type `{0}`")]
    MissingFeatures(String),
    #[error("graph needs more than two node and edge types in total, found {0}")]
    NotHeterogeneous(usize),
    #[error("incompatible meta-path: {0}")]
    IncompatibleMetaPath(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A typed relation; edges run from `src_type` nodes to `dst_type` nodes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Relation {
    pub name: String,
    pub src_type: usize,
    pub dst_type: usize,
}

/// Typed node/edge store with per-relation compressed-row adjacency.
#[derive(Clone, Debug, PartialEq)]
pub struct HeteroGraph {
    type_names: Vec<String>,
    /// Local index → global id, per type.
    members: Vec<Vec<usize>>,
    /// Global id → (type, local index).
    lookup: HashMap<usize, (usize, usize)>,
    relations: Vec<Relation>,
    adjacency: Vec<Arc<CsrPattern>>,
    features: Vec<Option<Array2<f32>>>,
    labels: BTreeMap<usize, usize>,
    duplicate_edges: usize,
}

/// Incremental constructor that enforces the graph invariants in
/// [`GraphBuilder::build`].
#[derive(Debug, Default)]
pub struct GraphBuilder {
    type_names: Vec<String>,
    nodes: Vec<(usize, usize)>,
    relations: Vec<Relation>,
    edges: Vec<Vec<(usize, usize)>>,
    features: HashMap<usize, Array2<f32>>,
    labels: BTreeMap<usize, usize>,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the id of `name`, registering it if new.
    pub fn node_type(&mut self, name: &str) -> usize {
        match self.type_names.iter().position(|t| t == name) {
            Some(i) => i,
            None => {
                self.type_names.push(name.to_string());
                self.type_names.len() - 1
            }
        }
    }

    pub fn add_node(&mut self, id: usize, node_type: usize) -> &mut Self {
        self.nodes.push((id, node_type));
        self
    }

    /// Declares a relation (idempotent for identical declarations).
    pub fn relation(&mut self, name: &str, src_type: usize, dst_type: usize) -> Result<usize, GraphError> {
        if let Some(i) = self.relations.iter().position(|r| r.name == name) {
            let r = &self.relations[i];
            if (r.src_type, r.dst_type) != (src_type, dst_type) {
                return Err(GraphError::TypeMismatch {
                    relation: name.to_string(),
                    src: src_type,
                    dst: dst_type,
                    expected: "conflicting relation declaration".into(),
                });
            }
            return Ok(i);
        }
        self.relations.push(Relation {
            name: name.to_string(),
            src_type,
            dst_type,
        });
        self.edges.push(Vec::new());
        Ok(self.relations.len() - 1)
    }

    pub fn relation_id(&self, name: &str) -> Option<usize> {
        self.relations.iter().position(|r| r.name == name)
    }

    pub fn relation_types(&self, rel: usize) -> (usize, usize) {
        (self.relations[rel].src_type, self.relations[rel].dst_type)
    }

    pub fn add_edge(&mut self, relation: usize, src: usize, dst: usize) -> &mut Self {
        self.edges[relation].push((src, dst));
        self
    }

    pub fn features(&mut self, node_type: usize, x: Array2<f32>) -> &mut Self {
        self.features.insert(node_type, x);
        self
    }

    pub fn label(&mut self, node: usize, class: usize) -> &mut Self {
        self.labels.insert(node, class);
        self
    }

    pub fn build(self) -> Result<HeteroGraph, GraphError> {
        let n_types = self.type_names.len();
        let mut lookup = HashMap::with_capacity(self.nodes.len());
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_types];
        for &(id, t) in &self.nodes {
            if lookup.insert(id, (t, 0)).is_some() {
                return Err(GraphError::DuplicateNode(id));
            }
            members[t].push(id);
        }
        for (t, ids) in members.iter_mut().enumerate() {
            ids.sort_unstable();
            for (local, &id) in ids.iter().enumerate() {
                lookup.insert(id, (t, local));
            }
        }
        if n_types + self.relations.len() <= 2 {
            return Err(GraphError::NotHeterogeneous(n_types + self.relations.len()));
        }

        let mut duplicate_edges = 0;
        let mut adjacency = Vec::with_capacity(self.relations.len());
        for (rel, edges) in self.relations.iter().zip(&self.edges) {
            let mut local = Vec::with_capacity(edges.len());
            for &(s, d) in edges {
                let &(st, sl) = lookup.get(&s).ok_or(GraphError::UnknownNode(s))?;
                let &(dt, dl) = lookup.get(&d).ok_or(GraphError::UnknownNode(d))?;
                if st != rel.src_type || dt != rel.dst_type {
                    return Err(GraphError::TypeMismatch {
                        relation: rel.name.clone(),
                        src: s,
                        dst: d,
                        expected: format!("{} -> {}", self.type_names[rel.src_type], self.type_names[rel.dst_type]),
                    });
                }
                local.push((sl, dl));
            }
            let pattern = CsrPattern::from_entries(members[rel.src_type].len(), members[rel.dst_type].len(), local.iter().copied());
            let dropped = local.len() - pattern.nnz();
            if dropped > 0 {
                log::warn!("relation `{}`: dropped {dropped} duplicate edge(s)", rel.name);
                duplicate_edges += dropped;
            }
            adjacency.push(Arc::new(pattern));
        }

        let mut features = vec![None; n_types];
        for (t, x) in self.features {
            if x.nrows() != members[t].len() {
                return Err(GraphError::RaggedFeatures {
                    node_type: self.type_names[t].clone(),
                    rows: x.nrows(),
                    expected: members[t].len(),
                });
            }
            features[t] = Some(x);
        }
        for &node in self.labels.keys() {
            if !lookup.contains_key(&node) {
                return Err(GraphError::UnknownNode(node));
            }
        }

        Ok(HeteroGraph {
            type_names: self.type_names,
            members,
            lookup,
            relations: self.relations,
            adjacency,
            features,
            labels: self.labels,
            duplicate_edges,
        })
    }
}

impl HeteroGraph {
    pub fn num_types(&self) -> usize {
        self.type_names.len()
    }

    pub fn type_names(&self) -> &[String] {
        &self.type_names
    }

    pub fn type_name(&self, t: usize) -> &str {
        &self.type_names[t]
    }

    pub fn type_id(&self, name: &str) -> Result<usize, GraphError> {
        self.type_names
            .iter()
            .position(|t| t == name)
            .ok_or_else(|| GraphError::UnknownType(name.to_string()))
    }

    pub fn num_nodes(&self) -> usize {
        self.lookup.len()
    }

    pub fn node_count(&self, t: usize) -> usize {
        self.members[t].len()
    }

    /// Global ids of type `t`, in local-index order.
    pub fn nodes_of_type(&self, t: usize) -> &[usize] {
        &self.members[t]
    }

    /// `(type, local index)` of a global node id.
    pub fn locate(&self, node: usize) -> Result<(usize, usize), GraphError> {
        self.lookup.get(&node).copied().ok_or(GraphError::UnknownNode(node))
    }

    pub fn node_type_of(&self, node: usize) -> Result<usize, GraphError> {
        Ok(self.locate(node)?.0)
    }

    pub fn global_id(&self, t: usize, local: usize) -> usize {
        self.members[t][local]
    }

    pub fn relations(&self) -> &[Relation] {
        &self.relations
    }

    pub fn relation_id(&self, name: &str) -> Result<usize, GraphError> {
        self.relations
            .iter()
            .position(|r| r.name == name)
            .ok_or_else(|| GraphError::UnknownRelation(name.to_string()))
    }

    /// Adjacency of relation `r`: rows are local source indices, columns
    /// local destination indices.
    pub fn adjacency(&self, r: usize) -> &Arc<CsrPattern> {
        &self.adjacency[r]
    }

    pub fn num_edges(&self) -> usize {
        self.adjacency.iter().map(|a| a.nnz()).sum()
    }

    pub fn features(&self, t: usize) -> Option<&Array2<f32>> {
        self.features[t].as_ref()
    }

    pub fn require_features(&self, t: usize) -> Result<&Array2<f32>, GraphError> {
        self.features(t).ok_or_else(|| GraphError::MissingFeatures(self.type_names[t].clone()))
    }

    pub fn labels(&self) -> &BTreeMap<usize, usize> {
        &self.labels
    }

    /// Duplicate edges removed while building.
    pub fn duplicate_edges(&self) -> usize {
        self.duplicate_edges
    }

    /// Network schema `(I, J)`: the `(src_type, dst_type)` pair of every relation.
    pub fn schema(&self) -> Vec<(usize, usize)> {
        self.relations.iter().map(|r| (r.src_type, r.dst_type)).collect()
    }

    /// Neighbours of type-`t` nodes under relation `r`, in either direction,
    /// as a `n_t x n_other` pattern. Self-typed relations contribute both
    /// directions. Returns `None` when `r` does not touch `t`.
    pub fn incidence(&self, t: usize, r: usize) -> Option<(usize, CsrPattern)> {
        let rel = &self.relations[r];
        let a = &self.adjacency[r];
        match (rel.src_type == t, rel.dst_type == t) {
            (true, true) => Some((t, a.union(&a.transpose()))),
            (true, false) => Some((rel.dst_type, (**a).clone())),
            (false, true) => Some((rel.src_type, a.transpose())),
            (false, false) => None,
        }
    }

    /// One-hop neighbours of `node`, grouped by relation name. Global ids in
    /// ascending order; relations with no neighbour are omitted.
    pub fn one_hop_neighbors(&self, node: usize) -> Result<BTreeMap<String, Vec<usize>>, GraphError> {
        let (t, local) = self.locate(node)?;
        let mut out = BTreeMap::new();
        for (r, rel) in self.relations.iter().enumerate() {
            if let Some((other, inc)) = self.incidence(t, r) {
                let mut ids: Vec<usize> = inc.row(local).iter().map(|&c| self.members[other][c]).collect();
                if !ids.is_empty() {
                    ids.sort_unstable();
                    out.insert(rel.name.clone(), ids);
                }
            }
        }
        Ok(out)
    }

    /// Labels of type-`t` nodes by local index (`None` when unlabeled).
    pub fn labels_for_type(&self, t: usize) -> Vec<Option<usize>> {
        self.members[t].iter().map(|id| self.labels.get(id).copied()).collect()
    }

    /// Copy of the graph with a different edge set for relation `r`.
    pub fn with_relation_edges(&self, r: usize, pattern: CsrPattern) -> HeteroGraph {
        let mut g = self.clone();
        assert_eq!(pattern.shape(), self.adjacency[r].shape());
        g.adjacency[r] = Arc::new(pattern);
        g
    }
}


#[cfg(test)]
mod tests {
    use super::fixtures::toy;
    use super::*;

    #[test]
    fn toy_shape() {
        let g = toy();
        assert_eq!(g.num_types(), 3);
        assert_eq!(g.relations().len(), 2);
        assert_eq!(g.num_nodes(), 10);
        assert_eq!(g.locate(11).unwrap(), (1, 1));
        assert_eq!(g.num_edges(), 9);
    }

    #[test]
    fn one_hop_grouped_by_relation() {
        let g = toy();
        let n = g.one_hop_neighbors(0).unwrap();
        assert_eq!(n.len(), 2);
        assert_eq!(n["PA"], vec![10, 11]);
        assert_eq!(n["PS"], vec![20]);
        // Reverse direction from an author.
        assert_eq!(g.one_hop_neighbors(10).unwrap()["PA"], vec![0, 1]);
        assert!(g.one_hop_neighbors(4).unwrap().is_empty());
        assert!(matches!(g.one_hop_neighbors(99), Err(GraphError::UnknownNode(99))));
    }

    #[test]
    fn one_hop_matches_dense_transpose_lookup() {
        let g = toy();
        let dense = g.adjacency(0).to_dense();
        for a_local in 0..3 {
            let want: Vec<usize> = (0..5).filter(|&p| dense[[p, a_local]]).collect();
            let got = g.one_hop_neighbors(g.global_id(1, a_local)).unwrap().remove("PA").unwrap_or_default();
            assert_eq!(got, want);
        }
    }

    #[test]
    fn endpoint_type_violation_rejected() {
        let mut b = GraphBuilder::new();
        let p = b.node_type("paper");
        let a = b.node_type("author");
        b.add_node(0, p).add_node(1, a).add_node(2, p);
        let pa = b.relation("PA", p, a).unwrap();
        b.add_edge(pa, 0, 2);
        assert!(matches!(b.build(), Err(GraphError::TypeMismatch { .. })));
    }

    #[test]
    fn duplicate_edges_collapse() {
        let mut b = GraphBuilder::new();
        let p = b.node_type("paper");
        let a = b.node_type("author");
        b.add_node(0, p).add_node(1, a);
        let pa = b.relation("PA", p, a).unwrap();
        b.add_edge(pa, 0, 1).add_edge(pa, 0, 1);
        let g = b.build().unwrap();
        assert_eq!(g.num_edges(), 1);
        assert_eq!(g.duplicate_edges(), 1);
    }

    #[test]
    fn homogeneous_graph_rejected() {
        let mut b = GraphBuilder::new();
        let p = b.node_type("paper");
        b.add_node(0, p).add_node(1, p);
        let pp = b.relation("cites", p, p).unwrap();
        b.add_edge(pp, 0, 1);
        assert!(matches!(b.build(), Err(GraphError::NotHeterogeneous(2))));
    }

    #[test]
    fn ragged_features_rejected() {
        let mut b = GraphBuilder::new();
        let p = b.node_type("paper");
        let a = b.node_type("author");
        b.add_node(0, p).add_node(1, a);
        b.relation("PA", p, a).unwrap();
        b.features(p, Array2::zeros((2, 3)));
        assert!(matches!(b.build(), Err(GraphError::RaggedFeatures { rows: 2, expected: 1, .. })));
    }
}
