use std::sync::Arc;

use ndarray::Array2;

use super::{GraphError, HeteroGraph};
use crate::sparse::{CountMatrix, CsrPattern};

/// One hop of a meta-path: a relation walked forwards (src → dst) or
/// backwards (dst → src).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct MetaPathStep {
    pub relation: usize,
    pub reversed: bool,
}

/// Relation sequence linking target-type nodes through intermediaries,
/// e.g. paper → author → paper.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct MetaPath {
    pub name: String,
    pub steps: Vec<MetaPathStep>,
}

impl MetaPath {
    pub fn new(name: impl Into<String>, steps: Vec<MetaPathStep>) -> Self {
        Self { name: name.into(), steps }
    }

    /// Resolves a node-type sequence such as `["paper", "author", "paper"]`.
    /// Each consecutive pair must be joined by exactly one relation.
    pub fn from_types(g: &HeteroGraph, name: impl Into<String>, types: &[&str]) -> Result<Self, GraphError> {
        let name = name.into();
        if types.len() < 2 {
            return Err(GraphError::IncompatibleMetaPath(format!("`{name}` needs at least two node types")));
        }
        let ids = types.iter().map(|t| g.type_id(t)).collect::<Result<Vec<_>, _>>()?;
        let mut steps = Vec::with_capacity(ids.len() - 1);
        for pair in ids.windows(2) {
            let (from, to) = (pair[0], pair[1]);
            let mut candidates = Vec::new();
            for (r, rel) in g.relations().iter().enumerate() {
                if rel.src_type == from && rel.dst_type == to {
                    candidates.push(MetaPathStep { relation: r, reversed: false });
                } else if rel.src_type == to && rel.dst_type == from {
                    candidates.push(MetaPathStep { relation: r, reversed: true });
                }
            }
            match candidates.as_slice() {
                [step] => steps.push(*step),
                [] => {
                    return Err(GraphError::IncompatibleMetaPath(format!(
                        "no relation joins `{}` and `{}`",
                        g.type_name(from),
                        g.type_name(to)
                    )))
                }
                _ => {
                    return Err(GraphError::IncompatibleMetaPath(format!(
                        "several relations join `{}` and `{}`",
                        g.type_name(from),
                        g.type_name(to)
                    )))
                }
            }
        }
        let mp = Self { name, steps };
        mp.target_type(g)?;
        Ok(mp)
    }

    /// Parses `NAME:type-type-type` or `type-type-type`. Without an explicit
    /// name, the upper-cased initials of the types are used (`PAP`).
    pub fn parse(g: &HeteroGraph, spec: &str) -> Result<Self, GraphError> {
        let (name, path) = match spec.split_once(':') {
            Some((n, p)) => (Some(n.trim().to_string()), p),
            None => (None, spec),
        };
        let types: Vec<&str> = path.split('-').map(str::trim).collect();
        let name = name.unwrap_or_else(|| types.iter().filter_map(|t| t.chars().next()).flat_map(char::to_uppercase).collect());
        Self::from_types(g, name, &types)
    }

    fn step_types(g: &HeteroGraph, s: MetaPathStep) -> Result<(usize, usize), GraphError> {
        let rel = g
            .relations()
            .get(s.relation)
            .ok_or_else(|| GraphError::IncompatibleMetaPath(format!("relation {} does not exist", s.relation)))?;
        Ok(if s.reversed {
            (rel.dst_type, rel.src_type)
        } else {
            (rel.src_type, rel.dst_type)
        })
    }

    /// Checks the type chain and returns the target (first = last) type.
    pub fn target_type(&self, g: &HeteroGraph) -> Result<usize, GraphError> {
        let first = *self
            .steps
            .first()
            .ok_or_else(|| GraphError::IncompatibleMetaPath(format!("`{}` is empty", self.name)))?;
        let (start, mut at) = Self::step_types(g, first)?;
        for &s in &self.steps[1..] {
            let (from, to) = Self::step_types(g, s)?;
            if from != at {
                return Err(GraphError::IncompatibleMetaPath(format!(
                    "`{}`: step expects `{}` but the previous step ends at `{}`",
                    self.name,
                    g.type_name(from),
                    g.type_name(at)
                )));
            }
            at = to;
        }
        if at != start {
            return Err(GraphError::IncompatibleMetaPath(format!(
                "`{}` starts at `{}` but ends at `{}`",
                self.name,
                g.type_name(start),
                g.type_name(at)
            )));
        }
        Ok(start)
    }

    /// True when walking the path backwards gives the same relation sequence,
    /// which makes the composed adjacency symmetric.
    pub fn is_palindromic(&self) -> bool {
        let n = self.steps.len();
        (0..n).all(|i| {
            let (a, b) = (self.steps[i], self.steps[n - 1 - i]);
            a.relation == b.relation && a.reversed != b.reversed
        })
    }
}

pub(crate) fn step_pattern(g: &HeteroGraph, s: MetaPathStep) -> CsrPattern {
    let a = g.adjacency(s.relation);
    if s.reversed {
        a.transpose()
    } else {
        (**a).clone()
    }
}

/// Boolean meta-path adjacency: `(u, v)` is set iff some path instance links
/// `u` to `v` and `u != v`.
pub fn compose_metapath_adjacency(g: &HeteroGraph, mp: &MetaPath) -> Result<CsrPattern, GraphError> {
    mp.target_type(g)?;
    let mut acc = step_pattern(g, mp.steps[0]);
    for &s in &mp.steps[1..] {
        acc = acc.bool_product(&step_pattern(g, s));
    }
    Ok(acc.without_diagonal())
}

/// Number of path instances between every pair of target nodes (diagonal
/// included).
pub fn compose_metapath_counts(g: &HeteroGraph, mp: &MetaPath) -> Result<CountMatrix, GraphError> {
    mp.target_type(g)?;
    let mut acc = CountMatrix::from_pattern(&step_pattern(g, mp.steps[0]));
    for &s in &mp.steps[1..] {
        acc = acc.then(&step_pattern(g, s));
    }
    Ok(acc)
}

/// Same-type subgraph induced by one meta-path.
#[derive(Clone, Debug)]
pub struct MetaPathView {
    pub name: String,
    pub target_type: usize,
    /// Global ids of the view's nodes, in local order.
    pub nodes: Vec<usize>,
    /// Zero-diagonal boolean adjacency over local indices.
    pub adjacency: Arc<CsrPattern>,
    pub features: Array2<f32>,
}

impl MetaPathView {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

pub fn build_view(g: &HeteroGraph, mp: &MetaPath) -> Result<MetaPathView, GraphError> {
    let target = mp.target_type(g)?;
    let features = g.require_features(target)?.clone();
    let adjacency = compose_metapath_adjacency(g, mp)?;
    Ok(MetaPathView {
        name: mp.name.clone(),
        target_type: target,
        nodes: g.nodes_of_type(target).to_vec(),
        adjacency: Arc::new(adjacency),
        features,
    })
}

/// Precomputed adjacency and path counts for a set of meta-paths sharing a
/// target type.
#[derive(Clone, Debug)]
pub struct MetaPathIndex {
    pub target_type: usize,
    pub paths: Vec<MetaPath>,
    pub adjacency: Vec<Arc<CsrPattern>>,
    counts: Vec<CountMatrix>,
}

impl MetaPathIndex {
    pub fn new(g: &HeteroGraph, paths: &[MetaPath]) -> Result<Self, GraphError> {
        let first = paths.first().ok_or_else(|| GraphError::IncompatibleMetaPath("no meta-paths given".into()))?;
        let target_type = first.target_type(g)?;
        let mut adjacency = Vec::with_capacity(paths.len());
        let mut counts = Vec::with_capacity(paths.len());
        for mp in paths {
            if mp.target_type(g)? != target_type {
                return Err(GraphError::IncompatibleMetaPath(format!(
                    "`{}` targets a different node type than `{}`",
                    mp.name, first.name
                )));
            }
            adjacency.push(Arc::new(compose_metapath_adjacency(g, mp)?));
            counts.push(compose_metapath_counts(g, mp)?);
        }
        Ok(Self {
            target_type,
            paths: paths.to_vec(),
            adjacency,
            counts,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.adjacency.first().map_or(0, |a| a.rows())
    }

    /// Number of meta-paths under which local nodes `u` and `v` are adjacent.
    pub fn pair_count(&self, u: usize, v: usize) -> usize {
        if u == v {
            return 0;
        }
        self.adjacency.iter().filter(|a| a.contains(u, v)).count()
    }

    /// Total path instances between `u` and `v` across all meta-paths.
    pub fn instance_count(&self, u: usize, v: usize) -> u64 {
        if u == v {
            return 0;
        }
        self.counts.iter().map(|c| c.get(u, v)).sum()
    }

    /// Per-node degree summed over all meta-path views.
    pub fn degrees(&self) -> Vec<usize> {
        (0..self.num_nodes()).map(|u| self.adjacency.iter().map(|a| a.row_nnz(u)).sum()).collect()
    }

    /// Path counts of one meta-path.
    pub fn counts(&self, j: usize) -> &CountMatrix {
        &self.counts[j]
    }
}

/// Number of meta-paths in `mps` under which global nodes `u` and `v` are
/// adjacent. Self pairs count zero.
pub fn metapath_pair_count(g: &HeteroGraph, u: usize, v: usize, mps: &[MetaPath]) -> Result<usize, GraphError> {
    let (tu, lu) = g.locate(u)?;
    let (tv, lv) = g.locate(v)?;
    if u == v || mps.is_empty() {
        return Ok(0);
    }
    let index = MetaPathIndex::new(g, mps)?;
    if tu != index.target_type || tv != index.target_type {
        return Ok(0);
    }
    Ok(index.pair_count(lu, lv))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hin::fixtures::toy;
    use crate::hin::GraphBuilder;

    #[test]
    fn pap_links_coauthored_papers() {
        let g = toy();
        let pap = MetaPath::parse(&g, "paper-author-paper").unwrap();
        assert_eq!(pap.name, "PAP");
        assert!(pap.is_palindromic());
        let a = compose_metapath_adjacency(&g, &pap).unwrap();
        // P0-A10-P1 and P0-A11-P2
        assert_eq!(a.row(0), &[1, 2]);
        assert_eq!(a.row(3), &[] as &[usize]);
        assert!(a.is_symmetric());
        assert!((0..5).all(|i| !a.contains(i, i)));
    }

    #[test]
    fn non_closing_path_rejected() {
        let g = toy();
        assert!(matches!(MetaPath::parse(&g, "paper-author"), Err(GraphError::IncompatibleMetaPath(_))));
        assert!(matches!(MetaPath::parse(&g, "author-subject-author"), Err(GraphError::IncompatibleMetaPath(_))));
        // A single forward step of a bipartite relation cannot start and end
        // at the same type.
        let single = MetaPath::new("PA", vec![MetaPathStep { relation: 0, reversed: false }]);
        assert!(matches!(compose_metapath_adjacency(&g, &single), Err(GraphError::IncompatibleMetaPath(_))));
    }

    #[test]
    fn views_share_features() {
        let g = toy();
        let pap = build_view(&g, &MetaPath::parse(&g, "paper-author-paper").unwrap()).unwrap();
        let psp = build_view(&g, &MetaPath::parse(&g, "paper-subject-paper").unwrap()).unwrap();
        assert_eq!(pap.len(), 5);
        assert_eq!(pap.features, psp.features);
        assert_eq!(psp.adjacency.row(0), &[1]);
    }

    #[test]
    fn pair_count_over_two_paths() {
        let g = toy();
        let mps = vec![
            MetaPath::parse(&g, "paper-author-paper").unwrap(),
            MetaPath::parse(&g, "paper-subject-paper").unwrap(),
        ];
        // P0-A10-P1 and P0-S20-P1.
        assert_eq!(metapath_pair_count(&g, 0, 1, &mps).unwrap(), 2);
        assert_eq!(metapath_pair_count(&g, 0, 2, &mps).unwrap(), 1);
        assert_eq!(metapath_pair_count(&g, 2, 3, &mps).unwrap(), 1);
        assert_eq!(metapath_pair_count(&g, 0, 0, &mps).unwrap(), 0);
        assert_eq!(metapath_pair_count(&g, 0, 4, &mps).unwrap(), 0);
        let index = MetaPathIndex::new(&g, &mps).unwrap();
        assert_eq!(index.instance_count(0, 1), 2);
        assert_eq!(index.degrees(), vec![3, 2, 2, 1, 0]);
    }

    #[test]
    fn ambiguous_type_pair_rejected() {
        let mut b = GraphBuilder::new();
        let p = b.node_type("paper");
        let a = b.node_type("author");
        b.add_node(0, p).add_node(1, a);
        b.relation("writes", a, p).unwrap();
        b.relation("reviews", a, p).unwrap();
        let g = b.build().unwrap();
        assert!(matches!(MetaPath::parse(&g, "paper-author-paper"), Err(GraphError::IncompatibleMetaPath(_))));
        // Explicit steps still work.
        let mp = MetaPath::new(
            "PwAwP",
            vec![MetaPathStep { relation: 0, reversed: true }, MetaPathStep { relation: 0, reversed: false }],
        );
        assert_eq!(mp.target_type(&g).unwrap(), p);
    }
}
