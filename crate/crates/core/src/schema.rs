//! Network-schema view encoder.
//!
//! Every node type is first projected into a shared `d`-dimensional space,
//! `h⁰ = X_type · P_type`. Each target node then attends over its one-hop
//! neighbours separately per relation, with additive attention
//! `leaky_relu(a_rᵀ [h⁰_e ∥ h⁰_w])` normalised over the neighbours reached
//! through that relation. The per-relation aggregates are averaged over the
//! relations present at the node and passed through ELU.

use std::sync::Arc;

use ndarray::Array2;

use crate::autodiff::{Init, ParamId, ParamStore, Real, Tape, Var};
use crate::error::Result;
use crate::hin::HeteroGraph;
use crate::sparse::CsrPattern;

pub const DEFAULT_ATTENTION_SLOPE: f64 = 0.2;

/// One relation touching the target type, seen from the target side.
#[derive(Clone, Debug)]
pub struct RelationBlock {
    pub relation: usize,
    pub name: String,
    pub neighbor_type: usize,
    /// `n_target x n_neighbor_type` incidence.
    pub pattern: Arc<CsrPattern>,
    /// Attention vector `[2d x 1]`: first half scores the anchor, second half
    /// the neighbour.
    pub attention: ParamId,
}

/// Learnable parts of the schema view plus the graph structure it runs on.
#[derive(Clone, Debug)]
pub struct SchemaEncoder<T> {
    pub target_type: usize,
    pub dim: usize,
    pub slope: f64,
    /// One projection `P_type [d_in(type) x d]` per node type.
    pub projections: Vec<ParamId>,
    pub blocks: Vec<RelationBlock>,
    features: Vec<Array2<T>>,
    /// `1 / (#relations with a neighbour)` per target node, zero when isolated.
    relation_scale: Array2<T>,
}

/// Output of [`SchemaEncoder::forward`].
pub struct SchemaOutput {
    /// Projected features `h⁰`, one tensor per node type.
    pub projected: Vec<Var>,
    /// Target-node embeddings `h¹`.
    pub embeddings: Var,
}

impl<T: Real> SchemaEncoder<T> {
    /// Registers one projection per node type and one attention vector per
    /// relation touching `target_type`. Every node type needs features.
    pub fn new(g: &HeteroGraph, target_type: usize, dim: usize, store: &mut ParamStore<T>) -> Result<Self> {
        let mut features = Vec::with_capacity(g.num_types());
        let mut projections = Vec::with_capacity(g.num_types());
        for t in 0..g.num_types() {
            let x = g.require_features(t)?;
            features.push(x.mapv(|v| T::of(v as f64)));
            projections.push(store.register(&format!("schema.proj.{}", g.type_name(t)), x.ncols(), dim, Init::XavierUniform)?);
        }
        let mut blocks = Vec::new();
        for (r, rel) in g.relations().iter().enumerate() {
            if let Some((neighbor_type, pattern)) = g.incidence(target_type, r) {
                let attention = store.register(&format!("schema.attn.{}", rel.name), 2 * dim, 1, Init::XavierUniform)?;
                blocks.push(RelationBlock {
                    relation: r,
                    name: rel.name.clone(),
                    neighbor_type,
                    pattern: Arc::new(pattern),
                    attention,
                });
            }
        }
        let n = g.node_count(target_type);
        let relation_scale = Array2::from_shape_fn((n, 1), |(i, _)| {
            let present = blocks.iter().filter(|b| b.pattern.row_nnz(i) > 0).count();
            if present == 0 {
                T::zero()
            } else {
                T::one() / T::from_usize(present).unwrap()
            }
        });
        Ok(Self {
            target_type,
            dim,
            slope: DEFAULT_ATTENTION_SLOPE,
            projections,
            blocks,
            features,
            relation_scale,
        })
    }

    pub fn num_targets(&self) -> usize {
        self.relation_scale.nrows()
    }

    /// Raw target-type features.
    pub fn target_features(&self) -> &Array2<T> {
        &self.features[self.target_type]
    }

    /// `h⁰ = X_type · P_type` for every node type.
    pub fn project_all(&self, tape: &mut Tape<T>, store: &ParamStore<T>) -> Result<Vec<Var>> {
        let mut out = Vec::with_capacity(self.features.len());
        for (x, &p) in self.features.iter().zip(&self.projections) {
            let xv = tape.constant(x.clone())?;
            let pv = tape.param(store, p)?;
            out.push(tape.matmul(xv, pv)?);
        }
        Ok(out)
    }

    /// Attention weights of block `b`, one per stored incidence entry
    /// (`nnz x 1`), summing to one over each anchor's neighbours.
    pub fn relation_attention(&self, tape: &mut Tape<T>, store: &ParamStore<T>, projected: &[Var], b: usize) -> Result<Var> {
        let block = &self.blocks[b];
        let a = tape.param(store, block.attention)?;
        let first: Vec<usize> = (0..self.dim).collect();
        let second: Vec<usize> = (self.dim..2 * self.dim).collect();
        let a_anchor = tape.gather_rows(a, &first)?;
        let a_neighbor = tape.gather_rows(a, &second)?;
        let s_anchor = tape.matmul(projected[self.target_type], a_anchor)?;
        let s_neighbor = tape.matmul(projected[block.neighbor_type], a_neighbor)?;
        let scores = tape.edge_scores(&block.pattern, s_anchor, s_neighbor)?;
        let scores = tape.leaky_relu(scores, T::of(self.slope))?;
        Ok(tape.segment_softmax(&block.pattern, scores)?)
    }

    /// `h¹` for every target node (given already projected features).
    pub fn aggregate(&self, tape: &mut Tape<T>, store: &ParamStore<T>, projected: &[Var]) -> Result<Var> {
        let n = self.num_targets();
        let mut total = tape.constant(Array2::zeros((n, self.dim)))?;
        for b in 0..self.blocks.len() {
            let alpha = self.relation_attention(tape, store, projected, b)?;
            let block = &self.blocks[b];
            let agg = tape.edge_weighted_matmul(&block.pattern, alpha, projected[block.neighbor_type])?;
            total = tape.add(total, agg)?;
        }
        let scale = tape.constant(self.relation_scale.clone())?;
        let mean = tape.mul_col(total, scale)?;
        Ok(tape.elu(mean)?)
    }

    pub fn forward(&self, tape: &mut Tape<T>, store: &ParamStore<T>) -> Result<SchemaOutput> {
        let projected = self.project_all(tape, store)?;
        let embeddings = self.aggregate(tape, store, &projected)?;
        Ok(SchemaOutput { projected, embeddings })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hin::fixtures::toy;
    use crate::hin::GraphBuilder;

    fn elu(x: f64) -> f64 {
        if x > 0.0 {
            x
        } else {
            x.exp_m1()
        }
    }

    fn leaky(x: f64) -> f64 {
        if x > 0.0 {
            x
        } else {
            0.2 * x
        }
    }

    /// Dense oracle: loops over every anchor and relation with explicit
    /// exp-normalise in f64.
    fn dense_oracle(g: &HeteroGraph, enc: &SchemaEncoder<f64>, store: &ParamStore<f64>) -> Array2<f64> {
        let t = enc.target_type;
        let h0: Vec<Array2<f64>> = (0..g.num_types())
            .map(|ty| g.features(ty).unwrap().mapv(|v| v as f64).dot(store.value(enc.projections[ty])))
            .collect();
        let d = enc.dim;
        let n = g.node_count(t);
        let mut out = Array2::zeros((n, d));
        for e in 0..n {
            let mut acc = vec![0.0; d];
            let mut present = 0;
            for block in &enc.blocks {
                let a = store.value(block.attention);
                let dense = block.pattern.to_dense();
                let nbrs: Vec<usize> = (0..dense.ncols()).filter(|&w| dense[[e, w]]).collect();
                if nbrs.is_empty() {
                    continue;
                }
                present += 1;
                let score = |w: usize| {
                    let mut s = 0.0;
                    for k in 0..d {
                        s += a[[k, 0]] * h0[t][[e, k]] + a[[d + k, 0]] * h0[block.neighbor_type][[w, k]];
                    }
                    leaky(s)
                };
                let z: f64 = nbrs.iter().map(|&w| score(w).exp()).sum();
                for &w in &nbrs {
                    let alpha = score(w).exp() / z;
                    for k in 0..d {
                        acc[k] += alpha * h0[block.neighbor_type][[w, k]];
                    }
                }
            }
            for k in 0..d {
                let mean = if present == 0 { 0.0 } else { acc[k] / present as f64 };
                out[[e, k]] = elu(mean);
            }
        }
        out
    }

    #[test]
    fn matches_dense_oracle() {
        let g = toy();
        let mut store = ParamStore::<f64>::new(11);
        let enc = SchemaEncoder::new(&g, 0, 4, &mut store).unwrap();
        let mut tape = Tape::new();
        let out = enc.forward(&mut tape, &store).unwrap();
        let want = dense_oracle(&g, &enc, &store);
        let got = tape.value(out.embeddings);
        for (a, b) in got.iter().zip(want.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        // Isolated paper 4 gets σ(0) = 0.
        assert!(got.row(4).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn attention_sums_to_one_per_anchor() {
        let g = toy();
        let mut store = ParamStore::<f64>::new(2);
        let enc = SchemaEncoder::new(&g, 0, 3, &mut store).unwrap();
        let mut tape = Tape::new();
        let proj = enc.project_all(&mut tape, &store).unwrap();
        for b in 0..enc.blocks.len() {
            let alpha = enc.relation_attention(&mut tape, &store, &proj, b).unwrap();
            let w = tape.value(alpha);
            let p = &enc.blocks[b].pattern;
            for r in 0..p.rows() {
                let (lo, hi) = (p.indptr()[r], p.indptr()[r + 1]);
                if lo < hi {
                    let s: f64 = (lo..hi).map(|e| w[[e, 0]]).sum();
                    assert!((s - 1.0).abs() < 1e-12);
                    assert!((lo..hi).all(|e| w[[e, 0]] > 0.0));
                }
            }
        }
    }

    /// Paper 0 with one author 1 and one subject 2, plus helper nodes.
    fn single_neighbor_graph(identical_authors: bool) -> HeteroGraph {
        let mut b = GraphBuilder::new();
        let p = b.node_type("paper");
        let a = b.node_type("author");
        let s = b.node_type("subject");
        b.add_node(0, p).add_node(1, a).add_node(2, a).add_node(3, s);
        let pa = b.relation("PA", p, a).unwrap();
        b.relation("PS", p, s).unwrap();
        b.add_edge(pa, 0, 1);
        if identical_authors {
            b.add_edge(pa, 0, 2);
        }
        b.features(p, Array2::from_elem((1, 2), 0.3));
        b.features(a, Array2::from_shape_vec((2, 2), vec![0.5, -1.0, 0.5, -1.0]).unwrap());
        b.features(s, Array2::from_elem((1, 2), 1.0));
        b.build().unwrap()
    }

    #[test]
    fn single_neighbor_and_duplicate_neighbors_agree() {
        let run = |g: &HeteroGraph| {
            let mut store = ParamStore::<f64>::new(5);
            let enc = SchemaEncoder::new(g, 0, 3, &mut store).unwrap();
            let mut tape = Tape::new();
            let out = enc.forward(&mut tape, &store).unwrap();
            let proj_author = tape.value(out.projected[1]).row(0).to_owned();
            (tape.value(out.embeddings).row(0).to_owned(), proj_author)
        };
        let (one, proj) = run(&single_neighbor_graph(false));
        // One relation, one neighbour: h¹ = σ(h⁰_w).
        for (a, b) in one.iter().zip(proj.iter()) {
            assert!((a - elu(*b)).abs() < 1e-12);
        }
        let (two, _) = run(&single_neighbor_graph(true));
        for (a, b) in one.iter().zip(two.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_projection_and_zero_features() {
        let g = single_neighbor_graph(false);
        let mut store = ParamStore::<f64>::new(5);
        let enc = SchemaEncoder::new(&g, 0, 2, &mut store).unwrap();
        for &p in &enc.projections {
            *store.value_mut(p) = Array2::eye(2);
        }
        let mut tape = Tape::new();
        let proj = enc.project_all(&mut tape, &store).unwrap();
        assert_eq!(tape.value(proj[1]), &g.features(1).unwrap().mapv(|v| v as f64));

        let zero = rebuild_with_zero_features(&g);
        let mut store = ParamStore::<f64>::new(5);
        let enc = SchemaEncoder::new(&zero, 0, 2, &mut store).unwrap();
        let mut tape = Tape::new();
        let proj = enc.project_all(&mut tape, &store).unwrap();
        for v in &proj {
            assert!(tape.value(*v).iter().all(|&x| x == 0.0));
        }
    }

    fn rebuild_with_zero_features(g: &HeteroGraph) -> HeteroGraph {
        let dir = tempfile::tempdir().unwrap();
        crate::hin::save_hin(g, dir.path()).unwrap();
        for t in 0..g.num_types() {
            let x = g.features(t).unwrap();
            crate::fmat::save_fmat(&dir.path().join(format!("features_{}.fmat", g.type_name(t))), &Array2::zeros(x.dim())).unwrap();
        }
        crate::hin::load_hin(dir.path()).unwrap()
    }
}
