//! Meta-path view: masked graph autoencoder per view, semantic attention
//! fusion across views and the feature-reconstruction loss.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use ndarray::Array2;
use rand::seq::index::sample;

use crate::autodiff::{Init, ParamId, ParamStore, Real, Tape, TensorError, Var};
use crate::error::Result;
use crate::rng::seeded;
use crate::sparse::{CsrPattern, SparseMatrix};

/// Propagation rule of a GNN layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GnnKind {
    /// `D^{-1/2} (A + I) D^{-1/2} X W`.
    Gcn,
    /// Single-head additive attention over `A + I`.
    Gat,
}

impl FromStr for GnnKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "gcn" => Ok(GnnKind::Gcn),
            "gat" => Ok(GnnKind::Gat),
            other => Err(format!("unknown GNN kind `{other}` (expected gcn or gat)")),
        }
    }
}

impl fmt::Display for GnnKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GnnKind::Gcn => "gcn",
            GnnKind::Gat => "gat",
        })
    }
}

/// Propagation structure of one meta-path view. The stored view has no
/// self-loops; they are added here.
#[derive(Clone, Debug)]
pub struct ViewGraph<T> {
    pub name: String,
    pub with_loops: Arc<CsrPattern>,
    pub normalized: Arc<SparseMatrix<T>>,
}

impl<T: Real> ViewGraph<T> {
    pub fn new(name: impl Into<String>, adjacency: &CsrPattern) -> Self {
        let with_loops = Arc::new(adjacency.with_self_loops());
        let normalized = Arc::new(SparseMatrix::sym_normalized(Arc::clone(&with_loops)));
        Self {
            name: name.into(),
            with_loops,
            normalized,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.with_loops.rows()
    }
}

/// Node subset chosen for masking, kept both as sorted ids and as flags.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskSet {
    pub rows: Vec<usize>,
    pub flags: Arc<Vec<bool>>,
}

impl MaskSet {
    pub fn empty(n: usize) -> Self {
        Self::from_rows(n, Vec::new())
    }

    pub fn from_rows(n: usize, mut rows: Vec<usize>) -> Self {
        rows.sort_unstable();
        rows.dedup();
        let mut flags = vec![false; n];
        for &r in &rows {
            flags[r] = true;
        }
        Self { rows, flags: Arc::new(flags) }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.flags.get(i).copied().unwrap_or(false)
    }
}

/// Uniform subset of `round(p · n)` distinct nodes, deterministic per seed.
///
/// Panics unless `0 <= p < 1`.
pub fn sample_mask(n: usize, p: f64, seed: u64) -> MaskSet {
    assert!((0.0..1.0).contains(&p), "mask ratio must lie in [0, 1), got {p}");
    let k = ((p * n as f64).round() as usize).min(n);
    let mut rng = seeded(seed);
    let rows = sample(&mut rng, n, k).into_vec();
    MaskSet::from_rows(n, rows)
}

/// The two node sets of one masking round.
#[derive(Clone, Debug)]
pub struct MaskPlan {
    pub mask: MaskSet,
    pub remask: MaskSet,
    pub mask_ratio: f64,
    pub remask_ratio: f64,
    pub seed: u64,
}

impl MaskPlan {
    pub fn sample(n: usize, mask_ratio: f64, remask_ratio: f64, seed: u64) -> Self {
        Self {
            mask: sample_mask(n, mask_ratio, seed),
            remask: sample_mask(n, remask_ratio, crate::rng::derive_seed(seed, 1)),
            mask_ratio,
            remask_ratio,
            seed,
        }
    }

    /// No masking at all, used when extracting embeddings.
    pub fn none(n: usize) -> Self {
        Self {
            mask: MaskSet::empty(n),
            remask: MaskSet::empty(n),
            mask_ratio: 0.0,
            remask_ratio: 0.0,
            seed: 0,
        }
    }
}

/// Replaces the features of every masked node with the `1 x d` token.
pub fn apply_mask<T: Real>(tape: &mut Tape<T>, x: Var, set: &MaskSet, token: Var) -> Result<Var> {
    Ok(tape.replace_rows(x, token, &set.flags)?)
}

#[derive(Clone, Debug)]
pub struct GnnLayer {
    pub kind: GnnKind,
    pub weight: ParamId,
    /// `[2 * out x 1]` attention vector for [`GnnKind::Gat`].
    pub attention: Option<ParamId>,
    pub activate: bool,
}

pub const GAT_SLOPE: f64 = 0.2;

impl GnnLayer {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, kind: GnnKind, in_dim: usize, out_dim: usize, activate: bool) -> Result<Self> {
        let weight = store.register(&format!("{name}.w"), in_dim, out_dim, Init::XavierUniform)?;
        let attention = match kind {
            GnnKind::Gcn => None,
            GnnKind::Gat => Some(store.register(&format!("{name}.attn"), 2 * out_dim, 1, Init::XavierUniform)?),
        };
        Ok(Self {
            kind,
            weight,
            attention,
            activate,
        })
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, graph: &ViewGraph<T>, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight)?;
        let z = tape.matmul(x, w)?;
        let out = match self.kind {
            GnnKind::Gcn => tape.sparse_dense_matmul(&graph.normalized, z)?,
            GnnKind::Gat => {
                let a = tape.param(store, self.attention.expect("GAT layer has attention"))?;
                let d = tape.shape(z).1;
                let first: Vec<usize> = (0..d).collect();
                let second: Vec<usize> = (d..2 * d).collect();
                let a_src = tape.gather_rows(a, &first)?;
                let a_dst = tape.gather_rows(a, &second)?;
                let s_src = tape.matmul(z, a_src)?;
                let s_dst = tape.matmul(z, a_dst)?;
                let scores = tape.edge_scores(&graph.with_loops, s_src, s_dst)?;
                let scores = tape.leaky_relu(scores, T::of(GAT_SLOPE))?;
                let alpha = tape.segment_softmax(&graph.with_loops, scores)?;
                tape.edge_weighted_matmul(&graph.with_loops, alpha, z)?
            }
        };
        Ok(if self.activate { tape.elu(out)? } else { out })
    }
}

/// Shape of one autoencoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MaeShape {
    pub in_dim: usize,
    pub hidden: usize,
    pub out_dim: usize,
    pub encoder: GnnKind,
    pub encoder_layers: usize,
    pub decoder: GnnKind,
    pub decoder_layers: usize,
}

/// Encoder `f_E`, decoder `f_D`, linear output head and mask token of one view.
#[derive(Clone, Debug)]
pub struct MaskedAutoencoder {
    pub shape: MaeShape,
    pub encoder: Vec<GnnLayer>,
    pub decoder: Vec<GnnLayer>,
    /// `[hidden x out_dim]` map applied after the decoder.
    pub head: ParamId,
    /// `[1 x in_dim]` learnable feature used for masked nodes.
    pub mask_token: ParamId,
}

impl MaskedAutoencoder {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, shape: MaeShape) -> Result<Self> {
        assert!(shape.encoder_layers >= 1 && shape.decoder_layers >= 1, "at least one layer each");
        let mut encoder = Vec::with_capacity(shape.encoder_layers);
        for l in 0..shape.encoder_layers {
            let input = if l == 0 { shape.in_dim } else { shape.hidden };
            encoder.push(GnnLayer::new(store, &format!("{name}.enc{l}"), shape.encoder, input, shape.hidden, true)?);
        }
        let mut decoder = Vec::with_capacity(shape.decoder_layers);
        for l in 0..shape.decoder_layers {
            decoder.push(GnnLayer::new(
                store,
                &format!("{name}.dec{l}"),
                shape.decoder,
                shape.hidden,
                shape.hidden,
                true,
            )?);
        }
        let head = store.register(&format!("{name}.head"), shape.hidden, shape.out_dim, Init::XavierUniform)?;
        let mask_token = store.register(&format!("{name}.mask_token"), 1, shape.in_dim, Init::XavierUniform)?;
        Ok(Self {
            shape,
            encoder,
            decoder,
            head,
            mask_token,
        })
    }

    /// `H = f_E(A, X̃)`.
    pub fn encode<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, graph: &ViewGraph<T>, x_masked: Var) -> Result<Var> {
        let mut h = x_masked;
        for layer in &self.encoder {
            h = layer.forward(tape, store, graph, h)?;
        }
        Ok(h)
    }

    /// Mask token carried into the hidden space by the first encoder weight.
    pub fn hidden_token<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>) -> Result<Var> {
        let token = tape.param(store, self.mask_token)?;
        let w = tape.param(store, self.encoder[0].weight)?;
        Ok(tape.matmul(token, w)?)
    }

    /// `H_Re = head(f_D(A, H̃))` where `H̃` has the remasked rows replaced.
    pub fn remask_decode<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, graph: &ViewGraph<T>, h: Var, remask: &MaskSet) -> Result<Var> {
        let mut z = if remask.is_empty() {
            h
        } else {
            let token = self.hidden_token(tape, store)?;
            tape.replace_rows(h, token, &remask.flags)?
        };
        for layer in &self.decoder {
            z = layer.forward(tape, store, graph, z)?;
        }
        let head = tape.param(store, self.head)?;
        Ok(tape.matmul(z, head)?)
    }

    /// Masks `x`, encodes, remasks and decodes.
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, graph: &ViewGraph<T>, x: Var, plan: &MaskPlan) -> Result<Var> {
        let x_masked = if plan.mask.is_empty() {
            x
        } else {
            let token = tape.param(store, self.mask_token)?;
            apply_mask(tape, x, &plan.mask, token)?
        };
        let h = self.encode(tape, store, graph, x_masked)?;
        self.remask_decode(tape, store, graph, h, &plan.remask)
    }
}

/// Shared semantic attention: `w_j = mean_e qᵀ tanh(W h_e + b)`, `γ = softmax(w)`.
#[derive(Clone, Debug)]
pub struct SemanticAttention {
    pub weight: ParamId,
    pub bias: ParamId,
    pub query: ParamId,
}

impl SemanticAttention {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            weight: store.register(&format!("{name}.w"), dim, dim, Init::XavierUniform)?,
            bias: store.register(&format!("{name}.b"), 1, dim, Init::Zeros)?,
            query: store.register(&format!("{name}.q"), dim, 1, Init::XavierUniform)?,
        })
    }

    /// Per-view scores `w_j` as an `M x 1` column.
    pub fn scores<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, views: &[Var]) -> Result<Var> {
        let w = tape.param(store, self.weight)?;
        let b = tape.param(store, self.bias)?;
        let q = tape.param(store, self.query)?;
        let mut per_view = Vec::with_capacity(views.len());
        for &h in views {
            let z = tape.matmul(h, w)?;
            let z = tape.add_row(z, b)?;
            let z = tape.tanh(z)?;
            let s = tape.matmul(z, q)?;
            per_view.push(tape.mean_all(s)?);
        }
        Ok(tape.concat_rows(&per_view)?)
    }

    /// View weights `γ` as an `M x 1` column summing to one.
    pub fn weights<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, views: &[Var]) -> Result<Var> {
        let scores = self.scores(tape, store, views)?;
        let row = tape.transpose(scores)?;
        let gamma = tape.row_softmax(row)?;
        Ok(tape.transpose(gamma)?)
    }
}

/// `h² = Σ_j γ_j H_j` for an `M x 1` weight column `gamma`.
pub fn fuse_views<T: Real>(tape: &mut Tape<T>, views: &[Var], gamma: Var) -> Result<Var> {
    if tape.shape(gamma) != (views.len(), 1) {
        return Err(TensorError::ShapeMismatch {
            op: "fuse_views",
            lhs: tape.shape(gamma),
            rhs: (views.len(), 1),
        }
        .into());
    }
    let mut acc: Option<Var> = None;
    for (j, &h) in views.iter().enumerate() {
        let g = tape.gather_rows(gamma, &[j])?;
        let term = tape.scale(h, g)?;
        acc = Some(match acc {
            None => term,
            Some(a) => tape.add(a, term)?,
        });
    }
    Ok(acc.expect("at least one view"))
}

/// Mean over masked nodes of `‖h⁰_e − h²_e‖²`; zero for an empty mask set.
pub fn generative_loss<T: Real>(tape: &mut Tape<T>, target: Var, reconstructed: Var, mask: &MaskSet) -> Result<Var> {
    if tape.shape(target) != tape.shape(reconstructed) {
        return Err(TensorError::ShapeMismatch {
            op: "generative_loss",
            lhs: tape.shape(target),
            rhs: tape.shape(reconstructed),
        }
        .into());
    }
    if mask.is_empty() {
        return Ok(tape.constant(Array2::zeros((1, 1)))?);
    }
    let a = tape.gather_rows(target, &mask.rows)?;
    let b = tape.gather_rows(reconstructed, &mask.rows)?;
    let diff = tape.sub(a, b)?;
    let sq = tape.elementwise_mul(diff, diff)?;
    let total = tape.sum_all(sq)?;
    Ok(tape.scalar_mul(total, T::one() / T::from_usize(mask.len()).unwrap())?)
}
