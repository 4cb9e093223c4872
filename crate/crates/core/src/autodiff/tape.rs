use std::sync::Arc;

use ndarray::{Array2, Axis, Zip};

use super::{ParamId, ParamStore, Real, TensorError};
use crate::sparse::{spmm_weighted, spmm_weighted_t, CsrPattern, SparseMatrix};

type Result<T> = std::result::Result<T, TensorError>;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    MatMul(usize, usize),
    SpMM(Arc<SparseMatrix<T>>, usize),
    EdgeScores {
        pattern: Arc<CsrPattern>,
        src: usize,
        dst: usize,
    },
    SegmentSoftmax(Arc<CsrPattern>, usize),
    EdgeSpMM {
        pattern: Arc<CsrPattern>,
        weights: usize,
        x: usize,
    },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    MulCol(usize, usize),
    Scale(usize, usize),
    ScalarMul(usize, T),
    ScalarAdd(usize),
    ConcatRows(Vec<usize>),
    GatherRows(usize, Arc<Vec<usize>>),
    ReplaceRows {
        x: usize,
        token: usize,
        mask: Arc<Vec<bool>>,
    },
    Transpose(usize),
    RowSoftmax(usize),
    MaskedRowLogSumExp {
        x: usize,
        weights: Array2<T>,
    },
    Tanh(usize),
    Elu(usize, T),
    LeakyRelu(usize, T),
    Exp(usize),
    Log(usize),
    Power(usize, T),
    LogSigmoid(usize),
    L2NormalizeRows(usize, Vec<T>),
    RowSum(usize),
    MeanAll(usize),
    SumAll(usize),
    CosineSimilarity {
        a: usize,
        b: usize,
        a_hat: Array2<T>,
        b_hat: Array2<T>,
        a_norm: Vec<T>,
        b_norm: Vec<T>,
    },
}

struct Node<T> {
    value: Array2<T>,
    op: Op<T>,
    requires_grad: bool,
    param: Option<ParamId>,
}

/// Append-only record of primitive applications.
///
/// Nodes are stored in creation order, which is a topological order of the
/// computation. A tape is meant for one forward/backward step; build a fresh
/// one (or call [`Tape::clear`]) for the next step.
pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradient of a scalar with respect to every node that required one.
pub struct Gradients<T> {
    grads: Vec<Option<Array2<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient for `v`, or `None` when `v` does not influence the loss or
    /// does not require gradients.
    pub fn get(&self, v: Var) -> Option<&Array2<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient for `v`, zero-filled when unreachable.
    pub fn get_or_zero(&self, v: Var, shape: (usize, usize)) -> Array2<T> {
        self.get(v).cloned().unwrap_or_else(|| Array2::zeros(shape))
    }
}

fn shape<T>(a: &Array2<T>) -> (usize, usize) {
    (a.nrows(), a.ncols())
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    pub fn value(&self, v: Var) -> &Array2<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        shape(&self.nodes[v.0].value)
    }

    /// The single entry of a 1x1 tensor.
    pub fn scalar(&self, v: Var) -> T {
        let val = self.value(v);
        assert_eq!(shape(val), (1, 1), "scalar() on a non-scalar tensor");
        val[[0, 0]]
    }

    fn rg(&self, i: usize) -> bool {
        self.nodes[i].requires_grad
    }

    fn push(&mut self, op_name: &'static str, value: Array2<T>, op: Op<T>, rg: bool) -> Result<Var> {
        if !value.iter().all(|x| x.is_finite()) {
            return Err(TensorError::NonFiniteValue { op: op_name });
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad: rg,
            param: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn leaf(&mut self, value: Array2<T>, requires_grad: bool, param: Option<ParamId>) -> Result<Var> {
        let v = self.push("leaf", value, Op::Leaf, requires_grad)?;
        self.nodes[v.0].param = param;
        Ok(v)
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, value: Array2<T>) -> Result<Var> {
        self.leaf(value, false, None)
    }

    /// A free leaf that receives a gradient but is not tied to a parameter.
    pub fn variable(&mut self, value: Array2<T>) -> Result<Var> {
        self.leaf(value, true, None)
    }

    /// Records the current value of a stored parameter.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Result<Var> {
        self.leaf(store.value(id).clone(), true, Some(id))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(TensorError::ShapeMismatch { op, lhs: sa, rhs: sb });
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: sa,
                rhs: sb,
            });
        }
        let out = self.value(a).dot(self.value(b));
        let rg = self.rg(a.0) || self.rg(b.0);
        self.push("matmul", out, Op::MatMul(a.0, b.0), rg)
    }

    /// Product of a constant sparse matrix with a dense tensor.
    pub fn sparse_dense_matmul(&mut self, m: &Arc<SparseMatrix<T>>, x: Var) -> Result<Var> {
        let sx = self.shape(x);
        if m.shape().1 != sx.0 {
            return Err(TensorError::ShapeMismatch {
                op: "sparse_dense_matmul",
                lhs: m.shape(),
                rhs: sx,
            });
        }
        let out = m.spmm(self.value(x));
        let rg = self.rg(x.0);
        self.push("sparse_dense_matmul", out, Op::SpMM(Arc::clone(m), x.0), rg)
    }

    /// Per-entry score `src[row] + dst[col]` for every stored entry of
    /// `pattern`. `src` is `rows x 1`, `dst` is `cols x 1`; output is `nnz x 1`.
    pub fn edge_scores(&mut self, pattern: &Arc<CsrPattern>, src: Var, dst: Var) -> Result<Var> {
        let (ss, sd) = (self.shape(src), self.shape(dst));
        if ss != (pattern.rows(), 1) || sd != (pattern.cols(), 1) {
            return Err(TensorError::ShapeMismatch {
                op: "edge_scores",
                lhs: ss,
                rhs: sd,
            });
        }
        let (s, d) = (self.value(src), self.value(dst));
        let mut out = Array2::zeros((pattern.nnz(), 1));
        for (e, (r, c)) in pattern.entries().enumerate() {
            out[[e, 0]] = s[[r, 0]] + d[[c, 0]];
        }
        let rg = self.rg(src.0) || self.rg(dst.0);
        let op = Op::EdgeScores {
            pattern: Arc::clone(pattern),
            src: src.0,
            dst: dst.0,
        };
        self.push("edge_scores", out, op, rg)
    }

    /// Softmax over the stored entries of each row of `pattern`.
    ///
    /// This is the sparse form of a masked row softmax; rows without stored
    /// entries simply produce nothing.
    pub fn segment_softmax(&mut self, pattern: &Arc<CsrPattern>, scores: Var) -> Result<Var> {
        let s = self.shape(scores);
        if s != (pattern.nnz(), 1) {
            return Err(TensorError::ShapeMismatch {
                op: "segment_softmax",
                lhs: s,
                rhs: (pattern.nnz(), 1),
            });
        }
        let x = self.value(scores);
        let mut out = Array2::zeros((pattern.nnz(), 1));
        for r in 0..pattern.rows() {
            let (lo, hi) = (pattern.indptr()[r], pattern.indptr()[r + 1]);
            if lo == hi {
                continue;
            }
            let max = (lo..hi).map(|e| x[[e, 0]]).fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for e in lo..hi {
                let v = (x[[e, 0]] - max).exp();
                out[[e, 0]] = v;
                total += v;
            }
            for e in lo..hi {
                out[[e, 0]] /= total;
            }
        }
        let rg = self.rg(scores.0);
        self.push("segment_softmax", out, Op::SegmentSoftmax(Arc::clone(pattern), scores.0), rg)
    }

    /// `out[r] = Σ_e weights[e] · x[col(e)]` over the stored entries of row `r`.
    pub fn edge_weighted_matmul(&mut self, pattern: &Arc<CsrPattern>, weights: Var, x: Var) -> Result<Var> {
        let (sw, sx) = (self.shape(weights), self.shape(x));
        if sw != (pattern.nnz(), 1) || sx.0 != pattern.cols() {
            return Err(TensorError::ShapeMismatch {
                op: "edge_weighted_matmul",
                lhs: sw,
                rhs: sx,
            });
        }
        let w: Vec<T> = self.value(weights).iter().copied().collect();
        let out = spmm_weighted(pattern, &w, self.value(x));
        let rg = self.rg(weights.0) || self.rg(x.0);
        let op = Op::EdgeSpMM {
            pattern: Arc::clone(pattern),
            weights: weights.0,
            x: x.0,
        };
        self.push("edge_weighted_matmul", out, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.value(a) + self.value(b);
        let rg = self.rg(a.0) || self.rg(b.0);
        self.push("add", out, Op::Add(a.0, b.0), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.value(a) - self.value(b);
        let rg = self.rg(a.0) || self.rg(b.0);
        self.push("sub", out, Op::Sub(a.0, b.0), rg)
    }

    pub fn elementwise_mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("elementwise_mul", a, b)?;
        let out = self.value(a) * self.value(b);
        let rg = self.rg(a.0) || self.rg(b.0);
        self.push("elementwise_mul", out, Op::Mul(a.0, b.0), rg)
    }

    /// Adds a `1 x d` row to every row of an `n x d` tensor.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (sa, sr) = (self.shape(a), self.shape(row));
        if sr != (1, sa.1) {
            return Err(TensorError::ShapeMismatch {
                op: "add_row",
                lhs: sa,
                rhs: sr,
            });
        }
        let out = self.value(a) + self.value(row);
        let rg = self.rg(a.0) || self.rg(row.0);
        self.push("add_row", out, Op::AddRow(a.0, row.0), rg)
    }

    /// Multiplies row `i` of an `n x d` tensor by entry `i` of an `n x 1` column.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (sa, sc) = (self.shape(a), self.shape(col));
        if sc != (sa.0, 1) {
            return Err(TensorError::ShapeMismatch {
                op: "mul_col",
                lhs: sa,
                rhs: sc,
            });
        }
        let out = self.value(a) * self.value(col);
        let rg = self.rg(a.0) || self.rg(col.0);
        self.push("mul_col", out, Op::MulCol(a.0, col.0), rg)
    }

    /// Multiplies a tensor by a `1 x 1` tensor.
    pub fn scale(&mut self, a: Var, s: Var) -> Result<Var> {
        let ss = self.shape(s);
        if ss != (1, 1) {
            return Err(TensorError::ShapeMismatch {
                op: "scale",
                lhs: self.shape(a),
                rhs: ss,
            });
        }
        let k = self.scalar(s);
        let out = self.value(a) * k;
        let rg = self.rg(a.0) || self.rg(s.0);
        self.push("scale", out, Op::Scale(a.0, s.0), rg)
    }

    pub fn scalar_mul(&mut self, a: Var, k: T) -> Result<Var> {
        let out = self.value(a) * k;
        let rg = self.rg(a.0);
        self.push("scalar_mul", out, Op::ScalarMul(a.0, k), rg)
    }

    pub fn scalar_add(&mut self, a: Var, k: T) -> Result<Var> {
        let out = self.value(a) + k;
        let rg = self.rg(a.0);
        self.push("scalar_add", out, Op::ScalarAdd(a.0), rg)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(TensorError::ShapeMismatch {
            op: "concat_rows",
            lhs: (0, 0),
            rhs: (0, 0),
        })?;
        let cols = self.shape(first).1;
        for &p in parts {
            if self.shape(p).1 != cols {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_rows",
                    lhs: self.shape(first),
                    rhs: self.shape(p),
                });
            }
        }
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = ndarray::concatenate(Axis(0), &views).expect("column counts checked");
        let rg = parts.iter().any(|p| self.rg(p.0));
        self.push("concat_rows", out, Op::ConcatRows(parts.iter().map(|p| p.0).collect()), rg)
    }

    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let sa = self.shape(a);
        if let Some(&bad) = rows.iter().find(|&&r| r >= sa.0) {
            return Err(TensorError::ShapeMismatch {
                op: "gather_rows",
                lhs: sa,
                rhs: (bad, 0),
            });
        }
        let out = self.value(a).select(Axis(0), rows);
        let rg = self.rg(a.0);
        self.push("gather_rows", out, Op::GatherRows(a.0, Arc::new(rows.to_vec())), rg)
    }

    /// Replaces each row flagged in `mask` with the `1 x d` `token`.
    pub fn replace_rows(&mut self, x: Var, token: Var, mask: &Arc<Vec<bool>>) -> Result<Var> {
        let (sx, st) = (self.shape(x), self.shape(token));
        if st != (1, sx.1) || mask.len() != sx.0 {
            return Err(TensorError::ShapeMismatch {
                op: "replace_rows",
                lhs: sx,
                rhs: st,
            });
        }
        let mut out = self.value(x).clone();
        let tok = self.value(token).row(0).to_owned();
        for (i, &m) in mask.iter().enumerate() {
            if m {
                out.row_mut(i).assign(&tok);
            }
        }
        let rg = self.rg(x.0) || self.rg(token.0);
        let op = Op::ReplaceRows {
            x: x.0,
            token: token.0,
            mask: Arc::clone(mask),
        };
        self.push("replace_rows", out, op, rg)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).t().to_owned();
        let rg = self.rg(a.0);
        self.push("transpose", out, Op::Transpose(a.0), rg)
    }

    pub fn row_softmax(&mut self, a: Var) -> Result<Var> {
        let mut out = self.value(a).clone();
        for mut row in out.rows_mut() {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            row.mapv_inplace(|v| (v - max).exp());
            let total: T = row.sum();
            row.mapv_inplace(|v| v / total);
        }
        let rg = self.rg(a.0);
        self.push("row_softmax", out, Op::RowSoftmax(a.0), rg)
    }

    /// Row softmax restricted to entries where `mask` is true; masked-out
    /// entries come out as exact zeros.
    pub fn masked_row_softmax(&mut self, a: Var, mask: &Array2<bool>) -> Result<Var> {
        let sa = self.shape(a);
        if shape(mask) != sa {
            return Err(TensorError::ShapeMismatch {
                op: "masked_row_softmax",
                lhs: sa,
                rhs: shape(mask),
            });
        }
        let weights = masked_softmax_weights(self.value(a), Some(mask))?;
        let rg = self.rg(a.0);
        // Shares the plain softmax backward rule: masked entries have zero weight.
        self.push("masked_row_softmax", weights, Op::RowSoftmax(a.0), rg)
    }

    /// `log Σ_j exp(a_ij)` per row over unmasked entries (all entries when
    /// `mask` is `None`). Output is `n x 1`.
    pub fn masked_row_logsumexp(&mut self, a: Var, mask: Option<&Array2<bool>>) -> Result<Var> {
        let sa = self.shape(a);
        if let Some(m) = mask {
            if shape(m) != sa {
                return Err(TensorError::ShapeMismatch {
                    op: "masked_row_logsumexp",
                    lhs: sa,
                    rhs: shape(m),
                });
            }
        }
        let x = self.value(a);
        let weights = masked_softmax_weights(x, mask)?;
        let mut out = Array2::zeros((sa.0, 1));
        for (i, row) in x.rows().into_iter().enumerate() {
            let allowed = |j: usize| mask.is_none_or(|m| m[[i, j]]);
            let max = (0..sa.1).filter(|&j| allowed(j)).map(|j| row[j]).fold(T::neg_infinity(), T::max);
            let total = (0..sa.1)
                .filter(|&j| allowed(j))
                .map(|j| (row[j] - max).exp())
                .fold(T::zero(), |acc, v| acc + v);
            out[[i, 0]] = max + total.ln();
        }
        let rg = self.rg(a.0);
        self.push("masked_row_logsumexp", out, Op::MaskedRowLogSumExp { x: a.0, weights }, rg)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).mapv(T::tanh);
        let rg = self.rg(a.0);
        self.push("tanh", out, Op::Tanh(a.0), rg)
    }

    pub fn elu(&mut self, a: Var) -> Result<Var> {
        self.elu_with(a, T::one())
    }

    pub fn elu_with(&mut self, a: Var, alpha: T) -> Result<Var> {
        let out = self.value(a).mapv(|x| if x > T::zero() { x } else { alpha * x.exp_m1() });
        let rg = self.rg(a.0);
        self.push("elu", out, Op::Elu(a.0, alpha), rg)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: T) -> Result<Var> {
        let out = self.value(a).mapv(|x| if x > T::zero() { x } else { slope * x });
        let rg = self.rg(a.0);
        self.push("leaky_relu", out, Op::LeakyRelu(a.0, slope), rg)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).mapv(T::exp);
        let rg = self.rg(a.0);
        self.push("exp", out, Op::Exp(a.0), rg)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).mapv(T::ln);
        let rg = self.rg(a.0);
        self.push("log", out, Op::Log(a.0), rg)
    }

    /// Elementwise `x^p`.
    pub fn power(&mut self, a: Var, p: T) -> Result<Var> {
        let out = self.value(a).mapv(|x| x.powf(p));
        let rg = self.rg(a.0);
        self.push("power", out, Op::Power(a.0, p), rg)
    }

    /// Elementwise `log σ(x)` for the logistic `σ`, computed without overflow.
    pub fn log_sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).mapv(|x| x.min(T::zero()) - (-x.abs()).exp().ln_1p());
        let rg = self.rg(a.0);
        self.push("log_sigmoid", out, Op::LogSigmoid(a.0), rg)
    }

    /// Scales each row to unit Euclidean norm. All-zero rows stay zero.
    pub fn l2_normalize_rows(&mut self, a: Var) -> Result<Var> {
        let (out, norms) = normalize_rows(self.value(a));
        let rg = self.rg(a.0);
        self.push("l2_normalize_rows", out, Op::L2NormalizeRows(a.0, norms), rg)
    }

    pub fn row_sum(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        let rg = self.rg(a.0);
        self.push("row_sum", out, Op::RowSum(a.0), rg)
    }

    pub fn mean_all(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let n = T::from_usize(v.len().max(1)).unwrap();
        let out = Array2::from_elem((1, 1), v.sum() / n);
        let rg = self.rg(a.0);
        self.push("mean_all", out, Op::MeanAll(a.0), rg)
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let out = Array2::from_elem((1, 1), self.value(a).sum());
        let rg = self.rg(a.0);
        self.push("sum_all", out, Op::SumAll(a.0), rg)
    }

    /// Pairwise cosine similarity between the rows of `a` (`n x d`) and the
    /// rows of `b` (`m x d`). Zero rows have similarity zero with everything.
    pub fn cosine_similarity_matrix(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.1 {
            return Err(TensorError::ShapeMismatch {
                op: "cosine_similarity_matrix",
                lhs: sa,
                rhs: sb,
            });
        }
        let (a_hat, a_norm) = normalize_rows(self.value(a));
        let (b_hat, b_norm) = normalize_rows(self.value(b));
        let out = a_hat.dot(&b_hat.t());
        let rg = self.rg(a.0) || self.rg(b.0);
        let op = Op::CosineSimilarity {
            a: a.0,
            b: b.0,
            a_hat,
            b_hat,
            a_norm,
            b_norm,
        };
        self.push("cosine_similarity_matrix", out, op, rg)
    }

    /// Reverse accumulation from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let (rows, cols) = self.shape(loss);
        if (rows, cols) != (1, 1) {
            return Err(TensorError::NonScalarLoss { rows, cols });
        }
        let mut grads: Vec<Option<Array2<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.rg(loss.0) {
            grads[loss.0] = Some(Array2::ones((1, 1)));
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Runs [`Tape::backward`] and writes the gradient of every parameter
    /// leaf into `store`. Parameters the loss does not reach get zeros.
    pub fn backward_into(&self, loss: Var, store: &mut ParamStore<T>) -> Result<Gradients<T>> {
        let grads = self.backward(loss)?;
        store.zero_grad();
        for (i, node) in self.nodes.iter().enumerate() {
            if let (Some(id), Some(g)) = (node.param, grads.grads[i].as_ref()) {
                store.accumulate_grad(id, g);
            }
        }
        Ok(grads)
    }

    fn accumulate(&self, grads: &mut [Option<Array2<T>>], i: usize, delta: Array2<T>) {
        if !self.rg(i) {
            return;
        }
        match &mut grads[i] {
            Some(g) => *g += &delta,
            slot => *slot = Some(delta),
        }
    }

    fn propagate(&self, i: usize, g: &Array2<T>, grads: &mut [Option<Array2<T>>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.rg(*a) {
                    self.accumulate(grads, *a, g.dot(&self.nodes[*b].value.t()));
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, self.nodes[*a].value.t().dot(g));
                }
            }
            Op::SpMM(m, x) => self.accumulate(grads, *x, m.spmm_t(g)),
            Op::EdgeScores { pattern, src, dst } => {
                let mut ds = Array2::zeros((pattern.rows(), 1));
                let mut dd = Array2::zeros((pattern.cols(), 1));
                for (e, (r, c)) in pattern.entries().enumerate() {
                    ds[[r, 0]] += g[[e, 0]];
                    dd[[c, 0]] += g[[e, 0]];
                }
                self.accumulate(grads, *src, ds);
                self.accumulate(grads, *dst, dd);
            }
            Op::SegmentSoftmax(pattern, s) => {
                let mut ds = Array2::zeros((pattern.nnz(), 1));
                for r in 0..pattern.rows() {
                    let (lo, hi) = (pattern.indptr()[r], pattern.indptr()[r + 1]);
                    let dot = (lo..hi).fold(T::zero(), |acc, e| acc + y[[e, 0]] * g[[e, 0]]);
                    for e in lo..hi {
                        ds[[e, 0]] = y[[e, 0]] * (g[[e, 0]] - dot);
                    }
                }
                self.accumulate(grads, *s, ds);
            }
            Op::EdgeSpMM { pattern, weights, x } => {
                let xv = &self.nodes[*x].value;
                if self.rg(*weights) {
                    let mut dw = Array2::zeros((pattern.nnz(), 1));
                    for (e, (r, c)) in pattern.entries().enumerate() {
                        dw[[e, 0]] = g.row(r).dot(&xv.row(c));
                    }
                    self.accumulate(grads, *weights, dw);
                }
                if self.rg(*x) {
                    let w: Vec<T> = self.nodes[*weights].value.iter().copied().collect();
                    self.accumulate(grads, *x, spmm_weighted_t(pattern, &w, g));
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.mapv(|v| -v));
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    self.accumulate(grads, *a, g * &self.nodes[*b].value);
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, g * &self.nodes[*a].value);
                }
            }
            Op::AddRow(a, row) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
            }
            Op::MulCol(a, col) => {
                if self.rg(*a) {
                    self.accumulate(grads, *a, g * &self.nodes[*col].value);
                }
                if self.rg(*col) {
                    let prod = g * &self.nodes[*a].value;
                    self.accumulate(grads, *col, prod.sum_axis(Axis(1)).insert_axis(Axis(1)));
                }
            }
            Op::Scale(a, s) => {
                let k = self.nodes[*s].value[[0, 0]];
                if self.rg(*a) {
                    self.accumulate(grads, *a, g * k);
                }
                if self.rg(*s) {
                    let ds = (g * &self.nodes[*a].value).sum();
                    self.accumulate(grads, *s, Array2::from_elem((1, 1), ds));
                }
            }
            Op::ScalarMul(a, k) => self.accumulate(grads, *a, g * *k),
            Op::ScalarAdd(a) => self.accumulate(grads, *a, g.clone()),
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.nodes[p].value.nrows();
                    if self.rg(p) {
                        let slice = g.slice(ndarray::s![offset..offset + n, ..]).to_owned();
                        self.accumulate(grads, p, slice);
                    }
                    offset += n;
                }
            }
            Op::GatherRows(a, rows) => {
                let src = &self.nodes[*a].value;
                let mut da = Array2::zeros(shape(src));
                for (k, &r) in rows.iter().enumerate() {
                    let mut target = da.row_mut(r);
                    target += &g.row(k);
                }
                self.accumulate(grads, *a, da);
            }
            Op::ReplaceRows { x, token, mask } => {
                if self.rg(*x) {
                    let mut dx = g.clone();
                    for (r, &m) in mask.iter().enumerate() {
                        if m {
                            dx.row_mut(r).fill(T::zero());
                        }
                    }
                    self.accumulate(grads, *x, dx);
                }
                if self.rg(*token) {
                    let mut dt = Array2::zeros((1, g.ncols()));
                    for (r, &m) in mask.iter().enumerate() {
                        if m {
                            let mut row = dt.row_mut(0);
                            row += &g.row(r);
                        }
                    }
                    self.accumulate(grads, *token, dt);
                }
            }
            Op::Transpose(a) => self.accumulate(grads, *a, g.t().to_owned()),
            Op::RowSoftmax(a) => {
                let dot = (g * y).sum_axis(Axis(1)).insert_axis(Axis(1));
                self.accumulate(grads, *a, y * &(g - &dot));
            }
            Op::MaskedRowLogSumExp { x, weights } => {
                self.accumulate(grads, *x, weights * g);
            }
            Op::Tanh(a) => {
                let d = Zip::from(g).and(y).map_collect(|&g, &y| g * (T::one() - y * y));
                self.accumulate(grads, *a, d);
            }
            Op::Elu(a, alpha) => {
                let x = &self.nodes[*a].value;
                let d = Zip::from(g)
                    .and(x)
                    .and(y)
                    .map_collect(|&g, &x, &y| if x > T::zero() { g } else { g * (y + *alpha) });
                self.accumulate(grads, *a, d);
            }
            Op::LeakyRelu(a, slope) => {
                let x = &self.nodes[*a].value;
                let d = Zip::from(g).and(x).map_collect(|&g, &x| if x > T::zero() { g } else { g * *slope });
                self.accumulate(grads, *a, d);
            }
            Op::Exp(a) => self.accumulate(grads, *a, g * y),
            Op::Log(a) => self.accumulate(grads, *a, g / &self.nodes[*a].value),
            Op::Power(a, p) => {
                let x = &self.nodes[*a].value;
                let pm1 = *p - T::one();
                let d = Zip::from(g).and(x).map_collect(|&g, &x| g * *p * x.powf(pm1));
                self.accumulate(grads, *a, d);
            }
            Op::LogSigmoid(a) => {
                let x = &self.nodes[*a].value;
                // d/dx log σ(x) = σ(-x)
                let d = Zip::from(g).and(x).map_collect(|&g, &x| g * sigmoid(-x));
                self.accumulate(grads, *a, d);
            }
            Op::L2NormalizeRows(a, norms) => {
                self.accumulate(grads, *a, normalize_backward(y, norms, g));
            }
            Op::RowSum(a) => {
                let cols = self.nodes[*a].value.ncols();
                let d = g.broadcast((g.nrows(), cols)).unwrap().to_owned();
                self.accumulate(grads, *a, d);
            }
            Op::MeanAll(a) => {
                let src = &self.nodes[*a].value;
                let k = g[[0, 0]] / T::from_usize(src.len().max(1)).unwrap();
                self.accumulate(grads, *a, Array2::from_elem(shape(src), k));
            }
            Op::SumAll(a) => {
                let src = &self.nodes[*a].value;
                self.accumulate(grads, *a, Array2::from_elem(shape(src), g[[0, 0]]));
            }
            Op::CosineSimilarity {
                a,
                b,
                a_hat,
                b_hat,
                a_norm,
                b_norm,
            } => {
                if self.rg(*a) {
                    let d_hat = g.dot(b_hat);
                    self.accumulate(grads, *a, normalize_backward(a_hat, a_norm, &d_hat));
                }
                if self.rg(*b) {
                    let d_hat = g.t().dot(a_hat);
                    self.accumulate(grads, *b, normalize_backward(b_hat, b_norm, &d_hat));
                }
            }
        }
    }
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn normalize_rows<T: Real>(x: &Array2<T>) -> (Array2<T>, Vec<T>) {
    let mut out = x.clone();
    let mut norms = Vec::with_capacity(x.nrows());
    for mut row in out.rows_mut() {
        let n = row.dot(&row).sqrt();
        if n > T::zero() {
            row.mapv_inplace(|v| v / n);
        }
        norms.push(n);
    }
    (out, norms)
}

/// Vector-Jacobian product of `x ↦ x / ‖x‖` applied row-wise.
fn normalize_backward<T: Real>(y: &Array2<T>, norms: &[T], g: &Array2<T>) -> Array2<T> {
    let mut out = Array2::zeros(shape(g));
    for (i, &n) in norms.iter().enumerate() {
        if n > T::zero() {
            let yr = y.row(i);
            let gr = g.row(i);
            let proj = yr.dot(&gr);
            let mut o = out.row_mut(i);
            Zip::from(&mut o).and(&yr).and(&gr).for_each(|o, &y, &g| *o = (g - y * proj) / n);
        }
    }
    out
}

fn masked_softmax_weights<T: Real>(x: &Array2<T>, mask: Option<&Array2<bool>>) -> Result<Array2<T>> {
    let mut out = Array2::zeros(shape(x));
    for (i, row) in x.rows().into_iter().enumerate() {
        let allowed = |j: usize| mask.is_none_or(|m| m[[i, j]]);
        let max = (0..x.ncols()).filter(|&j| allowed(j)).map(|j| row[j]).fold(T::neg_infinity(), T::max);
        if max == T::neg_infinity() {
            return Err(TensorError::EmptySoftmaxRow { row: i });
        }
        let mut total = T::zero();
        for j in (0..x.ncols()).filter(|&j| allowed(j)) {
            let v = (row[j] - max).exp();
            out[[i, j]] = v;
            total += v;
        }
        out.row_mut(i).mapv_inplace(|v| v / total);
    }
    Ok(out)
}
