//! Training objectives: SCE intra-contrast, bidirectional InfoNCE
//! inter-contrast, their weighted combination with the generative term, and
//! BPR for link prediction.

use ndarray::Array2;
use thiserror::Error;

use crate::autodiff::{Real, Tape, Var};
use crate::error::Result;
use crate::sampler::ContrastPlan;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("BPR needs at least one (user, positive, negative) triple")]
    EmptyTriples,
    #[error("invalid loss weights: {0}")]
    InvalidWeights(String),
}

/// Loss weights and shape parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub intra: f64,
    pub inter: f64,
    pub gen: f64,
    /// Share of the schema → meta-path direction in the inter-contrast.
    pub balance: f64,
    pub hcl: f64,
    pub bpr: f64,
    pub tau: f64,
    pub eta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            intra: 0.3,
            inter: 0.6,
            gen: 0.1,
            balance: 0.5,
            hcl: 1.0,
            bpr: 1.0,
            tau: 0.5,
            eta: 2.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> std::result::Result<(), LossError> {
        let named = [
            ("intra", self.intra),
            ("inter", self.inter),
            ("gen", self.gen),
            ("hcl", self.hcl),
            ("bpr", self.bpr),
        ];
        for (name, w) in named {
            if !w.is_finite() || w < 0.0 {
                return Err(LossError::InvalidWeights(format!("{name} = {w} must be finite and >= 0")));
            }
        }
        if !(0.0..=1.0).contains(&self.balance) {
            return Err(LossError::InvalidWeights(format!("balance = {} must lie in [0, 1]", self.balance)));
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(LossError::InvalidWeights(format!("tau = {} must be > 0", self.tau)));
        }
        if !(self.eta.is_finite() && self.eta >= 1.0) {
            return Err(LossError::InvalidWeights(format!("eta = {} must be >= 1", self.eta)));
        }
        Ok(())
    }
}

fn zero<T: Real>(tape: &mut Tape<T>) -> Result<Var> {
    Ok(tape.constant(Array2::zeros((1, 1)))?)
}

/// Scaled cosine error between two aligned matrices over `rows`:
/// `mean_v (1 - cos(x_v, z_v))^η`. Zero rows count as cosine 0.
pub fn sce_pair<T: Real>(tape: &mut Tape<T>, x: Var, z: Var, rows: &[usize], eta: f64) -> Result<Var> {
    if rows.is_empty() {
        return zero(tape);
    }
    let xs = tape.gather_rows(x, rows)?;
    let zs = tape.gather_rows(z, rows)?;
    let zero_rows = (0..rows.len())
        .filter(|&r| {
            let zero_x = tape.value(xs).row(r).iter().all(|v| *v == T::zero());
            let zero_z = tape.value(zs).row(r).iter().all(|v| *v == T::zero());
            zero_x || zero_z
        })
        .count();
    if zero_rows > 0 {
        log::warn!("SCE: {zero_rows} zero rows treated as cosine 0");
    }
    let xn = tape.l2_normalize_rows(xs)?;
    let zn = tape.l2_normalize_rows(zs)?;
    let prod = tape.elementwise_mul(xn, zn)?;
    let cos = tape.row_sum(prod)?;
    let neg = tape.scalar_mul(cos, -T::one())?;
    let gap = tape.scalar_add(neg, T::one())?;
    let scaled = tape.power(gap, T::of(eta))?;
    Ok(tape.mean_all(scaled)?)
}

/// SCE averaged over all unordered pairs of views; zero for fewer than two.
pub fn sce_loss<T: Real>(tape: &mut Tape<T>, views: &[Var], rows: &[usize], eta: f64) -> Result<Var> {
    let mut terms = Vec::new();
    for a in 0..views.len() {
        for b in a + 1..views.len() {
            terms.push(sce_pair(tape, views[a], views[b], rows, eta)?);
        }
    }
    if terms.is_empty() {
        return zero(tape);
    }
    let k = terms.len();
    let stacked = tape.concat_rows(&terms)?;
    let total = tape.sum_all(stacked)?;
    Ok(tape.scalar_mul(total, T::one() / T::from_usize(k).unwrap())?)
}

/// InfoNCE from `anchor` rows to `other` rows, averaged over the plan's
/// anchors. Rows are L2-normalised inside the loss.
pub fn info_nce_directional<T: Real>(tape: &mut Tape<T>, anchor: Var, other: Var, plan: &ContrastPlan, tau: f64) -> Result<Var> {
    if plan.anchors.is_empty() {
        return zero(tape);
    }
    let a = tape.gather_rows(anchor, &plan.anchors)?;
    let b = tape.gather_rows(other, &plan.columns)?;
    let a = tape.l2_normalize_rows(a)?;
    let b = tape.l2_normalize_rows(b)?;
    let bt = tape.transpose(b)?;
    let sim = tape.matmul(a, bt)?;
    let logits = tape.scalar_mul(sim, T::of(1.0 / tau))?;
    let pos = tape.masked_row_logsumexp(logits, Some(&plan.positive))?;
    let all = tape.masked_row_logsumexp(logits, Some(&plan.candidate))?;
    let per_anchor = tape.sub(all, pos)?;
    Ok(tape.mean_all(per_anchor)?)
}

/// `λ · L(schema → meta-path) + (1 − λ) · L(meta-path → schema)`.
pub fn inter_loss<T: Real>(tape: &mut Tape<T>, h1: Var, h2: Var, plan: &ContrastPlan, balance: f64, tau: f64) -> Result<Var> {
    let forward = info_nce_directional(tape, h1, h2, plan, tau)?;
    let backward = info_nce_directional(tape, h2, h1, plan, tau)?;
    weighted_sum(tape, &[(forward, balance), (backward, 1.0 - balance)])
}

/// `Σ w_k · x_k` over scalar losses.
pub fn weighted_sum<T: Real>(tape: &mut Tape<T>, terms: &[(Var, f64)]) -> Result<Var> {
    let mut acc = zero(tape)?;
    for &(v, w) in terms {
        let s = tape.scalar_mul(v, T::of(w))?;
        acc = tape.add(acc, s)?;
    }
    Ok(acc)
}

pub fn hcl_total<T: Real>(tape: &mut Tape<T>, intra: Var, inter: Var, gen: Var, w: &LossWeights) -> Result<Var> {
    weighted_sum(tape, &[(intra, w.intra), (inter, w.inter), (gen, w.gen)])
}

/// `−mean log σ(d_uᵀ d_j − d_uᵀ d_k)` over `(u, j, k)` triples.
pub fn bpr_loss<T: Real>(tape: &mut Tape<T>, users: Var, items: Var, triples: &[(usize, usize, usize)]) -> Result<Var> {
    if triples.is_empty() {
        return Err(LossError::EmptyTriples.into());
    }
    let us: Vec<usize> = triples.iter().map(|t| t.0).collect();
    let js: Vec<usize> = triples.iter().map(|t| t.1).collect();
    let ks: Vec<usize> = triples.iter().map(|t| t.2).collect();
    let du = tape.gather_rows(users, &us)?;
    let dj = tape.gather_rows(items, &js)?;
    let dk = tape.gather_rows(items, &ks)?;
    let diff = tape.sub(dj, dk)?;
    let prod = tape.elementwise_mul(du, diff)?;
    let margin = tape.row_sum(prod)?;
    let ls = tape.log_sigmoid(margin)?;
    let mean = tape.mean_all(ls)?;
    Ok(tape.scalar_mul(mean, -T::one())?)
}

pub fn link_total<T: Real>(tape: &mut Tape<T>, hcl: Var, bpr: Var, w: &LossWeights) -> Result<Var> {
    weighted_sum(tape, &[(hcl, w.hcl), (bpr, w.bpr)])
}
