use std::collections::BTreeSet;

use ndarray::{concatenate, Array2, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::{mean_std, Embeddings, MetricsReport, TrainError};
use crate::autodiff::{Adam, Init, ParamStore, Real, Tape, TensorError, Var};
use crate::config::ProbeEmbedding;
use crate::error::Result;
use crate::rng::{derive_seed, seeded};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbeConfig {
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { steps: 200, lr: 1e-2, seed: 0 }
    }
}

pub fn select_embedding(e: &Embeddings, which: ProbeEmbedding) -> Array2<f32> {
    match which {
        ProbeEmbedding::H1 => e.h1.clone(),
        ProbeEmbedding::H2 => e.h2.clone(),
        ProbeEmbedding::Concat => concatenate(Axis(1), &[e.h1.view(), e.h2.view()]).expect("equal row counts"),
    }
}

/// Macro- and micro-averaged F1 from the confusion matrix over `classes`.
/// Classes without predictions or support contribute an F1 of 0.
pub fn f1_scores(truth: &[usize], pred: &[usize], classes: &[usize]) -> (f64, f64) {
    assert_eq!(truth.len(), pred.len());
    let (mut tp_all, mut fp_all, mut fn_all) = (0usize, 0usize, 0usize);
    let mut macro_sum = 0.0;
    for &c in classes {
        let tp = truth.iter().zip(pred).filter(|&(&t, &p)| t == c && p == c).count();
        let fp = truth.iter().zip(pred).filter(|&(&t, &p)| t != c && p == c).count();
        let fn_ = truth.iter().zip(pred).filter(|&(&t, &p)| t == c && p != c).count();
        let denom = 2 * tp + fp + fn_;
        macro_sum += if denom == 0 { 0.0 } else { 2.0 * tp as f64 / denom as f64 };
        tp_all += tp;
        fp_all += fp;
        fn_all += fn_;
    }
    let macro_f1 = if classes.is_empty() { 0.0 } else { macro_sum / classes.len() as f64 };
    let denom = 2 * tp_all + fp_all + fn_all;
    let micro_f1 = if denom == 0 { 0.0 } else { 2.0 * tp_all as f64 / denom as f64 };
    (macro_f1, micro_f1)
}

fn class_list(labels: &[Option<usize>]) -> Result<Vec<usize>> {
    let classes: BTreeSet<usize> = labels.iter().flatten().copied().collect();
    if classes.is_empty() {
        return Err(TrainError::NoLabels.into());
    }
    if classes.len() == 1 {
        log::warn!("probe: only one class present, F1 is degenerate");
    }
    Ok(classes.into_iter().collect())
}

/// `n_per_class` random training nodes per class; every other labelled node
/// is held out.
fn split(labels: &[Option<usize>], classes: &[usize], n_per_class: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut rng = seeded(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for &c in classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == Some(c)).collect();
        if members.len() < n_per_class {
            return Err(TrainError::InsufficientLabels {
                class: c,
                available: members.len(),
                required: n_per_class,
            }
            .into());
        }
        members.shuffle(&mut rng);
        train.extend_from_slice(&members[..n_per_class]);
        test.extend_from_slice(&members[n_per_class..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Mean negative log-likelihood of one-hot `targets` under row-softmax
/// `logits`.
pub fn softmax_cross_entropy<T: Real>(tape: &mut Tape<T>, logits: Var, targets: Var) -> Result<Var, TensorError> {
    let lse = tape.masked_row_logsumexp(logits, None)?;
    let picked = tape.elementwise_mul(logits, targets)?;
    let picked = tape.row_sum(picked)?;
    let nll = tape.sub(lse, picked)?;
    tape.mean_all(nll)
}

/// Trains softmax regression on the `train` rows and returns predictions for
/// the `test` rows.
pub fn probe_once(x: &Array2<f32>, labels: &[Option<usize>], classes: &[usize], train: &[usize], test: &[usize], cfg: ProbeConfig) -> Result<Vec<usize>> {
    let c = classes.len();
    let slot = |label: usize| classes.binary_search(&label).expect("known class");
    let xf = x.mapv(|v| v as f64);
    let xt = xf.select(Axis(0), train);
    let mut onehot = Array2::<f64>::zeros((train.len(), c));
    for (r, &i) in train.iter().enumerate() {
        onehot[[r, slot(labels[i].expect("train rows are labelled"))]] = 1.0;
    }
    let mut store = ParamStore::<f64>::new(cfg.seed);
    let w = store.register("probe.w", x.ncols(), c, Init::XavierUniform)?;
    let b = store.register("probe.b", 1, c, Init::Zeros)?;
    let mut adam = Adam::with_lr(cfg.lr);
    for _ in 0..cfg.steps {
        let mut tape = Tape::new();
        let xv = tape.constant(xt.clone())?;
        let yv = tape.constant(onehot.clone())?;
        let (wv, bv) = (tape.param(&store, w)?, tape.param(&store, b)?);
        let z = tape.matmul(xv, wv)?;
        let logits = tape.add_row(z, bv)?;
        let loss = softmax_cross_entropy(&mut tape, logits, yv)?;
        tape.backward_into(loss, &mut store)?;
        adam.step(&mut store);
    }
    let logits = xf.select(Axis(0), test).dot(store.value(w)) + store.value(b);
    Ok(logits
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for k in 1..c {
                if row[k] > row[best] {
                    best = k;
                }
            }
            classes[best]
        })
        .collect())
}

fn summarize(macros: &[f64], micros: &[f64]) -> MetricsReport {
    let (ma, ma_s) = mean_std(macros);
    let (mi, mi_s) = mean_std(micros);
    MetricsReport {
        macro_f1_mean: Some(ma),
        macro_f1_std: Some(ma_s),
        micro_f1_mean: Some(mi),
        micro_f1_std: Some(mi_s),
        ..MetricsReport::default()
    }
}

/// Linear probe on frozen embeddings with `n_per_class` training labels per
/// class, repeated over reseeded splits.
pub fn linear_probe(x: &Array2<f32>, labels: &[Option<usize>], n_per_class: usize, repeats: usize, cfg: ProbeConfig) -> Result<MetricsReport> {
    if x.nrows() != labels.len() {
        return Err(TrainError::RowMismatch {
            rows: x.nrows(),
            expected: labels.len(),
        }
        .into());
    }
    let classes = class_list(labels)?;
    // Repeats are independent and seeded by index; collecting keeps their order.
    let scores = (0..repeats)
        .into_par_iter()
        .map(|r| {
            let seed = derive_seed(cfg.seed, r as u64);
            let (train, test) = split(labels, &classes, n_per_class, seed)?;
            let pred = probe_once(x, labels, &classes, &train, &test, ProbeConfig { seed, ..cfg })?;
            let truth: Vec<usize> = test.iter().map(|&i| labels[i].unwrap()).collect();
            Ok(f1_scores(&truth, &pred, &classes))
        })
        .collect::<Result<Vec<_>>>()?;
    let (macros, micros): (Vec<f64>, Vec<f64>) = scores.into_iter().unzip();
    Ok(summarize(&macros, &micros))
}

/// Baseline that predicts the most frequent training class (lowest id on
/// ties) for every held-out node, over the same splits as [`linear_probe`].
pub fn majority_class_report(labels: &[Option<usize>], n_per_class: usize, repeats: usize, seed: u64) -> Result<MetricsReport> {
    let classes = class_list(labels)?;
    let (mut macros, mut micros) = (Vec::new(), Vec::new());
    for r in 0..repeats {
        let (train, test) = split(labels, &classes, n_per_class, derive_seed(seed, r as u64))?;
        let majority = *classes
            .iter()
            .max_by_key(|&&c| (train.iter().filter(|&&i| labels[i] == Some(c)).count(), std::cmp::Reverse(c)))
            .unwrap();
        let truth: Vec<usize> = test.iter().map(|&i| labels[i].unwrap()).collect();
        let pred = vec![majority; truth.len()];
        let (ma, mi) = f1_scores(&truth, &pred, &classes);
        macros.push(ma);
        micros.push(mi);
    }
    Ok(summarize(&macros, &micros))
}
