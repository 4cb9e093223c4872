use std::sync::Arc;
use std::time::Instant;

use ndarray::Array2;
use rand::Rng;

use super::SuiteReport;
use crate::autodiff::{relative_error, ParamStore, Tape, Var};
use crate::config::RunConfig;
use crate::error::Result;
use crate::loss::{bpr_loss, hcl_total, info_nce_directional, inter_loss, sce_loss, LossWeights};
use crate::mae::{generative_loss, GnnKind, MaskPlan, MaskSet};
use crate::rng::{derive_seed, seeded, Rng as ChaRng};
use crate::sampler::build_sample_sets;
use crate::schema::SchemaEncoder;
use crate::sparse::{CsrPattern, SparseMatrix};
use crate::synthetic::{generate_link_synthetic, generate_synthetic, LinkSpec, SyntheticSpec};
use crate::train::{
    build_sample_sets_for, lightgcn_propagate, resolve_metapaths, sample_bpr_triples, softmax_cross_entropy, split_interactions, LinkModel, NodeModel,
};

pub const GRAD_TOLERANCE: f64 = 1e-4;

const STEP: f64 = 1e-6;
const SHAPES: usize = 20;

/// Worst relative error between reverse-mode and central-difference
/// gradients of `f` with respect to every input.
fn check_inputs<F>(inputs: &[Array2<f64>], f: F) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Array2<f64>]| -> Result<f64> {
        let mut t = Tape::new();
        let vars = xs.iter().map(|x| t.variable(x.clone())).collect::<Result<Vec<_>, _>>()?;
        let out = f(&mut t, &vars)?;
        Ok(t.scalar(out))
    };
    let mut t = Tape::new();
    let vars = inputs.iter().map(|x| t.variable(x.clone())).collect::<Result<Vec<_>, _>>()?;
    let out = f(&mut t, &vars)?;
    let grads = t.backward(out)?;
    let mut work = inputs.to_vec();
    let mut worst: f64 = 0.0;
    for (i, &v) in vars.iter().enumerate() {
        let mut numeric = Array2::zeros(inputs[i].dim());
        for (idx, slot) in numeric.iter_mut().enumerate() {
            let (r, c) = (idx / inputs[i].ncols(), idx % inputs[i].ncols());
            let orig = work[i][[r, c]];
            work[i][[r, c]] = orig + STEP;
            let plus = eval(&work)?;
            work[i][[r, c]] = orig - STEP;
            let minus = eval(&work)?;
            work[i][[r, c]] = orig;
            *slot = (plus - minus) / (2.0 * STEP);
        }
        worst = worst.max(relative_error(&grads.get_or_zero(v, inputs[i].dim()), &numeric));
    }
    Ok(worst)
}

/// Worst relative error, per parameter, between the gradients `f` writes into
/// a copy of `store` and central differences over every parameter entry.
pub fn check_store_gradients<F>(store: &ParamStore<f64>, f: F) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &ParamStore<f64>) -> Result<Var>,
{
    let mut analytic = store.clone();
    let mut tape = Tape::new();
    let out = f(&mut tape, store)?;
    tape.backward_into(out, &mut analytic)?;
    let eval = |s: &ParamStore<f64>| -> Result<f64> {
        let mut t = Tape::new();
        let out = f(&mut t, s)?;
        Ok(t.scalar(out))
    };
    let mut work = store.clone();
    let mut worst: f64 = 0.0;
    for id in store.ids() {
        let (rows, cols) = store.value(id).dim();
        let mut numeric = Array2::zeros((rows, cols));
        for r in 0..rows {
            for c in 0..cols {
                let orig = work.value(id)[[r, c]];
                work.value_mut(id)[[r, c]] = orig + STEP;
                let plus = eval(&work)?;
                work.value_mut(id)[[r, c]] = orig - STEP;
                let minus = eval(&work)?;
                work.value_mut(id)[[r, c]] = orig;
                numeric[[r, c]] = (plus - minus) / (2.0 * STEP);
            }
        }
        worst = worst.max(relative_error(analytic.grad(id), &numeric));
    }
    Ok(worst)
}

fn uniform(rng: &mut ChaRng, rows: usize, cols: usize, lo: f64, hi: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(lo..hi))
}

fn mat(rng: &mut ChaRng, rows: usize, cols: usize) -> Array2<f64> {
    uniform(rng, rows, cols, -1.0, 1.0)
}

fn dim(rng: &mut ChaRng) -> usize {
    rng.random_range(1..=5)
}

/// Random pattern with at least one stored entry.
fn pattern(rng: &mut ChaRng, rows: usize, cols: usize) -> Arc<CsrPattern> {
    let mut entries: Vec<(usize, usize)> = (0..rows).flat_map(|r| (0..cols).map(move |c| (r, c))).collect();
    entries.retain(|_| rng.random_bool(0.5));
    if entries.is_empty() {
        entries.push((rng.random_range(0..rows), rng.random_range(0..cols)));
    }
    Arc::new(CsrPattern::from_entries(rows, cols, entries))
}

/// Random mask with at least one allowed entry per row.
fn row_mask(rng: &mut ChaRng, rows: usize, cols: usize) -> Array2<bool> {
    let mut m = Array2::from_shape_simple_fn((rows, cols), || rng.random_bool(0.6));
    for r in 0..rows {
        let c = rng.random_range(0..cols);
        m[[r, c]] = true;
    }
    m
}

/// Reduces any output to a scalar through fixed, shape-dependent weights so
/// that no output entry has a vanishing cotangent.
fn project(t: &mut Tape<f64>, y: Var) -> Result<Var> {
    let (rows, cols) = t.shape(y);
    let w = Array2::from_shape_fn((rows, cols), |(i, j)| (0.37 * (1 + 3 * i + 7 * j) as f64).sin() + 0.1);
    let w = t.constant(w)?;
    let p = t.elementwise_mul(y, w)?;
    Ok(t.sum_all(p)?)
}

type Case = fn(&mut ChaRng) -> Result<f64>;

fn primitive_cases() -> Vec<(&'static str, Case)> {
    vec![
        ("matmul", |rng| {
            let (r, k, c) = (dim(rng), dim(rng), dim(rng));
            check_inputs(&[mat(rng, r, k), mat(rng, k, c)], |t, v| {
                let y = t.matmul(v[0], v[1])?;
                project(t, y)
            })
        }),
        ("sparse_dense_matmul", |rng| {
            let (r, k, c) = (dim(rng), dim(rng), dim(rng));
            let p = pattern(rng, r, k);
            let values: Vec<f64> = (0..p.nnz()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let m = Arc::new(SparseMatrix::new(p, values));
            check_inputs(&[mat(rng, k, c)], |t, v| {
                let y = t.sparse_dense_matmul(&m, v[0])?;
                project(t, y)
            })
        }),
        ("edge_scores", |rng| {
            let (r, c) = (dim(rng), dim(rng));
            let p = pattern(rng, r, c);
            check_inputs(&[mat(rng, r, 1), mat(rng, c, 1)], |t, v| {
                let y = t.edge_scores(&p, v[0], v[1])?;
                project(t, y)
            })
        }),
        ("segment_softmax", |rng| {
            let (r, c) = (dim(rng), dim(rng));
            let p = pattern(rng, r, c);
            check_inputs(&[mat(rng, p.nnz(), 1)], |t, v| {
                let y = t.segment_softmax(&p, v[0])?;
                project(t, y)
            })
        }),
        ("edge_weighted_matmul", |rng| {
            let (r, k, c) = (dim(rng), dim(rng), dim(rng));
            let p = pattern(rng, r, k);
            check_inputs(&[mat(rng, p.nnz(), 1), mat(rng, k, c)], |t, v| {
                let y = t.edge_weighted_matmul(&p, v[0], v[1])?;
                project(t, y)
            })
        }),
        ("add", |rng| {
            let (r, c) = (dim(rng), dim(rng));
            check_inputs(&[mat(rng, r, c), mat(rng, r, c)], |t, v| {
                let y = t.add(v[0], v[1])?;
                project(t, y)
            })
        }),
        ("sub", |rng| {
            let (r, c) = (dim(rng), dim(rng));
            check_inputs(&[mat(rng, r, c), mat(rng, r, c)], |t, v| {
                let y = t.sub(v[0], v[1])?;
                project(t, y)
            })
        }),
        ("elementwise_mul", |rng| {
            let (r, c) = (dim(rng), dim(rng));
            check_inputs(&[mat(rng, r, c), mat(rng, r, c)], |t, v| {
                let y = t.elementwise_mul(v[0], v[1])?;
                project(t, y)
            })
        }),
        ("add_row", |rng| {
            let (r, c) = (dim(rng), dim(rng));
            check_inputs(&[mat(rng, r, c), mat(rng, 1, c)], |t, v| {
                let y = t.add_row(v[0], v[1])?;
                project(t, y)
            })
        }),
        ("mul_col", |rng| {
            let (r, c) = (dim(rng), dim(rng));
            check_inputs(&[mat(rng, r, c), mat(rng, r, 1)], |t, v| {
                let y = t.mul_col(v[0], v[1])?;
                project(t, y)
            })
        }),
        ("scale", |rng| {
            let (r, c) = (dim(rng), dim(rng));
            check_inputs(&[mat(rng, r, c), mat(rng, 1, 1)], |t, v| {
                let y = t.scale(v[0], v[1])?;
                project(t, y)
            })
        }),
        ("scalar_mul", |rng| {
            let (r, c) = (dim(rng), dim(rng));
            check_inputs(&[mat(rng, r, c)], |t, v| {
                let y = t.scalar_mul(v[0], -1.7)?;
                project(t, y)
            })
        }),
        ("scalar_add", |rng| {
            let (r, c) = (dim(rng), dim(rng));
            check_inputs(&[mat(rng, r, c)], |t, v| {
                let y = t.scalar_add(v[0], 0.3)?;
                project(t, y)
            })
        }),
        ("concat_rows", |rng| {
            let c = dim(rng);
            let parts: Vec<Array2<f64>> = (0..3)
                .map(|_| {
                    let r = dim(rng);
                    mat(rng, r, c)
                })
                .collect();
            check_inputs(&parts, |t, v| {
                let y = t.concat_rows(v)?;
                project(t, y)
            })
        }),
        ("gather_rows", |rng| {
            let (r, c) = (dim(rng), dim(rng));
            let rows: Vec<usize> = (0..rng.random_range(1..=6)).map(|_| rng.random_range(0..r)).collect();
            check_inputs(&[mat(rng, r, c)], |t, v| {
                let y = t.gather_rows(v[0], &rows)?;
                project(t, y)
            })
        }),
        ("replace_rows", |rng| {
            let (r, c) = (dim(rng), dim(rng));
            let mask = Arc::new((0..r).map(|_| rng.random_bool(0.5)).collect::<Vec<_>>());
            check_inputs(&[mat(rng, r, c), mat(rng, 1, c)], |t, v| {
                let y = t.replace_rows(v[0], v[1], &mask)?;
                project(t, y)
            })
        }),
        ("transpose", |rng| {
            let (r, c) = (dim(rng), dim(rng));
            check_inputs(&[mat(rng, r, c)], |t, v| {
                let y = t.transpose(v[0])?;
                project(t, y)
            })
        }),
        ("row_softmax", |rng| {
            let (r, c) = (dim(rng), dim(rng));
            check_inputs(&[mat(rng, r, c)], |t, v| {
                let y = t.row_softmax(v[0])?;
                project(t, y)
            })
        }),
        ("masked_row_softmax", |rng| {
            let (r, c) = (dim(rng), dim(rng));
            let m = row_mask(rng, r, c);
            check_inputs(&[mat(rng, r, c)], |t, v| {
                let y = t.masked_row_softmax(v[0], &m)?;
                project(t, y)
            })
        }),
        ("masked_row_logsumexp", |rng| {
            let (r, c) = (dim(rng), dim(rng));
            let m = row_mask(rng, r, c);
            let masked = check_inputs(&[mat(rng, r, c)], |t, v| {
                let y = t.masked_row_logsumexp(v[0], Some(&m))?;
                project(t, y)
            })?;
            let full = check_inputs(&[mat(rng, r, c)], |t, v| {
                let y = t.masked_row_logsumexp(v[0], None)?;
                project(t, y)
            })?;
            Ok(masked.max(full))
        }),
        ("tanh", |rng| {
            let (r, c) = (dim(rng), dim(rng));
            check_inputs(&[uniform(rng, r, c, -2.0, 2.0)], |t, v| {
                let y = t.tanh(v[0])?;
                project(t, y)
            })
        }),
        ("elu", |rng| {
            let (r, c) = (dim(rng), dim(rng));
            check_inputs(&[uniform(rng, r, c, -2.0, 2.0)], |t, v| {
                let y = t.elu(v[0])?;
                project(t, y)
            })
        }),
        ("leaky_relu", |rng| {
            let (r, c) = (dim(rng), dim(rng));
            check_inputs(&[uniform(rng, r, c, -2.0, 2.0)], |t, v| {
                let y = t.leaky_relu(v[0], 0.2)?;
                project(t, y)
            })
        }),
        ("exp", |rng| {
            let (r, c) = (dim(rng), dim(rng));
            check_inputs(&[mat(rng, r, c)], |t, v| {
                let y = t.exp(v[0])?;
                project(t, y)
            })
        }),
        ("log", |rng| {
            let (r, c) = (dim(rng), dim(rng));
            check_inputs(&[uniform(rng, r, c, 0.5, 2.0)], |t, v| {
                let y = t.log(v[0])?;
                project(t, y)
            })
        }),
        ("power", |rng| {
            let (r, c) = (dim(rng), dim(rng));
            check_inputs(&[uniform(rng, r, c, 0.5, 2.0)], |t, v| {
                let y = t.power(v[0], 1.7)?;
                project(t, y)
            })
        }),
        ("log_sigmoid", |rng| {
            let (r, c) = (dim(rng), dim(rng));
            check_inputs(&[uniform(rng, r, c, -6.0, 6.0)], |t, v| {
                let y = t.log_sigmoid(v[0])?;
                project(t, y)
            })
        }),
        ("l2_normalize_rows", |rng| {
            let (r, c) = (dim(rng), dim(rng));
            check_inputs(&[mat(rng, r, c)], |t, v| {
                let y = t.l2_normalize_rows(v[0])?;
                project(t, y)
            })
        }),
        ("row_sum", |rng| {
            let (r, c) = (dim(rng), dim(rng));
            check_inputs(&[mat(rng, r, c)], |t, v| {
                let y = t.row_sum(v[0])?;
                project(t, y)
            })
        }),
        ("mean_all", |rng| {
            let (r, c) = (dim(rng), dim(rng));
            check_inputs(&[mat(rng, r, c)], |t, v| {
                let y = t.mean_all(v[0])?;
                project(t, y)
            })
        }),
        ("sum_all", |rng| {
            let (r, c) = (dim(rng), dim(rng));
            check_inputs(&[mat(rng, r, c)], |t, v| {
                let y = t.sum_all(v[0])?;
                project(t, y)
            })
        }),
        ("cosine_similarity_matrix", |rng| {
            let (r, m, d) = (dim(rng), dim(rng), dim(rng));
            check_inputs(&[mat(rng, r, d), mat(rng, m, d)], |t, v| {
                let y = t.cosine_similarity_matrix(v[0], v[1])?;
                project(t, y)
            })
        }),
    ]
}

/// Random positives over `n` nodes with at least one anchor.
fn random_sets(rng: &mut ChaRng, n: usize) -> crate::sampler::SampleSets {
    let mut loc: Vec<Vec<usize>> = (0..n).map(|i| (0..n).filter(|&j| j != i && rng.random_bool(0.25)).collect()).collect();
    loc[0].push(1);
    let sem = vec![Vec::new(); n];
    let degrees: Vec<usize> = (0..n).map(|_| rng.random_range(0..5)).collect();
    build_sample_sets(&loc, &sem, &degrees, 0.5)
}

fn random_triples(rng: &mut ChaRng, users: usize, items: usize) -> Vec<(usize, usize, usize)> {
    (0..rng.random_range(1..=8))
        .map(|_| (rng.random_range(0..users), rng.random_range(0..items), rng.random_range(0..items)))
        .collect()
}

fn loss_cases() -> Vec<(&'static str, Case)> {
    vec![
        ("sce_loss", |rng| {
            let (n, d) = (rng.random_range(2..=6), rng.random_range(2..=4));
            let rows: Vec<usize> = (0..n).filter(|_| rng.random_bool(0.7)).collect();
            let rows = if rows.is_empty() { vec![0] } else { rows };
            let eta = [1.0, 2.0, 3.0][rng.random_range(0..3)];
            let views: Vec<Array2<f64>> = (0..3).map(|_| mat(rng, n, d)).collect();
            check_inputs(&views, |t, v| sce_loss(t, v, &rows, eta))
        }),
        ("info_nce_directional", |rng| {
            let (n, d) = (rng.random_range(3..=7), rng.random_range(2..=4));
            let sets = random_sets(rng, n);
            let batch: Vec<usize> = (0..n).filter(|&i| i < 2 || rng.random_bool(0.7)).collect();
            let plan = sets.contrast_plan(Some(&batch));
            let tau = rng.random_range(0.2..1.0);
            check_inputs(&[mat(rng, n, d), mat(rng, n, d)], |t, v| info_nce_directional(t, v[0], v[1], &plan, tau))
        }),
        ("inter_loss", |rng| {
            let (n, d) = (rng.random_range(3..=7), rng.random_range(2..=4));
            let plan = random_sets(rng, n).contrast_plan(None);
            let balance = rng.random_range(0.0..1.0);
            check_inputs(&[mat(rng, n, d), mat(rng, n, d)], |t, v| inter_loss(t, v[0], v[1], &plan, balance, 0.5))
        }),
        ("generative_loss", |rng| {
            let (n, d) = (rng.random_range(1..=6), dim(rng));
            let rows: Vec<usize> = (0..n).filter(|_| rng.random_bool(0.5)).collect();
            let mask = MaskSet::from_rows(n, rows);
            check_inputs(&[mat(rng, n, d), mat(rng, n, d)], |t, v| generative_loss(t, v[0], v[1], &mask))
        }),
        ("hcl_total", |rng| {
            let (n, d) = (rng.random_range(3..=6), rng.random_range(2..=4));
            let sets = random_sets(rng, n);
            let plan = sets.contrast_plan(None);
            let mask = MaskSet::from_rows(n, vec![0, n - 1]);
            let w = LossWeights {
                intra: rng.random_range(0.0..1.0),
                inter: rng.random_range(0.0..1.0),
                gen: rng.random_range(0.0..1.0),
                ..LossWeights::default()
            };
            let inputs = [mat(rng, n, d), mat(rng, n, d), mat(rng, n, d), mat(rng, n, d)];
            check_inputs(&inputs, |t, v| {
                let views = [v[1], v[2]];
                let intra = sce_loss(t, &views, &[0, 1, 2], w.eta)?;
                let inter = inter_loss(t, v[0], v[3], &plan, w.balance, w.tau)?;
                let gen = generative_loss(t, v[0], v[3], &mask)?;
                hcl_total(t, intra, inter, gen, &w)
            })
        }),
        ("bpr_loss", |rng| {
            let (u, i, d) = (dim(rng), rng.random_range(2..=6), dim(rng));
            let triples = random_triples(rng, u, i);
            check_inputs(&[mat(rng, u, d), mat(rng, i, d)], |t, v| bpr_loss(t, v[0], v[1], &triples))
        }),
        ("lightgcn_bpr", |rng| {
            let (u, i, d) = (rng.random_range(2..=5), rng.random_range(2..=6), dim(rng));
            let norm = SparseMatrix::bipartite_normalized(pattern(rng, u, i));
            let norm_t = Arc::new(norm.transpose());
            let norm = Arc::new(norm);
            let layers = rng.random_range(0..=3);
            let triples = random_triples(rng, u, i);
            check_inputs(&[mat(rng, u, d), mat(rng, i, d)], |t, v| {
                let (eu, ei) = lightgcn_propagate(t, &norm, &norm_t, v[0], v[1], layers)?;
                bpr_loss(t, eu, ei, &triples)
            })
        }),
        ("probe_cross_entropy", |rng| {
            let (n, d, c) = (rng.random_range(1..=6), dim(rng), rng.random_range(2..=4));
            let mut onehot = Array2::zeros((n, c));
            for r in 0..n {
                onehot[[r, rng.random_range(0..c)]] = 1.0;
            }
            check_inputs(&[mat(rng, n, d), mat(rng, d, c), mat(rng, 1, c)], |t, v| {
                let y = t.constant(onehot.clone())?;
                let z = t.matmul(v[0], v[1])?;
                let logits = t.add_row(z, v[2])?;
                Ok(softmax_cross_entropy(t, logits, y)?)
            })
        }),
    ]
}

/// Moves every parameter to a random point so that no activation sits on a
/// kink and zero-initialised parameters get checked too.
fn randomize(store: &mut ParamStore<f64>, rng: &mut ChaRng) {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        store.value_mut(id).mapv_inplace(|_| rng.random_range(-0.8..0.8));
    }
}

fn tiny_node_graph(seed: u64) -> Result<crate::hin::HeteroGraph> {
    Ok(generate_synthetic(&SyntheticSpec {
        n_target: 8,
        n_aux_per_type: 4,
        n_communities: 2,
        intra_edge_prob: 0.6,
        inter_edge_prob: 0.1,
        feature_dim: 3,
        feature_noise_sigma: 1.0,
        seed,
    })?)
}

fn tiny_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.model.hidden = 3;
    cfg.sampling.k_loc = 0;
    cfg.sampling.k_sem = 3;
    cfg
}

/// Full self-supervised objective of the node model: schema view, masked
/// autoencoders with remasking, semantic fusion and all three losses.
fn node_model_case(seed: u64, encoder: GnnKind, decoder: GnnKind, layers: usize, head: bool) -> Result<f64> {
    let g = tiny_node_graph(seed)?;
    let mut cfg = tiny_config();
    cfg.model.encoder = encoder;
    cfg.model.decoder = decoder;
    cfg.model.encoder_layers = layers;
    cfg.model.decoder_layers = layers;
    cfg.model.projection_head = head;
    let paths = resolve_metapaths(&g, &cfg.dataset.metapaths)?;
    let sets = build_sample_sets_for(&g, &paths, &cfg, None)?;
    let mut store = ParamStore::<f64>::new(seed);
    let model = NodeModel::new(&g, &cfg.model, &paths, &mut store)?;
    let mut rng = seeded(seed);
    randomize(&mut store, &mut rng);
    let n = model.num_nodes();
    let plan = MaskPlan::sample(n, 0.4, 0.25, derive_seed(seed, 1));
    let batch: Vec<usize> = (0..n).filter(|&i| i % 4 != 3).collect();
    let contrast = sets.contrast_plan(Some(&batch));
    check_store_gradients(&store, |t, s| {
        let fwd = model.forward(t, s, &plan)?;
        Ok(model.losses(t, s, &fwd, &sets, &contrast, &plan.mask, &cfg.losses)?.total)
    })
}

fn schema_case(seed: u64) -> Result<f64> {
    let g = tiny_node_graph(seed)?;
    let mut store = ParamStore::<f64>::new(seed);
    let enc = SchemaEncoder::new(&g, 0, 3, &mut store)?;
    randomize(&mut store, &mut seeded(seed));
    check_store_gradients(&store, |t, s| {
        let out = enc.forward(t, s)?;
        project(t, out.embeddings)
    })
}

/// Link objective: LightGCN over projected features with BPR, plus the
/// self-supervised terms of both meta-path branches.
fn link_model_case(seed: u64) -> Result<f64> {
    let g = generate_link_synthetic(&LinkSpec {
        n_users: 6,
        n_items: 8,
        n_categories: 2,
        n_communities: 2,
        intra_edge_prob: 0.5,
        inter_edge_prob: 0.1,
        feature_dim: 3,
        feature_noise_sigma: 1.0,
        seed,
    })?;
    let mut cfg = tiny_config();
    cfg.model.lightgcn_layers = 2;
    let mut store = ParamStore::<f64>::new(seed);
    let model = LinkModel::new(&g, &cfg, &mut store)?;
    randomize(&mut store, &mut seeded(seed));
    let sets_for =
        |b: &Option<crate::train::MetaPathBranch<f64>>| -> Result<_> { b.as_ref().map(|b| build_sample_sets_for(&g, &b.index.paths, &cfg, None)).transpose() };
    let (us, is) = (sets_for(&model.user_branch)?, sets_for(&model.item_branch)?);
    let ui = g.adjacency(g.relation_id("UI")?);
    let split = split_interactions(ui, 0.3, seed);
    let triples = sample_bpr_triples(&split, seed);
    let up = MaskPlan::sample(6, 0.4, 0.2, derive_seed(seed, 1));
    let ip = MaskPlan::sample(8, 0.4, 0.2, derive_seed(seed, 2));
    check_store_gradients(&store, |t, s| {
        Ok(model.objective(t, s, (&up, &ip), (us.as_ref(), is.as_ref()), &triples, &cfg, seed)?.0)
    })
}

/// Runs every primitive over [`SHAPES`] random shapes and every composite
/// loss and model objective, recording the worst relative error of each.
pub fn gradient_suite(seed: u64) -> Result<SuiteReport> {
    let started = Instant::now();
    let mut report = SuiteReport::default();
    for (k, (name, case)) in primitive_cases().into_iter().chain(loss_cases()).enumerate() {
        let mut rng = seeded(derive_seed(seed, k as u64));
        let mut worst: f64 = 0.0;
        for _ in 0..SHAPES {
            worst = worst.max(case(&mut rng)?);
        }
        report.push(name, worst, GRAD_TOLERANCE);
    }
    report.push("schema_encoder", schema_case(seed)?, GRAD_TOLERANCE);
    let variants = [
        ("node_objective_gcn_gat", GnnKind::Gcn, GnnKind::Gat, 1, false),
        ("node_objective_gat_gcn_deep_head", GnnKind::Gat, GnnKind::Gcn, 2, true),
    ];
    for (name, enc, dec, layers, head) in variants {
        report.push(name, node_model_case(seed, enc, dec, layers, head)?, GRAD_TOLERANCE);
    }
    report.push("link_objective", link_model_case(seed)?, GRAD_TOLERANCE);
    report.seconds = started.elapsed().as_secs_f64();
    Ok(report)
}
