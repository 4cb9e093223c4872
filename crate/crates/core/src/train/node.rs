use std::path::Path;
use std::time::Instant;

use ndarray::Array2;
use rand::seq::index::sample;

use super::TrainError;
use crate::autodiff::{Adam, Init, ParamId, ParamStore, Real, Tape, TensorError, Var};
use crate::config::{ModelConfig, RunConfig};
use crate::error::{Error, Result};
use crate::hin::{HeteroGraph, MetaPath, MetaPathIndex};
use crate::loss::{hcl_total, inter_loss, sce_loss, LossWeights};
use crate::mae::{fuse_views, generative_loss, MaeShape, MaskPlan, MaskSet, MaskedAutoencoder, SemanticAttention, ViewGraph};
use crate::rng::{derive_seed, seeded};
use crate::sampler::{build_sample_sets, location_embeddings, location_positives, semantic_positives, ContrastPlan, SampleSets, SkipGramConfig, WalkConfig};
use crate::schema::SchemaEncoder;

/// Parses meta-path specs such as `paper-author-paper` against `g`.
pub fn resolve_metapaths(g: &HeteroGraph, specs: &[String]) -> Result<Vec<MetaPath>> {
    if specs.is_empty() {
        return Err(TrainError::Setup("at least one meta-path is required".into()).into());
    }
    Ok(specs.iter().map(|s| MetaPath::parse(g, s)).collect::<Result<Vec<_>, _>>()?)
}

/// One masked autoencoder per meta-path view plus the shared semantic
/// attention that fuses them.
#[derive(Clone, Debug)]
pub struct MetaPathBranch<T> {
    pub index: MetaPathIndex,
    pub views: Vec<ViewGraph<T>>,
    pub maes: Vec<MaskedAutoencoder>,
    pub semantic: SemanticAttention,
    features: Array2<T>,
}

/// Per-view reconstructions, their weights and the fused embedding.
pub struct BranchForward {
    pub views: Vec<Var>,
    pub gamma: Var,
    pub fused: Var,
}

impl<T: Real> MetaPathBranch<T> {
    pub fn new(g: &HeteroGraph, paths: &[MetaPath], prefix: &str, cfg: &ModelConfig, store: &mut ParamStore<T>) -> Result<Self> {
        let index = MetaPathIndex::new(g, paths)?;
        let x = g.require_features(index.target_type)?;
        let shape = MaeShape {
            in_dim: x.ncols(),
            hidden: cfg.hidden,
            out_dim: cfg.hidden,
            encoder: cfg.encoder,
            encoder_layers: cfg.encoder_layers,
            decoder: cfg.decoder,
            decoder_layers: cfg.decoder_layers,
        };
        let mut views = Vec::with_capacity(paths.len());
        let mut maes = Vec::with_capacity(paths.len());
        for (j, mp) in paths.iter().enumerate() {
            views.push(ViewGraph::new(mp.name.clone(), &index.adjacency[j]));
            maes.push(MaskedAutoencoder::new(store, &format!("{prefix}.view{j}"), shape)?);
        }
        let semantic = SemanticAttention::new(store, &format!("{prefix}.semantic"), cfg.hidden)?;
        Ok(Self {
            index,
            views,
            maes,
            semantic,
            features: x.mapv(|v| T::of(v as f64)),
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.features.nrows()
    }

    pub fn forward(&self, tape: &mut Tape<T>, store: &ParamStore<T>, plan: &MaskPlan) -> Result<BranchForward> {
        let x = tape.constant(self.features.clone())?;
        let mut views = Vec::with_capacity(self.views.len());
        for (graph, mae) in self.views.iter().zip(&self.maes) {
            views.push(mae.forward(tape, store, graph, x, plan)?);
        }
        let gamma = self.semantic.weights(tape, store, &views)?;
        let fused = fuse_views(tape, &views, gamma)?;
        Ok(BranchForward { views, gamma, fused })
    }
}

/// Optional linear + ELU map applied to both views before inter-contrast.
#[derive(Clone, Copy, Debug)]
pub struct ProjectionHead {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl ProjectionHead {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            weight: store.register(&format!("{name}.w"), dim, dim, Init::XavierUniform)?,
            bias: store.register(&format!("{name}.b"), 1, dim, Init::Zeros)?,
        })
    }

    pub fn apply<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, h: Var) -> Result<Var> {
        let w = tape.param(store, self.weight)?;
        let b = tape.param(store, self.bias)?;
        let z = tape.matmul(h, w)?;
        let z = tape.add_row(z, b)?;
        Ok(tape.elu(z)?)
    }
}

/// Schema view, meta-path view and optional projection head.
#[derive(Clone, Debug)]
pub struct NodeModel<T> {
    pub target_type: usize,
    pub schema: SchemaEncoder<T>,
    pub branch: MetaPathBranch<T>,
    pub head: Option<ProjectionHead>,
}

pub struct NodeForward {
    /// Projected target features `h⁰`.
    pub h0: Var,
    pub h1: Var,
    pub branch: BranchForward,
}

impl NodeForward {
    pub fn h2(&self) -> Var {
        self.branch.fused
    }
}

pub struct NodeLosses {
    pub total: Var,
    pub gen: Var,
    pub intra: Var,
    pub inter: Var,
}

/// Unmasked embeddings of every target node.
#[derive(Clone, Debug, PartialEq)]
pub struct Embeddings {
    pub h1: Array2<f32>,
    pub h2: Array2<f32>,
    /// Semantic attention weight per meta-path.
    pub gamma: Vec<f64>,
}

impl<T: Real> NodeModel<T> {
    pub fn new(g: &HeteroGraph, cfg: &ModelConfig, paths: &[MetaPath], store: &mut ParamStore<T>) -> Result<Self> {
        let target_type = MetaPathIndex::new(g, paths)?.target_type;
        let schema = SchemaEncoder::new(g, target_type, cfg.hidden, store)?;
        let branch = MetaPathBranch::new(g, paths, "mp", cfg, store)?;
        let head = if cfg.projection_head {
            Some(ProjectionHead::new(store, "head", cfg.hidden)?)
        } else {
            None
        };
        Ok(Self {
            target_type,
            schema,
            branch,
            head,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.branch.num_nodes()
    }

    pub fn forward(&self, tape: &mut Tape<T>, store: &ParamStore<T>, plan: &MaskPlan) -> Result<NodeForward> {
        let schema = self.schema.forward(tape, store)?;
        let branch = self.branch.forward(tape, store, plan)?;
        Ok(NodeForward {
            h0: schema.projected[self.target_type],
            h1: schema.embeddings,
            branch,
        })
    }

    /// `λ_Intra ℒ_Intra + λ_Inter ℒ_Inter + λ_Gen ℒ_Gen` for one forward pass.
    pub fn losses(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        fwd: &NodeForward,
        sets: &SampleSets,
        contrast: &ContrastPlan,
        mask: &MaskSet,
        w: &LossWeights,
    ) -> Result<NodeLosses> {
        let gen = generative_loss(tape, fwd.h0, fwd.h2(), mask)?;
        let intra = sce_loss(tape, &fwd.branch.views, &sets.intra, w.eta)?;
        let (a, b) = match &self.head {
            Some(head) => (head.apply(tape, store, fwd.h1)?, head.apply(tape, store, fwd.h2())?),
            None => (fwd.h1, fwd.h2()),
        };
        let inter = inter_loss(tape, a, b, contrast, w.balance, w.tau)?;
        let total = hcl_total(tape, intra, inter, gen, w)?;
        Ok(NodeLosses { total, gen, intra, inter })
    }

    pub fn embed(&self, store: &ParamStore<T>) -> Result<Embeddings> {
        let mut tape = Tape::new();
        let fwd = self.forward(&mut tape, store, &MaskPlan::none(self.num_nodes()))?;
        let to_f32 = |v: Var| tape.value(v).mapv(|x| x.as_f64() as f32);
        Ok(Embeddings {
            h1: to_f32(fwd.h1),
            h2: to_f32(fwd.h2()),
            gamma: tape.value(fwd.branch.gamma).iter().map(|g| g.as_f64()).collect(),
        })
    }
}

/// Location-aware and semantic-aware positives for the configured meta-paths.
pub fn build_sample_sets_for(g: &HeteroGraph, paths: &[MetaPath], cfg: &RunConfig, cache_dir: Option<&Path>) -> Result<SampleSets> {
    let index = MetaPathIndex::new(g, paths)?;
    let s = &cfg.sampling;
    let loc = if s.k_loc == 0 {
        vec![Vec::new(); index.num_nodes()]
    } else {
        let walk = WalkConfig {
            walks_per_node: s.walks_per_node,
            walk_len: s.walk_len,
            seed: derive_seed(cfg.train.seed, 0x5741),
        };
        let sg = SkipGramConfig {
            dim: s.mp2v_dim,
            window: s.window,
            negatives: s.negatives,
            epochs: s.mp2v_epochs,
            lr: s.mp2v_lr as f32,
            seed: derive_seed(cfg.train.seed, 0x5347),
        };
        let emb = location_embeddings(g, paths, walk, sg, cache_dir)?;
        location_positives(&emb, s.k_loc)
    };
    let sem = semantic_positives(&index, s.k_sem);
    Ok(build_sample_sets(&loc, &sem, &index.degrees(), s.intra_fraction))
}

/// Result of self-supervised pretraining.
pub struct Pretrained {
    pub model: NodeModel<f32>,
    pub store: ParamStore<f32>,
    pub embeddings: Embeddings,
    pub losses: Vec<f64>,
    pub epoch_seconds: Vec<f64>,
}

/// Builds the positives and runs [`pretrain_with_sets`].
pub fn pretrain_node(g: &HeteroGraph, cfg: &RunConfig, cache_dir: Option<&Path>) -> Result<Pretrained> {
    cfg.validate()?;
    let paths = resolve_metapaths(g, &cfg.dataset.metapaths)?;
    let sets = build_sample_sets_for(g, &paths, cfg, cache_dir)?;
    pretrain_with_sets(g, cfg, &paths, &sets)
}

pub(crate) fn divergence(epoch: usize, e: Error) -> Error {
    match e {
        Error::Tensor(TensorError::NonFiniteValue { op }) => TrainError::Divergence {
            epoch,
            detail: format!("non-finite value in {op}"),
        }
        .into(),
        other => other,
    }
}

/// Contrastive batch for one epoch: every node, or a uniform subset.
pub(crate) fn epoch_batch(n: usize, batch_size: usize, seed: u64) -> Option<Vec<usize>> {
    if batch_size == 0 || batch_size >= n {
        return None;
    }
    let mut rows = sample(&mut seeded(seed), n, batch_size).into_vec();
    rows.sort_unstable();
    Some(rows)
}

/// Full-batch Adam over the combined objective with precomputed positives.
pub fn pretrain_with_sets(g: &HeteroGraph, cfg: &RunConfig, paths: &[MetaPath], sets: &SampleSets) -> Result<Pretrained> {
    let seed = cfg.train.seed;
    let mut store = ParamStore::<f32>::new(seed);
    let model = NodeModel::new(g, &cfg.model, paths, &mut store)?;
    let n = model.num_nodes();
    if sets.num_nodes() != n {
        return Err(TrainError::Setup(format!("sample sets cover {} nodes, model has {n}", sets.num_nodes())).into());
    }
    let full_plan = sets.contrast_plan(None);
    let mut adam = Adam::with_lr(cfg.train.lr);
    let mut losses = Vec::with_capacity(cfg.train.epochs);
    let mut epoch_seconds = Vec::with_capacity(cfg.train.epochs);
    let (mut best, mut since_best) = (f64::INFINITY, 0);
    for epoch in 0..cfg.train.epochs {
        let started = Instant::now();
        let plan = MaskPlan::sample(
            n,
            cfg.model.mask_ratio,
            cfg.model.effective_remask_ratio(),
            derive_seed(seed, 0x10_0000 + epoch as u64),
        );
        let batch = epoch_batch(n, cfg.sampling.batch_size, derive_seed(seed, 0x20_0000 + epoch as u64));
        let batch_plan;
        let contrast = match &batch {
            Some(b) => {
                batch_plan = sets.contrast_plan(Some(b));
                &batch_plan
            }
            None => &full_plan,
        };
        let mut tape = Tape::new();
        let step = (|| -> Result<f64> {
            let fwd = model.forward(&mut tape, &store, &plan)?;
            let parts = model.losses(&mut tape, &store, &fwd, sets, contrast, &plan.mask, &cfg.losses)?;
            tape.backward_into(parts.total, &mut store)?;
            Ok(tape.scalar(parts.total) as f64)
        })();
        let loss = step.map_err(|e| divergence(epoch, e))?;
        if !loss.is_finite() {
            return Err(TrainError::Divergence {
                epoch,
                detail: format!("loss = {loss}"),
            }
            .into());
        }
        adam.step(&mut store);
        losses.push(loss);
        epoch_seconds.push(started.elapsed().as_secs_f64());
        log::debug!("epoch {epoch}: loss {loss:.6}");
        if cfg.train.patience > 0 {
            if loss < best {
                best = loss;
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= cfg.train.patience {
                    log::info!("early stop at epoch {epoch}");
                    break;
                }
            }
        }
    }
    let embeddings = model.embed(&store)?;
    Ok(Pretrained {
        model,
        store,
        embeddings,
        losses,
        epoch_seconds,
    })
}
