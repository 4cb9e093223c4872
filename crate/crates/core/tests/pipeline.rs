use gchgnn::check::{enumerate_metapath_counts, random_hin};
use gchgnn::config::{ProbeEmbedding, RunConfig};
use gchgnn::export::load_node_model;
use gchgnn::hin::{load_hin, save_hin, MetaPathIndex};
use gchgnn::rng::seeded;
use gchgnn::synthetic::{generate_synthetic, SyntheticSpec};
use gchgnn::train::{linear_probe, majority_class_report, pretrain_node, select_embedding, ProbeConfig};
use proptest::prelude::*;

fn small_spec() -> SyntheticSpec {
    SyntheticSpec {
        n_target: 120,
        n_aux_per_type: 30,
        intra_edge_prob: 0.2,
        inter_edge_prob: 0.01,
        feature_dim: 12,
        ..SyntheticSpec::default()
    }
}

fn small_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.model.hidden = 16;
    cfg.sampling.walks_per_node = 3;
    cfg.sampling.walk_len = 8;
    cfg.sampling.mp2v_dim = 8;
    cfg.sampling.mp2v_epochs = 1;
    cfg.train.epochs = 15;
    cfg
}

#[test]
fn disk_round_trip_trains_identically() {
    let g = generate_synthetic(&small_spec()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_hin(&g, dir.path()).unwrap();
    let loaded = load_hin(dir.path()).unwrap();
    let cfg = small_config();
    let cache = dir.path().join("cache");
    let a = pretrain_node(&g, &cfg, None).unwrap();
    let b = pretrain_node(&loaded, &cfg, Some(&cache)).unwrap();
    assert_eq!(a.embeddings.h2, b.embeddings.h2);
    assert_eq!(a.losses, b.losses);

    // A second run reads the cached walk embeddings and must not change.
    let c = pretrain_node(&loaded, &cfg, Some(&cache)).unwrap();
    assert_eq!(a.embeddings.h1, c.embeddings.h1);

    let ckpt = dir.path().join("model.ckpt");
    a.store.save_checkpoint(&ckpt).unwrap();
    let (model, store) = load_node_model(&loaded, &cfg, &ckpt).unwrap();
    assert_eq!(model.embed(&store).unwrap().h2, a.embeddings.h2);
}

#[test]
fn pretrained_embeddings_beat_majority_on_planted_communities() {
    let g = generate_synthetic(&small_spec()).unwrap();
    let labels = g.labels_for_type(g.type_id("paper").unwrap());
    let run = pretrain_node(&g, &small_config(), None).unwrap();
    let x = select_embedding(&run.embeddings, ProbeEmbedding::H2);
    let ours = linear_probe(&x, &labels, 10, 3, ProbeConfig::default()).unwrap();
    let majority = majority_class_report(&labels, 10, 3, 0).unwrap();
    assert!(ours.macro_f1_mean.unwrap() > majority.macro_f1_mean.unwrap() + 0.3, "{ours:?}");
}

#[test]
fn thread_count_does_not_change_training() {
    let g = generate_synthetic(&small_spec()).unwrap();
    let run = |threads| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| pretrain_node(&g, &small_config(), None).unwrap().embeddings.h2)
    };
    assert_eq!(run(1), run(3));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn metapath_counts_match_enumeration(seed in any::<u64>()) {
        let hin = random_hin(&mut seeded(seed)).unwrap();
        for path in &hin.metapaths {
            let index = MetaPathIndex::new(&hin.graph, std::slice::from_ref(path)).unwrap();
            let truth = enumerate_metapath_counts(&hin, path);
            for u in 0..index.num_nodes() {
                for v in (0..index.num_nodes()).filter(|&v| v != u) {
                    let expected = truth.get(&(u, v)).copied().unwrap_or(0);
                    prop_assert_eq!(index.instance_count(u, v), expected);
                    prop_assert_eq!(index.pair_count(u, v), usize::from(expected > 0));
                }
            }
        }
    }
}
