//! Embedding export to FMAT and TSV.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;

use crate::autodiff::ParamStore;
use crate::config::{ProbeEmbedding, RunConfig};
use crate::error::Result;
use crate::fmat::save_fmat;
use crate::hin::HeteroGraph;
use crate::train::{resolve_metapaths, select_embedding, Embeddings, NodeModel};

/// Rebuilds the node model described by `cfg` and loads its parameters.
pub fn load_node_model(g: &HeteroGraph, cfg: &RunConfig, checkpoint: &Path) -> Result<(NodeModel<f32>, ParamStore<f32>)> {
    let paths = resolve_metapaths(g, &cfg.dataset.metapaths)?;
    let mut store = ParamStore::new(cfg.train.seed);
    let model = NodeModel::new(g, &cfg.model, &paths, &mut store)?;
    store.load_checkpoint(checkpoint)?;
    Ok((model, store))
}

/// One TSV line per row: node id, then each value with 6 significant digits.
pub fn embeddings_tsv(x: &Array2<f32>, node_ids: &[usize]) -> String {
    assert_eq!(x.nrows(), node_ids.len());
    let mut out = String::new();
    for (row, id) in x.rows().into_iter().zip(node_ids) {
        write!(out, "{id}").unwrap();
        for v in row {
            write!(out, "\t{v:.5e}").unwrap();
        }
        out.push('\n');
    }
    out
}

/// Writes the selected embedding (`Concat` places h1 before h2) as FMAT and,
/// optionally, TSV keyed by global node id.
pub fn export_embeddings(emb: &Embeddings, which: ProbeEmbedding, node_ids: &[usize], out: &Path, tsv: Option<&Path>) -> Result<Array2<f32>> {
    let x = select_embedding(emb, which);
    save_fmat(out, &x)?;
    if let Some(path) = tsv {
        std::fs::write(path, embeddings_tsv(&x, node_ids))?;
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fmat::load_fmat;
    use crate::rng::seeded;
    use ndarray::Axis;
    use proptest::prelude::*;
    use rand::Rng;

    fn sample_embeddings(n: usize) -> Embeddings {
        let mut rng = seeded(3);
        let mut draw = |c| Array2::from_shape_simple_fn((n, c), || rng.random_range(-50.0f32..50.0) * 10f32.powi(rng.random_range(-4..3)));
        Embeddings {
            h1: draw(4),
            h2: draw(3),
            gamma: vec![0.5, 0.5],
        }
    }

    #[test]
    fn fmat_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let e = sample_embeddings(7);
        let ids: Vec<usize> = (100..107).collect();
        for (which, cols) in [(ProbeEmbedding::H1, 4), (ProbeEmbedding::H2, 3), (ProbeEmbedding::Concat, 7)] {
            let out = dir.path().join(format!("{which}.fmat"));
            let x = export_embeddings(&e, which, &ids, &out, None).unwrap();
            assert_eq!(x.ncols(), cols);
            assert_eq!(load_fmat(&out).unwrap(), x);
        }
        let both = load_fmat(&dir.path().join("concat.fmat")).unwrap();
        assert_eq!(both.slice(ndarray::s![.., ..4]), e.h1);
        assert_eq!(both.slice(ndarray::s![.., 4..]), e.h2);
    }

    #[test]
    fn tsv_matches_fmat_within_decimal_rounding() {
        let dir = tempfile::tempdir().unwrap();
        let e = sample_embeddings(9);
        let ids: Vec<usize> = (0..9).map(|i| 3 * i + 1).collect();
        let (out, tsv) = (dir.path().join("e.fmat"), dir.path().join("e.tsv"));
        export_embeddings(&e, ProbeEmbedding::Concat, &ids, &out, Some(&tsv)).unwrap();
        let x = load_fmat(&out).unwrap();
        let text = std::fs::read_to_string(&tsv).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), x.nrows());
        for (line, (row, id)) in lines.iter().zip(x.axis_iter(Axis(0)).zip(&ids)) {
            let fields: Vec<&str> = line.split('\t').collect();
            assert_eq!(fields[0].parse::<usize>().unwrap(), *id);
            assert_eq!(fields.len(), row.len() + 1);
            for (f, &v) in fields[1..].iter().zip(row) {
                let parsed: f64 = f.parse().unwrap();
                // Six significant digits: relative error at most half a unit
                // in the sixth digit.
                assert!((parsed - v as f64).abs() <= 5e-6 * (v as f64).abs() + f64::MIN_POSITIVE, "{f} vs {v}");
            }
        }
    }

    proptest! {
        #[test]
        fn tsv_has_six_significant_digits(v in -1e6f32..1e6) {
            let line = embeddings_tsv(&Array2::from_elem((1, 1), v), &[0]);
            let field = line.trim_end().split('\t').nth(1).unwrap().to_string();
            let mantissa = field.split('e').next().unwrap().trim_start_matches('-').replace('.', "");
            prop_assert_eq!(mantissa.len(), 6);
        }
    }
}
