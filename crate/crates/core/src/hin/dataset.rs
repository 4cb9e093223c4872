//! Dataset directories.
//!
//! ```text
//! nodes.tsv            node_id <TAB> type_name
//! edges.tsv            src_id <TAB> dst_id <TAB> relation_name
//! relations.tsv        relation_name <TAB> src_type <TAB> dst_type   (optional)
//! features_<type>.fmat FMAT1 matrix, one row per node of <type>
//! labels.tsv           node_id <TAB> class_id                         (optional)
//! ```
//!
//! Blank lines and lines starting with `#` are ignored. Relations not listed
//! in `relations.tsv` take their endpoint types from their first edge.

use std::fmt::Write as _;
use std::path::Path;

use super::{GraphBuilder, GraphError, HeteroGraph};
use crate::fmat::{load_fmat, save_fmat};

fn read_required(path: &Path) -> Result<String, GraphError> {
    if !path.exists() {
        return Err(GraphError::MissingFile(path.display().to_string()));
    }
    Ok(std::fs::read_to_string(path)?)
}

fn records<'a>(text: &'a str, file: &'a str, width: usize) -> impl Iterator<Item = Result<(usize, Vec<&'a str>), GraphError>> + 'a {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
        .map(move |(i, l)| {
            let fields: Vec<&str> = l.split('\t').map(str::trim).collect();
            if fields.len() != width {
                return Err(GraphError::Parse {
                    file: file.to_string(),
                    line: i + 1,
                    message: format!("expected {width} tab-separated fields, found {}", fields.len()),
                });
            }
            Ok((i + 1, fields))
        })
}

fn parse_id(s: &str, file: &str, line: usize) -> Result<usize, GraphError> {
    s.parse().map_err(|_| GraphError::Parse {
        file: file.to_string(),
        line,
        message: format!("`{s}` is not a non-negative integer"),
    })
}

/// Loads and validates a dataset directory.
pub fn load_hin(dir: &Path) -> Result<HeteroGraph, GraphError> {
    let mut b = GraphBuilder::new();
    let mut type_of = std::collections::HashMap::new();

    let nodes = read_required(&dir.join("nodes.tsv"))?;
    for rec in records(&nodes, "nodes.tsv", 2) {
        let (line, f) = rec?;
        let id = parse_id(f[0], "nodes.tsv", line)?;
        let t = b.node_type(f[1]);
        if type_of.insert(id, t).is_some() {
            return Err(GraphError::DuplicateNode(id));
        }
        b.add_node(id, t);
    }

    let rel_path = dir.join("relations.tsv");
    if rel_path.exists() {
        let text = std::fs::read_to_string(&rel_path)?;
        for rec in records(&text, "relations.tsv", 3) {
            let (_, f) = rec?;
            let src = type_id(&b, f[1])?;
            let dst = type_id(&b, f[2])?;
            b.relation(f[0], src, dst)?;
        }
    }

    let edges = read_required(&dir.join("edges.tsv"))?;
    for rec in records(&edges, "edges.tsv", 3) {
        let (line, f) = rec?;
        let src = parse_id(f[0], "edges.tsv", line)?;
        let dst = parse_id(f[1], "edges.tsv", line)?;
        let rel = match b.relation_id(f[2]) {
            Some(r) => r,
            None => {
                let st = *type_of.get(&src).ok_or(GraphError::UnknownNode(src))?;
                let dt = *type_of.get(&dst).ok_or(GraphError::UnknownNode(dst))?;
                b.relation(f[2], st, dt)?
            }
        };
        b.add_edge(rel, src, dst);
    }

    let type_names = b.type_names.clone();
    for (t, name) in type_names.iter().enumerate() {
        let path = dir.join(format!("features_{name}.fmat"));
        if path.exists() {
            b.features(t, load_fmat(&path)?);
        }
    }

    let labels_path = dir.join("labels.tsv");
    if labels_path.exists() {
        let text = std::fs::read_to_string(&labels_path)?;
        for rec in records(&text, "labels.tsv", 2) {
            let (line, f) = rec?;
            let node = parse_id(f[0], "labels.tsv", line)?;
            let class = parse_id(f[1], "labels.tsv", line)?;
            b.label(node, class);
        }
    }
    b.build()
}

fn type_id(b: &GraphBuilder, name: &str) -> Result<usize, GraphError> {
    b.type_names
        .iter()
        .position(|t| t == name)
        .ok_or_else(|| GraphError::UnknownType(name.to_string()))
}

/// Writes `g` in the dataset layout read by [`load_hin`].
pub fn save_hin(g: &HeteroGraph, dir: &Path) -> Result<(), GraphError> {
    std::fs::create_dir_all(dir)?;
    let mut all: Vec<(usize, usize)> = (0..g.num_types()).flat_map(|t| g.nodes_of_type(t).iter().map(move |&id| (id, t))).collect();
    // First appearance order in nodes.tsv fixes type ids on reload, so list
    // one node of each type first, in type order, then the rest by id.
    all.sort_unstable();
    let mut text = String::new();
    let mut emitted = std::collections::HashSet::new();
    for t in 0..g.num_types() {
        if let Some(&id) = g.nodes_of_type(t).first() {
            writeln!(text, "{id}\t{}", g.type_name(t)).unwrap();
            emitted.insert(id);
        }
    }
    for &(id, t) in &all {
        if !emitted.contains(&id) {
            writeln!(text, "{id}\t{}", g.type_name(t)).unwrap();
        }
    }
    std::fs::write(dir.join("nodes.tsv"), text)?;

    let mut rels = String::new();
    let mut edges = String::new();
    for (r, rel) in g.relations().iter().enumerate() {
        writeln!(rels, "{}\t{}\t{}", rel.name, g.type_name(rel.src_type), g.type_name(rel.dst_type)).unwrap();
        for (s, d) in g.adjacency(r).entries() {
            writeln!(edges, "{}\t{}\t{}", g.global_id(rel.src_type, s), g.global_id(rel.dst_type, d), rel.name).unwrap();
        }
    }
    std::fs::write(dir.join("relations.tsv"), rels)?;
    std::fs::write(dir.join("edges.tsv"), edges)?;

    for t in 0..g.num_types() {
        if let Some(x) = g.features(t) {
            save_fmat(&dir.join(format!("features_{}.fmat", g.type_name(t))), x)?;
        }
    }
    if !g.labels().is_empty() {
        let mut text = String::new();
        for (node, class) in g.labels() {
            writeln!(text, "{node}\t{class}").unwrap();
        }
        std::fs::write(dir.join("labels.tsv"), text)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hin::fixtures::toy;

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = toy();
        save_hin(&g, dir.path()).unwrap();
        let back = load_hin(dir.path()).unwrap();
        assert_eq!(back, g);

        let again = tempfile::tempdir().unwrap();
        save_hin(&back, again.path()).unwrap();
        for f in ["nodes.tsv", "edges.tsv", "relations.tsv", "labels.tsv", "features_paper.fmat"] {
            assert_eq!(std::fs::read(dir.path().join(f)).unwrap(), std::fs::read(again.path().join(f)).unwrap(), "{f}");
        }
    }

    #[test]
    fn hand_written_fixture() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("nodes.tsv"), "# toy\n0\tpaper\n1\tpaper\n2\tauthor\n3\tauthor\n4\tsubject\n").unwrap();
        std::fs::write(dir.path().join("edges.tsv"), "0\t2\tPA\n1\t2\tPA\n1\t3\tPA\n0\t4\tPS\n0\t2\tPA\n").unwrap();
        let g = load_hin(dir.path()).unwrap();
        assert_eq!(g.duplicate_edges(), 1);
        assert_eq!(g.relations().len(), 2);
        let pa = g.adjacency(g.relation_id("PA").unwrap());
        assert_eq!(pa.row(0), &[0]);
        assert_eq!(pa.row(1), &[0, 1]);
        let ps = g.adjacency(g.relation_id("PS").unwrap());
        assert_eq!(ps.row(0), &[0]);
        assert_eq!(ps.row(1), &[] as &[usize]);
    }

    #[test]
    fn empty_edges_with_declared_relations() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("nodes.tsv"), "0\tpaper\n1\tauthor\n2\tsubject\n").unwrap();
        std::fs::write(dir.path().join("relations.tsv"), "PA\tpaper\tauthor\n").unwrap();
        std::fs::write(dir.path().join("edges.tsv"), "").unwrap();
        let g = load_hin(dir.path()).unwrap();
        assert_eq!(g.relations().len(), 1);
        assert_eq!(g.num_edges(), 0);
        assert_eq!(g.adjacency(0).shape(), (1, 1));
    }

    #[test]
    fn missing_and_malformed_files() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_hin(dir.path()), Err(GraphError::MissingFile(_))));
        std::fs::write(dir.path().join("nodes.tsv"), "0\tpaper\n1\tauthor\n2\tsubject\n").unwrap();
        assert!(matches!(load_hin(dir.path()), Err(GraphError::MissingFile(_))));
        std::fs::write(dir.path().join("edges.tsv"), "0\t1\n").unwrap();
        assert!(matches!(load_hin(dir.path()), Err(GraphError::Parse { line: 1, .. })));
        std::fs::write(dir.path().join("edges.tsv"), "0\t1\tPA\n2\t1\tPA\n").unwrap();
        assert!(matches!(load_hin(dir.path()), Err(GraphError::TypeMismatch { .. })));
    }

    #[test]
    fn ragged_feature_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("nodes.tsv"), "0\tpaper\n1\tauthor\n2\tsubject\n").unwrap();
        std::fs::write(dir.path().join("edges.tsv"), "0\t1\tPA\n").unwrap();
        save_fmat(&dir.path().join("features_paper.fmat"), &ndarray::Array2::zeros((3, 2))).unwrap();
        assert!(matches!(load_hin(dir.path()), Err(GraphError::RaggedFeatures { .. })));
    }
}
