//! On-disk run configuration: `[section]` headers, `key = value` lines and
//! `#` comments. Every key has a default; unknown sections and keys are
//! rejected. [`RunConfig::to_text`] writes every key, so parsing its output
//! reproduces the same configuration.

use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::loss::LossWeights;
use crate::mae::GnnKind;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: unknown section [{section}]")]
    UnknownSection { line: usize, section: String },
    #[error("line {line}: unknown key `{key}` in [{section}]")]
    UnknownKey { line: usize, section: String, key: String },
    #[error("invalid value for `{key}`: `{value}` ({reason})")]
    InvalidValue { key: String, value: String, reason: String },
    #[error("cannot read config {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// Which embedding the node-classification probe consumes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProbeEmbedding {
    H1,
    H2,
    Concat,
}

impl FromStr for ProbeEmbedding {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "h1" => Ok(Self::H1),
            "h2" => Ok(Self::H2),
            "concat" | "both" => Ok(Self::Concat),
            _ => Err("expected h1, h2, concat or both".into()),
        }
    }
}

impl fmt::Display for ProbeEmbedding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::H1 => "h1",
            Self::H2 => "h2",
            Self::Concat => "concat",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetConfig {
    pub path: String,
    /// Node type whose embeddings are learned.
    pub target: String,
    /// Meta-paths over the target type, e.g. `paper-author-paper`.
    pub metapaths: Vec<String>,
    pub user_type: String,
    pub item_type: String,
    /// Relation holding user-item interactions.
    pub interaction: String,
    pub user_metapaths: Vec<String>,
    pub item_metapaths: Vec<String>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            path: String::new(),
            target: "paper".into(),
            metapaths: vec!["paper-author-paper".into(), "paper-subject-paper".into()],
            user_type: "user".into(),
            item_type: "item".into(),
            interaction: "UI".into(),
            user_metapaths: vec!["user-item-user".into()],
            item_metapaths: vec!["item-user-item".into(), "item-category-item".into()],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub hidden: usize,
    pub encoder: GnnKind,
    pub decoder: GnnKind,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub mask_ratio: f64,
    /// `None` means half the mask ratio.
    pub remask_ratio: Option<f64>,
    /// Linear + ELU head applied to both views before inter-contrast.
    pub projection_head: bool,
    pub probe_embedding: ProbeEmbedding,
    pub lightgcn_layers: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            encoder: GnnKind::Gcn,
            decoder: GnnKind::Gat,
            encoder_layers: 1,
            decoder_layers: 1,
            mask_ratio: 0.3,
            remask_ratio: None,
            projection_head: false,
            probe_embedding: ProbeEmbedding::H2,
            lightgcn_layers: 2,
        }
    }
}

impl ModelConfig {
    pub fn effective_remask_ratio(&self) -> f64 {
        self.remask_ratio.unwrap_or(self.mask_ratio / 2.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplingConfig {
    pub k_loc: usize,
    pub k_sem: usize,
    pub intra_fraction: f64,
    pub walks_per_node: usize,
    pub walk_len: usize,
    pub window: usize,
    pub negatives: usize,
    pub mp2v_dim: usize,
    pub mp2v_epochs: usize,
    pub mp2v_lr: f64,
    /// Contrastive batch size; 0 uses every target node.
    pub batch_size: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            k_loc: 8,
            k_sem: 8,
            intra_fraction: 0.5,
            walks_per_node: 10,
            walk_len: 20,
            window: 5,
            negatives: 5,
            mp2v_dim: 64,
            mp2v_epochs: 3,
            mp2v_lr: 0.025,
            batch_size: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimConfig {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    /// Early-stopping patience on the training loss; 0 disables it.
    pub patience: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            lr: 5e-3,
            seed: 0,
            patience: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub labels_per_class: usize,
    pub repeats: usize,
    pub k: usize,
    pub probe_steps: usize,
    pub probe_lr: f64,
    /// Share of each user's interactions held out for ranking.
    pub test_fraction: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            labels_per_class: 20,
            repeats: 10,
            k: 20,
            probe_steps: 200,
            probe_lr: 1e-2,
            test_fraction: 0.2,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub losses: LossWeights,
    pub sampling: SamplingConfig,
    pub train: OptimConfig,
    pub eval: EvalConfig,
}

fn parse_value<V: FromStr>(key: &str, value: &str) -> Result<V, ConfigError>
where
    V::Err: fmt::Display,
{
    value.parse().map_err(|e: V::Err| ConfigError::InvalidValue {
        key: key.into(),
        value: value.into(),
        reason: e.to_string(),
    })
}

fn parse_list(value: &str) -> Vec<String> {
    value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect()
}

fn parse_ratio(key: &str, value: &str) -> Result<Option<f64>, ConfigError> {
    if value == "auto" {
        Ok(None)
    } else {
        parse_value(key, value).map(Some)
    }
}

fn invalid(key: &str, value: impl fmt::Display, reason: &str) -> ConfigError {
    ConfigError::InvalidValue {
        key: key.into(),
        value: value.to_string(),
        reason: reason.into(),
    }
}

const SECTIONS: [&str; 6] = ["dataset", "model", "losses", "sampling", "train", "eval"];

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        let mut section: Option<String> = None;
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest.strip_suffix(']').ok_or_else(|| ConfigError::Syntax {
                    line: line_no,
                    message: "unterminated section header".into(),
                })?;
                let name = name.trim();
                if !SECTIONS.contains(&name) {
                    return Err(ConfigError::UnknownSection {
                        line: line_no,
                        section: name.into(),
                    });
                }
                section = Some(name.into());
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: line_no,
                message: "expected `key = value`".into(),
            })?;
            let sec = section.as_deref().ok_or_else(|| ConfigError::Syntax {
                line: line_no,
                message: "key outside of any section".into(),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !cfg.set(sec, key, value)? {
                return Err(ConfigError::UnknownKey {
                    line: line_no,
                    section: sec.into(),
                    key: key.into(),
                });
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Sets one key; returns `false` when the key is unknown.
    pub fn set(&mut self, section: &str, key: &str, v: &str) -> Result<bool, ConfigError> {
        let (d, m, l, s, t, e) = (
            &mut self.dataset,
            &mut self.model,
            &mut self.losses,
            &mut self.sampling,
            &mut self.train,
            &mut self.eval,
        );
        match (section, key) {
            ("dataset", "path") => d.path = v.into(),
            ("dataset", "target") => d.target = v.into(),
            ("dataset", "metapaths") => d.metapaths = parse_list(v),
            ("dataset", "user_type") => d.user_type = v.into(),
            ("dataset", "item_type") => d.item_type = v.into(),
            ("dataset", "interaction") => d.interaction = v.into(),
            ("dataset", "user_metapaths") => d.user_metapaths = parse_list(v),
            ("dataset", "item_metapaths") => d.item_metapaths = parse_list(v),
            ("model", "hidden") => m.hidden = parse_value(key, v)?,
            ("model", "encoder") => m.encoder = parse_value(key, v)?,
            ("model", "decoder") => m.decoder = parse_value(key, v)?,
            ("model", "encoder_layers") => m.encoder_layers = parse_value(key, v)?,
            ("model", "decoder_layers") => m.decoder_layers = parse_value(key, v)?,
            ("model", "mask_ratio") => m.mask_ratio = parse_value(key, v)?,
            ("model", "remask_ratio") => m.remask_ratio = parse_ratio(key, v)?,
            ("model", "projection_head") => m.projection_head = parse_value(key, v)?,
            ("model", "probe_embedding") => m.probe_embedding = parse_value(key, v)?,
            ("model", "lightgcn_layers") => m.lightgcn_layers = parse_value(key, v)?,
            ("losses", "lambda_intra") => l.intra = parse_value(key, v)?,
            ("losses", "lambda_inter") => l.inter = parse_value(key, v)?,
            ("losses", "lambda_gen") => l.gen = parse_value(key, v)?,
            ("losses", "lambda_balance") => l.balance = parse_value(key, v)?,
            ("losses", "lambda_hcl") => l.hcl = parse_value(key, v)?,
            ("losses", "lambda_bpr") => l.bpr = parse_value(key, v)?,
            ("losses", "tau") => l.tau = parse_value(key, v)?,
            ("losses", "eta") => l.eta = parse_value(key, v)?,
            ("sampling", "k_loc") => s.k_loc = parse_value(key, v)?,
            ("sampling", "k_sem") => s.k_sem = parse_value(key, v)?,
            ("sampling", "intra_fraction") => s.intra_fraction = parse_value(key, v)?,
            ("sampling", "walks_per_node") => s.walks_per_node = parse_value(key, v)?,
            ("sampling", "walk_len") => s.walk_len = parse_value(key, v)?,
            ("sampling", "window") => s.window = parse_value(key, v)?,
            ("sampling", "negatives") => s.negatives = parse_value(key, v)?,
            ("sampling", "mp2v_dim") => s.mp2v_dim = parse_value(key, v)?,
            ("sampling", "mp2v_epochs") => s.mp2v_epochs = parse_value(key, v)?,
            ("sampling", "mp2v_lr") => s.mp2v_lr = parse_value(key, v)?,
            ("sampling", "batch_size") => s.batch_size = parse_value(key, v)?,
            ("train", "epochs") => t.epochs = parse_value(key, v)?,
            ("train", "lr") => t.lr = parse_value(key, v)?,
            ("train", "seed") => t.seed = parse_value(key, v)?,
            ("train", "patience") => t.patience = parse_value(key, v)?,
            ("eval", "labels_per_class") => e.labels_per_class = parse_value(key, v)?,
            ("eval", "repeats") => e.repeats = parse_value(key, v)?,
            ("eval", "k") => e.k = parse_value(key, v)?,
            ("eval", "probe_steps") => e.probe_steps = parse_value(key, v)?,
            ("eval", "probe_lr") => e.probe_lr = parse_value(key, v)?,
            ("eval", "test_fraction") => e.test_fraction = parse_value(key, v)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.losses.validate().map_err(|e| invalid("losses", "", &e.to_string()))?;
        let m = &self.model;
        if !(0.0..1.0).contains(&m.mask_ratio) {
            return Err(invalid("mask_ratio", m.mask_ratio, "must lie in [0, 1)"));
        }
        if !(0.0..1.0).contains(&m.effective_remask_ratio()) {
            return Err(invalid("remask_ratio", m.effective_remask_ratio(), "must lie in [0, 1)"));
        }
        for (key, v) in [
            ("hidden", m.hidden),
            ("encoder_layers", m.encoder_layers),
            ("decoder_layers", m.decoder_layers),
            ("walk_len", self.sampling.walk_len.saturating_sub(1)),
            ("window", self.sampling.window),
            ("mp2v_dim", self.sampling.mp2v_dim),
            ("labels_per_class", self.eval.labels_per_class),
            ("repeats", self.eval.repeats),
            ("k", self.eval.k),
        ] {
            if v == 0 {
                return Err(invalid(key, v, "too small"));
            }
        }
        if !(0.0..=1.0).contains(&self.sampling.intra_fraction) {
            return Err(invalid("intra_fraction", self.sampling.intra_fraction, "must lie in [0, 1]"));
        }
        for (key, v) in [("lr", self.train.lr), ("probe_lr", self.eval.probe_lr), ("mp2v_lr", self.sampling.mp2v_lr)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(key, v, "must be finite and > 0"));
            }
        }
        if !(0.0..1.0).contains(&self.eval.test_fraction) {
            return Err(invalid("test_fraction", self.eval.test_fraction, "must lie in [0, 1)"));
        }
        Ok(())
    }

    /// Canonical text listing every key.
    pub fn to_text(&self) -> String {
        let (d, m, l, s, t, e) = (&self.dataset, &self.model, &self.losses, &self.sampling, &self.train, &self.eval);
        let mut out = String::new();
        let remask = m.remask_ratio.map_or_else(|| "auto".to_string(), |r| r.to_string());
        let sections: [(&str, Vec<(&str, String)>); 6] = [
            (
                "dataset",
                vec![
                    ("path", d.path.clone()),
                    ("target", d.target.clone()),
                    ("metapaths", d.metapaths.join(", ")),
                    ("user_type", d.user_type.clone()),
                    ("item_type", d.item_type.clone()),
                    ("interaction", d.interaction.clone()),
                    ("user_metapaths", d.user_metapaths.join(", ")),
                    ("item_metapaths", d.item_metapaths.join(", ")),
                ],
            ),
            (
                "model",
                vec![
                    ("hidden", m.hidden.to_string()),
                    ("encoder", m.encoder.to_string()),
                    ("decoder", m.decoder.to_string()),
                    ("encoder_layers", m.encoder_layers.to_string()),
                    ("decoder_layers", m.decoder_layers.to_string()),
                    ("mask_ratio", m.mask_ratio.to_string()),
                    ("remask_ratio", remask),
                    ("projection_head", m.projection_head.to_string()),
                    ("probe_embedding", m.probe_embedding.to_string()),
                    ("lightgcn_layers", m.lightgcn_layers.to_string()),
                ],
            ),
            (
                "losses",
                vec![
                    ("lambda_intra", l.intra.to_string()),
                    ("lambda_inter", l.inter.to_string()),
                    ("lambda_gen", l.gen.to_string()),
                    ("lambda_balance", l.balance.to_string()),
                    ("lambda_hcl", l.hcl.to_string()),
                    ("lambda_bpr", l.bpr.to_string()),
                    ("tau", l.tau.to_string()),
                    ("eta", l.eta.to_string()),
                ],
            ),
            (
                "sampling",
                vec![
                    ("k_loc", s.k_loc.to_string()),
                    ("k_sem", s.k_sem.to_string()),
                    ("intra_fraction", s.intra_fraction.to_string()),
                    ("walks_per_node", s.walks_per_node.to_string()),
                    ("walk_len", s.walk_len.to_string()),
                    ("window", s.window.to_string()),
                    ("negatives", s.negatives.to_string()),
                    ("mp2v_dim", s.mp2v_dim.to_string()),
                    ("mp2v_epochs", s.mp2v_epochs.to_string()),
                    ("mp2v_lr", s.mp2v_lr.to_string()),
                    ("batch_size", s.batch_size.to_string()),
                ],
            ),
            (
                "train",
                vec![
                    ("epochs", t.epochs.to_string()),
                    ("lr", t.lr.to_string()),
                    ("seed", t.seed.to_string()),
                    ("patience", t.patience.to_string()),
                ],
            ),
            (
                "eval",
                vec![
                    ("labels_per_class", e.labels_per_class.to_string()),
                    ("repeats", e.repeats.to_string()),
                    ("k", e.k.to_string()),
                    ("probe_steps", e.probe_steps.to_string()),
                    ("probe_lr", e.probe_lr.to_string()),
                    ("test_fraction", e.test_fraction.to_string()),
                ],
            ),
        ];
        for (i, (name, keys)) in sections.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            let _ = writeln!(out, "[{name}]");
            for (k, v) in keys {
                let _ = writeln!(out, "{k} = {v}");
            }
        }
        out
    }
}

impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
        assert_eq!(RunConfig::parse("").unwrap(), cfg);
    }

    #[test]
    fn parses_sections_comments_and_lists() {
        let text = "# run\n[dataset]\npath = data/acm  # trailing\nmetapaths = PAP:paper-author-paper , paper-subject-paper\n\n[model]\nencoder = GAT\nremask_ratio = 0.05\n[losses]\nlambda_gen = 0.25\n[train]\nseed = 42\n";
        let cfg = RunConfig::parse(text).unwrap();
        assert_eq!(cfg.dataset.path, "data/acm");
        assert_eq!(cfg.dataset.metapaths, vec!["PAP:paper-author-paper", "paper-subject-paper"]);
        assert_eq!(cfg.model.encoder, GnnKind::Gat);
        assert_eq!(cfg.model.remask_ratio, Some(0.05));
        assert_eq!(cfg.losses.gen, 0.25);
        assert_eq!(cfg.train.seed, 42);
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(RunConfig::parse("[model]\nwidth = 3\n"), Err(ConfigError::UnknownKey { line: 2, .. })));
        assert!(matches!(RunConfig::parse("[extra]\n"), Err(ConfigError::UnknownSection { .. })));
        assert!(matches!(RunConfig::parse("hidden = 3\n"), Err(ConfigError::Syntax { line: 1, .. })));
        assert!(matches!(RunConfig::parse("[model]\nhidden\n"), Err(ConfigError::Syntax { .. })));
        assert!(matches!(RunConfig::parse("[model\n"), Err(ConfigError::Syntax { .. })));
        for bad in [
            "[losses]\nlambda_gen = -1",
            "[losses]\nlambda_inter = inf",
            "[losses]\nlambda_intra = nan",
            "[losses]\ntau = 0",
            "[model]\nmask_ratio = 1",
            "[model]\nhidden = -3",
            "[model]\nencoder = mlp",
            "[eval]\nk = 0",
        ] {
            assert!(matches!(RunConfig::parse(bad), Err(ConfigError::InvalidValue { .. })), "{bad}");
        }
    }

    proptest! {
        #[test]
        fn parse_serialize_parse_is_fixed_point(
            hidden in 1usize..512,
            p in 0.0f64..0.99,
            gen in 0.0f64..10.0,
            tau in 0.01f64..5.0,
            seed in any::<u64>(),
            auto in any::<bool>(),
            head in any::<bool>(),
            paths in proptest::collection::vec("[a-z]{1,6}-[a-z]{1,6}-[a-z]{1,6}", 0..4),
        ) {
            let mut cfg = RunConfig::default();
            cfg.model.hidden = hidden;
            cfg.model.mask_ratio = p;
            cfg.model.remask_ratio = if auto { None } else { Some(p / 3.0) };
            cfg.model.projection_head = head;
            cfg.losses.gen = gen;
            cfg.losses.tau = tau;
            cfg.train.seed = seed;
            cfg.dataset.metapaths = paths;
            let once = RunConfig::parse(&cfg.to_text()).unwrap();
            prop_assert_eq!(&once, &cfg);
            prop_assert_eq!(once.to_text(), cfg.to_text());
        }
    }
}
