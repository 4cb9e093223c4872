//! The `gchgnn` command line: synthetic data, pretraining, export,
//! evaluation and self-checks. [`run`] does everything except process setup,
//! so the binary is a thin wrapper and the commands are testable in-process.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use gchgnn::check::{gradient_suite, oracle_suite, SuiteReport};
use gchgnn::config::{ProbeEmbedding, RunConfig};
use gchgnn::export::{export_embeddings, load_node_model};
use gchgnn::hin::{load_hin, save_hin, HeteroGraph};
use gchgnn::sampler::default_cache_dir;
use gchgnn::synthetic::{generate_link_synthetic, generate_synthetic, LinkSpec, SyntheticSpec};
use gchgnn::train::{evaluate_link_checkpoint, linear_probe, pretrain_node, rank_eval, select_embedding, train_link, MetricsReport, ProbeConfig};

#[derive(Parser)]
#[command(name = "gchgnn", version, about = "Generative-contrastive self-supervised learning on heterogeneous graphs")]
pub struct Cli {
    /// Seed for every random choice; overrides `[train] seed` of the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for walk generation and probe repeats. Results do not
    /// depend on it; gradient steps and skip-gram always run on one thread.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    threads: u32,
    /// Run configuration (`[section]` headers, `key = value` lines).
    /// Required by the training and evaluation commands.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides one configuration key, e.g. `--set model.mask_ratio=0.5`.
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
    /// Dataset directory; overrides `[dataset] path`.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Writes a synthetic dataset directory with planted communities.
    Generate(GenerateArgs),
    /// Self-supervised pretraining; writes a checkpoint and a training report.
    Pretrain {
        /// Output directory for `model.ckpt` and `train.json`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Exports embeddings from a pretrained checkpoint.
    Embed {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Embedding to export: h1, h2 or both (h1 then h2 per row).
        #[arg(long)]
        which: Option<ProbeEmbedding>,
        /// FMAT output file.
        #[arg(long)]
        out: PathBuf,
        /// Optional TSV copy: node id then each value to 6 significant digits.
        #[arg(long)]
        tsv: Option<PathBuf>,
    },
    /// Linear probe on a checkpoint; prints a JSON report on standard output.
    Probe {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Labels TSV (node id, class id); defaults to the dataset labels.
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Embedding to probe; defaults to `[model] probe_embedding`.
        #[arg(long)]
        which: Option<ProbeEmbedding>,
    },
    /// Trains the link-prediction model; writes a checkpoint and a report.
    LinkTrain {
        /// Output directory for `link.ckpt` and `train.json`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Ranks held-out interactions with a link checkpoint; prints JSON.
    LinkEval {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Finite-difference check of every differentiable op and loss.
    Gradcheck {
        /// Prints the report as JSON instead of text.
        #[arg(long)]
        json: bool,
    },
    /// Compares the library against brute-force reference implementations.
    Selftest {
        /// Prints the report as JSON instead of text.
        #[arg(long)]
        json: bool,
    },
    /// Prints the default run configuration.
    Config,
}

#[derive(Clone, Copy, ValueEnum)]
enum DatasetKind {
    /// Papers linked to authors and subjects, labelled by community.
    Node,
    /// Users, items and categories for link prediction.
    Link,
}

#[derive(Args)]
struct GenerateArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = DatasetKind::Node)]
    kind: DatasetKind,
    /// Papers (node datasets).
    #[arg(long)]
    n_target: Option<usize>,
    /// Authors and subjects each (node datasets).
    #[arg(long)]
    n_aux: Option<usize>,
    /// Users (link datasets).
    #[arg(long)]
    n_users: Option<usize>,
    /// Items (link datasets).
    #[arg(long)]
    n_items: Option<usize>,
    /// Categories (link datasets).
    #[arg(long)]
    n_categories: Option<usize>,
    #[arg(long)]
    communities: Option<usize>,
    /// Edge probability inside a community.
    #[arg(long)]
    intra: Option<f64>,
    /// Edge probability across communities.
    #[arg(long)]
    inter: Option<f64>,
    #[arg(long)]
    feature_dim: Option<usize>,
    /// Standard deviation of the feature noise around each prototype.
    #[arg(long)]
    sigma: Option<f64>,
}

/// Parses `args` (program name first) and runs the command. Standard output
/// goes to `out` and diagnostics to `err`. Returns the process exit code: 0 on
/// success, 2 on usage errors, 1 on runtime errors.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => return usage(e, out, err),
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads as usize).build() {
        Ok(pool) => pool,
        Err(e) => return runtime(&anyhow!(e), err),
    };
    let mut text = String::new();
    let result = pool.install(|| execute(&cli, &mut text));
    // A closed pipe on standard output is not an error.
    if let Err(e) = out.write_all(text.as_bytes()).and_then(|()| out.flush()) {
        if e.kind() != std::io::ErrorKind::BrokenPipe {
            return runtime(&anyhow!(gchgnn::Error::from(e)), err);
        }
    }
    match result {
        Ok(()) => 0,
        Err(Failure::Usage(e)) => usage(e, out, err),
        Err(Failure::Runtime(e)) => runtime(&e, err),
    }
}

fn usage(e: clap::Error, out: &mut dyn Write, err: &mut dyn Write) -> u8 {
    let text = e.render().to_string();
    let _ = if e.use_stderr() {
        err.write_all(text.as_bytes())
    } else {
        out.write_all(text.as_bytes())
    };
    e.exit_code() as u8
}

fn runtime(e: &anyhow::Error, err: &mut dyn Write) -> u8 {
    let _ = writeln!(err, "{}", error_line(e));
    1
}

enum Failure {
    Usage(clap::Error),
    Runtime(anyhow::Error),
}

macro_rules! runtime_from {
    ($($ty:ty),*) => {$(
        impl From<$ty> for Failure {
            fn from(e: $ty) -> Self {
                Self::Runtime(anyhow::Error::new(gchgnn::Error::from(e)))
            }
        }
    )*};
}

runtime_from!(
    gchgnn::Error,
    gchgnn::hin::GraphError,
    gchgnn::autodiff::TensorError,
    gchgnn::sampler::SampleError,
    gchgnn::loss::LossError,
    gchgnn::config::ConfigError,
    gchgnn::synthetic::SpecError,
    gchgnn::train::TrainError,
    std::io::Error
);

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Self::Runtime(e)
    }
}

fn usage_error(kind: clap::error::ErrorKind, message: impl std::fmt::Display) -> Failure {
    Failure::Usage(Cli::command().error(kind, message))
}

/// One line: `error: kind=<subsystem> message=<text>`.
fn error_line(e: &anyhow::Error) -> String {
    let kind = e
        .chain()
        .find_map(|c| match c.downcast_ref::<gchgnn::Error>() {
            Some(e) => Some(e.kind()),
            None => c.is::<std::io::Error>().then_some("io"),
        })
        .unwrap_or("cli");
    // Library errors already print their source, so skip causes that repeat.
    let mut message = String::new();
    for cause in e.chain().map(|c| c.to_string()) {
        if !message.contains(&cause) {
            if !message.is_empty() {
                message.push_str(": ");
            }
            message.push_str(&cause);
        }
    }
    let message = message.replace('\n', " ");
    format!("error: kind={kind} message={message}")
}

fn execute(cli: &Cli, stdout: &mut String) -> Result<(), Failure> {
    match &cli.command {
        Command::Generate(args) => generate(cli, args),
        Command::Pretrain { out } => {
            let (cfg, g) = load_run(cli)?;
            let started = Instant::now();
            let run = pretrain_node(&g, &cfg, Some(&default_cache_dir()))?;
            std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
            run.store.save_checkpoint(&out.join("model.ckpt"))?;
            std::fs::write(out.join("config.conf"), cfg.to_text())?;
            let report = MetricsReport {
                losses: run.losses,
                epoch_seconds: run.epoch_seconds,
                ..MetricsReport::default()
            };
            std::fs::write(out.join("train.json"), report.to_json())?;
            log::info!(
                "pretrained in {:.1}s, semantic weights {:?}",
                started.elapsed().as_secs_f64(),
                run.embeddings.gamma
            );
            emit(stdout, &report.to_json());
            Ok(())
        }
        Command::Embed { checkpoint, which, out, tsv } => {
            let (cfg, g) = load_run(cli)?;
            let (model, store) = load_node_model(&g, &cfg, checkpoint).with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
            let emb = model.embed(&store)?;
            let target = g.type_id(&cfg.dataset.target)?;
            let which = which.unwrap_or(cfg.model.probe_embedding);
            let x = export_embeddings(&emb, which, g.nodes_of_type(target), out, tsv.as_deref())?;
            log::info!("wrote {} x {} {which} embeddings to {}", x.nrows(), x.ncols(), out.display());
            Ok(())
        }
        Command::Probe { checkpoint, labels, which } => {
            let (cfg, g) = load_run(cli)?;
            let (model, store) = load_node_model(&g, &cfg, checkpoint).with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
            let emb = model.embed(&store)?;
            let target = g.type_id(&cfg.dataset.target)?;
            let labels = match labels {
                Some(path) => read_labels(&g, target, path)?,
                None => g.labels_for_type(target),
            };
            let x = select_embedding(&emb, which.unwrap_or(cfg.model.probe_embedding));
            let probe = ProbeConfig {
                steps: cfg.eval.probe_steps,
                lr: cfg.eval.probe_lr,
                seed: cfg.train.seed,
            };
            let report = linear_probe(&x, &labels, cfg.eval.labels_per_class, cfg.eval.repeats, probe)?;
            emit(stdout, &report.to_json());
            Ok(())
        }
        Command::LinkTrain { out } => {
            let (cfg, g) = load_run(cli)?;
            let run = train_link(&g, &cfg, Some(&default_cache_dir()))?;
            std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
            run.store.save_checkpoint(&out.join("link.ckpt"))?;
            std::fs::write(out.join("config.conf"), cfg.to_text())?;
            let report = MetricsReport {
                losses: run.losses,
                epoch_seconds: run.epoch_seconds,
                ..rank_eval(&run.embeddings, &run.split, cfg.eval.k)?
            };
            std::fs::write(out.join("train.json"), report.to_json())?;
            emit(stdout, &report.to_json());
            Ok(())
        }
        Command::LinkEval { checkpoint } => {
            let (cfg, g) = load_run(cli)?;
            let report = evaluate_link_checkpoint(&g, &cfg, checkpoint).with_context(|| format!("evaluating checkpoint {}", checkpoint.display()))?;
            emit(stdout, &report.to_json());
            Ok(())
        }
        Command::Gradcheck { json } => suite(stdout, gradient_suite(cli.seed.unwrap_or(0))?, *json),
        Command::Selftest { json } => suite(stdout, oracle_suite(cli.seed.unwrap_or(0))?, *json),
        Command::Config => {
            emit(stdout, config(cli)?.to_text().trim_end());
            Ok(())
        }
    }
}

fn emit(out: &mut String, text: &str) {
    writeln!(out, "{text}").expect("writing to a String");
}

fn suite(out: &mut String, report: SuiteReport, json: bool) -> Result<(), Failure> {
    if json {
        emit(out, &serde_json::to_string_pretty(&report).map_err(|e| anyhow!(e))?);
    } else {
        emit(out, &report.to_string());
    }
    let failed = report.failures().count();
    if failed > 0 {
        return Err(anyhow!("{failed} of {} checks failed, max error {:.3e}", report.checks.len(), report.max_error()).into());
    }
    Ok(())
}

fn generate(cli: &Cli, a: &GenerateArgs) -> Result<(), Failure> {
    let seed = cli.seed.unwrap_or(0);
    let g = match a.kind {
        DatasetKind::Node => {
            let d = SyntheticSpec::default();
            generate_synthetic(&SyntheticSpec {
                n_target: a.n_target.unwrap_or(d.n_target),
                n_aux_per_type: a.n_aux.unwrap_or(d.n_aux_per_type),
                n_communities: a.communities.unwrap_or(d.n_communities),
                intra_edge_prob: a.intra.unwrap_or(d.intra_edge_prob),
                inter_edge_prob: a.inter.unwrap_or(d.inter_edge_prob),
                feature_dim: a.feature_dim.unwrap_or(d.feature_dim),
                feature_noise_sigma: a.sigma.unwrap_or(d.feature_noise_sigma),
                seed,
            })
        }
        DatasetKind::Link => {
            let d = LinkSpec::default();
            generate_link_synthetic(&LinkSpec {
                n_users: a.n_users.unwrap_or(d.n_users),
                n_items: a.n_items.unwrap_or(d.n_items),
                n_categories: a.n_categories.unwrap_or(d.n_categories),
                n_communities: a.communities.unwrap_or(d.n_communities),
                intra_edge_prob: a.intra.unwrap_or(d.intra_edge_prob),
                inter_edge_prob: a.inter.unwrap_or(d.inter_edge_prob),
                feature_dim: a.feature_dim.unwrap_or(d.feature_dim),
                feature_noise_sigma: a.sigma.unwrap_or(d.feature_noise_sigma),
                seed,
            })
        }
    }?;
    save_hin(&g, &a.out)?;
    log::info!("wrote {} nodes and {} edges to {}", g.num_nodes(), g.num_edges(), a.out.display());
    Ok(())
}

/// Config file plus `--set` and `--seed` overrides. Only `gchgnn config`
/// may run without a file.
fn config(cli: &Cli) -> Result<RunConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let mut cfg = RunConfig::load(path)?;
            if !cfg.dataset.path.is_empty() && Path::new(&cfg.dataset.path).is_relative() {
                let base = path.parent().unwrap_or(Path::new(""));
                cfg.dataset.path = base.join(&cfg.dataset.path).to_string_lossy().into_owned();
            }
            cfg
        }
        None if matches!(cli.command, Command::Config) => RunConfig::default(),
        None => {
            return Err(usage_error(
                clap::error::ErrorKind::MissingRequiredArgument,
                "this command requires --config <CONFIG>",
            ))
        }
    };
    for o in &cli.overrides {
        let parsed = o.split_once('=').and_then(|(k, v)| k.split_once('.').map(|(s, k)| (s, k, v)));
        let Some((section, key, value)) = parsed else {
            return Err(usage_error(
                clap::error::ErrorKind::InvalidValue,
                format!("--set expects SECTION.KEY=VALUE, got `{o}`"),
            ));
        };
        if !cfg.set(section.trim(), key.trim(), value.trim())? {
            return Err(gchgnn::config::ConfigError::InvalidValue {
                key: format!("{section}.{key}"),
                value: value.into(),
                reason: "unknown key".into(),
            }
            .into());
        }
    }
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_run(cli: &Cli) -> Result<(RunConfig, HeteroGraph), Failure> {
    let mut cfg = config(cli)?;
    if let Some(data) = &cli.data {
        cfg.dataset.path = data.to_string_lossy().into_owned();
    }
    if cfg.dataset.path.is_empty() {
        return Err(usage_error(
            clap::error::ErrorKind::MissingRequiredArgument,
            "no dataset: pass --data or set `path` in [dataset]",
        ));
    }
    let g = load_hin(Path::new(&cfg.dataset.path))?;
    Ok((cfg, g))
}

/// Reads `node_id<TAB>class_id` lines for nodes of type `target`.
fn read_labels(g: &HeteroGraph, target: usize, path: &Path) -> Result<Vec<Option<usize>>, Failure> {
    let text = std::fs::read_to_string(path)?;
    let mut labels = vec![None; g.node_count(target)];
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let bad = |message: String| gchgnn::hin::GraphError::Parse {
            file: path.display().to_string(),
            line: i + 1,
            message,
        };
        let (node, class) = line.split_once('\t').ok_or_else(|| bad("expected node_id<TAB>class_id".into()))?;
        let node: usize = node.trim().parse().map_err(|e| bad(format!("node id: {e}")))?;
        let class: usize = class.trim().parse().map_err(|e| bad(format!("class id: {e}")))?;
        let (ty, local) = g.locate(node)?;
        if ty != target {
            return Err(bad(format!("node {node} is not a `{}` node", g.type_name(target))).into());
        }
        labels[local] = Some(class);
    }
    Ok(labels)
}

#[cfg(test)]
mod tests;
