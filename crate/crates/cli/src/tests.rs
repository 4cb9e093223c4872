use std::path::{Path, PathBuf};

use super::run;
use gchgnn::config::RunConfig;
use gchgnn::fmat::load_fmat;
use gchgnn::train::MetricsReport;

struct Outcome {
    code: u8,
    stdout: String,
    stderr: String,
}

/// Runs the CLI in-process. Every config used here sets `k_loc = 0`, so no
/// walk-embedding cache is written.
fn gchgnn(args: &[&str]) -> Outcome {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = run(std::iter::once("gchgnn").chain(args.iter().copied()), &mut out, &mut err);
    Outcome {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

fn ok(args: &[&str]) -> String {
    let out = gchgnn(args);
    assert_eq!(out.code, 0, "{args:?}: {}", out.stderr);
    out.stdout
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

/// Small node dataset plus a fast config pointing at it.
fn small_run(root: &Path) -> PathBuf {
    let data = root.join("data");
    ok(&[
        "generate",
        "--seed",
        "4",
        "--n-target",
        "90",
        "--n-aux",
        "30",
        "--intra",
        "0.2",
        "--inter",
        "0.01",
        "--out",
        &s(&data),
    ]);
    let config = root.join("run.conf");
    std::fs::write(&config, "[dataset]\npath = data\n[model]\nhidden = 16\n[sampling]\nk_loc = 0\n[train]\nepochs = 4\n[eval]\nlabels_per_class = 5\nrepeats = 3\nprobe_steps = 40\n").unwrap();
    config
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn generate_is_byte_identical_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        ok(&["generate", "--seed", seed, "--n-target", "60", "--n-aux", "20", "--out", &s(&out)]);
        dir_bytes(&out)
    };
    let a = run("a", "1");
    assert!(a.iter().any(|(name, _)| name == "labels.tsv"));
    assert_eq!(a, run("b", "1"));
    assert_ne!(a, run("c", "2"));
}

#[test]
fn pretrain_embed_probe_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_run(dir.path());
    let out = dir.path().join("run");
    let train = MetricsReport::from_json(&ok(&["pretrain", "--config", &s(&config), "--out", &s(&out)])).unwrap();
    assert_eq!(train.losses.len(), 4);
    assert_eq!(train.epoch_seconds.len(), 4);
    let saved = RunConfig::load(&out.join("config.conf")).unwrap();
    assert_eq!(saved.train.epochs, 4);

    let ckpt = out.join("model.ckpt");
    let fmat = dir.path().join("e.fmat");
    let tsv = dir.path().join("e.tsv");
    ok(&[
        "embed",
        "--config",
        &s(&config),
        "--checkpoint",
        &s(&ckpt),
        "--which",
        "both",
        "--out",
        &s(&fmat),
        "--tsv",
        &s(&tsv),
    ]);
    let x = load_fmat(&fmat).unwrap();
    assert_eq!(x.dim(), (90, 32));
    assert_eq!(std::fs::read_to_string(&tsv).unwrap().lines().count(), 90);

    let (config, ckpt) = (s(&config), s(&ckpt));
    let probe = |extra: &[&str]| ok(&[&["probe", "--config", &config, "--checkpoint", &ckpt], extra].concat());
    let first = probe(&[]);
    let report = MetricsReport::from_json(&first).unwrap();
    assert!(report.macro_f1_mean.unwrap() > 0.0);
    assert!(report.epoch_seconds.is_empty() && report.losses.is_empty());
    assert_eq!(first, probe(&["--threads", "3"]));
    let labels = dir.path().join("data").join("labels.tsv");
    assert_eq!(first, probe(&["--labels", &s(&labels)]));
}

#[test]
fn link_train_then_eval_agree() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("ldata");
    ok(&[
        "generate",
        "--kind",
        "link",
        "--n-users",
        "40",
        "--n-items",
        "50",
        "--n-categories",
        "5",
        "--out",
        &s(&data),
    ]);
    let config = dir.path().join("link.conf");
    std::fs::write(&config, "[model]\nhidden = 8\n[sampling]\nk_loc = 0\n[train]\nepochs = 3\n").unwrap();
    let out = dir.path().join("lrun");
    let args = ["--config", &s(&config), "--data", &s(&data)];
    let trained = MetricsReport::from_json(&ok(&[&["link-train", "--out", &s(&out)], &args[..]].concat())).unwrap();
    let ckpt = out.join("link.ckpt");
    let evaluated = MetricsReport::from_json(&ok(&[&["link-eval", "--checkpoint", &s(&ckpt)], &args[..]].concat())).unwrap();
    assert!(evaluated.recall_at_k.is_some());
    assert_eq!((trained.recall_at_k, trained.ndcg_at_k), (evaluated.recall_at_k, evaluated.ndcg_at_k));
}

#[test]
fn checks_exit_zero() {
    let grads = ok(&["gradcheck"]);
    assert!(grads.contains(" 0 failed"), "{grads}");
    let oracles: serde_json::Value = serde_json::from_str(&ok(&["selftest", "--json"])).unwrap();
    assert!(!oracles["checks"].as_array().unwrap().is_empty());
}

#[test]
fn default_config_is_a_fixed_point() {
    let text = ok(&["config", "--set", "model.mask_ratio=0.5"]);
    let cfg = RunConfig::parse(&text).unwrap();
    assert_eq!(cfg.model.mask_ratio, 0.5);
    assert_eq!(cfg.to_text().trim_end(), text.trim_end());
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["probe", "--checkpoint", &s(&dir.path().join("x"))][..],
        &["frobnicate"],
        &["generate"],
        &["--threads", "0", "selftest"],
        &["config", "--set", "nodot"],
    ] {
        assert_eq!(gchgnn(args).code, 2, "{args:?}");
    }
}

#[test]
fn runtime_errors_exit_one_with_a_parsable_line() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_run(dir.path());
    let cases: [(&[&str], &str); 4] = [
        (
            &["probe", "--config", &s(&config), "--checkpoint", &s(&dir.path().join("missing.ckpt"))],
            "tensor",
        ),
        (
            &[
                "pretrain",
                "--config",
                &s(&config),
                "--out",
                &s(&dir.path().join("x")),
                "--set",
                "model.bogus=1",
            ],
            "config",
        ),
        (
            &[
                "pretrain",
                "--config",
                &s(&config),
                "--data",
                "/nonexistent",
                "--out",
                &s(&dir.path().join("x")),
            ],
            "graph",
        ),
        (&["generate", "--inter", "0.5", "--intra", "0.1", "--out", &s(&dir.path().join("g"))], "spec"),
    ];
    for (args, kind) in cases {
        let out = gchgnn(args);
        assert_eq!(out.code, 1, "{args:?}");
        let line = out.stderr.lines().last().unwrap();
        assert!(line.starts_with(&format!("error: kind={kind} message=")), "{line}");
    }
}
