//! End-to-end exercises of the `fieldtune` binary: exit codes, config
//! rejection, artifact layout, determinism, and a small
//! synth -> pretrain -> finetune -> eval chain.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use tempfile::TempDir;

fn fieldtune(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fieldtune"))
        .args(args)
        .env_remove("FIELDTUNE_SEED")
        .env_remove("FIELDTUNE_OUT")
        .env_remove("FIELDTUNE_JOBS")
        .output()
        .expect("binary runs")
}

fn read(path: &Path) -> Vec<u8> {
    fs::read(path).unwrap_or_else(|e| panic!("cannot read {}: {e}", path.display()))
}

fn text(path: &Path) -> String {
    String::from_utf8(read(path)).expect("utf-8 artifact")
}

#[test]
fn help_exits_cleanly() {
    let out = fieldtune(&["--help"]);
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("FIELDTUNE_SEED"), "help documents the env override prefix");
    assert!(stdout.contains("sweep-acquisition"), "help lists the subcommands");
}

#[test]
fn unknown_config_key_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[synth]\nframes = 64\nfraems = 64\n").unwrap();
    let out = fieldtune(&[
        "synth",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("fraems"), "error names the offending key: {stderr}");
}

#[test]
fn missing_section_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("empty.toml");
    fs::write(&cfg, "").unwrap();
    let out = fieldtune(&[
        "pretrain",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("pretrain"), "error names the missing section: {stderr}");
}

#[test]
fn missing_out_is_a_config_error() {
    let out = fieldtune(&["cost"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_checkpoint_is_an_ingestion_error() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("eval.toml");
    fs::write(
        &cfg,
        format!(
            "[eval]\ncheckpoint = \"{0}/nope.net\"\nsequence = \"{0}/nope\"\n",
            dir.path().display()
        ),
    )
    .unwrap();
    let out = fieldtune(&[
        "eval",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn cost_runs_without_a_config_and_reruns_identically() {
    let dir = TempDir::new().unwrap();
    let out1 = dir.path().join("one");
    let out2 = dir.path().join("two");
    for out in [&out1, &out2] {
        let run = fieldtune(&["cost", "--out", out.to_str().unwrap()]);
        assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    }
    let csv = text(&out1.join("cost.csv"));
    // Full-model training step on the reference architecture, in MMAC.
    assert!(csv.contains("50.59"), "cost table holds the full-update step cost:\n{csv}");
    assert_eq!(read(&out1.join("cost.csv")), read(&out2.join("cost.csv")));
    assert_eq!(read(&out1.join("cost.txt")), read(&out2.join("cost.txt")));
    assert_eq!(read(&out1.join("manifest.toml")), read(&out2.join("manifest.toml")));
}

#[test]
fn synth_is_deterministic_across_runs() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("synth.toml");
    fs::write(&cfg, "[synth]\nframes = 48\nsubjects = [\"s1\"]\ndomains = [\"a\"]\n").unwrap();
    let out1 = dir.path().join("one");
    let out2 = dir.path().join("two");
    for out in [&out1, &out2] {
        let run = fieldtune(&[
            "synth",
            "--config",
            cfg.to_str().unwrap(),
            "--seed",
            "7",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    }
    for rel in ["synth.csv", "data/a/s1/index.txt", "data/a/s1/frame_00000.pgm"] {
        assert_eq!(
            read(&out1.join(rel)),
            read(&out2.join(rel)),
            "{rel} differs between identically seeded runs"
        );
    }
}

#[test]
fn chain_from_synthesis_to_evaluation() {
    let dir = TempDir::new().unwrap();
    let data_out = dir.path().join("synth");
    let pre_out = dir.path().join("pretrain");
    let ft_out = dir.path().join("finetune");
    let eval_out = dir.path().join("eval");

    let synth_cfg = dir.path().join("synth.toml");
    fs::write(
        &synth_cfg,
        "[synth]\nframes = 384\nsubjects = [\"s1\"]\ndomains = [\"a\"]\n",
    )
    .unwrap();
    let run = fieldtune(&[
        "synth",
        "--config",
        synth_cfg.to_str().unwrap(),
        "--out",
        data_out.to_str().unwrap(),
    ]);
    assert!(run.status.success(), "synth: {}", String::from_utf8_lossy(&run.stderr));
    let seq_dir = data_out.join("data/a/s1");

    let pre_cfg = dir.path().join("pretrain.toml");
    fs::write(
        &pre_cfg,
        format!("[pretrain]\ndata = \"{}\"\nepochs = 2\n", data_out.join("data/a").display()),
    )
    .unwrap();
    let run = fieldtune(&[
        "pretrain",
        "--config",
        pre_cfg.to_str().unwrap(),
        "--out",
        pre_out.to_str().unwrap(),
    ]);
    assert!(run.status.success(), "pretrain: {}", String::from_utf8_lossy(&run.stderr));
    assert!(pre_out.join("model.net").is_file());
    let curve = text(&pre_out.join("pretrain_curve.csv"));
    assert_eq!(curve.lines().count(), 3, "header plus one row per epoch:\n{curve}");
    assert!(text(&pre_out.join("pretrain_curve.svg")).contains("</svg>"));

    let ft_cfg = dir.path().join("finetune.toml");
    fs::write(
        &ft_cfg,
        format!(
            "[finetune]\ncheckpoint = \"{}\"\nsequence = \"{}\"\n\
             duration_s = 24.0\nrate_hz = 4.0\nepochs = 1\n",
            pre_out.join("model.net").display(),
            seq_dir.display()
        ),
    )
    .unwrap();
    let run = fieldtune(&[
        "finetune",
        "--config",
        ft_cfg.to_str().unwrap(),
        "--out",
        ft_out.to_str().unwrap(),
    ]);
    assert!(run.status.success(), "finetune: {}", String::from_utf8_lossy(&run.stderr));
    assert!(ft_out.join("model.net").is_file());
    let metrics = text(&ft_out.join("metrics.csv"));
    assert!(metrics.contains("baseline,"), "metrics hold a baseline row:\n{metrics}");
    assert!(metrics.contains("tuned,"), "metrics hold a tuned row:\n{metrics}");
    let epochs = text(&ft_out.join("finetune_epochs.csv"));
    assert_eq!(epochs.lines().count(), 2, "header plus one epoch:\n{epochs}");

    let eval_cfg = dir.path().join("eval.toml");
    fs::write(
        &eval_cfg,
        format!(
            "[eval]\ncheckpoint = \"{}\"\nsequence = \"{}\"\n",
            ft_out.join("model.net").display(),
            seq_dir.display()
        ),
    )
    .unwrap();
    let run = fieldtune(&[
        "eval",
        "--config",
        eval_cfg.to_str().unwrap(),
        "--out",
        eval_out.to_str().unwrap(),
    ]);
    assert!(run.status.success(), "eval: {}", String::from_utf8_lossy(&run.stderr));
    let metrics = text(&eval_out.join("metrics.csv"));
    let mae: f64 = metrics
        .lines()
        .nth(1)
        .and_then(|row| row.split(',').nth(2))
        .and_then(|cell| cell.parse().ok())
        .expect("model row holds a numeric MAE");
    assert!(mae.is_finite() && mae > 0.0);

    let manifest = text(&eval_out.join("manifest.toml"));
    assert!(manifest.contains("tool = \"fieldtune\""));
    assert!(manifest.contains("command = \"eval\""));
    assert!(manifest.contains("config_sha256 = \""));
    assert!(manifest.contains("\"metrics.csv\""));
}
