//! End-to-end tests driving the compiled binary.

use std::path::Path;
use std::process::{Command, Output};

use fgrd_core::eval::{save_embeddings, EmbeddingRecord};

fn fgrd(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fgrd"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Tiny but real training setup: 4 identities, 16x16 frames, 2 epochs.
const TINY_TRAIN: &[&str] = &[
    "--set", "num_classes=0",
    "--set", "c_backbone=16",
    "--set", "c_star=8",
    "--set", "t=2",
    "--set", "p=4",
    "--set", "k=2",
    "--set", "epochs=2",
    "--set", "warmup_epochs=1",
    "--set", "lr_decay_epochs=2",
    "--set", "input_h=16",
    "--set", "input_w=16",
    "--set", "eval_max_clips=2",
];

fn gen_data(dir: &Path) {
    let out = fgrd(
        &[
            "synth-gen", "--out", "data", "--identities", "4", "--tracklets-per-id", "2",
            "--frames", "6", "--size", "16", "--seed", "7",
        ],
        dir,
    );
    assert!(out.status.success(), "synth-gen failed: {}", stderr(&out));
}

fn train_into(dir: &Path, out_dir: &str) {
    let mut args = vec!["train", "--data", "data/manifest.jsonl", "--out", out_dir];
    args.extend_from_slice(TINY_TRAIN);
    let out = fgrd(&args, dir);
    assert!(out.status.success(), "train failed: {}", stderr(&out));
}

#[test]
fn usage_errors_exit_with_code_2() {
    let tmp = tempfile::tempdir().unwrap();
    for args in [&[][..], &["no-such-command"][..], &["eval", "--bogus-flag"][..]] {
        let out = fgrd(args, tmp.path());
        assert_eq!(out.status.code(), Some(2), "args {args:?}: {}", stderr(&out));
    }
}

#[test]
fn runtime_errors_exit_1_with_one_line() {
    let tmp = tempfile::tempdir().unwrap();
    let out = fgrd(
        &["eval", "--query", "missing_q.fgrd", "--gallery", "missing_g.fgrd"],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.starts_with("error: "), "got {err:?}");
    assert_eq!(err.trim_end().lines().count(), 1, "got {err:?}");
}

#[test]
fn bad_set_overrides_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let out = fgrd(&["param-count", "--set", "no_such_key=1"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("unknown key"));

    let out = fgrd(&["param-count", "--set", "epochs=notanumber"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("epochs"));
}

#[test]
fn param_count_reports_structure_and_projection_delta() {
    let tmp = tempfile::tempdir().unwrap();
    let out = fgrd(&["param-count", "--compare-kqv"], tmp.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("total,5629041"), "got:\n{text}");
    assert!(text.contains("kqv_delta,262400"), "got:\n{text}");
    assert!(
        text.contains("summary: 5 projection layers, 1 classifier, 2 batch-norm parameter sets"),
        "got:\n{text}"
    );
}

#[test]
fn eval_scores_stored_archives() {
    let tmp = tempfile::tempdir().unwrap();
    // Orthogonal one-hot embeddings per identity: every query's only match
    // is its own identity, so both metrics must score a perfect run.
    let record = |tid: usize, id: usize, cam: usize| {
        let mut e = vec![0.0; 4];
        e[id] = 1.0;
        EmbeddingRecord { tracklet_id: tid, identity: id, camera: cam, embedding: e }
    };
    let queries: Vec<_> = (0..4).map(|id| record(id, id, 0)).collect();
    let gallery: Vec<_> = (0..4).map(|id| record(10 + id, id, 1)).collect();
    save_embeddings(&tmp.path().join("q.fgrd"), &queries).unwrap();
    save_embeddings(&tmp.path().join("g.fgrd"), &gallery).unwrap();

    for metric in ["dot", "euclidean"] {
        let out = fgrd(
            &[
                "eval", "--query", "q.fgrd", "--gallery", "g.fgrd", "--ranks", "1,2",
                "--metric", metric, "--out", "report.csv",
            ],
            tmp.path(),
        );
        assert!(out.status.success(), "{}", stderr(&out));
        let text = stdout(&out);
        assert!(text.contains("map,1\n"), "metric {metric}: got:\n{text}");
        assert!(text.contains("rank-1,1\n"), "metric {metric}: got:\n{text}");
    }
    let report = std::fs::read_to_string(tmp.path().join("report.csv")).unwrap();
    assert!(report.starts_with("metric,value\n"));
    assert!(report.contains("evaluated,4\n"));
}

#[test]
fn pipeline_round_trip_produces_scores_and_overlays() {
    let tmp = tempfile::tempdir().unwrap();
    gen_data(tmp.path());
    train_into(tmp.path(), "run");
    assert!(tmp.path().join("run/checkpoint.fgrd").is_file());
    assert!(tmp.path().join("run/metrics.csv").is_file());

    for (manifest, archive) in [("query", "q.fgrd"), ("gallery", "g.fgrd")] {
        let out = fgrd(
            &[
                "extract", "--config", "run/config_resolved.cfg", "--checkpoint",
                "run/checkpoint.fgrd", "--data", &format!("data/{manifest}.jsonl"),
                "--out", archive,
            ],
            tmp.path(),
        );
        assert!(out.status.success(), "extract failed: {}", stderr(&out));
    }

    let out = fgrd(
        &["eval", "--query", "q.fgrd", "--gallery", "g.fgrd", "--ranks", "1,2"],
        tmp.path(),
    );
    assert!(out.status.success(), "eval failed: {}", stderr(&out));
    let text = stdout(&out);
    let map_line = text.lines().find(|l| l.starts_with("map,")).expect("map row");
    let map: f64 = map_line.trim_start_matches("map,").parse().unwrap();
    assert!((0.0..=1.0).contains(&map), "mAP out of range: {map}");
    assert!(text.contains("evaluated,4\n"), "got:\n{text}");

    let out = fgrd(
        &[
            "eval", "--query", "q.fgrd", "--gallery", "g.fgrd", "--ranks", "1",
            "--rerank", "--set", "rerank_k1=3", "--set", "rerank_k2=2",
        ],
        tmp.path(),
    );
    assert!(out.status.success(), "rerank eval failed: {}", stderr(&out));
    assert!(stdout(&out).contains("map,"));

    let out = fgrd(
        &[
            "attn-export", "--config", "run/config_resolved.cfg", "--checkpoint",
            "run/checkpoint.fgrd", "--data", "data/manifest.jsonl", "--tracklet", "0",
            "--out", "attn",
        ],
        tmp.path(),
    );
    assert!(out.status.success(), "attn-export failed: {}", stderr(&out));
    // t=2 in the tiny config, so one overlay per clip frame.
    for i in 0..2 {
        let ppm = tmp.path().join(format!("attn/attn_0000_{i:02}.ppm"));
        let bytes = std::fs::read(&ppm).unwrap();
        assert!(bytes.starts_with(b"P6\n"), "{} is not a PPM", ppm.display());
    }
}

#[test]
fn same_seed_training_is_bit_identical() {
    let tmp = tempfile::tempdir().unwrap();
    gen_data(tmp.path());
    train_into(tmp.path(), "run_a");
    train_into(tmp.path(), "run_b");
    let a = std::fs::read(tmp.path().join("run_a/checkpoint.fgrd")).unwrap();
    let b = std::fs::read(tmp.path().join("run_b/checkpoint.fgrd")).unwrap();
    assert_eq!(a, b, "same-seed checkpoints differ");
    let ma = std::fs::read(tmp.path().join("run_a/metrics.csv")).unwrap();
    let mb = std::fs::read(tmp.path().join("run_b/metrics.csv")).unwrap();
    assert_eq!(ma, mb, "same-seed metrics differ");
}
