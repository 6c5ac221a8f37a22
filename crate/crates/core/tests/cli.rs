use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn dkps(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dkps"))
        .args(args)
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A small synthetic dataset written by the `synth` subcommand.
fn synth_dataset() -> (TempDir, PathBuf) {
    let tmp = tempfile::tempdir().unwrap();
    let spec = tmp.path().join("spec.toml");
    fs::write(
        &spec,
        "schema_version = 1\n[population]\nn_models = 36\nn_queries = 24\nembedding_dim = 6\nn_families = 6\nseed = 3\n",
    )
    .unwrap();
    let data = tmp.path().join("data");
    let out = dkps(&["synth", "--spec", s(&spec), "--out", s(&data)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    (tmp, data)
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn synth_output_validates() {
    let (_tmp, data) = synth_dataset();
    for f in [
        "models.csv",
        "queries.csv",
        "embeddings.jsonl",
        "truth.json",
        "run_manifest.json",
    ] {
        assert!(data.join(f).is_file(), "missing {f}");
    }
    let out = dkps(&["validate", s(&data)]);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok: 36 models"));
}

#[test]
fn broken_dataset_fails_validation() {
    let (_tmp, data) = synth_dataset();
    let path = data.join("embeddings.jsonl");
    let text = fs::read_to_string(&path).unwrap();
    let kept: Vec<&str> = text.lines().skip(1).collect();
    fs::write(&path, kept.join("\n") + "\n").unwrap();
    let out = dkps(&["validate", s(&data)]);
    assert_eq!(code(&out), 1);

    fs::write(&path, "{not json\n").unwrap();
    assert_eq!(code(&dkps(&["validate", s(&data)])), 1);
}

#[test]
fn full_budget_sample_score_is_the_true_score() {
    let (_tmp, data) = synth_dataset();
    let models = fs::read_to_string(data.join("models.csv")).unwrap();
    let row: Vec<&str> = models.lines().nth(8).unwrap().split(',').collect();
    let out = dkps(&[
        "predict",
        s(&data),
        "--target",
        row[0],
        "--method",
        "sample_score",
        "--m",
        "24",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    let fields: Vec<&str> = stdout.lines().nth(1).unwrap().split(',').collect();
    let predicted: f64 = fields[3].parse().unwrap();
    let truth: f64 = row[2].parse().unwrap();
    assert!((predicted - truth).abs() < 1e-12, "{predicted} vs {truth}");
}

#[test]
fn predict_accepts_query_files_and_knn_k() {
    let (tmp, data) = synth_dataset();
    let queries = write(tmp.path(), "q.txt", "# chosen\nq0001\nq0005\n\nq0007\n");
    let out = dkps(&[
        "predict",
        s(&data),
        "--target",
        "m0002",
        "--method",
        "dkps_knn,ensemble",
        "--k",
        "3",
        "--queries",
        s(&queries),
        "--exclude-family",
        "--alpha",
        "0.5",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("m0002,dkps_knn3,3,"));
    assert!(stdout.contains("m0002,ensemble,3,"));
}

#[test]
fn evaluate_is_reproducible_and_replayable() {
    let (tmp, data) = synth_dataset();
    let cfg = write(
        tmp.path(),
        "eval.toml",
        "schema_version = 1\nmethods = [\"sample_score\", \"dkps_ols\", \"ensemble\"]\nm = [2, 6]\ntrials = 5\nseed = 11\n",
    );
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for out in [&a, &b] {
        let res = dkps(&[
            "evaluate",
            s(&data),
            "--config",
            s(&cfg),
            "--out",
            s(out),
            "--collections",
            "2",
        ]);
        assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    }
    for f in [
        "summary.csv",
        "report.csv",
        "deltas.csv",
        "collections.csv",
        "summary.json",
    ] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    let summary = fs::read_to_string(a.join("summary.csv")).unwrap();
    assert!(summary.starts_with("method,m=2,m=6\n"));

    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(a.join("run_manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 11);
    assert_eq!(manifest["config"]["trials"], 5);
    assert_eq!(manifest["dataset_sha256"].as_str().unwrap().len(), 64);

    let c = tmp.path().join("c");
    let res = dkps(&["replay", s(&a.join("run_manifest.json")), "--out", s(&c)]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    for f in ["summary.csv", "report.csv", "deltas.csv", "collections.csv"] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(c.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn flags_override_config_values() {
    let (tmp, data) = synth_dataset();
    let cfg = write(
        tmp.path(),
        "eval.toml",
        "schema_version = 1\nmethods = [\"sample_score\"]\nm = [2]\ntrials = 50\n",
    );
    let out = tmp.path().join("o");
    let res = dkps(&[
        "evaluate",
        s(&data),
        "--config",
        s(&cfg),
        "--out",
        s(&out),
        "--trials",
        "2",
        "--m",
        "1,3",
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(summary.starts_with("method,m=1,m=3\n"));
    assert!(!out.join("deltas.csv").exists());
}

#[test]
fn config_errors_exit_with_two() {
    let (tmp, data) = synth_dataset();
    let bad = write(tmp.path(), "bad.toml", "schema_version = 7\n");
    let out = tmp.path().join("o");
    assert_eq!(
        code(&dkps(&[
            "evaluate",
            s(&data),
            "--config",
            s(&bad),
            "--out",
            s(&out)
        ])),
        2
    );
    let missing = tmp.path().join("nope.toml");
    assert_eq!(
        code(&dkps(&[
            "evaluate",
            s(&data),
            "--config",
            s(&missing),
            "--out",
            s(&out)
        ])),
        2
    );
    assert_eq!(code(&dkps(&["validate", s(&data), "--no-such-flag"])), 2);
    assert_eq!(code(&dkps(&["frobnicate"])), 2);
    assert_eq!(code(&dkps(&["validate", s(&tmp.path().join("absent"))])), 2);
}

#[test]
fn help_documents_model_quantities() {
    let help = |cmd: &str| String::from_utf8(dkps(&[cmd, "--help"]).stdout).unwrap();
    let eval = help("evaluate");
    for needle in [
        "budgets m",
        "References per trial n",
        "dimension d",
        "weight alpha",
    ] {
        assert!(eval.contains(needle), "evaluate help lacks {needle}");
    }
    assert!(help("select-queries").contains("candidate query sets B"));
    assert!(help("predict").contains("Query budget m"));
    assert_eq!(code(&dkps(&["--help"])), 0);
}

#[test]
fn other_subcommands_write_manifests() {
    let (tmp, data) = synth_dataset();
    let t = tmp.path();

    let coords = t.join("coords.csv");
    assert_eq!(
        code(&dkps(&[
            "dkps",
            s(&data),
            "--queries",
            "6,1",
            "-d",
            "2",
            "--target",
            "m0000",
            "--out",
            s(&coords)
        ])),
        0
    );
    let text = fs::read_to_string(&coords).unwrap();
    assert!(text.starts_with("model_id,family_id,psi_1,psi_2,is_target\n"));
    assert_eq!(text.lines().count(), 37);
    assert!(t.join("coords.csv.manifest.json").is_file());

    let sel = t.join("sel");
    let res = dkps(&[
        "select-queries",
        s(&data),
        "--m",
        "3",
        "--B",
        "16",
        "--out",
        s(&sel),
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    assert_eq!(
        fs::read_to_string(sel.join("candidates.csv"))
            .unwrap()
            .lines()
            .count(),
        17
    );
    assert_eq!(
        fs::read_to_string(sel.join("selected_queries.txt"))
            .unwrap()
            .lines()
            .count(),
        3
    );

    let irt = t.join("irt");
    assert_eq!(
        code(&dkps(&[
            "irt-fit",
            s(&data),
            "--exclude-family",
            "f01",
            "--out",
            s(&irt)
        ])),
        0
    );
    assert_eq!(
        fs::read_to_string(irt.join("item_bank.csv"))
            .unwrap()
            .lines()
            .count(),
        25
    );
    assert_eq!(
        fs::read_to_string(irt.join("abilities.csv"))
            .unwrap()
            .lines()
            .count(),
        37
    );

    let grid = write(
        t,
        "grid.toml",
        "schema_version = 1\nmethods = [\"sample_score\", \"dkps_ols\"]\nm = [2]\ntrials = 3\n[grid]\ndim = [1, 2]\nn = [\"all\", 12]\n",
    );
    let sw = t.join("sweep");
    let res = dkps(&["sweep", s(&data), "--grid", s(&grid), "--out", s(&sw)]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    assert_eq!(
        fs::read_to_string(sw.join("sweep.csv"))
            .unwrap()
            .lines()
            .count(),
        1 + 4 * 2
    );

    let spec = write(
        t,
        "theory.toml",
        "schema_version = 1\n[population]\nn_models = 30\nn_queries = 20\n[concentration]\nn = [30]\nr = [1, 4]\nseeds = 2\n",
    );
    let th = t.join("theory");
    let res = dkps(&["theory", "--spec", s(&spec), "--out", s(&th)]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    assert_eq!(
        fs::read_to_string(th.join("concentration.csv"))
            .unwrap()
            .lines()
            .count(),
        3
    );
    assert!(!th.join("efficiency.csv").exists());

    for dir in [&sel, &irt, &sw, &th] {
        assert!(dir.join("run_manifest.json").is_file(), "{}", dir.display());
    }
}
