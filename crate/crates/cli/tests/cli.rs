use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn ordbias(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ordbias"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn ok(cwd: &Path, args: &[&str]) {
    let out = ordbias(cwd, args);
    assert!(
        out.status.success(),
        "ordbias {} failed: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn synth(cwd: &Path, out: &str, videos: &str) {
    ok(cwd, &["synth", "--out", out, "--videos", videos, "--seed", "1"]);
}

fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn write_tiny(root: &Path, with_background: bool) {
    fs::create_dir_all(root.join("groundTruth")).unwrap();
    fs::create_dir_all(root.join("splits")).unwrap();
    let mapping = if with_background { "0 background\n1 cut\n2 mix\n" } else { "0 cut\n1 mix\n2 pour\n" };
    fs::write(root.join("mapping.txt"), mapping).unwrap();
    fs::write(root.join("groundTruth/v1.txt"), "cut\ncut\nmix\nmix\n").unwrap();
    fs::write(root.join("groundTruth/v2.txt"), "mix\ncut\ncut\n").unwrap();
    fs::write(root.join("splits/train.split1.bundle"), "v1.txt\n").unwrap();
    fs::write(root.join("splits/test.split1.bundle"), "v2.txt\n").unwrap();
}

#[test]
fn empty_root_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir(dir.path().join("empty")).unwrap();
    let out = ordbias(dir.path(), &["audit", "--root", "empty", "--out", "a"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("no label files found"), "{}", stderr(&out));
}

#[test]
fn unknown_fold_fails() {
    let dir = tempfile::tempdir().unwrap();
    write_tiny(&dir.path().join("d"), true);
    let out = ordbias(dir.path(), &["baseline", "fit", "ordinal", "--root", "d", "--fold", "split9", "--out", "m"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("split9"), "{}", stderr(&out));
}

#[test]
fn prediction_length_mismatch_fails() {
    let dir = tempfile::tempdir().unwrap();
    write_tiny(&dir.path().join("d"), true);
    fs::create_dir(dir.path().join("p")).unwrap();
    fs::write(dir.path().join("p/v1.txt"), "cut\ncut\n").unwrap();
    let out = ordbias(dir.path(), &["eval", "--root", "d", "--pred", "p", "--out", "e"]);
    assert!(!out.status.success());
}

#[test]
fn masking_needs_a_background_label() {
    let dir = tempfile::tempdir().unwrap();
    write_tiny(&dir.path().join("d"), false);
    let out = ordbias(dir.path(), &["manipulate", "mask-pair", "--root", "d", "--out", "m", "--pair", "cut,mix"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("50Salads"), "{}", stderr(&out));
}

#[test]
fn output_may_not_overwrite_input() {
    let dir = tempfile::tempdir().unwrap();
    write_tiny(&dir.path().join("d"), true);
    let out = ordbias(dir.path(), &["manipulate", "shuffle", "--root", "d", "--out", "d"]);
    assert!(!out.status.success());
    assert!(dir.path().join("d/groundTruth/v1.txt").exists());
}

#[test]
fn ground_truth_as_prediction_scores_100() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "data", "60");
    let report_dir = dir.path().join("e");
    ok(dir.path(), &["eval", "--root", "data", "--pred", "data/groundTruth", "--out", "e", "--folds", "all"]);
    let report = json(report_dir.join("report.json"));
    for key in ["accuracy", "edit", "f1@10", "f1@25", "f1@50"] {
        assert_eq!(report["aggregate"]["aggregate"][key].as_f64(), Some(100.0), "{key}: {report}");
    }
}

#[test]
fn ordinal_baseline_echoes_masked_pair() {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();
    synth(cwd, "data", "200");
    ok(cwd, &["manipulate", "mask-pair", "--root", "data", "--out", "masked", "--pair", "A,B"]);
    ok(cwd, &["baseline", "fit", "ordinal", "--root", "data", "--fold", "split1", "--out", "model"]);
    ok(cwd, &[
        "baseline", "predict", "ordinal", "--root", "masked", "--model", "model/model.json", "--fold", "split1",
        "--conditioning", "ground-truth", "--out", "pred",
    ]);
    ok(cwd, &[
        "eval", "--root", "masked", "--pred", "pred", "--fold", "split1", "--records", "masked/records.json", "--out",
        "eval",
    ]);
    let report = json(cwd.join("eval/report.json"));
    let fraction = report["masked_region"]["original_label_fraction"].as_f64().unwrap();
    assert!(fraction >= 0.8, "original-label fraction {fraction}");
}

#[test]
fn ordinal_baseline_tracks_a_deterministic_chain() {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();
    fs::write(
        cwd.join("chain.toml"),
        "[synth]\nlabels = 4\nvideos = 200\nfeature_dim = 2\n\
         dominant_pairs = [\n\
           { prev = \"A\", next = \"B\", follow_prob = 0.95 },\n\
           { prev = \"B\", next = \"C\", follow_prob = 0.95 },\n\
           { prev = \"C\", next = \"A\", follow_prob = 0.95 },\n]\n",
    )
    .unwrap();
    ok(cwd, &["synth", "--config", "chain.toml", "--out", "data"]);
    ok(cwd, &["baseline", "fit", "ordinal", "--root", "data", "--fold", "split1", "--out", "model"]);
    ok(cwd, &[
        "baseline", "predict", "ordinal", "--root", "data", "--model", "model/model.json", "--fold", "split1",
        "--first-label", "ground-truth", "--out", "pred",
    ]);
    ok(cwd, &["eval", "--root", "data", "--pred", "pred", "--fold", "split1", "--out", "eval"]);
    let accuracy = json(cwd.join("eval/report.json"))["aggregate"]["aggregate"]["accuracy"].as_f64().unwrap();
    assert!(accuracy >= 70.0, "accuracy {accuracy}");
}

#[test]
fn audit_recovers_planted_pair() {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();
    ok(cwd, &["synth", "--out", "data", "--videos", "1000", "--seed", "1"]);
    ok(cwd, &["audit", "--root", "data", "--out", "audit"]);
    let audit = json(cwd.join("audit/audit.json"));
    let pairs = audit["dominant_pairs"].as_array().unwrap();
    let ab = pairs
        .iter()
        .find(|p| p["prev"] == "A" && p["next"] == "B")
        .unwrap_or_else(|| panic!("A->B not listed: {audit}"));
    let share = ab["follow_share"].as_f64().unwrap();
    assert!((share - 0.95).abs() <= 0.02, "follow share {share}");
}

#[test]
fn combine_stacks_variants() {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();
    synth(cwd, "data", "60");
    ok(cwd, &["manipulate", "mask-pair", "--root", "data", "--out", "masked", "--pair", "A,B"]);
    ok(cwd, &["manipulate", "shuffle", "--root", "data", "--out", "shuffled", "--seed", "3"]);
    ok(cwd, &[
        "manipulate", "combine", "--root", "data", "--root", "masked", "--root", "shuffled", "--out", "combined",
    ]);
    let count = |d: &str| fs::read_dir(cwd.join(d).join("groundTruth")).unwrap().count();
    assert_eq!(count("combined"), 3 * count("data"));
}

#[test]
fn masking_moves_pair_mass_to_background() {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();
    synth(cwd, "data", "60");
    ok(cwd, &["manipulate", "mask-pair", "--root", "data", "--out", "masked", "--pair", "A,B"]);
    ok(cwd, &["audit", "--root", "data", "--out", "a0"]);
    ok(cwd, &["audit", "--root", "masked", "--out", "a1"]);
    let cell = |dir: &str, col: &str| -> u64 {
        let text = fs::read_to_string(cwd.join(dir).join("heatmap.csv")).unwrap();
        let mut lines = text.lines();
        let header: Vec<&str> = lines.next().unwrap().split(',').collect();
        let j = header.iter().position(|h| *h == col).unwrap();
        let row = lines.find(|l| l.starts_with("A,")).unwrap();
        row.split(',').nth(j).unwrap().parse().unwrap()
    };
    assert!(cell("a0", "B") > 0);
    assert_eq!(cell("a1", "B"), 0);
    assert_eq!(cell("a1", "background"), cell("a0", "background") + cell("a0", "B"));
}

#[test]
fn seeded_shuffle_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();
    synth(cwd, "data", "60");
    ok(cwd, &["manipulate", "shuffle", "--root", "data", "--out", "s1", "--seed", "7"]);
    ok(cwd, &["manipulate", "shuffle", "--root", "data", "--out", "s2", "--seed", "7", "--threads", "3"]);
    ok(cwd, &["manipulate", "shuffle", "--root", "data", "--out", "s3", "--seed", "8"]);
    assert_eq!(tree(&cwd.join("s1")), tree(&cwd.join("s2")));
    assert_ne!(tree(&cwd.join("s1")), tree(&cwd.join("s3")));
}

#[test]
fn bad_flags_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(ordbias(dir.path(), &["audit", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(ordbias(dir.path(), &["--help"]).status.code(), Some(0));
}
