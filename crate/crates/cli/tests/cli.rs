use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn waydcm(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_waydcm"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = waydcm(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const TOY: &str = r#"
seed = 3
[generator]
n_scenes = 40
pilot_scenes = 100
[model]
embed_dim = 8
enc_hidden = 8
att_dim = 8
dec_hidden = 8
goal_embed = 8
[train]
epochs = 2
"#;

fn setup(config: &str) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), config).unwrap();
    let path = dir.path().to_path_buf();
    (dir, path)
}

/// CSV body without the provenance comment line.
fn csv_rows(path: &Path) -> Vec<String> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# waydcm "));
    lines.map(str::to_string).collect()
}

#[test]
fn generate_writes_corpus_and_summary() {
    let (_t, d) = setup(TOY);
    let out = ok(&d, &["generate", "--config", "run.toml", "--out", "gen"]);
    let corpus = fs::read_to_string(d.join("gen/corpus.jsonl")).unwrap();
    assert_eq!(corpus.lines().count(), 40);
    assert!(d.join("gen/corpus.jsonl.meta.json").exists());
    let hist = out.lines().find(|l| l.starts_with("label histogram:")).unwrap();
    let total: usize = hist
        .trim_start_matches("label histogram:")
        .split_whitespace()
        .map(|c| c.split(':').nth(1).unwrap().parse::<usize>().unwrap())
        .sum();
    assert_eq!(total, 40);
    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("gen/corpus.jsonl.meta.json")).unwrap()).unwrap();
    assert_eq!(meta["seed"], 3);
    assert_eq!(meta["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn empty_corpus_is_fine() {
    let (_t, d) = setup("[generator]\nn_scenes = 0\npilot_scenes = 50\n");
    ok(&d, &["generate", "--config", "run.toml", "--out", "gen"]);
    assert_eq!(fs::read(d.join("gen/corpus.jsonl")).unwrap().len(), 0);
}

#[test]
fn seed_flag_overrides_the_config() {
    let (_t, d) = setup(TOY);
    ok(&d, &["generate", "--config", "run.toml", "--out", "a"]);
    ok(&d, &["generate", "--config", "run.toml", "--out", "b", "--seed", "4"]);
    ok(&d, &["generate", "--config", "run.toml", "--out", "c", "--seed", "3"]);
    let read = |p: &str| fs::read(d.join(p).join("corpus.jsonl")).unwrap();
    assert_ne!(read("a"), read("b"));
    assert_eq!(read("a"), read("c"));
}

#[test]
fn fit_dcm_reports_the_variant_columns() {
    let (_t, d) = setup(TOY);
    ok(&d, &["generate", "--config", "run.toml", "--out", "gen"]);
    ok(&d, &["fit-dcm", "--config", "run.toml", "--scenes", "gen/corpus.jsonl", "--out", "f1", "--variant", "TrajDCM"]);
    let rows = csv_rows(&d.join("f1/beta_table.csv"));
    assert_eq!(rows.len(), 2);
    let cells: Vec<&str> = rows[1].split(',').collect();
    assert_eq!(cells[0], "TrajDCM");
    assert_eq!(cells[1..6].iter().filter(|c| **c != "-").count(), 3);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("f1/fit_TrajDCM.json")).unwrap()).unwrap();
    assert_eq!(report["features"].as_array().unwrap().len(), 3);
    assert_eq!(report["seed"], 3);

    ok(&d, &["fit-dcm", "--config", "run.toml", "--scenes", "gen/corpus.jsonl", "--out", "f2", "--variant", "TrajDCM"]);
    assert_eq!(
        fs::read(d.join("f1/fit_TrajDCM.json")).unwrap(),
        fs::read(d.join("f2/fit_TrajDCM.json")).unwrap()
    );
}

#[test]
fn fit_dcm_on_default_corpus_gives_negative_coefficients() {
    let (_t, d) = setup("");
    ok(&d, &["generate", "--out", "gen"]);
    ok(&d, &["fit-dcm", "--scenes", "gen/corpus.jsonl", "--out", "fit", "--variant", "WayDCM2"]);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("fit/fit_WayDCM2.json")).unwrap()).unwrap();
    let beta = report["beta"].as_object().unwrap();
    assert_eq!(beta.len(), 5);
    assert!(beta.values().all(|b| b.as_f64().unwrap() < 0.0), "{beta:?}");
}

#[test]
fn scenes_without_futures_cannot_be_fitted() {
    let (_t, d) = setup(TOY);
    ok(&d, &["generate", "--config", "run.toml", "--out", "gen"]);
    let text = fs::read_to_string(d.join("gen/corpus.jsonl")).unwrap();
    let stripped: Vec<String> = text
        .lines()
        .map(|l| {
            let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
            v.as_object_mut().unwrap().remove("future");
            v.to_string()
        })
        .collect();
    fs::write(d.join("bare.jsonl"), stripped.join("\n") + "\n").unwrap();
    let out = waydcm(&d, &["fit-dcm", "--config", "run.toml", "--scenes", "bare.jsonl", "--out", "f"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_is_reproducible_and_eval_reads_the_checkpoint() {
    let (_t, d) = setup(TOY);
    ok(&d, &["generate", "--config", "run.toml", "--out", "gen"]);
    for out in ["t1", "t2"] {
        ok(&d, &["train", "--config", "run.toml", "--scenes", "gen/corpus.jsonl", "--out", out, "--variant", "WayDCM1"]);
    }
    for f in ["model.json", "model.bin", "train_log.csv"] {
        assert_eq!(fs::read(d.join("t1").join(f)).unwrap(), fs::read(d.join("t2").join(f)).unwrap(), "{f}");
    }
    let log = csv_rows(&d.join("t1/train_log.csv"));
    assert_eq!(log[0], "epoch,l_reg,l_score,l_cls,total,val_total");
    assert_eq!(log.len(), 3);

    ok(&d, &["eval", "--config", "run.toml", "--scenes", "gen/corpus.jsonl", "--checkpoint", "t1/model", "--out", "ev"]);
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("ev/metrics.json")).unwrap()).unwrap();
    assert_eq!(m["variant"], "WayDCM1");
    assert_eq!(m["metrics"]["scenes"], 40);
    assert!(m["metrics"]["min_fde_6"].as_f64().unwrap() <= m["metrics"]["min_fde_1"].as_f64().unwrap());
}

#[test]
fn checkpoint_mismatch_names_the_parameter() {
    let (_t, d) = setup(TOY);
    ok(&d, &["generate", "--config", "run.toml", "--out", "gen"]);
    ok(&d, &["train", "--config", "run.toml", "--scenes", "gen/corpus.jsonl", "--out", "t"]);
    let manifest = fs::read_to_string(d.join("t/model.json")).unwrap();
    fs::write(d.join("t/model.json"), manifest.replace("\"zhead.state_w\"", "\"zhead.other_w\"")).unwrap();
    let out = waydcm(&d, &["eval", "--config", "run.toml", "--scenes", "gen/corpus.jsonl", "--checkpoint", "t/model", "--out", "ev"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("zhead.state_w"));
}

#[test]
fn compare_writes_four_rows() {
    let (_t, d) = setup(TOY);
    ok(&d, &["generate", "--config", "run.toml", "--out", "gen"]);
    ok(&d, &["compare", "--config", "run.toml", "--scenes", "gen/corpus.jsonl", "--out", "cmp"]);
    let rows = csv_rows(&d.join("cmp/metrics.csv"));
    assert_eq!(rows.len(), 5);
    let header: Vec<&str> = rows[0].split(',').collect();
    let lstm: Vec<&str> = rows.iter().find(|r| r.starts_with("LSTM,")).unwrap().split(',').collect();
    for (h, v) in header.iter().zip(&lstm) {
        if h.starts_with("beta_") {
            assert!(v.is_empty(), "{h} = {v}");
        }
    }
    let way2: Vec<&str> = rows.iter().find(|r| r.starts_with("WayDCM2,")).unwrap().split(',').collect();
    assert!(header.iter().zip(&way2).filter(|(h, _)| h.starts_with("beta_")).all(|(_, v)| !v.is_empty()));
    assert!(d.join("cmp/runtime.json").exists());
    assert!(d.join("cmp/WayDCM2.bin").exists());
}

#[test]
fn eval_after_overfitting_a_toy_corpus() {
    let (_t, d) = setup(
        r#"
seed = 1
[generator]
n_scenes = 4
pilot_scenes = 100
noise_sigma = 0.0
waypoint_bearing = 0.3
[pipeline]
t_f = 10
[model]
embed_dim = 16
enc_hidden = 16
att_dim = 16
dec_hidden = 16
goal_embed = 16
[train]
epochs = 800
batch_size = 1
val_fraction = 0.0
[train.adam]
learning_rate = 0.003
"#,
    );
    ok(&d, &["generate", "--config", "run.toml", "--out", "gen"]);
    ok(&d, &["train", "--config", "run.toml", "--scenes", "gen/corpus.jsonl", "--out", "t"]);
    ok(&d, &["eval", "--config", "run.toml", "--scenes", "gen/corpus.jsonl", "--checkpoint", "t/model", "--out", "ev"]);
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("ev/metrics.json")).unwrap()).unwrap();
    let ade6 = m["metrics"]["min_ade_6"].as_f64().unwrap();
    assert!(ade6 < 0.1, "minADE_6 = {ade6}");
}

#[test]
fn inspect_dumps_a_consistent_table() {
    let (_t, d) = setup(TOY);
    ok(&d, &["generate", "--config", "run.toml", "--out", "gen"]);
    // Append a copy of the first scene without neighbors.
    let text = fs::read_to_string(d.join("gen/corpus.jsonl")).unwrap();
    let mut alone: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    alone["id"] = "alone".into();
    alone["neighbors"] = serde_json::json!([]);
    fs::write(d.join("scenes.jsonl"), format!("{text}{alone}\n")).unwrap();
    ok(&d, &["train", "--config", "run.toml", "--scenes", "gen/corpus.jsonl", "--out", "t"]);

    for id in ["syn-000000", "alone"] {
        let stdout = ok(
            &d,
            &["inspect", "--config", "run.toml", "--scenes", "scenes.jsonl", "--checkpoint", "t/model", "--scene-id", id, "--out", "ins"],
        );
        assert!(stdout.contains(id));
        let rows = csv_rows(&d.join(format!("ins/inspect_{id}.csv")));
        let header: Vec<&str> = rows[0].split(',').collect();
        let col = |name: &str| header.iter().position(|h| *h == name).unwrap();
        let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("t/model.json")).unwrap()).unwrap();
        let beta: Vec<f64> = ["dir", "occ", "coll", "dangle", "ddist"]
            .iter()
            .map(|f| manifest["beta"][format!("beta_{f}")].as_f64().unwrap())
            .collect();
        let mut p_sum = 0.0;
        let mut decoded = 0;
        for r in &rows[1..] {
            let c: Vec<&str> = r.split(',').collect();
            let num = |name: &str| c[col(name)].parse::<f64>().unwrap();
            p_sum += num("p");
            let u: f64 = ["dir", "occ", "coll", "dangle", "ddist"]
                .iter()
                .zip(&beta)
                .map(|(f, b)| b * num(&format!("std_{f}")))
                .sum();
            assert!((u - num("u")).abs() < 1e-9 * u.abs().max(1.0));
            assert!((num("u") + num("z") - num("s")).abs() < 1e-9 * num("s").abs().max(1.0));
            if id == "alone" {
                assert_eq!((num("raw_occ"), num("raw_coll")), (0.0, 0.0));
            }
            decoded += usize::from(!c[col("decoded_rank")].is_empty());
        }
        assert!((p_sum - 1.0).abs() < 1e-9);
        assert_eq!(decoded, 6);
    }
    let out = waydcm(
        &d,
        &["inspect", "--config", "run.toml", "--scenes", "scenes.jsonl", "--checkpoint", "t/model", "--scene-id", "missing"],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_usage_and_config_exit_with_one() {
    let (_t, d) = setup("[train]\nbatch_size = 0\n");
    assert_eq!(waydcm(&d, &["generate", "--config", "run.toml", "--out", "g"]).status.code(), Some(1));
    fs::write(d.join("unknown.toml"), "[model]\nwidth = 3\n").unwrap();
    let out = waydcm(&d, &["generate", "--config", "unknown.toml", "--out", "g"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("width"));
    assert_eq!(waydcm(&d, &["train", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(waydcm(&d, &["fit-dcm", "--variant", "LSTM", "--scenes", "x", "--out", "o"]).status.code(), Some(1));
    assert_eq!(waydcm(&d, &["generate"]).status.code(), Some(1));
    assert_eq!(waydcm(&d, &["--help"]).status.code(), Some(0));
}

#[test]
fn unreadable_or_unwritable_paths_exit_with_two() {
    let (_t, d) = setup(TOY);
    assert_eq!(waydcm(&d, &["train", "--scenes", "missing.jsonl", "--out", "t"]).status.code(), Some(2));
    fs::write(d.join("file"), "").unwrap();
    assert_eq!(waydcm(&d, &["generate", "--config", "run.toml", "--out", "file/sub"]).status.code(), Some(2));
}

#[test]
fn thread_cap_must_be_positive() {
    let (_t, d) = setup(TOY);
    let out = Command::new(env!("CARGO_BIN_EXE_waydcm"))
        .current_dir(&d)
        .env("WAYDCM_THREADS", "0")
        .args(["generate", "--config", "run.toml", "--out", "g"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}
