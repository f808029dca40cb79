use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
}

/// Small encoder and short runs on MUTAG.
const SMALL: &[&str] = &["--layers", "2", "--hidden", "8"];

fn gcot(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gcot"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("GCOT_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn ok(out: &Path, args: &[&str]) -> String {
    let o = gcot(out, args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

fn with<'a>(head: &[&'a str], tail: &[&'a str]) -> Vec<&'a str> {
    head.iter().chain(SMALL).chain(tail).copied().collect()
}

fn pretrained(out: &Path) {
    let mutag = fixture("mutag");
    let args = with(
        &["pretrain", "--dataset", mutag.to_str().unwrap()],
        &["--epochs", "3"],
    );
    ok(out, &args);
}

fn read(path: impl AsRef<Path>) -> String {
    fs::read_to_string(path.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", path.as_ref().display()))
}

#[test]
fn pretraining_is_deterministic_and_logs_every_epoch() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    pretrained(a.path());
    pretrained(b.path());
    let log = read(a.path().join("pretrain_log.csv"));
    assert_eq!(log.lines().count(), 1 + 3);
    assert_eq!(log.lines().next(), Some("epoch,loss"));
    assert_eq!(log, read(b.path().join("pretrain_log.csv")));
    assert_eq!(
        fs::read(a.path().join("encoder.ckpt")).unwrap(),
        fs::read(b.path().join("encoder.ckpt")).unwrap()
    );
    let config: serde_json::Value =
        serde_json::from_str(&read(a.path().join("pretrain_config.json"))).unwrap();
    assert_eq!(config["pretrain"]["epochs"], 3);
    assert_eq!(config["hidden_dim"], 8);
}

#[test]
fn missing_meta_is_named() {
    let out = tempfile::tempdir().unwrap();
    let empty = tempfile::tempdir().unwrap();
    let o = gcot(
        out.path(),
        &["pretrain", "--dataset", empty.path().to_str().unwrap()],
    );
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("meta.json"));
}

#[test]
fn bad_configuration_exits_with_2() {
    let out = tempfile::tempdir().unwrap();
    let file = out.path().join("c.json");
    fs::write(&file, r#"{"num_task": 3}"#).unwrap();
    let o = gcot(out.path(), &["bench", "--config", file.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let mutag = fixture("mutag");
    let o = gcot(
        out.path(),
        &[
            "bench",
            "--dataset",
            mutag.to_str().unwrap(),
            "--steps",
            "0",
        ],
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn flags_override_the_file_which_overrides_defaults() {
    let out = tempfile::tempdir().unwrap();
    let file = out.path().join("c.json");
    let mutag = fixture("mutag");
    fs::write(
        &file,
        format!(
            r#"{{"dataset": {:?}, "num_tasks": 7, "num_seeds": 2}}"#,
            mutag.to_str().unwrap()
        ),
    )
    .unwrap();
    let printed = |extra: &[&str]| -> serde_json::Value {
        let mut args = vec![
            "bench",
            "--print-config",
            "--config",
            file.to_str().unwrap(),
        ];
        args.extend_from_slice(extra);
        serde_json::from_str(&ok(out.path(), &args)).unwrap()
    };
    let c = printed(&[]);
    assert_eq!(
        (c["num_tasks"].as_u64(), c["num_seeds"].as_u64()),
        (Some(7), Some(2))
    );
    assert_eq!(c["tune"]["epochs"], 100);
    assert_eq!(c["task"], "graph");
    assert_eq!(
        (c["steps"].as_u64(), c["cond_hidden"].as_u64()),
        (Some(3), Some(8))
    );
    let c = printed(&["--num-tasks", "9", "--steps", "2"]);
    assert_eq!(
        (c["num_tasks"].as_u64(), c["steps"].as_u64()),
        (Some(9), Some(2))
    );
    assert_eq!(c["num_seeds"], 2);
    assert!(!out.path().join("bench_config.json").exists());
}

#[test]
fn bench_outputs_do_not_depend_on_workers() {
    let out = tempfile::tempdir().unwrap();
    pretrained(out.path());
    let mutag = fixture("mutag");
    let bench = |jobs: &str| {
        let args = with(
            &["bench", "--dataset", mutag.to_str().unwrap()],
            &[
                "--epochs",
                "3",
                "--num-tasks",
                "3",
                "--num-seeds",
                "2",
                "--shots",
                "1,2",
                "--jobs",
                jobs,
            ],
        );
        ok(out.path(), &args);
        read(out.path().join("results.csv"))
    };
    let one = bench("1");
    assert_eq!(one.lines().count(), 1 + 2 * 3 * 2);
    assert!(one
        .lines()
        .nth(1)
        .unwrap()
        .starts_with("mutag,graph,1,3,8,full,0,0,0,"));
    assert!(one
        .lines()
        .nth(7)
        .unwrap()
        .starts_with("mutag,graph,2,3,8,full,0,0,0,"));
    assert_eq!(one, bench("3"));
    let summary: serde_json::Value =
        serde_json::from_str(&read(out.path().join("summary.json"))).unwrap();
    let results = summary["results"].as_array().unwrap();
    assert_eq!(results.len(), 2);
    assert_eq!(results[0]["variant"], "full");
    assert_eq!(results[0]["runs"], 6);
    assert_eq!(summary["config"]["jobs"], 3);
}

#[test]
fn ablation_and_sweep_tables() {
    let out = tempfile::tempdir().unwrap();
    pretrained(out.path());
    let mutag = fixture("mutag");
    let short = ["--epochs", "2", "--num-tasks", "2", "--num-seeds", "1"];
    ok(
        out.path(),
        &with(&["ablate", "--dataset", mutag.to_str().unwrap()], &short),
    );
    let variants: Vec<String> = read(out.path().join("ablation.csv"))
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(5).unwrap().to_string())
        .collect();
    assert_eq!(
        variants,
        [
            "full",
            "full",
            "no_cot",
            "no_cot",
            "layer_only(1)",
            "layer_only(1)",
            "layer_only(2)",
            "layer_only(2)"
        ]
    );

    let mut args = with(&["sweep", "--dataset", mutag.to_str().unwrap()], &short);
    args.extend(["--axis", "steps", "--values", "1..4"]);
    ok(out.path(), &args);
    let sweep = read(out.path().join("sweep.csv"));
    let lines: Vec<&str> = sweep.lines().collect();
    assert_eq!(lines.len(), 5);
    assert_eq!(
        lines[0],
        "axis,value,dataset,task,shots,K,s,variant,runs,mean,std,wall_seconds"
    );
    for (i, line) in lines[1..].iter().enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields[0], "steps");
        assert_eq!(fields[1], (i + 1).to_string());
        assert_eq!(fields[5], (i + 1).to_string());
    }
    assert_eq!(
        read(out.path().join("sweep_results.csv")).lines().count(),
        1 + 4 * 2
    );
}

#[test]
fn exported_embeddings_cover_every_node_and_step() {
    let out = tempfile::tempdir().unwrap();
    pretrained(out.path());
    let mutag = fixture("mutag");
    let common = [
        "--steps",
        "2",
        "--epochs",
        "2",
        "--num-tasks",
        "1",
        "--num-seeds",
        "1",
    ];
    let mut args = with(&["bench", "--dataset", mutag.to_str().unwrap()], &common);
    args.push("--save-prompts");
    ok(out.path(), &args);
    let export = |sub: &str| {
        let mut args = with(
            &["export-embeddings", "--dataset", mutag.to_str().unwrap()],
            &[],
        );
        args.push("--prompts");
        let prompts = out.path().join("prompts/m1/prompt_t0_r0.txt");
        let prompts = prompts.to_str().unwrap().to_string();
        args.push(&prompts);
        let ckpt = out.path().join("encoder.ckpt");
        let ckpt = ckpt.to_str().unwrap().to_string();
        args.extend(["--checkpoint", &ckpt]);
        let dir = out.path().join(sub);
        ok(&dir, &args);
        dir.join("embeddings")
    };
    let first = export("a");
    let mut files: Vec<String> = fs::read_dir(&first)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    files.sort();
    assert_eq!(files, ["answer.csv", "thought_1.csv"]);
    let answer = read(first.join("answer.csv"));
    assert_eq!(answer.lines().count(), 1 + 3371);
    assert!(answer.starts_with("node_id,label,h0,"));
    assert_eq!(answer.lines().next().unwrap().split(',').count(), 2 + 8);
    let thought = read(first.join("thought_1.csv"));
    assert_eq!(thought.lines().count(), 1 + 3371);
    assert!(thought.lines().nth(1).unwrap().starts_with("1,0,"));

    let second = export("b");
    for f in &files {
        assert_eq!(
            fs::read(first.join(f)).unwrap(),
            fs::read(second.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn checkpoint_must_match_the_encoder_shape() {
    let out = tempfile::tempdir().unwrap();
    pretrained(out.path());
    let mutag = fixture("mutag");
    let o = gcot(
        out.path(),
        &[
            "bench",
            "--dataset",
            mutag.to_str().unwrap(),
            "--layers",
            "3",
            "--hidden",
            "8",
            "--epochs",
            "1",
        ],
    );
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("checkpoint"));
}
