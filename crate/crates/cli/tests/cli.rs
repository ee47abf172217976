use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: [&str; 10] = [
    "--set",
    "synth.clips_per_subject=4",
    "--set",
    "synth.frames_per_clip=4",
    "--set",
    "preprocess.side=32",
    "--set",
    "train.max_epochs=2",
    "--set",
    "seeds=[1,2]",
];

fn facepad(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_facepad"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .expect("binary runs")
}

fn small(extra: &[&str]) -> Vec<String> {
    let mut v: Vec<String> = extra.iter().map(|s| s.to_string()).collect();
    v.extend(SMALL.iter().map(|s| s.to_string()));
    v.extend(["--set".into(), "dataset.manifest=data".into()]);
    v
}

fn run_ok(dir: &Path, args: &[String]) -> String {
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    let out = facepad(dir, &args);
    assert!(
        out.status.success(),
        "facepad {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn tree_bytes(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn synth_data_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let mut a = small(&["synth-data", "--out", "a"]);
    let stdout = run_ok(tmp.path(), &a);
    assert!(stdout.contains("train:") && stdout.contains("dev:") && stdout.contains("test:"));
    a[2] = "b".into();
    run_ok(tmp.path(), &a);
    let (ta, tb) = (tree_bytes(&tmp.path().join("a")), tree_bytes(&tmp.path().join("b")));
    assert!(ta.len() > 24);
    assert_eq!(ta, tb);
}

#[test]
fn two_subjects_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let out = facepad(tmp.path(), &["synth-data", "--set", "synth.n_subjects=2"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("subject-disjoint"));
}

#[test]
fn schema_violations_name_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let out = facepad(tmp.path(), &["train-teacher", "--set", "train.learning_rat=0.1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("train.learning_rat"));

    std::fs::write(tmp.path().join("bad.toml"), "[kd]\ntemperature = 3.0\nbeta = 1\n").unwrap();
    let out = facepad(tmp.path(), &["train-teacher", "--config", "bad.toml"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("beta"));

    let out = facepad(tmp.path(), &["no-such-command"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn missing_dev_split_is_a_named_error() {
    let tmp = tempfile::tempdir().unwrap();
    run_ok(tmp.path(), &small(&["synth-data"]));
    let manifest = tmp.path().join("data/manifest.csv");
    let text = std::fs::read_to_string(&manifest).unwrap();
    let kept: Vec<&str> = text.lines().filter(|l| !l.ends_with(",dev")).collect();
    std::fs::write(&manifest, kept.join("\n") + "\n").unwrap();
    let args = small(&["train-teacher"]);
    let out = facepad(tmp.path(), &args.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dev"));
}

#[test]
fn full_workflow() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    run_ok(dir, &small(&["synth-data"]));
    let ckpts = run_ok(dir, &small(&["train-teacher"]));
    assert_eq!(ckpts.lines().count(), 2);
    run_ok(dir, &small(&["distill"]));

    let hash_dir = std::fs::read_dir(dir.join("runs")).unwrap().next().unwrap().unwrap().path();
    assert!(hash_dir.join("mean_report.json").is_file());
    for seed in ["1", "2"] {
        let s = hash_dir.join(seed);
        for f in ["config.toml", "teacher.ckpt", "student.ckpt", "teacher_log.jsonl", "student_log.jsonl"] {
            assert!(s.join(f).is_file(), "{} missing in seed {seed}", f);
        }
        let report: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(s.join("report_student_test.json")).unwrap()).unwrap();
        assert_eq!(report["engine"], "none");
        let (h, far, frr) = (report["hter"].as_f64().unwrap(), report["far"].as_f64().unwrap(), report["frr"].as_f64().unwrap());
        assert_eq!(h, (far + frr) / 2.0);
    }

    let student = hash_dir.join("1/student.ckpt");
    let teacher = hash_dir.join("1/teacher.ckpt");
    let student_s = student.to_str().unwrap();
    let teacher_s = teacher.to_str().unwrap();

    run_ok(dir, &small(&["evaluate", "--checkpoint", student_s, "--out", "e1"]));
    run_ok(dir, &small(&["evaluate", "--checkpoint", student_s, "--out", "e2"]));
    let a = std::fs::read(dir.join("e1/scores_student_test.csv")).unwrap();
    let b = std::fs::read(dir.join("e2/scores_student_test.csv")).unwrap();
    assert_eq!(a, b);

    let teacher_eval = run_ok(dir, &small(&["evaluate", "--checkpoint", teacher_s, "--out", "e3"]));
    assert!(teacher_eval.contains("engine: exact"));

    let clip = std::fs::read_to_string(dir.join("data/manifest.csv"))
        .unwrap()
        .lines()
        .find(|l| l.contains(",test"))
        .unwrap()
        .split(',')
        .next()
        .unwrap()
        .to_string();
    let t = run_ok(dir, &small(&["gradcam", "--checkpoint", teacher_s, "--clip", &clip, "--out", "cam/t.png"]));
    assert_eq!(t.lines().count(), 2);
    let s = run_ok(dir, &small(&["gradcam", "--checkpoint", student_s, "--clip", &clip, "--out", "cam/s.png"]));
    assert_eq!(s.lines().count(), 1);
    assert!(dir.join("cam/t_flow.png").is_file() && dir.join("cam/s_rgb.png").is_file());

    let args = small(&["gradcam", "--checkpoint", student_s, "--clip", &clip, "--layer", "stage9"]);
    let out = facepad(dir, &args.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("available layers: stage1"));

    let bench = run_ok(dir, &small(&["bench", "--checkpoint", student_s, "--iters", "3", "--json", "b.json"]));
    assert!(bench.contains("engine: none"));
    let args = small(&["bench", "--checkpoint", student_s, "--iters", "0"]);
    let out = facepad(dir, &args.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(out.status.code(), Some(1));
}
