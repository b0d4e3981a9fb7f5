use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_speechsplit"));
    c.env("SPEECHSPLIT_THREADS", "1");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let o = run(args);
    assert!(o.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        let f = Self { dir: TempDir::new().unwrap() };
        ok(&["synth", "--speakers", "8", "--utterances", "4", "--seed", "1", "--out", s(&f.path("corpus"))]);
        ok(&["init-config", "--preset", "tiny", "--out", s(&f.path("tiny.toml"))]);
        f
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn train(&self, sub: &str, config: &str, out: &str) {
        ok(&[sub, "--config", s(&self.path(config)), "--data", s(&self.path("corpus")), "--out", s(&self.path(out))]);
    }
}

#[test]
fn synth_is_byte_identical_for_a_seed() {
    let f = Fixture::new();
    ok(&["synth", "--speakers", "8", "--utterances", "4", "--seed", "1", "--out", s(&f.path("again"))]);
    ok(&["synth", "--speakers", "8", "--utterances", "4", "--seed", "2", "--out", s(&f.path("other"))]);
    let a = tree(&f.path("corpus"));
    assert!(a.len() > 64);
    assert_eq!(a, tree(&f.path("again")));
    assert_ne!(a, tree(&f.path("other")));
}

#[test]
fn train_writes_a_reproducible_run_directory() {
    let f = Fixture::new();
    f.train("train", "tiny.toml", "run");
    for name in ["config.toml", "run.json", "train_log.csv", "latest.ssck", "final.ssck", "checkpoints/step_0000010.ssck", "checkpoints/step_0000020.ssck"] {
        assert!(f.path("run").join(name).exists(), "{name} missing");
    }
    let info: serde_json::Value = serde_json::from_slice(&fs::read(f.path("run/run.json")).unwrap()).unwrap();
    assert_eq!(info["deterministic"], true);
    let cfg: toml::Value = toml::from_str(&fs::read_to_string(f.path("run/config.toml")).unwrap()).unwrap();
    assert_eq!(info["seed"].as_u64(), cfg["train"]["seed"].as_integer().map(|s| s as u64));
    f.train("train", "run/config.toml", "rerun");
    assert_eq!(fs::read(f.path("run/final.ssck")).unwrap(), fs::read(f.path("rerun/final.ssck")).unwrap());
}

#[test]
fn resumed_training_matches_an_uninterrupted_run() {
    let f = Fixture::new();
    let cfg = fs::read_to_string(f.path("tiny.toml")).unwrap();
    fs::write(f.path("short.toml"), cfg.replace("total_steps = 20", "total_steps = 10")).unwrap();
    f.train("train", "short.toml", "run");
    f.train("train", "tiny.toml", "run");
    f.train("train", "tiny.toml", "straight");
    assert_eq!(fs::read(f.path("run/final.ssck")).unwrap(), fs::read(f.path("straight/final.ssck")).unwrap());
    let losses = |run: &str| -> Vec<(u64, f64)> {
        let mut r = csv::Reader::from_path(f.path(run).join("train_log.csv")).unwrap();
        r.records().map(|x| x.unwrap()).map(|x| (x[0].parse().unwrap(), x[1].parse().unwrap())).collect()
    };
    assert_eq!(losses("run").len(), 20);
    assert_eq!(losses("run"), losses("straight"));
}

#[test]
fn convert_timbre_writes_one_result_and_all7_writes_seven() {
    let f = Fixture::new();
    f.train("train", "tiny.toml", "run");
    f.train("train-pitch-mini", "tiny.toml", "mini");
    let (model, corpus) = (f.path("run/final.ssck"), f.path("corpus"));
    let base = ["convert", "--model", s(&model), "--data", s(&corpus), "--source", "spk0_000", "--target", "spk1_000"];
    ok(&[&base[..], &["--aspects", "timbre", "--out", s(&f.path("one"))]].concat());
    let features = |d: &str| fs::read_dir(f.path(d)).unwrap().filter(|e| e.as_ref().unwrap().path().extension().unwrap() == "ssfc").count();
    assert_eq!(features("one"), 1);
    let mini = f.path("mini/final.ssck");
    ok(&[&base[..], &["--mini", s(&mini), "--aspects", "all7", "--out", s(&f.path("seven"))]].concat());
    assert_eq!(features("seven"), 7);
    let o = run(&[&base[..], &["--aspects", "pitch", "--out", s(&f.path("x"))]].concat());
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn eval_on_a_self_pair_has_zero_pitch_errors() {
    let f = Fixture::new();
    f.train("train", "tiny.toml", "run");
    fs::write(f.path("corpus/self.csv"), "source,target\nspk2_001,spk2_001\n").unwrap();
    ok(&["eval", "--model", s(&f.path("run/final.ssck")), "--pairs", s(&f.path("corpus/self.csv")), "--out", s(&f.path("eval.csv"))]);
    let text = fs::read_to_string(f.path("eval.csv")).unwrap();
    let mut rows = csv::Reader::from_reader(text.as_bytes());
    let identity: Vec<csv::StringRecord> = rows.records().map(Result::unwrap).filter(|r| &r[1] == "identity").collect();
    assert_eq!(identity.len(), 1);
    for col in 2..5 {
        assert_eq!(identity[0][col].parse::<f64>().unwrap(), 0.0);
    }
}

#[test]
fn newer_file_versions_exit_with_code_3() {
    let f = Fixture::new();
    let feat = f.path("corpus/features/spk0_000.ssfc");
    let mut bytes = fs::read(&feat).unwrap();
    bytes[4] = 2;
    fs::write(f.path("v2.ssfc"), &bytes).unwrap();
    let o = run(&["plot", "--input", s(&f.path("v2.ssfc")), "--out", s(&f.path("p.png"))]);
    assert_eq!(o.status.code(), Some(3));
    let err = String::from_utf8(o.stderr).unwrap();
    assert!(err.starts_with("error[version]: "), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1);
}

#[test]
fn truncated_files_name_a_byte_offset() {
    let f = Fixture::new();
    let bytes = fs::read(f.path("corpus/features/spk0_000.ssfc")).unwrap();
    fs::write(f.path("cut.ssfc"), &bytes[..bytes.len() - 7]).unwrap();
    let o = run(&["plot", "--input", s(&f.path("cut.ssfc")), "--out", s(&f.path("p.png"))]);
    assert_eq!(o.status.code(), Some(3));
    let err = String::from_utf8(o.stderr).unwrap();
    assert!(err.starts_with("error[corrupt]: ") && err.contains("byte offset"), "{err}");
}

#[test]
fn plot_renders_a_png() {
    let f = Fixture::new();
    ok(&["plot", "--input", s(&f.path("corpus/features/spk0_000.ssfc")), "--out", s(&f.path("p.png"))]);
    assert_eq!(&fs::read(f.path("p.png")).unwrap()[1..4], b"PNG");
}

#[test]
fn usage_errors_exit_with_code_2() {
    let f = Fixture::new();
    for args in [
        vec![],
        vec!["synth", "--speakers", "x", "--out", "o"],
        vec!["init-config", "--preset", "huge", "--out", "c.toml"],
        vec!["probe", "--model", "m", "--data", "d", "--out", "r.json", "--include", "everything"],
    ] {
        let o = run(&args);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
        assert!(String::from_utf8(o.stderr).unwrap().starts_with("error[usage]: "));
    }
    let o = bin().env("SPEECHSPLIT_THREADS", "0").args(["plot", "--input", s(&f.path("a")), "--out", "b"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn data_errors_exit_with_code_3() {
    let f = Fixture::new();
    let o = run(&["train", "--config", s(&f.path("tiny.toml")), "--data", s(&f.path("missing")), "--out", s(&f.path("r"))]);
    assert_eq!(o.status.code(), Some(3));
    let cfg = fs::read_to_string(f.path("tiny.toml")).unwrap().replace("n_speakers = 8", "n_speakers = 5");
    fs::write(f.path("bad.toml"), cfg).unwrap();
    let o = run(&["train", "--config", s(&f.path("bad.toml")), "--data", s(&f.path("corpus")), "--out", s(&f.path("r"))]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn probe_writes_json_and_text_reports() {
    let f = Fixture::new();
    f.train("train", "tiny.toml", "run");
    ok(&["probe", "--model", s(&f.path("run/final.ssck")), "--data", s(&f.path("corpus")), "--out", s(&f.path("probe.json")), "--config", s(&f.path("tiny.toml"))]);
    let report: serde_json::Value = serde_json::from_slice(&fs::read(f.path("probe.json")).unwrap()).unwrap();
    assert!(report["bottleneck"]["checks"].as_array().unwrap().len() >= 5);
    assert!(fs::read_to_string(f.path("probe.txt")).unwrap().contains("rhythm_energy_ratio"));
}
