//! End-to-end runs of the `lossy-detect` binary on a tiny synthetic corpus.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lossy-detect"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn value_after(text: &str, key: &str) -> PathBuf {
    let line = text
        .lines()
        .find_map(|l| l.strip_prefix(key))
        .unwrap_or_else(|| panic!("no `{key}` in:\n{text}"));
    PathBuf::from(line.trim())
}

const TINY: &str = r#"
out = "run"
synthetic = 14
duration = 4.0
seed = 4
conv-channels = [2, 2, 2, 4]
lstm-hidden = 4
epochs = 1
batch-size = 8
saliency-examples = 1
"#;

#[test]
fn usage_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let o = bin(&["build-dataset"], tmp.path());
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    let o = bin(&["infer", "nope.wav", "--checkpoint", "nope.ckpt"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    let o = bin(&["train", "--conv-channels", "1,2"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    let o = bin(&["train", "--mask", "maybe"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn full_lifecycle_from_one_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cwd = tmp.path();
    std::fs::write(cwd.join("tiny.toml"), TINY).unwrap();
    let cfg = ["--config", "tiny.toml"];
    let with = |args: &[&str]| -> Output {
        let all: Vec<&str> = args.iter().chain(cfg.iter()).copied().collect();
        let o = bin(&all, cwd);
        assert!(
            matches!(o.status.code(), Some(0) | Some(3)),
            "{args:?} failed:\n{}",
            String::from_utf8_lossy(&o.stderr)
        );
        o
    };

    with(&["build-dataset"]);
    for ds in ["ds1", "ds2"] {
        assert!(cwd.join("run").join(ds).join("manifest.jsonl").is_file());
    }

    let first = stdout(&with(&["train"]));
    let ckpt = value_after(&first, "checkpoint:");
    let stamp = std::fs::metadata(cwd.join(&ckpt)).unwrap().modified().unwrap();
    let again = stdout(&with(&["train"]));
    assert_eq!(value_after(&again, "checkpoint:"), ckpt, "identical config reuses the run");
    assert_eq!(std::fs::metadata(cwd.join(&ckpt)).unwrap().modified().unwrap(), stamp);
    let masked = stdout(&with(&["train", "--mask", "on"]));
    assert_ne!(value_after(&masked, "checkpoint:"), ckpt);

    let ck = ckpt.to_str().unwrap();
    let report = value_after(&stdout(&with(&["evaluate", "--checkpoint", ck])), "report:");
    for f in ["report.json", "report.md", "predictions.jsonl"] {
        assert!(cwd.join(&report).join(f).is_file(), "{f}");
    }
    let report2 = value_after(
        &stdout(&with(&["evaluate", "--checkpoint", ck, "--dataset", "ds2"])),
        "report:",
    );
    assert_ne!(report, report2);

    let cmp = stdout(&with(&[
        "report",
        "--baseline",
        report.to_str().unwrap(),
        "--candidate",
        report.to_str().unwrap(),
    ]));
    assert!(cmp.contains("matches or beats"), "{cmp}");
    let o = bin(
        &["report", "--baseline", report.to_str().unwrap(), "--candidate", report2.to_str().unwrap()],
        cwd,
    );
    assert_eq!(o.status.code(), Some(2), "different datasets cannot be compared");

    let wav = "run/corpus/syn_00000.wav";
    let o = with(&["infer", wav, "--checkpoint", ck]);
    let line = stdout(&o);
    let fields: Vec<&str> = line.trim().split('\t').collect();
    assert_eq!(fields.len(), 3, "{line}");
    let p: f64 = fields[1].parse().unwrap();
    assert!((0.0..=1.0).contains(&p));
    let expected = if fields[2] == "lossy" { 3 } else { 0 };
    assert_eq!(o.status.code(), Some(expected));

    let sal = stdout(&with(&["saliency", wav, "--checkpoint", ck, "--offset", "0.5"]));
    let pngs: Vec<&str> = sal.lines().filter(|l| l.ends_with(".png")).collect();
    assert_eq!(pngs.len(), 2);
    for p in pngs {
        assert!(cwd.join(p).is_file() || Path::new(p).is_file(), "{p}");
    }
}
