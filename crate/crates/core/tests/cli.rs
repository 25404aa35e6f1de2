use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn mtoo(out_dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mtoo"))
        .arg("--out-dir")
        .arg(out_dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out_dir: &Path, args: &[&str]) -> String {
    let o = mtoo(out_dir, args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

fn code(out_dir: &Path, args: &[&str]) -> i32 {
    mtoo(out_dir, args).status.code().expect("exit code")
}

/// The whole workflow on a tiny problem; returns every file it wrote.
fn pipeline(dir: &Path) -> Vec<PathBuf> {
    ok(dir, &["generate", "--per-technology", "150"]);
    ok(dir, &["train", "--model", "vae", "--epochs", "2"]);
    ok(dir, &["train", "--model", "dnn-asm", "--epochs", "2"]);
    ok(dir, &["train", "--model", "dnn-pmsm", "--epochs", "2"]);
    let report = ok(dir, &["evaluate"]);
    assert!(report.contains("reconstruction MRE"));
    for wf in ["vae", "direct-asm", "direct-pmsm"] {
        ok(dir, &["optimize", "--workflow", wf, "--population", "20", "--generations", "3"]);
    }
    let a = |n: &str| dir.join(n).to_str().unwrap().to_string();
    let (v, d) = (a("pareto-vae.csv"), a("pareto-direct-asm.csv"));
    let out = ok(dir, &["validate-pareto", "--archive", &v, "--archive", &d]);
    assert!(out.contains("geometrically valid"));

    let mut files: Vec<PathBuf> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    files.sort();
    files
}

#[test]
fn full_pipeline_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let fa = pipeline(a.path());
    let fb = pipeline(b.path());
    let names = |fs: &[PathBuf]| -> Vec<String> {
        fs.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect()
    };
    assert_eq!(names(&fa), names(&fb));
    for expected in [
        "dataset.csv",
        "vae.json",
        "vae.curves.csv",
        "dnn-asm.json",
        "kpi-metrics.csv",
        "parameter-metrics.csv",
        "kpi-scatter.csv",
        "comparison.csv",
        "comparison.txt",
        "pareto-vae.csv",
        "pareto-vae.svg",
        "pareto-vae.history.csv",
        "pareto-vae-validated.csv",
        "pareto-validation.csv",
        "pareto-validation.svg",
    ] {
        assert!(names(&fa).iter().any(|n| n == expected), "missing {expected}");
    }
    for (x, y) in fa.iter().zip(&fb) {
        let (tx, ty) = (std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
        if x.to_string_lossy().ends_with(".meta.json") {
            let strip = |t: &[u8]| -> String {
                String::from_utf8_lossy(t).lines().filter(|l| !l.contains("generated_at")).collect()
            };
            assert_eq!(strip(&tx), strip(&ty));
        } else {
            assert!(tx == ty, "{} differs between identical runs", x.display());
        }
    }
}

#[test]
fn exit_codes() {
    let d = tempfile::tempdir().unwrap();
    let dir = d.path();
    assert_eq!(code(dir, &["--profile", "huge", "generate"]), 2);
    assert_eq!(code(dir, &["--threads", "0", "generate"]), 2);
    assert_eq!(code(dir, &["frobnicate"]), 2);

    let cfg = dir.join("bad.toml");
    std::fs::write(&cfg, "[training]\nbatch_size = 0\n").unwrap();
    let o = mtoo(dir, &["--config", cfg.to_str().unwrap(), "generate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("training.batch_size"));

    // missing dataset
    assert_eq!(code(dir, &["train", "--model", "vae"]), 3);

    // an archive holding a dominated pair is refused on load
    ok(dir, &["generate", "--per-technology", "60"]);
    ok(dir, &["train", "--model", "dnn-pmsm", "--epochs", "1"]);
    ok(dir, &["optimize", "--workflow", "direct-pmsm", "--population", "12", "--generations", "2"]);
    let path = dir.join("pareto-direct-pmsm.csv");
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let header: Vec<&str> = lines[0].split(',').collect();
    let (o0, o1) = (
        header.iter().position(|h| *h == "obj_0").unwrap(),
        header.iter().position(|h| *h == "obj_1").unwrap(),
    );
    let mut worse: Vec<String> = lines[1].split(',').map(String::from).collect();
    for c in [o0, o1] {
        worse[c] = format!("{:e}", worse[c].parse::<f64>().unwrap() + 1.0);
    }
    lines.push(worse.join(","));
    let bad = dir.join("dominated.csv");
    std::fs::write(&bad, lines.join("\n") + "\n").unwrap();
    assert_eq!(code(dir, &["validate-pareto", "--archive", bad.to_str().unwrap()]), 3);

    // a direct model used for the other technology
    let dnn = dir.join("dnn-pmsm.json");
    let o = mtoo(dir, &["optimize", "--workflow", "direct-asm", "--model", dnn.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_file_drives_the_run() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("run.toml");
    let out = d.path().join("runs");
    std::fs::write(
        &cfg,
        format!(
            "out_dir = {:?}\n[dataset]\nper_technology = 40\n[seeds]\ndataset = 5\n",
            out.to_str().unwrap()
        ),
    )
    .unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_mtoo"))
        .args(["--config", cfg.to_str().unwrap(), "generate"])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(out.join("dataset.csv")).unwrap();
    assert_eq!(text.lines().count(), 81);
}
