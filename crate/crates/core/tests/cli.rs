use std::path::Path;
use std::process::{Command, Output};

fn vardiv(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vardiv"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn small_config(dir: &Path) -> std::path::PathBuf {
    let p = dir.join("cfg.json");
    std::fs::write(
        &p,
        r#"{"corpus":{"conditions":2},"seeds":3,"codebook_size":16,"codebook_iters":4,
            "sweep":{"sigma":[1.0],"k_max":[3],"m":[2]},"train":{"epochs":2}}"#,
    )
    .unwrap();
    p
}

#[test]
fn full_cli_flow() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("out");
    let c = cfg.to_str().unwrap();
    for cmd in [
        vec!["--config", c, "synth"],
        vec!["--config", c, "fit-codebook"],
        vec!["--config", c, "build-model"],
        vec!["--config", c, "train"],
        vec!["--config", c, "generate", "--method", "anneal", "--samples", "2"],
        vec!["--config", c, "--workers", "2", "run"],
        vec!["--config", c, "sweep"],
        vec!["--config", c, "bench", "--samples", "3"],
        vec!["--config", c, "report"],
    ] {
        let o = vardiv(&out, &cmd);
        assert!(o.status.success(), "{cmd:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    for f in [
        "corpus/corpus.json",
        "codebook.varc",
        "model/model.json",
        "linear/model.json",
        "generate/anneal/c000_s01.ppm",
        "runs/scale_travel/record.json",
        "sweep/pareto.svg",
        "report.csv",
    ] {
        assert!(out.join(f).exists(), "{f}");
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("empty");
    assert_eq!(vardiv(&out, &["run"]).status.code(), Some(3));
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"methods":[]}"#).unwrap();
    assert_eq!(vardiv(&out, &["--config", bad.to_str().unwrap(), "synth"]).status.code(), Some(2));
    assert_eq!(vardiv(&out, &["--preset", "nope", "synth"]).status.code(), Some(2));
    let o = vardiv(&out, &["report", dir.path().join("missing").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing"));
}
