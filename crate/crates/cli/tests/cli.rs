use std::path::Path;
use std::process::{Command, Output};

fn decbary(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_decbary")).args(args).output().unwrap()
}

fn parse_csv(path: &Path) -> Vec<Vec<f64>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with("round"))
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

#[test]
fn preset_run_writes_parseable_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = decbary(&[
        "run", "--preset", "gauss1d", "--m", "10", "--topology", "erdos_renyi", "--rounds", "60", "--seed", "7",
        "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let header = std::fs::read_to_string(out.join("trace.csv")).unwrap();
    assert!(header.starts_with("round,dual_value,consensus,batch,wall_ms\n"));
    let trace = parse_csv(&out.join("trace.csv"));
    assert_eq!(trace.first().unwrap()[0], 0.0);
    assert_eq!(trace.last().unwrap()[0], 60.0);
    assert!(trace.iter().all(|r| r.len() == 5));
    let bary = parse_csv(&out.join("barycenter.csv"));
    assert_eq!(bary.len(), 11);
    assert!(bary.iter().all(|r| r.len() == 100));
}

#[test]
fn validate_rejects_nonpositive_gamma() {
    let dir = tempfile::tempdir().unwrap();
    let good = decbary(&["preset", "gauss1d", "--m", "3"]);
    assert!(good.status.success());
    let text = String::from_utf8(good.stdout).unwrap();
    let path = dir.path().join("c.toml");
    std::fs::write(&path, &text).unwrap();
    assert!(decbary(&["validate", path.to_str().unwrap()]).status.success());

    let bad = text.replace("gamma = 0.1", "gamma = 0.0");
    assert_ne!(bad, text);
    std::fs::write(&path, bad).unwrap();
    let o = decbary(&["validate", path.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("solver.gamma"));
}

#[test]
fn config_run_with_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    let text = String::from_utf8(decbary(&["preset", "vonmises", "--m", "4", "--n", "24"]).stdout).unwrap();
    std::fs::write(&cfg, text).unwrap();
    let out = dir.path().join("o");
    let o = decbary(&[
        "run", "--config", cfg.to_str().unwrap(), "--rounds", "15", "--algorithm", "nonaccel", "--topology", "cycle",
        "--gamma", "0.2", "--out", out.to_str().unwrap(), "--no-wall-clock", "--workers", "2",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let trace = parse_csv(&out.join("trace.csv"));
    assert!(trace.iter().all(|r| r[4] == 0.0));
    assert!(trace.iter().skip(1).all(|r| r[3] == 1.0));

    let clash = decbary(&["run", "--config", cfg.to_str().unwrap(), "--m", "5"]);
    assert!(!clash.status.success());
}

#[test]
fn image_preset_renders_pgm() {
    let dir = tempfile::tempdir().unwrap();
    let imgs = dir.path().join("imgs");
    std::fs::create_dir(&imgs).unwrap();
    for k in 0..3 {
        let rows: Vec<String> = (0..6)
            .map(|r| (0..6).map(|c| if (r + c + k) % 3 == 0 { "9" } else { "1" }).collect::<Vec<_>>().join(" "))
            .collect();
        std::fs::write(imgs.join(format!("{k}.txt")), rows.join("\n")).unwrap();
    }
    let out = dir.path().join("o");
    let o = decbary(&[
        "run", "--preset", "image_dir", "--images", imgs.to_str().unwrap(), "--rounds", "10", "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for name in ["agent_0.pgm", "agent_2.pgm", "mean.pgm"] {
        let bytes = std::fs::read(out.join(name)).unwrap();
        assert!(bytes.starts_with(b"P5"));
    }
}

#[test]
fn bad_inputs_fail_cleanly() {
    assert!(!decbary(&["run", "--preset", "nope"]).status.success());
    assert!(!decbary(&["run", "--preset", "gauss1d", "--gamma", "-1", "--rounds", "1"]).status.success());
    assert!(!decbary(&["validate", "/nonexistent/config.toml"]).status.success());
    assert!(!decbary(&["run"]).status.success());
}
