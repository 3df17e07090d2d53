use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn chansense(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_chansense"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn simulate(dir: &Path) {
    let o = chansense(&["simulate", "--preset", "desk", "--seed", "9", "--session", dir.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn simulate_validate_and_process() {
    let tmp = tempfile::tempdir().unwrap();
    let s = tmp.path().join("s");
    simulate(&s);
    let s = s.to_str().unwrap();
    assert_eq!(code(&chansense(&["validate", "--session", s])), 0);

    let out = tmp.path().join("out");
    let out = out.to_str().unwrap();
    let o = chansense(&["process", "sage", "--session", s, "--out", out]);
    assert_eq!(code(&o), 2, "estimation before calibration");
    assert!(String::from_utf8_lossy(&o.stderr).contains("calibrate"));

    for args in [
        vec!["calibrate"],
        vec!["process", "sync"],
        vec!["process", "pdp"],
        vec!["process", "cluster"],
        vec!["destagger"],
        vec!["process", "sage"],
        vec!["fuse"],
    ] {
        let mut a = args.clone();
        a.extend(["--session", s, "--out", out]);
        let o = chansense(&a);
        assert_eq!(code(&o), 0, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let o = chansense(&["report", "--session", s, "--out", out]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("ran: pl"), "{text}");
    assert!(text.contains("path loss exponent"), "{text}");
    assert!(Path::new(out).join("report.toml").exists());

    let o = chansense(&["report", "--session", s, "--out", out]);
    assert!(!String::from_utf8_lossy(&o.stdout).contains("ran:"));
}

#[test]
fn corrupt_session_exits_with_validation_code() {
    let tmp = tempfile::tempdir().unwrap();
    simulate(tmp.path());
    let f = tmp.path().join("geolocation.bin");
    let bytes = fs::read(&f).unwrap();
    fs::write(&f, &bytes[..bytes.len() - 64]).unwrap();
    let o = chansense(&["validate", "--session", tmp.path().to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("geolocation.bin") && err.contains("expected"), "{err}");
}

#[test]
fn invalid_config_lists_violations() {
    let tmp = tempfile::tempdir().unwrap();
    let o = chansense(&["preset", "desk"]);
    let text = String::from_utf8(o.stdout).unwrap();
    let bad = text
        .replacen("duration = 2.0", "duration = -2.0", 1)
        .replacen("repetitions = 4", "repetitions = 0", 1);
    assert_ne!(bad, text);
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, bad).unwrap();
    let o = chansense(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--session",
        tmp.path().join("s").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 1);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("duration") && err.contains("repetitions"), "{err}");
}

#[test]
fn budget_flags_reference_mismatch() {
    let o = chansense(&["budget", "--reference", "128.2"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("-57.20 dBm"), "{text}");
    assert!(text.contains("MISMATCH"), "{text}");
}
