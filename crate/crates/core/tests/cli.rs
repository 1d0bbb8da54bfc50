use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_vanet-dynkey"));
    c.env_remove("VANET_SEED");
    c
}

fn text(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn header_seed(dir: &Path) -> String {
    fs::read_to_string(dir.join("e2_density.csv"))
        .unwrap()
        .lines()
        .find_map(|l| l.strip_prefix("# seed=").map(str::to_string))
        .unwrap()
}

const SMALL: &str = "model = manhattan\nsweep = 10\nreplications = 1\nseed = 5\n";

#[test]
fn analytic_prints_radius_count_and_share() {
    let out = bin()
        .args(["analytic", "--v", "80", "--l", "300", "--d", "500", "--N", "1000"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(text(&out), "r = 6666.67 m\nm = 15\np = 1.5%\n");
}

#[test]
fn analytic_rejects_more_messages_than_rsus() {
    let out = bin()
        .args(["analytic", "--v", "80", "--l", "300", "--d", "500", "--N", "10"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}

#[test]
fn run_e1_writes_table_and_figure() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["run", "--experiment", "E1", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("e1_speed.csv").is_file());
    assert!(dir.path().join("fig10.dat").is_file());
    assert_eq!(text(&out).lines().count(), 2);
}

#[test]
fn unknown_config_key_fails_before_running() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "vehicles = 10\nvehicle_count = 3\n").unwrap();
    let out_dir = dir.path().join("out");
    let out = bin()
        .args(["run", "--experiment", "E2", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("vehicle_count"));
    assert!(!out_dir.exists());
}

#[test]
fn seed_precedence_is_config_then_env_then_flag() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.cfg");
    fs::write(&cfg, SMALL).unwrap();
    let run = |env: Option<&str>, flag: Option<&str>, out: &Path| {
        let mut c = bin();
        c.args(["run", "--experiment", "E2", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(out);
        if let Some(e) = env {
            c.env("VANET_SEED", e);
        }
        if let Some(f) = flag {
            c.args(["--seed", f]);
        }
        let o = c.output().unwrap();
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    };
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    run(None, None, &a);
    run(Some("9"), None, &b);
    run(Some("9"), Some("11"), &c);
    assert_eq!(header_seed(&a), "5");
    assert_eq!(header_seed(&b), "9");
    assert_eq!(header_seed(&c), "11");
}

#[test]
fn crypto_and_replication_flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.cfg");
    fs::write(&cfg, SMALL).unwrap();
    let out = bin()
        .args([
            "run",
            "--experiment",
            "E2",
            "--crypto",
            "real",
            "--replications",
            "3",
            "--config",
        ])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    let csv = fs::read_to_string(dir.path().join("e2_density.csv")).unwrap();
    assert!(csv.contains("# crypto=real\n"));
    assert!(csv.contains("# replications=3\n"));
    assert_eq!(csv.lines().filter(|l| l.starts_with("DYN,")).count(), 3);
}

#[test]
fn attack_scenarios_report_failure_to_break_in() {
    for scenario in ["replay", "mitm", "sybil", "masquerade"] {
        let out = bin().args(["attack", "--scenario", scenario]).output().unwrap();
        assert!(out.status.success(), "{scenario}");
        let t = text(&out);
        assert!(t.contains("succeeded=false"), "{t}");
        assert!(!t.contains("succeeded=true"), "{t}");
    }
    let out = bin().args(["attack", "--scenario", "teleport"]).output().unwrap();
    assert!(!out.status.success());
}
