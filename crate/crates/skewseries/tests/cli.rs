//! End-to-end checks of the `skewseries` binary: fixture behavior, exit
//! codes, config diagnostics, and byte-stability of the JSON report.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_skewseries")
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(name)
}

fn run_cli(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("spawn binary")
}

fn run_fixture(name: &str, cmd: &str, extra: &[&str]) -> Output {
    let cfg = fixture(name);
    let mut args = vec!["--config", cfg.to_str().unwrap(), "--cmd", cmd];
    args.extend_from_slice(extra);
    run_cli(&args)
}

#[test]
fn selftest_passes_on_the_unit_instances() {
    for name in ["iwasawa.json", "zmod.json", "product.json", "char2.json", "ideal.json"] {
        let out = run_fixture(name, "selftest", &[]);
        assert_eq!(
            out.status.code(),
            Some(0),
            "{name}: {}{}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        );
    }
}

#[test]
fn quasi_fixture_passes_and_reports_its_mode() {
    let out = run_fixture("conj_unipotent.json", "cert", &[]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout).to_string();
    assert!(text.contains("mode=Quasi"), "{text}");
}

#[test]
fn failed_certificate_exits_with_code_3() {
    let out = run_fixture("conj_diag.json", "cert", &[]);
    assert_eq!(out.status.code(), Some(3));
    let text = String::from_utf8_lossy(&out.stdout).to_string();
    assert!(text.contains("mode=Failed"), "{text}");
}

#[test]
fn unknown_command_exits_with_code_2() {
    let out = run_fixture("iwasawa.json", "frobnicate", &[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_config_file_exits_with_code_2() {
    let out = run_cli(&["--config", "/nonexistent/nope.json", "--cmd", "cert"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_config_keys_exit_with_code_2_and_name_the_key() {
    let dir = std::env::temp_dir().join("skewseries-cli-badkey");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("bad.json");
    let text = std::fs::read_to_string(fixture("iwasawa.json"))
        .unwrap()
        .replace("\"seeds\": 42", "\"seeds\": 42, \"wat\": true");
    std::fs::write(&path, text).unwrap();
    let out = run_cli(&["--config", path.to_str().unwrap(), "--cmd", "cert"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr).to_string();
    assert!(err.contains("wat"), "{err}");
}

#[test]
fn report_is_byte_stable_and_has_no_timing() {
    let dir = std::env::temp_dir().join("skewseries-cli-stability");
    std::fs::create_dir_all(&dir).unwrap();
    let (a, b) = (dir.join("a.json"), dir.join("b.json"));
    for p in [&a, &b] {
        let out = run_fixture(
            "iwasawa.json",
            "selftest",
            &["--seed", "7", "--json-out", p.to_str().unwrap()],
        );
        assert_eq!(out.status.code(), Some(0));
    }
    let (ra, rb) = (
        std::fs::read(&a).unwrap(),
        std::fs::read(&b).unwrap(),
    );
    assert_eq!(ra, rb, "reports differ between identical runs");
    let text = String::from_utf8(ra).unwrap();
    assert!(text.contains("\"version\": \"skewseries-report-1\""));
    assert!(!text.contains("ms\""), "timing leaked into the report");
    assert!(!text.contains("wall"), "timing leaked into the report");
}

#[test]
fn parallel_selftest_matches_the_serial_report() {
    let dir = std::env::temp_dir().join("skewseries-cli-parallel");
    std::fs::create_dir_all(&dir).unwrap();
    let (a, b) = (dir.join("serial.json"), dir.join("parallel.json"));
    let s = run_fixture(
        "iwasawa.json",
        "selftest",
        &["--json-out", a.to_str().unwrap()],
    );
    let p = run_fixture(
        "iwasawa.json",
        "selftest",
        &["--parallel", "4", "--json-out", b.to_str().unwrap()],
    );
    assert_eq!(s.status.code(), Some(0));
    assert_eq!(p.status.code(), Some(0));
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn seed_override_changes_the_report_seed() {
    let dir = std::env::temp_dir().join("skewseries-cli-seed");
    std::fs::create_dir_all(&dir).unwrap();
    let p = dir.join("r.json");
    let out = run_fixture(
        "iwasawa.json",
        "cert",
        &["--seed", "123", "--json-out", p.to_str().unwrap()],
    );
    assert_eq!(out.status.code(), Some(0));
    let text = std::fs::read_to_string(&p).unwrap();
    assert!(text.contains("\"seed\": 123"), "{text}");
}
