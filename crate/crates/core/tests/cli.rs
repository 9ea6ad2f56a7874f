//! Exit-code contract of the command-line interface.

use std::process::Command;

fn emshape() -> Command {
    Command::new(env!("CARGO_BIN_EXE_emshape"))
}

#[test]
fn unknown_suite_is_a_usage_error() {
    let out = emshape()
        .args(["verify", "nonsense", "--out", "/tmp/emshape_cli_test"])
        .output()
        .expect("binary runs");
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("unknown suite"), "stderr: {err}");
}

#[test]
fn config_errors_carry_line_numbers() {
    let dir = std::env::temp_dir().join("emshape_cli_cfg");
    std::fs::create_dir_all(&dir).unwrap();
    let cfg = dir.join("bad.txt");
    std::fs::write(&cfg, "[grid]\nn_theta = 11\nn_thta = 3\n").unwrap();
    let out = emshape()
        .args([
            "verify",
            "geometry",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            dir.to_str().unwrap(),
        ])
        .output()
        .expect("binary runs");
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 3"), "stderr: {err}");
}

#[test]
fn unknown_deformation_preset_is_a_usage_error() {
    let out = emshape()
        .args([
            "derive",
            "--deformation",
            "wobble",
            "--out",
            "/tmp/emshape_cli_test",
        ])
        .output()
        .expect("binary runs");
    assert_eq!(out.status.code(), Some(2));
}
