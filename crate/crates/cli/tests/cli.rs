use std::process::Command;

fn hsi() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hsi"))
}

#[test]
fn invalid_flags_exit_one() {
    let out = hsi().arg("no-such-command").output().unwrap();
    assert_eq!(out.status.code(), Some(1));

    // infer requires exactly one classifier source
    let out = hsi()
        .args(["infer", "--cube", "x.hsic", "--norm", "n.json", "--out", "m.hsim"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("ensemble-dir"), "stderr: {err}");
}

#[test]
fn missing_input_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = hsi()
        .args([
            "render",
            "--cube",
            dir.path().join("absent.hsic").to_str().unwrap(),
            "--map",
            dir.path().join("absent.hsim").to_str().unwrap(),
            "--out",
            dir.path().join("o.png").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn phantom_and_stats_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let cube = dir.path().join("scene.hsic");
    let mask = dir.path().join("scene.hsia");
    let out = hsi()
        .args(["phantom", "--seed", "3"])
        .args(["--out", cube.to_str().unwrap()])
        .args(["--mask-out", mask.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let out = hsi()
        .args(["stats", "--cube", cube.to_str().unwrap(), "--mask", mask.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("inter_centroid_sam"), "stdout: {text}");
}
