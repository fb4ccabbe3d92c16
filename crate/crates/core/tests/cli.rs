use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn rfinterp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rfinterp"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn ok(args: &[&str]) {
    let out = rfinterp(args);
    assert_eq!(
        code(&out),
        0,
        "{args:?}\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_probe(dir: &Path) -> PathBuf {
    let path = dir.join("probe.json");
    std::fs::write(
        &path,
        r#"{"num_elements": 48, "num_rx_active": 16, "num_xmit": 16, "depth_samples": 128}"#,
    )
    .unwrap();
    path
}

#[test]
fn simulate_mask_interpolate_beamform() {
    let dir = tempfile::tempdir().unwrap();
    let probe = small_probe(dir.path());
    let cube = dir.path().join("frame.rfc");
    ok(&["simulate", "--probe-config", s(&probe), "--speckle", "100", "--seed", "3", "--out", s(&cube)]);
    assert!(cube.is_file());
    assert!(dir.path().join("frame.json").is_file());

    let mask = dir.path().join("m.msk");
    ok(&["mask", "--cube", s(&cube), "--scheme", "rx_x4", "--seed", "5", "--out", s(&mask)]);
    assert_eq!(&std::fs::read(&mask).unwrap()[..4], b"MSK1");

    let lines = dir.path().join("filled.rfc");
    ok(&["interpolate", "--cube", s(&cube), "--mask", s(&mask), "--method", "linear", "--out", s(&lines)]);
    assert!(dir.path().join("filled.lines.json").is_file());

    let image = dir.path().join("b.pgm");
    ok(&["beamform", "--cube", s(&lines), "--out", s(&image)]);
    let pgm = std::fs::read(&image).unwrap();
    assert!(pgm.starts_with(b"P5"));

    // a raw Rx-Xmit cube is expanded with --mla
    let direct = dir.path().join("direct.pgm");
    ok(&["beamform", "--cube", s(&cube), "--mla", "2", "--out", s(&direct)]);
    assert!(direct.is_file());
}

#[test]
fn train_then_evaluate_with_the_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let probe = small_probe(dir.path());
    let run = dir.path().join("run");
    ok(&[
        "train",
        "--probe-config",
        s(&probe),
        "--speckle",
        "100",
        "--phantoms",
        "6",
        "--planes",
        "2",
        "--epochs",
        "1",
        "--out",
        s(&run),
    ]);
    for f in ["manifest.json", "net.fnw", "training.csv", "training.json"] {
        assert!(run.join(f).is_file(), "{f} missing");
    }
    let eval = dir.path().join("eval");
    ok(&[
        "evaluate",
        "--probe-config",
        s(&probe),
        "--speckle",
        "100",
        "--method",
        "cnn",
        "--checkpoint",
        s(&run.join("net.fnw")),
        "--seed",
        "40",
        "--count",
        "2",
        "--out",
        s(&eval),
    ]);
    let csv = std::fs::read_to_string(eval.join("evaluate.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3, "{csv}");
    assert!(eval.join("phantom_40").join("metrics.csv").is_file());
}

#[test]
fn configuration_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let probe = small_probe(dir.path());
    let cube = dir.path().join("frame.rfc");
    ok(&["simulate", "--probe-config", s(&probe), "--speckle", "50", "--out", s(&cube)]);
    let out = dir.path().join("x.rfc");

    // the 4x2 scheme needs scan lines first
    let r = rfinterp(&["interpolate", "--cube", s(&cube), "--scheme", "rx_xmit_4x2", "--path", "rx_xmit_then_mla", "--out", s(&out)]);
    assert_eq!(code(&r), 2);
    assert!(!String::from_utf8_lossy(&r.stderr).is_empty());

    // cnn without a checkpoint, and with a missing one
    assert_eq!(code(&rfinterp(&["interpolate", "--cube", s(&cube), "--method", "cnn", "--out", s(&out)])), 2);
    let r = rfinterp(&["interpolate", "--cube", s(&cube), "--method", "cnn", "--checkpoint", "/no/such.fnw", "--out", s(&out)]);
    assert_eq!(code(&r), 2);

    // missing input file
    assert_eq!(code(&rfinterp(&["beamform", "--cube", "/no/such/cube.rfc", "--out", s(&out)])), 2);
    // unknown flag values are rejected by the parser with the same code
    assert_eq!(code(&rfinterp(&["mask", "--scheme", "rx_x3", "--out", s(&out)])), 2);
}

#[test]
fn corrupt_input_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let cube = dir.path().join("bad.rfc");
    std::fs::copy(small_probe(dir.path()), dir.path().join("bad.json")).unwrap();
    std::fs::write(&cube, b"RFC1 but not really").unwrap();
    let r = rfinterp(&["beamform", "--cube", s(&cube), "--out", s(&dir.path().join("b.pgm"))]);
    assert_eq!(code(&r), 1, "{}", String::from_utf8_lossy(&r.stderr));
}
