// SPDX-License-Identifier: Apache-2.0

use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = r#"
seeds = { count = 4 }

[[scenarios]]
id = "a1"
alpha = 1.0

[[methods]]
name = "CFG"
variant = "cfg"

[[methods]]
name = "SP-Guard"
variant = "spguard"

[calibration]
seeds = 30
"#;

fn spguard(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spguard"))
        .args(args)
        .current_dir(dir)
        .env("SOURCE_DATE_EPOCH", "0")
        .output()
        .unwrap()
}

#[test]
fn run_is_reproducible_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("exp.toml"), CONFIG).unwrap();
    let a = spguard(&["run", "--config", "exp.toml", "--out", "a", "--threads", "1"], dir.path());
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    let b = spguard(&["run", "--config", "exp.toml", "--out", "b", "--threads", "2"], dir.path());
    assert!(b.status.success());
    for f in ["metrics.csv", "manifest.json", "config.toml", "report.json", "tradeoff_a1.svg"] {
        let x = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let y = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(x, y, "{f} differs");
    }
    let csv = std::fs::read_to_string(dir.path().join("a/metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 4);

    // --seeds and --base-seed override the file
    let c = spguard(&["run", "--config", "exp.toml", "--out", "c", "--seeds", "2", "--base-seed", "10"], dir.path());
    assert!(c.status.success());
    let csv = std::fs::read_to_string(dir.path().join("c/metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 2);
    assert!(csv.contains(",SP-Guard,11,"));

    let plot = spguard(&["tradeoff-plot", "--out", "a", "--scenario", "a1"], dir.path());
    assert!(plot.status.success());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), CONFIG.replace("alpha = 1.0", "alpha = -0.5")).unwrap();
    let out = spguard(&["run", "--config", "bad.toml", "--out", "x"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 6"), "{err}");

    let out = spguard(&["run", "--config", "missing.toml"], dir.path());
    assert_eq!(out.status.code(), Some(1));

    std::fs::write(dir.path().join("exp.toml"), CONFIG).unwrap();
    let out = spguard(
        &["mask-dump", "--config", "exp.toml", "--out", "m", "--scenario", "a1", "--method", "CFG", "--steps", "5"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));

    std::fs::write(dir.path().join("nan.toml"), CONFIG.replace("variant = \"cfg\"", "variant = \"cfg\"\ns_g = 1e300")).unwrap();
    let out = spguard(&["run", "--config", "nan.toml", "--out", "n"], dir.path());
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));

    std::fs::write(dir.path().join("cal.toml"), CONFIG.replace("seeds = 30", "seeds = 30\ns_g = 0.0")).unwrap();
    let out = spguard(&["calibrate-detector", "--config", "cal.toml", "--out", "k"], dir.path());
    assert_eq!(out.status.code(), Some(4));
}
