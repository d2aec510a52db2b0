// SPDX-License-Identifier: Apache-2.0

//! Compiles a small C program against the generated header and, when the
//! static library is present next to the test binary, links and runs it.
//! Skipped when no C compiler is available.

use std::path::{Path, PathBuf};
use std::process::Command;

const PROGRAM: &str = r#"
#include <stdio.h>
#include "spguard.h"

int main(void) {
    SpgWorld *w = NULL;
    SpgMethod *m = NULL;
    size_t c, h, wd;
    if (spg_world_new_default(&w) != SPG_STATUS_OK) return 10;
    if (spg_world_shape(w, &c, &h, &wd) != SPG_STATUS_OK) return 11;
    if (spg_method_builtin("spguard", 7.5, &m) != SPG_STATUS_OK) return 12;
    double img[3 * 16 * 16];
    if (c * h * wd != 768) return 13;
    if (spg_sample(w, m, 1.0, 0, 0, img, 768) != SPG_STATUS_OK) return 14;
    double score = 0.0;
    if (spg_detector_score(w, img, 768, &score) != SPG_STATUS_OK) return 15;
    if (spg_sample(w, m, 2.0, 0, 0, img, 768) != SPG_STATUS_CONFIG) return 16;
    if (spg_last_error() == NULL) return 17;
    printf("%s %.6f\n", spg_version(), score);
    spg_method_free(m);
    spg_world_free(w);
    return 0;
}
"#;

fn compiler() -> Option<&'static str> {
    ["cc", "gcc", "clang"]
        .into_iter()
        .find(|cc| Command::new(cc).arg("--version").output().is_ok_and(|o| o.status.success()))
}

fn include_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include")
}

#[test]
fn header_compiles_as_c() {
    let Some(cc) = compiler() else {
        eprintln!("no C compiler; skipping");
        return;
    };
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    std::fs::write(&src, PROGRAM).unwrap();
    let out = Command::new(cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(include_dir())
        .arg(&src)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn links_and_runs_against_static_library() {
    let Some(cc) = compiler() else {
        eprintln!("no C compiler; skipping");
        return;
    };
    // target/<profile>/deps/<test binary> → target/<profile>/libspguard_ffi.a
    let exe = std::env::current_exe().unwrap();
    let lib = exe.parent().and_then(Path::parent).map(|p| p.join("libspguard_ffi.a"));
    let Some(lib) = lib.filter(|p| p.exists()) else {
        eprintln!("static library not built; skipping");
        return;
    };
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    let bin = dir.path().join("smoke");
    std::fs::write(&src, PROGRAM).unwrap();
    let out = Command::new(cc)
        .args(["-std=c99", "-O1", "-I"])
        .arg(include_dir())
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&bin).output().unwrap();
    assert!(run.status.success(), "exit {:?}", run.status.code());
    let stdout = String::from_utf8_lossy(&run.stdout);
    assert!(stdout.starts_with(env!("CARGO_PKG_VERSION")), "{stdout}");
}
