//! Compiles and runs a C program against the generated header and the
//! static library.

use std::path::PathBuf;
use std::process::Command;

const PROGRAM: &str = r#"
#include <math.h>
#include <stdio.h>
#include "topoguard.h"

int main(void) {
    TgOperator *op = NULL;
    if (tg_operator_lri(2, 1.0, 1.0, &op) != TG_STATUS_OK) return 1;
    TgSpectrum *s = NULL;
    if (tg_ground_doublet(op, &s) != TG_STATUS_OK) return 2;
    size_t deg = 0;
    double gap = 0.0;
    tg_spectrum_ground_degeneracy(s, &deg);
    tg_spectrum_gap(s, &gap);
    tg_spectrum_free(s);
    tg_operator_free(op);
    if (deg != 2 || fabs(gap - 4.0 * (sqrt(2.0) - 1.0)) > 1e-10) return 3;
    if (tg_operator_lri(0, 1.0, 1.0, &op) != TG_STATUS_INVALID_LATTICE) return 4;
    if (tg_last_error_message() == NULL) return 5;
    printf("%s %zu %.12f\n", tg_version(), deg, gap);
    return 0;
}
"#;

#[test]
fn c_program_links_and_runs() {
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let deps = std::env::current_exe().unwrap().parent().unwrap().to_path_buf();
    let lib = deps.join("libtopoguard_ffi.a");
    assert!(lib.exists(), "static library not found at {}", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    let exe = dir.path().join("main");
    std::fs::write(&src, PROGRAM).unwrap();
    let status = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-I"])
        .arg(manifest.join("include"))
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .expect("C compiler available");
    assert!(status.success());
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with(env!("CARGO_PKG_VERSION")));
    assert!(text.contains(" 2 "));
}
