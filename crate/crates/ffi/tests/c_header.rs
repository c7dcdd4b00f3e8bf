//! Compiles and runs a C program against the generated header and the
//! static library.

use std::path::PathBuf;
use std::process::Command;

const PROGRAM: &str = r#"
#include <math.h>
#include <stdio.h>
#include <string.h>
#include "motionsrvf.h"

int main(void) {
    double c[5 * 2 * 2];
    for (int k = 0; k < 5; ++k) {
        double t = k / 4.0;
        c[4 * k + 0] = t;
        c[4 * k + 1] = sin(3.0 * t);
        c[4 * k + 2] = 1.0 + t * t;
        c[4 * k + 3] = cos(2.0 * t);
    }
    MsSrvf *q = NULL;
    if (ms_srvf_encode(c, 5, 2, &q) != MS_OK) return 1;
    if (ms_srvf_intervals(q) != 4 || ms_srvf_dim(q) != 4) return 2;
    double d = -1.0;
    if (ms_geodesic_distance(q, q, &d) != MS_OK || d > 1e-7) return 3;
    if (ms_srvf_encode(NULL, 5, 2, &q) != MS_ERR_NULL) return 4;
    if (ms_last_error_message() == NULL) return 5;
    ms_srvf_free(q);
    printf("%s\n", ms_version());
    return 0;
}
"#;

fn target_dir() -> PathBuf {
    // <target>/<profile>/deps/<test binary>
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn c_program_links_and_runs() {
    let lib_dir = target_dir();
    let lib = lib_dir.join("libmotionsrvf_ffi.a");
    assert!(lib.exists(), "static library missing at {}", lib.display());
    let include = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(&src, PROGRAM).unwrap();
    let exe = dir.path().join("main");
    let status = Command::new("cc")
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg(&src)
        .arg("-I")
        .arg(&include)
        .arg(&lib)
        .args(["-lm", "-lpthread", "-ldl", "-o"])
        .arg(&exe)
        .status()
        .expect("C compiler available");
    assert!(status.success());
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), env!("CARGO_PKG_VERSION"));
}
