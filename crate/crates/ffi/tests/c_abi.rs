use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use c2f_core::synthetic::{generate, write_to_dir, GenSpec};
use c2f_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(c2f_last_error_message()) }
        .to_string_lossy()
        .into_owned()
}

fn cstr(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn header_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include")
}

/// The built static library, found in an ancestor of the test binary.
fn static_lib() -> Option<PathBuf> {
    let exe = std::env::current_exe().ok()?;
    exe.ancestors()
        .map(|d| d.join("libc2f_ffi.a"))
        .find(|p| p.is_file())
}

const C_PROGRAM: &str = r#"
#include <math.h>
#include <stdio.h>
#include <string.h>
#include "c2f.h"

int main(void) {
    size_t seeds[2] = {3, 40};
    size_t totals[2] = {20, 100};
    uint32_t r = 0;
    if (c2f_select_r(seeds, totals, 2, &r) != C2F_STATUS_OK || r != 15) return 1;

    double p[2] = {1.0, 0.0};
    double protos[6] = {1.0, 0.0, 0.0, 1.0, 0.6, 0.8};
    double out[3];
    if (c2f_similarity(p, protos, 3, 2, "csls", 2, out) != C2F_STATUS_OK) return 2;
    /* cosines 1, 0, 0.6; mean of top two is 0.8 */
    if (fabs(out[0] - 0.2) > 1e-12 || fabs(out[1] + 0.8) > 1e-12) return 3;

    if (c2f_similarity(p, protos, 3, 2, "bogus", 2, out) != C2F_STATUS_CONFIG) return 4;
    if (strstr(c2f_last_error_message(), "bogus") == NULL) return 5;

    size_t gold[3] = {0, 0, 1};
    size_t pred[3] = {0, 1, 1};
    double micro, macro;
    if (c2f_f1_scores(gold, pred, 3, 2, &micro, &macro) != C2F_STATUS_OK) return 6;
    if (fabs(micro - 2.0 / 3.0) > 1e-12 || fabs(macro - 2.0 / 3.0) > 1e-12) return 7;

    if (c2f_config_load(NULL, NULL) != C2F_STATUS_NULL_POINTER) return 8;
    c2f_config_free(NULL);
    printf("ok %s\n", c2f_version());
    return 0;
}
"#;

#[test]
fn header_compiles_as_c_and_cpp() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("check.c");
    std::fs::write(&src, "#include \"c2f.h\"\nint main(void) { return C2F_STATUS_OK; }\n").unwrap();
    for (compiler, lang) in [("cc", "c"), ("c++", "c++")] {
        let status = Command::new(compiler)
            .args(["-fsyntax-only", "-Wall", "-Werror", "-x", lang])
            .arg("-I")
            .arg(header_dir())
            .arg(&src)
            .status()
            .expect("C compiler available");
        assert!(status.success(), "{compiler} rejected the header");
    }
}

#[test]
fn c_program_links_and_runs() {
    let Some(lib) = static_lib() else {
        panic!("libc2f_ffi.a not found next to the test binary");
    };
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    let exe = dir.path().join("main");
    std::fs::write(&src, C_PROGRAM).unwrap();
    let status = Command::new("cc")
        .args(["-std=c11", "-Wall", "-Werror"])
        .arg("-I")
        .arg(header_dir())
        .arg(&src)
        .arg(&lib)
        .args(["-lm", "-lpthread", "-ldl", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success(), "link failed");
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "C program exited with {:?}", out.status.code());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.trim(), format!("ok {}", env!("CARGO_PKG_VERSION")));
}

#[test]
fn select_r_rejects_inconsistent_counts() {
    let (s, t) = ([5usize, 1], [4usize, 10]);
    let mut r = 0;
    let status = unsafe { c2f_select_r(s.as_ptr(), t.as_ptr(), 2, &mut r) };
    assert_eq!(status, C2fStatus::InvalidArgument);
    assert!(last_error().contains("coarse 0"));
    let status = unsafe { c2f_select_r(s.as_ptr(), t.as_ptr(), 0, &mut r) };
    assert_eq!(status, C2fStatus::Config);
}

#[test]
fn similarity_rejects_bad_k() {
    let p = [1.0, 0.0];
    let protos = [1.0, 0.0, 0.0, 1.0];
    let metric = CString::new("csls").unwrap();
    let mut out = [0.0; 2];
    let status = unsafe { c2f_similarity(p.as_ptr(), protos.as_ptr(), 2, 2, metric.as_ptr(), 3, out.as_mut_ptr()) };
    assert_eq!(status, C2fStatus::InvalidArgument);
    let status = unsafe { c2f_similarity(p.as_ptr(), protos.as_ptr(), 2, 2, metric.as_ptr(), 1, ptr::null_mut()) };
    assert_eq!(status, C2fStatus::NullPointer);
}

#[test]
fn run_through_config_handle() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(&GenSpec {
        per_fine: 40,
        dim: 32,
        ..GenSpec::default()
    })
    .unwrap();
    let paths = write_to_dir(&data, dir.path().join("data")).unwrap();
    let out_dir = dir.path().join("run");

    let mut config: *mut C2fConfig = ptr::null_mut();
    let status = unsafe {
        c2f_config_new(
            cstr(&paths.taxonomy).as_ptr(),
            cstr(&paths.corpus).as_ptr(),
            cstr(&paths.passages).as_ptr(),
            cstr(&paths.prototypes).as_ptr(),
            cstr(&out_dir).as_ptr(),
            &mut config,
        )
    };
    assert_eq!(status, C2fStatus::Ok, "{}", last_error());
    let metric = CString::new("cosine").unwrap();
    unsafe {
        assert_eq!(c2f_config_set_seed(config, 3), C2fStatus::Ok);
        assert_eq!(c2f_config_set_metric(config, metric.as_ptr()), C2fStatus::Ok);
        assert_eq!(c2f_config_set_r(config, 10), C2fStatus::Ok);
        assert_eq!(c2f_config_set_r(config, 101), C2fStatus::Config);
        assert_eq!(c2f_config_set_no_bootstrap(config, false), C2fStatus::Ok);
    }

    let mut summary = C2fRunSummary::default();
    let status = unsafe { c2f_run(config, &mut summary) };
    assert_eq!(status, C2fStatus::Ok, "{}", last_error());
    assert_eq!(summary.r_percent, 10);
    assert_eq!(summary.n_passages, 360);
    assert!(summary.macro_f1 > 0.0 && summary.macro_f1 <= 1.0);

    let (mut micro, mut macro_) = (0.0, 0.0);
    let status = unsafe {
        c2f_evaluate_files(
            cstr(&paths.taxonomy).as_ptr(),
            cstr(&paths.corpus).as_ptr(),
            cstr(&out_dir.join("predictions.tsv")).as_ptr(),
            &mut micro,
            &mut macro_,
        )
    };
    assert_eq!(status, C2fStatus::Ok, "{}", last_error());
    assert!((micro - summary.micro_f1).abs() < 1e-12);
    assert!((macro_ - summary.macro_f1).abs() < 1e-12);
    unsafe { c2f_config_free(config) };
}

#[test]
fn missing_config_file_is_an_io_error() {
    let mut config: *mut C2fConfig = ptr::null_mut();
    let path = CString::new("/nonexistent/c2f.toml").unwrap();
    let status = unsafe { c2f_config_load(path.as_ptr(), &mut config) };
    assert_eq!(status, C2fStatus::Io);
    assert!(config.is_null());
    assert!(last_error().contains("/nonexistent/c2f.toml"));
}
