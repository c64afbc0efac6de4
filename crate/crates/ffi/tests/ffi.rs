use std::ffi::{c_char, CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use gpmnet_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as c_char; gpm_last_error_length() + 1];
    let n = unsafe { gpm_last_error_message(buf.as_mut_ptr(), buf.len()) };
    assert!(n >= 0);
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

#[test]
fn generate_fit_and_read_back() {
    let fam = CString::new("butterfly-c").unwrap();
    let mut data = ptr::null_mut();
    let mut truth = ptr::null_mut();
    unsafe {
        assert_eq!(gpm_generate(fam.as_ptr(), 4, 300, 1, &mut data, &mut truth), GpmStatus::Ok);
        assert_eq!(gpm_dataset_rows(data), 300);
        assert_eq!(gpm_dataset_cols(data), 4);
        assert_eq!(gpm_graph_edge_count(truth), 2);

        let mut opts = std::mem::zeroed::<GpmFitOptions>();
        assert_eq!(gpm_fit_options_default(&mut opts), GpmStatus::Ok);
        assert_eq!(opts.penalty, GpmPenalty::Scad);
        opts.max_iters = 50;
        let mut fit = ptr::null_mut();
        assert_eq!(gpm_fit(data, &opts, &mut fit), GpmStatus::Ok);
        assert_eq!(gpm_fit_iterations(fit), 50);

        let mut omega = [0.0f64; 16];
        assert_eq!(gpm_fit_omega(fit, 0, omega.as_mut_ptr(), 3), GpmStatus::BufferTooSmall);
        assert!(last_error().contains("16"));
        assert_eq!(gpm_fit_omega(fit, 0, omega.as_mut_ptr(), 16), GpmStatus::Ok);
        let mut rooted = [0.0f64; 16];
        assert_eq!(gpm_fit_omega(fit, 1, rooted.as_mut_ptr(), 16), GpmStatus::Ok);
        for i in 0..4 {
            assert_eq!(omega[i * 4 + i], 0.0);
            for j in 0..4 {
                assert_eq!(omega[i * 4 + j], omega[j * 4 + i]);
                assert!((rooted[i * 4 + j] - omega[i * 4 + j].sqrt()).abs() < 1e-12);
            }
        }

        let mut est = ptr::null_mut();
        assert_eq!(gpm_fit_graph(fit, &mut est), GpmStatus::Ok);
        let m = gpm_graph_edge_count(est);
        let mut edges = vec![0u32; 2 * m];
        assert_eq!(gpm_graph_edges(est, edges.as_mut_ptr(), edges.len()), GpmStatus::Ok);
        assert!(edges.chunks(2).all(|e| e[0] < e[1]));
        let mut h = usize::MAX;
        assert_eq!(gpm_graph_hamming(est, truth, &mut h), GpmStatus::Ok);
        assert!(h <= 6);

        gpm_graph_free(est);
        gpm_graph_free(truth);
        gpm_fit_free(fit);
        gpm_dataset_free(data);
    }
}

#[test]
fn errors_set_status_and_message() {
    unsafe {
        let mut out = ptr::null_mut();
        assert_eq!(gpm_dataset_load(ptr::null(), &mut out), GpmStatus::NullPointer);
        assert!(last_error().contains("path"));
        let missing = CString::new("/nonexistent/data.csv").unwrap();
        assert_eq!(gpm_dataset_load(missing.as_ptr(), &mut out), GpmStatus::Io);
        assert!(out.is_null());
        let fam = CString::new("butterfly-c").unwrap();
        let (mut d, mut g) = (ptr::null_mut(), ptr::null_mut());
        assert_eq!(gpm_generate(fam.as_ptr(), 3, 10, 0, &mut d, &mut g), GpmStatus::InvalidArgument);
        assert!(last_error().contains("even"));
        let values = [1.0, f64::NAN];
        assert_ne!(gpm_dataset_from_continuous(values.as_ptr(), 1, 2, &mut out), GpmStatus::Ok);
        let mut small = [0 as c_char; 2];
        assert_eq!(gpm_last_error_message(small.as_mut_ptr(), small.len()), -1);
        gpm_dataset_free(ptr::null_mut());
        gpm_fit_free(ptr::null_mut());
        gpm_graph_free(ptr::null_mut());
    }
}

#[test]
fn verify_passes() {
    let mut passed = 0;
    assert_eq!(unsafe { gpm_verify(20, 2, &mut passed) }, GpmStatus::Ok);
    assert_eq!(passed, 1);
    assert_eq!(unsafe { gpm_verify(0, 2, &mut passed) }, GpmStatus::InvalidArgument);
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include/gpmnet.h")).unwrap();
    for name in [
        "gpm_last_error_length",
        "gpm_last_error_message",
        "gpm_version",
        "gpm_dataset_load",
        "gpm_dataset_from_continuous",
        "gpm_generate",
        "gpm_dataset_free",
        "gpm_fit_options_default",
        "gpm_fit",
        "gpm_fit_omega",
        "gpm_fit_graph",
        "gpm_graph_edges",
        "gpm_graph_hamming",
        "gpm_verify",
        "typedef struct GpmFit GpmFit",
        "GPM_STATUS_BUFFER_TOO_SMALL = 6",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}

/// Compiles the C example against the static library when a C compiler is
/// on the path.
#[test]
fn c_program_links_and_runs() {
    let Ok(cc) = which("cc") else {
        eprintln!("no C compiler; skipping");
        return;
    };
    let profile_dir = std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf();
    let lib = profile_dir.join("libgpmnet_ffi.a");
    if !lib.exists() {
        eprintln!("{} not built; skipping", lib.display());
        return;
    }
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let exe = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("gpmnet_smoke");
    let status = Command::new(cc)
        .arg(manifest.join("examples/smoke.c"))
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success());
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("rows 300"), "{text}");
    assert!(text.contains("load-status 4"), "{text}");
}

fn which(name: &str) -> Result<PathBuf, ()> {
    std::env::var_os("PATH").and_then(|p| std::env::split_paths(&p).map(|d| d.join(name)).find(|c| c.is_file())).ok_or(())
}
