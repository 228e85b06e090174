use std::path::{Path, PathBuf};
use std::process::Command;

fn target_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().and_then(Path::parent).unwrap().to_path_buf()
}

#[test]
fn c_program_links_and_runs() {
    let crate_dir = Path::new(env!("CARGO_MANIFEST_DIR"));
    let lib = target_dir().join("libgeodyn_ffi.a");
    assert!(lib.is_file(), "static library missing at {}", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let status = Command::new("cc")
        .arg("-std=c11")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(crate_dir.join("include"))
        .arg(crate_dir.join("tests/c/smoke.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm"])
        .arg("-o")
        .arg(&exe)
        .status()
        .expect("C compiler runs");
    assert!(status.success());
    let out = Command::new(&exe).arg(dir.path().join("c.gtrc")).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "ok");
}

#[test]
fn header_is_current() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/geodyn.h")).unwrap();
    for name in [
        "geodyn_last_error_message",
        "geodyn_trace_writer_create",
        "geodyn_trace_reader_next",
        "geodyn_monitor_push",
        "geodyn_regulator_observe",
        "geodyn_solve_entropy_temperature",
        "geodyn_bin_project",
        "typedef struct GeodynMonitor GeodynMonitor",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
}
