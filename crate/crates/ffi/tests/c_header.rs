//! Compiles and runs a small C program against the generated header and the
//! static library. Skipped when no C compiler is on the PATH.

use std::path::{Path, PathBuf};
use std::process::Command;

const PROGRAM: &str = r#"
#include <stdio.h>
#include <string.h>
#include "otflow.h"

int main(void) {
    double p[] = {0, 0, 0, 1, 0, 0, 0, 1, 0, 1, 1, 0};
    double q[] = {0, 0, 0.5, 1, 0, 0.5, 0, 1, 0.5, 1, 1, 0.5};
    OtflowCloud *a = NULL, *b = NULL;
    OtflowConfig *config = NULL;
    OtflowLabels *labels = NULL;
    if (otflow_cloud_new(p, 4, &a) != OTFLOW_STATUS_OK) return 1;
    if (otflow_cloud_new(q, 4, &b) != OTFLOW_STATUS_OK) return 2;
    if (otflow_config_default(&config) != OTFLOW_STATUS_OK) return 3;
    if (otflow_config_set_measures(config, false, false) != OTFLOW_STATUS_OK) return 4;
    if (otflow_config_set_refinement(config, OTFLOW_REFINEMENT_OFF) != OTFLOW_STATUS_OK) return 5;
    if (otflow_generate_labels(a, b, NULL, config, &labels) != OTFLOW_STATUS_OK) {
        char msg[256];
        otflow_last_error(msg, sizeof msg);
        fprintf(stderr, "%s\n", msg);
        return 6;
    }
    double flow[12];
    unsigned char valid[4];
    if (otflow_labels_copy(labels, flow, valid, 4) != OTFLOW_STATUS_OK) return 7;
    for (int i = 0; i < 4; i++) {
        if (!valid[i] || flow[3 * i + 2] != 0.5) return 8;
    }
    if (otflow_config_set_alpha(config, 3.0) != OTFLOW_STATUS_INVALID_ARGUMENT) return 9;
    otflow_labels_free(labels);
    otflow_config_free(config);
    otflow_cloud_free(a);
    otflow_cloud_free(b);
    printf("ok %s\n", otflow_version());
    return 0;
}
"#;

fn find_static_lib(target_dir: &Path) -> Option<PathBuf> {
    ["release", "debug"]
        .iter()
        .map(|profile| target_dir.join(profile).join("libotflow_ffi.a"))
        .filter(|p| p.is_file())
        .max_by_key(|p| p.metadata().and_then(|m| m.modified()).ok())
}

#[test]
fn c_program_links_against_the_static_library() {
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let compiler = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    if Command::new(&compiler).arg("--version").output().is_err() {
        eprintln!("no C compiler, skipping");
        return;
    }
    // the test binary lives in <target>/<profile>/deps
    let exe = std::env::current_exe().unwrap();
    let target_dir = exe.ancestors().nth(3).unwrap().to_path_buf();
    let Some(lib) = find_static_lib(&target_dir) else {
        panic!("libotflow_ffi.a not found under {}", target_dir.display());
    };

    let dir = tempfile_dir();
    let source = dir.join("main.c");
    std::fs::write(&source, PROGRAM).unwrap();
    let binary = dir.join("main");
    let status = Command::new(&compiler)
        .args(["-std=c99", "-Wall", "-Werror", "-o"])
        .arg(&binary)
        .arg(&source)
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm"])
        .status()
        .unwrap();
    assert!(status.success(), "C compilation failed");
    let run = Command::new(&binary).output().unwrap();
    assert!(
        run.status.success(),
        "C program failed: {:?} {}",
        run.status,
        String::from_utf8_lossy(&run.stderr)
    );
    assert!(String::from_utf8_lossy(&run.stdout).starts_with("ok "));
}

fn tempfile_dir() -> PathBuf {
    let dir = std::env::temp_dir().join(format!("otflow-ffi-c-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}
