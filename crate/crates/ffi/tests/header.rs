use std::path::{Path, PathBuf};
use std::process::Command;

fn header() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("include")
        .join("microsplat.h")
}

const EXPORTS: &[&str] = &[
    "ms_last_error",
    "ms_version",
    "ms_scene_load",
    "ms_scene_new",
    "ms_scene_save",
    "ms_scene_len",
    "ms_scene_point",
    "ms_scene_free",
    "ms_prune",
    "ms_cameras_load",
    "ms_cameras_len",
    "ms_camera_size",
    "ms_cameras_free",
    "ms_render",
    "ms_image_metrics",
    "ms_train",
    "ms_gsdo_post",
    "ms_train_result_scene",
    "ms_train_result_report",
    "ms_train_result_psnr",
    "ms_train_result_free",
];

#[test]
fn header_declares_every_export() {
    let text = std::fs::read_to_string(header()).unwrap();
    for name in EXPORTS {
        assert!(
            text.contains(&format!("{name}(")),
            "{name} missing from header"
        );
    }
    assert!(text.contains("MS_STATUS_OK = 0"));
    assert!(text.contains("typedef struct MsScene MsScene;"));
}

const SMOKE: &str = r#"
#include <stdio.h>
#include <string.h>
#include "microsplat.h"

int main(void) {
    MsPoint pts[2];
    memset(pts, 0, sizeof pts);
    for (int i = 0; i < 2; i++) {
        pts[i].rotation[0] = 1.0;
        pts[i].log_scale[0] = pts[i].log_scale[1] = pts[i].log_scale[2] = -2.0;
    }
    pts[0].opacity_logit = -4.59511985013459; /* 0.01 */
    pts[1].opacity_logit = 0.0;               /* 0.5 */
    double bg[3] = {0, 0, 0};
    MsScene *s = NULL, *p = NULL;
    if (ms_scene_new(pts, 2, bg, &s) != MS_STATUS_OK) return 1;
    size_t removed = 0;
    if (ms_prune(s, 0.05, &p, &removed) != MS_STATUS_OK) return 2;
    if (removed != 1 || ms_scene_len(p) != 1) return 3;
    if (ms_prune(s, 0.9, &p, NULL) != MS_STATUS_EMPTY_SCENE) return 4;
    if (ms_last_error() == NULL) return 5;
    if (ms_scene_load(NULL, &p) != MS_STATUS_NULL_POINTER) return 6;
    ms_scene_free(p);
    ms_scene_free(s);
    printf("%s ok\n", ms_version());
    return 0;
}
"#;

fn cc() -> Option<String> {
    ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| {
            Command::new(c)
                .arg("--version")
                .output()
                .is_ok_and(|o| o.status.success())
        })
        .map(String::from)
}

/// The static library cargo built next to this test binary.
fn static_lib() -> Option<PathBuf> {
    let exe = std::env::current_exe().ok()?;
    let profile_dir = exe.parent()?.parent()?;
    let lib = profile_dir.join("libmicrosplat_ffi.a");
    lib.exists().then_some(lib)
}

#[test]
fn c_program_compiles_links_and_runs() {
    let Some(cc) = cc() else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    std::fs::write(&src, SMOKE).unwrap();
    let include = header().parent().unwrap().to_path_buf();

    let syntax = Command::new(&cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(&include)
        .arg(&src)
        .output()
        .unwrap();
    assert!(
        syntax.status.success(),
        "{}",
        String::from_utf8_lossy(&syntax.stderr)
    );

    let Some(lib) = static_lib() else {
        eprintln!("static library not found; skipping link step");
        return;
    };
    let exe = dir.path().join("smoke");
    let link = Command::new(&cc)
        .arg("-I")
        .arg(&include)
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .output()
        .unwrap();
    assert!(
        link.status.success(),
        "{}",
        String::from_utf8_lossy(&link.stderr)
    );
    let run = Command::new(&exe).output().unwrap();
    assert!(run.status.success(), "exit {:?}", run.status.code());
    assert!(String::from_utf8_lossy(&run.stdout).contains("ok"));
}
