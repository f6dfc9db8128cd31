use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use reacta::cli::{cmd_build, cmd_gen_data, cmd_train, resolve, ConfigFlags, Overrides, Preset, AUDIO_FILE, EVENTS_FILE};
use reacta::scoring::ModelKind;
use reacta_ffi::*;

struct Fixture {
    _root: tempfile::TempDir,
    data: PathBuf,
    run: PathBuf,
}

fn fixture() -> Fixture {
    let root = tempfile::tempdir().unwrap();
    let flags = ConfigFlags {
        preset: Some(Preset::Desk),
        overrides: Overrides {
            n_users: Some(5),
            n_tracks: Some(50),
            sessions_per_user: Some(8),
            window: Some(3),
            n_val: Some(1),
            n_test: Some(1),
            d: Some(8),
            d_audio: Some(6),
            epochs: Some(1),
            ..Overrides::default()
        },
        ..ConfigFlags::default()
    };
    let resolved = resolve(&flags).unwrap();
    let (gen, data) = (root.path().join("gen"), root.path().join("data"));
    cmd_gen_data(&resolved, &gen).unwrap();
    cmd_build(&resolved, &gen.join(EVENTS_FILE), &gen.join(AUDIO_FILE), &data).unwrap();
    let run = cmd_train(&resolved, &data, ModelKind::ReactaU, &root.path().join("runs")).unwrap();
    Fixture { _root: root, data, run }
}

fn c(s: &Path) -> CString {
    CString::new(s.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let p = reacta_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

unsafe fn open(data: &Path, run: Option<&Path>, model: &str) -> (ReactaStatus, *mut ReactaRecommender) {
    let (data, model) = (c(data), CString::new(model).unwrap());
    let run = run.map(c);
    let mut out = ptr::null_mut();
    let status = reacta_recommender_open(
        data.as_ptr(),
        run.as_ref().map_or(ptr::null(), |r| r.as_ptr()),
        model.as_ptr(),
        0.5,
        1800,
        &mut out,
    );
    (status, out)
}

#[test]
fn recommends_through_opaque_handles() {
    let fx = fixture();
    unsafe {
        let (status, rec) = open(&fx.data, Some(&fx.run), "reacta-u");
        assert_eq!(status, ReactaStatus::Ok);
        assert_eq!(reacta_recommender_user_count(rec), 5);

        let user = CStr::from_ptr(reacta_recommender_user(rec, 0)).to_owned();
        assert!(reacta_recommender_user(rec, 5).is_null());
        let mut list = ptr::null_mut();
        assert_eq!(reacta_recommend(rec, user.as_ptr(), 7, &mut list), ReactaStatus::Ok, "{}", last_error());
        let n = reacta_recommendation_len(list);
        assert_eq!(n, 7);
        let mut prev = f64::INFINITY;
        for i in 0..n {
            let id = CStr::from_ptr(reacta_recommendation_track(list, i)).to_str().unwrap();
            assert!(!id.is_empty());
            let s = reacta_recommendation_score(list, i);
            assert!(s <= prev);
            prev = s;
        }
        assert!(reacta_recommendation_track(list, n).is_null());
        assert!(reacta_recommendation_score(list, n).is_nan());
        reacta_recommendation_free(list);

        let ghost = CString::new("nobody").unwrap();
        assert_eq!(reacta_recommend(rec, ghost.as_ptr(), 5, &mut list), ReactaStatus::Missing);
        assert!(list.is_null());
        assert!(last_error().contains("nobody"));
        assert_eq!(reacta_recommend(rec, user.as_ptr(), 0, &mut list), ReactaStatus::InvalidArgument);
        reacta_recommender_free(rec);
    }
}

#[test]
fn repeat_baseline_needs_no_run() {
    let fx = fixture();
    unsafe {
        let (status, rec) = open(&fx.data, None, "actr-repeat");
        assert_eq!(status, ReactaStatus::Ok);
        let user = CStr::from_ptr(reacta_recommender_user(rec, 1)).to_owned();
        let mut list = ptr::null_mut();
        assert_eq!(reacta_recommend(rec, user.as_ptr(), 10, &mut list), ReactaStatus::Ok);
        let n = reacta_recommendation_len(list);
        assert!(n > 0);
        assert!((0..n).all(|i| reacta_recommendation_repeated(list, i)));
        reacta_recommendation_free(list);
        reacta_recommender_free(rec);
    }
}

#[test]
fn failures_report_status_and_message() {
    let dir = tempfile::tempdir().unwrap();
    unsafe {
        let (status, rec) = open(dir.path(), None, "actr-repeat");
        assert_eq!(status, ReactaStatus::Missing);
        assert!(rec.is_null());
        assert!(last_error().contains("manifest.json"));

        let (status, _) = open(dir.path(), None, "gru4rec");
        assert_eq!(status, ReactaStatus::InvalidArgument);
        assert!(last_error().contains("gru4rec"));

        let mut out = ptr::null_mut();
        let model = CString::new("actr-repeat").unwrap();
        let s = reacta_recommender_open(ptr::null(), ptr::null(), model.as_ptr(), 0.5, 1800, &mut out);
        assert_eq!(s, ReactaStatus::NullArgument);
        assert!(last_error().contains("data_dir"));

        let bad = [0xffu8, 0];
        let s = reacta_recommender_open(bad.as_ptr().cast(), ptr::null(), model.as_ptr(), 0.5, 1800, &mut out);
        assert_eq!(s, ReactaStatus::InvalidUtf8);

        // null handles are tolerated by accessors and free functions
        assert_eq!(reacta_recommender_user_count(ptr::null()), 0);
        assert_eq!(reacta_recommendation_len(ptr::null()), 0);
        reacta_recommender_free(ptr::null_mut());
        reacta_recommendation_free(ptr::null_mut());
    }
}

#[test]
fn header_compiles_and_links_from_c() {
    let header_dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    assert!(header_dir.join("reacta.h").is_file());
    // target/<profile>/deps/<test binary> → target/<profile>
    let profile_dir = std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf();
    let lib = profile_dir.join("libreacta_ffi.a");
    if !lib.is_file() {
        eprintln!("skipping C link check: {} not built", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    std::fs::write(
        &src,
        r#"#include <stdio.h>
#include <string.h>
#include "reacta.h"
int main(void) {
    ReactaRecommender *rec = NULL;
    ReactaStatus s = reacta_recommender_open("/nonexistent", NULL, "actr-repeat", 0.5, 1800, &rec);
    if (s != REACTA_STATUS_MISSING || rec != NULL) return 1;
    if (strstr(reacta_last_error(), "manifest.json") == NULL) return 2;
    printf("%s\n", reacta_version());
    return 0;
}
"#,
    )
    .unwrap();
    let exe = dir.path().join("smoke");
    let status = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(&header_dir)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status();
    let Ok(status) = status else {
        eprintln!("skipping C link check: no C compiler");
        return;
    };
    assert!(status.success(), "C smoke test failed to compile");
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), env!("CARGO_PKG_VERSION"));
}
