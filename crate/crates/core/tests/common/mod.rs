#![allow(dead_code)]

use std::io::Write;

use reacta::cli::{Artifacts, BuildParams};
use reacta::corpus::{generate_synthetic, SyntheticConfig, DEFAULT_SESSION_GAP};

pub fn synthetic_artifacts(config: &SyntheticConfig, params: &BuildParams) -> Artifacts {
    let corpus = generate_synthetic(config).expect("valid generator config");
    let sessions = corpus.sessionize(DEFAULT_SESSION_GAP, config.k).expect("sessionise");
    Artifacts::build(sessions.sequences, &sessions.catalog, &corpus.audio, params).expect("build artifacts")
}

/// 20 users, 200 tracks, 20 sessions each, L = 8, d = 16.
pub fn desk_artifacts(seed: u64, p_repeat: f64) -> Artifacts {
    desk_artifacts_with(seed, p_repeat, 200)
}

pub fn desk_artifacts_with(seed: u64, p_repeat: f64, n_tracks: usize) -> Artifacts {
    let config = SyntheticConfig {
        n_users: 20,
        n_tracks,
        sessions_per_user: 20,
        k: 10,
        p_repeat,
        d_audio: 16,
        seed,
        ..SyntheticConfig::default()
    };
    let params = BuildParams {
        window: 8,
        n_val: 2,
        n_test: 2,
        d: 16,
        decay: 0.5,
        seed,
    };
    synthetic_artifacts(&config, &params)
}

/// Prints one verdict line past the test harness's output capture.
pub fn verdict(criterion: u32, name: &str, passed: bool, detail: &str) {
    let status = if passed { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "criterion {criterion} [{status}] {name}: {detail}");
    let _ = out.flush();
}
