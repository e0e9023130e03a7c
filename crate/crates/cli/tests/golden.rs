mod common;

use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use common::*;

/// Set `EMOTEST_UPDATE_GOLDEN=1` to rewrite the golden files after reviewing a change.
#[test]
fn golden_run_matches() {
    let dir = tempfile::tempdir().unwrap();
    let fx = fixture(dir.path());
    let work = dir.path().join("work");
    let start = Instant::now();
    let out = run(emotest().args(golden_args(&fx, &work)));
    let elapsed = start.elapsed();
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert!(elapsed < Duration::from_secs(60), "{elapsed:?}");

    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    for name in ["report.json", "report.md"] {
        let got = fs::read(work.join(name)).unwrap();
        if std::env::var_os("EMOTEST_UPDATE_GOLDEN").is_some() {
            fs::write(golden.join(name), &got).unwrap();
        }
        let want = fs::read(golden.join(name)).unwrap_or_default();
        assert!(got == want, "{name} differs from the golden copy");
    }
}
