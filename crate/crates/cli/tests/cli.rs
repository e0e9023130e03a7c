mod common;

use std::fs;

use common::*;
use emotest::report::RunReport;
use emotest::Task;

#[test]
fn run_on_fixture_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let fx = fixture(dir.path());
    let work = dir.path().join("work");
    let out = run(emotest().args(golden_args(&fx, &work)));
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert!(work.join("report.json").is_file());
    assert!(work.join("report.md").is_file());
}

#[test]
fn missing_manifest_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.jsonl");
    let out = run(emotest().args([
        "run",
        "--manifests",
        &format!("msp1={}", missing.display()),
        "--predictions",
        dir.path().to_str().unwrap(),
    ]));
    assert!(!out.status.success());
    assert!(text(&out.stderr).contains(&missing.display().to_string()), "{}", text(&out.stderr));
}

#[test]
fn tasks_flag_limits_sections() {
    let dir = tempfile::tempdir().unwrap();
    let fx = fixture(dir.path());
    let work = dir.path().join("work");
    let out = run(emotest().args([
        "run",
        "--manifests",
        &format!("msp1={}", fx.join("manifest.jsonl").display()),
        "--command",
        double(),
        "--tasks",
        "arousal,valence",
        "--workdir",
        work.to_str().unwrap(),
    ]));
    assert!(out.status.success(), "{}", text(&out.stderr));
    let report = RunReport::parse(&fs::read(work.join("report.json")).unwrap()).unwrap();
    assert_eq!(report.tasks, vec![Task::Arousal, Task::Valence]);
    assert!(report.results.iter().all(|r| matches!(r.task, Task::Arousal | Task::Valence)));
    let md = fs::read_to_string(work.join("report.md")).unwrap();
    assert!(md.contains("## arousal") && md.contains("## valence"));
    assert!(!md.contains("## categories") && !md.contains("## dominance"));
}

#[test]
fn gate_turns_low_score_into_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let fx = fixture(dir.path());
    let mut args = golden_args(&fx, &dir.path().join("work"));
    args.extend(["--gate".into(), "1.01".into()]);
    let out = run(emotest().args(&args));
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn model_failure_is_data_not_a_crash() {
    let dir = tempfile::tempdir().unwrap();
    let fx = fixture(dir.path());
    let work = dir.path().join("work");
    let out = run(emotest().args([
        "run",
        "--manifests",
        &format!("msp1={}", fx.join("manifest.jsonl").display()),
        "--command",
        "false",
        "--tasks",
        "valence",
        "--workdir",
        work.to_str().unwrap(),
    ]));
    assert!(out.status.success(), "{}", text(&out.stderr));
    let report = RunReport::parse(&fs::read(work.join("report.json")).unwrap()).unwrap();
    assert!(report
        .results
        .iter()
        .flat_map(|r| &r.instances)
        .all(|i| i.skipped && i.skip_reason.as_deref().unwrap_or("").contains("exited")));
}

#[test]
fn simulate_grid_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let sim = |name: &str, repeats: &str| {
        let out_path = dir.path().join(name);
        let grid = dir.path().join(format!("{name}.grid"));
        let out = run(emotest().args([
            "simulate-thresholds",
            "--metric",
            "diff_mean",
            "--groups",
            "2,3",
            "--samples",
            "100,600",
            "--repeats",
            repeats,
            "--seed",
            "5",
            "--out",
            out_path.to_str().unwrap(),
            "--grid",
            grid.to_str().unwrap(),
        ]));
        assert!(out.status.success(), "{}", text(&out.stderr));
        (fs::read(out_path).unwrap(), fs::read_to_string(grid).unwrap(), text(&out.stderr))
    };
    let (a, grid, _) = sim("a.tsv", "1000");
    let (b, _, _) = sim("b.tsv", "1000");
    assert_eq!(a, b);
    let row = grid
        .lines()
        .find(|l| l.starts_with("diff_mean\t3\t600\t"))
        .expect("3 x 600 row");
    let v: f64 = row.rsplit('\t').next().unwrap().parse().unwrap();
    assert!(v < 0.025, "{v}");

    let (_, grid1, stderr) = sim("c.tsv", "1");
    assert_eq!(grid1.lines().count(), 5);
    assert!(stderr.contains("unstable"), "{stderr}");
}

#[test]
fn perturb_directory() {
    let dir = tempfile::tempdir().unwrap();
    let fx = fixture(dir.path());
    let go = |out: &str, seed: &str| {
        let o = dir.path().join(out);
        let r = run(emotest().args([
            "perturb",
            "--kind",
            "white_noise",
            "--params",
            r#"{"snr_db": 20}"#,
            "--seed",
            seed,
            "--in",
            fx.join("audio").to_str().unwrap(),
            "--out",
            o.to_str().unwrap(),
        ]));
        assert!(r.status.success(), "{}", text(&r.stderr));
        o
    };
    let a = go("a", "3");
    let b = go("b", "3");
    let c = go("c", "4");
    let count = |d: &std::path::Path| fs::read_dir(d).unwrap().count();
    assert_eq!(count(&a), count(&fx.join("audio")));
    let f = "spk1_00.wav";
    assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap());
    assert_ne!(fs::read(a.join(f)).unwrap(), fs::read(c.join(f)).unwrap());
}

#[test]
fn perturb_unknown_kind_lists_kinds() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(emotest().args([
        "perturb",
        "--kind",
        "reverse",
        "--in",
        dir.path().to_str().unwrap(),
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]));
    assert!(!out.status.success());
    let err = text(&out.stderr);
    assert!(err.contains("white_noise") && err.contains("spectral_tilt"), "{err}");
}

#[test]
fn compare_checks_hashes() {
    let dir = tempfile::tempdir().unwrap();
    let fx = fixture(dir.path());
    let work = dir.path().join("work");
    assert!(run(emotest().args(golden_args(&fx, &work))).status.success());
    let a = work.join("report.json");
    let ok = run(emotest().args(["compare", a.to_str().unwrap(), a.to_str().unwrap()]));
    assert!(ok.status.success(), "{}", text(&ok.stderr));
    assert!(text(&ok.stdout).contains("+0.0 pts"));

    let mut other = RunReport::parse(&fs::read(&a).unwrap()).unwrap();
    other.environment.registry_hash = "different".into();
    let b = dir.path().join("b.json");
    fs::write(&b, serde_json::to_vec(&other).unwrap()).unwrap();
    let bad = run(emotest().args(["compare", a.to_str().unwrap(), b.to_str().unwrap()]));
    assert!(!bad.status.success());
    assert!(text(&bad.stderr).contains("not comparable"));
}
