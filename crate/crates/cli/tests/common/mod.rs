#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn emotest() -> Command {
    Command::new(env!("CARGO_BIN_EXE_emotest"))
}

pub fn double() -> &'static str {
    env!("CARGO_BIN_EXE_model-double")
}

pub fn fixture(dir: &Path) -> PathBuf {
    let out = dir.join("fx");
    emotest_cli::fixture::write_fixture(&out, 7).expect("fixture");
    out
}

/// Arguments of the golden run over a fixture directory.
pub fn golden_args(fx: &Path, work: &Path) -> Vec<String> {
    let m = fx.join("manifest.jsonl").display().to_string();
    let pools = ["speech", "environment", "music", "cough"]
        .iter()
        .map(|r| format!("{r}={}", fx.join("pools").join(r).display()))
        .collect::<Vec<_>>()
        .join(",");
    vec![
        "run".into(),
        "--manifests".into(),
        format!("msp1={m},emovo={m}"),
        "--command".into(),
        double().into(),
        "--model-id".into(),
        "model-double".into(),
        "--tasks".into(),
        "valence,categories".into(),
        "--seed".into(),
        "1".into(),
        "--balance-target".into(),
        "30".into(),
        "--pool".into(),
        pools,
        "--ir-set".into(),
        format!("mardy={}", fx.join("irs").display()),
        "--workdir".into(),
        work.display().to_string(),
    ]
}

pub fn run(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("spawn");
    out
}

pub fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}
