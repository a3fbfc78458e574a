//! Same configuration and seed, same bytes: library runs, thread counts and
//! the command-line tool.

mod common;

use std::path::Path;
use std::process::Command;

use mds_core::campaign::{run_campaign, write_results, CampaignConfig};
use mds_core::lstm::save_model;
use mds_core::misbehavior::MisbehaviorSpec;
use mds_core::sim::{simulate, write_trace, Scenario};
use mds_core::MisbehaviorKind;

const BIN: &str = env!("CARGO_BIN_EXE_platoon-mds");

fn small_campaign() -> CampaignConfig {
    let mut c = CampaignConfig {
        sizes: vec![4],
        ids: [(4, vec![0, 2])].into(),
        kinds: vec![MisbehaviorKind::RandomPos, MisbehaviorKind::DataReplay],
        repetitions: 2,
        ..CampaignConfig::default()
    };
    c.params.duration = 60.0;
    c
}

fn campaign_bytes(threads: usize) -> Vec<u8> {
    let model = common::random_model(4, 6);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap();
    let results = pool
        .install(|| run_campaign(&small_campaign(), Some(&model)))
        .unwrap();
    let mut buf = Vec::new();
    write_results(&results, &mut buf).unwrap();
    buf
}

#[test]
fn simulate_is_reproducible() {
    let mut sc = Scenario::new(8, 77);
    sc.trace_stride = Some(10);
    sc.misbehavior = Some(MisbehaviorSpec {
        kind: MisbehaviorKind::Disruptive,
        vehicle: 3,
        activation_time: 20,
        seed: 5,
        offset_redraw: Default::default(),
    });
    sc.defense = true;
    let model = common::random_model(9, 4);
    let bytes = || {
        let out = simulate(&sc, Some(&model)).unwrap();
        let mut buf = serde_json::to_vec(&out).unwrap();
        write_trace(&out.trace, &mut buf).unwrap();
        buf
    };
    assert_eq!(bytes(), bytes());
}

#[test]
fn campaign_ignores_thread_count() {
    assert_eq!(campaign_bytes(1), campaign_bytes(3));
}

fn cli(args: &[&str]) -> String {
    let out = Command::new(BIN).args(args).output().unwrap();
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn cli_outputs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let d = |name: &str| dir.path().join(name).to_string_lossy().into_owned();
    let model = d("model.mds");
    save_model(&common::random_model(2, 6), Path::new(&model)).unwrap();

    for tag in ["a", "b"] {
        cli(&[
            "simulate",
            "--size",
            "4",
            "--kind",
            "eventualStop",
            "--attacker",
            "1",
            "--seed",
            "13",
            "--defense",
            "--model",
            &model,
            "--out",
            &d(&format!("sim_{tag}.json")),
            "--trace",
            &d(&format!("trace_{tag}.csv")),
        ]);
        cli(&[
            "--set",
            "sizes=4",
            "--set",
            "ids_4=1",
            "--set",
            "kinds=constPos,spdOffset",
            "--set",
            "repetitions=2",
            "--set",
            "duration=40",
            "campaign",
            "--model",
            &model,
            "--out",
            &d(&format!("runs_{tag}")),
        ]);
        cli(&["report", "--runs", &d(&format!("runs_{tag}"))]);
    }
    let same = |a: &str, b: &str| assert_eq!(read(Path::new(&d(a))), read(Path::new(&d(b))), "{a}");
    same("sim_a.json", "sim_b.json");
    same("trace_a.csv", "trace_b.csv");
    for f in [
        "runs.jsonl",
        "config.txt",
        "report.txt",
        "confusion.csv",
        "accidents.csv",
    ] {
        same(&format!("runs_a/{f}"), &format!("runs_b/{f}"));
    }
    let lines = std::fs::read_to_string(d("runs_a/runs.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 2 * 2 * 2);
}

#[test]
fn dumped_config_reloads_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.txt");
    let dump = cli(&["--set", "repetitions=4", "--dump-config"]);
    std::fs::write(&path, &dump).unwrap();
    let again = cli(&["--config", path.to_str().unwrap(), "--dump-config"]);
    assert_eq!(dump, again);
    assert!(dump.contains("repetitions = 4"));

    let bad = Command::new(BIN)
        .args(["--set", "repetitons=4", "--dump-config"])
        .output()
        .unwrap();
    assert!(!bad.status.success());
}

#[test]
fn campaign_refuses_to_start_without_a_model() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(BIN)
        .current_dir(dir.path())
        .args(["campaign", "--out", "runs"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("model"));
    assert!(!dir.path().join("runs").exists());
}
