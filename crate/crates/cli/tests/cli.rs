use std::path::{Path, PathBuf};
use std::process::Command;

use uqbench_cli::config::{parse_config_str, Overrides};
use uqbench_cli::manifest::{Manifest, Status};
use uqbench_cli::record::RunRecord;
use uqbench_cli::runner;
use uqbench_cli::tables::band_hit_rate;

fn overrides(out: &Path, workers: usize) -> Overrides {
    Overrides { seed: None, workers: Some(workers), output: Some(out.to_path_buf()), paper_scale: false }
}

fn files_below(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

const SMALL_E1: &str = r#"
experiment = "E1"
complexity = [1, 3]
k = 2
seed = 11
epochs = 15
hidden = [12, 6]

[[methods]]
name = "BLR"

[[methods]]
name = "BD"
rate = 0.2
mc_samples = 10

[[methods]]
name = "EnsBS"
members = 2
"#;

// A single band is one correlated draw, so individual runs can dip below
// 0.9; the average over seeds sits at the nominal level.
#[test]
fn anchor_band_covers_truth_with_one_repetition() {
    for (exp, c) in [("E1", 1.0), ("E1", 4.0), ("E2", 2.0)] {
        let rates: Vec<f64> = (0..20)
            .map(|seed| {
                let dir = tempfile::tempdir().unwrap();
                let text =
                    format!("experiment = \"{exp}\"\ncomplexity = [{c}]\nk = 1\nseed = {seed}\n[[methods]]\nname = \"BLR\"\n");
                let summary = runner::run(&parse_config_str(&text, &overrides(dir.path(), 1)).unwrap()).unwrap();
                band_hit_rate(&RunRecord::read(&summary.root.join(format!("c{c}/BLR/record.json"))).unwrap())
            })
            .collect();
        let mean = rates.iter().sum::<f64>() / rates.len() as f64;
        let meeting = rates.iter().filter(|&&r| r >= 0.9).count();
        assert!(mean >= 0.9, "{exp} c={c}: mean band hit rate {mean}");
        assert!(meeting >= 12, "{exp} c={c}: only {meeting}/20 runs reach 0.9");
    }
}

#[test]
fn outputs_do_not_depend_on_worker_count() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    runner::run(&parse_config_str(SMALL_E1, &overrides(a.path(), 1)).unwrap()).unwrap();
    runner::run(&parse_config_str(SMALL_E1, &overrides(b.path(), 3)).unwrap()).unwrap();
    let fa = files_below(a.path());
    assert_eq!(fa, files_below(b.path()));
    assert!(fa.len() > 10);
    for f in &fa {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{}", f.display());
    }
}

#[test]
fn manifest_lists_every_file_with_its_hash() {
    let dir = tempfile::tempdir().unwrap();
    let summary = runner::run(&parse_config_str(SMALL_E1, &overrides(dir.path(), 2)).unwrap()).unwrap();
    let m = Manifest::read(&summary.root.join("manifest.json")).unwrap();
    assert_eq!(m.status(), Status::Complete);
    assert_eq!(m.cells.len(), 6);
    assert!(m.verify(&summary.root).is_empty());
    let mut listed: Vec<PathBuf> = m.files.iter().map(|f| PathBuf::from(&f.path)).collect();
    listed.push("manifest.json".into());
    listed.sort();
    assert_eq!(listed, files_below(&summary.root));
}

#[test]
fn trend_file_has_one_row_per_probe_and_complexity() {
    let dir = tempfile::tempdir().unwrap();
    let summary = runner::run(&parse_config_str(SMALL_E1, &overrides(dir.path(), 1)).unwrap()).unwrap();
    let text = std::fs::read_to_string(summary.root.join("BD_trend.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1 + 3 * 2);
    assert!(lines[1].starts_with("E1,BD,1,x=-2.38,"));
    assert!(lines[6].starts_with("E1,BD,3,x=-5.11,"));
}

#[test]
fn report_regenerates_identical_tables() {
    let configs = [
        SMALL_E1.to_string(),
        "experiment = \"E2\"\ncomplexity = [2]\nk = 2\nseed = 1\nepochs = 10\nhidden = [8, 4]\n[[methods]]\nname = \"VD\"\nmc_samples = 10\n".to_string(),
        "experiment = \"E3\"\ncomplexity = [2]\nk = 2\nseed = 1\nepochs = 5\nhidden = [8, 4]\n[[methods]]\nname = \"CD\"\nmc_samples = 10\n".to_string(),
    ];
    for text in &configs {
        let run_dir = tempfile::tempdir().unwrap();
        let rep_dir = tempfile::tempdir().unwrap();
        let summary = runner::run(&parse_config_str(text, &overrides(run_dir.path(), 1)).unwrap()).unwrap();
        let written = runner::report(&summary.root, Some(rep_dir.path())).unwrap();
        assert!(!written.is_empty());
        for p in written {
            let rel = p.strip_prefix(rep_dir.path()).unwrap();
            let original = std::fs::read(run_dir.path().join(rel)).unwrap();
            assert_eq!(std::fs::read(&p).unwrap(), original, "{}", rel.display());
        }
        // In place, from a single record.
        let rec = files_below(&summary.root).into_iter().find(|p| p.ends_with("record.json")).unwrap();
        let again = runner::report(&summary.root.join(&rec), None).unwrap();
        assert_eq!(again.len(), 4);
        assert!(Manifest::read(&summary.root.join("manifest.json")).unwrap().verify(&summary.root).is_empty());
    }
}

#[test]
fn record_round_trips_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let summary = runner::run(&parse_config_str(SMALL_E1, &overrides(dir.path(), 1)).unwrap()).unwrap();
    let path = summary.root.join("c3/BD/record.json");
    let rec = RunRecord::read(&path).unwrap();
    assert_eq!(rec.run.records[0].k(), 2);
    assert_eq!(rec.designated_repetition, 0);
    let copy = dir.path().join("copy.json");
    rec.write(&copy).unwrap();
    assert_eq!(std::fs::read(&copy).unwrap(), std::fs::read(&path).unwrap());
}

#[test]
fn truncated_record_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let summary = runner::run(&parse_config_str(SMALL_E1, &overrides(dir.path(), 1)).unwrap()).unwrap();
    let path = summary.root.join("c1/BLR/record.json");
    let mut rec = RunRecord::read(&path).unwrap();
    rec.run.records.pop();
    rec.write(&path).unwrap();
    let err = RunRecord::read(&path).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("inputs"), "{err}");
}

fn binary(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_uqbench")).args(args).output().unwrap()
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, SMALL_E1).unwrap();
    let out = dir.path().join("out");
    let ok = binary(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--workers", "2"]);
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
    assert!(out.join("E1/manifest.json").exists());

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "experiment = \"E1\"\ncomplexity = [1]\n[[methods]]\nname = \"BD\"\n").unwrap();
    let r = binary(&["run", bad.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&r.stderr).contains("rate"));
    assert_eq!(binary(&["validate", bad.to_str().unwrap()]).status.code(), Some(1));
    assert_eq!(binary(&["validate", cfg.to_str().unwrap()]).status.code(), Some(0));

    let rec = out.join("E1/c1/BD/record.json");
    std::fs::write(&rec, b"{\"schema_version\": 1").unwrap();
    assert_eq!(binary(&["report", rec.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(binary(&["report", dir.path().join("missing").to_str().unwrap()]).status.code(), Some(2));
}
