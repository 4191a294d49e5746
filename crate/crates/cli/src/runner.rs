//! Runs a configuration on a worker pool and writes records, tables and the
//! manifest.
//!
//! Output layout under `<output>/<experiment>/`:
//!
//! ```text
//! c<complexity>/<method>/record.json
//! c<complexity>/<method>/{coverage,lemma,train,band|grid}.csv
//! <method>_trend.csv
//! manifest.json
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use uqbench::datagen::{experiment_preset, Preset};
use uqbench::eval::{assemble, run_repetition, MethodRun};

use crate::config::RunConfig;
use crate::manifest::{CellEntry, Manifest, Status};
use crate::record::{RunRecord, SCHEMA_VERSION};
use crate::tables::{record_tables, trend_table, Table};
use crate::CliError;

pub fn cell_dir(complexity: f64, method: &str) -> String {
    format!("c{complexity}/{method}")
}

/// Outcome of a run: the manifest as written and where it lives.
#[derive(Debug)]
pub struct RunSummary {
    pub root: PathBuf,
    pub manifest: Manifest,
}

fn build_record(cfg: &RunConfig, preset: &Preset, mi: usize, run: MethodRun) -> Result<RunRecord, CliError> {
    let method = cfg.methods[mi].clone();
    let designated = run.records[0].repetitions[0];
    let designated_train =
        preset.repetition_dataset(designated).map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok(RunRecord {
        schema_version: SCHEMA_VERSION,
        experiment: cfg.experiment.name().into(),
        complexity: preset.complexity,
        master_seed: cfg.master_seed,
        k: cfg.k,
        epochs: cfg.options.epochs_for(preset),
        method,
        options: cfg.options.clone(),
        preset: preset.clone(),
        designated_repetition: designated,
        designated_train,
        run,
    })
}

fn emit(root: &Path, rel: &str, bytes: &[u8], manifest: &mut Manifest) -> Result<(), CliError> {
    crate::write_file(&root.join(rel), bytes)?;
    manifest.add_file(rel, bytes);
    Ok(())
}

/// Trains and evaluates every (complexity, method, repetition) task.
///
/// Results do not depend on the worker count: every task derives its own
/// seeds and results are gathered in task order.
pub fn run(cfg: &RunConfig) -> Result<RunSummary, CliError> {
    let presets = cfg
        .complexities
        .iter()
        .map(|&c| experiment_preset(cfg.experiment, c, cfg.master_seed))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Config(format!("complexity: {e}")))?;
    let tasks: Vec<(usize, usize, u64)> = (0..presets.len())
        .flat_map(|ci| (0..cfg.methods.len()).flat_map(move |mi| (0..cfg.k as u64).map(move |r| (ci, mi, r))))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| CliError::Runtime(format!("worker pool: {e}")))?;
    let outcomes: Vec<_> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(ci, mi, r)| run_repetition(&presets[ci], &cfg.methods[mi], &cfg.options, r))
            .collect()
    });

    let mut cells: BTreeMap<(usize, usize), Vec<_>> = BTreeMap::new();
    for (&(ci, mi, r), outcome) in tasks.iter().zip(outcomes) {
        cells.entry((ci, mi)).or_default().push((r, outcome));
    }

    let root = cfg.output.join(cfg.experiment.name());
    let mut manifest = Manifest {
        experiment: cfg.experiment.name().into(),
        master_seed: cfg.master_seed,
        k: cfg.k,
        cells: Vec::new(),
        files: Vec::new(),
    };
    let mut by_method: BTreeMap<usize, Vec<RunRecord>> = BTreeMap::new();
    for ((ci, mi), outcomes) in cells {
        let preset = &presets[ci];
        let label = cfg.methods[mi].label();
        let attempted = outcomes.len();
        let cell = match assemble(preset, &cfg.methods[mi], outcomes) {
            Ok(run) => {
                let failures: Vec<String> =
                    run.failures.iter().map(|f| format!("repetition {}: {}", f.repetition, f.error)).collect();
                let succeeded = attempted - failures.len();
                let rec = build_record(cfg, preset, mi, run)?;
                let dir = cell_dir(preset.complexity, label);
                let rel = format!("{dir}/record.json");
                let bytes = rec.write(&root.join(&rel))?;
                manifest.add_file(&rel, &bytes);
                for t in record_tables(&rec)? {
                    emit(&root, &format!("{dir}/{}", t.name), &t.bytes, &mut manifest)?;
                }
                by_method.entry(mi).or_default().push(rec);
                let status = if failures.is_empty() { Status::Complete } else { Status::Partial };
                CellEntry { complexity: preset.complexity, method: label.into(), status, attempted, succeeded, failures }
            }
            Err(e) => CellEntry {
                complexity: preset.complexity,
                method: label.into(),
                status: Status::Failed,
                attempted,
                succeeded: 0,
                failures: vec![e.to_string()],
            },
        };
        eprintln!("{} c={} {}: {:?}", manifest.experiment, cell.complexity, cell.method, cell.status);
        manifest.cells.push(cell);
    }
    for recs in by_method.values() {
        let refs: Vec<&RunRecord> = recs.iter().collect();
        let t = trend_table(&refs)?;
        emit(&root, &t.name, &t.bytes, &mut manifest)?;
    }
    manifest.write(&root.join("manifest.json"))?;
    Ok(RunSummary { root, manifest })
}

fn find_records(dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), CliError> {
    let entries =
        std::fs::read_dir(dir).map_err(|e| CliError::Record(format!("cannot list {}: {e}", dir.display())))?;
    let mut paths: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
    paths.sort();
    for p in paths {
        if p.is_dir() {
            find_records(&p, out)?;
        } else if p.file_name().is_some_and(|n| n == "record.json") {
            out.push(p);
        }
    }
    Ok(())
}

/// Rebuilds the tables of a record file, or of every record below a
/// directory, without retraining. Files go beside each record unless `out`
/// is given, in which case the standard layout is recreated under it.
/// Returns the written paths.
pub fn report(input: &Path, out: Option<&Path>) -> Result<Vec<PathBuf>, CliError> {
    let (paths, trend_root) = if input.is_dir() {
        let mut v = Vec::new();
        find_records(input, &mut v)?;
        if v.is_empty() {
            return Err(CliError::Record(format!("no record.json below {}", input.display())));
        }
        (v, Some(input.to_path_buf()))
    } else {
        (vec![input.to_path_buf()], None)
    };
    let mut written = Vec::new();
    let mut write = |path: PathBuf, t: &Table| -> Result<(), CliError> {
        crate::write_file(&path, &t.bytes)?;
        written.push(path);
        Ok(())
    };
    let mut by_method: BTreeMap<(String, String), Vec<RunRecord>> = BTreeMap::new();
    for p in &paths {
        let rec = RunRecord::read(p)?;
        let dir = match out {
            Some(o) => o.join(&rec.experiment).join(cell_dir(rec.complexity, rec.label())),
            None => p.parent().map(Path::to_path_buf).unwrap_or_default(),
        };
        for t in record_tables(&rec)? {
            write(dir.join(&t.name), &t)?;
        }
        by_method.entry((rec.experiment.clone(), rec.label().to_string())).or_default().push(rec);
    }
    if let Some(root) = trend_root {
        for ((experiment, _), recs) in &by_method {
            let refs: Vec<&RunRecord> = recs.iter().collect();
            let t = trend_table(&refs)?;
            let dir = match out {
                Some(o) => o.join(experiment),
                None if root.file_name().is_some_and(|n| n == experiment.as_str()) => root.clone(),
                None => root.join(experiment),
            };
            write(dir.join(&t.name), &t)?;
        }
    }
    Ok(written)
}
