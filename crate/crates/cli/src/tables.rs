//! CSV tables and plot data rebuilt from run-records.

use uqbench::datagen::{ExperimentId, InputDesign};
use uqbench::eval::{lemma_diagnostics, summarize, CoverageReport, CoverageRow, COVERAGE_FACTOR};
use uqbench::stats;

use crate::record::RunRecord;
use crate::CliError;

/// A named CSV file and its content.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub bytes: Vec<u8>,
}

struct Csv(csv::Writer<Vec<u8>>);

impl Csv {
    fn new(header: &[String]) -> Result<Self, CliError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header).map_err(csv_err)?;
        Ok(Self(w))
    }

    fn row(&mut self, fields: &[String]) -> Result<(), CliError> {
        self.0.write_record(fields).map_err(csv_err)
    }

    fn finish(self, name: &str) -> Result<Table, CliError> {
        let bytes = self.0.into_inner().map_err(|e| CliError::Runtime(format!("csv: {e}")))?;
        Ok(Table { name: name.into(), bytes })
    }
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Runtime(format!("csv: {e}"))
}

fn x_header(d: usize) -> Vec<String> {
    if d == 1 {
        vec!["x".into()]
    } else {
        (1..=d).map(|i| format!("x{i}")).collect()
    }
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn h(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

const METRIC_COLUMNS: [&str; 8] = [
    "mean_deviation",
    "deviation_stderr",
    "mean_uncertainty",
    "uncertainty_stderr",
    "coverage",
    "coverage_stderr",
    "in_distribution",
    "k_effective",
];

fn metric_fields(r: &CoverageRow) -> Vec<String> {
    vec![
        num(r.mean_deviation),
        num(r.deviation_stderr),
        num(r.mean_uncertainty),
        num(r.uncertainty_stderr),
        num(r.coverage),
        num(r.coverage_stderr),
        r.in_distribution.to_string(),
        r.k_effective.to_string(),
    ]
}

pub fn coverage_report(rec: &RunRecord) -> Result<CoverageReport, CliError> {
    summarize(&rec.run.records, rec.preset.train_bounds()).map_err(|e| CliError::Record(e.to_string()))
}

fn coverage_table(rec: &RunRecord, report: &CoverageReport) -> Result<Table, CliError> {
    let d = rec.preset.model.basis.input_dim();
    let mut header = h(&["experiment", "method", "input_id"]);
    header.extend(x_header(d));
    header.push("ground_truth".into());
    header.extend(h(&METRIC_COLUMNS));
    let mut w = Csv::new(&header)?;
    for r in &report.rows {
        let mut f = vec![rec.experiment.clone(), rec.label().into(), r.input_id.to_string()];
        f.extend(r.x.iter().copied().map(num));
        f.push(num(r.ground_truth));
        f.extend(metric_fields(r));
        w.row(&f)?;
    }
    w.finish("coverage.csv")
}

fn lemma_table(rec: &RunRecord) -> Result<Table, CliError> {
    let d = rec.preset.model.basis.input_dim();
    let mut header = h(&["input_id"]);
    header.extend(x_header(d));
    header.extend(h(&["mean_uncertainty", "anchor_uncertainty", "rmse", "flagged"]));
    let mut w = Csv::new(&header)?;
    for (row, r) in lemma_diagnostics(&rec.run.records).iter().zip(&rec.run.records) {
        let mut f = vec![row.input_id.to_string()];
        f.extend(r.x.iter().copied().map(num));
        f.extend([num(row.mean_uncertainty), num(row.anchor_uncertainty), num(row.rmse), row.flagged.to_string()]);
        w.row(&f)?;
    }
    w.finish("lemma.csv")
}

fn band_table(rec: &RunRecord) -> Result<Table, CliError> {
    let d = rec.preset.model.basis.input_dim();
    let lambdas = match &rec.preset.test_design {
        InputDesign::Diagonal { lambdas, .. } => Some(lambdas.clone()),
        _ => None,
    };
    let mut header = Vec::new();
    if lambdas.is_some() {
        header.push("lambda".into());
    }
    header.extend(x_header(d));
    header.extend(h(&["mean", "lower", "upper", "truth"]));
    let mut w = Csv::new(&header)?;
    for r in rec.run.records.iter().take(rec.preset.design_len()) {
        let p = r.predictions[0];
        let mut f = Vec::new();
        if let Some(l) = &lambdas {
            f.push(num(l[r.input_id]));
        }
        f.extend(r.x.iter().copied().map(num));
        f.extend([
            num(p.mean),
            num(p.mean - COVERAGE_FACTOR * p.std),
            num(p.mean + COVERAGE_FACTOR * p.std),
            num(r.ground_truth),
        ]);
        w.row(&f)?;
    }
    w.finish("band.csv")
}

fn train_table(rec: &RunRecord) -> Result<Table, CliError> {
    let data = &rec.designated_train;
    let mut header = x_header(data.input_dim());
    header.push("y".into());
    let mut w = Csv::new(&header)?;
    for (x, y) in data.inputs.iter().zip(&data.targets) {
        let mut f: Vec<String> = x.iter().copied().map(num).collect();
        f.push(num(*y));
        w.row(&f)?;
    }
    w.finish("train.csv")
}

fn grid_table(rec: &RunRecord, report: &CoverageReport) -> Result<Table, CliError> {
    let mut header = x_header(2);
    header.extend(h(&["log10_mean_deviation", "log10_mean_uncertainty", "coverage"]));
    let mut w = Csv::new(&header)?;
    for r in report.rows.iter().take(rec.preset.design_len()) {
        let mut f: Vec<String> = r.x.iter().copied().map(num).collect();
        f.extend([num(r.mean_deviation.log10()), num(r.mean_uncertainty.log10()), num(r.coverage)]);
        w.row(&f)?;
    }
    w.finish("grid.csv")
}

/// Every per-record table, in a fixed order.
pub fn record_tables(rec: &RunRecord) -> Result<Vec<Table>, CliError> {
    let report = coverage_report(rec)?;
    let mut tables = vec![coverage_table(rec, &report)?, lemma_table(rec)?, train_table(rec)?];
    match rec.preset.id {
        ExperimentId::E1 | ExperimentId::E2 => tables.push(band_table(rec)?),
        ExperimentId::E3 => tables.push(grid_table(rec, &report)?),
    }
    Ok(tables)
}

/// Metrics at the named probe inputs against complexity, for one method.
/// `records` must share experiment and method.
pub fn trend_table(records: &[&RunRecord]) -> Result<Table, CliError> {
    let Some(first) = records.first() else {
        return Err(CliError::Runtime("no records for a trend table".into()));
    };
    let mut header = h(&["experiment", "method", "complexity", "probe"]);
    header.extend(h(&METRIC_COLUMNS));
    let mut w = Csv::new(&header)?;
    let mut sorted: Vec<&&RunRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.complexity.total_cmp(&b.complexity));
    for rec in sorted {
        let report = coverage_report(rec)?;
        let offset = rec.preset.design_len();
        for (probe, row) in rec.preset.probes.iter().zip(&report.rows[offset..]) {
            let mut f = vec![rec.experiment.clone(), rec.label().into(), num(rec.complexity), probe.label.clone()];
            f.extend(metric_fields(row));
            w.row(&f)?;
        }
    }
    w.finish(&format!("{}_trend.csv", first.label()))
}

/// Mean in-distribution coverage and uncertainty, for quick summaries.
pub fn headline(report: &CoverageReport) -> (Option<f64>, Option<f64>) {
    (report.mean_coverage(true), report.mean_uncertainty(true))
}

/// Fraction of band rows where the truth lies inside `[lower, upper]`.
pub fn band_hit_rate(rec: &RunRecord) -> f64 {
    let hits: Vec<f64> = rec
        .run
        .records
        .iter()
        .take(rec.preset.design_len())
        .map(|r| {
            let p = r.predictions[0];
            let inside = p.mean - COVERAGE_FACTOR * p.std <= r.ground_truth && r.ground_truth <= p.mean + COVERAGE_FACTOR * p.std;
            if inside { 1.0 } else { 0.0 }
        })
        .collect();
    stats::mean(&hits)
}
