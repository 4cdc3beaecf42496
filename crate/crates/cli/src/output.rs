//! Summary CSV, run manifest and per-run p-value files.

use std::fs;
use std::path::Path;

use serde::Serialize;

use encludl::error::{Error, Result};

use crate::config::{ExperimentSpec, Method};
use crate::experiment::{RunReport, SingleRun, SummaryRow};

pub const SUMMARY_HEADER: [&str; 21] = [
    "scenario_id",
    "method",
    "C",
    "B",
    "gamma",
    "alpha",
    "delta",
    "n_seeds",
    "delta_fwer",
    "ci_lo",
    "ci_hi",
    "tpr_median",
    "tpr_d10",
    "tpr_d90",
    "wall_time_s",
    "fwer",
    "fwer_ci_lo",
    "fwer_ci_hi",
    "config_hash",
    "master_seed",
    "error",
];

const NA: &str = "NA";

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(|| NA.to_string(), |x| x.to_string())
}

fn row_fields(row: &SummaryRow) -> Vec<String> {
    let s = row.summary.as_ref();
    vec![
        row.scenario_id.clone(),
        row.method.name().to_string(),
        row.n_clusters.to_string(),
        opt(row.n_bootstraps),
        opt(row.gamma),
        row.alpha.to_string(),
        opt(row.delta),
        row.n_seeds.to_string(),
        opt(s.map(|s| s.delta_fwer.rate)),
        opt(s.map(|s| s.delta_fwer.ci_lo)),
        opt(s.map(|s| s.delta_fwer.ci_hi)),
        opt(s.map(|s| s.tpr_median)),
        opt(s.map(|s| s.tpr_d10)),
        opt(s.map(|s| s.tpr_d90)),
        opt(row.wall_time_s.map(|t| format!("{t:.3}"))),
        opt(s.map(|s| s.fwer.rate)),
        opt(s.map(|s| s.fwer.ci_lo)),
        opt(s.map(|s| s.fwer.ci_hi)),
        row.config_hash.clone(),
        row.master_seed.to_string(),
        row.error.clone().unwrap_or_default(),
    ]
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::Format {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Summary rows as CSV text.
pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SUMMARY_HEADER).expect("in-memory write");
    for row in rows {
        w.write_record(row_fields(row)).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("CSV is UTF-8")
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|source| Error::Io {
            path: parent.display().to_string(),
            source,
        })?;
    }
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

#[derive(Serialize)]
struct ManifestRow<'a> {
    scenario_id: &'a str,
    method: &'a str,
    #[serde(rename = "C")]
    n_clusters: usize,
    delta: Option<f64>,
    repetitions: usize,
    per_seed_delta: Vec<f64>,
    bootstrap_diameters: Vec<&'a [f64]>,
    phi_min_hat: Vec<f64>,
    wall_time_s: f64,
    error: Option<&'a str>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    config: &'a ExperimentSpec,
    config_hash: &'a str,
    master_seed: u64,
    repetition_seeds: &'a [u64],
    rows: Vec<ManifestRow<'a>>,
    wall_time_s: f64,
}

pub fn manifest_json(spec: &ExperimentSpec, report: &RunReport) -> String {
    let rows = report
        .tasks
        .iter()
        .zip(&report.rows)
        .map(|(t, r)| ManifestRow {
            scenario_id: &t.scenario_id,
            method: t.task.method.name(),
            n_clusters: t.task.n_clusters,
            delta: r.delta,
            repetitions: t.records.len(),
            per_seed_delta: t.records.iter().map(|s| s.delta).collect(),
            bootstrap_diameters: if t.task.method == Method::Encludl {
                t.records.iter().map(|s| s.diameters.as_slice()).collect()
            } else {
                Vec::new()
            },
            phi_min_hat: t.records.iter().filter_map(|s| s.phi_min_hat).collect(),
            wall_time_s: t.wall_time_s(),
            error: t.error.as_deref(),
        })
        .collect();
    let manifest = Manifest {
        config: spec,
        config_hash: &report.config_hash,
        master_seed: report.master_seed,
        repetition_seeds: &report.repetition_seeds,
        rows,
        wall_time_s: report.wall_time_s,
    };
    serde_json::to_string_pretty(&manifest).expect("manifest serializes")
}

fn pvalue_csv(values: &[f64]) -> String {
    let mut out = String::from("covariate_index,p_value\n");
    for (j, p) in values.iter().enumerate() {
        out.push_str(&format!("{j},{p}\n"));
    }
    out
}

/// Writes `summary.csv`, `manifest.json` and, when kept, per-run p-values
/// under `dir/pvalues`.
pub fn write_report(dir: &Path, spec: &ExperimentSpec, report: &RunReport) -> Result<()> {
    write_text(&dir.join("summary.csv"), &summary_csv(&report.rows))?;
    write_text(&dir.join("manifest.json"), &manifest_json(spec, report))?;
    for t in &report.tasks {
        for r in &t.records {
            if let Some(values) = &r.pvalues {
                let name = format!(
                    "{}_{}_C{}_rep{:04}.csv",
                    t.scenario_id.replace('=', "-"),
                    t.task.method.name(),
                    t.task.n_clusters,
                    r.index
                );
                write_text(&dir.join("pvalues").join(name), &pvalue_csv(values))?;
            }
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct SingleManifest<'a> {
    method: &'a str,
    #[serde(rename = "C")]
    n_clusters: usize,
    alpha: f64,
    delta: f64,
    diameters: &'a [f64],
    phi_min_hat: Option<f64>,
    selected: usize,
    wall_time_s: f64,
    config: &'a ExperimentSpec,
}

/// Writes `pvalues.csv`, `selection.csv` and `manifest.json` for one run.
pub fn write_single(dir: &Path, spec: &ExperimentSpec, run: &SingleRun) -> Result<()> {
    write_text(&dir.join("pvalues.csv"), &pvalue_csv(run.output.family.values()))?;
    let mut sel = String::from("covariate_index\n");
    for j in &run.selected {
        sel.push_str(&format!("{j}\n"));
    }
    write_text(&dir.join("selection.csv"), &sel)?;
    let manifest = SingleManifest {
        method: run.method.name(),
        n_clusters: run.n_clusters,
        alpha: spec.alpha,
        delta: run.output.delta,
        diameters: &run.output.diameters,
        phi_min_hat: run.output.phi_min_hat,
        selected: run.selected.len(),
        wall_time_s: run.wall_time_s,
        config: spec,
    };
    write_text(
        &dir.join("manifest.json"),
        &serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )
}

/// Parses a summary CSV back into header-keyed records.
pub fn read_summary(path: &Path) -> Result<Vec<std::collections::HashMap<String, String>>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let headers = r.headers().map_err(csv_err(path))?.clone();
    r.records()
        .map(|rec| {
            let rec = rec.map_err(csv_err(path))?;
            Ok(headers.iter().zip(rec.iter()).map(|(h, v)| (h.to_string(), v.to_string())).collect())
        })
        .collect()
}
