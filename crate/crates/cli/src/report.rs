//! Report serialization: deterministic JSON reports, CSV row tables, the
//! non-deterministic timestamp sidecar, and the cross-run summary table.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::experiments::Outcome;

/// JSON report written for every completed (or convergence-failed) run.
/// Field order is fixed by the struct and all maps are BTreeMaps, so a given
/// config + seed produces byte-identical output; wall-clock data goes to the
/// `<report>.meta.json` sidecar instead.
#[derive(Debug, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub experiment: String,
    pub status: String,
    pub headline: String,
    pub seed: u64,
    pub metrics: BTreeMap<String, f64>,
    pub table: Table,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    pub config: RunConfig,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize)]
struct Sidecar {
    started_unix_ms: u128,
    duration_ms: u128,
}

pub fn report_from(cfg: &RunConfig, outcome: &Outcome) -> Report {
    Report {
        schema_version: crate::config::SCHEMA_VERSION,
        experiment: cfg.experiment.name().to_string(),
        status: if outcome.pass { "pass" } else { "fail" }.to_string(),
        headline: outcome.headline.clone(),
        seed: cfg.seed,
        metrics: outcome.metrics.clone(),
        table: Table {
            columns: outcome.columns.iter().map(|c| c.to_string()).collect(),
            rows: outcome.rows.clone(),
        },
        failure: outcome.failure.clone(),
        config: cfg.clone(),
    }
}

/// Writes the report, the optional CSV table, and the timestamp sidecar.
pub fn write_outputs(
    cfg: &RunConfig,
    report: &Report,
    started_unix_ms: u128,
    duration_ms: u128,
) -> std::io::Result<()> {
    if let Some(dir) = cfg.output.report.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let mut json = serde_json::to_string_pretty(report).expect("report serialization");
    json.push('\n');
    std::fs::write(&cfg.output.report, json)?;

    if let Some(csv) = &cfg.output.csv {
        if let Some(dir) = csv.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir)?;
            }
        }
        let mut out = String::new();
        out.push_str(&report.table.columns.join(","));
        out.push('\n');
        for row in &report.table.rows {
            let cells: Vec<String> = row.iter().map(|x| format!("{x:.12e}")).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        std::fs::write(csv, out)?;
    }

    let sidecar = Sidecar { started_unix_ms, duration_ms };
    let mut meta = serde_json::to_string_pretty(&sidecar).expect("sidecar serialization");
    meta.push('\n');
    std::fs::write(sidecar_path(&cfg.output.report), meta)?;
    Ok(())
}

pub fn sidecar_path(report: &Path) -> PathBuf {
    let mut s = report.as_os_str().to_os_string();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// One-line-per-report CSV summary, sorted by experiment name then file name.
/// Returns Err on missing or malformed report files.
pub fn summarize(paths: &[PathBuf], out: &mut dyn Write) -> anyhow::Result<()> {
    let mut rows: Vec<(String, String, String, String, String)> = Vec::new();
    for p in paths {
        let text = std::fs::read_to_string(p)
            .map_err(|e| anyhow::anyhow!("cannot read report {}: {e}", p.display()))?;
        let rep: Report = serde_json::from_str(&text)
            .map_err(|e| anyhow::anyhow!("malformed report {}: {e}", p.display()))?;
        let name = p
            .file_name()
            .map(|f| f.to_string_lossy().into_owned())
            .unwrap_or_else(|| p.display().to_string());
        rows.push((
            rep.experiment,
            name,
            rep.status,
            rep.headline,
            rep.failure.unwrap_or_default(),
        ));
    }
    rows.sort();
    writeln!(out, "experiment,report,status,headline,detail")?;
    for (exp, name, status, headline, detail) in rows {
        writeln!(out, "{exp},{name},{status},{headline},{detail}")?;
    }
    Ok(())
}
