//! CSV exports of report tables.

use std::path::Path;

use sievelab::analysis::{AxisSummary, ConfidenceEntry, SimpsonsReport};
use sievelab::stats::quantile;

use crate::commands::CliError;

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>, CliError> {
    csv::Writer::from_path(path).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
}

fn finish(mut w: csv::Writer<std::fs::File>) -> Result<(), CliError> {
    w.flush().map_err(|e| CliError::Invalid(e.to_string()))
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Invalid(e.to_string())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_confidence(path: &Path, entries: &[ConfidenceEntry], names: &[String]) -> Result<(), CliError> {
    let mut w = writer(path)?;
    w.write_record(["subgroup", "severity", "gamma_mean", "gamma_std", "prob_positive", "reference"])
        .map_err(csv_err)?;
    for e in entries {
        w.write_record([
            names[e.subgroup].clone(),
            e.severity.to_string(),
            e.mean.to_string(),
            e.std.to_string(),
            e.prob_positive.to_string(),
            e.reference.to_string(),
        ])
        .map_err(csv_err)?;
    }
    finish(w)
}

pub fn write_separability(path: &Path, axes: &[AxisSummary]) -> Result<(), CliError> {
    let mut w = writer(path)?;
    w.write_record(["subgroup", "severity", "replicates", "ks_q05", "ks_q25", "ks_median", "ks_q75", "ks_q95", "p_value"])
        .map_err(csv_err)?;
    for axis in axes {
        for s in &axis.separability.severities {
            let q = |p| quantile(&s.ks, p).to_string();
            w.write_record([
                axis.name.clone(),
                s.severity.to_string(),
                s.ks.len().to_string(),
                q(0.05),
                q(0.25),
                s.median.to_string(),
                q(0.75),
                q(0.95),
                opt(s.p_value),
            ])
            .map_err(csv_err)?;
        }
    }
    finish(w)
}

pub fn write_simpsons(path: &Path, report: &SimpsonsReport) -> Result<(), CliError> {
    let mut w = writer(path)?;
    w.write_record([
        "severity",
        "group",
        "gamma_mean",
        "prob_positive",
        "confidence_effect",
        "ks_median",
        "p_value",
        "separability_effect",
    ])
    .map_err(csv_err)?;
    let effect = |e| serde_json::to_value(e).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
    for row in &report.rows {
        let groups = std::iter::once(("pooled".to_string(), &row.pooled)).chain(row.subgroups.iter().map(|(n, c)| (n.clone(), c)));
        for (name, c) in groups {
            w.write_record([
                row.severity.to_string(),
                name,
                c.gamma_mean.to_string(),
                c.prob_positive.to_string(),
                effect(c.confidence_effect),
                c.ks_median.to_string(),
                opt(c.p_value),
                effect(c.separability_effect),
            ])
            .map_err(csv_err)?;
        }
    }
    finish(w)
}
