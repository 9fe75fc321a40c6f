//! Report files. `metrics.csv` holds no timing so that a rerun with the same
//! seed reproduces it byte for byte.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{timing_table, ExperimentConfig, ExperimentReport};
use crate::error::{Error, Result};
use crate::metrics::Summary;

#[derive(Debug, Clone)]
pub struct ReportFiles {
    pub metrics: PathBuf,
    pub detail: PathBuf,
    pub timing: PathBuf,
    pub manifest: PathBuf,
}

fn cell(value: Option<f64>) -> String {
    value.map_or_else(|| "n.d.".to_string(), |v| format!("{v:.6}"))
}

fn pair(summary: &Summary) -> String {
    format!("{},{}", cell(summary.mean), cell(summary.std))
}

pub fn metrics_csv(report: &ExperimentReport) -> String {
    let mut out = String::from(
        "dataset,layer,explainer,folds,attempted,explained,validity,validity_std,fidelity,fidelity_std,\
         distribution_distance,distribution_distance_std,node_sparsity,node_sparsity_std,edge_sparsity,edge_sparsity_std\n",
    );
    for e in &report.explainers {
        let m = &e.metrics;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            report.dataset,
            report.layer,
            e.name,
            m.folds,
            m.attempted,
            m.explained,
            pair(&m.validity),
            pair(&m.fidelity),
            pair(&m.distribution_distance),
            pair(&m.node_sparsity),
            pair(&m.edge_sparsity),
        );
    }
    out
}

pub fn timing_csv(report: &ExperimentReport) -> String {
    let mut out = String::from("explainer,instances,seconds,seconds_std,epoch_seconds,epoch_seconds_std\n");
    for row in timing_table(report) {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            row.explainer,
            row.instances,
            pair(&row.seconds),
            pair(&row.epoch_seconds)
        );
    }
    out
}

pub fn manifest(config: &ExperimentConfig, report: &ExperimentReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "combinex {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(out, "dataset {} ({} task)", report.dataset, report.task.as_str());
    let _ = writeln!(out, "seed {}", report.seed);
    for f in &report.folds {
        let _ = writeln!(
            out,
            "fold {}: train {} test {} unconfident {} train-accuracy {:.4} test-accuracy {:.4}",
            f.fold, f.train_instances, f.test_instances, f.unconfident, f.train_accuracy, f.test_accuracy
        );
    }
    out.push_str("\n[config]\n");
    out.push_str(&config.echo());
    out
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_report(config: &ExperimentConfig, report: &ExperimentReport) -> Result<ReportFiles> {
    let dir = &config.out_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = ReportFiles {
        metrics: dir.join("metrics.csv"),
        detail: dir.join("detail.json"),
        timing: dir.join("timing.csv"),
        manifest: dir.join("manifest.txt"),
    };
    write(&files.metrics, &metrics_csv(report))?;
    let detail = serde_json::to_string_pretty(report).map_err(|e| Error::Format(e.to_string()))?;
    write(&files.detail, &detail)?;
    write(&files.timing, &timing_csv(report))?;
    write(&files.manifest, &manifest(config, report))?;
    Ok(files)
}
