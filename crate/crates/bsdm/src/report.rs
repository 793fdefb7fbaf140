//! CSV outputs: ROC points, AUC summaries, separability and loss history.

use std::path::Path;

use bsdm_core::metrics::{BoxStats, RocSummary, SeparabilityStats};
use bsdm_core::pipeline::ArmReport;

use crate::io::create_parent;
use crate::{Error, Result};

fn write_rows(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    create_parent(path)?;
    let mut out = csv::Writer::from_path(path).map_err(Error::csv(path))?;
    out.write_record(header).map_err(Error::csv(path))?;
    for row in rows {
        out.write_record(&row).map_err(Error::csv(path))?;
    }
    out.flush().map_err(Error::io(path))
}

const BOX_FIELDS: [&str; 6] = ["min", "q1", "median", "q3", "max", "mean"];

fn box_cells(b: &BoxStats) -> Vec<String> {
    [b.min, b.q1, b.median, b.q3, b.max, b.mean]
        .iter()
        .map(f64::to_string)
        .collect()
}

/// One `(tau, pd, pf)` row per threshold, the `+inf` anchor first.
pub fn write_roc(path: &Path, roc: &RocSummary) -> Result<()> {
    let rows = roc
        .thresholds
        .iter()
        .zip(&roc.pd)
        .zip(&roc.pf)
        .map(|((t, pd), pf)| vec![t.to_string(), pd.to_string(), pf.to_string()]);
    write_rows(path, &["tau", "pd", "pf"], rows)
}

pub fn write_summary(path: &Path, roc: &RocSummary, sep: &SeparabilityStats) -> Result<()> {
    let row = vec![
        roc.auc_pd_pf.to_string(),
        roc.auc_pf_tau.to_string(),
        sep.gap.to_string(),
        sep.background.iqr().to_string(),
    ];
    write_rows(path, &["auc_pd_pf", "auc_pf_tau", "gap", "background_iqr"], [row])
}

pub fn write_separability(path: &Path, sep: &SeparabilityStats) -> Result<()> {
    let mut header = vec!["class"];
    header.extend(BOX_FIELDS);
    let rows = [("anomaly", &sep.anomaly), ("background", &sep.background)]
        .into_iter()
        .map(|(class, stats)| {
            let mut row = vec![class.to_string()];
            row.extend(box_cells(stats));
            row
        });
    write_rows(path, &header, rows)
}

pub fn write_loss_history(path: &Path, losses: &[f64]) -> Result<()> {
    let rows = losses
        .iter()
        .enumerate()
        .map(|(epoch, loss)| vec![epoch.to_string(), loss.to_string()]);
    write_rows(path, &["epoch", "loss"], rows)
}

/// One row per arm: both AUCs, the gap, then the background and anomaly box statistics.
pub fn write_pipeline_report(path: &Path, arms: &[(&str, &ArmReport)]) -> Result<()> {
    let mut header = vec!["arm".to_string(), "auc_pd_pf".into(), "auc_pf_tau".into(), "gap".into()];
    for class in ["background", "anomaly"] {
        header.extend(BOX_FIELDS.iter().map(|f| format!("{class}_{f}")));
    }
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows = arms.iter().map(|(name, arm)| {
        let mut row = vec![
            name.to_string(),
            arm.auc_pd_pf.to_string(),
            arm.auc_pf_tau.to_string(),
            arm.separability.gap.to_string(),
        ];
        row.extend(box_cells(&arm.separability.background));
        row.extend(box_cells(&arm.separability.anomaly));
        row
    });
    write_rows(path, &header, rows)
}
