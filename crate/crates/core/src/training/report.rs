//! CSV and PLY export of experiment reports.
//!
//! Layout under the output directory:
//!
//! ```text
//! <method>/<subject>/frames.csv
//! <method>/<subject>/frameNN_pred.ply   (quality = distance to nearest truth vertex, mm)
//! <method>/<subject>/frameNN_truth.ply  (quality = distance to nearest predicted vertex, mm)
//! ```
//!
//! `frames.csv` has the columns
//! `frame,pc_to_pc_mm,pc_to_pc_sq_mm2,chamfer,train_seconds,infer_seconds`.
//! Floats are written in shortest round-trip form.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ExperimentReport;
use crate::error::{Error, Result};
use crate::geometry::{nearest_distances, write_ply, NearestNeighborIndex, PointCloud};

pub const FRAMES_CSV: &str = "frames.csv";

/// One row of `frames.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameRow {
    pub frame: usize,
    pub pc_to_pc_mm: f64,
    pub pc_to_pc_sq_mm2: f64,
    pub chamfer: f64,
    pub train_seconds: f64,
    pub infer_seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportFiles {
    pub csv: PathBuf,
    pub predictions: Vec<PathBuf>,
    pub truths: Vec<PathBuf>,
}

fn vertex_distances(from: &PointCloud, to: &PointCloud) -> Vec<f64> {
    nearest_distances(from, &NearestNeighborIndex::build(to))
        .into_iter()
        .map(|(_, d)| d.sqrt())
        .collect()
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format(path, format!("{other:?}")),
    }
}

pub fn export_report(report: &ExperimentReport, dir: &Path) -> Result<ReportFiles> {
    let out = dir.join(&report.method).join(&report.subject_id);
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;

    let csv_path = out.join(FRAMES_CSV);
    let mut writer = csv::Writer::from_path(&csv_path).map_err(|e| csv_error(&csv_path, e))?;
    let mut predictions = Vec::new();
    let mut truths = Vec::new();
    for fold in &report.folds {
        writer
            .serialize(FrameRow {
                frame: fold.test_frame,
                pc_to_pc_mm: fold.pc_to_pc_euclidean,
                pc_to_pc_sq_mm2: fold.pc_to_pc_squared,
                chamfer: fold.chamfer_final,
                train_seconds: fold.train_seconds,
                infer_seconds: fold.infer_seconds,
            })
            .map_err(|e| csv_error(&csv_path, e))?;

        let pred_path = out.join(format!("frame{:02}_pred.ply", fold.test_frame));
        let quality = vertex_distances(&fold.prediction, &fold.truth);
        write_ply(&pred_path, &fold.prediction, Some(&quality))?;
        predictions.push(pred_path);

        let truth_path = out.join(format!("frame{:02}_truth.ply", fold.test_frame));
        let quality = vertex_distances(&fold.truth, &fold.prediction);
        write_ply(&truth_path, &fold.truth, Some(&quality))?;
        truths.push(truth_path);
    }
    writer.flush().map_err(|e| Error::io(&csv_path, e))?;
    Ok(ReportFiles {
        csv: csv_path,
        predictions,
        truths,
    })
}

pub fn read_frame_csv(path: &Path) -> Result<Vec<FrameRow>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    reader
        .deserialize()
        .map(|row| row.map_err(|e| csv_error(path, e)))
        .collect()
}

/// Mean euclidean error of each method for one subject; `None` marks a
/// method that produced no report.
#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonRow {
    pub subject_id: String,
    pub means: Vec<Option<f64>>,
}

/// Writes `subject,<method>...` with one row per subject.
pub fn write_comparison_csv(path: &Path, methods: &[String], rows: &[ComparisonRow]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut header = vec!["subject".to_string()];
    header.extend(methods.iter().cloned());
    writer.write_record(&header).map_err(|e| csv_error(path, e))?;
    for row in rows {
        if row.means.len() != methods.len() {
            return Err(Error::invalid(format!(
                "comparison row for {} has {} values for {} methods",
                row.subject_id,
                row.means.len(),
                methods.len()
            )));
        }
        let mut record = vec![row.subject_id.clone()];
        record.extend(
            row.means
                .iter()
                .map(|m| m.map(|v| v.to_string()).unwrap_or_default()),
        );
        writer.write_record(&record).map_err(|e| csv_error(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
