//! Two-stage baselines: regress 3D vertices on 2D contour landmarks with
//! linear PLS or Gaussian-kernel PLS.

mod kplsr;
mod plsr;

pub use kplsr::{gaussian_kernel, kplsr_fit, KplsrModel};
pub use plsr::{plsr_fit, PlsrModel};

use std::str::FromStr;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{center_cloud, loocv_folds, SubjectDataset};
use crate::error::{Error, Result};
use crate::geometry::{chamfer_distance, pc_to_pc_error, ErrorMode, PointCloud};
use crate::training::{ExperimentReport, FoldRecord};

pub type Matrix = DMatrix<f64>;

pub const METHOD_PLSR: &str = "plsr";
pub const METHOD_KPLSR: &str = "kplsr";
pub const SIGMA_MULTIPLIERS: [f64; 4] = [0.5, 1.0, 2.0, 4.0];

pub(crate) fn column_means(m: &Matrix) -> DVector<f64> {
    DVector::from_iterator(m.ncols(), m.column_iter().map(|c| c.mean()))
}

pub(crate) fn subtract_row(m: &Matrix, row: &DVector<f64>) -> Matrix {
    Matrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] - row[j])
}

/// Validates row agreement and `1 <= components <= bound`, where the bound is
/// `rows - 1`, further capped by the input width for the linear model.
pub(crate) fn check_training_data(
    x: &Matrix,
    y: &Matrix,
    components: usize,
    cap_by_columns: bool,
) -> Result<()> {
    if x.nrows() != y.nrows() {
        return Err(Error::ShapeMismatch {
            op: "regression rows",
            lhs: vec![x.nrows(), x.ncols()],
            rhs: vec![y.nrows(), y.ncols()],
        });
    }
    let mut bound = x.nrows().saturating_sub(1);
    if cap_by_columns {
        bound = bound.min(x.ncols());
    }
    if components == 0 || components > bound {
        return Err(Error::invalid(format!(
            "component count {components} outside 1..={bound} for {} frames of {} landmark coordinates",
            x.nrows(),
            x.ncols()
        )));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("regression data".into()));
    }
    Ok(())
}

/// Frames as rows: flattened 2D landmarks (`x`) and flattened centred 3D
/// vertices (`y`).
#[derive(Clone, Debug, PartialEq)]
pub struct LandmarkMatrix {
    pub x: Matrix,
    pub y: Matrix,
}

impl LandmarkMatrix {
    pub fn from_subject(subject: &SubjectDataset) -> Result<Self> {
        let mut x_rows = Vec::new();
        let mut y_rows = Vec::new();
        for s in &subject.samples {
            let lm = s.landmarks.as_ref().ok_or_else(|| {
                Error::Data(format!(
                    "subject {} frame {} has no landmarks",
                    subject.subject_id, s.frame_index
                ))
            })?;
            x_rows.push(lm.iter().flatten().copied().collect::<Vec<f64>>());
            y_rows.push(center_cloud(&s.cloud).0.to_flat());
        }
        let cols = x_rows[0].len();
        if let Some((i, r)) = x_rows.iter().enumerate().find(|(_, r)| r.len() != cols) {
            return Err(Error::Data(format!(
                "subject {} frame {} has {} landmarks, frame 1 has {}",
                subject.subject_id,
                i + 1,
                r.len() / 2,
                cols / 2
            )));
        }
        let to_matrix = |rows: &[Vec<f64>]| {
            Matrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j])
        };
        Ok(Self {
            x: to_matrix(&x_rows),
            y: to_matrix(&y_rows),
        })
    }

    pub fn rows(&self, frames: &[usize]) -> Self {
        let idx: Vec<usize> = frames.iter().map(|f| f - 1).collect();
        Self {
            x: self.x.select_rows(idx.iter()),
            y: self.y.select_rows(idx.iter()),
        }
    }
}

/// Median Euclidean distance between distinct rows.
pub fn median_pairwise_distance(x: &Matrix) -> f64 {
    let mut d = Vec::new();
    for i in 0..x.nrows() {
        for j in i + 1..x.nrows() {
            d.push((x.row(i) - x.row(j)).norm());
        }
    }
    if d.is_empty() {
        return 0.0;
    }
    d.sort_by(f64::total_cmp);
    let mid = d.len() / 2;
    if d.len() % 2 == 1 {
        d[mid]
    } else {
        0.5 * (d[mid - 1] + d[mid])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineMethod {
    Plsr,
    Kplsr,
}

impl BaselineMethod {
    pub fn name(self) -> &'static str {
        match self {
            Self::Plsr => METHOD_PLSR,
            Self::Kplsr => METHOD_KPLSR,
        }
    }
}

impl FromStr for BaselineMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            METHOD_PLSR => Ok(Self::Plsr),
            METHOD_KPLSR => Ok(Self::Kplsr),
            other => Err(Error::invalid(format!(
                "unknown baseline method {other:?} (expected plsr or kplsr)"
            ))),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BaselineConfig {
    /// Upper bound on latent components; the default `min(M - 2, 8)` is
    /// applied when unset.
    pub components: Option<usize>,
    /// Fixed kernel width; chosen by inner leave-one-out when unset.
    pub sigma: Option<f64>,
}

pub fn default_components(num_frames: usize) -> usize {
    num_frames.saturating_sub(2).clamp(1, 8)
}

/// A fitted baseline of either kind.
#[derive(Clone, Debug, PartialEq)]
pub enum BaselineModel {
    Plsr(PlsrModel),
    Kplsr(KplsrModel),
}

impl BaselineModel {
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            Self::Plsr(m) => m.predict(x),
            Self::Kplsr(m) => m.predict(x),
        }
    }

    /// Prediction reshaped to a cloud whose vertex `i` is SSM vertex `i`.
    pub fn predict_cloud(&self, x: &[f64]) -> Result<PointCloud> {
        PointCloud::from_flat(&self.predict(x)?)
    }
}

fn row(m: &Matrix, i: usize) -> Vec<f64> {
    m.row(i).iter().copied().collect()
}

fn capped_components(requested: usize, data: &LandmarkMatrix) -> usize {
    requested.min(data.x.nrows().saturating_sub(1)).min(data.x.ncols()).max(1)
}

/// Picks the kernel width from `{0.5, 1, 2, 4} × median pairwise landmark
/// distance` by leave-one-out over the training rows, scored by euclidean
/// PC-to-PC error. Ties keep the smaller width.
pub fn select_sigma(train: &LandmarkMatrix, components: usize) -> Result<f64> {
    let n = train.x.nrows();
    let median = median_pairwise_distance(&train.x);
    if !(median > 0.0) {
        return Err(Error::Data(
            "landmark vectors are identical; kernel width cannot be chosen".into(),
        ));
    }
    if n < 3 {
        return Ok(median);
    }
    let mut best = (f64::INFINITY, median);
    for mult in SIGMA_MULTIPLIERS {
        let sigma = mult * median;
        let mut total = 0.0;
        for held in 0..n {
            let keep: Vec<usize> = (0..n).filter(|&i| i != held).collect();
            let inner = LandmarkMatrix {
                x: train.x.select_rows(keep.iter()),
                y: train.y.select_rows(keep.iter()),
            };
            let model = kplsr_fit(&inner.x, &inner.y, capped_components(components, &inner), sigma)?;
            let pred = PointCloud::from_flat(&model.predict(&row(&train.x, held))?)?;
            let truth = PointCloud::from_flat(&row(&train.y, held))?;
            total += pc_to_pc_error(&pred, &truth, ErrorMode::Euclidean);
        }
        let score = total / n as f64;
        if score < best.0 {
            best = (score, sigma);
        }
    }
    Ok(best.1)
}

pub fn fit_baseline(
    method: BaselineMethod,
    train: &LandmarkMatrix,
    config: &BaselineConfig,
) -> Result<BaselineModel> {
    let requested = config
        .components
        .unwrap_or_else(|| default_components(train.x.nrows() + 1));
    let components = capped_components(requested, train);
    match method {
        BaselineMethod::Plsr => Ok(BaselineModel::Plsr(plsr_fit(&train.x, &train.y, components)?)),
        BaselineMethod::Kplsr => {
            let sigma = match config.sigma {
                Some(s) => s,
                None => select_sigma(train, components)?,
            };
            Ok(BaselineModel::Kplsr(kplsr_fit(&train.x, &train.y, components, sigma)?))
        }
    }
}

/// Leave-one-out sweep of a baseline over one subject, scored with the same
/// metrics as the network.
pub fn run_baseline_subject(
    subject: &SubjectDataset,
    method: BaselineMethod,
    config: &BaselineConfig,
) -> Result<ExperimentReport> {
    let data = LandmarkMatrix::from_subject(subject)?;
    let plan = loocv_folds(subject.num_frames())?;
    let folds = plan
        .folds
        .par_iter()
        .map(|fold| -> Result<FoldRecord> {
            let start = Instant::now();
            let model = fit_baseline(method, &data.rows(&fold.train_frames), config)?;
            let train_seconds = start.elapsed().as_secs_f64();
            let x = row(&data.x, fold.test_frame - 1);
            let start = Instant::now();
            let prediction = model.predict_cloud(&x)?;
            let infer_seconds = start.elapsed().as_secs_f64();
            let truth = PointCloud::from_flat(&row(&data.y, fold.test_frame - 1))?;
            Ok(FoldRecord {
                test_frame: fold.test_frame,
                pc_to_pc_euclidean: pc_to_pc_error(&prediction, &truth, ErrorMode::Euclidean),
                pc_to_pc_squared: pc_to_pc_error(&prediction, &truth, ErrorMode::Squared),
                chamfer_final: chamfer_distance(&prediction, &truth),
                train_seconds,
                infer_seconds,
                prediction,
                truth,
                trace: None,
            })
        })
        .collect::<Vec<_>>();
    let folds = folds
        .into_iter()
        .zip(&plan.folds)
        .map(|(r, fold)| {
            r.map_err(|e| Error::Fold {
                test_frame: fold.test_frame,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentReport::new(
        subject.subject_id.clone(),
        method.name(),
        folds,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_three_points() {
        let x = Matrix::from_row_slice(3, 1, &[0.0, 1.0, 3.0]);
        assert_eq!(median_pairwise_distance(&x), 2.0);
    }

    #[test]
    fn default_component_rule() {
        assert_eq!(default_components(20), 8);
        assert_eq!(default_components(5), 3);
        assert_eq!(default_components(3), 1);
    }

    #[test]
    fn method_names_parse() {
        assert_eq!("plsr".parse::<BaselineMethod>().unwrap(), BaselineMethod::Plsr);
        assert_eq!("kplsr".parse::<BaselineMethod>().unwrap(), BaselineMethod::Kplsr);
        assert!("svm".parse::<BaselineMethod>().is_err());
    }
}
