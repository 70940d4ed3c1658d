//! Subjects, samples, preprocessing and leave-one-out folds.

mod manifest;
mod pgm;
pub mod synth;

pub use manifest::{
    list_subjects, load_cohort, load_subject, save_cohort, save_subject, CohortIndex,
    FrameEntry, SubjectManifest, COHORT_FILE, MANIFEST_FILE,
};
pub use pgm::{read_pgm, write_pgm};
pub use synth::{
    boundary_frames, generate_cohort, generate_synthetic_subject, ShapeParams, SynthConfig,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud};
use crate::tensor::Tensor;

/// A single-channel image, row-major, raw or normalized intensities.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || pixels.len() != height * width {
            return Err(Error::ShapeMismatch {
                op: "image",
                lhs: vec![height, width],
                rhs: vec![pixels.len()],
            });
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn max(&self) -> f64 {
        self.pixels.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.pixels.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// The image as a `[1, H, W, 1]` network input.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![1, self.height, self.width, 1], self.pixels.clone())
            .expect("extents match pixel count")
    }
}

/// Divides every pixel by the image's own maximum, so the maximum becomes 1.
pub fn normalize_image(image: &GrayImage) -> Result<GrayImage> {
    if image.pixels.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("image pixels".into()));
    }
    let max = image.max();
    if !(max > 0.0) {
        return Err(Error::invalid(
            "cannot normalize an image without a positive pixel",
        ));
    }
    let pixels = image.pixels.iter().map(|v| v / max).collect();
    GrayImage::new(image.height, image.width, pixels)
}

/// Subtracts the centroid; returns the centred cloud and the centroid.
pub fn center_cloud(cloud: &PointCloud) -> (PointCloud, Point3) {
    let c = cloud.centroid();
    (cloud.translated([-c[0], -c[1], -c[2]]), c)
}

/// One time frame: a raw image and its ground-truth cloud (mm).
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub frame_index: usize,
    pub image: GrayImage,
    pub cloud: PointCloud,
    /// 2D contour landmarks in the image plane (mm), when available.
    pub landmarks: Option<Vec<[f64; 2]>>,
}

/// All time frames of one subject; frames are stored in `frame_index` order.
#[derive(Clone, Debug, PartialEq)]
pub struct SubjectDataset {
    pub subject_id: String,
    pub height: usize,
    pub width: usize,
    pub num_y: usize,
    pub samples: Vec<Sample>,
}

impl SubjectDataset {
    /// Validates the SSM invariants: frames `1..=M` once each, shared numY and
    /// image extents. Samples are sorted by frame index.
    pub fn new(
        subject_id: impl Into<String>,
        height: usize,
        width: usize,
        num_y: usize,
        mut samples: Vec<Sample>,
    ) -> Result<Self> {
        let subject_id = subject_id.into();
        samples.sort_by_key(|s| s.frame_index);
        for (i, s) in samples.iter().enumerate() {
            if s.frame_index != i + 1 {
                return Err(Error::Data(format!(
                    "subject {subject_id}: frame indices must be 1..={} without gaps (found {})",
                    samples.len(),
                    s.frame_index
                )));
            }
            if (s.image.height, s.image.width) != (height, width) {
                return Err(Error::Data(format!(
                    "subject {subject_id} frame {}: image is {}x{}, expected {height}x{width}",
                    s.frame_index, s.image.height, s.image.width
                )));
            }
            if s.cloud.len() != num_y {
                return Err(Error::Data(format!(
                    "subject {subject_id} frame {}: cloud has {} vertices, expected numY = {num_y}",
                    s.frame_index,
                    s.cloud.len()
                )));
            }
        }
        Ok(Self {
            subject_id,
            height,
            width,
            num_y,
            samples,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.samples.len()
    }

    pub fn sample(&self, frame_index: usize) -> Option<&Sample> {
        frame_index
            .checked_sub(1)
            .and_then(|i| self.samples.get(i))
    }

    /// Mean distance of ground-truth vertices from their frame centroid,
    /// averaged over frames.
    pub fn mean_cloud_radius(&self) -> f64 {
        self.samples.iter().map(|s| s.cloud.mean_radius()).sum::<f64>()
            / self.samples.len() as f64
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Fold {
    pub train_frames: Vec<usize>,
    pub test_frame: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub folds: Vec<Fold>,
}

/// Leave-one-out over frames `1..=m`: fold `t` tests frame `t` and trains on
/// every other frame.
pub fn loocv_folds(m: usize) -> Result<FoldPlan> {
    if m < 2 {
        return Err(Error::invalid(format!(
            "leave-one-out needs at least 2 frames, got {m}"
        )));
    }
    let folds = (1..=m)
        .map(|test| Fold {
            train_frames: (1..=m).filter(|&f| f != test).collect(),
            test_frame: test,
        })
        .collect();
    Ok(FoldPlan { folds })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_divides_by_max() {
        let img = GrayImage::new(1, 3, vec![50.0, 200.0, 0.0]).unwrap();
        let n = normalize_image(&img).unwrap();
        assert_eq!(n.pixels(), &[0.25, 1.0, 0.0]);
        let constant = GrayImage::new(2, 2, vec![7.0; 4]).unwrap();
        assert_eq!(normalize_image(&constant).unwrap().pixels(), &[1.0; 4]);
        let zero = GrayImage::new(2, 2, vec![0.0; 4]).unwrap();
        assert!(normalize_image(&zero).is_err());
    }

    #[test]
    fn center_two_points() {
        let c = PointCloud::new(vec![[0.0; 3], [2.0; 3]]).unwrap();
        let (centered, centroid) = center_cloud(&c);
        assert_eq!(centroid, [1.0; 3]);
        assert_eq!(centered.points(), &[[-1.0; 3], [1.0; 3]]);
        let (again, zero) = center_cloud(&centered);
        assert_eq!(zero, [0.0; 3]);
        assert_eq!(again, centered);
    }

    #[test]
    fn folds_for_three_frames() {
        let plan = loocv_folds(3).unwrap();
        let pairs: Vec<(Vec<usize>, usize)> = plan
            .folds
            .into_iter()
            .map(|f| (f.train_frames, f.test_frame))
            .collect();
        assert_eq!(
            pairs,
            vec![(vec![2, 3], 1), (vec![1, 3], 2), (vec![1, 2], 3)]
        );
        assert!(loocv_folds(1).is_err());
    }

    #[test]
    fn folds_for_twenty_five_frames() {
        let plan = loocv_folds(25).unwrap();
        assert_eq!(plan.folds.len(), 25);
        let mut tests: Vec<usize> = plan.folds.iter().map(|f| f.test_frame).collect();
        tests.sort();
        assert_eq!(tests, (1..=25).collect::<Vec<_>>());
        for f in &plan.folds {
            assert!(!f.train_frames.contains(&f.test_frame));
            assert_eq!(f.train_frames.len(), 24);
        }
    }

    #[test]
    fn subject_rejects_mismatched_frames() {
        let img = GrayImage::new(2, 2, vec![1.0; 4]).unwrap();
        let cloud = PointCloud::new(vec![[0.0; 3]; 3]).unwrap();
        let sample = |t| Sample {
            frame_index: t,
            image: img.clone(),
            cloud: cloud.clone(),
            landmarks: None,
        };
        assert!(SubjectDataset::new("s", 2, 2, 3, vec![sample(2), sample(1)]).is_ok());
        assert!(SubjectDataset::new("s", 2, 2, 3, vec![sample(1), sample(3)]).is_err());
        assert!(SubjectDataset::new("s", 2, 2, 4, vec![sample(1)]).is_err());
        assert!(SubjectDataset::new("s", 3, 2, 3, vec![sample(1)]).is_err());
    }
}
