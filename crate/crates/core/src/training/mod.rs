//! Leave-one-out training and evaluation of the point-cloud network.

mod report;

pub use report::{
    export_report, read_frame_csv, write_comparison_csv, ComparisonRow, FrameRow, ReportFiles,
};

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::synth::mix_seed;
use crate::dataset::{center_cloud, loocv_folds, normalize_image, Fold, Sample, SubjectDataset};
use crate::error::{Error, Result};
use crate::geometry::{chamfer_distance, chamfer_loss, pc_to_pc_error, ErrorMode, PointCloud};
use crate::pointoutnet::{ModelParams, NetworkConfig};
use crate::tensor::{adam_step, AdamConfig, AdamState, Tape, Tensor};

pub const METHOD_POINTOUTNET: &str = "pointoutnet";
/// Epoch budget of the quick profile.
pub const QUICK_EPOCHS: usize = 40;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub shuffle_seed: u64,
    /// Overrides the network's `l2Weight` when set.
    pub l2_weight: Option<f64>,
    /// Divide each Chamfer direction by its point count.
    pub chamfer_normalization: bool,
    pub checkpoint_every: usize,
    pub adam: AdamConfig,
    /// Where periodic and final checkpoints go; none are written when unset.
    #[serde(skip)]
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1500,
            learning_rate: 0.003,
            batch_size: 1,
            shuffle_seed: 0,
            l2_weight: None,
            chamfer_normalization: false,
            checkpoint_every: 100,
            adam: AdamConfig::default(),
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    /// Short budget paired with [`NetworkConfig::quick`] and
    /// `SynthConfig::quick`.
    pub fn quick() -> Self {
        Self {
            epochs: QUICK_EPOCHS,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if self.batch_size != 1 {
            return Err(Error::invalid("only batch size 1 is supported"));
        }
        if let Some(w) = self.l2_weight {
            if !(w >= 0.0) {
                return Err(Error::invalid("l2 weight must be nonnegative"));
            }
        }
        Ok(())
    }
}

/// A frame after preprocessing: max-normalized image tensor and centred cloud.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedSample {
    pub frame_index: usize,
    pub image: Tensor,
    pub cloud: PointCloud,
}

pub fn prepare_sample(sample: &Sample) -> Result<PreparedSample> {
    let image = normalize_image(&sample.image)?.to_tensor();
    let (cloud, _) = center_cloud(&sample.cloud);
    Ok(PreparedSample {
        frame_index: sample.frame_index,
        image,
        cloud,
    })
}

/// Counts image reads per frame on the training data path.
#[derive(Debug)]
pub struct DataAudit {
    reads: Vec<AtomicUsize>,
}

impl DataAudit {
    pub fn new(num_frames: usize) -> Self {
        Self {
            reads: (0..num_frames).map(|_| AtomicUsize::new(0)).collect(),
        }
    }

    fn record(&self, frame: usize) {
        self.reads[frame - 1].fetch_add(1, Ordering::Relaxed);
    }

    pub fn reads(&self, frame: usize) -> usize {
        self.reads[frame - 1].load(Ordering::Relaxed)
    }
}

/// Preprocessed frames of one fold. Training code can only reach images
/// through [`FoldData::training_sample`], which is audited.
struct FoldData {
    samples: Vec<PreparedSample>,
    train_frames: Vec<usize>,
    test_frame: usize,
    audit: DataAudit,
}

impl FoldData {
    fn new(subject: &SubjectDataset, fold: &Fold) -> Result<Self> {
        let m = subject.num_frames();
        let valid = |f: usize| (1..=m).contains(&f);
        if !valid(fold.test_frame)
            || fold.train_frames.is_empty()
            || !fold.train_frames.iter().all(|&f| valid(f))
            || fold.train_frames.contains(&fold.test_frame)
        {
            return Err(Error::invalid(format!(
                "fold (train {:?}, test {}) is inconsistent with subject {} of {m} frames",
                fold.train_frames, fold.test_frame, subject.subject_id
            )));
        }
        let samples = subject
            .samples
            .iter()
            .map(prepare_sample)
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            samples,
            train_frames: fold.train_frames.clone(),
            test_frame: fold.test_frame,
            audit: DataAudit::new(m),
        })
    }

    fn training_sample(&self, frame: usize) -> &PreparedSample {
        self.audit.record(frame);
        &self.samples[frame - 1]
    }

    fn test_sample(&self) -> &PreparedSample {
        &self.samples[self.test_frame - 1]
    }
}

/// Anything that maps a preprocessed image to a point cloud.
pub trait ShapePredictor {
    fn predict(&self, image: &Tensor) -> Result<PointCloud>;
}

impl ShapePredictor for ModelParams {
    fn predict(&self, image: &Tensor) -> Result<PointCloud> {
        self.forward(image)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub pc_to_pc_euclidean: f64,
    pub pc_to_pc_squared: f64,
    pub chamfer: f64,
    pub infer_seconds: f64,
    pub prediction: PointCloud,
}

/// Predicts the sample's cloud and scores it; the timing covers the single
/// forward pass only.
pub fn evaluate(model: &impl ShapePredictor, sample: &PreparedSample) -> Result<Evaluation> {
    let start = Instant::now();
    let prediction = model.predict(&sample.image)?;
    let infer_seconds = start.elapsed().as_secs_f64();
    Ok(Evaluation {
        pc_to_pc_euclidean: pc_to_pc_error(&prediction, &sample.cloud, ErrorMode::Euclidean),
        pc_to_pc_squared: pc_to_pc_error(&prediction, &sample.cloud, ErrorMode::Squared),
        chamfer: chamfer_distance(&prediction, &sample.cloud),
        infer_seconds,
        prediction,
    })
}

/// Loss history of one fold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TrainingTrace {
    /// Mean training-set Chamfer loss of the freshly initialized model.
    pub initial_loss: f64,
    /// Mean Chamfer loss over the steps of each epoch.
    pub epoch_losses: Vec<f64>,
    /// Mean training-set Chamfer loss of the final model.
    pub final_loss: f64,
    /// Times the test frame's image was read while training (must be 0).
    pub test_frame_reads: usize,
}

/// Per-fold result shared by every method.
#[derive(Clone, Debug, PartialEq)]
pub struct FoldRecord {
    pub test_frame: usize,
    /// Mean nearest distance prediction → truth (mm).
    pub pc_to_pc_euclidean: f64,
    /// Mean squared nearest distance prediction → truth (mm²).
    pub pc_to_pc_squared: f64,
    /// Chamfer distance between the test prediction and its truth.
    pub chamfer_final: f64,
    pub train_seconds: f64,
    pub infer_seconds: f64,
    pub prediction: PointCloud,
    pub truth: PointCloud,
    pub trace: Option<TrainingTrace>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentReport {
    pub subject_id: String,
    pub method: String,
    pub folds: Vec<FoldRecord>,
    /// Mean of the per-fold euclidean PC-to-PC errors (mm).
    pub subject_mean: f64,
}

impl ExperimentReport {
    pub fn new(subject_id: String, method: impl Into<String>, folds: Vec<FoldRecord>) -> Self {
        let subject_mean =
            folds.iter().map(|f| f.pc_to_pc_euclidean).sum::<f64>() / folds.len() as f64;
        Self {
            subject_id,
            method: method.into(),
            folds,
            subject_mean,
        }
    }
}

pub struct TrainedFold {
    pub params: ModelParams,
    pub record: FoldRecord,
}

fn mean_training_loss(
    model: &ModelParams,
    data: &FoldData,
    normalize: bool,
) -> Result<f64> {
    let mut total = 0.0;
    for &frame in &data.train_frames {
        let sample = data.training_sample(frame);
        let prediction = model.forward(&sample.image)?;
        total += if normalize {
            normalized_chamfer(&prediction, &sample.cloud)
        } else {
            chamfer_distance(&prediction, &sample.cloud)
        };
    }
    Ok(total / data.train_frames.len() as f64)
}

fn normalized_chamfer(a: &PointCloud, b: &PointCloud) -> f64 {
    use crate::geometry::{nearest_distances, NearestNeighborIndex};
    let f: f64 = nearest_distances(a, &NearestNeighborIndex::build(b))
        .iter()
        .map(|p| p.1)
        .sum();
    let r: f64 = nearest_distances(b, &NearestNeighborIndex::build(a))
        .iter()
        .map(|p| p.1)
        .sum();
    f / a.len() as f64 + r / b.len() as f64
}

/// One optimizer step on one sample; returns the Chamfer part of the loss.
fn train_step(
    model: &mut ModelParams,
    adam: &mut AdamState,
    sample: &PreparedSample,
    config: &TrainConfig,
) -> Result<f64> {
    let (grads, chamfer, total) = {
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape);
        let input = tape.input(&sample.image);
        let output = model.forward_on_tape(&mut tape, &bound, input)?;
        let chamfer = chamfer_loss(&mut tape, output, &sample.cloud, config.chamfer_normalization)?;
        let reg = model.regularization_on_tape(&mut tape, &bound)?;
        let loss = tape.add(chamfer, reg)?;
        let chamfer_value = tape.value(chamfer).item()?;
        let total = tape.value(loss).item()?;
        (tape.backward(loss)?, chamfer_value, total)
    };
    if !total.is_finite() {
        return Err(Error::NonFinite("training loss".into()));
    }
    model.zero_grad();
    grads.accumulate_into(model.tensors_mut())?;
    adam_step(model.tensors_mut(), adam, config.learning_rate)?;
    Ok(chamfer)
}

fn fold_seed(seed: u64, test_frame: usize, stream: u64) -> u64 {
    mix_seed(seed, stream * 1_000_000 + test_frame as u64)
}

/// Trains a fresh network on the fold's training frames and evaluates it on
/// the held-out frame.
pub fn train_fold(
    subject: &SubjectDataset,
    fold: &Fold,
    net_config: &NetworkConfig,
    train_config: &TrainConfig,
) -> Result<TrainedFold> {
    train_config.validate()?;
    let mut net_config = net_config.clone();
    net_config.num_y = subject.num_y;
    if let Some(w) = train_config.l2_weight {
        net_config.l2_weight = w;
    }
    if (net_config.input_height, net_config.input_width) != (subject.height, subject.width) {
        return Err(Error::invalid(format!(
            "network expects {}x{} images but subject {} has {}x{}",
            net_config.input_height,
            net_config.input_width,
            subject.subject_id,
            subject.height,
            subject.width
        )));
    }
    let data = FoldData::new(subject, fold)?;
    let test_frame = fold.test_frame;

    let start = Instant::now();
    let mut model = ModelParams::build(net_config, fold_seed(train_config.shuffle_seed, test_frame, 1))?;
    let mut adam = AdamState::new(model.tensors(), train_config.adam);
    let mut order_rng = ChaCha8Rng::seed_from_u64(fold_seed(train_config.shuffle_seed, test_frame, 2));
    let normalize = train_config.chamfer_normalization;

    let initial_loss = mean_training_loss(&model, &data, normalize)?;
    let mut epoch_losses = Vec::with_capacity(train_config.epochs);
    let mut order = data.train_frames.clone();
    for epoch in 1..=train_config.epochs {
        order.shuffle(&mut order_rng);
        let mut sum = 0.0;
        for &frame in &order {
            let sample = data.training_sample(frame);
            let loss = train_step(&mut model, &mut adam, sample, train_config).map_err(|e| {
                if e.is_numeric() {
                    Error::NonFiniteLoss { epoch, frame }
                } else {
                    e
                }
            })?;
            sum += loss;
        }
        epoch_losses.push(sum / order.len() as f64);
        if let Some(dir) = &train_config.checkpoint_dir {
            if train_config.checkpoint_every > 0 && epoch % train_config.checkpoint_every == 0 {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                model.save(&dir.join(format!("fold{test_frame:02}_epoch{epoch:05}.bin")))?;
            }
        }
    }
    let final_loss = mean_training_loss(&model, &data, normalize)?;
    let train_seconds = start.elapsed().as_secs_f64();
    if let Some(dir) = &train_config.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        model.save(&dir.join(format!("fold{test_frame:02}_final.bin")))?;
    }

    let test_frame_reads = data.audit.reads(test_frame);
    if test_frame_reads != 0 {
        return Err(Error::Data(format!(
            "test frame {test_frame} was read {test_frame_reads} times during training"
        )));
    }
    let test = data.test_sample();
    let eval = evaluate(&model, test)?;
    let record = FoldRecord {
        test_frame,
        pc_to_pc_euclidean: eval.pc_to_pc_euclidean,
        pc_to_pc_squared: eval.pc_to_pc_squared,
        chamfer_final: eval.chamfer,
        train_seconds,
        infer_seconds: eval.infer_seconds,
        prediction: eval.prediction,
        truth: test.cloud.clone(),
        trace: Some(TrainingTrace {
            initial_loss,
            epoch_losses,
            final_loss,
            test_frame_reads,
        }),
    };
    Ok(TrainedFold {
        params: model,
        record,
    })
}

/// Full leave-one-out sweep over a subject's frames. Folds run on the current
/// rayon pool; results are ordered by test frame.
pub fn run_subject(
    subject: &SubjectDataset,
    net_config: &NetworkConfig,
    train_config: &TrainConfig,
) -> Result<ExperimentReport> {
    let plan = loocv_folds(subject.num_frames())?;
    let folds = plan
        .folds
        .par_iter()
        .map(|fold| {
            train_fold(subject, fold, net_config, train_config)
                .map(|t| t.record)
                .map_err(|e| Error::Fold {
                    test_frame: fold.test_frame,
                    source: Box::new(e),
                })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentReport::new(
        subject.subject_id.clone(),
        METHOD_POINTOUTNET,
        folds,
    ))
}

/// Mean euclidean error per frame index across reports (frames `1..=M`).
pub fn frame_error_curve(reports: &[ExperimentReport]) -> Vec<f64> {
    let m = reports.iter().map(|r| r.folds.len()).max().unwrap_or(0);
    let mut sums = vec![0.0; m];
    let mut counts = vec![0usize; m];
    for r in reports {
        for f in &r.folds {
            sums[f.test_frame - 1] += f.pc_to_pc_euclidean;
            counts[f.test_frame - 1] += 1;
        }
    }
    sums.iter()
        .zip(&counts)
        .map(|(s, &c)| if c > 0 { s / c as f64 } else { f64::NAN })
        .collect()
}

/// Mean of `curve` over the given 1-based frames and over all other frames.
pub fn boundary_interior_means(curve: &[f64], boundary: &[usize]) -> (f64, f64) {
    let (mut b, mut nb, mut i, mut ni) = (0.0, 0, 0.0, 0);
    for (k, v) in curve.iter().enumerate() {
        if boundary.contains(&(k + 1)) {
            b += v;
            nb += 1;
        } else {
            i += v;
            ni += 1;
        }
    }
    (b / nb as f64, i / ni as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic_subject, SynthConfig};

    struct Oracle(PointCloud);

    impl ShapePredictor for Oracle {
        fn predict(&self, _image: &Tensor) -> Result<PointCloud> {
            Ok(self.0.clone())
        }
    }

    fn tiny_subject() -> SubjectDataset {
        generate_synthetic_subject(4, &SynthConfig::quick()).unwrap()
    }

    #[test]
    fn exact_predictor_scores_zero() {
        let subject = tiny_subject();
        let sample = prepare_sample(&subject.samples[0]).unwrap();
        let eval = evaluate(&Oracle(sample.cloud.clone()), &sample).unwrap();
        assert_eq!(eval.pc_to_pc_euclidean, 0.0);
        assert_eq!(eval.pc_to_pc_squared, 0.0);
        assert_eq!(eval.chamfer, 0.0);
    }

    #[test]
    fn config_validation() {
        let zero = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(zero.validate().is_err());
        let batch = TrainConfig {
            batch_size: 2,
            ..TrainConfig::default()
        };
        assert!(batch.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }

    #[test]
    fn inconsistent_fold_rejected() {
        let subject = tiny_subject();
        let fold = Fold {
            train_frames: vec![1, 2, 3],
            test_frame: 3,
        };
        let err = train_fold(&subject, &fold, &NetworkConfig::quick(100), &TrainConfig::default());
        assert!(matches!(err, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn prepared_sample_is_normalized_and_centered() {
        let subject = tiny_subject();
        let p = prepare_sample(&subject.samples[2]).unwrap();
        let max = p.image.data().iter().copied().fold(f64::MIN, f64::max);
        assert_eq!(max, 1.0);
        assert!(p.cloud.centroid().iter().all(|c| c.abs() < 1e-9));
    }

    #[test]
    fn boundary_means() {
        let (b, i) = boundary_interior_means(&[3.0, 1.0, 5.0, 1.0, 4.0], &[1, 3, 5]);
        assert_eq!((b, i), (4.0, 1.0));
    }
}
