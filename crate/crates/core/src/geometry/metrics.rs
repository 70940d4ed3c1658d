//! Chamfer loss, PC-to-PC error and index-paired correspondence losses.
//!
//! Reduction order is fixed: every directional sum accumulates in point-index
//! order, and the Chamfer total is `forward + backward`. A brute-force double
//! loop with the same order therefore reproduces these values bit for bit.

use serde::{Deserialize, Serialize};

use super::{NearestNeighborIndex, PointCloud};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Var};

/// How nearest-neighbour distances are aggregated by [`pc_to_pc_error`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorMode {
    /// Mean squared nearest distance (mm²).
    Squared,
    /// Mean nearest distance (mm).
    Euclidean,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CorrespondenceNorm {
    /// Mean per-vertex L1 norm of the coordinate difference.
    L1,
    /// Mean per-vertex squared Euclidean distance.
    L2,
}

/// For every point of `from`, its nearest point in `to`: `(index, squared distance)`.
pub fn nearest_distances(from: &PointCloud, to: &NearestNeighborIndex) -> Vec<(usize, f64)> {
    from.points().iter().map(|p| to.nearest(p)).collect()
}

fn ordered_sum(pairs: &[(usize, f64)]) -> f64 {
    let mut total = 0.0;
    for &(_, d) in pairs {
        total += d;
    }
    total
}

/// Symmetric sum-of-squared-nearest-distances between two clouds.
pub fn chamfer_distance(predicted: &PointCloud, truth: &PointCloud) -> f64 {
    let forward = nearest_distances(predicted, &NearestNeighborIndex::build(truth));
    let backward = nearest_distances(truth, &NearestNeighborIndex::build(predicted));
    ordered_sum(&forward) + ordered_sum(&backward)
}

/// Chamfer loss on the tape, differentiable w.r.t. `predicted` (any shape
/// holding `numY * 3` coordinates).
///
/// With `normalize` each directional sum is divided by its point count. At
/// argmin ties the lowest-index neighbour receives the gradient.
pub fn chamfer_loss(tape: &mut Tape, predicted: Var, truth: &PointCloud, normalize: bool) -> Result<Var> {
    let coords = tape.value(predicted).data().to_vec();
    let pred = PointCloud::from_flat(&coords)?;
    let forward = nearest_distances(&pred, &NearestNeighborIndex::build(truth));
    let backward = nearest_distances(truth, &NearestNeighborIndex::build(&pred));

    let (wf, wb) = if normalize {
        (1.0 / pred.len() as f64, 1.0 / truth.len() as f64)
    } else {
        (1.0, 1.0)
    };
    let value = wf * ordered_sum(&forward) + wb * ordered_sum(&backward);

    let mut grad = vec![0.0; coords.len()];
    for (i, &(j, _)) in forward.iter().enumerate() {
        let (p, t) = (&pred.points()[i], &truth.points()[j]);
        for k in 0..3 {
            grad[3 * i + k] += 2.0 * wf * (p[k] - t[k]);
        }
    }
    for (j, &(i, _)) in backward.iter().enumerate() {
        let (p, t) = (&pred.points()[i], &truth.points()[j]);
        for k in 0..3 {
            grad[3 * i + k] += 2.0 * wb * (p[k] - t[k]);
        }
    }
    tape.scalar_fn(predicted, value, grad)
}

/// One-directional mean nearest-neighbour error from `predicted` to `truth`,
/// divided by the predicted point count.
pub fn pc_to_pc_error(predicted: &PointCloud, truth: &PointCloud, mode: ErrorMode) -> f64 {
    let nearest = nearest_distances(predicted, &NearestNeighborIndex::build(truth));
    let mut total = 0.0;
    for &(_, d) in &nearest {
        total += match mode {
            ErrorMode::Squared => d,
            ErrorMode::Euclidean => d.sqrt(),
        };
    }
    total / predicted.len() as f64
}

fn check_same_count(predicted: usize, truth: usize) -> Result<()> {
    if predicted != truth {
        return Err(Error::ShapeMismatch {
            op: "correspondence loss (vertex counts)",
            lhs: vec![predicted, 3],
            rhs: vec![truth, 3],
        });
    }
    Ok(())
}

pub fn correspondence_distance(
    predicted: &PointCloud,
    truth: &PointCloud,
    norm: CorrespondenceNorm,
) -> Result<f64> {
    check_same_count(predicted.len(), truth.len())?;
    let mut total = 0.0;
    for (p, t) in predicted.points().iter().zip(truth.points()) {
        total += match norm {
            CorrespondenceNorm::L1 => (0..3).map(|k| (p[k] - t[k]).abs()).sum::<f64>(),
            CorrespondenceNorm::L2 => super::squared_distance(p, t),
        };
    }
    Ok(total / predicted.len() as f64)
}

/// Index-paired loss: vertex `i` of the prediction is compared with vertex `i`
/// of the truth.
pub fn correspondence_loss(
    tape: &mut Tape,
    predicted: Var,
    truth: &PointCloud,
    norm: CorrespondenceNorm,
) -> Result<Var> {
    let coords = tape.value(predicted).data().to_vec();
    let pred = PointCloud::from_flat(&coords)?;
    let value = correspondence_distance(&pred, truth, norm)?;
    let n = pred.len() as f64;
    let truth_flat = truth.to_flat();
    let grad = coords
        .iter()
        .zip(&truth_flat)
        .map(|(p, t)| {
            let d = p - t;
            match norm {
                CorrespondenceNorm::L1 => {
                    if d > 0.0 {
                        1.0 / n
                    } else if d < 0.0 {
                        -1.0 / n
                    } else {
                        0.0
                    }
                }
                CorrespondenceNorm::L2 => 2.0 * d / n,
            }
        })
        .collect();
    tape.scalar_fn(predicted, value, grad)
}
