//! Point clouds, nearest-neighbour search and the point-set metrics.

mod kdtree;
mod metrics;
mod ply;

pub use kdtree::NearestNeighborIndex;
pub use metrics::{
    chamfer_distance, chamfer_loss, correspondence_distance, correspondence_loss,
    nearest_distances, pc_to_pc_error, CorrespondenceNorm, ErrorMode,
};
pub use ply::{read_ply, write_ply, PlyCloud};

use crate::error::{Error, Result};

pub type Point3 = [f64; 3];

#[inline]
pub fn squared_distance(a: &Point3, b: &Point3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// A nonempty set of 3D points with finite coordinates (millimetres).
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    points: Vec<Point3>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("point cloud must contain at least one point"));
        }
        if let Some(i) = points.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(Error::NonFinite(format!("point cloud vertex {i}")));
        }
        Ok(Self { points })
    }

    /// Builds a cloud from `[x0, y0, z0, x1, ...]`.
    pub fn from_flat(coords: &[f64]) -> Result<Self> {
        if !coords.len().is_multiple_of(3) {
            return Err(Error::invalid(format!(
                "flat coordinate list of length {} is not a multiple of 3",
                coords.len()
            )));
        }
        Self::new(coords.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.points.iter().flatten().copied().collect()
    }

    pub fn centroid(&self) -> Point3 {
        let n = self.points.len() as f64;
        let mut c = [0.0; 3];
        for p in &self.points {
            for k in 0..3 {
                c[k] += p[k];
            }
        }
        c.map(|v| v / n)
    }

    pub fn translated(&self, offset: Point3) -> Self {
        Self {
            points: self
                .points
                .iter()
                .map(|p| [p[0] + offset[0], p[1] + offset[1], p[2] + offset[2]])
                .collect(),
        }
    }

    /// Mean distance of the points from their centroid.
    pub fn mean_radius(&self) -> f64 {
        let c = self.centroid();
        self.points
            .iter()
            .map(|p| squared_distance(p, &c).sqrt())
            .sum::<f64>()
            / self.points.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_empty_and_non_finite() {
        assert!(PointCloud::new(vec![]).is_err());
        assert!(matches!(
            PointCloud::new(vec![[0.0, f64::NAN, 0.0]]),
            Err(Error::NonFinite(_))
        ));
        assert!(PointCloud::from_flat(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn flat_round_trip() {
        let c = PointCloud::from_flat(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.to_flat(), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(c.centroid(), [2.5, 3.5, 4.5]);
    }
}
