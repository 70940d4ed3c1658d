//! On-disk subjects: a JSON manifest per subject pointing at per-frame PGM
//! images, PLY clouds and (optionally) landmark CSV files.
//!
//! ```json
//! {
//!   "subjectId": "subject01",
//!   "M": 20,
//!   "numY": 800,
//!   "height": 192,
//!   "width": 256,
//!   "frames": [{"index": 1, "image": "frame01.pgm", "cloud": "frame01.ply",
//!               "landmarks": "frame01_landmarks.csv"}, ...]
//! }
//! ```
//!
//! Paths are relative to the manifest's directory. A cohort directory holds
//! `cohort.json` (`{"subjects": [...]}`) and one sub-directory per subject.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{read_pgm, write_pgm, Sample, SubjectDataset};
use crate::error::{Error, Result};
use crate::geometry::{read_ply, write_ply};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const COHORT_FILE: &str = "cohort.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SubjectManifest {
    pub subject_id: String,
    #[serde(rename = "M")]
    pub num_frames: usize,
    pub num_y: usize,
    pub height: usize,
    pub width: usize,
    pub frames: Vec<FrameEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameEntry {
    pub index: usize,
    pub image: String,
    pub cloud: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub landmarks: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CohortIndex {
    pub subjects: Vec<String>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("manifest serializes");
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

/// Writes the subject into `dir` and returns the manifest path.
pub fn save_subject(dataset: &SubjectDataset, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut frames = Vec::with_capacity(dataset.samples.len());
    for s in &dataset.samples {
        let stem = format!("frame{:02}", s.frame_index);
        let entry = FrameEntry {
            index: s.frame_index,
            image: format!("{stem}.pgm"),
            cloud: format!("{stem}.ply"),
            landmarks: s.landmarks.as_ref().map(|_| format!("{stem}_landmarks.csv")),
        };
        write_pgm(&dir.join(&entry.image), &s.image)?;
        write_ply(&dir.join(&entry.cloud), &s.cloud, None)?;
        if let (Some(points), Some(name)) = (&s.landmarks, &entry.landmarks) {
            write_landmarks(&dir.join(name), points)?;
        }
        frames.push(entry);
    }
    let manifest = SubjectManifest {
        subject_id: dataset.subject_id.clone(),
        num_frames: dataset.samples.len(),
        num_y: dataset.num_y,
        height: dataset.height,
        width: dataset.width,
        frames,
    };
    let path = dir.join(MANIFEST_FILE);
    write_json(&path, &manifest)?;
    Ok(path)
}

/// Loads a subject from its manifest; frames are ordered by `index`, not by
/// their position in the manifest.
pub fn load_subject(manifest_path: &Path) -> Result<SubjectDataset> {
    let manifest: SubjectManifest = read_json(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let id = &manifest.subject_id;
    if manifest.frames.len() != manifest.num_frames {
        return Err(Error::Data(format!(
            "subject {id}: manifest declares M = {} but lists {} frames",
            manifest.num_frames,
            manifest.frames.len()
        )));
    }
    let frame_err = |index: usize, e: Error| Error::Data(format!("subject {id} frame {index}: {e}"));

    let mut samples = Vec::with_capacity(manifest.frames.len());
    for f in &manifest.frames {
        let image = read_pgm(&base.join(&f.image)).map_err(|e| frame_err(f.index, e))?;
        if (image.height(), image.width()) != (manifest.height, manifest.width) {
            return Err(Error::Data(format!(
                "subject {id} frame {}: image extent mismatch, file is {}x{} but manifest declares {}x{}",
                f.index,
                image.height(),
                image.width(),
                manifest.height,
                manifest.width
            )));
        }
        let cloud = read_ply(&base.join(&f.cloud))
            .map_err(|e| frame_err(f.index, e))?
            .cloud;
        if cloud.len() != manifest.num_y {
            return Err(Error::Data(format!(
                "subject {id} frame {}: numY mismatch, cloud has {} vertices but manifest declares {}",
                f.index,
                cloud.len(),
                manifest.num_y
            )));
        }
        let landmarks = match &f.landmarks {
            Some(name) => Some(read_landmarks(&base.join(name)).map_err(|e| frame_err(f.index, e))?),
            None => None,
        };
        samples.push(Sample {
            frame_index: f.index,
            image,
            cloud,
            landmarks,
        });
    }
    SubjectDataset::new(
        id.clone(),
        manifest.height,
        manifest.width,
        manifest.num_y,
        samples,
    )
}

fn write_landmarks(path: &Path, points: &[[f64; 2]]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let wrap = |e: csv::Error| Error::format(path, e.to_string());
    w.write_record(["x", "z"]).map_err(wrap)?;
    for p in points {
        w.write_record([p[0].to_string(), p[1].to_string()])
            .map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_landmarks(path: &Path) -> Result<Vec<[f64; 2]>> {
    let wrap = |e: csv::Error| Error::format(path, e.to_string());
    let mut r = csv::Reader::from_path(path).map_err(wrap)?;
    r.deserialize::<(f64, f64)>()
        .map(|row| row.map(|(x, z)| [x, z]).map_err(wrap))
        .collect()
}

/// Saves every subject under `dir/<subjectId>/` plus a `cohort.json` index.
pub fn save_cohort(subjects: &[SubjectDataset], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for s in subjects {
        save_subject(s, &dir.join(&s.subject_id))?;
    }
    let index = CohortIndex {
        subjects: subjects.iter().map(|s| s.subject_id.clone()).collect(),
    };
    write_json(&dir.join(COHORT_FILE), &index)
}

/// Subject ids of a cohort directory, in index order.
pub fn list_subjects(dir: &Path) -> Result<Vec<String>> {
    Ok(read_json::<CohortIndex>(&dir.join(COHORT_FILE))?.subjects)
}

pub fn load_cohort(dir: &Path) -> Result<Vec<SubjectDataset>> {
    list_subjects(dir)?
        .iter()
        .map(|id| load_subject(&dir.join(id).join(MANIFEST_FILE)))
        .collect()
}
