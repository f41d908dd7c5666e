//! Videos as frame-feature matrices, ground truth, and synthetic data.
//!
//! A dataset is a set of videos, each a dense `N x D` matrix of per-frame
//! features, optionally paired with per-frame string labels. On disk the
//! layout is one file per video in a features directory, with ground truth
//! (when present) under the same file stem in a separate directory; see [`io`].

pub mod io;
pub mod synth;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

/// Ground-truth label that marks frames outside any action.
pub const BACKGROUND_LABEL: &str = "background";

/// One video: a row-per-frame feature matrix plus relative timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub video_id: String,
    /// `N x D`, one row per frame.
    pub frames: Array2<f64>,
    /// Relative frame positions `(n + 1) / N`, so the first frame of a
    /// 4-frame video sits at 0.25 and the last at 1.0.
    pub timestamps: Vec<f64>,
}

impl FeatureSequence {
    pub fn new(video_id: impl Into<String>, frames: Array2<f64>) -> Result<Self> {
        let video_id = video_id.into();
        if frames.nrows() == 0 {
            return Err(Error::EmptyInput(format!("video {video_id} has no frames")));
        }
        if frames.ncols() == 0 {
            return Err(Error::EmptyInput(format!(
                "video {video_id} has zero-dimensional features"
            )));
        }
        if let Some(bad) = frames.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "feature value {bad} in video {video_id}"
            )));
        }
        let n = frames.nrows();
        let timestamps = (0..n).map(|i| (i + 1) as f64 / n as f64).collect();
        Ok(FeatureSequence {
            video_id,
            frames,
            timestamps,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn feature_dim(&self) -> usize {
        self.frames.ncols()
    }
}

/// Per-frame labels for one video. `labels[n]` names the action at frame `n`;
/// [`BACKGROUND_LABEL`] marks frames outside any action.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub video_id: String,
    pub labels: Vec<String>,
}

/// A collection of videos, optionally labelled. Ground truth, when present,
/// is index-aligned with `sequences` and covers every video.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub sequences: Vec<FeatureSequence>,
    pub ground_truth: Option<Vec<GroundTruth>>,
}

impl Dataset {
    /// Builds a dataset, enforcing the invariants the rest of the pipeline
    /// relies on: at least one video, unique ids, one shared feature
    /// dimensionality, and ground truth (if any) matching videos one-to-one
    /// with one label per frame. Ground truth may arrive in any order; it is
    /// re-sorted to align with `sequences`.
    pub fn new(
        sequences: Vec<FeatureSequence>,
        ground_truth: Option<Vec<GroundTruth>>,
    ) -> Result<Self> {
        if sequences.is_empty() {
            return Err(Error::EmptyInput("dataset has no videos".into()));
        }
        let dim = sequences[0].feature_dim();
        for seq in &sequences {
            if seq.feature_dim() != dim {
                return Err(Error::DimensionMismatch {
                    context: format!("video {}", seq.video_id),
                    expected: dim,
                    got: seq.feature_dim(),
                });
            }
        }
        let mut ids: Vec<&str> = sequences.iter().map(|s| s.video_id.as_str()).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::VideoMismatch(format!("duplicate video id {}", w[0])));
        }

        let ground_truth = match ground_truth {
            None => None,
            Some(mut gt) => {
                if gt.len() != sequences.len() {
                    return Err(Error::VideoMismatch(format!(
                        "{} videos but {} ground-truth entries",
                        sequences.len(),
                        gt.len()
                    )));
                }
                let mut aligned = Vec::with_capacity(sequences.len());
                for seq in &sequences {
                    let pos = gt
                        .iter()
                        .position(|g| g.video_id == seq.video_id)
                        .ok_or_else(|| {
                            Error::VideoMismatch(format!(
                                "no ground truth for video {}",
                                seq.video_id
                            ))
                        })?;
                    let g = gt.swap_remove(pos);
                    if g.labels.len() != seq.num_frames() {
                        return Err(Error::DimensionMismatch {
                            context: format!("ground truth for video {}", seq.video_id),
                            expected: seq.num_frames(),
                            got: g.labels.len(),
                        });
                    }
                    aligned.push(g);
                }
                Some(aligned)
            }
        };

        Ok(Dataset {
            sequences,
            ground_truth,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.sequences[0].feature_dim()
    }

    pub fn num_videos(&self) -> usize {
        self.sequences.len()
    }

    pub fn total_frames(&self) -> usize {
        self.sequences.iter().map(|s| s.num_frames()).sum()
    }

    /// All frames of all videos stacked into one matrix, in video order, plus
    /// the matching timestamps. This is the clustering view of the data.
    pub fn stacked_frames(&self) -> (Array2<f64>, Array1<f64>) {
        let dim = self.feature_dim();
        let total = self.total_frames();
        let mut frames = Array2::zeros((total, dim));
        let mut ts = Array1::zeros(total);
        let mut row = 0;
        for seq in &self.sequences {
            for (i, frame) in seq.frames.rows().into_iter().enumerate() {
                frames.row_mut(row).assign(&frame);
                ts[row] = seq.timestamps[i];
                row += 1;
            }
        }
        (frames, ts)
    }

    /// Concatenates several datasets into one. Ground truth is kept only if
    /// every part carries it.
    pub fn merge(parts: Vec<Dataset>) -> Result<Dataset> {
        if parts.is_empty() {
            return Err(Error::EmptyInput("no datasets to merge".into()));
        }
        let keep_gt = parts.iter().all(|p| p.ground_truth.is_some());
        let mut sequences = Vec::new();
        let mut gt = Vec::new();
        for part in parts {
            sequences.extend(part.sequences);
            if keep_gt {
                gt.extend(part.ground_truth.expect("checked above"));
            }
        }
        Dataset::new(sequences, keep_gt.then_some(gt))
    }

    /// The videos named by `ids`, in the given order, with their ground truth
    /// (if present). Unknown ids are an error.
    pub fn subset(&self, ids: &[String]) -> Result<Dataset> {
        let mut sequences = Vec::with_capacity(ids.len());
        let mut gt = self.ground_truth.as_ref().map(|_| Vec::new());
        for id in ids {
            let pos = self
                .sequences
                .iter()
                .position(|s| &s.video_id == id)
                .ok_or_else(|| Error::VideoMismatch(format!("unknown video id {id}")))?;
            sequences.push(self.sequences[pos].clone());
            if let (Some(gt), Some(all)) = (gt.as_mut(), self.ground_truth.as_ref()) {
                gt.push(all[pos].clone());
            }
        }
        Dataset::new(sequences, gt)
    }
}
