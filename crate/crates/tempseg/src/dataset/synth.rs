//! Synthetic videos with known structure, for tests and benchmarks.
//!
//! Each video walks through the same global sequence of sub-actions, each
//! sub-action a Gaussian blob around a fixed center in feature space.
//! Sub-actions can drop out per video, and background frames (outliers in
//! the halo of an adjacent segment's blob) can be interleaved between
//! segments. Everything is driven by one seed, so a spec generates the same
//! dataset every time.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dataset::{Dataset, FeatureSequence, GroundTruth, BACKGROUND_LABEL};
use crate::error::{Error, Result};
use crate::seeds::sub_seed;

#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub num_videos: usize,
    pub num_subactions: usize,
    pub feature_dim: usize,
    /// Inclusive bounds on the frame count of each action segment.
    pub segment_length_range: (usize, usize),
    /// Minimum pairwise distance between sub-action centers.
    pub center_spread: f64,
    /// Standard deviation of the isotropic noise around each center.
    pub noise_scale: f64,
    /// Target fraction of background frames per video, in `[0, 1)`.
    pub background_fraction: f64,
    /// Probability that a video skips any given sub-action, in `[0, 1)`.
    pub drop_probability: f64,
    pub rng_seed: u64,
}

impl SynthSpec {
    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.num_videos == 0 {
            return bad("num_videos must be at least 1".into());
        }
        if self.num_subactions == 0 {
            return bad("num_subactions must be at least 1".into());
        }
        if self.feature_dim == 0 {
            return bad("feature_dim must be at least 1".into());
        }
        let (lo, hi) = self.segment_length_range;
        if lo == 0 || lo > hi {
            return bad(format!("segment_length_range ({lo}, {hi}) must satisfy 1 <= lo <= hi"));
        }
        if !(self.center_spread > 0.0) {
            return bad(format!("center_spread {} must be positive", self.center_spread));
        }
        if !(self.noise_scale >= 0.0) {
            return bad(format!("noise_scale {} must be non-negative", self.noise_scale));
        }
        if !(0.0..1.0).contains(&self.background_fraction) {
            return bad(format!(
                "background_fraction {} must be in [0, 1)",
                self.background_fraction
            ));
        }
        if !(0.0..1.0).contains(&self.drop_probability) {
            return bad(format!(
                "drop_probability {} must be in [0, 1)",
                self.drop_probability
            ));
        }
        Ok(())
    }
}

/// Sub-action label for cluster index `j`; zero-padded so lexicographic order
/// matches sub-action order.
fn sub_label(j: usize) -> String {
    format!("sub{j:02}")
}

fn min_dist_sq(point: &[f64], centers: &[Vec<f64>]) -> f64 {
    centers
        .iter()
        .map(|c| {
            point
                .iter()
                .zip(c)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
        })
        .fold(f64::INFINITY, f64::min)
}

/// Rejection-samples `k` centers in a box, keeping pairwise distances at
/// least `spread`. The box grows when placements keep failing, so this
/// terminates for any `k`.
fn sample_centers(rng: &mut ChaCha8Rng, k: usize, dim: usize, spread: f64) -> Vec<Vec<f64>> {
    let mut edge = spread * (k.max(2) as f64);
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut failures = 0;
    while centers.len() < k {
        let cand: Vec<f64> = (0..dim).map(|_| rng.random::<f64>() * edge).collect();
        if centers.is_empty() || min_dist_sq(&cand, &centers) >= spread * spread {
            centers.push(cand);
            failures = 0;
        } else {
            failures += 1;
            if failures >= 200 {
                edge *= 1.5;
                failures = 0;
            }
        }
    }
    centers
}

/// A background frame: an outlier in the halo of one action center, past
/// the bulk of that action's noise but still closer to its anchor than to
/// any other center. This is the regime the per-cluster background fraction
/// is meant for: background lives in the tails of the action clusters
/// rather than forming a cluster of its own.
fn sample_background(
    rng: &mut ChaCha8Rng,
    anchor: &[f64],
    noise_scale: f64,
    spread: f64,
) -> Vec<f64> {
    let dim = anchor.len();
    let dir: Vec<f64> = (0..dim)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
    // Action frames concentrate within ~(sqrt(dim) + 2.5) noise units of
    // their center; centers are at least `spread` apart, so any radius
    // below 0.45 * spread keeps the anchor as the nearest center.
    let hi = 0.45 * spread;
    let lo = (noise_scale * ((dim as f64).sqrt() + 2.5))
        .max(0.05 * spread)
        .min(hi * 0.99);
    let radius = rng.random_range(lo..hi);
    dir.iter()
        .zip(anchor)
        .map(|(d, c)| c + radius * d / norm)
        .collect()
}

pub fn generate_synthetic(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let k = spec.num_subactions;
    let dim = spec.feature_dim;
    let centers = sample_centers(&mut rng, k, dim, spec.center_spread);

    let mut sequences = Vec::with_capacity(spec.num_videos);
    let mut gts = Vec::with_capacity(spec.num_videos);
    for m in 0..spec.num_videos {
        let video_id = format!("video{m:03}");

        let mut survivors: Vec<usize> = (0..k)
            .filter(|_| rng.random::<f64>() >= spec.drop_probability)
            .collect();
        if survivors.is_empty() {
            // A video needs at least one segment; keep one sub-action anyway.
            survivors.push(rng.random_range(0..k));
        }

        let mut segments: Vec<(usize, Vec<Vec<f64>>)> = Vec::with_capacity(survivors.len());
        let mut action_frames = 0usize;
        for &j in &survivors {
            let (lo, hi) = spec.segment_length_range;
            let len = rng.random_range(lo..=hi);
            let mut seg = Vec::with_capacity(len);
            for _ in 0..len {
                let frame: Vec<f64> = centers[j]
                    .iter()
                    .map(|c| c + spec.noise_scale * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                seg.push(frame);
            }
            action_frames += len;
            segments.push((j, seg));
        }

        // background_fraction = B / (A + B), so B = f / (1 - f) * A.
        let bf = spec.background_fraction;
        let bg_total = (bf / (1.0 - bf) * action_frames as f64).round() as usize;
        let gaps = survivors.len() + 1;
        let mut gap_counts = vec![0usize; gaps];
        for _ in 0..bg_total {
            gap_counts[rng.random_range(0..gaps)] += 1;
        }

        let total = action_frames + bg_total;
        let mut frames = Array2::zeros((total, dim));
        let mut labels = Vec::with_capacity(total);
        let mut row = 0;
        let mut push = |frames: &mut Array2<f64>, labels: &mut Vec<String>,
                        frame: Vec<f64>,
                        label: String| {
            frames
                .row_mut(row)
                .assign(&Array1::from_vec(frame));
            labels.push(label);
            row += 1;
        };
        // Each background frame hangs off a temporally adjacent surviving
        // segment: the next one for the leading gap, the previous one for
        // the trailing gap, a coin flip per frame in between.
        let anchor = |rng: &mut ChaCha8Rng, g: usize| -> usize {
            if g == 0 {
                survivors[0]
            } else if g == survivors.len() || rng.random::<bool>() {
                survivors[g - 1]
            } else {
                survivors[g]
            }
        };
        for (g, (j, seg)) in segments.into_iter().enumerate() {
            for _ in 0..gap_counts[g] {
                let a = anchor(&mut rng, g);
                let f =
                    sample_background(&mut rng, &centers[a], spec.noise_scale, spec.center_spread);
                push(&mut frames, &mut labels, f, BACKGROUND_LABEL.to_owned());
            }
            for frame in seg {
                push(&mut frames, &mut labels, frame, sub_label(j));
            }
        }
        for _ in 0..gap_counts[gaps - 1] {
            let a = anchor(&mut rng, gaps - 1);
            let f = sample_background(&mut rng, &centers[a], spec.noise_scale, spec.center_spread);
            push(&mut frames, &mut labels, f, BACKGROUND_LABEL.to_owned());
        }

        sequences.push(FeatureSequence::new(video_id.clone(), frames)?);
        gts.push(GroundTruth { video_id, labels });
    }
    Dataset::new(sequences, Some(gts))
}

/// A multi-activity corpus: several synthetic activities merged into one
/// dataset, with disjoint feature supports and namespaced labels.
#[derive(Debug, Clone)]
pub struct MultiActivity {
    pub dataset: Dataset,
    /// Video id to activity index.
    pub activities: BTreeMap<String, usize>,
}

/// Generates one activity per entry of `subactions` (the entry is that
/// activity's sub-action count), shifts each activity's features along
/// dimension 0 so the activities occupy disjoint regions, and merges them.
/// Video ids and labels get an `a{index}_` prefix.
pub fn generate_activities(base: &SynthSpec, subactions: &[usize]) -> Result<MultiActivity> {
    if subactions.is_empty() {
        return Err(Error::InvalidParameter(
            "need at least one activity".into(),
        ));
    }
    let mut parts = Vec::with_capacity(subactions.len());
    let mut activities = BTreeMap::new();
    // Next free coordinate along dimension 0, advanced past each activity's
    // actual extent; the gap keeps blobs from adjacent activities apart no
    // matter how far the sampling box grew.
    let mut floor = 0.0f64;
    let gap = 2.0 * base.center_spread;
    for (a, &k) in subactions.iter().enumerate() {
        let spec = SynthSpec {
            num_subactions: k,
            rng_seed: sub_seed(base.rng_seed, &format!("activity{a}")),
            ..base.clone()
        };
        let part = generate_synthetic(&spec)?;
        let lo = part
            .sequences
            .iter()
            .flat_map(|s| s.frames.column(0))
            .fold(f64::INFINITY, |m, &v| m.min(v));
        let shift = floor - lo;
        let mut hi = f64::NEG_INFINITY;
        let prefix = format!("a{a:02}_");
        let mut sequences = Vec::with_capacity(part.sequences.len());
        for seq in part.sequences {
            let mut frames = seq.frames;
            for v in frames.column_mut(0) {
                *v += shift;
                hi = hi.max(*v);
            }
            let id = format!("{prefix}{}", seq.video_id);
            activities.insert(id.clone(), a);
            sequences.push(FeatureSequence::new(id, frames)?);
        }
        let gt = part.ground_truth.map(|gts| {
            gts.into_iter()
                .map(|g| GroundTruth {
                    video_id: format!("{prefix}{}", g.video_id),
                    labels: g
                        .labels
                        .into_iter()
                        .map(|l| {
                            if l == BACKGROUND_LABEL {
                                l
                            } else {
                                format!("{prefix}{l}")
                            }
                        })
                        .collect(),
                })
                .collect()
        });
        parts.push(Dataset::new(sequences, gt)?);
        floor = hi + gap;
    }
    Ok(MultiActivity {
        dataset: Dataset::merge(parts)?,
        activities,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_spec() -> SynthSpec {
        SynthSpec {
            num_videos: 4,
            num_subactions: 3,
            feature_dim: 5,
            segment_length_range: (4, 9),
            center_spread: 6.0,
            noise_scale: 0.4,
            background_fraction: 0.0,
            drop_probability: 0.0,
            rng_seed: 11,
        }
    }

    #[test]
    fn same_seed_same_dataset() {
        let spec = base_spec();
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        assert_eq!(a.sequences, b.sequences);
        assert_eq!(a.ground_truth, b.ground_truth);
        let c = generate_synthetic(&SynthSpec {
            rng_seed: 12,
            ..spec
        })
        .unwrap();
        assert_ne!(a.sequences[0].frames, c.sequences[0].frames);
    }

    #[test]
    fn labels_follow_global_order_and_lengths_in_range() {
        let spec = base_spec();
        let ds = generate_synthetic(&spec).unwrap();
        for gt in ds.ground_truth.as_ref().unwrap() {
            // With drop_probability 0 every video shows sub00, sub01, sub02.
            let mut runs: Vec<(String, usize)> = Vec::new();
            for l in &gt.labels {
                match runs.last_mut() {
                    Some((prev, n)) if prev == l => *n += 1,
                    _ => runs.push((l.clone(), 1)),
                }
            }
            assert_eq!(
                runs.iter().map(|(l, _)| l.as_str()).collect::<Vec<_>>(),
                vec!["sub00", "sub01", "sub02"]
            );
            for (_, len) in runs {
                assert!((4..=9).contains(&len));
            }
        }
    }

    #[test]
    fn background_fraction_is_respected() {
        let spec = SynthSpec {
            background_fraction: 0.3,
            ..base_spec()
        };
        let ds = generate_synthetic(&spec).unwrap();
        for gt in ds.ground_truth.as_ref().unwrap() {
            let bg = gt.labels.iter().filter(|l| *l == BACKGROUND_LABEL).count();
            let total = gt.labels.len();
            // B = round(f/(1-f) * A) makes B/(A+B) exact up to rounding.
            let actual = bg as f64 / total as f64;
            assert!((actual - 0.3).abs() < 0.05, "fraction {actual}");
        }
    }

    #[test]
    fn centers_respect_spread_via_segment_means() {
        // Cluster means of noiseless data are the centers themselves.
        let spec = SynthSpec {
            noise_scale: 0.0,
            num_videos: 1,
            ..base_spec()
        };
        let ds = generate_synthetic(&spec).unwrap();
        let seq = &ds.sequences[0];
        let gt = &ds.ground_truth.as_ref().unwrap()[0];
        let mut centers: Vec<Vec<f64>> = Vec::new();
        for j in 0..3 {
            let label = sub_label(j);
            let rows: Vec<_> = (0..seq.num_frames())
                .filter(|&n| gt.labels[n] == label)
                .collect();
            assert!(!rows.is_empty());
            let c: Vec<f64> = seq.frames.row(rows[0]).to_vec();
            for &r in &rows {
                assert_eq!(seq.frames.row(r).to_vec(), c, "noiseless frames equal center");
            }
            centers.push(c);
        }
        for i in 0..3 {
            for j in (i + 1)..3 {
                let d = centers[i]
                    .iter()
                    .zip(&centers[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                assert!(d >= 6.0, "centers {i},{j} only {d} apart");
            }
        }
    }

    #[test]
    fn drop_probability_drops_some_segments() {
        let spec = SynthSpec {
            num_videos: 40,
            drop_probability: 0.4,
            ..base_spec()
        };
        let ds = generate_synthetic(&spec).unwrap();
        let mut kept = 0usize;
        let mut videos_nonempty = 0usize;
        for gt in ds.ground_truth.as_ref().unwrap() {
            let distinct: std::collections::BTreeSet<_> =
                gt.labels.iter().filter(|l| *l != BACKGROUND_LABEL).collect();
            assert!(!distinct.is_empty());
            videos_nonempty += 1;
            kept += distinct.len();
        }
        let mean_kept = kept as f64 / videos_nonempty as f64;
        assert!(mean_kept < 2.6, "expected drops, mean kept {mean_kept}");
    }

    #[test]
    fn background_frames_are_halo_outliers_of_one_center() {
        // Noiseless data makes action frames equal their centers, so the
        // halo band is checkable exactly: radius in [0.05, 0.45) * spread,
        // and the second-nearest center stays out of reach.
        let spec = SynthSpec {
            background_fraction: 0.3,
            noise_scale: 0.0,
            ..base_spec()
        };
        let ds = generate_synthetic(&spec).unwrap();
        for (seq, gt) in ds.sequences.iter().zip(ds.ground_truth.as_ref().unwrap()) {
            let mut centers: Vec<Vec<f64>> = Vec::new();
            for n in 0..seq.num_frames() {
                if gt.labels[n] == BACKGROUND_LABEL {
                    continue;
                }
                let row = seq.frames.row(n).to_vec();
                if !centers.contains(&row) {
                    centers.push(row);
                }
            }
            for n in 0..seq.num_frames() {
                if gt.labels[n] != BACKGROUND_LABEL {
                    continue;
                }
                let bg = seq.frames.row(n);
                let mut dists: Vec<f64> = centers
                    .iter()
                    .map(|c| {
                        bg.iter()
                            .zip(c)
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum::<f64>()
                            .sqrt()
                    })
                    .collect();
                dists.sort_by(|a, b| a.total_cmp(b));
                assert!(
                    dists[0] >= 0.05 * 6.0 - 1e-9 && dists[0] < 0.45 * 6.0,
                    "halo radius {} out of band",
                    dists[0]
                );
                if dists.len() > 1 {
                    assert!(dists[1] > 0.45 * 6.0, "ambiguous anchor: {}", dists[1]);
                }
            }
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let good = base_spec();
        for bad in [
            SynthSpec { num_videos: 0, ..good.clone() },
            SynthSpec { segment_length_range: (5, 4), ..good.clone() },
            SynthSpec { segment_length_range: (0, 4), ..good.clone() },
            SynthSpec { background_fraction: 1.0, ..good.clone() },
            SynthSpec { drop_probability: -0.1, ..good.clone() },
            SynthSpec { noise_scale: -1.0, ..good.clone() },
            SynthSpec { center_spread: 0.0, ..good.clone() },
        ] {
            assert!(generate_synthetic(&bad).is_err());
        }
    }

    #[test]
    fn activities_are_disjoint_and_namespaced() {
        let multi = generate_activities(&base_spec(), &[3, 2]).unwrap();
        let ds = &multi.dataset;
        assert_eq!(ds.num_videos(), 8);
        // Activity extents along dimension 0 must not overlap.
        let extent = |a: usize| {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for seq in &ds.sequences {
                if multi.activities[&seq.video_id] != a {
                    continue;
                }
                for &v in seq.frames.column(0) {
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
            }
            (lo, hi)
        };
        let (_, hi0) = extent(0);
        let (lo1, _) = extent(1);
        assert!(hi0 < lo1, "activities overlap: {hi0} vs {lo1}");
        let labels: std::collections::BTreeSet<_> = ds
            .ground_truth
            .as_ref()
            .unwrap()
            .iter()
            .flat_map(|g| g.labels.iter())
            .filter(|l| *l != BACKGROUND_LABEL)
            .cloned()
            .collect();
        assert_eq!(labels.len(), 5, "3 + 2 namespaced classes");
        assert!(labels.iter().all(|l| l.starts_with("a0") || l.starts_with("a1")));
    }
}
