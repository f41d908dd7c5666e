//! Activity discovery for fully unlabelled corpora.
//!
//! When videos from several activities are mixed together, one global
//! segmentation makes little sense. Instead each video is summarized by a
//! bag-of-words over a codebook of frame embeddings, videos are clustered
//! into `K'` sets, and the ordinary segmentation pipeline runs per set. The
//! sets share one embedding (trained on everything) but get their own
//! cluster models; labels are offset by `set_index * K`, so labels stay
//! globally unique across sets.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::clustering::{build_cluster_model, kmeans, ClusterModel};
use crate::dataset::Dataset;
use crate::decoding::{decode_video, Segmentation};
use crate::embedding::{embed_dataset, EmbeddingModel};
use crate::error::{Error, Result};
use crate::seeds::sub_seed;

/// Frame-embedding codebook for bag-of-words video descriptors.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    /// `V x D` codeword centers.
    pub centers: Array2<f64>,
    /// Soft-assignment bandwidth: mean distance of training frames to their
    /// assigned codeword, floored to stay positive.
    pub sigma: f64,
}

const SIGMA_FLOOR: f64 = 1e-6;

/// Builds a codebook by clustering every frame of the (embedded) dataset
/// into `size` codewords.
pub fn build_codebook(dataset: &Dataset, size: usize, seed: u64) -> Result<Codebook> {
    let (points, _) = dataset.stacked_frames();
    let fit = kmeans(points.view(), size, seed)?;
    let mut total = 0.0;
    for (i, &c) in fit.assignments.iter().enumerate() {
        let d: f64 = points
            .row(i)
            .iter()
            .zip(fit.centers.row(c).iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        total += d.sqrt();
    }
    let sigma = (total / points.nrows() as f64).max(SIGMA_FLOOR);
    Ok(Codebook {
        centers: fit.centers,
        sigma,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BowMode {
    /// Each frame distributes one unit of mass over all codewords with
    /// weights `softmax(-d^2 / (2 sigma^2))`.
    Soft,
    /// Each frame votes for its nearest codeword (lowest index on ties).
    Hard,
}

/// Normalized bag-of-words histogram of a video's frames; entries sum to 1.
pub fn bow_vector(
    frames: ArrayView2<f64>,
    codebook: &Codebook,
    mode: BowMode,
) -> Result<Array1<f64>> {
    if frames.ncols() != codebook.centers.ncols() {
        return Err(Error::DimensionMismatch {
            context: "bag-of-words frames vs codebook".into(),
            expected: codebook.centers.ncols(),
            got: frames.ncols(),
        });
    }
    if frames.nrows() == 0 {
        return Err(Error::EmptyInput("bag-of-words over zero frames".into()));
    }
    let v = codebook.centers.nrows();
    let mut hist = Array1::<f64>::zeros(v);
    let mut dist_sq = vec![0.0; v];
    for frame in frames.rows() {
        for (j, center) in codebook.centers.rows().into_iter().enumerate() {
            dist_sq[j] = frame
                .iter()
                .zip(center.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
        }
        match mode {
            BowMode::Hard => {
                let mut best = (0usize, f64::INFINITY);
                for (j, &d) in dist_sq.iter().enumerate() {
                    if d < best.1 {
                        best = (j, d);
                    }
                }
                hist[best.0] += 1.0;
            }
            BowMode::Soft => {
                let denom = 2.0 * codebook.sigma * codebook.sigma;
                let m = dist_sq.iter().fold(f64::INFINITY, |a, &b| a.min(b));
                let mut weights = vec![0.0; v];
                let mut sum = 0.0;
                for (j, &d) in dist_sq.iter().enumerate() {
                    // Shift by the minimum distance before exponentiating so
                    // the largest weight is exp(0).
                    let w = (-(d - m) / denom).exp();
                    weights[j] = w;
                    sum += w;
                }
                for (j, w) in weights.iter().enumerate() {
                    hist[j] += w / sum;
                }
            }
        }
    }
    let total = hist.sum();
    Ok(hist / total)
}

/// Videos grouped into discovered activity sets. `sets[s]` lists the video
/// ids of set `s`, in dataset order.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivityPartition {
    pub sets: Vec<Vec<String>>,
}

impl ActivityPartition {
    pub fn k_prime(&self) -> usize {
        self.sets.len()
    }

    /// `video_id -> set index` over all sets.
    pub fn set_of(&self) -> BTreeMap<String, usize> {
        let mut map = BTreeMap::new();
        for (s, set) in self.sets.iter().enumerate() {
            for id in set {
                map.insert(id.clone(), s);
            }
        }
        map
    }
}

/// Clusters per-video descriptor vectors into `k_prime` sets.
pub fn cluster_videos(
    video_ids: &[String],
    vectors: ArrayView2<f64>,
    k_prime: usize,
    seed: u64,
) -> Result<ActivityPartition> {
    if video_ids.len() != vectors.nrows() {
        return Err(Error::DimensionMismatch {
            context: "video ids vs descriptor vectors".into(),
            expected: video_ids.len(),
            got: vectors.nrows(),
        });
    }
    let fit = kmeans(vectors, k_prime, seed)?;
    let mut sets = vec![Vec::new(); k_prime];
    for (i, &c) in fit.assignments.iter().enumerate() {
        sets[c].push(video_ids[i].clone());
    }
    Ok(ActivityPartition { sets })
}

/// How a video is summarized for activity clustering.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VideoRepr {
    /// Bag-of-words over a frame-embedding codebook. `codebook_size = None`
    /// defaults to `K' * K` codewords.
    Bow {
        mode: BowMode,
        codebook_size: Option<usize>,
    },
    /// Mean of the frame embeddings, skipping the codebook entirely.
    MeanPool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscoverOptions {
    pub repr: VideoRepr,
    /// Compare descriptors by direction only (L2-normalize before
    /// clustering videos).
    pub cosine: bool,
}

impl Default for DiscoverOptions {
    fn default() -> Self {
        DiscoverOptions {
            repr: VideoRepr::Bow {
                mode: BowMode::Soft,
                codebook_size: None,
            },
            cosine: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Discovery {
    pub partition: ActivityPartition,
    /// One segmentation per video, in dataset order, with globally unique
    /// labels: set `s` uses labels `s * k .. (s + 1) * k`.
    pub segmentations: Vec<(String, Segmentation)>,
    /// Cluster model per set, indexed like `partition.sets`.
    pub models: Vec<ClusterModel>,
    pub codebook: Option<Codebook>,
}

/// Splits an unlabelled corpus into `k_prime` video sets and segments each
/// set with its own `k`-cluster model over the shared embedding.
///
/// Randomness fans out from `seed` per stage; the per-set clustering seed is
/// `sub_seed(seed, "cluster") + set_index`, so with `k_prime = 1` the single
/// set reproduces a plain known-activity run bit for bit.
pub fn discover(
    dataset: &Dataset,
    embedding: &EmbeddingModel,
    k_prime: usize,
    k: usize,
    tau: f64,
    seed: u64,
    opts: &DiscoverOptions,
) -> Result<Discovery> {
    if k_prime == 0 {
        return Err(Error::InvalidParameter("k_prime must be at least 1".into()));
    }
    if k_prime > dataset.num_videos() {
        return Err(Error::InvalidParameter(format!(
            "{} videos cannot form {k_prime} sets",
            dataset.num_videos()
        )));
    }
    let embedded = embed_dataset(embedding, dataset)?;

    let (mut vectors, codebook) = match opts.repr {
        VideoRepr::MeanPool => {
            let dim = embedded.feature_dim();
            let mut vecs = Array2::zeros((embedded.num_videos(), dim));
            for (i, seq) in embedded.sequences.iter().enumerate() {
                vecs.row_mut(i)
                    .assign(&seq.frames.mean_axis(Axis(0)).expect("non-empty video"));
            }
            (vecs, None)
        }
        VideoRepr::Bow {
            mode,
            codebook_size,
        } => {
            let size = codebook_size.unwrap_or(k_prime * k);
            let cb = build_codebook(&embedded, size, sub_seed(seed, "codebook"))?;
            let mut vecs = Array2::zeros((embedded.num_videos(), size));
            for (i, seq) in embedded.sequences.iter().enumerate() {
                vecs.row_mut(i)
                    .assign(&bow_vector(seq.frames.view(), &cb, mode)?);
            }
            (vecs, Some(cb))
        }
    };
    if opts.cosine {
        for mut row in vectors.rows_mut() {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.mapv_inplace(|v| v / norm);
            }
        }
    }

    let ids: Vec<String> = embedded
        .sequences
        .iter()
        .map(|s| s.video_id.clone())
        .collect();
    let partition = cluster_videos(&ids, vectors.view(), k_prime, sub_seed(seed, "videos"))?;

    let cluster_seed = sub_seed(seed, "cluster");
    let mut by_id: BTreeMap<String, Segmentation> = BTreeMap::new();
    let mut models = Vec::with_capacity(k_prime);
    for (s, set) in partition.sets.iter().enumerate() {
        let sub = embedded.subset(set)?;
        let model = build_cluster_model(&sub, k, tau, cluster_seed.wrapping_add(s as u64))?;
        for seq in &sub.sequences {
            let mut seg = decode_video(seq, &model)?;
            for label in seg.labels.iter_mut().flatten() {
                *label += s * k;
            }
            by_id.insert(seq.video_id.clone(), seg);
        }
        models.push(model);
    }

    let segmentations = ids
        .into_iter()
        .map(|id| {
            let seg = by_id.remove(&id).expect("every video was decoded");
            (id, seg)
        })
        .collect();

    Ok(Discovery {
        partition,
        segmentations,
        models,
        codebook,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synth::{generate_activities, SynthSpec};
    use crate::decoding::check_monotone;
    use crate::embedding::{train_embedding, EmbeddingConfig};
    use crate::eval::mean_over_videos;
    use ndarray::array;

    fn toy_codebook() -> Codebook {
        Codebook {
            centers: array![[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]],
            sigma: 1.0,
        }
    }

    #[test]
    fn bow_vectors_are_normalized_histograms() {
        let cb = toy_codebook();
        let frames = array![[0.1, 0.0], [9.9, 0.1], [0.0, 9.8], [0.2, 0.1]];
        for mode in [BowMode::Soft, BowMode::Hard] {
            let h = bow_vector(frames.view(), &cb, mode).unwrap();
            assert_eq!(h.len(), 3);
            assert!((h.sum() - 1.0).abs() < 1e-12);
            assert!(h.iter().all(|&w| w >= 0.0));
        }
        // Hard counts are exact: 2 frames near codeword 0.
        let h = bow_vector(frames.view(), &cb, BowMode::Hard).unwrap();
        assert_eq!(h.to_vec(), vec![0.5, 0.25, 0.25]);

        let bad = array![[1.0, 2.0, 3.0]];
        assert!(bow_vector(bad.view(), &cb, BowMode::Hard).is_err());
    }

    #[test]
    fn soft_weights_are_permutation_equivariant() {
        let cb = toy_codebook();
        let frames = array![[1.0, 2.0], [3.0, 1.0], [7.0, 2.0]];
        let base = bow_vector(frames.view(), &cb, BowMode::Soft).unwrap();
        // Swap codewords 0 and 2: the histogram swaps the same way.
        let swapped = Codebook {
            centers: array![[0.0, 10.0], [10.0, 0.0], [0.0, 0.0]],
            sigma: cb.sigma,
        };
        let h = bow_vector(frames.view(), &swapped, BowMode::Soft).unwrap();
        assert!((h[0] - base[2]).abs() < 1e-12);
        assert!((h[1] - base[1]).abs() < 1e-12);
        assert!((h[2] - base[0]).abs() < 1e-12);
    }

    #[test]
    fn hard_mode_breaks_ties_toward_lower_index() {
        let cb = Codebook {
            centers: array![[1.0], [-1.0]],
            sigma: 1.0,
        };
        let h = bow_vector(array![[0.0]].view(), &cb, BowMode::Hard).unwrap();
        assert_eq!(h.to_vec(), vec![1.0, 0.0]);
    }

    #[test]
    fn cluster_videos_separates_distinct_descriptors() {
        let ids: Vec<String> = (0..6).map(|i| format!("v{i}")).collect();
        let vectors = array![
            [1.0, 0.0],
            [0.9, 0.1],
            [1.1, 0.0],
            [0.0, 5.0],
            [0.1, 4.9],
            [0.0, 5.1]
        ];
        let p = cluster_videos(&ids, vectors.view(), 2, 3).unwrap();
        assert_eq!(p.k_prime(), 2);
        let set_of = p.set_of();
        assert_eq!(set_of["v0"], set_of["v1"]);
        assert_eq!(set_of["v0"], set_of["v2"]);
        assert_eq!(set_of["v3"], set_of["v4"]);
        assert_eq!(set_of["v3"], set_of["v5"]);
        assert_ne!(set_of["v0"], set_of["v3"]);
    }

    fn two_activity_corpus() -> (Dataset, BTreeMap<String, usize>) {
        let base = SynthSpec {
            num_videos: 6,
            num_subactions: 3,
            feature_dim: 6,
            segment_length_range: (6, 10),
            center_spread: 7.0,
            noise_scale: 0.3,
            background_fraction: 0.0,
            drop_probability: 0.0,
            rng_seed: 21,
        };
        let multi = generate_activities(&base, &[3, 3]).unwrap();
        (multi.dataset, multi.activities)
    }

    #[test]
    fn discover_partitions_and_labels_globally() {
        let (dataset, truth) = two_activity_corpus();
        let cfg = EmbeddingConfig {
            embed_dim: 6,
            epochs: 8,
            learning_rate: 0.3,
            rng_seed: 1,
            ..EmbeddingConfig::default()
        };
        let trained = train_embedding(&dataset, &cfg).unwrap();
        let disc = discover(
            &dataset,
            &trained.model,
            2,
            3,
            0.0,
            9,
            &DiscoverOptions::default(),
        )
        .unwrap();
        assert_eq!(disc.partition.k_prime(), 2);
        assert_eq!(disc.segmentations.len(), dataset.num_videos());
        assert_eq!(disc.models.len(), 2);
        assert!(disc.codebook.is_some());

        // Activities are far apart in feature space; the partition should
        // recover them exactly.
        let acc = mean_over_videos(&disc.partition, &truth).unwrap();
        assert_eq!(acc, 1.0, "partition should be perfect on disjoint blobs");

        // Labels are global: set s uses s*k ..= s*k + k - 1, monotone per
        // video after removing the offset.
        let set_of = disc.partition.set_of();
        for (id, seg) in &disc.segmentations {
            let s = set_of[id];
            let local: Vec<Option<usize>> = seg
                .labels
                .iter()
                .map(|l| {
                    l.map(|v| {
                        assert!((s * 3..(s + 1) * 3).contains(&v), "label {v} outside set {s}");
                        v - s * 3
                    })
                })
                .collect();
            check_monotone(&local, 3).unwrap();
        }
    }

    #[test]
    fn discover_rejects_more_sets_than_videos() {
        let (dataset, _) = two_activity_corpus();
        let model = EmbeddingModel::init(dataset.feature_dim(), 4, 1.0, 0);
        let err = discover(&dataset, &model, 999, 3, 0.0, 0, &DiscoverOptions::default());
        assert!(err.is_err());
    }

    #[test]
    fn mean_pool_skips_the_codebook() {
        let (dataset, truth) = two_activity_corpus();
        let cfg = EmbeddingConfig {
            embed_dim: 6,
            epochs: 8,
            learning_rate: 0.3,
            rng_seed: 1,
            ..EmbeddingConfig::default()
        };
        let trained = train_embedding(&dataset, &cfg).unwrap();
        let opts = DiscoverOptions {
            repr: VideoRepr::MeanPool,
            cosine: true,
        };
        let disc = discover(&dataset, &trained.model, 2, 3, 0.0, 9, &opts).unwrap();
        assert!(disc.codebook.is_none());
        let acc = mean_over_videos(&disc.partition, &truth).unwrap();
        assert!(acc >= 0.5);
    }
}
