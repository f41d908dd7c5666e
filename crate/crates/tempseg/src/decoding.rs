//! Order-constrained decoding.
//!
//! Within a video the clusters must appear in their temporal order: the
//! first non-background frame carries the first cluster, the last carries
//! the final one, and consecutive non-background frames either stay in the
//! same cluster or advance to the next. [`viterbi_decode`] finds the
//! maximum-likelihood assignment under that constraint in `O(N K)`;
//! [`brute_force_decode`] enumerates every valid assignment and exists as an
//! independent check of the dynamic program.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;

use crate::clustering::ClusterModel;
use crate::dataset::FeatureSequence;
use crate::error::{Error, Result};

/// Per-frame log-probabilities, `N x K`, with column `j` belonging to the
/// cluster at position `j` of the temporal order. All entries finite.
#[derive(Debug, Clone)]
pub struct EmissionMatrix {
    log_probs: Array2<f64>,
}

impl EmissionMatrix {
    pub fn new(log_probs: Array2<f64>) -> Result<Self> {
        if log_probs.nrows() == 0 || log_probs.ncols() == 0 {
            return Err(Error::EmptyInput("empty emission matrix".into()));
        }
        if let Some(bad) = log_probs.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("emission value {bad}")));
        }
        Ok(EmissionMatrix { log_probs })
    }

    pub fn num_frames(&self) -> usize {
        self.log_probs.nrows()
    }

    pub fn num_clusters(&self) -> usize {
        self.log_probs.ncols()
    }

    pub fn log_probs(&self) -> &Array2<f64> {
        &self.log_probs
    }
}

/// A decoded video. `labels[n]` is the position in the temporal order
/// (0-based) of frame `n`'s cluster, or `None` for background. `score` is
/// the summed log-probability of the decoded path over non-background
/// frames.
#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    pub labels: Vec<Option<usize>>,
    pub score: f64,
}

/// Validates the order constraint: ignoring background, labels start at 0,
/// end at `k - 1`, and consecutive steps are 0 or +1.
pub fn check_monotone(labels: &[Option<usize>], k: usize) -> Result<()> {
    let err = |msg: String| Err(Error::OrderViolation(msg));
    let mut prev: Option<usize> = None;
    for (n, label) in labels.iter().enumerate() {
        let Some(l) = *label else { continue };
        if l >= k {
            return err(format!("frame {n}: label {l} out of range for {k} clusters"));
        }
        match prev {
            None if l != 0 => return err(format!("first non-background label is {l}, not 0")),
            Some(p) if l < p || l > p + 1 => {
                return err(format!("frame {n}: step from {p} to {l}"));
            }
            _ => {}
        }
        prev = Some(l);
    }
    match prev {
        None => err("no non-background frames".into()),
        Some(last) if last != k - 1 => {
            err(format!("last non-background label is {last}, not {}", k - 1))
        }
        _ => Ok(()),
    }
}

fn check_decodable(n: usize, k: usize) -> Result<()> {
    if n < k {
        return Err(Error::InvalidParameter(format!(
            "{n} frames cannot visit {k} clusters in order"
        )));
    }
    Ok(())
}

/// Maximum-likelihood path through the emission matrix that visits every
/// column once, in order, with unit or zero steps. Ties resolve to the
/// lexicographically smallest label sequence (stay as long as possible).
pub fn viterbi_decode(em: &EmissionMatrix) -> Result<Segmentation> {
    let n = em.num_frames();
    let k = em.num_clusters();
    check_decodable(n, k)?;
    let lp = &em.log_probs;

    let mut dp = Array2::from_elem((n, k), f64::NEG_INFINITY);
    dp[[0, 0]] = lp[[0, 0]];
    for i in 1..n {
        // Feasible band: j <= i (need i+1 frames to pass j+1 clusters) and
        // enough frames must remain to reach column k-1.
        let lo = (k + i).saturating_sub(n);
        let hi = i.min(k - 1);
        for j in lo..=hi {
            let stay = dp[[i - 1, j]];
            let advance = if j > 0 { dp[[i - 1, j - 1]] } else { f64::NEG_INFINITY };
            let best = stay.max(advance);
            if best > f64::NEG_INFINITY {
                dp[[i, j]] = lp[[i, j]] + best;
            }
        }
    }

    let score = dp[[n - 1, k - 1]];
    let mut path = vec![0usize; n];
    let mut j = k - 1;
    path[n - 1] = j;
    for i in (1..n).rev() {
        // On ties prefer having advanced at frame i: advances land as late
        // as possible, which is the lexicographically smallest sequence.
        if j > 0 && dp[[i - 1, j - 1]] >= dp[[i - 1, j]] {
            j -= 1;
        }
        path[i - 1] = j;
    }
    debug_assert_eq!(j, 0);

    Ok(Segmentation {
        labels: path.into_iter().map(Some).collect(),
        score,
    })
}

const BRUTE_MAX_FRAMES: usize = 16;
const BRUTE_MAX_CLUSTERS: usize = 5;

/// Enumerates every valid path and keeps the best, preferring the
/// lexicographically smallest on ties. Exponential; refuses inputs beyond
/// 16 frames or 5 clusters.
pub fn brute_force_decode(em: &EmissionMatrix) -> Result<Segmentation> {
    let n = em.num_frames();
    let k = em.num_clusters();
    check_decodable(n, k)?;
    if n > BRUTE_MAX_FRAMES || k > BRUTE_MAX_CLUSTERS {
        return Err(Error::ExhaustiveLimit {
            frames: n,
            clusters: k,
            max_frames: BRUTE_MAX_FRAMES,
            max_clusters: BRUTE_MAX_CLUSTERS,
        });
    }
    let lp = &em.log_probs;
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut path = vec![0usize];
    // Stay is explored before advance, so paths come out in lexicographic
    // order and keeping only strict improvements retains the smallest
    // argmax.
    fn recurse(
        lp: &Array2<f64>,
        frame: usize,
        label: usize,
        score: f64,
        path: &mut Vec<usize>,
        best: &mut Option<(f64, Vec<usize>)>,
    ) {
        let (n, k) = lp.dim();
        if frame == n {
            if label == k - 1 && best.as_ref().map_or(true, |(s, _)| score > *s) {
                *best = Some((score, path.clone()));
            }
            return;
        }
        for next in [label, label + 1] {
            if next >= k || k - 1 - next > n - 1 - frame {
                continue;
            }
            path.push(next);
            recurse(lp, frame + 1, next, score + lp[[frame, next]], path, best);
            path.pop();
        }
    }
    recurse(lp, 1, 0, lp[[0, 0]], &mut path, &mut best);
    let (score, labels) = best.expect("n >= k guarantees at least one valid path");
    Ok(Segmentation {
        labels: labels.into_iter().map(Some).collect(),
        score,
    })
}

/// Decodes one embedded video against a cluster model, using the model's own
/// temporal order.
pub fn decode_video(seq: &FeatureSequence, model: &ClusterModel) -> Result<Segmentation> {
    decode_video_with_order(seq, model, &model.order)
}

/// Same as [`decode_video`] but with a caller-supplied cluster order, for
/// experiments that rank clusters by other means.
pub fn decode_video_with_order(
    seq: &FeatureSequence,
    model: &ClusterModel,
    order: &[usize],
) -> Result<Segmentation> {
    let k = model.k();
    if seq.feature_dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            context: format!("video {} vs cluster model", seq.video_id),
            expected: model.dim(),
            got: seq.feature_dim(),
        });
    }
    {
        let mut seen = vec![false; k];
        if order.len() != k || !order.iter().all(|&c| c < k && !std::mem::replace(&mut seen[c], true)) {
            return Err(Error::InvalidParameter(format!(
                "order {order:?} is not a permutation of 0..{k}"
            )));
        }
    }

    // Background: frames farther from their nearest center than that
    // cluster's keep radius.
    let n = seq.num_frames();
    let background: Vec<bool> = match &model.bg_radius {
        None => vec![false; n],
        Some(radii) => (0..n)
            .map(|i| {
                let frame = seq.frames.row(i);
                let mut best = (0usize, f64::INFINITY);
                for (c, center) in model.centers.rows().into_iter().enumerate() {
                    let d = frame
                        .iter()
                        .zip(center.iter())
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>();
                    if d < best.1 {
                        best = (c, d);
                    }
                }
                best.1.sqrt() > radii[best.0]
            })
            .collect(),
    };

    let kept: Vec<usize> = (0..n).filter(|&i| !background[i]).collect();
    if kept.len() < k {
        return Err(Error::TooFewFrames {
            video_id: seq.video_id.clone(),
            frames: kept.len(),
            k,
        });
    }

    let mut logp = Array2::zeros((kept.len(), k));
    for (row, &i) in kept.iter().enumerate() {
        for (j, &cluster) in order.iter().enumerate() {
            logp[[row, j]] = model.gaussians[cluster].log_likelihood(seq.frames.row(i));
        }
    }
    let decoded = viterbi_decode(&EmissionMatrix::new(logp)?)?;

    let mut labels = vec![None; n];
    for (row, &i) in kept.iter().enumerate() {
        labels[i] = decoded.labels[row];
    }
    Ok(Segmentation {
        labels,
        score: decoded.score,
    })
}

/// One line per frame: the 1-based position in the temporal order, or the
/// word `background`.
pub fn write_segmentation(labels: &[Option<usize>], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for label in labels {
        match label {
            Some(p) => writeln!(w, "{}", p + 1).map_err(|e| Error::io(path, e))?,
            None => writeln!(w, "background").map_err(|e| Error::io(path, e))?,
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_segmentation(path: &Path) -> Result<Vec<Option<usize>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut labels = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let tok = line.trim();
        if tok.is_empty() {
            continue;
        }
        if tok == crate::dataset::BACKGROUND_LABEL {
            labels.push(None);
            continue;
        }
        let v: usize = tok.parse().map_err(|_| Error::Parse {
            path: path.to_owned(),
            line: idx + 1,
            what: "segment label",
            detail: format!("{tok:?} is neither a positive index nor background"),
        })?;
        if v == 0 {
            return Err(Error::Parse {
                path: path.to_owned(),
                line: idx + 1,
                what: "segment label",
                detail: "labels are 1-based".into(),
            });
        }
        labels.push(Some(v - 1));
    }
    Ok(labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::DiagGaussian;
    use ndarray::array;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn em(values: Array2<f64>) -> EmissionMatrix {
        EmissionMatrix::new(values).unwrap()
    }

    #[test]
    fn all_equal_emissions_stay_as_long_as_possible() {
        let seg = viterbi_decode(&em(Array2::zeros((4, 2)))).unwrap();
        assert_eq!(
            seg.labels,
            vec![Some(0), Some(0), Some(0), Some(1)],
            "ties must prefer staying"
        );
        assert_eq!(seg.score, 0.0);
    }

    #[test]
    fn hand_checked_path() {
        // Frame 1 is ambiguous; frames 0 and 2 pin the ends. Both valid
        // paths score -1, so the lexicographically smaller [0,0,1] wins.
        let m = em(array![[0.0, -10.0], [-1.0, -1.0], [-10.0, 0.0]]);
        let seg = viterbi_decode(&m).unwrap();
        assert_eq!(seg.labels, vec![Some(0), Some(0), Some(1)]);
        assert_eq!(seg.score, -1.0);

        // Make advancing early strictly better.
        let m = em(array![[0.0, -10.0], [-5.0, -1.0], [-10.0, 0.0]]);
        let seg = viterbi_decode(&m).unwrap();
        assert_eq!(seg.labels, vec![Some(0), Some(1), Some(1)]);
        assert_eq!(seg.score, -1.0);
    }

    #[test]
    fn n_equals_k_forces_the_diagonal() {
        let m = em(Array2::from_shape_fn((3, 3), |(i, j)| {
            // Strongly prefer the wrong labels; the constraint must win.
            if i == j {
                -100.0
            } else {
                0.0
            }
        }));
        let seg = viterbi_decode(&m).unwrap();
        assert_eq!(seg.labels, vec![Some(0), Some(1), Some(2)]);
        assert_eq!(seg.score, -300.0);
    }

    #[test]
    fn too_few_frames_is_an_error() {
        assert!(viterbi_decode(&em(Array2::zeros((2, 3)))).is_err());
        assert!(brute_force_decode(&em(Array2::zeros((2, 3)))).is_err());
    }

    #[test]
    fn brute_force_refuses_large_inputs() {
        assert!(matches!(
            brute_force_decode(&em(Array2::zeros((17, 2)))),
            Err(Error::ExhaustiveLimit { .. })
        ));
        assert!(matches!(
            brute_force_decode(&em(Array2::zeros((10, 6)))),
            Err(Error::ExhaustiveLimit { .. })
        ));
    }

    #[test]
    fn emissions_must_be_finite() {
        assert!(EmissionMatrix::new(array![[0.0], [f64::NEG_INFINITY]]).is_err());
        assert!(EmissionMatrix::new(array![[f64::NAN]]).is_err());
    }

    #[test]
    fn viterbi_agrees_with_enumeration_on_random_and_tied_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(505);
        for case in 0..80 {
            let k = rng.random_range(1..=4);
            let n = rng.random_range(k..=10);
            let values = Array2::from_shape_fn((n, k), |_| {
                if case % 2 == 0 {
                    // Small integers force frequent exact ties.
                    rng.random_range(-3..=0) as f64
                } else {
                    rng.random_range(-10.0..0.0)
                }
            });
            let m = em(values);
            let fast = viterbi_decode(&m).unwrap();
            let slow = brute_force_decode(&m).unwrap();
            assert_eq!(fast.labels, slow.labels, "case {case}");
            assert_eq!(fast.score.to_bits(), slow.score.to_bits(), "case {case}");
        }
    }

    #[test]
    fn monotone_checker_accepts_and_rejects() {
        let ok = vec![Some(0), None, Some(0), Some(1), None, Some(2)];
        check_monotone(&ok, 3).unwrap();

        for (labels, k) in [
            (vec![Some(1), Some(1)], 2),                 // starts late
            (vec![Some(0), Some(0)], 2),                 // never reaches the end
            (vec![Some(0), Some(2), Some(2)], 3),        // skips a cluster
            (vec![Some(0), Some(1), Some(0)], 2),        // goes backwards
            (vec![None, None], 2),                       // nothing decoded
            (vec![Some(0), Some(5)], 2),                 // out of range
        ] {
            assert!(
                check_monotone(&labels, k).is_err(),
                "{labels:?} should violate"
            );
        }
    }

    fn toy_model() -> ClusterModel {
        // Two 1D clusters at 0 and 10, in temporal order [0, 1].
        ClusterModel {
            centers: array![[0.0], [10.0]],
            gaussians: vec![
                DiagGaussian {
                    mean: array![0.0],
                    var: array![1.0],
                },
                DiagGaussian {
                    mean: array![10.0],
                    var: array![1.0],
                },
            ],
            time_means: vec![0.25, 0.75],
            order: vec![0, 1],
            bg_radius: None,
        }
    }

    #[test]
    fn decode_video_maps_positions_back_to_frames() {
        let seq = FeatureSequence::new("v", array![[0.1], [0.2], [9.9], [10.1]]).unwrap();
        let seg = decode_video(&seq, &toy_model()).unwrap();
        assert_eq!(seg.labels, vec![Some(0), Some(0), Some(1), Some(1)]);
        check_monotone(&seg.labels, 2).unwrap();
    }

    #[test]
    fn decode_video_with_background_radii() {
        let mut model = toy_model();
        model.bg_radius = Some(vec![1.0, 1.0]);
        // Frame 2 is 5 away from both centers: background.
        let seq = FeatureSequence::new("v", array![[0.1], [5.0], [9.9], [10.1]]).unwrap();
        let seg = decode_video(&seq, &model).unwrap();
        assert_eq!(seg.labels, vec![Some(0), None, Some(1), Some(1)]);

        // Everything background except one frame: fewer kept frames than
        // clusters.
        let seq = FeatureSequence::new("w", array![[5.0], [5.0], [0.0]]).unwrap();
        assert!(matches!(
            decode_video(&seq, &model),
            Err(Error::TooFewFrames { frames: 1, k: 2, .. })
        ));
    }

    #[test]
    fn reversed_order_reverses_the_path() {
        let seq = FeatureSequence::new("v", array![[9.9], [10.1], [0.1], [0.2]]).unwrap();
        // The model says cluster 0 comes first; this video runs 10 -> 0, so
        // decoding with the reversed order fits better.
        let forward = decode_video(&seq, &toy_model()).unwrap();
        let reversed = decode_video_with_order(&seq, &toy_model(), &[1, 0]).unwrap();
        assert!(reversed.score > forward.score);
        assert_eq!(
            reversed.labels,
            vec![Some(0), Some(0), Some(1), Some(1)],
            "positions are positions in the supplied order"
        );
    }

    #[test]
    fn segmentation_file_round_trip() {
        let labels = vec![Some(0), None, Some(1), Some(2), None];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.seg");
        write_segmentation(&labels, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "1\nbackground\n2\n3\nbackground\n");
        assert_eq!(read_segmentation(&path).unwrap(), labels);

        std::fs::write(&path, "0\n").unwrap();
        assert!(read_segmentation(&path).is_err());
        std::fs::write(&path, "frog\n").unwrap();
        assert!(read_segmentation(&path).is_err());
    }
}
