//! Evaluation against ground truth.
//!
//! Predicted cluster labels carry no names, so they are first matched
//! one-to-one to ground-truth classes by maximizing frame overlap (Hungarian
//! assignment on the confusion counts). Unmatched predicted labels map to
//! background. On top of that mapping: mean-over-frames accuracy, mean IoU
//! over classes, and segment-level precision/recall/F1, each in a variant
//! that includes background and one that excludes it.

pub mod hungarian;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::activity::ActivityPartition;
use crate::dataset::{GroundTruth, BACKGROUND_LABEL};
use crate::error::{Error, Result};
use hungarian::min_cost_assignment;

/// One video's prediction aligned with its ground truth.
#[derive(Debug, Clone, Copy)]
pub struct VideoPair<'a> {
    pub video_id: &'a str,
    pub pred: &'a [Option<usize>],
    pub gt: &'a [String],
}

/// Pairs predictions with ground truth by video id, in ground-truth order.
/// The two sides must cover the same videos with the same frame counts.
pub fn pair_videos<'a>(
    preds: &'a [(String, Vec<Option<usize>>)],
    gts: &'a [GroundTruth],
) -> Result<Vec<VideoPair<'a>>> {
    if preds.len() != gts.len() {
        return Err(Error::VideoMismatch(format!(
            "{} predictions for {} ground-truth videos",
            preds.len(),
            gts.len()
        )));
    }
    let mut pairs = Vec::with_capacity(gts.len());
    for gt in gts {
        let (_, pred) = preds
            .iter()
            .find(|(id, _)| *id == gt.video_id)
            .ok_or_else(|| {
                Error::VideoMismatch(format!("no prediction for video {}", gt.video_id))
            })?;
        if pred.len() != gt.labels.len() {
            return Err(Error::DimensionMismatch {
                context: format!("prediction for video {}", gt.video_id),
                expected: gt.labels.len(),
                got: pred.len(),
            });
        }
        pairs.push(VideoPair {
            video_id: &gt.video_id,
            pred,
            gt: &gt.labels,
        });
    }
    Ok(pairs)
}

/// Frame counts of predicted label x ground-truth class, restricted to
/// frames where both sides are non-background. Row and column orders are
/// sorted, so the matrix is reproducible.
#[derive(Debug, Clone)]
pub struct ConfusionCounts {
    /// `P x G` counts.
    pub counts: Array2<u64>,
    /// Row identities: every distinct predicted label, sorted.
    pub predicted_labels: Vec<usize>,
    /// Column identities: every distinct non-background class, sorted.
    pub gt_classes: Vec<String>,
}

impl ConfusionCounts {
    /// Total count, which equals the number of frames where prediction and
    /// ground truth are both non-background.
    pub fn evaluated_frames(&self) -> u64 {
        self.counts.iter().sum()
    }
}

pub fn build_confusion(pairs: &[VideoPair<'_>]) -> ConfusionCounts {
    let mut labels = BTreeSet::new();
    let mut classes = BTreeSet::new();
    for pair in pairs {
        for l in pair.pred.iter().flatten() {
            labels.insert(*l);
        }
        for g in pair.gt {
            if g != BACKGROUND_LABEL {
                classes.insert(g.clone());
            }
        }
    }
    let predicted_labels: Vec<usize> = labels.into_iter().collect();
    let gt_classes: Vec<String> = classes.into_iter().collect();
    let row: BTreeMap<usize, usize> = predicted_labels
        .iter()
        .enumerate()
        .map(|(i, &l)| (l, i))
        .collect();
    let col: BTreeMap<&str, usize> = gt_classes
        .iter()
        .enumerate()
        .map(|(j, c)| (c.as_str(), j))
        .collect();
    let mut counts = Array2::zeros((predicted_labels.len(), gt_classes.len()));
    for pair in pairs {
        for (p, g) in pair.pred.iter().zip(pair.gt) {
            if let Some(l) = p {
                if g != BACKGROUND_LABEL {
                    counts[[row[l], col[g.as_str()]]] += 1;
                }
            }
        }
    }
    ConfusionCounts {
        counts,
        predicted_labels,
        gt_classes,
    }
}

/// Predicted label to ground-truth class. Labels absent from the map are
/// treated as background.
pub type Mapping = BTreeMap<usize, String>;

/// One-to-one matching that maximizes total overlap. With more predicted
/// labels than classes, the surplus labels stay unmapped (background); with
/// fewer, some classes go unused.
pub fn hungarian_match(confusion: &ConfusionCounts) -> Mapping {
    let p = confusion.predicted_labels.len();
    let g = confusion.gt_classes.len();
    if p == 0 || g == 0 {
        return Mapping::new();
    }
    let n = p.max(g);
    let cost = Array2::from_shape_fn((n, n), |(i, j)| {
        if i < p && j < g {
            -(confusion.counts[[i, j]] as i64)
        } else {
            0
        }
    });
    let assignment = min_cost_assignment(&cost);
    let mut mapping = Mapping::new();
    for i in 0..p {
        let j = assignment[i];
        if j < g {
            mapping.insert(
                confusion.predicted_labels[i],
                confusion.gt_classes[j].clone(),
            );
        }
    }
    mapping
}

/// The class a predicted label stands for, `None` meaning background.
fn mapped<'a>(label: &Option<usize>, mapping: &'a Mapping) -> Option<&'a str> {
    label
        .as_ref()
        .and_then(|l| mapping.get(l))
        .map(String::as_str)
}

/// Mean over frames: fraction of frames whose mapped prediction equals the
/// ground truth. `include_background = false` drops frames whose ground
/// truth is background; `true` counts background-on-background as correct.
pub fn mof(pairs: &[VideoPair<'_>], mapping: &Mapping, include_background: bool) -> f64 {
    let mut correct = 0u64;
    let mut total = 0u64;
    for pair in pairs {
        for (p, g) in pair.pred.iter().zip(pair.gt) {
            let gt_bg = g == BACKGROUND_LABEL;
            if !include_background && gt_bg {
                continue;
            }
            total += 1;
            let ok = match mapped(p, mapping) {
                Some(class) => class == g,
                None => gt_bg,
            };
            if ok {
                correct += 1;
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        correct as f64 / total as f64
    }
}

/// Mean over classes of |intersection| / |union| between predicted and
/// ground-truth frame sets. The class list is the ground-truth classes, plus
/// background when included; classes with an empty union are skipped.
pub fn iou(pairs: &[VideoPair<'_>], mapping: &Mapping, include_background: bool) -> f64 {
    let mut stats: BTreeMap<&str, (u64, u64)> = BTreeMap::new(); // class -> (inter, union)
    let mut classes: BTreeSet<&str> = BTreeSet::new();
    for pair in pairs {
        for g in pair.gt {
            if g != BACKGROUND_LABEL {
                classes.insert(g);
            }
        }
    }
    if include_background {
        classes.insert(BACKGROUND_LABEL);
    }
    for pair in pairs {
        for (p, g) in pair.pred.iter().zip(pair.gt) {
            let pc = mapped(p, mapping).unwrap_or(BACKGROUND_LABEL);
            let g = g.as_str();
            if pc == g {
                let e = stats.entry(pc).or_default();
                e.0 += 1;
                e.1 += 1;
            } else {
                stats.entry(pc).or_default().1 += 1;
                stats.entry(g).or_default().1 += 1;
            }
        }
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for class in classes {
        if let Some(&(inter, union)) = stats.get(class) {
            if union > 0 {
                sum += inter as f64 / union as f64;
                n += 1;
            }
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// How segment correctness samples frames.
#[derive(Debug, Clone, Copy)]
pub enum SegmentSampling {
    /// Judge every frame of every segment.
    Exhaustive,
    /// Judge at most `frames_per_segment` distinct frames per segment, drawn
    /// without replacement. The rng is seeded once and consumed only by
    /// segments longer than the sample size, walking videos in pair order
    /// and segments in temporal order.
    Sampled { frames_per_segment: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct F1Score {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Maximal constant runs of `items` as `(value, start, end)` with `end`
/// exclusive.
fn runs<T: PartialEq + Clone>(items: &[T]) -> Vec<(T, usize, usize)> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=items.len() {
        if i == items.len() || items[i] != items[start] {
            out.push((items[start].clone(), start, i));
            start = i;
        }
    }
    out
}

/// Segment-level scores. A predicted segment is correct when at least half
/// of its judged frames carry its mapped class in the ground truth; a
/// ground-truth segment is recalled when a correct predicted segment of its
/// class overlaps it. With `include_background = false`, ground-truth
/// background runs and predicted segments that map to background are
/// excluded; with `true` they participate as a regular class.
pub fn f1_segments(
    pairs: &[VideoPair<'_>],
    mapping: &Mapping,
    include_background: bool,
    sampling: SegmentSampling,
) -> F1Score {
    let mut rng = match sampling {
        SegmentSampling::Exhaustive => None,
        SegmentSampling::Sampled { seed, .. } => Some(ChaCha8Rng::seed_from_u64(seed)),
    };
    let mut pred_total = 0u64;
    let mut pred_correct = 0u64;
    let mut gt_total = 0u64;
    let mut gt_hit = 0u64;

    for pair in pairs {
        // (class, start, end, correct) of surviving predicted segments.
        let mut judged: Vec<(&str, usize, usize, bool)> = Vec::new();
        for (label, start, end) in runs(pair.pred) {
            let class = match (mapped(&label, mapping), include_background) {
                (Some(c), _) => c,
                (None, true) => BACKGROUND_LABEL,
                (None, false) => continue,
            };
            let len = end - start;
            let judged_frames: Vec<usize> = match (&mut rng, sampling) {
                (Some(rng), SegmentSampling::Sampled { frames_per_segment, .. })
                    if len > frames_per_segment =>
                {
                    rand::seq::index::sample(rng, len, frames_per_segment)
                        .into_iter()
                        .map(|off| start + off)
                        .collect()
                }
                _ => (start..end).collect(),
            };
            let matches = judged_frames
                .iter()
                .filter(|&&f| pair.gt[f] == class)
                .count();
            let correct = 2 * matches >= judged_frames.len();
            judged.push((class, start, end, correct));
            pred_total += 1;
            if correct {
                pred_correct += 1;
            }
        }
        for (class, start, end) in runs(pair.gt) {
            if !include_background && class == BACKGROUND_LABEL {
                continue;
            }
            gt_total += 1;
            let hit = judged.iter().any(|&(c, s, e, correct)| {
                correct && c == class && s < end && start < e
            });
            if hit {
                gt_hit += 1;
            }
        }
    }

    let precision = if pred_total == 0 {
        0.0
    } else {
        pred_correct as f64 / pred_total as f64
    };
    let recall = if gt_total == 0 {
        0.0
    } else {
        gt_hit as f64 / gt_total as f64
    };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    F1Score {
        precision,
        recall,
        f1,
    }
}

/// Which benchmark protocol a run follows. The protocols differ in which
/// metric variant is the headline number: youtube-instructions reports
/// metrics without background, the others with it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protocol {
    Breakfast,
    Yti,
    Salads,
}

impl Protocol {
    pub fn headline_without_background(self) -> bool {
        matches!(self, Protocol::Yti)
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::Breakfast => "breakfast",
            Protocol::Yti => "yti",
            Protocol::Salads => "salads",
        })
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "breakfast" => Ok(Protocol::Breakfast),
            "yti" => Ok(Protocol::Yti),
            "salads" => Ok(Protocol::Salads),
            other => Err(Error::InvalidParameter(format!(
                "unknown protocol {other:?}; expected breakfast, yti, or salads"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricSet {
    pub mof: f64,
    pub iou: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub protocol: Protocol,
    pub mapping: Mapping,
    /// Every predicted label that occurred, mapped or not.
    pub predicted_labels: Vec<usize>,
    pub with_background: MetricSet,
    pub without_background: MetricSet,
}

impl Evaluation {
    pub fn headline(&self) -> &MetricSet {
        if self.protocol.headline_without_background() {
            &self.without_background
        } else {
            &self.with_background
        }
    }

    /// Line-oriented `key=value` report. Mapping keys use the same 1-based
    /// labels as segmentation files.
    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("protocol={}\n", self.protocol));
        for (name, m) in [
            ("with_bg", &self.with_background),
            ("without_bg", &self.without_background),
        ] {
            out.push_str(&format!("mof_{name}={:.6}\n", m.mof));
            out.push_str(&format!("iou_{name}={:.6}\n", m.iou));
            out.push_str(&format!("f1_{name}={:.6}\n", m.f1));
            out.push_str(&format!("precision_{name}={:.6}\n", m.precision));
            out.push_str(&format!("recall_{name}={:.6}\n", m.recall));
        }
        for label in &self.predicted_labels {
            let class = self
                .mapping
                .get(label)
                .map(String::as_str)
                .unwrap_or(BACKGROUND_LABEL);
            out.push_str(&format!("map.{}={}\n", label + 1, class));
        }
        out
    }

    pub fn csv_header() -> &'static str {
        "dataset,k_prime,k,tau,seed,protocol,\
         mof_with_bg,iou_with_bg,f1_with_bg,precision_with_bg,recall_with_bg,\
         mof_without_bg,iou_without_bg,f1_without_bg,precision_without_bg,recall_without_bg"
    }

    pub fn csv_row(&self, dataset: &str, k_prime: usize, k: usize, tau: f64, seed: u64) -> String {
        let w = &self.with_background;
        let o = &self.without_background;
        format!(
            "{dataset},{k_prime},{k},{tau},{seed},{},\
             {:.6},{:.6},{:.6},{:.6},{:.6},\
             {:.6},{:.6},{:.6},{:.6},{:.6}",
            self.protocol,
            w.mof, w.iou, w.f1, w.precision, w.recall,
            o.mof, o.iou, o.f1, o.precision, o.recall,
        )
    }
}

/// Full evaluation: confusion, Hungarian mapping, and both metric variants.
pub fn evaluate(
    preds: &[(String, Vec<Option<usize>>)],
    gts: &[GroundTruth],
    protocol: Protocol,
    sampling: SegmentSampling,
) -> Result<Evaluation> {
    let pairs = pair_videos(preds, gts)?;
    let confusion = build_confusion(&pairs);
    let mapping = hungarian_match(&confusion);
    let metric_set = |bg: bool| {
        let f = f1_segments(&pairs, &mapping, bg, sampling);
        MetricSet {
            mof: mof(&pairs, &mapping, bg),
            iou: iou(&pairs, &mapping, bg),
            precision: f.precision,
            recall: f.recall,
            f1: f.f1,
        }
    };
    let with_background = metric_set(true);
    let without_background = metric_set(false);
    Ok(Evaluation {
        protocol,
        predicted_labels: confusion.predicted_labels.clone(),
        mapping,
        with_background,
        without_background,
    })
}

/// Activity-level accuracy of a video partition: sets are matched one-to-one
/// to true activities by video overlap, and the score is the fraction of
/// videos landing in the set matched to their activity.
pub fn mean_over_videos(
    partition: &ActivityPartition,
    truth: &BTreeMap<String, usize>,
) -> Result<f64> {
    let acts: BTreeSet<usize> = truth.values().copied().collect();
    let act_col: BTreeMap<usize, usize> = acts.iter().enumerate().map(|(j, &a)| (a, j)).collect();
    let s = partition.sets.len();
    let g = acts.len();
    if s == 0 || g == 0 {
        return Err(Error::EmptyInput("empty partition or activity map".into()));
    }
    let mut counts = Array2::<u64>::zeros((s, g));
    let mut total = 0u64;
    for (set_idx, set) in partition.sets.iter().enumerate() {
        for id in set {
            let act = truth.get(id).ok_or_else(|| {
                Error::VideoMismatch(format!("video {id} has no activity label"))
            })?;
            counts[[set_idx, act_col[act]]] += 1;
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::EmptyInput("partition contains no videos".into()));
    }
    let n = s.max(g);
    let cost = Array2::from_shape_fn((n, n), |(i, j)| {
        if i < s && j < g {
            -(counts[[i, j]] as i64)
        } else {
            0
        }
    });
    let assignment = min_cost_assignment(&cost);
    let mut matched = 0u64;
    for i in 0..s {
        let j = assignment[i];
        if j < g {
            matched += counts[[i, j]];
        }
    }
    Ok(matched as f64 / total as f64)
}
