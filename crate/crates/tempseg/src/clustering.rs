//! Ordered clustering of embedded frames.
//!
//! Frames from all videos are pooled and clustered with k-means, a diagonal
//! Gaussian is fitted per cluster, frames are then reassigned to the
//! most-likely Gaussian, and finally clusters are ordered by the mean
//! relative timestamp of their frames. That order is what the decoder
//! enforces within each video. An optional background step marks the
//! fraction `tau` of each cluster's frames farthest from its center and
//! remembers the radius of what is kept.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::Dataset;
use crate::error::{Error, Result};

const CLUSTER_MAGIC: &[u8; 5] = b"TCLM1";
const VAR_FLOOR: f64 = 1e-6;
const KMEANS_MAX_ITERS: usize = 300;
const KMEANS_REL_TOL: f64 = 1e-6;

fn dist_sq(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum()
}

/// Index of the nearest center, lowest index on ties.
fn nearest(point: ArrayView1<f64>, centers: &Array2<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centers.rows().into_iter().enumerate() {
        let d = dist_sq(point, center);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

#[derive(Debug, Clone)]
pub struct KmeansFit {
    /// `K x D` cluster centers.
    pub centers: Array2<f64>,
    /// Nearest-center assignment per point, lowest index on ties.
    pub assignments: Vec<usize>,
    /// Within-cluster sum of squared distances after seeding and after each
    /// Lloyd iteration; non-increasing by construction.
    pub objective_trace: Vec<f64>,
}

/// Lloyd's algorithm with k-means++ seeding. Runs until assignments stop
/// changing, the objective improves by a relative factor below `1e-6`, or
/// 300 iterations. A cluster that loses all members is reseeded to the point
/// farthest from its current center.
pub fn kmeans(points: ArrayView2<f64>, k: usize, seed: u64) -> Result<KmeansFit> {
    let n = points.nrows();
    if k == 0 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    if n < k {
        return Err(Error::InvalidParameter(format!(
            "{n} points cannot form {k} clusters"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = seed_plus_plus(points, k, &mut rng);

    let mut assignments: Vec<usize> = (0..n).map(|i| nearest(points.row(i), &centers).0).collect();
    let mut trace = vec![objective(points, &centers, &assignments)];

    // Each round: assign to the nearest center, repair empty clusters, then
    // move centers to the member means. Repairing before the mean update
    // keeps the objective non-increasing (a stolen point becomes its new
    // cluster's mean, so its cost drops to zero) and guarantees the final
    // assignment has no empty cluster.
    for _ in 0..KMEANS_MAX_ITERS {
        let mut new_assignments: Vec<usize> =
            (0..n).map(|i| nearest(points.row(i), &centers).0).collect();
        reseed_empty_clusters(points, &centers, &mut new_assignments, k);

        let mut sums = Array2::<f64>::zeros(centers.raw_dim());
        let mut counts = vec![0usize; k];
        for (i, &c) in new_assignments.iter().enumerate() {
            sums.row_mut(c).scaled_add(1.0, &points.row(i));
            counts[c] += 1;
        }
        for c in 0..k {
            debug_assert!(counts[c] > 0, "repair left cluster {c} empty");
            let inv = 1.0 / counts[c] as f64;
            centers.row_mut(c).assign(&(&sums.row(c) * inv));
        }

        let obj = objective(points, &centers, &new_assignments);
        let prev = *trace.last().expect("seeded");
        trace.push(obj);
        let stable = new_assignments == assignments;
        assignments = new_assignments;
        if stable || prev - obj <= KMEANS_REL_TOL * prev {
            break;
        }
    }

    Ok(KmeansFit {
        centers,
        assignments,
        objective_trace: trace,
    })
}

fn objective(points: ArrayView2<f64>, centers: &Array2<f64>, assignments: &[usize]) -> f64 {
    assignments
        .iter()
        .enumerate()
        .map(|(i, &c)| dist_sq(points.row(i), centers.row(c)))
        .sum()
}

/// k-means++: each next center is drawn with probability proportional to the
/// squared distance to the nearest already-chosen center. The cumulative-sum
/// walk keeps the draw's rng consumption fixed. When every point coincides
/// with a chosen center the draw falls back to uniform.
fn seed_plus_plus(points: ArrayView2<f64>, k: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let n = points.nrows();
    let mut centers = Array2::zeros((k, points.ncols()));
    let first = rng.random_range(0..n);
    centers.row_mut(0).assign(&points.row(first));
    let mut best_d: Vec<f64> = (0..n)
        .map(|i| dist_sq(points.row(i), centers.row(0)))
        .collect();
    for c in 1..k {
        let total: f64 = best_d.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, &d) in best_d.iter().enumerate() {
                acc += d;
                if acc > target {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centers.row_mut(c).assign(&points.row(pick));
        for i in 0..n {
            let d = dist_sq(points.row(i), centers.row(c));
            if d < best_d[i] {
                best_d[i] = d;
            }
        }
    }
    centers
}

/// Gives every empty cluster the point currently farthest from its own
/// center (clusters are processed in ascending index order; a donor cluster
/// must keep at least one member).
fn reseed_empty_clusters(
    points: ArrayView2<f64>,
    centers: &Array2<f64>,
    assignments: &mut [usize],
    k: usize,
) {
    let mut counts = vec![0usize; k];
    for &c in assignments.iter() {
        counts[c] += 1;
    }
    for empty in 0..k {
        if counts[empty] > 0 {
            continue;
        }
        let mut best: Option<(usize, f64)> = None;
        for (i, &c) in assignments.iter().enumerate() {
            if counts[c] < 2 {
                continue;
            }
            let d = dist_sq(points.row(i), centers.row(c));
            if best.map_or(true, |(_, bd)| d > bd) {
                best = Some((i, d));
            }
        }
        if let Some((i, _)) = best {
            counts[assignments[i]] -= 1;
            assignments[i] = empty;
            counts[empty] = 1;
        }
    }
}

/// Diagonal Gaussian in the embedding space.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagGaussian {
    pub mean: Array1<f64>,
    /// Per-dimension variance, floored at `1e-6`.
    pub var: Array1<f64>,
}

impl DiagGaussian {
    pub fn log_likelihood(&self, x: ArrayView1<f64>) -> f64 {
        let mut ll = 0.0;
        for ((&v, &m), &s2) in x.iter().zip(self.mean.iter()).zip(self.var.iter()) {
            let d = v - m;
            ll += (2.0 * std::f64::consts::PI * s2).ln() + d * d / s2;
        }
        -0.5 * ll
    }
}

/// Mean and population variance per cluster; every cluster must have at
/// least one member.
pub fn fit_gaussians(
    points: ArrayView2<f64>,
    assignments: &[usize],
    k: usize,
) -> Result<Vec<DiagGaussian>> {
    let dim = points.ncols();
    let mut sums = Array2::<f64>::zeros((k, dim));
    let mut counts = vec![0usize; k];
    for (i, &c) in assignments.iter().enumerate() {
        sums.row_mut(c).scaled_add(1.0, &points.row(i));
        counts[c] += 1;
    }
    for (c, &count) in counts.iter().enumerate() {
        if count == 0 {
            return Err(Error::EmptyCluster {
                cluster: c,
                hint: String::new(),
            });
        }
    }
    let mut means = sums;
    for c in 0..k {
        let inv = 1.0 / counts[c] as f64;
        means.row_mut(c).mapv_inplace(|v| v * inv);
    }
    let mut vars = Array2::<f64>::zeros((k, dim));
    for (i, &c) in assignments.iter().enumerate() {
        let diff = &points.row(i) - &means.row(c);
        vars.row_mut(c).scaled_add(1.0, &diff.mapv(|d| d * d));
    }
    Ok((0..k)
        .map(|c| {
            let inv = 1.0 / counts[c] as f64;
            DiagGaussian {
                mean: means.row(c).to_owned(),
                var: vars.row(c).mapv(|v| (v * inv).max(VAR_FLOOR)),
            }
        })
        .collect())
}

/// Most-likely Gaussian per point, lowest index on ties.
pub fn likelihood_assignments(points: ArrayView2<f64>, gaussians: &[DiagGaussian]) -> Vec<usize> {
    (0..points.nrows())
        .map(|i| {
            let x = points.row(i);
            let mut best = (0usize, f64::NEG_INFINITY);
            for (c, g) in gaussians.iter().enumerate() {
                let ll = g.log_likelihood(x);
                if ll > best.1 {
                    best = (c, ll);
                }
            }
            best.0
        })
        .collect()
}

/// Mean timestamp per cluster and the cluster indices sorted by it
/// (ascending, ties by cluster index). Every cluster needs at least one
/// assigned frame.
pub fn order_clusters(
    assignments: &[usize],
    timestamps: ArrayView1<f64>,
    k: usize,
) -> Result<(Vec<f64>, Vec<usize>)> {
    let mut sums = vec![0.0; k];
    let mut counts = vec![0usize; k];
    for (&c, &t) in assignments.iter().zip(timestamps.iter()) {
        sums[c] += t;
        counts[c] += 1;
    }
    let mut time_means = vec![0.0; k];
    for c in 0..k {
        if counts[c] == 0 {
            return Err(Error::EmptyCluster {
                cluster: c,
                hint: "; try a smaller cluster count".into(),
            });
        }
        time_means[c] = sums[c] / counts[c] as f64;
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        time_means[a]
            .partial_cmp(&time_means[b])
            .expect("timestamps are finite")
            .then(a.cmp(&b))
    });
    Ok((time_means, order))
}

/// Marks, per cluster, the `ceil(tau * cluster size)` members farthest from
/// the cluster center as background. Distance ties are broken toward the
/// lower point index. `tau` must lie in `[0, 1)`; `tau = 0` marks nothing.
pub fn mark_background(
    points: ArrayView2<f64>,
    centers: &Array2<f64>,
    assignments: &[usize],
    tau: f64,
) -> Result<Vec<bool>> {
    if !(0.0..1.0).contains(&tau) {
        return Err(Error::InvalidParameter(format!(
            "tau {tau} must be in [0, 1)"
        )));
    }
    let k = centers.nrows();
    let mut members: Vec<Vec<(usize, f64)>> = vec![Vec::new(); k];
    for (i, &c) in assignments.iter().enumerate() {
        members[c].push((i, dist_sq(points.row(i), centers.row(c))));
    }
    let mut marked = vec![false; assignments.len()];
    for list in &mut members {
        let cut = (tau * list.len() as f64).ceil() as usize;
        let cut = cut.min(list.len());
        if cut == 0 {
            continue;
        }
        list.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .expect("distances are finite")
                .then(a.0.cmp(&b.0))
        });
        for &(i, _) in list.iter().take(cut) {
            marked[i] = true;
        }
    }
    Ok(marked)
}

/// Everything decoding needs: k-means centers, per-cluster Gaussians, the
/// temporal order, and (when a background fraction was used) the per-cluster
/// keep radius.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    pub centers: Array2<f64>,
    pub gaussians: Vec<DiagGaussian>,
    /// Mean relative timestamp per cluster, after likelihood reassignment.
    pub time_means: Vec<f64>,
    /// Cluster ids in temporal order; `order[0]` comes first in every video.
    pub order: Vec<usize>,
    /// Per-cluster distance of the farthest kept member, present iff the
    /// model was built with `tau > 0`. Frames beyond this are background.
    pub bg_radius: Option<Vec<f64>>,
}

impl ClusterModel {
    pub fn k(&self) -> usize {
        self.centers.nrows()
    }

    pub fn dim(&self) -> usize {
        self.centers.ncols()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let err = |e| Error::io(path, e);
        w.write_all(CLUSTER_MAGIC).map_err(err)?;
        w.write_u32::<LittleEndian>(self.k() as u32).map_err(err)?;
        w.write_u32::<LittleEndian>(self.dim() as u32).map_err(err)?;
        for v in self.centers.iter() {
            w.write_f64::<LittleEndian>(*v).map_err(err)?;
        }
        for g in &self.gaussians {
            for v in g.mean.iter().chain(g.var.iter()) {
                w.write_f64::<LittleEndian>(*v).map_err(err)?;
            }
        }
        for v in &self.time_means {
            w.write_f64::<LittleEndian>(*v).map_err(err)?;
        }
        for &c in &self.order {
            w.write_u32::<LittleEndian>(c as u32).map_err(err)?;
        }
        match &self.bg_radius {
            None => w.write_u32::<LittleEndian>(0).map_err(err)?,
            Some(radii) => {
                w.write_u32::<LittleEndian>(1).map_err(err)?;
                for v in radii {
                    w.write_f64::<LittleEndian>(*v).map_err(err)?;
                }
            }
        }
        w.flush().map_err(err)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let err = |e| Error::io(path, e);
        let mut magic = [0u8; 5];
        r.read_exact(&mut magic).map_err(err)?;
        if &magic != CLUSTER_MAGIC {
            return Err(Error::BadMagic {
                path: path.to_owned(),
                expected: "TCLM1",
            });
        }
        let k = r.read_u32::<LittleEndian>().map_err(err)? as usize;
        let d = r.read_u32::<LittleEndian>().map_err(err)? as usize;
        if k == 0 || d == 0 {
            return Err(Error::Parse {
                path: path.to_owned(),
                line: 0,
                what: "cluster model",
                detail: format!("invalid dimensions {k}x{d}"),
            });
        }
        let block = |r: &mut BufReader<File>, n: usize| -> Result<Vec<f64>> {
            let mut v = vec![0.0; n];
            r.read_f64_into::<LittleEndian>(&mut v).map_err(err)?;
            Ok(v)
        };
        let centers =
            Array2::from_shape_vec((k, d), block(&mut r, k * d)?).expect("shape matches length");
        let mut gaussians = Vec::with_capacity(k);
        for _ in 0..k {
            let mean = Array1::from_vec(block(&mut r, d)?);
            let var = Array1::from_vec(block(&mut r, d)?);
            gaussians.push(DiagGaussian { mean, var });
        }
        let time_means = block(&mut r, k)?;
        let mut order = Vec::with_capacity(k);
        for _ in 0..k {
            order.push(r.read_u32::<LittleEndian>().map_err(err)? as usize);
        }
        {
            let mut seen = vec![false; k];
            for &c in &order {
                if c >= k || seen[c] {
                    return Err(Error::Parse {
                        path: path.to_owned(),
                        line: 0,
                        what: "cluster model",
                        detail: "order is not a permutation".into(),
                    });
                }
                seen[c] = true;
            }
        }
        let has_bg = r.read_u32::<LittleEndian>().map_err(err)?;
        let bg_radius = match has_bg {
            0 => None,
            1 => Some(block(&mut r, k)?),
            other => {
                return Err(Error::Parse {
                    path: path.to_owned(),
                    line: 0,
                    what: "cluster model",
                    detail: format!("invalid background flag {other}"),
                })
            }
        };
        Ok(ClusterModel {
            centers,
            gaussians,
            time_means,
            order,
            bg_radius,
        })
    }
}

/// Full clustering stage over an embedded dataset: k-means, Gaussian fits,
/// likelihood reassignment, temporal ordering, and (for `tau > 0`)
/// background radii. The Gaussians and the ordering are computed from the
/// likelihood reassignment; background marking uses the k-means geometry.
pub fn build_cluster_model(dataset: &Dataset, k: usize, tau: f64, seed: u64) -> Result<ClusterModel> {
    if !(0.0..1.0).contains(&tau) {
        return Err(Error::InvalidParameter(format!(
            "tau {tau} must be in [0, 1)"
        )));
    }
    let (points, timestamps) = dataset.stacked_frames();
    let fit = kmeans(points.view(), k, seed)?;
    let gaussians = fit_gaussians(points.view(), &fit.assignments, k)?;
    let lik = likelihood_assignments(points.view(), &gaussians);
    let (time_means, order) = order_clusters(&lik, timestamps.view(), k)?;
    let bg_radius = if tau > 0.0 {
        let marked = mark_background(points.view(), &fit.centers, &fit.assignments, tau)?;
        let mut radii = vec![0.0f64; k];
        for (i, &c) in fit.assignments.iter().enumerate() {
            if !marked[i] {
                let d = dist_sq(points.row(i), fit.centers.row(c)).sqrt();
                radii[c] = radii[c].max(d);
            }
        }
        Some(radii)
    } else {
        None
    };
    Ok(ClusterModel {
        centers: fit.centers,
        gaussians,
        time_means,
        order,
        bg_radius,
    })
}
