//! Continuous temporal embedding.
//!
//! A small network is trained to predict each frame's relative timestamp
//! from its features; the second hidden layer then serves as the frame
//! embedding. Frames that look alike and occur at similar relative times end
//! up close together, which is what the downstream clustering needs.
//!
//! Architecture: input `D_in`, hidden `2D` and `D` with logistic activations,
//! scalar logistic output trained with mean squared error against timestamps
//! in `(0, 1]`. Inputs are standardized per dimension; the standardization is
//! part of the model and is applied by every forward pass.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{Dataset, FeatureSequence};
use crate::error::{Error, Result};

const MODEL_MAGIC: &[u8; 5] = b"TEMB1";
const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingConfig {
    /// Embedding width `D`; the first hidden layer has width `2D`.
    pub embed_dim: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Weights init uniform in `[-s, s]` with `s = scale / sqrt(fan_in)`.
    pub weight_init_scale: f64,
    pub rng_seed: u64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            embed_dim: 32,
            learning_rate: 0.01,
            epochs: 30,
            batch_size: 256,
            weight_init_scale: 1.0,
            rng_seed: 0,
        }
    }
}

impl EmbeddingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.embed_dim == 0 {
            return bad("embed_dim must be at least 1".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if !(self.weight_init_scale > 0.0 && self.weight_init_scale.is_finite()) {
            return bad(format!(
                "weight_init_scale {} must be positive",
                self.weight_init_scale
            ));
        }
        Ok(())
    }
}

/// Weight layout: `w1` is `2D x D_in`, `w2` is `D x 2D`, `w3` is `D`
/// (rows index output units). Standardization statistics are stored with the
/// weights so a saved model embeds new data identically.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub w3: Array1<f64>,
    pub b3: f64,
    pub norm_mean: Array1<f64>,
    pub norm_std: Array1<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn sigmoid_inplace(a: &mut Array2<f64>) {
    a.mapv_inplace(sigmoid);
}

impl EmbeddingModel {
    /// Fresh model with identity standardization. Weights are uniform in
    /// `[-s, s]` with `s = scale / sqrt(fan_in)` per layer; biases start at
    /// zero.
    pub fn init(input_dim: usize, embed_dim: usize, scale: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::sample(input_dim, embed_dim, scale, &mut rng)
    }

    fn sample(input_dim: usize, embed_dim: usize, scale: f64, rng: &mut ChaCha8Rng) -> Self {
        let mut uniform = |n: usize, fan_in: usize| -> Vec<f64> {
            let s = scale / (fan_in as f64).sqrt();
            (0..n).map(|_| rng.random_range(-s..s)).collect()
        };
        let h = 2 * embed_dim;
        let w1 = Array2::from_shape_vec((h, input_dim), uniform(h * input_dim, input_dim))
            .expect("shape matches length");
        let w2 = Array2::from_shape_vec((embed_dim, h), uniform(embed_dim * h, h))
            .expect("shape matches length");
        let w3 = Array1::from_vec(uniform(embed_dim, embed_dim));
        EmbeddingModel {
            w1,
            b1: Array1::zeros(h),
            w2,
            b2: Array1::zeros(embed_dim),
            w3,
            b3: 0.0,
            norm_mean: Array1::zeros(input_dim),
            norm_std: Array1::ones(input_dim),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn embed_dim(&self) -> usize {
        self.w2.nrows()
    }

    fn check_input(&self, dim: usize) -> Result<()> {
        if dim != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "embedding input".into(),
                expected: self.input_dim(),
                got: dim,
            });
        }
        Ok(())
    }

    fn normalize(&self, xs: ArrayView2<f64>) -> Array2<f64> {
        (&xs - &self.norm_mean) / &self.norm_std
    }

    /// Both hidden activations and the output, on standardized input.
    /// `a1` is `N x 2D`, `a2` (the embedding) `N x D`, `y` length `N`.
    fn activations(&self, xn: &Array2<f64>) -> (Array2<f64>, Array2<f64>, Array1<f64>) {
        let mut a1 = xn.dot(&self.w1.t()) + &self.b1;
        sigmoid_inplace(&mut a1);
        let mut a2 = a1.dot(&self.w2.t()) + &self.b2;
        sigmoid_inplace(&mut a2);
        let y = (a2.dot(&self.w3) + self.b3).mapv(sigmoid);
        (a1, a2, y)
    }

    /// Embeddings and timestamp predictions for a batch of raw frames.
    pub fn forward(&self, xs: ArrayView2<f64>) -> Result<(Array2<f64>, Array1<f64>)> {
        self.check_input(xs.ncols())?;
        let xn = self.normalize(xs);
        let (_, a2, y) = self.activations(&xn);
        Ok((a2, y))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let err = |e| Error::io(path, e);
        w.write_all(MODEL_MAGIC).map_err(err)?;
        w.write_u32::<LittleEndian>(self.input_dim() as u32).map_err(err)?;
        w.write_u32::<LittleEndian>(self.embed_dim() as u32).map_err(err)?;
        for v in self
            .norm_mean
            .iter()
            .chain(self.norm_std.iter())
            .chain(self.w1.iter())
            .chain(self.b1.iter())
            .chain(self.w2.iter())
            .chain(self.b2.iter())
            .chain(self.w3.iter())
            .chain(std::iter::once(&self.b3))
        {
            w.write_f64::<LittleEndian>(*v).map_err(err)?;
        }
        w.flush().map_err(err)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let err = |e| Error::io(path, e);
        let mut magic = [0u8; 5];
        r.read_exact(&mut magic).map_err(err)?;
        if &magic != MODEL_MAGIC {
            return Err(Error::BadMagic {
                path: path.to_owned(),
                expected: "TEMB1",
            });
        }
        let d_in = r.read_u32::<LittleEndian>().map_err(err)? as usize;
        let d = r.read_u32::<LittleEndian>().map_err(err)? as usize;
        if d_in == 0 || d == 0 {
            return Err(Error::Parse {
                path: path.to_owned(),
                line: 0,
                what: "embedding model",
                detail: format!("invalid dimensions {d_in}x{d}"),
            });
        }
        let mut block = |n: usize| -> Result<Vec<f64>> {
            let mut v = vec![0.0; n];
            r.read_f64_into::<LittleEndian>(&mut v).map_err(err)?;
            Ok(v)
        };
        let norm_mean = Array1::from_vec(block(d_in)?);
        let norm_std = Array1::from_vec(block(d_in)?);
        let w1 = Array2::from_shape_vec((2 * d, d_in), block(2 * d * d_in)?)
            .expect("shape matches length");
        let b1 = Array1::from_vec(block(2 * d)?);
        let w2 =
            Array2::from_shape_vec((d, 2 * d), block(d * 2 * d)?).expect("shape matches length");
        let b2 = Array1::from_vec(block(d)?);
        let w3 = Array1::from_vec(block(d)?);
        let b3 = block(1)?[0];
        Ok(EmbeddingModel {
            w1,
            b1,
            w2,
            b2,
            w3,
            b3,
            norm_mean,
            norm_std,
        })
    }
}

/// Gradients of the mean-squared timestamp error, shaped like the model.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub w3: Array1<f64>,
    pub b3: f64,
}

fn check_batch(model: &EmbeddingModel, xs: &ArrayView2<f64>, ts: &ArrayView1<f64>) -> Result<()> {
    model.check_input(xs.ncols())?;
    if xs.nrows() == 0 {
        return Err(Error::EmptyInput("empty batch".into()));
    }
    if xs.nrows() != ts.len() {
        return Err(Error::DimensionMismatch {
            context: "batch targets".into(),
            expected: xs.nrows(),
            got: ts.len(),
        });
    }
    Ok(())
}

/// Mean squared error of timestamp predictions over a batch.
pub fn loss(model: &EmbeddingModel, xs: ArrayView2<f64>, ts: ArrayView1<f64>) -> Result<f64> {
    check_batch(model, &xs, &ts)?;
    let (_, y) = model.forward(xs)?;
    let diff = &y - &ts;
    Ok(diff.mapv(|d| d * d).mean().expect("non-empty batch"))
}

/// Batch loss and its gradient in one pass (backpropagation).
pub fn loss_and_gradient(
    model: &EmbeddingModel,
    xs: ArrayView2<f64>,
    ts: ArrayView1<f64>,
) -> Result<(f64, Gradients)> {
    check_batch(model, &xs, &ts)?;
    let n = xs.nrows() as f64;
    let xn = model.normalize(xs);
    let (a1, a2, y) = model.activations(&xn);

    let diff = &y - &ts;
    let loss = diff.mapv(|d| d * d).mean().expect("non-empty batch");

    // Output layer: d/dz of sigmoid is y(1-y).
    let delta3 = diff.mapv(|d| 2.0 * d / n) * y.mapv(|v| v * (1.0 - v));
    let g_w3 = a2.t().dot(&delta3);
    let g_b3 = delta3.sum();

    // Second hidden layer.
    let mut d2 = delta3
        .view()
        .insert_axis(Axis(1))
        .broadcast(a2.raw_dim())
        .expect("broadcast NxD")
        .to_owned()
        * &model.w3;
    d2 = d2 * a2.mapv(|v| v * (1.0 - v));
    let g_w2 = d2.t().dot(&a1);
    let g_b2 = d2.sum_axis(Axis(0));

    // First hidden layer.
    let d1 = d2.dot(&model.w2) * a1.mapv(|v| v * (1.0 - v));
    let g_w1 = d1.t().dot(&xn);
    let g_b1 = d1.sum_axis(Axis(0));

    Ok((
        loss,
        Gradients {
            w1: g_w1,
            b1: g_b1,
            w2: g_w2,
            b2: g_b2,
            w3: g_w3,
            b3: g_b3,
        },
    ))
}

pub fn gradient(
    model: &EmbeddingModel,
    xs: ArrayView2<f64>,
    ts: ArrayView1<f64>,
) -> Result<Gradients> {
    loss_and_gradient(model, xs, ts).map(|(_, g)| g)
}

#[derive(Debug, Clone)]
pub struct TrainedEmbedding {
    pub model: EmbeddingModel,
    /// Full-dataset loss after initialization and after each epoch, so
    /// `epoch_losses.len() == epochs + 1`.
    pub epoch_losses: Vec<f64>,
}

/// Trains the timestamp regressor on every frame of `dataset` with plain
/// minibatch SGD. Standardization statistics are computed from the data and
/// stored in the model.
pub fn train_embedding(dataset: &Dataset, cfg: &EmbeddingConfig) -> Result<TrainedEmbedding> {
    cfg.validate()?;
    let (frames, ts) = dataset.stacked_frames();
    let n = frames.nrows();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut model = EmbeddingModel::sample(
        frames.ncols(),
        cfg.embed_dim,
        cfg.weight_init_scale,
        &mut rng,
    );
    model.norm_mean = frames.mean_axis(Axis(0)).expect("at least one frame");
    model.norm_std = frames
        .var_axis(Axis(0), 0.0)
        .mapv(|v| v.sqrt().max(STD_FLOOR));

    let mut epoch_losses = Vec::with_capacity(cfg.epochs + 1);
    let initial = loss(&model, frames.view(), ts.view())?;
    if !initial.is_finite() {
        // epoch 0: the initial weights already overflow the forward pass.
        return Err(Error::NonFiniteLoss { epoch: 0 });
    }
    epoch_losses.push(initial);

    let mut order: Vec<usize> = (0..n).collect();
    let lr = cfg.learning_rate;
    for epoch in 1..=cfg.epochs {
        shuffle(&mut order, &mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let xs = frames.select(Axis(0), chunk);
            let tt = Array1::from_iter(chunk.iter().map(|&i| ts[i]));
            let (batch_loss, g) = loss_and_gradient(&model, xs.view(), tt.view())?;
            if !batch_loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch });
            }
            model.w1.scaled_add(-lr, &g.w1);
            model.b1.scaled_add(-lr, &g.b1);
            model.w2.scaled_add(-lr, &g.w2);
            model.b2.scaled_add(-lr, &g.b2);
            model.w3.scaled_add(-lr, &g.w3);
            model.b3 -= lr * g.b3;
        }
        let full = loss(&model, frames.view(), ts.view())?;
        if !full.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        epoch_losses.push(full);
    }

    Ok(TrainedEmbedding {
        model,
        epoch_losses,
    })
}

/// Fisher-Yates, kept local so the shuffle consumes a fixed amount of the
/// rng stream regardless of library internals.
fn shuffle(order: &mut [usize], rng: &mut ChaCha8Rng) {
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
}

/// Replaces each video's frames by their embeddings. Timestamps and ground
/// truth carry over unchanged.
pub fn embed_dataset(model: &EmbeddingModel, dataset: &Dataset) -> Result<Dataset> {
    model.check_input(dataset.feature_dim())?;
    let mut sequences = Vec::with_capacity(dataset.num_videos());
    for seq in &dataset.sequences {
        let (emb, _) = model.forward(seq.frames.view())?;
        sequences.push(FeatureSequence {
            video_id: seq.video_id.clone(),
            frames: emb,
            timestamps: seq.timestamps.clone(),
        });
    }
    Dataset::new(sequences, dataset.ground_truth.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synth::{generate_synthetic, SynthSpec};
    use ndarray::array;

    fn tiny_model(seed: u64) -> EmbeddingModel {
        EmbeddingModel::init(3, 2, 1.0, seed)
    }

    #[test]
    fn init_is_deterministic_and_in_range() {
        let a = tiny_model(5);
        let b = tiny_model(5);
        assert_eq!(a, b);
        let c = tiny_model(6);
        assert_ne!(a.w1, c.w1);
        let s = 1.0 / 3f64.sqrt();
        assert!(a.w1.iter().all(|v| v.abs() <= s));
        assert!(a.b1.iter().all(|&v| v == 0.0) && a.b3 == 0.0);
    }

    #[test]
    fn forward_shapes_and_output_range() {
        let m = tiny_model(1);
        let xs = array![[1.0, -2.0, 0.5], [0.0, 0.0, 0.0], [10.0, 10.0, -10.0]];
        let (emb, y) = m.forward(xs.view()).unwrap();
        assert_eq!(emb.shape(), &[3, 2]);
        assert_eq!(y.len(), 3);
        assert!(emb.iter().all(|v| (0.0..1.0).contains(v)));
        assert!(y.iter().all(|v| (0.0..1.0).contains(v)));
        assert!(m.forward(array![[1.0, 2.0]].view()).is_err());
    }

    // Gradient against central finite differences on every coordinate of a
    // small model. The coarse setup (few frames, scale 2) keeps activations
    // away from saturation so relative comparison is meaningful.
    #[test]
    fn gradient_matches_finite_differences() {
        let mut model = EmbeddingModel::init(4, 3, 2.0, 9);
        // Non-trivial standardization must be part of the gradient check.
        model.norm_mean = array![0.5, -1.0, 0.0, 2.0];
        model.norm_std = array![2.0, 0.5, 1.0, 3.0];
        let xs = array![
            [0.3, -1.2, 0.8, 2.5],
            [1.0, -0.5, -0.7, 1.0],
            [-0.2, -1.5, 0.1, 3.0],
            [0.8, -0.8, 0.4, 1.8],
            [0.0, -1.1, -0.2, 2.2],
        ];
        let ts = array![0.2, 0.4, 0.6, 0.8, 1.0];
        let g = gradient(&model, xs.view(), ts.view()).unwrap();
        let analytic: Vec<f64> = g
            .w1
            .iter()
            .chain(g.b1.iter())
            .chain(g.w2.iter())
            .chain(g.b2.iter())
            .chain(g.w3.iter())
            .chain(std::iter::once(&g.b3))
            .copied()
            .collect();

        let h = 1e-5;
        let mut worst = 0.0f64;
        for (idx, &a) in analytic.iter().enumerate() {
            let mut probe = model.clone();
            *flat_mut(&mut probe, idx) += h;
            let up = loss(&probe, xs.view(), ts.view()).unwrap();
            let mut probe = model.clone();
            *flat_mut(&mut probe, idx) -= h;
            let down = loss(&probe, xs.view(), ts.view()).unwrap();
            let fd = (up - down) / (2.0 * h);
            let denom = a.abs().max(fd.abs());
            if (a - fd).abs() > 1e-10 {
                worst = worst.max((a - fd).abs() / denom);
            }
        }
        assert!(worst < 1e-5, "worst relative error {worst}");
    }

    fn flat_mut(m: &mut EmbeddingModel, mut idx: usize) -> &mut f64 {
        let sizes = [
            m.w1.len(),
            m.b1.len(),
            m.w2.len(),
            m.b2.len(),
            m.w3.len(),
            1,
        ];
        for (block, &len) in sizes.iter().enumerate() {
            if idx < len {
                return match block {
                    0 => &mut m.w1.as_slice_mut().unwrap()[idx],
                    1 => &mut m.b1[idx],
                    2 => &mut m.w2.as_slice_mut().unwrap()[idx],
                    3 => &mut m.b2[idx],
                    4 => &mut m.w3[idx],
                    _ => &mut m.b3,
                };
            }
            idx -= len;
        }
        unreachable!("index out of range");
    }

    fn train_spec() -> SynthSpec {
        SynthSpec {
            num_videos: 6,
            num_subactions: 3,
            feature_dim: 4,
            segment_length_range: (6, 12),
            center_spread: 5.0,
            noise_scale: 0.3,
            background_fraction: 0.0,
            drop_probability: 0.0,
            rng_seed: 3,
        }
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let ds = generate_synthetic(&train_spec()).unwrap();
        let cfg = EmbeddingConfig {
            embed_dim: 6,
            epochs: 60,
            batch_size: 32,
            learning_rate: 1.0,
            ..EmbeddingConfig::default()
        };
        let a = train_embedding(&ds, &cfg).unwrap();
        assert_eq!(a.epoch_losses.len(), 61);
        let first = a.epoch_losses[0];
        let last = *a.epoch_losses.last().unwrap();
        assert!(
            last < first * 0.8,
            "loss should drop: {first} -> {last}"
        );
        let b = train_embedding(&ds, &cfg).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.epoch_losses, b.epoch_losses);
    }

    #[test]
    fn zero_epochs_is_rejected() {
        let ds = generate_synthetic(&train_spec()).unwrap();
        let cfg = EmbeddingConfig {
            epochs: 0,
            ..EmbeddingConfig::default()
        };
        assert!(matches!(
            train_embedding(&ds, &cfg),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn poisoned_weights_make_the_loss_non_finite() {
        // NaN anywhere in the weights must surface in the loss rather than
        // vanish, since the training loop's divergence guard keys off it.
        let mut model = tiny_model(7);
        model.w3[0] = f64::NAN;
        let xs = array![[1.0, 2.0, 3.0], [0.5, -1.0, 0.0]];
        let ts = array![0.5, 1.0];
        let l = loss(&model, xs.view(), ts.view()).unwrap();
        assert!(!l.is_finite());
    }

    #[test]
    fn saturated_training_stays_finite() {
        // Extreme learning rates saturate every unit; gradients collapse to
        // zero and the loss stays bounded rather than blowing up.
        let ds = generate_synthetic(&train_spec()).unwrap();
        let cfg = EmbeddingConfig {
            learning_rate: 1e300,
            epochs: 2,
            ..EmbeddingConfig::default()
        };
        let trained = train_embedding(&ds, &cfg).unwrap();
        assert!(trained.epoch_losses.iter().all(|l| l.is_finite()));
    }

    #[test]
    fn embed_dataset_swaps_features_and_keeps_the_rest() {
        let ds = generate_synthetic(&train_spec()).unwrap();
        let model = EmbeddingModel::init(4, 2, 1.0, 0);
        let emb = embed_dataset(&model, &ds).unwrap();
        assert_eq!(emb.feature_dim(), 2);
        assert_eq!(emb.num_videos(), ds.num_videos());
        assert_eq!(emb.sequences[0].timestamps, ds.sequences[0].timestamps);
        assert_eq!(emb.ground_truth, ds.ground_truth);
        // Embedding again only works if dimensions happen to line up.
        assert!(embed_dataset(&model, &emb).is_err());
    }

    #[test]
    fn model_round_trips_through_file() {
        let mut model = tiny_model(42);
        model.norm_mean = array![1.0, -2.0, 0.25];
        model.norm_std = array![0.5, 2.0, 1.0];
        model.b3 = -0.125;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.temb");
        model.save(&path).unwrap();
        let back = EmbeddingModel::load(&path).unwrap();
        assert_eq!(model, back);
    }

    #[test]
    fn load_rejects_wrong_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.temb");
        std::fs::write(&path, b"NOPE!rest").unwrap();
        assert!(matches!(
            EmbeddingModel::load(&path),
            Err(Error::BadMagic { .. })
        ));
    }
}
