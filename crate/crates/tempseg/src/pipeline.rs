//! End-to-end runs: train the embedding, fit cluster models, decode, and
//! evaluate, all driven by one config and one root seed.
//!
//! Stage seeds fan out from the root via [`crate::seeds::sub_seed`], so a
//! known-activity run and a discovery run with `k_prime = 1` use the same
//! embedding seed and the same clustering seed, and produce identical
//! segmentations.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::activity::{discover, ActivityPartition, BowMode, DiscoverOptions, VideoRepr};
use crate::clustering::{build_cluster_model, ClusterModel};
use crate::dataset::Dataset;
use crate::decoding::{decode_video, Segmentation};
use crate::embedding::{embed_dataset, train_embedding, EmbeddingConfig, EmbeddingModel};
use crate::error::{Error, Result};
use crate::eval::{evaluate, Evaluation, Protocol, SegmentSampling};
use crate::seeds::sub_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// All videos show one activity; fit a single cluster model.
    Known,
    /// Activity labels unknown; split videos into `k_prime` sets first.
    Unknown,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Known => "known",
            Mode::Unknown => "unknown",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "known" => Ok(Mode::Known),
            "unknown" => Ok(Mode::Unknown),
            other => Err(Error::InvalidParameter(format!(
                "unknown mode {other:?}; expected known or unknown"
            ))),
        }
    }
}

/// Everything a run needs besides the data. Serializes to `key=value` lines;
/// see [`RunConfig::to_key_values`] for the exact keys.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub mode: Mode,
    pub protocol: Protocol,
    /// Subactions per activity.
    pub k: usize,
    /// Activity sets (unknown mode only).
    pub k_prime: usize,
    /// Background fraction per cluster, in `[0, 1)`.
    pub tau: f64,
    /// Codebook size for discovery; `None` means `k_prime * k`.
    pub codebook_size: Option<usize>,
    pub embedding: EmbeddingConfig,
    pub rng_seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: Mode::Known,
            protocol: Protocol::Breakfast,
            k: 5,
            k_prime: 1,
            tau: 0.0,
            codebook_size: None,
            embedding: EmbeddingConfig::default(),
            rng_seed: 0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidParameter("k must be at least 1".into()));
        }
        if self.k_prime == 0 {
            return Err(Error::InvalidParameter("k_prime must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.tau) {
            return Err(Error::InvalidParameter(format!(
                "tau {} must be in [0, 1)",
                self.tau
            )));
        }
        if self.codebook_size == Some(0) {
            return Err(Error::InvalidParameter(
                "codebook_size must be at least 1".into(),
            ));
        }
        self.embedding.validate()
    }

    /// `key=value` lines in a fixed order. Floats use the shortest
    /// round-tripping form, so parse-then-render is idempotent.
    pub fn to_key_values(&self) -> String {
        let codebook = match self.codebook_size {
            Some(v) => v.to_string(),
            None => "auto".into(),
        };
        format!(
            "mode={}\nprotocol={}\nk={}\nk_prime={}\ntau={}\ncodebook_size={}\n\
             embed_dim={}\nlearning_rate={}\nepochs={}\nbatch_size={}\n\
             weight_init_scale={}\nrng_seed={}\n",
            self.mode,
            self.protocol,
            self.k,
            self.k_prime,
            self.tau,
            codebook,
            self.embedding.embed_dim,
            self.embedding.learning_rate,
            self.embedding.epochs,
            self.embedding.batch_size,
            self.embedding.weight_init_scale,
            self.rng_seed,
        )
    }

    /// Parses `key=value` lines; omitted keys keep their defaults. Blank
    /// lines and `#` comments are allowed.
    pub fn from_key_values(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |detail: String| {
                Error::InvalidParameter(format!("config line {}: {detail}", idx + 1))
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("expected key=value, got {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            let parse_num = |what: &str| -> Result<f64> {
                value
                    .parse::<f64>()
                    .map_err(|e| bad(format!("{what} {value:?}: {e}")))
            };
            match key {
                "mode" => cfg.mode = value.parse().map_err(|e| bad(format!("{e}")))?,
                "protocol" => cfg.protocol = value.parse().map_err(|e| bad(format!("{e}")))?,
                "k" => cfg.k = parse_num("k")? as usize,
                "k_prime" => cfg.k_prime = parse_num("k_prime")? as usize,
                "tau" => cfg.tau = parse_num("tau")?,
                "codebook_size" => {
                    cfg.codebook_size = if value == "auto" {
                        None
                    } else {
                        Some(parse_num("codebook_size")? as usize)
                    }
                }
                "embed_dim" => cfg.embedding.embed_dim = parse_num("embed_dim")? as usize,
                "learning_rate" => cfg.embedding.learning_rate = parse_num("learning_rate")?,
                "epochs" => cfg.embedding.epochs = parse_num("epochs")? as usize,
                "batch_size" => cfg.embedding.batch_size = parse_num("batch_size")? as usize,
                "weight_init_scale" => {
                    cfg.embedding.weight_init_scale = parse_num("weight_init_scale")?
                }
                "rng_seed" => {
                    cfg.rng_seed = value
                        .parse::<u64>()
                        .map_err(|e| bad(format!("rng_seed {value:?}: {e}")))?
                }
                other => return Err(bad(format!("unknown key {other:?}"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_key_values()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_key_values(&text)
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    /// One segmentation per video, in dataset order.
    pub segmentations: Vec<(String, Segmentation)>,
    /// One model in known mode, `k_prime` in unknown mode.
    pub cluster_models: Vec<ClusterModel>,
    pub embedding: EmbeddingModel,
    /// Mean training loss per epoch, initial loss first.
    pub loss_curve: Vec<f64>,
    /// Present when the dataset carries ground truth.
    pub evaluation: Option<Evaluation>,
    /// Present in unknown mode.
    pub partition: Option<ActivityPartition>,
}

fn train_stage(dataset: &Dataset, cfg: &RunConfig) -> Result<crate::embedding::TrainedEmbedding> {
    let embed_cfg = EmbeddingConfig {
        rng_seed: sub_seed(cfg.rng_seed, "embed"),
        ..cfg.embedding.clone()
    };
    train_embedding(dataset, &embed_cfg)
}

fn evaluate_stage(
    dataset: &Dataset,
    cfg: &RunConfig,
    segmentations: &[(String, Segmentation)],
) -> Result<Option<Evaluation>> {
    match &dataset.ground_truth {
        None => Ok(None),
        Some(gts) => {
            let preds: Vec<(String, Vec<Option<usize>>)> = segmentations
                .iter()
                .map(|(id, seg)| (id.clone(), seg.labels.clone()))
                .collect();
            evaluate(&preds, gts, cfg.protocol, SegmentSampling::Exhaustive).map(Some)
        }
    }
}

/// Known-activity run: one cluster model over the whole dataset.
pub fn run_known(dataset: &Dataset, cfg: &RunConfig) -> Result<RunResult> {
    cfg.validate()?;
    let trained = train_stage(dataset, cfg)?;
    let embedded = embed_dataset(&trained.model, dataset)?;
    let model = build_cluster_model(&embedded, cfg.k, cfg.tau, sub_seed(cfg.rng_seed, "cluster"))?;
    let mut segmentations = Vec::with_capacity(embedded.num_videos());
    for seq in &embedded.sequences {
        segmentations.push((seq.video_id.clone(), decode_video(seq, &model)?));
    }
    let evaluation = evaluate_stage(dataset, cfg, &segmentations)?;
    Ok(RunResult {
        segmentations,
        cluster_models: vec![model],
        embedding: trained.model,
        loss_curve: trained.epoch_losses,
        evaluation,
        partition: None,
    })
}

/// Discovery run: split videos into `k_prime` sets, then segment each set.
pub fn run_unknown(dataset: &Dataset, cfg: &RunConfig) -> Result<RunResult> {
    cfg.validate()?;
    let trained = train_stage(dataset, cfg)?;
    let opts = DiscoverOptions {
        repr: VideoRepr::Bow {
            mode: BowMode::Soft,
            codebook_size: cfg.codebook_size,
        },
        cosine: false,
    };
    let disc = discover(
        dataset,
        &trained.model,
        cfg.k_prime,
        cfg.k,
        cfg.tau,
        cfg.rng_seed,
        &opts,
    )?;
    let evaluation = evaluate_stage(dataset, cfg, &disc.segmentations)?;
    Ok(RunResult {
        segmentations: disc.segmentations,
        cluster_models: disc.models,
        embedding: trained.model,
        loss_curve: trained.epoch_losses,
        evaluation,
        partition: Some(disc.partition),
    })
}

/// Dispatches on `cfg.mode`.
pub fn run(dataset: &Dataset, cfg: &RunConfig) -> Result<RunResult> {
    match cfg.mode {
        Mode::Known => run_known(dataset, cfg),
        Mode::Unknown => run_unknown(dataset, cfg),
    }
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub k_prime: usize,
    pub k: usize,
    pub tau: f64,
    pub evaluation: Evaluation,
}

/// Runs the pipeline over the cross product of the given grids, holding the
/// rest of `base` fixed. Requires ground truth. In known mode pass a
/// single-element `k_primes` grid; each extra value would just repeat the
/// same run.
pub fn sweep(
    dataset: &Dataset,
    base: &RunConfig,
    k_primes: &[usize],
    ks: &[usize],
    taus: &[f64],
) -> Result<Vec<SweepRow>> {
    if dataset.ground_truth.is_none() {
        return Err(Error::InvalidParameter(
            "sweep needs ground truth to report metrics".into(),
        ));
    }
    if k_primes.is_empty() || ks.is_empty() || taus.is_empty() {
        return Err(Error::EmptyInput("sweep grids must be non-empty".into()));
    }
    let mut rows = Vec::new();
    for &k_prime in k_primes {
        for &k in ks {
            for &tau in taus {
                let cfg = RunConfig {
                    k_prime,
                    k,
                    tau,
                    ..base.clone()
                };
                let result = run(dataset, &cfg)?;
                rows.push(SweepRow {
                    k_prime,
                    k,
                    tau,
                    evaluation: result.evaluation.expect("ground truth checked above"),
                });
            }
        }
    }
    Ok(rows)
}

/// CSV table for a sweep, header included.
pub fn sweep_csv(rows: &[SweepRow], dataset_name: &str, seed: u64) -> String {
    let mut out = String::from(Evaluation::csv_header());
    out.push('\n');
    for row in rows {
        out.push_str(&row.evaluation.csv_row(dataset_name, row.k_prime, row.k, row.tau, seed));
        out.push('\n');
    }
    out
}
