//! Command-line front end for the tempseg library.
//!
//! Subcommands mirror the pipeline stages: `synth` writes a synthetic
//! corpus, `train-embed` fits the temporal embedding, `segment` runs the
//! known-activity path, `discover` the unknown-activity path, `evaluate`
//! scores saved segmentations, and `sweep` grids over (K', K, tau).
//!
//! Every command takes a `--seed`; stage seeds derive from it, so reruns
//! with the same inputs write byte-identical outputs.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use tempseg::activity::{discover, BowMode, DiscoverOptions, VideoRepr};
use tempseg::clustering::build_cluster_model;
use tempseg::dataset::io::{
    load_dataset, read_ground_truth_file, save_dataset, stem_map, FileFormat,
};
use tempseg::dataset::synth::{generate_activities, generate_synthetic, SynthSpec};
use tempseg::dataset::Dataset;
use tempseg::decoding::{decode_video, read_segmentation, write_segmentation, Segmentation};
use tempseg::embedding::{embed_dataset, train_embedding, EmbeddingConfig, EmbeddingModel};
use tempseg::eval::{evaluate, Protocol, SegmentSampling};
use tempseg::pipeline::{sweep, sweep_csv, Mode, RunConfig};
use tempseg::seeds::sub_seed;

#[derive(Parser)]
#[command(name = "tempseg", version, about = "Unsupervised temporal action segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus with ground truth
    Synth(SynthArgs),
    /// Train the temporal embedding and save it
    TrainEmbed(TrainEmbedArgs),
    /// Segment videos of one known activity
    Segment(SegmentArgs),
    /// Split mixed videos into activity sets and segment each set
    Discover(DiscoverArgs),
    /// Score saved segmentations against ground truth
    Evaluate(EvaluateArgs),
    /// Grid over (k_prime, k, tau) and write a CSV of metrics
    Sweep(SweepArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory; features/ and gt/ are created inside
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    videos: usize,
    /// Sub-actions per video (single activity)
    #[arg(long, default_value_t = 5)]
    subactions: usize,
    /// Comma-separated sub-action counts, one per activity; overrides
    /// --subactions and prefixes video ids with the activity
    #[arg(long)]
    activities: Option<String>,
    #[arg(long, default_value_t = 16)]
    feature_dim: usize,
    #[arg(long, default_value_t = 20)]
    min_len: usize,
    #[arg(long, default_value_t = 50)]
    max_len: usize,
    /// Minimum distance between sub-action feature centers
    #[arg(long, default_value_t = 8.0)]
    spread: f64,
    /// Standard deviation of per-frame noise
    #[arg(long, default_value_t = 0.5)]
    noise: f64,
    /// Fraction of frames that are background
    #[arg(long, default_value_t = 0.0)]
    background_fraction: f64,
    /// Probability that a video skips a given sub-action
    #[arg(long, default_value_t = 0.0)]
    drop_probability: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write features in the binary format instead of text
    #[arg(long)]
    binary: bool,
}

#[derive(Args)]
struct TrainEmbedArgs {
    /// Directory of per-video feature files
    #[arg(long)]
    features: PathBuf,
    /// Where to save the embedding model
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 32)]
    embed_dim: usize,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    learning_rate: f64,
    #[arg(long, default_value_t = 256)]
    batch_size: usize,
    #[arg(long, default_value_t = 1.0)]
    init_scale: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SegmentArgs {
    #[arg(long)]
    features: PathBuf,
    /// Ground-truth directory; enables metrics.txt
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Trained embedding model file
    #[arg(long)]
    embedding: PathBuf,
    /// Output directory for .seg files and metrics.txt
    #[arg(long)]
    out: PathBuf,
    /// Number of sub-action clusters
    #[arg(long)]
    k: usize,
    /// Background fraction per cluster, in [0, 1)
    #[arg(long, default_value_t = 0.0)]
    tau: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "breakfast")]
    protocol: Protocol,
    /// Also save the fitted cluster model here
    #[arg(long)]
    save_model: Option<PathBuf>,
}

#[derive(Args)]
struct DiscoverArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    gt: Option<PathBuf>,
    #[arg(long)]
    embedding: PathBuf,
    /// Output directory for .seg files, partition.txt, and metrics.txt
    #[arg(long)]
    out: PathBuf,
    /// Number of activity sets
    #[arg(long)]
    k_prime: usize,
    /// Sub-action clusters per set
    #[arg(long)]
    k: usize,
    #[arg(long, default_value_t = 0.0)]
    tau: f64,
    /// Codebook size for the bag-of-words step; defaults to k_prime * k
    #[arg(long)]
    codebook_size: Option<usize>,
    /// Summarize videos by mean-pooled embeddings instead of bag-of-words
    #[arg(long)]
    mean_pool: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "breakfast")]
    protocol: Protocol,
    /// Also save the per-set cluster models as model-<set>.tclm
    #[arg(long)]
    save_models: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Directory of .seg files
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long, default_value = "breakfast")]
    protocol: Protocol,
    /// Also write the report here
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// Output CSV path
    #[arg(long)]
    out: PathBuf,
    /// Base run config file (key=value lines); flags below override it
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    mode: Option<Mode>,
    /// Comma-separated grid, e.g. 1,2,4
    #[arg(long, default_value = "1")]
    k_primes: String,
    /// Comma-separated grid, e.g. 3,5,8
    #[arg(long)]
    ks: String,
    /// Comma-separated grid, e.g. 0.0,0.1
    #[arg(long, default_value = "0.0")]
    taus: String,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    protocol: Option<Protocol>,
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Synth(args) => cmd_synth(args),
        Command::TrainEmbed(args) => cmd_train_embed(args),
        Command::Segment(args) => cmd_segment(args),
        Command::Discover(args) => cmd_discover(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Sweep(args) => cmd_sweep(args),
    }
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    s.split(',')
        .map(|tok| {
            tok.trim()
                .parse::<T>()
                .map_err(|e| anyhow::anyhow!("bad {what} entry {tok:?}: {e}"))
        })
        .collect()
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let spec = SynthSpec {
        num_videos: args.videos,
        num_subactions: args.subactions,
        feature_dim: args.feature_dim,
        segment_length_range: (args.min_len, args.max_len),
        center_spread: args.spread,
        noise_scale: args.noise,
        background_fraction: args.background_fraction,
        drop_probability: args.drop_probability,
        rng_seed: args.seed,
    };
    let format = if args.binary {
        FileFormat::Binary
    } else {
        FileFormat::Text
    };
    let (dataset, activities) = match &args.activities {
        None => (generate_synthetic(&spec)?, None),
        Some(list) => {
            let counts: Vec<usize> = parse_list(list, "activities")?;
            let multi = generate_activities(&spec, &counts)?;
            (multi.dataset, Some(multi.activities))
        }
    };
    let features = args.out.join("features");
    let gt = args.out.join("gt");
    save_dataset(&dataset, &features, Some(&gt), format)?;
    if let Some(map) = &activities {
        let mut text = String::new();
        for (id, act) in map {
            text.push_str(&format!("{id}\t{act}\n"));
        }
        let path = args.out.join("activities.txt");
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    println!(
        "wrote {} videos, {} frames, dim {} to {}",
        dataset.num_videos(),
        dataset.total_frames(),
        dataset.feature_dim(),
        args.out.display()
    );
    Ok(())
}

fn cmd_train_embed(args: TrainEmbedArgs) -> Result<()> {
    let dataset = load_dataset(&args.features, None)?;
    let cfg = EmbeddingConfig {
        embed_dim: args.embed_dim,
        epochs: args.epochs,
        learning_rate: args.learning_rate,
        batch_size: args.batch_size,
        weight_init_scale: args.init_scale,
        rng_seed: args.seed,
    };
    let trained = train_embedding(&dataset, &cfg)?;
    trained.model.save(&args.out)?;
    for (epoch, loss) in trained.epoch_losses.iter().enumerate() {
        println!("epoch={epoch} loss={loss:.6}");
    }
    println!("saved embedding to {}", args.out.display());
    Ok(())
}

fn write_segmentations(out: &Path, segs: &[(String, Segmentation)]) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    for (id, seg) in segs {
        write_segmentation(&seg.labels, &out.join(format!("{id}.seg")))?;
    }
    Ok(())
}

fn report(out: &Path, dataset: &Dataset, segs: &[(String, Segmentation)], protocol: Protocol) -> Result<()> {
    if let Some(gts) = &dataset.ground_truth {
        let preds: Vec<(String, Vec<Option<usize>>)> = segs
            .iter()
            .map(|(id, seg)| (id.clone(), seg.labels.clone()))
            .collect();
        let eval = evaluate(&preds, gts, protocol, SegmentSampling::Exhaustive)?;
        fs::write(out.join("metrics.txt"), eval.to_key_values())
            .with_context(|| format!("writing {}", out.join("metrics.txt").display()))?;
        let h = eval.headline();
        println!(
            "headline mof={:.4} iou={:.4} f1={:.4}",
            h.mof, h.iou, h.f1
        );
    }
    Ok(())
}

fn cmd_segment(args: SegmentArgs) -> Result<()> {
    let dataset = load_dataset(&args.features, args.gt.as_deref())?;
    let model = EmbeddingModel::load(&args.embedding)?;
    let embedded = embed_dataset(&model, &dataset)?;
    let cluster = build_cluster_model(&embedded, args.k, args.tau, sub_seed(args.seed, "cluster"))?;
    let mut segs = Vec::with_capacity(embedded.num_videos());
    for seq in &embedded.sequences {
        segs.push((seq.video_id.clone(), decode_video(seq, &cluster)?));
    }
    write_segmentations(&args.out, &segs)?;
    if let Some(path) = &args.save_model {
        cluster.save(path)?;
    }
    report(&args.out, &dataset, &segs, args.protocol)?;
    println!("segmented {} videos with k={}", segs.len(), args.k);
    Ok(())
}

fn cmd_discover(args: DiscoverArgs) -> Result<()> {
    let dataset = load_dataset(&args.features, args.gt.as_deref())?;
    let model = EmbeddingModel::load(&args.embedding)?;
    let opts = DiscoverOptions {
        repr: if args.mean_pool {
            VideoRepr::MeanPool
        } else {
            VideoRepr::Bow {
                mode: BowMode::Soft,
                codebook_size: args.codebook_size,
            }
        },
        cosine: false,
    };
    let disc = discover(
        &dataset,
        &model,
        args.k_prime,
        args.k,
        args.tau,
        args.seed,
        &opts,
    )?;
    write_segmentations(&args.out, &disc.segmentations)?;

    let set_of = disc.partition.set_of();
    let mut text = String::new();
    for (id, _) in &disc.segmentations {
        text.push_str(&format!("{id}\t{}\n", set_of[id]));
    }
    fs::write(args.out.join("partition.txt"), text)
        .with_context(|| format!("writing {}", args.out.join("partition.txt").display()))?;

    if args.save_models {
        for (s, m) in disc.models.iter().enumerate() {
            m.save(&args.out.join(format!("model-{s}.tclm")))?;
        }
    }
    report(&args.out, &dataset, &disc.segmentations, args.protocol)?;
    let sizes: Vec<usize> = disc.partition.sets.iter().map(Vec::len).collect();
    println!(
        "discovered {} sets with sizes {:?} over {} videos",
        disc.partition.k_prime(),
        sizes,
        disc.segmentations.len()
    );
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let mut pred_files = stem_map(&args.pred)?;
    pred_files.retain(|_, path| path.extension().is_some_and(|e| e == "seg"));
    if pred_files.is_empty() {
        bail!("no .seg files in {}", args.pred.display());
    }
    let gt_files = stem_map(&args.gt)?;
    let mut preds = Vec::new();
    let mut gts = Vec::new();
    for (id, path) in &pred_files {
        let gt_path = gt_files
            .get(id)
            .ok_or_else(|| anyhow::anyhow!("no ground truth for video {id}"))?;
        preds.push((id.clone(), read_segmentation(path)?));
        gts.push(read_ground_truth_file(gt_path, id)?);
    }
    let eval = evaluate(&preds, &gts, args.protocol, SegmentSampling::Exhaustive)?;
    print!("{}", eval.to_key_values());
    if let Some(path) = &args.out {
        fs::write(path, eval.to_key_values())
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let dataset = load_dataset(&args.features, Some(&args.gt))?;
    let mut base = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(mode) = args.mode {
        base.mode = mode;
    }
    if let Some(v) = args.embed_dim {
        base.embedding.embed_dim = v;
    }
    if let Some(v) = args.epochs {
        base.embedding.epochs = v;
    }
    if let Some(v) = args.learning_rate {
        base.embedding.learning_rate = v;
    }
    if let Some(v) = args.batch_size {
        base.embedding.batch_size = v;
    }
    if let Some(v) = args.protocol {
        base.protocol = v;
    }
    if let Some(v) = args.seed {
        base.rng_seed = v;
    }
    let k_primes: Vec<usize> = parse_list(&args.k_primes, "k_primes")?;
    let ks: Vec<usize> = parse_list(&args.ks, "ks")?;
    let taus: Vec<f64> = parse_list(&args.taus, "taus")?;
    let rows = sweep(&dataset, &base, &k_primes, &ks, &taus)?;
    let name = args
        .features
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    let csv = sweep_csv(&rows, &name, base.rng_seed);
    fs::write(&args.out, &csv).with_context(|| format!("writing {}", args.out.display()))?;
    println!("wrote {} sweep rows to {}", rows.len(), args.out.display());
    Ok(())
}
