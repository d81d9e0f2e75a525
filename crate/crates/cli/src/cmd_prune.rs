//! `prune`: iterative filter pruning of a trained checkpoint.
//!
//! Each iteration drops the lowest-l1-norm fraction of filters from the
//! eligible layers, fine-tunes, and records accuracy plus a resource
//! profile. Writes the final pruned checkpoint and the per-iteration
//! records as JSON.

use std::collections::BTreeSet;
use std::path::PathBuf;

use clap::Args;
use serde::Serialize;
use serde_json::json;

use cropchain_core::cost_model::EnergyConstants;
use cropchain_core::nn::{load_checkpoint, save_checkpoint, TrainConfig};
use cropchain_core::pruning::{iterative_prune, PruneConfig, PruneData};
use cropchain_core::segmentation::{build_dataset, EVAL_COVER_SPREAD};
use cropchain_core::Error;

use crate::manifest::RunRecorder;
use crate::util::{self, user_err};

#[derive(Debug, Args, Serialize)]
pub struct PruneArgs {
    /// Checkpoint to prune
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Fraction of remaining filters dropped per iteration, in (0, 1)
    #[arg(long)]
    pub ratio: f64,
    /// Number of prune + fine-tune iterations
    #[arg(long, default_value_t = 1)]
    pub iterations: u32,
    /// Fine-tune epochs after each iteration (0 disables fine-tuning)
    #[arg(long, default_value_t = 2)]
    pub ft_epochs: usize,
    /// Comma-separated indices of layers eligible for pruning
    #[arg(long, default_value = "0,3,6,9,12")]
    pub layers: String,
    /// Seed for fine-tune/eval data and shuffling
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Number of fine-tune images
    #[arg(long, default_value_t = 24)]
    pub count: usize,
    /// Edge length of generated fields; must match the checkpoint's input
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    /// Fine-tune learning rate
    #[arg(long, default_value_t = 0.1)]
    pub lr: f64,
    /// Fine-tune mini-batch size
    #[arg(long, default_value_t = 4)]
    pub batch: usize,
    /// Comma-separated target covers of the fine-tune set
    #[arg(long, default_value = "0.2,0.4,0.6,0.8")]
    pub covers: String,
    /// Seed of the held-out evaluation set (default: seed + 10000)
    #[arg(long)]
    pub eval_seed: Option<u64>,
    /// Number of held-out evaluation images
    #[arg(long, default_value_t = 64)]
    pub eval_count: usize,
    /// Output directory (re-rooted under $CROPCHAIN_OUT_DIR when relative)
    #[arg(long, default_value = "prune-run")]
    pub out_dir: PathBuf,
}

pub fn run(args: PruneArgs) -> anyhow::Result<()> {
    let covers = util::parse_f64_list("--covers", &args.covers)?;
    let layers: BTreeSet<usize> =
        util::parse_usize_list("--layers", &args.layers)?.into_iter().collect();
    let eval_seed = args.eval_seed.unwrap_or_else(|| args.seed.wrapping_add(10_000));
    let out_dir = util::resolve_out_dir(&args.out_dir);
    util::ensure_dir(&out_dir)?;
    let mut rec = RunRecorder::new(
        "prune",
        json!({ "flags": &args, "resolved": { "eval_seed": eval_seed, "eval_covers": EVAL_COVER_SPREAD } }),
        Some(args.seed),
    )?;

    let model = load_checkpoint(&args.checkpoint)
        .map_err(|e| user_err(format!("--checkpoint: {e}")))?;
    let train_data = build_dataset(args.seed, args.count, args.size, &covers)
        .map_err(|e| user_err(format!("--count/--covers: {e}")))?;
    let eval_data = build_dataset(eval_seed, args.eval_count, args.size, &EVAL_COVER_SPREAD)
        .map_err(|e| user_err(format!("--eval-count: {e}")))?;

    let cfg = PruneConfig {
        ratio: args.ratio,
        iterations: args.iterations,
        fine_tune_epochs_per_iter: args.ft_epochs,
        prunable_layers: layers,
    };
    let data = PruneData {
        train: &train_data,
        eval: &eval_data,
        fine_tune: TrainConfig {
            epochs: args.ft_epochs,
            learning_rate: args.lr,
            batch_size: args.batch,
            shuffle_seed: args.seed,
        },
        energy: EnergyConstants::default(),
    };
    let stages = iterative_prune(&model, &cfg, &data).map_err(|e| match e {
        Error::InvalidArgument(_) | Error::NotPrunableLayer(_) => {
            user_err(format!("--ratio/--iterations/--layers: {e}"))
        }
        other => other.into(),
    })?;

    println!("iter  removed  accuracy  MFLOPs    size-MiB");
    for stage in &stages {
        let r = &stage.record;
        let removed: usize = r.layers.iter().map(|l| l.removed.len()).sum();
        println!(
            "{:<4}  {:<7}  {:<8.4}  {:<8.3}  {:.4}",
            r.iteration,
            removed,
            r.accuracy,
            r.profile.flops as f64 / 1e6,
            r.profile.size_mb,
        );
    }

    let last = stages.last().expect("iterations >= 1 yields at least one stage");
    let ckpt = out_dir.join("pruned.ckpt");
    save_checkpoint(&last.model, &ckpt)
        .map_err(|e| user_err(format!("cannot write {}: {e}", ckpt.display())))?;
    rec.record(&ckpt);

    let records: Vec<_> = stages.iter().map(|s| &s.record).collect();
    let record_path = out_dir.join("prune_record.json");
    util::write_text(
        &record_path,
        &format!("{}\n", serde_json::to_string_pretty(&records)?),
    )?;
    rec.record(&record_path);

    rec.finish(&out_dir)?;
    println!("pruned checkpoint: {}", ckpt.display());
    Ok(())
}
