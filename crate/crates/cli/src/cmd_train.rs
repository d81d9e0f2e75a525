//! `train`: fit the reference segmentation network on synthetic fields.
//!
//! Writes `base.ckpt`, the per-epoch loss curve as CSV, a dataset manifest
//! (optionally with every field persisted as a binary container), held-out
//! metrics, and the run manifest.

use std::path::PathBuf;

use clap::Args;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use cropchain_core::nn::{reference_fcn, save_checkpoint, train, ModelGraph, TrainConfig};
use cropchain_core::nn::Dataset;
use cropchain_core::segmentation::{
    build_dataset, dataset_pixel_accuracy, generate_field, mean_iou, predict_mask,
    save_field_image, DatasetManifestEntry, EVAL_COVER_SPREAD,
};

use crate::manifest::RunRecorder;
use crate::util::{self, user_err};

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Master seed for dataset generation and batch shuffling
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Number of training images
    #[arg(long, default_value_t = 24)]
    pub count: usize,
    /// Edge length of the square fields; must be a positive multiple of 16
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    /// Training epochs
    #[arg(long, default_value_t = 150)]
    pub epochs: usize,
    /// SGD learning rate
    #[arg(long, default_value_t = 0.3)]
    pub lr: f64,
    /// Mini-batch size
    #[arg(long, default_value_t = 4)]
    pub batch: usize,
    /// Comma-separated target biomass covers, cycled over the dataset
    #[arg(long, default_value = "0.2,0.4,0.6,0.8")]
    pub covers: String,
    /// Seed of the held-out evaluation set (default: seed + 10000)
    #[arg(long)]
    pub eval_seed: Option<u64>,
    /// Number of held-out evaluation images
    #[arg(long, default_value_t = 64)]
    pub eval_count: usize,
    /// Also persist every training field as a binary container under fields/
    #[arg(long, default_value_t = false)]
    pub save_fields: bool,
    /// Output directory (re-rooted under $CROPCHAIN_OUT_DIR when relative)
    #[arg(long, default_value = "train-run")]
    pub out_dir: PathBuf,
}

#[derive(Serialize)]
struct DatasetManifest<'a> {
    seed: u64,
    count: usize,
    size: usize,
    covers: &'a [f64],
    entries: Vec<DatasetManifestEntry>,
}

#[derive(Serialize)]
struct TrainMetrics<'a> {
    epochs: usize,
    final_loss: Option<f64>,
    eval_seed: u64,
    eval_count: usize,
    eval_covers: &'a [f64],
    eval_accuracy: f64,
    eval_mean_iou: f64,
}

/// Mean intersection-over-union across a dataset.
fn dataset_mean_iou(model: &ModelGraph, data: &Dataset) -> anyhow::Result<f64> {
    let mut sum = 0.0;
    for (image, truth) in &data.samples {
        let probs = model.forward(image)?;
        sum += mean_iou(&predict_mask(&probs), truth, model.num_classes)?;
    }
    Ok(sum / data.samples.len() as f64)
}

pub fn run(args: TrainArgs) -> anyhow::Result<()> {
    let covers = util::parse_f64_list("--covers", &args.covers)?;
    if args.size == 0 || args.size % 16 != 0 {
        return Err(user_err(format!(
            "--size: must be a positive multiple of 16 (three pooling halvings plus two 4x upsampling stages), got {}",
            args.size
        )));
    }
    let eval_seed = args.eval_seed.unwrap_or_else(|| args.seed.wrapping_add(10_000));
    let out_dir = util::resolve_out_dir(&args.out_dir);
    util::ensure_dir(&out_dir)?;
    let mut rec = RunRecorder::new(
        "train",
        json!({ "flags": &args, "resolved": { "eval_seed": eval_seed, "eval_covers": EVAL_COVER_SPREAD } }),
        Some(args.seed),
    )?;

    let data = build_dataset(args.seed, args.count, args.size, &covers)
        .map_err(|e| user_err(format!("--count/--covers: {e}")))?;
    let eval = build_dataset(eval_seed, args.eval_count, args.size, &EVAL_COVER_SPREAD)
        .map_err(|e| user_err(format!("--eval-count: {e}")))?;

    let cfg = TrainConfig {
        epochs: args.epochs,
        learning_rate: args.lr,
        batch_size: args.batch,
        shuffle_seed: args.seed,
    };
    // The reference architecture works at any multiple-of-16 edge length;
    // only the declared input shape needs retargeting. Parameters start
    // zeroed and are drawn here from the run seed.
    let mut model = reference_fcn();
    model.input_shape = (1, args.size, args.size);
    model.init_params(&mut ChaCha8Rng::seed_from_u64(args.seed));
    model.validate()?;
    let outcome = train(&model, &data, &cfg)
        .map_err(|e| user_err(format!("training failed (check --lr/--epochs/--batch): {e}")))?;
    let accuracy = dataset_pixel_accuracy(&outcome.model, &eval)?;
    let iou = dataset_mean_iou(&outcome.model, &eval)?;

    let ckpt = out_dir.join("base.ckpt");
    save_checkpoint(&outcome.model, &ckpt)
        .map_err(|e| user_err(format!("cannot write {}: {e}", ckpt.display())))?;
    rec.record(&ckpt);

    let mut csv = String::from("epoch,loss\n");
    for (i, loss) in outcome.loss_curve.iter().enumerate() {
        csv.push_str(&format!("{},{loss}\n", i + 1));
    }
    let loss_path = out_dir.join("loss.csv");
    util::write_text(&loss_path, &csv)?;
    rec.record(&loss_path);

    // The manifest mirrors the dataset builder's per-sample derivation, so
    // each row regenerates its field exactly.
    if args.save_fields {
        util::ensure_dir(&out_dir.join("fields"))?;
    }
    let mut entries = Vec::with_capacity(args.count);
    for i in 0..args.count {
        let sample_seed = args.seed.wrapping_add(1 + i as u64);
        let target = covers[i % covers.len()];
        let field = generate_field(sample_seed, args.size, target)?;
        let image_path = if args.save_fields {
            let rel = format!("fields/{i:04}.bin");
            let path = out_dir.join(&rel);
            save_field_image(&field, &path)
                .map_err(|e| user_err(format!("cannot write {}: {e}", path.display())))?;
            rec.record(&path);
            Some(rel)
        } else {
            None
        };
        entries.push(DatasetManifestEntry {
            field_id: field.field_id,
            seed: sample_seed,
            size: args.size,
            target_cover: target,
            image_path,
        });
    }
    let dataset_path = out_dir.join("dataset.json");
    let dataset_manifest = DatasetManifest {
        seed: args.seed,
        count: args.count,
        size: args.size,
        covers: &covers,
        entries,
    };
    util::write_text(
        &dataset_path,
        &format!("{}\n", serde_json::to_string_pretty(&dataset_manifest)?),
    )?;
    rec.record(&dataset_path);

    let metrics_path = out_dir.join("metrics.json");
    let metrics = TrainMetrics {
        epochs: args.epochs,
        final_loss: outcome.loss_curve.last().copied(),
        eval_seed,
        eval_count: args.eval_count,
        eval_covers: &EVAL_COVER_SPREAD,
        eval_accuracy: accuracy,
        eval_mean_iou: iou,
    };
    util::write_text(
        &metrics_path,
        &format!("{}\n", serde_json::to_string_pretty(&metrics)?),
    )?;
    rec.record(&metrics_path);

    rec.finish(&out_dir)?;
    println!(
        "trained {} epochs on {} images ({}x{})",
        args.epochs, args.count, args.size, args.size
    );
    if let Some(loss) = outcome.loss_curve.last() {
        println!("final loss: {loss:.6}");
    }
    println!(
        "eval accuracy: {accuracy:.4}, mean IoU: {iou:.4} on {} held-out images",
        args.eval_count
    );
    println!("checkpoint: {}", ckpt.display());
    Ok(())
}
