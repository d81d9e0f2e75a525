//! `roadmap`: build the full iterations × ratios grid of pruned variants.
//!
//! Every variant (plus the unpruned base) is evaluated on a seeded
//! held-out set, profiled, and written out as a checkpoint. The roadmap
//! itself is emitted twice — as a JSON array of entries and as plot-ready
//! CSV — alongside the last-iteration surgery records and the run
//! manifest. Ratio chains build in parallel; latency measurement, when
//! requested, runs strictly serially afterwards.

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::path::PathBuf;

use clap::Args;
use serde::Serialize;
use serde_json::json;

use cropchain_core::cost_model::{measure_latency, EnergyConstants};
use cropchain_core::nn::{load_checkpoint, save_checkpoint, TrainConfig};
use cropchain_core::pruning::PruneRecord;
use cropchain_core::roadmap::{build_roadmap, roadmap_csv, roadmap_to_json, RoadmapBuildConfig};
use cropchain_core::segmentation::{build_dataset, generate_field, EVAL_COVER_SPREAD};
use cropchain_core::Error;

use crate::manifest::RunRecorder;
use crate::util::{self, user_err};

#[derive(Debug, Args, Serialize)]
pub struct RoadmapArgs {
    /// Trained base checkpoint
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Comma-separated pruning iteration counts (e.g. 1,2,3)
    #[arg(long)]
    pub itrs: String,
    /// Prune ratios: comma list or inclusive start:stop:step range
    #[arg(long)]
    pub ps: String,
    /// Fine-tune epochs per pruning iteration
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
    /// Measure every variant's median forward latency (serial, slower)
    #[arg(long, default_value_t = false)]
    pub measure_latency: bool,
    /// Timed repetitions per latency measurement (minimum 3)
    #[arg(long, default_value_t = 15)]
    pub latency_reps: usize,
    /// Output directory (re-rooted under $CROPCHAIN_OUT_DIR when relative)
    #[arg(long, default_value = "roadmap-run")]
    pub out_dir: PathBuf,
}

pub fn run(args: RoadmapArgs) -> anyhow::Result<()> {
    let itrs = util::parse_u32_list("--itrs", &args.itrs)?;
    let ps = util::parse_ratio_axis("--ps", &args.ps)?;
    let layers: BTreeSet<usize> =
        util::parse_usize_list("--layers", &args.layers)?.into_iter().collect();
    let covers = util::parse_f64_list("--covers", &args.covers)?;
    let eval_seed = args.eval_seed.unwrap_or_else(|| args.seed.wrapping_add(10_000));
    let out_dir = util::resolve_out_dir(&args.out_dir);
    let variants_dir = out_dir.join("variants");
    util::ensure_dir(&variants_dir)?;
    let mut rec = RunRecorder::new(
        "roadmap",
        json!({
            "flags": &args,
            "resolved": {
                "itrs": itrs, "ps": ps, "layers": layers,
                "eval_seed": eval_seed, "eval_count": args.eval_count,
                "eval_covers": EVAL_COVER_SPREAD,
            },
        }),
        Some(args.seed),
    )?;

    let base = load_checkpoint(&args.checkpoint)
        .map_err(|e| user_err(format!("--checkpoint: {e}")))?;
    let train_data = build_dataset(args.seed, args.count, args.size, &covers)
        .map_err(|e| user_err(format!("--count/--covers: {e}")))?;
    let eval_data = build_dataset(eval_seed, args.eval_count, args.size, &EVAL_COVER_SPREAD)
        .map_err(|e| user_err(format!("--eval-count: {e}")))?;

    let cfg = RoadmapBuildConfig {
        itrs,
        ps,
        prunable_layers: layers,
        fine_tune_epochs_per_iter: args.ft_epochs,
        fine_tune: TrainConfig {
            epochs: args.ft_epochs,
            learning_rate: args.lr,
            batch_size: args.batch,
            shuffle_seed: args.seed,
        },
        energy: EnergyConstants::default(),
    };
    let mut variants = build_roadmap(&base, &cfg, &train_data, &eval_data).map_err(|e| match e {
        Error::InvalidArgument(_) | Error::NotPrunableLayer(_) => {
            user_err(format!("--itrs/--ps/--layers: {e}"))
        }
        other => other.into(),
    })?;

    for built in &mut variants {
        let rel = format!("variants/{}.ckpt", built.entry.variant_id);
        let path = out_dir.join(&rel);
        save_checkpoint(&built.model, &path)
            .map_err(|e| user_err(format!("cannot write {}: {e}", path.display())))?;
        built.entry.checkpoint_path = Some(rel);
        rec.record(&path);
    }

    if args.measure_latency {
        // Timings must not overlap, so this loop stays serial even though
        // the grid itself was built in parallel.
        let probe = generate_field(args.seed ^ 0x6c61_7465, args.size, 0.5)?;
        for built in &mut variants {
            let ms = measure_latency(&built.model, &probe.pixels, args.latency_reps)
                .map_err(|e| user_err(format!("--latency-reps: {e}")))?;
            built.entry.profile.latency_ms = Some(ms);
        }
    }

    let entries: Vec<_> = variants.iter().map(|b| b.entry.clone()).collect();
    let json_path = out_dir.join("roadmap.json");
    util::write_text(&json_path, &format!("{}\n", roadmap_to_json(&entries)?))?;
    rec.record(&json_path);
    let csv_path = out_dir.join("roadmap.csv");
    util::write_text(&csv_path, &roadmap_csv(&entries))?;
    rec.record(&csv_path);

    let records: BTreeMap<&str, &PruneRecord> = variants
        .iter()
        .filter_map(|b| b.record.as_ref().map(|r| (b.entry.variant_id.as_str(), r)))
        .collect();
    let records_path = out_dir.join("surgery_records.json");
    util::write_text(
        &records_path,
        &format!("{}\n", serde_json::to_string_pretty(&records)?),
    )?;
    rec.record(&records_path);

    println!("variant        itr  p      accuracy  MFLOPs    size-MiB");
    for e in &entries {
        println!(
            "{:<13}  {:<3}  {:<5}  {:<8.4}  {:<8.3}  {:.4}",
            e.variant_id,
            e.itr,
            cropchain_core::roadmap::format_ratio(e.p),
            e.accuracy,
            e.profile.flops as f64 / 1e6,
            e.profile.size_mb,
        );
    }
    println!("{} entries -> {}", entries.len(), json_path.display());

    rec.finish(&out_dir)?;
    Ok(())
}
