//! `simulate`: fly a UAV survey mission against a ledger.
//!
//! Reads a mission configuration JSON, optionally substituting its
//! roadmap with one produced by `roadmap`, surveys each field with the
//! currently selected model variant, appends biomass reports to the
//! chain, and writes the mission log as JSON plus a step summary CSV.

use std::path::PathBuf;

use clap::Args;
use serde::Serialize;

use cropchain_core::ledger::Ledger;
use cropchain_core::mission::{run_mission, CheckpointSource, MissionConfig};
use cropchain_core::roadmap::roadmap_from_json;
use cropchain_core::Error;

use crate::cmd_ledger::load_contract_config;
use crate::manifest::RunRecorder;
use crate::util::{self, user_err};

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    /// Mission configuration JSON
    #[arg(long)]
    pub config: PathBuf,
    /// Roadmap JSON whose entries replace the config's roadmap
    #[arg(long)]
    pub roadmap: Option<PathBuf>,
    /// Directory checkpoint paths resolve against (default: the roadmap
    /// file's directory, else the config file's)
    #[arg(long)]
    pub model_dir: Option<PathBuf>,
    /// Ledger chain file; every surveyed field must be registered in it
    #[arg(long)]
    pub chain: PathBuf,
    /// Where to save the extended chain (default: back to --chain)
    #[arg(long)]
    pub chain_out: Option<PathBuf>,
    /// Contract configuration JSON (default: built-in demo crops)
    #[arg(long)]
    pub contract_config: Option<PathBuf>,
    /// Output directory (re-rooted under $CROPCHAIN_OUT_DIR when relative)
    #[arg(long, default_value = "mission-run")]
    pub out_dir: PathBuf,
}

pub fn run(args: SimulateArgs) -> anyhow::Result<()> {
    let text = util::read_text("--config", &args.config)?;
    let mut config: MissionConfig = serde_json::from_str(&text)
        .map_err(|e| user_err(format!("--config: {} is not a mission config: {e}", args.config.display())))?;
    if let Some(roadmap_path) = &args.roadmap {
        let roadmap_text = util::read_text("--roadmap", roadmap_path)?;
        config.roadmap = roadmap_from_json(&roadmap_text)
            .map_err(|e| user_err(format!("--roadmap: {} is not a roadmap: {e}", roadmap_path.display())))?;
    }
    let model_dir = args.model_dir.clone().unwrap_or_else(|| {
        let anchor = args.roadmap.as_ref().unwrap_or(&args.config);
        anchor.parent().map_or_else(|| PathBuf::from("."), PathBuf::from)
    });
    let contract_config = load_contract_config(args.contract_config.as_deref())?;
    let mut ledger = Ledger::load_jsonl(&args.chain, contract_config)
        .map_err(|e| user_err(format!("--chain: {e}")))?;

    let out_dir = util::resolve_out_dir(&args.out_dir);
    util::ensure_dir(&out_dir)?;
    let mut rec = RunRecorder::new("simulate", &args, Some(config.seed))?;

    let source = CheckpointSource { base_dir: model_dir };
    let log = run_mission(&config, &source, &mut ledger).map_err(|e| match e {
        Error::InvalidArgument(_) => user_err(format!("--config: {e}")),
        other => other.into(),
    })?;

    let log_path = out_dir.join("mission_log.json");
    util::write_text(&log_path, &format!("{}\n", serde_json::to_string_pretty(&log)?))?;
    rec.record(&log_path);

    let mut csv = String::from("step,variant,energy,battery\n");
    for step in &log.steps {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            step.step, step.variant_id, step.energy_spent_j, step.battery_after_j
        ));
    }
    let csv_path = out_dir.join("mission_summary.csv");
    util::write_text(&csv_path, &csv)?;
    rec.record(&csv_path);

    let chain_out = args.chain_out.as_ref().unwrap_or(&args.chain);
    ledger
        .save_jsonl(chain_out)
        .map_err(|e| user_err(format!("cannot write {}: {e}", chain_out.display())))?;
    rec.record(chain_out);

    println!(
        "surveyed {} of {} fields; battery {:.3} -> {:.3} J",
        log.steps.len(),
        config.fields_to_survey.len(),
        log.initial_battery_j,
        log.remaining_battery_j
    );
    for swap in &log.swaps {
        println!(
            "swap at step {}: {} -> {} (per-step budget {:.3e} J)",
            swap.step, swap.from_variant, swap.to_variant, swap.per_step_energy_budget_j
        );
    }
    if let Some(reason) = &log.aborted {
        println!("aborted: {reason}");
    }
    println!("mission log: {}", log_path.display());

    rec.finish(&out_dir)?;
    Ok(())
}
