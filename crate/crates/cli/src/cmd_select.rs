//! `select`: pick the most accurate roadmap variant that fits a budget.
//!
//! Prints the chosen variant id on the first line and its full entry as
//! JSON below. An infeasible budget exits 1 with a NoFeasibleModel
//! message; a budget with no bounds at all is rejected.

use std::path::PathBuf;

use clap::Args;
use serde::Serialize;

use cropchain_core::roadmap::{roadmap_from_json, select_model, Budget};
use cropchain_core::Error;

use crate::util::{self, user_err};

#[derive(Debug, Args, Serialize)]
pub struct SelectArgs {
    /// Roadmap JSON produced by `roadmap`
    #[arg(long)]
    pub roadmap: PathBuf,
    /// Upper bound on FLOPs per inference
    #[arg(long)]
    pub max_flops: Option<u64>,
    /// Upper bound on parameter memory in MiB
    #[arg(long)]
    pub max_size_mb: Option<f64>,
    /// Upper bound on per-inference energy in joules
    #[arg(long)]
    pub max_energy_j: Option<f64>,
    /// Upper bound on measured median latency in milliseconds
    #[arg(long)]
    pub max_latency_ms: Option<f64>,
    /// Lower bound on held-out accuracy
    #[arg(long)]
    pub min_accuracy: Option<f64>,
}

pub fn run(args: SelectArgs) -> anyhow::Result<()> {
    let text = util::read_text("--roadmap", &args.roadmap)?;
    let entries = roadmap_from_json(&text)
        .map_err(|e| user_err(format!("--roadmap: {} is not a roadmap: {e}", args.roadmap.display())))?;
    let budget = Budget {
        max_flops: args.max_flops,
        max_size_mb: args.max_size_mb,
        max_energy_j: args.max_energy_j,
        max_latency_ms: args.max_latency_ms,
        min_accuracy: args.min_accuracy,
    };
    match select_model(&entries, &budget) {
        Ok(entry) => {
            println!("{}", entry.variant_id);
            println!("{}", serde_json::to_string_pretty(entry)?);
            Ok(())
        }
        Err(Error::NoFeasibleModel) => Err(user_err(format!(
            "NoFeasibleModel: none of the {} roadmap entries satisfies the requested budget",
            entries.len()
        ))),
        Err(Error::InvalidArgument(_)) => Err(user_err(
            "set at least one of --max-flops, --max-size-mb, --max-energy-j, --max-latency-ms, --min-accuracy",
        )),
        Err(e) => Err(e.into()),
    }
}
