//! Variant roadmaps: a grid of pruned models with accuracy and resource
//! profiles, Pareto analysis, and budget-driven selection.
//!
//! A roadmap is built once per base model from an `(iterations, ratio)`
//! grid — one pruning chain per ratio, snapshotting the requested
//! iterations — plus the unpruned base (`itr = 0`). Chains are independent,
//! so they run in parallel; each chain's fine-tuning is seeded from its
//! ratio index, which keeps results identical regardless of scheduling.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost_model::{self, EnergyConstants, ResourceProfile};
use crate::error::{Error, Result};
use crate::nn::{Dataset, ModelGraph, TrainConfig};
use crate::pruning::{iterative_prune, PruneConfig, PruneData, PruneRecord};
use crate::segmentation::dataset_pixel_accuracy;

/// One roadmap row: a model variant with its grid position, held-out
/// accuracy, and resource profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadmapEntry {
    /// Stable identifier; `"base"` or `"itr{i}_p{ratio}"`.
    pub variant_id: String,
    /// Pruning iterations applied; 0 marks the base model.
    pub itr: u32,
    /// Per-iteration prune ratio; 0.0 for the base model.
    pub p: f64,
    /// Mean pixel accuracy on the held-out set.
    pub accuracy: f64,
    pub profile: ResourceProfile,
    /// Path of the variant's checkpoint, when one was written.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_path: Option<String>,
}

/// A resource budget; at least one bound must be set. Unset bounds do not
/// constrain.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Budget {
    pub max_flops: Option<u64>,
    pub max_size_mb: Option<f64>,
    pub max_energy_j: Option<f64>,
    pub max_latency_ms: Option<f64>,
    pub min_accuracy: Option<f64>,
}

impl Budget {
    pub fn validate(&self) -> Result<()> {
        if self.max_flops.is_none()
            && self.max_size_mb.is_none()
            && self.max_energy_j.is_none()
            && self.max_latency_ms.is_none()
            && self.min_accuracy.is_none()
        {
            return Err(Error::InvalidArgument(
                "budget must set at least one bound".into(),
            ));
        }
        Ok(())
    }

    /// True when `entry` satisfies every set bound. A latency bound can
    /// only be satisfied by an entry that has measured latency.
    pub fn satisfied_by(&self, entry: &RoadmapEntry) -> bool {
        if let Some(b) = self.max_flops {
            if entry.profile.flops > b {
                return false;
            }
        }
        if let Some(b) = self.max_size_mb {
            if entry.profile.size_mb > b {
                return false;
            }
        }
        if let Some(b) = self.max_energy_j {
            if entry.profile.energy_j > b {
                return false;
            }
        }
        if let Some(b) = self.max_latency_ms {
            match entry.profile.latency_ms {
                Some(l) if l <= b => {}
                _ => return false,
            }
        }
        if let Some(b) = self.min_accuracy {
            if entry.accuracy < b {
                return false;
            }
        }
        true
    }
}

/// True when `a` dominates `b`: at least as accurate, at most as many
/// FLOPs, at most as large, and strictly better on at least one of the
/// three.
pub fn dominates(a: &RoadmapEntry, b: &RoadmapEntry) -> bool {
    let no_worse =
        a.accuracy >= b.accuracy && a.profile.flops <= b.profile.flops && a.profile.size_mb <= b.profile.size_mb;
    let strictly_better = a.accuracy > b.accuracy
        || a.profile.flops < b.profile.flops
        || a.profile.size_mb < b.profile.size_mb;
    no_worse && strictly_better
}

/// The non-dominated subset of `entries` under [`dominates`], sorted by
/// ascending FLOPs (stable: ties keep input order).
pub fn pareto_frontier<'a>(entries: &'a [RoadmapEntry]) -> Vec<&'a RoadmapEntry> {
    let mut frontier: Vec<&RoadmapEntry> = entries
        .iter()
        .filter(|b| !entries.iter().any(|a| dominates(a, b)))
        .collect();
    frontier.sort_by_key(|e| e.profile.flops);
    frontier
}

/// Picks the most accurate entry satisfying `budget`. Ties break toward
/// fewer FLOPs, then smaller size, then lexicographically lower
/// `variant_id`, so selection is total and deterministic.
pub fn select_model<'a>(entries: &'a [RoadmapEntry], budget: &Budget) -> Result<&'a RoadmapEntry> {
    budget.validate()?;
    entries
        .iter()
        .filter(|e| budget.satisfied_by(e))
        .min_by(|a, b| {
            b.accuracy
                .partial_cmp(&a.accuracy)
                .unwrap()
                .then(a.profile.flops.cmp(&b.profile.flops))
                .then(a.profile.size_mb.partial_cmp(&b.profile.size_mb).unwrap())
                .then(a.variant_id.cmp(&b.variant_id))
        })
        .ok_or(Error::NoFeasibleModel)
}

/// Formats a ratio for variant ids and CSV: up to 9 decimals, trailing
/// zeros trimmed (`0.3`, `0.25`, `0.125`).
pub fn format_ratio(p: f64) -> String {
    let s = format!("{p:.9}");
    let s = s.trim_end_matches('0');
    let s = s.trim_end_matches('.');
    if s.is_empty() { "0".to_string() } else { s.to_string() }
}

/// Grid and fine-tuning parameters of a roadmap build.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoadmapBuildConfig {
    /// Pruning iteration counts to snapshot, each >= 1.
    pub itrs: Vec<u32>,
    /// Per-iteration prune ratios, each in (0, 1).
    pub ps: Vec<f64>,
    /// Layers eligible for pruning.
    pub prunable_layers: BTreeSet<usize>,
    /// Fine-tune epochs after each pruning iteration.
    pub fine_tune_epochs_per_iter: usize,
    /// Fine-tune hyperparameters (epochs overridden per iteration).
    pub fine_tune: TrainConfig,
    pub energy: EnergyConstants,
}

/// One built variant: roadmap row, the model itself, and (for pruned
/// variants) the last iteration's surgery record.
#[derive(Debug, Clone)]
pub struct BuiltVariant {
    pub entry: RoadmapEntry,
    pub model: ModelGraph,
    pub record: Option<PruneRecord>,
}

/// Builds the full `|itrs| × |ps| + 1` roadmap from a trained base model.
///
/// Entries are ordered base first, then ascending `(itr, p)`. Latency is
/// left unmeasured; callers wanting it should time each returned model
/// serially (measurements must not run concurrently).
pub fn build_roadmap(
    base: &ModelGraph,
    cfg: &RoadmapBuildConfig,
    train_data: &Dataset,
    eval_data: &Dataset,
) -> Result<Vec<BuiltVariant>> {
    base.validate()?;
    if cfg.itrs.is_empty() {
        return Err(Error::InvalidArgument("no iteration counts requested".into()));
    }
    if cfg.itrs.iter().any(|&i| i == 0) {
        return Err(Error::InvalidArgument(
            "iteration counts must be >= 1 (the base entry is added automatically)".into(),
        ));
    }
    if cfg.ps.is_empty() {
        return Err(Error::InvalidArgument("no prune ratios requested".into()));
    }
    for &p in &cfg.ps {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "prune ratios must lie in (0, 1), got {p}"
            )));
        }
    }
    let mut itrs: Vec<u32> = cfg.itrs.clone();
    itrs.sort_unstable();
    itrs.dedup();
    let mut ps = cfg.ps.clone();
    ps.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ps.dedup();
    let max_itr = *itrs.last().expect("non-empty");
    let wanted: BTreeSet<u32> = itrs.iter().copied().collect();

    let base_entry = RoadmapEntry {
        variant_id: "base".to_string(),
        itr: 0,
        p: 0.0,
        accuracy: dataset_pixel_accuracy(base, eval_data)?,
        profile: cost_model::profile_model(base, &cfg.energy)?,
        checkpoint_path: None,
    };

    // One pruning chain per ratio, independent and internally seeded →
    // safe to parallelize without losing determinism.
    let chains: Vec<Result<Vec<BuiltVariant>>> = ps
        .par_iter()
        .enumerate()
        .map(|(pi, &p)| {
            let prune_cfg = PruneConfig {
                ratio: p,
                iterations: max_itr,
                fine_tune_epochs_per_iter: cfg.fine_tune_epochs_per_iter,
                prunable_layers: cfg.prunable_layers.clone(),
            };
            let data = PruneData {
                train: train_data,
                eval: eval_data,
                fine_tune: TrainConfig {
                    shuffle_seed: cfg.fine_tune.shuffle_seed.wrapping_add(1000 * (pi as u64 + 1)),
                    ..cfg.fine_tune.clone()
                },
                energy: cfg.energy.clone(),
            };
            let stages = iterative_prune(base, &prune_cfg, &data)?;
            Ok(stages
                .into_iter()
                .filter(|s| wanted.contains(&s.iteration))
                .map(|s| BuiltVariant {
                    entry: RoadmapEntry {
                        variant_id: format!("itr{}_p{}", s.iteration, format_ratio(p)),
                        itr: s.iteration,
                        p,
                        accuracy: s.record.accuracy,
                        profile: s.record.profile.clone(),
                        checkpoint_path: None,
                    },
                    model: s.model,
                    record: Some(s.record),
                })
                .collect())
        })
        .collect();

    let mut variants = vec![BuiltVariant { entry: base_entry, model: base.clone(), record: None }];
    // Regroup: ascending itr, then ascending p, matching the CSV layout.
    let mut pruned: Vec<BuiltVariant> = Vec::new();
    for chain in chains {
        pruned.extend(chain?);
    }
    pruned.sort_by(|a, b| {
        a.entry
            .itr
            .cmp(&b.entry.itr)
            .then(a.entry.p.partial_cmp(&b.entry.p).unwrap())
    });
    variants.extend(pruned);
    Ok(variants)
}

/// Writes the roadmap CSV: header then one row per entry in given order.
/// All fields derive from seeded computation except `latency_ms`, which is
/// blank unless measured — so default builds are byte-stable.
pub fn roadmap_csv(entries: &[RoadmapEntry]) -> String {
    let mut out = String::from("itr,p,accuracy,flops,size_mb,energy_j,latency_ms\n");
    for e in entries {
        let latency = e
            .profile
            .latency_ms
            .map(|l| l.to_string())
            .unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            e.itr,
            format_ratio(e.p),
            e.accuracy,
            e.profile.flops,
            e.profile.size_mb,
            e.profile.energy_j,
            latency
        ));
    }
    out
}

/// Parses a roadmap JSON document (an array of entries).
pub fn roadmap_from_json(json: &str) -> Result<Vec<RoadmapEntry>> {
    Ok(serde_json::from_str(json)?)
}

/// Serializes roadmap entries as pretty JSON.
pub fn roadmap_to_json(entries: &[RoadmapEntry]) -> Result<String> {
    Ok(serde_json::to_string_pretty(entries)?)
}
