//! UAV survey-mission simulation.
//!
//! A mission visits fields in order; each step captures an image, runs the
//! active model variant, and appends the biomass reading to the ledger
//! (which runs the audit contract inline). Before each step the battery is
//! checked against what finishing the mission with the current variant
//! would cost, padded by a reserve fraction; if it falls short, a cheaper
//! variant is selected from the roadmap under a per-step energy budget.
//! If nothing fits, the mission aborts and returns to base.
//!
//! Energy bookkeeping uses a single running accumulator — battery-after
//! values are `initial − spent_so_far` — so re-summing the logged per-step
//! costs reproduces the remaining battery exactly, bit for bit.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ledger::{Ledger, Participant, Transaction, Verdict};
use crate::nn::{load_checkpoint, ModelGraph};
use crate::roadmap::{select_model, Budget, RoadmapEntry};
use crate::segmentation::{estimate_biomass, generate_field};

/// When to swap model variants mid-mission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SwapPolicy {
    /// Swap when remaining battery drops below the cost of finishing with
    /// the current variant inflated by `1 / (1 − reserve)`; the reserve
    /// fraction stays in hand for the flight home.
    ReserveFraction { reserve: f64 },
}

/// Mission parameters. `roadmap` carries the variants (the base entry with
/// `itr = 0` must be present — the mission starts on it).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MissionConfig {
    pub seed: u64,
    /// Fields to survey, in flight order; each must be registered on the
    /// ledger as a farmer id.
    pub fields_to_survey: Vec<String>,
    pub battery_j: f64,
    /// Fixed non-inference cost per capture (flight, camera, radio).
    pub per_capture_overhead_j: f64,
    pub swap_policy: SwapPolicy,
    pub roadmap: Vec<RoadmapEntry>,
    /// Optional latency ceiling applied to every variant selection.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_budget_ms: Option<f64>,
    /// Edge length of generated field images; must match the models'
    /// input size.
    pub field_size: usize,
}

/// Resolves roadmap entries to runnable models.
pub trait ModelSource {
    fn load_model(&self, entry: &RoadmapEntry) -> Result<ModelGraph>;
}

/// Loads models from the checkpoints referenced by roadmap entries,
/// resolving relative paths against a base directory.
pub struct CheckpointSource {
    pub base_dir: PathBuf,
}

impl ModelSource for CheckpointSource {
    fn load_model(&self, entry: &RoadmapEntry) -> Result<ModelGraph> {
        let rel = entry.checkpoint_path.as_ref().ok_or_else(|| {
            Error::InvalidArgument(format!(
                "roadmap entry {} has no checkpoint path",
                entry.variant_id
            ))
        })?;
        let path = Path::new(rel);
        let full = if path.is_absolute() { path.to_path_buf() } else { self.base_dir.join(path) };
        load_checkpoint(&full)
    }
}

/// Serves models from memory, keyed by variant id (used by tests and by
/// simulations run in the same process that built the roadmap).
#[derive(Default)]
pub struct InMemorySource {
    pub models: BTreeMap<String, ModelGraph>,
}

impl ModelSource for InMemorySource {
    fn load_model(&self, entry: &RoadmapEntry) -> Result<ModelGraph> {
        self.models
            .get(&entry.variant_id)
            .cloned()
            .ok_or_else(|| Error::InvalidArgument(format!("no model for {}", entry.variant_id)))
    }
}

/// One surveyed field in the log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionStep {
    /// 1-based step number; doubles as the report timestamp.
    pub step: usize,
    pub field_id: String,
    pub variant_id: String,
    pub energy_spent_j: f64,
    pub battery_after_j: f64,
    pub biomass_fraction: f64,
    /// `"ok"` / `"anomaly"` when the on-chain contract ran, `None` when
    /// the report could not be appended.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// One variant swap in the log. `per_step_energy_budget_j` is the budget
/// the new variant had to satisfy, so swap correctness is re-checkable
/// from the log plus the roadmap alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwapEvent {
    pub step: usize,
    pub from_variant: String,
    pub to_variant: String,
    pub per_step_energy_budget_j: f64,
}

/// Full mission record; serializes deterministically for a given config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionLog {
    pub initial_battery_j: f64,
    pub remaining_battery_j: f64,
    pub steps: Vec<MissionStep>,
    pub swaps: Vec<SwapEvent>,
    /// Why the mission ended early, if it did.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aborted: Option<String>,
}

/// Runs a mission. Configuration errors surface as `Err`; in-flight
/// failures (infeasible budget, model load failure, rejected report) are
/// recorded in the log instead.
pub fn run_mission(
    config: &MissionConfig,
    models: &dyn ModelSource,
    ledger: &mut Ledger,
) -> Result<MissionLog> {
    if config.fields_to_survey.is_empty() {
        return Err(Error::InvalidArgument("no fields to survey".into()));
    }
    if !config.battery_j.is_finite() || config.battery_j <= 0.0 {
        return Err(Error::InvalidArgument("battery must be finite and > 0".into()));
    }
    if !config.per_capture_overhead_j.is_finite() || config.per_capture_overhead_j < 0.0 {
        return Err(Error::InvalidArgument("capture overhead must be finite and >= 0".into()));
    }
    let SwapPolicy::ReserveFraction { reserve } = config.swap_policy;
    if !(0.0..1.0).contains(&reserve) {
        return Err(Error::InvalidArgument(format!(
            "reserve fraction must lie in [0, 1), got {reserve}"
        )));
    }
    let mut current = config
        .roadmap
        .iter()
        .find(|e| e.itr == 0)
        .ok_or_else(|| Error::InvalidArgument("roadmap has no base entry (itr = 0)".into()))?;

    let mut log = MissionLog {
        initial_battery_j: config.battery_j,
        remaining_battery_j: config.battery_j,
        steps: Vec::new(),
        swaps: Vec::new(),
        aborted: None,
    };
    let mut model_cache: BTreeMap<String, ModelGraph> = BTreeMap::new();
    let mut spent_total = 0.0f64;
    let total_steps = config.fields_to_survey.len();

    for (i, field_id) in config.fields_to_survey.iter().enumerate() {
        let step = i + 1;
        let steps_left = (total_steps - i) as f64;

        // Reserve check: can the current variant finish the mission while
        // leaving `reserve` of the remaining battery untouched?
        let remaining = config.battery_j - spent_total;
        let step_cost = current.profile.energy_j + config.per_capture_overhead_j;
        if remaining < steps_left * step_cost / (1.0 - reserve) {
            let per_step_budget =
                remaining * (1.0 - reserve) / steps_left - config.per_capture_overhead_j;
            let budget = Budget {
                max_energy_j: Some(per_step_budget),
                max_latency_ms: config.latency_budget_ms,
                ..Budget::default()
            };
            match select_model(&config.roadmap, &budget) {
                Ok(next) => {
                    if next.variant_id != current.variant_id {
                        log.swaps.push(SwapEvent {
                            step,
                            from_variant: current.variant_id.clone(),
                            to_variant: next.variant_id.clone(),
                            per_step_energy_budget_j: per_step_budget,
                        });
                        current = next;
                    }
                }
                Err(Error::NoFeasibleModel) => {
                    log.aborted = Some(format!(
                        "NoFeasibleModel at step {step}: no variant fits a per-step \
                         energy budget of {per_step_budget:.3e} J; returning to base"
                    ));
                    break;
                }
                Err(e) => return Err(e),
            }
        }

        let model = match model_cache.get(&current.variant_id) {
            Some(m) => m,
            None => {
                match models.load_model(current) {
                    Ok(m) => {
                        model_cache.insert(current.variant_id.clone(), m);
                    }
                    Err(e) => {
                        log.aborted = Some(format!(
                            "model {} failed to load at step {step}: {e}; returning to base",
                            current.variant_id
                        ));
                        break;
                    }
                }
                &model_cache[&current.variant_id]
            }
        };

        // Capture + infer. The image is seeded per (mission, field), so
        // replays regenerate identical observations.
        let field_seed = config.seed ^ fnv1a(field_id.as_bytes());
        let mut field_rng_cover = 0.25 + 0.5 * fraction_from_seed(field_seed);
        // Bound away from the exact extremes so readings stay informative.
        field_rng_cover = field_rng_cover.clamp(0.05, 0.95);
        let mut image = match generate_field(field_seed, config.field_size, field_rng_cover) {
            Ok(img) => img,
            Err(e) => return Err(e),
        };
        image.field_id = field_id.clone();

        let (lat, lon) = match ledger.state().participants.get(field_id).map(|r| &r.participant) {
            Some(Participant::Farmer { latitude, longitude, .. }) => (*latitude, *longitude),
            _ => (0.0, 0.0), // report still attempted; the ledger will reject it
        };
        let reading = estimate_biomass(model, &image, lat, lon, step as u64)?;

        // Spend energy for this capture with the (possibly swapped) variant.
        let cost = current.profile.energy_j + config.per_capture_overhead_j;
        spent_total += cost;
        let battery_after = config.battery_j - spent_total;
        log.remaining_battery_j = battery_after;

        let mut verdict = None;
        let mut note = None;
        let fraction = reading.biomass_fraction;
        match ledger.append_block(vec![Transaction::BiomassReport { reading }]) {
            Ok(receipt) => {
                verdict = receipt.verdicts.first().map(|v| match v.verdict {
                    Verdict::Ok => "ok".to_string(),
                    Verdict::Anomaly { .. } => "anomaly".to_string(),
                });
            }
            Err(e) => note = Some(format!("report rejected: {e}")),
        }

        log.steps.push(MissionStep {
            step,
            field_id: field_id.clone(),
            variant_id: current.variant_id.clone(),
            energy_spent_j: cost,
            battery_after_j: battery_after,
            biomass_fraction: fraction,
            verdict,
            note,
        });
    }

    Ok(log)
}

/// FNV-1a — a tiny stable hash for deriving per-field seeds.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Maps a seed to a deterministic fraction in [0, 1).
fn fraction_from_seed(seed: u64) -> f64 {
    // Splitmix-style scramble, then take the top 53 bits.
    let mut z = seed.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 53) as f64
}
