//! Seeded supply-chain scenario generation for contract soundness checks.
//!
//! The generator drives a ledger through a randomized but constraint-aware
//! event stream: a configurable number of compliant events (routine biomass
//! observations, covered harvest trade+report pairs, honest plant outputs)
//! with a known set of planted violations mixed in at seeded positions.
//! Compliant events are constructed to stay strictly inside contract
//! tolerances and violations strictly outside, so the expected flag set is
//! known exactly: the contracts must flag all planted violations and
//! nothing else.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::segmentation::BiomassReading;

use super::{ContractConfig, ContractId, FlagRecord, Ledger, Participant, Transaction};

/// Scenario shape. Violation counts are exact: the generated stream plants
/// exactly `biomass_violations + output_violations` anomalies.
#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub farmers: usize,
    pub plants: usize,
    /// Number of compliant events (registrations not counted).
    pub compliant_events: usize,
    pub biomass_violations: usize,
    pub output_violations: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            seed: 2024,
            farmers: 12,
            plants: 4,
            compliant_events: 200,
            biomass_violations: 5,
            output_violations: 3,
        }
    }
}

/// A violation the generator planted, keyed like the flag it must produce.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct PlantedViolation {
    pub contract_id_name: String,
    pub subject_id: String,
    pub timestamp: u64,
}

/// The generated ledger plus ground truth and observed flags.
#[derive(Debug)]
pub struct ScenarioOutcome {
    pub ledger: Ledger,
    pub planted: Vec<PlantedViolation>,
    /// Flags the contracts actually raised, drained from the queue.
    pub flags: Vec<FlagRecord>,
}

const FIELD_YIELD_T: f64 = 120.0;
const INITIAL_COVER: f64 = 0.75;
/// Harvest pairs drop cover by this much — above tolerance, so the trade
/// coverage branch is what clears them.
const HARVEST_DROP: f64 = 0.15;
const HARVEST_QTY_T: f64 = 20.0;
/// Planted biomass violations drop cover by this much with no trade.
const VIOLATION_DROP: f64 = 0.25;

/// Runs the scenario and returns the resulting ledger, the planted
/// violations, and the flags the contracts raised.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioOutcome> {
    if cfg.farmers < 4 || cfg.plants == 0 {
        return Err(Error::InvalidArgument(
            "scenario needs at least 4 farmers and 1 plant".into(),
        ));
    }
    if cfg.compliant_events < cfg.farmers {
        return Err(Error::InvalidArgument(
            "need at least one compliant event per farmer (the baseline reports)".into(),
        ));
    }
    // Violation farmers never trade, so an unexplained biomass drop can
    // never be accidentally covered. Two violations max per farmer keeps
    // cover fractions non-negative.
    let violation_farmer_count = (cfg.farmers / 3).max(1);
    if cfg.biomass_violations > 2 * violation_farmer_count {
        return Err(Error::InvalidArgument(format!(
            "at most {} biomass violations fit this farmer count",
            2 * violation_farmer_count
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let crops = ["sugarcane", "wheat", "maize"];
    let mut contract_cfg = ContractConfig::default();
    for (i, crop) in crops.iter().enumerate() {
        contract_cfg
            .yield_factors
            .insert(crop.to_string(), [0.10, 0.80, 0.35][i]);
    }
    let mut ledger = Ledger::new(contract_cfg.clone())?;

    let farmer_ids: Vec<String> = (0..cfg.farmers).map(|i| format!("farm-{i:02}")).collect();
    let plant_ids: Vec<String> = (0..cfg.plants).map(|i| format!("plant-{i:02}")).collect();
    let (violators, traders) = farmer_ids.split_at(violation_farmer_count);

    // Block 0: all registrations.
    let mut registrations: Vec<Transaction> = farmer_ids
        .iter()
        .enumerate()
        .map(|(i, id)| Transaction::Register {
            participant: Participant::Farmer {
                unique_id: id.clone(),
                crop_type: crops[i % crops.len()].to_string(),
                latitude: 50.0 + i as f64 * 0.01,
                longitude: 8.0 + i as f64 * 0.01,
                field_yield_estimate_t: FIELD_YIELD_T,
            },
            timestamp: 0,
        })
        .collect();
    registrations.extend(plant_ids.iter().map(|id| Transaction::Register {
        participant: Participant::ProcessingPlant {
            unique_id: id.clone(),
            product_type: "processed-goods".to_string(),
        },
        timestamp: 0,
    }));
    ledger.append_block(registrations)?;

    // Generator-side mirrors of contract state.
    let mut cover: std::collections::BTreeMap<String, f64> = std::collections::BTreeMap::new();
    let mut plant_inputs: std::collections::BTreeMap<String, f64> = plant_ids
        .iter()
        .map(|id| (id.clone(), 0.0))
        .collect();

    let mut ts: u64 = 0;
    let mut compliant_left = cfg.compliant_events;
    let mut biomass_left = cfg.biomass_violations;
    let mut output_left = cfg.output_violations;
    let mut planted = Vec::new();

    let report = |ledger: &mut Ledger, ts: u64, field: &str, fraction: f64| -> Result<()> {
        ledger.append_block(vec![Transaction::BiomassReport {
            reading: BiomassReading {
                field_id: field.to_string(),
                biomass_fraction: fraction,
                latitude: 50.0,
                longitude: 8.0,
                timestamp: ts,
            },
        }])?;
        Ok(())
    };

    // Baselines first: every farmer's opening observation.
    for id in &farmer_ids {
        ts += 1;
        report(&mut ledger, ts, id, INITIAL_COVER)?;
        cover.insert(id.clone(), INITIAL_COVER);
        compliant_left -= 1;
    }

    while compliant_left > 0 || biomass_left > 0 || output_left > 0 {
        // Weighted draw over whatever event kinds are still owed.
        let total_left = compliant_left + biomass_left + output_left;
        let pick = rng.gen_range(0..total_left);
        if pick < biomass_left {
            // Planted biomass violation: a never-trading farmer's cover
            // drops far beyond tolerance with no covering trade possible.
            // Only farmers with enough cover left are eligible, so the
            // drop always exceeds tolerance (capacity was checked above).
            let eligible: Vec<&String> = violators
                .iter()
                .filter(|f| cover[f.as_str()] > VIOLATION_DROP)
                .collect();
            let f = eligible[rng.gen_range(0..eligible.len())].clone();
            let f = &f;
            let cur = cover[f];
            ts += 1;
            let next = (cur - VIOLATION_DROP).max(0.0);
            report(&mut ledger, ts, f, next)?;
            cover.insert(f.clone(), next);
            planted.push(PlantedViolation {
                contract_id_name: ContractId::BiomassAudit.to_string(),
                subject_id: f.clone(),
                timestamp: ts,
            });
            biomass_left -= 1;
        } else if pick < biomass_left + output_left {
            // Planted output violation: report 1.5× the expected output
            // (or a positive amount with no inputs at all).
            let p = &plant_ids[rng.gen_range(0..plant_ids.len())];
            let expected = plant_inputs[p];
            let reported = if expected > 0.0 { expected * 1.5 } else { 5.0 };
            ts += 1;
            ledger.append_block(vec![Transaction::PlantOutput {
                plant_id: p.clone(),
                product_id: "processed-goods".to_string(),
                quantity_t: reported,
                timestamp: ts,
            }])?;
            plant_inputs.insert(p.clone(), 0.0);
            planted.push(PlantedViolation {
                contract_id_name: ContractId::PlantAudit.to_string(),
                subject_id: p.clone(),
                timestamp: ts,
            });
            output_left -= 1;
        } else {
            // A compliant event.
            let roll = rng.gen_range(0..10);
            let trader = &traders[rng.gen_range(0..traders.len())];
            if roll >= 6 && compliant_left >= 2 && cover[trader] >= VIOLATION_DROP {
                // Covered harvest: sell produce, then report the matching
                // biomass drop one timestamp later (inside the window).
                let plant = &plant_ids[rng.gen_range(0..plant_ids.len())];
                ts += 1;
                ledger.append_block(vec![Transaction::Trade {
                    seller_id: trader.clone(),
                    buyer_id: plant.clone(),
                    quantity_t: HARVEST_QTY_T,
                    product_id: format!("lot-{ts}"),
                    timestamp: ts,
                }])?;
                let crop_idx = farmer_ids.iter().position(|f| f == trader).unwrap() % crops.len();
                let factor = [0.10, 0.80, 0.35][crop_idx];
                *plant_inputs.get_mut(plant).unwrap() += factor * HARVEST_QTY_T;
                ts += 1;
                let next = cover[trader] - HARVEST_DROP;
                report(&mut ledger, ts, trader, next)?;
                cover.insert(trader.clone(), next);
                compliant_left -= 2;
            } else if roll >= 4 {
                // Honest plant output: within tolerance of expectation.
                let p = &plant_ids[rng.gen_range(0..plant_ids.len())];
                let expected = plant_inputs[p];
                let reported = expected * (1.0 + rng.gen_range(-0.08..0.08));
                ts += 1;
                ledger.append_block(vec![Transaction::PlantOutput {
                    plant_id: p.clone(),
                    product_id: "processed-goods".to_string(),
                    quantity_t: reported,
                    timestamp: ts,
                }])?;
                plant_inputs.insert(p.clone(), 0.0);
                compliant_left -= 1;
            } else {
                // Routine observation: drift well inside tolerance, with a
                // slight growth bias so traded-down fields recover.
                let cur = cover[trader];
                let next = (cur + rng.gen_range(-0.03..0.05)).clamp(0.05, 0.95);
                ts += 1;
                report(&mut ledger, ts, trader, next)?;
                cover.insert(trader.clone(), next);
                compliant_left -= 1;
            }
        }
    }

    let flags = ledger.take_pending_flags();
    Ok(ScenarioOutcome { ledger, planted, flags })
}
