//! The two audit contracts.
//!
//! Both are pure functions of the current state and one report; the ledger
//! runs them while applying report transactions and queues an
//! [`FlagRecord`](super::FlagRecord) for every anomaly verdict.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::segmentation::BiomassReading;

use super::{ContractConfig, LedgerState, Participant, EPSILON};

/// Which contract produced a verdict or flag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ContractId {
    BiomassAudit,
    PlantAudit,
}

impl std::fmt::Display for ContractId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ContractId::BiomassAudit => "biomass_audit",
            ContractId::PlantAudit => "plant_audit",
        })
    }
}

/// A contract outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Verdict {
    Ok,
    Anomaly { details: String },
}

impl Verdict {
    pub fn is_anomaly(&self) -> bool {
        matches!(self, Verdict::Anomaly { .. })
    }
}

/// Biomass-drop audit.
///
/// The first report for a field is the baseline and always passes. After
/// that, a drop (previous − current) beyond `biomass_tolerance` must be
/// explained by harvest trades: the field's sales within the last
/// `harvest_window` timestamps (inclusive) must cover
/// `drop · field_yield_estimate_t` tonnes, otherwise the crop left the
/// field off the books.
pub fn biomass_audit(
    state: &LedgerState,
    config: &ContractConfig,
    reading: &BiomassReading,
) -> Result<Verdict> {
    let farmer = state
        .participants
        .get(&reading.field_id)
        .map(|r| &r.participant)
        .ok_or_else(|| Error::UnknownField(reading.field_id.clone()))?;
    let Participant::Farmer { field_yield_estimate_t, .. } = farmer else {
        return Err(Error::UnknownField(format!(
            "{} is registered but not as a farmer",
            reading.field_id
        )));
    };

    let Some(previous) = state.last_biomass.get(&reading.field_id) else {
        return Ok(Verdict::Ok); // baseline observation
    };
    // Boundaries are inclusive with an epsilon guard so that cases sitting
    // exactly on a threshold do not flip on floating-point noise.
    let drop = previous.fraction - reading.biomass_fraction;
    if drop <= config.biomass_tolerance + EPSILON {
        return Ok(Verdict::Ok);
    }

    let window_start = reading.timestamp.saturating_sub(config.harvest_window);
    let covered: f64 = state
        .trades
        .iter()
        .filter(|t| {
            t.seller_id == reading.field_id
                && t.timestamp >= window_start
                && t.timestamp <= reading.timestamp
        })
        .map(|t| t.quantity_t)
        .sum();
    let expected_harvest = drop * field_yield_estimate_t;
    if covered + EPSILON >= expected_harvest {
        return Ok(Verdict::Ok);
    }
    Ok(Verdict::Anomaly {
        details: format!(
            "biomass fell from {:.4} to {:.4} (drop {:.4} ≈ {:.2} t) but trades in the \
             last {} timestamps cover only {:.2} t; {:.2} t unaccounted",
            previous.fraction,
            reading.biomass_fraction,
            drop,
            expected_harvest,
            config.harvest_window,
            covered,
            expected_harvest - covered
        ),
    })
}

/// Plant production audit.
///
/// Expected output is the sum over the plant's unconsumed input trades of
/// `yield_factor(crop) · quantity`. A reported output deviating from that
/// expectation by more than `output_tolerance` (relative, with an epsilon
/// guard for zero expectations) is an anomaly. The caller marks the inputs
/// consumed after the audit regardless of verdict.
pub fn plant_audit(
    state: &LedgerState,
    config: &ContractConfig,
    plant_id: &str,
    reported_quantity_t: f64,
) -> Result<Verdict> {
    match state.participants.get(plant_id).map(|r| &r.participant) {
        Some(Participant::ProcessingPlant { .. }) => {}
        _ => return Err(Error::UnknownPlant(plant_id.to_string())),
    }

    let mut expected = 0.0;
    for trade in state.trades.iter().filter(|t| t.buyer_id == plant_id && !t.consumed) {
        let crop = match state.participants.get(&trade.seller_id).map(|r| &r.participant) {
            Some(Participant::Farmer { crop_type, .. }) => crop_type,
            _ => {
                // Trades only enter state with a registered farmer seller.
                return Err(Error::UnknownField(trade.seller_id.clone()));
            }
        };
        let factor = config
            .yield_factors
            .get(crop)
            .ok_or_else(|| Error::UnknownYieldFactor(crop.clone()))?;
        expected += factor * trade.quantity_t;
    }

    let deviation = (reported_quantity_t - expected).abs() / expected.max(EPSILON);
    if deviation <= config.output_tolerance + EPSILON {
        Ok(Verdict::Ok)
    } else {
        Ok(Verdict::Anomaly {
            details: format!(
                "reported {reported_quantity_t:.2} t of output vs {expected:.2} t expected \
                 from unconsumed inputs (relative deviation {deviation:.3})"
            ),
        })
    }
}
