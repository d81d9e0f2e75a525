//! A proof-of-authority supply-chain ledger: an append-only hash chain of
//! transaction blocks plus replayable world state and two audit contracts.
//!
//! Hashes are SHA-256 over a canonical length-prefixed binary encoding of
//! the typed block content (not over JSON), so any change to any field of
//! any persisted transaction breaks verification. Consensus is out of
//! scope: one authority appends blocks.
//!
//! State (registered participants, latest biomass point per field, trade
//! history with consumption marks) is a pure fold over the blocks —
//! reloading a ledger file replays it and lands on the exact state the
//! writer held.

pub mod contracts;
pub mod scenario;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::segmentation::BiomassReading;

pub use contracts::{ContractId, Verdict};

/// Division guard for relative deviations when the expected value is ~0.
pub const EPSILON: f64 = 1e-9;

/// A supply-chain actor. The enum variant fixes the role; `unique_id` is
/// the on-chain name (for farmers it doubles as the field id).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Participant {
    Farmer {
        unique_id: String,
        crop_type: String,
        latitude: f64,
        longitude: f64,
        /// Expected harvest mass (tonnes) when the whole field is at full
        /// biomass; scales biomass-drop fractions into tonnes.
        field_yield_estimate_t: f64,
    },
    ProcessingPlant {
        unique_id: String,
        product_type: String,
    },
}

impl Participant {
    pub fn unique_id(&self) -> &str {
        match self {
            Participant::Farmer { unique_id, .. } => unique_id,
            Participant::ProcessingPlant { unique_id, .. } => unique_id,
        }
    }
}

/// An anomaly notice raised by a contract, either pending (queued for the
/// next audit block) or materialized as an on-chain transaction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlagRecord {
    pub contract_id: ContractId,
    pub subject_id: String,
    pub details: String,
    pub timestamp: u64,
}

/// The transaction vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Transaction {
    /// Onboards a participant; its chain address derives from this payload.
    Register { participant: Participant, timestamp: u64 },
    /// A farmer sells `quantity_t` tonnes of produce to a plant.
    Trade {
        seller_id: String,
        buyer_id: String,
        quantity_t: f64,
        product_id: String,
        timestamp: u64,
    },
    /// A UAV-estimated biomass cover observation for one field.
    BiomassReport { reading: BiomassReading },
    /// A plant reports produced output mass.
    PlantOutput {
        plant_id: String,
        product_id: String,
        quantity_t: f64,
        timestamp: u64,
    },
    /// A contract verdict materialized on-chain by an audit run.
    AnomalyFlag { flag: FlagRecord },
}

/// One block of the chain. `prev_hash`/`block_hash` are lowercase hex of
/// 32-byte SHA-256 digests; the genesis block's `prev_hash` is all zeros.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub index: u64,
    pub prev_hash: String,
    pub transactions: Vec<Transaction>,
    pub block_hash: String,
}

/// Contract tuning. `yield_factors` maps crop type → tonnes of product per
/// tonne of input produce.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractConfig {
    /// Biomass drop (fraction of full cover) tolerated without explanation.
    pub biomass_tolerance: f64,
    /// Relative deviation of reported vs expected plant output tolerated.
    pub output_tolerance: f64,
    /// How many timestamps before a biomass report a covering harvest
    /// trade may sit.
    pub harvest_window: u64,
    pub yield_factors: BTreeMap<String, f64>,
}

impl Default for ContractConfig {
    fn default() -> Self {
        ContractConfig {
            biomass_tolerance: 0.10,
            output_tolerance: 0.15,
            harvest_window: 3,
            yield_factors: BTreeMap::new(),
        }
    }
}

impl ContractConfig {
    /// Defaults plus yield factors for a few demo crops.
    pub fn with_demo_crops() -> Self {
        let mut cfg = ContractConfig::default();
        for (crop, factor) in [("sugarcane", 0.10), ("wheat", 0.80), ("maize", 0.35)] {
            cfg.yield_factors.insert(crop.to_string(), factor);
        }
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("biomass_tolerance", self.biomass_tolerance),
            ("output_tolerance", self.output_tolerance),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be finite and > 0, got {v}"
                )));
            }
        }
        for (crop, f) in &self.yield_factors {
            if !f.is_finite() || *f <= 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "yield factor for {crop} must be finite and > 0, got {f}"
                )));
            }
        }
        Ok(())
    }
}

/// A registered participant with its derived chain address.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegisteredParticipant {
    pub participant: Participant,
    /// Hex of the first 20 bytes of the registration payload's SHA-256.
    pub chain_address: String,
}

/// Latest accepted biomass observation of a field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiomassPoint {
    pub fraction: f64,
    pub timestamp: u64,
}

/// A recorded trade; `consumed` flips once a plant-output audit uses it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeRecord {
    pub seller_id: String,
    pub buyer_id: String,
    pub quantity_t: f64,
    pub product_id: String,
    pub timestamp: u64,
    pub consumed: bool,
}

/// World state folded from the chain.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LedgerState {
    pub participants: BTreeMap<String, RegisteredParticipant>,
    pub last_biomass: BTreeMap<String, BiomassPoint>,
    pub trades: Vec<TradeRecord>,
}

/// A contract outcome attached to one transaction of an appended block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractVerdict {
    pub contract_id: ContractId,
    pub subject_id: String,
    pub verdict: Verdict,
    pub timestamp: u64,
}

/// What [`Ledger::append_block`] reports back.
#[derive(Debug, Clone)]
pub struct AppendReceipt {
    pub block_index: u64,
    pub block_hash: String,
    /// Contract verdicts in transaction order (reports only).
    pub verdicts: Vec<ContractVerdict>,
}

/// Result of chain verification.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChainCheck {
    Valid,
    /// Index of the first block whose linkage or hash fails.
    CorruptAt(u64),
}

/// The ledger: blocks, folded state, contract config, and the queue of
/// anomaly flags awaiting an audit block.
#[derive(Debug, Clone)]
pub struct Ledger {
    blocks: Vec<Block>,
    state: LedgerState,
    config: ContractConfig,
    pending: Vec<FlagRecord>,
}

impl Ledger {
    pub fn new(config: ContractConfig) -> Result<Self> {
        config.validate()?;
        Ok(Ledger { blocks: Vec::new(), state: LedgerState::default(), config, pending: Vec::new() })
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn state(&self) -> &LedgerState {
        &self.state
    }

    pub fn config(&self) -> &ContractConfig {
        &self.config
    }

    /// Flags raised by contracts but not yet written into an audit block.
    pub fn pending_flags(&self) -> &[FlagRecord] {
        &self.pending
    }

    /// Drains the pending-flag queue (callers usually append the result as
    /// an audit block).
    pub fn take_pending_flags(&mut self) -> Vec<FlagRecord> {
        std::mem::take(&mut self.pending)
    }

    /// Validates and appends one block atomically: if any transaction is
    /// rejected, neither the block nor any state change is kept.
    /// Transactions apply in order, so a registration can precede its first
    /// use within the same block.
    pub fn append_block(&mut self, transactions: Vec<Transaction>) -> Result<AppendReceipt> {
        if transactions.is_empty() {
            return Err(Error::InvalidArgument("a block needs at least one transaction".into()));
        }
        let mut scratch = self.state.clone();
        let mut pending = self.pending.clone();
        let mut verdicts = Vec::new();
        for (i, tx) in transactions.iter().enumerate() {
            let verdict = apply_transaction(&mut scratch, &mut pending, &self.config, tx)
                .map_err(|e| match e {
                    Error::ValidationError { reason, .. } => Error::ValidationError { index: i, reason },
                    other => Error::ValidationError { index: i, reason: other.to_string() },
                })?;
            verdicts.extend(verdict);
        }

        let index = self.blocks.len() as u64;
        let prev = self
            .blocks
            .last()
            .map(|b| decode_hash(&b.block_hash).expect("own hashes are well-formed"))
            .unwrap_or([0u8; 32]);
        let hash = compute_block_hash(index, &prev, &transactions);
        let block = Block {
            index,
            prev_hash: hex::encode(prev),
            transactions,
            block_hash: hex::encode(hash),
        };
        let receipt = AppendReceipt {
            block_index: index,
            block_hash: block.block_hash.clone(),
            verdicts,
        };
        self.blocks.push(block);
        self.state = scratch;
        self.pending = pending;
        Ok(receipt)
    }

    /// Recomputes every hash and checks the linkage.
    pub fn verify_chain(&self) -> ChainCheck {
        verify_blocks(&self.blocks)
    }

    /// Writes the chain as JSON lines, one block per line.
    pub fn save_jsonl(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for block in &self.blocks {
            serde_json::to_writer(&mut w, block)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    /// Verifies parsed blocks and replays them into a fresh ledger. The
    /// replayed state (and pending-flag queue) is identical to what the
    /// writing process held.
    pub fn from_blocks(blocks: Vec<Block>, config: ContractConfig) -> Result<Self> {
        if let ChainCheck::CorruptAt(i) = verify_blocks(&blocks) {
            return Err(Error::ValidationError {
                index: i as usize,
                reason: "chain verification failed (hash or linkage mismatch)".into(),
            });
        }
        let mut ledger = Ledger::new(config)?;
        for block in &blocks {
            for (i, tx) in block.transactions.iter().enumerate() {
                apply_transaction(&mut ledger.state, &mut ledger.pending, &ledger.config, tx)
                    .map_err(|e| Error::ValidationError {
                        index: i,
                        reason: format!("replay of block {} failed: {e}", block.index),
                    })?;
            }
        }
        ledger.blocks = blocks;
        Ok(ledger)
    }

    /// Reads a JSON-lines chain file, verifies it, and replays state.
    pub fn load_jsonl(path: &Path, config: ContractConfig) -> Result<Self> {
        Ledger::from_blocks(read_blocks_jsonl(path)?, config)
    }
}

/// Parses a JSON-lines chain file without verifying or replaying it.
pub fn read_blocks_jsonl(path: &Path) -> Result<Vec<Block>> {
    let reader = BufReader::new(File::open(path)?);
    let mut blocks = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        blocks.push(serde_json::from_str(&line)?);
    }
    Ok(blocks)
}

/// Recomputes hashes and linkage over a parsed chain; reports the first
/// offending block.
pub fn verify_blocks(blocks: &[Block]) -> ChainCheck {
    let mut prev = [0u8; 32];
    for (i, block) in blocks.iter().enumerate() {
        let i = i as u64;
        if block.index != i {
            return ChainCheck::CorruptAt(i);
        }
        let (Ok(stored_prev), Ok(stored_hash)) =
            (decode_hash(&block.prev_hash), decode_hash(&block.block_hash))
        else {
            return ChainCheck::CorruptAt(i);
        };
        if stored_prev != prev {
            return ChainCheck::CorruptAt(i);
        }
        let recomputed = compute_block_hash(i, &prev, &block.transactions);
        if recomputed != stored_hash {
            return ChainCheck::CorruptAt(i);
        }
        prev = stored_hash;
    }
    ChainCheck::Valid
}

/// Applies one transaction to `state`, enforcing validation rules and
/// running contracts on report transactions. Returns the contract verdict
/// when one ran.
fn apply_transaction(
    state: &mut LedgerState,
    pending: &mut Vec<FlagRecord>,
    config: &ContractConfig,
    tx: &Transaction,
) -> Result<Option<ContractVerdict>> {
    match tx {
        Transaction::Register { participant, .. } => {
            let id = participant.unique_id();
            if id.is_empty() {
                return Err(reject("participant id is empty"));
            }
            if state.participants.contains_key(id) {
                return Err(reject(&format!("participant {id} is already registered")));
            }
            if let Participant::Farmer { field_yield_estimate_t, .. } = participant {
                if !field_yield_estimate_t.is_finite() || *field_yield_estimate_t <= 0.0 {
                    return Err(reject("field yield estimate must be finite and > 0"));
                }
            }
            state.participants.insert(
                id.to_string(),
                RegisteredParticipant {
                    participant: participant.clone(),
                    chain_address: chain_address(participant),
                },
            );
            Ok(None)
        }
        Transaction::Trade { seller_id, buyer_id, quantity_t, product_id, timestamp } => {
            match state.participants.get(seller_id).map(|r| &r.participant) {
                Some(Participant::Farmer { .. }) => {}
                Some(_) => return Err(reject(&format!("seller {seller_id} is not a farmer"))),
                None => return Err(reject(&format!("seller {seller_id} is not registered"))),
            }
            match state.participants.get(buyer_id).map(|r| &r.participant) {
                Some(Participant::ProcessingPlant { .. }) => {}
                Some(_) => return Err(reject(&format!("buyer {buyer_id} is not a processing plant"))),
                None => return Err(reject(&format!("buyer {buyer_id} is not registered"))),
            }
            if !quantity_t.is_finite() || *quantity_t < 0.0 {
                return Err(reject("trade quantity must be finite and >= 0"));
            }
            state.trades.push(TradeRecord {
                seller_id: seller_id.clone(),
                buyer_id: buyer_id.clone(),
                quantity_t: *quantity_t,
                product_id: product_id.clone(),
                timestamp: *timestamp,
                consumed: false,
            });
            Ok(None)
        }
        Transaction::BiomassReport { reading } => {
            if !(0.0..=1.0).contains(&reading.biomass_fraction) {
                return Err(reject(&format!(
                    "biomass fraction {} outside [0, 1]",
                    reading.biomass_fraction
                )));
            }
            let verdict = contracts::biomass_audit(state, config, reading)
                .map_err(|e| reject(&e.to_string()))?;
            if let Verdict::Anomaly { details } = &verdict {
                pending.push(FlagRecord {
                    contract_id: ContractId::BiomassAudit,
                    subject_id: reading.field_id.clone(),
                    details: details.clone(),
                    timestamp: reading.timestamp,
                });
            }
            state.last_biomass.insert(
                reading.field_id.clone(),
                BiomassPoint { fraction: reading.biomass_fraction, timestamp: reading.timestamp },
            );
            Ok(Some(ContractVerdict {
                contract_id: ContractId::BiomassAudit,
                subject_id: reading.field_id.clone(),
                verdict,
                timestamp: reading.timestamp,
            }))
        }
        Transaction::PlantOutput { plant_id, quantity_t, timestamp, .. } => {
            if !quantity_t.is_finite() || *quantity_t < 0.0 {
                return Err(reject("output quantity must be finite and >= 0"));
            }
            let verdict = contracts::plant_audit(state, config, plant_id, *quantity_t)
                .map_err(|e| reject(&e.to_string()))?;
            if let Verdict::Anomaly { details } = &verdict {
                pending.push(FlagRecord {
                    contract_id: ContractId::PlantAudit,
                    subject_id: plant_id.clone(),
                    details: details.clone(),
                    timestamp: *timestamp,
                });
            }
            // The audit consumed every open input of this plant.
            for trade in state.trades.iter_mut() {
                if &trade.buyer_id == plant_id {
                    trade.consumed = true;
                }
            }
            Ok(Some(ContractVerdict {
                contract_id: ContractId::PlantAudit,
                subject_id: plant_id.clone(),
                verdict,
                timestamp: *timestamp,
            }))
        }
        Transaction::AnomalyFlag { flag } => {
            // Materializing a flag clears it from the pending queue, so a
            // replayed chain reconstructs the same outstanding set.
            pending.retain(|f| {
                !(f.contract_id == flag.contract_id
                    && f.subject_id == flag.subject_id
                    && f.timestamp == flag.timestamp)
            });
            Ok(None)
        }
    }
}

fn reject(reason: &str) -> Error {
    Error::ValidationError { index: 0, reason: reason.to_string() }
}

// ---------------------------------------------------------------------------
// Canonical binary encoding and hashing.
//
// Strings are u32-LE length + UTF-8 bytes; u64 little-endian; f64 as the
// little-endian bytes of its IEEE-754 bit pattern; enums a one-byte tag
// followed by their fields in declaration order.
// ---------------------------------------------------------------------------

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_bits().to_le_bytes());
}

fn encode_participant(out: &mut Vec<u8>, p: &Participant) {
    match p {
        Participant::Farmer { unique_id, crop_type, latitude, longitude, field_yield_estimate_t } => {
            out.push(0);
            put_str(out, unique_id);
            put_str(out, crop_type);
            put_f64(out, *latitude);
            put_f64(out, *longitude);
            put_f64(out, *field_yield_estimate_t);
        }
        Participant::ProcessingPlant { unique_id, product_type } => {
            out.push(1);
            put_str(out, unique_id);
            put_str(out, product_type);
        }
    }
}

fn encode_transaction(out: &mut Vec<u8>, tx: &Transaction) {
    match tx {
        Transaction::Register { participant, timestamp } => {
            out.push(0);
            encode_participant(out, participant);
            put_u64(out, *timestamp);
        }
        Transaction::Trade { seller_id, buyer_id, quantity_t, product_id, timestamp } => {
            out.push(1);
            put_str(out, seller_id);
            put_str(out, buyer_id);
            put_f64(out, *quantity_t);
            put_str(out, product_id);
            put_u64(out, *timestamp);
        }
        Transaction::BiomassReport { reading } => {
            out.push(2);
            put_str(out, &reading.field_id);
            put_f64(out, reading.biomass_fraction);
            put_f64(out, reading.latitude);
            put_f64(out, reading.longitude);
            put_u64(out, reading.timestamp);
        }
        Transaction::PlantOutput { plant_id, product_id, quantity_t, timestamp } => {
            out.push(3);
            put_str(out, plant_id);
            put_str(out, product_id);
            put_f64(out, *quantity_t);
            put_u64(out, *timestamp);
        }
        Transaction::AnomalyFlag { flag } => {
            out.push(4);
            out.push(match flag.contract_id {
                ContractId::BiomassAudit => 0,
                ContractId::PlantAudit => 1,
            });
            put_str(out, &flag.subject_id);
            put_str(out, &flag.details);
            put_u64(out, flag.timestamp);
        }
    }
}

/// SHA-256 of `index ‖ prev_hash ‖ count ‖ length-prefixed transactions`.
pub fn compute_block_hash(index: u64, prev_hash: &[u8; 32], txs: &[Transaction]) -> [u8; 32] {
    let mut payload = Vec::new();
    put_u64(&mut payload, index);
    payload.extend_from_slice(prev_hash);
    payload.extend_from_slice(&(txs.len() as u32).to_le_bytes());
    for tx in txs {
        let mut enc = Vec::new();
        encode_transaction(&mut enc, tx);
        payload.extend_from_slice(&(enc.len() as u32).to_le_bytes());
        payload.extend_from_slice(&enc);
    }
    let digest = Sha256::digest(&payload);
    let mut out = [0u8; 32];
    out.copy_from_slice(&digest);
    out
}

/// Derives a participant's chain address: lowercase hex of the first 20
/// bytes of the SHA-256 of its canonical registration payload.
pub fn chain_address(p: &Participant) -> String {
    let mut enc = Vec::new();
    encode_participant(&mut enc, p);
    let digest = Sha256::digest(&enc);
    hex::encode(&digest[..20])
}

fn decode_hash(hex_str: &str) -> std::result::Result<[u8; 32], ()> {
    let bytes = hex::decode(hex_str).map_err(|_| ())?;
    bytes.try_into().map_err(|_| ())
}
