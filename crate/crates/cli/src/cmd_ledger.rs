//! `ledger`: create, extend, audit, and verify the supply-chain chain.
//!
//! The chain lives in a JSON-lines file, one block per line. Mutating
//! subcommands load it, append exactly one block, and save it back;
//! `verify` checks hash linkage without replaying state; `scenario`
//! generates a seeded event stream with planted violations and reports
//! contract precision/recall against the known ground truth.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Subcommand};
use serde::Serialize;

use cropchain_core::ledger::scenario::{run_scenario, ScenarioConfig};
use cropchain_core::ledger::{
    read_blocks_jsonl, verify_blocks, ChainCheck, ContractConfig, ContractVerdict, Ledger,
    Participant, Transaction, Verdict,
};
use cropchain_core::segmentation::BiomassReading;

use crate::manifest::RunRecorder;
use crate::util::{self, user_err};

#[derive(Debug, Args, Serialize)]
pub struct LedgerArgs {
    #[command(subcommand)]
    pub command: LedgerCommand,
}

#[derive(Debug, Subcommand, Serialize)]
pub enum LedgerCommand {
    /// Create an empty chain file
    Init(InitArgs),
    /// Register a farmer and derive its chain address
    RegisterFarmer(RegisterFarmerArgs),
    /// Register a processing plant and derive its chain address
    RegisterPlant(RegisterPlantArgs),
    /// Record a produce trade from a farmer to a plant
    Trade(TradeArgs),
    /// Submit a biomass observation; runs the biomass audit contract
    ReportBiomass(ReportBiomassArgs),
    /// Submit a plant production report; runs the output audit contract
    ReportOutput(ReportOutputArgs),
    /// Materialize pending anomaly flags into an audit block
    Audit(AuditArgs),
    /// Check hash linkage of the whole chain
    Verify(VerifyArgs),
    /// Generate a seeded scenario with planted contract violations
    Scenario(ScenarioArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct InitArgs {
    /// Chain file to create; must not exist yet
    #[arg(long)]
    pub chain: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct RegisterFarmerArgs {
    /// Chain file (JSON lines)
    #[arg(long)]
    pub chain: PathBuf,
    /// Unique field/farmer id
    #[arg(long)]
    pub id: String,
    /// Crop type; plant-output audits need a yield factor for it
    #[arg(long)]
    pub crop: String,
    #[arg(long, default_value_t = 0.0)]
    pub lat: f64,
    #[arg(long, default_value_t = 0.0)]
    pub lon: f64,
    /// Expected harvest of the whole field in tonnes
    #[arg(long)]
    pub yield_t: f64,
    /// Logical event time
    #[arg(long, default_value_t = 0)]
    pub timestamp: u64,
    /// Contract configuration JSON (default: built-in demo crops)
    #[arg(long)]
    pub contract_config: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct RegisterPlantArgs {
    /// Chain file (JSON lines)
    #[arg(long)]
    pub chain: PathBuf,
    /// Unique plant id
    #[arg(long)]
    pub id: String,
    /// Product the plant produces
    #[arg(long)]
    pub product: String,
    /// Logical event time
    #[arg(long, default_value_t = 0)]
    pub timestamp: u64,
    /// Contract configuration JSON (default: built-in demo crops)
    #[arg(long)]
    pub contract_config: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct TradeArgs {
    /// Chain file (JSON lines)
    #[arg(long)]
    pub chain: PathBuf,
    /// Selling farmer id
    #[arg(long)]
    pub seller: String,
    /// Buying plant id
    #[arg(long)]
    pub buyer: String,
    /// Traded quantity in tonnes
    #[arg(long)]
    pub quantity_t: f64,
    /// Traded product/produce id
    #[arg(long)]
    pub product: String,
    /// Logical event time
    #[arg(long, default_value_t = 0)]
    pub timestamp: u64,
    /// Contract configuration JSON (default: built-in demo crops)
    #[arg(long)]
    pub contract_config: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct ReportBiomassArgs {
    /// Chain file (JSON lines)
    #[arg(long)]
    pub chain: PathBuf,
    /// Registered field id the observation belongs to
    #[arg(long)]
    pub field: String,
    /// Observed biomass cover fraction, in [0, 1]
    #[arg(long)]
    pub fraction: f64,
    /// Logical event time
    #[arg(long, default_value_t = 0)]
    pub timestamp: u64,
    /// Contract configuration JSON (default: built-in demo crops)
    #[arg(long)]
    pub contract_config: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct ReportOutputArgs {
    /// Chain file (JSON lines)
    #[arg(long)]
    pub chain: PathBuf,
    /// Registered plant id
    #[arg(long)]
    pub plant: String,
    /// Produced product id
    #[arg(long)]
    pub product: String,
    /// Reported production quantity in tonnes
    #[arg(long)]
    pub quantity_t: f64,
    /// Logical event time
    #[arg(long, default_value_t = 0)]
    pub timestamp: u64,
    /// Contract configuration JSON (default: built-in demo crops)
    #[arg(long)]
    pub contract_config: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct AuditArgs {
    /// Chain file (JSON lines)
    #[arg(long)]
    pub chain: PathBuf,
    /// Where to write the drained flags as JSON
    #[arg(long, default_value = "flags.json")]
    pub flags_out: PathBuf,
    /// Contract configuration JSON (default: built-in demo crops)
    #[arg(long)]
    pub contract_config: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct VerifyArgs {
    /// Chain file (JSON lines)
    #[arg(long)]
    pub chain: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ScenarioArgs {
    #[arg(long, default_value_t = 2024)]
    pub seed: u64,
    #[arg(long, default_value_t = 12)]
    pub farmers: usize,
    #[arg(long, default_value_t = 4)]
    pub plants: usize,
    /// Number of compliant events around the planted violations
    #[arg(long, default_value_t = 200)]
    pub events: usize,
    /// Planted unexplained biomass drops
    #[arg(long, default_value_t = 5)]
    pub biomass_violations: usize,
    /// Planted inflated plant-output reports
    #[arg(long, default_value_t = 3)]
    pub output_violations: usize,
    /// Output directory (re-rooted under $CROPCHAIN_OUT_DIR when relative)
    #[arg(long, default_value = "scenario-run")]
    pub out_dir: PathBuf,
}

/// Loads a contract configuration from `--contract-config`, defaulting to
/// the built-in demo crop factors.
pub fn load_contract_config(path: Option<&Path>) -> anyhow::Result<ContractConfig> {
    let Some(path) = path else {
        return Ok(ContractConfig::with_demo_crops());
    };
    let text = util::read_text("--contract-config", path)?;
    let config: ContractConfig = serde_json::from_str(&text).map_err(|e| {
        user_err(format!("--contract-config: {} is not a contract config: {e}", path.display()))
    })?;
    config
        .validate()
        .map_err(|e| user_err(format!("--contract-config: {e}")))?;
    Ok(config)
}

pub fn run(args: LedgerArgs) -> anyhow::Result<()> {
    match args.command {
        LedgerCommand::Init(a) => init(a),
        LedgerCommand::RegisterFarmer(a) => register_farmer(a),
        LedgerCommand::RegisterPlant(a) => register_plant(a),
        LedgerCommand::Trade(a) => trade(a),
        LedgerCommand::ReportBiomass(a) => report_biomass(a),
        LedgerCommand::ReportOutput(a) => report_output(a),
        LedgerCommand::Audit(a) => audit(a),
        LedgerCommand::Verify(a) => verify(a),
        LedgerCommand::Scenario(a) => scenario(a),
    }
}

fn load_chain(chain: &Path, contract_config: Option<&Path>) -> anyhow::Result<Ledger> {
    let config = load_contract_config(contract_config)?;
    Ledger::load_jsonl(chain, config).map_err(|e| user_err(format!("--chain: {e}")))
}

/// Appends one block, saves the chain, and writes the run manifest beside
/// it. Returns the verdicts the appended transactions produced.
fn commit(
    command: &str,
    config: impl Serialize,
    chain_path: &Path,
    ledger: &mut Ledger,
    transactions: Vec<Transaction>,
) -> anyhow::Result<Vec<ContractVerdict>> {
    let mut rec = RunRecorder::new(command, config, None)?;
    let started = Instant::now();
    let receipt = ledger
        .append_block(transactions)
        .map_err(|e| user_err(format!("--chain: {e}")))?;
    let contract_micros = started.elapsed().as_secs_f64() * 1e6;
    ledger
        .save_jsonl(chain_path)
        .map_err(|e| user_err(format!("cannot write {}: {e}", chain_path.display())))?;
    rec.record(chain_path);
    let manifest_dir = chain_path.parent().filter(|p| !p.as_os_str().is_empty());
    rec.finish(manifest_dir.unwrap_or_else(|| Path::new(".")))?;
    println!(
        "block {} appended ({} blocks, contract execution {contract_micros:.1} us)",
        receipt.block_index,
        ledger.blocks().len()
    );
    Ok(receipt.verdicts)
}

fn print_verdicts(verdicts: &[ContractVerdict]) {
    for v in verdicts {
        let outcome = match &v.verdict {
            Verdict::Ok => "ok".to_string(),
            Verdict::Anomaly { details } => format!("anomaly ({details})"),
        };
        println!("{} on {} at t={}: {outcome}", v.contract_id, v.subject_id, v.timestamp);
    }
}

fn init(args: InitArgs) -> anyhow::Result<()> {
    if args.chain.exists() {
        return Err(user_err(format!(
            "--chain: {} already exists; refusing to overwrite",
            args.chain.display()
        )));
    }
    let mut rec = RunRecorder::new("ledger init", &args, None)?;
    let ledger = Ledger::new(ContractConfig::with_demo_crops())
        .expect("built-in contract config is valid");
    ledger
        .save_jsonl(&args.chain)
        .map_err(|e| user_err(format!("cannot write {}: {e}", args.chain.display())))?;
    rec.record(&args.chain);
    let manifest_dir = args.chain.parent().filter(|p| !p.as_os_str().is_empty());
    rec.finish(manifest_dir.unwrap_or_else(|| Path::new(".")))?;
    println!("initialized empty chain at {}", args.chain.display());
    Ok(())
}

fn register_farmer(args: RegisterFarmerArgs) -> anyhow::Result<()> {
    let mut ledger = load_chain(&args.chain, args.contract_config.as_deref())?;
    let participant = Participant::Farmer {
        unique_id: args.id.clone(),
        crop_type: args.crop.clone(),
        latitude: args.lat,
        longitude: args.lon,
        field_yield_estimate_t: args.yield_t,
    };
    let tx = Transaction::Register { participant, timestamp: args.timestamp };
    commit("ledger register-farmer", &args, &args.chain, &mut ledger, vec![tx])?;
    let address = &ledger.state().participants[&args.id].chain_address;
    println!("farmer {} registered, chain address {address}", args.id);
    Ok(())
}

fn register_plant(args: RegisterPlantArgs) -> anyhow::Result<()> {
    let mut ledger = load_chain(&args.chain, args.contract_config.as_deref())?;
    let participant = Participant::ProcessingPlant {
        unique_id: args.id.clone(),
        product_type: args.product.clone(),
    };
    let tx = Transaction::Register { participant, timestamp: args.timestamp };
    commit("ledger register-plant", &args, &args.chain, &mut ledger, vec![tx])?;
    let address = &ledger.state().participants[&args.id].chain_address;
    println!("plant {} registered, chain address {address}", args.id);
    Ok(())
}

fn trade(args: TradeArgs) -> anyhow::Result<()> {
    let mut ledger = load_chain(&args.chain, args.contract_config.as_deref())?;
    let tx = Transaction::Trade {
        seller_id: args.seller.clone(),
        buyer_id: args.buyer.clone(),
        quantity_t: args.quantity_t,
        product_id: args.product.clone(),
        timestamp: args.timestamp,
    };
    commit("ledger trade", &args, &args.chain, &mut ledger, vec![tx])?;
    println!(
        "trade recorded: {} t of {} from {} to {}",
        args.quantity_t, args.product, args.seller, args.buyer
    );
    Ok(())
}

fn report_biomass(args: ReportBiomassArgs) -> anyhow::Result<()> {
    let mut ledger = load_chain(&args.chain, args.contract_config.as_deref())?;
    // Reuse the registered coordinates so the reading is georeferenced
    // consistently with onboarding.
    let (latitude, longitude) = match ledger.state().participants.get(&args.field) {
        Some(p) => match &p.participant {
            Participant::Farmer { latitude, longitude, .. } => (*latitude, *longitude),
            Participant::ProcessingPlant { .. } => (0.0, 0.0),
        },
        None => (0.0, 0.0),
    };
    let reading = BiomassReading {
        field_id: args.field.clone(),
        biomass_fraction: args.fraction,
        latitude,
        longitude,
        timestamp: args.timestamp,
    };
    let tx = Transaction::BiomassReport { reading };
    let verdicts = commit("ledger report-biomass", &args, &args.chain, &mut ledger, vec![tx])?;
    print_verdicts(&verdicts);
    Ok(())
}

fn report_output(args: ReportOutputArgs) -> anyhow::Result<()> {
    let mut ledger = load_chain(&args.chain, args.contract_config.as_deref())?;
    let tx = Transaction::PlantOutput {
        plant_id: args.plant.clone(),
        product_id: args.product.clone(),
        quantity_t: args.quantity_t,
        timestamp: args.timestamp,
    };
    let verdicts = commit("ledger report-output", &args, &args.chain, &mut ledger, vec![tx])?;
    print_verdicts(&verdicts);
    Ok(())
}

fn audit(args: AuditArgs) -> anyhow::Result<()> {
    let mut ledger = load_chain(&args.chain, args.contract_config.as_deref())?;
    let mut rec = RunRecorder::new("ledger audit", &args, None)?;
    let flags = ledger.take_pending_flags();
    if flags.is_empty() {
        println!("no pending flags");
    } else {
        let transactions: Vec<Transaction> = flags
            .iter()
            .cloned()
            .map(|flag| Transaction::AnomalyFlag { flag })
            .collect();
        let receipt = ledger
            .append_block(transactions)
            .map_err(|e| user_err(format!("--chain: {e}")))?;
        ledger
            .save_jsonl(&args.chain)
            .map_err(|e| user_err(format!("cannot write {}: {e}", args.chain.display())))?;
        rec.record(&args.chain);
        println!("materialized {} flags into block {}", flags.len(), receipt.block_index);
        for flag in &flags {
            println!("{} flagged {} at t={}: {}", flag.contract_id, flag.subject_id, flag.timestamp, flag.details);
        }
    }
    util::write_text(
        &args.flags_out,
        &format!("{}\n", serde_json::to_string_pretty(&flags)?),
    )?;
    rec.record(&args.flags_out);
    let manifest_dir = args.chain.parent().filter(|p| !p.as_os_str().is_empty());
    rec.finish(manifest_dir.unwrap_or_else(|| Path::new(".")))?;
    Ok(())
}

fn verify(args: VerifyArgs) -> anyhow::Result<()> {
    let blocks = read_blocks_jsonl(&args.chain).map_err(|e| user_err(format!("--chain: {e}")))?;
    match verify_blocks(&blocks) {
        ChainCheck::Valid => {
            println!("chain valid ({} blocks)", blocks.len());
            Ok(())
        }
        ChainCheck::CorruptAt(index) => {
            Err(user_err(format!("--chain: corrupt at block {index}")))
        }
    }
}

/// Serializable mirror of the scenario's ground-truth violations.
#[derive(Serialize)]
struct PlantedOut<'a> {
    contract: &'a str,
    subject_id: &'a str,
    timestamp: u64,
}

fn scenario(args: ScenarioArgs) -> anyhow::Result<()> {
    let out_dir = util::resolve_out_dir(&args.out_dir);
    util::ensure_dir(&out_dir)?;
    let mut rec = RunRecorder::new("ledger scenario", &args, Some(args.seed))?;
    let cfg = ScenarioConfig {
        seed: args.seed,
        farmers: args.farmers,
        plants: args.plants,
        compliant_events: args.events,
        biomass_violations: args.biomass_violations,
        output_violations: args.output_violations,
    };
    let outcome = run_scenario(&cfg).map_err(|e| {
        user_err(format!("--farmers/--plants/--events/--biomass-violations/--output-violations: {e}"))
    })?;

    let chain_path = out_dir.join("chain.jsonl");
    outcome
        .ledger
        .save_jsonl(&chain_path)
        .map_err(|e| user_err(format!("cannot write {}: {e}", chain_path.display())))?;
    rec.record(&chain_path);

    let flags_path = out_dir.join("flags.json");
    util::write_text(
        &flags_path,
        &format!("{}\n", serde_json::to_string_pretty(&outcome.flags)?),
    )?;
    rec.record(&flags_path);

    let planted: Vec<PlantedOut> = outcome
        .planted
        .iter()
        .map(|p| PlantedOut {
            contract: &p.contract_id_name,
            subject_id: &p.subject_id,
            timestamp: p.timestamp,
        })
        .collect();
    let planted_path = out_dir.join("planted.json");
    util::write_text(
        &planted_path,
        &format!("{}\n", serde_json::to_string_pretty(&planted)?),
    )?;
    rec.record(&planted_path);

    // Multiset match on (contract, subject, timestamp).
    let mut expected: Vec<(String, String, u64)> = outcome
        .planted
        .iter()
        .map(|p| (p.contract_id_name.clone(), p.subject_id.clone(), p.timestamp))
        .collect();
    expected.sort();
    let mut observed: Vec<(String, String, u64)> = outcome
        .flags
        .iter()
        .map(|f| (f.contract_id.to_string(), f.subject_id.clone(), f.timestamp))
        .collect();
    observed.sort();
    let matched = {
        let mut pool = expected.clone();
        observed
            .iter()
            .filter(|o| {
                if let Some(pos) = pool.iter().position(|e| e == *o) {
                    pool.remove(pos);
                    true
                } else {
                    false
                }
            })
            .count()
    };
    let precision = if observed.is_empty() { 1.0 } else { matched as f64 / observed.len() as f64 };
    let recall = if expected.is_empty() { 1.0 } else { matched as f64 / expected.len() as f64 };

    println!(
        "scenario: {} planted violations, {} flags raised",
        expected.len(),
        observed.len()
    );
    println!("precision {precision:.3}, recall {recall:.3}");
    println!("chain: {}", chain_path.display());

    rec.finish(&out_dir)?;
    Ok(())
}
