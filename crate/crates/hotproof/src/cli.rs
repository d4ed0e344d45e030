//! Operator entry points: the three services, proving, auditing, probing,
//! and the interactive direct exchange.
//!
//! Services print one machine-readable ready line to stdout and serve until
//! killed. Audit commands print a deterministic JSON record and exit with
//! the stage code of the first failed check (0 accepted, 2 Delivery, 3
//! HardwareQuote, 4 SoftwareBinding, 5 Freshness); operational errors
//! exit 1.

use std::io::Write as _;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use crate::auditor::{render_audit_record, AuditPolicy, Auditor};
use crate::canonical::{from_json_bytes, to_wire_json};
use crate::channel::ChannelState;
use crate::enclave::{load_enclave, DirectAttestation, EnclavePolicy, TeeVendor};
use crate::http::{
    build_proof_bundle_http, fetch_notary_pubkey, fetch_server_identity, http_get,
    http_post_json, node_router, notary_router, oracle_router, spawn_service, DirectBody,
    HttpOracleClient, MeasurementBody, PubkeyBody,
};
use crate::keys::Keypair;
use crate::netsim::NetworkGraph;
use crate::oracle::{verify_statement, BlockTip, ChainFixture, ChainOracle};
use crate::prover::{BundleKind, Clock, ProofBundle, ProofRequest, ProverNode};
use crate::transcript::NotaryService;

const DEFAULT_CODE_IDENTITY: &str = "lnd-enclave-v1.0-audited";

#[derive(Parser)]
#[command(
    name = "hotproof",
    version,
    about = "Verifiable Lightning channel balances: attested provers, notarized transcripts, offline audits"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ServeArgs {
    /// Address to bind, e.g. 127.0.0.1:9180 (port 0 picks one).
    #[arg(long, default_value = "127.0.0.1:0")]
    listen: String,
    /// Seed for deterministic key derivation.
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Run the simulated chain oracle service.
    Oracle {
        /// Chain fixture: tip height plus funding UTXOs.
        #[arg(long)]
        fixture: std::path::PathBuf,
        #[command(flatten)]
        serve: ServeArgs,
    },
    /// Run the transcript notary service.
    Notary {
        #[command(flatten)]
        serve: ServeArgs,
        /// Freeze the notary clock at this unix time.
        #[arg(long)]
        now: Option<u64>,
    },
    /// Run the enclave-backed prover node.
    Node {
        /// Channel fixture: JSON array of channel states.
        #[arg(long)]
        fixture: std::path::PathBuf,
        /// Enclave policy file; defaults apply when omitted.
        #[arg(long)]
        policy: Option<std::path::PathBuf>,
        /// Chain oracle base URL.
        #[arg(long)]
        oracle_url: String,
        /// TLS-style server name presented to clients.
        #[arg(long, default_value = "prover.example")]
        subject: String,
        /// Enclave code identity string.
        #[arg(long, default_value = DEFAULT_CODE_IDENTITY)]
        code_identity: String,
        /// Freeze the node clock at this unix time.
        #[arg(long)]
        now: Option<u64>,
        #[command(flatten)]
        serve: ServeArgs,
    },
    /// Fetch an attested package and assemble a notarized proof bundle.
    Prove {
        #[arg(long)]
        node_url: String,
        #[arg(long)]
        notary_url: String,
        /// Where to write the bundle.
        #[arg(long)]
        out: std::path::PathBuf,
        /// Request a threshold attestation instead of the full report.
        #[arg(long)]
        threshold: Option<u64>,
        /// 32-byte hex nonce for threshold mode; random when omitted.
        #[arg(long)]
        nonce: Option<String>,
        /// Session time to embed; system clock when omitted.
        #[arg(long)]
        now: Option<u64>,
    },
    /// Audit a proof bundle offline against a pinned policy.
    Verify {
        #[arg(long)]
        bundle: std::path::PathBuf,
        /// Audit policy file with pinned keys and measurements.
        #[arg(long)]
        policy: std::path::PathBuf,
        /// Cross-check evidence against this oracle's current tip.
        #[arg(long)]
        oracle_url: Option<String>,
        /// Expected nonce for threshold bundles, 32-byte hex.
        #[arg(long)]
        nonce: Option<String>,
        /// Audit time; system clock when omitted.
        #[arg(long)]
        now: Option<u64>,
    },
    /// Estimate a target channel's liquidity by payment probing.
    Probe {
        /// Graph fixture: JSON array of channels.
        #[arg(long)]
        fixture: std::path::PathBuf,
        /// Probing node.
        #[arg(long)]
        source: String,
        /// Target channel id.
        #[arg(long)]
        target: String,
        /// Stop once the bounds are this close, in sat.
        #[arg(long, default_value_t = 1)]
        tolerance: u64,
    },
    /// Run the interactive direct attestation exchange against a node.
    Direct {
        #[arg(long)]
        node_url: String,
        #[arg(long)]
        policy: std::path::PathBuf,
        /// Re-submit the same attestation a second time.
        #[arg(long)]
        replay: bool,
        /// Shift the auditor clock forward this many seconds.
        #[arg(long, default_value_t = 0)]
        skew: u64,
        /// Audit time; system clock when omitted.
        #[arg(long)]
        now: Option<u64>,
    },
    /// Assemble an audit policy by enrolling the running services.
    Policy {
        #[arg(long)]
        oracle_url: String,
        #[arg(long)]
        notary_url: String,
        #[arg(long)]
        node_url: String,
        /// Seed the node was started with, to derive the vendor root.
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Write here instead of stdout.
        #[arg(long)]
        out: Option<std::path::PathBuf>,
    },
}

fn read_file(path: &std::path::Path) -> Result<Vec<u8>, String> {
    std::fs::read(path).map_err(|e| format!("BadConfig: {}: {e}", path.display()))
}

fn emit(bytes: &[u8]) {
    let mut stdout = std::io::stdout();
    let _ = stdout.write_all(bytes);
    if !bytes.ends_with(b"\n") {
        let _ = stdout.write_all(b"\n");
    }
    let _ = stdout.flush();
}

fn fail(message: &str) -> ! {
    eprintln!("error: {message}");
    std::process::exit(1);
}

fn serve_forever(ready: &impl serde::Serialize) -> ! {
    // One compact line so wrappers can `read` it.
    emit(&serde_json::to_vec(ready).expect("ready line serializes"));
    loop {
        std::thread::sleep(std::time::Duration::from_secs(3600));
    }
}

fn parse_nonce(hex_str: &str) -> Result<[u8; 32], String> {
    let bytes = hex::decode(hex_str).map_err(|e| format!("BadConfig: nonce: {e}"))?;
    <[u8; 32]>::try_from(bytes.as_slice())
        .map_err(|_| format!("BadConfig: nonce must be 32 bytes, got {}", bytes.len()))
}

fn system_now() -> u64 {
    Clock::System.now()
}

#[derive(serde::Serialize)]
struct ReadyLine<'a> {
    service: &'a str,
    listening: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pubkey: Option<crate::keys::PubKey>,
    #[serde(skip_serializing_if = "Option::is_none")]
    measurement: Option<crate::enclave::EnclaveMeasurement>,
}

fn cmd_oracle(fixture: &std::path::Path, serve: &ServeArgs) -> Result<(), String> {
    let fixture = ChainFixture::load(&read_file(fixture)?)
        .map_err(|e| format!("BadConfig: chain fixture: {e}"))?;
    let oracle = Arc::new(ChainOracle::new(
        Keypair::from_seed("oracle", serve.seed),
        fixture,
    ));
    let pubkey = oracle.public_key();
    let handle = spawn_service(&serve.listen, oracle_router(oracle)).map_err(|e| e.to_string())?;
    serve_forever(&ReadyLine {
        service: "oracle",
        listening: handle.base_url(),
        pubkey: Some(pubkey),
        measurement: None,
    })
}

fn cmd_notary(serve: &ServeArgs, now: Option<u64>) -> Result<(), String> {
    let notary = Arc::new(NotaryService::new(Keypair::from_seed("notary", serve.seed)));
    let pubkey = notary.public_key();
    let clock = now.map_or(Clock::System, Clock::Fixed);
    let handle =
        spawn_service(&serve.listen, notary_router(notary, clock)).map_err(|e| e.to_string())?;
    serve_forever(&ReadyLine {
        service: "notary",
        listening: handle.base_url(),
        pubkey: Some(pubkey),
        measurement: None,
    })
}

#[allow(clippy::too_many_arguments)]
fn cmd_node(
    fixture: &std::path::Path,
    policy_path: Option<&std::path::Path>,
    oracle_url: &str,
    subject: &str,
    code_identity: &str,
    now: Option<u64>,
    serve: &ServeArgs,
) -> Result<(), String> {
    let channels: Vec<ChannelState> = from_json_bytes(&read_file(fixture)?)
        .map_err(|e| format!("BadConfig: channel fixture: {e}"))?;
    for channel in &channels {
        channel
            .validate()
            .map_err(|e| format!("BadConfig: channel {}: {e}", channel.channel_id))?;
    }
    let mut policy: EnclavePolicy = match policy_path {
        Some(path) => from_json_bytes(&read_file(path)?)
            .map_err(|e| format!("BadConfig: enclave policy: {e}"))?,
        None => EnclavePolicy::default(),
    };
    if policy.pinned_oracle_pubkey.is_none() {
        // Pin the oracle key at launch when reachable; otherwise start
        // anyway and let attested endpoints fail closed.
        let url = format!("{}/pubkey", oracle_url.trim_end_matches('/'));
        if let Ok((200, body)) = http_get(&url) {
            if let Ok(parsed) = from_json_bytes::<PubkeyBody>(&body) {
                policy.pinned_oracle_pubkey = Some(parsed.pubkey);
            }
        }
    }
    let vendor = TeeVendor::new(Keypair::from_seed("vendor", serve.seed));
    let enclave = load_enclave(&vendor, code_identity, policy, serve.seed);
    let measurement = enclave.measurement();
    let node = Arc::new(ProverNode::new(
        channels,
        enclave,
        Keypair::from_seed("server", serve.seed),
        subject,
        Box::new(HttpOracleClient::new(oracle_url)),
        now.map_or(Clock::System, Clock::Fixed),
    ));
    let handle = spawn_service(&serve.listen, node_router(node)).map_err(|e| e.to_string())?;
    serve_forever(&ReadyLine {
        service: "node",
        listening: handle.base_url(),
        pubkey: None,
        measurement: Some(measurement),
    })
}

#[derive(serde::Serialize)]
struct ProveSummary<'a> {
    written: String,
    kind: &'a BundleKind,
    package_bytes: usize,
}

fn cmd_prove(
    node_url: &str,
    notary_url: &str,
    out: &std::path::Path,
    threshold: Option<u64>,
    nonce: Option<&str>,
    now: Option<u64>,
) -> Result<(), String> {
    let request = match threshold {
        Some(threshold_sat) => {
            let nonce = match nonce {
                Some(hex_str) => parse_nonce(hex_str)?,
                None => {
                    use rand::RngCore;
                    let mut bytes = [0u8; 32];
                    rand::rng().fill_bytes(&mut bytes);
                    bytes
                }
            };
            ProofRequest::Threshold {
                threshold_sat,
                nonce,
            }
        }
        None => ProofRequest::Balance,
    };
    let session_time = now.unwrap_or_else(system_now);
    let bundle = build_proof_bundle_http(node_url, notary_url, &request, session_time)
        .map_err(|e| e.to_string())?;
    std::fs::write(out, bundle.to_bytes()).map_err(|e| format!("{}: {e}", out.display()))?;
    emit(&to_wire_json(&ProveSummary {
        written: out.display().to_string(),
        kind: &bundle.kind,
        package_bytes: bundle.package.0.len(),
    }));
    Ok(())
}

fn fetch_own_tip(oracle_url: &str, auditor: &Auditor) -> Result<BlockTip, String> {
    let (status, body) = http_get(&format!("{}/tip", oracle_url.trim_end_matches('/')))?;
    if status != 200 {
        return Err(format!("oracle /tip returned HTTP {status}"));
    }
    let statement = from_json_bytes(&body).map_err(|e| e.to_string())?;
    let payload = verify_statement(&statement, &auditor.policy().pinned_oracle_key)
        .map_err(|e| format!("oracle tip statement: {e}"))?;
    Ok(*payload.tip())
}

fn cmd_verify(
    bundle_path: &std::path::Path,
    policy_path: &std::path::Path,
    oracle_url: Option<&str>,
    nonce: Option<&str>,
    now: Option<u64>,
) -> Result<i32, String> {
    let bundle = ProofBundle::load(&read_file(bundle_path)?)
        .map_err(|e| format!("BadConfig: bundle: {e}"))?;
    let policy: AuditPolicy = from_json_bytes(&read_file(policy_path)?)
        .map_err(|e| format!("BadConfig: audit policy: {e}"))?;
    let auditor = Auditor::new(policy);
    let own_tip = match oracle_url {
        Some(url) => Some(fetch_own_tip(url, &auditor)?),
        None => None,
    };
    let expected_nonce = nonce.map(parse_nonce).transpose()?;
    let now = now.unwrap_or_else(system_now);
    let verdict = match bundle.kind {
        BundleKind::Balance => auditor.verify_hot_proof(&bundle, own_tip.as_ref(), now),
        BundleKind::Threshold => auditor.verify_threshold_proof(
            &bundle,
            own_tip.as_ref(),
            expected_nonce.as_ref(),
            now,
        ),
    };
    emit(&render_audit_record(&verdict));
    Ok(verdict.exit_code())
}

fn cmd_probe(
    fixture: &std::path::Path,
    source: &str,
    target: &str,
    tolerance: u64,
) -> Result<(), String> {
    let graph = NetworkGraph::load(&read_file(fixture)?)
        .map_err(|e| format!("BadConfig: graph fixture: {e}"))?;
    let estimate = graph
        .estimate_liquidity(source, target, tolerance)
        .map_err(|e| e.to_string())?;
    emit(&to_wire_json(&estimate));
    Ok(())
}

fn cmd_direct(
    node_url: &str,
    policy_path: &std::path::Path,
    replay: bool,
    skew: u64,
    now: Option<u64>,
) -> Result<i32, String> {
    let policy: AuditPolicy = from_json_bytes(&read_file(policy_path)?)
        .map_err(|e| format!("BadConfig: audit policy: {e}"))?;
    let auditor = Auditor::new(policy);
    let nonce = auditor.issue_nonce();
    let (status, body) = http_post_json(
        &format!("{}/v1/direct", node_url.trim_end_matches('/')),
        &DirectBody {
            nonce_hex: hex::encode(nonce),
        },
    )?;
    if status != 200 {
        return Err(format!(
            "node /v1/direct returned HTTP {status}: {}",
            String::from_utf8_lossy(&body)
        ));
    }
    let attestation: DirectAttestation = from_json_bytes(&body).map_err(|e| e.to_string())?;
    let audit_now = now.unwrap_or_else(system_now) + skew;
    let verdict = auditor.verify_direct(&attestation, &nonce, audit_now);
    emit(&render_audit_record(&verdict));
    if replay {
        let second = auditor.verify_direct(&attestation, &nonce, audit_now);
        emit(&render_audit_record(&second));
        return Ok(second.exit_code());
    }
    Ok(verdict.exit_code())
}

fn cmd_policy(
    oracle_url: &str,
    notary_url: &str,
    node_url: &str,
    seed: u64,
    out: Option<&std::path::Path>,
) -> Result<(), String> {
    let (status, body) = http_get(&format!(
        "{}/v1/measurement",
        node_url.trim_end_matches('/')
    ))?;
    if status != 200 {
        return Err(format!("node /v1/measurement returned HTTP {status}"));
    }
    let measurement: MeasurementBody = from_json_bytes(&body).map_err(|e| e.to_string())?;
    let expected_server = fetch_server_identity(node_url)?;
    let notary_pubkey = fetch_notary_pubkey(notary_url)?;
    let (status, body) = http_get(&format!("{}/pubkey", oracle_url.trim_end_matches('/')))?;
    if status != 200 {
        return Err(format!("oracle /pubkey returned HTTP {status}"));
    }
    let oracle_key: PubkeyBody = from_json_bytes(&body).map_err(|e| e.to_string())?;
    let vendor = TeeVendor::new(Keypair::from_seed("vendor", seed));
    let policy = AuditPolicy {
        trusted_measurements: vec![measurement.measurement],
        vendor_anchor: vendor.trust_anchor(),
        notary_pubkey,
        expected_server,
        pinned_oracle_key: oracle_key.pubkey,
        max_proof_age_seconds: crate::auditor::DEFAULT_MAX_PROOF_AGE_SECONDS,
        max_freshness_age_blocks: crate::auditor::DEFAULT_MAX_FRESHNESS_AGE_BLOCKS,
        direct_window_seconds: crate::auditor::DEFAULT_DIRECT_WINDOW_SECONDS,
    };
    let bytes = to_wire_json(&policy);
    match out {
        Some(path) => {
            std::fs::write(path, &bytes).map_err(|e| format!("{}: {e}", path.display()))?
        }
        None => emit(&bytes),
    }
    Ok(())
}

/// Parses arguments, dispatches, and exits with the documented code.
pub fn run() -> ! {
    let cli = Cli::parse();
    let outcome: Result<i32, String> = match &cli.command {
        Command::Oracle { fixture, serve } => cmd_oracle(fixture, serve).map(|()| 0),
        Command::Notary { serve, now } => cmd_notary(serve, *now).map(|()| 0),
        Command::Node {
            fixture,
            policy,
            oracle_url,
            subject,
            code_identity,
            now,
            serve,
        } => cmd_node(
            fixture,
            policy.as_deref(),
            oracle_url,
            subject,
            code_identity,
            *now,
            serve,
        )
        .map(|()| 0),
        Command::Prove {
            node_url,
            notary_url,
            out,
            threshold,
            nonce,
            now,
        } => cmd_prove(node_url, notary_url, out, *threshold, nonce.as_deref(), *now).map(|()| 0),
        Command::Verify {
            bundle,
            policy,
            oracle_url,
            nonce,
            now,
        } => cmd_verify(bundle, policy, oracle_url.as_deref(), nonce.as_deref(), *now),
        Command::Probe {
            fixture,
            source,
            target,
            tolerance,
        } => cmd_probe(fixture, source, target, *tolerance).map(|()| 0),
        Command::Direct {
            node_url,
            policy,
            replay,
            skew,
            now,
        } => cmd_direct(node_url, policy, *replay, *skew, *now),
        Command::Policy {
            oracle_url,
            notary_url,
            node_url,
            seed,
            out,
        } => cmd_policy(oracle_url, notary_url, node_url, *seed, out.as_deref()).map(|()| 0),
    };
    match outcome {
        Ok(code) => std::process::exit(code),
        Err(message) => fail(&message),
    }
}
