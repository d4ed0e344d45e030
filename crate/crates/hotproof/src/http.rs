//! HTTP plumbing: a small threaded server wrapper, the three service
//! routers (oracle, notary, prover node), and client helpers including the
//! socket flavor of bundle assembly.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::canonical::{from_json_bytes, to_wire_json, Blob, Hash32};
use crate::keys::{PubKey, SigBytes};
use crate::oracle::{ChainOracle, OracleClient, OracleError, OracleStatement};
use crate::prover::{Clock, ProofBundle, ProofRequest, ProverError, ProverNode};
use crate::transcript::merkle::{merkle_path, merkle_root};
use crate::transcript::{
    split_records, NotaryAttestation, NotaryService, RevealedRecord, ServerIdentity,
    TranscriptCommitment, TranscriptProof,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HttpMethod {
    Get,
    Post,
    Other,
}

#[derive(Clone, Debug)]
pub struct HttpReply {
    pub status: u16,
    pub body: Vec<u8>,
}

impl HttpReply {
    pub fn ok(body: Vec<u8>) -> Self {
        HttpReply { status: 200, body }
    }

    pub fn error(status: u16, message: &str) -> Self {
        #[derive(Serialize)]
        struct Body<'a> {
            error: &'a str,
        }
        HttpReply {
            status,
            body: to_wire_json(&Body { error: message }),
        }
    }
}

/// A running HTTP service. Stops and joins its worker thread on drop.
pub struct ServiceHandle {
    addr: std::net::SocketAddr,
    stop: Arc<AtomicBool>,
    worker: Option<std::thread::JoinHandle<()>>,
}

impl ServiceHandle {
    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn addr(&self) -> std::net::SocketAddr {
        self.addr
    }
}

impl Drop for ServiceHandle {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(worker) = self.worker.take() {
            let _ = worker.join();
        }
    }
}

/// Binds `listen` (use port 0 for an ephemeral port) and serves requests on
/// a background thread until the handle is dropped.
pub fn spawn_service<F>(listen: &str, handler: F) -> std::io::Result<ServiceHandle>
where
    F: Fn(HttpMethod, &str, &[u8]) -> HttpReply + Send + Sync + 'static,
{
    let server = tiny_http::Server::http(listen)
        .map_err(|e| std::io::Error::other(format!("bind {listen}: {e}")))?;
    let addr = match server.server_addr() {
        tiny_http::ListenAddr::IP(addr) => addr,
        other => {
            return Err(std::io::Error::other(format!(
                "unsupported listen address {other:?}"
            )));
        }
    };
    let stop = Arc::new(AtomicBool::new(false));
    let stop_flag = stop.clone();
    let worker = std::thread::spawn(move || {
        while !stop_flag.load(Ordering::SeqCst) {
            let Ok(Some(mut request)) = server.recv_timeout(Duration::from_millis(25)) else {
                continue;
            };
            let method = match request.method() {
                tiny_http::Method::Get => HttpMethod::Get,
                tiny_http::Method::Post => HttpMethod::Post,
                _ => HttpMethod::Other,
            };
            let url = request.url().to_string();
            let mut body = Vec::new();
            let _ = request.as_reader().read_to_end(&mut body);
            let reply = handler(method, &url, &body);
            let response = tiny_http::Response::from_data(reply.body)
                .with_status_code(reply.status)
                .with_header(
                    tiny_http::Header::from_bytes(&b"Content-Type"[..], &b"application/json"[..])
                        .expect("static header"),
                );
            let _ = request.respond(response);
        }
    });
    Ok(ServiceHandle {
        addr,
        stop,
        worker: Some(worker),
    })
}

#[derive(Serialize, Deserialize)]
pub struct AdvanceBody {
    pub blocks: u64,
}

#[derive(Serialize, Deserialize)]
pub struct MarkSpentBody {
    pub txid: Hash32,
    pub vout: u32,
}

#[derive(Serialize, Deserialize)]
pub struct OfflineBody {
    pub offline: bool,
}

#[derive(Serialize, Deserialize)]
pub struct PubkeyBody {
    pub pubkey: PubKey,
}

#[derive(Serialize, Deserialize)]
pub struct HeightBody {
    pub height: u64,
}

fn oracle_reply(result: Result<OracleStatement, OracleError>) -> HttpReply {
    match result {
        Ok(statement) => HttpReply::ok(to_wire_json(&statement)),
        Err(OracleError::Unavailable(detail)) => HttpReply::error(503, &detail),
        Err(other) => HttpReply::error(500, &other.to_string()),
    }
}

/// Routes for the chain oracle: signed statements plus admin hooks for
/// driving the simulated chain.
pub fn oracle_router(oracle: Arc<ChainOracle>) -> impl Fn(HttpMethod, &str, &[u8]) -> HttpReply {
    move |method, url, body| match (method, url) {
        (HttpMethod::Get, "/tip") => oracle_reply(oracle.tip()),
        (HttpMethod::Get, path) if path.starts_with("/outspend/") => {
            let rest = &path["/outspend/".len()..];
            let Some((txid_hex, vout_str)) = rest.split_once('/') else {
                return HttpReply::error(400, "expected /outspend/{txid}/{vout}");
            };
            let (Ok(txid), Ok(vout)) = (Hash32::from_hex(txid_hex), vout_str.parse::<u32>())
            else {
                return HttpReply::error(400, "bad outpoint");
            };
            oracle_reply(oracle.outspend(crate::channel::Outpoint::new(txid, vout)))
        }
        (HttpMethod::Get, "/pubkey") => HttpReply::ok(to_wire_json(&PubkeyBody {
            pubkey: oracle.public_key(),
        })),
        (HttpMethod::Post, "/admin/advance") => match from_json_bytes::<AdvanceBody>(body) {
            Ok(req) => {
                oracle.advance_block(req.blocks);
                HttpReply::ok(to_wire_json(&HeightBody {
                    height: oracle.tip_snapshot().height,
                }))
            }
            Err(e) => HttpReply::error(400, &e.to_string()),
        },
        (HttpMethod::Post, "/admin/mark-spent") => match from_json_bytes::<MarkSpentBody>(body) {
            Ok(req) => {
                oracle.mark_spent(crate::channel::Outpoint::new(req.txid, req.vout));
                HttpReply::ok(b"{}\n".to_vec())
            }
            Err(e) => HttpReply::error(400, &e.to_string()),
        },
        (HttpMethod::Post, "/admin/offline") => match from_json_bytes::<OfflineBody>(body) {
            Ok(req) => {
                oracle.set_offline(req.offline);
                HttpReply::ok(b"{}\n".to_vec())
            }
            Err(e) => HttpReply::error(400, &e.to_string()),
        },
        _ => HttpReply::error(404, "no such route"),
    }
}

#[derive(Serialize, Deserialize)]
pub struct NotarizeBody {
    pub merkle_root_hex: Hash32,
    pub record_count: u32,
    pub server_fingerprint_hex: Hash32,
    pub request_path: String,
}

/// Routes for the notary: key discovery and commitment signing.
pub fn notary_router(
    notary: Arc<NotaryService>,
    clock: Clock,
) -> impl Fn(HttpMethod, &str, &[u8]) -> HttpReply {
    move |method, url, body| match (method, url) {
        (HttpMethod::Get, "/pubkey") => HttpReply::ok(to_wire_json(&PubkeyBody {
            pubkey: notary.public_key(),
        })),
        (HttpMethod::Post, "/notarize") => match from_json_bytes::<NotarizeBody>(body) {
            Ok(req) => {
                let attestation = notary.notarize(
                    TranscriptCommitment {
                        merkle_root: req.merkle_root_hex,
                        record_count: req.record_count,
                    },
                    req.server_fingerprint_hex,
                    &req.request_path,
                    clock.now(),
                );
                HttpReply::ok(to_wire_json(&attestation))
            }
            Err(e) => HttpReply::error(400, &e.to_string()),
        },
        _ => HttpReply::error(404, "no such route"),
    }
}

#[derive(Serialize, Deserialize)]
pub struct SessionSignBody {
    pub request_path: String,
    pub merkle_root_hex: Hash32,
    pub session_time: u64,
}

#[derive(Serialize, Deserialize)]
pub struct SessionSigBody {
    #[serde(rename = "server_session_sig_b64")]
    pub server_session_sig: SigBytes,
}

#[derive(Serialize, Deserialize)]
pub struct DirectBody {
    pub nonce_hex: String,
}

#[derive(Serialize, Deserialize)]
pub struct MeasurementBody {
    pub measurement: crate::enclave::EnclaveMeasurement,
}

fn prover_reply(result: Result<Vec<u8>, ProverError>) -> HttpReply {
    match result {
        Ok(bytes) => HttpReply::ok(bytes),
        Err(ProverError::Refused) => HttpReply::error(403, "Refused"),
        Err(ProverError::StaleState(detail)) => {
            HttpReply::error(503, &format!("stale channel state: {detail}"))
        }
        Err(ProverError::OracleUnavailable(detail)) => {
            HttpReply::error(503, &format!("chain oracle unavailable: {detail}"))
        }
        Err(other) => HttpReply::error(500, &other.to_string()),
    }
}

fn parse_threshold_query(query: &str) -> Option<(u64, [u8; 32])> {
    let mut threshold_sat = None;
    let mut nonce = None;
    for pair in query.split('&') {
        let (key, value) = pair.split_once('=')?;
        match key {
            "threshold_sat" => threshold_sat = value.parse::<u64>().ok(),
            "nonce" => {
                let bytes = hex::decode(value).ok()?;
                nonce = <[u8; 32]>::try_from(bytes.as_slice()).ok();
            }
            _ => {}
        }
    }
    Some((threshold_sat?, nonce?))
}

/// Routes for the prover node: plain and attested balances, the threshold
/// endpoint, identity discovery, session signing, and direct attestation.
pub fn node_router(node: Arc<ProverNode>) -> impl Fn(HttpMethod, &str, &[u8]) -> HttpReply {
    move |method, url, body| {
        let (path, query) = url.split_once('?').unwrap_or((url, ""));
        match (method, path) {
            (HttpMethod::Get, "/v1/balance/channels") => {
                prover_reply(node.serve_channel_balance())
            }
            (HttpMethod::Get, "/v1/attested/balance") => {
                prover_reply(node.serve_attested_balance())
            }
            (HttpMethod::Get, "/v1/attested/threshold") => {
                let Some((threshold_sat, nonce)) = parse_threshold_query(query) else {
                    return HttpReply::error(400, "expected threshold_sat and 32-byte hex nonce");
                };
                prover_reply(node.serve_attested_threshold(threshold_sat, &nonce))
            }
            (HttpMethod::Get, "/v1/identity") => {
                HttpReply::ok(to_wire_json(&node.server_identity()))
            }
            (HttpMethod::Get, "/v1/measurement") => HttpReply::ok(to_wire_json(&MeasurementBody {
                measurement: node.measurement(),
            })),
            (HttpMethod::Post, "/v1/session/sign") => {
                match from_json_bytes::<SessionSignBody>(body) {
                    Ok(req) => {
                        let sig = node.sign_session(
                            &req.request_path,
                            &req.merkle_root_hex,
                            req.session_time,
                        );
                        HttpReply::ok(to_wire_json(&SessionSigBody {
                            server_session_sig: sig,
                        }))
                    }
                    Err(e) => HttpReply::error(400, &e.to_string()),
                }
            }
            (HttpMethod::Post, "/v1/direct") => match from_json_bytes::<DirectBody>(body) {
                Ok(req) => {
                    let Ok(nonce) = hex::decode(&req.nonce_hex) else {
                        return HttpReply::error(400, "nonce is not hex");
                    };
                    match node.direct_attestation(&nonce) {
                        Ok(attestation) => HttpReply::ok(to_wire_json(&attestation)),
                        Err(e) => prover_reply(Err(e)),
                    }
                }
                Err(e) => HttpReply::error(400, &e.to_string()),
            },
            _ => HttpReply::error(404, "no such route"),
        }
    }
}

fn agent() -> ureq::Agent {
    ureq::Agent::config_builder()
        .http_status_as_error(false)
        .timeout_global(Some(Duration::from_secs(10)))
        .build()
        .new_agent()
}

pub fn http_get(url: &str) -> Result<(u16, Vec<u8>), String> {
    let mut response = agent().get(url).call().map_err(|e| e.to_string())?;
    let status = response.status().as_u16();
    let body = response
        .body_mut()
        .read_to_vec()
        .map_err(|e| e.to_string())?;
    Ok((status, body))
}

pub fn http_post_json<T: Serialize>(url: &str, body: &T) -> Result<(u16, Vec<u8>), String> {
    let mut response = agent()
        .post(url)
        .content_type("application/json")
        .send(&to_wire_json(body)[..])
        .map_err(|e| e.to_string())?;
    let status = response.status().as_u16();
    let bytes = response
        .body_mut()
        .read_to_vec()
        .map_err(|e| e.to_string())?;
    Ok((status, bytes))
}

/// Oracle access over HTTP, for enclaves whose oracle runs out of process.
pub struct HttpOracleClient {
    base_url: String,
}

impl HttpOracleClient {
    pub fn new(base_url: &str) -> Self {
        HttpOracleClient {
            base_url: base_url.trim_end_matches('/').to_string(),
        }
    }

    fn fetch(&self, path: &str) -> Result<OracleStatement, OracleError> {
        let (status, body) = http_get(&format!("{}{path}", self.base_url))
            .map_err(OracleError::Unavailable)?;
        if status != 200 {
            return Err(OracleError::Unavailable(format!(
                "{path} returned HTTP {status}"
            )));
        }
        from_json_bytes(&body).map_err(|e| OracleError::MalformedStatement(e.to_string()))
    }
}

impl OracleClient for HttpOracleClient {
    fn fetch_tip(&self) -> Result<OracleStatement, OracleError> {
        self.fetch("/tip")
    }

    fn fetch_outspend(
        &self,
        outpoint: crate::channel::Outpoint,
    ) -> Result<OracleStatement, OracleError> {
        self.fetch(&format!("/outspend/{}/{}", outpoint.txid, outpoint.vout))
    }
}

pub fn fetch_notary_pubkey(notary_url: &str) -> Result<PubKey, String> {
    let (status, body) = http_get(&format!("{}/pubkey", notary_url.trim_end_matches('/')))?;
    if status != 200 {
        return Err(format!("notary /pubkey returned HTTP {status}"));
    }
    let parsed: PubkeyBody = from_json_bytes(&body).map_err(|e| e.to_string())?;
    Ok(parsed.pubkey)
}

pub fn fetch_server_identity(node_url: &str) -> Result<ServerIdentity, String> {
    let (status, body) = http_get(&format!("{}/v1/identity", node_url.trim_end_matches('/')))?;
    if status != 200 {
        return Err(format!("node /v1/identity returned HTTP {status}"));
    }
    from_json_bytes(&body).map_err(|e| e.to_string())
}

/// The socket flavor of bundle assembly: fetch the attested bytes, have the
/// server sign the session, notarize the commitment, open every record.
pub fn build_proof_bundle_http(
    node_url: &str,
    notary_url: &str,
    request: &ProofRequest,
    session_time: u64,
) -> Result<ProofBundle, ProverError> {
    let node_url = node_url.trim_end_matches('/');
    let notary_url = notary_url.trim_end_matches('/');
    let path = request.request_path();

    let (status, bytes) =
        http_get(&format!("{node_url}{path}")).map_err(ProverError::Internal)?;
    match status {
        200 => {}
        403 => return Err(ProverError::Refused),
        503 => {
            #[derive(Deserialize)]
            struct ErrorBody {
                error: String,
            }
            let detail = from_json_bytes::<ErrorBody>(&bytes)
                .map(|b| b.error)
                .unwrap_or_else(|_| String::from_utf8_lossy(&bytes).to_string());
            return Err(match detail.strip_prefix("stale channel state: ") {
                Some(rest) => ProverError::StaleState(rest.to_string()),
                None => ProverError::OracleUnavailable(detail),
            });
        }
        other => {
            return Err(ProverError::Internal(format!(
                "{path} returned HTTP {other}"
            )));
        }
    }

    let server = fetch_server_identity(node_url).map_err(ProverError::Internal)?;
    let records = split_records(&bytes);
    let root = merkle_root(&records);

    let (status, sig_body) = http_post_json(
        &format!("{node_url}/v1/session/sign"),
        &SessionSignBody {
            request_path: path.clone(),
            merkle_root_hex: root,
            session_time,
        },
    )
    .map_err(ProverError::Internal)?;
    if status != 200 {
        return Err(ProverError::Internal(format!(
            "/v1/session/sign returned HTTP {status}"
        )));
    }
    let sig: SessionSigBody =
        from_json_bytes(&sig_body).map_err(|e| ProverError::Internal(e.to_string()))?;

    let (status, notary_body) = http_post_json(
        &format!("{notary_url}/notarize"),
        &NotarizeBody {
            merkle_root_hex: root,
            record_count: records.len() as u32,
            server_fingerprint_hex: server.fingerprint,
            request_path: path.clone(),
        },
    )
    .map_err(ProverError::NotaryUnavailable)?;
    if status != 200 {
        return Err(ProverError::NotaryUnavailable(format!(
            "/notarize returned HTTP {status}"
        )));
    }
    let attestation: NotaryAttestation =
        from_json_bytes(&notary_body).map_err(|e| ProverError::Internal(e.to_string()))?;

    let revealed = records
        .iter()
        .enumerate()
        .map(|(i, record)| RevealedRecord {
            index: i as u32,
            record: record.clone(),
            path: merkle_path(&records, i),
        })
        .collect();
    Ok(ProofBundle {
        kind: request.kind(),
        transcript_proof: TranscriptProof {
            notary_attestation: attestation,
            server,
            session_time,
            server_session_sig: sig.server_session_sig,
            revealed,
        },
        package: Blob(bytes),
    })
}
