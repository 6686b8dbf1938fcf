//! Broker, cloud exchange and cloud coordinator handshakes (BCEC, CECCC,
//! BCCC) over symmetric MAC tokens, with a cloud directory and a usage ledger.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::crypto::{self, hash, mac, Digest, SealedBox, SymKey};
use crate::srdp::{decode_frame, encode_frame, Frame, NodeKeys, SessionFrame};
use crate::NodeId;

/// Simulated datacenter turnaround reported with each result.
pub const DATACENTER_LATENCY_MS: u64 = 5;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SessionError {
    #[error("coordinator {0} is not registered with the exchange")]
    UnknownCoordinator(NodeId),
    #[error("no cloud offers {0:?}")]
    NoMatchingCloud(String),
    #[error("SLA refused")]
    SlaRefused,
    #[error("out-of-order message: expected step {expected}, got {got}")]
    OutOfOrderMessage { expected: u8, got: u8 },
    #[error("coordinator has no free datacenter")]
    NoAvailability,
    #[error("SLA lacks a valid signature")]
    BadSla,
    #[error("authentication token invalid")]
    TokenInvalid,
    #[error("no key shared with {0}")]
    MissingKey(NodeId),
    #[error("malformed session message: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloudRecord {
    pub coordinator: NodeId,
    pub services: BTreeSet<String>,
    pub free_datacenters: u32,
    pub mean_cost: f64,
    pub tariff: f64,
    pub sla_terms: String,
    pub updated_at: u64,
}

/// What a coordinator reports on refresh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloudUpdate {
    pub services: BTreeSet<String>,
    pub free_datacenters: u32,
    pub mean_cost: f64,
    pub tariff: f64,
    pub sla_terms: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloudDirectory {
    pub registered: BTreeSet<NodeId>,
    pub records: BTreeMap<NodeId, CloudRecord>,
    pub refresh_interval: u64,
    pub last_refresh: u64,
}

/// Directory query hit; `stale` marks records older than the refresh interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectoryHit {
    pub record: CloudRecord,
    pub stale: bool,
}

impl CloudDirectory {
    pub fn new(refresh_interval: u64) -> Self {
        CloudDirectory {
            registered: BTreeSet::new(),
            records: BTreeMap::new(),
            refresh_interval,
            last_refresh: 0,
        }
    }

    pub fn register(&mut self, coordinator: NodeId) {
        self.registered.insert(coordinator);
    }

    pub fn record(&self, coordinator: &NodeId) -> Option<&CloudRecord> {
        self.records.get(coordinator)
    }

    pub fn query(&self, service: &str, now: u64) -> Vec<DirectoryHit> {
        self.records
            .values()
            .filter(|r| r.services.contains(service))
            .map(|r| DirectoryHit {
                record: r.clone(),
                stale: now.saturating_sub(r.updated_at) > self.refresh_interval,
            })
            .collect()
    }

    /// Text snapshot, one cloud per line.
    pub fn snapshot(&self) -> String {
        let mut out = String::new();
        for r in self.records.values() {
            let services: Vec<&str> = r.services.iter().map(String::as_str).collect();
            out.push_str(&format!(
                "{} services={} free={} mean_cost={} tariff={} updated={}\n",
                r.coordinator,
                services.join(","),
                r.free_datacenters,
                r.mean_cost,
                r.tariff,
                r.updated_at
            ));
        }
        out
    }
}

/// Replaces the coordinator's record. Timestamps never move backwards.
pub fn directory_refresh(
    dir: &mut CloudDirectory,
    coordinator: &NodeId,
    update: CloudUpdate,
    now: u64,
) -> Result<(), SessionError> {
    if !dir.registered.contains(coordinator) {
        return Err(SessionError::UnknownCoordinator(coordinator.clone()));
    }
    let at = dir.records.get(coordinator).map_or(now, |r| r.updated_at.max(now));
    dir.records.insert(
        coordinator.clone(),
        CloudRecord {
            coordinator: coordinator.clone(),
            services: update.services,
            free_datacenters: update.free_datacenters,
            mean_cost: update.mean_cost,
            tariff: update.tariff,
            sla_terms: update.sla_terms,
            updated_at: at,
        },
    );
    dir.last_refresh = dir.last_refresh.max(at);
    Ok(())
}

/// Symmetric stand-in for a signature: a MAC over subject, issuer and
/// purpose under the pair's KDC key, optionally wrapping sealed material.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthToken {
    pub subject: NodeId,
    pub issuer: NodeId,
    pub purpose: String,
    pub tag: Digest,
    pub sealed: Option<SealedBox>,
}

pub fn issue_token(key: &SymKey, subject: &NodeId, issuer: &NodeId, purpose: &str) -> AuthToken {
    AuthToken {
        subject: subject.clone(),
        issuer: issuer.clone(),
        purpose: purpose.to_owned(),
        tag: mac(key, &[b"token", subject.as_bytes(), issuer.as_bytes(), purpose.as_bytes()]),
        sealed: None,
    }
}

pub fn verify_token(key: &SymKey, token: &AuthToken) -> bool {
    issue_token(key, &token.subject, &token.issuer, &token.purpose).tag == token.tag
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlaDocument {
    pub broker: NodeId,
    pub coordinator: NodeId,
    pub terms: String,
    pub broker_sig: Option<AuthToken>,
    pub coordinator_sig: Option<AuthToken>,
}

impl SlaDocument {
    pub fn digest(&self) -> Digest {
        hash(&[self.broker.as_bytes(), b"\0", self.coordinator.as_bytes(), b"\0", self.terms.as_bytes()].concat())
    }

    fn purpose(&self, role: &str) -> String {
        format!("sla-{role}:{}", self.digest().to_hex())
    }

    /// Both signatures present and valid under the broker-coordinator key.
    pub fn fully_signed(&self, k_bc: &SymKey) -> bool {
        let ok = |sig: &Option<AuthToken>, role: &str| {
            sig.as_ref()
                .is_some_and(|t| t.purpose == self.purpose(role) && verify_token(k_bc, t))
        };
        ok(&self.broker_sig, "broker") && ok(&self.coordinator_sig, "coordinator")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Handshake {
    Bcec,
    Ceccc,
    Bccc,
}

impl Handshake {
    pub fn code(&self) -> u8 {
        match self {
            Handshake::Bcec => 1,
            Handshake::Ceccc => 2,
            Handshake::Bccc => 3,
        }
    }

    pub fn steps(&self) -> u8 {
        match self {
            Handshake::Bcec => 8,
            Handshake::Ceccc => 5,
            Handshake::Bccc => 8,
        }
    }
}

impl fmt::Display for Handshake {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Handshake::Bcec => "BCEC",
            Handshake::Ceccc => "CECCC",
            Handshake::Bccc => "BCCC",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MessageBody {
    AvailabilityQuery { service: String },
    Statistics { clouds: Vec<DirectoryHit> },
    Selection { coordinator: NodeId },
    SlaSign { sla: SlaDocument },
    SecureLink,
    AuthKeyRequest,
    KeyDelivery { token: AuthToken },
    LinkClose,
    AvailabilityCheck,
    AvailabilityConfirm { free: u32 },
    SignedSla { sla: SlaDocument },
    CoordinatorSignature { token: AuthToken },
    BrokerTokenForward { token: AuthToken },
    ServiceRequest { service: String },
    AuthChallenge { nonce: Digest },
    BrokerToken { token: AuthToken, response: Digest },
    Verified,
    TaskSubmit { task: SealedBox },
    Processing { latency_ms: u64 },
    TaskResult { result: SealedBox, cost: f64 },
    LedgerEntry { cost: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionMessage {
    pub handshake: Handshake,
    pub step: u8,
    pub body: MessageBody,
}

/// Frame bytes (type 4) carrying the message as JSON behind the step tag.
pub fn encode_session(msg: &SessionMessage) -> Vec<u8> {
    encode_frame(&Frame::Session(SessionFrame {
        step: msg.handshake.code() * 16 + msg.step,
        payload: serde_json::to_vec(msg).expect("message serializes"),
    }))
}

pub fn decode_session(bytes: &[u8]) -> Result<SessionMessage, SessionError> {
    let frame = decode_frame(bytes).map_err(|e| SessionError::Malformed(e.to_string()))?;
    let Frame::Session(f) = frame else {
        return Err(SessionError::Malformed("not a session frame".into()));
    };
    let msg: SessionMessage =
        serde_json::from_slice(&f.payload).map_err(|e| SessionError::Malformed(e.to_string()))?;
    if msg.handshake.code() * 16 + msg.step != f.step {
        return Err(SessionError::Malformed("step tag disagrees with payload".into()));
    }
    Ok(msg)
}

/// One party's view of a handshake: the next expected step and the
/// transcript so far.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub handshake: Handshake,
    pub step: u8,
    pub transcript: Vec<SessionMessage>,
}

impl SessionState {
    pub fn new(handshake: Handshake) -> Self {
        SessionState {
            handshake,
            step: 0,
            transcript: Vec::new(),
        }
    }

    pub fn is_complete(&self) -> bool {
        self.step == self.handshake.steps()
    }

    /// Accepts exactly the next listed step; anything else leaves the state
    /// untouched.
    pub fn accept(&mut self, msg: &SessionMessage) -> Result<(), SessionError> {
        let expected = self.step + 1;
        if msg.handshake != self.handshake || msg.step != expected || expected > self.handshake.steps() {
            return Err(SessionError::OutOfOrderMessage {
                expected,
                got: msg.step,
            });
        }
        self.step = expected;
        self.transcript.push(msg.clone());
        Ok(())
    }
}

/// Two parties exchanging one handshake through the frame codec.
struct Channel {
    a: SessionState,
    b: SessionState,
}

impl Channel {
    fn new(h: Handshake) -> Self {
        Channel {
            a: SessionState::new(h),
            b: SessionState::new(h),
        }
    }

    fn send(&mut self, body: MessageBody) -> Result<MessageBody, SessionError> {
        let msg = SessionMessage {
            handshake: self.a.handshake,
            step: self.a.step + 1,
            body,
        };
        self.a.accept(&msg)?;
        let received = decode_session(&encode_session(&msg))?;
        self.b.accept(&received)?;
        Ok(received.body)
    }
}

fn key_with(keys: &NodeKeys, other: &NodeId) -> Result<SymKey, SessionError> {
    keys.pairwise
        .get(other)
        .copied()
        .ok_or_else(|| SessionError::MissingKey(other.clone()))
}

fn session_key(k_ec: &SymKey, broker: &NodeId, coordinator: &NodeId, sla: &SlaDocument) -> SymKey {
    mac(
        k_ec,
        &[b"bccc", broker.as_bytes(), coordinator.as_bytes(), sla.digest().as_bytes()],
    )
    .into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CecccOutcome {
    pub sla: SlaDocument,
    /// Coordinator's access token for the broker, sealed to the exchange.
    pub broker_token: AuthToken,
    pub transcript: SessionState,
}

/// Exchange asks the coordinator for capacity, hands over the broker-signed
/// SLA and collects the coordinator's signature plus the broker's access token.
pub fn run_ceccc(
    exchange: &NodeKeys,
    coordinator: &NodeKeys,
    dir: &CloudDirectory,
    sla: &SlaDocument,
) -> Result<CecccOutcome, SessionError> {
    let k_ec = key_with(exchange, &coordinator.id)?;
    let mut ch = Channel::new(Handshake::Ceccc);
    ch.send(MessageBody::AvailabilityCheck)?;
    let free = dir
        .record(&coordinator.id)
        .ok_or_else(|| SessionError::UnknownCoordinator(coordinator.id.clone()))?
        .free_datacenters;
    if free == 0 {
        return Err(SessionError::NoAvailability);
    }
    ch.send(MessageBody::AvailabilityConfirm { free })?;
    if sla.broker_sig.is_none() || sla.coordinator != coordinator.id {
        return Err(SessionError::BadSla);
    }
    let MessageBody::SignedSla { sla: received } = ch.send(MessageBody::SignedSla { sla: sla.clone() })? else {
        unreachable!()
    };
    let k_bc = key_with(coordinator, &received.broker)?;
    let bsig = received.broker_sig.as_ref().expect("checked above");
    if bsig.purpose != received.purpose("broker") || !verify_token(&k_bc, bsig) {
        return Err(SessionError::BadSla);
    }
    let mut signed = received.clone();
    signed.coordinator_sig = Some(issue_token(
        &k_bc,
        &received.broker,
        &coordinator.id,
        &received.purpose("coordinator"),
    ));
    let mut csig = signed.coordinator_sig.clone().expect("just set");
    csig.sealed = Some(crypto::seal(&k_ec, csig.tag.as_bytes()));
    ch.send(MessageBody::CoordinatorSignature { token: csig })?;
    let k_ec_coord = key_with(coordinator, &exchange.id)?;
    let mut access = issue_token(&k_bc, &received.broker, &coordinator.id, "bccc-access");
    let sk = session_key(&k_ec_coord, &received.broker, &coordinator.id, &signed);
    access.sealed = Some(crypto::seal(&k_ec_coord, sk.as_bytes()));
    let MessageBody::BrokerTokenForward { token } = ch.send(MessageBody::BrokerTokenForward { token: access })? else {
        unreachable!()
    };
    Ok(CecccOutcome {
        sla: signed,
        broker_token: token,
        transcript: ch.b,
    })
}

/// Broker-side result of BCEC: the access token and the BCCC session key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloudAccess {
    pub broker: NodeId,
    pub exchange: NodeId,
    pub coordinator: NodeId,
    pub token: AuthToken,
    pub sla: SlaDocument,
    pub tariff: f64,
    #[serde(skip)]
    pub session_key: Option<SymKey>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BcecOutcome {
    pub access: CloudAccess,
    pub transcript: SessionState,
    pub ceccc: SessionState,
}

/// Broker obtains authentication material for a cloud offering `service`.
/// The auth key is released only once both SLA signatures verify.
pub fn run_bcec(
    broker: &NodeKeys,
    exchange: &NodeKeys,
    coordinators: &[&NodeKeys],
    dir: &CloudDirectory,
    service: &str,
    broker_signs: bool,
    now: u64,
) -> Result<BcecOutcome, SessionError> {
    let k_be = key_with(broker, &exchange.id)?;
    let mut ch = Channel::new(Handshake::Bcec);
    ch.send(MessageBody::AvailabilityQuery {
        service: service.to_owned(),
    })?;
    let hits: Vec<DirectoryHit> = dir
        .query(service, now)
        .into_iter()
        .filter(|h| h.record.free_datacenters > 0)
        .collect();
    if hits.is_empty() {
        return Err(SessionError::NoMatchingCloud(service.to_owned()));
    }
    let MessageBody::Statistics { clouds } = ch.send(MessageBody::Statistics { clouds: hits })? else {
        unreachable!()
    };
    let choice = clouds
        .iter()
        .min_by(|a, b| {
            a.stale
                .cmp(&b.stale)
                .then(a.record.tariff.total_cmp(&b.record.tariff))
                .then_with(|| a.record.coordinator.cmp(&b.record.coordinator))
        })
        .expect("nonempty")
        .record
        .clone();
    let coordinator = *coordinators
        .iter()
        .find(|c| c.id == choice.coordinator)
        .ok_or_else(|| SessionError::UnknownCoordinator(choice.coordinator.clone()))?;
    ch.send(MessageBody::Selection {
        coordinator: choice.coordinator.clone(),
    })?;
    if !broker_signs {
        return Err(SessionError::SlaRefused);
    }
    let k_bc = key_with(broker, &coordinator.id)?;
    let mut sla = SlaDocument {
        broker: broker.id.clone(),
        coordinator: coordinator.id.clone(),
        terms: choice.sla_terms.clone(),
        broker_sig: None,
        coordinator_sig: None,
    };
    sla.broker_sig = Some(issue_token(&k_bc, &broker.id, &broker.id, &sla.purpose("broker")));
    let MessageBody::SlaSign { sla } = ch.send(MessageBody::SlaSign { sla })? else {
        unreachable!()
    };
    let ceccc = run_ceccc(exchange, coordinator, dir, &sla)?;
    ch.send(MessageBody::SecureLink)?;
    ch.send(MessageBody::AuthKeyRequest)?;
    // Gate: the broker checks both signatures before taking delivery.
    if !ceccc.sla.fully_signed(&k_bc) {
        return Err(SessionError::SlaRefused);
    }
    let k_ec = key_with(exchange, &coordinator.id)?;
    let mut delivered = ceccc.broker_token.clone();
    let sk_plain = crypto::open(&k_ec, delivered.sealed.as_ref().ok_or(SessionError::TokenInvalid)?)
        .map_err(|_| SessionError::TokenInvalid)?;
    delivered.sealed = Some(crypto::seal(&k_be, &sk_plain));
    let MessageBody::KeyDelivery { token } = ch.send(MessageBody::KeyDelivery { token: delivered })? else {
        unreachable!()
    };
    ch.send(MessageBody::LinkClose)?;
    let sk_bytes = crypto::open(&k_be, token.sealed.as_ref().ok_or(SessionError::TokenInvalid)?)
        .map_err(|_| SessionError::TokenInvalid)?;
    let sk = SymKey::from_bytes(sk_bytes.try_into().map_err(|_| SessionError::TokenInvalid)?);
    Ok(BcecOutcome {
        access: CloudAccess {
            broker: broker.id.clone(),
            exchange: exchange.id.clone(),
            coordinator: coordinator.id.clone(),
            token: AuthToken { sealed: None, ..token },
            sla: ceccc.sla,
            tariff: choice.tariff,
            session_key: Some(sk),
        },
        transcript: ch.a,
        ceccc: ceccc.transcript,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub broker: NodeId,
    pub coordinator: NodeId,
    pub units: u32,
    pub path_cost: f64,
    pub tariff: f64,
    pub cost: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Ledger {
    pub entries: Vec<LedgerEntry>,
    /// Tasks handed to a coordinator, successful or not.
    pub task_transfers: u32,
}

impl Ledger {
    pub fn total(&self) -> f64 {
        self.entries.iter().map(|e| e.cost).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub units: u32,
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BcccOutcome {
    pub result: Vec<u8>,
    pub cost: f64,
    pub transcript: SessionState,
}

/// `path_cost * tariff * units`.
pub fn usage_cost(path_cost: f64, tariff: f64, units: u32) -> f64 {
    path_cost * tariff * units as f64
}

/// Broker submits a task directly to the coordinator. The coordinator
/// refuses the session before any task bytes move if the token fails.
pub fn run_bccc(
    broker: &NodeKeys,
    coordinator: &NodeKeys,
    access: &CloudAccess,
    task: &Task,
    path_cost: f64,
    ledger: &mut Ledger,
) -> Result<BcccOutcome, SessionError> {
    let mut ch = Channel::new(Handshake::Bccc);
    ch.send(MessageBody::ServiceRequest {
        service: access.sla.terms.clone(),
    })?;
    let k_bc = key_with(coordinator, &broker.id)?;
    let nonce = mac(&k_bc, &[b"challenge", &ledger.entries.len().to_be_bytes(), access.sla.digest().as_bytes()]);
    ch.send(MessageBody::AuthChallenge { nonce })?;
    let broker_k = key_with(broker, &coordinator.id)?;
    let response = mac(&broker_k, &[b"response", nonce.as_bytes()]);
    let MessageBody::BrokerToken { token, response } = ch.send(MessageBody::BrokerToken {
        token: access.token.clone(),
        response,
    })?
    else {
        unreachable!()
    };
    let token_ok = token.subject == broker.id
        && token.issuer == coordinator.id
        && token.purpose == "bccc-access"
        && verify_token(&k_bc, &token)
        && mac(&k_bc, &[b"response", nonce.as_bytes()]) == response;
    if !token_ok {
        return Err(SessionError::TokenInvalid);
    }
    ch.send(MessageBody::Verified)?;
    let k_ec = key_with(coordinator, &access.exchange)?;
    let coord_sk = session_key(&k_ec, &broker.id, &coordinator.id, &access.sla);
    let broker_sk = access.session_key.ok_or(SessionError::TokenInvalid)?;
    let task_bytes = serde_json::to_vec(task).expect("task serializes");
    let MessageBody::TaskSubmit { task: sealed } = ch.send(MessageBody::TaskSubmit {
        task: crypto::seal(&broker_sk, &task_bytes),
    })?
    else {
        unreachable!()
    };
    ledger.task_transfers += 1;
    let opened = crypto::open(&coord_sk, &sealed).map_err(|_| SessionError::TokenInvalid)?;
    let received: Task = serde_json::from_slice(&opened).map_err(|e| SessionError::Malformed(e.to_string()))?;
    ch.send(MessageBody::Processing {
        latency_ms: DATACENTER_LATENCY_MS,
    })?;
    let result = hash(&received.payload).0.to_vec();
    let cost = usage_cost(path_cost, access.tariff, received.units);
    let MessageBody::TaskResult { result: sealed_result, cost } = ch.send(MessageBody::TaskResult {
        result: crypto::seal(&coord_sk, &result),
        cost,
    })?
    else {
        unreachable!()
    };
    let result = crypto::open(&broker_sk, &sealed_result).map_err(|_| SessionError::TokenInvalid)?;
    ch.send(MessageBody::LedgerEntry { cost })?;
    ledger.entries.push(LedgerEntry {
        broker: broker.id.clone(),
        coordinator: coordinator.id.clone(),
        units: received.units,
        path_cost,
        tariff: access.tariff,
        cost,
    });
    Ok(BcccOutcome {
        result,
        cost,
        transcript: ch.a,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kdc::Kdc;
    use crate::netsim::load_topology;
    use crate::srdp::provision;

    struct World {
        keys: BTreeMap<NodeId, NodeKeys>,
        dir: CloudDirectory,
    }

    fn world(free: u32) -> World {
        let t = load_topology("node B broker\nnode E exchange\nnode C coordinator\nlink B E 10 1\nlink E C 10 1\nlink B C 10 3\n")
            .unwrap();
        let mut kdc = Kdc::new(64, 8, [9; 32]).unwrap();
        let keys = provision(&t, &mut kdc).unwrap().keys;
        let mut dir = CloudDirectory::new(1000);
        dir.register("C".into());
        directory_refresh(
            &mut dir,
            &"C".into(),
            CloudUpdate {
                services: ["compute".to_owned()].into(),
                free_datacenters: free,
                mean_cost: 1.0,
                tariff: 2.0,
                sla_terms: "compute".into(),
            },
            0,
        )
        .unwrap();
        World { keys, dir }
    }

    fn k<'a>(w: &'a World, id: &str) -> &'a NodeKeys {
        &w.keys[&NodeId::from(id)]
    }

    fn bcec(w: &World) -> BcecOutcome {
        run_bcec(k(w, "B"), k(w, "E"), &[k(w, "C")], &w.dir, "compute", true, 0).unwrap()
    }

    #[test]
    fn directory_refresh_examples() {
        let mut w = world(3);
        assert_eq!(w.dir.record(&"C".into()).unwrap().free_datacenters, 3);
        let upd = CloudUpdate {
            services: BTreeSet::new(),
            free_datacenters: 1,
            mean_cost: 0.0,
            tariff: 1.0,
            sla_terms: String::new(),
        };
        assert_eq!(
            directory_refresh(&mut w.dir, &"Z".into(), upd.clone(), 5),
            Err(SessionError::UnknownCoordinator("Z".into()))
        );
        directory_refresh(&mut w.dir, &"C".into(), upd.clone(), 50).unwrap();
        directory_refresh(&mut w.dir, &"C".into(), upd, 20).unwrap();
        let r = w.dir.record(&"C".into()).unwrap();
        assert_eq!((r.free_datacenters, r.updated_at), (1, 50));
    }

    #[test]
    fn stale_records_are_marked() {
        let w = world(3);
        assert!(!w.dir.query("compute", 1000)[0].stale);
        assert!(w.dir.query("compute", 1001)[0].stale);
    }

    #[test]
    fn happy_path_all_three() {
        let w = world(3);
        let out = bcec(&w);
        assert!(out.transcript.is_complete());
        assert!(out.ceccc.is_complete());
        assert_eq!(out.access.coordinator, NodeId::from("C"));
        let k_bc = k(&w, "B").pairwise[&NodeId::from("C")];
        assert!(out.access.sla.fully_signed(&k_bc));
        let mut ledger = Ledger::default();
        let task = Task {
            units: 1,
            payload: b"job".to_vec(),
        };
        let r = run_bccc(k(&w, "B"), k(&w, "C"), &out.access, &task, 5.0, &mut ledger).unwrap();
        assert_eq!(r.cost, 10.0);
        assert_eq!(r.result, hash(b"job").0.to_vec());
        assert!(r.transcript.is_complete());
        assert_eq!(ledger.total(), 10.0);
    }

    #[test]
    fn declined_sla_and_no_match() {
        let w = world(3);
        assert_eq!(
            run_bcec(k(&w, "B"), k(&w, "E"), &[k(&w, "C")], &w.dir, "compute", false, 0),
            Err(SessionError::SlaRefused)
        );
        assert!(matches!(
            run_bcec(k(&w, "B"), k(&w, "E"), &[k(&w, "C")], &w.dir, "storage", true, 0),
            Err(SessionError::NoMatchingCloud(_))
        ));
    }

    #[test]
    fn ceccc_gates() {
        let w = world(0);
        let sla = SlaDocument {
            broker: "B".into(),
            coordinator: "C".into(),
            terms: "compute".into(),
            broker_sig: None,
            coordinator_sig: None,
        };
        assert_eq!(run_ceccc(k(&w, "E"), k(&w, "C"), &w.dir, &sla), Err(SessionError::NoAvailability));
        let w = world(2);
        assert_eq!(run_ceccc(k(&w, "E"), k(&w, "C"), &w.dir, &sla), Err(SessionError::BadSla));
    }

    #[test]
    fn forged_token_transfers_nothing() {
        let w = world(3);
        let mut access = bcec(&w).access;
        access.token = issue_token(&SymKey::from_bytes([7; 32]), &"B".into(), &"C".into(), "bccc-access");
        let mut ledger = Ledger::default();
        let task = Task {
            units: 1,
            payload: vec![1],
        };
        assert_eq!(
            run_bccc(k(&w, "B"), k(&w, "C"), &access, &task, 1.0, &mut ledger),
            Err(SessionError::TokenInvalid)
        );
        assert_eq!(ledger.task_transfers, 0);
    }

    #[test]
    fn auth_key_request_before_signing_is_out_of_order() {
        let mut s = SessionState::new(Handshake::Bcec);
        for (i, body) in [
            MessageBody::AvailabilityQuery { service: "x".into() },
            MessageBody::Statistics { clouds: vec![] },
            MessageBody::Selection { coordinator: "C".into() },
        ]
        .into_iter()
        .enumerate()
        {
            s.accept(&SessionMessage {
                handshake: Handshake::Bcec,
                step: i as u8 + 1,
                body,
            })
            .unwrap();
        }
        let before = s.clone();
        let early = SessionMessage {
            handshake: Handshake::Bcec,
            step: 6,
            body: MessageBody::AuthKeyRequest,
        };
        assert_eq!(s.accept(&early), Err(SessionError::OutOfOrderMessage { expected: 4, got: 6 }));
        assert_eq!(s, before);
    }

    #[test]
    fn session_codec_round_trip_and_tag_check() {
        let w = world(3);
        for msg in bcec(&w).transcript.transcript {
            assert_eq!(decode_session(&encode_session(&msg)).unwrap(), msg);
        }
        let msg = SessionMessage {
            handshake: Handshake::Bccc,
            step: 4,
            body: MessageBody::Verified,
        };
        let mut bytes = encode_session(&msg);
        bytes[1] = 0x35;
        assert!(matches!(decode_session(&bytes), Err(SessionError::Malformed(_))));
    }
}
