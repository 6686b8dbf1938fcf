//! Key distribution center for multi-source broadcast encryption (MSBE).
//!
//! The KDC draws a pool of `k` keys. Every node `A` receives the `m` pool keys
//! named by the public mapping `F(A)` (its decryption secrets `S_A`) and all
//! `k` node-bound encryption secrets `K_j^A = h(K_j ‖ A)`. A receiver that
//! holds pool key `K_j` recomputes `K_j^A` for any sender `A`, so a sender can
//! reach everyone except a revoked set by sealing under the encryption
//! secrets whose index no revoked node holds.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::crypto::{self, hash, hash_concat, mac, Digest, SealedBox, SymKey};
use crate::NodeId;

pub const MAX_POOL: usize = 4096;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum KdcError {
    #[error("bad parameters: need 1 <= m < k <= {MAX_POOL}, got k={k} m={m}")]
    BadParams { k: usize, m: usize },
    #[error("node {0} already issued")]
    DuplicateNode(NodeId),
    #[error("pairwise key requested for {0} with itself")]
    SelfPair(NodeId),
    #[error("revoked nodes jointly hold every pool index")]
    EmptyCover,
    #[error("receiver holds no index in the cover")]
    NoUsableIndex,
    #[error("broadcast tag verification failed")]
    TagMismatch,
    #[error("node id must be nonempty")]
    EmptyNodeId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KdcParams {
    pub k: usize,
    pub m: usize,
    pub master_seed: [u8; 32],
}

/// Pool keys `K_1..K_k`, addressed by 1-based index.
#[derive(Debug, Clone)]
pub struct KeyPool {
    keys: Vec<SymKey>,
}

impl KeyPool {
    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    /// `K_index`, `index` in `1..=k`.
    pub fn key(&self, index: usize) -> &SymKey {
        &self.keys[index - 1]
    }

    pub fn iter(&self) -> impl Iterator<Item = &SymKey> {
        self.keys.iter()
    }
}

/// Derives the key shared by an unordered node pair.
#[derive(Debug, Clone)]
pub struct PairwiseKeyService {
    root: SymKey,
}

impl PairwiseKeyService {
    pub fn pairwise_key(&self, a: &NodeId, b: &NodeId) -> Result<SymKey, KdcError> {
        if a == b {
            return Err(KdcError::SelfPair(a.clone()));
        }
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        Ok(mac(&self.root, &[b"pairwise", lo.as_bytes(), hi.as_bytes()]).into())
    }
}

#[derive(Debug, Clone)]
pub struct NodeKeyRing {
    pub node: NodeId,
    /// `F(node)`, 1-based, in derivation order.
    pub indices: Vec<usize>,
    /// `S_A`: `decryption_secrets[i]` is pool key `indices[i]`.
    pub decryption_secrets: Vec<SymKey>,
    /// `G_A`: `encryption_secrets[j - 1] = h(K_j ‖ node)` for every `j` in `1..=k`.
    pub encryption_secrets: Vec<SymKey>,
    /// `K_A`, shared with the one-hop neighborhood.
    pub rdn_group_key: SymKey,
    /// `T_A`, hidden from the one-hop neighborhood.
    pub broadcast_secret: SymKey,
}

/// `B_A = [N_A ‖ G_A'(T_A) ‖ M_TA]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BroadcastMessage {
    pub revoked: BTreeSet<NodeId>,
    pub cover_indices: Vec<usize>,
    /// One envelope per cover index, in the same order.
    pub envelopes: Vec<SealedBox>,
    pub tag: Digest,
}

/// Validates parameters and derives the pool and pairwise service from `seed`.
pub fn setup(
    k: usize,
    m: usize,
    seed: [u8; 32],
) -> Result<(KdcParams, KeyPool, PairwiseKeyService), KdcError> {
    if k == 0 || m == 0 || m >= k || k > MAX_POOL {
        return Err(KdcError::BadParams { k, m });
    }
    let master = master_key(&seed);
    let mut keys = Vec::with_capacity(k);
    let mut seen = BTreeSet::new();
    let mut counter = 0u32;
    while keys.len() < k {
        let key: SymKey = mac(&master, &[b"pool", &counter.to_be_bytes()]).into();
        counter += 1;
        if seen.insert(*key.as_bytes()) {
            keys.push(key);
        }
    }
    let root = mac(&master, &[b"pairwise-root"]).into();
    Ok((
        KdcParams {
            k,
            m,
            master_seed: seed,
        },
        KeyPool { keys },
        PairwiseKeyService { root },
    ))
}

fn master_key(seed: &[u8; 32]) -> SymKey {
    mac(&SymKey::from_bytes(*seed), &[b"kdc-master"]).into()
}

/// Public index mapping `F(node)`: the first `m` distinct values of
/// `hash(node ‖ counter) mod k`, shifted to `1..=k`.
pub fn index_set(params: &KdcParams, node: &NodeId) -> Vec<usize> {
    let mut out = Vec::with_capacity(params.m);
    let mut counter = 0u32;
    while out.len() < params.m {
        let d = hash_concat(&[node.as_bytes(), &counter.to_be_bytes()]);
        counter += 1;
        let v = u64::from_be_bytes(d.0[..8].try_into().unwrap());
        let idx = (v % params.k as u64) as usize + 1;
        if !out.contains(&idx) {
            out.push(idx);
        }
    }
    out
}

/// `K_j^A = h(K_j ‖ A)`.
pub fn encryption_secret(pool_key: &SymKey, sender: &NodeId) -> SymKey {
    hash_concat(&[pool_key.as_bytes(), sender.as_bytes()]).into()
}

/// Every index in `1..=k` not held by any revoked node.
pub fn cover_indices(params: &KdcParams, revoked: &BTreeSet<NodeId>) -> Result<Vec<usize>, KdcError> {
    let held: BTreeSet<usize> = revoked
        .iter()
        .flat_map(|n| index_set(params, n))
        .collect();
    let cover: Vec<usize> = (1..=params.k).filter(|j| !held.contains(j)).collect();
    if cover.is_empty() {
        Err(KdcError::EmptyCover)
    } else {
        Ok(cover)
    }
}

/// The KDC proper: pool, pairwise service and the registry of issued nodes.
#[derive(Debug)]
pub struct Kdc {
    params: KdcParams,
    pool: KeyPool,
    pairwise: PairwiseKeyService,
    master: SymKey,
    issued: BTreeSet<NodeId>,
}

impl Kdc {
    pub fn new(k: usize, m: usize, seed: [u8; 32]) -> Result<Self, KdcError> {
        let (params, pool, pairwise) = setup(k, m, seed)?;
        Ok(Kdc {
            master: master_key(&seed),
            params,
            pool,
            pairwise,
            issued: BTreeSet::new(),
        })
    }

    pub fn params(&self) -> &KdcParams {
        &self.params
    }

    pub fn pool(&self) -> &KeyPool {
        &self.pool
    }

    pub fn pairwise(&self) -> &PairwiseKeyService {
        &self.pairwise
    }

    pub fn is_issued(&self, node: &NodeId) -> bool {
        self.issued.contains(node)
    }

    pub fn issued(&self) -> impl Iterator<Item = &NodeId> {
        self.issued.iter()
    }

    pub fn issue(&mut self, node: &NodeId) -> Result<NodeKeyRing, KdcError> {
        if node.as_str().is_empty() {
            return Err(KdcError::EmptyNodeId);
        }
        if self.issued.contains(node) {
            return Err(KdcError::DuplicateNode(node.clone()));
        }
        let indices = index_set(&self.params, node);
        let decryption_secrets = indices.iter().map(|&j| *self.pool.key(j)).collect();
        let encryption_secrets = self
            .pool
            .iter()
            .map(|kj| encryption_secret(kj, node))
            .collect();
        let node_key: SymKey = mac(&self.master, &[b"node", node.as_bytes()]).into();
        self.issued.insert(node.clone());
        Ok(NodeKeyRing {
            node: node.clone(),
            indices,
            decryption_secrets,
            encryption_secrets,
            rdn_group_key: mac(&node_key, &[b"rdn-group"]).into(),
            broadcast_secret: mac(&node_key, &[b"broadcast"]).into(),
        })
    }
}

fn encode_revoked(revoked: &BTreeSet<NodeId>) -> Vec<u8> {
    let mut out = Vec::new();
    for n in revoked {
        out.extend_from_slice(&(n.as_bytes().len() as u16).to_be_bytes());
        out.extend_from_slice(n.as_bytes());
    }
    out
}

fn encode_envelopes(indices: &[usize], envelopes: &[SealedBox]) -> Vec<u8> {
    let mut out = Vec::new();
    for (j, env) in indices.iter().zip(envelopes) {
        out.extend_from_slice(&(*j as u16).to_be_bytes());
        let wire = env.to_wire();
        out.extend_from_slice(&(wire.len() as u16).to_be_bytes());
        out.extend_from_slice(&wire);
    }
    out
}

/// `M_TA = h(N_A, G_A'(T_A), T_A)`, keyed by the conveyed secret.
fn broadcast_tag(
    secret: &SymKey,
    revoked: &BTreeSet<NodeId>,
    indices: &[usize],
    envelopes: &[SealedBox],
) -> Digest {
    mac(
        secret,
        &[
            b"msbe-tag",
            &encode_revoked(revoked),
            &encode_envelopes(indices, envelopes),
        ],
    )
}

/// Assembles `B_A` conveying `secret` to every node outside `revoked`.
pub fn build_broadcast(
    ring: &NodeKeyRing,
    secret: &SymKey,
    revoked: &BTreeSet<NodeId>,
    params: &KdcParams,
) -> Result<BroadcastMessage, KdcError> {
    let cover = cover_indices(params, revoked)?;
    let envelopes: Vec<SealedBox> = cover
        .iter()
        .map(|&j| crypto::seal(&ring.encryption_secrets[j - 1], secret.as_bytes()))
        .collect();
    let tag = broadcast_tag(secret, revoked, &cover, &envelopes);
    Ok(BroadcastMessage {
        revoked: revoked.clone(),
        cover_indices: cover,
        envelopes,
        tag,
    })
}

/// Recovers the conveyed secret using the first receiver index present in
/// the cover. No shortcut on revoked-set membership: exclusion rests on the
/// cover containing none of a revoked node's indices.
pub fn open_broadcast(
    receiver: &NodeKeyRing,
    msg: &BroadcastMessage,
    sender: &NodeId,
) -> Result<SymKey, KdcError> {
    if msg.cover_indices.len() != msg.envelopes.len() {
        return Err(KdcError::TagMismatch);
    }
    let (pos, pool_key) = receiver
        .indices
        .iter()
        .zip(&receiver.decryption_secrets)
        .find_map(|(j, kj)| {
            msg.cover_indices
                .iter()
                .position(|c| c == j)
                .map(|pos| (pos, kj))
        })
        .ok_or(KdcError::NoUsableIndex)?;
    let key = encryption_secret(pool_key, sender);
    let plain = crypto::open(&key, &msg.envelopes[pos]).map_err(|_| KdcError::TagMismatch)?;
    let secret = SymKey::from_bytes(plain.try_into().map_err(|_| KdcError::TagMismatch)?);
    let expect = broadcast_tag(&secret, &msg.revoked, &msg.cover_indices, &msg.envelopes);
    if expect != msg.tag {
        return Err(KdcError::TagMismatch);
    }
    Ok(secret)
}

/// Monte Carlo estimate of the probability that a random non-revoked node
/// opens a broadcast from a random sender that revokes `revoked` random nodes.
/// Broadcasts that fail with `EmptyCover` count as misses.
pub fn coverage_estimate(k: usize, m: usize, revoked: usize, trials: usize, seed: u64) -> Result<f64, KdcError> {
    let trials = trials.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut master = [0u8; 32];
    rng.fill(&mut master);
    let mut kdc = Kdc::new(k, m, master)?;
    let mut hits = 0usize;
    for t in 0..trials {
        let mut fresh = |role: &str| NodeId::new(format!("{role}{t}-{:016x}", rng.random::<u64>()));
        let sender = kdc.issue(&fresh("s"))?;
        let receiver = kdc.issue(&fresh("r"))?;
        let revoked: BTreeSet<NodeId> = (0..revoked).map(|_| fresh("x")).collect();
        let secret: SymKey = hash(&t.to_be_bytes()).into();
        let opened = build_broadcast(&sender, &secret, &revoked, &kdc.params)
            .and_then(|msg| open_broadcast(&receiver, &msg, &sender.node));
        if opened.as_ref() == Ok(&secret) {
            hits += 1;
        }
    }
    Ok(hits as f64 / trials as f64)
}
