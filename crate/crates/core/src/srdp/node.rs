use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::packet::*;
use super::{chain_anchor, reply_anchor, reply_mac, two_hop_mac, DropReason, NodeKeys, SrdpError};
use crate::crypto::{self, chain, hash, Digest};
use crate::ecms::{
    build_rep, compare_candidates, monitor, open_rep, path_cost_step, products, Candidate, ErrorCode, Mode,
    MonitorAction, MonitorState, Observation, PathMetrics, RepPacket, Weights,
};
use crate::netsim::{transmission_ms, Action, NodeBehavior, NodeCtx, Topology};
use crate::NodeId;

const KIND_SHIFT: u32 = 56;
const VALUE_MASK: u64 = (1 << KIND_SHIFT) - 1;
const T_START: u64 = 1;
const T_HOLD: u64 = 2;
const T_COLLECT: u64 = 3;
const T_DISCOVERY: u64 = 4;
const T_MONITOR: u64 = 5;
const T_DATA: u64 = 6;
const T_REPLAY: u64 = 7;

/// Timer tag that makes a source begin discovery.
pub const TIMER_START: u64 = T_START << KIND_SHIFT;

fn tag(kind: u64, value: u64) -> u64 {
    (kind << KIND_SHIFT) | (value & VALUE_MASK)
}

/// Network-wide protocol parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeConfig {
    pub mode: Mode,
    /// Cost weights after mode masking.
    pub weights: Weights,
    pub linear_bw: bool,
    pub window_ms: u64,
    pub max_hops: u8,
    pub monitor_interval: u64,
    pub epsilon: f64,
    pub data_interval: u64,
    pub discovery_timeout: u64,
    pub max_attempts: u32,
}

impl Default for NodeConfig {
    fn default() -> Self {
        NodeConfig {
            mode: Mode::HcBwNd,
            weights: Weights::default(),
            linear_bw: false,
            window_ms: 50,
            max_hops: 16,
            monitor_interval: 100,
            epsilon: 0.1,
            data_interval: 10,
            discovery_timeout: 400,
            max_attempts: 6,
        }
    }
}

/// Scripted misbehavior applied by a relay to every RREQ it forwards.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Tamper {
    /// Insert a node id just before the adversary.
    PathInsert(NodeId),
    /// Remove the adversary's predecessor.
    PathDelete,
    /// Replace the adversary's predecessor.
    PathModify(NodeId),
    /// Bump `d_seqno` inside the sealed rreq.
    FieldTamper,
    /// Rebroadcast each forwarded frame once more a few ms later.
    Replay,
    /// Zero the clear-header path cost.
    CostDeflate,
}

/// An RREQ about to be forwarded, before the node's own MAC and seal.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardDraft {
    pub rreq: RreqImmutable,
    pub path: Vec<NodeId>,
    pub h: Digest,
    pub mac_prev: Option<Digest>,
    pub mutable: RreqMutable,
}

impl ForwardDraft {
    fn apply(&mut self, tamper: &Tamper) -> bool {
        let n = self.path.len();
        match tamper {
            Tamper::PathInsert(x) => {
                self.path.insert(n - 1, x.clone());
                self.h = hash(&self.h.0);
                self.mutable.hop_count += 1;
                self.mutable.metrics.hc += 1;
                true
            }
            Tamper::PathDelete if n >= 2 => {
                self.path.remove(n - 2);
                self.mutable.hop_count -= 1;
                self.mutable.metrics.hc = self.mutable.metrics.hc.saturating_sub(1);
                true
            }
            Tamper::PathModify(x) if n >= 2 => {
                self.path[n - 2] = x.clone();
                true
            }
            Tamper::FieldTamper => {
                self.rreq.d_seqno = self.rreq.d_seqno.wrapping_add(1);
                true
            }
            Tamper::CostDeflate => {
                self.mutable.path_cost = 0.0;
                true
            }
            _ => false,
        }
    }
}

/// One forwarded RREQ: the path received and the path sent on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForwardRecord {
    pub round: RoundId,
    pub in_path: Vec<NodeId>,
    pub out_path: Vec<NodeId>,
    pub tampered: bool,
}

/// An RREQ the destination admitted as a candidate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcceptedRequest {
    pub round: RoundId,
    pub path: Vec<NodeId>,
    pub hop_count: u8,
    pub h: Digest,
    pub h0: Digest,
}

/// An RREP the source accepted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcceptedReply {
    pub rrep: Rrep,
    pub q: Digest,
    pub q0: Digest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstalledRoute {
    pub s_seqno: u32,
    pub route: Vec<NodeId>,
    pub at: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceState {
    pub dest: NodeId,
    pub s_seqno: u32,
    pub b_id: u32,
    pub d_seqno: u32,
    pub attempts: u32,
    pub discovering: bool,
    pub route: Option<InstalledRoute>,
    pub monitor: Option<MonitorState>,
    pub data_seq: u32,
    pub installs: Vec<InstalledRoute>,
    pub rediscoveries: Vec<(u64, String)>,
    pub reps_received: u32,
    pub data_sent: u32,
    /// `(time, s_seqno)` of every data packet sent.
    pub data_log: Vec<(u64, u32)>,
}

#[derive(Debug, Clone)]
struct Observed {
    rreq: RreqImmutable,
    path: Vec<NodeId>,
    h: Digest,
    mac_curr: Digest,
}

#[derive(Debug, Clone)]
struct Held {
    from: NodeId,
    header: RreqHeader,
    body: RreqBody,
    waiting_for: NodeId,
}

#[derive(Debug, Clone)]
struct Entry {
    candidate: Candidate,
    route: Vec<NodeId>,
    rreq: RreqImmutable,
}

#[derive(Debug, Clone, Default)]
struct Collection {
    closed: bool,
    entries: Vec<Entry>,
}

enum Verdict {
    Ok,
    Unverified,
    Fail,
    Wait { on: NodeId, after: u64 },
}

/// Honest (or scripted) SRDP node state machine.
#[derive(Debug)]
pub struct SrdpNode {
    keys: NodeKeys,
    cfg: NodeConfig,
    tamper: Option<Tamper>,
    seqno: u32,
    seen: BTreeSet<RoundId>,
    observations: BTreeMap<(RoundId, NodeId), Observed>,
    holds: BTreeMap<u64, Held>,
    next_hold: u64,
    down: BTreeSet<NodeId>,
    collections: BTreeMap<RoundId, Collection>,
    collection_order: Vec<RoundId>,
    route_cache: BTreeMap<NodeId, Rrep>,
    replays: Vec<Vec<u8>>,
    source: Option<SourceState>,
    pub forward_log: Vec<ForwardRecord>,
    pub accepted_requests: Vec<AcceptedRequest>,
    pub accepted_replies: Vec<AcceptedReply>,
    pub delivered: Vec<(u32, u32, u64)>,
    pub unverified: u64,
}

impl SrdpNode {
    pub fn new(keys: NodeKeys, cfg: NodeConfig) -> Self {
        SrdpNode {
            keys,
            cfg,
            tamper: None,
            seqno: 0,
            seen: BTreeSet::new(),
            observations: BTreeMap::new(),
            holds: BTreeMap::new(),
            next_hold: 0,
            down: BTreeSet::new(),
            collections: BTreeMap::new(),
            collection_order: Vec::new(),
            route_cache: BTreeMap::new(),
            replays: Vec::new(),
            source: None,
            forward_log: Vec::new(),
            accepted_requests: Vec::new(),
            accepted_replies: Vec::new(),
            delivered: Vec::new(),
            unverified: 0,
        }
    }

    /// A node that discovers a route to `dest` when [`TIMER_START`] fires.
    pub fn source(keys: NodeKeys, cfg: NodeConfig, dest: NodeId) -> Self {
        let mut n = SrdpNode::new(keys, cfg);
        n.source = Some(SourceState {
            dest,
            s_seqno: 0,
            b_id: 0,
            d_seqno: 1,
            attempts: 0,
            discovering: false,
            route: None,
            monitor: None,
            data_seq: 0,
            installs: Vec::new(),
            rediscoveries: Vec::new(),
            reps_received: 0,
            data_sent: 0,
            data_log: Vec::new(),
        });
        n
    }

    pub fn with_tamper(mut self, tamper: Tamper) -> Self {
        self.tamper = Some(tamper);
        self
    }

    pub fn id(&self) -> &NodeId {
        &self.keys.id
    }

    pub fn keys(&self) -> &NodeKeys {
        &self.keys
    }

    pub fn source_state(&self) -> Option<&SourceState> {
        self.source.as_ref()
    }

    pub fn has_seen(&self, round: &RoundId) -> bool {
        self.seen.contains(round)
    }

    fn next_seqno(&mut self) -> u32 {
        self.seqno = self.seqno.wrapping_add(1);
        self.seqno
    }

    fn drop(reason: DropReason) -> Vec<Action> {
        vec![Action::Drop {
            reason: reason.as_str().to_owned(),
        }]
    }

    /// Builds `RREQ_0` for a fresh `(s_seqno, b_id)`.
    pub fn originate_rreq(&mut self) -> Result<RreqPacket, SrdpError> {
        let max_hops = self.cfg.max_hops;
        let src = self.source.as_mut().ok_or(SrdpError::NotASource)?;
        let k_sd = *self
            .keys
            .pairwise
            .get(&src.dest)
            .ok_or_else(|| SrdpError::NoPairwiseKey(src.dest.clone()))?;
        src.s_seqno += 1;
        src.b_id += 1;
        let rreq = RreqImmutable {
            s_addr: self.keys.id.clone(),
            s_seqno: src.s_seqno,
            b_id: src.b_id,
            d_addr: src.dest.clone(),
            d_seqno: src.d_seqno,
            max_hops,
        };
        let h0 = chain_anchor(&k_sd, &rreq);
        let m0 = two_hop_mac(&self.keys.broadcast_secret, &rreq, &[], &hash(&h0.0));
        let body = RreqBody {
            rreq: rreq.clone(),
            path: Vec::new(),
            mac_prev: None,
            mac_curr: m0,
            h: h0,
        };
        self.seen.insert(rreq.round());
        let header = RreqHeader {
            sender: self.keys.id.clone(),
            sender_seqno: self.next_seqno(),
            b_id: rreq.b_id,
            mutable: RreqMutable::ORIGIN,
        };
        Ok(RreqPacket {
            header,
            sealed: crypto::seal(&self.keys.rdn_key, &body.encode()),
        })
    }

    /// Adds the node's own MAC over the draft and seals it under `K_self`.
    pub fn seal_forward(&mut self, draft: ForwardDraft) -> RreqPacket {
        let mac_curr = two_hop_mac(&self.keys.broadcast_secret, &draft.rreq, &draft.path, &hash(&draft.h.0));
        let body = RreqBody {
            rreq: draft.rreq,
            path: draft.path,
            mac_prev: draft.mac_prev,
            mac_curr,
            h: draft.h,
        };
        RreqPacket {
            header: RreqHeader {
                sender: self.keys.id.clone(),
                sender_seqno: self.next_seqno(),
                b_id: body.rreq.b_id,
                mutable: draft.mutable,
            },
            sealed: crypto::seal(&self.keys.rdn_key, &body.encode()),
        }
    }

    fn start_round(&mut self) -> Vec<Action> {
        let pkt = match self.originate_rreq() {
            Ok(p) => p,
            Err(_) => return Self::drop(DropReason::NoPairwiseKey),
        };
        let src = self.source.as_mut().expect("source");
        src.attempts += 1;
        src.discovering = true;
        let seq = src.s_seqno as u64;
        vec![
            Action::Note(format!("discover {} round {}", src.dest, src.s_seqno)),
            Action::Broadcast(encode_frame(&Frame::Rreq(pkt))),
            Action::Timer {
                after: self.cfg.discovery_timeout.max(1),
                tag: tag(T_DISCOVERY, seq),
            },
        ]
    }

    fn rediscover(&mut self, ctx: &NodeCtx<'_>, why: &str) -> Vec<Action> {
        let Some(src) = self.source.as_mut() else {
            return Vec::new();
        };
        if src.discovering {
            return Vec::new();
        }
        src.route = None;
        src.monitor = None;
        src.attempts = 0;
        src.rediscoveries.push((ctx.clock, why.to_owned()));
        let mut out = vec![Action::Note(format!("rediscover: {why}"))];
        out.extend(self.start_round());
        out
    }

    fn verify(&self, ctx: &NodeCtx<'_>, body: &RreqBody, len: usize) -> Verdict {
        let n = body.path.len();
        let Some(mac_prev) = body.mac_prev else {
            return Verdict::Ok;
        };
        let x = if n >= 2 { &body.path[n - 2] } else { &body.rreq.s_addr };
        let prefix = &body.path[..n - 1];
        if !self.keys.universe.contains(x) {
            return Verdict::Fail;
        }
        if let Some(t) = self.keys.broadcast_secret_of(x) {
            return if two_hop_mac(t, &body.rreq, prefix, &body.h) == mac_prev {
                Verdict::Ok
            } else {
                Verdict::Fail
            };
        }
        if !self.keys.neighbor_keys.contains_key(x) {
            return Verdict::Unverified;
        }
        // Adjacent to X, so revoked from T_X: compare against X's own frame.
        if let Some(obs) = self.observations.get(&(body.rreq.round(), x.clone())) {
            let ok = obs.rreq == body.rreq && obs.path == prefix && hash(&obs.h.0) == body.h && obs.mac_curr == mac_prev;
            return if ok { Verdict::Ok } else { Verdict::Fail };
        }
        if self.down.contains(x) {
            return Verdict::Unverified;
        }
        let after = ctx
            .topology
            .link(x, &self.keys.id)
            .map(|l| l.delay_ms + transmission_ms(len as u64 * 8, l.bw_mbps) + 1)
            .unwrap_or(1);
        Verdict::Wait { on: x.clone(), after }
    }

    fn handle_rreq(&mut self, ctx: &NodeCtx<'_>, from: &NodeId, p: RreqPacket, len: usize) -> Vec<Action> {
        if &p.header.sender != from {
            return Self::drop(DropReason::Malformed);
        }
        let Some(k) = self.keys.neighbor_keys.get(from) else {
            return Self::drop(DropReason::SealOpenFail);
        };
        let Ok(plain) = crypto::open(k, &p.sealed) else {
            return Self::drop(DropReason::SealOpenFail);
        };
        let Ok(body) = RreqBody::decode(&plain) else {
            return Self::drop(DropReason::Malformed);
        };
        let expected_sender = body.path.last().unwrap_or(&body.rreq.s_addr);
        if p.header.b_id != body.rreq.b_id
            || p.header.mutable.hop_count as usize != body.path.len()
            || expected_sender != from
            || body.path.is_empty() != body.mac_prev.is_none()
        {
            return Self::drop(DropReason::Malformed);
        }
        let round = body.rreq.round();
        let mut out = Vec::new();
        let key = (round.clone(), from.clone());
        if !self.observations.contains_key(&key) {
            self.observations.insert(
                key,
                Observed {
                    rreq: body.rreq.clone(),
                    path: body.path.clone(),
                    h: body.h,
                    mac_curr: body.mac_curr,
                },
            );
            out.extend(self.release_holds(ctx, &round, Some(from)));
        }
        match self.verify(ctx, &body, len) {
            Verdict::Ok => out.extend(self.admit(ctx, from, p.header, body, false)),
            Verdict::Unverified => out.extend(self.admit(ctx, from, p.header, body, true)),
            Verdict::Fail => out.extend(Self::drop(DropReason::TwoHopAuthFail)),
            Verdict::Wait { on, after } => {
                let id = self.next_hold;
                self.next_hold += 1;
                self.holds.insert(
                    id,
                    Held {
                        from: from.clone(),
                        header: p.header,
                        body,
                        waiting_for: on,
                    },
                );
                out.push(Action::Timer {
                    after,
                    tag: tag(T_HOLD, id),
                });
            }
        }
        out
    }

    /// Re-checks held frames of `round` once the awaited observation (or a
    /// link failure) makes a verdict possible.
    fn release_holds(&mut self, ctx: &NodeCtx<'_>, round: &RoundId, on: Option<&NodeId>) -> Vec<Action> {
        let ready: Vec<u64> = self
            .holds
            .iter()
            .filter(|(_, h)| &h.body.rreq.round() == round && on.is_none_or(|x| &h.waiting_for == x))
            .map(|(id, _)| *id)
            .collect();
        let mut out = Vec::new();
        for id in ready {
            let held = self.holds.remove(&id).expect("listed");
            out.extend(self.resolve_hold(ctx, held, false));
        }
        out
    }

    fn resolve_hold(&mut self, ctx: &NodeCtx<'_>, held: Held, timed_out: bool) -> Vec<Action> {
        match self.verify(ctx, &held.body, 0) {
            Verdict::Ok => self.admit(ctx, &held.from, held.header, held.body, false),
            Verdict::Unverified => self.admit(ctx, &held.from, held.header, held.body, true),
            Verdict::Fail => Self::drop(DropReason::TwoHopAuthFail),
            Verdict::Wait { .. } if timed_out => Self::drop(DropReason::TwoHopAuthFail),
            Verdict::Wait { on, .. } => {
                let id = self.next_hold;
                self.next_hold += 1;
                self.holds.insert(id, Held { waiting_for: on, ..held });
                Vec::new()
            }
        }
    }

    fn admit(
        &mut self,
        ctx: &NodeCtx<'_>,
        from: &NodeId,
        header: RreqHeader,
        body: RreqBody,
        unverified: bool,
    ) -> Vec<Action> {
        if unverified {
            self.unverified += 1;
        }
        if body.rreq.d_addr == self.keys.id {
            return self.collect(ctx, from, header, body);
        }
        let round = body.rreq.round();
        if self.seen.contains(&round) {
            return Self::drop(DropReason::Duplicate);
        }
        if body.rreq.s_addr == self.keys.id || body.path.contains(&self.keys.id) {
            return Self::drop(DropReason::Loop);
        }
        if header.mutable.hop_count >= body.rreq.max_hops {
            return Self::drop(DropReason::HopLimit);
        }
        let Some(link) = ctx.topology.link(from, &self.keys.id) else {
            return Self::drop(DropReason::Malformed);
        };
        let m = header.mutable;
        let Ok(path_cost) = path_cost_step(
            m.path_cost,
            link.bw_mbps,
            link.delay_ms as f64,
            &self.cfg.weights,
            self.cfg.linear_bw,
        ) else {
            return Self::drop(DropReason::Malformed);
        };
        let mut path = body.path.clone();
        path.push(self.keys.id.clone());
        let mut draft = ForwardDraft {
            rreq: body.rreq.clone(),
            path,
            h: hash(&body.h.0),
            mac_prev: Some(body.mac_curr),
            mutable: RreqMutable {
                hop_count: m.hop_count + 1,
                path_cost,
                metrics: m.metrics.extend(link.bw_mbps, link.delay_ms as f64),
            },
        };
        self.seen.insert(round.clone());
        let tampered = match self.tamper.clone() {
            Some(t) => draft.apply(&t),
            None => false,
        };
        self.forward_log.push(ForwardRecord {
            round,
            in_path: body.path,
            out_path: draft.path.clone(),
            tampered,
        });
        let frame = encode_frame(&Frame::Rreq(self.seal_forward(draft)));
        let mut out = vec![Action::Broadcast(frame.clone())];
        if self.tamper == Some(Tamper::Replay) {
            self.replays.push(frame);
            out.push(Action::Timer {
                after: 5,
                tag: tag(T_REPLAY, self.replays.len() as u64 - 1),
            });
        }
        out
    }

    fn collect(&mut self, ctx: &NodeCtx<'_>, from: &NodeId, header: RreqHeader, body: RreqBody) -> Vec<Action> {
        let Some(k_sd) = self.keys.pairwise.get(&body.rreq.s_addr) else {
            return Self::drop(DropReason::NoPairwiseKey);
        };
        let h0 = chain_anchor(k_sd, &body.rreq);
        if chain(&h0, body.path.len()) != body.h {
            return Self::drop(DropReason::ChainMismatch);
        }
        let round = body.rreq.round();
        self.accepted_requests.push(AcceptedRequest {
            round: round.clone(),
            path: body.path.clone(),
            hop_count: header.mutable.hop_count,
            h: body.h,
            h0,
        });
        let mut out = Vec::new();
        if !self.collections.contains_key(&round) {
            self.collections.insert(round.clone(), Collection::default());
            self.collection_order.push(round.clone());
            out.push(Action::Timer {
                after: self.cfg.window_ms,
                tag: tag(T_COLLECT, self.collection_order.len() as u64 - 1),
            });
        }
        let Some(link) = ctx.topology.link(from, &self.keys.id).copied() else {
            return Self::drop(DropReason::Malformed);
        };
        let m = header.mutable;
        let Ok(path_cost) = path_cost_step(
            m.path_cost,
            link.bw_mbps,
            link.delay_ms as f64,
            &self.cfg.weights,
            self.cfg.linear_bw,
        ) else {
            return Self::drop(DropReason::Malformed);
        };
        let coll = self.collections.get_mut(&round).expect("inserted");
        if coll.closed {
            out.extend(Self::drop(DropReason::WindowClosed));
            return out;
        }
        if coll.entries.iter().any(|e| e.route == body.path) {
            out.extend(Self::drop(DropReason::Duplicate));
            return out;
        }
        let mut full = Vec::with_capacity(body.path.len() + 2);
        full.push(body.rreq.s_addr.clone());
        full.extend(body.path.iter().cloned());
        full.push(self.keys.id.clone());
        coll.entries.push(Entry {
            candidate: Candidate {
                path: full,
                path_cost,
                metrics: m.metrics.extend(link.bw_mbps, link.delay_ms as f64),
            },
            route: body.path,
            rreq: body.rreq,
        });
        out
    }

    /// Closes the collection window of `round` and answers the best candidate.
    pub fn finalize_destination(&mut self, round: &RoundId) -> Vec<Action> {
        let mut out = Vec::new();
        let stale: Vec<u64> = self
            .holds
            .iter()
            .filter(|(_, h)| &h.body.rreq.round() == round)
            .map(|(id, _)| *id)
            .collect();
        for id in stale {
            self.holds.remove(&id);
            out.extend(Self::drop(DropReason::WindowClosed));
        }
        let Some(coll) = self.collections.get_mut(round) else {
            out.extend(Self::drop(DropReason::NoValidCandidate));
            return out;
        };
        coll.closed = true;
        let mode = self.cfg.mode;
        let Some(best) = coll
            .entries
            .iter()
            .min_by(|a, b| {
                a.candidate
                    .path_cost
                    .total_cmp(&b.candidate.path_cost)
                    .then_with(|| compare_candidates(&a.candidate, &b.candidate, mode))
            })
            .cloned()
        else {
            out.extend(Self::drop(DropReason::NoValidCandidate));
            return out;
        };
        let k_sd = *self.keys.pairwise.get(&best.rreq.s_addr).expect("checked at admission");
        let rrep = Rrep {
            s_addr: best.rreq.s_addr.clone(),
            s_seqno: best.rreq.s_seqno,
            d_addr: self.keys.id.clone(),
            d_seqno: best.rreq.d_seqno,
            route: best.route.clone(),
        };
        let rev = rrep.reverse_path();
        let q0 = reply_anchor(&k_sd, &rrep);
        let mac_curr = rev
            .get(2)
            .and_then(|t| self.keys.pairwise.get(t))
            .map(|k| reply_mac(k, &rrep, &hash(&q0.0)));
        let p = products(&best.candidate.metrics);
        out.push(Action::Note(format!(
            "select {:?} cost {} hbdp {}",
            best.route, best.candidate.path_cost, p.hbdp
        )));
        let body = RrepBody {
            rrep,
            q: q0,
            mac_prev: None,
            mac_curr,
        };
        out.push(self.send_rrep(&rev[1], &body));
        out
    }

    fn send_rrep(&mut self, to: &NodeId, body: &RrepBody) -> Action {
        let pkt = RrepPacket {
            sender: self.keys.id.clone(),
            sender_seqno: self.next_seqno(),
            sealed: crypto::seal(&self.keys.rdn_key, &body.encode()),
        };
        Action::Unicast {
            to: to.clone(),
            frame: encode_frame(&Frame::Rrep(pkt)),
        }
    }

    fn handle_rrep(&mut self, ctx: &NodeCtx<'_>, from: &NodeId, p: RrepPacket) -> Vec<Action> {
        if &p.sender != from {
            return Self::drop(DropReason::Malformed);
        }
        let Some(k) = self.keys.neighbor_keys.get(from) else {
            return Self::drop(DropReason::SealOpenFail);
        };
        let Ok(plain) = crypto::open(k, &p.sealed) else {
            return Self::drop(DropReason::SealOpenFail);
        };
        let Ok(body) = RrepBody::decode(&plain) else {
            return Self::drop(DropReason::Malformed);
        };
        self.process_rrep(ctx, from, body)
    }

    /// Verifies and forwards (or, at the source, accepts) a decoded reply.
    pub fn process_rrep(&mut self, ctx: &NodeCtx<'_>, from: &NodeId, body: RrepBody) -> Vec<Action> {
        let rev = body.rrep.reverse_path();
        let Some(pos) = rev.iter().skip(1).position(|n| n == &self.keys.id).map(|p| p + 1) else {
            return Self::drop(DropReason::NotOnRoute);
        };
        if &rev[pos - 1] != from {
            return Self::drop(DropReason::NotOnRoute);
        }
        match (pos >= 2, body.mac_prev) {
            (true, Some(m)) => {
                let ok = self
                    .keys
                    .pairwise
                    .get(&rev[pos - 2])
                    .is_some_and(|k| reply_mac(k, &body.rrep, &body.q) == m);
                if !ok {
                    return Self::drop(DropReason::TwoHopAuthFail);
                }
            }
            (true, None) => return Self::drop(DropReason::TwoHopAuthFail),
            (false, Some(_)) => return Self::drop(DropReason::Malformed),
            (false, None) => {}
        }
        if pos == rev.len() - 1 {
            return self.accept_rrep(ctx, body);
        }
        let q = hash(&body.q.0);
        let mac_curr = rev
            .get(pos + 2)
            .and_then(|t| self.keys.pairwise.get(t))
            .map(|k| reply_mac(k, &body.rrep, &hash(&q.0)));
        self.route_cache.insert(body.rrep.s_addr.clone(), body.rrep.clone());
        let next = RrepBody {
            rrep: body.rrep,
            q,
            mac_prev: body.mac_curr,
            mac_curr,
        };
        vec![self.send_rrep(&rev[pos + 1], &next)]
    }

    /// Source-side q-chain check and route installation.
    pub fn accept_rrep(&mut self, ctx: &NodeCtx<'_>, body: RrepBody) -> Vec<Action> {
        let Some(src) = self.source.as_ref() else {
            return Self::drop(DropReason::Unexpected);
        };
        if !src.discovering || body.rrep.s_seqno != src.s_seqno || body.rrep.d_addr != src.dest {
            return Self::drop(DropReason::Stale);
        }
        let Some(k_sd) = self.keys.pairwise.get(&src.dest) else {
            return Self::drop(DropReason::NoPairwiseKey);
        };
        let q0 = reply_anchor(k_sd, &body.rrep);
        if chain(&q0, body.rrep.route.len()) != body.q {
            return Self::drop(DropReason::QChainMismatch);
        }
        self.accepted_replies.push(AcceptedReply {
            rrep: body.rrep.clone(),
            q: body.q,
            q0,
        });
        let bdp = route_bdp(ctx.topology, &self.keys.id, &body.rrep.route, &body.rrep.d_addr);
        let interval = self.cfg.monitor_interval;
        let epsilon = self.cfg.epsilon;
        let src = self.source.as_mut().expect("source");
        let installed = InstalledRoute {
            s_seqno: src.s_seqno,
            route: body.rrep.route.clone(),
            at: ctx.clock,
        };
        src.discovering = false;
        src.route = Some(installed.clone());
        src.installs.push(installed);
        src.monitor = MonitorState::new(body.rrep.route.clone(), bdp.unwrap_or(0.0), interval, epsilon, ctx.clock).ok();
        let seq = src.s_seqno as u64;
        vec![
            Action::Note(format!("install {:?}", body.rrep.route)),
            Action::Timer {
                after: 0,
                tag: tag(T_DATA, seq),
            },
            Action::Timer {
                after: interval,
                tag: tag(T_MONITOR, seq),
            },
        ]
    }

    fn handle_rep(&mut self, ctx: &NodeCtx<'_>, from: &NodeId, rep: RepPacket) -> Vec<Action> {
        if rep.s_addr == self.keys.id {
            let Some(k) = self.keys.pairwise.get(&rep.reporter) else {
                return Self::drop(DropReason::SealOpenFail);
            };
            let code = match open_rep(&rep, k) {
                Ok(c) => c,
                Err(_) => return Self::drop(DropReason::SealOpenFail),
            };
            let Some(src) = self.source.as_mut() else {
                return Self::drop(DropReason::Unexpected);
            };
            if src.route.as_ref().is_none_or(|r| r.s_seqno != rep.s_seqno) {
                return Self::drop(DropReason::Stale);
            }
            src.reps_received += 1;
            return self.rediscover(ctx, &format!("{code:?} reported by {}", rep.reporter));
        }
        let Some(pos) = rep.route.iter().position(|n| n == &self.keys.id) else {
            return Self::drop(DropReason::NotOnRoute);
        };
        let toward_d = rep.route.get(pos + 1).unwrap_or(&rep.d_addr);
        if toward_d != from {
            return Self::drop(DropReason::NotOnRoute);
        }
        let next = if pos == 0 { rep.s_addr.clone() } else { rep.route[pos - 1].clone() };
        vec![Action::Unicast {
            to: next,
            frame: encode_frame(&Frame::Rep(rep)),
        }]
    }

    fn handle_data(&mut self, ctx: &NodeCtx<'_>, d: DataPacket) -> Vec<Action> {
        if d.d_addr == self.keys.id {
            self.delivered.push((d.s_seqno, d.seq, ctx.clock));
            return Vec::new();
        }
        let Some(pos) = d.route.iter().position(|n| n == &self.keys.id) else {
            return Self::drop(DropReason::NotOnRoute);
        };
        let next = d.route.get(pos + 1).unwrap_or(&d.d_addr).clone();
        vec![Action::Unicast {
            to: next,
            frame: encode_frame(&Frame::Data(d)),
        }]
    }

    fn on_data_tick(&mut self, ctx: &NodeCtx<'_>, seq: u32) -> Vec<Action> {
        let id = self.keys.id.clone();
        let interval = self.cfg.data_interval;
        let Some(src) = self.source.as_mut() else {
            return Vec::new();
        };
        let Some(route) = src.route.as_ref().filter(|r| r.s_seqno == seq) else {
            return Vec::new();
        };
        src.data_seq += 1;
        src.data_sent += 1;
        src.data_log.push((ctx.clock, seq));
        let pkt = DataPacket {
            s_addr: id,
            s_seqno: seq,
            d_addr: src.dest.clone(),
            seq: src.data_seq,
            route: route.route.clone(),
            payload: src.data_seq.to_be_bytes().to_vec(),
        };
        let first = route.route.first().unwrap_or(&src.dest).clone();
        vec![
            Action::Unicast {
                to: first,
                frame: encode_frame(&Frame::Data(pkt)),
            },
            Action::Timer {
                after: interval,
                tag: tag(T_DATA, seq as u64),
            },
        ]
    }

    fn on_monitor_tick(&mut self, ctx: &NodeCtx<'_>, seq: u32) -> Vec<Action> {
        let id = self.keys.id.clone();
        let interval = self.cfg.monitor_interval;
        let Some(src) = self.source.as_mut() else {
            return Vec::new();
        };
        if src.route.as_ref().is_none_or(|r| r.s_seqno != seq) {
            return Vec::new();
        }
        let route = src.route.as_ref().expect("checked").route.clone();
        let first = route.first().unwrap_or(&src.dest).clone();
        let obs = Observation {
            neighbor_responsive: !self.down.contains(&first),
            current_bdp: route_bdp(ctx.topology, &id, &route, &src.dest).unwrap_or(0.0),
        };
        let Some(state) = src.monitor.as_mut() else {
            return Vec::new();
        };
        match monitor(state, obs, ctx.clock) {
            MonitorAction::Keep => vec![Action::Timer {
                after: interval,
                tag: tag(T_MONITOR, seq as u64),
            }],
            MonitorAction::SendRep(code) | MonitorAction::Rediscover(code) => {
                self.rediscover(ctx, &format!("{code:?} observed at source"))
            }
        }
    }

    fn on_discovery_timeout(&mut self, seq: u32) -> Vec<Action> {
        let max = self.cfg.max_attempts;
        let Some(src) = self.source.as_mut() else {
            return Vec::new();
        };
        if !src.discovering || src.s_seqno != seq {
            return Vec::new();
        }
        if src.attempts >= max {
            src.discovering = false;
            return vec![Action::Note("discovery abandoned".to_owned())];
        }
        self.start_round()
    }

    fn build_link_rep(&self, rrep: &Rrep) -> Option<Action> {
        let k = self.keys.pairwise.get(&rrep.s_addr)?;
        let pos = rrep.route.iter().position(|n| n == &self.keys.id)?;
        let rep = build_rep(
            &rrep.s_addr,
            rrep.s_seqno,
            &rrep.d_addr,
            rrep.d_seqno,
            &rrep.route,
            &self.keys.id,
            ErrorCode::LinkBreak,
            k,
        );
        let to = if pos == 0 { rrep.s_addr.clone() } else { rrep.route[pos - 1].clone() };
        Some(Action::Unicast {
            to,
            frame: encode_frame(&Frame::Rep(rep)),
        })
    }
}

/// BDP of `[src] ++ route ++ [dst]` under the topology's current metrics.
pub fn route_bdp(topo: &Topology, src: &NodeId, route: &[NodeId], dst: &NodeId) -> Option<f64> {
    let mut m = PathMetrics::EMPTY;
    let mut prev = src;
    for n in route.iter().chain(std::iter::once(dst)) {
        let l = topo.link(prev, n)?;
        m = m.extend(l.bw_mbps, l.delay_ms as f64);
        prev = n;
    }
    Some(products(&m).bdp)
}

impl NodeBehavior for SrdpNode {
    fn on_frame(&mut self, ctx: &NodeCtx<'_>, from: &NodeId, frame: &[u8]) -> Vec<Action> {
        match decode_frame(frame) {
            Err(_) => Self::drop(DropReason::Malformed),
            Ok(Frame::Rreq(p)) => self.handle_rreq(ctx, from, p, frame.len()),
            Ok(Frame::Rrep(p)) => self.handle_rrep(ctx, from, p),
            Ok(Frame::Rep(p)) => self.handle_rep(ctx, from, p),
            Ok(Frame::Data(d)) => self.handle_data(ctx, d),
            Ok(Frame::Session(_)) => Self::drop(DropReason::Unexpected),
        }
    }

    fn on_timer(&mut self, ctx: &NodeCtx<'_>, t: u64) -> Vec<Action> {
        let value = t & VALUE_MASK;
        match t >> KIND_SHIFT {
            T_START => {
                if self.source.is_none() {
                    return Vec::new();
                }
                self.start_round()
            }
            T_HOLD => match self.holds.remove(&value) {
                Some(held) => self.resolve_hold(ctx, held, true),
                None => Vec::new(),
            },
            T_COLLECT => match self.collection_order.get(value as usize).cloned() {
                Some(round) => self.finalize_destination(&round),
                None => Vec::new(),
            },
            T_DISCOVERY => self.on_discovery_timeout(value as u32),
            T_MONITOR => self.on_monitor_tick(ctx, value as u32),
            T_DATA => self.on_data_tick(ctx, value as u32),
            T_REPLAY => match self.replays.get(value as usize) {
                Some(f) => vec![Action::Note("replay".to_owned()), Action::Broadcast(f.clone())],
                None => Vec::new(),
            },
            _ => Vec::new(),
        }
    }

    fn on_link_down(&mut self, ctx: &NodeCtx<'_>, neighbor: &NodeId) -> Vec<Action> {
        self.down.insert(neighbor.clone());
        let mut out = Vec::new();
        let waiting: Vec<RoundId> = self
            .holds
            .values()
            .filter(|h| &h.waiting_for == neighbor)
            .map(|h| h.body.rreq.round())
            .collect();
        for round in waiting {
            out.extend(self.release_holds(ctx, &round, Some(neighbor)));
        }
        let broken: Vec<Rrep> = self
            .route_cache
            .values()
            .filter(|r| {
                let rev = r.reverse_path();
                rev.iter()
                    .position(|n| n == &self.keys.id)
                    .is_some_and(|p| p > 0 && &rev[p - 1] == neighbor)
            })
            .cloned()
            .collect();
        for r in broken {
            self.route_cache.remove(&r.s_addr);
            out.extend(self.build_link_rep(&r));
        }
        let first_hop_down = self.source.as_ref().is_some_and(|s| {
            s.route
                .as_ref()
                .is_some_and(|r| r.route.first().unwrap_or(&s.dest) == neighbor)
        });
        if first_hop_down {
            out.extend(self.rediscover(ctx, "LinkBreak observed at source"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kdc::Kdc;
    use crate::netsim::{load_topology, Simulator, Stop, TraceEvent};
    use crate::srdp::provision;

    const LINE: &str = "node S broker\nnode A relay\nnode B relay\nnode C relay\nnode D coordinator\n\
link S A 10 2\nlink A B 10 2\nlink B C 10 2\nlink C D 10 2\n";

    fn nodes(doc: &str, tamper: Option<(&str, Tamper)>) -> (Topology, BTreeMap<NodeId, SrdpNode>) {
        let topo = load_topology(doc).unwrap();
        let mut kdc = Kdc::new(64, 8, [5; 32]).unwrap();
        let prov = provision(&topo, &mut kdc).unwrap();
        let mut map = BTreeMap::new();
        for (id, keys) in prov.keys {
            let mut n = if id.as_str() == "S" {
                SrdpNode::source(keys, NodeConfig::default(), "D".into())
            } else {
                SrdpNode::new(keys, NodeConfig::default())
            };
            if let Some((who, t)) = &tamper {
                if id.as_str() == *who {
                    n = n.with_tamper(t.clone());
                }
            }
            map.insert(id, n);
        }
        (topo, map)
    }

    fn run(doc: &str, tamper: Option<(&str, Tamper)>) -> Simulator<SrdpNode> {
        let (topo, map) = nodes(doc, tamper);
        let mut sim = Simulator::new(topo, 1, map).unwrap();
        sim.schedule_timer(&"S".into(), 0, TIMER_START).unwrap();
        sim.run_until(Stop::at(300));
        sim
    }

    fn drops(sim: &Simulator<SrdpNode>, reason: DropReason) -> Vec<NodeId> {
        sim.trace()
            .iter()
            .filter_map(|e| match e {
                TraceEvent::Drop { node, reason: r, .. } if r == reason.as_str() => Some(node.clone()),
                _ => None,
            })
            .collect()
    }

    fn ctx<'a>(node: &'a NodeId, topo: &'a Topology) -> NodeCtx<'a> {
        NodeCtx {
            node,
            clock: 0,
            topology: topo,
        }
    }

    fn rreq_of(actions: &[Action]) -> RreqPacket {
        actions
            .iter()
            .find_map(|a| match a {
                Action::Broadcast(f) => match decode_frame(f) {
                    Ok(Frame::Rreq(p)) => Some(p),
                    _ => None,
                },
                _ => None,
            })
            .expect("broadcast rreq")
    }

    #[test]
    fn origin_frame_shape() {
        let (topo, mut map) = nodes(LINE, None);
        let s = map.get_mut(&NodeId::from("S")).unwrap();
        let p1 = s.originate_rreq().unwrap();
        let p2 = s.originate_rreq().unwrap();
        assert_ne!(p1.header.b_id, p2.header.b_id);
        assert_eq!(p1.header.mutable, RreqMutable::ORIGIN);
        let body = RreqBody::decode(&crypto::open(&s.keys.rdn_key, &p1.sealed).unwrap()).unwrap();
        assert!(body.path.is_empty() && body.mac_prev.is_none());
        let k_sd = s.keys.pairwise[&NodeId::from("D")];
        assert_eq!(body.h, chain_anchor(&k_sd, &body.rreq));
        assert_eq!(
            body.mac_curr,
            two_hop_mac(&s.keys.broadcast_secret, &body.rreq, &[], &hash(&body.h.0))
        );
        let _ = topo;
    }

    #[test]
    fn first_hop_output_form() {
        let (topo, mut map) = nodes(LINE, None);
        let s_id = NodeId::from("S");
        let a_id = NodeId::from("A");
        let p0 = map.get_mut(&s_id).unwrap().originate_rreq().unwrap();
        let body0 = RreqBody::decode(&crypto::open(&map[&s_id].keys.rdn_key, &p0.sealed).unwrap()).unwrap();
        let frame = encode_frame(&Frame::Rreq(p0));
        let a = map.get_mut(&a_id).unwrap();
        let out = a.on_frame(&ctx(&a_id, &topo), &s_id, &frame);
        let p1 = rreq_of(&out);
        let body1 = RreqBody::decode(&crypto::open(&a.keys.rdn_key, &p1.sealed).unwrap()).unwrap();
        assert_eq!(body1.path, vec![a_id.clone()]);
        assert_eq!(body1.mac_prev, Some(body0.mac_curr));
        assert_eq!(body1.h, hash(&body0.h.0));
        assert_eq!(
            body1.mac_curr,
            two_hop_mac(&a.keys.broadcast_secret, &body1.rreq, &[a_id.clone()], &hash(&body1.h.0))
        );
        assert_eq!(p1.header.sender, a_id);
        assert_eq!(p1.header.mutable.hop_count, 1);
        let again = a.on_frame(&ctx(&a_id, &topo), &s_id, &frame);
        assert_eq!(
            again,
            vec![Action::Drop {
                reason: "Duplicate".into()
            }]
        );
    }

    #[test]
    fn honest_line_installs_the_only_route() {
        let sim = run(LINE, None);
        let s = sim.behavior(&"S".into()).unwrap().source_state().unwrap();
        let r = s.route.as_ref().expect("route");
        assert_eq!(r.route, ["A", "B", "C"].map(NodeId::from).to_vec());
        for reason in DropReason::ALL.into_iter().filter(|r| r.is_detection()) {
            assert!(drops(&sim, reason).is_empty(), "{reason}");
        }
        let d = sim.behavior(&"D".into()).unwrap();
        assert!(!d.delivered.is_empty());
        let rep = &sim.behavior(&"S".into()).unwrap().accepted_replies[0];
        assert_eq!(rep.q, chain(&rep.q0, 3));
    }

    #[test]
    fn path_insert_is_caught_downstream() {
        let sim = run(LINE, Some(("B", Tamper::PathInsert("X9".into()))));
        // A sees B's rebroadcast too; both are neighbors of B.
        assert_eq!(drops(&sim, DropReason::TwoHopAuthFail), ["A", "C"].map(NodeId::from).to_vec());
        assert!(sim.behavior(&"S".into()).unwrap().source_state().unwrap().installs.is_empty());
    }

    #[test]
    fn path_delete_and_modify_are_caught() {
        let sim = run(LINE, Some(("B", Tamper::PathDelete)));
        assert!(!drops(&sim, DropReason::TwoHopAuthFail).is_empty());
        let sim = run(LINE, Some(("C", Tamper::PathModify("S".into()))));
        assert!(!drops(&sim, DropReason::TwoHopAuthFail).is_empty());
        let sim = run(LINE, Some(("B", Tamper::FieldTamper)));
        assert!(!drops(&sim, DropReason::TwoHopAuthFail).is_empty());
    }

    #[test]
    fn replay_is_suppressed_as_duplicate() {
        let sim = run(LINE, Some(("B", Tamper::Replay)));
        assert!(drops(&sim, DropReason::Duplicate).contains(&NodeId::from("C")));
        assert!(sim.behavior(&"S".into()).unwrap().source_state().unwrap().route.is_some());
    }

    #[test]
    fn destination_prefers_cheaper_candidate() {
        // S-A-D costs 2 hops; S-B-C-D costs 3 with HC weights.
        let doc = "node S broker\nnode A relay\nnode B relay\nnode C relay\nnode D coordinator\n\
link S A 10 2\nlink A D 10 2\nlink S B 10 1\nlink B C 10 1\nlink C D 10 1\n";
        let sim = run(doc, None);
        let s = sim.behavior(&"S".into()).unwrap().source_state().unwrap();
        assert_eq!(s.route.as_ref().unwrap().route, vec![NodeId::from("A")]);
    }

    #[test]
    fn chain_mismatch_is_rejected_at_destination() {
        let (topo, mut map) = nodes("node S broker\nnode A relay\nnode D coordinator\nlink S A 1 1\nlink A D 1 1\n", None);
        let a_id = NodeId::from("A");
        let d_id = NodeId::from("D");
        let s_id = NodeId::from("S");
        let p0 = map.get_mut(&s_id).unwrap().originate_rreq().unwrap();
        let body0 = RreqBody::decode(&crypto::open(&map[&s_id].keys.rdn_key, &p0.sealed).unwrap()).unwrap();
        // A forwards but leaves h_0 in place of h_1, with a valid M_0.
        let a = map.get_mut(&a_id).unwrap();
        let draft = ForwardDraft {
            rreq: body0.rreq.clone(),
            path: vec![a_id.clone()],
            h: body0.h,
            mac_prev: Some(body0.mac_curr),
            mutable: RreqMutable {
                hop_count: 1,
                path_cost: 1.0,
                metrics: PathMetrics { hc: 1, bw: 1.0, nd: 1.0 },
            },
        };
        let frame = encode_frame(&Frame::Rreq(a.seal_forward(draft)));
        let d = map.get_mut(&d_id).unwrap();
        let out = d.on_frame(&ctx(&d_id, &topo), &a_id, &frame);
        assert!(out.contains(&Action::Drop {
            reason: "TwoHopAuthFail".into()
        }) || out.contains(&Action::Drop {
            reason: "ChainMismatch".into()
        }));
        assert!(d.accepted_requests.is_empty());
    }

    #[test]
    fn rrep_off_route_and_corrupted_q() {
        let (topo, mut map) = nodes(LINE, None);
        let s_id = NodeId::from("S");
        let rrep = Rrep {
            s_addr: s_id.clone(),
            s_seqno: 1,
            d_addr: "D".into(),
            d_seqno: 1,
            route: vec!["A".into()],
        };
        let b_id = NodeId::from("B");
        let b = map.get_mut(&b_id).unwrap();
        let body = RrepBody {
            rrep: rrep.clone(),
            q: hash(b"q"),
            mac_prev: None,
            mac_curr: None,
        };
        assert_eq!(
            b.process_rrep(&ctx(&b_id, &topo), &"A".into(), body),
            vec![Action::Drop {
                reason: "NotOnRoute".into()
            }]
        );
        let s = map.get_mut(&s_id).unwrap();
        s.originate_rreq().unwrap();
        s.source.as_mut().unwrap().discovering = true;
        let k_sd = s.keys.pairwise[&NodeId::from("D")];
        let q0 = reply_anchor(&k_sd, &rrep);
        let bad = RrepBody {
            rrep: rrep.clone(),
            q: hash(&q0.0),
            mac_prev: None,
            mac_curr: None,
        };
        let mut wrong_q = bad.clone();
        wrong_q.q.0[0] ^= 1;
        assert_eq!(
            s.accept_rrep(&ctx(&s_id, &topo), wrong_q),
            vec![Action::Drop {
                reason: "QChainMismatch".into()
            }]
        );
        let out = s.accept_rrep(&ctx(&s_id, &topo), bad);
        assert!(matches!(out[0], Action::Note(_)));
        assert_eq!(s.source_state().unwrap().route.as_ref().unwrap().route, rrep.route);
    }

    #[test]
    fn link_break_triggers_rep_and_rediscovery() {
        let doc = "node S broker\nnode A relay\nnode B relay\nnode C relay\nnode E relay\nnode D coordinator\n\
link S A 10 2\nlink A B 10 2\nlink B D 10 2\nlink S C 10 5\nlink C E 10 5\nlink E D 10 5\n";
        let (topo, map) = nodes(doc, None);
        let mut sim = Simulator::new(topo, 1, map).unwrap();
        sim.set_detect_delay(5);
        sim.schedule_timer(&"S".into(), 0, TIMER_START).unwrap();
        sim.run_until(Stop::at(100));
        let s = sim.behavior(&"S".into()).unwrap().source_state().unwrap();
        assert_eq!(s.route.as_ref().unwrap().route, ["A", "B"].map(NodeId::from).to_vec());
        sim.break_link(&"B".into(), &"D".into(), 110).unwrap();
        sim.run_until(Stop::at(600));
        let s = sim.behavior(&"S".into()).unwrap().source_state().unwrap();
        assert_eq!(s.reps_received, 1);
        assert_eq!(s.route.as_ref().unwrap().route, ["C", "E"].map(NodeId::from).to_vec());
        let d = sim.behavior(&"D".into()).unwrap();
        assert!(d.delivered.iter().any(|(round, _, _)| *round == s.route.as_ref().unwrap().s_seqno));
    }

    #[test]
    fn wrong_key_rep_is_discarded() {
        let (topo, mut map) = nodes(LINE, None);
        let s_id = NodeId::from("S");
        let s = map.get_mut(&s_id).unwrap();
        s.originate_rreq().unwrap();
        let src = s.source.as_mut().unwrap();
        src.route = Some(InstalledRoute {
            s_seqno: 1,
            route: vec!["A".into()],
            at: 0,
        });
        let rep = build_rep(
            &s_id,
            1,
            &"D".into(),
            1,
            &["A".into()],
            &"A".into(),
            ErrorCode::LinkBreak,
            &crypto::SymKey::from_bytes([0; 32]),
        );
        let out = s.handle_rep(&ctx(&s_id, &topo), &"A".into(), rep);
        assert_eq!(
            out,
            vec![Action::Drop {
                reason: "SealOpenFail".into()
            }]
        );
        assert_eq!(s.source_state().unwrap().reps_received, 0);
    }
}
