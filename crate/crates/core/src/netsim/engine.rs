use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::topology::{Link, Topology};
use crate::crypto::{hash, Digest};
use crate::NodeId;

pub const DEFAULT_MAX_EVENTS: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SimError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("no link {0}-{1}")]
    UnknownLink(NodeId, NodeId),
    #[error("no behavior installed for {0}")]
    MissingBehavior(NodeId),
}

/// Serialization time of `bits` over a link of `bw_mbps`, rounded up to whole ms.
pub fn transmission_ms(bits: u64, bw_mbps: f64) -> u64 {
    (bits as f64 / (bw_mbps * 1000.0)).ceil() as u64
}

/// What a node asks the simulator to do after handling an input.
#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Broadcast(Vec<u8>),
    Unicast { to: NodeId, frame: Vec<u8> },
    Drop { reason: String },
    Timer { after: u64, tag: u64 },
    Note(String),
}

/// Read-only view handed to a node on every callback.
pub struct NodeCtx<'a> {
    pub node: &'a NodeId,
    pub clock: u64,
    /// Current link metrics. Link state (broken or not) is not visible here;
    /// nodes learn about failures through [`NodeBehavior::on_link_down`].
    pub topology: &'a Topology,
}

pub trait NodeBehavior {
    fn on_frame(&mut self, ctx: &NodeCtx<'_>, from: &NodeId, frame: &[u8]) -> Vec<Action>;

    fn on_timer(&mut self, ctx: &NodeCtx<'_>, tag: u64) -> Vec<Action>;

    fn on_link_down(&mut self, _ctx: &NodeCtx<'_>, _neighbor: &NodeId) -> Vec<Action> {
        Vec::new()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "ev", rename_all = "snake_case")]
pub enum TraceEvent {
    Send { t: u64, from: NodeId, to: NodeId, kind: u8, len: usize, arrive: u64 },
    Deliver { t: u64, from: NodeId, to: NodeId, kind: u8, len: usize },
    Suppressed { t: u64, from: NodeId, to: NodeId, kind: u8 },
    Lost { t: u64, from: NodeId, to: NodeId, kind: u8 },
    Drop { t: u64, node: NodeId, reason: String },
    Timer { t: u64, node: NodeId, tag: u64 },
    LinkBreak { t: u64, a: NodeId, b: NodeId },
    LinkDown { t: u64, node: NodeId, neighbor: NodeId },
    LinkMetrics { t: u64, a: NodeId, b: NodeId },
    Note { t: u64, node: NodeId, text: String },
    NoLink { t: u64, from: NodeId, to: NodeId },
    Truncated { t: u64 },
}

impl TraceEvent {
    pub fn time(&self) -> u64 {
        match self {
            TraceEvent::Send { t, .. }
            | TraceEvent::Deliver { t, .. }
            | TraceEvent::Suppressed { t, .. }
            | TraceEvent::Lost { t, .. }
            | TraceEvent::Drop { t, .. }
            | TraceEvent::Timer { t, .. }
            | TraceEvent::LinkBreak { t, .. }
            | TraceEvent::LinkDown { t, .. }
            | TraceEvent::LinkMetrics { t, .. }
            | TraceEvent::Note { t, .. }
            | TraceEvent::NoLink { t, .. }
            | TraceEvent::Truncated { t } => *t,
        }
    }
}

#[derive(Debug, Clone)]
enum Event {
    Deliver { from: NodeId, to: NodeId, frame: Vec<u8> },
    Timer { node: NodeId, tag: u64 },
    Break { a: NodeId, b: NodeId },
    LinkDown { node: NodeId, neighbor: NodeId },
    SetLink { a: NodeId, b: NodeId, link: Link },
}

#[derive(Debug)]
struct Scheduled {
    at: u64,
    seq: u64,
    event: Event,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.seq) == (other.at, other.seq)
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scheduled {
    // Reversed: BinaryHeap is a max-heap and we pop the earliest, oldest first.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.at, other.seq).cmp(&(self.at, self.seq))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stop {
    pub until: Option<u64>,
    pub max_events: usize,
}

impl Stop {
    pub fn quiescence() -> Self {
        Stop {
            until: None,
            max_events: DEFAULT_MAX_EVENTS,
        }
    }

    pub fn at(t: u64) -> Self {
        Stop {
            until: Some(t),
            max_events: DEFAULT_MAX_EVENTS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Quiescent,
    TimeLimit,
    Budget,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOutcome {
    pub reason: StopReason,
    pub processed: usize,
}

fn link_key(a: &NodeId, b: &NodeId) -> (NodeId, NodeId) {
    if a <= b {
        (a.clone(), b.clone())
    } else {
        (b.clone(), a.clone())
    }
}

pub struct Simulator<B> {
    topo: Topology,
    clock: u64,
    seq: u64,
    pending: BinaryHeap<Scheduled>,
    breaks: BTreeMap<(NodeId, NodeId), u64>,
    behaviors: BTreeMap<NodeId, B>,
    trace: Vec<TraceEvent>,
    rng: ChaCha8Rng,
    loss_probability: f64,
    detect_delay: u64,
    processed_total: usize,
    captured: Option<Vec<Vec<u8>>>,
}

impl<B: NodeBehavior> Simulator<B> {
    /// Every topology node needs a behavior.
    pub fn new(topo: Topology, seed: u64, behaviors: BTreeMap<NodeId, B>) -> Result<Self, SimError> {
        if let Some(n) = topo.node_ids().find(|n| !behaviors.contains_key(*n)) {
            return Err(SimError::MissingBehavior(n.clone()));
        }
        if let Some(n) = behaviors.keys().find(|n| !topo.contains(n)) {
            return Err(SimError::UnknownNode(n.clone()));
        }
        Ok(Simulator {
            topo,
            clock: 0,
            seq: 0,
            pending: BinaryHeap::new(),
            breaks: BTreeMap::new(),
            behaviors,
            trace: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            loss_probability: 0.0,
            detect_delay: 0,
            processed_total: 0,
            captured: None,
        })
    }

    /// Independent frame loss. Off (0.0) by default.
    pub fn set_loss_probability(&mut self, p: f64) {
        self.loss_probability = p.clamp(0.0, 1.0);
    }

    /// Time between a link break and both endpoints noticing it.
    pub fn set_detect_delay(&mut self, ms: u64) {
        self.detect_delay = ms;
    }

    /// Keeps a copy of every frame handed to a link from now on.
    pub fn capture_frames(&mut self) {
        self.captured.get_or_insert_with(Vec::new);
    }

    pub fn captured_frames(&self) -> &[Vec<u8>] {
        self.captured.as_deref().unwrap_or(&[])
    }

    pub fn clock(&self) -> u64 {
        self.clock
    }

    pub fn topology(&self) -> &Topology {
        &self.topo
    }

    pub fn trace(&self) -> &[TraceEvent] {
        &self.trace
    }

    pub fn behavior(&self, node: &NodeId) -> Option<&B> {
        self.behaviors.get(node)
    }

    pub fn behavior_mut(&mut self, node: &NodeId) -> Option<&mut B> {
        self.behaviors.get_mut(node)
    }

    pub fn behaviors(&self) -> impl Iterator<Item = (&NodeId, &B)> {
        self.behaviors.iter()
    }

    pub fn is_idle(&self) -> bool {
        self.pending.is_empty()
    }

    /// SHA-256 over the JSON rendering of the trace.
    pub fn trace_digest(&self) -> Digest {
        hash(&serde_json::to_vec(&self.trace).expect("trace serializes"))
    }

    fn push(&mut self, at: u64, event: Event) {
        self.seq += 1;
        self.pending.push(Scheduled {
            at,
            seq: self.seq,
            event,
        });
    }

    /// Break time of the link, if a break has been scheduled.
    pub fn break_time(&self, a: &NodeId, b: &NodeId) -> Option<u64> {
        self.breaks.get(&link_key(a, b)).copied()
    }

    fn crosses(&self, a: &NodeId, b: &NodeId, arrive: u64) -> bool {
        self.break_time(a, b).is_none_or(|t| arrive < t)
    }

    fn send_one(&mut self, from: &NodeId, to: &NodeId, link: Link, frame: &[u8]) -> u64 {
        let kind = frame.first().copied().unwrap_or(0);
        if let Some(c) = self.captured.as_mut() {
            c.push(frame.to_vec());
        }
        let arrive = self.clock + link.delay_ms + transmission_ms(frame.len() as u64 * 8, link.bw_mbps);
        self.trace.push(TraceEvent::Send {
            t: self.clock,
            from: from.clone(),
            to: to.clone(),
            kind,
            len: frame.len(),
            arrive,
        });
        if !self.crosses(from, to, self.clock) {
            self.trace.push(TraceEvent::Suppressed {
                t: self.clock,
                from: from.clone(),
                to: to.clone(),
                kind,
            });
            return arrive;
        }
        self.push(
            arrive,
            Event::Deliver {
                from: from.clone(),
                to: to.clone(),
                frame: frame.to_vec(),
            },
        );
        arrive
    }

    /// One delivery per adjacent link at `clock + delay + ceil(bits / bw)`.
    /// Returns `(neighbor, arrival time)` for every attempted delivery.
    pub fn broadcast(&mut self, from: &NodeId, frame: &[u8]) -> Result<Vec<(NodeId, u64)>, SimError> {
        let neighbors = self
            .topo
            .rdn(from)
            .map_err(|_| SimError::UnknownNode(from.clone()))?;
        let mut out = Vec::with_capacity(neighbors.len());
        for n in neighbors {
            let link = *self.topo.link(from, &n).expect("rdn implies link");
            let at = self.send_one(from, &n, link, frame);
            out.push((n, at));
        }
        Ok(out)
    }

    pub fn unicast(&mut self, from: &NodeId, to: &NodeId, frame: &[u8]) -> Result<u64, SimError> {
        if !self.topo.contains(from) {
            return Err(SimError::UnknownNode(from.clone()));
        }
        let link = *self
            .topo
            .link(from, to)
            .ok_or_else(|| SimError::UnknownLink(from.clone(), to.clone()))?;
        Ok(self.send_one(from, to, link, frame))
    }

    /// Breaks the link at `at`. Frames arriving strictly before `at` still
    /// arrive; anything later is suppressed. Both endpoints are told after
    /// the configured detection delay.
    pub fn break_link(&mut self, a: &NodeId, b: &NodeId, at: u64) -> Result<(), SimError> {
        if self.topo.link(a, b).is_none() {
            return Err(SimError::UnknownLink(a.clone(), b.clone()));
        }
        let k = link_key(a, b);
        let at = self.breaks.get(&k).map_or(at, |&t| t.min(at));
        self.breaks.insert(k, at);
        self.push(at.max(self.clock), Event::Break { a: a.clone(), b: b.clone() });
        Ok(())
    }

    pub fn set_link_at(&mut self, a: &NodeId, b: &NodeId, link: Link, at: u64) -> Result<(), SimError> {
        if self.topo.link(a, b).is_none() {
            return Err(SimError::UnknownLink(a.clone(), b.clone()));
        }
        self.push(at.max(self.clock), Event::SetLink { a: a.clone(), b: b.clone(), link });
        Ok(())
    }

    pub fn schedule_timer(&mut self, node: &NodeId, at: u64, tag: u64) -> Result<(), SimError> {
        if !self.topo.contains(node) {
            return Err(SimError::UnknownNode(node.clone()));
        }
        self.push(at.max(self.clock), Event::Timer { node: node.clone(), tag });
        Ok(())
    }

    fn apply(&mut self, node: &NodeId, actions: Vec<Action>) {
        for action in actions {
            match action {
                Action::Broadcast(frame) => {
                    self.broadcast(node, &frame).expect("node is in topology");
                }
                Action::Unicast { to, frame } => {
                    if self.unicast(node, &to, &frame).is_err() {
                        self.trace.push(TraceEvent::NoLink {
                            t: self.clock,
                            from: node.clone(),
                            to,
                        });
                    }
                }
                Action::Drop { reason } => self.trace.push(TraceEvent::Drop {
                    t: self.clock,
                    node: node.clone(),
                    reason,
                }),
                Action::Timer { after, tag } => {
                    let at = self.clock + after;
                    self.push(at, Event::Timer { node: node.clone(), tag });
                }
                Action::Note(text) => self.trace.push(TraceEvent::Note {
                    t: self.clock,
                    node: node.clone(),
                    text,
                }),
            }
        }
    }

    fn dispatch(&mut self, event: Event) {
        match event {
            Event::Deliver { from, to, frame } => {
                let kind = frame.first().copied().unwrap_or(0);
                if !self.crosses(&from, &to, self.clock) {
                    self.trace.push(TraceEvent::Suppressed { t: self.clock, from, to, kind });
                    return;
                }
                if self.loss_probability > 0.0 && self.rng.random::<f64>() < self.loss_probability {
                    self.trace.push(TraceEvent::Lost { t: self.clock, from, to, kind });
                    return;
                }
                self.trace.push(TraceEvent::Deliver {
                    t: self.clock,
                    from: from.clone(),
                    to: to.clone(),
                    kind,
                    len: frame.len(),
                });
                let behavior = self.behaviors.get_mut(&to).expect("behavior installed");
                let ctx = NodeCtx {
                    node: &to,
                    clock: self.clock,
                    topology: &self.topo,
                };
                let actions = behavior.on_frame(&ctx, &from, &frame);
                self.apply(&to, actions);
            }
            Event::Timer { node, tag } => {
                self.trace.push(TraceEvent::Timer {
                    t: self.clock,
                    node: node.clone(),
                    tag,
                });
                let behavior = self.behaviors.get_mut(&node).expect("behavior installed");
                let ctx = NodeCtx {
                    node: &node,
                    clock: self.clock,
                    topology: &self.topo,
                };
                let actions = behavior.on_timer(&ctx, tag);
                self.apply(&node, actions);
            }
            Event::Break { a, b } => {
                self.trace.push(TraceEvent::LinkBreak {
                    t: self.clock,
                    a: a.clone(),
                    b: b.clone(),
                });
                let at = self.clock + self.detect_delay;
                self.push(at, Event::LinkDown { node: a.clone(), neighbor: b.clone() });
                self.push(at, Event::LinkDown { node: b, neighbor: a });
            }
            Event::LinkDown { node, neighbor } => {
                self.trace.push(TraceEvent::LinkDown {
                    t: self.clock,
                    node: node.clone(),
                    neighbor: neighbor.clone(),
                });
                let behavior = self.behaviors.get_mut(&node).expect("behavior installed");
                let ctx = NodeCtx {
                    node: &node,
                    clock: self.clock,
                    topology: &self.topo,
                };
                let actions = behavior.on_link_down(&ctx, &neighbor);
                self.apply(&node, actions);
            }
            Event::SetLink { a, b, link } => {
                self.topo.set_link(&a, &b, link);
                self.trace.push(TraceEvent::LinkMetrics { t: self.clock, a, b });
            }
        }
    }

    /// Processes events in time order until the queue drains, the stop time
    /// passes, or the event budget runs out (marked with `Truncated`).
    pub fn run_until(&mut self, stop: Stop) -> RunOutcome {
        let mut processed = 0usize;
        loop {
            let Some(next) = self.pending.peek() else {
                return RunOutcome {
                    reason: StopReason::Quiescent,
                    processed,
                };
            };
            if stop.until.is_some_and(|t| next.at > t) {
                self.clock = stop.until.unwrap().max(self.clock);
                return RunOutcome {
                    reason: StopReason::TimeLimit,
                    processed,
                };
            }
            if self.processed_total >= stop.max_events {
                self.trace.push(TraceEvent::Truncated { t: self.clock });
                return RunOutcome {
                    reason: StopReason::Budget,
                    processed,
                };
            }
            let ev = self.pending.pop().expect("peeked");
            debug_assert!(ev.at >= self.clock);
            self.clock = ev.at;
            processed += 1;
            self.processed_total += 1;
            self.dispatch(ev.event);
        }
    }
}
