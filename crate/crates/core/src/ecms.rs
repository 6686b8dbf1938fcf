//! Effective cost management: per-link cost accumulation, mode-driven route
//! selection with product tie-breaks (S-ORCF) and route maintenance (S-ORM).

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::crypto::{self, SealedBox, SymKey};
use crate::netsim::Topology;
use crate::NodeId;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EcmsError {
    #[error("link bandwidth must be positive")]
    NonpositiveBandwidth,
    #[error("no edge {0}-{1}")]
    MissingEdge(NodeId, NodeId),
    #[error("no candidate routes")]
    NoCandidates,
    #[error("monitor interval must be positive and epsilon in [0,1)")]
    BadMonitor,
    #[error("unknown error code {0}")]
    BadErrorCode(u8),
    #[error("route error packet failed authentication")]
    SealOpenFail,
    #[error("unknown mode {0:?}")]
    BadMode(String),
}

/// Cost weights `(alpha, beta, gamma)` for hop, bandwidth and delay terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Weights {
            alpha: 1.0,
            beta: 0.1,
            gamma: 1.0,
        }
    }
}

/// The seven cost-factor selections of the route cost finder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "HC")]
    Hc,
    #[serde(rename = "BW")]
    Bw,
    #[serde(rename = "ND")]
    Nd,
    #[serde(rename = "HC_BW")]
    HcBw,
    #[serde(rename = "BW_ND")]
    BwNd,
    #[serde(rename = "HC_ND")]
    HcNd,
    #[serde(rename = "HC_BW_ND")]
    HcBwNd,
}

impl Mode {
    pub const ALL: [Mode; 7] = [
        Mode::Hc,
        Mode::Bw,
        Mode::Nd,
        Mode::HcBw,
        Mode::BwNd,
        Mode::HcNd,
        Mode::HcBwNd,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Hc => "HC",
            Mode::Bw => "BW",
            Mode::Nd => "ND",
            Mode::HcBw => "HC_BW",
            Mode::BwNd => "BW_ND",
            Mode::HcNd => "HC_ND",
            Mode::HcBwNd => "HC_BW_ND",
        }
    }

    fn uses(&self) -> (bool, bool, bool) {
        match self {
            Mode::Hc => (true, false, false),
            Mode::Bw => (false, true, false),
            Mode::Nd => (false, false, true),
            Mode::HcBw => (true, true, false),
            Mode::BwNd => (false, true, true),
            Mode::HcNd => (true, false, true),
            Mode::HcBwNd => (true, true, true),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = EcmsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_uppercase().replace('-', "_");
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == norm)
            .ok_or_else(|| EcmsError::BadMode(s.to_owned()))
    }
}

/// Zeroes the weight components the mode does not use.
pub fn weights_for_mode(mode: Mode, base: Weights) -> Weights {
    let (a, b, g) = mode.uses();
    Weights {
        alpha: if a { base.alpha } else { 0.0 },
        beta: if b { base.beta } else { 0.0 },
        gamma: if g { base.gamma } else { 0.0 },
    }
}

/// One link's contribution to the accumulated path cost.
///
/// The default form charges `beta / bw` so cheaper paths have faster links.
/// With `literal` set the term is `beta * bw` instead.
pub fn path_cost_step(prev: f64, link_bw: f64, link_delay: f64, w: &Weights, literal: bool) -> Result<f64, EcmsError> {
    if !(link_bw > 0.0) {
        return Err(EcmsError::NonpositiveBandwidth);
    }
    let bw_term = if literal { link_bw } else { 1.0 / link_bw };
    Ok(prev + w.alpha * 1.0 + w.beta * bw_term + w.gamma * link_delay)
}

/// Aggregate path metrics: hop count, bottleneck bandwidth, total delay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathMetrics {
    pub hc: u32,
    pub bw: f64,
    pub nd: f64,
}

impl PathMetrics {
    /// Metrics of the zero-link path; `bw` is the identity of `min`.
    pub const EMPTY: PathMetrics = PathMetrics {
        hc: 0,
        bw: f64::INFINITY,
        nd: 0.0,
    };

    pub fn extend(&self, link_bw: f64, link_delay: f64) -> PathMetrics {
        PathMetrics {
            hc: self.hc + 1,
            bw: self.bw.min(link_bw),
            nd: self.nd + link_delay,
        }
    }
}

/// Per-edge metric tables over the topology's links, stored symmetrically.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CostMatrices {
    pub m_hc: BTreeMap<(NodeId, NodeId), f64>,
    pub m_bw: BTreeMap<(NodeId, NodeId), f64>,
    pub m_nd: BTreeMap<(NodeId, NodeId), f64>,
}

impl CostMatrices {
    pub fn from_topology(topo: &Topology) -> Self {
        let mut m = CostMatrices::default();
        for (a, b, l) in topo.links() {
            for (x, y) in [(a, b), (b, a)] {
                let k = (x.clone(), y.clone());
                m.m_hc.insert(k.clone(), 1.0);
                m.m_bw.insert(k.clone(), l.bw_mbps);
                m.m_nd.insert(k, l.delay_ms as f64);
            }
        }
        m
    }

    fn edge(&self, a: &NodeId, b: &NodeId) -> Result<(f64, f64), EcmsError> {
        let k = (a.clone(), b.clone());
        match (self.m_bw.get(&k), self.m_nd.get(&k)) {
            (Some(bw), Some(nd)) => Ok((*bw, *nd)),
            _ => Err(EcmsError::MissingEdge(a.clone(), b.clone())),
        }
    }
}

pub fn aggregate(path: &[NodeId], matrices: &CostMatrices) -> Result<PathMetrics, EcmsError> {
    let mut m = PathMetrics::EMPTY;
    for w in path.windows(2) {
        let (bw, nd) = matrices.edge(&w[0], &w[1])?;
        m = m.extend(bw, nd);
    }
    Ok(m)
}

/// Accumulated cost of `path` from its first node, link by link.
pub fn path_cost(path: &[NodeId], matrices: &CostMatrices, w: &Weights, literal: bool) -> Result<f64, EcmsError> {
    let mut cost = 0.0;
    for pair in path.windows(2) {
        let (bw, nd) = matrices.edge(&pair[0], &pair[1])?;
        cost = path_cost_step(cost, bw, nd, w, literal)?;
    }
    Ok(cost)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Products {
    pub hbp: f64,
    pub bdp: f64,
    pub hdp: f64,
    pub hbdp: f64,
    /// Bottleneck bandwidth times end-to-end delay.
    pub bdp_ub: f64,
}

pub fn products(m: &PathMetrics) -> Products {
    let hc = m.hc as f64;
    Products {
        hbp: hc * m.bw,
        bdp: m.bw * m.nd,
        hdp: hc * m.nd,
        hbdp: hc * m.bw * m.nd,
        bdp_ub: m.bw * m.nd,
    }
}

/// A route offered to [`select_route`]: full node sequence, source first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub path: Vec<NodeId>,
    pub path_cost: f64,
    pub metrics: PathMetrics,
}

/// Primary objective value and whether larger is better.
pub fn primary_objective(c: &Candidate, mode: Mode) -> (f64, bool) {
    let p = products(&c.metrics);
    match mode {
        Mode::Hc => (c.metrics.hc as f64, false),
        Mode::Bw => (c.metrics.bw, true),
        Mode::Nd => (c.metrics.nd, false),
        Mode::HcBw => (p.hbp, true),
        Mode::BwNd => (p.bdp, true),
        Mode::HcNd => (p.hdp, false),
        Mode::HcBwNd => (c.path_cost, false),
    }
}

/// `Less` when `a` is the better route under `mode`.
pub fn compare_candidates(a: &Candidate, b: &Candidate, mode: Mode) -> Ordering {
    let (pa, maximize) = primary_objective(a, mode);
    let (pb, _) = primary_objective(b, mode);
    let primary = if maximize { pb.total_cmp(&pa) } else { pa.total_cmp(&pb) };
    let (xa, xb) = (products(&a.metrics), products(&b.metrics));
    primary
        .then_with(|| xb.hbdp.total_cmp(&xa.hbdp))
        .then_with(|| xb.bdp_ub.total_cmp(&xa.bdp_ub))
        .then_with(|| a.path.cmp(&b.path))
}

/// Picks the best candidate: the mode's primary objective, then maximum
/// HBDP, then maximum BDP upper bound, then the lexicographically smallest
/// node sequence.
pub fn select_route(candidates: &[Candidate], mode: Mode) -> Result<&Candidate, EcmsError> {
    candidates
        .iter()
        .min_by(|a, b| compare_candidates(a, b, mode))
        .ok_or(EcmsError::NoCandidates)
}

/// Every simple path from `src` to `dst`, depth first over sorted neighbors.
pub fn simple_paths(topo: &Topology, src: &NodeId, dst: &NodeId) -> Vec<Vec<NodeId>> {
    fn walk(topo: &Topology, dst: &NodeId, path: &mut Vec<NodeId>, out: &mut Vec<Vec<NodeId>>) {
        let last = path.last().expect("nonempty").clone();
        if &last == dst {
            out.push(path.clone());
            return;
        }
        for n in topo.rdn(&last).unwrap_or_default() {
            if !path.contains(&n) {
                path.push(n);
                walk(topo, dst, path, out);
                path.pop();
            }
        }
    }
    let mut out = Vec::new();
    if topo.contains(src) && topo.contains(dst) && src != dst {
        walk(topo, dst, &mut vec![src.clone()], &mut out);
    }
    out
}

/// Candidate set over all simple paths, costed with `weights`.
pub fn candidates_from_topology(
    topo: &Topology,
    src: &NodeId,
    dst: &NodeId,
    weights: &Weights,
    literal: bool,
) -> Result<Vec<Candidate>, EcmsError> {
    let matrices = CostMatrices::from_topology(topo);
    simple_paths(topo, src, dst)
        .into_iter()
        .map(|path| {
            Ok(Candidate {
                path_cost: path_cost(&path, &matrices, weights, literal)?,
                metrics: aggregate(&path, &matrices)?,
                path,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum ErrorCode {
    LinkBreak = 1,
    BdpDegrade = 2,
}

impl TryFrom<u8> for ErrorCode {
    type Error = EcmsError;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        match v {
            1 => Ok(ErrorCode::LinkBreak),
            2 => Ok(ErrorCode::BdpDegrade),
            other => Err(EcmsError::BadErrorCode(other)),
        }
    }
}

/// Route error packet. The error code is sealed under the key shared by the
/// reporting node and the source, which is `K_SD` when the destination reports.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RepPacket {
    pub s_addr: NodeId,
    pub s_seqno: u32,
    pub d_addr: NodeId,
    pub d_seqno: u32,
    pub reporter: NodeId,
    pub sealed_code: SealedBox,
    /// Relays between source and destination, source side first.
    pub route: Vec<NodeId>,
}

fn rep_aad(s_addr: &NodeId, s_seqno: u32, d_addr: &NodeId, d_seqno: u32, reporter: &NodeId, code: u8) -> Vec<u8> {
    let mut v = Vec::new();
    for part in [s_addr.as_bytes(), d_addr.as_bytes(), reporter.as_bytes()] {
        v.extend_from_slice(&(part.len() as u16).to_be_bytes());
        v.extend_from_slice(part);
    }
    v.extend_from_slice(&s_seqno.to_be_bytes());
    v.extend_from_slice(&d_seqno.to_be_bytes());
    v.push(code);
    v
}

#[allow(clippy::too_many_arguments)]
pub fn build_rep(
    s_addr: &NodeId,
    s_seqno: u32,
    d_addr: &NodeId,
    d_seqno: u32,
    route: &[NodeId],
    reporter: &NodeId,
    code: ErrorCode,
    key: &SymKey,
) -> RepPacket {
    // The sealed plaintext carries the code plus the header fields, so a box
    // cannot be transplanted onto another round.
    let plain = rep_aad(s_addr, s_seqno, d_addr, d_seqno, reporter, code as u8);
    RepPacket {
        s_addr: s_addr.clone(),
        s_seqno,
        d_addr: d_addr.clone(),
        d_seqno,
        reporter: reporter.clone(),
        sealed_code: crypto::seal(key, &plain),
        route: route.to_vec(),
    }
}

pub fn open_rep(rep: &RepPacket, key: &SymKey) -> Result<ErrorCode, EcmsError> {
    let plain = crypto::open(key, &rep.sealed_code).map_err(|_| EcmsError::SealOpenFail)?;
    let code = *plain.last().ok_or(EcmsError::SealOpenFail)?;
    let expect = rep_aad(&rep.s_addr, rep.s_seqno, &rep.d_addr, rep.d_seqno, &rep.reporter, code);
    if plain != expect {
        return Err(EcmsError::SealOpenFail);
    }
    ErrorCode::try_from(code)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorState {
    pub route: Vec<NodeId>,
    pub last_bdp: f64,
    pub interval: u64,
    pub epsilon: f64,
    pub next_check: u64,
}

impl MonitorState {
    pub fn new(route: Vec<NodeId>, bdp: f64, interval: u64, epsilon: f64, now: u64) -> Result<Self, EcmsError> {
        if interval == 0 || !(0.0..1.0).contains(&epsilon) {
            return Err(EcmsError::BadMonitor);
        }
        Ok(MonitorState {
            route,
            last_bdp: bdp,
            interval,
            epsilon,
            next_check: now + interval,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub neighbor_responsive: bool,
    pub current_bdp: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MonitorAction {
    Keep,
    SendRep(ErrorCode),
    Rediscover(ErrorCode),
}

/// One maintenance check. A silent neighbor always yields a link-break
/// report; BDP is only compared at interval boundaries.
pub fn monitor(state: &mut MonitorState, obs: Observation, clock: u64) -> MonitorAction {
    if !obs.neighbor_responsive {
        return MonitorAction::SendRep(ErrorCode::LinkBreak);
    }
    if clock < state.next_check {
        return MonitorAction::Keep;
    }
    while state.next_check <= clock {
        state.next_check += state.interval;
    }
    if obs.current_bdp < (1.0 - state.epsilon) * state.last_bdp {
        return MonitorAction::Rediscover(ErrorCode::BdpDegrade);
    }
    state.last_bdp = obs.current_bdp;
    MonitorAction::Keep
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netsim::load_topology;

    fn ids(p: &[&str]) -> Vec<NodeId> {
        p.iter().map(|&s| NodeId::from(s)).collect()
    }

    fn cand(path: &[&str], cost: f64, hc: u32, bw: f64, nd: f64) -> Candidate {
        Candidate {
            path: ids(path),
            path_cost: cost,
            metrics: PathMetrics { hc, bw, nd },
        }
    }

    #[test]
    fn mode_masks() {
        let base = Weights::default();
        assert_eq!(
            weights_for_mode(Mode::Bw, base),
            Weights { alpha: 0.0, beta: 0.1, gamma: 0.0 }
        );
        assert_eq!(weights_for_mode(Mode::HcBwNd, base), base);
        let odd = Weights { alpha: 2.0, beta: 5.0, gamma: 7.0 };
        assert_eq!(
            weights_for_mode(Mode::Hc, odd),
            Weights { alpha: 2.0, beta: 0.0, gamma: 0.0 }
        );
        assert_eq!(
            weights_for_mode(Mode::HcNd, odd),
            Weights { alpha: 2.0, beta: 0.0, gamma: 7.0 }
        );
        assert_eq!(
            weights_for_mode(Mode::BwNd, odd),
            Weights { alpha: 0.0, beta: 5.0, gamma: 7.0 }
        );
    }

    #[test]
    fn mode_names_round_trip() {
        for m in Mode::ALL {
            assert_eq!(m.as_str().parse::<Mode>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{m}\""));
        }
        assert_eq!("hc-bw".parse::<Mode>().unwrap(), Mode::HcBw);
        assert!("XX".parse::<Mode>().is_err());
    }

    #[test]
    fn cost_step_examples() {
        let hop = Weights { alpha: 1.0, beta: 0.0, gamma: 0.0 };
        assert_eq!(path_cost_step(0.0, 3.0, 9.0, &hop, false).unwrap(), 1.0);
        let delay = Weights { alpha: 0.0, beta: 0.0, gamma: 1.0 };
        assert_eq!(path_cost_step(0.0, 3.0, 7.0, &delay, false).unwrap(), 7.0);
        // 0 + 1 + 0.1 * 10 + 2
        assert_eq!(path_cost_step(0.0, 10.0, 2.0, &Weights::default(), true).unwrap(), 4.0);
        // 0 + 1 + 0.1 / 10 + 2
        assert!((path_cost_step(0.0, 10.0, 2.0, &Weights::default(), false).unwrap() - 3.01).abs() < 1e-12);
        assert_eq!(
            path_cost_step(0.0, 0.0, 2.0, &Weights::default(), false),
            Err(EcmsError::NonpositiveBandwidth)
        );
    }

    #[test]
    fn aggregate_examples() {
        let t = load_topology(
            "node S broker\nnode A relay\nnode D coordinator\nlink S A 10 2\nlink A D 20 3\n",
        )
        .unwrap();
        let m = CostMatrices::from_topology(&t);
        assert_eq!(
            aggregate(&ids(&["S", "A", "D"]), &m).unwrap(),
            PathMetrics { hc: 2, bw: 10.0, nd: 5.0 }
        );
        assert_eq!(
            aggregate(&ids(&["A", "D"]), &m).unwrap(),
            PathMetrics { hc: 1, bw: 20.0, nd: 3.0 }
        );
        assert!(matches!(aggregate(&ids(&["S", "D"]), &m), Err(EcmsError::MissingEdge(..))));
    }

    #[test]
    fn product_examples() {
        let p = products(&PathMetrics { hc: 2, bw: 10.0, nd: 5.0 });
        assert_eq!((p.hbp, p.bdp, p.hdp, p.hbdp), (20.0, 50.0, 10.0, 100.0));
        let p = products(&PathMetrics { hc: 1, bw: 1.0, nd: 1.0 });
        assert_eq!((p.hbp, p.bdp, p.hdp, p.hbdp, p.bdp_ub), (1.0, 1.0, 1.0, 1.0, 1.0));
        assert_eq!(products(&PathMetrics { hc: 3, bw: 100.0, nd: 15.0 }).hbdp, 4500.0);
    }

    #[test]
    fn select_examples() {
        let c = [cand(&["S", "A", "D"], 1.0, 2, 10.0, 4.0), cand(&["S", "B", "D"], 1.0, 2, 100.0, 4.0)];
        assert_eq!(select_route(&c, Mode::Bw).unwrap().path, ids(&["S", "B", "D"]));
        // Equal hop count: HBDP 2*10*2=40 vs 2*9*5=90.
        let c = [cand(&["S", "A", "D"], 0.0, 2, 10.0, 2.0), cand(&["S", "B", "D"], 0.0, 2, 9.0, 5.0)];
        assert_eq!(select_route(&c, Mode::Hc).unwrap().path, ids(&["S", "B", "D"]));
        // Full tie falls through to node order.
        let c = [cand(&["S", "B", "D"], 0.0, 2, 9.0, 5.0), cand(&["S", "A", "D"], 0.0, 2, 9.0, 5.0)];
        assert_eq!(select_route(&c, Mode::HcNd).unwrap().path, ids(&["S", "A", "D"]));
        assert_eq!(select_route(&[], Mode::Hc), Err(EcmsError::NoCandidates));
    }

    #[test]
    fn enumerates_simple_paths() {
        let t = load_topology(
            "node S broker\nnode A relay\nnode B relay\nnode D coordinator\n\
link S A 1 1\nlink S B 1 1\nlink A B 1 1\nlink A D 1 1\nlink B D 1 1\n",
        )
        .unwrap();
        let p = simple_paths(&t, &"S".into(), &"D".into());
        assert_eq!(p.len(), 4);
        assert!(p.iter().all(|x| x.first().unwrap().as_str() == "S" && x.last().unwrap().as_str() == "D"));
    }

    #[test]
    fn monitor_examples() {
        let mut st = MonitorState::new(ids(&["A"]), 100.0, 10, 0.1, 0).unwrap();
        let ok = Observation { neighbor_responsive: true, current_bdp: 100.0 };
        assert_eq!(monitor(&mut st, ok, 10), MonitorAction::Keep);
        assert_eq!(
            monitor(&mut st, Observation { neighbor_responsive: false, current_bdp: 100.0 }, 12),
            MonitorAction::SendRep(ErrorCode::LinkBreak)
        );
        assert_eq!(
            monitor(&mut st, Observation { neighbor_responsive: true, current_bdp: 85.0 }, 20),
            MonitorAction::Rediscover(ErrorCode::BdpDegrade)
        );
        // A 5% drop stays inside the 10% band.
        let mut st = MonitorState::new(ids(&["A"]), 100.0, 10, 0.1, 0).unwrap();
        assert_eq!(
            monitor(&mut st, Observation { neighbor_responsive: true, current_bdp: 95.0 }, 10),
            MonitorAction::Keep
        );
        assert_eq!(st.last_bdp, 95.0);
        assert!(MonitorState::new(vec![], 1.0, 0, 0.1, 0).is_err());
        assert!(MonitorState::new(vec![], 1.0, 5, 1.0, 0).is_err());
    }

    #[test]
    fn constant_bdp_never_rediscovers() {
        let mut st = MonitorState::new(ids(&["A"]), 42.0, 100, 0.1, 0).unwrap();
        for i in 1..=10 {
            let obs = Observation { neighbor_responsive: true, current_bdp: 42.0 };
            assert_eq!(monitor(&mut st, obs, i * 100), MonitorAction::Keep);
        }
    }

    #[test]
    fn rep_round_trip_and_auth() {
        let k = SymKey::from_bytes([1; 32]);
        let rep = build_rep(&"S".into(), 3, &"D".into(), 1, &ids(&["A", "B"]), &"B".into(), ErrorCode::BdpDegrade, &k);
        assert_eq!(open_rep(&rep, &k), Ok(ErrorCode::BdpDegrade));
        assert_eq!(open_rep(&rep, &SymKey::from_bytes([2; 32])), Err(EcmsError::SealOpenFail));
        let mut moved = rep.clone();
        moved.s_seqno = 4;
        assert_eq!(open_rep(&moved, &k), Err(EcmsError::SealOpenFail));
        assert_eq!(ErrorCode::try_from(2), Ok(ErrorCode::BdpDegrade));
        assert_eq!(ErrorCode::try_from(9), Err(EcmsError::BadErrorCode(9)));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn cost_accumulation_is_monotone(
                links in proptest::collection::vec((0.5f64..200.0, 0.0f64..50.0), 1..12),
                a in 0.0f64..3.0, b in 0.0f64..3.0, g in 0.0f64..3.0,
            ) {
                let w = Weights { alpha: a, beta: b, gamma: g };
                let mut cost = 0.0;
                for (bw, d) in links {
                    let next = path_cost_step(cost, bw, d, &w, false).unwrap();
                    prop_assert!(next >= cost);
                    cost = next;
                }
            }

            #[test]
            fn bandwidth_scaling_keeps_bw_argmax(
                bws in proptest::collection::vec(1u32..100, 2..8),
                scale in 0.01f64..100.0,
            ) {
                let cands: Vec<Candidate> = bws.iter().enumerate().map(|(i, &bw)| Candidate {
                    path: vec![NodeId::new(format!("p{i:02}"))],
                    path_cost: 0.0,
                    metrics: PathMetrics { hc: 2, bw: bw as f64, nd: 5.0 },
                }).collect();
                let scaled: Vec<Candidate> = cands.iter().cloned().map(|mut c| {
                    c.metrics.bw *= scale;
                    c
                }).collect();
                prop_assert_eq!(
                    &select_route(&cands, Mode::Bw).unwrap().path,
                    &select_route(&scaled, Mode::Bw).unwrap().path
                );
            }
        }
    }
}
