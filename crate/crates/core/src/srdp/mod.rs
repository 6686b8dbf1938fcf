//! Secure route discovery: RREQ flooding with a per-hop hash chain and
//! two-hop MACs, destination selection, and RREP reverse unicast with the
//! q-chain.

mod node;
mod packet;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::crypto::{mac, Digest, SymKey};
use crate::kdc::{build_broadcast, open_broadcast, Kdc, KdcError};
use crate::netsim::Topology;
use crate::NodeId;

pub use node::{
    AcceptedReply, AcceptedRequest, ForwardDraft, ForwardRecord, InstalledRoute, NodeConfig, SourceState,
    SrdpNode, Tamper, TIMER_START,
};
pub use packet::{
    decode_frame, encode_frame, DataPacket, Frame, MalformedFrame, RoundId, Rrep, RrepBody, RrepPacket, RreqBody,
    RreqHeader, RreqImmutable, RreqMutable, RreqPacket, SessionFrame, FRAME_DATA, FRAME_REP, FRAME_RREP,
    FRAME_RREQ, FRAME_SESSION,
};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SrdpError {
    #[error("no pairwise key with {0}")]
    NoPairwiseKey(NodeId),
    #[error("node is not configured as a source")]
    NotASource,
    #[error(transparent)]
    Kdc(#[from] KdcError),
}

/// Why a node refused a frame. The names appear verbatim in traces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DropReason {
    Malformed,
    SealOpenFail,
    Duplicate,
    Loop,
    HopLimit,
    TwoHopAuthFail,
    ChainMismatch,
    NoValidCandidate,
    WindowClosed,
    NotOnRoute,
    QChainMismatch,
    NoPairwiseKey,
    Stale,
    Unexpected,
}

impl DropReason {
    pub const ALL: [DropReason; 14] = [
        DropReason::Malformed,
        DropReason::SealOpenFail,
        DropReason::Duplicate,
        DropReason::Loop,
        DropReason::HopLimit,
        DropReason::TwoHopAuthFail,
        DropReason::ChainMismatch,
        DropReason::NoValidCandidate,
        DropReason::WindowClosed,
        DropReason::NotOnRoute,
        DropReason::QChainMismatch,
        DropReason::NoPairwiseKey,
        DropReason::Stale,
        DropReason::Unexpected,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            DropReason::Malformed => "Malformed",
            DropReason::SealOpenFail => "SealOpenFail",
            DropReason::Duplicate => "Duplicate",
            DropReason::Loop => "Loop",
            DropReason::HopLimit => "HopLimit",
            DropReason::TwoHopAuthFail => "TwoHopAuthFail",
            DropReason::ChainMismatch => "ChainMismatch",
            DropReason::NoValidCandidate => "NoValidCandidate",
            DropReason::WindowClosed => "WindowClosed",
            DropReason::NotOnRoute => "NotOnRoute",
            DropReason::QChainMismatch => "QChainMismatch",
            DropReason::NoPairwiseKey => "NoPairwiseKey",
            DropReason::Stale => "Stale",
            DropReason::Unexpected => "Unexpected",
        }
    }

    pub fn parse(s: &str) -> Option<DropReason> {
        DropReason::ALL.into_iter().find(|r| r.as_str() == s)
    }

    /// Drops that signal an authentication failure rather than routine pruning.
    pub fn is_detection(&self) -> bool {
        matches!(
            self,
            DropReason::TwoHopAuthFail | DropReason::ChainMismatch | DropReason::QChainMismatch
        )
    }
}

impl fmt::Display for DropReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Key material one node holds after the setup phase.
#[derive(Debug, Clone)]
pub struct NodeKeys {
    pub id: NodeId,
    /// `K_self`, shared with the one-hop neighborhood.
    pub rdn_key: SymKey,
    /// `T_self`, readable only beyond the one-hop neighborhood.
    pub broadcast_secret: SymKey,
    pub neighbor_keys: BTreeMap<NodeId, SymKey>,
    /// `T_X` for every X whose broadcast this node could open.
    pub two_hop: BTreeMap<NodeId, SymKey>,
    pub pairwise: BTreeMap<NodeId, SymKey>,
    pub universe: BTreeSet<NodeId>,
}

impl NodeKeys {
    pub fn broadcast_secret_of(&self, node: &NodeId) -> Option<&SymKey> {
        if node == &self.id {
            Some(&self.broadcast_secret)
        } else {
            self.two_hop.get(node)
        }
    }
}

#[derive(Debug, Clone)]
pub struct Provisioning {
    pub keys: BTreeMap<NodeId, NodeKeys>,
    /// `(holder, owner)` pairs more than one hop apart where the holder
    /// could not open the owner's broadcast.
    pub missing_two_hop: Vec<(NodeId, NodeId)>,
}

/// Setup phase: issues every node's ring, hands out `K_A` to one-hop
/// neighbors, and broadcasts each `T_A` with A's neighborhood revoked.
pub fn provision(topo: &Topology, kdc: &mut Kdc) -> Result<Provisioning, SrdpError> {
    let mut rings = BTreeMap::new();
    for n in topo.node_ids() {
        rings.insert(n.clone(), kdc.issue(n)?);
    }
    let universe: BTreeSet<NodeId> = rings.keys().cloned().collect();
    let mut keys: BTreeMap<NodeId, NodeKeys> = BTreeMap::new();
    for (id, ring) in &rings {
        let mut pairwise = BTreeMap::new();
        for other in &universe {
            if other != id {
                pairwise.insert(other.clone(), kdc.pairwise().pairwise_key(id, other)?);
            }
        }
        keys.insert(
            id.clone(),
            NodeKeys {
                id: id.clone(),
                rdn_key: ring.rdn_group_key,
                broadcast_secret: ring.broadcast_secret,
                neighbor_keys: BTreeMap::new(),
                two_hop: BTreeMap::new(),
                pairwise,
                universe: universe.clone(),
            },
        );
    }
    let mut missing = Vec::new();
    for (owner, ring) in &rings {
        let rdn = topo.rdn(owner).expect("owner in topology");
        for n in &rdn {
            let k = ring.rdn_group_key;
            keys.get_mut(n).expect("neighbor issued").neighbor_keys.insert(owner.clone(), k);
        }
        let msg = match build_broadcast(ring, &ring.broadcast_secret, &rdn, kdc.params()) {
            Ok(m) => Some(m),
            Err(KdcError::EmptyCover) => None,
            Err(e) => return Err(e.into()),
        };
        for (holder, hring) in &rings {
            if holder == owner || rdn.contains(holder) {
                continue;
            }
            match msg.as_ref().map(|m| open_broadcast(hring, m, owner)) {
                Some(Ok(t)) => {
                    keys.get_mut(holder).expect("issued").two_hop.insert(owner.clone(), t);
                }
                _ => missing.push((holder.clone(), owner.clone())),
            }
        }
    }
    Ok(Provisioning {
        keys,
        missing_two_hop: missing,
    })
}

/// Length-prefixed node list, the `path` argument of the two-hop MAC.
pub fn encode_path(path: &[NodeId]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&(path.len() as u16).to_be_bytes());
    for id in path {
        out.extend_from_slice(&(id.as_bytes().len() as u16).to_be_bytes());
        out.extend_from_slice(id.as_bytes());
    }
    out
}

/// `h_0 = h(rreq, K_SD)`.
pub fn chain_anchor(k_sd: &SymKey, rreq: &RreqImmutable) -> Digest {
    mac(k_sd, &[&rreq.encode()])
}

/// `M_i = h(rreq, path_i, h_{i+1}, T_i)`.
pub fn two_hop_mac(t: &SymKey, rreq: &RreqImmutable, path: &[NodeId], h_next: &Digest) -> Digest {
    mac(t, &[&rreq.encode(), &encode_path(path), h_next.as_bytes()])
}

/// `q_0 = h(rrep, K_SD)`.
pub fn reply_anchor(k_sd: &SymKey, rrep: &Rrep) -> Digest {
    mac(k_sd, &[&rrep.encode()])
}

/// Reply MAC keyed by the pairwise key of nodes two apart on the reverse path.
pub fn reply_mac(k: &SymKey, rrep: &Rrep, q_next: &Digest) -> Digest {
    mac(k, &[&rrep.encode(), q_next.as_bytes()])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netsim::load_topology;

    #[test]
    fn provisioning_hides_t_from_neighbors() {
        let t = load_topology(
            "node S broker\nnode A relay\nnode B relay\nnode D coordinator\n\
link S A 10 2\nlink A B 10 2\nlink B D 10 2\n",
        )
        .unwrap();
        let mut kdc = Kdc::new(64, 8, [3; 32]).unwrap();
        let p = provision(&t, &mut kdc).unwrap();
        let a = &p.keys[&NodeId::from("A")];
        assert!(a.two_hop.get(&NodeId::from("S")).is_none());
        assert!(a.two_hop.get(&NodeId::from("B")).is_none());
        assert!(a.neighbor_keys.contains_key(&NodeId::from("S")));
        let b = &p.keys[&NodeId::from("B")];
        assert_eq!(
            b.two_hop.get(&NodeId::from("S")),
            Some(&p.keys[&NodeId::from("S")].broadcast_secret)
        );
        assert!(p.missing_two_hop.is_empty());
    }

    #[test]
    fn drop_reason_names_round_trip() {
        for r in DropReason::ALL {
            assert_eq!(DropReason::parse(r.as_str()), Some(r));
        }
    }
}
