use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Broker,
    Exchange,
    Coordinator,
    Relay,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Broker => "broker",
            Role::Exchange => "exchange",
            Role::Coordinator => "coordinator",
            Role::Relay => "relay",
        })
    }
}

impl FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "broker" => Ok(Role::Broker),
            "exchange" => Ok(Role::Exchange),
            "coordinator" => Ok(Role::Coordinator),
            "relay" => Ok(Role::Relay),
            other => Err(format!("unknown role {other:?}")),
        }
    }
}

/// Undirected link metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Link {
    /// Available bandwidth, Mb/s, strictly positive.
    pub bw_mbps: f64,
    /// Propagation delay, ms.
    pub delay_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    SelfLoop(NodeId),
    DuplicateLink(NodeId, NodeId),
    DuplicateNode(NodeId),
    UnknownNode(NodeId),
    NonpositiveBandwidth,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::SelfLoop(n) => write!(f, "self-loop on {n}"),
            Violation::DuplicateLink(a, b) => write!(f, "duplicate link {a}-{b}"),
            Violation::DuplicateNode(n) => write!(f, "duplicate node {n}"),
            Violation::UnknownNode(n) => write!(f, "unknown node {n}"),
            Violation::NonpositiveBandwidth => f.write_str("bandwidth must be positive"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TopologyError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: {violation}")]
    Invariant { line: usize, violation: Violation },
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
}

fn key(a: &NodeId, b: &NodeId) -> (NodeId, NodeId) {
    if a <= b {
        (a.clone(), b.clone())
    } else {
        (b.clone(), a.clone())
    }
}

/// Node set with roles plus undirected weighted links.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Topology {
    nodes: BTreeMap<NodeId, Role>,
    links: BTreeMap<(NodeId, NodeId), Link>,
}

impl Topology {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, id: NodeId, role: Role) -> Result<(), Violation> {
        if self.nodes.contains_key(&id) {
            return Err(Violation::DuplicateNode(id));
        }
        self.nodes.insert(id, role);
        Ok(())
    }

    pub fn add_link(&mut self, a: &NodeId, b: &NodeId, link: Link) -> Result<(), Violation> {
        if a == b {
            return Err(Violation::SelfLoop(a.clone()));
        }
        for n in [a, b] {
            if !self.nodes.contains_key(n) {
                return Err(Violation::UnknownNode(n.clone()));
            }
        }
        if !(link.bw_mbps > 0.0 && link.bw_mbps.is_finite()) {
            return Err(Violation::NonpositiveBandwidth);
        }
        let k = key(a, b);
        if self.links.contains_key(&k) {
            return Err(Violation::DuplicateLink(k.0, k.1));
        }
        self.links.insert(k, link);
        Ok(())
    }

    /// Replaces the metrics of an existing link.
    pub fn set_link(&mut self, a: &NodeId, b: &NodeId, link: Link) -> bool {
        match self.links.get_mut(&key(a, b)) {
            Some(l) => {
                *l = link;
                true
            }
            None => false,
        }
    }

    pub fn contains(&self, id: &NodeId) -> bool {
        self.nodes.contains_key(id)
    }

    pub fn role(&self, id: &NodeId) -> Option<Role> {
        self.nodes.get(id).copied()
    }

    pub fn nodes(&self) -> impl Iterator<Item = (&NodeId, Role)> {
        self.nodes.iter().map(|(n, r)| (n, *r))
    }

    pub fn node_ids(&self) -> impl Iterator<Item = &NodeId> {
        self.nodes.keys()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn links(&self) -> impl Iterator<Item = (&NodeId, &NodeId, &Link)> {
        self.links.iter().map(|((a, b), l)| (a, b, l))
    }

    pub fn link_count(&self) -> usize {
        self.links.len()
    }

    pub fn link(&self, a: &NodeId, b: &NodeId) -> Option<&Link> {
        self.links.get(&key(a, b))
    }

    pub fn nodes_with_role(&self, role: Role) -> impl Iterator<Item = &NodeId> {
        self.nodes
            .iter()
            .filter(move |(_, r)| **r == role)
            .map(|(n, _)| n)
    }

    /// One-hop neighborhood: every node sharing a link with `node`.
    pub fn rdn(&self, node: &NodeId) -> Result<BTreeSet<NodeId>, TopologyError> {
        if !self.contains(node) {
            return Err(TopologyError::UnknownNode(node.clone()));
        }
        Ok(self
            .links
            .keys()
            .filter_map(|(a, b)| {
                if a == node {
                    Some(b.clone())
                } else if b == node {
                    Some(a.clone())
                } else {
                    None
                }
            })
            .collect())
    }

    pub fn is_connected(&self) -> bool {
        let Some(start) = self.nodes.keys().next() else {
            return true;
        };
        let mut seen = BTreeSet::from([start.clone()]);
        let mut stack = vec![start.clone()];
        while let Some(n) = stack.pop() {
            for m in self.rdn(&n).unwrap_or_default() {
                if seen.insert(m.clone()) {
                    stack.push(m);
                }
            }
        }
        seen.len() == self.nodes.len()
    }

    /// Renders the line-oriented document accepted by [`load_topology`].
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (n, r) in &self.nodes {
            out.push_str(&format!("node {n} {r}\n"));
        }
        for ((a, b), l) in &self.links {
            out.push_str(&format!("link {a} {b} {} {}\n", l.bw_mbps, l.delay_ms));
        }
        out
    }
}

/// Parses a topology document:
///
/// ```text
/// # comment
/// node S broker
/// node D coordinator
/// link S D 10 2
/// ```
pub fn load_topology(text: &str) -> Result<Topology, TopologyError> {
    let mut topo = Topology::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let parse_err = |message: String| TopologyError::Parse { line, message };
        let fields: Vec<&str> = content.split_whitespace().collect();
        match fields.as_slice() {
            ["node", id, role] => {
                let role: Role = role.parse().map_err(parse_err)?;
                topo.add_node(NodeId::from(*id), role)
                    .map_err(|violation| TopologyError::Invariant { line, violation })?;
            }
            ["link", a, b, bw, delay] => {
                let bw: f64 = bw
                    .parse()
                    .map_err(|_| parse_err(format!("bad bandwidth {bw:?}")))?;
                let delay: u64 = delay
                    .parse()
                    .map_err(|_| parse_err(format!("bad delay {delay:?}")))?;
                if !bw.is_finite() {
                    return Err(parse_err(format!("bad bandwidth {bw}")));
                }
                topo.add_link(
                    &NodeId::from(*a),
                    &NodeId::from(*b),
                    Link {
                        bw_mbps: bw,
                        delay_ms: delay,
                    },
                )
                .map_err(|violation| TopologyError::Invariant { line, violation })?;
            }
            [kw, ..] if *kw == "node" || *kw == "link" => {
                return Err(parse_err(format!("wrong field count for {kw}")));
            }
            [kw, ..] => return Err(parse_err(format!("unknown directive {kw:?}"))),
            [] => unreachable!(),
        }
    }
    Ok(topo)
}

#[cfg(test)]
mod tests {
    use super::*;

    const LINE: &str = "\
# S-A-B-D
node S broker
node A relay
node B relay
node D coordinator
link S A 10 2
link A B 20 3   # faster
link B D 10 1
";

    #[test]
    fn loads_a_line() {
        let t = load_topology(LINE).unwrap();
        assert_eq!(t.node_count(), 4);
        assert_eq!(t.link_count(), 3);
        assert_eq!(t.link(&"B".into(), &"A".into()).unwrap().delay_ms, 3);
        assert_eq!(load_topology(&t.to_text()).unwrap(), t);
    }

    #[test]
    fn rejects_self_loop_and_duplicates() {
        let doc = "node S broker\nlink S S 10 2\n";
        assert!(matches!(
            load_topology(doc),
            Err(TopologyError::Invariant { line: 2, violation: Violation::SelfLoop(_) })
        ));
        let doc = "node S broker\nnode A relay\nlink S A 10 2\nlink A S 5 1\n";
        assert!(matches!(
            load_topology(doc),
            Err(TopologyError::Invariant { line: 4, violation: Violation::DuplicateLink(..) })
        ));
        let doc = "node S broker\nlink S Q 10 2\n";
        assert!(matches!(
            load_topology(doc),
            Err(TopologyError::Invariant { line: 2, violation: Violation::UnknownNode(_) })
        ));
    }

    #[test]
    fn reports_parse_errors_with_line() {
        assert!(matches!(
            load_topology("node S broker\nlink S A ten 2\n"),
            Err(TopologyError::Parse { line: 2, .. })
        ));
        assert!(matches!(load_topology("nodes S\n"), Err(TopologyError::Parse { line: 1, .. })));
        assert!(matches!(load_topology("node S pilot\n"), Err(TopologyError::Parse { line: 1, .. })));
        assert!(matches!(
            load_topology("node S broker\nnode A relay\nlink S A 0 2\n"),
            Err(TopologyError::Invariant { line: 3, violation: Violation::NonpositiveBandwidth })
        ));
    }

    #[test]
    fn rdn_is_adjacency() {
        let t = load_topology(LINE).unwrap();
        let a = t.rdn(&"A".into()).unwrap();
        assert_eq!(a, ["S", "B"].iter().map(|&s| NodeId::from(s)).collect());

        let mut star = Topology::new();
        star.add_node("c".into(), Role::Relay).unwrap();
        star.add_node("lonely".into(), Role::Relay).unwrap();
        for i in 0..5 {
            let n = NodeId::new(format!("s{i}"));
            star.add_node(n.clone(), Role::Relay).unwrap();
            star.add_link(&"c".into(), &n, Link { bw_mbps: 1.0, delay_ms: 1 }).unwrap();
        }
        assert_eq!(star.rdn(&"c".into()).unwrap().len(), 5);
        assert!(star.rdn(&"lonely".into()).unwrap().is_empty());
        assert!(matches!(star.rdn(&"zz".into()), Err(TopologyError::UnknownNode(_))));
    }
}
