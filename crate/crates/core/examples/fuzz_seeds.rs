//! Writes seed corpora for the fuzz targets under `fuzz/corpus/`.
//!
//! cargo run -p srdp-core --example fuzz_seeds -- fuzz/corpus

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use srdp_core::crypto::{open, SealedBox, SymKey};
use srdp_core::harness::{parse_adversary, run_scenario_detailed, ScenarioConfig};
use srdp_core::sbccp::{
    directory_refresh, encode_session, run_bccc, run_bcec, CloudDirectory, CloudUpdate, Ledger, SessionMessage, Task,
};
use srdp_core::srdp::{decode_frame, Frame, NodeKeys, RrepBody, RreqBody};
use srdp_core::NodeId;

const CLOUD: &str = include_str!("../../../scenarios/cloud.topo");
const LINE: &str = include_str!("../../../scenarios/line5.topo");

fn write(dir: &Path, target: &str, items: impl IntoIterator<Item = Vec<u8>>, cap: usize) {
    let d = dir.join(target);
    std::fs::create_dir_all(&d).expect("create corpus dir");
    let unique: BTreeSet<Vec<u8>> = items.into_iter().collect();
    for (i, item) in unique.into_iter().take(cap).enumerate() {
        std::fs::write(d.join(format!("seed-{i:03}")), item).expect("write seed");
    }
}

fn transcripts(keys: &BTreeMap<NodeId, NodeKeys>) -> Vec<SessionMessage> {
    let k = |s: &str| &keys[&NodeId::from(s)];
    let mut dir = CloudDirectory::new(1000);
    dir.register("C".into());
    directory_refresh(
        &mut dir,
        &"C".into(),
        CloudUpdate {
            services: ["compute".to_owned()].into(),
            free_datacenters: 2,
            mean_cost: 1.0,
            tariff: 2.0,
            sla_terms: "compute".into(),
        },
        0,
    )
    .expect("registered");
    let bcec = run_bcec(k("B"), k("E"), &[k("C")], &dir, "compute", true, 0).expect("bcec");
    let task = Task {
        units: 1,
        payload: b"cloudlet".to_vec(),
    };
    let bccc = run_bccc(k("B"), k("C"), &bcec.access, &task, 2.0, &mut Ledger::default()).expect("bccc");
    let mut out = bcec.transcript.transcript;
    out.extend(bcec.ceccc.transcript);
    out.extend(bccc.transcript.transcript);
    out
}

fn main() {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "fuzz/corpus".into()));
    let mut frames = Vec::new();
    let mut keys: Vec<SymKey> = Vec::new();
    let mut sessions = Vec::new();
    for (topo, adv, brk) in [
        (CLOUD, None, Some(300)),
        (CLOUD, Some("path-insert@R2"), None),
        (LINE, Some("rreq-field-tamper@B"), None),
    ] {
        let cfg = ScenarioConfig {
            adversary: adv.map(|a| parse_adversary(a).expect("valid spec")),
            break_active_at: brk,
            ..ScenarioConfig::with_topology(topo)
        };
        let run = run_scenario_detailed(&cfg, true).expect("scenario runs");
        frames.extend(run.sim.captured_frames().iter().cloned());
        for k in run.provisioning.keys.values() {
            keys.push(k.rdn_key);
            keys.extend(k.pairwise.values().copied());
        }
        if topo == CLOUD {
            sessions.extend(transcripts(&run.provisioning.keys).iter().map(encode_session));
        }
    }
    let opened = |s: &SealedBox| keys.iter().find_map(|k| open(k, s).ok());
    let mut rreqs = Vec::new();
    let mut rreps = Vec::new();
    let mut boxes = Vec::new();
    for f in &frames {
        match decode_frame(f) {
            Ok(Frame::Rreq(p)) => {
                boxes.push(p.sealed.to_wire());
                rreqs.extend(opened(&p.sealed).filter(|b| RreqBody::decode(b).is_ok()));
            }
            Ok(Frame::Rrep(p)) => {
                boxes.push(p.sealed.to_wire());
                rreps.extend(opened(&p.sealed).filter(|b| RrepBody::decode(b).is_ok()));
            }
            Ok(Frame::Rep(p)) => boxes.push(p.sealed_code.to_wire()),
            _ => {}
        }
    }
    let mut by_kind: Vec<Vec<u8>> = Vec::new();
    for kind in 1..=5u8 {
        by_kind.extend(frames.iter().filter(|f| f[0] == kind).take(6).cloned());
    }
    by_kind.extend(sessions.iter().take(4).cloned());
    write(&dir, "decode_frame", by_kind, 40);
    write(&dir, "rreq_body", rreqs, 12);
    write(&dir, "rrep_body", rreps, 12);
    write(&dir, "sealed_box", boxes, 12);
    write(&dir, "session_message", sessions, 24);
    write(
        &dir,
        "topology",
        [CLOUD, LINE, include_str!("../../../scenarios/line4.topo"), "node a broker\n", "# empty\n"]
            .map(|s| s.as_bytes().to_vec()),
        10,
    );
    write(
        &dir,
        "adversary_spec",
        [
            "path-insert@B",
            "path-insert@B:ghost",
            "path-delete@C",
            "path-modify@C:S",
            "rreq-field-tamper@n3",
            "replay@R1",
            "cost-deflate@R2",
            "token-forge@M",
        ]
        .map(|s| s.as_bytes().to_vec()),
        10,
    );
}
