//! Frame types and the bit-exact wire codec.
//!
//! Every frame starts with a one-byte type. Integers are big-endian, node ids
//! and variable sections carry a 2-byte length prefix, floats travel as their
//! IEEE-754 bit pattern. See `docs/wire_format.md` for the byte tables.

use serde::{Deserialize, Serialize};

use crate::crypto::{Digest, SealedBox, DIGEST_LEN, NONCE_LEN, TAG_LEN};
use crate::ecms::{PathMetrics, RepPacket};
use crate::NodeId;

pub const FRAME_RREQ: u8 = 1;
pub const FRAME_RREP: u8 = 2;
pub const FRAME_REP: u8 = 3;
pub const FRAME_SESSION: u8 = 4;
pub const FRAME_DATA: u8 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("malformed frame: {0}")]
pub struct MalformedFrame(pub &'static str);

/// `(s_addr, s_seqno, b_id)`: identity of one discovery round.
pub type RoundId = (NodeId, u32, u32);

/// Fields fixed for the lifetime of a discovery round.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RreqImmutable {
    pub s_addr: NodeId,
    pub s_seqno: u32,
    pub b_id: u32,
    pub d_addr: NodeId,
    pub d_seqno: u32,
    pub max_hops: u8,
}

impl RreqImmutable {
    pub fn round(&self) -> RoundId {
        (self.s_addr.clone(), self.s_seqno, self.b_id)
    }

    /// Canonical bytes; the `rreq` argument of every chain anchor and MAC.
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.id(&self.s_addr);
        w.u32(self.s_seqno);
        w.u32(self.b_id);
        w.id(&self.d_addr);
        w.u32(self.d_seqno);
        w.u8(self.max_hops);
        w.0
    }

    fn read(r: &mut Reader<'_>) -> Result<Self, MalformedFrame> {
        Ok(RreqImmutable {
            s_addr: r.id()?,
            s_seqno: r.u32()?,
            b_id: r.u32()?,
            d_addr: r.id()?,
            d_seqno: r.u32()?,
            max_hops: r.u8()?,
        })
    }
}

/// Fields every relay rewrites. Carried in the clear and not authenticated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RreqMutable {
    pub hop_count: u8,
    pub path_cost: f64,
    pub metrics: PathMetrics,
}

impl RreqMutable {
    pub const ORIGIN: RreqMutable = RreqMutable {
        hop_count: 0,
        path_cost: 0.0,
        metrics: PathMetrics::EMPTY,
    };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RreqHeader {
    pub sender: NodeId,
    pub sender_seqno: u32,
    pub b_id: u32,
    pub mutable: RreqMutable,
}

/// Plaintext of the sealed RREQ body.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RreqBody {
    pub rreq: RreqImmutable,
    /// Relays traversed so far, source side first; excludes the source.
    pub path: Vec<NodeId>,
    /// `M_{i-1}`; absent only on the source's own frame.
    pub mac_prev: Option<Digest>,
    pub mac_curr: Digest,
    pub h: Digest,
}

impl RreqBody {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.raw(&self.rreq.encode());
        w.ids(&self.path);
        w.opt_digest(self.mac_prev.as_ref());
        w.digest(&self.mac_curr);
        w.digest(&self.h);
        w.0
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, MalformedFrame> {
        let mut r = Reader::new(bytes);
        let body = RreqBody {
            rreq: RreqImmutable::read(&mut r)?,
            path: r.ids()?,
            mac_prev: r.opt_digest()?,
            mac_curr: r.digest()?,
            h: r.digest()?,
        };
        r.finish()?;
        Ok(body)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RreqPacket {
    pub header: RreqHeader,
    pub sealed: SealedBox,
}

/// The `rrep` tuple covered by `q_0` and every reply MAC.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rrep {
    pub s_addr: NodeId,
    pub s_seqno: u32,
    pub d_addr: NodeId,
    pub d_seqno: u32,
    /// Selected relay sequence, source side first.
    pub route: Vec<NodeId>,
}

impl Rrep {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.id(&self.s_addr);
        w.u32(self.s_seqno);
        w.id(&self.d_addr);
        w.u32(self.d_seqno);
        w.ids(&self.route);
        w.0
    }

    fn read(r: &mut Reader<'_>) -> Result<Self, MalformedFrame> {
        Ok(Rrep {
            s_addr: r.id()?,
            s_seqno: r.u32()?,
            d_addr: r.id()?,
            d_seqno: r.u32()?,
            route: r.ids()?,
        })
    }

    /// `[D, r_L, ..., r_1, S]`: the order the reply travels.
    pub fn reverse_path(&self) -> Vec<NodeId> {
        let mut v = Vec::with_capacity(self.route.len() + 2);
        v.push(self.d_addr.clone());
        v.extend(self.route.iter().rev().cloned());
        v.push(self.s_addr.clone());
        v
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RrepBody {
    pub rrep: Rrep,
    pub q: Digest,
    pub mac_prev: Option<Digest>,
    pub mac_curr: Option<Digest>,
}

impl RrepBody {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.raw(&self.rrep.encode());
        w.digest(&self.q);
        w.opt_digest(self.mac_prev.as_ref());
        w.opt_digest(self.mac_curr.as_ref());
        w.0
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, MalformedFrame> {
        let mut r = Reader::new(bytes);
        let body = RrepBody {
            rrep: Rrep::read(&mut r)?,
            q: r.digest()?,
            mac_prev: r.opt_digest()?,
            mac_curr: r.opt_digest()?,
        };
        r.finish()?;
        Ok(body)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RrepPacket {
    pub sender: NodeId,
    pub sender_seqno: u32,
    pub sealed: SealedBox,
}

/// Cloudlet traffic forwarded over an installed route.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataPacket {
    pub s_addr: NodeId,
    pub s_seqno: u32,
    pub d_addr: NodeId,
    pub seq: u32,
    pub route: Vec<NodeId>,
    pub payload: Vec<u8>,
}

/// Session handshake message: `step = handshake * 16 + index`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionFrame {
    pub step: u8,
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Frame {
    Rreq(RreqPacket),
    Rrep(RrepPacket),
    Rep(RepPacket),
    Session(SessionFrame),
    Data(DataPacket),
}

impl Frame {
    pub fn kind(&self) -> u8 {
        match self {
            Frame::Rreq(_) => FRAME_RREQ,
            Frame::Rrep(_) => FRAME_RREP,
            Frame::Rep(_) => FRAME_REP,
            Frame::Session(_) => FRAME_SESSION,
            Frame::Data(_) => FRAME_DATA,
        }
    }
}

pub fn encode_frame(frame: &Frame) -> Vec<u8> {
    let mut w = Writer::default();
    w.u8(frame.kind());
    match frame {
        Frame::Rreq(p) => {
            w.id(&p.header.sender);
            w.u32(p.header.sender_seqno);
            w.u32(p.header.b_id);
            w.u8(p.header.mutable.hop_count);
            w.f64(p.header.mutable.path_cost);
            w.u32(p.header.mutable.metrics.hc);
            w.f64(p.header.mutable.metrics.bw);
            w.f64(p.header.mutable.metrics.nd);
            w.sealed(&p.sealed);
        }
        Frame::Rrep(p) => {
            w.id(&p.sender);
            w.u32(p.sender_seqno);
            w.sealed(&p.sealed);
        }
        Frame::Rep(p) => {
            w.id(&p.s_addr);
            w.u32(p.s_seqno);
            w.id(&p.d_addr);
            w.u32(p.d_seqno);
            w.id(&p.reporter);
            w.ids(&p.route);
            w.sealed(&p.sealed_code);
        }
        Frame::Session(s) => {
            w.u8(s.step);
            w.bytes(&s.payload);
        }
        Frame::Data(d) => {
            w.id(&d.s_addr);
            w.u32(d.s_seqno);
            w.id(&d.d_addr);
            w.u32(d.seq);
            w.ids(&d.route);
            w.bytes(&d.payload);
        }
    }
    w.0
}

pub fn decode_frame(bytes: &[u8]) -> Result<Frame, MalformedFrame> {
    let mut r = Reader::new(bytes);
    let frame = match r.u8()? {
        FRAME_RREQ => {
            let header = RreqHeader {
                sender: r.id()?,
                sender_seqno: r.u32()?,
                b_id: r.u32()?,
                mutable: RreqMutable {
                    hop_count: r.u8()?,
                    path_cost: r.f64()?,
                    metrics: PathMetrics {
                        hc: r.u32()?,
                        bw: r.f64()?,
                        nd: r.f64()?,
                    },
                },
            };
            let m = &header.mutable;
            if m.path_cost < 0.0 || m.metrics.nd < 0.0 || !(m.metrics.bw > 0.0) {
                return Err(MalformedFrame("metric out of range"));
            }
            Frame::Rreq(RreqPacket {
                header,
                sealed: r.sealed()?,
            })
        }
        FRAME_RREP => Frame::Rrep(RrepPacket {
            sender: r.id()?,
            sender_seqno: r.u32()?,
            sealed: r.sealed()?,
        }),
        FRAME_REP => Frame::Rep(RepPacket {
            s_addr: r.id()?,
            s_seqno: r.u32()?,
            d_addr: r.id()?,
            d_seqno: r.u32()?,
            reporter: r.id()?,
            route: r.ids()?,
            sealed_code: r.sealed()?,
        }),
        FRAME_SESSION => Frame::Session(SessionFrame {
            step: r.u8()?,
            payload: r.bytes()?.to_vec(),
        }),
        FRAME_DATA => Frame::Data(DataPacket {
            s_addr: r.id()?,
            s_seqno: r.u32()?,
            d_addr: r.id()?,
            seq: r.u32()?,
            route: r.ids()?,
            payload: r.bytes()?.to_vec(),
        }),
        _ => return Err(MalformedFrame("unknown frame type")),
    };
    r.finish()?;
    Ok(frame)
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }

    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_be_bytes());
    }

    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_be_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_bits().to_be_bytes());
    }

    fn raw(&mut self, b: &[u8]) {
        self.0.extend_from_slice(b);
    }

    fn bytes(&mut self, b: &[u8]) {
        let len = u16::try_from(b.len()).expect("section fits in 64 KiB");
        self.u16(len);
        self.raw(b);
    }

    fn id(&mut self, id: &NodeId) {
        self.bytes(id.as_bytes());
    }

    fn ids(&mut self, ids: &[NodeId]) {
        self.u16(u16::try_from(ids.len()).expect("path fits"));
        for id in ids {
            self.id(id);
        }
    }

    fn digest(&mut self, d: &Digest) {
        self.raw(d.as_bytes());
    }

    fn opt_digest(&mut self, d: Option<&Digest>) {
        match d {
            Some(d) => {
                self.u8(1);
                self.digest(d);
            }
            None => self.u8(0),
        }
    }

    fn sealed(&mut self, b: &SealedBox) {
        self.bytes(&b.to_wire());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], MalformedFrame> {
        if self.buf.len() < n {
            return Err(MalformedFrame("truncated"));
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8, MalformedFrame> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, MalformedFrame> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32, MalformedFrame> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64, MalformedFrame> {
        let v = f64::from_bits(u64::from_be_bytes(self.take(8)?.try_into().expect("8 bytes")));
        if v.is_nan() {
            return Err(MalformedFrame("NaN metric"));
        }
        Ok(v)
    }

    fn bytes(&mut self) -> Result<&'a [u8], MalformedFrame> {
        let n = self.u16()? as usize;
        self.take(n)
    }

    fn id(&mut self) -> Result<NodeId, MalformedFrame> {
        let raw = self.bytes()?;
        let s = std::str::from_utf8(raw).map_err(|_| MalformedFrame("node id not UTF-8"))?;
        if s.is_empty() {
            return Err(MalformedFrame("empty node id"));
        }
        Ok(NodeId::from(s))
    }

    fn ids(&mut self) -> Result<Vec<NodeId>, MalformedFrame> {
        let n = self.u16()? as usize;
        // Each id needs at least three bytes; reject impossible counts early.
        if n > self.buf.len() / 3 {
            return Err(MalformedFrame("truncated"));
        }
        (0..n).map(|_| self.id()).collect()
    }

    fn digest(&mut self) -> Result<Digest, MalformedFrame> {
        Ok(Digest(self.take(DIGEST_LEN)?.try_into().expect("32 bytes")))
    }

    fn opt_digest(&mut self) -> Result<Option<Digest>, MalformedFrame> {
        match self.u8()? {
            0 => Ok(None),
            1 => Ok(Some(self.digest()?)),
            _ => Err(MalformedFrame("bad option flag")),
        }
    }

    fn sealed(&mut self) -> Result<SealedBox, MalformedFrame> {
        let raw = self.bytes()?;
        if raw.len() < NONCE_LEN + TAG_LEN {
            return Err(MalformedFrame("sealed box too short"));
        }
        SealedBox::from_wire(raw).ok_or(MalformedFrame("sealed box too short"))
    }

    fn finish(&self) -> Result<(), MalformedFrame> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(MalformedFrame("trailing bytes"))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{hash, seal, SymKey};
    use rand::{Rng, RngCore, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rreq_frame() -> Frame {
        let body = RreqBody {
            rreq: RreqImmutable {
                s_addr: "S".into(),
                s_seqno: 1,
                b_id: 1,
                d_addr: "D".into(),
                d_seqno: 0,
                max_hops: 16,
            },
            path: vec!["A".into()],
            mac_prev: Some(hash(b"m0")),
            mac_curr: hash(b"m1"),
            h: hash(b"h1"),
        };
        Frame::Rreq(RreqPacket {
            header: RreqHeader {
                sender: "A".into(),
                sender_seqno: 4,
                b_id: 1,
                mutable: RreqMutable {
                    hop_count: 1,
                    path_cost: 3.01,
                    metrics: PathMetrics { hc: 1, bw: 10.0, nd: 2.0 },
                },
            },
            sealed: seal(&SymKey::from_bytes([1; 32]), &body.encode()),
        })
    }

    #[test]
    fn rreq_round_trip() {
        let f = rreq_frame();
        assert_eq!(decode_frame(&encode_frame(&f)).unwrap(), f);
    }

    #[test]
    fn origin_metrics_round_trip() {
        let Frame::Rreq(mut p) = rreq_frame() else { unreachable!() };
        p.header.mutable = RreqMutable::ORIGIN;
        let f = Frame::Rreq(p);
        assert_eq!(decode_frame(&encode_frame(&f)).unwrap(), f);
    }

    #[test]
    fn bodies_round_trip() {
        let b = RreqBody {
            rreq: RreqImmutable {
                s_addr: "S".into(),
                s_seqno: 9,
                b_id: 2,
                d_addr: "D".into(),
                d_seqno: 1,
                max_hops: 3,
            },
            path: vec![],
            mac_prev: None,
            mac_curr: hash(b"x"),
            h: hash(b"y"),
        };
        assert_eq!(RreqBody::decode(&b.encode()).unwrap(), b);
        let r = RrepBody {
            rrep: Rrep {
                s_addr: "S".into(),
                s_seqno: 9,
                d_addr: "D".into(),
                d_seqno: 1,
                route: vec!["A".into(), "B".into()],
            },
            q: hash(b"q"),
            mac_prev: None,
            mac_curr: Some(hash(b"m")),
        };
        assert_eq!(RrepBody::decode(&r.encode()).unwrap(), r);
        assert_eq!(
            r.rrep.reverse_path(),
            ["D", "B", "A", "S"].map(NodeId::from).to_vec()
        );
    }

    #[test]
    fn truncation_is_malformed() {
        let bytes = encode_frame(&rreq_frame());
        for cut in 0..bytes.len() {
            assert!(decode_frame(&bytes[..cut]).is_err(), "cut {cut}");
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert_eq!(decode_frame(&extra), Err(MalformedFrame("trailing bytes")));
        assert_eq!(decode_frame(&[9]), Err(MalformedFrame("unknown frame type")));
    }

    #[test]
    fn rejects_nan_and_negative_cost() {
        let Frame::Rreq(mut p) = rreq_frame() else { unreachable!() };
        p.header.mutable.path_cost = -1.0;
        assert!(decode_frame(&encode_frame(&Frame::Rreq(p.clone()))).is_err());
        p.header.mutable.path_cost = f64::NAN;
        assert!(decode_frame(&encode_frame(&Frame::Rreq(p))).is_err());
    }

    #[test]
    fn random_bytes_never_panic() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10_000 {
            let len = rng.random_range(0..200);
            let mut b = vec![0u8; len];
            rng.fill_bytes(&mut b);
            if let Some(first) = b.first_mut() {
                *first = rng.random_range(0..7);
            }
            let _ = decode_frame(&b);
            let _ = RreqBody::decode(&b);
            let _ = RrepBody::decode(&b);
        }
    }
}
