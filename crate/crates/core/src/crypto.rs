//! Symmetric primitives shared by every protocol layer.
//!
//! | protocol value                      | primitive                 |
//! |-------------------------------------|---------------------------|
//! | h(.) chains `h_i`, `q_i`            | [`hash`], [`chain`]       |
//! | `h_0`, `q_0`, `M_i`, `M_TA`, tokens | [`mac`] (HMAC-SHA-256)    |
//! | `K_X([...])` sealed bodies          | [`seal`] / [`open`]       |
//! | MSBE encryption secrets `K_j^A`     | [`hash`] over `K_j ‖ A`   |

use std::fmt;

use chacha20poly1305::aead::{AeadInOut, KeyInit};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce, Tag};
use hmac::{Hmac, Mac};
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

pub const DIGEST_LEN: usize = 32;
pub const KEY_LEN: usize = 32;
pub const NONCE_LEN: usize = 12;
pub const TAG_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum CryptoError {
    #[error("authentication failure: wrong key or tampered box")]
    AuthFailure,
}

/// 32-byte output of [`hash`] or [`mac`].
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Digest(pub [u8; DIGEST_LEN]);

impl Digest {
    pub fn as_bytes(&self) -> &[u8; DIGEST_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({}..)", &self.to_hex()[..12])
    }
}

/// 32-byte symmetric secret. Deliberately not `Serialize`.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct SymKey([u8; KEY_LEN]);

impl SymKey {
    pub const fn from_bytes(bytes: [u8; KEY_LEN]) -> Self {
        SymKey(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; KEY_LEN] {
        &self.0
    }
}

impl From<Digest> for SymKey {
    fn from(d: Digest) -> Self {
        SymKey(d.0)
    }
}

impl fmt::Debug for SymKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SymKey(..)")
    }
}

/// Authenticated ciphertext: `nonce ‖ body ‖ tag` on the wire.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SealedBox {
    pub nonce: [u8; NONCE_LEN],
    pub body: Vec<u8>,
    pub tag: [u8; TAG_LEN],
}

impl SealedBox {
    pub fn wire_len(&self) -> usize {
        NONCE_LEN + self.body.len() + TAG_LEN
    }

    pub fn to_wire(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.wire_len());
        out.extend_from_slice(&self.nonce);
        out.extend_from_slice(&self.body);
        out.extend_from_slice(&self.tag);
        out
    }

    /// Splits `nonce ‖ body ‖ tag`; `None` if shorter than nonce plus tag.
    pub fn from_wire(bytes: &[u8]) -> Option<Self> {
        if bytes.len() < NONCE_LEN + TAG_LEN {
            return None;
        }
        let (nonce, rest) = bytes.split_at(NONCE_LEN);
        let (body, tag) = rest.split_at(rest.len() - TAG_LEN);
        Some(SealedBox {
            nonce: nonce.try_into().ok()?,
            body: body.to_vec(),
            tag: tag.try_into().ok()?,
        })
    }
}

pub fn hash(data: &[u8]) -> Digest {
    Digest(Sha256::digest(data).into())
}

/// Hash of the concatenation of `parts`, without framing.
pub fn hash_concat(parts: &[&[u8]]) -> Digest {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    Digest(h.finalize().into())
}

/// Keyed multi-argument digest. Each part is preceded by its length as a
/// 4-byte big-endian integer so that part boundaries are authenticated.
pub fn mac(key: &SymKey, parts: &[&[u8]]) -> Digest {
    let mut m = <Hmac<Sha256> as KeyInit>::new_from_slice(key.as_bytes())
        .expect("hmac accepts any key length");
    for p in parts {
        m.update(&(p.len() as u32).to_be_bytes());
        m.update(p);
    }
    Digest(m.finalize().into_bytes().into())
}

/// `i`-fold application of [`hash`]; `chain(h, 0) == h`.
pub fn chain(h0: &Digest, i: usize) -> Digest {
    let mut h = *h0;
    for _ in 0..i {
        h = hash(&h.0);
    }
    h
}

/// Authenticated encryption under ChaCha20-Poly1305.
///
/// The nonce is synthetic: the first 12 bytes of `mac(key, ["nonce", plaintext])`.
/// Distinct plaintexts under one key get distinct nonces, and sealing is a
/// pure function of its inputs, which keeps simulation traces reproducible.
pub fn seal(key: &SymKey, plaintext: &[u8]) -> SealedBox {
    let siv = mac(key, &[b"nonce", plaintext]);
    let mut nonce = [0u8; NONCE_LEN];
    nonce.copy_from_slice(&siv.0[..NONCE_LEN]);
    seal_with_nonce(key, nonce, plaintext)
}

pub fn seal_with_nonce(key: &SymKey, nonce: [u8; NONCE_LEN], plaintext: &[u8]) -> SealedBox {
    let cipher = ChaCha20Poly1305::new(&Key::from(key.0));
    let mut body = plaintext.to_vec();
    let tag = cipher
        .encrypt_inout_detached(&Nonce::from(nonce), b"", body.as_mut_slice().into())
        .expect("plaintext within chacha20poly1305 limits");
    SealedBox {
        nonce,
        body,
        tag: tag.into(),
    }
}

pub fn open(key: &SymKey, sealed: &SealedBox) -> Result<Vec<u8>, CryptoError> {
    let cipher = ChaCha20Poly1305::new(&Key::from(key.0));
    let mut body = sealed.body.clone();
    cipher
        .decrypt_inout_detached(
            &Nonce::from(sealed.nonce),
            b"",
            body.as_mut_slice().into(),
            &Tag::from(sealed.tag),
        )
        .map_err(|_| CryptoError::AuthFailure)?;
    Ok(body)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, RngCore, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    fn key(b: u8) -> SymKey {
        SymKey::from_bytes([b; KEY_LEN])
    }

    #[test]
    fn hash_is_deterministic_and_wide() {
        assert_eq!(hash(b"abc"), hash(b"abc"));
        let big = vec![0xa5u8; 1 << 20];
        assert_eq!(hash(&big).as_bytes().len(), 32);
    }

    #[test]
    fn hash_distinguishes_trailing_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let mut x = vec![0u8; 1024];
            rng.fill_bytes(&mut x);
            let mut y = x.clone();
            y.push(0);
            assert_ne!(hash(&x), hash(&y));
        }
    }

    #[test]
    fn mac_frames_part_boundaries() {
        let k = key(3);
        assert_ne!(mac(&k, &[b"x", b"y"]), mac(&k, &[b"xy"]));
        assert_eq!(mac(&k, &[b"m"]), mac(&k, &[b"m"]));
    }

    #[test]
    fn mac_binds_the_key() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut seen = HashSet::new();
        for _ in 0..1000 {
            let (mut a, mut b) = ([0u8; 32], [0u8; 32]);
            rng.fill_bytes(&mut a);
            rng.fill_bytes(&mut b);
            if a == b {
                continue;
            }
            let ma = mac(&SymKey::from_bytes(a), &[b"msg"]);
            let mb = mac(&SymKey::from_bytes(b), &[b"msg"]);
            assert_ne!(ma, mb);
            assert!(seen.insert(ma));
        }
    }

    #[test]
    fn seal_round_trip_and_key_binding() {
        let b = seal(&key(1), b"payload");
        assert_eq!(open(&key(1), &b).unwrap(), b"payload");
        assert_eq!(open(&key(2), &b), Err(CryptoError::AuthFailure));
    }

    #[test]
    fn every_single_bit_flip_is_rejected() {
        let k = key(9);
        let b = seal(&k, &[0x5au8; 64]);
        for i in 0..b.body.len() * 8 {
            let mut t = b.clone();
            t.body[i / 8] ^= 1 << (i % 8);
            assert_eq!(open(&k, &t), Err(CryptoError::AuthFailure), "body bit {i}");
        }
        for i in 0..TAG_LEN * 8 {
            let mut t = b.clone();
            t.tag[i / 8] ^= 1 << (i % 8);
            assert_eq!(open(&k, &t), Err(CryptoError::AuthFailure), "tag bit {i}");
        }
        for i in 0..NONCE_LEN * 8 {
            let mut t = b.clone();
            t.nonce[i / 8] ^= 1 << (i % 8);
            assert_eq!(open(&k, &t), Err(CryptoError::AuthFailure), "nonce bit {i}");
        }
    }

    #[test]
    fn distinct_plaintexts_get_distinct_nonces() {
        let k = key(4);
        let mut nonces = HashSet::new();
        for i in 0..500u32 {
            assert!(nonces.insert(seal(&k, &i.to_be_bytes()).nonce));
        }
    }

    #[test]
    fn chain_examples() {
        let h0 = hash(b"seed");
        assert_eq!(chain(&h0, 0), h0);
        assert_eq!(chain(&h0, 2), hash(&hash(&h0.0).0));
        assert_eq!(chain(&chain(&h0, 3), 2), chain(&h0, 5));
    }

    #[test]
    fn wire_split_round_trip() {
        let b = seal(&key(5), b"abc");
        assert_eq!(SealedBox::from_wire(&b.to_wire()), Some(b));
        assert_eq!(SealedBox::from_wire(&[0u8; 27]), None);
    }

    #[test]
    fn mac_boundary_corpus_has_no_collisions() {
        // Same concatenated bytes, different split points.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let k = key(8);
        let mut seen = HashSet::new();
        for _ in 0..10_000 {
            let len = rng.random_range(2..24);
            let mut data = vec![0u8; len];
            rng.fill_bytes(&mut data);
            let cut = rng.random_range(0..=len);
            let (a, b) = data.split_at(cut);
            let d = mac(&k, &[a, b]);
            seen.insert((data.clone(), cut, d));
        }
        let mut by_digest = std::collections::HashMap::new();
        for (data, cut, d) in seen {
            if let Some((d2, c2)) = by_digest.insert(d, (data.clone(), cut)) {
                assert_eq!((d2, c2), (data, cut), "digest collision across boundaries");
            }
        }
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]
            #[test]
            fn open_inverts_seal(k in any::<[u8; 32]>(), p in proptest::collection::vec(any::<u8>(), 0..65536)) {
                let key = SymKey::from_bytes(k);
                prop_assert_eq!(open(&key, &seal(&key, &p)).unwrap(), p);
            }

            #[test]
            fn chain_composes(seed in any::<[u8; 32]>(), i in 0usize..=64, j in 0usize..=64) {
                let h = Digest(seed);
                prop_assert_eq!(chain(&h, i + j), chain(&chain(&h, i), j));
            }
        }
    }
}
