//! Pluggable sealing provider.
//!
//! `Real` mode uses static-static X25519 between sender and recipient, a
//! SHA-256 key derivation bound to both public keys, and ChaCha20-Poly1305.
//! Only the holder of the sender's secret or the recipient's secret can
//! produce a valid seal, so a successful open authenticates the sender and
//! keeps the payload confidential to the recipient. AEAD nonces are derived
//! synthetically from key and plaintext, which keeps runs reproducible
//! without an RNG in the provider.
//!
//! `Mock` mode keeps the same framing and failure classes but replaces the
//! primitives with a SHA-256 keystream and a 32-bit tag.

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, RwLock};

use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce as AeadNonce};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::identity::Vac;

const FINGERPRINT_LEN: usize = 8;
const AEAD_NONCE_LEN: usize = 12;
const MOCK_TAG_LEN: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum CryptoError {
    #[error("authentication failure")]
    AuthenticationFailure,
    #[error("confidentiality failure: sealed for another recipient")]
    ConfidentialityFailure,
    #[error("empty payload")]
    EmptyPayload,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CryptoMode {
    Real,
    Mock,
}

impl std::str::FromStr for CryptoMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "real" => Ok(CryptoMode::Real),
            "mock" => Ok(CryptoMode::Mock),
            other => Err(format!("unknown crypto mode `{other}` (expected real|mock)")),
        }
    }
}

impl fmt::Display for CryptoMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CryptoMode::Real => "real",
            CryptoMode::Mock => "mock",
        })
    }
}

/// Public half of an entity key pair.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct PublicKey {
    pub owner: u32,
    bytes: [u8; 32],
}

impl PublicKey {
    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.bytes
    }

    pub fn fingerprint(&self) -> [u8; FINGERPRINT_LEN] {
        let digest = Sha256::new().chain_update(b"fp").chain_update(self.bytes).finalize();
        let mut out = [0u8; FINGERPRINT_LEN];
        out.copy_from_slice(&digest[..FINGERPRINT_LEN]);
        out
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey(owner={}, ", self.owner)?;
        for b in &self.bytes[..4] {
            write!(f, "{b:02x}")?;
        }
        f.write_str("..)")
    }
}

#[derive(Clone)]
pub struct KeyPair {
    pub public: PublicKey,
    secret: [u8; 32],
}

impl KeyPair {
    pub fn owner(&self) -> u32 {
        self.public.owner
    }

    /// The same key material assigned to another entity id.
    pub fn with_owner(&self, owner: u32) -> KeyPair {
        KeyPair {
            public: PublicKey {
                owner,
                bytes: self.public.bytes,
            },
            secret: self.secret,
        }
    }
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair")
            .field("public", &self.public)
            .finish_non_exhaustive()
    }
}

/// Distributed key material. Stands in for the certificate the CA issues.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SessionKey {
    pub key_material: [u8; 32],
    pub lifetime: f64,
    pub issue_time: f64,
}

pub const SESSION_KEY_LEN: usize = 48;

impl SessionKey {
    pub fn expires_at(&self) -> f64 {
        self.issue_time + self.lifetime
    }

    pub fn is_expired(&self, now: f64) -> bool {
        now >= self.expires_at()
    }

    pub fn encode(&self) -> [u8; SESSION_KEY_LEN] {
        let mut out = [0u8; SESSION_KEY_LEN];
        out[..32].copy_from_slice(&self.key_material);
        out[32..40].copy_from_slice(&self.lifetime.to_bits().to_be_bytes());
        out[40..].copy_from_slice(&self.issue_time.to_bits().to_be_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Option<Self> {
        if bytes.len() != SESSION_KEY_LEN {
            return None;
        }
        let mut key_material = [0u8; 32];
        key_material.copy_from_slice(&bytes[..32]);
        let lifetime = f64::from_bits(u64::from_be_bytes(bytes[32..40].try_into().ok()?));
        let issue_time = f64::from_bits(u64::from_be_bytes(bytes[40..].try_into().ok()?));
        (lifetime > 0.0).then_some(SessionKey {
            key_material,
            lifetime,
            issue_time,
        })
    }
}

type SharedCache = Arc<RwLock<HashMap<([u8; 32], [u8; 32]), [u8; 32]>>>;

/// Sealing provider. Cloning shares the Diffie-Hellman cache, so worlds built
/// from one keyring do not recompute pairwise secrets.
#[derive(Clone)]
pub struct CryptoProvider {
    mode: CryptoMode,
    shared: SharedCache,
}

impl fmt::Debug for CryptoProvider {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CryptoProvider").field("mode", &self.mode).finish()
    }
}

impl CryptoProvider {
    pub fn new(mode: CryptoMode) -> Self {
        CryptoProvider {
            mode,
            shared: Arc::default(),
        }
    }

    pub fn mode(&self) -> CryptoMode {
        self.mode
    }

    pub fn keypair_from_seed(&self, owner: u32, seed: [u8; 32]) -> KeyPair {
        let bytes = match self.mode {
            CryptoMode::Real => {
                let secret = x25519_dalek::StaticSecret::from(seed);
                *x25519_dalek::PublicKey::from(&secret).as_bytes()
            }
            CryptoMode::Mock => Sha256::new()
                .chain_update(b"mock-pub")
                .chain_update(seed)
                .finalize()
                .into(),
        };
        KeyPair {
            public: PublicKey { owner, bytes },
            secret: seed,
        }
    }

    /// Seals `payload` with the VAC shared by a vehicle and the CA.
    pub fn sym_seal(&self, vac: &Vac, payload: &[u8]) -> Result<Vec<u8>, CryptoError> {
        if payload.is_empty() {
            return Err(CryptoError::EmptyPayload);
        }
        let key = vac_key(vac);
        Ok(match self.mode {
            CryptoMode::Real => aead_seal(&key, &[], payload),
            CryptoMode::Mock => mock_seal(&key, &[], payload),
        })
    }

    pub fn sym_open(&self, vac: &Vac, sealed: &[u8]) -> Result<Vec<u8>, CryptoError> {
        let key = vac_key(vac);
        match self.mode {
            CryptoMode::Real => aead_open(&key, &[], sealed),
            CryptoMode::Mock => mock_open(&key, &[], sealed),
        }
    }

    /// Signs with the sender's secret and encrypts for the recipient.
    pub fn asym_seal(&self, sender: &KeyPair, recipient: &PublicKey, payload: &[u8]) -> Result<Vec<u8>, CryptoError> {
        if payload.is_empty() {
            return Err(CryptoError::EmptyPayload);
        }
        let fp = recipient.fingerprint();
        let key = self.pair_key(sender, recipient, &sender.public, recipient);
        let body = match self.mode {
            CryptoMode::Real => aead_seal(&key, &fp, payload),
            CryptoMode::Mock => mock_seal(&key, &fp, payload),
        };
        let mut out = Vec::with_capacity(FINGERPRINT_LEN + body.len());
        out.extend_from_slice(&fp);
        out.extend_from_slice(&body);
        Ok(out)
    }

    /// Inverts [`asym_seal`](Self::asym_seal). A seal addressed to another
    /// key yields `ConfidentialityFailure`; a wrong claimed sender or any
    /// tampering yields `AuthenticationFailure`.
    pub fn asym_open(&self, recipient: &KeyPair, sender: &PublicKey, sealed: &[u8]) -> Result<Vec<u8>, CryptoError> {
        if sealed.len() < FINGERPRINT_LEN {
            return Err(CryptoError::AuthenticationFailure);
        }
        let (fp, body) = sealed.split_at(FINGERPRINT_LEN);
        if fp != recipient.public.fingerprint() {
            return Err(CryptoError::ConfidentialityFailure);
        }
        let key = self.pair_key(recipient, sender, sender, &recipient.public);
        match self.mode {
            CryptoMode::Real => aead_open(&key, fp, body),
            CryptoMode::Mock => mock_open(&key, fp, body),
        }
    }

    fn pair_key(&self, own: &KeyPair, peer: &PublicKey, sender: &PublicKey, recipient: &PublicKey) -> [u8; 32] {
        let shared = match self.mode {
            CryptoMode::Real => self.dh(own, peer),
            // Mock keys carry no algebra; bind to the public halves only.
            CryptoMode::Mock => [0u8; 32],
        };
        Sha256::new()
            .chain_update(b"asym")
            .chain_update(shared)
            .chain_update(sender.bytes)
            .chain_update(recipient.bytes)
            .finalize()
            .into()
    }

    fn dh(&self, own: &KeyPair, peer: &PublicKey) -> [u8; 32] {
        // Both ends of a pair derive the same secret, so one entry serves both.
        let cache_key = if own.public.bytes <= peer.bytes {
            (own.public.bytes, peer.bytes)
        } else {
            (peer.bytes, own.public.bytes)
        };
        if let Some(hit) = self.shared.read().expect("dh cache poisoned").get(&cache_key) {
            return *hit;
        }
        let secret = x25519_dalek::StaticSecret::from(own.secret);
        let shared = *secret
            .diffie_hellman(&x25519_dalek::PublicKey::from(peer.bytes))
            .as_bytes();
        self.shared
            .write()
            .expect("dh cache poisoned")
            .insert(cache_key, shared);
        shared
    }
}

fn vac_key(vac: &Vac) -> [u8; 32] {
    Sha256::new()
        .chain_update(b"vac")
        .chain_update(vac.as_bytes())
        .finalize()
        .into()
}

fn aead_seal(key: &[u8; 32], aad: &[u8], payload: &[u8]) -> Vec<u8> {
    let digest = Sha256::new()
        .chain_update(b"siv")
        .chain_update(key)
        .chain_update(aad)
        .chain_update(payload)
        .finalize();
    let nonce = AeadNonce::from_slice(&digest[..AEAD_NONCE_LEN]);
    let cipher = ChaCha20Poly1305::new(Key::from_slice(key));
    let ct = cipher
        .encrypt(nonce, Payload { msg: payload, aad })
        .expect("chacha20poly1305 encryption is infallible for in-memory buffers");
    let mut out = Vec::with_capacity(AEAD_NONCE_LEN + ct.len());
    out.extend_from_slice(nonce);
    out.extend_from_slice(&ct);
    out
}

fn aead_open(key: &[u8; 32], aad: &[u8], sealed: &[u8]) -> Result<Vec<u8>, CryptoError> {
    if sealed.len() <= AEAD_NONCE_LEN {
        return Err(CryptoError::AuthenticationFailure);
    }
    let (nonce, ct) = sealed.split_at(AEAD_NONCE_LEN);
    ChaCha20Poly1305::new(Key::from_slice(key))
        .decrypt(AeadNonce::from_slice(nonce), Payload { msg: ct, aad })
        .map_err(|_| CryptoError::AuthenticationFailure)
}

fn keystream_xor(key: &[u8; 32], data: &mut [u8]) {
    for (block, chunk) in data.chunks_mut(32).enumerate() {
        let pad = Sha256::new()
            .chain_update(b"ks")
            .chain_update(key)
            .chain_update((block as u64).to_be_bytes())
            .finalize();
        for (b, p) in chunk.iter_mut().zip(pad.iter()) {
            *b ^= p;
        }
    }
}

fn mock_tag(key: &[u8; 32], aad: &[u8], plain: &[u8]) -> [u8; MOCK_TAG_LEN] {
    let digest = Sha256::new()
        .chain_update(b"tag")
        .chain_update(key)
        .chain_update(aad)
        .chain_update(plain)
        .finalize();
    let mut out = [0u8; MOCK_TAG_LEN];
    out.copy_from_slice(&digest[..MOCK_TAG_LEN]);
    out
}

fn mock_seal(key: &[u8; 32], aad: &[u8], payload: &[u8]) -> Vec<u8> {
    let tag = mock_tag(key, aad, payload);
    let mut out = payload.to_vec();
    keystream_xor(key, &mut out);
    out.extend_from_slice(&tag);
    out
}

fn mock_open(key: &[u8; 32], aad: &[u8], sealed: &[u8]) -> Result<Vec<u8>, CryptoError> {
    if sealed.len() <= MOCK_TAG_LEN {
        return Err(CryptoError::AuthenticationFailure);
    }
    let (body, tag) = sealed.split_at(sealed.len() - MOCK_TAG_LEN);
    let mut plain = body.to_vec();
    keystream_xor(key, &mut plain);
    if mock_tag(key, aad, &plain) != tag {
        return Err(CryptoError::AuthenticationFailure);
    }
    Ok(plain)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::identity::{vac_of, Ecn, Elp};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const MODES: [CryptoMode; 2] = [CryptoMode::Real, CryptoMode::Mock];

    fn vac(n: u64) -> Vac {
        vac_of(&Elp::from_u64(n), &Ecn::from_u64(n.wrapping_mul(31) ^ 0xabcd))
    }

    fn kp(c: &CryptoProvider, owner: u32) -> KeyPair {
        c.keypair_from_seed(owner, [owner as u8 ^ 0x5a; 32])
    }

    #[test]
    fn sym_round_trip_and_key_mismatch() {
        for mode in MODES {
            let c = CryptoProvider::new(mode);
            let sealed = c.sym_seal(&vac(1), b"key material").unwrap();
            assert_eq!(c.sym_open(&vac(1), &sealed).unwrap(), b"key material");
            assert_eq!(c.sym_open(&vac(2), &sealed), Err(CryptoError::AuthenticationFailure));
            assert_eq!(c.sym_seal(&vac(1), b""), Err(CryptoError::EmptyPayload));
        }
    }

    #[test]
    fn sym_detects_every_sampled_bit_flip() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for mode in MODES {
            let c = CryptoProvider::new(mode);
            let sealed = c.sym_seal(&vac(3), &[7u8; 56]).unwrap();
            for _ in 0..100 {
                let bit = rng.gen_range(0..sealed.len() * 8);
                let mut t = sealed.clone();
                t[bit / 8] ^= 1 << (bit % 8);
                assert_eq!(
                    c.sym_open(&vac(3), &t),
                    Err(CryptoError::AuthenticationFailure),
                    "{mode} bit {bit}"
                );
            }
        }
    }

    #[test]
    fn asym_contracts() {
        for mode in MODES {
            let c = CryptoProvider::new(mode);
            let rsu = kp(&c, 10);
            let mgr = kp(&c, 2);
            let intruder = kp(&c, 99);
            let sealed = c.asym_seal(&rsu, &mgr.public, b"ELP||N1||N2").unwrap();
            assert_eq!(c.asym_open(&mgr, &rsu.public, &sealed).unwrap(), b"ELP||N1||N2");
            assert_eq!(
                c.asym_open(&mgr, &intruder.public, &sealed),
                Err(CryptoError::AuthenticationFailure)
            );
            assert_eq!(
                c.asym_open(&intruder, &rsu.public, &sealed),
                Err(CryptoError::ConfidentialityFailure)
            );
            let mut tampered = sealed.clone();
            *tampered.last_mut().unwrap() ^= 0x80;
            assert_eq!(
                c.asym_open(&mgr, &rsu.public, &tampered),
                Err(CryptoError::AuthenticationFailure)
            );
            // intruder re-seals with its own key while claiming the RSU's identity
            let forged = c.asym_seal(&intruder, &mgr.public, b"ELP||N1||N2").unwrap();
            assert_eq!(
                c.asym_open(&mgr, &rsu.public, &forged),
                Err(CryptoError::AuthenticationFailure)
            );
        }
    }

    #[test]
    fn asym_round_trip_for_every_ordered_pair() {
        for mode in MODES {
            let c = CryptoProvider::new(mode);
            let keys: Vec<KeyPair> = (0..6).map(|i| kp(&c, i)).collect();
            for s in &keys {
                for r in &keys {
                    let sealed = c.asym_seal(s, &r.public, b"payload").unwrap();
                    assert_eq!(c.asym_open(r, &s.public, &sealed).unwrap(), b"payload");
                }
            }
        }
    }

    #[test]
    fn session_key_codec() {
        let k = SessionKey {
            key_material: [9; 32],
            lifetime: 300.0,
            issue_time: 12.5,
        };
        assert_eq!(SessionKey::decode(&k.encode()), Some(k));
        assert!(SessionKey::decode(&[0; 47]).is_none());
        assert!(!k.is_expired(312.4));
        assert!(k.is_expired(312.5));
    }
}
