//! Vehicle identities, the shared authentication code and nonce sourcing.

use std::collections::HashSet;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub const ELP_LEN: usize = 8;
pub const ECN_LEN: usize = 8;
pub const VAC_LEN: usize = ELP_LEN + ECN_LEN;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IdentityError {
    #[error("invalid identity: expected {expected} bytes, got {got}")]
    InvalidIdentity { expected: usize, got: usize },
}

/// Electronic license plate. Public, sent in clear in the first key request.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Elp([u8; ELP_LEN]);

/// Electronic chassis number. Never leaves the vehicle.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Ecn([u8; ECN_LEN]);

/// Vehicle authentication code, the secret shared by a vehicle and the CA.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Vac([u8; VAC_LEN]);

fn fixed<const N: usize>(bytes: &[u8]) -> Result<[u8; N], IdentityError> {
    bytes.try_into().map_err(|_| IdentityError::InvalidIdentity {
        expected: N,
        got: bytes.len(),
    })
}

impl Elp {
    pub fn from_slice(bytes: &[u8]) -> Result<Self, IdentityError> {
        fixed(bytes).map(Elp)
    }

    pub fn from_u64(value: u64) -> Self {
        Elp(value.to_be_bytes())
    }

    pub fn as_bytes(&self) -> &[u8; ELP_LEN] {
        &self.0
    }

    pub fn to_u64(self) -> u64 {
        u64::from_be_bytes(self.0)
    }
}

impl Ecn {
    pub fn from_slice(bytes: &[u8]) -> Result<Self, IdentityError> {
        fixed(bytes).map(Ecn)
    }

    pub fn from_u64(value: u64) -> Self {
        Ecn(value.to_be_bytes())
    }

    pub fn as_bytes(&self) -> &[u8; ECN_LEN] {
        &self.0
    }
}

impl Vac {
    pub fn as_bytes(&self) -> &[u8; VAC_LEN] {
        &self.0
    }
}

impl fmt::Debug for Elp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Elp({:016x})", self.to_u64())
    }
}

impl fmt::Display for Elp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.to_u64())
    }
}

// Secrets never print their contents.
impl fmt::Debug for Ecn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Ecn(..)")
    }
}

impl fmt::Debug for Vac {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Vac(..)")
    }
}

/// Composes the VAC as the raw concatenation `ELP || ECN`.
///
/// Deliberately naive; a hardened derivation can replace this without touching
/// callers.
pub fn make_vac(elp: &[u8], ecn: &[u8]) -> Result<Vac, IdentityError> {
    let elp = Elp::from_slice(elp)?;
    let ecn = Ecn::from_slice(ecn)?;
    Ok(vac_of(&elp, &ecn))
}

pub fn vac_of(elp: &Elp, ecn: &Ecn) -> Vac {
    let mut out = [0u8; VAC_LEN];
    out[..ELP_LEN].copy_from_slice(&elp.0);
    out[ELP_LEN..].copy_from_slice(&ecn.0);
    Vac(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Nonce(pub u64);

/// The agreed-upon function applied to N1 in the final key message.
pub fn f_nonce(n: Nonce) -> Nonce {
    Nonce(n.0.wrapping_add(1))
}

/// Per-entity nonce stream. Values never repeat within one source.
#[derive(Debug, Clone)]
pub struct NonceSource {
    rng: ChaCha8Rng,
    issued: HashSet<u64>,
}

impl NonceSource {
    /// Derives an independent stream for `entity` from the run seed.
    pub fn new(run_seed: u64, entity: u32) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(run_seed);
        rng.set_stream(u64::from(entity) + 1);
        NonceSource {
            rng,
            issued: HashSet::new(),
        }
    }

    pub fn fresh(&mut self) -> Nonce {
        loop {
            let candidate = self.rng.gen::<u64>();
            if self.issued.insert(candidate) {
                return Nonce(candidate);
            }
        }
    }

    pub fn issued_count(&self) -> usize {
        self.issued.len()
    }

    /// Raw bytes from the same stream, for key material.
    pub fn fill(&mut self, buf: &mut [u8]) {
        self.rng.fill(buf);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_identity_gives_zero_vac() {
        let vac = make_vac(&[0; 8], &[0; 8]).unwrap();
        assert_eq!(vac.as_bytes(), &[0u8; 16]);
    }

    #[test]
    fn vac_ordering_matters() {
        let a = [1u8, 2, 3, 4, 5, 6, 7, 8];
        let b = [9u8, 10, 11, 12, 13, 14, 15, 16];
        assert_ne!(make_vac(&a, &b).unwrap(), make_vac(&b, &a).unwrap());
    }

    #[test]
    fn wrong_length_is_rejected() {
        assert_eq!(
            make_vac(&[0; 7], &[0; 8]),
            Err(IdentityError::InvalidIdentity { expected: 8, got: 7 })
        );
        assert!(make_vac(&[0; 8], &[0; 9]).is_err());
    }

    #[test]
    fn fleet_vacs_are_distinct() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut pairs = HashSet::new();
        while pairs.len() < 1000 {
            pairs.insert((rng.gen::<u64>(), rng.gen::<u64>()));
        }
        let vacs: HashSet<[u8; 16]> = pairs
            .iter()
            .map(|(e, c)| *vac_of(&Elp::from_u64(*e), &Ecn::from_u64(*c)).as_bytes())
            .collect();
        assert_eq!(vacs.len(), 1000);
    }

    #[test]
    fn f_nonce_definition() {
        assert_eq!(f_nonce(Nonce(0)), Nonce(1));
        assert_eq!(f_nonce(Nonce(u64::MAX)), Nonce(0));
    }

    #[test]
    fn f_nonce_injective_over_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10_000 {
            let a = Nonce(rng.gen());
            let b = Nonce(rng.gen());
            if f_nonce(a) == f_nonce(b) {
                assert_eq!(a, b);
            } else {
                assert_ne!(a, b);
            }
        }
    }

    #[test]
    fn nonce_stream_is_unique_and_reproducible() {
        let mut a = NonceSource::new(42, 3);
        let mut b = NonceSource::new(42, 3);
        let first = a.fresh();
        let second = a.fresh();
        assert_ne!(first, second);
        assert_eq!(b.fresh(), first);
        assert_eq!(b.fresh(), second);

        let mut seen = HashSet::new();
        let mut src = NonceSource::new(1, 1);
        for _ in 0..100_000 {
            assert!(seen.insert(src.fresh()));
        }
    }

    #[test]
    fn entity_streams_differ() {
        let mut a = NonceSource::new(42, 1);
        let mut b = NonceSource::new(42, 2);
        assert_ne!(a.fresh(), b.fresh());
    }
}
