//! Entity state machines for key acquisition, mobility registration and
//! revocation delivery.
//!
//! Handlers are synchronous: each takes the incoming message plus the current
//! simulation time and returns the messages to emit. Scheduling, delays and
//! radio reachability are the simulator's concern.

mod ca;
mod manager;
pub mod message;
mod rsu;
mod vehicle;

use thiserror::Error;

pub use ca::{CaState, IssuedRecord, KeyIssue, RefusalReason};
pub use manager::{
    HandoffAck, ManagerFanout, ManagerState, PeerManager, RegistryEntry, RevocationRouting, RoutingPolicy, RsuInfo,
};
pub use message::{EntityId, MessageKind, ProtocolMessage};
pub use rsu::{PassedVehicle, RsuRevocation, RsuState};
pub use vehicle::{Rejected, VehicleState};

use crate::crypto::{CryptoError, SessionKey};
use crate::identity::Elp;
use message::CodecError;

/// Destination used for local radio broadcasts.
pub const BROADCAST: EntityId = EntityId(u32::MAX);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Certificate {
    pub session_key: SessionKey,
    pub issue_time: f64,
    pub lifetime: f64,
    pub subject_elp: Elp,
    pub revoked: bool,
}

impl Certificate {
    pub fn expires_at(&self) -> f64 {
        self.issue_time + self.lifetime
    }

    pub fn is_valid(&self, now: f64) -> bool {
        !self.revoked && now < self.expires_at()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SecurityEventKind {
    /// A seal failed to open under the expected keys.
    BadSeal,
    /// A response echoed a nonce this entity never issued or already consumed.
    ReplayOrForgery,
    /// A key response whose trailing nonce does not answer the pending request.
    StaleResponse,
    /// A key response sealed under a different VAC, or forged.
    NotForMe,
    /// Message from an entity outside this node's trust relationships.
    UnknownSender,
    /// New key request for an identity whose certificate has most of its
    /// life left.
    EarlyReRequest,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SecurityEvent {
    pub time: f64,
    pub at: EntityId,
    pub kind: SecurityEventKind,
    pub message: MessageKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("no roadside unit in range")]
    NoInfrastructure,
    #[error("malformed message: {0}")]
    Malformed(#[from] CodecError),
    #[error("unexpected message kind {got:?}, expected {expected:?}")]
    WrongKind { expected: MessageKind, got: MessageKind },
    #[error("entity {0} is not part of this domain")]
    Topology(EntityId),
    #[error("security violation: {0:?}")]
    Security(SecurityEventKind),
}

impl ProtocolError {
    pub fn security_kind(&self) -> Option<SecurityEventKind> {
        match self {
            ProtocolError::Security(kind) => Some(*kind),
            _ => None,
        }
    }
}

impl From<CryptoError> for ProtocolError {
    fn from(_: CryptoError) -> Self {
        ProtocolError::Security(SecurityEventKind::BadSeal)
    }
}

pub(crate) fn expect_kind(msg: &ProtocolMessage, expected: MessageKind) -> Result<(), ProtocolError> {
    if msg.kind == expected {
        Ok(())
    } else {
        Err(ProtocolError::WrongKind {
            expected,
            got: msg.kind,
        })
    }
}

/// A two-domain network wired by hand: CA 0, managers 1 and 2, RSUs 10 and
/// 11 under manager 1, RSU 20 under manager 2.
#[cfg(test)]
pub(crate) mod fixture {
    use super::*;
    use crate::crypto::{CryptoMode, CryptoProvider};
    use crate::identity::{vac_of, Ecn};
    use crate::protocol::message::encode_fields;

    pub struct Net {
        pub crypto: CryptoProvider,
        pub ca: CaState,
        pub managers: Vec<ManagerState>,
        pub rsus: Vec<RsuState>,
    }

    pub const LIFETIME: f64 = 100.0;

    pub fn net(mode: CryptoMode) -> Net {
        let crypto = CryptoProvider::new(mode);
        let kp = |id: u32| crypto.keypair_from_seed(id, [id as u8 ^ 0x3c; 32]);
        let ca = kp(0);
        let mut managers = vec![
            ManagerState::new(EntityId(1), kp(1), ca.public, 7),
            ManagerState::new(EntityId(2), kp(2), ca.public, 7),
        ];
        let layout = [
            (10u32, 0usize, (0.0, 0.0)),
            (11, 0, (500.0, 0.0)),
            (20, 1, (1000.0, 0.0)),
        ];
        let rsus: Vec<RsuState> = layout
            .iter()
            .map(|&(id, m, pos)| RsuState::new(EntityId(id), pos, 250.0, kp(id), managers[m].keypair.public, 7))
            .collect();
        for (r, &(_, m, pos)) in rsus.iter().zip(&layout) {
            managers[m].rsus.insert(
                r.id,
                RsuInfo {
                    position: pos,
                    public: r.keypair.public,
                },
            );
        }
        for i in 0..2 {
            let j = 1 - i;
            let peer = PeerManager {
                public: managers[j].keypair.public,
                rsus: managers[j].rsus.keys().copied().collect(),
            };
            let id = managers[j].id;
            managers[i].known_managers.insert(id, peer);
        }
        let mut ca = CaState::new(ca, LIFETIME, 7);
        for m in &managers {
            ca.manager_keys.insert(m.id, m.keypair.public);
        }
        for v in 0..4 {
            ca.enroll(elp(v), vac_of(&elp(v), &Ecn::from_u64(v + 100)));
        }
        Net {
            crypto,
            ca,
            managers,
            rsus,
        }
    }

    pub fn elp(v: u64) -> Elp {
        Elp::from_u64(0xE1_0000 + v)
    }

    pub fn req1(v: u64, n1: u64, rsu: EntityId) -> ProtocolMessage {
        ProtocolMessage::new(
            MessageKind::KeyReq1,
            EntityId(50 + v as u32),
            rsu,
            encode_fields(&[elp(v).as_bytes(), &n1.to_be_bytes()]),
        )
    }

    impl Net {
        /// Messages (2) and (3) for vehicle `v` asking through RSU `rsu`.
        pub fn request(&mut self, v: u64, rsu: usize) -> (ProtocolMessage, ProtocolMessage) {
            self.request_n1(v, rsu, 1000 + v)
        }

        /// Message (3) for a request carrying `n1`.
        pub fn request_with_n1(&mut self, v: u64, rsu: usize, n1: crate::identity::Nonce) -> ProtocolMessage {
            self.request_n1(v, rsu, n1.0).1
        }

        fn request_n1(&mut self, v: u64, rsu: usize, n1: u64) -> (ProtocolMessage, ProtocolMessage) {
            let m1 = req1(v, n1, self.rsus[rsu].id);
            let m2 = self.rsus[rsu].handle_key_request(&self.crypto, &m1).unwrap();
            let mgr = self.managers.iter().position(|m| m.id == m2.dst).unwrap();
            let m3 = self.managers[mgr].handle_key_request(&self.crypto, &m2).unwrap();
            (m2, m3)
        }
    }
}
