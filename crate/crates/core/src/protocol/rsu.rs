use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use crate::crypto::{CryptoProvider, KeyPair, PublicKey};
use crate::identity::{Elp, Nonce, NonceSource};

use super::message::{
    decode_fields, decode_id_list, encode_fields, encode_id_list, field_f64, field_u64, fixed_field, EntityId,
    MessageKind, ProtocolMessage,
};
use super::{expect_kind, ProtocolError, SecurityEventKind, BROADCAST};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PassedVehicle {
    pub cert_expiry: f64,
    pub next_rsu: Option<EntityId>,
}

#[derive(Debug, Clone, Copy)]
struct PendingRequest {
    elp: Elp,
    requester: EntityId,
}

/// Output of a revocation delivered to an RSU.
#[derive(Debug, Clone)]
pub struct RsuRevocation {
    pub elp: Elp,
    pub broadcast: ProtocolMessage,
    /// Next hop when the manager routes sequentially along the chain.
    pub forward: Option<ProtocolMessage>,
}

#[derive(Debug, Clone)]
pub struct RsuState {
    pub id: EntityId,
    pub position: (f64, f64),
    pub manager_id: EntityId,
    pub keypair: KeyPair,
    pub manager_public: PublicKey,
    /// Same-domain RSUs, for sequential revocation hops.
    pub peers: BTreeMap<EntityId, PublicKey>,
    pub passed_vehicles: BTreeMap<Elp, PassedVehicle>,
    pub range: f64,
    pending: HashMap<Nonce, PendingRequest>,
    nonces: NonceSource,
}

impl RsuState {
    pub fn new(
        id: EntityId,
        position: (f64, f64),
        range: f64,
        keypair: KeyPair,
        manager_public: PublicKey,
        run_seed: u64,
    ) -> Self {
        RsuState {
            id,
            position,
            manager_id: EntityId(manager_public.owner),
            keypair,
            manager_public,
            peers: BTreeMap::new(),
            passed_vehicles: BTreeMap::new(),
            range,
            pending: HashMap::new(),
            nonces: NonceSource::new(run_seed, id.0),
        }
    }

    pub fn covers(&self, point: (f64, f64)) -> bool {
        let dx = point.0 - self.position.0;
        let dy = point.1 - self.position.1;
        dx * dx + dy * dy <= self.range * self.range
    }

    /// Message (1) in, message (2) out: appends N2 and seals for the manager.
    pub fn handle_key_request(
        &mut self,
        crypto: &CryptoProvider,
        msg: &ProtocolMessage,
    ) -> Result<ProtocolMessage, ProtocolError> {
        expect_kind(msg, MessageKind::KeyReq1)?;
        let fields = decode_fields(&msg.body, 2)?;
        let elp = Elp::from_slice(fields[0]).map_err(|_| {
            ProtocolError::Malformed(super::message::CodecError::FieldWidth {
                index: 0,
                len: fields[0].len(),
                expected: 8,
            })
        })?;
        let n1 = field_u64(&fields, 1)?;
        let n2 = self.nonces.fresh();
        self.pending.insert(
            n2,
            PendingRequest {
                elp,
                requester: msg.src,
            },
        );
        let inner = encode_fields(&[elp.as_bytes(), &n1.to_be_bytes(), &n2.0.to_be_bytes()]);
        let body = crypto.asym_seal(&self.keypair, &self.manager_public, &inner)?;
        Ok(ProtocolMessage::new(
            MessageKind::KeyReq2,
            self.id,
            self.manager_id,
            body,
        ))
    }

    /// Message (5) in, message (6) out. Returns the response and the radio
    /// address of the original requester.
    pub fn handle_key_response(
        &mut self,
        crypto: &CryptoProvider,
        msg: &ProtocolMessage,
    ) -> Result<(ProtocolMessage, Elp), ProtocolError> {
        expect_kind(msg, MessageKind::KeyResp5)?;
        if msg.src != self.manager_id {
            return Err(ProtocolError::Security(SecurityEventKind::UnknownSender));
        }
        let plain = crypto.asym_open(&self.keypair, &self.manager_public, &msg.body)?;
        let fields = decode_fields(&plain, 3)?;
        let n2 = Nonce(field_u64(&fields, 1)?);
        let expiry = field_f64(&fields, 2)?;
        let pending = self
            .pending
            .remove(&n2)
            .ok_or(ProtocolError::Security(SecurityEventKind::ReplayOrForgery))?;
        self.passed_vehicles.insert(
            pending.elp,
            PassedVehicle {
                cert_expiry: expiry,
                next_rsu: None,
            },
        );
        Ok((
            ProtocolMessage::new(MessageKind::KeyResp6, self.id, pending.requester, fields[0].to_vec()),
            pending.elp,
        ))
    }

    /// A certified vehicle entered this RSU's range. Records it and emits the
    /// registration for the manager. Expired certificates leave no trace.
    pub fn register_vehicle(
        &mut self,
        crypto: &CryptoProvider,
        elp: Elp,
        cert_expiry: f64,
        prev_rsu: Option<EntityId>,
        now: f64,
    ) -> Result<Option<ProtocolMessage>, ProtocolError> {
        if cert_expiry <= now {
            return Ok(None);
        }
        self.passed_vehicles.insert(
            elp,
            PassedVehicle {
                cert_expiry,
                next_rsu: None,
            },
        );
        let prev: Vec<EntityId> = prev_rsu.into_iter().collect();
        let inner = encode_fields(&[
            elp.as_bytes(),
            &encode_id_list(&prev),
            &cert_expiry.to_bits().to_be_bytes(),
        ]);
        let body = crypto.asym_seal(&self.keypair, &self.manager_public, &inner)?;
        Ok(Some(ProtocolMessage::new(
            MessageKind::Register,
            self.id,
            self.manager_id,
            body,
        )))
    }

    /// Forward pointer for a vehicle that moved on to `next`.
    pub fn set_next_rsu(&mut self, elp: Elp, next: EntityId, now: f64) {
        if let Some(entry) = self.passed_vehicles.get_mut(&elp) {
            if entry.cert_expiry > now {
                entry.next_rsu = Some(next);
            }
        }
    }

    pub fn next_rsu(&self, elp: &Elp, now: f64) -> Option<EntityId> {
        self.passed_vehicles
            .get(elp)
            .filter(|e| e.cert_expiry > now)
            .and_then(|e| e.next_rsu)
    }

    /// Revocation in, local warning broadcast out.
    pub fn handle_revocation(
        &mut self,
        crypto: &CryptoProvider,
        msg: &ProtocolMessage,
        now: f64,
    ) -> Result<RsuRevocation, ProtocolError> {
        expect_kind(msg, MessageKind::RevokeToRsu)?;
        let sender = if msg.src == self.manager_id {
            self.manager_public
        } else if let Some(peer) = self.peers.get(&msg.src) {
            *peer
        } else {
            return Err(ProtocolError::Security(SecurityEventKind::UnknownSender));
        };
        let plain = crypto.asym_open(&self.keypair, &sender, &msg.body)?;
        let fields = decode_fields(&plain, 2)?;
        let elp = Elp::from_u64(u64::from_be_bytes(fixed_field::<8>(&fields, 0)?));
        let remaining = decode_id_list(fields[1])?;
        self.purge(now);

        let broadcast = ProtocolMessage::new(
            MessageKind::RevokeBroadcast,
            self.id,
            BROADCAST,
            encode_fields(&[elp.as_bytes()]),
        );
        let forward = match remaining.split_first() {
            Some((next, rest)) => {
                let peer = self.peers.get(next).ok_or(ProtocolError::Topology(*next))?;
                let inner = encode_fields(&[elp.as_bytes(), &encode_id_list(rest)]);
                Some(ProtocolMessage::new(
                    MessageKind::RevokeToRsu,
                    self.id,
                    *next,
                    crypto.asym_seal(&self.keypair, peer, &inner)?,
                ))
            }
            None => None,
        };
        Ok(RsuRevocation {
            elp,
            broadcast,
            forward,
        })
    }

    pub fn purge(&mut self, now: f64) {
        self.passed_vehicles.retain(|_, e| e.cert_expiry > now);
    }

    pub fn pending_requests(&self) -> usize {
        self.pending.len()
    }

    pub fn dump(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "rsu {}", self.id.0);
        let _ = writeln!(out, "  manager: {}", self.manager_id.0);
        for (elp, e) in &self.passed_vehicles {
            let next = e.next_rsu.map_or("-".to_string(), |n| n.0.to_string());
            let _ = writeln!(out, "  passed {elp} expiry={} next={next}", e.cert_expiry);
        }
        out
    }
}
