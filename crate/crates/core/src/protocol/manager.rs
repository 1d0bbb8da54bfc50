use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use crate::crypto::{CryptoProvider, KeyPair, PublicKey};
use crate::identity::{Elp, Nonce, NonceSource};

use super::message::{
    decode_fields, decode_id_list, encode_fields, encode_id_list, field_f64, field_u32, field_u64, fixed_field,
    EntityId, MessageKind, ProtocolMessage,
};
use super::{expect_kind, ProtocolError, SecurityEventKind};

/// Which RSUs a manager addresses for a targeted revocation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum ManagerFanout {
    /// Only the RSUs recorded in the vehicle's chain.
    #[default]
    Chain,
    /// Every RSU of the domain, once the vehicle is known to the manager.
    Domain,
}

/// How chain RSUs are reached.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum RevocationRouting {
    /// One message per RSU, sent in parallel by the manager.
    #[default]
    FanOut,
    /// Manager to the first RSU, then RSU to RSU along the chain.
    Sequential,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct RoutingPolicy {
    pub fanout: ManagerFanout,
    pub routing: RevocationRouting,
}

#[derive(Debug, Clone, Copy)]
pub struct RsuInfo {
    pub position: (f64, f64),
    pub public: PublicKey,
}

#[derive(Debug, Clone)]
pub struct PeerManager {
    pub public: PublicKey,
    pub rsus: BTreeSet<EntityId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegistryEntry {
    pub rsu_chain: Vec<EntityId>,
    pub next_manager: Option<EntityId>,
    pub cert_expiry: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HandoffAck {
    Updated,
    NoRecord,
}

#[derive(Debug, Clone, Copy)]
struct PendingTxn {
    elp: Elp,
    rsu: EntityId,
    n2: Nonce,
}

const SCOPE_TARGETED: u8 = 0;
const SCOPE_FLOOD: u8 = 1;

#[derive(Debug, Clone)]
pub struct ManagerState {
    pub id: EntityId,
    pub keypair: KeyPair,
    pub ca_id: EntityId,
    pub ca_public: PublicKey,
    pub rsus: BTreeMap<EntityId, RsuInfo>,
    pub vehicle_registry: BTreeMap<Elp, RegistryEntry>,
    pub known_managers: BTreeMap<EntityId, PeerManager>,
    pending: HashMap<Nonce, PendingTxn>,
    nonces: NonceSource,
}

impl ManagerState {
    pub fn new(id: EntityId, keypair: KeyPair, ca_public: PublicKey, run_seed: u64) -> Self {
        ManagerState {
            id,
            keypair,
            ca_id: EntityId(ca_public.owner),
            ca_public,
            rsus: BTreeMap::new(),
            vehicle_registry: BTreeMap::new(),
            known_managers: BTreeMap::new(),
            pending: HashMap::new(),
            nonces: NonceSource::new(run_seed, id.0),
        }
    }

    fn rsu_public(&self, rsu: EntityId) -> Result<PublicKey, ProtocolError> {
        self.rsus
            .get(&rsu)
            .map(|r| r.public)
            .ok_or(ProtocolError::Topology(rsu))
    }

    fn owner_of(&self, rsu: EntityId) -> Option<EntityId> {
        self.known_managers
            .iter()
            .find(|(_, p)| p.rsus.contains(&rsu))
            .map(|(id, _)| *id)
    }

    /// Live registry entry, purging it lazily if expired.
    pub fn registered(&mut self, elp: &Elp, now: f64) -> Option<&RegistryEntry> {
        if self.vehicle_registry.get(elp).is_some_and(|e| e.cert_expiry <= now) {
            self.vehicle_registry.remove(elp);
        }
        self.vehicle_registry.get(elp)
    }

    /// Message (2) in, message (3) out.
    pub fn handle_key_request(
        &mut self,
        crypto: &CryptoProvider,
        msg: &ProtocolMessage,
    ) -> Result<ProtocolMessage, ProtocolError> {
        expect_kind(msg, MessageKind::KeyReq2)?;
        let rsu_public = self.rsu_public(msg.src)?;
        let plain = crypto.asym_open(&self.keypair, &rsu_public, &msg.body)?;
        let fields = decode_fields(&plain, 3)?;
        let elp = Elp::from_u64(u64::from_be_bytes(fixed_field::<8>(&fields, 0)?));
        let n1 = field_u64(&fields, 1)?;
        let n2 = Nonce(field_u64(&fields, 2)?);
        let n3 = self.nonces.fresh();
        self.pending.insert(n3, PendingTxn { elp, rsu: msg.src, n2 });
        let inner = encode_fields(&[
            elp.as_bytes(),
            &n1.to_be_bytes(),
            &n2.0.to_be_bytes(),
            &n3.0.to_be_bytes(),
        ]);
        Ok(ProtocolMessage::new(
            MessageKind::KeyReq3,
            self.id,
            self.ca_id,
            crypto.asym_seal(&self.keypair, &self.ca_public, &inner)?,
        ))
    }

    /// Message (4) in, message (5) out. Commits the requesting RSU as the
    /// start of the vehicle's chain.
    pub fn handle_key_response(
        &mut self,
        crypto: &CryptoProvider,
        msg: &ProtocolMessage,
    ) -> Result<ProtocolMessage, ProtocolError> {
        expect_kind(msg, MessageKind::KeyResp4)?;
        if msg.src != self.ca_id {
            return Err(ProtocolError::Security(SecurityEventKind::UnknownSender));
        }
        let plain = crypto.asym_open(&self.keypair, &self.ca_public, &msg.body)?;
        let fields = decode_fields(&plain, 4)?;
        let n2 = Nonce(field_u64(&fields, 1)?);
        let n3 = Nonce(field_u64(&fields, 2)?);
        let expiry = field_f64(&fields, 3)?;
        let txn = match self.pending.get(&n3) {
            Some(t) if t.n2 == n2 => *t,
            _ => return Err(ProtocolError::Security(SecurityEventKind::ReplayOrForgery)),
        };
        self.pending.remove(&n3);
        self.vehicle_registry.insert(
            txn.elp,
            RegistryEntry {
                rsu_chain: vec![txn.rsu],
                next_manager: None,
                cert_expiry: expiry,
            },
        );
        let inner = encode_fields(&[fields[0], &n2.0.to_be_bytes(), &expiry.to_bits().to_be_bytes()]);
        let rsu_public = self.rsu_public(txn.rsu)?;
        Ok(ProtocolMessage::new(
            MessageKind::KeyResp5,
            self.id,
            txn.rsu,
            crypto.asym_seal(&self.keypair, &rsu_public, &inner)?,
        ))
    }

    /// Registration from one of this manager's RSUs. Appends to the chain;
    /// when the previous RSU belongs to another domain, also emits the
    /// handoff notice for that domain's manager.
    pub fn handle_register(
        &mut self,
        crypto: &CryptoProvider,
        msg: &ProtocolMessage,
        now: f64,
    ) -> Result<(Elp, Option<ProtocolMessage>), ProtocolError> {
        expect_kind(msg, MessageKind::Register)?;
        let rsu_public = self.rsu_public(msg.src)?;
        let plain = crypto.asym_open(&self.keypair, &rsu_public, &msg.body)?;
        let fields = decode_fields(&plain, 3)?;
        let elp = Elp::from_u64(u64::from_be_bytes(fixed_field::<8>(&fields, 0)?));
        let prev = decode_id_list(fields[1])?.first().copied();
        let expiry = field_f64(&fields, 2)?;
        if expiry <= now {
            return Ok((elp, None));
        }
        let rsu = msg.src;
        match self.registered(&elp, now).is_some() {
            true => {
                let entry = self.vehicle_registry.get_mut(&elp).expect("checked above");
                if !entry.rsu_chain.contains(&rsu) {
                    entry.rsu_chain.push(rsu);
                }
            }
            false => {
                self.vehicle_registry.insert(
                    elp,
                    RegistryEntry {
                        rsu_chain: vec![rsu],
                        next_manager: None,
                        cert_expiry: expiry,
                    },
                );
            }
        }

        let Some(prev) = prev.filter(|p| !self.rsus.contains_key(p)) else {
            return Ok((elp, None));
        };
        let Some(old) = self.owner_of(prev) else {
            return Err(ProtocolError::Topology(prev));
        };
        Ok((elp, Some(self.manager_handoff(crypto, old, elp)?)))
    }

    /// Informs `old_mgr` that the vehicle is now under this manager.
    pub fn manager_handoff(
        &self,
        crypto: &CryptoProvider,
        old_mgr: EntityId,
        elp: Elp,
    ) -> Result<ProtocolMessage, ProtocolError> {
        let peer = self
            .known_managers
            .get(&old_mgr)
            .ok_or(ProtocolError::Topology(old_mgr))?;
        let inner = encode_fields(&[elp.as_bytes(), &self.id.0.to_be_bytes()]);
        Ok(ProtocolMessage::new(
            MessageKind::ManagerHandoff,
            self.id,
            old_mgr,
            crypto.asym_seal(&self.keypair, &peer.public, &inner)?,
        ))
    }

    pub fn handle_handoff(
        &mut self,
        crypto: &CryptoProvider,
        msg: &ProtocolMessage,
        now: f64,
    ) -> Result<HandoffAck, ProtocolError> {
        expect_kind(msg, MessageKind::ManagerHandoff)?;
        let peer = self
            .known_managers
            .get(&msg.src)
            .ok_or(ProtocolError::Security(SecurityEventKind::UnknownSender))?;
        let plain = crypto.asym_open(&self.keypair, &peer.public, &msg.body)?;
        let fields = decode_fields(&plain, 2)?;
        let elp = Elp::from_u64(u64::from_be_bytes(fixed_field::<8>(&fields, 0)?));
        let new_mgr = EntityId(field_u32(&fields, 1)?);
        if self.registered(&elp, now).is_none() {
            return Ok(HandoffAck::NoRecord);
        }
        let entry = self.vehicle_registry.get_mut(&elp).expect("checked above");
        entry.next_manager = Some(new_mgr);
        Ok(HandoffAck::Updated)
    }

    /// Builds the revocation the CA sends to a manager. `flood` selects the
    /// network-wide baseline.
    pub fn revocation_body(elp: Elp, flood: bool) -> Vec<u8> {
        let scope = if flood { SCOPE_FLOOD } else { SCOPE_TARGETED };
        encode_fields(&[elp.as_bytes(), &[scope]])
    }

    /// Handles `RevokeToManager` from the CA or `ManagerForward` from a peer.
    pub fn route_revocation(
        &mut self,
        crypto: &CryptoProvider,
        msg: &ProtocolMessage,
        policy: RoutingPolicy,
        now: f64,
    ) -> Result<Vec<ProtocolMessage>, ProtocolError> {
        let (elp, flood, visited) = match msg.kind {
            MessageKind::RevokeToManager => {
                if msg.src != self.ca_id {
                    return Err(ProtocolError::Security(SecurityEventKind::UnknownSender));
                }
                let plain = crypto.asym_open(&self.keypair, &self.ca_public, &msg.body)?;
                let fields = decode_fields(&plain, 2)?;
                let elp = Elp::from_u64(u64::from_be_bytes(fixed_field::<8>(&fields, 0)?));
                let scope = fixed_field::<1>(&fields, 1)?[0];
                (elp, scope == SCOPE_FLOOD, Vec::new())
            }
            MessageKind::ManagerForward => {
                let peer = self
                    .known_managers
                    .get(&msg.src)
                    .ok_or(ProtocolError::Security(SecurityEventKind::UnknownSender))?;
                let plain = crypto.asym_open(&self.keypair, &peer.public, &msg.body)?;
                let fields = decode_fields(&plain, 2)?;
                let elp = Elp::from_u64(u64::from_be_bytes(fixed_field::<8>(&fields, 0)?));
                (elp, false, decode_id_list(fields[1])?)
            }
            other => {
                return Err(ProtocolError::WrongKind {
                    expected: MessageKind::RevokeToManager,
                    got: other,
                })
            }
        };

        if flood {
            let all: Vec<EntityId> = self.rsus.keys().copied().collect();
            return self.rsu_messages(crypto, elp, &all, RevocationRouting::FanOut);
        }
        if visited.contains(&self.id) {
            return Ok(Vec::new());
        }
        let Some(entry) = self.registered(&elp, now).cloned() else {
            return Ok(Vec::new());
        };
        let targets: Vec<EntityId> = match policy.fanout {
            ManagerFanout::Chain => entry.rsu_chain.clone(),
            ManagerFanout::Domain => self.rsus.keys().copied().collect(),
        };
        let mut out = self.rsu_messages(crypto, elp, &targets, policy.routing)?;
        if let Some(next) = entry.next_manager.filter(|n| !visited.contains(n)) {
            let peer = self.known_managers.get(&next).ok_or(ProtocolError::Topology(next))?;
            let mut path = visited;
            path.push(self.id);
            let inner = encode_fields(&[elp.as_bytes(), &encode_id_list(&path)]);
            out.push(ProtocolMessage::new(
                MessageKind::ManagerForward,
                self.id,
                next,
                crypto.asym_seal(&self.keypair, &peer.public, &inner)?,
            ));
        }
        Ok(out)
    }

    fn rsu_messages(
        &self,
        crypto: &CryptoProvider,
        elp: Elp,
        targets: &[EntityId],
        routing: RevocationRouting,
    ) -> Result<Vec<ProtocolMessage>, ProtocolError> {
        let seal_to = |rsu: EntityId, rest: &[EntityId]| -> Result<ProtocolMessage, ProtocolError> {
            let inner = encode_fields(&[elp.as_bytes(), &encode_id_list(rest)]);
            Ok(ProtocolMessage::new(
                MessageKind::RevokeToRsu,
                self.id,
                rsu,
                crypto.asym_seal(&self.keypair, &self.rsu_public(rsu)?, &inner)?,
            ))
        };
        match routing {
            RevocationRouting::FanOut => targets.iter().map(|&r| seal_to(r, &[])).collect(),
            RevocationRouting::Sequential => match targets.split_first() {
                Some((first, rest)) => Ok(vec![seal_to(*first, rest)?]),
                None => Ok(Vec::new()),
            },
        }
    }

    pub fn purge(&mut self, now: f64) {
        self.vehicle_registry.retain(|_, e| e.cert_expiry > now);
    }

    pub fn pending_transactions(&self) -> usize {
        self.pending.len()
    }

    pub fn dump(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "manager {}", self.id.0);
        let _ = writeln!(out, "  rsus: {}", self.rsus.len());
        for (elp, e) in &self.vehicle_registry {
            let chain: Vec<String> = e.rsu_chain.iter().map(|r| r.0.to_string()).collect();
            let next = e.next_manager.map_or("-".to_string(), |n| n.0.to_string());
            let _ = writeln!(
                out,
                "  vehicle {elp} chain=[{}] next_manager={next} expiry={}",
                chain.join(","),
                e.cert_expiry
            );
        }
        out
    }
}
