use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::crypto::{CryptoProvider, KeyPair, PublicKey, SessionKey};
use crate::identity::{f_nonce, Elp, Nonce, NonceSource, Vac};

use super::manager::ManagerState;
use super::message::{decode_fields, encode_fields, field_u64, fixed_field, EntityId, MessageKind, ProtocolMessage};
use super::{expect_kind, ProtocolError, SecurityEventKind};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IssuedRecord {
    pub manager_id: EntityId,
    pub cert_expiry: f64,
    pub key: SessionKey,
    /// Vehicle nonce of the request that produced this key.
    pub n1: Nonce,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefusalReason {
    Blacklisted,
    UnknownVehicle,
}

#[derive(Debug, Clone)]
pub enum KeyIssue {
    Issued {
        response: ProtocolMessage,
        /// The ELP already held a certificate far from expiry. Legitimate
        /// vehicles only refresh close to expiry.
        early_reissue: bool,
    },
    /// Silent to the vehicle: no response is emitted.
    Refused(RefusalReason),
}

#[derive(Debug, Clone)]
pub struct CaState {
    pub id: EntityId,
    pub keypair: KeyPair,
    pub manager_keys: BTreeMap<EntityId, PublicKey>,
    pub vac_directory: BTreeMap<Elp, Vac>,
    pub blacklist: BTreeSet<Elp>,
    pub issued: BTreeMap<Elp, IssuedRecord>,
    pub key_lifetime_policy: f64,
    /// Remaining lifetime above which a new request for the same ELP is
    /// flagged.
    pub reissue_window: f64,
    nonces: NonceSource,
}

impl CaState {
    pub fn new(keypair: KeyPair, key_lifetime_policy: f64, run_seed: u64) -> Self {
        let id = EntityId(keypair.owner());
        CaState {
            id,
            keypair,
            manager_keys: BTreeMap::new(),
            vac_directory: BTreeMap::new(),
            blacklist: BTreeSet::new(),
            issued: BTreeMap::new(),
            key_lifetime_policy,
            reissue_window: key_lifetime_policy / 10.0,
            nonces: NonceSource::new(run_seed, id.0),
        }
    }

    pub fn enroll(&mut self, elp: Elp, vac: Vac) {
        self.vac_directory.insert(elp, vac);
    }

    /// Message (3) in, message (4) out.
    pub fn handle_key_request(
        &mut self,
        crypto: &CryptoProvider,
        msg: &ProtocolMessage,
        now: f64,
    ) -> Result<KeyIssue, ProtocolError> {
        expect_kind(msg, MessageKind::KeyReq3)?;
        let manager_public = *self
            .manager_keys
            .get(&msg.src)
            .ok_or(ProtocolError::Security(SecurityEventKind::UnknownSender))?;
        let plain = crypto.asym_open(&self.keypair, &manager_public, &msg.body)?;
        let fields = decode_fields(&plain, 4)?;
        let elp = Elp::from_u64(u64::from_be_bytes(fixed_field::<8>(&fields, 0)?));
        let n1 = Nonce(field_u64(&fields, 1)?);
        let n2 = field_u64(&fields, 2)?;
        let n3 = field_u64(&fields, 3)?;

        if self.blacklist.contains(&elp) {
            return Ok(KeyIssue::Refused(RefusalReason::Blacklisted));
        }
        let Some(vac) = self.vac_directory.get(&elp).copied() else {
            return Ok(KeyIssue::Refused(RefusalReason::UnknownVehicle));
        };

        // A retransmitted request gets the live key again.
        let live = self.issued.get(&elp).filter(|r| r.cert_expiry > now).copied();
        let resent = live.filter(|r| r.n1 == n1);
        let early_reissue = resent.is_none() && live.is_some_and(|r| r.cert_expiry - now > self.reissue_window);

        let key = match resent {
            Some(r) => r.key,
            None => {
                let mut key_material = [0u8; 32];
                self.nonces.fill(&mut key_material);
                SessionKey {
                    key_material,
                    lifetime: self.key_lifetime_policy,
                    issue_time: now,
                }
            }
        };
        let expiry = key.expires_at();
        let for_vehicle = crypto.sym_seal(&vac, &encode_fields(&[&key.encode(), &f_nonce(n1).0.to_be_bytes()]))?;
        self.issued.insert(
            elp,
            IssuedRecord {
                manager_id: msg.src,
                cert_expiry: expiry,
                key,
                n1,
            },
        );
        let inner = encode_fields(&[
            &for_vehicle,
            &n2.to_be_bytes(),
            &n3.to_be_bytes(),
            &expiry.to_bits().to_be_bytes(),
        ]);
        let response = ProtocolMessage::new(
            MessageKind::KeyResp4,
            self.id,
            msg.src,
            crypto.asym_seal(&self.keypair, &manager_public, &inner)?,
        );
        Ok(KeyIssue::Issued {
            response,
            early_reissue,
        })
    }

    /// Blacklists `elp` and, if it holds an unexpired key, addresses the
    /// manager that requested it.
    pub fn initiate_revocation(
        &mut self,
        crypto: &CryptoProvider,
        elp: Elp,
        now: f64,
    ) -> Result<Option<ProtocolMessage>, ProtocolError> {
        self.blacklist.insert(elp);
        self.purge(now);
        let Some(record) = self.issued.get(&elp) else {
            return Ok(None);
        };
        let manager = record.manager_id;
        let public = self
            .manager_keys
            .get(&manager)
            .ok_or(ProtocolError::Topology(manager))?;
        let body = ManagerState::revocation_body(elp, false);
        Ok(Some(ProtocolMessage::new(
            MessageKind::RevokeToManager,
            self.id,
            manager,
            crypto.asym_seal(&self.keypair, public, &body)?,
        )))
    }

    /// Broadcast baseline: one revocation to every manager.
    pub fn flood_revocation(
        &mut self,
        crypto: &CryptoProvider,
        elp: Elp,
    ) -> Result<Vec<ProtocolMessage>, ProtocolError> {
        self.blacklist.insert(elp);
        let body = ManagerState::revocation_body(elp, true);
        self.manager_keys
            .iter()
            .map(|(id, public)| {
                Ok(ProtocolMessage::new(
                    MessageKind::RevokeToManager,
                    self.id,
                    *id,
                    crypto.asym_seal(&self.keypair, public, &body)?,
                ))
            })
            .collect()
    }

    pub fn purge(&mut self, now: f64) {
        self.issued.retain(|_, r| r.cert_expiry > now);
    }

    pub fn dump(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "ca {}", self.id.0);
        let _ = writeln!(out, "  directory: {}", self.vac_directory.len());
        for elp in &self.blacklist {
            let _ = writeln!(out, "  blacklisted {elp}");
        }
        for (elp, r) in &self.issued {
            let _ = writeln!(
                out,
                "  issued {elp} manager={} expiry={}",
                r.manager_id.0, r.cert_expiry
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::CryptoMode;
    use crate::protocol::fixture::{elp, net, LIFETIME};
    use crate::protocol::SecurityEventKind;

    fn issued(k: KeyIssue) -> (ProtocolMessage, bool) {
        match k {
            KeyIssue::Issued {
                response,
                early_reissue,
            } => (response, early_reissue),
            KeyIssue::Refused(r) => panic!("refused: {r:?}"),
        }
    }

    #[test]
    fn issues_key_to_requesting_manager() {
        for mode in [CryptoMode::Real, CryptoMode::Mock] {
            let mut n = net(mode);
            let (_, m3) = n.request(0, 0);
            let (m4, early) = issued(n.ca.handle_key_request(&n.crypto, &m3, 5.0).unwrap());
            assert!(!early);
            assert_eq!(
                (m4.kind, m4.src, m4.dst),
                (MessageKind::KeyResp4, EntityId(0), EntityId(1))
            );
            let rec = n.ca.issued[&elp(0)];
            assert_eq!(rec.manager_id, EntityId(1));
            assert_eq!(rec.cert_expiry, 5.0 + LIFETIME);
            assert_eq!(rec.key.issue_time, 5.0);
        }
    }

    #[test]
    fn new_request_for_live_key_is_early_but_retransmission_is_not() {
        let mut n = net(CryptoMode::Mock);
        let (_, m3) = n.request(1, 0);
        issued(n.ca.handle_key_request(&n.crypto, &m3, 10.0).unwrap());
        let first = n.ca.issued[&elp(1)];
        // same N1 routed through the other manager
        let mut again = n.request_with_n1(1, 2, first.n1);
        assert!(!issued(n.ca.handle_key_request(&n.crypto, &again, 30.0).unwrap()).1);
        let rec = n.ca.issued[&elp(1)];
        assert_eq!(
            (rec.key, rec.cert_expiry, rec.manager_id),
            (first.key, first.cert_expiry, EntityId(2))
        );
        again = n.request_with_n1(1, 0, Nonce(first.n1.0 ^ 1));
        assert!(issued(n.ca.handle_key_request(&n.crypto, &again, 40.0).unwrap()).1);
        assert_ne!(n.ca.issued[&elp(1)].key, first.key);
        // inside the refresh window a repeat is normal
        let (_, m3) = n.request(1, 0);
        let expiry = n.ca.issued[&elp(1)].cert_expiry;
        let now = expiry - n.ca.reissue_window / 2.0;
        assert!(!issued(n.ca.handle_key_request(&n.crypto, &m3, now).unwrap()).1);
    }

    #[test]
    fn refuses_blacklisted_and_unknown() {
        let mut n = net(CryptoMode::Mock);
        n.ca.blacklist.insert(elp(2));
        let (_, m3) = n.request(2, 0);
        assert!(matches!(
            n.ca.handle_key_request(&n.crypto, &m3, 1.0).unwrap(),
            KeyIssue::Refused(RefusalReason::Blacklisted)
        ));
        let (_, m3) = n.request(9, 0);
        assert!(matches!(
            n.ca.handle_key_request(&n.crypto, &m3, 1.0).unwrap(),
            KeyIssue::Refused(RefusalReason::UnknownVehicle)
        ));
        assert!(n.ca.issued.is_empty());
    }

    #[test]
    fn rejects_unknown_manager_and_wrong_kind() {
        let mut n = net(CryptoMode::Real);
        let (m2, mut m3) = n.request(0, 0);
        m3.src = EntityId(7);
        assert_eq!(
            n.ca.handle_key_request(&n.crypto, &m3, 1.0).unwrap_err(),
            ProtocolError::Security(SecurityEventKind::UnknownSender)
        );
        assert!(matches!(
            n.ca.handle_key_request(&n.crypto, &m2, 1.0),
            Err(ProtocolError::WrongKind { .. })
        ));
    }

    #[test]
    fn revocation_targets_issuing_manager_only_while_live() {
        let mut n = net(CryptoMode::Mock);
        let (_, m3) = n.request(0, 2);
        issued(n.ca.handle_key_request(&n.crypto, &m3, 0.0).unwrap());
        let m = n.ca.initiate_revocation(&n.crypto, elp(0), 1.0).unwrap().unwrap();
        assert_eq!((m.kind, m.dst), (MessageKind::RevokeToManager, EntityId(2)));
        assert!(n.ca.blacklist.contains(&elp(0)));
        // expired record: blacklisted, nothing to send
        assert!(n.ca.initiate_revocation(&n.crypto, elp(1), 1.0).unwrap().is_none());
        let (_, m3) = n.request(3, 0);
        issued(n.ca.handle_key_request(&n.crypto, &m3, 0.0).unwrap());
        assert!(n
            .ca
            .initiate_revocation(&n.crypto, elp(3), LIFETIME + 1.0)
            .unwrap()
            .is_none());
        assert!(n.ca.issued.is_empty());
    }

    #[test]
    fn flood_addresses_every_manager() {
        let mut n = net(CryptoMode::Mock);
        let msgs = n.ca.flood_revocation(&n.crypto, elp(0)).unwrap();
        let dsts: Vec<EntityId> = msgs.iter().map(|m| m.dst).collect();
        assert_eq!(dsts, vec![EntityId(1), EntityId(2)]);
    }
}
