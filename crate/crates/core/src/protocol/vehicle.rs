use std::collections::{BTreeSet, HashSet};
use std::fmt::Write as _;

use crate::crypto::{CryptoProvider, SessionKey};
use crate::identity::{f_nonce, vac_of, Ecn, Elp, Nonce, NonceSource, Vac};

use super::message::{decode_fields, encode_fields, field_u64, EntityId, MessageKind, ProtocolMessage};
use super::{expect_kind, Certificate, ProtocolError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rejected {
    /// Opened under our VAC but does not answer the pending request.
    Stale,
    /// Did not open under our VAC.
    NotForMe,
}

/// On-board unit state. Holds only the active credential.
#[derive(Debug, Clone)]
pub struct VehicleState {
    pub id: EntityId,
    pub elp: Elp,
    pub ecn: Ecn,
    pub vac: Vac,
    pub cert: Option<Certificate>,
    pub pending_nonce: Option<Nonce>,
    pub pending_since: f64,
    pub local_blacklist: BTreeSet<Elp>,
    /// f(N1) values of accepted responses.
    pub seen_nonces: HashSet<Nonce>,
    /// Last RSU this vehicle was registered with or served by.
    pub last_rsu: Option<EntityId>,
    nonces: NonceSource,
}

impl VehicleState {
    pub fn new(id: EntityId, elp: Elp, ecn: Ecn, run_seed: u64) -> Self {
        VehicleState {
            id,
            elp,
            ecn,
            vac: vac_of(&elp, &ecn),
            cert: None,
            pending_nonce: None,
            pending_since: 0.0,
            local_blacklist: BTreeSet::new(),
            seen_nonces: HashSet::new(),
            last_rsu: None,
            nonces: NonceSource::new(run_seed, id.0),
        }
    }

    pub fn has_valid_cert(&self, now: f64) -> bool {
        self.cert.is_some_and(|c| c.is_valid(now))
    }

    /// Builds message (1): plaintext `ELP || N1`. A new call replaces any
    /// pending nonce.
    pub fn request_key(&mut self, nearest_rsu: Option<EntityId>, now: f64) -> Result<ProtocolMessage, ProtocolError> {
        let rsu = nearest_rsu.ok_or(ProtocolError::NoInfrastructure)?;
        let n1 = self.nonces.fresh();
        self.pending_nonce = Some(n1);
        self.pending_since = now;
        let body = encode_fields(&[self.elp.as_bytes(), &n1.0.to_be_bytes()]);
        Ok(ProtocolMessage::new(MessageKind::KeyReq1, self.id, rsu, body))
    }

    /// Message (1) again for the pending request, with the same N1, so the
    /// CA can tell a lost answer from a second claim on this ELP. Starts a
    /// new request if none is pending.
    pub fn retransmit_key_request(
        &mut self,
        nearest_rsu: Option<EntityId>,
        now: f64,
    ) -> Result<ProtocolMessage, ProtocolError> {
        let Some(n1) = self.pending_nonce else {
            return self.request_key(nearest_rsu, now);
        };
        let rsu = nearest_rsu.ok_or(ProtocolError::NoInfrastructure)?;
        self.pending_since = now;
        let body = encode_fields(&[self.elp.as_bytes(), &n1.0.to_be_bytes()]);
        Ok(ProtocolMessage::new(MessageKind::KeyReq1, self.id, rsu, body))
    }

    /// Handles message (6). Accepts only `E_VAC(key || f(N1))` answering the
    /// pending request.
    pub fn handle_key_response(
        &mut self,
        crypto: &CryptoProvider,
        msg: &ProtocolMessage,
    ) -> Result<Certificate, Rejected> {
        expect_kind(msg, MessageKind::KeyResp6).map_err(|_| Rejected::NotForMe)?;
        let plain = crypto.sym_open(&self.vac, &msg.body).map_err(|_| Rejected::NotForMe)?;
        let fields = decode_fields(&plain, 2).map_err(|_| Rejected::NotForMe)?;
        let key = SessionKey::decode(fields[0]).ok_or(Rejected::NotForMe)?;
        let echoed = Nonce(field_u64(&fields, 1).map_err(|_| Rejected::NotForMe)?);
        match self.pending_nonce {
            Some(n1) if f_nonce(n1) == echoed => {}
            _ => return Err(Rejected::Stale),
        }
        let cert = Certificate {
            session_key: key,
            issue_time: key.issue_time,
            lifetime: key.lifetime,
            subject_elp: self.elp,
            revoked: false,
        };
        self.cert = Some(cert);
        self.pending_nonce = None;
        self.seen_nonces.insert(echoed);
        Ok(cert)
    }

    /// Processes a revocation warning. Returns true when the warning was
    /// about this vehicle and its certificate got erased.
    pub fn handle_revocation_warning(&mut self, revoked: Elp) -> bool {
        if revoked == self.elp {
            let erased = self.cert.is_some();
            self.cert = None;
            erased
        } else {
            self.local_blacklist.insert(revoked);
            false
        }
    }

    pub fn dump(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "vehicle {}", self.id.0);
        let _ = writeln!(out, "  elp: {}", self.elp);
        match &self.cert {
            Some(c) => {
                let _ = writeln!(out, "  cert_expiry: {}", c.expires_at());
            }
            None => out.push_str("  cert: none\n"),
        }
        let _ = writeln!(out, "  pending: {}", self.pending_nonce.is_some());
        let _ = writeln!(out, "  blacklist: {}", self.local_blacklist.len());
        out
    }
}
