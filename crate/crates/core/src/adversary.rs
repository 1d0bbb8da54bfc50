//! Scripted attackers run against a small live world.
//!
//! The attacker sees every transmission, can inject, replay or rewrite
//! messages and knows every public key and every ELP it observed. It holds
//! no VAC and no private key.

use std::cell::RefCell;
use std::collections::BTreeSet;
use std::fmt;
use std::fmt::Write as _;
use std::rc::Rc;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::crypto::{CryptoMode, CryptoProvider, SessionKey};
use crate::identity::{f_nonce, Ecn, Elp, Nonce};
use crate::mobility::MobilityTrace;
use crate::netsim::{Keyring, SimError, SimWorld, TapAction, Topology, WorldConfig};
use crate::protocol::message::{decode_fields, encode_fields, field_u64};
use crate::protocol::{EntityId, MessageKind, ProtocolMessage, SecurityEvent, VehicleState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AttackKind {
    Replay,
    MitmTamper,
    Sybil,
    MasqueradeCa,
    MasqueradeVehicle,
}

impl AttackKind {
    pub const ALL: [AttackKind; 5] = [
        AttackKind::Replay,
        AttackKind::MitmTamper,
        AttackKind::Sybil,
        AttackKind::MasqueradeCa,
        AttackKind::MasqueradeVehicle,
    ];

    /// Kinds selected by a command-line scenario name. `masquerade` covers
    /// both impersonation directions.
    pub fn from_scenario(name: &str) -> Result<Vec<AttackKind>, String> {
        Ok(match name.to_ascii_lowercase().as_str() {
            "masquerade" => vec![AttackKind::MasqueradeCa, AttackKind::MasqueradeVehicle],
            other => vec![other.parse()?],
        })
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttackKind::Replay => "replay",
            AttackKind::MitmTamper => "mitm",
            AttackKind::Sybil => "sybil",
            AttackKind::MasqueradeCa => "masquerade-ca",
            AttackKind::MasqueradeVehicle => "masquerade-vehicle",
        })
    }
}

impl FromStr for AttackKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "replay" => Ok(AttackKind::Replay),
            "mitm" | "mitm-tamper" => Ok(AttackKind::MitmTamper),
            "sybil" => Ok(AttackKind::Sybil),
            "masquerade-ca" => Ok(AttackKind::MasqueradeCa),
            "masquerade-vehicle" => Ok(AttackKind::MasqueradeVehicle),
            _ => Err(format!("unknown scenario `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Knowledge {
    VictimElp,
    CapturedMessages,
    PublicKeys,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InjectionPoint {
    /// Radio between the victim and its RSU.
    Radio,
    /// Any hop of the victim's handshake.
    AnyLink,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttackScenario {
    pub kind: AttackKind,
    pub knowledge: BTreeSet<Knowledge>,
    pub injection_point: InjectionPoint,
}

impl AttackScenario {
    pub fn standard(kind: AttackKind) -> Self {
        use Knowledge::*;
        let (knowledge, injection_point): (&[Knowledge], _) = match kind {
            AttackKind::Replay => (&[CapturedMessages, PublicKeys], InjectionPoint::Radio),
            AttackKind::MitmTamper => (&[CapturedMessages, PublicKeys], InjectionPoint::AnyLink),
            AttackKind::Sybil => (&[VictimElp, PublicKeys], InjectionPoint::Radio),
            AttackKind::MasqueradeCa => (&[VictimElp, CapturedMessages, PublicKeys], InjectionPoint::Radio),
            AttackKind::MasqueradeVehicle => (&[VictimElp, CapturedMessages], InjectionPoint::Radio),
        };
        AttackScenario {
            kind,
            knowledge: knowledge.iter().copied().collect(),
            injection_point,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackOutcome {
    pub kind: AttackKind,
    pub seed: u64,
    pub succeeded: bool,
    pub injections: usize,
    /// Security events raised from the first injection on.
    pub detection_events: Vec<SecurityEvent>,
    pub victim_certified: bool,
    pub detail: String,
}

impl AttackOutcome {
    pub fn report(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "scenario={} seed={} succeeded={} injections={} detections={} victim_certified={}",
            self.kind,
            self.seed,
            self.succeeded,
            self.injections,
            self.detection_events.len(),
            self.victim_certified
        );
        for e in &self.detection_events {
            let _ = writeln!(
                out,
                "  event t={:.4} at={} kind={:?} message={:?}",
                e.time, e.at.0, e.kind, e.message
            );
        }
        let _ = writeln!(out, "  detail: {}", self.detail);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AttackError {
    #[error("scenario script does not fit the world: {0}")]
    Script(String),
    #[error(transparent)]
    Sim(#[from] SimError),
}

fn script(msg: impl Into<String>) -> AttackError {
    AttackError::Script(msg.into())
}

const CERT_LIFETIME: f64 = 120.0;
const STEP: f64 = 0.5;

/// The victim is the last vehicle. Bystanders sit inside RSU coverage from
/// the start; the victim drives in from outside it and stays.
pub fn attack_world(seed: u64, mode: CryptoMode) -> Result<SimWorld, AttackError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let crypto = CryptoProvider::new(mode);
    let bounds = (1500.0, 1000.0);
    let managers = rng.gen_range(1..=2usize);
    let topology = Topology {
        bounds,
        rsu_positions: vec![(250.0, 250.0), (750.0, 250.0), (1250.0, 250.0)],
        rsu_manager: if managers == 1 { vec![0, 0, 0] } else { vec![0, 0, 1] },
        managers,
    };
    let bystanders = rng.gen_range(1..=4usize);
    let mut paths = Vec::new();
    for _ in 0..bystanders {
        let centre = topology.rsu_positions[rng.gen_range(0..3)];
        let a = rng.gen_range(0.0..std::f64::consts::TAU);
        let r = rng.gen_range(0.0..200.0);
        paths.push((vec![(centre.0 + r * a.cos(), centre.1 + r * a.sin())], 1.0, 0.0));
    }
    let x = rng.gen_range(100.0..1400.0);
    let speed = rng.gen_range(8.0..20.0);
    paths.push((
        vec![(x, 950.0), (x, rng.gen_range(150.0..350.0))],
        speed,
        rng.gen_range(0.0..5.0),
    ));
    let trace = MobilityTrace::scripted(&paths, bounds, 400.0);
    let keyring = Keyring::generate(&crypto, managers, 3, seed ^ 0x5eed);
    let cfg = WorldConfig::new(
        crypto,
        Arc::new(keyring),
        Arc::new(topology),
        Arc::new(trace),
        CERT_LIFETIME,
        seed,
    );
    let mut world = SimWorld::new(cfg)?;
    world.record_wire();
    world.start_mobility()?;
    Ok(world)
}

fn victim(world: &SimWorld) -> usize {
    world.vehicles.len() - 1
}

/// Steps the clock until `done` holds, giving up at `limit`.
fn run_while(world: &mut SimWorld, limit: f64, mut done: impl FnMut(&SimWorld) -> bool) -> Result<(), AttackError> {
    while !done(world) {
        if world.now() >= limit {
            return Err(script(format!("condition not reached by t={limit}")));
        }
        let next = ((world.now() / STEP).floor() + 1.0) * STEP;
        world.run_until(next.min(limit))?;
    }
    Ok(())
}

fn certified_after(world: &SimWorld, v: usize, t: f64) -> bool {
    world.vehicles[v]
        .state
        .cert
        .is_some_and(|c| c.issue_time >= t && c.is_valid(world.now()))
}

fn wire(world: &SimWorld) -> &[(f64, ProtocolMessage)] {
    world.wire_log.as_deref().unwrap_or(&[])
}

fn last_sent(world: &SimWorld, kind: MessageKind, pred: impl Fn(&ProtocolMessage) -> bool) -> Option<ProtocolMessage> {
    wire(world)
        .iter()
        .rev()
        .find(|(_, m)| m.kind == kind && pred(m))
        .map(|(_, m)| m.clone())
}

fn observed_n1(msg: &ProtocolMessage) -> Result<(Elp, Nonce), AttackError> {
    let fields = decode_fields(&msg.body, 2).map_err(|e| script(e.to_string()))?;
    let elp = Elp::from_slice(fields[0]).map_err(|e| script(e.to_string()))?;
    let n1 = Nonce(field_u64(&fields, 1).map_err(|e| script(e.to_string()))?);
    Ok((elp, n1))
}

/// Attacker-side identity: a known ELP paired with a guessed chassis number.
fn impostor(id: EntityId, elp: Elp, rng: &mut ChaCha8Rng) -> VehicleState {
    VehicleState::new(id, elp, Ecn::from_u64(rng.gen()), rng.gen())
}

fn events_since(world: &SimWorld, t: f64) -> Vec<SecurityEvent> {
    world
        .metrics
        .security_events
        .iter()
        .filter(|e| e.time >= t)
        .cloned()
        .collect()
}

pub fn run_attack(kind: AttackKind, seed: u64, mode: CryptoMode) -> Result<AttackOutcome, AttackError> {
    let mut world = attack_world(seed, mode)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(7);
    let v = victim(&world);
    let limit = 300.0;
    run_while(&mut world, limit, |w| {
        w.vehicles[..v].iter().all(|n| n.state.cert.is_some())
    })?;
    let res = match kind {
        AttackKind::Replay => replay(&mut world, v, limit),
        AttackKind::MitmTamper => tamper(&mut world, v, limit, &mut rng),
        AttackKind::Sybil => sybil(&mut world, v, limit, &mut rng),
        AttackKind::MasqueradeCa => masquerade_ca(&mut world, v, limit, &mut rng),
        AttackKind::MasqueradeVehicle => masquerade_vehicle(&mut world, v, limit, &mut rng),
    }?;
    let (start, injections, succeeded, detail) = res;
    // give the victim time to recover from the disturbed exchange
    let recover = world.now() + 5.0;
    let _ = run_while(&mut world, recover + 30.0, |w| {
        w.now() >= recover && certified_after(w, v, start)
    });
    Ok(AttackOutcome {
        kind,
        seed,
        succeeded,
        injections,
        detection_events: events_since(&world, start),
        victim_certified: certified_after(&world, v, 0.0) && world.vehicles[v].state.has_valid_cert(world.now()),
        detail,
    })
}

type Script = Result<(f64, usize, bool, String), AttackError>;

/// Captured message (6) replayed at the victim while its next request is
/// pending.
fn replay(world: &mut SimWorld, v: usize, limit: f64) -> Script {
    let vid = world.vehicles[v].state.id;
    run_while(world, limit, |w| w.vehicles[v].state.cert.is_some())?;
    let old = world.vehicles[v].state.cert.expect("certified above");
    let captured =
        last_sent(world, MessageKind::KeyResp6, |m| m.dst == vid).ok_or_else(|| script("no message (6) captured"))?;
    // wait for the refresh request
    run_while(world, limit, |w| {
        w.vehicles[v].state.pending_nonce.is_some() && w.vehicles[v].state.cert.is_some_and(|c| c == old)
    })?;
    let start = world.now();
    world.inject(captured, 0.001)?;
    world.run_until(start + 0.002)?;
    let after = world.vehicles[v].state.cert;
    let accepted = world
        .certifications
        .iter()
        .any(|&(t, cv, issue)| cv == v && t >= start && issue == old.issue_time);
    let succeeded = accepted || after.is_some_and(|c| c != old && c.issue_time == old.issue_time);
    Ok((
        start,
        1,
        succeeded,
        format!("replayed key issued at {:.3}", old.issue_time),
    ))
}

/// One random bit of the first handshake message of a random kind flips in
/// flight.
fn tamper(world: &mut SimWorld, v: usize, limit: f64, rng: &mut ChaCha8Rng) -> Script {
    const KINDS: [MessageKind; 5] = [
        MessageKind::KeyReq2,
        MessageKind::KeyReq3,
        MessageKind::KeyResp4,
        MessageKind::KeyResp5,
        MessageKind::KeyResp6,
    ];
    let kind = KINDS[rng.gen_range(0..KINDS.len())];
    let bit_seed: u64 = rng.gen();
    let hit: Rc<RefCell<Option<f64>>> = Rc::new(RefCell::new(None));
    let flag = Rc::clone(&hit);
    let vid = world.vehicles[v].state.id;
    // bystanders hold fresh keys, so the only handshake in progress is the victim's
    world.set_tap(Box::new(move |t, msg| {
        if flag.borrow().is_some() || msg.kind != kind || (kind == MessageKind::KeyResp6 && msg.dst != vid) {
            return TapAction::Pass;
        }
        if msg.body.is_empty() {
            return TapAction::Pass;
        }
        let mut forged = msg.clone();
        let bit = (bit_seed % (forged.body.len() as u64 * 8)) as usize;
        forged.body[bit / 8] ^= 1 << (bit % 8);
        *flag.borrow_mut() = Some(t);
        TapAction::Replace(forged)
    }));
    run_while(world, limit, |_| hit.borrow().is_some())?;
    let start = hit.borrow().expect("tap fired");
    world.clear_tap();
    run_while(world, limit, |w| w.vehicles[v].state.cert.is_some())?;
    let elp = world.vehicles[v].state.elp;
    let installed = world.vehicles[v].state.cert.map(|c| c.session_key);
    let issued = world.ca.issued.get(&elp).map(|r| r.key);
    let succeeded = installed != issued;
    Ok((start, 1, succeeded, format!("flipped one bit of {kind:?}")))
}

/// Requests under observed ELPs from a radio the attacker controls.
fn sybil(world: &mut SimWorld, v: usize, limit: f64, rng: &mut ChaCha8Rng) -> Script {
    run_while(world, limit, |w| w.vehicles[v].state.cert.is_some())?;
    let settle = world.now() + 5.0;
    run_while(world, limit, |w| w.now() >= settle)?;
    let mut elps: Vec<Elp> = wire(world)
        .iter()
        .filter(|(_, m)| m.kind == MessageKind::KeyReq1)
        .filter_map(|(_, m)| observed_n1(m).ok().map(|(e, _)| e))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let victim_elp = world.vehicles[v].state.elp;
    elps.retain(|e| *e != victim_elp);
    elps.insert(0, victim_elp);
    elps.truncate(rng.gen_range(1..=3));

    let me = world.ids.external();
    let received: Rc<RefCell<Vec<ProtocolMessage>>> = Rc::default();
    let inbox = Rc::clone(&received);
    world.set_tap(Box::new(move |_, msg| {
        if msg.dst == me {
            inbox.borrow_mut().push(msg.clone());
        }
        TapAction::Pass
    }));
    let start = world.now();
    let rsu = world.vehicles[v]
        .state
        .last_rsu
        .ok_or_else(|| script("victim has no RSU"))?;
    let mut fakes = Vec::new();
    for elp in &elps {
        let mut fake = impostor(me, *elp, rng);
        world.inject(
            fake.request_key(Some(rsu), start).map_err(|e| script(e.to_string()))?,
            0.001,
        )?;
        fakes.push(fake);
    }
    world.run_until(start + 2.0)?;
    world.clear_tap();
    let mut opened = 0;
    for msg in received.borrow().iter() {
        for fake in fakes.iter_mut() {
            opened += usize::from(fake.handle_key_response(&world.crypto, msg).is_ok());
        }
    }
    Ok((
        start,
        elps.len(),
        opened > 0,
        format!(
            "{} identities, {} responses captured, {opened} opened",
            elps.len(),
            received.borrow().len()
        ),
    ))
}

/// A forged message (6) for the victim's pending request. The attacker saw
/// N1 in clear and seals under a guessed VAC.
fn masquerade_ca(world: &mut SimWorld, v: usize, limit: f64, rng: &mut ChaCha8Rng) -> Script {
    let vid = world.vehicles[v].state.id;
    run_while(world, limit, |w| w.vehicles[v].state.pending_nonce.is_some())?;
    let request = last_sent(world, MessageKind::KeyReq1, |m| m.src == vid)
        .ok_or_else(|| script("victim request not observed"))?;
    let (elp, n1) = observed_n1(&request)?;
    let forger = impostor(vid, elp, rng);
    let mut key_material = [0u8; 32];
    rng.fill(&mut key_material);
    let key = SessionKey {
        key_material,
        lifetime: 10.0 * CERT_LIFETIME,
        issue_time: world.now(),
    };
    let body = world
        .crypto
        .sym_seal(
            &forger.vac,
            &encode_fields(&[&key.encode(), &f_nonce(n1).0.to_be_bytes()]),
        )
        .map_err(|e| script(e.to_string()))?;
    let start = world.now();
    world.inject(
        ProtocolMessage::new(MessageKind::KeyResp6, request.dst, vid, body),
        0.001,
    )?;
    world.run_until(start + 0.002)?;
    let succeeded = world.vehicles[v].state.cert.is_some_and(|c| c.session_key == key);
    Ok((start, 1, succeeded, "forged key response under a guessed VAC".into()))
}

/// The victim's captured request (1) replayed in its name after it holds a
/// key. The attacker then tries to read the answer.
fn masquerade_vehicle(world: &mut SimWorld, v: usize, limit: f64, rng: &mut ChaCha8Rng) -> Script {
    let vid = world.vehicles[v].state.id;
    run_while(world, limit, |w| w.vehicles[v].state.cert.is_some())?;
    let settle = world.now() + 5.0;
    run_while(world, limit, |w| w.now() >= settle)?;
    let request = last_sent(world, MessageKind::KeyReq1, |m| m.src == vid)
        .ok_or_else(|| script("victim request not observed"))?;
    let (elp, n1) = observed_n1(&request)?;
    let before = world.vehicles[v].state.cert;

    let captured: Rc<RefCell<Vec<ProtocolMessage>>> = Rc::default();
    let sink = Rc::clone(&captured);
    world.set_tap(Box::new(move |_, msg| {
        if msg.kind == MessageKind::KeyResp6 && msg.dst == vid {
            sink.borrow_mut().push(msg.clone());
        }
        TapAction::Pass
    }));
    let start = world.now();
    world.inject(request, 0.001)?;
    world.run_until(start + 2.0)?;
    world.clear_tap();

    let mut fake = impostor(vid, elp, rng);
    fake.pending_nonce = Some(n1);
    let opened = captured
        .borrow()
        .iter()
        .filter(|m| fake.handle_key_response(&world.crypto, m).is_ok())
        .count();
    let disturbed = world.vehicles[v].state.cert != before;
    Ok((
        start,
        1,
        opened > 0 || disturbed,
        format!("{} responses captured, {opened} opened", captured.borrow().len()),
    ))
}
