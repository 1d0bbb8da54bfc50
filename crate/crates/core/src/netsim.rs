//! Deterministic discrete-event engine.
//!
//! One [`SimWorld`] owns every entity of a run, the event queue and the link
//! model. Events are ordered by `(fire_time, seq)`; `seq` is handed out at
//! scheduling time, so ties fire in scheduling order. Nothing in a world is
//! shared mutably with another world.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::panic::{self, AssertUnwindSafe};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::crypto::{CryptoProvider, KeyPair};
use crate::identity::{Ecn, Elp};
use crate::mobility::MobilityTrace;
use crate::protocol::{
    CaState, EntityId, HandoffAck, KeyIssue, ManagerState, MessageKind, PeerManager, ProtocolError, ProtocolMessage,
    Rejected, RoutingPolicy, RsuInfo, RsuState, SecurityEvent, SecurityEventKind, VehicleState, BROADCAST,
};
use crate::schemes::RevocationScheme;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("negative delay {0}")]
    NegativeDelay(f64),
    #[error("unknown entity {0}")]
    Topology(EntityId),
    #[error("invalid link model: {0}")]
    InvalidLink(String),
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
    #[error("end time {t_end} precedes clock {clock}")]
    TimeTravel { t_end: f64, clock: f64 },
    #[error("handler panicked in event {event}: {message}")]
    HandlerPanic { event: u64, message: String },
}

/// Per-hop delays, processing times and radio parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkModel {
    /// CA to manager.
    pub t_ca: f64,
    /// Manager to RSU, and manager to manager.
    pub t_man: f64,
    /// RSU to RSU.
    pub t_rsu: f64,
    pub tp_ca: f64,
    pub tp_man: f64,
    pub tp_rsu: f64,
    pub tp_vehicle: f64,
    pub radio_latency: f64,
    pub radio_range: f64,
    pub loss_rate: f64,
    /// Chase a moving vehicle across several RSUs instead of a single relay.
    pub recursive_handover: bool,
}

impl Default for LinkModel {
    fn default() -> Self {
        LinkModel {
            t_ca: 0.010,
            t_man: 0.010,
            t_rsu: 0.005,
            tp_ca: 0.001,
            tp_man: 0.001,
            tp_rsu: 0.001,
            tp_vehicle: 0.001,
            radio_latency: 0.002,
            radio_range: 250.0,
            loss_rate: 0.0,
            recursive_handover: false,
        }
    }
}

impl LinkModel {
    pub fn validate(&self) -> Result<(), SimError> {
        let delays = [
            self.t_ca,
            self.t_man,
            self.t_rsu,
            self.tp_ca,
            self.tp_man,
            self.tp_rsu,
            self.tp_vehicle,
            self.radio_latency,
            self.radio_range,
        ];
        if delays.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
            return Err(SimError::InvalidLink("delays and range must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.loss_rate) {
            return Err(SimError::InvalidLink(format!("loss rate {}", self.loss_rate)));
        }
        Ok(())
    }

    /// Sets every wired hop to `delay`.
    pub fn with_wired_delay(mut self, delay: f64) -> Self {
        self.t_ca = delay;
        self.t_man = delay;
        self.t_rsu = delay;
        self
    }

    /// Upper bound on one key handshake, used to size vehicle retries.
    pub fn handshake_rtt(&self) -> f64 {
        2.0 * (self.radio_latency + self.t_man + self.t_ca)
            + self.tp_vehicle
            + 2.0 * (self.tp_rsu + self.tp_man)
            + self.tp_ca
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EntityKind {
    Ca,
    Manager(usize),
    Rsu(usize),
    Vehicle(usize),
}

/// RSU placement and manager partition.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub bounds: (f64, f64),
    pub rsu_positions: Vec<(f64, f64)>,
    /// Manager index of every RSU.
    pub rsu_manager: Vec<usize>,
    pub managers: usize,
}

impl Topology {
    /// RSUs at the centres of a square grid of cell `spacing`, partitioned
    /// into `managers` contiguous rectangular blocks.
    pub fn grid(bounds: (f64, f64), spacing: f64, managers: usize) -> Result<Self, SimError> {
        if !(spacing > 0.0) || managers == 0 {
            return Err(SimError::InvalidTopology(
                "spacing and managers must be positive".into(),
            ));
        }
        let nx = ((bounds.0 / spacing).round() as usize).max(1);
        let ny = ((bounds.1 / spacing).round() as usize).max(1);
        let (sx, sy) = (bounds.0 / nx as f64, bounds.1 / ny as f64);
        // manager blocks: mx columns by my rows, as square as possible
        let (mx, my) = (1..=managers)
            .filter(|f| managers % f == 0)
            .map(|f| (f, managers / f))
            .filter(|&(mx, my)| mx <= nx && my <= ny)
            .min_by(|a, b| {
                let skew = |(mx, my): (usize, usize)| (nx as f64 / mx as f64 - ny as f64 / my as f64).abs();
                skew(*a).total_cmp(&skew(*b))
            })
            .ok_or_else(|| {
                SimError::InvalidTopology(format!("{managers} managers cannot partition a {nx}x{ny} RSU grid"))
            })?;
        let mut rsu_positions = Vec::with_capacity(nx * ny);
        let mut rsu_manager = Vec::with_capacity(nx * ny);
        for iy in 0..ny {
            for ix in 0..nx {
                rsu_positions.push(((ix as f64 + 0.5) * sx, (iy as f64 + 0.5) * sy));
                rsu_manager.push((ix * mx / nx) + mx * (iy * my / ny));
            }
        }
        Ok(Topology {
            bounds,
            rsu_positions,
            rsu_manager,
            managers,
        })
    }

    pub fn rsu_count(&self) -> usize {
        self.rsu_positions.len()
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.rsu_positions.len() != self.rsu_manager.len() {
            return Err(SimError::InvalidTopology("RSU/manager length mismatch".into()));
        }
        let mut used = vec![false; self.managers];
        for &m in &self.rsu_manager {
            *used
                .get_mut(m)
                .ok_or_else(|| SimError::InvalidTopology(format!("manager {m} out of range")))? = true;
        }
        if used.iter().any(|u| !u) {
            return Err(SimError::InvalidTopology("a manager has no RSU".into()));
        }
        Ok(())
    }
}

/// Infrastructure key pairs. Built once and shared by every world of an
/// experiment point.
#[derive(Debug, Clone)]
pub struct Keyring {
    pub ca: KeyPair,
    pub managers: Vec<KeyPair>,
    pub rsus: Vec<KeyPair>,
}

impl Keyring {
    /// Keys are drawn per role and index, so a larger keyring extends a
    /// smaller one built from the same seed.
    pub fn generate(crypto: &CryptoProvider, managers: usize, rsus: usize, infra_seed: u64) -> Self {
        let key = |role: u64, index: usize| {
            let mut rng = ChaCha8Rng::seed_from_u64(infra_seed);
            rng.set_stream((role << 32) | index as u64);
            let mut seed = [0u8; 32];
            rng.fill(&mut seed);
            seed
        };
        let ids = IdLayout {
            managers,
            rsus,
            vehicles: 0,
        };
        Keyring {
            ca: crypto.keypair_from_seed(ids.ca().0, key(0, 0)),
            managers: (0..managers)
                .map(|i| crypto.keypair_from_seed(ids.manager(i).0, key(1, i)))
                .collect(),
            rsus: (0..rsus)
                .map(|i| crypto.keypair_from_seed(ids.rsu(i).0, key(2, i)))
                .collect(),
        }
    }

    /// The first `managers` and `rsus` keys, renumbered for that layout.
    pub fn prefix(&self, managers: usize, rsus: usize) -> Option<Keyring> {
        if managers > self.managers.len() || rsus > self.rsus.len() {
            return None;
        }
        let ids = IdLayout {
            managers,
            rsus,
            vehicles: 0,
        };
        Some(Keyring {
            ca: self.ca.clone(),
            managers: (0..managers)
                .map(|i| self.managers[i].with_owner(ids.manager(i).0))
                .collect(),
            rsus: (0..rsus).map(|i| self.rsus[i].with_owner(ids.rsu(i).0)).collect(),
        })
    }
}

/// Entity numbering: CA 0, managers, RSUs, vehicles, in that order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IdLayout {
    pub managers: usize,
    pub rsus: usize,
    pub vehicles: usize,
}

impl IdLayout {
    pub fn ca(&self) -> EntityId {
        EntityId(0)
    }
    pub fn manager(&self, i: usize) -> EntityId {
        EntityId(1 + i as u32)
    }
    pub fn rsu(&self, i: usize) -> EntityId {
        EntityId((1 + self.managers + i) as u32)
    }
    pub fn vehicle(&self, i: usize) -> EntityId {
        EntityId((1 + self.managers + self.rsus + i) as u32)
    }
    /// First id outside the legitimate population.
    pub fn external(&self) -> EntityId {
        EntityId((1 + self.managers + self.rsus + self.vehicles) as u32)
    }

    pub fn kind(&self, id: EntityId) -> Option<EntityKind> {
        let i = id.0 as usize;
        let (m0, r0, v0) = (1, 1 + self.managers, 1 + self.managers + self.rsus);
        match i {
            0 => Some(EntityKind::Ca),
            _ if i < r0 => Some(EntityKind::Manager(i - m0)),
            _ if i < v0 => Some(EntityKind::Rsu(i - r0)),
            _ if i < v0 + self.vehicles => Some(EntityKind::Vehicle(i - v0)),
            _ => None,
        }
    }
}

/// What happens when an event fires.
#[derive(Debug, Clone)]
pub enum Action {
    /// Unicast arrival. With `relay` set, the message is handed to that RSU,
    /// which re-radios it to `msg.dst`.
    Deliver {
        msg: ProtocolMessage,
        relay: Option<EntityId>,
        handovers_left: u8,
    },
    /// Local radio broadcast from an RSU; receivers are resolved on arrival.
    Broadcast {
        msg: ProtocolMessage,
    },
    MobilitySample,
    Revoke {
        vehicle: usize,
        scheme: RevocationScheme,
    },
    /// No-op marker, for tests and scripted drivers.
    Timer(u64),
}

#[derive(Debug, Clone)]
pub struct Event {
    pub fire_time: f64,
    pub seq: u64,
    pub action: Action,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Event {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .fire_time
            .total_cmp(&self.fire_time)
            .then(other.seq.cmp(&self.seq))
    }
}

/// Min-queue on `(fire_time, seq)`.
#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<Event>,
    next_seq: u64,
}

impl EventQueue {
    pub fn push(&mut self, fire_time: f64, action: Action) -> u64 {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Event { fire_time, seq, action });
        seq
    }

    pub fn pop(&mut self) -> Option<Event> {
        self.heap.pop()
    }

    pub fn peek_time(&self) -> Option<f64> {
        self.heap.peek().map(|e| e.fire_time)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct NetMetrics {
    /// Transmissions: one per unicast hop, one per local broadcast.
    pub messages_sent: u64,
    pub messages_delivered: u64,
    pub messages_dropped: u64,
    pub sent_by_kind: BTreeMap<MessageKind, u64>,
    pub delivery_failures: u64,
    pub handover_relays: u64,
    pub broadcast_receptions: u64,
    pub malformed_drops: u64,
    pub refusals: u64,
    pub handoff_no_record: u64,
    pub certificates_installed: u64,
    /// Register and manager handoff transmissions caused by each vehicle.
    pub tracking_by_vehicle: BTreeMap<usize, u64>,
    pub security_events: Vec<SecurityEvent>,
}

impl NetMetrics {
    pub fn security_event_count(&self) -> usize {
        self.security_events.len()
    }
}

/// Running record of the one revocation a world performs.
#[derive(Debug, Clone, PartialEq)]
pub struct RevocationRecord {
    pub target: usize,
    pub elp: Elp,
    pub scheme: RevocationScheme,
    pub start: f64,
    pub moot: bool,
    pub sent_by_kind: BTreeMap<MessageKind, u64>,
    /// RSUs that received a revocation from the infrastructure.
    pub rsu_targets: BTreeSet<EntityId>,
    pub managers_reached: BTreeSet<EntityId>,
    /// Vehicles within range of a broadcasting RSU at send time.
    pub in_range_at_send: BTreeSet<usize>,
    pub warned: BTreeSet<usize>,
    pub last_delivery: Option<f64>,
    /// Chain length per manager holding a record of the target at start.
    pub chain_lengths: Vec<usize>,
}

impl RevocationRecord {
    pub fn messages_sent(&self) -> u64 {
        self.sent_by_kind.values().sum()
    }
}

#[derive(Debug, Clone)]
pub struct VehicleNode {
    pub state: VehicleState,
    /// RSU the in-flight request went to.
    pub pending_rsu: Option<EntityId>,
}

/// Decision of a link tap on a transmission it observed.
#[derive(Debug, Clone)]
pub enum TapAction {
    Pass,
    Drop,
    Replace(ProtocolMessage),
}

pub type LinkTap = Box<dyn FnMut(f64, &ProtocolMessage) -> TapAction>;

#[derive(Clone)]
pub struct WorldConfig {
    pub crypto: CryptoProvider,
    pub keyring: Arc<Keyring>,
    pub topology: Arc<Topology>,
    pub trace: Arc<MobilityTrace>,
    pub link: LinkModel,
    pub policy: RoutingPolicy,
    pub cert_lifetime: f64,
    pub seed: u64,
    pub mobility_step: f64,
    /// A vehicle refreshes once its certificate has less than this left.
    pub refresh_margin: f64,
}

impl WorldConfig {
    pub fn new(
        crypto: CryptoProvider,
        keyring: Arc<Keyring>,
        topology: Arc<Topology>,
        trace: Arc<MobilityTrace>,
        cert_lifetime: f64,
        seed: u64,
    ) -> Self {
        WorldConfig {
            crypto,
            keyring,
            topology,
            trace,
            link: LinkModel::default(),
            policy: RoutingPolicy::default(),
            cert_lifetime,
            seed,
            mobility_step: 0.5,
            refresh_margin: cert_lifetime / 20.0,
        }
    }
}

/// Buckets RSUs by cell so range queries touch a handful of candidates.
#[derive(Debug, Clone)]
struct RsuIndex {
    cell: f64,
    cells: BTreeMap<(i64, i64), Vec<usize>>,
}

impl RsuIndex {
    fn new(positions: &[(f64, f64)], range: f64) -> Self {
        let cell = range.max(1.0);
        let mut cells: BTreeMap<(i64, i64), Vec<usize>> = BTreeMap::new();
        for (i, p) in positions.iter().enumerate() {
            cells
                .entry(((p.0 / cell).floor() as i64, (p.1 / cell).floor() as i64))
                .or_default()
                .push(i);
        }
        RsuIndex { cell, cells }
    }

    fn candidates(&self, p: (f64, f64)) -> impl Iterator<Item = usize> + '_ {
        let (cx, cy) = ((p.0 / self.cell).floor() as i64, (p.1 / self.cell).floor() as i64);
        (cx - 1..=cx + 1)
            .flat_map(move |x| (cy - 1..=cy + 1).map(move |y| (x, y)))
            .filter_map(|k| self.cells.get(&k))
            .flatten()
            .copied()
    }
}

pub struct SimWorld {
    clock: f64,
    queue: EventQueue,
    in_flight: u64,
    msg_seq: u64,
    pub ids: IdLayout,
    pub crypto: CryptoProvider,
    pub link: LinkModel,
    pub policy: RoutingPolicy,
    pub trace: Arc<MobilityTrace>,
    pub topology: Arc<Topology>,
    pub ca: CaState,
    pub managers: Vec<ManagerState>,
    pub rsus: Vec<RsuState>,
    pub vehicles: Vec<VehicleNode>,
    pub metrics: NetMetrics,
    pub revocation: Option<RevocationRecord>,
    /// Every certificate install: (time, vehicle, issue_time).
    pub certifications: Vec<(f64, usize, f64)>,
    pub wire_log: Option<Vec<(f64, ProtocolMessage)>>,
    index: RsuIndex,
    elp_index: BTreeMap<Elp, usize>,
    rng: ChaCha8Rng,
    tap: Option<LinkTap>,
    armed: Option<(usize, f64, RevocationScheme)>,
    mobility_step: f64,
    refresh_margin: f64,
    retry_timeout: f64,
    sampling: bool,
}

impl SimWorld {
    pub fn new(cfg: WorldConfig) -> Result<Self, SimError> {
        cfg.link.validate()?;
        cfg.topology.validate()?;
        let topo = &cfg.topology;
        let keys = &cfg.keyring;
        if keys.managers.len() != topo.managers || keys.rsus.len() != topo.rsu_count() {
            return Err(SimError::InvalidTopology("keyring does not match topology".into()));
        }
        let ids = IdLayout {
            managers: topo.managers,
            rsus: topo.rsu_count(),
            vehicles: cfg.trace.vehicle_count(),
        };

        let mut ca = CaState::new(keys.ca.clone(), cfg.cert_lifetime, cfg.seed);
        let mut managers: Vec<ManagerState> = keys
            .managers
            .iter()
            .enumerate()
            .map(|(i, kp)| ManagerState::new(ids.manager(i), kp.clone(), keys.ca.public, cfg.seed))
            .collect();
        for (i, m) in managers.iter().enumerate() {
            ca.manager_keys.insert(ids.manager(i), m.keypair.public);
        }
        let rsus: Vec<RsuState> = keys
            .rsus
            .iter()
            .enumerate()
            .map(|(i, kp)| {
                let mgr = topo.rsu_manager[i];
                let mut r = RsuState::new(
                    ids.rsu(i),
                    topo.rsu_positions[i],
                    cfg.link.radio_range,
                    kp.clone(),
                    keys.managers[mgr].public,
                    cfg.seed,
                );
                for (j, peer) in keys.rsus.iter().enumerate() {
                    if j != i && topo.rsu_manager[j] == mgr {
                        r.peers.insert(ids.rsu(j), peer.public);
                    }
                }
                r
            })
            .collect();
        for (i, r) in rsus.iter().enumerate() {
            managers[topo.rsu_manager[i]].rsus.insert(
                r.id,
                RsuInfo {
                    position: r.position,
                    public: r.keypair.public,
                },
            );
        }
        let domains: Vec<BTreeSet<EntityId>> = (0..topo.managers)
            .map(|m| {
                (0..topo.rsu_count())
                    .filter(|&i| topo.rsu_manager[i] == m)
                    .map(|i| ids.rsu(i))
                    .collect()
            })
            .collect();
        for i in 0..managers.len() {
            for j in 0..managers.len() {
                if i != j {
                    let peer = PeerManager {
                        public: keys.managers[j].public,
                        rsus: domains[j].clone(),
                    };
                    managers[i].known_managers.insert(ids.manager(j), peer);
                }
            }
        }

        let mut id_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        id_rng.set_stream(u64::from(u32::MAX) + 1);
        let vehicles: Vec<VehicleNode> = (0..ids.vehicles)
            .map(|i| {
                let elp = Elp::from_u64(0x4500_0000_0000_0000 | i as u64);
                let ecn = Ecn::from_u64(id_rng.gen());
                VehicleNode {
                    state: VehicleState::new(ids.vehicle(i), elp, ecn, cfg.seed),
                    pending_rsu: None,
                }
            })
            .collect();
        for v in &vehicles {
            ca.enroll(v.state.elp, v.state.vac);
        }

        let retry_timeout = (2.0 * cfg.link.handshake_rtt()).max(1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(u64::from(u32::MAX) + 2);
        Ok(SimWorld {
            clock: 0.0,
            queue: EventQueue::default(),
            in_flight: 0,
            msg_seq: 0,
            index: RsuIndex::new(&topo.rsu_positions, cfg.link.radio_range),
            retry_timeout,
            elp_index: vehicles.iter().enumerate().map(|(i, v)| (v.state.elp, i)).collect(),
            ids,
            crypto: cfg.crypto,
            policy: cfg.policy,
            trace: cfg.trace,
            topology: cfg.topology,
            ca,
            managers,
            rsus,
            vehicles,
            metrics: NetMetrics::default(),
            revocation: None,
            certifications: Vec::new(),
            wire_log: None,
            rng,
            tap: None,
            armed: None,
            mobility_step: cfg.mobility_step,
            refresh_margin: cfg.refresh_margin,
            link: cfg.link,
            sampling: false,
        })
    }

    pub fn now(&self) -> f64 {
        self.clock
    }

    pub fn in_flight(&self) -> u64 {
        self.in_flight
    }

    pub fn pending_events(&self) -> usize {
        self.queue.len()
    }

    pub fn set_tap(&mut self, tap: LinkTap) {
        self.tap = Some(tap);
    }

    pub fn clear_tap(&mut self) {
        self.tap = None;
    }

    pub fn record_wire(&mut self) {
        self.wire_log.get_or_insert_with(Vec::new);
    }

    pub fn schedule(&mut self, delay: f64, action: Action) -> Result<u64, SimError> {
        if !(delay >= 0.0) {
            return Err(SimError::NegativeDelay(delay));
        }
        Ok(self.queue.push(self.clock + delay, action))
    }

    /// Starts periodic mobility sampling; vehicles acquire and refresh
    /// certificates and register as they move.
    pub fn start_mobility(&mut self) -> Result<(), SimError> {
        if !self.sampling {
            self.sampling = true;
            self.schedule(0.0, Action::MobilitySample)?;
        }
        Ok(())
    }

    /// Schedules a revocation of `vehicle` `delay` seconds after its first
    /// certificate is issued.
    pub fn arm_revocation(&mut self, vehicle: usize, delay: f64, scheme: RevocationScheme) {
        self.armed = Some((vehicle, delay, scheme));
    }

    pub fn position(&self, vehicle: usize, time: f64) -> (f64, f64) {
        let t = time.clamp(0.0, self.trace.duration);
        self.trace
            .position_at(vehicle, t)
            .expect("vehicle index and clamped time are valid")
    }

    /// Covering RSU indices for a point, nearest first.
    pub fn covering_rsus(&self, p: (f64, f64)) -> Vec<usize> {
        let mut hits: Vec<(f64, usize)> = self
            .index
            .candidates(p)
            .filter(|&i| self.rsus[i].covers(p))
            .map(|i| {
                let q = self.rsus[i].position;
                ((q.0 - p.0).hypot(q.1 - p.1), i)
            })
            .collect();
        hits.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        hits.into_iter().map(|(_, i)| i).collect()
    }

    pub fn vehicles_in_range(&self, rsu: usize, time: f64) -> Vec<usize> {
        (0..self.vehicles.len())
            .filter(|&v| self.rsus[rsu].covers(self.position(v, time)))
            .collect()
    }

    fn rsu_index(&self, id: EntityId) -> Option<usize> {
        match self.ids.kind(id) {
            Some(EntityKind::Rsu(i)) => Some(i),
            _ => None,
        }
    }

    fn processing(&self, src: EntityId) -> f64 {
        match self.ids.kind(src) {
            Some(EntityKind::Ca) => self.link.tp_ca,
            Some(EntityKind::Manager(_)) => self.link.tp_man,
            Some(EntityKind::Rsu(_)) => self.link.tp_rsu,
            Some(EntityKind::Vehicle(_)) => self.link.tp_vehicle,
            None => 0.0,
        }
    }

    fn hop_delay(&self, src: EntityId, dst: EntityId) -> Result<f64, SimError> {
        use EntityKind::*;
        // ids past the population are foreign radios, reachable from RSUs only
        let foreign = |id: EntityId| id.0 >= self.ids.external().0 && id != BROADCAST;
        let a = self.ids.kind(src);
        let b = self.ids.kind(dst);
        if matches!((a, b), (Some(Rsu(_)), None)) && foreign(dst)
            || matches!((a, b), (None, Some(Rsu(_)))) && foreign(src)
        {
            return Ok(self.link.radio_latency);
        }
        let a = a.ok_or(SimError::Topology(src))?;
        let b = b.ok_or(SimError::Topology(dst))?;
        Ok(match (a, b) {
            (Ca, Manager(_)) | (Manager(_), Ca) => self.link.t_ca,
            (Manager(_), Rsu(_)) | (Rsu(_), Manager(_)) | (Manager(_), Manager(_)) => self.link.t_man,
            (Rsu(_), Rsu(_)) => self.link.t_rsu,
            (Rsu(_), Vehicle(_)) | (Vehicle(_), Rsu(_)) => self.link.radio_latency,
            _ => return Err(SimError::Topology(dst)),
        })
    }

    fn count_transmission(&mut self, msg: &mut ProtocolMessage) {
        msg.seq = self.msg_seq;
        self.msg_seq += 1;
        self.metrics.messages_sent += 1;
        *self.metrics.sent_by_kind.entry(msg.kind).or_default() += 1;
        if let Some(rec) = self.revocation.as_mut() {
            if msg.kind.is_revocation() {
                *rec.sent_by_kind.entry(msg.kind).or_default() += 1;
            }
        }
        if let Some(log) = self.wire_log.as_mut() {
            log.push((self.clock, msg.clone()));
        }
    }

    /// Passes a fresh transmission through the tap. `None` means the tap
    /// swallowed it.
    fn tapped(&mut self, msg: ProtocolMessage) -> Option<ProtocolMessage> {
        let Some(tap) = self.tap.as_mut() else {
            return Some(msg);
        };
        match tap(self.clock, &msg) {
            TapAction::Pass => Some(msg),
            TapAction::Drop => {
                self.metrics.messages_dropped += 1;
                None
            }
            TapAction::Replace(m) => Some(m),
        }
    }

    /// Sends `msg` from `msg.src` now: sender processing plus hop delay.
    pub fn unicast(&mut self, msg: ProtocolMessage) -> Result<(), SimError> {
        let delay = self.processing(msg.src) + self.hop_delay(msg.src, msg.dst)?;
        let handovers = if self.link.recursive_handover { 8 } else { 1 };
        self.send(msg, delay, None, handovers)
    }

    fn send(
        &mut self,
        mut msg: ProtocolMessage,
        delay: f64,
        relay: Option<EntityId>,
        handovers_left: u8,
    ) -> Result<(), SimError> {
        self.count_transmission(&mut msg);
        let Some(msg) = self.tapped(msg) else {
            return Ok(());
        };
        self.in_flight += 1;
        self.schedule(
            delay,
            Action::Deliver {
                msg,
                relay,
                handovers_left,
            },
        )?;
        Ok(())
    }

    /// Delivers an attacker-crafted message after `delay`, bypassing the
    /// tap. Counted as a transmission.
    pub fn inject(&mut self, mut msg: ProtocolMessage, delay: f64) -> Result<(), SimError> {
        self.count_transmission(&mut msg);
        self.in_flight += 1;
        self.schedule(
            delay,
            Action::Deliver {
                msg,
                relay: None,
                handovers_left: 0,
            },
        )?;
        Ok(())
    }

    /// One local radio transmission from an RSU.
    pub fn broadcast_in_range(&mut self, rsu: usize, mut msg: ProtocolMessage) -> Result<u64, SimError> {
        msg.src = self.rsus[rsu].id;
        msg.dst = BROADCAST;
        if self.revocation.is_some() {
            let reach = self.vehicles_in_range(rsu, self.clock);
            if let Some(rec) = self.revocation.as_mut() {
                rec.in_range_at_send.extend(reach);
            }
        }
        self.count_transmission(&mut msg);
        let Some(msg) = self.tapped(msg) else {
            return Ok(0);
        };
        self.in_flight += 1;
        let delay = self.link.tp_rsu + self.link.radio_latency;
        self.schedule(delay, Action::Broadcast { msg })
    }

    pub fn run_until(&mut self, t_end: f64) -> Result<(), SimError> {
        if t_end < self.clock {
            return Err(SimError::TimeTravel {
                t_end,
                clock: self.clock,
            });
        }
        while self.queue.peek_time().is_some_and(|t| t <= t_end) {
            let event = self.queue.pop().expect("peeked");
            debug_assert!(event.fire_time >= self.clock);
            self.clock = event.fire_time;
            let seq = event.seq;
            let outcome = panic::catch_unwind(AssertUnwindSafe(|| self.fire(event.action)));
            match outcome {
                Ok(result) => result?,
                Err(payload) => {
                    let message = payload
                        .downcast_ref::<&str>()
                        .map(|s| s.to_string())
                        .or_else(|| payload.downcast_ref::<String>().cloned())
                        .unwrap_or_else(|| "unknown panic".into());
                    return Err(SimError::HandlerPanic { event: seq, message });
                }
            }
        }
        self.clock = t_end;
        Ok(())
    }

    fn fire(&mut self, action: Action) -> Result<(), SimError> {
        match action {
            Action::Deliver {
                msg,
                relay,
                handovers_left,
            } => {
                self.in_flight -= 1;
                self.deliver(msg, relay, handovers_left)
            }
            Action::Broadcast { msg } => {
                self.in_flight -= 1;
                self.metrics.messages_delivered += 1;
                self.on_broadcast(msg)
            }
            Action::MobilitySample => self.on_sample(),
            Action::Revoke { vehicle, scheme } => self.start_revocation(vehicle, scheme),
            Action::Timer(_) => Ok(()),
        }
    }

    fn lost(&mut self) -> bool {
        self.link.loss_rate > 0.0 && self.rng.gen::<f64>() < self.link.loss_rate
    }

    fn deliver(&mut self, msg: ProtocolMessage, relay: Option<EntityId>, handovers_left: u8) -> Result<(), SimError> {
        if self.lost() {
            self.metrics.messages_dropped += 1;
            return Ok(());
        }
        if let Some(via) = relay {
            // relay RSU re-radios to the vehicle
            self.metrics.messages_delivered += 1;
            let mut out = msg;
            out.src = via;
            let delay = self.link.tp_rsu + self.link.radio_latency;
            return self.send(out, delay, None, handovers_left);
        }
        let Some(kind) = self.ids.kind(msg.dst) else {
            self.metrics.messages_dropped += 1;
            return Ok(());
        };
        // radio hops are range-checked on arrival
        let radio_src = self.rsu_index(msg.src);
        match kind {
            EntityKind::Vehicle(v) => {
                let Some(r) = radio_src else {
                    self.metrics.messages_dropped += 1;
                    return Ok(());
                };
                let p = self.position(v, self.clock);
                if !self.rsus[r].covers(p) {
                    self.metrics.messages_dropped += 1;
                    return self.handover(msg, r, v, handovers_left);
                }
            }
            EntityKind::Rsu(r) => {
                if let Some(EntityKind::Vehicle(v)) = self.ids.kind(msg.src) {
                    if !self.rsus[r].covers(self.position(v, self.clock)) {
                        self.metrics.messages_dropped += 1;
                        self.metrics.delivery_failures += 1;
                        return Ok(());
                    }
                }
            }
            _ => {}
        }
        self.metrics.messages_delivered += 1;
        match kind {
            EntityKind::Ca => self.on_ca(msg),
            EntityKind::Manager(i) => self.on_manager(i, msg),
            EntityKind::Rsu(i) => self.on_rsu(i, msg),
            EntityKind::Vehicle(i) => self.on_vehicle(i, msg),
        }
    }

    /// Vehicle left the sender's range before arrival. Relay once through
    /// the RSU it moved to, if the sender knows it or the vehicle is covered.
    fn handover(&mut self, msg: ProtocolMessage, from: usize, v: usize, left: u8) -> Result<(), SimError> {
        if left == 0 {
            self.metrics.delivery_failures += 1;
            return Ok(());
        }
        let elp = self.vehicles[v].state.elp;
        let now = self.clock;
        let pointer = self.rsus[from].next_rsu(&elp, now).and_then(|id| self.rsu_index(id));
        let covering = self.covering_rsus(self.position(v, now)).first().copied();
        let Some(next) = pointer.or(covering).filter(|&n| n != from) else {
            self.metrics.delivery_failures += 1;
            return Ok(());
        };
        self.metrics.handover_relays += 1;
        let via = self.rsus[next].id;
        let delay = self.link.tp_rsu + self.link.t_rsu;
        self.send(msg, delay, Some(via), left - 1)
    }

    fn security(&mut self, at: EntityId, kind: SecurityEventKind, message: MessageKind) {
        self.metrics.security_events.push(SecurityEvent {
            time: self.clock,
            at,
            kind,
            message,
        });
    }

    fn protocol_error(&mut self, at: EntityId, err: ProtocolError, message: MessageKind) -> Result<(), SimError> {
        match err {
            ProtocolError::Security(kind) => self.security(at, kind, message),
            ProtocolError::Malformed(_) | ProtocolError::WrongKind { .. } => {
                self.metrics.malformed_drops += 1;
            }
            ProtocolError::Topology(id) => {
                // a message naming an RSU outside this domain
                self.metrics.malformed_drops += 1;
                let _ = id;
            }
            ProtocolError::NoInfrastructure => {}
        }
        Ok(())
    }

    fn on_ca(&mut self, msg: ProtocolMessage) -> Result<(), SimError> {
        let at = self.ca.id;
        match msg.kind {
            MessageKind::KeyReq3 => match self.ca.handle_key_request(&self.crypto, &msg, self.clock) {
                Ok(KeyIssue::Issued {
                    response,
                    early_reissue,
                }) => {
                    if early_reissue {
                        self.security(at, SecurityEventKind::EarlyReRequest, msg.kind);
                    }
                    self.unicast(response)
                }
                Ok(KeyIssue::Refused(_)) => {
                    self.metrics.refusals += 1;
                    Ok(())
                }
                Err(e) => self.protocol_error(at, e, msg.kind),
            },
            _ => {
                self.metrics.malformed_drops += 1;
                Ok(())
            }
        }
    }

    fn on_manager(&mut self, i: usize, msg: ProtocolMessage) -> Result<(), SimError> {
        let at = self.managers[i].id;
        let now = self.clock;
        let crypto = &self.crypto;
        let mgr = &mut self.managers[i];
        let result: Result<Vec<ProtocolMessage>, ProtocolError> = match msg.kind {
            MessageKind::KeyReq2 => mgr.handle_key_request(crypto, &msg).map(|m| vec![m]),
            MessageKind::KeyResp4 => mgr.handle_key_response(crypto, &msg).map(|m| vec![m]),
            MessageKind::Register => mgr.handle_register(crypto, &msg, now).map(|(elp, m)| {
                if let (Some(&v), true) = (self.elp_index.get(&elp), m.is_some()) {
                    *self.metrics.tracking_by_vehicle.entry(v).or_default() += 1;
                }
                m.into_iter().collect()
            }),
            MessageKind::ManagerHandoff => match mgr.handle_handoff(crypto, &msg, now) {
                Ok(HandoffAck::NoRecord) => {
                    self.metrics.handoff_no_record += 1;
                    Ok(Vec::new())
                }
                Ok(HandoffAck::Updated) => Ok(Vec::new()),
                Err(e) => Err(e),
            },
            MessageKind::RevokeToManager | MessageKind::ManagerForward => {
                let policy = self.policy;
                let out = mgr.route_revocation(crypto, &msg, policy, now);
                if out.is_ok() {
                    if let Some(rec) = self.revocation.as_mut() {
                        rec.managers_reached.insert(at);
                    }
                }
                out
            }
            other => Err(ProtocolError::WrongKind {
                expected: MessageKind::KeyReq2,
                got: other,
            }),
        };
        match result {
            Ok(out) => {
                for m in out {
                    if m.kind == MessageKind::RevokeToRsu {
                        if let Some(rec) = self.revocation.as_mut() {
                            rec.rsu_targets.insert(m.dst);
                        }
                    }
                    self.unicast(m)?;
                }
                Ok(())
            }
            Err(e) => self.protocol_error(at, e, msg.kind),
        }
    }

    fn on_rsu(&mut self, i: usize, msg: ProtocolMessage) -> Result<(), SimError> {
        let at = self.rsus[i].id;
        let now = self.clock;
        match msg.kind {
            MessageKind::KeyReq1 => match self.rsus[i].handle_key_request(&self.crypto, &msg) {
                Ok(out) => self.unicast(out),
                Err(e) => self.protocol_error(at, e, msg.kind),
            },
            MessageKind::KeyResp5 => match self.rsus[i].handle_key_response(&self.crypto, &msg) {
                Ok((out, _)) => self.unicast(out),
                Err(e) => self.protocol_error(at, e, msg.kind),
            },
            MessageKind::RevokeToRsu => match self.rsus[i].handle_revocation(&self.crypto, &msg, now) {
                Ok(rev) => {
                    if let Some(rec) = self.revocation.as_mut() {
                        rec.rsu_targets.insert(at);
                    }
                    if let Some(fwd) = rev.forward {
                        self.unicast(fwd)?;
                    }
                    self.broadcast_in_range(i, rev.broadcast)?;
                    Ok(())
                }
                Err(e) => self.protocol_error(at, e, msg.kind),
            },
            _ => {
                self.metrics.malformed_drops += 1;
                Ok(())
            }
        }
    }

    fn on_vehicle(&mut self, v: usize, msg: ProtocolMessage) -> Result<(), SimError> {
        let at = self.vehicles[v].state.id;
        if msg.kind != MessageKind::KeyResp6 {
            self.metrics.malformed_drops += 1;
            return Ok(());
        }
        match self.vehicles[v].state.handle_key_response(&self.crypto, &msg) {
            Ok(cert) => {
                let node = &mut self.vehicles[v];
                node.state.last_rsu = node.pending_rsu.take();
                self.metrics.certificates_installed += 1;
                self.certifications.push((self.clock, v, cert.issue_time));
                if let Some((target, delay, scheme)) = self.armed {
                    if target == v {
                        self.armed = None;
                        let at_time = (cert.issue_time + delay - self.clock).max(0.0);
                        self.schedule(at_time, Action::Revoke { vehicle: v, scheme })?;
                    }
                }
                Ok(())
            }
            Err(Rejected::Stale) => {
                // the pending request stays open; the retry timer covers a lost answer
                self.security(at, SecurityEventKind::StaleResponse, msg.kind);
                Ok(())
            }
            Err(Rejected::NotForMe) => {
                self.security(at, SecurityEventKind::NotForMe, msg.kind);
                Ok(())
            }
        }
    }

    fn on_broadcast(&mut self, msg: ProtocolMessage) -> Result<(), SimError> {
        let Some(r) = self.rsu_index(msg.src) else {
            return Ok(());
        };
        let Ok(fields) = crate::protocol::message::decode_fields(&msg.body, 1) else {
            self.metrics.malformed_drops += 1;
            return Ok(());
        };
        let Ok(elp) = Elp::from_slice(fields[0]) else {
            self.metrics.malformed_drops += 1;
            return Ok(());
        };
        let now = self.clock;
        for v in self.vehicles_in_range(r, now) {
            if self.lost() {
                continue;
            }
            self.metrics.broadcast_receptions += 1;
            self.vehicles[v].state.handle_revocation_warning(elp);
            if let Some(rec) = self.revocation.as_mut() {
                rec.warned.insert(v);
            }
        }
        if let Some(rec) = self.revocation.as_mut() {
            rec.last_delivery = Some(rec.last_delivery.map_or(now, |t: f64| t.max(now)));
        }
        Ok(())
    }

    /// Sends message (1) for vehicle `v` to the RSU covering it, if any.
    pub fn request_key(&mut self, v: usize) -> Result<(), SimError> {
        let now = self.clock;
        let p = self.position(v, now);
        let Some(r) = self.covering_rsus(p).first().copied() else {
            return Ok(());
        };
        let rsu = self.rsus[r].id;
        let node = &mut self.vehicles[v];
        match node.state.retransmit_key_request(Some(rsu), now) {
            Ok(msg) => {
                node.pending_rsu = Some(rsu);
                self.unicast(msg)
            }
            Err(_) => Ok(()),
        }
    }

    fn on_sample(&mut self) -> Result<(), SimError> {
        let now = self.clock;
        for v in 0..self.vehicles.len() {
            let p = self.position(v, now);
            let covering = self.covering_rsus(p);
            let node = &self.vehicles[v];
            let cert = node.state.cert.filter(|c| c.is_valid(now));
            let fresh = cert.is_some_and(|c| c.expires_at() - now > self.refresh_margin);
            if !fresh {
                let waiting = node.state.pending_nonce.is_some() && now - node.state.pending_since < self.retry_timeout;
                if !waiting && !covering.is_empty() {
                    self.request_key(v)?;
                }
            }
            let Some(cert) = cert else { continue };
            let node = &self.vehicles[v];
            let last = node.state.last_rsu.and_then(|id| self.rsu_index(id));
            if last.is_some_and(|l| covering.contains(&l)) {
                continue;
            }
            let Some(&new) = covering.first() else { continue };
            let elp = node.state.elp;
            let prev = node.state.last_rsu;
            let reg = self.rsus[new].register_vehicle(&self.crypto, elp, cert.expires_at(), prev, now);
            if let Some(p) = last {
                let new_id = self.rsus[new].id;
                self.rsus[p].set_next_rsu(elp, new_id, now);
            }
            self.vehicles[v].state.last_rsu = Some(self.rsus[new].id);
            match reg {
                Ok(Some(m)) => {
                    *self.metrics.tracking_by_vehicle.entry(v).or_default() += 1;
                    self.unicast(m)?
                }
                Ok(None) => {}
                Err(e) => self.protocol_error(self.rsus[new].id, e, MessageKind::Register)?,
            }
        }
        if now + self.mobility_step <= self.trace.duration {
            self.schedule(self.mobility_step, Action::MobilitySample)?;
        }
        Ok(())
    }

    /// Revocation of vehicle `v` now, under `scheme`.
    pub fn start_revocation(&mut self, v: usize, scheme: RevocationScheme) -> Result<(), SimError> {
        let now = self.clock;
        let elp = self.vehicles[v].state.elp;
        let chain_lengths = self
            .managers
            .iter()
            .filter_map(|m| m.vehicle_registry.get(&elp))
            .filter(|e| e.cert_expiry > now)
            .map(|e| e.rsu_chain.len())
            .collect();
        self.revocation = Some(RevocationRecord {
            target: v,
            elp,
            scheme,
            start: now,
            moot: false,
            sent_by_kind: BTreeMap::new(),
            rsu_targets: BTreeSet::new(),
            managers_reached: BTreeSet::new(),
            in_range_at_send: BTreeSet::new(),
            warned: BTreeSet::new(),
            last_delivery: None,
            chain_lengths,
        });
        let out = match scheme {
            RevocationScheme::Dyn => self
                .ca
                .initiate_revocation(&self.crypto, elp, now)
                .map(|m| m.into_iter().collect::<Vec<_>>()),
            RevocationScheme::Brd => self.ca.flood_revocation(&self.crypto, elp),
        };
        match out {
            Ok(msgs) => {
                if msgs.is_empty() {
                    self.revocation.as_mut().unwrap().moot = true;
                }
                for m in msgs {
                    self.unicast(m)?;
                }
                Ok(())
            }
            Err(e) => self.protocol_error(self.ca.id, e, MessageKind::RevokeToManager),
        }
    }

    /// Drops expired ledger entries at every entity.
    pub fn purge_all(&mut self) {
        let now = self.clock;
        self.ca.purge(now);
        for m in &mut self.managers {
            m.purge(now);
        }
        for r in &mut self.rsus {
            r.purge(now);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::CryptoMode;
    use crate::identity::vac_of;
    use crate::protocol::message::encode_fields;
    use proptest::prelude::{prop_assert, proptest};

    fn world_with(
        rsus: Vec<(f64, f64)>,
        rsu_manager: Vec<usize>,
        managers: usize,
        trace: MobilityTrace,
        link: LinkModel,
    ) -> SimWorld {
        let crypto = CryptoProvider::new(CryptoMode::Mock);
        let topo = Topology {
            bounds: trace.bounds,
            rsu_positions: rsus,
            rsu_manager,
            managers,
        };
        let keys = Keyring::generate(&crypto, managers, topo.rsu_count(), 5);
        let mut cfg = WorldConfig::new(crypto, Arc::new(keys), Arc::new(topo), Arc::new(trace), 300.0, 11);
        cfg.link = link;
        SimWorld::new(cfg).unwrap()
    }

    fn one_rsu(vehicles: &[(f64, f64)], link: LinkModel) -> SimWorld {
        let trace = MobilityTrace::stationary(vehicles, (2000.0, 2000.0), 100.0);
        world_with(vec![(0.0, 0.0)], vec![0], 1, trace, link)
    }

    fn warning(world: &SimWorld) -> ProtocolMessage {
        let elp = Elp::from_u64(0xDEAD);
        ProtocolMessage::new(
            MessageKind::RevokeBroadcast,
            world.rsus[0].id,
            BROADCAST,
            encode_fields(&[elp.as_bytes()]),
        )
    }

    #[test]
    fn zero_delay_fires_before_later_schedules() {
        let mut w = one_rsu(&[], LinkModel::default());
        let a = w.schedule(0.0, Action::Timer(1)).unwrap();
        let b = w.schedule(0.0, Action::Timer(2)).unwrap();
        assert!(a < b);
        let mut q = EventQueue::default();
        q.push(1.0, Action::Timer(0));
        q.push(0.0, Action::Timer(1));
        q.push(0.0, Action::Timer(2));
        let order: Vec<u64> = std::iter::from_fn(|| q.pop()).map(|e| e.seq).collect();
        assert_eq!(order, vec![1, 2, 0]);
        assert_eq!(w.schedule(-0.1, Action::Timer(3)), Err(SimError::NegativeDelay(-0.1)));
    }

    proptest! {
        #[test]
        fn queue_pops_in_time_seq_order(times in proptest::collection::vec(0u32..1000, 1..2000)) {
            let mut q = EventQueue::default();
            for t in &times {
                q.push(f64::from(*t) / 10.0, Action::Timer(0));
            }
            let mut last = (f64::NEG_INFINITY, 0u64);
            while let Some(e) = q.pop() {
                prop_assert!((e.fire_time, e.seq) > last || last.0 == f64::NEG_INFINITY);
                last = (e.fire_time, e.seq);
            }
        }
    }

    #[test]
    fn large_queue_is_sorted() {
        let mut q = EventQueue::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100_000 {
            q.push(rng.gen_range(0..500) as f64, Action::Timer(0));
        }
        let mut prev = (-1.0, 0);
        while let Some(e) = q.pop() {
            assert!(e.fire_time > prev.0 || (e.fire_time == prev.0 && e.seq > prev.1));
            prev = (e.fire_time, e.seq);
        }
    }

    #[test]
    fn run_until_boundaries() {
        let mut w = one_rsu(&[], LinkModel::default());
        w.run_until(5.0).unwrap();
        assert_eq!(w.now(), 5.0);
        w.schedule(1.0, Action::Timer(9)).unwrap();
        w.run_until(6.0).unwrap();
        assert_eq!(w.pending_events(), 0);
        assert!(matches!(w.run_until(1.0), Err(SimError::TimeTravel { .. })));
    }

    #[test]
    fn broadcast_reaches_only_vehicles_in_range() {
        let cars = [(10.0, 0.0), (0.0, 200.0), (100.0, 100.0), (300.0, 0.0), (0.0, 900.0)];
        let mut w = one_rsu(&cars, LinkModel::default());
        let msg = warning(&w);
        w.broadcast_in_range(0, msg).unwrap();
        w.run_until(1.0).unwrap();
        assert_eq!(w.metrics.broadcast_receptions, 3);
        assert_eq!(w.metrics.messages_sent, 1);
        assert_eq!(w.metrics.sent_by_kind[&MessageKind::RevokeBroadcast], 1);
        for v in [0, 1, 2] {
            assert!(w.vehicles[v].state.local_blacklist.contains(&Elp::from_u64(0xDEAD)));
        }
    }

    #[test]
    fn zero_range_broadcast_reaches_nobody() {
        let link = LinkModel {
            radio_range: 0.0,
            ..LinkModel::default()
        };
        let mut w = one_rsu(&[(1.0, 0.0)], link);
        let msg = warning(&w);
        w.broadcast_in_range(0, msg).unwrap();
        w.run_until(1.0).unwrap();
        assert_eq!(w.metrics.broadcast_receptions, 0);
        assert_eq!(w.metrics.messages_sent, 1);
    }

    #[test]
    fn total_loss_drops_everything() {
        let link = LinkModel {
            loss_rate: 1.0,
            ..LinkModel::default()
        };
        let mut w = one_rsu(&[(10.0, 0.0)], link);
        w.start_mobility().unwrap();
        w.run_until(20.0).unwrap();
        assert!(w.metrics.messages_sent > 0);
        assert_eq!(w.metrics.messages_delivered, 0);
        assert_eq!(w.metrics.messages_dropped + w.in_flight(), w.metrics.messages_sent);
        assert_eq!(w.metrics.certificates_installed, 0);
    }

    #[test]
    fn stationary_vehicle_certifies_with_ca_key() {
        let mut w = one_rsu(&[(10.0, 0.0)], LinkModel::default());
        w.start_mobility().unwrap();
        w.run_until(2.0).unwrap();
        let v = &w.vehicles[0].state;
        let cert = v.cert.expect("certified");
        assert_eq!(cert.session_key, w.ca.issued[&v.elp].key);
        assert_eq!(w.metrics.sent_by_kind[&MessageKind::KeyReq1], 1);
        assert_eq!(w.metrics.security_event_count(), 0);
        assert_eq!(
            w.metrics.messages_sent,
            w.metrics.messages_delivered + w.metrics.messages_dropped + w.in_flight()
        );
    }

    #[test]
    fn unknown_destination_is_a_topology_error() {
        let mut w = one_rsu(&[], LinkModel::default());
        let bogus = ProtocolMessage::new(MessageKind::KeyReq3, w.managers[0].id, EntityId(999), vec![1]);
        assert_eq!(w.unicast(bogus), Err(SimError::Topology(EntityId(999))));
        // a foreign radio near an RSU is reachable, then dropped on arrival
        let radio = ProtocolMessage::new(MessageKind::KeyResp6, w.rsus[0].id, EntityId(999), vec![1]);
        assert_eq!(w.unicast(radio), Ok(()));
        w.run_until(1.0).unwrap();
        assert_eq!(w.metrics.messages_dropped, 1);
    }

    #[test]
    fn moving_vehicle_gets_key_through_soft_handover() {
        // leaves RSU A's range while the reply is in flight
        let link = LinkModel {
            t_ca: 0.5,
            ..LinkModel::default()
        };
        let trace = MobilityTrace::scripted(&[(vec![(240.0, 0.0), (600.0, 0.0)], 30.0, 0.0)], (1000.0, 10.0), 30.0);
        let mut w = world_with(vec![(0.0, 0.0), (500.0, 0.0)], vec![0, 0], 1, trace, link);
        w.request_key(0).unwrap();
        w.run_until(3.0).unwrap();
        assert_eq!(w.metrics.handover_relays, 1);
        assert!(w.vehicles[0].state.cert.is_some());
        assert_eq!(w.metrics.delivery_failures, 0);
    }

    #[test]
    fn reply_is_lost_without_a_relay_target() {
        let link = LinkModel {
            t_ca: 0.5,
            ..LinkModel::default()
        };
        let trace = MobilityTrace::scripted(&[(vec![(240.0, 0.0), (600.0, 0.0)], 30.0, 0.0)], (1000.0, 10.0), 30.0);
        let mut w = world_with(vec![(0.0, 0.0)], vec![0], 1, trace, link);
        w.request_key(0).unwrap();
        w.run_until(3.0).unwrap();
        assert_eq!(w.metrics.delivery_failures, 1);
        assert!(w.vehicles[0].state.cert.is_none());
    }

    #[test]
    fn registration_builds_the_chain() {
        let path = vec![(10.0, 0.0), (1000.0, 0.0)];
        let trace = MobilityTrace::scripted(&[(path, 20.0, 1.0)], (1200.0, 10.0), 60.0);
        let rsus = vec![(0.0, 0.0), (500.0, 0.0), (1000.0, 0.0)];
        let mut w = world_with(rsus, vec![0, 0, 0], 1, trace, LinkModel::default());
        w.start_mobility().unwrap();
        w.run_until(55.0).unwrap();
        let elp = w.vehicles[0].state.elp;
        let ids: Vec<EntityId> = (0..3).map(|i| w.rsus[i].id).collect();
        assert_eq!(w.managers[0].vehicle_registry[&elp].rsu_chain, ids);
        assert_eq!(w.rsus[0].passed_vehicles[&elp].next_rsu, Some(ids[1]));
        assert_eq!(w.rsus[1].passed_vehicles[&elp].next_rsu, Some(ids[2]));
        assert_eq!(w.metrics.security_event_count(), 0);
    }

    #[test]
    fn vehicle_identities_are_enrolled() {
        let w = one_rsu(&[(1.0, 1.0), (2.0, 2.0)], LinkModel::default());
        for v in &w.vehicles {
            assert_eq!(w.ca.vac_directory[&v.state.elp], vac_of(&v.state.elp, &v.state.ecn));
        }
    }

    #[test]
    fn grid_topology_partitions_evenly() {
        for m in [1, 2, 4, 8, 16] {
            let t = Topology::grid((2000.0, 2000.0), 500.0, m).unwrap();
            assert_eq!(t.rsu_count(), 16);
            t.validate().unwrap();
            for k in 0..m {
                assert_eq!(t.rsu_manager.iter().filter(|&&x| x == k).count(), 16 / m);
            }
        }
        assert!(Topology::grid((2000.0, 2000.0), 500.0, 32).is_err());
        assert_eq!(Topology::grid((5000.0, 5000.0), 500.0, 4).unwrap().rsu_count(), 100);
    }

    #[test]
    fn id_layout_round_trips() {
        let ids = IdLayout {
            managers: 2,
            rsus: 3,
            vehicles: 4,
        };
        assert_eq!(ids.kind(ids.ca()), Some(EntityKind::Ca));
        assert_eq!(ids.kind(ids.manager(1)), Some(EntityKind::Manager(1)));
        assert_eq!(ids.kind(ids.rsu(2)), Some(EntityKind::Rsu(2)));
        assert_eq!(ids.kind(ids.vehicle(3)), Some(EntityKind::Vehicle(3)));
        assert_eq!(ids.kind(ids.external()), None);
    }
}
