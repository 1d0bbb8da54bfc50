//! Revocation strategies and per-run metric extraction.
//!
//! DYN routes through the CA's issuing record and the managers' ledgers.
//! BRD floods: the CA addresses every manager, every manager every RSU, and
//! every RSU broadcasts.

use std::fmt;
use std::str::FromStr;

use crate::netsim::{SimError, SimWorld};
use crate::protocol::MessageKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RevocationScheme {
    Dyn,
    Brd,
}

impl RevocationScheme {
    pub const ALL: [RevocationScheme; 2] = [RevocationScheme::Dyn, RevocationScheme::Brd];
}

impl fmt::Display for RevocationScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RevocationScheme::Dyn => "DYN",
            RevocationScheme::Brd => "BRD",
        })
    }
}

impl FromStr for RevocationScheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "DYN" => Ok(RevocationScheme::Dyn),
            "BRD" => Ok(RevocationScheme::Brd),
            _ => Err(format!("unknown scheme `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RevocationMetrics {
    /// Revocation transmissions of every kind.
    pub messages_sent: u64,
    /// Revocation messages addressed to RSUs.
    pub rsu_messages: u64,
    pub manager_messages: u64,
    pub broadcasts: u64,
    /// Distinct RSUs that received the revocation.
    pub rsu_targets: u64,
    pub vehicles_warned: u64,
    pub intended_recipients: u64,
    pub delivery_ratio: f64,
    pub t_e2e_measured: f64,
    pub chain_lengths: Vec<usize>,
    /// Register and handoff messages the target caused before revocation.
    pub tracking_messages: u64,
    /// Revocation found no live certificate, or never happened.
    pub moot: bool,
}

/// Recipients a scheme aims at: every vehicle for BRD, the vehicles within
/// range of a broadcasting RSU for DYN.
pub fn intended_recipients(world: &SimWorld, scheme: RevocationScheme) -> u64 {
    match scheme {
        RevocationScheme::Brd => world.vehicles.len() as u64,
        RevocationScheme::Dyn => world.revocation.as_ref().map_or(0, |r| r.in_range_at_send.len() as u64),
    }
}

/// Metrics of the revocation recorded in `world`. A world that never
/// started one yields the moot, all-zero record.
pub fn collect_metrics(world: &SimWorld) -> RevocationMetrics {
    let Some(rec) = world.revocation.as_ref() else {
        return RevocationMetrics {
            moot: true,
            ..RevocationMetrics::default()
        };
    };
    let intended = intended_recipients(world, rec.scheme);
    let warned = match rec.scheme {
        RevocationScheme::Brd => rec.warned.len(),
        RevocationScheme::Dyn => rec.warned.intersection(&rec.in_range_at_send).count(),
    } as u64;
    let count = |k: MessageKind| rec.sent_by_kind.get(&k).copied().unwrap_or(0);
    RevocationMetrics {
        messages_sent: rec.messages_sent(),
        rsu_messages: count(MessageKind::RevokeToRsu),
        manager_messages: count(MessageKind::RevokeToManager) + count(MessageKind::ManagerForward),
        broadcasts: count(MessageKind::RevokeBroadcast),
        rsu_targets: rec.rsu_targets.len() as u64,
        vehicles_warned: warned,
        intended_recipients: intended,
        delivery_ratio: if intended == 0 {
            0.0
        } else {
            warned as f64 / intended as f64
        },
        t_e2e_measured: rec.last_delivery.map_or(0.0, |t| t - rec.start),
        chain_lengths: rec.chain_lengths.clone(),
        tracking_messages: world.metrics.tracking_by_vehicle.get(&rec.target).copied().unwrap_or(0),
        moot: rec.moot,
    }
}

/// Revokes `target` at the current clock and runs the world for `settle`
/// seconds so every revocation message lands.
pub fn run_revocation(
    world: &mut SimWorld,
    scheme: RevocationScheme,
    target: usize,
    settle: f64,
) -> Result<RevocationMetrics, SimError> {
    world.start_revocation(target, scheme)?;
    let end = world.now() + settle;
    world.run_until(end)?;
    Ok(collect_metrics(world))
}

/// Timing of a mobile run: the target is revoked `revoke_delay` seconds
/// after its first certificate is issued.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunPlan {
    pub target: usize,
    pub revoke_delay: f64,
    pub settle: f64,
    /// Give up waiting for the target's certificate after this time.
    pub horizon: f64,
}

/// Drives a fresh world: vehicles move and certify, the target is revoked
/// per `plan`, and metrics are taken once the revocation settles.
pub fn run_scenario(
    world: &mut SimWorld,
    scheme: RevocationScheme,
    plan: &RunPlan,
) -> Result<RevocationMetrics, SimError> {
    world.start_mobility()?;
    world.arm_revocation(plan.target, plan.revoke_delay, scheme);
    let mut t = world.now();
    while world.revocation.is_none() && t < plan.horizon {
        t = (t + 1.0).min(plan.horizon);
        world.run_until(t)?;
    }
    if let Some(start) = world.revocation.as_ref().map(|r| r.start) {
        world.run_until((start + plan.settle).max(world.now()))?;
    }
    Ok(collect_metrics(world))
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::crypto::{CryptoMode, CryptoProvider};
    use crate::mobility::MobilityTrace;
    use crate::netsim::{Keyring, Topology, WorldConfig};

    /// Four RSUs, one manager; vehicles 0 and 1 share the first RSU.
    fn world() -> SimWorld {
        let crypto = CryptoProvider::new(CryptoMode::Mock);
        let topo = Topology::grid((1000.0, 1000.0), 500.0, 1).unwrap();
        let trace = MobilityTrace::stationary(
            &[(250.0, 250.0), (260.0, 250.0), (750.0, 750.0)],
            (1000.0, 1000.0),
            60.0,
        );
        let keys = Keyring::generate(&crypto, 1, topo.rsu_count(), 1);
        let cfg = WorldConfig::new(crypto, Arc::new(keys), Arc::new(topo), Arc::new(trace), 300.0, 4);
        let mut w = SimWorld::new(cfg).unwrap();
        w.start_mobility().unwrap();
        w.run_until(3.0).unwrap();
        w
    }

    #[test]
    fn scheme_names_round_trip() {
        for s in RevocationScheme::ALL {
            assert_eq!(s.to_string().to_lowercase().parse::<RevocationScheme>(), Ok(s));
        }
        assert!("ALL".parse::<RevocationScheme>().is_err());
    }

    #[test]
    fn no_revocation_is_moot() {
        let m = collect_metrics(&world());
        assert!(m.moot);
        assert_eq!(m.messages_sent, 0);
    }

    #[test]
    fn dyn_reaches_only_the_chain() {
        let mut w = world();
        let m = run_revocation(&mut w, RevocationScheme::Dyn, 0, 2.0).unwrap();
        assert!(!m.moot);
        assert_eq!(
            (m.messages_sent, m.rsu_messages, m.manager_messages, m.broadcasts),
            (3, 1, 1, 1)
        );
        assert_eq!(m.rsu_targets, 1);
        assert_eq!((m.vehicles_warned, m.intended_recipients), (2, 2));
        assert_eq!(m.delivery_ratio, 1.0);
        assert_eq!(m.chain_lengths, vec![1]);
        assert!(m.t_e2e_measured > 0.0);
    }

    #[test]
    fn brd_floods_every_rsu() {
        let mut w = world();
        let m = run_revocation(&mut w, RevocationScheme::Brd, 0, 2.0).unwrap();
        assert_eq!((m.messages_sent, m.rsu_messages, m.broadcasts), (9, 4, 4));
        assert_eq!(intended_recipients(&w, RevocationScheme::Brd), 3);
        assert_eq!(m.vehicles_warned, 3);
    }

    #[test]
    fn revoking_an_uncertified_vehicle_is_moot() {
        let crypto = CryptoProvider::new(CryptoMode::Mock);
        let topo = Topology::grid((1000.0, 1000.0), 500.0, 1).unwrap();
        // far outside every RSU's range
        let trace = MobilityTrace::stationary(&[(250.0, 250.0), (5000.0, 5000.0)], (6000.0, 6000.0), 60.0);
        let keys = Keyring::generate(&crypto, 1, topo.rsu_count(), 1);
        let cfg = WorldConfig::new(crypto, Arc::new(keys), Arc::new(topo), Arc::new(trace), 300.0, 4);
        let mut w = SimWorld::new(cfg).unwrap();
        w.start_mobility().unwrap();
        w.run_until(3.0).unwrap();
        let m = run_revocation(&mut w, RevocationScheme::Dyn, 1, 2.0).unwrap();
        assert!(m.moot);
        assert_eq!(m.messages_sent, 0);
    }
}
