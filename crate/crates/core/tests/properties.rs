use std::sync::Arc;

use proptest::prelude::*;

use vanet_dynkey::crypto::{CryptoMode, CryptoProvider};
use vanet_dynkey::harness::{run_simulations, Experiment, ExperimentConfig, ModelSelection};
use vanet_dynkey::mobility::MobilityTrace;
use vanet_dynkey::netsim::{Keyring, LinkModel, SimWorld, Topology, WorldConfig};
use vanet_dynkey::protocol::{MessageKind, RevocationRouting, RoutingPolicy};
use vanet_dynkey::revocation_analytics::{e2e_time, message_count, node_percentage, radius, TimingParams};
use vanet_dynkey::schemes::{collect_metrics, RevocationScheme};

/// Smallest k with k*d >= v*l/3.6, worked in integers: 18*k*d >= 5*v*l.
fn blocks_by_counting(v: u64, l: u64, d: u64) -> u64 {
    let mut k = 0;
    while 18 * k * d < 5 * v * l {
        k += 1;
    }
    k
}

fn sequential_run(n: usize, link: &LinkModel) -> (usize, f64) {
    let crypto = CryptoProvider::new(CryptoMode::Mock);
    let rsus: Vec<(f64, f64)> = (0..n).map(|i| (100.0 + 500.0 * i as f64, 0.0)).collect();
    let len = 500.0 * n as f64;
    let topo = Topology {
        bounds: (len, 10.0),
        rsu_positions: rsus,
        rsu_manager: vec![0; n],
        managers: 1,
    };
    let end = 100.0 + 500.0 * (n - 1) as f64;
    let trace = MobilityTrace::scripted(&[(vec![(100.0, 0.0), (end, 0.0)], 25.0, 0.0)], (len, 10.0), 400.0);
    let keys = Keyring::generate(&crypto, 1, n, 3);
    let mut cfg = WorldConfig::new(crypto, Arc::new(keys), Arc::new(topo), Arc::new(trace), 400.0, 9);
    cfg.link = link.clone();
    cfg.policy = RoutingPolicy {
        routing: RevocationRouting::Sequential,
        ..RoutingPolicy::default()
    };
    let mut w = SimWorld::new(cfg).unwrap();
    w.start_mobility().unwrap();
    let arrive = (end - 100.0) / 25.0 + 5.0;
    w.run_until(arrive).unwrap();
    w.start_revocation(0, RevocationScheme::Dyn).unwrap();
    w.run_until(arrive + 10.0).unwrap();
    let m = collect_metrics(&w);
    (m.chain_lengths.first().copied().unwrap_or(0), m.t_e2e_measured)
}

fn stationary_world(rsus: &[(f64, f64)], managers: usize, vehicles: &[(f64, f64)], mode: CryptoMode) -> SimWorld {
    let crypto = CryptoProvider::new(mode);
    let bounds = (2000.0, 2000.0);
    let topo = Topology {
        bounds,
        rsu_positions: rsus.to_vec(),
        rsu_manager: (0..rsus.len()).map(|i| i % managers).collect(),
        managers,
    };
    let trace = MobilityTrace::stationary(vehicles, bounds, 30.0);
    let keys = Keyring::generate(&crypto, managers, rsus.len(), 17);
    let cfg = WorldConfig::new(crypto, Arc::new(keys), Arc::new(topo), Arc::new(trace), 300.0, 17);
    SimWorld::new(cfg).unwrap()
}

prop_compose! {
    fn covered_topology()(rsus in prop::collection::vec((0.0..2000.0f64, 0.0..2000.0f64), 1..5))
        (managers in 1..=rsus.len().min(3),
         vehicles in prop::collection::vec((0..rsus.len(), 0.0..200.0f64, 0.0..std::f64::consts::TAU), 1..4),
         rsus in Just(rsus))
        -> (Vec<(f64, f64)>, usize, Vec<(f64, f64)>) {
        let v = vehicles
            .iter()
            .map(|&(i, d, a)| {
                let (x, y) = rsus[i];
                ((x + d * a.cos()).clamp(0.0, 2000.0), (y + d * a.sin()).clamp(0.0, 2000.0))
            })
            .collect();
        (rsus, managers, v)
    }
}

proptest! {
    #[test]
    fn message_count_matches_counting(v in 1u64..200, l in 1u64..3600, d in 1u64..5000) {
        let r = radius(v as f64, l as f64).unwrap();
        prop_assert!((r - (v * l) as f64 / 3.6).abs() <= 1e-9 * r.max(1.0));
        let m = message_count(r, d as f64).unwrap();
        prop_assert_eq!(m, blocks_by_counting(v, l, d) + 1);
        let n = m + v;
        let p = node_percentage(m, n).unwrap();
        prop_assert!((p * n as f64 - 100.0 * m as f64).abs() < 1e-6);
    }

    #[test]
    fn message_count_is_monotone(v in 1u64..200, l in 1u64..3600, d in 1u64..5000) {
        let m = |v: u64, l: u64, d: u64| message_count(radius(v as f64, l as f64).unwrap(), d as f64).unwrap();
        prop_assert!(m(v + 1, l, d) >= m(v, l, d));
        prop_assert!(m(v, l + 1, d) >= m(v, l, d));
        prop_assert!(m(v, l, d + 1) <= m(v, l, d));
    }

    #[test]
    fn e2e_time_adds_one_hop_per_rsu(n in 0u64..50, t in prop::array::uniform6(0.0..0.5f64)) {
        let tp = TimingParams {
            t_p_ca: t[0],
            t_ca: t[1],
            t_p_man: t[2],
            t_man: t[3],
            t_p_rsu: t[4],
            t_rsu: t[5],
        };
        let head = t[0] + t[1] + t[2] + t[3];
        let hop = t[4] + t[5];
        let mut sum = head;
        for _ in 0..n {
            sum += hop;
        }
        prop_assert!((e2e_time(&tp, n) - sum).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn sequential_chain_residual_is_radio_minus_hop(
        n in 1usize..6,
        t_ca in 0.001..0.05f64,
        t_man in 0.001..0.3f64,
        t_rsu in 0.001..0.05f64,
        tp_rsu in 0.0..0.005f64,
        radio in 0.0..0.01f64,
    ) {
        let link = LinkModel {
            t_ca,
            t_man,
            t_rsu,
            tp_rsu,
            radio_latency: radio,
            ..LinkModel::default()
        };
        let (chain, measured) = sequential_run(n, &link);
        prop_assert_eq!(chain, n);
        let want = e2e_time(&TimingParams::from(&link), n as u64);
        prop_assert!((measured - want - (radio - t_rsu)).abs() < 1e-9, "{} vs {}", measured, want);
    }

    #[test]
    fn real_crypto_handshake_agrees_with_ca((rsus, managers, vehicles) in covered_topology()) {
        let mut w = stationary_world(&rsus, managers, &vehicles, CryptoMode::Real);
        w.start_mobility().unwrap();
        w.run_until(3.0).unwrap();
        for kind in [MessageKind::KeyReq1, MessageKind::KeyReq3, MessageKind::KeyResp6] {
            prop_assert!(w.metrics.sent_by_kind.get(&kind).copied().unwrap_or(0) >= vehicles.len() as u64);
        }
        for v in &w.vehicles {
            let cert = v.state.cert.expect("certified");
            let rec = &w.ca.issued[&v.state.elp];
            prop_assert_eq!(cert.session_key.encode(), rec.key.encode());
        }
        prop_assert_eq!(w.metrics.security_event_count(), 0);
    }

    #[test]
    fn dyn_never_costs_more_than_brd(vehicles in 5usize..40, seed: u64, highway: bool) {
        let mut cfg = ExperimentConfig::preset(Experiment::E2);
        cfg.model = if highway { ModelSelection::Highway } else { ModelSelection::Manhattan };
        cfg.sweep = vec![vehicles as f64];
        cfg.replications = 1;
        cfg.seed = seed;
        let runs = run_simulations(&cfg, false).unwrap();
        let dyn_run = runs.iter().find(|r| r.scheme == RevocationScheme::Dyn).unwrap();
        let brd_run = runs.iter().find(|r| r.scheme == RevocationScheme::Brd).unwrap();
        prop_assert_eq!(dyn_run.seed, brd_run.seed);
        prop_assert!(dyn_run.metrics.rsu_messages <= brd_run.metrics.rsu_messages);
        prop_assert!(dyn_run.metrics.rsu_targets <= brd_run.metrics.rsu_targets);
    }

    #[test]
    fn config_text_round_trips(
        vehicles in 1usize..500,
        managers in 1usize..10,
        seed: u64,
        reps in 1usize..50,
        lifetime in 1u32..10_000,
        spacing in 50u32..5000,
        sweep in prop::collection::vec(1u32..1000, 1..6),
        real: bool,
        revoke in prop::option::of(1u32..1000),
    ) {
        let mut cfg = ExperimentConfig::preset(Experiment::E2);
        cfg.vehicles = vehicles;
        cfg.managers = managers;
        cfg.seed = seed;
        cfg.replications = reps;
        cfg.cert_lifetime = f64::from(lifetime) / 10.0;
        cfg.rsu_spacing = f64::from(spacing);
        cfg.sweep = sweep.iter().map(|&x| f64::from(x)).collect();
        cfg.crypto = if real { CryptoMode::Real } else { CryptoMode::Mock };
        cfg.revoke_delay = revoke.map(|r| f64::from(r) / 4.0);
        let mut back = ExperimentConfig::preset(Experiment::Custom);
        back.apply_text(&cfg.to_key_values()).unwrap();
        prop_assert_eq!(back, cfg);
    }
}
