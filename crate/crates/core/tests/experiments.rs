use vanet_dynkey::crypto::CryptoMode;
use vanet_dynkey::harness::{
    run_experiment, Experiment, ExperimentConfig, ExperimentResult, MobilityModel, SummaryRow,
};
use vanet_dynkey::schemes::RevocationScheme::{self, Brd, Dyn};

fn preset(e: Experiment) -> ExperimentResult {
    run_experiment(&ExperimentConfig::preset(e), true).unwrap()
}

fn series(res: &ExperimentResult, model: MobilityModel, scheme: RevocationScheme) -> Vec<&SummaryRow> {
    let mut rows: Vec<&SummaryRow> = res
        .summary
        .iter()
        .filter(|r| r.model == model && r.scheme == scheme)
        .collect();
    rows.sort_by_key(|r| r.point);
    rows
}

#[test]
fn e1_defaults_give_fifteen_against_a_thousand() {
    let res = preset(Experiment::E1);
    let row = res
        .analytic
        .iter()
        .find(|r| r.model == "manhattan" && r.v_kmh == 80.0)
        .unwrap();
    assert_eq!((row.m_msgs, row.brd_msgs, row.n_total), (15, 1000, 1000));
    assert!(res.runs.is_empty());
}

#[test]
fn e2_dyn_never_exceeds_brd_and_does_not_grow_with_density() {
    let res = preset(Experiment::E2);
    for model in [MobilityModel::Manhattan, MobilityModel::Highway] {
        let (d, b) = (series(&res, model, Dyn), series(&res, model, Brd));
        for (d, b) in d.iter().zip(&b) {
            assert!(d.messages.mean <= b.messages.mean, "{model} at {}", d.x);
        }
    }
    // DYN/BRD stays flat within the 95% intervals from sparse to dense
    let d = series(&res, MobilityModel::Manhattan, Dyn);
    let b = series(&res, MobilityModel::Manhattan, Brd);
    let ratio = |i: usize| d[i].messages.mean / b[i].messages.mean;
    let slack = |i: usize| d[i].messages.half_width / b[i].messages.mean;
    let last = d.len() - 1;
    assert!(
        ratio(last) <= ratio(0) + slack(0) + slack(last),
        "{} vs {}",
        ratio(last),
        ratio(0)
    );
}

#[test]
fn e3_dyn_cost_grows_slower_than_brd() {
    let res = preset(Experiment::E3);
    for model in [MobilityModel::Manhattan, MobilityModel::Highway] {
        let (d, b) = (series(&res, model, Dyn), series(&res, model, Brd));
        let last = d.len() - 1;
        assert!(d[last].messages.mean < b[last].messages.mean);
        assert!(b[last].messages.mean / b[0].messages.mean > d[last].messages.mean / d[0].messages.mean);
    }
    let analytic = &res.analytic;
    assert!(analytic.iter().all(|r| r.m_msgs > 0));
    let manhattan: Vec<_> = analytic.iter().filter(|r| r.model == "manhattan").collect();
    assert!(manhattan
        .windows(2)
        .all(|w| w[0].brd_msgs < w[1].brd_msgs && w[0].m_msgs == w[1].m_msgs));
}

#[test]
fn e4_dyn_keeps_its_advantage_at_every_delay() {
    let res = preset(Experiment::E4);
    assert_eq!(res.config.sweep, vec![50.0, 100.0, 150.0, 200.0, 250.0, 300.0]);
    for model in [MobilityModel::Manhattan, MobilityModel::Highway] {
        let (d, b) = (series(&res, model, Dyn), series(&res, model, Brd));
        assert_eq!(d.len(), 6);
        for (d, b) in d.iter().zip(&b) {
            assert!(d.messages.mean < b.messages.mean, "{model} at {} ms", d.x);
        }
    }
}

#[test]
fn e5_brd_improves_with_density() {
    let res = preset(Experiment::E5);
    for model in [MobilityModel::Manhattan, MobilityModel::Highway] {
        let b = series(&res, model, Brd);
        assert!(
            b[b.len() - 1].delivery_ratio.mean >= b[0].delivery_ratio.mean,
            "{model}"
        );
        for d in series(&res, model, Dyn) {
            assert!(
                d.delivery_ratio.mean.is_nan() || d.delivery_ratio.mean >= 0.95,
                "{model} at {}",
                d.x
            );
        }
    }
}

#[test]
fn e6_single_manager_matches_brd() {
    let mut cfg = ExperimentConfig::preset(Experiment::E6);
    cfg.sweep = vec![1.0];
    let res = run_experiment(&cfg, true).unwrap();
    let mut pairs = std::collections::BTreeMap::new();
    for r in res.runs.iter().filter(|r| !r.metrics.moot) {
        pairs.entry(r.rep).or_insert_with(Vec::new).push(r.metrics.rsu_messages);
    }
    assert!(!pairs.is_empty());
    for (rep, v) in pairs {
        assert_eq!(v.len(), 2);
        assert_eq!(v[0], v[1], "replication {rep}");
    }
}

#[test]
fn honest_suite_raises_no_security_events() {
    for e in [
        Experiment::E2,
        Experiment::E3,
        Experiment::E4,
        Experiment::E5,
        Experiment::E6,
    ] {
        for mode in [CryptoMode::Mock, CryptoMode::Real] {
            let mut cfg = ExperimentConfig::preset(e);
            cfg.crypto = mode;
            if mode == CryptoMode::Real {
                cfg.replications = 2;
            }
            let res = run_experiment(&cfg, true).unwrap();
            let events: usize = res.runs.iter().map(|r| r.security_events).sum();
            assert_eq!(events, 0, "{e} {mode}");
        }
    }
}
