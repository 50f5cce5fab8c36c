//! End-to-end protocol checks on small configurations.

use replica_sync::diffusion::{make_vp_schedule, AnalyticBackend};
use replica_sync::dit::{DitConfig, DitModel};
use replica_sync::output::Table;
use replica_sync::protocols::*;

#[test]
fn protocol2_zero_coupling_equals_independent_runs() {
    let sched = make_vp_schedule(20, 1e-3, 0.3).unwrap();
    let model = DitModel::random(DitConfig { rng_seed: 9, ..DitConfig::default() }.with_layers(2)).unwrap();
    let cfg = ProtocolIIConfig {
        g: 0.0,
        tau: 10,
        seeds: 16,
        modes: 8,
        lead: Band::new(1, 2),
        trail: Band::new(7, 8),
        ..Default::default()
    };
    let joint = run_protocol2(&model, &sched, &cfg).unwrap();
    let split = run_protocol2_independent(&model, &sched, &cfg).unwrap();
    for (a, b) in joint.layers.iter().zip(&split.layers) {
        let (ea, eb) = (a.energies.as_ref().unwrap(), b.energies.as_ref().unwrap());
        for (x, y) in ea.energies.iter().flatten().zip(eb.energies.iter().flatten()) {
            assert!((x - y).abs() <= 1e-10, "{x} vs {y}");
        }
        assert!(ea.gint.unwrap() > 0.0);
    }
    // coupling changes the trajectory, so the reference no longer applies
    let coupled = run_protocol2(&model, &sched, &ProtocolIIConfig { g: 0.8, ..cfg }).unwrap();
    assert_ne!(coupled.layers[1].energies, joint.layers[1].energies);
}

#[test]
fn protocol1_csv_round_trips_and_baseline_is_matched() {
    let sched = make_vp_schedule(40, 1e-3, 0.2).unwrap();
    let mix = ImagePrior::default().mixture().unwrap();
    let be = AnalyticBackend::new(&mix, &sched).unwrap();
    let phi = FeatureMap::new(&mix, ImageShape::square(8), 2).unwrap();
    let cfg = ProtocolIConfig { g: 0.5, seeds: 24, t_int_step: 5, bootstrap: 100, rng_seed: 21, ..Default::default() };
    let run = run_protocol1(&be, &sched, &phi, &cfg).unwrap();

    let mut buf = Vec::new();
    protocol1_table(std::slice::from_ref(&run)).unwrap().write(&mut buf).unwrap();
    let table = Table::read(buf.as_slice(), &PROTOCOL1_HEADER).unwrap();
    let a: Vec<Option<f64>> = table.column("a_feat").unwrap();
    assert_eq!(a, run.records.iter().map(|r| r.a_feat).collect::<Vec<_>>());

    // at t_int = 0 the pair is never coupled, like the baseline
    let test = run.baseline_test.expect("t_int = 0 is on the grid");
    assert!(test.p_value > 0.05, "{test:?}");
    // full coupling history ends far more aligned than no coupling
    assert!(run.a_feat.last().unwrap().unwrap() > run.a_feat[0].unwrap() + 0.3);
}
