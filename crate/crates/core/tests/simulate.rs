use metastable::analysis::{Landscape, Setup, SetupChoice};
use metastable::landscape::depth_partition;
use metastable::simulate::{
    build_exit_windows, exit_experiment, low_boundary_exit_experiment, replica_rng, run_until_hit,
    saddle_crossing_experiment, trace_projection_experiment, CrossingOptions, DomainSpec, ExperimentReport,
    LowBoundaryOptions, RunOptions, SimTables, TraceOptions, WindowOptions,
};
use proptest::prelude::*;

fn setup(name: &str, n: u32) -> (Landscape, Setup) {
    let l = Landscape::builtin(name).unwrap();
    let s = l.setup(n, &SetupChoice::default()).unwrap();
    (l, s)
}

fn bottom(s: &Setup, well: usize) -> usize {
    *s.sets.sets[well].iter().min_by(|&&a, &&b| s.chain.f(a).total_cmp(&s.chain.f(b))).unwrap()
}

fn run(replicas: u64, seed: u64) -> RunOptions {
    RunOptions { replicas, seed, ..Default::default() }
}

fn check_report(r: &ExperimentReport) {
    let total: u64 = r.outcomes.iter().map(|o| o.count).sum::<u64>() + r.timeouts;
    assert_eq!(total, r.replicas);
    for o in &r.outcomes {
        for [lo, hi] in [o.wilson95, o.wilson99] {
            assert!(0.0 <= lo && lo <= o.frequency && o.frequency <= hi && hi <= 1.0);
        }
    }
}

#[test]
fn single_window_in_one_dimension() {
    let (l, s) = setup("shallow_double_well", 30);
    let w = build_exit_windows(&l.model, &s.chain, &s.decomp, s.component, 0, &WindowOptions::default()).unwrap();
    let r = exit_experiment(&s.chain, &w, Some(&s.graph().unwrap()), &[bottom(&s, 0)], &run(200, 1)).unwrap();
    check_report(&r);
    assert_eq!(r.outcome("window_0").unwrap().count, 200);
    assert_eq!(r.outcome("window_0").unwrap().predicted, Some(1.0));
}

#[test]
fn reports_repeat_for_a_fixed_seed() {
    let (l, s) = setup("walled_four_well", 20);
    let w = build_exit_windows(&l.model, &s.chain, &s.decomp, s.component, 0, &WindowOptions { delta: Some(0.3), radius: None })
        .unwrap();
    let x0 = bottom(&s, 0);
    let opts = RunOptions { keep_records: true, ..run(300, 9) };
    let a = exit_experiment(&s.chain, &w, None, &[x0], &opts).unwrap();
    let b = exit_experiment(&s.chain, &w, None, &[x0], &opts).unwrap();
    assert_eq!(a.records, b.records);
    assert_eq!(a.outcomes, b.outcomes);
    assert!(a.records_csv().lines().count() == 301);
    check_report(&a);
}

#[test]
fn symmetric_saddle_crossing_from_the_saddle() {
    let (_, s) = setup("four_well", 60);
    let z = &s.decomp.components[s.component].gluings[0].saddle;
    let opts = CrossingOptions { start_at_saddle: true, ..Default::default() };
    let r = saddle_crossing_experiment(&s.chain, z, &opts, &run(4000, 2)).unwrap();
    check_report(&r);
    let plus = r.outcome("plus").unwrap();
    let minus = r.outcome("minus").unwrap();
    let side = r.outcome("side").unwrap().frequency;
    for o in [plus, minus] {
        let [lo, hi] = o.wilson99;
        assert!(lo <= 0.5 * (1.0 - side) && 0.5 * (1.0 - side) <= hi, "{o:?}");
    }
}

#[test]
fn no_side_exits_in_one_dimension() {
    let (_, s) = setup("double_well", 60);
    let z = &s.decomp.components[s.component].gluings[0].saddle;
    let r = saddle_crossing_experiment(&s.chain, z, &CrossingOptions::default(), &run(500, 4)).unwrap();
    assert_eq!(r.outcome("side").unwrap().count, 0);
}

#[test]
fn trace_rates_on_the_shallow_double_well() {
    let (_, s) = setup("shallow_double_well", 30);
    let g = s.graph().unwrap();
    let part = depth_partition(&s.decomp.components[s.component], 1e-6);
    let opts = TraceOptions { m: 0, start_well: 0, horizon: 1.0, min_transitions: 20 };
    let r = trace_projection_experiment(&s.chain, &g, &s.sets, &part, &opts, &run(200, 5)).unwrap();
    check_report(&r);
    let ratio = r.statistics["rate_ratio_0_1"];
    assert!((0.7..=1.4).contains(&ratio), "{ratio}");
    assert!(r.statistics["occupation_outside"] <= 0.1);
}

#[test]
fn deep_well_does_not_feed_the_shallow_one() {
    let (_, s) = setup("shallow_tilted_double_well", 40);
    let comp = &s.decomp.components[s.component];
    let g = s.graph().unwrap();
    let part = depth_partition(comp, 1e-6);
    assert_eq!(part.scales(), 2);
    let deep = part.classes[1][0];
    let shallow = part.classes[0][0];
    let opts = TraceOptions { m: 0, start_well: deep, horizon: 0.1, min_transitions: 0 };
    let r = trace_projection_experiment(&s.chain, &g, &s.sets, &part, &opts, &run(100, 6)).unwrap();
    assert_eq!(r.statistics[&format!("transitions_{deep}_{shallow}")], 0.0);
    assert_eq!(r.timeouts, 0);
}

#[test]
fn low_boundary_exit_from_one_well() {
    let (_, s) = setup("shallow_double_well", 60);
    let opts = LowBoundaryOptions {
        domain: DomainSpec::Box { lo: vec![-1.42], hi: vec![-0.6] },
        epsilon: Some(0.02),
        start: Some(vec![-1.0]),
    };
    let r = low_boundary_exit_experiment(&s.chain, &opts, &run(400, 7)).unwrap();
    check_report(&r);
    assert!(r.outcome("low").unwrap().frequency >= 0.95);
}

#[test]
fn flat_potential_exits_through_low_boundary() {
    let m = metastable::potential::parse_potential(
        "flat",
        "0*x1*x2",
        metastable::potential::BoxDomain { lo: vec![-1.0, -1.0], hi: vec![1.0, 1.0] },
    )
    .unwrap();
    let c = metastable::lattice::LatticeChain::build(&m, 10, &Default::default()).unwrap();
    let opts =
        LowBoundaryOptions { domain: DomainSpec::Box { lo: vec![-0.5, -0.5], hi: vec![0.5, 0.5] }, epsilon: Some(1e-3), start: None };
    let r = low_boundary_exit_experiment(&c, &opts, &run(200, 8)).unwrap();
    assert_eq!(r.outcome("low").unwrap().count, 200);
}

#[test]
fn wider_margin_cannot_lower_the_frequency() {
    let (_, s) = setup("shallow_double_well", 30);
    let domain = DomainSpec::Sublevel { height: 0.15, point: vec![-1.0] };
    let mut last = 0;
    for eps in [0.005, 0.02, 0.05] {
        let opts = LowBoundaryOptions { domain: domain.clone(), epsilon: Some(eps), start: None };
        let r = low_boundary_exit_experiment(&s.chain, &opts, &run(200, 10)).unwrap();
        let k = r.outcome("low").unwrap().count;
        assert!(k >= last);
        last = k;
    }
}

#[test]
fn empty_boundary_is_rejected() {
    let (_, s) = setup("shallow_double_well", 20);
    let opts = LowBoundaryOptions { domain: DomainSpec::Box { lo: vec![-2.0], hi: vec![2.0] }, epsilon: None, start: None };
    assert!(low_boundary_exit_experiment(&s.chain, &opts, &run(10, 0)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 16, ..ProptestConfig::default() })]

    #[test]
    fn exit_frequencies_are_normalized(seed in any::<u64>(), replicas in 100u64..300) {
        let (l, s) = setup("shallow_two_saddle", 16);
        let centre = (0..s.wells()).find(|&a| s.decomp.components[s.component].wells[a].deepest_location()[0].abs() < 0.5).unwrap();
        let w = build_exit_windows(&l.model, &s.chain, &s.decomp, s.component, centre, &WindowOptions { delta: Some(0.3), radius: None }).unwrap();
        let r = exit_experiment(&s.chain, &w, Some(&s.graph().unwrap()), &[bottom(&s, centre)], &RunOptions { max_jumps: 20_000, ..run(replicas, seed) }).unwrap();
        let total: f64 = r.outcomes.iter().map(|o| o.frequency).sum::<f64>() + r.timeouts as f64 / replicas as f64;
        prop_assert!((total - 1.0).abs() < 1e-12);
        let pred: f64 = r.outcomes.iter().filter_map(|o| o.predicted).sum();
        prop_assert!((pred - 1.0).abs() < 1e-12);
    }

    #[test]
    fn streams_are_replayable(seed in any::<u64>(), replica in any::<u64>()) {
        let (_, s) = setup("four_well", 8);
        let t = SimTables::new(&s.chain);
        let mut stop = vec![0u8; s.chain.num_sites()];
        stop[bottom(&s, 1)] = 1;
        stop[bottom(&s, 2)] = 2;
        let x0 = bottom(&s, 0);
        let a = run_until_hit(&t, x0, &stop, &mut replica_rng(seed, replica), 50_000).unwrap();
        let b = run_until_hit(&t, x0, &stop, &mut replica_rng(seed, replica), 50_000).unwrap();
        prop_assert_eq!(a, b);
        prop_assert_eq!(a.time.to_bits(), b.time.to_bits());
    }
}
