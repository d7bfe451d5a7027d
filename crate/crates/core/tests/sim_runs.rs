use hetnetsim::des::{SimDuration, SimTime};
use hetnetsim::metrics::Band;
use hetnetsim::scenario::{builtin, BuiltinScenario, ScenarioConfig, SubnetPhy};
use hetnetsim::sim::{self, retained_samples, RunOutput, SimError, Simulation};
use hetnetsim::topology::{Hop, NodeId};
use hetnetsim::voip::{CallState, Direction, SETUP_TIMEOUT};

fn cfg(which: BuiltinScenario, seed: u64, duration_s: f64) -> ScenarioConfig {
    let mut c = builtin(which);
    c.seed = seed;
    c.duration_s = duration_s;
    c
}

fn zero_backoff(c: &mut ScenarioConfig) {
    for s in &mut c.subnets {
        if let SubnetPhy::Wifi(p) = &mut s.phy {
            p.cw_min = 0;
        }
    }
}

fn scripted(c: ScenarioConfig, calls: &[(usize, usize, usize, usize, u64, u64)]) -> RunOutput {
    let mut sim = Simulation::new(c)
        .unwrap()
        .without_call_generator()
        .retaining_samples();
    for &(sa, ka, sb, kb, at_ms, hold_s) in calls {
        let a = sim.topology().subnets()[sa].stations[ka];
        let b = sim.topology().subnets()[sb].stations[kb];
        sim.schedule_call(
            SimTime::from_millis(at_ms),
            a,
            b,
            SimDuration::from_secs(hold_s),
        )
        .unwrap();
    }
    sim.run().unwrap()
}

#[test]
fn zero_duration_is_vacuous() {
    let out = sim::run(cfg(BuiltinScenario::WifiWifi, 1, 0.0)).unwrap();
    assert!(out.series.is_empty());
    assert_eq!(out.summary.calls.attempted, 0);
    assert_eq!(out.summary.calls.placed, 0);
    assert!(out.sessions.is_empty());
}

#[test]
fn wimax_delay_buckets_all_good() {
    let out = sim::run(cfg(BuiltinScenario::WimaxWimax, 1, 600.0)).unwrap();
    assert!(!out.series.is_empty());
    assert!(out
        .series
        .buckets
        .iter()
        .all(|b| b.delay_band == Band::Good));
}

#[test]
fn heterogeneous_calls_cross_mac_kind() {
    let out = sim::run(cfg(BuiltinScenario::WifiWimax, 3, 1800.0)).unwrap();
    let run_cfg = builtin(BuiltinScenario::WifiWimax);
    let topo = hetnetsim::topology::Topology::new(&run_cfg.subnets);
    assert!(!out.sessions.is_empty());
    for s in &out.sessions {
        assert_ne!(
            topo.mac_kind(s.caller).unwrap(),
            topo.mac_kind(s.callee).unwrap()
        );
    }
}

#[test]
fn one_call_per_station_by_default() {
    let out = sim::run(cfg(BuiltinScenario::WifiWifi, 2, 1800.0)).unwrap();
    // Sweep the timeline of every session and count overlaps per station.
    let mut edges: Vec<(SimTime, i32, NodeId)> = Vec::new();
    for s in &out.sessions {
        let end = s.ended_at.unwrap_or(SimTime::from_secs(100_000));
        for n in [s.caller, s.callee] {
            edges.push((s.invite_sent_at, 1, n));
            edges.push((end, -1, n));
        }
    }
    edges.sort_by_key(|&(t, d, _)| (t, d));
    let mut load = std::collections::HashMap::new();
    for (_, d, n) in edges {
        let v = load.entry(n).or_insert(0);
        *v += d;
        assert!(*v <= 1, "station {n} holds two calls");
    }
    let c = out.summary.calls;
    assert!(c.blocked + c.placed == c.attempted);
}

#[test]
fn setup_over_idle_zero_latency_wifi_is_three_mac_hops_each_way() {
    let mut c = cfg(BuiltinScenario::WifiWifi, 1, 20.0);
    zero_backoff(&mut c);
    c.cloud.base_latency_ms = 0.0;
    let out = scripted(c, &[(0, 0, 1, 0, 1_000, 5)]);
    // Each message crosses two idle WiFi hops: DIFS 50 + airtime 363 +
    // SIFS 10 + ACK 203 = 626 us each.
    assert_eq!(
        out.sessions[0].setup_delay,
        Some(SimDuration::from_micros(3 * 2 * 626))
    );
}

#[test]
fn setup_inside_idle_wimax_cell_within_three_frames() {
    let out = scripted(
        cfg(BuiltinScenario::WimaxWimax, 1, 20.0),
        &[(0, 0, 0, 1, 1_000, 5)],
    );
    let d = out.sessions[0].setup_delay.expect("call connected");
    // One frame per message plus a serialization margin.
    assert!(
        d < SimDuration::from_micros(3 * 5_000 + 200),
        "setup took {d}"
    );
}

#[test]
fn unreachable_callee_times_out_after_32_s() {
    let c = cfg(BuiltinScenario::WifiWifi, 1, 60.0);
    let mut sim = Simulation::new(c).unwrap().without_call_generator();
    let a = sim.topology().subnets()[0].stations[0];
    let b = sim.topology().subnets()[1].stations[1];
    sim.fail_node(b);
    sim.schedule_call(SimTime::from_secs(2), a, b, SimDuration::from_secs(30))
        .unwrap();
    let out = sim.run().unwrap();
    let s = &out.sessions[0];
    assert_eq!(s.state(), CallState::Abandoned);
    assert_eq!(s.ended_at, Some(SimTime::from_secs(2) + SETUP_TIMEOUT));
    assert_eq!(out.summary.calls.abandoned, 1);
    assert_eq!(out.summary.voice_packets.sent, 0);
}

#[test]
fn three_minute_call_sends_9000_packets_each_way() {
    let out = scripted(
        cfg(BuiltinScenario::WimaxWimax, 1, 400.0),
        &[(0, 0, 1, 0, 1_000, 180)],
    );
    let s = &out.sessions[0];
    for d in Direction::BOTH {
        let log = s.log(d);
        assert_eq!(log.sent, 9_000);
        assert_eq!(log.received, 9_000);
        let gaps: Vec<u64> = log
            .samples
            .windows(2)
            .map(|w| (w[1].send_ts - w[0].send_ts).as_micros())
            .collect();
        assert!(gaps.iter().all(|&g| g == 20_000));
    }
}

#[test]
fn concurrent_calls_on_one_station_stay_independent() {
    let mut c = cfg(BuiltinScenario::WimaxWimax, 1, 30.0);
    c.call_profile.max_calls_per_station = 2;
    let out = scripted(c, &[(0, 0, 1, 0, 1_000, 5), (0, 0, 1, 1, 1_003, 5)]);
    assert_eq!(out.sessions.len(), 2);
    for s in &out.sessions {
        for d in Direction::BOTH {
            let log = s.log(d);
            assert_eq!(log.sent, 250);
            assert!(log.samples.iter().all(|x| x.call == s.id));
            let seqs: Vec<u32> = log.samples.iter().map(|x| x.seq).collect();
            assert_eq!(seqs, (0..250).collect::<Vec<_>>());
        }
    }
}

#[test]
fn default_backoff_adds_whole_slots_only() {
    // With the default contention window the only variable part of an idle
    // WiFi hop is the backoff, a whole number of 20 us slots in [0, 31].
    let out = scripted(
        cfg(BuiltinScenario::WifiWifi, 9, 30.0),
        &[(0, 1, 1, 2, 1_000, 10)],
    );
    let samples = retained_samples(&out);
    assert!(!samples.is_empty());
    for s in samples {
        let fixed = 1_000 + 2 * 626 + 10_000 + 1_000;
        let residual = s.e2e.as_micros() - fixed;
        assert_eq!(residual % 20, 0, "residual {residual}");
        assert!(residual <= 2 * 31 * 20);
        assert_eq!(s.breakdown.cloud, SimDuration::from_millis(10));
    }
}

#[test]
fn delay_never_below_codec_plus_serialization() {
    let out = sim::Simulation::new(cfg(BuiltinScenario::WifiWimax, 4, 900.0))
        .unwrap()
        .retaining_samples()
        .run()
        .unwrap();
    let floor = SimDuration::from_micros(1_000 + 363 + 10_000 + 23 + 1_000);
    let samples = retained_samples(&out);
    assert!(!samples.is_empty());
    for s in samples {
        assert!(s.arrival_ts >= s.send_ts);
        assert!(s.e2e >= floor, "{:?}", s);
        assert_eq!(
            s.e2e,
            SimDuration::from_millis(2) + s.breakdown.network_total()
        );
    }
}

#[test]
fn conservation_holds_under_overload() {
    let mut c = cfg(BuiltinScenario::WifiWifi, 5, 600.0);
    c.call_profile.max_calls_per_station = 8;
    let out = sim::run(c).unwrap();
    let p = out.summary.voice_packets;
    assert!(p.lost() > 0, "overload should lose packets");
    assert_eq!(p.sent, p.received + p.lost());
    for s in &out.sessions {
        for d in Direction::BOTH {
            let log = s.log(d);
            assert_eq!(log.sent, log.received + log.lost(), "{}", s.id);
        }
    }
}

#[test]
fn same_seed_same_trace_different_seed_differs() {
    let a = sim::run(cfg(BuiltinScenario::WifiWifi, 8, 600.0)).unwrap();
    let b = sim::run(cfg(BuiltinScenario::WifiWifi, 8, 600.0)).unwrap();
    let c = sim::run(cfg(BuiltinScenario::WifiWifi, 9, 600.0)).unwrap();
    assert_eq!(a.kernel, b.kernel);
    assert_eq!(a.series, b.series);
    assert_ne!(a.kernel.trace_digest, c.kernel.trace_digest);
}

#[test]
fn oversubscribed_wimax_rejected_by_validation() {
    let mut c = cfg(BuiltinScenario::WimaxWimax, 1, 60.0);
    c.call_profile.max_calls_per_station = 30;
    match Simulation::new(c) {
        Err(SimError::Config(e)) => {
            assert_eq!(e.field(), Some("call_profile.max_calls_per_station"))
        }
        other => panic!("expected validation error, got {:?}", other.map(|_| ())),
    }
}

#[test]
fn scripted_call_endpoints_must_be_stations() {
    let c = cfg(BuiltinScenario::WifiWifi, 1, 60.0);
    let mut sim = Simulation::new(c).unwrap();
    let bs = sim.topology().subnets()[0].base_station;
    let st = sim.topology().subnets()[1].stations[0];
    assert!(matches!(
        sim.schedule_call(SimTime::ZERO, bs, st, SimDuration::from_secs(1)),
        Err(SimError::NotAStation(n)) if n == bs
    ));
}

#[test]
fn routes_match_forwarding_breakdown() {
    // Intra-subnet calls never touch the cloud; inter-subnet calls always do.
    let out = scripted(
        cfg(BuiltinScenario::WifiWifi, 1, 30.0),
        &[(0, 0, 0, 1, 1_000, 5), (1, 0, 0, 2, 1_000, 5)],
    );
    let topo = hetnetsim::topology::Topology::new(&builtin(BuiltinScenario::WifiWifi).subnets);
    for s in &out.sessions {
        let crosses = topo
            .route(s.caller, s.callee)
            .unwrap()
            .contains(&Hop::Cloud);
        for x in &s.log(Direction::CallerToCallee).samples {
            assert_eq!(x.breakdown.cloud.is_zero(), !crosses);
            assert!(!x.breakdown.source_mac.is_zero() && !x.breakdown.destination_mac.is_zero());
        }
    }
}
