use rand::Rng;

use super::*;
use crate::eviction::FixedActionAgent;
use crate::seed::rng_from_seed;
use crate::trace::{generate_synthetic, Packet, SyntheticSpec};

fn flow(k: u64) -> FlowId {
    FlowId::from_key(k)
}

fn trace(packets: &[(f64, u64)]) -> Trace {
    Trace::from_packets(packets.iter().map(|&(t, k)| Packet { timestamp: t, flow: flow(k) }).collect()).unwrap()
}

fn cache_config(capacity: usize, policy: Policy) -> SimConfig {
    SimConfig {
        capacity,
        rti_s: 0.0,
        idle_timeout_s: f64::INFINITY,
        policy,
        ..SimConfig::default()
    }
}

fn run(trace: &Trace, config: &SimConfig) -> SimOutcome {
    run_simulation(trace, config, None).unwrap()
}

/// Minimum misses over every possible victim choice, for a demand cache
/// that always installs the missing flow.
fn brute_force_min_misses(flows: &[u64], capacity: usize) -> u64 {
    fn go(rest: &[u64], cache: &mut Vec<u64>, capacity: usize) -> u64 {
        let Some((&f, tail)) = rest.split_first() else {
            return 0;
        };
        if cache.contains(&f) {
            return go(tail, cache, capacity);
        }
        if cache.len() < capacity {
            cache.push(f);
            let r = 1 + go(tail, cache, capacity);
            cache.pop();
            return r;
        }
        let mut best = u64::MAX;
        for i in 0..cache.len() {
            let old = std::mem::replace(&mut cache[i], f);
            best = best.min(1 + go(tail, cache, capacity));
            cache[i] = old;
        }
        best
    }
    go(flows, &mut Vec::new(), capacity)
}

// A=1, B=2, C=3; packets A A B C B A at t = 1..6.
const HAND_TRACE: [(f64, u64); 6] = [(1.0, 1), (2.0, 1), (3.0, 2), (4.0, 3), (5.0, 2), (6.0, 1)];

#[test]
fn hand_trace_outcomes_per_policy() {
    let t = trace(&HAND_TRACE);
    let expect = |policy, pattern: [bool; 6]| {
        let out = run(&t, &cache_config(2, policy));
        assert_eq!(out.outcomes, pattern, "{policy}");
        out.stats.misses
    };
    // LRU evicts A when C arrives, keeping B for its reuse.
    let lru = expect(Policy::Lru, [false, true, false, false, true, false]);
    // LFU keeps the once-hit A, evicting B for C and then C for B.
    let lfu = expect(Policy::Lfu, [false, true, false, false, false, true]);
    let opt = expect(Policy::Optimal, [false, true, false, false, true, false]);
    let flows: Vec<u64> = HAND_TRACE.iter().map(|p| p.1).collect();
    let best = brute_force_min_misses(&flows, 2);
    assert_eq!(best, 4);
    assert_eq!(opt, best);
    assert!(opt <= lru && opt <= lfu);
}

#[test]
fn empty_trace_is_all_zero() {
    let out = run(&Trace::empty(), &SimConfig::default());
    assert_eq!((out.stats.hits, out.stats.misses), (0, 0));
    assert!(out.events.is_empty());
}

#[test]
fn miss_then_hit_after_rti() {
    let t = trace(&[(0.0, 7), (0.5, 7)]);
    let out = run(&t, &SimConfig::default());
    assert_eq!(out.outcomes, vec![false, true]);
}

#[test]
fn packets_during_rti_miss_without_new_packet_in() {
    // RTI 10 ms at 1 ms ticks: install completes at tick 1010.
    let t = trace(&[(1.0, 7), (1.005, 7), (1.02, 7)]);
    let out = run(&t, &SimConfig::default());
    assert_eq!(out.outcomes, vec![false, false, true]);
    let kinds: Vec<(u64, SimEventKind)> = out.events.iter().map(|e| (e.tick, e.kind)).collect();
    assert_eq!(kinds, vec![(1000, SimEventKind::PacketIn), (1010, SimEventKind::Install)]);
}

#[test]
fn same_tick_installs_follow_key_order() {
    let config = SimConfig {
        capacity: 2,
        ..SimConfig::default()
    };
    // X (key 9) fills one slot; B (5) and A (4) arrive together and complete together.
    let t = trace(&[(0.0, 9), (1.0, 5), (1.0, 4)]);
    let out = run(&t, &config);
    let tail: Vec<SimEvent> = out.events.iter().copied().filter(|e| e.tick == 1010).collect();
    assert_eq!(
        tail,
        vec![
            SimEvent::new(1010, flow(4), SimEventKind::Install),
            SimEvent::evict(1010, flow(9), EvictCause::Install),
            SimEvent::new(1010, flow(5), SimEventKind::Install),
        ]
    );
}

#[test]
fn expiry_precedes_same_tick_arrival() {
    let config = SimConfig {
        idle_timeout_s: 1.0,
        ..SimConfig::default()
    };
    // Installed at tick 10, so the idle deadline is tick 1010.
    let just_before = run(&trace(&[(0.0, 3), (1.009, 3)]), &config);
    assert_eq!(just_before.outcomes, vec![false, true]);
    let same_tick = run(&trace(&[(0.0, 3), (1.01, 3)]), &config);
    assert_eq!(same_tick.outcomes, vec![false, false]);
    assert!(same_tick
        .events
        .contains(&SimEvent::new(1010, flow(3), SimEventKind::Expire)));
}

#[test]
fn periodic_traffic_never_expires() {
    let config = SimConfig {
        idle_timeout_s: 30.0,
        ..SimConfig::default()
    };
    let packets: Vec<(f64, u64)> = (0..200).map(|i| (i as f64, 1)).collect();
    let out = run(&trace(&packets), &config);
    assert_eq!(out.stats.misses, 1);
    assert!(!out.events.iter().any(|e| e.kind == SimEventKind::Expire));
}

#[test]
fn single_slot_always_replaces() {
    for policy in [Policy::Lru, Policy::Lfu, Policy::Optimal] {
        let out = run(&trace(&[(0.0, 1), (1.0, 2)]), &cache_config(1, policy));
        assert!(out.events.contains(&SimEvent::evict(1000, flow(1), EvictCause::Install)));
    }
}

#[test]
fn config_validation() {
    let bad = |c: SimConfig| assert!(c.validate().is_err(), "{c:?}");
    bad(SimConfig { capacity: 0, ..SimConfig::default() });
    bad(SimConfig { eti_multiple: 0, ..SimConfig::default() });
    bad(SimConfig { tick_s: Some(0.02), ..SimConfig::default() });
    bad(SimConfig { rti_s: -1.0, ..SimConfig::default() });
    bad(SimConfig {
        rti_s: 0.0,
        policy: Policy::DqnLru,
        ..SimConfig::default()
    });
    let plan = SimConfig::default().validate().unwrap();
    assert_eq!((plan.rti_ticks, plan.idle_ticks, plan.eti_ticks), (10, Some(30_000), 1000));
}

#[test]
fn agent_presence_must_match_policy() {
    let t = trace(&[(0.0, 1)]);
    let dqn = SimConfig {
        policy: Policy::DqnLru,
        ..SimConfig::default()
    };
    assert!(matches!(run_simulation(&t, &dqn, None), Err(SimError::MissingAgent(_))));
    let mut agent = FixedActionAgent::new(0).unwrap();
    assert!(matches!(
        run_simulation(&t, &SimConfig::default(), Some(&mut agent)),
        Err(SimError::UnexpectedAgent(_))
    ));
}

#[test]
fn policy_names_round_trip() {
    for p in Policy::ALL {
        assert_eq!(p.name().parse::<Policy>().unwrap(), p);
    }
    assert_eq!("dqn-lru".parse::<Policy>().unwrap(), Policy::DqnLru);
    assert!("FIFO".parse::<Policy>().is_err());
}

fn random_trace(seed: u64, n_flows: u64, n_packets: usize) -> Trace {
    let mut rng = rng_from_seed(seed);
    let packets = (0..n_packets)
        .map(|i| Packet {
            timestamp: i as f64 * 0.5,
            flow: flow(rng.random_range(0..n_flows)),
        })
        .collect();
    Trace::from_packets(packets).unwrap()
}

#[test]
fn optimal_never_loses_on_random_traces() {
    for seed in 0..120 {
        let t = random_trace(seed, 9, 120);
        let cap = 2 + (seed % 4) as usize;
        let opt = run(&t, &cache_config(cap, Policy::Optimal)).stats.misses;
        let lru = run(&t, &cache_config(cap, Policy::Lru)).stats.misses;
        let lfu = run(&t, &cache_config(cap, Policy::Lfu)).stats.misses;
        assert!(opt <= lru && opt <= lfu, "seed {seed}: opt {opt} lru {lru} lfu {lfu}");
    }
}

#[test]
fn optimal_matches_exhaustive_minimum_on_tiny_traces() {
    for seed in 0..40 {
        let t = random_trace(1_000 + seed, 5, 12);
        let flows: Vec<u64> = t.packets().iter().map(|p| p.flow.key()).collect();
        let opt = run(&t, &cache_config(2, Policy::Optimal)).stats.misses;
        assert_eq!(opt, brute_force_min_misses(&flows, 2), "seed {seed}");
    }
}

#[test]
fn lru_misses_fall_with_capacity() {
    for seed in [3, 5, 8] {
        let t = generate_synthetic(&SyntheticSpec {
            n_flows: 60,
            n_packets: 3_000,
            duration_s: 300.0,
            locality: 0.7,
            zipf_s: 1.0,
            seed,
        })
        .unwrap();
        let misses: Vec<u64> = (1..=24)
            .map(|c| run(&t, &cache_config(c, Policy::Lru)).stats.misses)
            .collect();
        assert!(misses.windows(2).all(|w| w[1] <= w[0]), "seed {seed}: {misses:?}");
    }
}

fn synthetic(seed: u64) -> Trace {
    generate_synthetic(&SyntheticSpec {
        n_flows: 120,
        n_packets: 6_000,
        duration_s: 120.0,
        locality: 0.8,
        zipf_s: 1.1,
        seed,
    })
    .unwrap()
}

#[test]
fn accounting_and_capacity_hold_for_every_policy() {
    let t = synthetic(11);
    for policy in Policy::ALL {
        let config = SimConfig {
            capacity: 16,
            eti_multiple: 5,
            policy,
            ..SimConfig::default()
        };
        let mut agent = FixedActionAgent::new(20).unwrap();
        let agent_ref: Option<&mut dyn crate::eviction::EvictionAgent> =
            if policy.uses_agent() { Some(&mut agent) } else { None };
        let out = run_simulation(&t, &config, agent_ref).unwrap();
        assert_eq!(out.stats.packets(), t.len() as u64, "{policy}");
        assert_eq!(out.outcomes.len(), t.len());
        assert!(out.stats.max_occupancy <= 16);
        let interval_sum: u64 = out.stats.intervals.iter().map(|b| b.packets()).sum();
        assert_eq!(interval_sum, t.len() as u64);
    }
}

#[test]
fn agent_runs_evict_at_most_one_absent_rule_per_boundary() {
    let t = synthetic(12);
    let config = SimConfig {
        capacity: 16,
        eti_multiple: 5,
        policy: Policy::DqnLru,
        ..SimConfig::default()
    };
    let mut agent = FixedActionAgent::new(30).unwrap();
    let out = run_simulation(&t, &config, Some(&mut agent)).unwrap();
    assert!(!out.decisions.is_empty());
    let mut per_tick = std::collections::BTreeMap::<u64, usize>::new();
    for e in out.events.iter().filter(|e| e.kind == SimEventKind::Evict(EvictCause::Eti)) {
        *per_tick.entry(e.tick).or_default() += 1;
    }
    assert!(per_tick.values().all(|&n| n == 1));
    for d in &out.decisions {
        assert_eq!(d.evicted.is_some(), d.absent_count > 0);
        assert_eq!(d.action, 30);
    }
    // Every decision except possibly the last gets a reward and feeds one transition.
    let rewarded = out.decisions.iter().filter(|d| d.reward.is_some()).count();
    assert!(rewarded + 1 >= out.decisions.len());
    assert!(agent.observed.len() <= rewarded);
    assert!(agent.observed.iter().all(|tr| (-1..=1).contains(&tr.reward)));
}

#[test]
fn action_zero_reproduces_baseline_event_log() {
    let t = synthetic(13);
    for (agent_policy, base) in [(Policy::DqnLru, Policy::Lru), (Policy::DqnLfu, Policy::Lfu)] {
        let base_cfg = SimConfig {
            capacity: 16,
            eti_multiple: 5,
            policy: base,
            ..SimConfig::default()
        };
        let agent_cfg = SimConfig {
            policy: agent_policy,
            ..base_cfg.clone()
        };
        let baseline = run(&t, &base_cfg);
        let mut agent = FixedActionAgent::new(0).unwrap();
        let steered = run_simulation(&t, &agent_cfg, Some(&mut agent)).unwrap();
        assert_eq!(baseline.events, steered.events);
        assert_eq!(baseline.outcomes, steered.outcomes);
        assert!(steered.decisions.iter().all(|d| d.evicted.is_none()));
    }
}

#[test]
fn runs_are_deterministic() {
    let t = synthetic(14);
    let config = SimConfig {
        capacity: 16,
        eti_multiple: 5,
        policy: Policy::DqnLfu,
        ..SimConfig::default()
    };
    let once = || {
        let mut agent = crate::dqn::DqnAgent::new(
            crate::eviction::state_dim(16, 0.01).unwrap(),
            crate::dqn::AgentConfig {
                hidden_layers: vec![16, 16],
                warmup: 16,
                batch_size: 8,
                ..Default::default()
            },
        )
        .unwrap();
        run_simulation(&t, &config, Some(&mut agent)).unwrap()
    };
    let (a, b) = (once(), once());
    assert_eq!(a.stats, b.stats);
    assert_eq!(a.events, b.events);
    assert_eq!(a.decisions, b.decisions);
    assert!(a.decisions.iter().any(|d| d.loss.is_some()), "training should have started");
}
