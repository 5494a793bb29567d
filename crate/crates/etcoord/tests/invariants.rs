//! Cross-module properties of full simulation runs: flow-set containment,
//! hybrid-time bookkeeping, orientation and ordering invariance,
//! deterministic reproduction, and the exact deadline arithmetic of the
//! periodic scheme.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use etcoord::error::Error;
use etcoord::hybrid::{
    initial_state, simulate, Engine, HybridState, InitSpec, Setup, SimConfig, TriggerState,
};
use etcoord::runner::{
    events_csv, lyapunov_csv, metrics_csv_single, run_scenario, run_scenario_stream,
    trajectory_csv, write_run_artifacts,
};
use etcoord::scenario::Scenario;
use etcoord::triggering::{dwell_lower_bound, Scheme};

fn section7_setup(scheme: Scheme, b: f64) -> Setup {
    Scenario::section7(scheme, b, 1).setup().unwrap()
}

fn sim_config(horizon: f64) -> SimConfig {
    SimConfig {
        horizon,
        flow_step: 1e-3,
        event_tolerance: 1e-10,
        sample_every: 1e-2,
    }
}

#[test]
fn trigger_scalars_stay_in_their_intervals() {
    for (scheme, b) in [
        (Scheme::EventTriggered, 10.0),
        (Scheme::TimeTriggered, 10.0),
        (Scheme::SelfTriggered, 10.0),
    ] {
        let mut sc = Scenario::section7(scheme, b, 3);
        sc.sim.horizon = 3.0;
        let out = run_scenario_stream(&sc, 3, 0).unwrap();
        let setup = out.scenario.setup().unwrap();
        for s in &out.trajectory.samples {
            for (l, &val) in s.state.trigger.values.iter().enumerate() {
                let prm = &setup.params[l];
                match scheme {
                    Scheme::EventTriggered => {
                        assert!(
                            val >= prm.a - 1e-9 && val <= prm.b + 1e-9,
                            "clock {val} outside [{}, {}] at t={}",
                            prm.a,
                            prm.b,
                            s.t
                        );
                    }
                    Scheme::TimeTriggered => {
                        let period = etcoord::triggering::ttc_mate(prm, &setup.laws[l]).unwrap();
                        assert!(val >= 0.0 && val <= period + 1e-9);
                    }
                    Scheme::SelfTriggered => {
                        assert!(val >= 0.0);
                        assert!(val <= prm.max_interval() * (1.0 + 1e-12));
                    }
                }
            }
        }
    }
}

#[test]
fn sampled_variables_refresh_exactly_and_hold_between_events() {
    let mut sc = Scenario::section7(Scheme::EventTriggered, 10.0, 5);
    sc.sim.horizon = 4.0;
    let out = run_scenario_stream(&sc, 5, 0).unwrap();
    let setup = out.scenario.setup().unwrap();

    // post-jump samples carry the refreshed edge variable, bit-exactly equal
    // to the recomputation from the positions
    let mut refreshed = 0;
    for w in out.trajectory.samples.windows(2) {
        let (pre, post) = (&w[0], &w[1]);
        if post.k == pre.k + 1 {
            // positions and internal states are untouched by the jump
            assert_eq!(pre.state.p, post.state.p);
            assert_eq!(pre.state.v, post.state.v);
            let z = setup.incidence.relative_distances(&post.state.p, 1).unwrap();
            let event = &out.trajectory.events[post.k as usize - 1];
            let l = event.edge;
            assert_eq!(post.state.zhat[l], z[l], "refresh is not exact");
            refreshed += 1;
        }
    }
    assert!(refreshed > 10);

    // between two events of the same edge the sampled variable is constant:
    // zhat may only change at a jump
    for w in out.trajectory.samples.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if a.k == b.k {
            assert_eq!(a.state.zhat, b.state.zhat, "sampled variable drifted on a flow");
        }
    }
}

#[test]
fn orientation_flip_leaves_results_unchanged() {
    let mut base = Scenario::section7(Scheme::EventTriggered, 10.0, 9);
    base.sim.horizon = 6.0;

    let mut flipped = base.clone();
    flipped.topology.kind = "edges".into();
    flipped.topology.edges = Some(vec![[2, 1], [3, 2], [4, 3], [5, 4]]);

    let a = run_scenario_stream(&base, 9, 0).unwrap();
    let b = run_scenario_stream(&flipped, 9, 0).unwrap();

    assert_eq!(a.metrics.events_total, b.metrics.events_total);
    assert_eq!(a.metrics.events_per_edge, b.metrics.events_per_edge);
    for (ea, eb) in a.trajectory.events.iter().zip(&b.trajectory.events) {
        assert_eq!(ea.edge, eb.edge);
        assert!((ea.t - eb.t).abs() <= 1e-9);
        // the edge variable changes sign with the orientation
        assert!((ea.z[0] + eb.z[0]).abs() <= 1e-9);
    }
    for (sa, sb) in a.trajectory.samples.iter().zip(&b.trajectory.samples) {
        for (pa, pb) in sa.state.p.iter().zip(&sb.state.p) {
            assert!((pa - pb).abs() <= 1e-7);
        }
    }
    match (a.metrics.t5, b.metrics.t5) {
        (Some(ta), Some(tb)) => assert!((ta - tb).abs() <= 1e-6),
        (ta, tb) => assert_eq!(ta.is_some(), tb.is_some()),
    }
}

#[test]
fn edge_listing_order_does_not_change_metrics() {
    let mut base = Scenario::section7(Scheme::EventTriggered, 10.0, 13);
    base.sim.horizon = 6.0;

    let mut permuted = base.clone();
    permuted.topology.kind = "edges".into();
    permuted.topology.edges = Some(vec![[4, 5], [3, 4], [2, 3], [1, 2]]);

    let a = run_scenario_stream(&base, 13, 0).unwrap();
    let b = run_scenario_stream(&permuted, 13, 0).unwrap();
    assert_eq!(a.metrics.events_total, b.metrics.events_total);
    let mut per_edge_b = b.metrics.events_per_edge.clone();
    per_edge_b.reverse();
    assert_eq!(a.metrics.events_per_edge, per_edge_b);
    match (a.metrics.t5, b.metrics.t5) {
        (Some(ta), Some(tb)) => assert!((ta - tb).abs() <= 1e-6),
        (ta, tb) => assert_eq!(ta.is_some(), tb.is_some()),
    }
}

#[test]
fn periodic_deadline_event_counts_match_the_floor_formula() {
    let mut sc = Scenario::section7(Scheme::TimeTriggered, 10.0, 17);
    sc.sim.horizon = 7.0;
    let out = run_scenario_stream(&sc, 17, 0).unwrap();
    let setup = out.scenario.setup().unwrap();
    let periods = setup.periods().unwrap();
    let first = &out.trajectory.samples[0];
    for l in 0..setup.edge_count() {
        let tau0 = first.state.trigger.values[l];
        let offset = periods[l] - tau0;
        let expected = if offset > sc.sim.horizon {
            0
        } else {
            ((sc.sim.horizon - offset) / periods[l]).floor() as usize + 1
        };
        let got = out
            .trajectory
            .events
            .iter()
            .filter(|e| e.edge == l)
            .count();
        assert_eq!(got, expected, "edge {} event count", l + 1);
    }
}

#[test]
fn aperiodic_deadlines_stay_inside_the_window() {
    let mut sc = Scenario::section7(Scheme::TimeTriggered, 10.0, 23);
    sc.sim.horizon = 5.0;
    sc.trigger.epsilon_mode = "aperiodic".into();
    sc.trigger.epsilon_frac = 0.5;
    let out = run_scenario_stream(&sc, 23, 0).unwrap();
    let setup = out.scenario.setup().unwrap();
    let periods = setup.periods().unwrap();
    for l in 0..setup.edge_count() {
        let times: Vec<f64> = out
            .trajectory
            .events
            .iter()
            .filter(|e| e.edge == l)
            .map(|e| e.t)
            .collect();
        assert!(times.len() >= 2);
        for w in times.windows(2) {
            let gap = w[1] - w[0];
            assert!(
                gap >= 0.5 * periods[l] - 1e-9 && gap <= periods[l] + 1e-9,
                "edge {}: gap {gap} outside the deadline window",
                l + 1
            );
        }
    }
    // the in-run draws are part of the deterministic stream
    let again = run_scenario_stream(&sc, 23, 0).unwrap();
    assert_eq!(out.metrics.events_total, again.metrics.events_total);
    assert_eq!(out.metrics.t5, again.metrics.t5);
}

#[test]
fn dwell_time_against_realized_ball() {
    let mut sc = Scenario::section7(Scheme::EventTriggered, 10.0, 21);
    sc.sim.horizon = 8.0;
    let out = run_scenario_stream(&sc, 21, 0).unwrap();
    let setup = out.scenario.setup().unwrap();
    for l in 0..setup.edge_count() {
        // realized radius of the edge variable over the run
        let mut radius = 0.0f64;
        for s in &out.trajectory.samples {
            let z = setup.incidence.relative_distances(&s.state.p, 1).unwrap();
            radius = radius.max(z[l].abs());
        }
        let k_bar = setup.laws[l].grad_bound_on_ball(radius);
        let bound = dwell_lower_bound(&setup.params[l], k_bar);
        if let Some(gap) = out.metrics.min_interevent[l] {
            assert!(
                gap >= bound - 1e-9,
                "edge {}: min gap {gap} below dwell bound {bound}",
                l + 1
            );
        }
    }
}

#[test]
fn frozen_control_decays_in_closed_form() {
    // with the sampled variables at consensus the coupling force vanishes,
    // so one flow step must reproduce the pure internal decay
    let setup = section7_setup(Scheme::EventTriggered, 10.0);
    let p = vec![1.0; 5];
    let v = vec![0.3, -0.2, 0.5, 0.0, -0.4];
    let zhat = vec![0.0; 4];
    let state = HybridState {
        p: p.clone(),
        v: v.clone(),
        zhat,
        trigger: TriggerState {
            scheme: Scheme::EventTriggered,
            values: vec![10.0; 4],
        },
    };
    let rng = ChaCha8Rng::seed_from_u64(0);
    let mut engine = Engine::new(&setup, sim_config(1.0), state, rng).unwrap();
    let h = 1e-3;
    let hit = engine.flow_step(h).unwrap();
    assert!(hit.is_none());
    let after = engine.state();
    for i in 0..5 {
        let v_exact = v[i] * (-h).exp();
        let p_exact = p[i] + v[i] * (1.0 - (-h).exp());
        assert!((after.v[i] - v_exact).abs() <= 1e-6 * v_exact.abs().max(1e-3));
        assert!((after.p[i] - p_exact).abs() <= 1e-9);
        // the sampled variables never move on flows
        assert_eq!(after.zhat, vec![0.0; 4]);
    }
}

#[test]
fn consensus_is_an_equilibrium_up_to_clock_resets() {
    let mut sc = Scenario::section7(Scheme::EventTriggered, 1.0, 2);
    sc.sim.horizon = 2.0;
    sc.init.p0 = Some(vec![2.5; 5]);
    let out = run_scenario(&sc).unwrap();
    assert!(out.metrics.events_total > 0, "clocks keep resetting");
    for s in &out.trajectory.samples {
        for &p in &s.state.p {
            assert!((p - 2.5).abs() <= 1e-12);
        }
        for &v in &s.state.v {
            assert!(v.abs() <= 1e-12);
        }
    }
    // energy is identically zero and the 5% metric is undefined
    for l in &out.lyapunov.samples {
        assert_eq!(l.u_total, 0.0);
    }
    assert_eq!(out.metrics.t5, None);
}

#[test]
fn threshold_crossing_is_localized_within_tolerance() {
    let setup = section7_setup(Scheme::EventTriggered, 10.0);
    let p: Vec<f64> = vec![0.0, 1.0, 2.0, 3.0, 4.0];
    let zhat = setup.incidence.relative_distances(&p, 1).unwrap();
    let delta = 1e-3;
    let state = HybridState {
        p,
        v: vec![0.0; 5],
        zhat,
        trigger: TriggerState {
            scheme: Scheme::EventTriggered,
            values: vec![delta, 10.0, 10.0, 10.0],
        },
    };
    let rng = ChaCha8Rng::seed_from_u64(0);
    let mut engine = Engine::new(&setup, sim_config(1.0), state, rng).unwrap();
    let hit = engine.flow_step(0.5).unwrap();
    let edges = hit.expect("clock must cross within the step");
    assert_eq!(edges, vec![0]);
    let (t, _) = engine.time();
    // the clock decays at least at rate 1/sigma = 16
    assert!(t > 0.0 && t <= delta / 16.0 * 1.01 + 1e-9);
    assert_eq!(engine.state().trigger.values[0], 0.0);
    // taking the jump resets the clock and refreshes the edge
    let l = engine.jump().unwrap();
    assert_eq!(l, 0);
    assert_eq!(engine.state().trigger.values[0], 10.0);
}

#[test]
fn simultaneous_deadlines_cascade_lowest_edge_first() {
    let setup = section7_setup(Scheme::TimeTriggered, 1.0);
    let p: Vec<f64> = vec![0.0, 1.0, 2.0, 3.0, 4.0];
    let zhat = setup.incidence.relative_distances(&p, 1).unwrap();
    // all four timers at the same phase: deadlines coincide forever
    let state = HybridState {
        p,
        v: vec![0.0; 5],
        zhat,
        trigger: TriggerState {
            scheme: Scheme::TimeTriggered,
            values: vec![0.01; 4],
        },
    };
    let rng = ChaCha8Rng::seed_from_u64(0);
    let traj = simulate(&setup, sim_config(0.5), state, rng).unwrap();
    assert!(traj.events.len() >= 8);
    for group in traj.events.chunks(4) {
        let t0 = group[0].t;
        for (i, e) in group.iter().enumerate() {
            assert_eq!(e.t, t0, "cascade must not advance time");
            assert_eq!(e.edge, i, "cascade must serve the lowest edge first");
        }
    }
}

#[test]
fn two_agent_rendez_vous() {
    let mut sc = Scenario::section7(Scheme::EventTriggered, 10.0, 1);
    sc.topology.nodes = 2;
    sc.init.p0 = Some(vec![0.0, 5.0]);
    let out = run_scenario(&sc).unwrap();
    let setup = out.scenario.setup().unwrap();
    let first = &out.trajectory.samples[0];
    let last = out.trajectory.samples.last().unwrap();
    let z0 = setup.incidence.relative_distances(&first.state.p, 1).unwrap()[0];
    let z_end = setup.incidence.relative_distances(&last.state.p, 1).unwrap()[0];
    assert_eq!(z0, 5.0);
    assert!(z_end.abs() < 0.05 * z0, "no approach to consensus: {z_end}");
    assert!(out.metrics.t5.is_some());
    assert_eq!(out.metrics.sat_breaches, 0);
}

#[test]
fn artifacts_are_byte_identical_across_repeated_runs() {
    let mut sc = Scenario::section7(Scheme::TimeTriggered, 10.0, 31);
    sc.sim.horizon = 2.0;
    let a = run_scenario(&sc).unwrap();
    let b = run_scenario(&sc).unwrap();
    let setup = a.scenario.setup().unwrap();
    assert_eq!(trajectory_csv(&a, &setup), trajectory_csv(&b, &setup));
    assert_eq!(events_csv(&a), events_csv(&b));
    assert_eq!(metrics_csv_single(&a, &setup), metrics_csv_single(&b, &setup));
    assert_eq!(lyapunov_csv(&a), lyapunov_csv(&b));

    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    write_run_artifacts(&a, dir_a.path()).unwrap();
    write_run_artifacts(&b, dir_b.path()).unwrap();
    for name in ["trajectory.csv", "events.csv", "metrics.csv", "lyapunov.csv"] {
        let bytes_a = std::fs::read(dir_a.path().join(name)).unwrap();
        let bytes_b = std::fs::read(dir_b.path().join(name)).unwrap();
        assert_eq!(bytes_a, bytes_b, "{name} differs between identical runs");
    }
}

#[test]
fn initial_state_is_deterministic_in_the_seed() {
    for scheme in [Scheme::EventTriggered, Scheme::TimeTriggered, Scheme::SelfTriggered] {
        let setup = section7_setup(scheme, 10.0);
        let init = InitSpec {
            p_min: 0.0,
            p_max: 5.0,
            p0: None,
            v0: None,
        };
        let mut rng_a = ChaCha8Rng::seed_from_u64(77);
        let mut rng_b = ChaCha8Rng::seed_from_u64(77);
        let a = initial_state(&setup, &init, &mut rng_a).unwrap();
        let b = initial_state(&setup, &init, &mut rng_b).unwrap();
        assert_eq!(a, b);
        assert!(a.v.iter().all(|&v| v == 0.0));
        assert_eq!(a.zhat, setup.incidence.relative_distances(&a.p, 1).unwrap());
        match scheme {
            Scheme::EventTriggered => assert!(a.trigger.values.iter().all(|&x| x == 10.0)),
            _ => assert!(a.trigger.values.iter().all(|&x| x >= 0.0)),
        }
    }
}

#[test]
fn campaign_results_do_not_depend_on_parallelism() {
    let mut sc = Scenario::section7(Scheme::EventTriggered, 1.0, 5);
    sc.sim.horizon = 0.5;
    let schemes = [Scheme::EventTriggered, Scheme::TimeTriggered];
    let parallel = etcoord::runner::run_campaign(&sc, &schemes, &[1.0], 4).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let serial =
        pool.install(|| etcoord::runner::run_campaign(&sc, &schemes, &[1.0], 4).unwrap());
    for (a, b) in parallel.iter().zip(&serial) {
        assert_eq!(a.summary.mean_events, b.summary.mean_events);
        assert_eq!(a.summary.mean_t5, b.summary.mean_t5);
        for (ra, rb) in a.records.iter().zip(&b.records) {
            assert_eq!(ra.metrics.events_total, rb.metrics.events_total);
            assert_eq!(ra.metrics.t5, rb.metrics.t5);
        }
    }
}

#[test]
fn committed_scenario_file_matches_the_builtin() {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../section7.cfg");
    let loaded = Scenario::load(&path).unwrap();
    let normalized = loaded.normalize().unwrap();
    let builtin = Scenario::section7(Scheme::EventTriggered, 10.0, 1)
        .normalize()
        .unwrap();
    assert_eq!(normalized, builtin);
}

#[test]
fn engine_rejects_states_outside_flow_and_jump_sets() {
    let setup = section7_setup(Scheme::EventTriggered, 10.0);
    let p: Vec<f64> = vec![0.0, 1.0, 2.0, 3.0, 4.0];
    let zhat = setup.incidence.relative_distances(&p, 1).unwrap();
    let bad = HybridState {
        p: p.clone(),
        v: vec![0.0; 5],
        zhat: zhat.clone(),
        trigger: TriggerState {
            scheme: Scheme::EventTriggered,
            values: vec![11.0, 10.0, 10.0, 10.0],
        },
    };
    let rng = ChaCha8Rng::seed_from_u64(0);
    assert!(matches!(
        Engine::new(&setup, sim_config(1.0), bad, rng),
        Err(Error::FlowPrecondition(_))
    ));

    let good = HybridState {
        p,
        v: vec![0.0; 5],
        zhat,
        trigger: TriggerState {
            scheme: Scheme::EventTriggered,
            values: vec![10.0; 4],
        },
    };
    let rng = ChaCha8Rng::seed_from_u64(0);
    let mut engine = Engine::new(&setup, sim_config(1.0), good, rng).unwrap();
    assert!(matches!(engine.jump(), Err(Error::JumpPrecondition(_))));
}
