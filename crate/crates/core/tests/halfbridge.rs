//! Half-bridge: behavioral model fuzzed against a direct oracle, and the
//! transient bridge checked for truth table, body-diode conduction and
//! dead time.

use isolator_core::engine::{SimOptions, Stimulus};
use isolator_core::halfbridge::{
    behavioral_events, bridge_metrics, lockout_check, transient_bridge, truth_table, vtx_level, BridgeStimulus,
    V_ACTIVE,
};
use isolator_core::par::{self, Execution};
use isolator_core::topologies::HalfBridgeConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EDGE: f64 = 1e-9;
const T_STOP: f64 = 6e-6;
/// Sample times this close to an output boundary are skipped.
const GUARD: f64 = 3e-9;

struct Case {
    stim: BridgeStimulus,
    /// Times where either input crosses mid-rail.
    crossings: Vec<f64>,
    on: f64,
    off: f64,
    probes: Vec<f64>,
}

/// Random logic waveform: level changes at least 20 ns apart before 5 µs.
fn waveform(rng: &mut ChaCha8Rng, crossings: &mut Vec<f64>) -> Stimulus {
    let mut level = rng.gen_bool(0.5);
    let v = |b: bool| if b { 5.0 } else { 0.0 };
    let mut points = vec![(0.0, v(level))];
    let mut t = 0.0;
    for _ in 0..rng.gen_range(0..12) {
        t += rng.gen_range(20e-9..900e-9);
        if t > 5e-6 {
            break;
        }
        points.push((t, v(level)));
        level = !level;
        points.push((t + EDGE, v(level)));
        crossings.push(t + 0.5 * EDGE);
    }
    Stimulus::new(points).unwrap()
}

fn case(seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut crossings = Vec::new();
    let a = waveform(&mut rng, &mut crossings);
    let b = waveform(&mut rng, &mut crossings);
    crossings.sort_by(f64::total_cmp);
    let on = rng.gen_range(0.0..500e-9);
    let off = rng.gen_range(0.0..=on);
    let probes = (0..64).map(|_| rng.gen_range(0.0..T_STOP)).collect();
    Case {
        stim: BridgeStimulus::new(a, b).unwrap(),
        crossings,
        on,
        off,
        probes,
    }
}

/// Sign of V_TX at `t` read straight from the inputs.
fn drive(stim: &BridgeStimulus, t: f64) -> f64 {
    vtx_level(stim.a.value(t) > 2.5, stim.b.value(t) > 2.5)
}

/// Output is asserted at `t` when its side was enabled over the whole of
/// `[t - on, t - off]`. Inputs only change at `crossings`, so checking both
/// ends and every gap between crossings inside the window is exhaustive.
fn oracle(c: &Case, t: f64, want_positive: bool) -> bool {
    let (u, w) = (t - c.on, t - c.off);
    if u < 0.0 {
        return false;
    }
    let enabled = |x: f64| {
        let v = drive(&c.stim, x);
        if want_positive {
            v > 0.0
        } else {
            v < 0.0
        }
    };
    let mut points = vec![u, w];
    let inside: Vec<f64> = c.crossings.iter().copied().filter(|&x| x > u && x < w).collect();
    let mut prev = u;
    for &x in &inside {
        points.push(0.5 * (prev + x));
        prev = x;
    }
    points.push(0.5 * (prev + w));
    points.into_iter().all(enabled)
}

fn contains(spans: &[(f64, f64)], t: f64) -> bool {
    spans.iter().any(|&(s, e)| s <= t && t < e)
}

fn near_boundary(c: &Case, t: f64) -> bool {
    let starts = std::iter::once(0.0).chain(c.crossings.iter().copied());
    starts.into_iter().any(|x| (t - c.on - x).abs() < GUARD) || c.crossings.iter().any(|x| (t - c.off - x).abs() < GUARD)
}

#[test]
fn behavioral_model_matches_oracle_on_random_inputs() {
    let seeds: Vec<u64> = (0..10_000).collect();
    let results = par::map(Execution::Parallel, &seeds, |&seed| {
        let c = case(seed);
        let ev = behavioral_events(&c.stim, c.on, c.off, T_STOP).unwrap();
        let mut bad = Vec::new();
        let mut asserted = 0usize;
        for &t in &c.probes {
            if near_boundary(&c, t) {
                continue;
            }
            let (dls, dhs) = (contains(&ev.dls_active, t), contains(&ev.dhs_active, t));
            if dls != oracle(&c, t, true) || dhs != oracle(&c, t, false) {
                bad.push(format!("seed {seed} t {t:e}: dls {dls} dhs {dhs}"));
            }
            if dls && dhs {
                bad.push(format!("seed {seed} t {t:e}: both asserted"));
            }
            asserted += usize::from(dls) + usize::from(dhs);
        }
        (bad, asserted)
    });
    let asserted: usize = results.iter().map(|r| r.1).sum();
    let failures: Vec<String> = results.into_iter().flat_map(|r| r.0).collect();
    // roughly half the probes land on an asserted output
    assert!(asserted > 100_000, "{asserted}");
    assert!(failures.is_empty(), "{} mismatches, first: {:?}", failures.len(), &failures[..failures.len().min(5)]);
}

#[test]
fn behavioral_spans_never_overlap_when_turn_on_is_slower() {
    let seeds: Vec<u64> = (20_000..30_000).collect();
    let overlaps = par::map(Execution::Parallel, &seeds, |&seed| {
        let c = case(seed);
        let ev = behavioral_events(&c.stim, c.on, c.off, T_STOP).unwrap();
        ev.dls_active
            .iter()
            .flat_map(|l| ev.dhs_active.iter().map(move |h| (l, h)))
            .filter(|(l, h)| l.0 < h.1 && h.0 < l.1)
            .count()
    });
    assert_eq!(overlaps.iter().sum::<usize>(), 0);
}

#[test]
fn truth_table_holds_and_does_not_depend_on_execution_mode() {
    let cfg = HalfBridgeConfig::default();
    let par_rows = truth_table(&cfg, 10e-6, 0.5e-9, Execution::Parallel).unwrap();
    let seq_rows = truth_table(&cfg, 10e-6, 0.5e-9, Execution::Sequential).unwrap();
    assert_eq!(par_rows, seq_rows);
    for r in &par_rows {
        assert!(r.pass, "{r:?}");
        assert!((r.v_tx - vtx_level(r.a, r.b)).abs() < 0.1, "{r:?}");
    }
}

#[test]
fn low_side_is_fed_through_body_diodes() {
    let cfg = HalfBridgeConfig::default();
    let opts = SimOptions::new(5e-6, 0.5e-9).with_channels(["v(dls)", "v(dhs)", "ibd(Q12)", "ibd(Q13)"]);
    let tr = transient_bridge(&cfg, &BridgeStimulus::constant(false, true), &opts).unwrap();
    let r = tr.window(2e-6, 5e-6).unwrap();
    let mean = |name: &str| tr.channel(name).unwrap()[r.clone()].iter().sum::<f64>() / r.len() as f64;
    assert!(mean("ibd(Q12)") + mean("ibd(Q13)") > 1e-4, "{} {}", mean("ibd(Q12)"), mean("ibd(Q13)"));
    assert!(lockout_check(&tr, V_ACTIVE).unwrap().lockout_ok);
}

#[test]
fn square_wave_dead_time_in_band() {
    let cfg = HalfBridgeConfig::default();
    let stim = BridgeStimulus::complementary(50e3, 2, 10e-9).unwrap();
    let opts = SimOptions::new(stim.duration(), 0.5e-9).with_channels(["v(dls)", "v(dhs)"]);
    let tr = transient_bridge(&cfg, &stim, &opts).unwrap();
    let m = bridge_metrics(&tr, V_ACTIVE).unwrap();
    assert!(m.lockout_ok);
    let (lo, hi) = (m.dead_time_min().unwrap(), m.dead_time_max().unwrap());
    assert!(lo >= 100e-9 && hi <= 600e-9, "{lo} {hi}");
    assert!(m.v_tx_levels.contains(&5.0) && m.v_tx_levels.contains(&-5.0), "{:?}", m.v_tx_levels);
}
