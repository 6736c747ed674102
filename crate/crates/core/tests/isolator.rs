//! Whole-isolator transients: logic levels, oscillation and startup.

use isolator_core::devices::{effective_tank_capacitance, resonant_frequency, TankTopology};
use isolator_core::engine::measure::envelope;
use isolator_core::engine::{measure_frequency, measure_startup, transient, SimOptions, Stimulus, Trace};
use isolator_core::topologies::{build_isolator, logic_level, IsolatorConfig};

const DT: f64 = 0.5e-9;

fn run(cfg: &IsolatorConfig, input: Stimulus, t_stop: f64) -> Trace {
    let c = build_isolator(cfg, input).unwrap();
    let opts = SimOptions::new(t_stop, DT).with_channels(["v(d1)", "v(d2)", "v(dx)", "v(dy)"]);
    transient(&c, &opts, None).unwrap()
}

fn after(tr: &Trace, name: &str, t0: f64) -> Vec<f64> {
    let r = tr.window(t0, tr.time()[tr.len() - 1]).unwrap();
    tr.channel(name).unwrap()[r].to_vec()
}

fn symmetric(cfg: &IsolatorConfig) -> IsolatorConfig {
    IsolatorConfig {
        r_drain_a: Some(cfg.r_drain_b),
        ..*cfg
    }
}

#[test]
fn logic_zero_leaves_output_high() {
    let cfg = IsolatorConfig::default();
    let tr = run(&cfg, logic_level(false, cfg.supply), 2e-6);
    assert!(after(&tr, "v(dy)", 1e-6).iter().all(|&v| v > 4.0));
    let d1_max = after(&tr, "v(d1)", 0.0).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    // only the receiver power-up couples back through the windings (a few mV)
    assert!(d1_max < 0.05, "{d1_max}");
}

#[test]
fn logic_one_pulls_output_low() {
    let cfg = IsolatorConfig::default();
    let tr = run(&cfg, logic_level(true, cfg.supply), 2e-6);
    let dy = after(&tr, "v(dy)", 1e-6);
    assert!(dy.iter().all(|&v| v < 0.8), "{:?}", dy.iter().copied().fold(f64::MIN, f64::max));
}

#[test]
fn oscillates_near_predicted_frequency_with_sustained_amplitude() {
    let cfg = IsolatorConfig::default();
    let tr = run(&cfg, logic_level(true, cfg.supply), 3e-6);
    let d = tr.difference("v(d1)", "v(d2)").unwrap();
    let f = measure_frequency(tr.time(), &d, (1e-6, 3e-6)).unwrap();
    let predicted = resonant_frequency(
        cfg.transformer.l_primary,
        effective_tank_capacitance(&cfg.mosfet, TankTopology::CrossCoupledPair),
    );
    assert!((f.mean / predicted - 1.0).abs() < 0.05, "{} vs {predicted}", f.mean);
    assert!(f.std_dev / f.mean < 0.01);
    let envs: Vec<f64> = (0..4)
        .map(|k| {
            let t0 = 1e-6 + 0.5e-6 * k as f64;
            envelope(tr.time(), &d, (t0, t0 + 0.5e-6)).unwrap()
        })
        .collect();
    for w in envs.windows(2) {
        assert!(w[1] >= 0.99 * w[0], "{envs:?}");
    }
}

fn startup(cfg: &IsolatorConfig, threshold: f64) -> f64 {
    let tr = run(cfg, logic_level(true, cfg.supply), 3e-6);
    let d = tr.difference("v(d1)", "v(d2)").unwrap();
    measure_startup(tr.time(), &d, threshold).unwrap()
}

/// Startup times for both drain-resistor arrangements, recorded as
/// regression baselines. Half the smaller settled peak-to-peak is 3.88 V.
#[test]
fn startup_baselines() {
    let asym = IsolatorConfig::default();
    let sym = symmetric(&asym);
    let half = 3.878;
    let (ta, ts) = (startup(&asym, half), startup(&sym, half));
    assert!((ta - 134e-9).abs() <= 4e-9, "{ta}");
    assert!((ts - 94e-9).abs() <= 4e-9, "{ts}");
}

/// Without R12 the differential mode is excited from the first step, so a
/// small oscillation is present before the symmetric pair breaks its balance.
#[test]
fn onset_is_immediate_without_r12() {
    let asym = IsolatorConfig::default();
    let sym = symmetric(&asym);
    let (ta, ts) = (startup(&asym, 0.5), startup(&sym, 0.5));
    assert!(ta < ts, "{ta} vs {ts}");
}

#[test]
fn on_off_keying_round_trip() {
    let cfg = IsolatorConfig::default();
    let input = Stimulus::new(vec![(0.0, 0.0), (1e-6, 0.0), (1.01e-6, 5.0), (3e-6, 5.0), (3.01e-6, 0.0)]).unwrap();
    let tr = run(&cfg, input, 5e-6);
    let (t, dy) = (tr.time(), tr.channel("v(dy)").unwrap());
    let fall = t.iter().zip(dy).find(|&(&t, &v)| t > 1e-6 && v < 2.5).map(|(t, _)| *t).unwrap();
    let rise = t.iter().zip(dy).find(|&(&t, &v)| t > 3e-6 && v > 2.5).map(|(t, _)| *t).unwrap();
    assert!((1.1e-6..1.5e-6).contains(&fall), "{fall}");
    assert!((3.1e-6..3.5e-6).contains(&rise), "{rise}");
    assert!(after(&tr, "v(dy)", 4.5e-6).iter().all(|&v| v > 4.0));
}

#[test]
fn trace_records_the_startup_kick() {
    let cfg = IsolatorConfig::default();
    let tr = run(&cfg, logic_level(true, cfg.supply), 0.2e-6);
    assert!(tr.metadata().get("startup_kick").is_some_and(|s| s.contains("v(d1)")));
}
