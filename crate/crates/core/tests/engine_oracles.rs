//! Transient engine against closed-form linear circuits, plus passivity and
//! determinism properties.

use isolator_core::engine::{transient, Circuit, InitialState, NodeId, SimOptions, Stimulus};
use isolator_core::magnetics::TransformerModel;
use proptest::prelude::*;

const G: NodeId = NodeId::GROUND;

fn rc() -> Circuit {
    let mut c = Circuit::new();
    let (inp, out) = (c.node("in"), c.node("out"));
    c.voltage_source("V1", inp, G, Stimulus::step(0.0, 1e-12, 1.0), 0.0);
    c.resistor("R", inp, out, 1e3);
    c.capacitor("C", out, G, 1e-9);
    c
}

fn rc_max_error(dt: f64) -> f64 {
    let tr = transient(&rc(), &SimOptions::new(5e-6, dt), None).unwrap();
    let v = tr.channel("v(out)").unwrap();
    tr.time()
        .iter()
        .zip(v)
        .map(|(t, v)| (v - (1.0 - (-t / 1e-6).exp())).abs())
        .fold(0.0, f64::max)
}

#[test]
fn rc_step_within_tenth_percent() {
    assert!(rc_max_error(1e-9) < 1e-3);
}

#[test]
fn rc_error_is_second_order() {
    let coarse = rc_max_error(40e-9);
    let fine = rc_max_error(20e-9);
    assert!(coarse > fine);
    // trapezoidal: halving the step cuts the error by about four
    assert!(coarse / fine > 3.0, "{coarse} / {fine}");
}

#[test]
fn lossless_tank_keeps_its_energy() {
    let (l, cap) = (1.6e-6, 70e-12);
    let mut c = Circuit::new();
    let a = c.node("a");
    c.inductor("L", a, G, l, 0.0);
    c.capacitor("C", a, G, cap);
    let init = InitialState::default().set("i(L)", 1e-3);
    let tr = transient(&c, &SimOptions::new(2e-6, 0.5e-9), Some(&init)).unwrap();
    let v = tr.channel("v(a)").unwrap();
    let i = tr.channel("i(L)").unwrap();
    let energy: Vec<f64> = v.iter().zip(i).map(|(v, i)| 0.5 * cap * v * v + 0.5 * l * i * i).collect();
    let e0 = 0.5 * l * 1e-6;
    // the backward Euler start step costs about (ω·dt)² of the energy once
    assert!(((energy[1] - e0) / e0).abs() < 5e-3, "{} vs {e0}", energy[1]);
    for e in &energy[1..] {
        assert!(((e - energy[1]) / energy[1]).abs() < 1e-6, "{e} vs {}", energy[1]);
    }
}

/// Loaded transformer integrated independently with RK4, including the
/// 1 pF the engine places on each winding node:
/// [L1 M; M L2]·d[i1 i2]/dt = [vp, vs], C·dvp/dt = (1 - vp)/R1 - i1,
/// C·dvs/dt = -vs/R2 - i2.
fn rk4_transformer(l1: f64, l2: f64, m: f64, r1: f64, r2: f64, t_end: f64, h: f64) -> Vec<(f64, f64, f64)> {
    const C_NODE: f64 = 1e-12;
    let det = l1 * l2 - m * m;
    let f = |x: [f64; 4]| -> [f64; 4] {
        let [i1, i2, vp, vs] = x;
        [
            (l2 * vp - m * vs) / det,
            (l1 * vs - m * vp) / det,
            ((1.0 - vp) / r1 - i1) / C_NODE,
            (-vs / r2 - i2) / C_NODE,
        ]
    };
    let add = |x: [f64; 4], k: [f64; 4], s: f64| -> [f64; 4] { std::array::from_fn(|j| x[j] + s * k[j]) };
    let mut x = [0.0; 4];
    let mut out = vec![(0.0, 0.0, 0.0)];
    let n = (t_end / h).round() as usize;
    for k in 1..=n {
        let k1 = f(x);
        let k2 = f(add(x, k1, 0.5 * h));
        let k3 = f(add(x, k2, 0.5 * h));
        let k4 = f(add(x, k3, h));
        x = std::array::from_fn(|j| x[j] + h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]));
        out.push((k as f64 * h, x[2], x[3]));
    }
    out
}

#[test]
fn loaded_transformer_matches_independent_integration() {
    let (l, k, r1, r2) = (1.44e-6, 0.56, 100.0, 200.0);
    let t = TransformerModel::symmetric(l, k, 0.0);
    let mut c = Circuit::new();
    let (src, p, s) = (c.node("src"), c.node("p"), c.node("s"));
    c.voltage_source("V", src, G, Stimulus::step(0.0, 1e-12, 1.0), 0.0);
    c.resistor("R1", src, p, r1);
    c.coupled_pair("T", (p, G), (s, G), t);
    c.resistor("R2", s, G, r2);
    let tr = transient(&c, &SimOptions::new(60e-9, 0.02e-9), None).unwrap();
    let reference = rk4_transformer(l, l, k * l, r1, r2, 60e-9, 1e-12);
    let (vp, vs) = (tr.channel("v(p)").unwrap(), tr.channel("v(s)").unwrap());
    let mut checked = 0;
    for (n, &time) in tr.time().iter().enumerate() {
        if time < 2e-9 {
            continue;
        }
        let idx = (time / 1e-12).round() as usize;
        let (_, ep, es) = reference[idx];
        assert!((vp[n] - ep).abs() < 2e-3, "t={time}: {} vs {ep}", vp[n]);
        assert!((vs[n] - es).abs() < 2e-3, "t={time}: {} vs {es}", vs[n]);
        checked += 1;
    }
    assert!(checked > 500);
    // the secondary sees a real, opposite-sign pulse
    assert!(vs.iter().copied().fold(0.0, f64::max) > 0.1 || vs.iter().copied().fold(0.0, f64::min) < -0.1);
}

#[test]
fn repeated_runs_are_bit_identical() {
    let opts = SimOptions::new(3e-6, 2e-9);
    assert_eq!(transient(&rc(), &opts, None).unwrap(), transient(&rc(), &opts, None).unwrap());
}

#[test]
fn refined_options_keep_the_output_grid() {
    let opts = SimOptions::new(1e-6, 1e-9);
    let a = transient(&rc(), &opts, None).unwrap();
    let b = transient(&rc(), &opts.refined(), None).unwrap();
    assert_eq!(a.time(), b.time());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    /// Coupled windings, each loaded by R ∥ C, started with winding currents
    /// and left alone: stored energy never grows.
    #[test]
    fn coupled_network_is_passive(
        l1 in 0.2e-6..5e-6f64,
        l2 in 0.2e-6..5e-6f64,
        k in -0.95..0.95f64,
        r1 in 50.0..5e3f64,
        r2 in 50.0..5e3f64,
        i1 in -1e-2..1e-2f64,
        i2 in -1e-2..1e-2f64,
    ) {
        let (c1, c2) = (50e-12, 80e-12);
        let t = TransformerModel::new(l1, l2, k * (l1 * l2).sqrt(), 0.0, 0.0, 0.0);
        let mut c = Circuit::new();
        let (a, b) = (c.node("a"), c.node("b"));
        c.coupled_pair("T", (a, G), (b, G), t);
        c.resistor("R1", a, G, r1);
        c.capacitor("C1", a, G, c1);
        c.resistor("R2", b, G, r2);
        c.capacitor("C2", b, G, c2);
        let init = InitialState::default().set("i(T.p)", i1).set("i(T.s)", i2);
        let tr = transient(&c, &SimOptions::new(1e-6, 0.5e-9), Some(&init)).unwrap();
        let (va, vb) = (tr.channel("v(a)").unwrap(), tr.channel("v(b)").unwrap());
        let (ia, ib) = (tr.channel("i(T.p)").unwrap(), tr.channel("i(T.s)").unwrap());
        let m = t.mutual;
        let energy: Vec<f64> = (0..tr.len())
            .map(|n| {
                let magnetic = 0.5 * l1 * ia[n] * ia[n] + m * ia[n] * ib[n] + 0.5 * l2 * ib[n] * ib[n];
                prop_assert!(magnetic >= -1e-18);
                Ok(magnetic + 0.5 * c1 * va[n] * va[n] + 0.5 * c2 * vb[n] * vb[n])
            })
            .collect::<Result<_, _>>()?;
        let scale = energy[0].max(1e-18);
        for w in energy.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-6 * scale, "{} -> {}", w[0], w[1]);
        }
    }

    /// Resistive ladder with a capacitor at every node settles to the DC
    /// divider value and never overshoots a step.
    #[test]
    fn rc_ladder_settles_monotonically(
        rs in prop::collection::vec(100.0..10e3f64, 2..5),
        r_end in 100.0..10e3f64,
    ) {
        let mut c = Circuit::new();
        let src = c.node("src");
        c.voltage_source("V", src, G, Stimulus::step(0.0, 1e-12, 1.0), 0.0);
        let mut prev = src;
        for (i, r) in rs.iter().enumerate() {
            let n = c.node(&format!("n{i}"));
            c.resistor(&format!("R{i}"), prev, n, *r);
            c.capacitor(&format!("C{i}"), n, G, 1e-12);
            prev = n;
        }
        c.resistor("Rend", prev, G, r_end);
        let total: f64 = rs.iter().sum::<f64>() + r_end;
        let last = format!("v(n{})", rs.len() - 1);
        let tr = transient(&c, &SimOptions::new(5e-6, 1e-9), None).unwrap();
        let v = tr.channel(&last).unwrap();
        let target = r_end / total;
        prop_assert!((v[v.len() - 1] - target).abs() < 1e-6 * target.max(1e-3) + 1e-9);
        for w in v.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-9);
        }
        prop_assert!(v.iter().all(|&x| x <= target + 1e-9));
    }
}
