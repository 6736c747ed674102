//! Implicit transient integration.
//!
//! Trapezoidal rule on every differential row, backward Euler on the first
//! step and on the BJT storage rows, Newton–Raphson at each step with step
//! halving on failure. Output is resampled to a uniform grid by linear
//! interpolation between accepted steps.

use nalgebra::{DMatrix, DVector};

use super::circuit::Circuit;
use super::mna::{assemble, System, UnknownKind};
use super::trace::Trace;
use crate::error::{require_positive, Error, Result};

/// Largest node-voltage change allowed in one Newton update.
const MAX_NEWTON_VOLTAGE_STEP: f64 = 2.0;
const REL_TOL: f64 = 1e-6;
const CURRENT_ABS_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct SimOptions {
    pub t_stop: f64,
    pub dt_max: f64,
    pub dt_min: f64,
    /// Newton convergence tolerance on node voltages, volts.
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    /// Output grid spacing in units of `dt_max`.
    pub output_decimation: usize,
    /// Channels to record; all when `None`.
    pub channels: Option<Vec<String>>,
}

impl SimOptions {
    pub fn new(t_stop: f64, dt_max: f64) -> Self {
        Self {
            t_stop,
            dt_max,
            dt_min: dt_max * 1e-6,
            newton_tol: 1e-6,
            newton_max_iter: 50,
            output_decimation: 4,
            channels: None,
        }
    }

    /// `bit_period / 2000` or `period / 40` of the expected oscillation,
    /// whichever is smaller (either may be absent).
    pub fn default_dt_max(bit_period: Option<f64>, osc_frequency: Option<f64>) -> f64 {
        let a = bit_period.map_or(f64::INFINITY, |b| b / 2000.0);
        let b = osc_frequency.map_or(f64::INFINITY, |f| 1.0 / (40.0 * f));
        let dt = a.min(b);
        if dt.is_finite() {
            dt
        } else {
            1e-9
        }
    }

    pub fn with_channels<S: Into<String>>(mut self, channels: impl IntoIterator<Item = S>) -> Self {
        self.channels = Some(channels.into_iter().map(Into::into).collect());
        self
    }

    /// Same run with `dt_max`, `dt_min` halved and the output grid kept.
    pub fn refined(&self) -> Self {
        Self {
            dt_max: self.dt_max / 2.0,
            dt_min: self.dt_min / 2.0,
            output_decimation: self.output_decimation * 2,
            ..self.clone()
        }
    }

    pub fn output_interval(&self) -> f64 {
        self.dt_max * self.output_decimation as f64
    }

    pub fn validate(&self) -> Result<()> {
        require_positive("t_stop", self.t_stop)?;
        require_positive("dt_max", self.dt_max)?;
        require_positive("dt_min", self.dt_min)?;
        require_positive("newton_tol", self.newton_tol)?;
        if self.dt_min > self.dt_max {
            return Err(Error::invalid("dt_min", "must not exceed dt_max"));
        }
        if self.dt_max >= self.t_stop {
            return Err(Error::invalid("dt_max", "must be below t_stop"));
        }
        if self.newton_max_iter == 0 {
            return Err(Error::invalid("newton_max_iter", "must be >= 1"));
        }
        if self.output_decimation == 0 {
            return Err(Error::invalid("output_decimation", "must be >= 1"));
        }
        Ok(())
    }
}

/// Starting values keyed by unknown name, e.g. `v(out)` or `i(L1)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct InitialState(pub Vec<(String, f64)>);

impl InitialState {
    pub fn set(mut self, name: impl Into<String>, value: f64) -> Self {
        self.0.push((name.into(), value));
        self
    }
}

struct Step {
    x: Vec<f64>,
    f: Vec<f64>,
    iterations: usize,
}

struct Integrator<'a> {
    sys: &'a System,
    opts: &'a SimOptions,
    n: usize,
    trapezoidal: Vec<bool>,
    voltage: Vec<bool>,
    g: DMatrix<f64>,
    f: Vec<f64>,
}

impl<'a> Integrator<'a> {
    fn new(sys: &'a System, opts: &'a SimOptions) -> Self {
        let n = sys.unknown_count();
        let kinds = sys.unknown_kinds();
        Self {
            sys,
            opts,
            n,
            trapezoidal: sys.trapezoidal_rows().to_vec(),
            voltage: kinds.iter().map(|&k| k == UnknownKind::NodeVoltage).collect(),
            g: DMatrix::zeros(n, n),
            f: vec![0.0; n],
        }
    }

    fn eval(&mut self, x: &[f64], t: f64, kick: bool) {
        self.g.fill(0.0);
        self.sys.evaluate(x, t, &mut self.f, Some(&mut self.g));
        if kick {
            if let Some((node, amps)) = self.sys.kick() {
                self.f[node] -= amps;
            }
        }
    }

    fn residual_tol(&self, row: usize) -> f64 {
        match self.sys.unknown_kinds()[row] {
            UnknownKind::NodeVoltage | UnknownKind::StoredCharge => {
                CURRENT_ABS_TOL.max(1e-3 * self.opts.newton_tol)
            }
            UnknownKind::WindingCurrent | UnknownKind::SourceCurrent => self.opts.newton_tol,
        }
    }

    /// Newton solve for the state at `t + h` given the accepted state at `t`.
    #[allow(clippy::too_many_arguments)]
    fn solve(
        &mut self,
        t_new: f64,
        h: f64,
        backward_euler: bool,
        q_n: &DVector<f64>,
        f_n: &[f64],
        guess: Vec<f64>,
    ) -> std::result::Result<Step, (usize, f64)> {
        let n = self.n;
        let c = self.sys.charge_matrix();
        let theta: Vec<f64> = (0..n)
            .map(|r| if backward_euler || !self.trapezoidal[r] { 1.0 } else { 0.5 })
            .collect();
        let mut x = DVector::from_vec(guess);
        let mut dx_converged = false;
        let mut worst = (0usize, f64::INFINITY);
        for iter in 0..self.opts.newton_max_iter {
            self.eval(x.as_slice(), t_new, backward_euler && self.sys.kick().is_some());
            let q = c * &x;
            let mut resid = DVector::zeros(n);
            let mut residual_ok = true;
            worst = (0, 0.0);
            for r in 0..n {
                let mut v = q[r] - q_n[r] + h * theta[r] * self.f[r];
                if theta[r] < 1.0 {
                    v += h * (1.0 - theta[r]) * f_n[r];
                }
                resid[r] = v;
                let scaled = (v / (h * theta[r])).abs();
                if !scaled.is_finite() {
                    return Err((r, f64::INFINITY));
                }
                if scaled > self.residual_tol(r) {
                    residual_ok = false;
                }
                if scaled > worst.1 {
                    worst = (r, scaled);
                }
            }
            if iter > 0 && dx_converged && residual_ok {
                return Ok(Step {
                    x: x.as_slice().to_vec(),
                    f: self.f.clone(),
                    iterations: iter,
                });
            }
            let mut jac = c.clone();
            for r in 0..n {
                let s = h * theta[r];
                for col in 0..n {
                    jac[(r, col)] += s * self.g[(r, col)];
                }
            }
            let mut dx = match jac.lu().solve(&(-resid)) {
                Some(d) => d,
                None => return Err(worst),
            };
            let max_dv = (0..n)
                .filter(|&i| self.voltage[i])
                .map(|i| dx[i].abs())
                .fold(0.0, f64::max);
            if max_dv > MAX_NEWTON_VOLTAGE_STEP {
                dx *= MAX_NEWTON_VOLTAGE_STEP / max_dv;
            }
            dx_converged = (0..n).all(|i| {
                let abs = if self.voltage[i] {
                    self.opts.newton_tol
                } else {
                    CURRENT_ABS_TOL
                };
                dx[i].abs() <= abs + REL_TOL * x[i].abs()
            });
            x += &dx;
            if x.iter().any(|v| !v.is_finite()) {
                return Err((worst.0, f64::INFINITY));
            }
        }
        Err(worst)
    }
}

/// Runs a transient analysis from the all-zero state (plus `initial`).
pub fn transient(circuit: &Circuit, opts: &SimOptions, initial: Option<&InitialState>) -> Result<Trace> {
    let sys = assemble(circuit)?;
    transient_system(&sys, opts, initial)
}

pub fn transient_system(sys: &System, opts: &SimOptions, initial: Option<&InitialState>) -> Result<Trace> {
    opts.validate()?;
    let n = sys.unknown_count();
    let mut x = vec![0.0; n];
    let mut nonzero_initial = false;
    if let Some(init) = initial {
        for (name, value) in &init.0 {
            let i = sys.index_of(name).ok_or_else(|| Error::UnknownChannel(name.clone()))?;
            x[i] = *value;
            nonzero_initial |= *value != 0.0;
        }
    }
    if !sys.has_sources() && !nonzero_initial {
        return Err(Error::NoExcitation);
    }

    let probes: Vec<_> = match &opts.channels {
        None => sys.probes().iter().collect(),
        Some(wanted) => wanted
            .iter()
            .map(|w| {
                sys.probes()
                    .iter()
                    .find(|(name, _)| name == w)
                    .ok_or_else(|| Error::UnknownChannel(w.clone()))
            })
            .collect::<Result<_>>()?,
    };
    let sample = |x: &[f64]| -> Vec<f64> { probes.iter().map(|(_, p)| sys.probe_value(p, x)).collect() };
    let mut trace = Trace::with_channels(probes.iter().map(|(n, _)| n.clone()).collect());

    let mut integ = Integrator::new(sys, opts);
    let c = sys.charge_matrix().clone();
    integ.eval(&x, 0.0, false);
    let mut f_n = integ.f.clone();
    let mut q_n = &c * DVector::from_column_slice(&x);

    let dt_out = opts.output_interval();
    let n_out = (opts.t_stop / dt_out + 1e-9).floor() as usize;
    let mut y_prev = sample(&x);
    trace.push_sample(0.0, y_prev.iter().copied());
    let mut next_out = 1usize;

    let mut breakpoints: Vec<f64> = sys.breakpoints().iter().copied().filter(|&b| b < opts.t_stop).collect();
    breakpoints.push(opts.t_stop);
    let mut bp = 0usize;

    let mut t = 0.0;
    let mut h = opts.dt_max;
    let mut first = true;
    let mut x_older: Option<(Vec<f64>, f64)> = None;
    let (mut accepted, mut rejected, mut iterations) = (0usize, 0usize, 0usize);

    while t < opts.t_stop * (1.0 - 1e-12) {
        let span = t.abs().max(opts.dt_max) * 1e-9;
        while bp < breakpoints.len() && breakpoints[bp] <= t + span {
            bp += 1;
        }
        let target = breakpoints.get(bp).copied().unwrap_or(opts.t_stop);
        let mut h_try = h.min(opts.dt_max);
        let to_bp = target - t;
        if h_try >= to_bp || to_bp - h_try < 0.01 * h_try {
            h_try = to_bp;
        }
        let guess = match &x_older {
            Some((xo, h_prev)) if !first => {
                let r = h_try / h_prev;
                x.iter().zip(xo).map(|(a, b)| a + r * (a - b)).collect()
            }
            _ => x.clone(),
        };
        match integ.solve(t + h_try, h_try, first, &q_n, &f_n, guess) {
            Ok(step) => {
                let t_new = t + h_try;
                iterations += step.iterations;
                accepted += 1;
                let y_new = sample(&step.x);
                while next_out <= n_out {
                    let t_out = next_out as f64 * dt_out;
                    if t_out > t_new * (1.0 + 1e-12) {
                        break;
                    }
                    let w = ((t_out - t) / h_try).clamp(0.0, 1.0);
                    trace.push_sample(t_out, y_prev.iter().zip(&y_new).map(|(a, b)| a + w * (b - a)));
                    next_out += 1;
                }
                x_older = Some((std::mem::replace(&mut x, step.x), h_try));
                f_n = step.f;
                q_n = &c * DVector::from_column_slice(&x);
                y_prev = y_new;
                t = t_new;
                first = false;
                h = (h * 2.0).min(opts.dt_max);
            }
            Err((row, residual)) => {
                rejected += 1;
                if !residual.is_finite() && h_try <= opts.dt_min {
                    return Err(Error::NonFinite {
                        time: t + h_try,
                        unknown: sys.unknown_names()[row].clone(),
                    });
                }
                h = h_try / 2.0;
                if h < opts.dt_min {
                    return Err(Error::NonConvergence {
                        time: t,
                        unknown: sys.unknown_names()[row].clone(),
                        residual,
                    });
                }
            }
        }
    }

    trace.set_metadata("integrator", "trapezoidal");
    trace.set_metadata("accepted_steps", accepted.to_string());
    trace.set_metadata("rejected_steps", rejected.to_string());
    trace.set_metadata("newton_iterations", iterations.to_string());
    if let Some((node, amps)) = sys.kick() {
        trace.set_metadata(
            "startup_kick",
            format!("{amps:e} A into {} for the first step", sys.unknown_names()[node]),
        );
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::circuit::{NodeId, Stimulus};
    use crate::engine::measure::measure_frequency;

    fn rc(step_at: f64) -> Circuit {
        let mut c = Circuit::new();
        let (inp, out) = (c.node("in"), c.node("out"));
        c.voltage_source("V1", inp, NodeId::GROUND, Stimulus::step(step_at, 1e-12, 1.0), 0.0);
        c.resistor("R", inp, out, 1e3);
        c.capacitor("C", out, NodeId::GROUND, 1e-9);
        c
    }

    #[test]
    fn rc_step_matches_exponential() {
        let opts = SimOptions::new(3e-6, 1e-9);
        let tr = transient(&rc(0.0), &opts, None).unwrap();
        let out = tr.channel("v(out)").unwrap();
        let i = tr.time().iter().position(|&t| (t - 1e-6).abs() < 1e-12).unwrap();
        let expected = 1.0 - (-1.0f64).exp();
        assert!((out[i] - expected).abs() < 1e-3, "{} vs {expected}", out[i]);
    }

    #[test]
    fn divider_mid_node_is_constant() {
        let mut c = Circuit::new();
        let (top, mid) = (c.node("top"), c.node("mid"));
        c.voltage_source("V1", top, NodeId::GROUND, Stimulus::constant(5.0), 0.0);
        c.resistor("R1", top, mid, 1e3);
        c.resistor("R2", mid, NodeId::GROUND, 1e3);
        let tr = transient(&c, &SimOptions::new(100e-9, 0.1e-9), None).unwrap();
        let mid = tr.channel("v(mid)").unwrap();
        // the run starts from zero and the 1 pF node capacitance settles in a few ns
        let r = tr.window(20e-9, 100e-9).unwrap();
        assert!(mid[r].iter().all(|v| (v - 2.5).abs() < 1e-9));
    }

    fn lc() -> (Circuit, InitialState) {
        let mut c = Circuit::new();
        let a = c.node("a");
        c.inductor("L", a, NodeId::GROUND, 1.6e-6, 0.0);
        c.capacitor("C", a, NodeId::GROUND, 70e-12);
        (c, InitialState::default().set("i(L)", 1e-3))
    }

    #[test]
    fn lossless_tank_rings_at_resonance() {
        let (c, init) = lc();
        let tr = transient(&c, &SimOptions::new(2e-6, 0.1e-9), Some(&init)).unwrap();
        let f = measure_frequency(tr.time(), tr.channel("v(a)").unwrap(), (0.0, 2e-6)).unwrap();
        let expected = 1.0 / (2.0 * std::f64::consts::PI * (1.6e-6f64 * 70e-12).sqrt());
        assert!((expected - 15.04e6).abs() < 0.01e6);
        assert!(((f.mean - expected) / expected).abs() < 0.01, "{}", f.mean);
    }

    #[test]
    fn damped_tank_energy_never_grows() {
        let (mut c, init) = lc();
        let a = c.find_node("a").unwrap();
        c.resistor("R", a, NodeId::GROUND, 2e3);
        let tr = transient(&c, &SimOptions::new(1e-6, 0.2e-9), Some(&init)).unwrap();
        let v = tr.channel("v(a)").unwrap();
        let i = tr.channel("i(L)").unwrap();
        let energy: Vec<f64> = v.iter().zip(i).map(|(v, i)| 0.5 * 70e-12 * v * v + 0.5 * 1.6e-6 * i * i).collect();
        let period = 1.0 / 15.04e6;
        let per_cycle = (period / tr.sample_interval()).round() as usize;
        for k in per_cycle..energy.len() {
            assert!(energy[k] <= energy[k - per_cycle] * 1.01);
        }
        assert!(energy[energy.len() - 1] < energy[0]);
    }

    #[test]
    fn deterministic() {
        let opts = SimOptions::new(2e-6, 1e-9);
        let a = transient(&rc(0.1e-6), &opts, None).unwrap();
        let b = transient(&rc(0.1e-6), &opts, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn needs_excitation() {
        let mut c = Circuit::new();
        let a = c.node("a");
        c.resistor("R", a, NodeId::GROUND, 1.0);
        assert_eq!(
            transient(&c, &SimOptions::new(1e-6, 1e-9), None),
            Err(Error::NoExcitation)
        );
    }

    #[test]
    fn rejects_bad_options() {
        let mut o = SimOptions::new(1e-6, 1e-9);
        o.dt_min = 1e-8;
        assert!(o.validate().is_err());
        assert!(SimOptions::new(1e-9, 1e-6).validate().is_err());
        assert!((SimOptions::default_dt_max(Some(1e-6), Some(15e6)) - 0.5e-9).abs() < 1e-18);
        assert!((SimOptions::default_dt_max(None, Some(25e6)) - 1e-9).abs() < 1e-18);
    }
}
