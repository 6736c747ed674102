//! High/low-side driver analysis: truth table, lockout and dead time, in an
//! event-level behavioral mode and in full transient mode.

use serde::{Deserialize, Serialize};

use crate::engine::measure::{falling_crossings, rising_crossings};
use crate::engine::{transient, InitialState, SimOptions, Stimulus, Trace};
use crate::error::{require_non_negative, require_positive, Error, Result};
use crate::par::{self, Execution};
use crate::topologies::{build_halfbridge, nodes, HalfBridgeConfig};

/// Output level below which a driver input counts as asserted.
pub const V_ACTIVE: f64 = 0.8;

/// Logic threshold used to read the A/B inputs.
pub const INPUT_THRESHOLD: f64 = 2.5;

/// Inactive output level of the behavioral model.
pub const BEHAVIORAL_HIGH: f64 = 5.0;

const DLS: &str = "v(dls)";
const DHS: &str = "v(dhs)";

/// Voltage across the bridge inputs, `B - A`, for logic inputs at 0/5 V.
pub fn vtx_level(a: bool, b: bool) -> f64 {
    match (a, b) {
        (false, true) => 5.0,
        (true, false) => -5.0,
        _ => 0.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BridgeStimulus {
    pub a: Stimulus,
    pub b: Stimulus,
}

impl BridgeStimulus {
    pub fn new(a: Stimulus, b: Stimulus) -> Result<Self> {
        let s = Self { a, b };
        s.validate()?;
        Ok(s)
    }

    pub fn constant(a: bool, b: bool) -> Self {
        let lvl = |x: bool| Stimulus::constant(if x { 5.0 } else { 0.0 });
        Self { a: lvl(a), b: lvl(b) }
    }

    /// `cycles` periods of a complementary square wave at `frequency`, B high
    /// for the first half period, with linear edges of `edge` seconds.
    pub fn complementary(frequency: f64, cycles: usize, edge: f64) -> Result<Self> {
        require_positive("frequency", frequency)?;
        require_positive("edge", edge)?;
        let t = 1.0 / frequency;
        if !(edge < 0.25 * t) {
            return Err(Error::invalid("edge", "must be below a quarter period"));
        }
        let (mut a, mut b) = (vec![(0.0, 0.0)], vec![(0.0, 5.0)]);
        for k in 0..cycles {
            let t0 = k as f64 * t;
            let half = t0 + 0.5 * t;
            if k > 0 {
                a.extend([(t0, 5.0), (t0 + edge, 0.0)]);
                b.extend([(t0, 0.0), (t0 + edge, 5.0)]);
            }
            a.extend([(half, 0.0), (half + edge, 5.0)]);
            b.extend([(half, 5.0), (half + edge, 0.0)]);
        }
        let end = cycles as f64 * t;
        a.push((end, 5.0));
        b.push((end, 0.0));
        Self::new(Stimulus::new(a)?, Stimulus::new(b)?)
    }

    pub fn duration(&self) -> f64 {
        self.a.duration().max(self.b.duration())
    }

    pub fn validate(&self) -> Result<()> {
        for (name, s) in [("a", &self.a), ("b", &self.b)] {
            if s.points().iter().any(|&(_, v)| !(-0.5..=5.5).contains(&v)) {
                return Err(Error::invalid(name, "levels must stay within [-0.5, 5.5] V"));
            }
        }
        Ok(())
    }
}

/// Times where `s` crosses `thr`, in order.
fn stimulus_crossings(s: &Stimulus, thr: f64) -> Vec<f64> {
    s.points()
        .windows(2)
        .filter_map(|w| {
            let ((t0, v0), (t1, v1)) = (w[0], w[1]);
            ((v0 > thr) != (v1 > thr)).then(|| t0 + (thr - v0) / (v1 - v0) * (t1 - t0))
        })
        .collect()
}

/// Half-open `[start, end)` time spans.
pub type Spans = Vec<(f64, f64)>;

/// Intervals where the bridge drives V_TX positive (`.0`, low side enabled)
/// and negative (`.1`, high side enabled) within `[0, t_stop]`.
pub fn enable_intervals(stim: &BridgeStimulus, t_stop: f64) -> (Spans, Spans) {
    let mut cuts: Vec<f64> = stimulus_crossings(&stim.a, INPUT_THRESHOLD)
        .into_iter()
        .chain(stimulus_crossings(&stim.b, INPUT_THRESHOLD))
        .filter(|&t| t > 0.0 && t < t_stop)
        .collect();
    cuts.push(0.0);
    cuts.push(t_stop);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let (mut low, mut high): (Spans, Spans) = (Vec::new(), Vec::new());
    let push = |set: &mut Vec<(f64, f64)>, s: f64, e: f64| match set.last_mut() {
        Some(last) if last.1 == s => last.1 = e,
        _ => set.push((s, e)),
    };
    for w in cuts.windows(2) {
        let mid = 0.5 * (w[0] + w[1]);
        let a = stim.a.value(mid) > INPUT_THRESHOLD;
        let b = stim.b.value(mid) > INPUT_THRESHOLD;
        let v = vtx_level(a, b);
        if v > 0.0 {
            push(&mut low, w[0], w[1]);
        } else if v < 0.0 {
            push(&mut high, w[0], w[1]);
        }
    }
    (low, high)
}

/// Asserted spans of each output in the behavioral model.
#[derive(Debug, Clone, PartialEq)]
pub struct BehavioralOutputs {
    pub dls_active: Vec<(f64, f64)>,
    pub dhs_active: Vec<(f64, f64)>,
}

/// Each enable span `[s, e)` asserts its output over `[s + delay_on,
/// e + delay_off)`; spans that come out empty are dropped.
pub fn behavioral_events(stim: &BridgeStimulus, delay_on: f64, delay_off: f64, t_stop: f64) -> Result<BehavioralOutputs> {
    require_non_negative("delay_on", delay_on)?;
    require_non_negative("delay_off", delay_off)?;
    let (low, high) = enable_intervals(stim, t_stop);
    let shift = |set: Vec<(f64, f64)>| -> Vec<(f64, f64)> {
        let mut out: Vec<(f64, f64)> = Vec::new();
        for (s, e) in set {
            let (s, e) = (s + delay_on, e + delay_off);
            if e <= s {
                continue;
            }
            match out.last_mut() {
                Some(last) if s <= last.1 => last.1 = last.1.max(e),
                _ => out.push((s, e)),
            }
        }
        out
    };
    Ok(BehavioralOutputs {
        dls_active: shift(low),
        dhs_active: shift(high),
    })
}

/// Behavioral bridge sampled every `dt` up to the stimulus end plus
/// `delay_on + delay_off`. Channels `v(dls)`, `v(dhs)` (0 V asserted) and
/// `v(VTX)`.
pub fn behavioral_bridge(stim: &BridgeStimulus, delay_on: f64, delay_off: f64, dt: f64) -> Result<Trace> {
    require_positive("dt", dt)?;
    let t_stop = stim.duration() + delay_on + delay_off + dt;
    let ev = behavioral_events(stim, delay_on, delay_off, t_stop)?;
    let n = (t_stop / dt).ceil() as usize + 1;
    let time: Vec<f64> = (0..n).map(|i| i as f64 * dt).collect();
    let level = |spans: &[(f64, f64)], t: f64| -> f64 {
        let i = spans.partition_point(|&(s, _)| s <= t);
        if i > 0 && t < spans[i - 1].1 {
            0.0
        } else {
            BEHAVIORAL_HIGH
        }
    };
    let dls = time.iter().map(|&t| level(&ev.dls_active, t)).collect();
    let dhs = time.iter().map(|&t| level(&ev.dhs_active, t)).collect();
    let vtx = time
        .iter()
        .map(|&t| vtx_level(stim.a.value(t) > INPUT_THRESHOLD, stim.b.value(t) > INPUT_THRESHOLD))
        .collect();
    let mut tr = Trace::new(time);
    tr.insert_channel(DLS, dls);
    tr.insert_channel(DHS, dhs);
    tr.insert_channel(nodes::VTX, vtx);
    tr.set_metadata("mode", "behavioral");
    Ok(tr)
}

/// Full transient of the bridge with a `v(VTX)` channel added.
///
/// The receivers start powered with their outputs released; the bridge
/// inputs start from 0 V.
pub fn transient_bridge(cfg: &HalfBridgeConfig, stim: &BridgeStimulus, opts: &SimOptions) -> Result<Trace> {
    stim.validate()?;
    let circuit = build_halfbridge(cfg, stim.a.clone(), stim.b.clone())?;
    let mut opts = opts.clone();
    let va = format!("v({})", nodes::A);
    let vb = format!("v({})", nodes::B);
    if let Some(ch) = opts.channels.as_mut() {
        for need in [&va, &vb] {
            if !ch.contains(need) {
                ch.push(need.clone());
            }
        }
    }
    let supply = cfg.receiver.supply;
    let init = InitialState::default()
        .set("v(vrxls)", supply)
        .set("v(vrxhs)", supply)
        .set(DLS, supply)
        .set(DHS, supply);
    let mut tr = transient(&circuit, &opts, Some(&init))?;
    let vtx = tr.difference(&vb, &va)?;
    tr.insert_channel(nodes::VTX, vtx);
    Ok(tr)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LockoutReport {
    pub lockout_ok: bool,
    /// Longest span with both outputs asserted.
    pub overlap_worst: f64,
}

/// Scans for spans where both `v(dls)` and `v(dhs)` are below `v_active`.
/// A span is its sample count times the sample interval; lockout holds when
/// the worst span is under two sample intervals.
pub fn lockout_check(trace: &Trace, v_active: f64) -> Result<LockoutReport> {
    let dls = trace.channel(DLS)?;
    let dhs = trace.channel(DHS)?;
    let dt = trace.sample_interval();
    let (mut run, mut worst) = (0usize, 0usize);
    for (l, h) in dls.iter().zip(dhs) {
        if *l < v_active && *h < v_active {
            run += 1;
            worst = worst.max(run);
        } else {
            run = 0;
        }
    }
    let overlap_worst = worst as f64 * dt;
    Ok(LockoutReport {
        lockout_ok: worst < 2,
        overlap_worst,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SpanStats {
    pub min: f64,
    pub mean: f64,
    pub max: f64,
    pub count: usize,
}

impl SpanStats {
    fn from(v: &[f64]) -> Option<Self> {
        if v.is_empty() {
            return None;
        }
        Some(Self {
            min: v.iter().copied().fold(f64::INFINITY, f64::min),
            mean: v.iter().sum::<f64>() / v.len() as f64,
            max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            count: v.len(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeadTimeReport {
    /// DLS released, then DHS asserted.
    pub low_to_high: Option<SpanStats>,
    /// DHS released, then DLS asserted.
    pub high_to_low: Option<SpanStats>,
}

/// Gaps from one output releasing (rising through `v_active`) to the other
/// asserting (falling through `v_active`). Negative when they overlap.
fn handovers(time: &[f64], from: &[f64], to: &[f64], v_active: f64) -> Vec<f64> {
    let from_assert = falling_crossings(time, from, v_active);
    let from_release = rising_crossings(time, from, v_active);
    let to_assert = falling_crossings(time, to, v_active);
    let mut out = Vec::new();
    for (k, &t2) in to_assert.iter().enumerate() {
        let i = from_assert.partition_point(|&t| t < t2);
        if i == 0 {
            continue;
        }
        let f = from_assert[i - 1];
        // the receiving side must not have asserted since `from` did
        if k > 0 && to_assert[k - 1] > f {
            continue;
        }
        let j = from_release.partition_point(|&t| t <= f);
        if let Some(&r) = from_release.get(j) {
            if from_assert.get(i).is_none_or(|&next| r < next) {
                out.push(t2 - r);
            }
        }
    }
    out
}

pub fn dead_time(trace: &Trace, v_active: f64) -> Result<DeadTimeReport> {
    let time = trace.time();
    let dls = trace.channel(DLS)?;
    let dhs = trace.channel(DHS)?;
    let l2h = handovers(time, dls, dhs, v_active);
    let h2l = handovers(time, dhs, dls, v_active);
    if l2h.is_empty() && h2l.is_empty() {
        return Err(Error::NoHandovers);
    }
    Ok(DeadTimeReport {
        low_to_high: SpanStats::from(&l2h),
        high_to_low: SpanStats::from(&h2l),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BridgeMetrics {
    pub lockout_ok: bool,
    pub overlap_worst: f64,
    pub dead_time_low_to_high: Option<SpanStats>,
    pub dead_time_high_to_low: Option<SpanStats>,
    /// Distinct V_TX plateaus, rounded to 0.1 V.
    pub v_tx_levels: Vec<f64>,
}

impl BridgeMetrics {
    /// Smallest dead time in either direction.
    pub fn dead_time_min(&self) -> Option<f64> {
        [self.dead_time_low_to_high, self.dead_time_high_to_low]
            .iter()
            .flatten()
            .map(|s| s.min)
            .reduce(f64::min)
    }

    pub fn dead_time_max(&self) -> Option<f64> {
        [self.dead_time_low_to_high, self.dead_time_high_to_low]
            .iter()
            .flatten()
            .map(|s| s.max)
            .reduce(f64::max)
    }
}

/// Levels held for at least 5% of the record.
fn plateaus(v: &[f64]) -> Vec<f64> {
    let mut counts: std::collections::BTreeMap<i64, usize> = Default::default();
    for x in v {
        *counts.entry((x * 10.0).round() as i64).or_default() += 1;
    }
    counts
        .into_iter()
        .filter(|&(_, c)| c * 20 >= v.len())
        .map(|(k, _)| k as f64 / 10.0)
        .collect()
}

pub fn bridge_metrics(trace: &Trace, v_active: f64) -> Result<BridgeMetrics> {
    let lock = lockout_check(trace, v_active)?;
    let dead = dead_time(trace, v_active)?;
    Ok(BridgeMetrics {
        lockout_ok: lock.lockout_ok,
        overlap_worst: lock.overlap_worst,
        dead_time_low_to_high: dead.low_to_high,
        dead_time_high_to_low: dead.high_to_low,
        v_tx_levels: plateaus(trace.channel(nodes::VTX)?),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthRow {
    pub a: bool,
    pub b: bool,
    pub v_tx: f64,
    /// Output extremes over the last fifth of the hold.
    pub dls_min: f64,
    pub dls_max: f64,
    pub dhs_min: f64,
    pub dhs_max: f64,
    pub pass: bool,
}

/// Output considered steadily released above this level.
pub const V_INACTIVE: f64 = 4.0;

/// Holds each of the four input combinations for `hold` seconds and checks
/// the steady outputs against [`vtx_level`].
pub fn truth_table(cfg: &HalfBridgeConfig, hold: f64, dt_max: f64, exec: Execution) -> Result<Vec<TruthRow>> {
    let combos = [(false, false), (false, true), (true, false), (true, true)];
    let rows = par::map(exec, &combos, |&(a, b)| -> Result<TruthRow> {
        let stim = BridgeStimulus::constant(a, b);
        let opts = SimOptions::new(hold, dt_max).with_channels([DLS, DHS]);
        let tr = transient_bridge(cfg, &stim, &opts)?;
        let r = tr.window(0.8 * hold, hold)?;
        let ext = |name: &str| -> Result<(f64, f64)> {
            let v = &tr.channel(name)?[r.clone()];
            Ok((
                v.iter().copied().fold(f64::INFINITY, f64::min),
                v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            ))
        };
        let (dls_min, dls_max) = ext(DLS)?;
        let (dhs_min, dhs_max) = ext(DHS)?;
        let v_tx = tr.channel(nodes::VTX)?[r.end - 1];
        let level = vtx_level(a, b);
        let asserted = |max: f64| max < V_ACTIVE;
        let released = |min: f64| min > V_INACTIVE;
        let pass = match level {
            l if l > 0.0 => asserted(dls_max) && released(dhs_min),
            l if l < 0.0 => asserted(dhs_max) && released(dls_min),
            _ => released(dls_min) && released(dhs_min),
        };
        Ok(TruthRow {
            a,
            b,
            v_tx,
            dls_min,
            dls_max,
            dhs_min,
            dhs_max,
            pass,
        })
    });
    rows.into_iter().collect()
}
