//! Data stimulus and link measurements: PRBS/NRZ generation, propagation
//! delay, eye diagram and bit checking.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::engine::measure::{falling_crossings, rising_crossings};
use crate::engine::{transient, SimOptions, Stimulus, Trace};
use crate::error::{require_positive, Error, Result};
use crate::topologies::{build_isolator, nodes, supplies, IsolatorConfig};

/// Width of the band around the threshold that an open eye must avoid.
pub const EYE_BAND: f64 = 0.5;

/// Minimum record length for an eye, in bit periods.
pub const EYE_MIN_BITS: usize = 20;

/// Maximum bit latency searched by [`check_bits`].
pub const MAX_LATENCY_BITS: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BitPattern {
    pub bits: Vec<bool>,
    pub bit_rate: f64,
    pub low: f64,
    pub high: f64,
    pub rise_fall: f64,
}

impl BitPattern {
    /// 0/5 V levels with 10 ns edges.
    pub fn new(bits: Vec<bool>, bit_rate: f64) -> Self {
        Self {
            bits,
            bit_rate,
            low: 0.0,
            high: 5.0,
            rise_fall: 10e-9,
        }
    }

    pub fn bit_period(&self) -> f64 {
        1.0 / self.bit_rate
    }

    pub fn duration(&self) -> f64 {
        self.bits.len() as f64 * self.bit_period()
    }

    /// Midpoint of the logic levels.
    pub fn threshold(&self) -> f64 {
        0.5 * (self.low + self.high)
    }

    pub fn validate(&self) -> Result<()> {
        require_positive("bit_rate", self.bit_rate)?;
        require_positive("rise_fall", self.rise_fall)?;
        if !(self.rise_fall < 0.2 * self.bit_period()) {
            return Err(Error::invalid("rise_fall", "must be below 0.2 bit periods"));
        }
        if !(self.high > self.low) {
            return Err(Error::invalid("high", "must exceed low"));
        }
        Ok(())
    }
}

/// Seven-bit maximal-length LFSR, taps 7 and 6; each output bit is the
/// feedback bit shifted in.
pub fn prbs7(seed: u8, n: usize) -> Result<Vec<bool>> {
    let mut state = seed & 0x7f;
    if state == 0 || seed > 0x7f {
        return Err(Error::invalid("seed", "must be a nonzero 7-bit value"));
    }
    Ok((0..n)
        .map(|_| {
            let fb = ((state >> 6) ^ (state >> 5)) & 1;
            state = ((state << 1) | fb) & 0x7f;
            fb == 1
        })
        .collect())
}

/// Piecewise-linear NRZ waveform: each edge starts on the bit boundary and
/// lasts `rise_fall`.
pub fn nrz_stimulus(p: &BitPattern) -> Result<Stimulus> {
    p.validate()?;
    let level = |b: bool| if b { p.high } else { p.low };
    let t_bit = p.bit_period();
    let first = p.bits.first().copied().unwrap_or(false);
    let mut points = vec![(0.0, level(first))];
    let mut prev = first;
    for (i, &b) in p.bits.iter().enumerate().skip(1) {
        if b != prev {
            let t = i as f64 * t_bit;
            if t > points[points.len() - 1].0 {
                points.push((t, level(prev)));
            }
            points.push((t + p.rise_fall, level(b)));
            prev = b;
        }
    }
    let end = p.duration();
    if end > points[points.len() - 1].0 {
        points.push((end, level(prev)));
    }
    Stimulus::new(points)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EdgeStats {
    pub mean: f64,
    pub max: f64,
    pub count: usize,
}

impl EdgeStats {
    fn from(delays: &[f64]) -> Self {
        if delays.is_empty() {
            return Self::default();
        }
        Self {
            mean: delays.iter().sum::<f64>() / delays.len() as f64,
            max: delays.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            count: delays.len(),
        }
    }
}

/// Delays grouped by the direction of the input edge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayReport {
    pub rise: EdgeStats,
    pub fall: EdgeStats,
    /// Input edges with no matching output edge before the next input edge.
    pub lost_edges: usize,
}

impl DelayReport {
    /// Mean over every matched edge.
    pub fn mean(&self) -> f64 {
        let n = self.rise.count + self.fall.count;
        (self.rise.mean * self.rise.count as f64 + self.fall.mean * self.fall.count as f64) / n as f64
    }
}

/// For every input threshold crossing, time to the first output crossing in
/// the matching direction (opposite when `output_inverted`).
pub fn propagation_delay(
    time: &[f64],
    input: &[f64],
    output: &[f64],
    threshold: f64,
    output_inverted: bool,
) -> Result<DelayReport> {
    let in_rise = rising_crossings(time, input, threshold);
    let in_fall = falling_crossings(time, input, threshold);
    let out_rise = rising_crossings(time, output, threshold);
    let out_fall = falling_crossings(time, output, threshold);
    let mut edges: Vec<(f64, bool)> = in_rise.iter().map(|&t| (t, true)).chain(in_fall.iter().map(|&t| (t, false))).collect();
    edges.sort_by(|a, b| a.0.total_cmp(&b.0));
    if edges.is_empty() {
        return Err(Error::NoEdges);
    }
    let (mut rise, mut fall, mut lost) = (Vec::new(), Vec::new(), 0);
    for (k, &(t_in, rising)) in edges.iter().enumerate() {
        let t_next = edges.get(k + 1).map_or(f64::INFINITY, |e| e.0);
        let outs = if rising != output_inverted { &out_rise } else { &out_fall };
        let i = outs.partition_point(|&t| t < t_in);
        match outs.get(i) {
            Some(&t_out) if t_out < t_next => {
                if rising {
                    rise.push(t_out - t_in)
                } else {
                    fall.push(t_out - t_in)
                }
            }
            _ => lost += 1,
        }
    }
    if rise.is_empty() && fall.is_empty() {
        return Err(Error::NoEdges);
    }
    Ok(DelayReport {
        rise: EdgeStats::from(&rise),
        fall: EdgeStats::from(&fall),
        lost_edges: lost,
    })
}

/// Folded output samples with the eye opening.
#[derive(Debug, Clone, PartialEq)]
pub struct EyeDiagram {
    pub eye_height: f64,
    pub eye_width: f64,
    /// `(phase, voltage, recovered bit)` for every folded sample.
    pub samples: Vec<(f64, f64, bool)>,
}

impl EyeDiagram {
    /// CSV with columns `phase_s,voltage_v,bit_class`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "phase_s,voltage_v,bit_class")?;
        for (p, v, b) in &self.samples {
            writeln!(w, "{p},{v},{}", u8::from(*b))?;
        }
        Ok(())
    }
}

/// Folds `output` modulo `bit_period`, with unit intervals starting at
/// `alignment_offset + k·bit_period`.
///
/// Each interval is classified by its value at the centre. The height is
/// taken over the central 20% of the interval; the width is the longest run
/// of phases where no trace is inside `threshold ± 0.5 V`.
pub fn eye_diagram(time: &[f64], output: &[f64], bit_period: f64, alignment_offset: f64, threshold: f64) -> Result<EyeDiagram> {
    require_positive("bit_period", bit_period)?;
    if time.len() < 2 {
        return Err(Error::TraceTooShort {
            reason: "need at least two samples".into(),
        });
    }
    let dt = time[1] - time[0];
    let t_end = time[time.len() - 1];
    let bins = (bit_period / dt).round().max(1.0) as usize;
    let n_ui = ((t_end - time[0] - alignment_offset) / bit_period + 1e-9).floor();
    if !(n_ui >= EYE_MIN_BITS as f64) {
        return Err(Error::TraceTooShort {
            reason: format!("eye needs at least {EYE_MIN_BITS} bit periods"),
        });
    }
    let n_ui = n_ui as usize;
    let value_at = |t: f64| -> f64 {
        let i = (((t - time[0]) / dt).round() as usize).min(output.len() - 1);
        output[i]
    };

    let mut classes = Vec::with_capacity(n_ui);
    for k in 0..n_ui {
        let start = time[0] + alignment_offset + k as f64 * bit_period;
        classes.push(value_at(start + 0.5 * bit_period) > threshold);
    }
    if classes.iter().all(|&c| c == classes[0]) {
        return Err(Error::NoTransitions);
    }

    let mut samples = Vec::new();
    let mut bin_open = vec![true; bins];
    let (mut high_min, mut low_max) = (f64::INFINITY, f64::NEG_INFINITY);
    let (lo_band, hi_band) = (threshold - EYE_BAND, threshold + EYE_BAND);
    for (k, &class) in classes.iter().enumerate() {
        let start = time[0] + alignment_offset + k as f64 * bit_period;
        let i0 = ((start - time[0]) / dt).ceil() as usize;
        for b in 0..bins {
            let i = i0 + b;
            if i >= output.len() {
                break;
            }
            let phase = time[i] - start;
            let v = output[i];
            samples.push((phase, v, class));
            if v > lo_band && v < hi_band {
                bin_open[b] = false;
            }
            let frac = phase / bit_period;
            if (0.4..=0.6).contains(&frac) {
                if class {
                    high_min = high_min.min(v);
                } else {
                    low_max = low_max.max(v);
                }
            }
        }
    }
    let eye_height = if high_min.is_finite() && low_max.is_finite() {
        (high_min - low_max).max(0.0)
    } else {
        0.0
    };
    let eye_width = (longest_circular_run(&bin_open) as f64 * dt).min(bit_period);
    Ok(EyeDiagram {
        eye_height,
        eye_width,
        samples,
    })
}

fn longest_circular_run(open: &[bool]) -> usize {
    let n = open.len();
    if open.iter().all(|&o| o) {
        return n;
    }
    let (mut best, mut run) = (0, 0);
    for i in 0..2 * n {
        if open[i % n] {
            run += 1;
            best = best.max(run.min(n));
        } else {
            run = 0;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BitCheck {
    pub errors: usize,
    pub checked: usize,
    /// Whole-bit delay between sent and received sequences.
    pub latency_bits: usize,
}

/// Samples `output` at each bit centre plus `sample_offset`, aligns the
/// received bits with `sent` by best agreement over shifts up to
/// [`MAX_LATENCY_BITS`], and counts mismatches.
pub fn check_bits(
    time: &[f64],
    output: &[f64],
    sent: &BitPattern,
    sample_offset: f64,
    output_inverted: bool,
) -> Result<BitCheck> {
    let t_bit = sent.bit_period();
    if !(sample_offset.abs() < t_bit) {
        return Err(Error::invalid("sample_offset", "must lie within one bit period"));
    }
    if time.len() < 2 {
        return Err(Error::TraceTooShort {
            reason: "need at least two samples".into(),
        });
    }
    let dt = time[1] - time[0];
    let t_end = time[time.len() - 1];
    let thr = sent.threshold();
    let mut received = Vec::new();
    for k in 0.. {
        let t = time[0] + (k as f64 + 0.5) * t_bit + sample_offset;
        if t > t_end || k >= sent.bits.len() + MAX_LATENCY_BITS {
            break;
        }
        if t < time[0] {
            continue;
        }
        let i = (((t - time[0]) / dt).round() as usize).min(output.len() - 1);
        received.push((output[i] > thr) != output_inverted);
    }
    if received.is_empty() {
        return Err(Error::TraceTooShort {
            reason: "no bit centre inside the trace".into(),
        });
    }
    let max_shift = MAX_LATENCY_BITS.min(received.len().saturating_sub(1));
    let score = |shift: usize| -> (usize, usize) {
        let mut agree = 0;
        let mut n = 0;
        for k in shift..received.len() {
            if let Some(&s) = sent.bits.get(k - shift) {
                n += 1;
                agree += usize::from(received[k] == s);
            }
        }
        (agree, n)
    };
    let fractions: Vec<(usize, f64)> = (0..=max_shift)
        .filter_map(|s| {
            let (a, n) = score(s);
            (n > 0).then(|| (s, a as f64 / n as f64))
        })
        .collect();
    let &(best, best_frac) = fractions
        .iter()
        .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
        .expect("shift 0 always scores");
    if let Some(&(other, _)) = fractions.iter().find(|(s, f)| *s != best && *f >= best_frac - 0.05) {
        return Err(Error::AmbiguousLatency {
            first: best.min(other),
            second: best.max(other),
        });
    }
    let (agree, n) = score(best);
    Ok(BitCheck {
        errors: n - agree,
        checked: n,
        latency_bits: best,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkMetrics {
    pub prop_delay_rise: EdgeStats,
    pub prop_delay_fall: EdgeStats,
    pub mean_delay: f64,
    pub lost_edges: usize,
    pub eye_height: f64,
    pub eye_width: f64,
    pub bit_errors: usize,
    pub bits_checked: usize,
    pub latency_bits: usize,
}

/// Simulation output of one link run.
#[derive(Debug, Clone)]
pub struct LinkRun {
    pub trace: Trace,
    pub eye: EyeDiagram,
    pub metrics: LinkMetrics,
}

/// Simulation settings for a link run at the default step.
pub fn link_options(pattern: &BitPattern, cfg: &IsolatorConfig) -> SimOptions {
    let f_osc = crate::devices::resonant_frequency(
        cfg.transformer.l_primary,
        crate::devices::effective_tank_capacitance(&cfg.mosfet, crate::devices::TankTopology::CrossCoupledPair),
    );
    let dt = SimOptions::default_dt_max(Some(pattern.bit_period()), Some(f_osc));
    SimOptions::new(pattern.duration(), dt).with_channels([
        format!("v({})", nodes::DX),
        format!("v({})", nodes::DY),
        supplies::TX.to_string(),
        supplies::RX.to_string(),
    ])
}

/// Drives `pattern` through the isolator and measures the link.
///
/// The eye is aligned on the mean delay so output transitions sit on the
/// unit-interval boundary; bits are sampled at the same point.
pub fn run_link(cfg: &IsolatorConfig, pattern: &BitPattern, opts: &SimOptions) -> Result<LinkRun> {
    let stim = nrz_stimulus(pattern)?;
    let circuit = build_isolator(cfg, stim)?;
    let trace = transient(&circuit, opts, None)?;
    let metrics_and_eye = measure_link(&trace, pattern)?;
    Ok(LinkRun {
        trace,
        eye: metrics_and_eye.1,
        metrics: metrics_and_eye.0,
    })
}

/// Link metrics from a trace holding `v(dx)` and `v(dy)`.
pub fn measure_link(trace: &Trace, pattern: &BitPattern) -> Result<(LinkMetrics, EyeDiagram)> {
    let time = trace.time();
    let dx = trace.channel(&format!("v({})", nodes::DX))?;
    let dy = trace.channel(&format!("v({})", nodes::DY))?;
    let thr = pattern.threshold();
    let delays = propagation_delay(time, dx, dy, thr, true)?;
    let t_bit = pattern.bit_period();
    let offset = delays.mean().rem_euclid(t_bit);
    let eye = eye_diagram(time, dy, t_bit, offset, thr)?;
    let sample_offset = if offset > 0.5 * t_bit { offset - t_bit } else { offset };
    let check = check_bits(time, dy, pattern, sample_offset, true)?;
    Ok((
        LinkMetrics {
            prop_delay_rise: delays.rise,
            prop_delay_fall: delays.fall,
            mean_delay: delays.mean(),
            lost_edges: delays.lost_edges,
            eye_height: eye.eye_height,
            eye_width: eye.eye_width,
            bit_errors: check.errors,
            bits_checked: check.checked,
            latency_bits: check.latency_bits,
        },
        eye,
    ))
}
