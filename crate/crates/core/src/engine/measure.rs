//! Scalar measurements over recorded channels.

use serde::Serialize;

use super::trace::{window_indices, Trace};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FrequencyEstimate {
    pub mean: f64,
    pub std_dev: f64,
    pub periods: usize,
}

/// Times where `values` crosses `level` going upward, linearly interpolated.
pub fn rising_crossings(time: &[f64], values: &[f64], level: f64) -> Vec<f64> {
    let mut out = Vec::new();
    for i in 1..values.len().min(time.len()) {
        let (a, b) = (values[i - 1], values[i]);
        if a < level && b >= level {
            let w = (level - a) / (b - a);
            out.push(time[i - 1] + w * (time[i] - time[i - 1]));
        }
    }
    out
}

/// Same as [`rising_crossings`] for the downward direction.
pub fn falling_crossings(time: &[f64], values: &[f64], level: f64) -> Vec<f64> {
    let neg: Vec<f64> = values.iter().map(|v| -v).collect();
    rising_crossings(time, &neg, -level)
}

/// Oscillation frequency in `[t0, t1]` from rising crossings of the window
/// mean.
pub fn measure_frequency(time: &[f64], values: &[f64], window: (f64, f64)) -> Result<FrequencyEstimate> {
    let r = window_indices(time, window.0, window.1)?;
    let (t, v) = (&time[r.clone()], &values[r]);
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let crossings = rising_crossings(t, v, mean);
    if crossings.len() < 4 {
        return Err(Error::NoOscillation);
    }
    let periods: Vec<f64> = crossings.windows(2).map(|w| w[1] - w[0]).collect();
    let n = periods.len() as f64;
    let mean_period = periods.iter().sum::<f64>() / n;
    let freqs: Vec<f64> = periods.iter().map(|p| 1.0 / p).collect();
    let var = freqs.iter().map(|f| (f - 1.0 / mean_period).powi(2)).sum::<f64>() / n;
    Ok(FrequencyEstimate {
        mean: 1.0 / mean_period,
        std_dev: var.sqrt(),
        periods: periods.len(),
    })
}

/// Earliest time at which the peak-to-peak value over the following
/// oscillation period exceeds `threshold`.
///
/// The period comes from the last half of the record, where the oscillation
/// is assumed settled.
pub fn measure_startup(time: &[f64], values: &[f64], threshold: f64) -> Result<f64> {
    let n = time.len().min(values.len());
    if n < 2 {
        return Err(Error::TraceTooShort {
            reason: "need at least two samples".into(),
        });
    }
    let dt = time[1] - time[0];
    let tail = (time[n / 2], time[n - 1]);
    let window = match measure_frequency(&time[..n], &values[..n], tail) {
        Ok(f) => ((1.0 / f.mean) / dt).ceil() as usize,
        Err(_) => return Err(Error::ThresholdNotReached { threshold }),
    }
    .max(1);
    let mut deque_max: std::collections::VecDeque<usize> = Default::default();
    let mut deque_min: std::collections::VecDeque<usize> = Default::default();
    // sliding window [i, i + window] scanned from the right end
    for j in 0..n {
        while deque_max.back().is_some_and(|&k| values[k] <= values[j]) {
            deque_max.pop_back();
        }
        deque_max.push_back(j);
        while deque_min.back().is_some_and(|&k| values[k] >= values[j]) {
            deque_min.pop_back();
        }
        deque_min.push_back(j);
        let i = j.saturating_sub(window);
        while deque_max.front().is_some_and(|&k| k < i) {
            deque_max.pop_front();
        }
        while deque_min.front().is_some_and(|&k| k < i) {
            deque_min.pop_front();
        }
        let pp = values[deque_max[0]] - values[deque_min[0]];
        if pp > threshold {
            return Ok(time[i]);
        }
    }
    Err(Error::ThresholdNotReached { threshold })
}

/// Names of the two channels that give supply power.
#[derive(Debug, Clone, PartialEq)]
pub struct SupplyProbe {
    /// Voltage channel, e.g. `v(vdd)`.
    pub voltage: String,
    /// Current delivered by the supply, e.g. `i(VDD)`.
    pub current: String,
}

impl SupplyProbe {
    pub fn new(voltage: impl Into<String>, current: impl Into<String>) -> Self {
        Self {
            voltage: voltage.into(),
            current: current.into(),
        }
    }
}

/// Mean of `v · i` over `window`.
pub fn measure_power(trace: &Trace, supply: &SupplyProbe, window: (f64, f64)) -> Result<f64> {
    let v = trace.channel(&supply.voltage)?;
    let i = trace.channel(&supply.current)?;
    let r = trace.window(window.0, window.1)?;
    let n = r.len() as f64;
    Ok(r.map(|k| v[k] * i[k]).sum::<f64>() / n)
}

/// Half peak-to-peak of `values` over `[t0, t1]`.
pub fn envelope(time: &[f64], values: &[f64], window: (f64, f64)) -> Result<f64> {
    let r = window_indices(time, window.0, window.1)?;
    let v = &values[r];
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(0.5 * (hi - lo))
}
