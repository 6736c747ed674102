use std::collections::BTreeMap;
use std::io::{self, Write};

use crate::error::{Error, Result};

/// Uniformly sampled simulation output.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    time: Vec<f64>,
    names: Vec<String>,
    data: Vec<Vec<f64>>,
    metadata: BTreeMap<String, String>,
}

impl Trace {
    pub fn new(time: Vec<f64>) -> Self {
        Self {
            time,
            ..Default::default()
        }
    }

    pub(crate) fn with_channels(names: Vec<String>) -> Self {
        let data = vec![Vec::new(); names.len()];
        Self {
            names,
            data,
            ..Default::default()
        }
    }

    pub(crate) fn push_sample(&mut self, t: f64, values: impl Iterator<Item = f64>) {
        self.time.push(t);
        for (col, v) in self.data.iter_mut().zip(values) {
            col.push(v);
        }
    }

    pub fn time(&self) -> &[f64] {
        &self.time
    }

    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }

    pub fn channel_names(&self) -> &[String] {
        &self.names
    }

    pub fn has_channel(&self, name: &str) -> bool {
        self.names.iter().any(|n| n == name)
    }

    pub fn channel(&self, name: &str) -> Result<&[f64]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.data[i].as_slice())
            .ok_or_else(|| Error::UnknownChannel(name.to_string()))
    }

    /// Adds or replaces a channel. Panics if the length does not match the
    /// time axis.
    pub fn insert_channel(&mut self, name: impl Into<String>, values: Vec<f64>) {
        assert_eq!(values.len(), self.time.len(), "channel length mismatch");
        let name = name.into();
        match self.names.iter().position(|n| *n == name) {
            Some(i) => self.data[i] = values,
            None => {
                self.names.push(name);
                self.data.push(values);
            }
        }
    }

    /// `a - b`, sample by sample.
    pub fn difference(&self, a: &str, b: &str) -> Result<Vec<f64>> {
        let (a, b) = (self.channel(a)?, self.channel(b)?);
        Ok(a.iter().zip(b).map(|(x, y)| x - y).collect())
    }

    /// Spacing of the uniform time axis.
    pub fn sample_interval(&self) -> f64 {
        if self.time.len() < 2 {
            0.0
        } else {
            self.time[1] - self.time[0]
        }
    }

    pub fn metadata(&self) -> &BTreeMap<String, String> {
        &self.metadata
    }

    pub fn set_metadata(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.metadata.insert(key.into(), value.into());
    }

    /// Sample index range covering `[t0, t1]`.
    pub fn window(&self, t0: f64, t1: f64) -> Result<std::ops::Range<usize>> {
        window_indices(&self.time, t0, t1)
    }

    /// Samples in `[t0, t1]` as a new trace.
    pub fn slice(&self, t0: f64, t1: f64) -> Result<Trace> {
        let r = self.window(t0, t1)?;
        Ok(Trace {
            time: self.time[r.clone()].to_vec(),
            names: self.names.clone(),
            data: self.data.iter().map(|c| c[r.clone()].to_vec()).collect(),
            metadata: self.metadata.clone(),
        })
    }

    /// CSV with a `time_s` column followed by every channel, full precision.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        write!(w, "time_s")?;
        for n in &self.names {
            write!(w, ",{n}")?;
        }
        writeln!(w)?;
        for (i, t) in self.time.iter().enumerate() {
            write!(w, "{t}")?;
            for col in &self.data {
                write!(w, ",{}", col[i])?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("CSV is ASCII")
    }
}

/// Index range of `time` within `[t0, t1]`; the window must overlap the axis.
pub fn window_indices(time: &[f64], t0: f64, t1: f64) -> Result<std::ops::Range<usize>> {
    let out = Error::WindowOutOfRange { t0, t1 };
    if time.is_empty() || t1 < t0 {
        return Err(out);
    }
    let eps = 1e-9 * (time[time.len() - 1] - time[0]).abs().max(1e-30);
    if t0 < time[0] - eps || t1 > time[time.len() - 1] + eps {
        return Err(out);
    }
    let lo = time.partition_point(|&t| t < t0 - eps);
    let hi = time.partition_point(|&t| t <= t1 + eps);
    if hi <= lo {
        return Err(out);
    }
    Ok(lo..hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let mut t = Trace::new(vec![0.0, 0.5]);
        t.insert_channel("v(a)", vec![1.0, 0.1 + 0.2]);
        let csv = t.to_csv_string();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("time_s,v(a)"));
        assert_eq!(lines.next(), Some("0,1"));
        // shortest round-trip representation
        assert_eq!(lines.next(), Some("0.5,0.30000000000000004"));
    }

    #[test]
    fn windows() {
        let t = Trace::new((0..11).map(|i| i as f64).collect());
        assert_eq!(t.window(2.0, 4.0).unwrap(), 2..5);
        assert!(t.window(-1.0, 4.0).is_err());
        assert!(t.window(4.0, 12.0).is_err());
        assert!(t.channel("nope").is_err());
    }
}
