//! Per-record min-max normalization, speed derivation and temporal
//! resampling.

use crate::error::{Error, Result};
use crate::ingest::{collapse_equal_timestamps, DrawingRecord, Feature, Label, Source, StylusSample};

/// Feature channels mapped into `[0, 1]`, sampled on `t_grid`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedTrace {
    channels: [Option<Vec<f64>>; 6],
    t_grid: Vec<f64>,
    pub label: Label,
    pub subject_id: String,
    pub task_id: String,
    pub source: Source,
}

impl NormalizedTrace {
    pub fn channel(&self, f: Feature) -> Option<&[f64]> {
        self.channels[f.index()].as_deref()
    }

    /// Like [`channel`](Self::channel) but reports absence as an error.
    pub fn require(&self, f: Feature) -> Result<&[f64]> {
        self.channel(f).ok_or(Error::MissingChannel(f.name()))
    }

    pub fn t_grid(&self) -> &[f64] {
        &self.t_grid
    }

    pub fn len(&self) -> usize {
        self.t_grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t_grid.is_empty()
    }

    /// Replaces (or adds) a channel. Values must be in `[0, 1]` and match
    /// the grid length.
    pub fn set_channel(&mut self, f: Feature, values: Vec<f64>) -> Result<()> {
        if values.len() != self.t_grid.len() {
            return Err(Error::ShapeMismatch(format!(
                "channel {} has {} values, grid has {}",
                f.name(),
                values.len(),
                self.t_grid.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::ShapeMismatch(format!(
                "channel {} value {v} outside [0, 1]",
                f.name()
            )));
        }
        self.channels[f.index()] = Some(values);
        Ok(())
    }

    /// Builds a trace directly from channel data. Intended for tests and
    /// callers that produce normalized signals themselves.
    pub fn from_channels(
        t_grid: Vec<f64>,
        channels: &[(Feature, Vec<f64>)],
        label: Label,
    ) -> Result<Self> {
        let mut trace = NormalizedTrace {
            channels: Default::default(),
            t_grid,
            label,
            subject_id: String::new(),
            task_id: "ASD".into(),
            source: Source::Synthetic,
        };
        for (f, v) in channels {
            trace.set_channel(*f, v.clone())?;
        }
        Ok(trace)
    }
}

/// Maps values onto `[0, 1]` by `(v - min) / (max - min)`; a constant
/// series maps to 0.5. Spans below `1e-9` of the largest magnitude count as
/// constant, so rounding noise is not stretched to the full range.
pub fn minmax(values: &[f64]) -> Vec<f64> {
    let (lo, hi) = bounds(values);
    scale_into(values, lo, hi)
}

fn bounds(values: &[f64]) -> (f64, f64) {
    values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

fn scale_into(values: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    let span = hi - lo;
    if !(span > 1e-9 * lo.abs().max(hi.abs())) {
        return vec![0.5; values.len()];
    }
    values
        .iter()
        .map(|&v| ((v - lo) / span).clamp(0.0, 1.0))
        .collect()
}

const RAW_FEATURES: [Feature; 5] = [
    Feature::X,
    Feature::Y,
    Feature::Azimuth,
    Feature::Altitude,
    Feature::Pressure,
];

fn raw_value(s: &StylusSample, f: Feature) -> f64 {
    match f {
        Feature::X => s.x,
        Feature::Y => s.y,
        Feature::Azimuth => s.azimuth,
        Feature::Altitude => s.altitude,
        Feature::Pressure => s.pressure,
        Feature::Velocity => unreachable!("velocity is derived"),
    }
}

/// Min/max of each raw feature over a whole dataset, for dataset-level
/// normalization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureRanges {
    ranges: [(f64, f64); 5],
}

impl FeatureRanges {
    pub fn from_records(records: &[DrawingRecord]) -> Self {
        let mut ranges = [(f64::INFINITY, f64::NEG_INFINITY); 5];
        for r in records {
            for s in r.samples() {
                for (k, f) in RAW_FEATURES.iter().enumerate() {
                    let v = raw_value(s, *f);
                    ranges[k].0 = ranges[k].0.min(v);
                    ranges[k].1 = ranges[k].1.max(v);
                }
            }
        }
        FeatureRanges { ranges }
    }
}

/// Normalization scope.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Normalization {
    #[default]
    PerRecord,
    Dataset(FeatureRanges),
}

/// Per-record min-max normalization of x, y, azimuth, altitude and
/// pressure. Consecutive samples with equal timestamps are collapsed first
/// (the first one is kept) so that the grid is strictly increasing.
pub fn minmax_normalize(record: &DrawingRecord) -> NormalizedTrace {
    normalize_with(record, Normalization::PerRecord)
}

pub fn normalize_with(record: &DrawingRecord, scope: Normalization) -> NormalizedTrace {
    let samples = collapse_equal_timestamps(record.samples());
    let mut channels: [Option<Vec<f64>>; 6] = Default::default();
    for (k, f) in RAW_FEATURES.iter().enumerate() {
        let raw: Vec<f64> = samples.iter().map(|s| raw_value(s, *f)).collect();
        let (lo, hi) = match scope {
            Normalization::PerRecord => bounds(&raw),
            Normalization::Dataset(r) => r.ranges[k],
        };
        channels[f.index()] = Some(scale_into(&raw, lo, hi));
    }
    NormalizedTrace {
        channels,
        t_grid: samples.iter().map(|s| s.t).collect(),
        label: record.label,
        subject_id: record.subject_id.clone(),
        task_id: record.task_id.clone(),
        source: record.source,
    }
}

/// Pen speed from positions and timestamps: central differences inside,
/// one-sided differences at both ends.
pub fn raw_speeds(x: &[f64], y: &[f64], t: &[f64]) -> Result<Vec<f64>> {
    let n = t.len();
    if x.len() != n || y.len() != n {
        return Err(Error::ShapeMismatch("x, y and t lengths differ".into()));
    }
    if n < 2 {
        return Ok(vec![0.0; n]);
    }
    let speed = |i: usize, j: usize| -> Result<f64> {
        let dt = t[j] - t[i];
        if !(dt > 0.0) {
            return Err(Error::DegenerateTime(i, j));
        }
        Ok((x[j] - x[i]).hypot(y[j] - y[i]) / dt)
    };
    let mut v = Vec::with_capacity(n);
    v.push(speed(0, 1)?);
    for i in 1..n - 1 {
        v.push(speed(i - 1, i + 1)?);
    }
    v.push(speed(n - 2, n - 1)?);
    Ok(v)
}

/// Adds the velocity channel: speed computed from the normalized x/y
/// channels, then min-max normalized.
pub fn derive_velocity(trace: &NormalizedTrace) -> Result<NormalizedTrace> {
    let x = trace.require(Feature::X)?;
    let y = trace.require(Feature::Y)?;
    let speeds = raw_speeds(x, y, &trace.t_grid)?;
    let mut out = trace.clone();
    out.channels[Feature::Velocity.index()] = Some(minmax(&speeds));
    Ok(out)
}

fn is_uniform(t: &[f64]) -> bool {
    if t.len() < 3 {
        return true;
    }
    let step = (t[t.len() - 1] - t[0]) / (t.len() - 1) as f64;
    let tol = step.abs() * 1e-9;
    t.windows(2).all(|w| ((w[1] - w[0]) - step).abs() <= tol)
}

/// Linearly interpolates every channel onto `n` points evenly spaced over
/// `[t_first, t_last]`.
pub fn resample_uniform(trace: &NormalizedTrace, n: usize) -> Result<NormalizedTrace> {
    if n == 0 {
        return Err(Error::ShapeMismatch("resample length must be positive".into()));
    }
    let len = trace.len();
    if len == 0 {
        return Err(Error::TooFewSamples(0));
    }
    if n == len && is_uniform(&trace.t_grid) {
        return Ok(trace.clone());
    }
    let t0 = trace.t_grid[0];
    let t1 = trace.t_grid[len - 1];
    let grid: Vec<f64> = if n == 1 {
        vec![t0]
    } else {
        (0..n)
            .map(|k| {
                if k == n - 1 {
                    t1
                } else {
                    t0 + (t1 - t0) * k as f64 / (n - 1) as f64
                }
            })
            .collect()
    };

    // segment index and fraction for each output time
    let mut stencil = Vec::with_capacity(n);
    let mut seg = 0usize;
    for &tk in &grid {
        while seg + 2 < len && trace.t_grid[seg + 1] < tk {
            seg += 1;
        }
        if len == 1 {
            stencil.push((0, 0.0));
            continue;
        }
        let (ta, tb) = (trace.t_grid[seg], trace.t_grid[seg + 1]);
        let frac = if tb > ta {
            ((tk - ta) / (tb - ta)).clamp(0.0, 1.0)
        } else {
            0.0
        };
        stencil.push((seg, frac));
    }

    let mut channels: [Option<Vec<f64>>; 6] = Default::default();
    for (k, ch) in trace.channels.iter().enumerate() {
        if let Some(vals) = ch {
            channels[k] = Some(
                stencil
                    .iter()
                    .map(|&(i, frac)| {
                        if frac == 0.0 {
                            vals[i]
                        } else {
                            let v = vals[i] + frac * (vals[i + 1] - vals[i]);
                            v.clamp(0.0, 1.0)
                        }
                    })
                    .collect(),
            );
        }
    }
    Ok(NormalizedTrace {
        channels,
        t_grid: grid,
        label: trace.label,
        subject_id: trace.subject_id.clone(),
        task_id: trace.task_id.clone(),
        source: trace.source,
    })
}
