//! Seeded Archimedean-spiral recordings with tunable tremor and speed
//! irregularity, standing in for clinical data.
//!
//! The pen follows `r = b * theta` at a speed profile that ramps up over the
//! first ~0.15 s, optionally modulated by a slow "jerk" oscillation. Tremor
//! is a radial sinusoid at `tremor_hz` plus weaker components spread over
//! 4-6 Hz; the same oscillation also modulates pressure and pen angles.
//! Samples are taken at 150 Hz.

use std::f64::consts::{PI, TAU};
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ingest::{
    serialize_record, wrap_azimuth, DatasetManifest, DrawingRecord, Label, ManifestEntry, RecordMeta, Source,
    StylusSample,
};

pub const SAMPLE_RATE_HZ: f64 = 150.0;
/// Spiral centre on the tablet, in mm.
pub const CENTER: (f64, f64) = (100.0, 100.0);
const RAMP_SECONDS: f64 = 0.15;

#[derive(Debug, Clone, PartialEq)]
pub struct SpiralParams {
    pub turns: f64,
    /// Radial growth per radian, mm.
    pub growth: f64,
    pub samples: usize,
    /// Tremor amplitude as a fraction of the gap between turns (`2 pi b`).
    pub tremor_amplitude: f64,
    pub tremor_hz: f64,
    /// Relative depth of the slow speed modulation; 0 is a smooth stroke.
    pub jerk: f64,
    pub jerk_hz: f64,
    /// Mean pen force and its relative variation.
    pub pressure: f64,
    pub pressure_variation: f64,
    pub seed: u64,
}

impl SpiralParams {
    /// A healthy-control-like stroke: steady speed, negligible tremor.
    pub fn hc_like(seed: u64) -> Self {
        SpiralParams {
            turns: 4.0,
            growth: 2.0,
            samples: 600,
            tremor_amplitude: 0.01,
            tremor_hz: 5.0,
            jerk: 0.05,
            jerk_hz: 2.0,
            pressure: 3.0,
            pressure_variation: 0.1,
            seed,
        }
    }

    /// A PD-like stroke: visible 5 Hz tremor and irregular speed.
    pub fn pd_like(seed: u64) -> Self {
        SpiralParams {
            tremor_amplitude: 0.15,
            jerk: 0.6,
            pressure: 2.2,
            pressure_variation: 0.3,
            ..Self::hc_like(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("spiral {what}")));
        if !(self.turns >= 1.0) {
            return bad("turns must be >= 1");
        }
        if self.samples < 16 {
            return bad("needs at least 16 samples");
        }
        if !(self.tremor_amplitude >= 0.0) || !(self.jerk >= 0.0) || !(self.pressure_variation >= 0.0) {
            return bad("amplitudes must be >= 0");
        }
        if !(self.growth > 0.0) || !(self.pressure > 0.0) {
            return bad("growth and pressure must be positive");
        }
        Ok(())
    }
}

/// Ideal geometry of a generated spiral: per-sample time, angle and radius.
#[derive(Debug, Clone, PartialEq)]
pub struct SpiralPath {
    pub t: Vec<f64>,
    pub theta: Vec<f64>,
    pub radius: Vec<f64>,
}

/// Arc length of `r = b theta` from 0 to `theta`.
fn arc_length(b: f64, theta: f64) -> f64 {
    0.5 * b * (theta * (1.0 + theta * theta).sqrt() + theta.asinh())
}

fn invert_arc_length(b: f64, s: f64, guess: f64) -> f64 {
    let mut th = guess.max(0.0);
    for _ in 0..50 {
        let f = arc_length(b, th) - s;
        let step = f / (b * (1.0 + th * th).sqrt());
        th = (th - step).max(0.0);
        if step.abs() < 1e-13 * (1.0 + th) {
            break;
        }
    }
    th
}

pub fn spiral_path(p: &SpiralParams) -> Result<SpiralPath> {
    p.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let n = p.samples;
    let dt = 1.0 / SAMPLE_RATE_HZ;
    let t: Vec<f64> = (0..n).map(|i| i as f64 * dt).collect();

    let (j1, j2) = (rng.gen_range(0.0..TAU), rng.gen_range(0.0..TAU));
    let speed: Vec<f64> = t
        .iter()
        .map(|&t| {
            let ramp = 1.0 - (-t / RAMP_SECONDS).exp();
            let m = 0.7 * (TAU * p.jerk_hz * t + j1).sin() + 0.3 * (TAU * 2.3 * p.jerk_hz * t + j2).sin();
            ramp * (1.0 + p.jerk * m).max(0.05)
        })
        .collect();
    let mut s = vec![0.0; n];
    for i in 1..n {
        s[i] = s[i - 1] + 0.5 * (speed[i - 1] + speed[i]) * dt;
    }
    let theta_max = TAU * p.turns;
    let scale = arc_length(p.growth, theta_max) / s[n - 1];
    let mut theta = Vec::with_capacity(n);
    let mut guess = 0.0;
    for &si in &s {
        guess = invert_arc_length(p.growth, si * scale, guess);
        theta.push(guess);
    }
    theta[n - 1] = theta_max;

    let amp = p.tremor_amplitude * TAU * p.growth;
    let phase = rng.gen_range(0.0..TAU);
    let band: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| (0.1 * amp, rng.gen_range(4.0..6.0), rng.gen_range(0.0..TAU)))
        .collect();
    let radius = t
        .iter()
        .zip(&theta)
        .map(|(&t, &th)| {
            let mut r = p.growth * th;
            if amp > 0.0 {
                r += amp * (TAU * p.tremor_hz * t + phase).sin();
                r += band.iter().map(|&(a, f, ph)| a * (TAU * f * t + ph).sin()).sum::<f64>();
            }
            r
        })
        .collect();
    Ok(SpiralPath { t, theta, radius })
}

/// One spiral recording in millimetres, centred at [`CENTER`].
pub fn gen_spiral(p: &SpiralParams, label: Label, subject_id: &str) -> Result<DrawingRecord> {
    let path = spiral_path(p)?;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed ^ 0x5eed_9e37_79b9_7f4a);
    let (pp, pa, pz) = (rng.gen_range(0.0..TAU), rng.gen_range(0.0..TAU), rng.gen_range(0.0..TAU));
    let tp = rng.gen_range(0.0..TAU);
    // tremor also shakes grip force and pen tilt
    let shake = |t: f64, lag: f64| p.tremor_amplitude * (TAU * p.tremor_hz * t + tp + lag).sin();
    let theta_max = path.theta[path.t.len() - 1];
    let samples = (0..path.t.len())
        .map(|i| {
            let (t, th, r) = (path.t[i], path.theta[i], path.radius[i]);
            let slow = p.pressure_variation * (TAU * 0.7 * t + pp).sin();
            let force = p.pressure * (1.0 + slow + 2.0 * shake(t, 0.0));
            StylusSample {
                x: CENTER.0 + r * th.cos(),
                y: CENTER.1 + r * th.sin(),
                t,
                pressure: force.clamp(0.01, 6.0),
                altitude: (0.9 + 0.1 * (TAU * 0.4 * t + pa).sin() + 0.5 * shake(t, 1.0)).clamp(0.0, PI / 2.0),
                azimuth: wrap_azimuth(1.6 + 0.2 * (TAU * 0.3 * t + pz).sin() + 0.15 * th / theta_max + shake(t, 2.0)),
                button: None,
            }
        })
        .collect();
    DrawingRecord::new(samples, RecordMeta::new(label, subject_id, Source::Synthetic))
}

/// Parameters for one cohort member, drawn around the PD-like or HC-like
/// preset.
pub fn cohort_params(label: Label, rng: &mut impl Rng) -> SpiralParams {
    let seed = rng.gen();
    let base = SpiralParams {
        turns: rng.gen_range(3.0..5.0),
        growth: rng.gen_range(1.5..2.5),
        samples: rng.gen_range(450..750),
        tremor_hz: rng.gen_range(4.0..6.0),
        jerk_hz: rng.gen_range(1.5..2.5),
        ..SpiralParams::hc_like(seed)
    };
    match label {
        Label::Pd => SpiralParams {
            tremor_amplitude: rng.gen_range(0.10..0.20),
            jerk: rng.gen_range(0.4..0.8),
            pressure: rng.gen_range(1.5..3.0),
            pressure_variation: rng.gen_range(0.2..0.4),
            ..base
        },
        Label::Hc => SpiralParams {
            tremor_amplitude: rng.gen_range(0.0..0.03),
            jerk: rng.gen_range(0.0..0.1),
            pressure: rng.gen_range(2.5..4.0),
            pressure_variation: rng.gen_range(0.05..0.15),
            ..base
        },
    }
}

/// `n_pd` PD-like and `n_hc` HC-like recordings, one subject each
/// (`PD001`, ..., `HC001`, ...), with a manifest naming `<subject>.csv`.
pub fn gen_cohort(n_pd: usize, n_hc: usize, seed: u64) -> Result<(DatasetManifest, Vec<DrawingRecord>)> {
    if n_pd == 0 || n_hc == 0 {
        return Err(Error::Config("a cohort needs at least one record per class".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut manifest = DatasetManifest::default();
    let mut records = Vec::with_capacity(n_pd + n_hc);
    for (label, count) in [(Label::Pd, n_pd), (Label::Hc, n_hc)] {
        for k in 1..=count {
            let subject = format!("{}{k:03}", label.as_str());
            let params = cohort_params(label, &mut rng);
            records.push(gen_spiral(&params, label, &subject)?);
            manifest.entries.push(ManifestEntry {
                path: PathBuf::from(format!("{subject}.csv")),
                label,
                subject_id: subject,
                task_id: "ASD".into(),
                source: Source::Synthetic,
            });
        }
    }
    Ok((manifest, records))
}

/// Writes each record as CSV next to `manifest.tsv` in `dir`.
pub fn write_cohort(dir: &Path, manifest: &DatasetManifest, records: &[DrawingRecord]) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (entry, record) in manifest.entries.iter().zip(records) {
        let path = dir.join(&entry.path);
        fs::write(&path, serialize_record(record)).map_err(|e| Error::io(&path, e))?;
    }
    let path = dir.join("manifest.tsv");
    fs::write(&path, manifest.to_text()).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
