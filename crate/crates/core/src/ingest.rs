//! Raw stylus recordings: the sample and record types, the record CSV
//! format, on-surface filtering and dataset manifests.
//!
//! Record files are UTF-8 CSV with a mandatory header naming the columns
//! `x, y, t, pressure, altitude, azimuth` (plus `button` for PaHaW-schema
//! files). Manifests are tab-separated:
//! `path<TAB>label<TAB>subject_id<TAB>task_id<TAB>source`.

use std::collections::HashSet;
use std::f64::consts::{FRAC_PI_2, TAU};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Diagnostic class. PD is the positive class everywhere in this crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Hc,
    Pd,
}

impl Label {
    /// Class index used by the networks: 0 = HC, 1 = PD.
    pub fn index(self) -> usize {
        match self {
            Label::Hc => 0,
            Label::Pd => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Label> {
        match i {
            0 => Some(Label::Hc),
            1 => Some(Label::Pd),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Hc => "HC",
            Label::Pd => "PD",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim() {
            "PD" | "pd" => Ok(Label::Pd),
            "HC" | "hc" => Ok(Label::Hc),
            other => Err(other.to_string()),
        }
    }
}

/// Column layout of a record file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Schema {
    DraWritePd,
    PaHaW,
}

impl Schema {
    pub fn columns(self) -> &'static [&'static str] {
        match self {
            Schema::DraWritePd => &["x", "y", "t", "pressure", "altitude", "azimuth"],
            Schema::PaHaW => &["x", "y", "t", "pressure", "altitude", "azimuth", "button"],
        }
    }
}

impl FromStr for Schema {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "drawritepd" => Ok(Schema::DraWritePd),
            "pahaw" => Ok(Schema::PaHaW),
            other => Err(other.to_string()),
        }
    }
}

/// Where a record came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Source {
    DraWritePd,
    PaHaW,
    Synthetic,
}

impl Source {
    pub fn schema(self) -> Schema {
        match self {
            Source::PaHaW => Schema::PaHaW,
            Source::DraWritePd | Source::Synthetic => Schema::DraWritePd,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Source::DraWritePd => "DraWritePD",
            Source::PaHaW => "PaHaW",
            Source::Synthetic => "Synthetic",
        }
    }
}

impl From<Schema> for Source {
    fn from(s: Schema) -> Self {
        match s {
            Schema::DraWritePd => Source::DraWritePd,
            Schema::PaHaW => Source::PaHaW,
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Source {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "drawritepd" => Ok(Source::DraWritePd),
            "pahaw" => Ok(Source::PaHaW),
            "synthetic" => Ok(Source::Synthetic),
            other => Err(other.to_string()),
        }
    }
}

/// One time-stamped pen reading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StylusSample {
    pub x: f64,
    pub y: f64,
    /// Seconds.
    pub t: f64,
    pub pressure: f64,
    /// Elevation angle in radians, `[0, pi/2]`.
    pub altitude: f64,
    /// Heading angle in radians, `[0, 2pi)`.
    pub azimuth: f64,
    /// 1 = on surface, 0 = in air. Only PaHaW-schema records carry it.
    pub button: Option<u8>,
}

impl StylusSample {
    /// Checks the per-sample invariants. Azimuth must already be wrapped.
    pub fn validate(&self) -> std::result::Result<(), String> {
        for (name, v) in [("x", self.x), ("y", self.y), ("t", self.t)] {
            if !v.is_finite() {
                return Err(format!("{name} is not finite"));
            }
        }
        if !(self.pressure >= 0.0 && self.pressure.is_finite()) {
            return Err(format!("pressure {} is negative or not finite", self.pressure));
        }
        if !(0.0..=FRAC_PI_2).contains(&self.altitude) {
            return Err(format!("altitude {} outside [0, pi/2]", self.altitude));
        }
        if !(0.0..TAU).contains(&self.azimuth) {
            return Err(format!("azimuth {} outside [0, 2pi)", self.azimuth));
        }
        if let Some(b) = self.button {
            if b > 1 {
                return Err(format!("button {b} is not 0 or 1"));
            }
        }
        Ok(())
    }
}

/// Wraps an angle into `[0, 2pi)`.
pub fn wrap_azimuth(a: f64) -> f64 {
    let w = a.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Identity and label fields carried alongside the samples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordMeta {
    pub label: Label,
    pub subject_id: String,
    pub task_id: String,
    pub source: Source,
}

impl RecordMeta {
    pub fn new(label: Label, subject_id: impl Into<String>, source: Source) -> Self {
        RecordMeta {
            label,
            subject_id: subject_id.into(),
            task_id: "ASD".to_string(),
            source,
        }
    }
}

/// A validated recording of one drawing task.
#[derive(Debug, Clone, PartialEq)]
pub struct DrawingRecord {
    samples: Vec<StylusSample>,
    pub label: Label,
    pub subject_id: String,
    pub task_id: String,
    pub source: Source,
}

impl DrawingRecord {
    /// Validates and builds a record. Samples must be time-ordered, share
    /// the same button presence, and number at least two.
    pub fn new(samples: Vec<StylusSample>, meta: RecordMeta) -> Result<Self> {
        validate_samples(&samples)?;
        Ok(DrawingRecord {
            samples,
            label: meta.label,
            subject_id: meta.subject_id,
            task_id: meta.task_id,
            source: meta.source,
        })
    }

    /// Builds a record without the length check. Used by transforms whose
    /// output is validated by a later stage.
    pub(crate) fn from_parts_unchecked(samples: Vec<StylusSample>, meta: RecordMeta) -> Self {
        DrawingRecord {
            samples,
            label: meta.label,
            subject_id: meta.subject_id,
            task_id: meta.task_id,
            source: meta.source,
        }
    }

    pub fn samples(&self) -> &[StylusSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn has_button(&self) -> bool {
        self.samples.first().is_some_and(|s| s.button.is_some())
    }

    pub fn meta(&self) -> RecordMeta {
        RecordMeta {
            label: self.label,
            subject_id: self.subject_id.clone(),
            task_id: self.task_id.clone(),
            source: self.source,
        }
    }

    /// Same metadata, different samples (validated).
    pub fn with_samples(&self, samples: Vec<StylusSample>) -> Result<Self> {
        DrawingRecord::new(samples, self.meta())
    }
}

fn validate_samples(samples: &[StylusSample]) -> Result<()> {
    if samples.len() < 2 {
        return Err(Error::TooFewSamples(samples.len()));
    }
    let with_button = samples[0].button.is_some();
    for (i, s) in samples.iter().enumerate() {
        s.validate().map_err(|reason| Error::InvalidSample { line: i + 2, reason })?;
        if s.button.is_some() != with_button {
            return Err(Error::InvalidSample {
                line: i + 2,
                reason: "button column present on some samples only".into(),
            });
        }
        if i > 0 && s.t < samples[i - 1].t {
            return Err(Error::NonMonotoneTime {
                line: i + 2,
                prev: samples[i - 1].t,
                next: s.t,
            });
        }
    }
    Ok(())
}

/// Parses a record CSV. Line numbers in errors are 1-based and count the
/// header as line 1.
pub fn parse_record(text: &str, schema: Schema, meta: RecordMeta) -> Result<DrawingRecord> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or(Error::TooFewSamples(0))?;
    let names: Vec<&str> = header.split(',').map(str::trim).collect();
    let mut index = Vec::with_capacity(7);
    for &col in schema.columns() {
        let pos = names
            .iter()
            .position(|n| *n == col)
            .ok_or_else(|| Error::MissingColumn(col.to_string()))?;
        index.push(pos);
    }

    let mut samples = Vec::new();
    let mut line_nos = Vec::new();
    for (lineno, line) in lines {
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        let mut vals = [0.0f64; 7];
        for (k, &pos) in index.iter().enumerate() {
            let cell = cells.get(pos).copied().unwrap_or("");
            vals[k] = cell.parse::<f64>().map_err(|_| Error::NonNumericCell {
                line: lineno + 1,
                column: schema.columns()[k].to_string(),
                cell: cell.to_string(),
            })?;
        }
        let button = match schema {
            Schema::PaHaW => {
                let b = vals[6];
                if b != 0.0 && b != 1.0 {
                    return Err(Error::InvalidSample {
                        line: lineno + 1,
                        reason: format!("button {b} is not 0 or 1"),
                    });
                }
                Some(b as u8)
            }
            Schema::DraWritePd => None,
        };
        samples.push(StylusSample {
            x: vals[0],
            y: vals[1],
            t: vals[2],
            pressure: vals[3],
            altitude: vals[4],
            azimuth: wrap_azimuth(vals[5]),
            button,
        });
        line_nos.push(lineno + 1);
    }

    for i in 1..samples.len() {
        if samples[i].t < samples[i - 1].t {
            return Err(Error::NonMonotoneTime {
                line: line_nos[i],
                prev: samples[i - 1].t,
                next: samples[i].t,
            });
        }
    }
    for (s, &line) in samples.iter().zip(&line_nos) {
        s.validate()
            .map_err(|reason| Error::InvalidSample { line, reason })?;
    }
    let mut meta = meta;
    if meta.source != Source::Synthetic {
        meta.source = schema.into();
    }
    DrawingRecord::new(samples, meta)
}

/// Writes a record in the CSV format read by [`parse_record`]. Floats use
/// the shortest representation that parses back to the same value.
pub fn serialize_record(record: &DrawingRecord) -> String {
    let with_button = record.has_button();
    let mut out = String::with_capacity(record.len() * 64);
    out.push_str("x,y,t,pressure,altitude,azimuth");
    if with_button {
        out.push_str(",button");
    }
    out.push('\n');
    for s in record.samples() {
        out.push_str(&format!(
            "{},{},{},{},{},{}",
            s.x, s.y, s.t, s.pressure, s.altitude, s.azimuth
        ));
        if let Some(b) = s.button {
            out.push_str(&format!(",{b}"));
        }
        out.push('\n');
    }
    out
}

/// Keeps only on-surface samples: `button == 1` when the record carries
/// button states, `pressure > 0` otherwise.
pub fn filter_on_surface(record: &DrawingRecord) -> Result<DrawingRecord> {
    let kept: Vec<StylusSample> = if record.has_button() {
        record
            .samples()
            .iter()
            .filter(|s| s.button == Some(1))
            .copied()
            .collect()
    } else {
        record
            .samples()
            .iter()
            .filter(|s| s.pressure > 0.0)
            .copied()
            .collect()
    };
    record.with_samples(kept)
}

/// When to apply [`filter_on_surface`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OnSurface {
    /// On for PaHaW-schema records, off otherwise.
    #[default]
    Auto,
    Always,
    Never,
}

impl FromStr for OnSurface {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim() {
            "auto" => Ok(OnSurface::Auto),
            "true" | "on" | "always" => Ok(OnSurface::Always),
            "false" | "off" | "never" => Ok(OnSurface::Never),
            other => Err(other.to_string()),
        }
    }
}

impl OnSurface {
    pub fn apply(self, record: &DrawingRecord) -> Result<DrawingRecord> {
        let on = match self {
            OnSurface::Auto => record.source.schema() == Schema::PaHaW,
            OnSurface::Always => true,
            OnSurface::Never => false,
        };
        if on {
            filter_on_surface(record)
        } else {
            Ok(record.clone())
        }
    }
}

/// Drops samples whose timestamp equals the previous kept one.
pub fn collapse_equal_timestamps(samples: &[StylusSample]) -> Vec<StylusSample> {
    let mut out: Vec<StylusSample> = Vec::with_capacity(samples.len());
    for s in samples {
        match out.last() {
            Some(prev) if prev.t == s.t => {}
            _ => out.push(*s),
        }
    }
    out
}

/// A dynamic feature channel. The declaration order is the canonical
/// channel order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Feature {
    X,
    Y,
    Azimuth,
    Altitude,
    Pressure,
    Velocity,
}

impl Feature {
    pub const ALL: [Feature; 6] = [
        Feature::X,
        Feature::Y,
        Feature::Azimuth,
        Feature::Altitude,
        Feature::Pressure,
        Feature::Velocity,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Feature::X => "x",
            Feature::Y => "y",
            Feature::Azimuth => "azimuth",
            Feature::Altitude => "altitude",
            Feature::Pressure => "pressure",
            Feature::Velocity => "velocity",
        }
    }

    /// One-letter code: x, y, a, l, p, v.
    pub fn code(self) -> char {
        match self {
            Feature::X => 'x',
            Feature::Y => 'y',
            Feature::Azimuth => 'a',
            Feature::Altitude => 'l',
            Feature::Pressure => 'p',
            Feature::Velocity => 'v',
        }
    }

    pub fn from_code(s: &str) -> Option<Feature> {
        match s.trim() {
            "x" => Some(Feature::X),
            "y" => Some(Feature::Y),
            "a" | "azimuth" => Some(Feature::Azimuth),
            "l" | "altitude" => Some(Feature::Altitude),
            "p" | "pressure" => Some(Feature::Pressure),
            "v" | "velocity" => Some(Feature::Velocity),
            _ => None,
        }
    }
}

/// Which dynamic features feed the encoders. Positions are always on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FeatureSet {
    azimuth: bool,
    altitude: bool,
    pressure: bool,
    velocity: bool,
}

impl FeatureSet {
    /// `{x, y}`
    pub const POSITIONS: FeatureSet = FeatureSet {
        azimuth: false,
        altitude: false,
        pressure: false,
        velocity: false,
    };
    /// `{x, y, v}`
    pub const POSITIONS_VELOCITY: FeatureSet = FeatureSet {
        velocity: true,
        ..FeatureSet::POSITIONS
    };
    /// `{x, y, a, l, p}`
    pub const POSITIONS_PEN: FeatureSet = FeatureSet {
        azimuth: true,
        altitude: true,
        pressure: true,
        velocity: false,
    };
    /// All six features.
    pub const ALL: FeatureSet = FeatureSet {
        azimuth: true,
        altitude: true,
        pressure: true,
        velocity: true,
    };

    pub fn new(azimuth: bool, altitude: bool, pressure: bool, velocity: bool) -> Self {
        FeatureSet {
            azimuth,
            altitude,
            pressure,
            velocity,
        }
    }

    pub fn contains(&self, f: Feature) -> bool {
        match f {
            Feature::X | Feature::Y => true,
            Feature::Azimuth => self.azimuth,
            Feature::Altitude => self.altitude,
            Feature::Pressure => self.pressure,
            Feature::Velocity => self.velocity,
        }
    }

    /// Enabled features in canonical order.
    pub fn enabled(&self) -> Vec<Feature> {
        Feature::ALL.into_iter().filter(|f| self.contains(*f)).collect()
    }

    pub fn count(&self) -> usize {
        self.enabled().len()
    }

    /// Bit i set when `Feature::ALL[i]` is enabled.
    pub fn mask(&self) -> u32 {
        self.enabled().iter().fold(0, |m, f| m | (1 << f.index()))
    }

    pub fn from_mask(mask: u32) -> Self {
        FeatureSet {
            azimuth: mask & (1 << 2) != 0,
            altitude: mask & (1 << 3) != 0,
            pressure: mask & (1 << 4) != 0,
            velocity: mask & (1 << 5) != 0,
        }
    }

    /// Codes joined with `+`, e.g. `x+y+a+l+p+v`.
    pub fn label(&self) -> String {
        self.enabled()
            .iter()
            .map(|f| f.code().to_string())
            .collect::<Vec<_>>()
            .join("+")
    }

    /// The four feature subsets evaluated per dimensionality.
    pub fn ablation_grid() -> [FeatureSet; 4] {
        [
            FeatureSet::POSITIONS,
            FeatureSet::POSITIONS_VELOCITY,
            FeatureSet::POSITIONS_PEN,
            FeatureSet::ALL,
        ]
    }
}

impl Default for FeatureSet {
    fn default() -> Self {
        FeatureSet::ALL
    }
}

impl FromStr for FeatureSet {
    type Err = String;

    /// Accepts codes separated by `,` or `+`. `x` and `y` must be present.
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let mut fs = FeatureSet::POSITIONS;
        let mut seen = HashSet::new();
        for part in s.split([',', '+']).filter(|p| !p.trim().is_empty()) {
            let f = Feature::from_code(part).ok_or_else(|| format!("unknown feature `{part}`"))?;
            seen.insert(f);
            match f {
                Feature::X | Feature::Y => {}
                Feature::Azimuth => fs.azimuth = true,
                Feature::Altitude => fs.altitude = true,
                Feature::Pressure => fs.pressure = true,
                Feature::Velocity => fs.velocity = true,
            }
        }
        if !seen.contains(&Feature::X) || !seen.contains(&Feature::Y) {
            return Err("feature set must include x and y".into());
        }
        Ok(fs)
    }
}

/// One manifest line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: Label,
    pub subject_id: String,
    pub task_id: String,
    pub source: Source,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ClassCounts {
    pub pd: usize,
    pub hc: usize,
}

impl DatasetManifest {
    pub fn class_counts(&self) -> ClassCounts {
        self.entries.iter().fold(ClassCounts::default(), |mut c, e| {
            match e.label {
                Label::Pd => c.pd += 1,
                Label::Hc => c.hc += 1,
            }
            c
        })
    }

    /// Parses manifest text. Blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        let mut seen = HashSet::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 5 {
                return Err(Error::MalformedManifest {
                    line: line_no,
                    reason: format!("expected 5 tab-separated fields, found {}", fields.len()),
                });
            }
            let path = PathBuf::from(fields[0]);
            let label = fields[1].parse::<Label>().map_err(|label| Error::UnknownLabel {
                line: line_no,
                label,
            })?;
            let source = fields[4].parse::<Source>().map_err(|s| Error::MalformedManifest {
                line: line_no,
                reason: format!("unknown source `{s}`"),
            })?;
            if !seen.insert(path.clone()) {
                return Err(Error::DuplicatePath {
                    line: line_no,
                    path,
                });
            }
            entries.push(ManifestEntry {
                path,
                label,
                subject_id: fields[2].to_string(),
                task_id: fields[3].to_string(),
                source,
            });
        }
        Ok(DatasetManifest { entries })
    }

    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|e| {
                format!(
                    "{}\t{}\t{}\t{}\t{}\n",
                    e.path.display(),
                    e.label,
                    e.subject_id,
                    e.task_id,
                    e.source
                )
            })
            .collect()
    }
}

/// Reads a manifest and parses every record it names. Relative record paths
/// resolve against the manifest's directory.
pub fn load_manifest(path: &Path) -> Result<(DatasetManifest, Vec<DrawingRecord>)> {
    load_manifest_with(path, None)
}

/// [`load_manifest`] with every record parsed as `schema` instead of the
/// schema implied by its source.
pub fn load_manifest_with(path: &Path, schema: Option<Schema>) -> Result<(DatasetManifest, Vec<DrawingRecord>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest = DatasetManifest::parse(&text)?;
    let base = path.parent().unwrap_or(Path::new("."));

    let line_numbers: Vec<usize> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(i, _)| i + 1)
        .collect();

    let records = manifest
        .entries
        .par_iter()
        .zip(line_numbers.par_iter())
        .map(|(entry, &line)| {
            let full = base.join(&entry.path);
            if !full.is_file() {
                return Err(Error::DanglingPath { line, path: full });
            }
            let body = fs::read_to_string(&full).map_err(|e| Error::io(&full, e))?;
            let meta = RecordMeta {
                label: entry.label,
                subject_id: entry.subject_id.clone(),
                task_id: entry.task_id.clone(),
                source: entry.source,
            };
            parse_record(&body, schema.unwrap_or(entry.source.schema()), meta)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, records))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta() -> RecordMeta {
        RecordMeta::new(Label::Pd, "s1", Source::DraWritePd)
    }

    const THREE_ROWS: &str = "x,y,t,pressure,altitude,azimuth\n\
        1.0,2.0,0.0,0.5,1.0,3.0\n\
        1.5,2.5,0.01,0.6,1.0,3.1\n\
        2.0,3.0,0.02,0.7,1.1,3.2\n";

    #[test]
    fn parses_three_rows() {
        let r = parse_record(THREE_ROWS, Schema::DraWritePd, meta()).unwrap();
        assert_eq!(r.len(), 3);
        assert_eq!(r.source, Source::DraWritePd);
        assert!(!r.has_button());
        assert_eq!(r.samples()[2].x, 2.0);
    }

    #[test]
    fn decreasing_time_is_rejected() {
        let text = "x,y,t,pressure,altitude,azimuth\n0,0,0.0,1,1,1\n0,0,0.02,1,1,1\n0,0,0.01,1,1,1\n";
        let err = parse_record(text, Schema::DraWritePd, meta()).unwrap_err();
        assert!(matches!(err, Error::NonMonotoneTime { line: 4, .. }), "{err:?}");
    }

    #[test]
    fn missing_and_bad_cells() {
        let text = "x,y,t,pressure,altitude\n0,0,0,1,1\n";
        assert!(matches!(
            parse_record(text, Schema::DraWritePd, meta()),
            Err(Error::MissingColumn(c)) if c == "azimuth"
        ));
        let text = "x,y,t,pressure,altitude,azimuth\n0,zz,0,1,1,1\n0,0,1,1,1,1\n";
        assert!(matches!(
            parse_record(text, Schema::DraWritePd, meta()),
            Err(Error::NonNumericCell { line: 2, .. })
        ));
        let text = "x,y,t,pressure,altitude,azimuth\n0,0,0,1,1,1\n";
        assert!(matches!(
            parse_record(text, Schema::DraWritePd, meta()),
            Err(Error::TooFewSamples(1))
        ));
    }

    #[test]
    fn pahaw_golden_file() {
        let text = include_str!("../tests/data/pahaw_golden.csv");
        let r = parse_record(text, Schema::PaHaW, meta()).unwrap();
        assert_eq!(r.source, Source::PaHaW);
        assert_eq!(r.len(), 6);
        let buttons: Vec<u8> = r.samples().iter().map(|s| s.button.unwrap()).collect();
        assert_eq!(buttons, vec![1, 1, 0, 0, 1, 1]);
        // values checked by hand against the file
        assert_eq!(r.samples()[0].x, 5210.0);
        assert_eq!(r.samples()[3].pressure, 0.0);
        assert_eq!(r.samples()[5].t, 0.033333);
        // azimuth 7.0 rad wraps to 7 - 2pi
        assert!((r.samples()[4].azimuth - (7.0 - TAU)).abs() < 1e-12);
    }

    #[test]
    fn button_outside_binary_rejected() {
        let text = "x,y,t,pressure,altitude,azimuth,button\n0,0,0,1,1,1,1\n0,0,1,1,1,1,2\n";
        assert!(matches!(
            parse_record(text, Schema::PaHaW, meta()),
            Err(Error::InvalidSample { line: 3, .. })
        ));
    }

    #[test]
    fn azimuth_wraps() {
        assert_eq!(wrap_azimuth(0.0), 0.0);
        assert!((wrap_azimuth(-0.5) - (TAU - 0.5)).abs() < 1e-12);
        assert!((wrap_azimuth(TAU + 1.0) - 1.0).abs() < 1e-12);
        assert!(wrap_azimuth(-1e-18) < TAU);
    }

    fn rec_with(buttons: Option<&[u8]>, pressures: &[f64]) -> DrawingRecord {
        let samples = pressures
            .iter()
            .enumerate()
            .map(|(i, &p)| StylusSample {
                x: i as f64,
                y: 0.0,
                t: i as f64 * 0.01,
                pressure: p,
                altitude: 1.0,
                azimuth: 1.0,
                button: buttons.map(|b| b[i]),
            })
            .collect();
        DrawingRecord::new(samples, meta()).unwrap()
    }

    #[test]
    fn on_surface_filter() {
        let r = rec_with(Some(&[1, 1, 0, 1]), &[1.0, 1.0, 1.0, 1.0]);
        assert_eq!(filter_on_surface(&r).unwrap().len(), 3);

        let r = rec_with(None, &[0.5, 0.0, 1.2]);
        let f = filter_on_surface(&r).unwrap();
        assert_eq!(f.len(), 2);
        assert!(f.samples().windows(2).all(|w| w[0].t <= w[1].t));
        assert_eq!(filter_on_surface(&f).unwrap(), f);

        let r = rec_with(None, &[0.0, 0.0, 0.0]);
        assert!(matches!(filter_on_surface(&r), Err(Error::TooFewSamples(0))));
    }

    #[test]
    fn on_surface_policy_defaults_by_schema() {
        let r = rec_with(None, &[0.5, 0.0, 1.2]);
        assert_eq!(OnSurface::Auto.apply(&r).unwrap().len(), 3);
        assert_eq!(OnSurface::Always.apply(&r).unwrap().len(), 2);
        let mut p = rec_with(Some(&[1, 0, 1]), &[0.5, 0.3, 1.2]);
        p.source = Source::PaHaW;
        assert_eq!(OnSurface::Auto.apply(&p).unwrap().len(), 2);
    }

    #[test]
    fn collapse_keeps_first() {
        let mut s = rec_with(None, &[1.0, 2.0, 3.0]).samples().to_vec();
        s[1].t = s[0].t;
        let c = collapse_equal_timestamps(&s);
        assert_eq!(c.len(), 2);
        assert_eq!(c[0].pressure, 1.0);
        assert_eq!(c[1].pressure, 3.0);
    }

    #[test]
    fn feature_set_parsing() {
        let fs: FeatureSet = "x,y,a,l,p,v".parse().unwrap();
        assert_eq!(fs, FeatureSet::ALL);
        assert_eq!(fs.count(), 6);
        assert_eq!("x+y+v".parse::<FeatureSet>().unwrap(), FeatureSet::POSITIONS_VELOCITY);
        assert!("y,v".parse::<FeatureSet>().is_err());
        assert!("x,y,q".parse::<FeatureSet>().is_err());
        assert_eq!(FeatureSet::POSITIONS_PEN.label(), "x+y+a+l+p");
        for fs in FeatureSet::ablation_grid() {
            assert_eq!(FeatureSet::from_mask(fs.mask()), fs);
        }
    }

    #[test]
    fn manifest_parse_errors() {
        let m = DatasetManifest::parse("a.csv\tPD\ts1\tASD\tSynthetic\n\nb.csv\tHC\ts2\tASD\tPaHaW\n").unwrap();
        assert_eq!(m.class_counts(), ClassCounts { pd: 1, hc: 1 });
        assert_eq!(DatasetManifest::parse(&m.to_text()).unwrap(), m);
        assert!(matches!(
            DatasetManifest::parse("a.csv\tXX\ts1\tASD\tPaHaW\n"),
            Err(Error::UnknownLabel { line: 1, .. })
        ));
        assert!(matches!(
            DatasetManifest::parse("a.csv\tPD\ts1\tASD\tPaHaW\na.csv\tHC\ts2\tASD\tPaHaW\n"),
            Err(Error::DuplicatePath { line: 2, .. })
        ));
        assert_eq!(DatasetManifest::parse("").unwrap().class_counts(), ClassCounts::default());
    }
}
