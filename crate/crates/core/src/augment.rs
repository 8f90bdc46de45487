//! Label-preserving training-set expansion: flips, lattice rotations and
//! color shifts on encoded grids, coordinate jitter on raw records.
//!
//! Grid transforms act on the two trailing axes of a `(3, ..., rows, cols)`
//! tensor, so the same code serves images and voxel grids (where they are
//! the y and x axes and rotation is about z).

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::encode::{encode_record, Dimension, EncodeConfig, Image2D, VoxelGrid3D};
use crate::error::{Error, Result};
use crate::ingest::{DrawingRecord, FeatureSet, Label};
use crate::preprocess::Normalization;
use crate::tensor::Tensor;

/// Mirror axis. `Horizontal` reverses columns (mirror across the vertical
/// centre line, i.e. along x); `Vertical` reverses rows (along y).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FlipAxis {
    Horizontal,
    Vertical,
}

impl FromStr for FlipAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "horizontal" | "h" | "x" => Ok(FlipAxis::Horizontal),
            "vertical" | "v" | "y" => Ok(FlipAxis::Vertical),
            other => Err(Error::InvalidAxis(other.to_string())),
        }
    }
}

impl fmt::Display for FlipAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FlipAxis::Horizontal => "horizontal",
            FlipAxis::Vertical => "vertical",
        })
    }
}

/// Encoded grids the geometric transforms apply to.
pub trait Grid: Sized {
    fn tensor(&self) -> &Tensor<f32>;
    fn from_tensor(t: Tensor<f32>) -> Self;
}

impl Grid for Tensor<f32> {
    fn tensor(&self) -> &Tensor<f32> {
        self
    }
    fn from_tensor(t: Tensor<f32>) -> Self {
        t
    }
}

impl Grid for Image2D {
    fn tensor(&self) -> &Tensor<f32> {
        &self.pixels
    }
    fn from_tensor(t: Tensor<f32>) -> Self {
        Image2D { pixels: t }
    }
}

impl Grid for VoxelGrid3D {
    fn tensor(&self) -> &Tensor<f32> {
        &self.voxels
    }
    fn from_tensor(t: Tensor<f32>) -> Self {
        VoxelGrid3D { voxels: t }
    }
}

/// (slices, rows, cols) of a grid tensor: everything before the last two
/// axes is treated as a stack of planes.
fn planes(t: &Tensor<f32>) -> Result<(usize, usize, usize)> {
    let s = t.shape();
    if s.len() < 3 {
        return Err(Error::ShapeMismatch(format!(
            "grid transforms need a channel axis and two spatial axes, got {s:?}"
        )));
    }
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    Ok((t.len() / (h * w), h, w))
}

fn remap(t: &Tensor<f32>, out_hw: (usize, usize), src: impl Fn(usize, usize) -> (usize, usize)) -> Result<Tensor<f32>> {
    let (n, h, w) = planes(t)?;
    let (oh, ow) = out_hw;
    let d = t.data();
    let mut out = Vec::with_capacity(d.len());
    for p in 0..n {
        let base = p * h * w;
        for r in 0..oh {
            for c in 0..ow {
                let (sr, sc) = src(r, c);
                out.push(d[base + sr * w + sc]);
            }
        }
    }
    let mut shape = t.shape().to_vec();
    let k = shape.len();
    shape[k - 2] = oh;
    shape[k - 1] = ow;
    Tensor::from_vec(&shape, out)
}

pub fn flip<G: Grid>(g: &G, axis: FlipAxis) -> Result<G> {
    let (_, h, w) = planes(g.tensor())?;
    let t = match axis {
        FlipAxis::Horizontal => remap(g.tensor(), (h, w), |r, c| (r, w - 1 - c))?,
        FlipAxis::Vertical => remap(g.tensor(), (h, w), |r, c| (h - 1 - r, c))?,
    };
    Ok(G::from_tensor(t))
}

/// Counter-clockwise lattice rotation (y up) by 90, 180 or 270 degrees.
pub fn rotate<G: Grid>(g: &G, angle_deg: u32) -> Result<G> {
    if !matches!(angle_deg, 90 | 180 | 270) {
        return Err(Error::InvalidAngle(angle_deg));
    }
    let (_, h, w) = planes(g.tensor())?;
    if h != w {
        return Err(Error::NonSquareGrid(g.tensor().shape().to_vec()));
    }
    let n = h - 1;
    let t = match angle_deg {
        90 => remap(g.tensor(), (h, w), |r, c| (c, n - r))?,
        180 => remap(g.tensor(), (h, w), |r, c| (n - r, n - c))?,
        _ => remap(g.tensor(), (h, w), |r, c| (n - c, r))?,
    };
    Ok(G::from_tensor(t))
}

/// Adds a per-channel offset to every stroke cell (any channel non-zero),
/// clamped to [0, 1]. Background stays exactly zero.
pub fn illuminate<G: Grid>(g: &G, deltas: [f32; 3]) -> Result<G> {
    let t = g.tensor();
    if t.shape()[0] != 3 {
        return Err(Error::ShapeMismatch(format!("illumination needs 3 channels, got {:?}", t.shape())));
    }
    let plane = t.len() / 3;
    let d = t.data();
    let mut out = d.to_vec();
    for i in 0..plane {
        if d[i] == 0.0 && d[plane + i] == 0.0 && d[2 * plane + i] == 0.0 {
            continue;
        }
        for c in 0..3 {
            out[c * plane + i] = (d[c * plane + i] + deltas[c]).clamp(0.0, 1.0);
        }
    }
    Ok(G::from_tensor(Tensor::from_vec(t.shape(), out)?))
}

/// Per-channel illumination offsets, uniform in `[-delta, delta]`.
pub fn draw_deltas(delta: f32, rng: &mut impl Rng) -> [f32; 3] {
    if delta == 0.0 {
        return [0.0; 3];
    }
    [
        rng.gen_range(-delta..=delta),
        rng.gen_range(-delta..=delta),
        rng.gen_range(-delta..=delta),
    ]
}

/// Adds uniform noise to the raw x and y coordinates. Each axis draws from
/// `[-sigma * span, sigma * span]` with `span` that axis's extent over the
/// record. Timestamps, pen channels and label are untouched.
pub fn jitter_record(record: &DrawingRecord, sigma: f64, seed: u64) -> DrawingRecord {
    jitter_with(record, sigma, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn jitter_with(record: &DrawingRecord, sigma: f64, rng: &mut impl Rng) -> DrawingRecord {
    if sigma <= 0.0 {
        return record.clone();
    }
    let span = |f: fn(&crate::ingest::StylusSample) -> f64| {
        let (lo, hi) = record
            .samples()
            .iter()
            .map(f)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        (hi - lo) * sigma
    };
    let (ax, ay) = (span(|s| s.x), span(|s| s.y));
    let samples = record
        .samples()
        .iter()
        .map(|s| {
            let mut s = *s;
            if ax > 0.0 {
                s.x += rng.gen_range(-ax..=ax);
            }
            if ay > 0.0 {
                s.y += rng.gen_range(-ay..=ay);
            }
            s
        })
        .collect();
    DrawingRecord::from_parts_unchecked(samples, record.meta())
}

/// Which transforms to apply and how often.
///
/// Flips and rotations are deterministic and contribute one clone per
/// listed axis or angle. Illumination and jitter are random and contribute
/// `multiplicity` clones each. Families are applied independently, never
/// composed.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentPlan {
    pub flip_axes: Vec<FlipAxis>,
    pub rotation_angles: Vec<u32>,
    /// Illumination delta range; `None` disables the family.
    pub illumination: Option<f32>,
    /// Jitter sigma as a fraction of the coordinate span; `None` disables.
    pub jitter: Option<f64>,
    pub multiplicity: usize,
    pub seed: u64,
}

impl Default for AugmentPlan {
    /// No augmentation.
    fn default() -> Self {
        AugmentPlan {
            flip_axes: Vec::new(),
            rotation_angles: Vec::new(),
            illumination: None,
            jitter: None,
            multiplicity: 4,
            seed: 0,
        }
    }
}

impl AugmentPlan {
    pub const DEFAULT_DELTA: f32 = 0.1;
    pub const DEFAULT_SIGMA: f64 = 0.01;

    /// Every family allowed for `dim` at default strength.
    pub fn standard(dim: Dimension, seed: u64) -> Self {
        match dim {
            Dimension::One => AugmentPlan {
                jitter: Some(Self::DEFAULT_SIGMA),
                seed,
                ..Default::default()
            },
            _ => AugmentPlan {
                flip_axes: vec![FlipAxis::Horizontal, FlipAxis::Vertical],
                rotation_angles: vec![90, 180, 270],
                illumination: Some(Self::DEFAULT_DELTA),
                jitter: Some(Self::DEFAULT_SIGMA),
                multiplicity: 4,
                seed,
            },
        }
    }

    pub fn is_empty(&self) -> bool {
        self.clones_per_record() == 0
    }

    pub fn clones_per_record(&self) -> usize {
        self.flip_axes.len()
            + self.rotation_angles.len()
            + if self.illumination.is_some() { self.multiplicity } else { 0 }
            + if self.jitter.is_some() { self.multiplicity } else { 0 }
    }

    pub fn validate(&self, dim: Dimension) -> Result<()> {
        if let Some(&a) = self.rotation_angles.iter().find(|a| !matches!(a, 90 | 180 | 270)) {
            return Err(Error::InvalidAngle(a));
        }
        if self.illumination.is_some_and(|d| !(d >= 0.0 && d.is_finite())) {
            return Err(Error::Config("illumination delta must be finite and >= 0".into()));
        }
        if self.jitter.is_some_and(|s| !(s >= 0.0 && s.is_finite())) {
            return Err(Error::Config("jitter sigma must be finite and >= 0".into()));
        }
        if dim == Dimension::One {
            let mut bad = Vec::new();
            if !self.flip_axes.is_empty() {
                bad.push("flip");
            }
            if !self.rotation_angles.is_empty() {
                bad.push("rotation");
            }
            if self.illumination.is_some() {
                bad.push("illumination");
            }
            if !bad.is_empty() {
                return Err(Error::PlanInvalidForDimension {
                    dim: 1,
                    reason: format!("{} not applicable to series", bad.join(", ")),
                });
            }
        }
        Ok(())
    }
}

/// How an augmented sample was produced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Transform {
    Original,
    Flip(FlipAxis),
    Rotate(u32),
    Illuminate([f32; 3]),
    Jitter(f64),
}

/// Where an augmented sample came from: the index of its source record in
/// the input slice, that record's subject, and the transform applied.
#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub origin: usize,
    pub subject_id: String,
    pub transform: Transform,
}

/// One encoded network input with its label.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: Tensor<f32>,
    pub label: Label,
    pub provenance: Provenance,
}

/// Encodes every record and appends the transformed clones the plan asks
/// for. Output is grouped by record: original first, then flips, rotations,
/// illuminations and jitters in plan order.
///
/// Records run in parallel; each draws from its own ChaCha stream keyed by
/// the plan seed and the record index, so output does not depend on
/// scheduling.
pub fn expand_dataset(
    records: &[DrawingRecord],
    plan: &AugmentPlan,
    dim: Dimension,
    fs: &FeatureSet,
    cfg: &EncodeConfig,
    scope: Normalization,
) -> Result<Vec<Sample>> {
    plan.validate(dim)?;
    let per_record: Vec<Vec<Sample>> = records
        .par_iter()
        .enumerate()
        .map(|(i, r)| expand_one(i, r, plan, dim, fs, cfg, scope))
        .collect::<Result<_>>()?;
    Ok(per_record.into_iter().flatten().collect())
}

fn expand_one(
    index: usize,
    record: &DrawingRecord,
    plan: &AugmentPlan,
    dim: Dimension,
    fs: &FeatureSet,
    cfg: &EncodeConfig,
    scope: Normalization,
) -> Result<Vec<Sample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    rng.set_stream(index as u64);
    let base = encode_record(record, dim, fs, cfg, scope)?.into_tensor();
    let mut out = Vec::with_capacity(1 + plan.clones_per_record());
    let sample = |input: Tensor<f32>, transform| Sample {
        input,
        label: record.label,
        provenance: Provenance {
            origin: index,
            subject_id: record.subject_id.clone(),
            transform,
        },
    };
    for &axis in &plan.flip_axes {
        out.push(sample(flip(&base, axis)?, Transform::Flip(axis)));
    }
    for &angle in &plan.rotation_angles {
        out.push(sample(rotate(&base, angle)?, Transform::Rotate(angle)));
    }
    if let Some(delta) = plan.illumination {
        for _ in 0..plan.multiplicity {
            let d = draw_deltas(delta, &mut rng);
            out.push(sample(illuminate(&base, d)?, Transform::Illuminate(d)));
        }
    }
    if let Some(sigma) = plan.jitter {
        for _ in 0..plan.multiplicity {
            let j = jitter_with(record, sigma, &mut rng);
            let enc = encode_record(&j, dim, fs, cfg, scope)?.into_tensor();
            out.push(sample(enc, Transform::Jitter(sigma)));
        }
    }
    out.insert(0, sample(base, Transform::Original));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encode::{encode_2d, prepare_trace};
    use crate::ingest::{RecordMeta, Source, StylusSample};
    use proptest::prelude::*;

    fn grid_strategy() -> impl Strategy<Value = Tensor<f32>> {
        (1usize..7, prop::bool::ANY).prop_flat_map(|(n, cube)| {
            let shape = if cube { vec![3, n, n, n] } else { vec![3, n, n] };
            let len: usize = shape.iter().product();
            prop::collection::vec(prop_oneof![Just(0.0f32), 0.0f32..=1.0], len)
                .prop_map(move |d| Tensor::from_vec(&shape, d).unwrap())
        })
    }

    fn sorted(t: &Tensor<f32>) -> Vec<f32> {
        let mut v = t.data().to_vec();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn flips_are_involutions(g in grid_strategy()) {
            for axis in [FlipAxis::Horizontal, FlipAxis::Vertical] {
                let f = flip(&g, axis).unwrap();
                prop_assert_eq!(f.shape(), g.shape());
                prop_assert_eq!(sorted(&f), sorted(&g));
                prop_assert_eq!(flip(&f, axis).unwrap(), g.clone());
            }
        }

        #[test]
        fn rotations_form_a_cyclic_group(g in grid_strategy()) {
            let r1 = rotate(&g, 90).unwrap();
            let r2 = rotate(&r1, 90).unwrap();
            let r3 = rotate(&r2, 90).unwrap();
            prop_assert_eq!(&rotate(&r3, 90).unwrap(), &g);
            prop_assert_eq!(&r2, &rotate(&g, 180).unwrap());
            prop_assert_eq!(&r3, &rotate(&g, 270).unwrap());
            let hv = flip(&flip(&g, FlipAxis::Horizontal).unwrap(), FlipAxis::Vertical).unwrap();
            prop_assert_eq!(&r2, &hv);
            prop_assert_eq!(sorted(&r1), sorted(&g));
            prop_assert_eq!(r1.count_nonzero(), g.count_nonzero());
        }

        #[test]
        fn illumination_matches_per_cell_oracle(g in grid_strategy(), d in prop::array::uniform3(-0.6f32..0.6)) {
            let out = illuminate(&g, d).unwrap();
            let plane = g.len() / 3;
            for i in 0..plane {
                let bg = (0..3).all(|c| g.data()[c * plane + i] == 0.0);
                for c in 0..3 {
                    let v = g.data()[c * plane + i];
                    let want = if bg { 0.0 } else { (v + d[c]).max(0.0).min(1.0) };
                    prop_assert_eq!(out.data()[c * plane + i], want);
                }
            }
        }
    }

    #[test]
    fn single_pixel_flip_and_rotation() {
        let mut g = Tensor::<f32>::zeros(&[3, 128, 128]);
        g.set(&[0, 0, 0], 1.0);
        let f = flip(&g, FlipAxis::Horizontal).unwrap();
        assert_eq!(f.get(&[0, 0, 127]), 1.0);
        assert_eq!(f.count_nonzero(), 1);
        // top-right rotated counter-clockwise lands top-left
        let mut g = Tensor::<f32>::zeros(&[3, 4, 4]);
        g.set(&[1, 0, 3], 1.0);
        assert_eq!(rotate(&g, 90).unwrap().get(&[1, 0, 0]), 1.0);
    }

    #[test]
    fn voxel_flip_and_rotation_keep_counts() {
        let mut g = Tensor::<f32>::zeros(&[3, 8, 8, 8]);
        g.set(&[0, 1, 2, 3], 0.5);
        g.set(&[2, 7, 0, 5], 1.0);
        let v = VoxelGrid3D { voxels: g.clone() };
        assert_eq!(flip(&v, FlipAxis::Horizontal).unwrap().voxels.count_nonzero(), 2);
        let r = rotate(&v, 270).unwrap().voxels;
        assert_eq!(r.count_nonzero(), 2);
        // rotation about z keeps the z index
        assert_eq!(r.get(&[0, 1, 3, 5]), 0.5);
    }

    #[test]
    fn transform_errors() {
        let g = Tensor::<f32>::zeros(&[3, 4, 6]);
        assert!(matches!(rotate(&g, 90), Err(Error::NonSquareGrid(_))));
        let g = Tensor::<f32>::zeros(&[3, 4, 4]);
        assert!(matches!(rotate(&g, 45), Err(Error::InvalidAngle(45))));
        assert!(matches!("z".parse::<FlipAxis>(), Err(Error::InvalidAxis(_))));
        assert_eq!("x".parse::<FlipAxis>().unwrap(), FlipAxis::Horizontal);
    }

    #[test]
    fn illumination_examples() {
        let mut g = Tensor::<f32>::zeros(&[3, 4, 4]);
        for c in 0..3 {
            g.set(&[c, 1, 1], 1.0);
        }
        assert_eq!(illuminate(&g, [0.0; 3]).unwrap(), g);
        let out = illuminate(&g, [0.5, 0.0, 0.0]).unwrap();
        assert_eq!(out.get(&[0, 1, 1]), 1.0);
        assert_eq!(out.count_nonzero(), 3);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            assert!(draw_deltas(0.1, &mut rng).iter().all(|d| d.abs() <= 0.1));
        }
    }

    pub(crate) fn spiral_record(n: usize, label: Label, subject: &str) -> DrawingRecord {
        let samples = (0..n)
            .map(|i| {
                let th = i as f64 / n as f64 * 6.0 * std::f64::consts::PI;
                let r = 5.0 + 40.0 * th / (6.0 * std::f64::consts::PI);
                StylusSample {
                    x: 60.0 + r * th.cos(),
                    y: 60.0 + r * th.sin(),
                    t: i as f64 / 150.0,
                    pressure: 1.0 + (i as f64 * 0.05).sin(),
                    altitude: 0.9,
                    azimuth: 1.0 + 0.2 * (i as f64 * 0.01).cos(),
                    button: None,
                }
            })
            .collect();
        DrawingRecord::new(samples, RecordMeta::new(label, subject, Source::Synthetic)).unwrap()
    }

    #[test]
    fn jitter_contract() {
        let r = spiral_record(200, Label::Pd, "s1");
        assert_eq!(jitter_record(&r, 0.0, 9), r);
        let a = jitter_record(&r, 0.01, 9);
        assert_eq!(a, jitter_record(&r, 0.01, 9));
        assert_ne!(a, r);
        assert_eq!(a.label, r.label);
        for (s, o) in a.samples().iter().zip(r.samples()) {
            assert_eq!(s.t, o.t);
            assert_eq!(s.pressure, o.pressure);
            assert!((s.x - o.x).abs() <= 0.01 * 85.0 + 1e-9);
        }
    }

    fn hausdorff(a: &[(i64, i64)], b: &[(i64, i64)]) -> f64 {
        let directed = |p: &[(i64, i64)], q: &[(i64, i64)]| {
            p.iter()
                .map(|&(r, c)| {
                    q.iter()
                        .map(|&(r2, c2)| (((r - r2).pow(2) + (c - c2).pow(2)) as f64).sqrt())
                        .fold(f64::INFINITY, f64::min)
                })
                .fold(0.0, f64::max)
        };
        directed(a, b).max(directed(b, a))
    }

    fn lit(img: &Image2D) -> Vec<(i64, i64)> {
        let plane = 128 * 128;
        let d = img.pixels.data();
        (0..plane)
            .filter(|&i| (0..3).any(|c| d[c * plane + i] != 0.0))
            .map(|i| ((i / 128) as i64, (i % 128) as i64))
            .collect()
    }

    #[test]
    fn jitter_hausdorff_bound() {
        let cfg = EncodeConfig::default();
        let sigma = 0.01;
        let bound = (2.0 * sigma * 127.0f64).ceil() + cfg.w_max as f64;
        let r = spiral_record(400, Label::Hc, "s");
        for fs in [FeatureSet::POSITIONS, FeatureSet::ALL] {
            let base = lit(&encode_2d(&prepare_trace(&r, Normalization::PerRecord).unwrap(), &fs, &cfg).unwrap());
            for seed in 0..3 {
                let j = jitter_record(&r, sigma, seed);
                let img = encode_2d(&prepare_trace(&j, Normalization::PerRecord).unwrap(), &fs, &cfg).unwrap();
                let h = hausdorff(&base, &lit(&img));
                assert!(h <= bound, "{} seed {seed}: {h} > {bound}", fs.label());
            }
        }
    }

    #[test]
    fn expansion_counts_and_provenance() {
        let recs: Vec<_> = (0..10)
            .map(|i| spiral_record(60, if i % 2 == 0 { Label::Pd } else { Label::Hc }, &format!("s{i}")))
            .collect();
        let cfg = EncodeConfig { image_size: 32, voxel_size: 16, length: 32, ..Default::default() };
        let fs = FeatureSet::ALL;
        let plan = AugmentPlan {
            flip_axes: vec![FlipAxis::Horizontal, FlipAxis::Vertical],
            ..Default::default()
        };
        let out = expand_dataset(&recs, &plan, Dimension::Two, &fs, &cfg, Normalization::PerRecord).unwrap();
        assert_eq!(out.len(), 30);
        for s in &out {
            assert_eq!(s.label, recs[s.provenance.origin].label);
            assert_eq!(s.provenance.subject_id, recs[s.provenance.origin].subject_id);
            assert_eq!(s.input.shape(), &[3, 32, 32]);
        }

        let rot = AugmentPlan { rotation_angles: vec![90], ..Default::default() };
        assert!(matches!(
            expand_dataset(&recs, &rot, Dimension::One, &fs, &cfg, Normalization::PerRecord),
            Err(Error::PlanInvalidForDimension { dim: 1, .. })
        ));

        let jit = AugmentPlan { jitter: Some(0.01), multiplicity: 3, seed: 7, ..Default::default() };
        let a = expand_dataset(&recs, &jit, Dimension::One, &fs, &cfg, Normalization::PerRecord).unwrap();
        assert_eq!(a.len(), 40);
        assert!(a.iter().all(|s| s.input.shape() == [6, 32]));
        let b = expand_dataset(&recs, &jit, Dimension::One, &fs, &cfg, Normalization::PerRecord).unwrap();
        assert_eq!(a, b);

        let full = AugmentPlan::standard(Dimension::Three, 1);
        let v = expand_dataset(&recs[..2], &full, Dimension::Three, &fs, &cfg, Normalization::PerRecord).unwrap();
        assert_eq!(v.len(), 2 * (1 + 2 + 3 + 4 + 4));
    }
}
