//! The three input representations: a channel-stacked time series, an RGB
//! raster of the pen trajectory, and an RGB voxel grid over
//! (x, y, velocity).
//!
//! Grid mapping for a normalized coordinate `u` on an axis of `n` cells with
//! margin `m`: `round(u * (n - 1 - 2m)) + m`. The y axis points up, so row
//! (2D) and row-axis (3D) indices are stored as `n - 1 - iy`. Strokes follow
//! the supercover of each segment: every cell the ideal segment touches.
//! Later segments overwrite earlier ones.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::ingest::{DrawingRecord, Feature, FeatureSet};
use crate::preprocess::{derive_velocity, normalize_with, resample_uniform, Normalization, NormalizedTrace};
use crate::tensor::Tensor;

/// Spatial dimensionality of a representation (and of the network that
/// consumes it).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Dimension {
    One,
    Two,
    Three,
}

impl Dimension {
    pub const ALL: [Dimension; 3] = [Dimension::One, Dimension::Two, Dimension::Three];

    pub fn rank(self) -> usize {
        match self {
            Dimension::One => 1,
            Dimension::Two => 2,
            Dimension::Three => 3,
        }
    }

    pub fn from_rank(rank: usize) -> Result<Self> {
        match rank {
            1 => Ok(Dimension::One),
            2 => Ok(Dimension::Two),
            3 => Ok(Dimension::Three),
            r => Err(Error::UnsupportedRank(r)),
        }
    }

    /// Network input channels for a feature set: the enabled feature count
    /// in 1D, always 3 (RGB) in 2D and 3D.
    pub fn input_channels(self, fs: &FeatureSet) -> usize {
        match self {
            Dimension::One => fs.count(),
            Dimension::Two | Dimension::Three => 3,
        }
    }

    /// Feature sets evaluated for this dimensionality. 3D always needs
    /// velocity for its third axis.
    pub fn ablation_feature_sets(self) -> Vec<FeatureSet> {
        match self {
            Dimension::One | Dimension::Two => FeatureSet::ablation_grid().to_vec(),
            Dimension::Three => vec![FeatureSet::POSITIONS_VELOCITY, FeatureSet::ALL],
        }
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}D", self.rank())
    }
}

impl FromStr for Dimension {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().trim_end_matches(['d', 'D']) {
            "1" => Ok(Dimension::One),
            "2" => Ok(Dimension::Two),
            "3" => Ok(Dimension::Three),
            other => Err(other.to_string()),
        }
    }
}

/// Grid sizes and stroke settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncodeConfig {
    /// 1D series length.
    pub length: usize,
    /// 2D raster side.
    pub image_size: usize,
    /// 3D grid side.
    pub voxel_size: usize,
    /// Stroke diameter bounds in pixels; velocity maps affinely onto them.
    pub w_min: usize,
    pub w_max: usize,
    /// Empty border in cells.
    pub margin: usize,
}

impl Default for EncodeConfig {
    fn default() -> Self {
        EncodeConfig {
            length: 128,
            image_size: 128,
            voxel_size: 128,
            w_min: 1,
            w_max: 7,
            margin: 1,
        }
    }
}

impl EncodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.w_min < 1 || self.w_max < self.w_min {
            return Err(Error::Config(format!(
                "stroke widths must satisfy 1 <= w_min <= w_max, got {}..{}",
                self.w_min, self.w_max
            )));
        }
        for (name, n) in [
            ("length", self.length),
            ("image_size", self.image_size),
            ("voxel_size", self.voxel_size),
        ] {
            if n < 8 {
                return Err(Error::Config(format!("{name} must be at least 8, got {n}")));
            }
        }
        if 2 * self.margin + 2 > self.image_size.min(self.voxel_size) {
            return Err(Error::Config(format!("margin {} too large", self.margin)));
        }
        Ok(())
    }

    /// Extent per spatial axis of the representation for `dim`.
    pub fn extent(&self, dim: Dimension) -> usize {
        match dim {
            Dimension::One => self.length,
            Dimension::Two => self.image_size,
            Dimension::Three => self.voxel_size,
        }
    }
}

/// `C x L` stack of enabled feature channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Series1D {
    pub values: Tensor<f32>,
    pub channels: Vec<Feature>,
}

/// `3 x H x W` RGB raster, row 0 at the top.
#[derive(Debug, Clone, PartialEq)]
pub struct Image2D {
    pub pixels: Tensor<f32>,
}

/// `3 x R x R x R` RGB voxel grid indexed `(channel, z, row, x)` with
/// `row = R - 1 - y`.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid3D {
    pub voxels: Tensor<f32>,
}

/// One occupied voxel in sparse form: grid coordinates (y pointing up) and
/// its color.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SparseVoxel {
    pub ix: u32,
    pub iy: u32,
    pub iz: u32,
    pub rgb: [f32; 3],
}

impl VoxelGrid3D {
    pub fn size(&self) -> usize {
        self.voxels.shape()[1]
    }

    /// Occupied voxels (any channel non-zero) in storage order.
    pub fn to_sparse(&self) -> Vec<SparseVoxel> {
        let r = self.size();
        let plane = r * r * r;
        let d = self.voxels.data();
        let mut out = Vec::new();
        for i in 0..plane {
            let rgb = [d[i], d[plane + i], d[2 * plane + i]];
            if rgb.iter().any(|&v| v != 0.0) {
                let iz = i / (r * r);
                let row = (i / r) % r;
                let ix = i % r;
                out.push(SparseVoxel {
                    ix: ix as u32,
                    iy: (r - 1 - row) as u32,
                    iz: iz as u32,
                    rgb,
                });
            }
        }
        out
    }

    pub fn from_sparse(size: usize, voxels: &[SparseVoxel]) -> Result<Self> {
        let mut grid = Tensor::zeros(&[3, size, size, size]);
        let plane = size * size * size;
        let d = grid.data_mut();
        for v in voxels {
            let (ix, iy, iz) = (v.ix as usize, v.iy as usize, v.iz as usize);
            if ix >= size || iy >= size || iz >= size {
                return Err(Error::ShapeMismatch(format!(
                    "voxel ({ix}, {iy}, {iz}) outside a grid of {size}"
                )));
            }
            let i = (iz * size + (size - 1 - iy)) * size + ix;
            for c in 0..3 {
                d[c * plane + i] = v.rgb[c];
            }
        }
        Ok(VoxelGrid3D { voxels: grid })
    }
}

/// Cells touched by the segment between two cell centers, in path order,
/// starting at `a` and ending at `b`.
///
/// The segment crosses a cell boundary along axis `i` at parameter
/// `(2k + 1) / (2|d_i|)`; crossings are compared exactly in integers. When
/// several axes cross at once the segment passes through an edge or corner,
/// and every cell sharing it is included.
pub fn supercover<const D: usize>(a: [i64; D], b: [i64; D]) -> Vec<[i64; D]> {
    let mut step = [0i64; D];
    let mut n = [0i64; D];
    for i in 0..D {
        let d = b[i] - a[i];
        step[i] = d.signum();
        n[i] = d.abs();
    }
    let mut crossed = [0i64; D];
    let mut cell = a;
    let mut out = vec![a];
    loop {
        // earliest pending crossing: minimise (2k+1)/(2n) over axes
        let mut best: Option<usize> = None;
        for i in 0..D {
            if crossed[i] >= n[i] {
                continue;
            }
            match best {
                None => best = Some(i),
                Some(j) => {
                    if (2 * crossed[i] + 1) * n[j] < (2 * crossed[j] + 1) * n[i] {
                        best = Some(i);
                    }
                }
            }
        }
        let Some(j) = best else { break };
        let simultaneous: Vec<usize> = (0..D)
            .filter(|&i| crossed[i] < n[i] && (2 * crossed[i] + 1) * n[j] == (2 * crossed[j] + 1) * n[i])
            .collect();
        // every non-empty subset of the crossing axes, the full set last
        let s = simultaneous.len();
        let mut subsets: Vec<u32> = (1..(1u32 << s)).collect();
        subsets.sort_by_key(|m| m.count_ones());
        for mask in subsets {
            let mut c = cell;
            for (bit, &axis) in simultaneous.iter().enumerate() {
                if mask & (1 << bit) != 0 {
                    c[axis] += step[axis];
                }
            }
            out.push(c);
        }
        for &axis in &simultaneous {
            cell[axis] += step[axis];
            crossed[axis] += 1;
        }
    }
    debug_assert_eq!(cell, b);
    out
}

/// Grid index for a normalized coordinate.
pub fn grid_index(u: f64, n: usize, margin: usize) -> i64 {
    let span = (n - 1 - 2 * margin) as f64;
    ((u.clamp(0.0, 1.0) * span).round() as i64) + margin as i64
}

/// Disc offsets for a stroke of diameter `w`: cells whose centers lie
/// within `w / 2` of the stamp center.
fn disc_offsets(w: usize) -> Vec<(i64, i64)> {
    let r2 = (w as f64 / 2.0).powi(2);
    let reach = (w / 2) as i64;
    let mut out = Vec::new();
    for dy in -reach..=reach {
        for dx in -reach..=reach {
            if ((dx * dx + dy * dy) as f64) <= r2 {
                out.push((dy, dx));
            }
        }
    }
    out
}

fn sample_colors(trace: &NormalizedTrace, fs: &FeatureSet) -> Result<Vec<[f64; 3]>> {
    let n = trace.len();
    let mut cols = vec![[1.0; 3]; n];
    for (c, f) in [Feature::Azimuth, Feature::Altitude, Feature::Pressure].into_iter().enumerate() {
        if fs.contains(f) {
            let ch = trace.require(f)?;
            for (i, v) in ch.iter().enumerate() {
                cols[i][c] = *v;
            }
        }
    }
    Ok(cols)
}

fn mean3(a: [f64; 3], b: [f64; 3]) -> [f32; 3] {
    [
        ((a[0] + b[0]) / 2.0) as f32,
        ((a[1] + b[1]) / 2.0) as f32,
        ((a[2] + b[2]) / 2.0) as f32,
    ]
}

/// Stacks the enabled channels of a trace already resampled to
/// `cfg.length`, in canonical feature order.
pub fn encode_1d(trace: &NormalizedTrace, fs: &FeatureSet, cfg: &EncodeConfig) -> Result<Series1D> {
    if trace.len() != cfg.length {
        return Err(Error::ShapeMismatch(format!(
            "trace has {} samples, expected {} (resample first)",
            trace.len(),
            cfg.length
        )));
    }
    let channels = fs.enabled();
    let mut data = Vec::with_capacity(channels.len() * cfg.length);
    for f in &channels {
        data.extend(trace.require(*f)?.iter().map(|&v| v as f32));
    }
    Ok(Series1D {
        values: Tensor::from_vec(&[channels.len(), cfg.length], data)?,
        channels,
    })
}

/// Draws the trajectory into an RGB raster.
///
/// Segment color is the endpoint mean of (azimuth, altitude, pressure), 1.0
/// for disabled features; stroke diameter is
/// `round(w_min + v * (w_max - w_min))` from the endpoint-mean velocity when
/// velocity is enabled, `w_min` otherwise.
pub fn encode_2d(trace: &NormalizedTrace, fs: &FeatureSet, cfg: &EncodeConfig) -> Result<Image2D> {
    let (h, w) = (cfg.image_size, cfg.image_size);
    let x = trace.require(Feature::X)?;
    let y = trace.require(Feature::Y)?;
    let vel = if fs.contains(Feature::Velocity) {
        Some(trace.require(Feature::Velocity)?)
    } else {
        None
    };
    let colors = sample_colors(trace, fs)?;
    let n = trace.len();
    if n == 0 {
        return Err(Error::TooFewSamples(0));
    }
    let pts: Vec<[i64; 2]> = (0..n)
        .map(|i| {
            let col = grid_index(x[i], w, cfg.margin);
            let row = (h as i64 - 1) - grid_index(y[i], h, cfg.margin);
            [row, col]
        })
        .collect();
    let width_of = |v: f64| -> usize {
        let span = (cfg.w_max - cfg.w_min) as f64;
        (cfg.w_min as f64 + v * span).round() as usize
    };

    let mut img = Tensor::<f32>::zeros(&[3, h, w]);
    let plane = h * w;
    let mut discs: Vec<Option<Vec<(i64, i64)>>> = vec![None; cfg.w_max + 1];
    let mut stamp = |img: &mut Tensor<f32>, cell: [i64; 2], diameter: usize, rgb: [f32; 3]| {
        let offsets = discs[diameter].get_or_insert_with(|| disc_offsets(diameter));
        let d = img.data_mut();
        for &(dy, dx) in offsets.iter() {
            let (r, c) = (cell[0] + dy, cell[1] + dx);
            if r < 0 || c < 0 || r >= h as i64 || c >= w as i64 {
                continue;
            }
            let i = r as usize * w + c as usize;
            for ch in 0..3 {
                d[ch * plane + i] = rgb[ch];
            }
        }
    };

    if n == 1 {
        let diameter = vel.map_or(cfg.w_min, |v| width_of(v[0]));
        stamp(&mut img, pts[0], diameter, mean3(colors[0], colors[0]));
    }
    for i in 0..n.saturating_sub(1) {
        let rgb = mean3(colors[i], colors[i + 1]);
        let diameter = vel.map_or(cfg.w_min, |v| width_of((v[i] + v[i + 1]) / 2.0));
        for cell in supercover(pts[i], pts[i + 1]) {
            stamp(&mut img, cell, diameter, rgb);
        }
    }
    Ok(Image2D { pixels: img })
}

/// Voxelizes the (x, y, velocity) polyline, colored like [`encode_2d`].
pub fn encode_3d(trace: &NormalizedTrace, fs: &FeatureSet, cfg: &EncodeConfig) -> Result<VoxelGrid3D> {
    if !fs.contains(Feature::Velocity) {
        return Err(Error::MissingChannel(Feature::Velocity.name()));
    }
    let r = cfg.voxel_size;
    let x = trace.require(Feature::X)?;
    let y = trace.require(Feature::Y)?;
    let v = trace.require(Feature::Velocity)?;
    let colors = sample_colors(trace, fs)?;
    let n = trace.len();
    if n == 0 {
        return Err(Error::TooFewSamples(0));
    }
    let pts: Vec<[i64; 3]> = (0..n)
        .map(|i| {
            [
                grid_index(v[i], r, cfg.margin),
                (r as i64 - 1) - grid_index(y[i], r, cfg.margin),
                grid_index(x[i], r, cfg.margin),
            ]
        })
        .collect();

    let mut grid = Tensor::<f32>::zeros(&[3, r, r, r]);
    let plane = r * r * r;
    let d = grid.data_mut();
    let mut put = |cell: [i64; 3], rgb: [f32; 3]| {
        let i = (cell[0] as usize * r + cell[1] as usize) * r + cell[2] as usize;
        for ch in 0..3 {
            d[ch * plane + i] = rgb[ch];
        }
    };
    if n == 1 {
        put(pts[0], mean3(colors[0], colors[0]));
    }
    for i in 0..n.saturating_sub(1) {
        let rgb = mean3(colors[i], colors[i + 1]);
        for cell in supercover(pts[i], pts[i + 1]) {
            put(cell, rgb);
        }
    }
    Ok(VoxelGrid3D { voxels: grid })
}

/// An encoded record in any dimensionality.
#[derive(Debug, Clone, PartialEq)]
pub enum Encoded {
    Series(Series1D),
    Image(Image2D),
    Voxels(VoxelGrid3D),
}

impl Encoded {
    pub fn tensor(&self) -> &Tensor<f32> {
        match self {
            Encoded::Series(s) => &s.values,
            Encoded::Image(i) => &i.pixels,
            Encoded::Voxels(v) => &v.voxels,
        }
    }

    pub fn into_tensor(self) -> Tensor<f32> {
        match self {
            Encoded::Series(s) => s.values,
            Encoded::Image(i) => i.pixels,
            Encoded::Voxels(v) => v.voxels,
        }
    }
}

/// Normalizes a record and derives its velocity channel.
pub fn prepare_trace(record: &DrawingRecord, scope: Normalization) -> Result<NormalizedTrace> {
    derive_velocity(&normalize_with(record, scope))
}

/// Full path from a raw record to the representation for `dim`.
pub fn encode_record(
    record: &DrawingRecord,
    dim: Dimension,
    fs: &FeatureSet,
    cfg: &EncodeConfig,
    scope: Normalization,
) -> Result<Encoded> {
    let trace = prepare_trace(record, scope)?;
    encode_trace(&trace, dim, fs, cfg)
}

pub fn encode_trace(trace: &NormalizedTrace, dim: Dimension, fs: &FeatureSet, cfg: &EncodeConfig) -> Result<Encoded> {
    Ok(match dim {
        Dimension::One => Encoded::Series(encode_1d(&resample_uniform(trace, cfg.length)?, fs, cfg)?),
        Dimension::Two => Encoded::Image(encode_2d(trace, fs, cfg)?),
        Dimension::Three => Encoded::Voxels(encode_3d(trace, fs, cfg)?),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Label;
    use std::collections::HashSet;

    fn trace(points: &[(f64, f64)], extra: &[(Feature, Vec<f64>)]) -> NormalizedTrace {
        let t: Vec<f64> = (0..points.len()).map(|i| i as f64 * 0.01).collect();
        let mut ch = vec![
            (Feature::X, points.iter().map(|p| p.0).collect()),
            (Feature::Y, points.iter().map(|p| p.1).collect()),
        ];
        ch.extend(extra.iter().cloned());
        NormalizedTrace::from_channels(t, &ch, Label::Hc).unwrap()
    }

    /// Closed-box test: does the segment a-b meet the unit cell centered at
    /// `c`? Exact rational slab test on doubled coordinates.
    fn touches<const D: usize>(a: [i64; D], b: [i64; D], c: [i64; D]) -> bool {
        // t in [lo_n/lo_d, hi_n/hi_d], start with [0, 1]
        let (mut lo, mut hi) = ((0i128, 1i128), (1i128, 1i128));
        for i in 0..D {
            let d = 2 * (b[i] - a[i]) as i128;
            let p = 2 * a[i] as i128;
            let (bmin, bmax) = (2 * c[i] as i128 - 1, 2 * c[i] as i128 + 1);
            if d == 0 {
                if p < bmin || p > bmax {
                    return false;
                }
                continue;
            }
            let (mut t0, mut t1) = ((bmin - p, d), (bmax - p, d));
            if d < 0 {
                t0 = (-(bmin - p), -d);
                t1 = (-(bmax - p), -d);
                std::mem::swap(&mut t0, &mut t1);
            }
            // lo = max(lo, t0), hi = min(hi, t1)
            if t0.0 * lo.1 > lo.0 * t0.1 {
                lo = t0;
            }
            if t1.0 * hi.1 < hi.0 * t1.1 {
                hi = t1;
            }
        }
        lo.0 * hi.1 <= hi.0 * lo.1
    }

    fn oracle<const D: usize>(a: [i64; D], b: [i64; D]) -> HashSet<[i64; D]> {
        let mut out = HashSet::new();
        let lo: Vec<i64> = (0..D).map(|i| a[i].min(b[i])).collect();
        let hi: Vec<i64> = (0..D).map(|i| a[i].max(b[i])).collect();
        let total: i64 = (0..D).map(|i| hi[i] - lo[i] + 1).product();
        for k in 0..total {
            let mut c = [0i64; D];
            let mut rem = k;
            for i in 0..D {
                let n = hi[i] - lo[i] + 1;
                c[i] = lo[i] + rem % n;
                rem /= n;
            }
            if touches(a, b, c) {
                out.insert(c);
            }
        }
        out
    }

    #[test]
    fn supercover_matches_box_oracle_2d() {
        for ax in -3..=3 {
            for ay in -3..=3 {
                for (bx, by) in [(0, 0), (5, 2), (4, 4), (-3, 6), (7, -1), (2, -2), (0, 5)] {
                    let (a, b) = ([ax, ay], [bx, by]);
                    let path = supercover(a, b);
                    let set: HashSet<_> = path.iter().copied().collect();
                    assert_eq!(set.len(), path.len(), "duplicates {a:?}->{b:?}");
                    assert_eq!(set, oracle(a, b), "{a:?}->{b:?}");
                    assert_eq!(path[0], a);
                    assert_eq!(*path.last().unwrap(), b);
                }
            }
        }
    }

    #[test]
    fn supercover_matches_box_oracle_3d() {
        let ends = [[0, 0, 0], [3, 3, 3], [4, -2, 1], [-2, 2, 5], [1, 0, 0], [6, 3, 0]];
        for a in ends {
            for b in ends {
                let path = supercover(a, b);
                let set: HashSet<_> = path.iter().copied().collect();
                assert_eq!(set.len(), path.len());
                assert_eq!(set, oracle(a, b), "{a:?}->{b:?}");
            }
        }
        // pure diagonal through cube corners: 3 steps x 7 cells + start
        assert_eq!(supercover([0, 0, 0], [3, 3, 3]).len(), 22);
    }

    #[test]
    fn corner_to_corner_positions_only() {
        let cfg = EncodeConfig::default();
        let img = encode_2d(&trace(&[(0.0, 0.0), (1.0, 1.0)], &[]), &FeatureSet::POSITIONS, &cfg).unwrap();
        let d = img.pixels.data();
        assert!(d.iter().all(|&v| v == 0.0 || v == 1.0));
        let plane = 128 * 128;
        let mask: HashSet<(i64, i64)> = (0..plane)
            .filter(|&i| d[i] != 0.0)
            .map(|i| ((i / 128) as i64, (i % 128) as i64))
            .collect();
        // from bottom-left (row 126, col 1) to top-right (row 1, col 126)
        let want: HashSet<(i64, i64)> = oracle([126, 1], [1, 126]).into_iter().map(|c| (c[0], c[1])).collect();
        assert_eq!(mask, want);
        // only the main stroke band: row + col within one of 127
        assert!(mask.iter().all(|(r, c)| (r + c - 127).abs() <= 1));
        for i in 0..plane {
            assert_eq!(d[i], d[plane + i]);
            assert_eq!(d[i], d[2 * plane + i]);
        }
    }

    #[test]
    fn repeated_point_is_one_disc() {
        let cfg = EncodeConfig { w_min: 3, w_max: 7, ..Default::default() };
        let img = encode_2d(&trace(&[(0.3, 0.6); 5], &[]), &FeatureSet::POSITIONS, &cfg).unwrap();
        let nz: Vec<usize> = (0..128 * 128).filter(|&i| img.pixels.data()[i] != 0.0).collect();
        assert_eq!(nz.len(), disc_offsets(3).len());
        let row = 127 - grid_index(0.6, 128, 1);
        let col = grid_index(0.3, 128, 1);
        assert!(nz.contains(&((row * 128 + col) as usize)));
    }

    #[test]
    fn disc_sizes() {
        assert_eq!(disc_offsets(1), vec![(0, 0)]);
        assert_eq!(disc_offsets(3).len(), 9);
        assert_eq!(disc_offsets(7).len(), 37);
    }

    #[test]
    fn width_follows_velocity() {
        let cfg = EncodeConfig::default();
        let pts = [(0.2, 0.5), (0.8, 0.5)];
        let slow = trace(&pts, &[(Feature::Velocity, vec![0.0, 0.0])]);
        let fast = trace(&pts, &[(Feature::Velocity, vec![1.0, 1.0])]);
        let fs = FeatureSet::POSITIONS_VELOCITY;
        let a = encode_2d(&slow, &fs, &cfg).unwrap().pixels.count_nonzero();
        let b = encode_2d(&fast, &fs, &cfg).unwrap().pixels.count_nonzero();
        assert!(b > 5 * a, "{a} vs {b}");
    }

    #[test]
    fn pressure_ramp_colors_non_decreasing() {
        // spiral, pressure rising 0 -> 1 along the path
        let n = 300;
        let pts: Vec<(f64, f64)> = (0..n)
            .map(|i| {
                let th = i as f64 / n as f64 * 6.0 * std::f64::consts::PI;
                let r = th / (6.0 * std::f64::consts::PI);
                (0.5 + 0.5 * r * th.cos(), 0.5 + 0.5 * r * th.sin())
            })
            .collect();
        let p: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        let fs = FeatureSet::new(false, false, true, false);
        let cfg = EncodeConfig::default();
        let tr = trace(&pts, &[(Feature::Pressure, p.clone())]);
        let img = encode_2d(&tr, &fs, &cfg).unwrap();
        let plane = 128 * 128;
        // oracle: expected blue of every segment is the endpoint mean
        let mut last = -1.0f32;
        for i in 0..n - 1 {
            let want = ((p[i] + p[i + 1]) / 2.0) as f32;
            assert!(want >= last);
            last = want;
        }
        // each segment's end cell carries the segment or a later one's blue
        let xs = tr.channel(Feature::X).unwrap();
        let ys = tr.channel(Feature::Y).unwrap();
        for i in 1..n {
            let row = 127 - grid_index(ys[i], 128, 1);
            let col = grid_index(xs[i], 128, 1);
            let b = img.pixels.data()[2 * plane + (row * 128 + col) as usize];
            let seg_b = ((p[i - 1] + p[i]) / 2.0) as f32;
            assert!(b >= seg_b, "segment {i}: {b} < {seg_b}");
        }
    }

    #[test]
    fn encode_1d_stacks_canonical_order() {
        let cfg = EncodeConfig::default();
        let n = 128;
        let xs: Vec<(f64, f64)> = (0..n).map(|i| (i as f64 / 127.0, 1.0 - i as f64 / 127.0)).collect();
        let tr = trace(&xs, &[]);
        let s = encode_1d(&tr, &FeatureSet::POSITIONS, &cfg).unwrap();
        assert_eq!(s.values.shape(), &[2, 128]);
        assert_eq!(s.values.get(&[0, 127]), 1.0);
        assert_eq!(s.values.get(&[1, 127]), 0.0);
        assert!(matches!(
            encode_1d(&tr, &FeatureSet::ALL, &cfg),
            Err(Error::MissingChannel("azimuth"))
        ));
        let short = trace(&xs[..10], &[]);
        assert!(encode_1d(&short, &FeatureSet::POSITIONS, &cfg).is_err());
    }

    #[test]
    fn voxel_single_sample_and_velocity_column() {
        let cfg = EncodeConfig { voxel_size: 32, ..Default::default() };
        let fs = FeatureSet::POSITIONS_VELOCITY;
        let one = NormalizedTrace::from_channels(
            vec![0.0],
            &[(Feature::X, vec![0.5]), (Feature::Y, vec![0.5]), (Feature::Velocity, vec![0.5])],
            Label::Hc,
        )
        .unwrap();
        let g = encode_3d(&one, &fs, &cfg).unwrap();
        let sparse = g.to_sparse();
        assert_eq!(sparse.len(), 1);
        let c = grid_index(0.5, 32, 1) as u32;
        assert_eq!((sparse[0].ix, sparse[0].iy, sparse[0].iz), (c, c, c));

        let col = trace(&[(0.5, 0.5), (0.5, 0.5)], &[(Feature::Velocity, vec![0.0, 1.0])]);
        let sparse = encode_3d(&col, &fs, &cfg).unwrap().to_sparse();
        assert_eq!(sparse.len(), 30);
        assert!(sparse.iter().all(|v| v.ix == c && v.iy == c));
        let zs: HashSet<u32> = sparse.iter().map(|v| v.iz).collect();
        assert_eq!(zs, (1..=30).collect());

        assert!(matches!(
            encode_3d(&col, &FeatureSet::POSITIONS, &cfg),
            Err(Error::MissingChannel("velocity"))
        ));
    }

    fn spiral(n: usize) -> Vec<(f64, f64)> {
        (0..n)
            .map(|i| {
                let th = i as f64 / n as f64 * 6.0 * std::f64::consts::PI;
                let r = 0.1 + 0.9 * th / (6.0 * std::f64::consts::PI);
                (0.5 + 0.5 * r * th.cos(), 0.5 + 0.5 * r * th.sin())
            })
            .collect()
    }

    fn spiral_trace(n: usize) -> NormalizedTrace {
        let pts = spiral(n);
        let v: Vec<f64> = (0..n).map(|i| (0.5 + 0.5 * (i as f64 * 0.37).sin()).clamp(0.0, 1.0)).collect();
        let p: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        trace(&pts, &[(Feature::Velocity, v), (Feature::Pressure, p.clone()), (Feature::Azimuth, p.clone()), (Feature::Altitude, p)])
    }

    #[test]
    fn width_one_pixel_count_matches_oracle() {
        let cfg = EncodeConfig { w_max: 1, ..Default::default() };
        let tr = spiral_trace(400);
        let img = encode_2d(&tr, &FeatureSet::ALL, &cfg).unwrap();
        let (x, y) = (tr.channel(Feature::X).unwrap(), tr.channel(Feature::Y).unwrap());
        let mut cells = HashSet::new();
        for i in 0..x.len() - 1 {
            let a = [127 - grid_index(y[i], 128, 1), grid_index(x[i], 128, 1)];
            let b = [127 - grid_index(y[i + 1], 128, 1), grid_index(x[i + 1], 128, 1)];
            cells.extend(oracle(a, b));
        }
        let plane = 128 * 128;
        let d = img.pixels.data();
        let lit = (0..plane).filter(|&i| (0..3).any(|c| d[c * plane + i] != 0.0)).count();
        assert_eq!(lit, cells.len());
        assert!(d.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn spiral_voxels_match_oracle_and_round_trip() {
        let cfg = EncodeConfig { voxel_size: 32, ..Default::default() };
        let tr = spiral_trace(300);
        let g = encode_3d(&tr, &FeatureSet::ALL, &cfg).unwrap();
        let (x, y, v) = (
            tr.channel(Feature::X).unwrap(),
            tr.channel(Feature::Y).unwrap(),
            tr.channel(Feature::Velocity).unwrap(),
        );
        let idx = |i: usize| [grid_index(x[i], 32, 1), grid_index(y[i], 32, 1), grid_index(v[i], 32, 1)];
        let mut cells = HashSet::new();
        for i in 0..x.len() - 1 {
            cells.extend(oracle(idx(i), idx(i + 1)));
        }
        let sparse = g.to_sparse();
        assert_eq!(sparse.len(), cells.len());
        let got: HashSet<[i64; 3]> = sparse.iter().map(|s| [s.ix as i64, s.iy as i64, s.iz as i64]).collect();
        assert_eq!(got, cells);
        assert_eq!(VoxelGrid3D::from_sparse(32, &sparse).unwrap(), g);
    }

    #[test]
    fn voxel_projection_covers_width_one_image() {
        let tr = spiral_trace(500);
        let fs = FeatureSet::POSITIONS_VELOCITY;
        let cfg = EncodeConfig { w_max: 1, voxel_size: 128, ..Default::default() };
        let img = encode_2d(&tr, &fs, &cfg).unwrap();
        let g = encode_3d(&tr, &fs, &cfg).unwrap();
        let r = 128;
        let mut proj = vec![false; r * r];
        let d = g.voxels.data();
        for z in 0..r {
            for i in 0..r * r {
                proj[i] |= d[z * r * r + i] != 0.0;
            }
        }
        for i in 0..r * r {
            if img.pixels.data()[i] != 0.0 {
                assert!(proj[i], "pixel {i} missing from projection");
            }
        }
    }

    #[test]
    fn dimension_parsing() {
        assert_eq!("2".parse::<Dimension>().unwrap(), Dimension::Two);
        assert_eq!("3d".parse::<Dimension>().unwrap(), Dimension::Three);
        assert!("4".parse::<Dimension>().is_err());
        assert_eq!(Dimension::One.input_channels(&FeatureSet::POSITIONS_PEN), 5);
        assert_eq!(Dimension::Three.input_channels(&FeatureSet::POSITIONS_PEN), 3);
    }
}
