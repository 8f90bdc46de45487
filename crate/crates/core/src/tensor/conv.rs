//! N-dimensional cross-correlation lowered to GEMM.
//!
//! Inputs of rank 1 and 2 are treated as rank 3 with unit leading axes, so
//! one kernel path serves all three dimensionalities. Output positions are
//! processed in chunks of whole output rows to bound the patch matrix size.

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Upper bound on patch-matrix elements per chunk.
const COL_BUDGET: usize = 1 << 22;

/// Convolution geometry: cubic kernel, same stride and padding on every
/// spatial axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConvSpec {
    pub rank: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvSpec {
    pub fn new(
        rank: usize,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        if !(1..=3).contains(&rank) {
            return Err(Error::UnsupportedRank(rank));
        }
        if kernel % 2 == 0 || stride == 0 || in_channels == 0 || out_channels == 0 {
            return Err(Error::ShapeMismatch(format!(
                "invalid conv spec: k={kernel} s={stride} cin={in_channels} cout={out_channels}"
            )));
        }
        Ok(ConvSpec {
            rank,
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        })
    }

    /// `floor((m + 2p - k) / s) + 1`, or `None` when the padded input is
    /// smaller than the kernel.
    pub fn output_extent(&self, m: usize) -> Option<usize> {
        let padded = m + 2 * self.padding;
        (padded >= self.kernel).then(|| (padded - self.kernel) / self.stride + 1)
    }

    /// Output shape `(C_out, extents...)` for an input `(C_in, extents...)`.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        if input.len() != self.rank + 1 || input[0] != self.in_channels {
            return Err(Error::ShapeMismatch(format!(
                "conv expects ({}, {} spatial axes), got {input:?}",
                self.in_channels, self.rank
            )));
        }
        let mut out = vec![self.out_channels];
        for &m in &input[1..] {
            out.push(self.output_extent(m).ok_or_else(|| {
                Error::ShapeUnderflow(format!("extent {m} smaller than kernel {}", self.kernel))
            })?);
        }
        Ok(out)
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        let mut s = vec![self.out_channels, self.in_channels];
        s.extend(std::iter::repeat_n(self.kernel, self.rank));
        s
    }

    pub fn param_count(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel.pow(self.rank as u32) + self.out_channels
    }
}

/// A [`ConvSpec`] bound to a concrete input extent, expressed on three
/// spatial axes.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeometry {
    cin: usize,
    cout: usize,
    inp: [usize; 3],
    k: [usize; 3],
    s: [usize; 3],
    p: [usize; 3],
    out: [usize; 3],
}

impl ConvGeometry {
    pub(crate) fn new(spec: &ConvSpec, input_shape: &[usize]) -> Result<Self> {
        let out_shape = spec.output_shape(input_shape)?;
        let lead = 3 - spec.rank;
        let mut g = ConvGeometry {
            cin: spec.in_channels,
            cout: spec.out_channels,
            inp: [1; 3],
            k: [1; 3],
            s: [1; 3],
            p: [0; 3],
            out: [1; 3],
        };
        for a in 0..spec.rank {
            g.inp[lead + a] = input_shape[1 + a];
            g.out[lead + a] = out_shape[1 + a];
            g.k[lead + a] = spec.kernel;
            g.s[lead + a] = spec.stride;
            g.p[lead + a] = spec.padding;
        }
        Ok(g)
    }

    fn kvol(&self) -> usize {
        self.k.iter().product()
    }

    fn kdim(&self) -> usize {
        self.cin * self.kvol()
    }

    fn in_len(&self) -> usize {
        self.inp.iter().product()
    }

    fn out_len(&self) -> usize {
        self.out.iter().product()
    }

    fn lines(&self) -> usize {
        self.out[0] * self.out[1]
    }

    fn lines_per_chunk(&self) -> usize {
        (COL_BUDGET / (self.kdim() * self.out[2]).max(1)).clamp(1, self.lines())
    }

    /// Visits, for every patch-matrix row and every output line in
    /// `[l0, l1)`, the input row it reads from (or `None` when the line
    /// falls in the zero padding).
    #[inline]
    fn for_each_line<F>(&self, l0: usize, l1: usize, mut f: F)
    where
        F: FnMut(usize, usize, usize, Option<usize>),
    {
        let [d, h, w] = self.inp;
        for ci in 0..self.cin {
            for kz in 0..self.k[0] {
                for ky in 0..self.k[1] {
                    for kx in 0..self.k[2] {
                        let row = ((ci * self.k[0] + kz) * self.k[1] + ky) * self.k[2] + kx;
                        for (li, line) in (l0..l1).enumerate() {
                            let oz = line / self.out[1];
                            let oy = line % self.out[1];
                            let iz = (oz * self.s[0] + kz) as isize - self.p[0] as isize;
                            let iy = (oy * self.s[1] + ky) as isize - self.p[1] as isize;
                            let src = (iz >= 0 && iy >= 0 && (iz as usize) < d && (iy as usize) < h)
                                .then(|| ((ci * d + iz as usize) * h + iy as usize) * w);
                            f(row, li, kx, src);
                        }
                    }
                }
            }
        }
    }

    /// Valid `ox` range for kernel offset `kx`, i.e. outputs whose input
    /// column lies inside `[0, w)`.
    #[inline]
    fn ox_range(&self, kx: usize) -> (usize, usize) {
        let (s, p, w, wo) = (self.s[2], self.p[2], self.inp[2], self.out[2]);
        // ix = ox*s + kx - p  must satisfy 0 <= ix < w
        let lo = if kx >= p { 0 } else { (p - kx).div_ceil(s) };
        let hi = if w + p > kx { ((w + p - kx - 1) / s + 1).min(wo) } else { 0 };
        (lo.min(hi), hi)
    }

    fn im2col<T: Scalar>(&self, input: &[T], l0: usize, l1: usize, col: &mut [T]) {
        let wo = self.out[2];
        let chunk = (l1 - l0) * wo;
        let (s, p) = (self.s[2], self.p[2]);
        self.for_each_line(l0, l1, |row, li, kx, src| {
            let seg = &mut col[row * chunk + li * wo..row * chunk + (li + 1) * wo];
            match src {
                None => seg.fill(T::ZERO),
                Some(base) => {
                    let (lo, hi) = self.ox_range(kx);
                    seg[..lo].fill(T::ZERO);
                    seg[hi..].fill(T::ZERO);
                    if s == 1 {
                        let start = base + lo + kx - p;
                        seg[lo..hi].copy_from_slice(&input[start..start + (hi - lo)]);
                    } else {
                        for (ox, v) in seg.iter_mut().enumerate().take(hi).skip(lo) {
                            *v = input[base + ox * s + kx - p];
                        }
                    }
                }
            }
        });
    }

    fn col2im_add<T: Scalar>(&self, col: &[T], l0: usize, l1: usize, grad_in: &mut [T]) {
        let wo = self.out[2];
        let chunk = (l1 - l0) * wo;
        let (s, p) = (self.s[2], self.p[2]);
        self.for_each_line(l0, l1, |row, li, kx, src| {
            if let Some(base) = src {
                let seg = &col[row * chunk + li * wo..row * chunk + (li + 1) * wo];
                let (lo, hi) = self.ox_range(kx);
                for (ox, &v) in seg.iter().enumerate().take(hi).skip(lo) {
                    grad_in[base + ox * s + kx - p] += v;
                }
            }
        });
    }
}

fn check_params<T: Scalar>(weights: &Tensor<T>, bias: &Tensor<T>, spec: &ConvSpec) -> Result<()> {
    if weights.shape() != spec.weight_shape().as_slice() {
        return Err(Error::ShapeMismatch(format!(
            "conv weights {:?}, expected {:?}",
            weights.shape(),
            spec.weight_shape()
        )));
    }
    if bias.shape() != [spec.out_channels] {
        return Err(Error::ShapeMismatch(format!(
            "conv bias {:?}, expected [{}]",
            bias.shape(),
            spec.out_channels
        )));
    }
    Ok(())
}

/// Zero-padded strided cross-correlation.
///
/// `input` is `(C_in, m_1..m_N)`, `weights` `(C_out, C_in, k^N)`, `bias`
/// `(C_out)`.
pub fn conv_forward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    check_params(weights, bias, spec)?;
    let g = ConvGeometry::new(spec, input.shape())?;
    let out_shape = spec.output_shape(input.shape())?;
    let plen = g.out_len();
    let kdim = g.kdim();
    let wo = g.out[2];

    let mut out = vec![T::ZERO; g.cout * plen];
    for (c, row) in out.chunks_mut(plen).enumerate() {
        row.fill(bias.data()[c]);
    }
    let step = g.lines_per_chunk();
    let mut col = vec![T::ZERO; kdim * step * wo];
    let mut l0 = 0;
    while l0 < g.lines() {
        let l1 = (l0 + step).min(g.lines());
        let chunk = (l1 - l0) * wo;
        g.im2col(input.data(), l0, l1, &mut col[..kdim * chunk]);
        debug_assert!(weights.len() >= g.cout * kdim);
        // SAFETY: A is cout x kdim row-major inside `weights`; B is
        // kdim x chunk row-major inside `col`; C addresses rows of length
        // plen starting at column l0*wo, the last index being
        // (cout-1)*plen + l0*wo + chunk - 1 < cout*plen.
        unsafe {
            T::gemm(
                g.cout,
                kdim,
                chunk,
                T::ONE,
                weights.data().as_ptr(),
                kdim as isize,
                1,
                col.as_ptr(),
                chunk as isize,
                1,
                T::ONE,
                out.as_mut_ptr().add(l0 * wo),
                plen as isize,
                1,
            );
        }
        l0 = l1;
    }
    Tensor::from_vec(&out_shape, out)
}

/// Gradients of [`conv_forward`].
#[derive(Debug, Clone)]
pub struct ConvGrads<T: Scalar> {
    /// `None` when the caller did not ask for the input gradient.
    pub input: Option<Tensor<T>>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Reverse-mode gradients of [`conv_forward`] with respect to input,
/// weights and bias.
pub fn conv_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    weights: &Tensor<T>,
    spec: &ConvSpec,
    need_input_grad: bool,
) -> Result<ConvGrads<T>> {
    check_params(weights, &Tensor::zeros(&[spec.out_channels]), spec)?;
    let g = ConvGeometry::new(spec, input.shape())?;
    let out_shape = spec.output_shape(input.shape())?;
    if grad_out.shape() != out_shape.as_slice() {
        return Err(Error::ShapeMismatch(format!(
            "grad_out {:?}, expected {out_shape:?}",
            grad_out.shape()
        )));
    }
    let plen = g.out_len();
    let kdim = g.kdim();
    let wo = g.out[2];
    let gout = grad_out.data();

    let gbias: Vec<T> = gout
        .chunks(plen)
        .map(|row| row.iter().fold(T::ZERO, |a, &b| a + b))
        .collect();
    let mut gw = vec![T::ZERO; g.cout * kdim];
    let mut gin = need_input_grad.then(|| vec![T::ZERO; g.cin * g.in_len()]);

    let step = g.lines_per_chunk();
    let mut col = vec![T::ZERO; kdim * step * wo];
    let mut gcol = if need_input_grad {
        vec![T::ZERO; kdim * step * wo]
    } else {
        Vec::new()
    };
    let mut l0 = 0;
    while l0 < g.lines() {
        let l1 = (l0 + step).min(g.lines());
        let chunk = (l1 - l0) * wo;
        g.im2col(input.data(), l0, l1, &mut col[..kdim * chunk]);
        // SAFETY: A is the cout x chunk block of grad_out at column l0*wo
        // (row stride plen); B is col viewed transposed (chunk x kdim);
        // C is gw (cout x kdim).
        unsafe {
            T::gemm(
                g.cout,
                chunk,
                kdim,
                T::ONE,
                gout.as_ptr().add(l0 * wo),
                plen as isize,
                1,
                col.as_ptr(),
                1,
                chunk as isize,
                T::ONE,
                gw.as_mut_ptr(),
                kdim as isize,
                1,
            );
        }
        if let Some(gin) = gin.as_mut() {
            // SAFETY: A is weights viewed transposed (kdim x cout); B is the
            // cout x chunk block of grad_out; C is gcol (kdim x chunk).
            unsafe {
                T::gemm(
                    kdim,
                    g.cout,
                    chunk,
                    T::ONE,
                    weights.data().as_ptr(),
                    1,
                    kdim as isize,
                    gout.as_ptr().add(l0 * wo),
                    plen as isize,
                    1,
                    T::ZERO,
                    gcol.as_mut_ptr(),
                    chunk as isize,
                    1,
                );
            }
            g.col2im_add(&gcol[..kdim * chunk], l0, l1, gin);
        }
        l0 = l1;
    }

    Ok(ConvGrads {
        input: gin.map(|v| Tensor::from_vec(input.shape(), v)).transpose()?,
        weights: Tensor::from_vec(&spec.weight_shape(), gw)?,
        bias: Tensor::from_vec(&[spec.out_channels], gbias)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct nested-loop convolution on up to three spatial axes.
    fn naive_conv(input: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>, spec: &ConvSpec) -> Tensor<f64> {
        let out_shape = spec.output_shape(input.shape()).unwrap();
        let lead = 3 - spec.rank;
        let pad3 = |s: &[usize]| {
            let mut e = [1usize; 3];
            e[lead..].copy_from_slice(s);
            e
        };
        let ie = pad3(&input.shape()[1..]);
        let oe = pad3(&out_shape[1..]);
        let mut ke = [1usize; 3];
        for k in ke.iter_mut().skip(lead) {
            *k = spec.kernel;
        }
        let (s, p) = (spec.stride as isize, spec.padding as isize);
        let axis_s = |a: usize| if a < lead { 1 } else { s };
        let axis_p = |a: usize| if a < lead { 0 } else { p };
        let mut out = vec![0.0; out_shape.iter().product()];
        for co in 0..spec.out_channels {
            for oz in 0..oe[0] {
                for oy in 0..oe[1] {
                    for ox in 0..oe[2] {
                        let mut acc = b.data()[co];
                        for ci in 0..spec.in_channels {
                            for kz in 0..ke[0] {
                                for ky in 0..ke[1] {
                                    for kx in 0..ke[2] {
                                        let iz = oz as isize * axis_s(0) + kz as isize - axis_p(0);
                                        let iy = oy as isize * axis_s(1) + ky as isize - axis_p(1);
                                        let ix = ox as isize * axis_s(2) + kx as isize - axis_p(2);
                                        if iz < 0 || iy < 0 || ix < 0 {
                                            continue;
                                        }
                                        let (iz, iy, ix) = (iz as usize, iy as usize, ix as usize);
                                        if iz >= ie[0] || iy >= ie[1] || ix >= ie[2] {
                                            continue;
                                        }
                                        let xi = ((ci * ie[0] + iz) * ie[1] + iy) * ie[2] + ix;
                                        let wi = (((co * spec.in_channels + ci) * ke[0] + kz) * ke[1] + ky) * ke[2] + kx;
                                        acc += input.data()[xi] * w.data()[wi];
                                    }
                                }
                            }
                        }
                        out[((co * oe[0] + oz) * oe[1] + oy) * oe[2] + ox] = acc;
                    }
                }
            }
        }
        Tensor::from_vec(&out_shape, out).unwrap()
    }

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn spatial(rank: usize, m: usize, c: usize) -> Vec<usize> {
        let mut s = vec![c];
        s.extend(std::iter::repeat_n(m, rank));
        s
    }

    #[test]
    fn table_geometry_1d() {
        let spec = ConvSpec::new(1, 6, 48, 5, 2, 2).unwrap();
        let x = Tensor::<f32>::zeros(&[6, 128]);
        let w = Tensor::zeros(&spec.weight_shape());
        let b = Tensor::zeros(&[48]);
        assert_eq!(conv_forward(&x, &w, &b, &spec).unwrap().shape(), &[48, 64]);
    }

    #[test]
    fn identity_kernel() {
        let spec = ConvSpec::new(2, 1, 1, 3, 1, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(&[1, 7, 9], &mut rng);
        let mut w = Tensor::zeros(&spec.weight_shape());
        w.set(&[0, 0, 1, 1], 1.0);
        let y = conv_forward(&x, &w, &Tensor::zeros(&[1]), &spec).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn matches_naive_oracle_all_ranks() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for rank in 1..=3 {
            for &(k, s, p, m) in &[(3, 1, 1, 6), (5, 2, 2, 8), (3, 2, 0, 7), (1, 1, 0, 4), (5, 3, 1, 9)] {
                let spec = ConvSpec::new(rank, 2, 3, k, s, p).unwrap();
                let x = random(&spatial(rank, m, 2), &mut rng);
                let w = random(&spec.weight_shape(), &mut rng);
                let b = random(&[3], &mut rng);
                let got = conv_forward(&x, &w, &b, &spec).unwrap();
                let want = naive_conv(&x, &w, &b, &spec);
                assert_eq!(got.shape(), want.shape());
                for (a, e) in got.data().iter().zip(want.data()) {
                    assert!((a - e).abs() < 1e-10, "rank {rank} k{k} s{s} p{p}: {a} vs {e}");
                }
            }
        }
    }

    #[test]
    fn random_3d_case_f32_within_1e5() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = ConvSpec::new(3, 2, 4, 3, 1, 1).unwrap();
        let x = random(&[2, 6, 6, 6], &mut rng);
        let w = random(&spec.weight_shape(), &mut rng);
        let b = random(&[4], &mut rng);
        let want = naive_conv(&x, &w, &b, &spec);
        let got = conv_forward(&x.cast::<f32>(), &w.cast(), &b.cast(), &spec).unwrap();
        for (a, e) in got.data().iter().zip(want.data()) {
            assert!((*a as f64 - e).abs() < 1e-5);
        }
    }

    #[test]
    fn chunked_path_matches_oracle() {
        // large enough that the patch matrix is split into several chunks
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let spec = ConvSpec::new(2, 40, 2, 5, 1, 2).unwrap();
        let x = random(&[40, 150, 150], &mut rng);
        let w = random(&spec.weight_shape(), &mut rng);
        let b = random(&[2], &mut rng);
        let g = ConvGeometry::new(&spec, x.shape()).unwrap();
        assert!(g.lines_per_chunk() < g.lines());
        let got = conv_forward(&x, &w, &b, &spec).unwrap();
        let want = naive_conv(&x, &w, &b, &spec);
        for (a, e) in got.data().iter().zip(want.data()) {
            assert!((a - e).abs() < 1e-9);
        }
    }

    #[test]
    fn backward_zero_and_single_element() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let spec = ConvSpec::new(2, 2, 3, 3, 1, 0).unwrap();
        let x = random(&[2, 5, 5], &mut rng);
        let w = random(&spec.weight_shape(), &mut rng);
        let gz = Tensor::zeros(&[3, 3, 3]);
        let g = conv_backward(&gz, &x, &w, &spec, true).unwrap();
        assert!(g.weights.data().iter().all(|&v| v == 0.0));
        assert!(g.bias.data().iter().all(|&v| v == 0.0));
        assert!(g.input.unwrap().data().iter().all(|&v| v == 0.0));

        // one-hot grad_out at (co=1, oy=2, ox=0): dW[1] equals the patch
        let mut go = Tensor::zeros(&[3, 3, 3]);
        go.set(&[1, 2, 0], 1.0);
        let g = conv_backward(&go, &x, &w, &spec, false).unwrap();
        assert!(g.input.is_none());
        for ci in 0..2 {
            for ky in 0..3 {
                for kx in 0..3 {
                    assert_eq!(g.weights.get(&[1, ci, ky, kx]), x.get(&[ci, 2 + ky, kx]));
                    assert_eq!(g.weights.get(&[0, ci, ky, kx]), 0.0);
                }
            }
        }
        assert_eq!(g.bias.data(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn forward_is_bilinear() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for rank in 1..=3 {
            let spec = ConvSpec::new(rank, 2, 2, 3, 2, 1).unwrap();
            let shape = spatial(rank, 5, 2);
            let (x1, x2) = (random(&shape, &mut rng), random(&shape, &mut rng));
            let (w1, w2) = (random(&spec.weight_shape(), &mut rng), random(&spec.weight_shape(), &mut rng));
            let zb = Tensor::zeros(&[2]);
            let sum = |a: &Tensor<f64>, b: &Tensor<f64>| {
                Tensor::from_vec(a.shape(), a.data().iter().zip(b.data()).map(|(p, q)| p + q).collect()).unwrap()
            };
            let lhs = conv_forward(&sum(&x1, &x2), &w1, &zb, &spec).unwrap();
            let r1 = conv_forward(&x1, &w1, &zb, &spec).unwrap();
            let r2 = conv_forward(&x2, &w1, &zb, &spec).unwrap();
            for (l, (a, b)) in lhs.data().iter().zip(r1.data().iter().zip(r2.data())) {
                assert!((l - (a + b)).abs() < 1e-12);
            }
            let lhs = conv_forward(&x1, &sum(&w1, &w2), &zb, &spec).unwrap();
            let r2 = conv_forward(&x1, &w2, &zb, &spec).unwrap();
            for (l, (a, b)) in lhs.data().iter().zip(r1.data().iter().zip(r2.data())) {
                assert!((l - (a + b)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shape_errors() {
        let spec = ConvSpec::new(2, 3, 4, 3, 1, 1).unwrap();
        let w = Tensor::<f32>::zeros(&spec.weight_shape());
        let b = Tensor::zeros(&[4]);
        assert!(matches!(
            conv_forward(&Tensor::zeros(&[2, 8, 8]), &w, &b, &spec),
            Err(Error::ShapeMismatch(_))
        ));
        assert!(matches!(
            conv_forward(&Tensor::zeros(&[3, 8]), &w, &b, &spec),
            Err(Error::ShapeMismatch(_))
        ));
        assert!(ConvSpec::new(2, 1, 1, 4, 1, 0).is_err());
        assert!(matches!(ConvSpec::new(4, 1, 1, 3, 1, 0), Err(Error::UnsupportedRank(4))));
        let spec = ConvSpec::new(1, 1, 1, 5, 1, 0).unwrap();
        assert_eq!(spec.output_extent(4), None);
    }
}
