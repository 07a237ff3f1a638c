//! 2-D convolution as a candle custom op.
//!
//! Forward and both backward products are im2col / col2im + GEMM, processed in
//! chunks of output pixels so the column buffer never exceeds
//! [`MAX_COL_ELEMS`] elements. This keeps the 9x9 head convolutions at
//! 512x512 within a few hundred MB.

use candle_core::backend::BackendStorage;
use candle_core::{CpuStorage, CustomOp2, DType, Layout, Shape, Tensor};

use crate::error::{Error, Result};

const MAX_COL_ELEMS: usize = 1 << 22;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dParams {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl Conv2dParams {
    pub const fn new(stride: usize, padding: usize, dilation: usize) -> Self {
        Self {
            stride,
            padding,
            dilation,
        }
    }

    /// Stride 1 with "same" padding for an odd kernel.
    pub const fn same(kernel: usize, dilation: usize) -> Self {
        Self::new(1, dilation * (kernel - 1) / 2, dilation)
    }
}

#[derive(Debug, Clone, Copy)]
struct Geometry {
    batch: usize,
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    h_out: usize,
    w_out: usize,
    p: Conv2dParams,
}

impl Geometry {
    fn k(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    fn n(&self) -> usize {
        self.h_out * self.w_out
    }

    fn chunk(&self) -> usize {
        (MAX_COL_ELEMS / self.k().max(1)).clamp(1, self.n())
    }
}

fn geometry(x: &[usize], k: &[usize], p: Conv2dParams) -> Result<Geometry> {
    let (&[batch, c_in, h, w], &[c_out, k_in, kh, kw]) = (x, k) else {
        return Err(Error::Shape(format!(
            "conv2d expects rank-4 input and kernel, got {x:?} and {k:?}"
        )));
    };
    if c_in != k_in {
        return Err(Error::Shape(format!(
            "conv2d input has {c_in} channels but kernel {k:?} expects {k_in}"
        )));
    }
    if p.stride == 0 || p.dilation == 0 {
        return Err(Error::Contract("conv2d stride and dilation must be >= 1".into()));
    }
    let span_h = p.dilation * (kh - 1) + 1;
    let span_w = p.dilation * (kw - 1) + 1;
    if h + 2 * p.padding < span_h || w + 2 * p.padding < span_w {
        return Err(Error::Shape(format!(
            "conv2d kernel span {span_h}x{span_w} exceeds padded input {x:?} (padding {})",
            p.padding
        )));
    }
    Ok(Geometry {
        batch,
        c_in,
        h,
        w,
        c_out,
        kh,
        kw,
        h_out: (h + 2 * p.padding - span_h) / p.stride + 1,
        w_out: (w + 2 * p.padding - span_w) / p.stride + 1,
        p,
    })
}

trait Element: Copy + Default + std::ops::AddAssign + candle_core::WithDType {
    /// `c = alpha * a * b + beta * c` with explicit row/column strides.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
    fn unit() -> Self;
}

impl Element for f32 {
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
    fn unit() -> Self {
        1.0
    }
}

impl Element for f64 {
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
    fn unit() -> Self {
        1.0
    }
}

/// Visits every (column-row, output-pixel run) of the im2col matrix for the
/// output pixel range `[n0, n1)`. The callback receives the destination
/// offset inside the chunk, the source plane row offset (or `None` when the
/// row falls in the padding) and the output column range.
#[inline]
fn for_each_run(
    g: &Geometry,
    n0: usize,
    n1: usize,
    mut f: impl FnMut(usize, usize, Option<usize>, usize, usize),
) {
    let np = n1 - n0;
    let pad = g.p.padding as isize;
    for ci in 0..g.c_in {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let mut j = n0;
                while j < n1 {
                    let oy = j / g.w_out;
                    let ox0 = j % g.w_out;
                    let ox1 = g.w_out.min(ox0 + (n1 - j));
                    let iy = (oy * g.p.stride + ky * g.p.dilation) as isize - pad;
                    let src_row = if iy >= 0 && (iy as usize) < g.h {
                        Some(ci * g.h * g.w + iy as usize * g.w)
                    } else {
                        None
                    };
                    f(row * np + (j - n0), kx, src_row, ox0, ox1);
                    j += ox1 - ox0;
                }
            }
        }
    }
}

fn im2col<T: Element>(x: &[T], g: &Geometry, n0: usize, n1: usize, col: &mut [T]) {
    let pad = g.p.padding as isize;
    let (s, d, w) = (g.p.stride, g.p.dilation, g.w as isize);
    for_each_run(g, n0, n1, |dst, kx, src_row, ox0, ox1| {
        let out = &mut col[dst..dst + (ox1 - ox0)];
        match src_row {
            None => out.fill(T::default()),
            Some(base) => {
                for (t, ox) in (ox0..ox1).enumerate() {
                    let ix = (ox * s + kx * d) as isize - pad;
                    out[t] = if ix >= 0 && ix < w {
                        x[base + ix as usize]
                    } else {
                        T::default()
                    };
                }
            }
        }
    });
}

fn col2im<T: Element>(col: &[T], g: &Geometry, n0: usize, n1: usize, dx: &mut [T]) {
    let pad = g.p.padding as isize;
    let (s, d, w) = (g.p.stride, g.p.dilation, g.w as isize);
    for_each_run(g, n0, n1, |src, kx, dst_row, ox0, ox1| {
        if let Some(base) = dst_row {
            let seg = &col[src..src + (ox1 - ox0)];
            for (t, ox) in (ox0..ox1).enumerate() {
                let ix = (ox * s + kx * d) as isize - pad;
                if ix >= 0 && ix < w {
                    dx[base + ix as usize] += seg[t];
                }
            }
        }
    });
}

fn forward<T: Element>(x: &[T], k: &[T], g: &Geometry) -> Vec<T> {
    if g.use_direct() {
        direct_forward(x, k, g)
    } else {
        gemm_forward(x, k, g)
    }
}

fn gemm_forward<T: Element>(x: &[T], k: &[T], g: &Geometry) -> Vec<T> {
    let (kk, n) = (g.k(), g.n());
    let chunk = g.chunk();
    let mut out = vec![T::default(); g.batch * g.c_out * n];
    let mut col = vec![T::default(); kk * chunk];
    for b in 0..g.batch {
        let xb = &x[b * g.c_in * g.h * g.w..(b + 1) * g.c_in * g.h * g.w];
        let ob = &mut out[b * g.c_out * n..(b + 1) * g.c_out * n];
        let mut n0 = 0;
        while n0 < n {
            let n1 = (n0 + chunk).min(n);
            let np = n1 - n0;
            im2col(xb, g, n0, n1, &mut col);
            // out[:, n0..n1] = K[c_out x kk] * col[kk x np]
            unsafe {
                T::gemm(
                    g.c_out,
                    kk,
                    np,
                    k.as_ptr(),
                    kk as isize,
                    1,
                    col.as_ptr(),
                    np as isize,
                    1,
                    T::default(),
                    ob.as_mut_ptr().add(n0),
                    n as isize,
                    1,
                );
            }
            n0 = n1;
        }
    }
    out
}

fn backward_input<T: Element>(dy: &[T], k: &[T], g: &Geometry) -> Vec<T> {
    let (kk, n) = (g.k(), g.n());
    let chunk = g.chunk();
    let plane = g.c_in * g.h * g.w;
    let mut dx = vec![T::default(); g.batch * plane];
    let mut col = vec![T::default(); kk * chunk];
    for b in 0..g.batch {
        let dyb = &dy[b * g.c_out * n..(b + 1) * g.c_out * n];
        let dxb = &mut dx[b * plane..(b + 1) * plane];
        let mut n0 = 0;
        while n0 < n {
            let n1 = (n0 + chunk).min(n);
            let np = n1 - n0;
            // col[kk x np] = K^T[kk x c_out] * dy[:, n0..n1]
            unsafe {
                T::gemm(
                    kk,
                    g.c_out,
                    np,
                    k.as_ptr(),
                    1,
                    kk as isize,
                    dyb.as_ptr().add(n0),
                    n as isize,
                    1,
                    T::default(),
                    col.as_mut_ptr(),
                    np as isize,
                    1,
                );
            }
            col2im(&col[..kk * np], g, n0, n1, dxb);
            n0 = n1;
        }
    }
    dx
}

fn backward_kernel<T: Element>(x: &[T], dy: &[T], g: &Geometry) -> Vec<T> {
    let (kk, n) = (g.k(), g.n());
    let chunk = g.chunk();
    let mut dk = vec![T::default(); g.c_out * kk];
    let mut col = vec![T::default(); kk * chunk];
    for b in 0..g.batch {
        let xb = &x[b * g.c_in * g.h * g.w..(b + 1) * g.c_in * g.h * g.w];
        let dyb = &dy[b * g.c_out * n..(b + 1) * g.c_out * n];
        let mut n0 = 0;
        while n0 < n {
            let n1 = (n0 + chunk).min(n);
            let np = n1 - n0;
            im2col(xb, g, n0, n1, &mut col);
            // dK[c_out x kk] += dy[:, n0..n1] * col^T
            unsafe {
                T::gemm(
                    g.c_out,
                    np,
                    kk,
                    dyb.as_ptr().add(n0),
                    n as isize,
                    1,
                    col.as_ptr(),
                    1,
                    np as isize,
                    T::unit(),
                    dk.as_mut_ptr(),
                    kk as isize,
                    1,
                );
            }
            n0 = n1;
        }
    }
    dk
}

/// Narrow outputs (the 3-channel image head) make im2col + GEMM memory
/// bound; a direct row-wise loop is several times faster there.
const DIRECT_MAX_C_OUT: usize = 4;

impl Geometry {
    fn use_direct(&self) -> bool {
        self.p.stride == 1 && self.c_out <= DIRECT_MAX_C_OUT
    }

    /// Output columns whose input column `ox + shift` is in bounds, for
    /// horizontal tap `kx` (stride 1 only).
    fn direct_cols(&self, kx: usize) -> (usize, usize, isize) {
        let shift = (kx * self.p.dilation) as isize - self.p.padding as isize;
        let lo = (-shift).max(0) as usize;
        let hi = ((self.w as isize - shift).max(0) as usize).min(self.w_out);
        (lo.min(hi), hi, shift)
    }

    fn direct_row(&self, oy: usize, ky: usize) -> Option<usize> {
        let iy = (oy + ky * self.p.dilation) as isize - self.p.padding as isize;
        (iy >= 0 && (iy as usize) < self.h).then_some(iy as usize)
    }
}

/// Calls `f(b, co, ci, ky, kx, oy, iy, lo, hi, shift)` for every non-empty
/// row segment of a stride-1 convolution.
#[inline]
fn for_each_direct_segment(
    g: &Geometry,
    mut f: impl FnMut(usize, usize, usize, usize, usize, usize, usize, usize, usize, isize),
) {
    for b in 0..g.batch {
        for co in 0..g.c_out {
            for ci in 0..g.c_in {
                for ky in 0..g.kh {
                    for kx in 0..g.kw {
                        let (lo, hi, shift) = g.direct_cols(kx);
                        if lo >= hi {
                            continue;
                        }
                        for oy in 0..g.h_out {
                            if let Some(iy) = g.direct_row(oy, ky) {
                                f(b, co, ci, ky, kx, oy, iy, lo, hi, shift);
                            }
                        }
                    }
                }
            }
        }
    }
}

fn direct_forward<T: Element>(x: &[T], k: &[T], g: &Geometry) -> Vec<T> {
    let mut out = vec![T::default(); g.batch * g.c_out * g.n()];
    for_each_direct_segment(g, |b, co, ci, ky, kx, oy, iy, lo, hi, shift| {
        let wv = k[((co * g.c_in + ci) * g.kh + ky) * g.kw + kx];
        let o = ((b * g.c_out + co) * g.h_out + oy) * g.w_out;
        let i = ((b * g.c_in + ci) * g.h + iy) * g.w;
        let src = &x[(i as isize + lo as isize + shift) as usize..][..hi - lo];
        for (dst, &v) in out[o + lo..o + hi].iter_mut().zip(src) {
            *dst += wv * v;
        }
    });
    out
}

fn direct_backward_input<T: Element>(dy: &[T], k: &[T], g: &Geometry) -> Vec<T> {
    let mut dx = vec![T::default(); g.batch * g.c_in * g.h * g.w];
    for_each_direct_segment(g, |b, co, ci, ky, kx, oy, iy, lo, hi, shift| {
        let wv = k[((co * g.c_in + ci) * g.kh + ky) * g.kw + kx];
        let o = ((b * g.c_out + co) * g.h_out + oy) * g.w_out;
        let i = ((b * g.c_in + ci) * g.h + iy) * g.w;
        let dst = &mut dx[(i as isize + lo as isize + shift) as usize..][..hi - lo];
        for (d, &v) in dst.iter_mut().zip(&dy[o + lo..o + hi]) {
            *d += wv * v;
        }
    });
    dx
}

/// Dot product with eight independent partial sums so the loop vectorizes.
#[inline]
fn dot<T: Element>(a: &[T], b: &[T]) -> T {
    let mut lanes = [T::default(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            lanes[i] += x[i] * y[i];
        }
    }
    let mut acc = T::default();
    for (&x, &y) in ra.iter().zip(rb) {
        acc += x * y;
    }
    lanes.iter().fold(acc, |s, &l| s + l)
}

fn direct_backward_kernel<T: Element>(x: &[T], dy: &[T], g: &Geometry) -> Vec<T> {
    let mut dk = vec![T::default(); g.c_out * g.k()];
    for_each_direct_segment(g, |b, co, ci, ky, kx, oy, iy, lo, hi, shift| {
        let o = ((b * g.c_out + co) * g.h_out + oy) * g.w_out;
        let i = ((b * g.c_in + ci) * g.h + iy) * g.w;
        let src = &x[(i as isize + lo as isize + shift) as usize..][..hi - lo];
        dk[((co * g.c_in + ci) * g.kh + ky) * g.kw + kx] += dot(&dy[o + lo..o + hi], src);
    });
    dk
}

fn contiguous<'a, T>(data: &'a [T], layout: &Layout) -> candle_core::Result<&'a [T]> {
    match layout.contiguous_offsets() {
        Some((start, end)) => Ok(&data[start..end]),
        None => candle_core::bail!("conv2d requires contiguous operands"),
    }
}

struct Conv2dOp {
    params: Conv2dParams,
}

impl Conv2dOp {
    fn geometry(&self, x: &Shape, k: &Shape) -> candle_core::Result<Geometry> {
        geometry(x.dims(), k.dims(), self.params).map_err(|e| candle_core::Error::Msg(e.to_string()))
    }
}

impl CustomOp2 for Conv2dOp {
    fn name(&self) -> &'static str {
        "udasr-conv2d"
    }

    fn cpu_fwd(
        &self,
        s1: &CpuStorage,
        l1: &Layout,
        s2: &CpuStorage,
        l2: &Layout,
    ) -> candle_core::Result<(CpuStorage, Shape)> {
        let g = self.geometry(l1.shape(), l2.shape())?;
        let shape = Shape::from((g.batch, g.c_out, g.h_out, g.w_out));
        let storage = match (s1, s2) {
            (CpuStorage::F32(x), CpuStorage::F32(k)) => {
                CpuStorage::F32(forward(contiguous(x, l1)?, contiguous(k, l2)?, &g))
            }
            (CpuStorage::F64(x), CpuStorage::F64(k)) => {
                CpuStorage::F64(forward(contiguous(x, l1)?, contiguous(k, l2)?, &g))
            }
            _ => candle_core::bail!(
                "conv2d supports matching f32 or f64 operands, got {:?} and {:?}",
                s1.dtype(),
                s2.dtype()
            ),
        };
        Ok((storage, shape))
    }

    fn bwd(
        &self,
        x: &Tensor,
        kernel: &Tensor,
        _res: &Tensor,
        grad: &Tensor,
    ) -> candle_core::Result<(Option<Tensor>, Option<Tensor>)> {
        let g = self.geometry(x.shape(), kernel.shape())?;
        let want_x = x.track_op();
        let want_k = kernel.track_op();
        match x.dtype() {
            DType::F32 => backward_tensors::<f32>(x, kernel, grad, &g, want_x, want_k),
            DType::F64 => backward_tensors::<f64>(x, kernel, grad, &g, want_x, want_k),
            dt => candle_core::bail!("conv2d backward unsupported for {dt:?}"),
        }
    }
}

fn backward_tensors<T: Element>(
    x: &Tensor,
    kernel: &Tensor,
    grad: &Tensor,
    g: &Geometry,
    want_x: bool,
    want_k: bool,
) -> candle_core::Result<(Option<Tensor>, Option<Tensor>)> {
    let dy = grad.flatten_all()?.to_vec1::<T>()?;
    let dx = if want_x {
        let k = kernel.flatten_all()?.to_vec1::<T>()?;
        let dx = if g.use_direct() {
            direct_backward_input(&dy, &k, g)
        } else {
            backward_input(&dy, &k, g)
        };
        Some(Tensor::from_vec(dx, x.shape(), x.device())?)
    } else {
        None
    };
    let dk = if want_k {
        let xs = x.flatten_all()?.to_vec1::<T>()?;
        let dk = if g.use_direct() {
            direct_backward_kernel(&xs, &dy, g)
        } else {
            backward_kernel(&xs, &dy, g)
        };
        Some(Tensor::from_vec(dk, kernel.shape(), kernel.device())?)
    } else {
        None
    };
    Ok((dx, dk))
}

/// Differentiable 2-D convolution, `x: [B, Cin, H, W]`, `kernel: [Cout, Cin, kh, kw]`,
/// optional `bias: [Cout]`.
pub fn conv2d(
    x: &Tensor,
    kernel: &Tensor,
    bias: Option<&Tensor>,
    params: Conv2dParams,
) -> Result<Tensor> {
    let g = geometry(x.dims(), kernel.dims(), params)?;
    let y = x.contiguous()?.apply_op2(&kernel.contiguous()?, Conv2dOp { params })?;
    match bias {
        None => Ok(y),
        Some(b) => {
            if b.dims() != [g.c_out] {
                return Err(Error::Shape(format!(
                    "conv2d bias must have shape [{}], got {:?}",
                    g.c_out,
                    b.dims()
                )));
            }
            Ok(y.broadcast_add(&b.reshape((1, g.c_out, 1, 1))?)?)
        }
    }
}

#[cfg(test)]
mod tests {
    use candle_core::{Device, Var};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::from_vec(v, shape, &Device::Cpu).unwrap()
    }

    /// Direct nested-loop convolution.
    fn naive(x: &Tensor, k: &Tensor, p: Conv2dParams) -> Vec<f64> {
        let (b, ci, h, w) = x.dims4().unwrap();
        let (co, _, kh, kw) = k.dims4().unwrap();
        let xs = x.flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let ks = k.flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let ho = (h + 2 * p.padding - p.dilation * (kh - 1) - 1) / p.stride + 1;
        let wo = (w + 2 * p.padding - p.dilation * (kw - 1) - 1) / p.stride + 1;
        let mut out = vec![0.0; b * co * ho * wo];
        for bb in 0..b {
            for o in 0..co {
                for y in 0..ho {
                    for xx in 0..wo {
                        let mut acc = 0.0;
                        for c in 0..ci {
                            for dy in 0..kh {
                                for dx in 0..kw {
                                    let iy = (y * p.stride + dy * p.dilation) as isize
                                        - p.padding as isize;
                                    let ix = (xx * p.stride + dx * p.dilation) as isize
                                        - p.padding as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                        continue;
                                    }
                                    acc += xs[((bb * ci + c) * h + iy as usize) * w + ix as usize]
                                        * ks[((o * ci + c) * kh + dy) * kw + dx];
                                }
                            }
                        }
                        out[((bb * co + o) * ho + y) * wo + xx] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cases = [
            ([2, 3, 9, 7], [4, 3, 3, 3], Conv2dParams::same(3, 1)),
            ([1, 2, 11, 11], [3, 2, 3, 3], Conv2dParams::same(3, 2)),
            ([2, 3, 12, 10], [5, 3, 7, 7], Conv2dParams::new(2, 3, 1)),
            ([1, 4, 8, 8], [2, 4, 1, 1], Conv2dParams::new(1, 0, 1)),
            ([1, 2, 10, 10], [2, 2, 3, 3], Conv2dParams::new(2, 1, 1)),
        ];
        for (xs, ks, p) in cases {
            let x = random(&xs, &mut rng);
            let k = random(&ks, &mut rng);
            let got = conv2d(&x, &k, None, p).unwrap();
            let want = naive(&x, &k, p);
            let got = got.flatten_all().unwrap().to_vec1::<f64>().unwrap();
            assert_eq!(got.len(), want.len());
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b} for {xs:?} {ks:?} {p:?}");
            }
        }
    }

    #[test]
    fn chunked_forward_matches_single_chunk() {
        // K = 300 * 9 > 0, forces many chunks when MAX_COL_ELEMS is small
        // relative to K * N; emulate by comparing two geometries.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random(&[1, 3, 40, 40], &mut rng);
        let k = random(&[2, 3, 9, 9], &mut rng);
        let p = Conv2dParams::same(9, 1);
        let g = geometry(x.dims(), k.dims(), p).unwrap();
        let xs = x.flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let ks = k.flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let full = forward(&xs, &ks, &g);
        let mut small = vec![0.0; g.c_out * g.n()];
        let mut col = vec![0.0; g.k() * 7];
        let mut n0 = 0;
        while n0 < g.n() {
            let n1 = (n0 + 7).min(g.n());
            im2col(&xs, &g, n0, n1, &mut col);
            for o in 0..g.c_out {
                for j in n0..n1 {
                    let mut acc = 0.0;
                    for r in 0..g.k() {
                        acc += ks[o * g.k() + r] * col[r * (n1 - n0) + (j - n0)];
                    }
                    small[o * g.n() + j] = acc;
                }
            }
            n0 = n1;
        }
        for (a, b) in full.iter().zip(&small) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for p in [
            Conv2dParams::same(3, 1),
            Conv2dParams::same(3, 2),
            Conv2dParams::new(2, 1, 1),
        ] {
            let x = Var::from_tensor(&random(&[2, 2, 7, 6], &mut rng)).unwrap();
            let k = Var::from_tensor(&random(&[3, 2, 3, 3], &mut rng)).unwrap();
            let target = random(
                conv2d(&x, &k, None, p).unwrap().dims(),
                &mut rng,
            );
            let loss = |x: &Tensor, k: &Tensor| -> Tensor {
                conv2d(x, k, None, p)
                    .unwrap()
                    .sub(&target)
                    .unwrap()
                    .sqr()
                    .unwrap()
                    .sum_all()
                    .unwrap()
            };
            let grads = loss(x.as_tensor(), k.as_tensor()).backward().unwrap();
            for (var, other, is_x) in [(&x, &k, true), (&k, &x, false)] {
                let g = grads.get(var).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
                let base = var.flatten_all().unwrap().to_vec1::<f64>().unwrap();
                for i in (0..base.len()).step_by(5) {
                    let eval = |delta: f64| {
                        let mut v = base.clone();
                        v[i] += delta;
                        let t = Tensor::from_vec(v, var.shape(), &Device::Cpu).unwrap();
                        let l = if is_x {
                            loss(&t, other.as_tensor())
                        } else {
                            loss(other.as_tensor(), &t)
                        };
                        l.to_scalar::<f64>().unwrap()
                    };
                    let h = 1e-6;
                    let fd = (eval(h) - eval(-h)) / (2.0 * h);
                    assert!(
                        (fd - g[i]).abs() <= 1e-6 * fd.abs().max(1.0),
                        "{p:?} x={is_x} i={i}: fd {fd} vs {}",
                        g[i]
                    );
                }
            }
        }
    }

    #[test]
    fn rejects_channel_mismatch() {
        let x = Tensor::zeros((1, 3, 8, 8), DType::F32, &Device::Cpu).unwrap();
        let k = Tensor::zeros((2, 4, 3, 3), DType::F32, &Device::Cpu).unwrap();
        assert!(matches!(
            conv2d(&x, &k, None, Conv2dParams::same(3, 1)),
            Err(Error::Shape(_))
        ));
    }
}
