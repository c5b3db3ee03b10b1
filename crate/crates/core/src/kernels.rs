//! Convolution and pooling kernels on raw NCHW buffers.
//!
//! Convolutions lower to `im2col` + GEMM. The transposed convolution is the
//! adjoint of the forward one, so the same three routines (forward, input
//! gradient, weight gradient) serve both layer types.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl ConvGeom {
    pub fn new(kernel: usize, stride: usize, padding: usize, dilation: usize) -> Self {
        ConvGeom {
            kernel,
            stride,
            padding,
            dilation,
        }
    }

    pub fn out_len(&self, input: usize) -> Option<usize> {
        let span = self.dilation * (self.kernel - 1) + 1;
        let padded = input + 2 * self.padding;
        if padded < span {
            return None;
        }
        Some((padded - span) / self.stride + 1)
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }
}

/// `C = alpha * op(A) * op(B) + beta * C`, all row-major.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if trans_a {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if trans_b {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    // SAFETY: the asserts above bound every index the kernel touches given
    // these strides, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Output columns `ox` whose input column `ox * stride + offset - padding` is
/// inside `[0, w)`, as a half-open range.
fn valid_cols(w: usize, wo: usize, stride: usize, offset: usize, padding: usize) -> (usize, usize) {
    // First ox with ox * stride + offset >= padding.
    let lo = if offset >= padding {
        0
    } else {
        (padding - offset).div_ceil(stride)
    };
    // Last ox with ox * stride + offset < w + padding.
    let hi = if offset >= w + padding {
        0
    } else {
        (w + padding - offset - 1) / stride + 1
    };
    (lo.min(wo), hi.min(wo).max(lo.min(wo)))
}

#[allow(clippy::too_many_arguments)]
fn im2col(
    x: &[f64],
    c: usize,
    h: usize,
    w: usize,
    g: ConvGeom,
    ho: usize,
    wo: usize,
    col: &mut [f64],
) {
    let k = g.kernel;
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut col[row * ho * wo..(row + 1) * ho * wo];
                let (lo, hi) = valid_cols(w, wo, g.stride, kx * g.dilation, g.padding);
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky * g.dilation) as isize - g.padding as isize;
                    let out_row = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize || lo >= hi {
                        out_row.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    out_row[..lo].fill(0.0);
                    out_row[hi..].fill(0.0);
                    let ix0 = lo * g.stride + kx * g.dilation - g.padding;
                    if g.stride == 1 {
                        out_row[lo..hi].copy_from_slice(&src[ix0..ix0 + hi - lo]);
                    } else {
                        for (j, o) in out_row[lo..hi].iter_mut().enumerate() {
                            *o = src[ix0 + j * g.stride];
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn col2im(
    col: &[f64],
    c: usize,
    h: usize,
    w: usize,
    g: ConvGeom,
    ho: usize,
    wo: usize,
    x: &mut [f64],
) {
    let k = g.kernel;
    for ci in 0..c {
        let plane = &mut x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &col[row * ho * wo..(row + 1) * ho * wo];
                let (lo, hi) = valid_cols(w, wo, g.stride, kx * g.dilation, g.padding);
                if lo >= hi {
                    continue;
                }
                let ix0 = lo * g.stride + kx * g.dilation - g.padding;
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky * g.dilation) as isize - g.padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    let s = &src[oy * wo + lo..oy * wo + hi];
                    if g.stride == 1 {
                        for (d, v) in dst[ix0..ix0 + hi - lo].iter_mut().zip(s) {
                            *d += v;
                        }
                    } else {
                        for (j, v) in s.iter().enumerate() {
                            dst[ix0 + j * g.stride] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Stride-1 convolutions on zero-padded planes flattened row-major with row
/// length `wp = w + 2 * padding`. Output pixel `(oy, ox)` lives at
/// `oy * wp + ox`; columns `ox >= wo` are scratch. Tap `(ky, kx)` then reads
/// the padded input at a constant offset, so each tap is one long axpy.
struct Padded {
    hp: usize,
    wp: usize,
    /// Length of the flattened output span that stays in bounds for every tap.
    span: usize,
}

impl Padded {
    fn new(h: usize, w: usize, g: ConvGeom, ho: usize, wo: usize) -> Self {
        let wp = w + 2 * g.padding;
        Padded {
            hp: h + 2 * g.padding,
            wp,
            span: (ho - 1) * wp + wo,
        }
    }

    fn offset(&self, g: ConvGeom, ky: usize, kx: usize) -> usize {
        ky * g.dilation * self.wp + kx * g.dilation
    }

    fn pad(&self, src: &[f64], c: usize, h: usize, w: usize, p: usize) -> Vec<f64> {
        let mut out = vec![0.0; c * self.hp * self.wp];
        for ci in 0..c {
            for y in 0..h {
                let d = ci * self.hp * self.wp + (y + p) * self.wp + p;
                out[d..d + w].copy_from_slice(&src[(ci * h + y) * w..(ci * h + y + 1) * w]);
            }
        }
        out
    }
}

#[inline]
fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (d, v) in y.iter_mut().zip(x) {
        *d += a * v;
    }
}

/// Dot product with eight independent accumulators so the loop vectorizes.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(p, q)| p * q)
        .sum();
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    acc.iter().sum::<f64>() + tail
}

/// Direct stride-1 convolution for one batch item; `ys` is pre-filled with the bias.
#[allow(clippy::too_many_arguments)]
fn direct_forward(
    xs: &[f64],
    wt: &[f64],
    ys: &mut [f64],
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    g: ConvGeom,
    ho: usize,
    wo: usize,
) {
    let k = g.kernel;
    let pd = Padded::new(h, w, g, ho, wo);
    let xp = pd.pad(xs, cin, h, w, g.padding);
    let plane = pd.hp * pd.wp;
    let mut ext = vec![0.0; pd.span];
    for co in 0..cout {
        ext.fill(0.0);
        for ci in 0..cin {
            let src = &xp[ci * plane..(ci + 1) * plane];
            for ky in 0..k {
                for kx in 0..k {
                    let off = pd.offset(g, ky, kx);
                    axpy(
                        wt[((co * cin + ci) * k + ky) * k + kx],
                        &src[off..off + pd.span],
                        &mut ext,
                    );
                }
            }
        }
        let out = &mut ys[co * ho * wo..(co + 1) * ho * wo];
        for oy in 0..ho {
            for (o, e) in out[oy * wo..(oy + 1) * wo]
                .iter_mut()
                .zip(&ext[oy * pd.wp..oy * pd.wp + wo])
            {
                *o += e;
            }
        }
    }
}

/// `dy` laid out on the padded grid, zero in the scratch columns.
fn extend_rows(dy: &[f64], c: usize, ho: usize, wo: usize, pd: &Padded) -> Vec<f64> {
    let mut out = vec![0.0; c * pd.span];
    for ci in 0..c {
        for oy in 0..ho {
            let d = ci * pd.span + oy * pd.wp;
            out[d..d + wo].copy_from_slice(&dy[(ci * ho + oy) * wo..(ci * ho + oy + 1) * wo]);
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn direct_input_grad(
    dys: &[f64],
    wt: &[f64],
    dxs: &mut [f64],
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    g: ConvGeom,
    ho: usize,
    wo: usize,
) {
    let k = g.kernel;
    let pd = Padded::new(h, w, g, ho, wo);
    let dy = extend_rows(dys, cout, ho, wo, &pd);
    let plane = pd.hp * pd.wp;
    let mut acc = vec![0.0; plane];
    for ci in 0..cin {
        acc.fill(0.0);
        for co in 0..cout {
            let src = &dy[co * pd.span..(co + 1) * pd.span];
            for ky in 0..k {
                for kx in 0..k {
                    let off = pd.offset(g, ky, kx);
                    axpy(
                        wt[((co * cin + ci) * k + ky) * k + kx],
                        src,
                        &mut acc[off..off + pd.span],
                    );
                }
            }
        }
        for y in 0..h {
            let s = (y + g.padding) * pd.wp + g.padding;
            dxs[(ci * h + y) * w..(ci * h + y + 1) * w].copy_from_slice(&acc[s..s + w]);
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn direct_weight_grad(
    xs: &[f64],
    dys: &[f64],
    dw: &mut [f64],
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    g: ConvGeom,
    ho: usize,
    wo: usize,
) {
    let k = g.kernel;
    let pd = Padded::new(h, w, g, ho, wo);
    let xp = pd.pad(xs, cin, h, w, g.padding);
    let dy = extend_rows(dys, cout, ho, wo, &pd);
    let plane = pd.hp * pd.wp;
    for co in 0..cout {
        let grad = &dy[co * pd.span..(co + 1) * pd.span];
        for ci in 0..cin {
            let src = &xp[ci * plane..(ci + 1) * plane];
            for ky in 0..k {
                for kx in 0..k {
                    let off = pd.offset(g, ky, kx);
                    dw[((co * cin + ci) * k + ky) * k + kx] += dot(grad, &src[off..off + pd.span]);
                }
            }
        }
    }
}

/// Direct loops beat im2col + GEMM when one channel count is tiny.
fn use_direct(g: ConvGeom, cin: usize, cout: usize) -> bool {
    g.stride == 1 && !g.is_pointwise() && cin.min(cout) <= DIRECT_MAX_CHANNELS
}

const DIRECT_MAX_CHANNELS: usize = 16;

fn check_weight(op: &'static str, w: &Tensor, cin: usize, g: ConvGeom) -> Result<usize> {
    match w.shape()[..] {
        [cout, wc, kh, kw] if wc == cin && kh == g.kernel && kw == g.kernel => Ok(cout),
        _ => Err(Error::shape(
            op,
            alloc::format!(
                "weight {:?} for {} input channels, kernel {}",
                w.shape(),
                cin,
                g.kernel
            ),
        )),
    }
}

/// Cross-correlation of `x: [N, Cin, H, W]` with `w: [Cout, Cin, k, k]`.
pub fn conv2d(x: &Tensor, w: &Tensor, bias: Option<&Tensor>, g: ConvGeom) -> Result<Tensor> {
    let (n, cin, h, wd) = x.dims4()?;
    let cout = check_weight("conv2d", w, cin, g)?;
    let (ho, wo) = match (g.out_len(h), g.out_len(wd)) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(Error::shape(
                "conv2d",
                alloc::format!("input {}x{} too small for kernel {}", h, wd, g.kernel),
            ))
        }
    };
    let kk = cin * g.kernel * g.kernel;
    let mut out = vec![0.0; n * cout * ho * wo];
    let mut col = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![0.0; kk * ho * wo]
    };
    for b in 0..n {
        let xs = &x.data()[b * cin * h * wd..(b + 1) * cin * h * wd];
        let ys = &mut out[b * cout * ho * wo..(b + 1) * cout * ho * wo];
        if let Some(bias) = bias {
            for (co, plane) in ys.chunks_mut(ho * wo).enumerate() {
                plane.fill(bias.data()[co]);
            }
        }
        if use_direct(g, cin, cout) {
            direct_forward(xs, w.data(), ys, cin, cout, h, wd, g, ho, wo);
            continue;
        }
        let beta = if bias.is_some() { 1.0 } else { 0.0 };
        let rhs = if g.is_pointwise() {
            xs
        } else {
            im2col(xs, cin, h, wd, g, ho, wo, &mut col);
            &col
        };
        gemm(
            cout,
            kk,
            ho * wo,
            1.0,
            w.data(),
            false,
            rhs,
            false,
            beta,
            ys,
        );
    }
    Tensor::new(&[n, cout, ho, wo], out)
}

/// Gradient of [`conv2d`] with respect to its input.
pub fn conv2d_input_grad(
    dy: &Tensor,
    w: &Tensor,
    g: ConvGeom,
    in_h: usize,
    in_w: usize,
) -> Result<Tensor> {
    let (n, cout, ho, wo) = dy.dims4()?;
    let cin = w.shape()[1];
    if w.shape()[0] != cout {
        return Err(Error::shape("conv2d_input_grad", "channel mismatch"));
    }
    let kk = cin * g.kernel * g.kernel;
    let mut dx = vec![0.0; n * cin * in_h * in_w];
    let mut col = if use_direct(g, cin, cout) || g.is_pointwise() {
        Vec::new()
    } else {
        vec![0.0; kk * ho * wo]
    };
    for b in 0..n {
        let dys = &dy.data()[b * cout * ho * wo..(b + 1) * cout * ho * wo];
        let dxs = &mut dx[b * cin * in_h * in_w..(b + 1) * cin * in_h * in_w];
        if use_direct(g, cin, cout) {
            direct_input_grad(dys, w.data(), dxs, cin, cout, in_h, in_w, g, ho, wo);
        } else if g.is_pointwise() {
            gemm(kk, cout, ho * wo, 1.0, w.data(), true, dys, false, 0.0, dxs);
        } else {
            gemm(
                kk,
                cout,
                ho * wo,
                1.0,
                w.data(),
                true,
                dys,
                false,
                0.0,
                &mut col,
            );
            col2im(&col, cin, in_h, in_w, g, ho, wo, dxs);
        }
    }
    Tensor::new(&[n, cin, in_h, in_w], dx)
}

/// Gradient of [`conv2d`] with respect to its weight, shaped `[Cout, Cin, k, k]`.
pub fn conv2d_weight_grad(x: &Tensor, dy: &Tensor, g: ConvGeom) -> Result<Tensor> {
    let (n, cin, h, wd) = x.dims4()?;
    let (_, cout, ho, wo) = dy.dims4()?;
    let kk = cin * g.kernel * g.kernel;
    let mut dw = vec![0.0; cout * kk];
    let mut col = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![0.0; kk * ho * wo]
    };
    for b in 0..n {
        let xs = &x.data()[b * cin * h * wd..(b + 1) * cin * h * wd];
        let dys = &dy.data()[b * cout * ho * wo..(b + 1) * cout * ho * wo];
        if use_direct(g, cin, cout) {
            direct_weight_grad(xs, dys, &mut dw, cin, cout, h, wd, g, ho, wo);
            continue;
        }
        let rhs = if g.is_pointwise() {
            xs
        } else {
            im2col(xs, cin, h, wd, g, ho, wo, &mut col);
            &col
        };
        gemm(cout, ho * wo, kk, 1.0, dys, false, rhs, true, 1.0, &mut dw);
    }
    Tensor::new(&[cout, cin, g.kernel, g.kernel], dw)
}

/// Per-channel sum of `dy` over batch and space.
pub fn bias_grad(dy: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = dy.dims4()?;
    let mut db = vec![0.0; c];
    for b in 0..n {
        for (ci, slot) in db.iter_mut().enumerate() {
            let off = (b * c + ci) * h * w;
            *slot += dy.data()[off..off + h * w].iter().sum::<f64>();
        }
    }
    Tensor::new(&[c], db)
}

/// Output size of a transposed convolution.
pub fn conv_transpose_out_len(input: usize, g: ConvGeom, output_padding: usize) -> usize {
    (input - 1) * g.stride + g.dilation * (g.kernel - 1) + 1 + output_padding - 2 * g.padding
}

/// Transposed convolution of `x: [N, Cin, H, W]` with `w: [Cin, Cout, k, k]`.
pub fn conv_transpose2d(
    x: &Tensor,
    w: &Tensor,
    bias: Option<&Tensor>,
    g: ConvGeom,
    output_padding: usize,
) -> Result<Tensor> {
    let (_, cin, h, wd) = x.dims4()?;
    if w.shape().len() != 4 || w.shape()[0] != cin {
        return Err(Error::shape(
            "conv_transpose2d",
            alloc::format!("weight {:?} for {} input channels", w.shape(), cin),
        ));
    }
    let ho = conv_transpose_out_len(h, g, output_padding);
    let wo = conv_transpose_out_len(wd, g, output_padding);
    let mut y = conv2d_input_grad(x, w, g, ho, wo)?;
    if let Some(bias) = bias {
        let (n, cout, _, _) = y.dims4()?;
        let data = y.data_mut();
        for b in 0..n {
            for co in 0..cout {
                let off = (b * cout + co) * ho * wo;
                let v = bias.data()[co];
                data[off..off + ho * wo].iter_mut().for_each(|p| *p += v);
            }
        }
    }
    Ok(y)
}

/// 2x2 max pooling with stride 2. Returns the output and the flat argmax of each window.
pub fn max_pool2(x: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let (n, c, h, w) = x.dims4()?;
    let (ho, wo) = (h / 2, w / 2);
    let mut out = vec![0.0; n * c * ho * wo];
    let mut arg = vec![0usize; n * c * ho * wo];
    let xd = x.data();
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if xd[idx] > xd[best] {
                        best = idx;
                    }
                }
                let o = plane * ho * wo + oy * wo + ox;
                out[o] = xd[best];
                arg[o] = best;
            }
        }
    }
    Ok((Tensor::new(&[n, c, ho, wo], out)?, arg))
}

/// Nearest-neighbour 2x upsampling.
pub fn upsample2(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    let mut out = vec![0.0; n * c * 4 * h * w];
    for plane in 0..n * c {
        let src = &x.data()[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out[plane * 4 * h * w..(plane + 1) * 4 * h * w];
        for y in 0..2 * h {
            for xx in 0..2 * w {
                dst[y * 2 * w + xx] = src[(y / 2) * w + xx / 2];
            }
        }
    }
    Tensor::new(&[n, c, 2 * h, 2 * w], out)
}

/// Adjoint of [`upsample2`]: sums each 2x2 block.
pub fn upsample2_grad(dy: &Tensor) -> Result<Tensor> {
    let (n, c, h2, w2) = dy.dims4()?;
    let (h, w) = (h2 / 2, w2 / 2);
    let mut out = vec![0.0; n * c * h * w];
    for plane in 0..n * c {
        let src = &dy.data()[plane * h2 * w2..(plane + 1) * h2 * w2];
        let dst = &mut out[plane * h * w..(plane + 1) * h * w];
        for y in 0..h2 {
            for x in 0..w2 {
                dst[(y / 2) * w + x / 2] += src[y * w2 + x];
            }
        }
    }
    Tensor::new(&[n, c, h, w], out)
}

/// Nearest-neighbour resize of every plane of `[N, C, H, W]` to `out_h x out_w`.
pub fn resize_nearest(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    let mut out = vec![0.0; n * c * out_h * out_w];
    for plane in 0..n * c {
        let src = &x.data()[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out[plane * out_h * out_w..(plane + 1) * out_h * out_w];
        for y in 0..out_h {
            let sy = nearest_index(y, out_h, h);
            for xx in 0..out_w {
                dst[y * out_w + xx] = src[sy * w + nearest_index(xx, out_w, w)];
            }
        }
    }
    Tensor::new(&[n, c, out_h, out_w], out)
}

/// Source index for nearest-neighbour sampling with half-pixel centres.
pub fn nearest_index(dst: usize, dst_len: usize, src_len: usize) -> usize {
    let pos = ((2 * dst + 1) * src_len) / (2 * dst_len);
    pos.min(src_len - 1)
}
