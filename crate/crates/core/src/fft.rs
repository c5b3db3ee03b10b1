//! Discrete Fourier transforms over the two spatial axes.
//!
//! Power-of-two lengths use an iterative radix-2 transform; every other length
//! goes through Bluestein's chirp-z reduction to a power-of-two transform.
//! Forward transforms are unnormalized (`X_k = sum_n x_n e^{-2 pi i kn/N}`),
//! inverse transforms are unnormalized too; callers divide where needed.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;

use crate::error::Result;
use crate::tensor::Tensor;

fn radix2(buf: &mut [Complex64], inverse: bool) {
    let n = buf.len();
    if n <= 1 {
        return;
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            buf.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let ang = sign * 2.0 * PI / len as f64;
        let half = len / 2;
        let twiddles: Vec<Complex64> = (0..half)
            .map(|k| Complex64::new(libm::cos(ang * k as f64), libm::sin(ang * k as f64)))
            .collect();
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let a = buf[start + k];
                let b = buf[start + k + half] * twiddles[k];
                buf[start + k] = a + b;
                buf[start + k + half] = a - b;
            }
        }
        len <<= 1;
    }
}

fn bluestein(buf: &mut [Complex64], inverse: bool) {
    let n = buf.len();
    let m = (2 * n - 1).next_power_of_two();
    let sign = if inverse { 1.0 } else { -1.0 };
    // chirp_k = exp(sign * i * pi * k^2 / n); k^2 reduced mod 2n keeps the angle exact.
    let chirp: Vec<Complex64> = (0..n)
        .map(|k| {
            let k2 = (k as u128 * k as u128 % (2 * n as u128)) as f64;
            let ang = sign * PI * k2 / n as f64;
            Complex64::new(libm::cos(ang), libm::sin(ang))
        })
        .collect();
    let mut a = vec![Complex64::new(0.0, 0.0); m];
    for k in 0..n {
        a[k] = buf[k] * chirp[k];
    }
    let mut b = vec![Complex64::new(0.0, 0.0); m];
    b[0] = chirp[0].conj();
    for k in 1..n {
        b[k] = chirp[k].conj();
        b[m - k] = chirp[k].conj();
    }
    radix2(&mut a, false);
    radix2(&mut b, false);
    for (x, y) in a.iter_mut().zip(&b) {
        *x *= y;
    }
    radix2(&mut a, true);
    let scale = 1.0 / m as f64;
    for k in 0..n {
        buf[k] = a[k] * scale * chirp[k];
    }
}

/// In-place unnormalized 1-D DFT of any length.
pub fn fft(buf: &mut [Complex64], inverse: bool) {
    if buf.len().is_power_of_two() {
        radix2(buf, inverse);
    } else {
        bluestein(buf, inverse);
    }
}

/// In-place unnormalized 2-D DFT of an `h x w` row-major plane.
pub fn fft2(plane: &mut [Complex64], h: usize, w: usize, inverse: bool) {
    for row in plane.chunks_mut(w) {
        fft(row, inverse);
    }
    let mut column = vec![Complex64::new(0.0, 0.0); h];
    for x in 0..w {
        for y in 0..h {
            column[y] = plane[y * w + x];
        }
        fft(&mut column, inverse);
        for y in 0..h {
            plane[y * w + x] = column[y];
        }
    }
}

/// Number of non-redundant frequency columns for a real signal of width `w`.
pub fn half_width(w: usize) -> usize {
    w / 2 + 1
}

/// How many times half-spectrum column `v` appears in the full spectrum of width `w`.
pub fn column_multiplicity(v: usize, w: usize) -> f64 {
    if v == 0 || (w % 2 == 0 && v == w / 2) {
        1.0
    } else {
        2.0
    }
}

/// Real 2-D FFT of `[N, C, H, W]`, returning `[N, 2C, H, W/2+1]` with the real
/// parts in channels `0..C` and the imaginary parts in `C..2C`.
pub fn rfft2(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    let wf = half_width(w);
    let mut out = vec![0.0; n * 2 * c * h * wf];
    let mut plane = vec![Complex64::new(0.0, 0.0); h * w];
    for b in 0..n {
        for ci in 0..c {
            let src = &x.data()[((b * c + ci) * h) * w..((b * c + ci) * h + h) * w];
            for (p, &v) in plane.iter_mut().zip(src) {
                *p = Complex64::new(v, 0.0);
            }
            fft2(&mut plane, h, w, false);
            let re_off = (b * 2 * c + ci) * h * wf;
            let im_off = (b * 2 * c + c + ci) * h * wf;
            for y in 0..h {
                for v in 0..wf {
                    let z = plane[y * w + v];
                    out[re_off + y * wf + v] = z.re;
                    out[im_off + y * wf + v] = z.im;
                }
            }
        }
    }
    Tensor::new(&[n, 2 * c, h, wf], out)
}

/// Adjoint of [`rfft2`]: maps gradients on the half spectrum back to the real input.
pub fn rfft2_adjoint(g: &Tensor, w: usize) -> Result<Tensor> {
    let (n, c2, h, wf) = g.dims4()?;
    let c = c2 / 2;
    let mut out = vec![0.0; n * c * h * w];
    let mut plane = vec![Complex64::new(0.0, 0.0); h * w];
    for b in 0..n {
        for ci in 0..c {
            plane.fill(Complex64::new(0.0, 0.0));
            let re_off = (b * c2 + ci) * h * wf;
            let im_off = (b * c2 + c + ci) * h * wf;
            for y in 0..h {
                for v in 0..wf {
                    plane[y * w + v] = Complex64::new(
                        g.data()[re_off + y * wf + v],
                        g.data()[im_off + y * wf + v],
                    );
                }
            }
            fft2(&mut plane, h, w, true);
            let dst = &mut out[(b * c + ci) * h * w..(b * c + ci + 1) * h * w];
            for (d, z) in dst.iter_mut().zip(&plane) {
                *d = z.re;
            }
        }
    }
    Tensor::new(&[n, c, h, w], out)
}

/// Inverse of [`rfft2`] for an output width `w`.
///
/// Defined as `x = Re(ifft2(Z)) / (H W)` where `Z` holds the half spectrum
/// scaled by its column multiplicity and zeros elsewhere. For Hermitian
/// spectra this equals the usual inverse real FFT, and it is a well-defined
/// linear map for any input, which keeps its adjoint exact.
pub fn irfft2(y: &Tensor, w: usize) -> Result<Tensor> {
    let (n, c2, h, wf) = y.dims4()?;
    let c = c2 / 2;
    let norm = 1.0 / (h * w) as f64;
    let mut out = vec![0.0; n * c * h * w];
    let mut plane = vec![Complex64::new(0.0, 0.0); h * w];
    for b in 0..n {
        for ci in 0..c {
            plane.fill(Complex64::new(0.0, 0.0));
            let re_off = (b * c2 + ci) * h * wf;
            let im_off = (b * c2 + c + ci) * h * wf;
            for yy in 0..h {
                for v in 0..wf {
                    let m = column_multiplicity(v, w);
                    plane[yy * w + v] = Complex64::new(
                        m * y.data()[re_off + yy * wf + v],
                        m * y.data()[im_off + yy * wf + v],
                    );
                }
            }
            fft2(&mut plane, h, w, true);
            let dst = &mut out[(b * c + ci) * h * w..(b * c + ci + 1) * h * w];
            for (d, z) in dst.iter_mut().zip(&plane) {
                *d = z.re * norm;
            }
        }
    }
    Tensor::new(&[n, c, h, w], out)
}

/// Adjoint of [`irfft2`].
pub fn irfft2_adjoint(g: &Tensor) -> Result<Tensor> {
    let (_, _, h, w) = g.dims4()?;
    let mut spec = rfft2(g)?;
    let wf = half_width(w);
    let norm = 1.0 / (h * w) as f64;
    let data = spec.data_mut();
    for plane in 0..data.len() / (h * wf) {
        for y in 0..h {
            for v in 0..wf {
                data[plane * h * wf + y * wf + v] *= column_multiplicity(v, w) * norm;
            }
        }
    }
    Ok(spec)
}
